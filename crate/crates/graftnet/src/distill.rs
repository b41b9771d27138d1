//! Distillation: temperature-softened targets averaged over teachers, and
//! the soft cross-entropy students add to their ordinary loss.
//!
//! With q = softmax(student_logits / T) and p the averaged teacher
//! distribution at the same temperature, the distillation term is
//!   T^2 * mean_i ( -sum_k p_ik ln q_ik )
//! reduced by batch mean like the hard loss. Its gradient w.r.t. the
//! student logits is T (q - p) / N; the T^2 factor keeps the term's
//! gradient scale comparable across temperatures.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DistillConfig {
    pub temperature: f64,
    /// Weight of the distillation term in the student's total loss.
    pub kd_weight: f64,
}

impl Default for DistillConfig {
    fn default() -> Self {
        DistillConfig {
            temperature: 2.0,
            kd_weight: 1.0,
        }
    }
}

impl DistillConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::Config(format!(
                "temperature must be positive and finite, got {}",
                self.temperature
            )));
        }
        if !(self.kd_weight >= 0.0 && self.kd_weight.is_finite()) {
            return Err(Error::Config(format!(
                "kd_weight must be non-negative, got {}",
                self.kd_weight
            )));
        }
        Ok(())
    }
}

/// A batch of soft target rows, tagged with the temperature that made them.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftTargets {
    /// `[N, classes]`, rows sum to 1.
    pub probs: Tensor,
    pub temperature: f64,
}

fn check_rows<'a>(t: &'a Tensor, context: &str) -> Result<(&'a [f64], usize, usize)> {
    match t.shape() {
        [n, k] => Ok((t.data(), *n, *k)),
        other => Err(Error::Shape {
            context: context.into(),
            expected: "[batch, classes]".into(),
            actual: format!("{other:?}"),
        }),
    }
}

/// Row-wise softmax of `logits / temperature`.
pub fn temperature_softmax(logits: &Tensor, temperature: f64) -> Result<SoftTargets> {
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(Error::Argument(format!(
            "temperature must be positive and finite, got {temperature}"
        )));
    }
    let (data, n, k) = check_rows(logits, "temperature_softmax")?;
    let mut probs = Tensor::zeros(vec![n, k]);
    for i in 0..n {
        let row = &data[i * k..(i + 1) * k];
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max) / temperature;
        let mut denom = 0.0;
        for &z in row {
            denom += (z / temperature - m).exp();
        }
        for j in 0..k {
            probs.data_mut()[i * k + j] = (row[j] / temperature - m).exp() / denom;
        }
    }
    Ok(SoftTargets {
        probs,
        temperature,
    })
}

/// Element-wise mean of the teachers' soft targets. All inputs must share
/// shape and temperature.
pub fn teacher_average(teachers: &[SoftTargets]) -> Result<SoftTargets> {
    let first = teachers
        .first()
        .ok_or_else(|| Error::Argument("teacher_average of zero teachers".into()))?;
    for t in teachers {
        if t.probs.shape() != first.probs.shape() {
            return Err(Error::Shape {
                context: "teacher_average".into(),
                expected: format!("{:?}", first.probs.shape()),
                actual: format!("{:?}", t.probs.shape()),
            });
        }
        if t.temperature != first.temperature {
            return Err(Error::Argument(format!(
                "teacher temperatures differ: {} vs {}",
                first.temperature, t.temperature
            )));
        }
    }
    let mut probs = Tensor::zeros(first.probs.shape().to_vec());
    let scale = 1.0 / teachers.len() as f64;
    for t in teachers {
        for (acc, v) in probs.data_mut().iter_mut().zip(t.probs.data()) {
            *acc += v;
        }
    }
    for v in probs.data_mut() {
        *v *= scale;
    }
    Ok(SoftTargets {
        probs,
        temperature: first.temperature,
    })
}

/// Soft cross-entropy between averaged teacher targets and the student's
/// tempered softmax, scaled by temperature^2 and reduced by batch mean.
pub fn kd_loss(student_logits: &Tensor, targets: &SoftTargets) -> Result<f64> {
    let (zs, n, k) = check_rows(student_logits, "kd_loss student logits")?;
    let (ps, pn, pk) = check_rows(&targets.probs, "kd_loss targets")?;
    if (pn, pk) != (n, k) {
        return Err(Error::Shape {
            context: "kd_loss".into(),
            expected: format!("targets [{n}, {k}]"),
            actual: format!("[{pn}, {pk}]"),
        });
    }
    if n == 0 {
        return Err(Error::Argument("kd_loss of an empty batch".into()));
    }
    let tau = targets.temperature;
    let mut total = 0.0;
    for i in 0..n {
        let row = &zs[i * k..(i + 1) * k];
        // log q = z/tau - lse(z/tau)
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max) / tau;
        let mut denom = 0.0;
        for &z in row {
            denom += (z / tau - m).exp();
        }
        let lse = m + denom.ln();
        for j in 0..k {
            let p = ps[i * k + j];
            if p > 0.0 {
                total -= p * (row[j] / tau - lse);
            }
        }
    }
    Ok(tau * tau * total / n as f64)
}

/// Gradient of [`kd_loss`] w.r.t. the student logits: tau * (q - p) / N.
pub fn kd_loss_grad(student_logits: &Tensor, targets: &SoftTargets) -> Result<Tensor> {
    let (_, n, k) = check_rows(student_logits, "kd_loss_grad student logits")?;
    let (ps, pn, pk) = check_rows(&targets.probs, "kd_loss_grad targets")?;
    if (pn, pk) != (n, k) {
        return Err(Error::Shape {
            context: "kd_loss_grad".into(),
            expected: format!("targets [{n}, {k}]"),
            actual: format!("[{pn}, {pk}]"),
        });
    }
    let q = temperature_softmax(student_logits, targets.temperature)?;
    let mut grad = q.probs;
    let scale = targets.temperature / n as f64;
    for (g, &p) in grad.data_mut().iter_mut().zip(ps) {
        *g = (*g - p) * scale;
    }
    Ok(grad)
}

/// The student's combined objective, split into its parts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub total: f64,
    pub cross_entropy: f64,
    pub distillation: f64,
}

/// total = CE(logits, labels) + kd_weight * KD(logits, targets).
pub fn student_total_loss(
    student_logits: &Tensor,
    labels: &[usize],
    targets: &SoftTargets,
    cfg: &DistillConfig,
) -> Result<LossBreakdown> {
    cfg.validate()?;
    if targets.temperature != cfg.temperature {
        return Err(Error::Argument(format!(
            "targets were built at temperature {}, config says {}",
            targets.temperature, cfg.temperature
        )));
    }
    let cross_entropy = crate::nn::loss::cross_entropy_loss(student_logits, labels)?;
    let distillation = kd_loss(student_logits, targets)?;
    Ok(LossBreakdown {
        total: cross_entropy + cfg.kd_weight * distillation,
        cross_entropy,
        distillation,
    })
}

/// Gradient of [`student_total_loss`] w.r.t. the student logits.
pub fn student_total_grad(
    student_logits: &Tensor,
    labels: &[usize],
    targets: &SoftTargets,
    cfg: &DistillConfig,
) -> Result<Tensor> {
    cfg.validate()?;
    if targets.temperature != cfg.temperature {
        return Err(Error::Argument(format!(
            "targets were built at temperature {}, config says {}",
            targets.temperature, cfg.temperature
        )));
    }
    let (_, ce_grad) = crate::nn::loss::cross_entropy_grad(student_logits, labels)?;
    let kd_grad = kd_loss_grad(student_logits, targets)?;
    let mut total = ce_grad;
    for (t, k) in total.data_mut().iter_mut().zip(kd_grad.data()) {
        *t += cfg.kd_weight * k;
    }
    Ok(total)
}
