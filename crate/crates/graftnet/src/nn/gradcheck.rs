//! Central finite-difference check of the backward pass.
//!
//! Every parameter entry is perturbed by +/-EPSILON, the cross-entropy loss
//! is re-evaluated, and the two-sided slope is compared against the analytic
//! gradient. Relative error uses a denominator floor so finite-difference
//! noise on near-zero gradients does not register as disagreement.

use crate::error::Result;
use crate::nn::loss::{cross_entropy_grad, cross_entropy_loss};
use crate::nn::network::Network;
use crate::tensor::Tensor;

/// Perturbation size for the two-sided difference.
pub const EPSILON: f64 = 1e-6;

/// Denominator floor for relative error: differences are measured against
/// max(|analytic|, |numeric|, this).
pub const DENOMINATOR_FLOOR: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckEntry {
    pub name: String,
    pub max_relative_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub tolerance: f64,
    pub entries: Vec<GradCheckEntry>,
    /// Largest relative error across all parameter tensors.
    pub max_relative_error: f64,
    /// Names of tensors whose error exceeds the tolerance.
    pub flagged: Vec<String>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.flagged.is_empty()
    }
}

fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let diff = (analytic - numeric).abs();
    if diff == 0.0 {
        return 0.0;
    }
    diff / analytic.abs().max(numeric.abs()).max(DENOMINATOR_FLOOR)
}

/// Compares analytic gradients of the cross-entropy loss against central
/// finite differences on every parameter entry.
///
/// The network's weights are restored bitwise afterwards; its forward cache
/// is left at the unperturbed state.
pub fn gradient_check(
    net: &mut Network,
    images: &Tensor,
    labels: &[usize],
    tolerance: f64,
) -> Result<GradCheckReport> {
    let logits = net.forward(images)?;
    let (_, logit_grad) = cross_entropy_grad(&logits, labels)?;
    let analytic = net.backward(&logit_grad)?;

    let mut entries = Vec::with_capacity(analytic.len());
    let names: Vec<String> = analytic.names().map(String::from).collect();
    for name in &names {
        let count = analytic.get(name).expect("own names").numel();
        let mut worst = 0.0f64;
        for idx in 0..count {
            let original = read_param(net, name, idx);
            write_param(net, name, idx, original + EPSILON);
            let plus = cross_entropy_loss(&net.infer(images)?, labels)?;
            write_param(net, name, idx, original - EPSILON);
            let minus = cross_entropy_loss(&net.infer(images)?, labels)?;
            write_param(net, name, idx, original);
            let numeric = (plus - minus) / (2.0 * EPSILON);
            let err = relative_error(analytic.get(name).expect("own names").data()[idx], numeric);
            worst = worst.max(err);
        }
        entries.push(GradCheckEntry {
            name: name.clone(),
            max_relative_error: worst,
        });
    }

    let max_relative_error = entries
        .iter()
        .map(|e| e.max_relative_error)
        .fold(0.0, f64::max);
    let flagged = entries
        .iter()
        .filter(|e| e.max_relative_error > tolerance)
        .map(|e| e.name.clone())
        .collect();
    Ok(GradCheckReport {
        tolerance,
        entries,
        max_relative_error,
        flagged,
    })
}

fn read_param(net: &mut Network, name: &str, idx: usize) -> f64 {
    for (n, t) in net.parameters_mut() {
        if n == name {
            return t.data()[idx];
        }
    }
    unreachable!("parameter {name} exists")
}

fn write_param(net: &mut Network, name: &str, idx: usize, value: f64) {
    for (n, t) in net.parameters_mut() {
        if n == name {
            t.data_mut()[idx] = value;
            return;
        }
    }
    unreachable!("parameter {name} exists")
}
