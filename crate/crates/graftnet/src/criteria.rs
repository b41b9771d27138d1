//! Weight-quality criteria: per-filter l1 norms and histogram entropy.
//!
//! Entropy is estimated over an equal-width histogram spanning the exact
//! [min, max] of the values. Probabilities are `count / total`, the log is
//! natural, and `0 ln 0` contributes zero. A constant tensor has entropy 0
//! by convention (all mass in one bin). The maximum value lands in the last
//! bin, not a phantom overflow bin.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::nn::{ConvLayerWeights, Network};
use crate::tensor::Tensor;

/// How histogram bin edges are chosen. Only the data-driven min/max policy
/// exists; the variant is explicit so the choice is visible at call sites.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RangePolicy {
    #[default]
    MinMax,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HistogramSpec {
    pub bin_count: usize,
    pub range_policy: RangePolicy,
}

impl Default for HistogramSpec {
    fn default() -> Self {
        HistogramSpec {
            bin_count: 256,
            range_policy: RangePolicy::MinMax,
        }
    }
}

impl HistogramSpec {
    pub fn new(bin_count: usize) -> Result<Self> {
        if bin_count == 0 {
            return Err(Error::Argument("histogram needs at least one bin".into()));
        }
        Ok(HistogramSpec {
            bin_count,
            range_policy: RangePolicy::MinMax,
        })
    }
}

/// Entropy estimate plus the bin distribution it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct EntropyResult {
    /// Natural-log entropy of the bin distribution, in [0, ln(bin_count)].
    pub value: f64,
    /// `count / total` per bin; sums to 1.
    pub bin_probabilities: Vec<f64>,
}

/// Sum of absolute values: the l1 size of one filter (or any value slice).
pub fn filter_l1(filter: &[f64]) -> f64 {
    filter.iter().map(|v| v.abs()).sum()
}

/// l1 of every filter in a `[filters, channels, k, k]` weight tensor,
/// in filter order.
pub fn layer_filter_l1s(weights: &Tensor) -> Result<Vec<f64>> {
    if weights.rank() != 4 {
        return Err(Error::Shape {
            context: "layer_filter_l1s".into(),
            expected: "rank-4 [filters, channels, k, k]".into(),
            actual: format!("rank-{} {:?}", weights.rank(), weights.shape()),
        });
    }
    Ok((0..weights.shape()[0])
        .map(|f| filter_l1(weights.outer_slice(f)))
        .collect())
}

/// Histogram entropy of a flat value slice.
pub fn slice_entropy(values: &[f64], spec: &HistogramSpec) -> Result<EntropyResult> {
    if values.is_empty() {
        return Err(Error::Argument("entropy of an empty value set".into()));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Argument(
            "entropy input contains a non-finite value".into(),
        ));
    }
    let b = spec.bin_count;
    let mut counts = vec![0u64; b];
    let mut min = f64::INFINITY;
    let mut max = f64::NEG_INFINITY;
    for &v in values {
        min = min.min(v);
        max = max.max(v);
    }
    if min == max {
        counts[0] = values.len() as u64;
    } else {
        let scale = b as f64 / (max - min);
        for &v in values {
            // max maps to exactly b; clamp keeps it in the last real bin.
            let mut k = ((v - min) * scale) as usize;
            if k >= b {
                k = b - 1;
            }
            counts[k] += 1;
        }
    }
    let total = values.len() as f64;
    let bin_probabilities: Vec<f64> = counts.iter().map(|&c| c as f64 / total).collect();
    let value = entropy_of_probs(bin_probabilities.iter().copied());
    Ok(EntropyResult {
        value,
        bin_probabilities,
    })
}

/// Histogram entropy of a whole tensor (all entries pooled).
pub fn tensor_entropy(tensor: &Tensor, spec: &HistogramSpec) -> Result<EntropyResult> {
    slice_entropy(tensor.data(), spec)
}

/// Sum of per-filter entropies across a conv layer's filter bank.
pub fn layer_entropy_sum(layer: &ConvLayerWeights, spec: &HistogramSpec) -> Result<f64> {
    let mut sum = 0.0;
    for f in 0..layer.num_filters() {
        sum += slice_entropy(layer.filter(f), spec)?.value;
    }
    Ok(sum)
}

/// Total information of a network: the whole-tensor entropy of every conv
/// layer's filter bank, summed. Biases and dense layers do not participate.
pub fn network_information(net: &Network, spec: &HistogramSpec) -> Result<f64> {
    let mut sum = 0.0;
    for layer in net.conv_layer_weights() {
        sum += tensor_entropy(&layer.weights, spec)?.value;
    }
    Ok(sum)
}

fn entropy_of_probs(probs: impl Iterator<Item = f64>) -> f64 {
    let mut h = 0.0;
    for p in probs {
        if p > 0.0 {
            h -= p * p.ln();
        }
    }
    h
}

// ======================================================================
// Joint-entropy oracle
// ======================================================================

/// Joint entropies of (X,Y), (X,Z) and (Y,Z) where Z = X + Y, computed by
/// exhaustive enumeration of a discrete joint distribution.
///
/// `joint[x][y]` is P(X = x, Y = y) on integer supports. Because
/// (x, y) <-> (x, x + y) <-> (y, x + y) are bijections, the three joint
/// distributions share one multiset of probabilities and the three entropies
/// agree; this function is the independent check for that claim.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JointEntropies {
    pub h_xy: f64,
    pub h_xz: f64,
    pub h_yz: f64,
}

pub fn joint_entropy_oracle(joint: &[Vec<f64>]) -> Result<JointEntropies> {
    if joint.is_empty() || joint.iter().any(|row| row.is_empty()) {
        return Err(Error::Argument("joint distribution has no support".into()));
    }
    let width = joint[0].len();
    if joint.iter().any(|row| row.len() != width) {
        return Err(Error::Argument("joint distribution is ragged".into()));
    }
    let mut total = 0.0;
    for row in joint {
        for &p in row {
            if !(p >= 0.0) || !p.is_finite() {
                return Err(Error::Argument(format!(
                    "joint probability {p} is not a finite non-negative number"
                )));
            }
            total += p;
        }
    }
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::Argument(format!(
            "joint probabilities sum to {total}, expected 1"
        )));
    }

    let mut xz: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    let mut yz: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    for (x, row) in joint.iter().enumerate() {
        for (y, &p) in row.iter().enumerate() {
            if p == 0.0 {
                continue;
            }
            let z = x + y;
            *xz.entry((x, z)).or_insert(0.0) += p;
            *yz.entry((y, z)).or_insert(0.0) += p;
        }
    }

    Ok(JointEntropies {
        h_xy: entropy_of_probs(joint.iter().flatten().copied()),
        h_xz: entropy_of_probs(xz.values().copied()),
        h_yz: entropy_of_probs(yz.values().copied()),
    })
}
