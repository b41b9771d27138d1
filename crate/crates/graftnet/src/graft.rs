//! Grafting: replacing a layer's weights with a convex combination of its
//! own weights and a scion from somewhere else.
//!
//! Three scion sources exist. `Noise` perturbs invalid filters with decaying
//! Gaussian noise. `Internal` adds a layer's strongest filters onto its
//! weakest. `External` mixes in the same layer of another network, weighted
//! by an information criterion, and is the source the multi-network
//! orchestrator uses.
//!
//! The external mixing coefficient is
//!   alpha = A * atan(c * (H_self - H_other)) + 0.5
//! clamped to [epsilon, 1 - epsilon]. Alpha is always evaluated once per
//! pair, canonically from the higher-measure side; the lower side uses
//! 1 - alpha and both sides assemble the identical combination expression.
//! Symmetric grafts therefore agree bitwise, including the H_self == H_other
//! tie, which lands on alpha = 0.5 exactly.

use serde::{Deserialize, Serialize};

use crate::criteria::{filter_l1, layer_filter_l1s, tensor_entropy, HistogramSpec};
use crate::error::{Error, Result};
use crate::nn::network::Network;
use crate::params::NamedTensors;
use crate::rng::{mix_seed, rng_from};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ScionSource {
    Noise,
    Internal,
    #[default]
    External,
}

/// What "how informative is this layer" means when weighting a graft.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum GraftCriterion {
    L1,
    #[default]
    Entropy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GraftConfig {
    pub scion_source: ScionSource,
    pub criterion: GraftCriterion,
    /// Slope A of the arctan response.
    pub a_coeff: f64,
    /// Sharpness c inside the arctan.
    pub c_coeff: f64,
    /// Histogram bins for the entropy criterion.
    pub bin_count: usize,
    /// Filters with l1 below this are "invalid" (noise/internal sources).
    pub invalid_threshold_gamma: f64,
    /// Per-epoch decay base of the noise scale: sigma = a^epoch, 0 < a < 1.
    pub noise_decay_a: f64,
    /// Iterations between graft barriers; 0 means once per epoch.
    pub graft_period_iters: usize,
    /// Alpha is clamped to [epsilon, 1 - epsilon].
    pub alpha_clamp_epsilon: f64,
    /// Also graft dense-layer weights (conv layers always participate).
    pub graft_dense: bool,
    /// Internal grafting overwrites the recipient instead of adding.
    pub internal_replace: bool,
}

impl Default for GraftConfig {
    fn default() -> Self {
        GraftConfig {
            scion_source: ScionSource::External,
            criterion: GraftCriterion::Entropy,
            a_coeff: 0.4,
            c_coeff: 500.0,
            bin_count: 256,
            invalid_threshold_gamma: 0.1,
            noise_decay_a: 0.5,
            graft_period_iters: 0,
            alpha_clamp_epsilon: 0.05,
            graft_dense: false,
            internal_replace: false,
        }
    }
}

impl GraftConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.a_coeff >= 0.0 && self.a_coeff.is_finite()) {
            return Err(Error::Config(format!(
                "a_coeff must be non-negative and finite, got {}",
                self.a_coeff
            )));
        }
        if !(self.c_coeff > 0.0 && self.c_coeff.is_finite()) {
            return Err(Error::Config(format!(
                "c_coeff must be positive and finite, got {}",
                self.c_coeff
            )));
        }
        if self.bin_count == 0 {
            return Err(Error::Config("bin_count must be positive".into()));
        }
        if !(self.invalid_threshold_gamma >= 0.0 && self.invalid_threshold_gamma.is_finite()) {
            return Err(Error::Config(format!(
                "invalid_threshold_gamma must be non-negative, got {}",
                self.invalid_threshold_gamma
            )));
        }
        if !(self.noise_decay_a > 0.0 && self.noise_decay_a < 1.0) {
            return Err(Error::Config(format!(
                "noise_decay_a must be in (0, 1), got {}",
                self.noise_decay_a
            )));
        }
        if !(0.0..0.5).contains(&self.alpha_clamp_epsilon) {
            return Err(Error::Config(format!(
                "alpha_clamp_epsilon must be in [0, 0.5), got {}",
                self.alpha_clamp_epsilon
            )));
        }
        Ok(())
    }
}

/// One layer-level graft, as recorded by the receiving network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraftEvent {
    pub epoch: usize,
    /// Name of the grafted weight tensor, e.g. "layer0.weight".
    pub layer_name: String,
    /// Weight kept on the receiver's own tensor.
    pub alpha: f64,
    pub h_self: f64,
    pub h_other: f64,
    /// Id of the network the scion came from.
    pub source_network: usize,
}

/// Unclamped arctan response.
pub fn raw_adaptive_alpha(h_self: f64, h_other: f64, a_coeff: f64, c_coeff: f64) -> f64 {
    a_coeff * (c_coeff * (h_self - h_other)).atan() + 0.5
}

/// Share of its own weights the receiver keeps, clamped away from 0 and 1
/// so neither side is ever erased outright.
pub fn adaptive_alpha(h_self: f64, h_other: f64, cfg: &GraftConfig) -> f64 {
    let eps = cfg.alpha_clamp_epsilon;
    raw_adaptive_alpha(h_self, h_other, cfg.a_coeff, cfg.c_coeff).clamp(eps, 1.0 - eps)
}

/// Convex combination `alpha * own + (1 - alpha) * other`.
pub fn graft_layer(own: &Tensor, other: &Tensor, alpha: f64) -> Result<Tensor> {
    if own.shape() != other.shape() {
        return Err(Error::Shape {
            context: "graft_layer".into(),
            expected: format!("{:?}", own.shape()),
            actual: format!("{:?}", other.shape()),
        });
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::Argument(format!(
            "alpha must be in [0, 1], got {alpha}"
        )));
    }
    let beta = 1.0 - alpha;
    let mut out = own.clone();
    for (w, o) in out.data_mut().iter_mut().zip(other.data()) {
        *w = alpha * *w + beta * *o;
    }
    Ok(out)
}

fn measure(tensor: &Tensor, cfg: &GraftConfig) -> Result<f64> {
    match cfg.criterion {
        GraftCriterion::L1 => Ok(filter_l1(tensor.data())),
        GraftCriterion::Entropy => {
            Ok(tensor_entropy(tensor, &HistogramSpec::new(cfg.bin_count)?)?.value)
        }
    }
}

/// True for tensors grafting applies to under this config.
fn graftable(name: &str, rank: usize, cfg: &GraftConfig) -> bool {
    name.ends_with(".weight") && (rank == 4 || (cfg.graft_dense && rank == 2))
}

fn graft_entries(
    entries: &mut [(String, &mut Tensor)],
    donor: &NamedTensors,
    cfg: &GraftConfig,
    epoch: usize,
    source_network: usize,
) -> Result<Vec<GraftEvent>> {
    let mut events = Vec::new();
    for idx in 0..entries.len() {
        let (name, rank) = {
            let (n, t) = &entries[idx];
            (n.clone(), t.rank())
        };
        if !graftable(&name, rank, cfg) {
            continue;
        }
        let donor_w = donor.get(&name).expect("congruence checked");
        let h_self = measure(&entries[idx].1, cfg)?;
        let h_other = measure(donor_w, cfg)?;

        // Canonical evaluation: alpha_hi from the higher-measure side only.
        let self_is_hi = h_self >= h_other;
        let (h_hi, h_lo) = if self_is_hi {
            (h_self, h_other)
        } else {
            (h_other, h_self)
        };
        let alpha_hi = adaptive_alpha(h_hi, h_lo, cfg);
        mix_into(entries[idx].1.data_mut(), donor_w.data(), alpha_hi, self_is_hi);

        let bias_name = format!("{}.bias", name.trim_end_matches(".weight"));
        if let Some(donor_b) = donor.get(&bias_name) {
            if let Some(pos) = entries.iter().position(|(n, _)| *n == bias_name) {
                mix_into(entries[pos].1.data_mut(), donor_b.data(), alpha_hi, self_is_hi);
            }
        }

        events.push(GraftEvent {
            epoch,
            layer_name: name,
            alpha: if self_is_hi { alpha_hi } else { 1.0 - alpha_hi },
            h_self,
            h_other,
            source_network,
        });
    }
    Ok(events)
}

/// Writes `alpha_hi * hi + (1 - alpha_hi) * lo` into `own`. The expression
/// is assembled identically on both sides of a pair, which is what makes
/// symmetric grafting bitwise equal.
fn mix_into(own: &mut [f64], other: &[f64], alpha_hi: f64, self_is_hi: bool) {
    let beta = 1.0 - alpha_hi;
    if self_is_hi {
        for (w, o) in own.iter_mut().zip(other) {
            *w = alpha_hi * *w + beta * *o;
        }
    } else {
        for (w, o) in own.iter_mut().zip(other) {
            *w = alpha_hi * *o + beta * *w;
        }
    }
}

/// Grafts every eligible layer of `net` from a donor parameter snapshot.
/// The donor must be congruent with the receiver (same architecture).
pub fn graft_pair(
    net: &mut Network,
    donor: &NamedTensors,
    cfg: &GraftConfig,
    epoch: usize,
    source_network: usize,
) -> Result<Vec<GraftEvent>> {
    cfg.validate()?;
    net.parameters().check_congruent(donor, "graft_pair")?;
    let mut entries = net.parameters_mut();
    graft_entries(&mut entries, donor, cfg, epoch, source_network)
}

/// Same as [`graft_pair`] but on a detached parameter collection, e.g. one
/// loaded from a checkpoint.
pub fn graft_named(
    receiver: &mut NamedTensors,
    donor: &NamedTensors,
    cfg: &GraftConfig,
    epoch: usize,
    source_network: usize,
) -> Result<Vec<GraftEvent>> {
    cfg.validate()?;
    receiver.check_congruent(donor, "graft_named")?;
    let mut entries: Vec<(String, &mut Tensor)> = receiver
        .iter_mut()
        .map(|(n, t)| (n.to_string(), t))
        .collect();
    graft_entries(&mut entries, donor, cfg, epoch, source_network)
}

// ======================================================================
// Noise scion
// ======================================================================

/// A filter touched by noise or internal grafting.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterId {
    pub layer_name: String,
    pub filter_index: usize,
}

/// Adds decaying Gaussian noise (std = a^epoch) to every conv filter whose
/// l1 falls below gamma. Valid filters are left bitwise untouched and
/// consume no randomness, so the set of modified filters alone determines
/// the draw sequence.
pub fn noise_graft(
    net: &mut Network,
    cfg: &GraftConfig,
    epoch: usize,
    rng_seed: u64,
) -> Result<Vec<FilterId>> {
    cfg.validate()?;
    let sigma = cfg.noise_decay_a.powi(epoch as i32);
    let mut rng = rng_from(mix_seed(rng_seed, epoch as u64));
    let mut touched = Vec::new();
    for (name, tensor) in net.parameters_mut() {
        if !(name.ends_with(".weight") && tensor.rank() == 4) {
            continue;
        }
        let l1s = layer_filter_l1s(tensor)?;
        for (f, &l1) in l1s.iter().enumerate() {
            if l1 < cfg.invalid_threshold_gamma {
                use rand::Rng;
                for w in tensor.outer_slice_mut(f) {
                    let z: f64 = rng.sample(rand_distr::StandardNormal);
                    *w += sigma * z;
                }
                touched.push(FilterId {
                    layer_name: name.clone(),
                    filter_index: f,
                });
            }
        }
    }
    Ok(touched)
}

// ======================================================================
// Internal scion
// ======================================================================

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct InternalPair {
    pub donor: usize,
    pub recipient: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InternalGraftOutcome {
    /// (donor, recipient) filter index pairs, in recipient order.
    pub pairs: Vec<InternalPair>,
    /// True when there were more invalid filters than valid ones, so some
    /// donors are themselves invalid (they may even self-pair).
    pub donors_overlap_recipients: bool,
}

/// Pairs the i-th largest filter (by l1) with the i-th smallest invalid
/// filter and adds the donor onto the recipient (or overwrites it when
/// `replace` is set). Donors are read from a snapshot taken before any
/// mutation, so the outcome does not depend on pair order.
pub fn internal_graft(
    weights: &mut Tensor,
    gamma: f64,
    replace: bool,
) -> Result<InternalGraftOutcome> {
    let l1s = layer_filter_l1s(weights)?;
    let num_filters = l1s.len();

    let mut by_l1_asc: Vec<usize> = (0..num_filters).collect();
    // Ties break toward the lower filter index in both directions.
    by_l1_asc.sort_by(|&a, &b| l1s[a].partial_cmp(&l1s[b]).unwrap().then(a.cmp(&b)));
    let recipients: Vec<usize> = by_l1_asc
        .iter()
        .copied()
        .filter(|&f| l1s[f] < gamma)
        .collect();
    let mut by_l1_desc: Vec<usize> = (0..num_filters).collect();
    by_l1_desc.sort_by(|&a, &b| l1s[b].partial_cmp(&l1s[a]).unwrap().then(a.cmp(&b)));

    let valid_count = num_filters - recipients.len();
    let donors_overlap_recipients = recipients.len() > valid_count;

    let snapshot = weights.clone();
    let mut pairs = Vec::with_capacity(recipients.len());
    for (i, &recipient) in recipients.iter().enumerate() {
        let donor = by_l1_desc[i];
        let donor_slice = snapshot.outer_slice(donor);
        let target = weights.outer_slice_mut(recipient);
        if replace {
            target.copy_from_slice(donor_slice);
        } else {
            for (t, d) in target.iter_mut().zip(donor_slice) {
                *t += d;
            }
        }
        pairs.push(InternalPair { donor, recipient });
    }
    Ok(InternalGraftOutcome {
        pairs,
        donors_overlap_recipients,
    })
}

/// Applies [`internal_graft`] to every conv layer of a network.
pub fn internal_graft_network(
    net: &mut Network,
    cfg: &GraftConfig,
) -> Result<Vec<(String, InternalGraftOutcome)>> {
    cfg.validate()?;
    let mut out = Vec::new();
    for (name, tensor) in net.parameters_mut() {
        if !(name.ends_with(".weight") && tensor.rank() == 4) {
            continue;
        }
        let outcome = internal_graft(tensor, cfg.invalid_threshold_gamma, cfg.internal_replace)?;
        out.push((name, outcome));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::layers::{ArchitectureSpec, InputSpec, LayerSpec};
    use proptest::prelude::*;

    fn cfg() -> GraftConfig {
        GraftConfig::default()
    }

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    // ------------------------------------------------------------------
    // adaptive alpha
    // ------------------------------------------------------------------

    #[test]
    fn equal_measures_give_exactly_half() {
        let a = adaptive_alpha(1.234, 1.234, &cfg());
        assert_eq!(a.to_bits(), 0.5f64.to_bits());
    }

    #[test]
    fn alpha_matches_the_arctan_formula_on_a_known_point() {
        // dH = 0.001 with c = 500: atan(0.5) = 0.46364760900080615,
        // alpha = 0.4 * atan(0.5) + 0.5.
        let alpha = adaptive_alpha(1.001, 1.0, &cfg());
        assert!((alpha - 0.6854590436003225).abs() < 1e-12, "alpha {alpha}");
        assert!((alpha - (0.4 * 0.5f64.atan() + 0.5)).abs() < 1e-12);
    }

    #[test]
    fn large_gaps_saturate_at_the_clamp() {
        let hi = adaptive_alpha(10.0, 0.0, &cfg());
        let lo = adaptive_alpha(0.0, 10.0, &cfg());
        assert_eq!(hi, 0.95);
        assert_eq!(lo, 0.05);
    }

    #[test]
    fn raw_alpha_exceeds_one_before_the_clamp() {
        // A = 0.4 > 1/pi, so the raw response leaves [0, 1]; the clamp is
        // what keeps the combination convex.
        let raw = raw_adaptive_alpha(10.0, 0.0, 0.4, 500.0);
        assert!(raw > 1.0, "raw {raw}");
    }

    proptest! {
        #[test]
        fn alpha_is_antisymmetric_around_half(h1 in 0.0f64..6.0, h2 in 0.0f64..6.0) {
            let a = raw_adaptive_alpha(h1, h2, 0.4, 500.0);
            let b = raw_adaptive_alpha(h2, h1, 0.4, 500.0);
            prop_assert!((a + b - 1.0).abs() < 1e-12);
        }

        #[test]
        fn alpha_is_monotone_in_the_gap(d1 in -1.0f64..1.0, d2 in -1.0f64..1.0) {
            let base = 3.0;
            let a1 = adaptive_alpha(base + d1, base, &cfg());
            let a2 = adaptive_alpha(base + d2, base, &cfg());
            if d1 < d2 {
                prop_assert!(a1 <= a2);
            }
        }

        #[test]
        fn alpha_stays_in_the_clamped_interval(h1 in -10.0f64..10.0, h2 in -10.0f64..10.0) {
            let a = adaptive_alpha(h1, h2, &cfg());
            prop_assert!((0.05..=0.95).contains(&a));
        }
    }

    // ------------------------------------------------------------------
    // graft_layer
    // ------------------------------------------------------------------

    #[test]
    fn alpha_one_keeps_self_alpha_zero_takes_other() {
        let own = t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]);
        let other = t(&[2, 2], &[5.0, 6.0, 7.0, 8.0]);
        assert_eq!(graft_layer(&own, &other, 1.0).unwrap(), own);
        assert_eq!(graft_layer(&own, &other, 0.0).unwrap(), other);
    }

    #[test]
    fn constant_layers_average_exactly() {
        let own = Tensor::filled(vec![1, 1, 2, 2], 1.0);
        let other = Tensor::filled(vec![1, 1, 2, 2], 3.0);
        let mixed = graft_layer(&own, &other, 0.5).unwrap();
        assert!(mixed.data().iter().all(|&v| v == 2.0));
    }

    #[test]
    fn graft_layer_validates_inputs() {
        let own = Tensor::zeros(vec![2, 2]);
        assert!(graft_layer(&own, &Tensor::zeros(vec![2, 3]), 0.5).is_err());
        assert!(graft_layer(&own, &own, 1.5).is_err());
        assert!(graft_layer(&own, &own, -0.1).is_err());
    }

    proptest! {
        #[test]
        fn graft_layer_is_elementwise_convex(
            pair in prop::collection::vec((-10.0f64..10.0, -10.0f64..10.0), 1..32),
            alpha in 0.0f64..=1.0,
        ) {
            let own: Vec<f64> = pair.iter().map(|p| p.0).collect();
            let other: Vec<f64> = pair.iter().map(|p| p.1).collect();
            let n = own.len();
            let mixed = graft_layer(&t(&[n], &own), &t(&[n], &other), alpha).unwrap();
            for i in 0..n {
                let lo = own[i].min(other[i]);
                let hi = own[i].max(other[i]);
                prop_assert!(mixed.data()[i] >= lo - 1e-12 && mixed.data()[i] <= hi + 1e-12);
            }
        }
    }

    // ------------------------------------------------------------------
    // graft_pair / graft_named
    // ------------------------------------------------------------------

    fn conv_arch() -> ArchitectureSpec {
        ArchitectureSpec {
            input: InputSpec {
                channels: 1,
                height: 6,
                width: 6,
            },
            classes: 2,
            layers: vec![
                LayerSpec::Conv {
                    filters: 3,
                    kernel: 3,
                    padding: 1,
                },
                LayerSpec::Relu,
                LayerSpec::Flatten,
                LayerSpec::Dense { units: 2 },
            ],
        }
    }

    #[test]
    fn self_graft_is_a_bitwise_fixed_point() {
        let mut net = Network::build(&conv_arch(), 4).unwrap();
        let before = net.parameters();
        let events = graft_pair(&mut net, &before, &cfg(), 0, 0).unwrap();
        assert_eq!(net.parameters(), before);
        assert_eq!(events.len(), 1);
        assert_eq!(events[0].alpha, 0.5);
        assert_eq!(events[0].layer_name, "layer0.weight");
    }

    #[test]
    fn dense_layers_stay_put_unless_enabled() {
        let mut net = Network::build(&conv_arch(), 4).unwrap();
        let donor = Network::build(&conv_arch(), 5).unwrap().parameters();
        let dense_before = net.parameters().get("layer3.weight").unwrap().clone();
        let events = graft_pair(&mut net, &donor, &cfg(), 0, 1).unwrap();
        assert_eq!(events.len(), 1);
        assert_eq!(
            net.parameters().get("layer3.weight").unwrap(),
            &dense_before
        );

        let mut with_dense = cfg();
        with_dense.graft_dense = true;
        let mut net2 = Network::build(&conv_arch(), 4).unwrap();
        let events2 = graft_pair(&mut net2, &donor, &with_dense, 0, 1).unwrap();
        assert_eq!(events2.len(), 2);
        assert_ne!(
            net2.parameters().get("layer3.weight").unwrap(),
            &dense_before
        );
    }

    #[test]
    fn receiver_with_higher_entropy_keeps_more_of_itself() {
        // Diverse values -> high histogram entropy; constant -> zero.
        let diverse: Vec<f64> = (0..27).map(|i| (i as f64 * 0.37).sin()).collect();
        let mut high = NamedTensors::new();
        high.push("layer0.weight", t(&[3, 1, 3, 3], &diverse)).unwrap();
        let mut low = NamedTensors::new();
        low.push("layer0.weight", Tensor::filled(vec![3, 1, 3, 3], 0.2))
            .unwrap();

        let mut recv_hi = high.clone();
        let ev_hi = graft_named(&mut recv_hi, &low, &cfg(), 3, 7).unwrap();
        assert_eq!(ev_hi.len(), 1);
        assert!(ev_hi[0].alpha > 0.5, "alpha {}", ev_hi[0].alpha);
        assert!(ev_hi[0].h_self > ev_hi[0].h_other);
        assert_eq!(ev_hi[0].epoch, 3);
        assert_eq!(ev_hi[0].source_network, 7);

        let mut recv_lo = low.clone();
        let ev_lo = graft_named(&mut recv_lo, &high, &cfg(), 3, 2).unwrap();
        assert!(ev_lo[0].alpha < 0.5, "alpha {}", ev_lo[0].alpha);

        // Both directions assembled the identical combination: 0 ulps apart.
        let a = recv_hi.get("layer0.weight").unwrap();
        let b = recv_lo.get("layer0.weight").unwrap();
        for (x, y) in a.data().iter().zip(b.data()) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
        // and the two recorded alphas are complementary
        assert!((ev_hi[0].alpha + ev_lo[0].alpha - 1.0).abs() < 1e-15);
    }

    #[test]
    fn l1_criterion_drives_alpha_by_layer_norms() {
        let mut big = NamedTensors::new();
        big.push("layer0.weight", Tensor::filled(vec![1, 1, 2, 2], 2.5))
            .unwrap(); // l1 = 10
        let mut small = NamedTensors::new();
        small
            .push("layer0.weight", Tensor::filled(vec![1, 1, 2, 2], 0.25))
            .unwrap(); // l1 = 1
        let mut l1_cfg = cfg();
        l1_cfg.criterion = GraftCriterion::L1;

        let mut recv = big.clone();
        let ev = graft_named(&mut recv, &small, &l1_cfg, 0, 1).unwrap();
        assert_eq!(ev[0].h_self, 10.0);
        assert_eq!(ev[0].h_other, 1.0);
        // gap of 9 with c = 500 saturates the clamp
        assert_eq!(ev[0].alpha, 0.95);
    }

    #[test]
    fn conv_bias_moves_with_its_layer() {
        let mut net = Network::build(&conv_arch(), 4).unwrap();
        let mut donor = net.parameters();
        // donor bias differs; weights identical -> tie -> alpha = 0.5
        for v in donor.get_mut("layer0.bias").unwrap().data_mut() {
            *v = 1.0;
        }
        graft_pair(&mut net, &donor, &cfg(), 0, 1).unwrap();
        for v in net.parameters().get("layer0.bias").unwrap().data() {
            assert_eq!(*v, 0.5);
        }
    }

    #[test]
    fn incongruent_donor_is_rejected() {
        let mut net = Network::build(&conv_arch(), 4).unwrap();
        let mut donor = NamedTensors::new();
        donor
            .push("layer0.weight", Tensor::zeros(vec![3, 1, 3, 3]))
            .unwrap();
        assert!(graft_pair(&mut net, &donor, &cfg(), 0, 1).is_err());
    }

    // ------------------------------------------------------------------
    // noise scion
    // ------------------------------------------------------------------

    fn wide_conv_arch() -> ArchitectureSpec {
        // 4 filters x 8 channels x 5x5 = 200 weights per filter: enough
        // samples to estimate the noise std.
        ArchitectureSpec {
            input: InputSpec {
                channels: 8,
                height: 8,
                width: 8,
            },
            classes: 2,
            layers: vec![
                LayerSpec::Conv {
                    filters: 4,
                    kernel: 5,
                    padding: 0,
                },
                LayerSpec::Flatten,
                LayerSpec::Dense { units: 2 },
            ],
        }
    }

    fn zero_out_filters(net: &mut Network, layer: &str, filters: &[usize]) {
        for (name, tensor) in net.parameters_mut() {
            if name == layer {
                for &f in filters {
                    for v in tensor.outer_slice_mut(f) {
                        *v = 0.0;
                    }
                }
            }
        }
    }

    #[test]
    fn noise_touches_only_invalid_filters_with_decayed_std() {
        let mut net = Network::build(&wide_conv_arch(), 9).unwrap();
        zero_out_filters(&mut net, "layer0.weight", &[1, 3]);
        let before = net.parameters();
        let touched = noise_graft(&mut net, &cfg(), 3, 123).unwrap();
        assert_eq!(
            touched,
            vec![
                FilterId {
                    layer_name: "layer0.weight".into(),
                    filter_index: 1
                },
                FilterId {
                    layer_name: "layer0.weight".into(),
                    filter_index: 3
                }
            ]
        );
        let after = net.parameters();
        let w_before = before.get("layer0.weight").unwrap();
        let w_after = after.get("layer0.weight").unwrap();
        // valid filters bitwise untouched
        for f in [0usize, 2] {
            assert_eq!(w_before.outer_slice(f), w_after.outer_slice(f));
        }
        // epoch 3, a = 0.5: sigma = 0.125; estimate std over 400 samples
        let mut noise = Vec::new();
        for f in [1usize, 3] {
            for (a, b) in w_after.outer_slice(f).iter().zip(w_before.outer_slice(f)) {
                noise.push(a - b);
            }
        }
        let mean: f64 = noise.iter().sum::<f64>() / noise.len() as f64;
        let var: f64 =
            noise.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / noise.len() as f64;
        let std = var.sqrt();
        assert!(
            (0.10..=0.15).contains(&std),
            "std {std} not near sigma 0.125"
        );
    }

    #[test]
    fn noise_graft_is_deterministic_and_skips_healthy_nets() {
        let mut a = Network::build(&wide_conv_arch(), 9).unwrap();
        zero_out_filters(&mut a, "layer0.weight", &[0]);
        let mut b = a.clone();
        noise_graft(&mut a, &cfg(), 2, 55).unwrap();
        noise_graft(&mut b, &cfg(), 2, 55).unwrap();
        assert_eq!(a.parameters(), b.parameters());

        let mut healthy = Network::build(&wide_conv_arch(), 9).unwrap();
        let before = healthy.parameters();
        let touched = noise_graft(&mut healthy, &cfg(), 2, 55).unwrap();
        assert!(touched.is_empty());
        assert_eq!(healthy.parameters(), before);
    }

    // ------------------------------------------------------------------
    // internal scion
    // ------------------------------------------------------------------

    /// Filters with constant values sized to produce the l1 pattern
    /// [5, 0.01, 3, 0.02] over 4 filters of 4 entries each.
    fn l1_pattern_layer() -> Tensor {
        let mut data = Vec::new();
        for target in [5.0f64, 0.01, 3.0, 0.02] {
            data.extend(std::iter::repeat_n(target / 4.0, 4));
        }
        t(&[4, 1, 2, 2], &data)
    }

    #[test]
    fn internal_graft_pairs_largest_with_smallest() {
        let mut w = l1_pattern_layer();
        let snapshot = w.clone();
        let outcome = internal_graft(&mut w, 0.1, false).unwrap();
        assert_eq!(
            outcome.pairs,
            vec![
                InternalPair {
                    donor: 0,
                    recipient: 1
                },
                InternalPair {
                    donor: 2,
                    recipient: 3
                }
            ]
        );
        assert!(!outcome.donors_overlap_recipients);
        // additive: recipient = old self + donor snapshot
        for i in 0..4 {
            assert_eq!(
                w.outer_slice(1)[i],
                snapshot.outer_slice(1)[i] + snapshot.outer_slice(0)[i]
            );
            assert_eq!(
                w.outer_slice(3)[i],
                snapshot.outer_slice(3)[i] + snapshot.outer_slice(2)[i]
            );
        }
        // donors untouched
        assert_eq!(w.outer_slice(0), snapshot.outer_slice(0));
        assert_eq!(w.outer_slice(2), snapshot.outer_slice(2));
    }

    #[test]
    fn internal_graft_replace_mode_overwrites() {
        let mut w = l1_pattern_layer();
        let snapshot = w.clone();
        internal_graft(&mut w, 0.1, true).unwrap();
        assert_eq!(w.outer_slice(1), snapshot.outer_slice(0));
        assert_eq!(w.outer_slice(3), snapshot.outer_slice(2));
    }

    #[test]
    fn zero_gamma_means_no_pairs_and_no_change() {
        let mut w = l1_pattern_layer();
        let before = w.clone();
        let outcome = internal_graft(&mut w, 0.0, false).unwrap();
        assert!(outcome.pairs.is_empty());
        assert_eq!(w, before);
    }

    #[test]
    fn overlap_is_flagged_when_invalid_filters_outnumber_valid() {
        // l1s = [5, 0.01, 0.02, 0.03]: three invalid, one valid.
        let mut data = Vec::new();
        for target in [5.0f64, 0.01, 0.02, 0.03] {
            data.extend(std::iter::repeat_n(target / 4.0, 4));
        }
        let mut w = t(&[4, 1, 2, 2], &data);
        let outcome = internal_graft(&mut w, 0.1, false).unwrap();
        assert!(outcome.donors_overlap_recipients);
        // recipients in ascending-l1 order: 1, 2, 3; donors descending: 0, 3, 2
        assert_eq!(
            outcome.pairs,
            vec![
                InternalPair {
                    donor: 0,
                    recipient: 1
                },
                InternalPair {
                    donor: 3,
                    recipient: 2
                },
                InternalPair {
                    donor: 2,
                    recipient: 3
                }
            ]
        );
    }

    #[test]
    fn internal_graft_network_covers_all_conv_layers() {
        let mut net = Network::build(&conv_arch(), 4).unwrap();
        zero_out_filters(&mut net, "layer0.weight", &[2]);
        let outcomes = internal_graft_network(&mut net, &cfg()).unwrap();
        assert_eq!(outcomes.len(), 1);
        assert_eq!(outcomes[0].0, "layer0.weight");
        assert_eq!(outcomes[0].1.pairs.len(), 1);
        assert_eq!(outcomes[0].1.pairs[0].recipient, 2);
    }

    proptest! {
        #[test]
        fn additive_internal_graft_respects_the_l1_triangle_bound(
            values in prop::collection::vec(-1.0f64..1.0, 16),
            gamma in 0.0f64..4.0,
        ) {
            let mut w = t(&[4, 1, 2, 2], &values);
            let before = w.clone();
            let l1_before = layer_filter_l1s(&before).unwrap();
            let outcome = internal_graft(&mut w, gamma, false).unwrap();
            let l1_after = layer_filter_l1s(&w).unwrap();
            for p in &outcome.pairs {
                prop_assert!(
                    l1_after[p.recipient] <= l1_before[p.recipient] + l1_before[p.donor] + 1e-9
                );
            }
        }
    }
}
