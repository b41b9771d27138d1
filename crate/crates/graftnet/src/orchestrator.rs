//! Lock-step training of several networks with graft barriers.
//!
//! Students train in parallel, each owning its network exclusively. The
//! only cross-network exchanges are (a) the graft barrier, where all
//! students are snapshotted before any is modified and student k receives
//! from the snapshot of student k-1 (cyclically, so student 0 receives
//! from the last one), and (b) distillation targets, which are computed
//! from teacher logits before any network steps in that iteration.
//! Teachers train on plain cross-entropy and are never grafted.
//!
//! Everything is deterministic given the config: per-network seeds derive
//! from (experiment seed, trainer seed) only, work is joined back in
//! network-id order, and no result depends on how the parallel runtime
//! schedules the trainers.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::criteria::{network_information, HistogramSpec};
use crate::data::{epoch_batches, Dataset, LoaderConfig};
use crate::distill::{
    student_total_grad, student_total_loss, teacher_average, temperature_softmax, DistillConfig,
    SoftTargets,
};
use crate::error::{Error, Result};
use crate::graft::{
    graft_pair, internal_graft_network, noise_graft, GraftConfig, GraftEvent, ScionSource,
};
use crate::nn::layers::ArchitectureSpec;
use crate::nn::loss::cross_entropy_grad;
use crate::nn::network::Network;
use crate::nn::optim::{effective_lr, sgd_step_network, TrainerConfig};
use crate::params::NamedTensors;
use crate::report::{
    network_invalid_ratio, EpochMetrics, INVALID_THRESHOLD_LOOSE, INVALID_THRESHOLD_STRICT,
};
use crate::rng::mix_seed;
use crate::tensor::Tensor;

/// Learning-rate spread used by [`diversify`], cycled by network index.
pub const LR_FACTORS: [f64; 6] = [1.0, 0.9, 1.1, 0.8, 1.2, 0.7];

/// Derives the k-th network's trainer from a base config: seed offset by k
/// and learning rate scaled by a fixed per-k factor.
pub fn diversify(base: &TrainerConfig, k: usize) -> TrainerConfig {
    let mut cfg = base.clone();
    cfg.seed = base.seed.wrapping_add(k as u64);
    cfg.learning_rate = base.learning_rate * LR_FACTORS[k % LR_FACTORS.len()];
    cfg
}

/// Root of every per-network random stream.
pub fn network_seed(global_seed: u64, trainer_seed: u64) -> u64 {
    mix_seed(global_seed, trainer_seed)
}

/// Seed for a network's weight initialization.
pub fn init_seed_for(global_seed: u64, trainer_seed: u64) -> u64 {
    mix_seed(network_seed(global_seed, trainer_seed), 1)
}

/// Seed for a network's data-loader shuffles and augmentation.
pub fn loader_seed_for(global_seed: u64, trainer_seed: u64) -> u64 {
    mix_seed(network_seed(global_seed, trainer_seed), 2)
}

fn noise_seed_for(global_seed: u64, trainer_seed: u64) -> u64 {
    mix_seed(network_seed(global_seed, trainer_seed), 3)
}

/// A graft received by one network, as it goes into the event log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentEvent {
    /// Receiver network id.
    pub network_id: usize,
    #[serde(flatten)]
    pub event: GraftEvent,
}

/// Full description of a multi-network run. Networks are numbered with
/// students first (ids `0..num_students`), then co-trained teachers.
/// Network 0 is the designated evaluation network.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub architecture: ArchitectureSpec,
    pub num_students: usize,
    pub num_teachers: usize,
    /// One per network, students first; length = num_students + num_teachers.
    pub trainers: Vec<TrainerConfig>,
    /// None disables grafting entirely.
    pub graft: Option<GraftConfig>,
    /// Required exactly when any teacher (co-trained or frozen) is present.
    pub distill: Option<DistillConfig>,
    /// Pre-trained teacher parameters; joins the teacher ensemble without
    /// training or appearing in metrics.
    pub frozen_teacher: Option<NamedTensors>,
    /// Hard cap on lock-step iterations; None trains the configured epochs.
    pub max_iterations: Option<usize>,
    pub augment: bool,
    pub seed: u64,
}

impl ExperimentConfig {
    pub fn num_networks(&self) -> usize {
        self.num_students + self.num_teachers
    }

    fn has_teachers(&self) -> bool {
        self.num_teachers > 0 || self.frozen_teacher.is_some()
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_students == 0 {
            return Err(Error::Config("need at least one student network".into()));
        }
        if self.trainers.len() != self.num_networks() {
            return Err(Error::Config(format!(
                "{} trainer configs for {} networks",
                self.trainers.len(),
                self.num_networks()
            )));
        }
        for t in &self.trainers {
            t.validate()?;
        }
        let first = &self.trainers[0];
        if self
            .trainers
            .iter()
            .any(|t| t.epochs != first.epochs || t.batch_size != first.batch_size)
        {
            return Err(Error::Config(
                "lock-step training requires equal epochs and batch_size across trainers".into(),
            ));
        }
        if let Some(g) = &self.graft {
            g.validate()?;
        }
        if let Some(d) = &self.distill {
            d.validate()?;
            if !self.has_teachers() {
                return Err(Error::Config(
                    "distillation configured but no teachers present".into(),
                ));
            }
        } else if self.has_teachers() {
            return Err(Error::Config(
                "teachers present but no distillation config".into(),
            ));
        }
        self.architecture.feature_shapes()?;
        Ok(())
    }
}

/// Everything a finished run produced. Metrics rows are ordered epoch-major
/// and by network id within an epoch.
#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub metrics: Vec<EpochMetrics>,
    pub events: Vec<ExperimentEvent>,
    /// Final parameters per network id.
    pub final_params: Vec<NamedTensors>,
    /// Final test accuracy per network id.
    pub final_test_accuracy: Vec<f64>,
}

impl ExperimentOutcome {
    /// Accuracy of the designated evaluation network (the first student).
    pub fn eval_accuracy(&self) -> f64 {
        self.final_test_accuracy[0]
    }
}

/// Callbacks fired while an experiment runs, in deterministic order. Any
/// error aborts the run; rows already delivered stay delivered, so a sink
/// that flushes eagerly keeps partial results on failure.
pub trait RunObserver {
    fn on_metrics(&mut self, _row: &EpochMetrics) -> Result<()> {
        Ok(())
    }
    fn on_event(&mut self, _event: &ExperimentEvent) -> Result<()> {
        Ok(())
    }
    fn on_epoch_end(&mut self, _epoch: usize, _networks: &[(usize, &Network)]) -> Result<()> {
        Ok(())
    }
}

/// Observer that ignores everything.
pub struct NullObserver;

impl RunObserver for NullObserver {}

fn correct_count(logits: &Tensor, labels: &[usize]) -> usize {
    let classes = logits.shape()[1];
    logits
        .data()
        .chunks(classes)
        .zip(labels)
        .filter(|(row, &label)| {
            let mut best = 0usize;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            best == label
        })
        .count()
}

/// Test-set accuracy, evaluated in fixed-size chunks.
pub fn evaluate_accuracy(net: &Network, ds: &Dataset) -> Result<f64> {
    let loader = LoaderConfig {
        batch_size: 64,
        shuffle_seed: 0,
        augment: false,
    };
    let mut correct = 0usize;
    for batch in epoch_batches(ds, &loader, 0)? {
        correct += correct_count(&net.infer(&batch.images)?, &batch.labels);
    }
    Ok(correct as f64 / ds.len() as f64)
}

/// Applies one graft barrier across `nets`. All parameter snapshots are
/// taken before any network is modified, then network k receives from the
/// snapshot of network k-1 (network 0 from the last). `iterations` carries
/// each network's step count; a mismatch means the callers fell out of
/// lock-step and is a protocol error. With fewer than two networks there
/// is no peer and the barrier is a no-op.
pub fn barrier_graft(
    nets: &mut [&mut Network],
    iterations: &[usize],
    cfg: &GraftConfig,
    epoch: usize,
) -> Result<Vec<ExperimentEvent>> {
    cfg.validate()?;
    if nets.len() != iterations.len() {
        return Err(Error::Argument(format!(
            "{} networks but {} iteration counts",
            nets.len(),
            iterations.len()
        )));
    }
    if let Some(&first) = iterations.first() {
        if iterations.iter().any(|&n| n != first) {
            return Err(Error::Protocol(format!(
                "graft barrier reached with unequal iteration counts {iterations:?}"
            )));
        }
    }
    let k = nets.len();
    if k < 2 {
        return Ok(Vec::new());
    }
    let snapshots: Vec<NamedTensors> = nets.iter().map(|n| n.parameters()).collect();
    let mut events = Vec::new();
    for i in 0..k {
        let donor_id = (i + k - 1) % k;
        let grafted = graft_pair(nets[i], &snapshots[donor_id], cfg, epoch, donor_id)?;
        events.extend(grafted.into_iter().map(|event| ExperimentEvent {
            network_id: i,
            event,
        }));
    }
    Ok(events)
}

struct TrainerState {
    id: usize,
    cfg: TrainerConfig,
    net: Network,
    velocity: NamedTensors,
    iterations: usize,
    // per-epoch accumulators
    loss_sum: f64,
    batches_seen: usize,
    correct: usize,
    seen: usize,
    alpha_sum: f64,
    alpha_count: usize,
}

impl TrainerState {
    fn reset_epoch(&mut self) {
        self.loss_sum = 0.0;
        self.batches_seen = 0;
        self.correct = 0;
        self.seen = 0;
        self.alpha_sum = 0.0;
        self.alpha_count = 0;
    }
}

fn check_dataset(cfg: &ExperimentConfig, ds: &Dataset, what: &str) -> Result<()> {
    let input = &cfg.architecture.input;
    let expected = [input.channels, input.height, input.width];
    if ds.image_shape() != expected {
        return Err(Error::Config(format!(
            "{what} images are {:?}, architecture expects {expected:?}",
            ds.image_shape()
        )));
    }
    if ds.num_classes != cfg.architecture.classes {
        return Err(Error::Config(format!(
            "{what} has {} classes, architecture expects {}",
            ds.num_classes, cfg.architecture.classes
        )));
    }
    Ok(())
}

/// Runs the experiment and discards observer callbacks.
pub fn run_experiment(
    cfg: &ExperimentConfig,
    train: &Dataset,
    test: &Dataset,
) -> Result<ExperimentOutcome> {
    run_observed(cfg, train, test, &mut NullObserver)
}

/// Runs the experiment, streaming metrics, graft events, and epoch-end
/// network states to `observer` as they are produced.
pub fn run_observed(
    cfg: &ExperimentConfig,
    train: &Dataset,
    test: &Dataset,
    observer: &mut dyn RunObserver,
) -> Result<ExperimentOutcome> {
    cfg.validate()?;
    check_dataset(cfg, train, "train set")?;
    check_dataset(cfg, test, "test set")?;

    let batch_size = cfg.trainers[0].batch_size;
    let epochs = cfg.trainers[0].epochs;
    let iters_per_epoch = train.len().div_ceil(batch_size);
    let total_iters = {
        let by_epochs = iters_per_epoch * epochs;
        cfg.max_iterations.map_or(by_epochs, |m| m.min(by_epochs))
    };
    if let Some(g) = &cfg.graft {
        let period = g.graft_period_iters;
        // A period beyond the run is the idiom for "never graft". Shorter
        // periods must tile epochs evenly: either several barriers per epoch
        // or one barrier every whole number of epochs.
        let aligned = iters_per_epoch % period.max(1) == 0 || period % iters_per_epoch == 0;
        if period > 0 && period <= total_iters && !aligned {
            return Err(Error::Config(format!(
                "graft_period_iters {period} does not align with the {iters_per_epoch} \
                 iterations per epoch"
            )));
        }
    }

    let mut trainers: Vec<TrainerState> = Vec::with_capacity(cfg.num_networks());
    for (id, tcfg) in cfg.trainers.iter().enumerate() {
        let net = Network::build(&cfg.architecture, init_seed_for(cfg.seed, tcfg.seed))?;
        let velocity = net.parameters().zeros_like();
        trainers.push(TrainerState {
            id,
            cfg: tcfg.clone(),
            net,
            velocity,
            iterations: 0,
            loss_sum: 0.0,
            batches_seen: 0,
            correct: 0,
            seen: 0,
            alpha_sum: 0.0,
            alpha_count: 0,
        });
    }
    let frozen_net = match &cfg.frozen_teacher {
        Some(params) => {
            let mut net = Network::build(&cfg.architecture, 0)?;
            net.set_parameters(params)?;
            Some(net)
        }
        None => None,
    };

    let entropy_spec = HistogramSpec::new(
        cfg.graft
            .as_ref()
            .map_or_else(|| GraftConfig::default().bin_count, |g| g.bin_count),
    )?;

    let mut metrics = Vec::new();
    let mut all_events = Vec::new();
    let mut global_iter = 0usize;
    let mut exhausted = false;

    for epoch in 0..epochs {
        if exhausted {
            break;
        }
        for t in trainers.iter_mut() {
            t.reset_epoch();
        }
        let batches: Vec<Vec<crate::data::Batch>> = cfg
            .trainers
            .iter()
            .map(|tcfg| {
                let loader = LoaderConfig {
                    batch_size,
                    shuffle_seed: loader_seed_for(cfg.seed, tcfg.seed),
                    augment: cfg.augment,
                };
                epoch_batches(train, &loader, epoch)
            })
            .collect::<Result<_>>()?;

        for it in 0..iters_per_epoch {
            if global_iter >= total_iters {
                exhausted = true;
                break;
            }

            // Phase 1: distillation targets from pre-step teacher logits,
            // evaluated on each student's own batch.
            let targets: Vec<Option<SoftTargets>> = if let Some(dcfg) = &cfg.distill {
                let (students, teachers) = trainers.split_at(cfg.num_students);
                let frozen = frozen_net.as_ref();
                let computed: Vec<Result<SoftTargets>> = students
                    .par_iter()
                    .map(|s| {
                        let images = &batches[s.id][it].images;
                        let mut probs = Vec::new();
                        for t in teachers {
                            let logits = t.net.infer(images)?;
                            probs.push(temperature_softmax(&logits, dcfg.temperature)?);
                        }
                        if let Some(fz) = frozen {
                            let logits = fz.infer(images)?;
                            probs.push(temperature_softmax(&logits, dcfg.temperature)?);
                        }
                        teacher_average(&probs)
                    })
                    .collect();
                let mut targets = Vec::with_capacity(trainers.len());
                for r in computed {
                    targets.push(Some(r?));
                }
                targets.resize_with(trainers.len(), || None);
                targets
            } else {
                trainers.iter().map(|_| None).collect()
            };

            // Phase 2: every network forwards its batch, backprops, and
            // steps. No cross-network reads happen here.
            let step_results: Vec<Result<()>> = trainers
                .par_iter_mut()
                .zip(targets.par_iter())
                .map(|(state, target)| {
                    let batch = &batches[state.id][it];
                    let logits = state.net.forward(&batch.images)?;
                    let (loss, logit_grad) = match (target, &cfg.distill) {
                        (Some(t), Some(dcfg)) => {
                            let breakdown =
                                student_total_loss(&logits, &batch.labels, t, dcfg)?;
                            let grad = student_total_grad(&logits, &batch.labels, t, dcfg)?;
                            (breakdown.total, grad)
                        }
                        _ => cross_entropy_grad(&logits, &batch.labels)?,
                    };
                    if !loss.is_finite() {
                        return Err(Error::State(format!(
                            "network {} diverged: loss {loss} at epoch {epoch}",
                            state.id
                        )));
                    }
                    let grads = state.net.backward(&logit_grad)?;
                    sgd_step_network(&mut state.net, &grads, &mut state.velocity, &state.cfg, epoch)?;
                    state.loss_sum += loss;
                    state.batches_seen += 1;
                    state.correct += correct_count(&logits, &batch.labels);
                    state.seen += batch.labels.len();
                    state.iterations += 1;
                    Ok(())
                })
                .collect();
            for r in step_results {
                r?;
            }
            global_iter += 1;

            if let Some(gcfg) = &cfg.graft {
                let period = gcfg.graft_period_iters;
                if period > 0 && global_iter % period == 0 {
                    let events =
                        apply_barrier(&mut trainers, cfg.num_students, gcfg, epoch, cfg.seed)?;
                    record_events(events, &mut trainers, &mut all_events, observer)?;
                }
            }
        }

        // Epoch-boundary barrier (the default cadence).
        let epoch_completed = !exhausted;
        if let Some(gcfg) = &cfg.graft {
            if gcfg.graft_period_iters == 0 && epoch_completed {
                let events = apply_barrier(&mut trainers, cfg.num_students, gcfg, epoch, cfg.seed)?;
                record_events(events, &mut trainers, &mut all_events, observer)?;
            }
        }

        if trainers[0].batches_seen == 0 {
            break; // max_iterations landed exactly on the epoch boundary
        }

        // Metrics reflect the post-barrier state: the grafted network is
        // what this epoch hands to the next one.
        let epoch_rows: Vec<Result<EpochMetrics>> = trainers
            .par_iter()
            .map(|state| {
                let test_accuracy = evaluate_accuracy(&state.net, test)?;
                Ok(EpochMetrics {
                    epoch,
                    network_id: state.id,
                    train_loss: state.loss_sum / state.batches_seen as f64,
                    train_accuracy: state.correct as f64 / state.seen as f64,
                    test_accuracy,
                    effective_lr: effective_lr(&state.cfg, epoch),
                    invalid_ratio_strict: network_invalid_ratio(
                        &state.net,
                        INVALID_THRESHOLD_STRICT,
                    )?,
                    invalid_ratio_loose: network_invalid_ratio(
                        &state.net,
                        INVALID_THRESHOLD_LOOSE,
                    )?,
                    network_entropy: network_information(&state.net, &entropy_spec)?,
                    // 0.5 is the neutral mix, so epochs without grafts
                    // report it rather than a hole in the column
                    mean_alpha: if state.alpha_count > 0 {
                        state.alpha_sum / state.alpha_count as f64
                    } else {
                        0.5
                    },
                })
            })
            .collect();
        for row in epoch_rows {
            let row = row?;
            observer.on_metrics(&row)?;
            metrics.push(row);
        }
        let views: Vec<(usize, &Network)> = trainers.iter().map(|t| (t.id, &t.net)).collect();
        observer.on_epoch_end(epoch, &views)?;
    }

    let final_params = trainers.iter().map(|t| t.net.parameters()).collect();
    let mut final_test_accuracy = Vec::with_capacity(trainers.len());
    for t in &trainers {
        final_test_accuracy.push(evaluate_accuracy(&t.net, test)?);
    }
    Ok(ExperimentOutcome {
        metrics,
        events: all_events,
        final_params,
        final_test_accuracy,
    })
}

/// Fires one barrier over the student subset; teachers are untouched.
fn apply_barrier(
    trainers: &mut [TrainerState],
    num_students: usize,
    cfg: &GraftConfig,
    epoch: usize,
    global_seed: u64,
) -> Result<Vec<ExperimentEvent>> {
    let (students, _) = trainers.split_at_mut(num_students);
    match cfg.scion_source {
        ScionSource::External => {
            let iterations: Vec<usize> = students.iter().map(|s| s.iterations).collect();
            let mut nets: Vec<&mut Network> = students.iter_mut().map(|s| &mut s.net).collect();
            barrier_graft(&mut nets, &iterations, cfg, epoch)
        }
        ScionSource::Noise => {
            for s in students.iter_mut() {
                noise_graft(
                    &mut s.net,
                    cfg,
                    epoch,
                    noise_seed_for(global_seed, s.cfg.seed),
                )?;
            }
            Ok(Vec::new())
        }
        ScionSource::Internal => {
            for s in students.iter_mut() {
                internal_graft_network(&mut s.net, cfg)?;
            }
            Ok(Vec::new())
        }
    }
}

fn record_events(
    events: Vec<ExperimentEvent>,
    trainers: &mut [TrainerState],
    all_events: &mut Vec<ExperimentEvent>,
    observer: &mut dyn RunObserver,
) -> Result<()> {
    for ev in events {
        let t = &mut trainers[ev.network_id];
        t.alpha_sum += ev.event.alpha;
        t.alpha_count += 1;
        observer.on_event(&ev)?;
        all_events.push(ev);
    }
    Ok(())
}
