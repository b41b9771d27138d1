//! Experiment files: one TOML document describing a whole run.
//!
//! Sections: `[experiment]` (population and seed), `[architecture]`,
//! `[dataset]` (synthetic generator or CSV paths), `[trainer]` (base
//! settings), optional `[[trainers]]` overrides, `[graft]`, `[distill]`.
//!
//! When `[[trainers]]` is absent, every network gets the base trainer
//! passed through [`diversify`], which staggers seeds and learning rates so
//! parallel networks explore differently. An explicit `[[trainers]]` list
//! (students first, one entry per network) switches that off; each entry
//! only needs the fields it wants to change from `[trainer]`.
//!
//! Relative paths (CSV data, teacher checkpoint) resolve against the
//! directory containing the config file.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::checkpoint::load_checkpoint;
use crate::data::{
    channel_stats, generate_synthetic_with, load_csv_images, normalize, Dataset, SyntheticSpec,
};
use crate::distill::DistillConfig;
use crate::error::{Error, Result};
use crate::graft::GraftConfig;
use crate::nn::layers::ArchitectureSpec;
use crate::nn::optim::TrainerConfig;
use crate::orchestrator::{diversify, ExperimentConfig};

/// Parsed experiment file, before paths resolve and datasets are built.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentFile {
    #[serde(default)]
    pub experiment: ExperimentSection,
    pub architecture: ArchitectureSpec,
    #[serde(default)]
    pub dataset: DatasetSection,
    #[serde(default)]
    pub trainer: TrainerConfig,
    pub trainers: Option<Vec<TrainerOverride>>,
    pub graft: Option<GraftConfig>,
    pub distill: Option<DistillConfig>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSection {
    pub name: String,
    pub num_students: usize,
    pub num_teachers: usize,
    pub seed: u64,
    pub augment: bool,
    pub max_iterations: Option<usize>,
    /// Pre-trained teacher parameters to distill from without co-training.
    pub teacher_checkpoint: Option<PathBuf>,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        ExperimentSection {
            name: "experiment".into(),
            num_students: 1,
            num_teachers: 0,
            seed: 0,
            augment: false,
            max_iterations: None,
            teacher_checkpoint: None,
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSection {
    pub synthetic: Option<SyntheticSection>,
    pub csv: Option<CsvSection>,
    /// Fit per-channel mean/std on the training set and standardize both
    /// splits with those statistics.
    pub normalize: bool,
}

/// Synthetic generator settings plus a test-split spec. The test split uses
/// the same noise profile with its own seed so the two splits never share
/// samples.
#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSection {
    pub num_classes: usize,
    pub samples_per_class: usize,
    pub image_size: usize,
    pub seed: u64,
    pub noise_std: f64,
    pub jitter: f64,
    pub amplitude_min: f64,
    pub amplitude_max: f64,
    pub distractor_amp: f64,
    /// Defaults to a quarter of the train split, rounded up.
    pub test_samples_per_class: Option<usize>,
    /// Defaults to the train seed plus one.
    pub test_seed: Option<u64>,
}

impl Default for SyntheticSection {
    fn default() -> Self {
        let s = SyntheticSpec::default();
        SyntheticSection {
            num_classes: s.num_classes,
            samples_per_class: s.samples_per_class,
            image_size: s.image_size,
            seed: s.seed,
            noise_std: s.noise_std,
            jitter: s.jitter,
            amplitude_min: s.amplitude_min,
            amplitude_max: s.amplitude_max,
            distractor_amp: s.distractor_amp,
            test_samples_per_class: None,
            test_seed: None,
        }
    }
}

impl SyntheticSection {
    fn train_spec(&self) -> SyntheticSpec {
        SyntheticSpec {
            num_classes: self.num_classes,
            samples_per_class: self.samples_per_class,
            image_size: self.image_size,
            seed: self.seed,
            noise_std: self.noise_std,
            jitter: self.jitter,
            amplitude_min: self.amplitude_min,
            amplitude_max: self.amplitude_max,
            distractor_amp: self.distractor_amp,
        }
    }

    fn test_spec(&self) -> SyntheticSpec {
        SyntheticSpec {
            samples_per_class: self
                .test_samples_per_class
                .unwrap_or(self.samples_per_class.div_ceil(4)),
            seed: self.test_seed.unwrap_or(self.seed.wrapping_add(1)),
            ..self.train_spec()
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CsvSection {
    pub train: PathBuf,
    pub test: PathBuf,
}

/// Per-network settings; unset fields inherit from `[trainer]`.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainerOverride {
    pub learning_rate: Option<f64>,
    pub momentum: Option<f64>,
    pub weight_decay: Option<f64>,
    pub batch_size: Option<usize>,
    pub epochs: Option<usize>,
    pub lr_decay_factor: Option<f64>,
    pub lr_decay_period_epochs: Option<usize>,
    pub seed: Option<u64>,
}

impl TrainerOverride {
    pub fn apply(&self, base: &TrainerConfig) -> TrainerConfig {
        TrainerConfig {
            learning_rate: self.learning_rate.unwrap_or(base.learning_rate),
            momentum: self.momentum.unwrap_or(base.momentum),
            weight_decay: self.weight_decay.unwrap_or(base.weight_decay),
            batch_size: self.batch_size.unwrap_or(base.batch_size),
            epochs: self.epochs.unwrap_or(base.epochs),
            lr_decay_factor: self.lr_decay_factor.unwrap_or(base.lr_decay_factor),
            lr_decay_period_epochs: self
                .lr_decay_period_epochs
                .unwrap_or(base.lr_decay_period_epochs),
            seed: self.seed.unwrap_or(base.seed),
        }
    }
}

/// A run ready to hand to the orchestrator.
#[derive(Debug, Clone)]
pub struct LoadedExperiment {
    pub name: String,
    pub config: ExperimentConfig,
    pub train: Dataset,
    pub test: Dataset,
}

fn read_file(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Parses an experiment file without resolving paths or building datasets.
pub fn parse_experiment_file(path: impl AsRef<Path>) -> Result<ExperimentFile> {
    let path = path.as_ref();
    toml::from_str(&read_file(path)?)
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn resolve(base_dir: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base_dir.join(p)
    }
}

/// Turns a parsed file into a runnable experiment. `base_dir` anchors
/// relative paths; `seed_override` replaces the file's experiment seed.
pub fn assemble(
    file: &ExperimentFile,
    base_dir: &Path,
    seed_override: Option<u64>,
) -> Result<LoadedExperiment> {
    let exp = &file.experiment;
    let n = exp.num_students + exp.num_teachers;

    let trainers = match &file.trainers {
        Some(list) => {
            if list.len() != n {
                return Err(Error::Config(format!(
                    "[[trainers]] lists {} entries for {} networks \
                     ({} students + {} teachers)",
                    list.len(),
                    n,
                    exp.num_students,
                    exp.num_teachers
                )));
            }
            list.iter().map(|o| o.apply(&file.trainer)).collect()
        }
        None => (0..n).map(|k| diversify(&file.trainer, k)).collect(),
    };

    let frozen_teacher = exp
        .teacher_checkpoint
        .as_deref()
        .map(|p| load_checkpoint(resolve(base_dir, p)))
        .transpose()?;

    if exp.max_iterations == Some(0) {
        return Err(Error::Config(
            "max_iterations must be positive when set".into(),
        ));
    }

    let config = ExperimentConfig {
        architecture: file.architecture.clone(),
        num_students: exp.num_students,
        num_teachers: exp.num_teachers,
        trainers,
        graft: file.graft.clone(),
        distill: file.distill,
        frozen_teacher,
        max_iterations: exp.max_iterations,
        augment: exp.augment,
        seed: seed_override.unwrap_or(exp.seed),
    };
    config.validate()?;

    let (mut train, mut test) = build_datasets(&file.dataset, &file.architecture, base_dir)?;
    if file.dataset.normalize {
        let stats = channel_stats(&train);
        normalize(&mut train, &stats)?;
        normalize(&mut test, &stats)?;
    }

    Ok(LoadedExperiment {
        name: exp.name.clone(),
        config,
        train,
        test,
    })
}

fn build_datasets(
    section: &DatasetSection,
    arch: &ArchitectureSpec,
    base_dir: &Path,
) -> Result<(Dataset, Dataset)> {
    match (&section.synthetic, &section.csv) {
        (Some(_), Some(_)) => Err(Error::Config(
            "[dataset] declares both synthetic and csv; pick one".into(),
        )),
        (_, Some(csv)) => {
            let shape = [arch.input.channels, arch.input.height, arch.input.width];
            let train = load_csv_images(resolve(base_dir, &csv.train), arch.classes, shape)?;
            let test = load_csv_images(resolve(base_dir, &csv.test), arch.classes, shape)?;
            Ok((train, test))
        }
        (synthetic, None) => {
            let default_section;
            let syn = match synthetic {
                Some(s) => s,
                None => {
                    default_section = SyntheticSection::default();
                    &default_section
                }
            };
            if syn.num_classes != arch.classes {
                return Err(Error::Config(format!(
                    "synthetic dataset has {} classes but the architecture has {}",
                    syn.num_classes, arch.classes
                )));
            }
            let input = arch.input;
            if input.channels != 1 || input.height != syn.image_size || input.width != syn.image_size
            {
                return Err(Error::Config(format!(
                    "synthetic images are 1x{0}x{0} but the architecture expects \
                     {1}x{2}x{3}",
                    syn.image_size, input.channels, input.height, input.width
                )));
            }
            let train = generate_synthetic_with(&syn.train_spec())?;
            let test = generate_synthetic_with(&syn.test_spec())?;
            Ok((train, test))
        }
    }
}

/// Parses and assembles in one step, anchoring paths at the config file's
/// directory.
pub fn load_experiment(
    path: impl AsRef<Path>,
    seed_override: Option<u64>,
) -> Result<LoadedExperiment> {
    let path = path.as_ref();
    let file = parse_experiment_file(path)?;
    let base_dir = path.parent().unwrap_or(Path::new("."));
    assemble(&file, base_dir, seed_override)
}

/// Reads just the `[architecture]` section from any config file, ignoring
/// the rest, so a full experiment file works wherever a bare architecture
/// is needed.
pub fn load_architecture(path: impl AsRef<Path>) -> Result<ArchitectureSpec> {
    #[derive(Deserialize)]
    struct ArchOnly {
        architecture: ArchitectureSpec,
    }
    let path = path.as_ref();
    let parsed: ArchOnly = toml::from_str(&read_file(path)?)
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    parsed.architecture.feature_shapes()?;
    Ok(parsed.architecture)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::checkpoint::save_checkpoint;
    use crate::data::write_csv_images;
    use crate::graft::ScionSource;
    use crate::nn::network::Network;

    const ARCH: &str = r#"
[architecture]
input = { channels = 1, height = 12, width = 12 }
classes = 4
layers = [
    { kind = "conv", filters = 4, kernel = 3, padding = 1 },
    { kind = "relu" },
    { kind = "max_pool", size = 2 },
    { kind = "flatten" },
    { kind = "dense", units = 4 },
]
"#;

    fn write_config(dir: &Path, body: &str) -> PathBuf {
        let path = dir.join("experiment.toml");
        std::fs::write(&path, format!("{body}\n{ARCH}")).unwrap();
        path
    }

    #[test]
    fn minimal_file_gets_defaults_everywhere() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_config(dir.path(), "");
        let loaded = load_experiment(&path, None).unwrap();
        assert_eq!(loaded.name, "experiment");
        assert_eq!(loaded.config.num_students, 1);
        assert_eq!(loaded.config.num_teachers, 0);
        assert_eq!(loaded.config.trainers, vec![TrainerConfig::default()]);
        assert!(loaded.config.graft.is_none());
        assert!(loaded.config.distill.is_none());
        // default synthetic: 4 classes x 100 train, quarter-size test split
        assert_eq!(loaded.train.len(), 400);
        assert_eq!(loaded.test.len(), 100);
        assert_eq!(loaded.train.num_classes, 4);
    }

    #[test]
    fn full_file_parses_every_section() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_config(
            dir.path(),
            r#"
[experiment]
name = "desk"
num_students = 2
num_teachers = 1
seed = 9
augment = true
max_iterations = 500

[dataset]
normalize = true
[dataset.synthetic]
num_classes = 4
samples_per_class = 8
image_size = 12
seed = 3
test_samples_per_class = 4

[trainer]
learning_rate = 0.2
epochs = 2
batch_size = 4

[graft]
scion_source = "external"
bin_count = 128

[distill]
temperature = 2.0
kd_weight = 0.5
"#,
        );
        let loaded = load_experiment(&path, None).unwrap();
        assert_eq!(loaded.name, "desk");
        assert_eq!(loaded.config.num_networks(), 3);
        assert_eq!(loaded.config.seed, 9);
        assert!(loaded.config.augment);
        assert_eq!(loaded.config.max_iterations, Some(500));
        assert_eq!(loaded.config.graft.as_ref().unwrap().bin_count, 128);
        assert_eq!(
            loaded.config.graft.as_ref().unwrap().scion_source,
            ScionSource::External
        );
        assert_eq!(loaded.config.distill.unwrap().kd_weight, 0.5);
        assert_eq!(loaded.train.len(), 32);
        assert_eq!(loaded.test.len(), 16);
        // diversification staggered the seeds off the base
        let seeds: Vec<u64> = loaded.config.trainers.iter().map(|t| t.seed).collect();
        assert_eq!(seeds, vec![0, 1, 2]);
        assert_eq!(loaded.config.trainers[0].learning_rate, 0.2);
        assert!((loaded.config.trainers[1].learning_rate - 0.18).abs() < 1e-12);
        // normalize standardized the training pixels
        let stats = channel_stats(&loaded.train);
        assert!(stats.mean[0].abs() < 1e-9);
        assert!((stats.std[0] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn explicit_trainer_list_overrides_only_named_fields() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_config(
            dir.path(),
            r#"
[experiment]
num_students = 2

[trainer]
learning_rate = 0.25
epochs = 3
batch_size = 8

[[trainers]]
seed = 100

[[trainers]]
seed = 200
learning_rate = 0.5
"#,
        );
        let loaded = load_experiment(&path, None).unwrap();
        let t = &loaded.config.trainers;
        assert_eq!(t[0].seed, 100);
        assert_eq!(t[0].learning_rate, 0.25); // inherited, not diversified
        assert_eq!(t[1].seed, 200);
        assert_eq!(t[1].learning_rate, 0.5);
        assert!(t.iter().all(|c| c.epochs == 3 && c.batch_size == 8));
    }

    #[test]
    fn trainer_list_length_must_match_population() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_config(
            dir.path(),
            "[experiment]\nnum_students = 3\n\n[[trainers]]\nseed = 1\n",
        );
        let err = load_experiment(&path, None).unwrap_err();
        assert!(matches!(err, Error::Config(_)), "{err}");
        assert!(err.to_string().contains("1 entries for 3 networks"));
    }

    #[test]
    fn seed_override_wins_over_the_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_config(dir.path(), "[experiment]\nseed = 5\n");
        assert_eq!(load_experiment(&path, None).unwrap().config.seed, 5);
        assert_eq!(
            load_experiment(&path, Some(42)).unwrap().config.seed,
            42
        );
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        for body in [
            "[experiment]\nnum_student = 2\n", // typo
            "[graft]\nscion_sorce = \"noise\"\n",
            "[trainer]\nlearning_rat = 0.1\n",
            "[[trainers]]\nseeed = 1\n",
        ] {
            let path = write_config(dir.path(), body);
            let err = load_experiment(&path, None).unwrap_err();
            assert!(matches!(err, Error::Config(_)), "{body:?} gave {err}");
        }
    }

    #[test]
    fn synthetic_must_match_the_architecture() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_config(dir.path(), "[dataset.synthetic]\nnum_classes = 3\n");
        let err = load_experiment(&path, None).unwrap_err();
        assert!(err.to_string().contains("3 classes"));

        let path = write_config(dir.path(), "[dataset.synthetic]\nimage_size = 10\n");
        let err = load_experiment(&path, None).unwrap_err();
        assert!(err.to_string().contains("1x10x10"));
    }

    #[test]
    fn declaring_both_dataset_kinds_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_config(
            dir.path(),
            "[dataset.synthetic]\nseed = 1\n[dataset.csv]\ntrain = \"a.csv\"\ntest = \"b.csv\"\n",
        );
        let err = load_experiment(&path, None).unwrap_err();
        assert!(err.to_string().contains("pick one"));
    }

    #[test]
    fn csv_paths_resolve_against_the_config_directory() {
        let dir = tempfile::tempdir().unwrap();
        let ds = crate::data::generate_synthetic(4, 3, 12, 7).unwrap();
        write_csv_images(&ds, dir.path().join("train.csv")).unwrap();
        write_csv_images(&ds, dir.path().join("test.csv")).unwrap();
        let path = write_config(
            dir.path(),
            "[dataset.csv]\ntrain = \"train.csv\"\ntest = \"test.csv\"\n",
        );
        let loaded = load_experiment(&path, None).unwrap();
        assert_eq!(loaded.train.len(), 12);
        assert_eq!(loaded.test.len(), 12);
        assert_eq!(loaded.train.num_classes, 4);
        assert_eq!(loaded.train.image_shape(), [1, 12, 12]);
    }

    #[test]
    fn teacher_checkpoint_loads_as_frozen_teacher() {
        let dir = tempfile::tempdir().unwrap();
        let arch = load_architecture(&write_config(dir.path(), "")).unwrap();
        let net = Network::build(&arch, 11).unwrap();
        save_checkpoint(dir.path().join("teacher.ckpt"), &net.parameters()).unwrap();

        let path = write_config(
            dir.path(),
            "[experiment]\nteacher_checkpoint = \"teacher.ckpt\"\n\n[distill]\n",
        );
        let loaded = load_experiment(&path, None).unwrap();
        let frozen = loaded.config.frozen_teacher.unwrap();
        assert_eq!(frozen, net.parameters());

        // distillation without any teacher stays rejected
        let path = write_config(dir.path(), "[distill]\n");
        assert!(load_experiment(&path, None).is_err());
    }

    #[test]
    fn zero_max_iterations_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_config(dir.path(), "[experiment]\nmax_iterations = 0\n");
        let err = load_experiment(&path, None).unwrap_err();
        assert!(err.to_string().contains("max_iterations"));
    }

    #[test]
    fn test_split_defaults_to_a_fresh_seed() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_config(dir.path(), "[dataset.synthetic]\nsamples_per_class = 5\n");
        let loaded = load_experiment(&path, None).unwrap();
        assert_eq!(loaded.train.len(), 20);
        assert_eq!(loaded.test.len(), 8); // ceil(5/4) = 2 per class
        assert_ne!(loaded.train.images, loaded.test.images);
    }

    #[test]
    fn architecture_loads_from_a_full_experiment_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_config(dir.path(), "[experiment]\nnum_students = 2\n");
        let arch = load_architecture(&path).unwrap();
        assert_eq!(arch.classes, 4);
        assert_eq!(arch.layers.len(), 5);

        let bad = dir.path().join("bad.toml");
        std::fs::write(&bad, "[architecture]\nclasses = 1\n").unwrap();
        assert!(load_architecture(&bad).is_err());
    }

    #[test]
    fn missing_file_is_an_io_error_and_bad_toml_a_config_error() {
        let dir = tempfile::tempdir().unwrap();
        let err = load_experiment(dir.path().join("nope.toml"), None).unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
        assert_eq!(err.exit_code(), 2);

        let path = dir.path().join("broken.toml");
        std::fs::write(&path, "[architecture\n").unwrap();
        let err = load_experiment(&path, None).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
        assert_eq!(err.exit_code(), 1);
    }
}
