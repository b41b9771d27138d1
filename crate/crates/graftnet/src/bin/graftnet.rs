//! Command-line front end: train populations, inspect checkpoints, graft
//! two checkpoints together, diff metrics files, and sanity-check
//! gradients.
//!
//! Exit codes: 0 success, 1 bad inputs or a failed check, 2 runtime
//! failure (I/O, broken coordination).

use std::fs::File;
use std::io::{BufWriter, Write as _};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use rand::Rng as _;

use graftnet::checkpoint::{load_checkpoint, save_checkpoint};
use graftnet::config::{load_architecture, load_experiment};
use graftnet::error::{Error, Result};
use graftnet::graft::{graft_named, GraftConfig, GraftCriterion};
use graftnet::nn::gradcheck::gradient_check;
use graftnet::nn::network::Network;
use graftnet::orchestrator::{run_observed, ExperimentEvent, RunObserver};
use graftnet::report::{
    first_divergence, params_census, read_metrics_csv, EpochMetrics, FilterCensus, MetricsWriter,
};
use graftnet::rng::rng_from;
use graftnet::tensor::Tensor;

#[derive(Parser)]
#[command(
    name = "graftnet",
    version,
    about = "Train parallel networks that exchange weights mid-run, and inspect the results"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
enum OutputFormat {
    Csv,
    Json,
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
enum CriterionArg {
    Entropy,
    L1,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment file; writes metrics, graft events, checkpoints.
    Train {
        /// Experiment description (TOML).
        #[arg(long)]
        config: PathBuf,
        /// Output directory (created if missing).
        #[arg(long)]
        out: PathBuf,
        /// Overrides the experiment seed from the file.
        #[arg(long)]
        seed: Option<u64>,
        /// Save per-network checkpoints every N epochs (0 = final only).
        #[arg(long, default_value_t = 1)]
        checkpoint_every: usize,
    },
    /// Census the conv filters of a checkpoint at one or more thresholds.
    Analyze {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Comma-separated l1 thresholds.
        #[arg(long, value_delimiter = ',', default_value = "1e-3,1e-1")]
        thresholds: Vec<f64>,
        #[arg(long, value_enum, default_value_t = OutputFormat::Csv)]
        format: OutputFormat,
    },
    /// Graft one checkpoint into another; events go to stdout as JSON lines.
    GraftDemo {
        /// Checkpoint that receives the graft.
        #[arg(long)]
        recipient: PathBuf,
        /// Checkpoint the weights are taken from.
        #[arg(long)]
        donor: PathBuf,
        /// Where the grafted checkpoint is written.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = CriterionArg::Entropy)]
        criterion: CriterionArg,
        /// Histogram bins for the entropy criterion.
        #[arg(long, default_value_t = 256)]
        bins: usize,
    },
    /// Diff two metrics files: per-row accuracy deltas plus a summary.
    Compare { left: PathBuf, right: PathBuf },
    /// Check analytic gradients against finite differences.
    Gradcheck {
        /// Any config file with an [architecture] section.
        #[arg(long)]
        architecture: PathBuf,
        #[arg(long, default_value_t = 1e-5)]
        tolerance: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn main() {
    // Die quietly when a pipe consumer closes early (`graftnet analyze |
    // head`) instead of panicking on the write.
    #[cfg(unix)]
    unsafe {
        libc::signal(libc::SIGPIPE, libc::SIG_DFL);
    }
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // help and version are success paths, everything else is a
            // usage error (1, not clap's native 2: that code means a
            // runtime failure here)
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            e.print().expect("stderr");
            std::process::exit(code);
        }
    };
    let code = match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    };
    std::process::exit(code);
}

fn run(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::Train {
            config,
            out,
            seed,
            checkpoint_every,
        } => train(&config, &out, seed, checkpoint_every),
        Command::Analyze {
            checkpoint,
            thresholds,
            format,
        } => analyze(&checkpoint, &thresholds, format),
        Command::GraftDemo {
            recipient,
            donor,
            out,
            criterion,
            bins,
        } => graft_demo(&recipient, &donor, &out, criterion, bins),
        Command::Compare { left, right } => compare(&left, &right),
        Command::Gradcheck {
            architecture,
            tolerance,
            seed,
        } => gradcheck(&architecture, tolerance, seed),
    }
}

// ----------------------------------------------------------------------
// train
// ----------------------------------------------------------------------

struct RunRecorder {
    metrics: MetricsWriter,
    events: BufWriter<File>,
    events_path: PathBuf,
    ckpt_dir: PathBuf,
    checkpoint_every: usize,
}

impl RunRecorder {
    fn new(out: &Path, checkpoint_every: usize) -> Result<Self> {
        let ckpt_dir = out.join("checkpoints");
        std::fs::create_dir_all(&ckpt_dir).map_err(|e| Error::io(&ckpt_dir, e))?;
        let events_path = out.join("events.jsonl");
        let events = File::create(&events_path).map_err(|e| Error::io(&events_path, e))?;
        Ok(RunRecorder {
            metrics: MetricsWriter::create(out.join("metrics.csv"))?,
            events: BufWriter::new(events),
            events_path,
            ckpt_dir,
            checkpoint_every,
        })
    }
}

impl RunObserver for RunRecorder {
    fn on_metrics(&mut self, row: &EpochMetrics) -> Result<()> {
        self.metrics.write_row(row)
    }

    fn on_event(&mut self, event: &ExperimentEvent) -> Result<()> {
        let line = serde_json::to_string(event)
            .map_err(|e| Error::Format(format!("event not serializable: {e}")))?;
        let io_err = |e| Error::io(&self.events_path, e);
        self.events.write_all(line.as_bytes()).map_err(io_err)?;
        self.events.write_all(b"\n").map_err(io_err)?;
        self.events.flush().map_err(io_err)
    }

    fn on_epoch_end(&mut self, epoch: usize, networks: &[(usize, &Network)]) -> Result<()> {
        if self.checkpoint_every == 0 || (epoch + 1) % self.checkpoint_every != 0 {
            return Ok(());
        }
        for (id, net) in networks {
            let path = self.ckpt_dir.join(format!("net{id}_epoch{epoch:03}.ckpt"));
            save_checkpoint(path, &net.parameters())?;
        }
        Ok(())
    }
}

fn train(config: &Path, out: &Path, seed: Option<u64>, checkpoint_every: usize) -> Result<i32> {
    let loaded = load_experiment(config, seed)?;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut recorder = RunRecorder::new(out, checkpoint_every)?;

    println!(
        "{}: {} student(s), {} teacher(s), seed {}",
        loaded.name,
        loaded.config.num_students,
        loaded.config.num_teachers,
        loaded.config.seed
    );
    let outcome = run_observed(&loaded.config, &loaded.train, &loaded.test, &mut recorder)?;

    for (k, params) in outcome.final_params.iter().enumerate() {
        let path = recorder.ckpt_dir.join(format!("net{k}_final.ckpt"));
        save_checkpoint(path, params)?;
    }
    for (k, acc) in outcome.final_test_accuracy.iter().enumerate() {
        let role = if k < loaded.config.num_students {
            "student"
        } else {
            "teacher"
        };
        println!("network {k} ({role}): test accuracy {acc:.4}");
    }
    println!(
        "eval network accuracy {:.4}; {} graft event(s); outputs in {}",
        outcome.eval_accuracy(),
        outcome.events.len(),
        out.display()
    );
    Ok(0)
}

// ----------------------------------------------------------------------
// analyze
// ----------------------------------------------------------------------

fn print_census_csv(c: &FilterCensus) {
    let fmt_mean = |m: Option<f64>| m.map_or_else(|| "-".into(), |v| format!("{v}"));
    println!(
        "# threshold {}: {} valid (mean l1 {}), {} invalid (mean l1 {}), invalid ratio {}",
        c.threshold,
        c.valid_count,
        fmt_mean(c.valid_mean_l1),
        c.invalid_count,
        fmt_mean(c.invalid_mean_l1),
        c.invalid_count as f64 / c.records.len() as f64,
    );
    for r in &c.records {
        println!(
            "{},{},{},{},{}",
            c.threshold, r.layer_name, r.filter_index, r.l1, r.valid
        );
    }
}

fn analyze(checkpoint: &Path, thresholds: &[f64], format: OutputFormat) -> Result<i32> {
    if thresholds.is_empty() {
        return Err(Error::Argument("need at least one threshold".into()));
    }
    let params = load_checkpoint(checkpoint)?;
    match format {
        OutputFormat::Csv => {
            println!("# graftnet-census v1");
            println!("threshold,layer,filter,l1,valid");
            for &t in thresholds {
                print_census_csv(&params_census(&params, t)?);
            }
        }
        OutputFormat::Json => {
            for &t in thresholds {
                let census = params_census(&params, t)?;
                let line = serde_json::to_string(&census)
                    .map_err(|e| Error::Format(format!("census not serializable: {e}")))?;
                println!("{line}");
            }
        }
    }
    Ok(0)
}

// ----------------------------------------------------------------------
// graft-demo
// ----------------------------------------------------------------------

fn graft_demo(
    recipient: &Path,
    donor: &Path,
    out: &Path,
    criterion: CriterionArg,
    bins: usize,
) -> Result<i32> {
    let mut receiver = load_checkpoint(recipient)?;
    let donor_params = load_checkpoint(donor)?;
    let cfg = GraftConfig {
        criterion: match criterion {
            CriterionArg::Entropy => GraftCriterion::Entropy,
            CriterionArg::L1 => GraftCriterion::L1,
        },
        bin_count: bins,
        ..GraftConfig::default()
    };
    cfg.validate()?;
    let events = graft_named(&mut receiver, &donor_params, &cfg, 0, 0)?;
    save_checkpoint(out, &receiver)?;
    for event in &events {
        let line = serde_json::to_string(event)
            .map_err(|e| Error::Format(format!("event not serializable: {e}")))?;
        println!("{line}");
    }
    eprintln!(
        "grafted {} layer(s) from {} into {}; result in {}",
        events.len(),
        donor.display(),
        recipient.display(),
        out.display()
    );
    Ok(0)
}

// ----------------------------------------------------------------------
// compare
// ----------------------------------------------------------------------

fn compare(left: &Path, right: &Path) -> Result<i32> {
    let a = read_metrics_csv(left)?;
    let b = read_metrics_csv(right)?;

    println!("epoch,network_id,test_accuracy_left,test_accuracy_right,delta");
    let key = |m: &EpochMetrics| (m.epoch, m.network_id);
    for x in &a {
        if let Some(y) = b.iter().find(|y| key(y) == key(x)) {
            println!(
                "{},{},{},{},{}",
                x.epoch,
                x.network_id,
                x.test_accuracy,
                y.test_accuracy,
                y.test_accuracy - x.test_accuracy
            );
        }
    }

    let last_eval = |rows: &[EpochMetrics]| {
        rows.iter()
            .rev()
            .find(|m| m.network_id == 0)
            .map(|m| (m.epoch, m.test_accuracy))
    };
    if let (Some((ea, acc_a)), Some((eb, acc_b))) = (last_eval(&a), last_eval(&b)) {
        println!(
            "# final eval accuracy: left {acc_a} (epoch {ea}), right {acc_b} (epoch {eb}), \
             delta {}",
            acc_b - acc_a
        );
    }
    match first_divergence(&a, &b) {
        None => println!("# files are value-identical ({} rows)", a.len()),
        Some(d) => println!(
            "# first divergence at row {}, column {}: {} vs {}",
            d.row, d.column, d.left, d.right
        ),
    }
    Ok(0)
}

// ----------------------------------------------------------------------
// gradcheck
// ----------------------------------------------------------------------

fn gradcheck(architecture: &Path, tolerance: f64, seed: u64) -> Result<i32> {
    let arch = load_architecture(architecture)?;
    let mut net = Network::build(&arch, seed)?;

    let batch = 4;
    let [c, h, w] = [arch.input.channels, arch.input.height, arch.input.width];
    let mut rng = rng_from(seed.wrapping_add(1));
    let pixels: Vec<f64> = (0..batch * c * h * w)
        .map(|_| rng.random_range(0.0..1.0))
        .collect();
    let images = Tensor::new(vec![batch, c, h, w], pixels)?;
    let labels: Vec<usize> = (0..batch).map(|i| i % arch.classes).collect();

    let report = gradient_check(&mut net, &images, &labels, tolerance)?;
    for entry in &report.entries {
        println!("{}: max relative error {:e}", entry.name, entry.max_relative_error);
    }
    println!(
        "overall max relative error {:e} (tolerance {:e})",
        report.max_relative_error, report.tolerance
    );
    if report.passed() {
        println!("gradcheck PASS");
        Ok(0)
    } else {
        println!("gradcheck FAIL: {}", report.flagged.join(", "));
        Ok(1)
    }
}
