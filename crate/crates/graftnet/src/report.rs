//! Training diagnostics and metrics persistence.
//!
//! Two filter-health views exist. [`filter_census`] classifies every conv
//! filter by its l1 norm right now. A [`FilterPartition`] instead freezes
//! *which* filters were weak at some reference point so later runs can be
//! compared on the same filter set via [`census_with_partition`],
//! regardless of how those filters evolved since.
//!
//! Metrics go to CSV (one row per epoch and network) or JSON lines. Floats
//! are written with the shortest round-trip formatting, so two
//! deterministic runs produce byte-identical files.

use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::criteria::layer_filter_l1s;
use crate::error::{Error, Result};
use crate::nn::network::Network;
use crate::params::NamedTensors;
use crate::tensor::Tensor;

/// Ratio thresholds reported in every metrics row.
pub const INVALID_THRESHOLD_STRICT: f64 = 1e-3;
pub const INVALID_THRESHOLD_LOOSE: f64 = 1e-1;

/// Fraction of this conv layer's filters whose l1 falls below `threshold`.
pub fn invalid_filter_ratio(weights: &Tensor, threshold: f64) -> Result<f64> {
    let l1s = layer_filter_l1s(weights)?;
    let invalid = l1s.iter().filter(|&&v| v < threshold).count();
    Ok(invalid as f64 / l1s.len() as f64)
}

/// Invalid ratio pooled over every conv filter in the network.
pub fn network_invalid_ratio(net: &Network, threshold: f64) -> Result<f64> {
    let mut invalid = 0usize;
    let mut total = 0usize;
    for layer in net.conv_layer_weights() {
        let l1s = layer_filter_l1s(&layer.weights)?;
        invalid += l1s.iter().filter(|&&v| v < threshold).count();
        total += l1s.len();
    }
    if total == 0 {
        return Err(Error::Argument("network has no conv filters".into()));
    }
    Ok(invalid as f64 / total as f64)
}

/// Nearest-rank quantile: the smallest value with at least `q` of the data
/// at or below it. `q` in [0, 1]; `q = 0` gives the minimum.
pub fn quantile(values: &[f64], q: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Data("quantile of an empty slice".into()));
    }
    if !(0.0..=1.0).contains(&q) || q.is_nan() {
        return Err(Error::Argument(format!("quantile q must be in [0, 1], got {q}")));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let rank = ((q * sorted.len() as f64).ceil() as usize).max(1);
    Ok(sorted[rank - 1])
}

/// One conv filter's standing in a census.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterRecord {
    pub layer_name: String,
    pub filter_index: usize,
    pub l1: f64,
    pub valid: bool,
}

/// Classification of every conv filter with per-class average l1. Class
/// averages are absent (not 0) for empty classes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterCensus {
    pub threshold: f64,
    pub records: Vec<FilterRecord>,
    pub valid_count: usize,
    pub invalid_count: usize,
    pub valid_mean_l1: Option<f64>,
    pub invalid_mean_l1: Option<f64>,
}

fn census_from_flags(threshold: f64, records: Vec<FilterRecord>) -> FilterCensus {
    let mut valid_sum = 0.0;
    let mut valid_count = 0usize;
    let mut invalid_sum = 0.0;
    let mut invalid_count = 0usize;
    for r in &records {
        if r.valid {
            valid_sum += r.l1;
            valid_count += 1;
        } else {
            invalid_sum += r.l1;
            invalid_count += 1;
        }
    }
    FilterCensus {
        threshold,
        records,
        valid_count,
        invalid_count,
        valid_mean_l1: (valid_count > 0).then(|| valid_sum / valid_count as f64),
        invalid_mean_l1: (invalid_count > 0).then(|| invalid_sum / invalid_count as f64),
    }
}

fn census_over_layers<'a>(
    layers: impl Iterator<Item = (String, &'a Tensor)>,
    threshold: f64,
    what: &str,
) -> Result<FilterCensus> {
    if !(threshold >= 0.0) {
        return Err(Error::Argument(format!(
            "census threshold must be non-negative, got {threshold}"
        )));
    }
    let mut records = Vec::new();
    for (layer_name, weights) in layers {
        let l1s = layer_filter_l1s(weights)?;
        for (filter_index, &l1) in l1s.iter().enumerate() {
            records.push(FilterRecord {
                layer_name: layer_name.clone(),
                filter_index,
                l1,
                valid: l1 >= threshold,
            });
        }
    }
    if records.is_empty() {
        return Err(Error::Argument(format!("{what} has no conv filters")));
    }
    Ok(census_from_flags(threshold, records))
}

/// Classifies every conv filter by its current l1: valid iff l1 >= threshold.
pub fn filter_census(net: &Network, threshold: f64) -> Result<FilterCensus> {
    let layers = net.conv_layer_weights();
    census_over_layers(
        layers.iter().map(|l| (l.name(), &l.weights)),
        threshold,
        "network",
    )
}

/// Census straight off saved parameters: conv weights are the rank-4
/// tensors named `*.weight`, the same set grafting targets.
pub fn params_census(params: &NamedTensors, threshold: f64) -> Result<FilterCensus> {
    census_over_layers(
        params
            .iter()
            .filter(|(name, t)| name.ends_with(".weight") && t.rank() == 4)
            .map(|(name, t)| (name.to_string(), t)),
        threshold,
        "checkpoint",
    )
}

/// Pooled invalid ratio over a parameter collection's conv filters.
pub fn params_invalid_ratio(params: &NamedTensors, threshold: f64) -> Result<f64> {
    let c = params_census(params, threshold)?;
    Ok(c.invalid_count as f64 / c.records.len() as f64)
}

/// Which filters were weak at a reference point, frozen by layer name and
/// filter index so the same filter set can be re-measured later or on
/// another network of the same architecture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterPartition {
    pub threshold: f64,
    /// Per conv layer: (weight tensor name, flag per filter, true = invalid).
    pub layers: Vec<(String, Vec<bool>)>,
}

impl FilterPartition {
    /// Flags every conv filter with l1 below `threshold` right now.
    pub fn from_network(net: &Network, threshold: f64) -> Result<Self> {
        let mut layers = Vec::new();
        for layer in net.conv_layer_weights() {
            let l1s = layer_filter_l1s(&layer.weights)?;
            let flags = l1s.iter().map(|&v| v < threshold).collect();
            layers.push((layer.name(), flags));
        }
        Ok(FilterPartition { threshold, layers })
    }

    /// Number of filters flagged invalid.
    pub fn invalid_count(&self) -> usize {
        self.layers
            .iter()
            .map(|(_, f)| f.iter().filter(|&&b| b).count())
            .sum()
    }

    pub fn total_count(&self) -> usize {
        self.layers.iter().map(|(_, f)| f.len()).sum()
    }
}

/// Censuses `net` under an externally fixed partition: class membership
/// comes from the partition, l1 values from the network's current weights.
/// The network must expose the same conv layers (names and filter counts)
/// the partition was built from.
pub fn census_with_partition(net: &Network, partition: &FilterPartition) -> Result<FilterCensus> {
    let layers = net.conv_layer_weights();
    if layers.len() != partition.layers.len() {
        return Err(Error::Argument(format!(
            "partition covers {} conv layers, network has {}",
            partition.layers.len(),
            layers.len()
        )));
    }
    let mut records = Vec::new();
    for (layer, (name, flags)) in layers.iter().zip(&partition.layers) {
        if layer.name() != *name {
            return Err(Error::Argument(format!(
                "partition layer {name} does not match network layer {}",
                layer.name()
            )));
        }
        let l1s = layer_filter_l1s(&layer.weights)?;
        if l1s.len() != flags.len() {
            return Err(Error::Argument(format!(
                "partition has {} flags for {} filters in {name}",
                flags.len(),
                l1s.len()
            )));
        }
        for (filter_index, (&l1, &invalid)) in l1s.iter().zip(flags).enumerate() {
            records.push(FilterRecord {
                layer_name: name.clone(),
                filter_index,
                l1,
                valid: !invalid,
            });
        }
    }
    Ok(census_from_flags(partition.threshold, records))
}

// ======================================================================
// Metrics persistence
// ======================================================================

pub const METRICS_HEADER_COMMENT: &str = "# graftnet-metrics v1";
pub const METRICS_COLUMNS: &str = "epoch,network_id,train_loss,train_accuracy,test_accuracy,\
effective_lr,invalid_ratio_1e-3,invalid_ratio_1e-1,network_entropy,mean_alpha";

/// One metrics row: one network at one epoch boundary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub network_id: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub test_accuracy: f64,
    pub effective_lr: f64,
    #[serde(rename = "invalid_ratio_1e-3")]
    pub invalid_ratio_strict: f64,
    #[serde(rename = "invalid_ratio_1e-1")]
    pub invalid_ratio_loose: f64,
    pub network_entropy: f64,
    /// Mean alpha over this epoch's received grafts; 0.5 when none happened
    /// (the neutral mixing weight).
    pub mean_alpha: f64,
}

fn csv_row(m: &EpochMetrics) -> String {
    format!(
        "{},{},{},{},{},{},{},{},{},{}",
        m.epoch,
        m.network_id,
        m.train_loss,
        m.train_accuracy,
        m.test_accuracy,
        m.effective_lr,
        m.invalid_ratio_strict,
        m.invalid_ratio_loose,
        m.network_entropy,
        m.mean_alpha
    )
}

/// Streams metrics rows to a CSV file, flushing after every row so partial
/// runs still leave readable files behind.
#[derive(Debug)]
pub struct MetricsWriter {
    writer: BufWriter<File>,
    path: PathBuf,
}

impl MetricsWriter {
    /// Creates (or replaces) a metrics file and writes the two header lines.
    pub fn create(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let file =
            File::create(&path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let mut w = MetricsWriter {
            writer: BufWriter::new(file),
            path,
        };
        w.write_line(METRICS_HEADER_COMMENT)?;
        w.write_line(METRICS_COLUMNS)?;
        Ok(w)
    }

    /// Reopens an existing metrics file for appending, after checking it
    /// actually is one.
    pub fn append(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let mut contents = String::new();
        File::open(&path)
            .and_then(|mut f| f.read_to_string(&mut contents))
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        let mut lines = contents.lines();
        if lines.next() != Some(METRICS_HEADER_COMMENT) || lines.next() != Some(METRICS_COLUMNS) {
            return Err(Error::Format(format!(
                "{} is not a metrics file (missing header)",
                path.display()
            )));
        }
        let file = OpenOptions::new()
            .append(true)
            .open(&path)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        Ok(MetricsWriter {
            writer: BufWriter::new(file),
            path,
        })
    }

    fn write_line(&mut self, line: &str) -> Result<()> {
        let io_err = |e| Error::io(self.path.display().to_string(), e);
        // one write per line keeps partially flushed files line-aligned
        self.writer
            .write_all(format!("{line}\n").as_bytes())
            .map_err(io_err)?;
        self.writer.flush().map_err(io_err)
    }

    pub fn write_row(&mut self, row: &EpochMetrics) -> Result<()> {
        self.write_line(&csv_row(row))
    }
}

/// Writes a whole metrics table as CSV in one go.
pub fn export_metrics(path: impl AsRef<Path>, rows: &[EpochMetrics]) -> Result<()> {
    let mut w = MetricsWriter::create(path)?;
    for row in rows {
        w.write_row(row)?;
    }
    Ok(())
}

/// Writes a metrics table as JSON lines, one row object per line.
pub fn export_metrics_jsonl(path: impl AsRef<Path>, rows: &[EpochMetrics]) -> Result<()> {
    let path = path.as_ref();
    let io_err = |e| Error::io(path.display().to_string(), e);
    let file = File::create(path).map_err(io_err)?;
    let mut w = BufWriter::new(file);
    for row in rows {
        let line = serde_json::to_string(row)
            .map_err(|e| Error::Format(format!("metrics row not serializable: {e}")))?;
        w.write_all(line.as_bytes()).map_err(io_err)?;
        w.write_all(b"\n").map_err(io_err)?;
    }
    w.flush().map_err(io_err)
}

/// Reads a JSON-lines metrics file back.
pub fn read_metrics_jsonl(path: impl AsRef<Path>) -> Result<Vec<EpochMetrics>> {
    let path = path.as_ref();
    let mut contents = String::new();
    File::open(path)
        .and_then(|mut f| f.read_to_string(&mut contents))
        .map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut rows = Vec::new();
    for (idx, line) in contents.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        rows.push(serde_json::from_str(line).map_err(|e| Error::Parse {
            origin: path.display().to_string(),
            line: idx + 1,
            message: format!("bad metrics row: {e}"),
        })?);
    }
    Ok(rows)
}

fn parse_field<T: std::str::FromStr>(
    field: &str,
    column: &str,
    path: &Path,
    line: usize,
) -> Result<T> {
    field.trim().parse().map_err(|_| Error::Parse {
        origin: path.display().to_string(),
        line,
        message: format!("bad {column} value: {field:?}"),
    })
}

/// Reads a metrics CSV back. Lines starting with `#` are comments and may
/// appear anywhere; line numbers in errors count every line of the file.
pub fn read_metrics_csv(path: impl AsRef<Path>) -> Result<Vec<EpochMetrics>> {
    let path = path.as_ref();
    let mut contents = String::new();
    File::open(path)
        .and_then(|mut f| f.read_to_string(&mut contents))
        .map_err(|e| Error::io(path.display().to_string(), e))?;

    let mut rows = Vec::new();
    let mut saw_columns = false;
    for (idx, line) in contents.lines().enumerate() {
        let line_no = idx + 1;
        if line.starts_with('#') || line.trim().is_empty() {
            continue;
        }
        if !saw_columns {
            if line != METRICS_COLUMNS {
                return Err(Error::Format(format!(
                    "{} is not a metrics file (unexpected column header on line {line_no})",
                    path.display()
                )));
            }
            saw_columns = true;
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 10 {
            return Err(Error::Parse {
                origin: path.display().to_string(),
                line: line_no,
                message: format!("expected 10 fields, found {}", fields.len()),
            });
        }
        rows.push(EpochMetrics {
            epoch: parse_field(fields[0], "epoch", path, line_no)?,
            network_id: parse_field(fields[1], "network_id", path, line_no)?,
            train_loss: parse_field(fields[2], "train_loss", path, line_no)?,
            train_accuracy: parse_field(fields[3], "train_accuracy", path, line_no)?,
            test_accuracy: parse_field(fields[4], "test_accuracy", path, line_no)?,
            effective_lr: parse_field(fields[5], "effective_lr", path, line_no)?,
            invalid_ratio_strict: parse_field(fields[6], "invalid_ratio_1e-3", path, line_no)?,
            invalid_ratio_loose: parse_field(fields[7], "invalid_ratio_1e-1", path, line_no)?,
            network_entropy: parse_field(fields[8], "network_entropy", path, line_no)?,
            mean_alpha: parse_field(fields[9], "mean_alpha", path, line_no)?,
        });
    }
    if !saw_columns {
        return Err(Error::Format(format!(
            "{} is not a metrics file (no column header)",
            path.display()
        )));
    }
    Ok(rows)
}

/// Where two metrics tables first disagree.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsDivergence {
    /// Row index into the tables (not a file line number).
    pub row: usize,
    pub column: &'static str,
    pub left: String,
    pub right: String,
}

fn bits(v: f64) -> u64 {
    v.to_bits()
}

/// Compares two tables field by field; floats compare by bit pattern, so
/// this is an exact determinism check, not a tolerance one.
pub fn first_divergence(a: &[EpochMetrics], b: &[EpochMetrics]) -> Option<MetricsDivergence> {
    for (row, (x, y)) in a.iter().zip(b).enumerate() {
        let fields: [(&'static str, String, String, bool); 10] = [
            ("epoch", x.epoch.to_string(), y.epoch.to_string(), x.epoch == y.epoch),
            (
                "network_id",
                x.network_id.to_string(),
                y.network_id.to_string(),
                x.network_id == y.network_id,
            ),
            (
                "train_loss",
                x.train_loss.to_string(),
                y.train_loss.to_string(),
                bits(x.train_loss) == bits(y.train_loss),
            ),
            (
                "train_accuracy",
                x.train_accuracy.to_string(),
                y.train_accuracy.to_string(),
                bits(x.train_accuracy) == bits(y.train_accuracy),
            ),
            (
                "test_accuracy",
                x.test_accuracy.to_string(),
                y.test_accuracy.to_string(),
                bits(x.test_accuracy) == bits(y.test_accuracy),
            ),
            (
                "effective_lr",
                x.effective_lr.to_string(),
                y.effective_lr.to_string(),
                bits(x.effective_lr) == bits(y.effective_lr),
            ),
            (
                "invalid_ratio_1e-3",
                x.invalid_ratio_strict.to_string(),
                y.invalid_ratio_strict.to_string(),
                bits(x.invalid_ratio_strict) == bits(y.invalid_ratio_strict),
            ),
            (
                "invalid_ratio_1e-1",
                x.invalid_ratio_loose.to_string(),
                y.invalid_ratio_loose.to_string(),
                bits(x.invalid_ratio_loose) == bits(y.invalid_ratio_loose),
            ),
            (
                "network_entropy",
                x.network_entropy.to_string(),
                y.network_entropy.to_string(),
                bits(x.network_entropy) == bits(y.network_entropy),
            ),
            (
                "mean_alpha",
                x.mean_alpha.to_string(),
                y.mean_alpha.to_string(),
                bits(x.mean_alpha) == bits(y.mean_alpha),
            ),
        ];
        for (column, left, right, equal) in fields {
            if !equal {
                return Some(MetricsDivergence {
                    row,
                    column,
                    left,
                    right,
                });
            }
        }
    }
    if a.len() != b.len() {
        return Some(MetricsDivergence {
            row: a.len().min(b.len()),
            column: "row_count",
            left: a.len().to_string(),
            right: b.len().to_string(),
        });
    }
    None
}
