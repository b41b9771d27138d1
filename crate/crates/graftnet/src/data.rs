//! Image datasets: a synthetic generator for desk-scale experiments, a CSV
//! image format, per-channel normalization, and deterministic epoch batching.
//!
//! The generator draws one Gaussian bump per class, centered on a ring
//! position that depends only on (class, image size). Samples jitter the
//! center and amplitude, add an off-class distractor bump, then pixel noise.
//! Class geometry is therefore stable across seeds: two datasets from
//! different seeds are different draws from the same class distributions.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{mix_seed, rng_from};
use crate::tensor::Tensor;

/// Labeled image set, channels-first.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    /// `[N, C, H, W]`.
    pub images: Tensor,
    pub labels: Vec<usize>,
    pub num_classes: usize,
}

impl Dataset {
    pub fn new(images: Tensor, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if images.rank() != 4 {
            return Err(Error::Shape {
                context: "Dataset::new".into(),
                expected: "[N, C, H, W]".into(),
                actual: format!("{:?}", images.shape()),
            });
        }
        if labels.len() != images.shape()[0] {
            return Err(Error::Argument(format!(
                "{} labels for {} images",
                labels.len(),
                images.shape()[0]
            )));
        }
        if num_classes < 2 {
            return Err(Error::Argument("need at least 2 classes".into()));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::Data(format!(
                "label {bad} out of range for {num_classes} classes"
            )));
        }
        Ok(Dataset {
            images,
            labels,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn image_shape(&self) -> [usize; 3] {
        let s = self.images.shape();
        [s[1], s[2], s[3]]
    }
}

/// Full parameter set of the synthetic generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub num_classes: usize,
    pub samples_per_class: usize,
    pub image_size: usize,
    pub seed: u64,
    /// Std of i.i.d. pixel noise.
    pub noise_std: f64,
    /// Center jitter std as a fraction of the image size.
    pub jitter: f64,
    /// Bump amplitude range (uniform draw).
    pub amplitude_min: f64,
    pub amplitude_max: f64,
    /// Max amplitude of the randomly-placed distractor bump.
    pub distractor_amp: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            num_classes: 4,
            samples_per_class: 100,
            image_size: 12,
            seed: 0,
            noise_std: 0.35,
            jitter: 0.10,
            amplitude_min: 0.55,
            amplitude_max: 0.95,
            distractor_amp: 0.5,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::Config("synthetic data needs >= 2 classes".into()));
        }
        if self.samples_per_class == 0 {
            return Err(Error::Config("samples_per_class must be positive".into()));
        }
        if self.image_size < 4 {
            return Err(Error::Config("image_size must be at least 4".into()));
        }
        if !(self.noise_std >= 0.0 && self.jitter >= 0.0 && self.distractor_amp >= 0.0) {
            return Err(Error::Config("noise parameters must be non-negative".into()));
        }
        if !(self.amplitude_min > 0.0 && self.amplitude_max >= self.amplitude_min) {
            return Err(Error::Config("amplitude range is empty".into()));
        }
        Ok(())
    }
}

/// Class template center: a fixed position on a ring, a pure function of
/// (class, image size).
fn class_center(class: usize, num_classes: usize, size: usize) -> (f64, f64) {
    let angle = std::f64::consts::TAU * class as f64 / num_classes as f64
        + std::f64::consts::FRAC_PI_8;
    let mid = size as f64 / 2.0;
    let radius = size as f64 / 4.0;
    (mid + radius * angle.cos(), mid + radius * angle.sin())
}

fn bump(y: f64, x: f64, cy: f64, cx: f64, sigma: f64) -> f64 {
    let d2 = (y - cy) * (y - cy) + (x - cx) * (x - cx);
    (-d2 / (2.0 * sigma * sigma)).exp()
}

/// Synthetic dataset with full control over the noise knobs.
pub fn generate_synthetic_with(spec: &SyntheticSpec) -> Result<Dataset> {
    spec.validate()?;
    let k = spec.num_classes;
    let n = k * spec.samples_per_class;
    let s = spec.image_size;
    let sigma = s as f64 / 6.0;
    let sigma_d = s as f64 / 8.0;
    let mut rng = rng_from(spec.seed);
    let mut data = Vec::with_capacity(n * s * s);
    let mut labels = Vec::with_capacity(n);

    for i in 0..n {
        // Interleave classes so un-shuffled prefixes stay balanced.
        let class = i % k;
        labels.push(class);
        let (cy0, cx0) = class_center(class, k, s);
        let jy: f64 = rng.sample::<f64, _>(StandardNormal) * spec.jitter * s as f64;
        let jx: f64 = rng.sample::<f64, _>(StandardNormal) * spec.jitter * s as f64;
        let (cy, cx) = (cy0 + jy, cx0 + jx);
        let amp = rng.random_range(spec.amplitude_min..spec.amplitude_max);
        let damp = if spec.distractor_amp > 0.0 {
            rng.random_range(0.0..spec.distractor_amp)
        } else {
            0.0
        };
        let dy = rng.random_range(0.0..s as f64);
        let dx = rng.random_range(0.0..s as f64);
        for y in 0..s {
            for x in 0..s {
                let mut v = 0.1
                    + amp * bump(y as f64, x as f64, cy, cx, sigma)
                    + damp * bump(y as f64, x as f64, dy, dx, sigma_d);
                if spec.noise_std > 0.0 {
                    v += rng.sample::<f64, _>(StandardNormal) * spec.noise_std;
                }
                data.push(v.clamp(0.0, 1.0));
            }
        }
    }

    Dataset::new(Tensor::new(vec![n, 1, s, s], data)?, labels, k)
}

/// Synthetic dataset with the default noise profile.
pub fn generate_synthetic(
    num_classes: usize,
    samples_per_class: usize,
    image_size: usize,
    seed: u64,
) -> Result<Dataset> {
    generate_synthetic_with(&SyntheticSpec {
        num_classes,
        samples_per_class,
        image_size,
        seed,
        ..SyntheticSpec::default()
    })
}

// ======================================================================
// Normalization
// ======================================================================

/// Per-channel mean and std fitted on one dataset (population std).
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

pub fn channel_stats(ds: &Dataset) -> ChannelStats {
    let [c, h, w] = ds.image_shape();
    let n = ds.len();
    let plane = h * w;
    let mut mean = vec![0.0; c];
    let mut std = vec![0.0; c];
    let data = ds.images.data();
    for ci in 0..c {
        let mut sum = 0.0;
        for ni in 0..n {
            let base = (ni * c + ci) * plane;
            for v in &data[base..base + plane] {
                sum += v;
            }
        }
        mean[ci] = sum / (n * plane) as f64;
        let mut sq = 0.0;
        for ni in 0..n {
            let base = (ni * c + ci) * plane;
            for v in &data[base..base + plane] {
                let d = v - mean[ci];
                sq += d * d;
            }
        }
        std[ci] = (sq / (n * plane) as f64).sqrt();
    }
    ChannelStats { mean, std }
}

/// Applies `(x - mean) / std` per channel in place. Channels with ~zero
/// spread are shifted but not scaled.
pub fn normalize(ds: &mut Dataset, stats: &ChannelStats) -> Result<()> {
    let [c, h, w] = ds.image_shape();
    if stats.mean.len() != c || stats.std.len() != c {
        return Err(Error::Argument(format!(
            "stats cover {} channels, dataset has {c}",
            stats.mean.len()
        )));
    }
    let n = ds.len();
    let plane = h * w;
    let data = ds.images.data_mut();
    for ni in 0..n {
        for ci in 0..c {
            let scale = if stats.std[ci] > 1e-12 {
                1.0 / stats.std[ci]
            } else {
                1.0
            };
            let base = (ni * c + ci) * plane;
            for v in &mut data[base..base + plane] {
                *v = (*v - stats.mean[ci]) * scale;
            }
        }
    }
    Ok(())
}

// ======================================================================
// CSV images
// ======================================================================

/// Reads `label,p0,p1,...` rows; pixels are integers in [0, 255] and load
/// as value/255 into [0, 1].
pub fn load_csv_images(
    path: impl AsRef<Path>,
    num_classes: usize,
    image_shape: [usize; 3],
) -> Result<Dataset> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let origin = path.display().to_string();
    let [c, h, w] = image_shape;
    let pixels = c * h * w;
    if pixels == 0 {
        return Err(Error::Argument("image shape has a zero extent".into()));
    }

    let mut data = Vec::new();
    let mut labels = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let lineno = lineno + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split(',');
        let label_field = fields.next().unwrap_or("");
        let label: i64 = label_field.trim().parse().map_err(|_| Error::Parse {
            origin: origin.clone(),
            line: lineno,
            message: format!("label {label_field:?} is not an integer"),
        })?;
        if label < 0 || label as usize >= num_classes {
            return Err(Error::Data(format!(
                "line {lineno}: label {label} out of range for {num_classes} classes"
            )));
        }
        labels.push(label as usize);

        let mut count = 0usize;
        for field in fields {
            let value: f64 = field.trim().parse().map_err(|_| Error::Parse {
                origin: origin.clone(),
                line: lineno,
                message: format!("pixel {field:?} is not a number"),
            })?;
            if !(0.0..=255.0).contains(&value) {
                return Err(Error::Data(format!(
                    "line {lineno}: pixel value {value} outside [0, 255]"
                )));
            }
            data.push(value / 255.0);
            count += 1;
        }
        if count != pixels {
            return Err(Error::Parse {
                origin,
                line: lineno,
                message: format!("expected {pixels} pixels, found {count}"),
            });
        }
    }
    if labels.is_empty() {
        return Err(Error::Data(format!("{origin} holds no samples")));
    }
    let n = labels.len();
    Dataset::new(Tensor::new(vec![n, c, h, w], data)?, labels, num_classes)
}

/// Writes a dataset with [0, 1] pixel values as `label,p0,...` rows with
/// pixels rounded to [0, 255] integers.
pub fn write_csv_images(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if ds.images.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(Error::Argument(
            "write_csv_images expects pixel values in [0, 1]".into(),
        ));
    }
    let mut out = std::io::BufWriter::new(
        std::fs::File::create(path).map_err(|e| Error::io(path, e))?,
    );
    let stride = ds.images.numel() / ds.len();
    for (i, &label) in ds.labels.iter().enumerate() {
        let mut row = String::with_capacity(stride * 4 + 8);
        row.push_str(&label.to_string());
        for v in &ds.images.data()[i * stride..(i + 1) * stride] {
            row.push(',');
            row.push_str(&((v * 255.0).round() as u8).to_string());
        }
        row.push('\n');
        out.write_all(row.as_bytes()).map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

// ======================================================================
// Epoch batching
// ======================================================================

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct LoaderConfig {
    pub batch_size: usize,
    pub shuffle_seed: u64,
    pub augment: bool,
}

impl Default for LoaderConfig {
    fn default() -> Self {
        LoaderConfig {
            batch_size: 32,
            shuffle_seed: 0,
            augment: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub images: Tensor,
    pub labels: Vec<usize>,
}

/// Augmentation padding: crops shift by up to this much in each direction.
const CROP_PAD: usize = 2;

/// Materializes one epoch's batches. The permutation is a pure function of
/// (shuffle_seed, epoch); the final batch keeps the remainder samples.
pub fn epoch_batches(ds: &Dataset, cfg: &LoaderConfig, epoch: usize) -> Result<Vec<Batch>> {
    if cfg.batch_size == 0 {
        return Err(Error::Config("batch_size must be positive".into()));
    }
    if ds.is_empty() {
        return Err(Error::Argument("cannot batch an empty dataset".into()));
    }
    let n = ds.len();
    let [c, h, w] = ds.image_shape();
    let stride = c * h * w;
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = rng_from(mix_seed(cfg.shuffle_seed, epoch as u64));
    use rand::seq::SliceRandom;
    order.shuffle(&mut rng);

    let mut batches = Vec::with_capacity(n.div_ceil(cfg.batch_size));
    for chunk in order.chunks(cfg.batch_size) {
        let mut images = Vec::with_capacity(chunk.len() * stride);
        let mut labels = Vec::with_capacity(chunk.len());
        for &i in chunk {
            let src = &ds.images.data()[i * stride..(i + 1) * stride];
            if cfg.augment {
                let flip = rng.random_bool(0.5);
                let dy = rng.random_range(0..=2 * CROP_PAD) as isize - CROP_PAD as isize;
                let dx = rng.random_range(0..=2 * CROP_PAD) as isize - CROP_PAD as isize;
                for ci in 0..c {
                    for y in 0..h {
                        for x in 0..w {
                            let sx = if flip { w - 1 - x } else { x };
                            let sy = y as isize + dy;
                            let sx = sx as isize + dx;
                            let v = if sy >= 0 && (sy as usize) < h && sx >= 0 && (sx as usize) < w
                            {
                                src[ci * h * w + sy as usize * w + sx as usize]
                            } else {
                                0.0
                            };
                            images.push(v);
                        }
                    }
                }
            } else {
                images.extend_from_slice(src);
            }
            labels.push(ds.labels[i]);
        }
        batches.push(Batch {
            images: Tensor::new(vec![chunk.len(), c, h, w], images)?,
            labels,
        });
    }
    Ok(batches)
}
