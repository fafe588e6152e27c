//! Datasets: IDX files, synthetic tasks, splits and batch planning.
//!
//! Images are a single rank-4 tensor `(n, c, h, w)` with pixels in `[0, 1]`;
//! labels are `usize` class ids below `classes`. All shuffling is seeded, so
//! every split and batch order is a pure function of its inputs.

use std::path::Path;

use byteorder::{BigEndian, ByteOrder};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// IDX magic for unsigned-byte images with 3 dimensions (n, h, w).
const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
/// IDX magic for unsigned-byte labels with 1 dimension (n).
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// A labelled image set.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    images: Tensor,
    labels: Vec<usize>,
    classes: usize,
}

impl Dataset {
    /// Validates that images are `(n, c, h, w)`, labels line up, every label
    /// is below `classes`, and every pixel sits in `[0, 1]`.
    pub fn new(images: Tensor, labels: Vec<usize>, classes: usize) -> Result<Self> {
        if images.rank() != 4 {
            return Err(Error::RankMismatch {
                op: "dataset images",
                expected: 4,
                got: images.shape().to_vec(),
            });
        }
        if images.shape()[0] != labels.len() {
            return Err(Error::CountMismatch {
                images: images.shape()[0],
                labels: labels.len(),
            });
        }
        if classes == 0 {
            return Err(Error::Config("a dataset needs at least one class".into()));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::LabelOutOfRange {
                label: bad,
                classes,
            });
        }
        if let Some(&bad) = images.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Config(format!(
                "pixel value {bad} outside [0, 1]"
            )));
        }
        Ok(Dataset {
            images,
            labels,
            classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn images(&self) -> &Tensor {
        &self.images
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// Per-sample `(c, h, w)` shape.
    pub fn image_shape(&self) -> [usize; 3] {
        let s = self.images.shape();
        [s[1], s[2], s[3]]
    }

    /// Gathers the given samples into a batch tensor plus labels.
    pub fn batch(&self, indices: &[usize]) -> Result<(Tensor, Vec<usize>)> {
        let images = self.images.take(0, indices)?;
        let labels = indices.iter().map(|&i| self.labels[i]).collect();
        Ok((images, labels))
    }

    /// First `min(n, len)` samples, keeping the class count. Used for the
    /// fixed score-statistics subset.
    pub fn prefix(&self, n: usize) -> Result<Dataset> {
        if self.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let take = n.min(self.len()).max(1);
        let indices: Vec<usize> = (0..take).collect();
        let (images, labels) = self.batch(&indices)?;
        Ok(Dataset {
            images,
            labels,
            classes: self.classes,
        })
    }
}

// --- IDX --------------------------------------------------------------------

fn read_header(bytes: &[u8], expected_magic: u32, ndim: usize) -> Result<Vec<usize>> {
    let header_len = 4 + 4 * ndim;
    if bytes.len() < header_len {
        return Err(Error::Truncated {
            expected: header_len,
            got: bytes.len(),
        });
    }
    let magic = BigEndian::read_u32(&bytes[..4]);
    if magic != expected_magic {
        return Err(Error::IdxMagic {
            expected: expected_magic,
            found: magic,
        });
    }
    Ok((0..ndim)
        .map(|i| BigEndian::read_u32(&bytes[4 + 4 * i..8 + 4 * i]) as usize)
        .collect())
}

/// Loads an IDX image/label pair (the layout used by the classic digit
/// sets): big-endian magic + dimensions, then one unsigned byte per value.
/// Pixels are scaled to `[0, 1]`; the class count is `max label + 1`.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<Dataset> {
    let image_bytes = std::fs::read(images_path)?;
    let label_bytes = std::fs::read(labels_path)?;

    let dims = read_header(&image_bytes, IDX_IMAGES_MAGIC, 3)?;
    let (n, h, w) = (dims[0], dims[1], dims[2]);
    let pixel_count = n * h * w;
    if image_bytes.len() != 16 + pixel_count {
        return Err(Error::Truncated {
            expected: 16 + pixel_count,
            got: image_bytes.len(),
        });
    }

    let ldims = read_header(&label_bytes, IDX_LABELS_MAGIC, 1)?;
    if ldims[0] != n {
        return Err(Error::CountMismatch {
            images: n,
            labels: ldims[0],
        });
    }
    if label_bytes.len() != 8 + n {
        return Err(Error::Truncated {
            expected: 8 + n,
            got: label_bytes.len(),
        });
    }
    if n == 0 {
        return Err(Error::EmptyDataset);
    }

    let pixels: Vec<f64> = image_bytes[16..]
        .iter()
        .map(|&b| f64::from(b) / 255.0)
        .collect();
    let labels: Vec<usize> = label_bytes[8..].iter().map(|&b| b as usize).collect();
    let classes = labels.iter().max().copied().unwrap_or(0) + 1;
    Dataset::new(Tensor::new(&[n, 1, h, w], pixels)?, labels, classes)
}

/// Writes a single-channel dataset as an IDX pair (pixels quantised to
/// bytes). Round-trips exactly when pixels are already multiples of 1/255.
pub fn write_idx(data: &Dataset, images_path: &Path, labels_path: &Path) -> Result<()> {
    let [c, h, w] = data.image_shape();
    if c != 1 {
        return Err(Error::Unsupported(format!(
            "IDX image files are single-channel, dataset has {c} channels"
        )));
    }
    if data.labels.iter().any(|&l| l > u8::MAX as usize) {
        return Err(Error::Unsupported("IDX labels are single bytes".into()));
    }
    let n = data.len();
    let mut image_bytes = Vec::with_capacity(16 + n * h * w);
    for &dim in &[IDX_IMAGES_MAGIC, n as u32, h as u32, w as u32] {
        image_bytes.extend_from_slice(&dim.to_be_bytes());
    }
    image_bytes.extend(data.images.data().iter().map(|&p| (p * 255.0).round() as u8));

    let mut label_bytes = Vec::with_capacity(8 + n);
    label_bytes.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    label_bytes.extend_from_slice(&(n as u32).to_be_bytes());
    label_bytes.extend(data.labels.iter().map(|&l| l as u8));

    std::fs::write(images_path, image_bytes)?;
    std::fs::write(labels_path, label_bytes)?;
    Ok(())
}

// --- synthetic tasks --------------------------------------------------------

/// Description of a generated dataset.
///
/// Tasks: `"bars"` (2 classes, horizontal vs vertical stripes — needs
/// spatial filters to solve) and `"blobs"` (one noisy template per class).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub task: String,
    pub classes: usize,
    /// Per-sample `(c, h, w)`.
    pub shape: [usize; 3],
    /// Noise level (std of additive Gaussian noise before clamping).
    #[serde(default = "default_noise")]
    pub noise: f64,
}

fn default_noise() -> f64 {
    0.1
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let [c, h, w] = self.shape;
        if c == 0 || h == 0 || w == 0 {
            return Err(Error::Config(format!(
                "synthetic shape dimensions must be >= 1, got {:?}",
                self.shape
            )));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(Error::Config(format!(
                "noise must be finite and >= 0, got {}",
                self.noise
            )));
        }
        match self.task.as_str() {
            "bars" => {
                if self.classes != 2 {
                    return Err(Error::Config(format!(
                        "bars is a 2-class task, got classes = {}",
                        self.classes
                    )));
                }
                if c != 1 || h < 4 || w < 4 {
                    return Err(Error::Config(format!(
                        "bars needs a 1-channel image at least 4x4, got {:?}",
                        self.shape
                    )));
                }
                Ok(())
            }
            "blobs" => {
                if self.classes < 2 {
                    return Err(Error::Config(format!(
                        "blobs needs at least 2 classes, got {}",
                        self.classes
                    )));
                }
                Ok(())
            }
            other => Err(Error::UnknownTask(other.to_string())),
        }
    }
}

/// Generates `n` samples for the given task, deterministically in `seed`.
/// Labels cycle round-robin, so class counts differ by at most one.
pub fn generate_synthetic(spec: &SyntheticSpec, n: usize, seed: u64) -> Result<Dataset> {
    spec.validate()?;
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    match spec.task.as_str() {
        "bars" => generate_bars(spec, n, &mut rng),
        "blobs" => generate_blobs(spec, n, &mut rng),
        _ => unreachable!("validated above"),
    }
}

/// Class 0: stripes across rows (horizontal bands). Class 1: stripes across
/// columns. Stripe period, phase and amplitude vary per sample.
fn generate_bars(spec: &SyntheticSpec, n: usize, rng: &mut ChaCha20Rng) -> Result<Dataset> {
    let [_, h, w] = spec.shape;
    let mut pixels = Vec::with_capacity(n * h * w);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let label = i % 2;
        labels.push(label);
        let period = rng.random_range(2usize..=4);
        let phase = rng.random_range(0..period);
        let amplitude = rng.random_range(0.7..0.9);
        for y in 0..h {
            for x in 0..w {
                let along = if label == 0 { y } else { x };
                let on = ((along + phase) % period) * 2 < period;
                let base = if on { amplitude } else { 0.0 };
                let z: f64 = StandardNormal.sample(rng);
                pixels.push((base + z * spec.noise).clamp(0.0, 1.0));
            }
        }
    }
    Dataset::new(Tensor::new(&[n, 1, h, w], pixels)?, labels, 2)
}

/// One random template per class; samples are the template plus noise.
fn generate_blobs(spec: &SyntheticSpec, n: usize, rng: &mut ChaCha20Rng) -> Result<Dataset> {
    let [c, h, w] = spec.shape;
    let pixels_per = c * h * w;
    let templates: Vec<Vec<f64>> = (0..spec.classes)
        .map(|_| (0..pixels_per).map(|_| rng.random_range(0.15..0.85)).collect())
        .collect();
    let mut pixels = Vec::with_capacity(n * pixels_per);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let label = i % spec.classes;
        labels.push(label);
        for j in 0..pixels_per {
            let z: f64 = StandardNormal.sample(rng);
            pixels.push((templates[label][j] + z * spec.noise).clamp(0.0, 1.0));
        }
    }
    Dataset::new(Tensor::new(&[n, c, h, w], pixels)?, labels, spec.classes)
}

// --- splitting and batching -------------------------------------------------

/// Seeded shuffle-split: the first part gets `floor(n * fraction)` samples.
/// Errors when either side would be empty.
pub fn split(data: &Dataset, fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    let n = data.len();
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::Config(format!(
            "split fraction must lie in [0, 1], got {fraction}"
        )));
    }
    let n_a = (n as f64 * fraction).floor() as usize;
    if n_a == 0 || n_a == n {
        return Err(Error::DegenerateSplit {
            samples: n,
            fraction,
        });
    }
    let mut indices: Vec<usize> = (0..n).collect();
    indices.shuffle(&mut ChaCha20Rng::seed_from_u64(seed));
    let (ia, ib) = indices.split_at(n_a);
    let (im_a, lb_a) = data.batch(ia)?;
    let (im_b, lb_b) = data.batch(ib)?;
    // Both sides keep the parent's class count even if a class is absent.
    Ok((
        Dataset {
            images: im_a,
            labels: lb_a,
            classes: data.classes,
        },
        Dataset {
            images: im_b,
            labels: lb_b,
            classes: data.classes,
        },
    ))
}

/// Seeded Fisher–Yates shuffle of `0..n` chopped into batches; the last
/// batch may be short. Every sample appears exactly once.
pub fn batch_indices(n: usize, batch_size: usize, seed: u64) -> Vec<Vec<usize>> {
    assert!(batch_size >= 1, "batch size must be >= 1");
    let mut indices: Vec<usize> = (0..n).collect();
    indices.shuffle(&mut ChaCha20Rng::seed_from_u64(seed));
    indices.chunks(batch_size).map(<[usize]>::to_vec).collect()
}

/// Materialised shuffled batches of `(images, labels)`.
pub fn batches<'a>(
    data: &'a Dataset,
    batch_size: usize,
    seed: u64,
) -> impl Iterator<Item = (Tensor, Vec<usize>)> + 'a {
    batch_indices(data.len(), batch_size, seed)
        .into_iter()
        .map(move |idx| data.batch(&idx).expect("indices in range by construction"))
}
