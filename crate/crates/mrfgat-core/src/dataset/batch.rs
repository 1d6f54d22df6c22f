//! Training-time augmentation and batch iteration over a sample cache.
//!
//! Augmentation follows the usual aligned-CAD recipe: rotate about the up
//! (z) axis, scale uniformly, then jitter every coordinate with clipped
//! Gaussian noise — fresh draws every epoch, never baked into the cache.
//! Every random stream is derived from `(seed, epoch, sample index)`, so
//! batches are reproducible no matter how or where samples are processed.

use crate::autodiff::Tensor;
use crate::dataset::{derive_seed, Cache, Split};
use crate::error::{Error, Result};
use crate::geometry::PointCloud;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

/// Stream label reserved for the epoch shuffle (sample streams use the
/// sample index, which never reaches u64::MAX).
const SHUFFLE_STREAM: u64 = u64::MAX;
/// Stream label base for stratified subset draws, one per class.
const STRATA_STREAM: u64 = u64::MAX - 1;

/// What [`augment`] applies, in order: rotation, scale, jitter.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentConfig {
    /// Rotate about the up (z) axis by an angle uniform in `[0, 2π)`.
    pub rotate: bool,
    /// Uniform scale factor range `[low, high]`.
    pub scale_low: f64,
    pub scale_high: f64,
    /// Standard deviation of the per-coordinate Gaussian jitter.
    pub jitter_sigma: f64,
    /// Each jitter draw is clamped to `±clip`.
    pub jitter_clip: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            rotate: true,
            scale_low: 0.8,
            scale_high: 1.25,
            jitter_sigma: 0.01,
            jitter_clip: 0.05,
        }
    }
}

impl AugmentConfig {
    /// No-op configuration: every sample passes through unchanged.
    pub fn identity() -> Self {
        Self {
            rotate: false,
            scale_low: 1.0,
            scale_high: 1.0,
            jitter_sigma: 0.0,
            jitter_clip: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.scale_low > 0.0 && self.scale_low <= self.scale_high) {
            return Err(Error::Invalid(format!(
                "scale range [{}, {}] must satisfy 0 < low <= high",
                self.scale_low, self.scale_high
            )));
        }
        if self.jitter_sigma < 0.0 || self.jitter_clip < 0.0 {
            return Err(Error::Invalid(format!(
                "jitter sigma {} and clip {} must be >= 0",
                self.jitter_sigma, self.jitter_clip
            )));
        }
        Ok(())
    }
}

/// Applies rotation → scale → clipped Gaussian jitter. Point count and
/// label are preserved; the draw order is fixed (angle, scale, then one
/// jitter triple per point) so a given RNG state yields one exact result.
pub fn augment(pc: &PointCloud, cfg: &AugmentConfig, rng: &mut ChaCha8Rng) -> Result<PointCloud> {
    cfg.validate()?;
    let mut points = pc.points.clone();
    if cfg.rotate {
        let angle = rng.gen::<f64>() * std::f64::consts::TAU;
        let (sin, cos) = angle.sin_cos();
        for p in &mut points {
            let (x, y) = (p[0], p[1]);
            p[0] = x * cos - y * sin;
            p[1] = x * sin + y * cos;
        }
    }
    let scale = if cfg.scale_low < cfg.scale_high {
        cfg.scale_low + (cfg.scale_high - cfg.scale_low) * rng.gen::<f64>()
    } else {
        cfg.scale_low
    };
    if scale != 1.0 {
        for p in &mut points {
            for c in p.iter_mut() {
                *c *= scale;
            }
        }
    }
    if cfg.jitter_sigma > 0.0 {
        let normal = Normal::new(0.0, cfg.jitter_sigma)
            .map_err(|e| Error::Invalid(format!("jitter sigma: {e}")))?;
        for p in &mut points {
            for c in p.iter_mut() {
                let noise: f64 = normal.sample(rng);
                *c += noise.clamp(-cfg.jitter_clip, cfg.jitter_clip);
            }
        }
    }
    PointCloud::new(points, pc.label)
}

/// One mini-batch: clouds plus their labels, in batch order.
#[derive(Debug, Clone)]
pub struct Batch {
    pub clouds: Vec<PointCloud>,
    pub labels: Vec<u32>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.clouds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clouds.is_empty()
    }

    /// Stacked coordinates `[B, n, 3]`.
    pub fn points_tensor(&self) -> Result<Tensor> {
        let n = self.clouds[0].len();
        let mut data = Vec::with_capacity(self.clouds.len() * n * 3);
        for pc in &self.clouds {
            data.extend(pc.flat_coords());
        }
        Tensor::from_vec(vec![self.clouds.len(), n, 3], data)
    }
}

/// Deterministic batch stream over one split of a cache.
pub struct BatchIter<'a> {
    samples: &'a [PointCloud],
    order: Vec<u32>,
    pos: usize,
    batch_size: usize,
    seed_base: u64,
    epoch: u64,
    augment: Option<&'a AugmentConfig>,
}

/// Streams `(clouds, labels)` batches over `split`.
///
/// With a shuffle seed the order is a fresh deterministic permutation per
/// `(seed, epoch)`; without one, cache order is preserved. The final
/// partial batch is emitted. Augmentation (training only) draws each
/// sample's stream from `(seed, epoch, sample index)`.
pub fn batch_iter<'a>(
    cache: &'a Cache,
    split: Split,
    batch_size: usize,
    shuffle_seed: Option<u64>,
    epoch: u64,
    augment: Option<&'a AugmentConfig>,
) -> Result<BatchIter<'a>> {
    let samples = cache.split(split);
    if samples.is_empty() {
        return Err(Error::Invalid(format!("{split} split is empty")));
    }
    batch_iter_slice(samples, batch_size, shuffle_seed, epoch, augment)
}

/// [`batch_iter`] over an explicit sample slice (e.g. a stratified subset).
pub fn batch_iter_slice<'a>(
    samples: &'a [PointCloud],
    batch_size: usize,
    shuffle_seed: Option<u64>,
    epoch: u64,
    augment: Option<&'a AugmentConfig>,
) -> Result<BatchIter<'a>> {
    if batch_size == 0 {
        return Err(Error::Invalid("batch_size must be at least 1".into()));
    }
    if let Some(cfg) = augment {
        cfg.validate()?;
    }
    if samples.is_empty() {
        return Err(Error::Invalid("no samples to iterate".into()));
    }
    let mut order: Vec<u32> = (0..samples.len() as u32).collect();
    let seed_base = shuffle_seed.unwrap_or(0);
    if let Some(seed) = shuffle_seed {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, epoch, SHUFFLE_STREAM));
        order.shuffle(&mut rng);
    }
    Ok(BatchIter {
        samples,
        order,
        pos: 0,
        batch_size,
        seed_base,
        epoch,
        augment,
    })
}

impl BatchIter<'_> {
    /// Total number of batches this iterator will yield.
    pub fn num_batches(&self) -> usize {
        self.order.len().div_ceil(self.batch_size)
    }
}

impl Iterator for BatchIter<'_> {
    type Item = Batch;

    fn next(&mut self) -> Option<Batch> {
        if self.pos >= self.order.len() {
            return None;
        }
        let end = (self.pos + self.batch_size).min(self.order.len());
        let idxs = &self.order[self.pos..end];
        self.pos = end;
        let mut clouds = Vec::with_capacity(idxs.len());
        let mut labels = Vec::with_capacity(idxs.len());
        for &i in idxs {
            let pc = &self.samples[i as usize];
            let cloud = match self.augment {
                Some(cfg) => {
                    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(
                        self.seed_base,
                        self.epoch,
                        i as u64,
                    ));
                    augment(pc, cfg, &mut rng).expect("config validated at construction")
                }
                None => pc.clone(),
            };
            labels.push(pc.label.expect("cached clouds are labeled"));
            clouds.push(cloud);
        }
        Some(Batch { clouds, labels })
    }
}

/// Seeded stratified subset: per class, a deterministic shuffle keeps
/// `round(count·fraction)` samples (at least one per non-empty class).
/// Returns sorted positions into `labels`.
pub fn stratified_indices(
    labels: &[u32],
    num_classes: usize,
    fraction: f64,
    seed: u64,
) -> Result<Vec<usize>> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::Invalid(format!(
            "subset fraction {fraction} must be in (0, 1]"
        )));
    }
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); num_classes];
    for (i, &l) in labels.iter().enumerate() {
        if l as usize >= num_classes {
            return Err(Error::Invalid(format!(
                "label {l} out of range 0..{num_classes}"
            )));
        }
        by_class[l as usize].push(i);
    }
    let mut keep = Vec::new();
    for (c, mut idxs) in by_class.into_iter().enumerate() {
        if idxs.is_empty() {
            continue;
        }
        let take = ((idxs.len() as f64 * fraction).round() as usize).max(1);
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, c as u64, STRATA_STREAM));
        idxs.shuffle(&mut rng);
        keep.extend_from_slice(&idxs[..take.min(idxs.len())]);
    }
    keep.sort_unstable();
    Ok(keep)
}
