//! ModelNet ingestion: OFF mesh parsing, surface sampling into a binary
//! cache, augmentation, and batch iteration.
//!
//! The pipeline is: scan the raw `class/split/file.off` tree into a
//! [`Manifest`], sample every mesh once into a [`Cache`] (normalized unit
//! sphere clouds with labels), then stream shuffled, freshly augmented
//! batches out of the cache each epoch. All randomness is derived from
//! explicit seeds; per-sample streams depend only on
//! `(seed, epoch, sample index)` so order of processing never matters.

mod batch;
mod cache;
mod off;

pub use batch::{
    augment, batch_iter, batch_iter_slice, stratified_indices, AugmentConfig, Batch, BatchIter,
};
pub use cache::{
    build_cache, build_cache_from_manifest, read_cache, scan_modelnet, write_cache, BuildSummary,
    Cache, Manifest, ManifestEntry, CACHE_MAGIC, CACHE_VERSION,
};
pub use off::{parse_off, ParsedOff};

/// Which side of the train/test divide a sample belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn dir_name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.dir_name())
    }
}

/// splitmix64 finalizer: cheap, well-mixed 64-bit hash.
fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E3779B97F4A7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

/// Derives an independent RNG seed from a base seed and two stream labels
/// (typically epoch and sample index). Distinct labels give uncorrelated
/// ChaCha streams regardless of evaluation order or parallelism.
pub(crate) fn derive_seed(base: u64, a: u64, b: u64) -> u64 {
    splitmix64(splitmix64(splitmix64(base) ^ a) ^ b)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derived_seeds_do_not_collide_on_small_labels() {
        let mut seen = std::collections::HashSet::new();
        for epoch in 0..10u64 {
            for idx in 0..100u64 {
                assert!(seen.insert(derive_seed(42, epoch, idx)));
            }
        }
        // Stable across calls.
        assert_eq!(derive_seed(42, 3, 7), derive_seed(42, 3, 7));
        assert_ne!(derive_seed(42, 3, 7), derive_seed(43, 3, 7));
    }
}
