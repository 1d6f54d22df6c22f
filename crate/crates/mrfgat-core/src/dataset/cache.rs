//! Binary sample cache and the raw-tree manifest that feeds it.
//!
//! Cache byte layout (all integers and reals little-endian):
//!
//! ```text
//! magic      4 bytes  "MRFG"
//! version    u16      currently 1
//! points     u32      points per cloud (n)
//! train      u32      number of training records
//! test       u32      number of test records
//! classes    u32      number of classes (c)
//! label map  c ×      (u16 name length, UTF-8 name bytes)
//! records    (train + test) ×  (n×3 f64 coordinates, u32 class index)
//! ```
//!
//! Training records come first, then test records. Reads validate the
//! magic, version, label ranges, and exact file length, so a stale or
//! truncated cache fails loudly instead of feeding garbage downstream.

use crate::dataset::off::parse_off;
use crate::dataset::{derive_seed, Split};
use crate::error::{Error, Result};
use crate::geometry::{normalize_unit_sphere, sample_surface, PointCloud};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::fs;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

pub const CACHE_MAGIC: [u8; 4] = *b"MRFG";
pub const CACHE_VERSION: u16 = 1;

/// One raw mesh file queued for caching.
#[derive(Debug, Clone)]
pub struct ManifestEntry {
    pub path: PathBuf,
    pub class_name: String,
    pub class_index: u32,
    pub split: Split,
}

/// Deterministic listing of a raw ModelNet tree (`class/split/file.off`).
#[derive(Debug, Clone)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
    /// Sorted class names; `class_index` points into this list.
    pub class_names: Vec<String>,
}

impl Manifest {
    pub fn count(&self, split: Split) -> usize {
        self.entries.iter().filter(|e| e.split == split).count()
    }
}

/// Scans `root/class/split/*.off` into a manifest.
///
/// Classes are the subdirectories that contain a `train` or `test` folder,
/// indexed densely in sorted order; entries are sorted by (class, split,
/// file name) so the manifest is identical across machines.
pub fn scan_modelnet(root: &Path) -> Result<Manifest> {
    if !root.is_dir() {
        return Err(Error::Invalid(format!(
            "dataset root {} is not a directory",
            root.display()
        )));
    }
    let mut class_names = Vec::new();
    for entry in fs::read_dir(root)? {
        let entry = entry?;
        if !entry.file_type()?.is_dir() {
            continue;
        }
        let dir = entry.path();
        if dir.join("train").is_dir() || dir.join("test").is_dir() {
            class_names.push(entry.file_name().to_string_lossy().into_owned());
        }
    }
    class_names.sort();
    if class_names.is_empty() {
        return Err(Error::Invalid(format!(
            "no class/split directories under {}",
            root.display()
        )));
    }
    let mut entries = Vec::new();
    for (ci, name) in class_names.iter().enumerate() {
        for split in [Split::Train, Split::Test] {
            let dir = root.join(name).join(split.dir_name());
            if !dir.is_dir() {
                continue;
            }
            let mut files: Vec<PathBuf> = fs::read_dir(&dir)?
                .collect::<std::io::Result<Vec<_>>>()?
                .into_iter()
                .map(|e| e.path())
                .filter(|p| p.extension().is_some_and(|e| e == "off"))
                .collect();
            files.sort();
            for path in files {
                entries.push(ManifestEntry {
                    path,
                    class_name: name.clone(),
                    class_index: ci as u32,
                    split,
                });
            }
        }
    }
    Ok(Manifest {
        entries,
        class_names,
    })
}

/// In-memory form of the sample cache: unit-sphere clouds with labels.
#[derive(Debug, Clone)]
pub struct Cache {
    pub points_per_cloud: u32,
    pub class_names: Vec<String>,
    pub train: Vec<PointCloud>,
    pub test: Vec<PointCloud>,
}

impl Cache {
    pub fn split(&self, split: Split) -> &[PointCloud] {
        match split {
            Split::Train => &self.train,
            Split::Test => &self.test,
        }
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    /// Labels of one split, in cache order.
    pub fn labels(&self, split: Split) -> Vec<u32> {
        self.split(split)
            .iter()
            .map(|pc| pc.label.expect("cached clouds are labeled"))
            .collect()
    }
}

/// Per-class outcome of a cache build, plus any skipped files.
#[derive(Debug, Clone)]
pub struct BuildSummary {
    /// (class name, train records, test records), in class order.
    pub per_class: Vec<(String, usize, usize)>,
    /// Files that failed to parse or sample, with the reason.
    pub skipped: Vec<(PathBuf, String)>,
    /// Total degenerate faces dropped across all parsed meshes.
    pub dropped_faces: usize,
}

impl BuildSummary {
    pub fn total(&self, split: Split) -> usize {
        self.per_class
            .iter()
            .map(|(_, tr, te)| match split {
                Split::Train => *tr,
                Split::Test => *te,
            })
            .sum()
    }
}

/// Samples every manifest entry to `n_points`, normalizes to the unit
/// sphere, and assembles the cache. Deterministic per seed: each entry's
/// sampling stream depends only on `(seed, manifest position)`.
///
/// Unreadable or degenerate files are skipped and reported in the summary
/// rather than aborting a multi-thousand-file build.
pub fn build_cache_from_manifest(
    manifest: &Manifest,
    n_points: usize,
    seed: u64,
) -> Result<(Cache, BuildSummary)> {
    if n_points == 0 {
        return Err(Error::Invalid("n_points must be at least 1".into()));
    }
    let c = manifest.class_names.len();
    let mut cache = Cache {
        points_per_cloud: n_points as u32,
        class_names: manifest.class_names.clone(),
        train: Vec::new(),
        test: Vec::new(),
    };
    let mut summary = BuildSummary {
        per_class: manifest
            .class_names
            .iter()
            .map(|n| (n.clone(), 0, 0))
            .collect(),
        skipped: Vec::new(),
        dropped_faces: 0,
    };
    for (pos, entry) in manifest.entries.iter().enumerate() {
        debug_assert!((entry.class_index as usize) < c);
        let result = (|| -> Result<PointCloud> {
            let text = fs::read_to_string(&entry.path)?;
            let parsed = parse_off(&text)?;
            summary.dropped_faces += parsed.dropped_faces;
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, pos as u64, 0));
            let sampled = sample_surface(&parsed.mesh, n_points, &mut rng)?;
            let mut cloud = normalize_unit_sphere(&sampled)?;
            cloud.label = Some(entry.class_index);
            Ok(cloud)
        })();
        match result {
            Ok(cloud) => {
                let slot = &mut summary.per_class[entry.class_index as usize];
                match entry.split {
                    Split::Train => {
                        slot.1 += 1;
                        cache.train.push(cloud);
                    }
                    Split::Test => {
                        slot.2 += 1;
                        cache.test.push(cloud);
                    }
                }
            }
            Err(e) => summary.skipped.push((entry.path.clone(), e.to_string())),
        }
    }
    Ok((cache, summary))
}

/// Scans `raw_root`, builds the cache, and writes it to `out`.
pub fn build_cache(
    raw_root: &Path,
    out: &Path,
    n_points: usize,
    seed: u64,
) -> Result<BuildSummary> {
    let manifest = scan_modelnet(raw_root)?;
    let (cache, summary) = build_cache_from_manifest(&manifest, n_points, seed)?;
    write_cache(out, &cache)?;
    Ok(summary)
}

fn check_cloud(cache: &Cache, pc: &PointCloud, what: &str) -> Result<()> {
    if pc.len() != cache.points_per_cloud as usize {
        return Err(Error::dim(
            format!("{what} cloud size"),
            &[pc.len()],
            &[cache.points_per_cloud as usize],
        ));
    }
    match pc.label {
        Some(l) if (l as usize) < cache.class_names.len() => Ok(()),
        Some(l) => Err(Error::Invalid(format!(
            "{what} label {l} out of range 0..{}",
            cache.class_names.len()
        ))),
        None => Err(Error::Invalid(format!("{what} cloud has no label"))),
    }
}

/// Serializes the cache; see the module docs for the byte layout.
pub fn write_cache(path: &Path, cache: &Cache) -> Result<()> {
    for pc in &cache.train {
        check_cloud(cache, pc, "train")?;
    }
    for pc in &cache.test {
        check_cloud(cache, pc, "test")?;
    }
    let file = fs::File::create(path)?;
    let mut w = BufWriter::new(file);
    w.write_all(&CACHE_MAGIC)?;
    w.write_all(&CACHE_VERSION.to_le_bytes())?;
    w.write_all(&cache.points_per_cloud.to_le_bytes())?;
    w.write_all(&(cache.train.len() as u32).to_le_bytes())?;
    w.write_all(&(cache.test.len() as u32).to_le_bytes())?;
    w.write_all(&(cache.class_names.len() as u32).to_le_bytes())?;
    for name in &cache.class_names {
        let bytes = name.as_bytes();
        if bytes.len() > u16::MAX as usize {
            return Err(Error::Invalid(format!("class name too long: {name:?}")));
        }
        w.write_all(&(bytes.len() as u16).to_le_bytes())?;
        w.write_all(bytes)?;
    }
    for pc in cache.train.iter().chain(&cache.test) {
        for p in &pc.points {
            for &coord in p {
                w.write_all(&coord.to_le_bytes())?;
            }
        }
        w.write_all(&pc.label.expect("checked above").to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

struct Section<'a, R> {
    inner: R,
    name: &'a str,
}

impl<R: Read> Section<'_, R> {
    fn bytes<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut buf = [0u8; N];
        self.inner.read_exact(&mut buf).map_err(|e| {
            if e.kind() == std::io::ErrorKind::UnexpectedEof {
                Error::Format(format!("cache truncated in {} section", self.name))
            } else {
                Error::Io(e)
            }
        })?;
        Ok(buf)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.bytes()?))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes()?))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.bytes()?))
    }
}

/// Reads a cache written by [`write_cache`], validating magic, version,
/// label ranges, and exact length.
pub fn read_cache(path: &Path) -> Result<Cache> {
    let file = fs::File::open(path)?;
    let mut r = Section {
        inner: BufReader::new(file),
        name: "header",
    };
    let magic: [u8; 4] = r.bytes()?;
    if magic != CACHE_MAGIC {
        return Err(Error::Format(format!(
            "not a sample cache: magic {magic:?} (expected {CACHE_MAGIC:?})"
        )));
    }
    let version = r.u16()?;
    if version != CACHE_VERSION {
        return Err(Error::Format(format!(
            "unsupported cache version {version} (this build reads {CACHE_VERSION})"
        )));
    }
    let points = r.u32()?;
    let train_count = r.u32()? as usize;
    let test_count = r.u32()? as usize;
    let class_count = r.u32()? as usize;

    r.name = "label map";
    let mut class_names = Vec::with_capacity(class_count);
    for _ in 0..class_count {
        let len = r.u16()? as usize;
        let mut buf = vec![0u8; len];
        r.inner.read_exact(&mut buf).map_err(|_| {
            Error::Format("cache truncated in label map section".into())
        })?;
        class_names.push(String::from_utf8(buf).map_err(|e| {
            Error::Format(format!("label map is not UTF-8: {e}"))
        })?);
    }

    r.name = "records";
    let mut read_split = |count: usize, split: &str| -> Result<Vec<PointCloud>> {
        let mut clouds = Vec::with_capacity(count);
        for i in 0..count {
            let mut pts = Vec::with_capacity(points as usize);
            for _ in 0..points {
                pts.push([r.f64()?, r.f64()?, r.f64()?]);
            }
            let label = r.u32()?;
            if label as usize >= class_count {
                return Err(Error::Format(format!(
                    "{split} record {i}: label {label} out of range 0..{class_count}"
                )));
            }
            clouds.push(PointCloud::new(pts, Some(label))?);
        }
        Ok(clouds)
    };
    let train = read_split(train_count, "train")?;
    let test = read_split(test_count, "test")?;

    let mut extra = [0u8; 1];
    if r.inner.read(&mut extra)? != 0 {
        return Err(Error::Format(
            "trailing bytes after the last cache record".into(),
        ));
    }
    Ok(Cache {
        points_per_cloud: points,
        class_names,
        train,
        test,
    })
}
