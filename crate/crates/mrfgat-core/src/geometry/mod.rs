//! Point-cloud preprocessing and directed k-nearest-neighbor graphs.
//!
//! Clouds are plain `[f64; 3]` buffers with an optional class label. The
//! neighbor graph keeps self first in every row and stores edge vectors
//! `p_i − p_ij` alongside the indices, which is exactly the layout the
//! attention layers consume.

mod knn;
mod sample;

pub use knn::{knn_graph_bruteforce, knn_graph_indexed};
pub use sample::sample_surface;

use crate::error::{Error, Result};

/// A point cloud of `N ≥ 1` finite 3D coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    pub points: Vec<[f64; 3]>,
    pub label: Option<u32>,
}

impl PointCloud {
    pub fn new(points: Vec<[f64; 3]>, label: Option<u32>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::Invalid("point cloud with zero points".into()));
        }
        if let Some(p) = points
            .iter()
            .find(|p| !p.iter().all(|c| c.is_finite()))
        {
            return Err(Error::NonFinite(format!(
                "point cloud contains non-finite coordinate {p:?}"
            )));
        }
        Ok(Self { points, label })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Flat row-major `[N, 3]` copy of the coordinates.
    pub fn flat_coords(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.points.len() * 3);
        for p in &self.points {
            out.extend_from_slice(p);
        }
        out
    }
}

/// Triangle mesh as read from model files.
#[derive(Debug, Clone, PartialEq)]
pub struct TriangleMesh {
    pub vertices: Vec<[f64; 3]>,
    pub faces: Vec<[u32; 3]>,
}

/// Directed kNN graph: `k` neighbors per point, self included at column 0.
///
/// `indices` is row-major `[N, k]`; `edges` is row-major `[N, k, 3]` holding
/// `p_i − p_ij`, so `edges[i][0]` is always the zero vector.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborGraph {
    pub k: usize,
    pub indices: Vec<u32>,
    pub edges: Vec<f64>,
}

impl NeighborGraph {
    pub fn num_points(&self) -> usize {
        if self.k == 0 {
            0
        } else {
            self.indices.len() / self.k
        }
    }

    pub fn row_indices(&self, i: usize) -> &[u32] {
        &self.indices[i * self.k..(i + 1) * self.k]
    }

    pub fn edge(&self, i: usize, j: usize) -> [f64; 3] {
        let base = (i * self.k + j) * 3;
        [
            self.edges[base],
            self.edges[base + 1],
            self.edges[base + 2],
        ]
    }

    /// Absolute coordinates of every neighbor, flat `[N, k, 3]` — the
    /// `p_ij` inputs of the attention layer's neighbor transform.
    pub fn neighbor_positions(&self, pc: &PointCloud) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.indices.len() * 3);
        for &idx in &self.indices {
            out.extend_from_slice(&pc.points[idx as usize]);
        }
        out
    }
}

/// Centers the cloud on its centroid and scales the farthest point onto the
/// unit sphere.
pub fn normalize_unit_sphere(pc: &PointCloud) -> Result<PointCloud> {
    let n = pc.len() as f64;
    let mut centroid = [0.0f64; 3];
    for p in &pc.points {
        for a in 0..3 {
            centroid[a] += p[a];
        }
    }
    for c in &mut centroid {
        *c /= n;
    }
    let mut max_norm: f64 = 0.0;
    for p in &pc.points {
        let d2: f64 = (0..3).map(|a| (p[a] - centroid[a]).powi(2)).sum();
        max_norm = max_norm.max(d2.sqrt());
    }
    if max_norm == 0.0 {
        return Err(Error::Degenerate(
            "cannot normalize: all points identical".into(),
        ));
    }
    let points = pc
        .points
        .iter()
        .map(|p| {
            [
                (p[0] - centroid[0]) / max_norm,
                (p[1] - centroid[1]) / max_norm,
                (p[2] - centroid[2]) / max_norm,
            ]
        })
        .collect();
    Ok(PointCloud {
        points,
        label: pc.label,
    })
}

/// Squared Euclidean distance; the single definition both kNN backends use,
/// so their comparisons are bit-identical.
pub(crate) fn dist2(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}
