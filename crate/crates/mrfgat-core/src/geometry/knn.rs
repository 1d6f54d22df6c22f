//! Exact k-nearest-neighbor graph construction, brute force and k-d tree.
//!
//! Both backends follow the same contract: self occupies column 0 of every
//! row, the remaining `k − 1` entries are the nearest other points in
//! ascending `(squared distance, point index)` order, and edge vectors are
//! `p_i − p_ij`. The lexicographic tie rule makes the two backends
//! bit-for-bit comparable even on degenerate clouds full of duplicates.

use super::{dist2, NeighborGraph, PointCloud};
use crate::error::{Error, Result};
use std::cmp::Ordering;
use std::collections::BinaryHeap;

/// Candidate neighbor ordered by `(d2, idx)`; the heap keeps the worst on
/// top. Distances are finite by the `PointCloud` invariant, so the total
/// order is sound.
#[derive(Clone, Copy, PartialEq)]
struct Cand {
    d2: f64,
    idx: u32,
}

impl Eq for Cand {}

impl Ord for Cand {
    fn cmp(&self, other: &Self) -> Ordering {
        self.d2
            .partial_cmp(&other.d2)
            .expect("finite distances")
            .then(self.idx.cmp(&other.idx))
    }
}

impl PartialOrd for Cand {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

fn check_k(pc: &PointCloud, k: usize) -> Result<()> {
    if k < 1 || k > pc.len() {
        return Err(Error::Invalid(format!(
            "k = {k} outside 1..={} for this cloud",
            pc.len()
        )));
    }
    Ok(())
}

fn assemble(pc: &PointCloud, k: usize, rows: Vec<Vec<Cand>>) -> NeighborGraph {
    let n = pc.len();
    let mut indices = Vec::with_capacity(n * k);
    let mut edges = Vec::with_capacity(n * k * 3);
    for (i, row) in rows.into_iter().enumerate() {
        indices.push(i as u32);
        edges.extend_from_slice(&[0.0, 0.0, 0.0]);
        let p = pc.points[i];
        for c in row {
            indices.push(c.idx);
            let q = pc.points[c.idx as usize];
            edges.extend_from_slice(&[p[0] - q[0], p[1] - q[1], p[2] - q[2]]);
        }
    }
    NeighborGraph { k, indices, edges }
}

/// Exact kNN by scanning all pairs.
pub fn knn_graph_bruteforce(pc: &PointCloud, k: usize) -> Result<NeighborGraph> {
    check_k(pc, k)?;
    let n = pc.len();
    let mut rows = Vec::with_capacity(n);
    let mut cands: Vec<Cand> = Vec::with_capacity(n - 1);
    for i in 0..n {
        cands.clear();
        let p = &pc.points[i];
        for (j, q) in pc.points.iter().enumerate() {
            if j != i {
                cands.push(Cand {
                    d2: dist2(p, q),
                    idx: j as u32,
                });
            }
        }
        let take = k - 1;
        if take > 0 && take < cands.len() {
            cands.select_nth_unstable(take - 1);
        }
        let mut row = cands[..take.min(cands.len())].to_vec();
        row.sort_unstable();
        rows.push(row);
    }
    Ok(assemble(pc, k, rows))
}

/// Static 3D k-d tree over a cloud; median split, axis cycling with depth.
struct KdTree<'a> {
    points: &'a [[f64; 3]],
    /// Permutation of point indices arranged so each subtree's median sits
    /// at the middle of its range.
    order: Vec<u32>,
}

impl<'a> KdTree<'a> {
    fn build(points: &'a [[f64; 3]]) -> Self {
        let mut order: Vec<u32> = (0..points.len() as u32).collect();
        build_range(points, &mut order, 0);
        KdTree { points, order }
    }

    fn query(&self, q: &[f64; 3], skip: u32, count: usize, heap: &mut BinaryHeap<Cand>) {
        heap.clear();
        if count == 0 {
            return;
        }
        self.search(&self.order, 0, q, skip, count, heap);
    }

    fn search(
        &self,
        range: &[u32],
        depth: usize,
        q: &[f64; 3],
        skip: u32,
        count: usize,
        heap: &mut BinaryHeap<Cand>,
    ) {
        if range.is_empty() {
            return;
        }
        let mid = range.len() / 2;
        let idx = range[mid];
        let p = &self.points[idx as usize];
        if idx != skip {
            let cand = Cand {
                d2: dist2(q, p),
                idx,
            };
            if heap.len() < count {
                heap.push(cand);
            } else if cand < *heap.peek().expect("non-empty") {
                heap.pop();
                heap.push(cand);
            }
        }
        let axis = depth % 3;
        let delta = q[axis] - p[axis];
        let (near, far) = if delta < 0.0 {
            (&range[..mid], &range[mid + 1..])
        } else {
            (&range[mid + 1..], &range[..mid])
        };
        self.search(near, depth + 1, q, skip, count, heap);
        // The far half-space can only contain a better candidate when the
        // splitting plane is not strictly farther than the current worst;
        // on equality it must still be explored because a tied distance
        // with a lower index wins.
        if heap.len() < count || delta * delta <= heap.peek().expect("non-empty").d2 {
            self.search(far, depth + 1, q, skip, count, heap);
        }
    }
}

fn build_range(points: &[[f64; 3]], range: &mut [u32], depth: usize) {
    if range.len() <= 1 {
        return;
    }
    let axis = depth % 3;
    let mid = range.len() / 2;
    // Total order on (coordinate, index) keeps the construction
    // deterministic even with duplicate coordinates.
    range.select_nth_unstable_by(mid, |&a, &b| {
        points[a as usize][axis]
            .partial_cmp(&points[b as usize][axis])
            .expect("finite coordinates")
            .then(a.cmp(&b))
    });
    let (left, rest) = range.split_at_mut(mid);
    build_range(points, left, depth + 1);
    build_range(points, &mut rest[1..], depth + 1);
}

/// Exact kNN through a k-d tree; result is identical to
/// [`knn_graph_bruteforce`], including the tie rule.
pub fn knn_graph_indexed(pc: &PointCloud, k: usize) -> Result<NeighborGraph> {
    check_k(pc, k)?;
    let n = pc.len();
    let tree = KdTree::build(&pc.points);
    let mut rows = Vec::with_capacity(n);
    let mut heap = BinaryHeap::with_capacity(k);
    for i in 0..n {
        tree.query(&pc.points[i], i as u32, k - 1, &mut heap);
        let mut row: Vec<Cand> = heap.iter().copied().collect();
        row.sort_unstable();
        rows.push(row);
    }
    Ok(assemble(pc, k, rows))
}
