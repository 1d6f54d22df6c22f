//! Uniform surface sampling of triangle meshes.

use super::{PointCloud, TriangleMesh};
use crate::error::{Error, Result};
use rand::Rng;

fn triangle_area(a: &[f64; 3], b: &[f64; 3], c: &[f64; 3]) -> f64 {
    let u = [b[0] - a[0], b[1] - a[1], b[2] - a[2]];
    let v = [c[0] - a[0], c[1] - a[1], c[2] - a[2]];
    let cx = u[1] * v[2] - u[2] * v[1];
    let cy = u[2] * v[0] - u[0] * v[2];
    let cz = u[0] * v[1] - u[1] * v[0];
    0.5 * (cx * cx + cy * cy + cz * cz).sqrt()
}

/// Draws `n` points with probability proportional to triangle area and
/// uniform position within each triangle (folded barycentric sampling).
///
/// Per sample the generator is consumed in a fixed order — one draw to pick
/// the triangle, two for the barycentric coordinates — so a seeded generator
/// reproduces the cloud exactly.
pub fn sample_surface(mesh: &TriangleMesh, n: usize, rng: &mut impl Rng) -> Result<PointCloud> {
    if n == 0 {
        return Err(Error::Invalid("cannot sample zero points".into()));
    }
    let mut cumulative = Vec::with_capacity(mesh.faces.len());
    let mut total = 0.0;
    for f in &mesh.faces {
        let [a, b, c] = [
            &mesh.vertices[f[0] as usize],
            &mesh.vertices[f[1] as usize],
            &mesh.vertices[f[2] as usize],
        ];
        total += triangle_area(a, b, c);
        cumulative.push(total);
    }
    if !(total > 0.0) {
        return Err(Error::Degenerate(
            "mesh has zero total surface area".into(),
        ));
    }
    let mut points = Vec::with_capacity(n);
    for _ in 0..n {
        let target = rng.gen::<f64>() * total;
        let t = cumulative.partition_point(|&cum| cum <= target);
        let t = t.min(mesh.faces.len() - 1);
        let f = &mesh.faces[t];
        let [a, b, c] = [
            &mesh.vertices[f[0] as usize],
            &mesh.vertices[f[1] as usize],
            &mesh.vertices[f[2] as usize],
        ];
        let mut r1 = rng.gen::<f64>();
        let mut r2 = rng.gen::<f64>();
        if r1 + r2 > 1.0 {
            // Fold the upper half of the unit square back onto the triangle;
            // area-preserving, so the distribution stays uniform.
            r1 = 1.0 - r1;
            r2 = 1.0 - r2;
        }
        points.push([
            a[0] + r1 * (b[0] - a[0]) + r2 * (c[0] - a[0]),
            a[1] + r1 * (b[1] - a[1]) + r2 * (c[1] - a[1]),
            a[2] + r1 * (b[2] - a[2]) + r2 * (c[2] - a[2]),
        ]);
    }
    PointCloud::new(points, None)
}
