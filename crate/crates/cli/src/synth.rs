//! Deterministic synthetic clouds.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use raht_core::geometry::morton_encode;
use raht_core::PointCloud;

/// Peak amplitude of the uniform noise added to the smooth field.
pub const NOISE: f64 = 1.0;

/// Smooth cubic RGB field over the unit cube, values in [30, 210].
pub fn smooth_color(u: [f64; 3]) -> [f64; 3] {
    let [x, y, z] = u;
    [
        30.0 + 120.0 * (x * (1.0 - y) + 0.5 * z * z),
        30.0 + 120.0 * (y + 2.0 * x * (1.0 - x) * z),
        30.0 + 180.0 * (1.0 - z) * x * x,
    ]
}

fn colored(depth: u32, voxels: impl IntoIterator<Item = [u32; 3]>, rng: &mut ChaCha8Rng) -> PointCloud {
    let side = f64::from(1u32 << depth);
    let mut pos = Vec::new();
    let mut attrs = Vec::new();
    for v in voxels {
        let u = v.map(|c| (f64::from(c) + 0.5) / side);
        pos.push(v);
        for c in smooth_color(u) {
            attrs.push(c + rng.random_range(-NOISE..=NOISE));
        }
    }
    PointCloud::from_voxels(depth, pos, attrs, 3).expect("voxels inside the grid")
}

/// Surface samples collected until `target` distinct voxels are reached
/// (or the surface runs out).
fn surface<F: FnMut(&mut ChaCha8Rng) -> [f64; 3]>(target: usize, depth: u32, seed: u64, mut sample: F) -> PointCloud {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let side = f64::from(1u32 << depth);
    let max = (1u32 << depth) - 1;
    let mut set = BTreeMap::new();
    let mut misses = 0usize;
    while set.len() < target && misses < 50 * target + 1000 {
        let p = sample(&mut rng);
        let v = p.map(|c| ((c * side).floor().max(0.0) as u32).min(max));
        if set.insert(morton_encode(v), v).is_some() {
            misses += 1;
        }
    }
    colored(depth, set.into_values(), &mut rng)
}

/// Sphere of radius 0.45 centred in the grid.
pub fn sphere(target: usize, depth: u32, seed: u64) -> PointCloud {
    surface(target, depth, seed, |rng| {
        let z: f64 = rng.random_range(-1.0..1.0);
        let t: f64 = rng.random_range(0.0..2.0 * PI);
        let r = (1.0 - z * z).sqrt();
        [0.5 + 0.45 * r * t.cos(), 0.5 + 0.45 * r * t.sin(), 0.5 + 0.45 * z]
    })
}

/// Torus with radii 0.3 and 0.12 in the xy plane.
pub fn torus(target: usize, depth: u32, seed: u64) -> PointCloud {
    surface(target, depth, seed, |rng| {
        let a: f64 = rng.random_range(0.0..2.0 * PI);
        let b: f64 = rng.random_range(0.0..2.0 * PI);
        let r = 0.3 + 0.12 * b.cos();
        [0.5 + r * a.cos(), 0.5 + r * a.sin(), 0.5 + 0.12 * b.sin()]
    })
}

/// `n` uniform voxel draws (duplicates merged) with uniform attributes in [0, 255).
pub fn uniform(n: usize, depth: u32, channels: usize, seed: u64) -> PointCloud {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let side = 1u32 << depth;
    let pos: Vec<[u32; 3]> = (0..n)
        .map(|_| [rng.random_range(0..side), rng.random_range(0..side), rng.random_range(0..side)])
        .collect();
    let attrs = (0..n * channels).map(|_| rng.random_range(0.0..255.0)).collect();
    PointCloud::from_voxels(depth, pos, attrs, channels).expect("voxels inside the grid")
}

/// Resolves `sphere`, `torus` or `uniform` with an optional `:count` suffix.
pub fn builtin(spec: &str, depth: u32) -> Option<PointCloud> {
    let (name, count) = match spec.split_once(':') {
        Some((n, c)) => (n, c.parse().ok()?),
        None => (spec, 10_000),
    };
    match name {
        "sphere" => Some(sphere(count, depth, 1)),
        "torus" => Some(torus(count, depth, 1)),
        "uniform" => Some(uniform(count, depth, 3, 1)),
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sphere_is_deterministic_and_sized() {
        let a = sphere(2000, 6, 7);
        let b = sphere(2000, 6, 7);
        assert_eq!(a, b);
        assert_eq!(a.len(), 2000);
        assert_eq!(a.channels, 3);
    }

    #[test]
    fn builtin_names() {
        assert_eq!(builtin("torus:300", 5).unwrap().len(), 300);
        assert!(builtin("cube", 5).is_none());
    }
}
