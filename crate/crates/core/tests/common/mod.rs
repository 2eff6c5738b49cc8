#![allow(dead_code)]

use econsg_core::splat::{RenderOutput, ALPHA_MAX};
use econsg_core::{CameraPose, GaussianCloud};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random cloud of `n` Gaussians in front of an identity camera looking down +z.
pub fn random_cloud(rng: &mut ChaCha8Rng, n: usize, feature_dim: usize, extent: f32) -> GaussianCloud {
    let mut c = GaussianCloud::with_capacity(n, feature_dim);
    for _ in 0..n {
        let z = rng.random_range(1.5f32..3.0);
        let mean = [rng.random_range(-extent..extent) * z, rng.random_range(-extent..extent) * z, z];
        let q = [rng.random_range(-1.0f32..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
        let ls = [rng.random_range(-2.6f32..-1.6), rng.random_range(-2.6..-1.6), rng.random_range(-2.6..-1.6)];
        let logit = rng.random_range(-1.0f32..2.0);
        let color = [rng.random_range(0.0f32..1.0), rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)];
        let f: Vec<f32> = (0..feature_dim).map(|_| rng.random_range(-1.0f32..1.0)).collect();
        c.push(mean, q, ls, logit, color, &f);
    }
    c.normalize_rotations();
    c
}

pub fn camera(size: u32, focal: f32) -> CameraPose {
    let c = (size as f32 - 1.0) * 0.5;
    CameraPose::identity(focal, focal, c, c, size, size)
}

/// Which Gaussians touch each pixel and whether their alpha was clamped.
pub fn signature(out: &RenderOutput) -> Vec<Vec<(u32, bool)>> {
    let mut sig = Vec::new();
    for y in 0..out.height() {
        for x in 0..out.width() {
            sig.push(out.contributions(x, y).iter().map(|c| (c.gaussian, c.alpha == ALPHA_MAX)).collect());
        }
    }
    sig
}

/// Depth along the pixel ray to the unit-sphere intersection nearest `near`,
/// solved in closed form in f64.
pub fn unit_sphere_depth(cam: &CameraPose, x: usize, y: usize, near: f32) -> Option<f64> {
    let d = [(x as f64 - cam.cx as f64) / cam.fx as f64, (y as f64 - cam.cy as f64) / cam.fy as f64, 1.0];
    // Camera centre c solves R·c + t = 0; ray point at depth z is c + z·Rᵀ·d.
    let r = cam.rotation.map(|row| row.map(|v| v as f64));
    let t = cam.translation.map(|v| v as f64);
    let rt = |v: [f64; 3]| -> [f64; 3] { std::array::from_fn(|j| (0..3).map(|i| r[i][j] * v[i]).sum()) };
    let c = rt(t).map(|v| -v);
    let w = rt(d);
    let dot = |a: [f64; 3], b: [f64; 3]| a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
    let (a, b, cc) = (dot(w, w), 2.0 * dot(c, w), dot(c, c) - 1.0);
    let disc = b * b - 4.0 * a * cc;
    if disc < 0.0 {
        return None;
    }
    let roots = [(-b - disc.sqrt()) / (2.0 * a), (-b + disc.sqrt()) / (2.0 * a)];
    roots.into_iter().filter(|z| *z > 0.0).min_by(|p, q| (p - near as f64).abs().total_cmp(&(q - near as f64).abs()))
}
