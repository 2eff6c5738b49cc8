//! Seeded numeric suites shared by the integration tests and the acceptance
//! runner. Each returns an [`Outcome`] instead of asserting.

#![allow(dead_code)]

use std::time::Instant;

use econsg_core::autoencoder::{ae_loss, MlpParams};
use econsg_core::geometry::{backproject_pixel, project_point, Pixel};
use econsg_core::splat::{render, render_backward, CloudGrad, ImageGrad, RenderMode, RenderOutput};
use econsg_core::synth::naive_render;
use econsg_core::training::{scene_loss, Supervision, TrainConfig};
use econsg_core::{CameraPose, GaussianCloud, Raster, IGNORE_LABEL};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::common;

/// Worst error over `checks` comparisons; `failure` describes the first
/// comparison beyond tolerance.
#[derive(Debug, Clone, Default)]
pub struct Outcome {
    pub checks: usize,
    pub worst: f64,
    pub failure: Option<String>,
    pub seconds: f64,
}

impl Outcome {
    fn record(&mut self, err: f64, tol: f64, what: impl FnOnce() -> String) {
        self.checks += 1;
        // NaN errors count as failures.
        if !(err <= self.worst) {
            self.worst = if err.is_nan() { f64::INFINITY } else { err };
        }
        if !(err <= tol) && self.failure.is_none() {
            self.failure = Some(what());
        }
    }

    pub fn passed(&self, min_checks: usize) -> bool {
        self.failure.is_none() && self.checks >= min_checks
    }
}

/// Up to 32 Gaussians on a 16×16 image, a few nearly opaque so that clamping
/// and early termination are exercised.
pub fn raster_case(seed: u64) -> (GaussianCloud, CameraPose) {
    let mut r = common::rng(0xe9_0000 + seed);
    let n = r.random_range(1..=32);
    let d = r.random_range(1..=6);
    let mut cloud = common::random_cloud(&mut r, n, d, 0.35);
    for logit in cloud.opacity_logits.iter_mut() {
        if r.random_bool(0.25) {
            *logit = r.random_range(4.0..8.0);
        }
    }
    for ls in cloud.log_scales.iter_mut() {
        if r.random_bool(0.2) {
            *ls = [-1.2, -1.0, -1.4];
        }
    }
    (cloud, common::camera(16, r.random_range(12.0..24.0)))
}

pub const RASTER_CASES: u64 = 200;

fn max_abs(a: &[f32], b: &[f32]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs() as f64).fold(0.0, f64::max)
}

pub fn max_render_diff(a: &RenderOutput, b: &RenderOutput) -> f64 {
    max_abs(&a.color.data, &b.color.data).max(max_abs(&a.features.data, &b.features.data)).max(max_abs(&a.alpha.data, &b.alpha.data))
}

/// Tiled renderer against the all-Gaussians reference, max abs difference.
pub fn rasterizer_equivalence() -> Outcome {
    let start = Instant::now();
    let mut o = Outcome::default();
    for seed in 0..RASTER_CASES {
        let (cloud, cam) = raster_case(seed);
        let diff = max_render_diff(&render(&cloud, &cam, RenderMode::Both), &naive_render(&cloud, &cam, RenderMode::Both));
        o.record(diff, 1e-5, || format!("case {seed}: max abs difference {diff:e}"));
    }
    o.seconds = start.elapsed().as_secs_f64();
    o
}

/// Every pixel of the raster suite: weights in [0, 1], sum at most 1 + 1e-6
/// and equal to the alpha raster. `worst` is the largest excess over 1.
pub fn blend_weights() -> Outcome {
    let mut o = Outcome::default();
    for seed in 0..RASTER_CASES {
        let (cloud, cam) = raster_case(seed);
        let out = render(&cloud, &cam, RenderMode::Both);
        for y in 0..out.height() {
            for x in 0..out.width() {
                let ws: Vec<f64> = out.contributions(x, y).iter().map(|c| c.weight() as f64).collect();
                let sum: f64 = ws.iter().sum();
                let out_of_range = ws.iter().any(|w| !(0.0..=1.0).contains(w));
                let alpha_gap = (sum - out.alpha.get(x, y) as f64).abs();
                let bad = out_of_range || alpha_gap > 1e-5;
                let excess = if bad { f64::INFINITY } else { (sum - 1.0).max(0.0) };
                o.record(excess, 1e-6, || format!("case {seed} pixel ({x},{y}): weights {ws:?}, alpha {}", out.alpha.get(x, y)));
            }
        }
    }
    o
}

pub const GRAD_STEP: f32 = 1e-3;
pub const RENDER_GRAD_TOL: f64 = 1e-2;
/// Gradient magnitude below which f32 rounding of the rendered images
/// dominates a central difference at [`GRAD_STEP`].
pub const NOISE_FLOOR: f64 = 0.05;
pub const TENSORS: [&str; 6] = ["means", "rotations", "log_scales", "opacity_logits", "colors", "features"];

/// Linear probe `Σ color·gc + Σ feature·gf` and the contribution signature.
pub fn probe_loss(cloud: &GaussianCloud, cam: &CameraPose, gc: &[f32], gf: &[f32]) -> (f64, Vec<Vec<(u32, bool)>>) {
    let out = render(cloud, cam, RenderMode::Both);
    let mut l = 0.0f64;
    for (a, b) in out.color.data.iter().zip(gc) {
        l += *a as f64 * *b as f64;
    }
    for (a, b) in out.features.data.iter().zip(gf) {
        l += *a as f64 * *b as f64;
    }
    (l, common::signature(&out))
}

fn tensor_mut(c: &mut GaussianCloud, which: usize) -> Vec<&mut f32> {
    match which {
        0 => c.means.iter_mut().flatten().collect(),
        1 => c.rotations.iter_mut().flatten().collect(),
        2 => c.log_scales.iter_mut().flatten().collect(),
        3 => c.opacity_logits.iter_mut().collect(),
        4 => c.colors.iter_mut().flatten().collect(),
        _ => c.features.iter_mut().collect(),
    }
}

pub fn tensor_grad(g: &CloudGrad, which: usize) -> Vec<f32> {
    match which {
        0 => g.means.iter().flatten().copied().collect(),
        1 => g.rotations.iter().flatten().copied().collect(),
        2 => g.log_scales.iter().flatten().copied().collect(),
        3 => g.opacity_logits.clone(),
        4 => g.colors.iter().flatten().copied().collect(),
        _ => g.features.clone(),
    }
}

/// Perturbs tensor `which` along `dir` by `h`; returns the cloud and the
/// actually applied per-coordinate deltas (after f32 rounding).
pub fn perturb(cloud: &GaussianCloud, which: usize, dir: &[f32], h: f32) -> (GaussianCloud, Vec<f64>) {
    let mut c = cloud.clone();
    let applied = tensor_mut(&mut c, which)
        .into_iter()
        .zip(dir)
        .map(|(slot, v)| {
            let before = *slot;
            *slot += v * h;
            *slot as f64 - before as f64
        })
        .collect();
    (c, applied)
}

pub struct GradInstance {
    pub cloud: GaussianCloud,
    pub cam: CameraPose,
    pub gc: Vec<f32>,
    pub gf: Vec<f32>,
    pub grad: CloudGrad,
    pub sig: Vec<Vec<(u32, bool)>>,
}

pub fn grad_instance(seed: u64) -> GradInstance {
    let mut rng = common::rng(seed);
    let n = rng.random_range(1..=8);
    let d = 3;
    let cloud = common::random_cloud(&mut rng, n, d, 0.15);
    let cam = common::camera(8, 16.0);
    let gc: Vec<f32> = (0..8 * 8 * 3).map(|_| rng.random_range(-1.0f32..1.0)).collect();
    let gf: Vec<f32> = (0..8 * 8 * d).map(|_| rng.random_range(-1.0f32..1.0)).collect();
    let out = render(&cloud, &cam, RenderMode::Both);
    let grad = render_backward(&cloud, &cam, &out, ImageGrad { color: Some(&gc), features: Some(&gf) }).unwrap();
    let sig = common::signature(&out);
    GradInstance { cloud, cam, gc, gf, grad, sig }
}

/// `render_backward` against central differences along a random ±1
/// direction per tensor, on 80 random scenes. Steps that change which
/// Gaussians touch a pixel (or their clamping) are skipped.
pub fn render_gradients() -> Outcome {
    let mut o = Outcome::default();
    for case in 0..80u64 {
        let inst = grad_instance(1000 + case);
        let mut rng = common::rng(77 + case);
        for which in 0..TENSORS.len() {
            let g = tensor_grad(&inst.grad, which);
            let dir: Vec<f32> = (0..g.len()).map(|_| if rng.random_bool(0.5) { 1.0 } else { -1.0 }).collect();
            let (cp, dp) = perturb(&inst.cloud, which, &dir, GRAD_STEP);
            let (cm, dm) = perturb(&inst.cloud, which, &dir, -GRAD_STEP);
            let (lp, sp) = probe_loss(&cp, &inst.cam, &inst.gc, &inst.gf);
            let (lm, sm) = probe_loss(&cm, &inst.cam, &inst.gc, &inst.gf);
            if sp != inst.sig || sm != inst.sig {
                continue;
            }
            // Directional derivative over the actually applied step.
            let analytic: f64 = g.iter().zip(dp.iter().zip(&dm)).map(|(g, (p, m))| *g as f64 * (p - m)).sum();
            let numeric = lp - lm;
            let err = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(NOISE_FLOOR * 2.0 * GRAD_STEP as f64);
            o.record(err, RENDER_GRAD_TOL, || format!("case {case} {}: analytic {analytic:e} numeric {numeric:e}", TENSORS[which]));
        }
    }
    o
}

pub struct LossCase {
    pub out: RenderOutput,
    pub gt: Raster<f32>,
    pub sup: Supervision,
    pub queries: Vec<f32>,
    pub cfg: TrainConfig,
}

pub fn loss_case(seed: u64) -> LossCase {
    let mut rng = common::rng(seed);
    let size = 10u32;
    let dz = rng.random_range(2..7usize);
    let cloud = common::random_cloud(&mut rng, 24, dz, 0.25);
    let out = render(&cloud, &common::camera(size, 12.0), RenderMode::Both);
    let n = (size * size) as usize;
    let s = size as usize;
    // Keep every residual away from the L1 kink.
    let gt = out.color.data.iter().map(|&c| {
        let offset = rng.random_range(0.02f32..0.5);
        if rng.random::<bool>() {
            c + offset
        } else {
            c - offset
        }
    });
    let gt = Raster::from_data(s, s, 3, gt.collect()).unwrap();
    let k = rng.random_range(2..5usize);
    // Cosine logits are singular at zero features, so uncovered pixels stay unlabeled.
    let labels = (0..n)
        .map(|p| {
            let covered = out.alpha.data[p] >= 0.5;
            if !covered || rng.random_range(0.0f32..1.0) < 0.25 {
                IGNORE_LABEL
            } else {
                rng.random_range(0..k) as u16
            }
        })
        .collect();
    let latent = Raster::from_data(s, s, dz, (0..n * dz).map(|_| rng.random_range(-0.5f32..0.5)).collect()).unwrap();
    let queries = (0..k * dz).map(|_| rng.random_range(-1.0f32..1.0)).collect();
    let cfg = TrainConfig { lambda_2d: rng.random_range(0.5f32..2.0), lambda_sem: rng.random_range(0.5f32..2.0), ..TrainConfig::default() };
    LossCase { out, gt, sup: Supervision { labels: Raster::from_data(s, s, 1, labels).unwrap(), latent: Some(latent) }, queries, cfg }
}

/// f32 loss evaluation noise divided by the step, as an absolute floor.
const LOSS_NOISE_FLOOR: f32 = 1e-3;

/// Scene-loss image gradients along `sign(g)·u`, `u` uniform in [0.5, 1], for
/// the color and the feature image of 60 random cases. Aligning with the
/// gradient keeps the derivative above f32 evaluation noise; a flipped or
/// misplaced entry still shows up as a mismatch.
pub fn scene_loss_gradients() -> Outcome {
    let mut o = Outcome::default();
    let mut rng = common::rng(99);
    for seed in 0..60 {
        let c = loss_case(seed);
        let loss = scene_loss(&c.out, &c.gt, &c.sup, &c.queries, &c.cfg).unwrap();
        for features in [false, true] {
            let grad = if features { &loss.grad_features } else { &loss.grad_color };
            let dir: Vec<f32> = grad.iter().map(|g| g.signum() * rng.random_range(0.5f32..1.0)).collect();
            let perturbed = |sign: f32| {
                let mut out = c.out.clone();
                let data = if features { &mut out.features.data } else { &mut out.color.data };
                data.iter_mut().zip(&dir).for_each(|(v, d)| *v += sign * GRAD_STEP * d);
                scene_loss(&out, &c.gt, &c.sup, &c.queries, &c.cfg).unwrap().total
            };
            let analytic: f32 = grad.iter().zip(&dir).map(|(g, d)| g * d).sum();
            let numeric = (perturbed(1.0) - perturbed(-1.0)) / (2.0 * GRAD_STEP);
            let err = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(LOSS_NOISE_FLOOR);
            let image = if features { "feature" } else { "color" };
            o.record(err as f64, RENDER_GRAD_TOL, || format!("case {seed} {image} image: analytic {analytic} numeric {numeric}"));
        }
    }
    o
}

pub struct AeCase {
    pub params: MlpParams<f64>,
    pub features: Vec<f64>,
    pub labels: Vec<u16>,
    pub queries: Vec<f64>,
}

/// Random batch for the autoencoder loss; `dims` overrides the standard
/// `16 → … → 3 → … → 16` layout.
pub fn ae_case(seed: u64, dims: Option<(&[usize], &[usize])>) -> AeCase {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = 16;
    let mut params = match dims {
        Some((e, dd)) => MlpParams::<f64>::with_dims(e, dd, seed).unwrap(),
        None => MlpParams::<f64>::init(d, 3, seed).unwrap(),
    };
    // Non-zero biases exercise the bias gradients.
    for t in params.tensors_mut() {
        if t.len() <= 256 {
            t.iter_mut().for_each(|b| *b = rng.random_range(-0.1..0.1));
        }
    }
    let k = rng.random_range(2..6usize);
    let n = rng.random_range(1..7usize);
    let mut queries: Vec<f64> = (0..k * d).map(|_| rng.random_range(-1.0..1.0)).collect();
    for row in queries.chunks_mut(d) {
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        row.iter_mut().for_each(|v| *v /= norm);
    }
    let features = (0..n * d).map(|_| rng.random_range(-1.0..1.0)).collect();
    let labels = (0..n).map(|_| rng.random_range(0..k) as u16).collect();
    AeCase { params, features, labels, queries }
}

pub fn ae_case_loss(c: &AeCase, p: &MlpParams<f64>) -> f64 {
    ae_loss(p, &c.features, &c.labels, &c.queries, 1.0).unwrap().loss
}

/// Central difference along coordinate `idx` with one Richardson step. When
/// the two step sizes disagree a ReLU kink lies within reach, so the step
/// shrinks tenfold (at most three times).
pub fn ae_numeric(c: &AeCase, idx: usize, mut h: f64) -> f64 {
    let at = |delta: f64| {
        let mut p = c.params.clone();
        *p.tensors_mut().flat_map(|t| t.iter_mut()).nth(idx).unwrap() += delta;
        ae_case_loss(c, &p)
    };
    let central = |h: f64| (at(h) - at(-h)) / (2.0 * h);
    for _ in 0..4 {
        let (d1, d2) = (central(h), central(h / 2.0));
        if (d1 - d2).abs() <= 1e-3 * d1.abs().max(d2.abs()).max(1e-4) {
            return (4.0 * d2 - d1) / 3.0;
        }
        h /= 10.0;
    }
    central(h)
}

pub fn rel_err(a: f64, n: f64, floor: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(floor)
}

pub const AE_GRAD_TOL: f64 = 1e-3;

/// One random coordinate per tensor of the standard layout (D = 16, d_z = 3),
/// 50 seeds, f64 network.
pub fn ae_gradients() -> Outcome {
    let mut o = Outcome::default();
    for seed in 0..50 {
        let c = ae_case(100 + seed, None);
        let grads = ae_loss(&c.params, &c.features, &c.labels, &c.queries, 1.0).unwrap().grads;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for (t, g) in grads.tensors().enumerate() {
            let offset: usize = grads.tensors().take(t).map(Vec::len).sum();
            let i = rng.random_range(0..g.len());
            let numeric = ae_numeric(&c, offset + i, 1e-4);
            let e = rel_err(g[i], numeric, 1e-4);
            o.record(e, AE_GRAD_TOL, || format!("seed {seed} tensor {t}[{i}]: analytic {} numeric {numeric}", g[i]));
        }
    }
    o
}

/// Random look-at camera with focal lengths in [20, 200] and sizes in [8, 128).
pub fn random_camera(r: &mut ChaCha8Rng) -> CameraPose {
    loop {
        let eye: [f32; 3] = std::array::from_fn(|_| r.random_range(-4.0..4.0));
        let dir: [f32; 3] = std::array::from_fn(|_| r.random_range(-1.0..1.0));
        let n = (dir[0] * dir[0] + dir[1] * dir[1] + dir[2] * dir[2]).sqrt();
        if n < 0.2 || dir[1].abs() / n > 0.95 {
            continue;
        }
        let target = [eye[0] + dir[0], eye[1] + dir[1], eye[2] + dir[2]];
        let (fx, fy) = (r.random_range(20.0..200.0), r.random_range(20.0..200.0));
        return CameraPose::look_at(eye, target, [0.0, -1.0, 0.0], fx, fy, r.random_range(8..128), r.random_range(8..128));
    }
}

/// `project ∘ backproject` on 1000 seeded cases: pixel error (tolerance
/// 1e-4 px) and relative depth error (tolerance 1e-6) as two outcomes.
pub fn geometry_roundtrip() -> (Outcome, Outcome) {
    let mut r = common::rng(0x9e0);
    let (mut px, mut depth) = (Outcome::default(), Outcome::default());
    for case in 0..1000 {
        let cam = random_camera(&mut r);
        let p = Pixel::new(r.random_range(0.0..1.0) * (cam.width - 1) as f32, r.random_range(0.0..1.0) * (cam.height - 1) as f32);
        let z = r.random_range(0.2f32..20.0);
        let (q, zz) = project_point(&backproject_pixel(p, z, &cam).unwrap(), &cam).unwrap();
        let e = (q.u - p.u).abs().max((q.v - p.v).abs()) as f64;
        px.record(e, 1e-4, || format!("case {case}: pixel {p:?} -> {q:?}"));
        let e = ((zz - z) / z).abs() as f64;
        depth.record(e, 1e-6, || format!("case {case}: depth {z} -> {zz}"));
    }
    (px, depth)
}
