//! Scene optimization: color fitting plus latent semantic cross-entropy and
//! feature regression, after seeding per-Gaussian fields from the latent space.

use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autoencoder::{cosine, cosine_backward, cross_entropy};
use crate::cloud::GaussianCloud;
use crate::contextual::ContextualSpace;
use crate::error::{Error, Result};
use crate::math;
use crate::optim::{Adam, AdamConfig};
use crate::scene::{LabelMap, Raster, View, IGNORE_LABEL};
use crate::splat::{self, ImageGrad, RenderMode, RenderOutput};

/// Per-tensor learning rates for geometry and color.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeometryLr {
    pub means: f32,
    pub rotations: f32,
    pub log_scales: f32,
    pub opacity_logits: f32,
    pub colors: f32,
}

impl Default for GeometryLr {
    fn default() -> Self {
        Self { means: 0.00016, rotations: 0.001, log_scales: 0.005, opacity_logits: 0.05, colors: 0.0025 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lambda_2d: f32,
    pub lambda_sem: f32,
    pub lambda_ssim: f32,
    pub lr_semantic: f32,
    pub lr_geometry: GeometryLr,
    pub iterations: usize,
    pub seed: u64,
    pub freeze_geometry: bool,
    /// Divides the cosine logits of the cross-entropy term.
    pub temperature: f32,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda_2d: 1.0,
            lambda_sem: 1.0,
            lambda_ssim: 0.2,
            lr_semantic: 0.0025,
            lr_geometry: GeometryLr::default(),
            iterations: 800,
            seed: 0,
            freeze_geometry: false,
            temperature: 1.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let weights = [self.lambda_2d, self.lambda_sem, self.lambda_ssim];
        if weights.iter().any(|w| !(*w >= 0.0 && w.is_finite())) || self.lambda_ssim > 1.0 {
            return Err(Error::InvalidConfig(alloc::format!("loss weights must be finite and non-negative: {weights:?}")));
        }
        if self.iterations == 0 {
            return Err(Error::InvalidConfig(alloc::string::String::from("iterations must be at least 1")));
        }
        if !(self.temperature > 0.0) {
            return Err(Error::InvalidConfig(alloc::format!("temperature must be positive, got {}", self.temperature)));
        }
        Ok(())
    }
}

/// Copies each Gaussian's latent from its contextual point: row `i` when the
/// counts match, otherwise the nearest point (lowest index on ties). Unfused
/// points hand out the mean latent of the fused ones.
pub fn init_semantic_fields(cloud: &GaussianCloud, space: &ContextualSpace, latent: &[f32]) -> Result<GaussianCloud> {
    let p = space.len();
    if p == 0 || latent.is_empty() {
        return Err(Error::EmptyLatent);
    }
    if !latent.len().is_multiple_of(p) {
        return Err(Error::ShapeMismatch(alloc::format!("{} latent values for {p} points", latent.len())));
    }
    let dz = latent.len() / p;
    let mut mean = vec![0.0f64; dz];
    let mut fused = 0usize;
    for i in 0..p {
        if space.is_fused(i) {
            fused += 1;
            for (m, &v) in mean.iter_mut().zip(&latent[i * dz..(i + 1) * dz]) {
                *m += v as f64;
            }
        }
    }
    if fused == 0 {
        return Err(Error::EmptyLatent);
    }
    let mean: Vec<f32> = mean.iter().map(|m| (m / fused as f64) as f32).collect();
    let source = |g: usize| -> usize {
        if p == cloud.len() {
            return g;
        }
        let x = &cloud.means[g];
        let mut best = (f32::INFINITY, 0usize);
        for (i, q) in space.points.iter().enumerate() {
            let d = math::dist2(x, q);
            if d < best.0 {
                best = (d, i);
            }
        }
        best.1
    };
    let mut out = cloud.clone();
    out.feature_dim = dz;
    out.features = Vec::with_capacity(cloud.len() * dz);
    for g in 0..cloud.len() {
        let s = source(g);
        if space.is_fused(s) {
            out.features.extend_from_slice(&latent[s * dz..(s + 1) * dz]);
        } else {
            out.features.extend_from_slice(&mean);
        }
    }
    Ok(out)
}

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f32 = 1.5;
const SSIM_C1: f32 = 0.01 * 0.01;
const SSIM_C2: f32 = 0.03 * 0.03;

fn gaussian_kernel() -> [f32; SSIM_WINDOW] {
    let half = (SSIM_WINDOW / 2) as f32;
    let mut k = [0.0f32; SSIM_WINDOW];
    for (i, v) in k.iter_mut().enumerate() {
        let x = i as f32 - half;
        *v = libm::expf(-x * x / (2.0 * SSIM_SIGMA * SSIM_SIGMA));
    }
    let s: f32 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}

/// Separable "same" blur with zero padding; self-adjoint because the kernel
/// is symmetric.
fn blur(src: &[f32], w: usize, h: usize, k: &[f32; SSIM_WINDOW]) -> Vec<f32> {
    let r = SSIM_WINDOW / 2;
    let mut tmp = vec![0.0f32; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (i, &kv) in k.iter().enumerate() {
                let xx = x as isize + i as isize - r as isize;
                if xx >= 0 && (xx as usize) < w {
                    acc += kv * src[y * w + xx as usize];
                }
            }
            tmp[y * w + x] = acc;
        }
    }
    let mut out = vec![0.0f32; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (i, &kv) in k.iter().enumerate() {
                let yy = y as isize + i as isize - r as isize;
                if yy >= 0 && (yy as usize) < h {
                    acc += kv * tmp[yy as usize * w + x];
                }
            }
            out[y * w + x] = acc;
        }
    }
    out
}

/// Mean SSIM over all pixels and channels of two interleaved `w×h×c` images,
/// and its gradient with respect to `x`.
pub fn ssim(x: &[f32], y: &[f32], w: usize, h: usize, c: usize) -> (f32, Vec<f32>) {
    let k = gaussian_kernel();
    let n = w * h;
    let mut grad = vec![0.0f32; n * c];
    let mut total = 0.0f64;
    let inv = 1.0 / (n * c) as f32;
    for ch in 0..c {
        let xs: Vec<f32> = (0..n).map(|i| x[i * c + ch]).collect();
        let ys: Vec<f32> = (0..n).map(|i| y[i * c + ch]).collect();
        let sq = |a: &[f32], b: &[f32]| -> Vec<f32> { a.iter().zip(b).map(|(p, q)| p * q).collect() };
        let mx = blur(&xs, w, h, &k);
        let my = blur(&ys, w, h, &k);
        let exx = blur(&sq(&xs, &xs), w, h, &k);
        let eyy = blur(&sq(&ys, &ys), w, h, &k);
        let exy = blur(&sq(&xs, &ys), w, h, &k);
        let mut g_mx = vec![0.0f32; n];
        let mut g_exx = vec![0.0f32; n];
        let mut g_exy = vec![0.0f32; n];
        for i in 0..n {
            let a1 = 2.0 * mx[i] * my[i] + SSIM_C1;
            let a2 = 2.0 * (exy[i] - mx[i] * my[i]) + SSIM_C2;
            let b1 = mx[i] * mx[i] + my[i] * my[i] + SSIM_C1;
            let b2 = (exx[i] - mx[i] * mx[i]) + (eyy[i] - my[i] * my[i]) + SSIM_C2;
            let s = (a1 * a2) / (b1 * b2);
            total += s as f64;
            g_mx[i] = inv * s * (2.0 * my[i] / a1 - 2.0 * my[i] / a2 - 2.0 * mx[i] / b1 + 2.0 * mx[i] / b2);
            g_exy[i] = inv * s * 2.0 / a2;
            g_exx[i] = -inv * s / b2;
        }
        let (bmx, bexx, bexy) = (blur(&g_mx, w, h, &k), blur(&g_exx, w, h, &k), blur(&g_exy, w, h, &k));
        for i in 0..n {
            grad[i * c + ch] = bmx[i] + 2.0 * xs[i] * bexx[i] + ys[i] * bexy[i];
        }
    }
    ((total / (n * c) as f64) as f32, grad)
}

/// Supervision for one training view.
#[derive(Debug, Clone, PartialEq)]
pub struct Supervision {
    pub labels: LabelMap,
    /// Encoded feature targets; only read at labeled pixels.
    pub latent: Option<Raster<f32>>,
}

/// Loss terms and image-space gradients of the total.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneLoss {
    pub total: f32,
    pub l1: f32,
    pub ssim: f32,
    pub color: f32,
    pub ce: f32,
    pub semantic: f32,
    pub supervised_pixels: usize,
    pub grad_color: Vec<f32>,
    pub grad_features: Vec<f32>,
}

/// `(1−λ_ssim)·L1 + λ_ssim·(1−SSIM) + λ_2d·CE + λ_sem·L_sem`.
///
/// CE uses cosines of the rendered feature against each latent query as
/// logits and is averaged over labeled pixels. `L_sem` is the squared
/// distance to the latent target, also averaged over labeled pixels.
/// Pixels labeled [`IGNORE_LABEL`] only see the color term.
pub fn scene_loss(
    out: &RenderOutput,
    gt_rgb: &Raster<f32>,
    sup: &Supervision,
    queries_z: &[f32],
    cfg: &TrainConfig,
) -> Result<SceneLoss> {
    let (w, h) = (out.width(), out.height());
    let dz = out.features.channels;
    let shape_err = |what: &str, r_w: usize, r_h: usize, r_c: usize| {
        Error::ShapeMismatch(alloc::format!("{what} is {r_w}x{r_h}x{r_c}, render is {w}x{h}"))
    };
    if !gt_rgb.same_size(w, h) || gt_rgb.channels != 3 {
        return Err(shape_err("target image", gt_rgb.width, gt_rgb.height, gt_rgb.channels));
    }
    let labels = &sup.labels;
    if !labels.same_size(w, h) || labels.channels != 1 {
        return Err(shape_err("label map", labels.width, labels.height, labels.channels));
    }
    if let Some(t) = &sup.latent {
        if !t.same_size(w, h) || t.channels != dz {
            return Err(shape_err("latent target", t.width, t.height, t.channels));
        }
    }
    if dz == 0 || !queries_z.len().is_multiple_of(dz) || queries_z.is_empty() {
        return Err(Error::DimensionMismatch { expected: dz, got: queries_z.len() });
    }
    let k = queries_z.len() / dz;
    if let Some(&bad) = labels.data.iter().find(|&&l| l != IGNORE_LABEL && l as usize >= k) {
        return Err(Error::LabelOutOfRange { label: bad as usize, classes: k });
    }

    let n = w * h;
    let inv_c = 1.0 / (n * 3) as f32;
    let mut grad_color = vec![0.0f32; n * 3];
    let mut l1 = 0.0f64;
    for ((g, &a), &b) in grad_color.iter_mut().zip(&out.color.data).zip(&gt_rgb.data) {
        let d = a - b;
        l1 += d.abs() as f64;
        *g = (1.0 - cfg.lambda_ssim) * inv_c * if d > 0.0 { 1.0 } else if d < 0.0 { -1.0 } else { 0.0 };
    }
    let l1 = (l1 * inv_c as f64) as f32;
    let (s, gs) = ssim(&out.color.data, &gt_rgb.data, w, h, 3);
    for (g, d) in grad_color.iter_mut().zip(&gs) {
        *g -= cfg.lambda_ssim * d;
    }
    let color = (1.0 - cfg.lambda_ssim) * l1 + cfg.lambda_ssim * (1.0 - s);

    let mut grad_features = vec![0.0f32; n * dz];
    let supervised = labels.data.iter().filter(|&&l| l != IGNORE_LABEL).count();
    let (mut ce, mut sem) = (0.0f64, 0.0f64);
    if supervised > 0 {
        let inv_s = 1.0 / supervised as f32;
        let inv_t = 1.0 / cfg.temperature;
        let mut logits = vec![0.0f32; k];
        let mut dl = vec![0.0f32; k];
        for p in 0..n {
            let y = labels.data[p];
            if y == IGNORE_LABEL {
                continue;
            }
            let f = &out.features.data[p * dz..(p + 1) * dz];
            let g = &mut grad_features[p * dz..(p + 1) * dz];
            if cfg.lambda_2d > 0.0 {
                for (j, l) in logits.iter_mut().enumerate() {
                    *l = cosine(f, &queries_z[j * dz..(j + 1) * dz]) * inv_t;
                }
                ce += cross_entropy(&logits, y as usize, &mut dl) as f64;
                for j in 0..k {
                    cosine_backward(f, &queries_z[j * dz..(j + 1) * dz], cfg.lambda_2d * dl[j] * inv_t * inv_s, Some(&mut *g), None);
                }
            }
            if let (Some(t), true) = (&sup.latent, cfg.lambda_sem > 0.0) {
                let target = &t.data[p * dz..(p + 1) * dz];
                for ((gv, &fv), &tv) in g.iter_mut().zip(f).zip(target) {
                    let d = fv - tv;
                    sem += (d * d) as f64;
                    *gv += cfg.lambda_sem * 2.0 * d * inv_s;
                }
            }
        }
        ce /= supervised as f64;
        sem /= supervised as f64;
    }
    let (ce, semantic) = (ce as f32, sem as f32);
    Ok(SceneLoss {
        total: color + cfg.lambda_2d * ce + cfg.lambda_sem * semantic,
        l1,
        ssim: s,
        color,
        ce,
        semantic,
        supervised_pixels: supervised,
        grad_color,
        grad_features,
    })
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub cloud: GaussianCloud,
    /// Total loss per iteration.
    pub losses: Vec<f32>,
}

struct Optimizers {
    features: Adam<f32>,
    means: Adam<f32>,
    rotations: Adam<f32>,
    log_scales: Adam<f32>,
    opacity_logits: Adam<f32>,
    colors: Adam<f32>,
}

/// Optimizes `cloud` against the training views. Each pass over the views
/// follows a fresh seeded permutation.
pub fn train_scene(
    views: &[View],
    supervision: &[Supervision],
    cloud: &GaussianCloud,
    queries_z: &[f32],
    cfg: &TrainConfig,
) -> Result<TrainOutput> {
    train_scene_with(views, supervision, cloud, queries_z, cfg, |_, _| {})
}

/// [`train_scene`] with a callback receiving the iteration index and the
/// feature gradient of the cloud before each update.
pub fn train_scene_with(
    views: &[View],
    supervision: &[Supervision],
    cloud: &GaussianCloud,
    queries_z: &[f32],
    cfg: &TrainConfig,
    mut observe: impl FnMut(usize, &[f32]),
) -> Result<TrainOutput> {
    cfg.validate()?;
    cloud.validate()?;
    if views.is_empty() || views.len() != supervision.len() {
        return Err(Error::ShapeMismatch(alloc::format!("{} views, {} supervision entries", views.len(), supervision.len())));
    }
    let mut cloud = cloud.clone();
    let n = cloud.len();
    let geo = cfg.lr_geometry;
    let mut opt = Optimizers {
        features: Adam::new(cloud.features.len(), AdamConfig::with_lr(cfg.lr_semantic)),
        means: Adam::new(n * 3, AdamConfig::with_lr(geo.means)),
        rotations: Adam::new(n * 4, AdamConfig::with_lr(geo.rotations)),
        log_scales: Adam::new(n * 3, AdamConfig::with_lr(geo.log_scales)),
        opacity_logits: Adam::new(n, AdamConfig::with_lr(geo.opacity_logits)),
        colors: Adam::new(n * 3, AdamConfig::with_lr(geo.colors)),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = Vec::new();
    let mut losses = Vec::with_capacity(cfg.iterations);
    for it in 0..cfg.iterations {
        if order.is_empty() {
            order = (0..views.len()).collect();
            order.shuffle(&mut rng);
            order.reverse();
        }
        let v = order.pop().unwrap();
        let view = &views[v];
        let out = splat::render(&cloud, &view.camera, RenderMode::Both);
        let loss = scene_loss(&out, &view.rgb, &supervision[v], queries_z, cfg)?;
        losses.push(loss.total);
        let grads = splat::render_backward(
            &cloud,
            &view.camera,
            &out,
            ImageGrad { color: Some(&loss.grad_color), features: Some(&loss.grad_features) },
        )?;
        observe(it, &grads.features);
        opt.features.step(&mut cloud.features, &grads.features);
        if !cfg.freeze_geometry {
            opt.means.step(cloud.means.as_flattened_mut(), grads.means.as_flattened());
            opt.rotations.step(cloud.rotations.as_flattened_mut(), grads.rotations.as_flattened());
            opt.log_scales.step(cloud.log_scales.as_flattened_mut(), grads.log_scales.as_flattened());
            opt.opacity_logits.step(&mut cloud.opacity_logits, &grads.opacity_logits);
            opt.colors.step(cloud.colors.as_flattened_mut(), grads.colors.as_flattened());
            cloud.normalize_rotations();
        }
    }
    Ok(TrainOutput { cloud, losses })
}
