//! Differentiable tile rasterizer for color and latent semantic fields.
//!
//! Gaussians are projected with the local affine approximation of the pinhole
//! map, sorted front-to-back by camera depth of their mean, and alpha-blended.
//! Color and features share the same blending weights, so rendering a feature
//! field equal to the colors reproduces the color image exactly.

use alloc::vec;
use alloc::vec::Vec;

use crate::cloud::GaussianCloud;
use crate::error::{Error, Result};
use crate::math::{self, Mat3, Vec3};
use crate::scene::{CameraPose, Raster};

pub const TILE_SIZE: usize = 16;
/// Screen-space covariance low-pass, added to the diagonal.
pub const LOW_PASS: f32 = 0.3;
pub const ALPHA_MIN: f32 = 1.0 / 255.0;
pub const ALPHA_MAX: f32 = 0.99;
pub const TRANSMITTANCE_MIN: f32 = 1e-4;
/// Squared Mahalanobis radius (3σ) beyond which a splat contributes nothing.
pub const MAHALANOBIS_CUTOFF: f32 = 9.0;
/// Gaussians closer than this to the image plane are culled.
pub const NEAR_PLANE: f32 = 0.01;

/// A Gaussian projected into one camera.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Splat2D {
    /// Projected mean in pixels.
    pub mean: [f32; 2],
    /// Screen covariance `[Σ′₀₀, Σ′₀₁, Σ′₁₁]`, low-pass included.
    pub cov: [f32; 3],
    /// Inverse of `cov`, same layout.
    pub conic: [f32; 3],
    pub depth: f32,
    pub opacity: f32,
    /// 3σ screen radius along the major axis.
    pub radius: f32,
    /// Mean in the camera frame.
    pub cam_mean: Vec3,
    /// Covariance in the camera frame, `WΣWᵀ`.
    pub cov_cam: Mat3,
}

/// Pinhole Jacobian at a camera-frame point.
fn jacobian(cam: &CameraPose, t: &Vec3) -> [[f32; 3]; 2] {
    let iz = 1.0 / t[2];
    [[cam.fx * iz, 0.0, -cam.fx * t[0] * iz * iz], [0.0, cam.fy * iz, -cam.fy * t[1] * iz * iz]]
}

/// Projects Gaussian `i` of `cloud`: `Σ′ = J·W·Σ·Wᵀ·Jᵀ + 0.3·I`.
pub fn project_gaussian(cloud: &GaussianCloud, i: usize, cam: &CameraPose) -> Result<Splat2D> {
    let m = cloud.means[i];
    let w = &cam.rotation;
    let t = math::mat3_vec(w, &m);
    let t = [t[0] + cam.translation[0], t[1] + cam.translation[1], t[2] + cam.translation[2]];
    if t[2] <= NEAR_PLANE {
        return Err(Error::BehindCamera(t[2]));
    }
    let sigma = cloud.covariance(i);
    let cov_cam = math::mat3_mul(&math::mat3_mul(w, &sigma), &math::mat3_transpose(w));
    let j = jacobian(cam, &t);
    // J Σc, 2×3
    let mut js = [[0.0f32; 3]; 2];
    for r in 0..2 {
        for c in 0..3 {
            js[r][c] = j[r][0] * cov_cam[0][c] + j[r][1] * cov_cam[1][c] + j[r][2] * cov_cam[2][c];
        }
    }
    let a = js[0][0] * j[0][0] + js[0][1] * j[0][1] + js[0][2] * j[0][2] + LOW_PASS;
    let b = js[0][0] * j[1][0] + js[0][1] * j[1][1] + js[0][2] * j[1][2];
    let c = js[1][0] * j[1][0] + js[1][1] * j[1][1] + js[1][2] * j[1][2] + LOW_PASS;
    let det = a * c - b * b;
    let conic = [c / det, -b / det, a / det];
    let mid = 0.5 * (a + c);
    let lambda_max = mid + libm::sqrtf((mid * mid - det).max(0.0));
    let iz = 1.0 / t[2];
    Ok(Splat2D {
        mean: [cam.fx * t[0] * iz + cam.cx, cam.fy * t[1] * iz + cam.cy],
        cov: [a, b, c],
        conic,
        depth: t[2],
        opacity: cloud.opacity(i),
        radius: 3.0 * libm::sqrtf(lambda_max),
        cam_mean: t,
        cov_cam,
    })
}

/// Blending alpha of a splat at pixel center `(px, py)`, or `None` when it is
/// beyond the 3σ cutoff or below [`ALPHA_MIN`].
#[inline]
pub fn splat_alpha(s: &Splat2D, px: f32, py: f32) -> Option<f32> {
    let du = px - s.mean[0];
    let dv = py - s.mean[1];
    let power = s.conic[0] * du * du + 2.0 * s.conic[1] * du * dv + s.conic[2] * dv * dv;
    if !(power <= MAHALANOBIS_CUTOFF) {
        return None;
    }
    let alpha = (s.opacity * libm::expf(-0.5 * power)).min(ALPHA_MAX);
    (alpha >= ALPHA_MIN).then_some(alpha)
}

/// What to accumulate during rendering.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RenderMode {
    Color,
    Feature,
    Both,
}

impl RenderMode {
    fn color(self) -> bool {
        matches!(self, Self::Color | Self::Both)
    }

    fn feature(self) -> bool {
        matches!(self, Self::Feature | Self::Both)
    }
}

/// One Gaussian's contribution to one pixel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Contribution {
    pub gaussian: u32,
    pub alpha: f32,
    /// Transmittance in front of this Gaussian.
    pub transmittance: f32,
}

impl Contribution {
    #[inline]
    pub fn weight(&self) -> f32 {
        self.alpha * self.transmittance
    }
}

/// Everything the backward pass needs from the forward pass.
#[derive(Debug, Clone)]
pub struct ForwardState {
    pub splats: Vec<Option<Splat2D>>,
    /// Per-pixel `[start, end)` into `contributions`, row-major pixel order.
    pub ranges: Vec<(u32, u32)>,
    pub contributions: Vec<Contribution>,
    pub mode: RenderMode,
}

#[derive(Debug, Clone)]
pub struct RenderOutput {
    pub color: Raster<f32>,
    pub features: Raster<f32>,
    /// Accumulated weight per pixel.
    pub alpha: Raster<f32>,
    pub state: Option<ForwardState>,
}

impl RenderOutput {
    pub fn width(&self) -> usize {
        self.alpha.width
    }

    pub fn height(&self) -> usize {
        self.alpha.height
    }

    /// Depth-ordered contributions at a pixel (empty without forward state).
    pub fn contributions(&self, x: usize, y: usize) -> &[Contribution] {
        match &self.state {
            Some(s) => {
                let (a, b) = s.ranges[y * self.width() + x];
                &s.contributions[a as usize..b as usize]
            }
            None => &[],
        }
    }

    pub(crate) fn blank(width: usize, height: usize, feature_dim: usize, mode: RenderMode, splats: Vec<Option<Splat2D>>) -> Self {
        Self {
            color: Raster::filled(width, height, 3, 0.0),
            features: Raster::filled(width, height, feature_dim, 0.0),
            alpha: Raster::filled(width, height, 1, 0.0),
            state: Some(ForwardState {
                splats,
                ranges: vec![(0, 0); width * height],
                contributions: Vec::new(),
                mode,
            }),
        }
    }

    /// Blends the depth-ordered `candidates` at pixel `(x, y)`.
    pub(crate) fn blend_pixel(&mut self, cloud: &GaussianCloud, x: usize, y: usize, candidates: impl Iterator<Item = usize>) {
        let state = self.state.as_mut().expect("forward state");
        let mode = state.mode;
        let start = state.contributions.len() as u32;
        let d = cloud.feature_dim;
        let mut color = [0.0f32; 3];
        let (px, py) = (x as f32, y as f32);
        let fbase = (y * self.features.width + x) * d;
        let mut t = 1.0f32;
        for i in candidates {
            let Some(s) = &state.splats[i] else { continue };
            let Some(alpha) = splat_alpha(s, px, py) else { continue };
            let next_t = t * (1.0 - alpha);
            if next_t < TRANSMITTANCE_MIN {
                break;
            }
            let w = alpha * t;
            if mode.color() {
                for (acc, c) in color.iter_mut().zip(&cloud.colors[i]) {
                    *acc += c * w;
                }
            }
            if mode.feature() {
                let out = &mut self.features.data[fbase..fbase + d];
                for (acc, f) in out.iter_mut().zip(cloud.feature(i)) {
                    *acc += f * w;
                }
            }
            state.contributions.push(Contribution { gaussian: i as u32, alpha, transmittance: t });
            t = next_t;
        }
        state.ranges[y * self.alpha.width + x] = (start, state.contributions.len() as u32);
        self.color.pixel_mut(x, y).copy_from_slice(&color);
        self.alpha.set(x, y, 1.0 - t);
    }
}

/// Projects every Gaussian; culled ones are `None`.
pub fn project_all(cloud: &GaussianCloud, cam: &CameraPose) -> Vec<Option<Splat2D>> {
    (0..cloud.len()).map(|i| project_gaussian(cloud, i, cam).ok()).collect()
}

/// Indices of projected splats, sorted front-to-back; ties by lower index.
pub fn depth_order(splats: &[Option<Splat2D>]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..splats.len()).filter(|&i| splats[i].is_some()).collect();
    order.sort_by(|&a, &b| {
        let (da, db) = (splats[a].unwrap().depth, splats[b].unwrap().depth);
        da.total_cmp(&db).then(a.cmp(&b))
    });
    order
}

/// Tiled front-to-back rasterization of `cloud` seen from `cam`.
pub fn render(cloud: &GaussianCloud, cam: &CameraPose, mode: RenderMode) -> RenderOutput {
    let (w, h) = (cam.width as usize, cam.height as usize);
    let splats = project_all(cloud, cam);
    let order = depth_order(&splats);
    let tiles_x = w.div_ceil(TILE_SIZE);
    let tiles_y = h.div_ceil(TILE_SIZE);
    let mut bins: Vec<Vec<u32>> = vec![Vec::new(); tiles_x * tiles_y];
    for &i in &order {
        let s = splats[i].as_ref().unwrap();
        let r = s.radius + 0.5;
        let (u0, u1) = (libm::ceilf(s.mean[0] - r), libm::floorf(s.mean[0] + r));
        let (v0, v1) = (libm::ceilf(s.mean[1] - r), libm::floorf(s.mean[1] + r));
        if u1 < 0.0 || v1 < 0.0 || u0 > (w - 1) as f32 || v0 > (h - 1) as f32 {
            continue;
        }
        let (u0, u1) = (u0.max(0.0) as usize, (u1 as usize).min(w - 1));
        let (v0, v1) = (v0.max(0.0) as usize, (v1 as usize).min(h - 1));
        for ty in v0 / TILE_SIZE..=v1 / TILE_SIZE {
            for tx in u0 / TILE_SIZE..=u1 / TILE_SIZE {
                bins[ty * tiles_x + tx].push(i as u32);
            }
        }
    }
    let mut out = RenderOutput::blank(w, h, cloud.feature_dim, mode, splats);
    for ty in 0..tiles_y {
        for tx in 0..tiles_x {
            let bin = &bins[ty * tiles_x + tx];
            for y in ty * TILE_SIZE..((ty + 1) * TILE_SIZE).min(h) {
                for x in tx * TILE_SIZE..((tx + 1) * TILE_SIZE).min(w) {
                    out.blend_pixel(cloud, x, y, bin.iter().map(|&i| i as usize));
                }
            }
        }
    }
    out
}

/// Gradients of a scalar loss with respect to every cloud parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct CloudGrad {
    pub means: Vec<Vec3>,
    pub rotations: Vec<[f32; 4]>,
    pub log_scales: Vec<Vec3>,
    pub opacity_logits: Vec<f32>,
    pub colors: Vec<Vec3>,
    pub features: Vec<f32>,
}

impl CloudGrad {
    pub fn zeros(n: usize, feature_dim: usize) -> Self {
        Self {
            means: vec![[0.0; 3]; n],
            rotations: vec![[0.0; 4]; n],
            log_scales: vec![[0.0; 3]; n],
            opacity_logits: vec![0.0; n],
            colors: vec![[0.0; 3]; n],
            features: vec![0.0; n * feature_dim],
        }
    }
}

/// Upstream gradients with respect to the rendered images.
#[derive(Debug, Clone, Copy, Default)]
pub struct ImageGrad<'a> {
    /// `H×W×3`.
    pub color: Option<&'a [f32]>,
    /// `H×W×d`.
    pub features: Option<&'a [f32]>,
}

/// Exact reverse-mode adjoint of [`render`].
pub fn render_backward(cloud: &GaussianCloud, cam: &CameraPose, out: &RenderOutput, upstream: ImageGrad<'_>) -> Result<CloudGrad> {
    let state = out.state.as_ref().ok_or(Error::MissingForwardState)?;
    let n = cloud.len();
    let d = cloud.feature_dim;
    let (w, h) = (out.width(), out.height());
    let mut grad = CloudGrad::zeros(n, d);
    // Screen-space accumulators: opacity, mean2d, conic.
    let mut g_opacity = vec![0.0f32; n];
    let mut g_mean2d = vec![[0.0f32; 2]; n];
    let mut g_conic = vec![[0.0f32; 3]; n];

    let mut suffix_f = vec![0.0f32; d];
    for y in 0..h {
        for x in 0..w {
            let pix = y * w + x;
            let gc: &[f32] = upstream.color.map_or(&[0.0; 3], |g| &g[pix * 3..pix * 3 + 3]);
            let gf: Option<&[f32]> = upstream.features.map(|g| &g[pix * d..pix * d + d]);
            let (a, b) = state.ranges[pix];
            if a == b {
                continue;
            }
            let mut suffix_c = [0.0f32; 3];
            suffix_f.iter_mut().for_each(|v| *v = 0.0);
            let (px, py) = (x as f32, y as f32);
            for c in state.contributions[a as usize..b as usize].iter().rev() {
                let i = c.gaussian as usize;
                let wgt = c.weight();
                let color = &cloud.colors[i];
                let mut g_alpha = 0.0f32;
                if state.mode.color() {
                    let mut dot_c = 0.0;
                    let mut dot_s = 0.0;
                    for k in 0..3 {
                        grad.colors[i][k] += wgt * gc[k];
                        dot_c += gc[k] * color[k];
                        dot_s += gc[k] * suffix_c[k];
                        suffix_c[k] += color[k] * wgt;
                    }
                    g_alpha += c.transmittance * dot_c - dot_s / (1.0 - c.alpha);
                }
                if state.mode.feature() {
                    let f = cloud.feature(i);
                    if let Some(gf) = gf {
                        let gfe = &mut grad.features[i * d..(i + 1) * d];
                        let mut dot_c = 0.0;
                        let mut dot_s = 0.0;
                        for k in 0..d {
                            gfe[k] += wgt * gf[k];
                            dot_c += gf[k] * f[k];
                            dot_s += gf[k] * suffix_f[k];
                        }
                        g_alpha += c.transmittance * dot_c - dot_s / (1.0 - c.alpha);
                    }
                    for k in 0..d {
                        suffix_f[k] += f[k] * wgt;
                    }
                }
                let s = state.splats[i].as_ref().unwrap();
                let du = px - s.mean[0];
                let dv = py - s.mean[1];
                let power = s.conic[0] * du * du + 2.0 * s.conic[1] * du * dv + s.conic[2] * dv * dv;
                let gauss = libm::expf(-0.5 * power);
                if s.opacity * gauss > ALPHA_MAX {
                    continue; // clamped: alpha is locally constant
                }
                g_opacity[i] += g_alpha * gauss;
                let g_power = -0.5 * c.alpha * g_alpha;
                g_mean2d[i][0] += -g_power * (2.0 * s.conic[0] * du + 2.0 * s.conic[1] * dv);
                g_mean2d[i][1] += -g_power * (2.0 * s.conic[1] * du + 2.0 * s.conic[2] * dv);
                g_conic[i][0] += g_power * du * du;
                g_conic[i][1] += g_power * 2.0 * du * dv;
                g_conic[i][2] += g_power * dv * dv;
            }
        }
    }

    for i in 0..n {
        let Some(s) = state.splats[i].as_ref() else { continue };
        let o = s.opacity;
        grad.opacity_logits[i] = g_opacity[i] * o * (1.0 - o);

        // conic = Σ′⁻¹  ⇒  dL/dΣ′ = −Q·G_Q·Q with G_Q symmetric.
        let q = [[s.conic[0], s.conic[1]], [s.conic[1], s.conic[2]]];
        let gq = [[g_conic[i][0], 0.5 * g_conic[i][1]], [0.5 * g_conic[i][1], g_conic[i][2]]];
        let qg = mat2_mul(&q, &gq);
        let qgq = mat2_mul(&qg, &q);
        let g_cov2 = [[-qgq[0][0], -qgq[0][1]], [-qgq[1][0], -qgq[1][1]]];

        let t = s.cam_mean;
        let j = jacobian(cam, &t);
        // dL/dΣc = Jᵀ G J
        let mut g_cov_cam = [[0.0f32; 3]; 3];
        for r in 0..3 {
            for c in 0..3 {
                let mut acc = 0.0;
                for a in 0..2 {
                    for b in 0..2 {
                        acc += j[a][r] * g_cov2[a][b] * j[b][c];
                    }
                }
                g_cov_cam[r][c] = acc;
            }
        }
        // dL/dJ = 2 G J Σc
        let mut g_j = [[0.0f32; 3]; 2];
        for r in 0..2 {
            for c in 0..3 {
                let mut acc = 0.0;
                for a in 0..2 {
                    for b in 0..3 {
                        acc += g_cov2[r][a] * j[a][b] * s.cov_cam[b][c];
                    }
                }
                g_j[r][c] = 2.0 * acc;
            }
        }
        // dL/dΣ = Wᵀ dL/dΣc W
        let wr = &cam.rotation;
        let g_sigma = math::mat3_mul(&math::mat3_mul(&math::mat3_transpose(wr), &g_cov_cam), wr);

        let qn = math::quat_normalized(&cloud.rotations[i]);
        let r = math::quat_to_mat(&qn);
        let sc = cloud.scales(i);
        // M = R diag(s); dL/dM = 2 dL/dΣ M
        let mut mm = r;
        for row in mm.iter_mut() {
            for (k, v) in row.iter_mut().enumerate() {
                *v *= sc[k];
            }
        }
        let g_m = math::mat3_mul(&g_sigma, &mm);
        let mut g_r = [[0.0f32; 3]; 3];
        for a in 0..3 {
            for b in 0..3 {
                let gm = 2.0 * g_m[a][b];
                grad.log_scales[i][b] += gm * r[a][b] * sc[b];
                g_r[a][b] = gm * sc[b];
            }
        }
        grad.rotations[i] = quat_grad(&cloud.rotations[i], &qn, &g_r);

        // Mean: through the projected center and through J.
        let iz = 1.0 / t[2];
        let (fx, fy) = (cam.fx, cam.fy);
        let gm2 = g_mean2d[i];
        let mut g_t = [
            gm2[0] * fx * iz,
            gm2[1] * fy * iz,
            -(gm2[0] * fx * t[0] + gm2[1] * fy * t[1]) * iz * iz,
        ];
        g_t[0] += -g_j[0][2] * fx * iz * iz;
        g_t[1] += -g_j[1][2] * fy * iz * iz;
        g_t[2] += -g_j[0][0] * fx * iz * iz + 2.0 * g_j[0][2] * fx * t[0] * iz * iz * iz - g_j[1][1] * fy * iz * iz
            + 2.0 * g_j[1][2] * fy * t[1] * iz * iz * iz;
        grad.means[i] = math::mat3_vec(&math::mat3_transpose(wr), &g_t);
    }
    Ok(grad)
}

fn mat2_mul(a: &[[f32; 2]; 2], b: &[[f32; 2]; 2]) -> [[f32; 2]; 2] {
    [
        [a[0][0] * b[0][0] + a[0][1] * b[1][0], a[0][0] * b[0][1] + a[0][1] * b[1][1]],
        [a[1][0] * b[0][0] + a[1][1] * b[1][0], a[1][0] * b[0][1] + a[1][1] * b[1][1]],
    ]
}

/// Gradient with respect to the raw (unnormalized) quaternion, given the
/// gradient `g` with respect to the rotation matrix of its normalization `qn`.
fn quat_grad(raw: &[f32; 4], qn: &[f32; 4], g: &Mat3) -> [f32; 4] {
    let [w, x, y, z] = *qn;
    let gw = 2.0 * (-z * g[0][1] + y * g[0][2] + z * g[1][0] - x * g[1][2] - y * g[2][0] + x * g[2][1]);
    let gx = 2.0
        * (y * g[0][1] + z * g[0][2] + y * g[1][0] - 2.0 * x * g[1][1] - w * g[1][2] + z * g[2][0] + w * g[2][1]
            - 2.0 * x * g[2][2]);
    let gy = 2.0
        * (-2.0 * y * g[0][0] + x * g[0][1] + w * g[0][2] + x * g[1][0] + z * g[1][2] - w * g[2][0] + z * g[2][1]
            - 2.0 * y * g[2][2]);
    let gz = 2.0
        * (-2.0 * z * g[0][0] - w * g[0][1] + x * g[0][2] + w * g[1][0] - 2.0 * z * g[1][1] + y * g[1][2]
            + x * g[2][0]
            + y * g[2][1]);
    let gn = [gw, gx, gy, gz];
    let inv = 1.0 / math::norm(raw);
    let proj = math::dot(qn, &gn);
    [(gw - qn[0] * proj) * inv, (gx - qn[1] * proj) * inv, (gy - qn[2] * proj) * inv, (gz - qn[3] * proj) * inv]
}
