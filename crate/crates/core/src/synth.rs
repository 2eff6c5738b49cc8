//! Synthetic ground-truth scenes and brute-force oracles.
//!
//! Scenes are class-pure caps of flat Gaussians on the unit sphere, observed
//! by a ring of cameras. Per-pixel features are exact orthonormal prototypes
//! plus noise of total norm `noise`, so a clean pixel's best cosine is about
//! `1/sqrt(1 + noise²)`.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::cloud::GaussianCloud;
use crate::crr::MaskProvider;
use crate::error::{Error, Result};
use crate::geometry::{BBox, BinaryMask};
use crate::math::{self, Vec3};
use crate::scene::{CameraPose, LabelMap, QuerySet, Raster, View, IGNORE_LABEL};
use crate::splat::{self, Contribution, ForwardState, RenderMode, RenderOutput, TRANSMITTANCE_MIN};

/// Alpha below which a pixel is background.
pub const COVERAGE_MIN: f32 = 0.5;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSceneSpec {
    pub n_gaussians: usize,
    pub n_classes: usize,
    /// Training views.
    pub n_views: usize,
    /// Held-out views, placed between training cameras.
    pub test_views: usize,
    pub width: usize,
    pub height: usize,
    pub feature_dim: usize,
    /// Total norm of the per-pixel feature noise.
    pub noise: f32,
    /// Fraction of pixels covered by corruption blobs.
    pub corruption: f32,
    /// Total norm of the noise added to corrupted features.
    pub corruption_noise: f32,
    pub seed: u64,
    /// Focal length in pixels; `None` uses `1.25 * width`.
    pub focal: Option<f32>,
    pub camera_distance: f32,
}

impl Default for SynthSceneSpec {
    fn default() -> Self {
        Self {
            n_gaussians: 500,
            n_classes: 8,
            n_views: 20,
            test_views: 4,
            width: 64,
            height: 64,
            feature_dim: 64,
            noise: 0.05,
            corruption: 0.0,
            corruption_noise: DEFAULT_CORRUPTION_NOISE,
            seed: 0,
            focal: None,
            camera_distance: 3.5,
        }
    }
}

impl SynthSceneSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidSpec(m));
        if self.n_classes == 0 || self.n_classes > self.feature_dim {
            return bad(format!("need 1 <= classes <= feature dim, got {} and {}", self.n_classes, self.feature_dim));
        }
        if self.n_classes > IGNORE_LABEL as usize {
            return bad(format!("too many classes: {}", self.n_classes));
        }
        if self.n_gaussians < self.n_classes {
            return bad(format!("{} Gaussians cannot cover {} classes", self.n_gaussians, self.n_classes));
        }
        if self.n_views == 0 || self.width == 0 || self.height == 0 {
            return bad(String::from("views and image size must be positive"));
        }
        if !(0.0..1.0).contains(&self.corruption) {
            return bad(format!("corruption fraction must lie in [0, 1), got {}", self.corruption));
        }
        if !(self.corruption_noise >= 0.0 && self.corruption_noise.is_finite()) {
            return bad(format!("corruption noise must be finite and non-negative, got {}", self.corruption_noise));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return bad(format!("noise must be finite and non-negative, got {}", self.noise));
        }
        if !(self.camera_distance > 1.5 && self.camera_distance.is_finite()) {
            return bad(format!("camera distance must exceed 1.5, got {}", self.camera_distance));
        }
        if let Some(f) = self.focal {
            if !(f > 0.0 && f.is_finite()) {
                return bad(format!("focal must be positive, got {f}"));
            }
        }
        Ok(())
    }

    pub fn focal(&self) -> f32 {
        self.focal.unwrap_or(1.25 * self.width as f32)
    }
}

#[derive(Debug, Clone)]
pub struct SynthScene {
    pub spec: SynthSceneSpec,
    /// Ground-truth cloud; each Gaussian carries its class prototype.
    pub cloud: GaussianCloud,
    pub classes: Vec<u16>,
    /// Orthonormal prototypes, labelled `class<k>`.
    pub prototypes: QuerySet,
    /// Training views. Mask proposals hold GT instance ids, `class + 1` with
    /// one object per class and 0 for unassigned pixels.
    pub views: Vec<View>,
    pub labels: Vec<LabelMap>,
    pub test_views: Vec<View>,
    pub test_labels: Vec<LabelMap>,
}

impl SynthScene {
    pub fn class_name(k: usize) -> String {
        format!("class{k}")
    }
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

const GEOMETRY_STREAM: u64 = 0;
const VIEW_STREAM: u64 = 1 << 32;

/// Cap centers on two latitude rings, offset in longitude.
fn cap_centers(k: usize) -> Vec<Vec3> {
    let upper = k.div_ceil(2);
    let lower = k - upper;
    let lat = 25f32.to_radians();
    let mut out = Vec::with_capacity(k);
    for (count, sign, offset) in [(upper, 1.0f32, 0.0f32), (lower, -1.0, 0.5)] {
        for j in 0..count {
            let lon = core::f32::consts::TAU * (j as f32 + offset) / count as f32;
            out.push([
                libm::cosf(lat) * libm::cosf(lon),
                sign * libm::sinf(lat),
                libm::cosf(lat) * libm::sinf(lon),
            ]);
        }
    }
    out
}

fn cap_radius(centers: &[Vec3]) -> f32 {
    let mut min_angle = core::f32::consts::PI;
    for (i, a) in centers.iter().enumerate() {
        for b in &centers[i + 1..] {
            min_angle = min_angle.min(libm::acosf(math::dot(a, b).clamp(-1.0, 1.0)));
        }
    }
    (0.4 * min_angle).min(0.6)
}

/// Orthonormal tangent frame `(t1, t2)` at unit vector `n`.
fn tangent_frame(n: &Vec3) -> (Vec3, Vec3) {
    let helper = if n[0].abs() < 0.9 { [1.0, 0.0, 0.0] } else { [0.0, 1.0, 0.0] };
    let mut t1 = cross(&helper, n);
    math::normalize_in_place(&mut t1);
    let t2 = cross(n, &t1);
    (t1, t2)
}

fn cross(a: &Vec3, b: &Vec3) -> Vec3 {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

/// Unit quaternion rotating `+z` onto unit vector `n`.
fn quat_z_to(n: &Vec3) -> [f32; 4] {
    if n[2] < -1.0 + 1e-6 {
        return [0.0, 1.0, 0.0, 0.0];
    }
    math::quat_normalized(&[1.0 + n[2], -n[1], n[0], 0.0])
}

fn ring_camera(spec: &SynthSceneSpec, azimuth: f32, elevation: f32) -> CameraPose {
    let d = spec.camera_distance;
    let eye = [
        d * libm::cosf(elevation) * libm::cosf(azimuth),
        d * libm::sinf(elevation),
        d * libm::cosf(elevation) * libm::sinf(azimuth),
    ];
    let f = spec.focal();
    CameraPose::look_at(eye, [0.0; 3], [0.0, 1.0, 0.0], f, f, spec.width as u32, spec.height as u32)
}

/// Training cameras on a ring at alternating ±20° elevation; test cameras
/// halfway between them at ±10°.
pub fn camera_ring(spec: &SynthSceneSpec) -> (Vec<CameraPose>, Vec<CameraPose>) {
    let tau = core::f32::consts::TAU;
    let train = (0..spec.n_views)
        .map(|i| {
            let el = if i % 2 == 0 { 20f32 } else { -20.0 };
            ring_camera(spec, tau * i as f32 / spec.n_views as f32, el.to_radians())
        })
        .collect();
    let test = (0..spec.test_views)
        .map(|j| {
            let el = if j % 2 == 0 { 10f32 } else { -10.0 };
            let az = tau * (j as f32 + 0.5) / spec.test_views.max(1) as f32 + 0.5 * tau / spec.n_views as f32;
            ring_camera(spec, az, el.to_radians())
        })
        .collect();
    (train, test)
}

/// Builds a deterministic scene from `spec`.
pub fn make_scene(spec: &SynthSceneSpec) -> Result<SynthScene> {
    spec.validate()?;
    let k = spec.n_classes;
    let d = spec.feature_dim;
    let mut rng = stream(spec.seed, GEOMETRY_STREAM);

    // Signed permutation of the standard basis: exactly orthonormal.
    let mut axes: Vec<usize> = (0..d).collect();
    axes.shuffle(&mut rng);
    let mut protos = vec![0.0f32; k * d];
    for c in 0..k {
        protos[c * d + axes[c]] = if rng.random::<bool>() { 1.0 } else { -1.0 };
    }
    let prototypes = QuerySet::new((0..k).map(SynthScene::class_name).collect(), d, protos)?;

    let centers = cap_centers(k);
    let radius = cap_radius(&centers);
    let cos_r = libm::cosf(radius);
    let per_class = spec.n_gaussians.div_ceil(k) as f32;
    let cap_area = core::f32::consts::TAU * (1.0 - cos_r);
    let tangential = 0.6 * libm::sqrtf(cap_area / per_class);
    let class_colors: Vec<Vec3> = (0..k)
        .map(|_| [rng.random_range(0.15f32..0.95), rng.random_range(0.15f32..0.95), rng.random_range(0.15f32..0.95)])
        .collect();

    let mut cloud = GaussianCloud::with_capacity(spec.n_gaussians, d);
    let mut classes = Vec::with_capacity(spec.n_gaussians);
    for i in 0..spec.n_gaussians {
        let c = i % k;
        let axis = centers[c];
        let (t1, t2) = tangent_frame(&axis);
        // Uniform over the cap's solid angle.
        let cos_t = rng.random_range(cos_r..=1.0f32);
        let sin_t = libm::sqrtf((1.0 - cos_t * cos_t).max(0.0));
        let phi = rng.random_range(0.0..core::f32::consts::TAU);
        let (sp, cp) = (libm::sinf(phi), libm::cosf(phi));
        let n: Vec3 = core::array::from_fn(|j| cos_t * axis[j] + sin_t * (cp * t1[j] + sp * t2[j]));
        let n = {
            let mut n = n;
            math::normalize_in_place(&mut n);
            n
        };
        let s1 = tangential * rng.random_range(0.85f32..1.15);
        let s2 = tangential * rng.random_range(0.85f32..1.15);
        let log_scale = [libm::logf(s1), libm::logf(s2), libm::logf(0.01)];
        let logit = rng.random_range(2.0f32..2.4);
        let base = class_colors[c];
        let color = core::array::from_fn(|j| (base[j] + rng.random_range(-0.05f32..0.05)).clamp(0.0, 1.0));
        cloud.push(n, quat_z_to(&n), log_scale, logit, color, prototypes.row(c));
        classes.push(c as u16);
    }

    let (train_cams, test_cams) = camera_ring(spec);
    let mut views = Vec::with_capacity(train_cams.len());
    let mut labels = Vec::with_capacity(train_cams.len());
    for (v, cam) in train_cams.into_iter().enumerate() {
        let (view, lab) = gt_view(spec, &cloud, &classes, &prototypes, cam, VIEW_STREAM + v as u64)?;
        views.push(view);
        labels.push(lab);
    }
    let mut test_views = Vec::with_capacity(test_cams.len());
    let mut test_labels = Vec::with_capacity(test_cams.len());
    for (v, cam) in test_cams.into_iter().enumerate() {
        let (view, lab) = gt_view(spec, &cloud, &classes, &prototypes, cam, 2 * VIEW_STREAM + v as u64)?;
        test_views.push(view);
        test_labels.push(lab);
    }
    let mut scene = SynthScene { spec: spec.clone(), cloud, classes, prototypes, views, labels, test_views, test_labels };
    if spec.corruption > 0.0 {
        let views = corrupt_views(&scene, spec.corruption, spec.seed)?;
        scene.views = views.views;
    }
    Ok(scene)
}

/// Per pixel, the class with the largest summed blending weight, or `None`
/// when coverage is below [`COVERAGE_MIN`]. Ties go to the lowest class.
pub fn dominant_class(contribs: &[Contribution], classes: &[u16], n_classes: usize) -> Option<(u16, f32)> {
    let total: f32 = contribs.iter().map(Contribution::weight).sum();
    if total < COVERAGE_MIN {
        return None;
    }
    let mut weight = vec![0.0f32; n_classes];
    for c in contribs {
        weight[classes[c.gaussian as usize] as usize] += c.weight();
    }
    let best = math::argmax(&weight);
    Some((best as u16, weight[best]))
}

/// Depth along the pixel ray where it meets the unit sphere, choosing the root
/// nearest `near`. Falls back to `near` when the ray misses.
fn shell_depth(cam: &CameraPose, x: usize, y: usize, near: f32) -> f32 {
    let d_cam = [((x as f32 - cam.cx) / cam.fx) as f64, ((y as f32 - cam.cy) / cam.fy) as f64, 1.0f64];
    let r = &cam.rotation;
    let w: [f64; 3] = core::array::from_fn(|j| (0..3).map(|i| r[i][j] as f64 * d_cam[i]).sum());
    let c = cam.center();
    let c = [c[0] as f64, c[1] as f64, c[2] as f64];
    let a = w[0] * w[0] + w[1] * w[1] + w[2] * w[2];
    let b = 2.0 * (c[0] * w[0] + c[1] * w[1] + c[2] * w[2]);
    let cc = c[0] * c[0] + c[1] * c[1] + c[2] * c[2] - 1.0;
    let disc = b * b - 4.0 * a * cc;
    if disc < 0.0 {
        return near;
    }
    let s = libm::sqrt(disc);
    let (z0, z1) = ((-b - s) / (2.0 * a), (-b + s) / (2.0 * a));
    let near = near as f64;
    let z = if (z0 - near).abs() <= (z1 - near).abs() { z0 } else { z1 };
    if z > 0.0 {
        z as f32
    } else {
        near as f32
    }
}

fn gt_view(
    spec: &SynthSceneSpec,
    cloud: &GaussianCloud,
    classes: &[u16],
    prototypes: &QuerySet,
    cam: CameraPose,
    stream_id: u64,
) -> Result<(View, LabelMap)> {
    cam.validate()?;
    let (w, h) = (spec.width, spec.height);
    let d = spec.feature_dim;
    let out = naive_render(cloud, &cam, RenderMode::Color);
    let mut rng = stream(spec.seed, stream_id);
    let mut labels = Raster::filled(w, h, 1, IGNORE_LABEL);
    let mut depth = Raster::filled(w, h, 1, 0.0f32);
    let mut feats = Raster::filled(w, h, d, 0.0f32);
    let splats = &out.state.as_ref().expect("naive render keeps state").splats;
    let scale = spec.noise / libm::sqrtf(d as f32);
    for y in 0..h {
        for x in 0..w {
            let contribs = out.contributions(x, y);
            let Some((c, weight)) = dominant_class(contribs, classes, spec.n_classes) else { continue };
            let mean_depth = contribs
                .iter()
                .filter(|t| classes[t.gaussian as usize] == c)
                .map(|t| t.weight() * splats[t.gaussian as usize].as_ref().unwrap().depth)
                .sum::<f32>()
                / weight;
            labels.set(x, y, c);
            depth.set(x, y, shell_depth(&cam, x, y, mean_depth));
            let px = feats.pixel_mut(x, y);
            px.copy_from_slice(prototypes.row(c as usize));
            for v in px.iter_mut() {
                let n: f32 = rng.sample(StandardNormal);
                *v += scale * n;
            }
        }
    }
    let instances = Raster::from_data(w, h, 1, labels.data.iter().map(|&l| if l == IGNORE_LABEL { 0 } else { l + 1 }).collect())?;
    let view = View { camera: cam, rgb: out.color, depth, features: Some(feats), mask_proposals: Some(instances) };
    Ok((view, labels))
}

/// Reference renderer: every pixel walks all projected Gaussians in depth
/// order, with no tiling.
pub fn naive_render(cloud: &GaussianCloud, cam: &CameraPose, mode: RenderMode) -> RenderOutput {
    let (w, h) = (cam.width as usize, cam.height as usize);
    let d = cloud.feature_dim;
    let splats = splat::project_all(cloud, cam);
    let order = splat::depth_order(&splats);
    let mut color = Raster::filled(w, h, 3, 0.0f32);
    let mut features = Raster::filled(w, h, d, 0.0f32);
    let mut alpha = Raster::filled(w, h, 1, 0.0f32);
    let mut ranges = vec![(0u32, 0u32); w * h];
    let mut contributions = Vec::new();
    let with_color = matches!(mode, RenderMode::Color | RenderMode::Both);
    let with_features = matches!(mode, RenderMode::Feature | RenderMode::Both);
    for y in 0..h {
        for x in 0..w {
            let start = contributions.len() as u32;
            let mut t = 1.0f32;
            for &i in &order {
                let s = splats[i].as_ref().unwrap();
                let Some(a) = splat::splat_alpha(s, x as f32, y as f32) else { continue };
                if t * (1.0 - a) < TRANSMITTANCE_MIN {
                    break;
                }
                let weight = a * t;
                if with_color {
                    for (o, c) in color.pixel_mut(x, y).iter_mut().zip(&cloud.colors[i]) {
                        *o += c * weight;
                    }
                }
                if with_features {
                    for (o, f) in features.pixel_mut(x, y).iter_mut().zip(cloud.feature(i)) {
                        *o += f * weight;
                    }
                }
                contributions.push(Contribution { gaussian: i as u32, alpha: a, transmittance: t });
                t *= 1.0 - a;
            }
            ranges[y * w + x] = (start, contributions.len() as u32);
            alpha.set(x, y, 1.0 - t);
        }
    }
    RenderOutput { color, features, alpha, state: Some(ForwardState { splats, ranges, contributions, mode }) }
}

/// Views after corruption, plus which pixels had their features replaced.
#[derive(Debug, Clone)]
pub struct CorruptedViews {
    pub views: Vec<View>,
    pub corrupted: Vec<BinaryMask>,
}

/// Default total norm of the noise added to corrupted features; puts the
/// corrupted confidence near `1/sqrt(1 + 2.5²) ≈ 0.37`.
pub const DEFAULT_CORRUPTION_NOISE: f32 = 2.5;

/// Grows seeded discs until exactly `round(fraction * w * h)` pixels are covered.
fn blob_mask(w: usize, h: usize, fraction: f32, rng: &mut ChaCha8Rng) -> (BinaryMask, Vec<Vec<(u32, u32)>>) {
    let target = libm::roundf(fraction * (w * h) as f32) as usize;
    let mut mask = BinaryMask::empty(w, h);
    let mut blobs = Vec::new();
    let mut covered = 0;
    let side = w.min(h) as f32;
    while covered < target {
        let cx = rng.random_range(0..w) as f32;
        let cy = rng.random_range(0..h) as f32;
        let r = (side * rng.random_range(0.04f32..0.1)).max(1.5);
        let mut disc: Vec<(f32, u32, u32)> = Vec::new();
        let (x0, x1) = (libm::floorf(cx - r).max(0.0) as usize, (libm::ceilf(cx + r) as usize).min(w - 1));
        let (y0, y1) = (libm::floorf(cy - r).max(0.0) as usize, (libm::ceilf(cy + r) as usize).min(h - 1));
        for y in y0..=y1 {
            for x in x0..=x1 {
                let (dx, dy) = (x as f32 - cx, y as f32 - cy);
                let d2 = dx * dx + dy * dy;
                if d2 <= r * r && !mask.bits[y * w + x] {
                    disc.push((d2, x as u32, y as u32));
                }
            }
        }
        disc.sort_by(|a, b| a.0.total_cmp(&b.0).then((a.2, a.1).cmp(&(b.2, b.1))));
        let take = disc.len().min(target - covered);
        let blob: Vec<(u32, u32)> = disc[..take].iter().map(|&(_, x, y)| (x, y)).collect();
        for &(x, y) in &blob {
            mask.bits[y as usize * w + x as usize] = true;
        }
        covered += take;
        if !blob.is_empty() {
            blobs.push(blob);
        }
    }
    (mask, blobs)
}

/// Replaces features inside seeded blobs covering `fraction` of each view
/// with a wrong prototype plus strong noise, and punches separate blob-shaped
/// holes into the instance masks. Every view draws from its own stream.
pub fn corrupt_views(scene: &SynthScene, fraction: f32, seed: u64) -> Result<CorruptedViews> {
    if !(0.0..1.0).contains(&fraction) {
        return Err(Error::InvalidSpec(format!("corruption fraction must lie in [0, 1), got {fraction}")));
    }
    let k = scene.spec.n_classes;
    let d = scene.prototypes.dim();
    let scale = scene.spec.corruption_noise / libm::sqrtf(d as f32);
    let mut views = Vec::with_capacity(scene.views.len());
    let mut corrupted = Vec::with_capacity(scene.views.len());
    for (v, view) in scene.views.iter().enumerate() {
        let mut view = view.clone();
        let (w, h) = (view.width(), view.height());
        if fraction == 0.0 {
            corrupted.push(BinaryMask::empty(w, h));
            views.push(view);
            continue;
        }
        let mut rng = stream(seed ^ 0x5eed_c0de, 3 * VIEW_STREAM + v as u64);
        let (mask, blobs) = blob_mask(w, h, fraction, &mut rng);
        let feats = view.features.as_mut().ok_or(Error::MissingFeatures(v))?;
        for blob in &blobs {
            let wrong = rng.random_range(0..k);
            for &(x, y) in blob {
                let (x, y) = (x as usize, y as usize);
                let truth = scene.labels[v].get(x, y);
                let c = if k > 1 && truth as usize == wrong { (wrong + 1) % k } else { wrong };
                let px = feats.pixel_mut(x, y);
                px.copy_from_slice(scene.prototypes.row(c));
                for f in px.iter_mut() {
                    let n: f32 = rng.sample(StandardNormal);
                    *f += scale * n;
                }
            }
        }
        if let Some(inst) = view.mask_proposals.as_mut() {
            let (holes, _) = blob_mask(w, h, fraction, &mut rng);
            for (x, y) in holes.pixels() {
                inst.set(x as usize, y as usize, 0);
            }
        }
        corrupted.push(mask);
        views.push(view);
    }
    Ok(CorruptedViews { views, corrupted })
}

/// Answers each box with the whole instance whose bounding box has the
/// highest IoU with the prompt (lowest id on ties), or an empty mask when no
/// instance has a pixel inside the box. Instance id 0 is unassigned.
#[derive(Debug, Clone)]
pub struct OracleMaskProvider {
    instances: Vec<LabelMap>,
    /// Per view, `(id, bbox)` of every instance present, ascending id.
    boxes: Vec<Vec<(u16, BBox)>>,
    pub calls: usize,
}

fn box_iou(a: &BBox, b: &BBox) -> f64 {
    let iw = (a.u_max.min(b.u_max) as i64 - a.u_min.max(b.u_min) as i64 + 1).max(0);
    let ih = (a.v_max.min(b.v_max) as i64 - a.v_min.max(b.v_min) as i64 + 1).max(0);
    let inter = (iw * ih) as f64;
    inter / (a.area() as f64 + b.area() as f64 - inter)
}

impl OracleMaskProvider {
    pub fn new(instances: Vec<LabelMap>) -> Self {
        let boxes = instances
            .iter()
            .map(|inst| {
                let mut found: BTreeMap<u16, BBox> = BTreeMap::new();
                for y in 0..inst.height {
                    for x in 0..inst.width {
                        let id = inst.get(x, y);
                        if id == 0 {
                            continue;
                        }
                        let (x, y) = (x as u32, y as u32);
                        found
                            .entry(id)
                            .and_modify(|b| {
                                b.u_min = b.u_min.min(x);
                                b.u_max = b.u_max.max(x);
                                b.v_min = b.v_min.min(y);
                                b.v_max = b.v_max.max(y);
                            })
                            .or_insert(BBox { u_min: x, v_min: y, u_max: x, v_max: y });
                    }
                }
                found.into_iter().collect()
            })
            .collect();
        Self { instances, boxes, calls: 0 }
    }

    /// Uses each view's mask proposals (possibly corrupted).
    pub fn from_views(views: &[View]) -> Result<Self> {
        let instances = views
            .iter()
            .enumerate()
            .map(|(i, v)| v.mask_proposals.clone().ok_or_else(|| Error::ProviderFailure(format!("view {i} has no instance masks"))))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self::new(instances))
    }
}

impl MaskProvider for OracleMaskProvider {
    fn masks(&mut self, view: usize, boxes: &[BBox]) -> Result<Vec<BinaryMask>> {
        self.calls += 1;
        let inst = self
            .instances
            .get(view)
            .ok_or_else(|| Error::ProviderFailure(format!("no instance masks for view {view}")))?;
        let (w, h) = (inst.width, inst.height);
        let mut out = Vec::with_capacity(boxes.len());
        for b in boxes {
            let inside = |id: u16| {
                (b.v_min as usize..=(b.v_max as usize).min(h.saturating_sub(1)))
                    .any(|y| (b.u_min as usize..=(b.u_max as usize).min(w.saturating_sub(1))).any(|x| inst.get(x, y) == id))
            };
            let mut best: Option<(u16, f64)> = None;
            for (id, ib) in &self.boxes[view] {
                let score = box_iou(ib, b);
                if score > 0.0 && best.is_none_or(|(_, s)| score > s) && inside(*id) {
                    best = Some((*id, score));
                }
            }
            let mut mask = BinaryMask::empty(w, h);
            if let Some((id, _)) = best {
                for (bit, &v) in mask.bits.iter_mut().zip(&inst.data) {
                    *bit = v == id;
                }
            }
            out.push(mask);
        }
        Ok(out)
    }
}

/// Surface seen through one pixel, found by scanning every Gaussian along the
/// ray: composites all of them front to back (depth, then index) and reports
/// the class with the largest blended weight together with that class's
/// weighted mean depth. `None` when coverage stays below [`COVERAGE_MIN`].
pub fn ray_visible_class(cloud: &GaussianCloud, classes: &[u16], n_classes: usize, cam: &CameraPose, x: usize, y: usize) -> Option<(u16, f32)> {
    let mut hits: Vec<(f32, usize, f32)> = Vec::new();
    for i in 0..cloud.len() {
        let Ok(s) = splat::project_gaussian(cloud, i, cam) else { continue };
        if let Some(a) = splat::splat_alpha(&s, x as f32, y as f32) {
            hits.push((s.depth, i, a));
        }
    }
    hits.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let mut weight = vec![0.0f32; n_classes];
    let mut depth = vec![0.0f32; n_classes];
    let mut t = 1.0f32;
    for (z, i, a) in hits {
        if t * (1.0 - a) < TRANSMITTANCE_MIN {
            break;
        }
        let c = classes[i] as usize;
        weight[c] += a * t;
        depth[c] += a * t * z;
        t *= 1.0 - a;
    }
    if 1.0 - t < COVERAGE_MIN {
        return None;
    }
    let best = math::argmax(&weight);
    Some((best as u16, depth[best] / weight[best]))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SynthSceneSpec {
        SynthSceneSpec { n_gaussians: 120, n_views: 4, test_views: 2, width: 32, height: 32, feature_dim: 16, ..Default::default() }
    }

    #[test]
    fn two_gaussians_two_orthogonal_prototypes() {
        let spec = SynthSceneSpec { n_gaussians: 2, n_classes: 2, n_views: 1, test_views: 0, width: 16, height: 16, feature_dim: 4, ..Default::default() };
        let s = make_scene(&spec).unwrap();
        assert_eq!(s.classes, vec![0, 1]);
        assert_eq!(math::dot(s.prototypes.row(0), s.prototypes.row(1)), 0.0);
        assert_eq!(math::norm(s.prototypes.row(0)), 1.0);
    }

    #[test]
    fn same_seed_same_scene() {
        let a = make_scene(&small()).unwrap();
        let b = make_scene(&small()).unwrap();
        assert_eq!(a.cloud, b.cloud);
        assert_eq!(a.views, b.views);
        assert_eq!(a.labels, b.labels);
    }

    #[test]
    fn invalid_specs_are_rejected() {
        for spec in [
            SynthSceneSpec { n_classes: 20, feature_dim: 8, ..small() },
            SynthSceneSpec { corruption: 1.0, ..small() },
            SynthSceneSpec { n_views: 0, ..small() },
        ] {
            assert!(matches!(make_scene(&spec), Err(Error::InvalidSpec(_))));
        }
    }

    #[test]
    fn zero_corruption_leaves_views_unchanged() {
        let s = make_scene(&small()).unwrap();
        let c = corrupt_views(&s, 0.0, 9).unwrap();
        assert_eq!(c.views, s.views);
    }

    #[test]
    fn corruption_fraction_is_exact() {
        let s = make_scene(&small()).unwrap();
        let c = corrupt_views(&s, 0.2, 1).unwrap();
        for m in &c.corrupted {
            let f = m.count() as f32 / (32.0 * 32.0);
            assert!((0.18..=0.22).contains(&f), "{f}");
        }
        assert_ne!(c.corrupted[0], c.corrupted[1]);
    }

    #[test]
    fn oracle_returns_boxed_instance_or_empty() {
        let mut inst = Raster::filled(6, 4, 1, 0u16);
        for y in 1..3 {
            for x in 1..3 {
                inst.set(x, y, 2u16);
            }
        }
        inst.set(5, 3, 4);
        let mut p = OracleMaskProvider::new(vec![inst]);
        let boxes = [BBox { u_min: 1, v_min: 1, u_max: 2, v_max: 2 }, BBox { u_min: 4, v_min: 0, u_max: 4, v_max: 0 }];
        let m = p.masks(0, &boxes).unwrap();
        assert_eq!(m[0].count(), 4);
        assert!(m[0].get(1, 1) && m[0].get(2, 2));
        assert_eq!(m[1].count(), 0);
    }
}
