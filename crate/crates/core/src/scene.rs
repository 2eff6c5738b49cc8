//! Scene data: cameras, rasters, views and query embeddings.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math::{self, Mat3, Vec3};

/// Label value marking a pixel that carries no supervision.
pub const IGNORE_LABEL: u16 = 0xFFFF;

/// Pinhole intrinsics plus a world-to-camera rigid transform.
///
/// Camera frame convention: `x` right, `y` down, `z` forward. Pixel centers sit
/// at integer coordinates, `u` along the width.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraPose {
    pub fx: f32,
    pub fy: f32,
    pub cx: f32,
    pub cy: f32,
    /// Row-major world-to-camera rotation.
    pub rotation: Mat3,
    pub translation: Vec3,
    pub width: u32,
    pub height: u32,
}

impl CameraPose {
    /// Identity pose with the given intrinsics.
    pub fn identity(fx: f32, fy: f32, cx: f32, cy: f32, width: u32, height: u32) -> Self {
        Self { fx, fy, cx, cy, rotation: math::IDENTITY3, translation: [0.0; 3], width, height }
    }

    /// Camera at `eye` looking at `target`, with `up` the world up direction.
    pub fn look_at(eye: Vec3, target: Vec3, up: Vec3, fx: f32, fy: f32, width: u32, height: u32) -> Self {
        let forward = unit(math::sub3(&target, &eye));
        let right = unit(cross(&forward, &up));
        let down = cross(&forward, &right);
        let rotation = [right, down, forward];
        let r_eye = math::mat3_vec(&rotation, &eye);
        Self {
            fx,
            fy,
            cx: (width as f32 - 1.0) * 0.5,
            cy: (height as f32 - 1.0) * 0.5,
            rotation,
            translation: [-r_eye[0], -r_eye[1], -r_eye[2]],
            width,
            height,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::InvalidCamera(format!("focal lengths must be positive ({}, {})", self.fx, self.fy)));
        }
        if !(self.cx > 0.0 && self.cx < self.width as f32 && self.cy > 0.0 && self.cy < self.height as f32) {
            return Err(Error::InvalidCamera(format!("principal point ({}, {}) outside image", self.cx, self.cy)));
        }
        let r = &self.rotation;
        let rrt = math::mat3_mul(r, &math::mat3_transpose(r));
        for (i, row) in rrt.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                let e = if i == j { 1.0 } else { 0.0 };
                if (v - e).abs() > 1e-5 {
                    return Err(Error::InvalidCamera(String::from("rotation is not orthonormal")));
                }
            }
        }
        if math::mat3_det(r) <= 0.0 {
            return Err(Error::InvalidCamera(String::from("rotation has negative determinant")));
        }
        if self.translation.iter().chain(r.iter().flatten()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidCamera(String::from("non-finite extrinsics")));
        }
        Ok(())
    }

    /// World point to camera frame, in double precision.
    pub fn to_camera(&self, p: &[f64; 3]) -> [f64; 3] {
        let mut out = [0.0f64; 3];
        for (i, o) in out.iter_mut().enumerate() {
            let r = &self.rotation[i];
            *o = r[0] as f64 * p[0] + r[1] as f64 * p[1] + r[2] as f64 * p[2] + self.translation[i] as f64;
        }
        out
    }

    /// Camera-frame point to world frame. Uses the exact inverse of the stored
    /// rotation, so `to_camera(to_world(c)) == c` up to f64 rounding even when
    /// the f32 rotation is not perfectly orthonormal.
    pub fn to_world(&self, c: &[f64; 3]) -> [f64; 3] {
        let r = self.rotation.map(|row| row.map(f64::from));
        let d = [
            c[0] - self.translation[0] as f64,
            c[1] - self.translation[1] as f64,
            c[2] - self.translation[2] as f64,
        ];
        let cof = |i: usize, j: usize| {
            let (i1, i2) = ((i + 1) % 3, (i + 2) % 3);
            let (j1, j2) = ((j + 1) % 3, (j + 2) % 3);
            r[i1][j1] * r[i2][j2] - r[i1][j2] * r[i2][j1]
        };
        let det = r[0][0] * cof(0, 0) + r[0][1] * cof(0, 1) + r[0][2] * cof(0, 2);
        let mut out = [0.0f64; 3];
        for (j, o) in out.iter_mut().enumerate() {
            // inverse[j][i] = cof(i, j) / det
            *o = (cof(0, j) * d[0] + cof(1, j) * d[1] + cof(2, j) * d[2]) / det;
        }
        out
    }

    /// Camera center in world coordinates.
    pub fn center(&self) -> Vec3 {
        self.to_world(&[0.0; 3]).map(|v| v as f32)
    }

    pub fn pixel_count(&self) -> usize {
        self.width as usize * self.height as usize
    }
}

fn cross(a: &Vec3, b: &Vec3) -> Vec3 {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

fn unit(v: Vec3) -> Vec3 {
    let n = math::norm(&v);
    [v[0] / n, v[1] / n, v[2] / n]
}

/// A dense row-major image with `channels` values per pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct Raster<T> {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<T>,
}

impl<T: Copy> Raster<T> {
    pub fn filled(width: usize, height: usize, channels: usize, value: T) -> Self {
        Self { width, height, channels, data: vec![value; width * height * channels] }
    }

    pub fn from_data(width: usize, height: usize, channels: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != width * height * channels {
            return Err(Error::ShapeMismatch(format!(
                "raster {}x{}x{} needs {} values, got {}",
                height,
                width,
                channels,
                width * height * channels,
                data.len()
            )));
        }
        Ok(Self { width, height, channels, data })
    }

    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> &[T] {
        let i = (y * self.width + x) * self.channels;
        &self.data[i..i + self.channels]
    }

    #[inline]
    pub fn pixel_mut(&mut self, x: usize, y: usize) -> &mut [T] {
        let i = (y * self.width + x) * self.channels;
        &mut self.data[i..i + self.channels]
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> T {
        self.data[(y * self.width + x) * self.channels]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: T) {
        self.data[(y * self.width + x) * self.channels] = v;
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    pub fn same_size(&self, w: usize, h: usize) -> bool {
        self.width == w && self.height == h
    }
}

pub type LabelMap = Raster<u16>;

/// One posed observation of the scene.
#[derive(Debug, Clone, PartialEq)]
pub struct View {
    pub camera: CameraPose,
    /// `H×W×3`, values in `[0, 1]`.
    pub rgb: Raster<f32>,
    /// Metric depth; `0` marks an invalid pixel.
    pub depth: Raster<f32>,
    /// Optional per-pixel semantic features.
    pub features: Option<Raster<f32>>,
    /// Optional region-id map, `0` = unassigned.
    pub mask_proposals: Option<Raster<u16>>,
}

impl View {
    pub fn width(&self) -> usize {
        self.camera.width as usize
    }

    pub fn height(&self) -> usize {
        self.camera.height as usize
    }

    pub fn validate(&self) -> Result<()> {
        self.camera.validate()?;
        let (w, h) = (self.width(), self.height());
        let check = |name: &str, rw: usize, rh: usize, c: usize, want_c: Option<usize>| -> Result<()> {
            if rw != w || rh != h || want_c.is_some_and(|wc| wc != c) {
                return Err(Error::ShapeMismatch(format!(
                    "{name} raster is {rw}x{rh}x{c}, camera is {w}x{h}"
                )));
            }
            Ok(())
        };
        check("rgb", self.rgb.width, self.rgb.height, self.rgb.channels, Some(3))?;
        check("depth", self.depth.width, self.depth.height, self.depth.channels, Some(1))?;
        if self.depth.data.iter().any(|d| !(d.is_finite() && *d >= 0.0)) {
            return Err(Error::ShapeMismatch(String::from("depth values must be finite and non-negative")));
        }
        if let Some(f) = &self.features {
            check("feature", f.width, f.height, f.channels, None)?;
            if f.data.iter().any(|v| !v.is_finite()) {
                return Err(Error::ShapeMismatch(String::from("feature map contains non-finite values")));
            }
        }
        if let Some(m) = &self.mask_proposals {
            check("mask", m.width, m.height, m.channels, Some(1))?;
        }
        Ok(())
    }

    /// Valid depth at an integer pixel, if any.
    #[inline]
    pub fn depth_at(&self, x: usize, y: usize) -> Option<f32> {
        let d = self.depth.get(x, y);
        (d > 0.0).then_some(d)
    }
}

/// Labeled, unit-norm query embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct QuerySet {
    labels: Vec<String>,
    dim: usize,
    embeddings: Vec<f32>,
}

impl QuerySet {
    /// Builds a query set. Rows within `1e-3` of unit norm are re-normalized
    /// (rows already within `1e-5` are kept bit-for-bit); others are rejected.
    pub fn new(labels: Vec<String>, dim: usize, mut embeddings: Vec<f32>) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::InvalidQuerySet(String::from("at least one query is required")));
        }
        if dim == 0 || embeddings.len() != labels.len() * dim {
            return Err(Error::InvalidQuerySet(format!(
                "{} labels need {} values of width {dim}, got {}",
                labels.len(),
                labels.len() * dim,
                embeddings.len()
            )));
        }
        let mut seen = BTreeSet::new();
        for l in &labels {
            if !seen.insert(l.as_str()) {
                return Err(Error::DuplicateLabel(l.clone()));
            }
        }
        for (row, chunk) in embeddings.chunks_exact_mut(dim).enumerate() {
            let n = math::norm(chunk);
            if !n.is_finite() || (n - 1.0).abs() > 1e-3 {
                return Err(Error::NonUnitEmbedding { row, norm: n });
            }
            if (n - 1.0).abs() > 1e-5 {
                math::normalize_in_place(chunk);
            }
        }
        Ok(Self { labels, dim, embeddings })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    /// Row-major `K×D` embedding matrix.
    pub fn embeddings(&self) -> &[f32] {
        &self.embeddings
    }

    pub fn row(&self, k: usize) -> &[f32] {
        &self.embeddings[k * self.dim..(k + 1) * self.dim]
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    /// Confidence and best class of a feature: max cosine over the queries.
    pub fn classify(&self, feature: &[f32]) -> (usize, f32) {
        math::argmax_cosine(feature, &self.embeddings, self.dim)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::ToString;

    #[test]
    fn look_at_camera_is_valid_and_sees_target_on_axis() {
        let cam = CameraPose::look_at([3.0, 1.0, 0.5], [0.0; 3], [0.0, 0.0, 1.0], 50.0, 50.0, 64, 48);
        cam.validate().unwrap();
        let c = cam.to_camera(&[0.0; 3]);
        assert!(c[0].abs() < 1e-5 && c[1].abs() < 1e-5 && c[2] > 0.0);
        let eye = cam.center();
        assert!((eye[0] - 3.0).abs() < 1e-5 && (eye[1] - 1.0).abs() < 1e-5 && (eye[2] - 0.5).abs() < 1e-5);
    }

    #[test]
    fn rejects_bad_cameras() {
        let mut cam = CameraPose::identity(10.0, 10.0, 4.0, 4.0, 8, 8);
        cam.validate().unwrap();
        cam.fx = 0.0;
        assert!(cam.validate().is_err());
        let mut cam = CameraPose::identity(10.0, 10.0, 4.0, 4.0, 8, 8);
        cam.rotation[0][0] = -1.0;
        assert!(cam.validate().is_err());
        let cam = CameraPose::identity(10.0, 10.0, 9.0, 4.0, 8, 8);
        assert!(cam.validate().is_err());
    }

    #[test]
    fn query_rows_are_checked_and_renormalized() {
        let q = QuerySet::new(vec!["a".to_string(), "b".to_string()], 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        assert_eq!(q.row(1), &[0.0, 1.0]);
        let err = QuerySet::new(vec!["a".to_string()], 2, vec![0.5, 0.0]).unwrap_err();
        assert!(matches!(err, Error::NonUnitEmbedding { row: 0, .. }));
        let err = QuerySet::new(vec!["a".to_string(), "a".to_string()], 1, vec![1.0, 1.0]).unwrap_err();
        assert_eq!(err, Error::DuplicateLabel("a".to_string()));
        let q = QuerySet::new(vec!["a".to_string()], 2, vec![1.0005, 0.0]).unwrap();
        assert_eq!(q.row(0), &[1.0, 0.0]);
    }

    #[test]
    fn view_validation_catches_mismatched_rasters() {
        let cam = CameraPose::identity(10.0, 10.0, 1.5, 1.5, 4, 4);
        let mut view = View {
            camera: cam,
            rgb: Raster::filled(4, 4, 3, 0.0),
            depth: Raster::filled(4, 4, 1, 1.0),
            features: None,
            mask_proposals: None,
        };
        view.validate().unwrap();
        view.depth = Raster::filled(2, 2, 1, 1.0);
        assert!(matches!(view.validate(), Err(Error::ShapeMismatch(_))));
    }
}
