//! Pinhole projection, back-projection, depth-test visibility, bounding boxes
//! and mask overlap.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math::Vec3;
use crate::scene::{CameraPose, View};

/// Default relative depth tolerance for the visibility test.
pub const DEFAULT_REL_TOL: f32 = 0.01;

/// World-space point in double precision.
pub type Point3 = [f64; 3];

/// Anything usable as a world-space point.
pub trait WorldPoint {
    fn to_point(&self) -> Point3;
}

impl WorldPoint for Point3 {
    #[inline]
    fn to_point(&self) -> Point3 {
        *self
    }
}

impl WorldPoint for Vec3 {
    #[inline]
    fn to_point(&self) -> Point3 {
        self.map(f64::from)
    }
}

/// Smallest camera-frame depth accepted by [`project_point`].
pub const MIN_DEPTH: f64 = 1e-8;

/// Continuous pixel coordinates, `u` along the width.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pixel {
    pub u: f32,
    pub v: f32,
}

impl Pixel {
    pub fn new(u: f32, v: f32) -> Self {
        Self { u, v }
    }

    /// Nearest integer pixel, if it lies inside a `width×height` image.
    pub fn index(&self, width: usize, height: usize) -> Option<(usize, usize)> {
        let x = libm::roundf(self.u);
        let y = libm::roundf(self.v);
        if x >= 0.0 && y >= 0.0 && (x as usize) < width && (y as usize) < height {
            Some((x as usize, y as usize))
        } else {
            None
        }
    }
}

/// Inclusive integer pixel bounds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BBox {
    pub u_min: u32,
    pub v_min: u32,
    pub u_max: u32,
    pub v_max: u32,
}

impl BBox {
    pub fn contains(&self, x: u32, y: u32) -> bool {
        x >= self.u_min && x <= self.u_max && y >= self.v_min && y <= self.v_max
    }

    pub fn area(&self) -> u64 {
        (self.u_max - self.u_min + 1) as u64 * (self.v_max - self.v_min + 1) as u64
    }
}

/// A `width×height` boolean mask.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    pub width: usize,
    pub height: usize,
    pub bits: Vec<bool>,
}

impl BinaryMask {
    pub fn empty(width: usize, height: usize) -> Self {
        Self { width, height, bits: vec![false; width * height] }
    }

    pub fn from_pixels(width: usize, height: usize, pixels: impl IntoIterator<Item = (u32, u32)>) -> Self {
        let mut m = Self::empty(width, height);
        for (x, y) in pixels {
            m.bits[y as usize * width + x as usize] = true;
        }
        m
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }

    pub fn pixels(&self) -> impl Iterator<Item = (u32, u32)> + '_ {
        let w = self.width;
        self.bits.iter().enumerate().filter(|(_, b)| **b).map(move |(i, _)| ((i % w) as u32, (i / w) as u32))
    }
}

/// Lifts an image pixel with metric depth into the world frame.
pub fn backproject_pixel(p: Pixel, depth: f32, cam: &CameraPose) -> Result<Point3> {
    if !(depth > 0.0) {
        return Err(Error::InvalidDepth(depth));
    }
    let d = depth as f64;
    let x = (p.u as f64 - cam.cx as f64) / cam.fx as f64 * d;
    let y = (p.v as f64 - cam.cy as f64) / cam.fy as f64 * d;
    Ok(cam.to_world(&[x, y, d]))
}

/// Projects a world point; returns the pixel (possibly outside the image) and
/// the camera-frame depth.
pub fn project_point(x: &impl WorldPoint, cam: &CameraPose) -> Result<(Pixel, f32)> {
    let c = cam.to_camera(&x.to_point());
    if c[2] <= MIN_DEPTH {
        return Err(Error::BehindCamera(c[2] as f32));
    }
    let u = cam.fx as f64 * c[0] / c[2] + cam.cx as f64;
    let v = cam.fy as f64 * c[1] / c[2] + cam.cy as f64;
    Ok((Pixel::new(u as f32, v as f32), c[2] as f32))
}

/// Integer pixel where `x` is observed in `view`, if it passes the depth test.
pub fn visible_pixel(x: &impl WorldPoint, view: &View, rel_tol: f32) -> Option<(usize, usize)> {
    let (p, z) = project_point(x, &view.camera).ok()?;
    let (px, py) = p.index(view.width(), view.height())?;
    let stored = view.depth_at(px, py)?;
    ((z - stored).abs() <= rel_tol * stored).then_some((px, py))
}

/// True iff `x` projects inside the image onto a valid depth pixel whose
/// recorded depth agrees with the projected depth to within `rel_tol`.
pub fn is_visible(x: &impl WorldPoint, view: &View, rel_tol: f32) -> bool {
    visible_pixel(x, view, rel_tol).is_some()
}

/// Tight inclusive bounds of a pixel set.
pub fn fit_bbox(pixels: impl IntoIterator<Item = (u32, u32)>) -> Result<BBox> {
    let mut it = pixels.into_iter();
    let (x0, y0) = it.next().ok_or(Error::EmptyRegion)?;
    let mut b = BBox { u_min: x0, v_min: y0, u_max: x0, v_max: y0 };
    for (x, y) in it {
        b.u_min = b.u_min.min(x);
        b.u_max = b.u_max.max(x);
        b.v_min = b.v_min.min(y);
        b.v_max = b.v_max.max(y);
    }
    Ok(b)
}

/// Intersection over union; `0` when both masks are empty.
pub fn mask_iou(a: &BinaryMask, b: &BinaryMask) -> Result<f32> {
    if a.width != b.width || a.height != b.height {
        return Err(Error::ShapeMismatch(format!(
            "masks {}x{} and {}x{}",
            a.width, a.height, b.width, b.height
        )));
    }
    let (mut inter, mut union) = (0u64, 0u64);
    for (x, y) in a.bits.iter().zip(&b.bits) {
        inter += (*x && *y) as u64;
        union += (*x || *y) as u64;
    }
    Ok(if union == 0 { 0.0 } else { inter as f32 / union as f32 })
}
