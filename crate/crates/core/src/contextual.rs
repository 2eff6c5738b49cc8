//! Multi-view average pooling of pixel features onto 3D points.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::geometry;
use crate::math::Vec3;
use crate::scene::{LabelMap, View, IGNORE_LABEL};

/// Per-point mean features; row `p` averages exactly `counts[p]` pixels and is
/// zero when `counts[p] == 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct ContextualSpace {
    pub points: Vec<Vec3>,
    pub dim: usize,
    /// Row-major `P×dim`.
    pub features: Vec<f32>,
    pub counts: Vec<u32>,
}

impl ContextualSpace {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn feature(&self, p: usize) -> &[f32] {
        &self.features[p * self.dim..(p + 1) * self.dim]
    }

    pub fn is_fused(&self, p: usize) -> bool {
        self.counts[p] > 0
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.points.len();
        if self.features.len() != p * self.dim || self.counts.len() != p {
            return Err(Error::ShapeMismatch(alloc::format!(
                "{} points, {} feature values for dim {}, {} counts",
                p,
                self.features.len(),
                self.dim,
                self.counts.len()
            )));
        }
        Ok(())
    }
}

/// Averages, for each point, the features at its projected pixel over every
/// view where it passes the depth test. Views are visited in index order and
/// sums are kept in f64.
pub fn fuse_multiview(points: &[Vec3], views: &[View], rel_tol: f32) -> Result<ContextualSpace> {
    let mut dim = None;
    for (i, v) in views.iter().enumerate() {
        let f = v.features.as_ref().ok_or(Error::MissingFeatures(i))?;
        match dim {
            None => dim = Some(f.channels),
            Some(d) if d != f.channels => return Err(Error::DimensionMismatch { expected: d, got: f.channels }),
            _ => {}
        }
    }
    let dim = dim.unwrap_or(0);
    let mut features = vec![0.0f32; points.len() * dim];
    let mut counts = vec![0u32; points.len()];
    let mut sum = vec![0.0f64; dim];
    for (p, x) in points.iter().enumerate() {
        sum.iter_mut().for_each(|s| *s = 0.0);
        let mut n = 0u32;
        for v in views {
            if let Some((u, w)) = geometry::visible_pixel(x, v, rel_tol) {
                let f = v.features.as_ref().unwrap().pixel(u, w);
                for (s, &a) in sum.iter_mut().zip(f) {
                    *s += a as f64;
                }
                n += 1;
            }
        }
        if n > 0 {
            for (o, s) in features[p * dim..(p + 1) * dim].iter_mut().zip(&sum) {
                *o = (s / n as f64) as f32;
            }
        }
        counts[p] = n;
    }
    Ok(ContextualSpace { points: points.to_vec(), dim, features, counts })
}

/// Majority label over the views where each point is visible, ignoring
/// unlabeled pixels. Ties go to the lowest label; points with no votes get
/// [`IGNORE_LABEL`].
pub fn pool_labels(points: &[Vec3], views: &[View], labels: &[LabelMap], n_classes: usize, rel_tol: f32) -> Result<Vec<u16>> {
    if views.len() != labels.len() {
        return Err(Error::ShapeMismatch(alloc::format!("{} views, {} label maps", views.len(), labels.len())));
    }
    for (v, l) in views.iter().zip(labels) {
        if !l.same_size(v.width(), v.height()) || l.channels != 1 {
            return Err(Error::ShapeMismatch(alloc::format!(
                "label map {}x{}x{} for view {}x{}",
                l.width,
                l.height,
                l.channels,
                v.width(),
                v.height()
            )));
        }
    }
    let mut votes = vec![0u32; n_classes];
    let mut out = Vec::with_capacity(points.len());
    for x in points {
        votes.iter_mut().for_each(|c| *c = 0);
        let mut any = false;
        for (v, l) in views.iter().zip(labels) {
            if let Some((u, w)) = geometry::visible_pixel(x, v, rel_tol) {
                let k = l.get(u, w);
                if k == IGNORE_LABEL {
                    continue;
                }
                if k as usize >= n_classes {
                    return Err(Error::LabelOutOfRange { label: k as usize, classes: n_classes });
                }
                votes[k as usize] += 1;
                any = true;
            }
        }
        out.push(if any {
            let mut best = 0;
            for (k, &c) in votes.iter().enumerate() {
                if c > votes[best] {
                    best = k;
                }
            }
            best as u16
        } else {
            IGNORE_LABEL
        });
    }
    Ok(out)
}
