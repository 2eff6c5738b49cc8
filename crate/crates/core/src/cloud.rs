//! Per-Gaussian scene parameters.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math::{self, Mat3, Vec3};

/// `N` anisotropic Gaussians stored structure-of-arrays.
///
/// Opacity is kept as a logit and scale as a log so every optimized tensor is
/// unconstrained. Colors are constant per Gaussian.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianCloud {
    pub means: Vec<Vec3>,
    /// Quaternions `(w, x, y, z)`.
    pub rotations: Vec<[f32; 4]>,
    pub log_scales: Vec<Vec3>,
    pub opacity_logits: Vec<f32>,
    pub colors: Vec<Vec3>,
    pub feature_dim: usize,
    /// Row-major `N×feature_dim` semantic field.
    pub features: Vec<f32>,
}

impl GaussianCloud {
    pub fn with_capacity(n: usize, feature_dim: usize) -> Self {
        Self {
            means: Vec::with_capacity(n),
            rotations: Vec::with_capacity(n),
            log_scales: Vec::with_capacity(n),
            opacity_logits: Vec::with_capacity(n),
            colors: Vec::with_capacity(n),
            feature_dim,
            features: Vec::with_capacity(n * feature_dim),
        }
    }

    pub fn push(&mut self, mean: Vec3, rotation: [f32; 4], log_scale: Vec3, opacity_logit: f32, color: Vec3, feature: &[f32]) {
        assert_eq!(feature.len(), self.feature_dim, "feature width");
        self.means.push(mean);
        self.rotations.push(rotation);
        self.log_scales.push(log_scale);
        self.opacity_logits.push(opacity_logit);
        self.colors.push(color);
        self.features.extend_from_slice(feature);
    }

    pub fn len(&self) -> usize {
        self.means.len()
    }

    pub fn is_empty(&self) -> bool {
        self.means.is_empty()
    }

    pub fn feature(&self, i: usize) -> &[f32] {
        &self.features[i * self.feature_dim..(i + 1) * self.feature_dim]
    }

    pub fn feature_mut(&mut self, i: usize) -> &mut [f32] {
        &mut self.features[i * self.feature_dim..(i + 1) * self.feature_dim]
    }

    pub fn opacity(&self, i: usize) -> f32 {
        math::sigmoid(self.opacity_logits[i])
    }

    pub fn scales(&self, i: usize) -> Vec3 {
        let l = self.log_scales[i];
        [libm::expf(l[0]), libm::expf(l[1]), libm::expf(l[2])]
    }

    /// World covariance `R·diag(s²)·Rᵀ`.
    pub fn covariance(&self, i: usize) -> Mat3 {
        let r = math::quat_to_mat(&math::quat_normalized(&self.rotations[i]));
        let s = self.scales(i);
        let mut m = r;
        for row in m.iter_mut() {
            for (j, v) in row.iter_mut().enumerate() {
                *v *= s[j];
            }
        }
        math::mat3_mul(&m, &math::mat3_transpose(&m))
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.len();
        if n == 0 {
            return Err(Error::InvalidCloud("cloud is empty".into()));
        }
        if self.feature_dim == 0 {
            return Err(Error::InvalidCloud("latent dimension must be at least 1".into()));
        }
        if self.rotations.len() != n
            || self.log_scales.len() != n
            || self.opacity_logits.len() != n
            || self.colors.len() != n
            || self.features.len() != n * self.feature_dim
        {
            return Err(Error::InvalidCloud(format!("parameter arrays disagree on the Gaussian count {n}")));
        }
        for (i, q) in self.rotations.iter().enumerate() {
            let qn = math::norm(q);
            if (qn - 1.0).abs() > 1e-5 {
                return Err(Error::InvalidCloud(format!("quaternion {i} has norm {qn}")));
            }
        }
        Ok(())
    }

    pub fn normalize_rotations(&mut self) {
        for q in &mut self.rotations {
            *q = math::quat_normalized(q);
        }
    }

    /// Keeps the Gaussians for which `keep` returns true, preserving order.
    pub fn retain(&mut self, mut keep: impl FnMut(usize) -> bool) {
        let flags: Vec<bool> = (0..self.len()).map(&mut keep).collect();
        let mut k = flags.iter();
        self.means.retain(|_| *k.next().unwrap());
        let mut k = flags.iter();
        self.rotations.retain(|_| *k.next().unwrap());
        let mut k = flags.iter();
        self.log_scales.retain(|_| *k.next().unwrap());
        let mut k = flags.iter();
        self.opacity_logits.retain(|_| *k.next().unwrap());
        let mut k = flags.iter();
        self.colors.retain(|_| *k.next().unwrap());
        let d = self.feature_dim;
        let mut features = Vec::with_capacity(self.features.len());
        for (i, f) in self.features.chunks_exact(d).enumerate() {
            if flags[i] {
                features.extend_from_slice(f);
            }
        }
        self.features = features;
    }

    /// A copy with the Gaussians reordered by `order` (a permutation).
    pub fn permuted(&self, order: &[usize]) -> Self {
        let mut out = Self::with_capacity(self.len(), self.feature_dim);
        for &i in order {
            out.push(
                self.means[i],
                self.rotations[i],
                self.log_scales[i],
                self.opacity_logits[i],
                self.colors[i],
                self.feature(i),
            );
        }
        out
    }
}
