//! Open-vocabulary inference on rendered latent fields: segmentation,
//! metrics, relevancy localization and query-driven edits.

use alloc::vec;
use alloc::vec::Vec;

use crate::cloud::GaussianCloud;
use crate::error::{Error, Result};
use crate::geometry::BBox;
use crate::math::{self, Vec3};
use crate::scene::{LabelMap, Raster, IGNORE_LABEL};
use crate::splat::RenderOutput;

/// Pixels with accumulated alpha below this are background.
pub const VALID_ALPHA: f32 = 0.5;

fn check_dim(features: &Raster<f32>, queries_z: &[f32]) -> Result<usize> {
    let dz = features.channels;
    if dz == 0 || queries_z.is_empty() || !queries_z.len().is_multiple_of(dz) {
        return Err(Error::DimensionMismatch { expected: dz, got: queries_z.len() });
    }
    Ok(queries_z.len() / dz)
}

/// Per-pixel argmax cosine against the `K × d_z` latent queries; pixels whose
/// `alpha` is below [`VALID_ALPHA`] get [`IGNORE_LABEL`].
pub fn segment_view(features: &Raster<f32>, alpha: Option<&Raster<f32>>, queries_z: &[f32]) -> Result<LabelMap> {
    check_dim(features, queries_z)?;
    let dz = features.channels;
    let data = (0..features.pixel_count())
        .map(|p| {
            if alpha.is_some_and(|a| a.data[p] < VALID_ALPHA) {
                return IGNORE_LABEL;
            }
            math::argmax_cosine(&features.data[p * dz..(p + 1) * dz], queries_z, dz).0 as u16
        })
        .collect();
    Raster::from_data(features.width, features.height, 1, data)
}

/// Segments a render using its own accumulated alpha.
pub fn segment_render(out: &RenderOutput, queries_z: &[f32]) -> Result<LabelMap> {
    segment_view(&out.features, Some(&out.alpha), queries_z)
}

/// Cosine to one latent query per pixel; `None` where alpha is too low.
#[derive(Debug, Clone, PartialEq)]
pub struct RelevancyMap {
    pub width: usize,
    pub height: usize,
    pub scores: Vec<Option<f32>>,
}

pub fn relevancy(features: &Raster<f32>, alpha: Option<&Raster<f32>>, query_z: &[f32]) -> Result<RelevancyMap> {
    if query_z.len() != features.channels {
        return Err(Error::DimensionMismatch { expected: features.channels, got: query_z.len() });
    }
    let dz = features.channels;
    let scores = (0..features.pixel_count())
        .map(|p| {
            if alpha.is_some_and(|a| a.data[p] < VALID_ALPHA) {
                None
            } else {
                Some(math::cosine(&features.data[p * dz..(p + 1) * dz], query_z).clamp(-1.0, 1.0))
            }
        })
        .collect();
    Ok(RelevancyMap { width: features.width, height: features.height, scores })
}

impl RelevancyMap {
    /// Highest-scoring valid pixel; the first in row-major order on ties.
    pub fn argmax(&self) -> Option<(u32, u32)> {
        let mut best: Option<(usize, f32)> = None;
        for (p, s) in self.scores.iter().enumerate() {
            if let Some(s) = *s {
                if best.is_none_or(|(_, b)| s > b) {
                    best = Some((p, s));
                }
            }
        }
        best.map(|(p, _)| ((p % self.width) as u32, (p / self.width) as u32))
    }
}

/// True iff the highest-relevancy pixel lies inside `gt_box`.
pub fn localize(map: &RelevancyMap, gt_box: &BBox) -> bool {
    map.argmax().is_some_and(|(x, y)| gt_box.contains(x, y))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegResult {
    /// IoU per class; `None` for classes absent from the ground truth.
    pub iou: Vec<Option<f64>>,
    pub accuracy: Vec<Option<f64>>,
    pub miou: f64,
    pub macc: f64,
    /// Row = ground truth, column = prediction.
    pub confusion: Vec<u64>,
}

/// Confusion-matrix mIoU and mAcc over classes present in the ground truth.
/// Pixels whose ground truth is [`IGNORE_LABEL`] are skipped; predictions of
/// [`IGNORE_LABEL`] on labeled pixels count as misses.
pub fn evaluate(preds: &[LabelMap], gts: &[LabelMap], n_classes: usize) -> Result<SegResult> {
    if preds.len() != gts.len() {
        return Err(Error::ShapeMismatch(alloc::format!("{} predictions, {} ground truths", preds.len(), gts.len())));
    }
    let k = n_classes;
    let mut confusion = vec![0u64; k * k];
    let mut missed = vec![0u64; k];
    for (p, g) in preds.iter().zip(gts) {
        if p.width != g.width || p.height != g.height || p.channels != 1 || g.channels != 1 {
            return Err(Error::ShapeMismatch(alloc::format!(
                "prediction {}x{}x{} vs ground truth {}x{}x{}",
                p.width,
                p.height,
                p.channels,
                g.width,
                g.height,
                g.channels
            )));
        }
        for (&pv, &gv) in p.data.iter().zip(&g.data) {
            if gv == IGNORE_LABEL {
                continue;
            }
            if gv as usize >= k {
                return Err(Error::LabelOutOfRange { label: gv as usize, classes: k });
            }
            if pv == IGNORE_LABEL {
                missed[gv as usize] += 1;
            } else if pv as usize >= k {
                return Err(Error::LabelOutOfRange { label: pv as usize, classes: k });
            } else {
                confusion[gv as usize * k + pv as usize] += 1;
            }
        }
    }
    let mut iou = vec![None; k];
    let mut accuracy = vec![None; k];
    for c in 0..k {
        let gt_total: u64 = confusion[c * k..(c + 1) * k].iter().sum::<u64>() + missed[c];
        if gt_total == 0 {
            continue;
        }
        let tp = confusion[c * k + c];
        let pred_total: u64 = (0..k).map(|r| confusion[r * k + c]).sum();
        iou[c] = Some(tp as f64 / (gt_total + pred_total - tp) as f64);
        accuracy[c] = Some(tp as f64 / gt_total as f64);
    }
    let mean = |v: &[Option<f64>]| {
        let present: Vec<f64> = v.iter().flatten().copied().collect();
        if present.is_empty() {
            0.0
        } else {
            present.iter().sum::<f64>() / present.len() as f64
        }
    };
    Ok(SegResult { miou: mean(&iou), macc: mean(&accuracy), iou, accuracy, confusion })
}

/// Indices whose semantic field has cosine at least `theta` with `query_z`.
pub fn select_gaussians(cloud: &GaussianCloud, query_z: &[f32], theta: f32) -> Result<Vec<usize>> {
    if query_z.len() != cloud.feature_dim {
        return Err(Error::DimensionMismatch { expected: cloud.feature_dim, got: query_z.len() });
    }
    if !(theta > -1.0 && theta < 1.0) {
        return Err(Error::InvalidConfig(alloc::format!("threshold must lie in (-1, 1), got {theta}")));
    }
    Ok((0..cloud.len()).filter(|&i| math::cosine(cloud.feature(i), query_z) >= theta).collect())
}

/// Edited cloud and how many Gaussians the query touched; zero is allowed and
/// leaves the cloud unchanged.
#[derive(Debug, Clone, PartialEq)]
pub struct Edit {
    pub cloud: GaussianCloud,
    pub selected: usize,
}

impl Edit {
    pub fn is_empty_selection(&self) -> bool {
        self.selected == 0
    }
}

pub fn delete_by_query(cloud: &GaussianCloud, query_z: &[f32], theta: f32) -> Result<Edit> {
    let sel = select_gaussians(cloud, query_z, theta)?;
    let mut drop = vec![false; cloud.len()];
    sel.iter().for_each(|&i| drop[i] = true);
    let mut out = cloud.clone();
    out.retain(|i| !drop[i]);
    Ok(Edit { cloud: out, selected: sel.len() })
}

pub fn recolor_by_query(cloud: &GaussianCloud, query_z: &[f32], theta: f32, rgb: Vec3) -> Result<Edit> {
    let sel = select_gaussians(cloud, query_z, theta)?;
    let mut out = cloud.clone();
    for &i in &sel {
        out.colors[i] = rgb;
    }
    Ok(Edit { cloud: out, selected: sel.len() })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn map(w: usize, h: usize, data: Vec<u16>) -> LabelMap {
        Raster::from_data(w, h, 1, data).unwrap()
    }

    #[test]
    fn half_right_closed_form() {
        let gt = map(8, 1, vec![0, 0, 0, 0, 1, 1, 1, 1]);
        let pred = map(8, 1, vec![0; 8]);
        let r = evaluate(&[pred], core::slice::from_ref(&gt), 2).unwrap();
        assert_eq!(r.iou, vec![Some(0.5), Some(0.0)]);
        assert_eq!((r.miou, r.macc), (0.25, 0.5));
        let r = evaluate(core::slice::from_ref(&gt), core::slice::from_ref(&gt), 2).unwrap();
        assert_eq!((r.miou, r.macc), (1.0, 1.0));
    }

    #[test]
    fn segmentation_ties_and_background() {
        let q = [1.0, 0.0, 0.0, 1.0];
        let f = Raster::from_data(3, 1, 2, vec![0.0, 2.0, 1.0, 1.0, 5.0, 0.0]).unwrap();
        let a = Raster::from_data(3, 1, 1, vec![1.0, 1.0, 0.2]).unwrap();
        assert_eq!(segment_view(&f, Some(&a), &q).unwrap().data, vec![1, 0, IGNORE_LABEL]);
        assert!(matches!(segment_view(&f, None, &[1.0, 0.0, 0.0]), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn localization_hit_and_miss() {
        let f = Raster::from_data(3, 1, 2, vec![0.0, 1.0, 1.0, 0.0, 1.0, 1.0]).unwrap();
        let m = relevancy(&f, None, &[1.0, 0.0]).unwrap();
        assert_eq!(m.argmax(), Some((1, 0)));
        assert!(localize(&m, &BBox { u_min: 1, v_min: 0, u_max: 2, v_max: 0 }));
        assert!(!localize(&m, &BBox { u_min: 0, v_min: 0, u_max: 0, v_max: 0 }));
    }
}
