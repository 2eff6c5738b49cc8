//! Confidence-guided region regularization.
//!
//! Refines per-view semantic features and class-agnostic mask proposals
//! against each other through 3D:
//!
//! 1. keep pixels whose best query cosine reaches `tau1`,
//! 2. back-project them and average features per voxel,
//! 3. label the fused points, reproject them into every view and vote
//!    connected regions,
//! 4. prompt a [`MaskProvider`] with one box per region,
//! 5. hand each region whose confidence reaches `tau2` to the returned mask it
//!    overlaps most.

use alloc::collections::{BTreeMap, VecDeque};
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::geometry::{self, BBox, BinaryMask, Pixel};
use crate::math::{self, Vec3};
use crate::scene::{LabelMap, QuerySet, Raster, View, IGNORE_LABEL};

/// Produces one binary mask per prompted box for a given view.
pub trait MaskProvider {
    fn masks(&mut self, view: usize, boxes: &[BBox]) -> Result<Vec<BinaryMask>>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct CrrConfig {
    pub tau1: f32,
    pub tau2: f32,
    /// Voxel edge for cross-view pooling; `None` uses the diameter of the
    /// back-projected points divided by 256.
    pub voxel_size: Option<f32>,
    pub iou_min: f32,
    pub rel_tol: f32,
    /// Step a. When off every valid-depth pixel is fused.
    pub confidence_selection: bool,
    /// Step d/e. When off the voted regions are the output.
    pub mask_refinement: bool,
}

impl Default for CrrConfig {
    fn default() -> Self {
        Self {
            tau1: 0.45,
            tau2: 0.6,
            voxel_size: None,
            iou_min: 0.5,
            rel_tol: geometry::DEFAULT_REL_TOL,
            confidence_selection: true,
            mask_refinement: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SelectedPixel {
    pub x: u32,
    pub y: u32,
    pub confidence: f32,
}

/// Per view, the pixels kept by step a, in row-major order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ConfidentSelection {
    pub views: Vec<Vec<SelectedPixel>>,
}

impl ConfidentSelection {
    pub fn len(&self) -> usize {
        self.views.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn view_features<'a>(view: &'a View, index: usize, queries: &QuerySet) -> Result<&'a Raster<f32>> {
    let f = view.features.as_ref().ok_or(Error::MissingFeatures(index))?;
    if f.channels != queries.dim() {
        return Err(Error::DimensionMismatch { expected: queries.dim(), got: f.channels });
    }
    Ok(f)
}

/// Step a: pixels with valid depth whose max query cosine is at least `tau1`.
pub fn select_confident(views: &[View], queries: &QuerySet, tau1: f32) -> Result<ConfidentSelection> {
    select_with(views, queries, Some(tau1))
}

fn select_with(views: &[View], queries: &QuerySet, tau1: Option<f32>) -> Result<ConfidentSelection> {
    let mut out = ConfidentSelection::default();
    for (vi, view) in views.iter().enumerate() {
        let feats = view_features(view, vi, queries)?;
        let mut kept = Vec::new();
        for y in 0..view.height() {
            for x in 0..view.width() {
                if view.depth_at(x, y).is_none() {
                    continue;
                }
                let (_, confidence) = queries.classify(feats.pixel(x, y));
                if tau1.is_none_or(|t| confidence >= t) {
                    kept.push(SelectedPixel { x: x as u32, y: y as u32, confidence });
                }
            }
        }
        out.views.push(kept);
    }
    Ok(out)
}

/// Voxel-pooled 3D points with averaged features.
#[derive(Debug, Clone, PartialEq)]
pub struct FusedPointSet {
    pub dim: usize,
    pub positions: Vec<Vec3>,
    /// Row-major `N×dim`.
    pub features: Vec<f32>,
    /// Contributing pixels.
    pub counts: Vec<u32>,
    /// Distinct contributing views.
    pub view_counts: Vec<u32>,
    pub labels: Vec<u16>,
    pub confidences: Vec<f32>,
}

impl FusedPointSet {
    pub fn empty(dim: usize) -> Self {
        Self {
            dim,
            positions: Vec::new(),
            features: Vec::new(),
            counts: Vec::new(),
            view_counts: Vec::new(),
            labels: Vec::new(),
            confidences: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn feature(&self, i: usize) -> &[f32] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }
}

/// Edge length used when no voxel size is configured.
pub fn default_voxel_size(sel: &ConfidentSelection, views: &[View]) -> f32 {
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for (vi, pixels) in sel.views.iter().enumerate() {
        let view = &views[vi];
        for p in pixels {
            let d = view.depth.get(p.x as usize, p.y as usize);
            if let Ok(w) = geometry::backproject_pixel(Pixel::new(p.x as f32, p.y as f32), d, &view.camera) {
                for k in 0..3 {
                    lo[k] = lo[k].min(w[k]);
                    hi[k] = hi[k].max(w[k]);
                }
            }
        }
    }
    let diag = libm::sqrt((0..3).map(|k| { let e = (hi[k] - lo[k]).max(0.0); e * e }).sum()) as f32;
    if diag > 0.0 && diag.is_finite() {
        diag / 256.0
    } else {
        1.0
    }
}

struct VoxelAcc {
    position: [f64; 3],
    feature: Vec<f64>,
    count: u32,
    views: u32,
    last_view: usize,
}

/// Step b: back-projects every selected pixel and averages points sharing a
/// voxel. Views are merged in index order, pixels in row-major order.
pub fn fuse_confident(sel: &ConfidentSelection, views: &[View], voxel_size: f32) -> Result<FusedPointSet> {
    if !(voxel_size > 0.0) {
        return Err(Error::InvalidConfig(format!("voxel size must be positive, got {voxel_size}")));
    }
    let dim = views
        .iter()
        .find_map(|v| v.features.as_ref().map(|f| f.channels))
        .unwrap_or(0);
    let mut index: BTreeMap<[i64; 3], usize> = BTreeMap::new();
    let mut accs: Vec<VoxelAcc> = Vec::new();
    for (vi, pixels) in sel.views.iter().enumerate() {
        let view = &views[vi];
        let feats = view.features.as_ref().ok_or(Error::MissingFeatures(vi))?;
        for p in pixels {
            let (x, y) = (p.x as usize, p.y as usize);
            let d = view.depth.get(x, y);
            let w = geometry::backproject_pixel(Pixel::new(p.x as f32, p.y as f32), d, &view.camera)?;
            let key = [
                libm::floor(w[0] / voxel_size as f64) as i64,
                libm::floor(w[1] / voxel_size as f64) as i64,
                libm::floor(w[2] / voxel_size as f64) as i64,
            ];
            let slot = *index.entry(key).or_insert_with(|| {
                accs.push(VoxelAcc { position: [0.0; 3], feature: vec![0.0; dim], count: 0, views: 0, last_view: usize::MAX });
                accs.len() - 1
            });
            let acc = &mut accs[slot];
            for k in 0..3 {
                acc.position[k] += w[k];
            }
            for (a, f) in acc.feature.iter_mut().zip(feats.pixel(x, y)) {
                *a += *f as f64;
            }
            acc.count += 1;
            if acc.last_view != vi {
                acc.views += 1;
                acc.last_view = vi;
            }
        }
    }
    let mut out = FusedPointSet::empty(dim);
    for acc in accs {
        let n = acc.count as f64;
        out.positions.push([(acc.position[0] / n) as f32, (acc.position[1] / n) as f32, (acc.position[2] / n) as f32]);
        out.features.extend(acc.feature.iter().map(|v| (v / n) as f32));
        out.counts.push(acc.count);
        out.view_counts.push(acc.views);
        out.labels.push(0);
        out.confidences.push(0.0);
    }
    Ok(out)
}

/// Step c (first half): label every fused point by its best query cosine.
pub fn label_fused(fused: &mut FusedPointSet, queries: &QuerySet) -> Result<()> {
    if fused.dim != queries.dim() && !fused.is_empty() {
        return Err(Error::DimensionMismatch { expected: queries.dim(), got: fused.dim });
    }
    for i in 0..fused.len() {
        let (k, c) = queries.classify(&fused.features[i * fused.dim..(i + 1) * fused.dim]);
        fused.labels[i] = k as u16;
        fused.confidences[i] = c;
    }
    Ok(())
}

/// A voted 2D region.
#[derive(Debug, Clone, PartialEq)]
pub struct Region {
    pub pixels: Vec<(u32, u32)>,
    pub feature: Vec<f32>,
    pub label: u16,
    pub confidence: f32,
}

impl Region {
    pub fn mask(&self, width: usize, height: usize) -> BinaryMask {
        BinaryMask::from_pixels(width, height, self.pixels.iter().copied())
    }
}

/// Voted regions of one view.
#[derive(Debug, Clone, PartialEq)]
pub struct SemanticMaskSet {
    pub width: usize,
    pub height: usize,
    pub regions: Vec<Region>,
}

fn majority(counts: &[u32]) -> usize {
    let mut best = 0;
    for (k, &c) in counts.iter().enumerate() {
        if c > counts[best] {
            best = k;
        }
    }
    best
}

/// Step c (second half): projects visible labeled points into `view`, takes the
/// per-pixel majority label, groups same-label pixels into 4-connected regions,
/// and pools each region's point labels and features.
pub fn reproject_vote(fused: &FusedPointSet, view: &View, queries: &QuerySet, rel_tol: f32) -> SemanticMaskSet {
    let (w, h) = (view.width(), view.height());
    let k = queries.len();
    // (pixel, point) pairs, grouped by pixel.
    let mut hits: Vec<(u32, u32)> = Vec::new();
    for i in 0..fused.len() {
        if let Some((x, y)) = geometry::visible_pixel(&fused.positions[i], view, rel_tol) {
            hits.push(((y * w + x) as u32, i as u32));
        }
    }
    hits.sort_unstable();
    let mut starts = vec![u32::MAX; w * h];
    let mut ends = vec![0u32; w * h];
    for (j, (pix, _)) in hits.iter().enumerate() {
        let p = *pix as usize;
        if starts[p] == u32::MAX {
            starts[p] = j as u32;
        }
        ends[p] = j as u32 + 1;
    }
    let mut pixel_label = vec![IGNORE_LABEL; w * h];
    let mut counts = vec![0u32; k];
    for p in 0..w * h {
        if starts[p] == u32::MAX {
            continue;
        }
        counts.iter_mut().for_each(|c| *c = 0);
        for &(_, i) in &hits[starts[p] as usize..ends[p] as usize] {
            counts[fused.labels[i as usize] as usize] += 1;
        }
        pixel_label[p] = majority(&counts) as u16;
    }

    let mut regions = Vec::new();
    let mut seen = vec![false; w * h];
    let mut queue = VecDeque::new();
    for seed in 0..w * h {
        if seen[seed] || pixel_label[seed] == IGNORE_LABEL {
            continue;
        }
        let label = pixel_label[seed];
        let mut pixels = Vec::new();
        seen[seed] = true;
        queue.push_back(seed);
        while let Some(p) = queue.pop_front() {
            pixels.push(p);
            let (x, y) = (p % w, p / w);
            let mut visit = |q: usize| {
                if !seen[q] && pixel_label[q] == label {
                    seen[q] = true;
                    queue.push_back(q);
                }
            };
            if x > 0 {
                visit(p - 1);
            }
            if x + 1 < w {
                visit(p + 1);
            }
            if y > 0 {
                visit(p - w);
            }
            if y + 1 < h {
                visit(p + w);
            }
        }
        pixels.sort_unstable();
        counts.iter_mut().for_each(|c| *c = 0);
        let mut sum = vec![0.0f64; fused.dim];
        let mut n = 0u32;
        for &p in &pixels {
            for &(_, i) in &hits[starts[p] as usize..ends[p] as usize] {
                counts[fused.labels[i as usize] as usize] += 1;
                for (s, f) in sum.iter_mut().zip(fused.feature(i as usize)) {
                    *s += *f as f64;
                }
                n += 1;
            }
        }
        let region_label = majority(&counts);
        let feature: Vec<f32> = sum.iter().map(|s| (s / n as f64) as f32).collect();
        let confidence = math::cosine(&feature, queries.row(region_label));
        regions.push(Region {
            pixels: pixels.iter().map(|&p| ((p % w) as u32, (p / w) as u32)).collect(),
            feature,
            label: region_label as u16,
            confidence,
        });
    }
    SemanticMaskSet { width: w, height: h, regions }
}

/// Result of prompting the provider for one view.
#[derive(Debug, Clone, PartialEq)]
pub struct RefinedMasks {
    /// One mask per prompted region, in region order.
    pub masks: Vec<BinaryMask>,
    /// Region index each mask was prompted from.
    pub sources: Vec<usize>,
    /// Regions skipped because they had no pixels.
    pub skipped_empty: usize,
}

/// Step d: one box per region, a single provider call per view.
pub fn refine_with_masks(view_index: usize, masks: &SemanticMaskSet, provider: &mut dyn MaskProvider) -> Result<RefinedMasks> {
    let mut boxes = Vec::new();
    let mut sources = Vec::new();
    let mut skipped_empty = 0;
    for (r, region) in masks.regions.iter().enumerate() {
        match geometry::fit_bbox(region.pixels.iter().copied()) {
            Ok(b) => {
                boxes.push(b);
                sources.push(r);
            }
            Err(Error::EmptyRegion) => skipped_empty += 1,
            Err(e) => return Err(e),
        }
    }
    if boxes.is_empty() {
        return Ok(RefinedMasks { masks: Vec::new(), sources, skipped_empty });
    }
    let out = provider.masks(view_index, &boxes).map_err(|e| match e {
        Error::ProviderFailure(m) => Error::ProviderFailure(m),
        other => Error::ProviderFailure(format!("{other}")),
    })?;
    if out.len() != boxes.len() {
        return Err(Error::ProviderFailure(format!("{} boxes prompted, {} masks returned", boxes.len(), out.len())));
    }
    if let Some(bad) = out.iter().find(|m| m.width != masks.width || m.height != masks.height || m.bits.len() != m.width * m.height) {
        return Err(Error::ProviderFailure(format!(
            "mask is {}x{}, view is {}x{}",
            bad.width, bad.height, masks.width, masks.height
        )));
    }
    Ok(RefinedMasks { masks: out, sources, skipped_empty })
}

/// A provider mask that received a region's label and feature.
#[derive(Debug, Clone, PartialEq)]
pub struct RefinedMask {
    pub mask_index: usize,
    pub source_region: usize,
    pub label: u16,
    pub feature: Vec<f32>,
    pub confidence: f32,
    pub iou: f32,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RefinedMaskSet {
    pub assigned: Vec<RefinedMask>,
}

/// Step e: regions at or above `tau2` label their best-IoU mask when the IoU
/// reaches `iou_min`. A mask takes at most one label: highest confidence
/// wins, then lowest label, then lowest region index.
pub fn assign_refined(masks: &SemanticMaskSet, refined: &[BinaryMask], tau2: f32, iou_min: f32) -> Result<RefinedMaskSet> {
    let mut winners: BTreeMap<usize, RefinedMask> = BTreeMap::new();
    for (r, region) in masks.regions.iter().enumerate() {
        if region.confidence < tau2 || refined.is_empty() {
            continue;
        }
        let rm = region.mask(masks.width, masks.height);
        let mut best = (0usize, -1.0f32);
        for (m, mask) in refined.iter().enumerate() {
            let iou = geometry::mask_iou(&rm, mask)?;
            if iou > best.1 {
                best = (m, iou);
            }
        }
        if best.1 < iou_min {
            continue;
        }
        let cand = RefinedMask {
            mask_index: best.0,
            source_region: r,
            label: region.label,
            feature: region.feature.clone(),
            confidence: region.confidence,
            iou: best.1,
        };
        let replace = match winners.get(&best.0) {
            None => true,
            Some(cur) => {
                cand.confidence > cur.confidence || (cand.confidence == cur.confidence && cand.label < cur.label)
            }
        };
        if replace {
            winners.insert(best.0, cand);
        }
    }
    Ok(RefinedMaskSet { assigned: winners.into_values().collect() })
}

/// Final supervision for one view.
#[derive(Debug, Clone, PartialEq)]
pub struct CrrView {
    pub labels: LabelMap,
    /// Pooled features painted over labeled pixels, zero elsewhere.
    pub features: Raster<f32>,
    pub regions: SemanticMaskSet,
    pub refined: RefinedMaskSet,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CrrOutput {
    pub views: Vec<CrrView>,
    pub fused: FusedPointSet,
    pub voxel_size: f32,
    pub skipped_empty: usize,
}

fn paint(labels: &mut LabelMap, feats: &mut Raster<f32>, pixels: impl Iterator<Item = (u32, u32)>, label: u16, feature: &[f32]) {
    for (x, y) in pixels {
        labels.set(x as usize, y as usize, label);
        feats.pixel_mut(x as usize, y as usize).copy_from_slice(feature);
    }
}

/// Runs steps a–e over all views.
pub fn run_crr(views: &[View], queries: &QuerySet, provider: &mut dyn MaskProvider, config: &CrrConfig) -> Result<CrrOutput> {
    if !(config.tau1 > 0.0 && config.tau1 < 1.0 && config.tau2 > 0.0 && config.tau2 < 1.0) {
        return Err(Error::InvalidConfig(format!("thresholds must lie in (0, 1): {} {}", config.tau1, config.tau2)));
    }
    let sel = select_with(views, queries, config.confidence_selection.then_some(config.tau1))?;
    let voxel_size = config.voxel_size.unwrap_or_else(|| default_voxel_size(&sel, views));
    let mut fused = fuse_confident(&sel, views, voxel_size)?;
    label_fused(&mut fused, queries)?;

    let dim = queries.dim();
    let mut outputs = Vec::with_capacity(views.len());
    let mut skipped_empty = 0;
    for (vi, view) in views.iter().enumerate() {
        let (w, h) = (view.width(), view.height());
        let regions = reproject_vote(&fused, view, queries, config.rel_tol);
        let mut labels = Raster::filled(w, h, 1, IGNORE_LABEL);
        let mut feats = Raster::filled(w, h, dim, 0.0);
        for r in regions.regions.iter().filter(|r| r.confidence >= config.tau2) {
            paint(&mut labels, &mut feats, r.pixels.iter().copied(), r.label, &r.feature);
        }
        let mut refined = RefinedMaskSet::default();
        if config.mask_refinement {
            let masks = refine_with_masks(vi, &regions, provider)?;
            skipped_empty += masks.skipped_empty;
            refined = assign_refined(&regions, &masks.masks, config.tau2, config.iou_min)?;
            let mut order: Vec<&RefinedMask> = refined.assigned.iter().collect();
            // Later paints win: ascending confidence, lowest label last.
            order.sort_by(|a, b| a.confidence.total_cmp(&b.confidence).then(b.label.cmp(&a.label)));
            for m in order {
                paint(&mut labels, &mut feats, masks.masks[m.mask_index].pixels(), m.label, &m.feature);
            }
        }
        outputs.push(CrrView { labels, features: feats, regions, refined });
    }
    Ok(CrrOutput { views: outputs, fused, voxel_size, skipped_empty })
}

/// Per-pixel argmax labels of the raw features (valid-depth pixels only); the
/// baseline without any regularization.
pub fn argmax_labels(view: &View, queries: &QuerySet) -> Result<LabelMap> {
    let feats = view_features(view, 0, queries)?;
    let (w, h) = (view.width(), view.height());
    let mut labels = Raster::filled(w, h, 1, IGNORE_LABEL);
    for y in 0..h {
        for x in 0..w {
            if view.depth_at(x, y).is_some() {
                labels.set(x, y, queries.classify(feats.pixel(x, y)).0 as u16);
            }
        }
    }
    Ok(labels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::CameraPose;
    use alloc::string::ToString;

    fn queries() -> QuerySet {
        QuerySet::new(
            vec!["a".to_string(), "b".to_string(), "c".to_string()],
            3,
            vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0],
        )
        .unwrap()
    }

    fn flat_view(w: usize, h: usize, feature: impl Fn(usize, usize) -> [f32; 3]) -> View {
        let cam = CameraPose::identity(10.0, 10.0, (w as f32 - 1.0) / 2.0, (h as f32 - 1.0) / 2.0, w as u32, h as u32);
        let mut f = Raster::filled(w, h, 3, 0.0);
        for y in 0..h {
            for x in 0..w {
                f.pixel_mut(x, y).copy_from_slice(&feature(x, y));
            }
        }
        View { camera: cam, rgb: Raster::filled(w, h, 3, 0.0), depth: Raster::filled(w, h, 1, 2.0), features: Some(f), mask_proposals: None }
    }

    #[test]
    fn selection_thresholds_on_best_cosine() {
        let v = flat_view(2, 1, |x, _| if x == 0 { [1.0, 0.0, 0.0] } else { [0.0, 0.0, 0.0] });
        let sel = select_confident(&[v], &queries(), 0.45).unwrap();
        assert_eq!(sel.views[0], vec![SelectedPixel { x: 0, y: 0, confidence: 1.0 }]);
    }

    #[test]
    fn missing_features_are_reported() {
        let mut v = flat_view(2, 1, |_, _| [1.0, 0.0, 0.0]);
        v.features = None;
        assert_eq!(select_confident(&[v], &queries(), 0.45), Err(Error::MissingFeatures(0)));
    }

    #[test]
    fn single_pixel_fuses_to_itself() {
        let v = flat_view(1, 1, |_, _| [0.0, 0.6, 0.8]);
        let sel = select_confident(core::slice::from_ref(&v), &queries(), 0.1).unwrap();
        let fused = fuse_confident(&sel, &[v], 0.05).unwrap();
        assert_eq!(fused.len(), 1);
        assert_eq!(fused.feature(0), &[0.0, 0.6, 0.8]);
        assert_eq!(fused.counts[0], 1);
    }

    #[test]
    fn label_ties_go_to_lowest_index() {
        let mut fused = FusedPointSet::empty(3);
        fused.positions.push([0.0; 3]);
        fused.features.extend([0.5, 0.5, 0.0]);
        fused.counts.push(1);
        fused.view_counts.push(1);
        fused.labels.push(9);
        fused.confidences.push(0.0);
        label_fused(&mut fused, &queries()).unwrap();
        assert_eq!(fused.labels[0], 0);
        fused.features[..3].copy_from_slice(&[0.0, 0.0, 1.0]);
        label_fused(&mut fused, &queries()).unwrap();
        assert_eq!((fused.labels[0], fused.confidences[0]), (2, 1.0));
    }

    #[test]
    fn vote_ties_resolve_to_lowest_label() {
        let v = flat_view(3, 3, |_, _| [1.0, 0.0, 0.0]);
        let center = geometry::backproject_pixel(Pixel::new(1.0, 1.0), 2.0, &v.camera).unwrap().map(|v| v as f32);
        let mut fused = FusedPointSet::empty(3);
        for (label, f) in [(1u16, [0.0, 1.0, 0.0]), (1, [0.0, 1.0, 0.0]), (2, [0.0, 0.0, 1.0]), (2, [0.0, 0.0, 1.0])] {
            fused.positions.push(center);
            fused.features.extend(f);
            fused.counts.push(1);
            fused.view_counts.push(1);
            fused.labels.push(label);
            fused.confidences.push(1.0);
        }
        let set = reproject_vote(&fused, &v, &queries(), 0.01);
        assert_eq!(set.regions.len(), 1);
        let r = &set.regions[0];
        assert_eq!(r.label, 1);
        assert_eq!(r.pixels, vec![(1, 1)]);
        assert_eq!(r.feature, vec![0.0, 0.5, 0.5]);
    }

    fn region(pixels: &[(u32, u32)], label: u16, confidence: f32) -> Region {
        Region { pixels: pixels.to_vec(), feature: vec![label as f32], label, confidence }
    }

    #[test]
    fn assignment_respects_tau2_and_iou() {
        let px: Vec<(u32, u32)> = (0..10).map(|i| (i, 0)).collect();
        let masks = SemanticMaskSet { width: 10, height: 1, regions: vec![region(&px, 1, 0.7)] };
        // IoU 0.9: nine of ten pixels
        let refined = vec![BinaryMask::from_pixels(10, 1, px[..9].iter().copied())];
        let out = assign_refined(&masks, &refined, 0.6, 0.5).unwrap();
        assert_eq!(out.assigned.len(), 1);
        assert_eq!(out.assigned[0].label, 1);
        assert!((out.assigned[0].iou - 0.9).abs() < 1e-6);

        let masks_low = SemanticMaskSet { width: 10, height: 1, regions: vec![region(&px, 1, 0.5)] };
        assert!(assign_refined(&masks_low, &refined, 0.6, 0.5).unwrap().assigned.is_empty());

        let refined_small = vec![BinaryMask::from_pixels(10, 1, px[..3].iter().copied())];
        assert!(assign_refined(&masks, &refined_small, 0.6, 0.5).unwrap().assigned.is_empty());
    }

    #[test]
    fn one_label_per_mask_highest_confidence_wins() {
        let a: Vec<(u32, u32)> = (0..5).map(|i| (i, 0)).collect();
        let b: Vec<(u32, u32)> = (5..10).map(|i| (i, 0)).collect();
        let masks = SemanticMaskSet { width: 10, height: 1, regions: vec![region(&a, 2, 0.8), region(&b, 1, 0.9)] };
        let all = BinaryMask::from_pixels(10, 1, a.iter().chain(&b).copied());
        let out = assign_refined(&masks, &[all], 0.6, 0.5).unwrap();
        assert_eq!(out.assigned.len(), 1);
        assert_eq!((out.assigned[0].label, out.assigned[0].source_region), (1, 1));
    }

    struct Fixed(Vec<BinaryMask>, usize);

    impl MaskProvider for Fixed {
        fn masks(&mut self, _view: usize, boxes: &[BBox]) -> Result<Vec<BinaryMask>> {
            self.1 += 1;
            Ok(self.0.iter().cycle().take(boxes.len()).cloned().collect())
        }
    }

    #[test]
    fn provider_contract() {
        let empty = SemanticMaskSet { width: 4, height: 4, regions: Vec::new() };
        let mut p = Fixed(vec![BinaryMask::empty(4, 4)], 0);
        let out = refine_with_masks(0, &empty, &mut p).unwrap();
        assert!(out.masks.is_empty());
        assert_eq!(p.1, 0);

        let one = SemanticMaskSet { width: 4, height: 4, regions: vec![region(&[(1, 1)], 0, 1.0)] };
        let mut bad = Fixed(vec![BinaryMask::empty(3, 3)], 0);
        assert!(matches!(refine_with_masks(0, &one, &mut bad), Err(Error::ProviderFailure(_))));
        let out = refine_with_masks(0, &one, &mut p).unwrap();
        assert_eq!(out.masks.len(), 1);
        assert_eq!(p.1, 1);
    }
}
