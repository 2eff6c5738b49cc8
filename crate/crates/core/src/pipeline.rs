//! End-to-end composition: per-view supervision (with or without region
//! regularization), contextual fusion, autoencoder, field initialization and
//! scene training.

use alloc::vec::Vec;

use crate::autoencoder::{self, AeConfig, AeTraining};
use crate::cloud::GaussianCloud;
use crate::contextual::{self, ContextualSpace};
use crate::crr::{self, CrrConfig, CrrOutput, MaskProvider};
use crate::error::Result;
use crate::geometry::DEFAULT_REL_TOL;
use crate::query::{self, SegResult};
use crate::scene::{LabelMap, QuerySet, Raster, View, IGNORE_LABEL};
use crate::splat::{self, RenderMode};
use crate::training::{self, Supervision, TrainConfig};

/// Which supervision feeds the 3D stages.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    /// All five regularization steps.
    Full,
    /// Raw per-pixel argmax labels and raw features.
    NoRegularization,
    /// Regularization without confidence selection.
    NoSelection,
    /// Regularization without mask refinement.
    NoRefinement,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub variant: Variant,
    pub crr: CrrConfig,
    pub ae: AeConfig,
    pub train: TrainConfig,
    pub rel_tol: f32,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            variant: Variant::Full,
            crr: CrrConfig::default(),
            ae: AeConfig::default(),
            train: TrainConfig::default(),
            rel_tol: DEFAULT_REL_TOL,
        }
    }
}

/// Per-view label maps and feature rasters used as 2D supervision.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewSupervision {
    pub labels: Vec<LabelMap>,
    pub features: Vec<Raster<f32>>,
    pub crr: Option<CrrOutput>,
}

/// Builds 2D supervision. Regularized features replace raw ones on labeled
/// pixels and raw features remain elsewhere.
pub fn supervise_views(views: &[View], queries: &QuerySet, provider: &mut dyn MaskProvider, cfg: &PipelineConfig) -> Result<ViewSupervision> {
    let raw = |i: usize, v: &View| v.features.clone().ok_or(crate::Error::MissingFeatures(i));
    if cfg.variant == Variant::NoRegularization {
        let labels = views.iter().map(|v| crr::argmax_labels(v, queries)).collect::<Result<Vec<_>>>()?;
        let features = views.iter().enumerate().map(|(i, v)| raw(i, v)).collect::<Result<Vec<_>>>()?;
        return Ok(ViewSupervision { labels, features, crr: None });
    }
    let mut c = cfg.crr.clone();
    c.confidence_selection &= cfg.variant != Variant::NoSelection;
    c.mask_refinement &= cfg.variant != Variant::NoRefinement;
    let out = crr::run_crr(views, queries, provider, &c)?;
    let mut labels = Vec::with_capacity(views.len());
    let mut features = Vec::with_capacity(views.len());
    for (i, (v, o)) in views.iter().zip(&out.views).enumerate() {
        let mut f = raw(i, v)?;
        let d = f.channels;
        for (p, &l) in o.labels.data.iter().enumerate() {
            if l != IGNORE_LABEL {
                f.data[p * d..(p + 1) * d].copy_from_slice(&o.features.data[p * d..(p + 1) * d]);
            }
        }
        labels.push(o.labels.clone());
        features.push(f);
    }
    Ok(ViewSupervision { labels, features, crr: Some(out) })
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub supervision: ViewSupervision,
    pub space: ContextualSpace,
    pub pseudo_labels: Vec<u16>,
    pub ae: AeTraining,
    pub queries_z: Vec<f32>,
    pub cloud: GaussianCloud,
    pub losses: Vec<f32>,
}

/// Runs every stage on `views`, seeding the semantic fields of `cloud`.
pub fn run_pipeline(
    views: &[View],
    queries: &QuerySet,
    cloud: &GaussianCloud,
    provider: &mut dyn MaskProvider,
    cfg: &PipelineConfig,
) -> Result<PipelineOutput> {
    let supervision = supervise_views(views, queries, provider, cfg)?;
    let fused_views: Vec<View> = views
        .iter()
        .zip(&supervision.features)
        .map(|(v, f)| View { features: Some(f.clone()), ..v.clone() })
        .collect();
    let space = contextual::fuse_multiview(&cloud.means, &fused_views, cfg.rel_tol)?;
    let pseudo_labels = contextual::pool_labels(&cloud.means, views, &supervision.labels, queries.len(), cfg.rel_tol)?;
    let ae = autoencoder::train_ae(&space, queries, &pseudo_labels, &cfg.ae)?;
    let latent = autoencoder::encode_space(&ae.params, &space)?;
    let queries_z = autoencoder::encode_queries(&ae.params, queries)?;
    let init = training::init_semantic_fields(cloud, &space, &latent)?;
    let sup = supervision
        .labels
        .iter()
        .zip(&supervision.features)
        .map(|(l, f)| Ok(Supervision { labels: l.clone(), latent: Some(autoencoder::encode_raster(&ae.params, f)?) }))
        .collect::<Result<Vec<_>>>()?;
    let trained = training::train_scene(views, &sup, &init, &queries_z, &cfg.train)?;
    Ok(PipelineOutput { supervision, space, pseudo_labels, ae, queries_z, cloud: trained.cloud, losses: trained.losses })
}

/// Renders each view, segments it against the latent queries and scores it.
pub fn evaluate_views(cloud: &GaussianCloud, views: &[View], gt: &[LabelMap], queries_z: &[f32], n_classes: usize) -> Result<SegResult> {
    let preds = segment_views(cloud, views, queries_z)?;
    query::evaluate(&preds, gt, n_classes)
}

pub fn segment_views(cloud: &GaussianCloud, views: &[View], queries_z: &[f32]) -> Result<Vec<LabelMap>> {
    views
        .iter()
        .map(|v| query::segment_render(&splat::render(cloud, &v.camera, RenderMode::Feature), queries_z))
        .collect()
}
