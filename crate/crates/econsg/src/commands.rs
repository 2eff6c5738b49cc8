//! Subcommands of the `econsg` binary. Every command is a pure function of its
//! input files and flags, so reruns write bit-identical outputs.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use econsg_core::autoencoder::{self, AeConfig};
use econsg_core::contextual::{self, ContextualSpace};
use econsg_core::crr::{self, CrrConfig, MaskProvider};
use econsg_core::geometry::{BBox, DEFAULT_REL_TOL};
use econsg_core::pipeline::{supervise_views, PipelineConfig, Variant, ViewSupervision};
use econsg_core::query;
use econsg_core::splat::{render, RenderMode};
use econsg_core::synth::{make_scene, OracleMaskProvider};
use econsg_core::training::{self, Supervision, TrainConfig};
use econsg_core::{LabelMap, QuerySet, Raster, View, IGNORE_LABEL};

use crate::error::{io_err, IoError, Result};
use crate::provider::{answer_request, FileMaskProvider};
use crate::scene_io::*;
use crate::spec_file::{format_spec, parse_spec};

#[derive(Debug, Parser)]
#[command(name = "econsg", version, about = "Open-vocabulary semantic Gaussian splatting pipeline")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CrrVariant {
    Full,
    NoSelection,
    NoRefinement,
    /// Raw per-pixel argmax labels, no regularization.
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum RenderKind {
    Feature,
    Color,
    Alpha,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum QueryMode {
    Segment,
    Relevancy,
    Localize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EditOp {
    Delete,
    Recolor,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ProviderArg {
    Oracle,
    File(PathBuf),
}

fn parse_provider(s: &str) -> std::result::Result<ProviderArg, String> {
    match s.split_once(':') {
        None if s == "oracle" => Ok(ProviderArg::Oracle),
        Some(("file", dir)) if !dir.is_empty() => Ok(ProviderArg::File(PathBuf::from(dir))),
        _ => Err(format!("expected `oracle` or `file:<dir>`, got {s:?}")),
    }
}

fn parse_bbox(s: &str) -> std::result::Result<BBox, String> {
    let v: Vec<u32> = s.split(',').map(|t| t.trim().parse::<u32>().map_err(|e| e.to_string())).collect::<std::result::Result<_, _>>()?;
    match v[..] {
        [u_min, v_min, u_max, v_max] if u_min <= u_max && v_min <= v_max => Ok(BBox { u_min, v_min, u_max, v_max }),
        _ => Err(format!("expected u_min,v_min,u_max,v_max, got {s:?}")),
    }
}

fn parse_rgb(s: &str) -> std::result::Result<[f32; 3], String> {
    let v: Vec<f32> = s.split(',').map(|t| t.trim().parse::<f32>().map_err(|e| e.to_string())).collect::<std::result::Result<_, _>>()?;
    match v[..] {
        [r, g, b] if v.iter().all(|c| (0.0..=1.0).contains(c)) => Ok([r, g, b]),
        _ => Err(format!("expected r,g,b in [0,1], got {s:?}")),
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic scene directory from a key=value spec.
    Synth {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Region regularization of per-view labels and features.
    Crr {
        #[arg(long)]
        scene: PathBuf,
        /// Defaults to the scene's queries.ecsg.
        #[arg(long)]
        queries: Option<PathBuf>,
        #[arg(long, default_value_t = 0.45)]
        tau1: f32,
        #[arg(long, default_value_t = 0.6)]
        tau2: f32,
        /// Voxel edge; defaults to the point-cloud diameter / 256.
        #[arg(long)]
        voxel: Option<f32>,
        #[arg(long, value_parser = parse_provider, default_value = "oracle")]
        provider: ProviderArg,
        #[arg(long, value_enum, default_value_t = CrrVariant::Full)]
        variant: CrrVariant,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fuse per-view features onto the scene's Gaussian centers.
    Fuse {
        #[arg(long)]
        scene: PathBuf,
        /// Output directory of `crr`; raw scene features and argmax labels otherwise.
        #[arg(long)]
        supervision: Option<PathBuf>,
        #[arg(long)]
        queries: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Also write majority-vote point labels.
        #[arg(long)]
        labels_out: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_REL_TOL)]
        rel_tol: f32,
    },
    /// Train the latent autoencoder on a contextual space.
    TrainAe {
        #[arg(long)]
        contextual: PathBuf,
        #[arg(long)]
        queries: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        #[arg(long, default_value_t = autoencoder::DEFAULT_LATENT_DIM)]
        dz: usize,
        #[arg(long, default_value_t = AeConfig::default().epochs)]
        epochs: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Optimize the scene's Gaussians with latent semantic supervision.
    Train {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        ae: PathBuf,
        #[arg(long)]
        queries: Option<PathBuf>,
        #[arg(long)]
        supervision: Option<PathBuf>,
        /// Precomputed `fuse` output for the field initialization.
        #[arg(long)]
        contextual: Option<PathBuf>,
        #[arg(long, default_value_t = 800)]
        iters: usize,
        #[arg(long = "lr-sem", default_value_t = 0.0025)]
        lr_sem: f32,
        #[arg(long, default_value_t = 1.0)]
        lambda2d: f32,
        #[arg(long, default_value_t = 1.0)]
        lambdasem: f32,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        freeze_geometry: bool,
        #[arg(long, default_value_t = DEFAULT_REL_TOL)]
        rel_tol: f32,
        #[arg(long)]
        out: PathBuf,
    },
    /// Render one view of a Gaussian cloud to an ECSGFMAP file.
    Render {
        #[arg(long)]
        gaussians: PathBuf,
        #[arg(long)]
        cameras: PathBuf,
        #[arg(long)]
        view: usize,
        #[arg(long, value_enum, default_value_t = RenderKind::Feature)]
        mode: RenderKind,
        #[arg(long)]
        out: PathBuf,
    },
    /// Open-vocabulary queries against a trained scene.
    Query {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        ae: PathBuf,
        #[arg(long)]
        queries: PathBuf,
        #[arg(long)]
        cameras: PathBuf,
        /// All views when omitted (segment mode only; `--out` is then a directory).
        #[arg(long)]
        view: Option<usize>,
        #[arg(long, value_enum)]
        mode: QueryMode,
        /// Query label for relevancy and localization.
        #[arg(long)]
        query: Option<String>,
        /// Ground-truth box `u_min,v_min,u_max,v_max` scored by localization.
        #[arg(long = "box", value_parser = parse_bbox)]
        bbox: Option<BBox>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Delete or recolor the Gaussians matching a query.
    Edit {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        ae: PathBuf,
        #[arg(long)]
        queries: PathBuf,
        #[arg(long, value_enum)]
        op: EditOp,
        #[arg(long)]
        query: String,
        #[arg(long, default_value_t = 0.5)]
        theta: f32,
        #[arg(long, value_parser = parse_rgb, default_value = "1,0,1")]
        rgb: [f32; 3],
        #[arg(long)]
        out: PathBuf,
    },
    /// Score predicted label maps against ground truth.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        /// Defaults to one past the largest label present.
        #[arg(long)]
        classes: Option<usize>,
    },
    /// Answer file-provider requests from a scene's mask proposals.
    MaskServer {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        dir: PathBuf,
        /// Stop after this many answered requests; serve until killed or idle otherwise.
        #[arg(long)]
        requests: Option<usize>,
        /// Idle time after which the server gives up.
        #[arg(long, default_value_t = 600)]
        timeout_secs: u64,
    },
}

pub fn run(cli: Cli, out: &mut dyn Write) -> Result<()> {
    match cli.command {
        Command::Synth { spec, out: dir } => synth(&spec, &dir),
        Command::Crr { scene, queries, tau1, tau2, voxel, provider, variant, out: dir } => {
            let crr = CrrConfig { tau1, tau2, voxel_size: voxel, ..Default::default() };
            crr_cmd(&scene, queries.as_deref(), crr, &provider, variant, &dir)
        }
        Command::Fuse { scene, supervision, queries, out: path, labels_out, rel_tol } => {
            fuse(&scene, supervision.as_deref(), queries.as_deref(), &path, labels_out.as_deref(), rel_tol)
        }
        Command::TrainAe { contextual, queries, labels, dz, epochs, seed, out: path } => {
            let cfg = AeConfig { latent_dim: dz, epochs, seed, ..Default::default() };
            train_ae(&contextual, &queries, &labels, &cfg, &path, out)
        }
        Command::Train { scene, ae, queries, supervision, contextual, iters, lr_sem, lambda2d, lambdasem, seed, freeze_geometry, rel_tol, out: path } => {
            let cfg = TrainConfig { iterations: iters, lr_semantic: lr_sem, lambda_2d: lambda2d, lambda_sem: lambdasem, seed, freeze_geometry, ..Default::default() };
            let inputs = TrainInputs { scene: &scene, ae: &ae, queries: queries.as_deref(), supervision: supervision.as_deref(), contextual: contextual.as_deref() };
            train(inputs, &cfg, rel_tol, &path, out)
        }
        Command::Render { gaussians, cameras, view, mode, out: path } => render_cmd(&gaussians, &cameras, view, mode, &path),
        Command::Query { scene, ae, queries, cameras, view, mode, query, bbox, out: path } => {
            query_cmd(QueryInputs { scene: &scene, ae: &ae, queries: &queries, cameras: &cameras }, view, mode, query.as_deref(), bbox, path.as_deref(), out)
        }
        Command::Edit { scene, ae, queries, op, query, theta, rgb, out: path } => edit(&scene, &ae, &queries, op, &query, theta, rgb, &path, out),
        Command::Eval { pred, gt, classes } => eval(&pred, &gt, classes, out),
        Command::MaskServer { scene, dir, requests, timeout_secs } => mask_server(&scene, &dir, requests, std::time::Duration::from_secs(timeout_secs)),
    }
}

fn usage(msg: impl Into<String>) -> IoError {
    IoError::Malformed { what: "arguments", detail: msg.into() }
}

pub fn synth(spec_path: &Path, dir: &Path) -> Result<()> {
    let text = std::fs::read_to_string(spec_path).map_err(io_err(spec_path))?;
    let spec = parse_spec(&text)?;
    let s = make_scene(&spec)?;
    save_scene(
        dir,
        &SceneDir {
            views: s.views,
            labels: Some(s.labels),
            queries: Some(s.prototypes.clone()),
            cloud: Some(s.cloud),
            classes: Some(s.classes),
        },
    )?;
    std::fs::write(dir.join("spec.toml"), format_spec(&spec)).map_err(io_err(dir.join("spec.toml")))?;
    if !s.test_views.is_empty() {
        let test = SceneDir { views: s.test_views, labels: Some(s.test_labels), queries: Some(s.prototypes), cloud: None, classes: None };
        save_scene(&dir.join("test"), &test)?;
    }
    Ok(())
}

fn scene_queries(scene: &SceneDir, path: Option<&Path>) -> Result<QuerySet> {
    match path {
        Some(p) => load_queries(p),
        None => scene.queries.clone().ok_or_else(|| usage("no --queries given and the scene has no queries.ecsg")),
    }
}

fn make_provider(p: &ProviderArg, views: &[View]) -> Result<Box<dyn MaskProvider>> {
    Ok(match p {
        ProviderArg::Oracle => Box::new(OracleMaskProvider::from_views(views)?),
        ProviderArg::File(dir) => Box::new(FileMaskProvider::new(dir)),
    })
}

pub fn crr_cmd(scene_dir: &Path, queries: Option<&Path>, crr: CrrConfig, provider: &ProviderArg, variant: CrrVariant, dir: &Path) -> Result<()> {
    let scene = load_scene(scene_dir)?;
    let q = scene_queries(&scene, queries)?;
    let variant = match variant {
        CrrVariant::Full => Variant::Full,
        CrrVariant::NoSelection => Variant::NoSelection,
        CrrVariant::NoRefinement => Variant::NoRefinement,
        CrrVariant::None => Variant::NoRegularization,
    };
    let mut provider = make_provider(provider, &scene.views)?;
    let sup = supervise_views(&scene.views, &q, provider.as_mut(), &PipelineConfig { variant, crr, ..Default::default() })?;
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    for (i, (l, f)) in sup.labels.iter().zip(&sup.features).enumerate() {
        save_mask(&view_file(dir, "labels", i), l)?;
        save_features(&view_file(dir, "features", i), f)?;
    }
    if let Some(out) = &sup.crr {
        save_fused(&dir.join("fused.ecsg"), &out.fused)?;
    }
    Ok(())
}

/// Supervision from a `crr` output directory, or raw features with argmax labels.
fn load_supervision(scene: &SceneDir, q: Option<&QuerySet>, dir: Option<&Path>) -> Result<ViewSupervision> {
    let n = scene.views.len();
    match dir {
        Some(d) => Ok(ViewSupervision {
            labels: load_label_maps(d, n)?,
            features: (0..n).map(|i| load_features(&view_file(d, "features", i))).collect::<Result<_>>()?,
            crr: None,
        }),
        None => {
            let q = q.ok_or_else(|| usage("raw supervision needs queries"))?;
            let labels = scene.views.iter().map(|v| crr::argmax_labels(v, q)).collect::<econsg_core::Result<Vec<_>>>()?;
            let features = scene.views.iter().enumerate().map(|(i, v)| v.features.clone().ok_or(econsg_core::Error::MissingFeatures(i))).collect::<econsg_core::Result<_>>()?;
            Ok(ViewSupervision { labels, features, crr: None })
        }
    }
}

fn with_features(views: &[View], feats: &[Raster<f32>]) -> Vec<View> {
    views.iter().zip(feats).map(|(v, f)| View { features: Some(f.clone()), ..v.clone() }).collect()
}

fn scene_cloud(scene: &SceneDir) -> Result<&econsg_core::GaussianCloud> {
    scene.cloud.as_ref().ok_or_else(|| usage("the scene has no gaussians.ecsg"))
}

pub fn fuse(scene_dir: &Path, sup_dir: Option<&Path>, queries: Option<&Path>, path: &Path, labels_out: Option<&Path>, rel_tol: f32) -> Result<()> {
    let scene = load_scene(scene_dir)?;
    let q = match (queries, &scene.queries) {
        (None, None) => None,
        (p, _) => Some(scene_queries(&scene, p)?),
    };
    let sup = load_supervision(&scene, q.as_ref(), sup_dir)?;
    let cloud = scene_cloud(&scene)?;
    let space = contextual::fuse_multiview(&cloud.means, &with_features(&scene.views, &sup.features), rel_tol)?;
    save_contextual(path, &space)?;
    if let Some(lp) = labels_out {
        let k = q.as_ref().ok_or_else(|| usage("--labels-out needs queries"))?.len();
        save_labels(lp, &contextual::pool_labels(&cloud.means, &scene.views, &sup.labels, k, rel_tol)?)?;
    }
    Ok(())
}

pub fn train_ae(contextual: &Path, queries: &Path, labels: &Path, cfg: &AeConfig, path: &Path, out: &mut dyn Write) -> Result<()> {
    let space = load_contextual(contextual)?;
    let q = load_queries(queries)?;
    let labels = load_labels(labels)?;
    let trained = autoencoder::train_ae(&space, &q, &labels, cfg)?;
    save_mlp(path, &trained.params)?;
    if let Some(l) = trained.losses.last() {
        writeln!(out, "final_loss={l}").map_err(io_err("stdout"))?;
    }
    Ok(())
}

pub struct TrainInputs<'a> {
    pub scene: &'a Path,
    pub ae: &'a Path,
    pub queries: Option<&'a Path>,
    pub supervision: Option<&'a Path>,
    pub contextual: Option<&'a Path>,
}

pub fn train(inp: TrainInputs<'_>, cfg: &TrainConfig, rel_tol: f32, path: &Path, out: &mut dyn Write) -> Result<()> {
    let scene = load_scene(inp.scene)?;
    let q = scene_queries(&scene, inp.queries)?;
    let params = load_mlp(inp.ae)?;
    let sup = load_supervision(&scene, Some(&q), inp.supervision)?;
    let cloud = scene_cloud(&scene)?;
    let space: ContextualSpace = match inp.contextual {
        Some(p) => load_contextual(p)?,
        None => contextual::fuse_multiview(&cloud.means, &with_features(&scene.views, &sup.features), rel_tol)?,
    };
    let latent = autoencoder::encode_space(&params, &space)?;
    let queries_z = autoencoder::encode_queries(&params, &q)?;
    let init = training::init_semantic_fields(cloud, &space, &latent)?;
    let supervision = sup
        .labels
        .iter()
        .zip(&sup.features)
        .map(|(l, f)| Ok(Supervision { labels: l.clone(), latent: Some(autoencoder::encode_raster(&params, f)?) }))
        .collect::<econsg_core::Result<Vec<_>>>()?;
    let trained = training::train_scene(&scene.views, &supervision, &init, &queries_z, cfg)?;
    save_cloud(path, &trained.cloud)?;
    if let Some(l) = trained.losses.last() {
        writeln!(out, "final_loss={l}").map_err(io_err("stdout"))?;
    }
    Ok(())
}

pub fn render_cmd(gaussians: &Path, cameras: &Path, view: usize, mode: RenderKind, path: &Path) -> Result<()> {
    let cloud = load_cloud(gaussians)?;
    let cams = load_cameras(cameras)?;
    let cam = cams.get(view).ok_or_else(|| usage(format!("view {view} out of range for {} cameras", cams.len())))?;
    let r = match mode {
        RenderKind::Feature => render(&cloud, cam, RenderMode::Feature).features,
        RenderKind::Color => render(&cloud, cam, RenderMode::Color).color,
        RenderKind::Alpha => render(&cloud, cam, RenderMode::Color).alpha,
    };
    save_features(path, &r)
}

pub struct QueryInputs<'a> {
    pub scene: &'a Path,
    pub ae: &'a Path,
    pub queries: &'a Path,
    pub cameras: &'a Path,
}

fn query_row<'a>(q: &QuerySet, queries_z: &'a [f32], label: Option<&str>) -> Result<&'a [f32]> {
    let label = label.ok_or_else(|| usage("--query is required for this mode"))?;
    let k = q.index_of(label).ok_or_else(|| usage(format!("unknown query label {label:?}")))?;
    let dz = queries_z.len() / q.len();
    Ok(&queries_z[k * dz..(k + 1) * dz])
}

pub fn query_cmd(
    inp: QueryInputs<'_>,
    view: Option<usize>,
    mode: QueryMode,
    label: Option<&str>,
    bbox: Option<BBox>,
    path: Option<&Path>,
    out: &mut dyn Write,
) -> Result<()> {
    let cloud = load_cloud(inp.scene)?;
    let params = load_mlp(inp.ae)?;
    let q = load_queries(inp.queries)?;
    let queries_z = autoencoder::encode_queries(&params, &q)?;
    let cams = load_cameras(inp.cameras)?;
    let cam_at = |i: usize| cams.get(i).ok_or_else(|| usage(format!("view {i} out of range for {} cameras", cams.len())));
    let say = |out: &mut dyn Write, s: String| writeln!(out, "{s}").map_err(io_err("stdout"));
    match (mode, view) {
        (QueryMode::Segment, None) => {
            let dir = path.ok_or_else(|| usage("--out directory is required"))?;
            std::fs::create_dir_all(dir).map_err(io_err(dir))?;
            for (i, cam) in cams.iter().enumerate() {
                let seg = query::segment_render(&render(&cloud, cam, RenderMode::Feature), &queries_z)?;
                save_mask(&view_file(dir, "labels", i), &seg)?;
            }
            Ok(())
        }
        (QueryMode::Segment, Some(i)) => {
            let seg = query::segment_render(&render(&cloud, cam_at(i)?, RenderMode::Feature), &queries_z)?;
            save_mask(path.ok_or_else(|| usage("--out is required"))?, &seg)
        }
        (_, None) => Err(usage("--view is required for this mode")),
        (QueryMode::Relevancy, Some(i)) => {
            let r = render(&cloud, cam_at(i)?, RenderMode::Feature);
            let map = query::relevancy(&r.features, Some(&r.alpha), query_row(&q, &queries_z, label)?)?;
            // Uncovered pixels are NaN.
            let data = map.scores.iter().map(|s| s.unwrap_or(f32::NAN)).collect();
            save_features(path.ok_or_else(|| usage("--out is required"))?, &Raster::from_data(map.width, map.height, 1, data)?)
        }
        (QueryMode::Localize, Some(i)) => {
            let r = render(&cloud, cam_at(i)?, RenderMode::Feature);
            let map = query::relevancy(&r.features, Some(&r.alpha), query_row(&q, &queries_z, label)?)?;
            match map.argmax() {
                Some((x, y)) => say(out, format!("x={x}\ny={y}"))?,
                None => say(out, String::from("x=none\ny=none"))?,
            }
            if let Some(b) = bbox {
                say(out, format!("hit={}", query::localize(&map, &b) as u8))?;
            }
            Ok(())
        }
    }
}

#[allow(clippy::too_many_arguments)]
pub fn edit(scene: &Path, ae: &Path, queries: &Path, op: EditOp, label: &str, theta: f32, rgb: [f32; 3], path: &Path, out: &mut dyn Write) -> Result<()> {
    let cloud = load_cloud(scene)?;
    let params = load_mlp(ae)?;
    let q = load_queries(queries)?;
    let queries_z = autoencoder::encode_queries(&params, &q)?;
    let row = query_row(&q, &queries_z, Some(label))?;
    let edit = match op {
        EditOp::Delete => query::delete_by_query(&cloud, row, theta)?,
        EditOp::Recolor => query::recolor_by_query(&cloud, row, theta, rgb)?,
    };
    if edit.cloud.is_empty() {
        return Err(usage("the edit would remove every Gaussian"));
    }
    save_cloud(path, &edit.cloud)?;
    writeln!(out, "selected={}", edit.selected).map_err(io_err("stdout"))
}

fn max_label(maps: &[LabelMap]) -> Option<usize> {
    maps.iter().flat_map(|m| m.data.iter()).filter(|&&l| l != IGNORE_LABEL).max().map(|&l| l as usize)
}

pub fn eval(pred: &Path, gt: &Path, classes: Option<usize>, out: &mut dyn Write) -> Result<()> {
    let gts = load_label_dir(gt)?;
    if gts.is_empty() {
        return Err(usage(format!("no labels_NNNN.ecsg files in {}", gt.display())));
    }
    let preds = load_label_maps(pred, gts.len())?;
    let k = classes.unwrap_or_else(|| max_label(&gts).max(max_label(&preds)).map_or(1, |m| m + 1));
    let res = query::evaluate(&preds, &gts, k)?;
    let mut text = format!("miou={}\nmacc={}\n", res.miou, res.macc);
    for (c, iou) in res.iou.iter().enumerate() {
        if let Some(v) = iou {
            text.push_str(&format!("iou_{c}={v}\n"));
        }
    }
    out.write_all(text.as_bytes()).map_err(io_err("stdout"))
}

pub fn mask_server(scene_dir: &Path, dir: &Path, requests: Option<usize>, timeout: std::time::Duration) -> Result<()> {
    let scene = load_scene(scene_dir)?;
    let mut oracle = OracleMaskProvider::from_views(&scene.views)?;
    let mut idle_since = std::time::Instant::now();
    let mut answered = 0;
    while requests.is_none_or(|n| answered < n) {
        let mut any = false;
        for (i, v) in scene.views.iter().enumerate() {
            if answer_request(dir, i, v.width(), v.height(), &mut oracle)? {
                answered += 1;
                any = true;
            }
        }
        if any {
            idle_since = std::time::Instant::now();
        } else if idle_since.elapsed() > timeout {
            return match requests {
                Some(n) => Err(IoError::Provider(format!("answered {answered} of {n} requests before going idle"))),
                None => Ok(()),
            };
        } else {
            std::thread::sleep(std::time::Duration::from_millis(10));
        }
    }
    Ok(())
}
