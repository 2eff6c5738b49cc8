//! Typed load/save for every artifact, and the scene directory layout:
//!
//! ```text
//! cameras.ecsg        ECSGCAMS, one entry per view (authoritative view count)
//! rgb_NNNN.ecsg       ECSGFMAP with D = 3
//! depth_NNNN.ecsg     ECSGDPTH
//! features_NNNN.ecsg  ECSGFMAP (optional)
//! masks_NNNN.ecsg     ECSGMASK, one channel of region ids (optional)
//! labels_NNNN.ecsg    ECSGMASK ground-truth labels (optional)
//! queries.ecsg        ECSGQURY (optional)
//! gaussians.ecsg      ECSGGAUS initial cloud (optional)
//! classes.ecsg        ECSGLABL per-Gaussian class ids (optional)
//! test/               nested scene of held-out views (optional)
//! ```

use std::path::{Path, PathBuf};

use econsg_core::autoencoder::{Linear, Mlp, MlpParams};
use econsg_core::contextual::ContextualSpace;
use econsg_core::crr::FusedPointSet;
use econsg_core::{CameraPose, GaussianCloud, LabelMap, QuerySet, Raster, View};

use crate::container::{load_container, save_container, Kind, Reader, Writer};
use crate::error::{io_err, IoError, Result};

fn dims_u32(vals: &[usize]) -> Result<Vec<u32>> {
    vals.iter()
        .map(|&v| u32::try_from(v).map_err(|_| IoError::DimensionMismatch(format!("dimension {v} exceeds u32"))))
        .collect()
}

pub fn save_features(path: &Path, r: &Raster<f32>) -> Result<()> {
    let mut w = Writer::default();
    w.f32s(&r.data);
    save_container(path, Kind::Features, &dims_u32(&[r.height, r.width, r.channels])?, &w.0)
}

pub fn load_features(path: &Path) -> Result<Raster<f32>> {
    let c = load_container(path, Kind::Features)?;
    let [h, w, d] = [0, 1, 2].map(|i| c.dims[i] as usize);
    Ok(Raster::from_data(w, h, d, Reader::new(&c.payload).f32s(h * w * d))?)
}

pub fn save_depth(path: &Path, r: &Raster<f32>) -> Result<()> {
    if r.channels != 1 {
        return Err(IoError::DimensionMismatch(format!("depth raster has {} channels", r.channels)));
    }
    let mut w = Writer::default();
    w.f32s(&r.data);
    save_container(path, Kind::Depth, &dims_u32(&[r.height, r.width])?, &w.0)
}

pub fn load_depth(path: &Path) -> Result<Raster<f32>> {
    let c = load_container(path, Kind::Depth)?;
    let [h, w] = [0, 1].map(|i| c.dims[i] as usize);
    Ok(Raster::from_data(w, h, 1, Reader::new(&c.payload).f32s(h * w))?)
}

pub fn save_mask(path: &Path, r: &Raster<u16>) -> Result<()> {
    let mut w = Writer::default();
    w.u16s(&r.data);
    save_container(path, Kind::Mask, &dims_u32(&[r.height, r.width, r.channels])?, &w.0)
}

pub fn load_mask(path: &Path) -> Result<Raster<u16>> {
    let c = load_container(path, Kind::Mask)?;
    let [h, w, ch] = [0, 1, 2].map(|i| c.dims[i] as usize);
    Ok(Raster::from_data(w, h, ch, Reader::new(&c.payload).u16s(h * w * ch))?)
}

/// Single-channel label map.
pub fn load_label_map(path: &Path) -> Result<LabelMap> {
    let m = load_mask(path)?;
    if m.channels != 1 {
        return Err(IoError::DimensionMismatch(format!("{}: label map has {} channels", path.display(), m.channels)));
    }
    Ok(m)
}

pub fn save_queries(path: &Path, q: &QuerySet) -> Result<()> {
    if let Some(l) = q.labels().iter().find(|l| l.contains('\n')) {
        return Err(IoError::Malformed { what: "query label", detail: format!("{l:?} contains a newline") });
    }
    let labels = q.labels().join("\n");
    let mut w = Writer::default();
    w.f32s(q.embeddings());
    w.0.extend_from_slice(labels.as_bytes());
    save_container(path, Kind::Queries, &dims_u32(&[q.len(), q.dim(), labels.len()])?, &w.0)
}

/// Rows within `1e-3` of unit norm are re-normalized; others are rejected.
pub fn load_queries(path: &Path) -> Result<QuerySet> {
    let c = load_container(path, Kind::Queries)?;
    let [k, d, l] = [0, 1, 2].map(|i| c.dims[i] as usize);
    let mut r = Reader::new(&c.payload);
    let emb = r.f32s(k * d);
    let text = std::str::from_utf8(r.bytes(l)).map_err(|e| IoError::Malformed { what: "query labels", detail: e.to_string() })?;
    let labels: Vec<String> = text.split('\n').map(String::from).collect();
    if labels.len() != k {
        return Err(IoError::Malformed { what: "query labels", detail: format!("{} labels for {k} rows", labels.len()) });
    }
    Ok(QuerySet::new(labels, d, emb)?)
}

pub fn save_cloud(path: &Path, c: &GaussianCloud) -> Result<()> {
    let mut w = Writer::default();
    for i in 0..c.len() {
        w.f32s(&c.means[i]);
        w.f32s(&c.rotations[i]);
        w.f32s(&c.log_scales[i]);
        w.f32(c.opacity_logits[i]);
        w.f32s(&c.colors[i]);
        w.f32s(c.feature(i));
    }
    save_container(path, Kind::Gaussians, &dims_u32(&[c.len(), c.feature_dim])?, &w.0)
}

pub fn load_cloud(path: &Path) -> Result<GaussianCloud> {
    let c = load_container(path, Kind::Gaussians)?;
    let [n, dz] = [0, 1].map(|i| c.dims[i] as usize);
    let mut r = Reader::new(&c.payload);
    let mut cloud = GaussianCloud::with_capacity(n, dz);
    for _ in 0..n {
        let mean = [r.f32(), r.f32(), r.f32()];
        let rot = [r.f32(), r.f32(), r.f32(), r.f32()];
        let log_scale = [r.f32(), r.f32(), r.f32()];
        let opacity = r.f32();
        let color = [r.f32(), r.f32(), r.f32()];
        cloud.push(mean, rot, log_scale, opacity, color, &r.f32s(dz));
    }
    cloud.validate()?;
    Ok(cloud)
}

pub fn save_cameras(path: &Path, cams: &[CameraPose]) -> Result<()> {
    let mut w = Writer::default();
    for c in cams {
        w.u32(c.width);
        w.u32(c.height);
        w.f32s(&[c.fx, c.fy, c.cx, c.cy]);
        c.rotation.iter().for_each(|row| w.f32s(row));
        w.f32s(&c.translation);
    }
    save_container(path, Kind::Cameras, &dims_u32(&[cams.len()])?, &w.0)
}

pub fn load_cameras(path: &Path) -> Result<Vec<CameraPose>> {
    let c = load_container(path, Kind::Cameras)?;
    let mut r = Reader::new(&c.payload);
    (0..c.dims[0])
        .map(|_| {
            let (width, height) = (r.u32(), r.u32());
            let [fx, fy, cx, cy] = [r.f32(), r.f32(), r.f32(), r.f32()];
            let rotation = [[r.f32(), r.f32(), r.f32()], [r.f32(), r.f32(), r.f32()], [r.f32(), r.f32(), r.f32()]];
            let translation = [r.f32(), r.f32(), r.f32()];
            let cam = CameraPose { fx, fy, cx, cy, rotation, translation, width, height };
            cam.validate()?;
            Ok(cam)
        })
        .collect()
}

pub fn save_contextual(path: &Path, s: &ContextualSpace) -> Result<()> {
    let mut w = Writer::default();
    for p in 0..s.len() {
        w.f32s(&s.points[p]);
        w.u32(s.counts[p]);
        w.f32s(s.feature(p));
    }
    save_container(path, Kind::Contextual, &dims_u32(&[s.len(), s.dim])?, &w.0)
}

pub fn load_contextual(path: &Path) -> Result<ContextualSpace> {
    let c = load_container(path, Kind::Contextual)?;
    let [n, d] = [0, 1].map(|i| c.dims[i] as usize);
    let mut r = Reader::new(&c.payload);
    let mut s = ContextualSpace { points: Vec::with_capacity(n), dim: d, features: Vec::with_capacity(n * d), counts: Vec::with_capacity(n) };
    for _ in 0..n {
        s.points.push([r.f32(), r.f32(), r.f32()]);
        s.counts.push(r.u32());
        s.features.extend(r.f32s(d));
    }
    s.validate()?;
    Ok(s)
}

pub fn save_mlp(path: &Path, p: &MlpParams<f32>) -> Result<()> {
    let layers = || p.encoder.layers.iter().chain(&p.decoder.layers);
    let mut w = Writer::default();
    for l in layers() {
        w.u32(dims_u32(&[l.inputs])?[0]);
        w.u32(dims_u32(&[l.outputs])?[0]);
    }
    let mut count = 0;
    for l in layers() {
        w.f32s(&l.weight);
        w.f32s(&l.bias);
        count += l.weight.len() + l.bias.len();
    }
    save_container(path, Kind::Mlp, &dims_u32(&[p.encoder.layers.len(), p.decoder.layers.len(), count])?, &w.0)
}

pub fn load_mlp(path: &Path) -> Result<MlpParams<f32>> {
    let c = load_container(path, Kind::Mlp)?;
    let [e, f, s] = [0, 1, 2].map(|i| c.dims[i] as usize);
    let mut r = Reader::new(&c.payload);
    let shapes: Vec<(usize, usize)> = (0..e + f).map(|_| (r.u32() as usize, r.u32() as usize)).collect();
    let need = shapes.iter().try_fold(0usize, |acc, (i, o)| acc.checked_add(i.checked_mul(*o)?.checked_add(*o)?));
    if need != Some(s) {
        return Err(IoError::Malformed { what: "autoencoder", detail: format!("layer shapes need {need:?} values, header says {s}") });
    }
    let mut layers: Vec<Linear<f32>> = shapes
        .iter()
        .map(|&(inputs, outputs)| Linear { inputs, outputs, weight: r.f32s(inputs * outputs), bias: r.f32s(outputs) })
        .collect();
    let decoder = Mlp { layers: layers.split_off(e) };
    let params = MlpParams { encoder: Mlp { layers }, decoder };
    params.validate()?;
    Ok(params)
}

pub fn save_fused(path: &Path, s: &FusedPointSet) -> Result<()> {
    let mut w = Writer::default();
    let d = s.dim;
    for i in 0..s.positions.len() {
        w.f32s(&s.positions[i]);
        w.u32(s.counts[i]);
        w.u32(s.view_counts[i]);
        w.u32(s.labels[i] as u32);
        w.f32(s.confidences[i]);
        w.f32s(&s.features[i * d..(i + 1) * d]);
    }
    save_container(path, Kind::Fused, &dims_u32(&[s.positions.len(), d])?, &w.0)
}

pub fn load_fused(path: &Path) -> Result<FusedPointSet> {
    let c = load_container(path, Kind::Fused)?;
    let [n, d] = [0, 1].map(|i| c.dims[i] as usize);
    let mut r = Reader::new(&c.payload);
    let mut s = FusedPointSet {
        dim: d,
        positions: Vec::with_capacity(n),
        features: Vec::with_capacity(n * d),
        counts: Vec::with_capacity(n),
        view_counts: Vec::with_capacity(n),
        labels: Vec::with_capacity(n),
        confidences: Vec::with_capacity(n),
    };
    for _ in 0..n {
        s.positions.push([r.f32(), r.f32(), r.f32()]);
        s.counts.push(r.u32());
        s.view_counts.push(r.u32());
        let l = r.u32();
        s.labels.push(u16::try_from(l).map_err(|_| IoError::Malformed { what: "fused label", detail: l.to_string() })?);
        s.confidences.push(r.f32());
        s.features.extend(r.f32s(d));
    }
    Ok(s)
}

pub fn save_labels(path: &Path, labels: &[u16]) -> Result<()> {
    let mut w = Writer::default();
    w.u16s(labels);
    save_container(path, Kind::Labels, &dims_u32(&[labels.len()])?, &w.0)
}

pub fn load_labels(path: &Path) -> Result<Vec<u16>> {
    let c = load_container(path, Kind::Labels)?;
    Ok(Reader::new(&c.payload).u16s(c.dims[0] as usize))
}

pub fn view_file(dir: &Path, stem: &str, index: usize) -> PathBuf {
    dir.join(format!("{stem}_{index:04}.ecsg"))
}

/// Writes the raster fields of one view; the camera lives in `cameras.ecsg`.
pub fn save_view(dir: &Path, index: usize, v: &View) -> Result<()> {
    v.validate()?;
    save_features(&view_file(dir, "rgb", index), &v.rgb)?;
    save_depth(&view_file(dir, "depth", index), &v.depth)?;
    if let Some(f) = &v.features {
        save_features(&view_file(dir, "features", index), f)?;
    }
    if let Some(m) = &v.mask_proposals {
        save_mask(&view_file(dir, "masks", index), m)?;
    }
    Ok(())
}

fn load_optional<T>(path: PathBuf, load: impl FnOnce(&Path) -> Result<T>) -> Result<Option<T>> {
    if path.exists() {
        load(&path).map(Some)
    } else {
        Ok(None)
    }
}

pub fn load_view(dir: &Path, index: usize, camera: CameraPose) -> Result<View> {
    let rgb = load_features(&view_file(dir, "rgb", index))?;
    let depth = load_depth(&view_file(dir, "depth", index))?;
    let features = load_optional(view_file(dir, "features", index), load_features)?;
    let mask_proposals = load_optional(view_file(dir, "masks", index), load_mask)?;
    let (w, h) = (camera.width as usize, camera.height as usize);
    let shapes = [("rgb", rgb.width, rgb.height)]
        .into_iter()
        .chain([("depth", depth.width, depth.height)])
        .chain(features.as_ref().map(|f| ("features", f.width, f.height)))
        .chain(mask_proposals.as_ref().map(|m| ("masks", m.width, m.height)));
    for (name, rw, rh) in shapes {
        if (rw, rh) != (w, h) {
            return Err(IoError::DimensionMismatch(format!("view {index}: {name} is {rw}x{rh}, camera is {w}x{h}")));
        }
    }
    let view = View { camera, rgb, depth, features, mask_proposals };
    view.validate()?;
    Ok(view)
}

/// Everything a scene directory may hold.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneDir {
    pub views: Vec<View>,
    pub labels: Option<Vec<LabelMap>>,
    pub queries: Option<QuerySet>,
    pub cloud: Option<GaussianCloud>,
    pub classes: Option<Vec<u16>>,
}

pub fn save_scene(dir: &Path, s: &SceneDir) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let cams: Vec<CameraPose> = s.views.iter().map(|v| v.camera).collect();
    save_cameras(&dir.join("cameras.ecsg"), &cams)?;
    for (i, v) in s.views.iter().enumerate() {
        save_view(dir, i, v)?;
    }
    if let Some(labels) = &s.labels {
        if labels.len() != s.views.len() {
            return Err(IoError::DimensionMismatch(format!("{} label maps for {} views", labels.len(), s.views.len())));
        }
        for (i, l) in labels.iter().enumerate() {
            save_mask(&view_file(dir, "labels", i), l)?;
        }
    }
    if let Some(q) = &s.queries {
        save_queries(&dir.join("queries.ecsg"), q)?;
    }
    if let Some(c) = &s.cloud {
        save_cloud(&dir.join("gaussians.ecsg"), c)?;
    }
    if let Some(c) = &s.classes {
        save_labels(&dir.join("classes.ecsg"), c)?;
    }
    Ok(())
}

pub fn load_scene(dir: &Path) -> Result<SceneDir> {
    let cams = load_cameras(&dir.join("cameras.ecsg"))?;
    let views = cams.iter().enumerate().map(|(i, c)| load_view(dir, i, *c)).collect::<Result<Vec<_>>>()?;
    let labels = if view_file(dir, "labels", 0).exists() { Some(load_label_maps(dir, views.len())?) } else { None };
    Ok(SceneDir {
        views,
        labels,
        queries: load_optional(dir.join("queries.ecsg"), load_queries)?,
        cloud: load_optional(dir.join("gaussians.ecsg"), load_cloud)?,
        classes: load_optional(dir.join("classes.ecsg"), load_labels)?,
    })
}

/// `labels_NNNN.ecsg` for indices `0..n`.
pub fn load_label_maps(dir: &Path, n: usize) -> Result<Vec<LabelMap>> {
    (0..n).map(|i| load_label_map(&view_file(dir, "labels", i))).collect()
}

/// Consecutive `labels_NNNN.ecsg` files starting at 0.
pub fn load_label_dir(dir: &Path) -> Result<Vec<LabelMap>> {
    let n = (0..).take_while(|&i| view_file(dir, "labels", i).exists()).count();
    load_label_maps(dir, n)
}
