//! `key = value` synthetic-scene specs (a TOML subset: one flat table).
//! Keys are the [`SynthSceneSpec`] field names; absent keys keep defaults.

use econsg_core::synth::SynthSceneSpec;
use toml::Value;

use crate::error::{IoError, Result};

fn bad(detail: String) -> IoError {
    IoError::Malformed { what: "scene spec", detail }
}

fn as_usize(key: &str, v: &Value) -> Result<usize> {
    v.as_integer().and_then(|i| usize::try_from(i).ok()).ok_or_else(|| bad(format!("{key} must be a non-negative integer, got {v}")))
}

fn as_f32(key: &str, v: &Value) -> Result<f32> {
    match v {
        Value::Float(f) => Ok(*f as f32),
        Value::Integer(i) => Ok(*i as f32),
        _ => Err(bad(format!("{key} must be a number, got {v}"))),
    }
}

pub fn parse_spec(text: &str) -> Result<SynthSceneSpec> {
    let table: toml::Table = text.parse().map_err(|e: toml::de::Error| bad(e.message().to_string()))?;
    let mut s = SynthSceneSpec::default();
    for (key, v) in &table {
        match key.as_str() {
            "n_gaussians" => s.n_gaussians = as_usize(key, v)?,
            "n_classes" => s.n_classes = as_usize(key, v)?,
            "n_views" => s.n_views = as_usize(key, v)?,
            "test_views" => s.test_views = as_usize(key, v)?,
            "width" => s.width = as_usize(key, v)?,
            "height" => s.height = as_usize(key, v)?,
            "feature_dim" => s.feature_dim = as_usize(key, v)?,
            "noise" => s.noise = as_f32(key, v)?,
            "corruption" => s.corruption = as_f32(key, v)?,
            "corruption_noise" => s.corruption_noise = as_f32(key, v)?,
            "seed" => s.seed = as_usize(key, v)? as u64,
            "focal" => s.focal = Some(as_f32(key, v)?),
            "camera_distance" => s.camera_distance = as_f32(key, v)?,
            _ => return Err(bad(format!("unknown key {key:?}"))),
        }
    }
    s.validate()?;
    Ok(s)
}

/// Inverse of [`parse_spec`].
pub fn format_spec(s: &SynthSceneSpec) -> String {
    let mut out = format!(
        "n_gaussians = {}\nn_classes = {}\nn_views = {}\ntest_views = {}\nwidth = {}\nheight = {}\nfeature_dim = {}\n\
         noise = {:?}\ncorruption = {:?}\ncorruption_noise = {:?}\nseed = {}\ncamera_distance = {:?}\n",
        s.n_gaussians,
        s.n_classes,
        s.n_views,
        s.test_views,
        s.width,
        s.height,
        s.feature_dim,
        s.noise,
        s.corruption,
        s.corruption_noise,
        s.seed,
        s.camera_distance
    );
    if let Some(f) = s.focal {
        out.push_str(&format!("focal = {f:?}\n"));
    }
    out
}
