//! File-based mask provider. For view `v` the pipeline writes
//! `req_<v>.jsonl`, one JSON box `{"u_min","v_min","u_max","v_max"}` per line
//! (inclusive pixel bounds), and waits for `resp_<v>.ecsgmask`: an ECSGMASK
//! container `[H, W, B]` holding 0/1 with channel `b` answering box `b`.
//! Both sides publish by writing a temporary file and renaming it.

use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use econsg_core::crr::MaskProvider;
use econsg_core::geometry::{BBox, BinaryMask};
use econsg_core::Raster;
use serde::{Deserialize, Serialize};

use crate::error::{io_err, IoError, Result};
use crate::scene_io::{load_mask, save_mask};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
struct BoxLine {
    u_min: u32,
    v_min: u32,
    u_max: u32,
    v_max: u32,
}

pub fn request_path(dir: &Path, view: usize) -> PathBuf {
    dir.join(format!("req_{view}.jsonl"))
}

pub fn response_path(dir: &Path, view: usize) -> PathBuf {
    dir.join(format!("resp_{view}.ecsgmask"))
}

fn publish(path: &Path, write: impl FnOnce(&Path) -> Result<()>) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    write(&tmp)?;
    std::fs::rename(&tmp, path).map_err(io_err(path))
}

pub fn write_request(path: &Path, boxes: &[BBox]) -> Result<()> {
    let mut text = String::new();
    for b in boxes {
        let line = BoxLine { u_min: b.u_min, v_min: b.v_min, u_max: b.u_max, v_max: b.v_max };
        text.push_str(&serde_json::to_string(&line).expect("plain struct serializes"));
        text.push('\n');
    }
    publish(path, |tmp| std::fs::write(tmp, text).map_err(io_err(tmp)))
}

pub fn read_request(path: &Path) -> Result<Vec<BBox>> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            let b: BoxLine = serde_json::from_str(l).map_err(|e| IoError::Malformed { what: "box request", detail: e.to_string() })?;
            if b.u_min > b.u_max || b.v_min > b.v_max {
                return Err(IoError::Malformed { what: "box request", detail: format!("inverted box {l}") });
            }
            Ok(BBox { u_min: b.u_min, v_min: b.v_min, u_max: b.u_max, v_max: b.v_max })
        })
        .collect()
}

pub fn write_response(path: &Path, masks: &[BinaryMask], width: usize, height: usize) -> Result<()> {
    let b = masks.len();
    let mut r = Raster::filled(width, height, b, 0u16);
    for (k, m) in masks.iter().enumerate() {
        if (m.width, m.height) != (width, height) {
            return Err(IoError::DimensionMismatch(format!("mask {k} is {}x{}, view is {width}x{height}", m.width, m.height)));
        }
        for (p, bit) in m.bits.iter().enumerate() {
            r.data[p * b + k] = *bit as u16;
        }
    }
    publish(path, |tmp| save_mask(tmp, &r))
}

pub fn read_response(path: &Path) -> Result<Vec<BinaryMask>> {
    let r = load_mask(path)?;
    let b = r.channels;
    if r.data.iter().any(|v| *v > 1) {
        return Err(IoError::Malformed { what: "mask response", detail: String::from("values must be 0 or 1") });
    }
    Ok((0..b)
        .map(|k| BinaryMask { width: r.width, height: r.height, bits: (0..r.pixel_count()).map(|p| r.data[p * b + k] == 1).collect() })
        .collect())
}

/// Requests masks through files in `dir` and polls for the answer.
#[derive(Debug, Clone)]
pub struct FileMaskProvider {
    pub dir: PathBuf,
    pub timeout: Duration,
    pub poll: Duration,
}

impl FileMaskProvider {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into(), timeout: Duration::from_secs(600), poll: Duration::from_millis(20) }
    }

    fn exchange(&self, view: usize, boxes: &[BBox]) -> Result<Vec<BinaryMask>> {
        let (req, resp) = (request_path(&self.dir, view), response_path(&self.dir, view));
        match std::fs::remove_file(&resp) {
            Err(e) if e.kind() != std::io::ErrorKind::NotFound => return Err(io_err(&resp)(e)),
            _ => {}
        }
        write_request(&req, boxes)?;
        let start = Instant::now();
        while !resp.exists() {
            if start.elapsed() > self.timeout {
                return Err(IoError::Provider(format!("no response for view {view} within {:?}", self.timeout)));
            }
            std::thread::sleep(self.poll);
        }
        // Request first, so a responder never sees it unanswered again.
        std::fs::remove_file(&req).map_err(io_err(&req))?;
        let masks = read_response(&resp)?;
        std::fs::remove_file(&resp).map_err(io_err(&resp))?;
        if masks.len() != boxes.len() {
            return Err(IoError::Provider(format!("view {view}: {} masks for {} boxes", masks.len(), boxes.len())));
        }
        Ok(masks)
    }
}

impl MaskProvider for FileMaskProvider {
    fn masks(&mut self, view: usize, boxes: &[BBox]) -> econsg_core::Result<Vec<BinaryMask>> {
        self.exchange(view, boxes).map_err(|e| econsg_core::Error::ProviderFailure(e.to_string()))
    }
}

/// Responder side: answers a pending request for `view` with `inner`.
/// Returns false when no request is waiting.
pub fn answer_request(dir: &Path, view: usize, width: usize, height: usize, inner: &mut dyn MaskProvider) -> Result<bool> {
    let req = request_path(dir, view);
    if !req.exists() || response_path(dir, view).exists() {
        return Ok(false);
    }
    let boxes = read_request(&req)?;
    let masks = inner.masks(view, &boxes)?;
    write_response(&response_path(dir, view), &masks, width, height)?;
    Ok(true)
}
