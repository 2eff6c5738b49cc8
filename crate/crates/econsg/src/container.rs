//! Binary container: 8-byte ASCII magic, `u32` version, a fixed number of
//! kind-specific `u32` dimensions, then a little-endian payload whose length
//! is fully determined by the dimensions.

use std::path::Path;

use crate::error::{io_err, IoError, Result};

pub const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    /// `[H, W, D]`, f32 per channel, pixel-interleaved.
    Features,
    /// `[H, W]`, f32, `0` = invalid.
    Depth,
    /// `[H, W, C]`, u16 per channel.
    Mask,
    /// `[K, D, L]`: `K·D` f32 embeddings, then `L` bytes of `\n`-joined UTF-8 labels.
    Queries,
    /// `[N, d_z]`: per Gaussian mean 3, quaternion 4, log-scale 3, opacity logit 1,
    /// rgb 3, field `d_z`, all f32.
    Gaussians,
    /// `[V]`: per view u32 width, height; f32 fx, fy, cx, cy, rotation 9, translation 3.
    Cameras,
    /// `[P, D]`: per point f32 position 3, u32 count, f32 feature `D`.
    Contextual,
    /// `[E, F, S]`: `E` encoder then `F` decoder layers as u32 (inputs, outputs),
    /// then `S` f32 values: each layer's row-major weight followed by its bias.
    Mlp,
    /// `[N, D]`: per point f32 position 3, u32 count, u32 view count, u32 label,
    /// f32 confidence, f32 feature `D`.
    Fused,
    /// `[N]`: u16 per point.
    Labels,
}

impl Kind {
    pub const fn magic(self) -> &'static [u8; 8] {
        match self {
            Kind::Features => b"ECSGFMAP",
            Kind::Depth => b"ECSGDPTH",
            Kind::Mask => b"ECSGMASK",
            Kind::Queries => b"ECSGQURY",
            Kind::Gaussians => b"ECSGGAUS",
            Kind::Cameras => b"ECSGCAMS",
            Kind::Contextual => b"ECSGCTXS",
            Kind::Mlp => b"ECSGMLPS",
            Kind::Fused => b"ECSGFUSE",
            Kind::Labels => b"ECSGLABL",
        }
    }

    pub const fn rank(self) -> usize {
        match self {
            Kind::Cameras | Kind::Labels => 1,
            Kind::Depth | Kind::Gaussians | Kind::Contextual | Kind::Fused => 2,
            Kind::Features | Kind::Mask | Kind::Queries | Kind::Mlp => 3,
        }
    }

    /// Payload bytes implied by `dims`; `None` on overflow.
    pub fn payload_len(self, dims: &[u32]) -> Option<usize> {
        let d: Vec<usize> = dims.iter().map(|&v| v as usize).collect();
        let prod = |xs: &[usize]| xs.iter().try_fold(1usize, |a, &b| a.checked_mul(b));
        match self {
            Kind::Features | Kind::Depth => prod(&d)?.checked_mul(4),
            Kind::Mask | Kind::Labels => prod(&d)?.checked_mul(2),
            Kind::Queries => prod(&d[..2])?.checked_mul(4)?.checked_add(d[2]),
            Kind::Gaussians => d[0].checked_mul(d[1].checked_add(14)?)?.checked_mul(4),
            Kind::Cameras => d[0].checked_mul(72),
            Kind::Contextual => d[0].checked_mul(d[1].checked_add(4)?)?.checked_mul(4),
            Kind::Mlp => (d[0].checked_add(d[1])?).checked_mul(8)?.checked_add(d[2].checked_mul(4)?),
            Kind::Fused => d[0].checked_mul(d[1].checked_add(7)?)?.checked_mul(4),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Container {
    pub dims: Vec<u32>,
    pub payload: Vec<u8>,
}

pub fn encode(kind: Kind, dims: &[u32], payload: &[u8]) -> Result<Vec<u8>> {
    if dims.len() != kind.rank() {
        return Err(IoError::DimensionMismatch(format!("{} needs {} dims, got {}", magic_str(kind.magic()), kind.rank(), dims.len())));
    }
    let expected = kind.payload_len(dims).ok_or_else(|| overflow(dims))?;
    if payload.len() != expected {
        return Err(IoError::DimensionMismatch(format!("dims {dims:?} imply {expected} payload bytes, got {}", payload.len())));
    }
    let mut out = Vec::with_capacity(12 + 4 * dims.len() + payload.len());
    out.extend_from_slice(kind.magic());
    out.extend_from_slice(&VERSION.to_le_bytes());
    for d in dims {
        out.extend_from_slice(&d.to_le_bytes());
    }
    out.extend_from_slice(payload);
    Ok(out)
}

pub fn decode(kind: Kind, bytes: &[u8]) -> Result<Container> {
    let header = 12 + 4 * kind.rank();
    if bytes.len() < 8 {
        return Err(IoError::TruncatedFile { expected: header, found: bytes.len() });
    }
    if &bytes[..8] != kind.magic() {
        return Err(IoError::BadMagic { expected: magic_str(kind.magic()), found: magic_str(&bytes[..8]) });
    }
    if bytes.len() < header {
        return Err(IoError::TruncatedFile { expected: header, found: bytes.len() });
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap());
    let version = word(8);
    if version != VERSION {
        return Err(IoError::UnsupportedVersion(version));
    }
    let dims: Vec<u32> = (0..kind.rank()).map(|k| word(12 + 4 * k)).collect();
    let expected = kind.payload_len(&dims).ok_or_else(|| overflow(&dims))?;
    let found = bytes.len() - header;
    if found != expected {
        return Err(IoError::TruncatedFile { expected, found });
    }
    Ok(Container { dims, payload: bytes[header..].to_vec() })
}

pub fn load_container(path: &Path, kind: Kind) -> Result<Container> {
    let bytes = std::fs::read(path).map_err(io_err(path))?;
    decode(kind, &bytes)
}

pub fn save_container(path: &Path, kind: Kind, dims: &[u32], payload: &[u8]) -> Result<()> {
    let bytes = encode(kind, dims, payload)?;
    std::fs::write(path, bytes).map_err(io_err(path))
}

fn magic_str(m: &[u8]) -> String {
    String::from_utf8_lossy(m).into_owned()
}

fn overflow(dims: &[u32]) -> IoError {
    IoError::Malformed { what: "container header", detail: format!("dims {dims:?} overflow the address space") }
}

/// Little-endian payload builder.
#[derive(Debug, Default)]
pub struct Writer(pub Vec<u8>);

impl Writer {
    pub fn f32(&mut self, v: f32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }

    pub fn f32s(&mut self, vs: &[f32]) {
        vs.iter().for_each(|v| self.f32(*v));
    }

    pub fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }

    pub fn u16s(&mut self, vs: &[u16]) {
        vs.iter().for_each(|v| self.0.extend_from_slice(&v.to_le_bytes()));
    }
}

/// Cursor over a payload whose length the header already validated.
#[derive(Debug)]
pub struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    fn take<const N: usize>(&mut self) -> [u8; N] {
        let b = self.bytes[self.pos..self.pos + N].try_into().unwrap();
        self.pos += N;
        b
    }

    pub fn f32(&mut self) -> f32 {
        f32::from_le_bytes(self.take())
    }

    pub fn f32s(&mut self, n: usize) -> Vec<f32> {
        (0..n).map(|_| self.f32()).collect()
    }

    pub fn u32(&mut self) -> u32 {
        u32::from_le_bytes(self.take())
    }

    pub fn u16s(&mut self, n: usize) -> Vec<u16> {
        (0..n).map(|_| u16::from_le_bytes(self.take())).collect()
    }

    pub fn bytes(&mut self, n: usize) -> &'a [u8] {
        let b = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        b
    }
}
