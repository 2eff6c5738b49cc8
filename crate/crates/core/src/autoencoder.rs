//! Feature autoencoder `g: D → d_z`, `h: d_z → D` trained with reconstruction
//! plus two cosine-logit cross-entropy terms, with hand-written backprop.

use alloc::vec;
use alloc::vec::Vec;

use num_traits::Float;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::contextual::ContextualSpace;
use crate::error::{Error, Result};
use crate::math::COSINE_EPS;
use crate::optim::{Adam, AdamConfig};
use crate::scene::{QuerySet, Raster, IGNORE_LABEL};

pub const ENCODER_HIDDEN: [usize; 4] = [256, 128, 64, 32];
pub const DECODER_HIDDEN: [usize; 6] = [16, 32, 64, 128, 256, 256];
pub const DEFAULT_LATENT_DIM: usize = 6;

/// Affine layer `y = W x + b`, `W` row-major `outputs × inputs`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear<T> {
    pub inputs: usize,
    pub outputs: usize,
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Float> Linear<T> {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self { inputs, outputs, weight: vec![T::zero(); inputs * outputs], bias: vec![T::zero(); outputs] }
    }

    fn forward(&self, x: &[T], y: &mut [T]) {
        for ((out, row), &b) in y.iter_mut().zip(self.weight.chunks_exact(self.inputs)).zip(&self.bias) {
            *out = b + dot(row, x);
        }
    }
}

/// Affine layers with ReLU between them and none after the last.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp<T> {
    pub layers: Vec<Linear<T>>,
}

impl<T: Float> Mlp<T> {
    pub fn zeros(dims: &[usize]) -> Self {
        Self { layers: dims.windows(2).map(|w| Linear::zeros(w[0], w[1])).collect() }
    }

    fn xavier(dims: &[usize], rng: &mut ChaCha8Rng) -> Self {
        let mut mlp = Self::zeros(dims);
        for l in &mut mlp.layers {
            let bound = libm::sqrt(6.0 / (l.inputs + l.outputs) as f64);
            for w in &mut l.weight {
                *w = T::from(rng.random_range(-bound..bound)).unwrap();
            }
        }
        mlp
    }

    pub fn input_dim(&self) -> usize {
        self.layers.first().map_or(0, |l| l.inputs)
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.outputs)
    }

    pub fn dims(&self) -> Vec<usize> {
        let mut d: Vec<usize> = self.layers.iter().map(|l| l.inputs).collect();
        d.push(self.output_dim());
        d
    }

    pub fn forward(&self, x: &[T]) -> Result<Vec<T>> {
        if x.len() != self.input_dim() {
            return Err(Error::DimensionMismatch { expected: self.input_dim(), got: x.len() });
        }
        let mut cur = x.to_vec();
        for (i, l) in self.layers.iter().enumerate() {
            let mut next = vec![T::zero(); l.outputs];
            l.forward(&cur, &mut next);
            if i + 1 < self.layers.len() {
                next.iter_mut().for_each(|v| *v = v.max(T::zero()));
            }
            cur = next;
        }
        Ok(cur)
    }

    /// Activations of every layer for `n` rows; `acts[0]` is the input.
    fn forward_batch(&self, x: &[T], n: usize) -> Vec<Vec<T>> {
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(x.to_vec());
        for (i, l) in self.layers.iter().enumerate() {
            let prev = acts.last().unwrap();
            let mut out = vec![T::zero(); n * l.outputs];
            for r in 0..n {
                l.forward(&prev[r * l.inputs..(r + 1) * l.inputs], &mut out[r * l.outputs..(r + 1) * l.outputs]);
            }
            if i + 1 < self.layers.len() {
                out.iter_mut().for_each(|v| *v = v.max(T::zero()));
            }
            acts.push(out);
        }
        acts
    }

    /// Accumulates parameter gradients into `grads` and returns the input
    /// gradient, given the output gradient `delta` of a batch.
    fn backward_batch(&self, acts: &[Vec<T>], mut delta: Vec<T>, n: usize, grads: &mut Mlp<T>) -> Vec<T> {
        for (i, l) in self.layers.iter().enumerate().rev() {
            let input = &acts[i];
            let g = &mut grads.layers[i];
            let mut prev = vec![T::zero(); n * l.inputs];
            for r in 0..n {
                let d = &delta[r * l.outputs..(r + 1) * l.outputs];
                let x = &input[r * l.inputs..(r + 1) * l.inputs];
                let px = &mut prev[r * l.inputs..(r + 1) * l.inputs];
                let rows = l.weight.chunks_exact(l.inputs).zip(g.weight.chunks_exact_mut(l.inputs));
                for ((&dv, gb), (wrow, grow)) in d.iter().zip(g.bias.iter_mut()).zip(rows) {
                    if dv == T::zero() {
                        continue;
                    }
                    *gb = *gb + dv;
                    for ((gw, &xv), (p, &w)) in grow.iter_mut().zip(x).zip(px.iter_mut().zip(wrow)) {
                        *gw = *gw + dv * xv;
                        *p = *p + dv * w;
                    }
                }
            }
            if i > 0 {
                // ReLU on the input of this layer: zero where the activation was clamped.
                for (p, &a) in prev.iter_mut().zip(input) {
                    if a <= T::zero() {
                        *p = T::zero();
                    }
                }
            }
            delta = prev;
        }
        delta
    }

    fn tensors(&self) -> impl Iterator<Item = &Vec<T>> {
        self.layers.iter().flat_map(|l| [&l.weight, &l.bias])
    }

    fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Vec<T>> {
        self.layers.iter_mut().flat_map(|l| [&mut l.weight, &mut l.bias])
    }
}

/// Encoder `g` and decoder `h`.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams<T = f32> {
    pub encoder: Mlp<T>,
    pub decoder: Mlp<T>,
}

impl<T: Float> MlpParams<T> {
    /// Standard layout `D → 256,128,64,32,d_z → 16,32,64,128,256,256,D`,
    /// Xavier-uniform weights and zero biases.
    pub fn init(input_dim: usize, latent_dim: usize, seed: u64) -> Result<Self> {
        let mut enc = vec![input_dim];
        enc.extend(ENCODER_HIDDEN);
        enc.push(latent_dim);
        let mut dec = vec![latent_dim];
        dec.extend(DECODER_HIDDEN);
        dec.push(input_dim);
        Self::with_dims(&enc, &dec, seed)
    }

    pub fn with_dims(encoder: &[usize], decoder: &[usize], seed: u64) -> Result<Self> {
        let ok = encoder.len() >= 2
            && decoder.len() >= 2
            && encoder.last() == decoder.first()
            && encoder.first() == decoder.last()
            && encoder.iter().chain(decoder).all(|&d| d > 0);
        if !ok {
            return Err(Error::InvalidConfig(alloc::format!("layer dims do not chain: {encoder:?} / {decoder:?}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let encoder = Mlp::xavier(encoder, &mut rng);
        let decoder = Mlp::xavier(decoder, &mut rng);
        Ok(Self { encoder, decoder })
    }

    pub fn zeros_like(&self) -> Self {
        Self { encoder: Mlp::zeros(&self.encoder.dims()), decoder: Mlp::zeros(&self.decoder.dims()) }
    }

    pub fn input_dim(&self) -> usize {
        self.encoder.input_dim()
    }

    pub fn latent_dim(&self) -> usize {
        self.encoder.output_dim()
    }

    /// Dims chain between encoder and decoder, shapes agree and entries are finite.
    pub fn validate(&self) -> Result<()> {
        let enc = self.encoder.dims();
        let dec = self.decoder.dims();
        if self.encoder.layers.is_empty() || self.decoder.layers.is_empty() || enc.last() != dec.first() || enc.first() != dec.last() {
            return Err(Error::InvalidConfig(alloc::format!("layer dims do not chain: {enc:?} / {dec:?}")));
        }
        for mlp in [&self.encoder, &self.decoder] {
            for w in mlp.layers.windows(2) {
                if w[0].outputs != w[1].inputs {
                    return Err(Error::InvalidConfig(alloc::format!("layer dims do not chain: {enc:?} / {dec:?}")));
                }
            }
            for l in &mlp.layers {
                if l.weight.len() != l.inputs * l.outputs || l.bias.len() != l.outputs {
                    return Err(Error::ShapeMismatch(alloc::format!("layer {}x{} has {} weights", l.outputs, l.inputs, l.weight.len())));
                }
            }
        }
        if !self.tensors().all(|t| t.iter().all(|v| v.is_finite())) {
            return Err(Error::InvalidConfig(alloc::string::String::from("non-finite parameter")));
        }
        Ok(())
    }

    pub fn encode(&self, f: &[T]) -> Result<Vec<T>> {
        self.encoder.forward(f)
    }

    pub fn decode(&self, z: &[T]) -> Result<Vec<T>> {
        self.decoder.forward(z)
    }

    /// All weight and bias tensors, encoder first, weight before bias.
    pub fn tensors(&self) -> impl Iterator<Item = &Vec<T>> {
        self.encoder.tensors().chain(self.decoder.tensors())
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Vec<T>> {
        self.encoder.tensors_mut().chain(self.decoder.tensors_mut())
    }

    pub fn cast<U: Float>(&self) -> MlpParams<U> {
        let conv = |m: &Mlp<T>| Mlp {
            layers: m
                .layers
                .iter()
                .map(|l| Linear {
                    inputs: l.inputs,
                    outputs: l.outputs,
                    weight: l.weight.iter().map(|&v| U::from(v).unwrap()).collect(),
                    bias: l.bias.iter().map(|&v| U::from(v).unwrap()).collect(),
                })
                .collect(),
        };
        MlpParams { encoder: conv(&self.encoder), decoder: conv(&self.decoder) }
    }
}

/// Dot product with eight independent accumulators, summed in a fixed order.
#[inline]
fn dot<T: Float>(a: &[T], b: &[T]) -> T {
    let mut acc = [T::zero(); 8];
    let mut ca = a.chunks_exact(8);
    let mut cb = b.chunks_exact(8);
    for (x, y) in (&mut ca).zip(&mut cb) {
        for k in 0..8 {
            acc[k] = acc[k] + x[k] * y[k];
        }
    }
    let mut tail = T::zero();
    for (&x, &y) in ca.remainder().iter().zip(cb.remainder()) {
        tail = tail + x * y;
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

fn norm<T: Float>(a: &[T]) -> T {
    a.iter().fold(T::zero(), |s, &v| s + v * v).sqrt()
}

/// Cosine with norms floored at [`COSINE_EPS`], and its gradients in `a` and `b`
/// scaled by `scale`, accumulated into `ga` / `gb`.
pub(crate) fn cosine_backward<T: Float>(a: &[T], b: &[T], scale: T, ga: Option<&mut [T]>, gb: Option<&mut [T]>) {
    let eps = T::from(COSINE_EPS).unwrap();
    let (ra, rb) = (norm(a), norm(b));
    let (na, nb) = (ra.max(eps), rb.max(eps));
    let dot = a.iter().zip(b).fold(T::zero(), |s, (&x, &y)| s + x * y);
    let c = dot / (na * nb);
    if let Some(ga) = ga {
        let floored = ra < eps;
        for ((g, &x), &y) in ga.iter_mut().zip(a).zip(b) {
            let radial = if floored { T::zero() } else { c * x / (na * na) };
            *g = *g + scale * (y / (na * nb) - radial);
        }
    }
    if let Some(gb) = gb {
        let floored = rb < eps;
        for ((g, &x), &y) in gb.iter_mut().zip(a).zip(b) {
            let radial = if floored { T::zero() } else { c * y / (nb * nb) };
            *g = *g + scale * (x / (na * nb) - radial);
        }
    }
}

pub(crate) fn cosine<T: Float>(a: &[T], b: &[T]) -> T {
    let eps = T::from(COSINE_EPS).unwrap();
    let dot = a.iter().zip(b).fold(T::zero(), |s, (&x, &y)| s + x * y);
    dot / (norm(a).max(eps) * norm(b).max(eps))
}

/// Cross-entropy of `logits` against `label`; writes `softmax - onehot` into `d`.
pub(crate) fn cross_entropy<T: Float>(logits: &[T], label: usize, d: &mut [T]) -> T {
    let m = logits.iter().fold(T::neg_infinity(), |a, &b| a.max(b));
    let mut z = T::zero();
    for (o, &l) in d.iter_mut().zip(logits) {
        *o = (l - m).exp();
        z = z + *o;
    }
    for o in d.iter_mut() {
        *o = *o / z;
    }
    let loss = -(d[label].ln());
    d[label] = d[label] - T::one();
    loss
}

/// Loss value, its three terms (batch means) and parameter gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct AeLoss<T> {
    pub loss: T,
    pub reconstruction: T,
    pub ce_decoded: T,
    pub ce_latent: T,
    pub grads: MlpParams<T>,
}

/// Batch mean of `‖f − h(g(f))‖² + CE(y, cos⟨h(g(f)), T⟩/τ) + CE(y, cos⟨g(f), g(T)⟩/τ)`.
/// Gradients flow through both `g(f)` and `g(T)`.
pub fn ae_loss<T: Float>(params: &MlpParams<T>, features: &[T], labels: &[u16], queries: &[T], temperature: T) -> Result<AeLoss<T>> {
    let d = params.input_dim();
    let dz = params.latent_dim();
    if d == 0 || !queries.len().is_multiple_of(d) || queries.is_empty() {
        return Err(Error::DimensionMismatch { expected: d, got: queries.len() });
    }
    let k = queries.len() / d;
    let n = labels.len();
    if features.len() != n * d {
        return Err(Error::DimensionMismatch { expected: n * d, got: features.len() });
    }
    if let Some(&bad) = labels.iter().find(|&&l| l as usize >= k) {
        return Err(Error::LabelOutOfRange { label: bad as usize, classes: k });
    }
    let mut grads = params.zeros_like();
    if n == 0 {
        let z = T::zero();
        return Ok(AeLoss { loss: z, reconstruction: z, ce_decoded: z, ce_latent: z, grads });
    }
    let enc_acts = params.encoder.forward_batch(features, n);
    let latent = enc_acts.last().unwrap();
    let dec_acts = params.decoder.forward_batch(latent, n);
    let decoded = dec_acts.last().unwrap();
    let q_acts = params.encoder.forward_batch(queries, k);
    let q_latent = q_acts.last().unwrap();

    let inv_n = T::one() / T::from(n).unwrap();
    let inv_t = T::one() / temperature;
    let two = T::from(2.0).unwrap();
    let (mut rec, mut ce1, mut ce2) = (T::zero(), T::zero(), T::zero());
    let mut d_out = vec![T::zero(); n * d];
    let mut d_lat = vec![T::zero(); n * dz];
    let mut d_qlat = vec![T::zero(); k * dz];
    let mut logits = vec![T::zero(); k];
    let mut dl = vec![T::zero(); k];
    for r in 0..n {
        let f = &features[r * d..(r + 1) * d];
        let o = &decoded[r * d..(r + 1) * d];
        let z = &latent[r * dz..(r + 1) * dz];
        let y = labels[r] as usize;
        let go = &mut d_out[r * d..(r + 1) * d];
        for ((g, &ov), &fv) in go.iter_mut().zip(o).zip(f) {
            let diff = ov - fv;
            rec = rec + diff * diff;
            *g = two * diff * inv_n;
        }
        for (j, l) in logits.iter_mut().enumerate() {
            *l = cosine(o, &queries[j * d..(j + 1) * d]) * inv_t;
        }
        ce1 = ce1 + cross_entropy(&logits, y, &mut dl);
        for j in 0..k {
            cosine_backward(o, &queries[j * d..(j + 1) * d], dl[j] * inv_t * inv_n, Some(&mut *go), None);
        }
        for (j, l) in logits.iter_mut().enumerate() {
            *l = cosine(z, &q_latent[j * dz..(j + 1) * dz]) * inv_t;
        }
        ce2 = ce2 + cross_entropy(&logits, y, &mut dl);
        let gz = &mut d_lat[r * dz..(r + 1) * dz];
        for j in 0..k {
            cosine_backward(z, &q_latent[j * dz..(j + 1) * dz], dl[j] * inv_t * inv_n, Some(&mut *gz), Some(&mut d_qlat[j * dz..(j + 1) * dz]));
        }
    }
    let d_lat_dec = params.decoder.backward_batch(&dec_acts, d_out, n, &mut grads.decoder);
    for (a, b) in d_lat.iter_mut().zip(&d_lat_dec) {
        *a = *a + *b;
    }
    params.encoder.backward_batch(&enc_acts, d_lat, n, &mut grads.encoder);
    params.encoder.backward_batch(&q_acts, d_qlat, k, &mut grads.encoder);
    let (rec, ce1, ce2) = (rec * inv_n, ce1 * inv_n, ce2 * inv_n);
    Ok(AeLoss { loss: rec + ce1 + ce2, reconstruction: rec, ce_decoded: ce1, ce_latent: ce2, grads })
}

#[derive(Debug, Clone, PartialEq)]
pub struct AeConfig {
    pub latent_dim: usize,
    pub epochs: usize,
    pub batch: usize,
    pub adam: AdamConfig,
    pub temperature: f32,
    pub seed: u64,
}

impl Default for AeConfig {
    fn default() -> Self {
        Self { latent_dim: DEFAULT_LATENT_DIM, epochs: 200, batch: 4096, adam: AdamConfig::default(), temperature: 1.0, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AeTraining {
    pub params: MlpParams<f32>,
    /// Loss of every optimizer step.
    pub losses: Vec<f32>,
}

/// Trains on `n` rows of `features` (row-major, width `queries.dim()`).
pub fn train_ae_rows(features: &[f32], labels: &[u16], queries: &QuerySet, config: &AeConfig) -> Result<AeTraining> {
    let d = queries.dim();
    let n = labels.len();
    if features.len() != n * d {
        return Err(Error::DimensionMismatch { expected: n * d, got: features.len() });
    }
    if n == 0 {
        return Err(Error::EmptyCorpus);
    }
    if config.batch == 0 || config.latent_dim == 0 || !(config.temperature > 0.0) {
        return Err(Error::InvalidConfig(alloc::format!(
            "batch {}, latent dim {}, temperature {}",
            config.batch,
            config.latent_dim,
            config.temperature
        )));
    }
    let mut params = MlpParams::<f32>::init(d, config.latent_dim, config.seed)?;
    let mut opts: Vec<Adam<f32>> = params.tensors().map(|t| Adam::new(t.len(), config.adam)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0xae);
    let mut order: Vec<usize> = (0..n).collect();
    let mut losses = Vec::new();
    let mut batch_f = Vec::with_capacity(config.batch.min(n) * d);
    let mut batch_y = Vec::with_capacity(config.batch.min(n));
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(config.batch) {
            batch_f.clear();
            batch_y.clear();
            for &i in chunk {
                batch_f.extend_from_slice(&features[i * d..(i + 1) * d]);
                batch_y.push(labels[i]);
            }
            let out = ae_loss(&params, &batch_f, &batch_y, queries.embeddings(), config.temperature)?;
            losses.push(out.loss);
            for ((p, g), opt) in params.tensors_mut().zip(out.grads.tensors()).zip(opts.iter_mut()) {
                opt.step(p, g);
            }
        }
    }
    Ok(AeTraining { params, losses })
}

/// Trains on the fused, labeled rows of a contextual space.
pub fn train_ae(space: &ContextualSpace, queries: &QuerySet, pseudo_labels: &[u16], config: &AeConfig) -> Result<AeTraining> {
    space.validate()?;
    if space.dim != queries.dim() {
        return Err(Error::DimensionMismatch { expected: queries.dim(), got: space.dim });
    }
    if pseudo_labels.len() != space.len() {
        return Err(Error::ShapeMismatch(alloc::format!("{} labels for {} points", pseudo_labels.len(), space.len())));
    }
    let mut feats = Vec::new();
    let mut labels = Vec::new();
    for p in 0..space.len() {
        if space.is_fused(p) && pseudo_labels[p] != IGNORE_LABEL {
            feats.extend_from_slice(space.feature(p));
            labels.push(pseudo_labels[p]);
        }
    }
    train_ae_rows(&feats, &labels, queries, config)
}

/// Row-wise `g` over a `rows × D` matrix.
pub fn encode_rows(params: &MlpParams<f32>, rows: &[f32]) -> Result<Vec<f32>> {
    let d = params.input_dim();
    if d == 0 || !rows.len().is_multiple_of(d) {
        return Err(Error::DimensionMismatch { expected: d, got: rows.len() });
    }
    let n = rows.len() / d;
    let acts = params.encoder.forward_batch(rows, n);
    Ok(acts.into_iter().last().unwrap())
}

/// `𝓜 → 𝓜_z`; unfused rows encode the zero feature like any other row.
pub fn encode_space(params: &MlpParams<f32>, space: &ContextualSpace) -> Result<Vec<f32>> {
    if space.dim != params.input_dim() {
        return Err(Error::DimensionMismatch { expected: params.input_dim(), got: space.dim });
    }
    encode_rows(params, &space.features)
}

/// Encodes every query embedding. The result need not be unit norm, so it
/// is returned as a raw `K × d_z` matrix.
pub fn encode_queries(params: &MlpParams<f32>, queries: &QuerySet) -> Result<Vec<f32>> {
    if queries.dim() != params.input_dim() {
        return Err(Error::DimensionMismatch { expected: params.input_dim(), got: queries.dim() });
    }
    encode_rows(params, queries.embeddings())
}

/// Per-pixel `g` over a feature raster.
pub fn encode_raster(params: &MlpParams<f32>, raster: &Raster<f32>) -> Result<Raster<f32>> {
    if raster.channels != params.input_dim() {
        return Err(Error::DimensionMismatch { expected: params.input_dim(), got: raster.channels });
    }
    let data = encode_rows(params, &raster.data)?;
    Raster::from_data(raster.width, raster.height, params.latent_dim(), data)
}
