//! LSTM recurrent autoencoder for path histories.
//!
//! The encoder folds a sequence of normalized positions into a latent
//! vector; the decoder unrolls the latent back into a sequence. Training uses
//! random-length chunks with recurrent state carried across chunks and
//! detached from the graph.

use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{check_gradients, clip_grad_norm, Adam, AutodiffError, GradCheckReport, Graph, Linear, ParamId, ParamStore, Scalar, Tensor, Var};

#[derive(Debug, thiserror::Error)]
pub enum RaeError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("checkpoint does not describe an autoencoder: {0}")]
    Layout(String),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
}

/// Layer sizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RaeArch {
    pub input: usize,
    pub enc_hidden: usize,
    pub latent: usize,
    pub dec_hidden: usize,
    pub dec_layers: usize,
}

impl RaeArch {
    /// Encoder 2→512, latent 48, decoder 2 layers of 2048.
    pub const fn full() -> Self {
        Self { input: 2, enc_hidden: 512, latent: 48, dec_hidden: 2048, dec_layers: 2 }
    }

    /// Same shape with widths a single CPU core can train in minutes.
    pub const fn desk() -> Self {
        Self { input: 2, enc_hidden: 64, latent: 48, dec_hidden: 128, dec_layers: 2 }
    }
}

impl Default for RaeArch {
    fn default() -> Self {
        Self::desk()
    }
}

/// One LSTM layer. Gate blocks are packed column-wise in the order
/// input, forget, cell, output: `W_x` is `input x 4H`, `W_h` is `H x 4H`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LstmLayer {
    pub wx: ParamId,
    pub wh: ParamId,
    pub b: ParamId,
    pub input: usize,
    pub hidden: usize,
}

fn pvar<T: Scalar>(g: &mut Graph<'_, T>, id: ParamId, frozen: bool) -> Var {
    if frozen {
        g.param_const(id)
    } else {
        g.param(id)
    }
}

impl LstmLayer {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        input: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Self {
        let bound = 1.0 / (hidden as f64).sqrt();
        let wx = store.add(format!("{name}.wx"), Tensor::uniform(input, 4 * hidden, bound, rng));
        let wh = store.add(format!("{name}.wh"), Tensor::uniform(hidden, 4 * hidden, bound, rng));
        let mut b = Tensor::uniform(1, 4 * hidden, bound, rng);
        // forget gate starts open
        for v in &mut b.data_mut()[hidden..2 * hidden] {
            *v += T::one();
        }
        let b = store.add(format!("{name}.b"), b);
        Self { wx, wh, b, input, hidden }
    }

    pub fn ids(&self) -> [ParamId; 3] {
        [self.wx, self.wh, self.b]
    }

    /// One step on a batch: returns `(h', c')`.
    pub fn cell<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var, h: Var, c: Var, frozen: bool) -> (Var, Var) {
        let hd = self.hidden;
        let wx = pvar(g, self.wx, frozen);
        let wh = pvar(g, self.wh, frozen);
        let b = pvar(g, self.b, frozen);
        let zx = g.matmul(x, wx);
        let zh = g.matmul(h, wh);
        let z = g.add(zx, zh);
        let z = g.add_bias(z, b);
        let i = g.slice(z, 0, hd);
        let f = g.slice(z, hd, 2 * hd);
        let gg = g.slice(z, 2 * hd, 3 * hd);
        let o = g.slice(z, 3 * hd, 4 * hd);
        let i = g.sigmoid(i);
        let f = g.sigmoid(f);
        let gg = g.tanh(gg);
        let o = g.sigmoid(o);
        let fc = g.mul(f, c);
        let ig = g.mul(i, gg);
        let c2 = g.add(fc, ig);
        let tc = g.tanh(c2);
        let h2 = g.mul(o, tc);
        (h2, c2)
    }
}

/// Evaluates one cell outside any training graph.
pub fn lstm_cell<T: Scalar>(
    store: &ParamStore<T>,
    layer: &LstmLayer,
    x: &Tensor<T>,
    h: &Tensor<T>,
    c: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>) {
    let mut g = Graph::new(store);
    let (xv, hv, cv) = (g.constant(x.clone()), g.constant(h.clone()), g.constant(c.clone()));
    let (h2, c2) = layer.cell(&mut g, xv, hv, cv, true);
    (g.value(h2).clone(), g.value(c2).clone())
}

/// Per-layer hidden and cell states, each `batch x hidden`.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmState<T> {
    pub h: Vec<Tensor<T>>,
    pub c: Vec<Tensor<T>>,
}

impl<T: Scalar> LstmState<T> {
    pub fn zeros(layers: usize, batch: usize, hidden: usize) -> Self {
        Self {
            h: (0..layers).map(|_| Tensor::zeros(batch, hidden)).collect(),
            c: (0..layers).map(|_| Tensor::zeros(batch, hidden)).collect(),
        }
    }

    fn vars(&self, g: &mut Graph<'_, T>) -> (Vec<Var>, Vec<Var>) {
        let h = self.h.iter().map(|t| g.constant(t.clone())).collect();
        let c = self.c.iter().map(|t| g.constant(t.clone())).collect();
        (h, c)
    }

    fn from_vars(g: &Graph<'_, T>, h: &[Var], c: &[Var]) -> Self {
        Self {
            h: h.iter().map(|v| g.value(*v).clone()).collect(),
            c: c.iter().map(|v| g.value(*v).clone()).collect(),
        }
    }
}

/// LSTM → tanh → layer norm → linear projection to the latent.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Encoder {
    pub lstm: LstmLayer,
    pub ln_gain: ParamId,
    pub ln_bias: ParamId,
    pub proj: Linear,
}

impl Encoder {
    pub fn ids(&self) -> Vec<ParamId> {
        let mut v = self.lstm.ids().to_vec();
        v.extend([self.ln_gain, self.ln_bias]);
        v.extend(self.proj.ids());
        v
    }

    pub fn step<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var, h: Var, c: Var, frozen: bool) -> (Var, Var) {
        self.lstm.cell(g, x, h, c, frozen)
    }

    pub fn latent<T: Scalar>(&self, g: &mut Graph<'_, T>, h: Var, frozen: bool) -> Var {
        let t = g.tanh(h);
        let gain = pvar(g, self.ln_gain, frozen);
        let bias = pvar(g, self.ln_bias, frozen);
        let n = g.layer_norm(t, gain, bias);
        if frozen {
            self.proj.forward_frozen(g, n)
        } else {
            self.proj.forward(g, n)
        }
    }
}

/// Stacked LSTM fed the latent at every step → tanh → layer norm →
/// projection → softsign.
#[derive(Debug, Clone, PartialEq)]
pub struct Decoder {
    pub layers: Vec<LstmLayer>,
    pub ln_gain: ParamId,
    pub ln_bias: ParamId,
    pub proj: Linear,
}

impl Decoder {
    pub fn ids(&self) -> Vec<ParamId> {
        let mut v: Vec<ParamId> = self.layers.iter().flat_map(|l| l.ids()).collect();
        v.extend([self.ln_gain, self.ln_bias]);
        v.extend(self.proj.ids());
        v
    }

    /// One output step; updates `h` and `c` in place.
    pub fn step<T: Scalar>(&self, g: &mut Graph<'_, T>, z: Var, h: &mut [Var], c: &mut [Var]) -> Var {
        let mut x = z;
        for (k, layer) in self.layers.iter().enumerate() {
            let (h2, c2) = layer.cell(g, x, h[k], c[k], false);
            h[k] = h2;
            c[k] = c2;
            x = h2;
        }
        let t = g.tanh(x);
        let gain = g.param(self.ln_gain);
        let bias = g.param(self.ln_bias);
        let n = g.layer_norm(t, gain, bias);
        let y = self.proj.forward(g, n);
        g.softsign(y)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RaeModel<T> {
    pub arch: RaeArch,
    pub store: ParamStore<T>,
    pub encoder: Encoder,
    pub decoder: Decoder,
}

fn to_rows<T: Scalar>(batch: &[&[[f64; 2]]], t: usize) -> Tensor<T> {
    let data: Vec<f64> = batch.iter().flat_map(|p| p[t]).collect();
    Tensor::from_f64(batch.len(), 2, &data)
}

impl<T: Scalar> RaeModel<T> {
    pub fn new(arch: RaeArch, seed: u64) -> Result<Self, RaeError> {
        if arch.input == 0 || arch.enc_hidden == 0 || arch.latent == 0 || arch.dec_hidden == 0 || arch.dec_layers == 0 {
            return Err(RaeError::InvalidParameter(format!("zero-sized layer in {arch:?}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let lstm = LstmLayer::new(&mut store, "enc.lstm", arch.input, arch.enc_hidden, &mut rng);
        let ln_gain = store.add("enc.ln.gain", Tensor::full(1, arch.enc_hidden, T::one()));
        let ln_bias = store.add("enc.ln.bias", Tensor::zeros(1, arch.enc_hidden));
        let proj = Linear::new(&mut store, "enc.proj", arch.enc_hidden, arch.latent, &mut rng);
        let encoder = Encoder { lstm, ln_gain, ln_bias, proj };
        let mut layers = Vec::new();
        for k in 0..arch.dec_layers {
            let input = if k == 0 { arch.latent } else { arch.dec_hidden };
            layers.push(LstmLayer::new(&mut store, &format!("dec.lstm{k}"), input, arch.dec_hidden, &mut rng));
        }
        let ln_gain = store.add("dec.ln.gain", Tensor::full(1, arch.dec_hidden, T::one()));
        let ln_bias = store.add("dec.ln.bias", Tensor::zeros(1, arch.dec_hidden));
        let proj = Linear::new(&mut store, "dec.proj", arch.dec_hidden, arch.input, &mut rng);
        let decoder = Decoder { layers, ln_gain, ln_bias, proj };
        Ok(Self { arch, store, encoder, decoder })
    }

    /// Rebuilds a model from a checkpoint produced by [`RaeModel::new`] layouts.
    pub fn from_store(store: ParamStore<T>) -> Result<Self, RaeError> {
        let id = |name: &str| store.find(name).ok_or_else(|| RaeError::Layout(format!("missing {name}")));
        let wx = id("enc.lstm.wx")?;
        let (input, four_h) = store.value(wx).shape();
        let enc_hidden = four_h / 4;
        let latent = store.value(id("enc.proj.w")?).cols();
        let mut dec_layers = 0;
        while store.find(&format!("dec.lstm{dec_layers}.wx")).is_some() {
            dec_layers += 1;
        }
        if dec_layers == 0 {
            return Err(RaeError::Layout("no decoder layers".into()));
        }
        let dec_hidden = store.value(id("dec.lstm0.wh")?).rows();
        let arch = RaeArch { input, enc_hidden, latent, dec_hidden, dec_layers };
        let layer = |name: &str, input: usize, hidden: usize| -> Result<LstmLayer, RaeError> {
            let l = LstmLayer {
                wx: id(&format!("{name}.wx"))?,
                wh: id(&format!("{name}.wh"))?,
                b: id(&format!("{name}.b"))?,
                input,
                hidden,
            };
            let shapes = [store.value(l.wx).shape(), store.value(l.wh).shape(), store.value(l.b).shape()];
            if shapes != [(input, 4 * hidden), (hidden, 4 * hidden), (1, 4 * hidden)] {
                return Err(RaeError::Layout(format!("{name} has shapes {shapes:?}")));
            }
            Ok(l)
        };
        let linear = |name: &str, input: usize, output: usize| -> Result<Linear, RaeError> {
            let l = Linear { w: id(&format!("{name}.w"))?, b: id(&format!("{name}.b"))?, input, output };
            if store.value(l.w).shape() != (input, output) || store.value(l.b).shape() != (1, output) {
                return Err(RaeError::Layout(format!("{name} has the wrong shape")));
            }
            Ok(l)
        };
        let encoder = Encoder {
            lstm: layer("enc.lstm", input, enc_hidden)?,
            ln_gain: id("enc.ln.gain")?,
            ln_bias: id("enc.ln.bias")?,
            proj: linear("enc.proj", enc_hidden, latent)?,
        };
        let mut layers = Vec::new();
        for k in 0..dec_layers {
            let inp = if k == 0 { latent } else { dec_hidden };
            layers.push(layer(&format!("dec.lstm{k}"), inp, dec_hidden)?);
        }
        let decoder = Decoder {
            layers,
            ln_gain: id("dec.ln.gain")?,
            ln_bias: id("dec.ln.bias")?,
            proj: linear("dec.proj", dec_hidden, input)?,
        };
        if store.len() != encoder.ids().len() + decoder.ids().len() {
            return Err(RaeError::Layout("unexpected extra tensors".into()));
        }
        Ok(Self { arch, store, encoder, decoder })
    }

    pub fn encoder_state(&self, batch: usize) -> LstmState<T> {
        LstmState::zeros(1, batch, self.arch.enc_hidden)
    }

    pub fn decoder_state(&self, batch: usize) -> LstmState<T> {
        LstmState::zeros(self.arch.dec_layers, batch, self.arch.dec_hidden)
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        self.store.ids().collect()
    }

    pub fn param_count(&self) -> usize {
        self.store.total_count()
    }

    /// One encoder step on a single position.
    pub fn encode_step(&self, pos: [f64; 2], state: &LstmState<T>) -> (Vec<T>, LstmState<T>) {
        let mut g = Graph::new(&self.store);
        let x = g.constant(Tensor::from_f64(1, 2, &pos));
        let (h, c) = state.vars(&mut g);
        let (h2, c2) = self.encoder.step(&mut g, x, h[0], c[0], true);
        let z = self.encoder.latent(&mut g, h2, true);
        (g.value(z).data().to_vec(), LstmState::from_vars(&g, &[h2], &[c2]))
    }

    /// Latent of a whole sequence; the same arithmetic as folding
    /// [`RaeModel::encode_step`].
    pub fn encode(&self, path: &[[f64; 2]], state: &LstmState<T>) -> (Vec<T>, LstmState<T>) {
        assert!(!path.is_empty(), "encode of an empty path");
        let mut g = Graph::new(&self.store);
        let (h, c) = state.vars(&mut g);
        let (mut h, mut c) = (h[0], c[0]);
        for p in path {
            let x = g.constant(Tensor::from_f64(1, 2, p));
            (h, c) = self.encoder.step(&mut g, x, h, c, true);
        }
        let z = self.encoder.latent(&mut g, h, true);
        (g.value(z).data().to_vec(), LstmState::from_vars(&g, &[h], &[c]))
    }

    /// Unrolls `z` for `length` steps.
    pub fn decode(&self, z: &[T], length: usize, state: &LstmState<T>) -> Vec<[f64; 2]> {
        assert!(length >= 1, "decode length must be at least 1");
        let mut g = Graph::new(&self.store);
        let zv = g.constant(Tensor::row(z.to_vec()));
        let (mut h, mut c) = state.vars(&mut g);
        (0..length)
            .map(|_| {
                let y = self.decoder.step(&mut g, zv, &mut h, &mut c);
                let d = g.value(y).data();
                [d[0].as_f64(), d[1].as_f64()]
            })
            .collect()
    }

    /// Encode from zero state, then decode the same length.
    pub fn reconstruct(&self, path: &[[f64; 2]]) -> Vec<[f64; 2]> {
        let (z, _) = self.encode(path, &self.encoder_state(1));
        self.decode(&z, path.len(), &self.decoder_state(1))
    }

    /// Chunk forward pass on equal-length rows; returns `(mse, l1 + mse, states)`.
    fn chunk_loss(
        &self,
        g: &mut Graph<'_, T>,
        batch: &[&[[f64; 2]]],
        range: std::ops::Range<usize>,
        enc: &LstmState<T>,
        dec: &LstmState<T>,
        l1_lambda: f64,
    ) -> (Var, Var, LstmState<T>, LstmState<T>) {
        let (eh, ec) = enc.vars(g);
        let (mut h, mut c) = (eh[0], ec[0]);
        let xs: Vec<Var> = range.clone().map(|t| g.constant(to_rows(batch, t))).collect();
        for &x in &xs {
            (h, c) = self.encoder.step(g, x, h, c, false);
        }
        let enc_out = LstmState::from_vars(g, &[h], &[c]);
        let z = self.encoder.latent(g, h, false);
        let (mut dh, mut dc) = dec.vars(g);
        let ys: Vec<Var> = xs.iter().map(|_| self.decoder.step(g, z, &mut dh, &mut dc)).collect();
        let dec_out = LstmState::from_vars(g, &dh, &dc);
        let y = g.concat(&ys);
        let x = g.concat(&xs);
        let mse = g.mse(y, x);
        let total = if l1_lambda > 0.0 {
            let ids = self.param_ids();
            let l1 = g.l1_penalty(&ids);
            let l1 = g.scale(l1, l1_lambda);
            g.add(mse, l1)
        } else {
            mse
        };
        (mse, total, enc_out, dec_out)
    }

    /// Full-sequence reconstruction MSE from zero state, without the L1 term.
    pub fn reconstruction_mse(&self, batch: &[&[[f64; 2]]]) -> f64 {
        let len = batch[0].len();
        assert!(batch.iter().all(|p| p.len() == len), "batch rows must have equal length");
        let mut g = Graph::new(&self.store);
        let (mse, _, _, _) =
            self.chunk_loss(&mut g, batch, 0..len, &self.encoder_state(batch.len()), &self.decoder_state(batch.len()), 0.0);
        g.value(mse).item().as_f64()
    }
}

/// `(1/dim) Σ (ŝ − s)² + λ₁ Σ|θ|`.
pub fn rae_loss<T: Scalar>(s: &[[f64; 2]], s_hat: &[[f64; 2]], store: &ParamStore<T>, l1_lambda: f64) -> f64 {
    assert_eq!(s.len(), s_hat.len(), "rae_loss: length mismatch");
    let dim = (2 * s.len()) as f64;
    let se: f64 = s.iter().zip(s_hat).flat_map(|(a, b)| [(a[0] - b[0]).powi(2), (a[1] - b[1]).powi(2)]).sum();
    let ids: Vec<ParamId> = store.ids().collect();
    se / dim + l1_lambda * store.l1_norm(&ids)
}

/// Encoder weights detached from the decoder, shared read-only by rollout
/// workers.
#[derive(Debug, Clone, PartialEq)]
pub struct FrozenEncoder {
    store: ParamStore<f32>,
    encoder: Encoder,
    hidden: usize,
    latent: usize,
}

impl FrozenEncoder {
    pub fn from_model(model: &RaeModel<f32>) -> Arc<Self> {
        let mut store = ParamStore::new();
        let mut copy = |id: ParamId| store.add(model.store.name(id), model.store.value(id).clone());
        let e = &model.encoder;
        let lstm = LstmLayer { wx: copy(e.lstm.wx), wh: copy(e.lstm.wh), b: copy(e.lstm.b), ..e.lstm };
        let ln_gain = copy(e.ln_gain);
        let ln_bias = copy(e.ln_bias);
        let proj = Linear { w: copy(e.proj.w), b: copy(e.proj.b), ..e.proj };
        Arc::new(Self {
            store,
            encoder: Encoder { lstm, ln_gain, ln_bias, proj },
            hidden: model.arch.enc_hidden,
            latent: model.arch.latent,
        })
    }

    pub fn latent_dim(&self) -> usize {
        self.latent
    }

    pub fn param_count(&self) -> usize {
        self.store.total_count()
    }

    pub fn initial_state(&self) -> LstmState<f32> {
        LstmState::zeros(1, 1, self.hidden)
    }

    pub fn encode_step(&self, pos: [f32; 2], state: &LstmState<f32>) -> (Vec<f32>, LstmState<f32>) {
        let mut g = Graph::new(&self.store);
        let x = g.constant(Tensor::row(pos.to_vec()));
        let h = g.constant(state.h[0].clone());
        let c = g.constant(state.c[0].clone());
        let (h2, c2) = self.encoder.step(&mut g, x, h, c, true);
        let z = self.encoder.latent(&mut g, h2, true);
        (g.value(z).data().to_vec(), LstmState { h: vec![g.value(h2).clone()], c: vec![g.value(c2).clone()] })
    }

    pub fn checksum(&self) -> [u8; 32] {
        let ids: Vec<ParamId> = self.store.ids().collect();
        self.store.checksum(&ids)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RaeTrainConfig {
    pub learning_rate: f64,
    pub grad_clip: f64,
    pub l1_lambda: f64,
    pub patience: usize,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub val_fraction: f64,
}

impl Default for RaeTrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            grad_clip: 0.5,
            l1_lambda: 1e-4,
            patience: 40,
            batch_size: 8,
            max_epochs: 5000,
            val_fraction: 0.1,
        }
    }
}

impl RaeTrainConfig {
    /// Larger steps and a weaker L1 term for single-core runs.
    pub fn desk() -> Self {
        Self { learning_rate: 1e-3, max_epochs: 400, l1_lambda: 1e-6, ..Self::default() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub best_val_loss: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: RaeModel<f32>,
    /// Epoch 0 holds the losses of the untrained model.
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub stopped_early: bool,
}

impl TrainOutcome {
    pub fn history_csv(&self) -> String {
        let mut s = String::from("epoch,train_loss,val_loss,best_val_loss\n");
        for r in &self.history {
            s.push_str(&format!("{},{},{},{}\n", r.epoch, r.train_loss, r.val_loss, r.best_val_loss));
        }
        s
    }
}

/// Splits `0..len` into consecutive chunks of length `U(2, k)`; a trailing
/// single step is merged into the previous chunk.
pub fn chunk_lengths<R: Rng + ?Sized>(len: usize, k: usize, rng: &mut R) -> Vec<usize> {
    if len < 2 {
        return vec![len];
    }
    let k = k.max(2);
    let mut out = Vec::new();
    let mut left = len;
    while left > 0 {
        let n = rng.gen_range(2..=k).min(left);
        out.push(n);
        left -= n;
    }
    if out.len() > 1 && *out.last().unwrap() == 1 {
        out.pop();
        *out.last_mut().unwrap() += 1;
    }
    out
}

/// Groups indices into batches of equal path length.
fn batches(idx: &[usize], paths: &[Vec<[f64; 2]>], size: usize) -> Vec<Vec<usize>> {
    let mut sorted = idx.to_vec();
    sorted.sort_by_key(|&i| paths[i].len());
    let mut out: Vec<Vec<usize>> = Vec::new();
    for i in sorted {
        match out.last_mut() {
            Some(b) if b.len() < size && paths[b[0]].len() == paths[i].len() => b.push(i),
            _ => out.push(vec![i]),
        }
    }
    out
}

fn mean_val_loss(model: &RaeModel<f32>, paths: &[Vec<[f64; 2]>], val: &[usize], batch_size: usize) -> f64 {
    let mut se = 0.0;
    let mut n = 0.0;
    for b in batches(val, paths, batch_size) {
        let rows: Vec<&[[f64; 2]]> = b.iter().map(|&i| paths[i].as_slice()).collect();
        let w = (rows.len() * rows[0].len()) as f64;
        se += model.reconstruction_mse(&rows) * w;
        n += w;
    }
    se / n
}

pub fn train_rae(
    paths: &[Vec<[f64; 2]>],
    arch: RaeArch,
    cfg: &RaeTrainConfig,
    seed: u64,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome, RaeError> {
    if paths.is_empty() {
        return Err(RaeError::InvalidParameter("empty dataset".into()));
    }
    if paths.iter().any(|p| p.len() < 2) {
        return Err(RaeError::InvalidParameter("every path needs at least 2 positions".into()));
    }
    if !(cfg.learning_rate > 0.0 && cfg.grad_clip > 0.0 && cfg.batch_size > 0 && cfg.l1_lambda >= 0.0) {
        return Err(RaeError::InvalidParameter(format!("bad training config {cfg:?}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model = RaeModel::<f32>::new(arch, rng.gen())?;
    let mut order: Vec<usize> = (0..paths.len()).collect();
    order.shuffle(&mut rng);
    let n_val = if paths.len() >= 2 { ((paths.len() as f64 * cfg.val_fraction).round() as usize).clamp(1, paths.len() - 1) } else { 0 };
    let (val, train) = order.split_at(n_val);
    let val = if val.is_empty() { train.to_vec() } else { val.to_vec() };
    let train = train.to_vec();

    let ids = model.param_ids();
    let mut opt = Adam::new(&model.store, &ids, cfg.learning_rate);
    let v0 = mean_val_loss(&model, paths, &val, cfg.batch_size);
    let mut history = vec![EpochRecord { epoch: 0, train_loss: v0, val_loss: v0, best_val_loss: v0 }];
    on_epoch(&history[0]);
    let mut best = (v0, 0usize, model.store.clone());
    let mut stopped_early = false;

    for epoch in 1..=cfg.max_epochs {
        let mut shuffled = train.clone();
        shuffled.shuffle(&mut rng);
        let mut bs = batches(&shuffled, paths, cfg.batch_size);
        bs.shuffle(&mut rng);
        let (mut se, mut n) = (0.0, 0.0);
        for b in bs {
            let rows: Vec<&[[f64; 2]]> = b.iter().map(|&i| paths[i].as_slice()).collect();
            let len = rows[0].len();
            let mut enc = model.encoder_state(rows.len());
            let mut dec = model.decoder_state(rows.len());
            let mut start = 0;
            for n_chunk in chunk_lengths(len, len, &mut rng) {
                let grads = {
                    let mut g = Graph::new(&model.store);
                    let (mse, total, e2, d2) =
                        model.chunk_loss(&mut g, &rows, start..start + n_chunk, &enc, &dec, cfg.l1_lambda);
                    let w = (rows.len() * n_chunk) as f64;
                    se += g.value(mse).item() as f64 * w;
                    n += w;
                    enc = e2;
                    dec = d2;
                    g.backward(total)?
                };
                model.store.accumulate(&grads);
                clip_grad_norm(&mut model.store, &ids, cfg.grad_clip);
                opt.step(&mut model.store);
                start += n_chunk;
            }
        }
        let val_loss = mean_val_loss(&model, paths, &val, cfg.batch_size);
        if val_loss < best.0 {
            best = (val_loss, epoch, model.store.clone());
        }
        let rec = EpochRecord { epoch, train_loss: se / n, val_loss, best_val_loss: best.0 };
        on_epoch(&rec);
        history.push(rec);
        if epoch - best.1 > cfg.patience {
            stopped_early = true;
            break;
        }
    }
    model.store = best.2;
    Ok(TrainOutcome { model, history, best_epoch: best.1, stopped_early })
}

/// Central-difference check of one chunk forward pass (encoder, decoder and
/// L1 term) of a small f64 model with nonzero incoming state.
pub fn tiny_gradient_check(seed: u64) -> Result<GradCheckReport, RaeError> {
    let arch = RaeArch { input: 2, enc_hidden: 8, latent: 4, dec_hidden: 8, dec_layers: 2 };
    let m = RaeModel::<f64>::new(arch, seed)?;
    let wiggle = |phase: f64| -> Vec<[f64; 2]> {
        (0..5).map(|t| [(0.3 * t as f64 + phase).sin() * 0.8, (0.2 * t as f64 - phase).cos() * 0.6]).collect()
    };
    let paths = [wiggle(0.1), wiggle(1.3)];
    let rows: Vec<&[[f64; 2]]> = paths.iter().map(|p| p.as_slice()).collect();
    let ids = m.param_ids();
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(6));
    let enc = LstmState {
        h: vec![Tensor::uniform(2, arch.enc_hidden, 0.5, &mut rng)],
        c: vec![Tensor::uniform(2, arch.enc_hidden, 0.5, &mut rng)],
    };
    let dec = m.decoder_state(2);
    Ok(check_gradients(&m.store, &ids, 1e-5, |g| m.chunk_loss(g, &rows, 0..5, &enc, &dec, 1e-3).1)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> RaeArch {
        RaeArch { input: 2, enc_hidden: 8, latent: 4, dec_hidden: 8, dec_layers: 2 }
    }

    fn wiggle(n: usize, phase: f64) -> Vec<[f64; 2]> {
        (0..n).map(|t| [(0.3 * t as f64 + phase).sin() * 0.8, (0.2 * t as f64 - phase).cos() * 0.6]).collect()
    }

    #[test]
    fn zero_cell_hand_oracle() {
        let mut s = ParamStore::<f64>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let layer = LstmLayer::new(&mut s, "l", 3, 4, &mut rng);
        for id in layer.ids() {
            s.value_mut(id).fill(0.0);
        }
        let x = Tensor::row(vec![0.7, -2.0, 5.0]);
        let (h, c) = lstm_cell(&s, &layer, &x, &Tensor::zeros(1, 4), &Tensor::zeros(1, 4));
        assert_eq!(h.data(), &[0.0; 4]);
        assert_eq!(c.data(), &[0.0; 4]);
        let c0 = Tensor::row(vec![1.0, -3.0, 0.25, 10.0]);
        let (h, c) = lstm_cell(&s, &layer, &x, &Tensor::row(vec![0.3; 4]), &c0);
        for k in 0..4 {
            assert_eq!(c.data()[k], 0.5 * c0.data()[k]);
            assert_eq!(h.data()[k], 0.5 * (0.5 * c0.data()[k]).tanh());
        }
    }

    #[test]
    fn repeated_zero_input_stays_bounded() {
        let m = RaeModel::<f64>::new(tiny(), 3).unwrap();
        let mut st = m.encoder_state(1);
        for _ in 0..200 {
            let (_, s2) = m.encode_step([0.0, 0.0], &st);
            st = s2;
            assert!(st.h[0].data().iter().all(|v| v.abs() < 1.0));
        }
    }

    #[test]
    fn encode_equals_folded_steps_bitwise() {
        let m = RaeModel::<f32>::new(RaeArch::desk(), 11).unwrap();
        let path = wiggle(30, 0.4);
        let (z, s) = m.encode(&path, &m.encoder_state(1));
        let mut st = m.encoder_state(1);
        let mut zi = Vec::new();
        for p in &path {
            (zi, st) = m.encode_step(*p, &st);
        }
        assert_eq!(z.iter().map(|x| x.to_bits()).collect::<Vec<_>>(), zi.iter().map(|x| x.to_bits()).collect::<Vec<_>>());
        assert_eq!(s, st);
        let frozen = FrozenEncoder::from_model(&m);
        let mut fs = frozen.initial_state();
        let mut fz = Vec::new();
        for p in &path {
            (fz, fs) = frozen.encode_step([p[0] as f32, p[1] as f32], &fs);
        }
        assert_eq!(fz, z);
        let (z1, _) = m.encode(&path[..1], &m.encoder_state(1));
        assert_eq!(z1, m.encode_step(path[0], &m.encoder_state(1)).0);
    }

    #[test]
    fn latent_is_sensitive_to_first_element() {
        let m = RaeModel::<f64>::new(tiny(), 5).unwrap();
        let a = wiggle(12, 0.0);
        let mut b = a.clone();
        b[0][0] += 0.1;
        let (za, _) = m.encode(&a, &m.encoder_state(1));
        let (zb, _) = m.encode(&b, &m.encoder_state(1));
        assert!(za.iter().zip(&zb).any(|(x, y)| (x - y).abs() > 1e-9));
        assert_eq!(za, m.encode(&a, &m.encoder_state(1)).0);
    }

    #[test]
    fn decode_range_and_length() {
        let m = RaeModel::<f32>::new(tiny(), 1).unwrap();
        let z = vec![50.0f32, -80.0, 3.0, 0.0];
        let out = m.decode(&z, 17, &m.decoder_state(1));
        assert_eq!(out.len(), 17);
        assert!(out.iter().flatten().all(|v| v.abs() < 1.0));
    }

    #[test]
    fn loss_examples() {
        let s = ParamStore::<f64>::new();
        let a = [[0.1, 0.2], [0.3, 0.4]];
        assert_eq!(rae_loss(&a, &a, &s, 0.0), 0.0);
        let b = [[0.1, 0.2], [2.3, 0.4]];
        assert!((rae_loss(&a, &b, &s, 0.0) - 1.0).abs() < 1e-12);
        let m = RaeModel::<f64>::new(tiny(), 1).unwrap();
        let l1 = m.store.l1_norm(&m.param_ids());
        assert!((rae_loss(&a, &a, &m.store, 1e-4) - 1e-4 * l1).abs() < 1e-15);
    }

    #[test]
    fn tiny_model_gradients() {
        let report = tiny_gradient_check(2).unwrap();
        assert!(report.passes(1e-4), "{report:?}");
        assert_eq!(report.checked, RaeModel::<f64>::new(tiny(), 0).unwrap().param_count());
    }

    #[test]
    fn chunking_law() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for len in 2..80 {
            for _ in 0..20 {
                let c = chunk_lengths(len, len, &mut rng);
                assert_eq!(c.iter().sum::<usize>(), len);
                assert!(c.iter().all(|&n| n >= 2 && n <= len));
            }
        }
    }

    #[test]
    fn from_store_round_trip() {
        let m = RaeModel::<f32>::new(tiny(), 4).unwrap();
        let back = RaeModel::from_store(m.store.clone()).unwrap();
        assert_eq!(back, m);
        let mut s = m.store.clone();
        s.add("junk", Tensor::scalar(1.0));
        assert!(RaeModel::from_store(s).is_err());
    }

    #[test]
    fn full_arch_sizes() {
        let a = RaeArch::full();
        let enc = 4 * 512 * (2 + 512 + 1) + 2 * 512 + 512 * 48 + 48;
        let dec = 4 * 2048 * (48 + 2048 + 1) + 4 * 2048 * (2048 + 2048 + 1) + 2 * 2048 + 2048 * 2 + 2;
        assert!(a.dec_hidden > a.enc_hidden);
        assert_eq!(enc, 1_080_368);
        assert!(dec > 5 * enc);
    }

    #[test]
    fn training_is_deterministic_and_patience_stops() {
        let paths: Vec<Vec<[f64; 2]>> = (0..12).map(|k| wiggle(9, k as f64 * 0.5)).collect();
        let cfg = RaeTrainConfig { learning_rate: 1e-2, max_epochs: 6, patience: 40, ..Default::default() };
        let a = train_rae(&paths, tiny(), &cfg, 3, |_| {}).unwrap();
        let b = train_rae(&paths, tiny(), &cfg, 3, |_| {}).unwrap();
        assert_eq!(a.history, b.history);
        assert_eq!(a.history.len(), 7);
        assert!(a.history.last().unwrap().best_val_loss < a.history[0].val_loss);
        let zero = RaeTrainConfig { patience: 0, learning_rate: 1e-9, max_epochs: 50, ..cfg };
        let c = train_rae(&paths, tiny(), &zero, 3, |_| {}).unwrap();
        assert!(c.stopped_early);
        let h = &c.history;
        for w in h[..h.len() - 1].windows(2) {
            assert!(w[1].val_loss < w[0].best_val_loss);
        }
        assert!(h[h.len() - 1].val_loss >= h[h.len() - 2].best_val_loss);
        assert!(train_rae(&[], tiny(), &cfg, 0, |_| {}).is_err());
    }
}
