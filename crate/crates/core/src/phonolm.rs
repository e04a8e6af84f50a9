//! Phone-level LSTM language model, optionally conditioned on a meaning
//! vector and/or a word class through its initial state.
//!
//! A word `w₁…wₙ` is scored as `∏ Q(wᵢ | w₍<ᵢ₎) · Q(EOS | w)`. The input
//! sequence is `[EOS, w₁, …, wₙ]` (the end-of-string token doubles as the
//! start symbol) and step `t` predicts `wₜ₊₁`, or EOS at the last step.
//! Gradients are computed by hand-written backpropagation through time in
//! 64-bit floats; the parallel unit is one word.

use std::fmt;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::exec::Execution;
use crate::infotheory::{PerWordLoss, WordLoss};
use crate::lexicon::{Lexicon, PhoneId, PhoneInventory};
use crate::rng;
use crate::semspace::PcaModel;

#[derive(Debug, Error, PartialEq)]
pub enum LmError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("hidden size {0} cannot be split in half for meaning+class conditioning")]
    OddHiddenSplit(usize),
    #[error("{what}: expected dimension {expected}, got {found}")]
    DimensionMismatch { what: &'static str, expected: usize, found: usize },
    #[error("conditioning input missing: {0}")]
    MissingCondition(&'static str),
    #[error("unknown class index {0}")]
    UnknownClass(usize),
    #[error("phone id {0} is out of inventory")]
    OutOfInventory(u32),
    #[error("empty {0} split")]
    EmptySplit(&'static str),
    #[error("training diverged at epoch {epoch}, batch {batch}: loss {loss}")]
    Diverged { epoch: usize, batch: usize, loss: f64 },
    #[error("model archive: {0}")]
    Archive(String),
}

pub type Result<T> = std::result::Result<T, LmError>;

/// What the initial state is computed from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Conditioning {
    #[serde(rename = "uncond")]
    Nothing,
    Meaning,
    Class,
    MeaningAndClass,
}

impl Conditioning {
    pub fn uses_meaning(self) -> bool {
        matches!(self, Conditioning::Meaning | Conditioning::MeaningAndClass)
    }

    pub fn uses_class(self) -> bool {
        matches!(self, Conditioning::Class | Conditioning::MeaningAndClass)
    }

    pub const ALL: [Conditioning; 4] =
        [Conditioning::Nothing, Conditioning::Meaning, Conditioning::Class, Conditioning::MeaningAndClass];

    pub fn name(self) -> &'static str {
        match self {
            Conditioning::Nothing => "uncond",
            Conditioning::Meaning => "meaning",
            Conditioning::Class => "class",
            Conditioning::MeaningAndClass => "meaning_and_class",
        }
    }
}

impl fmt::Display for Conditioning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Which recurrent states receive the conditioning vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum H0Target {
    /// Hidden and cell state of the first layer; zeros elsewhere.
    #[default]
    FirstLayer,
    /// Hidden state of the first layer only.
    FirstLayerHidden,
    /// Hidden and cell state of every layer.
    AllLayers,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LmConfig {
    pub layers: usize,
    pub hidden_size: usize,
    pub phone_embed_size: usize,
    pub dropout: f64,
    /// Meaning dimension after PCA.
    pub pca_d: usize,
    pub condition_on: Conditioning,
    #[serde(default)]
    pub h0_target: H0Target,
}

impl Default for LmConfig {
    fn default() -> Self {
        LmConfig {
            layers: 1,
            hidden_size: 64,
            phone_embed_size: 16,
            dropout: 0.0,
            pca_d: 10,
            condition_on: Conditioning::Nothing,
            h0_target: H0Target::FirstLayer,
        }
    }
}

impl LmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 || self.hidden_size == 0 || self.phone_embed_size == 0 || self.pca_d == 0 {
            return Err(LmError::InvalidConfig("all sizes must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(LmError::InvalidConfig(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        if self.condition_on == Conditioning::MeaningAndClass && self.hidden_size % 2 == 1 {
            return Err(LmError::OddHiddenSplit(self.hidden_size));
        }
        Ok(())
    }

    /// Output size of the meaning projection.
    fn meaning_width(&self) -> usize {
        match self.condition_on {
            Conditioning::MeaningAndClass => self.hidden_size / 2,
            _ => self.hidden_size,
        }
    }

    fn class_width(&self) -> usize {
        self.meaning_width()
    }
}

// ---------------------------------------------------------------------------
// Tensors

/// Dense row-major tensor (rank 1 or 2).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        Tensor { shape: shape.to_vec(), data: vec![0.0; shape.iter().product()] }
    }

    fn uniform(shape: &[usize], bound: f64, rng: &mut ChaCha8Rng) -> Self {
        let n = shape.iter().product();
        let data = (0..n).map(|_| if bound > 0.0 { rng.random_range(-bound..bound) } else { 0.0 }).collect();
        Tensor { shape: shape.to_vec(), data }
    }

    fn cols(&self) -> usize {
        *self.shape.last().unwrap()
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    #[inline]
    fn row_mut(&mut self, i: usize) -> &mut [f64] {
        let c = self.cols();
        &mut self.data[i * c..(i + 1) * c]
    }

    /// `out += self · x`
    #[inline]
    fn gemv(&self, x: &[f64], out: &mut [f64]) {
        let c = self.cols();
        debug_assert_eq!(x.len(), c);
        for (o, row) in out.iter_mut().zip(self.data.chunks_exact(c)) {
            *o += row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
        }
    }

    /// `out += selfᵀ · d`
    #[inline]
    fn gemv_t(&self, d: &[f64], out: &mut [f64]) {
        let c = self.cols();
        for (&di, row) in d.iter().zip(self.data.chunks_exact(c)) {
            if di != 0.0 {
                for (o, a) in out.iter_mut().zip(row) {
                    *o += di * a;
                }
            }
        }
    }

    /// `self += d ⊗ x`
    #[inline]
    fn add_outer(&mut self, d: &[f64], x: &[f64]) {
        let c = self.cols();
        for (&di, row) in d.iter().zip(self.data.chunks_exact_mut(c)) {
            if di != 0.0 {
                for (g, xv) in row.iter_mut().zip(x) {
                    *g += di * xv;
                }
            }
        }
    }

    fn add_assign(&mut self, other: &Tensor) {
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LstmLayer {
    /// `[4H, in]`, gate blocks ordered input, forget, cell, output.
    pub w_x: Tensor,
    /// `[4H, H]`
    pub w_h: Tensor,
    /// `[4H]`
    pub bias: Tensor,
}

/// All trainable tensors of one model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LmParameters {
    /// `[|Σ|, E]`
    pub embed: Tensor,
    pub layers: Vec<LstmLayer>,
    /// `[|Σ|, H]`
    pub out_w: Tensor,
    /// `[|Σ|]`
    pub out_b: Tensor,
    /// `[H or H/2, pca_d]`
    pub cond_w: Option<Tensor>,
    pub cond_b: Option<Tensor>,
    /// `[classes, H or H/2]`
    pub class_emb: Option<Tensor>,
}

impl LmParameters {
    /// Uniform ±1/√fan-in initialisation, forget-gate bias +1, other biases 0.
    /// `init_scale` multiplies every bound (0 gives the all-zero model, with
    /// forget bias still 0).
    pub fn init(cfg: &LmConfig, vocab: usize, n_classes: usize, seed: u64, init_scale: f64) -> Result<Self> {
        cfg.validate()?;
        let mut r = rng::rng_for(seed, rng::stream::INIT, 0);
        let (h, e) = (cfg.hidden_size, cfg.phone_embed_size);
        let bound = |fan_in: usize| init_scale / (fan_in as f64).sqrt();
        let embed = Tensor::uniform(&[vocab, e], bound(e), &mut r);
        let layers = (0..cfg.layers)
            .map(|l| {
                let input = if l == 0 { e } else { h };
                let w_x = Tensor::uniform(&[4 * h, input], bound(input), &mut r);
                let w_h = Tensor::uniform(&[4 * h, h], bound(h), &mut r);
                let mut bias = Tensor::zeros(&[4 * h]);
                if init_scale > 0.0 {
                    bias.data[h..2 * h].iter_mut().for_each(|b| *b = 1.0);
                }
                LstmLayer { w_x, w_h, bias }
            })
            .collect();
        let out_w = Tensor::uniform(&[vocab, h], bound(h), &mut r);
        let out_b = Tensor::zeros(&[vocab]);
        let (cond_w, cond_b) = if cfg.condition_on.uses_meaning() {
            let w = cfg.meaning_width();
            (Some(Tensor::uniform(&[w, cfg.pca_d], bound(cfg.pca_d), &mut r)), Some(Tensor::zeros(&[w])))
        } else {
            (None, None)
        };
        let class_emb = if cfg.condition_on.uses_class() {
            let w = cfg.class_width();
            Some(Tensor::uniform(&[n_classes.max(1), w], bound(w), &mut r))
        } else {
            None
        };
        Ok(LmParameters { embed, layers, out_w, out_b, cond_w, cond_b, class_emb })
    }

    pub fn vocab(&self) -> usize {
        self.embed.shape[0]
    }

    /// Named tensors in a fixed order.
    pub fn tensors(&self) -> Vec<(String, &Tensor)> {
        let mut v = vec![("embed".to_string(), &self.embed)];
        for (l, layer) in self.layers.iter().enumerate() {
            v.push((format!("lstm{l}.w_x"), &layer.w_x));
            v.push((format!("lstm{l}.w_h"), &layer.w_h));
            v.push((format!("lstm{l}.bias"), &layer.bias));
        }
        v.push(("out_w".into(), &self.out_w));
        v.push(("out_b".into(), &self.out_b));
        if let Some(t) = &self.cond_w {
            v.push(("cond_w".into(), t));
        }
        if let Some(t) = &self.cond_b {
            v.push(("cond_b".into(), t));
        }
        if let Some(t) = &self.class_emb {
            v.push(("class_emb".into(), t));
        }
        v
    }

    /// Mutable tensors, same order as [`tensors`](Self::tensors).
    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v = vec![&mut self.embed];
        for layer in &mut self.layers {
            v.push(&mut layer.w_x);
            v.push(&mut layer.w_h);
            v.push(&mut layer.bias);
        }
        v.push(&mut self.out_w);
        v.push(&mut self.out_b);
        v.extend(self.cond_w.as_mut());
        v.extend(self.cond_b.as_mut());
        v.extend(self.class_emb.as_mut());
        v
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for t in z.tensors_mut() {
            t.data.iter_mut().for_each(|x| *x = 0.0);
        }
        z
    }

    fn add_assign(&mut self, other: &LmParameters) {
        for (a, (_, b)) in self.tensors_mut().into_iter().zip(other.tensors()) {
            a.add_assign(b);
        }
    }

    pub fn n_params(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.data.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors().iter().all(|(_, t)| t.data.iter().all(|x| x.is_finite()))
    }

    /// SHA-256 over the bit patterns of every parameter, hex encoded.
    pub fn hash(&self) -> String {
        let mut hasher = Sha256::new();
        for (name, t) in self.tensors() {
            hasher.update(name.as_bytes());
            for x in &t.data {
                hasher.update(x.to_bits().to_le_bytes());
            }
        }
        hex::encode(hasher.finalize())
    }

    fn check_shapes(&self, cfg: &LmConfig) -> Result<()> {
        let bad = |what: &'static str, expected: usize, found: usize| {
            Err(LmError::DimensionMismatch { what, expected, found })
        };
        if self.layers.len() != cfg.layers {
            return bad("layers", cfg.layers, self.layers.len());
        }
        if self.embed.shape[1] != cfg.phone_embed_size {
            return bad("phone embedding", cfg.phone_embed_size, self.embed.shape[1]);
        }
        if self.out_w.shape[1] != cfg.hidden_size {
            return bad("hidden size", cfg.hidden_size, self.out_w.shape[1]);
        }
        if cfg.condition_on.uses_meaning() != self.cond_w.is_some()
            || cfg.condition_on.uses_class() != self.class_emb.is_some()
        {
            return Err(LmError::InvalidConfig("parameters do not match conditioning mode".into()));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Examples and conditioning

/// One word prepared for the model.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub sign: usize,
    pub form: Vec<PhoneId>,
    /// Projected meaning (length `pca_d`), when the model uses meaning.
    pub meaning: Option<Vec<f64>>,
    pub class: Option<usize>,
}

impl Example {
    pub fn token_count(&self) -> usize {
        self.form.len() + 1
    }
}

/// Build model inputs for the signs at `indices`. Meanings are projected
/// with `pca` when the configuration conditions on them.
pub fn examples_for(lex: &Lexicon, indices: &[usize], cfg: &LmConfig, pca: Option<&PcaModel>) -> Result<Vec<Example>> {
    indices
        .iter()
        .map(|&i| {
            let s = &lex.signs[i];
            let meaning = if cfg.condition_on.uses_meaning() {
                let pca = pca.ok_or(LmError::MissingCondition("PCA model for meaning conditioning"))?;
                let v = pca.transform(&s.meaning).map_err(|_| LmError::DimensionMismatch {
                    what: "meaning vector",
                    expected: pca.input_dim(),
                    found: s.meaning.len(),
                })?;
                Some(v)
            } else {
                None
            };
            let class = if cfg.condition_on.uses_class() {
                Some(lex.class_index(&s.pos).ok_or(LmError::UnknownClass(usize::MAX))?)
            } else {
                None
            };
            Ok(Example { sign: i, form: s.form.clone(), meaning, class })
        })
        .collect()
}

/// The conditioning vector `h₀` (length `hidden_size`).
pub fn condition_init(cfg: &LmConfig, params: &LmParameters, meaning: Option<&[f64]>, class: Option<usize>) -> Result<Vec<f64>> {
    cfg.validate()?;
    let h = cfg.hidden_size;
    let mut h0 = vec![0.0; h];
    let meaning_part = |out: &mut [f64]| -> Result<()> {
        let v = meaning.ok_or(LmError::MissingCondition("meaning vector"))?;
        if v.len() != cfg.pca_d {
            return Err(LmError::DimensionMismatch { what: "meaning vector", expected: cfg.pca_d, found: v.len() });
        }
        let (w, b) = (params.cond_w.as_ref().unwrap(), params.cond_b.as_ref().unwrap());
        out.copy_from_slice(&b.data);
        w.gemv(v, out);
        Ok(())
    };
    let class_part = |out: &mut [f64]| -> Result<()> {
        let c = class.ok_or(LmError::MissingCondition("class label"))?;
        let emb = params.class_emb.as_ref().unwrap();
        if c >= emb.shape[0] {
            return Err(LmError::UnknownClass(c));
        }
        out.copy_from_slice(emb.row(c));
        Ok(())
    };
    match cfg.condition_on {
        Conditioning::Nothing => {}
        Conditioning::Meaning => meaning_part(&mut h0)?,
        Conditioning::Class => class_part(&mut h0)?,
        Conditioning::MeaningAndClass => {
            let (first, second) = h0.split_at_mut(h / 2);
            class_part(first)?;
            meaning_part(second)?;
        }
    }
    Ok(h0)
}

// ---------------------------------------------------------------------------
// Forward / backward

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

struct Step {
    x: Vec<f64>,
    h_prev: Vec<f64>,
    c_prev: Vec<f64>,
    /// Activated gates i, f, g, o.
    gates: Vec<f64>,
    tanh_c: Vec<f64>,
    h: Vec<f64>,
    c: Vec<f64>,
}

fn lstm_step(layer: &LstmLayer, x: Vec<f64>, h_prev: Vec<f64>, c_prev: Vec<f64>) -> Step {
    let hs = h_prev.len();
    let mut a = layer.bias.data.clone();
    layer.w_x.gemv(&x, &mut a);
    layer.w_h.gemv(&h_prev, &mut a);
    for (j, v) in a.iter_mut().enumerate() {
        *v = if j / hs == 2 { v.tanh() } else { sigmoid(*v) };
    }
    let mut c = vec![0.0; hs];
    let mut tanh_c = vec![0.0; hs];
    let mut h = vec![0.0; hs];
    for j in 0..hs {
        c[j] = a[hs + j] * c_prev[j] + a[j] * a[2 * hs + j];
        tanh_c[j] = c[j].tanh();
        h[j] = a[3 * hs + j] * tanh_c[j];
    }
    Step { x, h_prev, c_prev, gates: a, tanh_c, h, c }
}

/// Log-softmax in nats.
fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
    logits.iter().map(|z| z - lse).collect()
}

struct Trace {
    /// `[t][layer]`
    steps: Vec<Vec<Step>>,
    /// Dropout masks applied to the input of each layer, `[t][layer]`.
    masks: Vec<Vec<Option<Vec<f64>>>>,
    /// Log-probabilities (nats) over the vocabulary at each step.
    log_probs: Vec<Vec<f64>>,
    inputs: Vec<usize>,
    targets: Vec<usize>,
}

fn check_example(params: &LmParameters, ex: &Example) -> Result<()> {
    let vocab = params.vocab() as u32;
    match ex.form.iter().find(|p| p.0 == 0 || p.0 >= vocab) {
        Some(p) => Err(LmError::OutOfInventory(p.0)),
        None => Ok(()),
    }
}

fn initial_states(cfg: &LmConfig, h0: &[f64]) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let zeros = vec![0.0; cfg.hidden_size];
    let mut hs = vec![zeros.clone(); cfg.layers];
    let mut cs = vec![zeros; cfg.layers];
    match cfg.h0_target {
        H0Target::FirstLayer => {
            hs[0] = h0.to_vec();
            cs[0] = h0.to_vec();
        }
        H0Target::FirstLayerHidden => hs[0] = h0.to_vec(),
        H0Target::AllLayers => {
            for l in 0..cfg.layers {
                hs[l] = h0.to_vec();
                cs[l] = h0.to_vec();
            }
        }
    }
    (hs, cs)
}

fn dropout_mask(len: usize, p: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let keep = 1.0 / (1.0 - p);
    (0..len).map(|_| if rng.random::<f64>() < p { 0.0 } else { keep }).collect()
}

fn forward(
    params: &LmParameters,
    cfg: &LmConfig,
    ex: &Example,
    mut dropout_rng: Option<&mut ChaCha8Rng>,
) -> Result<Trace> {
    check_example(params, ex)?;
    let h0 = condition_init(cfg, params, ex.meaning.as_deref(), ex.class)?;
    let (mut hs, mut cs) = initial_states(cfg, &h0);
    let eos = 0usize;
    let inputs: Vec<usize> = std::iter::once(eos).chain(ex.form.iter().map(|p| p.index())).collect();
    let targets: Vec<usize> = ex.form.iter().map(|p| p.index()).chain(std::iter::once(eos)).collect();
    let mut steps = Vec::with_capacity(inputs.len());
    let mut masks = Vec::with_capacity(inputs.len());
    let mut log_probs = Vec::with_capacity(inputs.len());
    for &tok in &inputs {
        let mut x = params.embed.row(tok).to_vec();
        let mut layer_steps = Vec::with_capacity(cfg.layers);
        let mut layer_masks = Vec::with_capacity(cfg.layers);
        for (l, layer) in params.layers.iter().enumerate() {
            let mask = match dropout_rng.as_deref_mut() {
                Some(r) if cfg.dropout > 0.0 => {
                    let m = dropout_mask(x.len(), cfg.dropout, r);
                    x.iter_mut().zip(&m).for_each(|(v, k)| *v *= k);
                    Some(m)
                }
                _ => None,
            };
            let h_prev = std::mem::take(&mut hs[l]);
            let c_prev = std::mem::take(&mut cs[l]);
            let step = lstm_step(layer, x, h_prev, c_prev);
            hs[l] = step.h.clone();
            cs[l] = step.c.clone();
            x = step.h.clone();
            layer_steps.push(step);
            layer_masks.push(mask);
        }
        let mut logits = params.out_b.data.clone();
        params.out_w.gemv(&x, &mut logits);
        log_probs.push(log_softmax(&logits));
        steps.push(layer_steps);
        masks.push(layer_masks);
    }
    Ok(Trace { steps, masks, log_probs, inputs, targets })
}

/// Backpropagate `scale · Σ nats` of one word into `grad`.
fn backward(params: &LmParameters, cfg: &LmConfig, ex: &Example, trace: &Trace, scale: f64, grad: &mut LmParameters) {
    let hs = cfg.hidden_size;
    let n_layers = cfg.layers;
    let mut carry_h = vec![vec![0.0; hs]; n_layers];
    let mut carry_c = vec![vec![0.0; hs]; n_layers];
    for t in (0..trace.inputs.len()).rev() {
        let lp = &trace.log_probs[t];
        let mut dlogits: Vec<f64> = lp.iter().map(|l| scale * l.exp()).collect();
        dlogits[trace.targets[t]] -= scale;
        let top = &trace.steps[t][n_layers - 1];
        grad.out_w.add_outer(&dlogits, &top.h);
        grad.out_b.data.iter_mut().zip(&dlogits).for_each(|(g, d)| *g += d);
        let mut dh_above = vec![0.0; hs];
        params.out_w.gemv_t(&dlogits, &mut dh_above);

        for l in (0..n_layers).rev() {
            let st = &trace.steps[t][l];
            let layer = &params.layers[l];
            let mut da = vec![0.0; 4 * hs];
            let mut dc_prev = vec![0.0; hs];
            for j in 0..hs {
                let dh = dh_above[j] + carry_h[l][j];
                let (i, f, g, o) = (st.gates[j], st.gates[hs + j], st.gates[2 * hs + j], st.gates[3 * hs + j]);
                let tc = st.tanh_c[j];
                let dc = carry_c[l][j] + dh * o * (1.0 - tc * tc);
                da[j] = dc * g * i * (1.0 - i);
                da[hs + j] = dc * st.c_prev[j] * f * (1.0 - f);
                da[2 * hs + j] = dc * i * (1.0 - g * g);
                da[3 * hs + j] = dh * tc * o * (1.0 - o);
                dc_prev[j] = dc * f;
            }
            let gl = &mut grad.layers[l];
            gl.w_x.add_outer(&da, &st.x);
            gl.w_h.add_outer(&da, &st.h_prev);
            gl.bias.data.iter_mut().zip(&da).for_each(|(g, d)| *g += d);
            let mut dh_prev = vec![0.0; hs];
            layer.w_h.gemv_t(&da, &mut dh_prev);
            carry_h[l] = dh_prev;
            carry_c[l] = dc_prev;
            let mut dx = vec![0.0; st.x.len()];
            layer.w_x.gemv_t(&da, &mut dx);
            if let Some(m) = &trace.masks[t][l] {
                dx.iter_mut().zip(m).for_each(|(d, k)| *d *= k);
            }
            if l > 0 {
                dh_above = dx;
            } else {
                let row = grad.embed.row_mut(trace.inputs[t]);
                row.iter_mut().zip(&dx).for_each(|(g, d)| *g += d);
            }
        }
    }

    if cfg.condition_on == Conditioning::Nothing {
        return;
    }
    let mut dh0 = vec![0.0; hs];
    let layers_hit = match cfg.h0_target {
        H0Target::AllLayers => n_layers,
        _ => 1,
    };
    for l in 0..layers_hit {
        for j in 0..hs {
            dh0[j] += carry_h[l][j];
            if cfg.h0_target != H0Target::FirstLayerHidden {
                dh0[j] += carry_c[l][j];
            }
        }
    }
    let (class_grad, meaning_grad): (&[f64], &[f64]) = match cfg.condition_on {
        Conditioning::Meaning => (&[], &dh0),
        Conditioning::Class => (&dh0, &[]),
        Conditioning::MeaningAndClass => dh0.split_at(hs / 2),
        Conditioning::Nothing => unreachable!(),
    };
    if !meaning_grad.is_empty() {
        let v = ex.meaning.as_deref().unwrap();
        grad.cond_w.as_mut().unwrap().add_outer(meaning_grad, v);
        grad.cond_b.as_mut().unwrap().data.iter_mut().zip(meaning_grad).for_each(|(g, d)| *g += d);
    }
    if !class_grad.is_empty() {
        let row = grad.class_emb.as_mut().unwrap().row_mut(ex.class.unwrap());
        row.iter_mut().zip(class_grad).for_each(|(g, d)| *g += d);
    }
}

/// Per-position log₂-probabilities of the word and its end-of-string token
/// (evaluation mode, no dropout).
pub fn log_prob(params: &LmParameters, cfg: &LmConfig, ex: &Example) -> Result<Vec<f64>> {
    let trace = forward(params, cfg, ex, None)?;
    Ok(trace
        .log_probs
        .iter()
        .zip(&trace.targets)
        .map(|(lp, &y)| lp[y] / std::f64::consts::LN_2)
        .collect())
}

/// Full next-token distributions (probabilities) at every position.
pub fn distributions(params: &LmParameters, cfg: &LmConfig, ex: &Example) -> Result<Vec<Vec<f64>>> {
    let trace = forward(params, cfg, ex, None)?;
    Ok(trace.log_probs.iter().map(|lp| lp.iter().map(|l| l.exp()).collect()).collect())
}

/// Score every example. Per-position bits are kept when `positions` is set.
pub fn evaluate(params: &LmParameters, cfg: &LmConfig, examples: &[Example], positions: bool) -> Result<PerWordLoss> {
    evaluate_with(params, cfg, examples, positions, Execution::default())
}

pub fn evaluate_with(
    params: &LmParameters,
    cfg: &LmConfig,
    examples: &[Example],
    positions: bool,
    exec: Execution,
) -> Result<PerWordLoss> {
    params.check_shapes(cfg)?;
    let words = exec
        .map_slice(examples, |ex| {
            let lp = log_prob(params, cfg, ex)?;
            let bits: Vec<f64> = lp.iter().map(|l| -l).collect();
            Ok(WordLoss {
                sign: ex.sign,
                total_bits: bits.iter().sum(),
                token_count: ex.token_count(),
                positions: positions.then_some(bits),
            })
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    Ok(PerWordLoss::new(words))
}

/// Micro-averaged bits per phone of `params` on `examples`.
pub fn bits_per_phone(params: &LmParameters, cfg: &LmConfig, examples: &[Example]) -> Result<f64> {
    let loss = evaluate(params, cfg, examples, false)?;
    Ok(loss.total_bits() / loss.total_tokens() as f64)
}

/// Gradient of `scale · Σ nats` over `examples`, plus the summed nats.
///
/// Examples are split into a fixed number of contiguous chunks; chunk
/// gradients are reduced in order, so the result does not depend on the
/// thread schedule. `dropout_seed` keys the per-word dropout masks.
pub fn batch_gradient(
    params: &LmParameters,
    cfg: &LmConfig,
    examples: &[&Example],
    scale: f64,
    dropout_seed: Option<u64>,
    exec: Execution,
) -> Result<(LmParameters, f64)> {
    const CHUNKS: usize = 8;
    let chunk = examples.len().div_ceil(CHUNKS).max(1);
    let parts: Vec<&[&Example]> = examples.chunks(chunk).collect();
    let results = exec.map_slice(&parts, |part| -> Result<(LmParameters, f64)> {
        let mut g = params.zeros_like();
        let mut nats = 0.0;
        for ex in part.iter() {
            let mut drng = dropout_seed.map(|s| rng::rng_for(s, rng::stream::DROPOUT, ex.sign as u64));
            let trace = forward(params, cfg, ex, drng.as_mut())?;
            nats -= trace.log_probs.iter().zip(&trace.targets).map(|(lp, &y)| lp[y]).sum::<f64>();
            backward(params, cfg, ex, &trace, scale, &mut g);
        }
        Ok((g, nats))
    });
    let mut total = params.zeros_like();
    let mut nats = 0.0;
    for r in results {
        let (g, n) = r?;
        total.add_assign(&g);
        nats += n;
    }
    Ok((total, nats))
}

// ---------------------------------------------------------------------------
// Training

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainOptions {
    pub lr: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    /// Global gradient-norm clip.
    pub clip_norm: Option<f64>,
    pub init_scale: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            lr: 1e-2,
            batch_size: 64,
            max_epochs: 200,
            patience: 10,
            clip_norm: Some(5.0),
            init_scale: 1.0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    /// Mean training bits per phone during the epoch (before any update for epoch 0).
    pub train_bpp: f64,
    pub valid_bpp: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: LmParameters,
    pub curve: Vec<EpochStats>,
    pub best_epoch: usize,
    pub best_valid_bpp: f64,
}

struct Adam {
    m: LmParameters,
    v: LmParameters,
    t: i32,
}

impl Adam {
    fn new(params: &LmParameters) -> Self {
        Adam { m: params.zeros_like(), v: params.zeros_like(), t: 0 }
    }

    fn step(&mut self, params: &mut LmParameters, grad: &LmParameters, opt: &TrainOptions) {
        self.t += 1;
        let norm = grad.tensors().iter().flat_map(|(_, t)| t.data.iter()).map(|g| g * g).sum::<f64>().sqrt();
        let clip = match opt.clip_norm {
            Some(c) if norm > c => c / norm,
            _ => 1.0,
        };
        let bc1 = 1.0 - opt.beta1.powi(self.t);
        let bc2 = 1.0 - opt.beta2.powi(self.t);
        let grads = grad.tensors();
        for (((p, m), v), (_, g)) in params
            .tensors_mut()
            .into_iter()
            .zip(self.m.tensors_mut())
            .zip(self.v.tensors_mut())
            .zip(grads)
        {
            for i in 0..p.data.len() {
                let gi = g.data[i] * clip;
                m.data[i] = opt.beta1 * m.data[i] + (1.0 - opt.beta1) * gi;
                v.data[i] = opt.beta2 * v.data[i] + (1.0 - opt.beta2) * gi * gi;
                let mhat = m.data[i] / bc1;
                let vhat = v.data[i] / bc2;
                p.data[i] -= opt.lr * mhat / (vhat.sqrt() + opt.eps);
            }
        }
    }
}

/// Maximum-likelihood training with Adam and early stopping on validation
/// bits per phone. Returns the parameters with the best validation loss.
/// Fully determined by `seed`.
pub fn train(
    train_set: &[Example],
    valid_set: &[Example],
    cfg: &LmConfig,
    vocab: usize,
    n_classes: usize,
    opt: &TrainOptions,
    seed: u64,
) -> Result<TrainOutcome> {
    train_with(train_set, valid_set, cfg, vocab, n_classes, opt, seed, Execution::default())
}

#[allow(clippy::too_many_arguments)]
pub fn train_with(
    train_set: &[Example],
    valid_set: &[Example],
    cfg: &LmConfig,
    vocab: usize,
    n_classes: usize,
    opt: &TrainOptions,
    seed: u64,
    exec: Execution,
) -> Result<TrainOutcome> {
    if train_set.is_empty() {
        return Err(LmError::EmptySplit("training"));
    }
    if valid_set.is_empty() {
        return Err(LmError::EmptySplit("validation"));
    }
    if opt.batch_size == 0 {
        return Err(LmError::InvalidConfig("batch size must be positive".into()));
    }
    let mut params = LmParameters::init(cfg, vocab, n_classes, seed, opt.init_scale)?;
    let mut adam = Adam::new(&params);
    let valid_bpp = |p: &LmParameters| -> Result<f64> {
        let l = evaluate_with(p, cfg, valid_set, false, exec)?;
        Ok(l.total_bits() / l.total_tokens() as f64)
    };
    let initial_train = {
        let l = evaluate_with(&params, cfg, train_set, false, exec)?;
        l.total_bits() / l.total_tokens() as f64
    };
    let v0 = valid_bpp(&params)?;
    let mut curve = vec![EpochStats { epoch: 0, train_bpp: initial_train, valid_bpp: v0 }];
    let mut best = (params.clone(), 0usize, v0);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let ln2 = std::f64::consts::LN_2;

    for epoch in 1..=opt.max_epochs {
        use rand::seq::SliceRandom;
        order.shuffle(&mut rng::rng_for(seed, rng::stream::SHUFFLE, epoch as u64));
        let dropout_seed = (cfg.dropout > 0.0).then(|| rng::derive(seed, rng::stream::DROPOUT, epoch as u64));
        let mut epoch_bits = 0.0;
        let mut epoch_tokens = 0usize;
        for (b, batch_idx) in order.chunks(opt.batch_size).enumerate() {
            let batch: Vec<&Example> = batch_idx.iter().map(|&i| &train_set[i]).collect();
            let tokens: usize = batch.iter().map(|e| e.token_count()).sum();
            let (grad, nats) = batch_gradient(&params, cfg, &batch, 1.0 / tokens as f64, dropout_seed, exec)?;
            if !nats.is_finite() || !grad.all_finite() {
                return Err(LmError::Diverged { epoch, batch: b, loss: nats / ln2 / tokens as f64 });
            }
            adam.step(&mut params, &grad, opt);
            epoch_bits += nats / ln2;
            epoch_tokens += tokens;
        }
        if !params.all_finite() {
            return Err(LmError::Diverged { epoch, batch: usize::MAX, loss: f64::NAN });
        }
        let v = valid_bpp(&params)?;
        if !v.is_finite() {
            return Err(LmError::Diverged { epoch, batch: usize::MAX, loss: v });
        }
        curve.push(EpochStats { epoch, train_bpp: epoch_bits / epoch_tokens as f64, valid_bpp: v });
        log::debug!("epoch {epoch}: train {:.4} valid {v:.4}", epoch_bits / epoch_tokens as f64);
        if v < best.2 {
            best = (params.clone(), epoch, v);
        } else if epoch - best.1 >= opt.patience {
            break;
        }
    }
    Ok(TrainOutcome { params: best.0, curve, best_epoch: best.1, best_valid_bpp: best.2 })
}

// ---------------------------------------------------------------------------
// Gradient check

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TensorCheck {
    pub name: String,
    pub rel_error: f64,
    pub analytic_norm: f64,
}

/// Compare analytic gradients of the summed loss (nats) with central finite
/// differences for every parameter. `fault` adds a constant to the first
/// analytic gradient entry of the first LSTM input matrix, for exercising
/// the checker itself.
pub fn gradient_check(
    params: &LmParameters,
    cfg: &LmConfig,
    examples: &[Example],
    step: f64,
    fault: Option<f64>,
) -> Result<Vec<TensorCheck>> {
    let mut cfg_eval = cfg.clone();
    cfg_eval.dropout = 0.0;
    let refs: Vec<&Example> = examples.iter().collect();
    let (mut grad, _) = batch_gradient(params, &cfg_eval, &refs, 1.0, None, Execution::Sequential)?;
    if let Some(f) = fault {
        grad.layers[0].w_x.data[0] += f;
    }
    let loss = |p: &LmParameters| -> Result<f64> {
        let mut nats = 0.0;
        for ex in examples {
            nats -= log_prob(p, &cfg_eval, ex)?.iter().sum::<f64>() * std::f64::consts::LN_2;
        }
        Ok(nats)
    };
    let names: Vec<String> = params.tensors().into_iter().map(|(n, _)| n).collect();
    let mut work = params.clone();
    let mut out = Vec::new();
    for (ti, name) in names.into_iter().enumerate() {
        let len = work.tensors_mut()[ti].data.len();
        let mut diff2 = 0.0;
        let mut norm_a = 0.0;
        let mut norm_n = 0.0;
        let analytic = grad.tensors()[ti].1.data.clone();
        for i in 0..len {
            let orig = work.tensors_mut()[ti].data[i];
            work.tensors_mut()[ti].data[i] = orig + step;
            let up = loss(&work)?;
            work.tensors_mut()[ti].data[i] = orig - step;
            let down = loss(&work)?;
            work.tensors_mut()[ti].data[i] = orig;
            let numeric = (up - down) / (2.0 * step);
            diff2 += (analytic[i] - numeric).powi(2);
            norm_a += analytic[i].powi(2);
            norm_n += numeric.powi(2);
        }
        let denom = (norm_a.sqrt() + norm_n.sqrt()).max(1e-12);
        out.push(TensorCheck { name, rel_error: diff2.sqrt() / denom, analytic_norm: norm_a.sqrt() });
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Archive

pub const ARCHIVE_FORMAT: &str = "signform-lm";
pub const ARCHIVE_VERSION: u32 = 1;

/// Self-describing model file: configuration, inventory, classes and every
/// parameter tensor with its shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelArchive {
    pub format: String,
    pub version: u32,
    pub config: LmConfig,
    pub inventory: PhoneInventory,
    pub classes: Vec<String>,
    pub pca: Option<PcaModel>,
    pub params: LmParameters,
}

impl ModelArchive {
    pub fn new(config: LmConfig, lex: &Lexicon, pca: Option<PcaModel>, params: LmParameters) -> Self {
        ModelArchive {
            format: ARCHIVE_FORMAT.into(),
            version: ARCHIVE_VERSION,
            config,
            inventory: lex.inventory.clone(),
            classes: lex.classes.clone(),
            pca,
            params,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string(self).map_err(|e| LmError::Archive(e.to_string()))
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let a: ModelArchive = serde_json::from_str(s).map_err(|e| LmError::Archive(e.to_string()))?;
        if a.format != ARCHIVE_FORMAT || a.version != ARCHIVE_VERSION {
            return Err(LmError::Archive(format!("unsupported archive {} v{}", a.format, a.version)));
        }
        a.params.check_shapes(&a.config)?;
        Ok(a)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ex(sign: usize, form: &[u32], meaning: Option<Vec<f64>>, class: Option<usize>) -> Example {
        Example { sign, form: form.iter().map(|&p| PhoneId(p)).collect(), meaning, class }
    }

    fn cfg(cond: Conditioning) -> LmConfig {
        LmConfig { layers: 2, hidden_size: 8, phone_embed_size: 4, dropout: 0.0, pca_d: 3, condition_on: cond, h0_target: H0Target::FirstLayer }
    }

    fn toy_examples(cond: Conditioning) -> Vec<Example> {
        let m = |a: f64| cond.uses_meaning().then(|| vec![a, -0.5 * a, 0.3]);
        let c = |k: usize| cond.uses_class().then_some(k);
        vec![ex(0, &[1, 2, 3], m(0.7), c(0)), ex(1, &[4, 4], m(-1.2), c(1)), ex(2, &[2, 1, 4, 3], m(0.1), c(1))]
    }

    #[test]
    fn zero_conditioning_is_zero_vector() {
        let c = cfg(Conditioning::Nothing);
        let p = LmParameters::init(&c, 5, 2, 1, 1.0).unwrap();
        assert_eq!(condition_init(&c, &p, None, None).unwrap(), vec![0.0; 8]);
    }

    #[test]
    fn meaning_at_zero_gives_bias() {
        let c = cfg(Conditioning::Meaning);
        let mut p = LmParameters::init(&c, 5, 2, 1, 1.0).unwrap();
        p.cond_b.as_mut().unwrap().data = (0..8).map(|i| i as f64).collect();
        let h0 = condition_init(&c, &p, Some(&[0.0; 3]), None).unwrap();
        assert_eq!(h0, (0..8).map(|i| i as f64).collect::<Vec<_>>());
        assert!(matches!(condition_init(&c, &p, Some(&[0.0; 2]), None), Err(LmError::DimensionMismatch { .. })));
        assert!(matches!(condition_init(&c, &p, None, None), Err(LmError::MissingCondition(_))));
    }

    #[test]
    fn meaning_and_class_concatenates_halves() {
        let c = cfg(Conditioning::MeaningAndClass);
        let p = LmParameters::init(&c, 5, 2, 1, 1.0).unwrap();
        let h0 = condition_init(&c, &p, Some(&[0.0; 3]), Some(1)).unwrap();
        assert_eq!(&h0[..4], p.class_emb.as_ref().unwrap().row(1));
        assert_eq!(&h0[4..], &p.cond_b.as_ref().unwrap().data[..]);
        assert!(matches!(condition_init(&c, &p, Some(&[0.0; 3]), Some(5)), Err(LmError::UnknownClass(5))));
        let odd = LmConfig { hidden_size: 7, ..c };
        assert_eq!(LmParameters::init(&odd, 5, 2, 1, 1.0).unwrap_err(), LmError::OddHiddenSplit(7));
    }

    #[test]
    fn zero_model_is_uniform() {
        let c = cfg(Conditioning::Nothing);
        let p = LmParameters::init(&c, 16, 1, 1, 0.0).unwrap();
        let e = ex(0, &[3, 5, 7], None, None);
        let lp = log_prob(&p, &c, &e).unwrap();
        assert_eq!(lp.len(), 4);
        assert!(lp.iter().all(|&l| (l + 4.0).abs() < 1e-12));
        let loss = evaluate(&p, &c, &[e], true).unwrap();
        assert!((loss.words[0].total_bits - 16.0).abs() < 1e-12);
        assert_eq!(loss.words[0].token_count, 4);
    }

    #[test]
    fn distributions_normalise_and_positions_sum() {
        let c = cfg(Conditioning::MeaningAndClass);
        let p = LmParameters::init(&c, 5, 2, 3, 1.0).unwrap();
        for e in toy_examples(c.condition_on) {
            for d in distributions(&p, &c, &e).unwrap() {
                assert!((d.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            }
            let w = &evaluate(&p, &c, &[e], true).unwrap().words[0];
            assert!((w.positions.as_ref().unwrap().iter().sum::<f64>() - w.total_bits).abs() < 1e-9);
            assert!(w.positions.as_ref().unwrap().iter().all(|&b| b >= 0.0));
        }
    }

    #[test]
    fn predictions_are_causal() {
        let c = cfg(Conditioning::Meaning);
        let p = LmParameters::init(&c, 6, 1, 4, 1.0).unwrap();
        let m = Some(vec![0.2, 0.1, -0.4]);
        let short = log_prob(&p, &c, &ex(0, &[1, 2, 3], m.clone(), None)).unwrap();
        let long = log_prob(&p, &c, &ex(0, &[1, 2, 3, 5, 4], m.clone(), None)).unwrap();
        let other = log_prob(&p, &c, &ex(0, &[1, 2, 4], m, None)).unwrap();
        assert_eq!(&short[..3], &long[..3]);
        assert_eq!(&short[..2], &other[..2]);
    }

    #[test]
    fn out_of_inventory_phone_fails() {
        let c = cfg(Conditioning::Nothing);
        let p = LmParameters::init(&c, 5, 1, 1, 1.0).unwrap();
        assert_eq!(log_prob(&p, &c, &ex(0, &[1, 9], None, None)).unwrap_err(), LmError::OutOfInventory(9));
        assert_eq!(log_prob(&p, &c, &ex(0, &[0], None, None)).unwrap_err(), LmError::OutOfInventory(0));
    }

    #[test]
    fn gradients_match_finite_differences_in_every_mode() {
        for cond in Conditioning::ALL {
            for target in [H0Target::FirstLayer, H0Target::FirstLayerHidden, H0Target::AllLayers] {
                let c = LmConfig { h0_target: target, ..cfg(cond) };
                let p = LmParameters::init(&c, 5, 2, 11, 1.0).unwrap();
                let checks = gradient_check(&p, &c, &toy_examples(cond), 1e-4, None).unwrap();
                for t in checks {
                    assert!(t.rel_error <= 1e-4, "{cond} {target:?} {}: {}", t.name, t.rel_error);
                }
            }
        }
    }

    #[test]
    fn fault_injection_is_detected() {
        let c = cfg(Conditioning::Nothing);
        let p = LmParameters::init(&c, 5, 1, 11, 1.0).unwrap();
        let checks = gradient_check(&p, &c, &toy_examples(Conditioning::Nothing), 1e-4, Some(1e-3)).unwrap();
        assert!(checks.iter().any(|t| t.rel_error > 1e-4));
    }

    #[test]
    fn dropout_gradient_is_consistent_with_its_masks() {
        // with a fixed dropout seed the loss is a deterministic function of
        // the parameters, so finite differences still apply
        let c = LmConfig { dropout: 0.3, ..cfg(Conditioning::Meaning) };
        let p = LmParameters::init(&c, 5, 1, 2, 1.0).unwrap();
        let exs = toy_examples(Conditioning::Meaning);
        let refs: Vec<&Example> = exs.iter().collect();
        let (g, _) = batch_gradient(&p, &c, &refs, 1.0, Some(99), Execution::Sequential).unwrap();
        let loss = |q: &LmParameters| batch_gradient(q, &c, &refs, 1.0, Some(99), Execution::Sequential).unwrap().1;
        let mut q = p.clone();
        let i = 3;
        let orig = q.layers[0].w_x.data[i];
        q.layers[0].w_x.data[i] = orig + 1e-5;
        let up = loss(&q);
        q.layers[0].w_x.data[i] = orig - 1e-5;
        let down = loss(&q);
        let numeric = (up - down) / 2e-5;
        assert!((numeric - g.layers[0].w_x.data[i]).abs() < 1e-6 * (1.0 + numeric.abs()));
    }

    #[test]
    fn parallel_gradient_matches_sequential_bitwise() {
        let c = cfg(Conditioning::MeaningAndClass);
        let p = LmParameters::init(&c, 5, 2, 5, 1.0).unwrap();
        let exs: Vec<Example> = (0..40).map(|i| {
            let mut e = toy_examples(c.condition_on)[i % 3].clone();
            e.sign = i;
            e
        }).collect();
        let refs: Vec<&Example> = exs.iter().collect();
        let a = batch_gradient(&p, &c, &refs, 0.01, Some(3), Execution::Sequential).unwrap();
        let b = batch_gradient(&p, &c, &refs, 0.01, Some(3), Execution::Parallel).unwrap();
        assert_eq!(a.0.hash(), b.0.hash());
        assert_eq!(a.1, b.1);
    }

    fn repeated(n: usize) -> Vec<Example> {
        (0..n).map(|i| ex(i, &[1, 2, 3], None, None)).collect()
    }

    #[test]
    fn point_mass_is_learned() {
        let c = LmConfig { layers: 1, hidden_size: 16, phone_embed_size: 8, ..cfg(Conditioning::Nothing) };
        let opt = TrainOptions { lr: 0.05, batch_size: 16, max_epochs: 300, patience: 300, ..Default::default() };
        let out = train(&repeated(64), &repeated(8), &c, 5, 1, &opt, 7).unwrap();
        assert!(out.best_valid_bpp < 0.01, "{}", out.best_valid_bpp);
    }

    #[test]
    fn epoch_zero_is_near_uniform_with_tiny_init() {
        let c = LmConfig { layers: 1, hidden_size: 8, phone_embed_size: 4, ..cfg(Conditioning::Nothing) };
        let opt = TrainOptions { max_epochs: 1, init_scale: 1e-4, ..Default::default() };
        let out = train(&repeated(4), &repeated(4), &c, 8, 1, &opt, 1).unwrap();
        assert!((out.curve[0].valid_bpp - 3.0).abs() < 1e-3);
    }

    #[test]
    fn training_is_deterministic() {
        let c = LmConfig { dropout: 0.2, ..cfg(Conditioning::Meaning) };
        let exs: Vec<Example> = (0..30).map(|i| {
            let mut e = toy_examples(Conditioning::Meaning)[i % 3].clone();
            e.sign = i;
            e
        }).collect();
        let opt = TrainOptions { max_epochs: 5, batch_size: 8, ..Default::default() };
        let a = train(&exs[..24], &exs[24..], &c, 5, 1, &opt, 42).unwrap();
        let b = train(&exs[..24], &exs[24..], &c, 5, 1, &opt, 42).unwrap();
        let s = train_with(&exs[..24], &exs[24..], &c, 5, 1, &opt, 42, Execution::Sequential).unwrap();
        assert_eq!(a.params.hash(), b.params.hash());
        assert_eq!(a.params.hash(), s.params.hash());
        assert_eq!(a.curve, b.curve);
    }

    #[test]
    fn empty_splits_fail() {
        let c = cfg(Conditioning::Nothing);
        let opt = TrainOptions::default();
        assert_eq!(train(&[], &repeated(1), &c, 5, 1, &opt, 0).unwrap_err(), LmError::EmptySplit("training"));
        assert_eq!(train(&repeated(1), &[], &c, 5, 1, &opt, 0).unwrap_err(), LmError::EmptySplit("validation"));
    }

    #[test]
    fn divergence_is_reported() {
        let c = LmConfig { layers: 1, ..cfg(Conditioning::Nothing) };
        let opt = TrainOptions { lr: f64::INFINITY, clip_norm: None, max_epochs: 3, ..Default::default() };
        let err = train(&repeated(8), &repeated(2), &c, 5, 1, &opt, 0).unwrap_err();
        assert!(matches!(err, LmError::Diverged { .. }), "{err:?}");
    }

    #[test]
    fn archive_round_trips() {
        let tsv = "lemma\tipa\tpos\na\tkat\tN\nb\ttak\tV\n";
        let (lex, _) = crate::lexicon::parse_lexicon("x", tsv.as_bytes(), &Default::default(), Default::default()).unwrap();
        let c = cfg(Conditioning::Class);
        let p = LmParameters::init(&c, lex.inventory.len(), 2, 3, 1.0).unwrap();
        let a = ModelArchive::new(c, &lex, None, p);
        let back = ModelArchive::from_json(&a.to_json().unwrap()).unwrap();
        assert_eq!(a, back);
        assert_eq!(a.params.hash(), back.params.hash());
        let bad = a.to_json().unwrap().replace("\"version\":1", "\"version\":9");
        assert!(ModelArchive::from_json(&bad).is_err());
    }
}
