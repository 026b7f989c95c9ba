//! Four-layer policy network with hand-written reverse mode.
//!
//! The network maps a 5-value neighborhood encoding to a distribution over
//! the two actions `[defect, cooperate]`:
//!
//! ```text
//! h1 = relu(W1 x + b1)
//! h2 = relu(W2 h1 + b2)
//! h3 = relu(W3 h2 + b3)
//! z  = W4 h3 + b4
//! pi = softmax(z)
//! ```
//!
//! Weight matrices are stored row-major with shape `fan_out x fan_in`.

use std::fs;
use std::path::Path;

use rand::Rng;

use crate::error::{Error, Result};
use crate::lattice::{neighborhood_code, Coord, StrategyGrid};

pub const INPUT_WIDTH: usize = 5;
pub const OUTPUT_WIDTH: usize = 2;
pub const DEFAULT_HIDDEN: [usize; 3] = [64, 64, 64];

/// Probabilities are clamped into `[PROB_FLOOR, 1 - PROB_FLOOR]` before any
/// log or ratio is taken.
pub const PROB_FLOOR: f64 = 1e-7;

#[inline]
pub fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_FLOOR, 1.0 - PROB_FLOOR)
}

/// Neighborhood as network input: `[self, N, S, W, E]`, 1.0 for cooperators.
pub fn encode_state(grid: &StrategyGrid, idx: Coord) -> [f64; INPUT_WIDTH] {
    code_to_input(neighborhood_code(grid, idx))
}

/// Expands a 5-bit neighborhood code (bit 4 = self, bits 3..0 = N, S, W, E).
#[inline]
pub fn code_to_input(code: u8) -> [f64; INPUT_WIDTH] {
    std::array::from_fn(|i| f64::from((code >> (4 - i)) & 1))
}

/// One fully connected layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub fan_in: usize,
    pub fan_out: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Dense {
            fan_in,
            fan_out,
            weights: vec![0.0; fan_in * fan_out],
            bias: vec![0.0; fan_out],
        }
    }

    fn apply(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend(
            self.weights
                .chunks_exact(self.fan_in)
                .zip(&self.bias)
                .map(|(row, b)| row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + b),
        );
    }
}

/// Weights and biases of the policy network.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    layers: [Dense; 4],
}

impl MlpParams {
    pub fn zeros(hidden: [usize; 3]) -> Self {
        let w = widths_of(hidden);
        MlpParams {
            layers: std::array::from_fn(|k| Dense::zeros(w[k], w[k + 1])),
        }
    }

    /// Fan-balanced uniform initialization, `U(-a, a)` with
    /// `a = sqrt(6 / (fan_in + fan_out))`; biases start at zero.
    pub fn glorot<R: Rng + ?Sized>(hidden: [usize; 3], rng: &mut R) -> Self {
        let mut p = MlpParams::zeros(hidden);
        for layer in &mut p.layers {
            let a = (6.0 / (layer.fan_in + layer.fan_out) as f64).sqrt();
            for w in &mut layer.weights {
                *w = rng.random_range(-a..=a);
            }
        }
        p
    }

    pub fn zeros_like(&self) -> Self {
        MlpParams::zeros(self.hidden())
    }

    pub fn hidden(&self) -> [usize; 3] {
        [self.layers[0].fan_out, self.layers[1].fan_out, self.layers[2].fan_out]
    }

    pub fn widths(&self) -> [usize; 5] {
        widths_of(self.hidden())
    }

    pub fn layers(&self) -> &[Dense; 4] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense; 4] {
        &mut self.layers
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    /// Parameter blocks in declaration order `W1, b1, ..., W4, b4`.
    pub fn blocks(&self) -> impl Iterator<Item = &[f64]> {
        self.layers
            .iter()
            .flat_map(|l| [l.weights.as_slice(), l.bias.as_slice()])
    }

    pub fn blocks_mut(&mut self) -> impl Iterator<Item = &mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|l| [l.weights.as_mut_slice(), l.bias.as_mut_slice()])
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.blocks().flatten().copied().collect()
    }

    pub fn from_flat(hidden: [usize; 3], flat: &[f64]) -> Result<Self> {
        let mut p = MlpParams::zeros(hidden);
        if flat.len() != p.param_count() {
            return Err(Error::Invariant(format!(
                "expected {} parameters, got {}",
                p.param_count(),
                flat.len()
            )));
        }
        let mut rest = flat;
        for block in p.blocks_mut() {
            let (head, tail) = rest.split_at(block.len());
            block.copy_from_slice(head);
            rest = tail;
        }
        Ok(p)
    }

    pub fn is_finite(&self) -> bool {
        self.blocks().flatten().all(|v| v.is_finite())
    }

    pub fn same_shape(&self, other: &MlpParams) -> bool {
        self.widths() == other.widths()
    }

    pub fn fill_zero(&mut self) {
        self.blocks_mut().for_each(|b| b.fill(0.0));
    }

    /// `self += other`.
    pub fn accumulate(&mut self, other: &MlpParams) -> Result<()> {
        if !self.same_shape(other) {
            return Err(Error::Invariant("gradient shape mismatch".into()));
        }
        for (a, b) in self.blocks_mut().zip(other.blocks()) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
        Ok(())
    }
}

fn widths_of(hidden: [usize; 3]) -> [usize; 5] {
    [INPUT_WIDTH, hidden[0], hidden[1], hidden[2], OUTPUT_WIDTH]
}

/// Intermediates of one forward pass, kept for [`backward`].
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardCache {
    pub input: [f64; INPUT_WIDTH],
    /// Pre-activations of the three hidden layers.
    pub pre: [Vec<f64>; 3],
    /// Post-ReLU activations of the three hidden layers.
    pub hidden: [Vec<f64>; 3],
    pub logits: [f64; OUTPUT_WIDTH],
    /// `[pi(defect), pi(cooperate)]`.
    pub probs: [f64; OUTPUT_WIDTH],
}

impl ForwardCache {
    /// Probability of cooperating.
    #[inline]
    pub fn p_cooperate(&self) -> f64 {
        self.probs[1]
    }
}

pub fn softmax2(z: [f64; 2]) -> [f64; 2] {
    let m = z[0].max(z[1]);
    let e0 = (z[0] - m).exp();
    let e1 = (z[1] - m).exp();
    let s = e0 + e1;
    [e0 / s, e1 / s]
}

pub fn forward(params: &MlpParams, input: &[f64]) -> Result<ForwardCache> {
    let input: [f64; INPUT_WIDTH] = input.try_into().map_err(|_| {
        Error::Invariant(format!(
            "policy input must have {INPUT_WIDTH} values, got {}",
            input.len()
        ))
    })?;
    if let Some(v) = input.iter().find(|v| !v.is_finite()) {
        return Err(Error::NumericInput(format!("policy input contains {v}")));
    }
    let mut pre: [Vec<f64>; 3] = Default::default();
    let mut hidden: [Vec<f64>; 3] = Default::default();
    for k in 0..3 {
        let x: &[f64] = if k == 0 { &input } else { &hidden[k - 1] };
        let mut z = Vec::new();
        params.layers[k].apply(x, &mut z);
        hidden[k] = z.iter().map(|&v| v.max(0.0)).collect();
        pre[k] = z;
    }
    let mut out = Vec::with_capacity(OUTPUT_WIDTH);
    params.layers[3].apply(&hidden[2], &mut out);
    let logits = [out[0], out[1]];
    Ok(ForwardCache {
        input,
        pre,
        hidden,
        logits,
        probs: softmax2(logits),
    })
}

/// Accumulates `dLoss/dtheta` into `grads` given `dLoss/dlogits`.
/// The ReLU derivative at exactly zero is taken as zero.
pub fn backward(
    params: &MlpParams,
    cache: &ForwardCache,
    dlogits: [f64; OUTPUT_WIDTH],
    grads: &mut MlpParams,
) -> Result<()> {
    if !params.same_shape(grads) || cache.hidden.iter().zip(params.hidden()).any(|(h, w)| h.len() != w) {
        return Err(Error::Invariant("backward called with mismatched shapes".into()));
    }
    if dlogits == [0.0, 0.0] {
        return Ok(());
    }
    let mut delta: Vec<f64> = dlogits.to_vec();
    for k in (0..4).rev() {
        let x: &[f64] = if k == 0 { &cache.input } else { &cache.hidden[k - 1] };
        let layer = &params.layers[k];
        let g = &mut grads.layers[k];
        for (o, &d) in delta.iter().enumerate() {
            if d == 0.0 {
                continue;
            }
            g.bias[o] += d;
            let row = &mut g.weights[o * layer.fan_in..(o + 1) * layer.fan_in];
            row.iter_mut().zip(x).for_each(|(w, &xi)| *w += d * xi);
        }
        if k == 0 {
            break;
        }
        let pre = &cache.pre[k - 1];
        delta = (0..layer.fan_in)
            .map(|i| {
                if pre[i] > 0.0 {
                    delta
                        .iter()
                        .enumerate()
                        .map(|(o, &d)| d * layer.weights[o * layer.fan_in + i])
                        .sum()
                } else {
                    0.0
                }
            })
            .collect();
    }
    Ok(())
}

/// `KL(Bern(p) || Bern(q))` with both probabilities clamped first.
pub fn kl_two_point(p: f64, q: f64) -> f64 {
    let (p, q) = (clamp_prob(p), clamp_prob(q));
    // Rounding can leave a tiny negative value when p is close to q.
    (p * (p / q).ln() + (1.0 - p) * ((1.0 - p) / (1.0 - q)).ln()).max(0.0)
}

/// `d KL(Bern(p) || Bern(q)) / dp`, zero where the clamp is active.
pub fn kl_two_point_dp(p: f64, q: f64) -> f64 {
    if p != clamp_prob(p) {
        return 0.0;
    }
    let q = clamp_prob(q);
    (p / q).ln() - ((1.0 - p) / (1.0 - q)).ln()
}

/// Adam moment estimates for every parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: MlpParams,
    pub v: MlpParams,
    pub t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(like: &MlpParams) -> Self {
        AdamState {
            m: like.zeros_like(),
            v: like.zeros_like(),
            t: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One bias-corrected Adam update. Non-finite gradients leave both the
/// parameters and the state untouched.
pub fn adam_step(params: &mut MlpParams, grads: &MlpParams, state: &mut AdamState, lr: f64) -> Result<()> {
    if !params.same_shape(grads) || !params.same_shape(&state.m) {
        return Err(Error::Invariant("adam_step called with mismatched shapes".into()));
    }
    if !grads.is_finite() {
        return Err(Error::Numeric("non-finite gradient passed to adam_step".into()));
    }
    state.t += 1;
    let (b1, b2, eps) = (state.beta1, state.beta2, state.eps);
    let c1 = 1.0 - b1.powi(state.t as i32);
    let c2 = 1.0 - b2.powi(state.t as i32);
    let blocks = params
        .blocks_mut()
        .zip(grads.blocks())
        .zip(state.m.blocks_mut().zip(state.v.blocks_mut()));
    for ((p, g), (m, v)) in blocks {
        for i in 0..p.len() {
            m[i] = b1 * m[i] + (1.0 - b1) * g[i];
            v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
            let m_hat = m[i] / c1;
            let v_hat = v[i] / c2;
            p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

/// Step decay: the rate halves every `halve_period` epochs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LrSchedule {
    pub base_alpha: f64,
    pub halve_period: usize,
}

impl LrSchedule {
    pub fn effective_lr(&self, epoch: usize) -> f64 {
        let halvings = (epoch / self.halve_period.max(1)).min(i32::MAX as usize) as i32;
        self.base_alpha * 0.5f64.powi(halvings)
    }
}

pub fn effective_lr(schedule: &LrSchedule, epoch: usize) -> f64 {
    schedule.effective_lr(epoch)
}

const CHECKPOINT_MAGIC: &[u8; 4] = b"PGGM";
const CHECKPOINT_VERSION: u32 = 1;

/// Checkpoint bytes: a 16-byte header then every parameter as little-endian
/// `f64` in the order `W1, b1, ..., W4, b4`.
///
/// Header layout: magic `PGGM`, version `u32`, the three hidden widths as
/// `u16`, and two reserved zero bytes. Input and output widths are fixed at
/// 5 and 2. All integers are little-endian.
pub fn checkpoint_bytes(params: &MlpParams) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(16 + 8 * params.param_count());
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    for h in params.hidden() {
        let h = u16::try_from(h)
            .map_err(|_| Error::Invariant(format!("hidden width {h} does not fit the checkpoint header")))?;
        out.extend_from_slice(&h.to_le_bytes());
    }
    out.extend_from_slice(&[0, 0]);
    for v in params.blocks().flatten() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn params_from_checkpoint(bytes: &[u8]) -> std::result::Result<MlpParams, String> {
    if bytes.len() < 16 || &bytes[..4] != CHECKPOINT_MAGIC {
        return Err("missing PGGM header".into());
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(format!("unsupported checkpoint version {version}"));
    }
    let h = |i: usize| u16::from_le_bytes([bytes[8 + 2 * i], bytes[9 + 2 * i]]) as usize;
    let hidden = [h(0), h(1), h(2)];
    if hidden.contains(&0) {
        return Err("hidden widths must be positive".into());
    }
    let payload = &bytes[16..];
    let expect = MlpParams::zeros(hidden).param_count() * 8;
    if payload.len() != expect {
        return Err(format!("expected {expect} payload bytes, found {}", payload.len()));
    }
    let flat: Vec<f64> = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    MlpParams::from_flat(hidden, &flat).map_err(|e| e.to_string())
}

pub fn save_checkpoint(params: &MlpParams, path: &Path) -> Result<()> {
    fs::write(path, checkpoint_bytes(params)?).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<MlpParams> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    params_from_checkpoint(&bytes).map_err(|message| Error::Format {
        path: path.to_path_buf(),
        message,
    })
}
