//! Transformer building blocks: linear / MLP / multi-head attention layers,
//! pre-norm encoder and decoder stacks, and weight initialization.
//!
//! Weight structs own plain [`Tensor`]s and implement [`ParamTree`] so the
//! optimizer and checkpointing can walk every parameter by name in a stable
//! order. For a forward pass the weights are lifted onto a [`GradTape`]
//! exactly once via a [`Lifter`], which records the same order, so gradients
//! extracted after `backward` align one-to-one with the tree walk.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::tape::{GradTape, Gradients, Var};
use crate::tensor::Tensor;

/// Stable named traversal over every learnable tensor.
pub trait ParamTree {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor));
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor));

    fn named_params(&self) -> Vec<(String, Tensor)> {
        let mut out = Vec::new();
        self.visit("", &mut |name, t| out.push((name.to_string(), t.clone())));
        out
    }

    fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit("", &mut |_, t| n += t.len());
        n
    }
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

/// Lifts parameters onto a tape, recording (name, var) in traversal order.
pub struct Lifter<'t> {
    tape: &'t GradTape,
    pub entries: Vec<(String, Var<'t>)>,
}

impl<'t> Lifter<'t> {
    pub fn new(tape: &'t GradTape) -> Self {
        Self {
            tape,
            entries: Vec::new(),
        }
    }

    pub fn lift(&mut self, name: &str, t: &Tensor) -> Var<'t> {
        let v = self.tape.leaf(t.clone());
        self.entries.push((name.to_string(), v.clone()));
        v
    }

    /// Gradients for every lifted parameter, zeros where unused, in lift order.
    pub fn grads(&self, grads: &Gradients) -> Vec<Tensor> {
        self.entries
            .iter()
            .map(|(_, v)| grads.get_or_zeros(v))
            .collect()
    }
}

pub fn xavier_uniform(rng: &mut ChaCha8Rng, fan_in: usize, fan_out: usize) -> Tensor {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Tensor::from_vec(
        &[fan_in, fan_out],
        (0..fan_in * fan_out)
            .map(|_| rng.gen_range(-limit..limit))
            .collect(),
    )
}

pub fn normal_init(rng: &mut ChaCha8Rng, shape: &[usize], std: f64) -> Tensor {
    use rand_distr::{Distribution, Normal};
    let dist = Normal::new(0.0, std).expect("normal std");
    Tensor::from_vec(
        shape,
        (0..shape.iter().product())
            .map(|_| dist.sample(rng))
            .collect(),
    )
}

// ---------------------------------------------------------------------------
// Linear / MLP
// ---------------------------------------------------------------------------

#[derive(Clone, Debug)]
pub struct LinearW {
    pub w: Tensor,
    pub b: Tensor,
}

impl LinearW {
    pub fn init(rng: &mut ChaCha8Rng, fan_in: usize, fan_out: usize) -> Self {
        Self {
            w: xavier_uniform(rng, fan_in, fan_out),
            b: Tensor::zeros(&[fan_out]),
        }
    }

    pub fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Self {
            w: Tensor::zeros(&[fan_in, fan_out]),
            b: Tensor::zeros(&[fan_out]),
        }
    }

    pub fn lift<'t>(&self, l: &mut Lifter<'t>, prefix: &str) -> LinearV<'t> {
        LinearV {
            w: l.lift(&join(prefix, "w"), &self.w),
            b: l.lift(&join(prefix, "b"), &self.b),
        }
    }
}

impl ParamTree for LinearW {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        f(&join(prefix, "w"), &self.w);
        f(&join(prefix, "b"), &self.b);
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        f(&join(prefix, "w"), &mut self.w);
        f(&join(prefix, "b"), &mut self.b);
    }
}

pub struct LinearV<'t> {
    pub w: Var<'t>,
    pub b: Var<'t>,
}

impl<'t> LinearV<'t> {
    pub fn forward(&self, x: &Var<'t>) -> Var<'t> {
        x.matmul(&self.w).add_row(&self.b)
    }
}

/// Two linear layers with a GELU in between.
#[derive(Clone, Debug)]
pub struct MlpW {
    pub l1: LinearW,
    pub l2: LinearW,
}

impl MlpW {
    pub fn init(rng: &mut ChaCha8Rng, fan_in: usize, hidden: usize, fan_out: usize) -> Self {
        Self {
            l1: LinearW::init(rng, fan_in, hidden),
            l2: LinearW::init(rng, hidden, fan_out),
        }
    }

    pub fn lift<'t>(&self, l: &mut Lifter<'t>, prefix: &str) -> MlpV<'t> {
        MlpV {
            l1: self.l1.lift(l, &join(prefix, "l1")),
            l2: self.l2.lift(l, &join(prefix, "l2")),
        }
    }

    /// Sets every weight and bias to zero (identity-at-init conditioning).
    pub fn zero_out(&mut self) {
        self.l1 = LinearW::zeros(self.l1.w.shape()[0], self.l1.w.shape()[1]);
        self.l2 = LinearW::zeros(self.l2.w.shape()[0], self.l2.w.shape()[1]);
    }
}

impl ParamTree for MlpW {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        self.l1.visit(&join(prefix, "l1"), f);
        self.l2.visit(&join(prefix, "l2"), f);
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        self.l1.visit_mut(&join(prefix, "l1"), f);
        self.l2.visit_mut(&join(prefix, "l2"), f);
    }
}

pub struct MlpV<'t> {
    pub l1: LinearV<'t>,
    pub l2: LinearV<'t>,
}

impl<'t> MlpV<'t> {
    pub fn forward(&self, x: &Var<'t>) -> Var<'t> {
        self.l2.forward(&self.l1.forward(x).gelu())
    }
}

// ---------------------------------------------------------------------------
// Layer norm
// ---------------------------------------------------------------------------

#[derive(Clone, Debug)]
pub struct LayerNormW {
    pub gain: Tensor,
    pub bias: Tensor,
}

impl LayerNormW {
    pub fn init(d: usize) -> Self {
        Self {
            gain: Tensor::full(&[d], 1.0),
            bias: Tensor::zeros(&[d]),
        }
    }

    pub fn lift<'t>(&self, l: &mut Lifter<'t>, prefix: &str) -> LayerNormV<'t> {
        LayerNormV {
            gain: l.lift(&join(prefix, "gain"), &self.gain),
            bias: l.lift(&join(prefix, "bias"), &self.bias),
        }
    }
}

impl ParamTree for LayerNormW {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        f(&join(prefix, "gain"), &self.gain);
        f(&join(prefix, "bias"), &self.bias);
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        f(&join(prefix, "gain"), &mut self.gain);
        f(&join(prefix, "bias"), &mut self.bias);
    }
}

pub struct LayerNormV<'t> {
    pub gain: Var<'t>,
    pub bias: Var<'t>,
}

pub const LN_EPS: f64 = 1e-5;

impl<'t> LayerNormV<'t> {
    pub fn forward(&self, x: &Var<'t>) -> Var<'t> {
        x.layer_norm(&self.gain, &self.bias, LN_EPS)
    }
}

// ---------------------------------------------------------------------------
// Multi-head attention
// ---------------------------------------------------------------------------

#[derive(Clone, Debug)]
pub struct MhaW {
    pub heads: usize,
    pub wq: LinearW,
    pub wk: LinearW,
    pub wv: LinearW,
    pub wo: LinearW,
}

impl MhaW {
    pub fn init(rng: &mut ChaCha8Rng, d: usize, heads: usize) -> Self {
        assert_eq!(d % heads, 0, "d_model must divide by n_heads");
        Self {
            heads,
            wq: LinearW::init(rng, d, d),
            wk: LinearW::init(rng, d, d),
            wv: LinearW::init(rng, d, d),
            wo: LinearW::init(rng, d, d),
        }
    }

    /// Init with a zeroed output projection (residual-identity start).
    pub fn init_zero_out(rng: &mut ChaCha8Rng, d: usize, heads: usize) -> Self {
        let mut m = Self::init(rng, d, heads);
        m.wo = LinearW::zeros(d, d);
        m
    }

    pub fn lift<'t>(&self, l: &mut Lifter<'t>, prefix: &str) -> MhaV<'t> {
        MhaV {
            heads: self.heads,
            wq: self.wq.lift(l, &join(prefix, "wq")),
            wk: self.wk.lift(l, &join(prefix, "wk")),
            wv: self.wv.lift(l, &join(prefix, "wv")),
            wo: self.wo.lift(l, &join(prefix, "wo")),
        }
    }
}

impl ParamTree for MhaW {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        self.wq.visit(&join(prefix, "wq"), f);
        self.wk.visit(&join(prefix, "wk"), f);
        self.wv.visit(&join(prefix, "wv"), f);
        self.wo.visit(&join(prefix, "wo"), f);
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        self.wq.visit_mut(&join(prefix, "wq"), f);
        self.wk.visit_mut(&join(prefix, "wk"), f);
        self.wv.visit_mut(&join(prefix, "wv"), f);
        self.wo.visit_mut(&join(prefix, "wo"), f);
    }
}

pub struct MhaV<'t> {
    pub heads: usize,
    pub wq: LinearV<'t>,
    pub wk: LinearV<'t>,
    pub wv: LinearV<'t>,
    pub wo: LinearV<'t>,
}

impl<'t> MhaV<'t> {
    /// Scaled dot-product attention over batched sequences.
    ///
    /// `q_in` is [B, nq, d], `kv_in` is [B, nk, d], `key_mask` is [B * nk].
    /// Masked keys are excluded before the softmax and receive weight
    /// exactly 0, so a fully masked key row never contributes.
    pub fn forward(&self, q_in: &Var<'t>, kv_in: &Var<'t>, key_mask: &[bool]) -> Var<'t> {
        let (b, nq, d) = (q_in.shape()[0], q_in.shape()[1], q_in.shape()[2]);
        let nk = kv_in.shape()[1];
        assert_eq!(key_mask.len(), b * nk, "key mask length");
        let h = self.heads;
        let dh = d / h;

        let split = |x: &Var<'t>, n: usize| {
            x.reshape(&[b, n, h, dh])
                .transpose(&[0, 2, 1, 3])
                .reshape(&[b * h, n, dh])
        };
        let q = split(&self.wq.forward(q_in), nq);
        let k = split(&self.wk.forward(kv_in), nk);
        let v = split(&self.wv.forward(kv_in), nk);

        let scores = q.matmul_nt(&k).scale(1.0 / (dh as f64).sqrt());
        let attn = scores.attn_softmax(key_mask, h);
        let ctx = attn
            .matmul(&v)
            .reshape(&[b, h, nq, dh])
            .transpose(&[0, 2, 1, 3])
            .reshape(&[b, nq, d]);
        self.wo.forward(&ctx)
    }
}

// ---------------------------------------------------------------------------
// Encoder / decoder stacks (pre-norm, GELU feed-forward of width 4 * d_model)
// ---------------------------------------------------------------------------

#[derive(Clone, Debug)]
pub struct EncoderLayerW {
    pub ln1: LayerNormW,
    pub attn: MhaW,
    pub ln2: LayerNormW,
    pub ff1: LinearW,
    pub ff2: LinearW,
}

impl EncoderLayerW {
    pub fn init(rng: &mut ChaCha8Rng, d: usize, heads: usize) -> Self {
        Self {
            ln1: LayerNormW::init(d),
            attn: MhaW::init(rng, d, heads),
            ln2: LayerNormW::init(d),
            ff1: LinearW::init(rng, d, 4 * d),
            ff2: LinearW::init(rng, 4 * d, d),
        }
    }

    pub fn lift<'t>(&self, l: &mut Lifter<'t>, prefix: &str) -> EncoderLayerV<'t> {
        EncoderLayerV {
            ln1: self.ln1.lift(l, &join(prefix, "ln1")),
            attn: self.attn.lift(l, &join(prefix, "attn")),
            ln2: self.ln2.lift(l, &join(prefix, "ln2")),
            ff1: self.ff1.lift(l, &join(prefix, "ff1")),
            ff2: self.ff2.lift(l, &join(prefix, "ff2")),
        }
    }
}

impl ParamTree for EncoderLayerW {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        self.ln1.visit(&join(prefix, "ln1"), f);
        self.attn.visit(&join(prefix, "attn"), f);
        self.ln2.visit(&join(prefix, "ln2"), f);
        self.ff1.visit(&join(prefix, "ff1"), f);
        self.ff2.visit(&join(prefix, "ff2"), f);
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        self.ln1.visit_mut(&join(prefix, "ln1"), f);
        self.attn.visit_mut(&join(prefix, "attn"), f);
        self.ln2.visit_mut(&join(prefix, "ln2"), f);
        self.ff1.visit_mut(&join(prefix, "ff1"), f);
        self.ff2.visit_mut(&join(prefix, "ff2"), f);
    }
}

pub struct EncoderLayerV<'t> {
    pub ln1: LayerNormV<'t>,
    pub attn: MhaV<'t>,
    pub ln2: LayerNormV<'t>,
    pub ff1: LinearV<'t>,
    pub ff2: LinearV<'t>,
}

impl<'t> EncoderLayerV<'t> {
    pub fn forward(&self, x: &Var<'t>, key_mask: &[bool]) -> Var<'t> {
        let normed = self.ln1.forward(x);
        let h = x.add(&self.attn.forward(&normed, &normed, key_mask));
        let ff = self.ff2.forward(&self.ff1.forward(&self.ln2.forward(&h)).gelu());
        h.add(&ff)
    }
}

#[derive(Clone, Debug)]
pub struct EncoderStackW {
    pub layers: Vec<EncoderLayerW>,
    pub final_ln: LayerNormW,
}

impl EncoderStackW {
    pub fn init(rng: &mut ChaCha8Rng, d: usize, heads: usize, n_layers: usize) -> Self {
        Self {
            layers: (0..n_layers).map(|_| EncoderLayerW::init(rng, d, heads)).collect(),
            final_ln: LayerNormW::init(d),
        }
    }

    pub fn lift<'t>(&self, l: &mut Lifter<'t>, prefix: &str) -> EncoderStackV<'t> {
        EncoderStackV {
            layers: self
                .layers
                .iter()
                .enumerate()
                .map(|(i, layer)| layer.lift(l, &join(prefix, &format!("layer{i}"))))
                .collect(),
            final_ln: self.final_ln.lift(l, &join(prefix, "final_ln")),
        }
    }
}

impl ParamTree for EncoderStackW {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        for (i, layer) in self.layers.iter().enumerate() {
            layer.visit(&join(prefix, &format!("layer{i}")), f);
        }
        self.final_ln.visit(&join(prefix, "final_ln"), f);
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        for (i, layer) in self.layers.iter_mut().enumerate() {
            layer.visit_mut(&join(prefix, &format!("layer{i}")), f);
        }
        self.final_ln.visit_mut(&join(prefix, "final_ln"), f);
    }
}

pub struct EncoderStackV<'t> {
    pub layers: Vec<EncoderLayerV<'t>>,
    pub final_ln: LayerNormV<'t>,
}

impl<'t> EncoderStackV<'t> {
    pub fn forward(&self, x: &Var<'t>, key_mask: &[bool]) -> Var<'t> {
        let mut h = x.clone();
        for layer in &self.layers {
            h = layer.forward(&h, key_mask);
        }
        self.final_ln.forward(&h)
    }
}

#[derive(Clone, Debug)]
pub struct DecoderLayerW {
    pub ln_self: LayerNormW,
    pub self_attn: MhaW,
    pub ln_cross: LayerNormW,
    pub cross_attn: MhaW,
    pub ln_ff: LayerNormW,
    pub ff1: LinearW,
    pub ff2: LinearW,
}

impl DecoderLayerW {
    pub fn init(rng: &mut ChaCha8Rng, d: usize, heads: usize) -> Self {
        Self {
            ln_self: LayerNormW::init(d),
            self_attn: MhaW::init(rng, d, heads),
            ln_cross: LayerNormW::init(d),
            cross_attn: MhaW::init(rng, d, heads),
            ln_ff: LayerNormW::init(d),
            ff1: LinearW::init(rng, d, 4 * d),
            ff2: LinearW::init(rng, 4 * d, d),
        }
    }

    pub fn lift<'t>(&self, l: &mut Lifter<'t>, prefix: &str) -> DecoderLayerV<'t> {
        DecoderLayerV {
            ln_self: self.ln_self.lift(l, &join(prefix, "ln_self")),
            self_attn: self.self_attn.lift(l, &join(prefix, "self_attn")),
            ln_cross: self.ln_cross.lift(l, &join(prefix, "ln_cross")),
            cross_attn: self.cross_attn.lift(l, &join(prefix, "cross_attn")),
            ln_ff: self.ln_ff.lift(l, &join(prefix, "ln_ff")),
            ff1: self.ff1.lift(l, &join(prefix, "ff1")),
            ff2: self.ff2.lift(l, &join(prefix, "ff2")),
        }
    }
}

impl ParamTree for DecoderLayerW {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        self.ln_self.visit(&join(prefix, "ln_self"), f);
        self.self_attn.visit(&join(prefix, "self_attn"), f);
        self.ln_cross.visit(&join(prefix, "ln_cross"), f);
        self.cross_attn.visit(&join(prefix, "cross_attn"), f);
        self.ln_ff.visit(&join(prefix, "ln_ff"), f);
        self.ff1.visit(&join(prefix, "ff1"), f);
        self.ff2.visit(&join(prefix, "ff2"), f);
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        self.ln_self.visit_mut(&join(prefix, "ln_self"), f);
        self.self_attn.visit_mut(&join(prefix, "self_attn"), f);
        self.ln_cross.visit_mut(&join(prefix, "ln_cross"), f);
        self.cross_attn.visit_mut(&join(prefix, "cross_attn"), f);
        self.ln_ff.visit_mut(&join(prefix, "ln_ff"), f);
        self.ff1.visit_mut(&join(prefix, "ff1"), f);
        self.ff2.visit_mut(&join(prefix, "ff2"), f);
    }
}

pub struct DecoderLayerV<'t> {
    pub ln_self: LayerNormV<'t>,
    pub self_attn: MhaV<'t>,
    pub ln_cross: LayerNormV<'t>,
    pub cross_attn: MhaV<'t>,
    pub ln_ff: LayerNormV<'t>,
    pub ff1: LinearV<'t>,
    pub ff2: LinearV<'t>,
}

impl<'t> DecoderLayerV<'t> {
    pub fn forward(&self, q: &Var<'t>, mem: &Var<'t>, mem_mask: &[bool]) -> Var<'t> {
        let nq = q.shape()[1];
        let self_mask = vec![true; q.shape()[0] * nq];
        let normed = self.ln_self.forward(q);
        let h = q.add(&self.self_attn.forward(&normed, &normed, &self_mask));
        let h = h.add(&self
            .cross_attn
            .forward(&self.ln_cross.forward(&h), mem, mem_mask));
        let ff = self.ff2.forward(&self.ff1.forward(&self.ln_ff.forward(&h)).gelu());
        h.add(&ff)
    }
}

#[derive(Clone, Debug)]
pub struct DecoderStackW {
    pub layers: Vec<DecoderLayerW>,
    pub final_ln: LayerNormW,
}

impl DecoderStackW {
    pub fn init(rng: &mut ChaCha8Rng, d: usize, heads: usize, n_layers: usize) -> Self {
        Self {
            layers: (0..n_layers).map(|_| DecoderLayerW::init(rng, d, heads)).collect(),
            final_ln: LayerNormW::init(d),
        }
    }

    pub fn lift<'t>(&self, l: &mut Lifter<'t>, prefix: &str) -> DecoderStackV<'t> {
        DecoderStackV {
            layers: self
                .layers
                .iter()
                .enumerate()
                .map(|(i, layer)| layer.lift(l, &join(prefix, &format!("layer{i}"))))
                .collect(),
            final_ln: self.final_ln.lift(l, &join(prefix, "final_ln")),
        }
    }
}

impl ParamTree for DecoderStackW {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        for (i, layer) in self.layers.iter().enumerate() {
            layer.visit(&join(prefix, &format!("layer{i}")), f);
        }
        self.final_ln.visit(&join(prefix, "final_ln"), f);
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        for (i, layer) in self.layers.iter_mut().enumerate() {
            layer.visit_mut(&join(prefix, &format!("layer{i}")), f);
        }
        self.final_ln.visit_mut(&join(prefix, "final_ln"), f);
    }
}

pub struct DecoderStackV<'t> {
    pub layers: Vec<DecoderLayerV<'t>>,
    pub final_ln: LayerNormV<'t>,
}

impl<'t> DecoderStackV<'t> {
    pub fn forward(&self, q: &Var<'t>, mem: &Var<'t>, mem_mask: &[bool]) -> Var<'t> {
        let mut h = q.clone();
        for layer in &self.layers {
            h = layer.forward(&h, mem, mem_mask);
        }
        self.final_ln.forward(&h)
    }
}

/// Positional encoding table: `P[t, 2i] = sin(t / 10000^(2i/d))`,
/// `P[t, 2i+1] = cos(...)`. Indexed by frame order, not wall-clock time.
pub fn sinusoidal_pe(max_len: usize, d: usize) -> Tensor {
    let mut data = vec![0.0; max_len * d];
    for t in 0..max_len {
        for i in 0..d / 2 {
            let freq = 1.0 / 10000f64.powf(2.0 * i as f64 / d as f64);
            data[t * d + 2 * i] = (t as f64 * freq).sin();
            data[t * d + 2 * i + 1] = (t as f64 * freq).cos();
        }
    }
    Tensor::from_vec(&[max_len, d], data)
}
