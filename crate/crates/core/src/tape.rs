//! Reverse-mode automatic differentiation over [`Tensor`] values.
//!
//! A [`GradTape`] records every differentiable operation as a node holding
//! its parent ids and a vector-Jacobian closure. [`GradTape::backward`]
//! walks the nodes once in reverse creation order (which is a reverse
//! topological order by construction) and accumulates gradients with a
//! fixed, thread-count-independent reduction order, so replays are
//! bit-identical.
//!
//! One tape is single-owner: it is created per forward pass and never
//! shared across concurrent backward passes.

use std::cell::RefCell;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::ShapeError;
use crate::tensor::{matmul, matmul_nt, matmul_tn, numel, strides, Tensor};

type Vjp = Box<dyn Fn(&Tensor) -> Vec<Tensor>>;

struct Node {
    parents: Vec<usize>,
    vjp: Option<Vjp>,
}

/// Recorded operation graph with gradient accumulators.
#[derive(Default)]
pub struct GradTape {
    nodes: RefCell<Vec<Node>>,
}

/// Handle to a tensor recorded on a tape.
#[derive(Clone)]
pub struct Var<'t> {
    tape: &'t GradTape,
    id: usize,
    value: Tensor,
}

/// Gradients by node id after a backward pass.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, var: &Var<'_>) -> Option<&Tensor> {
        self.grads.get(var.id).and_then(|g| g.as_ref())
    }

    /// Gradient for `var`, or zeros of its shape when it never reached the loss.
    pub fn get_or_zeros(&self, var: &Var<'_>) -> Tensor {
        match self.get(var) {
            Some(g) => g.clone(),
            None => Tensor::zeros(var.value.shape()),
        }
    }
}

impl GradTape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, parents: Vec<usize>, vjp: Option<Vjp>, value: Tensor) -> Var<'_> {
        debug_assert!(
            value.all_finite(),
            "non-finite op output on tape (shape {:?})",
            value.shape()
        );
        let mut nodes = self.nodes.borrow_mut();
        let id = nodes.len();
        nodes.push(Node { parents, vjp });
        Var {
            tape: self,
            id,
            value,
        }
    }

    /// Records a leaf. Parameters and inputs both enter this way; whether a
    /// leaf is a trained parameter is the caller's bookkeeping.
    pub fn leaf(&self, value: Tensor) -> Var<'_> {
        self.push(Vec::new(), None, value)
    }

    /// Reverse pass from a scalar loss. Each node is visited exactly once.
    pub fn backward(&self, loss: &Var<'_>) -> Result<Gradients, ShapeError> {
        if loss.value.len() != 1 {
            return Err(ShapeError::Contract(format!(
                "backward requires a scalar loss, got shape {:?}",
                loss.value.shape()
            )));
        }
        let nodes = self.nodes.borrow();
        let mut grads: Vec<Option<Tensor>> = vec![None; nodes.len()];
        grads[loss.id] = Some(Tensor::scalar(1.0));
        for id in (0..=loss.id).rev() {
            let Some(grad) = grads[id].clone() else {
                continue;
            };
            let node = &nodes[id];
            let Some(vjp) = &node.vjp else {
                continue;
            };
            let parent_grads = vjp(&grad);
            debug_assert_eq!(parent_grads.len(), node.parents.len());
            for (pid, pg) in node.parents.iter().zip(parent_grads) {
                grads[*pid] = Some(match grads[*pid].take() {
                    Some(acc) => acc.add(&pg),
                    None => pg,
                });
            }
        }
        Ok(Gradients { grads })
    }
}

impl<'t> Var<'t> {
    pub fn value(&self) -> &Tensor {
        &self.value
    }

    pub fn shape(&self) -> &[usize] {
        self.value.shape()
    }

    fn same_tape(&self, other: &Var<'t>) {
        assert!(
            std::ptr::eq(self.tape, other.tape),
            "vars belong to different tapes"
        );
    }

    pub fn add(&self, other: &Var<'t>) -> Var<'t> {
        self.same_tape(other);
        let value = self.value.add(&other.value);
        self.tape.push(
            vec![self.id, other.id],
            Some(Box::new(|g: &Tensor| vec![g.clone(), g.clone()])),
            value,
        )
    }

    pub fn sub(&self, other: &Var<'t>) -> Var<'t> {
        self.same_tape(other);
        let value = self.value.sub(&other.value);
        self.tape.push(
            vec![self.id, other.id],
            Some(Box::new(|g: &Tensor| vec![g.clone(), g.scale(-1.0)])),
            value,
        )
    }

    /// Elementwise product; shapes must match exactly.
    pub fn mul(&self, other: &Var<'t>) -> Var<'t> {
        self.same_tape(other);
        let value = self.value.mul(&other.value);
        let a = self.value.clone();
        let b = other.value.clone();
        self.tape.push(
            vec![self.id, other.id],
            Some(Box::new(move |g: &Tensor| vec![g.mul(&b), g.mul(&a)])),
            value,
        )
    }

    pub fn scale(&self, c: f64) -> Var<'t> {
        let value = self.value.scale(c);
        self.tape.push(
            vec![self.id],
            Some(Box::new(move |g: &Tensor| vec![g.scale(c)])),
            value,
        )
    }

    /// Adds a constant (non-differentiated) tensor of identical shape.
    pub fn add_const(&self, c: &Tensor) -> Var<'t> {
        let value = self.value.add(c);
        self.tape.push(
            vec![self.id],
            Some(Box::new(|g: &Tensor| vec![g.clone()])),
            value,
        )
    }

    /// Elementwise product with a constant tensor (masking).
    pub fn mul_const(&self, c: &Tensor) -> Var<'t> {
        let value = self.value.mul(c);
        let c = c.clone();
        self.tape.push(
            vec![self.id],
            Some(Box::new(move |g: &Tensor| vec![g.mul(&c)])),
            value,
        )
    }

    /// Adds a vector along the last axis: x[..., j] + b[j].
    pub fn add_row(&self, bias: &Var<'t>) -> Var<'t> {
        self.same_tape(bias);
        let d = *self.shape().last().expect("add_row on rank-0");
        assert_eq!(bias.shape(), &[d], "add_row bias must be [last_dim]");
        let rows = self.value.len() / d;
        let mut out = self.value.data().to_vec();
        let bd = bias.value.data();
        for r in 0..rows {
            for j in 0..d {
                out[r * d + j] += bd[j];
            }
        }
        let value = Tensor::from_vec(self.shape(), out);
        self.tape.push(
            vec![self.id, bias.id],
            Some(Box::new(move |g: &Tensor| {
                let mut db = vec![0.0; d];
                for (i, &v) in g.data().iter().enumerate() {
                    db[i % d] += v;
                }
                vec![g.clone(), Tensor::from_vec(&[d], db)]
            })),
            value,
        )
    }

    /// Scales each row by a vector along the last axis: x[..., j] * s[j].
    pub fn mul_row(&self, gain: &Var<'t>) -> Var<'t> {
        self.same_tape(gain);
        let d = *self.shape().last().expect("mul_row on rank-0");
        assert_eq!(gain.shape(), &[d], "mul_row gain must be [last_dim]");
        let mut out = self.value.data().to_vec();
        let gd = gain.value.data();
        for (i, v) in out.iter_mut().enumerate() {
            *v *= gd[i % d];
        }
        let value = Tensor::from_vec(self.shape(), out);
        let x = self.value.clone();
        let gain_val = gain.value.clone();
        self.tape.push(
            vec![self.id, gain.id],
            Some(Box::new(move |g: &Tensor| {
                let mut dx = g.data().to_vec();
                let mut dg = vec![0.0; d];
                for (i, v) in dx.iter_mut().enumerate() {
                    dg[i % d] += *v * x.data()[i];
                    *v *= gain_val.data()[i % d];
                }
                vec![Tensor::from_vec(g.shape(), dx), Tensor::from_vec(&[d], dg)]
            })),
            value,
        )
    }

    /// Batched contraction; see [`crate::tensor::matmul`] for shape rules.
    pub fn matmul(&self, other: &Var<'t>) -> Var<'t> {
        self.same_tape(other);
        let value = matmul(&self.value, &other.value).expect("matmul shapes");
        let a = self.value.clone();
        let b = other.value.clone();
        let b_batched = b.shape().len() > 2;
        self.tape.push(
            vec![self.id, other.id],
            Some(Box::new(move |g: &Tensor| {
                let da = matmul_nt(g, &b).expect("matmul vjp dA");
                // dB = A^T dC, summed over batch when B was unbatched.
                let db = matmul_tn(&a, g, !b_batched).expect("matmul vjp dB");
                vec![da, db]
            })),
            value,
        )
    }

    /// A · B^T; B is [.., n, k] with matching or absent batch dims.
    pub fn matmul_nt(&self, other: &Var<'t>) -> Var<'t> {
        self.same_tape(other);
        let value = matmul_nt(&self.value, &other.value).expect("matmul_nt shapes");
        let a = self.value.clone();
        let b = other.value.clone();
        let b_batched = b.shape().len() > 2;
        self.tape.push(
            vec![self.id, other.id],
            Some(Box::new(move |g: &Tensor| {
                // C = A B^T  =>  dA = dC B, dB = dC^T A.
                let da = matmul(g, &b).expect("matmul_nt vjp dA");
                let db = matmul_tn(g, &a, !b_batched).expect("matmul_nt vjp dB");
                vec![da, db]
            })),
            value,
        )
    }

    pub fn reshape(&self, shape: &[usize]) -> Var<'t> {
        let value = self.value.reshape(shape).expect("reshape size");
        let orig = self.shape().to_vec();
        self.tape.push(
            vec![self.id],
            Some(Box::new(move |g: &Tensor| {
                vec![g.reshape(&orig).expect("reshape vjp")]
            })),
            value,
        )
    }

    pub fn transpose(&self, perm: &[usize]) -> Var<'t> {
        let value = self.value.transpose(perm);
        let mut inverse = vec![0usize; perm.len()];
        for (i, &p) in perm.iter().enumerate() {
            inverse[p] = i;
        }
        self.tape.push(
            vec![self.id],
            Some(Box::new(move |g: &Tensor| vec![g.transpose(&inverse)])),
            value,
        )
    }

    /// Contiguous slice along one axis.
    pub fn slice_axis(&self, axis: usize, start: usize, len: usize) -> Var<'t> {
        let shape = self.shape().to_vec();
        assert!(axis < shape.len() && start + len <= shape[axis]);
        let mut out_shape = shape.clone();
        out_shape[axis] = len;
        let value = Tensor::from_vec(
            &out_shape,
            copy_axis_range(&self.value, axis, start, len),
        );
        self.tape.push(
            vec![self.id],
            Some(Box::new(move |g: &Tensor| {
                vec![scatter_axis_range(g, &shape, axis, start)]
            })),
            value,
        )
    }

    /// Gathers rows of a 2-D tensor; indices may repeat.
    pub fn gather_rows(&self, indices: &[usize]) -> Var<'t> {
        assert_eq!(self.shape().len(), 2, "gather_rows wants a 2-D tensor");
        let (n, d) = (self.shape()[0], self.shape()[1]);
        let mut out = Vec::with_capacity(indices.len() * d);
        for &i in indices {
            assert!(i < n, "gather_rows index {i} out of {n}");
            out.extend_from_slice(&self.value.data()[i * d..(i + 1) * d]);
        }
        let value = Tensor::from_vec(&[indices.len(), d], out);
        let indices = indices.to_vec();
        self.tape.push(
            vec![self.id],
            Some(Box::new(move |g: &Tensor| {
                let mut dx = vec![0.0; n * d];
                for (r, &i) in indices.iter().enumerate() {
                    for j in 0..d {
                        dx[i * d + j] += g.data()[r * d + j];
                    }
                }
                vec![Tensor::from_vec(&[n, d], dx)]
            })),
            value,
        )
    }

    /// Row-stable softmax over the last axis with an exact-zero key mask.
    ///
    /// `x` is [groups, q, k]; `key_mask` is [batches * k] with
    /// `groups = batches * heads`. Masked keys get probability exactly 0;
    /// rows whose keys are all masked come out all-zero.
    pub fn attn_softmax(&self, key_mask: &[bool], heads: usize) -> Var<'t> {
        let shape = self.shape().to_vec();
        assert_eq!(shape.len(), 3, "attn_softmax wants [groups, q, k]");
        let (groups, q, k) = (shape[0], shape[1], shape[2]);
        assert_eq!(groups % heads, 0);
        let batches = groups / heads;
        assert_eq!(key_mask.len(), batches * k, "key mask length");
        let xd = self.value.data();
        let mut out = vec![0.0; xd.len()];
        for g in 0..groups {
            let mask = &key_mask[(g / heads) * k..(g / heads + 1) * k];
            for row in 0..q {
                let off = (g * q + row) * k;
                softmax_row_masked(&xd[off..off + k], mask, &mut out[off..off + k]);
            }
        }
        let value = Tensor::from_vec(&shape, out);
        let y = value.clone();
        self.tape.push(
            vec![self.id],
            Some(Box::new(move |g: &Tensor| {
                let yd = y.data();
                let gd = g.data();
                let mut dx = vec![0.0; gd.len()];
                let rows = gd.len() / k;
                for r in 0..rows {
                    let off = r * k;
                    let mut dot = 0.0;
                    for j in 0..k {
                        dot += gd[off + j] * yd[off + j];
                    }
                    for j in 0..k {
                        dx[off + j] = yd[off + j] * (gd[off + j] - dot);
                    }
                }
                vec![Tensor::from_vec(g.shape(), dx)]
            })),
            value,
        )
    }

    /// Plain softmax over the last axis (no mask).
    pub fn softmax(&self) -> Var<'t> {
        let k = *self.shape().last().expect("softmax on rank-0");
        let batches = self.value.len() / k;
        let all = vec![true; batches * k];
        let flat = self.reshape(&[batches, 1, k]);
        let sm = flat.attn_softmax(&all, 1);
        sm.reshape(self.shape())
    }

    /// Layer normalization over the last axis.
    pub fn layer_norm(&self, gain: &Var<'t>, bias: &Var<'t>, eps: f64) -> Var<'t> {
        self.same_tape(gain);
        self.same_tape(bias);
        let d = *self.shape().last().expect("layer_norm on rank-0");
        assert_eq!(gain.shape(), &[d]);
        assert_eq!(bias.shape(), &[d]);
        let rows = self.value.len() / d;
        let xd = self.value.data();
        let gd = gain.value.data();
        let bd = bias.value.data();
        let mut out = vec![0.0; xd.len()];
        let mut xhat = vec![0.0; xd.len()];
        let mut inv_sigma = vec![0.0; rows];
        for r in 0..rows {
            let row = &xd[r * d..(r + 1) * d];
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let inv = 1.0 / (var + eps).sqrt();
            inv_sigma[r] = inv;
            for j in 0..d {
                let h = (row[j] - mean) * inv;
                xhat[r * d + j] = h;
                out[r * d + j] = gd[j] * h + bd[j];
            }
        }
        let value = Tensor::from_vec(self.shape(), out);
        let xhat = Tensor::from_vec(self.shape(), xhat);
        let gain_val = gain.value.clone();
        self.tape.push(
            vec![self.id, gain.id, bias.id],
            Some(Box::new(move |g: &Tensor| {
                let gd_out = g.data();
                let hd = xhat.data();
                let gv = gain_val.data();
                let mut dgain = vec![0.0; d];
                let mut dbias = vec![0.0; d];
                let mut dx = vec![0.0; gd_out.len()];
                for r in 0..rows {
                    let off = r * d;
                    let mut mean_dh = 0.0;
                    let mut mean_dh_h = 0.0;
                    for j in 0..d {
                        let go = gd_out[off + j];
                        dgain[j] += go * hd[off + j];
                        dbias[j] += go;
                        let dh = go * gv[j];
                        mean_dh += dh;
                        mean_dh_h += dh * hd[off + j];
                    }
                    mean_dh /= d as f64;
                    mean_dh_h /= d as f64;
                    for j in 0..d {
                        let dh = gd_out[off + j] * gv[j];
                        dx[off + j] = inv_sigma[r] * (dh - mean_dh - hd[off + j] * mean_dh_h);
                    }
                }
                vec![
                    Tensor::from_vec(g.shape(), dx),
                    Tensor::from_vec(&[d], dgain),
                    Tensor::from_vec(&[d], dbias),
                ]
            })),
            value,
        )
    }

    /// GELU activation (tanh approximation). The forward tanh values are
    /// captured so the backward pass avoids recomputing them.
    pub fn gelu(&self) -> Var<'t> {
        let tanh_u: Vec<f64> = self
            .value
            .data()
            .iter()
            .map(|&x| (GELU_C * (x + GELU_A * x * x * x)).tanh())
            .collect();
        let value = Tensor::from_vec(
            self.shape(),
            self.value
                .data()
                .iter()
                .zip(&tanh_u)
                .map(|(&x, &t)| 0.5 * x * (1.0 + t))
                .collect(),
        );
        let x = self.value.clone();
        self.tape.push(
            vec![self.id],
            Some(Box::new(move |g: &Tensor| {
                let dx: Vec<f64> = g
                    .data()
                    .iter()
                    .zip(x.data())
                    .zip(&tanh_u)
                    .map(|((&go, &xv), &t)| {
                        go * (0.5 * (1.0 + t)
                            + 0.5 * xv * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * xv * xv))
                    })
                    .collect();
                vec![Tensor::from_vec(g.shape(), dx)]
            })),
            value,
        )
    }

    /// Prefix sums along one axis.
    pub fn cumsum(&self, axis: usize) -> Var<'t> {
        let shape = self.shape().to_vec();
        assert!(axis < shape.len());
        let value = Tensor::from_vec(&shape, cumsum_data(&self.value, axis, false));
        self.tape.push(
            vec![self.id],
            Some(Box::new(move |g: &Tensor| {
                vec![Tensor::from_vec(g.shape(), cumsum_data(g, axis, true))]
            })),
            value,
        )
    }

    /// Sum of all elements to a scalar.
    pub fn sum(&self) -> Var<'t> {
        let value = Tensor::scalar(self.value.sum());
        let shape = self.shape().to_vec();
        self.tape.push(
            vec![self.id],
            Some(Box::new(move |g: &Tensor| {
                vec![Tensor::full(&shape, g.item())]
            })),
            value,
        )
    }

    pub fn mean(&self) -> Var<'t> {
        let n = self.value.len() as f64;
        self.sum().scale(1.0 / n)
    }
}

/// Concatenates 2-D vars along axis 0.
pub fn concat_rows<'t>(parts: &[Var<'t>]) -> Var<'t> {
    assert!(!parts.is_empty(), "concat_rows of nothing");
    let tape = parts[0].tape;
    let d = parts[0].shape()[1];
    let mut total = 0;
    let mut data = Vec::new();
    let mut row_counts = Vec::with_capacity(parts.len());
    for p in parts {
        assert_eq!(p.shape().len(), 2);
        assert_eq!(p.shape()[1], d, "concat_rows width mismatch");
        total += p.shape()[0];
        row_counts.push(p.shape()[0]);
        data.extend_from_slice(p.value.data());
    }
    let value = Tensor::from_vec(&[total, d], data);
    let parents = parts.iter().map(|p| p.id).collect();
    tape.push(
        parents,
        Some(Box::new(move |g: &Tensor| {
            let mut out = Vec::with_capacity(row_counts.len());
            let mut offset = 0;
            for &rows in &row_counts {
                let chunk = g.data()[offset * d..(offset + rows) * d].to_vec();
                out.push(Tensor::from_vec(&[rows, d], chunk));
                offset += rows;
            }
            out
        })),
        value,
    )
}

fn copy_axis_range(t: &Tensor, axis: usize, start: usize, len: usize) -> Vec<f64> {
    let shape = t.shape();
    let st = strides(shape);
    let outer: usize = shape[..axis].iter().product();
    let inner = st[axis];
    let mut out = Vec::with_capacity(outer * len * inner);
    for o in 0..outer {
        let base = o * shape[axis] * inner;
        out.extend_from_slice(&t.data()[base + start * inner..base + (start + len) * inner]);
    }
    out
}

fn scatter_axis_range(g: &Tensor, full_shape: &[usize], axis: usize, start: usize) -> Tensor {
    let st = strides(full_shape);
    let outer: usize = full_shape[..axis].iter().product();
    let inner = st[axis];
    let len = g.shape()[axis];
    let mut out = vec![0.0; numel(full_shape)];
    for o in 0..outer {
        let dst = o * full_shape[axis] * inner + start * inner;
        let src = o * len * inner;
        out[dst..dst + len * inner].copy_from_slice(&g.data()[src..src + len * inner]);
    }
    Tensor::from_vec(full_shape, out)
}

fn cumsum_data(t: &Tensor, axis: usize, suffix: bool) -> Vec<f64> {
    let shape = t.shape();
    let st = strides(shape);
    let outer: usize = shape[..axis].iter().product();
    let inner = st[axis];
    let n = shape[axis];
    let mut out = t.data().to_vec();
    for o in 0..outer {
        for i in 0..inner {
            let base = o * n * inner + i;
            if suffix {
                for j in (0..n.saturating_sub(1)).rev() {
                    out[base + j * inner] += out[base + (j + 1) * inner];
                }
            } else {
                for j in 1..n {
                    out[base + j * inner] += out[base + (j - 1) * inner];
                }
            }
        }
    }
    out
}

fn softmax_row_masked(row: &[f64], mask: &[bool], out: &mut [f64]) {
    let mut hi = f64::NEG_INFINITY;
    for (j, &v) in row.iter().enumerate() {
        if mask[j] && v > hi {
            hi = v;
        }
    }
    if hi == f64::NEG_INFINITY {
        out.fill(0.0);
        return;
    }
    let mut z = 0.0;
    for (j, &v) in row.iter().enumerate() {
        if mask[j] {
            let e = (v - hi).exp();
            out[j] = e;
            z += e;
        } else {
            out[j] = 0.0;
        }
    }
    for v in out.iter_mut() {
        *v /= z;
    }
}

const GELU_C: f64 = 0.7978845608028654; // sqrt(2/pi)
const GELU_A: f64 = 0.044715;

/// Result of a finite-difference gradient audit.
#[derive(Debug, Clone, Copy)]
pub struct FdReport {
    pub max_rel_err: f64,
    pub coords_checked: usize,
}

/// Compares analytic gradients against central differences on up to
/// `max_coords` sampled coordinates. `loss_fn` must be deterministic.
///
/// Relative error uses a 1e-4 denominator floor so near-zero gradients are
/// compared at an absolute noise floor instead of blowing up the ratio.
pub fn finite_diff_check(
    mut loss_fn: impl FnMut(&[Tensor]) -> f64,
    params: &[Tensor],
    analytic: &[Tensor],
    eps: f64,
    max_coords: usize,
    seed: u64,
) -> FdReport {
    assert_eq!(params.len(), analytic.len());
    let mut coords: Vec<(usize, usize)> = Vec::new();
    let total: usize = params.iter().map(|p| p.len()).sum();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    if total <= max_coords {
        for (pi, p) in params.iter().enumerate() {
            for ci in 0..p.len() {
                coords.push((pi, ci));
            }
        }
    } else {
        // At least one coordinate per tensor, the rest sampled at random.
        for (pi, p) in params.iter().enumerate() {
            if p.len() > 0 {
                coords.push((pi, rng.gen_range(0..p.len())));
            }
        }
        while coords.len() < max_coords {
            let pi = rng.gen_range(0..params.len());
            if params[pi].len() == 0 {
                continue;
            }
            coords.push((pi, rng.gen_range(0..params[pi].len())));
        }
    }

    let mut work: Vec<Tensor> = params.to_vec();
    let mut max_rel = 0.0f64;
    for &(pi, ci) in &coords {
        let orig = params[pi].data()[ci];

        let mut plus = params[pi].data().to_vec();
        plus[ci] = orig + eps;
        work[pi] = Tensor::from_vec(params[pi].shape(), plus);
        let f_plus = loss_fn(&work);

        let mut minus = params[pi].data().to_vec();
        minus[ci] = orig - eps;
        work[pi] = Tensor::from_vec(params[pi].shape(), minus);
        let f_minus = loss_fn(&work);

        work[pi] = params[pi].clone();

        let numeric = (f_plus - f_minus) / (2.0 * eps);
        let a = analytic[pi].data()[ci];
        let denom = a.abs().max(numeric.abs()).max(1e-4);
        let rel = (a - numeric).abs() / denom;
        if rel > max_rel {
            max_rel = rel;
        }
    }
    FdReport {
        max_rel_err: max_rel,
        coords_checked: coords.len(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
        Tensor::from_vec(
            shape,
            (0..numel(shape)).map(|_| rng.gen_range(-1.5..1.5)).collect(),
        )
    }

    #[test]
    fn sum_of_squares_gradient() {
        // f(x) = sum(x^2), grad = 2x; coordinates kept away from zero so the
        // relative error is meaningful at the 1e-8 level.
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = Tensor::from_vec(
            &[8, 8],
            (0..64)
                .map(|_| {
                    let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
                    sign * rng.gen_range(0.5..2.0)
                })
                .collect(),
        );
        let tape = GradTape::new();
        let v = tape.leaf(x.clone());
        let loss = v.mul(&v).sum();
        let grads = tape.backward(&loss).unwrap();
        let analytic = grads.get_or_zeros(&v);
        for (a, xv) in analytic.data().iter().zip(x.data()) {
            assert!((a - 2.0 * xv).abs() < 1e-12);
        }
        let report = finite_diff_check(
            |p| {
                let t = GradTape::new();
                let v = t.leaf(p[0].clone());
                v.mul(&v).sum().value().item()
            },
            &[x],
            &[analytic],
            1e-5,
            64,
            0,
        );
        assert!(
            report.max_rel_err < 1e-8,
            "rel err {}",
            report.max_rel_err
        );
    }

    #[test]
    fn unused_parameter_gets_zero_gradient() {
        let tape = GradTape::new();
        let used = tape.leaf(Tensor::from_vec(&[2], vec![1.0, 2.0]));
        let unused = tape.leaf(Tensor::from_vec(&[3], vec![4.0, 5.0, 6.0]));
        let loss = used.mul(&used).sum();
        let grads = tape.backward(&loss).unwrap();
        assert!(grads.get(&unused).is_none());
        let z = grads.get_or_zeros(&unused);
        assert_eq!(z.data(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn non_scalar_loss_is_a_contract_error() {
        let tape = GradTape::new();
        let v = tape.leaf(Tensor::zeros(&[2, 2]));
        let w = v.scale(2.0);
        assert!(tape.backward(&w).is_err());
    }

    #[test]
    fn matmul_grad_of_sum_is_ones_bt() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = rand_tensor(&mut rng, &[3, 4]);
        let b = rand_tensor(&mut rng, &[4, 5]);
        let tape = GradTape::new();
        let va = tape.leaf(a.clone());
        let vb = tape.leaf(b.clone());
        let loss = va.matmul(&vb).sum();
        let grads = tape.backward(&loss).unwrap();
        let da = grads.get_or_zeros(&va);
        let expected = matmul_nt(&Tensor::full(&[3, 5], 1.0), &b).unwrap();
        for (g, e) in da.data().iter().zip(expected.data()) {
            assert!((g - e).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_uniform_shift_and_singleton() {
        let tape = GradTape::new();
        let v = tape.leaf(Tensor::zeros(&[1, 4]));
        let s = v.softmax();
        assert_eq!(s.value().data(), &[0.25, 0.25, 0.25, 0.25]);

        let x = Tensor::from_vec(&[1, 3], vec![0.3, -1.2, 2.0]);
        let shifted = x.map(|v| v + 7.5);
        let a = tape.leaf(x).softmax();
        let b = tape.leaf(shifted).softmax();
        for (p, q) in a.value().data().iter().zip(b.value().data()) {
            assert!((p - q).abs() < 1e-12);
        }

        // One unmasked position takes probability exactly 1.
        let logits = tape.leaf(Tensor::from_vec(&[1, 1, 3], vec![0.1, 5.0, -2.0]));
        let sm = logits.attn_softmax(&[false, true, false], 1);
        assert_eq!(sm.value().data(), &[0.0, 1.0, 0.0]);
    }

    #[test]
    fn softmax_rows_sum_to_one_masked_exact_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = rand_tensor(&mut rng, &[2, 3, 5]);
        let mask = [true, false, true, true, false, false, true, true, false, true];
        let tape = GradTape::new();
        let sm = tape.leaf(x).attn_softmax(&mask, 1);
        let d = sm.value().data();
        for b in 0..2 {
            for r in 0..3 {
                let row = &d[(b * 3 + r) * 5..(b * 3 + r + 1) * 5];
                let sum: f64 = row.iter().sum();
                assert!((sum - 1.0).abs() < 1e-12, "row sum {sum}");
                for (j, &v) in row.iter().enumerate() {
                    if !mask[b * 5 + j] {
                        assert_eq!(v, 0.0);
                    } else {
                        assert!(v > 0.0 && v < 1.0 + 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn layer_norm_constant_row_yields_bias() {
        let tape = GradTape::new();
        let x = tape.leaf(Tensor::full(&[2, 4], 3.7));
        let gain = tape.leaf(Tensor::full(&[4], 2.0));
        let bias = tape.leaf(Tensor::from_vec(&[4], vec![0.1, 0.2, 0.3, 0.4]));
        let y = x.layer_norm(&gain, &bias, 1e-5);
        for r in 0..2 {
            for j in 0..4 {
                assert!((y.value().data()[r * 4 + j] - bias.value().data()[j]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn gelu_zero_is_zero() {
        let tape = GradTape::new();
        let y = tape.leaf(Tensor::from_vec(&[3], vec![0.0, 1.0, -1.0])).gelu();
        assert_eq!(y.value().data()[0], 0.0);
        assert!(y.value().data()[1] > 0.8);
        assert!(y.value().data()[2] > -0.2 && y.value().data()[2] < 0.0);
    }

    #[test]
    fn cumsum_forward_and_grad() {
        let tape = GradTape::new();
        let x = tape.leaf(Tensor::from_vec(&[1, 3, 2], vec![1., 10., 2., 20., 3., 30.]));
        let c = x.cumsum(1);
        assert_eq!(c.value().data(), &[1., 10., 3., 30., 6., 60.]);
        // d/dx of sum(cumsum(x)) = suffix counts [3,3,2,2,1,1].
        let loss = c.sum();
        let grads = tape.backward(&loss).unwrap();
        assert_eq!(grads.get_or_zeros(&x).data(), &[3., 3., 2., 2., 1., 1.]);
    }

    #[test]
    fn per_op_gradients_match_central_differences() {
        // Each op audited over random shapes; rel err < 1e-4 as per the
        // layer-level gradient contract.
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for round in 0..10 {
            let m = rng.gen_range(2..5);
            let k = rng.gen_range(2..5);
            let n = rng.gen_range(2..5);
            let a = rand_tensor(&mut rng, &[m, k]);
            let b = rand_tensor(&mut rng, &[k, n]);
            let g = rand_tensor(&mut rng, &[n]);
            let h = rand_tensor(&mut rng, &[n]);
            let mask_row: Vec<bool> = (0..k * n).map(|_| rng.gen_bool(0.8)).collect();

            let run = |p: &[Tensor]| -> f64 {
                let t = GradTape::new();
                let va = t.leaf(p[0].clone());
                let vb = t.leaf(p[1].clone());
                let vg = t.leaf(p[2].clone());
                let vh = t.leaf(p[3].clone());
                let prod = va.matmul(&vb);
                let ln = prod.layer_norm(&vg, &vh, 1e-5);
                let act = ln.gelu();
                let att = act
                    .reshape(&[1, m, n])
                    .matmul_nt(&vb.reshape(&[1, k, n]))
                    .attn_softmax(&mask_row[..k], 1);
                let mixed = att.reshape(&[m, k]).matmul(&vb);
                mixed.cumsum(0).mul(&mixed).sum().value().item()
            };

            let params = vec![a.clone(), b.clone(), g.clone(), h.clone()];
            let loss0 = run(&params);
            assert!(loss0.is_finite());

            // analytic grads via one recorded pass
            let t = GradTape::new();
            let va = t.leaf(a.clone());
            let vb = t.leaf(b.clone());
            let vg = t.leaf(g.clone());
            let vh = t.leaf(h.clone());
            let prod = va.matmul(&vb);
            let ln = prod.layer_norm(&vg, &vh, 1e-5);
            let act = ln.gelu();
            let att = act
                .reshape(&[1, m, n])
                .matmul_nt(&vb.reshape(&[1, k, n]))
                .attn_softmax(&mask_row[..k], 1);
            let mixed = att.reshape(&[m, k]).matmul(&vb);
            let loss = mixed.cumsum(0).mul(&mixed).sum();
            let grads = t.backward(&loss).unwrap();
            let analytic = vec![
                grads.get_or_zeros(&va),
                grads.get_or_zeros(&vb),
                grads.get_or_zeros(&vg),
                grads.get_or_zeros(&vh),
            ];
            let report = finite_diff_check(run, &params, &analytic, 1e-5, 200, round as u64);
            assert!(
                report.max_rel_err < 1e-4,
                "round {round}: rel err {}",
                report.max_rel_err
            );
        }
    }

    #[test]
    fn deterministic_replay_is_bit_identical() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = rand_tensor(&mut rng, &[4, 6]);
        let w = rand_tensor(&mut rng, &[6, 6]);
        let run = || {
            let t = GradTape::new();
            let vx = t.leaf(x.clone());
            let vw = t.leaf(w.clone());
            let y = vx.matmul(&vw).gelu().softmax();
            y.value().clone()
        };
        assert!(run().bit_eq(&run()));
    }
}
