//! Dense n-dimensional f64 tensors with the handful of kernels the model
//! needs. Values are immutable after construction; clones share storage.

use std::fmt;
use std::sync::Arc;

use crate::error::ShapeError;

/// Dense row-major tensor of 64-bit floats.
#[derive(Clone)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Arc<Vec<f64>>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tensor{:?}", self.shape)?;
        if self.len() <= 8 {
            write!(f, " {:?}", self.data())
        } else {
            write!(f, " [{} values]", self.len())
        }
    }
}

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl Tensor {
    pub fn new(shape: &[usize], data: Vec<f64>) -> Result<Self, ShapeError> {
        if numel(shape) != data.len() {
            return Err(ShapeError::BadLen {
                shape: shape.to_vec(),
                len: data.len(),
            });
        }
        Ok(Self {
            shape: shape.to_vec(),
            data: Arc::new(data),
        })
    }

    /// Like [`Tensor::new`] but panics on length mismatch; for trusted callers.
    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Self {
        Self::new(shape, data).expect("tensor shape/len mismatch")
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::from_vec(shape, vec![0.0; numel(shape)])
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        Self::from_vec(shape, vec![value; numel(shape)])
    }

    pub fn scalar(value: f64) -> Self {
        Self::from_vec(&[1], vec![value])
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.len(), 1, "item() on non-scalar tensor");
        self.data[0]
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Bitwise equality of shape and every element.
    pub fn bit_eq(&self, other: &Tensor) -> bool {
        self.shape == other.shape
            && self
                .data
                .iter()
                .zip(other.data.iter())
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Self, ShapeError> {
        if numel(shape) != self.len() {
            return Err(ShapeError::BadLen {
                shape: shape.to_vec(),
                len: self.len(),
            });
        }
        Ok(Self {
            shape: shape.to_vec(),
            data: Arc::clone(&self.data),
        })
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self::from_vec(&self.shape, self.data.iter().map(|&v| f(v)).collect())
    }

    pub fn zip_map(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Self, ShapeError> {
        if self.shape != other.shape {
            return Err(ShapeError::Mismatch {
                op: "zip_map",
                lhs: self.shape.clone(),
                rhs: other.shape.clone(),
            });
        }
        Ok(Self::from_vec(
            &self.shape,
            self.data
                .iter()
                .zip(other.data.iter())
                .map(|(&a, &b)| f(a, b))
                .collect(),
        ))
    }

    pub fn add(&self, other: &Tensor) -> Tensor {
        self.zip_map(other, |a, b| a + b).expect("add shape mismatch")
    }

    pub fn sub(&self, other: &Tensor) -> Tensor {
        self.zip_map(other, |a, b| a - b).expect("sub shape mismatch")
    }

    pub fn mul(&self, other: &Tensor) -> Tensor {
        self.zip_map(other, |a, b| a * b).expect("mul shape mismatch")
    }

    pub fn scale(&self, c: f64) -> Tensor {
        self.map(|v| v * c)
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    /// General axis permutation. `perm` must be a permutation of `0..rank`.
    pub fn transpose(&self, perm: &[usize]) -> Tensor {
        let rank = self.shape.len();
        assert_eq!(perm.len(), rank, "transpose perm rank mismatch");
        let out_shape: Vec<usize> = perm.iter().map(|&p| self.shape[p]).collect();
        let in_strides = strides(&self.shape);
        let out_strides = strides(&out_shape);
        let mut out = vec![0.0; self.len()];
        // Walk the output in order, computing the source index.
        let mut idx = vec![0usize; rank];
        for (o, slot) in out.iter_mut().enumerate() {
            let mut rem = o;
            let mut src = 0;
            for d in 0..rank {
                idx[d] = rem / out_strides[d];
                rem %= out_strides[d];
                src += idx[d] * in_strides[perm[d]];
            }
            *slot = self.data[src];
        }
        Tensor::from_vec(&out_shape, out)
    }
}

pub(crate) fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1usize; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

/// Splits a shape into (batch, m, n): leading dims collapse into one batch.
fn batch_dims(shape: &[usize]) -> Result<(usize, usize, usize), ShapeError> {
    if shape.len() < 2 {
        return Err(ShapeError::Contract(format!(
            "matmul operand must have rank >= 2, got {shape:?}"
        )));
    }
    let n = shape[shape.len() - 1];
    let m = shape[shape.len() - 2];
    let b = shape[..shape.len() - 2].iter().product();
    Ok((b, m, n))
}

/// C[b] = A[b] * B[b].  A is [.., m, k]; B is [.., k, n] or unbatched [k, n].
/// Batched leading dims must match exactly; no other broadcasting.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor, ShapeError> {
    let (ba, m, k) = batch_dims(a.shape())?;
    let (bb, kb, n) = batch_dims(b.shape())?;
    if k != kb || (bb != 1 && bb != ba) {
        return Err(ShapeError::Mismatch {
            op: "matmul",
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    let mut out = vec![0.0; ba * m * n];
    let ad = a.data();
    let bd = b.data();
    for batch in 0..ba {
        let a_off = batch * m * k;
        let b_off = if bb == 1 { 0 } else { batch * k * n };
        let c_off = batch * m * n;
        mm_nn(
            &ad[a_off..a_off + m * k],
            &bd[b_off..b_off + k * n],
            &mut out[c_off..c_off + m * n],
            m,
            k,
            n,
        );
    }
    let mut shape = a.shape()[..a.shape().len() - 2].to_vec();
    shape.push(m);
    shape.push(n);
    Tensor::new(&shape, out)
}

/// C[b] = A[b] * B[b]^T.  A is [.., m, k]; B is [.., n, k] or unbatched [n, k].
pub fn matmul_nt(a: &Tensor, b: &Tensor) -> Result<Tensor, ShapeError> {
    let (ba, m, k) = batch_dims(a.shape())?;
    let (bb, n, kb) = batch_dims(b.shape())?;
    if k != kb || (bb != 1 && bb != ba) {
        return Err(ShapeError::Mismatch {
            op: "matmul_nt",
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    let mut out = vec![0.0; ba * m * n];
    let ad = a.data();
    let bd = b.data();
    for batch in 0..ba {
        let a_off = batch * m * k;
        let b_off = if bb == 1 { 0 } else { batch * n * k };
        let c_off = batch * m * n;
        mm_nt(
            &ad[a_off..a_off + m * k],
            &bd[b_off..b_off + n * k],
            &mut out[c_off..c_off + m * n],
            m,
            k,
            n,
        );
    }
    let mut shape = a.shape()[..a.shape().len() - 2].to_vec();
    shape.push(m);
    shape.push(n);
    Tensor::new(&shape, out)
}

/// C[b] = A[b]^T * B[b].  A is [.., k, m]; B is [.., k, n].
/// When `sum_batch` is set the batched products are accumulated into a
/// single [m, n] result (the gradient of an unbatched right operand).
pub fn matmul_tn(a: &Tensor, b: &Tensor, sum_batch: bool) -> Result<Tensor, ShapeError> {
    let (ba, k, m) = batch_dims(a.shape())?;
    let (bb, kb, n) = batch_dims(b.shape())?;
    if k != kb || bb != ba {
        return Err(ShapeError::Mismatch {
            op: "matmul_tn",
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    let out_batches = if sum_batch { 1 } else { ba };
    let mut out = vec![0.0; out_batches * m * n];
    let ad = a.data();
    let bd = b.data();
    for batch in 0..ba {
        let a_off = batch * k * m;
        let b_off = batch * k * n;
        let c_off = if sum_batch { 0 } else { batch * m * n };
        mm_tn(
            &ad[a_off..a_off + k * m],
            &bd[b_off..b_off + k * n],
            &mut out[c_off..c_off + m * n],
            m,
            k,
            n,
        );
    }
    let shape = if sum_batch {
        vec![m, n]
    } else {
        let mut s = a.shape()[..a.shape().len() - 2].to_vec();
        s.push(m);
        s.push(n);
        s
    };
    Tensor::new(&shape, out)
}

// C += A * B with A [m,k], B [k,n]; ikj order for contiguous streaming.
fn mm_nn(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let c_row = &mut c[i * n..(i + 1) * n];
        for (p, &a_ip) in a_row.iter().enumerate() {
            if a_ip == 0.0 {
                continue;
            }
            let b_row = &b[p * n..(p + 1) * n];
            for (c_val, &b_val) in c_row.iter_mut().zip(b_row.iter()) {
                *c_val += a_ip * b_val;
            }
        }
    }
}

// C += A * B^T with A [m,k], B [n,k]; rows of both are contiguous dots.
fn mm_nt(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let c_row = &mut c[i * n..(i + 1) * n];
        for (j, c_val) in c_row.iter_mut().enumerate() {
            let b_row = &b[j * k..(j + 1) * k];
            let mut acc = 0.0;
            for (&x, &y) in a_row.iter().zip(b_row.iter()) {
                acc += x * y;
            }
            *c_val += acc;
        }
    }
}

// C += A^T * B with A [k,m], B [k,n].
fn mm_tn(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    for p in 0..k {
        let a_row = &a[p * m..(p + 1) * m];
        let b_row = &b[p * n..(p + 1) * n];
        for (i, &a_pi) in a_row.iter().enumerate() {
            if a_pi == 0.0 {
                continue;
            }
            let c_row = &mut c[i * n..(i + 1) * n];
            for (c_val, &b_val) in c_row.iter_mut().zip(b_row.iter()) {
                *c_val += a_pi * b_val;
            }
        }
    }
}
