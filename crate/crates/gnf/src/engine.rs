//! One implementation of the model math, two execution modes.
//!
//! [`Plain`] runs the tensor kernels directly; [`Taped`] records the same
//! kernels onto a [`Tape`] for backprop. Model code is written once against
//! [`Engine`], which is what guarantees that an inverse computed without
//! gradients reconstructs bitwise the values the recorded forward produced.

use std::rc::Rc;

use crate::error::{GnfError, Result};
use crate::tensor::{Tape, Tensor, TensorId};

pub trait Engine {
    /// Handle to a value: the tensor itself in plain mode, a tape id when
    /// recording.
    type R: Clone;

    /// Introduce a tensor (parameter or input). `trainable` only matters when
    /// recording.
    fn bind(&mut self, t: &Tensor, trainable: bool) -> Self::R;

    /// Read the concrete value behind a handle.
    fn tensor<'a>(&'a self, r: &'a Self::R) -> &'a Tensor;

    fn matmul(&mut self, a: &Self::R, b: &Self::R) -> Result<Self::R>;
    fn add(&mut self, a: &Self::R, b: &Self::R) -> Result<Self::R>;
    fn sub(&mut self, a: &Self::R, b: &Self::R) -> Result<Self::R>;
    fn mul(&mut self, a: &Self::R, b: &Self::R) -> Result<Self::R>;
    fn affine(&mut self, x: &Self::R, m: f64, c: f64) -> Self::R;
    fn exp(&mut self, x: &Self::R) -> Result<Self::R>;
    fn ln(&mut self, x: &Self::R) -> Result<Self::R>;
    fn tanh(&mut self, x: &Self::R) -> Self::R;
    fn sigmoid(&mut self, x: &Self::R) -> Self::R;
    fn softplus(&mut self, x: &Self::R) -> Self::R;
    fn relu(&mut self, x: &Self::R) -> Self::R;
    fn clamp(&mut self, x: &Self::R, lo: f64, hi: f64) -> Self::R;
    fn rsqrt_eps(&mut self, x: &Self::R, eps: f64) -> Result<Self::R>;
    fn concat_cols(&mut self, parts: &[&Self::R]) -> Result<Self::R>;
    fn slice_cols(&mut self, x: &Self::R, lo: usize, hi: usize) -> Result<Self::R>;
    fn gather_rows(&mut self, x: &Self::R, idx: &Rc<Vec<u32>>) -> Result<Self::R>;
    fn seg_col_mean(&mut self, x: &Self::R, ptr: &Rc<Vec<u32>>) -> Result<Self::R>;
    fn sub_segvec(&mut self, x: &Self::R, v: &Self::R, ptr: &Rc<Vec<u32>>) -> Result<Self::R>;
    fn mul_segvec(&mut self, x: &Self::R, v: &Self::R, ptr: &Rc<Vec<u32>>) -> Result<Self::R>;
    fn add_rowvec(&mut self, x: &Self::R, v: &Self::R) -> Result<Self::R>;
    fn col_group_sum(&mut self, x: &Self::R, group: usize) -> Result<Self::R>;
    fn seg_softmax(&mut self, x: &Self::R, ptr: &Rc<Vec<u32>>) -> Result<Self::R>;
    fn attn_mix(
        &mut self,
        msg: &Self::R,
        alpha: &Self::R,
        recv: &Rc<Vec<u32>>,
        n: usize,
    ) -> Result<Self::R>;
    fn sum_all(&mut self, x: &Self::R) -> Self::R;
    fn row_sum(&mut self, x: &Self::R) -> Self::R;
    fn row_mean(&mut self, x: &Self::R) -> Self::R;
    fn softmax_masked(&mut self, x: &Self::R, mask: &Rc<Vec<bool>>) -> Result<Self::R>;
    fn pairwise_sqdist(&mut self, a: &Self::R, b: &Self::R) -> Result<Self::R>;

    fn shape(&self, r: &Self::R) -> (usize, usize) {
        self.tensor(r).shape()
    }

    /// Reject NaN/inf with a message naming where it appeared.
    fn check_finite(&self, r: &Self::R, what: &str) -> Result<()> {
        if !self.tensor(r).all_finite() {
            return Err(GnfError::Numeric(format!("non-finite values in {what}")));
        }
        Ok(())
    }
}

/// Direct kernel execution; nothing is retained.
#[derive(Default)]
pub struct Plain;

impl Plain {
    pub fn new() -> Self {
        Plain
    }
}

impl Engine for Plain {
    type R = Tensor;

    fn bind(&mut self, t: &Tensor, _trainable: bool) -> Tensor {
        t.clone()
    }

    fn tensor<'a>(&'a self, r: &'a Tensor) -> &'a Tensor {
        r
    }

    fn matmul(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        a.matmul(b)
    }

    fn add(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        a.add(b)
    }

    fn sub(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        a.sub(b)
    }

    fn mul(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        a.mul(b)
    }

    fn affine(&mut self, x: &Tensor, m: f64, c: f64) -> Tensor {
        x.affine(m, c)
    }

    fn exp(&mut self, x: &Tensor) -> Result<Tensor> {
        x.exp()
    }

    fn ln(&mut self, x: &Tensor) -> Result<Tensor> {
        x.ln()
    }

    fn tanh(&mut self, x: &Tensor) -> Tensor {
        x.tanh()
    }

    fn sigmoid(&mut self, x: &Tensor) -> Tensor {
        x.sigmoid()
    }

    fn softplus(&mut self, x: &Tensor) -> Tensor {
        x.softplus()
    }

    fn relu(&mut self, x: &Tensor) -> Tensor {
        x.relu()
    }

    fn clamp(&mut self, x: &Tensor, lo: f64, hi: f64) -> Tensor {
        x.clamp_vals(lo, hi)
    }

    fn rsqrt_eps(&mut self, x: &Tensor, eps: f64) -> Result<Tensor> {
        x.rsqrt_eps(eps)
    }

    fn concat_cols(&mut self, parts: &[&Tensor]) -> Result<Tensor> {
        Tensor::concat_cols(parts)
    }

    fn slice_cols(&mut self, x: &Tensor, lo: usize, hi: usize) -> Result<Tensor> {
        x.slice_cols(lo, hi)
    }

    fn gather_rows(&mut self, x: &Tensor, idx: &Rc<Vec<u32>>) -> Result<Tensor> {
        x.gather_rows(idx)
    }

    fn seg_col_mean(&mut self, x: &Tensor, ptr: &Rc<Vec<u32>>) -> Result<Tensor> {
        x.seg_col_mean(ptr)
    }

    fn sub_segvec(&mut self, x: &Tensor, v: &Tensor, ptr: &Rc<Vec<u32>>) -> Result<Tensor> {
        x.sub_segvec(v, ptr)
    }

    fn mul_segvec(&mut self, x: &Tensor, v: &Tensor, ptr: &Rc<Vec<u32>>) -> Result<Tensor> {
        x.mul_segvec(v, ptr)
    }

    fn add_rowvec(&mut self, x: &Tensor, v: &Tensor) -> Result<Tensor> {
        x.add_rowvec(v)
    }

    fn col_group_sum(&mut self, x: &Tensor, group: usize) -> Result<Tensor> {
        x.col_group_sum(group)
    }

    fn seg_softmax(&mut self, x: &Tensor, ptr: &Rc<Vec<u32>>) -> Result<Tensor> {
        x.seg_softmax(ptr)
    }

    fn attn_mix(
        &mut self,
        msg: &Tensor,
        alpha: &Tensor,
        recv: &Rc<Vec<u32>>,
        n: usize,
    ) -> Result<Tensor> {
        msg.attn_mix(alpha, recv, n)
    }

    fn sum_all(&mut self, x: &Tensor) -> Tensor {
        x.sum_all()
    }

    fn row_sum(&mut self, x: &Tensor) -> Tensor {
        x.row_sum()
    }

    fn row_mean(&mut self, x: &Tensor) -> Tensor {
        x.row_mean()
    }

    fn softmax_masked(&mut self, x: &Tensor, mask: &Rc<Vec<bool>>) -> Result<Tensor> {
        x.softmax_masked(mask)
    }

    fn pairwise_sqdist(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        a.pairwise_sqdist(b)
    }
}

/// Records onto a borrowed tape so gradients can be pulled out afterwards.
pub struct Taped<'t> {
    pub tape: &'t mut Tape,
}

impl<'t> Taped<'t> {
    pub fn new(tape: &'t mut Tape) -> Self {
        Taped { tape }
    }
}

impl Engine for Taped<'_> {
    type R = TensorId;

    fn bind(&mut self, t: &Tensor, trainable: bool) -> TensorId {
        self.tape.leaf(t.clone(), trainable)
    }

    fn tensor<'a>(&'a self, r: &'a TensorId) -> &'a Tensor {
        self.tape.value(*r)
    }

    fn matmul(&mut self, a: &TensorId, b: &TensorId) -> Result<TensorId> {
        self.tape.matmul(*a, *b)
    }

    fn add(&mut self, a: &TensorId, b: &TensorId) -> Result<TensorId> {
        self.tape.add(*a, *b)
    }

    fn sub(&mut self, a: &TensorId, b: &TensorId) -> Result<TensorId> {
        self.tape.sub(*a, *b)
    }

    fn mul(&mut self, a: &TensorId, b: &TensorId) -> Result<TensorId> {
        self.tape.mul(*a, *b)
    }

    fn affine(&mut self, x: &TensorId, m: f64, c: f64) -> TensorId {
        self.tape.affine(*x, m, c)
    }

    fn exp(&mut self, x: &TensorId) -> Result<TensorId> {
        self.tape.exp(*x)
    }

    fn ln(&mut self, x: &TensorId) -> Result<TensorId> {
        self.tape.ln(*x)
    }

    fn tanh(&mut self, x: &TensorId) -> TensorId {
        self.tape.tanh(*x)
    }

    fn sigmoid(&mut self, x: &TensorId) -> TensorId {
        self.tape.sigmoid(*x)
    }

    fn softplus(&mut self, x: &TensorId) -> TensorId {
        self.tape.softplus(*x)
    }

    fn relu(&mut self, x: &TensorId) -> TensorId {
        self.tape.relu(*x)
    }

    fn clamp(&mut self, x: &TensorId, lo: f64, hi: f64) -> TensorId {
        self.tape.clamp(*x, lo, hi)
    }

    fn rsqrt_eps(&mut self, x: &TensorId, eps: f64) -> Result<TensorId> {
        self.tape.rsqrt_eps(*x, eps)
    }

    fn concat_cols(&mut self, parts: &[&TensorId]) -> Result<TensorId> {
        let ids: Vec<TensorId> = parts.iter().map(|&&p| p).collect();
        self.tape.concat_cols(&ids)
    }

    fn slice_cols(&mut self, x: &TensorId, lo: usize, hi: usize) -> Result<TensorId> {
        self.tape.slice_cols(*x, lo, hi)
    }

    fn gather_rows(&mut self, x: &TensorId, idx: &Rc<Vec<u32>>) -> Result<TensorId> {
        self.tape.gather_rows(*x, Rc::clone(idx))
    }

    fn seg_col_mean(&mut self, x: &TensorId, ptr: &Rc<Vec<u32>>) -> Result<TensorId> {
        self.tape.seg_col_mean(*x, Rc::clone(ptr))
    }

    fn sub_segvec(&mut self, x: &TensorId, v: &TensorId, ptr: &Rc<Vec<u32>>) -> Result<TensorId> {
        self.tape.sub_segvec(*x, *v, Rc::clone(ptr))
    }

    fn mul_segvec(&mut self, x: &TensorId, v: &TensorId, ptr: &Rc<Vec<u32>>) -> Result<TensorId> {
        self.tape.mul_segvec(*x, *v, Rc::clone(ptr))
    }

    fn add_rowvec(&mut self, x: &TensorId, v: &TensorId) -> Result<TensorId> {
        self.tape.add_rowvec(*x, *v)
    }

    fn col_group_sum(&mut self, x: &TensorId, group: usize) -> Result<TensorId> {
        self.tape.col_group_sum(*x, group)
    }

    fn seg_softmax(&mut self, x: &TensorId, ptr: &Rc<Vec<u32>>) -> Result<TensorId> {
        self.tape.seg_softmax(*x, Rc::clone(ptr))
    }

    fn attn_mix(
        &mut self,
        msg: &TensorId,
        alpha: &TensorId,
        recv: &Rc<Vec<u32>>,
        n: usize,
    ) -> Result<TensorId> {
        self.tape.attn_mix(*msg, *alpha, Rc::clone(recv), n)
    }

    fn sum_all(&mut self, x: &TensorId) -> TensorId {
        self.tape.sum_all(*x)
    }

    fn row_sum(&mut self, x: &TensorId) -> TensorId {
        self.tape.row_sum(*x)
    }

    fn row_mean(&mut self, x: &TensorId) -> TensorId {
        self.tape.row_mean(*x)
    }

    fn softmax_masked(&mut self, x: &TensorId, mask: &Rc<Vec<bool>>) -> Result<TensorId> {
        self.tape.softmax_masked(*x, Rc::clone(mask))
    }

    fn pairwise_sqdist(&mut self, a: &TensorId, b: &TensorId) -> Result<TensorId> {
        self.tape.pairwise_sqdist(*a, *b)
    }
}
