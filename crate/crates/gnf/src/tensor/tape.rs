//! Reverse-mode autodiff over the tensor primitives.
//!
//! A [`Tape`] records every intermediate value; [`Tape::backward`] walks the
//! records once in reverse, so the cost of a gradient is a small multiple of
//! the forward pass. Leaves (inputs and parameters) are not counted as
//! activations; everything else is, which makes the live/peak counters a
//! direct measure of what a training step has to keep around.

use std::rc::Rc;

use crate::error::{GnfError, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TensorId(u32);

impl TensorId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Matmul { a: TensorId, b: TensorId },
    Add { a: TensorId, b: TensorId },
    Sub { a: TensorId, b: TensorId },
    Mul { a: TensorId, b: TensorId },
    Affine { x: TensorId, m: f64 },
    Exp { x: TensorId },
    Ln { x: TensorId },
    Tanh { x: TensorId },
    Sigmoid { x: TensorId },
    Softplus { x: TensorId },
    Relu { x: TensorId },
    Clamp { x: TensorId, lo: f64, hi: f64 },
    RsqrtEps { x: TensorId, eps: f64 },
    ConcatCols { parts: Vec<TensorId> },
    SliceCols { x: TensorId, lo: usize },
    GatherRows { x: TensorId, idx: Rc<Vec<u32>> },
    SegColMean { x: TensorId, ptr: Rc<Vec<u32>> },
    SubSegVec { x: TensorId, v: TensorId, ptr: Rc<Vec<u32>> },
    MulSegVec { x: TensorId, v: TensorId, ptr: Rc<Vec<u32>> },
    AddRowVec { x: TensorId, v: TensorId },
    ColGroupSum { x: TensorId, group: usize },
    SegSoftmax { x: TensorId, ptr: Rc<Vec<u32>> },
    AttnMix { msg: TensorId, alpha: TensorId, recv: Rc<Vec<u32>> },
    SumAll { x: TensorId },
    RowSum { x: TensorId },
    RowMean { x: TensorId },
    SoftmaxMasked { x: TensorId, mask: Rc<Vec<bool>> },
    PairSqdist { a: TensorId, b: TensorId },
}

struct Node {
    val: Tensor,
    op: Op,
    needs: bool,
}

/// Gradients keyed by tape id; populated for leaves that asked for gradients
/// (and consumed internally for everything else).
pub struct Grads {
    slots: Vec<Option<Tensor>>,
}

impl Grads {
    pub fn get(&self, id: TensorId) -> Option<&Tensor> {
        self.slots.get(id.index()).and_then(|s| s.as_ref())
    }

    pub fn take(&mut self, id: TensorId) -> Option<Tensor> {
        self.slots.get_mut(id.index()).and_then(|s| s.take())
    }
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    live: usize,
    peak: usize,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    /// Non-leaf values currently held by the tape.
    pub fn live_activations(&self) -> usize {
        self.live
    }

    /// High-water mark of live activations since the last `reset_peak`.
    pub fn peak_activations(&self) -> usize {
        self.peak
    }

    pub fn reset_peak(&mut self) {
        self.peak = self.live;
    }

    /// Drop all recorded values. The peak counter survives so a caller can
    /// measure the high-water mark across many record/backward/reset cycles.
    pub fn reset(&mut self) {
        self.nodes.clear();
        self.live = 0;
    }

    pub fn leaf(&mut self, val: Tensor, wants_grad: bool) -> TensorId {
        self.push(val, Op::Leaf, wants_grad)
    }

    pub fn value(&self, id: TensorId) -> &Tensor {
        &self.nodes[id.index()].val
    }

    pub fn shape(&self, id: TensorId) -> (usize, usize) {
        self.value(id).shape()
    }

    fn push(&mut self, val: Tensor, op: Op, needs: bool) -> TensorId {
        if !matches!(op, Op::Leaf) {
            self.live += 1;
            self.peak = self.peak.max(self.live);
        }
        let id = TensorId(self.nodes.len() as u32);
        self.nodes.push(Node { val, op, needs });
        id
    }

    fn needs(&self, id: TensorId) -> bool {
        self.nodes[id.index()].needs
    }

    fn record1(&mut self, val: Tensor, x: TensorId, op: Op) -> TensorId {
        let needs = self.needs(x);
        self.push(val, op, needs)
    }

    fn record2(&mut self, val: Tensor, a: TensorId, b: TensorId, op: Op) -> TensorId {
        let needs = self.needs(a) || self.needs(b);
        self.push(val, op, needs)
    }

    // ── recorded primitives (same kernels as the plain tensor path) ─────

    pub fn matmul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let v = self.value(a).matmul(self.value(b))?;
        Ok(self.record2(v, a, b, Op::Matmul { a, b }))
    }

    pub fn add(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let v = self.value(a).add(self.value(b))?;
        Ok(self.record2(v, a, b, Op::Add { a, b }))
    }

    pub fn sub(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let v = self.value(a).sub(self.value(b))?;
        Ok(self.record2(v, a, b, Op::Sub { a, b }))
    }

    pub fn mul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let v = self.value(a).mul(self.value(b))?;
        Ok(self.record2(v, a, b, Op::Mul { a, b }))
    }

    pub fn affine(&mut self, x: TensorId, m: f64, c: f64) -> TensorId {
        let v = self.value(x).affine(m, c);
        self.record1(v, x, Op::Affine { x, m })
    }

    pub fn exp(&mut self, x: TensorId) -> Result<TensorId> {
        let v = self.value(x).exp()?;
        Ok(self.record1(v, x, Op::Exp { x }))
    }

    pub fn ln(&mut self, x: TensorId) -> Result<TensorId> {
        let v = self.value(x).ln()?;
        Ok(self.record1(v, x, Op::Ln { x }))
    }

    pub fn tanh(&mut self, x: TensorId) -> TensorId {
        let v = self.value(x).tanh();
        self.record1(v, x, Op::Tanh { x })
    }

    pub fn sigmoid(&mut self, x: TensorId) -> TensorId {
        let v = self.value(x).sigmoid();
        self.record1(v, x, Op::Sigmoid { x })
    }

    pub fn softplus(&mut self, x: TensorId) -> TensorId {
        let v = self.value(x).softplus();
        self.record1(v, x, Op::Softplus { x })
    }

    pub fn relu(&mut self, x: TensorId) -> TensorId {
        let v = self.value(x).relu();
        self.record1(v, x, Op::Relu { x })
    }

    pub fn clamp(&mut self, x: TensorId, lo: f64, hi: f64) -> TensorId {
        let v = self.value(x).clamp_vals(lo, hi);
        self.record1(v, x, Op::Clamp { x, lo, hi })
    }

    pub fn rsqrt_eps(&mut self, x: TensorId, eps: f64) -> Result<TensorId> {
        let v = self.value(x).rsqrt_eps(eps)?;
        Ok(self.record1(v, x, Op::RsqrtEps { x, eps }))
    }

    pub fn concat_cols(&mut self, parts: &[TensorId]) -> Result<TensorId> {
        let vals: Vec<&Tensor> = parts.iter().map(|&p| self.value(p)).collect();
        let v = Tensor::concat_cols(&vals)?;
        let needs = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(v, Op::ConcatCols { parts: parts.to_vec() }, needs))
    }

    pub fn slice_cols(&mut self, x: TensorId, lo: usize, hi: usize) -> Result<TensorId> {
        let v = self.value(x).slice_cols(lo, hi)?;
        Ok(self.record1(v, x, Op::SliceCols { x, lo }))
    }

    pub fn gather_rows(&mut self, x: TensorId, idx: Rc<Vec<u32>>) -> Result<TensorId> {
        let v = self.value(x).gather_rows(&idx)?;
        Ok(self.record1(v, x, Op::GatherRows { x, idx }))
    }

    pub fn seg_col_mean(&mut self, x: TensorId, ptr: Rc<Vec<u32>>) -> Result<TensorId> {
        let v = self.value(x).seg_col_mean(&ptr)?;
        Ok(self.record1(v, x, Op::SegColMean { x, ptr }))
    }

    pub fn sub_segvec(&mut self, x: TensorId, v: TensorId, ptr: Rc<Vec<u32>>) -> Result<TensorId> {
        let out = self.value(x).sub_segvec(self.value(v), &ptr)?;
        Ok(self.record2(out, x, v, Op::SubSegVec { x, v, ptr }))
    }

    pub fn mul_segvec(&mut self, x: TensorId, v: TensorId, ptr: Rc<Vec<u32>>) -> Result<TensorId> {
        let out = self.value(x).mul_segvec(self.value(v), &ptr)?;
        Ok(self.record2(out, x, v, Op::MulSegVec { x, v, ptr }))
    }

    pub fn add_rowvec(&mut self, x: TensorId, v: TensorId) -> Result<TensorId> {
        let out = self.value(x).add_rowvec(self.value(v))?;
        Ok(self.record2(out, x, v, Op::AddRowVec { x, v }))
    }

    pub fn col_group_sum(&mut self, x: TensorId, group: usize) -> Result<TensorId> {
        let v = self.value(x).col_group_sum(group)?;
        Ok(self.record1(v, x, Op::ColGroupSum { x, group }))
    }

    pub fn seg_softmax(&mut self, x: TensorId, ptr: Rc<Vec<u32>>) -> Result<TensorId> {
        let v = self.value(x).seg_softmax(&ptr)?;
        Ok(self.record1(v, x, Op::SegSoftmax { x, ptr }))
    }

    pub fn attn_mix(
        &mut self,
        msg: TensorId,
        alpha: TensorId,
        recv: Rc<Vec<u32>>,
        n: usize,
    ) -> Result<TensorId> {
        let v = self.value(msg).attn_mix(self.value(alpha), &recv, n)?;
        Ok(self.record2(v, msg, alpha, Op::AttnMix { msg, alpha, recv }))
    }

    pub fn sum_all(&mut self, x: TensorId) -> TensorId {
        let v = self.value(x).sum_all();
        self.record1(v, x, Op::SumAll { x })
    }

    pub fn row_sum(&mut self, x: TensorId) -> TensorId {
        let v = self.value(x).row_sum();
        self.record1(v, x, Op::RowSum { x })
    }

    pub fn row_mean(&mut self, x: TensorId) -> TensorId {
        let v = self.value(x).row_mean();
        self.record1(v, x, Op::RowMean { x })
    }

    pub fn softmax_masked(&mut self, x: TensorId, mask: Rc<Vec<bool>>) -> Result<TensorId> {
        let v = self.value(x).softmax_masked(&mask)?;
        Ok(self.record1(v, x, Op::SoftmaxMasked { x, mask }))
    }

    pub fn pairwise_sqdist(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let v = self.value(a).pairwise_sqdist(self.value(b))?;
        Ok(self.record2(v, a, b, Op::PairSqdist { a, b }))
    }

    // ── backward ─────────────────────────────────────────────────────────

    /// Convenience for a scalar loss: seeds with d(loss)/d(loss) = 1.
    pub fn backward_scalar(&mut self, loss: TensorId) -> Result<Grads> {
        if self.shape(loss) != (1, 1) {
            return Err(GnfError::Shape(format!(
                "backward_scalar on {}x{} value",
                self.shape(loss).0,
                self.shape(loss).1
            )));
        }
        self.backward(&[(loss, Tensor::scalar_of(1.0))])
    }

    /// Reverse sweep from the given seed cotangents. Multiple seeds let a
    /// caller start the chain rule mid-graph (several outputs at once).
    /// Gradients for non-leaf nodes are consumed during the sweep; leaf
    /// gradients remain in the returned [`Grads`].
    pub fn backward(&mut self, seeds: &[(TensorId, Tensor)]) -> Result<Grads> {
        let mut slots: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        for (id, g) in seeds {
            if g.shape() != self.shape(*id) {
                return Err(GnfError::Shape(format!(
                    "seed gradient {}x{} for value {}x{}",
                    g.shape().0,
                    g.shape().1,
                    self.shape(*id).0,
                    self.shape(*id).1
                )));
            }
            acc(&mut slots[id.index()], g.clone());
        }

        for idx in (0..self.nodes.len()).rev() {
            if !self.nodes[idx].needs {
                slots[idx] = None;
                continue;
            }
            if matches!(self.nodes[idx].op, Op::Leaf) {
                continue;
            }
            let g = match slots[idx].take() {
                Some(g) => g,
                None => continue,
            };
            self.backprop_node(idx, &g, &mut slots)?;
        }
        Ok(Grads { slots })
    }

    fn backprop_node(&self, idx: usize, g: &Tensor, slots: &mut [Option<Tensor>]) -> Result<()> {
        let node = &self.nodes[idx];
        let out = &node.val;
        match &node.op {
            Op::Leaf => {}
            Op::Matmul { a, b } => {
                if self.needs(*a) {
                    acc(&mut slots[a.index()], g.matmul_nt(self.value(*b))?);
                }
                if self.needs(*b) {
                    acc(&mut slots[b.index()], self.value(*a).matmul_tn(g)?);
                }
            }
            Op::Add { a, b } => {
                if self.needs(*a) {
                    acc(&mut slots[a.index()], g.clone());
                }
                if self.needs(*b) {
                    acc(&mut slots[b.index()], g.clone());
                }
            }
            Op::Sub { a, b } => {
                if self.needs(*a) {
                    acc(&mut slots[a.index()], g.clone());
                }
                if self.needs(*b) {
                    acc(&mut slots[b.index()], g.affine(-1.0, 0.0));
                }
            }
            Op::Mul { a, b } => {
                if self.needs(*a) {
                    acc(&mut slots[a.index()], g.mul(self.value(*b))?);
                }
                if self.needs(*b) {
                    acc(&mut slots[b.index()], g.mul(self.value(*a))?);
                }
            }
            Op::Affine { x, m } => {
                acc(&mut slots[x.index()], g.affine(*m, 0.0));
            }
            Op::Exp { x } => {
                // out = exp(x), d = g * out
                acc(&mut slots[x.index()], g.mul(out)?);
            }
            Op::Ln { x } => {
                let xv = self.value(*x);
                let d = g.zip(xv, |gg, xx| gg / xx);
                acc(&mut slots[x.index()], d);
            }
            Op::Tanh { x } => {
                let d = g.zip(out, |gg, y| gg * (1.0 - y * y));
                acc(&mut slots[x.index()], d);
            }
            Op::Sigmoid { x } => {
                let d = g.zip(out, |gg, y| gg * y * (1.0 - y));
                acc(&mut slots[x.index()], d);
            }
            Op::Softplus { x } => {
                let xv = self.value(*x);
                let d = g.zip(&xv.sigmoid(), |gg, s| gg * s);
                acc(&mut slots[x.index()], d);
            }
            Op::Relu { x } => {
                let xv = self.value(*x);
                let d = g.zip(xv, |gg, xx| if xx > 0.0 { gg } else { 0.0 });
                acc(&mut slots[x.index()], d);
            }
            Op::Clamp { x, lo, hi } => {
                let xv = self.value(*x);
                let (lo, hi) = (*lo, *hi);
                let d = g.zip(xv, |gg, xx| if xx > lo && xx < hi { gg } else { 0.0 });
                acc(&mut slots[x.index()], d);
            }
            Op::RsqrtEps { x, eps } => {
                // out = (x+eps)^(-1/2), d/dx = -out^3 / 2
                let _ = eps;
                let d = g.zip(out, |gg, y| gg * -0.5 * y * y * y);
                acc(&mut slots[x.index()], d);
            }
            Op::ConcatCols { parts } => {
                let mut at = 0;
                for p in parts {
                    let w = self.value(*p).cols();
                    if self.needs(*p) {
                        acc(&mut slots[p.index()], g.slice_cols(at, at + w)?);
                    }
                    at += w;
                }
            }
            Op::SliceCols { x, lo } => {
                let (r, c) = self.shape(*x);
                let mut d = Tensor::zeros(r, c);
                for i in 0..r {
                    d.row_mut(i)[*lo..*lo + g.cols()].copy_from_slice(g.row(i));
                }
                acc(&mut slots[x.index()], d);
            }
            Op::GatherRows { x, idx: rows } => {
                let (r, c) = self.shape(*x);
                let mut d = Tensor::zeros(r, c);
                for (e, &src) in rows.iter().enumerate() {
                    let dr = d.row_mut(src as usize);
                    for (o, &gg) in dr.iter_mut().zip(g.row(e)) {
                        *o += gg;
                    }
                }
                acc(&mut slots[x.index()], d);
            }
            Op::SegColMean { x, ptr } => {
                let (r, c) = self.shape(*x);
                let mut d = Tensor::zeros(r, c);
                for seg in 0..ptr.len() - 1 {
                    let (lo, hi) = (ptr[seg] as usize, ptr[seg + 1] as usize);
                    let inv = 1.0 / (hi - lo) as f64;
                    for row in lo..hi {
                        for (o, &gg) in d.row_mut(row).iter_mut().zip(g.row(seg)) {
                            *o += gg * inv;
                        }
                    }
                }
                acc(&mut slots[x.index()], d);
            }
            Op::SubSegVec { x, v, ptr } => {
                if self.needs(*x) {
                    acc(&mut slots[x.index()], g.clone());
                }
                if self.needs(*v) {
                    acc(&mut slots[v.index()], seg_rowsum(g, ptr).affine(-1.0, 0.0));
                }
            }
            Op::MulSegVec { x, v, ptr } => {
                if self.needs(*x) {
                    acc(&mut slots[x.index()], g.mul_segvec(self.value(*v), ptr)?);
                }
                if self.needs(*v) {
                    let gx = g.mul(self.value(*x))?;
                    acc(&mut slots[v.index()], seg_rowsum(&gx, ptr));
                }
            }
            Op::AddRowVec { x, v } => {
                if self.needs(*x) {
                    acc(&mut slots[x.index()], g.clone());
                }
                if self.needs(*v) {
                    let mut d = Tensor::zeros(1, g.cols());
                    for i in 0..g.rows() {
                        for (o, &gg) in d.row_mut(0).iter_mut().zip(g.row(i)) {
                            *o += gg;
                        }
                    }
                    acc(&mut slots[v.index()], d);
                }
            }
            Op::ColGroupSum { x, group } => {
                let (r, c) = self.shape(*x);
                let mut d = Tensor::zeros(r, c);
                for i in 0..r {
                    let g_row = g.row(i);
                    let d_row = d.row_mut(i);
                    for (h, &gg) in g_row.iter().enumerate() {
                        for o in &mut d_row[h * group..(h + 1) * group] {
                            *o = gg;
                        }
                    }
                }
                acc(&mut slots[x.index()], d);
            }
            Op::SegSoftmax { x, ptr } => {
                // Per segment and column: dx = y * (g - <g, y>).
                let (r, c) = self.shape(*x);
                let mut d = Tensor::zeros(r, c);
                for seg in 0..ptr.len() - 1 {
                    let (lo, hi) = (ptr[seg] as usize, ptr[seg + 1] as usize);
                    for col in 0..c {
                        let mut dot = 0.0;
                        for row in lo..hi {
                            dot += g.get(row, col) * out.get(row, col);
                        }
                        for row in lo..hi {
                            let y = out.get(row, col);
                            d.set(row, col, y * (g.get(row, col) - dot));
                        }
                    }
                }
                acc(&mut slots[x.index()], d);
            }
            Op::AttnMix { msg, alpha, recv } => {
                let msg_v = self.value(*msg);
                let alpha_v = self.value(*alpha);
                let dm = msg_v.cols();
                let heads = alpha_v.cols();
                let need_msg = self.needs(*msg);
                let need_alpha = self.needs(*alpha);
                let mut d_msg = Tensor::zeros(msg_v.rows(), dm);
                let mut d_alpha = Tensor::zeros(alpha_v.rows(), heads);
                for e in 0..msg_v.rows() {
                    let v = recv[e] as usize;
                    let g_row = g.row(v);
                    for h in 0..heads {
                        let block = &g_row[h * dm..(h + 1) * dm];
                        if need_msg {
                            let a = alpha_v.get(e, h);
                            for (o, &gg) in d_msg.row_mut(e).iter_mut().zip(block) {
                                *o += a * gg;
                            }
                        }
                        if need_alpha {
                            let dot: f64 =
                                msg_v.row(e).iter().zip(block).map(|(&m, &gg)| m * gg).sum();
                            d_alpha.set(e, h, dot);
                        }
                    }
                }
                if need_msg {
                    acc(&mut slots[msg.index()], d_msg);
                }
                if need_alpha {
                    acc(&mut slots[alpha.index()], d_alpha);
                }
            }
            Op::SumAll { x } => {
                let (r, c) = self.shape(*x);
                acc(&mut slots[x.index()], Tensor::filled(r, c, g.scalar()));
            }
            Op::RowSum { x } => {
                let (r, c) = self.shape(*x);
                let mut d = Tensor::zeros(r, c);
                for i in 0..r {
                    let gg = g.get(i, 0);
                    for o in d.row_mut(i) {
                        *o = gg;
                    }
                }
                acc(&mut slots[x.index()], d);
            }
            Op::RowMean { x } => {
                let (r, c) = self.shape(*x);
                let inv = 1.0 / c as f64;
                let mut d = Tensor::zeros(r, c);
                for i in 0..r {
                    let gg = g.get(i, 0) * inv;
                    for o in d.row_mut(i) {
                        *o = gg;
                    }
                }
                acc(&mut slots[x.index()], d);
            }
            Op::SoftmaxMasked { x, mask } => {
                let (r, c) = self.shape(*x);
                let mut d = Tensor::zeros(r, c);
                for i in 0..r {
                    let m_row = &mask[i * c..(i + 1) * c];
                    let mut dot = 0.0;
                    for j in 0..c {
                        if m_row[j] {
                            dot += g.get(i, j) * out.get(i, j);
                        }
                    }
                    for j in 0..c {
                        if m_row[j] {
                            let y = out.get(i, j);
                            d.set(i, j, y * (g.get(i, j) - dot));
                        }
                    }
                }
                acc(&mut slots[x.index()], d);
            }
            Op::PairSqdist { a, b } => {
                let av = self.value(*a);
                let bv = self.value(*b);
                let k = av.cols();
                let need_a = self.needs(*a);
                let need_b = self.needs(*b);
                let mut da = Tensor::zeros(av.rows(), k);
                let mut db = Tensor::zeros(bv.rows(), k);
                for i in 0..av.rows() {
                    for j in 0..bv.rows() {
                        let gg = 2.0 * g.get(i, j);
                        if gg == 0.0 {
                            continue;
                        }
                        for kk in 0..k {
                            let diff = av.get(i, kk) - bv.get(j, kk);
                            if need_a {
                                da.data_mut()[i * k + kk] += gg * diff;
                            }
                            if need_b {
                                db.data_mut()[j * k + kk] -= gg * diff;
                            }
                        }
                    }
                }
                if need_a {
                    acc(&mut slots[a.index()], da);
                }
                if need_b {
                    acc(&mut slots[b.index()], db);
                }
            }
        }
        Ok(())
    }
}

fn acc(slot: &mut Option<Tensor>, t: Tensor) {
    match slot {
        None => *slot = Some(t),
        Some(s) => s.add_assign(&t),
    }
}

/// Column sums within each row segment: R x C -> S x C.
fn seg_rowsum(g: &Tensor, ptr: &[u32]) -> Tensor {
    let mut out = Tensor::zeros(ptr.len() - 1, g.cols());
    for seg in 0..ptr.len() - 1 {
        for row in ptr[seg] as usize..ptr[seg + 1] as usize {
            for (o, &gg) in out.row_mut(seg).iter_mut().zip(g.row(row)) {
                *o += gg;
            }
        }
    }
    out
}

pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub tol: f64,
    /// "input {i} entry {j}" of the worst-offending coordinate.
    pub worst: String,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_err <= self.tol
    }
}

/// Central finite differences against the tape gradient for a scalar-valued
/// function of the given inputs. Relative error uses max(1, |a|, |n|) as the
/// denominator so tiny gradients do not blow the ratio up.
pub fn gradient_check<F>(
    mut f: F,
    inputs: &[Tensor],
    eps: f64,
    tol: f64,
) -> Result<GradCheckReport>
where
    F: FnMut(&mut Tape, &[TensorId]) -> Result<TensorId>,
{
    let eval = |f: &mut F, inputs: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let ids: Vec<TensorId> = inputs.iter().map(|t| tape.leaf(t.clone(), false)).collect();
        let loss = f(&mut tape, &ids)?;
        Ok(tape.value(loss).scalar())
    };

    let mut tape = Tape::new();
    let ids: Vec<TensorId> = inputs.iter().map(|t| tape.leaf(t.clone(), true)).collect();
    let loss = f(&mut tape, &ids)?;
    if tape.shape(loss) != (1, 1) {
        return Err(GnfError::Shape(format!(
            "gradient_check needs a scalar loss, got {}x{}",
            tape.shape(loss).0,
            tape.shape(loss).1
        )));
    }
    let grads = tape.backward_scalar(loss)?;

    let mut max_rel = 0.0_f64;
    let mut worst = String::from("none");
    let mut probe: Vec<Tensor> = inputs.to_vec();
    for (i, input) in inputs.iter().enumerate() {
        let analytic = grads.get(ids[i]).cloned().unwrap_or_else(|| {
            Tensor::zeros(input.rows(), input.cols())
        });
        for j in 0..input.len() {
            let orig = input.data()[j];
            probe[i].data_mut()[j] = orig + eps;
            let lp = eval(&mut f, &probe)?;
            probe[i].data_mut()[j] = orig - eps;
            let lm = eval(&mut f, &probe)?;
            probe[i].data_mut()[j] = orig;
            let num = (lp - lm) / (2.0 * eps);
            let ana = analytic.data()[j];
            let rel = (ana - num).abs() / 1.0_f64.max(ana.abs()).max(num.abs());
            if rel > max_rel {
                max_rel = rel;
                worst = format!("input {i} entry {j} (analytic {ana:.3e}, numeric {num:.3e})");
            }
        }
    }
    Ok(GradCheckReport { max_rel_err: max_rel, tol, worst })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    const EPS: f64 = 1e-5;
    const TOL: f64 = 1e-6;

    fn check<F>(f: F, inputs: &[Tensor])
    where
        F: FnMut(&mut Tape, &[TensorId]) -> Result<TensorId>,
    {
        let report = gradient_check(f, inputs, EPS, TOL).unwrap();
        assert!(report.passed(), "max rel err {} at {}", report.max_rel_err, report.worst);
    }

    #[test]
    fn sigmoid_grad_at_zero_is_a_quarter() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::scalar_of(0.0), true);
        let y = tape.sigmoid(x);
        let mut grads = tape.backward_scalar(y).unwrap();
        assert_eq!(grads.take(x).unwrap().scalar(), 0.25);
    }

    #[test]
    fn matmul_backward_hand_jacobian() {
        // loss = sum(A B): dA[i][k] = sum_j B[k][j], dB[k][j] = sum_i A[i][k].
        let a = Tensor::from_vec(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let b = Tensor::from_vec(2, 2, vec![5.0, 6.0, 7.0, 8.0]).unwrap();
        let mut tape = Tape::new();
        let ia = tape.leaf(a, true);
        let ib = tape.leaf(b, true);
        let c = tape.matmul(ia, ib).unwrap();
        let loss = tape.sum_all(c);
        let mut grads = tape.backward_scalar(loss).unwrap();
        assert_eq!(grads.take(ia).unwrap().data(), &[11.0, 15.0, 11.0, 15.0]);
        assert_eq!(grads.take(ib).unwrap().data(), &[4.0, 4.0, 6.0, 6.0]);
    }

    #[test]
    fn elementwise_and_affine_grads() {
        let mut rng = Rng::new(11);
        let a = Tensor::randn(3, 4, 1.0, &mut rng);
        let b = Tensor::randn(3, 4, 1.0, &mut rng);
        check(
            |t, ids| {
                let s = t.add(ids[0], ids[1])?;
                let d = t.sub(s, ids[1])?;
                let m = t.mul(d, ids[0])?;
                let aff = t.affine(m, 0.7, -0.3);
                Ok(t.sum_all(aff))
            },
            &[a, b],
        );
    }

    #[test]
    fn unary_grads() {
        let mut rng = Rng::new(12);
        // Keep away from relu/clamp kinks and ln domain edges.
        let x = Tensor::from_fn(2, 3, |i, j| 0.4 + 0.3 * (i as f64) + 0.2 * (j as f64));
        let y = Tensor::randn(2, 3, 0.5, &mut rng);
        check(
            |t, ids| {
                let e = t.exp(ids[0])?;
                let l = t.ln(e)?;
                let th = t.tanh(l);
                let sg = t.sigmoid(th);
                let sp = t.softplus(sg);
                let r = t.relu(sp);
                let rs = t.rsqrt_eps(r, 1e-5)?;
                Ok(t.sum_all(rs))
            },
            &[x.clone()],
        );
        // Softplus at extremes: value max(x,0)-ish, gradient the logistic.
        let mut tape = Tape::new();
        let v = tape.leaf(Tensor::from_vec(1, 3, vec![-800.0, 0.0, 800.0]).unwrap(), true);
        let sp = tape.softplus(v);
        assert_eq!(tape.value(sp).data()[0], 0.0);
        assert!((tape.value(sp).data()[1] - 2f64.ln()).abs() < 1e-15);
        assert_eq!(tape.value(sp).data()[2], 800.0);
        let loss = tape.sum_all(sp);
        let mut grads = tape.backward_scalar(loss).unwrap();
        assert_eq!(grads.take(v).unwrap().data(), &[0.0, 0.5, 1.0]);
        check(
            |t, ids| {
                let c = t.clamp(ids[0], -0.2, 0.2);
                let m = t.mul(c, ids[0])?;
                Ok(t.sum_all(m))
            },
            &[y],
        );
        // Clamp passes gradient only strictly inside the interval.
        let mut tape = Tape::new();
        let v = tape.leaf(Tensor::from_vec(1, 3, vec![-0.5, 0.0, 0.5]).unwrap(), true);
        let c = tape.clamp(v, -0.2, 0.2);
        let loss = tape.sum_all(c);
        let mut grads = tape.backward_scalar(loss).unwrap();
        assert_eq!(grads.take(v).unwrap().data(), &[0.0, 1.0, 0.0]);
        let _ = x;
    }

    #[test]
    fn structure_grads() {
        let mut rng = Rng::new(13);
        let a = Tensor::randn(3, 2, 1.0, &mut rng);
        let b = Tensor::randn(3, 3, 1.0, &mut rng);
        check(
            |t, ids| {
                let cat = t.concat_cols(&[ids[0], ids[1], ids[0]])?;
                let sl = t.slice_cols(cat, 1, 6)?;
                let gathered = t.gather_rows(sl, Rc::new(vec![2, 0, 0, 1]))?;
                let sq = t.mul(gathered, gathered)?;
                Ok(t.sum_all(sq))
            },
            &[a, b],
        );
    }

    #[test]
    fn segment_grads() {
        let mut rng = Rng::new(14);
        let x = Tensor::randn(5, 3, 1.0, &mut rng);
        let v = Tensor::randn(2, 3, 1.0, &mut rng);
        let ptr = Rc::new(vec![0u32, 2, 5]);
        check(
            {
                let ptr = Rc::clone(&ptr);
                move |t, ids| {
                    let mu = t.seg_col_mean(ids[0], Rc::clone(&ptr))?;
                    let centered = t.sub_segvec(ids[0], mu, Rc::clone(&ptr))?;
                    let scaled = t.mul_segvec(centered, ids[1], Rc::clone(&ptr))?;
                    let sq = t.mul(scaled, scaled)?;
                    Ok(t.sum_all(sq))
                }
            },
            &[x.clone(), v],
        );
        let row = Tensor::randn(1, 3, 1.0, &mut rng);
        check(
            |t, ids| {
                let shifted = t.add_rowvec(ids[0], ids[1])?;
                let sq = t.mul(shifted, shifted)?;
                Ok(t.sum_all(sq))
            },
            &[x, row],
        );
    }

    #[test]
    fn softmax_and_reduction_grads() {
        let mut rng = Rng::new(15);
        let x = Tensor::randn(6, 2, 1.5, &mut rng);
        let ptr = Rc::new(vec![0u32, 1, 4, 6]);
        check(
            {
                let ptr = Rc::clone(&ptr);
                move |t, ids| {
                    let sm = t.seg_softmax(ids[0], Rc::clone(&ptr))?;
                    let w = t.mul(sm, ids[0])?;
                    Ok(t.sum_all(w))
                }
            },
            &[x.clone()],
        );
        let dense = Tensor::randn(3, 4, 1.5, &mut rng);
        let mask: Rc<Vec<bool>> = Rc::new((0..12).map(|i| i % 4 != 2).collect());
        check(
            {
                let mask = Rc::clone(&mask);
                move |t, ids| {
                    let sm = t.softmax_masked(ids[0], Rc::clone(&mask))?;
                    let w = t.mul(sm, ids[0])?;
                    let rs = t.row_sum(w);
                    let rm = t.row_mean(rs);
                    Ok(t.sum_all(rm))
                }
            },
            &[dense],
        );
        check(
            |t, ids| {
                let grouped = t.col_group_sum(ids[0], 2)?;
                let sq = t.mul(grouped, grouped)?;
                Ok(t.sum_all(sq))
            },
            &[x],
        );
    }

    #[test]
    fn attention_mix_grads() {
        let mut rng = Rng::new(16);
        let msg = Tensor::randn(5, 3, 1.0, &mut rng);
        let logits = Tensor::randn(5, 2, 1.0, &mut rng);
        let recv = Rc::new(vec![0u32, 0, 1, 1, 1]);
        let ptr = Rc::new(vec![0u32, 2, 5]);
        check(
            move |t, ids| {
                let alpha = t.seg_softmax(ids[1], Rc::clone(&ptr))?;
                let mixed = t.attn_mix(ids[0], alpha, Rc::clone(&recv), 2)?;
                let sq = t.mul(mixed, mixed)?;
                Ok(t.sum_all(sq))
            },
            &[msg, logits],
        );
    }

    #[test]
    fn pairwise_sqdist_grads_including_aliased() {
        let mut rng = Rng::new(17);
        let a = Tensor::randn(3, 2, 1.0, &mut rng);
        let b = Tensor::randn(4, 2, 1.0, &mut rng);
        check(
            |t, ids| {
                let d = t.pairwise_sqdist(ids[0], ids[1])?;
                Ok(t.sum_all(d))
            },
            &[a.clone(), b],
        );
        // Same tensor on both sides: both contribution paths accumulate.
        check(
            |t, ids| {
                let d = t.pairwise_sqdist(ids[0], ids[0])?;
                let sq = t.mul(d, d)?;
                Ok(t.sum_all(sq))
            },
            &[a],
        );
    }

    #[test]
    fn activation_counters_match_hand_count() {
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::filled(2, 2, 0.1), true);
        let b = tape.leaf(Tensor::filled(2, 2, 0.2), false);
        assert_eq!(tape.live_activations(), 0);
        let s = tape.add(a, b).unwrap();
        let e = tape.exp(s).unwrap();
        let _loss = tape.sum_all(e);
        assert_eq!(tape.live_activations(), 3);
        assert_eq!(tape.peak_activations(), 3);
        tape.reset();
        assert_eq!(tape.live_activations(), 0);
        assert_eq!(tape.peak_activations(), 3);
        // A smaller second graph does not raise the old peak.
        let c = tape.leaf(Tensor::filled(1, 1, 1.0), true);
        let _ = tape.affine(c, 2.0, 0.0);
        assert_eq!(tape.live_activations(), 1);
        assert_eq!(tape.peak_activations(), 3);
    }

    #[test]
    fn backward_from_mid_graph_seed() {
        // Seeding at an interior node continues the chain rule below it.
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::scalar_of(3.0), true);
        let y = tape.mul(x, x).unwrap();
        let seed = Tensor::scalar_of(2.0);
        let mut grads = tape.backward(&[(y, seed)]).unwrap();
        // d(2*x^2)/dx = 4x = 12.
        assert_eq!(grads.take(x).unwrap().scalar(), 12.0);
    }

    #[test]
    fn no_grad_leaves_get_no_gradient() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::scalar_of(1.0), true);
        let frozen = tape.leaf(Tensor::scalar_of(2.0), false);
        let p = tape.mul(x, frozen).unwrap();
        let grads = tape.backward_scalar(p).unwrap();
        assert!(grads.get(frozen).is_none());
        assert_eq!(grads.get(x).unwrap().scalar(), 2.0);
    }
}
