//! Dense row-major f64 matrices and the primitive operations the tape records.
//!
//! Everything is at most 2-D: scalars are 1x1, vectors are nx1 or 1xn. Each
//! primitive lives here as a pure method on [`Tensor`]; the tape in
//! [`tape`] wraps the same kernels and adds gradients, so the recorded and
//! un-recorded execution paths cannot drift apart.

mod tape;

pub use tape::{gradient_check, GradCheckReport, Grads, Tape, TensorId};

use crate::error::{GnfError, Result};
use crate::rng::Rng;

/// Largest argument `exp` accepts before it is rejected as a range error.
pub const EXP_MAX: f64 = 700.0;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

fn shape_err(op: &str, a: (usize, usize), b: (usize, usize)) -> GnfError {
    GnfError::Shape(format!("{op}: {}x{} vs {}x{}", a.0, a.1, b.0, b.1))
}

impl Tensor {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn filled(rows: usize, cols: usize, v: f64) -> Self {
        Tensor { rows, cols, data: vec![v; rows * cols] }
    }

    pub fn scalar_of(v: f64) -> Self {
        Tensor { rows: 1, cols: 1, data: vec![v] }
    }

    pub fn eye(n: usize) -> Self {
        let mut t = Tensor::zeros(n, n);
        for i in 0..n {
            t.set(i, i, 1.0);
        }
        t
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(GnfError::Shape(format!(
                "from_vec: {rows}x{cols} needs {} values, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Tensor { rows, cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Tensor { rows, cols, data }
    }

    /// I.i.d. normal entries with the given standard deviation.
    pub fn randn(rows: usize, cols: usize, std: f64, rng: &mut Rng) -> Self {
        let data = (0..rows * cols).map(|_| rng.normal() * std).collect();
        Tensor { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        debug_assert!(i < self.rows && j < self.cols);
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        debug_assert!(i < self.rows && j < self.cols);
        self.data[i * self.cols + j] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    /// Value of a 1x1 tensor.
    pub fn scalar(&self) -> f64 {
        assert_eq!((self.rows, self.cols), (1, 1), "scalar() on {}x{}", self.rows, self.cols);
        self.data[0]
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        assert_eq!(self.shape(), other.shape());
        self.data
            .iter()
            .zip(&other.data)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    fn same_shape(&self, other: &Tensor, op: &str) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(shape_err(op, self.shape(), other.shape()));
        }
        Ok(())
    }

    // ── elementwise ──────────────────────────────────────────────────────

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.same_shape(other, "add")?;
        Ok(self.zip(other, |a, b| a + b))
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.same_shape(other, "sub")?;
        Ok(self.zip(other, |a, b| a - b))
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        self.same_shape(other, "mul")?;
        Ok(self.zip(other, |a, b| a * b))
    }

    pub fn add_assign(&mut self, other: &Tensor) {
        assert_eq!(self.shape(), other.shape());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    /// Elementwise m*x + c.
    pub fn affine(&self, m: f64, c: f64) -> Tensor {
        self.map(|x| m * x + c)
    }

    pub fn exp(&self) -> Result<Tensor> {
        for &x in &self.data {
            if x > EXP_MAX {
                return Err(GnfError::Numeric(format!("exp argument {x} exceeds {EXP_MAX}")));
            }
        }
        Ok(self.map(f64::exp))
    }

    pub fn ln(&self) -> Result<Tensor> {
        for &x in &self.data {
            if x <= 0.0 {
                return Err(GnfError::Numeric(format!("log of non-positive value {x}")));
            }
        }
        Ok(self.map(f64::ln))
    }

    pub fn tanh(&self) -> Tensor {
        self.map(f64::tanh)
    }

    /// Numerically safe logistic function; never overflows in f64.
    pub fn sigmoid(&self) -> Tensor {
        self.map(|x| {
            if x >= 0.0 {
                1.0 / (1.0 + (-x).exp())
            } else {
                let e = x.exp();
                e / (1.0 + e)
            }
        })
    }

    pub fn relu(&self) -> Tensor {
        // max(NaN, 0) would return 0 and silently swallow NaN.
        self.map(|x| if x > 0.0 || x.is_nan() { x } else { 0.0 })
    }

    /// ln(1 + e^x), evaluated as max(x,0) + ln1p(e^-|x|) so neither tail
    /// overflows or loses precision.
    pub fn softplus(&self) -> Tensor {
        self.map(|x| {
            if x.is_nan() {
                return x;
            }
            x.max(0.0) + (-x.abs()).exp().ln_1p()
        })
    }

    pub fn clamp_vals(&self, lo: f64, hi: f64) -> Tensor {
        self.map(|x| x.clamp(lo, hi))
    }

    /// Elementwise 1/sqrt(x + eps); the variance-to-inverse-scale step of
    /// feature normalization.
    pub fn rsqrt_eps(&self, eps: f64) -> Result<Tensor> {
        for &x in &self.data {
            if x + eps <= 0.0 {
                return Err(GnfError::Numeric(format!("rsqrt of non-positive value {}", x + eps)));
            }
        }
        Ok(self.map(|x| 1.0 / (x + eps).sqrt()))
    }

    fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    fn zip(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
        Tensor {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        }
    }

    // ── matrix products ──────────────────────────────────────────────────

    /// self (n x k) times other (k x m).
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        if self.cols != other.rows {
            return Err(shape_err("matmul", self.shape(), other.shape()));
        }
        let (n, k, m) = (self.rows, self.cols, other.cols);
        let mut out = vec![0.0; n * m];
        for i in 0..n {
            let a_row = &self.data[i * k..(i + 1) * k];
            let o_row = &mut out[i * m..(i + 1) * m];
            for (kk, &a) in a_row.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let b_row = &other.data[kk * m..(kk + 1) * m];
                for (o, &b) in o_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        Ok(Tensor { rows: n, cols: m, data: out })
    }

    /// self (n x k) times other^T (m x k) -> n x m.
    pub fn matmul_nt(&self, other: &Tensor) -> Result<Tensor> {
        if self.cols != other.cols {
            return Err(shape_err("matmul_nt", self.shape(), other.shape()));
        }
        let (n, k, m) = (self.rows, self.cols, other.rows);
        let mut out = Vec::with_capacity(n * m);
        for i in 0..n {
            let a_row = &self.data[i * k..(i + 1) * k];
            for j in 0..m {
                let b_row = &other.data[j * k..(j + 1) * k];
                let dot: f64 = a_row.iter().zip(b_row).map(|(&a, &b)| a * b).sum();
                out.push(dot);
            }
        }
        Ok(Tensor { rows: n, cols: m, data: out })
    }

    /// self^T (k x n) times other (k x m) -> n x m.
    pub fn matmul_tn(&self, other: &Tensor) -> Result<Tensor> {
        if self.rows != other.rows {
            return Err(shape_err("matmul_tn", self.shape(), other.shape()));
        }
        let (k, n, m) = (self.rows, self.cols, other.cols);
        let mut out = vec![0.0; n * m];
        for kk in 0..k {
            let a_row = &self.data[kk * n..(kk + 1) * n];
            let b_row = &other.data[kk * m..(kk + 1) * m];
            for (i, &a) in a_row.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let o_row = &mut out[i * m..(i + 1) * m];
                for (o, &b) in o_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        Ok(Tensor { rows: n, cols: m, data: out })
    }

    pub fn transpose(&self) -> Tensor {
        let mut out = Tensor::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        out
    }

    // ── structure ────────────────────────────────────────────────────────

    pub fn concat_cols(parts: &[&Tensor]) -> Result<Tensor> {
        assert!(!parts.is_empty());
        let rows = parts[0].rows;
        for p in parts {
            if p.rows != rows {
                return Err(shape_err("concat_cols", (rows, parts[0].cols), p.shape()));
            }
        }
        let cols: usize = parts.iter().map(|p| p.cols).sum();
        let mut out = Tensor::zeros(rows, cols);
        for i in 0..rows {
            let mut at = 0;
            let o_row = out.row_mut(i);
            for p in parts {
                o_row[at..at + p.cols].copy_from_slice(p.row(i));
                at += p.cols;
            }
        }
        Ok(out)
    }

    /// Columns lo..hi (half-open).
    pub fn slice_cols(&self, lo: usize, hi: usize) -> Result<Tensor> {
        if lo >= hi || hi > self.cols {
            return Err(GnfError::Shape(format!(
                "slice_cols {lo}..{hi} of {}x{}",
                self.rows, self.cols
            )));
        }
        let w = hi - lo;
        let mut out = Tensor::zeros(self.rows, w);
        for i in 0..self.rows {
            out.row_mut(i).copy_from_slice(&self.row(i)[lo..hi]);
        }
        Ok(out)
    }

    pub fn gather_rows(&self, idx: &[u32]) -> Result<Tensor> {
        let mut out = Tensor::zeros(idx.len(), self.cols);
        for (e, &r) in idx.iter().enumerate() {
            let r = r as usize;
            if r >= self.rows {
                return Err(GnfError::Shape(format!(
                    "gather_rows: index {r} out of {} rows",
                    self.rows
                )));
            }
            out.row_mut(e).copy_from_slice(self.row(r));
        }
        Ok(out)
    }

    // ── segment ops (rows grouped into contiguous segments) ─────────────

    /// Per-segment column means. `ptr` has S+1 entries with ptr[0] = 0 and
    /// ptr[S] = rows; every segment must be nonempty. Output is S x cols.
    pub fn seg_col_mean(&self, ptr: &[u32]) -> Result<Tensor> {
        check_seg_ptr(ptr, self.rows)?;
        let s = ptr.len() - 1;
        let mut out = Tensor::zeros(s, self.cols);
        for seg in 0..s {
            let (lo, hi) = (ptr[seg] as usize, ptr[seg + 1] as usize);
            let o_row = out.row_mut(seg);
            for r in lo..hi {
                for (o, &x) in o_row.iter_mut().zip(self.row(r)) {
                    *o += x;
                }
            }
            let inv = 1.0 / (hi - lo) as f64;
            for o in o_row.iter_mut() {
                *o *= inv;
            }
        }
        Ok(out)
    }

    /// Subtract a per-segment row vector: out[r] = self[r] - v[seg(r)].
    pub fn sub_segvec(&self, v: &Tensor, ptr: &[u32]) -> Result<Tensor> {
        self.segvec_zip(v, ptr, "sub_segvec", |a, b| a - b)
    }

    /// Multiply by a per-segment row vector: out[r] = self[r] * v[seg(r)].
    pub fn mul_segvec(&self, v: &Tensor, ptr: &[u32]) -> Result<Tensor> {
        self.segvec_zip(v, ptr, "mul_segvec", |a, b| a * b)
    }

    fn segvec_zip(
        &self,
        v: &Tensor,
        ptr: &[u32],
        op: &str,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Tensor> {
        check_seg_ptr(ptr, self.rows)?;
        if v.rows != ptr.len() - 1 || v.cols != self.cols {
            return Err(shape_err(op, self.shape(), v.shape()));
        }
        let mut out = Tensor::zeros(self.rows, self.cols);
        for seg in 0..v.rows {
            let v_row = v.row(seg);
            for r in ptr[seg] as usize..ptr[seg + 1] as usize {
                for ((o, &x), &b) in out.row_mut(r).iter_mut().zip(self.row(r)).zip(v_row) {
                    *o = f(x, b);
                }
            }
        }
        Ok(out)
    }

    /// Add a 1 x cols row vector to every row.
    pub fn add_rowvec(&self, v: &Tensor) -> Result<Tensor> {
        if v.rows != 1 || v.cols != self.cols {
            return Err(shape_err("add_rowvec", self.shape(), v.shape()));
        }
        let mut out = self.clone();
        for i in 0..out.rows {
            for (o, &b) in out.row_mut(i).iter_mut().zip(&v.data) {
                *o += b;
            }
        }
        Ok(out)
    }

    /// Sum consecutive groups of `group` columns: E x (G*group) -> E x G.
    pub fn col_group_sum(&self, group: usize) -> Result<Tensor> {
        if group == 0 || self.cols % group != 0 {
            return Err(GnfError::Shape(format!(
                "col_group_sum: group {group} does not divide {} cols",
                self.cols
            )));
        }
        let g = self.cols / group;
        let mut out = Tensor::zeros(self.rows, g);
        for i in 0..self.rows {
            let row = self.row(i);
            let o_row = out.row_mut(i);
            for (h, o) in o_row.iter_mut().enumerate() {
                *o = row[h * group..(h + 1) * group].iter().sum();
            }
        }
        Ok(out)
    }

    /// Softmax within row segments, independently per column, with
    /// max-subtraction. Used for attention coefficients in CSR edge layout.
    pub fn seg_softmax(&self, ptr: &[u32]) -> Result<Tensor> {
        check_seg_ptr(ptr, self.rows)?;
        let mut out = Tensor::zeros(self.rows, self.cols);
        for seg in 0..ptr.len() - 1 {
            let (lo, hi) = (ptr[seg] as usize, ptr[seg + 1] as usize);
            for c in 0..self.cols {
                let mut mx = f64::NEG_INFINITY;
                for r in lo..hi {
                    mx = mx.max(self.get(r, c));
                }
                let mut z = 0.0;
                for r in lo..hi {
                    let e = (self.get(r, c) - mx).exp();
                    out.set(r, c, e);
                    z += e;
                }
                let inv = 1.0 / z;
                for r in lo..hi {
                    out.set(r, c, out.get(r, c) * inv);
                }
            }
        }
        Ok(out)
    }

    /// Attention mixing: self is edge messages (E x dm), `alpha` holds one
    /// coefficient column per head (E x H), `recv` maps edges to receiving
    /// rows. Output row v, head h block = sum over edges into v of
    /// alpha[e,h] * msg[e]; blocks concatenated to N x (H*dm).
    pub fn attn_mix(&self, alpha: &Tensor, recv: &[u32], n: usize) -> Result<Tensor> {
        if alpha.rows != self.rows {
            return Err(shape_err("attn_mix", self.shape(), alpha.shape()));
        }
        if recv.len() != self.rows {
            return Err(GnfError::Shape(format!(
                "attn_mix: {} edges vs {} receivers",
                self.rows,
                recv.len()
            )));
        }
        let (dm, h) = (self.cols, alpha.cols);
        let mut out = Tensor::zeros(n, h * dm);
        for e in 0..self.rows {
            let v = recv[e] as usize;
            if v >= n {
                return Err(GnfError::Shape(format!("attn_mix: receiver {v} out of {n} rows")));
            }
            let msg = self.row(e);
            let a_row = alpha.row(e);
            let o_row = out.row_mut(v);
            for (hh, &a) in a_row.iter().enumerate() {
                let block = &mut o_row[hh * dm..(hh + 1) * dm];
                for (o, &m) in block.iter_mut().zip(msg) {
                    *o += a * m;
                }
            }
        }
        Ok(out)
    }

    // ── reductions ───────────────────────────────────────────────────────

    pub fn sum_all(&self) -> Tensor {
        Tensor::scalar_of(self.data.iter().sum())
    }

    pub fn row_sum(&self) -> Tensor {
        let mut out = Tensor::zeros(self.rows, 1);
        for i in 0..self.rows {
            out.data[i] = self.row(i).iter().sum();
        }
        out
    }

    pub fn row_mean(&self) -> Tensor {
        let mut out = self.row_sum();
        let inv = 1.0 / self.cols as f64;
        for v in out.data.iter_mut() {
            *v *= inv;
        }
        out
    }

    /// Row-wise softmax over entries where `mask` is true; masked-out entries
    /// are exactly zero. Every row needs at least one unmasked entry.
    pub fn softmax_masked(&self, mask: &[bool]) -> Result<Tensor> {
        if mask.len() != self.data.len() {
            return Err(GnfError::Shape(format!(
                "softmax_masked: mask len {} vs {}x{}",
                mask.len(),
                self.rows,
                self.cols
            )));
        }
        let mut out = Tensor::zeros(self.rows, self.cols);
        for i in 0..self.rows {
            let m_row = &mask[i * self.cols..(i + 1) * self.cols];
            let mut mx = f64::NEG_INFINITY;
            for (j, &on) in m_row.iter().enumerate() {
                if on {
                    mx = mx.max(self.get(i, j));
                }
            }
            if mx == f64::NEG_INFINITY {
                return Err(GnfError::Shape(format!("softmax_masked: row {i} fully masked")));
            }
            let mut z = 0.0;
            for (j, &on) in m_row.iter().enumerate() {
                if on {
                    let e = (self.get(i, j) - mx).exp();
                    out.set(i, j, e);
                    z += e;
                }
            }
            let inv = 1.0 / z;
            for (j, &on) in m_row.iter().enumerate() {
                if on {
                    out.set(i, j, out.get(i, j) * inv);
                }
            }
        }
        Ok(out)
    }

    /// All pairwise squared L2 distances between rows of self (N x K) and
    /// rows of other (M x K): output[i][j] = |self_i - other_j|^2.
    pub fn pairwise_sqdist(&self, other: &Tensor) -> Result<Tensor> {
        if self.cols != other.cols {
            return Err(shape_err("pairwise_sqdist", self.shape(), other.shape()));
        }
        let mut out = Tensor::zeros(self.rows, other.rows);
        for i in 0..self.rows {
            let a = self.row(i);
            for j in 0..other.rows {
                let b = other.row(j);
                let d: f64 = a.iter().zip(b).map(|(&x, &y)| (x - y) * (x - y)).sum();
                out.set(i, j, d);
            }
        }
        Ok(out)
    }
}

fn check_seg_ptr(ptr: &[u32], rows: usize) -> Result<()> {
    if ptr.len() < 2 || ptr[0] != 0 || *ptr.last().unwrap() as usize != rows {
        return Err(GnfError::Shape(format!(
            "segment pointer must span 0..{rows}, got {ptr:?}"
        )));
    }
    for w in ptr.windows(2) {
        if w[0] >= w[1] {
            return Err(GnfError::Shape(format!("empty or unsorted segment in {ptr:?}")));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_hand_values() {
        let a = Tensor::from_vec(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let b = Tensor::from_vec(2, 2, vec![5.0, 6.0, 7.0, 8.0]).unwrap();
        let c = a.matmul(&b).unwrap();
        assert_eq!(c.data(), &[19.0, 22.0, 43.0, 50.0]);
    }

    #[test]
    fn matmul_variants_agree() {
        let mut rng = Rng::new(2);
        let a = Tensor::randn(3, 5, 1.0, &mut rng);
        let b = Tensor::randn(5, 4, 1.0, &mut rng);
        let nn = a.matmul(&b).unwrap();
        let nt = a.matmul_nt(&b.transpose()).unwrap();
        let tn = a.transpose().matmul_tn(&b).unwrap();
        assert!(nn.max_abs_diff(&nt) < 1e-12);
        assert!(nn.max_abs_diff(&tn) < 1e-12);
    }

    #[test]
    fn shape_mismatch_names_both_shapes() {
        let a = Tensor::zeros(2, 3);
        let b = Tensor::zeros(4, 5);
        let e = a.matmul(&b).unwrap_err();
        let msg = e.to_string();
        assert!(msg.contains("2x3") && msg.contains("4x5"), "{msg}");
    }

    #[test]
    fn exp_overflow_rejected() {
        let t = Tensor::from_vec(1, 2, vec![1.0, 701.0]).unwrap();
        assert!(t.exp().is_err());
        let ok = Tensor::from_vec(1, 2, vec![1.0, 699.0]).unwrap();
        assert!(ok.exp().is_ok());
    }

    #[test]
    fn ln_domain_rejected() {
        let t = Tensor::from_vec(1, 2, vec![1.0, 0.0]).unwrap();
        assert!(t.ln().is_err());
    }

    #[test]
    fn sigmoid_is_stable_at_extremes() {
        let t = Tensor::from_vec(1, 3, vec![-800.0, 0.0, 10.0]).unwrap();
        let s = t.sigmoid();
        assert!(s.data()[0] >= 0.0 && s.data()[0] < 1e-300);
        assert!((s.data()[1] - 0.5).abs() < 1e-15);
        assert!(s.all_finite());
    }

    #[test]
    fn concat_then_slice_round_trips() {
        let mut rng = Rng::new(4);
        let a = Tensor::randn(3, 2, 1.0, &mut rng);
        let b = Tensor::randn(3, 4, 1.0, &mut rng);
        let c = Tensor::concat_cols(&[&a, &b]).unwrap();
        assert_eq!(c.shape(), (3, 6));
        assert_eq!(c.slice_cols(0, 2).unwrap(), a);
        assert_eq!(c.slice_cols(2, 6).unwrap(), b);
    }

    #[test]
    fn seg_softmax_matches_dense_masked() {
        // Two segments of sizes 2 and 3 as rows == a 2-row dense problem with
        // per-row masks selecting the same entries.
        let x = Tensor::from_vec(5, 1, vec![0.3, -1.0, 2.0, 0.5, 0.1]).unwrap();
        let seg = x.seg_softmax(&[0, 2, 5]).unwrap();

        let dense = Tensor::from_vec(
            2,
            5,
            vec![0.3, -1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 2.0, 0.5, 0.1],
        )
        .unwrap();
        let mask = [true, true, false, false, false, false, false, true, true, true];
        let sm = dense.softmax_masked(&mask).unwrap();

        assert!((seg.get(0, 0) - sm.get(0, 0)).abs() < 1e-12);
        assert!((seg.get(1, 0) - sm.get(0, 1)).abs() < 1e-12);
        assert!((seg.get(2, 0) - sm.get(1, 2)).abs() < 1e-12);
        assert!((seg.get(3, 0) - sm.get(1, 3)).abs() < 1e-12);
        assert!((seg.get(4, 0) - sm.get(1, 4)).abs() < 1e-12);
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut rng = Rng::new(9);
        let x = Tensor::randn(4, 6, 2.0, &mut rng);
        let mask: Vec<bool> = (0..24).map(|i| i % 3 != 1).collect();
        let s = x.softmax_masked(&mask).unwrap();
        for i in 0..4 {
            let row_sum: f64 = s.row(i).iter().sum();
            assert!((row_sum - 1.0).abs() < 1e-9);
        }
        // Masked-out entries are exactly zero.
        for (i, &on) in mask.iter().enumerate() {
            if !on {
                assert_eq!(s.data()[i], 0.0);
            }
        }
    }

    #[test]
    fn softmax_fully_masked_row_is_an_error() {
        let x = Tensor::zeros(2, 2);
        let mask = [true, true, false, false];
        assert!(x.softmax_masked(&mask).is_err());
    }

    #[test]
    fn attn_mix_hand_case() {
        // Two nodes, edges (0<-0),(0<-1),(1<-1); one head, uniform alpha on
        // node 0's two edges.
        let msg = Tensor::from_vec(3, 2, vec![1.0, 0.0, 0.0, 1.0, 2.0, 2.0]).unwrap();
        let alpha = Tensor::from_vec(3, 1, vec![0.5, 0.5, 1.0]).unwrap();
        let out = msg.attn_mix(&alpha, &[0, 0, 1], 2).unwrap();
        assert_eq!(out.data(), &[0.5, 0.5, 2.0, 2.0]);
    }

    #[test]
    fn seg_col_mean_and_broadcasts() {
        let x = Tensor::from_vec(4, 2, vec![1.0, 2.0, 3.0, 4.0, 10.0, 20.0, 30.0, 40.0]).unwrap();
        let ptr = [0u32, 2, 4];
        let mu = x.seg_col_mean(&ptr).unwrap();
        assert_eq!(mu.data(), &[2.0, 3.0, 20.0, 30.0]);
        let centered = x.sub_segvec(&mu, &ptr).unwrap();
        assert_eq!(centered.data(), &[-1.0, -1.0, 1.0, 1.0, -10.0, -10.0, 10.0, 10.0]);
        let back = centered.mul_segvec(&Tensor::filled(2, 2, 0.0), &ptr).unwrap();
        assert_eq!(back, Tensor::zeros(4, 2));
    }

    #[test]
    fn pairwise_sqdist_hand_case() {
        let a = Tensor::from_vec(2, 2, vec![0.0, 0.0, 1.0, 1.0]).unwrap();
        let d = a.pairwise_sqdist(&a).unwrap();
        assert_eq!(d.data(), &[0.0, 2.0, 2.0, 0.0]);
    }

    #[test]
    fn reductions() {
        let x = Tensor::from_vec(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        assert_eq!(x.sum_all().scalar(), 21.0);
        assert_eq!(x.row_sum().data(), &[6.0, 15.0]);
        assert_eq!(x.row_mean().data(), &[2.0, 5.0]);
        assert_eq!(x.col_group_sum(3).unwrap().data(), &[6.0, 15.0]);
        assert_eq!(
            x.col_group_sum(1).unwrap().data(),
            &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]
        );
    }
}
