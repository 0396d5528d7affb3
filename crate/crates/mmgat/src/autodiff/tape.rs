use rand::Rng;

use super::kernels;
use super::tensor::{Tensor, TensorError};
use crate::{real, Real};

/// Handle to a tensor on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

type BackwardFn<T> = Box<dyn Fn(&mut Vec<Tensor<T>>)>;

struct Node<T> {
    backward: BackwardFn<T>,
}

/// Wengert list: tensors plus recorded operations.
///
/// Every op appends its output tensor and (when gradients flow) a backward
/// closure. `backward` walks the nodes in strict reverse recording order,
/// so inputs always receive their gradient after every consumer.
pub struct Tape<T: Real> {
    tensors: Vec<Tensor<T>>,
    nodes: Vec<Node<T>>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Tape {
            tensors: Vec::new(),
            nodes: Vec::new(),
        }
    }

    fn push_tensor(&mut self, t: Tensor<T>, op: &'static str) -> Var {
        #[cfg(debug_assertions)]
        {
            debug_assert!(
                t.data.iter().all(|v| v.is_finite()),
                "non-finite value produced by op `{op}`"
            );
        }
        #[cfg(not(debug_assertions))]
        let _ = op;
        self.tensors.push(t);
        Var(self.tensors.len() - 1)
    }

    fn record(&mut self, backward: BackwardFn<T>) {
        self.nodes.push(Node { backward });
    }

    /// Constant input (no gradient).
    pub fn constant(&mut self, shape: Vec<usize>, data: Vec<T>) -> Var {
        self.push_tensor(Tensor::new(shape, data, false), "constant")
    }

    /// Differentiable leaf (parameter or probed input).
    pub fn leaf(&mut self, shape: Vec<usize>, data: Vec<T>) -> Var {
        self.push_tensor(Tensor::new(shape, data, true), "leaf")
    }

    pub fn data(&self, v: Var) -> &[T] {
        &self.tensors[v.0].data
    }

    pub fn grad(&self, v: Var) -> &[T] {
        &self.tensors[v.0].grad
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.tensors[v.0].shape
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.tensors[v.0].requires_grad
    }

    /// Overwrite the data of a leaf; shapes must match.
    pub fn set_data(&mut self, v: Var, data: &[T]) {
        assert_eq!(self.tensors[v.0].data.len(), data.len());
        self.tensors[v.0].data.copy_from_slice(data);
    }

    pub fn zero_grads(&mut self) {
        for t in &mut self.tensors {
            for g in &mut t.grad {
                *g = T::zero();
            }
        }
    }

    /// Reverse pass from a scalar output. Each recorded node is visited
    /// exactly once, in reverse recording order.
    pub fn backward(&mut self, loss: Var) -> Result<(), TensorError> {
        if self.tensors[loss.0].data.len() != 1 {
            return Err(TensorError::ShapeMismatch {
                op: "backward",
                detail: format!(
                    "loss must be scalar, got shape {:?}",
                    self.tensors[loss.0].shape
                ),
            });
        }
        self.tensors[loss.0].grad[0] = T::one();
        for i in (0..self.nodes.len()).rev() {
            // Take the closure out to release the borrow on self.nodes.
            let node = &self.nodes[i];
            (node.backward)(&mut self.tensors);
        }
        Ok(())
    }

    // ── ops ──────────────────────────────────────────────────────────

    fn dims2(&self, v: Var, op: &'static str) -> Result<(usize, usize), TensorError> {
        let s = &self.tensors[v.0].shape;
        if s.len() != 2 {
            return Err(TensorError::ShapeMismatch {
                op,
                detail: format!("expected rank-2 tensor, got shape {s:?}"),
            });
        }
        Ok((s[0], s[1]))
    }

    /// `a[m×k] · b[k×n]`
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (m, k) = self.dims2(a, "matmul")?;
        let (k2, n) = self.dims2(b, "matmul")?;
        if k != k2 {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                detail: format!("inner dims {k} vs {k2}"),
            });
        }
        let mut out = vec![T::zero(); m * n];
        kernels::matmul_nn(
            &self.tensors[a.0].data,
            &self.tensors[b.0].data,
            m,
            k,
            n,
            &mut out,
        );
        let rg = self.tensors[a.0].requires_grad || self.tensors[b.0].requires_grad;
        let out = self.push_tensor(Tensor::new(vec![m, n], out, rg), "matmul");
        if rg {
            let (ai, bi, oi) = (a.0, b.0, out.0);
            self.record(Box::new(move |ts| {
                let g = ts[oi].grad.clone();
                if ts[ai].requires_grad {
                    let bd = ts[bi].data.clone();
                    // dL/da = g · bᵀ
                    kernels::matmul_nt(&g, &bd, m, n, k, &mut ts[ai].grad);
                }
                if ts[bi].requires_grad {
                    let ad = ts[ai].data.clone();
                    // dL/db = aᵀ · g
                    kernels::matmul_tn(&ad, &g, m, k, n, &mut ts[bi].grad);
                }
            }));
        }
        Ok(out)
    }

    /// Elementwise sum of two same-shape tensors.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        if self.tensors[a.0].shape != self.tensors[b.0].shape {
            return Err(TensorError::ShapeMismatch {
                op: "add",
                detail: format!(
                    "{:?} vs {:?}",
                    self.tensors[a.0].shape, self.tensors[b.0].shape
                ),
            });
        }
        let data: Vec<T> = self.tensors[a.0]
            .data
            .iter()
            .zip(&self.tensors[b.0].data)
            .map(|(&x, &y)| x + y)
            .collect();
        let shape = self.tensors[a.0].shape.clone();
        let rg = self.tensors[a.0].requires_grad || self.tensors[b.0].requires_grad;
        let out = self.push_tensor(Tensor::new(shape, data, rg), "add");
        if rg {
            let (ai, bi, oi) = (a.0, b.0, out.0);
            self.record(Box::new(move |ts| {
                let g = ts[oi].grad.clone();
                if ts[ai].requires_grad {
                    for (ga, &gv) in ts[ai].grad.iter_mut().zip(&g) {
                        *ga += gv;
                    }
                }
                if ts[bi].requires_grad {
                    for (gb, &gv) in ts[bi].grad.iter_mut().zip(&g) {
                        *gb += gv;
                    }
                }
            }));
        }
        Ok(out)
    }

    /// `x[n×d] + b[d]` broadcast over rows.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var, TensorError> {
        let (n, d) = self.dims2(x, "add_bias")?;
        if self.tensors[b.0].data.len() != d {
            return Err(TensorError::ShapeMismatch {
                op: "add_bias",
                detail: format!("bias len {} vs row width {d}", self.tensors[b.0].data.len()),
            });
        }
        let mut data = self.tensors[x.0].data.clone();
        {
            let bias = &self.tensors[b.0].data;
            for i in 0..n {
                for j in 0..d {
                    data[i * d + j] += bias[j];
                }
            }
        }
        let rg = self.tensors[x.0].requires_grad || self.tensors[b.0].requires_grad;
        let out = self.push_tensor(Tensor::new(vec![n, d], data, rg), "add_bias");
        if rg {
            let (xi, bi, oi) = (x.0, b.0, out.0);
            self.record(Box::new(move |ts| {
                let g = ts[oi].grad.clone();
                if ts[xi].requires_grad {
                    for (gx, &gv) in ts[xi].grad.iter_mut().zip(&g) {
                        *gx += gv;
                    }
                }
                if ts[bi].requires_grad {
                    for i in 0..n {
                        for j in 0..d {
                            ts[bi].grad[j] += g[i * d + j];
                        }
                    }
                }
            }));
        }
        Ok(out)
    }

    /// Elementwise `max(x, 0)`.
    pub fn relu(&mut self, x: Var) -> Var {
        let data: Vec<T> = self.tensors[x.0]
            .data
            .iter()
            .map(|&v| if v > T::zero() { v } else { T::zero() })
            .collect();
        let shape = self.tensors[x.0].shape.clone();
        let rg = self.tensors[x.0].requires_grad;
        let out = self.push_tensor(Tensor::new(shape, data, rg), "relu");
        if rg {
            let (xi, oi) = (x.0, out.0);
            self.record(Box::new(move |ts| {
                let g = ts[oi].grad.clone();
                let xd = ts[xi].data.clone();
                for ((gx, &gv), &xv) in ts[xi].grad.iter_mut().zip(&g).zip(&xd) {
                    if xv > T::zero() {
                        *gx += gv;
                    }
                }
            }));
        }
        out
    }

    /// Elementwise `max(x, slope·x)` for `0 <= slope < 1`.
    pub fn leaky_relu(&mut self, x: Var, slope: T) -> Var {
        let data: Vec<T> = self.tensors[x.0]
            .data
            .iter()
            .map(|&v| if v > T::zero() { v } else { slope * v })
            .collect();
        let shape = self.tensors[x.0].shape.clone();
        let rg = self.tensors[x.0].requires_grad;
        let out = self.push_tensor(Tensor::new(shape, data, rg), "leaky_relu");
        if rg {
            let (xi, oi) = (x.0, out.0);
            self.record(Box::new(move |ts| {
                let g = ts[oi].grad.clone();
                let xd = ts[xi].data.clone();
                for ((gx, &gv), &xv) in ts[xi].grad.iter_mut().zip(&g).zip(&xd) {
                    *gx += if xv > T::zero() { gv } else { slope * gv };
                }
            }));
        }
        out
    }

    /// Select rows of `x[n×d]` by index, output `[idx.len()×d]`.
    pub fn gather_rows(&mut self, x: Var, idx: &[usize]) -> Result<Var, TensorError> {
        let (n, d) = self.dims2(x, "gather_rows")?;
        if let Some(&bad) = idx.iter().find(|&&i| i >= n) {
            return Err(TensorError::IndexOutOfBounds {
                op: "gather_rows",
                index: bad,
                bound: n,
            });
        }
        let mut data = Vec::with_capacity(idx.len() * d);
        for &i in idx {
            data.extend_from_slice(&self.tensors[x.0].data[i * d..(i + 1) * d]);
        }
        let rg = self.tensors[x.0].requires_grad;
        let out = self.push_tensor(Tensor::new(vec![idx.len(), d], data, rg), "gather_rows");
        if rg {
            let (xi, oi) = (x.0, out.0);
            let idx = idx.to_vec();
            self.record(Box::new(move |ts| {
                let g = ts[oi].grad.clone();
                for (e, &i) in idx.iter().enumerate() {
                    for j in 0..d {
                        ts[xi].grad[i * d + j] += g[e * d + j];
                    }
                }
            }));
        }
        Ok(out)
    }

    /// Column-wise concatenation of same-row-count matrices.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, TensorError> {
        assert!(!parts.is_empty());
        let (n, _) = self.dims2(parts[0], "concat_cols")?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (np, dp) = self.dims2(p, "concat_cols")?;
            if np != n {
                return Err(TensorError::ShapeMismatch {
                    op: "concat_cols",
                    detail: format!("row counts {n} vs {np}"),
                });
            }
            widths.push(dp);
        }
        let total: usize = widths.iter().sum();
        let mut data = vec![T::zero(); n * total];
        let mut off = 0;
        for (&p, &w) in parts.iter().zip(&widths) {
            let src = &self.tensors[p.0].data;
            for i in 0..n {
                data[i * total + off..i * total + off + w]
                    .copy_from_slice(&src[i * w..(i + 1) * w]);
            }
            off += w;
        }
        let rg = parts.iter().any(|&p| self.tensors[p.0].requires_grad);
        let out = self.push_tensor(Tensor::new(vec![n, total], data, rg), "concat_cols");
        if rg {
            let srcs: Vec<usize> = parts.iter().map(|p| p.0).collect();
            let widths = widths.clone();
            let oi = out.0;
            self.record(Box::new(move |ts| {
                let g = ts[oi].grad.clone();
                let mut off = 0;
                for (&si, &w) in srcs.iter().zip(&widths) {
                    if ts[si].requires_grad {
                        for i in 0..n {
                            for j in 0..w {
                                ts[si].grad[i * w + j] += g[i * total + off + j];
                            }
                        }
                    }
                    off += w;
                }
            }));
        }
        Ok(out)
    }

    /// Scale row `e` of `x[E×d]` by `w[e]`.
    pub fn rows_scale(&mut self, x: Var, w: Var) -> Result<Var, TensorError> {
        let (e, d) = self.dims2(x, "rows_scale")?;
        if self.tensors[w.0].data.len() != e {
            return Err(TensorError::ShapeMismatch {
                op: "rows_scale",
                detail: format!("weight len {} vs rows {e}", self.tensors[w.0].data.len()),
            });
        }
        let mut data = self.tensors[x.0].data.clone();
        for i in 0..e {
            let wv = self.tensors[w.0].data[i];
            for v in &mut data[i * d..(i + 1) * d] {
                *v = *v * wv;
            }
        }
        let rg = self.tensors[x.0].requires_grad || self.tensors[w.0].requires_grad;
        let out = self.push_tensor(Tensor::new(vec![e, d], data, rg), "rows_scale");
        if rg {
            let (xi, wi, oi) = (x.0, w.0, out.0);
            self.record(Box::new(move |ts| {
                let g = ts[oi].grad.clone();
                let xd = ts[xi].data.clone();
                let wd = ts[wi].data.clone();
                if ts[xi].requires_grad {
                    for i in 0..e {
                        for j in 0..d {
                            ts[xi].grad[i * d + j] += wd[i] * g[i * d + j];
                        }
                    }
                }
                if ts[wi].requires_grad {
                    for i in 0..e {
                        let mut acc = T::zero();
                        for j in 0..d {
                            acc += g[i * d + j] * xd[i * d + j];
                        }
                        ts[wi].grad[i] += acc;
                    }
                }
            }));
        }
        Ok(out)
    }

    /// Softmax within segments: entry `i` is normalized over all entries
    /// sharing `segment_of[i]`, stabilized by per-segment max subtraction.
    /// Empty segments simply contribute no entries.
    pub fn segment_softmax(
        &mut self,
        scores: Var,
        segment_of: &[usize],
        n_segments: usize,
    ) -> Result<Var, TensorError> {
        let len = self.tensors[scores.0].data.len();
        if segment_of.len() != len {
            return Err(TensorError::ShapeMismatch {
                op: "segment_softmax",
                detail: format!("segment index len {} vs scores len {len}", segment_of.len()),
            });
        }
        if let Some(&bad) = segment_of.iter().find(|&&s| s >= n_segments) {
            return Err(TensorError::IndexOutOfBounds {
                op: "segment_softmax",
                index: bad,
                bound: n_segments,
            });
        }
        let sd = &self.tensors[scores.0].data;
        let mut seg_max = vec![T::neg_infinity(); n_segments];
        for (i, &s) in segment_of.iter().enumerate() {
            if sd[i] > seg_max[s] {
                seg_max[s] = sd[i];
            }
        }
        let mut data: Vec<T> = (0..len)
            .map(|i| (sd[i] - seg_max[segment_of[i]]).exp())
            .collect();
        let mut seg_sum = vec![T::zero(); n_segments];
        for (i, &s) in segment_of.iter().enumerate() {
            seg_sum[s] += data[i];
        }
        for (i, &s) in segment_of.iter().enumerate() {
            data[i] = data[i] / seg_sum[s];
        }
        let shape = self.tensors[scores.0].shape.clone();
        let rg = self.tensors[scores.0].requires_grad;
        let out = self.push_tensor(Tensor::new(shape, data, rg), "segment_softmax");
        if rg {
            let (si, oi) = (scores.0, out.0);
            let seg = segment_of.to_vec();
            self.record(Box::new(move |ts| {
                let g = ts[oi].grad.clone();
                let y = ts[oi].data.clone();
                // dL/ds_i = y_i (g_i − Σ_{j in seg} g_j y_j)
                let mut seg_dot = vec![T::zero(); n_segments];
                for (i, &s) in seg.iter().enumerate() {
                    seg_dot[s] += g[i] * y[i];
                }
                for (i, &s) in seg.iter().enumerate() {
                    ts[si].grad[i] += y[i] * (g[i] - seg_dot[s]);
                }
            }));
        }
        Ok(out)
    }

    /// Sum rows of `x[E×d]` into their segments, output `[n_segments×d]`.
    pub fn segment_sum(
        &mut self,
        x: Var,
        segment_of: &[usize],
        n_segments: usize,
    ) -> Result<Var, TensorError> {
        let (e, d) = self.dims2(x, "segment_sum")?;
        if segment_of.len() != e {
            return Err(TensorError::ShapeMismatch {
                op: "segment_sum",
                detail: format!("segment index len {} vs rows {e}", segment_of.len()),
            });
        }
        if let Some(&bad) = segment_of.iter().find(|&&s| s >= n_segments) {
            return Err(TensorError::IndexOutOfBounds {
                op: "segment_sum",
                index: bad,
                bound: n_segments,
            });
        }
        let mut data = vec![T::zero(); n_segments * d];
        for (i, &s) in segment_of.iter().enumerate() {
            let src = &self.tensors[x.0].data[i * d..(i + 1) * d];
            for (o, &v) in data[s * d..(s + 1) * d].iter_mut().zip(src) {
                *o += v;
            }
        }
        let rg = self.tensors[x.0].requires_grad;
        let out = self.push_tensor(Tensor::new(vec![n_segments, d], data, rg), "segment_sum");
        if rg {
            let (xi, oi) = (x.0, out.0);
            let seg = segment_of.to_vec();
            self.record(Box::new(move |ts| {
                let g = ts[oi].grad.clone();
                for (i, &s) in seg.iter().enumerate() {
                    for j in 0..d {
                        ts[xi].grad[i * d + j] += g[s * d + j];
                    }
                }
            }));
        }
        Ok(out)
    }

    /// Per-segment arithmetic mean of rows. A segment with zero members
    /// yields a zero row and a warning (degenerate frame).
    pub fn segment_mean(
        &mut self,
        x: Var,
        segment_of: &[usize],
        n_segments: usize,
    ) -> Result<Var, TensorError> {
        let (n, d) = self.dims2(x, "segment_mean")?;
        if segment_of.len() != n {
            return Err(TensorError::ShapeMismatch {
                op: "segment_mean",
                detail: format!("segment index len {} vs rows {n}", segment_of.len()),
            });
        }
        if let Some(&bad) = segment_of.iter().find(|&&s| s >= n_segments) {
            return Err(TensorError::IndexOutOfBounds {
                op: "segment_mean",
                index: bad,
                bound: n_segments,
            });
        }
        let mut counts = vec![0usize; n_segments];
        for &s in segment_of {
            counts[s] += 1;
        }
        if counts.iter().any(|&c| c == 0) {
            log::warn!("segment_mean: empty segment, emitting zero row");
        }
        let mut data = vec![T::zero(); n_segments * d];
        for (i, &s) in segment_of.iter().enumerate() {
            let src = &self.tensors[x.0].data[i * d..(i + 1) * d];
            for (o, &v) in data[s * d..(s + 1) * d].iter_mut().zip(src) {
                *o += v;
            }
        }
        for (s, &c) in counts.iter().enumerate() {
            if c > 0 {
                let inv = T::one() / real::<T>(c as f64);
                for v in &mut data[s * d..(s + 1) * d] {
                    *v = *v * inv;
                }
            }
        }
        let rg = self.tensors[x.0].requires_grad;
        let out = self.push_tensor(Tensor::new(vec![n_segments, d], data, rg), "segment_mean");
        if rg {
            let (xi, oi) = (x.0, out.0);
            let seg = segment_of.to_vec();
            let counts = counts.clone();
            self.record(Box::new(move |ts| {
                let g = ts[oi].grad.clone();
                for (i, &s) in seg.iter().enumerate() {
                    let inv = T::one() / real::<T>(counts[s] as f64);
                    for j in 0..d {
                        ts[xi].grad[i * d + j] += g[s * d + j] * inv;
                    }
                }
            }));
        }
        Ok(out)
    }

    /// Inverted dropout: in training, zero each entry with probability
    /// `rate` and scale survivors by `1/(1−rate)`; in eval, identity.
    pub fn dropout<R: Rng>(&mut self, x: Var, rate: T, training: bool, rng: &mut R) -> Var {
        assert!(rate >= T::zero() && rate < T::one(), "dropout rate in [0,1)");
        if !training || rate == T::zero() {
            // Identity pass-through; gradient flows unchanged.
            let data = self.tensors[x.0].data.clone();
            let shape = self.tensors[x.0].shape.clone();
            let rg = self.tensors[x.0].requires_grad;
            let out = self.push_tensor(Tensor::new(shape, data, rg), "dropout");
            if rg {
                let (xi, oi) = (x.0, out.0);
                self.record(Box::new(move |ts| {
                    let g = ts[oi].grad.clone();
                    for (gx, &gv) in ts[xi].grad.iter_mut().zip(&g) {
                        *gx += gv;
                    }
                }));
            }
            return out;
        }
        let keep_scale = T::one() / (T::one() - rate);
        let rate_f = rate.to_f64().unwrap();
        let mask: Vec<T> = (0..self.tensors[x.0].data.len())
            .map(|_| {
                if rng.gen::<f64>() < rate_f {
                    T::zero()
                } else {
                    keep_scale
                }
            })
            .collect();
        let data: Vec<T> = self.tensors[x.0]
            .data
            .iter()
            .zip(&mask)
            .map(|(&v, &m)| v * m)
            .collect();
        let shape = self.tensors[x.0].shape.clone();
        let rg = self.tensors[x.0].requires_grad;
        let out = self.push_tensor(Tensor::new(shape, data, rg), "dropout");
        if rg {
            let (xi, oi) = (x.0, out.0);
            self.record(Box::new(move |ts| {
                let g = ts[oi].grad.clone();
                for ((gx, &gv), &m) in ts[xi].grad.iter_mut().zip(&g).zip(&mask) {
                    *gx += gv * m;
                }
            }));
        }
        out
    }

    /// Mean of squared differences over all entries.
    pub fn mse_loss(&mut self, pred: Var, target: &[T]) -> Result<Var, TensorError> {
        let n = self.tensors[pred.0].data.len();
        if target.len() != n {
            return Err(TensorError::ShapeMismatch {
                op: "mse_loss",
                detail: format!("pred len {n} vs target len {}", target.len()),
            });
        }
        let inv = T::one() / real::<T>(n as f64);
        let mut acc = T::zero();
        for (&p, &t) in self.tensors[pred.0].data.iter().zip(target) {
            let d = p - t;
            acc += d * d;
        }
        let rg = self.tensors[pred.0].requires_grad;
        let out = self.push_tensor(Tensor::new(vec![1], vec![acc * inv], rg), "mse_loss");
        if rg {
            let (pi, oi) = (pred.0, out.0);
            let target = target.to_vec();
            self.record(Box::new(move |ts| {
                let g = ts[oi].grad[0];
                let two = real::<T>(2.0);
                let pd = ts[pi].data.clone();
                for ((gp, &p), &t) in ts[pi].grad.iter_mut().zip(&pd).zip(&target) {
                    *gp += g * two * (p - t) * inv;
                }
            }));
        }
        Ok(out)
    }

    /// Mean per-joint Euclidean error of `[B×3J]` predictions; an ε inside
    /// the square root keeps the gradient defined at zero error.
    pub fn mpjpe_loss(&mut self, pred: Var, target: &[T]) -> Result<Var, TensorError> {
        let n = self.tensors[pred.0].data.len();
        if target.len() != n {
            return Err(TensorError::ShapeMismatch {
                op: "mpjpe_loss",
                detail: format!("pred len {n} vs target len {}", target.len()),
            });
        }
        if n % 3 != 0 {
            return Err(TensorError::ShapeMismatch {
                op: "mpjpe_loss",
                detail: format!("entry count {n} not a multiple of 3"),
            });
        }
        let n_joints = n / 3;
        let eps = real::<T>(1e-12);
        let inv = T::one() / real::<T>(n_joints as f64);
        let mut acc = T::zero();
        {
            let pd = &self.tensors[pred.0].data;
            for j in 0..n_joints {
                let mut s = eps;
                for c in 0..3 {
                    let d = pd[3 * j + c] - target[3 * j + c];
                    s += d * d;
                }
                acc += s.sqrt();
            }
        }
        let rg = self.tensors[pred.0].requires_grad;
        let out = self.push_tensor(Tensor::new(vec![1], vec![acc * inv], rg), "mpjpe_loss");
        if rg {
            let (pi, oi) = (pred.0, out.0);
            let target = target.to_vec();
            self.record(Box::new(move |ts| {
                let g = ts[oi].grad[0];
                let pd = ts[pi].data.clone();
                for j in 0..n_joints {
                    let mut s = eps;
                    for c in 0..3 {
                        let d = pd[3 * j + c] - target[3 * j + c];
                        s += d * d;
                    }
                    let norm = s.sqrt();
                    for c in 0..3 {
                        let d = pd[3 * j + c] - target[3 * j + c];
                        ts[pi].grad[3 * j + c] += g * inv * d / norm;
                    }
                }
            }));
        }
        Ok(out)
    }

    /// Sum of all entries, as a scalar. Mostly for tests.
    pub fn sum(&mut self, x: Var) -> Var {
        let acc = self.tensors[x.0]
            .data
            .iter()
            .fold(T::zero(), |a, &v| a + v);
        let rg = self.tensors[x.0].requires_grad;
        let out = self.push_tensor(Tensor::new(vec![1], vec![acc], rg), "sum");
        if rg {
            let (xi, oi) = (x.0, out.0);
            self.record(Box::new(move |ts| {
                let g = ts[oi].grad[0];
                for gx in ts[xi].grad.iter_mut() {
                    *gx += g;
                }
            }));
        }
        out
    }
}
