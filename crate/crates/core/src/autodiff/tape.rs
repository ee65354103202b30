use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

use super::real::matmul;
use super::{ParamId, ParamStore, Real, Tensor};

/// Batch-norm numerical floor added to the variance.
pub const BN_EPS: f64 = 1e-5;
/// Fraction of the old running statistic kept at each training step.
pub const BN_MOMENTUM: f64 = 0.9;
/// Added under the square root of [`Tape::euclid_dist`] so the gradient is
/// defined at zero distance.
pub const EUCLID_EPS: f64 = 1e-12;

/// Handle to a node recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

enum Op<T> {
    Leaf,
    Param(ParamId),
    Conv1d {
        x: Var,
        w: Var,
        b: Var,
        /// im2col buffer per batch item, `[c_in·k, len]`.
        cols: Vec<T>,
    },
    MaxPool1d {
        x: Var,
        argmax: Vec<usize>,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        inv_std: Vec<T>,
        batch_stats: bool,
    },
    Sigmoid {
        x: Var,
    },
    Dense {
        x: Var,
        w: Var,
        b: Var,
    },
    Dropout {
        x: Var,
        mask: Vec<T>,
    },
    Reshape {
        x: Var,
    },
    EuclidDist {
        a: Var,
        b: Var,
    },
    Add {
        a: Var,
        b: Var,
    },
    Scale {
        x: Var,
        factor: T,
    },
    Mean {
        x: Var,
    },
    Sum {
        x: Var,
    },
    /// Output element `o` depends on input elements `o·row..(o+1)·row` with
    /// the stored local partial derivatives.
    RowMap {
        x: Var,
        jac: Vec<T>,
        row: usize,
    },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Gradients of every recorded node with respect to a scalar root.
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, var: Var) -> Option<&Tensor<T>> {
        self.grads[var.0].as_ref()
    }
}

/// Records a forward computation for reverse-mode differentiation.
///
/// A tape is built for one forward pass and discarded afterwards. Parameter
/// leaves are cached per [`ParamId`], so a parameter used twice (the two
/// Siamese arms) is a single node and its gradient contributions add up.
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    param_vars: HashMap<ParamId, Var>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            param_vars: HashMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Number of distinct parameters read so far.
    pub fn param_nodes(&self) -> usize {
        self.param_vars.len()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    /// Input that receives no gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Input whose gradient is tracked (used for gradient checks).
    pub fn variable(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        if let Some(&v) = self.param_vars.get(&id) {
            return v;
        }
        let p = store.get(id);
        let v = self.push(p.value.clone(), Op::Param(id), p.trainable);
        self.param_vars.insert(id, v);
        v
    }

    /// 1-D convolution, stride 1, "same" zero padding.
    ///
    /// `x: [batch, c_in, len]`, `w: [c_out, c_in, k]`, `b: [c_out]`. For even
    /// `k` the extra padding element goes on the right.
    pub fn conv1d(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let xs = self.value(x).shape().to_vec();
        let ws = self.value(w).shape().to_vec();
        let bs = self.value(b).shape().to_vec();
        if xs.len() != 3 || ws.len() != 3 || xs[1] != ws[1] {
            return Err(Error::shape("conv1d", &xs, &ws));
        }
        if bs != [ws[0]] {
            return Err(Error::shape("conv1d bias", &bs, &ws));
        }
        let (batch, c_in, len) = (xs[0], xs[1], xs[2]);
        let (c_out, k) = (ws[0], ws[2]);
        if k == 0 {
            return Err(Error::Domain("conv1d kernel size must be positive".into()));
        }
        let pad_left = (k - 1) / 2;
        let ck = c_in * k;
        let xv = self.value(x).data();
        let mut cols = vec![T::zero(); batch * ck * len];
        for bi in 0..batch {
            let xb = &xv[bi * c_in * len..(bi + 1) * c_in * len];
            let cb = &mut cols[bi * ck * len..(bi + 1) * ck * len];
            for ci in 0..c_in {
                let xrow = &xb[ci * len..(ci + 1) * len];
                for kk in 0..k {
                    let dst = &mut cb[(ci * k + kk) * len..(ci * k + kk + 1) * len];
                    // output position l reads input l + kk - pad_left
                    let lo = pad_left.saturating_sub(kk);
                    let hi = (len + pad_left).saturating_sub(kk).min(len);
                    if lo < hi {
                        let src_lo = lo + kk - pad_left;
                        dst[lo..hi].copy_from_slice(&xrow[src_lo..src_lo + (hi - lo)]);
                    }
                }
            }
        }
        let wv = self.value(w).data();
        let bv = self.value(b).data();
        let mut out = vec![T::zero(); batch * c_out * len];
        for bi in 0..batch {
            let ob = &mut out[bi * c_out * len..(bi + 1) * c_out * len];
            for (co, row) in ob.chunks_mut(len).enumerate() {
                row.fill(bv[co]);
            }
            matmul(
                c_out,
                ck,
                len,
                wv,
                false,
                &cols[bi * ck * len..(bi + 1) * ck * len],
                false,
                ob,
                true,
            );
        }
        let rg = self.rg(x) || self.rg(w) || self.rg(b);
        let value = Tensor::new(vec![batch, c_out, len], out)?;
        Ok(self.push(value, Op::Conv1d { x, w, b, cols }, rg))
    }

    /// Max pooling along the last axis with non-overlapping windows; a
    /// trailing partial window is pooled as-is (output length `ceil(len/pool)`).
    pub fn maxpool1d(&mut self, x: Var, pool: usize) -> Result<Var> {
        if pool < 2 {
            return Err(Error::Domain(format!("pool size {pool} < 2")));
        }
        let xs = self.value(x).shape().to_vec();
        if xs.len() != 3 {
            return Err(Error::shape("maxpool1d", &xs, &[0, 0, 0]));
        }
        let (rows, len) = (xs[0] * xs[1], xs[2]);
        let out_len = len.div_ceil(pool);
        let xv = self.value(x).data();
        let mut out = Vec::with_capacity(rows * out_len);
        let mut argmax = Vec::with_capacity(rows * out_len);
        for r in 0..rows {
            let row = &xv[r * len..(r + 1) * len];
            for o in 0..out_len {
                let start = o * pool;
                let end = (start + pool).min(len);
                let mut best = start;
                for i in start + 1..end {
                    if row[i] > row[best] {
                        best = i;
                    }
                }
                out.push(row[best]);
                argmax.push(r * len + best);
            }
        }
        let value = Tensor::new(vec![xs[0], xs[1], out_len], out)?;
        let rg = self.rg(x);
        Ok(self.push(value, Op::MaxPool1d { x, argmax }, rg))
    }

    /// Batch normalization over every axis except the channel axis 1.
    ///
    /// In training mode the batch statistics normalize the input and are
    /// folded into the running statistics; in evaluation mode the running
    /// statistics are used.
    pub fn batchnorm1d(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        running_mean: &mut Tensor<T>,
        running_var: &mut Tensor<T>,
        mode: Mode,
    ) -> Result<Var> {
        let xs = self.value(x).shape().to_vec();
        if xs.len() < 2 {
            return Err(Error::shape("batchnorm1d", &xs, &[0, 0]));
        }
        let (batch, ch) = (xs[0], xs[1]);
        let inner: usize = xs[2..].iter().product();
        for t in [self.value(gamma), self.value(beta)] {
            if t.shape() != [ch] {
                return Err(Error::shape("batchnorm1d params", t.shape(), &[ch]));
            }
        }
        if running_mean.shape() != [ch] || running_var.shape() != [ch] {
            return Err(Error::shape("batchnorm1d running stats", running_mean.shape(), &[ch]));
        }
        let batch_stats = mode == Mode::Train;
        if batch_stats && batch < 2 {
            return Err(Error::Domain(
                "batchnorm1d in training mode needs a batch of at least 2".into(),
            ));
        }
        let eps = T::lit(BN_EPS);
        let xv = self.value(x).data();
        let (mean, var) = if batch_stats {
            let n = T::from_usize(batch * inner).unwrap();
            let mut mean = vec![T::zero(); ch];
            let mut var = vec![T::zero(); ch];
            for c in 0..ch {
                let mut s = T::zero();
                for bi in 0..batch {
                    let off = (bi * ch + c) * inner;
                    s += xv[off..off + inner].iter().copied().sum::<T>();
                }
                let m = s / n;
                let mut sq = T::zero();
                for bi in 0..batch {
                    let off = (bi * ch + c) * inner;
                    for &v in &xv[off..off + inner] {
                        sq += (v - m) * (v - m);
                    }
                }
                mean[c] = m;
                var[c] = sq / n;
            }
            let keep = T::lit(BN_MOMENTUM);
            let fresh = T::one() - keep;
            for c in 0..ch {
                let rm = &mut running_mean.data_mut()[c];
                *rm = keep * *rm + fresh * mean[c];
                let rv = &mut running_var.data_mut()[c];
                *rv = keep * *rv + fresh * var[c];
            }
            (mean, var)
        } else {
            (running_mean.data().to_vec(), running_var.data().to_vec())
        };
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let g = self.value(gamma).data();
        let bt = self.value(beta).data();
        let mut xhat = vec![T::zero(); xv.len()];
        let mut out = vec![T::zero(); xv.len()];
        for bi in 0..batch {
            for c in 0..ch {
                let off = (bi * ch + c) * inner;
                for i in off..off + inner {
                    let h = (xv[i] - mean[c]) * inv_std[c];
                    xhat[i] = h;
                    out[i] = g[c] * h + bt[c];
                }
            }
        }
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        let value = Tensor::new(xs, out)?;
        Ok(self.push(
            value,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                batch_stats,
            },
            rg,
        ))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| T::one() / (T::one() + (-v).exp()));
        let rg = self.rg(x);
        self.push(value, Op::Sigmoid { x }, rg)
    }

    /// `y = x · wᵀ + b` with `x: [batch, in]`, `w: [out, in]`, `b: [out]`.
    pub fn dense(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let xs = self.value(x).shape().to_vec();
        let ws = self.value(w).shape().to_vec();
        if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[1] {
            return Err(Error::shape("dense", &xs, &ws));
        }
        if self.value(b).shape() != [ws[0]] {
            return Err(Error::shape("dense bias", self.value(b).shape(), &ws));
        }
        let (batch, inp, outd) = (xs[0], xs[1], ws[0]);
        let bv = self.value(b).data();
        let mut out = Vec::with_capacity(batch * outd);
        for _ in 0..batch {
            out.extend_from_slice(bv);
        }
        matmul(
            batch,
            inp,
            outd,
            self.value(x).data(),
            false,
            self.value(w).data(),
            true,
            &mut out,
            true,
        );
        let rg = self.rg(x) || self.rg(w) || self.rg(b);
        let value = Tensor::new(vec![batch, outd], out)?;
        Ok(self.push(value, Op::Dense { x, w, b }, rg))
    }

    /// Inverted dropout: surviving activations are scaled by `1/(1-rate)` in
    /// training mode; identity in evaluation mode or when `rate == 0`.
    pub fn dropout(&mut self, x: Var, rate: f64, mode: Mode, seed: u64) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Domain(format!("dropout rate {rate} outside [0, 1)")));
        }
        if mode == Mode::Eval || rate == 0.0 {
            return Ok(x);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scale = T::lit(1.0 / (1.0 - rate));
        let mask: Vec<T> = (0..self.value(x).numel())
            .map(|_| if rng.gen::<f64>() < rate { T::zero() } else { scale })
            .collect();
        let xv = self.value(x);
        let data = xv.data().iter().zip(&mask).map(|(&v, &m)| v * m).collect();
        let value = Tensor::new(xv.shape().to_vec(), data)?;
        let rg = self.rg(x);
        Ok(self.push(value, Op::Dropout { x, mask }, rg))
    }

    /// Collapses every axis after the first.
    pub fn flatten(&mut self, x: Var) -> Result<Var> {
        let xs = self.value(x).shape().to_vec();
        let rest: usize = xs[1..].iter().product();
        self.reshape(x, &[xs[0], rest])
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).clone().reshape(shape)?;
        let rg = self.rg(x);
        Ok(self.push(value, Op::Reshape { x }, rg))
    }

    /// Per-sample Euclidean distance `sqrt(Σ(a−b)² + ε)`, output `[batch, 1]`.
    pub fn euclid_dist(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() || av.ndim() != 2 {
            return Err(Error::shape("euclid_dist", av.shape(), bv.shape()));
        }
        let (batch, dim) = (av.dim(0), av.dim(1));
        let eps = T::lit(EUCLID_EPS);
        let out: Vec<T> = (0..batch)
            .map(|i| {
                let ra = &av.data()[i * dim..(i + 1) * dim];
                let rb = &bv.data()[i * dim..(i + 1) * dim];
                let s: T = ra.iter().zip(rb).map(|(&p, &q)| (p - q) * (p - q)).sum();
                (s + eps).sqrt()
            })
            .collect();
        let rg = self.rg(a) || self.rg(b);
        let value = Tensor::new(vec![batch, 1], out)?;
        Ok(self.push(value, Op::EuclidDist { a, b }, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(Error::shape("add", av.shape(), bv.shape()));
        }
        let data = av.data().iter().zip(bv.data()).map(|(&p, &q)| p + q).collect();
        let value = Tensor::new(av.shape().to_vec(), data)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::Add { a, b }, rg))
    }

    pub fn scale(&mut self, x: Var, factor: T) -> Var {
        let value = self.value(x).map(|v| v * factor);
        let rg = self.rg(x);
        self.push(value, Op::Scale { x, factor }, rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let m = xv.sum() / T::from_usize(xv.numel()).unwrap();
        let rg = self.rg(x);
        self.push(Tensor::scalar(m), Op::Mean { x }, rg)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).sum();
        let rg = self.rg(x);
        self.push(Tensor::scalar(s), Op::Sum { x }, rg)
    }

    /// Records a row-wise reduction whose values and local derivatives were
    /// computed by the caller. `values.len() · row == x.numel()`.
    pub(crate) fn row_map(&mut self, x: Var, out_shape: Vec<usize>, values: Vec<T>, jac: Vec<T>) -> Result<Var> {
        let n = self.value(x).numel();
        if values.is_empty() || n % values.len() != 0 || jac.len() != n {
            return Err(Error::shape("row_map", self.value(x).shape(), &out_shape));
        }
        let row = n / values.len();
        let value = Tensor::new(out_shape, values)?;
        let rg = self.rg(x);
        Ok(self.push(value, Op::RowMap { x, jac, row }, rg))
    }

    /// Reverse sweep from a scalar `root`. Trainable parameter gradients are
    /// added into `store` (repeated calls accumulate); gradients of every node
    /// are returned.
    pub fn backward(&self, root: Var, store: &mut ParamStore<T>) -> Result<Gradients<T>> {
        let rs = self.value(root).shape();
        if self.value(root).numel() != 1 {
            return Err(Error::shape("backward root (must be scalar)", rs, &[1]));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Tensor::full(rs, T::one()));
        for i in (0..=root.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else {
                continue;
            };
            self.backprop_node(node, &g, &mut grads, store)?;
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>) {
        if !self.rg(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn backprop_node(
        &self,
        node: &Node<T>,
        g: &Tensor<T>,
        grads: &mut [Option<Tensor<T>>],
        store: &mut ParamStore<T>,
    ) -> Result<()> {
        let gd = g.data();
        match &node.op {
            Op::Leaf => {}
            Op::Param(id) => {
                store.get_mut(*id).grad.add_assign(g);
            }
            Op::Conv1d { x, w, b, cols } => {
                let xs = self.value(*x).shape();
                let ws = self.value(*w).shape();
                let (batch, c_in, len) = (xs[0], xs[1], xs[2]);
                let (c_out, k) = (ws[0], ws[2]);
                let ck = c_in * k;
                if self.rg(*w) {
                    let mut dw = vec![T::zero(); c_out * ck];
                    for bi in 0..batch {
                        matmul(
                            c_out,
                            len,
                            ck,
                            &gd[bi * c_out * len..(bi + 1) * c_out * len],
                            false,
                            &cols[bi * ck * len..(bi + 1) * ck * len],
                            true,
                            &mut dw,
                            true,
                        );
                    }
                    self.accumulate(grads, *w, Tensor::new(ws.to_vec(), dw)?);
                }
                if self.rg(*b) {
                    let mut db = vec![T::zero(); c_out];
                    for bi in 0..batch {
                        for (co, d) in db.iter_mut().enumerate() {
                            let off = (bi * c_out + co) * len;
                            *d += gd[off..off + len].iter().copied().sum::<T>();
                        }
                    }
                    self.accumulate(grads, *b, Tensor::new(vec![c_out], db)?);
                }
                if self.rg(*x) {
                    let pad_left = (k - 1) / 2;
                    let wv = self.value(*w).data();
                    let mut dx = vec![T::zero(); batch * c_in * len];
                    let mut dcols = vec![T::zero(); ck * len];
                    for bi in 0..batch {
                        matmul(
                            ck,
                            c_out,
                            len,
                            wv,
                            true,
                            &gd[bi * c_out * len..(bi + 1) * c_out * len],
                            false,
                            &mut dcols,
                            false,
                        );
                        let dxb = &mut dx[bi * c_in * len..(bi + 1) * c_in * len];
                        for ci in 0..c_in {
                            for kk in 0..k {
                                let src = &dcols[(ci * k + kk) * len..(ci * k + kk + 1) * len];
                                let lo = pad_left.saturating_sub(kk);
                                let hi = (len + pad_left).saturating_sub(kk).min(len);
                                for l in lo..hi {
                                    dxb[ci * len + l + kk - pad_left] += src[l];
                                }
                            }
                        }
                    }
                    self.accumulate(grads, *x, Tensor::new(xs.to_vec(), dx)?);
                }
            }
            Op::MaxPool1d { x, argmax } => {
                let mut dx = Tensor::zeros(self.value(*x).shape());
                let d = dx.data_mut();
                for (&src, &gv) in argmax.iter().zip(gd) {
                    d[src] += gv;
                }
                self.accumulate(grads, *x, dx);
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                batch_stats,
            } => {
                let xs = self.value(*x).shape();
                let (batch, ch) = (xs[0], xs[1]);
                let inner: usize = xs[2..].iter().product();
                let gam = self.value(*gamma).data();
                let mut dgamma = vec![T::zero(); ch];
                let mut dbeta = vec![T::zero(); ch];
                for bi in 0..batch {
                    for c in 0..ch {
                        let off = (bi * ch + c) * inner;
                        for i in off..off + inner {
                            dgamma[c] += gd[i] * xhat[i];
                            dbeta[c] += gd[i];
                        }
                    }
                }
                if self.rg(*x) {
                    let mut dx = vec![T::zero(); gd.len()];
                    if *batch_stats {
                        let n = T::from_usize(batch * inner).unwrap();
                        for c in 0..ch {
                            // Σ dxhat = γ·Σg, Σ dxhat·xhat = γ·Σ g·xhat
                            let s1 = gam[c] * dbeta[c];
                            let s2 = gam[c] * dgamma[c];
                            let k = inv_std[c] / n;
                            for bi in 0..batch {
                                let off = (bi * ch + c) * inner;
                                for i in off..off + inner {
                                    dx[i] = k * (n * gam[c] * gd[i] - s1 - xhat[i] * s2);
                                }
                            }
                        }
                    } else {
                        for bi in 0..batch {
                            for c in 0..ch {
                                let off = (bi * ch + c) * inner;
                                for i in off..off + inner {
                                    dx[i] = gd[i] * gam[c] * inv_std[c];
                                }
                            }
                        }
                    }
                    self.accumulate(grads, *x, Tensor::new(xs.to_vec(), dx)?);
                }
                self.accumulate(grads, *gamma, Tensor::new(vec![ch], dgamma)?);
                self.accumulate(grads, *beta, Tensor::new(vec![ch], dbeta)?);
            }
            Op::Sigmoid { x } => {
                let y = node.value.data();
                let data = y.iter().zip(gd).map(|(&s, &gv)| gv * s * (T::one() - s)).collect();
                self.accumulate(grads, *x, Tensor::new(node.value.shape().to_vec(), data)?);
            }
            Op::Dense { x, w, b } => {
                let xs = self.value(*x).shape();
                let ws = self.value(*w).shape();
                let (batch, inp, outd) = (xs[0], xs[1], ws[0]);
                if self.rg(*x) {
                    let mut dx = vec![T::zero(); batch * inp];
                    matmul(
                        batch,
                        outd,
                        inp,
                        gd,
                        false,
                        self.value(*w).data(),
                        false,
                        &mut dx,
                        false,
                    );
                    self.accumulate(grads, *x, Tensor::new(xs.to_vec(), dx)?);
                }
                if self.rg(*w) {
                    let mut dw = vec![T::zero(); outd * inp];
                    matmul(outd, batch, inp, gd, true, self.value(*x).data(), false, &mut dw, false);
                    self.accumulate(grads, *w, Tensor::new(ws.to_vec(), dw)?);
                }
                if self.rg(*b) {
                    let mut db = vec![T::zero(); outd];
                    for row in gd.chunks(outd) {
                        for (d, &gv) in db.iter_mut().zip(row) {
                            *d += gv;
                        }
                    }
                    self.accumulate(grads, *b, Tensor::new(vec![outd], db)?);
                }
            }
            Op::Dropout { x, mask } => {
                let data = gd.iter().zip(mask).map(|(&gv, &m)| gv * m).collect();
                self.accumulate(grads, *x, Tensor::new(g.shape().to_vec(), data)?);
            }
            Op::Reshape { x } => {
                let dx = g.clone().reshape(self.value(*x).shape())?;
                self.accumulate(grads, *x, dx);
            }
            Op::EuclidDist { a, b } => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let dim = av.dim(1);
                let dist = node.value.data();
                let mut da = vec![T::zero(); av.numel()];
                for (i, chunk) in da.chunks_mut(dim).enumerate() {
                    let f = gd[i] / dist[i];
                    for (j, d) in chunk.iter_mut().enumerate() {
                        *d = f * (av.data()[i * dim + j] - bv.data()[i * dim + j]);
                    }
                }
                let db: Vec<T> = da.iter().map(|&v| -v).collect();
                self.accumulate(grads, *a, Tensor::new(av.shape().to_vec(), da)?);
                self.accumulate(grads, *b, Tensor::new(bv.shape().to_vec(), db)?);
            }
            Op::Add { a, b } => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::Scale { x, factor } => {
                self.accumulate(grads, *x, g.map(|v| v * *factor));
            }
            Op::Mean { x } => {
                let xs = self.value(*x).shape();
                let n = T::from_usize(self.value(*x).numel()).unwrap();
                self.accumulate(grads, *x, Tensor::full(xs, gd[0] / n));
            }
            Op::Sum { x } => {
                self.accumulate(grads, *x, Tensor::full(self.value(*x).shape(), gd[0]));
            }
            Op::RowMap { x, jac, row } => {
                let data = jac.iter().enumerate().map(|(i, &j)| j * gd[i / row]).collect();
                self.accumulate(grads, *x, Tensor::new(self.value(*x).shape().to_vec(), data)?);
            }
        }
        Ok(())
    }
}
