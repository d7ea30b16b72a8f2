//! Reverse-mode automatic differentiation over [`Tensor`]s.
//!
//! A [`Graph`] is a define-by-run tape: every operation evaluates eagerly
//! and records what it needs for the backward pass. The op set is exactly
//! what the model requires — elementwise arithmetic with right-aligned
//! broadcasting, batched matmul, permute/reshape, masked softmax, layer
//! norm, activations, embedding gather, and three fused ops (pairwise
//! outer-product mean, triangular multiplication, masked cross-entropy)
//! whose index structure would be wasteful to express with primitives.
//!
//! All computation is f64 with fixed summation order, so identical inputs
//! produce bit-identical outputs.

use crate::tensor::{strides_of, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    /// `a + broadcast(b)`; `b`'s shape right-aligns against `a`'s.
    Add(Var, Var),
    /// `a * broadcast(b)`.
    Mul(Var, Var),
    Scale(Var, f64),
    /// Batched matmul: `[.., m, k] x [.., k, n]` with equal leading dims.
    Matmul(Var, Var),
    Permute(Var, Vec<usize>),
    Reshape(Var),
    /// Softmax over the last axis; entries where `mask` rounds to 0 get
    /// probability 0. A fully masked slice yields all zeros. The mask is
    /// not stored: masked outputs are zero, which already kills their
    /// gradients.
    Softmax(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        mean: Vec<f64>,
        rstd: Vec<f64>,
    },
    Sigmoid(Var),
    Gelu(Var),
    /// `out[n, :] = table[ids[n], :]`.
    GatherRows { table: Var, ids: Vec<usize> },
    /// Mean over shared unmasked columns of the outer products
    /// `a[i,k,:] (x) b[j,k,:]`, flattened to `[r, r, dp*dp]`.
    PairOuterMean {
        a: Var,
        b: Var,
        col_mask: Vec<bool>,
        rows: usize,
        cols: usize,
    },
    /// Triangular multiplicative combination over the third index:
    /// outgoing `u_ij = sum_k l_ik * r_jk`, incoming `u_ij = sum_k l_ki * r_kj`.
    TriMul { l: Var, r: Var, outgoing: bool },
    /// Mean cross-entropy of two-class logits over cells whose target is
    /// 0 or 1; target -1 means ignore. No selected cells -> loss 0.
    CrossEntropyMean { logits: Var, targets: Vec<i8> },
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

pub struct Graph {
    nodes: Vec<Node>,
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;
pub const LAYER_NORM_EPS: f64 = 1e-5;

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn requires(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Non-trainable leaf (inputs, masks).
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let value = bcast_zip(self.value(a), self.value(b), |x, y| x + y);
        let req = self.requires(a) || self.requires(b);
        self.push(value, Op::Add(a, b), req)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let value = bcast_zip(self.value(a), self.value(b), |x, y| x * y);
        let req = self.requires(a) || self.requires(b);
        self.push(value, Op::Mul(a, b), req)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let value = self.value(a).map(|x| x * c);
        let req = self.requires(a);
        self.push(value, Op::Scale(a, c), req)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = matmul_forward(self.value(a), self.value(b));
        let req = self.requires(a) || self.requires(b);
        self.push(value, Op::Matmul(a, b), req)
    }

    pub fn permute(&mut self, a: Var, axes: &[usize]) -> Var {
        let value = permute_forward(self.value(a), axes);
        let req = self.requires(a);
        self.push(value, Op::Permute(a, axes.to_vec()), req)
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Var {
        let value = self
            .value(a)
            .reshaped(shape.to_vec())
            .expect("reshape numel mismatch");
        let req = self.requires(a);
        self.push(value, Op::Reshape(a), req)
    }

    pub fn softmax(&mut self, x: Var, mask: Option<&Tensor>) -> Var {
        let value = softmax_forward(self.value(x), mask);
        let req = self.requires(x);
        self.push(value, Op::Softmax(x), req)
    }

    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Var {
        let (value, mean, rstd) =
            layer_norm_forward(self.value(x), self.value(gamma), self.value(beta));
        let req = self.requires(x) || self.requires(gamma) || self.requires(beta);
        self.push(
            value,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                mean,
                rstd,
            },
            req,
        )
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.value(a).map(sigmoid);
        let req = self.requires(a);
        self.push(value, Op::Sigmoid(a), req)
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let value = self.value(a).map(gelu);
        let req = self.requires(a);
        self.push(value, Op::Gelu(a), req)
    }

    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Var {
        let t = self.value(table);
        debug_assert_eq!(t.rank(), 2);
        let d = t.shape()[1];
        let mut data = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            let row = &t.data()[id * d..(id + 1) * d];
            data.extend_from_slice(row);
        }
        let value = Tensor::new(vec![ids.len(), d], data).unwrap();
        let req = self.requires(table);
        self.push(
            value,
            Op::GatherRows {
                table,
                ids: ids.to_vec(),
            },
            req,
        )
    }

    pub fn pair_outer_mean(&mut self, a: Var, b: Var, col_mask: &[bool]) -> Var {
        let (rows, cols) = {
            let s = self.value(a).shape();
            (s[0], s[1])
        };
        debug_assert_eq!(col_mask.len(), rows * cols);
        let value = pair_outer_mean_forward(self.value(a), self.value(b), col_mask);
        let req = self.requires(a) || self.requires(b);
        self.push(
            value,
            Op::PairOuterMean {
                a,
                b,
                col_mask: col_mask.to_vec(),
                rows,
                cols,
            },
            req,
        )
    }

    pub fn tri_mul(&mut self, l: Var, r: Var, outgoing: bool) -> Var {
        let value = tri_mul_forward(self.value(l), self.value(r), outgoing);
        let req = self.requires(l) || self.requires(r);
        self.push(value, Op::TriMul { l, r, outgoing }, req)
    }

    pub fn cross_entropy_mean(&mut self, logits: Var, targets: &[i8]) -> Var {
        let value = cross_entropy_forward(self.value(logits), targets);
        let req = self.requires(logits);
        self.push(
            value,
            Op::CrossEntropyMean {
                logits,
                targets: targets.to_vec(),
            },
            req,
        )
    }

    /// Gradients of a scalar output with respect to every grad-requiring
    /// node, indexed by [`Var::index`].
    pub fn backward(&self, output: Var) -> Vec<Option<Tensor>> {
        assert_eq!(self.value(output).numel(), 1, "backward needs a scalar");
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[output.0] = Some(Tensor::full(self.value(output).shape(), 1.0));

        for i in (0..=output.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(dy) = grads[i].take() else { continue };
            self.accumulate(i, &dy, &mut grads);
            grads[i] = Some(dy);
        }
        grads
    }

    fn accumulate(&self, i: usize, dy: &Tensor, grads: &mut [Option<Tensor>]) {
        let add_into = |grads: &mut [Option<Tensor>], v: Var, g: Tensor| {
            match &mut grads[v.0] {
                Some(acc) => {
                    for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
                        *a += b;
                    }
                }
                slot => *slot = Some(g),
            };
        };

        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                if self.requires(*a) {
                    add_into(grads, *a, dy.clone());
                }
                if self.requires(*b) {
                    let g = bcast_reduce(dy, self.value(*b).shape(), |_x| 1.0, dy);
                    add_into(grads, *b, g);
                }
            }
            Op::Mul(a, b) => {
                if self.requires(*a) {
                    let g = bcast_zip(dy, self.value(*b), |d, y| d * y);
                    add_into(grads, *a, g);
                }
                if self.requires(*b) {
                    let av = self.value(*a);
                    let mut g = Tensor::zeros(self.value(*b).shape());
                    for_each_bcast(av.shape(), self.value(*b).shape(), |oi, bi| {
                        g.data_mut()[bi] += dy.data()[oi] * av.data()[oi];
                    });
                    add_into(grads, *b, g);
                }
            }
            Op::Scale(a, c) => {
                if self.requires(*a) {
                    add_into(grads, *a, dy.map(|x| x * c));
                }
            }
            Op::Matmul(a, b) => {
                let (da, db) = matmul_backward(self.value(*a), self.value(*b), dy);
                if self.requires(*a) {
                    add_into(grads, *a, da);
                }
                if self.requires(*b) {
                    add_into(grads, *b, db);
                }
            }
            Op::Permute(a, axes) => {
                if self.requires(*a) {
                    add_into(grads, *a, permute_forward(dy, &inverse_axes(axes)));
                }
            }
            Op::Reshape(a) => {
                if self.requires(*a) {
                    let g = dy
                        .reshaped(self.value(*a).shape().to_vec())
                        .expect("reshape grad");
                    add_into(grads, *a, g);
                }
            }
            Op::Softmax(x) => {
                if self.requires(*x) {
                    let y = &self.nodes[i].value;
                    add_into(grads, *x, softmax_backward(y, dy));
                }
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                mean,
                rstd,
            } => {
                let (dx, dgamma, dbeta) = layer_norm_backward(
                    self.value(*x),
                    self.value(*gamma),
                    mean,
                    rstd,
                    dy,
                );
                if self.requires(*x) {
                    add_into(grads, *x, dx);
                }
                if self.requires(*gamma) {
                    add_into(grads, *gamma, dgamma);
                }
                if self.requires(*beta) {
                    add_into(grads, *beta, dbeta);
                }
            }
            Op::Sigmoid(a) => {
                if self.requires(*a) {
                    let y = &self.nodes[i].value;
                    let mut g = dy.clone();
                    for (gi, &yi) in g.data_mut().iter_mut().zip(y.data()) {
                        *gi *= yi * (1.0 - yi);
                    }
                    add_into(grads, *a, g);
                }
            }
            Op::Gelu(a) => {
                if self.requires(*a) {
                    let x = self.value(*a);
                    let mut g = dy.clone();
                    for (gi, &xi) in g.data_mut().iter_mut().zip(x.data()) {
                        *gi *= gelu_grad(xi);
                    }
                    add_into(grads, *a, g);
                }
            }
            Op::GatherRows { table, ids } => {
                if self.requires(*table) {
                    let t = self.value(*table);
                    let d = t.shape()[1];
                    let mut g = Tensor::zeros(t.shape());
                    for (n, &id) in ids.iter().enumerate() {
                        for c in 0..d {
                            g.data_mut()[id * d + c] += dy.data()[n * d + c];
                        }
                    }
                    add_into(grads, *table, g);
                }
            }
            Op::PairOuterMean {
                a,
                b,
                col_mask,
                rows,
                cols,
            } => {
                let (da, db) = pair_outer_mean_backward(
                    self.value(*a),
                    self.value(*b),
                    col_mask,
                    *rows,
                    *cols,
                    dy,
                );
                if self.requires(*a) {
                    add_into(grads, *a, da);
                }
                if self.requires(*b) {
                    add_into(grads, *b, db);
                }
            }
            Op::TriMul { l, r, outgoing } => {
                let (dl, dr) = tri_mul_backward(self.value(*l), self.value(*r), *outgoing, dy);
                if self.requires(*l) {
                    add_into(grads, *l, dl);
                }
                if self.requires(*r) {
                    add_into(grads, *r, dr);
                }
            }
            Op::CrossEntropyMean { logits, targets } => {
                if self.requires(*logits) {
                    let g = cross_entropy_backward(self.value(*logits), targets, dy.item());
                    add_into(grads, *logits, g);
                }
            }
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn gelu(x: f64) -> f64 {
    let u = GELU_C * (x + GELU_A * x * x * x);
    0.5 * x * (1.0 + u.tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + GELU_A * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

/// Walk `out_shape` in row-major order, yielding the matching linear index
/// into a tensor of shape `b_shape` broadcast right-aligned against it.
fn for_each_bcast(out_shape: &[usize], b_shape: &[usize], mut f: impl FnMut(usize, usize)) {
    let n = out_shape.len();
    let bn = b_shape.len();
    debug_assert!(bn <= n);
    let b_strides = strides_of(b_shape);
    // Effective stride per out axis: 0 where b is broadcast.
    let mut eff = vec![0usize; n];
    for i in 0..n {
        if i + bn >= n {
            let j = i + bn - n;
            if b_shape[j] == out_shape[i] {
                eff[i] = b_strides[j];
            } else {
                debug_assert_eq!(b_shape[j], 1, "broadcast dim mismatch");
            }
        }
    }
    let numel: usize = out_shape.iter().product();
    let mut idx = vec![0usize; n];
    let mut b_off = 0usize;
    for oi in 0..numel {
        f(oi, b_off);
        // increment multi-index
        for ax in (0..n).rev() {
            idx[ax] += 1;
            b_off += eff[ax];
            if idx[ax] < out_shape[ax] {
                break;
            }
            b_off -= eff[ax] * out_shape[ax];
            idx[ax] = 0;
        }
    }
}

fn bcast_zip(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let mut out = Tensor::zeros(a.shape());
    for_each_bcast(a.shape(), b.shape(), |oi, bi| {
        out.data_mut()[oi] = f(a.data()[oi], b.data()[bi]);
    });
    out
}

/// Reduce `dy` (shaped like the broadcast output) onto `b_shape`.
fn bcast_reduce(
    dy: &Tensor,
    b_shape: &[usize],
    weight: impl Fn(usize) -> f64,
    _out: &Tensor,
) -> Tensor {
    let mut g = Tensor::zeros(b_shape);
    for_each_bcast(dy.shape(), b_shape, |oi, bi| {
        g.data_mut()[bi] += dy.data()[oi] * weight(oi);
    });
    g
}

fn matmul_forward(a: &Tensor, b: &Tensor) -> Tensor {
    let (ash, bsh) = (a.shape(), b.shape());
    assert!(ash.len() >= 2 && bsh.len() >= 2, "matmul needs rank >= 2");
    assert_eq!(ash.len(), bsh.len(), "matmul rank mismatch");
    let nb = ash.len() - 2;
    assert_eq!(&ash[..nb], &bsh[..nb], "matmul batch dims mismatch");
    let (m, k) = (ash[nb], ash[nb + 1]);
    let (k2, n) = (bsh[nb], bsh[nb + 1]);
    assert_eq!(k, k2, "matmul inner dim mismatch");
    let batch: usize = ash[..nb].iter().product();
    let mut out_shape = ash[..nb].to_vec();
    out_shape.push(m);
    out_shape.push(n);
    let mut out = Tensor::zeros(&out_shape);
    let (ad, bd, od) = (a.data(), b.data(), out.data_mut());
    for t in 0..batch {
        let (ao, bo, oo) = (t * m * k, t * k * n, t * m * n);
        for i in 0..m {
            for p in 0..k {
                let av = ad[ao + i * k + p];
                if av == 0.0 {
                    continue;
                }
                let brow = &bd[bo + p * n..bo + (p + 1) * n];
                let orow = &mut od[oo + i * n..oo + (i + 1) * n];
                for (o, &bv) in orow.iter_mut().zip(brow) {
                    *o += av * bv;
                }
            }
        }
    }
    out
}

fn matmul_backward(a: &Tensor, b: &Tensor, dy: &Tensor) -> (Tensor, Tensor) {
    let ash = a.shape();
    let bsh = b.shape();
    let nb = ash.len() - 2;
    let (m, k) = (ash[nb], ash[nb + 1]);
    let n = bsh[nb + 1];
    let batch: usize = ash[..nb].iter().product();
    let mut da = Tensor::zeros(ash);
    let mut db = Tensor::zeros(bsh);
    let (ad, bd, dyd) = (a.data(), b.data(), dy.data());
    let dad = da.data_mut();
    for t in 0..batch {
        let (ao, bo, oo) = (t * m * k, t * k * n, t * m * n);
        // dA = dY @ B^T
        for i in 0..m {
            for p in 0..k {
                let mut acc = 0.0;
                let dyrow = &dyd[oo + i * n..oo + (i + 1) * n];
                let brow = &bd[bo + p * n..bo + (p + 1) * n];
                for (dv, bv) in dyrow.iter().zip(brow) {
                    acc += dv * bv;
                }
                dad[ao + i * k + p] += acc;
            }
        }
    }
    let dbd = db.data_mut();
    for t in 0..batch {
        let (ao, bo, oo) = (t * m * k, t * k * n, t * m * n);
        // dB = A^T @ dY
        for i in 0..m {
            for p in 0..k {
                let av = ad[ao + i * k + p];
                if av == 0.0 {
                    continue;
                }
                let dyrow = &dyd[oo + i * n..oo + (i + 1) * n];
                let dbrow = &mut dbd[bo + p * n..bo + (p + 1) * n];
                for (dbv, &dv) in dbrow.iter_mut().zip(dyrow) {
                    *dbv += av * dv;
                }
            }
        }
    }
    (da, db)
}

fn permute_forward(a: &Tensor, axes: &[usize]) -> Tensor {
    let ash = a.shape();
    assert_eq!(axes.len(), ash.len());
    let out_shape: Vec<usize> = axes.iter().map(|&ax| ash[ax]).collect();
    let in_strides = a.strides();
    let mut out = Tensor::zeros(&out_shape);
    let numel = a.numel();
    let mut idx = vec![0usize; out_shape.len()];
    let perm_strides: Vec<usize> = axes.iter().map(|&ax| in_strides[ax]).collect();
    let mut in_off = 0usize;
    for oi in 0..numel {
        out.data_mut()[oi] = a.data()[in_off];
        for ax in (0..out_shape.len()).rev() {
            idx[ax] += 1;
            in_off += perm_strides[ax];
            if idx[ax] < out_shape[ax] {
                break;
            }
            in_off -= perm_strides[ax] * out_shape[ax];
            idx[ax] = 0;
        }
    }
    out
}

fn inverse_axes(axes: &[usize]) -> Vec<usize> {
    let mut inv = vec![0usize; axes.len()];
    for (i, &ax) in axes.iter().enumerate() {
        inv[ax] = i;
    }
    inv
}

fn softmax_forward(x: &Tensor, mask: Option<&Tensor>) -> Tensor {
    let d = *x.shape().last().expect("softmax needs rank >= 1");
    let slices = x.numel() / d;
    let mut out = Tensor::zeros(x.shape());
    // Expand the mask (if any) to x's shape once.
    let expanded_mask = mask.map(|m| {
        let mut e = vec![0.0f64; x.numel()];
        for_each_bcast(x.shape(), m.shape(), |oi, bi| {
            e[oi] = m.data()[bi];
        });
        e
    });
    for s in 0..slices {
        let base = s * d;
        let valid = |j: usize| -> bool {
            expanded_mask
                .as_ref()
                .map(|e| e[base + j] > 0.5)
                .unwrap_or(true)
        };
        let mut max = f64::NEG_INFINITY;
        for j in 0..d {
            if valid(j) {
                max = max.max(x.data()[base + j]);
            }
        }
        if max == f64::NEG_INFINITY {
            continue; // fully masked slice -> zeros
        }
        let mut sum = 0.0;
        for j in 0..d {
            if valid(j) {
                let e = (x.data()[base + j] - max).exp();
                out.data_mut()[base + j] = e;
                sum += e;
            }
        }
        for j in 0..d {
            out.data_mut()[base + j] /= sum;
        }
    }
    out
}

fn softmax_backward(y: &Tensor, dy: &Tensor) -> Tensor {
    let d = *y.shape().last().unwrap();
    let slices = y.numel() / d;
    let mut dx = Tensor::zeros(y.shape());
    for s in 0..slices {
        let base = s * d;
        let mut dot = 0.0;
        for j in 0..d {
            dot += dy.data()[base + j] * y.data()[base + j];
        }
        for j in 0..d {
            let yj = y.data()[base + j];
            dx.data_mut()[base + j] = yj * (dy.data()[base + j] - dot);
        }
    }
    dx
}

fn layer_norm_forward(x: &Tensor, gamma: &Tensor, beta: &Tensor) -> (Tensor, Vec<f64>, Vec<f64>) {
    let d = *x.shape().last().expect("layer norm needs rank >= 1");
    assert_eq!(gamma.numel(), d);
    assert_eq!(beta.numel(), d);
    let slices = x.numel() / d;
    let mut out = Tensor::zeros(x.shape());
    let mut means = Vec::with_capacity(slices);
    let mut rstds = Vec::with_capacity(slices);
    for s in 0..slices {
        let base = s * d;
        let xs = &x.data()[base..base + d];
        let mean = xs.iter().sum::<f64>() / d as f64;
        let var = xs.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let rstd = 1.0 / (var + LAYER_NORM_EPS).sqrt();
        for j in 0..d {
            out.data_mut()[base + j] = (xs[j] - mean) * rstd * gamma.data()[j] + beta.data()[j];
        }
        means.push(mean);
        rstds.push(rstd);
    }
    (out, means, rstds)
}

fn layer_norm_backward(
    x: &Tensor,
    gamma: &Tensor,
    mean: &[f64],
    rstd: &[f64],
    dy: &Tensor,
) -> (Tensor, Tensor, Tensor) {
    let d = *x.shape().last().unwrap();
    let slices = x.numel() / d;
    let mut dx = Tensor::zeros(x.shape());
    let mut dgamma = Tensor::zeros(gamma.shape());
    let mut dbeta = Tensor::zeros(gamma.shape());
    for s in 0..slices {
        let base = s * d;
        let xs = &x.data()[base..base + d];
        let dys = &dy.data()[base..base + d];
        let (m, r) = (mean[s], rstd[s]);
        let mut mean_g = 0.0;
        let mut mean_gx = 0.0;
        for j in 0..d {
            let xhat = (xs[j] - m) * r;
            let g = dys[j] * gamma.data()[j];
            mean_g += g;
            mean_gx += g * xhat;
            dgamma.data_mut()[j] += dys[j] * xhat;
            dbeta.data_mut()[j] += dys[j];
        }
        mean_g /= d as f64;
        mean_gx /= d as f64;
        for j in 0..d {
            let xhat = (xs[j] - m) * r;
            let g = dys[j] * gamma.data()[j];
            dx.data_mut()[base + j] = r * (g - mean_g - xhat * mean_gx);
        }
    }
    (dx, dgamma, dbeta)
}

fn pair_outer_mean_forward(a: &Tensor, b: &Tensor, col_mask: &[bool]) -> Tensor {
    let (r, c, dp) = (a.shape()[0], a.shape()[1], a.shape()[2]);
    debug_assert_eq!(b.shape(), a.shape());
    let mut out = Tensor::zeros(&[r, r, dp * dp]);
    for i in 0..r {
        for j in 0..r {
            let mut count = 0usize;
            let cell = &mut out.data_mut()[(i * r + j) * dp * dp..(i * r + j + 1) * dp * dp];
            for k in 0..c {
                if !(col_mask[i * c + k] && col_mask[j * c + k]) {
                    continue;
                }
                count += 1;
                let av = &a.data()[(i * c + k) * dp..(i * c + k + 1) * dp];
                let bv = &b.data()[(j * c + k) * dp..(j * c + k + 1) * dp];
                for (p, &ap) in av.iter().enumerate() {
                    if ap == 0.0 {
                        continue;
                    }
                    let row = &mut cell[p * dp..(p + 1) * dp];
                    for (o, &bq) in row.iter_mut().zip(bv) {
                        *o += ap * bq;
                    }
                }
            }
            if count > 0 {
                let s = 1.0 / count as f64;
                for o in cell.iter_mut() {
                    *o *= s;
                }
            }
        }
    }
    out
}

fn pair_outer_mean_backward(
    a: &Tensor,
    b: &Tensor,
    col_mask: &[bool],
    r: usize,
    c: usize,
    dy: &Tensor,
) -> (Tensor, Tensor) {
    let dp = a.shape()[2];
    let mut da = Tensor::zeros(a.shape());
    let mut db = Tensor::zeros(b.shape());
    for i in 0..r {
        for j in 0..r {
            let count = (0..c)
                .filter(|&k| col_mask[i * c + k] && col_mask[j * c + k])
                .count();
            if count == 0 {
                continue;
            }
            let s = 1.0 / count as f64;
            let dcell = &dy.data()[(i * r + j) * dp * dp..(i * r + j + 1) * dp * dp];
            for k in 0..c {
                if !(col_mask[i * c + k] && col_mask[j * c + k]) {
                    continue;
                }
                let av = a.data()[(i * c + k) * dp..(i * c + k + 1) * dp].to_vec();
                let bv = b.data()[(j * c + k) * dp..(j * c + k + 1) * dp].to_vec();
                let dav = &mut da.data_mut()[(i * c + k) * dp..(i * c + k + 1) * dp];
                for (p, dslot) in dav.iter_mut().enumerate() {
                    let drow = &dcell[p * dp..(p + 1) * dp];
                    let mut acc = 0.0;
                    for (dv, &bq) in drow.iter().zip(&bv) {
                        acc += dv * bq;
                    }
                    *dslot += s * acc;
                }
                let dbv = &mut db.data_mut()[(j * c + k) * dp..(j * c + k + 1) * dp];
                for (q, dslot) in dbv.iter_mut().enumerate() {
                    let mut acc = 0.0;
                    for p in 0..dp {
                        acc += dcell[p * dp + q] * av[p];
                    }
                    *dslot += s * acc;
                }
            }
        }
    }
    (da, db)
}

fn tri_mul_forward(l: &Tensor, r: &Tensor, outgoing: bool) -> Tensor {
    let (n, ch) = (l.shape()[0], l.shape()[2]);
    debug_assert_eq!(l.shape(), r.shape());
    let mut out = Tensor::zeros(l.shape());
    for i in 0..n {
        for j in 0..n {
            let cell = &mut out.data_mut()[(i * n + j) * ch..(i * n + j + 1) * ch];
            for k in 0..n {
                let (li, ri) = if outgoing {
                    ((i * n + k) * ch, (j * n + k) * ch)
                } else {
                    ((k * n + i) * ch, (k * n + j) * ch)
                };
                let lv = &l.data()[li..li + ch];
                let rv = &r.data()[ri..ri + ch];
                for ((o, &a), &b) in cell.iter_mut().zip(lv).zip(rv) {
                    *o += a * b;
                }
            }
        }
    }
    out
}

fn tri_mul_backward(l: &Tensor, r: &Tensor, outgoing: bool, dy: &Tensor) -> (Tensor, Tensor) {
    let (n, ch) = (l.shape()[0], l.shape()[2]);
    let mut dl = Tensor::zeros(l.shape());
    let mut dr = Tensor::zeros(r.shape());
    for i in 0..n {
        for j in 0..n {
            let dcell = &dy.data()[(i * n + j) * ch..(i * n + j + 1) * ch];
            for k in 0..n {
                let (li, ri) = if outgoing {
                    ((i * n + k) * ch, (j * n + k) * ch)
                } else {
                    ((k * n + i) * ch, (k * n + j) * ch)
                };
                for t in 0..ch {
                    dl.data_mut()[li + t] += dcell[t] * r.data()[ri + t];
                    dr.data_mut()[ri + t] += dcell[t] * l.data()[li + t];
                }
            }
        }
    }
    (dl, dr)
}

fn cross_entropy_forward(logits: &Tensor, targets: &[i8]) -> Tensor {
    let shape = logits.shape();
    debug_assert_eq!(*shape.last().unwrap(), 2);
    let cells = logits.numel() / 2;
    debug_assert_eq!(targets.len(), cells);
    let mut total = 0.0;
    let mut count = 0usize;
    for (cell, &t) in targets.iter().enumerate() {
        if t < 0 {
            continue;
        }
        let l0 = logits.data()[cell * 2];
        let l1 = logits.data()[cell * 2 + 1];
        let max = l0.max(l1);
        let lse = max + ((l0 - max).exp() + (l1 - max).exp()).ln();
        let lt = if t == 0 { l0 } else { l1 };
        total += lse - lt;
        count += 1;
    }
    let loss = if count > 0 { total / count as f64 } else { 0.0 };
    Tensor::scalar(loss)
}

fn cross_entropy_backward(logits: &Tensor, targets: &[i8], dy: f64) -> Tensor {
    let cells = logits.numel() / 2;
    let count = targets.iter().filter(|&&t| t >= 0).count();
    let mut g = Tensor::zeros(logits.shape());
    if count == 0 {
        return g;
    }
    let w = dy / count as f64;
    for cell in 0..cells {
        let t = targets[cell];
        if t < 0 {
            continue;
        }
        let l0 = logits.data()[cell * 2];
        let l1 = logits.data()[cell * 2 + 1];
        let max = l0.max(l1);
        let e0 = (l0 - max).exp();
        let e1 = (l1 - max).exp();
        let z = e0 + e1;
        let p0 = e0 / z;
        let p1 = e1 / z;
        g.data_mut()[cell * 2] = w * (p0 - if t == 0 { 1.0 } else { 0.0 });
        g.data_mut()[cell * 2 + 1] = w * (p1 - if t == 1 { 1.0 } else { 0.0 });
    }
    g
}
