//! Define-by-run tape for reverse-mode differentiation.
//!
//! Every op appends a node holding its forward value; `backward` walks the
//! nodes in reverse. Nodes only reference earlier nodes, so the graph is
//! acyclic by construction and tape order is a valid topological order.

use super::kernels::{batched_gemm, gemm, Operand};
use super::tensor::Tensor;
use crate::error::{shape_err, Error, Result};

/// Floor applied inside `ln` so the log-variant losses never produce -inf.
pub const LN_FLOOR: f64 = 1e-12;

const LAYER_NORM_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Unary {
    Sigmoid,
    Tanh,
    Gelu,
    Abs,
    Square,
    /// Natural log with input floored at [`LN_FLOOR`].
    Ln,
    Softplus,
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    /// `b` is either the same shape as `a` or matches a suffix of its shape.
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    /// `mu[r] * a + (1 - mu[r]) * b` for leading-axis row `r`.
    Lerp {
        a: Var,
        b: Var,
        mus: Vec<f64>,
    },
    /// `[.., k] x [k, n]`
    MatMul(Var, Var),
    /// `[B, m, k] x [B, k, n]`, or `[B, m, k] x [B, n, k]^T`.
    BatchMatMul {
        a: Var,
        b: Var,
        transpose_b: bool,
    },
    GatherRows {
        table: Var,
        indices: Vec<usize>,
    },
    Take {
        x: Var,
        indices: Vec<usize>,
    },
    Reshape(Var),
    Unary(Unary, Var),
    /// Softmax over the last axis, each key scaled by a non-negative weight.
    Softmax {
        x: Var,
    },
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<f64>,
        rstd: Vec<f64>,
    },
    Sum(Var),
    Mean(Var),
}

#[derive(Clone, Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Recorded computation. Rebuilt for every training step.
#[derive(Clone, Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Result of [`Tape::backward`].
#[derive(Clone, Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient for `var`; zeros when the seed does not depend on it.
    pub fn wrt(&self, var: Var) -> Tensor {
        self.grads[var.0]
            .clone()
            .unwrap_or_else(|| Tensor::zeros(&self.shapes[var.0]))
    }

    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads[var.0].as_ref()
    }
}

fn broadcast_suffix(a: &[usize], b: &[usize]) -> bool {
    b.len() <= a.len() && a[a.len() - b.len()..] == *b
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
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

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Differentiable input.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Non-differentiable input; its gradient is never accumulated.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if !broadcast_suffix(sa, sb) {
            return Err(shape_err("add", format!("{sa:?} + {sb:?}")));
        }
        let bv = self.value(b).data();
        let n = bv.len().max(1);
        let mut out = self.value(a).clone();
        for (i, o) in out.data_mut().iter_mut().enumerate() {
            *o += bv[i % n];
        }
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let mut out = self.value(a).clone();
        for (o, bv) in out.data_mut().iter_mut().zip(self.value(b).data()) {
            *o -= bv;
        }
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::Sub(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let mut out = self.value(a).clone();
        for (o, bv) in out.data_mut().iter_mut().zip(self.value(b).data()) {
            *o *= bv;
        }
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let mut out = self.value(a).clone();
        out.data_mut().iter_mut().for_each(|v| *v *= c);
        let rg = self.rg(&[a]);
        self.push(out, Op::Scale(a, c), rg)
    }

    /// `mu * a + (1 - mu) * b` with a single weight.
    pub fn lerp(&mut self, a: Var, b: Var, mu: f64) -> Result<Var> {
        self.lerp_rows(a, b, &[mu])
    }

    /// Row-wise interpolation: `mus` has one weight per leading-axis row, or
    /// a single weight shared by all rows.
    pub fn lerp_rows(&mut self, a: Var, b: Var, mus: &[f64]) -> Result<Var> {
        self.same_shape("lerp", a, b)?;
        let shape = self.shape(a);
        let rows = if mus.len() == 1 { 1 } else { shape.first().copied().unwrap_or(1) };
        if mus.len() != rows {
            return Err(shape_err(
                "lerp",
                format!("{} weights for leading axis of {shape:?}", mus.len()),
            ));
        }
        let numel = self.value(a).numel();
        let per_row = numel / rows.max(1);
        let av = self.value(a).data();
        let bv = self.value(b).data();
        let data: Vec<f64> = (0..numel)
            .map(|i| {
                let mu = mus[i / per_row.max(1)];
                mu * av[i] + (1.0 - mu) * bv[i]
            })
            .collect();
        let out = Tensor::new(shape.to_vec(), data)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(
            out,
            Op::Lerp {
                a,
                b,
                mus: mus.to_vec(),
            },
            rg,
        ))
    }

    /// `x · w` where `x` is `[.., k]` and `w` is `[k, n]`.
    pub fn matmul(&mut self, x: Var, w: Var) -> Result<Var> {
        let (sx, sw) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        if sw.len() != 2 || sx.is_empty() || *sx.last().unwrap() != sw[0] {
            return Err(shape_err("matmul", format!("{sx:?} x {sw:?}")));
        }
        let (k, n) = (sw[0], sw[1]);
        let m = self.value(x).numel() / k.max(1);
        let data = gemm(
            Operand::plain(self.value(x).data()),
            Operand::plain(self.value(w).data()),
            m,
            k,
            n,
        );
        let mut shape = sx;
        *shape.last_mut().unwrap() = n;
        let out = Tensor::new(shape, data)?;
        let rg = self.rg(&[x, w]);
        Ok(self.push(out, Op::MatMul(x, w), rg))
    }

    /// Batched product of rank-3 tensors.
    pub fn batch_matmul(&mut self, a: Var, b: Var, transpose_b: bool) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let ok = sa.len() == 3 && sb.len() == 3 && sa[0] == sb[0];
        let (bk, n) = if transpose_b { (sb[2], sb[1]) } else { (sb[1], sb[2]) };
        if !ok || sa[2] != bk {
            return Err(shape_err(
                "batch_matmul",
                format!("{sa:?} x {sb:?} (transpose_b={transpose_b})"),
            ));
        }
        let (batch, m, k) = (sa[0], sa[1], sa[2]);
        let data = batched_gemm(
            self.value(a).data(),
            self.value(b).data(),
            batch,
            m,
            k,
            n,
            false,
            transpose_b,
        );
        let out = Tensor::new(vec![batch, m, n], data)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::BatchMatMul { a, b, transpose_b }, rg))
    }

    /// Rows of a `[R, C]` table, giving `[indices.len(), C]`.
    pub fn gather_rows(&mut self, table: Var, indices: &[usize]) -> Result<Var> {
        let st = self.shape(table).to_vec();
        if st.len() != 2 {
            return Err(shape_err("gather_rows", format!("table shape {st:?}")));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= st[0]) {
            return Err(shape_err(
                "gather_rows",
                format!("row {bad} out of range for table {st:?}"),
            ));
        }
        let c = st[1];
        let tv = self.value(table).data();
        let mut data = Vec::with_capacity(indices.len() * c);
        for &i in indices {
            data.extend_from_slice(&tv[i * c..(i + 1) * c]);
        }
        let out = Tensor::new(vec![indices.len(), c], data)?;
        let rg = self.rg(&[table]);
        Ok(self.push(
            out,
            Op::GatherRows {
                table,
                indices: indices.to_vec(),
            },
            rg,
        ))
    }

    /// Flat-index selection, giving a vector of `indices.len()` values.
    pub fn take(&mut self, x: Var, indices: &[usize]) -> Result<Var> {
        let xv = self.value(x).data();
        if let Some(&bad) = indices.iter().find(|&&i| i >= xv.len()) {
            return Err(shape_err(
                "take",
                format!("index {bad} out of range for {} values", xv.len()),
            ));
        }
        let data = indices.iter().map(|&i| xv[i]).collect();
        let rg = self.rg(&[x]);
        Ok(self.push(
            Tensor::vector(data),
            Op::Take {
                x,
                indices: indices.to_vec(),
            },
            rg,
        ))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).clone().reshaped(shape)?;
        let rg = self.rg(&[x]);
        Ok(self.push(out, Op::Reshape(x), rg))
    }

    pub fn unary(&mut self, kind: Unary, x: Var) -> Var {
        let mut out = self.value(x).clone();
        out.data_mut()
            .iter_mut()
            .for_each(|v| *v = unary_forward(kind, *v));
        let rg = self.rg(&[x]);
        self.push(out, Op::Unary(kind, x), rg)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(Unary::Sigmoid, x)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(Unary::Tanh, x)
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        self.unary(Unary::Gelu, x)
    }

    pub fn abs(&mut self, x: Var) -> Var {
        self.unary(Unary::Abs, x)
    }

    pub fn square(&mut self, x: Var) -> Var {
        self.unary(Unary::Square, x)
    }

    pub fn ln(&mut self, x: Var) -> Var {
        self.unary(Unary::Ln, x)
    }

    pub fn softplus(&mut self, x: Var) -> Var {
        self.unary(Unary::Softplus, x)
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        self.weighted_softmax(x, None)
    }

    /// Softmax over the last axis where key `j` enters as `w_j * exp(x_j)`.
    ///
    /// For `x` of shape `[B, M, T]` the weights have shape `[B, T]` and are
    /// shared by all `M` query rows. A zero weight removes the key; a row whose
    /// keys all have zero weight yields all zeros. Unit weights reproduce the
    /// plain softmax bit for bit.
    pub fn weighted_softmax(&mut self, x: Var, weights: Option<&Tensor>) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let t = *shape.last().unwrap_or(&1);
        let rows = self.value(x).numel() / t.max(1);
        let per_block = if let Some(w) = weights {
            if shape.len() != 3 || w.shape() != [shape[0], shape[2]] {
                return Err(shape_err(
                    "softmax",
                    format!("weights {:?} for scores {shape:?}", w.shape()),
                ));
            }
            if w.data().iter().any(|&v| v < 0.0 || !v.is_finite()) {
                return Err(shape_err("softmax", "key weights must be finite and >= 0"));
            }
            shape[1]
        } else {
            rows.max(1)
        };
        let xv = self.value(x).data();
        let mut data = vec![0.0; xv.len()];
        for r in 0..rows {
            let xr = &xv[r * t..(r + 1) * t];
            let wr = weights.map(|w| w.row(r / per_block));
            let out = &mut data[r * t..(r + 1) * t];
            let active = |j: usize| wr.is_none_or(|w| w[j] > 0.0);
            let mut max = f64::NEG_INFINITY;
            for (j, &v) in xr.iter().enumerate() {
                if active(j) && v > max {
                    max = v;
                }
            }
            if max == f64::NEG_INFINITY {
                continue;
            }
            let mut total = 0.0;
            for (j, o) in out.iter_mut().enumerate() {
                if active(j) {
                    let e = (xr[j] - max).exp();
                    *o = match wr {
                        Some(w) => w[j] * e,
                        None => e,
                    };
                    total += *o;
                }
            }
            out.iter_mut().for_each(|o| *o /= total);
        }
        let out = Tensor::new(shape, data)?;
        let rg = self.rg(&[x]);
        Ok(self.push(out, Op::Softmax { x }, rg))
    }

    /// Layer normalization over the last axis with learned gain and bias.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        let d = self.value(x).last_dim();
        for (name, v) in [("gain", gain), ("bias", bias)] {
            if self.shape(v) != [d] {
                return Err(shape_err(
                    "layer_norm",
                    format!("{name} shape {:?}, expected [{d}]", self.shape(v)),
                ));
            }
        }
        let xv = self.value(x).data();
        let (g, b) = (self.value(gain).data(), self.value(bias).data());
        let rows = xv.len() / d.max(1);
        let mut xhat = vec![0.0; xv.len()];
        let mut rstd = vec![0.0; rows];
        let mut data = vec![0.0; xv.len()];
        for r in 0..rows {
            let xr = &xv[r * d..(r + 1) * d];
            let mean = xr.iter().sum::<f64>() / d as f64;
            let var = xr.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let rs = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            rstd[r] = rs;
            for j in 0..d {
                let h = (xr[j] - mean) * rs;
                xhat[r * d + j] = h;
                data[r * d + j] = g[j] * h + b[j];
            }
        }
        let out = Tensor::new(self.shape(x).to_vec(), data)?;
        let rg = self.rg(&[x, gain, bias]);
        Ok(self.push(
            out,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            },
            rg,
        ))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        let rg = self.rg(&[x]);
        self.push(Tensor::scalar(s), Op::Sum(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let n = self.value(x).numel();
        if n == 0 {
            return Err(shape_err("mean", "empty input"));
        }
        let s = self.value(x).data().iter().sum::<f64>() / n as f64;
        let rg = self.rg(&[x]);
        Ok(self.push(Tensor::scalar(s), Op::Mean(x), rg))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err(
                op,
                format!("{:?} vs {:?}", self.shape(a), self.shape(b)),
            ));
        }
        Ok(())
    }

    /// Reverse sweep from a scalar `seed`. The tape is left untouched, so
    /// calling this twice yields identical gradients.
    pub fn backward(&self, seed: Var) -> Result<Gradients> {
        let seed_val = self.value(seed);
        if !seed_val.is_scalar() {
            return Err(Error::NonScalarSeed(seed_val.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; seed.0 + 1];
        grads[seed.0] = Some(Tensor::full(seed_val.shape(), 1.0));

        for idx in (0..=seed.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                grads[idx] = None;
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.backprop_node(node, &g, &mut grads);
            if matches!(node.op, Op::Leaf) {
                grads[idx] = Some(g);
            }
        }
        grads.resize(self.nodes.len(), None);
        Ok(Gradients {
            grads,
            shapes: self.nodes.iter().map(|n| n.value.shape().to_vec()).collect(),
        })
    }

    fn backprop_node(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let gd = g.data();
        let mut acc = |v: Var, contrib: Tensor| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(t) => t.add_assign(&contrib),
                slot @ None => *slot = Some(contrib),
            }
        };
        let like = |v: Var, data: Vec<f64>| {
            Tensor::new(self.value(v).shape().to_vec(), data).expect("gradient shape")
        };
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                acc(*a, g.clone());
                let nb = self.value(*b).numel().max(1);
                let mut gb = vec![0.0; nb];
                for (i, v) in gd.iter().enumerate() {
                    gb[i % nb] += v;
                }
                acc(*b, like(*b, gb));
            }
            Op::Sub(a, b) => {
                acc(*a, g.clone());
                acc(*b, like(*b, gd.iter().map(|v| -v).collect()));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                acc(*a, like(*a, gd.iter().zip(bv).map(|(g, b)| g * b).collect()));
                acc(*b, like(*b, gd.iter().zip(av).map(|(g, a)| g * a).collect()));
            }
            Op::Scale(a, c) => acc(*a, like(*a, gd.iter().map(|v| v * c).collect())),
            Op::Lerp { a, b, mus } => {
                let per_row = gd.len() / mus.len().max(1);
                let mu_at = |i: usize| mus[i / per_row.max(1)];
                acc(
                    *a,
                    like(*a, gd.iter().enumerate().map(|(i, v)| mu_at(i) * v).collect()),
                );
                acc(
                    *b,
                    like(
                        *b,
                        gd.iter()
                            .enumerate()
                            .map(|(i, v)| (1.0 - mu_at(i)) * v)
                            .collect(),
                    ),
                );
            }
            Op::MatMul(x, w) => {
                let (xv, wv) = (self.value(*x).data(), self.value(*w).data());
                let sw = self.value(*w).shape();
                let (k, n) = (sw[0], sw[1]);
                let m = xv.len() / k.max(1);
                // dx = g · w^T, dw = x^T · g
                acc(
                    *x,
                    like(*x, gemm(Operand::plain(gd), Operand::t(wv), m, n, k)),
                );
                acc(
                    *w,
                    like(*w, gemm(Operand::t(xv), Operand::plain(gd), k, m, n)),
                );
            }
            Op::BatchMatMul { a, b, transpose_b } => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                let sa = self.value(*a).shape();
                let (batch, m, k) = (sa[0], sa[1], sa[2]);
                let n = g.shape()[2];
                if *transpose_b {
                    // out = a b^T: da = g b, db = g^T a
                    acc(*a, like(*a, batched_gemm(gd, bv, batch, m, n, k, false, false)));
                    acc(*b, like(*b, batched_gemm(gd, av, batch, n, m, k, true, false)));
                } else {
                    // out = a b: da = g b^T, db = a^T g
                    acc(*a, like(*a, batched_gemm(gd, bv, batch, m, n, k, false, true)));
                    acc(*b, like(*b, batched_gemm(av, gd, batch, k, m, n, true, false)));
                }
            }
            Op::GatherRows { table, indices } => {
                let c = self.value(*table).shape()[1];
                let mut gt = vec![0.0; self.value(*table).numel()];
                for (r, &i) in indices.iter().enumerate() {
                    for j in 0..c {
                        gt[i * c + j] += gd[r * c + j];
                    }
                }
                acc(*table, like(*table, gt));
            }
            Op::Take { x, indices } => {
                let mut gx = vec![0.0; self.value(*x).numel()];
                for (r, &i) in indices.iter().enumerate() {
                    gx[i] += gd[r];
                }
                acc(*x, like(*x, gx));
            }
            Op::Reshape(x) => acc(*x, like(*x, gd.to_vec())),
            Op::Unary(kind, x) => {
                let xv = self.value(*x).data();
                let yv = node.value.data();
                let data = gd
                    .iter()
                    .zip(xv.iter().zip(yv))
                    .map(|(g, (&x, &y))| g * unary_derivative(*kind, x, y))
                    .collect();
                acc(*x, like(*x, data));
            }
            Op::Softmax { x } => {
                let y = node.value.data();
                let t = node.value.last_dim();
                let mut gx = vec![0.0; y.len()];
                for r in 0..y.len() / t.max(1) {
                    let (yr, gr) = (&y[r * t..(r + 1) * t], &gd[r * t..(r + 1) * t]);
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for j in 0..t {
                        gx[r * t + j] = yr[j] * (gr[j] - dot);
                    }
                }
                acc(*x, like(*x, gx));
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            } => {
                let gv = self.value(*gain).data();
                let d = gv.len();
                let rows = gd.len() / d.max(1);
                let mut gx = vec![0.0; gd.len()];
                let mut gg = vec![0.0; d];
                let mut gb = vec![0.0; d];
                for r in 0..rows {
                    let (gr, hr) = (&gd[r * d..(r + 1) * d], &xhat[r * d..(r + 1) * d]);
                    let mut mean_dh = 0.0;
                    let mut mean_dh_h = 0.0;
                    for j in 0..d {
                        let dh = gr[j] * gv[j];
                        mean_dh += dh;
                        mean_dh_h += dh * hr[j];
                        gg[j] += gr[j] * hr[j];
                        gb[j] += gr[j];
                    }
                    mean_dh /= d as f64;
                    mean_dh_h /= d as f64;
                    for j in 0..d {
                        let dh = gr[j] * gv[j];
                        gx[r * d + j] = rstd[r] * (dh - mean_dh - hr[j] * mean_dh_h);
                    }
                }
                acc(*x, like(*x, gx));
                acc(*gain, like(*gain, gg));
                acc(*bias, like(*bias, gb));
            }
            Op::Sum(x) => {
                let n = self.value(*x).numel();
                acc(*x, like(*x, vec![gd[0]; n]));
            }
            Op::Mean(x) => {
                let n = self.value(*x).numel();
                acc(*x, like(*x, vec![gd[0] / n as f64; n]));
            }
        }
    }
}

/// Numerically stable logistic function.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn unary_forward(kind: Unary, x: f64) -> f64 {
    match kind {
        Unary::Sigmoid => sigmoid(x),
        Unary::Tanh => x.tanh(),
        Unary::Gelu => 0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh()),
        Unary::Abs => x.abs(),
        Unary::Square => x * x,
        Unary::Ln => x.max(LN_FLOOR).ln(),
        Unary::Softplus => softplus(x),
    }
}

fn unary_derivative(kind: Unary, x: f64, y: f64) -> f64 {
    match kind {
        Unary::Sigmoid => y * (1.0 - y),
        Unary::Tanh => 1.0 - y * y,
        Unary::Gelu => {
            let u = GELU_C * (x + 0.044715 * x * x * x);
            let t = u.tanh();
            0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
        }
        Unary::Abs => {
            if x > 0.0 {
                1.0
            } else if x < 0.0 {
                -1.0
            } else {
                0.0
            }
        }
        Unary::Square => 2.0 * x,
        Unary::Ln => {
            if x > LN_FLOOR {
                1.0 / x
            } else {
                0.0
            }
        }
        Unary::Softplus => sigmoid(x),
    }
}
