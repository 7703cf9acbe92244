//! Define-by-run reverse-mode tape.
//!
//! Every operation appends a node whose inputs precede it, so the node list is
//! already in topological order and the backward sweep is a single reverse
//! pass over it.

use super::optim::Param;
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Norm floor below which a row cannot enter a cosine.
pub const NORM_FLOOR: f64 = 1e-12;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Linear { x: Var, w: Var, b: Var },
    LeakyRelu { x: Var, slope: f64 },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Exp(Var),
    Ln(Var),
    Square(Var),
    LogAddExp(Var, Var),
    Sum(Var),
    Mean(Var),
    RowMean(Var),
    RowVariance { x: Var, ddof: usize },
    Cosine { a: Var, b: Var, inv_a: Vec<f64>, inv_b: Vec<f64> },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    requires_grad: bool,
    grad: Option<Tensor>,
    op: Op,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Deviations from the row mean, computed after shifting by the first entry
/// so that a constant row gives exact zeros.
fn centered(row: &[f64]) -> Vec<f64> {
    let k = row.first().copied().unwrap_or(0.0);
    let mean = row.iter().map(|v| v - k).sum::<f64>() / row.len() as f64;
    row.iter().map(|v| (v - k) - mean).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, requires_grad, Op::Leaf)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    /// Registers a trainable parameter; its gradient can be collected with
    /// [`Tape::accumulate_into`] after [`Tape::backward`].
    pub fn param(&mut self, p: &Param) -> Var {
        self.leaf(p.value.clone(), true)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.nodes[v.0].grad.as_ref()
    }

    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    /// Adds the gradient held by `v` into `p.grad`.
    pub fn accumulate_into(&self, v: Var, p: &mut Param) -> Result<()> {
        let g = self.grad(v).ok_or_else(|| {
            Error::Contract("parameter did not receive a gradient".to_string())
        })?;
        if g.shape() != p.value.shape() {
            return Err(Error::Dimension {
                op: "accumulate_into",
                lhs: g.shape().to_vec(),
                rhs: p.value.shape().to_vec(),
            });
        }
        match &mut p.grad {
            Some(acc) => axpy(1.0, g.data(), acc.data_mut()),
            None => p.grad = Some(g.clone()),
        }
        Ok(())
    }

    fn push(&mut self, value: Tensor, requires_grad: bool, op: Op) -> Var {
        self.nodes.push(Node {
            value,
            requires_grad,
            grad: None,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(Error::Dimension {
                op,
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        Ok(())
    }

    fn rank2(&self, op: &'static str, a: Var) -> Result<(usize, usize)> {
        let s = self.value(a).shape();
        if s.len() != 2 {
            return Err(Error::Dimension {
                op,
                lhs: s.to_vec(),
                rhs: vec![0, 0],
            });
        }
        Ok((s[0], s[1]))
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let src = self.value(a);
        let data = src.data().iter().map(|&v| f(v)).collect();
        let value = Tensor::new(src.shape().to_vec(), data).expect("same shape");
        let rg = self.any_grad(&[a]);
        self.push(value, rg, op)
    }

    fn binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var> {
        self.same_shape(name, a, b)?;
        let (va, vb) = (self.value(a), self.value(b));
        let data = va
            .data()
            .iter()
            .zip(vb.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let value = Tensor::new(va.shape().to_vec(), data)?;
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(value, rg, op))
    }

    /// `out[i, j] = Σ_k x[i, k]·w[j, k] + b[j]` for `x: B×In`, `w: Out×In`, `b: Out`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (rows, inner) = self.rank2("linear", x)?;
        let (out, w_inner) = self.rank2("linear", w)?;
        if inner != w_inner {
            return Err(Error::Dimension {
                op: "linear",
                lhs: self.value(x).shape().to_vec(),
                rhs: self.value(w).shape().to_vec(),
            });
        }
        if self.value(b).shape() != [out] {
            return Err(Error::Dimension {
                op: "linear bias",
                lhs: self.value(w).shape().to_vec(),
                rhs: self.value(b).shape().to_vec(),
            });
        }
        let (xv, wv, bv) = (self.value(x), self.value(w), self.value(b));
        let mut data = Vec::with_capacity(rows * out);
        for i in 0..rows {
            let xr = xv.row(i);
            for j in 0..out {
                data.push(dot(xr, wv.row(j)) + bv.data()[j]);
            }
        }
        let value = Tensor::matrix(rows, out, data)?;
        let rg = self.any_grad(&[x, w, b]);
        Ok(self.push(value, rg, Op::Linear { x, w, b }))
    }

    /// Elementwise `max(x, slope·x)`. The subgradient at exactly zero is `slope`.
    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        self.unary(
            x,
            |v| if v > 0.0 { v } else { slope * v },
            Op::LeakyRelu { x, slope },
        )
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        self.unary(a, |v| c * v, Op::Scale(a, c))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, f64::exp, Op::Exp(a))
    }

    pub fn ln(&mut self, a: Var) -> Var {
        self.unary(a, f64::ln, Op::Ln(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(a, |v| v * v, Op::Square(a))
    }

    /// Elementwise `ln(e^a + e^b)`, evaluated with the max subtracted.
    pub fn log_add_exp(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("log_add_exp", a, b, log_add_exp, Op::LogAddExp(a, b))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        let rg = self.any_grad(&[a]);
        self.push(Tensor::scalar(s), rg, Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let s = v.data().iter().sum::<f64>() / v.len() as f64;
        let rg = self.any_grad(&[a]);
        self.push(Tensor::scalar(s), rg, Op::Mean(a))
    }

    /// Mean of each row of an `n×m` matrix, giving a length-`n` vector.
    pub fn row_mean(&mut self, a: Var) -> Result<Var> {
        let (_, m) = self.rank2("row_mean", a)?;
        let data = self
            .value(a)
            .row_iter()
            .map(|r| r.iter().sum::<f64>() / m as f64)
            .collect();
        let rg = self.any_grad(&[a]);
        Ok(self.push(Tensor::vector(data), rg, Op::RowMean(a)))
    }

    /// Variance of each row with divisor `m - ddof`.
    pub fn row_variance(&mut self, x: Var, ddof: usize) -> Result<Var> {
        let (_, m) = self.rank2("row_variance", x)?;
        if m <= ddof {
            return Err(Error::Contract(format!(
                "row_variance needs more than {ddof} columns, got {m}"
            )));
        }
        let data = self
            .value(x)
            .row_iter()
            .map(|r| centered(r).iter().map(|v| v * v).sum::<f64>() / (m - ddof) as f64)
            .collect();
        let rg = self.any_grad(&[x]);
        Ok(self.push(Tensor::vector(data), rg, Op::RowVariance { x, ddof }))
    }

    /// Pairwise cosine similarity between the rows of `a: n×d` and `b: m×d`,
    /// giving an `n×m` matrix clamped to `[-1, 1]`.
    pub fn cosine(&mut self, a: Var, b: Var) -> Result<Var> {
        let (n, d) = self.rank2("cosine", a)?;
        let (m, db) = self.rank2("cosine", b)?;
        if d != db {
            return Err(Error::Dimension {
                op: "cosine",
                lhs: self.value(a).shape().to_vec(),
                rhs: self.value(b).shape().to_vec(),
            });
        }
        let inv_norms = |t: &Tensor| -> Result<Vec<f64>> {
            t.row_iter()
                .map(|r| {
                    let norm = dot(r, r).sqrt();
                    if norm < NORM_FLOOR || !norm.is_finite() {
                        Err(Error::DegenerateFeature {
                            norm,
                            floor: NORM_FLOOR,
                        })
                    } else {
                        Ok(1.0 / norm)
                    }
                })
                .collect()
        };
        let (va, vb) = (self.value(a), self.value(b));
        let inv_a = inv_norms(va)?;
        let inv_b = inv_norms(vb)?;
        let mut data = Vec::with_capacity(n * m);
        for (i, ia) in inv_a.iter().enumerate() {
            for (j, ib) in inv_b.iter().enumerate() {
                let c = dot(va.row(i), vb.row(j)) * ia * ib;
                data.push(c.clamp(-1.0, 1.0));
            }
        }
        let value = Tensor::matrix(n, m, data)?;
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(value, rg, Op::Cosine { a, b, inv_a, inv_b }))
    }

    /// Reverse sweep from a scalar `loss`. Gradients accumulate into every
    /// reachable node that requires grad; call [`Tape::zero_grad`] to reset.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if loss.0 >= self.nodes.len() {
            return Err(Error::Contract("loss is not on this tape".to_string()));
        }
        if self.value(loss).len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut adj: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        adj[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = adj[i].take() else { continue };
            self.propagate(i, &g, &mut adj);
            adj[i] = Some(g);
        }

        for (node, a) in self.nodes.iter_mut().zip(adj) {
            let (true, Some(a)) = (node.requires_grad, a) else {
                continue;
            };
            match &mut node.grad {
                Some(acc) => axpy(1.0, &a, acc.data_mut()),
                None => {
                    node.grad = Some(Tensor::new(node.value.shape().to_vec(), a)?);
                }
            }
        }
        Ok(())
    }

    fn propagate(&self, i: usize, g: &[f64], adj: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        let out = &node.value;
        // `with` hands a zero-initialised (or existing) adjoint for `v` to `f`,
        // skipping inputs that do not need a gradient.
        let mut with = |v: Var, f: &mut dyn FnMut(&mut [f64])| {
            let n = &self.nodes[v.0];
            if !n.requires_grad {
                return;
            }
            let buf = adj[v.0].get_or_insert_with(|| vec![0.0; n.value.len()]);
            f(buf);
        };
        match &node.op {
            Op::Leaf => {}
            Op::Linear { x, w, b } => {
                let (xv, wv) = (self.value(*x), self.value(*w));
                let (rows, outs) = (out.rows(), out.cols());
                with(*x, &mut |gx| {
                    let inner = xv.cols();
                    for r in 0..rows {
                        let gx_row = &mut gx[r * inner..(r + 1) * inner];
                        for j in 0..outs {
                            axpy(g[r * outs + j], wv.row(j), gx_row);
                        }
                    }
                });
                with(*w, &mut |gw| {
                    let inner = xv.cols();
                    for r in 0..rows {
                        let xr = xv.row(r);
                        for j in 0..outs {
                            axpy(g[r * outs + j], xr, &mut gw[j * inner..(j + 1) * inner]);
                        }
                    }
                });
                with(*b, &mut |gb| {
                    for r in 0..rows {
                        axpy(1.0, &g[r * outs..(r + 1) * outs], gb);
                    }
                });
            }
            Op::LeakyRelu { x, slope } => {
                let xv = self.value(*x);
                with(*x, &mut |gx| {
                    for ((acc, &gi), &xi) in gx.iter_mut().zip(g).zip(xv.data()) {
                        *acc += if xi > 0.0 { gi } else { slope * gi };
                    }
                });
            }
            Op::Add(a, b) => {
                with(*a, &mut |ga| axpy(1.0, g, ga));
                with(*b, &mut |gb| axpy(1.0, g, gb));
            }
            Op::Sub(a, b) => {
                with(*a, &mut |ga| axpy(1.0, g, ga));
                with(*b, &mut |gb| axpy(-1.0, g, gb));
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                with(*a, &mut |ga| {
                    for k in 0..ga.len() {
                        ga[k] += g[k] * vb.data()[k];
                    }
                });
                with(*b, &mut |gb| {
                    for k in 0..gb.len() {
                        gb[k] += g[k] * va.data()[k];
                    }
                });
            }
            Op::Scale(a, c) => with(*a, &mut |ga| axpy(*c, g, ga)),
            Op::Exp(a) => with(*a, &mut |ga| {
                for k in 0..ga.len() {
                    ga[k] += g[k] * out.data()[k];
                }
            }),
            Op::Ln(a) => {
                let va = self.value(*a);
                with(*a, &mut |ga| {
                    for k in 0..ga.len() {
                        ga[k] += g[k] / va.data()[k];
                    }
                });
            }
            Op::Square(a) => {
                let va = self.value(*a);
                with(*a, &mut |ga| {
                    for k in 0..ga.len() {
                        ga[k] += 2.0 * g[k] * va.data()[k];
                    }
                });
            }
            Op::LogAddExp(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                with(*a, &mut |ga| {
                    for k in 0..ga.len() {
                        ga[k] += g[k] * (va.data()[k] - out.data()[k]).exp();
                    }
                });
                with(*b, &mut |gb| {
                    for k in 0..gb.len() {
                        gb[k] += g[k] * (vb.data()[k] - out.data()[k]).exp();
                    }
                });
            }
            Op::Sum(a) => with(*a, &mut |ga| ga.iter_mut().for_each(|v| *v += g[0])),
            Op::Mean(a) => with(*a, &mut |ga| {
                let s = g[0] / ga.len() as f64;
                ga.iter_mut().for_each(|v| *v += s);
            }),
            Op::RowMean(a) => {
                let m = self.value(*a).cols();
                with(*a, &mut |ga| {
                    for (r, chunk) in ga.chunks_mut(m).enumerate() {
                        let s = g[r] / m as f64;
                        chunk.iter_mut().for_each(|v| *v += s);
                    }
                });
            }
            Op::RowVariance { x, ddof } => {
                let xv = self.value(*x);
                let m = xv.cols();
                with(*x, &mut |gx| {
                    for (r, chunk) in gx.chunks_mut(m).enumerate() {
                        let s = 2.0 * g[r] / (m - ddof) as f64;
                        for (acc, v) in chunk.iter_mut().zip(centered(xv.row(r))) {
                            *acc += s * v;
                        }
                    }
                });
            }
            Op::Cosine { a, b, inv_a, inv_b } => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let (n, m, d) = (va.rows(), vb.rows(), va.cols());
                // d cos(a_i, b_j) / d a_i = (b̂_j − cos_ij · â_i) / |a_i|
                with(*a, &mut |ga| {
                    for i in 0..n {
                        let gi = &mut ga[i * d..(i + 1) * d];
                        let mut diag = 0.0;
                        for j in 0..m {
                            let gij = g[i * m + j];
                            if gij == 0.0 {
                                continue;
                            }
                            axpy(gij * inv_b[j] * inv_a[i], vb.row(j), gi);
                            diag += gij * out.data()[i * m + j];
                        }
                        axpy(-diag * inv_a[i] * inv_a[i], va.row(i), gi);
                    }
                });
                with(*b, &mut |gb| {
                    for j in 0..m {
                        let gj = &mut gb[j * d..(j + 1) * d];
                        let mut diag = 0.0;
                        for i in 0..n {
                            let gij = g[i * m + j];
                            if gij == 0.0 {
                                continue;
                            }
                            axpy(gij * inv_a[i] * inv_b[j], va.row(i), gj);
                            diag += gij * out.data()[i * m + j];
                        }
                        axpy(-diag * inv_b[j] * inv_b[j], vb.row(j), gj);
                    }
                });
            }
        }
    }
}

/// `ln(e^a + e^b)` without overflow.
pub fn log_add_exp(a: f64, b: f64) -> f64 {
    let m = a.max(b);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + ((a - m).exp() + (b - m).exp()).ln()
}
