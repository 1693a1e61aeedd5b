//! Tape-based reverse-mode differentiation over [`Array`] values.
//!
//! Every operation appends a node holding its output value; node indices are
//! therefore a topological order, and [`Graph::backward`] walks them once in
//! reverse.

use std::collections::HashMap;

use super::kernels;
use super::params::{Gradients, ParamId, ParamStore};
use crate::array::Array;
use crate::error::{Error, Result};

/// Floor applied to per-channel standard deviations before dividing.
pub const SIGMA_FLOOR: f64 = 1e-5;

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Affine { x: Var, w: Var, b: Var },
    Conv3x3 { x: Var, w: Var, b: Var },
    Relu(Var),
    MaxPool2 { x: Var, argmax: Vec<usize> },
    ChannelMean(Var),
    ChannelVar { x: Var, mean: Vec<f64> },
    L1Rows(Var, Var),
    SoftmaxCe { logits: Var, labels: Vec<usize>, probs: Vec<f64> },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    RowNormalize { x: Var, norms: Vec<f64> },
    Trace(Var),
    Sum(Var),
    Mean(Var),
    Restyle(Box<RestyleSaved>),
    Standardize { x: Var, sigma: Vec<f64>, normalized: Vec<f64> },
}

#[derive(Debug)]
struct RestyleSaved {
    x: Var,
    normalized: Vec<f64>,
    sigma: Vec<f64>,
    floored: Vec<bool>,
    target_sigma: Vec<f64>,
}

#[derive(Debug)]
struct Node {
    value: Array,
    op: Op,
    requires_grad: bool,
    param: Option<ParamId>,
}

/// A recording of operations and their values.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: HashMap<ParamId, Var>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Array {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Parameters that entered this graph.
    pub fn param_ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        self.params.keys().copied()
    }

    pub fn constant(&mut self, value: Array) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Registers a trainable parameter. Repeated calls with the same id yield
    /// the same node, so gradients from every use accumulate.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let v = self.push(store.get(id).clone(), Op::Leaf, true);
        self.nodes[v.0].param = Some(id);
        self.params.insert(id, v);
        v
    }

    fn push(&mut self, value: Array, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            param: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    fn expect_rank(&self, op: &'static str, v: Var, rank: usize) -> Result<()> {
        let s = self.shape(v);
        if s.len() != rank {
            return Err(Error::shape(op, s, &vec![0; rank]));
        }
        Ok(())
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(op, self.shape(a), self.shape(b)));
        }
        Ok(())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::shape("matmul", sa, sb));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let out = kernels::matmul(self.value(a).data(), self.value(b).data(), m, k, n);
        let value = Array::new(vec![m, n], out)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, Op::MatMul(a, b), rg))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        self.expect_rank("transpose", a, 2)?;
        let value = transpose(self.value(a));
        let rg = self.rg(&[a]);
        Ok(self.push(value, Op::Transpose(a), rg))
    }

    /// Fully connected layer: `x (b x in) * w (in x out) + bias (out)`.
    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (sx, sw, sb) = (self.shape(x), self.shape(w), self.shape(b));
        if sx.len() != 2 || sw.len() != 2 || sx[1] != sw[0] {
            return Err(Error::shape("affine", sx, sw));
        }
        if sb != [sw[1]] {
            return Err(Error::shape("affine", sw, sb));
        }
        let (rows, k, n) = (sx[0], sx[1], sw[1]);
        let mut out = Vec::with_capacity(rows * n);
        for _ in 0..rows {
            out.extend_from_slice(self.value(b).data());
        }
        kernels::gemm(
            rows,
            k,
            n,
            1.0,
            self.value(x).data(),
            (k, 1),
            self.value(w).data(),
            (n, 1),
            1.0,
            &mut out,
            (n, 1),
        );
        let value = Array::new(vec![rows, n], out)?;
        let rg = self.rg(&[x, w, b]);
        Ok(self.push(value, Op::Affine { x, w, b }, rg))
    }

    /// 3x3 convolution, stride 1, zero padding 1.
    pub fn conv3x3(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (sx, sw, sb) = (self.shape(x), self.shape(w), self.shape(b));
        if sx.len() != 4 || sw.len() != 4 || sw[1] != sx[1] || sw[2] != 3 || sw[3] != 3 {
            return Err(Error::shape("conv3x3", sx, sw));
        }
        if sb != [sw[0]] {
            return Err(Error::shape("conv3x3", sw, sb));
        }
        let value = kernels::conv3x3(self.value(x), self.value(w), self.value(b));
        let rg = self.rg(&[x, w, b]);
        Ok(self.push(value, Op::Conv3x3 { x, w, b }, rg))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| v.max(0.0));
        let rg = self.rg(&[x]);
        self.push(value, Op::Relu(x), rg)
    }

    /// 2x2 max-pool, stride 2.
    pub fn max_pool2(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x);
        if s.len() != 4 || s[2] < 2 || s[3] < 2 {
            return Err(Error::shape("max_pool2", s, &[0, 0, 2, 2]));
        }
        let (value, argmax) = kernels::max_pool2(self.value(x));
        let rg = self.rg(&[x]);
        Ok(self.push(value, Op::MaxPool2 { x, argmax }, rg))
    }

    /// Spatial mean per (sample, channel): `b x c x h x w -> b x c`.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 4 || s[2] * s[3] == 0 {
            return Err(Error::shape("global_avg_pool", &s, &[0, 0, 1, 1]));
        }
        let (mean, _) = kernels::channel_moments(self.value(x));
        let value = Array::new(vec![s[0], s[1]], mean)?;
        let rg = self.rg(&[x]);
        Ok(self.push(value, Op::ChannelMean(x), rg))
    }

    /// Alias of [`Graph::global_avg_pool`].
    pub fn channel_mean(&mut self, x: Var) -> Result<Var> {
        self.global_avg_pool(x)
    }

    /// Population spatial variance per (sample, channel).
    pub fn channel_var(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 4 || s[2] * s[3] == 0 {
            return Err(Error::shape("channel_var", &s, &[0, 0, 1, 1]));
        }
        let (mean, var) = kernels::channel_moments(self.value(x));
        let value = Array::new(vec![s[0], s[1]], var)?;
        let rg = self.rg(&[x]);
        Ok(self.push(value, Op::ChannelVar { x, mean }, rg))
    }

    /// Per-row L1 distance of two `b x p` matrices, giving a `b` vector.
    pub fn l1_rows(&mut self, a: Var, b: Var) -> Result<Var> {
        self.expect_rank("l1_rows", a, 2)?;
        self.same_shape("l1_rows", a, b)?;
        let (va, vb) = (self.value(a), self.value(b));
        let p = va.cols();
        let out: Vec<f64> = va
            .data()
            .chunks(p)
            .zip(vb.data().chunks(p))
            .map(|(x, y)| x.iter().zip(y).map(|(u, v)| (u - v).abs()).sum())
            .collect();
        let value = Array::vector(out);
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, Op::L1Rows(a, b), rg))
    }

    /// Batch-mean softmax cross-entropy of `b x C` logits against labels.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        self.expect_rank("softmax_cross_entropy", logits, 2)?;
        let v = self.value(logits);
        let (b, classes) = (v.rows(), v.cols());
        if labels.len() != b {
            return Err(Error::shape("softmax_cross_entropy", v.shape(), &[labels.len()]));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= classes) {
            return Err(Error::invalid(format!(
                "label {bad} out of range for {classes} classes"
            )));
        }
        if b == 0 {
            return Err(Error::invalid("softmax_cross_entropy on an empty batch"));
        }
        let mut probs = Vec::with_capacity(b * classes);
        let mut loss = 0.0;
        for (row, &y) in v.data().chunks(classes).zip(labels) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = row.iter().map(|&l| (l - max).exp()).sum();
            let log_z = z.ln() + max;
            loss += log_z - row[y];
            probs.extend(row.iter().map(|&l| (l - log_z).exp()));
        }
        let value = Array::scalar(loss / b as f64);
        let rg = self.rg(&[logits]);
        Ok(self.push(
            value,
            Op::SoftmaxCe {
                logits,
                labels: labels.to_vec(),
                probs,
            },
            rg,
        ))
    }

    fn zip_with(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Array {
        let (va, vb) = (self.value(a), self.value(b));
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
        Array::new(va.shape().to_vec(), data).expect("same shape")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let value = self.zip_with(a, b, |x, y| x + y);
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let value = self.zip_with(a, b, |x, y| x - y);
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, Op::Sub(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let value = self.zip_with(a, b, |x, y| x * y);
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let value = self.value(a).map(|x| x * s);
        let rg = self.rg(&[a]);
        self.push(value, Op::Scale(a, s), rg)
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Var {
        let value = self.value(a).map(|x| x + s);
        let rg = self.rg(&[a]);
        self.push(value, Op::AddScalar(a), rg)
    }

    /// Divides each row by its L2 norm; all-zero rows stay zero.
    pub fn row_normalize(&mut self, x: Var) -> Result<Var> {
        self.expect_rank("row_normalize", x, 2)?;
        let v = self.value(x);
        let p = v.cols();
        let mut norms = Vec::with_capacity(v.rows());
        let mut out = Vec::with_capacity(v.len());
        for row in v.data().chunks(p.max(1)).take(v.rows()) {
            let n = row.iter().map(|a| a * a).sum::<f64>().sqrt();
            norms.push(n);
            if n > 0.0 {
                out.extend(row.iter().map(|a| a / n));
            } else {
                out.extend(std::iter::repeat_n(0.0, row.len()));
            }
        }
        let value = Array::new(v.shape().to_vec(), out)?;
        let rg = self.rg(&[x]);
        Ok(self.push(value, Op::RowNormalize { x, norms }, rg))
    }

    pub fn trace(&mut self, a: Var) -> Result<Var> {
        let s = self.shape(a);
        if s.len() != 2 || s[0] != s[1] {
            return Err(Error::shape("trace", s, &[s.first().copied().unwrap_or(0); 2]));
        }
        let v = self.value(a);
        let n = s[0];
        let t = (0..n).map(|i| v.data()[i * n + i]).sum();
        let rg = self.rg(&[a]);
        Ok(self.push(Array::scalar(t), Op::Trace(a), rg))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let t = self.value(a).sum();
        let rg = self.rg(&[a]);
        self.push(Array::scalar(t), Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a);
        if v.is_empty() {
            return Err(Error::invalid("mean of an empty array"));
        }
        let t = v.sum() / v.len() as f64;
        let rg = self.rg(&[a]);
        Ok(self.push(Array::scalar(t), Op::Mean(a), rg))
    }

    /// Replaces each channel's spatial mean/std with the given targets:
    /// `target_sigma * (x - mu) / max(sigma, SIGMA_FLOOR) + target_mu`.
    ///
    /// Targets are constants; gradients flow through `x` including its own
    /// statistics.
    pub fn restyle(&mut self, x: Var, target_mu: &Array, target_sigma: &Array) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 4 || s[2] * s[3] == 0 {
            return Err(Error::shape("restyle", &s, &[0, 0, 1, 1]));
        }
        let bc = [s[0], s[1]];
        if target_mu.shape() != bc || target_sigma.shape() != bc {
            return Err(Error::shape("restyle", &bc, target_mu.shape()));
        }
        let (mean, var) = kernels::channel_moments(self.value(x));
        let hw = s[2] * s[3];
        let mut normalized = Vec::with_capacity(self.value(x).len());
        let mut out = Vec::with_capacity(normalized.capacity());
        let mut sigma = Vec::with_capacity(mean.len());
        let mut floored = Vec::with_capacity(mean.len());
        for (p, plane) in self.value(x).data().chunks(hw).enumerate() {
            let sd = var[p].sqrt();
            let f = sd < SIGMA_FLOOR;
            let sd = sd.max(SIGMA_FLOOR);
            sigma.push(sd);
            floored.push(f);
            let (tm, ts) = (target_mu.data()[p], target_sigma.data()[p]);
            for &v in plane {
                let n = (v - mean[p]) / sd;
                normalized.push(n);
                out.push(ts * n + tm);
            }
        }
        let value = Array::new(s, out)?;
        let rg = self.rg(&[x]);
        Ok(self.push(
            value,
            Op::Restyle(Box::new(RestyleSaved {
                x,
                normalized,
                sigma,
                floored,
                target_sigma: target_sigma.data().to_vec(),
            })),
            rg,
        ))
    }

    /// Standardizes each column of a `b x p` matrix across rows using
    /// `sigma = sqrt(var + ridge^2)` with population variance.
    pub fn standardize_columns(&mut self, x: Var, ridge: f64) -> Result<Var> {
        self.expect_rank("standardize_columns", x, 2)?;
        let v = self.value(x);
        let (b, p) = (v.rows(), v.cols());
        if b == 0 {
            return Err(Error::invalid("standardize_columns on zero rows"));
        }
        let mut mean = vec![0.0; p];
        for row in v.data().chunks(p) {
            for (m, a) in mean.iter_mut().zip(row) {
                *m += a;
            }
        }
        mean.iter_mut().for_each(|m| *m /= b as f64);
        let mut var = vec![0.0; p];
        for row in v.data().chunks(p) {
            for ((s, a), m) in var.iter_mut().zip(row).zip(&mean) {
                *s += (a - m) * (a - m);
            }
        }
        let sigma: Vec<f64> = var
            .iter()
            .map(|s| (s / b as f64 + ridge * ridge).sqrt())
            .collect();
        let mut normalized = Vec::with_capacity(b * p);
        for row in v.data().chunks(p) {
            for j in 0..p {
                normalized.push((row[j] - mean[j]) / sigma[j]);
            }
        }
        let value = Array::new(vec![b, p], normalized.clone())?;
        let rg = self.rg(&[x]);
        Ok(self.push(
            value,
            Op::Standardize {
                x,
                sigma,
                normalized,
            },
            rg,
        ))
    }

    /// Gradients of the scalar `loss` with respect to every parameter in the graph.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(Error::NonScalarLoss(lv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Array>> = Vec::with_capacity(loss.0 + 1);
        grads.resize_with(loss.0 + 1, || None);
        grads[loss.0] = Some(Array::full(lv.shape(), 1.0));

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            if node.param.is_some() {
                grads[i] = Some(g);
                continue;
            }
            self.propagate(&node.op, &node.value, g, &mut grads);
        }

        let mut out = Gradients::default();
        for (&id, &v) in &self.params {
            let g = grads
                .get_mut(v.0)
                .and_then(Option::take)
                .unwrap_or_else(|| Array::zeros(self.value(v).shape()));
            out.insert(id, g);
        }
        Ok(out)
    }

    fn accumulate(&self, grads: &mut [Option<Array>], v: Var, g: Array) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => acc.axpy(1.0, &g),
            slot @ None => *slot = Some(g),
        }
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn propagate(&self, op: &Op, out: &Array, g: Array, grads: &mut [Option<Array>]) {
        match op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let (m, k, n) = (va.rows(), va.cols(), vb.cols());
                if self.wants(*a) {
                    // g (m x n) * b^T (n x k)
                    let mut ga = vec![0.0; m * k];
                    kernels::gemm(m, n, k, 1.0, g.data(), (n, 1), vb.data(), (1, n), 0.0, &mut ga, (k, 1));
                    self.accumulate(grads, *a, Array::new(vec![m, k], ga).unwrap());
                }
                if self.wants(*b) {
                    // a^T (k x m) * g (m x n)
                    let mut gb = vec![0.0; k * n];
                    kernels::gemm(k, m, n, 1.0, va.data(), (1, k), g.data(), (n, 1), 0.0, &mut gb, (n, 1));
                    self.accumulate(grads, *b, Array::new(vec![k, n], gb).unwrap());
                }
            }
            Op::Transpose(a) => self.accumulate(grads, *a, transpose(&g)),
            Op::Affine { x, w, b } => {
                let (vx, vw) = (self.value(*x), self.value(*w));
                let (rows, k, n) = (vx.rows(), vx.cols(), vw.cols());
                if self.wants(*x) {
                    let mut gx = vec![0.0; rows * k];
                    kernels::gemm(rows, n, k, 1.0, g.data(), (n, 1), vw.data(), (1, n), 0.0, &mut gx, (k, 1));
                    self.accumulate(grads, *x, Array::new(vec![rows, k], gx).unwrap());
                }
                if self.wants(*w) {
                    let mut gw = vec![0.0; k * n];
                    kernels::gemm(k, rows, n, 1.0, vx.data(), (1, k), g.data(), (n, 1), 0.0, &mut gw, (n, 1));
                    self.accumulate(grads, *w, Array::new(vec![k, n], gw).unwrap());
                }
                if self.wants(*b) {
                    let mut gb = vec![0.0; n];
                    for row in g.data().chunks(n) {
                        for (s, v) in gb.iter_mut().zip(row) {
                            *s += v;
                        }
                    }
                    self.accumulate(grads, *b, Array::vector(gb));
                }
            }
            Op::Conv3x3 { x, w, b } => {
                let (gx, gw, gb) =
                    kernels::conv3x3_backward(self.value(*x), self.value(*w), &g, self.wants(*x));
                if let Some(gx) = gx {
                    self.accumulate(grads, *x, gx);
                }
                self.accumulate(grads, *w, gw);
                self.accumulate(grads, *b, gb);
            }
            Op::Relu(x) => {
                let vx = self.value(*x);
                let data = vx
                    .data()
                    .iter()
                    .zip(g.data())
                    .map(|(&v, &d)| if v > 0.0 { d } else { 0.0 })
                    .collect();
                self.accumulate(grads, *x, Array::new(vx.shape().to_vec(), data).unwrap());
            }
            Op::MaxPool2 { x, argmax } => {
                let vx = self.value(*x);
                let mut gx = Array::zeros(vx.shape());
                for (&i, &d) in argmax.iter().zip(g.data()) {
                    gx.data_mut()[i] += d;
                }
                self.accumulate(grads, *x, gx);
            }
            Op::ChannelMean(x) => {
                let vx = self.value(*x);
                let s = vx.shape();
                let hw = s[2] * s[3];
                let inv = 1.0 / hw as f64;
                let mut gx = Vec::with_capacity(vx.len());
                for &d in g.data() {
                    gx.extend(std::iter::repeat_n(d * inv, hw));
                }
                self.accumulate(grads, *x, Array::new(s.to_vec(), gx).unwrap());
            }
            Op::ChannelVar { x, mean } => {
                let vx = self.value(*x);
                let s = vx.shape();
                let hw = s[2] * s[3];
                let scale = 2.0 / hw as f64;
                let mut gx = Vec::with_capacity(vx.len());
                for (p, plane) in vx.data().chunks(hw).enumerate() {
                    let d = g.data()[p] * scale;
                    gx.extend(plane.iter().map(|v| d * (v - mean[p])));
                }
                self.accumulate(grads, *x, Array::new(s.to_vec(), gx).unwrap());
            }
            Op::L1Rows(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let p = va.cols();
                let mut ga = Vec::with_capacity(va.len());
                for (r, (x, y)) in va.data().chunks(p).zip(vb.data().chunks(p)).enumerate() {
                    let d = g.data()[r];
                    ga.extend(x.iter().zip(y).map(|(u, v)| d * sign(u - v)));
                }
                let ga = Array::new(va.shape().to_vec(), ga).unwrap();
                if self.wants(*b) {
                    self.accumulate(grads, *b, ga.map(|v| -v));
                }
                self.accumulate(grads, *a, ga);
            }
            Op::SoftmaxCe {
                logits,
                labels,
                probs,
            } => {
                let vl = self.value(*logits);
                let (b, classes) = (vl.rows(), vl.cols());
                let d = g.item() / b as f64;
                let mut gl = probs.clone();
                for (r, &y) in labels.iter().enumerate() {
                    gl[r * classes + y] -= 1.0;
                }
                gl.iter_mut().for_each(|v| *v *= d);
                self.accumulate(grads, *logits, Array::new(vec![b, classes], gl).unwrap());
            }
            Op::Add(a, b) => {
                if self.wants(*b) {
                    self.accumulate(grads, *b, g.clone());
                }
                self.accumulate(grads, *a, g);
            }
            Op::Sub(a, b) => {
                if self.wants(*b) {
                    self.accumulate(grads, *b, g.map(|v| -v));
                }
                self.accumulate(grads, *a, g);
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                if self.wants(*a) {
                    let d = g.data().iter().zip(vb.data()).map(|(x, y)| x * y).collect();
                    self.accumulate(grads, *a, Array::new(va.shape().to_vec(), d).unwrap());
                }
                if self.wants(*b) {
                    let d = g.data().iter().zip(va.data()).map(|(x, y)| x * y).collect();
                    self.accumulate(grads, *b, Array::new(vb.shape().to_vec(), d).unwrap());
                }
            }
            Op::Scale(a, s) => self.accumulate(grads, *a, g.map(|v| v * s)),
            Op::AddScalar(a) => self.accumulate(grads, *a, g),
            Op::RowNormalize { x, norms } => {
                let p = out.cols();
                let mut gx = Vec::with_capacity(out.len());
                for (r, (y, d)) in out.data().chunks(p).zip(g.data().chunks(p)).enumerate() {
                    let n = norms[r];
                    if n > 0.0 {
                        let dot: f64 = y.iter().zip(d).map(|(a, b)| a * b).sum();
                        gx.extend(y.iter().zip(d).map(|(yi, di)| (di - yi * dot) / n));
                    } else {
                        gx.extend(std::iter::repeat_n(0.0, p));
                    }
                }
                self.accumulate(grads, *x, Array::new(out.shape().to_vec(), gx).unwrap());
            }
            Op::Trace(a) => {
                let n = self.shape(*a)[0];
                let mut ga = Array::zeros(&[n, n]);
                for i in 0..n {
                    ga.data_mut()[i * n + i] = g.item();
                }
                self.accumulate(grads, *a, ga);
            }
            Op::Sum(a) => {
                let s = self.shape(*a).to_vec();
                self.accumulate(grads, *a, Array::full(&s, g.item()));
            }
            Op::Mean(a) => {
                let s = self.shape(*a).to_vec();
                let n = self.value(*a).len() as f64;
                self.accumulate(grads, *a, Array::full(&s, g.item() / n));
            }
            Op::Restyle(saved) => {
                let RestyleSaved {
                    x,
                    normalized,
                    sigma,
                    floored,
                    target_sigma,
                } = saved.as_ref();
                let s = self.shape(*x).to_vec();
                let hw = s[2] * s[3];
                let mut gx = Vec::with_capacity(normalized.len());
                for (p, (nplane, gplane)) in
                    normalized.chunks(hw).zip(g.data().chunks(hw)).enumerate()
                {
                    let ts = target_sigma[p];
                    norm_backward(nplane, gplane, ts, sigma[p], !floored[p], &mut gx);
                }
                self.accumulate(grads, *x, Array::new(s, gx).unwrap());
            }
            Op::Standardize {
                x,
                sigma,
                normalized,
            } => {
                let (b, p) = (out.rows(), out.cols());
                let mut gx = vec![0.0; b * p];
                let mut col_n = vec![0.0; b];
                let mut col_g = vec![0.0; b];
                let mut col_out = Vec::with_capacity(b);
                for j in 0..p {
                    for r in 0..b {
                        col_n[r] = normalized[r * p + j];
                        col_g[r] = g.data()[r * p + j];
                    }
                    col_out.clear();
                    norm_backward(&col_n, &col_g, 1.0, sigma[j], true, &mut col_out);
                    for r in 0..b {
                        gx[r * p + j] = col_out[r];
                    }
                }
                self.accumulate(grads, *x, Array::new(vec![b, p], gx).unwrap());
            }
        }
    }
}

/// Backward of `y = gain * (x - mean(x)) / sigma` over one group, appending
/// the input gradient to `out`. When `sigma_tracks_input` is false the
/// divisor is treated as a constant (floored case).
fn norm_backward(
    normalized: &[f64],
    grad: &[f64],
    gain: f64,
    sigma: f64,
    sigma_tracks_input: bool,
    out: &mut Vec<f64>,
) {
    let n = normalized.len() as f64;
    let gmean = grad.iter().sum::<f64>() * gain / n;
    let gdot = if sigma_tracks_input {
        normalized.iter().zip(grad).map(|(a, b)| a * b).sum::<f64>() * gain / n
    } else {
        0.0
    };
    for (&xh, &d) in normalized.iter().zip(grad) {
        out.push((d * gain - gmean - xh * gdot) / sigma);
    }
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

pub(crate) fn transpose(a: &Array) -> Array {
    let (r, c) = (a.rows(), a.cols());
    let mut out = vec![0.0; r * c];
    for i in 0..r {
        for j in 0..c {
            out[j * r + i] = a.data()[i * c + j];
        }
    }
    Array::new(vec![c, r], out).expect("transpose shape")
}
