//! Define-by-run reverse-mode tape for the SLM → PSF → embedding → loss chain.
//!
//! Values are computed eagerly as nodes are appended; [`Tape::backward`]
//! walks the nodes once in reverse order. Complex nodes carry gradients as
//! `∂L/∂Re + j·∂L/∂Im`.

use std::sync::Arc;

use matrixmultiply::dgemm;
use rayon::prelude::*;

use crate::error::{dim_mismatch, Error, Result};
use crate::grid::{ConvPlan, Fft2Plan, Resizer, C64};
use crate::slm::{sigmoid, MaskRaster};

pub type NodeId = usize;

#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Real(Vec<f64>),
    Complex(Vec<C64>),
}

impl Value {
    pub fn len(&self) -> usize {
        match self {
            Value::Real(v) => v.len(),
            Value::Complex(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn zeros_like(&self) -> Value {
        match self {
            Value::Real(v) => Value::Real(vec![0.0; v.len()]),
            Value::Complex(v) => Value::Complex(vec![C64::new(0.0, 0.0); v.len()]),
        }
    }

    fn add_assign(&mut self, other: Value) {
        match (self, other) {
            (Value::Real(a), Value::Real(b)) => a.iter_mut().zip(b).for_each(|(x, y)| *x += y),
            (Value::Complex(a), Value::Complex(b)) => a.iter_mut().zip(b).for_each(|(x, y)| *x += y),
            (Value::Complex(a), Value::Real(b)) => a.iter_mut().zip(b).for_each(|(x, y)| x.re += y),
            (Value::Real(a), Value::Complex(b)) => a.iter_mut().zip(b).for_each(|(x, y)| *x += y.re),
        }
    }

    fn to_complex(&self) -> Vec<C64> {
        match self {
            Value::Real(v) => v.iter().map(|&x| C64::new(x, 0.0)).collect(),
            Value::Complex(v) => v.clone(),
        }
    }
}

#[derive(Clone)]
enum Op {
    Leaf,
    Constant,
    Sigmoid(NodeId),
    Rasterize {
        input: NodeId,
        raster: Arc<MaskRaster>,
        channel: Option<usize>,
    },
    MulConst {
        input: NodeId,
        factor: Arc<Vec<C64>>,
    },
    Fft2 {
        input: NodeId,
        plan: Arc<Fft2Plan>,
    },
    Ifft2 {
        input: NodeId,
        plan: Arc<Fft2Plan>,
    },
    SquaredModulus(NodeId),
    NormalizeSum {
        input: NodeId,
        sum: f64,
    },
    Mean(Vec<NodeId>),
    ConvBatch {
        kernel: NodeId,
        plan: Arc<ConvPlan>,
        scene_specs: Arc<Vec<Vec<C64>>>,
    },
    ResizeBatch {
        input: NodeId,
        resizer: Arc<Resizer>,
    },
    AddConst(NodeId),
    Affine {
        input: NodeId,
        weight: NodeId,
        bias: NodeId,
        batch: usize,
        in_dim: usize,
        out_dim: usize,
    },
    BatchNorm {
        input: NodeId,
        gamma: NodeId,
        beta: NodeId,
        batch: usize,
        dim: usize,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    /// Normalization with frozen statistics (a per-feature affine map).
    BatchNormEval {
        input: NodeId,
        gamma: NodeId,
        beta: NodeId,
        dim: usize,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Relu(NodeId),
    SoftmaxCe {
        input: NodeId,
        probs: Vec<f64>,
        labels: Vec<u8>,
        classes: usize,
    },
}

struct Node {
    op: Op,
    value: Value,
}

/// Batch statistics produced by a training-mode batch-norm node.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Per-node gradients from one backward pass.
pub struct Gradients {
    grads: Vec<Option<Value>>,
}

impl Gradients {
    pub fn get(&self, id: NodeId) -> Option<&Value> {
        self.grads.get(id).and_then(|g| g.as_ref())
    }

    /// Real gradient of `id`, zero-filled if nothing reached it.
    pub fn real(&self, id: NodeId, len: usize) -> Vec<f64> {
        match self.get(id) {
            Some(Value::Real(v)) => v.clone(),
            Some(Value::Complex(v)) => v.iter().map(|z| z.re).collect(),
            None => vec![0.0; len],
        }
    }
}

/// `c = alpha · a · b + beta · c` with explicit row/column strides.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_strides: (isize, isize),
    b: &[f64],
    b_strides: (isize, isize),
    c: &mut [f64],
    beta: f64,
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    // SAFETY: the slices hold at least the m×k, k×n and m×n elements the
    // strides address, and `c` does not alias `a` or `b`.
    unsafe {
        dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            a_strides.0,
            a_strides.1,
            b.as_ptr(),
            b_strides.0,
            b_strides.1,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
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

    fn push(&mut self, op: Op, value: Value) -> NodeId {
        self.nodes.push(Node { op, value });
        self.nodes.len() - 1
    }

    pub fn value(&self, id: NodeId) -> &Value {
        &self.nodes[id].value
    }

    pub fn real(&self, id: NodeId) -> &[f64] {
        match &self.nodes[id].value {
            Value::Real(v) => v,
            Value::Complex(_) => panic!("node {id} is complex"),
        }
    }

    pub fn complex(&self, id: NodeId) -> Vec<C64> {
        self.nodes[id].value.to_complex()
    }

    pub fn scalar(&self, id: NodeId) -> f64 {
        self.real(id)[0]
    }

    /// Trainable parameter.
    pub fn leaf(&mut self, v: Vec<f64>) -> NodeId {
        self.push(Op::Leaf, Value::Real(v))
    }

    pub fn constant(&mut self, v: Value) -> NodeId {
        self.push(Op::Constant, v)
    }

    pub fn is_leaf(&self, id: NodeId) -> bool {
        matches!(self.nodes[id].op, Op::Leaf)
    }

    pub fn has_rasterize(&self) -> bool {
        self.nodes.iter().any(|n| matches!(n.op, Op::Rasterize { .. }))
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        let v = self.real(x).iter().map(|&t| sigmoid(t)).collect();
        self.push(Op::Sigmoid(x), Value::Real(v))
    }

    /// Amplitude mask from sub-pixel weights.
    pub fn rasterize(&mut self, weights: NodeId, raster: Arc<MaskRaster>, channel: Option<usize>) -> NodeId {
        let g = raster.rasterize(self.real(weights), channel);
        self.push(
            Op::Rasterize {
                input: weights,
                raster,
                channel,
            },
            Value::Complex(g.data),
        )
    }

    /// Element-wise product with a fixed complex field.
    pub fn mul_const(&mut self, x: NodeId, factor: Arc<Vec<C64>>) -> NodeId {
        let v = self
            .complex(x)
            .iter()
            .zip(factor.iter())
            .map(|(a, b)| a * b)
            .collect();
        self.push(Op::MulConst { input: x, factor }, Value::Complex(v))
    }

    pub fn fft2(&mut self, x: NodeId, plan: Arc<Fft2Plan>) -> NodeId {
        let mut v = self.complex(x);
        plan.forward_inplace(&mut v);
        self.push(Op::Fft2 { input: x, plan }, Value::Complex(v))
    }

    pub fn ifft2(&mut self, x: NodeId, plan: Arc<Fft2Plan>) -> NodeId {
        let mut v = self.complex(x);
        plan.inverse_inplace(&mut v);
        self.push(Op::Ifft2 { input: x, plan }, Value::Complex(v))
    }

    pub fn squared_modulus(&mut self, x: NodeId) -> NodeId {
        let v = self.complex(x).iter().map(|z| z.norm_sqr()).collect();
        self.push(Op::SquaredModulus(x), Value::Real(v))
    }

    /// Scale to unit sum; `channel` only labels the error.
    pub fn normalize_sum(&mut self, x: NodeId, channel: usize) -> Result<NodeId> {
        let sum: f64 = self.real(x).iter().sum();
        if !(sum > 0.0) || !sum.is_finite() {
            return Err(Error::DegeneratePsf { channel });
        }
        let v = self.real(x).iter().map(|a| a / sum).collect();
        Ok(self.push(Op::NormalizeSum { input: x, sum }, Value::Real(v)))
    }

    pub fn mean(&mut self, xs: &[NodeId]) -> NodeId {
        assert!(!xs.is_empty(), "mean of no nodes");
        let n = self.real(xs[0]).len();
        let mut v = vec![0.0; n];
        for &x in xs {
            v.iter_mut().zip(self.real(x)).for_each(|(a, b)| *a += b);
        }
        let s = 1.0 / xs.len() as f64;
        v.iter_mut().for_each(|a| *a *= s);
        self.push(Op::Mean(xs.to_vec()), Value::Real(v))
    }

    /// Convolve a batch of fixed scenes (one plane each) with a kernel node.
    /// The output is the batch of `H x W` planes, concatenated.
    pub fn conv_batch(&mut self, kernel: NodeId, scenes: &[Vec<f64>], plan: Arc<ConvPlan>) -> Result<NodeId> {
        let hw = plan.height * plan.width;
        if self.real(kernel).len() != hw {
            return Err(dim_mismatch("convolution kernel", hw, self.real(kernel).len()));
        }
        if let Some(s) = scenes.iter().find(|s| s.len() != hw) {
            return Err(dim_mismatch("scene plane", hw, s.len()));
        }
        let kspec = plan.spectrum(self.real(kernel));
        let scene_specs: Vec<Vec<C64>> = scenes.par_iter().map(|s| plan.spectrum(s)).collect();
        let outs: Vec<Vec<f64>> = scene_specs
            .par_iter()
            .map(|s| {
                let prod = s.iter().zip(&kspec).map(|(a, b)| a * b).collect();
                plan.window_from_spectrum(prod)
            })
            .collect();
        let v = outs.concat();
        Ok(self.push(
            Op::ConvBatch {
                kernel,
                plan,
                scene_specs: Arc::new(scene_specs),
            },
            Value::Real(v),
        ))
    }

    pub fn resize_batch(&mut self, x: NodeId, resizer: Arc<Resizer>, batch: usize) -> Result<NodeId> {
        let n_in = resizer.in_len();
        if self.real(x).len() != n_in * batch {
            return Err(dim_mismatch("resize input", n_in * batch, self.real(x).len()));
        }
        let v: Vec<f64> = self
            .real(x)
            .chunks(n_in)
            .flat_map(|p| resizer.apply(p))
            .collect();
        Ok(self.push(Op::ResizeBatch { input: x, resizer }, Value::Real(v)))
    }

    /// Add a constant (detached) term, e.g. sensor noise.
    pub fn add_const(&mut self, x: NodeId, c: &[f64]) -> NodeId {
        let v = self.real(x).iter().zip(c).map(|(a, b)| a + b).collect();
        self.push(Op::AddConst(x), Value::Real(v))
    }

    /// `Y = X Wᵀ + b` for row-major `X` (`batch x in_dim`) and `W` (`out_dim x in_dim`).
    pub fn affine(&mut self, x: NodeId, weight: NodeId, bias: NodeId, batch: usize, in_dim: usize, out_dim: usize) -> Result<NodeId> {
        if self.real(x).len() != batch * in_dim {
            return Err(dim_mismatch("affine input", batch * in_dim, self.real(x).len()));
        }
        if self.real(weight).len() != in_dim * out_dim || self.real(bias).len() != out_dim {
            return Err(dim_mismatch(
                "affine parameters",
                (out_dim * in_dim, out_dim),
                (self.real(weight).len(), self.real(bias).len()),
            ));
        }
        let b = self.real(bias);
        let mut y: Vec<f64> = (0..batch).flat_map(|_| b.iter().copied()).collect();
        gemm(
            batch,
            in_dim,
            out_dim,
            self.real(x),
            (in_dim as isize, 1),
            self.real(weight),
            (1, in_dim as isize),
            &mut y,
            1.0,
        );
        Ok(self.push(
            Op::Affine {
                input: x,
                weight,
                bias,
                batch,
                in_dim,
                out_dim,
            },
            Value::Real(y),
        ))
    }

    /// Training-mode batch normalization over `batch` rows of `dim` features.
    pub fn batch_norm(&mut self, x: NodeId, gamma: NodeId, beta: NodeId, batch: usize, dim: usize, eps: f64) -> (NodeId, BatchStats) {
        let xs = self.real(x);
        assert_eq!(xs.len(), batch * dim, "batch-norm input size");
        let n = batch as f64;
        let mut mean = vec![0.0; dim];
        for row in xs.chunks(dim) {
            mean.iter_mut().zip(row).for_each(|(m, v)| *m += v);
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; dim];
        for row in xs.chunks(dim) {
            for f in 0..dim {
                var[f] += (row[f] - mean[f]).powi(2);
            }
        }
        var.iter_mut().for_each(|v| *v /= n);
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let (g, b) = (self.real(gamma), self.real(beta));
        let mut xhat = vec![0.0; xs.len()];
        let mut y = vec![0.0; xs.len()];
        for (r, row) in xs.chunks(dim).enumerate() {
            for f in 0..dim {
                let h = (row[f] - mean[f]) * inv_std[f];
                xhat[r * dim + f] = h;
                y[r * dim + f] = g[f] * h + b[f];
            }
        }
        let id = self.push(
            Op::BatchNorm {
                input: x,
                gamma,
                beta,
                batch,
                dim,
                xhat,
                inv_std,
            },
            Value::Real(y),
        );
        (id, BatchStats { mean, var })
    }

    /// Batch normalization with fixed running statistics.
    #[allow(clippy::too_many_arguments)]
    pub fn batch_norm_eval(&mut self, x: NodeId, gamma: NodeId, beta: NodeId, dim: usize, mean: &[f64], var: &[f64], eps: f64) -> NodeId {
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let (g, b) = (self.real(gamma), self.real(beta));
        let xhat: Vec<f64> = self
            .real(x)
            .chunks(dim)
            .flat_map(|row| (0..dim).map(|f| (row[f] - mean[f]) * inv_std[f]).collect::<Vec<_>>())
            .collect();
        let y = xhat
            .chunks(dim)
            .flat_map(|row| (0..dim).map(|f| g[f] * row[f] + b[f]).collect::<Vec<_>>())
            .collect();
        self.push(
            Op::BatchNormEval {
                input: x,
                gamma,
                beta,
                dim,
                xhat,
                inv_std,
            },
            Value::Real(y),
        )
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let v = self.real(x).iter().map(|&a| a.max(0.0)).collect();
        self.push(Op::Relu(x), Value::Real(v))
    }

    /// Mean softmax cross-entropy over a batch of score rows.
    pub fn softmax_ce(&mut self, x: NodeId, labels: &[u8], classes: usize) -> Result<NodeId> {
        let s = self.real(x);
        if s.len() != labels.len() * classes {
            return Err(dim_mismatch("score matrix", labels.len() * classes, s.len()));
        }
        let mut probs = Vec::with_capacity(s.len());
        let mut loss = 0.0;
        for (row, &y) in s.chunks(classes).zip(labels) {
            let (l, p) = super::loss::softmax_ce_row(row, y as usize);
            loss += l;
            probs.extend(p);
        }
        loss /= labels.len().max(1) as f64;
        Ok(self.push(
            Op::SoftmaxCe {
                input: x,
                probs,
                labels: labels.to_vec(),
                classes,
            },
            Value::Real(vec![loss]),
        ))
    }

    /// Propagate `seed` (the gradient of the loss with respect to `output`) to
    /// every node that `output` depends on.
    pub fn backward(&self, output: NodeId, seed: Value) -> Gradients {
        let mut grads: Vec<Option<Value>> = vec![None; self.nodes.len()];
        grads[output] = Some(seed);
        for id in (0..=output).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            for (target, contrib) in self.node_backward(node, &g) {
                match &mut grads[target] {
                    Some(acc) => acc.add_assign(contrib),
                    slot @ None => {
                        let mut z = self.nodes[target].value.zeros_like();
                        z.add_assign(contrib);
                        *slot = Some(z);
                    }
                }
            }
            grads[id] = Some(g);
        }
        Gradients { grads }
    }

    fn node_backward(&self, node: &Node, g: &Value) -> Vec<(NodeId, Value)> {
        let greal = || match g {
            Value::Real(v) => v.clone(),
            Value::Complex(v) => v.iter().map(|z| z.re).collect(),
        };
        let gcplx = || g.to_complex();
        match &node.op {
            Op::Leaf | Op::Constant => vec![],
            Op::Sigmoid(x) => {
                let Value::Real(s) = &node.value else { unreachable!() };
                let gv = greal();
                vec![(*x, Value::Real(s.iter().zip(gv).map(|(s, g)| g * s * (1.0 - s)).collect()))]
            }
            Op::Rasterize { input, raster, channel } => {
                let mut out = vec![0.0; raster.footprints.len()];
                raster.adjoint_accumulate(&gcplx(), *channel, &mut out);
                vec![(*input, Value::Real(out))]
            }
            Op::MulConst { input, factor } => {
                let v = gcplx().iter().zip(factor.iter()).map(|(g, f)| g * f.conj()).collect();
                vec![(*input, Value::Complex(v))]
            }
            Op::Fft2 { input, plan } => {
                let mut v = gcplx();
                plan.inverse_unnormalized_inplace(&mut v);
                vec![(*input, Value::Complex(v))]
            }
            Op::Ifft2 { input, plan } => {
                let mut v = gcplx();
                plan.forward_inplace(&mut v);
                let s = 1.0 / plan.len() as f64;
                v.iter_mut().for_each(|z| *z *= s);
                vec![(*input, Value::Complex(v))]
            }
            Op::SquaredModulus(x) => {
                let u = self.complex(*x);
                let gv = greal();
                let v = u.iter().zip(gv).map(|(u, g)| u * (2.0 * g)).collect();
                vec![(*x, Value::Complex(v))]
            }
            Op::NormalizeSum { input, sum } => {
                let Value::Real(y) = &node.value else { unreachable!() };
                let gv = greal();
                let dot: f64 = gv.iter().zip(y).map(|(a, b)| a * b).sum();
                vec![(*input, Value::Real(gv.iter().map(|g| (g - dot) / sum).collect()))]
            }
            Op::Mean(xs) => {
                let s = 1.0 / xs.len() as f64;
                let gv: Vec<f64> = greal().iter().map(|g| g * s).collect();
                xs.iter().map(|&x| (x, Value::Real(gv.clone()))).collect()
            }
            Op::ConvBatch {
                kernel,
                plan,
                scene_specs,
            } => {
                let gv = greal();
                let hw = plan.height * plan.width;
                let n = plan.pad_h * plan.pad_w;
                let parts: Vec<Vec<C64>> = scene_specs
                    .par_iter()
                    .enumerate()
                    .map(|(b, xs)| {
                        let mut gb = plan.window_adjoint(&gv[b * hw..(b + 1) * hw]);
                        plan.fft().forward_inplace(&mut gb);
                        gb.iter_mut().zip(xs).for_each(|(g, x)| *g *= x.conj());
                        gb
                    })
                    .collect();
                let mut acc = vec![C64::new(0.0, 0.0); n];
                for p in &parts {
                    acc.iter_mut().zip(p).for_each(|(a, b)| *a += b);
                }
                plan.fft().inverse_inplace(&mut acc);
                let mut out = Vec::with_capacity(hw);
                for i in 0..plan.height {
                    out.extend(acc[i * plan.pad_w..i * plan.pad_w + plan.width].iter().map(|z| z.re));
                }
                vec![(*kernel, Value::Real(out))]
            }
            Op::ResizeBatch { input, resizer, .. } => {
                let gv = greal();
                let v = gv.chunks(resizer.out_len()).flat_map(|p| resizer.adjoint(p)).collect();
                vec![(*input, Value::Real(v))]
            }
            Op::AddConst(x) => vec![(*x, Value::Real(greal()))],
            Op::Affine {
                input,
                weight,
                bias,
                batch,
                in_dim,
                out_dim,
            } => {
                let (b, i, o) = (*batch, *in_dim, *out_dim);
                let gv = greal();
                let mut gx = vec![0.0; b * i];
                gemm(b, o, i, &gv, (o as isize, 1), self.real(*weight), (i as isize, 1), &mut gx, 0.0);
                let mut gw = vec![0.0; o * i];
                gemm(o, b, i, &gv, (1, o as isize), self.real(*input), (i as isize, 1), &mut gw, 0.0);
                let mut gb = vec![0.0; o];
                for row in gv.chunks(o) {
                    gb.iter_mut().zip(row).for_each(|(a, r)| *a += r);
                }
                vec![
                    (*input, Value::Real(gx)),
                    (*weight, Value::Real(gw)),
                    (*bias, Value::Real(gb)),
                ]
            }
            Op::BatchNorm {
                input,
                gamma,
                beta,
                batch,
                dim,
                xhat,
                inv_std,
            } => {
                let gv = greal();
                let (n, d) = (*batch as f64, *dim);
                let gam = self.real(*gamma);
                let mut sum_g = vec![0.0; d];
                let mut sum_gx = vec![0.0; d];
                for (grow, xrow) in gv.chunks(d).zip(xhat.chunks(d)) {
                    for f in 0..d {
                        sum_g[f] += grow[f];
                        sum_gx[f] += grow[f] * xrow[f];
                    }
                }
                let mut gx = vec![0.0; gv.len()];
                for (r, (grow, xrow)) in gv.chunks(d).zip(xhat.chunks(d)).enumerate() {
                    for f in 0..d {
                        gx[r * d + f] =
                            gam[f] * inv_std[f] / n * (n * grow[f] - sum_g[f] - xrow[f] * sum_gx[f]);
                    }
                }
                vec![
                    (*input, Value::Real(gx)),
                    (*gamma, Value::Real(sum_gx)),
                    (*beta, Value::Real(sum_g)),
                ]
            }
            Op::BatchNormEval {
                input,
                gamma,
                beta,
                dim,
                xhat,
                inv_std,
            } => {
                let gv = greal();
                let d = *dim;
                let gam = self.real(*gamma);
                let mut sum_g = vec![0.0; d];
                let mut sum_gx = vec![0.0; d];
                let mut gx = vec![0.0; gv.len()];
                for (r, (grow, xrow)) in gv.chunks(d).zip(xhat.chunks(d)).enumerate() {
                    for f in 0..d {
                        sum_g[f] += grow[f];
                        sum_gx[f] += grow[f] * xrow[f];
                        gx[r * d + f] = grow[f] * gam[f] * inv_std[f];
                    }
                }
                vec![
                    (*input, Value::Real(gx)),
                    (*gamma, Value::Real(sum_gx)),
                    (*beta, Value::Real(sum_g)),
                ]
            }
            Op::Relu(x) => {
                let gv = greal();
                let v = self.real(*x).iter().zip(gv).map(|(a, g)| if *a > 0.0 { g } else { 0.0 }).collect();
                vec![(*x, Value::Real(v))]
            }
            Op::SoftmaxCe {
                input,
                probs,
                labels,
                classes,
            } => {
                let scale = greal()[0] / labels.len().max(1) as f64;
                let mut v = probs.clone();
                for (row, &y) in v.chunks_mut(*classes).zip(labels) {
                    row[y as usize] -= 1.0;
                    row.iter_mut().for_each(|p| *p *= scale);
                }
                vec![(*input, Value::Real(v))]
            }
        }
    }
}

/// Gradient of the loss with respect to the raw SLM weights recorded on `tape`.
pub fn backward_optics(tape: &Tape, theta: NodeId, output: NodeId, upstream: Value) -> Result<Vec<f64>> {
    if theta >= tape.len() || !tape.is_leaf(theta) {
        return Err(Error::TapeIncomplete(format!("node {theta} is not a parameter leaf")));
    }
    if !tape.has_rasterize() {
        return Err(Error::TapeIncomplete("no mask rasterization was recorded".into()));
    }
    if output >= tape.len() {
        return Err(Error::TapeIncomplete(format!("output node {output} was never recorded")));
    }
    let n = tape.real(theta).len();
    Ok(tape.backward(output, upstream).real(theta, n))
}
