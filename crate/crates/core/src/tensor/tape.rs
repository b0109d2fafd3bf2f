use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::kernels::{col2im, gemm_nn, gemm_nt, gemm_tn, im2col, maxpool, ConvGeom};
use super::{ceil_div, Tensor};

const BN_EPS: f64 = 1e-5;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

enum Op<T: Scalar> {
    Leaf,
    Conv2d { x: NodeId, w: NodeId, b: NodeId, geom: ConvGeom },
    // geom describes the convolution this op is the adjoint of
    ConvT2d { x: NodeId, w: NodeId, b: NodeId, geom: ConvGeom },
    MaxPool2d { x: NodeId, window: (usize, usize), argmax: Vec<usize> },
    BatchNorm { x: NodeId, gamma: NodeId, beta: NodeId, mean: Vec<T>, invstd: Vec<T>, train: bool },
    LeakyRelu { x: NodeId, slope: T },
    Tanh { x: NodeId },
    Linear { x: NodeId, w: NodeId, b: NodeId },
    Concat { xs: Vec<NodeId>, axis: usize },
    Slice { x: NodeId, axis: usize, start: usize },
    Reshape { x: NodeId },
    Add { a: NodeId, b: NodeId },
    Sub { a: NodeId, b: NodeId },
    Mul { a: NodeId, b: NodeId },
    Scale { x: NodeId, c: T },
    AddConst { x: NodeId },
    Square { x: NodeId },
    Abs { x: NodeId },
    MeanAll { x: NodeId },
    SumAll { x: NodeId },
}

/// Wengert tape for one forward/backward pass.
///
/// Nodes are append-only, so creation order is a topological order and the
/// backward sweep is a single reverse scan. A tape is confined to one
/// training step; parameters enter as leaves and their gradients are read
/// back out after [`Tape::backward`].
pub struct Tape<T: Scalar> {
    dims: Vec<Vec<usize>>,
    data: Vec<Vec<T>>,
    grad: Vec<Option<Vec<T>>>,
    needs: Vec<bool>,
    ops: Vec<Op<T>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn dims4(dims: &[usize], what: &str) -> Result<(usize, usize, usize, usize)> {
    if dims.len() != 4 {
        return Err(Error::contract(format!("{what}: expected rank 4, got {dims:?}")));
    }
    Ok((dims[0], dims[1], dims[2], dims[3]))
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape { dims: Vec::new(), data: Vec::new(), grad: Vec::new(), needs: Vec::new(), ops: Vec::new() }
    }

    fn push(&mut self, dims: Vec<usize>, data: Vec<T>, op: Op<T>, needs: bool, context: &str) -> Result<NodeId> {
        debug_assert_eq!(dims.iter().product::<usize>(), data.len());
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::non_finite(context));
        }
        self.dims.push(dims);
        self.data.push(data);
        self.grad.push(None);
        self.needs.push(needs);
        self.ops.push(op);
        Ok(NodeId(self.ops.len() - 1))
    }

    fn needs_any(&self, ids: &[NodeId]) -> bool {
        ids.iter().any(|id| self.needs[id.0])
    }

    /// Inserts a tensor as a leaf, honoring its `requires_grad` flag.
    pub fn leaf(&mut self, t: &Tensor<T>) -> NodeId {
        self.dims.push(t.dims().to_vec());
        self.data.push(t.data().to_vec());
        self.grad.push(None);
        self.needs.push(t.requires_grad());
        self.ops.push(Op::Leaf);
        NodeId(self.ops.len() - 1)
    }

    pub fn leaf_grad(&mut self, t: &Tensor<T>) -> NodeId {
        let id = self.leaf(t);
        self.needs[id.0] = true;
        id
    }

    pub fn leaf_const(&mut self, t: &Tensor<T>) -> NodeId {
        let id = self.leaf(t);
        self.needs[id.0] = false;
        id
    }

    pub fn dims_of(&self, id: NodeId) -> &[usize] {
        &self.dims[id.0]
    }

    pub fn value(&self, id: NodeId) -> &[T] {
        &self.data[id.0]
    }

    pub fn scalar_value(&self, id: NodeId) -> T {
        debug_assert_eq!(self.data[id.0].len(), 1);
        self.data[id.0][0]
    }

    /// Gradient accumulated on a leaf after `backward`.
    pub fn grad(&self, id: NodeId) -> Option<&[T]> {
        self.grad[id.0].as_deref()
    }

    pub fn to_tensor(&self, id: NodeId) -> Tensor<T> {
        let mut t = Tensor::from_vec(&self.dims[id.0], self.data[id.0].clone())
            .expect("tape nodes hold valid tensors");
        if let Some(g) = &self.grad[id.0] {
            t = t.with_requires_grad(true);
            t.set_grad(Some(g.clone()));
        }
        t
    }

    pub fn node_count(&self) -> usize {
        self.ops.len()
    }

    // ── forward ops ─────────────────────────────────────────────────

    /// Strided 2-D convolution with "same" (ceil-division) padding.
    pub fn conv2d(&mut self, x: NodeId, w: NodeId, b: NodeId, stride: (usize, usize)) -> Result<NodeId> {
        let (n, c, h, wd) = dims4(&self.dims[x.0], "conv2d input")?;
        let (f, wc, kh, kw) = dims4(&self.dims[w.0], "conv2d weight")?;
        if wc != c {
            return Err(Error::contract(format!(
                "conv2d: input has {c} channels but weight expects {wc}"
            )));
        }
        if self.dims[b.0] != [f] {
            return Err(Error::contract(format!("conv2d: bias must be [{f}]")));
        }
        if stride.0 == 0 || stride.1 == 0 {
            return Err(Error::contract("conv2d: stride components must be >= 1"));
        }
        let geom = ConvGeom::same(c, h, wd, kh, kw, stride.0, stride.1);
        let (ckk, ohw) = (geom.col_rows(), geom.col_cols());
        let mut col = vec![T::zero(); ckk * ohw];
        let mut out = vec![T::zero(); n * f * ohw];
        let (xd, wdat, bd) = (&self.data[x.0], &self.data[w.0], &self.data[b.0]);
        for item in 0..n {
            im2col(&xd[item * c * h * wd..][..c * h * wd], &geom, &mut col);
            let o = &mut out[item * f * ohw..][..f * ohw];
            gemm_nn(f, ckk, ohw, wdat, &col, o);
            for (fi, plane) in o.chunks_exact_mut(ohw).enumerate() {
                let bias = bd[fi];
                for v in plane {
                    *v += bias;
                }
            }
        }
        let needs = self.needs_any(&[x, w, b]);
        self.push(
            vec![n, f, geom.out_h, geom.out_w],
            out,
            Op::Conv2d { x, w, b, geom },
            needs,
            "conv2d",
        )
    }

    /// Transposed convolution: the exact adjoint of [`Tape::conv2d`] with the
    /// same weight and stride, mapping [N,F,H,W] -> [N,C,H*sh,W*sw].
    pub fn conv_transpose2d(&mut self, x: NodeId, w: NodeId, b: NodeId, stride: (usize, usize)) -> Result<NodeId> {
        let (n, f, h, wd) = dims4(&self.dims[x.0], "conv_transpose2d input")?;
        let (wf, c, kh, kw) = dims4(&self.dims[w.0], "conv_transpose2d weight")?;
        if wf != f {
            return Err(Error::contract(format!(
                "conv_transpose2d: input has {f} channels but weight expects {wf}"
            )));
        }
        if self.dims[b.0] != [c] {
            return Err(Error::contract(format!("conv_transpose2d: bias must be [{c}]")));
        }
        if stride.0 == 0 || stride.1 == 0 {
            return Err(Error::contract("conv_transpose2d: stride components must be >= 1"));
        }
        let (oh, ow) = (h * stride.0, wd * stride.1);
        let geom = ConvGeom::same(c, oh, ow, kh, kw, stride.0, stride.1);
        debug_assert_eq!((geom.out_h, geom.out_w), (h, wd));
        let (ckk, hw) = (geom.col_rows(), geom.col_cols());
        let mut col = vec![T::zero(); ckk * hw];
        let mut out = vec![T::zero(); n * c * oh * ow];
        let (xd, wdat, bd) = (&self.data[x.0], &self.data[w.0], &self.data[b.0]);
        for item in 0..n {
            col.fill(T::zero());
            gemm_tn(ckk, f, hw, wdat, &xd[item * f * hw..][..f * hw], &mut col);
            let o = &mut out[item * c * oh * ow..][..c * oh * ow];
            col2im(&col, &geom, o);
            for (ci, plane) in o.chunks_exact_mut(oh * ow).enumerate() {
                let bias = bd[ci];
                for v in plane {
                    *v += bias;
                }
            }
        }
        let needs = self.needs_any(&[x, w, b]);
        self.push(vec![n, c, oh, ow], out, Op::ConvT2d { x, w, b, geom }, needs, "conv_transpose2d")
    }

    /// Ceil-mode max-pooling; edge windows may be partial.
    pub fn maxpool2d(&mut self, x: NodeId, window: (usize, usize)) -> Result<NodeId> {
        let (n, c, h, w) = dims4(&self.dims[x.0], "maxpool2d input")?;
        if window.0 == 0 || window.1 == 0 {
            return Err(Error::contract("maxpool2d: window components must be >= 1"));
        }
        let (oh, ow) = (ceil_div(h, window.0), ceil_div(w, window.1));
        let mut out = vec![T::zero(); n * c * oh * ow];
        let mut argmax = vec![0usize; n * c * oh * ow];
        let xd = &self.data[x.0];
        for item in 0..n {
            maxpool(
                &xd[item * c * h * w..][..c * h * w],
                c,
                h,
                w,
                window.0,
                window.1,
                &mut out[item * c * oh * ow..][..c * oh * ow],
                &mut argmax[item * c * oh * ow..][..c * oh * ow],
            );
        }
        let needs = self.needs[x.0];
        self.push(vec![n, c, oh, ow], out, Op::MaxPool2d { x, window, argmax }, needs, "maxpool2d")
    }

    /// Smallest distance of any recorded kink decision from its boundary:
    /// |x| for leaky-ReLU and |.| inputs, (max - runner-up) for pooling
    /// windows. A comfortably positive margin means the forward pass is
    /// locally differentiable and robust to precision changes.
    pub fn kink_margin(&self) -> f64 {
        let mut margin = f64::INFINITY;
        for op in &self.ops {
            match op {
                Op::LeakyRelu { x, .. } | Op::Abs { x } => {
                    for v in &self.data[x.0] {
                        margin = margin.min(v.abs().as_f64());
                    }
                }
                Op::MaxPool2d { x, window, .. } => {
                    let d = &self.dims[x.0];
                    let (n, c, h, w) = (d[0], d[1], d[2], d[3]);
                    let (oh, ow) = (ceil_div(h, window.0), ceil_div(w, window.1));
                    let xd = &self.data[x.0];
                    for item in 0..n {
                        for ch in 0..c {
                            let plane = &xd[(item * c + ch) * h * w..][..h * w];
                            for o_i in 0..oh {
                                for o_j in 0..ow {
                                    let (mut best, mut second) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
                                    for ii in o_i * window.0..(o_i * window.0 + window.0).min(h) {
                                        for jj in o_j * window.1..(o_j * window.1 + window.1).min(w) {
                                            let v = plane[ii * w + jj].as_f64();
                                            if v > best {
                                                second = best;
                                                best = v;
                                            } else if v > second {
                                                second = v;
                                            }
                                        }
                                    }
                                    if second.is_finite() {
                                        margin = margin.min(best - second);
                                    }
                                }
                            }
                        }
                    }
                }
                _ => {}
            }
        }
        margin
    }

    /// Train-mode batch normalization over (N,H,W) per channel.
    /// Returns the node plus the biased batch mean/variance so the caller can
    /// update running statistics.
    pub fn batchnorm2d_train(
        &mut self,
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
    ) -> Result<(NodeId, Vec<T>, Vec<T>)> {
        let (n, c, h, w) = dims4(&self.dims[x.0], "batchnorm2d input")?;
        if n * h * w < 2 {
            return Err(Error::contract(
                "batchnorm2d: train mode needs at least 2 elements per channel (degenerate statistics)",
            ));
        }
        self.check_bn_params(c, gamma, beta)?;
        let m = T::cast((n * h * w) as f64);
        let hw = h * w;
        let xd = &self.data[x.0];
        let mut mean = vec![T::zero(); c];
        let mut var = vec![T::zero(); c];
        for ch in 0..c {
            let mut s = T::zero();
            for item in 0..n {
                for &v in &xd[(item * c + ch) * hw..][..hw] {
                    s += v;
                }
            }
            let mu = s / m;
            let mut sq = T::zero();
            for item in 0..n {
                for &v in &xd[(item * c + ch) * hw..][..hw] {
                    let d = v - mu;
                    sq += d * d;
                }
            }
            mean[ch] = mu;
            var[ch] = sq / m;
        }
        let invstd: Vec<T> = var.iter().map(|&v| (v + T::cast(BN_EPS)).sqrt().recip()).collect();
        let node = self.bn_forward(x, gamma, beta, &mean, &invstd, true)?;
        Ok((node, mean, var))
    }

    /// Eval-mode batch normalization using fixed running statistics.
    pub fn batchnorm2d_eval(
        &mut self,
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        running_mean: &[T],
        running_var: &[T],
    ) -> Result<NodeId> {
        let (_, c, _, _) = dims4(&self.dims[x.0], "batchnorm2d input")?;
        self.check_bn_params(c, gamma, beta)?;
        if running_mean.len() != c || running_var.len() != c {
            return Err(Error::contract("batchnorm2d: running stats must have one entry per channel"));
        }
        let invstd: Vec<T> = running_var.iter().map(|&v| (v + T::cast(BN_EPS)).sqrt().recip()).collect();
        self.bn_forward(x, gamma, beta, running_mean, &invstd, false)
    }

    fn check_bn_params(&self, c: usize, gamma: NodeId, beta: NodeId) -> Result<()> {
        if self.dims[gamma.0] != [c] || self.dims[beta.0] != [c] {
            return Err(Error::contract(format!("batchnorm2d: gamma/beta must be [{c}]")));
        }
        Ok(())
    }

    fn bn_forward(
        &mut self,
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        mean: &[T],
        invstd: &[T],
        train: bool,
    ) -> Result<NodeId> {
        let (n, c, h, w) = dims4(&self.dims[x.0], "batchnorm2d input")?;
        let hw = h * w;
        let (xd, gd, bd) = (&self.data[x.0], &self.data[gamma.0], &self.data[beta.0]);
        let mut out = vec![T::zero(); xd.len()];
        for item in 0..n {
            for ch in 0..c {
                let scale = gd[ch] * invstd[ch];
                let shift = bd[ch] - mean[ch] * scale;
                let src = &xd[(item * c + ch) * hw..][..hw];
                let dst = &mut out[(item * c + ch) * hw..][..hw];
                for (d, &s) in dst.iter_mut().zip(src) {
                    *d = s * scale + shift;
                }
            }
        }
        let needs = self.needs_any(&[x, gamma, beta]);
        self.push(
            vec![n, c, h, w],
            out,
            Op::BatchNorm { x, gamma, beta, mean: mean.to_vec(), invstd: invstd.to_vec(), train },
            needs,
            "batchnorm2d",
        )
    }

    pub fn leaky_relu(&mut self, x: NodeId, slope: f64) -> Result<NodeId> {
        if !(0.0 < slope && slope < 1.0) {
            return Err(Error::contract(format!("leaky_relu: slope must be in (0,1), got {slope}")));
        }
        let s = T::cast(slope);
        let out: Vec<T> = self.data[x.0].iter().map(|&v| if v > T::zero() { v } else { v * s }).collect();
        let needs = self.needs[x.0];
        self.push(self.dims[x.0].clone(), out, Op::LeakyRelu { x, slope: s }, needs, "leaky_relu")
    }

    pub fn tanh(&mut self, x: NodeId) -> Result<NodeId> {
        let out: Vec<T> = self.data[x.0].iter().map(|v| v.tanh()).collect();
        let needs = self.needs[x.0];
        self.push(self.dims[x.0].clone(), out, Op::Tanh { x }, needs, "tanh")
    }

    /// Fully connected layer: [N,Din] x [Dout,Din] + [Dout] -> [N,Dout].
    pub fn linear(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
        let xd_dims = &self.dims[x.0];
        let wd_dims = &self.dims[w.0];
        if xd_dims.len() != 2 || wd_dims.len() != 2 {
            return Err(Error::contract("linear: input and weight must be rank 2"));
        }
        let (n, din) = (xd_dims[0], xd_dims[1]);
        let (dout, wdin) = (wd_dims[0], wd_dims[1]);
        if wdin != din {
            return Err(Error::contract(format!(
                "linear: input features {din} do not match weight features {wdin}"
            )));
        }
        if self.dims[b.0] != [dout] {
            return Err(Error::contract(format!("linear: bias must be [{dout}]")));
        }
        let (xd, wdat, bd) = (&self.data[x.0], &self.data[w.0], &self.data[b.0]);
        let mut out = vec![T::zero(); n * dout];
        gemm_nt(n, din, dout, xd, wdat, &mut out);
        for row in out.chunks_exact_mut(dout) {
            for (v, &bias) in row.iter_mut().zip(bd) {
                *v += bias;
            }
        }
        let needs = self.needs_any(&[x, w, b]);
        self.push(vec![n, dout], out, Op::Linear { x, w, b }, needs, "linear")
    }

    pub fn concat(&mut self, xs: &[NodeId], axis: usize) -> Result<NodeId> {
        if xs.is_empty() {
            return Err(Error::contract("concat: needs at least one input"));
        }
        let rank = self.dims[xs[0].0].len();
        if axis >= rank {
            return Err(Error::contract(format!("concat: axis {axis} out of range for rank {rank}")));
        }
        for &id in xs {
            let d = &self.dims[id.0];
            if d.len() != rank
                || d.iter().zip(&self.dims[xs[0].0]).enumerate().any(|(i, (a, b))| i != axis && a != b)
            {
                return Err(Error::contract(format!(
                    "concat: ragged shapes {:?} vs {:?} on axis {axis}",
                    self.dims[xs[0].0], d
                )));
            }
        }
        let mut out_dims = self.dims[xs[0].0].clone();
        out_dims[axis] = xs.iter().map(|id| self.dims[id.0][axis]).sum();
        let outer: usize = out_dims[..axis].iter().product();
        let inner: usize = out_dims[axis + 1..].iter().product();
        let mut out = vec![T::zero(); out_dims.iter().product()];
        let total_axis = out_dims[axis];
        for o in 0..outer {
            let mut at = 0usize;
            for &id in xs {
                let a_len = self.dims[id.0][axis];
                let src = &self.data[id.0][o * a_len * inner..][..a_len * inner];
                out[(o * total_axis + at) * inner..][..a_len * inner].copy_from_slice(src);
                at += a_len;
            }
        }
        let needs = self.needs_any(xs);
        self.push(out_dims, out, Op::Concat { xs: xs.to_vec(), axis }, needs, "concat")
    }

    /// Contiguous range along `axis`; the building block for `split`.
    pub fn slice(&mut self, x: NodeId, axis: usize, start: usize, len: usize) -> Result<NodeId> {
        let d = self.dims[x.0].clone();
        if axis >= d.len() || start + len > d[axis] || len == 0 {
            return Err(Error::contract(format!(
                "slice: range {start}..{} invalid on axis {axis} of {d:?}",
                start + len
            )));
        }
        let outer: usize = d[..axis].iter().product();
        let inner: usize = d[axis + 1..].iter().product();
        let mut out_dims = d.clone();
        out_dims[axis] = len;
        let mut out = vec![T::zero(); outer * len * inner];
        for o in 0..outer {
            let src = &self.data[x.0][(o * d[axis] + start) * inner..][..len * inner];
            out[o * len * inner..][..len * inner].copy_from_slice(src);
        }
        let needs = self.needs[x.0];
        self.push(out_dims, out, Op::Slice { x, axis, start }, needs, "slice")
    }

    /// Exact inverse of [`Tape::concat`] for the given sizes.
    pub fn split(&mut self, x: NodeId, axis: usize, sizes: &[usize]) -> Result<Vec<NodeId>> {
        let total: usize = sizes.iter().sum();
        let d = &self.dims[x.0];
        if axis >= d.len() || total != d[axis] {
            return Err(Error::contract(format!(
                "split: sizes {sizes:?} do not cover axis {axis} of {d:?}"
            )));
        }
        let mut at = 0;
        let mut parts = Vec::with_capacity(sizes.len());
        for &s in sizes {
            parts.push(self.slice(x, axis, at, s)?);
            at += s;
        }
        Ok(parts)
    }

    pub fn reshape(&mut self, x: NodeId, dims: &[usize]) -> Result<NodeId> {
        let numel: usize = dims.iter().product();
        if numel != self.data[x.0].len() {
            return Err(Error::contract(format!(
                "reshape: {:?} -> {dims:?} changes element count",
                self.dims[x.0]
            )));
        }
        let data = self.data[x.0].clone();
        let needs = self.needs[x.0];
        self.push(dims.to_vec(), data, Op::Reshape { x }, needs, "reshape")
    }

    /// Collapses all non-batch dims: [N,...] -> [N,D].
    pub fn flatten(&mut self, x: NodeId) -> Result<NodeId> {
        let d = &self.dims[x.0];
        if d.is_empty() {
            return Err(Error::contract("flatten: input must have a batch dim"));
        }
        let n = d[0];
        let rest: usize = d[1..].iter().product();
        self.reshape(x, &[n, rest])
    }

    fn binary_elementwise(
        &mut self,
        a: NodeId,
        b: NodeId,
        f: impl Fn(T, T) -> T,
        op: Op<T>,
        what: &str,
    ) -> Result<NodeId> {
        if self.dims[a.0] != self.dims[b.0] {
            return Err(Error::contract(format!(
                "{what}: shape mismatch {:?} vs {:?}",
                self.dims[a.0], self.dims[b.0]
            )));
        }
        let out: Vec<T> = self.data[a.0].iter().zip(&self.data[b.0]).map(|(&x, &y)| f(x, y)).collect();
        let needs = self.needs_any(&[a, b]);
        self.push(self.dims[a.0].clone(), out, op, needs, what)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary_elementwise(a, b, |x, y| x + y, Op::Add { a, b }, "add")
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary_elementwise(a, b, |x, y| x - y, Op::Sub { a, b }, "sub")
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary_elementwise(a, b, |x, y| x * y, Op::Mul { a, b }, "mul")
    }

    pub fn scale(&mut self, x: NodeId, c: f64) -> Result<NodeId> {
        let cs = T::cast(c);
        let out: Vec<T> = self.data[x.0].iter().map(|&v| v * cs).collect();
        let needs = self.needs[x.0];
        self.push(self.dims[x.0].clone(), out, Op::Scale { x, c: cs }, needs, "scale")
    }

    pub fn add_const(&mut self, x: NodeId, c: f64) -> Result<NodeId> {
        let cs = T::cast(c);
        let out: Vec<T> = self.data[x.0].iter().map(|&v| v + cs).collect();
        let needs = self.needs[x.0];
        self.push(self.dims[x.0].clone(), out, Op::AddConst { x }, needs, "add_const")
    }

    pub fn square(&mut self, x: NodeId) -> Result<NodeId> {
        let out: Vec<T> = self.data[x.0].iter().map(|&v| v * v).collect();
        let needs = self.needs[x.0];
        self.push(self.dims[x.0].clone(), out, Op::Square { x }, needs, "square")
    }

    pub fn abs(&mut self, x: NodeId) -> Result<NodeId> {
        let out: Vec<T> = self.data[x.0].iter().map(|v| v.abs()).collect();
        let needs = self.needs[x.0];
        self.push(self.dims[x.0].clone(), out, Op::Abs { x }, needs, "abs")
    }

    pub fn mean_all(&mut self, x: NodeId) -> Result<NodeId> {
        let n = T::cast(self.data[x.0].len() as f64);
        let s: T = self.data[x.0].iter().copied().sum();
        let needs = self.needs[x.0];
        self.push(vec![1], vec![s / n], Op::MeanAll { x }, needs, "mean_all")
    }

    pub fn sum_all(&mut self, x: NodeId) -> Result<NodeId> {
        let s: T = self.data[x.0].iter().copied().sum();
        let needs = self.needs[x.0];
        self.push(vec![1], vec![s], Op::SumAll { x }, needs, "sum_all")
    }

    // ── backward ────────────────────────────────────────────────────

    /// Reverse sweep seeding d(loss)/d(loss) = 1. Gradients are retained on
    /// leaf nodes and taken (freed) from interior nodes as the sweep passes.
    pub fn backward(&mut self, loss: NodeId) -> Result<()> {
        if self.data[loss.0].len() != 1 {
            return Err(Error::contract("backward: loss must be a scalar node"));
        }
        self.grad[loss.0] = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            if matches!(self.ops[i], Op::Leaf) || !self.needs[i] {
                continue;
            }
            let Some(g) = self.grad[i].take() else { continue };
            self.backprop_node(i, &g);
        }
        Ok(())
    }

    fn ensure_grad<'a>(grad: &'a mut [Option<Vec<T>>], dims: &[Vec<usize>], id: NodeId) -> &'a mut Vec<T> {
        grad[id.0].get_or_insert_with(|| vec![T::zero(); dims[id.0].iter().product()])
    }

    fn backprop_node(&mut self, i: usize, g: &[T]) {
        let Tape { dims, data, grad, needs, ops } = self;
        match &ops[i] {
            Op::Leaf => {}
            Op::Conv2d { x, w, b, geom } => {
                let (x, w, b) = (*x, *w, *b);
                let n = dims[x.0][0];
                let f = dims[w.0][0];
                let (ckk, ohw) = (geom.col_rows(), geom.col_cols());
                let plane_in = geom.channels * geom.in_h * geom.in_w;
                let mut col = vec![T::zero(); ckk * ohw];
                let mut dcol = vec![T::zero(); ckk * ohw];
                for item in 0..n {
                    let g_item = &g[item * f * ohw..][..f * ohw];
                    if needs[w.0] {
                        im2col(&data[x.0][item * plane_in..][..plane_in], geom, &mut col);
                        let dw = Self::ensure_grad(grad, dims, w);
                        gemm_nt(f, ohw, ckk, g_item, &col, dw);
                    }
                    if needs[x.0] {
                        dcol.fill(T::zero());
                        gemm_tn(ckk, f, ohw, &data[w.0], g_item, &mut dcol);
                        let dx = Self::ensure_grad(grad, dims, x);
                        col2im(&dcol, geom, &mut dx[item * plane_in..][..plane_in]);
                    }
                    if needs[b.0] {
                        let db = Self::ensure_grad(grad, dims, b);
                        for (fi, plane) in g_item.chunks_exact(ohw).enumerate() {
                            let mut s = T::zero();
                            for &v in plane {
                                s += v;
                            }
                            db[fi] += s;
                        }
                    }
                }
            }
            Op::ConvT2d { x, w, b, geom } => {
                let (x, w, b) = (*x, *w, *b);
                let n = dims[x.0][0];
                let f = dims[x.0][1];
                let (ckk, hw) = (geom.col_rows(), geom.col_cols());
                let plane_out = geom.channels * geom.in_h * geom.in_w;
                let mut gcol = vec![T::zero(); ckk * hw];
                for item in 0..n {
                    let g_item = &g[item * plane_out..][..plane_out];
                    if needs[x.0] || needs[w.0] {
                        im2col(g_item, geom, &mut gcol);
                    }
                    if needs[x.0] {
                        let dx = Self::ensure_grad(grad, dims, x);
                        gemm_nn(f, ckk, hw, &data[w.0], &gcol, &mut dx[item * f * hw..][..f * hw]);
                    }
                    if needs[w.0] {
                        let dw = Self::ensure_grad(grad, dims, w);
                        gemm_nt(f, hw, ckk, &data[x.0][item * f * hw..][..f * hw], &gcol, dw);
                    }
                    if needs[b.0] {
                        let db = Self::ensure_grad(grad, dims, b);
                        let plane = geom.in_h * geom.in_w;
                        for (ci, ch_plane) in g_item.chunks_exact(plane).enumerate() {
                            let mut s = T::zero();
                            for &v in ch_plane {
                                s += v;
                            }
                            db[ci] += s;
                        }
                    }
                }
            }
            Op::MaxPool2d { x, argmax, .. } => {
                let x = *x;
                if needs[x.0] {
                    let n = dims[x.0][0];
                    let item_len: usize = dims[x.0][1..].iter().product();
                    let out_item: usize = argmax.len() / n;
                    let dx = Self::ensure_grad(grad, dims, x);
                    for item in 0..n {
                        for o in 0..out_item {
                            let oi = item * out_item + o;
                            let xi = item * item_len + argmax[oi];
                            dx[xi] += g[oi];
                        }
                    }
                }
            }
            Op::BatchNorm { x, gamma, beta, mean, invstd, train } => {
                let (x, gamma, beta, train) = (*x, *gamma, *beta, *train);
                let (n, c) = (dims[x.0][0], dims[x.0][1]);
                let hw: usize = dims[x.0][2] * dims[x.0][3];
                let m = T::cast((n * hw) as f64);
                for ch in 0..c {
                    let (mu, istd) = (mean[ch], invstd[ch]);
                    let gam = data[gamma.0][ch];
                    // per-channel reductions over all items
                    let mut sum_g = T::zero();
                    let mut sum_gx = T::zero();
                    for item in 0..n {
                        let base = (item * c + ch) * hw;
                        let gs = &g[base..base + hw];
                        let xs = &data[x.0][base..base + hw];
                        for (&gv, &xv) in gs.iter().zip(xs) {
                            sum_g += gv;
                            sum_gx += gv * (xv - mu) * istd;
                        }
                    }
                    if needs[gamma.0] {
                        let dg = Self::ensure_grad(grad, dims, gamma);
                        dg[ch] += sum_gx;
                    }
                    if needs[beta.0] {
                        let db = Self::ensure_grad(grad, dims, beta);
                        db[ch] += sum_g;
                    }
                    if needs[x.0] {
                        let mean_g = sum_g / m;
                        let mean_gx = sum_gx / m;
                        let dx = Self::ensure_grad(grad, dims, x);
                        for item in 0..n {
                            let base = (item * c + ch) * hw;
                            for k in 0..hw {
                                let gv = g[base + k];
                                let d = if train {
                                    let xh = (data[x.0][base + k] - mu) * istd;
                                    gam * istd * (gv - mean_g - xh * mean_gx)
                                } else {
                                    gam * istd * gv
                                };
                                dx[base + k] += d;
                            }
                        }
                    }
                }
            }
            Op::LeakyRelu { x, slope } => {
                let (x, s) = (*x, *slope);
                if needs[x.0] {
                    let dx = Self::ensure_grad(grad, dims, x);
                    for ((d, &gv), &xv) in dx.iter_mut().zip(g).zip(&data[x.0]) {
                        *d += if xv > T::zero() { gv } else { gv * s };
                    }
                }
            }
            Op::Tanh { x } => {
                let x = *x;
                if needs[x.0] {
                    let y = &data[i];
                    let dx = Self::ensure_grad(grad, dims, x);
                    for ((d, &gv), &yv) in dx.iter_mut().zip(g).zip(y) {
                        *d += gv * (T::one() - yv * yv);
                    }
                }
            }
            Op::Linear { x, w, b } => {
                let (x, w, b) = (*x, *w, *b);
                let (n, din) = (dims[x.0][0], dims[x.0][1]);
                let dout = dims[w.0][0];
                if needs[x.0] {
                    let dx = Self::ensure_grad(grad, dims, x);
                    gemm_nn(n, dout, din, g, &data[w.0], dx);
                }
                if needs[w.0] {
                    let dw = Self::ensure_grad(grad, dims, w);
                    gemm_tn(dout, n, din, g, &data[x.0], dw);
                }
                if needs[b.0] {
                    let db = Self::ensure_grad(grad, dims, b);
                    for row in g.chunks_exact(dout) {
                        for (d, &gv) in db.iter_mut().zip(row) {
                            *d += gv;
                        }
                    }
                }
            }
            Op::Concat { xs, axis } => {
                let xs = xs.clone();
                let axis = *axis;
                let out_dims = dims[i].clone();
                let outer: usize = out_dims[..axis].iter().product();
                let inner: usize = out_dims[axis + 1..].iter().product();
                let total_axis = out_dims[axis];
                let mut at = 0usize;
                for id in xs {
                    let a_len = dims[id.0][axis];
                    if needs[id.0] {
                        let dx = Self::ensure_grad(grad, dims, id);
                        for o in 0..outer {
                            let src = &g[(o * total_axis + at) * inner..][..a_len * inner];
                            let dst = &mut dx[o * a_len * inner..][..a_len * inner];
                            for (d, &s) in dst.iter_mut().zip(src) {
                                *d += s;
                            }
                        }
                    }
                    at += a_len;
                }
            }
            Op::Slice { x, axis, start } => {
                let (x, axis, start) = (*x, *axis, *start);
                if needs[x.0] {
                    let in_dims = dims[x.0].clone();
                    let len = dims[i][axis];
                    let outer: usize = in_dims[..axis].iter().product();
                    let inner: usize = in_dims[axis + 1..].iter().product();
                    let dx = Self::ensure_grad(grad, dims, x);
                    for o in 0..outer {
                        let src = &g[o * len * inner..][..len * inner];
                        let dst = &mut dx[(o * in_dims[axis] + start) * inner..][..len * inner];
                        for (d, &s) in dst.iter_mut().zip(src) {
                            *d += s;
                        }
                    }
                }
            }
            Op::Reshape { x } => {
                let x = *x;
                if needs[x.0] {
                    let dx = Self::ensure_grad(grad, dims, x);
                    for (d, &s) in dx.iter_mut().zip(g) {
                        *d += s;
                    }
                }
            }
            Op::Add { a, b } => {
                for id in [*a, *b] {
                    if needs[id.0] {
                        let dx = Self::ensure_grad(grad, dims, id);
                        for (d, &s) in dx.iter_mut().zip(g) {
                            *d += s;
                        }
                    }
                }
            }
            Op::Sub { a, b } => {
                let (a, b) = (*a, *b);
                if needs[a.0] {
                    let da = Self::ensure_grad(grad, dims, a);
                    for (d, &s) in da.iter_mut().zip(g) {
                        *d += s;
                    }
                }
                if needs[b.0] {
                    let db = Self::ensure_grad(grad, dims, b);
                    for (d, &s) in db.iter_mut().zip(g) {
                        *d -= s;
                    }
                }
            }
            Op::Mul { a, b } => {
                let (a, b) = (*a, *b);
                if needs[a.0] {
                    let da = Self::ensure_grad(grad, dims, a);
                    for ((d, &s), &bv) in da.iter_mut().zip(g).zip(&data[b.0]) {
                        *d += s * bv;
                    }
                }
                if needs[b.0] {
                    let db = Self::ensure_grad(grad, dims, b);
                    for ((d, &s), &av) in db.iter_mut().zip(g).zip(&data[a.0]) {
                        *d += s * av;
                    }
                }
            }
            Op::Scale { x, c } => {
                let (x, c) = (*x, *c);
                if needs[x.0] {
                    let dx = Self::ensure_grad(grad, dims, x);
                    for (d, &s) in dx.iter_mut().zip(g) {
                        *d += s * c;
                    }
                }
            }
            Op::AddConst { x } => {
                let x = *x;
                if needs[x.0] {
                    let dx = Self::ensure_grad(grad, dims, x);
                    for (d, &s) in dx.iter_mut().zip(g) {
                        *d += s;
                    }
                }
            }
            Op::Square { x } => {
                let x = *x;
                if needs[x.0] {
                    let two = T::cast(2.0);
                    let dx = Self::ensure_grad(grad, dims, x);
                    for ((d, &s), &xv) in dx.iter_mut().zip(g).zip(&data[x.0]) {
                        *d += s * two * xv;
                    }
                }
            }
            Op::Abs { x } => {
                let x = *x;
                if needs[x.0] {
                    let dx = Self::ensure_grad(grad, dims, x);
                    for ((d, &s), &xv) in dx.iter_mut().zip(g).zip(&data[x.0]) {
                        let sign = if xv > T::zero() {
                            T::one()
                        } else if xv < T::zero() {
                            -T::one()
                        } else {
                            T::zero()
                        };
                        *d += s * sign;
                    }
                }
            }
            Op::MeanAll { x } => {
                let x = *x;
                if needs[x.0] {
                    let n = T::cast(data[x.0].len() as f64);
                    let gv = g[0] / n;
                    let dx = Self::ensure_grad(grad, dims, x);
                    for d in dx.iter_mut() {
                        *d += gv;
                    }
                }
            }
            Op::SumAll { x } => {
                let x = *x;
                if needs[x.0] {
                    let gv = g[0];
                    let dx = Self::ensure_grad(grad, dims, x);
                    for d in dx.iter_mut() {
                        *d += gv;
                    }
                }
            }
        }
    }
}
