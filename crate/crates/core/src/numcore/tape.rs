//! Reverse-mode automatic differentiation over a linear operation record.
//!
//! Every op appends one node whose inputs already exist on the tape, so the
//! node order is a topological order and backward is a single reverse sweep.

use crate::error::{Error, Result};

use super::kernels::{self, ConvGeom};
use super::tensor::Tensor;

/// Lower clamp applied to every `log` input.
pub const LOG_FLOOR: f64 = 1e-12;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Pointwise {
    Relu,
    Sigmoid,
    /// Natural log of `max(x, LOG_FLOOR)`.
    Log,
    Exp,
    Scale(f64),
    Shift(f64),
    Square,
    Sqrt,
    Softplus,
}

impl Pointwise {
    fn forward(self, x: f64) -> Result<f64> {
        Ok(match self {
            Pointwise::Relu => x.max(0.0),
            Pointwise::Sigmoid => kernels::sigmoid(x),
            Pointwise::Log => {
                if x.is_nan() {
                    return Err(Error::Numeric("log of NaN".into()));
                }
                x.max(LOG_FLOOR).ln()
            }
            Pointwise::Exp => x.exp(),
            Pointwise::Scale(c) => c * x,
            Pointwise::Shift(c) => x + c,
            Pointwise::Square => x * x,
            Pointwise::Sqrt => {
                if x < 0.0 {
                    return Err(Error::Numeric(format!("sqrt of negative value {x}")));
                }
                x.sqrt()
            }
            Pointwise::Softplus => kernels::softplus(x),
        })
    }

    /// dy/dx given input `x` and output `y`.
    fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Pointwise::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Pointwise::Sigmoid => y * (1.0 - y),
            Pointwise::Log => {
                if x >= LOG_FLOOR {
                    1.0 / x
                } else {
                    0.0
                }
            }
            Pointwise::Exp => y,
            Pointwise::Scale(c) => c,
            Pointwise::Shift(_) => 1.0,
            Pointwise::Square => 2.0 * x,
            Pointwise::Sqrt => 0.5 / y,
            Pointwise::Softplus => kernels::sigmoid(x),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Binary {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Linear { x: Var, w: Var, b: Var },
    Conv2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: ConvGeom,
        batch: usize,
    },
    Pointwise(Pointwise, Var),
    Binary(Binary, Var, Var),
    Sum(Var),
    Mean(Var),
    SumLast(Var),
    Concat { parts: Vec<Var>, axis: usize },
    Softmax(Var),
    LogSoftmax(Var),
    GlobalAvgPool(Var),
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// The computation record: an append-only list of executed ops.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Tensor>>,
}

fn check_finite(op: &str, t: &Tensor) -> Result<()> {
    if t.is_finite() {
        Ok(())
    } else {
        Err(Error::Numeric(format!("{op} produced a non-finite value")))
    }
}

/// `(outer, axis, inner)` extents for an axis split.
fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn reduced_shape(shape: &[usize], drop: usize) -> Vec<usize> {
    let kept = &shape[..shape.len() - drop];
    if kept.is_empty() {
        vec![1]
    } else {
        kept.to_vec()
    }
}

fn slot(grads: &mut [Option<Vec<f64>>], v: Var, len: usize) -> &mut Vec<f64> {
    grads[v.0].get_or_insert_with(|| vec![0.0; len])
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

    /// Record a leaf. Parameters use `requires_grad = true`, data and targets `false`.
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient of the last `backward` loss with respect to `v`.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::Shape(format!("matmul {sa:?} x {sb:?}")));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; m * n];
        kernels::matmul_acc(self.value(a).data(), self.value(b).data(), &mut out, m, k, n);
        let out = Tensor::new(vec![m, n], out)?;
        check_finite("matmul", &out)?;
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(out, Op::MatMul(a, b), rg))
    }

    /// Affine map `x·wᵀ + b` with `x: [B×in]`, `w: [out×in]`, `b: [out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (sx, sw, sb) = (self.shape(x), self.shape(w), self.shape(b));
        if sx.len() != 2 || sw.len() != 2 || sx[1] != sw[1] || sb != [sw[0]] {
            return Err(Error::Shape(format!("linear x{sx:?} w{sw:?} b{sb:?}")));
        }
        let (batch, inp, outp) = (sx[0], sx[1], sw[0]);
        let bias = self.value(b).data();
        let mut out: Vec<f64> = (0..batch).flat_map(|_| bias.iter().copied()).collect();
        kernels::matmul_bt_acc(
            self.value(x).data(),
            self.value(w).data(),
            &mut out,
            batch,
            inp,
            outp,
        );
        let out = Tensor::new(vec![batch, outp], out)?;
        check_finite("linear", &out)?;
        let rg = self.any_grad(&[x, w, b]);
        Ok(self.push(out, Op::Linear { x, w, b }, rg))
    }

    /// 3×3 cross-correlation with zero padding 1.
    ///
    /// `x` is `[C×H×W]` or a batch `[B×C×H×W]`; `w` is `[K×C×3×3]`; `b` is `[K]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize) -> Result<Var> {
        if stride != 1 && stride != 2 {
            return Err(Error::Shape(format!("conv2d stride {stride}")));
        }
        let sx = self.shape(x).to_vec();
        let sw = self.shape(w).to_vec();
        let (batch, c, h, wd) = match sx.as_slice() {
            &[c, h, w] => (1, c, h, w),
            &[b, c, h, w] => (b, c, h, w),
            _ => return Err(Error::Shape(format!("conv2d input {sx:?}"))),
        };
        if sw.len() != 4 || sw[1] != c || sw[2] != 3 || sw[3] != 3 {
            return Err(Error::Shape(format!("conv2d kernels {sw:?} for input {sx:?}")));
        }
        if h < 3 || wd < 3 {
            return Err(Error::Shape(format!("conv2d input {sx:?} smaller than 3x3")));
        }
        let k = sw[0];
        if let Some(b) = b {
            if self.shape(b) != [k] {
                return Err(Error::Shape(format!("conv2d bias {:?}", self.shape(b))));
            }
        }
        let geom = ConvGeom::new(c, h, wd, stride);
        let (plen, olen) = (geom.patch_len(), geom.out_len());
        let mut out = vec![0.0; batch * k * olen];
        let mut cols = vec![0.0; plen * olen];
        let input = self.value(x).data();
        let kernels_data = self.value(w).data();
        let bias = b.map(|b| self.value(b).data());
        for s in 0..batch {
            kernels::im2col(&input[s * c * h * wd..(s + 1) * c * h * wd], &geom, &mut cols);
            let dst = &mut out[s * k * olen..(s + 1) * k * olen];
            if let Some(bias) = bias {
                for (kk, row) in dst.chunks_mut(olen).enumerate() {
                    row.iter_mut().for_each(|v| *v = bias[kk]);
                }
            }
            kernels::matmul_acc(kernels_data, &cols, dst, k, plen, olen);
        }
        let shape = if sx.len() == 3 {
            vec![k, geom.out_height, geom.out_width]
        } else {
            vec![batch, k, geom.out_height, geom.out_width]
        };
        let out = Tensor::new(shape, out)?;
        check_finite("conv2d", &out)?;
        let mut deps = vec![x, w];
        deps.extend(b);
        let rg = self.any_grad(&deps);
        Ok(self.push(
            out,
            Op::Conv2d {
                x,
                w,
                b,
                geom,
                batch,
            },
            rg,
        ))
    }

    pub fn pointwise(&mut self, kind: Pointwise, x: Var) -> Result<Var> {
        let src = self.value(x);
        let data = match kind {
            Pointwise::Log | Pointwise::Sqrt => {
                src.data().iter().map(|&v| kind.forward(v)).collect::<Result<Vec<_>>>()?
            }
            // infallible kinds skip the per-element Result
            _ => src.data().iter().map(|&v| kind.forward(v).unwrap_or(f64::NAN)).collect(),
        };
        let out = Tensor::new(src.shape().to_vec(), data)?;
        check_finite("pointwise", &out)?;
        let rg = self.requires_grad(x);
        Ok(self.push(out, Op::Pointwise(kind, x), rg))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.pointwise(Pointwise::Relu, x)
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.pointwise(Pointwise::Sigmoid, x)
    }

    pub fn log(&mut self, x: Var) -> Result<Var> {
        self.pointwise(Pointwise::Log, x)
    }

    pub fn exp(&mut self, x: Var) -> Result<Var> {
        self.pointwise(Pointwise::Exp, x)
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Result<Var> {
        self.pointwise(Pointwise::Scale(c), x)
    }

    pub fn shift(&mut self, x: Var, c: f64) -> Result<Var> {
        self.pointwise(Pointwise::Shift(c), x)
    }

    /// `1 - x`
    pub fn one_minus(&mut self, x: Var) -> Result<Var> {
        let neg = self.scale(x, -1.0)?;
        self.shift(neg, 1.0)
    }

    fn binary(&mut self, kind: Binary, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::Shape(format!(
                "{kind:?} of {:?} and {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        let (va, vb) = (self.value(a).data(), self.value(b).data());
        let data: Vec<f64> = va
            .iter()
            .zip(vb)
            .map(|(&x, &y)| match kind {
                Binary::Add => x + y,
                Binary::Sub => x - y,
                Binary::Mul => x * y,
                Binary::Div => x / y,
            })
            .collect();
        let out = Tensor::new(self.shape(a).to_vec(), data)?;
        check_finite("binary op", &out)?;
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(out, Op::Binary(kind, a, b), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Mul, a, b)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Div, a, b)
    }

    /// Sum of all elements, shape `[1]`.
    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).data().iter().sum();
        let out = Tensor::scalar(s);
        check_finite("sum", &out)?;
        let rg = self.requires_grad(x);
        Ok(self.push(out, Op::Sum(x), rg))
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let out = Tensor::scalar(t.data().iter().sum::<f64>() / t.len() as f64);
        check_finite("mean", &out)?;
        let rg = self.requires_grad(x);
        Ok(self.push(out, Op::Mean(x), rg))
    }

    /// Sum over the last axis.
    pub fn sum_last(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let last = *t.shape().last().expect("rank >= 1");
        let data: Vec<f64> = t.data().chunks(last).map(|r| r.iter().sum()).collect();
        let out = Tensor::new(reduced_shape(t.shape(), 1), data)?;
        check_finite("sum_last", &out)?;
        let rg = self.requires_grad(x);
        Ok(self.push(out, Op::SumLast(x), rg))
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = self
            .shape(*parts.first().ok_or_else(|| Error::Shape("concat of nothing".into()))?)
            .to_vec();
        if axis >= first.len() {
            return Err(Error::Shape(format!("concat axis {axis} for rank {}", first.len())));
        }
        let mut total = 0;
        for &p in parts {
            let s = self.shape(p);
            let agree = s.len() == first.len()
                && s.iter()
                    .zip(&first)
                    .enumerate()
                    .all(|(i, (a, b))| i == axis || a == b);
            if !agree {
                return Err(Error::Shape(format!("concat {s:?} with {first:?} on axis {axis}")));
            }
            total += s[axis];
        }
        let (outer, _, inner) = axis_split(&first, axis);
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &p in parts {
                let t = self.value(p);
                let chunk = t.shape()[axis] * inner;
                data.extend_from_slice(&t.data()[o * chunk..(o + 1) * chunk]);
            }
        }
        let mut shape = first.clone();
        shape[axis] = total;
        let out = Tensor::new(shape, data)?;
        let rg = self.any_grad(parts);
        Ok(self.push(
            out,
            Op::Concat {
                parts: parts.to_vec(),
                axis,
            },
            rg,
        ))
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let last = *t.shape().last().expect("rank >= 1");
        let mut data = vec![0.0; t.len()];
        for (row, out) in t.data().chunks(last).zip(data.chunks_mut(last)) {
            kernels::softmax_row(row, out);
        }
        let out = Tensor::new(t.shape().to_vec(), data)?;
        check_finite("softmax", &out)?;
        let rg = self.requires_grad(x);
        Ok(self.push(out, Op::Softmax(x), rg))
    }

    pub fn log_softmax(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let last = *t.shape().last().expect("rank >= 1");
        let mut data = vec![0.0; t.len()];
        for (row, out) in t.data().chunks(last).zip(data.chunks_mut(last)) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            for (o, v) in out.iter_mut().zip(row) {
                *o = v - lse;
            }
        }
        let out = Tensor::new(t.shape().to_vec(), data)?;
        check_finite("log_softmax", &out)?;
        let rg = self.requires_grad(x);
        Ok(self.push(out, Op::LogSoftmax(x), rg))
    }

    /// Mean over the last two (spatial) axes.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        if t.rank() < 2 {
            return Err(Error::Shape(format!("global_avg_pool on {:?}", t.shape())));
        }
        let area = t.shape()[t.rank() - 2] * t.shape()[t.rank() - 1];
        let data: Vec<f64> = t
            .data()
            .chunks(area)
            .map(|m| m.iter().sum::<f64>() / area as f64)
            .collect();
        let out = Tensor::new(reduced_shape(t.shape(), 2), data)?;
        let rg = self.requires_grad(x);
        Ok(self.push(out, Op::GlobalAvgPool(x), rg))
    }

    /// Populate gradients of `loss` for every node that requires them.
    ///
    /// Previous gradients are discarded, so repeated calls are idempotent.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                lv.shape()
            )));
        }
        if !lv.is_finite() {
            return Err(Error::Numeric("backward from a non-finite loss".into()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        self.grads = grads
            .into_iter()
            .zip(&self.nodes)
            .map(|(g, n)| {
                g.filter(|_| n.requires_grad)
                    .map(|g| Tensor::new(n.value.shape().to_vec(), g).expect("grad shape"))
            })
            .collect();
        Ok(())
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn propagate(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                if self.wants(*a) {
                    let bv = self.value(*b).data();
                    kernels::matmul_bt_acc(g, bv, slot(grads, *a, self.nodes[(*a).0].value.len()), m, n, k);
                }
                if self.wants(*b) {
                    let av = self.value(*a).data();
                    kernels::matmul_at_acc(av, g, slot(grads, *b, self.nodes[(*b).0].value.len()), k, m, n);
                }
            }
            Op::Linear { x, w, b } => {
                let (batch, inp) = (self.shape(*x)[0], self.shape(*x)[1]);
                let outp = self.shape(*w)[0];
                if self.wants(*x) {
                    let wv = self.value(*w).data();
                    kernels::matmul_acc(g, wv, slot(grads, *x, self.nodes[(*x).0].value.len()), batch, outp, inp);
                }
                if self.wants(*w) {
                    let xv = self.value(*x).data();
                    kernels::matmul_at_acc(g, xv, slot(grads, *w, self.nodes[(*w).0].value.len()), outp, batch, inp);
                }
                if self.wants(*b) {
                    let gb = slot(grads, *b, self.nodes[(*b).0].value.len());
                    for row in g.chunks(outp) {
                        for (o, v) in gb.iter_mut().zip(row) {
                            *o += v;
                        }
                    }
                }
            }
            Op::Conv2d {
                x,
                w,
                b,
                geom,
                batch,
            } => {
                let k = self.shape(*w)[0];
                let (plen, olen) = (geom.patch_len(), geom.out_len());
                let in_len = geom.channels * geom.height * geom.width;
                if let Some(b) = b.filter(|b| self.wants(*b)) {
                    let gb = slot(grads, b, self.nodes[(b).0].value.len());
                    for s in 0..*batch {
                        for (kk, row) in g[s * k * olen..(s + 1) * k * olen].chunks(olen).enumerate() {
                            gb[kk] += row.iter().sum::<f64>();
                        }
                    }
                }
                let want_w = self.wants(*w);
                let want_x = self.wants(*x);
                if want_w || want_x {
                    let input = self.value(*x).data();
                    let wv = self.value(*w).data();
                    let mut cols = vec![0.0; plen * olen];
                    let mut dcols = vec![0.0; plen * olen];
                    let mut gw = vec![0.0; k * plen];
                    let mut gx = if want_x { vec![0.0; *batch * in_len] } else { Vec::new() };
                    for s in 0..*batch {
                        let gs = &g[s * k * olen..(s + 1) * k * olen];
                        if want_w {
                            kernels::im2col(&input[s * in_len..(s + 1) * in_len], geom, &mut cols);
                            kernels::matmul_bt_acc(gs, &cols, &mut gw, k, olen, plen);
                        }
                        if want_x {
                            dcols.iter_mut().for_each(|v| *v = 0.0);
                            kernels::matmul_at_acc(wv, gs, &mut dcols, plen, k, olen);
                            kernels::col2im_acc(&dcols, geom, &mut gx[s * in_len..(s + 1) * in_len]);
                        }
                    }
                    if want_w {
                        for (o, v) in slot(grads, *w, self.nodes[(*w).0].value.len()).iter_mut().zip(&gw) {
                            *o += v;
                        }
                    }
                    if want_x {
                        for (o, v) in slot(grads, *x, self.nodes[(*x).0].value.len()).iter_mut().zip(&gx) {
                            *o += v;
                        }
                    }
                }
            }
            Op::Pointwise(kind, x) => {
                let xv = self.value(*x).data();
                let yv = node.value.data();
                let gx = slot(grads, *x, self.nodes[(*x).0].value.len());
                for j in 0..g.len() {
                    gx[j] += g[j] * kind.derivative(xv[j], yv[j]);
                }
            }
            Op::Binary(kind, a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                if self.wants(*a) {
                    let ga = slot(grads, *a, self.nodes[(*a).0].value.len());
                    for j in 0..g.len() {
                        ga[j] += match kind {
                            Binary::Add | Binary::Sub => g[j],
                            Binary::Mul => g[j] * bv[j],
                            Binary::Div => g[j] / bv[j],
                        };
                    }
                }
                if self.wants(*b) {
                    let gb = slot(grads, *b, self.nodes[(*b).0].value.len());
                    for j in 0..g.len() {
                        gb[j] += match kind {
                            Binary::Add => g[j],
                            Binary::Sub => -g[j],
                            Binary::Mul => g[j] * av[j],
                            Binary::Div => -g[j] * av[j] / (bv[j] * bv[j]),
                        };
                    }
                }
            }
            Op::Sum(x) => {
                slot(grads, *x, self.nodes[(*x).0].value.len()).iter_mut().for_each(|v| *v += g[0]);
            }
            Op::Mean(x) => {
                let n = self.value(*x).len() as f64;
                slot(grads, *x, self.nodes[(*x).0].value.len()).iter_mut().for_each(|v| *v += g[0] / n);
            }
            Op::SumLast(x) => {
                let last = *self.shape(*x).last().unwrap();
                for (row, &gv) in slot(grads, *x, self.nodes[(*x).0].value.len()).chunks_mut(last).zip(g) {
                    row.iter_mut().for_each(|v| *v += gv);
                }
            }
            Op::Concat { parts, axis } => {
                let shape = node.value.shape();
                let (outer, total, inner) = axis_split(shape, *axis);
                let mut offset = 0;
                for &p in parts {
                    let width = self.shape(p)[*axis];
                    if self.wants(p) {
                        let gp = slot(grads, p, self.nodes[(p).0].value.len());
                        let chunk = width * inner;
                        for o in 0..outer {
                            let src = &g[o * total * inner + offset * inner..][..chunk];
                            for (d, s) in gp[o * chunk..(o + 1) * chunk].iter_mut().zip(src) {
                                *d += s;
                            }
                        }
                    }
                    offset += width;
                }
            }
            Op::Softmax(x) => {
                let y = node.value.data();
                let last = *node.value.shape().last().unwrap();
                let gx = slot(grads, *x, self.nodes[(*x).0].value.len());
                for r in 0..y.len() / last {
                    let (yr, gr) = (&y[r * last..(r + 1) * last], &g[r * last..(r + 1) * last]);
                    let inner: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for j in 0..last {
                        gx[r * last + j] += yr[j] * (gr[j] - inner);
                    }
                }
            }
            Op::LogSoftmax(x) => {
                let y = node.value.data();
                let last = *node.value.shape().last().unwrap();
                let gx = slot(grads, *x, self.nodes[(*x).0].value.len());
                for r in 0..y.len() / last {
                    let (yr, gr) = (&y[r * last..(r + 1) * last], &g[r * last..(r + 1) * last]);
                    let total: f64 = gr.iter().sum();
                    for j in 0..last {
                        gx[r * last + j] += gr[j] - yr[j].exp() * total;
                    }
                }
            }
            Op::GlobalAvgPool(x) => {
                let s = self.shape(*x);
                let area = s[s.len() - 2] * s[s.len() - 1];
                let scale = 1.0 / area as f64;
                for (m, &gv) in slot(grads, *x, self.nodes[(*x).0].value.len()).chunks_mut(area).zip(g) {
                    m.iter_mut().for_each(|v| *v += gv * scale);
                }
            }
        }
    }
}
