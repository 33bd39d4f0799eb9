//! Reverse-mode differentiation over tensor-valued primitives.
//!
//! A [`Tape`] borrows a [`ParamSet`], records every primitive in forward
//! execution order and can be run backward exactly once. Parameter values are
//! read in place rather than copied onto the tape.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use super::kernels::{self, Window};
use super::params::{Gradients, ParamSet};
use super::Tensor;
use crate::error::{Error, Result};

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Input,
    Param(usize),
    MatMul(Var, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    WeightedSum(Vec<(Var, f64)>),
    Relu(Var),
    Softplus(Var),
    AddScalar(Var),
    Scale(Var, f64),
    Square(Var),
    Sum(Var),
    MeanOf(Vec<Var>),
    ConcatCols(Var, Var),
    RepeatRows(Var),
    MeanRows(Var),
    SliceCols(Var, usize),
    Reshape(Var),
    Conv2d {
        input: Var,
        kernel: Var,
        bias: Var,
        window: Window,
        cols: Vec<f64>,
    },
    Deconv2d {
        input: Var,
        kernel: Var,
        bias: Var,
        window: Window,
    },
    GaussianNll {
        mu: Var,
        sigma: Var,
        target: Tensor,
    },
    Mse {
        pred: Var,
        target: Tensor,
    },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Input => "input",
            Op::Param(_) => "param",
            Op::MatMul(..) => "matmul",
            Op::AddBias(..) => "add_bias",
            Op::Add(..) => "add",
            Op::WeightedSum(_) => "weighted_sum",
            Op::Relu(_) => "relu",
            Op::Softplus(_) => "softplus",
            Op::AddScalar(_) => "add_scalar",
            Op::Scale(..) => "scale",
            Op::Square(_) => "square",
            Op::Sum(_) => "sum",
            Op::MeanOf(_) => "mean_of",
            Op::ConcatCols(..) => "concat_cols",
            Op::RepeatRows(_) => "repeat_rows",
            Op::MeanRows(_) => "mean_rows",
            Op::SliceCols(..) => "slice_cols",
            Op::Reshape(_) => "reshape",
            Op::Conv2d { .. } => "conv2d",
            Op::Deconv2d { .. } => "deconv2d",
            Op::GaussianNll { .. } => "gaussian_nll",
            Op::Mse { .. } => "mse",
        }
    }
}

struct Node {
    op: Op,
    // `None` for parameters, which live in the borrowed ParamSet.
    value: Option<Tensor>,
}

pub struct Tape<'p> {
    params: &'p ParamSet,
    nodes: Vec<Node>,
    consumed: bool,
}

/// Output extent of a strided window: `floor((n + 2·pad − k)/stride) + 1`.
pub fn conv_out_extent(n: usize, kernel: usize, stride: usize, pad: usize) -> Result<usize> {
    if stride == 0 {
        return Err(Error::invalid("stride must be positive"));
    }
    if kernel == 0 || kernel > n + 2 * pad {
        return Err(Error::invalid(format!(
            "kernel {kernel} exceeds padded extent {}",
            n + 2 * pad
        )));
    }
    Ok((n + 2 * pad - kernel) / stride + 1)
}

/// Output extent of a transposed window: `(n − 1)·stride − 2·pad + k`.
pub fn deconv_out_extent(n: usize, kernel: usize, stride: usize, pad: usize) -> Result<usize> {
    if stride == 0 || kernel == 0 {
        return Err(Error::invalid("stride and kernel must be positive"));
    }
    let full = (n - 1) * stride + kernel;
    if full <= 2 * pad {
        return Err(Error::invalid(format!("padding {pad} too large")));
    }
    Ok(full - 2 * pad)
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p ParamSet) -> Self {
        Tape {
            params,
            nodes: Vec::with_capacity(128),
            consumed: false,
        }
    }

    pub fn params(&self) -> &'p ParamSet {
        self.params
    }

    pub fn value(&self, v: Var) -> &Tensor {
        let node = &self.nodes[v.0];
        match (&node.op, &node.value) {
            (Op::Param(id), _) => self.params.by_id(*id),
            (_, Some(t)) => t,
            (_, None) => unreachable!("non-parameter node without value"),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op, value: Tensor) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite(op.name().to_string()));
        }
        self.nodes.push(Node {
            op,
            value: Some(value),
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Constant input (no gradient).
    pub fn input(&mut self, t: Tensor) -> Result<Var> {
        self.push(Op::Input, t)
    }

    pub fn param(&mut self, name: &str) -> Result<Var> {
        let id = self.params.id(name)?;
        self.param_id(id)
    }

    pub fn param_id(&mut self, id: usize) -> Result<Var> {
        self.nodes.push(Node {
            op: Op::Param(id),
            value: None,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// `[n,k] · [k,m] -> [n,m]`
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (n, k) = self.value(a).dims2("matmul")?;
        let (k2, m) = self.value(b).dims2("matmul")?;
        if k != k2 {
            return Err(Error::shape("matmul", format!("[{n},{k}] x [{k2},{m}]")));
        }
        let mut out = vec![0.0; n * m];
        kernels::matmul_acc(self.value(a).data(), self.value(b).data(), &mut out, n, k, m);
        self.push(Op::MatMul(a, b), Tensor::new(vec![n, m], out)?)
    }

    /// Adds a `[m]` bias to every row of `[n,m]`; the one permitted broadcast.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (n, m) = self.value(x).dims2("add_bias")?;
        if self.value(bias).len() != m || self.value(bias).rank() != 1 {
            return Err(Error::shape(
                "add_bias",
                format!("bias {:?} for [{n},{m}]", self.value(bias).shape()),
            ));
        }
        let mut out = self.value(x).clone();
        let b = self.value(bias).data();
        for row in out.data_mut().chunks_mut(m) {
            for (v, bv) in row.iter_mut().zip(b) {
                *v += bv;
            }
        }
        self.push(Op::AddBias(x, bias), out)
    }

    /// Fully connected layer `x·W + b`.
    pub fn linear(&mut self, x: Var, weight: Var, bias: Var) -> Result<Var> {
        let y = self.matmul(x, weight)?;
        self.add_bias(y, bias)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(Error::shape(
                "add",
                format!("{:?} vs {:?}", self.value(a).shape(), self.value(b).shape()),
            ));
        }
        let mut out = self.value(a).clone();
        out.add_assign(self.value(b))?;
        self.push(Op::Add(a, b), out)
    }

    /// `Σ wᵢ·xᵢ` with constant weights; all terms share one shape.
    pub fn weighted_sum(&mut self, terms: &[(Var, f64)]) -> Result<Var> {
        let Some(&(first, _)) = terms.first() else {
            return Err(Error::invalid("weighted_sum of no terms"));
        };
        let shape = self.value(first).shape().to_vec();
        let mut out = Tensor::zeros(&shape);
        for &(v, w) in terms {
            let t = self.value(v);
            if t.shape() != shape.as_slice() {
                return Err(Error::shape(
                    "weighted_sum",
                    format!("{:?} vs {shape:?}", t.shape()),
                ));
            }
            for (o, x) in out.data_mut().iter_mut().zip(t.data()) {
                *o += w * x;
            }
        }
        self.push(Op::WeightedSum(terms.to_vec()), out)
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).map(|v| v.max(0.0));
        self.push(Op::Relu(x), out)
    }

    /// Fingerprint of which ReLU inputs are positive. Two evaluations with the
    /// same fingerprint lie on the same linear piece of every ReLU.
    pub fn relu_pattern(&self) -> u64 {
        let mut h = DefaultHasher::new();
        for node in &self.nodes {
            if let Op::Relu(x) = node.op {
                for v in self.value(x).data() {
                    (*v > 0.0).hash(&mut h);
                }
            }
        }
        h.finish()
    }

    pub fn softplus(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).map(softplus);
        self.push(Op::Softplus(x), out)
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Result<Var> {
        let out = self.value(x).map(|v| v + c);
        self.push(Op::AddScalar(x), out)
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Result<Var> {
        let out = self.value(x).map(|v| v * c);
        self.push(Op::Scale(x, c), out)
    }

    pub fn square(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).map(|v| v * v);
        self.push(Op::Square(x), out)
    }

    /// Sum of all entries, as a `[1]` scalar.
    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).sum();
        self.push(Op::Sum(x), Tensor::scalar(s))
    }

    /// Arithmetic mean of several `[1]` scalars.
    pub fn mean_of(&mut self, xs: &[Var]) -> Result<Var> {
        if xs.is_empty() {
            return Err(Error::invalid("mean_of no values"));
        }
        let mut s = 0.0;
        for &x in xs {
            let t = self.value(x);
            if t.len() != 1 {
                return Err(Error::shape("mean_of", format!("non-scalar {:?}", t.shape())));
            }
            s += t.data()[0];
        }
        self.push(Op::MeanOf(xs.to_vec()), Tensor::scalar(s / xs.len() as f64))
    }

    /// `[n,a] ++ [n,b] -> [n,a+b]`
    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (n, ca) = self.value(a).dims2("concat_cols")?;
        let (n2, cb) = self.value(b).dims2("concat_cols")?;
        if n != n2 {
            return Err(Error::shape("concat_cols", format!("rows {n} vs {n2}")));
        }
        let mut out = Vec::with_capacity(n * (ca + cb));
        for i in 0..n {
            out.extend_from_slice(self.value(a).row_slice(i));
            out.extend_from_slice(self.value(b).row_slice(i));
        }
        self.push(Op::ConcatCols(a, b), Tensor::new(vec![n, ca + cb], out)?)
    }

    /// `[1,m] -> [n,m]` by copying the row.
    pub fn repeat_rows(&mut self, x: Var, n: usize) -> Result<Var> {
        let (r, m) = self.value(x).dims2("repeat_rows")?;
        if r != 1 || n == 0 {
            return Err(Error::shape("repeat_rows", format!("[{r},{m}] x {n}")));
        }
        let row = self.value(x).data().to_vec();
        let out: Vec<f64> = std::iter::repeat_n(row, n).flatten().collect();
        self.push(Op::RepeatRows(x), Tensor::new(vec![n, m], out)?)
    }

    /// `[n,m] -> [1,m]` column means, accumulated in row order.
    pub fn mean_rows(&mut self, x: Var) -> Result<Var> {
        let (n, m) = self.value(x).dims2("mean_rows")?;
        let mut out = vec![0.0; m];
        for i in 0..n {
            for (o, v) in out.iter_mut().zip(self.value(x).row_slice(i)) {
                *o += v;
            }
        }
        let inv = 1.0 / n as f64;
        out.iter_mut().for_each(|v| *v *= inv);
        self.push(Op::MeanRows(x), Tensor::new(vec![1, m], out)?)
    }

    /// Columns `[start, end)` of a matrix.
    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let (n, m) = self.value(x).dims2("slice_cols")?;
        if start >= end || end > m {
            return Err(Error::shape("slice_cols", format!("[{start},{end}) of {m}")));
        }
        let mut out = Vec::with_capacity(n * (end - start));
        for i in 0..n {
            out.extend_from_slice(&self.value(x).row_slice(i)[start..end]);
        }
        self.push(Op::SliceCols(x, start), Tensor::new(vec![n, end - start], out)?)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).clone().reshape(shape)?;
        self.push(Op::Reshape(x), out)
    }

    /// 2D convolution: input `[C,H,W]`, kernel `[O,C,k,k]`, bias `[O]`.
    pub fn conv2d(
        &mut self,
        input: Var,
        kernel: Var,
        bias: Var,
        stride: usize,
        pad: usize,
    ) -> Result<Var> {
        let (c, h, w) = self.value(input).dims3("conv2d")?;
        let (o, kc, k) = match self.value(kernel).shape() {
            &[o, kc, kh, kw] if kh == kw => (o, kc, kh),
            s => return Err(Error::shape("conv2d", format!("kernel {s:?}"))),
        };
        if kc != c || self.value(bias).shape() != [o] {
            return Err(Error::shape(
                "conv2d",
                format!(
                    "input channels {c}, kernel {:?}, bias {:?}",
                    self.value(kernel).shape(),
                    self.value(bias).shape()
                ),
            ));
        }
        let window = Window {
            channels: c,
            height: h,
            width: w,
            kernel: k,
            stride,
            pad,
            out_h: conv_out_extent(h, k, stride, pad)?,
            out_w: conv_out_extent(w, k, stride, pad)?,
        };
        let cols = kernels::im2col(self.value(input).data(), &window);
        let hw = window.cols();
        let mut out = vec![0.0; o * hw];
        for (oc, b) in self.value(bias).data().iter().enumerate() {
            out[oc * hw..(oc + 1) * hw].fill(*b);
        }
        kernels::matmul_acc(self.value(kernel).data(), &cols, &mut out, o, window.rows(), hw);
        let value = Tensor::new(vec![o, window.out_h, window.out_w], out)?;
        self.push(
            Op::Conv2d {
                input,
                kernel,
                bias,
                window,
                cols,
            },
            value,
        )
    }

    /// Transposed convolution: input `[Cin,H,W]`, kernel `[Cin,Cout,k,k]`, bias `[Cout]`.
    /// Output extent is `(H − 1)·stride − 2·pad + k`.
    pub fn deconv2d(
        &mut self,
        input: Var,
        kernel: Var,
        bias: Var,
        stride: usize,
        pad: usize,
    ) -> Result<Var> {
        let (cin, h, w) = self.value(input).dims3("deconv2d")?;
        let (cout, k) = match self.value(kernel).shape() {
            &[kc, cout, kh, kw] if kh == kw && kc == cin => (cout, kh),
            s => return Err(Error::shape("deconv2d", format!("kernel {s:?} for {cin} inputs"))),
        };
        if self.value(bias).shape() != [cout] {
            return Err(Error::shape("deconv2d", "bias length".to_string()));
        }
        let oh = deconv_out_extent(h, k, stride, pad)?;
        let ow = deconv_out_extent(w, k, stride, pad)?;
        let window = Window {
            channels: cout,
            height: oh,
            width: ow,
            kernel: k,
            stride,
            pad,
            out_h: h,
            out_w: w,
        };
        if conv_out_extent(oh, k, stride, pad)? != h || conv_out_extent(ow, k, stride, pad)? != w
        {
            return Err(Error::invalid("deconv geometry is not invertible"));
        }
        let mut cols = vec![0.0; window.rows() * window.cols()];
        kernels::matmul_at_acc(
            self.value(kernel).data(),
            self.value(input).data(),
            &mut cols,
            cin,
            window.rows(),
            h * w,
        );
        let mut out = vec![0.0; cout * oh * ow];
        for (oc, b) in self.value(bias).data().iter().enumerate() {
            out[oc * oh * ow..(oc + 1) * oh * ow].fill(*b);
        }
        kernels::col2im(&cols, &window, &mut out);
        let value = Tensor::new(vec![cout, oh, ow], out)?;
        self.push(
            Op::Deconv2d {
                input,
                kernel,
                bias,
                window,
            },
            value,
        )
    }

    /// Mean Gaussian negative log density of `target` under `(mu, sigma)`.
    /// `sigma` matches `mu` elementwise or is a single shared value.
    pub fn gaussian_nll(&mut self, mu: Var, sigma: Var, target: Tensor) -> Result<Var> {
        let m = self.value(mu);
        let s = self.value(sigma);
        if m.len() != target.len() {
            return Err(Error::shape(
                "gaussian_nll",
                format!("mu {:?} vs target {:?}", m.shape(), target.shape()),
            ));
        }
        if s.len() != m.len() && s.len() != 1 {
            return Err(Error::shape(
                "gaussian_nll",
                format!("sigma {:?} vs mu {:?}", s.shape(), m.shape()),
            ));
        }
        if s.data().iter().any(|&v| v <= 0.0) {
            return Err(Error::invalid("gaussian_nll requires sigma > 0"));
        }
        let shared = s.len() == 1;
        let mut total = 0.0;
        for (i, (&mv, &y)) in m.data().iter().zip(target.data()).enumerate() {
            let sv = if shared { s.data()[0] } else { s.data()[i] };
            let z = (y - mv) / sv;
            total += HALF_LN_2PI + sv.ln() + 0.5 * z * z;
        }
        let n = m.len() as f64;
        self.push(Op::GaussianNll { mu, sigma, target }, Tensor::scalar(total / n))
    }

    /// Mean squared error.
    pub fn mse(&mut self, pred: Var, target: Tensor) -> Result<Var> {
        let p = self.value(pred);
        if p.len() != target.len() {
            return Err(Error::shape(
                "mse",
                format!("{:?} vs {:?}", p.shape(), target.shape()),
            ));
        }
        let total: f64 = p
            .data()
            .iter()
            .zip(target.data())
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        let n = p.len() as f64;
        self.push(Op::Mse { pred, target }, Tensor::scalar(total / n))
    }

    /// Propagates `seed` (ones for a scalar output when `None`) back to
    /// every parameter. The tape cannot be reused afterwards.
    pub fn backward(&mut self, output: Var, seed: Option<Tensor>) -> Result<Gradients> {
        if self.consumed {
            return Err(Error::TapeConsumed);
        }
        self.consumed = true;
        let out_shape = self.value(output).shape().to_vec();
        let seed = match seed {
            Some(s) => {
                if s.shape() != out_shape.as_slice() {
                    return Err(Error::shape(
                        "backward",
                        format!("seed {:?} vs output {:?}", s.shape(), out_shape),
                    ));
                }
                s
            }
            None => Tensor::filled(&out_shape, 1.0),
        };

        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[output.0] = Some(seed);
        let mut param_grads: Vec<Tensor> = self
            .params
            .tensors()
            .iter()
            .map(|t| Tensor::zeros(t.shape()))
            .collect();

        for idx in (0..=output.0).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Input => {}
                Op::Param(id) => param_grads[*id].add_assign(&g)?,
                Op::MatMul(a, b) => {
                    let av = self.value(*a);
                    let bv = self.value(*b);
                    let (n, k) = av.dims2("matmul")?;
                    let (_, m) = bv.dims2("matmul")?;
                    let mut da = vec![0.0; n * k];
                    kernels::matmul_bt_acc(g.data(), bv.data(), &mut da, n, m, k);
                    let mut db = vec![0.0; k * m];
                    kernels::matmul_at_acc(av.data(), g.data(), &mut db, n, k, m);
                    accumulate(&mut grads, *a, Tensor::new(vec![n, k], da)?)?;
                    accumulate(&mut grads, *b, Tensor::new(vec![k, m], db)?)?;
                }
                Op::AddBias(x, b) => {
                    let (_, m) = g.dims2("add_bias")?;
                    let mut db = vec![0.0; m];
                    for row in g.data().chunks(m) {
                        for (d, v) in db.iter_mut().zip(row) {
                            *d += v;
                        }
                    }
                    accumulate(&mut grads, *b, Tensor::new(vec![m], db)?)?;
                    accumulate(&mut grads, *x, g)?;
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, g.clone())?;
                    accumulate(&mut grads, *b, g)?;
                }
                Op::WeightedSum(terms) => {
                    for &(v, w) in terms {
                        accumulate(&mut grads, v, g.map(|x| x * w))?;
                    }
                }
                Op::Relu(x) => {
                    let xv = self.value(*x);
                    let mut d = g;
                    for (dv, &v) in d.data_mut().iter_mut().zip(xv.data()) {
                        if v <= 0.0 {
                            *dv = 0.0;
                        }
                    }
                    accumulate(&mut grads, *x, d)?;
                }
                Op::Softplus(x) => {
                    let xv = self.value(*x);
                    let mut d = g;
                    for (dv, &v) in d.data_mut().iter_mut().zip(xv.data()) {
                        *dv *= sigmoid(v);
                    }
                    accumulate(&mut grads, *x, d)?;
                }
                Op::AddScalar(x) | Op::Reshape(x) => {
                    let shape = self.value(*x).shape().to_vec();
                    accumulate(&mut grads, *x, g.reshape(&shape)?)?;
                }
                Op::Scale(x, c) => {
                    let c = *c;
                    accumulate(&mut grads, *x, g.map(|v| v * c))?;
                }
                Op::Square(x) => {
                    let xv = self.value(*x);
                    let mut d = g;
                    for (dv, &v) in d.data_mut().iter_mut().zip(xv.data()) {
                        *dv *= 2.0 * v;
                    }
                    accumulate(&mut grads, *x, d)?;
                }
                Op::Sum(x) => {
                    let shape = self.value(*x).shape().to_vec();
                    accumulate(&mut grads, *x, Tensor::filled(&shape, g.data()[0]))?;
                }
                Op::MeanOf(xs) => {
                    let share = g.data()[0] / xs.len() as f64;
                    for &x in xs {
                        accumulate(&mut grads, x, Tensor::scalar(share))?;
                    }
                }
                Op::ConcatCols(a, b) => {
                    let (n, ca) = self.value(*a).dims2("concat_cols")?;
                    let (_, cb) = self.value(*b).dims2("concat_cols")?;
                    let mut da = Vec::with_capacity(n * ca);
                    let mut db = Vec::with_capacity(n * cb);
                    for row in g.data().chunks(ca + cb) {
                        da.extend_from_slice(&row[..ca]);
                        db.extend_from_slice(&row[ca..]);
                    }
                    accumulate(&mut grads, *a, Tensor::new(vec![n, ca], da)?)?;
                    accumulate(&mut grads, *b, Tensor::new(vec![n, cb], db)?)?;
                }
                Op::RepeatRows(x) => {
                    let (_, m) = g.dims2("repeat_rows")?;
                    let mut d = vec![0.0; m];
                    for row in g.data().chunks(m) {
                        for (dv, v) in d.iter_mut().zip(row) {
                            *dv += v;
                        }
                    }
                    accumulate(&mut grads, *x, Tensor::new(vec![1, m], d)?)?;
                }
                Op::MeanRows(x) => {
                    let (n, m) = self.value(*x).dims2("mean_rows")?;
                    let inv = 1.0 / n as f64;
                    let row: Vec<f64> = g.data().iter().map(|v| v * inv).collect();
                    let d: Vec<f64> = std::iter::repeat_n(row, n).flatten().collect();
                    accumulate(&mut grads, *x, Tensor::new(vec![n, m], d)?)?;
                }
                Op::SliceCols(x, start) => {
                    let (n, m) = self.value(*x).dims2("slice_cols")?;
                    let (_, w) = g.dims2("slice_cols")?;
                    let mut d = vec![0.0; n * m];
                    for (i, row) in g.data().chunks(w).enumerate() {
                        d[i * m + start..i * m + start + w].copy_from_slice(row);
                    }
                    accumulate(&mut grads, *x, Tensor::new(vec![n, m], d)?)?;
                }
                Op::Conv2d {
                    input,
                    kernel,
                    bias,
                    window,
                    cols,
                } => {
                    let kv = self.value(*kernel);
                    let o = kv.shape()[0];
                    let hw = window.cols();
                    let rows = window.rows();
                    let mut dk = vec![0.0; o * rows];
                    kernels::matmul_bt_acc(g.data(), cols, &mut dk, o, hw, rows);
                    let mut dcols = vec![0.0; rows * hw];
                    kernels::matmul_at_acc(kv.data(), g.data(), &mut dcols, o, rows, hw);
                    let mut dx = vec![0.0; window.channels * window.height * window.width];
                    kernels::col2im(&dcols, window, &mut dx);
                    let db: Vec<f64> = g.data().chunks(hw).map(|c| c.iter().sum()).collect();
                    let kshape = kv.shape().to_vec();
                    let xshape = self.value(*input).shape().to_vec();
                    accumulate(&mut grads, *kernel, Tensor::new(kshape, dk)?)?;
                    accumulate(&mut grads, *bias, Tensor::new(vec![o], db)?)?;
                    accumulate(&mut grads, *input, Tensor::new(xshape, dx)?)?;
                }
                Op::Deconv2d {
                    input,
                    kernel,
                    bias,
                    window,
                } => {
                    let kv = self.value(*kernel);
                    let xv = self.value(*input);
                    let cin = xv.shape()[0];
                    let hw = window.cols();
                    let rows = window.rows();
                    let dcols = kernels::im2col(g.data(), window);
                    let mut dx = vec![0.0; cin * hw];
                    kernels::matmul_acc(kv.data(), &dcols, &mut dx, cin, rows, hw);
                    let mut dk = vec![0.0; cin * rows];
                    kernels::matmul_bt_acc(xv.data(), &dcols, &mut dk, cin, hw, rows);
                    let plane = window.height * window.width;
                    let db: Vec<f64> = g.data().chunks(plane).map(|c| c.iter().sum()).collect();
                    let kshape = kv.shape().to_vec();
                    let xshape = xv.shape().to_vec();
                    accumulate(&mut grads, *kernel, Tensor::new(kshape, dk)?)?;
                    accumulate(&mut grads, *bias, Tensor::new(vec![window.channels], db)?)?;
                    accumulate(&mut grads, *input, Tensor::new(xshape, dx)?)?;
                }
                Op::GaussianNll { mu, sigma, target } => {
                    let mv = self.value(*mu);
                    let sv = self.value(*sigma);
                    let n = mv.len() as f64;
                    let scale = g.data()[0] / n;
                    let shared = sv.len() == 1;
                    let mut dmu = vec![0.0; mv.len()];
                    let mut dsig = vec![0.0; sv.len()];
                    for (i, (&m, &y)) in mv.data().iter().zip(target.data()).enumerate() {
                        let si = if shared { 0 } else { i };
                        let s = sv.data()[si];
                        let r = y - m;
                        let inv2 = 1.0 / (s * s);
                        dmu[i] = -r * inv2 * scale;
                        dsig[si] += (1.0 / s - r * r * inv2 / s) * scale;
                    }
                    let mshape = mv.shape().to_vec();
                    let sshape = sv.shape().to_vec();
                    accumulate(&mut grads, *mu, Tensor::new(mshape, dmu)?)?;
                    accumulate(&mut grads, *sigma, Tensor::new(sshape, dsig)?)?;
                }
                Op::Mse { pred, target } => {
                    let pv = self.value(*pred);
                    let scale = 2.0 * g.data()[0] / pv.len() as f64;
                    let d: Vec<f64> = pv
                        .data()
                        .iter()
                        .zip(target.data())
                        .map(|(p, y)| (p - y) * scale)
                        .collect();
                    let shape = pv.shape().to_vec();
                    accumulate(&mut grads, *pred, Tensor::new(shape, d)?)?;
                }
            }
        }
        for g in &param_grads {
            g.ensure_finite("gradient")?;
        }
        Ok(Gradients::from_vec(param_grads))
    }
}

fn accumulate(grads: &mut [Option<Tensor>], v: Var, g: Tensor) -> Result<()> {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => {
            *slot = Some(g);
            Ok(())
        }
    }
}
