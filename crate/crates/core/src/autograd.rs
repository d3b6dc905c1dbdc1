//! A small reverse-mode automatic differentiation tape over dense `f64`
//! matrices.
//!
//! Every value is a 2-D array; scalars are `1 x 1`. Image tensors are stored
//! row-per-sample with channel-major `(c, h, w)` layout and the convolution
//! ops receive the geometry explicitly. Nodes are appended in evaluation
//! order, so the tape order is already a topological order for the backward
//! sweep.

use ndarray::{s, Array2, Axis};

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Geometry of a 2-D convolution with square kernels and symmetric padding.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub in_channels: usize,
    pub out_channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvGeometry {
    pub fn out_height(&self) -> usize {
        (self.height + 2 * self.padding - self.kernel) / self.stride + 1
    }

    pub fn out_width(&self) -> usize {
        (self.width + 2 * self.padding - self.kernel) / self.stride + 1
    }

    pub fn in_len(&self) -> usize {
        self.in_channels * self.height * self.width
    }

    pub fn out_len(&self) -> usize {
        self.out_channels * self.out_height() * self.out_width()
    }

    fn patch_len(&self) -> usize {
        self.in_channels * self.kernel * self.kernel
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    AddRow(Var, Var),
    MulCol(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Relu(Var),
    Exp(Var),
    Ln(Var),
    Tanh(Var),
    Sqrt(Var),
    ClampMin(Var, f64),
    ClampMax(Var, f64),
    SumAll(Var),
    MeanAll(Var),
    SumRows(Var),
    MeanRows(Var),
    LogSumExpRows(Var),
    SoftmaxRows(Var),
    LogSoftmaxRows(Var),
    Transpose(Var),
    SelectRows(Var, Vec<usize>),
    SliceCols(Var, usize, usize),
    ConcatRows(Vec<Var>),
    Conv2d {
        input: Var,
        weight: Var,
        bias: Var,
        geom: ConvGeometry,
    },
    GlobalAvgPool {
        input: Var,
        channels: usize,
    },
}

#[derive(Debug, Clone)]
struct Node {
    value: Array2<f64>,
    op: Op,
    requires_grad: bool,
}

/// Evaluation tape. Build a graph by calling ops, then call
/// [`Graph::backward`] on a scalar node.
#[derive(Debug, Default, Clone)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients produced by a backward sweep, indexed by [`Var`].
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Array2<f64>>>,
    shapes: Vec<(usize, usize)>,
}

impl Gradients {
    /// Gradient with respect to `v`. Nodes that the output does not depend on
    /// (including detached ones) yield zeros.
    pub fn get(&self, v: Var) -> Array2<f64> {
        match &self.grads[v.0] {
            Some(g) => g.clone(),
            None => Array2::zeros(self.shapes[v.0]),
        }
    }

    /// `None` when no gradient reached the node.
    pub fn try_get(&self, v: Var) -> Option<&Array2<f64>> {
        self.grads[v.0].as_ref()
    }
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

    fn push(&mut self, value: Array2<f64>, op: Op, requires_grad: bool) -> Var {
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

    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.nodes[v.0].value
    }

    /// Value of a `1 x 1` node.
    pub fn scalar(&self, v: Var) -> f64 {
        let value = self.value(v);
        debug_assert_eq!(value.dim(), (1, 1));
        value[[0, 0]]
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.dim()
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf that never receives gradient.
    pub fn constant(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn scalar_constant(&mut self, value: f64) -> Var {
        self.constant(Array2::from_elem((1, 1), value))
    }

    /// Stop-gradient: a constant copy of `v`.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.value(v).clone();
        self.constant(value)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).dot(self.value(b));
        let rg = self.rg(a) || self.rg(b);
        self.push(value, Op::MatMul(a, b), rg)
    }

    fn assert_same(&self, a: Var, b: Var, what: &str) {
        assert_eq!(
            self.shape(a),
            self.shape(b),
            "{what}: operand shapes differ"
        );
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.assert_same(a, b, "add");
        let value = self.value(a) + self.value(b);
        let rg = self.rg(a) || self.rg(b);
        self.push(value, Op::Add(a, b), rg)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.assert_same(a, b, "sub");
        let value = self.value(a) - self.value(b);
        let rg = self.rg(a) || self.rg(b);
        self.push(value, Op::Sub(a, b), rg)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.assert_same(a, b, "mul");
        let value = self.value(a) * self.value(b);
        let rg = self.rg(a) || self.rg(b);
        self.push(value, Op::Mul(a, b), rg)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Var {
        self.assert_same(a, b, "div");
        let value = self.value(a) / self.value(b);
        let rg = self.rg(a) || self.rg(b);
        self.push(value, Op::Div(a, b), rg)
    }

    /// `a (n x m) + row (1 x m)` broadcast over rows.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let (_, m) = self.shape(a);
        assert_eq!(self.shape(row), (1, m), "add_row: bias must be 1 x m");
        let value = self.value(a) + self.value(row);
        let rg = self.rg(a) || self.rg(row);
        self.push(value, Op::AddRow(a, row), rg)
    }

    /// `a (n x m) * col (n x 1)` broadcast over columns.
    pub fn mul_col(&mut self, a: Var, col: Var) -> Var {
        let (n, _) = self.shape(a);
        assert_eq!(self.shape(col), (n, 1), "mul_col: column must be n x 1");
        let value = self.value(a) * self.value(col);
        let rg = self.rg(a) || self.rg(col);
        self.push(value, Op::MulCol(a, col), rg)
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let value = self.value(a) * factor;
        let rg = self.rg(a);
        self.push(value, Op::Scale(a, factor), rg)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let value = self.value(a) + c;
        let rg = self.rg(a);
        self.push(value, Op::AddScalar(a), rg)
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -1.0)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(|x| x.max(0.0));
        let rg = self.rg(a);
        self.push(value, Op::Relu(a), rg)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(f64::exp);
        let rg = self.rg(a);
        self.push(value, Op::Exp(a), rg)
    }

    pub fn ln(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(f64::ln);
        let rg = self.rg(a);
        self.push(value, Op::Ln(a), rg)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(f64::tanh);
        let rg = self.rg(a);
        self.push(value, Op::Tanh(a), rg)
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(f64::sqrt);
        let rg = self.rg(a);
        self.push(value, Op::Sqrt(a), rg)
    }

    /// `max(a, floor)`; gradient passes only where `a > floor`.
    pub fn clamp_min(&mut self, a: Var, floor: f64) -> Var {
        let value = self.value(a).mapv(|x| x.max(floor));
        let rg = self.rg(a);
        self.push(value, Op::ClampMin(a, floor), rg)
    }

    /// `min(a, ceil)`; gradient passes only where `a < ceil`.
    pub fn clamp_max(&mut self, a: Var, ceil: f64) -> Var {
        let value = self.value(a).mapv(|x| x.min(ceil));
        let rg = self.rg(a);
        self.push(value, Op::ClampMax(a, ceil), rg)
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.mul(a, a)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let value = Array2::from_elem((1, 1), self.value(a).sum());
        let rg = self.rg(a);
        self.push(value, Op::SumAll(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let value = Array2::from_elem((1, 1), v.sum() / v.len() as f64);
        let rg = self.rg(a);
        self.push(value, Op::MeanAll(a), rg)
    }

    /// Row sums, `n x m -> n x 1`.
    pub fn sum_rows(&mut self, a: Var) -> Var {
        let value = self.value(a).sum_axis(Axis(1)).insert_axis(Axis(1));
        let rg = self.rg(a);
        self.push(value, Op::SumRows(a), rg)
    }

    /// Column means, `n x m -> 1 x m`.
    pub fn mean_rows(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let n = v.nrows() as f64;
        let value = (v.sum_axis(Axis(0)) / n).insert_axis(Axis(0));
        let rg = self.rg(a);
        self.push(value, Op::MeanRows(a), rg)
    }

    /// Row-wise log-sum-exp with max subtraction, `n x m -> n x 1`.
    pub fn logsumexp_rows(&mut self, a: Var) -> Var {
        let value = logsumexp_rows(self.value(a));
        let rg = self.rg(a);
        self.push(value, Op::LogSumExpRows(a), rg)
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let value = softmax_rows(self.value(a));
        let rg = self.rg(a);
        self.push(value, Op::SoftmaxRows(a), rg)
    }

    pub fn log_softmax_rows(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let value = v - &logsumexp_rows(v);
        let rg = self.rg(a);
        self.push(value, Op::LogSoftmaxRows(a), rg)
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let value = self.value(a).t().to_owned();
        let rg = self.rg(a);
        self.push(value, Op::Transpose(a), rg)
    }

    pub fn select_rows(&mut self, a: Var, rows: &[usize]) -> Var {
        let value = self.value(a).select(Axis(0), rows);
        let rg = self.rg(a);
        self.push(value, Op::SelectRows(a, rows.to_vec()), rg)
    }

    /// Rows `start..end` (contiguous selection).
    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Var {
        let rows: Vec<usize> = (start..end).collect();
        self.select_rows(a, &rows)
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Var {
        let value = self.value(a).slice(s![.., start..end]).to_owned();
        let rg = self.rg(a);
        self.push(value, Op::SliceCols(a, start, end), rg)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat_rows: no operands");
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let value = ndarray::concatenate(Axis(0), &views).expect("concat_rows: column mismatch");
        let rg = parts.iter().any(|&p| self.rg(p));
        self.push(value, Op::ConcatRows(parts.to_vec()), rg)
    }

    /// Convolution over row-per-sample images. `weight` is
    /// `out_channels x (in_channels * k * k)`, `bias` is `1 x out_channels`.
    pub fn conv2d(&mut self, input: Var, weight: Var, bias: Var, geom: ConvGeometry) -> Var {
        assert_eq!(self.shape(input).1, geom.in_len(), "conv2d: input width");
        assert_eq!(
            self.shape(weight),
            (geom.out_channels, geom.patch_len()),
            "conv2d: weight shape"
        );
        assert_eq!(self.shape(bias), (1, geom.out_channels), "conv2d: bias shape");
        let x = self.value(input);
        let w = self.value(weight);
        let b = self.value(bias);
        let n = x.nrows();
        let hw_out = geom.out_height() * geom.out_width();
        let mut out = Array2::zeros((n, geom.out_len()));
        for i in 0..n {
            let cols = im2col(x.row(i).as_slice().expect("contiguous"), &geom);
            let y = w.dot(&cols);
            let mut row = out.row_mut(i);
            for oc in 0..geom.out_channels {
                for p in 0..hw_out {
                    row[oc * hw_out + p] = y[[oc, p]] + b[[0, oc]];
                }
            }
        }
        let rg = self.rg(input) || self.rg(weight) || self.rg(bias);
        self.push(
            out,
            Op::Conv2d {
                input,
                weight,
                bias,
                geom,
            },
            rg,
        )
    }

    /// Mean over spatial positions, `n x (c * hw) -> n x c`.
    pub fn global_avg_pool(&mut self, input: Var, channels: usize) -> Var {
        let x = self.value(input);
        let (n, len) = x.dim();
        assert_eq!(len % channels, 0, "global_avg_pool: width not divisible");
        let hw = len / channels;
        let mut out = Array2::zeros((n, channels));
        for i in 0..n {
            for c in 0..channels {
                out[[i, c]] = x.slice(s![i, c * hw..(c + 1) * hw]).sum() / hw as f64;
            }
        }
        let rg = self.rg(input);
        self.push(out, Op::GlobalAvgPool { input, channels }, rg)
    }

    /// Reverse sweep from a scalar node.
    pub fn backward(&self, output: Var) -> Gradients {
        assert_eq!(self.shape(output), (1, 1), "backward: output must be scalar");
        let mut grads: Vec<Option<Array2<f64>>> = vec![None; self.nodes.len()];
        grads[output.0] = Some(Array2::ones((1, 1)));
        for idx in (0..=output.0).rev() {
            let Some(grad) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            if node.requires_grad {
                self.propagate(&node.op, &node.value, &grad, &mut grads);
            }
            grads[idx] = Some(grad);
        }
        Gradients {
            grads,
            shapes: self.nodes.iter().map(|n| n.value.dim()).collect(),
        }
    }

    fn propagate(
        &self,
        op: &Op,
        out: &Array2<f64>,
        grad: &Array2<f64>,
        grads: &mut [Option<Array2<f64>>],
    ) {
        let mut acc = |v: Var, g: Array2<f64>| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => *existing += &g,
                slot @ None => *slot = Some(g),
            }
        };
        match op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let av = self.value(*a);
                let bv = self.value(*b);
                acc(*a, grad.dot(&bv.t()));
                acc(*b, av.t().dot(grad));
            }
            Op::Add(a, b) => {
                acc(*a, grad.clone());
                acc(*b, grad.clone());
            }
            Op::Sub(a, b) => {
                acc(*a, grad.clone());
                acc(*b, -grad);
            }
            Op::Mul(a, b) => {
                let av = self.value(*a);
                let bv = self.value(*b);
                acc(*a, grad * bv);
                acc(*b, grad * av);
            }
            Op::Div(a, b) => {
                let bv = self.value(*b);
                acc(*a, grad / bv);
                acc(*b, -(grad * out) / bv);
            }
            Op::AddRow(a, row) => {
                acc(*a, grad.clone());
                acc(*row, grad.sum_axis(Axis(0)).insert_axis(Axis(0)));
            }
            Op::MulCol(a, col) => {
                let av = self.value(*a);
                let cv = self.value(*col);
                acc(*a, grad * cv);
                acc(*col, (grad * av).sum_axis(Axis(1)).insert_axis(Axis(1)));
            }
            Op::Scale(a, f) => acc(*a, grad * *f),
            Op::AddScalar(a) => acc(*a, grad.clone()),
            Op::Relu(a) => {
                let av = self.value(*a);
                let mut g = grad.clone();
                g.zip_mut_with(av, |g, &x| {
                    if x <= 0.0 {
                        *g = 0.0
                    }
                });
                acc(*a, g);
            }
            Op::Exp(a) => acc(*a, grad * out),
            Op::Ln(a) => acc(*a, grad / self.value(*a)),
            Op::Tanh(a) => acc(*a, grad * &out.mapv(|t| 1.0 - t * t)),
            Op::Sqrt(a) => acc(*a, grad / &(out * 2.0)),
            Op::ClampMin(a, floor) => {
                let av = self.value(*a);
                let mut g = grad.clone();
                g.zip_mut_with(av, |g, &x| {
                    if x <= *floor {
                        *g = 0.0
                    }
                });
                acc(*a, g);
            }
            Op::ClampMax(a, ceil) => {
                let av = self.value(*a);
                let mut g = grad.clone();
                g.zip_mut_with(av, |g, &x| {
                    if x >= *ceil {
                        *g = 0.0
                    }
                });
                acc(*a, g);
            }
            Op::SumAll(a) => {
                let shape = self.shape(*a);
                acc(*a, Array2::from_elem(shape, grad[[0, 0]]));
            }
            Op::MeanAll(a) => {
                let shape = self.shape(*a);
                let n = (shape.0 * shape.1) as f64;
                acc(*a, Array2::from_elem(shape, grad[[0, 0]] / n));
            }
            Op::SumRows(a) => {
                let shape = self.shape(*a);
                acc(*a, grad.broadcast(shape).expect("broadcast").to_owned());
            }
            Op::MeanRows(a) => {
                let shape = self.shape(*a);
                let n = shape.0 as f64;
                acc(*a, grad.broadcast(shape).expect("broadcast").to_owned() / n);
            }
            Op::LogSumExpRows(a) => {
                // d lse / d x = softmax(x)
                let sm = softmax_rows(self.value(*a));
                acc(*a, sm * grad);
            }
            Op::SoftmaxRows(a) => {
                // dx = s * (g - sum(g * s))
                let dot = (grad * out).sum_axis(Axis(1)).insert_axis(Axis(1));
                acc(*a, out * &(grad - &dot));
            }
            Op::LogSoftmaxRows(a) => {
                // dx = g - softmax * sum(g)
                let sm = out.mapv(f64::exp);
                let total = grad.sum_axis(Axis(1)).insert_axis(Axis(1));
                acc(*a, grad - &(sm * &total));
            }
            Op::Transpose(a) => acc(*a, grad.t().to_owned()),
            Op::SelectRows(a, rows) => {
                let mut g = Array2::zeros(self.shape(*a));
                for (k, &r) in rows.iter().enumerate() {
                    let mut dst = g.row_mut(r);
                    dst += &grad.row(k);
                }
                acc(*a, g);
            }
            Op::SliceCols(a, start, end) => {
                let mut g = Array2::zeros(self.shape(*a));
                g.slice_mut(s![.., *start..*end]).assign(grad);
                acc(*a, g);
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let n = self.shape(p).0;
                    acc(p, grad.slice(s![offset..offset + n, ..]).to_owned());
                    offset += n;
                }
            }
            Op::Conv2d {
                input,
                weight,
                bias,
                geom,
            } => {
                let x = self.value(*input);
                let w = self.value(*weight);
                let n = x.nrows();
                let hw_out = geom.out_height() * geom.out_width();
                let mut dx = Array2::zeros(x.dim());
                let mut dw = Array2::zeros(w.dim());
                let mut db = Array2::zeros((1, geom.out_channels));
                for i in 0..n {
                    let dy = grad
                        .row(i)
                        .to_owned()
                        .into_shape_with_order((geom.out_channels, hw_out))
                        .expect("conv2d grad reshape");
                    db += &dy.sum_axis(Axis(1)).insert_axis(Axis(0));
                    let cols = im2col(x.row(i).as_slice().expect("contiguous"), geom);
                    dw += &dy.dot(&cols.t());
                    let dcols = w.t().dot(&dy);
                    col2im_add(
                        &dcols,
                        geom,
                        dx.row_mut(i).as_slice_mut().expect("contiguous"),
                    );
                }
                acc(*input, dx);
                acc(*weight, dw);
                acc(*bias, db);
            }
            Op::GlobalAvgPool { input, channels } => {
                let shape = self.shape(*input);
                let hw = shape.1 / channels;
                let mut g = Array2::zeros(shape);
                for i in 0..shape.0 {
                    for c in 0..*channels {
                        let v = grad[[i, c]] / hw as f64;
                        g.slice_mut(s![i, c * hw..(c + 1) * hw]).fill(v);
                    }
                }
                acc(*input, g);
            }
        }
    }
}

/// Row-wise log-sum-exp with max subtraction.
pub fn logsumexp_rows(x: &Array2<f64>) -> Array2<f64> {
    let mut out = Array2::zeros((x.nrows(), 1));
    for (i, row) in x.outer_iter().enumerate() {
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let s: f64 = row.iter().map(|&v| (v - m).exp()).sum();
        out[[i, 0]] = m + s.ln();
    }
    out
}

pub fn softmax_rows(x: &Array2<f64>) -> Array2<f64> {
    let lse = logsumexp_rows(x);
    let mut out = x - &lse;
    out.mapv_inplace(f64::exp);
    out
}

fn im2col(x: &[f64], geom: &ConvGeometry) -> Array2<f64> {
    let (ho, wo) = (geom.out_height(), geom.out_width());
    let k = geom.kernel;
    let mut cols = Array2::zeros((geom.patch_len(), ho * wo));
    for c in 0..geom.in_channels {
        for ky in 0..k {
            for kx in 0..k {
                let r = (c * k + ky) * k + kx;
                for oy in 0..ho {
                    let iy = (oy * geom.stride + ky) as isize - geom.padding as isize;
                    if iy < 0 || iy >= geom.height as isize {
                        continue;
                    }
                    for ox in 0..wo {
                        let ix = (ox * geom.stride + kx) as isize - geom.padding as isize;
                        if ix < 0 || ix >= geom.width as isize {
                            continue;
                        }
                        cols[[r, oy * wo + ox]] =
                            x[(c * geom.height + iy as usize) * geom.width + ix as usize];
                    }
                }
            }
        }
    }
    cols
}

fn col2im_add(cols: &Array2<f64>, geom: &ConvGeometry, dx: &mut [f64]) {
    let (ho, wo) = (geom.out_height(), geom.out_width());
    let k = geom.kernel;
    for c in 0..geom.in_channels {
        for ky in 0..k {
            for kx in 0..k {
                let r = (c * k + ky) * k + kx;
                for oy in 0..ho {
                    let iy = (oy * geom.stride + ky) as isize - geom.padding as isize;
                    if iy < 0 || iy >= geom.height as isize {
                        continue;
                    }
                    for ox in 0..wo {
                        let ix = (ox * geom.stride + kx) as isize - geom.padding as isize;
                        if ix < 0 || ix >= geom.width as isize {
                            continue;
                        }
                        dx[(c * geom.height + iy as usize) * geom.width + ix as usize] +=
                            cols[[r, oy * wo + ox]];
                    }
                }
            }
        }
    }
}

/// Central finite-difference check helpers shared by unit tests, the
/// acceptance suite and the gradient property tests.
pub mod check {
    use ndarray::Array2;

    /// Central difference of `f` at `x` for every entry.
    pub fn numeric_gradient<F>(x: &Array2<f64>, step: f64, mut f: F) -> Array2<f64>
    where
        F: FnMut(&Array2<f64>) -> f64,
    {
        let mut grad = Array2::zeros(x.dim());
        let mut probe = x.clone();
        for idx in 0..x.len() {
            let (r, c) = (idx / x.ncols(), idx % x.ncols());
            let orig = probe[[r, c]];
            probe[[r, c]] = orig + step;
            let hi = f(&probe);
            probe[[r, c]] = orig - step;
            let lo = f(&probe);
            probe[[r, c]] = orig;
            grad[[r, c]] = (hi - lo) / (2.0 * step);
        }
        grad
    }

    /// `|a - n| / max(|a|, |n|, floor)` using Euclidean norms over all entries.
    pub fn relative_error(analytic: &Array2<f64>, numeric: &Array2<f64>) -> f64 {
        let diff = (analytic - numeric).mapv(|v| v * v).sum().sqrt();
        let na = analytic.mapv(|v| v * v).sum().sqrt();
        let nn = numeric.mapv(|v| v * v).sum().sqrt();
        diff / na.max(nn).max(1e-8)
    }
}

#[cfg(test)]
mod tests {
    use super::check::{numeric_gradient, relative_error};
    use super::*;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Array2<f64> {
        Array2::from_shape_fn((r, c), |_| rng.random_range(-1.0..1.0))
    }

    fn check_unary<F>(x: Array2<f64>, build: F)
    where
        F: Fn(&mut Graph, Var) -> Var,
    {
        let mut g = Graph::new();
        let v = g.param(x.clone());
        let out = build(&mut g, v);
        let grads = g.backward(out);
        let numeric = numeric_gradient(&x, 1e-5, |p| {
            let mut g = Graph::new();
            let v = g.param(p.clone());
            let out = build(&mut g, v);
            g.scalar(out)
        });
        let err = relative_error(&grads.get(v), &numeric);
        assert!(err < 1e-6, "relative error {err}");
    }

    #[test]
    fn elementwise_and_reduction_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = random(&mut rng, 3, 4);
        check_unary(x.clone(), |g, v| {
            let e = g.exp(v);
            let t = g.tanh(e);
            g.sum(t)
        });
        check_unary(x.clone(), |g, v| {
            let s = g.log_softmax_rows(v);
            let sq = g.square(s);
            g.mean(sq)
        });
        check_unary(x.clone(), |g, v| {
            let s = g.softmax_rows(v);
            let l = g.logsumexp_rows(s);
            let t = g.transpose(v);
            let tt = g.sum_rows(t);
            let a = g.sum(l);
            let b = g.sum(tt);
            g.mul(a, b)
        });
        check_unary(x.mapv(|v| v.abs() + 0.5), |g, v| {
            let r = g.sqrt(v);
            let l = g.ln(r);
            let d = g.div(l, v);
            let m = g.mean_rows(d);
            g.sum(m)
        });
    }

    #[test]
    fn structural_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x = random(&mut rng, 4, 3);
        let w = random(&mut rng, 3, 2);
        check_unary(x.clone(), |g, v| {
            let wv = g.constant(w.clone());
            let y = g.matmul(v, wv);
            let a = g.select_rows(y, &[0, 2, 2]);
            let b = g.slice_rows(y, 1, 4);
            let c = g.concat_rows(&[a, b]);
            let d = g.slice_cols(c, 1, 2);
            let col = g.relu(d);
            let m = g.mul_col(c, col);
            g.sum(m)
        });
    }

    #[test]
    fn detach_blocks_gradient() {
        let mut g = Graph::new();
        let x = g.param(array![[1.0, 2.0]]);
        let d = g.detach(x);
        let y = g.mul(x, d);
        let s = g.sum(y);
        let grads = g.backward(s);
        // only the non-detached factor contributes: d(x * c)/dx = c
        assert_eq!(grads.get(x), array![[1.0, 2.0]]);
        assert!(grads.try_get(d).is_none());
    }

    #[test]
    fn conv_and_pool_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let geom = ConvGeometry {
            in_channels: 2,
            out_channels: 3,
            height: 5,
            width: 4,
            kernel: 3,
            stride: 2,
            padding: 1,
        };
        let x = random(&mut rng, 2, geom.in_len());
        let w = random(&mut rng, 3, 18);
        let b = random(&mut rng, 1, 3);
        let build = |g: &mut Graph, xv: Var, wv: Var, bv: Var| {
            let y = g.conv2d(xv, wv, bv, geom);
            let p = g.global_avg_pool(y, 3);
            let t = g.tanh(p);
            g.sum(t)
        };
        let mut g = Graph::new();
        let (xv, wv, bv) = (g.param(x.clone()), g.param(w.clone()), g.param(b.clone()));
        let out = build(&mut g, xv, wv, bv);
        let grads = g.backward(out);
        let nx = numeric_gradient(&x, 1e-5, |p| {
            let mut g = Graph::new();
            let (xv, wv, bv) = (g.param(p.clone()), g.param(w.clone()), g.param(b.clone()));
            let o = build(&mut g, xv, wv, bv);
            g.scalar(o)
        });
        let nw = numeric_gradient(&w, 1e-5, |p| {
            let mut g = Graph::new();
            let (xv, wv, bv) = (g.param(x.clone()), g.param(p.clone()), g.param(b.clone()));
            let o = build(&mut g, xv, wv, bv);
            g.scalar(o)
        });
        assert!(relative_error(&grads.get(xv), &nx) < 1e-6);
        assert!(relative_error(&grads.get(wv), &nw) < 1e-6);
    }

    #[test]
    fn conv_matches_direct_loop() {
        // 1 channel, 3x3 identity-centre kernel reproduces the input
        let geom = ConvGeometry {
            in_channels: 1,
            out_channels: 1,
            height: 3,
            width: 3,
            kernel: 3,
            stride: 1,
            padding: 1,
        };
        let mut kernel = Array2::zeros((1, 9));
        kernel[[0, 4]] = 1.0;
        let x = Array2::from_shape_fn((1, 9), |(_, j)| j as f64);
        let mut g = Graph::new();
        let (xv, wv, bv) = (
            g.constant(x.clone()),
            g.constant(kernel),
            g.constant(Array2::zeros((1, 1))),
        );
        let y = g.conv2d(xv, wv, bv, geom);
        assert_eq!(g.value(y), &x);
    }
}
