//! Reverse-mode automatic differentiation over [`Tensor`]s.
//!
//! A [`Graph`] records every operation eagerly as it is applied. Calling
//! [`Graph::backward`] on a single-element result walks the tape in reverse and
//! returns gradients for every node that depends on a gradient-tracking leaf.

use std::cell::RefCell;
use std::sync::Arc;

use crate::tensor::{Float, Tensor, Window};

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Linear { x: Var, w: Var, b: Option<Var> },
    Conv2d { x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize },
    ConvTranspose2d { x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize },
    MaxPool2d { x: Var, argmax: Vec<usize> },
    LeakyRelu { x: Var, slope: f64 },
    Sigmoid { x: Var },
    Exp { x: Var },
    Reshape { x: Var },
    Add { a: Var, b: Var },
    Mul { a: Var, b: Var },
    Affine { x: Var, scale: f64 },
    LogSoftmax { x: Var },
    LogClamped { x: Var, floor: f64 },
    WeightedSum { x: Var, weights: Tensor<T> },
    ConcatCols { a: Var, b: Var },
}

#[derive(Debug)]
struct Node<T> {
    value: Arc<Tensor<T>>,
    op: Op<T>,
    needs_grad: bool,
}

/// An eager computation tape.
#[derive(Debug, Default)]
pub struct Graph<T> {
    nodes: RefCell<Vec<Node<T>>>,
}

/// Gradients produced by [`Graph::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Float> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

/// Direct stride-1 kernels beat unfolding when few output channels are produced.
fn use_direct(win: &Window, cout: usize) -> bool {
    win.stride == 1 && cout <= 4
}

fn t<T: Float>(v: f64) -> T {
    T::from_f64_lossy(v)
}

impl<T: Float> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: RefCell::new(Vec::new()) }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value: Arc::new(value), op, needs_grad });
        Var(nodes.len() - 1)
    }

    fn needs(&self, vars: &[Var]) -> bool {
        let nodes = self.nodes.borrow();
        vars.iter().any(|v| nodes[v.0].needs_grad)
    }

    pub fn value(&self, v: Var) -> Arc<Tensor<T>> {
        Arc::clone(&self.nodes.borrow()[v.0].value)
    }

    pub fn shape(&self, v: Var) -> Vec<usize> {
        self.nodes.borrow()[v.0].value.shape().to_vec()
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// A leaf sharing storage with a parameter tensor.
    pub fn leaf(&self, value: Arc<Tensor<T>>, requires_grad: bool) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value, op: Op::Leaf, needs_grad: requires_grad });
        Var(nodes.len() - 1)
    }

    /// `x[N, in] * w[out, in]^T + b[out]`.
    pub fn linear(&self, x: Var, w: Var, b: Option<Var>) -> Var {
        let (xv, wv) = (self.value(x), self.value(w));
        let (n, fin) = (xv.rows(), xv.row_len());
        let fout = wv.rows();
        assert_eq!(wv.row_len(), fin, "linear: input width {fin} vs weight {:?}", wv.shape());
        let mut out = vec![T::zero(); n * fout];
        T::gemm(
            n, fin, fout, T::one(), xv.data(), fin as isize, 1, wv.data(), 1, fin as isize,
            T::zero(), &mut out, fout as isize, 1,
        );
        if let Some(b) = b {
            let bv = self.value(b);
            for row in out.chunks_mut(fout.max(1)) {
                for (o, &bb) in row.iter_mut().zip(bv.data()) {
                    *o = *o + bb;
                }
            }
        }
        let mut deps = vec![x, w];
        deps.extend(b);
        let needs = self.needs(&deps);
        self.push(Tensor::new([n, fout], out), Op::Linear { x, w, b }, needs)
    }

    /// 2-D convolution, `x[N, Cin, H, W]`, `w[Cout, Cin, k, k]`.
    pub fn conv2d(&self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Var {
        let (xv, wv) = (self.value(x), self.value(w));
        let (n, cin, h, wd) = dims4(&xv);
        let (cout, wcin, k, _) = dims4(&wv);
        assert_eq!(cin, wcin, "conv2d channel mismatch");
        let win = Window { channels: cin, height: h, width: wd, kernel: k, stride, pad };
        let (oh, ow) = (win.out_height(), win.out_width());
        let (ckk, hw) = (win.col_rows(), oh * ow);
        let mut cols = vec![T::zero(); ckk * hw];
        let mut out = vec![T::zero(); n * cout * hw];
        let bias = b.map(|b| self.value(b));
        let direct = use_direct(&win, cout);
        for s in 0..n {
            let dst = &mut out[s * cout * hw..(s + 1) * cout * hw];
            if direct {
                win.direct_forward(xv.row(s), wv.data(), cout, dst);
            } else {
                win.im2col(xv.row(s), &mut cols);
                T::gemm(
                    cout, ckk, hw, T::one(), wv.data(), ckk as isize, 1, &cols, hw as isize, 1,
                    T::zero(), dst, hw as isize, 1,
                );
            }
            if let Some(bv) = &bias {
                add_channel_bias(dst, bv.data(), hw);
            }
        }
        let mut deps = vec![x, w];
        deps.extend(b);
        let needs = self.needs(&deps);
        self.push(Tensor::new([n, cout, oh, ow], out), Op::Conv2d { x, w, b, stride, pad }, needs)
    }

    /// Transposed 2-D convolution, `x[N, Cin, H, W]`, `w[Cin, Cout, k, k]`.
    ///
    /// Output side is `(H - 1) * stride - 2 * pad + k`.
    pub fn conv_transpose2d(
        &self,
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        pad: usize,
    ) -> Var {
        let (xv, wv) = (self.value(x), self.value(w));
        let (n, cin, hi, wi) = dims4(&xv);
        let (wcin, cout, k, _) = dims4(&wv);
        assert_eq!(cin, wcin, "conv_transpose2d channel mismatch");
        let oh = (hi - 1) * stride + k - 2 * pad;
        let ow = (wi - 1) * stride + k - 2 * pad;
        let win = Window { channels: cout, height: oh, width: ow, kernel: k, stride, pad };
        debug_assert_eq!((win.out_height(), win.out_width()), (hi, wi));
        let (ckk, hwi) = (win.col_rows(), hi * wi);
        let mut cols = vec![T::zero(); ckk * hwi];
        let mut out = vec![T::zero(); n * cout * oh * ow];
        let bias = b.map(|b| self.value(b));
        for s in 0..n {
            T::gemm(
                ckk, cin, hwi, T::one(), wv.data(), 1, ckk as isize, xv.row(s), hwi as isize, 1,
                T::zero(), &mut cols, hwi as isize, 1,
            );
            let dst = &mut out[s * cout * oh * ow..(s + 1) * cout * oh * ow];
            win.col2im(&cols, dst);
            if let Some(bv) = &bias {
                add_channel_bias(dst, bv.data(), oh * ow);
            }
        }
        let mut deps = vec![x, w];
        deps.extend(b);
        let needs = self.needs(&deps);
        self.push(
            Tensor::new([n, cout, oh, ow], out),
            Op::ConvTranspose2d { x, w, b, stride, pad },
            needs,
        )
    }

    /// Non-overlapping `k x k` max pooling.
    pub fn max_pool2d(&self, x: Var, k: usize) -> Var {
        let xv = self.value(x);
        let (n, c, h, w) = dims4(&xv);
        let (oh, ow) = (h / k, w / k);
        let mut out = Vec::with_capacity(n * c * oh * ow);
        let mut argmax = Vec::with_capacity(n * c * oh * ow);
        let data = xv.data();
        for plane in 0..n * c {
            let base = plane * h * w;
            for y in 0..oh {
                for xx in 0..ow {
                    let mut best = base + y * k * w + xx * k;
                    for dy in 0..k {
                        for dx in 0..k {
                            let i = base + (y * k + dy) * w + xx * k + dx;
                            if data[i] > data[best] {
                                best = i;
                            }
                        }
                    }
                    out.push(data[best]);
                    argmax.push(best);
                }
            }
        }
        let needs = self.needs(&[x]);
        self.push(Tensor::new([n, c, oh, ow], out), Op::MaxPool2d { x, argmax }, needs)
    }

    pub fn leaky_relu(&self, x: Var, slope: f64) -> Var {
        let xv = self.value(x);
        let s: T = t(slope);
        let out = xv.data().iter().map(|&v| if v > T::zero() { v } else { v * s }).collect();
        let needs = self.needs(&[x]);
        self.push(Tensor::new(xv.shape(), out), Op::LeakyRelu { x, slope }, needs)
    }

    pub fn relu(&self, x: Var) -> Var {
        self.leaky_relu(x, 0.0)
    }

    pub fn sigmoid(&self, x: Var) -> Var {
        let xv = self.value(x);
        let out = xv.data().iter().map(|&v| T::one() / (T::one() + (-v).exp())).collect();
        let needs = self.needs(&[x]);
        self.push(Tensor::new(xv.shape(), out), Op::Sigmoid { x }, needs)
    }

    pub fn exp(&self, x: Var) -> Var {
        let xv = self.value(x);
        let out = xv.data().iter().map(|v| v.exp()).collect();
        let needs = self.needs(&[x]);
        self.push(Tensor::new(xv.shape(), out), Op::Exp { x }, needs)
    }

    /// Row-wise softmax of `x / temperature`.
    pub fn softmax(&self, x: Var, temperature: f64) -> Var {
        let scaled = if temperature == 1.0 { x } else { self.scale(x, 1.0 / temperature) };
        let ls = self.log_softmax(scaled);
        self.exp(ls)
    }

    pub fn reshape(&self, x: Var, shape: impl Into<Vec<usize>>) -> Var {
        let xv = self.value(x);
        let out = Tensor::clone(&xv).reshape(shape);
        let needs = self.needs(&[x]);
        self.push(out, Op::Reshape { x }, needs)
    }

    /// Flattens everything but the leading dimension.
    pub fn flatten(&self, x: Var) -> Var {
        let shape = self.shape(x);
        let rest: usize = shape.iter().skip(1).product();
        self.reshape(x, [shape[0], rest])
    }

    pub fn add(&self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(av.shape(), bv.shape(), "add: shape mismatch");
        let out = av.data().iter().zip(bv.data()).map(|(&x, &y)| x + y).collect();
        let needs = self.needs(&[a, b]);
        self.push(Tensor::new(av.shape(), out), Op::Add { a, b }, needs)
    }

    pub fn mul(&self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(av.shape(), bv.shape(), "mul: shape mismatch");
        let out = av.data().iter().zip(bv.data()).map(|(&x, &y)| x * y).collect();
        let needs = self.needs(&[a, b]);
        self.push(Tensor::new(av.shape(), out), Op::Mul { a, b }, needs)
    }

    /// `scale * x + shift`, elementwise.
    pub fn affine(&self, x: Var, scale: f64, shift: f64) -> Var {
        let xv = self.value(x);
        let (s, c): (T, T) = (t(scale), t(shift));
        let out = xv.data().iter().map(|&v| v * s + c).collect();
        let needs = self.needs(&[x]);
        self.push(Tensor::new(xv.shape(), out), Op::Affine { x, scale }, needs)
    }

    pub fn scale(&self, x: Var, scale: f64) -> Var {
        self.affine(x, scale, 0.0)
    }

    /// Row-wise log-softmax of a `[N, K]` matrix.
    pub fn log_softmax(&self, x: Var) -> Var {
        let xv = self.value(x);
        let k = xv.row_len().max(1);
        let mut out = Vec::with_capacity(xv.len());
        for row in xv.data().chunks(k) {
            let max = row.iter().cloned().fold(T::neg_infinity(), T::max);
            let lse = row.iter().fold(T::zero(), |acc, &v| acc + (v - max).exp()).ln() + max;
            out.extend(row.iter().map(|&v| v - lse));
        }
        let needs = self.needs(&[x]);
        self.push(Tensor::new(xv.shape(), out), Op::LogSoftmax { x }, needs)
    }

    /// `ln(max(x, floor))`; the gradient is zero where the floor is active.
    pub fn log_clamped(&self, x: Var, floor: f64) -> Var {
        let xv = self.value(x);
        let f: T = t(floor);
        let out = xv.data().iter().map(|&v| v.max(f).ln()).collect();
        let needs = self.needs(&[x]);
        self.push(Tensor::new(xv.shape(), out), Op::LogClamped { x, floor }, needs)
    }

    /// `sum_i weights_i * x_i`, a single-element result.
    pub fn weighted_sum(&self, x: Var, weights: Tensor<T>) -> Var {
        let xv = self.value(x);
        assert_eq!(xv.len(), weights.len(), "weighted_sum: length mismatch");
        let s = xv.data().iter().zip(weights.data()).fold(T::zero(), |acc, (&a, &b)| acc + a * b);
        let needs = self.needs(&[x]);
        self.push(Tensor::scalar(s), Op::WeightedSum { x, weights }, needs)
    }

    /// Mean of all entries.
    pub fn mean(&self, x: Var) -> Var {
        let n = self.value(x).len();
        let w = if n == 0 { 0.0 } else { 1.0 / n as f64 };
        self.weighted_sum(x, Tensor::full(self.shape(x), t(w)))
    }

    /// Concatenates two `[N, p]` and `[N, q]` matrices into `[N, p + q]`.
    pub fn concat_cols(&self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        let n = av.rows();
        assert_eq!(n, bv.rows(), "concat_cols: row mismatch");
        let (p, q) = (av.row_len(), bv.row_len());
        let mut out = Vec::with_capacity(n * (p + q));
        for i in 0..n {
            out.extend_from_slice(av.row(i));
            out.extend_from_slice(bv.row(i));
        }
        let needs = self.needs(&[a, b]);
        self.push(Tensor::new([n, p + q], out), Op::ConcatCols { a, b }, needs)
    }

    /// Reverse pass from a single-element `loss`.
    pub fn backward(&self, loss: Var) -> Gradients<T> {
        let nodes = self.nodes.borrow();
        let mut grads: Vec<Option<Tensor<T>>> = (0..nodes.len()).map(|_| None).collect();
        assert_eq!(nodes[loss.0].value.len(), 1, "backward needs a scalar loss");
        grads[loss.0] = Some(Tensor::full(nodes[loss.0].value.shape(), T::one()));

        for id in (0..=loss.0).rev() {
            let node = &nodes[id];
            if !node.needs_grad {
                continue;
            }
            let Some(gy) = grads[id].take() else { continue };
            let wants = |v: Var| nodes[v.0].needs_grad;
            let val = |v: Var| &nodes[v.0].value;
            match &node.op {
                Op::Leaf => {
                    grads[id] = Some(gy);
                    continue;
                }
                Op::Linear { x, w, b } => {
                    let (xv, wv) = (val(*x), val(*w));
                    let (n, fin, fout) = (xv.rows(), xv.row_len(), wv.rows());
                    if wants(*x) {
                        let mut dx = vec![T::zero(); n * fin];
                        T::gemm(
                            n, fout, fin, T::one(), gy.data(), fout as isize, 1, wv.data(),
                            fin as isize, 1, T::zero(), &mut dx, fin as isize, 1,
                        );
                        accumulate(&mut grads, *x, Tensor::new(xv.shape(), dx));
                    }
                    if wants(*w) {
                        let mut dw = vec![T::zero(); fout * fin];
                        T::gemm(
                            fout, n, fin, T::one(), gy.data(), 1, fout as isize, xv.data(),
                            fin as isize, 1, T::zero(), &mut dw, fin as isize, 1,
                        );
                        accumulate(&mut grads, *w, Tensor::new(wv.shape(), dw));
                    }
                    if let Some(b) = b.filter(|b| wants(*b)) {
                        let mut db = vec![T::zero(); fout];
                        for row in gy.data().chunks(fout.max(1)) {
                            for (d, &g) in db.iter_mut().zip(row) {
                                *d = *d + g;
                            }
                        }
                        accumulate(&mut grads, b, Tensor::new([fout], db));
                    }
                }
                Op::Conv2d { x, w, b, stride, pad } => {
                    let (xv, wv) = (val(*x), val(*w));
                    let (n, cin, h, wd) = dims4(xv);
                    let (cout, _, k, _) = dims4(wv);
                    let win =
                        Window { channels: cin, height: h, width: wd, kernel: k, stride: *stride, pad: *pad };
                    let (ckk, hw) = (win.col_rows(), win.col_cols());
                    let mut cols = vec![T::zero(); ckk * hw];
                    let mut dw = wants(*w).then(|| vec![T::zero(); cout * ckk]);
                    let mut dx = wants(*x).then(|| vec![T::zero(); xv.len()]);
                    let direct = use_direct(&win, cout);
                    for s in 0..n {
                        let dy = &gy.data()[s * cout * hw..(s + 1) * cout * hw];
                        if direct {
                            let per = cin * h * wd;
                            win.direct_backward(
                                xv.row(s),
                                wv.data(),
                                cout,
                                dy,
                                dx.as_mut().map(|d| &mut d[s * per..(s + 1) * per]),
                                dw.as_deref_mut(),
                            );
                            continue;
                        }
                        if let Some(dw) = dw.as_mut() {
                            win.im2col(xv.row(s), &mut cols);
                            T::gemm(
                                cout, hw, ckk, T::one(), dy, hw as isize, 1, &cols, 1,
                                hw as isize, T::one(), dw, ckk as isize, 1,
                            );
                        }
                        if let Some(dx) = dx.as_mut() {
                            T::gemm(
                                ckk, cout, hw, T::one(), wv.data(), 1, ckk as isize, dy,
                                hw as isize, 1, T::zero(), &mut cols, hw as isize, 1,
                            );
                            let per = cin * h * wd;
                            win.col2im(&cols, &mut dx[s * per..(s + 1) * per]);
                        }
                    }
                    if let Some(dw) = dw {
                        accumulate(&mut grads, *w, Tensor::new(wv.shape(), dw));
                    }
                    if let Some(dx) = dx {
                        accumulate(&mut grads, *x, Tensor::new(xv.shape(), dx));
                    }
                    if let Some(b) = b.filter(|b| wants(*b)) {
                        accumulate(&mut grads, b, channel_sums(&gy, cout, hw));
                    }
                }
                Op::ConvTranspose2d { x, w, b, stride, pad } => {
                    let (xv, wv) = (val(*x), val(*w));
                    let (n, cin, hi, wi) = dims4(xv);
                    let (_, cout, k, _) = dims4(wv);
                    let (oh, ow) = (gy.shape()[2], gy.shape()[3]);
                    let win =
                        Window { channels: cout, height: oh, width: ow, kernel: k, stride: *stride, pad: *pad };
                    let (ckk, hwi) = (win.col_rows(), hi * wi);
                    let mut cols = vec![T::zero(); ckk * hwi];
                    let mut dw = wants(*w).then(|| vec![T::zero(); cin * ckk]);
                    let mut dx = wants(*x).then(|| vec![T::zero(); xv.len()]);
                    for s in 0..n {
                        win.im2col(gy.row(s), &mut cols);
                        if let Some(dx) = dx.as_mut() {
                            T::gemm(
                                cin, ckk, hwi, T::one(), wv.data(), ckk as isize, 1, &cols,
                                hwi as isize, 1, T::zero(), &mut dx[s * cin * hwi..(s + 1) * cin * hwi],
                                hwi as isize, 1,
                            );
                        }
                        if let Some(dw) = dw.as_mut() {
                            T::gemm(
                                cin, hwi, ckk, T::one(), xv.row(s), hwi as isize, 1, &cols, 1,
                                hwi as isize, T::one(), dw, ckk as isize, 1,
                            );
                        }
                    }
                    if let Some(dw) = dw {
                        accumulate(&mut grads, *w, Tensor::new(wv.shape(), dw));
                    }
                    if let Some(dx) = dx {
                        accumulate(&mut grads, *x, Tensor::new(xv.shape(), dx));
                    }
                    if let Some(b) = b.filter(|b| wants(*b)) {
                        accumulate(&mut grads, b, channel_sums(&gy, cout, oh * ow));
                    }
                }
                Op::MaxPool2d { x, argmax } => {
                    let mut dx = vec![T::zero(); val(*x).len()];
                    for (&i, &g) in argmax.iter().zip(gy.data()) {
                        dx[i] = dx[i] + g;
                    }
                    accumulate(&mut grads, *x, Tensor::new(val(*x).shape(), dx));
                }
                Op::LeakyRelu { x, slope } => {
                    let s: T = t(*slope);
                    let dx = val(*x)
                        .data()
                        .iter()
                        .zip(gy.data())
                        .map(|(&v, &g)| if v > T::zero() { g } else { g * s })
                        .collect();
                    accumulate(&mut grads, *x, Tensor::new(gy.shape(), dx));
                }
                Op::Exp { x } => {
                    let dx = node.value.data().iter().zip(gy.data()).map(|(&y, &g)| g * y).collect();
                    accumulate(&mut grads, *x, Tensor::new(gy.shape(), dx));
                }
                Op::Sigmoid { x } => {
                    let dx = node
                        .value
                        .data()
                        .iter()
                        .zip(gy.data())
                        .map(|(&y, &g)| g * y * (T::one() - y))
                        .collect();
                    accumulate(&mut grads, *x, Tensor::new(gy.shape(), dx));
                }
                Op::Reshape { x } => {
                    accumulate(&mut grads, *x, gy.reshape(val(*x).shape()));
                }
                Op::Add { a, b } => {
                    if wants(*a) {
                        accumulate(&mut grads, *a, gy.clone());
                    }
                    if wants(*b) {
                        accumulate(&mut grads, *b, gy);
                    }
                }
                Op::Mul { a, b } => {
                    if wants(*a) {
                        let d = gy.data().iter().zip(val(*b).data()).map(|(&g, &v)| g * v).collect();
                        accumulate(&mut grads, *a, Tensor::new(gy.shape(), d));
                    }
                    if wants(*b) {
                        let d = gy.data().iter().zip(val(*a).data()).map(|(&g, &v)| g * v).collect();
                        accumulate(&mut grads, *b, Tensor::new(gy.shape(), d));
                    }
                }
                Op::Affine { x, scale } => {
                    let s: T = t(*scale);
                    let d = gy.data().iter().map(|&g| g * s).collect();
                    accumulate(&mut grads, *x, Tensor::new(gy.shape(), d));
                }
                Op::LogSoftmax { x } => {
                    let k = gy.row_len().max(1);
                    let mut dx = Vec::with_capacity(gy.len());
                    for (g, y) in gy.data().chunks(k).zip(node.value.data().chunks(k)) {
                        let gs = g.iter().fold(T::zero(), |acc, &v| acc + v);
                        dx.extend(g.iter().zip(y).map(|(&gi, &yi)| gi - yi.exp() * gs));
                    }
                    accumulate(&mut grads, *x, Tensor::new(gy.shape(), dx));
                }
                Op::LogClamped { x, floor } => {
                    let f: T = t(*floor);
                    let dx = val(*x)
                        .data()
                        .iter()
                        .zip(gy.data())
                        .map(|(&v, &g)| if v > f { g / v } else { T::zero() })
                        .collect();
                    accumulate(&mut grads, *x, Tensor::new(gy.shape(), dx));
                }
                Op::WeightedSum { x, weights } => {
                    let g = gy.data()[0];
                    let dx = weights.data().iter().map(|&w| w * g).collect();
                    accumulate(&mut grads, *x, Tensor::new(val(*x).shape(), dx));
                }
                Op::ConcatCols { a, b } => {
                    let (p, q) = (val(*a).row_len(), val(*b).row_len());
                    let n = gy.rows();
                    if wants(*a) {
                        let mut d = Vec::with_capacity(n * p);
                        for i in 0..n {
                            d.extend_from_slice(&gy.row(i)[..p]);
                        }
                        accumulate(&mut grads, *a, Tensor::new([n, p], d));
                    }
                    if wants(*b) {
                        let mut d = Vec::with_capacity(n * q);
                        for i in 0..n {
                            d.extend_from_slice(&gy.row(i)[p..]);
                        }
                        accumulate(&mut grads, *b, Tensor::new([n, q], d));
                    }
                }
            }
        }
        Gradients { grads }
    }
}

fn dims4<T: Float>(t: &Tensor<T>) -> (usize, usize, usize, usize) {
    match *t.shape() {
        [a, b, c, d] => (a, b, c, d),
        ref s => panic!("expected a 4-D tensor, got {s:?}"),
    }
}

fn add_channel_bias<T: Float>(dst: &mut [T], bias: &[T], plane: usize) {
    for (c, chunk) in dst.chunks_mut(plane).enumerate() {
        let b = bias[c];
        for v in chunk {
            *v = *v + b;
        }
    }
}

fn channel_sums<T: Float>(gy: &Tensor<T>, channels: usize, plane: usize) -> Tensor<T> {
    let mut db = vec![T::zero(); channels];
    for (i, chunk) in gy.data().chunks(plane).enumerate() {
        let c = i % channels;
        db[c] = chunk.iter().fold(db[c], |acc, &v| acc + v);
    }
    Tensor::new([channels], db)
}

fn accumulate<T: Float>(grads: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>) {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot => *slot = Some(g),
    }
}
