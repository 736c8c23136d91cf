//! Reverse-mode tape.
//!
//! Every op appends one node whose inputs have strictly smaller ids, so the
//! node vector is already in topological order and backward walks it in reverse.

use crate::error::AutodiffError;
use crate::kernels::conv::{self, ConvGeom};
use crate::kernels::norm::{self, BnContext};
use crate::real::{gemm, Real};
use crate::tensor::Tensor;
use rand::Rng;

/// Probability clamp used by the log-likelihood losses.
pub const PROB_CLAMP: f64 = 1e-7;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Conv2d { x: Var, w: Var, b: Var, geom: ConvGeom },
    ConvTranspose2d { x: Var, w: Var, b: Var, geom: ConvGeom },
    BatchNorm { x: Var, gamma: Var, beta: Var, ctx: BnContext<T> },
    Dense { x: Var, w: Var, b: Var },
    Relu { x: Var },
    Sigmoid { x: Var },
    Softmax { x: Var },
    Dropout { x: Var, mask: Vec<T> },
    Reshape { x: Var },
    Add { a: Var, b: Var },
    Scale { x: Var, factor: T },
    MulConst { x: Var, factor: Tensor<T> },
    Sum { x: Var },
    Bce { pred: Var, target: Tensor<T> },
    SmoothL1 { pred: Var, target: Tensor<T> },
    CrossEntropy { probs: Var, classes: Vec<usize> },
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
    /// Accumulated gradient; only populated for leaves.
    grad: Option<Tensor<T>>,
}

/// Ordered record of forward ops.
#[derive(Debug, Default)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    /// Gradient accumulated on a leaf by [`Tape::backward`].
    pub fn grad(&self, v: Var) -> Option<&Tensor<T>> {
        self.nodes[v.0].grad.as_ref()
    }

    pub fn take_grad(&mut self, v: Var) -> Option<Tensor<T>> {
        self.nodes[v.0].grad.take()
    }

    pub fn zero_grad(&mut self) {
        for node in &mut self.nodes {
            node.grad = None;
        }
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    /// Leaf that receives a gradient (a parameter).
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: true,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    /// Leaf that does not receive a gradient (data).
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: false,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, stride: usize, padding: usize) -> Var {
        let k = self.value(w).shape()[2];
        let geom = ConvGeom::new(k, stride, padding);
        let y = conv::conv2d_forward(self.value(x), self.value(w), self.value(b), geom);
        self.push(y, Op::Conv2d { x, w, b, geom }, &[x, w, b])
    }

    pub fn conv_transpose2d(&mut self, x: Var, w: Var, b: Var, stride: usize, output_padding: usize) -> Var {
        let k = self.value(w).shape()[2];
        let geom = ConvGeom::new(k, stride, 0);
        let y = conv::conv_transpose2d_forward(self.value(x), self.value(w), self.value(b), geom, output_padding);
        self.push(y, Op::ConvTranspose2d { x, w, b, geom }, &[x, w, b])
    }

    /// Per-channel batch normalization. Train mode normalizes with batch
    /// statistics and updates the running buffers; eval mode uses the buffers.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        running_mean: &mut [T],
        running_var: &mut [T],
        mode: Mode,
    ) -> Result<Var, AutodiffError> {
        let xv = self.value(x);
        let (n, c, h, w) = xv.dims4();
        if self.value(gamma).len() != c || self.value(beta).len() != c || running_mean.len() != c {
            return Err(AutodiffError::ShapeMismatch {
                op: "batch_norm",
                detail: format!("{} channels vs affine/running length {}", c, self.value(gamma).len()),
            });
        }
        let (y, ctx) = match mode {
            Mode::Train => {
                if n * h * w < 2 {
                    return Err(AutodiffError::BatchTooSmall(n * h * w));
                }
                let (y, ctx, stats) = norm::forward_train(xv, self.value(gamma).data(), self.value(beta).data());
                norm::update_running(&stats, running_mean, running_var);
                (y, ctx)
            }
            Mode::Eval => norm::forward_eval(
                xv,
                self.value(gamma).data(),
                self.value(beta).data(),
                running_mean,
                running_var,
            ),
        };
        Ok(self.push(y, Op::BatchNorm { x, gamma, beta, ctx }, &[x, gamma, beta]))
    }

    /// `x` (N×F_in) · `w`ᵀ (F_out×F_in) + `b`.
    pub fn dense(&mut self, x: Var, w: Var, b: Var) -> Var {
        let (xv, wv, bv) = (self.value(x), self.value(w), self.value(b));
        assert_eq!(xv.shape().len(), 2, "dense input must be N×F");
        let (n, fin) = (xv.shape()[0], xv.shape()[1]);
        assert_eq!(wv.shape(), &[wv.shape()[0], fin], "dense weight must be F_out×F_in");
        let fout = wv.shape()[0];
        assert_eq!(bv.shape(), &[fout], "dense bias length");
        let mut data = Vec::with_capacity(n * fout);
        for _ in 0..n {
            data.extend_from_slice(bv.data());
        }
        gemm(false, true, n, fout, fin, T::one(), xv.data(), wv.data(), T::one(), &mut data);
        let y = Tensor::from_vec(&[n, fout], data).expect("dense output shape");
        self.push(y, Op::Dense { x, w, b }, &[x, w, b])
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let y = self.value(x).map(|v| if v > T::zero() { v } else { T::zero() });
        self.push(y, Op::Relu { x }, &[x])
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let y = self.value(x).map(|v| {
            if v >= T::zero() {
                T::one() / (T::one() + (-v).exp())
            } else {
                let e = v.exp();
                e / (T::one() + e)
            }
        });
        self.push(y, Op::Sigmoid { x }, &[x])
    }

    /// Softmax over the last dimension of an N×K tensor.
    pub fn softmax(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let k = *xv.shape().last().expect("softmax on empty shape");
        let mut y = xv.clone();
        for row in y.data_mut().chunks_mut(k) {
            let max = row.iter().fold(T::neg_infinity(), |a, &v| a.max(v));
            let mut total = T::zero();
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                total = total + *v;
            }
            for v in row.iter_mut() {
                *v = *v / total;
            }
        }
        self.push(y, Op::Softmax { x }, &[x])
    }

    /// Inverted dropout; eval mode returns `x` itself.
    pub fn dropout<R: Rng + ?Sized>(&mut self, x: Var, p: f64, mode: Mode, rng: &mut R) -> Var {
        assert!((0.0..1.0).contains(&p), "dropout probability must be in [0, 1)");
        if mode == Mode::Eval || p == 0.0 {
            return x;
        }
        let keep = T::cast(1.0 / (1.0 - p));
        let mask: Vec<T> = (0..self.value(x).len())
            .map(|_| if rng.gen::<f64>() < p { T::zero() } else { keep })
            .collect();
        let xv = self.value(x);
        let mut y = xv.clone();
        for (v, &m) in y.data_mut().iter_mut().zip(&mask) {
            *v = *v * m;
        }
        self.push(y, Op::Dropout { x, mask }, &[x])
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Var {
        let y = self.value(x).clone().reshape(shape);
        self.push(y, Op::Reshape { x }, &[x])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let mut y = self.value(a).clone();
        y.add_assign(self.value(b));
        self.push(y, Op::Add { a, b }, &[a, b])
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let f = T::cast(factor);
        let y = self.value(x).map(|v| v * f);
        self.push(y, Op::Scale { x, factor: f }, &[x])
    }

    /// Elementwise product with a constant tensor of the same shape.
    pub fn mul_const(&mut self, x: Var, factor: &Tensor<T>) -> Var {
        let xv = self.value(x);
        assert_eq!(xv.shape(), factor.shape(), "mul_const shape mismatch");
        let mut y = xv.clone();
        for (v, &f) in y.data_mut().iter_mut().zip(factor.data()) {
            *v = *v * f;
        }
        self.push(
            y,
            Op::MulConst {
                x,
                factor: factor.clone(),
            },
            &[x],
        )
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let y = Tensor::scalar(self.value(x).sum());
        self.push(y, Op::Sum { x }, &[x])
    }

    /// Mean Bernoulli negative log-likelihood of `target` under probabilities `pred`.
    pub fn bce(&mut self, pred: Var, target: &Tensor<T>) -> Var {
        let pv = self.value(pred);
        assert_eq!(pv.shape(), target.shape(), "bce shape mismatch");
        let lo = T::cast(PROB_CLAMP);
        let hi = T::one() - lo;
        let total = pv
            .data()
            .iter()
            .zip(target.data())
            .fold(T::zero(), |acc, (&p, &t)| {
                let p = p.max(lo).min(hi);
                acc - (t * p.ln() + (T::one() - t) * (T::one() - p).ln())
            });
        let y = Tensor::scalar(total / T::cast(pv.len() as f64));
        self.push(
            y,
            Op::Bce {
                pred,
                target: target.clone(),
            },
            &[pred],
        )
    }

    /// Mean smooth-L1 (Huber, beta = 1).
    pub fn smooth_l1(&mut self, pred: Var, target: &Tensor<T>) -> Var {
        let pv = self.value(pred);
        assert_eq!(pv.len(), target.len(), "smooth_l1 length mismatch");
        let half = T::cast(0.5);
        let total = pv.data().iter().zip(target.data()).fold(T::zero(), |acc, (&p, &t)| {
            let d = (p - t).abs();
            acc + if d < T::one() { half * d * d } else { d - half }
        });
        let y = Tensor::scalar(total / T::cast(pv.len() as f64));
        self.push(
            y,
            Op::SmoothL1 {
                pred,
                target: target.clone(),
            },
            &[pred],
        )
    }

    /// Mean negative log-probability of the labelled class; `probs` is N×K.
    pub fn cross_entropy(&mut self, probs: Var, classes: &[usize]) -> Var {
        let pv = self.value(probs);
        let (n, k) = (pv.shape()[0], pv.shape()[1]);
        assert_eq!(classes.len(), n, "one class label per row");
        let lo = T::cast(PROB_CLAMP);
        let total = classes.iter().enumerate().fold(T::zero(), |acc, (row, &cls)| {
            assert!(cls < k, "class {} out of range", cls);
            acc - pv.data()[row * k + cls].max(lo).ln()
        });
        let y = Tensor::scalar(total / T::cast(n as f64));
        self.push(
            y,
            Op::CrossEntropy {
                probs,
                classes: classes.to_vec(),
            },
            &[probs],
        )
    }

    /// Accumulates d`loss`/d(leaf) into every gradient-requiring leaf.
    ///
    /// Gradients add onto whatever is already stored, so calling this twice
    /// without [`Tape::zero_grad`] doubles them.
    pub fn backward(&mut self, loss: Var) -> Result<(), AutodiffError> {
        let lv = self.value(loss);
        if !lv.is_scalar() {
            return Err(AutodiffError::NonScalarLoss(lv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::ones(lv.shape()));
        for id in (0..=loss.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            if !self.nodes[id].requires_grad {
                continue;
            }
            if let Op::Leaf = self.nodes[id].op {
                match self.nodes[id].grad.as_mut() {
                    Some(acc) => acc.add_assign(&g),
                    None => self.nodes[id].grad = Some(g),
                }
                continue;
            }
            for (input, contrib) in self.local_grads(id, &g) {
                if !self.nodes[input.0].requires_grad {
                    continue;
                }
                match grads[input.0].as_mut() {
                    Some(acc) => acc.add_assign(&contrib),
                    None => grads[input.0] = Some(contrib),
                }
            }
        }
        Ok(())
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Vector-Jacobian products of node `id` for upstream gradient `g`.
    fn local_grads(&self, id: usize, g: &Tensor<T>) -> Vec<(Var, Tensor<T>)> {
        let node = &self.nodes[id];
        match &node.op {
            Op::Leaf => Vec::new(),
            Op::Conv2d { x, w, b, geom } => {
                let (dx, dw, db) =
                    conv::conv2d_backward(self.value(*x), self.value(*w), g, *geom, self.needs(*x));
                let mut out = vec![(*w, dw), (*b, db)];
                if let Some(dx) = dx {
                    out.push((*x, dx));
                }
                out
            }
            Op::ConvTranspose2d { x, w, b, geom } => {
                let (dx, dw, db) =
                    conv::conv_transpose2d_backward(self.value(*x), self.value(*w), g, *geom, self.needs(*x));
                let mut out = vec![(*w, dw), (*b, db)];
                if let Some(dx) = dx {
                    out.push((*x, dx));
                }
                out
            }
            Op::BatchNorm { x, gamma, beta, ctx } => {
                let (dx, dg, db) = norm::backward(g, self.value(*gamma).data(), ctx);
                let c = dg.len();
                vec![
                    (*x, dx),
                    (*gamma, Tensor::from_vec(&[c], dg).expect("bn gamma grad")),
                    (*beta, Tensor::from_vec(&[c], db).expect("bn beta grad")),
                ]
            }
            Op::Dense { x, w, b } => {
                let (xv, wv) = (self.value(*x), self.value(*w));
                let (n, fin) = (xv.shape()[0], xv.shape()[1]);
                let fout = wv.shape()[0];
                let mut dw = Tensor::zeros(wv.shape());
                gemm(true, false, fout, fin, n, T::one(), g.data(), xv.data(), T::zero(), dw.data_mut());
                let mut db = Tensor::zeros(&[fout]);
                for row in g.data().chunks(fout) {
                    for (d, &v) in db.data_mut().iter_mut().zip(row) {
                        *d = *d + v;
                    }
                }
                let mut out = vec![(*w, dw), (*b, db)];
                if self.needs(*x) {
                    let mut dx = Tensor::zeros(xv.shape());
                    gemm(false, false, n, fin, fout, T::one(), g.data(), wv.data(), T::zero(), dx.data_mut());
                    out.push((*x, dx));
                }
                out
            }
            Op::Relu { x } => {
                let mut dx = g.clone();
                for (d, &v) in dx.data_mut().iter_mut().zip(node.value.data()) {
                    if v <= T::zero() {
                        *d = T::zero();
                    }
                }
                vec![(*x, dx)]
            }
            Op::Sigmoid { x } => {
                let mut dx = g.clone();
                for (d, &y) in dx.data_mut().iter_mut().zip(node.value.data()) {
                    *d = *d * y * (T::one() - y);
                }
                vec![(*x, dx)]
            }
            Op::Softmax { x } => {
                let k = *node.value.shape().last().unwrap();
                let mut dx = g.clone();
                for (drow, yrow) in dx.data_mut().chunks_mut(k).zip(node.value.data().chunks(k)) {
                    let dot = drow.iter().zip(yrow).fold(T::zero(), |a, (&d, &y)| a + d * y);
                    for (d, &y) in drow.iter_mut().zip(yrow) {
                        *d = y * (*d - dot);
                    }
                }
                vec![(*x, dx)]
            }
            Op::Dropout { x, mask } => {
                let mut dx = g.clone();
                for (d, &m) in dx.data_mut().iter_mut().zip(mask) {
                    *d = *d * m;
                }
                vec![(*x, dx)]
            }
            Op::Reshape { x } => vec![(*x, g.clone().reshape(self.value(*x).shape()))],
            Op::Add { a, b } => vec![(*a, g.clone()), (*b, g.clone())],
            Op::Scale { x, factor } => vec![(*x, g.map(|v| v * *factor))],
            Op::MulConst { x, factor } => {
                let mut dx = g.clone();
                for (d, &f) in dx.data_mut().iter_mut().zip(factor.data()) {
                    *d = *d * f;
                }
                vec![(*x, dx)]
            }
            Op::Sum { x } => vec![(*x, Tensor::full(self.value(*x).shape(), g.data()[0]))],
            Op::Bce { pred, target } => {
                let pv = self.value(*pred);
                let lo = T::cast(PROB_CLAMP);
                let hi = T::one() - lo;
                let scale = g.data()[0] / T::cast(pv.len() as f64);
                let mut dp = Tensor::zeros(pv.shape());
                for ((d, &p), &t) in dp.data_mut().iter_mut().zip(pv.data()).zip(target.data()) {
                    *d = if p < lo || p > hi {
                        T::zero()
                    } else {
                        scale * (p - t) / (p * (T::one() - p))
                    };
                }
                vec![(*pred, dp)]
            }
            Op::SmoothL1 { pred, target } => {
                let pv = self.value(*pred);
                let scale = g.data()[0] / T::cast(pv.len() as f64);
                let mut dp = Tensor::zeros(pv.shape());
                for ((d, &p), &t) in dp.data_mut().iter_mut().zip(pv.data()).zip(target.data()) {
                    let diff = p - t;
                    let slope = if diff.abs() < T::one() { diff } else { diff.signum() };
                    *d = scale * slope;
                }
                vec![(*pred, dp)]
            }
            Op::CrossEntropy { probs, classes } => {
                let pv = self.value(*probs);
                let k = pv.shape()[1];
                let lo = T::cast(PROB_CLAMP);
                let scale = g.data()[0] / T::cast(classes.len() as f64);
                let mut dp = Tensor::zeros(pv.shape());
                for (row, &cls) in classes.iter().enumerate() {
                    let p = pv.data()[row * k + cls];
                    if p >= lo {
                        dp.data_mut()[row * k + cls] = -scale / p;
                    }
                }
                vec![(*probs, dp)]
            }
        }
    }
}
