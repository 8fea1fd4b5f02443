//! Tape-based reverse-mode differentiation over dense tensors.
//!
//! Every op appends a node to the tape, so node ids are already a
//! topological order; `backward` walks them once from the loss down.
//! Nodes only record gradients when some ancestor is a trainable leaf,
//! which makes forward passes through frozen (key-branch) parameters free
//! of any backward bookkeeping.

use std::cell::{Cell, Ref, RefCell};
use std::collections::HashMap;

use ndarray::{
    concatenate, linalg::general_mat_mul, Array, Array2, ArrayD, ArrayView2, ArrayViewD, Axis, Dimension, Ix2, Ix3, Ix4,
    Ix5, Ix6, IxDyn, Slice,
};

use crate::error::{Error, Result};
use crate::tensor::{lit, Scalar, Tensor};

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LeafKind {
    Trainable,
    Frozen,
    Constant,
}

#[derive(Clone, Debug)]
enum Op<T> {
    Leaf(LeafKind),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Affine { x: Var, scale: T },
    MatMul(Var, Var),
    Relu(Var),
    Sigmoid(Var),
    Exp(Var),
    Log(Var),
    SumAll(Var),
    MeanAll(Var),
    SumAxis(Var, usize),
    MeanAxis(Var, usize),
    Reshape(Var),
    Permute(Var, Vec<usize>),
    Softmax(Var),
    LogSumExp(Var),
    L2Normalize(Var),
    Concat(Vec<Var>, usize),
    TemporalUnfold { x: Var, kernel: usize, stride: usize, pad: usize },
}

impl<T> Op<T> {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf(_) => "leaf",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Affine { .. } => "affine",
            Op::MatMul(..) => "matmul",
            Op::Relu(_) => "relu",
            Op::Sigmoid(_) => "sigmoid",
            Op::Exp(_) => "exp",
            Op::Log(_) => "log",
            Op::SumAll(_) => "sum",
            Op::MeanAll(_) => "mean",
            Op::SumAxis(..) => "sum_axis",
            Op::MeanAxis(..) => "mean_axis",
            Op::Reshape(_) => "reshape",
            Op::Permute(..) => "permute",
            Op::Softmax(_) => "softmax",
            Op::LogSumExp(_) => "logsumexp",
            Op::L2Normalize(_) => "l2_normalize",
            Op::Concat(..) => "concat",
            Op::TemporalUnfold { .. } => "temporal_unfold",
        }
    }
}

struct Node<T> {
    value: ArrayD<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Recording of one forward computation.
pub struct Graph<T: Scalar> {
    nodes: RefCell<Vec<Node<T>>>,
    check_finite: bool,
    fault: Cell<Option<(usize, &'static str)>>,
    /// Node ids produced by [`Graph::detach`], in call order.
    detached: RefCell<Vec<usize>>,
    /// Values handed out by `detach` instead of the live ones.
    pinned: Option<Vec<ArrayD<T>>>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Norms below this are rejected by [`Graph::l2_normalize`].
pub const MIN_NORM: f64 = 1e-12;

impl<T: Scalar> Graph<T> {
    /// Finite-value checking is on in debug builds.
    pub fn new() -> Self {
        Self::with_finite_checks(cfg!(debug_assertions))
    }

    pub fn with_finite_checks(check_finite: bool) -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
            check_finite,
            fault: Cell::new(None),
            detached: RefCell::new(Vec::new()),
            pinned: None,
        }
    }

    /// A graph whose `i`-th [`Graph::detach`] call yields `values[i]`
    /// rather than the value of its argument. Replaying the detached
    /// values of a reference pass this way keeps stop-gradient inputs
    /// fixed while other inputs are perturbed.
    pub fn with_pinned_detached(check_finite: bool, values: Vec<ArrayD<T>>) -> Self {
        Self { pinned: Some(values), ..Self::with_finite_checks(check_finite) }
    }

    /// Values produced by every `detach` call so far, in call order.
    pub fn detached_values(&self) -> Vec<ArrayD<T>> {
        let nodes = self.nodes.borrow();
        self.detached.borrow().iter().map(|&id| nodes[id].value.clone()).collect()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// First op that produced a NaN/Inf, if any.
    pub fn fault(&self) -> Option<Error> {
        self.fault.get().map(|(node, op)| Error::NonFinite { op, node })
    }

    fn push(&self, value: ArrayD<T>, op: Op<T>, requires_grad: bool) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        let id = nodes.len();
        if self.check_finite && self.fault.get().is_none() && !value.iter().all(|v| v.is_finite()) {
            self.fault.set(Some((id, op.name())));
        }
        nodes.push(Node { value, op, requires_grad });
        Var(id)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes.borrow()[v.0].requires_grad
    }

    fn leaf(&self, t: &Tensor<T>, kind: LeafKind) -> Var {
        self.push(t.array().clone(), Op::Leaf(kind), kind == LeafKind::Trainable)
    }

    pub fn param(&self, t: &Tensor<T>) -> Var {
        self.leaf(t, LeafKind::Trainable)
    }

    /// A parameter that participates in the forward pass but never receives gradient.
    pub fn frozen(&self, t: &Tensor<T>) -> Var {
        self.leaf(t, LeafKind::Frozen)
    }

    pub fn constant(&self, t: &Tensor<T>) -> Var {
        self.leaf(t, LeafKind::Constant)
    }

    pub fn constant_array(&self, a: ArrayD<T>) -> Var {
        self.push(a, Op::Leaf(LeafKind::Constant), false)
    }

    /// Copies the value of `v` into a new constant, cutting the gradient path.
    pub fn detach(&self, v: Var) -> Var {
        let index = self.detached.borrow().len();
        let value = match self.pinned.as_ref().and_then(|p| p.get(index)) {
            Some(pinned) => {
                assert_eq!(pinned.shape(), self.value(v).shape(), "pinned detach {index} has the wrong shape");
                pinned.clone()
            }
            None => self.nodes.borrow()[v.0].value.clone(),
        };
        let out = self.constant_array(value);
        self.detached.borrow_mut().push(out.0);
        out
    }

    pub fn value(&self, v: Var) -> Ref<'_, ArrayD<T>> {
        Ref::map(self.nodes.borrow(), |n| &n[v.0].value)
    }

    pub fn tensor(&self, v: Var) -> Tensor<T> {
        Tensor::from_array(self.value(v).clone())
    }

    pub fn shape(&self, v: Var) -> Vec<usize> {
        self.value(v).shape().to_vec()
    }

    pub fn scalar(&self, v: Var) -> T {
        let value = self.value(v);
        assert_eq!(value.len(), 1, "scalar() on a tensor of shape {:?}", value.shape());
        *value.iter().next().unwrap()
    }

    pub fn leaf_kind(&self, v: Var) -> Option<LeafKind> {
        match self.nodes.borrow()[v.0].op {
            Op::Leaf(kind) => Some(kind),
            _ => None,
        }
    }

    fn unary(&self, x: Var, op: Op<T>, f: impl FnOnce(&ArrayD<T>) -> ArrayD<T>) -> Var {
        let value = f(&self.value(x));
        let rg = self.rg(x);
        self.push(value, op, rg)
    }

    // -- elementwise ---------------------------------------------------

    pub fn add(&self, a: Var, b: Var) -> Var {
        let value = {
            let nodes = self.nodes.borrow();
            &nodes[a.0].value + &nodes[b.0].value
        };
        let rg = self.rg(a) || self.rg(b);
        self.push(value, Op::Add(a, b), rg)
    }

    pub fn sub(&self, a: Var, b: Var) -> Var {
        let value = {
            let nodes = self.nodes.borrow();
            &nodes[a.0].value - &nodes[b.0].value
        };
        let rg = self.rg(a) || self.rg(b);
        self.push(value, Op::Sub(a, b), rg)
    }

    pub fn mul(&self, a: Var, b: Var) -> Var {
        let value = {
            let nodes = self.nodes.borrow();
            &nodes[a.0].value * &nodes[b.0].value
        };
        let rg = self.rg(a) || self.rg(b);
        self.push(value, Op::Mul(a, b), rg)
    }

    /// `scale * x + shift`, elementwise.
    pub fn affine(&self, x: Var, scale: T, shift: T) -> Var {
        self.unary(x, Op::Affine { x, scale }, |a| a.mapv(|v| v * scale + shift))
    }

    pub fn scale(&self, x: Var, s: T) -> Var {
        self.affine(x, s, T::zero())
    }

    /// `1 - x`; exact for x in [0.5, 1] and correctly rounded elsewhere.
    pub fn one_minus(&self, x: Var) -> Var {
        self.unary(x, Op::Affine { x, scale: -T::one() }, |a| {
            a.mapv(|v| T::one() - v)
        })
    }

    pub fn relu(&self, x: Var) -> Var {
        self.unary(x, Op::Relu(x), |a| a.mapv(|v| if v > T::zero() { v } else { T::zero() }))
    }

    /// Logistic function, clamped to the open interval (0, 1) of the working precision.
    pub fn sigmoid(&self, x: Var) -> Var {
        self.unary(x, Op::Sigmoid(x), |a| a.mapv(sigmoid_open))
    }

    pub fn exp(&self, x: Var) -> Var {
        self.unary(x, Op::Exp(x), |a| a.mapv(T::exp))
    }

    pub fn log(&self, x: Var) -> Var {
        self.unary(x, Op::Log(x), |a| a.mapv(T::ln))
    }

    // -- reductions ----------------------------------------------------

    pub fn sum(&self, x: Var) -> Var {
        self.unary(x, Op::SumAll(x), |a| ArrayD::from_elem(IxDyn(&[]), a.sum()))
    }

    pub fn mean(&self, x: Var) -> Var {
        self.unary(x, Op::MeanAll(x), |a| {
            ArrayD::from_elem(IxDyn(&[]), a.sum() / lit::<T>(a.len() as f64))
        })
    }

    /// Sum along `axis`, removing it.
    pub fn sum_axis(&self, x: Var, axis: usize) -> Var {
        self.unary(x, Op::SumAxis(x, axis), |a| a.sum_axis(Axis(axis)))
    }

    /// Mean along `axis`, removing it.
    pub fn mean_axis(&self, x: Var, axis: usize) -> Var {
        self.unary(x, Op::MeanAxis(x, axis), |a| {
            let n = lit::<T>(a.shape()[axis] as f64);
            a.sum_axis(Axis(axis)).mapv(|v| v / n)
        })
    }

    // -- layout --------------------------------------------------------

    pub fn reshape(&self, x: Var, shape: &[usize]) -> Var {
        self.unary(x, Op::Reshape(x), |a| {
            assert_eq!(
                a.len(),
                shape.iter().product::<usize>(),
                "cannot reshape {:?} into {shape:?}",
                a.shape()
            );
            a.as_standard_layout()
                .into_owned()
                .into_shape_with_order(IxDyn(shape))
                .expect("reshape of contiguous array")
        })
    }

    pub fn permute(&self, x: Var, axes: &[usize]) -> Var {
        let axes = axes.to_vec();
        self.unary(x, Op::Permute(x, axes.clone()), |a| permuted(a, &axes))
    }

    /// Swaps the last two axes.
    pub fn transpose(&self, x: Var) -> Var {
        let rank = self.value(x).ndim();
        let mut axes: Vec<usize> = (0..rank).collect();
        axes.swap(rank - 2, rank - 1);
        self.permute(x, &axes)
    }

    pub fn concat(&self, parts: &[Var], axis: usize) -> Var {
        let value = {
            let nodes = self.nodes.borrow();
            let views: Vec<_> = parts.iter().map(|p| nodes[p.0].value.view()).collect();
            concatenate(Axis(axis), &views).expect("concat shapes agree off-axis")
        };
        let rg = parts.iter().any(|&p| self.rg(p));
        self.push(value, Op::Concat(parts.to_vec(), axis), rg)
    }

    // -- linear algebra ------------------------------------------------

    /// Matrix product of two rank-2 tensors, or a batched product of two
    /// rank-3 tensors sharing the leading extent.
    pub fn matmul(&self, a: Var, b: Var) -> Var {
        let value = {
            let nodes = self.nodes.borrow();
            matmul_forward(&nodes[a.0].value, &nodes[b.0].value)
        };
        let rg = self.rg(a) || self.rg(b);
        self.push(value, Op::MatMul(a, b), rg)
    }

    // -- normalisations --------------------------------------------------

    /// Softmax over the last axis with max-subtraction.
    pub fn softmax(&self, x: Var) -> Var {
        self.unary(x, Op::Softmax(x), softmax_last)
    }

    /// `log(sum(exp(x)))` over the last axis, which is removed.
    pub fn logsumexp(&self, x: Var) -> Var {
        self.unary(x, Op::LogSumExp(x), |a| {
            let last = a.ndim() - 1;
            a.map_axis(Axis(last), |lane| {
                let m = lane.fold(T::neg_infinity(), |m, &v| m.max(v));
                m + lane.fold(T::zero(), |s, &v| s + (v - m).exp()).ln()
            })
        })
    }

    /// Scales every lane along the last axis to unit Euclidean norm.
    pub fn l2_normalize(&self, x: Var) -> Result<Var> {
        let value = {
            let a = self.value(x);
            let last = a.ndim() - 1;
            let mut out = a.clone();
            for mut lane in out.lanes_mut(Axis(last)) {
                let norm = lane.fold(T::zero(), |s, &v| s + v * v).sqrt();
                if norm.as_f64() < MIN_NORM || !norm.is_finite() {
                    return Err(Error::ZeroNorm { norm: norm.as_f64() });
                }
                lane.mapv_inplace(|v| v / norm);
            }
            out
        };
        let rg = self.rg(x);
        Ok(self.push(value, Op::L2Normalize(x), rg))
    }

    /// Zero-padded sliding window along axis 1 of a `(B, T, R, C)` tensor,
    /// producing `(B, T_out, R, kernel * C)` with the tap index outermost.
    pub fn temporal_unfold(&self, x: Var, kernel: usize, stride: usize, pad: usize) -> Var {
        self.unary(x, Op::TemporalUnfold { x, kernel, stride, pad }, |a| {
            unfold_forward(a, kernel, stride, pad)
        })
    }

    // -- backward ------------------------------------------------------

    /// Gradients of the scalar `loss` with respect to every trainable leaf.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if let Some(err) = self.fault() {
            return Err(err);
        }
        let nodes = self.nodes.borrow();
        let root = &nodes[loss.0];
        if root.value.len() != 1 {
            return Err(Error::ShapeMismatch(format!(
                "backward needs a scalar loss, got shape {:?}",
                root.value.shape()
            )));
        }
        let mut grads: Vec<Option<ArrayD<T>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(ArrayD::from_elem(root.value.raw_dim(), T::one()));
        let mut out = HashMap::new();

        for id in (0..=loss.0).rev() {
            let node = &nodes[id];
            if !node.requires_grad {
                continue;
            }
            let Some(grad) = grads[id].take() else { continue };
            let mut acc = |v: Var, g: ArrayD<T>| {
                if !nodes[v.0].requires_grad {
                    return;
                }
                match &mut grads[v.0] {
                    Some(existing) => *existing += &g,
                    slot @ None => *slot = Some(g),
                }
            };
            let val = |v: Var| &nodes[v.0].value;
            match &node.op {
                Op::Leaf(LeafKind::Trainable) => {
                    out.insert(id, grad);
                }
                Op::Leaf(_) => {}
                Op::Add(a, b) => {
                    acc(*a, unbroadcast(&grad, val(*a).shape()));
                    acc(*b, unbroadcast(&grad, val(*b).shape()));
                }
                Op::Sub(a, b) => {
                    acc(*a, unbroadcast(&grad, val(*a).shape()));
                    acc(*b, unbroadcast(&grad.mapv(|v| -v), val(*b).shape()));
                }
                Op::Mul(a, b) => {
                    if nodes[a.0].requires_grad {
                        acc(*a, unbroadcast(&(&grad * val(*b)), val(*a).shape()));
                    }
                    if nodes[b.0].requires_grad {
                        acc(*b, unbroadcast(&(&grad * val(*a)), val(*b).shape()));
                    }
                }
                Op::Affine { x, scale } => {
                    let s = *scale;
                    acc(*x, grad.mapv(|v| v * s));
                }
                Op::MatMul(a, b) => {
                    let (da, db) = matmul_backward(
                        &grad,
                        val(*a),
                        val(*b),
                        nodes[a.0].requires_grad,
                        nodes[b.0].requires_grad,
                    );
                    if let Some(da) = da {
                        acc(*a, da);
                    }
                    if let Some(db) = db {
                        acc(*b, db);
                    }
                }
                Op::Relu(x) => {
                    let mut g = grad;
                    ndarray::Zip::from(&mut g).and(val(*x)).for_each(|g, &v| {
                        if v <= T::zero() {
                            *g = T::zero();
                        }
                    });
                    acc(*x, g);
                }
                Op::Sigmoid(x) => {
                    let mut g = grad;
                    ndarray::Zip::from(&mut g)
                        .and(&node.value)
                        .for_each(|g, &y| *g = *g * y * (T::one() - y));
                    acc(*x, g);
                }
                Op::Exp(x) => acc(*x, &grad * &node.value),
                Op::Log(x) => acc(*x, &grad / val(*x)),
                Op::SumAll(x) => {
                    let g = *grad.iter().next().unwrap();
                    acc(*x, ArrayD::from_elem(val(*x).raw_dim(), g));
                }
                Op::MeanAll(x) => {
                    let n = lit::<T>(val(*x).len() as f64);
                    let g = *grad.iter().next().unwrap() / n;
                    acc(*x, ArrayD::from_elem(val(*x).raw_dim(), g));
                }
                Op::SumAxis(x, axis) => {
                    acc(*x, spread_axis(&grad, *axis, val(*x).shape(), T::one()));
                }
                Op::MeanAxis(x, axis) => {
                    let shape = val(*x).shape();
                    let inv = T::one() / lit::<T>(shape[*axis] as f64);
                    acc(*x, spread_axis(&grad, *axis, shape, inv));
                }
                Op::Reshape(x) => {
                    let shape = val(*x).shape().to_vec();
                    acc(*x, grad.into_shape_with_order(IxDyn(&shape)).expect("reshape grad"));
                }
                Op::Permute(x, axes) => {
                    let mut inverse = vec![0; axes.len()];
                    for (i, &a) in axes.iter().enumerate() {
                        inverse[a] = i;
                    }
                    acc(*x, permuted(&grad, &inverse));
                }
                Op::Softmax(x) => {
                    let y = &node.value;
                    let last = y.ndim() - 1;
                    let mut g = grad;
                    for (mut gl, yl) in g.lanes_mut(Axis(last)).into_iter().zip(y.lanes(Axis(last))) {
                        let dot = gl.iter().zip(yl.iter()).fold(T::zero(), |s, (&a, &b)| s + a * b);
                        ndarray::Zip::from(&mut gl).and(&yl).for_each(|g, &y| *g = y * (*g - dot));
                    }
                    acc(*x, g);
                }
                Op::LogSumExp(x) => {
                    let input = val(*x);
                    let last = input.ndim() - 1;
                    let mut g = softmax_last(input);
                    for (mut lane, &up) in g.lanes_mut(Axis(last)).into_iter().zip(grad.iter()) {
                        lane.mapv_inplace(|p| p * up);
                    }
                    acc(*x, g);
                }
                Op::L2Normalize(x) => {
                    let input = val(*x);
                    let y = &node.value;
                    let last = y.ndim() - 1;
                    let mut g = grad;
                    for ((mut gl, yl), xl) in g
                        .lanes_mut(Axis(last))
                        .into_iter()
                        .zip(y.lanes(Axis(last)))
                        .zip(input.lanes(Axis(last)))
                    {
                        let norm = xl.fold(T::zero(), |s, &v| s + v * v).sqrt();
                        let dot = gl.iter().zip(yl.iter()).fold(T::zero(), |s, (&a, &b)| s + a * b);
                        ndarray::Zip::from(&mut gl)
                            .and(&yl)
                            .for_each(|g, &y| *g = (*g - y * dot) / norm);
                    }
                    acc(*x, g);
                }
                Op::Concat(parts, axis) => {
                    let mut start = 0isize;
                    for p in parts {
                        let len = val(*p).shape()[*axis] as isize;
                        if nodes[p.0].requires_grad {
                            let piece = grad.slice_axis(Axis(*axis), Slice::from(start..start + len));
                            acc(*p, piece.to_owned());
                        }
                        start += len;
                    }
                }
                Op::TemporalUnfold { x, kernel, stride, pad } => {
                    acc(*x, unfold_backward(&grad, val(*x).shape(), *kernel, *stride, *pad));
                }
            }
        }
        Ok(Gradients { grads: out })
    }
}

/// Gradients keyed by trainable leaf.
#[derive(Clone, Debug, Default)]
pub struct Gradients<T: Scalar> {
    grads: HashMap<usize, ArrayD<T>>,
}

impl<T: Scalar> Gradients<T> {
    /// `None` when `v` is frozen, constant, or not connected to the loss.
    pub fn get(&self, v: Var) -> Option<&ArrayD<T>> {
        self.grads.get(&v.0)
    }

    /// Gradient of `v`, with zeros standing in for a disconnected or frozen leaf.
    pub fn wrt(&self, g: &Graph<T>, v: Var) -> Tensor<T> {
        match self.grads.get(&v.0) {
            Some(a) => Tensor::from_array(a.clone()),
            None => Tensor::from_array(ArrayD::zeros(g.value(v).raw_dim())),
        }
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }
}

fn sigmoid_open<T: Scalar>(v: T) -> T {
    let y = if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    };
    let hi = T::one() - T::epsilon() / lit(2.0);
    y.max(T::min_positive_value()).min(hi)
}

fn permuted<T: Scalar>(a: &ArrayD<T>, axes: &[usize]) -> ArrayD<T> {
    let view = a.view().permuted_axes(IxDyn(axes));
    // Copying through a fixed-rank view avoids per-element dynamic indexing.
    fn fixed<T: Scalar, D: Dimension>(view: ArrayViewD<'_, T>) -> ArrayD<T> {
        let view = view.into_dimensionality::<D>().unwrap();
        let mut out = Array::<T, D>::zeros(view.raw_dim());
        out.assign(&view);
        out.into_dyn()
    }
    match view.ndim() {
        2 => fixed::<T, Ix2>(view),
        3 => fixed::<T, Ix3>(view),
        4 => fixed::<T, Ix4>(view),
        5 => fixed::<T, Ix5>(view),
        6 => fixed::<T, Ix6>(view),
        _ => view.as_standard_layout().into_owned(),
    }
}

fn softmax_last<T: Scalar>(a: &ArrayD<T>) -> ArrayD<T> {
    let last = a.ndim() - 1;
    let mut out = a.as_standard_layout().into_owned();
    let width = a.shape()[last].max(1);
    for lane in out.as_slice_mut().unwrap().chunks_exact_mut(width) {
        let m = lane.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
        let mut s = T::zero();
        for v in lane.iter_mut() {
            *v = (*v - m).exp();
            s = s + *v;
        }
        let inv = T::one() / s;
        lane.iter_mut().for_each(|v| *v = *v * inv);
    }
    out
}

/// Sums `grad` down to `shape`, undoing numpy-style broadcasting.
fn unbroadcast<T: Scalar>(grad: &ArrayD<T>, shape: &[usize]) -> ArrayD<T> {
    if grad.shape() == shape {
        return grad.clone();
    }
    let mut g = grad.clone();
    while g.ndim() > shape.len() {
        g = g.sum_axis(Axis(0));
    }
    for (axis, &extent) in shape.iter().enumerate() {
        if extent == 1 && g.shape()[axis] != 1 {
            g = g.sum_axis(Axis(axis)).insert_axis(Axis(axis));
        }
    }
    g
}

fn spread_axis<T: Scalar>(grad: &ArrayD<T>, axis: usize, shape: &[usize], factor: T) -> ArrayD<T> {
    let g = grad.view().insert_axis(Axis(axis));
    let mut out = g.broadcast(IxDyn(shape)).expect("reduced grad broadcasts back").to_owned();
    if factor != T::one() {
        out.mapv_inplace(|v| v * factor);
    }
    out
}

fn as2<T: Scalar>(a: &ArrayD<T>) -> ArrayView2<'_, T> {
    a.view().into_dimensionality::<Ix2>().expect("rank-2 operand")
}

fn matmul_forward<T: Scalar>(a: &ArrayD<T>, b: &ArrayD<T>) -> ArrayD<T> {
    match (a.ndim(), b.ndim()) {
        (2, 2) => {
            assert_eq!(a.shape()[1], b.shape()[0], "matmul {:?} x {:?}", a.shape(), b.shape());
            as2(a).dot(&as2(b)).into_dyn()
        }
        (3, 3) => {
            let a3 = a.view().into_dimensionality::<Ix3>().unwrap();
            let b3 = b.view().into_dimensionality::<Ix3>().unwrap();
            let (batch, m, k) = a3.dim();
            let (batch_b, k2, n) = b3.dim();
            assert!(batch == batch_b && k == k2, "batched matmul {:?} x {:?}", a.shape(), b.shape());
            let mut out = ndarray::Array3::<T>::zeros((batch, m, n));
            for i in 0..batch {
                general_mat_mul(
                    T::one(),
                    &a3.index_axis(Axis(0), i),
                    &b3.index_axis(Axis(0), i),
                    T::zero(),
                    &mut out.index_axis_mut(Axis(0), i),
                );
            }
            out.into_dyn()
        }
        _ => panic!("matmul supports rank 2 or batched rank 3, got {:?} x {:?}", a.shape(), b.shape()),
    }
}

fn matmul_backward<T: Scalar>(
    grad: &ArrayD<T>,
    a: &ArrayD<T>,
    b: &ArrayD<T>,
    need_a: bool,
    need_b: bool,
) -> (Option<ArrayD<T>>, Option<ArrayD<T>>) {
    if a.ndim() == 2 {
        let g = as2(grad);
        let da = need_a.then(|| g.dot(&as2(b).t()).into_dyn());
        let db = need_b.then(|| as2(a).t().dot(&g).into_dyn());
        return (da, db);
    }
    let g3 = grad.view().into_dimensionality::<Ix3>().unwrap();
    let a3 = a.view().into_dimensionality::<Ix3>().unwrap();
    let b3 = b.view().into_dimensionality::<Ix3>().unwrap();
    let batch = a3.dim().0;
    let da = need_a.then(|| {
        let mut da = ndarray::Array3::<T>::zeros(a3.raw_dim());
        for i in 0..batch {
            general_mat_mul(
                T::one(),
                &g3.index_axis(Axis(0), i),
                &b3.index_axis(Axis(0), i).t(),
                T::zero(),
                &mut da.index_axis_mut(Axis(0), i),
            );
        }
        da.into_dyn()
    });
    let db = need_b.then(|| {
        let mut db = ndarray::Array3::<T>::zeros(b3.raw_dim());
        for i in 0..batch {
            general_mat_mul(
                T::one(),
                &a3.index_axis(Axis(0), i).t(),
                &g3.index_axis(Axis(0), i),
                T::zero(),
                &mut db.index_axis_mut(Axis(0), i),
            );
        }
        db.into_dyn()
    });
    (da, db)
}

pub(crate) fn unfold_out_len(t: usize, kernel: usize, stride: usize, pad: usize) -> usize {
    (t + 2 * pad - kernel) / stride + 1
}

fn unfold_forward<T: Scalar>(a: &ArrayD<T>, kernel: usize, stride: usize, pad: usize) -> ArrayD<T> {
    let &[b, t, r, c] = a.shape() else {
        panic!("temporal_unfold expects (B, T, R, C), got {:?}", a.shape())
    };
    let t_out = unfold_out_len(t, kernel, stride, pad);
    let src = a.as_slice().expect("contiguous");
    let mut out = vec![T::zero(); b * t_out * r * kernel * c];
    let row = kernel * c;
    for bi in 0..b {
        for to in 0..t_out {
            for k in 0..kernel {
                let ti = (to * stride + k) as isize - pad as isize;
                if ti < 0 || ti >= t as isize {
                    continue;
                }
                let ti = ti as usize;
                for ri in 0..r {
                    let s = ((bi * t + ti) * r + ri) * c;
                    let d = ((bi * t_out + to) * r + ri) * row + k * c;
                    out[d..d + c].copy_from_slice(&src[s..s + c]);
                }
            }
        }
    }
    ArrayD::from_shape_vec(IxDyn(&[b, t_out, r, row]), out).unwrap()
}

fn unfold_backward<T: Scalar>(
    grad: &ArrayD<T>,
    shape: &[usize],
    kernel: usize,
    stride: usize,
    pad: usize,
) -> ArrayD<T> {
    let (b, t, r, c) = (shape[0], shape[1], shape[2], shape[3]);
    let t_out = unfold_out_len(t, kernel, stride, pad);
    let g = grad.as_standard_layout();
    let src = g.as_slice().unwrap();
    let mut out = vec![T::zero(); b * t * r * c];
    let row = kernel * c;
    for bi in 0..b {
        for to in 0..t_out {
            for k in 0..kernel {
                let ti = (to * stride + k) as isize - pad as isize;
                if ti < 0 || ti >= t as isize {
                    continue;
                }
                let ti = ti as usize;
                for ri in 0..r {
                    let d = ((bi * t + ti) * r + ri) * c;
                    let s = ((bi * t_out + to) * r + ri) * row + k * c;
                    for (o, &v) in out[d..d + c].iter_mut().zip(&src[s..s + c]) {
                        *o = *o + v;
                    }
                }
            }
        }
    }
    ArrayD::from_shape_vec(IxDyn(shape), out).unwrap()
}

/// Row-major 2-D view helper for callers that hold a rank-2 value.
pub fn to_array2<T: Scalar>(a: &ArrayD<T>) -> Array2<T> {
    as2(a).to_owned()
}
