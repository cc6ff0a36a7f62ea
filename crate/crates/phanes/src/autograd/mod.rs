//! Minimal tape-based reverse-mode autodiff over `ndarray` in `f64`.
//!
//! A [`Tape`] records one dynamic computation graph per forward pass; a
//! [`Var`] is a copyable handle into it. Gradients are produced by a single
//! reverse sweep in [`Tape::backward`]. The op set is exactly what the
//! networks and losses in this crate need: elementwise arithmetic,
//! activations, reductions, dense and convolutional layers, nearest
//! upsampling, channel broadcasts and concatenation.
//!
//! Only nodes reachable from a parameter leaf (`Tape::var`) receive
//! gradients; constants (`Tape::constant`) cut gradient flow, which is how
//! "detached" quantities are expressed.

pub mod check;
pub mod conv;

use conv::{col2im, conv2d_forward, im2col, upsample2_backward, upsample2_forward, ConvSpec};
use ndarray::{ArrayD, ArrayView3, ArrayView4, Axis, IxDyn};
use std::cell::RefCell;

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    AddScalar(usize),
    MulScalar(usize, f64),
    Exp(usize),
    Sqrt(usize),
    Tanh(usize),
    Sigmoid(usize),
    LeakyRelu(usize, f64),
    Abs(usize),
    ClampMax(usize, f64),
    Sum(usize),
    Mean(usize),
    Linear { x: usize, w: usize, b: usize },
    Conv2d { x: usize, w: usize, b: usize, spec: ConvSpec },
    Upsample2(usize),
    Reshape(usize),
    Concat0(Vec<usize>),
    SumChannels(usize),
    BcastMul0 { x: usize, s: usize },
    BcastDiv0 { x: usize, s: usize },
}

struct Node {
    value: ArrayD<f64>,
    op: Op,
    needs_grad: bool,
}

/// Records a computation graph; one tape per forward/backward pass.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

/// Gradients of one scalar output with respect to every tape node.
pub struct Gradients {
    grads: Vec<Option<ArrayD<f64>>>,
}

impl Gradients {
    pub fn get(&self, v: Var<'_>) -> Option<&ArrayD<f64>> {
        self.grads[v.id].as_ref()
    }

    /// Gradient w.r.t. `v`, zero-filled when the loss does not depend on it.
    pub fn wrt(&self, v: Var<'_>) -> ArrayD<f64> {
        match self.grads[v.id].as_ref() {
            Some(g) => g.clone(),
            None => ArrayD::zeros(v.shape()),
        }
    }
}

fn scalar_of(g: &ArrayD<f64>) -> f64 {
    *g.iter().next().unwrap()
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: ArrayD<f64>, op: Op, needs_grad: bool) -> usize {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value, op, needs_grad });
        nodes.len() - 1
    }

    /// Leaf that participates in differentiation (parameters, inputs under test).
    pub fn var(&self, value: ArrayD<f64>) -> Var<'_> {
        let id = self.push(value, Op::Leaf, true);
        Var { tape: self, id }
    }

    /// Leaf treated as constant: gradient flow stops here.
    pub fn constant(&self, value: ArrayD<f64>) -> Var<'_> {
        let id = self.push(value, Op::Leaf, false);
        Var { tape: self, id }
    }

    pub fn scalar(&self, v: f64) -> Var<'_> {
        self.constant(ArrayD::from_elem(IxDyn(&[]), v))
    }

    fn needs(&self, id: usize) -> bool {
        self.nodes.borrow()[id].needs_grad
    }

    /// Reverse sweep from scalar `loss`; returns per-node gradients.
    pub fn backward(&self, loss: Var<'_>) -> Gradients {
        let nodes = self.nodes.borrow();
        assert_eq!(nodes[loss.id].value.len(), 1, "backward expects a scalar loss");
        let mut grads: Vec<Option<ArrayD<f64>>> = vec![None; nodes.len()];
        grads[loss.id] = Some(ArrayD::from_elem(nodes[loss.id].value.raw_dim(), 1.0));

        let add = |pid: usize, delta: ArrayD<f64>, grads: &mut Vec<Option<ArrayD<f64>>>| {
            if !nodes[pid].needs_grad {
                return;
            }
            match &mut grads[pid] {
                Some(acc) => *acc += &delta,
                slot => *slot = Some(delta),
            }
        };

        for id in (0..nodes.len()).rev() {
            if !nodes[id].needs_grad {
                continue;
            }
            if matches!(nodes[id].op, Op::Leaf) {
                continue; // keep accumulated gradient for the caller
            }
            let Some(g) = grads[id].take() else { continue };
            match &nodes[id].op {
                Op::Leaf => unreachable!(),
                Op::Add(a, b) => {
                    add(*a, g.clone(), &mut grads);
                    add(*b, g, &mut grads);
                }
                Op::Sub(a, b) => {
                    add(*a, g.clone(), &mut grads);
                    add(*b, -g, &mut grads);
                }
                Op::Mul(a, b) => {
                    add(*a, &g * &nodes[*b].value, &mut grads);
                    add(*b, &g * &nodes[*a].value, &mut grads);
                }
                Op::Div(a, b) => {
                    let vb = &nodes[*b].value;
                    add(*a, &g / vb, &mut grads);
                    let va = &nodes[*a].value;
                    add(*b, -(&g * va) / &(vb * vb), &mut grads);
                }
                Op::AddScalar(a) => add(*a, g, &mut grads),
                Op::MulScalar(a, c) => add(*a, g * *c, &mut grads),
                Op::Exp(a) => add(*a, &g * &nodes[id].value, &mut grads),
                Op::Sqrt(a) => {
                    let dy = nodes[id].value.mapv(|y| 0.5 / y);
                    add(*a, &g * &dy, &mut grads);
                }
                Op::Tanh(a) => {
                    let dy = nodes[id].value.mapv(|y| 1.0 - y * y);
                    add(*a, &g * &dy, &mut grads);
                }
                Op::Sigmoid(a) => {
                    let dy = nodes[id].value.mapv(|y| y * (1.0 - y));
                    add(*a, &g * &dy, &mut grads);
                }
                Op::LeakyRelu(a, slope) => {
                    let mask = nodes[*a].value.mapv(|v| if v > 0.0 { 1.0 } else { *slope });
                    add(*a, &g * &mask, &mut grads);
                }
                Op::Abs(a) => {
                    let sign = nodes[*a].value.mapv(|v| {
                        if v > 0.0 {
                            1.0
                        } else if v < 0.0 {
                            -1.0
                        } else {
                            0.0
                        }
                    });
                    add(*a, &g * &sign, &mut grads);
                }
                Op::ClampMax(a, cap) => {
                    let mask = nodes[*a].value.mapv(|v| if v < *cap { 1.0 } else { 0.0 });
                    add(*a, &g * &mask, &mut grads);
                }
                Op::Sum(a) => {
                    let gs = scalar_of(&g);
                    add(*a, ArrayD::from_elem(nodes[*a].value.raw_dim(), gs), &mut grads);
                }
                Op::Mean(a) => {
                    let gs = scalar_of(&g) / nodes[*a].value.len() as f64;
                    add(*a, ArrayD::from_elem(nodes[*a].value.raw_dim(), gs), &mut grads);
                }
                Op::Linear { x, w, b } => {
                    let gv = g.view().into_dimensionality::<ndarray::Ix1>().unwrap();
                    let xv = nodes[*x]
                        .value
                        .view()
                        .into_dimensionality::<ndarray::Ix1>()
                        .unwrap();
                    let wv = nodes[*w]
                        .value
                        .view()
                        .into_dimensionality::<ndarray::Ix2>()
                        .unwrap();
                    if nodes[*w].needs_grad {
                        let mut dw = ndarray::Array2::<f64>::zeros(wv.raw_dim());
                        for (i, gi) in gv.iter().enumerate() {
                            if *gi != 0.0 {
                                dw.row_mut(i).scaled_add(*gi, &xv);
                            }
                        }
                        add(*w, dw.into_dyn(), &mut grads);
                    }
                    if nodes[*x].needs_grad {
                        add(*x, wv.t().dot(&gv).into_dyn(), &mut grads);
                    }
                    add(*b, g.clone(), &mut grads);
                }
                Op::Conv2d { x, w, b, spec } => {
                    let xv = as3(&nodes[*x].value);
                    let wv = as4(&nodes[*w].value);
                    let dy = as3(&g);
                    let (cout, cin, kh, kw) = wv.dim();
                    let (_, oh, ow) = dy.dim();
                    let dy_mat = dy.to_shape((cout, oh * ow)).unwrap();
                    if nodes[*x].needs_grad {
                        let wmat = wv.to_shape((cout, cin * kh * kw)).unwrap();
                        let dcols = wmat.t().dot(&dy_mat);
                        let (c, h, wdt) = xv.dim();
                        add(*x, col2im(&dcols, c, h, wdt, kh, kw, *spec).into_dyn(), &mut grads);
                    }
                    if nodes[*w].needs_grad {
                        let cols = im2col(&xv, kh, kw, *spec);
                        let dw = dy_mat.dot(&cols.t());
                        add(
                            *w,
                            dw.into_shape_with_order((cout, cin, kh, kw)).unwrap().into_dyn(),
                            &mut grads,
                        );
                    }
                    if nodes[*b].needs_grad {
                        let db: Vec<f64> = dy_mat.rows().into_iter().map(|r| r.sum()).collect();
                        add(*b, ndarray::Array1::from(db).into_dyn(), &mut grads);
                    }
                }
                Op::Upsample2(a) => {
                    add(*a, upsample2_backward(&as3(&g)).into_dyn(), &mut grads);
                }
                Op::Reshape(a) => {
                    let target = nodes[*a].value.raw_dim();
                    add(*a, g.to_shape(target).unwrap().to_owned(), &mut grads);
                }
                Op::Concat0(parts) => {
                    let mut offset = 0usize;
                    for pid in parts {
                        let len0 = nodes[*pid].value.shape()[0];
                        let slice = g
                            .slice_axis(Axis(0), ndarray::Slice::from(offset..offset + len0))
                            .to_owned();
                        add(*pid, slice, &mut grads);
                        offset += len0;
                    }
                }
                Op::SumChannels(a) => {
                    let gb = g.broadcast(nodes[*a].value.raw_dim()).unwrap().to_owned();
                    add(*a, gb, &mut grads);
                }
                Op::BcastMul0 { x, s } => {
                    let sv = &nodes[*s].value;
                    let xv = &nodes[*x].value;
                    if nodes[*x].needs_grad {
                        let gb = &g * &sv.broadcast(xv.raw_dim()).unwrap();
                        add(*x, gb, &mut grads);
                    }
                    if nodes[*s].needs_grad {
                        let prod = &g * xv;
                        let ds = prod.sum_axis(Axis(0)).insert_axis(Axis(0));
                        add(*s, ds, &mut grads);
                    }
                }
                Op::BcastDiv0 { x, s } => {
                    let sv = &nodes[*s].value;
                    let xv = &nodes[*x].value;
                    if nodes[*x].needs_grad {
                        let gb = &g / &sv.broadcast(xv.raw_dim()).unwrap();
                        add(*x, gb, &mut grads);
                    }
                    if nodes[*s].needs_grad {
                        let sb = sv.broadcast(xv.raw_dim()).unwrap();
                        let denom = &sb * &sb;
                        let num = &(&g * xv) / &denom;
                        let ds = -num.sum_axis(Axis(0)).insert_axis(Axis(0));
                        add(*s, ds, &mut grads);
                    }
                }
            }
        }
        Gradients { grads }
    }
}

fn as3(v: &ArrayD<f64>) -> ArrayView3<'_, f64> {
    v.view().into_dimensionality::<ndarray::Ix3>().unwrap()
}

fn as4(v: &ArrayD<f64>) -> ArrayView4<'_, f64> {
    v.view().into_dimensionality::<ndarray::Ix4>().unwrap()
}

impl<'t> Var<'t> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn value(&self) -> ArrayD<f64> {
        self.tape.nodes.borrow()[self.id].value.clone()
    }

    pub fn shape(&self) -> IxDyn {
        self.tape.nodes.borrow()[self.id].value.raw_dim()
    }

    /// Scalar value of a 0-d (or single-element) node.
    pub fn scalar_value(&self) -> f64 {
        let nodes = self.tape.nodes.borrow();
        let v = &nodes[self.id].value;
        assert_eq!(v.len(), 1, "scalar_value on non-scalar node");
        *v.iter().next().unwrap()
    }

    /// Re-enters the value as a constant: gradient flow stops here.
    pub fn detach(&self) -> Var<'t> {
        self.tape.constant(self.value())
    }

    fn unary(&self, value: ArrayD<f64>, op: Op) -> Var<'t> {
        let needs = self.tape.needs(self.id);
        let id = self.tape.push(value, op, needs);
        Var { tape: self.tape, id }
    }

    fn binary(&self, other: Var<'t>, value: ArrayD<f64>, op: Op) -> Var<'t> {
        let needs = self.tape.needs(self.id) || self.tape.needs(other.id);
        let id = self.tape.push(value, op, needs);
        Var { tape: self.tape, id }
    }

    pub fn add(&self, o: Var<'t>) -> Var<'t> {
        let v = {
            let nodes = self.tape.nodes.borrow();
            assert_eq!(nodes[self.id].value.shape(), nodes[o.id].value.shape());
            &nodes[self.id].value + &nodes[o.id].value
        };
        self.binary(o, v, Op::Add(self.id, o.id))
    }

    pub fn sub(&self, o: Var<'t>) -> Var<'t> {
        let v = {
            let nodes = self.tape.nodes.borrow();
            assert_eq!(nodes[self.id].value.shape(), nodes[o.id].value.shape());
            &nodes[self.id].value - &nodes[o.id].value
        };
        self.binary(o, v, Op::Sub(self.id, o.id))
    }

    pub fn mul(&self, o: Var<'t>) -> Var<'t> {
        let v = {
            let nodes = self.tape.nodes.borrow();
            assert_eq!(nodes[self.id].value.shape(), nodes[o.id].value.shape());
            &nodes[self.id].value * &nodes[o.id].value
        };
        self.binary(o, v, Op::Mul(self.id, o.id))
    }

    pub fn div(&self, o: Var<'t>) -> Var<'t> {
        let v = {
            let nodes = self.tape.nodes.borrow();
            &nodes[self.id].value / &nodes[o.id].value
        };
        self.binary(o, v, Op::Div(self.id, o.id))
    }

    pub fn add_scalar(&self, c: f64) -> Var<'t> {
        let v = self.tape.nodes.borrow()[self.id].value.mapv(|x| x + c);
        self.unary(v, Op::AddScalar(self.id))
    }

    pub fn mul_scalar(&self, c: f64) -> Var<'t> {
        let v = self.tape.nodes.borrow()[self.id].value.mapv(|x| x * c);
        self.unary(v, Op::MulScalar(self.id, c))
    }

    pub fn neg(&self) -> Var<'t> {
        self.mul_scalar(-1.0)
    }

    pub fn exp(&self) -> Var<'t> {
        let v = self.tape.nodes.borrow()[self.id].value.mapv(f64::exp);
        self.unary(v, Op::Exp(self.id))
    }

    pub fn sqrt(&self) -> Var<'t> {
        let v = self.tape.nodes.borrow()[self.id].value.mapv(f64::sqrt);
        self.unary(v, Op::Sqrt(self.id))
    }

    pub fn tanh(&self) -> Var<'t> {
        let v = self.tape.nodes.borrow()[self.id].value.mapv(f64::tanh);
        self.unary(v, Op::Tanh(self.id))
    }

    pub fn sigmoid(&self) -> Var<'t> {
        let v = self.tape.nodes.borrow()[self.id]
            .value
            .mapv(|x| 1.0 / (1.0 + (-x).exp()));
        self.unary(v, Op::Sigmoid(self.id))
    }

    pub fn leaky_relu(&self, slope: f64) -> Var<'t> {
        let v = self.tape.nodes.borrow()[self.id]
            .value
            .mapv(|x| if x > 0.0 { x } else { slope * x });
        self.unary(v, Op::LeakyRelu(self.id, slope))
    }

    pub fn abs(&self) -> Var<'t> {
        let v = self.tape.nodes.borrow()[self.id].value.mapv(f64::abs);
        self.unary(v, Op::Abs(self.id))
    }

    /// min(x, cap) elementwise; used to guard exponentials.
    pub fn clamp_max(&self, cap: f64) -> Var<'t> {
        let v = self.tape.nodes.borrow()[self.id].value.mapv(|x| x.min(cap));
        self.unary(v, Op::ClampMax(self.id, cap))
    }

    pub fn sum(&self) -> Var<'t> {
        let s = self.tape.nodes.borrow()[self.id].value.sum();
        self.unary(ArrayD::from_elem(IxDyn(&[]), s), Op::Sum(self.id))
    }

    pub fn mean(&self) -> Var<'t> {
        let m = {
            let nodes = self.tape.nodes.borrow();
            let v = &nodes[self.id].value;
            v.sum() / v.len() as f64
        };
        self.unary(ArrayD::from_elem(IxDyn(&[]), m), Op::Mean(self.id))
    }

    /// Dense layer `w @ x + b` with `x: [n]`, `w: [m, n]`, `b: [m]`.
    pub fn linear(&self, w: Var<'t>, b: Var<'t>) -> Var<'t> {
        let v = {
            let nodes = self.tape.nodes.borrow();
            let xv = nodes[self.id]
                .value
                .view()
                .into_dimensionality::<ndarray::Ix1>()
                .unwrap();
            let wv = nodes[w.id]
                .value
                .view()
                .into_dimensionality::<ndarray::Ix2>()
                .unwrap();
            let bv = nodes[b.id]
                .value
                .view()
                .into_dimensionality::<ndarray::Ix1>()
                .unwrap();
            (wv.dot(&xv) + bv).into_dyn()
        };
        let needs = self.tape.needs(self.id) || self.tape.needs(w.id) || self.tape.needs(b.id);
        let id = self
            .tape
            .push(v, Op::Linear { x: self.id, w: w.id, b: b.id }, needs);
        Var { tape: self.tape, id }
    }

    /// 2-D convolution, channels-first.
    pub fn conv2d(&self, w: Var<'t>, b: Var<'t>, spec: ConvSpec) -> Var<'t> {
        let v = {
            let nodes = self.tape.nodes.borrow();
            let xv = as3(&nodes[self.id].value);
            let wv = as4(&nodes[w.id].value);
            let bv: Vec<f64> = nodes[b.id].value.iter().copied().collect();
            conv2d_forward(&xv, &wv, Some(&bv), spec).into_dyn()
        };
        let needs = self.tape.needs(self.id) || self.tape.needs(w.id) || self.tape.needs(b.id);
        let id = self
            .tape
            .push(v, Op::Conv2d { x: self.id, w: w.id, b: b.id, spec }, needs);
        Var { tape: self.tape, id }
    }

    pub fn upsample2(&self) -> Var<'t> {
        let v = {
            let nodes = self.tape.nodes.borrow();
            upsample2_forward(&as3(&nodes[self.id].value)).into_dyn()
        };
        self.unary(v, Op::Upsample2(self.id))
    }

    pub fn reshape(&self, shape: &[usize]) -> Var<'t> {
        let v = {
            let nodes = self.tape.nodes.borrow();
            nodes[self.id]
                .value
                .to_shape(IxDyn(shape))
                .expect("reshape size mismatch")
                .to_owned()
        };
        self.unary(v, Op::Reshape(self.id))
    }

    /// Concatenation along axis 0.
    pub fn concat0(parts: &[Var<'t>]) -> Var<'t> {
        assert!(!parts.is_empty());
        let tape = parts[0].tape;
        let v = {
            let nodes = tape.nodes.borrow();
            let views: Vec<_> = parts.iter().map(|p| nodes[p.id].value.view()).collect();
            ndarray::concatenate(Axis(0), &views).expect("concat0 shape mismatch")
        };
        let needs = parts.iter().any(|p| tape.needs(p.id));
        let ids: Vec<usize> = parts.iter().map(|p| p.id).collect();
        let id = tape.push(v, Op::Concat0(ids), needs);
        Var { tape, id }
    }

    /// `[C,H,W] -> [1,H,W]` channel sum.
    pub fn sum_channels(&self) -> Var<'t> {
        let v = {
            let nodes = self.tape.nodes.borrow();
            nodes[self.id].value.sum_axis(Axis(0)).insert_axis(Axis(0))
        };
        self.unary(v, Op::SumChannels(self.id))
    }

    /// `[C,H,W] * [1,H,W]` broadcast multiply.
    pub fn mul_bcast0(&self, s: Var<'t>) -> Var<'t> {
        let v = {
            let nodes = self.tape.nodes.borrow();
            let xv = &nodes[self.id].value;
            xv * &nodes[s.id].value.broadcast(xv.raw_dim()).unwrap()
        };
        self.binary(s, v, Op::BcastMul0 { x: self.id, s: s.id })
    }

    /// `[C,H,W] / [1,H,W]` broadcast divide.
    pub fn div_bcast0(&self, s: Var<'t>) -> Var<'t> {
        let v = {
            let nodes = self.tape.nodes.borrow();
            let xv = &nodes[self.id].value;
            xv / &nodes[s.id].value.broadcast(xv.raw_dim()).unwrap()
        };
        self.binary(s, v, Op::BcastDiv0 { x: self.id, s: s.id })
    }

    // ----- composite helpers -----

    pub fn square(&self) -> Var<'t> {
        self.mul(*self)
    }

    pub fn dot(&self, o: Var<'t>) -> Var<'t> {
        self.mul(o).sum()
    }

    /// Sum of squared differences.
    pub fn sq_err_sum(&self, o: Var<'t>) -> Var<'t> {
        self.sub(o).square().sum()
    }

    /// Mean squared error over all elements.
    pub fn mse(&self, o: Var<'t>) -> Var<'t> {
        self.sub(o).square().mean()
    }

    /// Cosine similarity over flattened values. A zero-norm operand yields
    /// the constant 0 so dead layers penalize rather than divide by zero.
    pub fn cosine_flat(&self, o: Var<'t>) -> Var<'t> {
        let na = self.value().iter().map(|v| v * v).sum::<f64>().sqrt();
        let nb = o.value().iter().map(|v| v * v).sum::<f64>().sqrt();
        if na == 0.0 || nb == 0.0 {
            return self.tape.scalar(0.0);
        }
        let num = self.dot(o);
        let den = self.square().sum().sqrt().mul(o.square().sum().sqrt());
        num.div(den)
    }
}

pub use check::{finite_diff, max_rel_error};

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{ArrayD, IxDyn};
    use rand::Rng;

    fn randn(rng: &mut impl Rng, shape: &[usize]) -> ArrayD<f64> {
        ArrayD::from_shape_fn(IxDyn(shape), |_| rng.gen_range(-1.0..1.0))
    }

    #[test]
    fn add_mul_backward() {
        let t = Tape::new();
        let a = t.var(ArrayD::from_elem(IxDyn(&[2]), 3.0));
        let b = t.var(ArrayD::from_elem(IxDyn(&[2]), 4.0));
        let loss = a.mul(b).sum();
        let g = t.backward(loss);
        assert_eq!(g.wrt(a)[[0]], 4.0);
        assert_eq!(g.wrt(b)[[1]], 3.0);
    }

    #[test]
    fn detach_stops_gradient() {
        let t = Tape::new();
        let a = t.var(ArrayD::from_elem(IxDyn(&[2]), 3.0));
        let loss = a.detach().square().sum();
        let g = t.backward(loss);
        assert!(g.get(a).is_none());
    }

    #[test]
    fn elementwise_chain_matches_finite_differences() {
        let mut rng = crate::rng::master_rng(3);
        let x0 = randn(&mut rng, &[6]).mapv(|v| v + 2.5); // keep sqrt/abs off their kinks
        let loss_of = |vals: &ArrayD<f64>| {
            let t = Tape::new();
            let x = t.var(vals.clone());
            x.sqrt()
                .tanh()
                .mul_scalar(1.7)
                .add_scalar(0.3)
                .sigmoid()
                .exp()
                .mean()
                .scalar_value()
        };
        let t = Tape::new();
        let x = t.var(x0.clone());
        let y = x
            .sqrt()
            .tanh()
            .mul_scalar(1.7)
            .add_scalar(0.3)
            .sigmoid()
            .exp()
            .mean();
        let g = t.backward(y);
        let numeric = check::finite_diff(&x0, 1e-6, loss_of);
        let err = check::max_rel_error(&g.wrt(x), &numeric);
        assert!(err < 1e-7, "rel err {err}");
    }

    #[test]
    fn linear_and_conv_match_finite_differences() {
        let mut rng = crate::rng::master_rng(5);
        let x0 = randn(&mut rng, &[2, 5, 5]);
        let w0 = randn(&mut rng, &[3, 2, 3, 3]);
        let b0 = randn(&mut rng, &[3]);
        let lw0 = randn(&mut rng, &[4, 27]);
        let lb0 = randn(&mut rng, &[4]);
        let spec = conv::ConvSpec { stride: 2, pad: 1, dilation: 1 };

        let eval = |w: &ArrayD<f64>, b: &ArrayD<f64>, lw: &ArrayD<f64>, lb: &ArrayD<f64>| {
            let t = Tape::new();
            let x = t.constant(x0.clone());
            let wv = t.var(w.clone());
            let bv = t.var(b.clone());
            let lwv = t.var(lw.clone());
            let lbv = t.var(lb.clone());
            let h = x.conv2d(wv, bv, spec).leaky_relu(0.2);
            let flat = h.reshape(&[27]);
            let y = flat.linear(lwv, lbv).tanh().sum();
            let g = t.backward(y);
            let grads = [g.wrt(wv), g.wrt(bv), g.wrt(lwv), g.wrt(lbv)];
            (y.scalar_value(), grads)
        };

        let (_, analytic) = eval(&w0, &b0, &lw0, &lb0);
        let params = [&w0, &b0, &lw0, &lb0];
        for (i, p0) in params.iter().enumerate() {
            let numeric = check::finite_diff(p0, 1e-6, |p| {
                let mut ps: Vec<ArrayD<f64>> = params.iter().map(|a| (*a).clone()).collect();
                ps[i] = p.clone();
                eval(&ps[0], &ps[1], &ps[2], &ps[3]).0
            });
            let err = check::max_rel_error(&analytic[i], &numeric);
            assert!(err < 1e-6, "param {i} rel err {err}");
        }
    }

    #[test]
    fn broadcast_ops_match_finite_differences() {
        let mut rng = crate::rng::master_rng(9);
        let x0 = randn(&mut rng, &[3, 2, 2]);
        let run = |x: &ArrayD<f64>| {
            let t = Tape::new();
            let xv = t.var(x.clone());
            let norm = xv.square().sum_channels().add_scalar(1e-3).sqrt();
            let unit = xv.div_bcast0(norm);
            let y = unit.mul_bcast0(norm.mul_scalar(0.5)).square().mean();
            let g = t.backward(y);
            (y.scalar_value(), g.wrt(xv))
        };
        let (_, analytic) = run(&x0);
        let numeric = check::finite_diff(&x0, 1e-6, |v| run(v).0);
        let err = check::max_rel_error(&analytic, &numeric);
        assert!(err < 1e-6, "rel err {err}");
    }

    #[test]
    fn concat_upsample_match_finite_differences() {
        let mut rng = crate::rng::master_rng(13);
        let a0 = randn(&mut rng, &[1, 2, 2]);
        let b0 = randn(&mut rng, &[2, 2, 2]);
        let run = |a: &ArrayD<f64>, b: &ArrayD<f64>| {
            let t = Tape::new();
            let av = t.var(a.clone());
            let bv = t.var(b.clone());
            let y = Var::concat0(&[av, bv]).upsample2().square().sum();
            let g = t.backward(y);
            (y.scalar_value(), g.wrt(av), g.wrt(bv))
        };
        let (_, ga, gb) = run(&a0, &b0);
        let na = check::finite_diff(&a0, 1e-6, |v| run(v, &b0).0);
        let nb = check::finite_diff(&b0, 1e-6, |v| run(&a0, v).0);
        assert!(check::max_rel_error(&ga, &na) < 1e-6);
        assert!(check::max_rel_error(&gb, &nb) < 1e-6);
    }

    #[test]
    fn cosine_of_identical_inputs_is_one() {
        let t = Tape::new();
        let a = t.var(ArrayD::from_shape_fn(IxDyn(&[4]), |i| i[0] as f64 + 1.0));
        let c = a.cosine_flat(a);
        assert!((c.scalar_value() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn cosine_zero_norm_is_zero() {
        let t = Tape::new();
        let a = t.var(ArrayD::zeros(IxDyn(&[4])));
        let b = t.var(ArrayD::from_elem(IxDyn(&[4]), 2.0));
        assert_eq!(a.cosine_flat(b).scalar_value(), 0.0);
    }
}
