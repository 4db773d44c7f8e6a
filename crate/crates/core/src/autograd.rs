//! Reverse-mode automatic differentiation on an append-only tape.
//!
//! Every backward rule is written in terms of the same differentiable [`Var`]
//! operations used in the forward pass. Calling [`Tape::grad`] with
//! `create_graph = true` therefore leaves the gradient itself on the tape,
//! where it can be differentiated again. That is what the gradient penalty
//! needs: the penalty is a function of `∂C/∂x̂`, and the critic is trained on
//! the penalty's gradient with respect to its parameters.
//!
//! With `create_graph = false` the backward sweep still runs through the same
//! rules, but the tape is truncated back to its previous length afterwards
//! and only the resulting gradients are kept, as constants.
//!
//! Conventions:
//! * ReLU / leaky ReLU at exactly 0 use the negative-side slope.
//! * `sqrt` backward at 0 is 0 (so `‖v‖` has zero gradient at `v = 0`).
//! * Binary elementwise ops require identical shapes; use
//!   [`Var::expand`] to broadcast explicitly.

use std::cell::RefCell;
use std::fmt;
use std::rc::Rc;

use crate::error::{Error, Result};
use crate::tensor::{conv3d, conv3d_transposed, conv3d_weight_grad, ConvGeometry, Element, ReduceOp, Shape, Tensor};

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Constant,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    DivOrZero(usize, usize),
    Neg(usize),
    Scale(usize, f64),
    AddScalar(usize),
    Pow(usize, f64),
    Sqrt(usize),
    Tanh(usize),
    LeakyRelu(usize, f64),
    Expand(usize),
    SumTo(usize),
    Reshape(usize),
    Permute(usize, Vec<usize>),
    Slice(usize, Vec<usize>),
    Pad(usize, Vec<usize>),
    Concat(Vec<usize>),
    Sum(usize, Vec<usize>),
    Max(usize, Vec<usize>),
    MatMul(usize, usize),
    Conv(usize, usize, ConvGeometry),
    ConvTransposed(usize, usize, ConvGeometry),
    ConvWeightGrad(usize, usize, ConvGeometry),
}

impl Op {
    fn parents(&self) -> Vec<usize> {
        use Op::*;
        match self {
            Leaf | Constant => vec![],
            Add(a, b) | Sub(a, b) | Mul(a, b) | DivOrZero(a, b) | MatMul(a, b) => vec![*a, *b],
            Conv(a, b, _) | ConvTransposed(a, b, _) | ConvWeightGrad(a, b, _) => vec![*a, *b],
            Neg(a) | Scale(a, _) | AddScalar(a) | Pow(a, _) | Sqrt(a) | Tanh(a) | LeakyRelu(a, _) => vec![*a],
            Expand(a) | SumTo(a) | Reshape(a) | Permute(a, _) | Slice(a, _) | Pad(a, _) => vec![*a],
            Sum(a, _) | Max(a, _) => vec![*a],
            Concat(parts) => parts.clone(),
        }
    }
}

struct Node<T: Element> {
    value: Tensor<T>,
    op: Op,
    requires_grad: bool,
}

/// Append-only record of operations. Cloning a `Tape` clones the handle.
pub struct Tape<T: Element = f32> {
    nodes: Rc<RefCell<Vec<Node<T>>>>,
}

impl<T: Element> Clone for Tape<T> {
    fn clone(&self) -> Self {
        Tape {
            nodes: Rc::clone(&self.nodes),
        }
    }
}

impl<T: Element> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// A value on a [`Tape`].
pub struct Var<T: Element = f32> {
    tape: Tape<T>,
    id: usize,
}

impl<T: Element> Clone for Var<T> {
    fn clone(&self) -> Self {
        Var {
            tape: self.tape.clone(),
            id: self.id,
        }
    }
}

impl<T: Element> fmt::Debug for Var<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Var#{} {:?}", self.id, self.value())
    }
}

/// Result of [`Tape::grad`].
#[derive(Debug)]
pub struct Grads<T: Element = f32> {
    pub grads: Vec<Var<T>>,
    /// `true` where the output does not depend on the requested input; the
    /// corresponding gradient is zero.
    pub unreachable: Vec<bool>,
}

impl<T: Element> Grads<T> {
    pub fn tensors(&self) -> Vec<Tensor<T>> {
        self.grads.iter().map(Var::value).collect()
    }
}

impl<T: Element> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: Rc::new(RefCell::new(Vec::new())),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// A differentiable input.
    pub fn leaf(&self, value: Tensor<T>) -> Var<T> {
        self.push_node(value, Op::Leaf, true)
    }

    /// A value that never receives a gradient.
    pub fn constant(&self, value: Tensor<T>) -> Var<T> {
        self.push_node(value, Op::Constant, false)
    }

    fn push_node(&self, value: Tensor<T>, op: Op, requires_grad: bool) -> Var<T> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var {
            tape: self.clone(),
            id: nodes.len() - 1,
        }
    }

    fn push(&self, value: Tensor<T>, op: Op) -> Var<T> {
        let requires_grad = {
            let nodes = self.nodes.borrow();
            op.parents().iter().any(|&p| nodes[p].requires_grad)
        };
        if requires_grad {
            self.push_node(value, op, true)
        } else {
            self.push_node(value, Op::Constant, false)
        }
    }

    fn var(&self, id: usize) -> Var<T> {
        Var { tape: self.clone(), id }
    }

    fn same(&self, other: &Tape<T>) -> Result<()> {
        if Rc::ptr_eq(&self.nodes, &other.nodes) {
            Ok(())
        } else {
            Err(Error::MixedTape)
        }
    }

    /// Gradients of the scalar `output` with respect to each of `wrt`.
    ///
    /// With `create_graph` the returned gradients are themselves
    /// differentiable; otherwise they are constants and the tape is left
    /// exactly as it was before the call (plus the returned constants).
    pub fn grad(&self, output: &Var<T>, wrt: &[&Var<T>], create_graph: bool) -> Result<Grads<T>> {
        self.same(&output.tape)?;
        for w in wrt {
            self.same(&w.tape)?;
        }
        let out_value = output.value();
        if out_value.numel() != 1 {
            return Err(Error::NotScalar(out_value.dims().to_vec()));
        }
        let start_len = self.len();
        let end = output.id + 1;

        // needed[i]: node i lies on a path from some wrt node
        let mut needed = vec![false; end];
        let mut is_wrt = vec![false; end];
        for w in wrt {
            if w.id < end {
                needed[w.id] = true;
                is_wrt[w.id] = true;
            }
        }
        {
            let nodes = self.nodes.borrow();
            for i in 0..end {
                if !needed[i] && nodes[i].requires_grad && nodes[i].op.parents().iter().any(|&p| needed[p]) {
                    needed[i] = true;
                }
            }
        }

        let mut found: Vec<Option<Var<T>>> = vec![None; end];
        let mut grads: Vec<Option<Var<T>>> = vec![None; end];
        if needed[output.id] {
            grads[output.id] = Some(self.constant(Tensor::ones(out_value.shape().clone())));
        }
        for i in (0..end).rev() {
            let Some(g) = grads[i].take() else { continue };
            if is_wrt[i] {
                found[i] = Some(g.clone());
            }
            let op = self.nodes.borrow()[i].op.clone();
            for (p, gp) in self.backward(i, &op, &g, &needed)? {
                grads[p] = Some(match grads[p].take() {
                    Some(acc) => acc.add(&gp)?,
                    None => gp,
                });
            }
        }

        let mut unreachable = Vec::with_capacity(wrt.len());
        let mut values = Vec::with_capacity(wrt.len());
        for w in wrt {
            let g = if w.id < end { found[w.id].clone() } else { None };
            unreachable.push(g.is_none());
            values.push(g);
        }
        if unreachable.iter().any(|&u| u) {
            log::warn!("grad: output does not depend on some requested inputs; returning zeros");
        }

        let grads = if create_graph {
            values
                .into_iter()
                .zip(wrt)
                .map(|(g, w)| g.unwrap_or_else(|| self.constant(Tensor::zeros(w.value().shape().clone()))))
                .collect()
        } else {
            let tensors: Vec<Tensor<T>> = values
                .into_iter()
                .zip(wrt)
                .map(|(g, w)| g.map(|g| g.value()).unwrap_or_else(|| Tensor::zeros(w.value().shape().clone())))
                .collect();
            drop(found);
            drop(grads);
            self.nodes.borrow_mut().truncate(start_len);
            tensors.into_iter().map(|t| self.constant(t)).collect()
        };
        Ok(Grads { grads, unreachable })
    }

    fn backward(&self, id: usize, op: &Op, g: &Var<T>, needed: &[bool]) -> Result<Vec<(usize, Var<T>)>> {
        let v = |i: usize| self.var(i);
        let mut out = Vec::with_capacity(2);
        let mut emit = |p: usize, f: &dyn Fn() -> Result<Var<T>>| -> Result<()> {
            if needed[p] {
                out.push((p, f()?));
            }
            Ok(())
        };
        match op {
            Op::Leaf | Op::Constant => {}
            Op::Add(a, b) => {
                emit(*a, &|| Ok(g.clone()))?;
                emit(*b, &|| Ok(g.clone()))?;
            }
            Op::Sub(a, b) => {
                emit(*a, &|| Ok(g.clone()))?;
                emit(*b, &|| g.neg())?;
            }
            Op::Mul(a, b) => {
                emit(*a, &|| g.mul(&v(*b)))?;
                emit(*b, &|| g.mul(&v(*a)))?;
            }
            Op::DivOrZero(a, b) => {
                emit(*a, &|| g.div_or_zero(&v(*b)))?;
                emit(*b, &|| {
                    let bb = v(*b).square()?;
                    g.mul(&v(*a))?.div_or_zero(&bb)?.neg()
                })?;
            }
            Op::Neg(a) => emit(*a, &|| g.neg())?,
            Op::Scale(a, c) => emit(*a, &|| g.scale(*c))?,
            Op::AddScalar(a) => emit(*a, &|| Ok(g.clone()))?,
            Op::Pow(a, p) => emit(*a, &|| g.mul(&v(*a).powf(p - 1.0)?.scale(*p)?))?,
            Op::Sqrt(a) => emit(*a, &|| g.scale(0.5)?.div_or_zero(&v(id)))?,
            Op::Tanh(a) => emit(*a, &|| {
                let y = v(id);
                g.mul(&y.square()?.neg()?.add_scalar(1.0)?)
            })?,
            Op::LeakyRelu(a, slope) => emit(*a, &|| {
                let s = T::from_f64(*slope);
                let mask = v(*a).value().map(|x| if x > T::zero() { T::one() } else { s });
                g.mul(&self.constant(mask))
            })?,
            Op::Expand(a) => emit(*a, &|| g.sum_to(v(*a).value().shape().clone()))?,
            Op::SumTo(a) => emit(*a, &|| g.expand(v(*a).value().shape().clone()))?,
            Op::Reshape(a) => emit(*a, &|| g.reshape(v(*a).value().shape().clone()))?,
            Op::Permute(a, perm) => emit(*a, &|| {
                let mut inv = vec![0; perm.len()];
                for (i, &p) in perm.iter().enumerate() {
                    inv[p] = i;
                }
                g.permute(&inv)
            })?,
            Op::Slice(a, start) => emit(*a, &|| {
                let src = v(*a).value();
                let gd = g.value();
                let after: Vec<usize> = (0..start.len()).map(|i| src.dims()[i] - start[i] - gd.dims()[i]).collect();
                g.pad(start, &after)
            })?,
            Op::Pad(a, before) => emit(*a, &|| {
                let src = v(*a).value();
                let end: Vec<usize> = before.iter().zip(src.dims()).map(|(b, d)| b + d).collect();
                g.slice(before, &end)
            })?,
            Op::Concat(parts) => {
                let gd = g.value();
                let mut offset = 0;
                for &p in parts {
                    let lead = v(p).value().dims()[0];
                    let range = offset;
                    emit(p, &|| {
                        let mut start = vec![0; gd.rank()];
                        let mut end = gd.dims().to_vec();
                        start[0] = range;
                        end[0] = range + lead;
                        g.slice(&start, &end)
                    })?;
                    offset += lead;
                }
            }
            Op::Sum(a, axes) => emit(*a, &|| {
                let src = v(*a).value();
                g.reshape(src.keepdim_shape(axes)?)?.expand(src.shape().clone())
            })?,
            Op::Max(a, axes) => emit(*a, &|| {
                let src = v(*a).value();
                let mask = self.constant(src.argmax_mask(axes)?);
                g.reshape(src.keepdim_shape(axes)?)?
                    .expand(src.shape().clone())?
                    .mul(&mask)
            })?,
            Op::MatMul(a, b) => {
                emit(*a, &|| g.matmul(&v(*b).t()?))?;
                emit(*b, &|| v(*a).t()?.matmul(g))?;
            }
            Op::Conv(x, w, geom) => {
                emit(*x, &|| g.conv3d_transposed(&v(*w), geom, extents(&v(*x).value())))?;
                emit(*w, &|| v(*x).conv3d_weight_grad(g, geom))?;
            }
            Op::ConvTransposed(u, w, geom) => {
                emit(*u, &|| g.conv3d(&v(*w), geom))?;
                emit(*w, &|| g.conv3d_weight_grad(&v(*u), geom))?;
            }
            Op::ConvWeightGrad(x, dy, geom) => {
                emit(*x, &|| v(*dy).conv3d_transposed(g, geom, extents(&v(*x).value())))?;
                emit(*dy, &|| v(*x).conv3d(g, geom))?;
            }
        }
        Ok(out)
    }
}

fn extents<T: Element>(t: &Tensor<T>) -> [usize; 3] {
    let d = t.dims();
    [d[1], d[2], d[3]]
}

impl<T: Element> Var<T> {
    pub fn value(&self) -> Tensor<T> {
        self.tape.nodes.borrow()[self.id].value.clone()
    }

    pub fn dims(&self) -> Vec<usize> {
        self.tape.nodes.borrow()[self.id].value.dims().to_vec()
    }

    pub fn shape(&self) -> Shape {
        self.tape.nodes.borrow()[self.id].value.shape().clone()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.nodes.borrow()[self.id].requires_grad
    }

    pub fn tape(&self) -> &Tape<T> {
        &self.tape
    }

    /// Same value, cut from the graph.
    pub fn detach(&self) -> Var<T> {
        self.tape.constant(self.value())
    }

    /// Convenience for `tape.grad(self, wrt, create_graph)`.
    pub fn grad(&self, wrt: &[&Var<T>], create_graph: bool) -> Result<Grads<T>> {
        self.tape.grad(self, wrt, create_graph)
    }

    fn binary(&self, other: &Var<T>, op: Op, f: impl Fn(&Tensor<T>, &Tensor<T>) -> Result<Tensor<T>>) -> Result<Var<T>> {
        self.tape.same(&other.tape)?;
        let (a, b) = (self.value(), other.value());
        if a.shape() != b.shape() {
            return Err(Error::shape(op_name(&op), a.dims(), b.dims()));
        }
        let out = f(&a, &b)?;
        Ok(self.tape.push(out, op))
    }

    fn unary(&self, op: Op, f: impl Fn(&Tensor<T>) -> Result<Tensor<T>>) -> Result<Var<T>> {
        let out = f(&self.value())?;
        Ok(self.tape.push(out, op))
    }

    pub fn add(&self, other: &Var<T>) -> Result<Var<T>> {
        self.binary(other, Op::Add(self.id, other.id), |a, b| a.add(b))
    }

    pub fn sub(&self, other: &Var<T>) -> Result<Var<T>> {
        self.binary(other, Op::Sub(self.id, other.id), |a, b| a.sub(b))
    }

    pub fn mul(&self, other: &Var<T>) -> Result<Var<T>> {
        self.binary(other, Op::Mul(self.id, other.id), |a, b| a.mul(b))
    }

    /// Elementwise `a / b`, defined as 0 where `b == 0`.
    pub fn div_or_zero(&self, other: &Var<T>) -> Result<Var<T>> {
        self.binary(other, Op::DivOrZero(self.id, other.id), |a, b| a.div_or_zero(b))
    }

    pub fn neg(&self) -> Result<Var<T>> {
        self.unary(Op::Neg(self.id), |a| Ok(a.neg()))
    }

    pub fn scale(&self, c: f64) -> Result<Var<T>> {
        self.unary(Op::Scale(self.id, c), |a| Ok(a.scale(c)))
    }

    pub fn add_scalar(&self, c: f64) -> Result<Var<T>> {
        self.unary(Op::AddScalar(self.id), |a| Ok(a.add_scalar(c)))
    }

    pub fn powf(&self, p: f64) -> Result<Var<T>> {
        self.unary(Op::Pow(self.id, p), |a| Ok(a.powf(p)))
    }

    pub fn square(&self) -> Result<Var<T>> {
        self.mul(self)
    }

    pub fn sqrt(&self) -> Result<Var<T>> {
        self.unary(Op::Sqrt(self.id), |a| Ok(a.sqrt()))
    }

    pub fn tanh(&self) -> Result<Var<T>> {
        self.unary(Op::Tanh(self.id), |a| Ok(a.tanh()))
    }

    pub fn relu(&self) -> Result<Var<T>> {
        self.leaky_relu(0.0)
    }

    pub fn leaky_relu(&self, slope: f64) -> Result<Var<T>> {
        self.unary(Op::LeakyRelu(self.id, slope), |a| Ok(a.leaky_relu(slope)))
    }

    pub fn expand(&self, shape: impl Into<Shape>) -> Result<Var<T>> {
        let shape = shape.into();
        self.unary(Op::Expand(self.id), |a| a.expand(shape.clone()))
    }

    pub fn sum_to(&self, shape: impl Into<Shape>) -> Result<Var<T>> {
        let shape = shape.into();
        self.unary(Op::SumTo(self.id), |a| a.sum_to(shape.clone()))
    }

    pub fn reshape(&self, shape: impl Into<Shape>) -> Result<Var<T>> {
        let shape = shape.into();
        self.unary(Op::Reshape(self.id), |a| a.reshape(shape.clone()))
    }

    pub fn permute(&self, perm: &[usize]) -> Result<Var<T>> {
        self.unary(Op::Permute(self.id, perm.to_vec()), |a| a.permute(perm))
    }

    pub fn t(&self) -> Result<Var<T>> {
        self.unary(Op::Permute(self.id, vec![1, 0]), |a| a.t())
    }

    pub fn slice(&self, start: &[usize], end: &[usize]) -> Result<Var<T>> {
        self.unary(Op::Slice(self.id, start.to_vec()), |a| a.slice(start, end))
    }

    pub fn pad(&self, before: &[usize], after: &[usize]) -> Result<Var<T>> {
        self.unary(Op::Pad(self.id, before.to_vec()), |a| a.pad(before, after))
    }

    /// Concatenation along axis 0.
    pub fn concat(parts: &[&Var<T>]) -> Result<Var<T>> {
        let first = parts.first().ok_or_else(|| Error::invalid_shape("concat", "no inputs"))?;
        for p in parts {
            first.tape.same(&p.tape)?;
        }
        let values: Vec<Tensor<T>> = parts.iter().map(|p| p.value()).collect();
        let refs: Vec<&Tensor<T>> = values.iter().collect();
        let out = Tensor::concat(&refs)?;
        Ok(first.tape.push(out, Op::Concat(parts.iter().map(|p| p.id).collect())))
    }

    /// Sum over `axes`, removing them.
    pub fn sum(&self, axes: &[usize]) -> Result<Var<T>> {
        self.unary(Op::Sum(self.id, axes.to_vec()), |a| a.reduce(ReduceOp::Sum, axes))
    }

    pub fn mean(&self, axes: &[usize]) -> Result<Var<T>> {
        let v = self.value();
        let count = v.numel() / v.keepdim_shape(axes)?.numel();
        self.sum(axes)?.scale(1.0 / count as f64)
    }

    pub fn sum_all(&self) -> Result<Var<T>> {
        let axes: Vec<usize> = (0..self.value().rank()).collect();
        self.sum(&axes)
    }

    pub fn mean_all(&self) -> Result<Var<T>> {
        let n = self.value().numel();
        self.sum_all()?.scale(1.0 / n as f64)
    }

    pub fn max(&self, axes: &[usize]) -> Result<Var<T>> {
        self.unary(Op::Max(self.id, axes.to_vec()), |a| a.reduce(ReduceOp::Max, axes))
    }

    pub fn matmul(&self, other: &Var<T>) -> Result<Var<T>> {
        self.tape.same(&other.tape)?;
        let out = self.value().matmul(&other.value())?;
        Ok(self.tape.push(out, Op::MatMul(self.id, other.id)))
    }

    /// Strided 3-D cross-correlation, `self` is `(N,T,H,W,C_in)`, `w` is
    /// `(C_out,kT,kH,kW,C_in)`.
    pub fn conv3d(&self, w: &Var<T>, geom: &ConvGeometry) -> Result<Var<T>> {
        self.tape.same(&w.tape)?;
        let out = conv3d(&self.value(), &w.value(), geom)?;
        Ok(self.tape.push(out, Op::Conv(self.id, w.id, *geom)))
    }

    /// Adjoint of [`Var::conv3d`] in its input, producing `out_extents`.
    pub fn conv3d_transposed(&self, w: &Var<T>, geom: &ConvGeometry, out_extents: [usize; 3]) -> Result<Var<T>> {
        self.tape.same(&w.tape)?;
        let out = conv3d_transposed(&self.value(), &w.value(), geom, out_extents)?;
        Ok(self.tape.push(out, Op::ConvTransposed(self.id, w.id, *geom)))
    }

    /// `∂⟨conv3d(self, W), dy⟩/∂W`.
    pub fn conv3d_weight_grad(&self, dy: &Var<T>, geom: &ConvGeometry) -> Result<Var<T>> {
        self.tape.same(&dy.tape)?;
        let out = conv3d_weight_grad(&self.value(), &dy.value(), geom)?;
        Ok(self.tape.push(out, Op::ConvWeightGrad(self.id, dy.id, *geom)))
    }
}

fn op_name(op: &Op) -> &'static str {
    match op {
        Op::Add(..) => "add",
        Op::Sub(..) => "sub",
        Op::Mul(..) => "mul",
        Op::DivOrZero(..) => "div",
        _ => "op",
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{rng_fill, Distribution};

    fn scalar(tape: &Tape<f64>, v: f64) -> Var<f64> {
        tape.leaf(Tensor::from_f64([1], &[v]).unwrap())
    }

    #[test]
    fn square_gradient() {
        let tape = Tape::<f64>::new();
        let x = scalar(&tape, 3.0);
        let y = x.square().unwrap().sum_all().unwrap();
        let g = y.grad(&[&x], false).unwrap();
        assert_eq!(g.grads[0].value().data(), &[6.0]);
    }

    #[test]
    fn analytic_double_backward() {
        // f = ½‖x‖², ∇f = x; g = (‖∇f‖ − 1)²; ∇g = 2(‖x‖−1)·x/‖x‖
        let tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::from_f64([2], &[3.0, 4.0]).unwrap());
        let f = x.square().unwrap().sum_all().unwrap().scale(0.5).unwrap();
        let gf = f.grad(&[&x], true).unwrap().grads.remove(0);
        assert_eq!(gf.value().data(), &[3.0, 4.0]);
        let norm = gf.square().unwrap().sum_all().unwrap().sqrt().unwrap();
        let pen = norm.add_scalar(-1.0).unwrap().square().unwrap();
        assert!((pen.value().item().unwrap() - 16.0).abs() < 1e-12);
        let gg = pen.grad(&[&x], false).unwrap().grads.remove(0).value();
        assert!((gg.data()[0] - 4.8).abs() < 1e-12);
        assert!((gg.data()[1] - 6.4).abs() < 1e-12);
    }

    #[test]
    fn constant_output_has_zero_grad_and_flag() {
        let tape = Tape::<f64>::new();
        let x = scalar(&tape, 2.0);
        let c = tape.constant(Tensor::from_f64([1], &[5.0]).unwrap());
        let y = c.scale(2.0).unwrap().sum_all().unwrap();
        let g = y.grad(&[&x], false).unwrap();
        assert_eq!(g.grads[0].value().data(), &[0.0]);
        assert!(g.unreachable[0]);
    }

    #[test]
    fn non_scalar_output_rejected() {
        let tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::from_f64([2], &[1.0, 2.0]).unwrap());
        assert!(matches!(x.grad(&[&x], false), Err(Error::NotScalar(_))));
    }

    #[test]
    fn mixed_tapes_rejected() {
        let t1 = Tape::<f64>::new();
        let t2 = Tape::<f64>::new();
        let a = scalar(&t1, 1.0);
        let b = scalar(&t2, 1.0);
        assert!(matches!(a.add(&b), Err(Error::MixedTape)));
    }

    #[test]
    fn relu_subgradient_at_zero_is_zero() {
        let tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::from_f64([3], &[-1.0, 0.0, 2.0]).unwrap());
        let y = x.relu().unwrap().sum_all().unwrap();
        let g = y.grad(&[&x], false).unwrap().grads[0].value();
        assert_eq!(g.data(), &[0.0, 0.0, 1.0]);
        let y = x.leaky_relu(0.2).unwrap().sum_all().unwrap();
        let g = y.grad(&[&x], false).unwrap().grads[0].value();
        assert_eq!(g.data(), &[0.2, 0.2, 1.0]);
    }

    #[test]
    fn tanh_slope_at_origin() {
        let tape = Tape::<f64>::new();
        let x = scalar(&tape, 0.0);
        let y = x.tanh().unwrap().scale(7.0).unwrap().sum_all().unwrap();
        assert_eq!(y.grad(&[&x], false).unwrap().grads[0].value().data(), &[7.0]);
    }

    #[test]
    fn sqrt_gradient_at_zero_is_zero() {
        let tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::from_f64([2], &[0.0, 0.0]).unwrap());
        let n = x.square().unwrap().sum_all().unwrap().sqrt().unwrap();
        let g = n.grad(&[&x], false).unwrap().grads[0].value();
        assert_eq!(g.data(), &[0.0, 0.0]);
    }

    #[test]
    fn repeated_grad_is_stable() {
        let tape = Tape::<f64>::new();
        let w = tape.leaf(rng_fill(Distribution::Normal, [3, 3], 1));
        let x = tape.constant(rng_fill(Distribution::Normal, [2, 3], 2));
        let y = x.matmul(&w).unwrap().tanh().unwrap().sum_all().unwrap();
        let before = tape.len();
        let g1 = y.grad(&[&w], false).unwrap().grads[0].value();
        let g2 = y.grad(&[&w], false).unwrap().grads[0].value();
        assert_eq!(g1, g2);
        // only the returned constants were added
        assert_eq!(tape.len(), before + 2);
    }

    #[test]
    fn grad_of_sum_is_sum_of_grads() {
        let tape = Tape::<f64>::new();
        let x = tape.leaf(rng_fill(Distribution::Normal, [4], 3));
        let f = x.tanh().unwrap().sum_all().unwrap();
        let h = x.square().unwrap().mul(&x).unwrap().sum_all().unwrap();
        let both = f.add(&h).unwrap();
        let gf = f.grad(&[&x], false).unwrap().grads[0].value();
        let gh = h.grad(&[&x], false).unwrap().grads[0].value();
        let gb = both.grad(&[&x], false).unwrap().grads[0].value();
        assert!(gb.max_abs_diff(&gf.add(&gh).unwrap()).unwrap() < 1e-12);
    }

    #[test]
    fn wrt_intermediate_node() {
        let tape = Tape::<f64>::new();
        let x = scalar(&tape, 2.0);
        let h = x.scale(3.0).unwrap();
        let y = h.square().unwrap().sum_all().unwrap();
        let g = y.grad(&[&h, &x], false).unwrap();
        assert_eq!(g.grads[0].value().data(), &[12.0]);
        assert_eq!(g.grads[1].value().data(), &[36.0]);
    }
}
