//! Dense row-major tensors and the non-differentiable kernels the rest of the
//! crate builds on.
//!
//! Video batches use the `(N, T, H, W, C)` layout throughout. Tensors are
//! immutable from the caller's point of view: storage is shared behind an
//! `Arc` and copied on write.

mod conv;
mod element;
mod rng;

use std::fmt;
use std::ops::Deref;
use std::sync::Arc;

pub use conv::{conv3d, conv3d_transposed, conv3d_weight_grad, ConvGeometry};
pub use element::{gemm, DType, Element, Strides};
pub use rng::{rng_fill, Distribution, SplitSeed};
pub(crate) use rng::{seeded, unit_uniform};

use crate::error::{Error, Result};

/// Ordered list of extents.
#[derive(Clone, Default, PartialEq, Eq, Hash)]
pub struct Shape(Vec<usize>);

impl Shape {
    pub fn new(dims: impl Into<Vec<usize>>) -> Result<Self> {
        let dims = dims.into();
        if dims.contains(&0) {
            return Err(Error::invalid_shape("shape", format!("zero extent in {dims:?}")));
        }
        Ok(Shape(dims))
    }

    pub fn scalar() -> Self {
        Shape(Vec::new())
    }

    pub fn dims(&self) -> &[usize] {
        &self.0
    }

    pub fn rank(&self) -> usize {
        self.0.len()
    }

    pub fn numel(&self) -> usize {
        self.0.iter().product()
    }

    /// Row-major strides.
    pub fn strides(&self) -> Vec<usize> {
        let mut strides = vec![1; self.0.len()];
        for i in (0..self.0.len().saturating_sub(1)).rev() {
            strides[i] = strides[i + 1] * self.0[i + 1];
        }
        strides
    }
}

impl Deref for Shape {
    type Target = [usize];

    fn deref(&self) -> &[usize] {
        &self.0
    }
}

impl fmt::Debug for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self.0)
    }
}

impl From<&[usize]> for Shape {
    fn from(d: &[usize]) -> Self {
        Shape(d.to_vec())
    }
}

impl<const R: usize> From<[usize; R]> for Shape {
    fn from(d: [usize; R]) -> Self {
        Shape(d.to_vec())
    }
}

impl From<Vec<usize>> for Shape {
    fn from(d: Vec<usize>) -> Self {
        Shape(d)
    }
}

impl From<&Vec<usize>> for Shape {
    fn from(d: &Vec<usize>) -> Self {
        Shape(d.clone())
    }
}

/// Pointwise operations accepted by [`elementwise`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ElementwiseOp {
    Add,
    Sub,
    Mul,
    Div,
    Neg,
    Tanh,
    Relu,
    LeakyRelu(f64),
    Sqrt,
    Square,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReduceOp {
    Sum,
    Mean,
    Max,
}

#[derive(Clone, PartialEq)]
pub struct Tensor<T: Element = f32> {
    shape: Shape,
    data: Arc<Vec<T>>,
}

impl<T: Element> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        const SHOWN: usize = 8;
        write!(f, "Tensor<{:?}>{:?} [", T::DTYPE, self.shape)?;
        for (i, v) in self.data.iter().take(SHOWN).enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{v}")?;
        }
        if self.data.len() > SHOWN {
            write!(f, ", ...")?;
        }
        write!(f, "]")
    }
}

impl<T: Element> Tensor<T> {
    pub fn new(shape: impl Into<Shape>, data: Vec<T>) -> Result<Self> {
        let shape = Shape::new(shape.into().0)?;
        if shape.numel() != data.len() {
            return Err(Error::invalid_shape(
                "tensor",
                format!("shape {shape:?} needs {} values, got {}", shape.numel(), data.len()),
            ));
        }
        Ok(Tensor {
            shape,
            data: Arc::new(data),
        })
    }

    /// Builds a tensor whose extents are already known to be valid.
    pub(crate) fn from_parts(shape: Shape, data: Vec<T>) -> Self {
        debug_assert_eq!(shape.numel(), data.len());
        Tensor {
            shape,
            data: Arc::new(data),
        }
    }

    pub fn full(shape: impl Into<Shape>, value: T) -> Self {
        let shape = shape.into();
        let n = shape.numel();
        Tensor::from_parts(shape, vec![value; n])
    }

    pub fn zeros(shape: impl Into<Shape>) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn ones(shape: impl Into<Shape>) -> Self {
        Self::full(shape, T::one())
    }

    /// Rank-0 tensor.
    pub fn scalar(value: T) -> Self {
        Tensor::from_parts(Shape::scalar(), vec![value])
    }

    pub fn from_f64(shape: impl Into<Shape>, values: &[f64]) -> Result<Self> {
        Tensor::new(shape, values.iter().map(|&v| T::from_f64(v)).collect())
    }

    pub fn shape(&self) -> &Shape {
        &self.shape
    }

    pub fn dims(&self) -> &[usize] {
        &self.shape.0
    }

    pub fn rank(&self) -> usize {
        self.shape.rank()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn dtype(&self) -> DType {
        T::DTYPE
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    /// Mutable access; copies the buffer if it is shared.
    pub fn data_mut(&mut self) -> &mut [T] {
        Arc::make_mut(&mut self.data).as_mut_slice()
    }

    pub fn into_vec(self) -> Vec<T> {
        Arc::try_unwrap(self.data).unwrap_or_else(|shared| (*shared).clone())
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.data.iter().map(|v| v.as_f64()).collect()
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> Result<T> {
        if self.numel() != 1 {
            return Err(Error::NotScalar(self.dims().to_vec()));
        }
        Ok(self.data[0])
    }

    pub fn cast<U: Element>(&self) -> Tensor<U> {
        Tensor::from_parts(
            self.shape.clone(),
            self.data.iter().map(|v| U::from_f64(v.as_f64())).collect(),
        )
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn is_scalar_like(&self) -> bool {
        self.numel() == 1
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Tensor<T> {
        Tensor::from_parts(self.shape.clone(), self.data.iter().map(|&v| f(v)).collect())
    }

    fn zip_with(&self, other: &Tensor<T>, op: &'static str, f: impl Fn(T, T) -> T) -> Result<Tensor<T>> {
        if self.shape == other.shape {
            let data = self.data.iter().zip(other.data.iter()).map(|(&a, &b)| f(a, b)).collect();
            Ok(Tensor::from_parts(self.shape.clone(), data))
        } else if other.is_scalar_like() {
            let b = other.data[0];
            Ok(self.map(|a| f(a, b)))
        } else {
            Err(Error::shape(op, self.dims(), other.dims()))
        }
    }

    pub fn add(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        self.zip_with(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        self.zip_with(other, "sub", |a, b| a - b)
    }

    pub fn mul(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        self.zip_with(other, "mul", |a, b| a * b)
    }

    /// Strict division: any zero divisor is an error.
    pub fn div(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        if other.data.iter().any(|v| v.is_zero()) {
            return Err(Error::DivisionByZero);
        }
        self.zip_with(other, "div", |a, b| a / b)
    }

    /// Division that yields 0 wherever the divisor is 0.
    pub fn div_or_zero(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        self.zip_with(other, "div", |a, b| if b.is_zero() { T::zero() } else { a / b })
    }

    pub fn neg(&self) -> Tensor<T> {
        self.map(|v| -v)
    }

    pub fn tanh(&self) -> Tensor<T> {
        self.map(|v| v.tanh())
    }

    pub fn relu(&self) -> Tensor<T> {
        self.leaky_relu(0.0)
    }

    /// `max(x, slope·x)` for `0 ≤ slope ≤ 1`.
    pub fn leaky_relu(&self, slope: f64) -> Tensor<T> {
        let s = T::from_f64(slope);
        self.map(|v| if v > T::zero() { v } else { v * s })
    }

    pub fn sqrt(&self) -> Tensor<T> {
        self.map(|v| v.sqrt())
    }

    pub fn square(&self) -> Tensor<T> {
        self.map(|v| v * v)
    }

    pub fn powf(&self, p: f64) -> Tensor<T> {
        let p = T::from_f64(p);
        self.map(|v| v.powf(p))
    }

    pub fn scale(&self, c: f64) -> Tensor<T> {
        let c = T::from_f64(c);
        self.map(|v| v * c)
    }

    pub fn add_scalar(&self, c: f64) -> Tensor<T> {
        let c = T::from_f64(c);
        self.map(|v| v + c)
    }

    /// Inner product of the flattened buffers.
    pub fn dot(&self, other: &Tensor<T>) -> Result<T> {
        if self.numel() != other.numel() {
            return Err(Error::shape("dot", self.dims(), other.dims()));
        }
        Ok(self.data.iter().zip(other.data.iter()).map(|(&a, &b)| a * b).sum())
    }

    /// Sequential sum of the raw buffer.
    pub fn sum_all(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn mean_all(&self) -> T {
        self.sum_all() / T::from_f64(self.numel() as f64)
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, v| m.max(v.abs()))
    }

    pub fn matmul(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        if self.rank() != 2 || other.rank() != 2 || self.dims()[1] != other.dims()[0] {
            return Err(Error::shape("matmul", self.dims(), other.dims()));
        }
        let (m, k, n) = (self.dims()[0], self.dims()[1], other.dims()[1]);
        let mut out = vec![T::zero(); m * n];
        gemm(
            m,
            k,
            n,
            &self.data,
            Strides::row_major(k),
            &other.data,
            Strides::row_major(n),
            T::zero(),
            &mut out,
            Strides::row_major(n),
        );
        Ok(Tensor::from_parts(Shape(vec![m, n]), out))
    }

    pub fn reshape(&self, shape: impl Into<Shape>) -> Result<Tensor<T>> {
        let shape = Shape::new(shape.into().0)?;
        if shape.numel() != self.numel() {
            return Err(Error::shape("reshape", self.dims(), shape.dims()));
        }
        Ok(Tensor {
            shape,
            data: Arc::clone(&self.data),
        })
    }

    /// Reorders axes: output axis `i` is input axis `perm[i]`.
    pub fn permute(&self, perm: &[usize]) -> Result<Tensor<T>> {
        let rank = self.rank();
        let mut seen = vec![false; rank];
        if perm.len() != rank {
            return Err(Error::invalid_shape("permute", format!("{perm:?} for rank {rank}")));
        }
        for &p in perm {
            if p >= rank || seen[p] {
                return Err(Error::invalid_shape("permute", format!("{perm:?} is not a permutation")));
            }
            seen[p] = true;
        }
        let in_strides = self.shape.strides();
        let out_dims: Vec<usize> = perm.iter().map(|&p| self.dims()[p]).collect();
        let src_strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
        let mut out = Vec::with_capacity(self.numel());
        for_each_strided(&out_dims, &src_strides, |_, off| out.push(self.data[off]));
        Ok(Tensor::from_parts(Shape(out_dims), out))
    }

    /// Transpose of a matrix.
    pub fn t(&self) -> Result<Tensor<T>> {
        if self.rank() != 2 {
            return Err(Error::invalid_shape("transpose", format!("rank {} is not 2", self.rank())));
        }
        self.permute(&[1, 0])
    }

    /// Sub-block `start[i]..end[i]` on every axis.
    pub fn slice(&self, start: &[usize], end: &[usize]) -> Result<Tensor<T>> {
        let rank = self.rank();
        if start.len() != rank || end.len() != rank {
            return Err(Error::invalid_shape("slice", "range count differs from rank"));
        }
        for i in 0..rank {
            if start[i] >= end[i] || end[i] > self.dims()[i] {
                return Err(Error::invalid_shape(
                    "slice",
                    format!("range {}..{} out of bounds for axis {i} of {:?}", start[i], end[i], self.shape),
                ));
            }
        }
        let strides = self.shape.strides();
        let out_dims: Vec<usize> = (0..rank).map(|i| end[i] - start[i]).collect();
        let base: usize = (0..rank).map(|i| start[i] * strides[i]).sum();
        let mut out = Vec::with_capacity(out_dims.iter().product());
        for_each_strided(&out_dims, &strides, |_, off| out.push(self.data[base + off]));
        Ok(Tensor::from_parts(Shape(out_dims), out))
    }

    /// Zero padding with `before[i]`/`after[i]` elements on axis `i`.
    pub fn pad(&self, before: &[usize], after: &[usize]) -> Result<Tensor<T>> {
        let rank = self.rank();
        if before.len() != rank || after.len() != rank {
            return Err(Error::invalid_shape("pad", "padding count differs from rank"));
        }
        let out_dims: Vec<usize> = (0..rank).map(|i| before[i] + self.dims()[i] + after[i]).collect();
        let out_shape = Shape(out_dims);
        let out_strides = out_shape.strides();
        let base: usize = (0..rank).map(|i| before[i] * out_strides[i]).sum();
        let mut out = vec![T::zero(); out_shape.numel()];
        for_each_strided(self.dims(), &out_strides, |lin, off| out[base + off] = self.data[lin]);
        Ok(Tensor::from_parts(out_shape, out))
    }

    /// Concatenation along axis 0.
    pub fn concat(parts: &[&Tensor<T>]) -> Result<Tensor<T>> {
        let first = parts
            .first()
            .ok_or_else(|| Error::invalid_shape("concat", "no tensors"))?;
        let tail = &first.dims()[1..];
        let mut lead = 0;
        let mut data = Vec::new();
        for p in parts {
            if p.rank() == 0 || &p.dims()[1..] != tail {
                return Err(Error::shape("concat", first.dims(), p.dims()));
            }
            lead += p.dims()[0];
            data.extend_from_slice(&p.data);
        }
        let mut dims = vec![lead];
        dims.extend_from_slice(tail);
        Ok(Tensor::from_parts(Shape(dims), data))
    }

    /// Broadcasts to `shape`, aligning trailing axes; source extents must be
    /// 1 or equal to the target extent.
    pub fn expand(&self, shape: impl Into<Shape>) -> Result<Tensor<T>> {
        let target = shape.into();
        let src_strides = broadcast_strides(self.dims(), target.dims())
            .ok_or_else(|| Error::shape("expand", self.dims(), target.dims()))?;
        let mut out = Vec::with_capacity(target.numel());
        for_each_strided(target.dims(), &src_strides, |_, off| out.push(self.data[off]));
        Ok(Tensor::from_parts(target, out))
    }

    /// Sums over broadcast axes so the result has `shape`; the adjoint of
    /// [`Tensor::expand`].
    pub fn sum_to(&self, shape: impl Into<Shape>) -> Result<Tensor<T>> {
        let target = shape.into();
        if target == self.shape {
            return Ok(self.clone());
        }
        let dst_strides = broadcast_strides(target.dims(), self.dims())
            .ok_or_else(|| Error::shape("sum_to", self.dims(), target.dims()))?;
        let mut out = vec![T::zero(); target.numel()];
        for_each_strided(self.dims(), &dst_strides, |lin, off| out[off] += self.data[lin]);
        Ok(Tensor::from_parts(target, out))
    }

    /// Shape obtained by setting every reduced axis to extent 1.
    pub fn keepdim_shape(&self, axes: &[usize]) -> Result<Shape> {
        let mut dims = self.dims().to_vec();
        for &a in axes {
            if a >= dims.len() {
                return Err(Error::InvalidAxis {
                    op: "reduce",
                    axis: a,
                    rank: dims.len(),
                });
            }
            dims[a] = 1;
        }
        Ok(Shape(dims))
    }

    /// Shape with the reduced axes removed.
    pub fn reduced_shape(&self, axes: &[usize]) -> Result<Shape> {
        self.keepdim_shape(axes)?;
        Ok(Shape(
            self.dims()
                .iter()
                .enumerate()
                .filter(|(i, _)| !axes.contains(i))
                .map(|(_, &d)| d)
                .collect(),
        ))
    }

    /// Reduces over `axes`, removing them from the shape.
    pub fn reduce(&self, op: ReduceOp, axes: &[usize]) -> Result<Tensor<T>> {
        let keep = self.keepdim_shape(axes)?;
        let reduced = self.reduced_shape(axes)?;
        let out = match op {
            ReduceOp::Sum => self.sum_to(keep)?,
            ReduceOp::Mean => {
                let count = self.numel() / keep.numel();
                self.sum_to(keep)?.scale(1.0 / count as f64)
            }
            ReduceOp::Max => {
                let dst_strides = broadcast_strides(keep.dims(), self.dims()).expect("keepdim shape broadcasts");
                let mut out = vec![T::neg_infinity(); keep.numel()];
                for_each_strided(self.dims(), &dst_strides, |lin, off| {
                    let v = self.data[lin];
                    if v > out[off] {
                        out[off] = v;
                    }
                });
                Tensor::from_parts(keep, out)
            }
        };
        Ok(Tensor {
            shape: reduced,
            data: out.data,
        })
    }

    /// One-hot mask of the first maximum along the reduced axes.
    pub fn argmax_mask(&self, axes: &[usize]) -> Result<Tensor<T>> {
        let keep = self.keepdim_shape(axes)?;
        let dst_strides = broadcast_strides(keep.dims(), self.dims()).expect("keepdim shape broadcasts");
        let mut best = vec![(T::neg_infinity(), usize::MAX); keep.numel()];
        for_each_strided(self.dims(), &dst_strides, |lin, off| {
            let v = self.data[lin];
            if best[off].1 == usize::MAX || v > best[off].0 {
                best[off] = (v, lin);
            }
        });
        let mut mask = vec![T::zero(); self.numel()];
        for (_, lin) in best {
            mask[lin] = T::one();
        }
        Ok(Tensor::from_parts(self.shape.clone(), mask))
    }

    /// Largest absolute elementwise difference.
    pub fn max_abs_diff(&self, other: &Tensor<T>) -> Result<T> {
        if self.shape != other.shape {
            return Err(Error::shape("max_abs_diff", self.dims(), other.dims()));
        }
        Ok(self
            .data
            .iter()
            .zip(other.data.iter())
            .fold(T::zero(), |m, (&a, &b)| m.max((a - b).abs())))
    }
}

/// Applies a pointwise operation by tag; `b` is required for binary ops.
pub fn elementwise<T: Element>(op: ElementwiseOp, a: &Tensor<T>, b: Option<&Tensor<T>>) -> Result<Tensor<T>> {
    let rhs = || b.ok_or_else(|| Error::Invalid(format!("{op:?} needs a second operand")));
    match op {
        ElementwiseOp::Add => a.add(rhs()?),
        ElementwiseOp::Sub => a.sub(rhs()?),
        ElementwiseOp::Mul => a.mul(rhs()?),
        ElementwiseOp::Div => a.div(rhs()?),
        ElementwiseOp::Neg => Ok(a.neg()),
        ElementwiseOp::Tanh => Ok(a.tanh()),
        ElementwiseOp::Relu => Ok(a.relu()),
        ElementwiseOp::LeakyRelu(s) => Ok(a.leaky_relu(s)),
        ElementwiseOp::Sqrt => Ok(a.sqrt()),
        ElementwiseOp::Square => Ok(a.square()),
    }
}

/// Strides into a buffer of shape `src` when indexed by `target`-shaped
/// positions, with 0 on broadcast axes. `None` if `src` does not broadcast.
fn broadcast_strides(src: &[usize], target: &[usize]) -> Option<Vec<usize>> {
    if src.len() > target.len() {
        return None;
    }
    let lead = target.len() - src.len();
    let src_strides = Shape(src.to_vec()).strides();
    let mut out = vec![0; target.len()];
    for (i, &t) in target.iter().enumerate() {
        if i < lead {
            continue;
        }
        let s = src[i - lead];
        if s == t {
            out[i] = src_strides[i - lead];
        } else if s != 1 {
            return None;
        }
    }
    Some(out)
}

/// Visits every index of `dims` in row-major order, passing the linear index
/// and the matching offset under `strides`.
fn for_each_strided(dims: &[usize], strides: &[usize], mut f: impl FnMut(usize, usize)) {
    let total: usize = dims.iter().product();
    if total == 0 {
        return;
    }
    let rank = dims.len();
    if rank == 0 {
        f(0, 0);
        return;
    }
    let inner = dims[rank - 1];
    let inner_stride = strides[rank - 1];
    let mut idx = vec![0usize; rank];
    let mut base = 0usize;
    let mut lin = 0usize;
    loop {
        let mut off = base;
        for _ in 0..inner {
            f(lin, off);
            lin += 1;
            off += inner_stride;
        }
        // advance the outer odometer
        let mut d = rank - 1;
        loop {
            if d == 0 {
                return;
            }
            d -= 1;
            idx[d] += 1;
            base += strides[d];
            if idx[d] < dims[d] {
                break;
            }
            base -= strides[d] * dims[d];
            idx[d] = 0;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], v: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(shape, v).unwrap()
    }

    #[test]
    fn elementwise_examples() {
        let a = t(&[2], &[1.0, 2.0]);
        let b = t(&[2], &[3.0, 4.0]);
        assert_eq!(elementwise(ElementwiseOp::Add, &a, Some(&b)).unwrap().data(), &[4.0, 6.0]);
        assert_eq!(t(&[1], &[0.0]).tanh().data(), &[0.0]);
        let lr = elementwise(ElementwiseOp::LeakyRelu(0.2), &t(&[2], &[-1.0, 2.0]), None).unwrap();
        assert_eq!(lr.data(), &[-0.2, 2.0]);
        assert_eq!(a.mul(&Tensor::scalar(3.0)).unwrap().data(), &[3.0, 6.0]);
    }

    #[test]
    fn binary_shape_mismatch_names_both_shapes() {
        let err = t(&[2], &[1.0, 2.0]).add(&t(&[3], &[1.0, 2.0, 3.0])).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2]") && msg.contains("[3]"), "{msg}");
    }

    #[test]
    fn strict_division_by_zero() {
        let a = t(&[2], &[1.0, 2.0]);
        assert!(matches!(a.div(&t(&[2], &[1.0, 0.0])), Err(Error::DivisionByZero)));
        assert_eq!(a.div_or_zero(&t(&[2], &[2.0, 0.0])).unwrap().data(), &[0.5, 0.0]);
        assert!(elementwise(ElementwiseOp::Add, &a, None).is_err());
    }

    #[test]
    fn matmul_examples() {
        let id = t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]);
        let m = t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(id.matmul(&m).unwrap(), m);
        let r = t(&[1, 2], &[1.0, 2.0]).matmul(&t(&[2, 1], &[3.0, 4.0])).unwrap();
        assert_eq!(r.data(), &[11.0]);
        assert!(m.matmul(&t(&[3, 1], &[1.0, 2.0, 3.0])).is_err());
    }

    #[test]
    fn matmul_matches_triple_loop() {
        let a: Tensor<f64> = rng_fill(Distribution::Uniform(-1.0, 1.0), [3, 4], 11);
        let b: Tensor<f64> = rng_fill(Distribution::Uniform(-1.0, 1.0), [4, 2], 12);
        let c = a.matmul(&b).unwrap();
        for i in 0..3 {
            for j in 0..2 {
                let mut s = 0.0;
                for k in 0..4 {
                    s += a.data()[i * 4 + k] * b.data()[k * 2 + j];
                }
                assert!((c.data()[i * 2 + j] - s).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn reduce_examples() {
        assert_eq!(t(&[3], &[1.0, 2.0, 3.0]).reduce(ReduceOp::Mean, &[0]).unwrap().data(), &[2.0]);
        let m = t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]);
        let s = m.reduce(ReduceOp::Sum, &[0]).unwrap();
        assert_eq!(s.dims(), &[2]);
        assert_eq!(s.data(), &[4.0, 6.0]);
        assert_eq!(m.reduce(ReduceOp::Max, &[1]).unwrap().data(), &[2.0, 4.0]);
        assert!(matches!(m.reduce(ReduceOp::Sum, &[2]), Err(Error::InvalidAxis { .. })));
        let u: Tensor<f64> = rng_fill(Distribution::Uniform(0.0, 1.0), [1000], 5);
        assert!((u.reduce(ReduceOp::Mean, &[0]).unwrap().item().unwrap() - 0.5).abs() < 0.05);
    }

    #[test]
    fn layout_examples() {
        let a = t(&[2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let r = a.reshape([3, 2]).unwrap();
        assert_eq!(r.data(), a.data());
        assert!(a.reshape([4, 2]).is_err());

        let rows = t(&[3, 2], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!(rows.slice(&[1, 0], &[2, 2]).unwrap().data(), &[3.0, 4.0]);
        assert!(rows.slice(&[1, 0], &[4, 2]).is_err());

        let p = t(&[1, 1], &[7.0]).pad(&[1, 1], &[1, 1]).unwrap();
        assert_eq!(p.dims(), &[3, 3]);
        assert_eq!(p.data()[4], 7.0);
        assert_eq!(p.sum_all(), 7.0);

        assert_eq!(a.t().unwrap().data(), &[1.0, 4.0, 2.0, 5.0, 3.0, 6.0]);
    }

    #[test]
    fn expand_and_sum_to_are_adjoint() {
        let b = t(&[3], &[1.0, 2.0, 3.0]);
        let e = b.expand([2, 3]).unwrap();
        assert_eq!(e.data(), &[1.0, 2.0, 3.0, 1.0, 2.0, 3.0]);
        let col = t(&[2, 1], &[1.0, 2.0]);
        assert_eq!(col.expand([2, 2]).unwrap().data(), &[1.0, 1.0, 2.0, 2.0]);
        let y: Tensor<f64> = rng_fill(Distribution::Normal, [2, 3], 3);
        let lhs = e.dot(&y).unwrap();
        let rhs = b.dot(&y.sum_to([3]).unwrap()).unwrap();
        assert!((lhs - rhs).abs() < 1e-12);
        assert!(b.expand([2, 4]).is_err());
    }

    #[test]
    fn argmax_mask_marks_first_maximum() {
        let m = t(&[2, 3], &[1.0, 5.0, 5.0, 2.0, 0.0, -1.0]);
        assert_eq!(m.argmax_mask(&[1]).unwrap().data(), &[0.0, 1.0, 0.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn zero_extent_rejected() {
        assert!(Tensor::<f32>::new([2, 0], vec![]).is_err());
        assert!(Tensor::<f32>::new([2, 2], vec![1.0; 3]).is_err());
    }
}
