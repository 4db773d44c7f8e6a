//! Central finite-difference checks of every differentiable operation, in
//! f64.
//!
//! Non-scalar outputs are reduced to `Σ out ⊙ R` with a fixed random `R`,
//! so every output element contributes. An element passes when
//! `|analytic − numeric| ≤ tol · max(|analytic|, |numeric|, 1e-3)`; the
//! floor keeps near-zero gradients from turning round-off into failures.

use crate::autograd::{Tape, Var};
use crate::error::Result;
use crate::layers::{self, BatchNormMode, ConvSpec};
use crate::tensor::{rng_fill, ConvGeometry, Distribution, SplitSeed, Tensor};
use crate::wgan::gradient_penalty;

pub const GRADCHECK_TOL: f64 = 1e-4;
const STEP: f64 = 1e-6;
const FLOOR: f64 = 1e-3;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheck {
    pub name: String,
    pub max_rel_err: f64,
    pub elements: usize,
    pub passed: bool,
}

type Func = dyn Fn(&[Var<f64>]) -> Result<Var<f64>>;

fn reduce(out: &Var<f64>, seed: u64) -> Result<Var<f64>> {
    if out.dims().is_empty() {
        return Ok(out.clone());
    }
    let r = out.tape().constant(rng_fill(Distribution::Normal, out.shape(), seed));
    out.mul(&r)?.sum_all()
}

fn eval(f: &Func, inputs: &[Tensor<f64>], seed: u64) -> Result<f64> {
    let tape = Tape::new();
    // leaves, so functions that differentiate internally still can
    let vars: Vec<Var<f64>> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    reduce(&f(&vars)?, seed)?.value().item()
}

/// Compares the tape gradient of `f` with central differences in every
/// input element.
pub fn check(name: &str, inputs: Vec<Tensor<f64>>, f: &Func, seed: u64) -> Result<GradCheck> {
    check_with_tol(name, inputs, f, seed, GRADCHECK_TOL)
}

pub fn check_with_tol(name: &str, inputs: Vec<Tensor<f64>>, f: &Func, seed: u64, tol: f64) -> Result<GradCheck> {
    let tape = Tape::new();
    let vars: Vec<Var<f64>> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let loss = reduce(&f(&vars)?, seed)?;
    let refs: Vec<&Var<f64>> = vars.iter().collect();
    let analytic = loss.grad(&refs, false)?.tensors();

    let mut worst = 0f64;
    let mut elements = 0;
    for (i, input) in inputs.iter().enumerate() {
        for j in 0..input.numel() {
            let mut shifted = inputs.clone();
            shifted[i].data_mut()[j] = input.data()[j] + STEP;
            let up = eval(f, &shifted, seed)?;
            shifted[i].data_mut()[j] = input.data()[j] - STEP;
            let down = eval(f, &shifted, seed)?;
            let numeric = (up - down) / (2.0 * STEP);
            let a = analytic[i].data()[j];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(FLOOR);
            worst = worst.max(rel);
            elements += 1;
        }
    }
    Ok(GradCheck {
        name: name.to_string(),
        max_rel_err: worst,
        elements,
        passed: worst <= tol,
    })
}

/// Random values whose magnitude stays ≥ `gap`, keeping kinks (0 for
/// ReLU-type ops) and ties (max) out of the difference stencil.
fn away_from_zero(shape: &[usize], gap: f64, seed: u64) -> Tensor<f64> {
    rng_fill::<f64>(Distribution::Uniform(-1.0, 1.0), shape, seed).map(|v| if v < 0.0 { v - gap } else { v + gap })
}

fn normal(shape: &[usize], seed: u64) -> Tensor<f64> {
    rng_fill(Distribution::Normal, shape, seed)
}

fn positive(shape: &[usize], seed: u64) -> Tensor<f64> {
    rng_fill(Distribution::Uniform(0.5, 2.0), shape, seed)
}

/// Distinct values (spacing 0.05 after a seeded shuffle), so every max is
/// unique by a margin.
fn distinct(shape: &[usize], seed: u64) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let keys: Tensor<f64> = rng_fill(Distribution::Uniform(0.0, 1.0), [n], seed);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| keys.data()[a].total_cmp(&keys.data()[b]));
    let mut data = vec![0.0; n];
    for (rank, &i) in order.iter().enumerate() {
        data[i] = rank as f64 * 0.05 - 1.0;
    }
    Tensor::new(shape, data).expect("shape matches")
}

/// `Σ ∂(Σ f(x) ⊙ R₁)/∂x ⊙ R₂` — differentiating it exercises the backward
/// rules of `f` as graph operations.
fn grad_of(f: impl Fn(&[Var<f64>]) -> Result<Var<f64>> + 'static, seed: u64) -> Box<Func> {
    Box::new(move |v: &[Var<f64>]| {
        let inner = reduce(&f(v)?, seed.split(1))?;
        let refs: Vec<&Var<f64>> = v.iter().collect();
        let grads = inner.grad(&refs, true)?.grads;
        let mut total: Option<Var<f64>> = None;
        for (k, g) in grads.iter().enumerate() {
            let term = reduce(g, seed.split(10 + k as u64))?;
            total = Some(match total {
                Some(t) => t.add(&term)?,
                None => term,
            });
        }
        Ok(total.expect("at least one input"))
    })
}

/// The gradient penalty of a two-layer dense critic
/// `tanh(x·W₁ + b₁)·w₂` as a function of `(W₁, b₁, w₂)`, on fixed inputs.
pub fn dense_critic_penalty(x_hat: Tensor<f64>) -> impl Fn(&[Var<f64>]) -> Result<Var<f64>> {
    move |p: &[Var<f64>]| {
        let tape = p[0].tape();
        let n = x_hat.dims()[0];
        let critic = |x: &Var<f64>| {
            let h = layers::linear(x, &p[0], &p[1])?.tanh()?;
            h.matmul(&p[2])?.reshape([n])
        };
        gradient_penalty(&critic, &tape.leaf(x_hat.clone()))
    }
}

/// Runs the full suite. Every entry is independent and seeded from `seed`.
pub fn run_suite(seed: u64) -> Result<Vec<GradCheck>> {
    let s = |k: u64| seed.split(k);
    let mut cases: Vec<(&str, Vec<Tensor<f64>>, Box<Func>)> = Vec::new();
    let sh = [2usize, 3, 2];

    cases.push(("add", vec![normal(&sh, s(1)), normal(&sh, s(2))], Box::new(|v| v[0].add(&v[1]))));
    cases.push(("sub", vec![normal(&sh, s(3)), normal(&sh, s(4))], Box::new(|v| v[0].sub(&v[1]))));
    cases.push(("mul", vec![normal(&sh, s(5)), normal(&sh, s(6))], Box::new(|v| v[0].mul(&v[1]))));
    cases.push((
        "div_or_zero",
        vec![normal(&sh, s(7)), away_from_zero(&sh, 0.5, s(8))],
        Box::new(|v| v[0].div_or_zero(&v[1])),
    ));
    cases.push(("neg", vec![normal(&sh, s(9))], Box::new(|v| v[0].neg())));
    cases.push(("scale", vec![normal(&sh, s(10))], Box::new(|v| v[0].scale(-1.7))));
    cases.push(("add_scalar", vec![normal(&sh, s(11))], Box::new(|v| v[0].add_scalar(0.3))));
    cases.push(("powf", vec![positive(&sh, s(12))], Box::new(|v| v[0].powf(-0.5))));
    cases.push(("square", vec![normal(&sh, s(13))], Box::new(|v| v[0].square())));
    cases.push(("sqrt", vec![positive(&sh, s(14))], Box::new(|v| v[0].sqrt())));
    cases.push(("tanh", vec![normal(&sh, s(15))], Box::new(|v| v[0].tanh())));
    cases.push(("relu", vec![away_from_zero(&sh, 0.1, s(16))], Box::new(|v| v[0].relu())));
    cases.push((
        "leaky_relu",
        vec![away_from_zero(&sh, 0.1, s(17))],
        Box::new(|v| v[0].leaky_relu(0.2)),
    ));
    cases.push(("expand", vec![normal(&[3, 1], s(18))], Box::new(|v| v[0].expand([2, 3, 4]))));
    cases.push(("sum_to", vec![normal(&[2, 3, 4], s(19))], Box::new(|v| v[0].sum_to([3, 1]))));
    cases.push(("reshape", vec![normal(&sh, s(20))], Box::new(|v| v[0].reshape([3, 4]))));
    cases.push(("permute", vec![normal(&sh, s(21))], Box::new(|v| v[0].permute(&[2, 0, 1]))));
    cases.push((
        "slice",
        vec![normal(&[3, 4, 2], s(22))],
        Box::new(|v| v[0].slice(&[1, 0, 1], &[3, 3, 2])),
    ));
    cases.push(("pad", vec![normal(&sh, s(23))], Box::new(|v| v[0].pad(&[1, 0, 2], &[0, 1, 1]))));
    cases.push((
        "concat",
        vec![normal(&[1, 3], s(24)), normal(&[2, 3], s(25))],
        Box::new(|v| Var::concat(&[&v[0], &v[1]])),
    ));
    cases.push(("sum", vec![normal(&sh, s(26))], Box::new(|v| v[0].sum(&[0, 2]))));
    cases.push(("mean", vec![normal(&sh, s(27))], Box::new(|v| v[0].mean(&[1]))));
    cases.push(("max", vec![distinct(&sh, s(28))], Box::new(|v| v[0].max(&[1]))));
    cases.push((
        "matmul",
        vec![normal(&[3, 4], s(29)), normal(&[4, 2], s(30))],
        Box::new(|v| v[0].matmul(&v[1])),
    ));

    let g = ConvGeometry::cubic(4, 2, 1);
    let g3 = ConvGeometry {
        kernel: [3, 2, 3],
        stride: [1, 2, 2],
        pad: [1, 0, 1],
    };
    cases.push((
        "conv3d",
        vec![normal(&[2, 4, 4, 4, 2], s(31)), normal(&[3, 4, 4, 4, 2], s(32))],
        Box::new(move |v| v[0].conv3d(&v[1], &g)),
    ));
    cases.push((
        "conv3d_anisotropic",
        vec![normal(&[1, 3, 4, 5, 2], s(33)), normal(&[2, 3, 2, 3, 2], s(34))],
        Box::new(move |v| v[0].conv3d(&v[1], &g3)),
    ));
    cases.push((
        "conv3d_transposed",
        vec![normal(&[2, 2, 2, 2, 3], s(35)), normal(&[3, 4, 4, 4, 2], s(36))],
        Box::new(move |v| v[0].conv3d_transposed(&v[1], &g, [4, 4, 4])),
    ));
    cases.push((
        "conv3d_weight_grad",
        vec![normal(&[2, 4, 4, 4, 2], s(37)), normal(&[2, 2, 2, 2, 3], s(38))],
        Box::new(move |v| v[0].conv3d_weight_grad(&v[1], &g)),
    ));

    let spec = ConvSpec::standard(2, 3, false);
    cases.push((
        "conv_layer_bias",
        vec![normal(&[1, 4, 4, 4, 2], s(39)), normal(&spec.weight_shape(), s(40)), normal(&[3], s(41))],
        Box::new(move |v| layers::conv(&v[0], &spec, &v[1], Some(&v[2]))),
    ));
    let tspec = ConvSpec::standard(3, 2, true);
    cases.push((
        "conv_transposed_layer_bias",
        vec![normal(&[1, 2, 2, 2, 3], s(42)), normal(&tspec.weight_shape(), s(43)), normal(&[2], s(44))],
        Box::new(move |v| layers::conv(&v[0], &tspec, &v[1], Some(&v[2]))),
    ));
    cases.push((
        "linear",
        vec![normal(&[3, 4], s(45)), normal(&[4, 2], s(46)), normal(&[2], s(47))],
        Box::new(|v| layers::linear(&v[0], &v[1], &v[2])),
    ));
    cases.push((
        "batch_norm",
        vec![normal(&[4, 2, 3], s(48)), normal(&[3], s(49)), normal(&[3], s(50))],
        Box::new(|v| layers::batch_norm(&v[0], &v[1], &v[2], BatchNormMode::BatchOnly)),
    ));
    cases.push((
        "layer_norm",
        vec![normal(&[2, 3, 3], s(51)), normal(&[3], s(52)), normal(&[3], s(53))],
        Box::new(|v| layers::layer_norm(&v[0], &v[1], &v[2])),
    ));

    // second order: differentiate the gradient graph itself
    cases.push((
        "double_backward.mul_tanh",
        vec![normal(&sh, s(60)), normal(&sh, s(61))],
        grad_of(|v| v[0].mul(&v[1])?.tanh(), s(62)),
    ));
    cases.push((
        "double_backward.leaky_relu_matmul",
        vec![away_from_zero(&[3, 4], 0.1, s(63)), normal(&[4, 2], s(64))],
        grad_of(|v| v[0].leaky_relu(0.2)?.matmul(&v[1])?.square(), s(65)),
    ));
    cases.push((
        "double_backward.conv3d",
        vec![normal(&[1, 4, 4, 4, 2], s(66)), normal(&[2, 4, 4, 4, 2], s(67))],
        grad_of(move |v| v[0].conv3d(&v[1], &g)?.tanh(), s(68)),
    ));
    cases.push((
        "double_backward.conv3d_transposed",
        vec![normal(&[1, 2, 2, 2, 2], s(69)), normal(&[2, 4, 4, 4, 2], s(70))],
        grad_of(move |v| v[0].conv3d_transposed(&v[1], &g, [4, 4, 4])?.tanh(), s(71)),
    ));
    cases.push((
        "double_backward.layer_norm",
        vec![normal(&[2, 3, 2], s(72)), normal(&[2], s(73)), normal(&[2], s(74))],
        grad_of(|v| layers::layer_norm(&v[0], &v[1], &v[2])?.tanh(), s(75)),
    ));
    cases.push((
        "double_backward.sqrt_norm",
        vec![positive(&sh, s(76))],
        grad_of(|v| v[0].square()?.sum(&[1, 2])?.sqrt(), s(77)),
    ));
    cases.push((
        "gradient_penalty.dense_critic",
        vec![normal(&[4, 3], s(80)).scale(0.7), normal(&[3], s(81)), normal(&[3, 1], s(82))],
        Box::new(dense_critic_penalty(normal(&[5, 4], s(83)))),
    ));

    cases
        .into_iter()
        .enumerate()
        .map(|(i, (name, inputs, f))| check(name, inputs, f.as_ref(), s(1000 + i as u64)))
        .collect()
}
