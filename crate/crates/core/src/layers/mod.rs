//! Network layers over [`Var`]s and the Adam optimizer.
//!
//! Fixed choices: convolutions default to 4×4×4 kernels, stride 2 and
//! padding 1 (strided layers halve every extent, transposed layers double
//! it); leaky ReLU slope 0.2; normalization eps 1e-5; batch-norm running
//! statistics with momentum 0.9 (`running = 0.9·running + 0.1·batch`, biased
//! variance).

mod adam;
mod params;

pub use adam::{adam_step, AdamState, ADAM_EPS};
pub use params::ParamSet;

use crate::autograd::Var;
use crate::error::{Error, Result};
use crate::tensor::{rng_fill, ConvGeometry, Distribution, Element, Tensor};

pub const LEAKY_SLOPE: f64 = 0.2;
pub const NORM_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.9;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvSpec {
    pub kernel: [usize; 3],
    pub stride: [usize; 3],
    pub padding: [usize; 3],
    pub in_channels: usize,
    pub out_channels: usize,
    pub transposed: bool,
    pub bias: bool,
}

impl ConvSpec {
    /// 4×4×4 kernel, stride 2, padding 1, with bias.
    pub fn standard(in_channels: usize, out_channels: usize, transposed: bool) -> Self {
        ConvSpec {
            kernel: [4; 3],
            stride: [2; 3],
            padding: [1; 3],
            in_channels,
            out_channels,
            transposed,
            bias: true,
        }
    }

    pub fn geometry(&self) -> ConvGeometry {
        ConvGeometry {
            kernel: self.kernel,
            stride: self.stride,
            pad: self.padding,
        }
    }

    /// Kernel taps times input channels.
    pub fn fan_in(&self) -> usize {
        self.kernel.iter().product::<usize>() * self.in_channels
    }

    /// Weight layout. Strided: `(out, k, k, k, in)`. Transposed layers store
    /// the weight of the strided convolution they are the adjoint of:
    /// `(in, k, k, k, out)`.
    pub fn weight_shape(&self) -> [usize; 5] {
        let [kt, kh, kw] = self.kernel;
        if self.transposed {
            [self.in_channels, kt, kh, kw, self.out_channels]
        } else {
            [self.out_channels, kt, kh, kw, self.in_channels]
        }
    }

    pub fn output_extents(&self, input: [usize; 3]) -> Result<[usize; 3]> {
        if self.transposed {
            self.geometry().transposed_extents(input)
        } else {
            self.geometry().output_extents(input)
        }
    }
}

/// Samples from `N(0, 2 / fan_in)`.
pub fn he_init<T: Element>(shape: &[usize], fan_in: usize, seed: u64) -> Tensor<T> {
    let std = (2.0 / fan_in as f64).sqrt();
    rng_fill::<T>(Distribution::Normal, shape, seed).scale(std)
}

fn check_channels<T: Element>(x: &Var<T>, spec: &ConvSpec) -> Result<[usize; 3]> {
    let d = x.dims();
    if d.len() != 5 || d[4] != spec.in_channels {
        return Err(Error::invalid_shape(
            "conv",
            format!("input {d:?} does not carry {} channels", spec.in_channels),
        ));
    }
    Ok([d[1], d[2], d[3]])
}

fn add_channel_bias<T: Element>(y: Var<T>, bias: Option<&Var<T>>) -> Result<Var<T>> {
    match bias {
        Some(b) => {
            let shape = y.shape();
            y.add(&b.expand(shape)?)
        }
        None => Ok(y),
    }
}

/// Strided (or, for `spec.transposed`, fractionally-strided) convolution
/// plus per-channel bias.
pub fn conv<T: Element>(x: &Var<T>, spec: &ConvSpec, weight: &Var<T>, bias: Option<&Var<T>>) -> Result<Var<T>> {
    if spec.transposed {
        conv3d_transposed(x, spec, weight, bias)
    } else {
        conv3d(x, spec, weight, bias)
    }
}

pub fn conv3d<T: Element>(x: &Var<T>, spec: &ConvSpec, weight: &Var<T>, bias: Option<&Var<T>>) -> Result<Var<T>> {
    check_channels(x, spec)?;
    add_channel_bias(x.conv3d(weight, &spec.geometry())?, bias)
}

pub fn conv3d_transposed<T: Element>(
    x: &Var<T>,
    spec: &ConvSpec,
    weight: &Var<T>,
    bias: Option<&Var<T>>,
) -> Result<Var<T>> {
    let input = check_channels(x, spec)?;
    let out = spec.geometry().transposed_extents(input)?;
    add_channel_bias(x.conv3d_transposed(weight, &spec.geometry(), out)?, bias)
}

/// `x·W + b` for `x: (N, in)`, `W: (in, out)`, `b: (out)`.
pub fn linear<T: Element>(x: &Var<T>, weight: &Var<T>, bias: &Var<T>) -> Result<Var<T>> {
    let y = x.matmul(weight)?;
    let shape = y.shape();
    y.add(&bias.expand(shape)?)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics; running statistics are updated.
    Train,
    /// Running statistics.
    Eval,
}

/// Running per-channel statistics of a batch-norm layer.
#[derive(Clone, Debug, PartialEq)]
pub struct RunningStats<T: Element = f32> {
    pub mean: Tensor<T>,
    pub var: Tensor<T>,
}

impl<T: Element> RunningStats<T> {
    pub fn new(channels: usize) -> Self {
        RunningStats {
            mean: Tensor::zeros([channels]),
            var: Tensor::ones([channels]),
        }
    }

    fn update(&mut self, mean: &Tensor<T>, var: &Tensor<T>) -> Result<()> {
        let keep = 1.0 - BN_MOMENTUM;
        self.mean = self.mean.scale(BN_MOMENTUM).add(&mean.scale(keep))?;
        self.var = self.var.scale(BN_MOMENTUM).add(&var.scale(keep))?;
        Ok(())
    }
}

/// How a batch-norm layer obtains its statistics.
pub enum BatchNormMode<'a, T: Element> {
    /// Normalize with batch statistics and fold them into `running`.
    Train(&'a mut RunningStats<T>),
    /// Normalize with batch statistics only.
    BatchOnly,
    /// Normalize with the stored statistics.
    Eval(&'a RunningStats<T>),
}

/// Per-channel normalization over the batch and every spatio-temporal axis
/// (all axes but the last), followed by `gamma·x̂ + beta`.
pub fn batch_norm<T: Element>(x: &Var<T>, gamma: &Var<T>, beta: &Var<T>, mode: BatchNormMode<'_, T>) -> Result<Var<T>> {
    let dims = x.dims();
    let channels = *dims
        .last()
        .ok_or_else(|| Error::invalid_shape("batch_norm", "rank-0 input"))?;
    let shape = x.shape();
    let rows = x.value().numel() / channels;
    let flat = x.reshape([rows, channels])?;
    let normalized = match mode {
        BatchNormMode::Eval(stats) => {
            let tape = x.tape();
            let mean = tape.constant(stats.mean.clone()).expand([rows, channels])?;
            let inv = tape.constant(stats.var.add_scalar(NORM_EPS).powf(-0.5)).expand([rows, channels])?;
            flat.sub(&mean)?.mul(&inv)?
        }
        BatchNormMode::Train(_) | BatchNormMode::BatchOnly => {
            if dims[0] < 2 {
                return Err(Error::BatchTooSmall(dims[0]));
            }
            let mean = flat.mean(&[0])?;
            let centered = flat.sub(&mean.expand([rows, channels])?)?;
            let var = centered.square()?.mean(&[0])?;
            let inv = var.add_scalar(NORM_EPS)?.powf(-0.5)?;
            if let BatchNormMode::Train(stats) = mode {
                stats.update(&mean.value(), &var.value())?;
            }
            centered.mul(&inv.expand([rows, channels])?)?
        }
    };
    let y = normalized
        .mul(&gamma.expand([rows, channels])?)?
        .add(&beta.expand([rows, channels])?)?;
    y.reshape(shape)
}

/// Per-sample normalization over every non-batch axis; `gamma` and `beta`
/// are per channel (last axis). The output for sample `i` depends on
/// sample `i` only.
pub fn layer_norm<T: Element>(x: &Var<T>, gamma: &Var<T>, beta: &Var<T>) -> Result<Var<T>> {
    let shape = x.shape();
    let dims = shape.dims();
    if dims.len() < 2 {
        return Err(Error::invalid_shape("layer_norm", format!("need (N, ...), got {dims:?}")));
    }
    let n = dims[0];
    let features = x.value().numel() / n;
    let flat = x.reshape([n, features])?;
    let mean = flat.mean(&[1])?.reshape([n, 1])?.expand([n, features])?;
    let centered = flat.sub(&mean)?;
    let var = centered.square()?.mean(&[1])?;
    let inv = var.add_scalar(NORM_EPS)?.powf(-0.5)?.reshape([n, 1])?.expand([n, features])?;
    let normalized = centered.mul(&inv)?.reshape(shape.clone())?;
    normalized.mul(&gamma.expand(shape.clone())?)?.add(&beta.expand(shape)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autograd::Tape;

    fn ln_params(tape: &Tape<f64>, c: usize) -> (Var<f64>, Var<f64>) {
        (tape.constant(Tensor::ones([c])), tape.constant(Tensor::zeros([c])))
    }

    #[test]
    fn standard_spec_halves_and_doubles() {
        let down = ConvSpec::standard(3, 8, false);
        assert_eq!(down.output_extents([32, 64, 64]).unwrap(), [16, 32, 32]);
        let up = ConvSpec::standard(8, 3, true);
        assert_eq!(up.output_extents([2, 4, 4]).unwrap(), [4, 8, 8]);
        assert_eq!(down.fan_in(), 64 * 3);
        assert_eq!(up.weight_shape(), [8, 4, 4, 4, 3]);
    }

    #[test]
    fn transposed_zero_input_gives_bias() {
        let tape = Tape::<f64>::new();
        let spec = ConvSpec::standard(2, 3, true);
        let x = tape.constant(Tensor::zeros([1, 1, 2, 2, 2]));
        let w = tape.constant(he_init(&spec.weight_shape(), spec.fan_in(), 1));
        let b = tape.constant(Tensor::from_f64([3], &[0.5, -1.0, 2.0]).unwrap());
        let y = conv(&x, &spec, &w, Some(&b)).unwrap().value();
        assert_eq!(y.dims(), &[1, 2, 4, 4, 3]);
        for px in y.data().chunks(3) {
            assert_eq!(px, &[0.5, -1.0, 2.0]);
        }
    }

    #[test]
    fn conv_rejects_channel_mismatch() {
        let tape = Tape::<f32>::new();
        let spec = ConvSpec::standard(2, 3, false);
        let x = tape.constant(Tensor::zeros([1, 4, 4, 4, 5]));
        let w = tape.constant(Tensor::zeros(spec.weight_shape()));
        assert!(conv(&x, &spec, &w, None).is_err());
    }

    #[test]
    fn batch_norm_examples() {
        let tape = Tape::<f64>::new();
        let (g, b) = (tape.constant(Tensor::ones([2])), tape.constant(Tensor::from_f64([2], &[0.3, -0.7]).unwrap()));
        let constant = tape.constant(Tensor::full([4, 2], 5.0));
        let y = batch_norm(&constant, &g, &b, BatchNormMode::BatchOnly).unwrap().value();
        assert_eq!(y.data(), &[0.3, -0.7, 0.3, -0.7, 0.3, -0.7, 0.3, -0.7]);

        let (g, b) = (tape.constant(Tensor::ones([1])), tape.constant(Tensor::zeros([1])));
        let pair = tape.constant(Tensor::from_f64([2, 1], &[-1.0, 1.0]).unwrap());
        let y = batch_norm(&pair, &g, &b, BatchNormMode::BatchOnly).unwrap().value();
        let s = 1.0 / (1.0 + NORM_EPS).sqrt();
        assert!((y.data()[0] + s).abs() < 1e-12 && (y.data()[1] - s).abs() < 1e-12);
    }

    #[test]
    fn batch_norm_standardizes_each_channel() {
        let tape = Tape::<f64>::new();
        let x = tape.constant(rng_fill(Distribution::Uniform(-3.0, 5.0), [4, 2, 3, 3, 3], 4));
        let (g, b) = (tape.constant(Tensor::ones([3])), tape.constant(Tensor::zeros([3])));
        let mut stats = RunningStats::new(3);
        let y = batch_norm(&x, &g, &b, BatchNormMode::Train(&mut stats)).unwrap().value();
        let rows = y.reshape([72, 3]).unwrap();
        let mean = rows.reduce(crate::tensor::ReduceOp::Mean, &[0]).unwrap();
        let var = rows.square().reduce(crate::tensor::ReduceOp::Mean, &[0]).unwrap();
        for c in 0..3 {
            assert!(mean.data()[c].abs() < 1e-6);
            assert!((var.data()[c] - 1.0).abs() < 1e-4);
        }
        // running mean moved towards the batch mean
        assert!(stats.mean.data().iter().all(|&m| m != 0.0));
    }

    #[test]
    fn batch_norm_needs_two_samples_in_training() {
        let tape = Tape::<f32>::new();
        let x = tape.constant(Tensor::ones([1, 3]));
        let (g, b) = (tape.constant(Tensor::ones([3])), tape.constant(Tensor::zeros([3])));
        let mut stats = RunningStats::new(3);
        assert!(matches!(
            batch_norm(&x, &g, &b, BatchNormMode::Train(&mut stats)),
            Err(Error::BatchTooSmall(1))
        ));
        assert!(batch_norm(&x, &g, &b, BatchNormMode::Eval(&stats)).is_ok());
    }

    #[test]
    fn layer_norm_examples() {
        let tape = Tape::<f64>::new();
        let (g, b) = ln_params(&tape, 3);
        let x = tape.constant(Tensor::from_f64([1, 3], &[1.0, 2.0, 3.0]).unwrap());
        let y = layer_norm(&x, &g, &b).unwrap().value();
        let expect = [-1.224_744_871, 0.0, 1.224_744_871];
        for (a, e) in y.data().iter().zip(expect) {
            assert!((a - e).abs() < 1e-4, "{a} vs {e}");
        }

        let beta = tape.constant(Tensor::from_f64([3], &[0.1, 0.2, 0.3]).unwrap());
        let c = tape.constant(Tensor::full([1, 3], 4.0));
        assert_eq!(layer_norm(&c, &g, &beta).unwrap().value().data(), &[0.1, 0.2, 0.3]);
    }

    #[test]
    fn layer_norm_has_no_cross_sample_leakage() {
        let tape = Tape::<f64>::new();
        let (g, b) = ln_params(&tape, 2);
        let a: Tensor<f64> = rng_fill(Distribution::Normal, [1, 2, 2, 2, 2], 1);
        let c: Tensor<f64> = rng_fill(Distribution::Normal, [1, 2, 2, 2, 2], 2);
        let d: Tensor<f64> = rng_fill(Distribution::Normal, [1, 2, 2, 2, 2], 3);
        let ac = tape.constant(Tensor::concat(&[&a, &c]).unwrap());
        let ca = tape.constant(Tensor::concat(&[&c, &a]).unwrap());
        let ad = tape.constant(Tensor::concat(&[&a, &d]).unwrap());
        let y_ac = layer_norm(&ac, &g, &b).unwrap().value();
        let y_ca = layer_norm(&ca, &g, &b).unwrap().value();
        let y_ad = layer_norm(&ad, &g, &b).unwrap().value();
        let half = a.numel();
        assert_eq!(&y_ac.data()[..half], &y_ca.data()[half..]);
        assert_eq!(&y_ac.data()[half..], &y_ca.data()[..half]);
        assert_eq!(&y_ac.data()[..half], &y_ad.data()[..half]);
    }

    #[test]
    fn he_init_scale() {
        let w: Tensor<f64> = he_init(&[100_000], 8, 3);
        let std = (w.square().mean_all() - w.mean_all().powi(2)).sqrt();
        assert!((std - 0.5).abs() < 0.01, "{std}");
        assert!(((2.0f64 / 128.0).sqrt() - 0.125).abs() < 1e-15);
        let w1: Tensor<f64> = he_init(&[50_000], 2, 4);
        let std1 = w1.square().mean_all().sqrt();
        assert!((std1 - 1.0).abs() < 0.02);
        assert_eq!(w1, he_init(&[50_000], 2, 4));
    }
}
