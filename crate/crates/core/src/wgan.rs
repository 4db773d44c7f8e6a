//! Wasserstein objective with gradient penalty, and the alternating trainer.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::autograd::{Tape, Var};
use crate::data::BatchStream;
use crate::error::{Error, Result};
use crate::layers::{adam_step, AdamState, Mode};
use crate::models::{build_critic, build_generator, CriticNet, GeneratorNet, NetConfig, Scale};
use crate::tensor::{rng_fill, Distribution, Element, SplitSeed, Tensor};

/// A scoring function `(N, ...) → (N)`.
pub trait Critic<T: Element> {
    fn score(&self, x: &Var<T>) -> Result<Var<T>>;

    /// True when a sample's score depends on the rest of the batch, which
    /// invalidates the per-sample gradient penalty.
    fn batch_coupled(&self) -> bool {
        false
    }
}

impl<T: Element, F: Fn(&Var<T>) -> Result<Var<T>>> Critic<T> for F {
    fn score(&self, x: &Var<T>) -> Result<Var<T>> {
        self(x)
    }
}

/// A critic network together with its parameters bound on a tape.
pub struct BoundCritic<'a, T: Element> {
    pub net: &'a CriticNet<T>,
    pub params: Vec<Var<T>>,
}

impl<'a, T: Element> BoundCritic<'a, T> {
    pub fn new(net: &'a CriticNet<T>, tape: &Tape<T>, trainable: bool) -> Self {
        BoundCritic {
            net,
            params: net.bind(tape, trainable),
        }
    }
}

impl<T: Element> Critic<T> for BoundCritic<'_, T> {
    fn score(&self, x: &Var<T>) -> Result<Var<T>> {
        self.net.forward(&self.params, x)
    }

    fn batch_coupled(&self) -> bool {
        self.net.batch_coupled()
    }
}

/// `mean C(real) − mean C(fake)`.
pub fn wgan_value<T: Element>(critic: &impl Critic<T>, real: &Var<T>, fake: &Var<T>) -> Result<Var<T>> {
    if real.dims() != fake.dims() {
        return Err(Error::shape("wgan_value", &real.dims(), &fake.dims()));
    }
    critic.score(real)?.mean_all()?.sub(&critic.score(fake)?.mean_all()?)
}

/// `ε_i·real_i + (1 − ε_i)·fake_i` with one `ε_i` per sample.
pub fn interpolate_with<T: Element>(real: &Tensor<T>, fake: &Tensor<T>, eps: &[f64]) -> Result<Tensor<T>> {
    if real.shape() != fake.shape() {
        return Err(Error::shape("interpolate", real.dims(), fake.dims()));
    }
    let n = *real.dims().first().ok_or_else(|| Error::invalid_shape("interpolate", "rank-0 input"))?;
    if eps.len() != n {
        return Err(Error::Invalid(format!("interpolate: {} weights for {n} samples", eps.len())));
    }
    let per = real.numel() / n;
    let mut out = fake.clone();
    for (i, chunk) in out.data_mut().chunks_mut(per).enumerate() {
        let e = T::from_f64(eps[i]);
        let one_e = T::from_f64(1.0 - eps[i]);
        for (o, &r) in chunk.iter_mut().zip(&real.data()[i * per..(i + 1) * per]) {
            *o = e * r + one_e * *o;
        }
    }
    Ok(out)
}

/// Interpolation with `ε_i ~ U(0, 1)` drawn from `seed`.
pub fn interpolate<T: Element>(real: &Tensor<T>, fake: &Tensor<T>, seed: u64) -> Result<Tensor<T>> {
    let n = real.dims().first().copied().unwrap_or(0);
    let eps: Tensor<f64> = rng_fill(Distribution::Uniform(0.0, 1.0), [n.max(1)], seed);
    interpolate_with(real, fake, &eps.data()[..n])
}

/// `mean_i (‖∇ₓ C(x̂)_i‖₂ − 1)²`, each sample's gradient flattened to one
/// vector. The result stays differentiable in the critic's parameters.
pub fn gradient_penalty<T: Element>(critic: &impl Critic<T>, x_hat: &Var<T>) -> Result<Var<T>> {
    if critic.batch_coupled() {
        return Err(Error::BatchCoupledCritic);
    }
    let x = if x_hat.requires_grad() {
        x_hat.clone()
    } else {
        x_hat.tape().leaf(x_hat.value())
    };
    let dims = x.dims();
    let n = *dims.first().ok_or_else(|| Error::invalid_shape("gradient_penalty", "rank-0 input"))?;
    let scores = critic.score(&x)?;
    // scores are per-sample, so the gradient of their sum is the stack of
    // per-sample input gradients
    let g = scores.sum_all()?.grad(&[&x], true)?.grads.remove(0);
    let norms = g.reshape([n, x.value().numel() / n])?.square()?.sum(&[1])?.sqrt()?;
    norms.add_scalar(-1.0)?.square()?.mean_all()
}

pub struct CriticLoss<T: Element> {
    /// `−value + λ·penalty`.
    pub total: Var<T>,
    pub value: Var<T>,
    pub penalty: Var<T>,
}

pub fn critic_loss<T: Element>(
    critic: &impl Critic<T>,
    real: &Var<T>,
    fake: &Var<T>,
    x_hat: &Var<T>,
    lambda: f64,
) -> Result<CriticLoss<T>> {
    let value = wgan_value(critic, real, fake)?;
    let penalty = gradient_penalty(critic, x_hat)?;
    let total = value.neg()?.add(&penalty.scale(lambda)?)?;
    Ok(CriticLoss { total, value, penalty })
}

/// `−mean C(fake)`.
pub fn generator_loss<T: Element>(critic: &impl Critic<T>, fake: &Var<T>) -> Result<Var<T>> {
    critic.score(fake)?.mean_all()?.neg()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lambda: f64,
    pub critic_ratio: usize,
    pub alpha: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub batch_size: usize,
    pub total_steps: u64,
    /// Outer steps before which both learning rates are halved.
    pub lr_halve_at: Vec<u64>,
    pub seed: u64,
    pub scale: Scale,
    /// Outer steps between checkpoints; 0 writes only the final one.
    pub checkpoint_every: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lambda: 10.0,
            critic_ratio: 5,
            alpha: 2e-4,
            beta1: 0.5,
            beta2: 0.99,
            batch_size: 64,
            total_steps: 100_000,
            lr_halve_at: Vec::new(),
            seed: 0,
            scale: Scale::Full,
            checkpoint_every: 1000,
        }
    }
}

impl TrainConfig {
    /// Desk-scale smoke settings: batch 16, otherwise the defaults.
    pub fn desk() -> Self {
        TrainConfig {
            batch_size: 16,
            scale: Scale::Desk,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let err = |key: &str, msg: &str| {
            Err(Error::Config {
                key: key.into(),
                msg: msg.into(),
            })
        };
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return err("lambda", "must be a finite value ≥ 0");
        }
        if self.critic_ratio == 0 {
            return err("critic_ratio", "must be ≥ 1");
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return err("alpha", "must be a finite value ≥ 0");
        }
        for (key, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return err(key, "must lie in [0, 1)");
            }
        }
        if self.batch_size < 2 {
            return err("batch_size", "must be ≥ 2 (generator batch norm)");
        }
        Ok(())
    }
}

/// Diagnostics of one outer step; the critic figures come from its last
/// inner update.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepReport {
    pub step: u64,
    pub wasserstein_estimate: f64,
    pub penalty: f64,
    pub critic_loss: f64,
    pub generator_loss: f64,
    pub critic_grad_norm: f64,
    pub generator_grad_norm: f64,
    pub lr: f64,
    pub wall_ms: f64,
}

impl StepReport {
    pub fn all_finite(&self) -> bool {
        [
            self.wasserstein_estimate,
            self.penalty,
            self.critic_loss,
            self.generator_loss,
            self.critic_grad_norm,
            self.generator_grad_norm,
        ]
        .iter()
        .all(|v| v.is_finite())
    }
}

pub(crate) fn global_norm<T: Element>(grads: &[Tensor<T>]) -> f64 {
    grads
        .iter()
        .flat_map(|g| g.data().iter())
        .map(|v| v.as_f64() * v.as_f64())
        .sum::<f64>()
        .sqrt()
}

pub(crate) fn scalar<T: Element>(v: &Var<T>, what: &str, seed: u64) -> Result<f64> {
    let x = v.value().item()?.as_f64();
    if x.is_finite() {
        Ok(x)
    } else {
        Err(Error::NonFinite(format!("{what} = {x} (batch seed {seed:#018x})")))
    }
}

// seed streams
pub(crate) const STREAM_INIT_G: u64 = 1;
pub(crate) const STREAM_INIT_C: u64 = 2;
pub(crate) const STREAM_INIT_E: u64 = 3;
pub(crate) const STREAM_STEPS: u64 = 4;

/// One critic update on `real` against generated `fake`; returns the loss
/// parts and the gradient norm.
pub(crate) fn critic_update(
    critic: &mut CriticNet<f32>,
    opt: &mut AdamState<f32>,
    real: Tensor<f32>,
    fake: Tensor<f32>,
    lambda: f64,
    seed: u64,
) -> Result<(CriticLoss<f32>, f64)> {
    let tape = Tape::new();
    let (loss, grads) = {
        let bound = BoundCritic::new(critic, &tape, true);
        let x_hat = tape.leaf(interpolate(&real, &fake, seed.split(1))?);
        let loss = critic_loss(&bound, &tape.constant(real), &tape.constant(fake), &x_hat, lambda)?;
        scalar(&loss.total, "critic loss", seed)?;
        let refs: Vec<&Var<f32>> = bound.params.iter().collect();
        let grads = loss.total.grad(&refs, false)?.tensors();
        (loss, grads)
    };
    let norm = global_norm(&grads);
    adam_step(&mut critic.params, &grads, opt).map_err(|e| with_seed(e, seed))?;
    Ok((loss, norm))
}

pub(crate) fn with_seed(e: Error, seed: u64) -> Error {
    match e {
        Error::NonFinite(m) => Error::NonFinite(format!("{m} (batch seed {seed:#018x})")),
        other => other,
    }
}

pub(crate) fn latent(n: usize, z_dim: usize, seed: u64) -> Tensor<f32> {
    rng_fill(Distribution::Normal, [n, z_dim], seed)
}

/// Generator, critic and their optimizers.
pub struct WganTrainer {
    pub cfg: TrainConfig,
    pub net: NetConfig,
    pub generator: GeneratorNet<f32>,
    pub critic: CriticNet<f32>,
    pub gen_opt: AdamState<f32>,
    pub critic_opt: AdamState<f32>,
    /// Completed outer steps.
    pub step: u64,
}

impl WganTrainer {
    pub fn new(cfg: TrainConfig, net: NetConfig) -> Result<Self> {
        cfg.validate()?;
        net.validate()?;
        let generator = build_generator(&net, cfg.seed.split(STREAM_INIT_G))?;
        let critic = build_critic(&net, cfg.seed.split(STREAM_INIT_C))?;
        let gen_opt = AdamState::new(&generator.params, cfg.alpha, cfg.beta1, cfg.beta2);
        let critic_opt = AdamState::new(&critic.params, cfg.alpha, cfg.beta1, cfg.beta2);
        Ok(WganTrainer {
            cfg,
            net,
            generator,
            critic,
            gen_opt,
            critic_opt,
            step: 0,
        })
    }

    fn apply_schedule(&mut self) {
        if self.cfg.lr_halve_at.contains(&self.step) {
            self.gen_opt.alpha /= 2.0;
            self.critic_opt.alpha /= 2.0;
        }
    }

    fn sample(&mut self, n: usize, seed: u64, trainable: bool) -> Result<(Tape<f32>, Vec<Var<f32>>, Var<f32>)> {
        let tape = Tape::new();
        let params = self.generator.bind(&tape, trainable);
        let z = tape.constant(latent(n, self.net.z_dim, seed));
        let fake = self.generator.forward(&params, &z, Mode::Train)?;
        Ok((tape, params, fake))
    }

    /// `critic_ratio` critic updates followed by one generator update.
    pub fn train_step(&mut self, data: &mut dyn BatchStream) -> Result<StepReport> {
        let started = Instant::now();
        self.apply_schedule();
        let step_seed = self.cfg.seed.split(STREAM_STEPS).split(self.step);
        let n = self.cfg.batch_size;

        let mut last = None;
        for k in 0..self.cfg.critic_ratio {
            let seed = step_seed.split(k as u64);
            let real = data.next_batch()?;
            if real.dims()[0] != n {
                return Err(Error::shape("train_step", &[n], &real.dims()[..1]));
            }
            let (_, _, fake) = self.sample(n, seed, false)?;
            let (loss, norm) = critic_update(&mut self.critic, &mut self.critic_opt, real, fake.value(), self.cfg.lambda, seed)?;
            last = Some((loss, norm, seed));
        }
        let (loss, critic_grad_norm, critic_seed) = last.expect("critic_ratio ≥ 1");

        // fresh latent codes for the generator update
        let seed = step_seed.split(u64::MAX);
        let (tape, params, fake) = self.sample(n, seed, true)?;
        let critic = BoundCritic::new(&self.critic, &tape, false);
        let g_loss = generator_loss(&critic, &fake)?;
        let generator_loss = scalar(&g_loss, "generator loss", seed)?;
        let refs: Vec<&Var<f32>> = params.iter().collect();
        let grads = g_loss.grad(&refs, false)?.tensors();
        adam_step(&mut self.generator.params, &grads, &mut self.gen_opt).map_err(|e| with_seed(e, seed))?;

        let report = StepReport {
            step: self.step,
            wasserstein_estimate: scalar(&loss.value, "wasserstein estimate", critic_seed)?,
            penalty: scalar(&loss.penalty, "gradient penalty", critic_seed)?,
            critic_loss: scalar(&loss.total, "critic loss", critic_seed)?,
            generator_loss,
            critic_grad_norm,
            generator_grad_norm: global_norm(&grads),
            lr: self.gen_opt.alpha,
            wall_ms: started.elapsed().as_secs_f64() * 1e3,
        };
        if !report.all_finite() {
            return Err(Error::NonFinite(format!("step report {report:?} (batch seed {seed:#018x})")));
        }
        self.step += 1;
        Ok(report)
    }

    /// Runs until `cfg.total_steps` outer steps are complete, calling `hook`
    /// after every step.
    pub fn train_loop(
        &mut self,
        data: &mut dyn BatchStream,
        hook: &mut dyn FnMut(&StepReport, &Self) -> Result<()>,
    ) -> Result<()> {
        while self.step < self.cfg.total_steps {
            let report = self.train_step(data)?;
            hook(&report, self)?;
        }
        Ok(())
    }

    /// Samples `n` clips from fresh latent codes, with running batch-norm
    /// statistics.
    pub fn generate(&mut self, n: usize, seed: u64) -> Result<Tensor<f32>> {
        generate(&mut self.generator, n, seed)
    }
}

pub fn generate(generator: &mut GeneratorNet<f32>, n: usize, seed: u64) -> Result<Tensor<f32>> {
    let tape = Tape::new();
    let params = generator.bind(&tape, false);
    let z = tape.constant(latent(n, generator.cfg.z_dim, seed));
    Ok(generator.forward(&params, &z, Mode::Eval)?.value())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Batcher, SynthPreset, SynthSource, SynthSpec};
    use crate::models::NormKind;

    fn linear_critic(w: Tensor<f64>) -> impl Fn(&Var<f64>) -> Result<Var<f64>> {
        move |x: &Var<f64>| {
            let n = x.dims()[0];
            let flat = x.reshape([n, w.numel()])?;
            let wv = x.tape().constant(w.reshape([w.numel(), 1])?);
            flat.matmul(&wv)?.reshape([n])
        }
    }

    #[test]
    fn value_examples() {
        let tape = Tape::<f64>::new();
        let c = |x: &Var<f64>| x.sum(&[1])?.scale(0.0)?.add_scalar(3.0);
        let a = tape.constant(rng_fill(Distribution::Normal, [4, 3], 1));
        let b = tape.constant(rng_fill(Distribution::Normal, [4, 3], 2));
        assert_eq!(wgan_value(&c, &a, &b).unwrap().value().item().unwrap(), 0.0);

        let w = Tensor::from_f64([3], &[0.5, -2.0, 4.0]).unwrap();
        let lin = linear_critic(w);
        let ones = tape.constant(Tensor::ones([2, 3]));
        let zeros = tape.constant(Tensor::zeros([2, 3]));
        assert!((wgan_value(&lin, &ones, &zeros).unwrap().value().item().unwrap() - 2.5).abs() < 1e-12);
        let ab = wgan_value(&lin, &a, &b).unwrap().value().item().unwrap();
        let ba = wgan_value(&lin, &b, &a).unwrap().value().item().unwrap();
        assert!((ab + ba).abs() < 1e-12);
    }

    #[test]
    fn interpolation_endpoints() {
        let real = Tensor::<f64>::full([2, 3], 2.0);
        let fake = Tensor::<f64>::zeros([2, 3]);
        assert_eq!(interpolate_with(&real, &fake, &[1.0, 1.0]).unwrap(), real);
        assert_eq!(interpolate_with(&real, &fake, &[0.0, 0.0]).unwrap(), fake);
        let mid = interpolate_with(&real, &fake, &[0.25, 0.25]).unwrap();
        assert!(mid.data().iter().all(|&v| v == 0.5));
        let r = interpolate(&real, &fake, 3).unwrap();
        // one ε per sample
        assert!(r.data()[..3].iter().all(|&v| v == r.data()[0]));
        assert!(r.data().iter().all(|&v| (0.0..2.0).contains(&v)));
    }

    #[test]
    fn penalty_analytic_cases() {
        let tape = Tape::<f64>::new();
        let w = rng_fill::<f64>(Distribution::Normal, [2, 3], 7);
        let x = tape.leaf(rng_fill(Distribution::Normal, [5, 2, 3], 8));
        let gp = gradient_penalty(&linear_critic(w.clone()), &x).unwrap().value().item().unwrap();
        let nw = w.square().sum_all().sqrt();
        assert!((gp - (nw - 1.0).powi(2)).abs() < 1e-12);

        let sum = |x: &Var<f64>| x.sum(&[1]);
        let x = tape.constant(rng_fill(Distribution::Normal, [3, 9], 1));
        let gp = gradient_penalty(&sum, &x).unwrap().value().item().unwrap();
        assert!((gp - 4.0).abs() < 1e-12);

        let id = |x: &Var<f64>| x.reshape([x.dims()[0]]);
        let x = tape.constant(rng_fill(Distribution::Normal, [4, 1], 1));
        assert_eq!(gradient_penalty(&id, &x).unwrap().value().item().unwrap(), 0.0);
    }

    #[test]
    fn critic_loss_examples() {
        let tape = Tape::<f64>::new();
        let w = Tensor::from_f64([2], &[0.6, 0.8]).unwrap();
        let real = tape.constant(rng_fill(Distribution::Normal, [3, 2], 1));
        let fake = tape.constant(rng_fill(Distribution::Normal, [3, 2], 2));
        let xh = tape.leaf(rng_fill(Distribution::Normal, [3, 2], 3));
        let c = linear_critic(w);
        let l0 = critic_loss(&c, &real, &fake, &xh, 0.0).unwrap();
        let l10 = critic_loss(&c, &real, &fake, &xh, 10.0).unwrap();
        let v = l0.value.value().item().unwrap();
        assert_eq!(l0.total.value().item().unwrap(), -v);
        assert!((l10.total.value().item().unwrap() + v).abs() < 1e-12);

        // higher scores on fakes lower the generator loss
        let shift = |b: f64| move |x: &Var<f64>| x.sum(&[1])?.add_scalar(b);
        let g1 = generator_loss(&shift(0.0), &fake).unwrap().value().item().unwrap();
        let g2 = generator_loss(&shift(1.0), &fake).unwrap().value().item().unwrap();
        assert!(g2 < g1);
    }

    #[test]
    fn batch_norm_critic_rejected() {
        let mut net = NetConfig::desk();
        net.critic_norm = NormKind::Batch;
        let critic = build_critic::<f64>(&net, 1).unwrap();
        let tape = Tape::new();
        let bound = BoundCritic::new(&critic, &tape, true);
        let x = tape.leaf(Tensor::zeros([2, 8, 16, 16, 3]));
        assert!(matches!(gradient_penalty(&bound, &x), Err(Error::BatchCoupledCritic)));
    }

    fn tiny_net() -> NetConfig {
        NetConfig {
            frames: 4,
            height: 8,
            width: 8,
            base_width: 4,
            z_dim: 8,
            gen_blocks: 2,
            critic_blocks: 2,
            encoder_blocks: 2,
            ..NetConfig::desk()
        }
    }

    fn tiny_data(seed: u64) -> Batcher<SynthSource> {
        let spec = SynthSpec::desk(SynthPreset::MovingSquaresStaticBg, seed).with_extents(4, 8, 8);
        let spec = SynthSpec { size: (2, 3), ..spec };
        Batcher::new(SynthSource { spec, count: 16 }, 4, seed).unwrap()
    }

    struct Counting<'a> {
        inner: &'a mut dyn BatchStream,
        calls: usize,
    }

    impl BatchStream for Counting<'_> {
        fn next_batch(&mut self) -> Result<Tensor<f32>> {
            self.calls += 1;
            self.inner.next_batch()
        }
    }

    #[test]
    fn one_step_runs_five_critic_updates() {
        let cfg = TrainConfig {
            batch_size: 4,
            ..TrainConfig::desk()
        };
        let mut tr = WganTrainer::new(cfg, tiny_net()).unwrap();
        let mut data = tiny_data(1);
        let mut counting = Counting {
            inner: &mut data,
            calls: 0,
        };
        tr.train_step(&mut counting).unwrap();
        assert_eq!(counting.calls, 5);
        assert_eq!(tr.critic_opt.t, 5);
        assert_eq!(tr.gen_opt.t, 1);
    }

    #[test]
    fn zero_learning_rate_freezes_parameters() {
        let cfg = TrainConfig {
            batch_size: 4,
            alpha: 0.0,
            total_steps: 3,
            ..TrainConfig::desk()
        };
        let mut tr = WganTrainer::new(cfg, tiny_net()).unwrap();
        let (g0, c0) = (tr.generator.params.clone(), tr.critic.params.clone());
        tr.train_loop(&mut tiny_data(2), &mut |_, _| Ok(())).unwrap();
        assert_eq!(tr.generator.params.values(), g0.values());
        assert_eq!(tr.critic.params.values(), c0.values());
    }

    #[test]
    fn short_smoke_run_is_finite_with_positive_penalty() {
        let cfg = TrainConfig {
            batch_size: 4,
            total_steps: 50,
            lr_halve_at: vec![25],
            ..TrainConfig::desk()
        };
        let mut tr = WganTrainer::new(cfg, tiny_net()).unwrap();
        let mut reports = Vec::new();
        tr.train_loop(&mut tiny_data(3), &mut |r, _| {
            reports.push(r.clone());
            Ok(())
        })
        .unwrap();
        assert_eq!(reports.len(), 50);
        assert!(reports.iter().all(|r| r.all_finite() && r.penalty > 0.0));
        assert_eq!(reports[24].lr, 2e-4);
        assert_eq!(reports[25].lr, 1e-4);
    }
}
