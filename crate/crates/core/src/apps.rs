//! Conditional tasks: colorization, inpainting and future prediction.
//!
//! An encoder maps a condition `y` built from the real clip to a latent
//! code, the generator decodes it, and the generator/encoder pair minimizes
//! `−mean C(G(E(y))) + ν·L_AP`. The critic scores clips only, never `y`.
//! All ℓ2 losses are means over elements.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::autograd::{Tape, Var};
use crate::data::BatchStream;
use crate::error::{Error, Result};
use crate::layers::{adam_step, AdamState, Mode};
use crate::models::{build_critic, build_encoder, build_generator, CriticNet, EncoderNet, GeneratorNet, NetConfig};
use crate::tensor::{seeded, unit_uniform, Element, SplitSeed, Tensor};
use crate::wgan::{
    critic_update, generator_loss, global_norm, scalar, with_seed, BoundCritic, Critic, TrainConfig, STREAM_INIT_C,
    STREAM_INIT_E, STREAM_INIT_G, STREAM_STEPS,
};

/// Luma weights applied to `[0, 1]`-space RGB.
pub const LUMA: [f64; 3] = [0.299, 0.587, 0.114];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    #[serde(rename = "colorize-sup")]
    ColorizeSupervised,
    #[serde(rename = "colorize-unsup")]
    ColorizeUnsupervised,
    Inpaint,
    Predict,
}

impl Task {
    pub fn name(self) -> &'static str {
        match self {
            Task::ColorizeSupervised => "colorize-sup",
            Task::ColorizeUnsupervised => "colorize-unsup",
            Task::Inpaint => "inpaint",
            Task::Predict => "predict",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "colorize-sup" | "colorize_supervised" => Ok(Task::ColorizeSupervised),
            "colorize-unsup" | "colorize_unsupervised" => Ok(Task::ColorizeUnsupervised),
            "inpaint" => Ok(Task::Inpaint),
            "predict" => Ok(Task::Predict),
            _ => Err(Error::Invalid(format!("unknown task `{s}`"))),
        }
    }

    /// Channels of the condition the encoder sees.
    pub fn condition_channels(self) -> usize {
        match self {
            Task::ColorizeSupervised | Task::ColorizeUnsupervised => 1,
            Task::Inpaint | Task::Predict => 3,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HolePlacement {
    Center,
    /// One random position per clip, fixed over time.
    Random,
    /// A new random position in every frame.
    RandomPerFrame,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Corruption {
    SaltPepper { p: f64 },
    Hole { size: usize, placement: HolePlacement },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub task: Task,
    pub nu: f64,
    /// Used by inpainting only.
    pub corruption: Corruption,
}

/// Hole side scaled from 20 pixels at width 64.
pub fn scaled_hole_size(width: usize) -> usize {
    ((20.0 * width as f64) / 64.0).round().max(1.0) as usize
}

impl TaskSpec {
    pub fn new(task: Task) -> Self {
        TaskSpec {
            task,
            nu: 1000.0,
            corruption: Corruption::SaltPepper { p: 0.25 },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.nu >= 0.0 && self.nu.is_finite()) {
            return Err(Error::Config {
                key: "nu".into(),
                msg: "must be a finite value ≥ 0".into(),
            });
        }
        match self.corruption {
            Corruption::SaltPepper { p } if !(0.0..=1.0).contains(&p) => Err(Error::Config {
                key: "noise_p".into(),
                msg: "must lie in [0, 1]".into(),
            }),
            Corruption::Hole { size: 0, .. } => Err(Error::Config {
                key: "hole_size".into(),
                msg: "must be ≥ 1".into(),
            }),
            _ => Ok(()),
        }
    }
}

fn channels_last<T: Element>(op: &'static str, dims: &[usize], want: usize) -> Result<usize> {
    match dims.last() {
        Some(&c) if c == want => Ok(dims.iter().product::<usize>() / c),
        _ => Err(Error::invalid_shape(op, format!("expected {want} channels in last axis, got {dims:?}"))),
    }
}

/// RGB in `[−1, 1]` → one luma channel in `[−1, 1]`.
pub fn to_grayscale<T: Element>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let px = channels_last::<T>("to_grayscale", x.dims(), 3)?;
    let w = LUMA.map(T::from_f64);
    let (half, one) = (T::from_f64(0.5), T::one());
    let data = x
        .data()
        .chunks(3)
        .map(|c| {
            let g = w[0] * (c[0] + one) * half + w[1] * (c[1] + one) * half + w[2] * (c[2] + one) * half;
            g + g - one
        })
        .collect();
    let mut dims = x.dims().to_vec();
    *dims.last_mut().expect("checked rank") = 1;
    debug_assert_eq!(px, dims.iter().product::<usize>());
    Tensor::new(dims, data)
}

/// Differentiable [`to_grayscale`].
pub fn to_grayscale_var<T: Element>(x: &Var<T>) -> Result<Var<T>> {
    let dims = x.dims();
    let px = channels_last::<T>("to_grayscale", &dims, 3)?;
    let w = x.tape().constant(Tensor::from_f64([3, 1], &LUMA)?);
    // Σ w_c·(x_c+1)/2 mapped back: Σ w_c·x_c + (Σ w_c − 1)
    let offset = LUMA.iter().sum::<f64>() - 1.0;
    let g = x.reshape([px, 3])?.matmul(&w)?.add_scalar(offset)?;
    let mut out = dims;
    *out.last_mut().expect("checked rank") = 1;
    g.reshape(out)
}

/// Sets each pixel (all channels together) to −1 or +1 with probability
/// `p`, the sign chosen with equal odds. Returns the corrupted tensor and the
/// per-pixel mask of corrupted positions (last axis 1).
pub fn salt_pepper<T: Element>(x: &Tensor<T>, p: f64, seed: u64) -> Result<(Tensor<T>, Tensor<T>)> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::Invalid(format!("salt & pepper probability {p} outside [0, 1]")));
    }
    let c = *x.dims().last().ok_or_else(|| Error::invalid_shape("salt_pepper", "rank-0 input"))?;
    let mut rng = seeded(seed);
    let mut out = x.clone();
    let mut mask = vec![T::zero(); x.numel() / c];
    for (i, px) in out.data_mut().chunks_mut(c).enumerate() {
        let hit = unit_uniform(&mut rng) < p;
        let salt = unit_uniform(&mut rng) < 0.5;
        if hit {
            px.fill(if salt { T::one() } else { -T::one() });
            mask[i] = T::one();
        }
    }
    let mut mdims = x.dims().to_vec();
    *mdims.last_mut().expect("checked rank") = 1;
    Ok((out, Tensor::new(mdims, mask)?))
}

/// Fills a `size × size` square with 0 in every frame of every clip of a
/// `(N, T, H, W, C)` batch. Returns the filled batch and the `(N, T, H, W, 1)`
/// hole mask.
pub fn cut_hole<T: Element>(
    x: &Tensor<T>,
    size: usize,
    placement: HolePlacement,
    seed: u64,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let d = x.dims();
    if d.len() != 5 {
        return Err(Error::invalid_shape("cut_hole", format!("expected (N,T,H,W,C), got {d:?}")));
    }
    let [n, t_n, h, w, c] = [d[0], d[1], d[2], d[3], d[4]];
    if size == 0 || size > h || size > w {
        return Err(Error::Invalid(format!("hole {size}×{size} does not fit a {h}×{w} frame")));
    }
    let mut out = x.clone();
    let mut mask = vec![T::zero(); n * t_n * h * w];
    let data = out.data_mut();
    for clip in 0..n {
        let mut rng = seeded(seed.split(clip as u64));
        let mut draw = || {
            let y0 = (unit_uniform(&mut rng) * (h - size + 1) as f64) as usize;
            let x0 = (unit_uniform(&mut rng) * (w - size + 1) as f64) as usize;
            (y0, x0)
        };
        let fixed = match placement {
            HolePlacement::Center => Some(((h - size) / 2, (w - size) / 2)),
            HolePlacement::Random => Some(draw()),
            HolePlacement::RandomPerFrame => None,
        };
        for t in 0..t_n {
            let (y0, x0) = fixed.unwrap_or_else(&mut draw);
            for y in y0..y0 + size {
                for xx in x0..x0 + size {
                    let px = ((clip * t_n + t) * h + y) * w + xx;
                    data[px * c..(px + 1) * c].fill(T::zero());
                    mask[px] = T::one();
                }
            }
        }
    }
    Ok((out, Tensor::new([n, t_n, h, w, 1], mask)?))
}

/// Mean squared difference.
pub fn l2_loss<T: Element>(a: &Var<T>, b: &Var<T>) -> Result<Var<T>> {
    if a.dims() != b.dims() {
        return Err(Error::shape("l2_loss", &a.dims(), &b.dims()));
    }
    a.sub(b)?.square()?.mean_all()
}

fn first_frame<T: Element>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let d = x.dims();
    let mut end = d.to_vec();
    end[1] = 1;
    x.slice(&[0; 5], &end)
}

/// The condition `y` for a `(N, T, H, W, 3)` batch of real clips.
pub fn condition<T: Element>(spec: &TaskSpec, real: &Tensor<T>, seed: u64) -> Result<Tensor<T>> {
    let d = real.dims();
    if d.len() != 5 || d[4] != 3 {
        return Err(Error::invalid_shape("condition", format!("expected (N,T,H,W,3), got {d:?}")));
    }
    match spec.task {
        Task::ColorizeSupervised | Task::ColorizeUnsupervised => to_grayscale(real),
        Task::Inpaint => match spec.corruption {
            Corruption::SaltPepper { p } => Ok(salt_pepper(real, p, seed)?.0),
            Corruption::Hole { size, placement } => Ok(cut_hole(real, size, placement, seed)?.0),
        },
        Task::Predict => {
            // the single observed frame, replicated over time
            let f = first_frame(real)?;
            let parts = vec![&f; d[1]];
            let stacked = Tensor::concat(&parts)?; // (T·N, 1, H, W, 3), frame-major
            stacked
                .reshape([d[1], d[0], d[2], d[3], d[4]])?
                .permute(&[1, 0, 2, 3, 4])
        }
    }
}

/// `L_AP` for a generated batch `fake` given the real batch and condition.
pub fn reconstruction_loss<T: Element>(task: Task, fake: &Var<T>, real: &Var<T>, y: &Var<T>) -> Result<Var<T>> {
    let check = |want: usize| {
        let yd = y.dims();
        if yd.len() != 5 || yd[4] != want || yd[..4] != fake.dims()[..4] {
            return Err(Error::Invalid(format!("{} condition has shape {yd:?}", task.name())));
        }
        Ok(())
    };
    match task {
        Task::ColorizeSupervised => {
            check(1)?;
            l2_loss(fake, real)
        }
        Task::ColorizeUnsupervised => {
            check(1)?;
            l2_loss(&to_grayscale_var(fake)?, y)
        }
        Task::Inpaint => {
            check(3)?;
            l2_loss(fake, real)
        }
        Task::Predict => {
            check(3)?;
            let d = fake.dims();
            let end = [d[0], 1, d[2], d[3], d[4]];
            l2_loss(&fake.slice(&[0; 5], &end)?, &y.slice(&[0; 5], &end)?)
        }
    }
}

pub struct TaskLoss<T: Element> {
    /// `adversarial + ν·reconstruction`.
    pub total: Var<T>,
    pub adversarial: Var<T>,
    pub reconstruction: Var<T>,
}

/// Generator/encoder objective for a generated batch `fake = G(E(y))`.
pub fn task_loss<T: Element>(
    spec: &TaskSpec,
    critic: &impl Critic<T>,
    fake: &Var<T>,
    real: &Var<T>,
    y: &Var<T>,
) -> Result<TaskLoss<T>> {
    let adversarial = generator_loss(critic, fake)?;
    let reconstruction = reconstruction_loss(spec.task, fake, real, y)?;
    let total = adversarial.add(&reconstruction.scale(spec.nu)?)?;
    Ok(TaskLoss {
        total,
        adversarial,
        reconstruction,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskStepReport {
    pub step: u64,
    pub wasserstein_estimate: f64,
    pub penalty: f64,
    pub critic_loss: f64,
    pub adversarial_loss: f64,
    pub reconstruction_loss: f64,
    pub total_loss: f64,
    pub critic_grad_norm: f64,
    pub generator_grad_norm: f64,
    pub lr: f64,
    pub wall_ms: f64,
}

/// Encoder, generator, critic and their optimizers.
pub struct TaskTrainer {
    pub cfg: TrainConfig,
    pub spec: TaskSpec,
    pub net: NetConfig,
    pub generator: GeneratorNet<f32>,
    pub encoder: EncoderNet<f32>,
    pub critic: CriticNet<f32>,
    pub gen_opt: AdamState<f32>,
    pub enc_opt: AdamState<f32>,
    pub critic_opt: AdamState<f32>,
    pub step: u64,
}

impl TaskTrainer {
    pub fn new(cfg: TrainConfig, spec: TaskSpec, net: NetConfig) -> Result<Self> {
        cfg.validate()?;
        spec.validate()?;
        net.validate()?;
        let generator = build_generator(&net, cfg.seed.split(STREAM_INIT_G))?;
        let encoder = build_encoder(&net, spec.task.condition_channels(), cfg.seed.split(STREAM_INIT_E))?;
        let critic = build_critic(&net, cfg.seed.split(STREAM_INIT_C))?;
        let opt = |p| AdamState::new(p, cfg.alpha, cfg.beta1, cfg.beta2);
        Ok(TaskTrainer {
            gen_opt: opt(&generator.params),
            enc_opt: opt(&encoder.params),
            critic_opt: opt(&critic.params),
            cfg,
            spec,
            net,
            generator,
            encoder,
            critic,
            step: 0,
        })
    }

    fn decode(
        &mut self,
        tape: &Tape<f32>,
        y: &Tensor<f32>,
        trainable: bool,
        mode: Mode,
    ) -> Result<(Vec<Var<f32>>, Var<f32>)> {
        let mut params = self.encoder.bind(tape, trainable);
        let enc_len = params.len();
        let z = self.encoder.forward(&params, &tape.constant(y.clone()), mode)?;
        params.extend(self.generator.bind(tape, trainable));
        let fake = self.generator.forward(&params[enc_len..], &z, mode)?;
        Ok((params, fake))
    }

    /// `G(E(y))` with running normalization statistics.
    pub fn reconstruct(&mut self, y: &Tensor<f32>) -> Result<Tensor<f32>> {
        let tape = Tape::new();
        Ok(self.decode(&tape, y, false, Mode::Eval)?.1.value())
    }

    pub fn condition(&self, real: &Tensor<f32>, seed: u64) -> Result<Tensor<f32>> {
        condition(&self.spec, real, seed)
    }

    pub fn train_step(&mut self, data: &mut dyn BatchStream) -> Result<TaskStepReport> {
        let started = Instant::now();
        if self.cfg.lr_halve_at.contains(&self.step) {
            for opt in [&mut self.gen_opt, &mut self.enc_opt, &mut self.critic_opt] {
                opt.alpha /= 2.0;
            }
        }
        let step_seed = self.cfg.seed.split(STREAM_STEPS).split(self.step);

        let mut last = None;
        for k in 0..self.cfg.critic_ratio {
            let seed = step_seed.split(k as u64);
            let real = data.next_batch()?;
            let y = self.condition(&real, seed.split(2))?;
            let fake = {
                let tape = Tape::new();
                self.decode(&tape, &y, false, Mode::Train)?.1.value()
            };
            let (loss, norm) = critic_update(&mut self.critic, &mut self.critic_opt, real, fake, self.cfg.lambda, seed)?;
            last = Some((loss, norm, seed));
        }
        let (loss, critic_grad_norm, critic_seed) = last.expect("critic_ratio ≥ 1");

        let seed = step_seed.split(u64::MAX);
        let real = data.next_batch()?;
        let y = self.condition(&real, seed.split(2))?;
        let tape = Tape::new();
        let (params, fake) = self.decode(&tape, &y, true, Mode::Train)?;
        let critic = BoundCritic::new(&self.critic, &tape, false);
        let parts = task_loss(&self.spec, &critic, &fake, &tape.constant(real), &tape.constant(y))?;
        let total_loss = scalar(&parts.total, "task loss", seed)?;
        let refs: Vec<&Var<f32>> = params.iter().collect();
        let grads = parts.total.grad(&refs, false)?.tensors();
        let enc_len = self.encoder.params.len();
        adam_step(&mut self.encoder.params, &grads[..enc_len], &mut self.enc_opt).map_err(|e| with_seed(e, seed))?;
        adam_step(&mut self.generator.params, &grads[enc_len..], &mut self.gen_opt).map_err(|e| with_seed(e, seed))?;

        let report = TaskStepReport {
            step: self.step,
            wasserstein_estimate: scalar(&loss.value, "wasserstein estimate", critic_seed)?,
            penalty: scalar(&loss.penalty, "gradient penalty", critic_seed)?,
            critic_loss: scalar(&loss.total, "critic loss", critic_seed)?,
            adversarial_loss: scalar(&parts.adversarial, "adversarial loss", seed)?,
            reconstruction_loss: scalar(&parts.reconstruction, "reconstruction loss", seed)?,
            total_loss,
            critic_grad_norm,
            generator_grad_norm: global_norm(&grads),
            lr: self.gen_opt.alpha,
            wall_ms: started.elapsed().as_secs_f64() * 1e3,
        };
        self.step += 1;
        Ok(report)
    }

    pub fn train_loop(
        &mut self,
        data: &mut dyn BatchStream,
        hook: &mut dyn FnMut(&TaskStepReport, &Self) -> Result<()>,
    ) -> Result<()> {
        while self.step < self.cfg.total_steps {
            let report = self.train_step(data)?;
            hook(&report, self)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{rng_fill, Distribution};

    fn rgb(v: [f64; 3]) -> Tensor<f64> {
        Tensor::from_f64([1, 3], &v).unwrap()
    }

    #[test]
    fn grayscale_examples() {
        let g = |v| to_grayscale(&rgb(v)).unwrap().data()[0];
        assert!((g([1.0; 3]) - 1.0).abs() < 1e-12);
        assert!((g([-1.0; 3]) + 1.0).abs() < 1e-12);
        // red (1,0,0) in [0,1] space has luma 0.299
        let red01 = (g([1.0, -1.0, -1.0]) + 1.0) / 2.0;
        assert!((red01 - 0.299).abs() < 1e-12);
    }

    #[test]
    fn grayscale_var_matches_tensor() {
        let x: Tensor<f64> = rng_fill(Distribution::Uniform(-1.0, 1.0), [2, 3, 4, 4, 3], 1);
        let tape = Tape::new();
        let gv = to_grayscale_var(&tape.constant(x.clone())).unwrap().value();
        assert!(gv.max_abs_diff(&to_grayscale(&x).unwrap()).unwrap() < 1e-12);
        assert_eq!(gv.dims(), &[2, 3, 4, 4, 1]);
    }

    #[test]
    fn salt_pepper_examples() {
        let x: Tensor<f64> = rng_fill(Distribution::Uniform(-0.9, 0.9), [100, 100, 3], 2);
        assert_eq!(salt_pepper(&x, 0.0, 1).unwrap().0, x);
        let (all, _) = salt_pepper(&x, 1.0, 1).unwrap();
        assert!(all.data().iter().all(|&v| v == 1.0 || v == -1.0));
        let (some, mask) = salt_pepper(&x, 0.25, 3).unwrap();
        let hits = mask.sum_all();
        let sigma = (1e4f64 * 0.25 * 0.75).sqrt();
        assert!((hits - 2500.0).abs() <= 3.0 * sigma, "{hits}");
        // pixels are hit jointly across channels
        for px in some.data().chunks(3) {
            let ext = px.iter().filter(|v| v.abs() == 1.0).count();
            assert!(ext == 0 || ext == 3);
        }
        assert_eq!(salt_pepper(&x, 0.25, 3).unwrap().0, some);
    }

    #[test]
    fn hole_examples() {
        let x = Tensor::<f64>::ones([1, 2, 64, 64, 3]);
        let (y, m) = cut_hole(&x, 20, HolePlacement::Center, 0).unwrap();
        for t in 0..2 {
            for r in 0..64 {
                for c in 0..64 {
                    let inside = (22..=41).contains(&r) && (22..=41).contains(&c);
                    let v = y.data()[(((t * 64) + r) * 64 + c) * 3];
                    assert_eq!(v, if inside { 0.0 } else { 1.0 });
                }
            }
        }
        assert_eq!(m.sum_all(), 800.0);
        assert_eq!(cut_hole(&x, 20, HolePlacement::Center, 5).unwrap().1, m);
        let (_, r1) = cut_hole(&x, 20, HolePlacement::Random, 1).unwrap();
        let (_, r2) = cut_hole(&x, 20, HolePlacement::Random, 2).unwrap();
        assert_ne!(r1, r2);
        assert_eq!(r1.sum_all(), 800.0);
        // per-clip placement is constant over time
        assert_eq!(&r1.data()[..4096], &r1.data()[4096..]);
        assert!(cut_hole(&x, 65, HolePlacement::Center, 0).is_err());
        assert_eq!(scaled_hole_size(16), 5);
        assert_eq!(scaled_hole_size(64), 20);
    }

    #[test]
    fn l2_examples() {
        let tape = Tape::<f64>::new();
        let a: Tensor<f64> = rng_fill(Distribution::Normal, [3, 5], 1);
        let b: Tensor<f64> = rng_fill(Distribution::Normal, [3, 5], 2);
        let (va, vb) = (tape.constant(a.clone()), tape.constant(b.clone()));
        assert_eq!(l2_loss(&va, &va).unwrap().value().item().unwrap(), 0.0);
        let ones = tape.constant(Tensor::ones([4]));
        let zeros = tape.constant(Tensor::zeros([4]));
        assert_eq!(l2_loss(&ones, &zeros).unwrap().value().item().unwrap(), 1.0);
        let mut oracle = 0.0;
        for i in 0..15 {
            oracle += (a.data()[i] - b.data()[i]).powi(2);
        }
        assert!((l2_loss(&va, &vb).unwrap().value().item().unwrap() - oracle / 15.0).abs() < 1e-7);
        assert!(l2_loss(&va, &ones).is_err());
    }

    #[test]
    fn conditions_have_task_shapes() {
        let real: Tensor<f32> = rng_fill(Distribution::Uniform(-1.0, 1.0), [2, 4, 8, 8, 3], 3);
        let y = condition(&TaskSpec::new(Task::ColorizeUnsupervised), &real, 0).unwrap();
        assert_eq!(y.dims(), &[2, 4, 8, 8, 1]);
        let y = condition(&TaskSpec::new(Task::Predict), &real, 0).unwrap();
        assert_eq!(y.dims(), &[2, 4, 8, 8, 3]);
        for n in 0..2 {
            for t in 0..4 {
                let f = y.slice(&[n, t, 0, 0, 0], &[n + 1, t + 1, 8, 8, 3]).unwrap();
                let r = real.slice(&[n, 0, 0, 0, 0], &[n + 1, 1, 8, 8, 3]).unwrap();
                assert_eq!(f.data(), r.data());
            }
        }
    }

    #[test]
    fn reconstruction_loss_zero_cases() {
        let tape = Tape::<f64>::new();
        let real: Tensor<f64> = rng_fill(Distribution::Uniform(-1.0, 1.0), [2, 4, 8, 8, 3], 3);
        // a generator echoing the gray input in all three channels
        let spec = TaskSpec::new(Task::ColorizeUnsupervised);
        let y = condition(&spec, &real, 0).unwrap();
        let echo = Tensor::concat(&[&y, &y, &y]).unwrap();
        let echo = echo.reshape([3, 2 * 4 * 8 * 8]).unwrap().t().unwrap().reshape([2, 4, 8, 8, 3]).unwrap();
        let l = reconstruction_loss(spec.task, &tape.constant(echo), &tape.constant(real.clone()), &tape.constant(y))
            .unwrap();
        assert!(l.value().item().unwrap() < 1e-24);

        let spec = TaskSpec::new(Task::Predict);
        let y = condition(&spec, &real, 0).unwrap();
        let mut fake: Tensor<f64> = rng_fill(Distribution::Uniform(-1.0, 1.0), [2, 4, 8, 8, 3], 4);
        let per = 4 * 8 * 8 * 3;
        for n in 0..2 {
            let src = real.data()[n * per..n * per + 192].to_vec();
            fake.data_mut()[n * per..n * per + 192].copy_from_slice(&src);
        }
        let l = reconstruction_loss(spec.task, &tape.constant(fake), &tape.constant(real.clone()), &tape.constant(y))
            .unwrap();
        assert_eq!(l.value().item().unwrap(), 0.0);

        let spec = TaskSpec::new(Task::Inpaint);
        let gray = condition(&TaskSpec::new(Task::ColorizeSupervised), &real, 0).unwrap();
        let r = tape.constant(real);
        assert!(reconstruction_loss(spec.task, &r, &r, &tape.constant(gray)).is_err());
    }

    #[test]
    fn nu_zero_is_plain_generator_loss() {
        let tape = Tape::<f64>::new();
        let critic = |x: &Var<f64>| x.sum(&[1, 2, 3, 4]);
        let real = tape.constant(rng_fill(Distribution::Uniform(-1.0, 1.0), [2, 2, 4, 4, 3], 1));
        let fake = tape.constant(rng_fill(Distribution::Uniform(-1.0, 1.0), [2, 2, 4, 4, 3], 2));
        let spec = TaskSpec {
            nu: 0.0,
            ..TaskSpec::new(Task::Inpaint)
        };
        let l = task_loss(&spec, &critic, &fake, &real, &real).unwrap();
        let g = generator_loss(&critic, &fake).unwrap();
        assert_eq!(l.total.value(), g.value());
    }

    #[test]
    fn task_gradients_reach_encoder_and_generator() {
        let net = NetConfig {
            frames: 4,
            height: 8,
            width: 8,
            base_width: 4,
            z_dim: 8,
            gen_blocks: 2,
            critic_blocks: 2,
            encoder_blocks: 2,
            ..NetConfig::desk()
        };
        let cfg = TrainConfig {
            batch_size: 2,
            ..TrainConfig::desk()
        };
        let mut tr = TaskTrainer::new(cfg, TaskSpec::new(Task::Inpaint), net).unwrap();
        let real: Tensor<f32> = rng_fill(Distribution::Uniform(-1.0, 1.0), [2, 4, 8, 8, 3], 3);
        let y = tr.condition(&real, 1).unwrap();
        let tape = Tape::new();
        let (params, fake) = tr.decode(&tape, &y, true, Mode::Train).unwrap();
        let critic = BoundCritic::new(&tr.critic, &tape, false);
        let loss = task_loss(&tr.spec, &critic, &fake, &tape.constant(real), &tape.constant(y)).unwrap();
        let refs: Vec<&Var<f32>> = params.iter().collect();
        let grads = loss.total.grad(&refs, false).unwrap().tensors();
        assert!(grads[0].max_abs() > 0.0, "encoder conv");
        assert!(grads[tr.encoder.params.len()].max_abs() > 0.0, "generator linear");
    }
}
