//! Generator, critic and encoder networks.
//!
//! Every network stores its weights in a [`ParamSet`] in construction order
//! and its forward pass consumes them in the same order, so a list of bound
//! [`Var`]s (`net.params.bind(tape, ..)`) is all a forward pass needs.
//!
//! Widths: the generator's first tensor has `base·2^(g−1)` channels, halving
//! per block, with the last block emitting RGB; critic and encoder layer `i`
//! has `base·2^i` channels.

use serde::{Deserialize, Serialize};

use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::layers::{self, BatchNormMode, ConvSpec, Mode, ParamSet, RunningStats, LEAKY_SLOPE};
use crate::tensor::{Element, SplitSeed, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scale {
    /// 32 frames of 64×64, base width 64.
    Full,
    /// 8 frames of 16×16, base width 32.
    Desk,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormKind {
    Layer,
    /// Couples samples in a batch; only kept to demonstrate why the gradient
    /// penalty rejects it.
    Batch,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NetConfig {
    pub scale: Scale,
    pub z_dim: usize,
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub base_width: usize,
    pub gen_blocks: usize,
    pub critic_blocks: usize,
    pub encoder_blocks: usize,
    pub critic_norm: NormKind,
}

/// `(T, H, W, C)` of one activation.
pub type Extents = [usize; 4];

impl NetConfig {
    pub fn full() -> Self {
        NetConfig {
            scale: Scale::Full,
            z_dim: 100,
            frames: 32,
            height: 64,
            width: 64,
            channels: 3,
            base_width: 64,
            gen_blocks: 4,
            critic_blocks: 5,
            encoder_blocks: 4,
            critic_norm: NormKind::Layer,
        }
    }

    /// Three doublings from 1×2×2 to 8×16×16; T=8 allows only three
    /// halvings in critic and encoder.
    pub fn desk() -> Self {
        NetConfig {
            scale: Scale::Desk,
            frames: 8,
            height: 16,
            width: 16,
            base_width: 32,
            gen_blocks: 3,
            critic_blocks: 3,
            encoder_blocks: 3,
            ..Self::full()
        }
    }

    pub fn preset(scale: Scale) -> Self {
        match scale {
            Scale::Full => Self::full(),
            Scale::Desk => Self::desk(),
        }
    }

    pub fn clip_extents(&self) -> Extents {
        [self.frames, self.height, self.width, self.channels]
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Invalid(format!("net config: {msg}")));
        if self.z_dim == 0 || self.base_width == 0 || self.channels == 0 {
            return bad("z_dim, base_width and channels must be positive".into());
        }
        if self.gen_blocks == 0 || self.critic_blocks == 0 || self.encoder_blocks == 0 {
            return bad("every network needs at least one block".into());
        }
        for (name, v) in [("frames", self.frames), ("height", self.height), ("width", self.width)] {
            if !v.is_power_of_two() {
                return bad(format!("{name}={v} is not a power of two"));
            }
            if v >> self.gen_blocks == 0 {
                return bad(format!("{name}={v} cannot be halved {} times", self.gen_blocks));
            }
        }
        // each strided layer maps n → n/2 and needs n ≥ 2
        self.critic_shapes()?;
        self.encoder_shapes(1)?;
        Ok(())
    }

    fn gen_base(&self) -> Extents {
        let g = self.gen_blocks;
        [
            self.frames >> g,
            self.height >> g,
            self.width >> g,
            self.base_width << (g - 1),
        ]
    }

    /// Activation extents after the linear projection and after each
    /// transposed block.
    pub fn generator_shapes(&self) -> Result<Vec<Extents>> {
        let mut shapes = vec![self.gen_base()];
        let mut cur = self.gen_base();
        for i in 0..self.gen_blocks {
            let out_c = if i + 1 == self.gen_blocks { self.channels } else { cur[3] / 2 };
            let spec = ConvSpec::standard(cur[3], out_c, true);
            let [t, h, w] = spec.output_extents([cur[0], cur[1], cur[2]])?;
            cur = [t, h, w, out_c];
            shapes.push(cur);
        }
        Ok(shapes)
    }

    fn strided_chain(&self, input: Extents, blocks: usize) -> Result<Vec<Extents>> {
        let mut shapes = vec![input];
        let mut cur = input;
        for i in 0..blocks {
            let out_c = self.base_width << i;
            if cur[0] < 2 || cur[1] < 2 || cur[2] < 2 {
                return Err(Error::Invalid(format!(
                    "net config: extents {:?} cannot be halved again (layer {i})",
                    &cur[..3]
                )));
            }
            let spec = ConvSpec::standard(cur[3], out_c, false);
            let [t, h, w] = spec.output_extents([cur[0], cur[1], cur[2]])?;
            cur = [t, h, w, out_c];
            shapes.push(cur);
        }
        Ok(shapes)
    }

    /// Input extents followed by the output of each strided layer.
    pub fn critic_shapes(&self) -> Result<Vec<Extents>> {
        self.strided_chain(self.clip_extents(), self.critic_blocks)
    }

    pub fn encoder_shapes(&self, in_channels: usize) -> Result<Vec<Extents>> {
        let [t, h, w, _] = self.clip_extents();
        self.strided_chain([t, h, w, in_channels], self.encoder_blocks)
    }

    /// Numeric encoding stored alongside checkpoints.
    pub fn to_meta(&self) -> Vec<f64> {
        let scale = match self.scale {
            Scale::Full => 0.0,
            Scale::Desk => 1.0,
        };
        let norm = match self.critic_norm {
            NormKind::Layer => 0.0,
            NormKind::Batch => 1.0,
        };
        [
            scale,
            self.z_dim as f64,
            self.frames as f64,
            self.height as f64,
            self.width as f64,
            self.channels as f64,
            self.base_width as f64,
            self.gen_blocks as f64,
            self.critic_blocks as f64,
            self.encoder_blocks as f64,
            norm,
        ]
        .to_vec()
    }

    pub fn from_meta(meta: &[f64]) -> Result<Self> {
        if meta.len() != 11 || meta.iter().any(|v| v.fract() != 0.0 || *v < 0.0) {
            return Err(Error::Format(format!("bad network metadata {meta:?}")));
        }
        let u = |i: usize| meta[i] as usize;
        let cfg = NetConfig {
            scale: if u(0) == 0 { Scale::Full } else { Scale::Desk },
            z_dim: u(1),
            frames: u(2),
            height: u(3),
            width: u(4),
            channels: u(5),
            base_width: u(6),
            gen_blocks: u(7),
            critic_blocks: u(8),
            encoder_blocks: u(9),
            critic_norm: if u(10) == 0 { NormKind::Layer } else { NormKind::Batch },
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Tensors registered by each network: linear (2) + per block conv (2)
    /// and norm (2) where present.
    pub fn generator_tensor_count(&self) -> usize {
        2 + 2 + self.gen_blocks * 2 + (self.gen_blocks - 1) * 2
    }

    pub fn critic_tensor_count(&self) -> usize {
        self.critic_blocks * 2 + (self.critic_blocks - 1) * 2 + 2
    }

    pub fn encoder_tensor_count(&self) -> usize {
        self.encoder_blocks * 4 + 2
    }
}

fn weight<T: Element>(params: &mut ParamSet<T>, name: String, shape: &[usize], fan_in: usize, seed: u64) {
    let idx = params.len() as u64;
    params.add(name, layers::he_init(shape, fan_in, seed.split(idx)));
}

fn affine<T: Element>(params: &mut ParamSet<T>, prefix: &str, channels: usize) {
    params.add(format!("{prefix}.gamma"), Tensor::ones([channels]));
    params.add(format!("{prefix}.beta"), Tensor::zeros([channels]));
}

fn conv_params<T: Element>(params: &mut ParamSet<T>, prefix: &str, spec: &ConvSpec, seed: u64) {
    weight(params, format!("{prefix}.w"), &spec.weight_shape(), spec.fan_in(), seed);
    params.add(format!("{prefix}.b"), Tensor::zeros([spec.out_channels]));
}

fn linear_params<T: Element>(params: &mut ParamSet<T>, prefix: &str, inputs: usize, outputs: usize, seed: u64) {
    weight(params, format!("{prefix}.w"), &[inputs, outputs], inputs, seed);
    params.add(format!("{prefix}.b"), Tensor::zeros([outputs]));
}

/// Walks a list of bound parameters in construction order.
struct Cursor<'a, T: Element> {
    vars: &'a [Var<T>],
    next: usize,
}

impl<'a, T: Element> Cursor<'a, T> {
    fn new(vars: &'a [Var<T>], expected: usize) -> Result<Self> {
        if vars.len() != expected {
            return Err(Error::Invalid(format!(
                "expected {expected} bound parameters, got {}",
                vars.len()
            )));
        }
        Ok(Cursor { vars, next: 0 })
    }

    fn take(&mut self) -> &'a Var<T> {
        let v = &self.vars[self.next];
        self.next += 1;
        v
    }

    fn pair(&mut self) -> (&'a Var<T>, &'a Var<T>) {
        (self.take(), self.take())
    }
}

fn check_input<T: Element>(net: &str, x: &Var<T>, expect: Extents) -> Result<usize> {
    let d = x.dims();
    if d.len() != 5 || d[1..] != expect {
        return Err(Error::invalid_shape(
            "forward",
            format!("{net} expects (N, {expect:?}), got {d:?}"),
        ));
    }
    Ok(d[0])
}

fn finite<T: Element>(net: &str, y: Var<T>) -> Result<Var<T>> {
    if y.value().all_finite() {
        Ok(y)
    } else {
        Err(Error::NonFinite(format!("{net} output")))
    }
}

fn norm_mode<T: Element>(mode: Mode, stats: &mut RunningStats<T>) -> BatchNormMode<'_, T> {
    match mode {
        Mode::Train => BatchNormMode::Train(stats),
        Mode::Eval => BatchNormMode::Eval(stats),
    }
}

#[derive(Clone, Debug)]
pub struct GeneratorNet<T: Element = f32> {
    pub cfg: NetConfig,
    pub params: ParamSet<T>,
    /// One entry per batch-norm layer, in forward order.
    pub stats: Vec<RunningStats<T>>,
}

pub fn build_generator<T: Element>(cfg: &NetConfig, seed: u64) -> Result<GeneratorNet<T>> {
    cfg.validate()?;
    let shapes = cfg.generator_shapes()?;
    let mut params = ParamSet::new();
    let mut stats = Vec::new();
    let base = shapes[0];
    linear_params(&mut params, "gen.fc", cfg.z_dim, base.iter().product(), seed);
    affine(&mut params, "gen.bn0", base[3]);
    stats.push(RunningStats::new(base[3]));
    for i in 0..cfg.gen_blocks {
        let spec = ConvSpec::standard(shapes[i][3], shapes[i + 1][3], true);
        conv_params(&mut params, &format!("gen.conv{i}"), &spec, seed);
        if i + 1 < cfg.gen_blocks {
            affine(&mut params, &format!("gen.bn{}", i + 1), spec.out_channels);
            stats.push(RunningStats::new(spec.out_channels));
        }
    }
    Ok(GeneratorNet { cfg: *cfg, params, stats })
}

impl<T: Element> GeneratorNet<T> {
    pub fn bind(&self, tape: &Tape<T>, trainable: bool) -> Vec<Var<T>> {
        self.params.bind(tape, trainable)
    }

    /// `z: (N, z_dim)` → clip batch `(N, T, H, W, C)` in `[−1, 1]`.
    /// Training mode normalizes with batch statistics and updates the
    /// running ones.
    pub fn forward(&mut self, params: &[Var<T>], z: &Var<T>, mode: Mode) -> Result<Var<T>> {
        let cfg = self.cfg;
        let zd = z.dims();
        if zd.len() != 2 || zd[1] != cfg.z_dim {
            return Err(Error::invalid_shape("generator", format!("expected (N, {}), got {zd:?}", cfg.z_dim)));
        }
        if !z.value().all_finite() {
            return Err(Error::NonFinite("generator input".into()));
        }
        let n = zd[0];
        let shapes = cfg.generator_shapes()?;
        let mut p = Cursor::new(params, cfg.generator_tensor_count())?;
        let (w, b) = p.pair();
        let [t0, h0, w0, c0] = shapes[0];
        let mut x = layers::linear(z, w, b)?.reshape([n, t0, h0, w0, c0])?;
        let (g, be) = p.pair();
        x = layers::batch_norm(&x, g, be, norm_mode(mode, &mut self.stats[0]))?.relu()?;
        for i in 0..cfg.gen_blocks {
            let spec = ConvSpec::standard(shapes[i][3], shapes[i + 1][3], true);
            let (w, b) = p.pair();
            x = layers::conv(&x, &spec, w, Some(b))?;
            if i + 1 < cfg.gen_blocks {
                let (g, be) = p.pair();
                x = layers::batch_norm(&x, g, be, norm_mode(mode, &mut self.stats[i + 1]))?.relu()?;
            } else {
                x = x.tanh()?;
            }
        }
        finite("generator", x)
    }
}

#[derive(Clone, Debug)]
pub struct CriticNet<T: Element = f32> {
    pub cfg: NetConfig,
    pub params: ParamSet<T>,
}

pub fn build_critic<T: Element>(cfg: &NetConfig, seed: u64) -> Result<CriticNet<T>> {
    cfg.validate()?;
    let shapes = cfg.critic_shapes()?;
    let mut params = ParamSet::new();
    for i in 0..cfg.critic_blocks {
        let spec = ConvSpec::standard(shapes[i][3], shapes[i + 1][3], false);
        conv_params(&mut params, &format!("critic.conv{i}"), &spec, seed);
        if i > 0 {
            affine(&mut params, &format!("critic.norm{i}"), spec.out_channels);
        }
    }
    let last = shapes[cfg.critic_blocks];
    linear_params(&mut params, "critic.fc", last.iter().product(), 1, seed);
    Ok(CriticNet { cfg: *cfg, params })
}

impl<T: Element> CriticNet<T> {
    pub fn bind(&self, tape: &Tape<T>, trainable: bool) -> Vec<Var<T>> {
        self.params.bind(tape, trainable)
    }

    /// Whether one sample's score depends on other samples in the batch.
    pub fn batch_coupled(&self) -> bool {
        self.cfg.critic_norm == NormKind::Batch
    }

    /// Clip batch `(N, T, H, W, C)` → one unbounded score per sample, `(N)`.
    pub fn forward(&self, params: &[Var<T>], x: &Var<T>) -> Result<Var<T>> {
        let cfg = self.cfg;
        let n = check_input("critic", x, cfg.clip_extents())?;
        let shapes = cfg.critic_shapes()?;
        let mut p = Cursor::new(params, cfg.critic_tensor_count())?;
        let mut h = x.clone();
        for i in 0..cfg.critic_blocks {
            let spec = ConvSpec::standard(shapes[i][3], shapes[i + 1][3], false);
            let (w, b) = p.pair();
            h = layers::conv(&h, &spec, w, Some(b))?;
            if i > 0 {
                let (g, be) = p.pair();
                h = match cfg.critic_norm {
                    NormKind::Layer => layers::layer_norm(&h, g, be)?,
                    NormKind::Batch => layers::batch_norm(&h, g, be, BatchNormMode::BatchOnly)?,
                };
            }
            h = h.leaky_relu(LEAKY_SLOPE)?;
        }
        let features = shapes[cfg.critic_blocks].iter().product::<usize>();
        let (w, b) = p.pair();
        let score = layers::linear(&h.reshape([n, features])?, w, b)?;
        finite("critic", score.reshape([n])?)
    }
}

#[derive(Clone, Debug)]
pub struct EncoderNet<T: Element = f32> {
    pub cfg: NetConfig,
    pub in_channels: usize,
    pub params: ParamSet<T>,
    pub stats: Vec<RunningStats<T>>,
}

/// `in_channels` is 1 for grayscale conditions and 3 for RGB ones.
pub fn build_encoder<T: Element>(cfg: &NetConfig, in_channels: usize, seed: u64) -> Result<EncoderNet<T>> {
    cfg.validate()?;
    if in_channels == 0 {
        return Err(Error::Invalid("encoder needs at least one input channel".into()));
    }
    let shapes = cfg.encoder_shapes(in_channels)?;
    let mut params = ParamSet::new();
    let mut stats = Vec::new();
    for i in 0..cfg.encoder_blocks {
        let spec = ConvSpec::standard(shapes[i][3], shapes[i + 1][3], false);
        conv_params(&mut params, &format!("enc.conv{i}"), &spec, seed);
        affine(&mut params, &format!("enc.bn{i}"), spec.out_channels);
        stats.push(RunningStats::new(spec.out_channels));
    }
    let last = shapes[cfg.encoder_blocks];
    linear_params(&mut params, "enc.fc", last.iter().product(), cfg.z_dim, seed);
    Ok(EncoderNet {
        cfg: *cfg,
        in_channels,
        params,
        stats,
    })
}

impl<T: Element> EncoderNet<T> {
    pub fn bind(&self, tape: &Tape<T>, trainable: bool) -> Vec<Var<T>> {
        self.params.bind(tape, trainable)
    }

    /// Condition batch `(N, T, H, W, Cy)` → latent codes `(N, z_dim)`.
    pub fn forward(&mut self, params: &[Var<T>], y: &Var<T>, mode: Mode) -> Result<Var<T>> {
        let cfg = self.cfg;
        let [t, h, w, _] = cfg.clip_extents();
        let n = check_input("encoder", y, [t, h, w, self.in_channels])?;
        let shapes = cfg.encoder_shapes(self.in_channels)?;
        let mut p = Cursor::new(params, cfg.encoder_tensor_count())?;
        let mut x = y.clone();
        for i in 0..cfg.encoder_blocks {
            let spec = ConvSpec::standard(shapes[i][3], shapes[i + 1][3], false);
            let (w, b) = p.pair();
            x = layers::conv(&x, &spec, w, Some(b))?;
            let (g, be) = p.pair();
            x = layers::batch_norm(&x, g, be, norm_mode(mode, &mut self.stats[i]))?.relu()?;
        }
        let features = shapes[cfg.encoder_blocks].iter().product::<usize>();
        let (w, b) = p.pair();
        finite("encoder", layers::linear(&x.reshape([n, features])?, w, b)?)
    }
}
