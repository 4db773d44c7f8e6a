//! Synthetic moving-squares clips and seeded batching.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{seeded, unit_uniform, SplitSeed, Tensor};

/// One video, `(T, H, W, C)` with values in `[−1, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Clip {
    tensor: Tensor<f32>,
}

impl Clip {
    pub fn new(tensor: Tensor<f32>) -> Result<Self> {
        if tensor.rank() != 4 {
            return Err(Error::invalid_shape("clip", format!("expected (T,H,W,C), got {:?}", tensor.dims())));
        }
        if let Some(v) = tensor.data().iter().find(|v| !(-1.0..=1.0).contains(*v)) {
            return Err(Error::Invalid(format!("clip value {v} outside [-1, 1]")));
        }
        Ok(Clip { tensor })
    }

    pub fn tensor(&self) -> &Tensor<f32> {
        &self.tensor
    }

    pub fn into_tensor(self) -> Tensor<f32> {
        self.tensor
    }

    /// `[T, H, W, C]`.
    pub fn extents(&self) -> [usize; 4] {
        let d = self.tensor.dims();
        [d[0], d[1], d[2], d[3]]
    }

    /// Stacks clips of equal extents into `(N, T, H, W, C)`.
    pub fn stack(clips: &[Clip]) -> Result<Tensor<f32>> {
        let first = clips.first().ok_or_else(|| Error::Invalid("empty clip batch".into()))?;
        let parts: Vec<Tensor<f32>> = clips
            .iter()
            .map(|c| {
                let mut d = vec![1];
                d.extend_from_slice(c.tensor.dims());
                c.tensor.reshape(d)
            })
            .collect::<Result<_>>()?;
        let refs: Vec<&Tensor<f32>> = parts.iter().collect();
        let out = Tensor::concat(&refs)?;
        debug_assert_eq!(&out.dims()[1..], first.tensor.dims());
        Ok(out)
    }

    /// Splits `(N, T, H, W, C)` into clips.
    pub fn unstack(batch: &Tensor<f32>) -> Result<Vec<Clip>> {
        let d = batch.dims();
        if d.len() != 5 {
            return Err(Error::invalid_shape("unstack", format!("expected (N,T,H,W,C), got {d:?}")));
        }
        (0..d[0])
            .map(|i| {
                let mut start = vec![0; 5];
                let mut end = d.to_vec();
                start[0] = i;
                end[0] = i + 1;
                Clip::new(batch.slice(&start, &end)?.reshape(&d[1..])?)
            })
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SynthPreset {
    MovingSquaresStaticBg,
    MovingSquaresPanningBg,
}

impl SynthPreset {
    pub fn name(self) -> &'static str {
        match self {
            SynthPreset::MovingSquaresStaticBg => "moving_squares_static_bg",
            SynthPreset::MovingSquaresPanningBg => "moving_squares_panning_bg",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "moving_squares_static_bg" => Ok(SynthPreset::MovingSquaresStaticBg),
            "moving_squares_panning_bg" => Ok(SynthPreset::MovingSquaresPanningBg),
            _ => Err(Error::Invalid(format!("unknown synth preset `{s}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthSpec {
    pub preset: SynthPreset,
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    /// Inclusive range of squares per clip.
    pub objects: (usize, usize),
    /// Inclusive range of square side lengths in pixels.
    pub size: (usize, usize),
    /// Inclusive range of each velocity component, pixels per frame.
    pub velocity: (i32, i32),
    /// Inclusive range of each background pan component (panning preset only).
    pub pan_velocity: (i32, i32),
    /// Square colors in `[−1, 1]`.
    pub palette: Vec<[f32; 3]>,
    pub seed: u64,
}

/// Period in pixels of the panning background's diagonal stripes.
const STRIPE_PERIOD: i64 = 8;

impl SynthSpec {
    /// Desk extents (8×16×16), 1–3 squares of side 3–6 moving at up to 2
    /// pixels per frame.
    pub fn desk(preset: SynthPreset, seed: u64) -> Self {
        SynthSpec {
            preset,
            frames: 8,
            height: 16,
            width: 16,
            objects: (1, 3),
            size: (3, 6),
            velocity: (-2, 2),
            pan_velocity: (-2, 2),
            palette: vec![
                [1.0, -0.8, -0.8],
                [-0.8, 1.0, -0.8],
                [-0.8, -0.8, 1.0],
                [1.0, 1.0, -0.8],
                [-0.8, 1.0, 1.0],
                [1.0, -0.8, 1.0],
            ],
            seed,
        }
    }

    pub fn with_extents(mut self, frames: usize, height: usize, width: usize) -> Self {
        self.frames = frames;
        self.height = height;
        self.width = width;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Invalid(format!("synth spec: {m}")));
        if self.frames == 0 || self.height == 0 || self.width == 0 {
            return bad("extents must be positive");
        }
        if self.objects.0 > self.objects.1 || self.size.0 == 0 || self.size.0 > self.size.1 {
            return bad("empty object or size range");
        }
        if self.velocity.0 > self.velocity.1 || self.pan_velocity.0 > self.pan_velocity.1 {
            return bad("empty velocity range");
        }
        if self.palette.is_empty() || self.palette.iter().flatten().any(|v| !(-1.0..=1.0).contains(v)) {
            return bad("palette must be non-empty with colors in [-1, 1]");
        }
        if self.preset == SynthPreset::MovingSquaresPanningBg
            && (self.pan_velocity.0..=self.pan_velocity.1).all(|v| v == 0)
        {
            return bad("panning preset needs a non-zero pan velocity");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Square {
    pub origin: (i64, i64),
    pub velocity: (i64, i64),
    pub size: usize,
    pub color: [f32; 3],
}

#[derive(Clone, Debug, PartialEq)]
pub enum Background {
    Solid([f32; 3]),
    /// Linear blend from `from` at the top edge to `to` at the bottom.
    Gradient { from: [f32; 3], to: [f32; 3] },
    /// Diagonal stripes translating at `velocity` pixels per frame.
    Panning { a: [f32; 3], b: [f32; 3], velocity: (i64, i64) },
}

/// A sampled clip description; rendering is a pure function of it.
#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub background: Background,
    /// Drawn in order; later squares cover earlier ones.
    pub squares: Vec<Square>,
}

fn lerp(a: [f32; 3], b: [f32; 3], t: f32) -> [f32; 3] {
    [a[0] + (b[0] - a[0]) * t, a[1] + (b[1] - a[1]) * t, a[2] + (b[2] - a[2]) * t]
}

impl Scene {
    pub fn background_at(&self, t: usize, y: usize, x: usize) -> [f32; 3] {
        match &self.background {
            Background::Solid(c) => *c,
            Background::Gradient { from, to } => {
                let s = if self.height > 1 { y as f32 / (self.height - 1) as f32 } else { 0.0 };
                lerp(*from, *to, s)
            }
            Background::Panning { a, b, velocity } => {
                let u = x as i64 - velocity.0 * t as i64;
                let v = y as i64 - velocity.1 * t as i64;
                let phase = (u + v).rem_euclid(STRIPE_PERIOD);
                lerp(*a, *b, phase as f32 / (STRIPE_PERIOD - 1) as f32)
            }
        }
    }

    fn render_impl(&self, with_objects: bool) -> Clip {
        let (t_n, h, w) = (self.frames, self.height, self.width);
        let mut data = vec![0f32; t_n * h * w * 3];
        for t in 0..t_n {
            for y in 0..h {
                for x in 0..w {
                    let o = ((t * h + y) * w + x) * 3;
                    data[o..o + 3].copy_from_slice(&self.background_at(t, y, x));
                }
            }
            if !with_objects {
                continue;
            }
            for sq in &self.squares {
                let x0 = sq.origin.0 + sq.velocity.0 * t as i64;
                let y0 = sq.origin.1 + sq.velocity.1 * t as i64;
                let s = sq.size as i64;
                for y in y0.max(0)..(y0 + s).min(h as i64) {
                    for x in x0.max(0)..(x0 + s).min(w as i64) {
                        let o = ((t * h + y as usize) * w + x as usize) * 3;
                        data[o..o + 3].copy_from_slice(&sq.color);
                    }
                }
            }
        }
        Clip {
            tensor: Tensor::new([t_n, h, w, 3], data).expect("extents match buffer"),
        }
    }

    pub fn render(&self) -> Clip {
        self.render_impl(true)
    }

    pub fn render_background(&self) -> Clip {
        self.render_impl(false)
    }
}

/// Samples the scene for clip `index`; deterministic in `(spec.seed, index)`.
pub fn synth_scene(spec: &SynthSpec, index: u64) -> Result<Scene> {
    spec.validate()?;
    let mut rng = seeded(spec.seed.split(index));
    let color = |rng: &mut rand_chacha::ChaCha8Rng, lo: f64, hi: f64| {
        let mut c = [0f32; 3];
        for v in &mut c {
            *v = (lo + (hi - lo) * unit_uniform(rng)) as f32;
        }
        c
    };
    let background = match spec.preset {
        SynthPreset::MovingSquaresStaticBg => {
            let from = color(&mut rng, -1.0, 0.0);
            if rng.random_bool(0.5) {
                Background::Solid(from)
            } else {
                Background::Gradient {
                    from,
                    to: color(&mut rng, -1.0, 0.0),
                }
            }
        }
        SynthPreset::MovingSquaresPanningBg => {
            let a = color(&mut rng, -1.0, -0.5);
            let b = color(&mut rng, -0.2, 0.3);
            let velocity = loop {
                let v = (
                    rng.random_range(spec.pan_velocity.0..=spec.pan_velocity.1) as i64,
                    rng.random_range(spec.pan_velocity.0..=spec.pan_velocity.1) as i64,
                );
                // a shift along the stripes would leave pixels unchanged
                if (v.0 + v.1).rem_euclid(STRIPE_PERIOD) != 0 {
                    break v;
                }
            };
            Background::Panning { a, b, velocity }
        }
    };
    let count = rng.random_range(spec.objects.0..=spec.objects.1);
    let squares = (0..count)
        .map(|_| {
            let size = rng.random_range(spec.size.0..=spec.size.1);
            let origin = (
                rng.random_range(0..spec.width.saturating_sub(size).max(1)) as i64,
                rng.random_range(0..spec.height.saturating_sub(size).max(1)) as i64,
            );
            let velocity = (
                rng.random_range(spec.velocity.0..=spec.velocity.1) as i64,
                rng.random_range(spec.velocity.0..=spec.velocity.1) as i64,
            );
            let color = spec.palette[rng.random_range(0..spec.palette.len())];
            Square {
                origin,
                velocity,
                size,
                color,
            }
        })
        .collect();
    Ok(Scene {
        frames: spec.frames,
        height: spec.height,
        width: spec.width,
        background,
        squares,
    })
}

pub fn synth_clip(spec: &SynthSpec, index: u64) -> Result<Clip> {
    Ok(synth_scene(spec, index)?.render())
}

/// Indexed collection of clips.
pub trait ClipSource {
    fn len(&self) -> usize;
    fn clip(&self, index: usize) -> Result<Clip>;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// `count` synthesized clips, rendered on demand.
#[derive(Clone, Debug)]
pub struct SynthSource {
    pub spec: SynthSpec,
    pub count: usize,
}

impl ClipSource for SynthSource {
    fn len(&self) -> usize {
        self.count
    }

    fn clip(&self, index: usize) -> Result<Clip> {
        synth_clip(&self.spec, index as u64)
    }
}

impl ClipSource for Vec<Clip> {
    fn len(&self) -> usize {
        self.as_slice().len()
    }

    fn clip(&self, index: usize) -> Result<Clip> {
        self.get(index)
            .cloned()
            .ok_or_else(|| Error::Invalid(format!("clip index {index} out of range")))
    }
}

impl<S: ClipSource + ?Sized> ClipSource for Box<S> {
    fn len(&self) -> usize {
        (**self).len()
    }

    fn clip(&self, index: usize) -> Result<Clip> {
        (**self).clip(index)
    }
}

/// Anything that yields `(N, T, H, W, C)` batches.
pub trait BatchStream {
    fn next_batch(&mut self) -> Result<Tensor<f32>>;
}

/// Endless stream of shuffled batches. Each epoch is a fresh seeded
/// permutation of the source; batches run across epoch boundaries so every
/// clip appears exactly once per epoch.
pub struct Batcher<S: ClipSource> {
    source: S,
    batch_size: usize,
    seed: u64,
    epoch: u64,
    order: Vec<usize>,
    pos: usize,
}

impl<S: ClipSource> Batcher<S> {
    pub fn new(source: S, batch_size: usize, seed: u64) -> Result<Self> {
        if batch_size < 2 {
            return Err(Error::BatchTooSmall(batch_size));
        }
        if source.is_empty() {
            return Err(Error::Invalid("batcher needs at least one clip".into()));
        }
        let mut b = Batcher {
            source,
            batch_size,
            seed,
            epoch: 0,
            order: Vec::new(),
            pos: 0,
        };
        b.shuffle();
        Ok(b)
    }

    fn shuffle(&mut self) {
        self.order = (0..self.source.len()).collect();
        self.order.shuffle(&mut seeded(self.seed.split(self.epoch)));
        self.pos = 0;
    }

    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    pub fn source(&self) -> &S {
        &self.source
    }

    /// Source indices of the next batch.
    pub fn next_indices(&mut self) -> Vec<usize> {
        (0..self.batch_size)
            .map(|_| {
                if self.pos == self.order.len() {
                    self.epoch += 1;
                    self.shuffle();
                }
                self.pos += 1;
                self.order[self.pos - 1]
            })
            .collect()
    }
}

impl<S: ClipSource> BatchStream for Batcher<S> {
    fn next_batch(&mut self) -> Result<Tensor<f32>> {
        let clips = self
            .next_indices()
            .into_iter()
            .map(|i| self.source.clip(i))
            .collect::<Result<Vec<_>>>()?;
        Clip::stack(&clips)
    }
}
