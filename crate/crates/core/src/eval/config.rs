//! Flat JSON run configuration.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::apps::{scaled_hole_size, Corruption, HolePlacement, Task, TaskSpec};
use crate::data::{Batcher, ClipSource, SynthPreset, SynthSource, SynthSpec};
use crate::error::{Error, Result};
use crate::models::{NetConfig, Scale};
use crate::tensor::SplitSeed;
use crate::wgan::TrainConfig;

use super::io::{read_clip_dir, write_atomic};

const STREAM_BATCHES: u64 = 5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorruptionKind {
    SaltPepper,
    Hole,
}

/// Every key is optional; `{}` yields the reference hyperparameters at full
/// scale. Unknown keys are rejected.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub lambda: f64,
    pub critic_ratio: usize,
    pub alpha: f64,
    pub beta1: f64,
    pub beta2: f64,
    /// 64 at full scale, 16 at desk scale when unset.
    pub batch_size: Option<usize>,
    pub total_steps: u64,
    pub lr_halve_at: Vec<u64>,
    pub seed: u64,
    pub scale: Scale,
    pub checkpoint_every: u64,
    pub nu: f64,
    pub corruption: CorruptionKind,
    pub noise_p: f64,
    /// 20 pixels at width 64, scaled with the frame width when unset.
    pub hole_size: Option<usize>,
    pub hole_placement: HolePlacement,
    pub preset: SynthPreset,
    /// Number of synthetic clips (ignored with `data_dir`).
    pub clips: usize,
    /// Directory of `.ivc` clips to train on instead of synthetic data.
    pub data_dir: Option<String>,
    pub data_seed: Option<u64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let t = TrainConfig::default();
        RunConfig {
            lambda: t.lambda,
            critic_ratio: t.critic_ratio,
            alpha: t.alpha,
            beta1: t.beta1,
            beta2: t.beta2,
            batch_size: None,
            total_steps: t.total_steps,
            lr_halve_at: t.lr_halve_at,
            seed: t.seed,
            scale: t.scale,
            checkpoint_every: t.checkpoint_every,
            nu: 1000.0,
            corruption: CorruptionKind::SaltPepper,
            noise_p: 0.25,
            hole_size: None,
            hole_placement: HolePlacement::Center,
            preset: SynthPreset::MovingSquaresStaticBg,
            clips: 1024,
            data_dir: None,
            data_seed: None,
        }
    }
}

fn key_err(key: &str, msg: impl Into<String>) -> Error {
    Error::Config {
        key: key.into(),
        msg: msg.into(),
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let inner = e.into_inner();
            let msg = inner.to_string();
            // unknown fields are reported at the parent path; name the key
            let key = msg
                .strip_prefix("unknown field `")
                .and_then(|rest| rest.split('`').next())
                .map(str::to_string)
                .unwrap_or(path);
            key_err(&key, msg)
        })?;
        cfg.resolve()
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// Fills every unset optional from the scale preset and validates.
    pub fn resolve(mut self) -> Result<Self> {
        let net = NetConfig::preset(self.scale);
        self.batch_size.get_or_insert(match self.scale {
            Scale::Full => 64,
            Scale::Desk => 16,
        });
        self.hole_size.get_or_insert(scaled_hole_size(net.width));
        self.data_seed.get_or_insert(self.seed);
        if self.clips == 0 && self.data_dir.is_none() {
            return Err(key_err("clips", "must be ≥ 1"));
        }
        if self.hole_size.is_some_and(|s| s == 0 || s > net.width.min(net.height)) {
            return Err(key_err("hole_size", format!("must lie in 1..={}", net.width.min(net.height))));
        }
        self.train()?.validate()?;
        self.task(Task::Inpaint).validate()?;
        Ok(self)
    }

    pub fn net(&self) -> NetConfig {
        NetConfig::preset(self.scale)
    }

    pub fn train(&self) -> Result<TrainConfig> {
        Ok(TrainConfig {
            lambda: self.lambda,
            critic_ratio: self.critic_ratio,
            alpha: self.alpha,
            beta1: self.beta1,
            beta2: self.beta2,
            batch_size: self.batch_size.ok_or_else(|| key_err("batch_size", "unresolved"))?,
            total_steps: self.total_steps,
            lr_halve_at: self.lr_halve_at.clone(),
            seed: self.seed,
            scale: self.scale,
            checkpoint_every: self.checkpoint_every,
        })
    }

    pub fn task(&self, task: Task) -> TaskSpec {
        let corruption = match self.corruption {
            CorruptionKind::SaltPepper => Corruption::SaltPepper { p: self.noise_p },
            CorruptionKind::Hole => Corruption::Hole {
                size: self.hole_size.unwrap_or(1),
                placement: self.hole_placement,
            },
        };
        TaskSpec {
            task,
            nu: self.nu,
            corruption,
        }
    }

    pub fn synth(&self) -> SynthSpec {
        let net = self.net();
        SynthSpec::desk(self.preset, self.data_seed.unwrap_or(self.seed)).with_extents(net.frames, net.height, net.width)
    }

    /// The configured clips: `data_dir` if set, otherwise `clips` synthetic
    /// ones.
    pub fn source(&self) -> Result<Box<dyn ClipSource>> {
        Ok(match &self.data_dir {
            Some(dir) => {
                let clips = read_clip_dir(Path::new(dir))?;
                if clips.is_empty() {
                    return Err(key_err("data_dir", format!("no .ivc clips in {dir}")));
                }
                Box::new(clips)
            }
            None => Box::new(SynthSource {
                spec: self.synth(),
                count: self.clips,
            }),
        })
    }

    pub fn batcher(&self) -> Result<Batcher<Box<dyn ClipSource>>> {
        let seed = self.data_seed.unwrap_or(self.seed).split(STREAM_BATCHES);
        Batcher::new(self.source()?, self.train()?.batch_size, seed)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plain data serializes")
    }

    /// Writes the resolved configuration as `resolved_config.json` in `dir`.
    pub fn echo(&self, dir: &Path) -> Result<()> {
        write_atomic(&dir.join("resolved_config.json"), self.to_json().as_bytes())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_object_gives_reference_values() {
        let c = RunConfig::from_json("{}").unwrap();
        let t = c.train().unwrap();
        assert_eq!((t.lambda, t.critic_ratio, t.alpha, t.beta1, t.beta2), (10.0, 5, 2e-4, 0.5, 0.99));
        assert_eq!(t.batch_size, 64);
        assert_eq!(c.task(Task::Inpaint).nu, 1000.0);
        assert_eq!(c.task(Task::Inpaint).corruption, Corruption::SaltPepper { p: 0.25 });
        assert_eq!(c.hole_size, Some(20));
    }

    #[test]
    fn errors_name_the_key() {
        let key = |text: &str| match RunConfig::from_json(text) {
            Err(Error::Config { key, .. }) => key,
            other => panic!("{other:?}"),
        };
        assert_eq!(key(r#"{"lambda": -1}"#), "lambda");
        assert_eq!(key(r#"{"lamda": 1}"#), "lamda");
        assert_eq!(key(r#"{"critic_ratio": "five"}"#), "critic_ratio");
        assert_eq!(key(r#"{"beta2": 1.0}"#), "beta2");
        assert_eq!(key(r#"{"scale": "huge"}"#), "scale");
        assert_eq!(key(r#"{"noise_p": 2}"#), "noise_p");
    }

    #[test]
    fn resolved_config_is_idempotent() {
        let c = RunConfig::from_json(r#"{"scale": "desk", "corruption": "hole"}"#).unwrap();
        assert_eq!(c.batch_size, Some(16));
        assert_eq!(c.hole_size, Some(5));
        let again = RunConfig::from_json(&c.to_json()).unwrap();
        assert_eq!(again, c);
        assert_eq!(again.to_json(), c.to_json());
    }
}
