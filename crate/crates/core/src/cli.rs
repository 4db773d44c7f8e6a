//! Command-line entry points.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::apps::{condition, to_grayscale, Task, TaskSpec, TaskTrainer};
use crate::data::{synth_clip, Clip, SynthPreset};
use crate::error::{Error, Result};
use crate::eval::{
    export_frames, psnr, read_clip, write_clip, Checkpoint, ColorSpace, MetricsWriter, RunConfig,
};
use crate::gradcheck::run_suite;
use crate::wgan::{generate, WganTrainer};

#[derive(Parser, Debug)]
#[command(name = "ivgan", version, about = "Video WGAN-GP training, sampling and evaluation")]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Unconditional training.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Encoder + generator training for a conditional task.
    TaskTrain {
        #[arg(long)]
        task: String,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Sample clips from random latent codes.
    Generate {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long, default_value_t = 1)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Also write PPM frames for every clip.
        #[arg(long)]
        frames: bool,
    },
    /// Run a task checkpoint on one clip.
    Apply {
        #[arg(long)]
        task: String,
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Treat the input as clean and apply the task's corruption first
        /// (inpainting uses 25% salt & pepper).
        #[arg(long)]
        corrupt: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        frames: bool,
    },
    /// Metrics.
    Eval {
        #[command(subcommand)]
        metric: Metric,
    },
    /// Write synthetic clips as .ivc files.
    DataSynth {
        #[arg(long)]
        preset: String,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        frames: bool,
    },
    /// Finite-difference checks of every differentiable op.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Subcommand, Debug)]
enum Metric {
    Psnr {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        #[arg(long, default_value = "gray")]
        space: String,
    },
}

/// Parses `argv` (including the program name), runs the command and returns
/// the process exit code: 0 success, 1 runtime failure, 2 usage error.
pub fn run<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match dispatch(cli.cmd) {
        Ok(()) => 0,
        Err(Error::Config { key, msg }) if key == "--task" || key == "--preset" || key == "--space" => {
            eprintln!("error: invalid value for {key}: {msg}");
            2
        }
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn usage(flag: &str, e: Error) -> Error {
    Error::Config {
        key: flag.into(),
        msg: e.to_string(),
    }
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Train { config, out } => train(&config, &out),
        Command::TaskTrain { task, config, out } => {
            let task = Task::parse(&task).map_err(|e| usage("--task", e))?;
            task_train(task, &config, &out)
        }
        Command::Generate {
            ckpt,
            n,
            seed,
            out,
            frames,
        } => {
            let mut g = Checkpoint::load(&ckpt)?.generator()?;
            fs::create_dir_all(&out)?;
            for (i, clip) in Clip::unstack(&generate(&mut g, n, seed)?)?.iter().enumerate() {
                save_clip(&out, &format!("sample_{i:04}"), clip, frames)?;
            }
            Ok(())
        }
        Command::Apply {
            task,
            ckpt,
            input,
            out,
            corrupt,
            seed,
            frames,
        } => {
            let task = Task::parse(&task).map_err(|e| usage("--task", e))?;
            apply(task, &ckpt, &input, &out, corrupt, seed, frames)
        }
        Command::Eval {
            metric: Metric::Psnr { a, b, space },
        } => {
            let space = ColorSpace::parse(&space).map_err(|e| usage("--space", e))?;
            let db = psnr(read_clip(&a)?.tensor(), read_clip(&b)?.tensor(), space)?;
            println!("{db:.4}");
            Ok(())
        }
        Command::DataSynth {
            preset,
            n,
            seed,
            out,
            frames,
        } => {
            let preset = SynthPreset::parse(&preset).map_err(|e| usage("--preset", e))?;
            let spec = crate::data::SynthSpec::desk(preset, seed);
            fs::create_dir_all(&out)?;
            for i in 0..n {
                save_clip(&out, &format!("clip_{i:04}"), &synth_clip(&spec, i as u64)?, frames)?;
            }
            Ok(())
        }
        Command::Gradcheck { seed } => {
            let results = run_suite(seed)?;
            let mut failed = 0;
            for r in &results {
                println!(
                    "{} {:<36} max_rel_err={:.3e} ({} elements)",
                    if r.passed { "ok  " } else { "FAIL" },
                    r.name,
                    r.max_rel_err,
                    r.elements
                );
                failed += usize::from(!r.passed);
            }
            if failed > 0 {
                return Err(Error::Invalid(format!("{failed} of {} gradient checks failed", results.len())));
            }
            println!("all {} gradient checks passed", results.len());
            Ok(())
        }
    }
}

fn save_clip(dir: &Path, stem: &str, clip: &Clip, frames: bool) -> Result<()> {
    write_clip(&dir.join(format!("{stem}.ivc")), clip)?;
    if frames {
        export_frames(clip, &dir.join(stem))?;
    }
    Ok(())
}

fn checkpoint_name(step: u64) -> String {
    format!("checkpoint_{step:06}.ivgc")
}

fn due(step: u64, every: u64) -> bool {
    every > 0 && step % every == 0
}

/// Writes metrics, periodic checkpoints and `final.ivgc` into `out`.
pub fn train(config: &Path, out: &Path) -> Result<()> {
    let cfg = RunConfig::load(config)?;
    fs::create_dir_all(out)?;
    cfg.echo(out)?;
    let mut data = cfg.batcher()?;
    let mut trainer = WganTrainer::new(cfg.train()?, cfg.net())?;
    let mut metrics = MetricsWriter::create(&out.join("metrics.jsonl"))?;
    trainer.train_loop(&mut data, &mut |r, t| {
        metrics.write(r)?;
        if due(t.step, t.cfg.checkpoint_every) {
            t.checkpoint().save(&out.join(checkpoint_name(t.step)))?;
        }
        Ok(())
    })?;
    trainer.checkpoint().save(&out.join("final.ivgc"))
}

pub fn task_train(task: Task, config: &Path, out: &Path) -> Result<()> {
    let cfg = RunConfig::load(config)?;
    fs::create_dir_all(out)?;
    cfg.echo(out)?;
    let mut data = cfg.batcher()?;
    let mut trainer = TaskTrainer::new(cfg.train()?, cfg.task(task), cfg.net())?;
    let mut metrics = MetricsWriter::create(&out.join("metrics.jsonl"))?;
    trainer.train_loop(&mut data, &mut |r, t| {
        metrics.write(r)?;
        if due(t.step, t.cfg.checkpoint_every) {
            t.checkpoint().save(&out.join(checkpoint_name(t.step)))?;
        }
        Ok(())
    })?;
    trainer.checkpoint().save(&out.join("final.ivgc"))
}

fn apply(task: Task, ckpt: &Path, input: &Path, out: &Path, corrupt: bool, seed: u64, frames: bool) -> Result<()> {
    let ck = Checkpoint::load(ckpt)?;
    let net = ck.net_config()?;
    let mut trainer = TaskTrainer::new(
        crate::wgan::TrainConfig {
            batch_size: 2,
            ..Default::default()
        },
        TaskSpec::new(task),
        net,
    )?;
    trainer.generator = ck.generator()?;
    trainer.encoder = ck.encoder()?;
    if trainer.encoder.in_channels != task.condition_channels() {
        return Err(Error::Invalid(format!(
            "checkpoint encoder takes {} channels, {} needs {}",
            trainer.encoder.in_channels,
            task.name(),
            task.condition_channels()
        )));
    }

    let clip = read_clip(input)?;
    let batch = Clip::stack(std::slice::from_ref(&clip))?;
    let c = clip.extents()[3];
    let y = match (task, c) {
        (_, 3) if corrupt || task == Task::Predict => condition(&trainer.spec, &batch, seed)?,
        (Task::ColorizeSupervised | Task::ColorizeUnsupervised, 3) => to_grayscale(&batch)?,
        (Task::ColorizeSupervised | Task::ColorizeUnsupervised, 1) if !corrupt => batch,
        (Task::Inpaint, 3) => batch,
        _ => {
            return Err(Error::Invalid(format!(
                "{} cannot use a {c}-channel input{}",
                task.name(),
                if corrupt { " with --corrupt" } else { "" }
            )))
        }
    };
    let want = net.clip_extents();
    if y.dims()[1..4] != want[..3] {
        return Err(Error::shape("apply", &want[..3], &y.dims()[1..4]));
    }
    let recon = trainer.reconstruct(&y)?;
    fs::create_dir_all(out)?;
    save_clip(out, "condition", &Clip::unstack(&y)?.remove(0), frames)?;
    save_clip(out, "output", &Clip::unstack(&recon)?.remove(0), frames)
}
