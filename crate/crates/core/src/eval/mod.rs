//! Metrics, file formats and run configuration.

mod checkpoint;
mod config;
mod io;

pub use checkpoint::{Checkpoint, TensorData};
pub use config::{CorruptionKind, RunConfig};
pub use io::{
    clip_from_bytes, clip_to_bytes, export_frames, read_clip, read_clip_dir, to_byte, write_atomic, write_clip,
};

use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::Serialize;

use crate::apps::to_grayscale;
use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

/// Reported for identical inputs.
pub const PSNR_CAP_DB: f64 = 99.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ColorSpace {
    Gray,
    Rgb,
}

impl ColorSpace {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "gray" => Ok(ColorSpace::Gray),
            "rgb" => Ok(ColorSpace::Rgb),
            _ => Err(Error::Invalid(format!("unknown color space `{s}`"))),
        }
    }
}

/// `10·log10(1/MSE)` after mapping values to `[0, 1]`, capped at 99 dB.
/// Gray mode converts 3-channel inputs to luma first; 1-channel inputs are
/// taken as luma already.
pub fn psnr<T: Element>(a: &Tensor<T>, b: &Tensor<T>, space: ColorSpace) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::shape("psnr", a.dims(), b.dims()));
    }
    let prep = |x: &Tensor<T>| -> Result<Tensor<T>> {
        match (space, x.dims().last()) {
            (ColorSpace::Gray, Some(3)) => to_grayscale(x),
            _ => Ok(x.clone()),
        }
    };
    let (a, b) = (prep(a)?, prep(b)?);
    let mse = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| {
            let d = (x.as_f64() - y.as_f64()) / 2.0;
            d * d
        })
        .sum::<f64>()
        / a.numel() as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (1.0 / mse).log10()).min(PSNR_CAP_DB))
}

/// Appends one JSON object per line.
pub struct MetricsWriter {
    out: BufWriter<File>,
}

impl MetricsWriter {
    pub fn create(path: &Path) -> Result<Self> {
        let f = OpenOptions::new().create(true).write(true).truncate(true).open(path)?;
        Ok(MetricsWriter { out: BufWriter::new(f) })
    }

    pub fn write<S: Serialize>(&mut self, record: &S) -> Result<()> {
        serde_json::to_writer(&mut self.out, record)?;
        self.out.write_all(b"\n")?;
        self.out.flush()?;
        Ok(())
    }
}
