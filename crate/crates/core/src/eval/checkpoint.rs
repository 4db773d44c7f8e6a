//! `IVGC` checkpoints.
//!
//! Layout (little-endian): magic `IVGC`, version u32, tensor count u32, then
//! per tensor: name length u32, UTF-8 name, rank u32, extents u32×rank,
//! dtype u8 (0 = f32, 1 = f64), raw values. A CRC-32 of every preceding byte
//! closes the file.

use std::path::Path;

use crate::error::{Error, Result};
use crate::layers::{ParamSet, RunningStats};
use crate::apps::TaskTrainer;
use crate::models::{CriticNet, EncoderNet, GeneratorNet, NetConfig};
use crate::wgan::WganTrainer;
use crate::tensor::{DType, Element, Tensor};

use super::io::{write_atomic, Reader};

const MAGIC: &[u8; 4] = b"IVGC";
const VERSION: u32 = 1;
const META_NET: &str = "meta.net_config";
const META_STEP: &str = "meta.step";

#[derive(Clone, Debug, PartialEq)]
pub enum TensorData {
    F32(Tensor<f32>),
    F64(Tensor<f64>),
}

impl TensorData {
    pub fn dims(&self) -> &[usize] {
        match self {
            TensorData::F32(t) => t.dims(),
            TensorData::F64(t) => t.dims(),
        }
    }

    pub fn dtype(&self) -> DType {
        match self {
            TensorData::F32(_) => DType::F32,
            TensorData::F64(_) => DType::F64,
        }
    }
}

/// Ordered, named tensors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    pub entries: Vec<(String, TensorData)>,
}

fn write_tensor<T: Element>(out: &mut Vec<u8>, t: &Tensor<T>) {
    for &v in t.data() {
        v.write_le(out);
    }
}

fn read_tensor<T: Element>(r: &mut Reader<'_>, dims: Vec<usize>) -> Result<Tensor<T>> {
    let n: usize = dims.iter().product();
    let size = T::DTYPE.size_of();
    let bytes = r.take(n * size)?;
    let data = bytes.chunks_exact(size).map(T::read_le).collect();
    Tensor::new(dims, data)
}

impl Checkpoint {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, data: TensorData) {
        self.entries.push((name.into(), data));
    }

    pub fn push_f32(&mut self, name: impl Into<String>, t: Tensor<f32>) {
        self.push(name, TensorData::F32(t));
    }

    pub fn push_f64(&mut self, name: impl Into<String>, t: Tensor<f64>) {
        self.push(name, TensorData::F64(t));
    }

    pub fn get(&self, name: &str) -> Option<&TensorData> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, d)| d)
    }

    pub fn get_f32(&self, name: &str) -> Result<Tensor<f32>> {
        match self.get(name) {
            Some(TensorData::F32(t)) => Ok(t.clone()),
            Some(TensorData::F64(t)) => Ok(t.cast()),
            None => Err(Error::Format(format!("checkpoint has no tensor `{name}`"))),
        }
    }

    pub fn get_f64(&self, name: &str) -> Result<Tensor<f64>> {
        match self.get(name) {
            Some(TensorData::F64(t)) => Ok(t.clone()),
            Some(TensorData::F32(t)) => Ok(t.cast()),
            None => Err(Error::Format(format!("checkpoint has no tensor `{name}`"))),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for (name, data) in &self.entries {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            let dims = data.dims();
            out.extend_from_slice(&(dims.len() as u32).to_le_bytes());
            for &d in dims {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            out.push(data.dtype().code());
            match data {
                TensorData::F32(t) => write_tensor(&mut out, t),
                TensorData::F64(t) => write_tensor(&mut out, t),
            }
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 16 {
            return Err(Error::Format("checkpoint truncated".into()));
        }
        let (body, tail) = bytes.split_at(bytes.len() - 4);
        let stored = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
        if crc32fast::hash(body) != stored {
            return Err(Error::Format("checkpoint CRC mismatch".into()));
        }
        let mut r = Reader::new(body);
        if r.take(4)? != MAGIC {
            return Err(Error::Format("not an IVGC checkpoint".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {version}")));
        }
        let count = r.u32()?;
        let mut ck = Checkpoint::new();
        for _ in 0..count {
            let len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(len)?)
                .map_err(|_| Error::Format("tensor name is not UTF-8".into()))?
                .to_string();
            let rank = r.u32()? as usize;
            let dims = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let code = r.take(1)?[0];
            let dtype = DType::from_code(code).ok_or_else(|| Error::Format(format!("unknown dtype code {code}")))?;
            let data = match dtype {
                DType::F32 => TensorData::F32(read_tensor(&mut r, dims)?),
                DType::F64 => TensorData::F64(read_tensor(&mut r, dims)?),
            };
            ck.push(name, data);
        }
        if !r.is_empty() {
            return Err(Error::Format("trailing bytes after last tensor".into()));
        }
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    fn push_params<T: Element>(&mut self, params: &ParamSet<T>) {
        for (name, t) in params.iter() {
            self.push_f32(name, t.cast());
        }
    }

    fn push_stats<T: Element>(&mut self, prefix: &str, stats: &[RunningStats<T>]) {
        for (i, s) in stats.iter().enumerate() {
            self.push_f32(format!("{prefix}.stats{i}.mean"), s.mean.cast());
            self.push_f32(format!("{prefix}.stats{i}.var"), s.var.cast());
        }
    }

    fn load_params(&self, params: &mut ParamSet<f32>) -> Result<()> {
        let names = params.names().to_vec();
        for name in names {
            params.set(&name, self.get_f32(&name)?)?;
        }
        Ok(())
    }

    fn load_stats(&self, prefix: &str, stats: &mut [RunningStats<f32>]) -> Result<()> {
        for (i, s) in stats.iter_mut().enumerate() {
            s.mean = self.get_f32(&format!("{prefix}.stats{i}.mean"))?;
            s.var = self.get_f32(&format!("{prefix}.stats{i}.var"))?;
        }
        Ok(())
    }

    pub fn set_net_config(&mut self, cfg: &NetConfig) {
        let meta = cfg.to_meta();
        self.push_f64(META_NET, Tensor::from_f64([meta.len()], &meta).expect("non-empty"));
    }

    pub fn net_config(&self) -> Result<NetConfig> {
        NetConfig::from_meta(self.get_f64(META_NET)?.data())
    }

    pub fn set_step(&mut self, step: u64) {
        self.push_f64(META_STEP, Tensor::scalar(step as f64));
    }

    pub fn step(&self) -> Option<u64> {
        self.get_f64(META_STEP).ok().map(|t| t.data()[0] as u64)
    }

    pub fn add_generator<T: Element>(&mut self, g: &GeneratorNet<T>) {
        self.push_params(&g.params);
        self.push_stats("gen", &g.stats);
    }

    pub fn add_critic<T: Element>(&mut self, c: &CriticNet<T>) {
        self.push_params(&c.params);
    }

    pub fn add_encoder<T: Element>(&mut self, e: &EncoderNet<T>) {
        self.push_params(&e.params);
        self.push_stats("enc", &e.stats);
    }

    pub fn generator(&self) -> Result<GeneratorNet<f32>> {
        let mut g = crate::models::build_generator(&self.net_config()?, 0)?;
        self.load_params(&mut g.params)?;
        self.load_stats("gen", &mut g.stats)?;
        Ok(g)
    }

    pub fn critic(&self) -> Result<CriticNet<f32>> {
        let mut c = crate::models::build_critic(&self.net_config()?, 0)?;
        self.load_params(&mut c.params)?;
        Ok(c)
    }

    pub fn encoder(&self) -> Result<EncoderNet<f32>> {
        let w = self.get_f32("enc.conv0.w")?;
        let in_channels = *w.dims().last().ok_or_else(|| Error::Format("bad encoder weight".into()))?;
        let mut e = crate::models::build_encoder(&self.net_config()?, in_channels, 0)?;
        self.load_params(&mut e.params)?;
        self.load_stats("enc", &mut e.stats)?;
        Ok(e)
    }
}

impl WganTrainer {
    /// Network config, step, generator (with running statistics) and critic.
    pub fn checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::new();
        ck.set_net_config(&self.net);
        ck.set_step(self.step);
        ck.add_generator(&self.generator);
        ck.add_critic(&self.critic);
        ck
    }
}

impl TaskTrainer {
    /// As for [`WganTrainer::checkpoint`], plus the encoder.
    pub fn checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::new();
        ck.set_net_config(&self.net);
        ck.set_step(self.step);
        ck.add_generator(&self.generator);
        ck.add_critic(&self.critic);
        ck.add_encoder(&self.encoder);
        ck
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{build_encoder, build_generator};
    use crate::tensor::{rng_fill, Distribution};

    fn sample() -> Checkpoint {
        let mut ck = Checkpoint::new();
        ck.push_f32("a", rng_fill(Distribution::Normal, [2, 3], 1));
        ck.push_f64("b.c", rng_fill(Distribution::Normal, [4], 2));
        ck.push_f32("nan", Tensor::from_f64([2], &[f64::NAN, -0.0]).unwrap());
        ck
    }

    #[test]
    fn round_trip_bitwise() {
        let ck = sample();
        let bytes = ck.to_bytes();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back.to_bytes(), bytes);
        assert_eq!(back.entries[0], ck.entries[0]);
        let TensorData::F32(t) = &back.entries[2].1 else { panic!() };
        assert!(t.data()[0].is_nan() && t.data()[1].is_sign_negative());
    }

    #[test]
    fn corruption_detected() {
        let mut bytes = sample().to_bytes();
        bytes[20] ^= 1;
        assert!(Checkpoint::from_bytes(&bytes).is_err());
        let bytes = sample().to_bytes();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 1]).is_err());
    }

    #[test]
    fn networks_restore() {
        let cfg = NetConfig::desk();
        let mut g = build_generator::<f32>(&cfg, 3).unwrap();
        g.stats[1].mean = Tensor::full([64], 0.5);
        let e = build_encoder::<f32>(&cfg, 1, 4).unwrap();
        let mut ck = Checkpoint::new();
        ck.set_net_config(&cfg);
        ck.set_step(42);
        ck.add_generator(&g);
        ck.add_encoder(&e);
        let ck = Checkpoint::from_bytes(&ck.to_bytes()).unwrap();
        assert_eq!(ck.step(), Some(42));
        let g2 = ck.generator().unwrap();
        assert_eq!(g2.params.values(), g.params.values());
        assert_eq!(g2.stats, g.stats);
        let e2 = ck.encoder().unwrap();
        assert_eq!(e2.in_channels, 1);
        assert_eq!(e2.params.values(), e.params.values());
    }
}
