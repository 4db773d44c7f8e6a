//! Byte-level helpers, `.ivc` clip files and PPM frame export.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::data::Clip;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Writes `bytes` to a sibling temporary file and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let name = path
        .file_name()
        .ok_or_else(|| Error::Invalid(format!("not a file path: {}", path.display())))?;
    let mut tmp_name = name.to_os_string();
    tmp_name.push(".tmp");
    let tmp = path.with_file_name(tmp_name);
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub(crate) struct Reader<'a> {
    bytes: &'a [u8],
}

impl<'a> Reader<'a> {
    pub(crate) fn new(bytes: &'a [u8]) -> Self {
        Reader { bytes }
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if n > self.bytes.len() {
            return Err(Error::Format("unexpected end of data".into()));
        }
        let (head, rest) = self.bytes.split_at(n);
        self.bytes = rest;
        Ok(head)
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    pub(crate) fn is_empty(&self) -> bool {
        self.bytes.is_empty()
    }
}

const CLIP_MAGIC: &[u8; 4] = b"IVCL";
const CLIP_VERSION: u32 = 1;

/// `.ivc` encoding: magic `IVCL`, version u32, T, H, W, C as u32, then f32
/// little-endian values.
pub fn clip_to_bytes(clip: &Clip) -> Vec<u8> {
    let mut out = Vec::with_capacity(24 + clip.tensor().numel() * 4);
    out.extend_from_slice(CLIP_MAGIC);
    out.extend_from_slice(&CLIP_VERSION.to_le_bytes());
    for d in clip.extents() {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for v in clip.tensor().data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn clip_from_bytes(bytes: &[u8]) -> Result<Clip> {
    let mut r = Reader::new(bytes);
    if r.take(4)? != CLIP_MAGIC {
        return Err(Error::Format("not an IVCL clip".into()));
    }
    let version = r.u32()?;
    if version != CLIP_VERSION {
        return Err(Error::Format(format!("unsupported clip version {version}")));
    }
    let dims = (0..4).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
    let n: usize = dims.iter().product();
    if r.bytes.len() != n * 4 {
        return Err(Error::Format(format!(
            "clip header {dims:?} implies {} payload bytes, found {}",
            n * 4,
            r.bytes.len()
        )));
    }
    let data = r.take(n * 4)?.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes"))).collect();
    Clip::new(Tensor::new(dims, data)?)
}

pub fn write_clip(path: &Path, clip: &Clip) -> Result<()> {
    write_atomic(path, &clip_to_bytes(clip))
}

pub fn read_clip(path: &Path) -> Result<Clip> {
    clip_from_bytes(&fs::read(path)?)
}

/// All `.ivc` files in `dir`, in file-name order.
pub fn read_clip_dir(dir: &Path) -> Result<Vec<Clip>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "ivc"))
        .collect();
    paths.sort();
    paths.iter().map(|p| read_clip(p)).collect()
}

/// `[−1, 1]` → byte via `(v+1)/2·255`, rounding halves up.
pub fn to_byte(v: f32) -> u8 {
    let s = (v.clamp(-1.0, 1.0) as f64 + 1.0) / 2.0 * 255.0;
    (s + 0.5).floor() as u8
}

/// One binary PPM per frame, `frame_0000.ppm`, …; grayscale clips are
/// written with the channel replicated.
pub fn export_frames(clip: &Clip, dir: &Path) -> Result<Vec<PathBuf>> {
    let [t_n, h, w, c] = clip.extents();
    if c != 1 && c != 3 {
        return Err(Error::Invalid(format!("cannot export {c}-channel frames")));
    }
    fs::create_dir_all(dir)?;
    let digits = (t_n.max(2) - 1).to_string().len().max(4);
    let frame_len = h * w * c;
    (0..t_n)
        .map(|t| {
            let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
            for px in clip.tensor().data()[t * frame_len..(t + 1) * frame_len].chunks(c) {
                if c == 1 {
                    out.extend_from_slice(&[to_byte(px[0]); 3]);
                } else {
                    out.extend(px.iter().map(|&v| to_byte(v)));
                }
            }
            let path = dir.join(format!("frame_{t:0digits$}.ppm"));
            write_atomic(&path, &out)?;
            Ok(path)
        })
        .collect()
}
