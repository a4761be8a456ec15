//! File formats: the DLPH tensor container, weight checkpoints, raw video
//! tensors, WAV audio, and atomic writes.
//!
//! DLPH layout (little-endian throughout): magic `DLPH`, version `u32`,
//! entry count `u32`; per entry a `u16` name length, the UTF-8 name, a dtype
//! code `u8` (0 = f32, 1 = f64, 2 = i64), rank `u8`, `rank` dims as `u64`,
//! then the raw element data.

use std::collections::BTreeSet;
use std::fs;
use std::io::{Cursor, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};

use crate::error::{input_err, Error, Result};
use crate::params::ParamStore;
use crate::scalar::{DType, Scalar};
use crate::tensor::Tensor;

pub const DLPH_MAGIC: &[u8; 4] = b"DLPH";
pub const DLPH_VERSION: u32 = 1;
pub const VIDEO_ENTRY: &str = "video";

#[derive(Debug, Clone, PartialEq)]
pub enum DlphData {
    F32(Vec<f32>),
    F64(Vec<f64>),
    I64(Vec<i64>),
}

impl DlphData {
    pub fn dtype(&self) -> DType {
        match self {
            DlphData::F32(_) => DType::F32,
            DlphData::F64(_) => DType::F64,
            DlphData::I64(_) => DType::I64,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            DlphData::F32(v) => v.len(),
            DlphData::F64(v) => v.len(),
            DlphData::I64(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn to_f64(&self) -> Vec<f64> {
        match self {
            DlphData::F32(v) => v.iter().map(|&x| x as f64).collect(),
            DlphData::F64(v) => v.clone(),
            DlphData::I64(v) => v.iter().map(|&x| x as f64).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DlphEntry {
    pub name: String,
    pub dims: Vec<usize>,
    pub data: DlphData,
}

impl DlphEntry {
    pub fn from_tensor<T: Scalar>(name: &str, t: &Tensor<T>) -> Self {
        let data = if T::DTYPE == DType::F64 {
            DlphData::F64(t.to_f64_vec())
        } else {
            DlphData::F32(t.data().iter().map(|v| v.f64() as f32).collect())
        };
        Self {
            name: name.to_string(),
            dims: t.shape().to_vec(),
            data,
        }
    }

    /// Converts to `T`, exactly when the stored precision matches.
    pub fn to_tensor<T: Scalar>(&self) -> Result<Tensor<T>> {
        let data: Vec<T> = match &self.data {
            DlphData::F32(v) if T::DTYPE == DType::F32 => {
                v.iter().map(|&x| T::c(x as f64)).collect()
            }
            other => other.to_f64().into_iter().map(T::c).collect(),
        };
        Tensor::new(&self.dims, data)
    }
}

fn format_err(msg: impl Into<String>) -> Error {
    Error::Format(msg.into())
}

pub fn encode_dlph(entries: &[DlphEntry]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(DLPH_MAGIC);
    out.write_u32::<LE>(DLPH_VERSION).expect("vec write");
    out.write_u32::<LE>(entries.len() as u32)
        .expect("vec write");
    for e in entries {
        let name = e.name.as_bytes();
        if name.len() > u16::MAX as usize || e.dims.len() > u8::MAX as usize {
            return Err(input_err!("entry {:?} cannot be encoded", e.name));
        }
        if e.dims.iter().product::<usize>() != e.data.len() {
            return Err(input_err!(
                "entry {:?} dims {:?} disagree with data",
                e.name,
                e.dims
            ));
        }
        out.write_u16::<LE>(name.len() as u16).expect("vec write");
        out.extend_from_slice(name);
        out.push(e.data.dtype() as u8);
        out.push(e.dims.len() as u8);
        for &d in &e.dims {
            out.write_u64::<LE>(d as u64).expect("vec write");
        }
        match &e.data {
            DlphData::F32(v) => v
                .iter()
                .for_each(|&x| out.write_f32::<LE>(x).expect("vec write")),
            DlphData::F64(v) => v
                .iter()
                .for_each(|&x| out.write_f64::<LE>(x).expect("vec write")),
            DlphData::I64(v) => v
                .iter()
                .for_each(|&x| out.write_i64::<LE>(x).expect("vec write")),
        }
    }
    Ok(out)
}

pub fn decode_dlph(bytes: &[u8]) -> Result<Vec<DlphEntry>> {
    let trunc = |_| format_err("truncated DLPH data");
    let mut r = Cursor::new(bytes);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(trunc)?;
    if &magic != DLPH_MAGIC {
        return Err(format_err("bad magic, not a DLPH file"));
    }
    let version = r.read_u32::<LE>().map_err(trunc)?;
    if version != DLPH_VERSION {
        return Err(format_err(format!("unsupported DLPH version {version}")));
    }
    let count = r.read_u32::<LE>().map_err(trunc)?;
    let mut entries = Vec::new();
    for _ in 0..count {
        let len = r.read_u16::<LE>().map_err(trunc)? as usize;
        let mut name = vec![0u8; len];
        r.read_exact(&mut name).map_err(trunc)?;
        let name = String::from_utf8(name).map_err(|_| format_err("entry name is not UTF-8"))?;
        let code = r.read_u8().map_err(trunc)?;
        let dtype = DType::from_code(code)
            .ok_or_else(|| format_err(format!("entry {name:?} has unknown dtype code {code}")))?;
        let rank = r.read_u8().map_err(trunc)? as usize;
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(r.read_u64::<LE>().map_err(trunc)? as usize);
        }
        let n = dims
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .ok_or_else(|| format_err(format!("entry {name:?} is too large")))?;
        let width = dtype.size();
        let remaining = bytes.len() - r.position() as usize;
        if n.checked_mul(width).map_or(true, |b| b > remaining) {
            return Err(format_err(format!("entry {name:?} payload is truncated")));
        }
        let data = match dtype {
            DType::F32 => DlphData::F32(
                (0..n)
                    .map(|_| r.read_f32::<LE>())
                    .collect::<Result<_, _>>()
                    .map_err(trunc)?,
            ),
            DType::F64 => DlphData::F64(
                (0..n)
                    .map(|_| r.read_f64::<LE>())
                    .collect::<Result<_, _>>()
                    .map_err(trunc)?,
            ),
            DType::I64 => DlphData::I64(
                (0..n)
                    .map(|_| r.read_i64::<LE>())
                    .collect::<Result<_, _>>()
                    .map_err(trunc)?,
            ),
        };
        entries.push(DlphEntry { name, dims, data });
    }
    if (r.position() as usize) != bytes.len() {
        return Err(format_err("trailing bytes after the last entry"));
    }
    Ok(entries)
}

/// Writes through a temporary file in the same directory, then renames.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    let name = path
        .file_name()
        .ok_or_else(|| input_err!("{} is not a file path", path.display()))?;
    let tmp = dir.join(format!(
        ".{}.tmp{}",
        name.to_string_lossy(),
        std::process::id()
    ));
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    result.map_err(|e| {
        let _ = fs::remove_file(&tmp);
        Error::io(path, e)
    })
}

pub fn read_dlph(path: &Path) -> Result<Vec<DlphEntry>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_dlph(&bytes)
}

pub fn write_dlph(path: &Path, entries: &[DlphEntry]) -> Result<()> {
    write_atomic(path, &encode_dlph(entries)?)
}

pub fn save_weights<T: Scalar>(store: &ParamStore<T>, path: &Path) -> Result<()> {
    let entries: Vec<DlphEntry> = store
        .iter()
        .map(|(n, p)| DlphEntry::from_tensor(n, &p.value))
        .collect();
    write_dlph(path, &entries)
}

/// Replaces the values in `store` from `path`. In strict mode the name sets
/// must match exactly; otherwise entries absent from the file are kept.
/// Nothing is modified unless every check passes.
pub fn load_weights<T: Scalar>(store: &mut ParamStore<T>, path: &Path, strict: bool) -> Result<()> {
    let entries = read_dlph(path)?;
    let mut seen = BTreeSet::new();
    let mut staged = Vec::with_capacity(entries.len());
    for e in &entries {
        let cur = store.get(&e.name).ok_or_else(|| {
            format_err(format!(
                "unexpected tensor {:?} in {}",
                e.name,
                path.display()
            ))
        })?;
        if cur.value.shape() != e.dims.as_slice() {
            return Err(format_err(format!(
                "tensor {:?} has shape {:?}, model expects {:?}",
                e.name,
                e.dims,
                cur.value.shape()
            )));
        }
        if !seen.insert(e.name.clone()) {
            return Err(format_err(format!("tensor {:?} appears twice", e.name)));
        }
        staged.push((e.name.clone(), e.to_tensor::<T>()?));
    }
    if strict {
        if let Some(missing) = store.names().find(|n| !seen.contains(*n)) {
            return Err(format_err(format!(
                "tensor {missing:?} missing from {}",
                path.display()
            )));
        }
    }
    for (n, t) in staged {
        store.set(&n, t)?;
    }
    Ok(())
}

/// Writes a `[1, H, W, T]` grayscale video as a single-entry container.
pub fn write_video<T: Scalar>(path: &Path, video: &Tensor<T>) -> Result<()> {
    let v: Tensor<f32> = video.cast();
    write_dlph(path, &[DlphEntry::from_tensor(VIDEO_ENTRY, &v)])
}

pub fn read_video<T: Scalar>(path: &Path) -> Result<Tensor<T>> {
    let entries = read_dlph(path)?;
    let e = entries
        .iter()
        .find(|e| e.name == VIDEO_ENTRY)
        .ok_or_else(|| format_err(format!("{} holds no {VIDEO_ENTRY:?} entry", path.display())))?;
    if e.dims.len() != 4 || e.dims[0] != 1 {
        return Err(format_err(format!(
            "video must be [1, H, W, T], got {:?}",
            e.dims
        )));
    }
    e.to_tensor()
}

#[derive(Debug, Clone, PartialEq)]
pub struct WavAudio {
    pub samples: Vec<f32>,
    /// Rate of `samples` (after any resampling).
    pub sample_rate: u32,
    pub source_rate: u32,
    pub source_channels: u16,
}

/// Linear-interpolation resampling.
pub fn resample_linear(x: &[f32], from: u32, to: u32) -> Vec<f32> {
    if from == to || x.is_empty() {
        return x.to_vec();
    }
    let n = ((x.len() as u64 * to as u64) / from as u64).max(1) as usize;
    let ratio = from as f64 / to as f64;
    (0..n)
        .map(|i| {
            let pos = i as f64 * ratio;
            let j = pos.floor() as usize;
            if j + 1 >= x.len() {
                return x[x.len() - 1];
            }
            let f = (pos - j as f64) as f32;
            x[j] * (1.0 - f) + x[j + 1] * f
        })
        .collect()
}

/// Reads PCM-16 or float WAV as mono at `target_rate`, downmixing and
/// resampling with a warning when needed.
pub fn read_wav(path: &Path, target_rate: u32) -> Result<WavAudio> {
    let mut reader = hound::WavReader::open(path)?;
    let spec = reader.spec();
    let interleaved: Vec<f32> = match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Float, 32) => reader.samples::<f32>().collect::<Result<_, _>>()?,
        (hound::SampleFormat::Int, 16) => reader
            .samples::<i16>()
            .map(|s| s.map(|v| v as f32 / 32768.0))
            .collect::<Result<_, _>>()?,
        (fmt, bits) => {
            return Err(input_err!(
                "{}: unsupported WAV encoding {:?}/{} bits",
                path.display(),
                fmt,
                bits
            ))
        }
    };
    let ch = spec.channels.max(1) as usize;
    let mono: Vec<f32> = if ch == 1 {
        interleaved
    } else {
        log::warn!("{}: downmixing {} channels to mono", path.display(), ch);
        interleaved
            .chunks(ch)
            .map(|c| c.iter().sum::<f32>() / ch as f32)
            .collect()
    };
    let samples = if spec.sample_rate != target_rate {
        log::warn!(
            "{}: resampling {} Hz to {} Hz",
            path.display(),
            spec.sample_rate,
            target_rate
        );
        resample_linear(&mono, spec.sample_rate, target_rate)
    } else {
        mono
    };
    Ok(WavAudio {
        samples,
        sample_rate: target_rate,
        source_rate: spec.sample_rate,
        source_channels: spec.channels,
    })
}

/// Writes mono 32-bit float WAV atomically.
pub fn write_wav(path: &Path, samples: &[f32], rate: u32) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: rate,
        bits_per_sample: 32,
        sample_format: hound::SampleFormat::Float,
    };
    let mut buf = Cursor::new(Vec::new());
    {
        let mut w = hound::WavWriter::new(&mut buf, spec)?;
        for &s in samples {
            w.write_sample(s)?;
        }
        w.finalize()?;
    }
    write_atomic(path, &buf.into_inner())
}
