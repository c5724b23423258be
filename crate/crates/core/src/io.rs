//! The SPT1 tensor container.
//!
//! Layout: magic `SPT1`, little-endian `u32` header length `H`, `H` bytes of
//! JSON `{"dtype": "c128"|"f64", "shape": [..], "order": "C"}`, then the raw
//! little-endian payload (`c128` is interleaved re, im).
//!
//! Volumes are written with shape `[nt, nx, ny]` so that the declared C order
//! matches the in-memory layout (time slowest).

use std::fs;
use std::io::Write;
use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{ComplexVolume, RealVolume, Shape};

const MAGIC: &[u8; 4] = b"SPT1";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    C128,
    F64,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    dtype: Dtype,
    shape: Vec<usize>,
    order: String,
}

/// A decoded tensor file.
#[derive(Clone, Debug, PartialEq)]
pub enum Tensor {
    Complex { shape: Vec<usize>, data: Vec<Complex64> },
    Real { shape: Vec<usize>, data: Vec<f64> },
}

impl Tensor {
    pub fn shape(&self) -> &[usize] {
        match self {
            Tensor::Complex { shape, .. } | Tensor::Real { shape, .. } => shape,
        }
    }

    pub fn into_complex(self) -> Result<(Vec<usize>, Vec<Complex64>)> {
        match self {
            Tensor::Complex { shape, data } => Ok((shape, data)),
            Tensor::Real { .. } => Err(Error::Format("expected dtype c128, found f64".into())),
        }
    }

    pub fn into_real(self) -> Result<(Vec<usize>, Vec<f64>)> {
        match self {
            Tensor::Real { shape, data } => Ok((shape, data)),
            Tensor::Complex { .. } => Err(Error::Format("expected dtype f64, found c128".into())),
        }
    }
}

fn encode_header(dtype: Dtype, shape: &[usize]) -> Result<Vec<u8>> {
    let header = serde_json::to_vec(&Header {
        dtype,
        shape: shape.to_vec(),
        order: "C".into(),
    })?;
    let mut out = Vec::with_capacity(8 + header.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(&header);
    Ok(out)
}

fn check_len(shape: &[usize], len: usize) -> Result<()> {
    let expected: usize = shape.iter().product();
    if expected != len {
        return Err(Error::Format(format!(
            "shape {shape:?} holds {expected} elements, payload has {len}"
        )));
    }
    Ok(())
}

pub fn encode_complex(shape: &[usize], data: &[Complex64]) -> Result<Vec<u8>> {
    check_len(shape, data.len())?;
    let mut out = encode_header(Dtype::C128, shape)?;
    out.reserve(16 * data.len());
    for z in data {
        out.extend_from_slice(&z.re.to_le_bytes());
        out.extend_from_slice(&z.im.to_le_bytes());
    }
    Ok(out)
}

pub fn encode_real(shape: &[usize], data: &[f64]) -> Result<Vec<u8>> {
    check_len(shape, data.len())?;
    let mut out = encode_header(Dtype::F64, shape)?;
    out.reserve(8 * data.len());
    for v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn decode(bytes: &[u8]) -> Result<Tensor> {
    if bytes.len() < 8 || &bytes[..4] != MAGIC {
        return Err(Error::Format("missing SPT1 magic".into()));
    }
    let hlen = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let body = bytes
        .get(8..8 + hlen)
        .ok_or_else(|| Error::Format("truncated header".into()))?;
    let header: Header = serde_json::from_slice(body)?;
    if header.order != "C" {
        return Err(Error::Format(format!("unsupported order {:?}", header.order)));
    }
    let payload = &bytes[8 + hlen..];
    let n: usize = header.shape.iter().product();
    let f64s = |chunk: &[u8]| f64::from_le_bytes(chunk.try_into().unwrap());
    match header.dtype {
        Dtype::C128 => {
            if payload.len() != 16 * n {
                return Err(Error::Format(format!("expected {} payload bytes, found {}", 16 * n, payload.len())));
            }
            let data = payload
                .chunks_exact(16)
                .map(|c| Complex64::new(f64s(&c[..8]), f64s(&c[8..])))
                .collect();
            Ok(Tensor::Complex { shape: header.shape, data })
        }
        Dtype::F64 => {
            if payload.len() != 8 * n {
                return Err(Error::Format(format!("expected {} payload bytes, found {}", 8 * n, payload.len())));
            }
            let data = payload.chunks_exact(8).map(f64s).collect();
            Ok(Tensor::Real { shape: header.shape, data })
        }
    }
}

/// Writes `bytes` to a sibling temporary file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir)?;
    let name = path
        .file_name()
        .ok_or_else(|| Error::InvalidArgument(format!("not a file path: {}", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp", name.to_string_lossy()));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn read(path: &Path) -> Result<Tensor> {
    if !path.exists() {
        return Err(Error::MissingInput(path.to_path_buf()));
    }
    decode(&fs::read(path)?)
}

pub fn write_complex(path: &Path, shape: &[usize], data: &[Complex64]) -> Result<()> {
    write_atomic(path, &encode_complex(shape, data)?)
}

pub fn write_real(path: &Path, shape: &[usize], data: &[f64]) -> Result<()> {
    write_atomic(path, &encode_real(shape, data)?)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    if !path.exists() {
        return Err(Error::MissingInput(path.to_path_buf()));
    }
    Ok(serde_json::from_slice(&fs::read(path)?)?)
}

pub fn save_volume(path: &Path, x: &ComplexVolume) -> Result<()> {
    let s = x.shape();
    write_complex(path, &[s.nt, s.nx, s.ny], x.as_slice())
}

pub fn load_volume(path: &Path) -> Result<ComplexVolume> {
    let (shape, data) = read(path)?.into_complex()?;
    let [nt, nx, ny]: [usize; 3] = shape
        .as_slice()
        .try_into()
        .map_err(|_| Error::Format(format!("volume must be 3-D, found shape {shape:?}")))?;
    ComplexVolume::from_vec(Shape::new(nx, ny, nt), data)
}

pub fn save_real_volume(path: &Path, v: &RealVolume) -> Result<()> {
    let s = v.shape();
    write_real(path, &[v.channels(), s.nt, s.nx, s.ny], v.as_slice())
}

pub fn load_real_volume(path: &Path) -> Result<RealVolume> {
    let (shape, data) = read(path)?.into_real()?;
    let [c, nt, nx, ny]: [usize; 4] = shape
        .as_slice()
        .try_into()
        .map_err(|_| Error::Format(format!("real volume must be 4-D, found shape {shape:?}")))?;
    RealVolume::from_vec(c, Shape::new(nx, ny, nt), data)
}
