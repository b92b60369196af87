//! NPY v1/v2 and TNSR1 containers.
//!
//! TNSR1 layout: the 5 magic bytes `TNSR1`, a little-endian `u32` rank, one
//! little-endian `u64` per dimension, then the raw little-endian payload. The
//! element width (4 or 8 bytes) follows from payload size over element count.

use std::path::Path;

use super::{Tensor, TensorData, TensorError};

const NPY_MAGIC: &[u8] = b"\x93NUMPY";
const TNSR_MAGIC: &[u8] = b"TNSR1";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TensorFormat {
    Npy,
    Tnsr,
}

impl TensorFormat {
    /// `.npy` paths use NPY, everything else TNSR1.
    pub fn from_path(path: &Path) -> TensorFormat {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("npy") => TensorFormat::Npy,
            _ => TensorFormat::Tnsr,
        }
    }
}

fn element_count(shape: &[usize]) -> Result<usize, TensorError> {
    shape
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| TensorError::ShapeOverflow(format!("shape {shape:?} overflows usize")))
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<Tensor, TensorError> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| TensorError::io(path, e))?;
    decode_tensor(&bytes)
}

pub fn write_tensor(tensor: &Tensor, path: impl AsRef<Path>) -> Result<(), TensorError> {
    let path = path.as_ref();
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| TensorError::io(parent, e))?;
    }
    let bytes = encode_tensor(tensor, TensorFormat::from_path(path))?;
    std::fs::write(path, bytes).map_err(|e| TensorError::io(path, e))
}

pub fn decode_tensor(bytes: &[u8]) -> Result<Tensor, TensorError> {
    if bytes.starts_with(NPY_MAGIC) {
        decode_npy(bytes)
    } else if bytes.starts_with(TNSR_MAGIC) {
        decode_tnsr(bytes)
    } else {
        Err(TensorError::BadMagic)
    }
}

pub fn encode_tensor(tensor: &Tensor, format: TensorFormat) -> Result<Vec<u8>, TensorError> {
    let n = element_count(&tensor.shape)?;
    if n != tensor.data.len() {
        return Err(TensorError::ShapeOverflow(format!(
            "shape {:?} holds {n} elements but data has {}",
            tensor.shape,
            tensor.data.len()
        )));
    }
    let mut out = match format {
        TensorFormat::Npy => npy_header(tensor),
        TensorFormat::Tnsr => {
            let mut h = TNSR_MAGIC.to_vec();
            h.extend_from_slice(&(tensor.shape.len() as u32).to_le_bytes());
            for &d in &tensor.shape {
                h.extend_from_slice(&(d as u64).to_le_bytes());
            }
            h
        }
    };
    match &tensor.data {
        TensorData::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        TensorData::F64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
    }
    Ok(out)
}

fn npy_header(tensor: &Tensor) -> Vec<u8> {
    let descr = match tensor.data {
        TensorData::F32(_) => "<f4",
        TensorData::F64(_) => "<f8",
    };
    let shape = match tensor.shape.as_slice() {
        [] => "()".to_string(),
        [d] => format!("({d},)"),
        dims => format!("({})", dims.iter().map(|d| d.to_string()).collect::<Vec<_>>().join(", ")),
    };
    let mut dict = format!("{{'descr': '{descr}', 'fortran_order': False, 'shape': {shape}, }}");
    // magic(6) + version(2) + len(2) + dict + '\n' must be a multiple of 64.
    let unpadded = 10 + dict.len() + 1;
    dict.push_str(&" ".repeat((64 - unpadded % 64) % 64));
    dict.push('\n');
    let mut out = NPY_MAGIC.to_vec();
    out.extend_from_slice(&[1, 0]);
    out.extend_from_slice(&(dict.len() as u16).to_le_bytes());
    out.extend_from_slice(dict.as_bytes());
    out
}

fn malformed(msg: impl Into<String>) -> TensorError {
    TensorError::Malformed(msg.into())
}

fn dict_value<'a>(header: &'a str, key: &str) -> Result<&'a str, TensorError> {
    let pat = format!("'{key}':");
    let start = header.find(&pat).ok_or_else(|| malformed(format!("NPY header lacks {key}")))? + pat.len();
    Ok(header[start..].trim_start())
}

fn decode_npy(bytes: &[u8]) -> Result<Tensor, TensorError> {
    if bytes.len() < 10 {
        return Err(malformed("truncated NPY preamble"));
    }
    let (header_len, offset): (usize, usize) = match bytes[6] {
        1 => (u16::from_le_bytes([bytes[8], bytes[9]]) as usize, 10),
        2 | 3 => {
            if bytes.len() < 12 {
                return Err(malformed("truncated NPY preamble"));
            }
            (u32::from_le_bytes([bytes[8], bytes[9], bytes[10], bytes[11]]) as usize, 12)
        }
        v => return Err(malformed(format!("NPY version {v} not supported"))),
    };
    let end = offset
        .checked_add(header_len)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| malformed("NPY header runs past end of file"))?;
    let header = std::str::from_utf8(&bytes[offset..end]).map_err(|_| malformed("NPY header is not text"))?;

    let descr = dict_value(header, "descr")?;
    let descr = descr.trim_start_matches(['\'', '"']);
    let descr = &descr[..descr.find(['\'', '"']).ok_or_else(|| malformed("unterminated descr"))?];
    let width = match descr {
        "<f4" => 4,
        "<f8" => 8,
        other => return Err(TensorError::UnsupportedDtype(other.to_string())),
    };
    let fortran = dict_value(header, "fortran_order")?;
    if fortran.starts_with("True") {
        return Err(TensorError::UnsupportedDtype("fortran_order=True".into()));
    }
    let shape_src = dict_value(header, "shape")?;
    let close = shape_src.find(')').ok_or_else(|| malformed("unterminated shape"))?;
    let shape = shape_src[..close]
        .trim_start_matches('(')
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.trim_end_matches('L').parse::<usize>().map_err(|_| malformed(format!("bad dim {s:?}"))))
        .collect::<Result<Vec<_>, _>>()?;
    decode_payload(shape, &bytes[end..], width)
}

fn decode_tnsr(bytes: &[u8]) -> Result<Tensor, TensorError> {
    let mut pos = TNSR_MAGIC.len();
    let take = |pos: &mut usize, n: usize| -> Result<&[u8], TensorError> {
        let s = bytes.get(*pos..*pos + n).ok_or_else(|| malformed("truncated TNSR header"))?;
        *pos += n;
        Ok(s)
    };
    let rank = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
    let mut shape = Vec::with_capacity(rank.min(64));
    for _ in 0..rank {
        let d = u64::from_le_bytes(take(&mut pos, 8)?.try_into().unwrap());
        shape.push(usize::try_from(d).map_err(|_| TensorError::ShapeOverflow(format!("dimension {d}")))?);
    }
    let payload = &bytes[pos..];
    let n = element_count(&shape)?;
    let width = if n == 0 {
        8
    } else if Some(payload.len()) == n.checked_mul(8) {
        8
    } else if Some(payload.len()) == n.checked_mul(4) {
        4
    } else {
        return Err(TensorError::ShapeOverflow(format!(
            "header claims {n} elements, payload has {} bytes",
            payload.len()
        )));
    };
    decode_payload(shape, payload, width)
}

fn decode_payload(shape: Vec<usize>, payload: &[u8], width: usize) -> Result<Tensor, TensorError> {
    let n = element_count(&shape)?;
    let need = n
        .checked_mul(width)
        .ok_or_else(|| TensorError::ShapeOverflow(format!("shape {shape:?} overflows")))?;
    if payload.len() != need {
        return Err(TensorError::ShapeOverflow(format!(
            "header claims {n} elements ({need} bytes), payload has {} bytes",
            payload.len()
        )));
    }
    let data = if width == 4 {
        TensorData::F32(payload.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect())
    } else {
        TensorData::F64(payload.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
    };
    Ok(Tensor { shape, data })
}
