//! `.vten` container: `VTEN`, version `0x01`, rank byte, rank × u32 LE
//! dims, then f32 LE row-major payload.

use std::fs;
use std::path::Path;

use crate::error::{MvocError, Result};
use crate::tensor::{FlowField, Mask, VideoTensor};

const MAGIC: &[u8; 4] = b"VTEN";
const VERSION: u8 = 0x01;

pub fn encode(dims: &[usize], data: &[f64]) -> Result<Vec<u8>> {
    if dims.len() > u8::MAX as usize {
        return Err(MvocError::Format(format!("rank {} too large", dims.len())));
    }
    let mut out = Vec::with_capacity(6 + 4 * dims.len() + 4 * data.len());
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    out.push(dims.len() as u8);
    for &d in dims {
        let d = u32::try_from(d).map_err(|_| MvocError::Format(format!("dim {d} exceeds u32")))?;
        out.extend_from_slice(&d.to_le_bytes());
    }
    for &v in data {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    Ok(out)
}

pub fn decode(bytes: &[u8]) -> Result<(Vec<usize>, Vec<f64>)> {
    if bytes.len() < 6 || &bytes[..4] != MAGIC {
        return Err(MvocError::Format("missing VTEN magic".into()));
    }
    if bytes[4] != VERSION {
        return Err(MvocError::Format(format!("unsupported version {}", bytes[4])));
    }
    let rank = bytes[5] as usize;
    let header = 6 + 4 * rank;
    if bytes.len() < header {
        return Err(MvocError::Format("truncated header".into()));
    }
    let dims: Vec<usize> = bytes[6..header]
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]]) as usize)
        .collect();
    let count: usize = dims.iter().product();
    if bytes.len() != header + 4 * count {
        return Err(MvocError::Format(format!(
            "payload is {} bytes, dims {dims:?} need {}",
            bytes.len() - header,
            4 * count
        )));
    }
    let data = bytes[header..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    Ok((dims, data))
}

fn read(path: &Path) -> Result<(Vec<usize>, Vec<f64>)> {
    let bytes = fs::read(path).map_err(|e| MvocError::io(path, e))?;
    decode(&bytes).map_err(|e| match e {
        MvocError::Format(msg) => MvocError::Format(format!("{}: {msg}", path.display())),
        other => other,
    })
}

fn write(path: &Path, dims: &[usize], data: &[f64]) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| MvocError::io(parent, e))?;
        }
    }
    fs::write(path, encode(dims, data)?).map_err(|e| MvocError::io(path, e))
}

pub fn save_tensor(path: impl AsRef<Path>, t: &VideoTensor) -> Result<()> {
    write(path.as_ref(), &t.dims(), t.data())
}

pub fn load_tensor(path: impl AsRef<Path>) -> Result<VideoTensor> {
    let path = path.as_ref();
    let (dims, data) = read(path)?;
    let dims: [usize; 4] = dims
        .try_into()
        .map_err(|d: Vec<usize>| MvocError::Format(format!("{}: expected rank 4, got {}", path.display(), d.len())))?;
    VideoTensor::from_vec(dims, data)
}

pub fn save_mask(path: impl AsRef<Path>, m: &Mask) -> Result<()> {
    write(path.as_ref(), &m.dims(), m.data())
}

pub fn load_mask(path: impl AsRef<Path>) -> Result<Mask> {
    let path = path.as_ref();
    let (dims, data) = read(path)?;
    let dims: [usize; 3] = match dims.len() {
        3 => [dims[0], dims[1], dims[2]],
        // single-channel rank-4 tensors are accepted as masks
        4 if dims[1] == 1 => [dims[0], dims[2], dims[3]],
        _ => {
            return Err(MvocError::Format(format!(
                "{}: expected mask dims, got {dims:?}",
                path.display()
            )))
        }
    };
    Mask::from_vec(dims, data)
}

pub fn save_flow(path: impl AsRef<Path>, f: &FlowField) -> Result<()> {
    save_tensor(path, f.as_tensor())
}

pub fn load_flow(path: impl AsRef<Path>) -> Result<FlowField> {
    FlowField::new(load_tensor(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_layout_is_exact() {
        let t = VideoTensor::from_vec([1, 1, 1, 2], vec![1.0, -2.5]).unwrap();
        let bytes = encode(&t.dims(), t.data()).unwrap();
        let mut want = b"VTEN".to_vec();
        want.push(1);
        want.push(4);
        for d in [1u32, 1, 1, 2] {
            want.extend_from_slice(&d.to_le_bytes());
        }
        want.extend_from_slice(&1.0f32.to_le_bytes());
        want.extend_from_slice(&(-2.5f32).to_le_bytes());
        assert_eq!(bytes, want);
    }

    #[test]
    fn decode_rejects_garbage() {
        assert!(decode(b"NOPE\x01\x00").is_err());
        assert!(decode(b"VTEN\x02\x00").is_err());
        let mut b = encode(&[2], &[1.0, 2.0]).unwrap();
        b.pop();
        assert!(decode(&b).is_err());
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let t = VideoTensor::from_fn([2, 3, 4, 5], |f, c, y, x| (f + c) as f64 * 0.5 - (y * x) as f64);
        let p = dir.path().join("nested/t.vten");
        save_tensor(&p, &t).unwrap();
        assert_eq!(load_tensor(&p).unwrap(), t);

        let m = Mask::from_fn([2, 4, 5], |f, y, x| ((f + y + x) % 2) as f64);
        let pm = dir.path().join("m.vten");
        save_mask(&pm, &m).unwrap();
        assert_eq!(load_mask(&pm).unwrap(), m);
        assert!(load_tensor(&pm).is_err());
        assert!(matches!(load_tensor(dir.path().join("missing.vten")), Err(MvocError::Io { .. })));
    }
}
