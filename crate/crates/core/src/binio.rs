//! Tagged `f32` array files (`AVTF` features, `AVTV` synced video).
//!
//! ```text
//! magic[4] | u32 version | u32 rank | u64 dims[rank] | f32 data[prod(dims)]
//! ```
//! All integers and floats are little-endian.

use std::path::Path;

use crate::error::{Error, Result};

pub const ARRAY_VERSION: u32 = 1;

pub fn encode_array(magic: &[u8; 4], dims: &[usize], data: &[f32]) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + dims.len() * 8 + data.len() * 4);
    out.extend_from_slice(magic);
    out.extend_from_slice(&ARRAY_VERSION.to_le_bytes());
    out.extend_from_slice(&(dims.len() as u32).to_le_bytes());
    for &d in dims {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for &v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_array(magic: &[u8; 4], buf: &[u8]) -> Result<(Vec<usize>, Vec<f32>)> {
    let bad = |m: &str| Error::Data(format!("{}: {m}", String::from_utf8_lossy(magic)));
    if buf.len() < 12 || &buf[..4] != magic {
        return Err(bad("bad magic"));
    }
    let version = u32::from_le_bytes(buf[4..8].try_into().expect("4 bytes"));
    if version != ARRAY_VERSION {
        return Err(bad(&format!("unsupported version {version}")));
    }
    let rank = u32::from_le_bytes(buf[8..12].try_into().expect("4 bytes")) as usize;
    let header = 12 + rank * 8;
    if buf.len() < header {
        return Err(bad("truncated header"));
    }
    let dims: Vec<usize> = buf[12..header]
        .chunks_exact(8)
        .map(|c| u64::from_le_bytes(c.try_into().expect("8 bytes")) as usize)
        .collect();
    let n: usize = dims.iter().product();
    if buf.len() != header + n * 4 {
        return Err(bad(&format!("expected {} data bytes, found {}", n * 4, buf.len() - header)));
    }
    let data = buf[header..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    Ok((dims, data))
}

pub fn write_array(path: &Path, magic: &[u8; 4], dims: &[usize], data: &[f32]) -> Result<()> {
    std::fs::write(path, encode_array(magic, dims, data)).map_err(|e| Error::io(path, e))
}

pub fn read_array(path: &Path, magic: &[u8; 4]) -> Result<(Vec<usize>, Vec<f32>)> {
    let buf = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_array(magic, &buf)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_layout() {
        let b = encode_array(b"AVTF", &[2, 3], &[1.0; 6]);
        assert_eq!(&b[..4], b"AVTF");
        assert_eq!(b.len(), 4 + 4 + 4 + 16 + 24);
        let (dims, data) = decode_array(b"AVTF", &b).unwrap();
        assert_eq!(dims, vec![2, 3]);
        assert_eq!(data, vec![1.0; 6]);
        assert!(decode_array(b"AVTV", &b).is_err());
        assert!(decode_array(b"AVTF", &b[..b.len() - 1]).is_err());
    }
}
