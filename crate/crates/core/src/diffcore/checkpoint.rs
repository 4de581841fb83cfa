//! `GPXM1` binary checkpoints: the magic bytes `GPXM1`, a little-endian `u32`
//! record count, then per record a `u32` name length, the UTF-8 name, a `u32`
//! rank, `rank` dimensions as `u64`, and the values as `f64`, all
//! little-endian.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::tensor::Tensor;
use crate::{Error, Result};

const MAGIC: &[u8; 5] = b"GPXM1";

pub fn write_checkpoint<W: Write>(mut w: W, entries: &[(String, Tensor<f64>)]) -> std::io::Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&(entries.len() as u32).to_le_bytes())?;
    for (name, t) in entries {
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&(t.rank() as u32).to_le_bytes())?;
        for &d in t.shape() {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        for v in t.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()
}

fn read_array<const N: usize, R: Read>(r: &mut R) -> std::io::Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf)?;
    Ok(buf)
}

/// Reads all records. `path` is used for error messages only; the record
/// number is reported in place of a line number.
pub fn read_checkpoint<R: Read>(mut r: R, path: &Path) -> Result<Vec<(String, Tensor<f64>)>> {
    let bad = |record: usize, msg: String| Error::parse(path, record, msg);
    let io = |record: usize| move |e: std::io::Error| Error::parse(path, record, format!("truncated checkpoint: {e}"));
    let magic: [u8; 5] = read_array(&mut r).map_err(io(0))?;
    if &magic != MAGIC {
        return Err(bad(0, "missing GPXM1 magic".into()));
    }
    let count = u32::from_le_bytes(read_array(&mut r).map_err(io(0))?) as usize;
    let mut out = Vec::with_capacity(count.min(4096));
    for k in 1..=count {
        let name_len = u32::from_le_bytes(read_array(&mut r).map_err(io(k))?) as usize;
        let mut name = vec![0u8; name_len];
        r.read_exact(&mut name).map_err(io(k))?;
        let name = String::from_utf8(name).map_err(|_| bad(k, "name is not UTF-8".into()))?;
        let rank = u32::from_le_bytes(read_array(&mut r).map_err(io(k))?) as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(u64::from_le_bytes(read_array(&mut r).map_err(io(k))?) as usize);
        }
        let numel: usize = shape.iter().product();
        let mut data = Vec::with_capacity(numel);
        for _ in 0..numel {
            data.push(f64::from_le_bytes(read_array(&mut r).map_err(io(k))?));
        }
        out.push((name, Tensor::new(shape, data)?));
    }
    Ok(out)
}

pub fn write_checkpoint_file(path: &Path, entries: &[(String, Tensor<f64>)]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_checkpoint(BufWriter::new(file), entries).map_err(|e| Error::io(path, e))
}

pub fn read_checkpoint_file(path: &Path) -> Result<Vec<(String, Tensor<f64>)>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(BufReader::new(file), path)
}
