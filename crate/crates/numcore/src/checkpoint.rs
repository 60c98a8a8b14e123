//! Binary checkpoint format.
//!
//! Layout (all integers little-endian `u32`):
//!
//! ```text
//! "HSEQ" | version
//! repeated until EOF:
//!   name_len | name bytes (UTF-8) | rank | extent * rank | f32 values (row-major)
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, ErrorKind, Read, Write};
use std::path::Path;

use crate::error::{NumError, Result};
use crate::param::ParamStore;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"HSEQ";
pub const FORMAT_VERSION: u32 = 1;

fn write_u32(w: &mut impl Write, v: u32) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn to_u32(v: usize, what: &str) -> Result<u32> {
    u32::try_from(v).map_err(|_| NumError::Format(format!("{what} {v} exceeds u32")))
}

pub fn write_checkpoint(store: &ParamStore<f32>, mut w: impl Write) -> Result<()> {
    w.write_all(MAGIC)?;
    write_u32(&mut w, FORMAT_VERSION)?;
    for p in store.iter() {
        let name = p.name.as_bytes();
        write_u32(&mut w, to_u32(name.len(), "name length")?)?;
        w.write_all(name)?;
        let shape = p.value.shape();
        write_u32(&mut w, to_u32(shape.len(), "rank")?)?;
        for &d in shape {
            write_u32(&mut w, to_u32(d, "extent")?)?;
        }
        for v in p.value.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads a `u32`, returning `None` on a clean EOF before the first byte.
fn read_u32_or_eof(r: &mut impl Read) -> Result<Option<u32>> {
    let mut buf = [0u8; 4];
    let mut filled = 0;
    while filled < 4 {
        match r.read(&mut buf[filled..]) {
            Ok(0) if filled == 0 => return Ok(None),
            Ok(0) => return Err(NumError::Format("truncated record header".into())),
            Ok(n) => filled += n,
            Err(e) if e.kind() == ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
    }
    Ok(Some(u32::from_le_bytes(buf)))
}

fn read_u32(r: &mut impl Read, what: &str) -> Result<u32> {
    read_u32_or_eof(r)?.ok_or_else(|| NumError::Format(format!("unexpected end of file reading {what}")))
}

fn read_exact(r: &mut impl Read, buf: &mut [u8], what: &str) -> Result<()> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        ErrorKind::UnexpectedEof => NumError::Format(format!("unexpected end of file reading {what}")),
        _ => e.into(),
    })
}

pub fn read_checkpoint(mut r: impl Read) -> Result<ParamStore<f32>> {
    let mut magic = [0u8; 4];
    read_exact(&mut r, &mut magic, "magic")?;
    if &magic != MAGIC {
        return Err(NumError::Format(format!("bad magic {magic:?}")));
    }
    let version = read_u32(&mut r, "version")?;
    if version != FORMAT_VERSION {
        return Err(NumError::Format(format!("unsupported version {version}")));
    }
    let mut store = ParamStore::new();
    while let Some(name_len) = read_u32_or_eof(&mut r)? {
        let mut name = vec![0u8; name_len as usize];
        read_exact(&mut r, &mut name, "parameter name")?;
        let name = String::from_utf8(name)
            .map_err(|_| NumError::Format("parameter name is not UTF-8".into()))?;
        let rank = read_u32(&mut r, "rank")? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(read_u32(&mut r, "extent")? as usize);
        }
        let count: usize = shape.iter().product();
        let mut raw = vec![0u8; count * 4];
        read_exact(&mut r, &mut raw, &name)?;
        let data = raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        let value = Tensor::new(shape, data)
            .map_err(|e| NumError::Format(format!("parameter `{name}`: {e}")))?;
        store.add(name, value)?;
    }
    Ok(store)
}

pub fn save_checkpoint(store: &ParamStore<f32>, path: &Path) -> Result<()> {
    write_checkpoint(store, BufWriter::new(File::create(path)?))
}

pub fn load_checkpoint(path: &Path) -> Result<ParamStore<f32>> {
    read_checkpoint(BufReader::new(File::open(path)?))
}
