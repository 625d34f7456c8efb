//! "BDTF" binary tensor container.
//!
//! Layout, all little-endian:
//!
//! ```text
//! magic   4 bytes  "BDTF"
//! version u32      currently 1
//! dtype   u8       0 = f32, 1 = u8
//! ndim    u8
//! dims    ndim x u64
//! payload row-major, 4 bytes per f32 element / 1 byte per u8 element
//! ```
//!
//! Round trips are bit-exact; loads are strict (no trailing bytes, no zero
//! dims, exact payload length).

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::error::{Error, Result};

pub const MAGIC: [u8; 4] = *b"BDTF";
pub const VERSION: u32 = 1;

const DTYPE_F32: u8 = 0;
const DTYPE_U8: u8 = 1;

#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    F32(Vec<f32>),
    U8(Vec<u8>),
}

impl TensorData {
    pub fn len(&self) -> usize {
        match self {
            TensorData::F32(v) => v.len(),
            TensorData::U8(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn dtype_code(&self) -> u8 {
        match self {
            TensorData::F32(_) => DTYPE_F32,
            TensorData::U8(_) => DTYPE_U8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TensorFile {
    pub dims: Vec<u64>,
    pub data: TensorData,
}

fn path_str(path: &Path) -> String {
    path.display().to_string()
}

fn checked_count(path: &Path, dims: &[u64]) -> Result<usize> {
    if dims.is_empty() {
        return Err(Error::format(path_str(path), "ndim", "must be at least 1"));
    }
    let mut count: u64 = 1;
    for (i, &d) in dims.iter().enumerate() {
        if d == 0 {
            return Err(Error::format(
                path_str(path),
                format!("dims[{i}]"),
                "zero-length dimension",
            ));
        }
        count = count.checked_mul(d).ok_or_else(|| {
            Error::format(path_str(path), "dims", "element count overflows u64")
        })?;
    }
    usize::try_from(count)
        .map_err(|_| Error::format(path_str(path), "dims", "element count exceeds usize"))
}

pub fn save_tensor(path: impl AsRef<Path>, tensor: &TensorFile) -> Result<()> {
    let path = path.as_ref();
    let count = checked_count(path, &tensor.dims)?;
    if count != tensor.data.len() {
        return Err(Error::format(
            path_str(path),
            "payload",
            format!("dims imply {count} elements, data has {}", tensor.data.len()),
        ));
    }
    let file = File::create(path).map_err(|e| Error::io(path_str(path), e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path_str(path), e);
    w.write_all(&MAGIC).map_err(io)?;
    w.write_u32::<LittleEndian>(VERSION).map_err(io)?;
    w.write_u8(tensor.data.dtype_code()).map_err(io)?;
    w.write_u8(tensor.dims.len() as u8).map_err(io)?;
    for &d in &tensor.dims {
        w.write_u64::<LittleEndian>(d).map_err(io)?;
    }
    match &tensor.data {
        TensorData::F32(v) => {
            for &x in v {
                w.write_f32::<LittleEndian>(x).map_err(io)?;
            }
        }
        TensorData::U8(v) => w.write_all(v).map_err(io)?,
    }
    w.flush().map_err(io)?;
    Ok(())
}

pub fn load_tensor(path: impl AsRef<Path>) -> Result<TensorFile> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path_str(path), e))?;
    let mut r = BufReader::new(file);

    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|_| Error::format(path_str(path), "magic", "file shorter than header"))?;
    if magic != MAGIC {
        return Err(Error::format(
            path_str(path),
            "magic",
            format!("expected \"BDTF\", found {magic:?}"),
        ));
    }
    let version = r
        .read_u32::<LittleEndian>()
        .map_err(|_| Error::format(path_str(path), "version", "truncated"))?;
    if version != VERSION {
        return Err(Error::format(
            path_str(path),
            "version",
            format!("expected {VERSION}, found {version}"),
        ));
    }
    let dtype = r
        .read_u8()
        .map_err(|_| Error::format(path_str(path), "dtype", "truncated"))?;
    let ndim = r
        .read_u8()
        .map_err(|_| Error::format(path_str(path), "ndim", "truncated"))?;
    let mut dims = Vec::with_capacity(ndim as usize);
    for i in 0..ndim {
        dims.push(
            r.read_u64::<LittleEndian>()
                .map_err(|_| Error::format(path_str(path), format!("dims[{i}]"), "truncated"))?,
        );
    }
    let count = checked_count(path, &dims)?;

    let data = match dtype {
        DTYPE_F32 => {
            let mut v = vec![0f32; count];
            r.read_f32_into::<LittleEndian>(&mut v)
                .map_err(|_| Error::format(path_str(path), "payload", "truncated f32 payload"))?;
            TensorData::F32(v)
        }
        DTYPE_U8 => {
            let mut v = vec![0u8; count];
            r.read_exact(&mut v)
                .map_err(|_| Error::format(path_str(path), "payload", "truncated u8 payload"))?;
            TensorData::U8(v)
        }
        other => {
            return Err(Error::format(
                path_str(path),
                "dtype",
                format!("unknown dtype code {other}"),
            ))
        }
    };

    let mut trailing = [0u8; 1];
    if r.read(&mut trailing).map_err(|e| Error::io(path_str(path), e))? != 0 {
        return Err(Error::format(
            path_str(path),
            "payload",
            "trailing bytes after payload",
        ));
    }

    Ok(TensorFile { dims, data })
}

pub fn save_f32(path: impl AsRef<Path>, dims: &[u64], data: &[f32]) -> Result<()> {
    save_tensor(
        path,
        &TensorFile {
            dims: dims.to_vec(),
            data: TensorData::F32(data.to_vec()),
        },
    )
}

pub fn load_f32(path: impl AsRef<Path>) -> Result<(Vec<u64>, Vec<f32>)> {
    let path = path.as_ref();
    let t = load_tensor(path)?;
    match t.data {
        TensorData::F32(v) => Ok((t.dims, v)),
        TensorData::U8(_) => Err(Error::format(path_str(path), "dtype", "expected f32, found u8")),
    }
}

pub fn save_u8(path: impl AsRef<Path>, dims: &[u64], data: &[u8]) -> Result<()> {
    save_tensor(
        path,
        &TensorFile {
            dims: dims.to_vec(),
            data: TensorData::U8(data.to_vec()),
        },
    )
}

pub fn load_u8(path: impl AsRef<Path>) -> Result<(Vec<u64>, Vec<u8>)> {
    let path = path.as_ref();
    let t = load_tensor(path)?;
    match t.data {
        TensorData::U8(v) => Ok((t.dims, v)),
        TensorData::F32(_) => Err(Error::format(path_str(path), "dtype", "expected u8, found f32")),
    }
}
