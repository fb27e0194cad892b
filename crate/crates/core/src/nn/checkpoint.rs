//! Checkpoint file format.
//!
//! Layout: magic bytes `GLMP`, one format-version byte, then a u32 tensor
//! count, then per tensor: u32-length-prefixed UTF-8 name, u32 rank, u32
//! dims, raw f32 little-endian data. Values are stored single-width; the
//! training loop keeps parameters on the f32 grid so `load(save(p)) == p`
//! holds bitwise.

use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::nn::params::{ParamSet, Tensor};
use crate::{Error, Result};

const MAGIC: &[u8; 4] = b"GLMP";
const VERSION: u8 = 1;

pub fn write_checkpoint(params: &ParamSet, mut w: impl Write) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_u8(VERSION)?;
    w.write_u32::<LittleEndian>(params.len() as u32)?;
    for (name, tensor) in params.iter() {
        let bytes = name.as_bytes();
        w.write_u32::<LittleEndian>(bytes.len() as u32)?;
        w.write_all(bytes)?;
        w.write_u32::<LittleEndian>(tensor.dims().len() as u32)?;
        for &d in tensor.dims() {
            w.write_u32::<LittleEndian>(d as u32)?;
        }
        for &v in tensor.data() {
            w.write_f32::<LittleEndian>(v as f32)?;
        }
    }
    Ok(())
}

pub fn read_checkpoint(mut r: impl Read) -> Result<ParamSet> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::InvalidModel("bad checkpoint magic".into()));
    }
    let version = r.read_u8()?;
    if version != VERSION {
        return Err(Error::InvalidModel(format!(
            "unsupported checkpoint version {version}"
        )));
    }
    let count = r.read_u32::<LittleEndian>()?;
    let mut params = ParamSet::new();
    for _ in 0..count {
        let name_len = r.read_u32::<LittleEndian>()? as usize;
        let mut name_bytes = vec![0u8; name_len];
        r.read_exact(&mut name_bytes)?;
        let name = String::from_utf8(name_bytes)
            .map_err(|_| Error::InvalidModel("tensor name is not UTF-8".into()))?;
        let rank = r.read_u32::<LittleEndian>()? as usize;
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(r.read_u32::<LittleEndian>()? as usize);
        }
        let len: usize = dims.iter().product();
        let mut data = Vec::with_capacity(len);
        for _ in 0..len {
            data.push(f64::from(r.read_f32::<LittleEndian>()?));
        }
        params.insert(name, Tensor::from_data(&dims, data)?);
    }
    Ok(params)
}

pub fn save_checkpoint(params: &ParamSet, path: impl AsRef<Path>) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut w = BufWriter::new(file);
    write_checkpoint(params, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<ParamSet> {
    let file = std::fs::File::open(path)?;
    read_checkpoint(BufReader::new(file))
}
