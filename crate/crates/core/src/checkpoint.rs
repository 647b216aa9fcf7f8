//! Versioned binary model checkpoints.
//!
//! Layout: magic "TSKM" (4 bytes), format version u32, length-prefixed JSON
//! HeadConfig, u32 parameter count, then per parameter: length-prefixed
//! name, rank u32, dims u32 each, row-major f64 values. All little-endian.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::data::DataError;
use crate::heads::{HeadConfig, Model, Param};
use crate::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"TSKM";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn save_model(path: &Path, model: &Model) -> Result<()> {
    let cfg_json = serde_json::to_vec(&model.config)?;
    let mut buf = Vec::new();
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(cfg_json.len() as u32).to_le_bytes());
    buf.extend_from_slice(&cfg_json);
    buf.extend_from_slice(&(model.params.len() as u32).to_le_bytes());
    for p in &model.params {
        buf.extend_from_slice(&(p.name.len() as u32).to_le_bytes());
        buf.extend_from_slice(p.name.as_bytes());
        buf.extend_from_slice(&(p.shape.len() as u32).to_le_bytes());
        for &dim in &p.shape {
            buf.extend_from_slice(&(dim as u32).to_le_bytes());
        }
        for &v in &p.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let mut file = fs::File::create(path)?;
    file.write_all(&buf)?;
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Data(DataError::Truncated {
                what,
                expected: self.pos + n - self.bytes.len(),
            }));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u32(&mut self, what: &'static str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

pub fn load_model(path: &Path) -> Result<Model> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    let mut r = Reader {
        bytes: &bytes,
        pos: 0,
    };
    let magic: [u8; 4] = r.take(4, "magic")?.try_into().unwrap();
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::Data(DataError::BadMagic(magic)));
    }
    let version = r.u32("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Data(DataError::UnsupportedVersion(version)));
    }
    let cfg_len = r.u32("config length")? as usize;
    let config: HeadConfig = serde_json::from_slice(r.take(cfg_len, "config")?)?;
    config.validate()?;
    let count = r.u32("parameter count")? as usize;
    let mut params = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = r.u32("name length")? as usize;
        let name = String::from_utf8(r.take(name_len, "name")?.to_vec())
            .map_err(|e| Error::Data(DataError::InvalidHeader(e.to_string())))?;
        let rank = r.u32("rank")? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32("dim")? as usize);
        }
        let n: usize = shape.iter().product();
        let data = r
            .take(n * 8, "values")?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        params.push(Param { name, shape, data });
    }
    // shapes must match what the config dictates
    let expected = config.param_specs();
    if expected.len() != params.len()
        || expected
            .iter()
            .zip(&params)
            .any(|((name, shape), p)| *name != p.name || *shape != p.shape)
    {
        return Err(Error::Data(DataError::InvalidHeader(
            "checkpoint parameters do not match the stored head config".into(),
        )));
    }
    Ok(Model { config, params })
}
