//! Binary model file.
//!
//! Layout, all integers and reals little-endian:
//!
//! ```text
//! b"CIM1"
//! u32            layer count L
//! L x u32        fan-in of each dense layer (input_dim, hidden dims...)
//! u32            num_classes
//! u64            parameter count P
//! P x f64        parameters
//! ```

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use super::{MlpModel, MlpSpec, ParamVector};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"CIM1";

impl MlpModel {
    pub fn to_bytes(&self) -> Vec<u8> {
        let layers = self.spec.layers();
        let mut buf = Vec::with_capacity(4 + 4 * (layers.len() + 2) + 8 + 8 * self.params.len());
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&(layers.len() as u32).to_le_bytes());
        for (fan_in, _) in &layers {
            buf.extend_from_slice(&(*fan_in as u32).to_le_bytes());
        }
        buf.extend_from_slice(&(self.spec.num_classes as u32).to_le_bytes());
        buf.extend_from_slice(&(self.params.len() as u64).to_le_bytes());
        for v in self.params.as_slice() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = bytes;
        let mut magic = [0u8; 4];
        read_exact(&mut r, &mut magic)?;
        if &magic != MAGIC {
            return Err(Error::ModelFormat(format!("bad magic {magic:?}")));
        }
        let layer_count = read_u32(&mut r)? as usize;
        if layer_count == 0 {
            return Err(Error::ModelFormat("layer count is 0".into()));
        }
        if layer_count > r.len() / 4 {
            return Err(Error::ModelFormat(format!(
                "layer count {layer_count} exceeds file size"
            )));
        }
        let dims = (0..layer_count)
            .map(|_| read_u32(&mut r).map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let num_classes = read_u32(&mut r)? as usize;
        let declared = read_u64(&mut r)?;

        let spec = MlpSpec::new(dims[0], dims[1..].to_vec(), num_classes)
            .map_err(|e| Error::ModelFormat(e.to_string()))?;
        let expected = spec.param_count() as u64;
        if declared != expected {
            return Err(Error::ModelFormat(format!(
                "declared {declared} parameters, architecture implies {expected}"
            )));
        }
        if r.len() as u64 != 8 * declared {
            return Err(Error::ModelFormat(format!(
                "expected {} parameter bytes, found {}",
                8 * declared,
                r.len()
            )));
        }
        let values = r
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let params =
            ParamVector::from_vec(values).map_err(|e| Error::ModelFormat(e.to_string()))?;
        MlpModel::new(spec, params)
    }

    pub fn write_to(&self, mut w: impl Write) -> std::io::Result<()> {
        w.write_all(&self.to_bytes())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)
            .map_err(|e| Error::ModelFormat(e.to_string()))?;
        MlpModel::from_bytes(&bytes)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        MlpModel::from_bytes(&bytes)
    }
}

fn read_exact(r: &mut &[u8], buf: &mut [u8]) -> Result<()> {
    if r.len() < buf.len() {
        return Err(Error::ModelFormat("truncated header".into()));
    }
    let (head, tail) = r.split_at(buf.len());
    buf.copy_from_slice(head);
    *r = tail;
    Ok(())
}

fn read_u32(r: &mut &[u8]) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut &[u8]) -> Result<u64> {
    let mut b = [0u8; 8];
    read_exact(r, &mut b)?;
    Ok(u64::from_le_bytes(b))
}
