//! Binary checkpoint container.
//!
//! Layout, all integers and floats little-endian:
//!
//! ```text
//! magic        8 bytes  "CLDWALK\0"
//! version      u32      currently 1
//! d1 d2 d3     u64 ×3   point-MLP widths
//! h            u64      GRU width
//! C            u64      classes
//! flags        u64      bit 0: bbox feature, bit 1: affine instance norm
//! k            u64      neighbours per step
//! l            u64      walk length in points, 0 when given as a fraction
//! m            u64      walks per shape at inference
//! fraction     f64      walk length fraction (0 when l > 0)
//! count        u32      number of tensors
//! per tensor:  ndim u32, dims u64 × ndim, values f64 × prod(dims)
//! ```
//!
//! Tensors follow [`ModelParams::tensors`] order.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::neural::{ModelConfig, ModelParams, Tensor};
use crate::walker::WalkLength;

pub const MAGIC: &[u8; 8] = b"CLDWALK\0";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams,
    pub k: usize,
    pub length: WalkLength,
    pub walks: usize,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let cfg = &self.params.config;
        let mut out = Vec::with_capacity(128 + 8 * self.params.parameter_count());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        let flags = u64::from(cfg.use_bbox) | (u64::from(cfg.norm_affine) << 1);
        let (l, fraction) = match self.length {
            WalkLength::Fixed(l) => (l as u64, 0.0),
            WalkLength::Fraction(f) => (0, f),
        };
        for v in [
            cfg.mlp_widths[0] as u64,
            cfg.mlp_widths[1] as u64,
            cfg.mlp_widths[2] as u64,
            cfg.hidden as u64,
            cfg.classes as u64,
            flags,
            self.k as u64,
            l,
            self.walks as u64,
        ] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&fraction.to_le_bytes());
        let tensors = self.params.tensors();
        out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
        for t in tensors {
            out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = bytes;
        let mut magic = [0u8; 8];
        read_exact(&mut r, &mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let version = read_u32(&mut r)?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let mut fields = [0usize; 9];
        for f in &mut fields {
            *f = usize::try_from(read_u64(&mut r)?)
                .map_err(|_| Error::Checkpoint("field overflows usize".into()))?;
        }
        let [d1, d2, d3, hidden, classes, flags, k, l, walks] = fields;
        let fraction = f64::from_le_bytes(read_array(&mut r)?);
        let config = ModelConfig {
            mlp_widths: [d1, d2, d3],
            hidden,
            classes,
            use_bbox: flags & 1 != 0,
            norm_affine: flags & 2 != 0,
        };
        let mut params = ModelParams::zeros(&config)
            .map_err(|e| Error::Checkpoint(format!("config record: {e}")))?;
        let count = read_u32(&mut r)? as usize;
        let slots = params.tensors_mut();
        if count != slots.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} tensors, found {count}",
                slots.len()
            )));
        }
        for (i, slot) in slots.into_iter().enumerate() {
            let ndim = read_u32(&mut r)? as usize;
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                shape.push(read_u64(&mut r)? as usize);
            }
            if shape != slot.shape() {
                return Err(Error::Checkpoint(format!(
                    "tensor {i} ({}) has shape {shape:?}, config implies {:?}",
                    ModelParams::tensor_names()[i],
                    slot.shape()
                )));
            }
            let mut data = Vec::with_capacity(slot.len());
            for _ in 0..slot.len() {
                data.push(f64::from_le_bytes(read_array(&mut r)?));
            }
            *slot = Tensor::new(shape, data)?;
        }
        if !r.is_empty() {
            return Err(Error::Checkpoint(format!("{} trailing bytes", r.len())));
        }
        let length = if l > 0 {
            WalkLength::Fixed(l)
        } else {
            WalkLength::Fraction(fraction)
        };
        Ok(Checkpoint {
            params,
            k,
            length,
            walks,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

fn read_exact(r: &mut &[u8], buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf)
        .map_err(|_| Error::Checkpoint("truncated file".into()))
}

fn read_array<const N: usize>(r: &mut &[u8]) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    read_exact(r, &mut buf)?;
    Ok(buf)
}

fn read_u32(r: &mut &[u8]) -> Result<u32> {
    Ok(u32::from_le_bytes(read_array(r)?))
}

fn read_u64(r: &mut &[u8]) -> Result<u64> {
    Ok(u64::from_le_bytes(read_array(r)?))
}
