//! `OHNN` model container.
//!
//! | field              | type                         |
//! |--------------------|------------------------------|
//! | magic              | `b"OHNN"`                    |
//! | version            | u16 (= 1)                    |
//! | variant            | u8 (0 = ROH, 1 = LOH)        |
//! | form               | u8 (0 = simplified, 1 = general whitened) |
//! | LOH reduction      | u8 (0 = mean-pool, 1 = diagonal) |
//! | seed               | u64                          |
//! | d                  | u32                          |
//! | L                  | u32                          |
//! | q list             | L × u32                      |
//! | stack parameters   | f64 × (Σq · block length)    |
//! | μ                  | f64 × d                      |
//! | whitening present  | u8                           |
//! | whiten, dewhiten   | f64 × d² each, row-major (only if present) |
//!
//! All integers and floats little-endian.

use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{io_at, Error, Result};
use crate::linalg::{Mat, Whitening};

use super::model::{AnonymizerModel, Form};
use super::stack::{HouseholderStack, LohReduction, Variant};

pub const MODEL_MAGIC: &[u8; 4] = b"OHNN";
pub const MODEL_VERSION: u16 = 1;

fn put_f64s(buf: &mut Vec<u8>, xs: &[f64]) {
    for x in xs {
        buf.extend_from_slice(&x.to_le_bytes());
    }
}

pub fn encode_model(model: &AnonymizerModel) -> Vec<u8> {
    let s = &model.stack;
    let mut buf = Vec::new();
    buf.extend_from_slice(MODEL_MAGIC);
    buf.extend_from_slice(&MODEL_VERSION.to_le_bytes());
    buf.push(match s.variant() {
        Variant::Roh => 0,
        Variant::Loh => 1,
    });
    buf.push(match model.form {
        Form::Simplified => 0,
        Form::GeneralWhitened => 1,
    });
    buf.push(match s.reduction() {
        LohReduction::MeanPool => 0,
        LohReduction::Diagonal => 1,
    });
    buf.extend_from_slice(&model.seed.to_le_bytes());
    buf.extend_from_slice(&(s.dim() as u32).to_le_bytes());
    buf.extend_from_slice(&(s.layer_sizes().len() as u32).to_le_bytes());
    for &q in s.layer_sizes() {
        buf.extend_from_slice(&(q as u32).to_le_bytes());
    }
    put_f64s(&mut buf, s.params());
    put_f64s(&mut buf, &model.mu_train);
    match &model.whitening {
        Some(w) => {
            buf.push(1);
            put_f64s(&mut buf, w.whiten.as_slice());
            put_f64s(&mut buf, w.dewhiten.as_slice());
        }
        None => buf.push(0),
    }
    buf
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn fail(&self, at: usize, reason: impl Into<String>) -> Error {
        Error::Format { offset: at as u64, reason: reason.into() }
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(self.fail(self.pos, format!("truncated while reading {what}")));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn f64s(&mut self, n: usize, what: &str) -> Result<Vec<f64>> {
        let len = n.checked_mul(8).ok_or_else(|| self.fail(self.pos, "length overflow"))?;
        let raw = self.take(len, what)?;
        Ok(raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
    }
}

pub fn decode_model(bytes: &[u8]) -> Result<AnonymizerModel> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "magic")? != MODEL_MAGIC {
        return Err(r.fail(0, "bad magic, expected OHNN"));
    }
    let version = u16::from_le_bytes(r.take(2, "version")?.try_into().unwrap());
    if version != MODEL_VERSION {
        return Err(r.fail(4, format!("unsupported version {version}")));
    }
    let at = r.pos;
    let variant = match r.u8("variant")? {
        0 => Variant::Roh,
        1 => Variant::Loh,
        t => return Err(r.fail(at, format!("unknown variant tag {t}"))),
    };
    let at = r.pos;
    let form = match r.u8("form")? {
        0 => Form::Simplified,
        1 => Form::GeneralWhitened,
        t => return Err(r.fail(at, format!("unknown form tag {t}"))),
    };
    let at = r.pos;
    let reduction = match r.u8("reduction")? {
        0 => LohReduction::MeanPool,
        1 => LohReduction::Diagonal,
        t => return Err(r.fail(at, format!("unknown reduction tag {t}"))),
    };
    let seed = u64::from_le_bytes(r.take(8, "seed")?.try_into().unwrap());
    let dim = r.u32("dim")? as usize;
    let layers = r.u32("layer count")? as usize;
    if layers > bytes.len() {
        return Err(r.fail(r.pos - 4, "implausible layer count"));
    }
    let mut sizes = Vec::with_capacity(layers);
    for l in 0..layers {
        sizes.push(r.u32(&format!("q of layer {l}"))? as usize);
    }
    let block = match variant {
        Variant::Roh => dim,
        Variant::Loh => dim * (super::stack::KERNEL_WIDTH + 1),
    };
    let at = r.pos;
    let total: usize = sizes.iter().sum();
    let params = r.f64s(total.saturating_mul(block), "stack parameters")?;
    let stack =
        HouseholderStack::from_params(variant, dim, sizes, reduction, params).map_err(|e| r.fail(at, e.to_string()))?;
    let mu = r.f64s(dim, "mean")?;
    let at = r.pos;
    let whitening = match r.u8("whitening flag")? {
        0 => None,
        1 => {
            let w = r.f64s(dim * dim, "whitening matrix")?;
            let dw = r.f64s(dim * dim, "de-whitening matrix")?;
            Some(Whitening { whiten: Mat::from_row_major(dim, w)?, dewhiten: Mat::from_row_major(dim, dw)? })
        }
        t => return Err(r.fail(at, format!("bad whitening flag {t}"))),
    };
    if r.pos != bytes.len() {
        return Err(r.fail(r.pos, "trailing bytes"));
    }
    AnonymizerModel::new(stack, mu, whitening, form, seed).map_err(|e| r.fail(at, e.to_string()))
}

pub fn save_model(model: &AnonymizerModel, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path.as_ref(), encode_model(model)).map_err(io_at(path.as_ref()))?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<AnonymizerModel> {
    decode_model(&std::fs::read(path.as_ref()).map_err(io_at(path.as_ref()))?)
}

/// SHA-256 of the container bytes, hex.
pub fn model_hash(model: &AnonymizerModel) -> String {
    hex::encode(Sha256::digest(encode_model(model)))
}

pub fn model_to_json(model: &AnonymizerModel) -> Result<String> {
    Ok(serde_json::to_string_pretty(model)?)
}

pub fn model_from_json(text: &str) -> Result<AnonymizerModel> {
    let m: AnonymizerModel = serde_json::from_str(text)?;
    // re-run the constructor checks
    let s = &m.stack;
    let stack = HouseholderStack::from_params(
        s.variant(),
        s.dim(),
        s.layer_sizes().to_vec(),
        s.reduction(),
        s.params().to_vec(),
    )?;
    AnonymizerModel::new(stack, m.mu_train, m.whitening, m.form, m.seed)
}
