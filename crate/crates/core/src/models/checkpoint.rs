//! Checkpoint persistence.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic   4 bytes  "DROA"
//! version u32      currently 1
//! count   u32      number of records
//! record  ×count   name_len u32, name bytes, dtype u8 (0=f32,1=f64,2=byte),
//!                  rank u32, extents rank×u32, payload (row-major, LE)
//! crc32   u32      over every preceding byte
//! ```
//!
//! The architecture descriptor is stored as a byte record named `__arch__`;
//! parameter records follow in model order, which makes save→load→save
//! byte-identical.

use std::fs;
use std::path::Path;

use crate::autodiff::Tensor;
use crate::crc::crc32;
use crate::error::{ModelError, Result};
use crate::scalar::{Dtype, Scalar};

use super::{parse_descriptor, Model};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"DROA";
pub const CHECKPOINT_VERSION: u32 = 1;

const ARCH_RECORD: &str = "__arch__";

struct Record {
    name: String,
    dtype: Dtype,
    extents: Vec<u32>,
    payload: Vec<u8>,
}

fn encode_records(records: &[Record]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(records.len() as u32).to_le_bytes());
    for r in records {
        out.extend_from_slice(&(r.name.len() as u32).to_le_bytes());
        out.extend_from_slice(r.name.as_bytes());
        out.push(r.dtype.tag());
        out.extend_from_slice(&(r.extents.len() as u32).to_le_bytes());
        for &e in &r.extents {
            out.extend_from_slice(&e.to_le_bytes());
        }
        out.extend_from_slice(&r.payload);
    }
    let crc = crc32(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

fn take<'a>(bytes: &'a [u8], off: &mut usize, n: usize) -> Result<&'a [u8], ModelError> {
    if *off + n > bytes.len() {
        return Err(ModelError::Truncated);
    }
    let s = &bytes[*off..*off + n];
    *off += n;
    Ok(s)
}

fn take_u32(bytes: &[u8], off: &mut usize) -> Result<u32, ModelError> {
    Ok(u32::from_le_bytes(take(bytes, off, 4)?.try_into().unwrap()))
}

fn decode_records(bytes: &[u8]) -> Result<Vec<Record>, ModelError> {
    if bytes.len() < 4 + 4 + 4 + 4 {
        return Err(ModelError::Truncated);
    }
    if &bytes[..4] != CHECKPOINT_MAGIC {
        return Err(ModelError::BadMagic);
    }
    let body = &bytes[..bytes.len() - 4];
    let stored = u32::from_le_bytes(bytes[bytes.len() - 4..].try_into().unwrap());
    let computed = crc32(body);
    if stored != computed {
        return Err(ModelError::CrcMismatch { stored, computed });
    }
    let mut off = 4;
    let version = take_u32(body, &mut off)?;
    if version != CHECKPOINT_VERSION {
        return Err(ModelError::BadVersion(version));
    }
    let count = take_u32(body, &mut off)? as usize;
    let mut records = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = take_u32(body, &mut off)? as usize;
        let name = String::from_utf8(take(body, &mut off, name_len)?.to_vec())
            .map_err(|_| ModelError::Format("record name is not utf-8".into()))?;
        let dtype = Dtype::from_tag(take(body, &mut off, 1)?[0])
            .ok_or_else(|| ModelError::Format(format!("unknown dtype tag in '{name}'")))?;
        let rank = take_u32(body, &mut off)? as usize;
        let mut extents = Vec::with_capacity(rank);
        for _ in 0..rank {
            extents.push(take_u32(body, &mut off)?);
        }
        let numel: usize = extents.iter().map(|&e| e as usize).product();
        let width = match dtype {
            Dtype::F32 => 4,
            Dtype::F64 => 8,
            Dtype::Byte => 1,
        };
        let payload = take(body, &mut off, numel * width)?.to_vec();
        records.push(Record {
            name,
            dtype,
            extents,
            payload,
        });
    }
    if off != body.len() {
        return Err(ModelError::Format(format!(
            "{} trailing bytes after records",
            body.len() - off
        )));
    }
    Ok(records)
}

fn tensor_payload<F: Scalar>(t: &Tensor<F>) -> Vec<u8> {
    let mut out = Vec::with_capacity(t.numel() * 8);
    match F::DTYPE {
        Dtype::F32 => {
            for &v in t.data() {
                out.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
            }
        }
        Dtype::F64 => {
            for &v in t.data() {
                out.extend_from_slice(&v.as_f64().to_le_bytes());
            }
        }
        Dtype::Byte => unreachable!("tensors are f32 or f64"),
    }
    out
}

fn payload_tensor<F: Scalar>(r: &Record) -> Result<Tensor<F>, ModelError> {
    let shape: Vec<usize> = r.extents.iter().map(|&e| e as usize).collect();
    let data: Vec<F> = match r.dtype {
        Dtype::F32 => r
            .payload
            .chunks_exact(4)
            .map(|c| F::of(f32::from_le_bytes(c.try_into().unwrap()) as f64))
            .collect(),
        Dtype::F64 => r
            .payload
            .chunks_exact(8)
            .map(|c| F::of(f64::from_le_bytes(c.try_into().unwrap())))
            .collect(),
        Dtype::Byte => {
            return Err(ModelError::Format(format!(
                "record '{}' is a byte record, not a tensor",
                r.name
            )))
        }
    };
    Tensor::new(shape, data).map_err(|e| ModelError::Format(e.to_string()))
}

pub fn checkpoint_bytes<F: Scalar>(model: &Model<F>) -> Vec<u8> {
    let mut records = vec![Record {
        name: ARCH_RECORD.into(),
        dtype: Dtype::Byte,
        extents: vec![model.descriptor().len() as u32],
        payload: model.descriptor().as_bytes().to_vec(),
    }];
    for (name, t) in model.params() {
        records.push(Record {
            name: name.clone(),
            dtype: F::DTYPE,
            extents: t.shape().iter().map(|&d| d as u32).collect(),
            payload: tensor_payload(t),
        });
    }
    encode_records(&records)
}

pub fn save_checkpoint<F: Scalar>(model: &Model<F>, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, checkpoint_bytes(model))?;
    Ok(())
}

pub fn model_from_checkpoint_bytes<F: Scalar>(bytes: &[u8]) -> Result<Model<F>> {
    let records = decode_records(bytes)?;
    let arch = records
        .iter()
        .find(|r| r.name == ARCH_RECORD)
        .ok_or_else(|| ModelError::Format("missing architecture record".into()))?;
    let descriptor = String::from_utf8(arch.payload.clone())
        .map_err(|_| ModelError::Format("architecture record is not utf-8".into()))?;
    let (input, layers) = parse_descriptor(&descriptor)?;
    // Seed is irrelevant: every parameter is overwritten below.
    let mut model: Model<F> = Model::from_layers(input, layers, 0)?;
    for (name, tensor) in model.params_mut() {
        let rec = records
            .iter()
            .find(|r| &r.name == name)
            .ok_or_else(|| ModelError::Format(format!("missing parameter record '{name}'")))?;
        let loaded: Tensor<F> = payload_tensor(rec)?;
        if loaded.shape() != tensor.shape() {
            return Err(ModelError::Format(format!(
                "parameter '{name}': checkpoint shape {:?} vs model shape {:?}",
                loaded.shape(),
                tensor.shape()
            ))
            .into());
        }
        *tensor = loaded;
    }
    Ok(model)
}

pub fn load_checkpoint<F: Scalar>(path: impl AsRef<Path>) -> Result<Model<F>> {
    let bytes = fs::read(path)?;
    model_from_checkpoint_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::build_model;

    #[test]
    fn save_load_save_is_byte_identical() {
        let m: Model<f32> = build_model("mlp-small", 9).unwrap();
        let bytes = checkpoint_bytes(&m);
        let loaded: Model<f32> = model_from_checkpoint_bytes(&bytes).unwrap();
        for ((na, ta), (nb, tb)) in m.params().iter().zip(loaded.params()) {
            assert_eq!(na, nb);
            assert_eq!(ta.data(), tb.data());
        }
        assert_eq!(checkpoint_bytes(&loaded), bytes);
    }

    #[test]
    fn wrong_magic_is_rejected() {
        let m: Model<f32> = build_model("in=1x2x2;flatten;dense(4,2)", 0).unwrap();
        let mut bytes = checkpoint_bytes(&m);
        bytes[..4].copy_from_slice(b"XXXX");
        assert!(matches!(
            model_from_checkpoint_bytes::<f32>(&bytes),
            Err(crate::Error::Model(ModelError::BadMagic))
        ));
    }

    #[test]
    fn truncation_fails_crc() {
        let m: Model<f32> = build_model("in=1x2x2;flatten;dense(4,2)", 0).unwrap();
        let mut bytes = checkpoint_bytes(&m);
        bytes.truncate(bytes.len() - 9);
        let err = model_from_checkpoint_bytes::<f32>(&bytes).unwrap_err();
        assert!(
            matches!(
                err,
                crate::Error::Model(ModelError::CrcMismatch { .. })
                    | crate::Error::Model(ModelError::Truncated)
            ),
            "{err:?}"
        );
    }

    #[test]
    fn payload_corruption_fails_crc() {
        let m: Model<f32> = build_model("in=1x2x2;flatten;dense(4,2)", 0).unwrap();
        let mut bytes = checkpoint_bytes(&m);
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0x5A;
        assert!(matches!(
            model_from_checkpoint_bytes::<f32>(&bytes),
            Err(crate::Error::Model(ModelError::CrcMismatch { .. }))
        ));
    }

    #[test]
    fn unsupported_version_is_rejected() {
        let m: Model<f32> = build_model("in=1x2x2;flatten;dense(4,2)", 0).unwrap();
        let mut bytes = checkpoint_bytes(&m);
        // Patch the version field and re-seal the CRC.
        bytes[4..8].copy_from_slice(&7u32.to_le_bytes());
        let body_len = bytes.len() - 4;
        let crc = crate::crc::crc32(&bytes[..body_len]);
        bytes[body_len..].copy_from_slice(&crc.to_le_bytes());
        assert!(matches!(
            model_from_checkpoint_bytes::<f32>(&bytes),
            Err(crate::Error::Model(ModelError::BadVersion(7)))
        ));
    }

    #[test]
    fn cross_precision_load_converts() {
        let m: Model<f32> = build_model("in=1x2x2;flatten;dense(4,2)", 1).unwrap();
        let bytes = checkpoint_bytes(&m);
        let as64: Model<f64> = model_from_checkpoint_bytes(&bytes).unwrap();
        for ((_, a), (_, b)) in m.params().iter().zip(as64.params()) {
            for (x, y) in a.data().iter().zip(b.data()) {
                assert_eq!(*x as f64, *y);
            }
        }
    }

    #[test]
    fn evaluation_survives_round_trip_exactly() {
        let m: Model<f32> = build_model("cnn-small", 2).unwrap();
        let images = crate::autodiff::Tensor::from_fn(&[2, 1, 28, 28], |i| {
            ((i * 17) % 83) as f32 / 83.0
        });
        let before = m.forward(&images).unwrap();
        let loaded: Model<f32> =
            model_from_checkpoint_bytes(&checkpoint_bytes(&m)).unwrap();
        let after = loaded.forward(&images).unwrap();
        assert_eq!(before.data(), after.data());
    }
}
