//! On-disk artifacts: one JSON header line followed by a little-endian
//! `f32` payload. The header carries the payload's SHA-256 and loads fail
//! on any mismatch.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::composition::ClassVectorBank;
use crate::error::{Error, Result};
use crate::forget_vector::{ForgetVector, ForgetVectorConfig, Provenance};
use crate::nn::ClassifierModel;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArtifactKind {
    Model,
    Vector,
    Bank,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub schema_version: u32,
    pub kind: ArtifactKind,
    pub shape: Vec<usize>,
    pub seed: u64,
    pub sha256: String,
    #[serde(default)]
    pub meta: serde_json::Value,
}

impl Header {
    pub fn element_count(&self) -> usize {
        self.shape.iter().product()
    }
}

fn payload_bytes(values: &[f64]) -> Vec<u8> {
    values
        .iter()
        .flat_map(|&v| (v as f32).to_le_bytes())
        .collect()
}

fn sha_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Serializes an artifact to bytes.
pub fn encode(
    kind: ArtifactKind,
    shape: Vec<usize>,
    seed: u64,
    meta: serde_json::Value,
    values: &[f64],
) -> Result<Vec<u8>> {
    let expected: usize = shape.iter().product();
    if expected != values.len() {
        return Err(Error::shape(format!(
            "shape {shape:?} declares {expected} values, got {}",
            values.len()
        )));
    }
    let payload = payload_bytes(values);
    let header = Header {
        schema_version: SCHEMA_VERSION,
        kind,
        shape,
        seed,
        sha256: sha_hex(&payload),
        meta,
    };
    let mut out = serde_json::to_vec(&header)?;
    out.push(b'\n');
    out.extend_from_slice(&payload);
    Ok(out)
}

/// Parses and verifies an artifact.
pub fn decode(bytes: &[u8], kind: ArtifactKind) -> Result<(Header, Vec<f64>)> {
    let split = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::Integrity("missing header line".into()))?;
    let header: Header = serde_json::from_slice(&bytes[..split])
        .map_err(|e| Error::Integrity(format!("unreadable header: {e}")))?;
    if header.schema_version != SCHEMA_VERSION {
        return Err(Error::Integrity(format!(
            "unsupported schema version {}",
            header.schema_version
        )));
    }
    if header.kind != kind {
        return Err(Error::Integrity(format!(
            "expected a {kind:?} artifact, found {:?}",
            header.kind
        )));
    }
    let payload = &bytes[split + 1..];
    if payload.len() != header.element_count() * 4 {
        return Err(Error::Integrity(format!(
            "payload holds {} bytes, header declares {} values",
            payload.len(),
            header.element_count()
        )));
    }
    if sha_hex(payload) != header.sha256 {
        return Err(Error::Integrity("payload checksum mismatch".into()));
    }
    let values = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    Ok((header, values))
}

pub fn model_bytes(model: &ClassifierModel) -> Result<Vec<u8>> {
    let params = model.flat_params();
    encode(
        ArtifactKind::Model,
        vec![params.len()],
        model.seed(),
        serde_json::json!({ "dims": model.dims() }),
        &params,
    )
}

pub fn model_from_bytes(bytes: &[u8]) -> Result<ClassifierModel> {
    let (header, values) = decode(bytes, ArtifactKind::Model)?;
    let dims: Vec<usize> = serde_json::from_value(header.meta["dims"].clone())
        .map_err(|e| Error::Integrity(format!("model header lacks dims: {e}")))?;
    ClassifierModel::from_flat(&dims, &values, header.seed)
}

#[derive(Serialize, Deserialize)]
struct VectorMeta {
    provenance: Provenance,
    config: Option<ForgetVectorConfig>,
    #[serde(default)]
    model: Option<String>,
}

/// `model` optionally records the fingerprint of the model the vector
/// was optimized for.
pub fn vector_bytes(fv: &ForgetVector, seed: u64, model: Option<&str>) -> Result<Vec<u8>> {
    let meta = VectorMeta {
        provenance: fv.provenance.clone(),
        config: fv.config.clone(),
        model: model.map(str::to_owned),
    };
    encode(
        ArtifactKind::Vector,
        vec![fv.dim()],
        seed,
        serde_json::to_value(meta)?,
        &fv.delta,
    )
}

pub fn vector_from_bytes(bytes: &[u8]) -> Result<(ForgetVector, Option<String>)> {
    let (header, delta) = decode(bytes, ArtifactKind::Vector)?;
    let meta: VectorMeta = serde_json::from_value(header.meta)
        .map_err(|e| Error::Integrity(format!("bad vector header: {e}")))?;
    Ok((
        ForgetVector {
            delta,
            provenance: meta.provenance,
            config: meta.config,
        },
        meta.model,
    ))
}

#[derive(Serialize, Deserialize)]
struct BankMeta {
    fingerprint: String,
    provenance: Vec<Provenance>,
    config: Vec<Option<ForgetVectorConfig>>,
}

pub fn bank_bytes(bank: &ClassVectorBank, seed: u64) -> Result<Vec<u8>> {
    let meta = BankMeta {
        fingerprint: bank.fingerprint().to_owned(),
        provenance: bank
            .vectors()
            .iter()
            .map(|v| v.provenance.clone())
            .collect(),
        config: bank.vectors().iter().map(|v| v.config.clone()).collect(),
    };
    let flat: Vec<f64> = bank
        .vectors()
        .iter()
        .flat_map(|v| v.delta.iter().copied())
        .collect();
    encode(
        ArtifactKind::Bank,
        vec![bank.len(), bank.dim()],
        seed,
        serde_json::to_value(meta)?,
        &flat,
    )
}

pub fn bank_from_bytes(bytes: &[u8]) -> Result<ClassVectorBank> {
    let (header, flat) = decode(bytes, ArtifactKind::Bank)?;
    let meta: BankMeta = serde_json::from_value(header.meta)
        .map_err(|e| Error::Integrity(format!("bad bank header: {e}")))?;
    let [k, d] = header.shape[..] else {
        return Err(Error::Integrity("bank shape must be [classes, dim]".into()));
    };
    if meta.provenance.len() != k || meta.config.len() != k || d == 0 {
        return Err(Error::Integrity(
            "bank metadata does not match shape".into(),
        ));
    }
    let vectors = flat
        .chunks_exact(d)
        .zip(meta.provenance)
        .zip(meta.config)
        .map(|((delta, provenance), config)| ForgetVector {
            delta: delta.to_vec(),
            provenance,
            config,
        })
        .collect();
    ClassVectorBank::new(vectors, meta.fingerprint)
}

/// Writes `bytes` to `path` unless an identical file is already there.
/// A different existing file is never replaced.
pub fn write_new(path: &Path, bytes: &[u8]) -> Result<()> {
    match fs::read(path) {
        Ok(existing) if existing == bytes => return Ok(()),
        Ok(_) => {
            return Err(Error::Io(std::io::Error::new(
                std::io::ErrorKind::AlreadyExists,
                format!("{} exists with different content", path.display()),
            )))
        }
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {}
        Err(e) => return Err(e.into()),
    }
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let tmp = path.with_extension(format!("tmp-{}", std::process::id()));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn save_model(path: &Path, model: &ClassifierModel) -> Result<()> {
    write_new(path, &model_bytes(model)?)
}

pub fn load_model(path: &Path) -> Result<ClassifierModel> {
    model_from_bytes(&fs::read(path)?)
}

pub fn save_vector(path: &Path, fv: &ForgetVector, seed: u64, model: Option<&str>) -> Result<()> {
    write_new(path, &vector_bytes(fv, seed, model)?)
}

pub fn load_vector(path: &Path) -> Result<(ForgetVector, Option<String>)> {
    vector_from_bytes(&fs::read(path)?)
}

pub fn save_bank(path: &Path, bank: &ClassVectorBank, seed: u64) -> Result<()> {
    write_new(path, &bank_bytes(bank, seed)?)
}

pub fn load_bank(path: &Path) -> Result<ClassVectorBank> {
    bank_from_bytes(&fs::read(path)?)
}
