//! Checkpoint files.
//!
//! Layout: `b"CCLP"`, `u32` LE version (1), `u32` LE header length, a JSON
//! header, then every tensor as row-major little-endian `f32`. Tensor
//! `offset`s are byte offsets from the start of the payload section.
//! Besides the tensor table the header carries the model configuration,
//! the vocabulary and the class names.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::model::{AlignmentModel, ModelConfig};
use super::AlignError;
use crate::dataset::Vocab;
use crate::encoders::{ImageEncoderParams, Mlp, TextEncoderParams};
use crate::numcore::Matrix;

pub const MAGIC: &[u8; 4] = b"CCLP";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub offset: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    tensors: Vec<TensorEntry>,
    config: ModelConfig,
    vocab: Vocab,
    classes: Vec<String>,
}

fn named_tensors(model: &AlignmentModel) -> Vec<(&'static str, &Matrix)> {
    let mut out = Vec::new();
    if let ImageEncoderParams::Toy(m) = &model.image_encoder {
        out.extend([
            ("image.w1", &m.w1),
            ("image.b1", &m.b1),
            ("image.w2", &m.w2),
            ("image.b2", &m.b2),
        ]);
    }
    out.extend([
        ("text.embed", &model.text_encoder.table),
        ("proj.image", &model.proj_image),
        ("proj.text", &model.proj_text),
        ("logit.tau", &model.log_scale),
    ]);
    out
}

pub fn encode_checkpoint(model: &AlignmentModel) -> Vec<u8> {
    let mut tensors = Vec::new();
    let mut payload = Vec::new();
    for (name, m) in named_tensors(model) {
        tensors.push(TensorEntry {
            name: name.to_string(),
            rows: m.rows(),
            cols: m.cols(),
            offset: payload.len(),
        });
        for &v in m.data() {
            payload.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    let header = Header {
        tensors,
        config: model.config,
        vocab: model.vocab.clone(),
        classes: model.classes.clone(),
    };
    let header = serde_json::to_vec(&header).expect("header always serializes");
    let mut out = Vec::with_capacity(12 + header.len() + payload.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(&header);
    out.extend_from_slice(&payload);
    out
}

pub fn save_checkpoint(model: &AlignmentModel, path: impl AsRef<Path>) -> Result<(), AlignError> {
    let path = path.as_ref();
    fs::write(path, encode_checkpoint(model)).map_err(|e| AlignError::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<AlignmentModel, AlignError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| AlignError::io(path, e))?;
    decode_checkpoint(&bytes)
}

/// Loads and checks that the stored dimensions equal `expected`.
pub fn load_checkpoint_expecting(
    path: impl AsRef<Path>,
    expected: &ModelConfig,
) -> Result<AlignmentModel, AlignError> {
    let model = load_checkpoint(path)?;
    if model.config != *expected {
        return Err(AlignError::ShapeMismatch(format!(
            "checkpoint config {:?} does not match {:?}",
            model.config, expected
        )));
    }
    Ok(model)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<AlignmentModel, AlignError> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(AlignError::BadMagic);
    }
    let word = |at: usize| -> Result<u32, AlignError> {
        bytes
            .get(at..at + 4)
            .map(|b| u32::from_le_bytes(b.try_into().unwrap()))
            .ok_or(AlignError::CorruptCheckpoint(format!("truncated at byte {at}")))
    };
    let version = word(4)?;
    if version != VERSION {
        return Err(AlignError::VersionUnsupported(version));
    }
    let header_len = word(8)? as usize;
    let header_bytes = bytes
        .get(12..12 + header_len)
        .ok_or_else(|| AlignError::CorruptCheckpoint("truncated header".into()))?;
    let header: Header = serde_json::from_slice(header_bytes)
        .map_err(|e| AlignError::CorruptCheckpoint(format!("header: {e}")))?;
    let payload = &bytes[12 + header_len..];
    header.config.validate()?;

    let tensor = |name: &str, rows: usize, cols: usize| -> Result<Matrix, AlignError> {
        let entry = header
            .tensors
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| AlignError::CorruptCheckpoint(format!("missing tensor {name}")))?;
        if (entry.rows, entry.cols) != (rows, cols) {
            return Err(AlignError::ShapeMismatch(format!(
                "{name}: stored {}x{}, config implies {rows}x{cols}",
                entry.rows, entry.cols
            )));
        }
        let len = rows * cols * 4;
        let raw = payload
            .get(entry.offset..entry.offset + len)
            .ok_or_else(|| AlignError::CorruptCheckpoint(format!("{name}: payload truncated")))?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        Ok(Matrix::from_vec(rows, cols, data)?)
    };

    let c = header.config;
    let image_encoder = match c.image_mode {
        crate::encoders::EncoderMode::Toy => ImageEncoderParams::Toy(Mlp {
            w1: tensor("image.w1", c.d_in, c.hidden)?,
            b1: tensor("image.b1", 1, c.hidden)?,
            w2: tensor("image.w2", c.hidden, c.d_v)?,
            b2: tensor("image.b2", 1, c.d_v)?,
        }),
        crate::encoders::EncoderMode::Frozen => ImageEncoderParams::frozen(c.d_in),
    };
    let model = AlignmentModel {
        config: c,
        text_encoder: TextEncoderParams {
            mode: c.text_mode,
            table: tensor("text.embed", header.vocab.len(), c.d_t)?,
        },
        proj_image: tensor("proj.image", c.d_v, c.n)?,
        proj_text: tensor("proj.text", c.d_t, c.n)?,
        log_scale: tensor("logit.tau", 1, 1)?,
        image_encoder,
        vocab: header.vocab,
        classes: header.classes,
    };
    if !model.all_finite() {
        return Err(AlignError::CorruptCheckpoint("non-finite parameter".into()));
    }
    Ok(model)
}
