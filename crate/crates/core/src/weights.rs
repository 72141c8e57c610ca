//! Tensor container for model weights.
//!
//! Layout, all integers little-endian:
//!
//! | bytes            | content                                           |
//! |------------------|---------------------------------------------------|
//! | 0..8             | magic `LACTNSR1`                                  |
//! | 8..12            | `u32` header length `N`                           |
//! | 12..12+N         | UTF-8 JSON header                                 |
//! | 12+N..           | payload of packed `f32` values                    |
//!
//! The header maps each tensor name to `{"offset": bytes from payload start,
//! "shape": [..], "dtype": "f32"}`. The reserved key `__config__` carries the
//! [`ModelConfig`]. The payload length must equal the sum of all tensor sizes.
//!
//! Tensor names: `embed`, `layers.<i>.{ln1,wq,wk,wv,wo,ln2,w1,w2}`,
//! `final_ln`, `lm_head`.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{LacError, Result};
use crate::model::{BlockWeights, Model, ModelConfig};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"LACTNSR1";
const CONFIG_KEY: &str = "__config__";

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct TensorEntry {
    pub offset: u64,
    pub shape: Vec<usize>,
    pub dtype: String,
}

fn named_tensors(model: &Model) -> Vec<(String, &Tensor)> {
    let mut out = vec![("embed".to_string(), &model.embed)];
    for (i, b) in model.blocks.iter().enumerate() {
        for (name, t) in [
            ("ln1", &b.ln1),
            ("wq", &b.wq),
            ("wk", &b.wk),
            ("wv", &b.wv),
            ("wo", &b.wo),
            ("ln2", &b.ln2),
            ("w1", &b.w1),
            ("w2", &b.w2),
        ] {
            out.push((format!("layers.{i}.{name}"), t));
        }
    }
    out.push(("final_ln".to_string(), &model.final_ln));
    out.push(("lm_head".to_string(), &model.lm_head));
    out
}

fn expected_shapes(c: &ModelConfig) -> BTreeMap<String, Vec<usize>> {
    let (d, f, v) = (c.depth, c.ffn_dim, c.vocab_size);
    let mut m = BTreeMap::new();
    m.insert("embed".to_string(), vec![v, d]);
    for i in 0..c.layer_count {
        for (name, shape) in [
            ("ln1", vec![d]),
            ("wq", vec![d, d]),
            ("wk", vec![d, d]),
            ("wv", vec![d, d]),
            ("wo", vec![d, d]),
            ("ln2", vec![d]),
            ("w1", vec![d, f]),
            ("w2", vec![f, d]),
        ] {
            m.insert(format!("layers.{i}.{name}"), shape);
        }
    }
    m.insert("final_ln".to_string(), vec![d]);
    m.insert("lm_head".to_string(), vec![d, v]);
    m
}

pub fn to_bytes(model: &Model) -> Result<Vec<u8>> {
    let mut header = serde_json::Map::new();
    header.insert(
        CONFIG_KEY.to_string(),
        serde_json::to_value(model.config).map_err(|e| LacError::Header(e.to_string()))?,
    );
    let mut payload = Vec::new();
    for (name, t) in named_tensors(model) {
        let entry = TensorEntry {
            offset: payload.len() as u64,
            shape: t.shape().to_vec(),
            dtype: "f32".into(),
        };
        header.insert(
            name,
            serde_json::to_value(entry).map_err(|e| LacError::Header(e.to_string()))?,
        );
        for v in t.data() {
            payload.extend_from_slice(&v.to_le_bytes());
        }
    }
    let header = serde_json::to_vec(&header).map_err(|e| LacError::Header(e.to_string()))?;
    let mut out = Vec::with_capacity(12 + header.len() + payload.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(&header);
    out.extend_from_slice(&payload);
    Ok(out)
}

pub fn from_bytes(bytes: &[u8]) -> Result<Model> {
    if bytes.len() < 12 {
        return Err(LacError::LengthMismatch(format!(
            "{} bytes is shorter than the 12-byte preamble",
            bytes.len()
        )));
    }
    let magic: [u8; 8] = bytes[..8].try_into().expect("8 bytes");
    if &magic != MAGIC {
        return Err(LacError::BadMagic(magic));
    }
    let header_len = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
    let body = &bytes[12..];
    if header_len > body.len() {
        return Err(LacError::LengthMismatch(format!(
            "header length {header_len} exceeds remaining {} bytes",
            body.len()
        )));
    }
    let mut header: serde_json::Map<String, serde_json::Value> =
        serde_json::from_slice(&body[..header_len]).map_err(|e| LacError::Header(e.to_string()))?;
    let payload = &body[header_len..];

    let config: ModelConfig = serde_json::from_value(
        header
            .remove(CONFIG_KEY)
            .ok_or_else(|| LacError::MissingTensor(CONFIG_KEY.into()))?,
    )
    .map_err(|e| LacError::Header(e.to_string()))?;
    config.validate()?;

    let expected = expected_shapes(&config);
    let mut entries = BTreeMap::new();
    for (name, value) in header {
        if !expected.contains_key(&name) {
            return Err(LacError::UnknownTensor(name));
        }
        let entry: TensorEntry =
            serde_json::from_value(value).map_err(|e| LacError::Header(format!("{name}: {e}")))?;
        if entry.dtype != "f32" {
            return Err(LacError::Header(format!(
                "{name}: unsupported dtype {:?}",
                entry.dtype
            )));
        }
        if entry.shape != expected[&name] {
            return Err(LacError::Shape(format!(
                "{name}: expected {:?}, found {:?}",
                expected[&name], entry.shape
            )));
        }
        entries.insert(name, entry);
    }
    if let Some(missing) = expected.keys().find(|k| !entries.contains_key(*k)) {
        return Err(LacError::MissingTensor(missing.clone()));
    }

    let needed: usize = entries
        .values()
        .map(|e| e.shape.iter().product::<usize>() * 4)
        .sum();
    if payload.len() != needed {
        return Err(LacError::LengthMismatch(format!(
            "payload has {} bytes, header describes {needed}",
            payload.len()
        )));
    }

    let mut take = |name: &str| -> Result<Tensor> {
        let e = entries.remove(name).expect("presence checked");
        let n: usize = e.shape.iter().product();
        let start = e.offset as usize;
        let end = start + n * 4;
        if end > payload.len() {
            return Err(LacError::LengthMismatch(format!(
                "{name} spans bytes {start}..{end} of a {}-byte payload",
                payload.len()
            )));
        }
        let data = payload[start..end]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        Tensor::new(e.shape, data)
    };

    let embed = take("embed")?;
    let mut blocks = Vec::with_capacity(config.layer_count);
    for i in 0..config.layer_count {
        let p = |n: &str| format!("layers.{i}.{n}");
        blocks.push(BlockWeights {
            ln1: take(&p("ln1"))?,
            wq: take(&p("wq"))?,
            wk: take(&p("wk"))?,
            wv: take(&p("wv"))?,
            wo: take(&p("wo"))?,
            ln2: take(&p("ln2"))?,
            w1: take(&p("w1"))?,
            w2: take(&p("w2"))?,
        });
    }
    let final_ln = take("final_ln")?;
    let lm_head = take("lm_head")?;
    Ok(Model {
        config,
        embed,
        blocks,
        final_ln,
        lm_head,
    })
}

pub fn save_weights(model: &Model, path: &Path) -> Result<()> {
    std::fs::write(path, to_bytes(model)?)?;
    Ok(())
}

pub fn load_weights(path: &Path) -> Result<Model> {
    from_bytes(&std::fs::read(path)?)
}
