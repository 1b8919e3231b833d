//! Binary checkpoint format.
//!
//! ```text
//! "SFINCKPT"                  8 bytes
//! version                     u32 little-endian
//! header length               u32 little-endian
//! header                      UTF-8, one `key=value` per line, then one
//!                             `param <name> <d0>x<d1>...` line per parameter
//! payload                     f32 little-endian values, parameters in
//!                             header order
//! ```

use std::fs;
use std::path::Path;

use crate::controller::ActionSpace;
use crate::corpus::write_atomic;
use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig};
use crate::numerics::{ParamSet, Tensor};

pub const MAGIC: &[u8; 8] = b"SFINCKPT";
pub const VERSION: u32 = 1;

fn dims(config: &ModelConfig) -> [(&'static str, usize); 6] {
    [
        ("vocab_size", config.vocab_size),
        ("embed_dim", config.embed_dim),
        ("word_hidden", config.word_hidden),
        ("sentence_hidden", config.sentence_hidden),
        ("controller_hidden", config.controller_hidden),
        ("head_hidden", config.head_hidden),
    ]
}

pub fn to_bytes(model: &Model) -> Vec<u8> {
    let mut header = String::new();
    for (k, v) in dims(&model.config) {
        header.push_str(&format!("{k}={v}\n"));
    }
    header.push_str(&format!("action_space={}\n", model.config.action_space));
    let ids: Vec<_> = model.params.ids().collect();
    for &id in &ids {
        let shape: Vec<String> = model
            .params
            .value(id)
            .shape()
            .iter()
            .map(ToString::to_string)
            .collect();
        header.push_str(&format!(
            "param {} {}\n",
            model.params.name(id),
            shape.join("x")
        ));
    }
    let mut out = Vec::with_capacity(16 + header.len() + 4 * model.params.total_values());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(header.as_bytes());
    for &id in &ids {
        for &v in model.params.value(id).data() {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out
}

fn take<'a>(bytes: &mut &'a [u8], n: usize, what: &'static str) -> Result<&'a [u8]> {
    if bytes.len() < n {
        return Err(Error::Truncated(what));
    }
    let (head, rest) = bytes.split_at(n);
    *bytes = rest;
    Ok(head)
}

fn mismatch(field: impl Into<String>, reason: impl Into<String>) -> Error {
    Error::HeaderMismatch {
        field: field.into(),
        reason: reason.into(),
    }
}

pub fn from_bytes(mut bytes: &[u8]) -> Result<Model> {
    let buf = &mut bytes;
    let magic = buf.get(..MAGIC.len()).ok_or(Error::Truncated("magic"))?;
    if magic != MAGIC {
        return Err(Error::BadMagic);
    }
    take(buf, MAGIC.len(), "magic")?;
    let version = u32::from_le_bytes(take(buf, 4, "version")?.try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(Error::Version(version));
    }
    let hlen = u32::from_le_bytes(take(buf, 4, "header length")?.try_into().expect("4 bytes"));
    let header = std::str::from_utf8(take(buf, hlen as usize, "header")?)
        .map_err(|_| mismatch("header", "not valid UTF-8"))?;

    let mut config = ModelConfig::default();
    let mut seen = Vec::new();
    let mut table: Vec<(String, Vec<usize>)> = Vec::new();
    for line in header.lines().filter(|l| !l.is_empty()) {
        if let Some(rest) = line.strip_prefix("param ") {
            let (name, shape) = rest
                .split_once(' ')
                .ok_or_else(|| mismatch("param", format!("malformed entry `{line}`")))?;
            let shape = shape
                .split('x')
                .map(|d| d.parse::<usize>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|_| mismatch(name, format!("malformed shape `{shape}`")))?;
            table.push((name.to_string(), shape));
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| mismatch("header", format!("malformed line `{line}`")))?;
        let num = || {
            v.parse::<usize>()
                .map_err(|_| mismatch(k.to_string(), format!("not a number: `{v}`")))
        };
        match k {
            "vocab_size" => config.vocab_size = num()?,
            "embed_dim" => config.embed_dim = num()?,
            "word_hidden" => config.word_hidden = num()?,
            "sentence_hidden" => config.sentence_hidden = num()?,
            "controller_hidden" => config.controller_hidden = num()?,
            "head_hidden" => config.head_hidden = num()?,
            "action_space" => config.action_space = v.parse::<ActionSpace>()?,
            other => return Err(mismatch(other.to_string(), "unknown header key")),
        }
        seen.push(k.to_string());
    }
    for (k, _) in dims(&config) {
        if !seen.iter().any(|s| s == k) {
            return Err(mismatch(k, "missing from header"));
        }
    }

    let mut params = ParamSet::new();
    for (name, shape) in table {
        let count: usize = shape.iter().product();
        let raw = take(buf, 4 * count, "payload")?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
            .collect();
        params
            .insert(&name, Tensor::new(shape, data)?)
            .map_err(|_| mismatch(name.clone(), "listed twice"))?;
    }
    if !buf.is_empty() {
        return Err(mismatch("payload", format!("{} trailing bytes", buf.len())));
    }
    Model::from_params(config, params)
}

pub fn save_checkpoint(model: &Model, path: &Path) -> Result<()> {
    write_atomic(path, &to_bytes(model))
}

pub fn load_checkpoint(path: &Path) -> Result<Model> {
    from_bytes(&fs::read(path)?)
}

/// Loads and checks that the stored dimensions equal `expected`.
pub fn load_checkpoint_expecting(path: &Path, expected: &ModelConfig) -> Result<Model> {
    let model = load_checkpoint(path)?;
    for ((k, got), (_, want)) in dims(&model.config).into_iter().zip(dims(expected)) {
        if got != want {
            return Err(mismatch(
                k,
                format!("checkpoint has {got}, expected {want}"),
            ));
        }
    }
    Ok(model)
}
