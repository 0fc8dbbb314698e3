//! Model checkpoints: a magic line, a one-line JSON header and the raw
//! little-endian `f64` payload of every tensor in header order.
//!
//! Saving is deterministic, so `save(load(save(m)))` reproduces the file
//! byte for byte.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::adapter::{AdapterConfig, TinyAttnAdapter};
use crate::backbone::{Backbone, BackboneConfig, Placement};
use crate::error::{Error, Result};
use crate::model::{AdapterStack, Model};
use crate::nn::{set_trainable, Linear, Params};
use crate::scalar::Scalar;
use crate::tasks::TaskSpec;
use crate::tensor::Tensor;

pub const MAGIC: &str = "tinyattn-checkpoint";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdapterMeta {
    pub heads: usize,
    pub head_dim: usize,
    pub with_biases: bool,
    pub merged_scale: f64,
    pub placement: Placement,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Header {
    pub version: u32,
    pub backbone: BackboneConfig,
    pub classes: usize,
    pub adapter: Option<AdapterMeta>,
    /// Seed of the run that produced the checkpoint.
    pub seed: u64,
    /// Task the decoder was last trained on.
    pub task: Option<TaskSpec>,
    pub tensors: Vec<TensorEntry>,
}

/// Encodes `model` into checkpoint bytes.
pub fn to_bytes<S: Scalar>(model: &Model<S>, seed: u64, task: Option<&TaskSpec>) -> Result<Vec<u8>> {
    let mut tensors = Vec::new();
    let mut payload = Vec::new();
    model.visit("", &mut |name, t| {
        tensors.push(TensorEntry {
            name: name.to_string(),
            shape: t.shape().to_vec(),
        });
        for v in t.values() {
            payload.extend_from_slice(&v.as_f64().to_le_bytes());
        }
    });
    let adapter = model.adapters.as_ref().and_then(|stack| {
        stack.layers.first().map(|a| {
            let c = a.config();
            AdapterMeta {
                heads: c.heads,
                head_dim: c.head_dim,
                with_biases: c.with_biases,
                merged_scale: a.merged_scale.as_f64(),
                placement: stack.placement,
            }
        })
    });
    if let Some(stack) = &model.adapters {
        if stack.layers.iter().any(|a| a.merged_scale != stack.layers[0].merged_scale) {
            return Err(Error::Checkpoint("adapters disagree on merged_scale".into()));
        }
    }
    let header = Header {
        version: VERSION,
        backbone: model.backbone.config,
        classes: model.classes(),
        adapter,
        seed,
        task: task.copied(),
        tensors,
    };
    let json = serde_json::to_string(&header).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let mut out = Vec::with_capacity(MAGIC.len() + json.len() + payload.len() + 2);
    out.extend_from_slice(MAGIC.as_bytes());
    out.push(b'\n');
    out.extend_from_slice(json.as_bytes());
    out.push(b'\n');
    out.extend_from_slice(&payload);
    Ok(out)
}

/// Splits checkpoint bytes into the parsed header and the payload.
pub fn parse_header(bytes: &[u8]) -> Result<(Header, &[u8])> {
    let bad = |what: &str| Error::Checkpoint(what.to_string());
    let rest = bytes
        .strip_prefix(MAGIC.as_bytes())
        .and_then(|r| r.strip_prefix(b"\n"))
        .ok_or_else(|| bad("not a tinyattn checkpoint"))?;
    let end = rest.iter().position(|&b| b == b'\n').ok_or_else(|| bad("truncated header"))?;
    let header: Header = serde_json::from_slice(&rest[..end])
        .map_err(|e| Error::Checkpoint(format!("malformed header: {e}")))?;
    if header.version != VERSION {
        return Err(Error::Checkpoint(format!(
            "format version {} not supported (expected {VERSION})",
            header.version
        )));
    }
    Ok((header, &rest[end + 1..]))
}

/// Decodes checkpoint bytes. The backbone comes back frozen when adapters
/// are present; adapters and decoder are trainable.
pub fn from_bytes<S: Scalar>(bytes: &[u8]) -> Result<(Model<S>, Header)> {
    let (header, payload) = parse_header(bytes)?;
    header.backbone.validate()?;

    let mut values = BTreeMap::new();
    let mut offset = 0;
    for entry in &header.tensors {
        let n: usize = entry.shape.iter().product();
        let end = offset + 8 * n;
        let chunk = payload
            .get(offset..end)
            .ok_or_else(|| Error::Checkpoint(format!("payload truncated in `{}`", entry.name)))?;
        let data: Vec<S> = chunk
            .chunks_exact(8)
            .map(|b| S::of(f64::from_le_bytes(b.try_into().expect("8-byte chunk"))))
            .collect();
        if values.insert(entry.name.clone(), (entry.shape.clone(), data)).is_some() {
            return Err(Error::Checkpoint(format!("duplicate tensor `{}`", entry.name)));
        }
        offset = end;
    }
    if offset != payload.len() {
        return Err(Error::Checkpoint(format!(
            "{} trailing payload bytes",
            payload.len() - offset
        )));
    }

    // skeleton with the right shapes; every value is overwritten below
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let backbone = Backbone::init(header.backbone, &mut rng)?;
    let mut model = Model {
        backbone,
        adapters: None,
        decoder: Linear::init(header.backbone.hidden, header.classes, &mut rng),
    };
    if let Some(meta) = header.adapter {
        let config = AdapterConfig {
            heads: meta.heads,
            head_dim: meta.head_dim,
            with_biases: meta.with_biases,
        };
        config.validate()?;
        let mut layer = TinyAttnAdapter::zeros(header.backbone.hidden, config);
        layer.merged_scale = S::of(meta.merged_scale);
        model.attach_adapters(AdapterStack {
            placement: meta.placement,
            layers: vec![layer; header.backbone.layers],
        })?;
    }

    let mut missing = None;
    model.visit_mut("", &mut |name, t| match values.remove(name) {
        Some((shape, data)) if shape == t.shape() => {
            let trainable = t.trainable;
            *t = Tensor::new(shape, data).expect("shape checked").trainable(trainable);
        }
        Some((shape, _)) => {
            missing.get_or_insert(format!("tensor `{name}` has shape {shape:?}, expected {:?}", t.shape()));
        }
        None => {
            missing.get_or_insert(format!("tensor `{name}` missing"));
        }
    });
    if let Some(msg) = missing {
        return Err(Error::Checkpoint(msg));
    }
    if let Some(name) = values.keys().next() {
        return Err(Error::Checkpoint(format!("unexpected tensor `{name}`")));
    }
    set_trainable(&mut model.decoder, true);
    Ok((model, header))
}

/// Writes `bytes` to a temporary file next to `path`, then renames it into
/// place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let file_name = path
        .file_name()
        .ok_or_else(|| Error::Config(format!("`{}` is not a file path", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp-{}", file_name.to_string_lossy(), std::process::id()));
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    result.map_err(|e| {
        let _ = fs::remove_file(&tmp);
        Error::io(path, e)
    })
}

pub fn save<S: Scalar>(path: &Path, model: &Model<S>, seed: u64, task: Option<&TaskSpec>) -> Result<()> {
    write_atomic(path, &to_bytes(model, seed, task)?)
}

pub fn load<S: Scalar>(path: &Path) -> Result<(Model<S>, Header)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes)
}
