//! Model checkpoints: a directory with `model.kv` and `params.bin`.
//!
//! `params.bin` holds every parameter as little-endian `f64`, concatenated in
//! declaration order. The manifest lists the declared tensors so a reader can
//! check the layout before trusting the blob.

use std::fs;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use crate::error::{Error, Result};
use crate::kv::KvMap;
use crate::params::ParamSet;
use crate::tensor::Tensor;

use super::{GradeModel, ModelConfig};

pub const MANIFEST: &str = "model.kv";
pub const BLOB: &str = "params.bin";
const FORMAT: &str = "grade-checkpoint-1";

fn shape_str(shape: &[usize]) -> String {
    shape.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("x")
}

pub fn save_checkpoint(model: &GradeModel, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let c = model.config();
    let mut kv = KvMap::new();
    kv.set("format", FORMAT);
    kv.set("ndim", c.ndim);
    kv.set("attention", c.attention);
    kv.set("attention_hidden", c.attention_hidden);
    kv.set("core_hidden", c.core_hidden);
    kv.set("taylor_degree", c.taylor_degree);
    kv.set("slope", format!("{:?}", c.slope));
    kv.set("layer1_reduce", c.layer1_reduce);
    kv.set("layer2_reduce", c.layer2_reduce);
    kv.set("offset_scale", format!("{:?}", c.offset_scale));
    kv.set("seed", model.seed());
    kv.set("n_params", model.param_count());
    let layout: Vec<String> = model
        .params()
        .iter()
        .map(|(n, t)| format!("{n}:{}", shape_str(t.shape())))
        .collect();
    kv.set("tensors", layout.join(","));
    let created = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    kv.set("created_unix", created);
    kv.set("created_by", concat!("grade-core ", env!("CARGO_PKG_VERSION")));

    let manifest = dir.join(MANIFEST);
    fs::write(&manifest, kv.to_text()).map_err(|e| Error::io(&manifest, e))?;
    let blob: Vec<u8> = model
        .params()
        .flatten()
        .iter()
        .flat_map(|v| v.to_le_bytes())
        .collect();
    let blob_path = dir.join(BLOB);
    fs::write(&blob_path, blob).map_err(|e| Error::io(&blob_path, e))
}

pub fn load_checkpoint(dir: &Path) -> Result<GradeModel> {
    let manifest = dir.join(MANIFEST);
    let text = fs::read_to_string(&manifest).map_err(|e| Error::io(&manifest, e))?;
    let kv = KvMap::parse(&text)?;
    kv.reject_unknown(&[
        "format",
        "ndim",
        "attention",
        "attention_hidden",
        "core_hidden",
        "taylor_degree",
        "slope",
        "layer1_reduce",
        "layer2_reduce",
        "offset_scale",
        "seed",
        "n_params",
        "tensors",
        "created_unix",
        "created_by",
    ])?;
    if kv.get("format")? != FORMAT {
        return Err(Error::Format(format!("unsupported checkpoint format {:?}", kv.get("format")?)));
    }
    let mut config = ModelConfig::new(kv.parse_key("ndim")?)?;
    config.attention = kv.get("attention")?.parse()?;
    config.attention_hidden = kv.parse_key("attention_hidden")?;
    config.core_hidden = kv.parse_key("core_hidden")?;
    config.taylor_degree = kv.parse_key("taylor_degree")?;
    config.slope = kv.parse_key("slope")?;
    config.layer1_reduce = kv.get("layer1_reduce")?.parse()?;
    config.layer2_reduce = kv.get("layer2_reduce")?.parse()?;
    config.offset_scale = kv.parse_key("offset_scale")?;
    let seed: u64 = kv.parse_key("seed")?;
    let n_params: usize = kv.parse_key("n_params")?;

    let blob_path = dir.join(BLOB);
    let bytes = fs::read(&blob_path).map_err(|e| Error::io(&blob_path, e))?;
    if bytes.len() != n_params * 8 {
        return Err(Error::Format(format!(
            "{BLOB}: expected {} bytes, found {}",
            n_params * 8,
            bytes.len()
        )));
    }
    let flat: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();

    let mut params = ParamSet::new();
    let mut off = 0;
    for entry in kv.get("tensors")?.split(',') {
        let (name, shape) = entry
            .split_once(':')
            .ok_or_else(|| Error::Format(format!("bad tensor entry {entry:?}")))?;
        let shape: Vec<usize> = shape
            .split('x')
            .map(|d| d.parse().map_err(|_| Error::Format(format!("bad shape in {entry:?}"))))
            .collect::<Result<_>>()?;
        let len: usize = shape.iter().product();
        if off + len > flat.len() {
            return Err(Error::Format("tensor layout exceeds parameter blob".into()));
        }
        params.insert(name, Tensor::new(shape, flat[off..off + len].to_vec())?)?;
        off += len;
    }
    if off != flat.len() {
        return Err(Error::Format("parameter blob longer than declared tensors".into()));
    }
    GradeModel::from_parts(config, params, seed)
}
