//! JSON checkpoints: a `meta` object and one flat array per tensor.
//!
//! Floats are written with 17 significant digits so every value round-trips
//! exactly. Tensors appear in the order of [`CpnnParameters::segments`],
//! followed by `proto_init`, all in row-major order.

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};
use serde_json::value::RawValue;

use crate::error::{CpnnError, Result};
use crate::model::{AblationFlags, CpnnParameters, ModalityCorrection, WeightHead};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub format_version: u32,
    pub n_types: usize,
    pub n_genes: usize,
    pub feature_dim: usize,
    pub hidden: usize,
    pub activation: bool,
    pub gene_ids: Vec<String>,
    pub cell_type_names: Vec<String>,
    pub flags: AblationFlags,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub created_unix: Option<u64>,
}

#[derive(Serialize)]
struct TensorsOut {
    #[serde(rename = "head.w1")]
    w1: Box<RawValue>,
    #[serde(rename = "head.b1")]
    b1: Box<RawValue>,
    #[serde(rename = "head.w2")]
    w2: Box<RawValue>,
    #[serde(rename = "head.b2")]
    b2: Box<RawValue>,
    #[serde(rename = "correction.a")]
    a: Box<RawValue>,
    #[serde(rename = "correction.c")]
    c: Box<RawValue>,
    rho: Box<RawValue>,
    proto_free: Box<RawValue>,
    proto_init: Box<RawValue>,
}

#[derive(Deserialize)]
struct TensorsIn {
    #[serde(rename = "head.w1")]
    w1: Vec<f64>,
    #[serde(rename = "head.b1")]
    b1: Vec<f64>,
    #[serde(rename = "head.w2")]
    w2: Vec<f64>,
    #[serde(rename = "head.b2")]
    b2: Vec<f64>,
    #[serde(rename = "correction.a")]
    a: Vec<f64>,
    #[serde(rename = "correction.c")]
    c: Vec<f64>,
    rho: Vec<f64>,
    proto_free: Vec<f64>,
    proto_init: Vec<f64>,
}

#[derive(Serialize)]
struct CheckpointOut<'a> {
    meta: &'a CheckpointMeta,
    tensors: TensorsOut,
}

#[derive(Deserialize)]
struct CheckpointIn {
    meta: CheckpointMeta,
    tensors: TensorsIn,
}

fn raw_array<'a>(values: impl IntoIterator<Item = &'a f64>) -> Result<Box<RawValue>> {
    let mut s = String::from("[");
    for (i, v) in values.into_iter().enumerate() {
        if !v.is_finite() {
            return Err(CpnnError::numeric(
                "cannot checkpoint a non-finite parameter",
            ));
        }
        if i > 0 {
            s.push(',');
        }
        s.push_str(&format!("{v:.16e}"));
    }
    s.push(']');
    Ok(RawValue::from_string(s)?)
}

/// Serialise parameters. `created_unix` is omitted when `None`.
pub fn to_json(params: &CpnnParameters, seed: u64, created_unix: Option<u64>) -> Result<String> {
    params.validate()?;
    let d = params.dims();
    let meta = CheckpointMeta {
        format_version: FORMAT_VERSION,
        n_types: d.n_types,
        n_genes: d.n_genes,
        feature_dim: d.feature_dim,
        hidden: d.hidden,
        activation: params.head.activation,
        gene_ids: params.gene_ids.clone(),
        cell_type_names: params.cell_type_names.clone(),
        flags: params.flags,
        seed,
        created_unix,
    };
    let out = CheckpointOut {
        meta: &meta,
        tensors: TensorsOut {
            w1: raw_array(params.head.w1.iter())?,
            b1: raw_array(params.head.b1.iter())?,
            w2: raw_array(params.head.w2.iter())?,
            b2: raw_array(params.head.b2.iter())?,
            a: raw_array(params.correction.a.iter())?,
            c: raw_array(params.correction.c.iter())?,
            rho: raw_array(params.rho.iter())?,
            proto_free: raw_array(params.proto_free.iter())?,
            proto_init: raw_array(params.proto_init.iter())?,
        },
    };
    Ok(serde_json::to_string(&out)? + "\n")
}

fn matrix(name: &str, values: Vec<f64>, shape: (usize, usize)) -> Result<Array2<f64>> {
    Array2::from_shape_vec(shape, values)
        .map_err(|_| CpnnError::shape(format!("tensor `{name}` does not have shape {shape:?}")))
}

fn vector(name: &str, values: Vec<f64>, len: usize) -> Result<Array1<f64>> {
    if values.len() != len {
        return Err(CpnnError::shape(format!(
            "tensor `{name}` has {} values, expected {len}",
            values.len()
        )));
    }
    Ok(Array1::from(values))
}

/// Parse a checkpoint, returning the parameters and the stored metadata.
pub fn from_json(text: &str) -> Result<(CpnnParameters, CheckpointMeta)> {
    let CheckpointIn { meta, tensors: t } = serde_json::from_str(text)?;
    if meta.format_version != FORMAT_VERSION {
        return Err(CpnnError::data(format!(
            "unsupported checkpoint format version {}",
            meta.format_version
        )));
    }
    let (c, g, d, h) = (meta.n_types, meta.n_genes, meta.feature_dim, meta.hidden);
    let params = CpnnParameters {
        head: WeightHead {
            w1: matrix("head.w1", t.w1, (h, d))?,
            b1: vector("head.b1", t.b1, h)?,
            w2: matrix("head.w2", t.w2, (c, h))?,
            b2: vector("head.b2", t.b2, c)?,
            activation: meta.activation,
        },
        correction: ModalityCorrection {
            a: vector("correction.a", t.a, g)?,
            c: vector("correction.c", t.c, g)?,
        },
        rho: vector("rho", t.rho, g)?,
        proto_free: matrix("proto_free", t.proto_free, (c, g))?,
        proto_init: matrix("proto_init", t.proto_init, (c, g))?,
        flags: meta.flags,
        gene_ids: meta.gene_ids.clone(),
        cell_type_names: meta.cell_type_names.clone(),
    };
    params.validate()?;
    Ok((params, meta))
}

pub fn save(
    path: impl AsRef<Path>,
    params: &CpnnParameters,
    seed: u64,
    created_unix: Option<u64>,
) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, to_json(params, seed, created_unix)?).map_err(|e| CpnnError::io(path, e))
}

pub fn load(path: impl AsRef<Path>) -> Result<(CpnnParameters, CheckpointMeta)> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| CpnnError::io(path, e))?;
    from_json(&text)
}
