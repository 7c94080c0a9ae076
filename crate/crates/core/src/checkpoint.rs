//! JSON checkpoint container shared by the seq2seq model and the Q-network.
//!
//! Doubles are written in shortest round-trip form, so a save/load cycle is
//! bit-exact. Maps are ordered, so equal models produce identical bytes.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::qagent::{Dense, QNetwork};
use crate::seq2seq::{Dims, Seq2SeqModel};
use crate::{Error, Result};

pub const FORMAT: &str = "kborda-checkpoint";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Kind {
    Seq2seq,
    Qnet,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Container {
    format: String,
    version: u32,
    kind: Kind,
    /// Free-form hyperparameters recorded at save time.
    metadata: BTreeMap<String, Value>,
    tensors: BTreeMap<String, Tensor>,
}

pub type Metadata = BTreeMap<String, Value>;

fn write(path: &Path, container: &Container) -> Result<()> {
    if container.tensors.values().any(|t| t.data.iter().any(|x| !x.is_finite())) {
        return Err(Error::Numeric(format!("refusing to save non-finite parameters to {}", path.display())));
    }
    let text = serde_json::to_string(container)? + "\n";
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read(path: &Path, kind: Kind) -> Result<Container> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let container: Container = serde_json::from_str(&text)?;
    if container.format != FORMAT {
        return Err(Error::Format(format!("{} is not a {FORMAT} file", path.display())));
    }
    if container.version != VERSION {
        return Err(Error::Format(format!(
            "{} has checkpoint version {}, this build reads {VERSION}",
            path.display(),
            container.version
        )));
    }
    if container.kind != kind {
        return Err(Error::Format(format!(
            "{} holds a {:?} checkpoint, expected {kind:?}",
            path.display(),
            container.kind
        )));
    }
    Ok(container)
}

fn take(tensors: &mut BTreeMap<String, Tensor>, name: &str, shape: &[usize]) -> Result<Vec<f64>> {
    let t = tensors
        .remove(name)
        .ok_or_else(|| Error::Format(format!("checkpoint lacks tensor `{name}`")))?;
    if t.shape != shape || t.data.len() != shape.iter().product::<usize>() {
        return Err(Error::Format(format!(
            "tensor `{name}` has shape {:?} with {} values, expected {shape:?}",
            t.shape,
            t.data.len()
        )));
    }
    Ok(t.data)
}

fn no_leftovers(tensors: &BTreeMap<String, Tensor>) -> Result<()> {
    match tensors.keys().next() {
        Some(name) => Err(Error::Format(format!("unexpected tensor `{name}`"))),
        None => Ok(()),
    }
}

/// Saves the model; `dims` is added to `metadata`.
pub fn save_seq2seq(model: &Seq2SeqModel, metadata: &Metadata, path: &Path) -> Result<()> {
    let mut metadata = metadata.clone();
    metadata.insert("dims".into(), serde_json::to_value(model.dims())?);
    let tensors = model
        .params()
        .iter()
        .zip(model.param_shapes())
        .map(|((name, data), shape)| (name.to_string(), Tensor { shape, data: data.to_vec() }))
        .collect();
    write(
        path,
        &Container {
            format: FORMAT.into(),
            version: VERSION,
            kind: Kind::Seq2seq,
            metadata,
            tensors,
        },
    )
}

pub fn load_seq2seq(path: &Path) -> Result<(Seq2SeqModel, Metadata)> {
    let mut c = read(path, Kind::Seq2seq)?;
    let dims: Dims = serde_json::from_value(
        c.metadata
            .get("dims")
            .cloned()
            .ok_or_else(|| Error::Format("checkpoint metadata lacks `dims`".into()))?,
    )?;
    let mut model = Seq2SeqModel::zeros(dims);
    let shapes = model.param_shapes();
    for ((name, slot), shape) in model.params_mut().into_iter().zip(shapes) {
        slot.copy_from_slice(&take(&mut c.tensors, name, &shape)?);
    }
    no_leftovers(&c.tensors)?;
    Ok((model, c.metadata))
}

/// Saves the network; `embedding_dim` and `hidden` are added to `metadata`.
pub fn save_qnet(net: &QNetwork, metadata: &Metadata, path: &Path) -> Result<()> {
    let mut metadata = metadata.clone();
    metadata.insert("embedding_dim".into(), net.embedding_dim().into());
    metadata.insert("hidden".into(), serde_json::to_value(net.hidden_sizes())?);
    let mut tensors = BTreeMap::new();
    for (i, layer) in net.layers().iter().enumerate() {
        tensors.insert(
            format!("layer{i}.w"),
            Tensor {
                shape: layer.w.shape().to_vec(),
                data: layer.w.iter().copied().collect(),
            },
        );
        tensors.insert(
            format!("layer{i}.b"),
            Tensor {
                shape: layer.b.shape().to_vec(),
                data: layer.b.to_vec(),
            },
        );
    }
    write(
        path,
        &Container {
            format: FORMAT.into(),
            version: VERSION,
            kind: Kind::Qnet,
            metadata,
            tensors,
        },
    )
}

pub fn load_qnet(path: &Path) -> Result<(QNetwork, Metadata)> {
    let mut c = read(path, Kind::Qnet)?;
    let field = |key: &str| {
        c.metadata
            .get(key)
            .cloned()
            .ok_or_else(|| Error::Format(format!("checkpoint metadata lacks `{key}`")))
    };
    let embedding_dim: usize = serde_json::from_value(field("embedding_dim")?)?;
    let hidden: Vec<usize> = serde_json::from_value(field("hidden")?)?;
    let mut widths = vec![embedding_dim + 1];
    widths.extend(&hidden);
    widths.push(1);
    let mut layers = Vec::with_capacity(widths.len() - 1);
    for (i, pair) in widths.windows(2).enumerate() {
        let (fan_in, fan_out) = (pair[0], pair[1]);
        let w = take(&mut c.tensors, &format!("layer{i}.w"), &[fan_out, fan_in])?;
        let b = take(&mut c.tensors, &format!("layer{i}.b"), &[fan_out])?;
        layers.push(Dense {
            w: Array2::from_shape_vec((fan_out, fan_in), w).map_err(|e| Error::Format(e.to_string()))?,
            b: Array1::from(b),
        });
    }
    no_leftovers(&c.tensors)?;
    Ok((QNetwork::from_layers(layers)?, c.metadata))
}
