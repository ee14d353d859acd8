//! `CGCN` checkpoints: magic, version, model kind and config words, tail
//! dimensions, then every model parameter in declaration order followed by
//! the tail weight and bias, all as little-endian `f32`.

use super::{dim_u32, put_f32s, put_u32, write_atomic, Reader};
use crate::error::{Error, Result};
use crate::features::TailStub;
use crate::head::{BaselineConfig, GraphHeadConfig, Merge, Model, ModelConfig};
use crate::tensor::Tensor;
use std::path::Path;

const MAGIC: &[u8; 4] = b"CGCN";
const VERSION: u32 = 1;
const KIND_GCN: u32 = 0;
const KIND_BASELINE: u32 = 1;
/// Largest accepted dimension; keeps hostile headers from requesting huge shapes.
const MAX_DIM: u32 = 1 << 16;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: Model,
    pub tail: TailStub,
}

pub fn encode_checkpoint(ckpt: &Checkpoint) -> Result<Vec<u8>> {
    let mut out = MAGIC.to_vec();
    put_u32(&mut out, VERSION);
    match ckpt.model.config() {
        ModelConfig::Gcn(c) => {
            put_u32(&mut out, KIND_GCN);
            let merge = match c.merge {
                Merge::Concat => 0,
                Merge::Sum => 1,
            };
            for v in [
                c.num_layers,
                c.graphs_per_layer,
                merge,
                c.embed_dim,
                c.use_location as usize,
                c.num_classes,
                c.actor_dim,
                c.context_dim,
            ] {
                put_u32(&mut out, dim_u32(v, "config word")?);
            }
        }
        ModelConfig::Baseline(c) => {
            put_u32(&mut out, KIND_BASELINE);
            put_u32(&mut out, dim_u32(c.num_classes, "classes")?);
            put_u32(&mut out, dim_u32(c.actor_dim, "actor width")?);
        }
    }
    put_u32(&mut out, dim_u32(ckpt.tail.in_dim(), "tail input")?);
    put_u32(&mut out, dim_u32(ckpt.tail.out_dim(), "tail output")?);
    for p in ckpt.model.parameters() {
        put_f32s(&mut out, p.value.data());
    }
    put_f32s(&mut out, ckpt.tail.weight.value.data());
    put_f32s(&mut out, ckpt.tail.bias.value.data());
    Ok(out)
}

fn word(r: &mut Reader, what: &str) -> Result<usize> {
    let at = r.pos();
    let v = r.u32(what)?;
    if v > MAX_DIM {
        return Err(Error::format(at, format!("{what} {v} exceeds {MAX_DIM}")));
    }
    Ok(v as usize)
}

fn flag(r: &mut Reader, what: &str) -> Result<usize> {
    let at = r.pos();
    match r.u32(what)? {
        v @ (0 | 1) => Ok(v as usize),
        v => Err(Error::format(at, format!("{what} must be 0 or 1, got {v}"))),
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader::new(bytes);
    r.magic(MAGIC)?;
    let at = r.pos();
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(Error::format(at, format!("unsupported version {version}")));
    }
    let at = r.pos();
    let config = match r.u32("model kind")? {
        KIND_GCN => {
            let num_layers = word(&mut r, "layers")?;
            let graphs_per_layer = word(&mut r, "graphs")?;
            let merge = if flag(&mut r, "merge")? == 0 { Merge::Concat } else { Merge::Sum };
            ModelConfig::Gcn(GraphHeadConfig {
                num_layers,
                graphs_per_layer,
                merge,
                embed_dim: word(&mut r, "embedding width")?,
                use_location: flag(&mut r, "location flag")? == 1,
                num_classes: word(&mut r, "classes")?,
                actor_dim: word(&mut r, "actor width")?,
                context_dim: word(&mut r, "context width")?,
            })
        }
        KIND_BASELINE => ModelConfig::Baseline(BaselineConfig {
            num_classes: word(&mut r, "classes")?,
            actor_dim: word(&mut r, "actor width")?,
        }),
        k => return Err(Error::format(at, format!("unknown model kind {k}"))),
    };
    let tail_in = word(&mut r, "tail input")?;
    let tail_out = word(&mut r, "tail output")?;
    let at = r.pos();
    let mut model = Model::zeros(config).map_err(|e| Error::format(at, e.to_string()))?;
    if tail_out != config.actor_dim() {
        return Err(Error::format(at, format!("tail output {tail_out} differs from actor width {}", config.actor_dim())));
    }

    let shapes: Vec<Vec<usize>> = model.parameters().iter().map(|p| p.value.shape().to_vec()).collect();
    let total: usize = shapes.iter().map(|s| s.iter().product::<usize>()).sum::<usize>() + tail_in * tail_out + tail_out;
    if total.checked_mul(4).is_none_or(|n| n != r.remaining()) {
        return Err(Error::format(
            r.pos(),
            format!("expected {total} parameters, found {} bytes", r.remaining()),
        ));
    }
    let mut values = Vec::with_capacity(shapes.len());
    for shape in shapes {
        let n = shape.iter().product();
        values.push(Tensor::new(shape, r.f32s(n, "parameters")?)?);
    }
    model.set_parameters(&values)?;
    let weight = Tensor::matrix(tail_in, tail_out, r.f32s(tail_in * tail_out, "tail weight")?)?;
    let bias = Tensor::vector(r.f32s(tail_out, "tail bias")?)?;
    r.finish()?;
    Ok(Checkpoint {
        model,
        tail: TailStub::new(weight, bias)?,
    })
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    decode_checkpoint(&std::fs::read(path)?)
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    write_atomic(path, &encode_checkpoint(ckpt)?)
}
