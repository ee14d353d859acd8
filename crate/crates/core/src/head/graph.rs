//! The single-graph building blocks: affine maps, dot-product relation
//! scores, row-softmax adjacency, the graph convolution and head merging.

use crate::error::{Error, Result};
use crate::tensor::{concat_last, matmul, matmul_nt, matmul_tn, relu, softmax_rows, split_last, Parameter, Tensor};
use serde::{Deserialize, Serialize};

/// `y = x · W + b` with `W: in × out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub weight: Parameter,
    pub bias: Parameter,
}

impl Linear {
    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Self {
            weight: Parameter::zeros(&[in_dim, out_dim]),
            bias: Parameter::zeros(&[out_dim]),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.value.shape()[0]
    }

    pub fn out_dim(&self) -> usize {
        self.weight.value.shape()[1]
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        matmul(x, &self.weight.value)?.add_row_vector(&self.bias.value)
    }

    /// Returns `(dx, dW, db)`.
    pub fn backward(&self, x: &Tensor, dy: &Tensor) -> Result<(Tensor, Tensor, Tensor)> {
        let dx = matmul_nt(dy, &self.weight.value)?;
        let dw = matmul_tn(x, dy)?;
        Ok((dx, dw, dy.sum_rows()))
    }

    pub fn len(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Row-stochastic `N × M` attention from actors to context nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct AdjacencyMatrix {
    pub layer: usize,
    pub graph: usize,
    pub values: Tensor,
}

impl AdjacencyMatrix {
    pub fn actors(&self) -> usize {
        self.values.rows()
    }

    pub fn nodes(&self) -> usize {
        self.values.cols()
    }

    pub fn row(&self, actor: usize) -> &[f64] {
        self.values.row(actor)
    }
}

/// `e = A · Fᵀ` for transformed actors `N × D` and contexts `M × D`.
pub fn relation_scores(actors: &Tensor, contexts: &Tensor) -> Result<Tensor> {
    matmul_nt(actors, contexts)
}

/// Softmax of relation scores across context nodes.
pub fn attention(scores: &Tensor) -> Tensor {
    softmax_rows(scores)
}

/// `Z = ReLU((G·F + A)·W + b)`.
pub fn gcn_layer(adjacency: &Tensor, contexts: &Tensor, actors: &Tensor, out: &Linear) -> Result<Tensor> {
    let h = matmul(adjacency, contexts)?.add(actors)?;
    Ok(relu(&out.forward(&h)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Merge {
    Concat,
    Sum,
}

impl std::str::FromStr for Merge {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "concat" => Ok(Merge::Concat),
            "sum" => Ok(Merge::Sum),
            other => Err(Error::arg(format!("unknown merge mode `{other}`"))),
        }
    }
}

pub fn merge_heads(zs: &[Tensor], mode: Merge) -> Result<Tensor> {
    let first = zs.first().ok_or_else(|| Error::arg("merge of zero graphs"))?;
    for z in zs {
        if z.shape() != first.shape() {
            return Err(Error::dim("merge_heads", first.shape(), z.shape()));
        }
    }
    match mode {
        Merge::Concat => concat_last(&zs.iter().collect::<Vec<_>>()),
        Merge::Sum => {
            let mut acc = first.clone();
            for z in &zs[1..] {
                acc.add_assign(z)?;
            }
            Ok(acc)
        }
    }
}

/// Per-graph gradients of a [`merge_heads`] output.
pub fn merge_heads_backward(dy: &Tensor, graphs: usize, mode: Merge) -> Result<Vec<Tensor>> {
    match mode {
        Merge::Concat => split_last(dy, &vec![dy.cols() / graphs; graphs]),
        Merge::Sum => Ok(vec![dy.clone(); graphs]),
    }
}
