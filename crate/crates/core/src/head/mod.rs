//! Actor-context graph head and the context-free baseline.
//!
//! A clip contributes `N` actor vectors and `M` context nodes (one per
//! feature-map cell). Each graph projects both into a shared embedding,
//! attends from every actor to every context node and aggregates the
//! weighted context back onto the actor with an identity link. Several
//! graphs per layer are merged, and layers are stacked.

pub mod graph;
pub mod location;

use crate::error::{Error, Result};
use crate::tensor::{concat_last, dropout, matmul, matmul_nt, matmul_tn, relu, relu_backward, softmax_rows_backward, DropoutMask, DropoutMode, Parameter, SeededRng, Tensor};
pub use graph::{attention, gcn_layer, merge_heads, merge_heads_backward, relation_scores, AdjacencyMatrix, Linear, Merge};
pub use location::{context_coordinates, embed_actor_location, embed_context_location, normalized_coordinate};
use serde::{Deserialize, Serialize};

pub const ACTOR_LOCATION_DIM: usize = 4;
pub const CONTEXT_LOCATION_DIM: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphHeadConfig {
    pub num_layers: usize,
    pub graphs_per_layer: usize,
    pub merge: Merge,
    /// Shared embedding width of actors and context.
    pub embed_dim: usize,
    pub use_location: bool,
    /// Action classes, excluding background.
    pub num_classes: usize,
    pub actor_dim: usize,
    pub context_dim: usize,
}

impl GraphHeadConfig {
    /// Full-size dimensions: 1024-d actors, 832-d context, 256-d embedding.
    pub fn full_size(num_layers: usize, graphs_per_layer: usize, merge: Merge) -> Self {
        Self {
            num_layers,
            graphs_per_layer,
            merge,
            embed_dim: 256,
            use_location: true,
            num_classes: 10,
            actor_dim: 1024,
            context_dim: 832,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_layers == 0 || self.graphs_per_layer == 0 {
            return Err(Error::Config("need at least one layer and one graph".into()));
        }
        if self.num_classes == 0 {
            return Err(Error::Config("need at least one action class".into()));
        }
        if self.embed_dim == 0 || self.embed_dim >= self.actor_dim || self.embed_dim >= self.context_dim {
            return Err(Error::Config(format!(
                "embedding width {} must be positive and below actor ({}) and context ({}) widths",
                self.embed_dim, self.actor_dim, self.context_dim
            )));
        }
        Ok(())
    }

    /// Merge mode of `layer`: every layer but the last concatenates.
    pub fn merge_at(&self, layer: usize) -> Merge {
        if layer + 1 < self.num_layers {
            Merge::Concat
        } else {
            self.merge
        }
    }

    pub fn layer_output_dim(&self, layer: usize) -> usize {
        match self.merge_at(layer) {
            Merge::Concat => self.graphs_per_layer * self.embed_dim,
            Merge::Sum => self.embed_dim,
        }
    }

    pub fn actor_input_dim(&self, layer: usize) -> usize {
        if layer == 0 {
            self.actor_dim + if self.use_location { ACTOR_LOCATION_DIM } else { 0 }
        } else {
            self.layer_output_dim(layer - 1)
        }
    }

    pub fn context_input_dim(&self, layer: usize) -> usize {
        if layer == 0 && self.use_location {
            self.context_dim + CONTEXT_LOCATION_DIM
        } else {
            self.context_dim
        }
    }

    pub fn output_classes(&self) -> usize {
        self.num_classes + 1
    }
}

/// Closed-form parameter counts of the graph layers (classifier excluded).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParameterCount {
    pub per_layer: Vec<usize>,
    pub total: usize,
}

pub fn parameter_count(config: &GraphHeadConfig) -> ParameterCount {
    let d = config.embed_dim;
    let per_layer: Vec<usize> = (0..config.num_layers)
        .map(|l| {
            let per_graph = (config.actor_input_dim(l) + 1) * d + (config.context_input_dim(l) + 1) * d + (d + 1) * d;
            per_graph * config.graphs_per_layer
        })
        .collect();
    let total = per_layer.iter().sum();
    ParameterCount { per_layer, total }
}

/// Inputs for one clip.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadInput {
    /// `N × actor_dim`.
    pub actors: Tensor,
    /// `N × 4`.
    pub actor_locations: Tensor,
    /// `M × context_dim`.
    pub context: Tensor,
    /// `M × 2`.
    pub context_locations: Tensor,
}

impl HeadInput {
    pub fn actors(&self) -> usize {
        self.actors.rows()
    }

    pub fn nodes(&self) -> usize {
        self.context.rows()
    }
}

pub enum Mode<'a> {
    Inference,
    Training { p: f64, rng: &'a mut SeededRng },
}

impl Mode<'_> {
    fn drop(&mut self, x: &Tensor, kind: DropoutMode) -> Result<(Tensor, DropoutMask)> {
        match self {
            Mode::Inference => Ok((x.clone(), DropoutMask::identity())),
            Mode::Training { p, rng } => dropout(x, *p, kind, Some(&mut **rng)),
        }
    }
}

/// Transforms of one graph.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphUnit {
    pub theta: Linear,
    pub phi: Linear,
    pub out: Linear,
}

impl GraphUnit {
    fn parameters(&self) -> [&Parameter; 6] {
        [
            &self.theta.weight,
            &self.theta.bias,
            &self.phi.weight,
            &self.phi.bias,
            &self.out.weight,
            &self.out.bias,
        ]
    }

    fn parameters_mut(&mut self) -> [&mut Parameter; 6] {
        [
            &mut self.theta.weight,
            &mut self.theta.bias,
            &mut self.phi.weight,
            &mut self.phi.bias,
            &mut self.out.weight,
            &mut self.out.bias,
        ]
    }
}

#[derive(Debug, Clone)]
struct GraphCache {
    actor_in: Tensor,
    context_in: Tensor,
    actors: Tensor,
    contexts: Tensor,
    adjacency: Tensor,
    hidden_mask: DropoutMask,
    hidden: Tensor,
    pre_activation: Tensor,
}

#[derive(Debug, Clone)]
pub struct GcnCache {
    layers: Vec<Vec<GraphCache>>,
    merged_mask: DropoutMask,
    merged: Tensor,
}

#[derive(Debug, Clone)]
pub struct BaselineCache {
    input: Tensor,
}

#[derive(Debug, Clone)]
pub enum Cache {
    Gcn(GcnCache),
    Baseline(BaselineCache),
}

pub struct Forward {
    /// `N × (C + 1)` class logits, background last.
    pub logits: Tensor,
    /// Adjacency of every graph in layer-major order; empty for the baseline.
    pub adjacencies: Vec<AdjacencyMatrix>,
    pub cache: Cache,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GraphHead {
    config: GraphHeadConfig,
    pub layers: Vec<Vec<GraphUnit>>,
    pub classifier: Linear,
}

impl GraphHead {
    /// All-zero parameters shaped for `config`.
    pub fn zeros(config: GraphHeadConfig) -> Result<Self> {
        config.validate()?;
        let d = config.embed_dim;
        let layers = (0..config.num_layers)
            .map(|l| {
                (0..config.graphs_per_layer)
                    .map(|_| GraphUnit {
                        theta: Linear::zeros(config.actor_input_dim(l), d),
                        phi: Linear::zeros(config.context_input_dim(l), d),
                        out: Linear::zeros(d, d),
                    })
                    .collect()
            })
            .collect();
        let classifier = Linear::zeros(config.layer_output_dim(config.num_layers - 1), config.output_classes());
        Ok(Self {
            config,
            layers,
            classifier,
        })
    }

    pub fn config(&self) -> &GraphHeadConfig {
        &self.config
    }

    /// Every parameter in declaration order: per layer, per graph
    /// `W_θ, b_θ, W_φ, b_φ, W, b`; then classifier weight and bias.
    pub fn parameters(&self) -> Vec<&Parameter> {
        let mut out: Vec<&Parameter> = self.layers.iter().flatten().flat_map(|g| g.parameters()).collect();
        out.push(&self.classifier.weight);
        out.push(&self.classifier.bias);
        out
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Parameter> {
        let mut out: Vec<&mut Parameter> = self.layers.iter_mut().flatten().flat_map(|g| g.parameters_mut()).collect();
        out.push(&mut self.classifier.weight);
        out.push(&mut self.classifier.bias);
        out
    }

    /// Entries of the graph-layer parameters, tallied from the tensors.
    pub fn graph_parameter_len(&self) -> usize {
        self.layers
            .iter()
            .flatten()
            .flat_map(|g| g.parameters())
            .map(Parameter::len)
            .sum()
    }

    fn check_input(&self, input: &HeadInput) -> Result<()> {
        let c = &self.config;
        if input.actors.shape().len() != 2 || input.actors.cols() != c.actor_dim {
            return Err(Error::Config(format!(
                "actor features {:?} do not match actor width {}",
                input.actors.shape(),
                c.actor_dim
            )));
        }
        if input.context.shape().len() != 2 || input.context.cols() != c.context_dim {
            return Err(Error::Config(format!(
                "context features {:?} do not match context width {}",
                input.context.shape(),
                c.context_dim
            )));
        }
        if c.use_location
            && (input.actor_locations.shape() != [input.actors(), ACTOR_LOCATION_DIM]
                || input.context_locations.shape() != [input.nodes(), CONTEXT_LOCATION_DIM])
        {
            return Err(Error::Config("location embeddings do not match actor/context counts".into()));
        }
        Ok(())
    }

    pub fn forward(&self, input: &HeadInput, mode: &mut Mode) -> Result<Forward> {
        self.check_input(input)?;
        let c = &self.config;
        let mut caches = Vec::with_capacity(c.num_layers);
        let mut adjacencies = Vec::new();
        let mut actor_features = input.actors.clone();

        for (l, units) in self.layers.iter().enumerate() {
            let mut zs = Vec::with_capacity(units.len());
            let mut layer_cache = Vec::with_capacity(units.len());
            for (g, unit) in units.iter().enumerate() {
                let actor_in = if l == 0 {
                    let (dropped, _) = mode.drop(&actor_features, DropoutMode::Elementwise)?;
                    if c.use_location {
                        concat_last(&[&dropped, &input.actor_locations])?
                    } else {
                        dropped
                    }
                } else {
                    actor_features.clone()
                };
                let (ctx, _) = mode.drop(&input.context, DropoutMode::Channelwise)?;
                let context_in = if l == 0 && c.use_location {
                    concat_last(&[&ctx, &input.context_locations])?
                } else {
                    ctx
                };

                let actors = unit.theta.forward(&actor_in)?;
                let contexts = unit.phi.forward(&context_in)?;
                let adjacency = attention(&relation_scores(&actors, &contexts)?);
                let aggregated = matmul(&adjacency, &contexts)?.add(&actors)?;
                let (hidden, hidden_mask) = mode.drop(&aggregated, DropoutMode::Elementwise)?;
                let pre_activation = unit.out.forward(&hidden)?;
                zs.push(relu(&pre_activation));

                adjacencies.push(AdjacencyMatrix {
                    layer: l,
                    graph: g,
                    values: adjacency.clone(),
                });
                layer_cache.push(GraphCache {
                    actor_in,
                    context_in,
                    actors,
                    contexts,
                    adjacency,
                    hidden_mask,
                    hidden,
                    pre_activation,
                });
            }
            actor_features = merge_heads(&zs, c.merge_at(l))?;
            caches.push(layer_cache);
        }

        let (merged, merged_mask) = mode.drop(&actor_features, DropoutMode::Elementwise)?;
        let logits = self.classifier.forward(&merged)?;
        Ok(Forward {
            logits,
            adjacencies,
            cache: Cache::Gcn(GcnCache {
                layers: caches,
                merged_mask,
                merged,
            }),
        })
    }

    /// Gradients of every parameter, in [`GraphHead::parameters`] order.
    pub fn backward(&self, cache: &GcnCache, dlogits: &Tensor) -> Result<Vec<Tensor>> {
        let c = &self.config;
        let (dmerged, dwc, dbc) = self.classifier.backward(&cache.merged, dlogits)?;
        let mut dfeatures = cache.merged_mask.backward(&dmerged)?;
        let mut per_layer: Vec<Vec<Tensor>> = vec![Vec::new(); c.num_layers];

        for l in (0..c.num_layers).rev() {
            let dzs = merge_heads_backward(&dfeatures, c.graphs_per_layer, c.merge_at(l))?;
            let mut dinput: Option<Tensor> = None;
            let mut grads = Vec::with_capacity(6 * c.graphs_per_layer);
            for ((unit, gc), dz) in self.layers[l].iter().zip(&cache.layers[l]).zip(&dzs) {
                let dpre = relu_backward(&gc.pre_activation, dz)?;
                let (dhidden, dw_out, db_out) = unit.out.backward(&gc.hidden, &dpre)?;
                let dagg = gc.hidden_mask.backward(&dhidden)?;

                // aggregated = G·F + A
                let dadj = matmul_nt(&dagg, &gc.contexts)?;
                let mut dcontexts = matmul_tn(&gc.adjacency, &dagg)?;
                let mut dactors = dagg;
                let dscores = softmax_rows_backward(&gc.adjacency, &dadj)?;
                // scores = A·Fᵀ
                dactors.add_assign(&matmul(&dscores, &gc.contexts)?)?;
                dcontexts.add_assign(&matmul_tn(&dscores, &gc.actors)?)?;

                let (dactor_in, dw_theta, db_theta) = unit.theta.backward(&gc.actor_in, &dactors)?;
                let (_, dw_phi, db_phi) = unit.phi.backward(&gc.context_in, &dcontexts)?;
                grads.extend([dw_theta, db_theta, dw_phi, db_phi, dw_out, db_out]);

                if l > 0 {
                    match dinput.as_mut() {
                        Some(acc) => acc.add_assign(&dactor_in)?,
                        None => dinput = Some(dactor_in),
                    }
                }
            }
            per_layer[l] = grads;
            if let Some(d) = dinput {
                dfeatures = d;
            }
        }

        let mut out: Vec<Tensor> = per_layer.into_iter().flatten().collect();
        out.push(dwc);
        out.push(dbc);
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BaselineConfig {
    pub num_classes: usize,
    pub actor_dim: usize,
}

impl BaselineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes == 0 || self.actor_dim == 0 {
            return Err(Error::Config(format!("invalid baseline config {self:?}")));
        }
        Ok(())
    }
}

/// Linear classifier over actor features alone.
#[derive(Debug, Clone, PartialEq)]
pub struct Baseline {
    config: BaselineConfig,
    pub classifier: Linear,
}

impl Baseline {
    pub fn zeros(config: BaselineConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            classifier: Linear::zeros(config.actor_dim, config.num_classes + 1),
        })
    }

    pub fn config(&self) -> &BaselineConfig {
        &self.config
    }

    pub fn parameters(&self) -> Vec<&Parameter> {
        vec![&self.classifier.weight, &self.classifier.bias]
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Parameter> {
        vec![&mut self.classifier.weight, &mut self.classifier.bias]
    }

    pub fn forward(&self, actors: &Tensor, mode: &mut Mode) -> Result<Forward> {
        if actors.shape().len() != 2 || actors.cols() != self.config.actor_dim {
            return Err(Error::dim("baseline_forward", actors.shape(), self.classifier.weight.value.shape()));
        }
        let (input, _) = mode.drop(actors, DropoutMode::Elementwise)?;
        let logits = self.classifier.forward(&input)?;
        Ok(Forward {
            logits,
            adjacencies: Vec::new(),
            cache: Cache::Baseline(BaselineCache { input }),
        })
    }

    pub fn backward(&self, cache: &BaselineCache, dlogits: &Tensor) -> Result<Vec<Tensor>> {
        let (_, dw, db) = self.classifier.backward(&cache.input, dlogits)?;
        Ok(vec![dw, db])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelConfig {
    Gcn(GraphHeadConfig),
    Baseline(BaselineConfig),
}

impl ModelConfig {
    pub fn num_classes(&self) -> usize {
        match self {
            ModelConfig::Gcn(c) => c.num_classes,
            ModelConfig::Baseline(c) => c.num_classes,
        }
    }

    pub fn actor_dim(&self) -> usize {
        match self {
            ModelConfig::Gcn(c) => c.actor_dim,
            ModelConfig::Baseline(c) => c.actor_dim,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            ModelConfig::Gcn(c) => c.validate(),
            ModelConfig::Baseline(c) => c.validate(),
        }
    }
}

/// Either classifier behind one interface.
#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    Gcn(GraphHead),
    Baseline(Baseline),
}

impl Model {
    pub fn zeros(config: ModelConfig) -> Result<Self> {
        Ok(match config {
            ModelConfig::Gcn(c) => Model::Gcn(GraphHead::zeros(c)?),
            ModelConfig::Baseline(c) => Model::Baseline(Baseline::zeros(c)?),
        })
    }

    pub fn config(&self) -> ModelConfig {
        match self {
            Model::Gcn(h) => ModelConfig::Gcn(*h.config()),
            Model::Baseline(b) => ModelConfig::Baseline(*b.config()),
        }
    }

    pub fn num_classes(&self) -> usize {
        self.config().num_classes()
    }

    pub fn forward(&self, input: &HeadInput, mode: &mut Mode) -> Result<Forward> {
        match self {
            Model::Gcn(h) => h.forward(input, mode),
            Model::Baseline(b) => b.forward(&input.actors, mode),
        }
    }

    pub fn backward(&self, forward: &Forward, dlogits: &Tensor) -> Result<Vec<Tensor>> {
        match (self, &forward.cache) {
            (Model::Gcn(h), Cache::Gcn(c)) => h.backward(c, dlogits),
            (Model::Baseline(b), Cache::Baseline(c)) => b.backward(c, dlogits),
            _ => Err(Error::Config("forward cache does not belong to this model".into())),
        }
    }

    pub fn parameters(&self) -> Vec<&Parameter> {
        match self {
            Model::Gcn(h) => h.parameters(),
            Model::Baseline(b) => b.parameters(),
        }
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Parameter> {
        match self {
            Model::Gcn(h) => h.parameters_mut(),
            Model::Baseline(b) => b.parameters_mut(),
        }
    }

    /// Replaces parameter values in declaration order.
    pub fn set_parameters(&mut self, values: &[Tensor]) -> Result<()> {
        let mut params = self.parameters_mut();
        if params.len() != values.len() {
            return Err(Error::Config(format!("{} tensors for {} parameters", values.len(), params.len())));
        }
        for (p, v) in params.iter_mut().zip(values) {
            if p.value.shape() != v.shape() {
                return Err(Error::dim("set_parameters", p.value.shape(), v.shape()));
            }
            p.value = v.clone();
        }
        Ok(())
    }

    pub fn parameter_values(&self) -> Vec<Tensor> {
        self.parameters().into_iter().map(|p| p.value.clone()).collect()
    }
}
