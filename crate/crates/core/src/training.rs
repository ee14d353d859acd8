//! Parameter initialization, loss, learning-rate schedule and the SGD loop.

use crate::dataset::{ClipSample, Dataset};
use crate::error::{Error, Result};
use crate::features::TailStub;
use crate::head::{Baseline, BaselineConfig, GraphHead, GraphHeadConfig, Linear, Mode, Model, ModelConfig};
use crate::tensor::{seeded_rng, SeededRng, Tensor};
use crate::tubes::TubeLabel;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::{PI, SQRT_2};

/// Margin pulled in from the uniform bound of the first-layer context transform.
pub const FIRST_LAYER_UNIFORM_MARGIN: f64 = 0.01;
/// Gain of the actor transform.
pub const THETA_GAIN: f64 = 1.0;
/// Gain of every other fully connected layer.
pub const DENSE_GAIN: f64 = SQRT_2;
/// Gain of the context transform.
pub const PHI_GAIN: f64 = 0.577_350_269_189_625_8; // 1/√3

const INIT_STREAM: u64 = 1;
const SHUFFLE_STREAM: u64 = 2;
const DROPOUT_STREAM_BASE: u64 = 1 << 32;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub base_lr: f64,
    pub total_epochs: usize,
    #[serde(default = "default_batch")]
    pub batch_clips: usize,
    #[serde(default = "default_dropout")]
    pub dropout_p: f64,
}

fn default_batch() -> usize {
    3
}

fn default_dropout() -> f64 {
    0.5
}

impl TrainConfig {
    /// Schedule used for the baseline on full-size data.
    pub fn full_size_baseline() -> Self {
        Self {
            base_lr: 2.5e-4,
            total_epochs: 150,
            batch_clips: 3,
            dropout_p: 0.5,
        }
    }

    /// Schedule used for the graph head on full-size data.
    pub fn full_size_gcn() -> Self {
        Self {
            base_lr: 4.7e-5,
            total_epochs: 450,
            batch_clips: 3,
            dropout_p: 0.5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.base_lr > 0.0 && self.base_lr.is_finite()) {
            return Err(Error::Config(format!("base_lr must be positive, got {}", self.base_lr)));
        }
        if self.total_epochs == 0 || self.batch_clips == 0 {
            return Err(Error::Config("total_epochs and batch_clips must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(Error::Config(format!("dropout_p {} outside [0, 1)", self.dropout_p)));
        }
        Ok(())
    }
}

fn normal_fill(t: &mut Tensor, std: f64, rng: &mut SeededRng) {
    let normal = Normal::new(0.0, std).expect("finite std");
    for v in t.data_mut() {
        *v = normal.sample(rng);
    }
}

fn uniform_fill(t: &mut Tensor, bound: f64, rng: &mut SeededRng) {
    let uniform = Uniform::new(-bound, bound).expect("positive bound");
    for v in t.data_mut() {
        *v = uniform.sample(rng);
    }
}

/// Normal init with `std = gain · sqrt(2 / fan_in)`; zero bias.
fn init_normal(layer: &mut Linear, gain: f64, rng: &mut SeededRng) {
    let std = gain * (2.0 / layer.in_dim() as f64).sqrt();
    normal_fill(&mut layer.weight.value, std, rng);
    layer.bias.value.data_mut().fill(0.0);
}

/// Uniform bound `gain · sqrt(6 / (fan_in + fan_out))`.
pub fn phi_bound(fan_in: usize, fan_out: usize) -> f64 {
    PHI_GAIN * (6.0 / (fan_in + fan_out) as f64).sqrt()
}

pub fn init_gcn(config: GraphHeadConfig, seed: u64) -> Result<GraphHead> {
    let mut head = GraphHead::zeros(config)?;
    let mut rng = seeded_rng(seed, INIT_STREAM);
    for (l, units) in head.layers.iter_mut().enumerate() {
        for unit in units {
            init_normal(&mut unit.theta, THETA_GAIN, &mut rng);
            let mut bound = phi_bound(unit.phi.in_dim(), unit.phi.out_dim());
            if l == 0 {
                bound -= FIRST_LAYER_UNIFORM_MARGIN;
                if bound <= 0.0 {
                    return Err(Error::Config(format!(
                        "context transform {}x{} too wide for the first-layer uniform margin",
                        unit.phi.in_dim(),
                        unit.phi.out_dim()
                    )));
                }
            }
            uniform_fill(&mut unit.phi.weight.value, bound, &mut rng);
            unit.phi.bias.value.data_mut().fill(0.0);
            init_normal(&mut unit.out, DENSE_GAIN, &mut rng);
        }
    }
    init_normal(&mut head.classifier, DENSE_GAIN, &mut rng);
    Ok(head)
}

pub fn init_baseline(config: BaselineConfig, seed: u64) -> Result<Baseline> {
    let mut b = Baseline::zeros(config)?;
    let mut rng = seeded_rng(seed, INIT_STREAM);
    init_normal(&mut b.classifier, DENSE_GAIN, &mut rng);
    Ok(b)
}

/// Initializes either model kind.
pub fn init_params(config: ModelConfig, seed: u64) -> Result<Model> {
    Ok(match config {
        ModelConfig::Gcn(c) => Model::Gcn(init_gcn(c, seed)?),
        ModelConfig::Baseline(c) => Model::Baseline(init_baseline(c, seed)?),
    })
}

/// `base_lr · ½ · (1 + cos(π · epoch / total))`.
pub fn cosine_lr(epoch: usize, cfg: &TrainConfig) -> Result<f64> {
    if epoch > cfg.total_epochs {
        return Err(Error::arg(format!("epoch {epoch} beyond schedule of {}", cfg.total_epochs)));
    }
    Ok(cfg.base_lr * 0.5 * (1.0 + (PI * epoch as f64 / cfg.total_epochs as f64).cos()))
}

/// `−log softmax(logits)[label]` and its gradient with respect to `logits`.
pub fn cross_entropy(logits: &[f64], label: usize) -> Result<(f64, Vec<f64>)> {
    if label >= logits.len() {
        return Err(Error::arg(format!("label {label} outside {} classes", logits.len())));
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let total: f64 = logits.iter().map(|&z| (z - max).exp()).sum();
    let log_norm = max + total.ln();
    let loss = log_norm - logits[label];
    let mut grad: Vec<f64> = logits.iter().map(|&z| (z - log_norm).exp()).collect();
    grad[label] -= 1.0;
    Ok((loss, grad))
}

/// Summed cross-entropy over the rows of `logits` and the gradient.
pub fn cross_entropy_rows(logits: &Tensor, labels: &[usize]) -> Result<(f64, Tensor)> {
    if logits.rows() != labels.len() {
        return Err(Error::dim("cross_entropy_rows", logits.shape(), &[labels.len()]));
    }
    let mut total = 0.0;
    let mut grad = Vec::with_capacity(logits.len());
    for (i, &label) in labels.iter().enumerate() {
        let (l, g) = cross_entropy(logits.row(i), label)?;
        total += l;
        grad.extend(g);
    }
    Ok((total, Tensor::new(logits.shape().to_vec(), grad)?))
}

/// Loss of one clip and the parameter gradients.
pub fn clip_loss_and_grad(model: &Model, clip: &ClipSample, labels: &[usize], mode: &mut Mode) -> Result<(f64, Vec<Tensor>)> {
    let fwd = model.forward(&clip.input, mode)?;
    let (loss, dlogits) = cross_entropy_rows(&fwd.logits, labels)?;
    let grads = model.backward(&fwd, &dlogits)?;
    Ok((loss, grads))
}

/// Plain SGD step `θ ← θ − lr · ∇θ` on every parameter.
pub fn sgd_step(model: &mut Model, lr: f64) -> Result<()> {
    for p in model.parameters_mut() {
        let grad = p.grad.clone();
        p.value.axpy(-lr, &grad)?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    pub mean_loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub epochs: Vec<EpochLog>,
}

impl TrainReport {
    /// `epoch,lr,mean_loss` rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,lr,mean_loss\n");
        for e in &self.epochs {
            out.push_str(&format!("{},{:.9e},{:.9e}\n", e.epoch, e.lr, e.mean_loss));
        }
        out
    }
}

/// Trains `model` in place on `dataset` with per-video tube `labels`.
///
/// Each epoch visits the videos in a seeded random order, batch by batch.
/// Every video in a batch contributes one uniformly drawn clip window and
/// all labeled tubes visible in it; the loss is averaged over those tubes.
pub fn train(
    model: &mut Model,
    dataset: &Dataset,
    labels: &[Vec<TubeLabel>],
    tail: &TailStub,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<TrainReport> {
    cfg.validate()?;
    if labels.len() != dataset.videos.len() {
        return Err(Error::arg(format!("{} label sets for {} videos", labels.len(), dataset.videos.len())));
    }
    let num_classes = model.num_classes();
    let bank: Vec<Vec<ClipSample>> = dataset
        .videos
        .par_iter()
        .map(|v| dataset.training_clips(v, tail))
        .collect::<Result<_>>()?;
    let usable: Vec<usize> = (0..bank.len()).filter(|&i| !bank[i].is_empty()).collect();
    if usable.is_empty() {
        return Err(Error::arg("no video has a clip with a visible tube"));
    }

    let mut order_rng = seeded_rng(seed, SHUFFLE_STREAM);
    let mut epochs = Vec::with_capacity(cfg.total_epochs);
    for epoch in 0..cfg.total_epochs {
        let lr = cosine_lr(epoch, cfg)?;
        let mut order = usable.clone();
        order.shuffle(&mut order_rng);
        let mut epoch_loss = 0.0;
        let mut epoch_tubes = 0usize;

        for (step, batch) in order.chunks(cfg.batch_clips).enumerate() {
            let picks: Vec<(usize, usize)> = batch
                .iter()
                .map(|&v| (v, order_rng.random_range(0..bank[v].len())))
                .collect();
            let results: Vec<(f64, usize, Vec<Tensor>)> = picks
                .par_iter()
                .enumerate()
                .map(|(slot, &(v, c))| {
                    let clip = &bank[v][c];
                    let clip_labels: Vec<usize> = clip.tubes.iter().map(|&t| labels[v][t].index(num_classes)).collect();
                    let stream = DROPOUT_STREAM_BASE + ((epoch as u64) << 20) + ((step as u64) << 4) + slot as u64;
                    let mut rng = seeded_rng(seed, stream);
                    let mut mode = Mode::Training {
                        p: cfg.dropout_p,
                        rng: &mut rng,
                    };
                    let (loss, grads) = clip_loss_and_grad(model, clip, &clip_labels, &mut mode)?;
                    Ok((loss, clip_labels.len(), grads))
                })
                .collect::<Result<_>>()?;

            let tubes: usize = results.iter().map(|r| r.1).sum();
            let loss: f64 = results.iter().map(|r| r.0).sum();
            if !loss.is_finite() {
                return Err(Error::Numeric(format!("loss became {loss} in epoch {epoch}")));
            }
            let scale = 1.0 / tubes as f64;
            for p in model.parameters_mut() {
                p.zero_grad();
            }
            for (_, _, grads) in &results {
                for (p, g) in model.parameters_mut().into_iter().zip(grads) {
                    p.grad.axpy(scale, g)?;
                }
            }
            sgd_step(model, lr)?;
            epoch_loss += loss;
            epoch_tubes += tubes;
        }
        let mean_loss = epoch_loss / epoch_tubes as f64;
        log::debug!("epoch {epoch} lr {lr:.3e} loss {mean_loss:.4}");
        epochs.push(EpochLog { epoch, lr, mean_loss });
    }
    Ok(TrainReport { epochs })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::head::Merge;

    fn toy_config() -> GraphHeadConfig {
        GraphHeadConfig {
            num_layers: 2,
            graphs_per_layer: 2,
            merge: Merge::Concat,
            embed_dim: 4,
            use_location: true,
            num_classes: 3,
            actor_dim: 12,
            context_dim: 8,
        }
    }

    #[test]
    fn biases_start_at_zero() {
        let head = init_gcn(toy_config(), 3).unwrap();
        for (i, p) in head.parameters().iter().enumerate() {
            if i % 2 == 1 {
                assert!(p.value.data().iter().all(|&v| v == 0.0), "bias {i}");
            }
        }
    }

    #[test]
    fn theta_std_matches_declared_formula() {
        let cfg = GraphHeadConfig {
            num_layers: 1,
            graphs_per_layer: 1,
            merge: Merge::Concat,
            embed_dim: 1000,
            use_location: false,
            num_classes: 2,
            actor_dim: 1001,
            context_dim: 1001,
        };
        let head = init_gcn(cfg, 1).unwrap();
        let w = head.layers[0][0].theta.weight.value.data();
        assert!(w.len() > 1_000_000);
        let mean = w.iter().sum::<f64>() / w.len() as f64;
        let std = (w.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / w.len() as f64).sqrt();
        let expected = (2.0 / 1001.0f64).sqrt();
        assert!((std / expected - 1.0).abs() < 0.02, "{std} vs {expected}");
    }

    #[test]
    fn phi_respects_uniform_ranges() {
        let cfg = toy_config();
        let head = init_gcn(cfg, 9).unwrap();
        let first = &head.layers[0][0].phi;
        let b = phi_bound(first.in_dim(), first.out_dim());
        assert!(first.weight.value.data().iter().all(|v| v.abs() < b - 0.01));
        let deep = &head.layers[1][1].phi;
        let b = phi_bound(deep.in_dim(), deep.out_dim());
        assert!(deep.weight.value.data().iter().all(|v| v.abs() < b));
    }

    #[test]
    fn init_is_deterministic() {
        assert_eq!(init_gcn(toy_config(), 4).unwrap(), init_gcn(toy_config(), 4).unwrap());
        assert_ne!(init_gcn(toy_config(), 4).unwrap(), init_gcn(toy_config(), 5).unwrap());
    }

    #[test]
    fn cosine_schedule_examples() {
        let cfg = TrainConfig {
            base_lr: 0.2,
            total_epochs: 10,
            batch_clips: 3,
            dropout_p: 0.5,
        };
        assert_eq!(cosine_lr(0, &cfg).unwrap(), 0.2);
        assert!(cosine_lr(10, &cfg).unwrap().abs() < 1e-15);
        assert!((cosine_lr(5, &cfg).unwrap() - 0.1).abs() < 1e-15);
        assert!(cosine_lr(11, &cfg).is_err());
        let lrs: Vec<f64> = (0..=10).map(|e| cosine_lr(e, &cfg).unwrap()).collect();
        assert!(lrs.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn cross_entropy_examples() {
        let (l, _) = cross_entropy(&[0.3, 0.3, 0.3, 0.3], 2).unwrap();
        assert!((l - 4f64.ln()).abs() < 1e-12);
        let (l, _) = cross_entropy(&[40.0, 0.0, 0.0], 0).unwrap();
        assert!(l < 1e-15);
        let (l, g) = cross_entropy(&[1.0, 0.0], 0).unwrap();
        assert!((l - (1.0 + (-1.0f64).exp()).ln()).abs() < 1e-15);
        assert!((l - 0.3133).abs() < 1e-4);
        assert!((g.iter().sum::<f64>()).abs() < 1e-15);
        assert!(cross_entropy(&[1.0, 0.0], 2).is_err());
    }

    #[test]
    fn train_config_validation() {
        let mut cfg = TrainConfig::full_size_gcn();
        cfg.validate().unwrap();
        cfg.base_lr = 0.0;
        assert!(cfg.validate().is_err());
        let mut cfg = TrainConfig::full_size_baseline();
        cfg.total_epochs = 0;
        assert!(cfg.validate().is_err());
    }
}
