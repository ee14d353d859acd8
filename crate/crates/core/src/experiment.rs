//! End-to-end runs binding data, training, evaluation and artifact files.
//! Every function is a pure function of its configuration, seed and inputs.

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::eval::{
    attention_assemble, attention_upsample, dataset_labels, evaluate, infer_video, matched_tube, recall_csv, recall_instances,
    zero_shot_protocol, EvalReport, ZeroShotReport, EVAL_CLIPS,
};
use crate::features::TailStub;
use crate::head::{parameter_count, GraphHeadConfig, HeadInput, Merge, Mode, Model, ModelConfig};
use crate::io::{encode_annotations, save_fmap, write_atomic, AnnotationFile, Checkpoint, DataSection, ExperimentConfig};
use crate::synth::{synth_generate, SynthDataset};
use crate::tensor::{grad_check, seeded_rng, Tensor};
use crate::training::{cross_entropy_rows, init_params, train, TrainReport};
use crate::tubes::{label_tubes_single_keyframe, LABEL_IOU_THRESHOLD};
use rand::Rng;
use std::path::Path;

const TAIL_STREAM: u64 = 7;
const KEYFRAME_STREAM: u64 = 8;
const GRADCHECK_STREAM: u64 = 9;

/// Frozen tail sized for `dataset` and `model`, drawn from `seed`.
pub fn make_tail(model: &ModelConfig, context_dim: usize, seed: u64) -> TailStub {
    TailStub::random(context_dim, model.actor_dim(), &mut seeded_rng(seed, TAIL_STREAM))
}

/// Train and test splits described by `cfg`.
pub fn load_data(cfg: &ExperimentConfig) -> Result<(Dataset, Dataset)> {
    match &cfg.data {
        DataSection::Synthetic(spec) => {
            let SynthDataset { train, test } = synth_generate(spec, cfg.seed)?;
            Ok((train, test))
        }
        DataSection::Files { train, test } => Ok((crate::io::load_dataset(train)?, crate::io::load_dataset(test)?)),
    }
}

fn context_dim(dataset: &Dataset) -> Result<usize> {
    dataset.context_dim().ok_or_else(|| Error::arg("dataset has no videos"))
}

/// Writes `dataset` as annotations plus one feature file per video under `dir`.
pub fn write_dataset(dataset: &Dataset, dir: &Path) -> Result<()> {
    for v in &dataset.videos {
        save_fmap(&dir.join("features").join(format!("{}.fmap", v.id)), &v.features)?;
    }
    let file = AnnotationFile::from_dataset(dataset, |v| format!("features/{}.fmap", v.id));
    write_atomic(&dir.join("annotations.json"), encode_annotations(&file)?.as_bytes())
}

pub fn run_synth(cfg: &ExperimentConfig, out: &Path) -> Result<SynthDataset> {
    let DataSection::Synthetic(spec) = &cfg.data else {
        return Err(Error::Config("synth needs a synthetic data section".into()));
    };
    let data = synth_generate(spec, cfg.seed)?;
    write_dataset(&data.train, &out.join("train"))?;
    write_dataset(&data.test, &out.join("test"))?;
    Ok(data)
}

fn round_to_f32(t: &Tensor) -> Tensor {
    t.map(|v| v as f32 as f64)
}

/// Trains the configured model; parameters are rounded to the checkpoint
/// precision so the in-memory model equals a reloaded one.
pub fn run_train(cfg: &ExperimentConfig, train_set: &Dataset) -> Result<(Checkpoint, TrainReport)> {
    let ctx = context_dim(train_set)?;
    if let ModelConfig::Gcn(g) = &cfg.model {
        if g.context_dim != ctx {
            return Err(Error::Config(format!("model expects {}-d context, data has {ctx}", g.context_dim)));
        }
    }
    let labels = if cfg.single_keyframe {
        let mut rng = seeded_rng(cfg.seed, KEYFRAME_STREAM);
        train_set
            .videos
            .iter()
            .map(|v| label_tubes_single_keyframe(&v.tubes, &v.instances, &mut rng, LABEL_IOU_THRESHOLD))
            .collect()
    } else {
        dataset_labels(train_set)
    };
    let mut tail = make_tail(&cfg.model, ctx, cfg.seed);
    tail.weight.value = round_to_f32(&tail.weight.value);
    let mut model = init_params(cfg.model, cfg.seed)?;
    let report = train(&mut model, train_set, &labels, &tail, &cfg.train, cfg.seed)?;
    let rounded: Vec<Tensor> = model.parameter_values().iter().map(round_to_f32).collect();
    model.set_parameters(&rounded)?;
    Ok((Checkpoint { model, tail }, report))
}

pub fn run_eval(ckpt: &Checkpoint, dataset: &Dataset) -> Result<EvalReport> {
    evaluate(&ckpt.model, dataset, &ckpt.tail)
}

pub fn run_recall(ckpt: &Checkpoint, dataset: &Dataset) -> Result<String> {
    let instances = recall_instances(&ckpt.model, dataset, &ckpt.tail, None)?;
    Ok(recall_csv(&instances, dataset.num_classes, None))
}

pub fn run_zeroshot(cfg: &ExperimentConfig, train_set: &Dataset, test_set: &Dataset) -> Result<ZeroShotReport> {
    let tail = make_tail(&cfg.model, context_dim(train_set)?, cfg.seed);
    zero_shot_protocol(train_set, test_set, &cfg.excluded_classes, cfg.model, &cfg.train, &tail, cfg.seed)
}

/// `1906688` → `1,906,688`.
pub fn format_count(n: usize) -> String {
    let digits = n.to_string();
    let mut out = String::new();
    for (i, c) in digits.chars().enumerate() {
        if i > 0 && (digits.len() - i) % 3 == 0 {
            out.push(',');
        }
        out.push(c);
    }
    out
}

/// Parameter counts of the graph layers, one CSV row per configuration.
pub fn params_table(configs: &[GraphHeadConfig]) -> String {
    let mut out = String::from("layers,graphs,merge,embed_dim,total\n");
    for c in configs {
        let merge = match c.merge {
            Merge::Concat => "concat",
            Merge::Sum => "sum",
        };
        out.push_str(&format!(
            "{},{},{merge},{},\"{}\"\n",
            c.num_layers,
            c.graphs_per_layer,
            c.embed_dim,
            format_count(parameter_count(c).total)
        ));
    }
    out
}

/// Full-size configurations: one and two layers with one to three graphs.
pub fn full_size_configs() -> Vec<GraphHeadConfig> {
    (1..=2)
        .flat_map(|l| (1..=3).map(move |g| GraphHeadConfig::full_size(l, g, Merge::Concat)))
        .collect()
}

/// Random small head used by the gradient gate.
pub fn gradcheck_config(seed: u64) -> GraphHeadConfig {
    let mut rng = seeded_rng(seed, GRADCHECK_STREAM);
    GraphHeadConfig {
        num_layers: rng.random_range(1..=2),
        graphs_per_layer: rng.random_range(1..=3),
        merge: if rng.random::<bool>() { Merge::Concat } else { Merge::Sum },
        embed_dim: 4,
        use_location: rng.random::<bool>(),
        num_classes: 3,
        actor_dim: 12,
        context_dim: 8,
    }
}

/// Largest relative gradient error of head + cross-entropy on a random toy
/// head with 3 actors and 8 context cells, in inference and training mode.
pub fn run_gradcheck(seed: u64) -> Result<f64> {
    let cfg = gradcheck_config(seed);
    let mut model = init_params(ModelConfig::Gcn(cfg), seed)?;
    let mut rng = seeded_rng(seed, GRADCHECK_STREAM + 1);
    let mut random = |shape: &[usize]| {
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect())
    };
    // biases off zero so no unit rests on a ReLU kink
    let values: Vec<Tensor> = model
        .parameter_values()
        .into_iter()
        .map(|v| if v.shape().len() == 1 { random(v.shape()).map(|t| t.scale(0.1)) } else { Ok(v) })
        .collect::<Result<_>>()?;
    model.set_parameters(&values)?;
    let input = HeadInput {
        actors: random(&[3, cfg.actor_dim])?,
        actor_locations: random(&[3, 4])?,
        context: random(&[8, cfg.context_dim])?,
        context_locations: random(&[8, 2])?,
    };
    let labels = [0, 1, cfg.num_classes];

    let mut worst: f64 = 0.0;
    for dropout_seed in [None, Some(seed)] {
        let loss_of = |m: &Model| -> Result<(f64, Vec<Tensor>)> {
            let fwd = match dropout_seed {
                Some(s) => {
                    let mut r = seeded_rng(s, GRADCHECK_STREAM + 2);
                    m.forward(&input, &mut Mode::Training { p: 0.5, rng: &mut r })?
                }
                None => m.forward(&input, &mut Mode::Inference)?,
            };
            let (loss, dlogits) = cross_entropy_rows(&fwd.logits, &labels)?;
            Ok((loss, m.backward(&fwd, &dlogits)?))
        };
        let (_, analytic) = loss_of(&model)?;
        let err = grad_check(&model.parameter_values(), &analytic, 1e-5, |p| {
            let mut m = model.clone();
            m.set_parameters(p)?;
            Ok(loss_of(&m)?.0)
        })?;
        worst = worst.max(err);
    }
    Ok(worst)
}

/// 8-bit binary PGM of a `height × width` map scaled by its maximum.
pub fn encode_pgm(pixels: &Tensor) -> Result<Vec<u8>> {
    let (h, w) = match pixels.shape() {
        &[h, w] => (h, w),
        other => return Err(Error::dim("encode_pgm", other, &[])),
    };
    let max = pixels.data().iter().cloned().fold(0.0, f64::max);
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    out.extend(pixels.data().iter().map(|v| if max > 0.0 { (v / max * 255.0).round() as u8 } else { 0 }));
    Ok(out)
}

/// Exact little-endian `f64` dump: `u32` height, `u32` width, then values.
pub fn encode_sidecar(pixels: &Tensor) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + 8 * pixels.len());
    for d in pixels.shape() {
        out.extend_from_slice(&(*d as u32).to_le_bytes());
    }
    for v in pixels.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Exports the attention of each instance's matched tube at every keyframe,
/// for at most `limit` videos. Returns the written image paths.
pub fn run_attend(ckpt: &Checkpoint, dataset: &Dataset, out: &Path, limit: usize) -> Result<Vec<std::path::PathBuf>> {
    if !matches!(ckpt.model, Model::Gcn(_)) {
        return Err(Error::arg("attention maps need a graph model"));
    }
    let g = dataset.geometry;
    let mut written = Vec::new();
    for video in dataset.videos.iter().take(limit) {
        let clips = infer_video(&ckpt.model, dataset, video, &ckpt.tail, EVAL_CLIPS)?;
        for gt in &video.instances {
            let Some(tube) = matched_tube(video, gt) else { continue };
            for key in &gt.keyframes {
                let clip = clips
                    .iter()
                    .filter(|c| c.clip.start <= key.frame && key.frame < c.clip.start + g.frames && c.clip.tubes.contains(&tube))
                    .min_by_key(|c| (2 * (key.frame - c.clip.start)).abs_diff(g.frames));
                let Some(clip) = clip else { continue };
                let row = clip.clip.tubes.iter().position(|&t| t == tube).expect("tube in clip");
                let map = attention_assemble(&clip.adjacencies, row, clip.clip.grid)?;
                let pixels = attention_upsample(&map, &g, key.frame - clip.clip.start)?;
                let stem = format!("{}_i{}_f{:04}", video.id, gt.id, key.frame);
                let image = out.join(format!("{stem}.pgm"));
                write_atomic(&image, &encode_pgm(&pixels)?)?;
                write_atomic(&out.join(format!("{stem}.f64")), &encode_sidecar(&pixels))?;
                written.push(image);
            }
        }
    }
    Ok(written)
}
