//! Tube scoring over sampled clips, Video-mAP, attention maps and the
//! object-recall metric.

pub mod ap;
pub mod attention;
pub mod recall;

pub use ap::{average_precision, envelope_ap, greedy_match, video_ap, video_map, MapReport, Match, ScoredTube, VIDEO_AP_IOU};
pub use attention::{attention_assemble, attention_upsample, bilinear_resize, AttentionMap};
pub use recall::{box_mass, object_recall, recall_csv, recall_curve, recall_thresholds, uniform_box_mass, RecallInstance};

use crate::dataset::{ClipSample, Dataset, Video};
use crate::error::{Error, Result};
use crate::features::TailStub;
use crate::head::{AdjacencyMatrix, Mode, Model, ModelConfig};
use crate::tensor::softmax_rows;
use crate::training::{init_params, train, TrainConfig, TrainReport};
use crate::tubes::{label_tubes, spatiotemporal_iou, GroundTruthInstance, TubeLabel, LABEL_IOU_THRESHOLD};
use rayon::prelude::*;

/// Clips sampled per video at inference.
pub const EVAL_CLIPS: usize = 10;

/// Inference outputs of one clip.
#[derive(Debug, Clone)]
pub struct ClipInference {
    pub clip: ClipSample,
    pub probabilities: crate::tensor::Tensor,
    pub adjacencies: Vec<AdjacencyMatrix>,
}

pub fn infer_clip(model: &Model, clip: ClipSample) -> Result<ClipInference> {
    let fwd = model.forward(&clip.input, &mut Mode::Inference)?;
    Ok(ClipInference {
        probabilities: softmax_rows(&fwd.logits),
        adjacencies: fwd.adjacencies,
        clip,
    })
}

/// Runs the model on the evenly spaced inference clips of `video`.
pub fn infer_video(model: &Model, dataset: &Dataset, video: &Video, tail: &TailStub, clips: usize) -> Result<Vec<ClipInference>> {
    let mut out = Vec::new();
    for start in dataset.eval_starts(video, clips) {
        if let Some(clip) = dataset.clip(video, start, tail)? {
            out.push(infer_clip(model, clip)?);
        }
    }
    Ok(out)
}

/// Averages a tube's softmax scores over the clips that contain it.
pub fn score_from_clips(video: &Video, tube: usize, clips: &[ClipInference]) -> Result<ScoredTube> {
    let mut acc: Option<Vec<f64>> = None;
    let mut n = 0usize;
    for c in clips {
        if let Some(row) = c.clip.tubes.iter().position(|&t| t == tube) {
            let p = c.probabilities.row(row);
            match acc.as_mut() {
                Some(a) => a.iter_mut().zip(p).for_each(|(x, y)| *x += y),
                None => acc = Some(p.to_vec()),
            }
            n += 1;
        }
    }
    let mut scores = acc.ok_or_else(|| {
        Error::Coverage(format!("tube {} of video {} overlaps no sampled clip", video.tubes[tube].id, video.id))
    })?;
    for s in &mut scores {
        *s /= n as f64;
    }
    Ok(ScoredTube {
        tube: video.tubes[tube].clone(),
        scores,
    })
}

pub fn score_tube(model: &Model, dataset: &Dataset, video: &Video, tube: usize, tail: &TailStub) -> Result<ScoredTube> {
    let clips = infer_video(model, dataset, video, tail, EVAL_CLIPS)?;
    score_from_clips(video, tube, &clips)
}

/// Scores every tube of every video, in video then tube order.
pub fn score_dataset(model: &Model, dataset: &Dataset, tail: &TailStub) -> Result<Vec<Vec<ScoredTube>>> {
    dataset
        .videos
        .par_iter()
        .map(|v| {
            let clips = infer_video(model, dataset, v, tail, EVAL_CLIPS)?;
            (0..v.tubes.len()).map(|t| score_from_clips(v, t, &clips)).collect()
        })
        .collect()
}

pub fn all_instances(dataset: &Dataset) -> Vec<GroundTruthInstance> {
    dataset.videos.iter().flat_map(|v| v.instances.iter().cloned()).collect()
}

/// Full-annotation labels of every tube.
pub fn dataset_labels(dataset: &Dataset) -> Vec<Vec<TubeLabel>> {
    dataset
        .videos
        .iter()
        .map(|v| label_tubes(&v.tubes, &v.instances, LABEL_IOU_THRESHOLD))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub map: MapReport,
    /// Top-1 accuracy (over all `C + 1` classes) on action-labeled tubes.
    pub accuracy: f64,
}

impl EvalReport {
    pub fn to_csv(&self) -> String {
        format!("{}accuracy,{:.6}\n", self.map.to_csv(), self.accuracy)
    }
}

pub fn accuracy(scored: &[Vec<ScoredTube>], labels: &[Vec<TubeLabel>], num_classes: usize) -> f64 {
    let mut hits = 0usize;
    let mut total = 0usize;
    for (tubes, lab) in scored.iter().zip(labels) {
        for (s, l) in tubes.iter().zip(lab) {
            if let TubeLabel::Action(c) = l {
                total += 1;
                let best = (0..=num_classes)
                    .max_by(|&a, &b| s.scores[a].total_cmp(&s.scores[b]).then(b.cmp(&a)))
                    .expect("at least one class");
                if best == *c {
                    hits += 1;
                }
            }
        }
    }
    if total == 0 {
        0.0
    } else {
        hits as f64 / total as f64
    }
}

pub fn evaluate(model: &Model, dataset: &Dataset, tail: &TailStub) -> Result<EvalReport> {
    let scored = score_dataset(model, dataset, tail)?;
    let detections: Vec<ScoredTube> = scored.iter().flatten().cloned().collect();
    let map = MapReport::compute(&detections, &all_instances(dataset), dataset.num_classes)?;
    let accuracy = accuracy(&scored, &dataset_labels(dataset), dataset.num_classes);
    Ok(EvalReport { map, accuracy })
}

/// Index of the tube best overlapping `gt` (lowest index on ties).
pub fn matched_tube(video: &Video, gt: &GroundTruthInstance) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, t) in video.tubes.iter().enumerate() {
        let iou = spatiotemporal_iou(t, gt);
        if iou > 0.0 && best.is_none_or(|(_, b)| iou > b) {
            best = Some((i, iou));
        }
    }
    best.map(|(i, _)| i)
}

/// Attention mass inside every annotated object, using the attention of the
/// tube matched to the object's instance in the clip whose window is most
/// centered on the keyframe.
pub fn recall_instances(model: &Model, dataset: &Dataset, tail: &TailStub, classes: Option<&[usize]>) -> Result<Vec<RecallInstance>> {
    if !matches!(model, Model::Gcn(_)) {
        return Err(Error::arg("attention maps need a graph model"));
    }
    let g = dataset.geometry;
    let per_video: Vec<Vec<RecallInstance>> = dataset
        .videos
        .par_iter()
        .map(|video| {
            let mut out = Vec::new();
            let clips = infer_video(model, dataset, video, tail, EVAL_CLIPS)?;
            for gt in &video.instances {
                if classes.is_some_and(|cs| !cs.contains(&gt.class)) {
                    continue;
                }
                let Some(tube) = matched_tube(video, gt) else { continue };
                for key in gt.keyframes.iter().filter(|k| !k.objects.is_empty()) {
                    let clip = clips
                        .iter()
                        .filter(|c| c.clip.start <= key.frame && key.frame < c.clip.start + g.frames && c.clip.tubes.contains(&tube))
                        .min_by_key(|c| (2 * (key.frame - c.clip.start)).abs_diff(g.frames));
                    let Some(clip) = clip else { continue };
                    let row = clip.clip.tubes.iter().position(|&t| t == tube).expect("tube in clip");
                    let map = attention_assemble(&clip.adjacencies, row, clip.clip.grid)?;
                    let pixels = attention_upsample(&map, &g, key.frame - clip.clip.start)?;
                    for obj in &key.objects {
                        out.push(RecallInstance {
                            video_id: video.id.clone(),
                            class: gt.class,
                            frame: key.frame,
                            mass: box_mass(&pixels, obj),
                            uniform_mass: uniform_box_mass(obj, g.width, g.height),
                        });
                    }
                }
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    Ok(per_video.into_iter().flatten().collect())
}

#[derive(Debug, Clone)]
pub struct ZeroShotReport {
    pub model: Model,
    pub training: TrainReport,
    pub excluded: Vec<usize>,
    pub instances: Vec<RecallInstance>,
}

impl ZeroShotReport {
    pub fn recall_at(&self, t: f64) -> f64 {
        object_recall(&self.instances.iter().map(|i| i.mass).collect::<Vec<_>>(), t)
    }

    pub fn uniform_recall_at(&self, t: f64) -> f64 {
        object_recall(&self.instances.iter().map(|i| i.uniform_mass).collect::<Vec<_>>(), t)
    }

    pub fn to_csv(&self, num_classes: usize) -> String {
        recall_csv(&self.instances, num_classes, Some("zero_shot"))
    }
}

/// Trains without the `excluded` classes, then measures attention recall on
/// evaluation instances of those classes only. With nothing excluded the
/// recall covers every evaluation instance.
pub fn zero_shot_protocol(
    train_set: &Dataset,
    eval_set: &Dataset,
    excluded: &[usize],
    model_config: ModelConfig,
    train_cfg: &TrainConfig,
    tail: &TailStub,
    seed: u64,
) -> Result<ZeroShotReport> {
    for &c in excluded {
        let present = eval_set.videos.iter().flat_map(|v| &v.instances).any(|i| i.class == c);
        if !present {
            return Err(Error::arg(format!("excluded class {c} has no evaluation instance")));
        }
    }
    let filtered = train_set.without_classes(excluded);
    let labels = dataset_labels(&filtered);
    let mut model = init_params(model_config, seed)?;
    let training = train(&mut model, &filtered, &labels, tail, train_cfg, seed)?;
    let classes = (!excluded.is_empty()).then_some(excluded);
    let instances = recall_instances(&model, eval_set, tail, classes)?;
    Ok(ZeroShotReport {
        model,
        training,
        excluded: excluded.to_vec(),
        instances,
    })
}
