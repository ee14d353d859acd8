//! Video-level average precision with greedy score-ordered matching.

use crate::error::{Error, Result};
use crate::tubes::{spatiotemporal_iou, GroundTruthInstance, Tube};

pub const VIDEO_AP_IOU: f64 = 0.5;

/// A tube with class scores over `C + 1` classes (background last).
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredTube {
    pub tube: Tube,
    pub scores: Vec<f64>,
}

/// Outcome of one ranked detection.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Match {
    TruePositive(usize),
    FalsePositive,
}

/// Ranks detections by descending score (ties keep input order) and matches
/// each to the unmatched ground truth of highest IoU at or above
/// `threshold` (ties to the lower index). Returns `(rank order, outcomes)`.
pub fn greedy_match(scores: &[f64], ious: &[Vec<f64>], threshold: f64) -> (Vec<usize>, Vec<Match>) {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let num_gt = ious.first().map_or(0, Vec::len);
    let mut taken = vec![false; num_gt];
    let outcomes = order
        .iter()
        .map(|&d| {
            let mut best: Option<(usize, f64)> = None;
            for (g, &iou) in ious[d].iter().enumerate() {
                if taken[g] || iou < threshold {
                    continue;
                }
                if best.is_none_or(|(_, b)| iou > b) {
                    best = Some((g, iou));
                }
            }
            match best {
                Some((g, _)) => {
                    taken[g] = true;
                    Match::TruePositive(g)
                }
                None => Match::FalsePositive,
            }
        })
        .collect();
    (order, outcomes)
}

/// Area under the monotone precision envelope, all recall points.
pub fn envelope_ap(outcomes: &[Match], num_gt: usize) -> f64 {
    if num_gt == 0 {
        return 0.0;
    }
    let mut tp = 0usize;
    let mut precision = Vec::with_capacity(outcomes.len());
    for (k, m) in outcomes.iter().enumerate() {
        if matches!(m, Match::TruePositive(_)) {
            tp += 1;
        }
        precision.push(tp as f64 / (k + 1) as f64);
    }
    for k in (0..precision.len().saturating_sub(1)).rev() {
        precision[k] = precision[k].max(precision[k + 1]);
    }
    outcomes
        .iter()
        .zip(&precision)
        .filter(|(m, _)| matches!(m, Match::TruePositive(_)))
        .map(|(_, p)| p)
        .sum::<f64>()
        / num_gt as f64
}

/// AP from raw scores and a detection × ground-truth IoU table.
pub fn average_precision(scores: &[f64], ious: &[Vec<f64>], num_gt: usize, threshold: f64) -> f64 {
    let (_, outcomes) = greedy_match(scores, ious, threshold);
    envelope_ap(&outcomes, num_gt)
}

/// AP of class `class`; `None` when no instance of that class exists.
pub fn video_ap(detections: &[ScoredTube], gts: &[GroundTruthInstance], class: usize, threshold: f64) -> Option<f64> {
    let targets: Vec<&GroundTruthInstance> = gts.iter().filter(|g| g.class == class).collect();
    if targets.is_empty() {
        return None;
    }
    let scores: Vec<f64> = detections.iter().map(|d| d.scores[class]).collect();
    let ious: Vec<Vec<f64>> = detections
        .iter()
        .map(|d| targets.iter().map(|g| spatiotemporal_iou(&d.tube, g)).collect())
        .collect();
    Some(average_precision(&scores, &ious, targets.len(), threshold))
}

/// Unweighted mean over classes with a defined AP.
pub fn video_map(aps: &[Option<f64>]) -> Result<f64> {
    let defined: Vec<f64> = aps.iter().flatten().copied().collect();
    if defined.is_empty() {
        return Err(Error::arg("no class has ground truth; mAP undefined"));
    }
    Ok(defined.iter().sum::<f64>() / defined.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MapReport {
    pub per_class: Vec<Option<f64>>,
    pub map: f64,
}

impl MapReport {
    pub fn compute(detections: &[ScoredTube], gts: &[GroundTruthInstance], num_classes: usize) -> Result<Self> {
        let per_class: Vec<Option<f64>> = (0..num_classes)
            .map(|c| {
                let ap = video_ap(detections, gts, c, VIDEO_AP_IOU);
                if ap.is_none() {
                    log::warn!("class {c} has no ground truth; excluded from mAP");
                }
                ap
            })
            .collect();
        let map = video_map(&per_class)?;
        Ok(Self { per_class, map })
    }

    /// `class,ap` rows, `excluded` for undefined classes, then `mAP`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("class,ap\n");
        for (c, ap) in self.per_class.iter().enumerate() {
            match ap {
                Some(v) => out.push_str(&format!("{c},{v:.6}\n")),
                None => out.push_str(&format!("{c},excluded\n")),
            }
        }
        out.push_str(&format!("mAP,{:.6}\n", self.map));
        out
    }
}
