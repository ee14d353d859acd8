//! Actor tubes, ground-truth instances, IoU and weak tube labeling.

use crate::error::{Error, Result};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Axis-aligned pixel rectangle with `x1 < x2`, `y1 < y2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl BBox {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self> {
        let b = Self { x1, y1, x2, y2 };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.x1, self.y1, self.x2, self.y2].iter().all(|v| v.is_finite());
        if !finite || self.x1 >= self.x2 || self.y1 >= self.y2 {
            return Err(Error::arg(format!("invalid box {self:?}")));
        }
        Ok(())
    }

    pub fn width(&self) -> f64 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> f64 {
        self.y2 - self.y1
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn center(&self) -> (f64, f64) {
        ((self.x1 + self.x2) / 2.0, (self.y1 + self.y2) / 2.0)
    }

    pub fn intersection_area(&self, other: &BBox) -> f64 {
        let w = (self.x2.min(other.x2) - self.x1.max(other.x1)).max(0.0);
        let h = (self.y2.min(other.y2) - self.y1.max(other.y1)).max(0.0);
        w * h
    }
}

pub fn spatial_iou(a: &BBox, b: &BBox) -> f64 {
    let inter = a.intersection_area(b);
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        (inter / union).clamp(0.0, 1.0)
    }
}

/// Frame spacing of stored tube boxes.
pub const BOX_STRIDE: u32 = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct Tube {
    pub video_id: String,
    pub id: u32,
    boxes: BTreeMap<u32, BBox>,
    pub scores: Option<Vec<f64>>,
}

impl Tube {
    pub fn new(video_id: impl Into<String>, id: u32, boxes: BTreeMap<u32, BBox>) -> Result<Self> {
        if boxes.is_empty() {
            return Err(Error::arg(format!("tube {id} has no boxes")));
        }
        for b in boxes.values() {
            b.validate()?;
        }
        Ok(Self {
            video_id: video_id.into(),
            id,
            boxes,
            scores: None,
        })
    }

    pub fn boxes(&self) -> &BTreeMap<u32, BBox> {
        &self.boxes
    }

    pub fn first_frame(&self) -> u32 {
        *self.boxes.keys().next().expect("non-empty tube")
    }

    pub fn last_frame(&self) -> u32 {
        *self.boxes.keys().next_back().expect("non-empty tube")
    }

    /// Boxes stored for frames in `[start, end)`.
    pub fn boxes_in(&self, start: u32, end: u32) -> impl Iterator<Item = (u32, &BBox)> {
        self.boxes.range(start..end).map(|(&f, b)| (f, b))
    }

    /// Box at `frame`: the stored box at the nearest frame less than
    /// [`BOX_STRIDE`] away, earlier frame on ties.
    pub fn box_at(&self, frame: u32) -> Option<&BBox> {
        let before = self.boxes.range(..=frame).next_back();
        let after = self.boxes.range(frame..).next();
        let candidate = match (before, after) {
            (Some(b), Some(a)) => {
                if frame - b.0 <= a.0 - frame {
                    b
                } else {
                    a
                }
            }
            (Some(b), None) => b,
            (None, Some(a)) => a,
            (None, None) => return None,
        };
        (candidate.0.abs_diff(frame) < BOX_STRIDE).then_some(candidate.1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Keyframe {
    pub frame: u32,
    pub bbox: BBox,
    #[serde(default)]
    pub objects: Vec<BBox>,
}

pub const MAX_KEYFRAMES: usize = 5;

/// A sparsely annotated action instance: one to five keyframe boxes.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthInstance {
    pub video_id: String,
    pub id: u32,
    pub class: usize,
    pub keyframes: Vec<Keyframe>,
}

impl GroundTruthInstance {
    pub fn new(video_id: impl Into<String>, id: u32, class: usize, keyframes: Vec<Keyframe>) -> Result<Self> {
        if keyframes.is_empty() || keyframes.len() > MAX_KEYFRAMES {
            return Err(Error::arg(format!(
                "instance {id} has {} keyframes, expected 1..={MAX_KEYFRAMES}",
                keyframes.len()
            )));
        }
        for k in &keyframes {
            k.bbox.validate()?;
            for o in &k.objects {
                o.validate()?;
            }
        }
        Ok(Self {
            video_id: video_id.into(),
            id,
            class,
            keyframes,
        })
    }

    /// Copy keeping only keyframe `index`.
    pub fn restricted_to(&self, index: usize) -> Self {
        Self {
            keyframes: vec![self.keyframes[index].clone()],
            ..self.clone()
        }
    }
}

/// Mean over keyframes of the spatial IoU with the tube's box at that frame;
/// keyframes the tube does not cover contribute zero.
pub fn spatiotemporal_iou(tube: &Tube, gt: &GroundTruthInstance) -> f64 {
    if tube.video_id != gt.video_id {
        return 0.0;
    }
    let total: f64 = gt
        .keyframes
        .iter()
        .map(|k| tube.box_at(k.frame).map_or(0.0, |b| spatial_iou(b, &k.bbox)))
        .sum();
    total / gt.keyframes.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TubeLabel {
    Action(usize),
    Background,
}

impl TubeLabel {
    /// Class index with background placed after the `num_classes` actions.
    pub fn index(self, num_classes: usize) -> usize {
        match self {
            TubeLabel::Action(c) => c,
            TubeLabel::Background => num_classes,
        }
    }
}

pub const LABEL_IOU_THRESHOLD: f64 = 0.5;

/// Assigns each tube the class of its best-overlapping instance when that
/// overlap strictly exceeds `threshold`; ties go to the lowest instance id.
pub fn label_tubes(tubes: &[Tube], gts: &[GroundTruthInstance], threshold: f64) -> Vec<TubeLabel> {
    let mut order: Vec<&GroundTruthInstance> = gts.iter().collect();
    order.sort_by_key(|g| g.id);
    tubes
        .iter()
        .map(|tube| {
            let mut best: Option<(f64, &GroundTruthInstance)> = None;
            for gt in &order {
                let iou = spatiotemporal_iou(tube, gt);
                if best.is_none_or(|(b, _)| iou > b) {
                    best = Some((iou, gt));
                }
            }
            match best {
                Some((iou, gt)) if iou > threshold => TubeLabel::Action(gt.class),
                _ => TubeLabel::Background,
            }
        })
        .collect()
}

/// Labeling from one randomly chosen keyframe per instance.
pub fn label_tubes_single_keyframe<R: Rng + ?Sized>(
    tubes: &[Tube],
    gts: &[GroundTruthInstance],
    rng: &mut R,
    threshold: f64,
) -> Vec<TubeLabel> {
    let reduced = select_single_keyframes(gts, rng);
    label_tubes(tubes, &reduced, threshold)
}

/// One uniformly chosen keyframe per instance, drawn in slice order.
pub fn select_single_keyframes<R: Rng + ?Sized>(gts: &[GroundTruthInstance], rng: &mut R) -> Vec<GroundTruthInstance> {
    gts.iter()
        .map(|g| g.restricted_to(rng.random_range(0..g.keyframes.len())))
        .collect()
}
