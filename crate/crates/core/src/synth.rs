//! Synthetic clips where the action class is visible only in the context.
//!
//! Every video holds one actor, some distractor tracks and one context blob.
//! Actor cells carry a class-independent "person" code; the blob carries a
//! shared salience code plus a per-class code and sits outside every tube's
//! projected region, so pooled actor features say nothing about the class.
//! Each code spans `code_width` adjacent channels: salience first, then one
//! block per class, then the person code.

use crate::dataset::{Dataset, Video};
use crate::error::{Error, Result};
use crate::features::{project_box, CellRect, ClipGeometry, FeatureMap};
use crate::tensor::{seeded_rng, SeededRng};
use crate::tubes::{BBox, GroundTruthInstance, Keyframe, Tube, MAX_KEYFRAMES};
use rand::seq::index::sample;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub num_classes: usize,
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub num_frames: u32,
    pub width: u32,
    pub height: u32,
    pub channels: usize,
    /// Channels per code, so channel dropout rarely erases a code.
    pub code_width: usize,
    /// Actor box extent in feature cells `(w, h)`.
    pub actor_cells: (usize, usize),
    pub distractors: usize,
    /// Side of the square context blob in feature cells.
    pub blob_cells: usize,
    pub noise_std: f64,
    /// Amplitude of the class codes.
    pub signal: f64,
    /// Amplitude of the person code on actor cells.
    pub person_signal: f64,
    /// Amplitude of the salience code shared by all blobs.
    pub salience_signal: f64,
    /// Per-box position jitter of tube boxes, pixels.
    pub jitter: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            num_classes: 4,
            train_per_class: 40,
            test_per_class: 50,
            num_frames: 48,
            width: 112,
            height: 112,
            channels: 24,
            code_width: 4,
            actor_cells: (2, 3),
            distractors: 1,
            blob_cells: 2,
            noise_std: 0.25,
            signal: 2.0,
            person_signal: 0.5,
            salience_signal: 1.0,
            jitter: 2.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthDataset {
    pub train: Dataset,
    pub test: Dataset,
}

const PLACEMENT_TRIES: usize = 1000;

impl SynthSpec {
    pub fn geometry(&self) -> ClipGeometry {
        ClipGeometry::with_size(self.width, self.height)
    }

    fn code(&self, block: usize) -> std::ops::Range<usize> {
        block * self.code_width..(block + 1) * self.code_width
    }

    fn salience(&self) -> std::ops::Range<usize> {
        self.code(0)
    }

    fn class_code(&self, class: usize) -> std::ops::Range<usize> {
        self.code(1 + class)
    }

    fn person(&self) -> std::ops::Range<usize> {
        self.code(1 + self.num_classes)
    }

    pub fn validate(&self) -> Result<()> {
        self.geometry().validate().map_err(|e| Error::arg(e.to_string()))?;
        if self.num_classes == 0 {
            return Err(Error::arg("need at least one class"));
        }
        if self.code_width == 0 || self.channels < self.code_width * (self.num_classes + 2) {
            return Err(Error::arg(format!(
                "{} channels cannot hold salience, {} class codes and a person code of width {}",
                self.channels, self.num_classes, self.code_width
            )));
        }
        if self.num_frames == 0 || self.num_frames % self.geometry().temporal_stride != 0 {
            return Err(Error::arg("frame count must be a positive multiple of the feature stride"));
        }
        let g = self.geometry();
        let (aw, ah) = self.actor_cells;
        if !(0.0..g.spatial_stride as f64 / 2.0).contains(&self.jitter) {
            return Err(Error::arg("jitter must be below half a feature cell"));
        }
        if aw == 0 || ah == 0 || aw > g.feat_w() || ah > g.feat_h() {
            return Err(Error::arg(format!("actor of {aw}x{ah} cells does not fit the grid")));
        }
        if self.blob_cells == 0 || self.blob_cells > g.feat_w() || self.blob_cells > g.feat_h() {
            return Err(Error::arg(format!("blob of {} cells lies outside the grid", self.blob_cells)));
        }
        let padded = aw * ah * (1 + self.distractors) + self.blob_cells * self.blob_cells;
        if padded > g.feat_w() * g.feat_h() {
            return Err(Error::arg("grid too small to keep the blob outside every tube"));
        }
        Ok(())
    }
}

fn region_of(boxes: &[(u32, BBox)], geom: &ClipGeometry) -> Result<CellRect> {
    let mut acc: Option<CellRect> = None;
    for (_, b) in boxes {
        let r = project_box(b, 0, geom)?.rect;
        acc = Some(acc.map_or(r, |a| a.union(&r)));
    }
    acc.ok_or_else(|| Error::arg("empty track"))
}

fn overlaps(a: &CellRect, b: &CellRect) -> bool {
    a.x0 <= b.x1 && b.x0 <= a.x1 && a.y0 <= b.y1 && b.y0 <= a.y1
}

struct Track {
    true_box: BBox,
    boxes: Vec<(u32, BBox)>,
    region: CellRect,
}

fn make_track(spec: &SynthSpec, rng: &mut SeededRng, taken: &[CellRect]) -> Result<Track> {
    let g = spec.geometry();
    let s = g.spatial_stride as f64;
    let (cw, ch) = spec.actor_cells;
    // shrink the box by the jitter so every jittered copy stays inside its cells
    let (bw, bh) = (cw as f64 * s - 2.0 * spec.jitter, ch as f64 * s - 2.0 * spec.jitter);
    for _ in 0..PLACEMENT_TRIES {
        let x1 = rng.random_range(0..=g.feat_w() - cw) as f64 * s + spec.jitter;
        let y1 = rng.random_range(0..=g.feat_h() - ch) as f64 * s + spec.jitter;
        let true_box = BBox::new(x1, y1, x1 + bw, y1 + bh)?;
        let boxes: Vec<(u32, BBox)> = (0..spec.num_frames)
            .step_by(g.box_stride as usize)
            .map(|f| {
                let dx = rng.random_range(-spec.jitter..=spec.jitter);
                let dy = rng.random_range(-spec.jitter..=spec.jitter);
                let b = BBox {
                    x1: (x1 + dx).max(0.0),
                    y1: (y1 + dy).max(0.0),
                    x2: (x1 + bw + dx).min(g.width as f64),
                    y2: (y1 + bh + dy).min(g.height as f64),
                };
                (f, b)
            })
            .collect();
        let region = region_of(&boxes, &g)?.union(&region_of(&[(0, true_box)], &g)?);
        if taken.iter().all(|t| !overlaps(t, &region)) {
            return Ok(Track { true_box, boxes, region });
        }
    }
    Err(Error::arg("could not place a track without overlap"))
}

fn make_video(spec: &SynthSpec, id: String, class: usize, seed: u64, stream: u64) -> Result<Video> {
    let g = spec.geometry();
    let mut rng = seeded_rng(seed, stream);
    let (gw, gh) = (g.feat_w(), g.feat_h());
    let slices = (spec.num_frames / g.temporal_stride) as usize;

    let mut tracks: Vec<Track> = Vec::with_capacity(1 + spec.distractors);
    for _ in 0..=spec.distractors {
        let taken: Vec<CellRect> = tracks.iter().map(|t| t.region).collect();
        tracks.push(make_track(spec, &mut rng, &taken)?);
    }

    let bs = spec.blob_cells;
    let free: Vec<(usize, usize)> = (0..=gh - bs)
        .flat_map(|y| (0..=gw - bs).map(move |x| (x, y)))
        .filter(|&(x, y)| {
            let blob = CellRect { x0: x, y0: y, x1: x + bs - 1, y1: y + bs - 1 };
            tracks.iter().all(|t| !overlaps(&t.region, &blob))
        })
        .collect();
    if free.is_empty() {
        return Err(Error::arg(format!("video {id}: no cell left for the context blob")));
    }
    let (bx, by) = free[rng.random_range(0..free.len())];

    let normal = Normal::new(0.0, spec.noise_std).map_err(|e| Error::arg(e.to_string()))?;
    let mut fm = FeatureMap::zeros(spec.channels, slices, gh, gw);
    for v in fm_values(&mut fm) {
        *v = normal.sample(&mut rng);
    }
    let actor_cells = region_of(&[(0, tracks[0].true_box)], &g)?;
    for t in 0..slices {
        for y in 0..gh {
            for x in 0..gw {
                if actor_cells.contains(x, y) {
                    for ch in spec.person() {
                        let v = fm.at(ch, t, y, x) + spec.person_signal;
                        fm.set(ch, t, y, x, v);
                    }
                }
                if (bx..bx + bs).contains(&x) && (by..by + bs).contains(&y) {
                    for ch in spec.salience() {
                        let v = fm.at(ch, t, y, x) + spec.salience_signal;
                        fm.set(ch, t, y, x, v);
                    }
                    for ch in spec.class_code(class) {
                        let v = fm.at(ch, t, y, x) + spec.signal;
                        fm.set(ch, t, y, x, v);
                    }
                }
            }
        }
    }

    let s = g.spatial_stride as f64;
    let object = BBox::new(bx as f64 * s, by as f64 * s, (bx + bs) as f64 * s, (by + bs) as f64 * s)?;
    let count = rng.random_range(1..=MAX_KEYFRAMES.min(spec.num_frames as usize));
    let mut frames: Vec<u32> = sample(&mut rng, spec.num_frames as usize, count)
        .into_iter()
        .map(|f| f as u32)
        .collect();
    frames.sort_unstable();
    let keyframes = frames
        .into_iter()
        .map(|frame| Keyframe {
            frame,
            bbox: tracks[0].true_box,
            objects: vec![object],
        })
        .collect();
    let instance = GroundTruthInstance::new(id.clone(), 0, class, keyframes)?;

    let tubes = tracks
        .iter()
        .enumerate()
        .map(|(i, t)| Tube::new(id.clone(), i as u32, t.boxes.iter().copied().collect()))
        .collect::<Result<_>>()?;

    Ok(Video {
        id,
        num_frames: spec.num_frames,
        features: fm,
        tubes,
        instances: vec![instance],
    })
}

fn fm_values(fm: &mut FeatureMap) -> std::slice::IterMut<'_, f64> {
    fm.values_mut().data_mut().iter_mut()
}

fn make_split(spec: &SynthSpec, prefix: &str, per_class: usize, seed: u64, stream_base: u64) -> Result<Dataset> {
    let videos = (0..per_class * spec.num_classes)
        .map(|i| {
            let class = i % spec.num_classes;
            make_video(spec, format!("{prefix}{i:04}"), class, seed, stream_base + i as u64)
        })
        .collect::<Result<_>>()?;
    Ok(Dataset {
        num_classes: spec.num_classes,
        geometry: spec.geometry(),
        videos,
    })
}

/// Deterministic train/test splits for `seed`.
pub fn synth_generate(spec: &SynthSpec, seed: u64) -> Result<SynthDataset> {
    spec.validate()?;
    Ok(SynthDataset {
        train: make_split(spec, "train", spec.train_per_class, seed, 1_000)?,
        test: make_split(spec, "test", spec.test_per_class, seed, 1_000_000)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::tube_regions;

    fn small() -> SynthSpec {
        SynthSpec {
            train_per_class: 3,
            test_per_class: 2,
            ..SynthSpec::default()
        }
    }

    #[test]
    fn one_class_means_one_label() {
        let spec = SynthSpec { num_classes: 1, ..small() };
        let d = synth_generate(&spec, 3).unwrap();
        assert!(d.train.videos.iter().all(|v| v.instances[0].class == 0));
    }

    #[test]
    fn generation_is_deterministic() {
        assert_eq!(synth_generate(&small(), 9).unwrap(), synth_generate(&small(), 9).unwrap());
        assert_ne!(synth_generate(&small(), 9).unwrap(), synth_generate(&small(), 10).unwrap());
    }

    #[test]
    fn blob_stays_outside_every_tube() {
        let spec = small();
        let d = synth_generate(&spec, 1).unwrap();
        d.train.validate().unwrap();
        for v in &d.train.videos {
            let obj = v.instances[0].keyframes[0].objects[0];
            let (bx, by) = ((obj.x1 / 16.0) as usize, (obj.y1 / 16.0) as usize);
            for start in d.train.valid_starts(v) {
                for t in &v.tubes {
                    for r in tube_regions(t, start, &d.train.geometry).unwrap() {
                        assert!(!r.contains(bx, by), "video {}", v.id);
                    }
                }
            }
        }
    }

    #[test]
    fn impossible_specs_are_rejected() {
        let blob = SynthSpec { blob_cells: 8, ..small() };
        assert!(matches!(synth_generate(&blob, 0), Err(Error::Argument(_))));
        let crowded = SynthSpec { distractors: 12, ..small() };
        assert!(synth_generate(&crowded, 0).is_err());
        let narrow = SynthSpec { channels: 5, ..small() };
        assert!(synth_generate(&narrow, 0).is_err());
    }

    #[test]
    fn labels_balanced() {
        let d = synth_generate(&small(), 2).unwrap();
        for c in 0..4 {
            assert_eq!(d.test.videos.iter().filter(|v| v.instances[0].class == c).count(), 2);
        }
    }
}
