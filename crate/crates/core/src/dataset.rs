//! Videos with precomputed backbone features, and the clip windows cut from
//! them for training and scoring.

use crate::error::{Error, Result};
use crate::features::{roi_pool, tube_regions, ClipGeometry, FeatureMap, TailStub};
use crate::head::{context_coordinates, embed_actor_location, HeadInput};
use crate::tensor::Tensor;
use crate::tubes::{GroundTruthInstance, Tube};

/// One video: a feature volume covering every frame at the backbone's
/// temporal stride, its candidate tubes and its annotated instances.
#[derive(Debug, Clone, PartialEq)]
pub struct Video {
    pub id: String,
    pub num_frames: u32,
    pub features: FeatureMap,
    pub tubes: Vec<Tube>,
    pub instances: Vec<GroundTruthInstance>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub num_classes: usize,
    pub geometry: ClipGeometry,
    pub videos: Vec<Video>,
}

/// A clip window ready for the head.
#[derive(Debug, Clone, PartialEq)]
pub struct ClipSample {
    pub start: u32,
    pub input: HeadInput,
    /// Indices into the video's tubes, one per actor row.
    pub tubes: Vec<usize>,
    /// `(t, h, w)` of the context grid.
    pub grid: (usize, usize, usize),
}

impl Dataset {
    pub fn validate(&self) -> Result<()> {
        self.geometry.validate()?;
        let g = &self.geometry;
        for v in &self.videos {
            let (_, t, h, w) = v.features.dims();
            if h != g.feat_h() || w != g.feat_w() {
                return Err(Error::Config(format!(
                    "video {}: feature grid {h}x{w} does not match {}x{} frames",
                    v.id, g.width, g.height
                )));
            }
            let expected_t = (v.num_frames.div_ceil(g.temporal_stride)) as usize;
            if t != expected_t {
                return Err(Error::Config(format!(
                    "video {}: {t} feature slices for {} frames (expected {expected_t})",
                    v.id, v.num_frames
                )));
            }
            for inst in &v.instances {
                if inst.class >= self.num_classes {
                    return Err(Error::Config(format!(
                        "video {}: instance {} has class {} of {}",
                        v.id, inst.id, inst.class, self.num_classes
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn context_dim(&self) -> Option<usize> {
        self.videos.first().map(|v| v.features.channels())
    }

    /// Clip starts usable for training: every multiple of the feature stride
    /// whose window fits in the video (just 0 for short videos).
    pub fn valid_starts(&self, video: &Video) -> Vec<u32> {
        let g = &self.geometry;
        if video.num_frames <= g.frames {
            return vec![0];
        }
        (0..=video.num_frames - g.frames).step_by(g.temporal_stride as usize).collect()
    }

    /// Up to `count` evenly spaced clip starts for inference.
    pub fn eval_starts(&self, video: &Video, count: usize) -> Vec<u32> {
        let valid = self.valid_starts(video);
        if count == 0 {
            return Vec::new();
        }
        if valid.len() <= count {
            return valid;
        }
        let mut out: Vec<u32> = (0..count)
            .map(|k| {
                let idx = if count == 1 {
                    0.0
                } else {
                    k as f64 * (valid.len() - 1) as f64 / (count - 1) as f64
                };
                valid[idx.round() as usize]
            })
            .collect();
        out.dedup();
        out
    }

    /// The clip at `start`, or `None` if no tube has a box inside it.
    pub fn clip(&self, video: &Video, start: u32, tail: &TailStub) -> Result<Option<ClipSample>> {
        let g = &self.geometry;
        let end = start + g.frames;
        let tubes: Vec<usize> = (0..video.tubes.len())
            .filter(|&i| video.tubes[i].boxes_in(start, end).next().is_some())
            .collect();
        if tubes.is_empty() {
            return Ok(None);
        }
        let window = video
            .features
            .temporal_window((start / g.temporal_stride) as usize, g.feat_t());
        let (_, t, h, w) = window.dims();

        let mut actors = Vec::with_capacity(tubes.len() * tail.out_dim());
        let mut locations = Vec::with_capacity(tubes.len() * 4);
        for &i in &tubes {
            let tube = &video.tubes[i];
            let regions = tube_regions(tube, start, g)?;
            let pooled = roi_pool(&window, &regions)?;
            actors.extend(tail.forward(&pooled)?.into_data());
            locations.extend(embed_actor_location(tube, start, g)?);
        }
        let n = tubes.len();
        Ok(Some(ClipSample {
            start,
            input: HeadInput {
                actors: Tensor::matrix(n, tail.out_dim(), actors)?,
                actor_locations: Tensor::matrix(n, 4, locations)?,
                context: window.context_matrix(),
                context_locations: context_coordinates(t, h, w),
            },
            tubes,
            grid: (t, h, w),
        }))
    }

    pub fn training_clips(&self, video: &Video, tail: &TailStub) -> Result<Vec<ClipSample>> {
        let mut out = Vec::new();
        for start in self.valid_starts(video) {
            if let Some(c) = self.clip(video, start, tail)? {
                out.push(c);
            }
        }
        Ok(out)
    }

    /// Copy dropping every video with an instance of an `excluded` class.
    pub fn without_classes(&self, excluded: &[usize]) -> Dataset {
        Dataset {
            num_classes: self.num_classes,
            geometry: self.geometry,
            videos: self
                .videos
                .iter()
                .filter(|v| v.instances.iter().all(|i| !excluded.contains(&i.class)))
                .cloned()
                .collect(),
        }
    }

    /// Copy keeping only videos with an instance of one of `classes`.
    pub fn with_classes(&self, classes: &[usize]) -> Dataset {
        Dataset {
            num_classes: self.num_classes,
            geometry: self.geometry,
            videos: self
                .videos
                .iter()
                .filter(|v| v.instances.iter().any(|i| classes.contains(&i.class)))
                .cloned()
                .collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::seeded_rng;
    use crate::tubes::BBox;

    fn video(frames: u32) -> Video {
        let g = ClipGeometry::with_size(64, 64);
        let slices = frames.div_ceil(8) as usize;
        let b = BBox::new(8.0, 8.0, 40.0, 40.0).unwrap();
        let tube = Tube::new("v", 0, (0..frames).step_by(4).map(|f| (f, b)).collect()).unwrap();
        let late = Tube::new("v", 1, [(frames - 1, b)].into_iter().collect()).unwrap();
        Video {
            id: "v".into(),
            num_frames: frames,
            features: FeatureMap::zeros(6, slices, g.feat_h(), g.feat_w()),
            tubes: vec![tube, late],
            instances: vec![],
        }
    }

    fn dataset(frames: u32) -> Dataset {
        Dataset {
            num_classes: 2,
            geometry: ClipGeometry::with_size(64, 64),
            videos: vec![video(frames)],
        }
    }

    #[test]
    fn window_starts() {
        let d = dataset(64);
        let v = &d.videos[0];
        assert_eq!(d.valid_starts(v), vec![0, 8, 16, 24, 32]);
        assert_eq!(d.eval_starts(v, 10), vec![0, 8, 16, 24, 32]);
        assert_eq!(d.eval_starts(v, 3), vec![0, 16, 32]);
        let short = dataset(20);
        assert_eq!(short.valid_starts(&short.videos[0]), vec![0]);
        d.validate().unwrap();
    }

    #[test]
    fn clip_collects_visible_tubes() {
        let d = dataset(64);
        let tail = TailStub::random(6, 10, &mut seeded_rng(0, 0));
        let c = d.clip(&d.videos[0], 0, &tail).unwrap().unwrap();
        assert_eq!(c.tubes, vec![0]);
        assert_eq!(c.input.actors.shape(), &[1, 10]);
        assert_eq!(c.input.context.shape(), &[4 * 4 * 4, 6]);
        let last = d.clip(&d.videos[0], 32, &tail).unwrap().unwrap();
        assert_eq!(last.tubes, vec![0, 1]);
    }

    #[test]
    fn short_video_is_padded() {
        let d = dataset(20);
        let tail = TailStub::random(6, 10, &mut seeded_rng(0, 0));
        let c = d.clip(&d.videos[0], 0, &tail).unwrap().unwrap();
        assert_eq!(c.grid, (4, 4, 4));
    }
}
