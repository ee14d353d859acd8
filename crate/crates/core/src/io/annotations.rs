//! JSON annotations: videos with their feature file, candidate tubes and
//! sparsely labeled instances.

use super::fmap::load_fmap;
use crate::dataset::{Dataset, Video};
use crate::error::{Error, Result};
use crate::features::ClipGeometry;
use crate::tubes::{BBox, GroundTruthInstance, Keyframe, Tube, MAX_KEYFRAMES};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnnotationFile {
    pub num_classes: usize,
    #[serde(default)]
    pub geometry: ClipGeometry,
    pub videos: Vec<VideoRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VideoRecord {
    pub id: String,
    pub num_frames: u32,
    /// Feature file, relative to the annotation file.
    pub features: String,
    #[serde(default)]
    pub instances: Vec<InstanceRecord>,
    #[serde(default)]
    pub tubes: Vec<TubeRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstanceRecord {
    pub id: u32,
    pub class: usize,
    pub keyframes: Vec<KeyframeRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KeyframeRecord {
    pub frame: u32,
    #[serde(rename = "box")]
    pub bbox: BBox,
    #[serde(default)]
    pub objects: Vec<BBox>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TubeRecord {
    pub id: u32,
    pub boxes: Vec<BoxRecord>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoxRecord {
    pub frame: u32,
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

fn parse_error(path: String, message: impl Into<String>) -> Error {
    Error::Parse {
        path,
        message: message.into(),
    }
}

fn check_box(b: &BBox, path: String) -> Result<()> {
    b.validate().map_err(|e| parse_error(path, e.to_string()))
}

impl AnnotationFile {
    /// Semantic checks the JSON schema cannot express.
    pub fn validate(&self) -> Result<()> {
        for (v, video) in self.videos.iter().enumerate() {
            let vp = format!("videos[{v}]");
            for (i, inst) in video.instances.iter().enumerate() {
                let ip = format!("{vp}.instances[{i}]");
                if inst.class >= self.num_classes {
                    return Err(parse_error(format!("{ip}.class"), format!("class {} outside 0..{}", inst.class, self.num_classes)));
                }
                if inst.keyframes.is_empty() || inst.keyframes.len() > MAX_KEYFRAMES {
                    return Err(parse_error(
                        format!("{ip}.keyframes"),
                        format!("{} keyframes, expected 1..={MAX_KEYFRAMES}", inst.keyframes.len()),
                    ));
                }
                for (k, kf) in inst.keyframes.iter().enumerate() {
                    let kp = format!("{ip}.keyframes[{k}]");
                    if kf.frame >= video.num_frames {
                        return Err(parse_error(format!("{kp}.frame"), format!("frame {} beyond {} frames", kf.frame, video.num_frames)));
                    }
                    check_box(&kf.bbox, format!("{kp}.box"))?;
                    for (o, obj) in kf.objects.iter().enumerate() {
                        check_box(obj, format!("{kp}.objects[{o}]"))?;
                    }
                }
            }
            for (t, tube) in video.tubes.iter().enumerate() {
                let tp = format!("{vp}.tubes[{t}]");
                if tube.boxes.is_empty() {
                    return Err(parse_error(format!("{tp}.boxes"), "tube has no boxes"));
                }
                let mut seen = std::collections::BTreeSet::new();
                for (b, rec) in tube.boxes.iter().enumerate() {
                    let bp = format!("{tp}.boxes[{b}]");
                    if !seen.insert(rec.frame) {
                        return Err(parse_error(format!("{bp}.frame"), format!("duplicate frame {}", rec.frame)));
                    }
                    check_box(&BBox { x1: rec.x1, y1: rec.y1, x2: rec.x2, y2: rec.y2 }, bp)?;
                }
            }
        }
        Ok(())
    }

    fn build_video(record: &VideoRecord, features: crate::features::FeatureMap) -> Result<Video> {
        let tubes = record
            .tubes
            .iter()
            .map(|t| {
                let boxes: BTreeMap<u32, BBox> = t
                    .boxes
                    .iter()
                    .map(|b| (b.frame, BBox { x1: b.x1, y1: b.y1, x2: b.x2, y2: b.y2 }))
                    .collect();
                Tube::new(record.id.clone(), t.id, boxes)
            })
            .collect::<Result<_>>()?;
        let instances = record
            .instances
            .iter()
            .map(|i| {
                let keyframes = i
                    .keyframes
                    .iter()
                    .map(|k| Keyframe {
                        frame: k.frame,
                        bbox: k.bbox,
                        objects: k.objects.clone(),
                    })
                    .collect();
                GroundTruthInstance::new(record.id.clone(), i.id, i.class, keyframes)
            })
            .collect::<Result<_>>()?;
        Ok(Video {
            id: record.id.clone(),
            num_frames: record.num_frames,
            features,
            tubes,
            instances,
        })
    }

    /// Builds a dataset, reading each video's features with `load`.
    pub fn into_dataset<F>(&self, mut load: F) -> Result<Dataset>
    where
        F: FnMut(&VideoRecord) -> Result<crate::features::FeatureMap>,
    {
        let videos = self
            .videos
            .iter()
            .map(|r| Self::build_video(r, load(r)?))
            .collect::<Result<_>>()?;
        let dataset = Dataset {
            num_classes: self.num_classes,
            geometry: self.geometry,
            videos,
        };
        dataset.validate()?;
        Ok(dataset)
    }

    /// Records describing `dataset`, naming feature files with `features`.
    pub fn from_dataset(dataset: &Dataset, features: impl Fn(&Video) -> String) -> Self {
        let videos = dataset
            .videos
            .iter()
            .map(|v| VideoRecord {
                id: v.id.clone(),
                num_frames: v.num_frames,
                features: features(v),
                instances: v
                    .instances
                    .iter()
                    .map(|i| InstanceRecord {
                        id: i.id,
                        class: i.class,
                        keyframes: i
                            .keyframes
                            .iter()
                            .map(|k| KeyframeRecord {
                                frame: k.frame,
                                bbox: k.bbox,
                                objects: k.objects.clone(),
                            })
                            .collect(),
                    })
                    .collect(),
                tubes: v
                    .tubes
                    .iter()
                    .map(|t| TubeRecord {
                        id: t.id,
                        boxes: t
                            .boxes()
                            .iter()
                            .map(|(&frame, b)| BoxRecord { frame, x1: b.x1, y1: b.y1, x2: b.x2, y2: b.y2 })
                            .collect(),
                    })
                    .collect(),
            })
            .collect();
        Self {
            num_classes: dataset.num_classes,
            geometry: dataset.geometry,
            videos,
        }
    }
}

/// Parses and checks annotation JSON; errors name the offending JSON path.
pub fn decode_annotations(text: &str) -> Result<AnnotationFile> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let file: AnnotationFile = serde_path_to_error::deserialize(de).map_err(|e| Error::Parse {
        path: e.path().to_string(),
        message: e.inner().to_string(),
    })?;
    file.validate()?;
    Ok(file)
}

pub fn encode_annotations(file: &AnnotationFile) -> Result<String> {
    serde_json::to_string_pretty(file).map_err(|e| Error::arg(e.to_string()))
}

/// Reads an annotation file and the feature files it references.
pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let file = decode_annotations(&std::fs::read_to_string(path)?)?;
    let base = path.parent().unwrap_or(Path::new("."));
    file.into_dataset(|r| load_fmap(&base.join(&r.features)))
}
