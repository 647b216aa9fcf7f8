//! Dataset manifests and on-disk layout.
//!
//! A dataset directory holds `features/<id>.tskf` files, an
//! `annotations.json` array and a `manifest.json` listing (feature path,
//! annotation id) pairs plus the task and class vocabulary.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{
    parse_segmented_annotations, read_features, write_features, ContinuousAnnotation, DataError,
    FeatureSequence, SegmentedAnnotation,
};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Multilabel,
    Detection,
    Speed,
    PitchType,
}

impl Task {
    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "multilabel" => Self::Multilabel,
            "detection" => Self::Detection,
            "speed" => Self::Speed,
            "pitch_type" => Self::PitchType,
            _ => return None,
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Multilabel => "multilabel",
            Self::Detection => "detection",
            Self::Speed => "speed",
            Self::PitchType => "pitch_type",
        }
    }

    /// Detection is the only continuous-mode task.
    pub fn continuous(&self) -> bool {
        matches!(self, Self::Detection)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub features: String,
    pub annotation_id: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub task: Task,
    pub classes: Vec<String>,
    pub entries: Vec<ManifestEntry>,
}

#[derive(Debug, Clone)]
pub struct SegmentedDataset {
    pub classes: Vec<String>,
    pub clips: Vec<(FeatureSequence, SegmentedAnnotation)>,
}

#[derive(Debug, Clone)]
pub struct ContinuousDataset {
    pub classes: Vec<String>,
    pub videos: Vec<(FeatureSequence, ContinuousAnnotation)>,
}

#[derive(Debug, Clone)]
pub enum Dataset {
    Segmented(SegmentedDataset),
    Continuous(ContinuousDataset),
}

impl Dataset {
    pub fn classes(&self) -> &[String] {
        match self {
            Dataset::Segmented(d) => &d.classes,
            Dataset::Continuous(d) => &d.classes,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Dataset::Segmented(d) => d.clips.len(),
            Dataset::Continuous(d) => d.videos.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn features_dir(dir: &Path) -> PathBuf {
    dir.join("features")
}

/// Write a segmented dataset (multilabel, speed or pitch-type task).
pub fn write_segmented_dataset(
    dir: &Path,
    task: Task,
    classes: &[String],
    clips: &[(FeatureSequence, SegmentedAnnotation)],
) -> Result<()> {
    fs::create_dir_all(features_dir(dir))?;
    let mut entries = Vec::with_capacity(clips.len());
    let annotations: Vec<&SegmentedAnnotation> = clips.iter().map(|(_, a)| a).collect();
    for (seq, ann) in clips {
        let rel = format!("features/{}.tskf", ann.id);
        write_features(&dir.join(&rel), seq).map_err(Error::Data)?;
        entries.push(ManifestEntry {
            features: rel,
            annotation_id: ann.id.clone(),
        });
    }
    fs::write(
        dir.join("annotations.json"),
        serde_json::to_string_pretty(&annotations)?,
    )?;
    let manifest = Manifest {
        task,
        classes: classes.to_vec(),
        entries,
    };
    fs::write(
        dir.join("manifest.json"),
        serde_json::to_string_pretty(&manifest)?,
    )?;
    Ok(())
}

pub fn write_continuous_dataset(
    dir: &Path,
    classes: &[String],
    videos: &[(FeatureSequence, ContinuousAnnotation)],
) -> Result<()> {
    fs::create_dir_all(features_dir(dir))?;
    let mut entries = Vec::with_capacity(videos.len());
    let annotations: Vec<&ContinuousAnnotation> = videos.iter().map(|(_, a)| a).collect();
    for (seq, ann) in videos {
        let rel = format!("features/{}.tskf", ann.video_id);
        write_features(&dir.join(&rel), seq).map_err(Error::Data)?;
        entries.push(ManifestEntry {
            features: rel,
            annotation_id: ann.video_id.clone(),
        });
    }
    fs::write(
        dir.join("annotations.json"),
        serde_json::to_string_pretty(&annotations)?,
    )?;
    let manifest = Manifest {
        task: Task::Detection,
        classes: classes.to_vec(),
        entries,
    };
    fs::write(
        dir.join("manifest.json"),
        serde_json::to_string_pretty(&manifest)?,
    )?;
    Ok(())
}

/// Load a dataset from its manifest path (or a directory containing
/// `manifest.json`).
pub fn load_dataset(manifest_path: &Path) -> Result<(Task, Dataset)> {
    let manifest_path = if manifest_path.is_dir() {
        manifest_path.join("manifest.json")
    } else {
        manifest_path.to_path_buf()
    };
    let dir = manifest_path
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_default();
    let manifest: Manifest = serde_json::from_str(&fs::read_to_string(&manifest_path)?)?;
    let ann_text = fs::read_to_string(dir.join("annotations.json"))?;
    let dataset = if manifest.task.continuous() {
        let annotations: Vec<ContinuousAnnotation> = serde_json::from_str(&ann_text)?;
        let mut videos = Vec::with_capacity(manifest.entries.len());
        for entry in &manifest.entries {
            let ann = annotations
                .iter()
                .find(|a| a.video_id == entry.annotation_id)
                .ok_or_else(|| {
                    Error::Data(DataError::InvalidAnnotation {
                        id: entry.annotation_id.clone(),
                        detail: "annotation id missing from annotations.json".into(),
                    })
                })?;
            ann.validate(manifest.classes.len()).map_err(Error::Data)?;
            let seq = read_features(&dir.join(&entry.features)).map_err(Error::Data)?;
            videos.push((seq, ann.clone()));
        }
        Dataset::Continuous(ContinuousDataset {
            classes: manifest.classes.clone(),
            videos,
        })
    } else {
        let annotations =
            parse_segmented_annotations(&ann_text, &manifest.classes).map_err(Error::Data)?;
        let mut clips = Vec::with_capacity(manifest.entries.len());
        for entry in &manifest.entries {
            let ann = annotations
                .iter()
                .find(|a| a.id == entry.annotation_id)
                .ok_or_else(|| {
                    Error::Data(DataError::InvalidAnnotation {
                        id: entry.annotation_id.clone(),
                        detail: "annotation id missing from annotations.json".into(),
                    })
                })?;
            let seq = read_features(&dir.join(&entry.features)).map_err(Error::Data)?;
            clips.push((seq, ann.clone()));
        }
        Dataset::Segmented(SegmentedDataset {
            classes: manifest.classes.clone(),
            clips,
        })
    };
    Ok((manifest.task, dataset))
}
