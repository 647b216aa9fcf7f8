//! Feature-file format, annotation schemas and synthetic planted-motif data.
//!
//! Feature sequences are stored in the "TSKF" binary layout: magic (4
//! bytes), format version u32, T u32, D u32, fps f32, then T·D f32 values
//! row-major, all little-endian. Values are f32 on disk and f64 in memory.
//!
//! The synthetic generators plant class-specific motifs (a fixed unit
//! direction per class, scaled by an amplitude) over hidden sub-intervals of
//! a noise background. Every generator is a pure function of (spec, index):
//! per-clip RNG seeds are derived by splitmix-style mixing of the master
//! seed with the clip index, so datasets are stable under partial
//! regeneration.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const FEATURE_MAGIC: &[u8; 4] = b"TSKF";
pub const FEATURE_VERSION: u32 = 1;

pub const NO_ACTIVITY: &str = "no_activity";
pub const BASEBALL_ACTIVITY_CLASSES: [&str; 8] = [
    "ball",
    "strike",
    "swing",
    "hit",
    "foul",
    "in_play",
    "bunt",
    "hit_by_pitch",
];
pub const PITCH_TYPES: [&str; 6] = [
    "fastball",
    "sinker",
    "curveball",
    "changeup",
    "slider",
    "knuckle_curve",
];

#[derive(Debug, Error)]
pub enum DataError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad magic: expected \"TSKF\", found {0:?}")]
    BadMagic([u8; 4]),
    #[error("unsupported feature-file version {0}")]
    UnsupportedVersion(u32),
    #[error("truncated file: expected {expected} more bytes for {what}")]
    Truncated { what: &'static str, expected: usize },
    #[error("invalid header: {0}")]
    InvalidHeader(String),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("unknown label '{label}' in annotation '{id}'")]
    UnknownLabel { id: String, label: String },
    #[error("annotation '{0}': pitch type/speed present without a pitch label")]
    PitchWithoutLabel(String),
    #[error("annotation '{id}': {detail}")]
    InvalidAnnotation { id: String, detail: String },
    #[error("{0}")]
    Capacity(String),
}

pub type Result<T> = std::result::Result<T, DataError>;

/// A T×D sequence of per-frame (or per-segment) features.
#[derive(Debug, Clone)]
pub struct FeatureSequence {
    pub t: usize,
    pub d: usize,
    pub fps: f32,
    /// Row-major T×D values.
    pub values: Vec<f64>,
    pub source_id: String,
}

impl FeatureSequence {
    pub fn new(t: usize, d: usize, fps: f32, values: Vec<f64>, source_id: String) -> Result<Self> {
        if t == 0 || d == 0 {
            return Err(DataError::InvalidHeader(format!(
                "T and D must be positive, got T={t}, D={d}"
            )));
        }
        if values.len() != t * d {
            return Err(DataError::InvalidHeader(format!(
                "value count {} does not match T*D = {}",
                values.len(),
                t * d
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(DataError::InvalidHeader("non-finite feature value".into()));
        }
        Ok(Self {
            t,
            d,
            fps,
            values,
            source_id,
        })
    }
}

pub fn write_features(path: &Path, seq: &FeatureSequence) -> Result<()> {
    let mut buf = Vec::with_capacity(20 + seq.values.len() * 4);
    buf.extend_from_slice(FEATURE_MAGIC);
    buf.extend_from_slice(&FEATURE_VERSION.to_le_bytes());
    buf.extend_from_slice(&(seq.t as u32).to_le_bytes());
    buf.extend_from_slice(&(seq.d as u32).to_le_bytes());
    buf.extend_from_slice(&seq.fps.to_le_bytes());
    for v in &seq.values {
        buf.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    let mut file = fs::File::create(path)?;
    file.write_all(&buf)?;
    Ok(())
}

pub fn read_features(path: &Path) -> Result<FeatureSequence> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    if bytes.len() < 20 {
        return Err(DataError::Truncated {
            what: "header",
            expected: 20 - bytes.len(),
        });
    }
    let magic: [u8; 4] = bytes[0..4].try_into().unwrap();
    if &magic != FEATURE_MAGIC {
        return Err(DataError::BadMagic(magic));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != FEATURE_VERSION {
        return Err(DataError::UnsupportedVersion(version));
    }
    let t = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let d = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    let fps = f32::from_le_bytes(bytes[16..20].try_into().unwrap());
    if t == 0 || d == 0 {
        return Err(DataError::InvalidHeader(format!("T={t}, D={d}")));
    }
    let need = t * d * 4;
    if bytes.len() < 20 + need {
        return Err(DataError::Truncated {
            what: "values",
            expected: 20 + need - bytes.len(),
        });
    }
    let values = bytes[20..20 + need]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    let source_id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    FeatureSequence::new(t, d, fps, values, source_id)
}

/// Multi-hot clip labels, with optional pitch metadata.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SegmentedAnnotation {
    pub id: String,
    pub labels: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pitch_type: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pitch_speed: Option<f64>,
}

impl SegmentedAnnotation {
    /// Multi-hot vector over `classes`; unknown labels are ignored here
    /// (they are rejected at parse time).
    pub fn multi_hot(&self, classes: &[String]) -> Vec<f64> {
        classes
            .iter()
            .map(|c| f64::from(self.labels.iter().any(|l| l == c)))
            .collect()
    }

    fn validate(&self, classes: &[String]) -> Result<()> {
        for label in &self.labels {
            if label != NO_ACTIVITY && !classes.iter().any(|c| c == label) {
                return Err(DataError::UnknownLabel {
                    id: self.id.clone(),
                    label: label.clone(),
                });
            }
        }
        let has_pitch_label = self.labels.iter().any(|l| l != NO_ACTIVITY);
        if (self.pitch_type.is_some() || self.pitch_speed.is_some()) && !has_pitch_label {
            return Err(DataError::PitchWithoutLabel(self.id.clone()));
        }
        if let Some(pt) = &self.pitch_type {
            if !PITCH_TYPES.contains(&pt.as_str()) {
                return Err(DataError::UnknownLabel {
                    id: self.id.clone(),
                    label: pt.clone(),
                });
            }
        }
        Ok(())
    }
}

/// Parse and validate a JSON array of segmented annotation records.
pub fn parse_segmented_annotations(text: &str, classes: &[String]) -> Result<Vec<SegmentedAnnotation>> {
    let records: Vec<SegmentedAnnotation> = serde_json::from_str(text)?;
    for rec in &records {
        rec.validate(classes)?;
    }
    Ok(records)
}

/// A labeled interval within a continuous video, frame-inclusive.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq)]
pub struct Interval {
    pub class: usize,
    pub start: usize,
    pub end: usize,
}

/// Per-frame labels for one continuous video, stored as intervals.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ContinuousAnnotation {
    pub video_id: String,
    pub t: usize,
    pub intervals: Vec<Interval>,
}

impl ContinuousAnnotation {
    pub fn validate(&self, c: usize) -> Result<()> {
        for iv in &self.intervals {
            if iv.start > iv.end || iv.end >= self.t || iv.class >= c {
                return Err(DataError::InvalidAnnotation {
                    id: self.video_id.clone(),
                    detail: format!(
                        "interval class={} [{}, {}] out of range for T={}, C={}",
                        iv.class, iv.start, iv.end, self.t, c
                    ),
                });
            }
        }
        Ok(())
    }

    /// Derived T×C binary matrix, row-major.
    pub fn frame_matrix(&self, c: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.t * c];
        for iv in &self.intervals {
            for t in iv.start..=iv.end {
                out[t * c + iv.class] = 1.0;
            }
        }
        out
    }
}

/// Knobs of the planted-motif generators.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub c: usize,
    pub d: usize,
    pub t_range: (usize, usize),
    pub motif_len_range: (usize, usize),
    pub motif_amplitude: f64,
    pub noise_scale: f64,
    pub multi_label_prob: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn new(c: usize, d: usize, seed: u64) -> Self {
        Self {
            c,
            d,
            t_range: (40, 80),
            motif_len_range: (8, 16),
            motif_amplitude: 2.0,
            noise_scale: 1.0,
            multi_label_prob: 0.3,
            seed,
        }
    }

    pub fn class_names(&self) -> Vec<String> {
        (0..self.c).map(|k| format!("c{k}")).collect()
    }

    /// Fixed sparse unit direction in feature space for class `k`, a pure
    /// function of (seed, k). Evidence concentrates in a handful of channels
    /// (like real detector activations), so per-channel peaks are visible
    /// above the noise floor rather than diluted across all of D.
    pub fn class_direction(&self, k: usize) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(self.seed ^ 0x6d6f7469, k as u64));
        let active = (self.d / 8).clamp(2.min(self.d), self.d);
        let mut channels: Vec<usize> = (0..self.d).collect();
        for i in 0..active {
            let j = rng.gen_range(i..self.d);
            channels.swap(i, j);
        }
        let mut dir = vec![0.0; self.d];
        for &ch in &channels[..active] {
            dir[ch] = normal(&mut rng);
        }
        let norm = dir.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
        for x in &mut dir {
            *x /= norm;
        }
        dir
    }
}

/// splitmix64 finalizer over (master seed, index).
pub fn mix_seed(master: u64, index: u64) -> u64 {
    let mut z = master
        .wrapping_add(0x9e3779b97f4a7c15)
        .wrapping_add(index.wrapping_mul(0xbf58476d1ce4e5b9));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

fn normal<R: Rng>(rng: &mut R) -> f64 {
    // Box-Muller
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// One generated segmented clip; `planted` records the hidden motif
/// intervals for oracle checks.
#[derive(Debug, Clone)]
pub struct SegmentedClip {
    pub features: FeatureSequence,
    pub annotation: SegmentedAnnotation,
    pub planted: Vec<Interval>,
}

pub fn generate_synthetic_segmented(spec: &SyntheticSpec, n: usize) -> Vec<SegmentedClip> {
    (0..n)
        .map(|idx| {
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(spec.seed, idx as u64));
            let t = rng.gen_range(spec.t_range.0..=spec.t_range.1);
            let mut values: Vec<f64> = (0..t * spec.d)
                .map(|_| spec.noise_scale * normal(&mut rng))
                .collect();
            let mut labels = Vec::new();
            let mut planted = Vec::new();
            for k in 0..spec.c {
                if rng.gen_range(0.0..1.0) >= spec.multi_label_prob {
                    continue;
                }
                let iv = plant_motif(spec, k, t, &mut values, &mut rng);
                planted.push(iv);
                labels.push(format!("c{k}"));
            }
            if labels.is_empty() {
                labels.push(NO_ACTIVITY.to_string());
            }
            let id = format!("clip_{idx:05}");
            SegmentedClip {
                features: FeatureSequence::new(t, spec.d, 8.0, values, id.clone())
                    .expect("generated features are valid"),
                annotation: SegmentedAnnotation {
                    id,
                    labels,
                    pitch_type: None,
                    pitch_speed: None,
                },
                planted,
            }
        })
        .collect()
}

fn plant_motif<R: Rng>(
    spec: &SyntheticSpec,
    class: usize,
    t: usize,
    values: &mut [f64],
    rng: &mut R,
) -> Interval {
    let max_len = spec.motif_len_range.1.min(t);
    let min_len = spec.motif_len_range.0.min(max_len);
    let len = rng.gen_range(min_len..=max_len).max(1);
    // each class keeps a preferred relative position (a pure function of the
    // seed) with per-clip jitter: class evidence is temporally localized the
    // way aligned clips are, which is what interval-pooling heads exploit
    let mut arng = ChaCha8Rng::seed_from_u64(mix_seed(spec.seed ^ 0x616e_6368, class as u64));
    let anchor: f64 = arng.gen_range(0.2..0.8);
    let jitter: f64 = rng.gen_range(-0.08..0.08);
    let center = (anchor + jitter) * t as f64;
    let start = (center - len as f64 / 2.0)
        .round()
        .clamp(0.0, (t - len) as f64) as usize;
    let dir = spec.class_direction(class);
    for ti in start..start + len {
        for (j, dv) in dir.iter().enumerate() {
            values[ti * spec.d + j] += spec.motif_amplitude * dv;
        }
    }
    Interval {
        class,
        start,
        end: start + len - 1,
    }
}

/// Balanced single-label clips for the pitch-type task: each clip plants
/// exactly one motif and carries the pitch type as both label and metadata.
pub fn generate_synthetic_pitch_type(spec: &SyntheticSpec, n: usize) -> Vec<SegmentedClip> {
    assert!(spec.c <= PITCH_TYPES.len(), "at most 6 pitch types");
    (0..n)
        .map(|idx| {
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(spec.seed, idx as u64));
            let t = rng.gen_range(spec.t_range.0..=spec.t_range.1);
            let mut values: Vec<f64> = (0..t * spec.d)
                .map(|_| spec.noise_scale * normal(&mut rng))
                .collect();
            let class = idx % spec.c;
            let iv = plant_motif(spec, class, t, &mut values, &mut rng);
            let id = format!("clip_{idx:05}");
            SegmentedClip {
                features: FeatureSequence::new(t, spec.d, 8.0, values, id.clone())
                    .expect("generated features are valid"),
                annotation: SegmentedAnnotation {
                    id,
                    labels: vec![PITCH_TYPES[class].to_string()],
                    pitch_type: Some(PITCH_TYPES[class].to_string()),
                    pitch_speed: None,
                },
                planted: vec![iv],
            }
        })
        .collect()
}

pub fn generate_synthetic_continuous(
    spec: &SyntheticSpec,
    n: usize,
    events_per_video: usize,
) -> Result<Vec<(FeatureSequence, ContinuousAnnotation)>> {
    (0..n)
        .map(|idx| {
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(spec.seed, idx as u64));
            let t = rng.gen_range(spec.t_range.0..=spec.t_range.1);
            let lens: Vec<usize> = (0..events_per_video)
                .map(|_| rng.gen_range(spec.motif_len_range.0..=spec.motif_len_range.1))
                .collect();
            let used: usize = lens.iter().sum();
            if used > t {
                return Err(DataError::Capacity(format!(
                    "{events_per_video} events of total length {used} exceed T={t}"
                )));
            }
            // distribute the slack over events+1 gaps
            let mut gaps = vec![0usize; events_per_video + 1];
            for _ in 0..t - used {
                let g = rng.gen_range(0..gaps.len());
                gaps[g] += 1;
            }
            let mut values: Vec<f64> = (0..t * spec.d)
                .map(|_| spec.noise_scale * normal(&mut rng))
                .collect();
            let mut intervals = Vec::new();
            let mut cursor = 0;
            for (e, &len) in lens.iter().enumerate() {
                cursor += gaps[e];
                let class = rng.gen_range(0..spec.c);
                let dir = spec.class_direction(class);
                for ti in cursor..cursor + len {
                    for (j, dv) in dir.iter().enumerate() {
                        values[ti * spec.d + j] += spec.motif_amplitude * dv;
                    }
                }
                intervals.push(Interval {
                    class,
                    start: cursor,
                    end: cursor + len - 1,
                });
                cursor += len;
            }
            let id = format!("video_{idx:05}");
            let features = FeatureSequence::new(t, spec.d, 8.0, values, id.clone())
                .expect("generated features are valid");
            Ok((
                features,
                ContinuousAnnotation {
                    video_id: id,
                    t,
                    intervals,
                },
            ))
        })
        .collect()
}

pub const SPEED_FPS: f32 = 60.0;
/// Seconds of flight scaled into the duration formula. The generator uses a
/// value large enough that the integer frame count resolves the mph range
/// finely (a duration-measuring oracle then lands well under 2 mph MAE).
pub const SPEED_K: f64 = 20.0;
pub const SPEED_RANGE: (f64, f64) = (70.0, 100.0);

/// Motif duration in frames for a pitch speed: round(fps * k / mph).
pub fn duration_frames(fps: f64, k: f64, mph: f64) -> usize {
    (fps * k / mph).round() as usize
}

/// Motif duration in frames for a pitch speed, at the speed task's fps.
pub fn speed_duration(mph: f64) -> usize {
    duration_frames(SPEED_FPS as f64, SPEED_K, mph)
}

/// One generated speed-regression clip.
#[derive(Debug, Clone)]
pub struct SpeedClip {
    pub features: FeatureSequence,
    pub mph: f64,
    pub planted: Interval,
}

/// Clips whose single motif has duration inversely proportional to a target
/// speed drawn uniform in [70, 100] mph; the speed is learnable from the
/// motif's temporal extent alone.
pub fn generate_synthetic_speed(spec: &SyntheticSpec, n: usize) -> Vec<SpeedClip> {
    (0..n)
        .map(|idx| {
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(spec.seed, idx as u64));
            // fixed length per dataset; floor leaves room for the longest motif
            let t = spec.t_range.0.max(24);
            let mph = rng.gen_range(SPEED_RANGE.0..SPEED_RANGE.1);
            let len = speed_duration(mph).clamp(1, t);
            let start = rng.gen_range(0..=t - len);
            let mut values: Vec<f64> = (0..t * spec.d)
                .map(|_| spec.noise_scale * normal(&mut rng))
                .collect();
            let dir = spec.class_direction(0);
            for ti in start..start + len {
                for (j, dv) in dir.iter().enumerate() {
                    values[ti * spec.d + j] += spec.motif_amplitude * dv;
                }
            }
            let id = format!("pitch_{idx:05}");
            SpeedClip {
                features: FeatureSequence::new(t, spec.d, SPEED_FPS, values, id)
                    .expect("generated features are valid"),
                mph,
                planted: Interval {
                    class: 0,
                    start,
                    end: start + len - 1,
                },
            }
        })
        .collect()
}
