//! Taught end-effector paths and their transfer into the current base frame.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{compose, Pose6D, RigidTransform};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PathError {
    #[error("sample rate must be positive, got {0}")]
    NonPositiveRate(f64),
    #[error("sample times must be non-decreasing (sample {index})")]
    TimeNotMonotonic { index: usize },
    #[error("path json: {0}")]
    Json(String),
    #[error("path i/o: {0}")]
    Io(String),
}

/// End-effector pose (arm-base frame) at `time` seconds from path start.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathSample {
    pub time: f64,
    pub pose: RigidTransform,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReferencePath {
    pub sample_rate_hz: f64,
    pub samples: Vec<PathSample>,
}

impl ReferencePath {
    pub fn validate(&self) -> Result<(), PathError> {
        if !(self.sample_rate_hz > 0.0 && self.sample_rate_hz.is_finite()) {
            return Err(PathError::NonPositiveRate(self.sample_rate_hz));
        }
        for (i, w) in self.samples.windows(2).enumerate() {
            if w[1].time < w[0].time {
                return Err(PathError::TimeNotMonotonic { index: i + 1 });
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Time of the last sample (0 for an empty path).
    pub fn duration(&self) -> f64 {
        self.samples.last().map_or(0.0, |s| s.time)
    }

    pub fn to_json(&self) -> String {
        let file = PathFile {
            sample_rate_hz: self.sample_rate_hz,
            samples: self.samples.iter().map(|s| SampleRow::new(s.time, s.pose.to_pose6d())).collect(),
        };
        serde_json::to_string_pretty(&file).expect("path is serializable")
    }

    /// Parses the JSON form; orientations round-trip through Euler angles,
    /// so poses agree with the original to about 1e-12.
    pub fn from_json(text: &str) -> Result<Self, PathError> {
        let file: PathFile = serde_json::from_str(text).map_err(|e| PathError::Json(e.to_string()))?;
        let path = Self {
            sample_rate_hz: file.sample_rate_hz,
            samples: file
                .samples
                .into_iter()
                .map(|r| PathSample { time: r.t, pose: RigidTransform::from_pose6d(&r.pose()) })
                .collect(),
        };
        path.validate()?;
        Ok(path)
    }

    pub fn save(&self, file: &Path) -> Result<(), PathError> {
        fs::write(file, self.to_json()).map_err(|e| PathError::Io(format!("{}: {e}", file.display())))
    }

    pub fn load(file: &Path) -> Result<Self, PathError> {
        let text = fs::read_to_string(file).map_err(|e| PathError::Io(format!("{}: {e}", file.display())))?;
        Self::from_json(&text)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SampleRow {
    t: f64,
    tx: f64,
    ty: f64,
    tz: f64,
    roll: f64,
    pitch: f64,
    yaw: f64,
}

impl SampleRow {
    fn new(t: f64, p: Pose6D) -> Self {
        Self { t, tx: p.tx, ty: p.ty, tz: p.tz, roll: p.roll, pitch: p.pitch, yaw: p.yaw }
    }

    fn pose(&self) -> Pose6D {
        Pose6D::new(self.tx, self.ty, self.tz, self.roll, self.pitch, self.yaw)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PathFile {
    sample_rate_hz: f64,
    samples: Vec<SampleRow>,
}

/// Timestamps sample `i` at `i / rate`.
pub fn record_path(poses: impl IntoIterator<Item = RigidTransform>, sample_rate_hz: f64) -> Result<ReferencePath, PathError> {
    if !(sample_rate_hz > 0.0 && sample_rate_hz.is_finite()) {
        return Err(PathError::NonPositiveRate(sample_rate_hz));
    }
    let samples = poses
        .into_iter()
        .enumerate()
        .map(|(i, pose)| PathSample { time: i as f64 / sample_rate_hz, pose })
        .collect();
    Ok(ReferencePath { sample_rate_hz, samples })
}

/// The pose stream to send to the arm, in order.
pub fn replay_path(path: &ReferencePath) -> Vec<RigidTransform> {
    path.samples.iter().map(|s| s.pose).collect()
}

/// Re-expresses a taught path in the current base frame: every pose is
/// left-composed with `delta_base` (positions `dR p + dt`, orientations
/// rotated by `dR`). Timing is unchanged.
pub fn adapt_path(path: &ReferencePath, delta_base: &RigidTransform) -> ReferencePath {
    ReferencePath {
        sample_rate_hz: path.sample_rate_hz,
        samples: path.samples.iter().map(|s| PathSample { time: s.time, pose: compose(delta_base, &s.pose) }).collect(),
    }
}
