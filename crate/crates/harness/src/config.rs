use std::path::{Path, PathBuf};

use mmpa_core::ipe::{alpha_preset, IpeConfig};
use mmpa_core::sim::{build_scene, CameraModel, ParkingNoiseProfile};
use serde::{Deserialize, Serialize};

use crate::HarnessError;

/// One arm of a scene ablation; `use_color = false` strips color and swaps
/// the local stage for point-to-point ICP.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneArm {
    pub label: String,
    pub scene: String,
    pub use_color: bool,
}

/// The eight arms A0..B3: A0 and B0 are the geometry-only runs on A1 and B1.
pub fn default_scene_arms() -> Vec<SceneArm> {
    let arm = |label: &str, scene: &str, use_color| SceneArm { label: label.into(), scene: scene.into(), use_color };
    vec![
        arm("A0", "A1", false),
        arm("A1", "A1", true),
        arm("A2", "A2", true),
        arm("A3", "A3", true),
        arm("B0", "B1", false),
        arm("B1", "B1", true),
        arm("B2", "B2", true),
        arm("B3", "B3", true),
    ]
}

fn default_tip_offset() -> f64 {
    0.15
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Suite {
    /// Plain IPE runs with the configured thresholds.
    Ipe,
    /// One arm per preset index (1..=5), loosest last.
    AlphaAblation { alphas: Vec<usize> },
    BetaAblation { betas: Vec<usize> },
    SceneAblation {
        #[serde(default = "default_scene_arms")]
        arms: Vec<SceneArm>,
    },
    /// Park, estimate, adapt the taught needle path and measure the tip.
    /// With `exact` the ground-truth relative base pose is injected.
    PathAccuracy {
        #[serde(default = "default_tip_offset")]
        tip_offset_m: f64,
        #[serde(default)]
        exact: bool,
    },
}

impl Default for Suite {
    fn default() -> Self {
        Suite::Ipe
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Base name of the output files.
    pub name: String,
    pub site_profile: String,
    pub scene: String,
    pub trials: usize,
    pub ipe: IpeConfig,
    pub seed: u64,
    pub output_dir: PathBuf,
    pub camera: CameraModel,
    pub suite: Suite,
    /// Fill the `reg_time_s` column. Off by default so reruns are
    /// byte-identical.
    pub record_timing: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            name: "ipe".into(),
            site_profile: "site1".into(),
            scene: "rich_default".into(),
            trials: 30,
            ipe: IpeConfig::default(),
            seed: 1,
            output_dir: PathBuf::from("out"),
            camera: CameraModel::default(),
            suite: Suite::Ipe,
            record_timing: false,
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        let cfg: Self = serde_json::from_str(&text).map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::Config(m));
        if self.trials < 1 {
            return bad("trials must be at least 1".into());
        }
        if self.name.is_empty() || !self.name.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '-')) {
            return bad(format!("name `{}` must be non-empty and use [A-Za-z0-9_-]", self.name));
        }
        ParkingNoiseProfile::by_name(&self.site_profile)?;
        self.camera.validate()?;
        self.ipe.validate()?;
        let scenes: Vec<&str> = match &self.suite {
            Suite::SceneAblation { arms } => {
                if arms.is_empty() {
                    return bad("scene ablation needs at least one arm".into());
                }
                arms.iter().map(|a| a.scene.as_str()).collect()
            }
            _ => vec![self.scene.as_str()],
        };
        for s in scenes {
            build_scene(s)?;
        }
        match &self.suite {
            Suite::AlphaAblation { alphas } => {
                if alphas.is_empty() || alphas.iter().any(|&i| alpha_preset(i).is_none()) {
                    return bad(format!("alphas must be non-empty preset indices in 1..=5, got {alphas:?}"));
                }
            }
            Suite::BetaAblation { betas } => {
                if betas.is_empty() || betas.contains(&0) {
                    return bad(format!("betas must be non-empty and positive, got {betas:?}"));
                }
            }
            Suite::PathAccuracy { tip_offset_m, .. } => {
                if !tip_offset_m.is_finite() {
                    return bad("tip offset must be finite".into());
                }
            }
            Suite::Ipe | Suite::SceneAblation { .. } => {}
        }
        Ok(())
    }
}

/// `a1`..`a5` for the presets, `custom` otherwise.
pub fn alpha_id(alpha: &mmpa_core::geometry::Pose6D) -> String {
    (1..=5)
        .find(|&i| alpha_preset(i).as_ref() == Some(alpha))
        .map_or_else(|| "custom".to_string(), |i| format!("a{i}"))
}
