use std::fs;
use std::path::PathBuf;

use mmpa_core::geometry::{PoseError, RigidTransform, RotationMatrix};
use mmpa_core::ipe::{alpha_preset, run_ipe, IpeConfig, IpeResult};
use mmpa_core::pathlearn::{adapt_path, record_path, ReferencePath};
use mmpa_core::seed::{derive_seed, derive_seed_path};
use mmpa_core::sim::{build_scene, default_teach_extrinsic, sample_parking_error, site_pose_world, ParkingNoiseProfile, WorldState};
use mmpa_core::taskstore::{teach, TaskRecord};
use serde::Serialize;

use crate::config::{alpha_id, ExperimentConfig, SceneArm, Suite};
use crate::stats::{mean, summarize, ExperimentStats, IterationPoint, TrialRecord};
use crate::HarnessError;

const WORLD_STREAM: u64 = 1;
const TEACH_STREAM: u64 = 2;
const PARK_STREAM: u64 = 3;
const IPE_STREAM: u64 = 4;

/// Where the needle tip touches the table in the taught path (base frame).
const NEEDLE_TARGET: [f64; 3] = [0.62, 0.03, 0.0];

#[derive(Debug, Clone, Serialize)]
pub struct ArmOutput {
    pub stats: ExperimentStats,
    #[serde(skip)]
    pub rows: Vec<TrialRecord>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ExperimentOutput {
    pub name: String,
    pub arms: Vec<ArmOutput>,
}

impl ExperimentOutput {
    pub fn rows(&self) -> impl Iterator<Item = &TrialRecord> {
        self.arms.iter().flat_map(|a| a.rows.iter())
    }

    pub fn arm(&self, label: &str) -> Option<&ArmOutput> {
        self.arms.iter().find(|a| a.stats.label == label)
    }
}

/// Taught end-effector path ending with the needle tip on `NEEDLE_TARGET`,
/// tool z axis pointing down.
pub fn needle_path(tip_offset_m: f64) -> ReferencePath {
    let n = 40;
    let start = [0.45, -0.1, 0.35];
    let end = [NEEDLE_TARGET[0], NEEDLE_TARGET[1], NEEDLE_TARGET[2] + tip_offset_m];
    let poses = (0..n).map(|i| {
        let s = i as f64 / (n - 1) as f64;
        let p: Vec<f64> = (0..3).map(|k| start[k] + (end[k] - start[k]) * s).collect();
        let r = RotationMatrix::rot_z(20.0 * (1.0 - s)).mul(&RotationMatrix::rot_x(180.0));
        RigidTransform::new(r, [p[0], p[1], p[2]].into())
    });
    record_path(poses, 10.0).expect("positive rate")
}

fn tip_position(base_world: &RigidTransform, ee_in_base: &RigidTransform, tip_offset_m: f64) -> RigidTransform {
    base_world.compose(ee_in_base).compose(&RigidTransform::from_translation(0.0, 0.0, tip_offset_m))
}

/// Simulated world at the configured site plus the task taught there.
pub struct Setup {
    pub world: WorldState,
    pub record: TaskRecord,
}

pub fn setup(cfg: &ExperimentConfig, scene: &str, tip_offset_m: f64) -> Result<Setup, HarnessError> {
    let site = site_pose_world(&cfg.site_profile)?;
    let world = WorldState::new(build_scene(scene)?, site, cfg.camera.clone(), derive_seed(cfg.seed, WORLD_STREAM))?;
    let record = teach(
        &world,
        &default_teach_extrinsic(),
        needle_path(tip_offset_m),
        &format!("{}_{scene}", cfg.name),
        cfg.ipe.workspace_radius,
        derive_seed(cfg.seed, TEACH_STREAM),
    )?;
    Ok(Setup { world, record })
}

/// What a trial measures besides the pose error.
enum Mode {
    Ipe,
    Path { tip_offset_m: f64, exact: bool },
}

struct TrialOutcome {
    row: TrialRecord,
    result: Option<IpeResult>,
    ground_truth: RigidTransform,
}

fn run_trial(
    cfg: &ExperimentConfig,
    setup: &Setup,
    ipe: &IpeConfig,
    scene_label: &str,
    trial: usize,
    mode: &Mode,
) -> Result<TrialOutcome, HarnessError> {
    let profile = ParkingNoiseProfile::by_name(&cfg.site_profile)?;
    let error = sample_parking_error(&profile, derive_seed_path(cfg.seed, &[PARK_STREAM, trial as u64]));
    let mut world = setup.world.clone().apply_parking(&error);
    let gt = world.ground_truth_delta_base();
    let (success, iterations, estimate, result) = match mode {
        Mode::Path { exact: true, .. } => (true, 0, gt, None),
        _ => {
            let r = run_ipe(
                &setup.record.reference_cloud,
                &setup.record.extrinsic_teach,
                &mut world,
                ipe,
                derive_seed_path(cfg.seed, &[IPE_STREAM, trial as u64]),
            )?;
            (r.flag, r.iterations.len(), r.delta_base_final, Some(r))
        }
    };
    let err = PoseError::between(&gt, &estimate);
    let tip_err_mm = match mode {
        Mode::Ipe => None,
        Mode::Path { tip_offset_m, .. } => {
            let taught = setup.record.reference_path.samples.last().expect("needle path is non-empty").pose;
            let adapted = adapt_path(&setup.record.reference_path, &estimate);
            let executed = adapted.samples.last().expect("same length").pose;
            let want = tip_position(&setup.world.true_base_pose_world, &taught, *tip_offset_m);
            let got = tip_position(&world.true_base_pose_world, &executed, *tip_offset_m);
            Some((want.translation - got.translation).norm() * 1000.0)
        }
    };
    let reg_time_s = match &result {
        Some(r) if cfg.record_timing => mean(&r.iterations.iter().map(|t| t.wall_time).collect::<Vec<_>>()),
        _ => None,
    };
    let row = TrialRecord {
        trial,
        site: cfg.site_profile.clone(),
        scene: scene_label.to_string(),
        alpha_id: alpha_id(&ipe.alpha),
        beta: ipe.beta,
        success,
        iterations,
        e_rot: err.e_rot,
        e_trans_m: err.e_trans,
        tip_err_mm,
        reg_time_s,
    };
    Ok(TrialOutcome { row, result, ground_truth: gt })
}

fn run_arm(
    cfg: &ExperimentConfig,
    setup: &Setup,
    ipe: &IpeConfig,
    label: &str,
    scene_label: &str,
    mode: &Mode,
) -> Result<ArmOutput, HarnessError> {
    let mut outcomes = Vec::with_capacity(cfg.trials);
    for trial in 0..cfg.trials {
        outcomes.push(run_trial(cfg, setup, ipe, scene_label, trial, mode)?);
    }
    let rows: Vec<TrialRecord> = outcomes.iter().map(|o| o.row.clone()).collect();
    let mut stats = summarize(label, &rows);

    // Per-iteration errors of the estimate from converged registrations.
    let mut per_k: Vec<(Vec<f64>, Vec<f64>)> = Vec::new();
    let (mut first_rot, mut first_trans) = (Vec::new(), Vec::new());
    for o in &outcomes {
        let Some(r) = &o.result else { continue };
        for it in r.iterations.iter().filter(|it| it.registration_converged) {
            let e = PoseError::between(&o.ground_truth, &it.delta_base);
            if per_k.len() < it.k {
                per_k.resize(it.k, (Vec::new(), Vec::new()));
            }
            per_k[it.k - 1].0.push(e.e_rot);
            per_k[it.k - 1].1.push(e.e_trans);
        }
        if o.row.success {
            if let Some(first) = r.iterations.iter().find(|it| it.registration_converged) {
                let e = PoseError::between(&o.ground_truth, &first.delta_base);
                first_rot.push(e.e_rot);
                first_trans.push(e.e_trans);
            }
        }
    }
    stats.per_iteration = per_k
        .iter()
        .enumerate()
        .filter(|(_, (r, _))| !r.is_empty())
        .map(|(i, (r, t))| IterationPoint {
            k: i + 1,
            count: r.len(),
            mean_e_rot: mean(r).unwrap_or(0.0),
            mean_e_trans_m: mean(t).unwrap_or(0.0),
        })
        .collect();
    stats.mean_first_e_rot = mean(&first_rot);
    stats.mean_first_e_trans_m = mean(&first_trans);
    Ok(ArmOutput { stats, rows })
}

pub fn run_ipe_experiment(cfg: &ExperimentConfig) -> Result<ArmOutput, HarnessError> {
    cfg.validate()?;
    let s = setup(cfg, &cfg.scene, 0.0)?;
    run_arm(cfg, &s, &cfg.ipe, &cfg.name, &cfg.scene, &Mode::Ipe)
}

/// One arm per α preset on shared per-trial seeds.
pub fn run_alpha_ablation(cfg: &ExperimentConfig, alphas: &[usize]) -> Result<Vec<ArmOutput>, HarnessError> {
    cfg.validate()?;
    let s = setup(cfg, &cfg.scene, 0.0)?;
    alphas
        .iter()
        .map(|&i| {
            let alpha = alpha_preset(i).ok_or_else(|| HarnessError::Config(format!("no alpha preset {i}")))?;
            let ipe = IpeConfig { alpha, ..cfg.ipe.clone() };
            run_arm(cfg, &s, &ipe, &format!("a{i}"), &cfg.scene, &Mode::Ipe)
        })
        .collect()
}

pub fn run_beta_ablation(cfg: &ExperimentConfig, betas: &[usize]) -> Result<Vec<ArmOutput>, HarnessError> {
    cfg.validate()?;
    let s = setup(cfg, &cfg.scene, 0.0)?;
    betas
        .iter()
        .map(|&beta| {
            let ipe = IpeConfig { beta, ..cfg.ipe.clone() };
            run_arm(cfg, &s, &ipe, &format!("beta{beta}"), &cfg.scene, &Mode::Ipe)
        })
        .collect()
}

/// The `scene` column carries the arm label (A0..B3).
pub fn run_scene_ablation(cfg: &ExperimentConfig, arms: &[SceneArm]) -> Result<Vec<ArmOutput>, HarnessError> {
    cfg.validate()?;
    arms.iter()
        .map(|arm| {
            let s = setup(cfg, &arm.scene, 0.0)?;
            let mut ipe = cfg.ipe.clone();
            ipe.registration.use_color = arm.use_color;
            run_arm(cfg, &s, &ipe, &arm.label, &arm.label, &Mode::Ipe)
        })
        .collect()
}

pub fn run_path_accuracy(cfg: &ExperimentConfig, tip_offset_m: f64, exact: bool) -> Result<ArmOutput, HarnessError> {
    cfg.validate()?;
    let s = setup(cfg, &cfg.scene, tip_offset_m)?;
    run_arm(cfg, &s, &cfg.ipe, &cfg.name, &cfg.scene, &Mode::Path { tip_offset_m, exact })
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutput, HarnessError> {
    let arms = match &cfg.suite {
        Suite::Ipe => vec![run_ipe_experiment(cfg)?],
        Suite::AlphaAblation { alphas } => run_alpha_ablation(cfg, alphas)?,
        Suite::BetaAblation { betas } => run_beta_ablation(cfg, betas)?,
        Suite::SceneAblation { arms } => run_scene_ablation(cfg, arms)?,
        Suite::PathAccuracy { tip_offset_m, exact } => vec![run_path_accuracy(cfg, *tip_offset_m, *exact)?],
    };
    Ok(ExperimentOutput { name: cfg.name.clone(), arms })
}

pub fn csv_string(rows: impl IntoIterator<Item = TrialRecord>) -> Result<String, HarnessError> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    w.write_record(crate::stats::CSV_COLUMNS).map_err(|e| HarnessError::Csv(e.to_string()))?;
    for r in rows {
        w.serialize(r).map_err(|e| HarnessError::Csv(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| HarnessError::Csv(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// Writes `<name>.csv` (one row per trial and arm) and `<name>.json`
/// (config and per-arm statistics) into the output directory.
pub fn write_outputs(cfg: &ExperimentConfig, out: &ExperimentOutput) -> Result<(PathBuf, PathBuf), HarnessError> {
    fs::create_dir_all(&cfg.output_dir).map_err(|e| HarnessError::io(&cfg.output_dir, e))?;
    let csv_path = cfg.output_dir.join(format!("{}.csv", cfg.name));
    let json_path = cfg.output_dir.join(format!("{}.json", cfg.name));
    fs::write(&csv_path, csv_string(out.rows().cloned())?).map_err(|e| HarnessError::io(&csv_path, e))?;
    #[derive(Serialize)]
    struct Summary<'a> {
        config: &'a ExperimentConfig,
        arms: Vec<&'a ExperimentStats>,
    }
    let summary = Summary { config: cfg, arms: out.arms.iter().map(|a| &a.stats).collect() };
    let json = serde_json::to_string_pretty(&summary).expect("stats are serializable");
    fs::write(&json_path, json).map_err(|e| HarnessError::io(&json_path, e))?;
    Ok((csv_path, json_path))
}
