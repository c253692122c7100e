use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use mmpa_core::geometry::{PoseError, Pose6D, RigidTransform};
use mmpa_core::ipe::{alpha_preset, run_ipe, IpeConfig};
use mmpa_core::seed::derive_seed;
use mmpa_core::sim::{build_scene, default_teach_extrinsic, sample_parking_error, site_pose_world, CameraModel, ParkingNoiseProfile, WorldState};
use mmpa_core::taskstore::{load_task, save_task, teach};
use mmpa_harness::experiment::needle_path;
use mmpa_harness::{report, run_experiment, write_outputs, ExperimentConfig};

#[derive(Parser)]
#[command(name = "mmpa", version, about = "Teach-and-repeat with iterative eye-in-hand pose estimation, in simulation")]
struct Cli {
    /// Overrides every seed (also read from MMPA_SEED).
    #[arg(long, global = true, env = "MMPA_SEED")]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render the reference cloud at a site and store the task.
    Teach {
        #[arg(long)]
        scene: String,
        #[arg(long)]
        task: String,
        #[arg(long, default_value = "site1")]
        site: String,
        #[arg(long, default_value = "tasks")]
        store: PathBuf,
        /// Needle length used for the taught path, meters.
        #[arg(long, default_value_t = 0.15)]
        tip_offset: f64,
    },
    /// Park with a sampled error and run IPE against a stored task.
    Ipe {
        #[arg(long)]
        task: String,
        #[arg(long)]
        profile: String,
        /// Scene the task was taught on.
        #[arg(long, default_value = "rich_default")]
        scene: String,
        #[arg(long, default_value = "tasks")]
        store: PathBuf,
        /// Preset index 1..=5, or `meters,degrees` for all components.
        #[arg(long, default_value = "3")]
        alpha: String,
        #[arg(long, default_value_t = 5)]
        beta: usize,
        /// Write the full iteration trace as JSON.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Run an experiment suite from a JSON config.
    Experiment {
        #[arg(long)]
        config: PathBuf,
    },
    /// Summarize the CSVs in a directory into report.md.
    Report {
        #[arg(long)]
        dir: PathBuf,
    },
}

fn parse_alpha(s: &str) -> Result<Pose6D> {
    if let Ok(i) = s.parse::<usize>() {
        return alpha_preset(i).with_context(|| format!("alpha preset must be 1..=5, got {i}"));
    }
    let parts: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .with_context(|| format!("cannot parse alpha `{s}`"))?;
    match parts[..] {
        [t, r] => Ok(Pose6D::new(t, t, t, r, r, r)),
        _ => bail!("alpha must be a preset index or `meters,degrees`"),
    }
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let seed = cli.seed.unwrap_or(1);
    match cli.command {
        Command::Teach { scene, task, site, store, tip_offset } => {
            let world = WorldState::new(build_scene(&scene)?, site_pose_world(&site)?, CameraModel::default(), derive_seed(seed, 1))?;
            let record = teach(&world, &default_teach_extrinsic(), needle_path(tip_offset), &task, 0.8, derive_seed(seed, 2))?;
            let dir = save_task(&record, &store)?;
            println!("taught `{task}` on {scene} at {site}: {} points -> {}", record.reference_cloud.len(), dir.display());
        }
        Command::Ipe { task, profile, scene, store, alpha, beta, trace } => {
            let record = load_task(&task, &store).with_context(|| format!("loading task `{task}`"))?;
            let site = RigidTransform::from_pose6d(&record.parking_location);
            let world = WorldState::new(build_scene(&scene)?, site, CameraModel::default(), derive_seed(seed, 1))?;
            let error = sample_parking_error(&ParkingNoiseProfile::by_name(&profile)?, derive_seed(seed, 3));
            let mut world = world.apply_parking(&error);
            let config = IpeConfig { alpha: parse_alpha(&alpha)?, beta, ..Default::default() };
            let result = run_ipe(&record.reference_cloud, &record.extrinsic_teach, &mut world, &config, derive_seed(seed, 4))?;
            let err = PoseError::between(&world.ground_truth_delta_base(), &result.delta_base_final);
            println!(
                "flag={} iterations={} failure={:?} e_rot={:.6} e_trans_m={:.6}",
                result.flag,
                result.iterations.len(),
                result.failure_reason,
                err.e_rot,
                err.e_trans
            );
            if let Some(path) = trace {
                std::fs::write(&path, result.to_json()).with_context(|| format!("writing {}", path.display()))?;
            }
        }
        Command::Experiment { config } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            if let Some(s) = cli.seed {
                cfg.seed = s;
            }
            let out = run_experiment(&cfg)?;
            let (csv, json) = write_outputs(&cfg, &out)?;
            for arm in &out.arms {
                let s = &arm.stats;
                println!(
                    "{:<12} suc={:.4} L={} E_R={} E_t={}",
                    s.label,
                    s.suc,
                    s.mean_iterations.map_or("n/a".into(), |v| format!("{v:.4}")),
                    s.mean_e_rot.map_or("n/a".into(), |v| format!("{v:.6}")),
                    s.mean_e_trans_m.map_or("n/a".into(), |v| format!("{v:.6}")),
                );
            }
            println!("wrote {} and {}", csv.display(), json.display());
        }
        Command::Report { dir } => {
            let path = report::write_report(&dir)?;
            println!("wrote {}", path.display());
        }
    }
    Ok(())
}
