//! End-to-end acceptance suite. Runs without the libtest harness so the
//! PASS/FAIL summary is always printed; exits non-zero if any check fails.

use std::time::Instant;

use mmpa_core::geometry::{relative_base_pose, rotation_error, PoseError, RigidTransform, RotationMatrix};
use mmpa_core::pointcloud::{transform_cloud, ColoredPointCloud};
use mmpa_core::registration::{global_colored_registration, RegistrationParams};
use mmpa_core::sim::{build_scene, default_teach_extrinsic, site_pose_world, CameraModel, WorldState};
use mmpa_harness::config::default_scene_arms;
use mmpa_harness::experiment::{
    csv_string, run_alpha_ablation, run_beta_ablation, run_ipe_experiment, run_path_accuracy, run_scene_ablation, ArmOutput,
};
use mmpa_harness::{write_outputs, ExperimentConfig, Suite};
use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn random_unit(rng: &mut ChaCha8Rng) -> Vector3<f64> {
    loop {
        let v = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let n = v.norm();
        if n > 1e-3 && n <= 1.0 {
            return v / n;
        }
    }
}

fn random_transform(rng: &mut ChaCha8Rng, max_deg: f64, max_m: f64) -> RigidTransform {
    let angle = (rng.random::<f64>() * max_deg).to_radians();
    let r = RotationMatrix::from_axis_angle(&random_unit(rng), angle);
    RigidTransform::new(r, random_unit(rng) * (rng.random::<f64>() * max_m))
}

fn c1_frame_transfer() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let delta_base = random_transform(&mut rng, 180.0, 2.0);
        let ext_teach = random_transform(&mut rng, 180.0, 1.0);
        let ext_now = random_transform(&mut rng, 180.0, 1.0);
        let delta_cam = ext_now.inverse().compose(&delta_base).compose(&ext_teach);
        let got = relative_base_pose(&delta_cam, &ext_teach, &ext_now);
        worst = worst.max(got.max_abs_diff(&delta_base));
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(worst < 1e-9 && secs < 1.0, format!("1000 cases, max error {worst:.2e}, {secs:.3} s"))
}

fn c2_metric_identities() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let a = random_transform(&mut rng, 180.0, 0.0).rotation;
        let b = random_transform(&mut rng, 180.0, 0.0).rotation;
        let chordal = (a.matrix() - b.matrix()).norm();
        worst = worst.max((rotation_error(&a, &b) - chordal).abs());
    }
    let half_turn = rotation_error(&RotationMatrix::rot_z(180.0), &RotationMatrix::identity());
    let exact = (half_turn - 2.0 * 2f64.sqrt()).abs() <= f64::EPSILON * 4.0;
    outcome(worst < 1e-12 && exact, format!("max chordal mismatch {worst:.2e}, e(Rz 180, I) = {half_turn:.17}"))
}

/// Every third pixel of a render: about 34k points.
fn subsample(cloud: &ColoredPointCloud) -> ColoredPointCloud {
    let idx: Vec<usize> = (0..cloud.len()).step_by(3).collect();
    cloud.select(&idx)
}

fn c3_registration() -> Outcome {
    let start = Instant::now();
    let world = WorldState::new(build_scene("B3").unwrap(), site_pose_world("site1").unwrap(), CameraModel::default(), 31).unwrap();
    let ext = default_teach_extrinsic();
    let source = subsample(&world.render(&ext, 0).unwrap());
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let (mut ok, mut reg_time) = (0, 0.0);
    let n = 30;
    for i in 0..n {
        let truth = random_transform(&mut rng, 30.0, 0.3);
        let target = transform_cloud(&subsample(&world.render(&ext, 1 + i).unwrap()), &truth);
        let t = Instant::now();
        let params = RegistrationParams { seed: i, ..Default::default() };
        let r = global_colored_registration(&source, &target, &params).unwrap();
        reg_time += t.elapsed().as_secs_f64();
        let e = PoseError::between(&truth, &r.transform);
        ok += (e.e_trans < 0.02 && e.e_rot < 0.05) as usize;
    }
    let rate = ok as f64 / n as f64;
    let mean_time = reg_time / n as f64;
    let secs = start.elapsed().as_secs_f64();
    outcome(
        rate >= 0.9 && mean_time <= 2.0 && secs <= 120.0,
        format!("{} points, recovered {ok}/{n}, mean {mean_time:.2} s per registration, {secs:.0} s total", source.len()),
    )
}

fn ipe_config(site: &str, beta: usize, trials: usize) -> ExperimentConfig {
    let mut cfg = ExperimentConfig { site_profile: site.into(), scene: "B3".into(), trials, seed: 2024, ..Default::default() };
    cfg.ipe.beta = beta;
    cfg
}

fn ipe_check(arm: &ArmOutput, secs: f64, limit: f64) -> Outcome {
    let s = &arm.stats;
    let bounded = arm.rows.iter().filter(|r| r.success).all(|r| r.e_trans_m <= 0.02 && r.e_rot <= 0.05);
    let improves = match (s.mean_e_rot, s.mean_first_e_rot, s.mean_e_trans_m, s.mean_first_e_trans_m) {
        (Some(r), Some(r1), Some(t), Some(t1)) => r < r1 && t < t1,
        _ => false,
    };
    outcome(
        s.suc >= 0.9 && bounded && improves && secs <= limit,
        format!(
            "suc {:.3}, L {:.2}, E_R first {:.5} -> final {:.5}, E_t first {:.5} -> final {:.5} m, all successes bounded: {bounded}, {secs:.0} s",
            s.suc,
            s.mean_iterations.unwrap_or(f64::NAN),
            s.mean_first_e_rot.unwrap_or(f64::NAN),
            s.mean_e_rot.unwrap_or(f64::NAN),
            s.mean_first_e_trans_m.unwrap_or(f64::NAN),
            s.mean_e_trans_m.unwrap_or(f64::NAN),
        ),
    )
}

fn c4_site1() -> Outcome {
    let start = Instant::now();
    let arm = run_ipe_experiment(&ipe_config("site1", 5, 30)).unwrap();
    ipe_check(&arm, start.elapsed().as_secs_f64(), 600.0)
}

fn c5_site2_prime() -> Outcome {
    let start = Instant::now();
    let arm = run_ipe_experiment(&ipe_config("site2_prime", 10, 30)).unwrap();
    ipe_check(&arm, start.elapsed().as_secs_f64(), 900.0)
}

fn c6_scene_ablation() -> Outcome {
    let start = Instant::now();
    let arms = run_scene_ablation(&ipe_config("site1", 5, 10), &default_scene_arms()).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let get = |l: &str| &arms.iter().find(|a| a.stats.label == l).unwrap().stats;
    let a_low = ["A0", "A1", "A2"].iter().all(|l| get(l).suc <= 0.1);
    let (b1, b3) = (get("B1"), get("B3"));
    let sharper = matches!((b3.mean_e_rot, b1.mean_e_rot), (Some(x), Some(y)) if x < y);
    let table: Vec<String> = arms.iter().map(|a| format!("{} {:.1}", a.stats.label, a.stats.suc)).collect();
    outcome(
        a_low && b3.suc >= 0.9 && sharper && secs <= 1200.0,
        format!(
            "suc [{}], E_R B3 {:.6} vs B1 {:.6}, {secs:.0} s",
            table.join(", "),
            b3.mean_e_rot.unwrap_or(f64::NAN),
            b1.mean_e_rot.unwrap_or(f64::NAN)
        ),
    )
}

fn c7_monotonicity() -> Outcome {
    let cfg = ipe_config("site1", 5, 10);
    let alpha = run_alpha_ablation(&cfg, &[1, 2, 3, 4, 5]).unwrap();
    let beta = run_beta_ablation(&cfg, &[1, 2, 3, 4, 5]).unwrap();
    let suc = |arms: &[ArmOutput]| arms.iter().map(|a| a.stats.suc).collect::<Vec<_>>();
    let l: Vec<f64> = alpha.iter().map(|a| a.stats.mean_iterations.unwrap_or(f64::INFINITY)).collect();
    let (sa, sb) = (suc(&alpha), suc(&beta));
    let non_decreasing = |v: &[f64]| v.windows(2).all(|w| w[0] <= w[1]);
    let l_ok = l.windows(2).all(|w| w[1] <= w[0]);
    outcome(
        non_decreasing(&sa) && non_decreasing(&sb) && l_ok,
        format!("suc over alpha {sa:?}, L over alpha {l:.2?}, suc over beta {sb:?}"),
    )
}

fn c8_path() -> Outcome {
    let start = Instant::now();
    let mut cfg = ipe_config("site1", 5, 30);
    let exact = run_path_accuracy(&cfg, 0.15, true).unwrap();
    let exact_max = exact.stats.tip.as_ref().map_or(f64::INFINITY, |t| t.max_mm);
    cfg.seed = 77;
    let full = run_path_accuracy(&cfg, 0.15, false).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let (mean, max) = full.stats.tip.as_ref().map_or((f64::INFINITY, f64::INFINITY), |t| (t.mean_mm, t.max_mm));
    outcome(
        exact_max < 1e-6 && mean <= 2.0 && max <= 5.0 && secs <= 600.0,
        format!(
            "exact injection max {:.2e} m; full pipeline suc {:.3}, tip mean {mean:.3} mm, max {max:.3} mm, {secs:.0} s",
            exact_max / 1000.0,
            full.stats.suc
        ),
    )
}

fn c9_determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let mut bytes = Vec::new();
    for run in 0..2 {
        let cfg = ExperimentConfig {
            name: "det".into(),
            site_profile: "site2".into(),
            trials: 4,
            seed: 99,
            output_dir: dir.path().join(format!("run{run}")),
            suite: Suite::AlphaAblation { alphas: vec![1, 3] },
            ..Default::default()
        };
        let out = mmpa_harness::run_experiment(&cfg).unwrap();
        let (csv, _) = write_outputs(&cfg, &out).unwrap();
        bytes.push(std::fs::read(csv).unwrap());
    }
    let same = bytes[0] == bytes[1];
    let rows = csv_string(Vec::new()).map(|h| h.len()).unwrap_or(0);
    outcome(same && bytes[0].len() > rows, format!("two runs, {} bytes each, identical: {same}", bytes[0].len()))
}

fn main() {
    // Let `cargo test <filter>` skip the suite when the filter does not name it.
    let args: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    if !args.is_empty() && !args.iter().any(|a| "acceptance".contains(a.as_str())) {
        return;
    }
    if std::env::args().any(|a| a == "--list") {
        return;
    }
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("frame-transfer oracle", c1_frame_transfer),
        ("metric identities", c2_metric_identities),
        ("registration recovery", c3_registration),
        ("IPE site1", c4_site1),
        ("IPE site2_prime", c5_site2_prime),
        ("scene ablation", c6_scene_ablation),
        ("threshold monotonicity", c7_monotonicity),
        ("path correction", c8_path),
        ("determinism", c9_determinism),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let o = check();
        failed += !o.pass as usize;
        println!("criterion {} {name}: {} ({})", i + 1, if o.pass { "PASS" } else { "FAIL" }, o.detail);
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
