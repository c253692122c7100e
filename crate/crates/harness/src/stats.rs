use serde::{Deserialize, Serialize};

/// One CSV row. Column order is fixed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial: usize,
    pub site: String,
    pub scene: String,
    pub alpha_id: String,
    pub beta: usize,
    pub success: bool,
    pub iterations: usize,
    pub e_rot: f64,
    pub e_trans_m: f64,
    pub tip_err_mm: Option<f64>,
    pub reg_time_s: Option<f64>,
}

pub const CSV_COLUMNS: [&str; 11] = [
    "trial",
    "site",
    "scene",
    "alpha_id",
    "beta",
    "success",
    "iterations",
    "e_rot",
    "e_trans_m",
    "tip_err_mm",
    "reg_time_s",
];

/// Mean error of the relative base pose estimate after iteration `k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationPoint {
    pub k: usize,
    /// Trials with a converged registration at this iteration.
    pub count: usize,
    pub mean_e_rot: f64,
    pub mean_e_trans_m: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TipStats {
    pub max_mm: f64,
    pub mean_mm: f64,
    pub std_mm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentStats {
    pub label: String,
    pub trials: usize,
    pub suc: f64,
    /// Error statistics and `mean_iterations` are over successful trials
    /// only; `None` when no trial succeeded.
    pub mean_iterations: Option<f64>,
    pub mean_e_rot: Option<f64>,
    pub std_e_rot: Option<f64>,
    pub mean_e_trans_m: Option<f64>,
    pub std_e_trans_m: Option<f64>,
    /// Over successful trials, the error after the first iteration.
    pub mean_first_e_rot: Option<f64>,
    pub mean_first_e_trans_m: Option<f64>,
    pub per_iteration: Vec<IterationPoint>,
    pub tip: Option<TipStats>,
    pub mean_reg_time_s: Option<f64>,
}

pub fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// Sample standard deviation (n - 1); zero for a single value.
pub fn sample_std(v: &[f64]) -> Option<f64> {
    let m = mean(v)?;
    if v.len() < 2 {
        return Some(0.0);
    }
    Some((v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt())
}

/// Table statistics from CSV rows alone (no per-iteration data).
pub fn summarize(label: &str, rows: &[TrialRecord]) -> ExperimentStats {
    let ok: Vec<&TrialRecord> = rows.iter().filter(|r| r.success).collect();
    let pick = |f: fn(&TrialRecord) -> f64| ok.iter().map(|r| f(r)).collect::<Vec<f64>>();
    let rot = pick(|r| r.e_rot);
    let trans = pick(|r| r.e_trans_m);
    let iters = pick(|r| r.iterations as f64);
    let tips: Vec<f64> = ok.iter().filter_map(|r| r.tip_err_mm).collect();
    let times: Vec<f64> = rows.iter().filter_map(|r| r.reg_time_s).collect();
    ExperimentStats {
        label: label.to_string(),
        trials: rows.len(),
        suc: if rows.is_empty() { 0.0 } else { ok.len() as f64 / rows.len() as f64 },
        mean_iterations: mean(&iters),
        mean_e_rot: mean(&rot),
        std_e_rot: sample_std(&rot),
        mean_e_trans_m: mean(&trans),
        std_e_trans_m: sample_std(&trans),
        mean_first_e_rot: None,
        mean_first_e_trans_m: None,
        per_iteration: Vec::new(),
        tip: (!tips.is_empty()).then(|| TipStats {
            max_mm: tips.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            mean_mm: mean(&tips).unwrap_or(0.0),
            std_mm: sample_std(&tips).unwrap_or(0.0),
        }),
        mean_reg_time_s: mean(&times),
    }
}
