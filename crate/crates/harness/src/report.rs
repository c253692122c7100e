//! Markdown summary of experiment CSVs with the hardware reference values
//! alongside.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::stats::{summarize, ExperimentStats, TrialRecord, CSV_COLUMNS};
use crate::HarnessError;

const REFERENCE_JSON: &str = include_str!("../data/reference_values.json");

#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct ReferenceEntry {
    pub suc: f64,
    pub mean_iterations: Option<f64>,
    pub mean_e_rot: Option<f64>,
    pub std_e_rot: Option<f64>,
    pub mean_e_trans_m: Option<f64>,
    pub std_e_trans_m: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct ReferenceTip {
    pub max_mm: f64,
    pub mean_mm: f64,
    pub std_mm: f64,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct ReferenceValues {
    pub note: String,
    /// site -> alpha id -> entry
    pub alpha: BTreeMap<String, BTreeMap<String, ReferenceEntry>>,
    /// site -> beta -> entry
    pub beta: BTreeMap<String, BTreeMap<String, ReferenceEntry>>,
    /// arm label (A0..B3) -> entry
    pub scene: BTreeMap<String, ReferenceEntry>,
    pub path: BTreeMap<String, ReferenceTip>,
}

pub fn reference_values() -> ReferenceValues {
    serde_json::from_str(REFERENCE_JSON).expect("bundled reference values parse")
}

enum Reference<'a> {
    Table(&'a ReferenceEntry),
    Tip(&'a ReferenceTip),
}

fn default_beta(site: &str) -> usize {
    if site == "site2_prime" {
        10
    } else {
        5
    }
}

fn lookup<'a>(refs: &'a ReferenceValues, key: &GroupKey, has_tip: bool) -> Option<Reference<'a>> {
    if let Some(e) = refs.scene.get(&key.scene) {
        return Some(Reference::Table(e));
    }
    if has_tip {
        return refs.path.get(&key.site).map(Reference::Tip);
    }
    if key.beta == default_beta(&key.site) {
        return refs.alpha.get(&key.site)?.get(&key.alpha_id).map(Reference::Table);
    }
    if key.alpha_id == "a3" {
        return refs.beta.get(&key.site)?.get(&key.beta.to_string()).map(Reference::Table);
    }
    None
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct GroupKey {
    site: String,
    scene: String,
    alpha_id: String,
    beta: usize,
}

pub fn read_csv(path: &Path) -> Result<Vec<TrialRecord>, HarnessError> {
    let schema = |reason: String| HarnessError::Schema { path: path.to_path_buf(), reason };
    let mut r = csv::Reader::from_path(path).map_err(|e| schema(e.to_string()))?;
    let headers = r.headers().map_err(|e| schema(e.to_string()))?.clone();
    if headers.iter().ne(CSV_COLUMNS.iter().copied()) {
        return Err(schema(format!("expected columns {}, found {}", CSV_COLUMNS.join(","), headers.iter().collect::<Vec<_>>().join(","))));
    }
    r.deserialize().map(|row| row.map_err(|e| schema(e.to_string()))).collect()
}

fn f(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |x| format!("{x:.4}"))
}

fn cell(sim: Option<f64>, reference: Option<Option<f64>>) -> String {
    match reference {
        Some(r) => format!("{} ({})", f(sim), f(r)),
        None => f(sim),
    }
}

fn section(out: &mut String, title: &str, rows: &[TrialRecord], refs: &ReferenceValues) {
    let mut groups: Vec<(GroupKey, Vec<TrialRecord>)> = Vec::new();
    for r in rows {
        let key = GroupKey { site: r.site.clone(), scene: r.scene.clone(), alpha_id: r.alpha_id.clone(), beta: r.beta };
        match groups.iter_mut().find(|(k, _)| *k == key) {
            Some((_, v)) => v.push(r.clone()),
            None => groups.push((key, vec![r.clone()])),
        }
    }
    let _ = writeln!(out, "## {title}\n");
    if groups.is_empty() {
        let _ = writeln!(out, "No trials.\n");
        return;
    }
    let _ = writeln!(out, "Simulated value with the hardware reference in parentheses where one exists.\n");
    let _ = writeln!(out, "| scene | site | alpha | beta | trials | suc | L | E_R | sd E_R | E_t (m) | sd E_t (m) |");
    let _ = writeln!(out, "|---|---|---|---|---|---|---|---|---|---|---|");
    let mut tips = Vec::new();
    for (key, group) in &groups {
        let s: ExperimentStats = summarize(&key.scene, group);
        let has_tip = group.iter().any(|r| r.tip_err_mm.is_some());
        let reference = lookup(refs, key, has_tip);
        let table = match &reference {
            Some(Reference::Table(e)) => Some(*e),
            _ => None,
        };
        let _ = writeln!(
            out,
            "| {} | {} | {} | {} | {} | {} | {} | {} | {} | {} | {} |",
            key.scene,
            key.site,
            key.alpha_id,
            key.beta,
            s.trials,
            cell(Some(s.suc), table.map(|e| Some(e.suc))),
            cell(s.mean_iterations, table.map(|e| e.mean_iterations)),
            cell(s.mean_e_rot, table.map(|e| e.mean_e_rot)),
            cell(s.std_e_rot, table.map(|e| e.std_e_rot)),
            cell(s.mean_e_trans_m, table.map(|e| e.mean_e_trans_m)),
            cell(s.std_e_trans_m, table.map(|e| e.std_e_trans_m)),
        );
        if let Some(tip) = &s.tip {
            let r = match reference {
                Some(Reference::Tip(t)) => Some(t),
                _ => None,
            };
            tips.push((key.clone(), tip.clone(), r));
        }
        if let Some(t) = s.mean_reg_time_s {
            let _ = writeln!(out, "|  | mean registration time {t:.3} s |||||||||||");
        }
    }
    if !tips.is_empty() {
        let _ = writeln!(out, "\n| scene | site | max tip error (mm) | mean (mm) | sd (mm) |");
        let _ = writeln!(out, "|---|---|---|---|---|");
        for (key, t, r) in tips {
            let _ = writeln!(
                out,
                "| {} | {} | {} | {} | {} |",
                key.scene,
                key.site,
                cell(Some(t.max_mm), r.map(|r| Some(r.max_mm))),
                cell(Some(t.mean_mm), r.map(|r| Some(r.mean_mm))),
                cell(Some(t.std_mm), r.map(|r| Some(r.std_mm))),
            );
        }
    }
    let _ = writeln!(out);
}

/// Report over every `*.csv` in `dir`, one section per file in name order.
pub fn build_report(dir: &Path) -> Result<String, HarnessError> {
    let refs = reference_values();
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| HarnessError::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .collect();
    files.sort();
    let mut out = String::from("# Experiment report\n\n");
    for file in files {
        let rows = read_csv(&file)?;
        let title = file.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        section(&mut out, &title, &rows, &refs);
    }
    Ok(out)
}

/// Writes `report.md` into `dir`.
pub fn write_report(dir: &Path) -> Result<PathBuf, HarnessError> {
    let text = build_report(dir)?;
    let path = dir.join("report.md");
    fs::write(&path, text).map_err(|e| HarnessError::io(&path, e))?;
    Ok(path)
}
