//! Human-readable report collating metrics, confusion matrices, thresholds
//! and the subgroup significance grid.
//!
//! The report is rendered purely from the evaluation/statistics exports in
//! the work directory, with deterministic formatting, so identical runs
//! produce byte-identical documents.

use std::collections::BTreeMap;
use std::path::Path;

use crate::config::RunConfig;
use crate::error::{CliError, Result};
use crate::pipeline::Workspace;

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

/// Parse a simple header-plus-rows CSV into field vectors.
fn rows_of(text: &str) -> Vec<Vec<String>> {
    text.lines()
        .skip(1)
        .filter(|l| !l.trim().is_empty())
        .map(|l| l.split(',').map(|f| f.trim().to_string()).collect())
        .collect()
}

fn fmt4(raw: &str) -> String {
    match raw.parse::<f64>() {
        Ok(v) => format!("{v:.4}"),
        Err(_) => raw.to_string(),
    }
}

fn fmt1(raw: &str) -> String {
    match raw.parse::<f64>() {
        Ok(v) => format!("{v:.1}"),
        Err(_) => raw.to_string(),
    }
}

fn fmt_p(raw: &str) -> String {
    match raw.parse::<f64>() {
        Ok(v) if v >= 1e-4 || v == 0.0 => format!("{v:.4}"),
        Ok(v) => format!("{v:.2e}"),
        Err(_) => "-".to_string(),
    }
}

fn pad(s: &str, width: usize) -> String {
    format!("{s:<width$}")
}

fn pad_r(s: &str, width: usize) -> String {
    format!("{s:>width$}")
}

fn title(out: &mut String, text: &str) {
    out.push_str(text);
    out.push('\n');
    out.push_str(&"-".repeat(text.len()));
    out.push('\n');
}

/// Render the full report document.
pub fn render(config: &RunConfig, ws: &Workspace) -> Result<String> {
    let mut out = String::new();
    out.push_str("KERATITIS CLASSIFICATION EVALUATION REPORT\n");
    out.push_str("==========================================\n\n");

    title(&mut out, "Run");
    out.push_str(&format!("variant:        {}\n", config.model.variant));
    out.push_str(&format!(
        "clinical loss:  {}\n",
        if config.loss.clinical { "yes" } else { "no" }
    ));
    out.push_str(&format!("threshold mode: {}\n", config.threshold.mode));
    out.push_str(&format!("folds (k):      {}\n", config.split.k));
    out.push_str(&format!("seed:           {}\n\n", config.seed));

    // metrics table
    title(&mut out, "Metrics (mean over folds, 95% normal CI)");
    out.push_str(&format!(
        "{} {} {} {} {} {} {} {}\n",
        pad("task", 10),
        pad("metric", 13),
        pad_r("mean", 8),
        pad_r("sd", 8),
        pad_r("ci_low", 8),
        pad_r("ci_high", 8),
        pad_r("incl", 5),
        pad_r("excl", 5),
    ));
    let metrics = read(&ws.metrics_csv())?;
    for fields in rows_of(&metrics) {
        if fields.len() != 8 {
            continue;
        }
        out.push_str(&format!(
            "{} {} {} {} {} {} {} {}\n",
            pad(&fields[0], 10),
            pad(&fields[1], 13),
            pad_r(&fmt4(&fields[2]), 8),
            pad_r(&fmt4(&fields[3]), 8),
            pad_r(&fmt4(&fields[4]), 8),
            pad_r(&fmt4(&fields[5]), 8),
            pad_r(&fields[6], 5),
            pad_r(&fields[7], 5),
        ));
    }
    out.push('\n');

    // per-task average confusion matrices
    title(&mut out, "Average confusion matrices (mean counts per fold)");
    out.push_str(&format!(
        "{} {} {} {}\n",
        pad("Task", 10),
        pad("Actual/Predicted", 18),
        pad_r("Negative", 9),
        pad_r("Positive", 9),
    ));
    let tasks_cf = read(&ws.confusion_tasks_csv())?;
    let mut cf: BTreeMap<String, [[String; 2]; 2]> = BTreeMap::new();
    for fields in rows_of(&tasks_cf) {
        if fields.len() != 4 {
            continue;
        }
        let entry = cf.entry(fields[0].clone()).or_default();
        let ai = if fields[1] == "negative" { 0 } else { 1 };
        let pi = if fields[2] == "negative" { 0 } else { 1 };
        entry[ai][pi] = fields[3].clone();
    }
    // paper table ordering: amoeba, bacteria, fungi
    for task in ["amoeba", "bacteria", "fungi"] {
        if let Some(grid) = cf.get(task) {
            let mut name = task.to_string();
            if let Some(first) = name.get_mut(0..1) {
                first.make_ascii_uppercase();
            }
            out.push_str(&format!(
                "{} {} {} {}\n",
                pad(&name, 10),
                pad("Negative", 18),
                pad_r(&fmt1(&grid[0][0]), 9),
                pad_r(&fmt1(&grid[0][1]), 9),
            ));
            out.push_str(&format!(
                "{} {} {} {}\n",
                pad("", 10),
                pad("Positive", 18),
                pad_r(&fmt1(&grid[1][0]), 9),
                pad_r(&fmt1(&grid[1][1]), 9),
            ));
        }
    }
    out.push('\n');

    // joint confusion matrix
    title(&mut out, "Joint confusion matrix (mean counts per fold)");
    let display_names = ["H", "B", "F", "A", "B,F", "F,A", "B,A", "B,F,A"];
    out.push_str(&pad("Label\\Pred", 11));
    for name in display_names {
        out.push_str(&pad_r(name, 8));
    }
    out.push('\n');
    let joint = read(&ws.confusion_joint_csv())?;
    for (i, fields) in rows_of(&joint).iter().enumerate() {
        if fields.len() != 9 {
            continue;
        }
        out.push_str(&pad(display_names[i], 11));
        for value in &fields[1..] {
            out.push_str(&pad_r(&fmt1(value), 8));
        }
        out.push('\n');
    }
    out.push('\n');

    // thresholds
    if config.threshold.mode == "youden" {
        title(&mut out, "Adaptive thresholds (Youden's J on validation, per round)");
    } else {
        title(&mut out, "Fixed thresholds (per round)");
    }
    out.push_str(&format!(
        "{} {} {} {}\n",
        pad("round", 6),
        pad_r("bacteria", 9),
        pad_r("fungi", 9),
        pad_r("amoeba", 9),
    ));
    let thresholds = read(&ws.thresholds_csv())?;
    for fields in rows_of(&thresholds) {
        if fields.len() != 4 {
            continue;
        }
        out.push_str(&format!(
            "{} {} {} {}\n",
            pad(&fields[0], 6),
            pad_r(&fmt4(&fields[1]), 9),
            pad_r(&fmt4(&fields[2]), 9),
            pad_r(&fmt4(&fields[3]), 9),
        ));
    }
    out.push('\n');

    // subgroup significance grid
    if !config.stats.attributes.is_empty() {
        title(&mut out, "Corrected p-values by infection type (subgroup tests)");
        let stats = read(&ws.stats_csv())?;
        // (attribute, task, metric) -> corrected p
        let mut grid: BTreeMap<(String, String, String), String> = BTreeMap::new();
        for fields in rows_of(&stats) {
            if fields.len() != 8 {
                continue;
            }
            grid.insert(
                (fields[0].clone(), fields[1].clone(), fields[2].clone()),
                fields[6].clone(),
            );
        }
        out.push_str(&pad("Metric", 10));
        for task in ["Bacteria", "Fungi", "Amoeba"] {
            out.push_str(&pad_r(&format!("{task}/Age"), 13));
            out.push_str(&pad_r(&format!("{task}/Sex"), 13));
        }
        out.push('\n');
        let metric_rows = [
            ("F1-score", "f1"),
            ("Recall", "recall"),
            ("Precision", "precision"),
            ("BA", "balanced_acc"),
            ("ACC", "acc"),
            ("AUROC", "auroc"),
        ];
        for (label, key) in metric_rows {
            out.push_str(&pad(label, 10));
            for task in ["bacteria", "fungi", "amoeba"] {
                for attribute in ["age_bin", "sex"] {
                    let cell = grid
                        .get(&(attribute.to_string(), task.to_string(), key.to_string()))
                        .map(|p| fmt_p(p))
                        .unwrap_or_else(|| "-".to_string());
                    out.push_str(&pad_r(&cell, 13));
                }
            }
            out.push('\n');
        }
        out.push('\n');
    }

    out.push_str("ROC curve export: eval/roc.csv (task,threshold,tpr,fpr)\n");
    Ok(out)
}
