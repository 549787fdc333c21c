//! `cosep ablate`: train and evaluate the loss-ablation grid — full
//! objective, co-separation only, consistency only, and no adaptable
//! class — under one shared corpus and budget, next to the
//! mixture-as-estimate floor, and tabulate the results.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use cosep_core::cotrain::LossMode;

use crate::commands::{cmd_evaluate, cmd_train, EvalMode, EvalReport};
use crate::{CliError, ExperimentConfig};

/// Trainable rows; `mixture_baseline` is accepted as a fifth,
/// training-free row name.
pub const ABLATION_ROWS: [&str; 4] = ["full", "cosep_only", "consistency_only", "no_adaptable"];

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AblationRow {
    pub name: String,
    pub mean_sdr: f64,
    pub stderr_sdr: f64,
    pub mean_nsdr: f64,
    pub mean_perm_sdr: f64,
    /// Final training loss; absent for the mixture baseline.
    pub final_total: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AblationReport {
    pub rows: Vec<AblationRow>,
}

/// Loss mode and adaptable flag for a named row.
fn row_config(cfg: &ExperimentConfig, name: &str) -> Result<ExperimentConfig, CliError> {
    let mut row = cfg.clone();
    match name {
        "full" => {
            row.train.loss_mode = LossMode::Full;
            row.train.use_adaptable = true;
        }
        "cosep_only" => {
            row.train.loss_mode = LossMode::CosepOnly;
            row.train.use_adaptable = true;
        }
        "consistency_only" => {
            row.train.loss_mode = LossMode::ConsistencyOnly;
            row.train.use_adaptable = true;
        }
        "no_adaptable" => {
            row.train.loss_mode = LossMode::Full;
            row.train.use_adaptable = false;
        }
        other => {
            return Err(CliError::Config(format!(
                "unknown ablation row '{other}': expected one of {ABLATION_ROWS:?} or mixture_baseline"
            )))
        }
    }
    Ok(row)
}

fn to_row(name: &str, eval_report: &EvalReport, final_total: Option<f64>) -> AblationRow {
    AblationRow {
        name: name.to_string(),
        mean_sdr: eval_report.mean_sdr,
        stderr_sdr: eval_report.stderr_sdr,
        mean_nsdr: eval_report.mean_nsdr,
        mean_perm_sdr: eval_report.mean_perm_sdr,
        final_total,
    }
}

pub fn cmd_ablate(
    cfg: &ExperimentConfig,
    corpus_dir: &Path,
    out_dir: &Path,
    rows: &[String],
) -> Result<AblationReport, CliError> {
    let selected: Vec<String> = if rows.is_empty() {
        ABLATION_ROWS.iter().map(|s| s.to_string()).chain(["mixture_baseline".to_string()]).collect()
    } else {
        rows.to_vec()
    };

    fs::create_dir_all(out_dir)?;
    let mut report = AblationReport { rows: Vec::new() };
    for name in &selected {
        let row_dir = out_dir.join(name);
        let row = if name == "mixture_baseline" {
            let eval = cmd_evaluate(
                None,
                corpus_dir,
                &row_dir.join("eval"),
                &cfg.eval,
                EvalMode::MixtureBaseline,
            )?;
            to_row(name, &eval, None)
        } else {
            let row_cfg = row_config(cfg, name)?;
            let summary = cmd_train(&row_cfg, corpus_dir, &row_dir)?;
            let eval = cmd_evaluate(
                Some(&row_dir.join("model_best.json")),
                corpus_dir,
                &row_dir.join("eval"),
                &row_cfg.eval,
                EvalMode::Model,
            )?;
            to_row(name, &eval, summary.final_total)
        };
        report.rows.push(row);
    }

    fs::write(out_dir.join("ablation.json"), serde_json::to_string_pretty(&report)?)?;
    let mut csv = String::from("row,mean_sdr,stderr_sdr,mean_nsdr,mean_perm_sdr,final_total\n");
    for r in &report.rows {
        let ft = r.final_total.map_or(String::new(), |v| format!("{v:.6}"));
        csv.push_str(&format!(
            "{},{:.4},{:.4},{:.4},{:.4},{}\n",
            r.name, r.mean_sdr, r.stderr_sdr, r.mean_nsdr, r.mean_perm_sdr, ft
        ));
    }
    fs::write(out_dir.join("ablation.csv"), csv)?;
    Ok(report)
}
