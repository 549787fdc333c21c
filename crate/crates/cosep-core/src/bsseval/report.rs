//! Score serialization: per-source JSON records and an aggregate CSV with
//! means and standard errors.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{BssError, BssScores};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub clip_id: String,
    pub source: String,
    pub sdr: f64,
    pub sir: f64,
    pub sar: f64,
}

impl ScoreRecord {
    pub fn new(clip_id: impl Into<String>, source: impl Into<String>, s: &BssScores) -> Self {
        ScoreRecord {
            clip_id: clip_id.into(),
            source: source.into(),
            sdr: s.sdr,
            sir: s.sir,
            sar: s.sar,
        }
    }
}

pub fn write_score_records(path: &Path, records: &[ScoreRecord]) -> Result<(), BssError> {
    let json = serde_json::to_string_pretty(records).expect("score records serialize");
    std::fs::write(path, json).map_err(BssError::Io)
}

/// mean and standard error (sample std / √n) per metric, as CSV.
pub fn aggregate_csv(records: &[ScoreRecord]) -> String {
    let mut out = String::from("metric,mean,stderr,n\n");
    for (name, get) in [
        ("sdr", (|r: &ScoreRecord| r.sdr) as fn(&ScoreRecord) -> f64),
        ("sir", |r| r.sir),
        ("sar", |r| r.sar),
    ] {
        let n = records.len();
        if n == 0 {
            out.push_str(&format!("{name},NaN,NaN,0\n"));
            continue;
        }
        let vals: Vec<f64> = records.iter().map(get).collect();
        let mean = vals.iter().sum::<f64>() / n as f64;
        let stderr = if n > 1 {
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            (var / n as f64).sqrt()
        } else {
            0.0
        };
        out.push_str(&format!("{name},{mean},{stderr},{n}\n"));
    }
    out
}
