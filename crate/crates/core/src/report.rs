//! Report documents and their file formats.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::eval::{ExampleOutcome, JensenSummary};
use crate::metrics::{round2, task_results_csv, AblationTable, TaskResult, VoteTally};
use crate::winoground::{Scorer, WinogroundScores};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct TaskVotes {
    pub task: String,
    pub tally: VoteTally,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct EvalReport {
    /// Wall-clock derived unless overridden; the only field that varies
    /// between identical runs.
    pub run_id: String,
    pub config_hash: String,
    pub model: String,
    pub scorer: Scorer,
    pub tasks: Vec<TaskResult>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub winoground: Option<WinogroundScores>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub votes: Option<Vec<TaskVotes>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ablations: Option<Vec<AblationTable>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub jensen: Option<JensenSummary>,
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn from_json(s: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(s)
    }

    pub fn tasks_csv(&self) -> String {
        task_results_csv(&self.tasks)
    }

    /// x/y pairs per task for external bar charts.
    pub fn bar_chart_csv(&self) -> String {
        let mut out = String::from("task,accuracyMeanPct,chancePct\n");
        for t in &self.tasks {
            out.push_str(&format!("{},{:.2},{:.2}\n", t.task, t.accuracy_mean_pct, t.chance_pct));
        }
        out
    }

    /// Rounds every reported percentage to two decimals.
    pub fn rounded(mut self) -> Self {
        self.tasks = self.tasks.iter().map(TaskResult::rounded).collect();
        self.winoground = self.winoground.map(|w| WinogroundScores {
            image_score: round2(w.image_score),
            text_score: round2(w.text_score),
            group_score: round2(w.group_score),
        });
        self
    }
}

/// `YYYYMMDDTHHMMSSZ` from the system clock.
pub fn timestamp_run_id() -> String {
    let secs = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    let (days, rem) = (secs / 86_400, secs % 86_400);
    let (y, m, d) = civil_from_days(days as i64);
    format!("{y:04}{m:02}{d:02}T{:02}{:02}{:02}Z", rem / 3600, rem % 3600 / 60, rem % 60)
}

/// Days since 1970-01-01 to a proleptic Gregorian date.
fn civil_from_days(z: i64) -> (i64, u32, u32) {
    let z = z + 719_468;
    let era = z.div_euclid(146_097);
    let doe = z.rem_euclid(146_097);
    let yoe = (doe - doe / 1460 + doe / 36_524 - doe / 146_096) / 365;
    let doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
    let mp = (5 * doy + 2) / 153;
    let d = (doy - (153 * mp + 2) / 5 + 1) as u32;
    let m = if mp < 10 { mp + 3 } else { mp - 9 } as u32;
    let y = yoe + era * 400 + i64::from(m <= 2);
    (y, m, d)
}

#[derive(Debug, Serialize)]
#[serde(rename_all = "camelCase")]
struct EstimateRecord<'a> {
    example_id: &'a str,
    candidate_id: &'a str,
    log_likelihood: f64,
    per_trial_logs: &'a [f64],
    seed: u64,
    config_hash: &'a str,
}

/// One line per (example, candidate).
pub fn write_estimates(path: &Path, outcomes: &[ExampleOutcome], config_hash: &str) -> std::io::Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    for o in outcomes {
        for (cid, e) in o.posterior.candidate_ids.iter().zip(&o.estimates) {
            let rec = EstimateRecord {
                example_id: &o.example_id,
                candidate_id: cid,
                log_likelihood: e.log_likelihood,
                per_trial_logs: &e.per_trial_logs,
                seed: e.seed,
                config_hash,
            };
            serde_json::to_writer(&mut w, &rec)?;
            w.write_all(b"\n")?;
        }
    }
    w.flush()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct PredictionRow {
    pub example_id: String,
    pub task: String,
    pub suite_seed: u64,
    pub prediction: usize,
    pub correct: usize,
}

pub fn prediction_rows(outcomes: &[ExampleOutcome]) -> Vec<PredictionRow> {
    outcomes
        .iter()
        .map(|o| PredictionRow {
            example_id: o.example_id.clone(),
            task: o.task.name().to_string(),
            suite_seed: o.suite_seed,
            prediction: o.prediction(),
            correct: o.correct_index,
        })
        .collect()
}

pub fn write_predictions(path: &Path, rows: &[PredictionRow]) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_predictions(path: &Path) -> Result<Vec<PredictionRow>, csv::Error> {
    csv::Reader::from_path(path)?.deserialize().collect()
}
