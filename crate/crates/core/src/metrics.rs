//! Accuracy, chance deltas, vote tallies, rank correlation and ablation tables.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("length mismatch: {0} vs {1}")]
    Length(usize, usize),
    #[error("need at least {0} values")]
    TooShort(usize),
    #[error("rank correlation undefined: one input has zero rank variance")]
    Undefined,
    #[error("chance level {0} outside (0, 100)")]
    Chance(f64),
}

/// Percentage of matching entries.
pub fn accuracy(predictions: &[usize], correct: &[usize]) -> Result<f64, MetricsError> {
    if predictions.len() != correct.len() {
        return Err(MetricsError::Length(predictions.len(), correct.len()));
    }
    if predictions.is_empty() {
        return Err(MetricsError::TooShort(1));
    }
    let hits = predictions.iter().zip(correct).filter(|(p, c)| p == c).count();
    Ok(100.0 * hits as f64 / predictions.len() as f64)
}

/// Rounds to two decimals for reporting.
pub fn round2(v: f64) -> f64 {
    (v * 100.0).round() / 100.0
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct TaskResult {
    pub task: String,
    pub accuracy_mean_pct: f64,
    /// Sample standard deviation over repeats.
    pub accuracy_std_pct: f64,
    pub chance_pct: f64,
    pub delta_pct: f64,
    pub repeat_seeds: Vec<u64>,
    pub repeat_accuracies_pct: Vec<f64>,
}

impl TaskResult {
    pub fn from_repeats(task: &str, chance_pct: f64, seeds: Vec<u64>, accuracies: Vec<f64>) -> Result<Self, MetricsError> {
        if seeds.len() != accuracies.len() {
            return Err(MetricsError::Length(seeds.len(), accuracies.len()));
        }
        if accuracies.is_empty() {
            return Err(MetricsError::TooShort(1));
        }
        if !(chance_pct > 0.0 && chance_pct < 100.0) {
            return Err(MetricsError::Chance(chance_pct));
        }
        let (mean, std) = mean_std(&accuracies);
        Ok(Self {
            task: task.to_string(),
            accuracy_mean_pct: mean,
            accuracy_std_pct: std,
            chance_pct,
            delta_pct: mean - chance_pct,
            repeat_seeds: seeds,
            repeat_accuracies_pct: accuracies,
        })
    }

    /// Copy with every percentage rounded to two decimals.
    pub fn rounded(&self) -> Self {
        Self {
            task: self.task.clone(),
            accuracy_mean_pct: round2(self.accuracy_mean_pct),
            accuracy_std_pct: round2(self.accuracy_std_pct),
            chance_pct: round2(self.chance_pct),
            delta_pct: round2(self.delta_pct),
            repeat_seeds: self.repeat_seeds.clone(),
            repeat_accuracies_pct: self.repeat_accuracies_pct.iter().map(|v| round2(*v)).collect(),
        }
    }
}

pub fn chance_delta(result: &TaskResult) -> Result<f64, MetricsError> {
    if !(result.chance_pct > 0.0 && result.chance_pct < 100.0) {
        return Err(MetricsError::Chance(result.chance_pct));
    }
    Ok(result.accuracy_mean_pct - result.chance_pct)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct VoteTally {
    pub only_a: usize,
    pub only_b: usize,
    pub both: usize,
    pub neither: usize,
}

impl VoteTally {
    pub fn total(&self) -> usize {
        self.only_a + self.only_b + self.both + self.neither
    }
}

pub fn votes_from_predictions(a: &[usize], b: &[usize], correct: &[usize]) -> Result<VoteTally, MetricsError> {
    if a.len() != correct.len() {
        return Err(MetricsError::Length(a.len(), correct.len()));
    }
    if b.len() != correct.len() {
        return Err(MetricsError::Length(b.len(), correct.len()));
    }
    let mut t = VoteTally::default();
    for ((pa, pb), c) in a.iter().zip(b).zip(correct) {
        match (pa == c, pb == c) {
            (true, true) => t.both += 1,
            (true, false) => t.only_a += 1,
            (false, true) => t.only_b += 1,
            (false, false) => t.neither += 1,
        }
    }
    Ok(t)
}

/// 1-based fractional ranks; tied values share the average of their ranks.
pub fn fractional_ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&i, &j| v[i].total_cmp(&v[j]));
    let mut ranks = vec![0.0; v.len()];
    let mut start = 0;
    while start < idx.len() {
        let mut end = start + 1;
        while end < idx.len() && v[idx[end]] == v[idx[start]] {
            end += 1;
        }
        let avg = (start + end + 1) as f64 / 2.0;
        for &i in &idx[start..end] {
            ranks[i] = avg;
        }
        start = end;
    }
    ranks
}

/// Spearman's ρ as the Pearson correlation of fractional ranks.
pub fn spearman_rho(a: &[f64], b: &[f64]) -> Result<f64, MetricsError> {
    if a.len() != b.len() {
        return Err(MetricsError::Length(a.len(), b.len()));
    }
    if a.len() < 2 {
        return Err(MetricsError::TooShort(2));
    }
    let (ra, rb) = (fractional_ranks(a), fractional_ranks(b));
    let n = a.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in ra.iter().zip(&rb) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(MetricsError::Undefined);
    }
    Ok((sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AblationAxis {
    T,
    N,
    #[serde(rename = "seed")]
    Seed,
}

impl AblationAxis {
    pub fn name(self) -> &'static str {
        match self {
            AblationAxis::T => "T",
            AblationAxis::N => "N",
            AblationAxis::Seed => "seed",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct AblationRow {
    pub value: u64,
    pub result: TaskResult,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct AblationTable {
    pub axis: AblationAxis,
    pub rows: Vec<AblationRow>,
    /// For the seed axis: per-task mean and std across the swept seeds.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub seed_summary: Vec<TaskResult>,
}

/// Runs `run` once per value and tabulates one row per (value, task).
pub fn ablation_sweep<E>(
    axis: AblationAxis,
    values: &[u64],
    mut run: impl FnMut(u64) -> Result<Vec<TaskResult>, E>,
) -> Result<AblationTable, E>
where
    E: From<MetricsError>,
{
    if values.is_empty() {
        return Err(MetricsError::TooShort(1).into());
    }
    let mut rows = Vec::new();
    for &v in values {
        let start = std::time::Instant::now();
        let results = run(v)?;
        let seconds = start.elapsed().as_secs_f64();
        rows.extend(results.into_iter().map(|result| AblationRow { value: v, result, seconds }));
    }
    let mut seed_summary = Vec::new();
    if axis == AblationAxis::Seed {
        let mut tasks: Vec<&str> = Vec::new();
        for r in &rows {
            if !tasks.contains(&r.result.task.as_str()) {
                tasks.push(&r.result.task);
            }
        }
        for t in tasks {
            let sel: Vec<&AblationRow> = rows.iter().filter(|r| r.result.task == t).collect();
            seed_summary.push(TaskResult::from_repeats(
                t,
                sel[0].result.chance_pct,
                sel.iter().map(|r| r.value).collect(),
                sel.iter().map(|r| r.result.accuracy_mean_pct).collect(),
            )?);
        }
    }
    Ok(AblationTable { axis, rows, seed_summary })
}

impl AblationTable {
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["axis", "value", "task", "accuracyMeanPct", "accuracyStdPct", "chancePct", "deltaPct", "seconds"])
            .expect("in-memory write");
        for r in &self.rows {
            w.write_record([
                self.axis.name().to_string(),
                r.value.to_string(),
                r.result.task.clone(),
                format!("{:.2}", r.result.accuracy_mean_pct),
                format!("{:.2}", r.result.accuracy_std_pct),
                format!("{:.2}", r.result.chance_pct),
                format!("{:.2}", r.result.delta_pct),
                format!("{:.3}", r.seconds),
            ])
            .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
    }
}

/// CSV mirror of a list of task results.
pub fn task_results_csv(results: &[TaskResult]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["task", "accuracyMeanPct", "accuracyStdPct", "chancePct", "deltaPct", "repeatSeeds"])
        .expect("in-memory write");
    for r in results {
        let seeds = r.repeat_seeds.iter().map(u64::to_string).collect::<Vec<_>>().join(" ");
        w.write_record([
            r.task.clone(),
            format!("{:.2}", r.accuracy_mean_pct),
            format!("{:.2}", r.accuracy_std_pct),
            format!("{:.2}", r.chance_pct),
            format!("{:.2}", r.delta_pct),
            seeds,
        ])
        .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
}
