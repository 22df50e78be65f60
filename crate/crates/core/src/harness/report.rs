use std::fs::{self, OpenOptions};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::sampling::ShotSetting;
use super::task::TaskKind;
use crate::error::{Error, Result};
use crate::fusion::{FusionMode, ScoreNormalization};
use crate::prompt::PromptPlan;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Choice {
        chosen: usize,
        answer_idx: usize,
        correct: bool,
        option_nll: Vec<f64>,
    },
    Generation {
        text: String,
        rouge1: f64,
        rouge2: f64,
        rouge_l: f64,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExampleRecord {
    /// Position in the task file.
    pub index: usize,
    pub id: String,
    /// Demonstration ids in prompt order.
    pub demonstrations: Vec<String>,
    pub outcome: Outcome,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub accuracy: Option<f64>,
    /// Mean F1 of each ROUGE variant.
    pub rouge1: Option<f64>,
    pub rouge2: Option<f64>,
    pub rouge_l: Option<f64>,
}

impl Aggregate {
    pub fn from_records(records: &[ExampleRecord]) -> Self {
        if records.is_empty() {
            return Self::default();
        }
        let n = records.len() as f64;
        let mut agg = Self::default();
        let mut correct = 0usize;
        let mut rouge = [0.0f64; 3];
        let mut any_choice = false;
        for r in records {
            match &r.outcome {
                Outcome::Choice { correct: c, .. } => {
                    any_choice = true;
                    correct += *c as usize;
                }
                Outcome::Generation {
                    rouge1,
                    rouge2,
                    rouge_l,
                    ..
                } => {
                    rouge[0] += rouge1;
                    rouge[1] += rouge2;
                    rouge[2] += rouge_l;
                }
            }
        }
        if any_choice {
            agg.accuracy = Some(correct as f64 / n);
        } else {
            agg.rouge1 = Some(rouge[0] / n);
            agg.rouge2 = Some(rouge[1] / n);
            agg.rouge_l = Some(rouge[2] / n);
        }
        agg
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrderingRecord {
    /// Positions into the fixed demonstration list.
    pub order: Vec<usize>,
    pub accuracy: f64,
    /// Chosen option per evaluated example, aligned with `EvalReport::examples`.
    pub chosen: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PermutationStats {
    pub n_orderings: usize,
    pub mean: f64,
    /// Population standard deviation of accuracy across orderings.
    pub std: f64,
    pub orderings: Vec<OrderingRecord>,
}

impl PermutationStats {
    pub fn from_orderings(orderings: Vec<OrderingRecord>) -> Self {
        let n = orderings.len() as f64;
        // shifted by the first value so identical accuracies give exactly 0
        let shift = orderings.first().map_or(0.0, |o| o.accuracy);
        let offset = orderings.iter().map(|o| o.accuracy - shift).sum::<f64>() / n;
        let var = orderings
            .iter()
            .map(|o| (o.accuracy - shift - offset).powi(2))
            .sum::<f64>()
            / n;
        let mean = shift + offset;
        Self {
            n_orderings: orderings.len(),
            mean,
            std: var.sqrt(),
            orderings,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub task: String,
    pub kind: TaskKind,
    pub mode: FusionMode,
    pub plan: PromptPlan,
    pub plan_digest: String,
    pub k: usize,
    pub seed: u64,
    pub sampling: ShotSetting,
    pub normalization: ScoreNormalization,
    pub n_evaluated: usize,
    pub examples: Vec<ExampleRecord>,
    pub aggregate: Aggregate,
    pub permutation: Option<PermutationStats>,
    /// Unix seconds; the only field that varies between identical runs.
    pub created_at: Option<u64>,
}

impl EvalReport {
    pub fn stamp_now(&mut self) {
        self.created_at = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .ok()
            .map(|d| d.as_secs());
    }

    pub fn without_timestamp(&self) -> Self {
        Self {
            created_at: None,
            ..self.clone()
        }
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Csv,
}

impl ReportFormat {
    /// `.csv` means csv; anything else is json.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("csv") => ReportFormat::Csv,
            _ => ReportFormat::Json,
        }
    }
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "json" => Ok(ReportFormat::Json),
            "csv" => Ok(ReportFormat::Csv),
            _ => Err(Error::Argument(format!("unknown report format {s:?}"))),
        }
    }
}

pub const CSV_HEADER: [&str; 17] = [
    "task",
    "mode",
    "k",
    "seed",
    "sampling",
    "placement",
    "use_sentinel",
    "mode_tag",
    "plan_digest",
    "n_evaluated",
    "accuracy",
    "rouge1",
    "rouge2",
    "rouge_l",
    "perm_mean",
    "perm_std",
    "n_orderings",
];

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn csv_row(r: &EvalReport) -> Vec<String> {
    let placement = serde_json::to_value(r.plan.placement)
        .ok()
        .and_then(|v| v.as_str().map(str::to_string))
        .unwrap_or_default();
    vec![
        r.task.clone(),
        r.mode.to_string(),
        r.k.to_string(),
        r.seed.to_string(),
        r.sampling.to_string(),
        placement,
        r.plan.use_sentinel.to_string(),
        r.plan.mode_tag.clone().unwrap_or_default(),
        r.plan_digest.clone(),
        r.n_evaluated.to_string(),
        opt(r.aggregate.accuracy),
        opt(r.aggregate.rouge1),
        opt(r.aggregate.rouge2),
        opt(r.aggregate.rouge_l),
        opt(r.permutation.as_ref().map(|p| p.mean)),
        opt(r.permutation.as_ref().map(|p| p.std)),
        r.permutation
            .as_ref()
            .map(|p| p.n_orderings.to_string())
            .unwrap_or_default(),
    ]
}

/// Writes the full report as JSON (overwriting), or appends one aggregate
/// row to a CSV file, writing the header only when the file is new or empty.
pub fn emit_report(
    report: &EvalReport,
    path: impl AsRef<Path>,
    format: ReportFormat,
) -> Result<()> {
    let path = path.as_ref();
    match format {
        ReportFormat::Json => fs::write(path, report.to_json()?)?,
        ReportFormat::Csv => {
            let fresh = fs::metadata(path).map(|m| m.len() == 0).unwrap_or(true);
            let file = OpenOptions::new().create(true).append(true).open(path)?;
            let mut w = csv::Writer::from_writer(file);
            if fresh {
                w.write_record(CSV_HEADER)?;
            }
            w.write_record(csv_row(report))?;
            w.flush()?;
        }
    }
    Ok(())
}
