use super::HarnessError;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub run_index: usize,
    pub condition: String,
    /// Ensemble top-1 error on the blind test split.
    pub error_rate: f64,
    pub member_error_rates: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionSummary {
    pub condition: String,
    pub mean_error_rate: f64,
    pub std_error_rate: f64,
    /// Training-set size in run 0 (identical across runs).
    pub training_size: usize,
    /// Selected utterances added to the training set.
    pub added: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub condition: String,
    pub reference: String,
    pub mean_reference: f64,
    pub mean_condition: f64,
    /// `(mean_reference - mean_condition) / mean_reference`; null when the reference mean is 0.
    pub relative_error_reduction: Option<f64>,
    pub welch_p: f64,
    pub permutation_p: f64,
    pub permutation_exact: bool,
    /// Both p-values on the same side of 0.05.
    pub tests_agree: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationSummary {
    pub strategy: String,
    pub requested: usize,
    /// Candidates proposed for grading.
    pub proposed: usize,
    pub graded_count: usize,
    pub labeled_count: usize,
    pub ood_discarded_count: usize,
    /// `ood_discarded_count / graded_count`, 0 when nothing was graded.
    pub ood_rate: f64,
    /// Fewer than `requested` in-domain labels were obtained.
    pub shortfall: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    /// `swap` or `add`.
    pub protocol: String,
    pub count: usize,
    pub n_runs: usize,
    /// Effective configuration the report was produced from.
    pub config: BTreeMap<String, String>,
    /// Dev utterances misclassified by at least one member of the run-0 baseline.
    pub dev_errors: usize,
    /// Of those, the ones the ensemble itself gets wrong.
    pub dev_ensemble_errors: usize,
    /// Baseline first, then strategies in configuration order.
    pub conditions: Vec<ConditionSummary>,
    pub comparisons: Vec<ComparisonRow>,
    pub annotation: Vec<AnnotationSummary>,
    /// Ordered by run, then condition.
    pub runs: Vec<RunMetrics>,
}

impl ComparisonReport {
    pub fn condition(&self, name: &str) -> Option<&ConditionSummary> {
        self.conditions.iter().find(|c| c.condition == name)
    }

    pub fn comparison(&self, condition: &str, reference: &str) -> Option<&ComparisonRow> {
        self.comparisons.iter().find(|c| c.condition == condition && c.reference == reference)
    }

    pub fn annotation_for(&self, strategy: &str) -> Option<&AnnotationSummary> {
        self.annotation.iter().find(|a| a.strategy == strategy)
    }

    pub fn error_rates(&self, condition: &str) -> Vec<f64> {
        self.runs.iter().filter(|r| r.condition == condition).map(|r| r.error_rate).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Csv,
}

impl ReportFormat {
    pub fn parse(s: &str) -> Option<ReportFormat> {
        match s {
            "json" => Some(ReportFormat::Json),
            "csv" => Some(ReportFormat::Csv),
            _ => None,
        }
    }

    /// Format implied by a `.csv` extension; JSON otherwise.
    pub fn from_path(path: &Path) -> ReportFormat {
        match path.extension().and_then(|e| e.to_str()) {
            Some("csv") => ReportFormat::Csv,
            _ => ReportFormat::Json,
        }
    }
}

const CSV_HEADER: &[&str] = &[
    "kind",
    "run",
    "condition",
    "reference",
    "error_rate",
    "member_error_rates",
    "mean",
    "std",
    "training_size",
    "added",
    "relative_error_reduction",
    "welch_p",
    "permutation_p",
    "tests_agree",
    "requested",
    "proposed",
    "graded",
    "labeled",
    "ood_discarded",
    "ood_rate",
    "shortfall",
];

fn csv_row(fields: &[(&str, String)]) -> Vec<String> {
    CSV_HEADER.iter().map(|h| fields.iter().find(|(k, _)| k == h).map(|(_, v)| v.clone()).unwrap_or_default()).collect()
}

/// Header, then one row per run per condition, then the summary block:
/// condition means, pairwise comparisons and annotation accounting.
pub fn write_csv<W: Write>(report: &ComparisonReport, out: W) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_HEADER)?;
    for r in &report.runs {
        let members = r.member_error_rates.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(";");
        w.write_record(csv_row(&[
            ("kind", "run".into()),
            ("run", r.run_index.to_string()),
            ("condition", r.condition.clone()),
            ("error_rate", r.error_rate.to_string()),
            ("member_error_rates", members),
        ]))?;
    }
    for c in &report.conditions {
        w.write_record(csv_row(&[
            ("kind", "condition".into()),
            ("condition", c.condition.clone()),
            ("mean", c.mean_error_rate.to_string()),
            ("std", c.std_error_rate.to_string()),
            ("training_size", c.training_size.to_string()),
            ("added", c.added.to_string()),
        ]))?;
    }
    for c in &report.comparisons {
        w.write_record(csv_row(&[
            ("kind", "comparison".into()),
            ("condition", c.condition.clone()),
            ("reference", c.reference.clone()),
            ("mean", c.mean_condition.to_string()),
            ("relative_error_reduction", c.relative_error_reduction.map(|x| x.to_string()).unwrap_or_default()),
            ("welch_p", c.welch_p.to_string()),
            ("permutation_p", c.permutation_p.to_string()),
            ("tests_agree", c.tests_agree.to_string()),
        ]))?;
    }
    for a in &report.annotation {
        w.write_record(csv_row(&[
            ("kind", "annotation".into()),
            ("condition", a.strategy.clone()),
            ("requested", a.requested.to_string()),
            ("proposed", a.proposed.to_string()),
            ("graded", a.graded_count.to_string()),
            ("labeled", a.labeled_count.to_string()),
            ("ood_discarded", a.ood_discarded_count.to_string()),
            ("ood_rate", a.ood_rate.to_string()),
            ("shortfall", a.shortfall.to_string()),
        ]))?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_json<W: Write>(report: &ComparisonReport, mut out: W) -> Result<(), HarnessError> {
    serde_json::to_writer_pretty(&mut out, report)?;
    out.write_all(b"\n")?;
    out.flush()?;
    Ok(())
}

pub fn emit_report(
    report: &ComparisonReport,
    path: impl AsRef<Path>,
    format: ReportFormat,
) -> Result<(), HarnessError> {
    let path = path.as_ref();
    let file =
        std::fs::File::create(path).map_err(|e| HarnessError::Io { path: path.display().to_string(), source: e })?;
    let out = std::io::BufWriter::new(file);
    match format {
        ReportFormat::Json => write_json(report, out),
        ReportFormat::Csv => write_csv(report, out),
    }
}

pub fn read_report(path: impl AsRef<Path>) -> Result<ComparisonReport, HarnessError> {
    let path = path.as_ref();
    let file =
        std::fs::File::open(path).map_err(|e| HarnessError::Io { path: path.display().to_string(), source: e })?;
    Ok(serde_json::from_reader(std::io::BufReader::new(file))?)
}
