use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{ClassCounts, CurationLedger, Setting};
use crate::error::{Error, Result};
use crate::harness::config::ExperimentConfig;
use crate::learn::{write_loss_csv, LossRecord};
use crate::nn::Family;
use crate::stats::{mean_accuracy, ConfusionCounts, Metrics, TTestResult};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusSummary {
    pub total: usize,
    pub counts: ClassCounts,
    pub train: ClassCounts,
    pub eval: ClassCounts,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub artifact_version: String,
    pub config_hash: String,
    pub seed: u64,
    pub config: ExperimentConfig,
    pub corpus: CorpusSummary,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Status {
    Ok,
    Failed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StageKind {
    /// Labeled part used as is.
    Direct,
    PseudoLabel,
    Cluster,
}

/// The label-producing step of one training set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub training_set: String,
    pub setting: Setting,
    pub kind: StageKind,
    pub status: Status,
    pub error: Option<String>,
    pub ledger: CurationLedger,
    pub ledger_audit: bool,
    /// Agreement of predicted labels with the hidden truth, scored after
    /// labeling through the audit path.
    pub label_accuracy: Option<f64>,
    pub probe_agreement: Option<f64>,
    pub history: Vec<LossRecord>,
    /// Ground-truth reads of this set's unlabeled samples, over the stage
    /// and every cell trained on it.
    pub tripwire_reads: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellProvenance {
    pub training_samples: usize,
    pub ground_truth_labels: usize,
    pub pseudo_labels: usize,
    pub cluster_labels: usize,
    pub tripwire_reads: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub training_set: String,
    pub setting: Setting,
    pub backbone: Family,
    pub status: Status,
    pub error: Option<String>,
    pub confusion: Option<ConfusionCounts>,
    pub metrics: Option<Metrics>,
    pub history: Vec<LossRecord>,
    pub provenance: CellProvenance,
}

impl CellResult {
    /// Accuracy in percent, if the cell finished.
    pub fn accuracy_pct(&self) -> Option<f64> {
        self.metrics.map(|m| m.accuracy * 100.0)
    }

    pub fn recall_pct(&self) -> Option<f64> {
        self.metrics.map(|m| m.recall * 100.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SetMean {
    pub training_set: String,
    pub setting: Setting,
    /// Mean accuracy over finished cells, percent at two decimals.
    pub accuracy: Option<f64>,
    pub finished_cells: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairwiseTest {
    pub a: String,
    pub b: String,
    pub result: Option<TTestResult>,
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub schema_version: u32,
    pub provenance: Provenance,
    pub stages: Vec<StageRecord>,
    pub cells: Vec<CellResult>,
    pub set_means: Vec<SetMean>,
    /// SL, Semi-SL and Self-SL, represented by TS1, TS4 and TS7.
    pub setting_means: Vec<SetMean>,
    pub t_tests: Vec<PairwiseTest>,
}

/// Which training set stands for each setting in summaries.
pub const SETTING_SETS: [(Setting, &str); 3] = [
    (Setting::Supervised, "TS1"),
    (Setting::SemiSupervised, "TS4"),
    (Setting::SelfSupervised, "TS7"),
];

impl ExperimentReport {
    pub fn cell(&self, training_set: &str, backbone: Family) -> Option<&CellResult> {
        self.cells
            .iter()
            .find(|c| c.training_set == training_set && c.backbone == backbone)
    }

    pub fn set_mean(&self, training_set: &str) -> Option<f64> {
        self.set_means
            .iter()
            .find(|m| m.training_set == training_set)
            .and_then(|m| m.accuracy)
    }

    pub fn ledgers_pass(&self) -> bool {
        self.stages.iter().all(|s| s.ledger_audit)
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::at_path(path, e))?;
        let r: ExperimentReport =
            serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        if r.schema_version != SCHEMA_VERSION {
            return Err(Error::Incompatible {
                what: "report schema",
                found: r.schema_version,
                expected: SCHEMA_VERSION,
            });
        }
        Ok(r)
    }

    fn presets(&self) -> &[Family] {
        &self.provenance.config.presets
    }

    fn sets(&self) -> Vec<String> {
        self.provenance.config.training_sets.iter().map(|t| t.name()).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ReportFormat {
    Json,
    Csv,
    PlotData,
}

impl std::str::FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "json" => Ok(ReportFormat::Json),
            "csv" => Ok(ReportFormat::Csv),
            "plotdata" => Ok(ReportFormat::PlotData),
            other => Err(Error::Config(format!("unknown report format `{other}`"))),
        }
    }
}

fn pct(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.2}")).unwrap_or_default()
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::at_path(path, e))
}

fn csv_bytes(rows: &[Vec<String>]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.write_record(r)?;
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

/// Backbone rows with `Ac`/`Rc` columns per training set, in percent.
pub fn table_rows(report: &ExperimentReport) -> Vec<Vec<String>> {
    let sets = report.sets();
    let mut header = vec!["backbone".to_string()];
    for s in &sets {
        header.push(format!("{s}_Ac"));
        header.push(format!("{s}_Rc"));
    }
    let mut rows = vec![header];
    for &b in report.presets() {
        let mut row = vec![b.name().to_string()];
        for s in &sets {
            let cell = report.cell(s, b);
            row.push(pct(cell.and_then(CellResult::accuracy_pct)));
            row.push(pct(cell.and_then(CellResult::recall_pct)));
        }
        rows.push(row);
    }
    rows
}

/// Backbone rows by setting plus a `Mean` row.
pub fn summary_rows(report: &ExperimentReport) -> Result<Vec<Vec<String>>> {
    let present: Vec<(Setting, &str)> = SETTING_SETS
        .iter()
        .copied()
        .filter(|(_, ts)| report.sets().iter().any(|s| s == ts))
        .collect();
    let mut header = vec!["backbone".to_string()];
    header.extend(present.iter().map(|(s, ts)| format!("{s} ({ts})")));
    let mut rows = vec![header];
    let mut columns: Vec<Vec<f64>> = vec![Vec::new(); present.len()];
    for &b in report.presets() {
        let mut row = vec![b.name().to_string()];
        for (col, (_, ts)) in columns.iter_mut().zip(&present) {
            let shown = report
                .cell(ts, b)
                .and_then(CellResult::accuracy_pct)
                .map(|a| format!("{a:.2}"));
            if let Some(s) = &shown {
                col.push(s.parse().expect("formatted number"));
            }
            row.push(shown.unwrap_or_default());
        }
        rows.push(row);
    }
    let mut mean = vec!["Mean".to_string()];
    for col in &columns {
        mean.push(if col.is_empty() {
            String::new()
        } else {
            format!("{:.2}", mean_accuracy(col)?)
        });
    }
    rows.push(mean);
    Ok(rows)
}

/// `training_set,backbone,accuracy` rows in percent.
pub fn plot_rows(report: &ExperimentReport) -> Vec<Vec<String>> {
    let mut rows = vec![vec!["training_set".into(), "backbone".into(), "accuracy".into()]];
    for s in report.sets() {
        for &b in report.presets() {
            let acc = report.cell(&s, b).and_then(CellResult::accuracy_pct);
            rows.push(vec![s.clone(), b.name().to_string(), pct(acc)]);
        }
    }
    rows
}

/// Writes the requested formats into `dir`, returning the paths written.
pub fn emit_report(report: &ExperimentReport, dir: &Path, formats: &[ReportFormat]) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::at_path(dir, e))?;
    let mut written = Vec::new();
    let mut formats = formats.to_vec();
    formats.sort();
    formats.dedup();
    for f in formats {
        match f {
            ReportFormat::Json => {
                let p = dir.join("report.json");
                write_file(&p, report.to_json()?.as_bytes())?;
                written.push(p);
            }
            ReportFormat::Csv => {
                let p = dir.join("table.csv");
                write_file(&p, &csv_bytes(&table_rows(report))?)?;
                written.push(p);
                let p = dir.join("summary.csv");
                write_file(&p, &csv_bytes(&summary_rows(report)?)?)?;
                written.push(p);
                let losses = dir.join("losses");
                fs::create_dir_all(&losses).map_err(|e| Error::at_path(&losses, e))?;
                for st in report.stages.iter().filter(|s| !s.history.is_empty()) {
                    let p = losses.join(format!("{}_{}.csv", st.training_set, stage_label(st.kind)));
                    write_loss_csv(&p, &st.history)?;
                    written.push(p);
                }
                for c in report.cells.iter().filter(|c| !c.history.is_empty()) {
                    let p = losses.join(format!("{}_{}.csv", c.training_set, c.backbone));
                    write_loss_csv(&p, &c.history)?;
                    written.push(p);
                }
            }
            ReportFormat::PlotData => {
                let p = dir.join("plotdata.csv");
                write_file(&p, &csv_bytes(&plot_rows(report))?)?;
                written.push(p);
            }
        }
    }
    Ok(written)
}

fn stage_label(kind: StageKind) -> &'static str {
    match kind {
        StageKind::Direct => "direct",
        StageKind::PseudoLabel => "teacher",
        StageKind::Cluster => "encoder",
    }
}
