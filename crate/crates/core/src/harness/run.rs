use rand::Rng as _;
use rayon::prelude::*;

use crate::data::{
    curate_training_set, generate_synthetic, load_corpus, merge_pseudo, split_train_eval, Class, Curated, Dataset,
    LabelSource, Setting, TrainingSetSpec,
};
use crate::error::{Error, Result};
use crate::harness::config::{CorpusSource, ExperimentConfig};
use crate::harness::report::{
    CellProvenance, CellResult, CorpusSummary, ExperimentReport, PairwiseTest, Provenance, SetMean, StageKind,
    StageRecord, Status, SCHEMA_VERSION, SETTING_SETS,
};
use crate::learn::{cluster_label, predict, pretrain_contrastive, train_semi_supervised, train_supervised, LossRecord};
use crate::nn::{build_backbone, BackbonePreset, Family};
use crate::rng_stream;
use crate::stats::{confusion, mean_accuracy, metrics, paired_t_test};
use crate::Model;

/// Environment variable capping cell parallelism.
pub const THREADS_ENV: &str = "LABELFORGE_THREADS";

/// A `u64` seed for one keyed unit of work.
fn sub_seed(master: u64, kind: &str, ts: &str, preset: &str) -> u64 {
    rng_stream!(master, kind, ts, preset).random()
}

pub fn load_dataset(source: &CorpusSource, seed: u64) -> Result<Dataset> {
    match source {
        CorpusSource::Synthetic(s) => generate_synthetic(s, seed),
        CorpusSource::Manifest(p) => load_corpus(p),
    }
}

fn preset_for(family: Family, ds: &Dataset) -> Result<BackbonePreset> {
    let first = ds.samples().first().ok_or(Error::EmptyCorpus)?.pixels();
    Ok(BackbonePreset::new(family).with_input_size(first.height, first.width, first.channels))
}

/// Labels every sample of a curated set for final training.
struct Stage {
    record: StageRecord,
    training: Option<Dataset>,
}

fn label_accuracy(ds: &Dataset) -> Option<f64> {
    if ds.is_empty() {
        return None;
    }
    let hits = ds
        .iter()
        .filter(|s| s.assigned_label().is_some() && s.assigned_label() == s.audit_true_label())
        .count();
    Some(hits as f64 / ds.len() as f64)
}

fn run_stage(cfg: &ExperimentConfig, spec: TrainingSetSpec, curated: &Curated, eval: &Dataset) -> Stage {
    let ts = spec.name();
    let mut ledger = curated.ledger.clone();
    let kind = match spec.setting() {
        Setting::Supervised => StageKind::Direct,
        Setting::SemiSupervised => StageKind::PseudoLabel,
        Setting::SelfSupervised => StageKind::Cluster,
    };
    let mut history: Vec<LossRecord> = Vec::new();
    let mut probe_agreement = None;
    let mut label_acc = None;
    let result = (|| -> Result<Dataset> {
        if cfg.faulted(&ts) {
            return Err(Error::InjectedFault(ts.clone()));
        }
        let seed = sub_seed(cfg.seed, "stage", &ts, "");
        let relabeled = match kind {
            StageKind::Direct => Dataset::default(),
            StageKind::PseudoLabel => {
                let preset = preset_for(cfg.teacher_preset, &curated.labeled)?;
                let out = train_semi_supervised::<f32>(&preset, &curated.labeled, &curated.unlabeled, &cfg.semi, seed)?;
                history = out.history;
                out.relabeled
            }
            StageKind::Cluster => {
                let preset = preset_for(cfg.encoder_preset, &curated.unlabeled)?;
                let (encoder, h) = pretrain_contrastive::<f32>(&preset, &curated.unlabeled, &cfg.contrastive, seed)?;
                history = h;
                let out = cluster_label(&encoder, &curated.unlabeled, eval, seed)?;
                probe_agreement = Some(out.labeler.probe_agreement);
                out.relabeled
            }
        };
        label_acc = label_accuracy(&relabeled);
        merge_pseudo(&curated.labeled, &relabeled, &mut ledger)
    })();
    let (status, error, training) = match result {
        Ok(d) => (Status::Ok, None, Some(d)),
        Err(e) => (Status::Failed, Some(e.to_string()), None),
    };
    Stage {
        record: StageRecord {
            training_set: ts,
            setting: spec.setting(),
            kind,
            status,
            error,
            ledger_audit: ledger.audit(),
            ledger,
            label_accuracy: label_acc,
            probe_agreement,
            history,
            tripwire_reads: 0,
        },
        training,
    }
}

fn provenance_of(ds: &Dataset) -> CellProvenance {
    let count = |src: LabelSource| ds.iter().filter(|s| s.label_source() == src).count();
    CellProvenance {
        training_samples: ds.len(),
        ground_truth_labels: count(LabelSource::GroundTruth),
        pseudo_labels: count(LabelSource::Pseudo),
        cluster_labels: count(LabelSource::Cluster),
        tripwire_reads: 0,
    }
}

/// Trains one backbone on the stage output and scores it on `eval`.
fn run_cell(
    cfg: &ExperimentConfig,
    spec: TrainingSetSpec,
    family: Family,
    training: Option<&Dataset>,
    stage_error: Option<&str>,
    eval: &Dataset,
) -> CellResult {
    let ts = spec.name();
    let mut cell = CellResult {
        training_set: ts.clone(),
        setting: spec.setting(),
        backbone: family,
        status: Status::Failed,
        error: None,
        confusion: None,
        metrics: None,
        history: Vec::new(),
        provenance: training.map(provenance_of).unwrap_or_default(),
    };
    let result = (|| -> Result<_> {
        let training = training
            .ok_or_else(|| Error::Usage(format!("stage failed: {}", stage_error.unwrap_or("unknown error"))))?;
        if cfg.faulted(&format!("{ts}/{family}")) {
            return Err(Error::InjectedFault(format!("{ts}/{family}")));
        }
        let seed = sub_seed(cfg.seed, "cell", &ts, family.name());
        let mut model: Model = build_backbone(&preset_for(family, training)?, seed)?;
        model.drop_projection_head();
        let history = train_supervised(&mut model, training, &cfg.supervised, seed)?;
        let preds = predict(&model, eval)?;
        let truth: Vec<Class> = eval
            .iter()
            .map(|s| {
                s.true_label()
                    .ok_or_else(|| Error::Usage("eval sample without label".into()))
            })
            .collect::<Result<_>>()?;
        let counts = confusion(&preds, &truth, Class::Malignant)?;
        Ok((history, counts, metrics(&counts)?))
    })();
    match result {
        Ok((history, counts, m)) => {
            cell.status = Status::Ok;
            cell.history = history;
            cell.confusion = Some(counts);
            cell.metrics = Some(m);
        }
        Err(e) => cell.error = Some(e.to_string()),
    }
    cell
}

fn thread_count() -> Result<usize> {
    match std::env::var(THREADS_ENV) {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(n),
            _ => Err(Error::Config(format!(
                "{THREADS_ENV} must be a positive integer, got `{v}`"
            ))),
        },
        Err(_) => Ok(std::thread::available_parallelism().map_or(1, |n| n.get())),
    }
}

fn two_dp(x: f64) -> f64 {
    (x * 100.0).round() / 100.0
}

fn mean_of(cells: &[&CellResult]) -> Result<Option<f64>> {
    let accs: Vec<f64> = cells.iter().filter_map(|c| c.accuracy_pct()).map(two_dp).collect();
    if accs.is_empty() {
        Ok(None)
    } else {
        mean_accuracy(&accs).map(Some)
    }
}

fn summarize(report: &mut ExperimentReport) -> Result<()> {
    let presets = report.provenance.config.presets.clone();
    let mut set_means = Vec::new();
    for spec in &report.provenance.config.training_sets {
        let ts = spec.name();
        let cells: Vec<&CellResult> = report.cells.iter().filter(|c| c.training_set == ts).collect();
        set_means.push(SetMean {
            training_set: ts,
            setting: spec.setting(),
            accuracy: mean_of(&cells)?,
            finished_cells: cells.iter().filter(|c| c.status == Status::Ok).count(),
        });
    }
    let setting_means: Vec<SetMean> = SETTING_SETS
        .iter()
        .filter_map(|(_, ts)| set_means.iter().find(|m| &m.training_set == ts).cloned())
        .collect();

    // Paired over backbones: entry i of each vector is preset i.
    let vector = |ts: &str| -> Option<Vec<f64>> {
        presets
            .iter()
            .map(|&b| report.cell(ts, b).and_then(CellResult::accuracy_pct))
            .collect()
    };
    let mut t_tests = Vec::new();
    for (i, (sa, ta)) in SETTING_SETS.iter().enumerate() {
        for (sb, tb) in &SETTING_SETS[i + 1..] {
            let selected = |t: &str| setting_means.iter().any(|m| m.training_set == t);
            if !selected(ta) || !selected(tb) {
                continue;
            }
            let (result, note) = match (vector(ta), vector(tb)) {
                (Some(a), Some(b)) if a.len() >= 2 => (Some(paired_t_test(&a, &b)?), None),
                (Some(_), Some(_)) => (None, Some("fewer than two backbones".to_string())),
                _ => (None, Some("a paired cell failed".to_string())),
            };
            t_tests.push(PairwiseTest {
                a: sa.name().to_string(),
                b: sb.name().to_string(),
                result,
                note,
            });
        }
    }
    report.set_means = set_means;
    report.setting_means = setting_means;
    report.t_tests = t_tests;
    Ok(())
}

/// Runs the whole grid. Failures of single stages or cells are recorded in
/// the report; only configuration and corpus errors abort.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    let corpus = load_dataset(&cfg.corpus, cfg.seed)?;
    let (train, eval) = split_train_eval(&corpus, cfg.train_fraction, cfg.seed)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(thread_count()?)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;

    let per_set: Vec<(StageRecord, Vec<CellResult>)> = pool.install(|| {
        cfg.training_sets
            .par_iter()
            .map(|&spec| -> Result<_> {
                let curated = curate_training_set(&train, spec, cfg.seed)?;
                let stage = run_stage(cfg, spec, &curated, &eval);
                let mut cells: Vec<CellResult> = cfg
                    .presets
                    .par_iter()
                    .map(|&f| {
                        run_cell(
                            cfg,
                            spec,
                            f,
                            stage.training.as_ref(),
                            stage.record.error.as_deref(),
                            &eval,
                        )
                    })
                    .collect();
                // Read after every cell of the set has finished.
                let reads = curated.tripwire.reads();
                let mut record = stage.record;
                record.tripwire_reads = reads;
                cells.iter_mut().for_each(|c| c.provenance.tripwire_reads = reads);
                Ok((record, cells))
            })
            .collect::<Result<Vec<_>>>()
    })?;

    let (stages, cells): (Vec<_>, Vec<_>) = per_set.into_iter().unzip();
    let mut report = ExperimentReport {
        schema_version: SCHEMA_VERSION,
        provenance: Provenance {
            artifact_version: env!("CARGO_PKG_VERSION").to_string(),
            config_hash: cfg.hash(),
            seed: cfg.seed,
            config: cfg.clone(),
            corpus: CorpusSummary {
                total: corpus.len(),
                counts: corpus.audit_true_counts(),
                train: train.audit_true_counts(),
                eval: eval.audit_true_counts(),
            },
        },
        stages,
        cells: cells.into_iter().flatten().collect(),
        set_means: Vec::new(),
        setting_means: Vec::new(),
        t_tests: Vec::new(),
    };
    summarize(&mut report)?;
    Ok(report)
}

/// Pairs every cell present in both reports and t-tests their accuracies,
/// overall and per setting.
pub fn compare_reports(a: &ExperimentReport, b: &ExperimentReport) -> Result<Vec<PairwiseTest>> {
    let mut groups: Vec<(String, Option<Setting>)> = vec![("all".into(), None)];
    groups.extend(
        [Setting::Supervised, Setting::SemiSupervised, Setting::SelfSupervised]
            .iter()
            .map(|s| (s.name().to_string(), Some(*s))),
    );
    let mut out = Vec::new();
    for (name, setting) in groups {
        let (mut xa, mut xb) = (Vec::new(), Vec::new());
        for ca in a.cells.iter().filter(|c| setting.is_none_or(|s| c.setting == s)) {
            if let (Some(va), Some(vb)) = (
                ca.accuracy_pct(),
                b.cell(&ca.training_set, ca.backbone).and_then(CellResult::accuracy_pct),
            ) {
                xa.push(va);
                xb.push(vb);
            }
        }
        let (result, note) = if xa.len() >= 2 {
            (Some(paired_t_test(&xa, &xb)?), None)
        } else {
            (None, Some(format!("{} paired cells", xa.len())))
        };
        out.push(PairwiseTest {
            a: format!("A:{name}"),
            b: format!("B:{name}"),
            result,
            note,
        });
    }
    Ok(out)
}
