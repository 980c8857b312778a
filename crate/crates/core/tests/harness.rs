use std::fs;
use std::path::PathBuf;

use labelforge::data::{SynthConfig, TrainingSetSpec};
use labelforge::harness::{
    compare_reports, emit_report, run_experiment, CorpusSource, ExperimentConfig, ExperimentReport, ReportFormat,
    Status,
};
use labelforge::nn::Family;

fn small_config() -> ExperimentConfig {
    let mut cfg = ExperimentConfig {
        corpus: CorpusSource::Synthetic(SynthConfig {
            count: 80,
            size: 16,
            ..SynthConfig::default()
        }),
        seed: 9,
        training_sets: ["TS1", "TS4", "TS7"].iter().map(|s| s.parse().unwrap()).collect(),
        ..ExperimentConfig::default()
    };
    cfg.supervised.epochs = 2;
    cfg.semi.epochs = 2;
    cfg.contrastive.epochs = 2;
    cfg.contrastive.batch_size = 16;
    cfg
}

fn scratch(name: &str) -> PathBuf {
    let dir = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("harness").join(name);
    let _ = fs::remove_dir_all(&dir);
    dir
}

fn clean() -> ExperimentReport {
    run_experiment(&small_config()).unwrap()
}

#[test]
fn grid_has_one_cell_per_set_and_backbone() {
    let report = clean();
    assert_eq!(report.cells.len(), 3 * 3);
    assert_eq!(report.stages.len(), 3);
    for ts in ["TS1", "TS4", "TS7"] {
        for b in Family::ALL {
            let cell = report.cell(ts, b).unwrap();
            assert_eq!(cell.status, Status::Ok, "{ts}/{}", b.name());
            assert!(cell.metrics.is_some());
        }
    }
    assert!(report.ledgers_pass());
    assert_eq!(report.provenance.config_hash, small_config().hash());
}

#[test]
fn cells_count_their_label_sources() {
    let report = clean();
    for c in &report.cells {
        let p = &c.provenance;
        assert_eq!(
            p.ground_truth_labels + p.pseudo_labels + p.cluster_labels,
            p.training_samples
        );
        match c.training_set.as_str() {
            "TS1" => assert_eq!((p.pseudo_labels, p.cluster_labels), (0, 0)),
            "TS4" => assert!(p.pseudo_labels > 0 && p.ground_truth_labels > 0 && p.cluster_labels == 0),
            "TS7" => assert_eq!((p.ground_truth_labels, p.pseudo_labels), (0, 0)),
            other => panic!("unexpected {other}"),
        }
        assert_eq!(p.tripwire_reads, 0);
    }
    let train = report.provenance.corpus.train.total();
    assert!(report.cells.iter().all(|c| c.provenance.training_samples == train));
}

#[test]
fn injected_faults_stay_in_their_cell() {
    let base = clean();
    let mut cfg = small_config();
    cfg.fault_injection = vec!["TS4/mini-vgg".into(), "TS7".into()];
    let faulted = run_experiment(&cfg).unwrap();
    for c in &faulted.cells {
        let hit = (c.training_set == "TS4" && c.backbone == Family::MiniVgg) || c.training_set == "TS7";
        if hit {
            assert_eq!(c.status, Status::Failed, "{}/{}", c.training_set, c.backbone.name());
            assert!(c.error.is_some());
        } else {
            let clean_cell = base.cell(&c.training_set, c.backbone).unwrap();
            assert_eq!(c, clean_cell);
        }
    }
    assert!(faulted.set_mean("TS7").is_none());
    assert_eq!(faulted.set_mean("TS1"), base.set_mean("TS1"));
}

#[test]
fn emitted_files_are_reproducible() {
    let report = clean();
    let formats = [ReportFormat::Json, ReportFormat::Csv, ReportFormat::PlotData];
    let (a, b) = (scratch("emit-a"), scratch("emit-b"));
    let written = emit_report(&report, &a, &formats).unwrap();
    emit_report(&run_experiment(&small_config()).unwrap(), &b, &formats).unwrap();
    for p in &written {
        let rel = p.strip_prefix(&a).unwrap();
        assert_eq!(
            fs::read(p).unwrap(),
            fs::read(b.join(rel)).unwrap(),
            "{}",
            rel.display()
        );
    }
    assert_eq!(ExperimentReport::load(&a.join("report.json")).unwrap(), report);

    let table = fs::read_to_string(a.join("table.csv")).unwrap();
    let rows: Vec<Vec<&str>> = table.lines().map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 1 + 3);
    assert!(rows.iter().all(|r| r.len() == 1 + 2 * 3));
    assert_eq!(rows[0][1], "TS1_Ac");
    let summary = fs::read_to_string(a.join("summary.csv")).unwrap();
    assert_eq!(
        summary.lines().next().unwrap(),
        "backbone,SL (TS1),Semi-SL (TS4),Self-SL (TS7)"
    );
    assert!(summary.lines().last().unwrap().starts_with("Mean,"));
}

#[test]
fn full_grid_table_has_fourteen_metric_columns() {
    let mut cfg = small_config();
    cfg.training_sets = TrainingSetSpec::all();
    cfg.supervised.epochs = 1;
    cfg.semi.epochs = 1;
    cfg.contrastive.epochs = 1;
    let report = run_experiment(&cfg).unwrap();
    let dir = scratch("full");
    emit_report(&report, &dir, &[ReportFormat::Csv]).unwrap();
    let table = fs::read_to_string(dir.join("table.csv")).unwrap();
    let rows: Vec<usize> = table.lines().map(|l| l.split(',').count()).collect();
    assert_eq!(rows, vec![15; 4]);
}

#[test]
fn comparing_a_report_with_itself_finds_no_difference() {
    let report = clean();
    let tests = compare_reports(&report, &report).unwrap();
    assert!(!tests.is_empty());
    for t in tests {
        let r = t.result.unwrap();
        assert_eq!((r.t_value, r.p_two_tailed), (0.0, 1.0), "{}", t.a);
    }
}
