//! Command-line front end for the labelforge experiment harness.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use labelforge::data::{
    attach_hidden_truth, curate_training_set, generate_synthetic, load_corpus, load_manifest, split_train_eval,
    write_corpus, write_manifest, write_truth, Class, Dataset, TrainingSetSpec,
};
use labelforge::harness::{
    compare_reports, emit_report, run_experiment, CorpusSource, ExperimentConfig, ExperimentReport, ReportFormat,
};
use labelforge::learn::{
    cluster_label, predict, pretrain_contrastive, train_semi_supervised, train_supervised, write_loss_csv, Refresh,
};
use labelforge::nn::{build_backbone, load_checkpoint, save_checkpoint, BackbonePreset, Family};
use labelforge::stats::{confusion, metrics};
use labelforge::{Error, Model, Result};
use serde_json::json;

#[derive(Parser)]
#[command(
    name = "labelforge",
    version,
    about = "Compare supervised, semi-supervised and self-supervised training under shrinking label budgets"
)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Experiment config (JSON); defaults apply to missing fields.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Master seed, overriding the config.
    #[arg(long, global = true, value_name = "U64")]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, value_name = "DIR", default_value = "labelforge-out")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic two-class corpus.
    Synth,
    /// Split a corpus and write labeled/unlabeled manifests and ledgers.
    Curate {
        /// Corpus manifest; without it the config's corpus is used.
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(
            long,
            alias = "set",
            value_delimiter = ',',
            default_value = "TS1,TS2,TS3,TS4,TS5,TS6,TS7"
        )]
        sets: Vec<String>,
    },
    /// Train one backbone on labeled manifests (several are concatenated).
    Train {
        #[arg(long, required = true)]
        labeled: Vec<PathBuf>,
        #[arg(long, default_value = "mini-res")]
        preset: String,
    },
    /// Contrastive pretraining of an encoder on an unlabeled manifest.
    Pretrain {
        #[arg(long)]
        unlabeled: PathBuf,
        #[arg(long, default_value = "mini-res")]
        preset: String,
    },
    /// Assign labels to an unlabeled manifest.
    Label {
        #[arg(value_enum)]
        mode: LabelMode,
        #[arg(long)]
        unlabeled: PathBuf,
        /// Labeled manifest for the pseudo-label teacher.
        #[arg(long)]
        labeled: Option<PathBuf>,
        /// Encoder checkpoint for cluster labeling.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Labeled probe manifest naming the clusters.
        #[arg(long)]
        probe: Option<PathBuf>,
        /// Hidden-truth file (`id,label`) used only to score the result.
        #[arg(long)]
        truth: Option<PathBuf>,
        #[arg(long, default_value = "mini-res")]
        preset: String,
        /// Pseudo-label refresh: `per-epoch` or `once`.
        #[arg(long)]
        refresh: Option<String>,
    },
    /// Score a checkpoint on a labeled manifest.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
    },
    /// Paired t-tests between the cell accuracies of two reports.
    Compare { a: PathBuf, b: PathBuf },
    /// Run the full training-set by backbone grid.
    RunAll {
        /// Training sets to run, e.g. `TS1,TS4,TS7`.
        #[arg(long, value_delimiter = ',')]
        sets: Option<Vec<String>>,
        /// Backbones, e.g. `mini-res,mini-vgg`.
        #[arg(long, value_delimiter = ',')]
        presets: Option<Vec<String>>,
        /// Any of `json`, `csv`, `plotdata`.
        #[arg(long, value_delimiter = ',', default_value = "json,csv,plotdata")]
        format: Vec<String>,
        /// Pseudo-label refresh: `per-epoch` or `once`.
        #[arg(long)]
        refresh: Option<String>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum LabelMode {
    Pseudo,
    Cluster,
}

fn config(g: &Global) -> Result<ExperimentConfig> {
    let mut cfg = match &g.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = g.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn mkdir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::Path {
        path: dir.to_path_buf(),
        source: e,
    })
}

fn print_json(v: &serde_json::Value) -> Result<()> {
    let text = serde_json::to_string_pretty(v)?;
    match writeln!(std::io::stdout().lock(), "{text}") {
        // A closed pipe (`| head`) is not an error worth reporting.
        Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => Ok(()),
        other => Ok(other?),
    }
}

fn preset_for(name: &str, ds: &Dataset) -> Result<BackbonePreset> {
    let family: Family = name.parse()?;
    let img = ds.samples().first().ok_or(Error::EmptyCorpus)?.pixels();
    Ok(BackbonePreset::new(family).with_input_size(img.height, img.width, img.channels))
}

fn concat(paths: &[PathBuf]) -> Result<Dataset> {
    let mut all = Vec::new();
    for p in paths {
        all.extend(load_manifest(p)?.into_samples());
    }
    Ok(Dataset::new(all))
}

fn truth_of(ds: &Dataset) -> Result<Vec<Class>> {
    ds.iter()
        .map(|s| {
            s.true_label()
                .ok_or_else(|| Error::Usage(format!("sample `{}` has no label", s.id())))
        })
        .collect()
}

fn corpus_on_disk(cfg: &ExperimentConfig, manifest: Option<&Path>, out: &Path) -> Result<Dataset> {
    match (manifest, &cfg.corpus) {
        (Some(m), _) => load_corpus(m),
        (None, CorpusSource::Manifest(m)) => load_corpus(m),
        (None, CorpusSource::Synthetic(s)) => write_corpus(&out.join("corpus"), &generate_synthetic(s, cfg.seed)?),
    }
}

fn run(cli: Cli) -> Result<()> {
    let g = &cli.global;
    let out = &g.out;
    match cli.command {
        Command::Synth => {
            let cfg = config(g)?;
            let CorpusSource::Synthetic(s) = &cfg.corpus else {
                return Err(Error::Usage("config corpus is a manifest, not a synthetic spec".into()));
            };
            mkdir(out)?;
            let ds = write_corpus(out, &generate_synthetic(s, cfg.seed)?)?;
            print_json(&json!({ "manifest": out.join("manifest.csv"), "counts": ds.assigned_counts() }))
        }
        Command::Curate { manifest, sets } => {
            let cfg = config(g)?;
            let specs: Vec<TrainingSetSpec> = sets.iter().map(|s| s.parse()).collect::<Result<_>>()?;
            mkdir(out)?;
            let corpus = corpus_on_disk(&cfg, manifest.as_deref(), out)?;
            let (train, eval) = split_train_eval(&corpus, cfg.train_fraction, cfg.seed)?;
            write_manifest(&out.join("train.csv"), &train, false)?;
            write_manifest(&out.join("eval.csv"), &eval, false)?;
            let mut ledgers = Vec::new();
            for spec in specs {
                let c = curate_training_set(&train, spec, cfg.seed)?;
                let dir = out.join(spec.name());
                mkdir(&dir)?;
                write_manifest(&dir.join("labeled.csv"), &c.labeled, true)?;
                write_manifest(&dir.join("unlabeled.csv"), &c.unlabeled, true)?;
                write_truth(&dir.join("unlabeled_truth.csv"), &c.unlabeled)?;
                fs::write(dir.join("ledger.json"), serde_json::to_string_pretty(&c.ledger)? + "\n")?;
                ledgers.push(c.ledger);
            }
            print_json(&json!({ "train": train.len(), "eval": eval.len(), "ledgers": ledgers }))
        }
        Command::Train { labeled, preset } => {
            let cfg = config(g)?;
            let ds = concat(&labeled)?;
            let mut model: Model = build_backbone(&preset_for(&preset, &ds)?, cfg.seed)?;
            model.drop_projection_head();
            let history = train_supervised(&mut model, &ds, &cfg.supervised, cfg.seed)?;
            mkdir(out)?;
            save_checkpoint(&model, out.join("model.lfck"))?;
            write_loss_csv(&out.join("losses.csv"), &history)?;
            print_json(
                &json!({ "checkpoint": out.join("model.lfck"), "samples": ds.len(), "final_loss": history.last().map(|h| h.loss) }),
            )
        }
        Command::Pretrain { unlabeled, preset } => {
            let cfg = config(g)?;
            let ds = load_manifest(&unlabeled)?;
            let (model, history) =
                pretrain_contrastive::<f32>(&preset_for(&preset, &ds)?, &ds, &cfg.contrastive, cfg.seed)?;
            mkdir(out)?;
            save_checkpoint(&model, out.join("encoder.lfck"))?;
            write_loss_csv(&out.join("losses.csv"), &history)?;
            print_json(&json!({ "checkpoint": out.join("encoder.lfck"), "final_loss": history.last().map(|h| h.loss) }))
        }
        Command::Label {
            mode,
            unlabeled,
            labeled,
            checkpoint,
            probe,
            truth,
            preset,
            refresh,
        } => {
            let mut cfg = config(g)?;
            if let Some(r) = refresh {
                cfg.semi.refresh = r.parse::<Refresh>()?;
            }
            let mut pool = load_manifest(&unlabeled)?;
            if let Some(t) = &truth {
                pool = attach_hidden_truth(&pool, t)?;
            }
            mkdir(out)?;
            let relabeled = match mode {
                LabelMode::Pseudo => {
                    let labeled = labeled.ok_or_else(|| Error::Usage("pseudo labeling needs --labeled".into()))?;
                    let labeled = load_manifest(&labeled)?;
                    let o = train_semi_supervised::<f32>(
                        &preset_for(&preset, &labeled)?,
                        &labeled,
                        &pool,
                        &cfg.semi,
                        cfg.seed,
                    )?;
                    save_checkpoint(&o.teacher, out.join("teacher.lfck"))?;
                    write_loss_csv(&out.join("losses.csv"), &o.history)?;
                    o.relabeled
                }
                LabelMode::Cluster => {
                    let ck = checkpoint.ok_or_else(|| Error::Usage("cluster labeling needs --checkpoint".into()))?;
                    let probe = probe.ok_or_else(|| Error::Usage("cluster labeling needs --probe".into()))?;
                    let encoder: Model = load_checkpoint(&ck)?;
                    cluster_label(&encoder, &pool, &load_corpus(&probe)?, cfg.seed)?.relabeled
                }
            };
            write_manifest(&out.join("relabeled.csv"), &relabeled, true)?;
            let scored: Vec<bool> = relabeled
                .iter()
                .filter_map(|s| s.audit_true_label().map(|t| Some(t) == s.assigned_label()))
                .collect();
            let accuracy =
                (!scored.is_empty()).then(|| scored.iter().filter(|&&b| b).count() as f64 / scored.len() as f64);
            print_json(&json!({
                "relabeled": out.join("relabeled.csv"),
                "counts": relabeled.assigned_counts(),
                "label_accuracy": accuracy,
            }))
        }
        Command::Evaluate { checkpoint, manifest } => {
            let model: Model = load_checkpoint(&checkpoint)?;
            let ds = load_corpus(&manifest)?;
            let counts = confusion(&predict(&model, &ds)?, &truth_of(&ds)?, Class::Malignant)?;
            print_json(&json!({ "confusion": counts, "metrics": metrics(&counts)? }))
        }
        Command::Compare { a, b } => {
            let tests = compare_reports(&ExperimentReport::load(&a)?, &ExperimentReport::load(&b)?)?;
            print_json(&serde_json::to_value(tests)?)
        }
        Command::RunAll {
            sets,
            presets,
            format,
            refresh,
        } => {
            let mut cfg = config(g)?;
            if let Some(s) = sets {
                cfg.training_sets = s.iter().map(|x| x.parse()).collect::<Result<_>>()?;
            }
            if let Some(p) = presets {
                cfg.presets = p.iter().map(|x| x.parse()).collect::<Result<_>>()?;
            }
            if let Some(r) = refresh {
                cfg.semi.refresh = r.parse()?;
            }
            let formats: Vec<ReportFormat> = format.iter().map(|f| f.parse()).collect::<Result<_>>()?;
            let report = run_experiment(&cfg)?;
            let written = emit_report(&report, out, &formats)?;
            for m in &report.set_means {
                eprintln!(
                    "{} {:<8} {}",
                    m.training_set,
                    m.setting.name(),
                    m.accuracy.map_or("failed".to_string(), |a| format!("{a:.2}"))
                );
            }
            print_json(&json!({ "written": written, "config_hash": report.provenance.config_hash }))
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
