//! Command-line front end. Every subcommand writes `run_manifest.json` next to
//! its outputs: the resolved configuration, seeds and content hashes.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{info, warn};
use serde_json::json;

use crate::baselines::{fit_hmm, train_independent, HMM_SMOOTHING};
use crate::datagen::{generate_dataset, read_dataset, write_dataset, Demonstration, GeneratorConfig};
use crate::error::{Error, Result};
use crate::eval::{write_report, EvalReport};
use crate::losses::DlossMode;
use crate::pipeline::{compare_methods, config_hash, file_sha256, split_for, BaselineSelection, INDEPENDENT, NN_HMM};
use crate::stream::{replay_demos, write_timeline, DEFAULT_EMIT_EVERY};
use crate::taxonomy::Taxonomy;
use crate::training::{load_checkpoint, save_checkpoint, train_on_dataset, TrainConfig, TrainRun, WEIGHTS_FILE};

pub const DATASET_FILE: &str = "dataset.jsonl";
pub const GENERATOR_FILE: &str = "generator.toml";
pub const RUN_MANIFEST: &str = "run_manifest.json";

#[derive(Debug, Parser)]
#[command(name = "hierintent", version, about = "Hierarchical task/action intention estimation")]
pub struct Cli {
    /// Taxonomy file (TOML); the built-in assembly taxonomy when omitted.
    #[arg(long, global = true)]
    pub taxonomy: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic teleoperation dataset.
    Gen(GenArgs),
    /// Train the hierarchical model.
    Train(TrainArgs),
    /// Evaluate a checkpoint on its held-out split, optionally against baselines.
    Eval(EvalArgs),
    /// Train and evaluate one baseline on its own.
    Baseline(BaselineArgs),
    /// Replay demonstrations through the streaming engine.
    Stream(StreamArgs),
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(long)]
    pub out: PathBuf,
    /// Generator config (TOML); defaults when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub demos_per_task: Option<usize>,
}

/// Training config file plus flag overrides; flags win.
#[derive(Debug, Args, Default)]
pub struct TrainOverrides {
    /// Training config (TOML); defaults when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub split_seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub windows_per_epoch: Option<usize>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long, value_enum)]
    pub dloss_mode: Option<DlossArg>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum DlossArg {
    Penalty,
    Verbatim,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Dataset file or a directory holding `dataset.jsonl`.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub overrides: TrainOverrides,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum BaselineKind {
    Independent,
    NnHmm,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Hierarchical checkpoint directory.
    #[arg(long)]
    pub ckpt: PathBuf,
    /// Report directory; `<ckpt>/eval` when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Comma-separated baselines to add as comparison rows.
    #[arg(long, value_enum, value_delimiter = ',')]
    pub baselines: Vec<BaselineKind>,
    /// Trained independent checkpoint; trained with the hierarchical model's
    /// config and stored under `<out>/independent` when omitted.
    #[arg(long)]
    pub independent_ckpt: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BaselineArgs {
    #[arg(value_enum)]
    pub kind: BaselineKind,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Existing independent checkpoint to reuse (nn-hmm only).
    #[arg(long)]
    pub ckpt: Option<PathBuf>,
    #[command(flatten)]
    pub overrides: TrainOverrides,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum DemoSelection {
    Test,
    All,
}

#[derive(Debug, Args)]
pub struct StreamArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = DEFAULT_EMIT_EVERY)]
    pub emit_every: usize,
    /// Project each action onto the predicted task's admissible set.
    #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
    pub guard: bool,
    /// Directory for per-demonstration timelines; `<out>/timelines` when omitted.
    #[arg(long)]
    pub timeline_dir: Option<PathBuf>,
    /// Which demonstrations to replay.
    #[arg(long, value_enum, default_value_t = DemoSelection::Test)]
    pub split: DemoSelection,
    /// Keep at most this many demonstrations per task.
    #[arg(long)]
    pub per_task: Option<usize>,
}

pub fn run(cli: Cli) -> Result<()> {
    let tax = match &cli.taxonomy {
        Some(p) => Taxonomy::load(p)?,
        None => Taxonomy::default_assembly(),
    };
    match cli.command {
        Command::Gen(a) => cmd_gen(&a, &tax),
        Command::Train(a) => cmd_train(&a, &tax),
        Command::Eval(a) => cmd_eval(&a, &tax),
        Command::Baseline(a) => cmd_baseline(&a, &tax),
        Command::Stream(a) => cmd_stream(&a, &tax),
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    write_text(path, &(serde_json::to_string_pretty(value).expect("value serializes") + "\n"))
}

fn write_manifest(dir: &Path, value: serde_json::Value) -> Result<()> {
    let mut value = value;
    value["tool"] = json!({ "name": env!("CARGO_PKG_NAME"), "version": env!("CARGO_PKG_VERSION") });
    write_json(&dir.join(RUN_MANIFEST), &value)
}

fn dataset_path(data: &Path) -> PathBuf {
    if data.is_dir() {
        data.join(DATASET_FILE)
    } else {
        data.to_path_buf()
    }
}

struct Dataset {
    path: PathBuf,
    demos: Vec<Demonstration>,
    sha256: String,
    seed: Option<u64>,
}

fn load_data(data: &Path) -> Result<Dataset> {
    let path = dataset_path(data);
    let demos = read_dataset(&path)?;
    let gen_cfg = path.parent().map(|p| p.join(GENERATOR_FILE)).filter(|p| p.is_file());
    let seed = match gen_cfg {
        Some(p) => Some(load_generator_config(&p)?.seed),
        None => None,
    };
    Ok(Dataset {
        sha256: file_sha256(&path)?,
        path,
        demos,
        seed,
    })
}

fn load_generator_config(path: &Path) -> Result<GeneratorConfig> {
    let src = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    toml::from_str(&src).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn cmd_gen(a: &GenArgs, tax: &Taxonomy) -> Result<()> {
    let mut cfg = match &a.config {
        Some(p) => load_generator_config(p)?,
        None => GeneratorConfig::default(),
    };
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(n) = a.demos_per_task {
        cfg.demos_per_task = n;
    }
    cfg.validate(tax)?;
    let demos = generate_dataset(&cfg, tax)?;
    create_dir(&a.out)?;
    let path = a.out.join(DATASET_FILE);
    write_dataset(&demos, &path)?;
    write_text(&a.out.join(GENERATOR_FILE), &toml::to_string(&cfg).expect("config serializes"))?;
    info!("wrote {} demonstrations to {}", demos.len(), path.display());
    write_manifest(
        &a.out,
        json!({
            "subcommand": "gen",
            "config": cfg,
            "seeds": { "dataset": cfg.seed },
            "hashes": {
                "taxonomy": tax.content_hash(),
                "dataset": file_sha256(&path)?,
                "config": config_hash(&cfg),
            },
            "outputs": { "demonstrations": demos.len() },
        }),
    )
}

fn resolve_train_config(o: &TrainOverrides) -> Result<TrainConfig> {
    let mut cfg = match &o.config {
        Some(p) => TrainConfig::load(p)?,
        None => TrainConfig::default(),
    };
    if let Some(v) = o.seed {
        cfg.seed = v;
    }
    if let Some(v) = o.split_seed {
        cfg.split_seed = v;
    }
    if let Some(v) = o.epochs {
        cfg.epochs = v;
    }
    if let Some(v) = o.batch_size {
        cfg.batch_size = v;
    }
    if let Some(v) = o.learning_rate {
        cfg.learning_rate = v;
    }
    if let Some(v) = o.windows_per_epoch {
        cfg.windows_per_epoch = Some(v);
    }
    if let Some(v) = o.beta {
        cfg.loss.beta = v;
    }
    if let Some(v) = o.dloss_mode {
        cfg.loss.dloss_mode = match v {
            DlossArg::Penalty => DlossMode::Penalty,
            DlossArg::Verbatim => DlossMode::Verbatim,
        };
    }
    cfg.validate()?;
    Ok(cfg)
}

fn split_ids(run: &TrainRun) -> serde_json::Value {
    let ids = |ds: &[Demonstration]| ds.iter().map(|d| d.demo_id.clone()).collect::<Vec<_>>();
    json!({ "train": ids(&run.split.train), "val": ids(&run.split.val), "test": ids(&run.split.test) })
}

/// Saves a training run's checkpoint, history and split membership in `out`.
fn save_run(run: &TrainRun, out: &Path) -> Result<()> {
    save_checkpoint(&run.params, out)?;
    write_json(&out.join("history.json"), &run.history)?;
    write_json(&out.join("split.json"), &split_ids(run))?;
    write_text(&out.join("train_config.toml"), &run.params.config.to_toml_string())
}

fn train_manifest(subcommand: &str, run: &TrainRun, data: &Dataset, tax: &Taxonomy, out: &Path) -> Result<serde_json::Value> {
    let cfg = &run.params.config;
    Ok(json!({
        "subcommand": subcommand,
        "dataset": data.path,
        "config": cfg,
        "conditioned": run.params.net.arch.conditioned,
        "seeds": { "dataset": data.seed, "split": cfg.split_seed, "train": cfg.seed },
        "hashes": {
            "taxonomy": tax.content_hash(),
            "dataset": data.sha256,
            "config": config_hash(cfg),
            "weights": file_sha256(out.join(WEIGHTS_FILE))?,
        },
        "best_epoch": run.history.best_epoch,
    }))
}

fn cmd_train(a: &TrainArgs, tax: &Taxonomy) -> Result<()> {
    let cfg = resolve_train_config(&a.overrides)?;
    let data = load_data(&a.data)?;
    let run = train_on_dataset(&data.demos, tax, &cfg, true)?;
    create_dir(&a.out)?;
    save_run(&run, &a.out)?;
    let manifest = train_manifest("train", &run, &data, tax, &a.out)?;
    write_manifest(&a.out, manifest)
}

fn check_dataset_matches(ckpt: &Path, data: &Dataset) -> Result<()> {
    let path = ckpt.join(RUN_MANIFEST);
    let Ok(text) = std::fs::read_to_string(&path) else {
        return Ok(());
    };
    let recorded: serde_json::Value = serde_json::from_str(&text).map_err(|e| Error::Validation(format!("{}: {e}", path.display())))?;
    match recorded["hashes"]["dataset"].as_str() {
        Some(h) if h != data.sha256 => Err(Error::Validation(format!(
            "{} was trained on a different dataset; its held-out split would not be held out",
            ckpt.display()
        ))),
        _ => Ok(()),
    }
}

fn cmd_eval(a: &EvalArgs, tax: &Taxonomy) -> Result<()> {
    let data = load_data(&a.data)?;
    check_dataset_matches(&a.ckpt, &data)?;
    let hier = load_checkpoint(&a.ckpt, tax)?;
    let out = a.out.clone().unwrap_or_else(|| a.ckpt.join("eval"));
    create_dir(&out)?;
    let select = BaselineSelection {
        independent: a.baselines.contains(&BaselineKind::Independent),
        nn_hmm: a.baselines.contains(&BaselineKind::NnHmm),
    };
    let independent = if select.independent || select.nn_hmm {
        Some(match &a.independent_ckpt {
            Some(p) => {
                check_dataset_matches(p, &data)?;
                load_checkpoint(p, tax)?
            }
            None => {
                info!("training the independent baseline with the checkpoint's config");
                let run = train_independent(&data.demos, tax, &hier.config)?;
                let dir = out.join(INDEPENDENT);
                create_dir(&dir)?;
                save_run(&run, &dir)?;
                let manifest = train_manifest("baseline independent", &run, &data, tax, &dir)?;
                write_manifest(&dir, manifest)?;
                run.params
            }
        })
    } else {
        None
    };
    let reports = compare_methods(&data.demos, tax, &hier, independent.as_ref(), select, data.seed)?;
    write_report(&reports, &out)?;
    write_manifest(
        &out,
        json!({
            "subcommand": "eval",
            "dataset": data.path,
            "checkpoint": a.ckpt,
            "baselines": a.baselines.iter().map(|b| format!("{b:?}")).collect::<Vec<_>>(),
            "config": hier.config,
            "independent_config": independent.as_ref().map(|p| &p.config),
            "seeds": { "dataset": data.seed, "split": hier.config.split_seed, "train": hier.config.seed },
            "hashes": {
                "taxonomy": tax.content_hash(),
                "dataset": data.sha256,
                "config": config_hash(&hier.config),
                "weights": file_sha256(a.ckpt.join(WEIGHTS_FILE))?,
            },
            "summary": summary(&reports),
        }),
    )
}

fn summary(reports: &[EvalReport]) -> serde_json::Value {
    reports
        .iter()
        .map(|r| (r.method.clone(), json!({ "action": r.action_accuracy, "task": r.task_accuracy, "consistency": r.consistency_rate })))
        .collect::<serde_json::Map<_, _>>()
        .into()
}

fn cmd_baseline(a: &BaselineArgs, tax: &Taxonomy) -> Result<()> {
    let data = load_data(&a.data)?;
    create_dir(&a.out)?;
    let (ind, run_cfg) = match (&a.ckpt, a.kind) {
        (Some(p), BaselineKind::NnHmm) => {
            check_dataset_matches(p, &data)?;
            let params = load_checkpoint(p, tax)?;
            let cfg = params.config.clone();
            (params, cfg)
        }
        (Some(_), BaselineKind::Independent) => {
            return Err(Error::Validation("--ckpt applies to nn-hmm only; independent trains its own model".into()));
        }
        (None, _) => {
            let cfg = resolve_train_config(&a.overrides)?;
            let run = train_independent(&data.demos, tax, &cfg)?;
            save_run(&run, &a.out)?;
            (run.params, cfg)
        }
    };
    let select = BaselineSelection {
        independent: a.kind == BaselineKind::Independent,
        nn_hmm: a.kind == BaselineKind::NnHmm,
    };
    // compare_methods always scores a primary model first; the independent
    // network stands in for it and that row is dropped
    let reports = compare_methods(&data.demos, tax, &ind, Some(&ind), select, data.seed)?;
    let rows: Vec<EvalReport> = reports.into_iter().skip(1).collect();
    write_report(&rows, &a.out)?;
    if a.kind == BaselineKind::NnHmm {
        let split = split_for(&ind, &data.demos)?;
        let train = split.train.iter().map(|d| d.encode(tax)).collect::<Result<Vec<_>>>()?;
        write_json(&a.out.join("hmm.json"), &fit_hmm(&train, tax, HMM_SMOOTHING)?)?;
    }
    write_manifest(
        &a.out,
        json!({
            "subcommand": format!("baseline {}", if a.kind == BaselineKind::NnHmm { NN_HMM } else { INDEPENDENT }),
            "dataset": data.path,
            "checkpoint": a.ckpt,
            "config": run_cfg,
            "seeds": { "dataset": data.seed, "split": run_cfg.split_seed, "train": run_cfg.seed },
            "hashes": {
                "taxonomy": tax.content_hash(),
                "dataset": data.sha256,
                "config": config_hash(&run_cfg),
            },
            "summary": summary(&rows),
        }),
    )
}

fn cmd_stream(a: &StreamArgs, tax: &Taxonomy) -> Result<()> {
    let data = load_data(&a.data)?;
    let params = load_checkpoint(&a.ckpt, tax)?;
    let mut demos = match a.split {
        DemoSelection::Test => {
            check_dataset_matches(&a.ckpt, &data)?;
            split_for(&params, &data.demos)?.test
        }
        DemoSelection::All => data.demos.clone(),
    };
    if let Some(k) = a.per_task {
        let mut kept = std::collections::HashMap::new();
        demos.retain(|d| {
            let c = kept.entry(d.task.clone()).or_insert(0usize);
            *c += 1;
            *c <= k
        });
    }
    if demos.is_empty() {
        return Err(Error::Validation("no demonstrations selected for replay".into()));
    }
    let out = replay_demos(&params, tax, &demos, a.emit_every, a.guard)?;
    create_dir(&a.out)?;
    let tdir = a.timeline_dir.clone().unwrap_or_else(|| a.out.join("timelines"));
    create_dir(&tdir)?;
    for t in &out.timelines {
        write_timeline(t, tax, tdir.join(format!("{}.csv", t.demo_id)))?;
    }
    write_report(std::slice::from_ref(&out.report), &a.out)?;
    if a.guard && out.report.consistency_rate != 1.0 {
        warn!("guarded replay reported consistency {}", out.report.consistency_rate);
    }
    write_manifest(
        &a.out,
        json!({
            "subcommand": "stream",
            "dataset": data.path,
            "checkpoint": a.ckpt,
            "emit_every": a.emit_every,
            "guard": a.guard,
            "split": format!("{:?}", a.split),
            "per_task": a.per_task,
            "demonstrations": demos.iter().map(|d| d.demo_id.clone()).collect::<Vec<_>>(),
            "config": params.config,
            "seeds": { "dataset": data.seed, "split": params.config.split_seed, "train": params.config.seed },
            "hashes": {
                "taxonomy": tax.content_hash(),
                "dataset": data.sha256,
                "weights": file_sha256(a.ckpt.join(WEIGHTS_FILE))?,
            },
            "summary": summary(std::slice::from_ref(&out.report)),
        }),
    )
}
