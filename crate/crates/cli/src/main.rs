use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use dsgg_autodiff::Checkpoint;
use dsgg_core::train::{format_log, parse_log, EpochEvent};
use dsgg_core::{corpus_batches, evaluate_corpus, train, Model, OraclePredictor, Predictor, RunConfig};
use dsgg_metrics::{write_predictions, EvalOptions, MetricReport, Regime, TaskMode};
use dsgg_synth::{generate, parse_kv, read_annotations, write_annotations, Corpus, GeneratorConfig, LabelSource};

const LOG_FILE: &str = "train_log.tsv";
const METRICS_FILE: &str = "metrics.json";

#[derive(Parser)]
#[command(name = "dsgg", version, about = "Synthetic dynamic scene graph generation: data, training, evaluation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic annotation corpus.
    Generate {
        /// Generator config (`key = value` lines).
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        videos: Option<usize>,
        /// Any generator key, e.g. `--set flip_rate=0.2`. Repeatable.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        sets: Vec<String>,
    },
    /// Train a model; writes checkpoints, banks and the epoch log to `--out`.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Score a checkpoint (or the oracle) on an annotation corpus.
    Eval {
        #[arg(long, required_unless_present = "oracle")]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        /// Corpus whose observed label counts define head/body/tail.
        /// Defaults to the evaluated corpus.
        #[arg(long)]
        train_data: Option<PathBuf>,
        #[arg(long)]
        task: Option<TaskMode>,
        /// Predict the clean annotation instead of running a model.
        #[arg(long, conflicts_with = "checkpoint")]
        oracle: bool,
        /// Average per-class recall over frames instead of pooling counts.
        #[arg(long)]
        per_frame_mr: bool,
        /// Metric report destination (JSON).
        #[arg(long)]
        out: PathBuf,
        /// Also write the ranked-candidate input (JSON Lines).
        #[arg(long)]
        predictions: Option<PathBuf>,
    },
    /// Summarise a training run: uncertainty table, loss curve, per-class recall.
    Report {
        run_dir: PathBuf,
        /// Metric report for the per-class recall data; defaults to
        /// `<run_dir>/metrics.json` when present.
        #[arg(long)]
        metrics: Option<PathBuf>,
        /// K of the per-class recall data.
        #[arg(long, default_value_t = 10)]
        k: usize,
    },
}

#[derive(Args)]
struct RunArgs {
    /// Run config (`key = value` lines); flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    task: Option<TaskMode>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    gmm_k: Option<usize>,
    #[arg(long)]
    eta: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    no_mdu: bool,
    #[arg(long)]
    no_gmm: bool,
    #[arg(long)]
    no_ospu: bool,
    #[arg(long)]
    no_intra: bool,
    /// Any run config key, e.g. `--set d_v=16`. Repeatable; named flags win.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
}

fn split_set(s: &str) -> Result<(&str, &str)> {
    s.split_once('=').map(|(k, v)| (k.trim(), v.trim())).ok_or_else(|| anyhow!("`--set {}` is not KEY=VALUE", s))
}

fn read_kv(path: &Path) -> Result<std::collections::BTreeMap<String, String>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    Ok(parse_kv(&text)?)
}

impl RunArgs {
    /// Built-in defaults, then the config file, then `--set`, then named flags.
    fn resolve(&self) -> Result<RunConfig> {
        let mut rc = RunConfig::default();
        if let Some(p) = &self.config {
            rc.apply(&read_kv(p)?)?;
        }
        for s in &self.sets {
            let (k, v) = split_set(s)?;
            rc.set(k, v)?;
        }
        if let Some(t) = self.task {
            rc.task = t;
        }
        if let Some(e) = self.epochs {
            rc.train.epochs = e;
        }
        if let Some(lr) = self.lr {
            rc.train.lr = lr;
        }
        if let Some(s) = self.seed {
            rc.train.seed = s;
        }
        rc.lambda = self.lambda.or(rc.lambda);
        rc.gmm_k = self.gmm_k.or(rc.gmm_k);
        if let Some(eta) = self.eta {
            rc.eta = eta;
        }
        let t = &mut rc.toggles;
        t.mdu &= !self.no_mdu;
        t.gmm &= !self.no_gmm;
        t.ospu &= !self.no_ospu;
        t.intra &= !self.no_intra;
        Ok(rc)
    }
}

fn load_corpus(path: &Path) -> Result<Corpus> {
    read_annotations(path).with_context(|| format!("reading annotations {}", path.display()))
}

fn cmd_generate(
    config: Option<PathBuf>,
    out: PathBuf,
    seed: Option<u64>,
    videos: Option<usize>,
    sets: Vec<String>,
) -> Result<()> {
    let mut cfg = GeneratorConfig::default();
    if let Some(p) = &config {
        cfg.apply(&read_kv(p)?)?;
    }
    for s in &sets {
        let (k, v) = split_set(s)?;
        cfg.set(k, v)?;
    }
    cfg.seed = seed.unwrap_or(cfg.seed);
    cfg.videos = videos.unwrap_or(cfg.videos);
    let corpus = generate(&cfg)?;
    write_annotations(&corpus, &out).with_context(|| format!("writing {}", out.display()))?;
    log::info!("wrote {} videos to {}", corpus.videos.len(), out.display());
    Ok(())
}

fn cmd_train(data: PathBuf, out: PathBuf, args: RunArgs) -> Result<()> {
    let rc = args.resolve()?;
    let corpus = load_corpus(&data)?;
    let model_cfg = rc.model_config(&corpus.header)?;
    let batches = corpus_batches(&corpus, rc.task)?;
    for dir in ["checkpoints", "banks"] {
        fs::create_dir_all(out.join(dir)).with_context(|| format!("creating {}", out.display()))?;
    }
    fs::write(out.join("run.cfg"), rc.to_kv())?;
    log::info!(
        "training {} on {} videos: {} epochs, lr {:e}, lambda {}, K {}",
        rc.task.name(),
        batches.len(),
        rc.train.epochs,
        rc.train.lr,
        model_cfg.lambda,
        model_cfg.gmm_k
    );
    let mut model = Model::init(model_cfg, rc.train.seed)?;
    let mut logs = Vec::new();
    let result = train(&mut model, &batches, &rc.train, |ev: &EpochEvent| {
        let e = ev.log.epoch;
        logs.push(ev.log.clone());
        fs::write(out.join(LOG_FILE), format_log(&logs))?;
        ev.model.to_checkpoint().save(out.join(format!("checkpoints/epoch_{:02}.ckpt", e)))?;
        if let Some(bank) = ev.next_bank {
            bank.save(out.join(format!("banks/bank_epoch_{:02}.txt", e)))?;
        }
        log::info!(
            "epoch {} loss {:.6} lr {:e} u_al {:.6} u_ep {:.6}",
            e,
            ev.log.loss,
            ev.log.lr,
            ev.log.u_al,
            ev.log.u_ep
        );
        Ok(())
    });
    result?;
    model.to_checkpoint().save(out.join("model.ckpt"))?;
    log::info!("wrote {}", out.display());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_eval(
    checkpoint: Option<PathBuf>,
    data: PathBuf,
    train_data: Option<PathBuf>,
    task: Option<TaskMode>,
    oracle: bool,
    per_frame: bool,
    out: PathBuf,
    predictions: Option<PathBuf>,
) -> Result<()> {
    let corpus = load_corpus(&data)?;
    let h = &corpus.header;
    let (predictor, task): (Box<dyn Predictor>, TaskMode) = if oracle {
        let p = OraclePredictor { object_classes: h.object_classes, predicate_classes: h.predicate_classes };
        (Box::new(p), task.unwrap_or(TaskMode::PredCls))
    } else {
        let path = checkpoint.expect("clap requires a checkpoint without --oracle");
        let ckpt = Checkpoint::load(&path).with_context(|| format!("reading checkpoint {}", path.display()))?;
        let model = Model::from_checkpoint(ckpt)?;
        let c = &model.config;
        if let Some(t) = task.filter(|&t| t != c.task) {
            bail!(dsgg_core::Error::Config {
                field: "task",
                message: format!("checkpoint was trained for {}, not {}", c.task.name(), t.name()),
            });
        }
        if (c.object_classes, c.predicate_classes, c.feature_dim)
            != (h.object_classes, h.predicate_classes, h.feature_dim)
        {
            bail!(dsgg_core::Error::Config {
                field: "data",
                message: format!(
                    "checkpoint expects {} object / {} predicate classes and {} features, data has {} / {} / {}",
                    c.object_classes,
                    c.predicate_classes,
                    c.feature_dim,
                    h.object_classes,
                    h.predicate_classes,
                    h.feature_dim
                ),
            });
        }
        let t = c.task;
        (Box::new(model), t)
    };
    let counts = match &train_data {
        Some(p) => {
            let train = load_corpus(p)?;
            if train.header.predicate_classes != h.predicate_classes {
                bail!(
                    "train data has {} predicate classes, eval data {}",
                    train.header.predicate_classes,
                    h.predicate_classes
                );
            }
            train.predicate_counts(LabelSource::Observed)
        }
        None => {
            log::warn!("no --train-data; head/body/tail buckets use the evaluated corpus' label counts");
            corpus.predicate_counts(LabelSource::Observed)
        }
    };
    let batches = corpus_batches(&corpus, task)?;
    let mut opts = EvalOptions::new(task, h.predicate_classes);
    if per_frame {
        opts.pooling = dsgg_metrics::Pooling::PerFrame;
    }
    let (report, preds) = evaluate_corpus(predictor.as_ref(), &batches, &counts, &opts)?;
    report.save(&out).with_context(|| format!("writing {}", out.display()))?;
    if let Some(p) = predictions {
        write_predictions(&preds.frames, &p).with_context(|| format!("writing {}", p.display()))?;
    }
    for r in &report.regimes {
        for k in &r.at_k {
            log::info!("{} R@{} {:.4} mR@{} {:.4}", r.regime.name(), k.k, k.recall, k.k, k.mean_recall);
        }
    }
    Ok(())
}

fn cmd_report(run_dir: PathBuf, metrics: Option<PathBuf>, k: usize) -> Result<()> {
    let log_path = run_dir.join(LOG_FILE);
    let text = fs::read_to_string(&log_path).with_context(|| format!("no training log at {}", log_path.display()))?;
    let logs = parse_log(&text)?;
    if logs.is_empty() {
        bail!("training log {} has no epochs", log_path.display());
    }
    let out_dir = run_dir.join("report");
    fs::create_dir_all(&out_dir)?;

    let mut table = String::from("epoch\tu_al\tu_ep\n");
    let mut unc = String::from("# epoch u_al u_ep\n");
    let mut loss = String::from("# epoch loss\n");
    for l in &logs {
        writeln!(table, "{}\t{}\t{}", l.epoch, l.u_al, l.u_ep)?;
        writeln!(unc, "{} {} {}", l.epoch, l.u_al, l.u_ep)?;
        writeln!(loss, "{} {}", l.epoch, l.loss)?;
    }
    print!("{}", table);
    fs::write(out_dir.join("uncertainty.dat"), unc)?;
    fs::write(out_dir.join("loss.dat"), loss)?;

    let metrics = metrics.or_else(|| Some(run_dir.join(METRICS_FILE)).filter(|p| p.exists()));
    if let Some(p) = metrics {
        let report = MetricReport::load(&p).with_context(|| format!("reading metrics {}", p.display()))?;
        let mut bars = format!("# class recall@{} with_constraint (nan: absent from test data)\n", k);
        let at = report.at(Regime::WithConstraint, k).ok_or_else(|| anyhow!("metrics have no K = {}", k))?;
        for (c, r) in at.per_class.iter().enumerate() {
            writeln!(bars, "{} {}", c, r.unwrap_or(f64::NAN))?;
        }
        fs::write(out_dir.join("per_class_recall.dat"), bars)?;
    }
    log::info!("wrote {}", out_dir.display());
    Ok(())
}

/// 3 for numeric failures, 2 for anything else the user can fix.
fn exit_code(err: &anyhow::Error) -> u8 {
    let numeric = err.chain().any(|e| matches!(e.downcast_ref(), Some(dsgg_core::Error::Numeric { .. })));
    if numeric {
        3
    } else {
        2
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("DSGG_LOG", "info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Generate { config, out, seed, videos, sets } => cmd_generate(config, out, seed, videos, sets),
        Command::Train { data, out, run } => cmd_train(data, out, run),
        Command::Eval { checkpoint, data, train_data, task, oracle, per_frame_mr, out, predictions } => {
            cmd_eval(checkpoint, data, train_data, task, oracle, per_frame_mr, out, predictions)
        }
        Command::Report { run_dir, metrics, k } => cmd_report(run_dir, metrics, k),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{:#}", e);
            ExitCode::from(exit_code(&e))
        }
    }
}
