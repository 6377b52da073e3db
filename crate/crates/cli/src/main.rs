use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context as _;
use clap::{Args, Parser, Subcommand};
use serde_json::json;

use rrra_core::error::Error;
use rrra_core::io_util::write_atomic;
use rrra_core::pipeline::{
    generate_synthetic, run_ablation, run_eval, run_grad_profile, run_sweep, stage1_pretrain, stage2_train_adapter,
    stage3_joint_finetune, sweep_summary_csv, Checkpoint, Config, Corpus, EvalMode, Manifest, Model, Split,
};
use rrra_core::sampling::SamplerKind;

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;

#[derive(Parser, Debug)]
#[command(
    name = "rrra",
    version,
    about = "Staged dense-retrieval training with a false-negative-aware adapter"
)]
struct Cli {
    /// TOML configuration; defaults apply to anything it leaves out.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the top-level training seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Directory for data, checkpoints, reports and the manifest.
    #[arg(long, global = true, default_value = "runs")]
    out_dir: PathBuf,
    /// `section.key=value` override, repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct DataArg {
    /// Corpus directory (default: <out-dir>/data).
    #[arg(long)]
    data: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
struct EvalArgs {
    #[command(flatten)]
    data: DataArg,
    /// Checkpoint to evaluate (default: <out-dir>/stage3.ckpt).
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// train, dev or test (default: eval.split from the config).
    #[arg(long)]
    split: Option<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write the synthetic corpus described by the `data` section.
    GenData,
    /// In-batch contrastive pre-training of the encoder.
    Stage1(DataArg),
    /// Adapter training on a frozen encoder.
    Stage2 {
        #[command(flatten)]
        data: DataArg,
        /// Stage-1 checkpoint (default: <out-dir>/stage1.ckpt).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Joint fine-tuning with adapter-resampled hard negatives.
    Stage3 {
        #[command(flatten)]
        data: DataArg,
        /// Stage-2 checkpoint (default: <out-dir>/stage2.ckpt).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Recall@k from index search alone.
    Eval(EvalArgs),
    /// Recall@k after adapter reranking of the top candidates.
    Rerank(EvalArgs),
    /// Gradient-magnitude profile of a negative sampler by base rank.
    GradProfile {
        #[command(flatten)]
        data: DataArg,
        /// Checkpoint to profile (default: <out-dir>/stage3.ckpt).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// random, topk or rrra (default: sampling.sampler).
        #[arg(long)]
        sampler: Option<String>,
    },
    /// Adapter ablations over several seeds.
    Ablate {
        #[command(flatten)]
        data: DataArg,
        #[arg(long, value_delimiter = ',', default_values_t = [1u64, 2, 3, 4, 5])]
        seeds: Vec<u64>,
    },
    /// One report per value of a hyperparameter, plus a summary CSV.
    Sweep {
        #[command(flatten)]
        data: DataArg,
        /// e.g. gamma_rs, lambda_rr, m or a full `section.key`.
        #[arg(long)]
        param: String,
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<String>,
        /// Stage-2 checkpoint to fine-tune from (default: <out-dir>/stage2.ckpt).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Stage-3 checkpoint for inference-only parameters (default: <out-dir>/stage3.ckpt if present).
        #[arg(long)]
        stage3: Option<PathBuf>,
        #[arg(long)]
        split: Option<String>,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::GenData => "gen-data",
            Command::Stage1(_) => "stage1",
            Command::Stage2 { .. } => "stage2",
            Command::Stage3 { .. } => "stage3",
            Command::Eval(_) => "eval",
            Command::Rerank(_) => "rerank",
            Command::GradProfile { .. } => "grad-profile",
            Command::Ablate { .. } => "ablate",
            Command::Sweep { .. } => "sweep",
        }
    }
}

fn git_describe() -> Option<String> {
    let out = std::process::Command::new("git")
        .args(["describe", "--always", "--dirty", "--tags"])
        .output()
        .ok()?;
    out.status
        .success()
        .then(|| String::from_utf8_lossy(&out.stdout).trim().to_string())
        .filter(|s| !s.is_empty())
}

fn load_config(cli: &Cli) -> rrra_core::error::Result<Config> {
    let mut cfg = match &cli.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    for o in &cli.overrides {
        cfg.set(o)?;
    }
    Ok(cfg)
}

struct Run<'a> {
    cfg: Config,
    out: &'a Path,
    manifest: Manifest,
}

impl Run<'_> {
    fn corpus(&self, arg: &DataArg) -> anyhow::Result<Corpus> {
        let dir = arg.data.clone().unwrap_or_else(|| self.out.join("data"));
        if !dir.is_dir() {
            return Err(Error::MissingFile(dir).into());
        }
        Ok(Corpus::load(&dir)?)
    }

    fn model(&self, given: &Option<PathBuf>, default: &str) -> anyhow::Result<Model> {
        let path = given.clone().unwrap_or_else(|| self.out.join(default));
        let ckpt = Checkpoint::load(&path)?;
        if ckpt.config_hash != self.cfg.hash() {
            log::info!(
                "{} was written under config {:016x}; running with {:016x}",
                path.display(),
                ckpt.config_hash,
                self.cfg.hash()
            );
        }
        Model::from_checkpoint(&self.cfg, &ckpt).with_context(|| format!("restoring {}", path.display()))
    }

    fn save_model(&mut self, model: &Model, stage: u32) -> anyhow::Result<()> {
        let name = format!("stage{stage}.ckpt");
        model
            .to_checkpoint(self.cfg.hash(), stage)
            .save(&self.out.join(&name))?;
        self.manifest.output(name);
        Ok(())
    }

    fn write(&mut self, name: &str, bytes: impl AsRef<[u8]>) -> anyhow::Result<()> {
        write_atomic(&self.out.join(name), bytes.as_ref())?;
        self.manifest.output(name);
        Ok(())
    }

    fn write_json(&mut self, name: &str, value: &impl serde::Serialize) -> anyhow::Result<()> {
        let text = serde_json::to_string_pretty(value)?;
        self.write(name, text)
    }

    fn split(&self, given: &Option<String>) -> anyhow::Result<Split> {
        Ok(given.as_deref().unwrap_or(&self.cfg.eval.split).parse::<Split>()?)
    }
}

fn execute(cli: &Cli, cfg: Config) -> anyhow::Result<()> {
    std::fs::create_dir_all(&cli.out_dir).map_err(|e| Error::io(&cli.out_dir, e))?;
    let args: Vec<String> = std::env::args().skip(1).collect();
    let manifest = Manifest::new(cli.command.name(), args, &cfg, git_describe())?;
    let mut run = Run {
        cfg,
        out: &cli.out_dir,
        manifest,
    };
    let cfg = run.cfg.clone();

    match &cli.command {
        Command::GenData => {
            let corpus = generate_synthetic(&cfg.data)?;
            corpus.save(&run.out.join("data"))?;
            run.manifest.output("data");
            run.manifest.metric("documents", corpus.documents.len());
            run.manifest.metric("queries", corpus.queries.len());
            run.manifest.metric("hidden_qrels", corpus.hidden_qrels.len());
            println!(
                "wrote {} documents, {} queries to {}",
                corpus.documents.len(),
                corpus.queries.len(),
                run.out.join("data").display()
            );
        }
        Command::Stage1(data) => {
            let corpus = run.corpus(data)?;
            let (model, log) = stage1_pretrain(&cfg, &corpus)?;
            run.save_model(&model, 1)?;
            run.write_json("stage1_log.json", &log)?;
            run.manifest.metric("final_epoch_loss", log.epoch_losses.last());
            println!(
                "stage 1 done, final epoch loss {:.6}",
                log.epoch_losses.last().unwrap_or(&f64::NAN)
            );
        }
        Command::Stage2 { data, checkpoint } => {
            let corpus = run.corpus(data)?;
            let model = run.model(checkpoint, "stage1.ckpt")?;
            let (model, report) = stage2_train_adapter(&cfg, &corpus, model)?;
            run.save_model(&model, 2)?;
            run.write_json("stage2_report.json", &report)?;
            let f1 = report.heldout.error_detection.f1;
            let base = report.heldout_baseline.error_detection.f1;
            run.manifest.metric("heldout_error_detection_f1", f1);
            run.manifest.metric("heldout_baseline_f1", base);
            run.manifest.metric("heldout_macro_f1", report.heldout.macro_f1);
            println!("stage 2 done, held-out error-detection F1 {f1:.4} (majority baseline {base:.4})");
        }
        Command::Stage3 { data, checkpoint } => {
            let corpus = run.corpus(data)?;
            let model = run.model(checkpoint, "stage2.ckpt")?;
            let (model, log) = stage3_joint_finetune(&cfg, &corpus, model)?;
            run.save_model(&model, 3)?;
            run.write_json("stage3_log.json", &log)?;
            run.manifest.metric("final_epoch_loss", log.epoch_losses.last());
            run.manifest.metric("fallback_events", log.fallback_events);
            println!(
                "stage 3 done, final epoch loss {:.6}",
                log.epoch_losses.last().unwrap_or(&f64::NAN)
            );
        }
        Command::Eval(a) | Command::Rerank(a) => {
            let mode = if matches!(cli.command, Command::Eval(_)) {
                EvalMode::Base
            } else {
                EvalMode::Rerank
            };
            let split = run.split(&a.split)?;
            let model = run.model(&a.checkpoint, "stage3.ckpt")?;
            let corpus = run.corpus(&a.data)?;
            let report = run_eval(&cfg, &corpus, &model, mode, split)?;
            let stem = format!("eval_{mode}_{split}");
            run.write_json(&format!("{stem}.json"), &report)?;
            run.write(&format!("{stem}.csv"), report.to_csv())?;
            run.manifest.metric("recall_at", &report.recall_at);
            run.manifest.metric("oracle_recall_at", &report.oracle_recall_at);
            print!("{}", report.to_table());
        }
        Command::GradProfile {
            data,
            checkpoint,
            sampler,
        } => {
            let sampler: SamplerKind = match sampler {
                Some(s) => s.parse()?,
                None => cfg.sampling.sampler,
            };
            let model = run.model(checkpoint, "stage3.ckpt")?;
            let corpus = run.corpus(data)?;
            let profile = run_grad_profile(&cfg, &corpus, &model, sampler)?;
            run.write_json(&format!("grad_profile_{sampler}.json"), &profile)?;
            run.write(&format!("grad_profile_{sampler}.csv"), profile.to_csv())?;
            let means: serde_json::Map<String, serde_json::Value> = profile
                .buckets
                .iter()
                .map(|b| (b.label.clone(), json!(b.mean)))
                .collect();
            run.manifest.metric("bucket_means", means);
            print!("{}", profile.to_csv());
        }
        Command::Ablate { data, seeds } => {
            let corpus = run.corpus(data)?;
            let result = run_ablation(&cfg, &corpus, seeds)?;
            run.write_json("ablation.json", &result)?;
            run.write("ablation.csv", result.to_csv())?;
            for variant in result.f1.keys() {
                let mean = result.mean(variant);
                run.manifest.metric(&format!("mean_f1.{variant}"), mean);
                println!("{variant:>16}  mean held-out F1 {mean:.4}");
            }
        }
        Command::Sweep {
            data,
            param,
            values,
            checkpoint,
            stage3,
            split,
        } => {
            let split = run.split(split)?;
            let corpus = run.corpus(data)?;
            let stage2 = run.model(checkpoint, "stage2.ckpt")?;
            let default3 = run.out.join("stage3.ckpt");
            let stage3_model = match stage3 {
                Some(p) => Some(run.model(&Some(p.clone()), "stage3.ckpt")?),
                None if default3.exists() => Some(run.model(&None, "stage3.ckpt")?),
                None => None,
            };
            let points = run_sweep(&cfg, &corpus, param, values, &stage2, stage3_model.as_ref(), split)?;
            for p in &points {
                run.write_json(&format!("sweep_{param}_{}.json", p.value), &p.report)?;
            }
            let summary = sweep_summary_csv(param, &points);
            run.write(&format!("sweep_{param}.csv"), &summary)?;
            print!("{summary}");
        }
    }
    run.manifest.write(run.out)?;
    Ok(())
}

/// Writes the offending batch next to the other outputs.
fn dump_abort(out: &Path, err: &Error) {
    if let Error::NumericalAbort {
        stage,
        epoch,
        batch,
        loss,
        query_ids,
    } = err
    {
        let body = json!({
            "stage": stage,
            "epoch": epoch,
            "batch": batch,
            "loss": if loss.is_finite() { json!(loss) } else { json!(loss.to_string()) },
            "query_ids": query_ids,
        });
        let path = out.join("abort_batch.json");
        match write_atomic(&path, body.to_string().as_bytes()) {
            Ok(()) => eprintln!("offending batch written to {}", path.display()),
            Err(e) => eprintln!("could not write {}: {e}", path.display()),
        }
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>().map(Error::root) {
        Some(Error::NumericalAbort { .. }) => EXIT_NUMERICAL,
        Some(Error::Config(_)) => EXIT_USAGE,
        _ => EXIT_DATA,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let cfg = match load_config(&cli) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(match e.root() {
                Error::Config(_) => EXIT_USAGE,
                _ => EXIT_DATA,
            });
        }
    };
    match execute(&cli, cfg) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if let Some(core) = e.downcast_ref::<Error>() {
                dump_abort(&cli.out_dir, core.root());
            }
            ExitCode::from(exit_code(&e))
        }
    }
}
