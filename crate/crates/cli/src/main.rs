use clap::{Parser, Subcommand};
use ctxgcn::experiment::{
    format_count, full_size_configs, gradcheck_config, load_data, params_table, run_attend, run_eval, run_gradcheck, run_recall, run_synth,
    run_train, run_zeroshot,
};
use ctxgcn::head::{parameter_count, ModelConfig};
use ctxgcn::io::{decode_config, load_checkpoint, save_checkpoint, write_atomic, ExperimentConfig};
use ctxgcn::Error;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

const EXIT_USAGE: u8 = 64;
const GRADCHECK_TOLERANCE: f64 = 1e-4;

#[derive(Parser)]
#[command(name = "ctxgcn", version, about = "Actor-context graph head experiments")]
struct Cli {
    /// Experiment configuration (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configuration seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic dataset as feature files and annotations.
    Synth,
    /// Train the configured model and write a checkpoint and loss log.
    Train,
    /// Video-mAP and accuracy of a checkpoint on the test split.
    Eval {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Parameter counts of the configured head, or the full-size table.
    Params,
    /// Gradient gate on a random toy head.
    Gradcheck,
    /// Export attention maps of test instances.
    Attend {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Number of videos to export.
        #[arg(long, default_value_t = 4)]
        limit: usize,
    },
    /// Object-recall curves of a checkpoint on the test split.
    Recall {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Train without the excluded classes and measure their recall.
    Zeroshot,
}

struct Context {
    config: Option<ExperimentConfig>,
    seed: Option<u64>,
    out: PathBuf,
}

impl Context {
    fn config(&self) -> Result<ExperimentConfig, Error> {
        let mut cfg = self
            .config
            .clone()
            .ok_or_else(|| Error::Config("this command needs --config".into()))?;
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        Ok(cfg)
    }

    fn checkpoint_path(&self, given: Option<PathBuf>) -> PathBuf {
        given.unwrap_or_else(|| self.out.join("checkpoint.cgcn"))
    }

    fn write(&self, name: &str, text: &str) -> Result<(), Error> {
        write_atomic(&self.out.join(name), text.as_bytes())
    }
}

fn read_config(path: &Path) -> Result<ExperimentConfig, Error> {
    decode_config(&std::fs::read_to_string(path)?)
}

fn run(cli: Cli) -> Result<(), Error> {
    let config = cli.config.as_deref().map(read_config).transpose()?;
    let out = cli
        .out
        .or_else(|| config.as_ref().and_then(|c| c.output.clone()))
        .unwrap_or_else(|| PathBuf::from("out"));
    let ctx = Context {
        config,
        seed: cli.seed,
        out,
    };

    match cli.command {
        Command::Synth => {
            let cfg = ctx.config()?;
            let data = run_synth(&cfg, &ctx.out)?;
            println!(
                "wrote {} train and {} test videos to {}",
                data.train.videos.len(),
                data.test.videos.len(),
                ctx.out.display()
            );
        }
        Command::Train => {
            let cfg = ctx.config()?;
            let (train_set, _) = load_data(&cfg)?;
            let (ckpt, report) = run_train(&cfg, &train_set)?;
            save_checkpoint(&ctx.out.join("checkpoint.cgcn"), &ckpt)?;
            ctx.write("loss.csv", &report.to_csv())?;
            if let Some(last) = report.epochs.last() {
                println!("trained {} epochs, final loss {:.6}", report.epochs.len(), last.mean_loss);
            }
        }
        Command::Eval { checkpoint } => {
            let cfg = ctx.config()?;
            let ckpt = load_checkpoint(&ctx.checkpoint_path(checkpoint))?;
            let (_, test_set) = load_data(&cfg)?;
            let report = run_eval(&ckpt, &test_set)?;
            ctx.write("eval.csv", &report.to_csv())?;
            print!("{}", report.to_csv());
        }
        Command::Params => match ctx.config.as_ref().map(|c| c.model) {
            Some(ModelConfig::Gcn(g)) => {
                let count = parameter_count(&g);
                for (l, n) in count.per_layer.iter().enumerate() {
                    println!("layer {}: {}", l + 1, format_count(*n));
                }
                println!("total: {}", format_count(count.total));
            }
            Some(ModelConfig::Baseline(_)) => {
                return Err(Error::Config("the baseline has no graph layers to count".into()));
            }
            None => print!("{}", params_table(&full_size_configs())),
        },
        Command::Gradcheck => {
            let seed = ctx.seed.or(ctx.config.as_ref().map(|c| c.seed)).unwrap_or(1);
            let err = run_gradcheck(seed)?;
            println!("seed {seed} {:?}", gradcheck_config(seed));
            println!("max relative error {err:.3e}");
            if !(err < GRADCHECK_TOLERANCE) {
                return Err(Error::Numeric(format!("gradient error {err:.3e} exceeds {GRADCHECK_TOLERANCE:e}")));
            }
        }
        Command::Attend { checkpoint, limit } => {
            let cfg = ctx.config()?;
            let ckpt = load_checkpoint(&ctx.checkpoint_path(checkpoint))?;
            let (_, test_set) = load_data(&cfg)?;
            let written = run_attend(&ckpt, &test_set, &ctx.out.join("attention"), limit)?;
            println!("wrote {} attention maps", written.len());
        }
        Command::Recall { checkpoint } => {
            let cfg = ctx.config()?;
            let ckpt = load_checkpoint(&ctx.checkpoint_path(checkpoint))?;
            let (_, test_set) = load_data(&cfg)?;
            let csv = run_recall(&ckpt, &test_set)?;
            ctx.write("recall.csv", &csv)?;
            print!("{csv}");
        }
        Command::Zeroshot => {
            let cfg = ctx.config()?;
            let (train_set, test_set) = load_data(&cfg)?;
            let report = run_zeroshot(&cfg, &train_set, &test_set)?;
            ctx.write("zeroshot.csv", &report.to_csv(train_set.num_classes))?;
            println!(
                "recall@0.20 {:.6} uniform {:.6} over {} objects",
                report.recall_at(0.2),
                report.uniform_recall_at(0.2),
                report.instances.len()
            );
        }
    }
    Ok(())
}

fn configure_threads() {
    if let Some(n) = std::env::var("CTXGCN_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            log::warn!("could not size thread pool: {e}");
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    configure_threads();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
