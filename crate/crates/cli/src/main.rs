use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fusicl::harness::{
    emit_report, generate_all, permutation_study, run_eval, EvalReport, Harness, HarnessConfig,
    Orderings, ReportFormat, ShotSetting,
};
use fusicl::model::{init_toy, save_checkpoint, ModelConfig};
use fusicl::tokenizer::{decode_bytes, encode_text, special_surface, BYTE_BASE};
use fusicl::{FusionMode, ScoreNormalization};
use log::info;

#[derive(Parser)]
#[command(
    name = "fusicl",
    version,
    about = "Few-shot evaluation with encoder-decoder fusion modes"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a randomly initialised toy checkpoint.
    InitToy {
        #[arg(long, default_value_t = 64)]
        d_model: usize,
        /// Layers in each of the encoder and decoder stacks.
        #[arg(long, default_value_t = 2)]
        layers: usize,
        #[arg(long, default_value_t = 4)]
        heads: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a task and print or write the report.
    Eval {
        #[command(flatten)]
        run: RunArgs,
        /// Write the report here instead of stdout; `.csv` appends a summary row.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Greedy generations for each test example, one JSON object per line.
    Generate {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        max_new_tokens: Option<usize>,
    },
    /// Accuracy under every (or sampled) ordering of one demonstration set.
    Permute {
        #[command(flatten)]
        run: RunArgs,
        /// `all` or `sample:M`.
        #[arg(long, default_value = "all")]
        orderings: Orderings,
        /// Test examples to evaluate; defaults to the config limit, else 20.
        #[arg(long)]
        n_examples: Option<usize>,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Show the token ids for a piece of text.
    Encode {
        #[arg(long)]
        text: String,
    },
}

/// Config file plus flags that override its keys.
#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    mode: Option<FusionMode>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    limit: Option<usize>,
    /// `fixed` or `nonfixed`.
    #[arg(long)]
    setting: Option<ShotSetting>,
    /// Worker threads, 0 for one per core.
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    normalization: Option<ScoreNormalization>,
}

impl RunArgs {
    fn load(&self) -> fusicl::Result<Harness> {
        let mut cfg = HarnessConfig::load(&self.config)?;
        if let Some(mode) = self.mode {
            cfg.mode = mode;
        }
        if let Some(k) = self.k {
            cfg.k = k;
        }
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if self.limit.is_some() {
            cfg.limit = self.limit;
        }
        if let Some(setting) = self.setting {
            cfg.setting = setting;
        }
        if let Some(workers) = self.workers {
            cfg.workers = workers;
        }
        if let Some(normalization) = self.normalization {
            cfg.normalization = normalization;
        }
        info!("loading {}", self.config.display());
        Harness::from_config(&cfg)
    }
}

fn write_report(report: &mut EvalReport, path: Option<&PathBuf>) -> fusicl::Result<()> {
    report.stamp_now();
    match path {
        Some(path) => {
            emit_report(report, path, ReportFormat::from_path(path))?;
            info!("wrote {}", path.display());
            let summary = serde_json::json!({
                "task": report.task,
                "mode": report.mode,
                "k": report.k,
                "n_evaluated": report.n_evaluated,
                "aggregate": report.aggregate,
                "permutation_std": report.permutation.as_ref().map(|p| p.std),
            });
            println!("{summary}");
        }
        None => print!("{}", report.to_json()?),
    }
    Ok(())
}

fn token_surface(id: u32) -> String {
    special_surface(id).unwrap_or_else(|| match decode_bytes(&[id]) {
        Ok(b) if b.len() == 1 && (b[0].is_ascii_graphic() || b[0] == b' ') => {
            (b[0] as char).to_string()
        }
        Ok(b) if b.len() == 1 => format!("<0x{:02X}>", b[0]),
        _ => String::new(),
    })
}

fn run(cli: Cli) -> fusicl::Result<()> {
    match cli.command {
        Command::InitToy {
            d_model,
            layers,
            heads,
            seed,
            out,
        } => {
            let cfg = ModelConfig::toy(d_model, heads, layers);
            let ckpt = init_toy(&cfg, seed)?;
            save_checkpoint(&ckpt, &out)?;
            println!(
                "{}",
                serde_json::json!({ "out": out, "tensors": ckpt.tensors().len(), "config": cfg })
            );
        }
        Command::Eval { run, report } => {
            let h = run.load()?;
            let mut r = run_eval(&h.checkpoint, &h.task, &h.plan, &h.settings)?;
            write_report(&mut r, report.as_ref())?;
        }
        Command::Generate {
            run,
            max_new_tokens,
        } => {
            let mut h = run.load()?;
            if let Some(n) = max_new_tokens {
                h.settings.max_new_tokens = n;
            }
            let out = generate_all(&h.checkpoint, &h.task, &h.plan, &h.settings)?;
            let mut stdout = io::stdout().lock();
            for g in out {
                writeln!(stdout, "{}", serde_json::to_string(&g)?)?;
            }
        }
        Command::Permute {
            run,
            orderings,
            n_examples,
            report,
        } => {
            let h = run.load()?;
            let n = n_examples.or(h.settings.limit).unwrap_or(20);
            let mut r =
                permutation_study(&h.checkpoint, &h.task, &h.plan, &h.settings, n, orderings)?;
            write_report(&mut r, report.as_ref())?;
        }
        Command::Encode { text } => {
            let ids = encode_text(&text);
            let tokens: Vec<String> = ids.iter().map(|&id| token_surface(id)).collect();
            println!(
                "{}",
                serde_json::json!({ "ids": ids, "tokens": tokens, "byte_base": BYTE_BASE })
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 2 } else { 1 })
        }
    }
}
