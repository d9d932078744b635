use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use avfuse::harness::{table, Experiment, ExperimentConfig, EVAL_REPORT, VISION_ONLY_REPORT};
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "avfuse", version, about = "Audio captioning with a fused secondary feature stream")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Run a single seed instead of every configured seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory for runs (for gen-data: the data directory).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ReportKind {
    Eval,
    VisionOnly,
}

#[derive(Subcommand)]
enum Command {
    /// Write the synthetic task's feature files and manifest.
    GenData(Common),
    /// Train one model per seed.
    Train(Common),
    /// Pick the mixing weight on the validation split.
    Sweep(Common),
    /// Score the evaluation split at the swept (or given) mixing weight.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        lambda: Option<f64>,
    },
    /// Score the evaluation split with the acoustic weight forced to 0.
    VisionOnly(Common),
    /// CIDEr mean and sd across seeds at every grid weight.
    Curve(Common),
    /// Aggregate reports of several configurations into a table.
    Table {
        /// Configuration directories holding `seed_*` runs.
        #[arg(required = true)]
        dirs: Vec<PathBuf>,
        #[arg(long, value_enum, default_value = "eval")]
        report: ReportKind,
        /// Where to write table.md and table.csv.
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
}

fn experiment(c: &Common, data_out: bool) -> Result<(Experiment, Vec<u64>)> {
    let mut cfg = ExperimentConfig::load(&c.config)?;
    if let Some(out) = &c.out {
        if data_out {
            cfg.manifest = out.join("manifest.jsonl");
        } else {
            cfg.out_dir = out.clone();
        }
    }
    let seeds = match c.seed {
        Some(s) if data_out => {
            cfg.data.seed = s;
            vec![s]
        }
        Some(s) => vec![s],
        None => cfg.seeds(),
    };
    Ok((Experiment::new(cfg)?, seeds))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData(c) => {
            let (exp, _) = experiment(&c, true)?;
            let m = exp.gen_data()?;
            println!("wrote {} clips to {}", m.len(), exp.config.manifest.display());
        }
        Command::Train(c) => {
            let (exp, seeds) = experiment(&c, false)?;
            for s in seeds {
                let h = exp.train(s)?;
                println!("seed {s}: final train loss {:.4}", h.final_train_loss().unwrap_or(f64::NAN));
            }
        }
        Command::Sweep(c) => {
            let (exp, seeds) = experiment(&c, false)?;
            for s in seeds {
                let r = exp.sweep(s)?;
                println!(
                    "seed {s}: lambda {} ({} {:.4})",
                    r.chosen_lambda, r.selection_metric, r.chosen_score
                );
            }
        }
        Command::Eval { common, lambda } => {
            let (exp, seeds) = experiment(&common, false)?;
            for s in seeds {
                let r = exp.eval(s, lambda)?;
                print!("seed {s}\n{}", r.to_csv());
            }
        }
        Command::VisionOnly(c) => {
            let (exp, seeds) = experiment(&c, false)?;
            for s in seeds {
                let r = exp.vision_only(s)?;
                print!("seed {s}\n{}", r.to_csv());
            }
        }
        Command::Curve(c) => {
            let (mut exp, _) = experiment(&c, false)?;
            if let Some(s) = c.seed {
                exp.config.seed = s;
            }
            let rows = exp.curve()?;
            print!("{}", avfuse::harness::curve_csv(&rows));
        }
        Command::Table { dirs, report, out } => {
            let name = match report {
                ReportKind::Eval => EVAL_REPORT,
                ReportKind::VisionOnly => VISION_ONLY_REPORT,
            };
            let t = table(&dirs, name)?;
            fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
            fs::write(out.join("table.md"), t.to_markdown()).context("writing table.md")?;
            fs::write(out.join("table.csv"), t.to_csv()).context("writing table.csv")?;
            print!("{}", t.to_markdown());
        }
    }
    Ok(())
}

fn report(kind: &str, msg: &str) {
    eprintln!("error: kind={kind} msg={msg:?}");
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let text = e.to_string();
            report("usage", text.lines().next().unwrap_or_default().trim_start_matches("error: "));
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let kind = e.downcast_ref::<avfuse::Error>().map_or("other", |e| e.kind());
            // library errors already embed their source in the message
            let mut msg = String::new();
            for cause in e.chain().map(|c| c.to_string()) {
                if !msg.contains(&cause) {
                    if !msg.is_empty() {
                        msg.push_str(": ");
                    }
                    msg.push_str(&cause);
                }
            }
            log::debug!("{e:?}");
            report(kind, &msg);
            ExitCode::FAILURE
        }
    }
}
