use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use labcvar::bench::{self, ExperimentConfig};
use labcvar::Error;

#[derive(Parser)]
#[command(name = "labcvar", version, about = "Seeded long-tailed classification benchmarks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON experiment configuration; built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Replace the configured seeds (repeatable).
    #[arg(long = "seed")]
    seeds: Vec<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Train every configured loss on every seed.
    Run {
        #[command(flatten)]
        common: Common,
        /// Imbalance ratio n_L / n_1.
        #[arg(long)]
        ratio: Option<f64>,
    },
    /// Repeat `run` for several imbalance ratios.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Comma-separated ratios.
        #[arg(long, value_delimiter = ',', required = true)]
        ratios: Vec<f64>,
    },
    /// Exhaustive hyperparameter grid, best point per method by BER.
    Grid {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        ratio: Option<f64>,
        /// Use the shipped search spaces instead of the config's `grid`.
        #[arg(long)]
        preset: bool,
        /// Restrict to these methods (repeatable).
        #[arg(long = "method")]
        methods: Vec<String>,
    },
    /// Print the default configuration as JSON.
    DefaultConfig,
}

fn load(common: &Common) -> labcvar::Result<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if !common.seeds.is_empty() {
        cfg.seeds = common.seeds.clone();
    }
    if let Some(o) = &common.out {
        cfg.out_dir = o.clone();
    }
    Ok(cfg)
}

fn write_outputs(cfg: &ExperimentConfig, stem: &str, csv: &[u8], summary: &impl serde::Serialize) -> labcvar::Result<()> {
    let csv_path = cfg.out_dir.join(format!("{stem}.csv"));
    let json_path = cfg.out_dir.join(format!("{stem}_summary.json"));
    bench::write_atomic(&csv_path, csv)?;
    let mut json = serde_json::to_vec_pretty(summary)?;
    json.push(b'\n');
    bench::write_atomic(&json_path, &json)?;
    eprintln!("wrote {} and {}", csv_path.display(), json_path.display());
    Ok(())
}

fn print_table(summaries: &[bench::LossSummary]) {
    for s in summaries {
        let ratio = s.ratio.map(|r| format!("{r}")).unwrap_or_else(|| "-".into());
        eprintln!(
            "ratio={ratio:<6} {:<48} BER {:6.2} ± {:5.2}  WER {:6.2}",
            s.label,
            100.0 * s.ber.mean,
            100.0 * s.ber.std,
            100.0 * s.wer.mean
        );
    }
}

fn dispatch(cli: Cli) -> labcvar::Result<()> {
    match cli.command {
        Command::Run { common, ratio } => {
            let mut cfg = load(&common)?;
            if ratio.is_some() {
                cfg.ratio = ratio;
            }
            let res = bench::run(&cfg)?;
            print_table(&res.summaries);
            write_outputs(&cfg, "run", &bench::experiment_csv(&res, "run")?, &res)
        }
        Command::Sweep { common, ratios } => {
            let cfg = load(&common)?;
            let res = bench::sweep(&cfg, &ratios)?;
            print_table(&res.summaries);
            write_outputs(&cfg, "sweep", &bench::experiment_csv(&res, "sweep")?, &res)
        }
        Command::Grid {
            common,
            ratio,
            preset,
            methods,
        } => {
            let mut cfg = load(&common)?;
            if ratio.is_some() {
                cfg.ratio = ratio;
            }
            let mut space = if preset {
                bench::preset_grid(cfg.train.epochs)
            } else {
                cfg.grid.clone()
            };
            if !methods.is_empty() {
                space.retain(|m| methods.contains(&m.method));
            }
            let res = bench::grid(&cfg, &space)?;
            for b in &res.best {
                eprintln!("best {:<16} {}  BER {:.2}", b.method, b.loss.label(), 100.0 * b.ber.mean);
            }
            write_outputs(&cfg, "grid", &bench::grid_csv(&res)?, &res)
        }
        Command::DefaultConfig => {
            let text = serde_json::to_string_pretty(&ExperimentConfig::default())?;
            // a closed pipe (e.g. `| head`) is not an error
            let _ = writeln!(std::io::stdout(), "{text}");
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => report(&e),
    }
}

fn report(e: &Error) -> ExitCode {
    let feasible = match e {
        Error::Infeasible {
            feasible_tau: Some(t), ..
        } if !t.is_empty() => serde_json::json!([t.lo, t.hi]),
        _ => serde_json::Value::Null,
    };
    let line = serde_json::json!({
        "error": {
            "category": e.category(),
            "message": e.to_string(),
            "feasible_tau1": feasible,
        }
    });
    eprintln!("{line}");
    ExitCode::from(e.exit_code() as u8)
}
