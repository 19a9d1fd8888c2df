use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use prl_core::env::EnvKind;
use prl_core::report::{write_report, ReportKind, RunFrame};
use prl_core::trainer::{Mode, RunConfig, Trainer};

#[derive(Parser)]
#[command(name = "prl", version, about = "Predictive-state representation learning for POMDP control")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one agent and write metrics, checkpoint and trajectory dump.
    Run {
        #[arg(long)]
        env: String,
        #[arg(long, default_value = "drl2")]
        mode: String,
        /// Flat `key = value` config; unset keys use the environment's defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Environment-step budget after burn-in.
        #[arg(long)]
        steps: Option<u64>,
        #[arg(long, default_value = "runs")]
        out: PathBuf,
    },
    /// Aggregate finished runs into CSV tables and SVG figures.
    Report {
        /// Glob matching run directories.
        #[arg(long)]
        runs: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "returns")]
        kind: String,
    },
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().command {
        Command::Run {
            env,
            mode,
            config,
            seed,
            steps,
            out,
        } => {
            let kind: EnvKind = env.parse()?;
            let mode: Mode = mode.parse()?;
            let mut cfg = match &config {
                Some(path) => {
                    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
                    // Unset keys fall back to the per-environment defaults.
                    let base = toml::to_string(&RunConfig::for_env(kind))?;
                    let mut table: toml::Table = base.parse()?;
                    let overrides: toml::Table = text.parse().with_context(|| format!("parsing {}", path.display()))?;
                    table.extend(overrides);
                    RunConfig::parse(&table.to_string())?
                }
                None => RunConfig::for_env(kind),
            };
            if config.is_some() && cfg.env != kind {
                bail!("--env {} disagrees with config env {}", kind.as_str(), cfg.env.as_str());
            }
            cfg.env = kind;
            cfg.mode = mode;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(n) = steps {
                cfg.total_steps = n;
            }
            cfg.validate()?;
            let report = Trainer::new(cfg)?.run(Some(&out))?;
            if let Some(dir) = &report.out_dir {
                println!("{}", dir.display());
            }
            if let Some(r) = report.final_return() {
                println!("final_return {r:.6}");
            }
            for p in &report.probe {
                println!(
                    "probe target {:.4} reached {} loss {} return {}",
                    p.target,
                    p.reached,
                    p.psr_loss.map_or("-".into(), |v| format!("{v:.4}")),
                    p.final_return.map_or("-".into(), |v| format!("{v:.4}"))
                );
            }
        }
        Command::Report { runs, out, kind } => {
            let kind: ReportKind = kind.parse()?;
            let mut frames = Vec::new();
            for entry in glob::glob(&runs).with_context(|| format!("bad glob `{runs}`"))? {
                let dir = entry?;
                if dir.join("config.toml").is_file() {
                    frames.push(RunFrame::load(&dir).with_context(|| format!("loading {}", dir.display()))?);
                }
            }
            if frames.is_empty() {
                bail!("no run directories match `{runs}`");
            }
            let output = write_report(&frames, kind, &out)?;
            for w in &output.warnings {
                eprintln!("warning: {w}");
            }
            for (group, s) in &output.correlations {
                println!("spearman {group} {:.4}{}", s.rho, if s.degenerate { " (degenerate)" } else { "" });
            }
            for f in &output.files {
                println!("{}", f.display());
            }
        }
    }
    Ok(())
}
