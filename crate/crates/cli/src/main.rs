use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use lcprobe::error::EXIT_DEGRADED;
use lcprobe::runner::{format_ablate, format_compare, report, BackendKind, EstimateTarget, Run, RunConfig};
use lcprobe::{Error, Result};

/// Probe how learning context shapes a model's instructional-design policy.
#[derive(Parser)]
#[command(name = "lcprobe", version)]
struct Cli {
    #[command(flatten)]
    overrides: Overrides,

    #[command(subcommand)]
    command: Command,
}

/// Settings that override the config file.
#[derive(Args)]
struct Overrides {
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Trials per policy estimate.
    #[arg(long, global = true)]
    n: Option<usize>,
    /// Strategies selected per trial.
    #[arg(long, global = true)]
    k: Option<usize>,
    /// Parent directory for run directories.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Run directory name; defaults to `<timestamp>-<config hash>`.
    #[arg(long, global = true)]
    run_id: Option<String>,
    #[arg(long, global = true, value_parser = parse_backend)]
    backend: Option<BackendKind>,
    /// Scripted law file.
    #[arg(long, global = true)]
    law: Option<PathBuf>,
    /// Replay cache directory.
    #[arg(long, global = true)]
    cache: Option<PathBuf>,
    /// With `--backend replay`, record cache misses from this backend.
    #[arg(long, global = true, value_parser = parse_backend, conflicts_with = "strict")]
    record: Option<BackendKind>,
    /// Treat replay cache misses as errors, even if the config records.
    #[arg(long, global = true)]
    strict: bool,
    #[arg(long, global = true)]
    annotations: Option<PathBuf>,
    /// Context archive to reuse instead of sampling learners.
    #[arg(long, global = true)]
    contexts: Option<PathBuf>,
    #[arg(long, global = true)]
    learners: Option<u64>,
    /// Worker threads for concurrent trials.
    #[arg(long, global = true)]
    parallelism: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Sample learners and write their learning contexts.
    Generate,
    /// Estimate one policy.
    Estimate {
        /// Learner index; the objective-only control state when omitted.
        #[arg(long)]
        learner: Option<u64>,
    },
    /// Control versus intervention against the expert reference.
    Compare,
    /// Leave-one-out influence of every characteristic of one learner.
    Ablate {
        /// Learner index to ablate.
        #[arg(long)]
        learner: Option<u64>,
        /// Estimate the full-context policy once and share it.
        #[arg(long)]
        shared_baseline: bool,
        /// Leave null characteristics out of the ablation context.
        #[arg(long)]
        no_nulls: bool,
    },
    /// Summarise the reports in a run directory.
    Report {
        /// Run directory; defaults to `<out>/<run-id>` from the config.
        run_dir: Option<PathBuf>,
    },
}

fn parse_backend(s: &str) -> std::result::Result<BackendKind, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

impl Overrides {
    fn apply(&self, mut cfg: RunConfig) -> RunConfig {
        macro_rules! set {
            ($($field:ident),*) => {
                $(if let Some(v) = &self.$field { cfg.$field = v.clone().into(); })*
            };
        }
        set!(seed, n, k, out, learners, parallelism);
        if self.run_id.is_some() {
            cfg.run_id = self.run_id.clone();
        }
        if self.annotations.is_some() {
            cfg.annotations = self.annotations.clone();
        }
        if self.contexts.is_some() {
            cfg.contexts = self.contexts.clone();
        }
        if let Some(kind) = self.backend {
            cfg.backend.kind = kind;
        }
        if self.law.is_some() {
            cfg.backend.law = self.law.clone();
        }
        if self.cache.is_some() {
            cfg.backend.cache = self.cache.clone();
        }
        if self.record.is_some() {
            cfg.backend.record = self.record;
        }
        if self.strict {
            cfg.backend.record = None;
        }
        cfg
    }

    fn config(&self) -> Result<RunConfig> {
        let base = match &self.config {
            Some(p) => RunConfig::from_path(p)?,
            None => RunConfig::default(),
        };
        Ok(self.apply(base))
    }
}

/// Whether any estimate behind the command was degraded.
type Degraded = bool;

fn execute(cli: Cli) -> Result<Degraded> {
    let mut cfg = cli.overrides.config()?;
    if let Command::Report { run_dir } = &cli.command {
        let dir = match (run_dir, &cfg.run_id) {
            (Some(d), _) => d.clone(),
            (None, Some(id)) => cfg.out.join(id),
            (None, None) => return Err(Error::Usage("report needs a run directory or --run-id".into())),
        };
        print!("{}", report(&dir)?);
        return Ok(false);
    }
    if let Command::Ablate { learner, shared_baseline, no_nulls } = &cli.command {
        if let Some(i) = learner {
            cfg.ablation.learner = *i;
        }
        cfg.ablation.shared_baseline |= *shared_baseline;
        cfg.ablation.nulls &= !*no_nulls;
    }

    let run = Run::open(cfg)?;
    println!("run directory: {}", run.dir.display());
    let degraded = match cli.command {
        Command::Generate => {
            let records = run.generate()?;
            println!("generated {} learning contexts", records.len());
            false
        }
        Command::Estimate { learner } => {
            let target = learner.map_or(EstimateTarget::Control, EstimateTarget::Learner);
            let est = run.estimate(&target)?;
            println!(
                "{}: {}/{} valid trials{}",
                est.state_ref,
                est.valid_trials,
                est.trials,
                if est.degraded { " (degraded)" } else { "" }
            );
            est.degraded
        }
        Command::Compare => {
            let out = run.compare()?;
            print!("{}", format_compare(&out.summary));
            out.degraded()
        }
        Command::Ablate { .. } => {
            let rep = run.ablate()?;
            print!("{}", format_ablate(&rep));
            rep.degraded()
        }
        Command::Report { .. } => unreachable!("handled above"),
    };
    Ok(degraded)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match execute(cli) {
        Ok(false) => ExitCode::SUCCESS,
        Ok(true) => {
            eprintln!("warning: some estimates were degraded (fewer than 90% valid trials)");
            ExitCode::from(EXIT_DEGRADED as u8)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
