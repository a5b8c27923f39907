use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use modbayes::dataio::RunConfig;
use modbayes::inference::LikelihoodMode;
use modbayes::pipeline::{default_out_dir, run_pipeline, Run};
use modbayes::{Error, Result};

#[derive(Parser)]
#[command(name = "modbayes", version, about = "Modular Bayesian inverse uncertainty quantification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Read the measured tests or generate the toy corpus.
    Synth(Common),
    /// Correct, filter and partition the tests.
    Tsa(Common),
    /// Train the discrepancy and simulator emulators.
    Emulate(Common),
    /// Sample the posterior.
    Mcmc(Common),
    /// Summarize a sampled posterior.
    Analyze(Common),
    /// Run every stage.
    Run(Common),
}

#[derive(Args)]
struct Common {
    /// TOML configuration; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory; required for stage commands after `synth`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides the master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Likelihood form.
    #[arg(long)]
    mode: Option<LikelihoodMode>,
    /// Caps the number of worker threads.
    #[arg(long)]
    threads: Option<usize>,
}

impl Common {
    fn config(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(m) = self.mode {
            cfg.likelihood.mode = m;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn out(&self, cfg: &RunConfig, fresh: bool) -> Result<PathBuf> {
        match &self.out {
            Some(p) => Ok(p.clone()),
            None if fresh => Ok(default_out_dir(cfg)),
            None => Err(Error::Config("--out is required to resume from an earlier stage".into())),
        }
    }
}

fn execute(cli: Cli) -> Result<()> {
    let (common, stage) = match &cli.command {
        Command::Synth(c) => (c, "synth"),
        Command::Tsa(c) => (c, "tsa"),
        Command::Emulate(c) => (c, "emulate"),
        Command::Mcmc(c) => (c, "mcmc"),
        Command::Analyze(c) => (c, "analyze"),
        Command::Run(c) => (c, "run"),
    };
    if let Some(n) = common.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    }
    let cfg = common.config()?;
    let out = common.out(&cfg, matches!(stage, "synth" | "run"))?;
    if stage == "run" {
        let report = run_pipeline(cfg, &out)?;
        println!("{}", serde_json::to_string_pretty(&report.posterior)?);
        println!("output: {}", out.display());
        return Ok(());
    }
    let mode = cfg.likelihood.mode;
    let mut run = Run::open(cfg, &out)?;
    let res = match stage {
        "synth" => run.synth().map(|t| println!("{} tests", t.tests.len())),
        "tsa" => run.tsa().map(|o| {
            println!("IUQ tests: {:?}", o.partition.iuq_ids);
            println!("validation tests: {:?}", o.partition.val_ids);
        }),
        "emulate" => run.emulate().map(|r| {
            for q in &r.qois {
                println!("output {}: Q2 = {:.4}, LOOCV = {:.4e}", q.qoi, q.q2, q.loocv);
            }
        }),
        "mcmc" => run.mcmc(mode).map(|s| {
            println!("acceptance {:.3}, retained {}, ESS {:?}", s.acceptance_rate, s.n_retained, s.ess);
        }),
        _ => run.analyze(mode).and_then(|s| {
            println!("{}", serde_json::to_string_pretty(&s)?);
            Ok(())
        }),
    };
    if let Err(e) = &res {
        run.fail(e);
    }
    println!("output: {}", out.display());
    res
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
