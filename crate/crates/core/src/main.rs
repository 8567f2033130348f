use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use dadrl::config::Config;
use dadrl::harness::{self, render_summary, CHECKPOINT_FILE};
use dadrl::{Agent64, Error};

#[derive(Parser)]
#[command(name = "dadrl", version, about = "Train and evaluate attention-encoded SAC driving agents")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    /// Overrides `run.seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides `run.out`.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    Train(Common),
    Eval(Common),
    Gradcheck(Common),
    Replay {
        #[command(flatten)]
        common: Common,
        /// Trajectory log to replay; a fresh episode is recorded when absent.
        #[arg(long)]
        log: Option<PathBuf>,
    },
    Ablate(Common),
}

enum Failure {
    Config(String),
    Acceptance(String),
    Other(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) => Failure::Config(e.to_string()),
            e => Failure::Other(e.to_string()),
        }
    }
}

fn load(c: &Common) -> Result<(Config, PathBuf), Failure> {
    let mut cfg = Config::load(&c.config)?;
    if let Some(s) = c.seed {
        cfg.run.seed = s;
    }
    let out = c.out.clone().unwrap_or_else(|| cfg.run.out.clone());
    Ok((cfg, out))
}

fn load_agent(path: &std::path::Path, cfg: &Config) -> Result<Agent64, Failure> {
    Ok(Agent64::load(path, &cfg.encoder)?)
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Train(c) => {
            let (cfg, out) = load(&c)?;
            let resume = c.checkpoint.as_deref().map(|p| load_agent(p, &cfg)).transpose()?;
            let r = harness::train(&cfg, resume, Some(&out))?;
            println!(
                "trained {} env steps, {} updates, {} episodes in {:.1}s; checkpoint {}",
                r.env_steps,
                r.agent.updates,
                r.log.len(),
                r.seconds,
                out.join(CHECKPOINT_FILE).display()
            );
        }
        Command::Eval(c) => {
            let (cfg, out) = load(&c)?;
            let path = c.checkpoint.clone().unwrap_or_else(|| out.join(CHECKPOINT_FILE));
            let agent = load_agent(&path, &cfg)?;
            let records = harness::evaluate_agent(&cfg, &agent)?;
            let s = harness::write_eval(&out, "", &records, &cfg)?;
            println!("{}", render_summary("policy", &s));
            if cfg.run.baseline {
                let records = harness::evaluate_random(&cfg)?;
                let s = harness::write_eval(&out, "baseline_", &records, &cfg)?;
                println!("{}", render_summary("random", &s));
            }
        }
        Command::Gradcheck(c) => {
            let (cfg, _) = load(&c)?;
            let reports = harness::gradcheck(&cfg)?;
            let mut failed = 0;
            for (k, r) in reports.iter().enumerate() {
                println!("seed {k}\n{}", r.render());
                failed += usize::from(!r.passed);
            }
            if failed > 0 {
                return Err(Failure::Acceptance(format!("{failed} of {} gradient checks failed", reports.len())));
            }
        }
        Command::Replay { common, log } => {
            let (cfg, out) = load(&common)?;
            let agent = common.checkpoint.as_deref().map(|p| load_agent(p, &cfg)).transpose()?;
            let (path, report) = harness::replay(&cfg, log.as_deref(), agent.as_ref(), &out)?;
            match report.divergence {
                None => println!("{}: {} steps replayed, no divergence", path.display(), report.steps),
                Some(d) => {
                    return Err(Failure::Acceptance(format!(
                        "{}: divergence at step {}\n  logged:   {}\n  replayed: {}",
                        path.display(),
                        d.step,
                        d.expected,
                        d.actual
                    )))
                }
            }
        }
        Command::Ablate(c) => {
            let (cfg, out) = load(&c)?;
            let results = harness::ablate(&cfg, &out)?;
            for r in &results {
                let expected = {
                    let mut e = cfg.encoder.clone();
                    e.variant = r.variant;
                    harness::expected_state_dim(&e)
                };
                println!(
                    "{} (state dim {}, expected {}, attention calls {})",
                    render_summary(r.variant.name(), &r.summary),
                    r.state_dim,
                    expected,
                    r.attention_calls
                );
            }
            let problems = harness::check_ablation(&cfg.encoder, &results);
            if !problems.is_empty() {
                return Err(Failure::Acceptance(problems.join("; ")));
            }
            dadrl::metrics::validate_run_dir(&out).map_err(|e| Failure::Acceptance(e.to_string()))?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Acceptance(m)) => {
            eprintln!("check failed: {m}");
            ExitCode::from(3)
        }
        Err(Failure::Other(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
    }
}
