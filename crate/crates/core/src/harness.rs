//! The `train`, `eval`, `gradcheck`, `replay` and `ablate` commands.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use numkit::{GradCheckOptions, GradCheckReport, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use traffic_sim::{EgoCommand, Env, Observation, ReplayReport, TrajectoryLog};

use crate::action::map_action;
use crate::buffer::{ReplayBuffer, Transition};
use crate::config::Config;
use crate::encoder::{EncoderConfig, Variant};
use crate::error::{Error, Result};
use crate::features::EGO_NOW_DIM;
use crate::metrics::{
    summarize, write_ablation_csv, write_metrics_csv, write_summary_json, AblationRow, EpisodeRecord, Outcome,
    Summary,
};
use crate::policy::{gaussian_noise, Mode, ACTION_DIM};
use crate::rollout::{derive_seed, eval_seeds, evaluate, random_action, step_all, Driver, EnvSpec, Slot};
use crate::sac::{Agent, LossInputs, UpdateReport};
use crate::Agent64;

pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const TRAIN_LOG_FILE: &str = "training_log.csv";

pub fn env_spec(cfg: &Config) -> Result<EnvSpec> {
    Ok(EnvSpec {
        scenario: cfg.scenario()?,
        sim: cfg.sim,
        obs: cfg.encoder.obs_config(),
        reward: cfg.rl.reward.clone(),
    })
}

fn prepare_out(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)
        .map_err(|e| Error::Config(format!("cannot create output directory {}: {e}", dir.display())))
}

/// One finished training episode with the learner state at that moment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainLogRow {
    pub env_steps: usize,
    pub episode: usize,
    pub seed: u64,
    pub outcome: Outcome,
    pub steps: usize,
    pub episode_return: f64,
    pub progress_frac: f64,
    pub updates: u64,
    pub critic_loss: f64,
    pub policy_loss: f64,
    pub alpha_loss: f64,
    pub alpha: f64,
    pub entropy: f64,
}

pub struct TrainResult {
    pub agent: Agent64,
    pub env_steps: usize,
    pub log: Vec<TrainLogRow>,
    pub seconds: f64,
}

/// Trains for `run.total_steps` environment steps. `resume` continues from a
/// restored learner with a fresh replay buffer. With `out`, writes the
/// training log and checkpoints there.
pub fn train(cfg: &Config, resume: Option<Agent64>, out: Option<&Path>) -> Result<TrainResult> {
    let started = Instant::now();
    let spec = env_spec(cfg)?;
    let run = &cfg.run;
    let root = run.seed;
    if let Some(dir) = out {
        prepare_out(dir)?;
    }
    let mut agent = match resume {
        Some(a) => {
            if a.encoder_config() != &cfg.encoder {
                return Err(Error::Checkpoint("checkpoint encoder differs from the config".into()));
            }
            a
        }
        None => Agent::new(&cfg.encoder, &cfg.rl, derive_seed(root, "agent", 0))?,
    };
    let fresh = agent.updates == 0;
    let rl = &cfg.rl;
    let mut buffer = ReplayBuffer::new(rl.buffer_capacity, rl.warmup_steps.max(rl.batch_size), derive_seed(root, "buffer", 0));
    let mut explore = ChaCha8Rng::seed_from_u64(derive_seed(root, "explore", 0));

    let mut episode = 0usize;
    let mut slots = Vec::with_capacity(run.workers);
    for _ in 0..run.workers {
        slots.push(Slot::start(spec.make()?, episode, derive_seed(root, "train", episode as u64)));
        episode += 1;
    }

    let mut log = Vec::new();
    let mut last = UpdateReport::default();
    let mut env_steps = 0usize;
    let mut since_update = 0usize;
    let mut next_report = run.total_steps / 20;
    let mut next_checkpoint = run.checkpoint_every;
    while env_steps < run.total_steps {
        let active = (run.total_steps - env_steps).min(slots.len());
        let obs: Vec<&Observation> = slots[..active].iter().map(|s| s.obs.as_ref()).collect();
        let actions = if fresh && env_steps < rl.warmup_steps {
            obs.iter().map(|_| random_action(&mut explore)).collect()
        } else {
            agent.act(&obs, Mode::Stochastic, &mut explore)?
        };
        let cmds: Vec<EgoCommand> = actions.iter().map(|a| map_action(*a, cfg.sim.v_max)).collect();
        let outs = {
            let mut envs: Vec<&mut Env> = slots[..active].iter_mut().map(|s| &mut s.env).collect();
            step_all(&mut envs, &cmds, run.workers)
        };
        for (i, out) in outs.into_iter().enumerate() {
            let out = out?;
            let slot = &mut slots[i];
            let reward = spec.reward(&slot.env, &out);
            let next = Arc::new(out.observation.clone());
            buffer.push(Transition {
                obs: Arc::clone(&slot.obs),
                action: actions[i],
                reward,
                next_obs: Arc::clone(&next),
                done: out.terminated,
            });
            env_steps += 1;
            if let Some(rec) = slot.record(&out, reward)? {
                log.push(log_row(&rec, env_steps, agent.updates, &last));
                slot.restart(episode, derive_seed(root, "train", episode as u64));
                episode += 1;
            } else {
                slot.obs = next;
            }
        }
        since_update += active;
        while since_update >= rl.update_every {
            since_update -= rl.update_every;
            if buffer.is_ready() {
                for _ in 0..rl.updates_per_round {
                    let batch = buffer.sample(rl.batch_size)?;
                    last = agent.update(&batch)?;
                }
            }
        }
        if let Some(dir) = out {
            if run.checkpoint_every > 0 && env_steps >= next_checkpoint {
                agent.save(&dir.join(CHECKPOINT_FILE))?;
                next_checkpoint += run.checkpoint_every;
            }
        }
        if run.verbose && env_steps >= next_report {
            next_report += (run.total_steps / 20).max(1);
            report_progress(env_steps, run.total_steps, &log, &agent, &last, started);
        }
    }
    for slot in &slots {
        if slot.stats.steps > 0 {
            let rec = slot.finish(Outcome::Timeout);
            log.push(log_row(&rec, env_steps, agent.updates, &last));
        }
    }
    if let Some(dir) = out {
        agent.save(&dir.join(CHECKPOINT_FILE))?;
        let mut w = csv::Writer::from_path(dir.join(TRAIN_LOG_FILE))?;
        for row in &log {
            w.serialize(row)?;
        }
        w.flush()?;
    }
    Ok(TrainResult {
        agent,
        env_steps,
        log,
        seconds: started.elapsed().as_secs_f64(),
    })
}

fn log_row(rec: &EpisodeRecord, env_steps: usize, updates: u64, last: &UpdateReport) -> TrainLogRow {
    TrainLogRow {
        env_steps,
        episode: rec.row.episode,
        seed: rec.row.seed,
        outcome: rec.row.outcome,
        steps: rec.row.steps,
        episode_return: rec.episode_return,
        progress_frac: rec.row.progress_frac,
        updates,
        critic_loss: last.critic_loss,
        policy_loss: last.policy_loss,
        alpha_loss: last.alpha_loss,
        alpha: last.alpha,
        entropy: last.entropy,
    }
}

fn report_progress(steps: usize, total: usize, log: &[TrainLogRow], agent: &Agent64, last: &UpdateReport, t: Instant) {
    let recent = &log[log.len().saturating_sub(20)..];
    let n = recent.len().max(1) as f64;
    let succ = recent.iter().filter(|r| r.outcome == Outcome::Success).count() as f64 / n;
    let coll = recent.iter().filter(|r| r.outcome == Outcome::Collision).count() as f64 / n;
    let ret = recent.iter().map(|r| r.episode_return).sum::<f64>() / n;
    eprintln!(
        "[{:>7.1}s] steps {steps}/{total} episodes {} updates {} | last20 succ {:.2} coll {:.2} return {:.2} | q {:.2} critic {:.3} alpha {:.3}",
        t.elapsed().as_secs_f64(),
        log.len(),
        agent.updates,
        succ,
        coll,
        ret,
        last.mean_q,
        last.critic_loss,
        agent.alpha(),
    );
}

/// Deterministic-policy evaluation on the configured evaluation seeds.
pub fn evaluate_agent(cfg: &Config, agent: &Agent64) -> Result<Vec<EpisodeRecord>> {
    let spec = env_spec(cfg)?;
    let seeds = eval_seeds(cfg.run.seed, cfg.run.eval_episodes);
    evaluate(&spec, &seeds, &mut Driver::deterministic(agent), cfg.run.eval_batch, cfg.run.workers)
}

/// Uniform random actions on the same evaluation seeds.
pub fn evaluate_random(cfg: &Config) -> Result<Vec<EpisodeRecord>> {
    let spec = env_spec(cfg)?;
    let seeds = eval_seeds(cfg.run.seed, cfg.run.eval_episodes);
    let mut driver: Driver<'_, f64> = Driver::random(derive_seed(cfg.run.seed, "baseline", 0));
    evaluate(&spec, &seeds, &mut driver, cfg.run.eval_batch, cfg.run.workers)
}

/// Writes `<prefix>metrics.csv` and `<prefix>summary.json`.
pub fn write_eval(dir: &Path, prefix: &str, records: &[EpisodeRecord], cfg: &Config) -> Result<Summary> {
    prepare_out(dir)?;
    let summary = summarize(records, &cfg.run.score);
    write_metrics_csv(&dir.join(format!("{prefix}metrics.csv")), records)?;
    write_summary_json(&dir.join(format!("{prefix}summary.json")), &summary)?;
    Ok(summary)
}

pub fn render_summary(label: &str, s: &Summary) -> String {
    format!(
        "{label}: succ {:.1}% coll {:.1}% stag {:.1}% humanness {:.4} overall {:.4}",
        s.succ_pct, s.coll_pct, s.stag_pct, s.humanness_error, s.overall_score
    )
}

/// Observation batch from a scenario with traffic for gradient checks:
/// drives uniform random commands for `warmup_steps`, then records
/// `batch` consecutive observations.
pub fn gradcheck_observations(cfg: &Config, seed: u64) -> Result<Vec<Observation>> {
    let spec = env_spec(cfg)?;
    let g = &cfg.run.gradcheck;
    let mut env = spec.make()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut episode = 0;
    let mut obs = env.reset(derive_seed(seed, "gradcheck-env", episode));
    let mut out = Vec::with_capacity(g.batch);
    let mut step = 0;
    while out.len() < g.batch {
        if step >= g.warmup_steps {
            out.push(obs.clone());
        }
        let o = env.step(map_action(random_action(&mut rng), cfg.sim.v_max))?;
        step += 1;
        obs = if o.terminated || o.truncated {
            episode += 1;
            env.reset(derive_seed(seed, "gradcheck-env", episode))
        } else {
            o.observation
        };
    }
    Ok(out)
}

/// Gradient check of the full encoder, policy and critic composite for
/// `run.gradcheck.seeds` independently initialised agents.
pub fn gradcheck(cfg: &Config) -> Result<Vec<GradCheckReport>> {
    let g = &cfg.run.gradcheck;
    let mut reports = Vec::new();
    for k in 0..g.seeds {
        let seed = derive_seed(cfg.run.seed, "gradcheck", k);
        let agent = Agent::<f64>::new(&cfg.encoder, &cfg.rl, seed)?;
        let obs = gradcheck_observations(cfg, seed)?;
        let refs: Vec<&Observation> = obs.iter().collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 1);
        let b = obs.len();
        let actions = (0..b * ACTION_DIM).map(|_| rng.random_range(-0.9..0.9)).collect();
        let targets = (0..b).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let inputs = LossInputs {
            input: agent.prepare(&refs)?,
            actions: Tensor::new(vec![b, ACTION_DIM], actions)?,
            targets: Tensor::new(vec![b, 1], targets)?,
            noise: gaussian_noise(&mut rng, b),
        };
        let opts = GradCheckOptions {
            step: g.step,
            tolerance: g.tolerance,
            floor: g.floor,
            max_entries_per_tensor: g.entries_per_tensor,
            seed,
        };
        reports.push(agent.grad_check(&inputs, &opts)?);
    }
    Ok(reports)
}

/// Drives one episode with `driver` and records its trajectory log.
pub fn record_episode(spec: &EnvSpec, seed: u64, driver: &mut Driver<'_, f64>) -> Result<TrajectoryLog> {
    let mut env = spec.make()?;
    let mut obs = env.reset(seed);
    let mut log = TrajectoryLog::start(&env);
    loop {
        let a = driver.actions(&[&obs])?[0];
        let cmd = map_action(a, spec.sim.v_max);
        let out = env.step(cmd)?;
        log.record(cmd, &env, &out);
        if out.terminated || out.truncated {
            return Ok(log);
        }
        obs = out.observation;
    }
}

/// Replays `log`, or when absent records a fresh episode (policy from
/// `agent` or uniform random) into `out/trajectory.jsonl` and replays that.
pub fn replay(cfg: &Config, log: Option<&Path>, agent: Option<&Agent64>, out: &Path) -> Result<(PathBuf, ReplayReport)> {
    let spec = env_spec(cfg)?;
    let path = match log {
        Some(p) => p.to_path_buf(),
        None => {
            prepare_out(out)?;
            let seed = derive_seed(cfg.run.seed, "replay", 0);
            let mut driver = match agent {
                Some(a) => Driver::deterministic(a),
                None => Driver::random(seed),
            };
            let log = record_episode(&spec, seed, &mut driver)?;
            let p = out.join("trajectory.jsonl");
            log.save(&p)?;
            p
        }
    };
    let log = TrajectoryLog::load(&path)?;
    Ok((path, traffic_sim::replay(&log, spec.scenario)?))
}

/// Encoder output width each variant must have.
pub fn expected_state_dim(cfg: &EncoderConfig) -> usize {
    match cfg.variant {
        Variant::Full => cfg.d_z + cfg.d_c,
        Variant::ContextFree => cfg.d_z,
        Variant::ContextOnly => EGO_NOW_DIM + cfg.d_c,
    }
}

pub struct VariantResult {
    pub variant: Variant,
    pub state_dim: usize,
    pub attention_calls: u64,
    pub train_seeds: Vec<u64>,
    pub records: Vec<EpisodeRecord>,
    pub summary: Summary,
}

/// Trains and evaluates each configured variant with shared seeds, writing
/// `<scenario>__<variant>__{metrics.csv,summary.json}` and
/// `ablation_summary.csv` to `out`.
pub fn ablate(cfg: &Config, out: &Path) -> Result<Vec<VariantResult>> {
    prepare_out(out)?;
    let label = cfg.scenario_label();
    let mut results = Vec::new();
    for &variant in &cfg.run.variants {
        let mut c = cfg.clone();
        c.encoder.variant = variant;
        let dir = out.join(format!("{label}__{}", variant.name()));
        let trained = train(&c, None, Some(&dir))?;
        let records = evaluate_agent(&c, &trained.agent)?;
        let summary = write_eval(out, &format!("{label}__{}__", variant.name()), &records, &c)?;
        if c.run.verbose {
            eprintln!("{}", render_summary(variant.name(), &summary));
        }
        results.push(VariantResult {
            variant,
            state_dim: trained.agent.encoder.output_dim(),
            attention_calls: trained.agent.encoder.attention_calls(),
            train_seeds: trained.log.iter().map(|r| r.seed).collect(),
            records,
            summary,
        });
    }
    let rows: Vec<AblationRow> = results
        .iter()
        .map(|r| AblationRow {
            scenario: label.clone(),
            variant: r.variant.name().to_string(),
            state_dim: r.state_dim,
            succ_pct: r.summary.succ_pct,
            coll_pct: r.summary.coll_pct,
            stag_pct: r.summary.stag_pct,
            humanness_error: r.summary.humanness_error,
            overall_score: r.summary.overall_score,
            attention_calls: r.attention_calls,
        })
        .collect();
    write_ablation_csv(&out.join("ablation_summary.csv"), &rows)?;
    Ok(results)
}

/// Mismatches between ablation results and the variant definitions: output
/// width, attention use and shared training seeds.
pub fn check_ablation(base: &EncoderConfig, results: &[VariantResult]) -> Vec<String> {
    let mut problems = Vec::new();
    for r in results {
        let mut e = base.clone();
        e.variant = r.variant;
        let want = expected_state_dim(&e);
        if r.state_dim != want {
            problems.push(format!("{}: state dim {} instead of {want}", r.variant.name(), r.state_dim));
        }
        let attends = r.variant != Variant::ContextOnly;
        if attends != (r.attention_calls > 0) {
            problems.push(format!("{}: {} attention calls", r.variant.name(), r.attention_calls));
        }
        // Episode counts differ with episode lengths; the seed sequence must not.
        let n = r.train_seeds.len().min(results[0].train_seeds.len());
        if r.train_seeds[..n] != results[0].train_seeds[..n] {
            problems.push(format!("{}: training seeds differ from {}", r.variant.name(), results[0].variant.name()));
        }
        let eval: Vec<u64> = r.records.iter().map(|x| x.row.seed).collect();
        let first: Vec<u64> = results[0].records.iter().map(|x| x.row.seed).collect();
        if eval != first {
            problems.push(format!("{}: evaluation seeds differ", r.variant.name()));
        }
    }
    problems
}
