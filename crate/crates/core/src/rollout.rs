//! Environment stepping, episode bookkeeping and evaluation.

use std::sync::Arc;

use numkit::Scalar;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use traffic_sim::{EgoCommand, Env, ObsConfig, Observation, Scenario, SimConfig, StepOutcome};

use crate::action::map_action;
use crate::error::{Error, Result};
use crate::metrics::{EpisodeRecord, EpisodeStats, Outcome};
use crate::policy::Mode;
use crate::reward::{compute_reward, RewardConfig};
use crate::sac::Agent;

/// Seed of item `index` of a named stream under `root` (FNV-1a of the
/// stream name mixed through SplitMix64).
pub fn derive_seed(root: u64, stream: &str, index: u64) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in stream.bytes() {
        h = (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3);
    }
    let mut z = root ^ h.rotate_left(17) ^ index.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    for _ in 0..2 {
        z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^= z >> 31;
    }
    z
}

/// Seeds of `n` evaluation episodes.
pub fn eval_seeds(root: u64, n: usize) -> Vec<u64> {
    (0..n as u64).map(|k| derive_seed(root, "eval", k)).collect()
}

/// Uniform raw action on `[-1, 1)^2`.
pub fn random_action<R: Rng + ?Sized>(rng: &mut R) -> [f64; 2] {
    [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]
}

/// Source of raw actions for a batch of observations.
pub enum Driver<'a, T: Scalar> {
    Policy {
        agent: &'a Agent<T>,
        mode: Mode,
        rng: ChaCha8Rng,
    },
    Random {
        rng: ChaCha8Rng,
    },
}

impl<'a, T: Scalar> Driver<'a, T> {
    pub fn deterministic(agent: &'a Agent<T>) -> Self {
        Driver::Policy {
            agent,
            mode: Mode::Deterministic,
            rng: ChaCha8Rng::seed_from_u64(0),
        }
    }

    pub fn random(seed: u64) -> Self {
        Driver::Random {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn actions(&mut self, obs: &[&Observation]) -> Result<Vec<[f64; 2]>> {
        match self {
            Driver::Policy { agent, mode, rng } => agent.act(obs, *mode, rng),
            Driver::Random { rng } => Ok(obs.iter().map(|_| random_action(rng)).collect()),
        }
    }
}

/// Steps every environment with its command, spreading the work over up to
/// `threads` scoped threads. Results keep the input order.
pub fn step_all(envs: &mut [&mut Env], cmds: &[EgoCommand], threads: usize) -> Vec<Result<StepOutcome>> {
    let n = envs.len();
    if threads <= 1 || n <= 1 {
        return envs
            .iter_mut()
            .zip(cmds)
            .map(|(e, c)| e.step(*c).map_err(Error::from))
            .collect();
    }
    let chunk = n.div_ceil(threads);
    std::thread::scope(|s| {
        let handles: Vec<_> = envs
            .chunks_mut(chunk)
            .zip(cmds.chunks(chunk))
            .map(|(es, cs)| {
                s.spawn(move || {
                    es.iter_mut()
                        .zip(cs)
                        .map(|(e, c)| e.step(*c).map_err(Error::from))
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("environment worker panicked"))
            .collect()
    })
}

/// Everything needed to build environments and score their steps.
#[derive(Clone, Debug)]
pub struct EnvSpec {
    pub scenario: Arc<Scenario>,
    pub sim: SimConfig,
    pub obs: ObsConfig,
    pub reward: RewardConfig,
}

impl EnvSpec {
    pub fn make(&self) -> Result<Env> {
        Ok(Env::new(Arc::clone(&self.scenario), self.sim, self.obs)?)
    }

    /// Reward of the step that produced `out` in `env`.
    pub fn reward(&self, env: &Env, out: &StepOutcome) -> f64 {
        compute_reward(&out.events, env.ego(), &self.reward)
    }
}

/// One environment together with its running episode.
pub struct Slot {
    pub env: Env,
    pub obs: Arc<Observation>,
    pub stats: EpisodeStats,
    pub episode: usize,
}

impl Slot {
    pub fn start(mut env: Env, episode: usize, seed: u64) -> Self {
        let obs = Arc::new(env.reset(seed));
        Slot {
            env,
            obs,
            stats: EpisodeStats::default(),
            episode,
        }
    }

    pub fn restart(&mut self, episode: usize, seed: u64) {
        self.obs = Arc::new(self.env.reset(seed));
        self.stats = EpisodeStats::default();
        self.episode = episode;
    }

    /// Books a finished step; returns the episode record when it ended.
    pub fn record(&mut self, out: &StepOutcome, reward: f64) -> Result<Option<EpisodeRecord>> {
        let ego = self.env.ego();
        self.stats.observe(&out.events, ego.jerk, ego.yaw_acc, reward);
        if !(out.terminated || out.truncated) {
            return Ok(None);
        }
        let outcome = Outcome::classify(&out.events, out.terminated)
            .ok_or_else(|| Error::Input("episode terminated without a terminal event".into()))?;
        Ok(Some(self.finish(outcome)))
    }

    pub fn finish(&self, outcome: Outcome) -> EpisodeRecord {
        self.stats
            .finish(self.episode, self.env.seed(), outcome, self.env.progress_fraction())
    }
}

/// Plays one episode per seed with `driver`, keeping up to `batch`
/// environments in lockstep. Records come back in seed order.
pub fn evaluate<T: Scalar>(
    spec: &EnvSpec,
    seeds: &[u64],
    driver: &mut Driver<'_, T>,
    batch: usize,
    threads: usize,
) -> Result<Vec<EpisodeRecord>> {
    let mut records: Vec<Option<EpisodeRecord>> = vec![None; seeds.len()];
    let mut slots: Vec<Slot> = Vec::new();
    let mut next = 0;
    while next < seeds.len() && slots.len() < batch.max(1) {
        slots.push(Slot::start(spec.make()?, next, seeds[next]));
        next += 1;
    }
    while !slots.is_empty() {
        let obs: Vec<&Observation> = slots.iter().map(|s| s.obs.as_ref()).collect();
        let actions = driver.actions(&obs)?;
        let cmds: Vec<EgoCommand> = actions.iter().map(|a| map_action(*a, spec.sim.v_max)).collect();
        let outs = {
            let mut envs: Vec<&mut Env> = slots.iter_mut().map(|s| &mut s.env).collect();
            step_all(&mut envs, &cmds, threads)
        };
        let mut finished = Vec::new();
        for (i, (slot, out)) in slots.iter_mut().zip(outs).enumerate() {
            let out = out?;
            let r = spec.reward(&slot.env, &out);
            if let Some(rec) = slot.record(&out, r)? {
                records[slot.episode] = Some(rec);
                finished.push(i);
            } else {
                slot.obs = Arc::new(out.observation);
            }
        }
        for i in finished.into_iter().rev() {
            if next < seeds.len() {
                slots[i].restart(next, seeds[next]);
                next += 1;
            } else {
                slots.remove(i);
            }
        }
    }
    Ok(records.into_iter().map(|r| r.expect("every episode finishes")).collect())
}
