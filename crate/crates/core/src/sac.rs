//! Soft Actor-Critic learner with an end-to-end trained encoder.

use std::path::{Path, PathBuf};

use numkit::{
    AdamConfig, AdamState, Bound, Checkpoint, GradCheckOptions, GradCheckReport, NumError, ParamStore, Scalar, Tape,
    Tensor, Var,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use traffic_sim::Observation;

use crate::buffer::Transition;
use crate::encoder::{Encoder, EncoderConfig};
use crate::error::{Error, Result};
use crate::features::EncoderInput;
use crate::policy::{gaussian_noise, squashed_sample, CriticPair, Mode, PolicyHead, ACTION_DIM};
use crate::reward::RewardConfig;

/// Sampled actions are kept this far inside `(-1, 1)`.
pub const ACTION_LIMIT: f64 = 1.0 - 1e-9;
const SIDECAR_FORMAT: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SacConfig {
    pub gamma: f64,
    pub tau: f64,
    pub batch_size: usize,
    pub buffer_capacity: usize,
    /// Transitions collected (with uniform random actions) before updates start.
    pub warmup_steps: usize,
    /// Learning rate of the encoder, policy and critics.
    pub lr: f64,
    pub alpha_lr: f64,
    pub initial_alpha: f64,
    /// Entropy target; `-dim(action)` when absent.
    pub target_entropy: Option<f64>,
    /// Hidden widths of the policy and critic MLPs.
    pub hidden: Vec<usize>,
    /// Environment steps (summed over workers) between update rounds.
    pub update_every: usize,
    pub updates_per_round: usize,
    /// Let the policy loss train the encoder as well as the critic loss.
    pub policy_trains_encoder: bool,
    pub reward: RewardConfig,
}

impl Default for SacConfig {
    fn default() -> Self {
        SacConfig {
            gamma: 0.99,
            tau: 0.005,
            batch_size: 256,
            buffer_capacity: 200_000,
            warmup_steps: 5_000,
            lr: 3e-4,
            alpha_lr: 3e-4,
            initial_alpha: 0.2,
            target_entropy: None,
            hidden: vec![256, 256],
            update_every: 1,
            updates_per_round: 1,
            policy_trains_encoder: true,
            reward: RewardConfig::default(),
        }
    }
}

impl SacConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("rl: {m}")));
        if !(0.0..=1.0).contains(&self.gamma) || !(0.0..=1.0).contains(&self.tau) {
            return bad("gamma and tau must lie in [0, 1]");
        }
        if self.batch_size == 0 || self.buffer_capacity < self.batch_size {
            return bad("batch_size must be positive and fit in the buffer");
        }
        if self.update_every == 0 {
            return bad("update_every must be positive");
        }
        if !(self.lr >= 0.0) || !(self.alpha_lr >= 0.0) || !(self.initial_alpha > 0.0) {
            return bad("learning rates must be non-negative and initial_alpha positive");
        }
        if self.hidden.contains(&0) {
            return bad("hidden widths must be positive");
        }
        self.reward.validate()
    }

    pub fn target_entropy(&self) -> f64 {
        self.target_entropy.unwrap_or(-(ACTION_DIM as f64))
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct UpdateReport {
    pub critic_loss: f64,
    pub policy_loss: f64,
    pub alpha_loss: f64,
    pub alpha: f64,
    pub mean_q: f64,
    pub entropy: f64,
}

/// Tape bindings of every learnable store.
pub struct Bindings {
    pub encoder: Bound,
    pub policy: Bound,
    pub critic: Bound,
    /// Critic as seen by the policy loss (frozen during training).
    pub critic_in_policy: Bound,
    pub log_alpha: Bound,
}

/// Scalar losses of one batch.
pub struct LossVars {
    pub critic: Var,
    pub policy: Var,
    pub alpha: Var,
    pub total: Var,
    pub log_prob: Var,
    pub q1: Var,
}

/// Batch tensors for the loss graph.
pub struct LossInputs<T> {
    pub input: EncoderInput<T>,
    /// `[B x 2]` raw actions taken.
    pub actions: Tensor<T>,
    /// `[B x 1]` critic targets.
    pub targets: Tensor<T>,
    /// `[B x 2]` reparameterisation noise for fresh actions.
    pub noise: Tensor<T>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct Sidecar {
    format: u32,
    encoder: EncoderConfig,
    rl: SacConfig,
    updates: u64,
    adam_steps: [u64; 4],
    log_alpha: f64,
    rng: ChaCha8Rng,
}

#[derive(Clone, Debug)]
pub struct Agent<T: Scalar> {
    pub encoder: Encoder,
    pub policy: PolicyHead,
    pub critics: CriticPair,
    pub encoder_params: ParamStore<T>,
    pub policy_params: ParamStore<T>,
    pub critic_params: ParamStore<T>,
    pub target_params: ParamStore<T>,
    /// Single entry `log_alpha`.
    pub alpha_params: ParamStore<T>,
    pub opt: [AdamState<T>; 4],
    pub config: SacConfig,
    /// Noise stream of the learner.
    pub rng: ChaCha8Rng,
    pub updates: u64,
}

const STORE_NAMES: [&str; 4] = ["encoder", "policy", "critic", "alpha"];

impl<T: Scalar> Agent<T> {
    pub fn new(enc_cfg: &EncoderConfig, config: &SacConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut encoder_params = ParamStore::new();
        let encoder = Encoder::new(&mut encoder_params, enc_cfg, &mut rng)?;
        let mut policy_params = ParamStore::new();
        let policy = PolicyHead::new(&mut policy_params, encoder.output_dim(), &config.hidden, &mut rng);
        let mut critic_params = ParamStore::new();
        let critics = CriticPair::new(&mut critic_params, encoder.output_dim(), &config.hidden, &mut rng);
        let target_params = critic_params.clone();
        let mut alpha_params = ParamStore::new();
        alpha_params.add("log_alpha", Tensor::scalar(T::lit(config.initial_alpha.ln())));
        let adam = |s: &ParamStore<T>, lr: f64| AdamState::new(s, AdamConfig::with_lr(lr));
        let opt = [
            adam(&encoder_params, config.lr),
            adam(&policy_params, config.lr),
            adam(&critic_params, config.lr),
            adam(&alpha_params, config.alpha_lr),
        ];
        Ok(Agent {
            encoder,
            policy,
            critics,
            encoder_params,
            policy_params,
            critic_params,
            target_params,
            alpha_params,
            opt,
            config: config.clone(),
            rng,
            updates: 0,
        })
    }

    pub fn encoder_config(&self) -> &EncoderConfig {
        &self.encoder.config
    }

    pub fn log_alpha(&self) -> T {
        self.alpha_params.tensors()[0].data()[0]
    }

    pub fn alpha(&self) -> f64 {
        self.log_alpha().exp().to_f64().unwrap_or(f64::NAN)
    }

    pub fn prepare(&self, obs: &[&Observation]) -> Result<EncoderInput<T>> {
        let c = &self.encoder.config;
        EncoderInput::from_observations(obs, c.n, c.map_size).map_err(Error::Input)
    }

    /// Raw actions for a batch of observations. Stochastic mode draws its
    /// noise from `rng`.
    pub fn act<R: Rng + ?Sized>(&self, obs: &[&Observation], mode: Mode, rng: &mut R) -> Result<Vec<[f64; 2]>> {
        let input = self.prepare(obs)?;
        let mut tape = Tape::new();
        let enc = self.encoder_params.bind_frozen(&mut tape);
        let pol = self.policy_params.bind_frozen(&mut tape);
        let e = self.encoder.encode(&mut tape, &enc, &input)?;
        let (mean, log_std) = self.policy.forward(&mut tape, &pol, e.s)?;
        let action = match mode {
            Mode::Deterministic => tape.tanh(mean),
            Mode::Stochastic => {
                let noise = gaussian_noise(rng, obs.len());
                squashed_sample(&mut tape, mean, log_std, noise)?.0
            }
        };
        let lim = T::lit(ACTION_LIMIT);
        Ok(tape
            .value(action)
            .data()
            .chunks(ACTION_DIM)
            .map(|c| std::array::from_fn(|i| c[i].max(-lim).min(lim).to_f64().unwrap_or(0.0)))
            .collect())
    }

    /// `y = r + gamma (1 - d) (min Q_target(s', a') - alpha log pi(a'|s'))`
    /// with `a'` drawn from the current policy using `noise`. Terminal rows
    /// give `y = r` exactly.
    pub fn critic_targets(
        &self,
        next: &EncoderInput<T>,
        rewards: &[f64],
        dones: &[bool],
        noise: Tensor<T>,
    ) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let enc = self.encoder_params.bind_frozen(&mut tape);
        let pol = self.policy_params.bind_frozen(&mut tape);
        let tgt = self.target_params.bind_frozen(&mut tape);
        let e = self.encoder.encode(&mut tape, &enc, next)?;
        let (mean, log_std) = self.policy.forward(&mut tape, &pol, e.s)?;
        let (a, logp) = squashed_sample(&mut tape, mean, log_std, noise)?;
        let (q1, q2) = self.critics.forward(&mut tape, &tgt, e.s, a)?;
        let alpha = self.log_alpha().exp();
        let gamma = T::lit(self.config.gamma);
        let (q1, q2, logp) = (tape.value(q1).data(), tape.value(q2).data(), tape.value(logp).data());
        let y = (0..rewards.len())
            .map(|i| {
                let r = T::lit(rewards[i]);
                if dones[i] {
                    r
                } else {
                    r + gamma * (q1[i].min(q2[i]) - alpha * logp[i])
                }
            })
            .collect();
        Ok(Tensor::new(vec![rewards.len(), 1], y)?)
    }

    /// Binds all stores. With `train` the policy loss sees the critics as
    /// constants; otherwise every path is differentiable.
    pub fn bind<'a>(&'a self, tape: &mut Tape<'a, T>, train: bool) -> Bindings {
        let encoder = self.encoder_params.bind(tape);
        let policy = self.policy_params.bind(tape);
        let critic = self.critic_params.bind(tape);
        let critic_in_policy = if train {
            self.critic_params.bind_frozen(tape)
        } else {
            critic.clone()
        };
        let log_alpha = self.alpha_params.bind(tape);
        Bindings {
            encoder,
            policy,
            critic,
            critic_in_policy,
            log_alpha,
        }
    }

    /// Loss graph for one batch.
    ///
    /// With `train`: critic loss `0.5 (MSE(Q1, y) + MSE(Q2, y))`, policy loss
    /// `mean(alpha log pi - min Q)` with `alpha` constant, and temperature
    /// loss `-log_alpha * mean(log pi + target_entropy)` with `log pi`
    /// constant. Without `train` the stop-gradients are dropped: `alpha`
    /// enters the policy loss as `exp(log_alpha)` and the temperature loss is
    /// zero, giving a smooth composite for gradient checks.
    pub fn losses(
        &self,
        tape: &mut Tape<'_, T>,
        b: &Bindings,
        x: &LossInputs<T>,
        train: bool,
    ) -> Result<LossVars> {
        let e = self.encoder.encode(tape, &b.encoder, &x.input)?;
        let actions = tape.constant(x.actions.clone());
        let targets = tape.constant(x.targets.clone());
        let (q1, q2) = self.critics.forward(tape, &b.critic, e.s, actions)?;
        let d1 = tape.sub(q1, targets)?;
        let d1 = tape.square(d1);
        let d2 = tape.sub(q2, targets)?;
        let d2 = tape.square(d2);
        let m1 = tape.mean(d1);
        let m2 = tape.mean(d2);
        let critic = tape.add(m1, m2)?;
        let critic = tape.scale(critic, T::lit(0.5));

        let s_pol = if train && !self.config.policy_trains_encoder {
            tape.detach(e.s)
        } else {
            e.s
        };
        let (mean, log_std) = self.policy.forward(tape, &b.policy, s_pol)?;
        let (a_new, logp) = squashed_sample(tape, mean, log_std, x.noise.clone())?;
        let (p1, p2) = self.critics.forward(tape, &b.critic_in_policy, s_pol, a_new)?;
        let qmin = tape.minimum(p1, p2)?;
        let log_alpha = b.log_alpha[self.alpha_params.ids().next().expect("log_alpha")];
        let (weighted, alpha) = if train {
            let a = self.log_alpha().exp();
            let w = tape.scale(logp, a);
            let target = T::lit(self.config.target_entropy());
            let lp = tape.value(logp).data().iter().fold(T::zero(), |s, &v| s + v) / T::lit(x.input.batch as f64);
            let alpha = tape.scale(log_alpha, -(lp + target));
            (w, alpha)
        } else {
            let a = tape.exp(log_alpha);
            let rows = x.input.batch;
            let ones = tape.constant(Tensor::ones(vec![rows, 1]));
            let a_col = tape.reshape(a, &[1, 1])?;
            let a_col = tape.matmul(ones, a_col)?;
            let w = tape.mul(a_col, logp)?;
            let zero = tape.constant(Tensor::scalar(T::zero()));
            (w, zero)
        };
        let pl = tape.sub(weighted, qmin)?;
        let policy = tape.mean(pl);
        let total = tape.add(critic, policy)?;
        let total = tape.add(total, alpha)?;
        Ok(LossVars {
            critic,
            policy,
            alpha,
            total,
            log_prob: logp,
            q1,
        })
    }

    /// One gradient step on every store followed by the soft target update.
    pub fn update(&mut self, batch: &[Transition]) -> Result<UpdateReport> {
        if batch.is_empty() {
            return Err(Error::Input("empty update batch".into()));
        }
        let obs: Vec<&Observation> = batch.iter().map(|t| t.obs.as_ref()).collect();
        let next: Vec<&Observation> = batch.iter().map(|t| t.next_obs.as_ref()).collect();
        let rewards: Vec<f64> = batch.iter().map(|t| t.reward).collect();
        let dones: Vec<bool> = batch.iter().map(|t| t.done).collect();
        let next_input = self.prepare(&next)?;
        let next_noise = gaussian_noise(&mut self.rng, batch.len());
        let targets = self.critic_targets(&next_input, &rewards, &dones, next_noise)?;
        let actions = batch.iter().flat_map(|t| t.action.map(T::lit)).collect();
        let inputs = LossInputs {
            input: self.prepare(&obs)?,
            actions: Tensor::new(vec![batch.len(), ACTION_DIM], actions)?,
            targets,
            noise: gaussian_noise(&mut self.rng, batch.len()),
        };

        let (grads, report) = {
            let mut tape = Tape::new();
            let b = self.bind(&mut tape, true);
            let l = self.losses(&mut tape, &b, &inputs, true)?;
            let f = |v: Var| tape.value(v).data()[0].to_f64().unwrap_or(f64::NAN);
            let n = batch.len() as f64;
            let report = UpdateReport {
                critic_loss: f(l.critic),
                policy_loss: f(l.policy),
                alpha_loss: f(l.alpha),
                alpha: self.alpha(),
                mean_q: tape.value(l.q1).data().iter().map(|v| v.to_f64().unwrap_or(0.0)).sum::<f64>() / n,
                entropy: -tape.value(l.log_prob).data().iter().map(|v| v.to_f64().unwrap_or(0.0)).sum::<f64>() / n,
            };
            let g = tape.backward(l.total)?;
            let grads = [
                b.encoder.grads(&g),
                b.policy.grads(&g),
                b.critic.grads(&g),
                b.log_alpha.grads(&g),
            ];
            (grads, report)
        };
        let [ge, gp, gc, ga] = grads;
        self.opt[0].step(&mut self.encoder_params, &ge)?;
        self.opt[1].step(&mut self.policy_params, &gp)?;
        self.opt[2].step(&mut self.critic_params, &gc)?;
        self.opt[3].step(&mut self.alpha_params, &ga)?;
        self.target_params.soft_update(&self.critic_params, T::lit(self.config.tau))?;
        self.updates += 1;
        Ok(report)
    }

    /// Central-difference check of the composite loss (`losses` without
    /// stop-gradients) over every encoder, policy, critic and temperature
    /// tensor.
    pub fn grad_check(&self, x: &LossInputs<T>, opts: &GradCheckOptions) -> Result<GradCheckReport> {
        let mut stores = self.stores().map(|s| s.clone());
        let report = numkit::grad_check(
            &mut stores,
            &[],
            |tape, b| {
                let bind = Bindings {
                    encoder: b[0].clone(),
                    policy: b[1].clone(),
                    critic: b[2].clone(),
                    critic_in_policy: b[2].clone(),
                    log_alpha: b[3].clone(),
                };
                self.losses(tape, &bind, x, false)
                    .map(|l| l.total)
                    .map_err(|e| NumError::Invalid {
                        op: "composite loss",
                        msg: e.to_string(),
                    })
            },
            opts,
        )?;
        Ok(report)
    }

    fn stores(&self) -> [&ParamStore<T>; 4] {
        [&self.encoder_params, &self.policy_params, &self.critic_params, &self.alpha_params]
    }

    /// Sidecar path belonging to a checkpoint file.
    pub fn sidecar_path(path: &Path) -> PathBuf {
        let mut p = path.as_os_str().to_owned();
        p.push(".json");
        PathBuf::from(p)
    }

    /// Writes parameters and optimiser moments plus a JSON sidecar with the
    /// step counters, temperature and RNG state.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut ck = Checkpoint::new();
        for (name, store) in STORE_NAMES.iter().zip(self.stores()) {
            ck.push_store(name, store);
        }
        ck.push_store("target", &self.target_params);
        for (name, opt) in STORE_NAMES.iter().zip(&self.opt) {
            for (i, (m, v)) in opt.m.iter().zip(&opt.v).enumerate() {
                ck.push(format!("adam.{name}.m.{i}"), m);
                ck.push(format!("adam.{name}.v.{i}"), v);
            }
        }
        ck.save(path)?;
        let side = Sidecar {
            format: SIDECAR_FORMAT,
            encoder: self.encoder.config.clone(),
            rl: self.config.clone(),
            updates: self.updates,
            adam_steps: std::array::from_fn(|i| self.opt[i].step),
            log_alpha: self.log_alpha().to_f64().unwrap_or(f64::NAN),
            rng: self.rng.clone(),
        };
        std::fs::write(Self::sidecar_path(path), serde_json::to_string_pretty(&side)?)?;
        Ok(())
    }

    /// Rebuilds an agent from [`Agent::save`] output. The encoder layout must
    /// match `enc_cfg`.
    pub fn load(path: &Path, enc_cfg: &EncoderConfig) -> Result<Self> {
        let side: Sidecar = serde_json::from_str(&std::fs::read_to_string(Self::sidecar_path(path))?)?;
        if side.format != SIDECAR_FORMAT {
            return Err(Error::Checkpoint(format!("unsupported sidecar format {}", side.format)));
        }
        let (a, b) = (&side.encoder, enc_cfg);
        if (a.d, a.d_a, a.d_z, a.d_c, a.n, a.map_size, a.variant) != (b.d, b.d_a, b.d_z, b.d_c, b.n, b.map_size, b.variant)
        {
            return Err(Error::Checkpoint(format!(
                "encoder dimensions differ: checkpoint {a:?}, config {b:?}"
            )));
        }
        let ck = Checkpoint::load(path)?;
        let mut agent = Agent::new(&side.encoder, &side.rl, 0)?;
        let map = |e: numkit::NumError| Error::Checkpoint(e.to_string());
        ck.restore_store("encoder", &mut agent.encoder_params).map_err(map)?;
        ck.restore_store("policy", &mut agent.policy_params).map_err(map)?;
        ck.restore_store("critic", &mut agent.critic_params).map_err(map)?;
        ck.restore_store("alpha", &mut agent.alpha_params).map_err(map)?;
        ck.restore_store("target", &mut agent.target_params).map_err(map)?;
        for (k, name) in STORE_NAMES.iter().enumerate() {
            let opt = &mut agent.opt[k];
            opt.step = side.adam_steps[k];
            for i in 0..opt.m.len() {
                for (dst, key) in [(&mut opt.m[i], "m"), (&mut opt.v[i], "v")] {
                    let full = format!("adam.{name}.{key}.{i}");
                    let src = ck
                        .get(&full)
                        .ok_or_else(|| Error::Checkpoint(format!("missing tensor {full}")))?;
                    if src.shape() != dst.shape() {
                        return Err(Error::Checkpoint(format!("tensor {full} has shape {:?}", src.shape())));
                    }
                    for (d, &s) in dst.data_mut().iter_mut().zip(src.data()) {
                        *d = T::lit(s);
                    }
                }
            }
        }
        agent.updates = side.updates;
        agent.rng = side.rng;
        Ok(agent)
    }
}
