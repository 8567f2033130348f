mod common;

use std::sync::Arc;

use common::*;
use dadrl::policy::{gaussian_noise, squashed_sample, Mode};
use dadrl::sac::{Bindings, LossInputs};
use dadrl::{Agent64, EncoderConfig, Error, SacConfig, Transition, Variant};
use numkit::nn::Mlp;
use numkit::{GradCheckOptions, OpKind, ParamStore, Tape, Tensor};
use rand::Rng;
use statrs::distribution::{Continuous, Normal};
use statrs::function::erf::erf;
use traffic_sim::Observation;

fn tiny_rl() -> SacConfig {
    SacConfig {
        hidden: vec![8, 8],
        batch_size: 3,
        warmup_steps: 3,
        buffer_capacity: 16,
        ..SacConfig::default()
    }
}

fn tiny_agent(seed: u64) -> (Agent64, EncoderConfig) {
    let enc = small_config(3, Variant::Full);
    (Agent64::new(&enc, &tiny_rl(), seed).unwrap(), enc)
}

fn transitions(seed: u64, n: usize, done: bool) -> Vec<Transition> {
    let mut rng = rng(seed);
    (0..n)
        .map(|i| Transition {
            obs: Arc::new(observation(&mut rng, 3, i % 4, 16)),
            action: [rng.random_range(-0.9..0.9), rng.random_range(-0.9..0.9)],
            reward: rng.random_range(-1.0..1.0),
            next_obs: Arc::new(observation(&mut rng, 3, (i + 1) % 4, 16)),
            done,
        })
        .collect()
}

fn snapshot(s: &ParamStore<f64>) -> Vec<Vec<u64>> {
    s.tensors().iter().map(|t| t.data().iter().map(|v| v.to_bits()).collect()).collect()
}

#[test]
fn log_prob_matches_an_independent_density() {
    let mut rng = rng(1);
    let rows = 50;
    let mean: Vec<f64> = (0..rows * 2).map(|_| rng.random_range(-1.5..1.5)).collect();
    let log_std: Vec<f64> = (0..rows * 2).map(|_| rng.random_range(-1.0..0.5)).collect();
    let noise: Tensor<f64> = gaussian_noise(&mut rng, rows);
    let mut tape = Tape::new();
    let m = tape.constant(Tensor::new(vec![rows, 2], mean.clone()).unwrap());
    let ls = tape.constant(Tensor::new(vec![rows, 2], log_std.clone()).unwrap());
    let (a, logp) = squashed_sample(&mut tape, m, ls, noise.clone()).unwrap();
    for r in 0..rows {
        let mut want = 0.0;
        for c in 0..2 {
            let i = r * 2 + c;
            let sigma = log_std[i].exp();
            let action = tape.value(a).data()[i];
            assert_eq!(action, (mean[i] + sigma * noise.data()[i]).tanh());
            // Density of u = tanh(x) with x ~ N(mean, sigma): p(x) / (1 - u^2).
            let x = mean[i] + sigma * noise.data()[i];
            want += Normal::new(mean[i], sigma).unwrap().ln_pdf(x) - (1.0 - action * action).ln();
        }
        let got = tape.value(logp).data()[r];
        assert!((got - want).abs() < 1e-9, "row {r}: {got} vs {want}");
    }
}

#[test]
fn keep_lane_fraction_matches_the_gaussian_cdf() {
    let n = 100_000;
    let mut rng = rng(2);
    let mut tape = Tape::<f64>::new();
    let m = tape.constant(Tensor::zeros(vec![n, 2]));
    let ls = tape.constant(Tensor::zeros(vec![n, 2]));
    let (a, _) = squashed_sample(&mut tape, m, ls, gaussian_noise(&mut rng, n)).unwrap();
    let keep = tape
        .value(a)
        .data()
        .chunks(2)
        .filter(|u| u[1].abs() <= 1.0 / 3.0)
        .count() as f64
        / n as f64;
    // |tanh x| <= 1/3 iff |x| <= atanh(1/3), x ~ N(0, 1).
    let want = erf((1.0f64 / 3.0).atanh() / std::f64::consts::SQRT_2);
    assert!((keep - want).abs() < 0.01, "{keep} vs {want}");
}

#[test]
fn deterministic_zero_mean_policy_outputs_zero() {
    let (mut agent, _) = tiny_agent(3);
    for t in agent.policy_params.tensors_mut() {
        t.data_mut().iter_mut().for_each(|v| *v = 0.0);
    }
    let obs = transitions(3, 1, false);
    let mut rng = rng(0);
    let a = agent.act(&[obs[0].obs.as_ref()], Mode::Deterministic, &mut rng).unwrap();
    assert_eq!(a, vec![[0.0, 0.0]]);
}

#[test]
fn stochastic_actions_stay_strictly_inside_the_box() {
    let (mut agent, _) = tiny_agent(4);
    // Saturate the policy: large means push tanh to +-1 in floating point.
    let last = agent.policy.mlp.layers.last().unwrap().bias;
    agent.policy_params.get_mut(last).data_mut().copy_from_slice(&[40.0, -40.0, 2.0, 2.0]);
    let obs = transitions(4, 5, false);
    let refs: Vec<&Observation> = obs.iter().map(|t| t.obs.as_ref()).collect();
    let mut rng = rng(1);
    for a in agent.act(&refs, Mode::Stochastic, &mut rng).unwrap() {
        assert!(a.iter().all(|u| u.abs() < 1.0), "{a:?}");
    }
}

#[test]
fn terminal_targets_reduce_to_the_reward() {
    let (agent, _) = tiny_agent(5);
    let batch = transitions(5, 4, true);
    let next: Vec<&Observation> = batch.iter().map(|t| t.next_obs.as_ref()).collect();
    let input = agent.prepare(&next).unwrap();
    let rewards: Vec<f64> = batch.iter().map(|t| t.reward).collect();
    let mut rng = rng(2);
    let y = agent
        .critic_targets(&input, &rewards, &[true; 4], gaussian_noise(&mut rng, 4))
        .unwrap();
    assert_eq!(y.data(), rewards.as_slice());
    let y = agent
        .critic_targets(&input, &rewards, &[false; 4], gaussian_noise(&mut rng, 4))
        .unwrap();
    assert!(y.data().iter().zip(&rewards).all(|(a, b)| a != b));
}

fn mlp_by_hand(mlp: &Mlp, store: &ParamStore<f64>, x: &[f64]) -> f64 {
    let mut h = x.to_vec();
    for (i, l) in mlp.layers.iter().enumerate() {
        let w = store.get(l.weight).data();
        let b = store.get(l.bias).data();
        h = (0..l.out_dim)
            .map(|o| {
                let z = b[o] + (0..l.in_dim).map(|k| h[k] * w[k * l.out_dim + o]).sum::<f64>();
                if i + 1 < mlp.layers.len() {
                    z.max(0.0)
                } else {
                    z
                }
            })
            .collect();
    }
    h[0]
}

#[test]
fn critic_loss_matches_hand_arithmetic() {
    let (agent, _) = tiny_agent(6);
    let batch = transitions(6, 1, false);
    let obs = [batch[0].obs.as_ref()];
    let input = agent.prepare(&obs).unwrap();
    let y = 0.75;
    let x = LossInputs {
        input: input.clone(),
        actions: Tensor::new(vec![1, 2], batch[0].action.to_vec()).unwrap(),
        targets: Tensor::new(vec![1, 1], vec![y]).unwrap(),
        noise: Tensor::zeros(vec![1, 2]),
    };
    let mut tape = Tape::new();
    let b = agent.bind(&mut tape, true);
    let l = agent.losses(&mut tape, &b, &x, true).unwrap();
    let got = tape.value(l.critic).data()[0];

    let mut t2 = Tape::new();
    let p = agent.encoder_params.bind_frozen(&mut t2);
    let e = agent.encoder.encode(&mut t2, &p, &input).unwrap();
    let mut sa = t2.value(e.s).data().to_vec();
    sa.extend_from_slice(&batch[0].action);
    let q1 = mlp_by_hand(&agent.critics.q1, &agent.critic_params, &sa);
    let q2 = mlp_by_hand(&agent.critics.q2, &agent.critic_params, &sa);
    let want = 0.5 * ((q1 - y) * (q1 - y) + (q2 - y) * (q2 - y));
    assert!((got - want).abs() < 1e-10, "{got} vs {want}");
}

#[test]
fn unit_tau_copies_the_online_critics() {
    let enc = small_config(3, Variant::Full);
    let rl = SacConfig { tau: 1.0, ..tiny_rl() };
    let mut agent = Agent64::new(&enc, &rl, 7).unwrap();
    agent.update(&transitions(7, 3, false)).unwrap();
    assert_eq!(snapshot(&agent.target_params), snapshot(&agent.critic_params));
}

#[test]
fn targets_follow_the_soft_update_rule_exactly() {
    let (mut agent, _) = tiny_agent(8);
    let before = agent.target_params.clone();
    agent.update(&transitions(8, 3, false)).unwrap();
    let tau = agent.config.tau;
    for ((t, b), o) in agent
        .target_params
        .tensors()
        .iter()
        .zip(before.tensors())
        .zip(agent.critic_params.tensors())
    {
        for ((t, b), o) in t.data().iter().zip(b.data()).zip(o.data()) {
            assert_eq!(*t, tau * o + (1.0 - tau) * b);
        }
    }
}

#[test]
fn zero_learning_rate_leaves_online_parameters_unchanged() {
    let enc = small_config(3, Variant::Full);
    let rl = SacConfig {
        lr: 0.0,
        alpha_lr: 0.0,
        ..tiny_rl()
    };
    let mut agent = Agent64::new(&enc, &rl, 9).unwrap();
    let before: Vec<_> = [&agent.encoder_params, &agent.policy_params, &agent.critic_params, &agent.alpha_params]
        .map(snapshot)
        .to_vec();
    for _ in 0..3 {
        agent.update(&transitions(9, 3, false)).unwrap();
    }
    let after: Vec<_> = [&agent.encoder_params, &agent.policy_params, &agent.critic_params, &agent.alpha_params]
        .map(snapshot)
        .to_vec();
    assert_eq!(before, after);
}

#[test]
fn updates_move_every_store_and_keep_alpha_positive() {
    let (mut agent, _) = tiny_agent(10);
    let before = [&agent.encoder_params, &agent.policy_params, &agent.critic_params, &agent.alpha_params].map(snapshot);
    let mut report = None;
    for k in 0..5 {
        report = Some(agent.update(&transitions(10 + k, 3, false)).unwrap());
    }
    let after = [&agent.encoder_params, &agent.policy_params, &agent.critic_params, &agent.alpha_params].map(snapshot);
    for (b, a) in before.iter().zip(&after) {
        assert_ne!(b, a);
    }
    let r = report.unwrap();
    assert!(r.alpha > 0.0 && agent.alpha() > 0.0);
    assert!(r.critic_loss.is_finite() && r.policy_loss.is_finite());
    assert_eq!(agent.updates, 5);
}

#[test]
fn policy_loss_reaches_the_encoder_only_when_enabled() {
    let batch = transitions(11, 3, false);
    for flag in [true, false] {
        let enc = small_config(3, Variant::Full);
        let rl = SacConfig {
            policy_trains_encoder: flag,
            ..tiny_rl()
        };
        let agent = Agent64::new(&enc, &rl, 11).unwrap();
        let obs: Vec<&Observation> = batch.iter().map(|t| t.obs.as_ref()).collect();
        let mut rng = rng(3);
        let x = LossInputs {
            input: agent.prepare(&obs).unwrap(),
            actions: Tensor::new(vec![3, 2], batch.iter().flat_map(|t| t.action).collect()).unwrap(),
            targets: Tensor::zeros(vec![3, 1]),
            noise: gaussian_noise(&mut rng, 3),
        };
        let mut tape = Tape::new();
        let b = agent.bind(&mut tape, true);
        let l = agent.losses(&mut tape, &b, &x, true).unwrap();
        let g = tape.backward(l.policy).unwrap();
        let norm: f64 = b.encoder.grads(&g).iter().flat_map(|t| t.data().to_vec()).map(|v| v * v).sum();
        assert_eq!(norm > 0.0, flag, "flag {flag}");
    }
}

#[test]
fn empty_batch_is_rejected() {
    let (mut agent, _) = tiny_agent(12);
    assert!(matches!(agent.update(&[]), Err(Error::Input(_))));
}

#[test]
fn checkpoint_resume_is_exact() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("agent.bin");
    let (mut a, enc) = tiny_agent(13);
    a.update(&transitions(13, 3, false)).unwrap();
    a.save(&path).unwrap();
    let mut b = Agent64::load(&path, &enc).unwrap();
    assert_eq!(b.updates, 1);
    let second = transitions(14, 3, false);
    a.update(&second).unwrap();
    b.update(&second).unwrap();
    for (x, y) in [
        (&a.encoder_params, &b.encoder_params),
        (&a.policy_params, &b.policy_params),
        (&a.critic_params, &b.critic_params),
        (&a.target_params, &b.target_params),
        (&a.alpha_params, &b.alpha_params),
    ] {
        assert_eq!(snapshot(x), snapshot(y));
    }
}

#[test]
fn checkpoint_with_other_dimensions_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("agent.bin");
    let (a, enc) = tiny_agent(15);
    a.save(&path).unwrap();
    let other = EncoderConfig { d_z: enc.d_z + 1, ..enc };
    assert!(matches!(Agent64::load(&path, &other), Err(Error::Checkpoint(_))));
}

#[test]
fn composite_gradients_match_finite_differences() {
    let (agent, _) = tiny_agent(16);
    let batch = transitions(16, 3, false);
    let obs: Vec<&Observation> = batch.iter().map(|t| t.obs.as_ref()).collect();
    let mut rng = rng(4);
    let x = LossInputs {
        input: agent.prepare(&obs).unwrap(),
        actions: Tensor::new(vec![3, 2], batch.iter().flat_map(|t| t.action).collect()).unwrap(),
        targets: Tensor::new(vec![3, 1], vec![0.3, -0.2, 1.0]).unwrap(),
        noise: gaussian_noise(&mut rng, 3),
    };
    let opts = GradCheckOptions {
        floor: 1e-5,
        ..GradCheckOptions::default()
    };
    let report = agent.grad_check(&x, &opts).unwrap();
    assert!(report.passed, "{}", report.render());
    let names: Vec<&str> = report.tensors.iter().map(|t| t.name.as_str()).collect();
    let expected = [&agent.encoder_params, &agent.policy_params, &agent.critic_params, &agent.alpha_params]
        .iter()
        .map(|s| s.len())
        .sum::<usize>();
    assert_eq!(names.len(), expected);
    assert!(names.contains(&"log_alpha") && names.contains(&"encoder.attn.w_q"));

    // Negative control: a wrong backward rule is caught.
    let mut stores = [
        agent.encoder_params.clone(),
        agent.policy_params.clone(),
        agent.critic_params.clone(),
        agent.alpha_params.clone(),
    ];
    let bad = numkit::grad_check(
        &mut stores,
        &[],
        |tape, b| {
            tape.corrupt_rule(OpKind::LayerNorm, 1.01);
            let bind = Bindings {
                encoder: b[0].clone(),
                policy: b[1].clone(),
                critic: b[2].clone(),
                critic_in_policy: b[2].clone(),
                log_alpha: b[3].clone(),
            };
            Ok(agent.losses(tape, &bind, &x, false).unwrap().total)
        },
        &opts,
    )
    .unwrap();
    assert!(!bad.passed);
}
