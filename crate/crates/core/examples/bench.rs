//! Rough throughput of acting and updating for a given encoder size.
//!
//! `cargo run --release -p dadrl --example bench -- <scenario> <d> <map_size> <resolution> <hidden> <batch>`

use std::sync::Arc;
use std::time::Instant;

use dadrl::{map_action, Agent64, EncoderConfig, Mode, ReplayBuffer, SacConfig, Transition};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use traffic_sim::{Env, Scenario, SimConfig};

fn main() -> anyhow::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let arg = |i: usize, d: &str| args.get(i).cloned().unwrap_or_else(|| d.to_string());
    let scenario = Arc::new(Scenario::builtin(&arg(0, "left_turn_t"))?);
    let d: usize = arg(1, "64").parse()?;
    let enc = EncoderConfig {
        d,
        d_a: d,
        d_z: 2 * d,
        d_c: d,
        map_size: arg(2, "64").parse()?,
        resolution: arg(3, "0.5").parse()?,
        ..EncoderConfig::default()
    };
    let h: usize = arg(4, "256").parse()?;
    let batch: usize = arg(5, "256").parse()?;
    let rl = SacConfig {
        hidden: vec![h, h],
        batch_size: batch,
        warmup_steps: batch,
        ..SacConfig::default()
    };
    let mut agent = Agent64::new(&enc, &rl, 0)?;
    let sim = SimConfig::default();
    let mut env = Env::new(scenario, sim, enc.obs_config())?;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut buf = ReplayBuffer::new(10_000, batch, 0);
    let mut obs = Arc::new(env.reset(0));
    let t = Instant::now();
    let n = 1000;
    for i in 0..n {
        let a = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
        let out = env.step(map_action(a, sim.v_max))?;
        let next = Arc::new(out.observation);
        buf.push(Transition { obs: obs.clone(), action: a, reward: 0.0, next_obs: next.clone(), done: out.terminated });
        obs = if out.terminated || out.truncated { Arc::new(env.reset(i as u64)) } else { next };
    }
    println!("env step: {:?}", t.elapsed() / n);
    let t = Instant::now();
    for _ in 0..50 {
        agent.act(&[obs.as_ref()], Mode::Stochastic, &mut rng)?;
    }
    println!("act(1): {:?}", t.elapsed() / 50);
    let t = Instant::now();
    let reps = 5;
    for _ in 0..reps {
        let b = buf.sample(batch)?;
        agent.update(&b)?;
    }
    println!("update({batch}): {:?}", t.elapsed() / reps);
    Ok(())
}
