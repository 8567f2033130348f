use std::sync::Arc;
use traffic_sim::*;

fn main() {
    let name = std::env::args().nth(1).unwrap_or("straight".into());
    let speed: f64 = std::env::args().nth(2).map_or(10.0, |s| s.parse().unwrap());
    let sc = Arc::new(Scenario::builtin(&name).unwrap());
    let mut env = Env::new(sc, SimConfig::default(), ObsConfig::default()).unwrap();
    let seeds: u64 = std::env::args().nth(3).map_or(5, |s| s.parse().unwrap());
    for seed in 0..seeds {
        env.reset(seed);
        let t = std::time::Instant::now();
        loop {
            let o = env.step(EgoCommand::keep(speed)).unwrap();
            let e = o.events;
            if o.terminated || o.truncated {
                println!("seed {seed} steps {} {:?} prog {:.3} spawned {} present {} {:?}", env.step_count(), e, env.progress_fraction(), env.spawned_count(), o.observation.present(), t.elapsed()/env.step_count() as u32);
                break;
            }
        }
    }
}
