#![allow(dead_code)]

use dadrl::{Encoder, EncoderConfig, EncoderInput, Variant};
use numkit::{ParamStore, Tape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use traffic_sim::{BitGrid, ContextMaps, EgoHistory, Feature, Observation, VehicleHistory, HISTORY_LEN};

/// Small encoder that keeps forward passes cheap.
pub fn small_config(n: usize, variant: Variant) -> EncoderConfig {
    EncoderConfig {
        d: 8,
        d_a: 8,
        d_z: 12,
        d_c: 6,
        n,
        map_size: 16,
        resolution: 2.0,
        variant,
        ..EncoderConfig::default()
    }
}

pub fn encoder(cfg: &EncoderConfig, seed: u64) -> (Encoder, ParamStore<f64>) {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let enc = Encoder::new(&mut store, cfg, &mut rng).unwrap();
    (enc, store)
}

pub fn feature<R: Rng>(rng: &mut R) -> Feature {
    [
        rng.random_range(-40.0..40.0),
        rng.random_range(-40.0..40.0),
        rng.random_range(-3.0..3.0),
        rng.random_range(0.0..14.0),
        rng.random_range(-1.0..4.0),
    ]
}

pub fn history<R: Rng>(rng: &mut R, id: u32) -> VehicleHistory {
    VehicleHistory {
        id,
        samples: std::array::from_fn(|_| feature(rng)),
    }
}

fn grid<R: Rng>(rng: &mut R, size: usize) -> BitGrid {
    let mut g = BitGrid::new(size);
    for r in 0..size {
        for c in 0..size {
            if rng.random_bool(0.3) {
                g.set(r, c);
            }
        }
    }
    g
}

/// Observation with `present` vehicles placed in the first slots of `slots`.
pub fn observation<R: Rng>(rng: &mut R, slots: usize, present: usize, map_size: usize) -> Observation {
    Observation {
        slots: (0..slots)
            .map(|i| (i < present).then(|| history(rng, i as u32 + 1)))
            .collect(),
        ego: EgoHistory {
            e1: std::array::from_fn(|_| feature(rng)),
            e2: std::array::from_fn(|_| feature(rng)),
        },
        maps: ContextMaps {
            drivable: grid(rng, map_size),
            waypoint: grid(rng, map_size),
            resolution: 1.0,
        },
    }
}

pub const HISTORY: usize = HISTORY_LEN;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Encoder output for a batch of observations, as a flat row-major vector.
pub fn encode(enc: &Encoder, store: &ParamStore<f64>, obs: &[&Observation]) -> Vec<f64> {
    let input = EncoderInput::from_observations(obs, enc.config.n, enc.config.map_size).unwrap();
    let mut tape = Tape::new();
    let p = store.bind_frozen(&mut tape);
    let e = enc.encode(&mut tape, &p, &input).unwrap();
    tape.value(e.s).data().to_vec()
}

pub fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol * x.abs().max(1.0))
}

/// Largest difference scaled as in [`close`].
pub fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs() / x.abs().max(1.0)).fold(0.0, f64::max)
}

/// Attention evaluated entry by entry.
pub fn attention_oracle(
    p_ego: &[f64],
    p_sv: &[f64],
    present: &[bool],
    wq: &Tensor<f64>,
    wk: &Tensor<f64>,
    wv: &Tensor<f64>,
    d: usize,
) -> (Vec<f64>, Vec<f64>) {
    let da = wq.shape()[1];
    let proj = |x: &[f64], w: &Tensor<f64>| -> Vec<f64> {
        (0..da).map(|c| (0..d).map(|k| x[k] * w.data()[k * da + c]).sum()).collect()
    };
    let b = p_ego.len() / d;
    let n = present.len() / b;
    let mut alpha = vec![0.0; b * da];
    let mut weights = vec![0.0; b * n];
    for i in 0..b {
        let q = proj(&p_ego[i * d..(i + 1) * d], wq);
        let mut logits = Vec::new();
        let mut values = Vec::new();
        for j in 0..n {
            if !present[i * n + j] {
                continue;
            }
            let row = &p_sv[(i * n + j) * d..(i * n + j + 1) * d];
            let k = proj(row, wk);
            logits.push((j, q.iter().zip(&k).map(|(a, b)| a * b).sum::<f64>() / (da as f64).sqrt()));
            values.push(proj(row, wv));
        }
        let max = logits.iter().map(|l| l.1).fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = logits.iter().map(|l| (l.1 - max).exp()).sum();
        for ((j, l), v) in logits.iter().zip(&values) {
            let w = (l - max).exp() / z;
            weights[i * n + j] = w;
            for c in 0..da {
                alpha[i * da + c] += w * v[c];
            }
        }
    }
    (alpha, weights)
}
