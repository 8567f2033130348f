mod common;

use common::*;
use dadrl::{EncoderInput, Variant};
use numkit::{Tape, Tensor};
use rand::seq::SliceRandom;
use rand::Rng;
use traffic_sim::Observation;

#[test]
fn attend_ego_matches_direct_evaluation() {
    let mut rng = rng(11);
    for case in 0..100 {
        let n = rng.random_range(1..=8);
        let b = rng.random_range(1..=3);
        let cfg = small_config(n, Variant::Full);
        let (enc, store) = encoder(&cfg, case);
        let d = cfg.d;
        let p_ego: Vec<f64> = (0..b * d).map(|_| rng.random_range(-2.0..2.0)).collect();
        let p_sv: Vec<f64> = (0..b * n * d).map(|_| rng.random_range(-2.0..2.0)).collect();
        let mut present: Vec<bool> = (0..b * n).map(|_| rng.random_bool(0.6)).collect();
        for i in 0..b {
            let j = rng.random_range(0..n);
            present[i * n + j] = true;
        }
        let mask: Vec<f64> = present.iter().map(|&p| if p { 0.0 } else { f64::NEG_INFINITY }).collect();
        // Absent rows are zero, as the encoder feeds them.
        let p_sv: Vec<f64> = p_sv
            .chunks(d)
            .zip(&present)
            .flat_map(|(r, &p)| r.iter().map(move |&x| if p { x } else { 0.0 }))
            .collect();

        let mut tape = Tape::new();
        let p = store.bind_frozen(&mut tape);
        let e = tape.constant(Tensor::new(vec![b, d], p_ego.clone()).unwrap());
        let s = tape.constant(Tensor::new(vec![b * n, d], p_sv.clone()).unwrap());
        let (alpha, w) = enc.attend_ego(&mut tape, &p, e, s, &mask).unwrap();

        let a = enc.attention.as_ref().unwrap();
        let (want_alpha, want_w) =
            attention_oracle(&p_ego, &p_sv, &present, store.get(a.w_q), store.get(a.w_k), store.get(a.w_v), d);
        assert!(close(tape.value(alpha).data(), &want_alpha, 1e-12), "alpha differs in case {case}");
        assert!(close(tape.value(w).data(), &want_w, 1e-12), "weights differ in case {case}");
        for (wi, &p) in tape.value(w).data().iter().zip(&present) {
            if !p {
                assert_eq!(*wi, 0.0);
            }
        }
    }
}

#[test]
fn padding_position_and_amount_do_not_change_the_encoding() {
    let mut rng = rng(12);
    let full = small_config(8, Variant::Full);
    let (enc8, store) = encoder(&full, 5);
    for case in 0..1000 {
        let k = rng.random_range(1..=8);
        let base = observation(&mut rng, 8, k, full.map_size);
        let reference = encode(&enc8, &store, &[&base]);

        // Same vehicles, in order, scattered among the padding.
        let mut positions: Vec<usize> = (0..8).collect();
        positions.shuffle(&mut rng);
        let mut chosen = positions[..k].to_vec();
        chosen.sort_unstable();
        let mut scattered = base.clone();
        scattered.slots = vec![None; 8];
        for (slot, h) in chosen.iter().zip(base.slots.iter().flatten()) {
            scattered.slots[*slot] = Some(h.clone());
        }
        assert_eq!(encode(&enc8, &store, &[&scattered]), reference, "case {case}: padding position");

        // No padding at all: an encoder with exactly k slots and the same weights.
        let mut compact_enc = enc8.clone();
        compact_enc.config.n = k;
        let mut compact = base.clone();
        compact.slots.truncate(k);
        assert!(
            close(&encode(&compact_enc, &store, &[&compact]), &reference, 1e-12),
            "case {case}: padded vs compact"
        );
    }
}

#[test]
fn encoding_is_invariant_to_vehicle_order() {
    let mut rng = rng(13);
    let cfg = small_config(8, Variant::Full);
    let (enc, store) = encoder(&cfg, 6);
    for case in 0..1000 {
        let k = rng.random_range(1..=8);
        let base = observation(&mut rng, 8, k, cfg.map_size);
        let reference = encode(&enc, &store, &[&base]);
        let mut shuffled = base.clone();
        shuffled.slots.shuffle(&mut rng);
        assert!(
            close(&encode(&enc, &store, &[&shuffled]), &reference, 1e-12),
            "case {case}"
        );
    }
}

#[test]
fn batch_rows_are_encoded_independently() {
    let mut rng = rng(14);
    let cfg = small_config(4, Variant::Full);
    let (enc, store) = encoder(&cfg, 7);
    let obs: Vec<Observation> = (0..4).map(|i| observation(&mut rng, 4, i, cfg.map_size)).collect();
    let refs: Vec<&Observation> = obs.iter().collect();
    let batched = encode(&enc, &store, &refs);
    let dim = enc.output_dim();
    for (i, o) in obs.iter().enumerate() {
        let single = encode(&enc, &store, &[o]);
        assert!(close(&batched[i * dim..(i + 1) * dim], &single, 1e-12), "row {i}");
    }
}

#[test]
fn empty_neighbourhood_gives_zero_attention() {
    let mut rng = rng(15);
    let cfg = small_config(3, Variant::Full);
    let (enc, store) = encoder(&cfg, 8);
    let obs = observation(&mut rng, 3, 0, cfg.map_size);
    let input = EncoderInput::from_observations(&[&obs], 3, cfg.map_size).unwrap();
    let mut tape = Tape::new();
    let p = store.bind_frozen(&mut tape);
    let e = enc.encode(&mut tape, &p, &input).unwrap();
    assert!(tape.value(e.weights.unwrap()).data().iter().all(|&w| w == 0.0));
    assert!(tape.value(e.alpha.unwrap()).data().iter().all(|&a| a == 0.0));
    assert!(tape.value(e.s).data().iter().all(|v| v.is_finite()));
}

#[test]
fn variants_have_the_documented_shapes_and_modules() {
    let mut rng = rng(16);
    for variant in Variant::ALL {
        let cfg = small_config(4, variant);
        let (enc, store) = encoder(&cfg, 9);
        let obs = observation(&mut rng, 4, 3, cfg.map_size);
        let input = EncoderInput::from_observations(&[&obs], 4, cfg.map_size).unwrap();
        let mut tape = Tape::new();
        let p = store.bind_frozen(&mut tape);
        let e = enc.encode(&mut tape, &p, &input).unwrap();
        let width = tape.shape(e.s)[1];
        match variant {
            Variant::Full => {
                assert_eq!(width, cfg.d_z + cfg.d_c);
                assert_eq!(enc.attention_calls(), 1);
            }
            Variant::ContextFree => {
                assert_eq!(width, cfg.d_z);
                assert!(e.c.is_none());
                assert_eq!(tape.value(e.s).data(), tape.value(e.z.unwrap()).data());
                assert!(store.iter().all(|(name, _)| !name.contains("conv") && !name.contains("context")));
            }
            Variant::ContextOnly => {
                assert_eq!(width, 10 + cfg.d_c);
                assert_eq!(enc.attention_calls(), 0);
                assert!(e.z.is_none() && e.weights.is_none());
                assert!(store.iter().all(|(name, _)| !name.contains("lstm") && !name.contains("attn")));
                // The first ten entries are the current ego features as fed in.
                assert_eq!(&tape.value(e.s).data()[..10], input.ego_now.data());
            }
        }
        assert_eq!(width, enc.output_dim());
    }
}

#[test]
fn wrong_slot_count_is_rejected() {
    let mut rng = rng(17);
    let cfg = small_config(4, Variant::Full);
    let (enc, store) = encoder(&cfg, 10);
    let obs = observation(&mut rng, 5, 2, cfg.map_size);
    let input = EncoderInput::from_observations(&[&obs], 5, cfg.map_size).unwrap();
    let mut tape = Tape::new();
    let p = store.bind_frozen(&mut tape);
    assert!(enc.encode(&mut tape, &p, &input).is_err());
    assert!(EncoderInput::<f64>::from_observations(&[&obs], 4, cfg.map_size).is_err());
    assert!(EncoderInput::<f64>::from_observations(&[&obs], 5, 32).is_err());
}

#[test]
fn input_packing_keeps_present_rows_in_slot_order() {
    let mut rng = rng(18);
    let mut obs = observation(&mut rng, 4, 2, 16);
    obs.slots.swap(0, 3);
    let input = EncoderInput::<f64>::from_observations(&[&obs], 4, 16).unwrap();
    assert_eq!(input.slot_rows, vec![None, Some(0), None, Some(1)]);
    assert_eq!(input.mask[0], f64::NEG_INFINITY);
    assert_eq!(input.mask[1], 0.0);
    assert_eq!(input.sequence.len(), HISTORY);
    assert_eq!(input.sequence[0].shape(), &[3, 5]);
}
