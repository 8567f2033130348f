#![allow(dead_code)]

use std::sync::Arc;

use serde_json::json;
use traffic_sim::{Env, ObsConfig, Scenario, SimConfig};

pub fn env(s: Scenario) -> Env {
    Env::new(Arc::new(s), SimConfig::default(), ObsConfig::default()).unwrap()
}

pub fn builtin(name: &str) -> Env {
    env(Scenario::builtin(name).unwrap())
}

fn rot(p: [f64; 2], a: f64) -> [f64; 2] {
    let (s, c) = a.sin_cos();
    [c * p[0] - s * p[1], s * p[0] + c * p[1]]
}

/// One straight lane from `start` along `heading`, ego at offset 10, goal near the end.
pub fn straight_lane(start: [f64; 2], heading: f64, len: f64) -> Scenario {
    let p = |d: f64| {
        let r = rot([d, 0.0], heading);
        [start[0] + r[0], start[1] + r[1]]
    };
    let pts: Vec<_> = (0..=(len / 20.0) as usize).map(|k| p(k as f64 * 20.0)).collect();
    Scenario::from_json(
        &json!({
            "lanes": [{"id": "a", "points": pts}],
            "ego": {
                "spawn": {"lane": "a", "offset": 10.0, "speed": 0.0},
                "route": ["a"],
                "goal": {"point": p(len - 10.0), "radius": 4.0}
            },
            "max_steps": 400
        })
        .to_string(),
    )
    .unwrap()
}

/// Two parallel eastbound lanes 3.5 m apart, rotated by `angle` about the origin.
/// The ego starts on the right lane.
pub fn two_lanes(angle: f64) -> Scenario {
    let line = |y: f64| -> Vec<[f64; 2]> { (0..=15).map(|k| rot([k as f64 * 20.0, y], angle)).collect() };
    Scenario::from_json(
        &json!({
            "name": "two_lanes",
            "lanes": [
                {"id": "right", "points": line(0.0)},
                {"id": "left", "points": line(3.5)}
            ],
            "adjacency": [{"left": "left", "right": "right"}],
            "ego": {
                "spawn": {"lane": "right", "offset": 20.0, "speed": 10.0},
                "route": ["right"],
                "goal": {"point": rot([290.0, 0.0], angle), "radius": 4.0}
            },
            "max_steps": 400
        })
        .to_string(),
    )
    .unwrap()
}
