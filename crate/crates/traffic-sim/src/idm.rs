//! Intelligent Driver Model car following.

use crate::config::IdmConfig;

/// Leader seen ahead on the follower's path.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Leader {
    /// Bumper-to-bumper gap (m).
    pub gap: f64,
    /// Leader speed along the follower's path (m/s).
    pub speed: f64,
}

/// IDM acceleration clamped to `[-b_max, a_max]`.
pub fn idm_accel(v: f64, v0: f64, leader: Option<Leader>, cfg: &IdmConfig) -> f64 {
    let free = 1.0 - (v / v0).powf(cfg.delta);
    let interaction = match leader {
        Some(l) => {
            let dv = v - l.speed;
            let s_star = cfg.s0 + (v * cfg.time_headway + v * dv / (2.0 * (cfg.a_max * cfg.b_comf).sqrt())).max(0.0);
            let gap = l.gap.max(0.1);
            (s_star / gap).powi(2)
        }
        None => 0.0,
    };
    (cfg.a_max * (free - interaction)).clamp(-cfg.b_max, cfg.a_max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn free_road_and_blocking() {
        let cfg = IdmConfig::default();
        assert_eq!(idm_accel(0.0, 10.0, None, &cfg), cfg.a_max);
        assert_eq!(idm_accel(10.0, 10.0, None, &cfg), 0.0);
        let stop = Leader { gap: 0.5, speed: 0.0 };
        assert_eq!(idm_accel(10.0, 10.0, Some(stop), &cfg), -cfg.b_max);
        // Standing in a queue at the jam distance is an equilibrium.
        let queue = Leader { gap: cfg.s0, speed: 0.0 };
        assert_eq!(idm_accel(0.0, 10.0, Some(queue), &cfg), 0.0);
    }
}
