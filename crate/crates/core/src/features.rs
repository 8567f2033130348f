//! Observation batches as encoder input tensors.

use numkit::{Scalar, Tensor};
use traffic_sim::{Feature, Observation, FEATURE_DIM, HISTORY_LEN};

/// Width of the current-time ego vector `E1[k=0] ⊕ E2[k=0]`.
pub const EGO_NOW_DIM: usize = 2 * FEATURE_DIM;

/// Fixed divisors bringing pose features to order one:
/// `(x, y, heading, speed, lane)`.
pub const POSE_SCALE: Feature = [50.0, 50.0, std::f64::consts::PI, 13.9, 10.0];
/// Divisors for ego dynamics `(steering, yaw_rate, speed, accel, jerk)`.
pub const DYNAMICS_SCALE: Feature = [0.6, 1.0, 13.9, 3.0, 10.0];

fn scaled(f: &Feature, scale: &Feature) -> [f64; FEATURE_DIM] {
    std::array::from_fn(|i| f[i] / scale[i])
}

/// Tensors for one batch of observations.
#[derive(Clone, Debug)]
pub struct EncoderInput<T> {
    pub batch: usize,
    pub slots: usize,
    /// Per history step, oldest first: `[(B + P) x 5]`, the `B` ego rows
    /// followed by the `P` present surrounding-vehicle rows.
    pub sequence: Vec<Tensor<T>>,
    /// Row of each of the `B * n` slots among the vehicle rows, `None` if absent.
    pub slot_rows: Vec<Option<usize>>,
    /// Additive attention mask, `0` present and `-inf` absent, `B * n` entries.
    pub mask: Vec<T>,
    /// `[B x 10]`.
    pub ego_now: Tensor<T>,
    /// `[B x 2 x S x S]` drivable and waypoint channels.
    pub maps: Tensor<T>,
}

impl<T: Scalar> EncoderInput<T> {
    /// Packs observations; every observation must have `slots` slots and
    /// `map_size`-sided maps.
    pub fn from_observations(obs: &[&Observation], slots: usize, map_size: usize) -> Result<Self, String> {
        let batch = obs.len();
        if batch == 0 {
            return Err("empty observation batch".into());
        }
        let mut slot_rows = Vec::with_capacity(batch * slots);
        let mut mask = Vec::with_capacity(batch * slots);
        let mut present = 0usize;
        for o in obs {
            if o.slots.len() != slots {
                return Err(format!("observation has {} vehicle slots, encoder expects {slots}", o.slots.len()));
            }
            for s in &o.slots {
                if s.is_some() {
                    slot_rows.push(Some(present));
                    mask.push(T::zero());
                    present += 1;
                } else {
                    slot_rows.push(None);
                    mask.push(T::neg_infinity());
                }
            }
        }
        let rows = batch + present;
        let mut sequence = Vec::with_capacity(HISTORY_LEN);
        for k in (0..HISTORY_LEN).rev() {
            let mut data = Vec::with_capacity(rows * FEATURE_DIM);
            for o in obs {
                data.extend(scaled(&o.ego.e1[k], &POSE_SCALE).map(T::lit));
            }
            for o in obs {
                for h in o.slots.iter().flatten() {
                    data.extend(scaled(&h.samples[k], &POSE_SCALE).map(T::lit));
                }
            }
            sequence.push(Tensor::new(vec![rows, FEATURE_DIM], data).map_err(|e| e.to_string())?);
        }

        let mut now = Vec::with_capacity(batch * EGO_NOW_DIM);
        for o in obs {
            now.extend(scaled(&o.ego.e1[0], &POSE_SCALE).map(T::lit));
            now.extend(scaled(&o.ego.e2[0], &DYNAMICS_SCALE).map(T::lit));
        }

        let plane = map_size * map_size;
        let mut maps = vec![T::zero(); batch * 2 * plane];
        for (b, o) in obs.iter().enumerate() {
            for (c, grid) in [&o.maps.drivable, &o.maps.waypoint].into_iter().enumerate() {
                if grid.size() != map_size {
                    return Err(format!("map is {0}x{0}, encoder expects {map_size}x{map_size}", grid.size()));
                }
                let off = (2 * b + c) * plane;
                for (r, col) in grid.ones() {
                    maps[off + r * map_size + col] = T::one();
                }
            }
        }
        Ok(EncoderInput {
            batch,
            slots,
            sequence,
            slot_rows,
            mask,
            ego_now: Tensor::new(vec![batch, EGO_NOW_DIM], now).map_err(|e| e.to_string())?,
            maps: Tensor::new(vec![batch, 2, map_size, map_size], maps).map_err(|e| e.to_string())?,
        })
    }

    /// Number of present surrounding vehicles over the batch.
    pub fn present(&self) -> usize {
        self.slot_rows.iter().flatten().count()
    }
}
