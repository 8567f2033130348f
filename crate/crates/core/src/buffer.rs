//! Experience replay.

use std::sync::Arc;

use rand::seq::index::sample;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use traffic_sim::Observation;

use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct Transition {
    pub obs: Arc<Observation>,
    /// Raw action in `(-1, 1)^2`.
    pub action: [f64; 2],
    pub reward: f64,
    pub next_obs: Arc<Observation>,
    /// True when the episode terminated (not when it was cut at the step limit).
    pub done: bool,
}

/// Fixed-capacity ring of transitions. Observations are shared between a
/// transition's `next_obs` and its successor's `obs`.
#[derive(Clone, Debug)]
pub struct ReplayBuffer {
    items: Vec<Transition>,
    capacity: usize,
    next: usize,
    warmup: usize,
    rng: ChaCha8Rng,
}

impl ReplayBuffer {
    pub fn new(capacity: usize, warmup: usize, seed: u64) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        ReplayBuffer {
            items: Vec::with_capacity(capacity.min(1 << 16)),
            capacity,
            next: 0,
            warmup,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn is_ready(&self) -> bool {
        self.items.len() >= self.warmup.max(1)
    }

    /// Appends, evicting the oldest transition when full.
    pub fn push(&mut self, t: Transition) {
        if self.items.len() < self.capacity {
            self.items.push(t);
        } else {
            self.items[self.next] = t;
        }
        self.next = (self.next + 1) % self.capacity;
    }

    /// Transitions from oldest to newest.
    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        let split = if self.items.len() < self.capacity { 0 } else { self.next };
        self.items[split..].iter().chain(&self.items[..split])
    }

    /// Distinct uniform indices drawn with `rng`.
    pub fn sample_indices_with<R: Rng + ?Sized>(&self, rng: &mut R, batch: usize) -> Result<Vec<usize>> {
        if !self.is_ready() || batch > self.items.len() {
            return Err(Error::NotReady {
                have: self.items.len(),
                need: self.warmup.max(batch).max(1),
            });
        }
        if batch == 0 {
            return Err(Error::Input("batch size must be positive".into()));
        }
        Ok(sample(rng, self.items.len(), batch).into_vec())
    }

    pub fn sample_with<R: Rng + ?Sized>(&self, rng: &mut R, batch: usize) -> Result<Vec<&Transition>> {
        Ok(self
            .sample_indices_with(rng, batch)?
            .into_iter()
            .map(|i| &self.items[i])
            .collect())
    }

    /// Samples with the buffer's own seeded stream.
    pub fn sample(&mut self, batch: usize) -> Result<Vec<Transition>> {
        let mut rng = self.rng.clone();
        let out = self.sample_with(&mut rng, batch)?.into_iter().cloned().collect();
        self.rng = rng;
        Ok(out)
    }

    pub fn rng(&self) -> &ChaCha8Rng {
        &self.rng
    }

    pub fn set_rng(&mut self, rng: ChaCha8Rng) {
        self.rng = rng;
    }
}
