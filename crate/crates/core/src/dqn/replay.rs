use rand::seq::index;

use crate::env::TransitionSample;
use crate::error::{Error, Result};
use crate::rng::SimRng;

/// Fixed-capacity ring buffer; once full, each push evicts the oldest entry.
#[derive(Debug, Clone)]
pub struct ReplayMemory {
    capacity: usize,
    items: Vec<TransitionSample>,
    next: usize,
}

impl ReplayMemory {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::invalid("replay capacity must be >= 1"));
        }
        Ok(Self {
            capacity,
            items: Vec::with_capacity(capacity.min(1 << 16)),
            next: 0,
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn push(&mut self, t: TransitionSample) {
        if self.items.len() < self.capacity {
            self.items.push(t);
        } else {
            self.items[self.next] = t;
        }
        self.next = (self.next + 1) % self.capacity;
    }

    /// Contents from oldest to newest.
    pub fn iter_oldest_first(&self) -> impl Iterator<Item = &TransitionSample> {
        let split = if self.items.len() < self.capacity { 0 } else { self.next };
        self.items[split..].iter().chain(self.items[..split].iter())
    }

    /// `m` distinct entries drawn uniformly, or `None` while fewer than `m` are stored.
    pub fn sample(&self, m: usize, rng: &mut SimRng) -> Option<Vec<&TransitionSample>> {
        if m == 0 || self.items.len() < m {
            return None;
        }
        Some(
            index::sample(rng, self.items.len(), m)
                .into_iter()
                .map(|i| &self.items[i])
                .collect(),
        )
    }
}
