use std::sync::Arc;

use rand::Rng as _;

use crate::seed::Rng;
use crate::types::Transition;

/// A stored transition plus, when the backbone is frozen, the cached
/// backbone features of both observations.
#[derive(Clone, Debug)]
pub struct Entry {
    pub transition: Transition,
    pub features: Option<(Arc<[f32]>, Arc<[f32]>)>,
}

/// Fixed-capacity ring buffer; once full, the oldest entry is overwritten.
#[derive(Clone, Debug)]
pub struct ReplayBuffer {
    capacity: usize,
    entries: Vec<Entry>,
    next: usize,
    inserted: u64,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        Self { capacity, entries: Vec::new(), next: 0, inserted: 0 }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total insertions, including overwritten ones.
    pub fn inserted(&self) -> u64 {
        self.inserted
    }

    pub fn push(&mut self, entry: Entry) {
        if self.entries.len() < self.capacity {
            self.entries.push(entry);
        } else {
            self.entries[self.next] = entry;
        }
        self.next = (self.next + 1) % self.capacity;
        self.inserted += 1;
    }

    pub fn get(&self, i: usize) -> &Entry {
        &self.entries[i]
    }

    /// Indices drawn uniformly with replacement.
    pub fn sample_indices(&self, n: usize, rng: &mut Rng) -> Vec<usize> {
        assert!(!self.entries.is_empty(), "cannot sample an empty buffer");
        (0..n).map(|_| rng.random_range(0..self.entries.len())).collect()
    }

    pub fn sample(&self, n: usize, rng: &mut Rng) -> Vec<&Entry> {
        self.sample_indices(n, rng).into_iter().map(|i| &self.entries[i]).collect()
    }
}
