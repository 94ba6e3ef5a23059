use rand::Rng;

/// Fixed-size input width of the DQN state.
pub const STATE_DIM: usize = 5;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Experience {
    pub state: [f64; STATE_DIM],
    pub action: usize,
    pub reward: f64,
    pub next_state: [f64; STATE_DIM],
    pub terminal: bool,
}

/// Ring buffer; the oldest experience is overwritten once full.
#[derive(Clone, Debug)]
pub struct ReplayBuffer {
    capacity: usize,
    items: Vec<Experience>,
    next: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        Self {
            capacity,
            items: Vec::with_capacity(capacity.min(1 << 16)),
            next: 0,
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

    pub fn push(&mut self, e: Experience) {
        if self.items.len() < self.capacity {
            self.items.push(e);
        } else {
            self.items[self.next] = e;
        }
        self.next = (self.next + 1) % self.capacity;
    }

    /// Uniform sampling with replacement.
    pub fn sample_indices<R: Rng + ?Sized>(&self, rng: &mut R, n: usize) -> Vec<usize> {
        assert!(!self.items.is_empty(), "sampling an empty buffer");
        (0..n).map(|_| rng.gen_range(0..self.items.len())).collect()
    }

    pub fn get(&self, i: usize) -> &Experience {
        &self.items[i]
    }
}
