//! Fixed-capacity experience replay.

use crate::rng::SplitMix64;

/// One environment transition `(s, a, r, s', done)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: Vec<f64>,
    pub action: usize,
    pub reward: f64,
    pub next_state: Vec<f64>,
    pub done: bool,
}

/// Ring buffer over transitions: once full, each insert evicts the oldest
/// element. Sampling is uniform over current contents, with replacement.
#[derive(Debug)]
pub struct ReplayBuffer {
    storage: Vec<Transition>,
    capacity: usize,
    cursor: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity >= 1, "replay capacity must be >= 1");
        Self {
            storage: Vec::with_capacity(capacity),
            capacity,
            cursor: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.storage.len()
    }

    pub fn is_empty(&self) -> bool {
        self.storage.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn push(&mut self, transition: Transition) {
        if self.storage.len() < self.capacity {
            self.storage.push(transition);
        } else {
            self.storage[self.cursor] = transition;
        }
        self.cursor = (self.cursor + 1) % self.capacity;
    }

    pub fn get(&self, index: usize) -> &Transition {
        &self.storage[index]
    }

    /// Draw `k` transitions uniformly (with replacement) from the buffer.
    pub fn sample<'a>(&'a self, rng: &mut SplitMix64, k: usize) -> Vec<&'a Transition> {
        assert!(!self.is_empty(), "cannot sample from an empty buffer");
        (0..k)
            .map(|_| &self.storage[rng.next_index(self.storage.len())])
            .collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        self.storage.iter()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn transition(tag: f64) -> Transition {
        Transition {
            state: vec![tag],
            action: 0,
            reward: tag,
            next_state: vec![tag + 0.5],
            done: false,
        }
    }

    #[test]
    fn keeps_only_the_most_recent_capacity_items() {
        let mut buffer = ReplayBuffer::new(4);
        for i in 0..11 {
            buffer.push(transition(i as f64));
        }
        assert_eq!(buffer.len(), 4);
        let mut rewards: Vec<f64> = buffer.iter().map(|t| t.reward).collect();
        rewards.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(rewards, vec![7.0, 8.0, 9.0, 10.0]);
    }

    #[test]
    fn fills_up_to_capacity_without_eviction() {
        let mut buffer = ReplayBuffer::new(8);
        for i in 0..5 {
            buffer.push(transition(i as f64));
        }
        assert_eq!(buffer.len(), 5);
        let rewards: Vec<f64> = buffer.iter().map(|t| t.reward).collect();
        assert_eq!(rewards, vec![0.0, 1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn sampling_is_roughly_uniform() {
        let n = 50;
        let mut buffer = ReplayBuffer::new(n);
        for i in 0..n {
            buffer.push(transition(i as f64));
        }
        let mut rng = SplitMix64::new(31);
        let draws = 100_000usize;
        let mut counts = vec![0u64; n];
        for t in buffer.sample(&mut rng, draws) {
            counts[t.reward as usize] += 1;
        }
        let p = 1.0 / n as f64;
        let expected = draws as f64 * p;
        let sigma = (draws as f64 * p * (1.0 - p)).sqrt();
        for (i, &c) in counts.iter().enumerate() {
            assert!(
                (c as f64 - expected).abs() < 3.0 * sigma,
                "index {i}: count {c}, expected {expected}"
            );
        }
    }
}
