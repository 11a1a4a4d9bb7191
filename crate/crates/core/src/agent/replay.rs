use rand::Rng;

use crate::error::{Error, Result};

/// One environment interaction, tagged with the skill that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: Vec<f64>,
    pub action: Vec<f64>,
    pub reward: f64,
    pub next_state: Vec<f64>,
    /// True only for genuine terminal states; time-limit cut-offs are stored
    /// as `false` so the critic keeps bootstrapping through them.
    pub done: bool,
    pub skill_index: usize,
}

/// Fixed-capacity FIFO ring of transitions with uniform sampling.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    state_dim: usize,
    action_dim: usize,
    items: Vec<Transition>,
    /// slot the next push overwrites once full
    head: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize, state_dim: usize, action_dim: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::invalid("replay capacity must be positive"));
        }
        Ok(Self {
            capacity,
            state_dim,
            action_dim,
            items: Vec::with_capacity(capacity.min(1 << 16)),
            head: 0,
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

    pub fn store(&mut self, transition: Transition) -> Result<()> {
        if transition.state.len() != self.state_dim {
            return Err(Error::shape("transition state", self.state_dim, transition.state.len()));
        }
        if transition.next_state.len() != self.state_dim {
            return Err(Error::shape(
                "transition next state",
                self.state_dim,
                transition.next_state.len(),
            ));
        }
        if transition.action.len() != self.action_dim {
            return Err(Error::shape(
                "transition action",
                self.action_dim,
                transition.action.len(),
            ));
        }
        if !transition.reward.is_finite() {
            return Err(Error::NonFinite("transition reward".into()));
        }
        if self.items.len() < self.capacity {
            self.items.push(transition);
        } else {
            self.items[self.head] = transition;
            self.head = (self.head + 1) % self.capacity;
        }
        Ok(())
    }

    /// Items from oldest to newest.
    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        let (newer, older) = self.items.split_at(self.head);
        older.iter().chain(newer.iter())
    }

    /// The `n` most recently stored items (fewer if the buffer is smaller).
    pub fn recent(&self, n: usize) -> impl Iterator<Item = &Transition> {
        let skip = self.len().saturating_sub(n);
        self.iter().skip(skip)
    }

    pub fn get(&self, i: usize) -> &Transition {
        &self.items[i]
    }

    /// Uniform sampling with replacement.
    pub fn sample<'a, R: Rng + ?Sized>(&'a self, batch: usize, rng: &mut R) -> Vec<&'a Transition> {
        if self.items.is_empty() {
            return Vec::new();
        }
        (0..batch)
            .map(|_| &self.items[rng.random_range(0..self.items.len())])
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tr(reward: f64) -> Transition {
        Transition {
            state: vec![reward],
            action: vec![0.0],
            reward,
            next_state: vec![0.0],
            done: false,
            skill_index: 0,
        }
    }

    #[test]
    fn fifo_eviction() {
        let mut buf = ReplayBuffer::new(2, 1, 1).unwrap();
        for r in [1.0, 2.0, 3.0] {
            buf.store(tr(r)).unwrap();
        }
        assert_eq!(buf.len(), 2);
        let rewards: Vec<f64> = buf.iter().map(|t| t.reward).collect();
        assert_eq!(rewards, vec![2.0, 3.0]);
        buf.store(tr(4.0)).unwrap();
        let rewards: Vec<f64> = buf.iter().map(|t| t.reward).collect();
        assert_eq!(rewards, vec![3.0, 4.0]);
        assert_eq!(buf.recent(1).next().unwrap().reward, 4.0);
    }

    #[test]
    fn single_item_always_sampled() {
        let mut buf = ReplayBuffer::new(5, 1, 1).unwrap();
        buf.store(tr(7.0)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(buf.sample(100, &mut rng).iter().all(|t| t.reward == 7.0));
    }

    #[test]
    fn sampling_is_uniform() {
        let mut buf = ReplayBuffer::new(10, 1, 1).unwrap();
        for i in 0..10 {
            buf.store(tr(i as f64)).unwrap();
        }
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut counts = [0usize; 10];
        for t in buf.sample(100_000, &mut rng) {
            counts[t.reward as usize] += 1;
        }
        assert!(counts.iter().all(|&c| (0.09..=0.11).contains(&(c as f64 / 1e5))));
    }

    #[test]
    fn rejects_bad_dimensions() {
        let mut buf = ReplayBuffer::new(3, 2, 1).unwrap();
        assert!(buf.store(tr(1.0)).is_err());
        assert!(buf.is_empty());
        assert!(ReplayBuffer::new(0, 1, 1).is_err());
    }
}
