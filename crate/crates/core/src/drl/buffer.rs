use rand::seq::index;
use rand::Rng;

use crate::autodiff::Tensor;

/// Sampled minibatch, one row per transition.
#[derive(Debug, Clone)]
pub struct Batch {
    pub obs: Tensor<f32>,
    pub actions: Tensor<f32>,
    pub rewards: Tensor<f32>,
    pub next_obs: Tensor<f32>,
    pub dones: Tensor<f32>,
}

/// Ring buffer of `(obs, action, reward, next_obs, done)`.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    obs_dim: usize,
    act_dim: usize,
    obs: Vec<f32>,
    next_obs: Vec<f32>,
    actions: Vec<f32>,
    rewards: Vec<f32>,
    dones: Vec<f32>,
    pos: usize,
    len: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize, obs_dim: usize, act_dim: usize) -> Self {
        assert!(capacity > 0, "capacity must be positive");
        Self {
            capacity,
            obs_dim,
            act_dim,
            obs: Vec::new(),
            next_obs: Vec::new(),
            actions: Vec::new(),
            rewards: Vec::new(),
            dones: Vec::new(),
            pos: 0,
            len: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Appends a transition, overwriting the oldest once full.
    pub fn push(&mut self, obs: &[f32], action: &[f32], reward: f32, next_obs: &[f32], done: bool) {
        assert_eq!(obs.len(), self.obs_dim);
        assert_eq!(next_obs.len(), self.obs_dim);
        assert_eq!(action.len(), self.act_dim);
        let d = if done { 1.0 } else { 0.0 };
        if self.len < self.capacity {
            self.obs.extend_from_slice(obs);
            self.next_obs.extend_from_slice(next_obs);
            self.actions.extend_from_slice(action);
            self.rewards.push(reward);
            self.dones.push(d);
            self.len += 1;
        } else {
            let (o, a) = (self.pos * self.obs_dim, self.pos * self.act_dim);
            self.obs[o..o + self.obs_dim].copy_from_slice(obs);
            self.next_obs[o..o + self.obs_dim].copy_from_slice(next_obs);
            self.actions[a..a + self.act_dim].copy_from_slice(action);
            self.rewards[self.pos] = reward;
            self.dones[self.pos] = d;
        }
        self.pos = (self.pos + 1) % self.capacity;
    }

    /// Stored reward of slot `i` in insertion order (0 is the oldest).
    pub fn reward_at(&self, i: usize) -> f32 {
        assert!(i < self.len);
        let start = if self.len < self.capacity { 0 } else { self.pos };
        self.rewards[(start + i) % self.capacity]
    }

    /// `batch` distinct slots chosen uniformly (all slots if fewer are stored).
    pub fn sample_indices<R: Rng + ?Sized>(&self, batch: usize, rng: &mut R) -> Vec<usize> {
        index::sample(rng, self.len, batch.min(self.len)).into_vec()
    }

    pub fn gather(&self, idx: &[usize]) -> Batch {
        let rows = |src: &[f32], width: usize| {
            let mut v = Vec::with_capacity(idx.len() * width);
            for &i in idx {
                v.extend_from_slice(&src[i * width..(i + 1) * width]);
            }
            Tensor::new(idx.len(), width, v)
        };
        Batch {
            obs: rows(&self.obs, self.obs_dim),
            actions: rows(&self.actions, self.act_dim),
            rewards: rows(&self.rewards, 1),
            next_obs: rows(&self.next_obs, self.obs_dim),
            dones: rows(&self.dones, 1),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, batch: usize, rng: &mut R) -> Batch {
        self.gather(&self.sample_indices(batch, rng))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn gather_rows_line_up() {
        let mut b = ReplayBuffer::new(4, 2, 1);
        for k in 0..3 {
            let x = k as f32;
            b.push(&[x, -x], &[0.1 * x], x, &[x + 1.0, 0.0], k == 2);
        }
        let s = b.gather(&[2, 0]);
        assert_eq!(s.obs.data(), &[2.0, -2.0, 0.0, 0.0]);
        assert_eq!(s.actions.data(), &[0.2, 0.0]);
        assert_eq!(s.next_obs.data(), &[3.0, 0.0, 1.0, 0.0]);
        assert_eq!(s.dones.data(), &[1.0, 0.0]);
    }

    #[test]
    fn sample_without_replacement() {
        let mut b = ReplayBuffer::new(100, 1, 1);
        for k in 0..50 {
            b.push(&[k as f32], &[0.0], 0.0, &[0.0], false);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut idx = b.sample_indices(50, &mut rng);
        idx.sort_unstable();
        assert_eq!(idx, (0..50).collect::<Vec<_>>());
        assert_eq!(b.sample_indices(80, &mut rng).len(), 50);
    }

    proptest! {
        /// At capacity the buffer holds exactly the newest `capacity` pushes, oldest first.
        #[test]
        fn ring_law(cap in 1usize..20, n in 0usize..60) {
            let mut b = ReplayBuffer::new(cap, 1, 1);
            for k in 0..n {
                b.push(&[0.0], &[0.0], k as f32, &[0.0], false);
            }
            prop_assert_eq!(b.len(), n.min(cap));
            let first = n.saturating_sub(cap);
            for i in 0..b.len() {
                prop_assert_eq!(b.reward_at(i), (first + i) as f32);
            }
        }
    }
}
