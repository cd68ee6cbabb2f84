use ndarray::Array2;
use rand::Rng;

use crate::error::{CrnError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub obs: Vec<f64>,
    pub action: [f64; 2],
    pub reward: f64,
    pub next_obs: Vec<f64>,
    pub done: bool,
}

/// A sampled minibatch, one row per transition.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayBatch {
    pub obs: Array2<f64>,
    pub actions: Array2<f64>,
    pub rewards: Vec<f64>,
    pub next_obs: Array2<f64>,
    pub dones: Vec<bool>,
}

impl ReplayBatch {
    pub fn from_transitions(ts: &[Transition]) -> Result<Self> {
        let w = ts.first().map_or(0, |t| t.obs.len());
        if ts.iter().any(|t| t.obs.len() != w || t.next_obs.len() != w) {
            return Err(CrnError::Shape("transitions have different observation widths".into()));
        }
        let rows = |f: &dyn Fn(&Transition) -> &[f64], w: usize| {
            Array2::from_shape_vec((ts.len(), w), ts.iter().flat_map(|t| f(t).iter().copied()).collect()).expect("uniform width")
        };
        Ok(ReplayBatch {
            obs: rows(&|t| &t.obs, w),
            actions: rows(&|t| &t.action, 2),
            rewards: ts.iter().map(|t| t.reward).collect(),
            next_obs: rows(&|t| &t.next_obs, w),
            dones: ts.iter().map(|t| t.done).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }
}

/// Fixed-capacity ring buffer; once full, the oldest transition is replaced.
/// Observations are stored row-major in flat arrays.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    width: usize,
    len: usize,
    obs: Vec<f64>,
    next_obs: Vec<f64>,
    actions: Vec<[f64; 2]>,
    rewards: Vec<f64>,
    dones: Vec<bool>,
    inserted: u64,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(CrnError::Config("replay capacity must be positive".into()));
        }
        Ok(ReplayBuffer {
            capacity,
            width: 0,
            len: 0,
            obs: Vec::new(),
            next_obs: Vec::new(),
            actions: Vec::new(),
            rewards: Vec::new(),
            dones: Vec::new(),
            inserted: 0,
        })
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

    /// Total number of transitions ever pushed.
    pub fn inserted(&self) -> u64 {
        self.inserted
    }

    pub fn get(&self, i: usize) -> Option<Transition> {
        (i < self.len).then(|| {
            let w = self.width;
            Transition {
                obs: self.obs[i * w..(i + 1) * w].to_vec(),
                action: self.actions[i],
                reward: self.rewards[i],
                next_obs: self.next_obs[i * w..(i + 1) * w].to_vec(),
                done: self.dones[i],
            }
        })
    }

    pub fn push(&mut self, t: Transition) -> Result<()> {
        if self.inserted == 0 {
            self.width = t.obs.len();
        }
        if t.obs.len() != self.width || t.next_obs.len() != self.width {
            return Err(CrnError::Shape(format!(
                "transition width {} / {}, buffer holds width {}",
                t.obs.len(),
                t.next_obs.len(),
                self.width
            )));
        }
        let w = self.width;
        if self.len < self.capacity {
            self.obs.extend_from_slice(&t.obs);
            self.next_obs.extend_from_slice(&t.next_obs);
            self.actions.push(t.action);
            self.rewards.push(t.reward);
            self.dones.push(t.done);
            self.len += 1;
        } else {
            let slot = (self.inserted % self.capacity as u64) as usize;
            self.obs[slot * w..(slot + 1) * w].copy_from_slice(&t.obs);
            self.next_obs[slot * w..(slot + 1) * w].copy_from_slice(&t.next_obs);
            self.actions[slot] = t.action;
            self.rewards[slot] = t.reward;
            self.dones[slot] = t.done;
        }
        self.inserted += 1;
        Ok(())
    }

    /// `batch` transitions drawn uniformly with replacement.
    pub fn sample<R: Rng>(&self, rng: &mut R, batch: usize) -> Result<ReplayBatch> {
        if batch == 0 || batch > self.len {
            return Err(CrnError::Contract(format!("cannot sample {batch} transitions from a buffer of {}", self.len)));
        }
        let w = self.width;
        let mut out = ReplayBatch {
            obs: Array2::zeros((batch, w)),
            actions: Array2::zeros((batch, 2)),
            rewards: Vec::with_capacity(batch),
            next_obs: Array2::zeros((batch, w)),
            dones: Vec::with_capacity(batch),
        };
        for r in 0..batch {
            let i = rng.random_range(0..self.len);
            let src = i * w..(i + 1) * w;
            out.obs.row_mut(r).iter_mut().zip(&self.obs[src.clone()]).for_each(|(d, s)| *d = *s);
            out.next_obs.row_mut(r).iter_mut().zip(&self.next_obs[src]).for_each(|(d, s)| *d = *s);
            out.actions[[r, 0]] = self.actions[i][0];
            out.actions[[r, 1]] = self.actions[i][1];
            out.rewards.push(self.rewards[i]);
            out.dones.push(self.dones[i]);
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tr(r: f64) -> Transition {
        Transition {
            obs: vec![r],
            action: [0.0, 0.0],
            reward: r,
            next_obs: vec![r],
            done: false,
        }
    }

    #[test]
    fn ring_overwrites_oldest() {
        let mut b = ReplayBuffer::new(3).unwrap();
        for i in 0..5 {
            b.push(tr(f64::from(i))).unwrap();
        }
        assert_eq!(b.len(), 3);
        assert_eq!(b.inserted(), 5);
        assert_eq!(b.get(0).unwrap().obs, vec![3.0]);
        assert!(b.get(3).is_none());
        let mut rewards: Vec<f64> = (0..3).map(|i| b.get(i).unwrap().reward).collect();
        rewards.sort_by(f64::total_cmp);
        assert_eq!(rewards, vec![2.0, 3.0, 4.0]);
    }

    #[test]
    fn sampling_is_seeded_and_bounded() {
        let mut b = ReplayBuffer::new(100).unwrap();
        for i in 0..100 {
            b.push(tr(f64::from(i))).unwrap();
        }
        let draw = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            b.sample(&mut rng, 64).unwrap()
        };
        let got = draw(1);
        assert_eq!(got.len(), 64);
        assert_eq!(got, draw(1));
        for (r, reward) in got.rewards.iter().enumerate() {
            assert!((0.0..100.0).contains(reward));
            assert_eq!(got.obs[[r, 0]], *reward);
            assert_eq!(got.next_obs[[r, 0]], *reward);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        assert!(b.sample(&mut rng, 101).is_err());
    }

    #[test]
    fn width_is_fixed_by_the_first_push() {
        let mut b = ReplayBuffer::new(4).unwrap();
        b.push(tr(1.0)).unwrap();
        let wide = Transition { obs: vec![1.0, 2.0], next_obs: vec![1.0, 2.0], ..tr(2.0) };
        assert!(b.push(wide).is_err());
        assert_eq!(b.len(), 1);
    }
}
