use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::Policy;
use crate::error::{invalid, Result};
use crate::kernels::StatePoint;

/// Uniformly random control baseline.
#[derive(Debug, Clone)]
pub struct RandomPolicy {
    rng: ChaCha8Rng,
}

impl RandomPolicy {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn pick(&mut self, n_actions: usize) -> Result<usize> {
        if n_actions == 0 {
            return invalid("empty action set");
        }
        Ok(self.rng.random_range(0..n_actions))
    }
}

impl Policy for RandomPolicy {
    fn name(&self) -> &'static str {
        "random"
    }

    fn choose(&mut self, _context: &[f64], actions: &[Vec<f64>]) -> Result<usize> {
        self.pick(actions.len())
    }

    fn update(&mut self, _state: StatePoint, _reward: f64) -> Result<()> {
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_and_empty() {
        let mut p = RandomPolicy::new(0);
        assert_eq!(p.pick(1).unwrap(), 0);
        assert!(p.pick(0).is_err());
    }

    #[test]
    fn reproducible() {
        let draw = |seed| {
            let mut p = RandomPolicy::new(seed);
            (0..50).map(|_| p.pick(7).unwrap()).collect::<Vec<_>>()
        };
        assert_eq!(draw(3), draw(3));
        assert_ne!(draw(3), draw(4));
    }

    #[test]
    fn frequencies_within_three_sigma() {
        let mut p = RandomPolicy::new(9);
        let n = 10_000;
        let mut counts = [0usize; 4];
        for _ in 0..n {
            counts[p.pick(4).unwrap()] += 1;
        }
        let sigma = (n as f64 * 0.25 * 0.75).sqrt();
        for c in counts {
            assert!((c as f64 - n as f64 * 0.25).abs() <= 3.0 * sigma, "{counts:?}");
        }
    }
}
