use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{argmax_ucb, candidate_states, check_lambda, clamp_variance, cross_gram};
use super::{ExplorationSchedule, Policy, RadiusKind, Score};
use crate::error::Result;
use crate::kernels::{KernelSpec, StatePoint};
use crate::linalg::{dense_spd_inverse, SpdInverse, JITTER};

/// Exact kernel UCB: kernel ridge regression over the whole history with
/// `(K + lambda I)^-1` grown by Schur bordering.
#[derive(Debug, Clone)]
pub struct KUcb {
    spec: KernelSpec,
    lambda: f64,
    beta: ExplorationSchedule,
    history: Vec<StatePoint>,
    rewards: DVector<f64>,
    k_lambda_inverse: SpdInverse,
    /// `(K + lambda I)^-1 Y`
    weights: DVector<f64>,
    rng: ChaCha8Rng,
    refactor_every: Option<usize>,
}

impl KUcb {
    pub fn new(spec: KernelSpec, lambda: f64, beta: ExplorationSchedule, seed: u64) -> Result<Self> {
        check_lambda(lambda)?;
        beta.validate()?;
        Ok(Self {
            spec,
            lambda,
            beta,
            history: Vec::new(),
            rewards: DVector::zeros(0),
            k_lambda_inverse: SpdInverse::empty(),
            weights: DVector::zeros(0),
            rng: ChaCha8Rng::seed_from_u64(seed),
            refactor_every: None,
        })
    }

    /// Recompute the inverse from scratch every `n` updates.
    pub fn with_refactor_every(mut self, n: Option<usize>) -> Self {
        self.refactor_every = n.filter(|&n| n > 0);
        self
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn history(&self) -> &[StatePoint] {
        &self.history
    }

    pub fn rewards(&self) -> &DVector<f64> {
        &self.rewards
    }

    pub fn k_lambda_inverse(&self) -> &SpdInverse {
        &self.k_lambda_inverse
    }

    /// `Tr(K (K + lambda I)^-1) = t - lambda Tr((K + lambda I)^-1)`.
    pub fn effective_dimension(&self) -> f64 {
        self.history.len() as f64 - self.lambda * self.k_lambda_inverse.matrix().trace()
    }

    /// Exploration multiplier for the next round.
    pub fn current_beta(&self) -> f64 {
        self.beta.beta(
            RadiusKind::Exact,
            self.history.len(),
            self.lambda,
            0.0,
            self.effective_dimension(),
        )
    }

    /// Posterior mean `K_S(s)^T (K + lambda I)^-1 Y` and squared width
    /// `(k(s,s) - K_S(s)^T (K + lambda I)^-1 K_S(s)) / lambda`.
    pub fn score(&self, s: &StatePoint) -> Result<Score> {
        let kss = self.spec.eval(s, s)?;
        if self.history.is_empty() {
            return Ok(Score { mean: 0.0, variance: kss / self.lambda });
        }
        let col = self.spec.column(&self.history, s)?;
        let mean = col.dot(&self.weights);
        let variance = (kss - self.k_lambda_inverse.quad_form(&col)) / self.lambda;
        Ok(Score { mean, variance: clamp_variance(variance)? })
    }

    /// Scores of every candidate action under `context`.
    pub fn scores(&self, context: &[f64], actions: &[Vec<f64>]) -> Result<Vec<Score>> {
        let candidates = candidate_states(context, actions)?;
        if self.history.is_empty() {
            return candidates.iter().map(|s| self.score(s)).collect();
        }
        let cols = cross_gram(&self.spec, &self.history, &candidates)?;
        let projected: DMatrix<f64> = self.k_lambda_inverse.matrix() * &cols;
        let means = cols.tr_mul(&self.weights);
        candidates
            .iter()
            .enumerate()
            .map(|(j, s)| {
                let kss = self.spec.eval(s, s)?;
                let reduction = cols.column(j).dot(&projected.column(j));
                Ok(Score {
                    mean: means[j],
                    variance: clamp_variance((kss - reduction) / self.lambda)?,
                })
            })
            .collect()
    }

    /// UCB argmax with lowest-index tie-breaking.
    pub fn select(&self, context: &[f64], actions: &[Vec<f64>]) -> Result<usize> {
        let scores = self.scores(context, actions)?;
        argmax_ucb(&scores, self.current_beta())
    }

    /// Appends `(s, reward)` and borders the inverse with `K_S(s)` and
    /// `k(s,s) + lambda`.
    pub fn observe(&mut self, s: StatePoint, reward: f64) -> Result<()> {
        let col = self.spec.column(&self.history, &s)?;
        let c = self.spec.eval(&s, &s)? + self.lambda;
        self.k_lambda_inverse
            .schur_extend_jittered(&col, c, JITTER * self.spec.kappa().powi(2))?;
        self.history.push(s);
        let n = self.rewards.len();
        self.rewards = self.rewards.clone().insert_row(n, reward);
        if let Some(every) = self.refactor_every {
            if self.history.len() % every == 0 {
                self.k_lambda_inverse = self.dense_k_lambda_inverse()?;
            }
        }
        self.weights = self.k_lambda_inverse.apply(&self.rewards);
        Ok(())
    }

    /// `(K + lambda I)^-1` recomputed by factorization.
    pub fn dense_k_lambda_inverse(&self) -> Result<SpdInverse> {
        let n = self.history.len();
        let k = self.spec.gram(&self.history, &self.history)? + DMatrix::identity(n, n) * self.lambda;
        dense_spd_inverse(&k, JITTER * self.spec.kappa().powi(2))
    }
}

impl Policy for KUcb {
    fn name(&self) -> &'static str {
        "kucb"
    }

    /// The first action is drawn at random from the policy stream; later
    /// ones maximize the UCB.
    fn choose(&mut self, context: &[f64], actions: &[Vec<f64>]) -> Result<usize> {
        if self.history.is_empty() {
            candidate_states(context, actions)?;
            return Ok(self.rng.random_range(0..actions.len()));
        }
        self.select(context, actions)
    }

    fn update(&mut self, state: StatePoint, reward: f64) -> Result<()> {
        self.observe(state, reward)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pt(x: f64, a: f64) -> StatePoint {
        StatePoint::new(vec![x], vec![a]).unwrap()
    }

    fn linear() -> KernelSpec {
        KernelSpec::linear(2f64.sqrt()).unwrap()
    }

    #[test]
    fn empty_history_prior() {
        let k = KUcb::new(KernelSpec::gaussian(0.2).unwrap(), 2.0, ExplorationSchedule::Fixed(1.0), 0).unwrap();
        let s = k.score(&pt(0.3, 0.3)).unwrap();
        assert_eq!(s, Score { mean: 0.0, variance: 0.5 });
        let actions = vec![vec![0.0], vec![0.5], vec![1.0]];
        assert_eq!(k.select(&[0.2], &actions).unwrap(), 0);
    }

    #[test]
    fn one_point_linear_hand_solve() {
        // the concatenation of s = (context 1, action 0) has squared norm 1
        let mut k = KUcb::new(linear(), 1.0, ExplorationSchedule::Fixed(1.0), 0).unwrap();
        k.observe(pt(1.0, 0.0), 1.0).unwrap();
        assert_eq!(k.k_lambda_inverse().matrix()[(0, 0)], 0.5);
        let s = k.score(&pt(1.0, 0.0)).unwrap();
        assert!((s.mean - 0.5).abs() < 1e-15);
        assert!((s.variance - 0.5).abs() < 1e-15);
    }

    #[test]
    fn far_query_reverts_to_prior() {
        let spec = KernelSpec::gaussian(0.05).unwrap();
        let mut k = KUcb::new(spec, 0.5, ExplorationSchedule::Fixed(1.0), 0).unwrap();
        for i in 0..5 {
            k.observe(pt(0.1 * i as f64, 0.0), 1.0).unwrap();
        }
        let s = k.score(&pt(0.2, 1.0)).unwrap();
        assert!(s.mean.abs() < 1e-10);
        assert!((s.variance - 2.0).abs() < 1e-10);
    }

    #[test]
    fn rewards_recorded_and_inverse_matches_dense() {
        let spec = KernelSpec::gaussian(0.3).unwrap();
        let mut k = KUcb::new(spec, 0.7, ExplorationSchedule::Fixed(1.0), 0).unwrap();
        let rewards: Vec<f64> = (0..10).map(|i| (i as f64 * 0.37).sin()).collect();
        for (i, &r) in rewards.iter().enumerate() {
            k.observe(pt((i as f64 * 0.61) % 1.0, (i as f64 * 0.29) % 1.0), r).unwrap();
            assert_eq!(k.rewards()[i], r);
        }
        let dense = k.dense_k_lambda_inverse().unwrap();
        assert!((k.k_lambda_inverse().matrix() - dense.matrix()).norm() < 1e-7);
    }

    #[test]
    fn three_action_brute_force() {
        let spec = KernelSpec::gaussian(0.4).unwrap();
        let mut k = KUcb::new(spec.clone(), 1.0, ExplorationSchedule::Fixed(0.8), 0).unwrap();
        let hist = [(pt(0.2, 0.0), 0.1), (pt(0.4, 0.5), 0.9), (pt(0.3, 1.0), 0.4), (pt(0.5, 0.5), 0.8)];
        for (s, r) in hist.iter().cloned() {
            k.observe(s, r).unwrap();
        }
        // direct evaluation through an explicitly inverted K + lambda I
        let states: Vec<StatePoint> = hist.iter().map(|(s, _)| s.clone()).collect();
        let y = DVector::from_iterator(4, hist.iter().map(|(_, r)| *r));
        let inv = (spec.gram(&states, &states).unwrap() + DMatrix::identity(4, 4))
            .try_inverse()
            .unwrap();
        let actions = vec![vec![0.0], vec![0.5], vec![1.0]];
        let mut best = (0, f64::NEG_INFINITY);
        for (i, a) in actions.iter().enumerate() {
            let s = pt(0.35, a[0]);
            let col = spec.column(&states, &s).unwrap();
            let mean = col.dot(&(&inv * &y));
            let var = 1.0 - col.dot(&(&inv * &col));
            let ucb = mean + 0.8 * var.sqrt();
            let got = k.scores(&[0.35], &actions).unwrap()[i];
            assert!((got.mean - mean).abs() < 1e-12 && (got.variance - var).abs() < 1e-12);
            if ucb > best.1 {
                best = (i, ucb);
            }
        }
        assert_eq!(k.select(&[0.35], &actions).unwrap(), best.0);
    }

    #[test]
    fn variance_does_not_grow_with_data() {
        let spec = KernelSpec::gaussian(0.3).unwrap();
        let mut k = KUcb::new(spec, 0.5, ExplorationSchedule::Fixed(1.0), 0).unwrap();
        let q = pt(0.5, 0.5);
        let mut last = k.score(&q).unwrap().variance;
        for i in 0..40 {
            k.observe(pt((i as f64 * 0.173) % 1.0, (i as f64 * 0.411) % 1.0), 0.0).unwrap();
            let v = k.score(&q).unwrap().variance;
            assert!(v <= last + 1e-9);
            last = v;
        }
    }

    #[test]
    fn effective_dimension_from_trace() {
        let spec = KernelSpec::gaussian(0.3).unwrap();
        let mut k = KUcb::new(spec.clone(), 0.5, ExplorationSchedule::Fixed(1.0), 0).unwrap();
        for i in 0..12 {
            k.observe(pt((i as f64 * 0.31) % 1.0, (i as f64 * 0.77) % 1.0), 0.0).unwrap();
        }
        let g = spec.gram(k.history(), k.history()).unwrap();
        let direct = (&g * (&g + DMatrix::identity(12, 12) * 0.5).try_inverse().unwrap()).trace();
        assert!((k.effective_dimension() - direct).abs() < 1e-9);
    }

    #[test]
    fn bootstrap_and_errors() {
        let mut k = KUcb::new(KernelSpec::gaussian(0.2).unwrap(), 1.0, ExplorationSchedule::Fixed(1.0), 7).unwrap();
        assert!(k.choose(&[0.1], &[]).is_err());
        assert_eq!(k.choose(&[0.1], &[vec![0.3]]).unwrap(), 0);
        assert!(KUcb::new(KernelSpec::gaussian(0.2).unwrap(), 0.0, ExplorationSchedule::Fixed(1.0), 0).is_err());
    }

    #[test]
    fn refactoring_keeps_the_same_inverse() {
        let spec = KernelSpec::gaussian(0.3).unwrap();
        let mut a = KUcb::new(spec.clone(), 1.0, ExplorationSchedule::Fixed(1.0), 0).unwrap();
        let mut b = KUcb::new(spec, 1.0, ExplorationSchedule::Fixed(1.0), 0).unwrap().with_refactor_every(Some(3));
        for i in 0..10 {
            let s = pt((i as f64 * 0.31) % 1.0, (i as f64 * 0.77) % 1.0);
            a.observe(s.clone(), 0.1 * i as f64).unwrap();
            b.observe(s, 0.1 * i as f64).unwrap();
        }
        assert!((a.k_lambda_inverse().matrix() - b.k_lambda_inverse().matrix()).norm() < 1e-10);
    }
}
