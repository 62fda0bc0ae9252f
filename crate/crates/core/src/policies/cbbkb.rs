use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{argmax_ucb, candidate_states, check_lambda, clamp_variance, cross_gram};
use super::{ExplorationSchedule, Policy, RadiusKind, Score};
use crate::dictionary::{Dictionary, KorsParams};
use crate::error::{invalid, Result};
use crate::kernels::{KernelSpec, StatePoint};
use crate::linalg::{dense_spd_inverse, SpdInverse, JITTER};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CbbkbParams {
    /// Resparsify once `1 + sum of chosen variances` reaches this value.
    /// 1 resamples at every step, `f64::INFINITY` never does.
    pub accumulation_threshold: f64,
    pub resample_seed: u64,
}

impl CbbkbParams {
    pub fn new(accumulation_threshold: f64, resample_seed: u64) -> Result<Self> {
        if !(accumulation_threshold >= 1.0) {
            return invalid(format!(
                "accumulation threshold must be at least 1, got {accumulation_threshold}"
            ));
        }
        Ok(Self {
            accumulation_threshold,
            resample_seed,
        })
    }
}

/// Contextual batched budgeted kernel bandit: a Nystrom UCB whose dictionary
/// is resampled from the whole history whenever enough posterior variance
/// has accumulated. Between resamplings the dictionary is frozen and only
/// the state-side statistics move.
#[derive(Debug, Clone)]
pub struct CbbKb {
    spec: KernelSpec,
    lambda: f64,
    beta: ExplorationSchedule,
    kors: KorsParams,
    params: CbbkbParams,
    dict: Dictionary,
    lambda_mat_inverse: SpdInverse,
    gamma_vec: DVector<f64>,
    history: Vec<StatePoint>,
    rewards: Vec<f64>,
    accumulated: f64,
    resparsifications: usize,
    resample_rng: ChaCha8Rng,
    rng: ChaCha8Rng,
}

impl CbbKb {
    pub fn new(
        spec: KernelSpec,
        lambda: f64,
        beta: ExplorationSchedule,
        kors: KorsParams,
        params: CbbkbParams,
        seed: u64,
    ) -> Result<Self> {
        check_lambda(lambda)?;
        beta.validate()?;
        Ok(Self {
            spec,
            lambda,
            beta,
            kors,
            params,
            dict: Dictionary::new(kors, 0),
            lambda_mat_inverse: SpdInverse::empty(),
            gamma_vec: DVector::zeros(0),
            history: Vec::new(),
            rewards: Vec::new(),
            accumulated: 0.0,
            resparsifications: 0,
            resample_rng: ChaCha8Rng::seed_from_u64(params.resample_seed),
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    pub fn dict(&self) -> &Dictionary {
        &self.dict
    }

    /// Number of dictionary resamplings after the bootstrap.
    pub fn resparsifications(&self) -> usize {
        self.resparsifications
    }

    pub fn accumulated_variance(&self) -> f64 {
        self.accumulated
    }

    pub fn current_beta(&self) -> f64 {
        self.beta.beta(
            RadiusKind::Projected,
            self.history.len(),
            self.lambda,
            self.kors.mu,
            self.dict.len() as f64,
        )
    }

    fn variance_operator(&self) -> DMatrix<f64> {
        self.lambda_mat_inverse.matrix() - self.dict.kzz_inverse().matrix() / self.lambda
    }

    pub fn score(&self, s: &StatePoint) -> Result<Score> {
        let kss = self.spec.eval(s, s)?;
        if self.dict.is_empty() {
            return Ok(Score { mean: 0.0, variance: kss / self.lambda });
        }
        let kz = self.spec.column(self.dict.anchors(), s)?;
        let alpha = self.lambda_mat_inverse.apply(&self.gamma_vec);
        let delta = kz.dot(&(self.variance_operator() * &kz));
        Ok(Score {
            mean: kz.dot(&alpha),
            variance: clamp_variance(kss / self.lambda + delta)?,
        })
    }

    pub fn scores(&self, context: &[f64], actions: &[Vec<f64>]) -> Result<Vec<Score>> {
        let candidates = candidate_states(context, actions)?;
        if self.dict.is_empty() {
            return candidates.iter().map(|s| self.score(s)).collect();
        }
        let kz = cross_gram(&self.spec, self.dict.anchors(), &candidates)?;
        let alpha = self.lambda_mat_inverse.apply(&self.gamma_vec);
        let means = kz.tr_mul(&alpha);
        let projected = self.variance_operator() * &kz;
        candidates
            .iter()
            .enumerate()
            .map(|(j, s)| {
                let kss = self.spec.eval(s, s)?;
                Ok(Score {
                    mean: means[j],
                    variance: clamp_variance(kss / self.lambda + kz.column(j).dot(&projected.column(j)))?,
                })
            })
            .collect()
    }

    pub fn observe(&mut self, s: StatePoint, reward: f64) -> Result<()> {
        let variance = self.score(&s)?.variance;
        self.accumulated += variance;
        let kz = self.spec.column(self.dict.anchors(), &s)?;
        self.history.push(s);
        self.rewards.push(reward);
        let t = self.history.len();

        if self.dict.is_empty() {
            let mut dict = Dictionary::new(self.kors, 0);
            dict.insert_anchor(&self.history[t - 1], 1.0, t, &self.spec)?;
            self.rebuild(dict)?;
            self.accumulated = 0.0;
        } else if 1.0 + self.accumulated >= self.params.accumulation_threshold {
            self.resparsify()?;
        } else {
            self.lambda_mat_inverse.rank_one_update(&kz)?;
            self.gamma_vec.axpy(reward, &kz, 1.0);
        }
        Ok(())
    }

    /// Draws a fresh dictionary over all past states with probabilities
    /// `min(gamma * score, 1)`, scores estimated against the current anchors.
    fn resparsify(&mut self) -> Result<()> {
        let mut draws = Vec::with_capacity(self.history.len());
        for s in &self.history {
            let score = self.dict.leverage_score(s, &self.spec)?;
            let prob = (self.kors.gamma * score).min(1.0);
            let coin: f64 = self.resample_rng.random();
            draws.push((coin < prob, prob));
        }
        let mut dict = Dictionary::new(self.kors, 0);
        for (i, (keep, prob)) in draws.into_iter().enumerate() {
            if keep {
                dict.insert_anchor(&self.history[i], prob, i + 1, &self.spec)?;
            }
        }
        if dict.is_empty() {
            let t = self.history.len();
            dict.insert_anchor(&self.history[t - 1], 1.0, t, &self.spec)?;
        }
        self.rebuild(dict)?;
        self.accumulated = 0.0;
        self.resparsifications += 1;
        Ok(())
    }

    /// Recomputes `K_ZS`, `Lambda` and `Gamma` for a new dictionary in
    /// `O(t m^2)`.
    fn rebuild(&mut self, dict: Dictionary) -> Result<()> {
        let kzs = self.spec.gram(dict.anchors(), &self.history)?;
        let kzz = self.spec.gram(dict.anchors(), dict.anchors())?;
        let a = &kzs * kzs.transpose() + kzz * self.lambda;
        self.lambda_mat_inverse = dense_spd_inverse(&a, JITTER * self.spec.kappa().powi(2))?;
        self.gamma_vec = kzs * DVector::from_column_slice(&self.rewards);
        self.dict = dict;
        Ok(())
    }
}

impl Policy for CbbKb {
    fn name(&self) -> &'static str {
        if self.params.accumulation_threshold <= 1.0 {
            "cbkb"
        } else {
            "cbbkb"
        }
    }

    fn choose(&mut self, context: &[f64], actions: &[Vec<f64>]) -> Result<usize> {
        if self.dict.is_empty() {
            candidate_states(context, actions)?;
            return Ok(self.rng.random_range(0..actions.len()));
        }
        let scores = self.scores(context, actions)?;
        argmax_ucb(&scores, self.current_beta())
    }

    fn update(&mut self, state: StatePoint, reward: f64) -> Result<()> {
        self.observe(state, reward)
    }

    fn dictionary_size(&self) -> usize {
        self.dict.len()
    }

    fn dictionary(&self) -> Option<&Dictionary> {
        Some(&self.dict)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pt(x: f64, a: f64) -> StatePoint {
        StatePoint::new(vec![x], vec![a]).unwrap()
    }

    fn stream(n: usize) -> Vec<(StatePoint, f64)> {
        (0..n)
            .map(|i| {
                let x = (i as f64 * 0.618_033_988_7) % 1.0;
                let a = (i as f64 * 0.414_213_562_4) % 1.0;
                (pt(x, a), x * a)
            })
            .collect()
    }

    fn build(threshold: f64) -> CbbKb {
        CbbKb::new(
            KernelSpec::gaussian(0.3).unwrap(),
            1.0,
            ExplorationSchedule::Fixed(1.0),
            KorsParams::new(1.0, 0.5, 2.0, 0.01).unwrap(),
            CbbkbParams::new(threshold, 5).unwrap(),
            0,
        )
        .unwrap()
    }

    #[test]
    fn threshold_one_resamples_every_step() {
        let mut p = build(1.0);
        assert_eq!(p.name(), "cbkb");
        for (i, (s, r)) in stream(20).into_iter().enumerate() {
            p.observe(s, r).unwrap();
            // the bootstrap step is not a resampling
            assert_eq!(p.resparsifications(), i);
        }
    }

    #[test]
    fn infinite_threshold_freezes_dictionary() {
        let mut p = build(f64::INFINITY);
        assert_eq!(p.name(), "cbbkb");
        for (s, r) in stream(30) {
            p.observe(s, r).unwrap();
            assert_eq!(p.dict().len(), 1);
        }
        assert_eq!(p.resparsifications(), 0);
        // frozen statistics still track every state
        let kzs = p.spec.gram(p.dict().anchors(), &p.history).unwrap();
        let gamma = &kzs * DVector::from_column_slice(&p.rewards);
        assert!((p.gamma_vec.clone() - gamma).norm() < 1e-10);
    }

    #[test]
    fn intermediate_threshold_resamples_sometimes() {
        let mut p = build(3.0);
        for (s, r) in stream(80) {
            p.observe(s, r).unwrap();
            assert!(1.0 + p.accumulated_variance() < 3.0);
        }
        assert!(p.resparsifications() > 0 && p.resparsifications() < 80);
    }

    #[test]
    fn threshold_below_one_is_rejected() {
        assert!(CbbkbParams::new(0.5, 0).is_err());
    }
}
