use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{argmax_ucb, candidate_states, check_lambda, clamp_variance, cross_gram};
use super::{ExplorationSchedule, Policy, RadiusKind, Score};
use crate::dictionary::{Dictionary, KorsDecision, KorsParams};
use crate::error::{BanditError, Result};
use crate::kernels::{KernelSpec, StatePoint};
use crate::linalg::{dense_spd_inverse, SpdInverse, JITTER};

/// Kernel UCB restricted to an incrementally grown Nystrom subspace.
///
/// With `Z` the anchors and `S` the observed states, the policy maintains
/// `Lambda = (K_ZS K_SZ + lambda K_ZZ)^-1`, `Gamma = K_ZS Y` and `K_ZZ^-1`
/// (inside the dictionary), so that each candidate costs `O(m^2)`:
///
/// ```text
/// mean     = K_Z(s)^T Lambda Gamma
/// variance = k(s,s) / lambda + K_Z(s)^T (Lambda - K_ZZ^-1 / lambda) K_Z(s)
/// ```
#[derive(Debug, Clone)]
pub struct EkUcb {
    spec: KernelSpec,
    lambda: f64,
    beta: ExplorationSchedule,
    dict: Dictionary,
    lambda_mat_inverse: SpdInverse,
    gamma_vec: DVector<f64>,
    /// `K_ZS`, one row per anchor, one entry per observed state.
    cross: Vec<Vec<f64>>,
    history: Vec<StatePoint>,
    rewards: Vec<f64>,
    rng: ChaCha8Rng,
    refactor_every: Option<usize>,
    last_decision: Option<KorsDecision>,
}

/// Factorization-based reconstruction of the maintained statistics.
#[derive(Debug, Clone)]
pub struct EkUcbDense {
    pub lambda_mat: DMatrix<f64>,
    pub gamma_vec: DVector<f64>,
    pub kzz_inverse: DMatrix<f64>,
}

impl EkUcb {
    /// `seed` drives the bootstrap action; the dictionary coin flips use an
    /// independent stream seeded by `dictionary_seed`.
    pub fn new(
        spec: KernelSpec,
        lambda: f64,
        beta: ExplorationSchedule,
        kors: KorsParams,
        seed: u64,
        dictionary_seed: u64,
    ) -> Result<Self> {
        check_lambda(lambda)?;
        beta.validate()?;
        Ok(Self {
            spec,
            lambda,
            beta,
            dict: Dictionary::new(kors, dictionary_seed),
            lambda_mat_inverse: SpdInverse::empty(),
            gamma_vec: DVector::zeros(0),
            cross: Vec::new(),
            history: Vec::new(),
            rewards: Vec::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
            refactor_every: None,
            last_decision: None,
        })
    }

    pub fn with_refactor_every(mut self, n: Option<usize>) -> Self {
        self.refactor_every = n.filter(|&n| n > 0);
        self
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn dict(&self) -> &Dictionary {
        &self.dict
    }

    pub fn history(&self) -> &[StatePoint] {
        &self.history
    }

    pub fn rewards(&self) -> &[f64] {
        &self.rewards
    }

    /// The maintained `Lambda`.
    pub fn lambda_mat_inverse(&self) -> &SpdInverse {
        &self.lambda_mat_inverse
    }

    pub fn gamma_vec(&self) -> &DVector<f64> {
        &self.gamma_vec
    }

    /// `K_ZS` as an `m x t` matrix.
    pub fn cross(&self) -> DMatrix<f64> {
        let t = self.history.len();
        DMatrix::from_fn(self.cross.len(), t, |i, j| self.cross[i][j])
    }

    /// Sampling decision taken at the most recent update, if any.
    pub fn last_decision(&self) -> Option<KorsDecision> {
        self.last_decision
    }

    pub fn current_beta(&self) -> f64 {
        self.beta.beta(
            RadiusKind::Projected,
            self.history.len(),
            self.lambda,
            self.dict.params().mu,
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
                let delta = kz.column(j).dot(&projected.column(j));
                Ok(Score {
                    mean: means[j],
                    variance: clamp_variance(kss / self.lambda + delta)?,
                })
            })
            .collect()
    }

    pub fn select(&self, context: &[f64], actions: &[Vec<f64>]) -> Result<usize> {
        let scores = self.scores(context, actions)?;
        argmax_ucb(&scores, self.current_beta())
    }

    /// Folds `(s, reward)` into the statistics, then lets KORS decide whether
    /// `s` becomes an anchor. The very first state always does.
    pub fn observe(&mut self, s: StatePoint, reward: f64) -> Result<()> {
        let t = self.history.len() + 1;
        let kz = self.spec.column(self.dict.anchors(), &s)?;
        for (row, &k) in self.cross.iter_mut().zip(kz.iter()) {
            row.push(k);
        }
        self.history.push(s.clone());
        self.rewards.push(reward);

        let added = if self.dict.is_empty() {
            let added = self.dict.insert_anchor(&s, 1.0, t, &self.spec)?;
            self.last_decision = Some(KorsDecision { score: f64::NAN, prob: 1.0, added });
            added
        } else {
            let decision = self.dict.kors_step_with(t, &s, &kz, &self.spec)?;
            self.last_decision = Some(decision);
            decision.added
        };

        // state side: Lambda^-1 += K_Z(s) K_Z(s)^T, Gamma += r K_Z(s)
        if !kz.is_empty() {
            self.lambda_mat_inverse.rank_one_update(&kz)?;
            self.gamma_vec.axpy(reward, &kz, 1.0);
        }
        if added {
            self.extend_with_anchor(&s)?;
        }
        if let Some(every) = self.refactor_every {
            if t % every == 0 {
                self.lambda_mat_inverse = dense_spd_inverse(
                    &self.dense()?.lambda_mat,
                    JITTER * self.spec.kappa().powi(2),
                )?;
            }
        }
        Ok(())
    }

    /// Borders `Lambda^-1` and `Gamma` with the anchor `z` just appended to
    /// the dictionary (and already folded in as a state).
    ///
    /// With `p = K_ZZ^-1 K_Z(z)` over the previous anchors, `s_K` the Schur
    /// complement of `K_ZZ` and `e = K_S(z) - K_SZ p`, the bordering column
    /// satisfies `Lambda b = p + Lambda K_ZS e` and the Schur complement is
    /// `lambda s_K + |e|^2 - e^T K_SZ Lambda K_ZS e`. Both forms only involve
    /// residual-sized quantities, unlike `c - b^T Lambda b`.
    fn extend_with_anchor(&mut self, z: &StatePoint) -> Result<()> {
        let m = self.cross.len();
        let ks = self.spec.column(&self.history, z)?;
        let kinv = self.dict.kzz_inverse().matrix();
        let corner = kinv[(m, m)];
        let s_k = 1.0 / corner;
        let p = DVector::from_iterator(m, (0..m).map(|i| -kinv[(i, m)] * s_k));
        let mut e = ks.clone();
        for (row, &pi) in self.cross.iter().zip(p.iter()) {
            for (ej, &kij) in e.iter_mut().zip(row) {
                *ej -= pi * kij;
            }
        }
        let w = DVector::from_iterator(m, self.cross.iter().map(|row| dot(row, e.as_slice())));
        let lw = self.lambda_mat_inverse.apply(&w);
        let schur = (self.lambda * s_k + e.norm_squared() - w.dot(&lw)).max(self.lambda * s_k);
        let jitter = JITTER * self.spec.kappa().powi(2);
        let column = p + lw;
        self.lambda_mat_inverse
            .extend_with(&column, schur)
            .or_else(|_| self.lambda_mat_inverse.extend_with(&column, schur + jitter))
            .map_err(|e| match e {
                BanditError::NearSingularExtension(v) => BanditError::NumericalInconsistency(
                    format!("dictionary accepted an anchor but Lambda bordering failed ({v:e})"),
                ),
                e => e,
            })?;
        let g = dot(ks.as_slice(), &self.rewards);
        self.gamma_vec = std::mem::replace(&mut self.gamma_vec, DVector::zeros(0)).insert_row(m, g);
        self.cross.push(ks.as_slice().to_vec());
        Ok(())
    }

    /// Rebuilds `Lambda^-1`, `Gamma` and `K_ZZ^-1` from fresh kernel
    /// evaluations.
    pub fn dense(&self) -> Result<EkUcbDense> {
        let anchors = self.dict.anchors();
        let kzs = self.spec.gram(anchors, &self.history)?;
        let kzz = self.spec.gram(anchors, anchors)?;
        let y = DVector::from_column_slice(&self.rewards);
        let lambda_mat = &kzs * kzs.transpose() + &kzz * self.lambda;
        let kzz_inverse = dense_spd_inverse(&kzz, JITTER * self.spec.kappa().powi(2))?.into_matrix();
        Ok(EkUcbDense {
            lambda_mat,
            gamma_vec: kzs * y,
            kzz_inverse,
        })
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl Policy for EkUcb {
    fn name(&self) -> &'static str {
        "ekucb"
    }

    fn choose(&mut self, context: &[f64], actions: &[Vec<f64>]) -> Result<usize> {
        if self.dict.is_empty() {
            candidate_states(context, actions)?;
            return Ok(self.rng.random_range(0..actions.len()));
        }
        self.select(context, actions)
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
