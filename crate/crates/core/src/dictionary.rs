//! Incremental Nystrom dictionaries built by kernel online row sampling.
//!
//! Each arriving state gets a ridge leverage score estimated against the
//! current anchors (temporarily augmented with the state itself at weight 1),
//! and is kept with probability `min(gamma * score, 1)`. Anchors are only ever
//! appended. The dictionary keeps two inverses up to date by Schur bordering:
//! `K_ZZ^-1`, consumed by the policies, and `(S K_ZZ S + mu I)^-1`, consumed
//! by the leverage-score estimator (`S` is the diagonal of `1/sqrt(p)`).

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{invalid, BanditError, Result};
use crate::kernels::{KernelSpec, StatePoint};
use crate::linalg::{SpdInverse, JITTER};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KorsParams {
    /// Projection regularization.
    pub mu: f64,
    /// Estimator accuracy, in (0, 1).
    pub epsilon: f64,
    /// Sampling budget multiplying the leverage score.
    pub gamma: f64,
    /// Failure probability, in (0, 1).
    pub delta: f64,
    /// Overrides the inclusion probability to 1 (full dictionary).
    pub force_inclusion: bool,
    /// Sampled points whose residual `k(s,s) - K_Z(s)^T K_ZZ^-1 K_Z(s)` is
    /// below `min_residual * k(s,s)` are refused as duplicates.
    pub min_residual: f64,
}

/// Default of [`KorsParams::min_residual`].
pub const DEFAULT_MIN_RESIDUAL: f64 = 1e-4;

impl KorsParams {
    pub fn new(mu: f64, epsilon: f64, gamma: f64, delta: f64) -> Result<Self> {
        if !(mu > 0.0 && mu.is_finite()) {
            return invalid(format!("mu must be positive, got {mu}"));
        }
        if !(epsilon > 0.0 && epsilon < 1.0) {
            return invalid(format!("epsilon must lie in (0, 1), got {epsilon}"));
        }
        if !(gamma > 0.0) {
            return invalid(format!("gamma must be positive, got {gamma}"));
        }
        if !(delta > 0.0 && delta < 1.0) {
            return invalid(format!("delta must lie in (0, 1), got {delta}"));
        }
        Ok(Self {
            mu,
            epsilon,
            gamma,
            delta,
            force_inclusion: false,
            min_residual: DEFAULT_MIN_RESIDUAL,
        })
    }

    /// `epsilon = 1/2`, `delta = 1/T^2` and `gamma = 12 log(T / delta)`.
    pub fn for_horizon(mu: f64, horizon: usize) -> Result<Self> {
        let delta = default_delta(horizon);
        Self::new(mu, 0.5, default_gamma(horizon, delta), delta)
    }

    pub fn with_gamma(mut self, gamma: f64) -> Result<Self> {
        if !(gamma > 0.0) {
            return invalid(format!("gamma must be positive, got {gamma}"));
        }
        self.gamma = gamma;
        Ok(self)
    }

    pub fn with_min_residual(mut self, min_residual: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&min_residual) {
            return invalid(format!("min_residual must lie in [0, 1), got {min_residual}"));
        }
        self.min_residual = min_residual;
        Ok(self)
    }

    pub fn full_dictionary(mut self) -> Self {
        self.force_inclusion = true;
        self
    }
}

/// `1 / T^2`, with `T` floored at 2 so that the result stays below 1.
pub fn default_delta(horizon: usize) -> f64 {
    let t = horizon.max(2) as f64;
    1.0 / (t * t)
}

/// `12 log(T / delta)`.
pub fn default_gamma(horizon: usize, delta: f64) -> f64 {
    12.0 * (horizon.max(2) as f64 / delta).ln()
}

/// Outcome of one sampling step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KorsDecision {
    pub score: f64,
    pub prob: f64,
    pub added: bool,
}

#[derive(Debug, Clone)]
pub struct Dictionary {
    params: KorsParams,
    anchors: Vec<StatePoint>,
    probs: Vec<f64>,
    inserted_at: Vec<usize>,
    kzz_inverse: SpdInverse,
    scaled_inverse: SpdInverse,
    rng: ChaCha8Rng,
    rejected: usize,
}

impl Dictionary {
    /// An empty dictionary whose coin flips come from a dedicated stream
    /// derived from `seed`.
    pub fn new(params: KorsParams, seed: u64) -> Self {
        Self {
            params,
            anchors: Vec::new(),
            probs: Vec::new(),
            inserted_at: Vec::new(),
            kzz_inverse: SpdInverse::empty(),
            scaled_inverse: SpdInverse::empty(),
            rng: ChaCha8Rng::seed_from_u64(seed),
            rejected: 0,
        }
    }

    pub fn params(&self) -> &KorsParams {
        &self.params
    }

    pub fn len(&self) -> usize {
        self.anchors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.anchors.is_empty()
    }

    pub fn anchors(&self) -> &[StatePoint] {
        &self.anchors
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    /// Round at which each anchor was included.
    pub fn inserted_at(&self) -> &[usize] {
        &self.inserted_at
    }

    pub fn kzz_inverse(&self) -> &SpdInverse {
        &self.kzz_inverse
    }

    /// Number of sampled points refused because they were (numerically)
    /// duplicates of existing anchors.
    pub fn rejected_duplicates(&self) -> usize {
        self.rejected
    }

    /// Estimated ridge leverage score of `s`.
    pub fn leverage_score(&self, s: &StatePoint, spec: &KernelSpec) -> Result<f64> {
        let kz = spec.column(&self.anchors, s)?;
        self.leverage_score_with(s, &kz, spec)
    }

    /// Same as [`leverage_score`](Self::leverage_score) with a precomputed
    /// column `K_Z(s)`.
    pub fn leverage_score_with(
        &self,
        s: &StatePoint,
        kz: &DVector<f64>,
        spec: &KernelSpec,
    ) -> Result<f64> {
        if kz.len() != self.len() {
            return invalid("kernel column length differs from dictionary size");
        }
        let kss = spec.eval(s, s)?;
        let b = self.scaled_column(kz, 1.0);
        let q = self.scaled_inverse.quad_form(&b);
        // Border (S K S + mu I) with the temporary point at weight 1. With
        // r = k(s,s) - q, the augmented quadratic form is q + r^2 / schur and
        // the bracket of the estimator reduces to r * mu / schur.
        let schur = kss + self.params.mu - q;
        if !(schur > crate::linalg::SINGULAR_TOL) {
            return Err(BanditError::NearSingularExtension(schur));
        }
        let residual = (kss - q).max(0.0);
        Ok((1.0 + self.params.epsilon) * residual / schur)
    }

    fn scaled_column(&self, kz: &DVector<f64>, new_prob: f64) -> DVector<f64> {
        let scale = new_prob.sqrt();
        DVector::from_iterator(
            kz.len(),
            kz.iter()
                .zip(&self.probs)
                .map(|(k, p)| k / (p.sqrt() * scale)),
        )
    }

    /// One sampling step for the state observed at round `t`.
    pub fn kors_step(&mut self, t: usize, s: &StatePoint, spec: &KernelSpec) -> Result<KorsDecision> {
        let kz = spec.column(&self.anchors, s)?;
        self.kors_step_with(t, s, &kz, spec)
    }

    pub fn kors_step_with(
        &mut self,
        t: usize,
        s: &StatePoint,
        kz: &DVector<f64>,
        spec: &KernelSpec,
    ) -> Result<KorsDecision> {
        if t == 0 {
            return invalid("rounds are numbered from 1");
        }
        let score = match self.leverage_score_with(s, kz, spec) {
            Ok(v) => v,
            Err(BanditError::NearSingularExtension(_)) => {
                (1.0 + self.params.epsilon) * spec.eval(s, s)? / self.params.mu
            }
            Err(e) => return Err(e),
        };
        let prob = if self.params.force_inclusion {
            1.0
        } else {
            (self.params.gamma * score).min(1.0)
        };
        // One uniform per call keeps the stream aligned across runs.
        let coin: f64 = self.rng.random();
        let added = coin < prob && self.insert_with(s, prob, t, kz, spec)?;
        Ok(KorsDecision { score, prob, added })
    }

    /// Appends `s` with sampling probability `prob`. Returns `false` (and
    /// counts a rejection) when `s` duplicates the span of the anchors.
    pub fn insert_anchor(
        &mut self,
        s: &StatePoint,
        prob: f64,
        t: usize,
        spec: &KernelSpec,
    ) -> Result<bool> {
        let kz = spec.column(&self.anchors, s)?;
        self.insert_with(s, prob, t, &kz, spec)
    }

    fn insert_with(
        &mut self,
        s: &StatePoint,
        prob: f64,
        t: usize,
        kz: &DVector<f64>,
        spec: &KernelSpec,
    ) -> Result<bool> {
        if !(prob > 0.0 && prob <= 1.0) {
            return invalid(format!("inclusion probability must lie in (0, 1], got {prob}"));
        }
        let kss = spec.eval(s, s)?;
        let w = self.kzz_inverse.apply(kz);
        let residual = kss - kz.dot(&w);
        if residual <= self.params.min_residual * kss {
            self.rejected += 1;
            return Ok(false);
        }
        let mut kzz = self.kzz_inverse.clone();
        match kzz.extend_with(&w, residual) {
            Ok(()) => {}
            Err(BanditError::NearSingularExtension(_)) => {
                self.rejected += 1;
                return Ok(false);
            }
            Err(e) => return Err(e),
        }
        let mut scaled = self.scaled_inverse.clone();
        let b = self.scaled_column(kz, prob);
        scaled.schur_extend_jittered(&b, kss / prob + self.params.mu, JITTER * spec.kappa().powi(2))?;
        self.kzz_inverse = kzz;
        self.scaled_inverse = scaled;
        self.anchors.push(s.clone());
        self.probs.push(prob);
        self.inserted_at.push(t);
        Ok(true)
    }
}

/// Largest eigenvalue of `K_SS - K_SZ K_ZZ^-1 K_ZS`, the squared norm of the
/// part of the covariance operator missed by the span of the anchors.
pub fn projection_error(
    anchors: &[StatePoint],
    history: &[StatePoint],
    spec: &KernelSpec,
) -> Result<f64> {
    if history.is_empty() {
        return Ok(0.0);
    }
    let kss = spec.gram(history, history)?;
    let residual = if anchors.is_empty() {
        kss
    } else {
        let mut kzz = spec.gram(anchors, anchors)?;
        let chol = Cholesky::new(kzz.clone())
            .or_else(|| {
                for i in 0..kzz.nrows() {
                    kzz[(i, i)] += JITTER * spec.kappa().powi(2);
                }
                Cholesky::new(kzz)
            })
            .ok_or(BanditError::Factorization)?;
        let kzs = spec.gram(anchors, history)?;
        let w = chol
            .l()
            .solve_lower_triangular(&kzs)
            .ok_or(BanditError::Factorization)?;
        kss - w.tr_mul(&w)
    };
    Ok(max_eigenvalue(residual))
}

fn max_eigenvalue(m: DMatrix<f64>) -> f64 {
    m.symmetric_eigenvalues().max()
}

/// Exact ridge leverage score `phi^T (F + mu I)^-1 phi` of `s` against
/// `history`, through the kernel trick.
pub fn exact_leverage_score(
    history: &[StatePoint],
    s: &StatePoint,
    mu: f64,
    spec: &KernelSpec,
) -> Result<f64> {
    let kss = spec.eval(s, s)?;
    if history.is_empty() {
        return Ok(kss / mu);
    }
    let mut k = spec.gram(history, history)?;
    for i in 0..k.nrows() {
        k[(i, i)] += mu;
    }
    let col = spec.column(history, s)?;
    let chol = Cholesky::new(k).ok_or(BanditError::Factorization)?;
    Ok((kss - col.dot(&chol.solve(&col))) / mu)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pt(x: f64, a: f64) -> StatePoint {
        StatePoint::new(vec![x], vec![a]).unwrap()
    }

    fn random_points(n: usize, seed: u64) -> Vec<StatePoint> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                StatePoint::new(
                    vec![rng.random(), rng.random()],
                    vec![rng.random()],
                )
                .unwrap()
            })
            .collect()
    }

    /// Direct evaluation of the estimator with the augmented, rescaled matrix.
    fn dense_score(
        anchors: &[StatePoint],
        probs: &[f64],
        s: &StatePoint,
        params: &KorsParams,
        spec: &KernelSpec,
    ) -> f64 {
        let mut aug = anchors.to_vec();
        aug.push(s.clone());
        let mut weights: Vec<f64> = probs.iter().map(|p| 1.0 / p.sqrt()).collect();
        weights.push(1.0);
        let n = aug.len();
        let sm = DMatrix::from_diagonal(&DVector::from_vec(weights));
        let k = spec.gram(&aug, &aug).unwrap();
        let inner = &sm * k * &sm + DMatrix::identity(n, n) * params.mu;
        let col = spec.column(&aug, s).unwrap();
        let v = &sm * col;
        let quad = v.dot(&(inner.try_inverse().unwrap() * &v));
        (1.0 + params.epsilon) / params.mu * (spec.eval(s, s).unwrap() - quad)
    }

    #[test]
    fn empty_dictionary_score() {
        let params = KorsParams::new(1.0, 0.5, 10.0, 0.1).unwrap();
        let dict = Dictionary::new(params, 0);
        let spec = KernelSpec::gaussian(0.2).unwrap();
        let score = dict.leverage_score(&pt(0.3, 0.4), &spec).unwrap();
        assert!((score - 0.75).abs() < 1e-15);
    }

    #[test]
    fn redundant_point_score_vanishes_with_large_mu() {
        let spec = KernelSpec::gaussian(0.2).unwrap();
        let s = pt(0.3, 0.4);
        let mut last = f64::INFINITY;
        for mu in [1e2, 1e4, 1e6] {
            let mut dict = Dictionary::new(KorsParams::new(mu, 0.5, 1.0, 0.1).unwrap(), 0);
            assert!(dict.insert_anchor(&s, 1.0, 1, &spec).unwrap());
            let score = dict.leverage_score(&s, &spec).unwrap();
            assert!(score < last && score > 0.0);
            last = score;
        }
        assert!(last < 1e-5);
    }

    #[test]
    fn score_matches_dense_oracle() {
        let spec = KernelSpec::gaussian(0.3).unwrap();
        let params = KorsParams::new(0.7, 0.5, 5.0, 0.1).unwrap();
        let mut dict = Dictionary::new(params, 3);
        let pts = random_points(9, 11);
        let probs = [1.0, 0.5, 0.8, 0.3, 1.0, 0.9, 0.6, 0.45];
        for (i, (p, &prob)) in pts[..8].iter().zip(&probs).enumerate() {
            assert!(dict.insert_anchor(p, prob, i + 1, &spec).unwrap());
        }
        let got = dict.leverage_score(&pts[8], &spec).unwrap();
        let expected = dense_score(dict.anchors(), dict.probs(), &pts[8], &params, &spec);
        assert!((got - expected).abs() < 1e-8, "{got} vs {expected}");
    }

    #[test]
    fn score_is_permutation_invariant() {
        let spec = KernelSpec::gaussian(0.3).unwrap();
        let params = KorsParams::new(0.5, 0.5, 5.0, 0.1).unwrap();
        let pts = random_points(7, 5);
        let probs = [0.9, 0.4, 1.0, 0.7, 0.2, 0.55];
        let build = |order: &[usize]| {
            let mut d = Dictionary::new(params, 0);
            for &i in order {
                assert!(d.insert_anchor(&pts[i], probs[i], 1, &spec).unwrap());
            }
            d.leverage_score(&pts[6], &spec).unwrap()
        };
        let a = build(&[0, 1, 2, 3, 4, 5]);
        let b = build(&[5, 3, 1, 0, 4, 2]);
        assert!((a - b).abs() < 1e-9);
    }

    #[test]
    fn first_state_is_always_included() {
        let spec = KernelSpec::gaussian(0.2).unwrap();
        for seed in 0..20 {
            let mut dict = Dictionary::new(KorsParams::new(1.0, 0.5, 1.0 / 0.75, 0.1).unwrap(), seed);
            let d = dict.kors_step(1, &pt(0.5, 0.5), &spec).unwrap();
            assert!(d.added);
            assert_eq!(d.prob, 1.0);
            assert_eq!(dict.len(), 1);
            assert_eq!(dict.inserted_at(), &[1]);
        }
    }

    #[test]
    fn round_zero_is_invalid() {
        let spec = KernelSpec::gaussian(0.2).unwrap();
        let mut dict = Dictionary::new(KorsParams::for_horizon(1.0, 10).unwrap(), 0);
        assert!(dict.kors_step(0, &pt(0.5, 0.5), &spec).is_err());
    }

    #[test]
    fn near_duplicates_follow_the_residual_floor() {
        let spec = KernelSpec::gaussian(1.0).unwrap();
        // residual of the second point is about 1e-8
        let (a, b) = (pt(0.5, 0.5), pt(0.5, 0.5 + 1e-4));
        let params = KorsParams::new(1.0, 0.5, 1.0, 0.1).unwrap().full_dictionary();
        let mut strict = Dictionary::new(params, 0);
        assert!(strict.insert_anchor(&a, 1.0, 1, &spec).unwrap());
        assert!(!strict.insert_anchor(&b, 1.0, 2, &spec).unwrap());
        let mut loose = Dictionary::new(params.with_min_residual(0.0).unwrap(), 0);
        assert!(loose.insert_anchor(&a, 1.0, 1, &spec).unwrap());
        assert!(loose.insert_anchor(&b, 1.0, 2, &spec).unwrap());
        assert!(params.with_min_residual(1.0).is_err());
    }

    #[test]
    fn duplicates_are_rejected() {
        let spec = KernelSpec::gaussian(0.2).unwrap();
        let params = KorsParams::new(1.0, 0.5, 1.0, 0.1).unwrap().full_dictionary();
        let mut dict = Dictionary::new(params, 0);
        assert!(dict.kors_step(1, &pt(0.5, 0.5), &spec).unwrap().added);
        let d = dict.kors_step(2, &pt(0.5, 0.5), &spec).unwrap();
        assert!(!d.added);
        assert_eq!(dict.len(), 1);
        assert_eq!(dict.rejected_duplicates(), 1);
    }

    #[test]
    fn sampling_is_reproducible_and_monotone() {
        let spec = KernelSpec::gaussian(0.2).unwrap();
        let params = KorsParams::new(1.0, 0.5, 12.0 * (50.0f64 / 0.01).ln(), 0.01).unwrap();
        let pts = random_points(50, 21);
        let run = || {
            let mut dict = Dictionary::new(params, 99);
            let mut prev: Vec<StatePoint> = Vec::new();
            for (t, p) in pts.iter().enumerate() {
                dict.kors_step(t + 1, p, &spec).unwrap();
                assert!(dict.anchors().starts_with(&prev));
                prev = dict.anchors().to_vec();
                assert!(dict.probs().iter().all(|&q| q > 0.0 && q <= 1.0));
                assert_eq!(dict.kzz_inverse().dim(), dict.len());
            }
            (dict.anchors().to_vec(), dict.probs().to_vec())
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn kzz_inverse_tracks_dense() {
        let spec = KernelSpec::gaussian(0.4).unwrap();
        let params = KorsParams::new(0.5, 0.5, 3.0, 0.1).unwrap();
        let mut dict = Dictionary::new(params, 4);
        for (t, p) in random_points(60, 8).iter().enumerate() {
            dict.kors_step(t + 1, p, &spec).unwrap();
        }
        let kzz = spec.gram(dict.anchors(), dict.anchors()).unwrap();
        let n = dict.len();
        let residual = &kzz * dict.kzz_inverse().matrix() - DMatrix::identity(n, n);
        assert!(residual.norm() < 1e-6, "{}", residual.norm());
    }

    #[test]
    fn larger_mu_gives_smaller_dictionaries() {
        let spec = KernelSpec::gaussian(0.3).unwrap();
        let pts = random_points(200, 2);
        let mean_size = |mu: f64| {
            let params = KorsParams::new(mu, 0.5, 5.0, 0.1).unwrap();
            (0..20)
                .map(|seed| {
                    let mut dict = Dictionary::new(params, seed);
                    for (t, p) in pts.iter().enumerate() {
                        dict.kors_step(t + 1, p, &spec).unwrap();
                    }
                    dict.len() as f64
                })
                .sum::<f64>()
                / 20.0
        };
        for mu in [0.1, 1.0] {
            assert!(mean_size(10.0 * mu) <= mean_size(mu));
        }
    }

    #[test]
    fn projection_error_edge_cases() {
        let spec = KernelSpec::gaussian(0.3).unwrap();
        let hist = random_points(12, 6);
        assert_eq!(projection_error(&hist[..0], &[], &spec).unwrap(), 0.0);
        assert!(projection_error(&hist, &hist, &spec).unwrap().abs() < 1e-8);
        assert!(projection_error(&[], &hist, &spec).unwrap() >= 1.0);
        let partial = projection_error(&hist[..6], &hist, &spec).unwrap();
        let none = projection_error(&[], &hist, &spec).unwrap();
        assert!(partial >= -1e-10 && partial <= none);
    }

    #[test]
    fn exact_score_against_brute_force() {
        let spec = KernelSpec::linear(3f64.sqrt()).unwrap();
        let hist = random_points(5, 9);
        let s = &random_points(1, 10)[0];
        let mu = 0.3;
        // explicit features: phi^T (Phi^T Phi + mu I)^-1 phi
        let feat = |p: &StatePoint| DVector::from_iterator(3, p.coords());
        let mut f = DMatrix::identity(3, 3) * mu;
        for p in &hist {
            f += feat(p) * feat(p).transpose();
        }
        let expected = feat(s).dot(&(f.try_inverse().unwrap() * feat(s)));
        let got = exact_leverage_score(&hist, s, mu, &spec).unwrap();
        assert!((got - expected).abs() < 1e-10);
    }

    #[test]
    fn params_validation() {
        assert!(KorsParams::new(0.0, 0.5, 1.0, 0.1).is_err());
        assert!(KorsParams::new(1.0, 1.0, 1.0, 0.1).is_err());
        assert!(KorsParams::new(1.0, 0.5, 0.0, 0.1).is_err());
        assert!(KorsParams::new(1.0, 0.5, 1.0, 1.0).is_err());
        let p = KorsParams::for_horizon(1.0, 100).unwrap();
        assert_eq!(p.delta, 1e-4);
        assert!((p.gamma - 12.0 * (1e6f64).ln()).abs() < 1e-9);
        assert!(KorsParams::for_horizon(1.0, 1).is_ok());
    }
}
