//! Offline complexity measures of kernel matrices and a Monte-Carlo audit of
//! the exact confidence radius.
//!
//! Everything here works on a dense symmetric eigendecomposition and is meant
//! for matrices of a few thousand rows at most; none of it runs inside the
//! policy loop.

use nalgebra::{DMatrix, DVector};

use crate::environments::{EnvFamily, EnvSpec, Environment};
use crate::error::{invalid, BanditError, Result};
use crate::kernels::{KernelSpec, StatePoint};
use crate::policies::{theoretical_beta, ExplorationSchedule, KUcb, Policy, RadiusKind};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ComplexityReport {
    pub t: usize,
    pub lambda: f64,
    pub d_eff: f64,
    pub info_gain: f64,
    pub valko_d: usize,
    /// `sum_k log(1 + lambda_k / lambda)`.
    pub log_det_term: f64,
    /// `log(e + e t kappa^2 / lambda) d_eff`.
    pub log_det_bound: f64,
}

/// Eigenvalues of a symmetric PSD matrix, largest first, round-off negatives
/// clamped to zero.
pub fn spectrum(k: &DMatrix<f64>) -> Result<Vec<f64>> {
    if !k.is_square() {
        return invalid("kernel matrix must be square");
    }
    let scale = k.amax().max(1.0);
    for i in 0..k.nrows() {
        for j in (i + 1)..k.ncols() {
            if (k[(i, j)] - k[(j, i)]).abs() > 1e-9 * scale {
                return invalid("kernel matrix must be symmetric");
            }
        }
    }
    if k.nrows() == 0 {
        return Ok(Vec::new());
    }
    let mut eig: Vec<f64> = k
        .clone()
        .symmetric_eigenvalues()
        .iter()
        .map(|&v| v.max(0.0))
        .collect();
    eig.sort_by(|a, b| b.total_cmp(a));
    Ok(eig)
}

/// `Tr(K (K + lambda I)^-1)`.
pub fn effective_dimension(k: &DMatrix<f64>, lambda: f64) -> Result<f64> {
    check_lambda(lambda)?;
    Ok(spectrum(k)?.iter().map(|&e| e / (e + lambda)).sum())
}

/// `log det(I + K / lambda) / 2`.
pub fn information_gain(k: &DMatrix<f64>, lambda: f64) -> Result<f64> {
    check_lambda(lambda)?;
    Ok(0.5 * log_det_term(&spectrum(k)?, lambda))
}

/// `min { j : j lambda log T >= sum_{k > j} lambda_k(K) }`.
pub fn valko_dimension(k: &DMatrix<f64>, lambda: f64, horizon: usize) -> Result<usize> {
    check_lambda(lambda)?;
    if horizon < 2 {
        return invalid("horizon must be at least 2");
    }
    Ok(valko_from_spectrum(&spectrum(k)?, lambda, horizon))
}

fn valko_from_spectrum(eig: &[f64], lambda: f64, horizon: usize) -> usize {
    let log_t = (horizon as f64).ln();
    let mut tail: f64 = eig.iter().sum();
    for j in 0..eig.len() {
        if j as f64 * lambda * log_t >= tail {
            return j;
        }
        tail -= eig[j];
    }
    eig.len()
}

fn log_det_term(eig: &[f64], lambda: f64) -> f64 {
    eig.iter().map(|&e| (e / lambda).ln_1p()).sum()
}

/// Both sides of `sum_k log(1 + lambda_k / lambda) <= log(e + e t kappa^2 / lambda) d_eff`.
pub fn prop1_bound_check(k: &DMatrix<f64>, lambda: f64, kappa: f64, t: usize) -> Result<(f64, f64)> {
    check_lambda(lambda)?;
    let eig = spectrum(k)?;
    let d_eff: f64 = eig.iter().map(|&e| e / (e + lambda)).sum();
    let e = std::f64::consts::E;
    Ok((
        log_det_term(&eig, lambda),
        (e + e * t as f64 * kappa * kappa / lambda).ln() * d_eff,
    ))
}

/// Both sides of `gamma <= d~ (log T + log(t kappa^2 / lambda))`.
///
/// The right-hand side is only an upper bound when `t kappa^2 >= lambda`;
/// below that its second logarithm is negative.
pub fn info_gain_chain_check(
    k: &DMatrix<f64>,
    lambda: f64,
    kappa: f64,
    t: usize,
    horizon: usize,
) -> Result<(f64, f64)> {
    check_lambda(lambda)?;
    if horizon < 2 {
        return invalid("horizon must be at least 2");
    }
    let eig = spectrum(k)?;
    let d_tilde = valko_from_spectrum(&eig, lambda, horizon) as f64;
    let bound = d_tilde * ((horizon as f64).ln() + (t as f64 * kappa * kappa / lambda).ln());
    Ok((0.5 * log_det_term(&eig, lambda), bound))
}

/// All complexity measures of `k` at time `t` in one eigendecomposition.
pub fn complexity_report(
    k: &DMatrix<f64>,
    lambda: f64,
    kappa: f64,
    t: usize,
    horizon: usize,
) -> Result<ComplexityReport> {
    check_lambda(lambda)?;
    let eig = spectrum(k)?;
    let d_eff: f64 = eig.iter().map(|&e| e / (e + lambda)).sum();
    let log_det = log_det_term(&eig, lambda);
    let e = std::f64::consts::E;
    Ok(ComplexityReport {
        t,
        lambda,
        d_eff,
        info_gain: 0.5 * log_det,
        valko_d: valko_from_spectrum(&eig, lambda, horizon.max(2)),
        log_det_term: log_det,
        log_det_bound: (e + e * t as f64 * kappa * kappa / lambda).ln() * d_eff,
    })
}

fn check_lambda(lambda: f64) -> Result<()> {
    if !(lambda > 0.0) {
        return invalid("lambda must be positive");
    }
    Ok(())
}

/// Settings of the confidence-coverage audit on the linear environment.
#[derive(Debug, Clone, PartialEq)]
pub struct CoverageConfig {
    pub kernel: KernelSpec,
    pub horizon: usize,
    pub replays: usize,
    pub lambda: f64,
    pub delta: f64,
    pub noise_sigma: f64,
    pub context_dim: usize,
    pub action_grid: usize,
    /// Multiplies the radius; 1 audits the radius as derived.
    pub beta_scale: f64,
    pub seed: u64,
}

impl CoverageConfig {
    /// `delta = 1/T^2`, unit noise, radius as derived.
    pub fn new(horizon: usize, replays: usize, lambda: f64, seed: u64) -> Result<Self> {
        let context_dim = 2;
        Ok(Self {
            kernel: KernelSpec::linear(((context_dim + 1) as f64).sqrt())?,
            horizon,
            replays,
            lambda,
            delta: crate::dictionary::default_delta(horizon),
            noise_sigma: 1.0,
            context_dim,
            action_grid: 10,
            beta_scale: 1.0,
            seed,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoverageReport {
    pub replays: usize,
    pub covered: usize,
    /// Largest `|theta_hat - theta*|_V / beta` seen over all replays and rounds.
    pub worst_ratio: f64,
}

impl CoverageReport {
    pub fn rate(&self) -> f64 {
        self.covered as f64 / self.replays as f64
    }
}

/// Fraction of seeded replays in which `|theta_hat_t - theta*|_{V_t}` stays
/// below the exact radius `beta_{t+1}(delta)` for every `t <= T`.
///
/// The replays run exact kernel UCB on the linear environment, where the
/// feature map is the concatenation `(x, a)` and `V_t` is built explicitly.
pub fn coverage_test(config: &CoverageConfig) -> Result<CoverageReport> {
    if !config.kernel.is_linear() {
        return Err(BanditError::Unsupported(
            "coverage audit needs the linear kernel".into(),
        ));
    }
    if config.replays == 0 || config.horizon == 0 {
        return invalid("replays and horizon must be positive");
    }
    let dim = config.context_dim + 1;
    let mut covered = 0;
    let mut worst_ratio: f64 = 0.0;
    for replay in 0..config.replays {
        let seed = config.seed.wrapping_add(replay as u64);
        let mut env_spec = EnvSpec::new(EnvFamily::LinearSanity, seed);
        env_spec.context_dim = config.context_dim;
        env_spec.action_grid = config.action_grid;
        env_spec.noise_sigma = config.noise_sigma;
        let mut env = Environment::new(env_spec)?;
        let theta = DVector::from_column_slice(env.theta_star().expect("linear environment"));
        let norm_bound = theta.norm();
        let mut agent = KUcb::new(
            config.kernel.clone(),
            config.lambda,
            ExplorationSchedule::Fixed(1.0),
            seed,
        )?;
        let mut gram = DMatrix::<f64>::zeros(dim, dim);
        let mut target = DVector::<f64>::zeros(dim);
        let mut ok = true;
        for t in 1..=config.horizon {
            let x = env.sample_context();
            let actions = env.action_grid().to_vec();
            let a = agent.choose(&x, &actions)?;
            let out = env.step(&x, a)?;
            let s = StatePoint::new(x, actions[a].clone())?;
            let phi = DVector::from_iterator(dim, s.coords());
            gram += &phi * phi.transpose();
            target.axpy(out.reward, &phi, 1.0);
            agent.update(s, out.reward)?;

            let v = &gram + DMatrix::identity(dim, dim) * config.lambda;
            let chol = v.clone().cholesky().ok_or(BanditError::Factorization)?;
            let err = chol.solve(&target) - &theta;
            let dist = err.dot(&(&v * &err)).max(0.0).sqrt();
            let d_eff = effective_dimension(&gram, config.lambda)?;
            let beta = config.beta_scale
                * theoretical_beta(
                    RadiusKind::Exact,
                    t,
                    config.lambda,
                    0.0,
                    norm_bound,
                    config.delta,
                    config.kernel.kappa(),
                    d_eff,
                );
            if beta > 0.0 {
                worst_ratio = worst_ratio.max(dist / beta);
            } else if dist > 0.0 {
                worst_ratio = f64::INFINITY;
            }
            if dist > beta {
                ok = false;
            }
        }
        if ok {
            covered += 1;
        }
    }
    Ok(CoverageReport {
        replays: config.replays,
        covered,
        worst_ratio,
    })
}
