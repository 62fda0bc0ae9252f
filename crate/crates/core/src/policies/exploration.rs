use crate::error::{invalid, Result};

/// Which confidence radius to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RadiusKind {
    /// Exact kernel ridge regression.
    Exact,
    /// Regression restricted to a Nystrom subspace with projection error `mu`.
    Projected,
}

/// Exploration multiplier used by the UCB rules.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ExplorationSchedule {
    Fixed(f64),
    /// Confidence radius from the regret analysis, with `norm_bound` standing
    /// in for the unknown `|theta*|`.
    Theoretical { norm_bound: f64, delta: f64, kappa: f64 },
}

impl Default for ExplorationSchedule {
    fn default() -> Self {
        Self::Fixed(1.0)
    }
}

impl ExplorationSchedule {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Self::Fixed(beta) if beta >= 0.0 && beta.is_finite() => Ok(()),
            Self::Fixed(beta) => invalid(format!("fixed beta must be nonnegative, got {beta}")),
            Self::Theoretical { norm_bound, delta, kappa } => {
                if !(norm_bound > 0.0) || !(kappa > 0.0) {
                    return invalid("norm_bound and kappa must be positive");
                }
                if !(delta > 0.0 && delta < 1.0) {
                    return invalid(format!("delta must lie in (0, 1), got {delta}"));
                }
                Ok(())
            }
        }
    }

    /// Multiplier after `t` observations. `d_eff` is only read in theoretical
    /// mode.
    pub fn beta(&self, kind: RadiusKind, t: usize, lambda: f64, mu: f64, d_eff: f64) -> f64 {
        match *self {
            Self::Fixed(beta) => beta,
            Self::Theoretical { norm_bound, delta, kappa } => {
                theoretical_beta(kind, t, lambda, mu, norm_bound, delta, kappa, d_eff)
            }
        }
    }
}

/// Confidence radius after `t` observations.
///
/// Exact: `sqrt(lambda) B + sqrt(2 log(1/delta) + log(e + e t kappa^2 / lambda) d_eff)`.
/// Projected: `(sqrt(lambda) + sqrt(mu)) B + sqrt(4 log(1/delta) + 2 log(e + e t kappa^2 / lambda) d_eff)`.
#[allow(clippy::too_many_arguments)]
pub fn theoretical_beta(
    kind: RadiusKind,
    t: usize,
    lambda: f64,
    mu: f64,
    norm_bound: f64,
    delta: f64,
    kappa: f64,
    d_eff: f64,
) -> f64 {
    let e = std::f64::consts::E;
    let log_term = (e + e * t as f64 * kappa * kappa / lambda).ln();
    let log_delta = (1.0 / delta).ln();
    match kind {
        RadiusKind::Exact => {
            lambda.sqrt() * norm_bound + (2.0 * log_delta + log_term * d_eff).sqrt()
        }
        RadiusKind::Projected => {
            (lambda.sqrt() + mu.sqrt()) * norm_bound
                + (4.0 * log_delta + 2.0 * log_term * d_eff).sqrt()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_radius_scalar_value() {
        let e = std::f64::consts::E;
        let b = theoretical_beta(RadiusKind::Exact, 1, 1.0, 0.0, 1.0, 1.0 / e, 1.0, 1.0);
        let expected = 1.0 + (3.0 + 2f64.ln()).sqrt();
        assert!((b - expected).abs() < 1e-12);
        assert!((b - 2.9218).abs() < 1e-4);
    }

    #[test]
    fn vanishing_norm_and_unit_delta() {
        let e = std::f64::consts::E;
        for &(t, lambda, kappa, d) in &[(5usize, 2.0, 1.0, 3.0), (100, 0.1, 2.0, 0.5)] {
            let b = theoretical_beta(RadiusKind::Exact, t, lambda, 0.0, 0.0, 1.0, kappa, d);
            let log_term = (e + e * t as f64 * kappa * kappa / lambda).ln();
            assert!((b - (log_term * d).sqrt()).abs() < 1e-12);
        }
    }

    #[test]
    fn projected_dominates_exact() {
        for t in [1usize, 10, 1000] {
            for &lambda in &[0.1, 1.0, 10.0] {
                for &d in &[0.5, 5.0, 50.0] {
                    let args = (t, lambda, 0.0, 1.3, 0.01, 1.0, d);
                    let exact = theoretical_beta(RadiusKind::Exact, args.0, args.1, args.2, args.3, args.4, args.5, args.6);
                    let proj = theoretical_beta(RadiusKind::Projected, args.0, args.1, args.2, args.3, args.4, args.5, args.6);
                    assert!(proj >= exact);
                }
            }
        }
    }

    #[test]
    fn schedule_modes() {
        assert_eq!(ExplorationSchedule::default().beta(RadiusKind::Exact, 10, 1.0, 1.0, 3.0), 1.0);
        assert!(ExplorationSchedule::Fixed(-1.0).validate().is_err());
        let th = ExplorationSchedule::Theoretical { norm_bound: 1.0, delta: 0.01, kappa: 1.0 };
        assert!(th.validate().is_ok());
        assert!(th.beta(RadiusKind::Exact, 10, 1.0, 1.0, 5.0) > th.beta(RadiusKind::Exact, 10, 1.0, 1.0, 1.0));
    }
}
