//! Bandit agents over joint context-action kernels.
//!
//! Every agent implements [`Policy`]: `choose` scores each candidate action
//! for the revealed context, `update` folds the observed state and reward
//! into the agent's statistics.

mod cbbkb;
mod ekucb;
mod exploration;
mod kucb;
mod random;

pub use cbbkb::{CbbKb, CbbkbParams};
pub use ekucb::{EkUcb, EkUcbDense};
pub use exploration::{theoretical_beta, ExplorationSchedule, RadiusKind};
pub use kucb::KUcb;
pub use random::RandomPolicy;

use nalgebra::DMatrix;

use crate::dictionary::Dictionary;
use crate::error::{invalid, BanditError, Result};
use crate::kernels::{KernelSpec, StatePoint};

/// Variances below this are treated as drift rather than round-off.
pub const VARIANCE_HARD_FLOOR: f64 = -1e-6;

pub trait Policy: Send {
    fn name(&self) -> &'static str;

    /// Index of the action to play for `context`.
    fn choose(&mut self, context: &[f64], actions: &[Vec<f64>]) -> Result<usize>;

    fn update(&mut self, state: StatePoint, reward: f64) -> Result<()>;

    /// Number of anchors currently used by the model, 0 for exact policies.
    fn dictionary_size(&self) -> usize {
        0
    }

    fn dictionary(&self) -> Option<&Dictionary> {
        None
    }
}

/// Posterior mean and squared confidence width of one candidate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Score {
    pub mean: f64,
    pub variance: f64,
}

impl Score {
    pub fn ucb(&self, beta: f64) -> f64 {
        self.mean + beta * self.variance.sqrt()
    }
}

/// Argmax of `mean + beta * sqrt(variance)`, ties to the lowest index.
pub fn argmax_ucb(scores: &[Score], beta: f64) -> Result<usize> {
    if scores.is_empty() {
        return invalid("empty action set");
    }
    let mut best = 0;
    let mut best_value = scores[0].ucb(beta);
    for (i, s) in scores.iter().enumerate().skip(1) {
        let v = s.ucb(beta);
        if v > best_value {
            best = i;
            best_value = v;
        }
    }
    Ok(best)
}

pub(crate) fn candidate_states(context: &[f64], actions: &[Vec<f64>]) -> Result<Vec<StatePoint>> {
    if actions.is_empty() {
        return invalid("empty action set");
    }
    actions
        .iter()
        .map(|a| StatePoint::new(context.to_vec(), a.clone()))
        .collect()
}

/// Applies the negative-variance policy: round-off is clamped to 0, anything
/// below [`VARIANCE_HARD_FLOOR`] is reported.
pub(crate) fn clamp_variance(v: f64) -> Result<f64> {
    if v < VARIANCE_HARD_FLOOR {
        return Err(BanditError::NumericalInconsistency(format!(
            "negative variance {v:e}"
        )));
    }
    Ok(v.max(0.0))
}

/// Columns `K_P(s)` for every candidate, as a `|points| x |candidates|` matrix.
pub(crate) fn cross_gram(
    spec: &KernelSpec,
    points: &[StatePoint],
    candidates: &[StatePoint],
) -> Result<DMatrix<f64>> {
    spec.gram(points, candidates)
}

pub(crate) fn check_lambda(lambda: f64) -> Result<()> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return invalid(format!("lambda must be positive, got {lambda}"));
    }
    Ok(())
}
