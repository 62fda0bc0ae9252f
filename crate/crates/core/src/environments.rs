//! Synthetic contextual environments on the unit cube.
//!
//! Contexts are uniform on `[0,1]^p`, actions are a fixed grid of `C` points
//! on `[0,1]`, and rewards are a latent mean plus Gaussian noise. Parameter
//! draws, contexts and noise use three independent substreams of the seed.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{invalid, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EnvFamily {
    /// `max(0, 1 - |a - a*| - <w*, x - x*>)`.
    Bump,
    /// `[0,1]^2` cut into an `n x n` grid with cell values cycling over 1, 0.5, 0.
    Chessboard,
    /// Value 1 on the band `|a - x| < w`, 0.5 on `-2w < a - x <= -w`, 0 elsewhere.
    StepDiagonal,
    /// `<theta*, (x, a)>`, the only family with a finite-dimensional feature map.
    LinearSanity,
}

impl EnvFamily {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Bump => "bump",
            Self::Chessboard => "chessboard",
            Self::StepDiagonal => "step_diagonal",
            Self::LinearSanity => "linear_sanity",
        }
    }
}

impl std::str::FromStr for EnvFamily {
    type Err = crate::error::BanditError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bump" => Ok(Self::Bump),
            "chessboard" => Ok(Self::Chessboard),
            "step_diagonal" | "stepdiag" => Ok(Self::StepDiagonal),
            "linear_sanity" | "linear" => Ok(Self::LinearSanity),
            other => invalid(format!("unknown environment family '{other}'")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnvSpec {
    pub family: EnvFamily,
    pub context_dim: usize,
    /// Number of equally spaced actions on `[0, 1]`.
    pub action_grid: usize,
    pub noise_sigma: f64,
    pub seed: u64,
    /// Chessboard resolution.
    pub chessboard_cells: usize,
    /// Step-diagonal band width.
    pub band_width: f64,
}

impl EnvSpec {
    pub fn new(family: EnvFamily, seed: u64) -> Self {
        let context_dim = match family {
            EnvFamily::Bump => 5,
            EnvFamily::Chessboard | EnvFamily::StepDiagonal => 1,
            EnvFamily::LinearSanity => 2,
        };
        Self {
            family,
            context_dim,
            action_grid: 50,
            noise_sigma: 0.1,
            seed,
            chessboard_cells: 4,
            band_width: 0.1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.context_dim == 0 {
            return invalid("context_dim must be positive");
        }
        if matches!(self.family, EnvFamily::Chessboard | EnvFamily::StepDiagonal)
            && self.context_dim != 1
        {
            return invalid(format!("{} requires context_dim = 1", self.family.as_str()));
        }
        if self.action_grid < 2 {
            return invalid("action_grid must be at least 2");
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return invalid("noise_sigma must be nonnegative");
        }
        if self.chessboard_cells == 0 {
            return invalid("chessboard_cells must be positive");
        }
        if !(self.band_width > 0.0 && self.band_width < 0.5) {
            return invalid("band_width must lie in (0, 0.5)");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundOutcome {
    pub context: Vec<f64>,
    /// Largest noiseless reward over the action grid.
    pub best_value: f64,
    /// Noiseless reward of the played action.
    pub chosen_value: f64,
    /// Noisy reward revealed to the agent.
    pub reward: f64,
}

impl RoundOutcome {
    pub fn regret(&self) -> f64 {
        self.best_value - self.chosen_value
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Latent {
    Bump {
        a_star: f64,
        x_star: Vec<f64>,
        w_star: Vec<f64>,
    },
    Chessboard,
    StepDiagonal,
    Linear {
        theta: Vec<f64>,
    },
}

#[derive(Debug, Clone)]
pub struct Environment {
    spec: EnvSpec,
    actions: Vec<Vec<f64>>,
    latent: Latent,
    context_rng: ChaCha8Rng,
    noise_rng: ChaCha8Rng,
}

fn substream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

impl Environment {
    pub fn new(spec: EnvSpec) -> Result<Self> {
        spec.validate()?;
        let mut params = substream(spec.seed, 0);
        let p = spec.context_dim;
        let latent = match spec.family {
            EnvFamily::Bump => Latent::Bump {
                a_star: params.random(),
                x_star: (0..p).map(|_| params.random()).collect(),
                w_star: (0..p).map(|_| params.random_range(-0.5..0.5)).collect(),
            },
            EnvFamily::Chessboard => Latent::Chessboard,
            EnvFamily::StepDiagonal => Latent::StepDiagonal,
            EnvFamily::LinearSanity => Latent::Linear {
                theta: (0..=p).map(|_| params.random_range(-1.0..1.0)).collect(),
            },
        };
        let c = spec.action_grid;
        let actions = (0..c).map(|i| vec![i as f64 / (c - 1) as f64]).collect();
        Ok(Self {
            context_rng: substream(spec.seed, 1),
            noise_rng: substream(spec.seed, 2),
            spec,
            actions,
            latent,
        })
    }

    pub fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    pub fn action_grid(&self) -> &[Vec<f64>] {
        &self.actions
    }

    /// `(a*, x*, w*)` for the bump family.
    pub fn bump_parameters(&self) -> Option<(f64, &[f64], &[f64])> {
        match &self.latent {
            Latent::Bump { a_star, x_star, w_star } => Some((*a_star, x_star, w_star)),
            _ => None,
        }
    }

    /// `theta*` over the concatenated `(x, a)` for the linear family.
    pub fn theta_star(&self) -> Option<&[f64]> {
        match &self.latent {
            Latent::Linear { theta } => Some(theta),
            _ => None,
        }
    }

    pub fn sample_context(&mut self) -> Vec<f64> {
        (0..self.spec.context_dim)
            .map(|_| self.context_rng.random())
            .collect()
    }

    pub fn reward_mean(&self, x: &[f64], a: &[f64]) -> Result<f64> {
        if x.len() != self.spec.context_dim || a.len() != 1 {
            return invalid("context or action has the wrong dimension");
        }
        if x.iter().chain(a).any(|v| !(0.0..=1.0).contains(v)) {
            return invalid("context and action must lie in the unit cube");
        }
        let a = a[0];
        Ok(match &self.latent {
            Latent::Bump { a_star, x_star, w_star } => {
                let tilt: f64 = w_star
                    .iter()
                    .zip(x.iter().zip(x_star))
                    .map(|(w, (xi, xs))| w * (xi - xs))
                    .sum();
                (1.0 - (a - a_star).abs() - tilt).max(0.0)
            }
            Latent::Chessboard => {
                let n = self.spec.chessboard_cells;
                let cell = |v: f64| ((v * n as f64) as usize).min(n - 1);
                [1.0, 0.5, 0.0][(cell(x[0]) + cell(a)) % 3]
            }
            Latent::StepDiagonal => {
                let w = self.spec.band_width;
                let d = a - x[0];
                if d.abs() < w {
                    1.0
                } else if d > -2.0 * w && d <= -w {
                    0.5
                } else {
                    0.0
                }
            }
            Latent::Linear { theta } => {
                theta.iter().zip(x.iter().chain(std::iter::once(&a))).map(|(t, v)| t * v).sum()
            }
        })
    }

    pub fn best_value(&self, x: &[f64]) -> Result<f64> {
        let mut best = f64::NEG_INFINITY;
        for a in &self.actions {
            best = best.max(self.reward_mean(x, a)?);
        }
        Ok(best)
    }

    /// Plays grid action `action` in context `x`.
    pub fn step(&mut self, x: &[f64], action: usize) -> Result<RoundOutcome> {
        let Some(a) = self.actions.get(action) else {
            return invalid(format!("action index {action} outside the grid"));
        };
        let chosen_value = self.reward_mean(x, a)?;
        let best_value = self.best_value(x)?;
        let noise = if self.spec.noise_sigma > 0.0 {
            Normal::new(0.0, self.spec.noise_sigma)
                .expect("validated sigma")
                .sample(&mut self.noise_rng)
        } else {
            0.0
        };
        Ok(RoundOutcome {
            context: x.to_vec(),
            best_value,
            chosen_value,
            reward: chosen_value + noise,
        })
    }
}
