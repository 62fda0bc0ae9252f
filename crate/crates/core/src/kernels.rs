//! Positive-definite kernels over joint context-action pairs.
//!
//! Every kernel consumes a [`StatePoint`], the pair `(context, action)`. The
//! Gaussian and linear families act on the concatenation of both parts; the
//! tensor-product family multiplies a context kernel with an action kernel.
//! No explicit feature map is ever built.

use nalgebra::{DMatrix, DVector};

use crate::error::{invalid, BanditError, Result};

/// A joint context-action pair `s = (x, a)`.
#[derive(Debug, Clone, PartialEq)]
pub struct StatePoint {
    context: Vec<f64>,
    action: Vec<f64>,
}

impl StatePoint {
    pub fn new(context: Vec<f64>, action: Vec<f64>) -> Result<Self> {
        if context.iter().chain(action.iter()).any(|v| !v.is_finite()) {
            return invalid("state coordinates must be finite");
        }
        Ok(Self { context, action })
    }

    pub fn context(&self) -> &[f64] {
        &self.context
    }

    pub fn action(&self) -> &[f64] {
        &self.action
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.context.len(), self.action.len())
    }

    /// Iterates over the concatenated `(context, action)` coordinates.
    pub fn coords(&self) -> impl Iterator<Item = f64> + '_ {
        self.context.iter().chain(self.action.iter()).copied()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum KernelFamily {
    /// `exp(-|u - v|^2 / (2 h^2))` on the concatenated coordinates.
    Gaussian { bandwidth: f64 },
    /// Dot product of the concatenated coordinates.
    Linear,
    /// `k_ctx(x, x') * k_act(a, a')`.
    TensorProduct {
        context: Box<KernelSpec>,
        action: Box<KernelSpec>,
    },
}

/// A kernel together with `kappa`, an upper bound on `sqrt(k(s, s))`.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelSpec {
    family: KernelFamily,
    kappa: f64,
}

impl KernelSpec {
    pub fn gaussian(bandwidth: f64) -> Result<Self> {
        if !(bandwidth > 0.0 && bandwidth.is_finite()) {
            return invalid(format!("gaussian bandwidth must be positive, got {bandwidth}"));
        }
        Ok(Self {
            family: KernelFamily::Gaussian { bandwidth },
            kappa: 1.0,
        })
    }

    /// Linear kernel. `kappa` must bound the euclidean norm of every admissible
    /// state; on the unit cube of dimension `d` that is `sqrt(d)`.
    pub fn linear(kappa: f64) -> Result<Self> {
        if !(kappa > 0.0 && kappa.is_finite()) {
            return invalid(format!("kappa must be positive, got {kappa}"));
        }
        Ok(Self {
            family: KernelFamily::Linear,
            kappa,
        })
    }

    pub fn tensor_product(context: KernelSpec, action: KernelSpec) -> Result<Self> {
        if matches!(context.family, KernelFamily::TensorProduct { .. })
            || matches!(action.family, KernelFamily::TensorProduct { .. })
        {
            return invalid("tensor-product factors must be gaussian or linear");
        }
        let kappa = context.kappa * action.kappa;
        Ok(Self {
            family: KernelFamily::TensorProduct {
                context: Box::new(context),
                action: Box::new(action),
            },
            kappa,
        })
    }

    pub fn family(&self) -> &KernelFamily {
        &self.family
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn is_linear(&self) -> bool {
        matches!(self.family, KernelFamily::Linear)
    }

    /// Evaluates `k(s, s2)`.
    pub fn eval(&self, s: &StatePoint, s2: &StatePoint) -> Result<f64> {
        if s.dims() != s2.dims() {
            return Err(BanditError::InvalidArgument(format!(
                "state dimensions differ: {:?} vs {:?}",
                s.dims(),
                s2.dims()
            )));
        }
        Ok(self.eval_unchecked(s, s2))
    }

    fn eval_unchecked(&self, s: &StatePoint, s2: &StatePoint) -> f64 {
        match &self.family {
            KernelFamily::Gaussian { bandwidth } => {
                let sq: f64 = s.coords().zip(s2.coords()).map(|(u, v)| (u - v) * (u - v)).sum();
                (-sq / (2.0 * bandwidth * bandwidth)).exp()
            }
            KernelFamily::Linear => s.coords().zip(s2.coords()).map(|(u, v)| u * v).sum(),
            KernelFamily::TensorProduct { context, action } => {
                context.eval_slices(&s.context, &s2.context)
                    * action.eval_slices(&s.action, &s2.action)
            }
        }
    }

    fn eval_slices(&self, u: &[f64], v: &[f64]) -> f64 {
        match &self.family {
            KernelFamily::Gaussian { bandwidth } => {
                let sq: f64 = u.iter().zip(v).map(|(a, b)| (a - b) * (a - b)).sum();
                (-sq / (2.0 * bandwidth * bandwidth)).exp()
            }
            KernelFamily::Linear => u.iter().zip(v).map(|(a, b)| a * b).sum(),
            // rejected by the constructor
            KernelFamily::TensorProduct { .. } => unreachable!("nested tensor product"),
        }
    }

    /// Kernel column `[k(p_1, s), ..., k(p_n, s)]`.
    pub fn column(&self, points: &[StatePoint], s: &StatePoint) -> Result<DVector<f64>> {
        check_dims(points.iter().chain(std::iter::once(s)))?;
        Ok(DVector::from_iterator(
            points.len(),
            points.iter().map(|p| self.eval_unchecked(p, s)),
        ))
    }

    /// Kernel matrix with entry `(i, j) = k(rows[i], cols[j])`.
    pub fn gram(&self, rows: &[StatePoint], cols: &[StatePoint]) -> Result<DMatrix<f64>> {
        check_dims(rows.iter().chain(cols.iter()))?;
        let symmetric = std::ptr::eq(rows, cols);
        let mut out = DMatrix::zeros(rows.len(), cols.len());
        for i in 0..rows.len() {
            let start = if symmetric { i } else { 0 };
            for j in start..cols.len() {
                let v = self.eval_unchecked(&rows[i], &cols[j]);
                out[(i, j)] = v;
                if symmetric {
                    out[(j, i)] = v;
                }
            }
        }
        Ok(out)
    }
}

fn check_dims<'a>(mut points: impl Iterator<Item = &'a StatePoint>) -> Result<()> {
    let Some(first) = points.next() else {
        return Ok(());
    };
    let dims = first.dims();
    for p in points {
        if p.dims() != dims {
            return invalid(format!(
                "state dimensions differ: {:?} vs {:?}",
                dims,
                p.dims()
            ));
        }
    }
    Ok(())
}
