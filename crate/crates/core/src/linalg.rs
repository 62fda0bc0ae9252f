//! Incremental maintenance of inverses of symmetric positive-definite matrices.
//!
//! [`SpdInverse`] holds `M^-1` and grows or changes it without refactoring:
//! rank-one Sherman-Morrison updates for `M + u v^T` and Schur-complement
//! bordering for `[[M, b], [b^T, c]]`. [`dense_spd_inverse`] is the
//! factorization route used as a fallback and as the test oracle.

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::error::{invalid, BanditError, Result};

/// Denominators and Schur complements at or below this magnitude are singular.
pub const SINGULAR_TOL: f64 = 1e-12;

/// Relative diagonal jitter, scaled by `kappa^2`, used for one retry after a
/// singular extension or factorization.
pub const JITTER: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct SpdInverse {
    inverse: DMatrix<f64>,
}

impl Default for SpdInverse {
    fn default() -> Self {
        Self::empty()
    }
}

impl SpdInverse {
    /// The inverse of a 0x0 matrix.
    pub fn empty() -> Self {
        Self {
            inverse: DMatrix::zeros(0, 0),
        }
    }

    /// Wraps an already-computed symmetric inverse.
    pub fn from_inverse(inverse: DMatrix<f64>) -> Result<Self> {
        if !inverse.is_square() {
            return invalid("inverse must be square");
        }
        let mut out = Self { inverse };
        out.symmetrize();
        Ok(out)
    }

    pub fn dim(&self) -> usize {
        self.inverse.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.inverse
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.inverse
    }

    /// `M^-1 x`.
    pub fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.inverse * x
    }

    /// `x^T M^-1 x`.
    pub fn quad_form(&self, x: &DVector<f64>) -> f64 {
        x.dot(&(&self.inverse * x))
    }

    fn check_len(&self, v: &DVector<f64>, what: &str) -> Result<()> {
        if v.len() != self.dim() {
            return invalid(format!(
                "{what} has length {}, expected {}",
                v.len(),
                self.dim()
            ));
        }
        Ok(())
    }

    fn symmetrize(&mut self) {
        let n = self.dim();
        for j in 0..n {
            for i in (j + 1)..n {
                let avg = 0.5 * (self.inverse[(i, j)] + self.inverse[(j, i)]);
                self.inverse[(i, j)] = avg;
                self.inverse[(j, i)] = avg;
            }
        }
    }

    /// Replaces `M^-1` by `(M + u v^T)^-1`.
    ///
    /// The result is symmetrized when `u == v`; a non-symmetric update is
    /// applied as-is.
    pub fn sherman_morrison_update(&mut self, u: &DVector<f64>, v: &DVector<f64>) -> Result<()> {
        self.check_len(u, "u")?;
        self.check_len(v, "v")?;
        let inv_u = &self.inverse * u;
        let inv_t_v = self.inverse.tr_mul(v);
        let denom = 1.0 + v.dot(&inv_u);
        if denom.abs() < SINGULAR_TOL {
            return Err(BanditError::SingularUpdate(denom));
        }
        self.inverse.ger(-1.0 / denom, &inv_u, &inv_t_v, 1.0);
        if u == v {
            self.symmetrize();
        }
        Ok(())
    }

    /// Symmetric rank-one update `M + u u^T`.
    pub fn rank_one_update(&mut self, u: &DVector<f64>) -> Result<()> {
        self.sherman_morrison_update(u, u)
    }

    /// Borders `M` with column `b` and corner `c`, so that the held inverse
    /// becomes the inverse of `[[M, b], [b^T, c]]`.
    pub fn schur_extend(&mut self, b: &DVector<f64>, c: f64) -> Result<()> {
        self.check_len(b, "b")?;
        let w = &self.inverse * b;
        let schur = c - b.dot(&w);
        self.extend_with(&w, schur)
    }

    /// Bordering from precomputed parts: `w = M^-1 b` and the Schur
    /// complement `c - b^T M^-1 b`. For callers that can evaluate either more
    /// accurately than the generic product.
    pub fn extend_with(&mut self, w: &DVector<f64>, schur: f64) -> Result<()> {
        self.check_len(w, "w")?;
        if !(schur > SINGULAR_TOL) {
            return Err(BanditError::NearSingularExtension(schur));
        }
        let n = self.dim();
        let inv_s = 1.0 / schur;
        let mut out = DMatrix::zeros(n + 1, n + 1);
        {
            let mut top = out.view_mut((0, 0), (n, n));
            top.copy_from(&self.inverse);
            top.ger(inv_s, w, w, 1.0);
        }
        for i in 0..n {
            out[(i, n)] = -inv_s * w[i];
            out[(n, i)] = -inv_s * w[i];
        }
        out[(n, n)] = inv_s;
        self.inverse = out;
        self.symmetrize();
        Ok(())
    }

    /// [`schur_extend`](Self::schur_extend) with a single retry at `c + jitter`.
    /// Returns whether the jitter was needed.
    pub fn schur_extend_jittered(&mut self, b: &DVector<f64>, c: f64, jitter: f64) -> Result<bool> {
        match self.schur_extend(b, c) {
            Ok(()) => Ok(false),
            Err(BanditError::NearSingularExtension(_)) => {
                self.schur_extend(b, c + jitter)?;
                Ok(true)
            }
            Err(e) => Err(e),
        }
    }
}

/// Cholesky-based inverse of a symmetric positive-definite matrix, retried
/// once with `jitter` added to the diagonal.
pub fn dense_spd_inverse(m: &DMatrix<f64>, jitter: f64) -> Result<SpdInverse> {
    if !m.is_square() {
        return invalid("matrix must be square");
    }
    if m.nrows() == 0 {
        return Ok(SpdInverse::empty());
    }
    let chol = Cholesky::new(m.clone()).or_else(|| {
        let mut jittered = m.clone();
        for i in 0..m.nrows() {
            jittered[(i, i)] += jitter;
        }
        Cholesky::new(jittered)
    });
    match chol {
        Some(c) => SpdInverse::from_inverse(c.inverse()),
        None => Err(BanditError::Factorization),
    }
}

/// `(1/lambda) det(K_new + lambda I) / det(K_prev + lambda I)` where `k_new`
/// borders `k_prev` by one row and column. Computed from the Schur complement
/// of the new corner.
pub fn det_ratio(k_prev: &DMatrix<f64>, k_new: &DMatrix<f64>, lambda: f64) -> Result<f64> {
    let n = k_prev.nrows();
    if !k_prev.is_square() || !k_new.is_square() || k_new.nrows() != n + 1 {
        return invalid(format!(
            "k_new ({}x{}) must border k_prev ({}x{}) by one row and column",
            k_new.nrows(),
            k_new.ncols(),
            k_prev.nrows(),
            k_prev.ncols()
        ));
    }
    if !(lambda > 0.0) {
        return invalid("lambda must be positive");
    }
    let top = k_new.view((0, 0), (n, n));
    if top
        .iter()
        .zip(k_prev.iter())
        .any(|(a, b)| (a - b).abs() > 1e-9 * b.abs().max(1.0))
    {
        return invalid("leading block of k_new differs from k_prev");
    }
    let b: DVector<f64> = k_new.view((0, n), (n, 1)).column(0).into_owned();
    let c = k_new[(n, n)];
    let reduction = if n == 0 {
        0.0
    } else {
        let mut shifted = k_prev.clone();
        for i in 0..n {
            shifted[(i, i)] += lambda;
        }
        let chol = Cholesky::new(shifted).ok_or(BanditError::Factorization)?;
        b.dot(&chol.solve(&b))
    };
    Ok((c + lambda - reduction) / lambda)
}
