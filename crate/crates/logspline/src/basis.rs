//! B-spline basis construction, evaluation and sup-norm approximation.
//!
//! The basis of order `q` over the uniform partition of `[0, 1)` into `K`
//! intervals spans the `J = q + K - 1`-dimensional spline space. Evaluation
//! uses the stable triangular recursion on a clamped knot vector (boundary
//! knots repeated `q` times), which yields the standard properties:
//! nonnegativity, partition of unity, support of length `q/K` and at most
//! `q` nonzero functions at any point.

use crate::error::{Error, Result};
use nalgebra::{DMatrix, DVector};

/// A B-spline basis over the uniform partition of `[0, 1)`.
#[derive(Debug, Clone)]
pub struct SplineBasis {
    q: usize,
    k: usize,
    j: usize,
    /// Clamped knot vector of length `J + q`.
    knots: Vec<f64>,
}

impl SplineBasis {
    /// Basis of order `q` (degree `q - 1`) at resolution `K`.
    pub fn new(q: usize, k: usize) -> Result<Self> {
        if q == 0 || k == 0 {
            return Err(Error::InvalidInput(format!(
                "spline order and resolution must be positive, got q = {q}, K = {k}"
            )));
        }
        let j = q + k - 1;
        let mut knots = Vec::with_capacity(j + q);
        knots.extend(std::iter::repeat(0.0).take(q));
        knots.extend((1..k).map(|i| i as f64 / k as f64));
        knots.extend(std::iter::repeat(1.0).take(q));
        Ok(Self { q, k, j, knots })
    }

    pub fn order(&self) -> usize {
        self.q
    }

    pub fn resolution(&self) -> usize {
        self.k
    }

    /// Dimension `J = q + K - 1`.
    pub fn dim(&self) -> usize {
        self.j
    }

    /// Partition points `0, 1/K, ..., 1` (the segment boundaries).
    pub fn partition(&self) -> Vec<f64> {
        (0..=self.k).map(|i| i as f64 / self.k as f64).collect()
    }

    /// Index of the knot span containing `x`; `x = 1` maps to the last span.
    fn span(&self, x: f64) -> usize {
        let cell = ((x * self.k as f64).floor() as usize).min(self.k - 1);
        self.q - 1 + cell
    }

    /// Values of the `q` basis functions that are nonzero at `x`, together
    /// with the index of the first of them.
    ///
    /// `x` must lie in `[0, 1]`.
    pub fn eval_nonzero(&self, x: f64) -> Result<(usize, Vec<f64>)> {
        if !(0.0..=1.0).contains(&x) {
            return Err(Error::InvalidInput(format!(
                "evaluation point {x} outside [0, 1]"
            )));
        }
        let span = self.span(x);
        let q = self.q;
        let mut vals = vec![0.0; q];
        vals[0] = 1.0;
        let mut left = vec![0.0; q];
        let mut right = vec![0.0; q];
        for d in 1..q {
            left[d] = x - self.knots[span + 1 - d];
            right[d] = self.knots[span + d] - x;
            let mut saved = 0.0;
            for r in 0..d {
                let denom = right[r + 1] + left[d - r];
                let temp = if denom == 0.0 { 0.0 } else { vals[r] / denom };
                vals[r] = saved + right[r + 1] * temp;
                saved = left[d - r] * temp;
            }
            vals[d] = saved;
        }
        Ok((span + 1 - q, vals))
    }

    /// Full length-`J` vector of basis values at `x`.
    pub fn eval(&self, x: f64) -> Result<Vec<f64>> {
        let (first, vals) = self.eval_nonzero(x)?;
        let mut out = vec![0.0; self.j];
        out[first..first + self.q].copy_from_slice(&vals);
        Ok(out)
    }

    /// `theta' B_J(x)` without materializing the full vector.
    pub fn combine(&self, theta: &[f64], x: f64) -> Result<f64> {
        let (first, vals) = self.eval_nonzero(x)?;
        Ok(vals
            .iter()
            .enumerate()
            .map(|(i, v)| v * theta[first + i])
            .sum())
    }

    /// Design matrix of basis values at the given points (rows = points).
    pub fn design_matrix(&self, points: &[f64]) -> Result<DMatrix<f64>> {
        let mut a = DMatrix::zeros(points.len(), self.j);
        for (row, &x) in points.iter().enumerate() {
            let (first, vals) = self.eval_nonzero(x)?;
            for (i, &v) in vals.iter().enumerate() {
                a[(row, first + i)] = v;
            }
        }
        Ok(a)
    }
}

/// `theta` minus its mean; the result satisfies `theta' 1 = 0`.
///
/// Because the basis is a partition of unity, adding a constant to every
/// coefficient shifts `theta' B_J` by that constant, which the normalized
/// density absorbs, so centering leaves the model density unchanged.
pub fn centered(theta: &[f64]) -> Vec<f64> {
    let mean = theta.iter().sum::<f64>() / theta.len() as f64;
    theta.iter().map(|t| t - mean).collect()
}

/// Result of a sup-norm surrogate fit.
#[derive(Debug, Clone)]
pub struct SupNormFit {
    pub theta: Vec<f64>,
    /// Achieved maximum absolute deviation on the fitting grid.
    pub sup_error: f64,
    pub iterations: usize,
}

/// Convergence threshold on the max-error change in [`fit_supnorm`].
pub const FIT_TOL: f64 = 1e-8;
const FIT_MAX_ITER: usize = 100;

/// Approximately minimize `max_i |theta' B_J(x_i) - f(x_i)|` over a uniform
/// grid by Lawson's iteratively reweighted least squares.
///
/// The achieved error upper-bounds the true sup-norm infimum over the spline
/// space, which is the direction every downstream bound needs.
pub fn fit_supnorm(
    basis: &SplineBasis,
    f: impl Fn(f64) -> f64,
    grid_size: usize,
) -> Result<SupNormFit> {
    let j = basis.dim();
    if grid_size < j {
        return Err(Error::InvalidInput(format!(
            "grid_size {grid_size} smaller than basis dimension {j}"
        )));
    }
    let points: Vec<f64> = (0..grid_size)
        .map(|i| i as f64 / (grid_size - 1) as f64)
        .collect();
    let a = basis.design_matrix(&points)?;
    let target: Vec<f64> = points.iter().map(|&x| f(x)).collect();
    for (&x, &t) in points.iter().zip(&target) {
        if !t.is_finite() {
            return Err(Error::NumericDomain(format!(
                "target function is {t} at x = {x}"
            )));
        }
    }

    let n = points.len();
    let mut w = vec![1.0 / n as f64; n];
    let mut best: Option<SupNormFit> = None;
    let mut prev_max = f64::INFINITY;
    for iter in 0..FIT_MAX_ITER {
        // Weighted least squares: (A' W A) theta = A' W f.
        let mut ata = DMatrix::zeros(j, j);
        let mut atf = DVector::zeros(j);
        for row in 0..n {
            let wr = w[row];
            if wr == 0.0 {
                continue;
            }
            for c1 in 0..j {
                let v1 = a[(row, c1)];
                if v1 == 0.0 {
                    continue;
                }
                atf[c1] += wr * v1 * target[row];
                for c2 in c1..j {
                    ata[(c1, c2)] += wr * v1 * a[(row, c2)];
                }
            }
        }
        for c1 in 0..j {
            for c2 in 0..c1 {
                ata[(c1, c2)] = ata[(c2, c1)];
            }
        }
        // Tiny ridge keeps the system well posed when weights concentrate.
        for c in 0..j {
            ata[(c, c)] += 1e-12;
        }
        let theta = match ata.clone().cholesky() {
            Some(ch) => ch.solve(&atf),
            None => ata
                .svd(true, true)
                .solve(&atf, 1e-12)
                .map_err(|e| Error::NumericDomain(format!("least-squares solve failed: {e}")))?,
        };

        let mut max_err = 0.0f64;
        let mut resid = vec![0.0; n];
        for row in 0..n {
            let mut pred = 0.0;
            for c in 0..j {
                pred += a[(row, c)] * theta[c];
            }
            let e = (pred - target[row]).abs();
            resid[row] = e;
            max_err = max_err.max(e);
        }
        if best.as_ref().map_or(true, |b| max_err < b.sup_error) {
            best = Some(SupNormFit {
                theta: theta.iter().cloned().collect(),
                sup_error: max_err,
                iterations: iter + 1,
            });
        }
        if (prev_max - max_err).abs() < FIT_TOL {
            break;
        }
        prev_max = max_err;
        // Lawson update: reweight by residual magnitude.
        let mut total = 0.0;
        for row in 0..n {
            w[row] *= resid[row].max(1e-300);
            total += w[row];
        }
        for wr in w.iter_mut() {
            *wr /= total;
        }
    }
    Ok(best.expect("at least one iteration ran"))
}
