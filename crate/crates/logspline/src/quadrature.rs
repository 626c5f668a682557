//! Deterministic numerical integration on `[0, 1]`.
//!
//! Integration is by composite Gauss-Legendre rules over a knot partition,
//! which is exact for piecewise polynomials of degree `< 2 * order` on that
//! partition and converges spectrally for functions that are smooth per
//! segment. Inverse-CDF tables support sampling from densities on `[0, 1]`.

use crate::error::{Error, Result};

/// Default nodes per segment for rules built by convenience constructors.
pub const DEFAULT_ORDER: usize = 8;

/// Tolerance on `sum(weights) == 1` checked at construction.
pub const WEIGHT_SUM_TOL: f64 = 1e-12;

/// Tolerance on density normalization checked by [`InverseCdfTable::build`].
pub const NORMALIZATION_TOL: f64 = 1e-6;

/// Default grid size for inverse-CDF tables.
pub const DEFAULT_CDF_GRID: usize = 4096;

/// Gauss-Legendre nodes and weights on `[-1, 1]`.
///
/// Nodes are the roots of the Legendre polynomial `P_n`, found by Newton
/// iteration from the Chebyshev initial guess.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        // Chebyshev-based initial guess for the i-th root.
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            // Evaluate P_n and its derivative by the three-term recurrence.
            let mut p0 = 1.0;
            let mut p1 = x;
            for k in 2..=n {
                let kf = k as f64;
                let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
                p0 = p1;
                p1 = p2;
            }
            let p = if n == 1 { x } else { p1 };
            dp = n as f64 * (x * p - p0) / (x * x - 1.0);
            let dx = p / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    (nodes, weights)
}

/// A composite quadrature rule over a partition of `[0, 1]`.
///
/// Weights sum to 1, so the rule integrates the constant function exactly;
/// nodes lie strictly inside segment interiors.
#[derive(Debug, Clone)]
pub struct QuadratureRule {
    nodes: Vec<f64>,
    weights: Vec<f64>,
    segments: Vec<(f64, f64)>,
}

impl QuadratureRule {
    /// Composite Gauss-Legendre rule with `order` nodes per knot interval.
    ///
    /// `knots` must start at 0, end at 1 and be strictly increasing;
    /// `order >= 2`.
    pub fn composite(knots: &[f64], order: usize) -> Result<Self> {
        if order < 2 {
            return Err(Error::InvalidInput(format!(
                "quadrature order must be >= 2, got {order}"
            )));
        }
        if knots.len() < 2 || knots[0] != 0.0 || *knots.last().unwrap() != 1.0 {
            return Err(Error::InvalidInput(
                "knots must start at 0 and end at 1".into(),
            ));
        }
        for w in knots.windows(2) {
            if w[1] <= w[0] {
                return Err(Error::InvalidInput(format!(
                    "knots must be strictly increasing, got {} then {}",
                    w[0], w[1]
                )));
            }
        }
        let (gn, gw) = gauss_legendre(order);
        let mut nodes = Vec::with_capacity(order * (knots.len() - 1));
        let mut weights = Vec::with_capacity(order * (knots.len() - 1));
        let mut segments = Vec::with_capacity(knots.len() - 1);
        for seg in knots.windows(2) {
            let (a, b) = (seg[0], seg[1]);
            segments.push((a, b));
            let half = 0.5 * (b - a);
            let mid = 0.5 * (a + b);
            for (&x, &w) in gn.iter().zip(&gw) {
                nodes.push(mid + half * x);
                weights.push(half * w);
            }
        }
        let sum: f64 = weights.iter().sum();
        debug_assert!((sum - 1.0).abs() < WEIGHT_SUM_TOL);
        Ok(Self {
            nodes,
            weights,
            segments,
        })
    }

    /// Rule over the uniform partition of `[0, 1]` into `k` intervals.
    pub fn uniform(k: usize, order: usize) -> Result<Self> {
        let knots: Vec<f64> = (0..=k).map(|i| i as f64 / k as f64).collect();
        Self::composite(&knots, order)
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn segments(&self) -> &[(f64, f64)] {
        &self.segments
    }

    /// `sum_i w_i f(x_i)`. Errors if `f` is non-finite at any node.
    pub fn integrate(&self, mut f: impl FnMut(f64) -> f64) -> Result<f64> {
        let mut acc = 0.0;
        for (&x, &w) in self.nodes.iter().zip(&self.weights) {
            let v = f(x);
            if !v.is_finite() {
                return Err(Error::NumericDomain(format!(
                    "integrand is {v} at node x = {x}"
                )));
            }
            acc += w * v;
        }
        Ok(acc)
    }

    /// Integrate precomputed node values (same order as [`Self::nodes`]).
    pub fn integrate_values(&self, values: &[f64]) -> f64 {
        self.weights
            .iter()
            .zip(values)
            .map(|(w, v)| w * v)
            .sum()
    }
}

/// Tabulated CDF on a uniform grid with monotone piecewise-linear inversion.
#[derive(Debug, Clone)]
pub struct InverseCdfTable {
    grid: Vec<f64>,
    cdf: Vec<f64>,
}

impl InverseCdfTable {
    /// Build the table by integrating `density` over each grid cell with a
    /// small per-cell Gauss rule.
    ///
    /// The density must be nonnegative on the grid and integrate to 1 within
    /// [`NORMALIZATION_TOL`] under `rule`.
    pub fn build(
        density: impl Fn(f64) -> f64,
        rule: &QuadratureRule,
        grid_size: usize,
    ) -> Result<Self> {
        if grid_size < 2 {
            return Err(Error::InvalidInput(format!(
                "grid_size must be >= 2, got {grid_size}"
            )));
        }
        let total = rule.integrate(&density)?;
        if (total - 1.0).abs() > NORMALIZATION_TOL {
            return Err(Error::InvalidInput(format!(
                "density integrates to {total}, not 1 within {NORMALIZATION_TOL}"
            )));
        }
        let grid: Vec<f64> = (0..=grid_size)
            .map(|i| i as f64 / grid_size as f64)
            .collect();
        for &x in &grid {
            if density(x) < 0.0 {
                return Err(Error::InvalidInput(format!(
                    "density is negative at grid point {x}"
                )));
            }
        }
        let (gn, gw) = gauss_legendre(5);
        let mut cdf = Vec::with_capacity(grid_size + 1);
        cdf.push(0.0);
        let mut acc = 0.0;
        for cell in grid.windows(2) {
            let (a, b) = (cell[0], cell[1]);
            let half = 0.5 * (b - a);
            let mid = 0.5 * (a + b);
            let mut cell_mass = 0.0;
            for (&x, &w) in gn.iter().zip(&gw) {
                cell_mass += half * w * density(mid + half * x);
            }
            acc += cell_mass.max(0.0);
            cdf.push(acc);
        }
        // Rescale so the endpoints are exact.
        let last = *cdf.last().unwrap();
        if last <= 0.0 {
            return Err(Error::NumericDomain("density has zero total mass".into()));
        }
        for c in cdf.iter_mut() {
            *c /= last;
        }
        *cdf.last_mut().unwrap() = 1.0;
        Ok(Self { grid, cdf })
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn cdf_values(&self) -> &[f64] {
        &self.cdf
    }

    /// CDF at `x` by linear interpolation of the table.
    pub fn cdf(&self, x: f64) -> f64 {
        let x = x.clamp(0.0, 1.0);
        let n = self.grid.len() - 1;
        let pos = x * n as f64;
        let i = (pos.floor() as usize).min(n - 1);
        let frac = pos - i as f64;
        self.cdf[i] + frac * (self.cdf[i + 1] - self.cdf[i])
    }

    /// Inverse CDF at `u` by monotone piecewise-linear interpolation.
    pub fn quantile(&self, u: f64) -> f64 {
        let u = u.clamp(0.0, 1.0);
        // Binary search for the bracketing cell.
        let mut lo = 0usize;
        let mut hi = self.cdf.len() - 1;
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            if self.cdf[mid] <= u {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let (c0, c1) = (self.cdf[lo], self.cdf[hi]);
        if c1 <= c0 {
            return self.grid[lo];
        }
        let frac = (u - c0) / (c1 - c0);
        self.grid[lo] + frac * (self.grid[hi] - self.grid[lo])
    }
}
