//! The exponential-family log-spline density `p(x) = exp(theta' B_J(x) - c(theta))`
//! with its normalizer, sampling, statistical distances and Hellinger
//! projection of a target density onto the model.

use crate::basis::{centered, fit_supnorm, SplineBasis};
use crate::error::{Error, Result};
use crate::quadrature::{InverseCdfTable, QuadratureRule, DEFAULT_CDF_GRID};
use rand::Rng;
use std::sync::{Arc, OnceLock};

/// Per-segment Gauss order of the model's default knot-aligned rule; higher
/// than the quadrature-module default because the normalizer examples are
/// held to 1e-9 against slow Riemann oracles.
pub const MODEL_ORDER: usize = 12;

/// Tolerance on normalization of model densities.
pub const NORMALIZATION_TOL: f64 = 1e-8;

/// Tolerance on normalization of inputs to distance computations.
pub const DISTANCE_INPUT_TOL: f64 = 1e-6;

/// Densities are clamped below at this value before taking logarithms;
/// clamping raises a numeric-domain error instead of saturating silently.
pub const LOG_CLAMP: f64 = 1e-300;

/// Cached per-node basis evaluations for fast repeated normalizer and
/// expectation computations with a fixed basis and rule.
#[derive(Debug, Clone)]
pub struct NormalizerCache {
    rule: QuadratureRule,
    /// Per node: (first nonzero index, the q nonzero basis values).
    node_basis: Vec<(usize, Vec<f64>)>,
    dim: usize,
}

impl NormalizerCache {
    pub fn new(basis: &SplineBasis, rule: QuadratureRule) -> Result<Self> {
        let node_basis = rule
            .nodes()
            .iter()
            .map(|&x| basis.eval_nonzero(x))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            rule,
            node_basis,
            dim: basis.dim(),
        })
    }

    pub fn rule(&self) -> &QuadratureRule {
        &self.rule
    }

    fn linear_at_nodes(&self, theta: &[f64]) -> Vec<f64> {
        self.node_basis
            .iter()
            .map(|(first, vals)| {
                vals.iter()
                    .enumerate()
                    .map(|(i, v)| v * theta[first + i])
                    .sum()
            })
            .collect()
    }

    /// `c(theta) = log integral exp(theta' B_J)`, guarded against overflow by
    /// max-subtraction.
    pub fn normalizer(&self, theta: &[f64]) -> Result<f64> {
        if theta.len() != self.dim {
            return Err(Error::InvalidInput(format!(
                "coefficient length {} does not match dimension {}",
                theta.len(),
                self.dim
            )));
        }
        if theta.iter().any(|t| !t.is_finite()) {
            return Err(Error::InvalidInput("non-finite coefficient".into()));
        }
        let t = self.linear_at_nodes(theta);
        let m = t.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut acc = 0.0;
        for (v, w) in t.iter().zip(self.rule.weights()) {
            acc += w * (v - m).exp();
        }
        Ok(m + acc.ln())
    }

    /// Expectation of the basis vector under `p(theta)`, and the normalizer.
    pub fn basis_expectation(&self, theta: &[f64]) -> Result<(Vec<f64>, f64)> {
        let t = self.linear_at_nodes(theta);
        let m = t.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        let mut mean = vec![0.0; self.dim];
        for (((v, w), (first, vals)), _) in t
            .iter()
            .zip(self.rule.weights())
            .zip(&self.node_basis)
            .zip(0..)
        {
            let e = w * (v - m).exp();
            z += e;
            for (i, b) in vals.iter().enumerate() {
                mean[first + i] += e * b;
            }
        }
        for v in mean.iter_mut() {
            *v /= z;
        }
        Ok((mean, m + z.ln()))
    }

    /// Diagonal of the covariance of the basis vector under `p(theta)`.
    pub fn basis_variance_diag(&self, theta: &[f64]) -> Result<Vec<f64>> {
        let t = self.linear_at_nodes(theta);
        let m = t.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        let mut mean = vec![0.0; self.dim];
        let mut second = vec![0.0; self.dim];
        for ((v, w), (first, vals)) in t.iter().zip(self.rule.weights()).zip(&self.node_basis) {
            let e = w * (v - m).exp();
            z += e;
            for (i, b) in vals.iter().enumerate() {
                mean[first + i] += e * b;
                second[first + i] += e * b * b;
            }
        }
        Ok(mean
            .iter()
            .zip(&second)
            .map(|(mu, s2)| (s2 / z - (mu / z) * (mu / z)).max(0.0))
            .collect())
    }
}

/// `c(theta)` for a basis using its default knot-aligned rule.
pub fn normalizer(basis: &SplineBasis, theta: &[f64]) -> Result<f64> {
    let rule = QuadratureRule::composite(&basis.partition(), MODEL_ORDER)?;
    NormalizerCache::new(basis, rule)?.normalizer(theta)
}

/// A normalized log-spline density with centered coefficients.
#[derive(Debug, Clone)]
pub struct LogSplineModel {
    basis: Arc<SplineBasis>,
    theta: Vec<f64>,
    c: f64,
    rule: QuadratureRule,
    sampler: Arc<OnceLock<InverseCdfTable>>,
}

impl LogSplineModel {
    /// Build the model for `theta`; coefficients are centered so that
    /// `theta' 1 = 0` (the density is invariant to this shift).
    pub fn new(basis: Arc<SplineBasis>, theta: &[f64]) -> Result<Self> {
        let rule = QuadratureRule::composite(&basis.partition(), MODEL_ORDER)?;
        Self::with_rule(basis, theta, rule)
    }

    pub fn with_rule(
        basis: Arc<SplineBasis>,
        theta: &[f64],
        rule: QuadratureRule,
    ) -> Result<Self> {
        if theta.len() != basis.dim() {
            return Err(Error::InvalidInput(format!(
                "coefficient length {} does not match basis dimension {}",
                theta.len(),
                basis.dim()
            )));
        }
        let theta = centered(theta);
        let cache = NormalizerCache::new(&basis, rule.clone())?;
        let c = cache.normalizer(&theta)?;
        Ok(Self {
            basis,
            theta,
            c,
            rule,
            sampler: Arc::new(OnceLock::new()),
        })
    }

    pub fn basis(&self) -> &SplineBasis {
        &self.basis
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn normalizer_value(&self) -> f64 {
        self.c
    }

    pub fn rule(&self) -> &QuadratureRule {
        &self.rule
    }

    pub fn log_density(&self, x: f64) -> Result<f64> {
        Ok(self.basis.combine(&self.theta, x)? - self.c)
    }

    /// `p(x) = exp(theta' B_J(x) - c(theta))`.
    pub fn density(&self, x: f64) -> Result<f64> {
        Ok(self.log_density(x)?.exp())
    }

    fn table(&self) -> Result<&InverseCdfTable> {
        if let Some(t) = self.sampler.get() {
            return Ok(t);
        }
        let t = InverseCdfTable::build(
            |x| self.density(x).unwrap_or(f64::NAN),
            &self.rule,
            DEFAULT_CDF_GRID,
        )?;
        Ok(self.sampler.get_or_init(|| t))
    }

    /// `n` i.i.d. draws via the inverse-CDF table; deterministic given the
    /// state of `rng`.
    pub fn sample(&self, rng: &mut impl Rng, n: usize) -> Result<Vec<f64>> {
        let table = self.table()?;
        Ok((0..n).map(|_| table.quantile(rng.gen::<f64>())).collect())
    }

    /// CDF of the model at `x` (from the sampling table).
    pub fn cdf(&self, x: f64) -> Result<f64> {
        Ok(self.table()?.cdf(x))
    }
}

/// A known data-generating density on `[0, 1]`.
#[derive(Clone)]
pub struct TrueDensity {
    eval: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
    pub nominal_smoothness: Option<f64>,
    /// Bound on `||log p0||_inf`.
    pub sup_log_norm: f64,
}

impl std::fmt::Debug for TrueDensity {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("TrueDensity")
            .field("nominal_smoothness", &self.nominal_smoothness)
            .field("sup_log_norm", &self.sup_log_norm)
            .finish()
    }
}

impl TrueDensity {
    /// Wrap an already-normalized positive density.
    pub fn new(
        eval: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
        nominal_smoothness: Option<f64>,
        sup_log_norm: f64,
    ) -> Self {
        Self {
            eval,
            nominal_smoothness,
            sup_log_norm,
        }
    }

    /// Normalize `f > 0` against `rule` and record the resulting sup-log norm
    /// on a dense grid.
    pub fn from_unnormalized(
        f: impl Fn(f64) -> f64 + Send + Sync + 'static,
        rule: &QuadratureRule,
        nominal_smoothness: Option<f64>,
    ) -> Result<Self> {
        let z = rule.integrate(&f)?;
        if z <= 0.0 {
            return Err(Error::InvalidInput("density has nonpositive mass".into()));
        }
        let eval = Arc::new(move |x: f64| f(x) / z);
        let mut sup = 0.0f64;
        for i in 0..=10_000 {
            let x = i as f64 / 10_000.0;
            let v = eval(x);
            if v <= 0.0 {
                return Err(Error::InvalidInput(format!(
                    "density not positive at x = {x}"
                )));
            }
            sup = sup.max(v.ln().abs());
        }
        Ok(Self {
            eval,
            nominal_smoothness,
            sup_log_norm: sup,
        })
    }

    pub fn density(&self, x: f64) -> f64 {
        (self.eval)(x)
    }

    /// Sample by inverse CDF on a fine table.
    pub fn sample(&self, rng: &mut impl Rng, n: usize, rule: &QuadratureRule) -> Result<Vec<f64>> {
        let eval = self.eval.clone();
        let table = InverseCdfTable::build(move |x| eval(x), rule, DEFAULT_CDF_GRID)?;
        Ok((0..n).map(|_| table.quantile(rng.gen::<f64>())).collect())
    }
}

/// Kullback-Leibler and Hellinger profile of `p` relative to `p0`.
#[derive(Debug, Clone, Copy)]
pub struct NeighborhoodMembership {
    /// `P0 log(p0/p)`.
    pub kl: f64,
    /// `P0 (log(p0/p))^2`.
    pub kl2: f64,
    pub hellinger: f64,
}

impl NeighborhoodMembership {
    /// Membership in `B(eps)`: both KL moments at most `eps^2`.
    pub fn in_kl_ball(&self, eps: f64) -> bool {
        self.kl <= eps * eps && self.kl2 <= eps * eps
    }
}

fn check_normalized(f: &impl Fn(f64) -> f64, rule: &QuadratureRule, name: &str) -> Result<()> {
    let z = rule.integrate(f)?;
    if (z - 1.0).abs() > DISTANCE_INPUT_TOL {
        return Err(Error::InvalidInput(format!(
            "{name} integrates to {z}, not 1 within {DISTANCE_INPUT_TOL}"
        )));
    }
    Ok(())
}

/// Hellinger distance `h(p, q) = || sqrt p - sqrt q ||_2` between normalized
/// densities; symmetric and bounded by `sqrt 2`.
pub fn hellinger(
    p: impl Fn(f64) -> f64,
    q: impl Fn(f64) -> f64,
    rule: &QuadratureRule,
) -> Result<f64> {
    check_normalized(&p, rule, "first density")?;
    check_normalized(&q, rule, "second density")?;
    let h2 = rule.integrate(|x| {
        let d = p(x).max(0.0).sqrt() - q(x).max(0.0).sqrt();
        d * d
    })?;
    Ok(h2.max(0.0).sqrt())
}

/// Hellinger distance without the normalization pre-check, for hot loops
/// where both inputs are constructed normalized.
pub fn hellinger_unchecked(
    p: impl Fn(f64) -> f64,
    q: impl Fn(f64) -> f64,
    rule: &QuadratureRule,
) -> Result<f64> {
    let h2 = rule.integrate(|x| {
        let d = p(x).max(0.0).sqrt() - q(x).max(0.0).sqrt();
        d * d
    })?;
    Ok(h2.max(0.0).sqrt())
}

/// KL divergence, its second moment and the Hellinger distance of `p` from
/// the truth `p0`, all by quadrature.
pub fn kl_profile(
    p0: &TrueDensity,
    p: impl Fn(f64) -> f64,
    rule: &QuadratureRule,
) -> Result<NeighborhoodMembership> {
    let mut kl = 0.0;
    let mut kl2 = 0.0;
    let mut h2 = 0.0;
    for (&x, &w) in rule.nodes().iter().zip(rule.weights()) {
        let d0 = p0.density(x);
        let d1 = p(x);
        if d1 < LOG_CLAMP && d0 > 0.0 {
            return Err(Error::NumericDomain(format!(
                "density vanishes at x = {x} on the support of p0"
            )));
        }
        let r = (d0.max(LOG_CLAMP)).ln() - (d1.max(LOG_CLAMP)).ln();
        kl += w * d0 * r;
        kl2 += w * d0 * r * r;
        let d = d0.sqrt() - d1.max(0.0).sqrt();
        h2 += w * d * d;
    }
    Ok(NeighborhoodMembership {
        kl,
        kl2,
        hellinger: h2.max(0.0).sqrt(),
    })
}

/// Result of projecting a true density onto a model in Hellinger distance.
#[derive(Debug, Clone)]
pub struct HellingerProjection {
    pub theta: Vec<f64>,
    /// Achieved Hellinger distance.
    pub epsilon: f64,
    pub converged: bool,
}

const PROJECT_MAX_ITER: usize = 400;
const PROJECT_GRAD_TOL: f64 = 1e-9;

/// Project onto the box `{||theta||_inf <= M, theta' 1 = 0}` by alternating
/// centering and clipping until stable (at most 50 rounds).
pub fn project_box(theta: &[f64], m_bound: f64) -> Vec<f64> {
    let mut th = centered(theta);
    for _ in 0..50 {
        let clipped: Vec<f64> = th.iter().map(|t| t.clamp(-m_bound, m_bound)).collect();
        let cen = centered(&clipped);
        let delta = cen
            .iter()
            .zip(&th)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        th = cen;
        if delta < 1e-14 && th.iter().all(|t| t.abs() <= m_bound + 1e-12) {
            break;
        }
    }
    th
}

/// Minimize `theta -> h(p(theta), p0)` over the coefficient box by projected
/// gradient descent on the squared distance, initialized at the sup-norm fit
/// of `log p0` (which is already rate-optimal, so local descent suffices).
pub fn project_hellinger(
    basis: &SplineBasis,
    p0: &TrueDensity,
    m_bound: f64,
) -> Result<HellingerProjection> {
    let fine = QuadratureRule::composite(&basis.partition(), 16)?;
    let cache = NormalizerCache::new(basis, fine.clone())?;
    let j = basis.dim();

    let init = fit_supnorm(basis, |x| p0.density(x).max(LOG_CLAMP).ln(), (50 * j).max(200))?;
    let mut theta = project_box(&init.theta, m_bound);

    // Precompute p0 and basis values at the fine nodes.
    let p0_nodes: Vec<f64> = fine.nodes().iter().map(|&x| p0.density(x)).collect();
    let node_basis: Vec<(usize, Vec<f64>)> = fine
        .nodes()
        .iter()
        .map(|&x| basis.eval_nonzero(x))
        .collect::<Result<Vec<_>>>()?;

    // Squared Hellinger distance and its gradient at theta.
    let eval = |theta: &[f64]| -> Result<(f64, Vec<f64>)> {
        let (mean, c) = cache.basis_expectation(theta)?;
        let mut affinity = 0.0;
        let mut grad_aff = vec![0.0; j];
        for (((&p0v, &w), (first, vals)), _) in p0_nodes
            .iter()
            .zip(fine.weights())
            .zip(&node_basis)
            .zip(0..)
        {
            let lin: f64 = vals
                .iter()
                .enumerate()
                .map(|(i, v)| v * theta[first + i])
                .sum();
            let root = (p0v.max(0.0)).sqrt() * (0.5 * (lin - c)).exp();
            affinity += w * root;
            for (i, v) in vals.iter().enumerate() {
                grad_aff[first + i] += 0.5 * w * root * v;
            }
        }
        for (g, mu) in grad_aff.iter_mut().zip(&mean) {
            *g -= 0.5 * affinity * mu;
        }
        let h2 = (2.0 - 2.0 * affinity).max(0.0);
        let grad: Vec<f64> = grad_aff.iter().map(|g| -2.0 * g).collect();
        Ok((h2, grad))
    };

    let (mut h2, mut grad) = eval(&theta)?;
    let mut step = 1.0;
    let mut converged = false;
    for _ in 0..PROJECT_MAX_ITER {
        let gnorm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        if gnorm < PROJECT_GRAD_TOL {
            converged = true;
            break;
        }
        // Backtracking line search along the projected gradient direction.
        let mut improved = false;
        for _ in 0..40 {
            let cand: Vec<f64> = theta
                .iter()
                .zip(&grad)
                .map(|(t, g)| t - step * g)
                .collect();
            let cand = project_box(&cand, m_bound);
            let (h2_new, grad_new) = eval(&cand)?;
            if h2_new < h2 - 1e-15 {
                let moved = cand
                    .iter()
                    .zip(&theta)
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0f64, f64::max);
                theta = cand;
                h2 = h2_new;
                grad = grad_new;
                step *= 1.5;
                improved = true;
                if moved < 1e-12 {
                    converged = true;
                }
                break;
            }
            step *= 0.5;
        }
        if !improved {
            converged = true;
            break;
        }
        if converged {
            break;
        }
    }
    Ok(HellingerProjection {
        theta,
        epsilon: h2.max(0.0).sqrt(),
        converged,
    })
}
