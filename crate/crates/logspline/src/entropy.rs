//! Metric-entropy bounds, minimax test constructions, and numeric audits of
//! the model-averaging contraction conditions.
//!
//! The entropy side works with constructive covers (grid covers of boxes,
//! standard ball-cover counts); the audit side evaluates both sides of the
//! weight/prior-mass conditions in log space for a concrete hierarchical
//! prior at a concrete sample size.

use crate::basis::SplineBasis;
use crate::calibration;
use crate::error::{Error, Result};
use crate::model::TrueDensity;
use crate::prior::{rate_schedule, HierarchicalPrior};
use crate::quadrature::QuadratureRule;
use crate::select::{prior_mass_klball, prior_mass_smallball};
use rand::Rng;
use statrs::function::gamma::ln_gamma;

/// Fixed testing constant of the error-bound machinery.
pub const K_TEST: f64 = 1.0 / 9.0;

/// Log volume of the J-dimensional Euclidean unit ball,
/// `ln v_J = (J/2) ln pi - ln Gamma(J/2 + 1)`.
pub fn log_ball_volume(j: usize) -> Result<f64> {
    if j < 1 {
        return Err(Error::InvalidInput("dimension must be at least 1".into()));
    }
    let jf = j as f64;
    Ok(0.5 * jf * std::f64::consts::PI.ln() - ln_gamma(0.5 * jf + 1.0))
}

pub fn ball_volume(j: usize) -> Result<f64> {
    Ok(log_ball_volume(j)?.exp())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Norm {
    Sup,
    Euclidean,
}

/// A constructive grid-cover count, kept in log space with the exact count
/// attached when it fits in a machine integer.
#[derive(Debug, Clone, Copy)]
pub struct CoverCount {
    pub per_axis: u64,
    pub log_count: f64,
    /// `None` when the J-fold product overflows.
    pub count: Option<u128>,
    pub overflow: bool,
}

/// Upper bound on `N(eps, [-M, M]^J, norm)` by an axis-aligned grid.  Each
/// axis is split into cells of half-width `eps` (sup norm) or `eps/sqrt(J)`
/// (Euclidean), with at least two cells per axis so the grid always contains
/// distinct centers.
pub fn covering_number_box(j: usize, m: f64, eps: f64, norm: Norm) -> Result<CoverCount> {
    if j < 1 {
        return Err(Error::InvalidInput("dimension must be at least 1".into()));
    }
    if !(m > 0.0) || !(eps > 0.0) {
        return Err(Error::InvalidInput(
            "box bound and radius must be positive".into(),
        ));
    }
    let cell = match norm {
        Norm::Sup => eps,
        Norm::Euclidean => eps / (j as f64).sqrt(),
    };
    let per_axis = ((m / cell).ceil() as u64).max(2);
    let log_count = j as f64 * (per_axis as f64).ln();
    let mut count: Option<u128> = Some(1);
    for _ in 0..j {
        count = count.and_then(|c| c.checked_mul(per_axis as u128));
    }
    Ok(CoverCount {
        per_axis,
        log_count,
        count,
        overflow: count.is_none(),
    })
}

#[derive(Debug, Clone, Copy)]
pub struct EntropyRow {
    pub eps: f64,
    /// Bound on `log N(eps/3, C(2 eps), h)`.
    pub log_cover: f64,
    /// The `E` with `log N = E * J`.
    pub implied_e: f64,
}

#[derive(Debug, Clone)]
pub struct EntropyAudit {
    pub alpha: f64,
    pub n: usize,
    pub j: usize,
    pub eps_n: f64,
    pub rows: Vec<EntropyRow>,
    /// Largest implied `E` over the radius grid.
    pub implied_e: f64,
    /// Whether the implied `E` varies by at most a factor 3 over the grid.
    pub stable: bool,
}

/// Bound the Hellinger entropy of the sieve ball `C(2 eps)` at radius
/// `eps/3`, over a grid of ten radii starting at the target rate.
///
/// The sieve ball maps into a Euclidean coefficient ball of radius
/// `2 sqrt(J) eps / F_lower` (log-density sandwich), and a Euclidean
/// `delta`-cover of the coefficients is an `eps/3`-cover in Hellinger
/// distance once `sqrt(s_hi / J) * delta = eps / 3`, with `s_hi` the upper
/// sandwich constant.  Both the ball-cover bound `J ln(1 + 2R/delta)` and
/// the grid-cover bound over the bounding box have radius-free ratios
/// `R/delta`, so the implied per-dimension entropy constant is exact across
/// the grid; we report the smaller of the two bounds.
pub fn entropy_audit(alpha: f64, n: usize, basis: &SplineBasis, m: f64) -> Result<EntropyAudit> {
    if !(m > 0.0) {
        return Err(Error::InvalidInput("box bound must be positive".into()));
    }
    let cal = calibration::frozen();
    let j = basis.dim();
    let jf = j as f64;
    let eps_n = rate_schedule(alpha, n, false)?;
    let f_lower = cal.f_lower(m);
    let s_hi = cal.sandwich_upper;
    let mut rows = Vec::with_capacity(10);
    for k in 0..10 {
        let eps = eps_n * 1.5f64.powi(k);
        let radius = 2.0 * jf.sqrt() * eps / f_lower;
        let delta = eps * jf.sqrt() / (3.0 * s_hi.sqrt());
        let ball_bound = jf * (1.0 + 2.0 * radius / delta).ln();
        let box_bound = covering_number_box(j, radius, delta, Norm::Euclidean)?.log_count;
        let log_cover = ball_bound.min(box_bound);
        rows.push(EntropyRow {
            eps,
            log_cover,
            implied_e: log_cover / jf,
        });
    }
    let max_e = rows.iter().map(|r| r.implied_e).fold(0.0f64, f64::max);
    let min_e = rows
        .iter()
        .map(|r| r.implied_e)
        .fold(f64::INFINITY, f64::min);
    Ok(EntropyAudit {
        alpha,
        n,
        j,
        eps_n,
        rows,
        implied_e: max_e,
        stable: max_e <= 3.0 * min_e,
    })
}

/// The constants of the main-theorem hypotheses, one slot per model index.
#[derive(Debug, Clone)]
pub struct ConditionConstants {
    pub b: f64,
    pub h: f64,
    pub i: f64,
    pub l: f64,
    /// Per-index entropy constants.
    pub e_alpha: Vec<f64>,
    /// Bound over indices at least as coarse as the truth.
    pub e: f64,
    /// Bound over indices strictly finer than the truth (0 when that set is
    /// empty).
    pub e_lower: f64,
    pub f: f64,
    pub k_test: f64,
    /// Per-index weight slack factors.
    pub mu: Vec<f64>,
}

#[derive(Debug, Clone, Copy)]
pub struct GateReport {
    pub b_exceeds_sqrt_h: bool,
    pub kb2_exceeds: bool,
    pub shell_margin: bool,
    pub satisfied: bool,
}

impl ConditionConstants {
    pub fn new(
        b: f64,
        h: f64,
        i: f64,
        l: f64,
        e_alpha: Vec<f64>,
        e: f64,
        e_lower: f64,
        f: f64,
        mu: Vec<f64>,
    ) -> Result<Self> {
        if h < 1.0 {
            return Err(Error::InvalidInput(format!("H = {h} must be at least 1")));
        }
        if i <= 2.0 {
            return Err(Error::InvalidInput(format!("I = {i} must exceed 2")));
        }
        if !(b > 0.0) || !(f > 0.0) {
            return Err(Error::InvalidInput("B and F must be positive".into()));
        }
        if e_alpha.iter().chain(&mu).any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidInput(
                "per-index constants must be finite and nonnegative".into(),
            ));
        }
        Ok(Self {
            b,
            h,
            i,
            l,
            e_alpha,
            e,
            e_lower,
            f,
            k_test: K_TEST,
            mu,
        })
    }

    /// The three hypothesis inequalities: `B > sqrt(H)`,
    /// `K B^2 > (H E_lower) v E + 1`, `B^2 I^2 (K - 2L) > 3`.
    pub fn theorem_gate(&self) -> GateReport {
        let b_exceeds_sqrt_h = self.b > self.h.sqrt();
        let kb2_exceeds =
            self.k_test * self.b * self.b > (self.h * self.e_lower).max(self.e) + 1.0;
        let shell_margin = self.b * self.b * self.i * self.i * (self.k_test - 2.0 * self.l) > 3.0;
        GateReport {
            b_exceeds_sqrt_h,
            kb2_exceeds,
            shell_margin,
            satisfied: b_exceeds_sqrt_h && kb2_exceeds && shell_margin,
        }
    }
}

/// One evaluated inequality of the weight/mass conditions, in log space.
#[derive(Debug, Clone, Copy)]
pub struct ConditionRow {
    pub model_index: usize,
    pub i: f64,
    pub log_left: f64,
    pub log_right: f64,
    pub satisfied: bool,
}

#[derive(Debug, Clone)]
pub struct PriorMassAudit {
    pub beta_index: usize,
    /// Indices with `eps_alpha^2 > H eps_beta^2` (strictly finer rate needed).
    pub finer_than_beta: Vec<usize>,
    /// Rows of the finer-index condition, one per (index, i).
    pub cond_finer: Vec<ConditionRow>,
    /// Rows of the coarser-index condition.
    pub cond_coarser: Vec<ConditionRow>,
    /// Log of the summed finer-index ratio and of its comparison scale
    /// `e^{-2 n eps_beta^2}`; smallness is a trend over n, not a verdict.
    pub sum_log_left: f64,
    pub sum_log_scale: f64,
    /// Crude mass condition: log mass of the KL ball at the truth index vs
    /// `-F n eps_beta^2`.
    pub mass_log: f64,
    pub mass_log_bound: f64,
    pub mass_satisfied: bool,
    /// True when there is no index other than the truth to compare.
    pub vacuous: bool,
    /// Monte Carlo standard errors of the ball masses, zero for exact ones.
    pub mass_errors: Vec<f64>,
}

/// Evaluate the weight/prior-mass conditions for a concrete prior and truth
/// index.  Masses are exact for discrete nets and Monte Carlo for flat boxes.
pub fn prior_mass_audit(
    hp: &HierarchicalPrior,
    p0: &TrueDensity,
    beta_index: usize,
    cc: &ConditionConstants,
    i_grid: &[f64],
    n_mc: usize,
    rng: &mut impl Rng,
) -> Result<PriorMassAudit> {
    if beta_index >= hp.models.len() {
        return Err(Error::InvalidInput(format!(
            "truth index {beta_index} out of range for {} models",
            hp.models.len()
        )));
    }
    if i_grid.iter().any(|&i| !(i >= 1.0)) {
        return Err(Error::InvalidInput(
            "multipliers in the i-grid must be at least 1".into(),
        ));
    }
    let n = hp.n as f64;
    let beta = &hp.models[beta_index];
    let eps_beta = beta.epsilon;
    let (mass_beta, se_beta) = prior_mass_klball(
        &beta.prior,
        &beta.basis,
        p0,
        eps_beta,
        n_mc,
        rng,
    )?;
    let log_mass_beta = mass_beta.ln();
    let mass_log_bound = -cc.f * n * eps_beta * eps_beta;
    let mut finer = Vec::new();
    let mut cond_finer = Vec::new();
    let mut cond_coarser = Vec::new();
    let mut mass_errors = vec![0.0; hp.models.len()];
    mass_errors[beta_index] = se_beta;
    // Log-sum of the finer-index ratios at radius multiplier I*B.
    let mut sum_terms: Vec<f64> = Vec::new();
    for (idx, model) in hp.models.iter().enumerate() {
        if idx == beta_index {
            continue;
        }
        let eps_a = model.epsilon;
        let is_finer = eps_a * eps_a > cc.h * eps_beta * eps_beta;
        if is_finer {
            finer.push(idx);
        }
        let log_weight_ratio = model.log_weight_unnorm - beta.log_weight_unnorm;
        let mu = cc.mu.get(idx).copied().unwrap_or(1.0);
        // Radius scale: own rate for finer indices, the truth rate otherwise.
        let eps_used = if is_finer { eps_a } else { eps_beta };
        for &i in i_grid {
            let (mass_a, se_a) = prior_mass_smallball(
                &model.prior,
                &model.basis,
                p0,
                i * eps_used,
                n_mc,
                rng,
            )?;
            mass_errors[idx] = mass_errors[idx].max(se_a);
            let log_left = if mass_beta == 0.0 {
                f64::INFINITY
            } else {
                log_weight_ratio + mass_a.ln() - log_mass_beta
            };
            let log_right = mu.ln() + cc.l * i * i * n * eps_used * eps_used;
            let row = ConditionRow {
                model_index: idx,
                i,
                log_left,
                log_right,
                satisfied: log_left <= log_right,
            };
            if is_finer {
                cond_finer.push(row);
            } else {
                cond_coarser.push(row);
            }
        }
        if is_finer {
            let (mass_ib, _) = prior_mass_smallball(
                &model.prior,
                &model.basis,
                p0,
                cc.i * cc.b * eps_a,
                n_mc,
                rng,
            )?;
            if mass_beta == 0.0 {
                sum_terms.push(f64::INFINITY);
            } else if mass_ib > 0.0 {
                sum_terms.push(log_weight_ratio + mass_ib.ln() - log_mass_beta);
            }
        }
    }
    let sum_log_left = if sum_terms.iter().any(|t| t.is_infinite() && *t > 0.0) {
        f64::INFINITY
    } else if sum_terms.is_empty() {
        f64::NEG_INFINITY
    } else {
        crate::posterior::log_sum_exp(&sum_terms)
    };
    Ok(PriorMassAudit {
        beta_index,
        finer_than_beta: finer,
        cond_finer,
        cond_coarser,
        sum_log_left,
        sum_log_scale: -2.0 * n * eps_beta * eps_beta,
        mass_log: log_mass_beta,
        mass_log_bound,
        mass_satisfied: log_mass_beta >= mass_log_bound,
        vacuous: hp.models.len() == 1,
        mass_errors,
    })
}

/// A net test: maximum of per-center likelihood-ratio tests against a common
/// threshold `ln(a/b)`.
pub struct TestFunction {
    centers: Vec<TrueDensity>,
    log_threshold: f64,
}

fn check_weights(weights: (f64, f64)) -> Result<f64> {
    let (a, b) = weights;
    if !(a > 0.0) || !(b > 0.0) {
        return Err(Error::InvalidInput(
            "test weights must be positive".into(),
        ));
    }
    Ok((a / b).ln())
}

impl TestFunction {
    pub fn singleton(q: TrueDensity, weights: (f64, f64)) -> Result<Self> {
        let log_threshold = check_weights(weights)?;
        Ok(Self {
            centers: vec![q],
            log_threshold,
        })
    }

    /// Net test for the complement of a ball: every center must be at
    /// Hellinger distance at least `3 eps` from the null.
    pub fn ball(
        p0: &TrueDensity,
        centers: Vec<TrueDensity>,
        eps: f64,
        weights: (f64, f64),
        rule: &QuadratureRule,
    ) -> Result<Self> {
        if centers.is_empty() {
            return Err(Error::InvalidInput("net must be nonempty".into()));
        }
        if !(eps > 0.0) {
            return Err(Error::InvalidInput("radius must be positive".into()));
        }
        let log_threshold = check_weights(weights)?;
        for (idx, q) in centers.iter().enumerate() {
            let h = crate::model::hellinger_unchecked(|x| p0.density(x), |x| q.density(x), rule)?;
            if h < 3.0 * eps {
                return Err(Error::InvalidInput(format!(
                    "net center {idx} is at Hellinger distance {h:.6}, closer than 3 eps = {:.6}",
                    3.0 * eps
                )));
            }
        }
        Ok(Self {
            centers,
            log_threshold,
        })
    }

    /// Decision in {0, 1}: 1 iff some center's log-likelihood-ratio sum
    /// strictly exceeds the threshold (ties decide 0).
    pub fn decide(&self, p0: &TrueDensity, data: &[f64]) -> Result<u8> {
        for q in &self.centers {
            let mut stat = 0.0;
            for &x in data {
                let ratio = q.density(x).ln() - p0.density(x).ln();
                if !ratio.is_finite() {
                    return Err(Error::NumericDomain(format!(
                        "log-likelihood ratio is not finite at x = {x}"
                    )));
                }
                stat += ratio;
            }
            if stat > self.log_threshold {
                return Ok(1);
            }
        }
        Ok(0)
    }
}

/// Likelihood-ratio test of the null `p0` against the single alternative `q`.
pub fn minimax_test_singleton(
    p0: &TrueDensity,
    q: &TrueDensity,
    weights: (f64, f64),
    data: &[f64],
) -> Result<u8> {
    TestFunction::singleton(q.clone(), weights)?.decide(p0, data)
}

/// Maximum of singleton tests over a net of centers at distance >= 3 eps.
pub fn minimax_test_ball(
    p0: &TrueDensity,
    net: &[TrueDensity],
    eps: f64,
    weights: (f64, f64),
    data: &[f64],
    rule: &QuadratureRule,
) -> Result<u8> {
    TestFunction::ball(p0, net.to_vec(), eps, weights, rule)?.decide(p0, data)
}
