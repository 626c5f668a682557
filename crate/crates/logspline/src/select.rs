//! Bayes factors between a nonparametric log-spline alternative and a fixed
//! parametric null, and the consistency experiments built on them.

use crate::basis::SplineBasis;
use crate::error::{Error, Result};
use crate::model::{hellinger_unchecked, NormalizerCache, TrueDensity, MODEL_ORDER};
use crate::posterior::{log_evidence, EvidenceEstimate, EvidenceMethod, EvidenceOptions};
use crate::prior::{dimension_schedule, CoefficientPrior, PriorKindSpec};
use crate::quadrature::{InverseCdfTable, QuadratureRule, DEFAULT_CDF_GRID};
use crate::truth::tilted_psi;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::sync::Arc;

/// The tilted-uniform family `p_phi(x) = exp(phi x - psi(phi))` with a
/// uniform prior on a bounded tilt range — a genuine sub-family of every
/// log-spline model with order at least 2.
#[derive(Debug, Clone)]
pub struct ParametricNull {
    pub phi_lo: f64,
    pub phi_hi: f64,
    /// Segments of the deterministic evidence quadrature over the tilt.
    pub segments: usize,
}

impl Default for ParametricNull {
    fn default() -> Self {
        Self {
            phi_lo: -5.0,
            phi_hi: 5.0,
            segments: 200,
        }
    }
}

impl ParametricNull {
    pub fn density(&self, phi: f64, x: f64) -> f64 {
        (phi * x - tilted_psi(phi)).exp()
    }

    /// Exact (deterministic-quadrature) log evidence: the likelihood depends
    /// on the data only through `sum_i X_i`, so this is a one-dimensional
    /// integral over the tilt.
    pub fn log_evidence(&self, data: &[f64]) -> Result<EvidenceEstimate> {
        if data.iter().any(|x| !(0.0..=1.0).contains(x)) {
            return Err(Error::InvalidInput("data point outside [0, 1]".into()));
        }
        let s1: f64 = data.iter().sum();
        let n = data.len() as f64;
        let rule = QuadratureRule::uniform(self.segments, 8)?;
        let width = self.phi_hi - self.phi_lo;
        // log Z = log integral over [lo, hi] of e^{phi S1 - n psi(phi)} / width.
        let mut terms: Vec<f64> = Vec::with_capacity(rule.nodes().len());
        for (&u, &w) in rule.nodes().iter().zip(rule.weights()) {
            let phi = self.phi_lo + width * u;
            terms.push(w.ln() + phi * s1 - n * tilted_psi(phi));
        }
        let m = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let log_z = m + terms.iter().map(|t| (t - m).exp()).sum::<f64>().ln();
        Ok(EvidenceEstimate {
            log_z,
            std_error: 0.0,
            method: EvidenceMethod::ExactDiscrete,
            n_draws: rule.nodes().len(),
        })
    }

    /// `min_phi h(p0, p_phi)` by coarse grid plus golden-section refinement;
    /// returns the distance and the minimizing tilt.
    pub fn hellinger_to(&self, p0: &TrueDensity, rule: &QuadratureRule) -> Result<(f64, f64)> {
        let h = |phi: f64| -> Result<f64> {
            hellinger_unchecked(
                |x| p0.density(x),
                |x| self.density(phi, x),
                rule,
            )
        };
        let grid = 41;
        let mut best_phi = self.phi_lo;
        let mut best = f64::INFINITY;
        for i in 0..grid {
            let phi = self.phi_lo + (self.phi_hi - self.phi_lo) * i as f64 / (grid - 1) as f64;
            let v = h(phi)?;
            if v < best {
                best = v;
                best_phi = phi;
            }
        }
        let step = (self.phi_hi - self.phi_lo) / (grid - 1) as f64;
        let mut a = (best_phi - step).max(self.phi_lo);
        let mut b = (best_phi + step).min(self.phi_hi);
        let gr = (5f64.sqrt() - 1.0) / 2.0;
        let mut c = b - gr * (b - a);
        let mut d = a + gr * (b - a);
        let mut fc = h(c)?;
        let mut fd = h(d)?;
        for _ in 0..60 {
            if fc < fd {
                b = d;
                d = c;
                fd = fc;
                c = b - gr * (b - a);
                fc = h(c)?;
            } else {
                a = c;
                c = d;
                fc = fd;
                d = a + gr * (b - a);
                fd = h(d)?;
            }
        }
        let phi = 0.5 * (a + b);
        Ok((h(phi)?, phi))
    }

    /// i.i.d. draws from a member of the family.
    pub fn sample(&self, phi: f64, rng: &mut impl Rng, n: usize) -> Result<Vec<f64>> {
        let rule = QuadratureRule::uniform(64, 10)?;
        let table = InverseCdfTable::build(|x| self.density(phi, x), &rule, DEFAULT_CDF_GRID)?;
        Ok((0..n).map(|_| table.quantile(rng.gen::<f64>())).collect())
    }
}

/// One side of a Bayes-factor comparison.
#[derive(Debug, Clone)]
pub enum ModelSpec {
    LogSpline {
        basis: Arc<SplineBasis>,
        prior: CoefficientPrior,
    },
    Parametric(ParametricNull),
}

impl ModelSpec {
    pub fn log_evidence(
        &self,
        data: &[f64],
        opts: &EvidenceOptions,
        rng: &mut impl Rng,
    ) -> Result<EvidenceEstimate> {
        match self {
            Self::LogSpline { basis, prior } => log_evidence(prior, basis, data, opts, rng),
            Self::Parametric(null) => null.log_evidence(data),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct BayesFactorResult {
    /// `(log lambda_2 + log Z_2) - (log lambda_1 + log Z_1)`, exactly from
    /// its parts; model 2 is the parametric side in the default experiments.
    pub log_bf: f64,
    pub log_z1: f64,
    pub se1: f64,
    pub log_z2: f64,
    pub se2: f64,
    /// Standard errors combined in quadrature.
    pub std_error: f64,
    pub n: usize,
}

pub fn bayes_factor(
    model1: &ModelSpec,
    model2: &ModelSpec,
    weights: (f64, f64),
    data: &[f64],
    opts: &EvidenceOptions,
    rng: &mut impl Rng,
) -> Result<BayesFactorResult> {
    let (l1, l2) = weights;
    if l1 <= 0.0 || l2 <= 0.0 {
        return Err(Error::InvalidInput("model weights must be positive".into()));
    }
    let e1 = model1.log_evidence(data, opts, rng)?;
    let e2 = model2.log_evidence(data, opts, rng)?;
    Ok(BayesFactorResult {
        log_bf: (l2.ln() + e2.log_z) - (l1.ln() + e1.log_z),
        log_z1: e1.log_z,
        se1: e1.std_error,
        log_z2: e2.log_z,
        se2: e2.std_error,
        std_error: (e1.std_error * e1.std_error + e2.std_error * e2.std_error).sqrt(),
        n: data.len(),
    })
}

/// Specification of the nonparametric alternative at sample size `n`.
#[derive(Debug, Clone, Copy)]
pub struct AltSpec {
    pub alpha: f64,
    pub q: usize,
    pub m: f64,
    pub kind: PriorKindSpec,
}

impl AltSpec {
    /// The model spec at sample size `n`, with dimension from the schedule.
    pub fn at(&self, n: usize) -> Result<ModelSpec> {
        let j = dimension_schedule(self.alpha, n, self.q)?;
        let basis = Arc::new(SplineBasis::new(self.q, j + 1 - self.q)?);
        let prior = match self.kind {
            PriorKindSpec::Flat => {
                CoefficientPrior::FlatBox(crate::prior::flat_prior(j, self.m)?)
            }
            PriorKindSpec::Net => {
                let eps = crate::prior::rate_schedule(self.alpha, n, false)?;
                CoefficientPrior::DiscreteNet(crate::prior::net_prior(j, self.m, eps)?)
            }
        };
        Ok(ModelSpec::LogSpline { basis, prior })
    }
}

/// One row of a Bayes-factor trajectory.
#[derive(Debug, Clone, Copy)]
pub struct BfRow {
    pub n: usize,
    pub rep: usize,
    pub seed: u64,
    pub log_bf: f64,
    pub std_error: f64,
    pub log_z_null: f64,
    pub log_z_alt: f64,
}

/// Per-`(n, rep)` log Bayes factors of the parametric null (model 2) against
/// the log-spline alternative (model 1) on fresh samples from `p0`;
/// deterministic given the root seed.
pub fn bf_trajectory(
    p0: &TrueDensity,
    null: &ParametricNull,
    alt: &AltSpec,
    weights: (f64, f64),
    n_grid: &[usize],
    reps: usize,
    root_seed: u64,
    opts: &EvidenceOptions,
) -> Result<Vec<BfRow>> {
    if n_grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidInput(
            "sample-size grid must be strictly increasing".into(),
        ));
    }
    let sample_rule = QuadratureRule::uniform(1024, 6)?;
    let mut rows = Vec::with_capacity(n_grid.len() * reps);
    for &n in n_grid {
        let m1 = alt.at(n)?;
        for rep in 0..reps {
            let seed = crate::experiment::derive_seed(root_seed, "bf", n as u64, rep as u64);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let data = p0.sample(&mut rng, n, &sample_rule)?;
            let bf = bayes_factor(
                &m1,
                &ModelSpec::Parametric(null.clone()),
                weights,
                &data,
                opts,
                &mut rng,
            )?;
            rows.push(BfRow {
                n,
                rep,
                seed,
                log_bf: bf.log_bf,
                std_error: bf.std_error,
                log_z_null: bf.log_z2,
                log_z_alt: bf.log_z1,
            });
        }
    }
    Ok(rows)
}

/// Prior mass of the Hellinger ball `{p : h(p, p0) <= radius}` under a
/// coefficient prior: exact atom counting for nets, Monte Carlo with a
/// binomial standard error for flat priors.  Zero Monte Carlo hits return 0
/// with a `3/n` upper confidence bound as the standard error.
pub fn prior_mass_smallball(
    prior: &CoefficientPrior,
    basis: &SplineBasis,
    p0: &TrueDensity,
    radius: f64,
    n_mc: usize,
    rng: &mut impl Rng,
) -> Result<(f64, f64)> {
    if radius <= 0.0 {
        return Err(Error::InvalidInput("radius must be positive".into()));
    }
    let rule = QuadratureRule::composite(&basis.partition(), MODEL_ORDER)?;
    let cache = NormalizerCache::new(basis, rule.clone())?;
    let sqrt_p0: Vec<f64> = rule.nodes().iter().map(|&x| p0.density(x).sqrt()).collect();
    let node_basis: Vec<(usize, Vec<f64>)> = rule
        .nodes()
        .iter()
        .map(|&x| basis.eval_nonzero(x))
        .collect::<Result<Vec<_>>>()?;
    let h_dist = |theta: &[f64]| -> Result<f64> {
        let c = cache.normalizer(theta)?;
        let mut h2 = 0.0;
        for ((&w, &sp0), (first, vals)) in
            rule.weights().iter().zip(&sqrt_p0).zip(&node_basis)
        {
            let lin: f64 = vals
                .iter()
                .enumerate()
                .map(|(t, v)| v * theta[first + t])
                .sum();
            let d = (0.5 * (lin - c)).exp() - sp0;
            h2 += w * d * d;
        }
        Ok(h2.max(0.0).sqrt())
    };
    match prior {
        CoefficientPrior::DiscreteNet(net) => {
            let atoms = net.atoms()?;
            let hits = atoms
                .iter()
                .map(|a| h_dist(a))
                .collect::<Result<Vec<_>>>()?
                .into_iter()
                .filter(|&d| d <= radius)
                .count();
            Ok((hits as f64 / atoms.len() as f64, 0.0))
        }
        CoefficientPrior::FlatBox(p) => {
            let mut hits = 0usize;
            for _ in 0..n_mc {
                if h_dist(&p.sample(rng))? <= radius {
                    hits += 1;
                }
            }
            let frac = hits as f64 / n_mc as f64;
            if hits == 0 {
                Ok((0.0, 3.0 / n_mc as f64))
            } else {
                Ok((frac, (frac * (1.0 - frac) / n_mc as f64).sqrt()))
            }
        }
    }
}

/// Prior mass of the KL neighborhood `B(eps)` (both KL moments at most
/// `eps^2`), the usual prior-mass condition.
pub fn prior_mass_klball(
    prior: &CoefficientPrior,
    basis: &SplineBasis,
    p0: &TrueDensity,
    eps: f64,
    n_mc: usize,
    rng: &mut impl Rng,
) -> Result<(f64, f64)> {
    if eps <= 0.0 {
        return Err(Error::InvalidInput("eps must be positive".into()));
    }
    let rule = QuadratureRule::composite(&basis.partition(), MODEL_ORDER)?;
    let cache = NormalizerCache::new(basis, rule.clone())?;
    let p0_nodes: Vec<f64> = rule.nodes().iter().map(|&x| p0.density(x)).collect();
    let node_basis: Vec<(usize, Vec<f64>)> = rule
        .nodes()
        .iter()
        .map(|&x| basis.eval_nonzero(x))
        .collect::<Result<Vec<_>>>()?;
    let in_ball = |theta: &[f64]| -> Result<bool> {
        let c = cache.normalizer(theta)?;
        let mut kl = 0.0;
        let mut kl2 = 0.0;
        for ((&w, &p0v), (first, vals)) in
            rule.weights().iter().zip(&p0_nodes).zip(&node_basis)
        {
            let lin: f64 = vals
                .iter()
                .enumerate()
                .map(|(t, v)| v * theta[first + t])
                .sum();
            let r = p0v.max(1e-300).ln() - (lin - c);
            kl += w * p0v * r;
            kl2 += w * p0v * r * r;
        }
        Ok(kl <= eps * eps && kl2 <= eps * eps)
    };
    match prior {
        CoefficientPrior::DiscreteNet(net) => {
            let atoms = net.atoms()?;
            let mut hits = 0usize;
            for a in &atoms {
                if in_ball(a)? {
                    hits += 1;
                }
            }
            Ok((hits as f64 / atoms.len() as f64, 0.0))
        }
        CoefficientPrior::FlatBox(p) => {
            let mut hits = 0usize;
            for _ in 0..n_mc {
                if in_ball(&p.sample(rng))? {
                    hits += 1;
                }
            }
            let frac = hits as f64 / n_mc as f64;
            if hits == 0 {
                Ok((0.0, 3.0 / n_mc as f64))
            } else {
                Ok((frac, (frac * (1.0 - frac) / n_mc as f64).sqrt()))
            }
        }
    }
}
