//! Evidence per model, the model-index posterior, within-model coefficient
//! MCMC, and posterior contraction functionals.
//!
//! Everything runs through the sufficient statistic `S = sum_i B(X_i)`: the
//! log-likelihood of a coefficient vector is `theta' S - n c(theta)`, so each
//! evaluation costs one normalizer pass regardless of the sample size.

use crate::basis::SplineBasis;
use crate::error::{Error, Result};
use crate::model::{project_box, NormalizerCache, TrueDensity, MODEL_ORDER};
use crate::prior::{CoefficientPrior, FlatBoxPrior, HierarchicalPrior, NetPrior};
use crate::quadrature::QuadratureRule;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

/// How an evidence value was produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvidenceMethod {
    ExactDiscrete,
    ImportanceSampling,
    /// Mode-centered window importance sampling over an implicit lattice.
    WindowImportance,
}

/// A (log) marginal likelihood with its Monte Carlo uncertainty.
#[derive(Debug, Clone, Copy)]
pub struct EvidenceEstimate {
    pub log_z: f64,
    pub std_error: f64,
    pub method: EvidenceMethod,
    pub n_draws: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct EvidenceOptions {
    /// Importance-sampling draws for flat priors and oversized lattices.
    pub n_is: usize,
    /// Largest atom count enumerated exactly.
    pub enum_cap: u128,
}

impl Default for EvidenceOptions {
    fn default() -> Self {
        Self {
            n_is: 20_000,
            enum_cap: 200_000,
        }
    }
}

/// The per-model likelihood machinery shared by evidence and MCMC.
pub struct Likelihood {
    cache: NormalizerCache,
    /// Sufficient statistic `sum_i B(X_i)`.
    pub stat: Vec<f64>,
    pub n: usize,
}

impl Likelihood {
    pub fn new(basis: &SplineBasis, data: &[f64]) -> Result<Self> {
        let rule = QuadratureRule::composite(&basis.partition(), MODEL_ORDER)?;
        let cache = NormalizerCache::new(basis, rule)?;
        let mut stat = vec![0.0; basis.dim()];
        for &x in data {
            if !(0.0..=1.0).contains(&x) {
                return Err(Error::InvalidInput(format!(
                    "data point {x} outside [0, 1]"
                )));
            }
            let (first, vals) = basis.eval_nonzero(x)?;
            for (i, v) in vals.iter().enumerate() {
                stat[first + i] += v;
            }
        }
        Ok(Self {
            cache,
            stat,
            n: data.len(),
        })
    }

    /// `log prod_i p(X_i | theta) = theta' S - n c(theta)`.
    pub fn log_lik(&self, theta: &[f64]) -> Result<f64> {
        let c = self.cache.normalizer(theta)?;
        let dot: f64 = theta.iter().zip(&self.stat).map(|(t, s)| t * s).sum();
        Ok(dot - self.n as f64 * c)
    }

    pub fn cache(&self) -> &NormalizerCache {
        &self.cache
    }
}

pub fn log_sum_exp(values: &[f64]) -> f64 {
    let m = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + values.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

/// Delta-method standard error of `log mean(exp(w))` from log-weights.
fn log_mean_exp_se(log_w: &[f64]) -> (f64, f64) {
    let m = log_w.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let n = log_w.len() as f64;
    if !m.is_finite() {
        return (f64::NEG_INFINITY, f64::INFINITY);
    }
    let a: Vec<f64> = log_w.iter().map(|w| (w - m).exp()).collect();
    let mean = a.iter().sum::<f64>() / n;
    let var = a.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0).max(1.0);
    let log_mean = m + mean.ln();
    let se = (var / n).sqrt() / mean;
    (log_mean, se)
}

/// Marginal likelihood of the data under one coefficient prior.
///
/// Flat priors use importance sampling from the prior itself (the uniform
/// prior density cancels).  Discrete nets are summed exactly when the atom
/// count is below `enum_cap`; larger lattices use importance sampling from a
/// mixture of a window around the posterior mode and the full lattice, which
/// keeps the estimator unbiased while the window captures the mass.
pub fn log_evidence(
    prior: &CoefficientPrior,
    basis: &SplineBasis,
    data: &[f64],
    opts: &EvidenceOptions,
    rng: &mut impl Rng,
) -> Result<EvidenceEstimate> {
    let lik = Likelihood::new(basis, data)?;
    if data.is_empty() {
        return Ok(EvidenceEstimate {
            log_z: 0.0,
            std_error: 0.0,
            method: match prior {
                CoefficientPrior::FlatBox(_) => EvidenceMethod::ImportanceSampling,
                CoefficientPrior::DiscreteNet(_) => EvidenceMethod::ExactDiscrete,
            },
            n_draws: 0,
        });
    }
    match prior {
        CoefficientPrior::FlatBox(p) => {
            let log_w: Vec<f64> = (0..opts.n_is)
                .map(|_| lik.log_lik(&p.sample(rng)))
                .collect::<Result<_>>()?;
            let (log_z, se) = log_mean_exp_se(&log_w);
            if !log_z.is_finite() {
                return Err(Error::NumericDomain(
                    "all importance weights underflowed".into(),
                ));
            }
            Ok(EvidenceEstimate {
                log_z,
                std_error: se,
                method: EvidenceMethod::ImportanceSampling,
                n_draws: opts.n_is,
            })
        }
        CoefficientPrior::DiscreteNet(net) => {
            if net.count() <= opts.enum_cap {
                let atoms = net.atoms_capped(opts.enum_cap)?;
                let terms: Vec<f64> = atoms
                    .iter()
                    .map(|a| lik.log_lik(a))
                    .collect::<Result<_>>()?;
                Ok(EvidenceEstimate {
                    log_z: log_sum_exp(&terms) + net.log_atom_mass(),
                    std_error: 0.0,
                    method: EvidenceMethod::ExactDiscrete,
                    n_draws: atoms.len(),
                })
            } else {
                window_evidence(net, &lik, opts, rng)
            }
        }
    }
}

/// A rectangular lattice window with per-coordinate bounds and a convolution
/// table for counting and uniform sampling under the sum-zero constraint.
struct LatticeWindow {
    lo: Vec<i64>,
    hi: Vec<i64>,
    /// `ways[c]` counts tuples of the last `c` coordinates by their sum;
    /// offset so index 0 is the minimal achievable sum.
    ways: Vec<Vec<u128>>,
    offsets: Vec<i64>,
    count: u128,
}

impl LatticeWindow {
    fn new(lo: Vec<i64>, hi: Vec<i64>) -> Result<Self> {
        let j = lo.len();
        let mut ways: Vec<Vec<u128>> = Vec::with_capacity(j + 1);
        let mut offsets: Vec<i64> = Vec::with_capacity(j + 1);
        ways.push(vec![1u128]);
        offsets.push(0);
        // Build from the back: ways[c] covers coordinates j-c .. j-1.
        for c in 1..=j {
            let i = j - c;
            let prev = &ways[c - 1];
            let prev_off = offsets[c - 1];
            let off = prev_off + lo[i];
            let span = prev.len() as i64 + (hi[i] - lo[i]);
            let mut next = vec![0u128; span as usize];
            for (idx, &w) in prev.iter().enumerate() {
                if w == 0 {
                    continue;
                }
                for step in 0..=(hi[i] - lo[i]) {
                    let nidx = idx as i64 + step;
                    let cell = &mut next[nidx as usize];
                    *cell = cell.checked_add(w).ok_or_else(|| {
                        Error::Resource("window count overflows 128 bits".into())
                    })?;
                }
            }
            ways.push(next);
            offsets.push(off);
        }
        let count = {
            let c = j;
            let t = 0i64 - offsets[c];
            if t < 0 || t >= ways[c].len() as i64 {
                0
            } else {
                ways[c][t as usize]
            }
        };
        Ok(Self {
            lo,
            hi,
            ways,
            offsets,
            count,
        })
    }

    fn ways_at(&self, c: usize, t: i64) -> u128 {
        let idx = t - self.offsets[c];
        if idx < 0 || idx >= self.ways[c].len() as i64 {
            0
        } else {
            self.ways[c][idx as usize]
        }
    }

    fn contains(&self, k: &[i64]) -> bool {
        k.iter()
            .zip(self.lo.iter().zip(&self.hi))
            .all(|(ki, (lo, hi))| ki >= lo && ki <= hi)
            && k.iter().sum::<i64>() == 0
    }

    /// Uniform draw of a sum-zero tuple inside the window.
    fn sample(&self, rng: &mut impl Rng) -> Vec<i64> {
        let j = self.lo.len();
        let mut k = Vec::with_capacity(j);
        let mut partial = 0i64;
        for i in 0..j {
            let c = j - i; // coordinates i..j-1 remain
            let total = self.ways_at(c, -partial);
            debug_assert!(total > 0);
            let mut target = rng.gen_range(0..total);
            let mut chosen = self.lo[i];
            for ki in self.lo[i]..=self.hi[i] {
                let w = self.ways_at(c - 1, -partial - ki);
                if target < w {
                    chosen = ki;
                    break;
                }
                target -= w;
            }
            k.push(chosen);
            partial += chosen;
        }
        k
    }
}

/// Maximize the log-likelihood over the coefficient slice box by projected
/// gradient ascent (the map is concave: `c` is a log-partition function).
fn continuous_mode(lik: &Likelihood, j: usize, m: f64) -> Result<Vec<f64>> {
    let mut theta = vec![0.0; j];
    let n = lik.n.max(1) as f64;
    let mut step = 1.0 / n;
    let mut value = lik.log_lik(&theta)?;
    for _ in 0..300 {
        let (mean, _) = lik.cache.basis_expectation(&theta)?;
        let grad: Vec<f64> = lik
            .stat
            .iter()
            .zip(&mean)
            .map(|(s, mu)| s - n * mu)
            .collect();
        let mut improved = false;
        for _ in 0..40 {
            let cand: Vec<f64> = theta
                .iter()
                .zip(&grad)
                .map(|(t, g)| t + step * g)
                .collect();
            let cand = project_box(&cand, m);
            let v = lik.log_lik(&cand)?;
            if v > value + 1e-12 {
                theta = cand;
                value = v;
                step *= 1.6;
                improved = true;
                break;
            }
            step *= 0.5;
        }
        if !improved {
            break;
        }
    }
    Ok(theta)
}

/// Fraction of window-IS draws taken from the full lattice (defensive tail).
const WINDOW_TAIL_MIX: f64 = 0.05;

/// Lattice point nearest the continuous likelihood mode, refined by local
/// paired +/-1 ascent (which preserves the sum constraint).
fn lattice_mode(net: &NetPrior, lik: &Likelihood) -> Result<Vec<i64>> {
    let j = net.j;
    let mode = continuous_mode(lik, j, net.m)?;
    let mut k_star = net.nearest_indices(&mode)?;
    let mut best = lik.log_lik(&net.atom(&k_star))?;
    let mut improved = true;
    let mut passes = 0;
    while improved && passes < 10 {
        improved = false;
        passes += 1;
        for i in 0..j {
            for l in 0..j {
                if i == l {
                    continue;
                }
                let mut cand = k_star.clone();
                cand[i] += 1;
                cand[l] -= 1;
                if !net.contains_indices(&cand) {
                    continue;
                }
                let v = lik.log_lik(&net.atom(&cand))?;
                if v > best {
                    best = v;
                    k_star = cand;
                    improved = true;
                }
            }
        }
    }
    Ok(k_star)
}

fn window_evidence(
    net: &NetPrior,
    lik: &Likelihood,
    opts: &EvidenceOptions,
    rng: &mut impl Rng,
) -> Result<EvidenceEstimate> {
    let j = net.j;
    let k_star = lattice_mode(net, lik)?;
    // Per-coordinate radii from the observed Fisher information diagonal:
    // wide enough that the log-likelihood drop across the window edge is
    // large, so the tail mixture carries almost no weight.
    let info = lik.cache.basis_variance_diag(&net.atom(&k_star))?;
    let n = lik.n as f64;
    let s = net.spacing;
    let mut lo = Vec::with_capacity(j);
    let mut hi = Vec::with_capacity(j);
    for (i, &ii) in info.iter().enumerate() {
        let r = if ii > 0.0 {
            ((80.0 / (n * ii)).sqrt() / s).ceil() as i64
        } else {
            net.kmax()
        };
        let r = r.clamp(2, 2 * net.kmax());
        lo.push((k_star[i] - r).max(-net.kmax()));
        hi.push((k_star[i] + r).min(net.kmax()));
    }
    let window = LatticeWindow::new(lo, hi)?;
    if window.count == 0 {
        return Err(Error::InvalidState("empty mode window".into()));
    }
    let log_n_atoms = net.log_count();
    let log_wcount = (window.count as f64).ln();
    let draws = opts.n_is;
    let mut log_w = Vec::with_capacity(draws);
    for _ in 0..draws {
        let from_window = rng.gen::<f64>() >= WINDOW_TAIL_MIX;
        let k = if from_window {
            window.sample(rng)
        } else {
            net.sample_indices(rng)
        };
        // Proposal mass of the mixture at k, in log space.
        let in_window = window.contains(&k);
        let mut parts = Vec::with_capacity(2);
        if in_window {
            parts.push((1.0 - WINDOW_TAIL_MIX).ln() - log_wcount);
        }
        parts.push(WINDOW_TAIL_MIX.ln() - log_n_atoms);
        let log_g = log_sum_exp(&parts);
        let ll = lik.log_lik(&net.atom(&k))?;
        log_w.push(ll - log_n_atoms - log_g);
    }
    let (log_z, se) = log_mean_exp_se(&log_w);
    if !log_z.is_finite() {
        return Err(Error::NumericDomain(
            "all window importance weights underflowed".into(),
        ));
    }
    Ok(EvidenceEstimate {
        log_z,
        std_error: se,
        method: EvidenceMethod::WindowImportance,
        n_draws: draws,
    })
}

/// Softmax of `log lambda + log Z` over the index list, in stable index
/// order, normalized by max-subtraction.
pub fn model_posterior_from_evidence(
    log_weights: &[f64],
    evidences: &[EvidenceEstimate],
) -> Result<Vec<f64>> {
    if log_weights.len() != evidences.len() || log_weights.is_empty() {
        return Err(Error::InvalidInput("mismatched posterior inputs".into()));
    }
    let scores: Vec<f64> = log_weights
        .iter()
        .zip(evidences)
        .map(|(lw, e)| lw + e.log_z)
        .collect();
    let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = scores.iter().map(|s| (s - m).exp()).collect();
    let z: f64 = exp.iter().sum();
    Ok(exp.iter().map(|e| e / z).collect())
}

/// Model-index posterior for a hierarchical prior.
pub fn model_posterior(
    hp: &HierarchicalPrior,
    data: &[f64],
    opts: &EvidenceOptions,
    rng: &mut impl Rng,
) -> Result<(Vec<f64>, Vec<EvidenceEstimate>)> {
    let mut evidences = Vec::with_capacity(hp.models.len());
    for m in &hp.models {
        evidences.push(log_evidence(&m.prior, &m.basis, data, opts, rng)?);
    }
    let log_w: Vec<f64> = hp.models.iter().map(|m| m.log_weight_unnorm).collect();
    let post = model_posterior_from_evidence(&log_w, &evidences)?;
    Ok((post, evidences))
}

#[derive(Debug, Clone, Copy)]
pub struct McmcOptions {
    pub steps: usize,
    /// Acceptance band targeted during adaptation.
    pub target: (f64, f64),
    /// Initial random-walk scale (flat priors).
    pub initial_scale: f64,
}

impl Default for McmcOptions {
    fn default() -> Self {
        Self {
            steps: 2000,
            target: (0.25, 0.40),
            initial_scale: 0.25,
        }
    }
}

#[derive(Debug, Clone)]
pub struct McmcResult {
    /// Post-burn-in draws.
    pub chain: Vec<Vec<f64>>,
    pub acceptance: f64,
    /// Frozen proposal scale (flat priors).
    pub scale: f64,
}

/// Random-walk Metropolis chain targeting `prior x likelihood` within one
/// model.  Flat priors move in the free coordinates with an adapt-then-freeze
/// Gaussian step; discrete nets jump between neighboring atoms via paired
/// +/-1 lattice moves.  Burn-in is 20% of the steps and is discarded.
pub fn mcmc_theta(
    basis: &SplineBasis,
    prior: &CoefficientPrior,
    data: &[f64],
    steps: usize,
    opts: &McmcOptions,
    rng: &mut impl Rng,
) -> Result<McmcResult> {
    if steps < 1 {
        return Err(Error::InvalidInput("steps must be at least 1".into()));
    }
    let lik = Likelihood::new(basis, data)?;
    let burn = steps / 5;
    match prior {
        CoefficientPrior::FlatBox(p) => mcmc_flat(p, &lik, steps, burn, opts, rng),
        CoefficientPrior::DiscreteNet(net) => mcmc_net(net, &lik, steps, burn, rng),
    }
}

fn mcmc_flat(
    p: &FlatBoxPrior,
    lik: &Likelihood,
    steps: usize,
    burn: usize,
    opts: &McmcOptions,
    rng: &mut impl Rng,
) -> Result<McmcResult> {
    let j = p.j;
    let mut theta = vec![0.0; j];
    let mut cur = lik.log_lik(&theta)? + p.log_density_unnorm(&theta);
    let mut scale = opts.initial_scale;
    let mut accepts = 0usize;
    let mut kept = Vec::with_capacity(steps - burn);
    let mut window_accepts = 0usize;
    let mut window_len = 0usize;
    let mut any_accept_in_adaptation = false;
    for step in 0..steps {
        // Symmetric walk in the free coordinates; centering determines the
        // last one, so the slice constraint is preserved exactly.
        let mut cand = theta.clone();
        for c in cand.iter_mut().take(j.saturating_sub(1)) {
            let z: f64 = StandardNormal.sample(rng);
            *c += scale * z;
        }
        let head: f64 = cand.iter().take(j - 1).sum();
        if j > 0 {
            cand[j - 1] = -head;
        }
        let cand_log = p.log_density_unnorm(&cand);
        let accept = if cand_log.is_finite() {
            let v = lik.log_lik(&cand)? + cand_log;
            let a = v - cur;
            if a >= 0.0 || rng.gen::<f64>() < a.exp() {
                theta = cand;
                cur = v;
                true
            } else {
                false
            }
        } else {
            false
        };
        if accept {
            accepts += 1;
            window_accepts += 1;
            if step < burn {
                any_accept_in_adaptation = true;
            }
        }
        window_len += 1;
        // Adapt in windows of 50 during burn-in, then freeze.
        if step < burn && window_len == 50 {
            let rate = window_accepts as f64 / window_len as f64;
            if rate < opts.target.0 {
                scale *= 0.7;
            } else if rate > opts.target.1 {
                scale *= 1.4;
            }
            window_accepts = 0;
            window_len = 0;
        }
        if step + 1 == burn && burn >= 50 && !any_accept_in_adaptation {
            return Err(Error::Diagnostics(
                "no accepted moves over the entire adaptation window".into(),
            ));
        }
        if step >= burn {
            kept.push(theta.clone());
        }
    }
    Ok(McmcResult {
        chain: kept,
        acceptance: accepts as f64 / steps as f64,
        scale,
    })
}

fn mcmc_net(
    net: &NetPrior,
    lik: &Likelihood,
    steps: usize,
    burn: usize,
    rng: &mut impl Rng,
) -> Result<McmcResult> {
    if net.count() == 1 {
        let atom = net.atom(&vec![0; net.j]);
        return Ok(McmcResult {
            chain: vec![atom; steps - burn],
            acceptance: 1.0,
            scale: 0.0,
        });
    }
    // Start at the posterior mode: a random prior atom can sit hundreds of
    // lattice moves away once the likelihood concentrates.
    let mut k = lattice_mode(net, lik)?;
    let mut cur = lik.log_lik(&net.atom(&k))?;
    let mut accepts = 0usize;
    let mut kept = Vec::with_capacity(steps - burn);
    for step in 0..steps {
        // Neighbor jump: +1 on one coordinate, -1 on another (symmetric).
        let i = rng.gen_range(0..net.j);
        let mut l = rng.gen_range(0..net.j - 1);
        if l >= i {
            l += 1;
        }
        let mut cand = k.clone();
        cand[i] += 1;
        cand[l] -= 1;
        if net.contains_indices(&cand) {
            let v = lik.log_lik(&net.atom(&cand))?;
            let a = v - cur;
            if a >= 0.0 || rng.gen::<f64>() < a.exp() {
                k = cand;
                cur = v;
                accepts += 1;
            }
        }
        if step >= burn {
            kept.push(net.atom(&k));
        }
    }
    if accepts == 0 && steps >= 100 {
        return Err(Error::Diagnostics(
            "no accepted lattice moves over the whole chain".into(),
        ));
    }
    Ok(McmcResult {
        chain: kept,
        acceptance: accepts as f64 / steps as f64,
        scale: net.spacing,
    })
}

/// The full posterior summary over a hierarchical prior: per-model evidence,
/// model-index posterior, and within-model chains.
#[derive(Debug, Clone)]
pub struct PosteriorSummary {
    pub model_posterior: Vec<f64>,
    pub evidences: Vec<EvidenceEstimate>,
    pub chains: Vec<Vec<Vec<f64>>>,
    pub acceptance: Vec<f64>,
}

pub fn posterior_summary(
    hp: &HierarchicalPrior,
    data: &[f64],
    ev_opts: &EvidenceOptions,
    mc_opts: &McmcOptions,
    rng: &mut impl Rng,
) -> Result<PosteriorSummary> {
    let (model_posterior, evidences) = model_posterior(hp, data, ev_opts, rng)?;
    let mut chains = Vec::with_capacity(hp.models.len());
    let mut acceptance = Vec::with_capacity(hp.models.len());
    for m in &hp.models {
        let res = mcmc_theta(&m.basis, &m.prior, data, mc_opts.steps, mc_opts, rng)?;
        acceptance.push(res.acceptance);
        chains.push(res.chain);
    }
    Ok(PosteriorSummary {
        model_posterior,
        evidences,
        chains,
        acceptance,
    })
}

impl PosteriorSummary {
    /// Structured text report (per-model evidence, posterior weight,
    /// acceptance rate).
    pub fn report(&self, hp: &HierarchicalPrior) -> String {
        let mut out = String::from("model  alpha  J  log_evidence  std_error  posterior  acceptance\n");
        for (i, m) in hp.models.iter().enumerate() {
            out.push_str(&format!(
                "{i}  {}  {}  {:.6}  {:.6}  {:.6}  {:.4}\n",
                m.alpha,
                m.j,
                self.evidences[i].log_z,
                self.evidences[i].std_error,
                self.model_posterior[i],
                self.acceptance[i],
            ));
        }
        out
    }
}

/// Hellinger distances from the truth for every (thinned) chain draw of
/// every model, paired with the model posterior weights.
pub fn chain_distances(
    ps: &PosteriorSummary,
    hp: &HierarchicalPrior,
    p0: &TrueDensity,
    rule: &QuadratureRule,
    thin: usize,
) -> Result<Vec<(f64, Vec<f64>)>> {
    let sqrt_p0: Vec<f64> = rule.nodes().iter().map(|&x| p0.density(x).sqrt()).collect();
    let mut out = Vec::with_capacity(hp.models.len());
    for (i, m) in hp.models.iter().enumerate() {
        let chain = &ps.chains[i];
        if chain.is_empty() {
            return Err(Error::InvalidState(format!(
                "empty chain for model index {i}"
            )));
        }
        let cache = NormalizerCache::new(&m.basis, rule.clone())?;
        let node_basis: Vec<(usize, Vec<f64>)> = rule
            .nodes()
            .iter()
            .map(|&x| m.basis.eval_nonzero(x))
            .collect::<Result<Vec<_>>>()?;
        let mut dists = Vec::new();
        for theta in chain.iter().step_by(thin.max(1)) {
            let c = cache.normalizer(theta)?;
            let mut h2 = 0.0;
            for ((&w, &sp0), (first, vals)) in rule
                .weights()
                .iter()
                .zip(&sqrt_p0)
                .zip(&node_basis)
            {
                let lin: f64 = vals
                    .iter()
                    .enumerate()
                    .map(|(t, v)| v * theta[first + t])
                    .sum();
                let d = (0.5 * (lin - c)).exp() - sp0;
                h2 += w * d * d;
            }
            dists.push(h2.max(0.0).sqrt());
        }
        out.push((ps.model_posterior[i], dists));
    }
    Ok(out)
}

/// Posterior mass of `{p : h(p, p0) > radius}` under the mixture of chains,
/// with a binomial-style standard error.
pub fn posterior_ball_mass(
    ps: &PosteriorSummary,
    hp: &HierarchicalPrior,
    p0: &TrueDensity,
    rule: &QuadratureRule,
    radius: f64,
) -> Result<(f64, f64)> {
    let groups = chain_distances(ps, hp, p0, rule, 1)?;
    let mut mass = 0.0;
    let mut var = 0.0;
    for (w, dists) in &groups {
        let n = dists.len() as f64;
        let frac = dists.iter().filter(|&&d| d > radius).count() as f64 / n;
        mass += w * frac;
        var += w * w * frac * (1.0 - frac) / n;
    }
    Ok((mass, var.sqrt()))
}

/// The `quantile`-quantile of `h(p, p0)` under the posterior mixture of
/// chains (weights = model posterior).
pub fn contraction_radius(
    ps: &PosteriorSummary,
    hp: &HierarchicalPrior,
    p0: &TrueDensity,
    rule: &QuadratureRule,
    quantile: f64,
) -> Result<f64> {
    if !(0.0..=1.0).contains(&quantile) {
        return Err(Error::InvalidInput(format!(
            "quantile {quantile} outside [0, 1]"
        )));
    }
    let groups = chain_distances(ps, hp, p0, rule, 1)?;
    // Weighted quantile over the pooled draws.
    let mut pairs: Vec<(f64, f64)> = Vec::new();
    for (w, dists) in &groups {
        let per = w / dists.len() as f64;
        for &d in dists {
            pairs.push((d, per));
        }
    }
    pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    let mut acc = 0.0;
    for (d, w) in &pairs {
        acc += w;
        if acc >= quantile {
            return Ok(*d);
        }
    }
    Ok(pairs.last().map(|p| p.0).unwrap_or(0.0))
}
