//! Within-model coefficient priors (flat boxes and discrete coefficient
//! nets), model-weight schemes, rate and dimension schedules, and assembly of
//! the hierarchical model-averaging prior.

use crate::basis::{centered, SplineBasis};
use crate::error::{Error, Result};
use rand::Rng;
use std::sync::Arc;

/// Atom-materialization cap for discrete nets.
pub const DEFAULT_ATOM_CAP: u128 = 500_000;

/// `J = floor(n^{1/(2 alpha + 1)})`, clamped below at the spline order `q` so
/// the basis exists.
pub fn dimension_schedule(alpha: f64, n: usize, q: usize) -> Result<usize> {
    if alpha <= 0.0 || !alpha.is_finite() {
        return Err(Error::InvalidInput(format!(
            "smoothness index {alpha} must be positive"
        )));
    }
    if n < 1 {
        return Err(Error::InvalidInput("sample size must be at least 1".into()));
    }
    // Guard the floor against powf rounding (1000^{1/3} = 9.9999...).
    let j = ((n as f64).powf(1.0 / (2.0 * alpha + 1.0)) + 1e-9).floor() as usize;
    Ok(j.max(q))
}

/// `eps = n^{-alpha/(2 alpha + 1)}`, optionally times `sqrt(log n)`.
pub fn rate_schedule(alpha: f64, n: usize, log_factor: bool) -> Result<f64> {
    if alpha <= 0.0 || !alpha.is_finite() {
        return Err(Error::InvalidInput(format!(
            "smoothness index {alpha} must be positive"
        )));
    }
    if n < 2 {
        return Err(Error::InvalidInput("sample size must be at least 2".into()));
    }
    let base = (n as f64).powf(-alpha / (2.0 * alpha + 1.0));
    Ok(if log_factor {
        base * (n as f64).ln().sqrt()
    } else {
        base
    })
}

/// Uniform prior on the centered coefficient box slice
/// `{theta: theta' 1 = 0, ||theta||_inf <= M}`, optionally perturbed by a
/// bounded log-density (the `d < D` generality).
#[derive(Clone)]
pub struct FlatBoxPrior {
    pub j: usize,
    pub m: f64,
    /// Optional bounded log-density tilt relative to uniform; its sup bound.
    perturbation: Option<(Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>, f64)>,
}

impl std::fmt::Debug for FlatBoxPrior {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FlatBoxPrior")
            .field("j", &self.j)
            .field("m", &self.m)
            .field("perturbed", &self.perturbation.is_some())
            .finish()
    }
}

/// The flat (possibly tilted) prior of the continuous construction.
pub fn flat_prior(j: usize, m: f64) -> Result<FlatBoxPrior> {
    if j < 1 || m <= 0.0 || !m.is_finite() {
        return Err(Error::InvalidInput(format!(
            "invalid flat prior parameters J = {j}, M = {m}"
        )));
    }
    Ok(FlatBoxPrior {
        j,
        m,
        perturbation: None,
    })
}

impl FlatBoxPrior {
    /// Attach a bounded log-density tilt; `bound` must dominate `|tilt|`.
    pub fn with_perturbation(
        mut self,
        tilt: Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>,
        bound: f64,
    ) -> Self {
        self.perturbation = Some((tilt, bound));
        self
    }

    pub fn contains(&self, theta: &[f64]) -> bool {
        theta.len() == self.j
            && theta.iter().sum::<f64>().abs() < 1e-9
            && theta.iter().all(|t| t.abs() <= self.m + 1e-12)
    }

    /// Unnormalized log-density on the slice (0 for the uniform case).
    pub fn log_density_unnorm(&self, theta: &[f64]) -> f64 {
        if !self.contains(theta) {
            return f64::NEG_INFINITY;
        }
        match &self.perturbation {
            Some((tilt, _)) => tilt(theta),
            None => 0.0,
        }
    }

    /// Exact uniform draw from the slice: the first `J - 1` coordinates are
    /// free and uniform on the box, the last is determined by centering;
    /// draws whose determined coordinate leaves the box are rejected. The
    /// coordinate projection of the slice is affine with constant Jacobian,
    /// so the output law is uniform on the slice itself.
    pub fn sample(&self, rng: &mut impl Rng) -> Vec<f64> {
        loop {
            let mut theta: Vec<f64> = (0..self.j - 1)
                .map(|_| rng.gen_range(-self.m..=self.m))
                .collect();
            let last = -theta.iter().sum::<f64>();
            if self.j > 1 && last.abs() > self.m {
                continue;
            }
            theta.push(if self.j == 1 { 0.0 } else { last });
            if let Some((tilt, bound)) = &self.perturbation {
                let accept = (tilt(&theta) - bound).exp();
                if rng.gen::<f64>() >= accept {
                    continue;
                }
            }
            return theta;
        }
    }
}

/// Uniform prior on the centered lattice
/// `{s k : k integer vector, sum k = 0, ||s k||_inf <= M}`, stored
/// implicitly: atom counts come from a convolution table, so the prior is
/// usable at dimensions where the atom list itself is astronomically large.
#[derive(Debug, Clone)]
pub struct NetPrior {
    pub j: usize,
    pub m: f64,
    /// The sup-norm mesh the spacing was derived from.
    pub epsilon: f64,
    pub spacing: f64,
    kmax: i64,
    /// `ways[c][t + c*kmax]` = number of c-tuples in `[-kmax, kmax]` summing to t.
    ways: Vec<Vec<u128>>,
    count: u128,
}

/// The discrete net prior with spacing `eps / 2`; the spacing bounds the
/// sup-norm gap between the log-densities of adjacent atoms by `eps` via the
/// norm equivalence of the B-spline basis.
pub fn net_prior(j: usize, m: f64, eps: f64) -> Result<NetPrior> {
    if eps <= 0.0 || !eps.is_finite() {
        return Err(Error::InvalidInput(format!("net mesh {eps} must be positive")));
    }
    if eps >= 2.0 * m {
        // The whole box fits in one mesh cell: a single atom at the origin.
        return NetPrior::with_spacing(j, m, 2.0 * m, eps);
    }
    NetPrior::with_spacing(j, m, eps / 2.0, eps)
}

impl NetPrior {
    pub fn with_spacing(j: usize, m: f64, spacing: f64, epsilon: f64) -> Result<Self> {
        if j < 1 || m <= 0.0 || spacing <= 0.0 {
            return Err(Error::InvalidInput(format!(
                "invalid net parameters J = {j}, M = {m}, spacing = {spacing}"
            )));
        }
        let kmax = (m / spacing + 1e-9).floor() as i64;
        let width = (2 * kmax + 1) as usize;
        // ways[c] indexed by t + c*kmax for t in [-c*kmax, c*kmax].
        let mut ways: Vec<Vec<u128>> = Vec::with_capacity(j + 1);
        ways.push(vec![1u128]);
        for c in 1..=j {
            let span = 2 * c as i64 * kmax + 1;
            let mut next = vec![0u128; span as usize];
            let prev = &ways[c - 1];
            for (idx, &w) in prev.iter().enumerate() {
                if w == 0 {
                    continue;
                }
                for step in 0..width {
                    let nidx = idx + step;
                    next[nidx] = next[nidx].checked_add(w).ok_or_else(|| {
                        Error::Resource(format!(
                            "atom count overflows 128 bits at J = {j}, kmax = {kmax}"
                        ))
                    })?;
                }
            }
            ways.push(next);
        }
        let count = ways[j][(j as i64 * kmax) as usize];
        let net = Self {
            j,
            m,
            epsilon,
            spacing,
            kmax,
            ways,
            count,
        };
        // Entropy sanity: log N <= J log(6 M / eps) for eps <= 2M.
        if epsilon <= 2.0 * m {
            debug_assert!(net.log_count() <= j as f64 * (6.0 * m / epsilon).ln() + 1e-9);
        }
        Ok(net)
    }

    pub fn kmax(&self) -> i64 {
        self.kmax
    }

    /// Number of atoms.
    pub fn count(&self) -> u128 {
        self.count
    }

    pub fn log_count(&self) -> f64 {
        (self.count as f64).ln()
    }

    /// Log prior mass of a single atom.
    pub fn log_atom_mass(&self) -> f64 {
        -self.log_count()
    }

    /// Number of ways `coords` lattice coordinates in `[-kmax, kmax]` can sum
    /// to `t` (the partial convolution table).
    pub fn ways(&self, coords: usize, t: i64) -> u128 {
        if coords > self.j {
            return 0;
        }
        let shift = coords as i64 * self.kmax;
        if t < -shift || t > shift {
            return 0;
        }
        self.ways[coords][(t + shift) as usize]
    }

    pub fn contains_indices(&self, k: &[i64]) -> bool {
        k.len() == self.j
            && k.iter().all(|&ki| ki.abs() <= self.kmax)
            && k.iter().sum::<i64>() == 0
    }

    /// The coefficient vector of a lattice point.
    pub fn atom(&self, k: &[i64]) -> Vec<f64> {
        k.iter().map(|&ki| ki as f64 * self.spacing).collect()
    }

    /// Exact uniform draw of a lattice point, coordinate by coordinate using
    /// the partial counts (no rejection, no float bias).
    pub fn sample_indices(&self, rng: &mut impl Rng) -> Vec<i64> {
        let mut k = Vec::with_capacity(self.j);
        let mut remaining_sum = 0i64;
        for c in (1..=self.j).rev() {
            let total = self.ways(c, -remaining_sum);
            let mut target = rng.gen_range(0..total);
            let mut chosen = -self.kmax;
            for ki in -self.kmax..=self.kmax {
                let w = self.ways(c - 1, -remaining_sum - ki);
                if target < w {
                    chosen = ki;
                    break;
                }
                target -= w;
            }
            k.push(chosen);
            remaining_sum += chosen;
        }
        k
    }

    pub fn sample(&self, rng: &mut impl Rng) -> Vec<f64> {
        let k = self.sample_indices(rng);
        self.atom(&k)
    }

    /// Materialize every atom; refuses above `cap` since the lattice may be
    /// astronomically large.
    pub fn atoms_capped(&self, cap: u128) -> Result<Vec<Vec<f64>>> {
        if self.count > cap {
            return Err(Error::Resource(format!(
                "net has {} atoms, exceeding the cap {cap}",
                self.count
            )));
        }
        let mut out = Vec::with_capacity(self.count as usize);
        let mut k = vec![0i64; self.j];
        self.enumerate_rec(0, 0, &mut k, &mut out);
        Ok(out)
    }

    pub fn atoms(&self) -> Result<Vec<Vec<f64>>> {
        self.atoms_capped(DEFAULT_ATOM_CAP)
    }

    fn enumerate_rec(&self, pos: usize, sum: i64, k: &mut [i64], out: &mut Vec<Vec<f64>>) {
        if pos == self.j {
            if sum == 0 {
                out.push(self.atom(k));
            }
            return;
        }
        // Prune branches that cannot return to zero sum.
        let slack = (self.j - pos - 1) as i64 * self.kmax;
        for ki in -self.kmax..=self.kmax {
            if (sum + ki).abs() <= slack || (pos + 1 == self.j && sum + ki == 0) {
                k[pos] = ki;
                self.enumerate_rec(pos + 1, sum + ki, k, out);
            }
        }
    }

    /// Lattice point nearest (in sup norm) to a centered coefficient vector:
    /// round each coordinate, then repair the sum-zero constraint one step at
    /// a time at the coordinates with the most rounding slack.
    pub fn nearest_indices(&self, theta: &[f64]) -> Result<Vec<i64>> {
        if theta.len() != self.j {
            return Err(Error::InvalidInput(format!(
                "coefficient length {} does not match net dimension {}",
                theta.len(),
                self.j
            )));
        }
        let scaled: Vec<f64> = theta.iter().map(|t| t / self.spacing).collect();
        let mut k: Vec<i64> = scaled
            .iter()
            .map(|s| (s.round() as i64).clamp(-self.kmax, self.kmax))
            .collect();
        let mut deficit: i64 = -k.iter().sum::<i64>();
        while deficit != 0 {
            let step = deficit.signum();
            // Move the coordinate whose rounding residual most favors the step.
            let mut best = None;
            let mut best_gain = f64::NEG_INFINITY;
            for (i, (&ki, &si)) in k.iter().zip(&scaled).enumerate() {
                let next = ki + step;
                if next.abs() > self.kmax {
                    continue;
                }
                let gain = -((next as f64 - si).abs() - (ki as f64 - si).abs());
                if gain > best_gain {
                    best_gain = gain;
                    best = Some(i);
                }
            }
            let i = best.ok_or_else(|| {
                Error::InvalidState("cannot repair lattice sum within the box".into())
            })?;
            k[i] += step;
            deficit -= step;
        }
        Ok(k)
    }
}

/// A coefficient prior of either construction.
#[derive(Debug, Clone)]
pub enum CoefficientPrior {
    FlatBox(FlatBoxPrior),
    DiscreteNet(NetPrior),
}

impl CoefficientPrior {
    pub fn j(&self) -> usize {
        match self {
            Self::FlatBox(p) => p.j,
            Self::DiscreteNet(p) => p.j,
        }
    }

    pub fn m(&self) -> f64 {
        match self {
            Self::FlatBox(p) => p.m,
            Self::DiscreteNet(p) => p.m,
        }
    }

    pub fn sample(&self, rng: &mut impl Rng) -> Vec<f64> {
        match self {
            Self::FlatBox(p) => p.sample(rng),
            Self::DiscreteNet(p) => p.sample(rng),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WeightKind {
    /// Fixed weights `mu_alpha`.
    Constant,
    /// `lambda proportional to mu_alpha exp(-C n eps^2)`; the exponent uses
    /// the exact `n^{1/(2 alpha + 1)}` rather than the floored dimension, so
    /// downstream log-identities hold without floor noise.
    Exponential,
    /// `lambda proportional to prod_{gamma < alpha} (C eps_gamma)^{J_gamma}`,
    /// upweighting the larger, less regular models.
    Decreasing,
}

#[derive(Debug, Clone)]
pub struct WeightScheme {
    pub kind: WeightKind,
    /// Base measure over the index set, aligned with the index list.
    pub mu: Vec<f64>,
    pub c: f64,
}

impl WeightScheme {
    pub fn constant(mu: Vec<f64>) -> Self {
        Self {
            kind: WeightKind::Constant,
            mu,
            c: 0.0,
        }
    }

    pub fn exponential(mu: Vec<f64>, c: f64) -> Self {
        Self {
            kind: WeightKind::Exponential,
            mu,
            c,
        }
    }

    pub fn decreasing(c: f64) -> Self {
        Self {
            kind: WeightKind::Decreasing,
            mu: Vec::new(),
            c,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ModelWeights {
    pub weights: Vec<f64>,
    /// Unnormalized log-weights (useful for exact ratio audits).
    pub log_unnorm: Vec<f64>,
    /// Set when a decreasing-scheme factor `C eps >= 1` flips a log sign; the
    /// construction presumes small `C eps` and the result should be read with
    /// care.
    pub sign_warning: bool,
}

/// Normalized model weights for an index set at sample size `n`; computed in
/// log space and normalized by max-subtraction.
pub fn model_weights(
    scheme: &WeightScheme,
    indices: &[f64],
    n: usize,
    q: usize,
    log_factor: bool,
) -> Result<ModelWeights> {
    if indices.is_empty() {
        return Err(Error::InvalidInput("empty index set".into()));
    }
    let needs_mu = !matches!(scheme.kind, WeightKind::Decreasing);
    if needs_mu && scheme.mu.len() != indices.len() {
        return Err(Error::InvalidInput(format!(
            "base measure has {} entries for {} indices",
            scheme.mu.len(),
            indices.len()
        )));
    }
    if needs_mu && scheme.mu.iter().any(|&m| m <= 0.0) {
        return Err(Error::InvalidInput("base measure must be positive".into()));
    }
    let mut sign_warning = false;
    let log_unnorm: Vec<f64> = match scheme.kind {
        WeightKind::Constant => scheme.mu.iter().map(|m| m.ln()).collect(),
        WeightKind::Exponential => indices
            .iter()
            .zip(&scheme.mu)
            .map(|(&alpha, &mu)| {
                let eps = rate_schedule(alpha, n, log_factor)?;
                Ok(mu.ln() - scheme.c * n as f64 * eps * eps)
            })
            .collect::<Result<_>>()?,
        WeightKind::Decreasing => {
            if indices.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::InvalidInput(
                    "decreasing scheme needs strictly increasing indices".into(),
                ));
            }
            let mut acc = 0.0;
            let mut out = Vec::with_capacity(indices.len());
            out.push(0.0);
            for gamma_pos in 0..indices.len() - 1 {
                let gamma = indices[gamma_pos];
                let eps = rate_schedule(gamma, n, log_factor)?;
                let factor = scheme.c * eps;
                if factor >= 1.0 {
                    sign_warning = true;
                }
                let j = dimension_schedule(gamma, n, q)?;
                acc += j as f64 * factor.ln();
                out.push(acc);
            }
            out
        }
    };
    let m = log_unnorm.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = log_unnorm.iter().map(|l| (l - m).exp()).collect();
    let z: f64 = exp.iter().sum();
    let weights: Vec<f64> = exp.iter().map(|e| e / z).collect();
    debug_assert!((weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    Ok(ModelWeights {
        weights,
        log_unnorm,
        sign_warning,
    })
}

/// Which coefficient-prior construction the hierarchy uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PriorKindSpec {
    Flat,
    Net,
}

/// One mixture component of the hierarchical prior.
#[derive(Debug, Clone)]
pub struct HierarchicalModel {
    pub alpha: f64,
    pub j: usize,
    pub epsilon: f64,
    pub weight: f64,
    pub log_weight_unnorm: f64,
    pub basis: Arc<SplineBasis>,
    pub prior: CoefficientPrior,
}

/// The full model-averaging prior: a finite index set, per-index dimensions,
/// rates, weights and coefficient priors.
#[derive(Debug, Clone)]
pub struct HierarchicalPrior {
    pub models: Vec<HierarchicalModel>,
    pub n: usize,
    pub q: usize,
    pub log_factor: bool,
    pub sign_warning: bool,
}

pub fn assemble(
    indices: &[f64],
    n: usize,
    scheme: &WeightScheme,
    prior_kind: PriorKindSpec,
    m: f64,
    q: usize,
    log_factor: bool,
) -> Result<HierarchicalPrior> {
    let w = model_weights(scheme, indices, n, q, log_factor)?;
    let mut models = Vec::with_capacity(indices.len());
    for (i, &alpha) in indices.iter().enumerate() {
        let j = dimension_schedule(alpha, n, q)?;
        let epsilon = rate_schedule(alpha, n, log_factor)?;
        let basis = Arc::new(SplineBasis::new(q, j + 1 - q)?);
        let prior = match prior_kind {
            PriorKindSpec::Flat => CoefficientPrior::FlatBox(flat_prior(j, m)?),
            PriorKindSpec::Net => CoefficientPrior::DiscreteNet(net_prior(j, m, epsilon)?),
        };
        models.push(HierarchicalModel {
            alpha,
            j,
            epsilon,
            weight: w.weights[i],
            log_weight_unnorm: w.log_unnorm[i],
            basis,
            prior,
        });
    }
    Ok(HierarchicalPrior {
        models,
        n,
        q,
        log_factor,
        sign_warning: w.sign_warning,
    })
}

impl HierarchicalPrior {
    /// Draw an index by weight, then a coefficient vector from its prior;
    /// returns (position in the index list, theta).
    pub fn sample(&self, rng: &mut impl Rng) -> (usize, Vec<f64>) {
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        let mut pick = self.models.len() - 1;
        for (i, m) in self.models.iter().enumerate() {
            acc += m.weight;
            if u < acc {
                pick = i;
                break;
            }
        }
        let theta = self.models[pick].prior.sample(rng);
        (pick, centered(&theta))
    }

    /// Position of the designated truth index, by exact value match.
    pub fn position_of(&self, alpha: f64) -> Option<usize> {
        self.models.iter().position(|m| m.alpha == alpha)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn dimension_schedule_examples() {
        assert_eq!(dimension_schedule(1.0, 1000, 4).unwrap(), 10);
        assert_eq!(dimension_schedule(2.0, 100_000, 4).unwrap(), 10);
        assert_eq!(dimension_schedule(0.5, 16, 4).unwrap(), 4);
        // Clamped below at q.
        assert_eq!(dimension_schedule(3.0, 10, 4).unwrap(), 4);
        assert!(dimension_schedule(0.0, 100, 4).is_err());
        assert!(dimension_schedule(-1.0, 100, 4).is_err());
    }

    #[test]
    fn rate_schedule_examples() {
        let e = rate_schedule(1.0, 10_000, false).unwrap();
        assert!((e - 0.046416).abs() < 1e-6, "e = {e}");
        let e = rate_schedule(2.0, 10_000, false).unwrap();
        assert!((e - 0.025119).abs() < 1e-6, "e = {e}");
        let n = std::f64::consts::E.powi(2).round() as usize; // e^2 ~ 7.39 -> 7
        let _ = n;
        // Exact plug-in at n where log n is clean: n = 8, beta = 1.
        let e = rate_schedule(1.0, 8, true).unwrap();
        assert!((e - 8f64.powf(-1.0 / 3.0) * 8f64.ln().sqrt()).abs() < 1e-15);
    }

    #[test]
    fn flat_sampler_stays_on_slice() {
        let p = flat_prior(2, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            let th = p.sample(&mut rng);
            assert!((th[0] + th[1]).abs() < 1e-12);
            assert!(th[0].abs() <= 1.0 && th[1].abs() <= 1.0);
        }
    }

    #[test]
    fn flat_sampler_mean_zero() {
        let p = flat_prior(4, 1.5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = 20_000;
        let mut mean = vec![0.0; 4];
        for _ in 0..n {
            let th = p.sample(&mut rng);
            for (m, t) in mean.iter_mut().zip(&th) {
                *m += t / n as f64;
            }
        }
        // Coordinate sd is below M; 3 standard errors with sd <= M.
        let tol = 3.0 * 1.5 / (n as f64).sqrt();
        for m in &mean {
            assert!(m.abs() < tol, "mean {m} vs tol {tol}");
        }
    }

    #[test]
    fn flat_ball_fraction_matches_rejection_oracle() {
        // J = 3: compare P(||theta - theta0|| <= r) between the sampler and
        // an independent rejection oracle that samples the full box and keeps
        // near-slice points (thin-slab approximation of the surface measure).
        let p = flat_prior(3, 1.0).unwrap();
        let theta0 = [0.2, -0.3, 0.1];
        let r = 0.6;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 40_000;
        let mut hits = 0usize;
        for _ in 0..n {
            let th = p.sample(&mut rng);
            let d: f64 = th
                .iter()
                .zip(&theta0)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            if d <= r {
                hits += 1;
            }
        }
        let frac = hits as f64 / n as f64;

        let mut oracle_rng = ChaCha8Rng::seed_from_u64(4);
        let slab = 0.004;
        let mut o_hits = 0usize;
        let mut o_total = 0usize;
        while o_total < 40_000 {
            let th: Vec<f64> = (0..3).map(|_| oracle_rng.gen_range(-1.0..1.0)).collect();
            if th.iter().sum::<f64>().abs() > slab {
                continue;
            }
            o_total += 1;
            let d: f64 = th
                .iter()
                .zip(&theta0)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            if d <= r {
                o_hits += 1;
            }
        }
        let o_frac = o_hits as f64 / o_total as f64;
        let se = (frac * (1.0 - frac) / n as f64).sqrt()
            + (o_frac * (1.0 - o_frac) / o_total as f64).sqrt();
        assert!(
            (frac - o_frac).abs() < 3.0 * se + 0.01,
            "sampler {frac} vs oracle {o_frac} (se {se})"
        );
    }

    #[test]
    fn net_single_atom_when_mesh_covers_box() {
        let p = net_prior(4, 1.0, 2.5).unwrap();
        assert_eq!(p.count(), 1);
        assert_eq!(p.atoms().unwrap(), vec![vec![0.0; 4]]);
    }

    #[test]
    fn net_j2_enumeration_example() {
        let p = NetPrior::with_spacing(2, 1.0, 0.5, 1.0).unwrap();
        assert_eq!(p.count(), 5);
        let mut atoms = p.atoms().unwrap();
        atoms.sort_by(|a, b| a[0].partial_cmp(&b[0]).unwrap());
        let expect: Vec<Vec<f64>> = [-1.0, -0.5, 0.0, 0.5, 1.0]
            .iter()
            .map(|&t| vec![t, -t])
            .collect();
        assert_eq!(atoms, expect);
    }

    #[test]
    fn net_count_matches_enumeration() {
        for (j, m, s) in [(3usize, 1.0, 0.4), (4, 1.5, 0.5), (5, 1.0, 0.7)] {
            let p = NetPrior::with_spacing(j, m, s, 2.0 * s).unwrap();
            assert_eq!(p.count(), p.atoms().unwrap().len() as u128);
        }
    }

    #[test]
    fn net_atoms_centered_and_separated() {
        let p = NetPrior::with_spacing(3, 1.0, 0.5, 1.0).unwrap();
        let atoms = p.atoms().unwrap();
        for a in &atoms {
            assert!(a.iter().sum::<f64>().abs() < 1e-12);
            assert!(a.iter().all(|t| t.abs() <= 1.0 + 1e-12));
        }
        for (i, a) in atoms.iter().enumerate() {
            for b in atoms.iter().skip(i + 1) {
                let d = a
                    .iter()
                    .zip(b)
                    .map(|(x, y)| (x - y).abs())
                    .fold(0.0f64, f64::max);
                assert!(d >= p.spacing / 2.0, "atoms too close: {d}");
            }
        }
    }

    #[test]
    fn net_sampler_is_uniform() {
        let p = NetPrior::with_spacing(2, 1.0, 0.5, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 25_000;
        let mut counts = std::collections::BTreeMap::new();
        for _ in 0..n {
            let k = p.sample_indices(&mut rng);
            *counts.entry(k).or_insert(0usize) += 1;
        }
        assert_eq!(counts.len(), 5);
        for (_, c) in counts {
            let f = c as f64 / n as f64;
            let se = (0.2 * 0.8 / n as f64).sqrt();
            assert!((f - 0.2).abs() < 4.0 * se, "freq {f}");
        }
    }

    #[test]
    fn net_covers_box_targets() {
        // Every centered theta in the box has an atom within eps in sup norm.
        let eps = 0.8;
        let p = net_prior(3, 1.0, eps).unwrap();
        let atoms = p.atoms().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let flat = flat_prior(3, 1.0).unwrap();
        for _ in 0..100 {
            let target = flat.sample(&mut rng);
            let brute = atoms
                .iter()
                .map(|a| {
                    a.iter()
                        .zip(&target)
                        .map(|(x, y)| (x - y).abs())
                        .fold(0.0f64, f64::max)
                })
                .fold(f64::INFINITY, f64::min);
            assert!(brute <= eps + 1e-12, "nearest atom at {brute}");
            // The constructive nearest-index search is at least as good up to
            // one extra repair step.
            let k = p.nearest_indices(&target).unwrap();
            assert!(p.contains_indices(&k));
            let d = p
                .atom(&k)
                .iter()
                .zip(&target)
                .map(|(x, y)| (x - y).abs())
                .fold(0.0f64, f64::max);
            assert!(d <= eps + 1e-12, "constructive nearest at {d}");
        }
    }

    #[test]
    fn weights_single_index_is_one() {
        for scheme in [
            WeightScheme::constant(vec![3.0]),
            WeightScheme::exponential(vec![1.0], 1.0),
            WeightScheme::decreasing(10.0),
        ] {
            let w = model_weights(&scheme, &[1.0], 500, 4, false).unwrap();
            assert!((w.weights[0] - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn weights_constant_thirds() {
        let w = model_weights(
            &WeightScheme::constant(vec![1.0, 1.0, 1.0]),
            &[0.5, 1.0, 2.0],
            100,
            4,
            false,
        )
        .unwrap();
        for v in &w.weights {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn weights_exponential_matches_direct_arithmetic() {
        let indices = [0.5, 1.0, 2.0];
        let n = 1000usize;
        let w = model_weights(
            &WeightScheme::exponential(vec![1.0, 1.0, 1.0], 1.0),
            &indices,
            n,
            4,
            false,
        )
        .unwrap();
        // Oracle: weights proportional to e^{-n eps^2} = e^{-n^{1/(2a+1)}}.
        let raw: Vec<f64> = indices
            .iter()
            .map(|&a| (-(n as f64).powf(1.0 / (2.0 * a + 1.0))).exp())
            .collect();
        let z: f64 = raw.iter().sum();
        for (got, want) in w.weights.iter().zip(raw.iter().map(|r| r / z)) {
            assert!((got - want).abs() < 1e-12, "{got} vs {want}");
        }
        // Smaller models (larger alpha) upweighted: nondecreasing in alpha.
        assert!(w.weights.windows(2).all(|p| p[1] >= p[0]));
    }

    #[test]
    fn weights_decreasing_scheme_monotone() {
        // Monotonicity presumes C eps < 1 for every index, as in the
        // construction's large-n regime.
        let w = model_weights(
            &WeightScheme::decreasing(1.0),
            &[0.5, 1.0, 2.0],
            2000,
            4,
            false,
        )
        .unwrap();
        assert!(!w.sign_warning);
        assert!(
            w.weights.windows(2).all(|p| p[1] <= p[0] + 1e-15),
            "{:?}",
            w.weights
        );
        assert!(w.weights.iter().all(|&v| v > 0.0));
    }

    #[test]
    fn weights_decreasing_sign_warning() {
        // C eps >= 1 at small n with a big constant: flagged but computed.
        let w = model_weights(
            &WeightScheme::decreasing(100.0),
            &[0.5, 1.0],
            50,
            4,
            false,
        )
        .unwrap();
        assert!(w.sign_warning);
        // At large n the factors shrink below 1 and the flag clears.
        let w = model_weights(
            &WeightScheme::decreasing(2.0),
            &[0.5, 1.0],
            100_000,
            4,
            false,
        )
        .unwrap();
        assert!(!w.sign_warning);
    }

    #[test]
    fn weights_invariant_under_mu_rescaling() {
        let a = model_weights(
            &WeightScheme::exponential(vec![1.0, 2.0, 3.0], 0.5),
            &[0.5, 1.0, 2.0],
            777,
            4,
            false,
        )
        .unwrap();
        let b = model_weights(
            &WeightScheme::exponential(vec![10.0, 20.0, 30.0], 0.5),
            &[0.5, 1.0, 2.0],
            777,
            4,
            false,
        )
        .unwrap();
        for (x, y) in a.weights.iter().zip(&b.weights) {
            assert!((x - y).abs() < 1e-14);
        }
    }

    #[test]
    fn assemble_two_indices_degenerate_weight() {
        // A huge exponential constant drives all weight to the smallest
        // model (the largest index): n eps^2 is much bigger at alpha = 0.25.
        let hp = assemble(
            &[0.25, 4.0],
            1000,
            &WeightScheme::exponential(vec![1.0, 1.0], 50.0),
            PriorKindSpec::Flat,
            1.0,
            4,
            false,
        )
        .unwrap();
        assert!(hp.models[1].weight > 1.0 - 1e-12);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..10_000 {
            let (idx, theta) = hp.sample(&mut rng);
            assert_eq!(idx, 1);
            assert_eq!(theta.len(), hp.models[1].j);
        }
    }

    #[test]
    fn assemble_index_frequencies_match_weights() {
        let hp = assemble(
            &[0.5, 1.0, 2.0],
            200,
            &WeightScheme::exponential(vec![1.0, 1.0, 1.0], 0.3),
            PriorKindSpec::Net,
            1.0,
            4,
            false,
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let n = 20_000;
        let mut counts = vec![0usize; 3];
        for _ in 0..n {
            let (idx, _) = hp.sample(&mut rng);
            counts[idx] += 1;
        }
        for (c, m) in counts.iter().zip(&hp.models) {
            let f = *c as f64 / n as f64;
            let se = (m.weight * (1.0 - m.weight) / n as f64).sqrt();
            assert!((f - m.weight).abs() < 3.5 * se, "freq {f} vs {}", m.weight);
        }
    }

    #[test]
    fn assemble_dimensions_follow_schedule() {
        let hp = assemble(
            &[1.0],
            1000,
            &WeightScheme::constant(vec![1.0]),
            PriorKindSpec::Net,
            1.0,
            4,
            false,
        )
        .unwrap();
        assert_eq!(hp.models[0].j, 10);
        assert_eq!(hp.models[0].basis.dim(), 10);
    }
}
