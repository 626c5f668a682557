//! Config-driven experiment harness: contraction-rate runs, Bayes-factor
//! trajectories, condition audits, entropy tables and calibration, all
//! reproducible from a flat sectioned key=value config plus a root seed.

use crate::calibration;
use crate::entropy::{entropy_audit, log_ball_volume, prior_mass_audit, ConditionConstants};
use crate::error::{Error, Result};
use crate::posterior::{
    contraction_radius, posterior_ball_mass, posterior_summary, EvidenceOptions, McmcOptions,
};
use crate::prior::{assemble, HierarchicalPrior, PriorKindSpec, WeightScheme};
use crate::quadrature::QuadratureRule;
use crate::select::{bf_trajectory, AltSpec, ParametricNull};
use crate::truth::{hoelder_truth, smooth_truth, SmoothKind, TruthSpec};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

/// Mix a root seed with an experiment label and cell coordinates so each
/// `(experiment, n, rep)` cell gets an independent, reproducible stream.
pub fn derive_seed(root: u64, experiment: &str, n: u64, rep: u64) -> u64 {
    let mut state = root ^ 0x9e37_79b9_7f4a_7c15;
    let mut mix = |v: u64| {
        state ^= v;
        state = state.wrapping_mul(0xbf58_476d_1ce4_e5b9);
        state ^= state >> 27;
        state = state.wrapping_mul(0x94d0_49bb_1331_11eb);
        state ^= state >> 31;
    };
    for b in experiment.as_bytes() {
        mix(*b as u64);
    }
    mix(n);
    mix(rep);
    state
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExperimentKind {
    Rates,
    Bf,
    Audit,
    Entropy,
    Calibrate,
}

impl ExperimentKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Rates => "rates",
            Self::Bf => "bf",
            Self::Audit => "audit",
            Self::Entropy => "entropy",
            Self::Calibrate => "calibrate",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "rates" => Ok(Self::Rates),
            "bf" => Ok(Self::Bf),
            "audit" => Ok(Self::Audit),
            "entropy" => Ok(Self::Entropy),
            "calibrate" => Ok(Self::Calibrate),
            other => Err(Error::Config(format!("unknown experiment kind {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TruthConfig {
    /// uniform | tilted | analytic | hoelder | spline
    pub kind: String,
    pub beta: f64,
    pub phi: f64,
    pub seed: u64,
    /// Coefficients for the spline-member truth.
    pub theta: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PriorConfig {
    pub indices: Vec<f64>,
    pub kind: PriorKindSpec,
    /// constant | exponential | decreasing
    pub weights: String,
    pub mu: Vec<f64>,
    pub c: f64,
    pub log_factor: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConstantsConfig {
    pub m: f64,
    pub q: usize,
    pub h: f64,
    pub i: f64,
    pub b: f64,
    pub l: f64,
    pub f: f64,
    /// Radius multiplier for the excess-mass metric.
    pub ib: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct McConfig {
    pub n_is: usize,
    pub enum_cap: u128,
    /// Draws for Monte Carlo prior-mass estimates.
    pub mass_mc: usize,
    pub mcmc_steps: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    pub seed: u64,
    pub n_grid: Vec<usize>,
    pub reps: usize,
    pub truth: TruthConfig,
    pub prior: PriorConfig,
    pub constants: ConstantsConfig,
    pub mc: McConfig,
}

type RawConfig = BTreeMap<String, BTreeMap<String, String>>;

/// Parse the sectioned key=value format: `[section]` headers, `key = value`
/// lines, `#` comments, blank lines ignored.
pub fn parse_raw(text: &str) -> Result<RawConfig> {
    let mut raw: RawConfig = BTreeMap::new();
    let mut section: Option<String> = None;
    for (idx, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            let name = name.trim().to_string();
            if name.is_empty() {
                return Err(Error::Config(format!("empty section name on line {}", idx + 1)));
            }
            raw.entry(name.clone()).or_default();
            section = Some(name);
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(Error::Config(format!(
                "line {} is neither a section nor key = value: {line:?}",
                idx + 1
            )));
        };
        let Some(section) = &section else {
            return Err(Error::Config(format!(
                "key on line {} appears before any section",
                idx + 1
            )));
        };
        raw.get_mut(section)
            .expect("section inserted on open")
            .insert(key.trim().to_string(), value.trim().to_string());
    }
    Ok(raw)
}

pub fn serialize_raw(raw: &RawConfig) -> String {
    let mut out = String::new();
    for (section, keys) in raw {
        let _ = writeln!(out, "[{section}]");
        for (k, v) in keys {
            let _ = writeln!(out, "{k} = {v}");
        }
        out.push('\n');
    }
    out
}

struct SectionReader<'a> {
    section: &'a str,
    map: &'a BTreeMap<String, String>,
}

impl<'a> SectionReader<'a> {
    fn get(&self, key: &str) -> Result<&'a str> {
        self.map
            .get(key)
            .map(|s| s.as_str())
            .ok_or_else(|| Error::Config(format!("missing key {key:?} in section [{}]", self.section)))
    }

    fn parse<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        let v = self.get(key)?;
        v.parse().map_err(|_| {
            Error::Config(format!(
                "bad value {v:?} for key {key:?} in section [{}]",
                self.section
            ))
        })
    }

    fn parse_or<T: std::str::FromStr>(&self, key: &str, default: T) -> Result<T> {
        match self.map.get(key) {
            None => Ok(default),
            Some(_) => self.parse(key),
        }
    }

    fn parse_list<T: std::str::FromStr>(&self, key: &str) -> Result<Vec<T>> {
        let v = self.get(key)?;
        v.split_whitespace()
            .map(|tok| {
                tok.parse().map_err(|_| {
                    Error::Config(format!(
                        "bad list element {tok:?} for key {key:?} in section [{}]",
                        self.section
                    ))
                })
            })
            .collect()
    }

    fn parse_list_or<T: std::str::FromStr>(&self, key: &str, default: Vec<T>) -> Result<Vec<T>> {
        match self.map.get(key) {
            None => Ok(default),
            Some(_) => self.parse_list(key),
        }
    }
}

fn section<'a>(raw: &'a RawConfig, name: &'a str) -> Result<SectionReader<'a>> {
    raw.get(name)
        .map(|map| SectionReader { section: name, map })
        .ok_or_else(|| Error::Config(format!("missing section [{name}]")))
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        Self::from_raw(&parse_raw(text)?)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    fn from_raw(raw: &RawConfig) -> Result<Self> {
        let exp = section(raw, "experiment")?;
        let kind = ExperimentKind::parse(exp.get("kind")?)?;
        let seed: u64 = exp.parse_or("seed", 0)?;
        let n_grid: Vec<usize> = exp.parse_list_or("n_grid", vec![500])?;
        let reps: usize = exp.parse_or("reps", 1)?;
        if n_grid.is_empty() {
            return Err(Error::Config("n_grid must be nonempty".into()));
        }
        if n_grid.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config("n_grid must be strictly increasing".into()));
        }
        if reps < 1 {
            return Err(Error::Config("reps must be at least 1".into()));
        }

        let tr = section(raw, "truth")?;
        let truth = TruthConfig {
            kind: tr.get("kind")?.to_string(),
            beta: tr.parse_or("beta", 1.0)?,
            phi: tr.parse_or("phi", 0.0)?,
            seed: tr.parse_or("seed", 1)?,
            theta: tr.parse_list_or("theta", Vec::new())?,
        };
        if !["uniform", "tilted", "analytic", "hoelder", "spline"].contains(&truth.kind.as_str()) {
            return Err(Error::Config(format!("unknown truth kind {:?}", truth.kind)));
        }

        let pr = section(raw, "prior")?;
        let indices: Vec<f64> = pr.parse_list("indices")?;
        if indices.is_empty() || indices.iter().any(|&a| !(a > 0.0)) {
            return Err(Error::Config(
                "prior indices must be a nonempty list of positive values".into(),
            ));
        }
        let kind_str = pr.get("kind")?;
        let prior_kind = match kind_str {
            "flat" => PriorKindSpec::Flat,
            "net" => PriorKindSpec::Net,
            other => return Err(Error::Config(format!("unknown prior kind {other:?}"))),
        };
        let weights = pr.get("weights")?.to_string();
        let mu: Vec<f64> = pr.parse_list_or("mu", vec![1.0; indices.len()])?;
        match weights.as_str() {
            "constant" | "exponential" => {
                if mu.len() != indices.len() {
                    return Err(Error::Config(format!(
                        "mu has {} entries for {} indices",
                        mu.len(),
                        indices.len()
                    )));
                }
            }
            "decreasing" => {}
            other => return Err(Error::Config(format!("unknown weight scheme {other:?}"))),
        }
        let prior = PriorConfig {
            indices,
            kind: prior_kind,
            weights,
            mu,
            c: pr.parse_or("c", 1.0)?,
            log_factor: pr.parse_or("log_factor", false)?,
        };

        let cn = section(raw, "constants")?;
        let constants = ConstantsConfig {
            m: cn.parse_or("m", 2.0)?,
            q: cn.parse_or("q", 4)?,
            h: cn.parse_or("h", 1.0)?,
            i: cn.parse_or("i", 3.0)?,
            b: cn.parse_or("b", 2.0)?,
            l: cn.parse_or("l", 0.01)?,
            f: cn.parse_or("f", 2.0)?,
            ib: cn.parse_or("ib", 6.0)?,
        };
        if !(constants.m > 0.0) || constants.q < 1 {
            return Err(Error::Config("constants m must be positive, q at least 1".into()));
        }

        let mc = match raw.get("mc") {
            Some(map) => {
                let mc = SectionReader { section: "mc", map };
                McConfig {
                    n_is: mc.parse_or("n_is", 20_000)?,
                    enum_cap: mc.parse_or("enum_cap", 200_000u128)?,
                    mass_mc: mc.parse_or("mass_mc", 2_000)?,
                    mcmc_steps: mc.parse_or("mcmc_steps", 2_000)?,
                }
            }
            None => McConfig {
                n_is: 20_000,
                enum_cap: 200_000,
                mass_mc: 2_000,
                mcmc_steps: 2_000,
            },
        };

        Ok(Self {
            kind,
            seed,
            n_grid,
            reps,
            truth,
            prior,
            constants,
            mc,
        })
    }

    /// Canonical serialization; `parse(to_text(parse(x)))` is the identity on
    /// the typed config.
    pub fn to_text(&self) -> String {
        let mut raw: RawConfig = BTreeMap::new();
        let join = |v: &[f64]| {
            v.iter()
                .map(|x| x.to_string())
                .collect::<Vec<_>>()
                .join(" ")
        };
        let mut exp = BTreeMap::new();
        exp.insert("kind".into(), self.kind.as_str().to_string());
        exp.insert("seed".into(), self.seed.to_string());
        exp.insert(
            "n_grid".into(),
            self.n_grid
                .iter()
                .map(|n| n.to_string())
                .collect::<Vec<_>>()
                .join(" "),
        );
        exp.insert("reps".into(), self.reps.to_string());
        raw.insert("experiment".into(), exp);

        let mut tr = BTreeMap::new();
        tr.insert("kind".into(), self.truth.kind.clone());
        tr.insert("beta".into(), self.truth.beta.to_string());
        tr.insert("phi".into(), self.truth.phi.to_string());
        tr.insert("seed".into(), self.truth.seed.to_string());
        if !self.truth.theta.is_empty() {
            tr.insert("theta".into(), join(&self.truth.theta));
        }
        raw.insert("truth".into(), tr);

        let mut pr = BTreeMap::new();
        pr.insert("indices".into(), join(&self.prior.indices));
        pr.insert(
            "kind".into(),
            match self.prior.kind {
                PriorKindSpec::Flat => "flat".to_string(),
                PriorKindSpec::Net => "net".to_string(),
            },
        );
        pr.insert("weights".into(), self.prior.weights.clone());
        pr.insert("mu".into(), join(&self.prior.mu));
        pr.insert("c".into(), self.prior.c.to_string());
        pr.insert("log_factor".into(), self.prior.log_factor.to_string());
        raw.insert("prior".into(), pr);

        let mut cn = BTreeMap::new();
        cn.insert("m".into(), self.constants.m.to_string());
        cn.insert("q".into(), self.constants.q.to_string());
        cn.insert("h".into(), self.constants.h.to_string());
        cn.insert("i".into(), self.constants.i.to_string());
        cn.insert("b".into(), self.constants.b.to_string());
        cn.insert("l".into(), self.constants.l.to_string());
        cn.insert("f".into(), self.constants.f.to_string());
        cn.insert("ib".into(), self.constants.ib.to_string());
        raw.insert("constants".into(), cn);

        let mut mc = BTreeMap::new();
        mc.insert("n_is".into(), self.mc.n_is.to_string());
        mc.insert("enum_cap".into(), self.mc.enum_cap.to_string());
        mc.insert("mass_mc".into(), self.mc.mass_mc.to_string());
        mc.insert("mcmc_steps".into(), self.mc.mcmc_steps.to_string());
        raw.insert("mc".into(), mc);

        serialize_raw(&raw)
    }

    pub fn build_truth(&self) -> Result<TruthSpec> {
        match self.truth.kind.as_str() {
            "uniform" => smooth_truth(SmoothKind::TiltedUniform { phi: 0.0 }),
            "tilted" => smooth_truth(SmoothKind::TiltedUniform {
                phi: self.truth.phi,
            }),
            "analytic" => smooth_truth(SmoothKind::Analytic),
            "hoelder" => hoelder_truth(self.truth.beta, self.truth.seed),
            "spline" => {
                let j = self.truth.theta.len();
                if j < self.constants.q {
                    return Err(Error::Config(format!(
                        "spline truth needs at least q = {} coefficients, got {j}",
                        self.constants.q
                    )));
                }
                smooth_truth(SmoothKind::SplineMember {
                    q: self.constants.q,
                    k: j + 1 - self.constants.q,
                    theta: self.truth.theta.clone(),
                })
            }
            other => Err(Error::Config(format!("unknown truth kind {other:?}"))),
        }
    }

    pub fn build_scheme(&self) -> Result<WeightScheme> {
        Ok(match self.prior.weights.as_str() {
            "constant" => WeightScheme::constant(self.prior.mu.clone()),
            "exponential" => WeightScheme::exponential(self.prior.mu.clone(), self.prior.c),
            "decreasing" => WeightScheme::decreasing(self.prior.c),
            other => return Err(Error::Config(format!("unknown weight scheme {other:?}"))),
        })
    }

    pub fn build_prior(&self, n: usize) -> Result<HierarchicalPrior> {
        assemble(
            &self.prior.indices,
            n,
            &self.build_scheme()?,
            self.prior.kind,
            self.constants.m,
            self.constants.q,
            self.prior.log_factor,
        )
    }

    /// The designated truth index: the model whose smoothness index is
    /// closest to the truth's nominal smoothness, or the smoothest model for
    /// analytic truths.
    pub fn beta_index(&self, truth: &TruthSpec) -> usize {
        match truth.beta {
            Some(beta) => self
                .prior
                .indices
                .iter()
                .enumerate()
                .min_by(|(_, a), (_, b)| {
                    (*a - beta)
                        .abs()
                        .partial_cmp(&(*b - beta).abs())
                        .expect("finite indices")
                })
                .map(|(i, _)| i)
                .unwrap_or(0),
            None => {
                let mut best = 0;
                for (i, a) in self.prior.indices.iter().enumerate() {
                    if *a > self.prior.indices[best] {
                        best = i;
                    }
                }
                best
            }
        }
    }

    fn evidence_options(&self) -> EvidenceOptions {
        EvidenceOptions {
            n_is: self.mc.n_is,
            enum_cap: self.mc.enum_cap,
        }
    }

    fn mcmc_options(&self) -> McmcOptions {
        McmcOptions {
            steps: self.mc.mcmc_steps,
            ..McmcOptions::default()
        }
    }
}

/// One output row of the flat result schema.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub experiment: String,
    pub n: usize,
    pub rep: usize,
    pub seed: u64,
    pub metric: String,
    pub value: f64,
    pub std_error: f64,
}

#[derive(Debug, Clone)]
pub struct CellFailure {
    pub n: usize,
    pub rep: usize,
    pub message: String,
}

#[derive(Debug, Clone, Default)]
pub struct ResultTable {
    pub rows: Vec<ResultRow>,
    pub failures: Vec<CellFailure>,
}

impl ResultTable {
    pub fn sort(&mut self) {
        self.rows
            .sort_by(|a, b| (a.n, a.rep, &a.metric).cmp(&(b.n, b.rep, &b.metric)));
        self.failures.sort_by(|a, b| (a.n, a.rep).cmp(&(b.n, b.rep)));
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("experiment,n,rep,seed,metric,value,std_error\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                r.experiment, r.n, r.rep, r.seed, r.metric, r.value, r.std_error
            );
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExponentFit {
    pub slope: f64,
    /// 95%-style half-width from the residual variance.
    pub half_width: f64,
}

/// OLS slope of `log value` on `log n` with a residual-variance half-width.
pub fn fit_exponent(pairs: &[(f64, f64)]) -> Result<ExponentFit> {
    let mut distinct: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    distinct.sort_by(|a, b| a.partial_cmp(b).unwrap());
    distinct.dedup();
    if distinct.len() < 3 {
        return Err(Error::InvalidInput(format!(
            "exponent fit needs at least 3 distinct sample sizes, got {}",
            distinct.len()
        )));
    }
    if pairs.iter().any(|&(n, v)| !(n > 0.0) || !(v > 0.0)) {
        return Err(Error::InvalidInput(
            "exponent fit needs positive sample sizes and values".into(),
        ));
    }
    let pts: Vec<(f64, f64)> = pairs.iter().map(|&(n, v)| (n.ln(), v.ln())).collect();
    let k = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / k;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / k;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let rss: f64 = pts
        .iter()
        .map(|p| {
            let r = p.1 - intercept - slope * p.0;
            r * r
        })
        .sum();
    let dof = (pts.len() as f64 - 2.0).max(1.0);
    let se = (rss / dof / sxx).sqrt();
    Ok(ExponentFit {
        slope,
        half_width: 1.96 * se,
    })
}

/// Output of a full run: the flat table plus the structured summary text.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub table: ResultTable,
    pub summary: String,
    /// Fitted contraction exponent (rates runs with enough sample sizes).
    pub exponent: Option<ExponentFit>,
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let k = values.len();
    if k == 0 {
        return f64::NAN;
    }
    if k % 2 == 1 {
        values[k / 2]
    } else {
        0.5 * (values[k / 2 - 1] + values[k / 2])
    }
}

fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let idx = ((sorted.len() as f64 - 1.0) * q).round() as usize;
    sorted[idx]
}

/// Contraction-rate experiment: per cell, sample from the truth, build the
/// hierarchical prior at that `n`, summarize the posterior, and record the
/// median Hellinger radius, the excess mass outside `ib * eps_beta`, and the
/// model-index mass on the finer-than-truth index set.  Cell failures are
/// recorded and skipped.
pub fn run_rates(cfg: &ExperimentConfig) -> Result<RunOutput> {
    let truth = cfg.build_truth()?;
    let sample_rule = QuadratureRule::uniform(1024, 6)?;
    let dist_rule = QuadratureRule::uniform(256, 8)?;
    let ev_opts = cfg.evidence_options();
    let mc_opts = cfg.mcmc_options();
    let cells: Vec<(usize, usize)> = cfg
        .n_grid
        .iter()
        .flat_map(|&n| (0..cfg.reps).map(move |rep| (n, rep)))
        .collect();
    let results: Vec<std::result::Result<Vec<ResultRow>, CellFailure>> = cells
        .par_iter()
        .map(|&(n, rep)| {
            let seed = derive_seed(cfg.seed, "rates", n as u64, rep as u64);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut run = || -> Result<Vec<ResultRow>> {
                let data = truth.density.sample(&mut rng, n, &sample_rule)?;
                let hp = cfg.build_prior(n)?;
                let ps = posterior_summary(&hp, &data, &ev_opts, &mc_opts, &mut rng)?;
                let beta = cfg.beta_index(&truth);
                let eps_beta = hp.models[beta].epsilon;
                let radius = contraction_radius(&ps, &hp, &truth.density, &dist_rule, 0.5)?;
                let (excess, excess_se) = posterior_ball_mass(
                    &ps,
                    &hp,
                    &truth.density,
                    &dist_rule,
                    cfg.constants.ib * eps_beta,
                )?;
                let oversized: f64 = hp
                    .models
                    .iter()
                    .zip(&ps.model_posterior)
                    .filter(|(m, _)| {
                        m.epsilon * m.epsilon > cfg.constants.h * eps_beta * eps_beta
                    })
                    .map(|(_, &w)| w)
                    .sum();
                let row = |metric: &str, value: f64, se: f64| ResultRow {
                    experiment: "rates".into(),
                    n,
                    rep,
                    seed,
                    metric: metric.into(),
                    value,
                    std_error: se,
                };
                Ok(vec![
                    row("excess_mass", excess, excess_se),
                    row("oversized_mass", oversized, 0.0),
                    row("radius_median", radius, 0.0),
                ])
            };
            run().map_err(|e| CellFailure {
                n,
                rep,
                message: e.to_string(),
            })
        })
        .collect();
    let mut table = ResultTable::default();
    for r in results {
        match r {
            Ok(rows) => table.rows.extend(rows),
            Err(f) => table.failures.push(f),
        }
    }
    table.sort();

    // Median radius per n, then the fitted exponent across the grid.
    let mut per_n: Vec<(f64, f64)> = Vec::new();
    let mut summary = String::from("[rates]\n");
    for &n in &cfg.n_grid {
        let mut radii: Vec<f64> = table
            .rows
            .iter()
            .filter(|r| r.n == n && r.metric == "radius_median")
            .map(|r| r.value)
            .collect();
        if radii.is_empty() {
            continue;
        }
        let med = median(&mut radii);
        let _ = writeln!(summary, "n = {n}: median_radius = {med}");
        per_n.push((n as f64, med));
    }
    let exponent = match fit_exponent(&per_n) {
        Ok(fit) => {
            let _ = writeln!(
                summary,
                "fitted_exponent = {} half_width = {}",
                fit.slope, fit.half_width
            );
            Some(fit)
        }
        Err(e) => {
            let _ = writeln!(summary, "fitted_exponent = unavailable ({e})");
            None
        }
    };
    let _ = writeln!(summary, "failures = {}", table.failures.len());
    Ok(RunOutput {
        table,
        summary,
        exponent,
    })
}

/// Bayes-factor trajectory experiment against the tilted-uniform null; the
/// alternative is the log-spline model at the first prior index.
pub fn run_bf(cfg: &ExperimentConfig) -> Result<RunOutput> {
    let truth = cfg.build_truth()?;
    let null = ParametricNull::default();
    let alt = AltSpec {
        alpha: cfg.prior.indices[0],
        q: cfg.constants.q,
        m: cfg.constants.m,
        kind: cfg.prior.kind,
    };
    let rows = bf_trajectory(
        &truth.density,
        &null,
        &alt,
        (0.5, 0.5),
        &cfg.n_grid,
        cfg.reps,
        cfg.seed,
        &cfg.evidence_options(),
    )?;
    let mut table = ResultTable::default();
    for r in &rows {
        let mk = |metric: &str, value: f64, se: f64| ResultRow {
            experiment: "bf".into(),
            n: r.n,
            rep: r.rep,
            seed: r.seed,
            metric: metric.into(),
            value,
            std_error: se,
        };
        table.rows.push(mk("log_bf", r.log_bf, r.std_error));
        table.rows.push(mk("log_z_alt", r.log_z_alt, 0.0));
        table.rows.push(mk("log_z_null", r.log_z_null, 0.0));
    }
    table.sort();
    let mut summary = String::from("[bf]\n");
    for &n in &cfg.n_grid {
        let mut vals: Vec<f64> = rows.iter().filter(|r| r.n == n).map(|r| r.log_bf).collect();
        vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let _ = writeln!(
            summary,
            "n = {n}: median_log_bf = {} q25 = {} q75 = {}",
            quantile_sorted(&vals, 0.5),
            quantile_sorted(&vals, 0.25),
            quantile_sorted(&vals, 0.75)
        );
    }
    Ok(RunOutput {
        table,
        summary,
        exponent: None,
    })
}

/// Largest absolute log-space error of the exponential-scheme weight-ratio
/// identity across index pairs at sample size `n`.
pub fn weight_ratio_identity_error(cfg: &ExperimentConfig, n: usize) -> Result<f64> {
    if cfg.prior.weights != "exponential" {
        return Err(Error::InvalidInput(
            "the weight-ratio identity applies to the exponential scheme".into(),
        ));
    }
    let hp = cfg.build_prior(n)?;
    let c = cfg.prior.c;
    let f = cfg.constants.f;
    let mut worst = 0.0f64;
    for a in 0..hp.models.len() {
        for b in 0..hp.models.len() {
            if a == b {
                continue;
            }
            // Effective dimension of the schedule, without the floor.
            let jdim = |alpha: f64| (n as f64).powf(1.0 / (2.0 * alpha + 1.0));
            let ja = jdim(hp.models[a].alpha);
            let jb = jdim(hp.models[b].alpha);
            let left =
                hp.models[a].log_weight_unnorm - hp.models[b].log_weight_unnorm + f * jb;
            let right = (cfg.prior.mu[a] / cfg.prior.mu[b]).ln() - c * ja + (f + c) * jb;
            worst = worst.max((left - right).abs());
        }
    }
    Ok(worst)
}

/// Condition audit: the weight-ratio identity, the Theorem-2.1 gate on the
/// configured constants, and the prior-mass conditions per sample size.
pub fn run_audit(cfg: &ExperimentConfig) -> Result<RunOutput> {
    let truth = cfg.build_truth()?;
    let mut table = ResultTable::default();
    let mut summary = String::from("[audit]\n");

    // Entropy constants per index (radius-stable by construction), feeding
    // the gate's E bounds.
    let mut e_alpha = Vec::new();
    {
        let n = *cfg.n_grid.last().expect("validated nonempty");
        for &alpha in &cfg.prior.indices {
            let j = crate::prior::dimension_schedule(alpha, n, cfg.constants.q)?;
            let basis = crate::basis::SplineBasis::new(cfg.constants.q, j + 1 - cfg.constants.q)?;
            let audit = entropy_audit(alpha, n, &basis, cfg.constants.m)?;
            e_alpha.push(audit.implied_e);
        }
    }
    let e_max = e_alpha.iter().cloned().fold(0.0f64, f64::max);
    let cc = ConditionConstants::new(
        cfg.constants.b,
        cfg.constants.h,
        cfg.constants.i,
        cfg.constants.l,
        e_alpha.clone(),
        e_max,
        e_max,
        cfg.constants.f,
        cfg.prior.mu.clone(),
    )?;
    let gate = cc.theorem_gate();
    let _ = writeln!(
        summary,
        "gate: b_exceeds_sqrt_h = {} kb2_exceeds = {} shell_margin = {} satisfied = {}",
        gate.b_exceeds_sqrt_h, gate.kb2_exceeds, gate.shell_margin, gate.satisfied
    );

    let vacuous = cfg.prior.indices.len() == 1;
    let _ = writeln!(summary, "vacuous = {vacuous}");

    for &n in &cfg.n_grid {
        if cfg.prior.weights == "exponential" {
            let err = weight_ratio_identity_error(cfg, n)?;
            table.rows.push(ResultRow {
                experiment: "audit".into(),
                n,
                rep: 0,
                seed: cfg.seed,
                metric: "identity_log_error".into(),
                value: err,
                std_error: 0.0,
            });
        }
        let hp = cfg.build_prior(n)?;
        let beta = cfg.beta_index(&truth);
        let seed = derive_seed(cfg.seed, "audit", n as u64, 0);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let audit = prior_mass_audit(
            &hp,
            &truth.density,
            beta,
            &cc,
            &[1.0, 2.0],
            cfg.mc.mass_mc,
            &mut rng,
        )?;
        let cond24_ratio = audit.sum_log_left - audit.sum_log_scale;
        let satisfied_rows = audit
            .cond_finer
            .iter()
            .chain(&audit.cond_coarser)
            .filter(|r| r.satisfied)
            .count();
        let total_rows = audit.cond_finer.len() + audit.cond_coarser.len();
        for (metric, value) in [
            ("cond24_log_ratio", cond24_ratio),
            ("cond25_log_mass", audit.mass_log),
            ("cond25_log_bound", audit.mass_log_bound),
            (
                "cond25_satisfied",
                if audit.mass_satisfied { 1.0 } else { 0.0 },
            ),
            ("rows_satisfied", satisfied_rows as f64),
            ("rows_total", total_rows as f64),
        ] {
            table.rows.push(ResultRow {
                experiment: "audit".into(),
                n,
                rep: 0,
                seed,
                metric: metric.into(),
                value,
                std_error: 0.0,
            });
        }
        let _ = writeln!(
            summary,
            "n = {n}: cond24_log_ratio = {cond24_ratio} cond25 = {} ({} of {} rows satisfied)",
            audit.mass_satisfied, satisfied_rows, total_rows
        );
    }
    table.sort();
    Ok(RunOutput {
        table,
        summary,
        exponent: None,
    })
}

/// Entropy and volume tables: the scaled ball-volume sequence and per-index
/// entropy audits over the sample-size grid.
pub fn run_entropy(cfg: &ExperimentConfig) -> Result<RunOutput> {
    let mut table = ResultTable::default();
    for j in 1..=50usize {
        let lv = log_ball_volume(j)?;
        let scaled = 0.5 * (j as f64) * (j as f64).ln() + lv;
        for (metric, value) in [("log_volume", lv), ("log_scaled_volume", scaled)] {
            table.rows.push(ResultRow {
                experiment: "entropy".into(),
                n: j,
                rep: 0,
                seed: cfg.seed,
                metric: metric.into(),
                value,
                std_error: 0.0,
            });
        }
    }
    let mut summary = String::from("[entropy]\n");
    for &n in &cfg.n_grid {
        for (idx, &alpha) in cfg.prior.indices.iter().enumerate() {
            let j = crate::prior::dimension_schedule(alpha, n, cfg.constants.q)?;
            let basis = crate::basis::SplineBasis::new(cfg.constants.q, j + 1 - cfg.constants.q)?;
            let audit = entropy_audit(alpha, n, &basis, cfg.constants.m)?;
            table.rows.push(ResultRow {
                experiment: "entropy".into(),
                n,
                rep: idx,
                seed: cfg.seed,
                metric: "implied_e".into(),
                value: audit.implied_e,
                std_error: 0.0,
            });
            let _ = writeln!(
                summary,
                "n = {n} alpha = {alpha}: J = {j} implied_e = {} stable = {}",
                audit.implied_e, audit.stable
            );
        }
    }
    table.sort();
    Ok(RunOutput {
        table,
        summary,
        exponent: None,
    })
}

/// Re-measure the calibration constants and report drift against the frozen
/// values.
pub fn run_calibrate(cfg: &ExperimentConfig) -> Result<RunOutput> {
    let cal = calibration::measure(cfg.seed)?;
    let frozen = calibration::frozen();
    let mut table = ResultTable::default();
    for (metric, value, reference) in [
        ("c4_lower", cal.c4_lower, frozen.c4_lower),
        ("c4_upper", cal.c4_upper, frozen.c4_upper),
        ("sandwich_lower", cal.sandwich_lower, frozen.sandwich_lower),
        ("sandwich_upper", cal.sandwich_upper, frozen.sandwich_upper),
        ("b_inclusion", cal.b_inclusion, frozen.b_inclusion),
    ] {
        table.rows.push(ResultRow {
            experiment: "calibrate".into(),
            n: 0,
            rep: 0,
            seed: cfg.seed,
            metric: metric.into(),
            value,
            std_error: (value - reference).abs(),
        });
    }
    table.sort();
    let summary = format!(
        "[calibrate]\nseed = {}\n{}",
        cfg.seed,
        calibration::to_artifact(&cal)
    );
    Ok(RunOutput {
        table,
        summary,
        exponent: None,
    })
}

fn dispatch(cfg: &ExperimentConfig) -> Result<RunOutput> {
    match cfg.kind {
        ExperimentKind::Rates => run_rates(cfg),
        ExperimentKind::Bf => run_bf(cfg),
        ExperimentKind::Audit => run_audit(cfg),
        ExperimentKind::Entropy => run_entropy(cfg),
        ExperimentKind::Calibrate => run_calibrate(cfg),
    }
}

/// Run the configured experiment on a bounded thread pool and write
/// `results.csv`, `summary.txt` and the resolved `config.txt` (plus the
/// calibration artifact for calibrate runs) into the output directory.
pub fn run_to_dir(cfg: &ExperimentConfig, out_dir: &Path, jobs: usize) -> Result<RunOutput> {
    std::fs::create_dir_all(out_dir)?;
    let out = if jobs == 0 {
        dispatch(cfg)?
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| Error::Resource(format!("cannot build thread pool: {e}")))?;
        pool.install(|| dispatch(cfg))?
    };
    std::fs::write(out_dir.join("results.csv"), out.table.to_csv())?;
    std::fs::write(out_dir.join("summary.txt"), &out.summary)?;
    std::fs::write(out_dir.join("config.txt"), cfg.to_text())?;
    if cfg.kind == ExperimentKind::Calibrate {
        let cal = calibration::measure(cfg.seed)?;
        calibration::write_artifact(&out_dir.join("calibration.txt"), &cal)?;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn sample_config(kind: &str) -> String {
        format!(
            "# sample config\n\
             [experiment]\n\
             kind = {kind}\n\
             seed = 7\n\
             n_grid = 40 80 160\n\
             reps = 2\n\
             \n\
             [truth]\n\
             kind = uniform\n\
             \n\
             [prior]\n\
             indices = 1.0 2.0\n\
             kind = flat\n\
             weights = constant\n\
             mu = 1 1\n\
             \n\
             [constants]\n\
             m = 1.0\n\
             q = 4\n\
             \n\
             [mc]\n\
             n_is = 500\n\
             mass_mc = 300\n\
             mcmc_steps = 400\n"
        )
    }

    #[test]
    fn config_round_trip_is_identity() {
        let cfg = ExperimentConfig::parse(&sample_config("rates")).unwrap();
        let again = ExperimentConfig::parse(&cfg.to_text()).unwrap();
        assert_eq!(cfg, again);
        // And serialization is a fixed point from then on.
        assert_eq!(cfg.to_text(), again.to_text());
    }

    #[test]
    fn config_rejects_bad_grids_and_kinds() {
        let text = sample_config("rates").replace("n_grid = 40 80 160", "n_grid = 80 40");
        assert!(matches!(
            ExperimentConfig::parse(&text).unwrap_err(),
            Error::Config(_)
        ));
        let text = sample_config("rates").replace("kind = rates", "kind = mystery");
        assert!(matches!(
            ExperimentConfig::parse(&text).unwrap_err(),
            Error::Config(_)
        ));
        let text = sample_config("rates").replace("reps = 2", "reps = 0");
        assert!(ExperimentConfig::parse(&text).is_err());
        let text = sample_config("rates").replace("[prior]", "[prio]");
        assert!(ExperimentConfig::parse(&text).is_err());
    }

    #[test]
    fn derive_seed_separates_cells() {
        let mut seen = std::collections::HashSet::new();
        for n in [100u64, 200, 400] {
            for rep in 0..50u64 {
                for label in ["rates", "bf"] {
                    assert!(seen.insert(derive_seed(9, label, n, rep)));
                }
            }
        }
        assert_eq!(derive_seed(9, "rates", 100, 0), derive_seed(9, "rates", 100, 0));
        assert_ne!(derive_seed(9, "rates", 100, 0), derive_seed(10, "rates", 100, 0));
    }

    #[test]
    fn fit_exponent_exact_power_law() {
        let pairs: Vec<(f64, f64)> = [250.0, 500.0, 1000.0, 2000.0]
            .iter()
            .map(|&n: &f64| (n, 3.7 * n.powf(-1.0 / 3.0)))
            .collect();
        let fit = fit_exponent(&pairs).unwrap();
        assert!((fit.slope + 1.0 / 3.0).abs() < 1e-12);
        assert!(fit.half_width < 1e-10);
    }

    #[test]
    fn fit_exponent_constant_series() {
        let pairs = vec![(100.0, 2.0), (200.0, 2.0), (400.0, 2.0)];
        let fit = fit_exponent(&pairs).unwrap();
        assert!(fit.slope.abs() < 1e-12);
    }

    #[test]
    fn fit_exponent_rejects_degenerate_input() {
        let err = fit_exponent(&[(100.0, 1.0), (100.0, 1.1)]).unwrap_err();
        assert!(matches!(err, Error::InvalidInput(_)));
        let err = fit_exponent(&[(100.0, 1.0), (200.0, -1.0), (400.0, 0.5)]).unwrap_err();
        assert!(matches!(err, Error::InvalidInput(_)));
    }

    #[test]
    fn fit_exponent_covers_noisy_truth() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut covered = 0usize;
        let trials = 100;
        for _ in 0..trials {
            let pairs: Vec<(f64, f64)> = [100.0, 200.0, 400.0, 800.0, 1600.0]
                .iter()
                .map(|&n: &f64| {
                    let noise: f64 = 1.0 + 0.05 * (2.0 * rng.gen::<f64>() - 1.0);
                    (n, 2.0 * n.powf(-0.5) * noise)
                })
                .collect();
            let fit = fit_exponent(&pairs).unwrap();
            if (fit.slope + 0.5).abs() <= fit.half_width {
                covered += 1;
            }
        }
        assert!(covered >= 90, "covered only {covered} of {trials}");
    }

    #[test]
    fn rates_run_is_deterministic_and_accounted() {
        let cfg = ExperimentConfig::parse(&sample_config("rates")).unwrap();
        let a = run_rates(&cfg).unwrap();
        let b = run_rates(&cfg).unwrap();
        assert_eq!(a.table.to_csv(), b.table.to_csv());
        // Missing-cell accounting: rows plus failed cells cover the grid.
        let cells = cfg.n_grid.len() * cfg.reps;
        assert_eq!(
            a.table.rows.len() + 3 * a.table.failures.len(),
            3 * cells,
            "{:?}",
            a.table.failures
        );
        assert!(a.exponent.is_some());
    }

    #[test]
    fn rates_single_point_grid_refuses_exponent() {
        let text = sample_config("rates").replace("n_grid = 40 80 160", "n_grid = 60");
        let cfg = ExperimentConfig::parse(&text).unwrap();
        let out = run_rates(&cfg).unwrap();
        assert!(out.exponent.is_none());
        assert!(out.summary.contains("unavailable"));
    }

    #[test]
    fn entropy_run_produces_volume_table() {
        let cfg = ExperimentConfig::parse(&sample_config("entropy")).unwrap();
        let out = run_entropy(&cfg).unwrap();
        let volumes: Vec<&ResultRow> = out
            .table
            .rows
            .iter()
            .filter(|r| r.metric == "log_scaled_volume")
            .collect();
        assert_eq!(volumes.len(), 50);
        for w in volumes.windows(2) {
            assert!(w[1].value > w[0].value);
        }
    }

    #[test]
    fn audit_identity_holds_for_exponential_scheme() {
        let text = sample_config("audit")
            .replace("weights = constant", "weights = exponential")
            .replace("[constants]", "[constants]\nf = 2.0");
        let cfg = ExperimentConfig::parse(&text).unwrap();
        for &n in &cfg.n_grid {
            let err = weight_ratio_identity_error(&cfg, n).unwrap();
            assert!(err < 1e-10, "identity error {err} at n = {n}");
        }
    }

    #[test]
    fn audit_single_model_is_vacuous() {
        let text = sample_config("audit")
            .replace("indices = 1.0 2.0", "indices = 1.0")
            .replace("mu = 1 1", "mu = 1");
        let cfg = ExperimentConfig::parse(&text).unwrap();
        let out = run_audit(&cfg).unwrap();
        assert!(out.summary.contains("vacuous = true"));
        for r in &out.table.rows {
            if r.metric == "rows_total" {
                assert_eq!(r.value, 0.0);
            }
        }
    }

    #[test]
    fn run_to_dir_writes_artifacts() {
        let dir = std::env::temp_dir().join("logspline-exp-test");
        let _ = std::fs::remove_dir_all(&dir);
        let cfg = ExperimentConfig::parse(&sample_config("entropy")).unwrap();
        let out = run_to_dir(&cfg, &dir, 2).unwrap();
        let csv = std::fs::read_to_string(dir.join("results.csv")).unwrap();
        assert_eq!(csv, out.table.to_csv());
        assert!(csv.starts_with("experiment,n,rep,seed,metric,value,std_error\n"));
        let resolved = std::fs::read_to_string(dir.join("config.txt")).unwrap();
        assert_eq!(ExperimentConfig::parse(&resolved).unwrap(), cfg);
        assert!(dir.join("summary.txt").exists());
    }

    #[test]
    fn result_table_sorted_by_cell_and_metric() {
        let cfg = ExperimentConfig::parse(&sample_config("rates")).unwrap();
        let out = run_rates(&cfg).unwrap();
        let keys: Vec<(usize, usize, String)> = out
            .table
            .rows
            .iter()
            .map(|r| (r.n, r.rep, r.metric.clone()))
            .collect();
        let mut sorted = keys.clone();
        sorted.sort();
        assert_eq!(keys, sorted);
    }
}
