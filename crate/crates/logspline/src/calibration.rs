//! Empirically measured stand-ins for the universal constants the theory
//! leaves unspecified (norm-equivalence constants, the log-density bound
//! constants, the KL/Hellinger inclusion constant).  The values are measured
//! once, frozen here, and re-measured by the `calibrate` CLI subcommand; the
//! test suite asserts stability against the frozen values.

use crate::basis::{centered, SplineBasis};
use crate::error::{Error, Result};
use crate::model::{kl_profile, LogSplineModel, NormalizerCache, TrueDensity, MODEL_ORDER};
use crate::quadrature::QuadratureRule;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::path::Path;
use std::sync::Arc;

/// Measured constants, with the measurement conditions recorded.
#[derive(Debug, Clone, PartialEq)]
pub struct Calibration {
    /// Lower constant of `C4 ||theta||_inf <= ||log p_theta||_inf`.
    pub c4_lower: f64,
    /// Upper constant of `||log p_theta||_inf <= C4_bar ||theta||_inf`.
    pub c4_upper: f64,
    /// Lower bound of `r = h^2 J / ||theta_1 - theta_2||_2^2`.
    pub sandwich_lower: f64,
    /// Upper bound of the same ratio.
    pub sandwich_upper: f64,
    /// Inclusion constant: `max(KL, KL2) <= (B h)^2` for bounded log-ratios.
    pub b_inclusion: f64,
    /// Box bound the constants were measured at.
    pub m_ref: f64,
    /// Dimensions sampled.
    pub j_range: (usize, usize),
    pub seed: u64,
}

impl Calibration {
    /// `F_lower = e^{-C4_bar M}`: lower density bound over the box.
    pub fn f_lower(&self, m: f64) -> f64 {
        (-self.c4_upper * m).exp()
    }

    /// `F_upper = e^{C4_bar M}`.
    pub fn f_upper(&self, m: f64) -> f64 {
        (self.c4_upper * m).exp()
    }
}

/// The frozen measurement (spline order 4, M = 2, J in {5, 10, 20}, seed 71,
/// 1000 draws per dimension), regenerated by `logspline calibrate`.
pub fn frozen() -> Calibration {
    Calibration {
        c4_lower: 0.219689,
        c4_upper: 1.409864,
        sandwich_lower: 0.009414,
        sandwich_upper: 0.251390,
        b_inclusion: 3.578272,
        m_ref: 2.0,
        j_range: (5, 20),
        seed: 71,
    }
}

/// Number of coefficient draws per dimension in a measurement run.
pub const MEASURE_DRAWS: usize = 1000;

/// Measure the constants afresh.  Extremes over random centered coefficient
/// pairs in the box at several dimensions; deterministic given the seed.
pub fn measure(seed: u64) -> Result<Calibration> {
    let m = 2.0;
    let q = 4usize;
    let js = [5usize, 10, 20];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut c4_lo = f64::INFINITY;
    let mut c4_hi = 0.0f64;
    let mut sand_lo = f64::INFINITY;
    let mut sand_hi = 0.0f64;
    let mut b_incl = 0.0f64;
    for &j in &js {
        let basis = SplineBasis::new(q, j + 1 - q)?;
        let rule = QuadratureRule::composite(&basis.partition(), MODEL_ORDER)?;
        let cache = NormalizerCache::new(&basis, rule.clone())?;
        let grid: Vec<f64> = (0..=2000).map(|i| i as f64 / 2000.0).collect();
        let draw = |rng: &mut ChaCha8Rng| -> Vec<f64> {
            loop {
                let th: Vec<f64> = (0..j).map(|_| rng.gen_range(-m..m)).collect();
                let th = centered(&th);
                if th.iter().all(|t| t.abs() <= m) {
                    return th;
                }
            }
        };
        for _ in 0..MEASURE_DRAWS {
            let th1 = draw(&mut rng);
            let th2 = draw(&mut rng);
            // Lemma 7.3 ratio ||log p||_inf / ||theta||_inf.
            let c1 = cache.normalizer(&th1)?;
            let sup_theta = th1.iter().fold(0.0f64, |a, t| a.max(t.abs()));
            let mut sup_log = 0.0f64;
            for &x in &grid {
                sup_log = sup_log.max((basis.combine(&th1, x)? - c1).abs());
            }
            if sup_theta > 1e-6 {
                let ratio = sup_log / sup_theta;
                c4_lo = c4_lo.min(ratio);
                c4_hi = c4_hi.max(ratio);
            }
            // Lemma 7.4 sandwich ratio.
            let c2 = cache.normalizer(&th2)?;
            let mut h2 = 0.0;
            for (&x, &w) in rule.nodes().iter().zip(rule.weights()) {
                let a = (0.5 * (basis.combine(&th1, x)? - c1)).exp();
                let b = (0.5 * (basis.combine(&th2, x)? - c2)).exp();
                h2 += w * (a - b) * (a - b);
            }
            let d2: f64 = th1
                .iter()
                .zip(&th2)
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            if d2 > 1e-12 {
                let r = h2 * j as f64 / d2;
                sand_lo = sand_lo.min(r);
                sand_hi = sand_hi.max(r);
            }
            // Inclusion constant of (7.1): max KL moment vs (B h)^2.
            if h2 > 1e-12 {
                let model1 = LogSplineModel::new(Arc::new(basis.clone()), &th1)?;
                let p0 = TrueDensity::new(
                    {
                        let m1 = model1.clone();
                        Arc::new(move |x| m1.density(x).unwrap_or(f64::NAN))
                    },
                    None,
                    2.0 * c4_hi.max(1.0) * m,
                );
                let m2 = LogSplineModel::new(Arc::new(basis.clone()), &th2)?;
                let prof = kl_profile(&p0, |x| m2.density(x).unwrap_or(f64::NAN), &rule)?;
                let b = (prof.kl.max(prof.kl2).max(0.0) / h2).sqrt();
                b_incl = b_incl.max(b);
            }
        }
    }
    Ok(Calibration {
        c4_lower: c4_lo,
        c4_upper: c4_hi,
        sandwich_lower: sand_lo,
        sandwich_upper: sand_hi,
        b_inclusion: b_incl,
        m_ref: m,
        j_range: (js[0], *js.last().unwrap()),
        seed,
    })
}

/// Serialize to the flat calibration artifact format.
pub fn to_artifact(cal: &Calibration) -> String {
    format!(
        "c4_lower = {}\nc4_upper = {}\nsandwich_lower = {}\nsandwich_upper = {}\n\
         b_inclusion = {}\nm_ref = {}\nj_min = {}\nj_max = {}\nseed = {}\n",
        cal.c4_lower,
        cal.c4_upper,
        cal.sandwich_lower,
        cal.sandwich_upper,
        cal.b_inclusion,
        cal.m_ref,
        cal.j_range.0,
        cal.j_range.1,
        cal.seed
    )
}

pub fn write_artifact(path: &Path, cal: &Calibration) -> Result<()> {
    std::fs::write(path, to_artifact(cal))?;
    Ok(())
}

pub fn read_artifact(path: &Path) -> Result<Calibration> {
    let text = std::fs::read_to_string(path)?;
    let mut map = std::collections::BTreeMap::new();
    for (idx, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| {
            Error::Config(format!("calibration artifact line {} has no '='", idx + 1))
        })?;
        map.insert(k.trim().to_string(), v.trim().to_string());
    }
    let get = |k: &str| -> Result<f64> {
        map.get(k)
            .ok_or_else(|| Error::Config(format!("missing calibration key {k}")))?
            .parse()
            .map_err(|_| Error::Config(format!("bad calibration value for {k}")))
    };
    Ok(Calibration {
        c4_lower: get("c4_lower")?,
        c4_upper: get("c4_upper")?,
        sandwich_lower: get("sandwich_lower")?,
        sandwich_upper: get("sandwich_upper")?,
        b_inclusion: get("b_inclusion")?,
        m_ref: get("m_ref")?,
        j_range: (get("j_min")? as usize, get("j_max")? as usize),
        seed: get("seed")? as u64,
    })
}
