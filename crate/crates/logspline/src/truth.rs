//! Constructible true densities with known smoothness labels.

use crate::basis::SplineBasis;
use crate::error::{Error, Result};
use crate::model::{LogSplineModel, TrueDensity};
use crate::quadrature::QuadratureRule;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::f64::consts::PI;
use std::sync::Arc;

/// A labeled data-generating density.
#[derive(Debug, Clone)]
pub struct TruthSpec {
    pub name: String,
    pub density: TrueDensity,
    /// Nominal Hölder smoothness; `None` for analytic truths.
    pub beta: Option<f64>,
    pub in_parametric_null: bool,
    pub is_spline_member: bool,
}

fn truth_rule() -> QuadratureRule {
    QuadratureRule::uniform(128, 10).expect("fixed rule parameters are valid")
}

/// Kinds of smooth truths available to experiments.
#[derive(Debug, Clone)]
pub enum SmoothKind {
    /// `p0 ∝ e^{sin(2 pi x)}`; analytic, outside the parametric null.
    Analytic,
    /// An exact member `p(theta*)` of a log-spline model.
    SplineMember { q: usize, k: usize, theta: Vec<f64> },
    /// `p0 = e^{phi x - psi(phi)}`, a member of the parametric null.
    TiltedUniform { phi: f64 },
}

/// Log-normalizer of the tilted-uniform family: `psi(phi) = log((e^phi - 1)/phi)`,
/// with the series expansion near zero for stability.
pub fn tilted_psi(phi: f64) -> f64 {
    if phi.abs() < 1e-4 {
        // log(1 + phi/2 + phi^2/6 + phi^3/24 + ...)
        (phi / 2.0 + phi * phi / 6.0 + phi * phi * phi / 24.0).ln_1p()
    } else {
        ((phi.exp() - 1.0) / phi).ln()
    }
}

pub fn smooth_truth(kind: SmoothKind) -> Result<TruthSpec> {
    let rule = truth_rule();
    match kind {
        SmoothKind::Analytic => {
            let density =
                TrueDensity::from_unnormalized(|x| (2.0 * PI * x).sin().exp(), &rule, None)?;
            Ok(TruthSpec {
                name: "analytic-exp-sin".into(),
                density,
                beta: None,
                in_parametric_null: false,
                is_spline_member: false,
            })
        }
        SmoothKind::SplineMember { q, k, theta } => {
            let basis = Arc::new(SplineBasis::new(q, k)?);
            let model = LogSplineModel::new(basis, &theta)?;
            let sup = model.theta().iter().fold(0.0f64, |a, t| a.max(t.abs()))
                + model.normalizer_value().abs();
            let m = model.clone();
            let density = TrueDensity::new(
                Arc::new(move |x| m.density(x).unwrap_or(f64::NAN)),
                None,
                sup,
            );
            Ok(TruthSpec {
                name: format!("spline-member-q{q}-k{k}"),
                density,
                beta: None,
                in_parametric_null: false,
                is_spline_member: true,
            })
        }
        SmoothKind::TiltedUniform { phi } => {
            if !phi.is_finite() {
                return Err(Error::InvalidInput("non-finite tilt parameter".into()));
            }
            let psi = tilted_psi(phi);
            let density = TrueDensity::new(
                Arc::new(move |x: f64| (phi * x - psi).exp()),
                None,
                phi.abs() + psi.abs(),
            );
            Ok(TruthSpec {
                name: format!("tilted-uniform-phi{phi}"),
                density,
                beta: None,
                in_parametric_null: true,
                is_spline_member: false,
            })
        }
    }
}

/// Truncation level of the lacunary log-density series.
pub const HOELDER_LEVELS: usize = 10;

/// A `C^beta` truth with `log p0` a lacunary cosine series
/// `sum_k 2^{-k beta} a_k cos(2^k pi x + phi_k)`, truncated at `k = 10`.
/// The construction has Hölder smoothness exactly `beta` (its high-frequency
/// amplitudes saturate the `C^beta` scaling), which experiments rely on as the
/// smoothness label.
pub fn hoelder_truth(beta: f64, seed: u64) -> Result<TruthSpec> {
    if !(beta > 0.0 && beta <= 4.0) {
        return Err(Error::InvalidInput(format!(
            "smoothness {beta} outside (0, 4]"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let coeffs: Vec<(f64, f64, f64)> = (0..=HOELDER_LEVELS)
        .map(|k| {
            // Amplitudes bounded away from zero so every level is present.
            let a: f64 = rng.gen_range(0.5..1.0) * if rng.gen::<bool>() { 1.0 } else { -1.0 };
            let phase: f64 = rng.gen_range(0.0..2.0 * PI);
            (2.0f64.powf(-(k as f64) * beta), a, phase)
        })
        .collect();
    let log_p = move |x: f64| {
        coeffs
            .iter()
            .enumerate()
            .map(|(k, &(scale, a, phase))| {
                scale * a * (2.0f64.powi(k as i32) * PI * x + phase).cos()
            })
            .sum::<f64>()
    };
    // A fine rule: the highest frequency is 2^10 pi, so use many segments.
    let rule = QuadratureRule::uniform(1024, 6)?;
    let density = TrueDensity::from_unnormalized(move |x| log_p(x).exp(), &rule, Some(beta))?;
    Ok(TruthSpec {
        name: format!("hoelder-beta{beta}-seed{seed}"),
        density,
        beta: Some(beta),
        in_parametric_null: false,
        is_spline_member: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::fit_supnorm;
    use crate::model::{kl_profile, project_hellinger, LOG_CLAMP};

    fn dense_rule() -> QuadratureRule {
        QuadratureRule::uniform(1024, 6).unwrap()
    }

    fn check_normalized(spec: &TruthSpec) {
        let z = dense_rule().integrate(|x| spec.density.density(x)).unwrap();
        assert!((z - 1.0).abs() < 1e-8, "{} integrates to {z}", spec.name);
        for i in 0..=10_000 {
            let x = i as f64 / 10_000.0;
            assert!(spec.density.density(x) > 0.0);
        }
    }

    #[test]
    fn tilted_uniform_phi_zero_is_uniform() {
        let spec = smooth_truth(SmoothKind::TiltedUniform { phi: 0.0 }).unwrap();
        for i in 0..=100 {
            let x = i as f64 / 100.0;
            assert!((spec.density.density(x) - 1.0).abs() < 1e-12);
        }
        check_normalized(&spec);
    }

    #[test]
    fn tilted_psi_series_matches_direct() {
        for &phi in &[-5.0, -1.0, -1e-3, -1e-6, 1e-6, 1e-3, 0.5, 5.0] {
            let direct = if phi == 0.0 {
                0.0
            } else {
                (((phi as f64).exp() - 1.0) / phi).ln()
            };
            assert!((tilted_psi(phi) - direct).abs() < 1e-10, "phi = {phi}");
        }
        assert_eq!(tilted_psi(0.0), 0.0);
    }

    #[test]
    fn tilted_members_normalized() {
        for &phi in &[-5.0, -2.0, 0.3, 5.0] {
            check_normalized(&smooth_truth(SmoothKind::TiltedUniform { phi }).unwrap());
        }
    }

    #[test]
    fn exp_sin_normalization_matches_riemann_oracle() {
        let spec = smooth_truth(SmoothKind::Analytic).unwrap();
        let n = 1_000_000usize;
        let z: f64 = (0..n)
            .map(|i| ((i as f64 + 0.5) / n as f64 * 2.0 * PI).sin().exp() / n as f64)
            .sum();
        // p0(x) * z should equal e^{sin(2 pi x)}.
        for i in 0..=100 {
            let x = i as f64 / 100.0;
            let expect = (2.0 * PI * x).sin().exp() / z;
            assert!((spec.density.density(x) - expect).abs() < 1e-9);
        }
    }

    #[test]
    fn spline_member_projects_to_itself() {
        let theta = vec![0.3, -0.5, 0.2, 0.4, -0.4];
        let spec = smooth_truth(SmoothKind::SplineMember {
            q: 3,
            k: 3,
            theta: theta.clone(),
        })
        .unwrap();
        check_normalized(&spec);
        let basis = SplineBasis::new(3, 3).unwrap();
        let proj = project_hellinger(&basis, &spec.density, 2.0).unwrap();
        assert!(proj.epsilon < 1e-6, "eps = {}", proj.epsilon);
    }

    #[test]
    fn hoelder_truth_is_deterministic() {
        let a = hoelder_truth(1.5, 42).unwrap();
        let b = hoelder_truth(1.5, 42).unwrap();
        for i in 0..=1000 {
            let x = i as f64 / 1000.0;
            assert_eq!(a.density.density(x), b.density.density(x));
        }
        check_normalized(&a);
    }

    #[test]
    fn hoelder_truth_rejects_bad_beta() {
        assert!(hoelder_truth(0.0, 1).is_err());
        assert!(hoelder_truth(4.5, 1).is_err());
    }

    fn supnorm_slope(spec: &TruthSpec, q: usize) -> f64 {
        let mut pts = Vec::new();
        for &j in &[6usize, 10, 18, 34] {
            let basis = SplineBasis::new(q, j + 1 - q).unwrap();
            let fit = fit_supnorm(
                &basis,
                |x| spec.density.density(x).max(LOG_CLAMP).ln(),
                4096,
            )
            .unwrap();
            pts.push(((j as f64).ln(), fit.sup_error.max(1e-15).ln()));
        }
        let n = pts.len() as f64;
        let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
        let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
        pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>()
            / pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum::<f64>()
    }

    #[test]
    fn hoelder_beta_4_slope_saturates_at_order() {
        let spec = hoelder_truth(4.0, 7).unwrap();
        let slope = supnorm_slope(&spec, 4);
        assert!((slope + 4.0).abs() < 0.5, "slope = {slope}");
    }

    #[test]
    fn hoelder_beta_1p5_slope() {
        let spec = hoelder_truth(1.5, 7).unwrap();
        let slope = supnorm_slope(&spec, 4);
        assert!((slope + 1.5).abs() < 0.4, "slope = {slope}");
    }

    #[test]
    fn analytic_truth_has_positive_distance_from_null() {
        // e^{sin(2 pi x)} is not a tilted uniform; its KL/Hellinger profile to
        // the closest few tilts stays bounded away from zero.
        let spec = smooth_truth(SmoothKind::Analytic).unwrap();
        let rule = dense_rule();
        let mut best = f64::INFINITY;
        for i in -50..=50 {
            let phi = i as f64 / 10.0;
            let psi = tilted_psi(phi);
            let prof = kl_profile(&spec.density, |x| (phi * x - psi).exp(), &rule).unwrap();
            best = best.min(prof.hellinger);
        }
        assert!(best > 0.1, "min h = {best}");
    }
}
