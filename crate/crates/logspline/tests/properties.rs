use logspline::basis::{centered, SplineBasis};
use logspline::posterior::log_sum_exp;
use logspline::quadrature::QuadratureRule;
use proptest::prelude::*;

proptest! {
    #[test]
    fn partition_of_unity_everywhere(
        q in 1usize..=4,
        k in 1usize..=20,
        x in 0.0f64..=1.0,
    ) {
        let basis = SplineBasis::new(q, k).unwrap();
        let (_, vals) = basis.eval_nonzero(x).unwrap();
        prop_assert!(vals.len() <= q);
        let s: f64 = vals.iter().sum();
        prop_assert!((s - 1.0).abs() < 1e-12, "sum = {s}");
    }

    #[test]
    fn quadrature_is_linear(
        a in -5.0f64..5.0,
        b in -5.0f64..5.0,
        pieces in 1usize..6,
    ) {
        let rule = QuadratureRule::uniform(pieces, 8).unwrap();
        let f = |x: f64| (3.0 * x).sin();
        let g = |x: f64| x * x;
        let lhs = rule.integrate(|x| a * f(x) + b * g(x)).unwrap();
        let rhs = a * rule.integrate(f).unwrap() + b * rule.integrate(g).unwrap();
        prop_assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn centering_sums_to_zero(theta in prop::collection::vec(-10.0f64..10.0, 1..12)) {
        let c = centered(&theta);
        prop_assert_eq!(c.len(), theta.len());
        let s: f64 = c.iter().sum();
        prop_assert!(s.abs() < 1e-10, "sum = {s}");
    }

    #[test]
    fn log_sum_exp_shift_invariant(
        terms in prop::collection::vec(-50.0f64..50.0, 1..20),
        shift in -30.0f64..30.0,
    ) {
        let base = log_sum_exp(&terms);
        let shifted: Vec<f64> = terms.iter().map(|t| t + shift).collect();
        let moved = log_sum_exp(&shifted) - shift;
        prop_assert!((base - moved).abs() < 1e-9, "{base} vs {moved}");
    }
}
