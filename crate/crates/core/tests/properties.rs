use num_complex::Complex64 as C;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use szego_lab::asymptotics::{check_rapid_decay, fit_power_law};
use szego_lab::geometry::{lambda, moment_map, sample_point, ModelManifold};
use szego_lab::hardy::{
    build_section_space, isotype_basis, multiplicities_of_degrees, multiplicity_by_characters,
    KernelEvaluator,
};
use szego_lab::liegroup::{adjoint, kappa, AlgebraElement, GroupElement};
use szego_lab::oscillatory::{gaussian_j, gaussian_j_quadrature};

fn weights() -> impl Strategy<Value = Vec<u32>> {
    prop::collection::vec(1u32..=4, 2..=3).prop_filter("0 in image", |w| {
        let total: u32 = w.iter().sum();
        2 * w.iter().max().unwrap() > total
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn adjoint_preserves_norm(seed in any::<u64>(), a in -3.0..3.0f64, b in -3.0..3.0f64, c in -3.0..3.0f64) {
        let g = GroupElement::random(&mut ChaCha8Rng::seed_from_u64(seed));
        let xi = AlgebraElement::new(a, b, c);
        prop_assert!((adjoint(&g, &xi).norm() - xi.norm()).abs() < 1e-12);
    }

    #[test]
    fn kappa_is_on_the_unit_circle(r in 0.0..0.999f64) {
        let k = kappa(r).unwrap();
        prop_assert!((k * k + r * r - 1.0).abs() < 1e-15);
    }

    #[test]
    fn moment_map_is_equivariant(w in weights(), seed in any::<u64>()) {
        let m = ModelManifold::new(w).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = sample_point(&m, &mut rng);
        let g = GroupElement::random(&mut rng);
        let lhs = moment_map(&m, &p.act(&g)).coords;
        let rhs = adjoint(&g, &moment_map(&m, &p).coords);
        prop_assert!(lhs.add(&rhs.scale(-1.0)).norm() < 1e-10);
        prop_assert!((lambda(&m, &p.act(&g)) - lambda(&m, &p)).abs() < 1e-10);
        let (lo, hi) = m.lambda_range();
        let l = lambda(&m, &p);
        prop_assert!(l >= lo - 1e-12 && l <= hi + 1e-12);
    }

    #[test]
    fn isotype_dimensions_sum_to_space(w in weights(), k in 0u32..=8) {
        let degrees: Vec<u32> = w.iter().map(|p| p * k).collect();
        let mult = multiplicities_of_degrees(&degrees);
        let total: u64 = mult.iter().enumerate().map(|(n, c)| c * (n as u64 + 1)).sum();
        let expected: u64 = degrees.iter().map(|&d| d as u64 + 1).product();
        prop_assert_eq!(total, expected);
    }

    #[test]
    fn clebsch_gordan_matches_characters(w in weights(), k in 0u32..=5) {
        let degrees: Vec<u32> = w.iter().map(|p| p * k).collect();
        let mult = multiplicities_of_degrees(&degrees);
        for (n, &c) in mult.iter().enumerate() {
            prop_assert_eq!(c, multiplicity_by_characters(&degrees, n as u32));
        }
    }

    #[test]
    fn power_law_fit_is_exact(exponent in -3.0..3.0f64, log_c in -5.0..5.0f64, k0 in 2u32..20) {
        let samples: Vec<(f64, f64)> = (0..8).map(|i| {
            let k = (k0 + 3 * i) as f64;
            (k, log_c.exp() * k.powf(exponent))
        }).collect();
        let fit = fit_power_law(&samples).unwrap();
        prop_assert!((fit.exponent - exponent).abs() < 1e-10);
        prop_assert!(fit.residual_rms < 1e-12);
    }

    #[test]
    fn decay_verdict_is_monotone(rate in 0.5..6.0f64, n in 1u32..6) {
        let samples: Vec<(u32, f64)> = (10..40).step_by(3).map(|k| (k, (k as f64).powf(-rate))).collect();
        let report = check_rapid_decay(&samples, 6).unwrap();
        if report.decreasing_at(n) {
            for lower in 0..n {
                prop_assert!(report.decreasing_at(lower));
            }
        }
    }

    #[test]
    fn gaussian_j_closed_form(l in 0.2..8.0f64, xi in -4.0..4.0f64) {
        let exact = gaussian_j(l, xi).unwrap();
        let quad = gaussian_j_quadrature(l, xi).unwrap().value;
        prop_assert!((quad - exact).norm() <= 1e-8 * exact.norm());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn kernels_are_hermitian_and_invariant(seed in any::<u64>(), k in 1u32..=4) {
        let m = ModelManifold::new(vec![1, 2]).unwrap();
        let s = build_section_space(&m, k).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = sample_point(&m, &mut rng);
        let y = sample_point(&m, &mut rng);
        let g = GroupElement::random(&mut rng);
        for n in (k % 2..=3 * k).step_by(2) {
            let basis = isotype_basis(&s, n).unwrap();
            let ev = KernelEvaluator::new(&s, &basis);
            let v = ev.evaluate_checked(&x, &y, 1e-6).unwrap().value;
            let w = ev.evaluate(&y, &x).value;
            prop_assert!((v - w.conj()).norm() < 1e-12);
            let gv = ev.evaluate(&x.act(&g), &y.act(&g)).value;
            prop_assert!((gv - v).norm() < 1e-8);
            let d: C = ev.evaluate(&x, &x).value;
            prop_assert!(d.re >= 0.0 && d.im.abs() < 1e-12);
        }
    }
}
