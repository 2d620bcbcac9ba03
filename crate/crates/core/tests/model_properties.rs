use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use warranty_core::model::{
    joint_distribution, joint_pdf, joint_reliability, marginal_cdf, marginal_pdf, marginal_quantile, sample,
    JointKernel, LifePoint, ParamVector, Scale,
};
use warranty_core::quadrature::{adaptive_cubature_scalar, CubatureOptions, Rect};

fn psi_strategy(theta_lo: f64) -> impl Strategy<Value = ParamVector> {
    (0.5f64..3.0, 0.8f64..3.0, 0.5f64..3.0, 0.8f64..3.0, theta_lo..1.0)
        .prop_map(|(a, b, c, d, e)| ParamVector::new(a, b, c, d, e).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 20, ..ProptestConfig::default() })]

    #[test]
    fn density_integrates_to_one(psi in psi_strategy(0.2)) {
        let k = JointKernel::new(&psi);
        let qt = marginal_quantile(Scale::Age, 1.0 - 1e-12, &psi).unwrap();
        let qu = marginal_quantile(Scale::Usage, 1.0 - 1e-12, &psi).unwrap();
        let opts = CubatureOptions { abs_tol: 1e-7, rel_tol: 1e-7, ..Default::default() };
        let (v, _) = adaptive_cubature_scalar(Rect::new(0.0, qt, 0.0, qu), &opts, |t, u| k.pdf(t, u)).unwrap();
        prop_assert!((v - 1.0).abs() < 1e-4, "integral {v} for {psi:?}");
    }

    #[test]
    fn density_is_mixed_partial_of_reliability(
        psi in psi_strategy(0.15),
        pt in 0.2f64..0.8,
        pu in 0.2f64..0.8,
    ) {
        let t = marginal_quantile(Scale::Age, pt, &psi).unwrap();
        let u = marginal_quantile(Scale::Usage, pu, &psi).unwrap();
        let (ht, hu) = (1e-4 * t, 1e-4 * u);
        let r = |a: f64, b: f64| joint_reliability(LifePoint { t: a, u: b }, &psi).unwrap();
        let fd = (r(t + ht, u + hu) - r(t + ht, u - hu) - r(t - ht, u + hu) + r(t - ht, u - hu)) / (4.0 * ht * hu);
        let f = joint_pdf(LifePoint { t, u }, &psi).unwrap();
        prop_assert!((fd - f).abs() <= 1e-4 * f.max(1e-2), "fd {fd} vs pdf {f}");
    }

    #[test]
    fn independence_at_theta_one(
        eta_t in 0.5f64..3.0, lam_t in 0.5f64..3.0, eta_u in 0.5f64..3.0, lam_u in 0.5f64..3.0,
        t in 0.05f64..3.0, u in 0.05f64..3.0,
    ) {
        let psi = ParamVector::new(eta_t, lam_t, eta_u, lam_u, 1.0).unwrap();
        let p = LifePoint { t, u };
        // Survival written out directly: 1 - cdf cancels in the far tail.
        let rt = (-(t / eta_t).powf(lam_t)).exp();
        let ru = (-(u / eta_u).powf(lam_u)).exp();
        let r = joint_reliability(p, &psi).unwrap();
        prop_assert!((r - rt * ru).abs() <= 1e-10 * r.max(1e-300));
        let f = joint_pdf(p, &psi).unwrap();
        let g = marginal_pdf(Scale::Age, t, &psi).unwrap() * marginal_pdf(Scale::Usage, u, &psi).unwrap();
        prop_assert!((f - g).abs() <= 1e-10 * g);
    }

    #[test]
    fn distribution_is_a_rectangle_measure(psi in psi_strategy(0.15), t in 0.01f64..3.0, u in 0.01f64..3.0, dt in 0.0f64..1.0, du in 0.0f64..1.0) {
        let p = |a: f64, b: f64| joint_distribution(LifePoint { t: a, u: b }, &psi).unwrap();
        let mass = p(t + dt, u + du) - p(t, u + du) - p(t + dt, u) + p(t, u);
        let complement = 1.0 - joint_reliability(LifePoint { t, u }, &psi).unwrap();
        let marginal = marginal_cdf(Scale::Age, t, &psi).unwrap();
        prop_assert!(mass >= -1e-12);
        prop_assert!(p(t, u) <= complement + 1e-12);
        prop_assert!(p(t, u) <= marginal + 1e-12);
    }

    #[test]
    fn reliability_is_decreasing(psi in psi_strategy(0.1), t in 0.0f64..3.0, u in 0.0f64..3.0, d in 0.0f64..1.0) {
        let r = |a: f64, b: f64| joint_reliability(LifePoint { t: a, u: b }, &psi).unwrap();
        prop_assert!(r(t + d, u) <= r(t, u) + 1e-15);
        prop_assert!(r(t, u + d) <= r(t, u) + 1e-15);
        prop_assert!((0.0..=1.0).contains(&r(t, u)));
    }
}

#[test]
fn sampler_matches_distribution() {
    let psi = ParamVector::new(1.522, 1.015, 0.722, 0.930, 0.172).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let n = 100_000;
    let pts: Vec<LifePoint> = (0..n).map(|_| sample(&psi, &mut rng)).collect();
    for &(t, u) in &[(0.5, 0.3), (1.5, 0.5), (0.2, 1.0), (2.0, 2.0)] {
        let emp = pts.iter().filter(|p| p.t <= t && p.u <= u).count() as f64 / n as f64;
        let exact = joint_distribution(LifePoint { t, u }, &psi).unwrap();
        let se = (exact * (1.0 - exact) / n as f64).sqrt();
        assert!((emp - exact).abs() < 4.0 * se, "({t},{u}): {emp} vs {exact}");
    }
}

#[test]
fn axis_and_domain_errors() {
    let psi = ParamVector::new(1.0, 1.5, 1.0, 1.5, 0.5).unwrap();
    assert!(joint_pdf(LifePoint { t: 0.0, u: 0.0 }, &psi).is_err());
    assert!(ParamVector::new(1.0, 1.0, 1.0, 1.0, 0.0).is_err());
    assert!(ParamVector::new(1.0, 1.0, 1.0, 1.0, 1.01).is_err());
    assert!(ParamVector::new(-1.0, 1.0, 1.0, 1.0, 0.5).is_err());
    assert_eq!(joint_reliability(LifePoint { t: 0.0, u: 0.0 }, &psi).unwrap(), 1.0);
}
