mod common;

use kantorovich_core::oracle::exact_ot;
use kantorovich_core::{
    build_augmented, kantorovich_distance, CostMatrix, DeltaSpec, GroundMetric, Histogram, Regularization,
    SinkhornOptions,
};
use proptest::prelude::*;
use rand::Rng;

fn hist(v: Vec<f64>) -> Histogram {
    Histogram::new(v).unwrap()
}

fn exact(a: &[f64], b: &[f64], metric: &GroundMetric, delta: f64, p: f64) -> f64 {
    let aug = build_augmented(metric, &DeltaSpec::Vector(vec![delta; metric.d()]), p).unwrap();
    kantorovich_distance(&hist(a.to_vec()), &hist(b.to_vec()), &aug, Regularization::Exact, &SinkhornOptions::default())
        .unwrap()
        .kp
}

#[test]
fn all_mass_to_the_virtual_point() {
    // zero against a point mass: everything travels through ω
    let m = common::line_metric(3);
    for (delta, p) in [(2.0, 1.0), (3.0, 1.0), (2.0, 2.0)] {
        let kp = exact(&[0.0, 0.0, 0.0], &[0.0, 0.4, 0.0], &m, delta, p);
        assert!((kp - 0.4 * f64::powf(delta, p)).abs() <= 1e-14);
    }
}

#[test]
fn root_is_taken_for_p_above_one() {
    let m = common::line_metric(4);
    let aug = build_augmented(&m, &DeltaSpec::Vector(vec![3.0; 4]), 2.0).unwrap();
    let d = kantorovich_distance(
        &hist(vec![0.5, 0.0, 0.0, 0.0]),
        &hist(vec![0.0, 0.0, 0.5, 0.0]),
        &aug,
        Regularization::Exact,
        &SinkhornOptions::default(),
    )
    .unwrap();
    assert!((d.kp - 2.0).abs() <= 1e-14);
    assert!((d.k - 2f64.sqrt()).abs() <= 1e-14);
}

#[test]
fn admissibility_flags() {
    let m = common::line_metric(4);
    let ok = build_augmented(&m, &DeltaSpec::Vector(vec![3.0; 4]), 1.0).unwrap().admissibility();
    assert!(ok.dominates_rows && ok.lipschitz && ok.augmented_is_metric);
    assert!(ok.warnings().is_empty());
    let small = build_augmented(&m, &DeltaSpec::Vector(vec![1.0; 4]), 1.0).unwrap().admissibility();
    assert!(!small.dominates_rows && !small.augmented_is_metric);
    let steep = build_augmented(&m, &DeltaSpec::Vector(vec![3.0, 5.0, 3.0, 3.0]), 1.0).unwrap().admissibility();
    assert!(!steep.lipschitz);
    assert!(!steep.warnings().is_empty());
}

#[test]
fn quantile_delta_is_constant() {
    let m = common::line_metric(5);
    let aug = build_augmented(&m, &DeltaSpec::Quantile(95.0), 1.0).unwrap();
    assert_eq!(aug.q(), Some(95.0));
    assert!(aug.delta().iter().all(|&x| x == aug.delta()[0]));
    assert!(aug.delta()[0] > 3.0 && aug.delta()[0] <= 4.0);
    assert_eq!(aug.d(), 5);
    assert_eq!(aug.cost().n(), 6);
}

#[test]
fn entropic_approaches_exact() {
    let mut rng = common::rng(51);
    let opts = SinkhornOptions { tol: 1e-12, max_iter: 1_000_000, ..Default::default() };
    for _ in 0..20 {
        let d = rng.random_range(2..=5);
        let m = common::random_metric(&mut rng, d);
        let aug = build_augmented(&m, &DeltaSpec::Quantile(95.0), 1.0).unwrap();
        let a = hist(common::random_histogram(&mut rng, d, 0.3, 0.9));
        let b = hist(common::random_histogram(&mut rng, d, 0.3, 0.9));
        let e = kantorovich_distance(&a, &b, &aug, Regularization::Exact, &opts).unwrap().kp;
        let mut prev = f64::NEG_INFINITY;
        for lambda in [0.5, 2.0, 8.0] {
            let s = kantorovich_distance(&a, &b, &aug, Regularization::Entropic(lambda), &opts).unwrap().kp;
            let n = (d + 1) as f64;
            assert!(s <= e + 1e-9 && s >= e - 2.0 * n.ln() / lambda, "{s} vs {e}");
            // smoothed values increase towards the exact one as λ grows
            assert!(s >= prev - 1e-9);
            prev = s;
        }
    }
}

#[test]
fn dimension_mismatch_is_reported() {
    let m = common::line_metric(3);
    let aug = build_augmented(&m, &DeltaSpec::Quantile(95.0), 1.0).unwrap();
    let r = kantorovich_distance(&hist(vec![0.1, 0.2]), &hist(vec![0.1, 0.2, 0.3]), &aug, Regularization::Exact, &SinkhornOptions::default());
    assert!(r.is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn equal_mass_matches_plain_transport(seed in any::<u64>(), p in 1u32..=2) {
        let mut rng = common::rng(seed);
        let d = rng.random_range(2..=5);
        let m = common::random_metric(&mut rng, d);
        let mass = rng.random_range(0.2..1.0);
        let a = common::random_with_mass(&mut rng, d, mass);
        let b = common::random_with_mass(&mut rng, d, mass);
        let delta = m.matrix().max();
        let kp = exact(&a, &b, &m, delta, p as f64);
        let powered = CostMatrix::new(m.matrix().map(|x| x.powi(p as i32))).unwrap();
        let an: Vec<f64> = a.iter().map(|x| x / mass).collect();
        let bn: Vec<f64> = b.iter().map(|x| x / mass).collect();
        let plain = mass * exact_ot(&an, &bn, &powered).unwrap().value;
        prop_assert!((kp - plain).abs() <= 1e-10, "{} vs {}", kp, plain);
    }

    #[test]
    fn mass_gap_lower_bound(seed in any::<u64>(), factor in 1.0f64..10.0) {
        let mut rng = common::rng(seed);
        let d = rng.random_range(2..=5);
        let m = common::random_metric(&mut rng, d);
        let a = common::random_histogram(&mut rng, d, 0.1, 1.0);
        let b = common::random_histogram(&mut rng, d, 0.1, 1.0);
        let gamma = factor * m.matrix().max();
        let kp = exact(&a, &b, &m, gamma, 1.0);
        let gap = (a.iter().sum::<f64>() - b.iter().sum::<f64>()).abs();
        prop_assert!(kp >= gamma * gap - 1e-12);
    }
}
