use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

use ctrecon::covariance::shrinkage_intensity;
use ctrecon::reconcile::set_negative_to_zero;
use ctrecon::scoring::{crps, energy_score};
use ctrecon::{
    build_omega, CovarianceKind, CovarianceSpec, CrossTemporalStructure, EsPairs, ReconciliationMap, ResidualInput,
    ResidualKind, ResidualSet,
};

fn structure() -> impl Strategy<Value = CrossTemporalStructure> {
    (2usize..=4, prop::sample::select(vec![2usize, 3, 4, 6]))
        .prop_flat_map(|(n_b, m)| {
            (Just(n_b), Just(m), prop::collection::vec(prop::collection::vec(prop::bool::ANY, n_b), 0..=2))
        })
        .prop_filter_map("every upper row aggregates something", |(n_b, m, rows)| {
            if rows.iter().any(|r| !r.contains(&true)) {
                return None;
            }
            let mut agg = DMatrix::from_element(1, n_b, 1.0);
            for r in &rows {
                let last = agg.nrows();
                agg = agg.insert_row(last, 0.0);
                for (j, &b) in r.iter().enumerate() {
                    agg[(last, j)] = if b { 1.0 } else { 0.0 };
                }
            }
            CrossTemporalStructure::from_parts(agg, m).ok()
        })
}

fn values(len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-50.0f64..50.0, len)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn summation_is_annihilated(s in structure()) {
        let prod = s.constraints() * s.summation();
        prop_assert!(prod.amax() <= 1e-12);
    }

    #[test]
    fn aggregated_bottom_is_coherent(s in structure(), seed in any::<u64>()) {
        let b = DVector::from_fn(s.bottom_dim(), |i, _| ((seed >> (i % 60)) & 0xff) as f64 - 100.0);
        let x = s.aggregate_bottom(&b).unwrap();
        prop_assert!(s.coherence_error(&x) <= 1e-9);
    }

    #[test]
    fn structural_projection_laws(s in structure(), raw in values(400)) {
        let dim = s.dim();
        let omega = build_omega(&CovarianceSpec::new(CovarianceKind::Struc), &s, ResidualInput::None).unwrap();
        let map = ReconciliationMap::projection(&s, &omega).unwrap();
        let m = map.matrix();
        prop_assert!((m * m - m).amax() <= 1e-9);
        prop_assert!((m * s.summation() - s.summation()).amax() <= 1e-9);
        let x = DVector::from_fn(dim, |i, _| raw[i % raw.len()]);
        let y = map.reconcile(&x).unwrap();
        prop_assert!(s.coherence_error(&y) <= 1e-8 * (1.0 + x.amax()));
        let again = map.reconcile(&y).unwrap();
        prop_assert!((again - &y).amax() <= 1e-8 * (1.0 + y.amax()));
    }

    #[test]
    fn shrinkage_projection_is_idempotent(s in structure(), raw in values(600)) {
        let dim = s.dim();
        let periods = 2 * dim;
        let e = DMatrix::from_fn(periods, dim, |r, c| raw[(r * dim + c) % raw.len()] + (r * c) as f64 * 0.01);
        let e = ResidualSet::new(&s, e, ResidualKind::MultiStep).unwrap();
        let omega = build_omega(&CovarianceSpec::new(CovarianceKind::Shr), &s, ResidualInput::MultiStep(&e)).unwrap();
        if let Ok(map) = ReconciliationMap::projection(&s, &omega) {
            let m = map.matrix();
            prop_assert!((s.constraints() * m).amax() <= 1e-7);
            prop_assert!((m * m - m).amax() <= 1e-7);
        }
    }

    #[test]
    fn shrinkage_intensity_in_unit_interval(raw in values(60), center in any::<bool>()) {
        let x = DMatrix::from_row_slice(12, 5, &raw);
        if let Ok(l) = shrinkage_intensity(&x, center) {
            prop_assert!((0.0..=1.0).contains(&l));
        }
    }

    #[test]
    fn crps_properties(draws in values(9), z in -60.0f64..60.0, shift in -10.0f64..10.0) {
        let c = crps(&draws, z).unwrap();
        prop_assert!(c >= -1e-12);
        let shifted: Vec<f64> = draws.iter().map(|d| d + shift).collect();
        let c2 = crps(&shifted, z + shift).unwrap();
        prop_assert!((c - c2).abs() <= 1e-9 * (1.0 + c.abs()));
        let mut rev = draws.clone();
        rev.reverse();
        prop_assert!((crps(&rev, z).unwrap() - c).abs() <= 1e-9 * (1.0 + c.abs()));
    }

    #[test]
    fn point_mass_scores_distance(z in -60.0f64..60.0, p in -60.0f64..60.0, l in 2usize..10) {
        let draws = vec![p; l];
        prop_assert!((crps(&draws, z).unwrap() - (p - z).abs()).abs() <= 1e-9);
        let x = DMatrix::from_element(l, 2, p);
        let zv = DVector::from_element(2, z);
        let want = 2f64.sqrt() * (p - z).abs();
        for pairs in [EsPairs::Consecutive, EsPairs::All] {
            prop_assert!((energy_score(&x, &zv, pairs).unwrap() - want).abs() <= 1e-9);
        }
    }

    #[test]
    fn nonneg_heuristic_is_coherent_and_nonnegative(s in structure(), raw in values(64)) {
        let b = DVector::from_fn(s.bottom_dim(), |i, _| raw[i % raw.len()]);
        let x = s.aggregate_bottom(&b).unwrap();
        let y = set_negative_to_zero(&s, &x).unwrap();
        prop_assert!(y.min() >= 0.0);
        prop_assert!(s.coherence_error(&y) <= 1e-9);
    }
}
