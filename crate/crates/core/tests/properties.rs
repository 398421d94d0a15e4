use proptest::prelude::*;
use proptest::sample::{select, subsequence};

use slrep::charmod::{are_equivalent, weyl_orbit_sl3, Sl3Params, SeriesId, WEYL_MAPS};
use slrep::flagdecomp::{closed_form_vs_oracle, cocycle_defect, sample_unipotent, Route};
use slrep::harness::{character_algebra, decomposition_cases};
use slrep::matcore::{random_group_element, rng_for, Field, Mat};
use slrep::measures::{shipped_charts, verify_invariance, Side};
use slrep::operators::{halfplane_preservation_check, random_params, OperatorInstance, SeriesSpec};

fn field(complex: bool) -> Field {
    if complex {
        Field::Complex
    } else {
        Field::Real
    }
}

fn same(a: &Sl3Params, b: &Sl3Params) -> bool {
    a.m2 == b.m2 && a.m3 == b.m3 && (a.rho2 - b.rho2).abs() < 1e-12 && (a.rho3 - b.rho3).abs() < 1e-12
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn det_is_multiplicative(seed in any::<u64>(), n in 2usize..=4, complex in any::<bool>()) {
        let mut rng = rng_for(seed, 0);
        let a = Mat::from_fn(n, |_, _| slrep::matcore::sample_scalar(&mut rng, field(complex)));
        let b = Mat::from_fn(n, |_, _| slrep::matcore::sample_scalar(&mut rng, field(complex)));
        let scale = 1.0 + a.det().norm() * b.det().norm() + (&a * &b).max_norm().powi(n as i32);
        prop_assert!(((&a * &b).det() - a.det() * b.det()).norm() <= 1e-10 * scale);
    }

    #[test]
    fn minor_is_the_extracted_determinant(
        seed in any::<u64>(),
        (rows, cols) in (1usize..=4).prop_flat_map(|k| (subsequence(vec![0, 1, 2, 3], k), subsequence(vec![0, 1, 2, 3], k))),
    ) {
        let g = random_group_element(4, Field::Complex, seed, 1e3).unwrap();
        let sub = Mat::from_fn(rows.len(), |i, j| g.mat()[(rows[i], cols[j])]);
        prop_assert!((g.mat().minor(&rows, &cols).unwrap() - sub.det()).norm() <= 1e-12 * (1.0 + sub.det().norm()));
    }

    #[test]
    fn random_elements_are_reproducible_and_normalized(seed in any::<u64>(), n in 2usize..=4, complex in any::<bool>()) {
        let a = random_group_element(n, field(complex), seed, 1e3).unwrap();
        let b = random_group_element(n, field(complex), seed, 1e3).unwrap();
        prop_assert_eq!(a.mat(), b.mat());
        prop_assert!((a.mat().det() - 1.0).norm() <= 1e-10);
        prop_assert!(a.mat().condition_number() <= 1e3);
    }

    #[test]
    fn closed_form_matches_oracle(seed in any::<u64>(), case in 0usize..10) {
        let pattern = decomposition_cases()[case].clone();
        let mut rng = rng_for(seed, 1);
        let z = sample_unipotent(&mut rng, &pattern);
        let g = random_group_element(pattern.n(), pattern.field(), seed, 1e3).unwrap();
        if let Ok(err) = closed_form_vs_oracle(&z, &g) {
            prop_assert!(err <= 1e-10, "{} {err:e}", pattern.label());
        }
    }

    #[test]
    fn decomposition_is_a_cocycle(seed in any::<u64>(), case in 0usize..10) {
        let pattern = decomposition_cases()[case].clone();
        let mut rng = rng_for(seed, 2);
        let z = sample_unipotent(&mut rng, &pattern);
        let g1 = random_group_element(pattern.n(), pattern.field(), seed, 1e2).unwrap();
        let g2 = random_group_element(pattern.n(), pattern.field(), seed ^ 1, 1e2).unwrap();
        if let Ok((k, action)) = cocycle_defect(&z, &g1, &g2, Route::ClosedForm) {
            prop_assert!(k <= 1e-9 && action <= 1e-9, "{} {k:e} {action:e}", pattern.label());
        }
    }

    #[test]
    fn multiplier_is_a_cocycle(seed in any::<u64>(), which in 0usize..21) {
        let id = SeriesId::ALL[which];
        let params = random_params(id, &mut rng_for(seed, 3));
        let spec = SeriesSpec::new(id, params).unwrap();
        let g1 = random_group_element(spec.n(), spec.field(), seed, 1e2).unwrap();
        let g2 = random_group_element(spec.n(), spec.field(), seed ^ 7, 1e2).unwrap();
        let op1 = OperatorInstance::new(spec.clone(), g1.clone()).unwrap();
        let op2 = OperatorInstance::new(spec.clone(), g2.clone()).unwrap();
        let op12 = OperatorInstance::new(spec.clone(), g1.compose(&g2)).unwrap();
        let x = spec.sample_point(&mut rng_for(seed, 4));
        let (Ok((m12, x12)), Ok((m1, x1))) = (op12.act(&x), op1.act(&x)) else { return Ok(()) };
        let Ok((m2, x2)) = op2.act(&x1) else { return Ok(()) };
        let scale = m12.norm().max((m1 * m2).norm());
        prop_assert!((m12 - m1 * m2).norm() <= 1e-8 * scale, "{id}: {m12} vs {}", m1 * m2);
        for (a, b) in x12.iter().zip(&x2) {
            prop_assert!((a - b).norm() <= 1e-8 * (1.0 + a.norm()), "{id}: {a} vs {b}");
        }
    }

    #[test]
    fn weyl_orbits_are_closed(m2 in -5i64..=5, m3 in -5i64..=5, r2 in -3.0f64..3.0, r3 in -3.0f64..3.0, real in any::<bool>()) {
        let orbit = weyl_orbit_sl3(Sl3Params::new(m2, m3, r2, r3), real);
        prop_assert!(6 % orbit.len() == 0, "size {}", orbit.len());
        for p in &orbit {
            for map in WEYL_MAPS {
                let mut q = map(*p);
                if real {
                    q = Sl3Params::new(q.m2.rem_euclid(2), q.m3.rem_euclid(2), q.rho2, q.rho3);
                }
                prop_assert!(orbit.iter().any(|o| same(o, &q)));
            }
        }
    }

    #[test]
    fn equivalence_is_reflexive_and_symmetric(seed in any::<u64>(), which in 0usize..21) {
        let id = SeriesId::ALL[which];
        let a = random_params(id, &mut rng_for(seed, 5));
        let b = random_params(id, &mut rng_for(seed, 6));
        prop_assert!(are_equivalent(id, &a, &a));
        prop_assert_eq!(are_equivalent(id, &a, &b), are_equivalent(id, &b, &a));
    }

    #[test]
    fn principal_characters_are_unitary_and_multiplicative(
        seed in any::<u64>(),
        id in select(SeriesId::ALL.into_iter().filter(|id| id.is_principal_type()).collect::<Vec<_>>()),
    ) {
        let r = character_algebra(id, None, 5, seed);
        prop_assert!(r.passed() || r.status == slrep::report::Status::Skipped, "{r:?}");
    }

    #[test]
    fn sign_law_holds(seed in any::<u64>(), which in 0usize..3) {
        let id = [SeriesId::Sl2rDiscrete, SeriesId::Sl2rLimitDiscrete, SeriesId::Sl3rGelfandGraev][which];
        let spec = SeriesSpec::with_defaults(id);
        let g = random_group_element(spec.n(), Field::Real, seed, 1e3).unwrap();
        prop_assert!(halfplane_preservation_check("sign", &spec, &g, 20, seed).passed());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn haar_densities_are_invariant(seed in any::<u64>(), which in 0usize..9, left in any::<bool>()) {
        let charts = shipped_charts();
        let chart = &charts[which % charts.len()];
        let side = if left { Side::Left } else { Side::Right };
        let r = verify_invariance(chart, side, 5, seed);
        prop_assert!(r.passed(), "{} {r:?}", chart.name);
    }
}
