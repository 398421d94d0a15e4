use slrep::charmod::{CharacterParams, HalfPlane, SeriesId};
use slrep::flagdecomp::{decompose, sample_unipotent, BlockPattern, Route, UnipotentPoint};
use slrep::harness::{list_catalogue, run, CheckKind, SuiteConfig, SuiteEntry};
use slrep::matcore::{random_group_element, rng_for, Field, GroupElement, Mat, C64};
use slrep::operators::{
    compose_check, halfplane_preservation_check, unitarity_check, OperatorInstance, SeriesSpec, COMPOSE_TOL,
};
use slrep::repspaces::{gaussian_family, HalfPlaneRational, TestFunction};

fn real(rows: &[&[f64]]) -> GroupElement {
    GroupElement::new(Mat::from_real_rows(rows).unwrap(), Field::Real).unwrap()
}

#[test]
fn compose_with_identity_second_factor_is_exact() {
    for id in SeriesId::ALL {
        let spec = SeriesSpec::with_defaults(id);
        let g1 = random_group_element(spec.n(), spec.field(), 11, 1e3).unwrap();
        let g2 = GroupElement::identity(spec.n(), spec.field());
        let family = spec.family(1);
        let r = compose_check(id.as_str(), &spec, &g1, &g2, family[0].as_ref(), 10, 3, COMPOSE_TOL);
        assert!(r.passed(), "{id}: {r:?}");
        assert!(r.measured_max_error.unwrap() < 1e-14, "{id}: {:?}", r.measured_max_error);
    }
}

#[test]
fn unitarity_at_identity_is_exact() {
    for id in [SeriesId::Sl2cPrincipal, SeriesId::Sl2rDiscrete, SeriesId::Sl3rGelfandGraev, SeriesId::Sl3cDegenerate] {
        let spec = SeriesSpec::with_defaults(id);
        let family = spec.family(2);
        let fs: Vec<&dyn TestFunction> = family.iter().map(|f| f.as_ref()).collect();
        let g = GroupElement::identity(spec.n(), spec.field());
        let r = unitarity_check(id.as_str(), &spec, &g, &fs, &spec.default_quadrature(5), None);
        assert!(r.passed(), "{id}: {r:?}");
        assert_eq!(r.measured_max_error, Some(0.0), "{id}");
    }
}

#[test]
fn discrete_series_upper_triangular_bergman_norm() {
    let spec = SeriesSpec::new(SeriesId::Sl2rDiscrete, CharacterParams::discrete(2, HalfPlane::Upper)).unwrap();
    let f = HalfPlaneRational::new(C64::new(0.0, -1.0), 3, HalfPlane::Upper).unwrap();
    let g = real(&[&[1.5, 0.7], &[0.0, 1.0 / 1.5]]);
    let r = unitarity_check("s2-upper", &spec, &g, &[&f], &spec.default_quadrature(1), None);
    assert!(r.passed(), "{r:?}");
}

#[test]
fn diagonal_scaling_keeps_the_half_plane() {
    for a in [0.3, 1.0, 2.5] {
        let g = real(&[&[a, 0.0], &[0.0, 1.0 / a]]);
        for id in [SeriesId::Sl2rDiscrete, SeriesId::Sl2rLimitDiscrete] {
            let spec = SeriesSpec::with_defaults(id);
            let r = halfplane_preservation_check("diag", &spec, &g, 200, 9);
            assert!(r.passed(), "{id} a = {a}: {r:?}");
            let op = OperatorInstance::new(spec, g.clone()).unwrap();
            let z = C64::new(0.4, 1.3);
            let (_, zp) = op.act(&[z]).unwrap();
            assert!(zp[0].im > 0.0);
        }
    }
}

#[test]
fn discrete_multiplier_is_an_exact_cocycle() {
    let spec = SeriesSpec::with_defaults(SeriesId::Sl2rDiscrete);
    let mut worst: f64 = 0.0;
    for i in 0..200 {
        let g1 = random_group_element(2, Field::Real, 2 * i, 1e3).unwrap();
        let g2 = random_group_element(2, Field::Real, 2 * i + 1, 1e3).unwrap();
        let op1 = OperatorInstance::new(spec.clone(), g1.clone()).unwrap();
        let op2 = OperatorInstance::new(spec.clone(), g2.clone()).unwrap();
        let op12 = OperatorInstance::new(spec.clone(), g1.compose(&g2)).unwrap();
        let z = [C64::new(0.1 * i as f64 - 10.0, 0.5)];
        let (m12, z12) = op12.act(&z).unwrap();
        let (m1, z1) = op1.act(&z).unwrap();
        let (m2, z2) = op2.act(&z1).unwrap();
        worst = worst.max((m12 - m1 * m2).norm() / m12.norm()).max((z12[0] - z2[0]).norm() / z12[0].norm());
    }
    assert!(worst <= 1e-10, "{worst:e}");
}

#[test]
fn rotation_acts_on_the_line_as_a_mobius_map() {
    let g = real(&[&[0.0, 1.0], &[-1.0, 0.0]]);
    let z = UnipotentPoint::new(BlockPattern::full(2, Field::Real).unwrap(), vec![C64::new(2.0, 0.0)]).unwrap();
    let d = decompose(&z, &g, Route::ClosedForm).unwrap();
    assert!((d.z_out.coords()[0] - C64::new(-0.5, 0.0)).norm() < 1e-15);
}

#[test]
fn closed_form_and_oracle_agree_with_a_lower_unipotent_g() {
    let pattern = BlockPattern::full(3, Field::Complex).unwrap();
    let mut rng = rng_for(4, 0);
    let z = sample_unipotent(&mut rng, &pattern);
    let g = GroupElement::new(sample_unipotent(&mut rng, &pattern).embed(), Field::Complex).unwrap();
    for route in [Route::ClosedForm, Route::Oracle] {
        let d = decompose(&z, &g, route).unwrap();
        let expected = UnipotentPoint::from_matrix(pattern.clone(), &(&z.embed() * g.mat()));
        for (a, b) in d.z_out.coords().iter().zip(expected.coords()) {
            assert!((a - b).norm() < 1e-12);
        }
        for k in d.k.block_dets() {
            assert!((k - C64::new(1.0, 0.0)).norm() < 1e-12);
        }
    }
}

#[test]
fn compose_config_over_the_catalogue_passes() {
    let suites = SeriesId::ALL
        .into_iter()
        .map(|id| SuiteEntry::new(id.as_str(), CheckKind::Compose).series(id).trials(10))
        .collect();
    let report = run(&SuiteConfig::new(77, suites)).unwrap();
    assert_eq!(report.reports.len(), 21);
    assert!(report.all_passed(), "{:?}", report.reports.iter().filter(|r| !r.passed()).collect::<Vec<_>>());
}

#[test]
fn config_with_zero_tolerance_fails_everything() {
    let text = r#"{"seed": 3, "suites": [
        {"suite_name": "c", "check": "compose", "series": "sl2c-principal", "trials": 2, "tolerance": 0.0},
        {"suite_name": "h", "check": "haar_invariance", "chart": "sl3c-full", "trials": 5, "tolerance": 0.0}
    ]}"#;
    let report = run(&SuiteConfig::from_json(text).unwrap()).unwrap();
    assert_eq!(report.reports.len(), 2);
    assert!(report.reports.iter().all(|r| !r.passed()));
}

#[test]
fn catalogue_lists_the_gg_and_stein_entries() {
    let cat = list_catalogue();
    assert_eq!(cat.len(), 21);
    let gg = cat.iter().find(|e| e.series_id == SeriesId::Sl3rGelfandGraev).unwrap();
    assert_eq!(gg.pattern, "2,1");
    assert!(gg.arity.s_or_n && gg.arity.rho == 1);
    let stein = cat.iter().find(|e| e.series_id == SeriesId::Sl4cStein).unwrap();
    assert_eq!(stein.pattern, "2,2");
    assert_eq!(stein.space, "det-kernel");
    assert_eq!((stein.arity.sigma, stein.arity.m, stein.arity.rho), (1, 0, 0));
}

#[test]
fn gaussian_family_members_are_distinct() {
    let family = gaussian_family(&[Field::Complex], 5);
    let x = [C64::new(0.2, -0.1)];
    for i in 0..5 {
        for j in 0..i {
            assert!((family[i].eval(&x) - family[j].eval(&x)).norm() > 1e-6);
        }
    }
}
