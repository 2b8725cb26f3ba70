use homog_core::epsilon::EpsilonTemplate;
use homog_core::expr::Expr;
use homog_core::fields::{PeriodicField, PotentialField, DEFAULT_MEAN_TOL};
use homog_core::harness::{StudySpec, Sweep};

fn spec(p: f64) -> StudySpec {
    let t = EpsilonTemplate::unit_box(
        PeriodicField::trig(1, 2.0, 1.0, 1.0),
        PotentialField::new(PeriodicField::trig(1, 0.0, 1.0, 1.0), DEFAULT_MEAN_TOL).unwrap(),
        Expr::parse("1").unwrap(),
        p,
    );
    StudySpec::new(t, vec![1.0 / 8.0, 1.0 / 16.0, 1.0 / 32.0, 1.0 / 64.0]).unwrap()
}

#[test]
fn holder_quotient_is_bounded_below_three() {
    let s = spec(2.5);
    let report = Sweep::run(&s).unwrap().potential_pairing(&s).unwrap();
    let m = report.modulus.as_ref().unwrap();
    assert_eq!(m.kind, "holder");
    assert!((m.exponent - 0.5).abs() < 1e-15);
    assert!(m.bounded, "{m:?}");
    assert!(report.series("potential_pairing").unwrap().passed);
}

#[test]
fn scaled_pairing_converges_in_the_linear_case() {
    let s = spec(2.0);
    let sweep = Sweep::run(&s).unwrap();
    let report = sweep.scaled_pairing(&s).unwrap();
    let series = report.series("scaled_pairing").unwrap();
    assert!(series.passed, "{:?}", series.rows);
    let conv = sweep.convergence(&s).unwrap();
    assert!(conv.series("error").unwrap().passed);
}
