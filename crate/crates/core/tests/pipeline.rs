use ghost_imaging::fields::{ComplexField, Grid1D};
use ghost_imaging::io;
use ghost_imaging::propagation::{composition_check, propagate, ArmLabel, ArmResponse};
use ghost_imaging::scenarios::{run_lensless, ImagingMetrics, LenslessConfig};
use num_complex::Complex64;

#[test]
fn composition_holds_for_positive_and_negative_legs() {
    for (a, b) in [(0.05, 0.05), (0.25, -0.05), (-0.02, 0.12)] {
        let c = composition_check(0.5e-6, a, b).unwrap();
        assert!(c.rel_l2 <= 1e-3, "({a}, {b}): {}", c.rel_l2);
        assert_eq!(c.sampling_violations, 0);
    }
}

#[test]
fn forward_then_backward_propagation_recovers_an_apodized_field() {
    let lambda = 0.5e-6;
    let w0 = 60e-6;
    // 1 mm windows at 5 µm satisfy dx <= λd / extent for d = 1 cm
    let g = Grid1D::centered(200, 5e-6).unwrap();
    let field = ComplexField::from_fn(g, |x| Complex64::new((-(x / w0).powi(2)).exp(), 0.0)).unwrap();
    let fwd = ArmResponse::free_space(0.01, lambda, g, g).unwrap();
    let back = ArmResponse::free_space(-0.01, lambda, g, g).unwrap();
    assert_eq!(fwd.label(), ArmLabel::FreeSpace);
    assert!(fwd.sampling_violations().is_empty() && back.sampling_violations().is_empty());
    let round = propagate(&propagate(&field, &fwd).unwrap(), &back).unwrap();
    let num: f64 = round.samples().iter().zip(field.samples()).map(|(a, b)| (a - b).norm_sqr()).sum();
    let err = (num / field.power()).sqrt();
    assert!(err < 1e-3, "{err}");
}

#[test]
fn stored_curves_reproduce_reported_metrics() {
    let cfg = LenslessConfig::desk_double_slit(600, 3).unwrap();
    let r = run_lensless(&cfg).unwrap();
    let tmp = tempfile::tempdir().unwrap();
    let files = io::write_imaging_report(tmp.path(), &r, &serde_json::json!({"note": "test"})).unwrap();
    assert!(files.iter().all(|f| f.exists()));

    let [recovered, cf, dft] = io::read_imaging_curves(tmp.path()).unwrap();
    assert_eq!(recovered, r.recovered);
    let again = ImagingMetrics::from_curves(&recovered, &cf, &dft, r.test_position, cfg.analysis_half_width).unwrap();
    assert_eq!(again, r.metrics);

    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(tmp.path().join("report.json")).unwrap()).unwrap();
    let stored: ImagingMetrics = serde_json::from_value(report["metrics"].clone()).unwrap();
    assert_eq!(stored, r.metrics);
}

#[test]
fn correlation_files_round_trip_through_disk() {
    let mut cfg = LenslessConfig::desk_double_slit(300, 9).unwrap();
    cfg.grid_ref = Grid1D::centered(65, 6e-3 / 65.0).unwrap();
    cfg.grid_test = cfg.grid_ref;
    let r = ghost_imaging::scenarios::run_raw_correlation(&cfg).unwrap();
    let tmp = tempfile::tempdir().unwrap();
    io::write_correlation(tmp.path(), "x_", &r.result, 9, "abc").unwrap();
    let (back, manifest) = io::read_correlation(tmp.path(), "x_").unwrap();
    assert_eq!(back, r.result);
    assert_eq!(manifest.seed, 9);
    assert_eq!(manifest.count, 300);
}
