//! End-to-end study properties on cheap models.

use spatial_crt::design::theta_grid;
use spatial_crt::harness::{
    export_plotdata, run_study, summary_json, PlotKind, ScenarioRef, StudyConfig,
};
use spatial_crt::inference::ModelKind;

#[test]
fn power_curve_rises_with_effect() {
    // the spatial model costs ~1 s per fit, so the curve is checked on the
    // exchangeable model, which shares the decision machinery
    let cfg = StudyConfig {
        scenarios: vec![ScenarioRef::Label("A".into())],
        theta_grid: theta_grid(),
        models: vec![ModelKind::MM],
        reps: 500,
        seed: 5,
        ..StudyConfig::default()
    };
    let out = run_study(&cfg).unwrap();
    let power = export_plotdata(&out.summaries, PlotKind::Power);
    assert_eq!(power.len(), 15);
    for w in power.windows(2) {
        let slack = 2.0 * (w[0].mc_se.powi(2) + w[1].mc_se.powi(2)).sqrt();
        assert!(w[1].value >= w[0].value - slack, "{} -> {}: {} < {}", w[0].theta, w[1].theta, w[1].value, w[0].value);
    }
    assert!(power[0].value <= 0.1, "fpr {}", power[0].value);
    assert!(power[14].value >= 0.9, "power at 1.4 {}", power[14].value);
}

#[test]
fn identical_configs_give_identical_summary_bytes() {
    let cfg = StudyConfig {
        scenarios: vec![ScenarioRef::Label("E".into())],
        theta_grid: vec![0.0, 0.5],
        models: vec![ModelKind::FMNaive, ModelKind::FM, ModelKind::Cluster],
        reps: 30,
        seed: 6,
        ..StudyConfig::default()
    };
    let a = run_study(&cfg).unwrap();
    let b = run_study(&StudyConfig { threads: Some(3), ..cfg.clone() }).unwrap();
    assert_eq!(summary_json(&cfg, &a.summaries).unwrap(), summary_json(&cfg, &b.summaries).unwrap());
    assert_eq!(a.results.len(), 2 * 3 * 30);
}
