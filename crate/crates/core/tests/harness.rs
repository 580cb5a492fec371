//! End-to-end protocol on small synthetic logs.

use delayfeed::harness::{
    generate_events, load_events, run_experiment, run_methods, save_events, sweep_window, ColumnProfile,
    ExperimentConfig, GeneratorConfig, MethodSpec, Preset, ORACLE, PRETRAINED,
};
use delayfeed::losses::LossKind;
use delayfeed::stream::{ClickEvent, Delay, StreamPolicy, DAY};

fn small_log(seed: u64) -> Vec<ClickEvent> {
    let mut g = GeneratorConfig::preset(Preset::CriteoLike).with_events(12_000).with_seed(seed);
    g.horizon = 20 * DAY;
    generate_events(&g).unwrap()
}

fn small_config() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.model.hidden = vec![16, 8];
    cfg.model.embedding_dim = 4;
    cfg.streaming_hours = Some(48);
    cfg.dp.hidden = vec![8, 4];
    cfg
}

#[test]
fn click_logs_round_trip_through_files() {
    let events = small_log(1);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("clicks.tsv");
    save_events(&path, &events).unwrap();
    let back = load_events(&path, &ColumnProfile::native(1)).unwrap();
    assert_eq!(back.len(), events.len());
    for (a, b) in events.iter().zip(&back) {
        assert_eq!((a.id, a.click_ts, a.delay, a.domain), (b.id, b.click_ts, b.delay, b.domain));
        assert_eq!(a.features, b.features);
    }
    assert!(back.iter().all(|e| e.truth.is_none() && e.delay != Delay::After(0)));
}

#[test]
fn anchors_and_determinism() {
    let events = small_log(2);
    let cfg = small_config();
    let methods = [
        MethodSpec::pretrained(),
        MethodSpec::new("FNW", StreamPolicy::NoWin, LossKind::Fnw),
        MethodSpec::new("DEFER", StreamPolicy::RealNegDup, LossKind::Defer),
        MethodSpec::oracle(),
    ];
    let runs = run_methods::<f32>(&cfg, &events, &methods).unwrap();
    for run in &runs {
        let ri = run.report.ri.unwrap();
        match run.report.method.as_str() {
            PRETRAINED => assert_eq!((ri.auc, ri.pr_auc, ri.nll), (0.0, 0.0, 0.0)),
            ORACLE => assert_eq!((ri.auc, ri.pr_auc, ri.nll), (100.0, 100.0, 100.0)),
            _ => assert!(ri.auc.is_finite()),
        }
        assert!(run.report.hours.len() <= 48);
    }
    let again = run_methods::<f32>(&cfg, &events, &methods).unwrap();
    for (a, b) in runs.iter().zip(&again) {
        assert_eq!(a.report, b.report);
        assert_eq!(a.clamps, b.clamps);
    }
}

#[test]
fn single_window_sweep_equals_the_approximated_run() {
    let events = small_log(3);
    let mut cfg = small_config();
    cfg.loss_kind = LossKind::Vanilla;
    let sweep = sweep_window::<f32>(&cfg, &events, &[DAY]).unwrap();
    cfg.stream_policy = StreamPolicy::RealNegDupApprox;
    cfg.windows.w3 = Some(DAY);
    let direct = run_experiment::<f32>(&cfg, &events).unwrap();
    assert_eq!(sweep[0].hours, direct.hours);
    assert_eq!(sweep[0].aggregate, direct.aggregate);
}

#[test]
fn sweep_rejects_windows_outside_the_range() {
    let events = small_log(4);
    let cfg = small_config();
    assert!(sweep_window::<f32>(&cfg, &events, &[8 * DAY]).is_err());
    assert!(sweep_window::<f32>(&cfg, &events, &[]).is_err());
}

#[test]
fn config_round_trips_through_toml() {
    let mut cfg = small_config();
    cfg.windows.w3 = Some(3 * DAY);
    cfg.stream_policy = StreamPolicy::RealNegDupApprox;
    let back = ExperimentConfig::from_toml(&cfg.to_toml()).unwrap();
    assert_eq!(back, cfg);
}
