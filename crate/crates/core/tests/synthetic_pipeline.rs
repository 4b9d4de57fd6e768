use netimpute::evaluate::{FoldLabel, Metric, ScoredPayload};
use netimpute::geomatch::{directionalize_and_halve, snap_all, transfer_weights};
use netimpute::synth::make_random_fixture;
use netimpute::{
    aggregate_records, make_folds, run_cross_validation, AggregationWindow, ImputeConfig, MatchConfig,
};

fn tight() -> ImputeConfig {
    ImputeConfig {
        max_epochs: 50_000,
        tolerance: 1e-11,
        ..ImputeConfig::default()
    }
}

#[test]
fn model_consistent_cv_recovers_truth() {
    let f = make_random_fixture(200, 0.1, 2024).unwrap();
    let obs = f.station_observations();
    let ids: Vec<&str> = obs.iter().map(|o| o.station_id.as_str()).collect();
    let folds = make_folds(&ids, 10, 1).unwrap();
    let report = run_cross_validation(&f.net, &f.base_states(), &obs, &folds, &tight()).unwrap();
    assert!(!report.zero_n);
    assert_eq!(report.predictions.len(), obs.len());
    let mae = report
        .value(AggregationWindow::ALL, FoldLabel::Pooled, ScoredPayload::Volume, Metric::Mae)
        .unwrap();
    assert!(mae < 1e-6, "pooled MAE {mae}");
    let cel = report
        .value(AggregationWindow::ALL, FoldLabel::Pooled, ScoredPayload::ClassShare, Metric::Cel)
        .unwrap();
    let entropy: f64 = obs
        .iter()
        .map(|o| netimpute::evaluate::entropy(o.class_share.as_array()).unwrap())
        .sum::<f64>()
        / obs.len() as f64;
    assert!((cel - entropy).abs() < 1e-6);
}

#[test]
fn pinned_anchor_observations_match_base_anchors() {
    // Anchors passed as unassigned observations instead of base pins.
    let f = make_random_fixture(120, 0.2, 5).unwrap();
    let mut weights_only = f.base_states();
    for &e in &f.anchors {
        weights_only.clear(e);
    }
    let stations = f.station_observations();
    let mut all = f.anchor_observations();
    all.extend(stations.iter().cloned());
    let ids: Vec<&str> = stations.iter().map(|o| o.station_id.as_str()).collect();
    let folds = make_folds(&ids, 5, 9).unwrap();
    let a = run_cross_validation(&f.net, &f.base_states(), &stations, &folds, &tight()).unwrap();
    let b = run_cross_validation(&f.net, &weights_only, &all, &folds, &tight()).unwrap();
    assert_eq!(a.predictions.len(), b.predictions.len());
    for (p, q) in a.predictions.iter().zip(&b.predictions) {
        assert_eq!(p.station_id, q.station_id);
        let (x, y) = (p.predicted_volume.unwrap(), q.predicted_volume.unwrap());
        assert!((x - y).abs() <= 1e-9 * x.abs());
    }
}

#[test]
fn synthetic_inputs_round_trip_through_matching() {
    let f = make_random_fixture(150, 0.2, 77).unwrap();
    let inputs = f.synthetic_inputs();
    let cfg = MatchConfig::default();

    let directed = directionalize_and_halve(&inputs.dense).unwrap();
    let matches = transfer_weights(&f.net, &directed, &cfg).unwrap();
    for m in &matches {
        assert_eq!(m.weight, f.states[m.edge].weight, "edge {}", f.net.edge(m.edge).id);
    }

    let snaps = snap_all(&inputs.stations, &f.net, &cfg);
    assert!(snaps.iter().all(|s| s.matched.is_some()));

    let mut agg = aggregate_records(&inputs.hourly, &AggregationWindow::ALL).observations;
    for o in agg.iter_mut() {
        let s = snaps.iter().find(|s| s.station_id == o.station_id).unwrap();
        o.matched_edge = s.matched.as_ref().map(|m| m.0.clone());
    }
    let mut expected = f.anchor_observations();
    expected.extend(f.station_observations());
    expected.sort_by(|a, b| a.station_id.cmp(&b.station_id));
    assert_eq!(agg.len(), expected.len());
    for (a, e) in agg.iter().zip(&expected) {
        assert_eq!(a.matched_edge, e.matched_edge);
        assert!((a.mean_hourly_volume - e.mean_hourly_volume).abs() <= 1e-12 * e.mean_hourly_volume);
    }
}
