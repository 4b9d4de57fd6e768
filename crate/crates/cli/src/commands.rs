//! Subcommand bodies. Each one reads the raw inputs named in the config and
//! recomputes whatever earlier stages it needs, so no subcommand depends on
//! files left behind by another.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use log::{info, warn};
use netimpute::evaluate::{FoldLabel, Metric, ScoredPayload};
use netimpute::geomatch::{directionalize_and_halve, snap_all, transfer_weights, SnapRecord, WeightMatch};
use netimpute::impute::{impute_missing_weights, run_imputation_inspect};
use netimpute::io::{self, NetworkData};
use netimpute::synth::make_random_fixture;
use netimpute::{
    aggregate_records, make_folds, make_grid, run_cross_validation, run_imputation, AggregationWindow, ClassShare,
    EdgeIdx, EdgeStatus, GridSpec, ImputeConfig, MetricsReport, RoadNetwork, StateTable, StationObservation,
};

use crate::config::PipelineConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WeightSource {
    Network,
    Dense,
    Propagated,
    /// Unreachable from any weighted edge; global median.
    Default,
}

impl WeightSource {
    pub fn as_str(self) -> &'static str {
        match self {
            WeightSource::Network => "network",
            WeightSource::Dense => "dense",
            WeightSource::Propagated => "propagated",
            WeightSource::Default => "default",
        }
    }
}

pub struct ResolvedWeights {
    /// Weights only; no observations.
    pub states: StateTable,
    pub source: Vec<WeightSource>,
    pub transfer: Option<Vec<WeightMatch>>,
}

pub fn load_network(cfg: &PipelineConfig) -> Result<NetworkData> {
    let path = cfg.require(&cfg.inputs.network, "network")?;
    let data = io::read_network(path)?;
    info!(
        "network {}: {} nodes, {} edges",
        path.display(),
        data.net.node_count(),
        data.net.edge_count()
    );
    Ok(data)
}

/// Network AADT first, then dense-network transfer, then propagation.
pub fn resolve_weights(cfg: &PipelineConfig, data: &NetworkData) -> Result<ResolvedWeights> {
    let net = &data.net;
    let mut states = StateTable::for_network(net);
    let mut source: Vec<Option<WeightSource>> = vec![None; net.edge_count()];
    for e in net.edge_indices() {
        if let Some(w) = data.aadt_truck[e.0] {
            states.set_weight(net, e, w)?;
            source[e.0] = Some(WeightSource::Network);
        }
    }

    let mut transfer = None;
    if cfg.inputs.dense.is_some() {
        let path = cfg.require(&cfg.inputs.dense, "dense")?;
        let dense = io::read_dense_csv(path)?;
        let directed = directionalize_and_halve(&dense)?;
        let matches = transfer_weights(net, &directed, &cfg.matching)?;
        for m in &matches {
            if let (None, Some(w)) = (source[m.edge.0], m.weight) {
                states.set_weight(net, m.edge, w)?;
                source[m.edge.0] = Some(WeightSource::Dense);
            }
        }
        transfer = Some(matches);
    }

    let missing = source.iter().filter(|s| s.is_none()).count();
    if missing > 0 {
        info!("propagating weights to {missing} edges without one");
        let filled = impute_missing_weights(net, &states, &cfg.impute)?;
        for &e in &filled.imputed {
            source[e.0] = Some(WeightSource::Propagated);
        }
        for &e in &filled.defaulted {
            source[e.0] = Some(WeightSource::Default);
        }
        if !filled.defaulted.is_empty() {
            warn!("{} edges unreachable from any weight; given the median", filled.defaulted.len());
        }
        states = filled.states;
    }
    let source = source
        .into_iter()
        .map(|s| s.expect("every edge resolved"))
        .collect();
    Ok(ResolvedWeights {
        states,
        source,
        transfer,
    })
}

fn write_resolved_weights(path: &Path, net: &RoadNetwork, w: &ResolvedWeights) -> Result<()> {
    let mut out = csv::Writer::from_path(path).with_context(|| format!("writing {}", path.display()))?;
    out.write_record(["edge_id", "weight", "source"])?;
    for e in net.edge_indices() {
        let weight = w.states[e].weight.map(|x| x.to_string()).unwrap_or_default();
        out.write_record([net.edge(e).id.as_str(), &weight, w.source[e.0].as_str()])?;
    }
    out.flush()?;
    Ok(())
}

pub fn snap_stations(cfg: &PipelineConfig, net: &RoadNetwork) -> Result<Vec<SnapRecord>> {
    let path = cfg.require(&cfg.inputs.stations, "stations")?;
    let stations = io::read_stations_csv(path)?;
    let snaps = snap_all(&stations, net, &cfg.matching);
    let unmatched: Vec<&SnapRecord> = snaps.iter().filter(|s| s.matched.is_none()).collect();
    for s in &unmatched {
        warn!(
            "station {} {} unmatched: {}",
            s.station_id,
            s.direction.as_str(),
            s.failure.as_deref().unwrap_or("no edge")
        );
    }
    info!("snapped {}/{} stations", snaps.len() - unmatched.len(), snaps.len());
    Ok(snaps)
}

/// Observations for every configured window, tagged with their snapped edge.
pub fn build_observations(cfg: &PipelineConfig, snaps: &[SnapRecord]) -> Result<Vec<StationObservation>> {
    let path = cfg.require(&cfg.inputs.hourly, "hourly")?;
    let hourly = io::read_hourly_csv(path)?;
    if !hourly.ignored_columns.is_empty() {
        warn!("ignored columns in {}: {}", path.display(), hourly.ignored_columns.join(", "));
    }
    let edge_of: BTreeMap<_, _> = snaps
        .iter()
        .filter_map(|s| {
            let (edge, _) = s.matched.as_ref()?;
            Some(((s.station_id.as_str(), s.direction), edge.clone()))
        })
        .collect();
    let mut out = Vec::new();
    for window in cfg.windows()? {
        let agg = aggregate_records(&hourly.records, &window);
        for o in &agg.omitted {
            warn!(
                "window {window}: station {} {} omitted ({:?})",
                o.station_id,
                o.direction.as_str(),
                o.reason
            );
        }
        for mut o in agg.observations {
            o.matched_edge = edge_of.get(&(o.station_id.as_str(), o.direction)).cloned();
            out.push(o);
        }
    }
    Ok(out)
}

fn output_dir(cfg: &PipelineConfig) -> Result<&Path> {
    let dir = cfg.output.dir.as_path();
    fs::create_dir_all(dir).with_context(|| format!("creating output directory {}", dir.display()))?;
    Ok(dir)
}

fn window_tag(w: &AggregationWindow) -> String {
    w.to_string().replace(':', "_")
}

pub fn cmd_match(cfg: &PipelineConfig) -> Result<()> {
    let data = load_network(cfg)?;
    let weights = resolve_weights(cfg, &data)?;
    let snaps = snap_stations(cfg, &data.net)?;
    let dir = output_dir(cfg)?;
    if let Some(matches) = &weights.transfer {
        io::write_weight_report(&dir.join("weights_report.csv"), &data.net, matches)?;
    }
    write_resolved_weights(&dir.join("weights.csv"), &data.net, &weights)?;
    io::write_snap_report(&dir.join("snap_report.csv"), &snaps)?;
    let unmatched = snaps.iter().filter(|s| s.matched.is_none()).count();
    println!(
        "match: {} edges weighted, {}/{} stations matched, {unmatched} unmatched",
        data.net.edge_count(),
        snaps.len() - unmatched,
        snaps.len()
    );
    Ok(())
}

pub fn cmd_aggregate(cfg: &PipelineConfig) -> Result<()> {
    let data = load_network(cfg)?;
    let snaps = snap_stations(cfg, &data.net)?;
    let obs = build_observations(cfg, &snaps)?;
    io::write_observations_csv(&output_dir(cfg)?.join("observations.csv"), &obs)?;
    println!("aggregate: {} observations", obs.len());
    Ok(())
}

/// Pins pooled observations of one window onto the weight table.
pub fn pin_observations(
    net: &RoadNetwork,
    weights: &StateTable,
    obs: &[StationObservation],
    window: &AggregationWindow,
) -> Result<StateTable> {
    let mut by_edge: BTreeMap<EdgeIdx, Vec<&StationObservation>> = BTreeMap::new();
    for o in obs.iter().filter(|o| &o.window == window) {
        if let Some(id) = &o.matched_edge {
            let e = net
                .edge_idx(id)
                .with_context(|| format!("station {} matched unknown edge {id}", o.station_id))?;
            by_edge.entry(e).or_default().push(o);
        }
    }
    let mut states = weights.clone();
    for (e, group) in by_edge {
        if let Some((volume, share)) = netimpute::aggregate::pool_observations(group) {
            states.observe(net, e, Some(volume), Some(share))?;
        }
    }
    Ok(states)
}

pub fn cmd_impute(cfg: &PipelineConfig) -> Result<()> {
    let data = load_network(cfg)?;
    let net = &data.net;
    let weights = resolve_weights(cfg, &data)?;
    let snaps = snap_stations(cfg, net)?;
    let obs = build_observations(cfg, &snaps)?;
    let dir = output_dir(cfg)?;
    write_resolved_weights(&dir.join("weights.csv"), net, &weights)?;
    let components = net.neighbor_components();
    for window in cfg.windows()? {
        let states = pin_observations(net, &weights.states, &obs, &window)?;
        let result = run_imputation(net, &states, &cfg.impute).with_context(|| format!("window {window}"))?;
        let tag = window_tag(&window);
        io::write_imputed_csv(&dir.join(format!("imputed_{tag}.csv")), net, &result.states, &components)?;
        io::write_imputed_geojson(&dir.join(format!("imputed_{tag}.geojson")), net, &result.states, &components)?;
        io::write_trace_csv(&dir.join(format!("trace_{tag}.csv")), &result.trace)?;
        if !result.converged {
            warn!("window {window}: not converged after {} epochs", result.epochs_run);
        }
        println!(
            "impute {window}: {} observed, {} imputed, {} unset, {} epochs, converged={}",
            result.states.count_status(EdgeStatus::Observed),
            result.states.count_status(EdgeStatus::Imputed),
            result.unset_count,
            result.epochs_run,
            result.converged
        );
    }
    Ok(())
}

pub fn evaluate(cfg: &PipelineConfig) -> Result<MetricsReport> {
    let data = load_network(cfg)?;
    let weights = resolve_weights(cfg, &data)?;
    let snaps = snap_stations(cfg, &data.net)?;
    let obs = build_observations(cfg, &snaps)?;
    let pinned: BTreeSet<&str> = cfg.cv.pinned_stations.iter().map(String::as_str).collect();
    let candidates: Vec<&str> = obs
        .iter()
        .filter(|o| o.matched_edge.is_some() && !pinned.contains(o.station_id.as_str()))
        .map(|o| o.station_id.as_str())
        .collect();
    let folds = make_folds(&candidates, cfg.cv.k, cfg.cv.seed).context("assigning folds")?;
    Ok(run_cross_validation(&data.net, &weights.states, &obs, &folds, &cfg.impute)?)
}

fn write_folds(path: &Path, report_folds: &BTreeMap<String, usize>) -> Result<()> {
    let mut out = csv::Writer::from_path(path).with_context(|| format!("writing {}", path.display()))?;
    out.write_record(["station_id", "fold"])?;
    for (s, f) in report_folds {
        out.write_record([s.as_str(), &f.to_string()])?;
    }
    out.flush()?;
    Ok(())
}

pub fn cmd_evaluate(cfg: &PipelineConfig) -> Result<()> {
    let report = evaluate(cfg)?;
    let dir = output_dir(cfg)?;
    io::write_metrics_long_csv(&dir.join("metrics_long.csv"), &report)?;
    io::write_metrics_summary_csv(&dir.join("metrics_summary.csv"), &report)?;
    io::write_predictions_csv(&dir.join("predictions.csv"), &report)?;
    let folds: BTreeMap<String, usize> = report
        .predictions
        .iter()
        .map(|p| (p.station_id.clone(), p.fold))
        .collect();
    write_folds(&dir.join("folds.csv"), &folds)?;
    if report.zero_n {
        warn!("no masked observation was scored");
    }
    for window in cfg.windows()? {
        let get = |m| report.value(window, FoldLabel::Pooled, ScoredPayload::Volume, m);
        let show = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_else(|| "n/a".into());
        println!(
            "evaluate {window}: pooled volume MAE {} RMSE {} R2 {}",
            show(get(Metric::Mae)),
            show(get(Metric::Rmse)),
            show(get(Metric::R2))
        );
    }
    println!(
        "evaluate: k={} seed={} predictions={} missing={} unmatched={}",
        report.k,
        report.seed,
        report.predictions.len(),
        report.missing_count(),
        report.unmatched
    );
    Ok(())
}

pub fn cmd_run(cfg: &PipelineConfig) -> Result<()> {
    cmd_match(cfg)?;
    cmd_aggregate(cfg)?;
    cmd_impute(cfg)?;
    cmd_evaluate(cfg)
}

#[derive(Debug, Clone)]
pub struct GridDemo {
    pub spec: GridSpec,
    /// Epochs whose state is written out; the final state is always written.
    pub snapshots: Vec<usize>,
    pub out: PathBuf,
}

pub fn cmd_grid_demo(demo: &GridDemo, cfg: &ImputeConfig) -> Result<()> {
    let grid = make_grid(&demo.spec)?;
    let net = &grid.net;
    let wanted: BTreeSet<usize> = demo.snapshots.iter().copied().collect();
    let mut frames: Vec<(usize, StateTable)> = Vec::new();
    let result = run_imputation_inspect(net, &grid.states, cfg, |stats, view| {
        if !wanted.contains(&stats.epoch) {
            return;
        }
        let mut s = grid.states.clone();
        for e in net.edge_indices() {
            if s[e].status == EdgeStatus::Observed {
                continue;
            }
            let volume = view.volume(e);
            let share = view
                .class_share(e)
                .and_then(|p| ClassShare::new(p.try_into().ok()?).ok());
            if volume.is_some() || share.is_some() {
                s[e].volume = volume;
                s[e].class_share = share;
                s[e].status = EdgeStatus::Imputed;
            }
        }
        frames.push((stats.epoch, s));
    })?;
    fs::create_dir_all(&demo.out).with_context(|| format!("creating output directory {}", demo.out.display()))?;
    let components = net.neighbor_components();
    for (epoch, s) in &frames {
        io::write_imputed_geojson(&demo.out.join(format!("grid_epoch_{epoch:05}.geojson")), net, s, &components)?;
    }
    io::write_imputed_geojson(&demo.out.join("grid_final.geojson"), net, &result.states, &components)?;
    io::write_imputed_csv(&demo.out.join("grid_final.csv"), net, &result.states, &components)?;
    io::write_trace_csv(&demo.out.join("grid_trace.csv"), &result.trace)?;
    println!(
        "grid-demo {}x{}: {} epochs, converged={}, {} snapshots",
        demo.spec.rows,
        demo.spec.cols,
        result.epochs_run,
        result.converged,
        frames.len()
    );
    Ok(())
}

#[derive(Debug, Clone)]
pub struct Export {
    pub edges: usize,
    pub fraction: f64,
    pub seed: u64,
    pub out: PathBuf,
}

/// Writes a random fixture in the input schemas, its truth and a config that
/// runs the pipeline on it.
pub fn cmd_export(x: &Export) -> Result<PathBuf> {
    let f = make_random_fixture(x.edges, x.fraction, x.seed)?;
    let inputs = f.synthetic_inputs();
    let dir = x.out.as_path();
    fs::create_dir_all(dir).with_context(|| format!("creating output directory {}", dir.display()))?;
    io::write_network_geojson(&dir.join("network.geojson"), &f.net, None)?;
    io::write_dense_csv(&dir.join("dense.csv"), &inputs.dense)?;
    io::write_stations_csv(&dir.join("stations.csv"), &inputs.stations)?;
    io::write_hourly_csv(&dir.join("hourly.csv"), &inputs.hourly)?;
    let mut truth = f.states.clone();
    for e in f.net.edge_indices() {
        let t = f.truth[e.0];
        truth.observe(&f.net, e, Some(t.volume), Some(t.class_share))?;
    }
    io::write_imputed_csv(&dir.join("truth.csv"), &f.net, &truth, &f.net.neighbor_components())?;

    let mut cfg = PipelineConfig::default();
    cfg.inputs.network = Some("network.geojson".into());
    cfg.inputs.dense = Some("dense.csv".into());
    cfg.inputs.stations = Some("stations.csv".into());
    cfg.inputs.hourly = Some("hourly.csv".into());
    cfg.impute.max_epochs = 50_000;
    cfg.impute.tolerance = 1e-11;
    cfg.cv.seed = x.seed;
    cfg.cv.pinned_stations = inputs.pinned_stations;
    let n_stations = f.stations.len();
    if n_stations < cfg.cv.k {
        cfg.cv.k = n_stations.max(2);
    }
    let path = dir.join("netimpute.toml");
    fs::write(&path, cfg.to_toml()?).with_context(|| format!("writing {}", path.display()))?;
    println!(
        "export: {} edges, {} anchors, {} stations -> {}",
        f.net.edge_count(),
        f.anchors.len(),
        n_stations,
        path.display()
    );
    Ok(path)
}

