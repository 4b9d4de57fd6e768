//! Masking cross-validation: hide one fold of stations, impute from the rest,
//! score the hidden edges.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use rayon::prelude::*;
use thiserror::Error;

use super::folds::FoldAssignment;
use super::metrics::{cel, mae, pearson_r2, rmse};
use crate::aggregate::{pool_observations, AggregationWindow, StationObservation};
use crate::geomatch::DirectionCode;
use crate::impute::{run_imputation, ImputeConfig, ImputeError, Payload};
use crate::network::{EdgeId, EdgeIdx, RoadNetwork};
use crate::state::{classes, ClassShare, StateError, StateTable};

#[derive(Debug, Error)]
pub enum CvError {
    #[error(transparent)]
    Config(ImputeError),
    #[error("observation for station {station} matched to unknown edge {edge}")]
    UnknownEdge { station: String, edge: EdgeId },
    #[error("base state table has {states} rows for {edges} edges")]
    SizeMismatch { states: usize, edges: usize },
    #[error(transparent)]
    State(#[from] StateError),
    #[error("fold {fold}, window {window}: {source}")]
    Impute {
        fold: usize,
        window: AggregationWindow,
        source: ImputeError,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub fold: usize,
    pub window: AggregationWindow,
    pub region: Option<String>,
    pub station_id: String,
    pub direction: DirectionCode,
    pub edge: EdgeId,
    pub observed_volume: f64,
    pub predicted_volume: Option<f64>,
    pub observed_share: ClassShare,
    pub predicted_share: Option<ClassShare>,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum FoldLabel {
    Fold(usize),
    /// Metric over the union of every fold's masked predictions.
    Pooled,
    /// Unweighted average of the per-fold metric values.
    Mean,
}

impl fmt::Display for FoldLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FoldLabel::Fold(i) => write!(f, "{i}"),
            FoldLabel::Pooled => f.write_str("pooled"),
            FoldLabel::Mean => f.write_str("mean"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Region {
    All,
    Tag(String),
}

impl fmt::Display for Region {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Region::All => f.write_str("all"),
            Region::Tag(t) => f.write_str(t),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ScoredPayload {
    Volume,
    ClassShare,
    /// Share times volume for one class.
    ClassVolume,
}

impl ScoredPayload {
    pub fn as_str(self) -> &'static str {
        match self {
            ScoredPayload::Volume => "volume",
            ScoredPayload::ClassShare => "class_share",
            ScoredPayload::ClassVolume => "class_volume",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Metric {
    Mae,
    Rmse,
    R2,
    Cel,
    /// Masked records the imputation left without a value.
    Missing,
}

impl Metric {
    pub fn as_str(self) -> &'static str {
        match self {
            Metric::Mae => "mae",
            Metric::Rmse => "rmse",
            Metric::R2 => "r2",
            Metric::Cel => "cel",
            Metric::Missing => "missing",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CellKey {
    pub window: AggregationWindow,
    pub fold: FoldLabel,
    pub region: Region,
    pub payload: ScoredPayload,
    pub class: Option<u8>,
    pub metric: Metric,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricCell {
    pub key: CellKey,
    pub value: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub k: usize,
    pub seed: u64,
    /// Sorted by key.
    pub cells: Vec<MetricCell>,
    /// Sorted by (window, fold, station, direction).
    pub predictions: Vec<Prediction>,
    /// Observations skipped because they matched no edge.
    pub unmatched: usize,
    /// Set when no masked record was scored at all.
    pub zero_n: bool,
}

impl MetricsReport {
    pub fn cell(&self, key: &CellKey) -> Option<&MetricCell> {
        self.cells
            .binary_search_by(|c| c.key.cmp(key))
            .ok()
            .map(|i| &self.cells[i])
    }

    /// Shorthand for an all-region, class-free cell.
    pub fn value(
        &self,
        window: AggregationWindow,
        fold: FoldLabel,
        payload: ScoredPayload,
        metric: Metric,
    ) -> Option<f64> {
        self.cell(&CellKey {
            window,
            fold,
            region: Region::All,
            payload,
            class: None,
            metric,
        })
        .map(|c| c.value)
    }

    pub fn missing_count(&self) -> usize {
        self.predictions
            .iter()
            .filter(|p| p.predicted_volume.is_none() && p.predicted_share.is_none())
            .count()
    }
}

/// Tenfold-style masking cross-validation.
///
/// `base` supplies prior weights and any observations that stay fixed in every
/// fold. Observations whose station is absent from `folds` are never masked.
pub fn run_cross_validation(
    net: &RoadNetwork,
    base: &StateTable,
    observations: &[StationObservation],
    folds: &FoldAssignment,
    cfg: &ImputeConfig,
) -> Result<MetricsReport, CvError> {
    cfg.validate().map_err(CvError::Config)?;
    if base.len() != net.edge_count() {
        return Err(CvError::SizeMismatch {
            states: base.len(),
            edges: net.edge_count(),
        });
    }
    let mut matched: Vec<(EdgeIdx, &StationObservation)> = Vec::new();
    let mut unmatched = 0;
    for o in observations {
        let Some(edge) = &o.matched_edge else {
            unmatched += 1;
            continue;
        };
        let e = net.edge_idx(edge).ok_or_else(|| CvError::UnknownEdge {
            station: o.station_id.clone(),
            edge: edge.clone(),
        })?;
        matched.push((e, o));
    }
    let windows: BTreeSet<AggregationWindow> = matched.iter().map(|(_, o)| o.window).collect();
    let jobs: Vec<(AggregationWindow, usize)> = windows
        .iter()
        .flat_map(|&w| (0..folds.k).map(move |f| (w, f)))
        .collect();

    let per_job: Vec<Vec<Prediction>> = jobs
        .par_iter()
        .map(|&(window, fold)| run_fold(net, base, &matched, folds, cfg, window, fold))
        .collect::<Result<_, _>>()?;
    let predictions: Vec<Prediction> = per_job.into_iter().flatten().collect();

    let cells = score_all(&predictions, folds.k, cfg.payload);
    Ok(MetricsReport {
        k: folds.k,
        seed: folds.seed,
        zero_n: predictions.is_empty(),
        cells,
        predictions,
        unmatched,
    })
}

fn run_fold(
    net: &RoadNetwork,
    base: &StateTable,
    matched: &[(EdgeIdx, &StationObservation)],
    folds: &FoldAssignment,
    cfg: &ImputeConfig,
    window: AggregationWindow,
    fold: usize,
) -> Result<Vec<Prediction>, CvError> {
    let mut kept: BTreeMap<EdgeIdx, Vec<&StationObservation>> = BTreeMap::new();
    let mut masked = Vec::new();
    for &(e, o) in matched.iter().filter(|(_, o)| o.window == window) {
        if folds.fold_of.get(&o.station_id) == Some(&fold) {
            masked.push((e, o));
        } else {
            kept.entry(e).or_default().push(o);
        }
    }
    if masked.is_empty() {
        return Ok(Vec::new());
    }
    let mut states = base.clone();
    for (&e, obs) in &kept {
        if let Some((volume, share)) = pool_observations(obs.iter().copied()) {
            states.observe(net, e, Some(volume), Some(share))?;
        }
    }
    let imputed = match run_imputation(net, &states, cfg) {
        Ok(r) => Some(r.states),
        Err(ImputeError::NoObservedEdges(what)) => {
            log::warn!("fold {fold}, window {window}: no observed {what} left after masking");
            None
        }
        Err(source) => return Err(CvError::Impute { fold, window, source }),
    };
    masked.sort_by(|a, b| (&a.1.station_id, a.1.direction).cmp(&(&b.1.station_id, b.1.direction)));
    Ok(masked
        .into_iter()
        .map(|(e, o)| {
            let s = imputed.as_ref().map(|t| &t[e]);
            Prediction {
                fold,
                window,
                region: net.edge(e).region_tag.clone(),
                station_id: o.station_id.clone(),
                direction: o.direction,
                edge: net.edge(e).id.clone(),
                observed_volume: o.mean_hourly_volume,
                predicted_volume: s.and_then(|s| s.volume),
                observed_share: o.class_share,
                predicted_share: s.and_then(|s| s.class_share),
            }
        })
        .collect())
}

type Partial = (ScoredPayload, Option<u8>, Metric, f64, usize);

/// Every metric computable on one group of predictions.
fn score_group(preds: &[&Prediction], payload: Payload) -> Vec<Partial> {
    let mut out = Vec::new();
    let point = |out: &mut Vec<Partial>, p: ScoredPayload, class: Option<u8>, y: &[f64], y_hat: &[f64]| {
        if y.is_empty() {
            return;
        }
        out.push((p, class, Metric::Mae, mae(y, y_hat).expect("non-empty"), y.len()));
        out.push((p, class, Metric::Rmse, rmse(y, y_hat).expect("non-empty"), y.len()));
        if let Ok(r2) = pearson_r2(y, y_hat) {
            out.push((p, class, Metric::R2, r2, y.len()));
        }
    };
    let score_volume = matches!(payload, Payload::Volume | Payload::Both);
    let score_share = matches!(payload, Payload::ClassShare | Payload::Both);

    if score_volume {
        let (y, y_hat): (Vec<f64>, Vec<f64>) = preds
            .iter()
            .filter_map(|p| p.predicted_volume.map(|v| (p.observed_volume, v)))
            .unzip();
        let missing = preds.len() - y.len();
        point(&mut out, ScoredPayload::Volume, None, &y, &y_hat);
        if missing > 0 {
            out.push((ScoredPayload::Volume, None, Metric::Missing, missing as f64, missing));
        }
    }
    if score_share {
        let pairs: Vec<(&ClassShare, &ClassShare)> = preds
            .iter()
            .filter_map(|p| p.predicted_share.as_ref().map(|g| (&p.observed_share, g)))
            .collect();
        if !pairs.is_empty() {
            let total: f64 = pairs
                .iter()
                .map(|(f, g)| cel(f.as_array(), g.as_array()).expect("shares on simplex"))
                .sum();
            out.push((ScoredPayload::ClassShare, None, Metric::Cel, total / pairs.len() as f64, pairs.len()));
        }
        for c in classes() {
            let (y, y_hat): (Vec<f64>, Vec<f64>) = pairs.iter().map(|(f, g)| (f.get(c), g.get(c))).unzip();
            point(&mut out, ScoredPayload::ClassShare, Some(c), &y, &y_hat);
        }
        let missing = preds.len() - pairs.len();
        if missing > 0 {
            out.push((ScoredPayload::ClassShare, None, Metric::Missing, missing as f64, missing));
        }
    }
    if score_volume && score_share {
        let both: Vec<(f64, &ClassShare, f64, &ClassShare)> = preds
            .iter()
            .filter_map(|p| {
                Some((p.observed_volume, &p.observed_share, p.predicted_volume?, p.predicted_share.as_ref()?))
            })
            .collect();
        for c in classes() {
            let (y, y_hat): (Vec<f64>, Vec<f64>) = both
                .iter()
                .map(|(v, f, pv, g)| (v * f.get(c), pv * g.get(c)))
                .unzip();
            point(&mut out, ScoredPayload::ClassVolume, Some(c), &y, &y_hat);
        }
    }
    out
}

fn score_all(predictions: &[Prediction], k: usize, payload: Payload) -> Vec<MetricCell> {
    let mut groups: BTreeMap<(AggregationWindow, FoldLabel, Region), Vec<&Prediction>> = BTreeMap::new();
    for p in predictions {
        let mut regions = vec![Region::All];
        if let Some(t) = &p.region {
            regions.push(Region::Tag(t.clone()));
        }
        for region in regions {
            for fold in [FoldLabel::Fold(p.fold), FoldLabel::Pooled] {
                groups.entry((p.window, fold, region.clone())).or_default().push(p);
            }
        }
    }

    let mut cells: BTreeMap<CellKey, (f64, usize)> = BTreeMap::new();
    let mut per_fold: BTreeMap<CellKey, Vec<(f64, usize)>> = BTreeMap::new();
    for ((window, fold, region), preds) in groups {
        for (p, class, metric, value, n) in score_group(&preds, payload) {
            let key = CellKey {
                window,
                fold: fold.clone(),
                region: region.clone(),
                payload: p,
                class,
                metric,
            };
            if matches!(fold, FoldLabel::Fold(_)) && metric != Metric::Missing {
                let mean_key = CellKey {
                    fold: FoldLabel::Mean,
                    ..key.clone()
                };
                per_fold.entry(mean_key).or_default().push((value, n));
            }
            cells.insert(key, (value, n));
        }
    }
    debug_assert!(per_fold.values().all(|v| v.len() <= k));
    for (key, values) in per_fold {
        let mean = values.iter().map(|v| v.0).sum::<f64>() / values.len() as f64;
        let n = values.iter().map(|v| v.1).sum();
        cells.insert(key, (mean, n));
    }
    cells
        .into_iter()
        .map(|(key, (value, n))| MetricCell { key, value, n })
        .collect()
}
