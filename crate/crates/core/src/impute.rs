//! Weighted fixed-point imputation over the edge neighbor relation.
//!
//! Each unobserved edge repeatedly takes the prior-weighted average of its
//! valued neighbors,
//!
//! ```text
//! y_i = sum_j w_j * y_j / sum_j w_j      (j ranges over valued neighbors of i)
//! ```
//!
//! sweeping the edge list in EdgeId order. Observed edges are pinned. Merge
//! links (several upstream, one downstream) wait for all upstream links to
//! carry a value, and diverge links (one upstream, several downstream) wait
//! for all downstream links, before their first update.
//!
//! The sweep stops at `max_epochs`, or earlier once an epoch values no new
//! edge, leaves nothing deferred, and moves no value by more than `tolerance`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::network::{EdgeId, EdgeIdx, RoadNetwork};
use crate::state::{ClassShare, EdgeStatus, StateTable, NUM_CLASSES};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Payload {
    Volume,
    ClassShare,
    Both,
}

impl Payload {
    fn volume(self) -> bool {
        matches!(self, Payload::Volume | Payload::Both)
    }

    fn class_share(self) -> bool {
        matches!(self, Payload::ClassShare | Payload::Both)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum UpdateScheme {
    /// Gauss-Seidel: each update is visible to later edges in the same sweep.
    InPlace,
    /// Jacobi: every edge in an epoch reads the previous epoch's values.
    Synchronous,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ImputeConfig {
    pub max_epochs: usize,
    /// Convergence bound on the largest per-edge change within an epoch.
    pub tolerance: f64,
    /// Epochs before a stalled sweep may waive merge/diverge deferral.
    pub deferral_grace: usize,
    pub payload: Payload,
    pub scheme: UpdateScheme,
}

impl Default for ImputeConfig {
    fn default() -> Self {
        ImputeConfig {
            max_epochs: 500,
            tolerance: 1e-6,
            deferral_grace: 50,
            payload: Payload::Both,
            scheme: UpdateScheme::InPlace,
        }
    }
}

impl ImputeConfig {
    pub fn validate(&self) -> Result<(), ImputeError> {
        if self.max_epochs == 0 {
            return Err(ImputeError::InvalidConfig("max_epochs must be at least 1".into()));
        }
        if !(self.tolerance.is_finite() && self.tolerance > 0.0) {
            return Err(ImputeError::InvalidConfig(format!(
                "tolerance must be positive, got {}",
                self.tolerance
            )));
        }
        if self.deferral_grace > self.max_epochs {
            return Err(ImputeError::InvalidConfig(format!(
                "deferral_grace ({}) exceeds max_epochs ({})",
                self.deferral_grace, self.max_epochs
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum ImputeError {
    #[error("invalid imputation config: {0}")]
    InvalidConfig(String),
    #[error("no observed edges carry a {0} value")]
    NoObservedEdges(&'static str),
    #[error("edge {0} has no prior weight")]
    MissingWeight(EdgeId),
    #[error("non-finite value produced on edge {edge} in epoch {epoch}")]
    NonFinite { edge: EdgeId, epoch: usize },
    #[error("edge {0} has no valued neighbor")]
    NoValuedNeighbor(EdgeId),
    #[error("no edge carries a prior weight")]
    NoWeights,
    #[error("state table has {states} rows for {edges} edges")]
    SizeMismatch { states: usize, edges: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    /// Largest change among edges that already carried a value.
    pub max_delta: f64,
    pub newly_valued: usize,
}

#[derive(Debug, Clone)]
pub struct ImputeResult {
    pub states: StateTable,
    pub epochs_run: usize,
    pub converged: bool,
    pub trace: Vec<EpochStats>,
    /// Non-observed edges no observation could reach.
    pub unset_count: usize,
    /// Epoch at which merge/diverge deferral was waived, if it was.
    pub deferral_waived_at: Option<usize>,
}

/// Role of a link at a junction, which decides whether its first update waits.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LinkKind {
    Ordinary,
    /// Two or more upstream links, exactly one downstream link.
    Merge,
    /// Exactly one upstream link, two or more downstream links.
    Diverge,
}

pub fn link_kind(net: &RoadNetwork, e: EdgeIdx) -> LinkKind {
    let upstream = net.upstream_of(e).count();
    let downstream = net.downstream_of(e).count();
    match (upstream, downstream) {
        (u, 1) if u >= 2 => LinkKind::Merge,
        (1, d) if d >= 2 => LinkKind::Diverge,
        _ => LinkKind::Ordinary,
    }
}

/// Whether `e` may be (re)computed given which edges currently hold a value.
pub fn valid_to_impute(net: &RoadNetwork, e: EdgeIdx, valued: &[bool], deferral_waived: bool) -> bool {
    if !net.neighbors_of(e).iter().any(|n| valued[n.0]) {
        return false;
    }
    if deferral_waived {
        return true;
    }
    match link_kind(net, e) {
        LinkKind::Ordinary => true,
        LinkKind::Merge => net.upstream_of(e).all(|n| valued[n.0]),
        LinkKind::Diverge => net.downstream_of(e).all(|n| valued[n.0]),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PayloadKind {
    Volume,
    ClassShare,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ImputedValue {
    Volume(f64),
    Share(ClassShare),
}

/// One weighted-average update of edge `e` from the values in `states`.
///
/// Falls back to the unweighted mean when the valued neighbors' weights sum
/// to zero.
pub fn impute_edge(
    net: &RoadNetwork,
    e: EdgeIdx,
    states: &StateTable,
    kind: PayloadKind,
) -> Result<ImputedValue, ImputeError> {
    let mut acc = Accumulator::new(match kind {
        PayloadKind::Volume => 1,
        PayloadKind::ClassShare => NUM_CLASSES,
    });
    for &n in net.neighbors_of(e) {
        let s = &states[n];
        let value: Option<&[f64]> = match kind {
            PayloadKind::Volume => s.volume.as_ref().map(std::slice::from_ref),
            PayloadKind::ClassShare => s.class_share.as_ref().map(|c| &c.as_array()[..]),
        };
        let Some(value) = value else { continue };
        let w = s
            .weight
            .ok_or_else(|| ImputeError::MissingWeight(net.edge(n).id.clone()))?;
        acc.add(w, value);
    }
    let mut out = vec![0.0; acc.dim()];
    if !acc.finish(&mut out) {
        return Err(ImputeError::NoValuedNeighbor(net.edge(e).id.clone()));
    }
    Ok(match kind {
        PayloadKind::Volume => ImputedValue::Volume(out[0]),
        PayloadKind::ClassShare => {
            let mut p = [0.0; NUM_CLASSES];
            p.copy_from_slice(&out);
            ImputedValue::Share(ClassShare::from_convex(p))
        }
    })
}

/// Running weighted and unweighted sums for one update.
struct Accumulator {
    weighted: Vec<f64>,
    plain: Vec<f64>,
    weight_sum: f64,
    count: usize,
}

impl Accumulator {
    fn new(dim: usize) -> Self {
        Accumulator {
            weighted: vec![0.0; dim],
            plain: vec![0.0; dim],
            weight_sum: 0.0,
            count: 0,
        }
    }

    fn dim(&self) -> usize {
        self.weighted.len()
    }

    fn reset(&mut self) {
        self.weighted.iter_mut().for_each(|v| *v = 0.0);
        self.plain.iter_mut().for_each(|v| *v = 0.0);
        self.weight_sum = 0.0;
        self.count = 0;
    }

    fn add(&mut self, w: f64, value: &[f64]) {
        for ((acc, plain), v) in self.weighted.iter_mut().zip(&mut self.plain).zip(value) {
            *acc += w * v;
            *plain += v;
        }
        self.weight_sum += w;
        self.count += 1;
    }

    /// Writes the average into `out`; false when nothing was added.
    fn finish(&self, out: &mut [f64]) -> bool {
        if self.count == 0 {
            return false;
        }
        if self.weight_sum > 0.0 {
            for (o, a) in out.iter_mut().zip(&self.weighted) {
                *o = a / self.weight_sum;
            }
        } else {
            let n = self.count as f64;
            for (o, a) in out.iter_mut().zip(&self.plain) {
                *o = a / n;
            }
        }
        true
    }
}

/// One payload being propagated: flat `dim`-wide values per edge.
#[derive(Debug, Clone)]
pub(crate) struct Field {
    pub(crate) name: &'static str,
    pub(crate) dim: usize,
    pub(crate) values: Vec<f64>,
    pub(crate) valued: Vec<bool>,
    pub(crate) pinned: Vec<bool>,
    /// Values live on the probability simplex.
    pub(crate) simplex: bool,
}

impl Field {
    pub(crate) fn value(&self, e: usize) -> &[f64] {
        &self.values[e * self.dim..(e + 1) * self.dim]
    }

    fn pinned_valued(&self) -> usize {
        self.pinned
            .iter()
            .zip(&self.valued)
            .filter(|(p, v)| **p && **v)
            .count()
    }

    fn volume_from(states: &StateTable) -> Field {
        let n = states.len();
        let mut f = Field {
            name: "volume",
            dim: 1,
            values: vec![0.0; n],
            valued: vec![false; n],
            pinned: vec![false; n],
            simplex: false,
        };
        for (e, s) in states.iter() {
            f.pinned[e.0] = s.status == EdgeStatus::Observed;
            if let Some(v) = s.volume {
                f.values[e.0] = v;
                f.valued[e.0] = true;
            }
        }
        f
    }

    fn share_from(states: &StateTable) -> Field {
        let n = states.len();
        let mut f = Field {
            name: "class share",
            dim: NUM_CLASSES,
            values: vec![0.0; n * NUM_CLASSES],
            valued: vec![false; n],
            pinned: vec![false; n],
            simplex: true,
        };
        for (e, s) in states.iter() {
            f.pinned[e.0] = s.status == EdgeStatus::Observed;
            if let Some(c) = s.class_share {
                f.values[e.0 * NUM_CLASSES..(e.0 + 1) * NUM_CLASSES].copy_from_slice(c.as_array());
                f.valued[e.0] = true;
            }
        }
        f
    }
}

/// Read access to the fields between epochs.
pub struct EpochView<'a> {
    fields: &'a [Field],
}

impl EpochView<'_> {
    fn field(&self, name: &str) -> Option<&Field> {
        self.fields.iter().find(|f| f.name == name)
    }

    pub fn volume(&self, e: EdgeIdx) -> Option<f64> {
        let f = self.field("volume")?;
        f.valued[e.0].then(|| f.values[e.0])
    }

    pub fn class_share(&self, e: EdgeIdx) -> Option<&[f64]> {
        let f = self.field("class share")?;
        f.valued[e.0].then(|| f.value(e.0))
    }

    pub fn valued_count(&self) -> usize {
        self.fields
            .iter()
            .map(|f| f.valued.iter().filter(|v| **v).count())
            .sum()
    }
}

pub(crate) struct SweepOutcome {
    pub(crate) epochs_run: usize,
    pub(crate) converged: bool,
    pub(crate) trace: Vec<EpochStats>,
    pub(crate) waived_at: Option<usize>,
}

/// Runs the epoch loop over all fields in lockstep.
pub(crate) fn sweep(
    net: &RoadNetwork,
    weights: &[f64],
    fields: &mut [Field],
    cfg: &ImputeConfig,
    mut inspect: impl FnMut(&EpochStats, &EpochView<'_>),
) -> Result<SweepOutcome, ImputeError> {
    let n = net.edge_count();
    let mut trace = Vec::new();
    let mut waived_at = None;
    let free = fields
        .iter()
        .any(|f| f.pinned.iter().any(|p| !p));
    if !free {
        return Ok(SweepOutcome {
            epochs_run: 0,
            converged: true,
            trace,
            waived_at,
        });
    }
    let mut accs: Vec<Accumulator> = fields.iter().map(|f| Accumulator::new(f.dim)).collect();
    let mut buf = [0.0; NUM_CLASSES];

    for epoch in 1..=cfg.max_epochs {
        let waived = waived_at.is_some();
        let mut max_delta = 0.0f64;
        let mut newly = 0usize;
        let mut blocked = 0usize;

        let previous: Option<Vec<Field>> = match cfg.scheme {
            UpdateScheme::InPlace => None,
            UpdateScheme::Synchronous => Some(fields.to_vec()),
        };

        for e in 0..n {
            for (fi, field) in fields.iter_mut().enumerate() {
                if field.pinned[e] {
                    continue;
                }
                let out = &mut buf[..field.dim];
                {
                    let src: &Field = match &previous {
                        Some(p) => &p[fi],
                        None => &*field,
                    };
                    if !valid_to_impute(net, EdgeIdx(e), &src.valued, waived) {
                        if !src.valued[e]
                            && net.neighbors_of(EdgeIdx(e)).iter().any(|m| src.valued[m.0])
                        {
                            blocked += 1;
                        }
                        continue;
                    }
                    let acc = &mut accs[fi];
                    acc.reset();
                    for &m in net.neighbors_of(EdgeIdx(e)) {
                        if src.valued[m.0] {
                            acc.add(weights[m.0], src.value(m.0));
                        }
                    }
                    acc.finish(out);
                }
                if field.simplex {
                    renormalize(out);
                }
                if out.iter().any(|v| !v.is_finite()) {
                    return Err(ImputeError::NonFinite {
                        edge: net.edge(EdgeIdx(e)).id.clone(),
                        epoch,
                    });
                }
                let slot = &mut field.values[e * field.dim..(e + 1) * field.dim];
                if field.valued[e] {
                    for (old, new) in slot.iter().zip(out.iter()) {
                        max_delta = max_delta.max((new - old).abs());
                    }
                } else {
                    field.valued[e] = true;
                    newly += 1;
                }
                slot.copy_from_slice(out);
            }
        }

        let stats = EpochStats {
            epoch,
            max_delta,
            newly_valued: newly,
        };
        trace.push(stats);
        inspect(&stats, &EpochView { fields });

        if newly == 0 && blocked == 0 && max_delta <= cfg.tolerance {
            return Ok(SweepOutcome {
                epochs_run: epoch,
                converged: true,
                trace,
                waived_at,
            });
        }
        if newly == 0 && blocked > 0 && !waived && epoch >= cfg.deferral_grace {
            log::info!("epoch {epoch}: {blocked} deferred edges stalled, waiving merge/diverge deferral");
            waived_at = Some(epoch);
        }
    }
    Ok(SweepOutcome {
        epochs_run: cfg.max_epochs,
        converged: false,
        trace,
        waived_at,
    })
}

fn renormalize(p: &mut [f64]) {
    let sum: f64 = p.iter().sum();
    if (sum - 1.0).abs() > 1e-12 && sum > 0.0 {
        p.iter_mut().for_each(|v| *v /= sum);
    }
}

pub(crate) fn resolved_weights(net: &RoadNetwork, states: &StateTable) -> Result<Vec<f64>, ImputeError> {
    states
        .iter()
        .map(|(e, s)| s.weight.ok_or_else(|| ImputeError::MissingWeight(net.edge(e).id.clone())))
        .collect()
}

/// Propagates observed values over the network.
pub fn run_imputation(
    net: &RoadNetwork,
    states: &StateTable,
    cfg: &ImputeConfig,
) -> Result<ImputeResult, ImputeError> {
    run_imputation_inspect(net, states, cfg, |_, _| {})
}

/// [`run_imputation`] with a callback after every epoch.
pub fn run_imputation_inspect(
    net: &RoadNetwork,
    states: &StateTable,
    cfg: &ImputeConfig,
    inspect: impl FnMut(&EpochStats, &EpochView<'_>),
) -> Result<ImputeResult, ImputeError> {
    cfg.validate()?;
    if states.len() != net.edge_count() {
        return Err(ImputeError::SizeMismatch {
            states: states.len(),
            edges: net.edge_count(),
        });
    }
    let weights = resolved_weights(net, states)?;
    let mut fields = Vec::new();
    if cfg.payload.volume() {
        fields.push(Field::volume_from(states));
    }
    if cfg.payload.class_share() {
        fields.push(Field::share_from(states));
    }
    for f in &fields {
        if f.pinned_valued() == 0 {
            return Err(ImputeError::NoObservedEdges(f.name));
        }
    }

    let outcome = sweep(net, &weights, &mut fields, cfg, inspect)?;

    let mut out = states.clone();
    for e in net.edge_indices() {
        if out[e].status == EdgeStatus::Observed {
            continue;
        }
        let mut any = false;
        for f in &fields {
            match (f.name, f.valued[e.0]) {
                ("volume", true) => {
                    out[e].volume = Some(f.values[e.0]);
                    any = true;
                }
                ("volume", false) => out[e].volume = None,
                (_, true) => {
                    let mut p = [0.0; NUM_CLASSES];
                    p.copy_from_slice(f.value(e.0));
                    out[e].class_share = Some(ClassShare::from_convex(p));
                    any = true;
                }
                (_, false) => out[e].class_share = None,
            }
        }
        out[e].status = if any || out[e].volume.is_some() || out[e].class_share.is_some() {
            EdgeStatus::Imputed
        } else {
            EdgeStatus::Unset
        };
    }
    let unset_count = out.count_status(EdgeStatus::Unset);
    if unset_count > 0 {
        log::warn!("{unset_count} edges unreachable from any observation");
    }
    Ok(ImputeResult {
        states: out,
        epochs_run: outcome.epochs_run,
        converged: outcome.converged,
        trace: outcome.trace,
        unset_count,
        deferral_waived_at: outcome.waived_at,
    })
}

#[derive(Debug, Clone)]
pub struct WeightImputation {
    pub states: StateTable,
    /// Edges whose weight came from propagation.
    pub imputed: Vec<EdgeIdx>,
    /// Edges no weighted edge could reach; given the global median weight.
    pub defaulted: Vec<EdgeIdx>,
    pub epochs_run: usize,
    pub converged: bool,
    pub trace: Vec<EpochStats>,
}

/// Fills missing prior weights by propagating the known ones with uniform
/// neighbor weights.
pub fn impute_missing_weights(
    net: &RoadNetwork,
    states: &StateTable,
    cfg: &ImputeConfig,
) -> Result<WeightImputation, ImputeError> {
    cfg.validate()?;
    if states.len() != net.edge_count() {
        return Err(ImputeError::SizeMismatch {
            states: states.len(),
            edges: net.edge_count(),
        });
    }
    let n = net.edge_count();
    let mut field = Field {
        name: "weight",
        dim: 1,
        values: vec![0.0; n],
        valued: vec![false; n],
        pinned: vec![false; n],
        simplex: false,
    };
    let mut known = Vec::new();
    for (e, s) in states.iter() {
        if let Some(w) = s.weight {
            field.values[e.0] = w;
            field.valued[e.0] = true;
            field.pinned[e.0] = true;
            known.push(w);
        }
    }
    if known.is_empty() {
        return Err(ImputeError::NoWeights);
    }
    let mut fields = [field];
    let outcome = sweep(net, &vec![1.0; n], &mut fields, cfg, |_, _| {})?;
    let [field] = fields;

    let fallback = crate::geomatch::median(&mut known).expect("non-empty");
    let mut out = states.clone();
    let mut imputed = Vec::new();
    let mut defaulted = Vec::new();
    for e in net.edge_indices() {
        if field.pinned[e.0] {
            continue;
        }
        if field.valued[e.0] {
            out[e].weight = Some(field.values[e.0]);
            imputed.push(e);
        } else {
            log::warn!("edge {} unreachable from any weighted edge, using median {fallback}", net.edge(e).id);
            out[e].weight = Some(fallback);
            defaulted.push(e);
        }
    }
    Ok(WeightImputation {
        states: out,
        imputed,
        defaulted,
        epochs_run: outcome.epochs_run,
        converged: outcome.converged,
        trace: outcome.trace,
    })
}
