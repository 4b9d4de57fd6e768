//! Synthetic networks and a direct solve of the imputation fixed point.

use std::collections::VecDeque;

use chrono::NaiveDate;
use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::aggregate::{AggregationWindow, HourlyClassRecord, StationObservation};
use crate::geo::{polyline_length_m, GeoPoint, METERS_PER_MILE};
use crate::geomatch::{edge_bearing, DenseSegment, DirectionCode, Station};
use crate::network::{build_network, EdgeId, EdgeIdx, EdgeSpec, NetworkError, NodeId, RoadNetwork};
use crate::state::{ClassShare, EdgeStatus, StateTable, NUM_CLASSES};

/// Grid and lattice spacing, degrees.
const SPACING_DEG: f64 = 0.01;
const ORIGIN: GeoPoint = GeoPoint::new(-90.0, 35.0);

/// Largest system the dense oracle will factor.
pub const MAX_ORACLE_UNKNOWNS: usize = 4000;

#[derive(Debug, Error, PartialEq)]
pub enum SynthError {
    #[error("grid needs at least 2 rows and 2 columns, got {rows}x{cols}")]
    GridTooSmall { rows: usize, cols: usize },
    #[error("grid weight must be positive and finite, got {0}")]
    BadGridWeight(f64),
    #[error("grid endpoint values must be finite")]
    BadGridValue,
    #[error("observation fraction must lie in (0, 1), got {0}")]
    BadFraction(f64),
    #[error("random fixtures need at least 4 edges, got {0}")]
    TooFewEdges(usize),
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
}

#[derive(Debug, Error, PartialEq)]
pub enum OracleError {
    #[error("no observed edge carries a value")]
    NoObservations,
    #[error("edge {0} has no prior weight")]
    MissingWeight(EdgeId),
    #[error("edge {0} cannot be reached from any observation")]
    Unreachable(EdgeId),
    #[error("{0} unknowns exceed the dense oracle limit of {MAX_ORACLE_UNKNOWNS}")]
    TooLarge(usize),
    #[error("fixed-point system is singular")]
    Singular,
}

/// Exact fixed-point values per edge. A payload no observed edge carries is
/// `None`; observed edges lacking a payload read as NaN in it.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleSolution {
    pub volume: Option<Vec<f64>>,
    pub class_share: Option<Vec<ClassShare>>,
}

/// Solves `(I - P_uu) y_u = P_uo y_o` with a dense LU factorization, where `P`
/// row-normalizes the neighbors' prior weights.
///
/// Observed edges keep their values. Observed edges lacking a payload take no
/// part in that payload's system.
pub fn fixed_point_oracle(net: &RoadNetwork, states: &StateTable) -> Result<OracleSolution, OracleError> {
    let weights: Vec<f64> = states
        .iter()
        .map(|(e, s)| s.weight.ok_or_else(|| OracleError::MissingWeight(net.edge(e).id.clone())))
        .collect::<Result<_, _>>()?;
    let observed: Vec<bool> = states.iter().map(|(_, s)| s.status == EdgeStatus::Observed).collect();

    let volume_known: Vec<Option<Vec<f64>>> = states
        .iter()
        .map(|(_, s)| match s.status {
            EdgeStatus::Observed => s.volume.map(|v| vec![v]),
            _ => None,
        })
        .collect();
    let share_known: Vec<Option<Vec<f64>>> = states
        .iter()
        .map(|(_, s)| match s.status {
            EdgeStatus::Observed => s.class_share.map(|c| c.as_array().to_vec()),
            _ => None,
        })
        .collect();

    let to_shares = |rows: Vec<Vec<f64>>| -> Vec<ClassShare> {
        rows.into_iter()
            .map(|r| {
                let mut p = [0.0; NUM_CLASSES];
                p.copy_from_slice(&r);
                ClassShare::from_convex(p)
            })
            .collect()
    };
    let same_pattern = volume_known
        .iter()
        .zip(&share_known)
        .all(|(v, c)| v.is_some() == c.is_some());
    let (volume, class_share) = if same_pattern && volume_known.iter().any(Option::is_some) {
        // Identical systems: factor once, solve both payloads together.
        let joint: Vec<Option<Vec<f64>>> = volume_known
            .into_iter()
            .zip(share_known)
            .map(|(v, c)| Some([v?, c?].concat()))
            .collect();
        let rows = solve_payload(net, &weights, &observed, &joint, 1 + NUM_CLASSES)?.expect("some edge known");
        let volume = rows.iter().map(|r| r[0]).collect();
        (Some(volume), Some(to_shares(rows.into_iter().map(|r| r[1..].to_vec()).collect())))
    } else {
        (
            solve_payload(net, &weights, &observed, &volume_known, 1)?
                .map(|rows| rows.into_iter().map(|r| r[0]).collect()),
            solve_payload(net, &weights, &observed, &share_known, NUM_CLASSES)?.map(to_shares),
        )
    };
    if volume.is_none() && class_share.is_none() {
        return Err(OracleError::NoObservations);
    }
    Ok(OracleSolution { volume, class_share })
}

fn solve_payload(
    net: &RoadNetwork,
    weights: &[f64],
    observed: &[bool],
    known: &[Option<Vec<f64>>],
    dim: usize,
) -> Result<Option<Vec<Vec<f64>>>, OracleError> {
    if known.iter().all(Option::is_none) {
        return Ok(None);
    }
    let n = net.edge_count();
    let unknown: Vec<EdgeIdx> = (0..n).filter(|&i| !observed[i]).map(EdgeIdx).collect();
    if unknown.len() > MAX_ORACLE_UNKNOWNS {
        return Err(OracleError::TooLarge(unknown.len()));
    }

    // Unknowns get values only by relaying through other unknowns.
    let mut reached = vec![false; n];
    let mut queue: VecDeque<EdgeIdx> = (0..n).filter(|&i| known[i].is_some()).map(EdgeIdx).collect();
    while let Some(e) = queue.pop_front() {
        for &m in net.neighbors_of(e) {
            if !observed[m.0] && !reached[m.0] {
                reached[m.0] = true;
                queue.push_back(m);
            }
        }
    }
    if let Some(e) = unknown.iter().find(|e| !reached[e.0]) {
        return Err(OracleError::Unreachable(net.edge(*e).id.clone()));
    }

    let mut slot = vec![usize::MAX; n];
    for (i, e) in unknown.iter().enumerate() {
        slot[e.0] = i;
    }
    let u = unknown.len();
    let mut a = DMatrix::<f64>::identity(u, u);
    let mut b = DMatrix::<f64>::zeros(u, dim);
    for (row, &e) in unknown.iter().enumerate() {
        let live: Vec<EdgeIdx> = net
            .neighbors_of(e)
            .iter()
            .copied()
            .filter(|m| !observed[m.0] || known[m.0].is_some())
            .collect();
        let wsum: f64 = live.iter().map(|m| weights[m.0]).sum();
        for &m in &live {
            let p = if wsum > 0.0 {
                weights[m.0] / wsum
            } else {
                1.0 / live.len() as f64
            };
            match &known[m.0] {
                Some(y) if observed[m.0] => {
                    for (k, v) in y.iter().enumerate() {
                        b[(row, k)] += p * v;
                    }
                }
                _ => a[(row, slot[m.0])] -= p,
            }
        }
    }
    let y_u = if u == 0 {
        DMatrix::zeros(0, dim)
    } else {
        a.lu().solve(&b).ok_or(OracleError::Singular)?
    };
    if y_u.iter().any(|v| !v.is_finite()) {
        return Err(OracleError::Singular);
    }

    Ok(Some(
        (0..n)
            .map(|i| {
                if observed[i] {
                    known[i].clone().unwrap_or_else(|| vec![f64::NAN; dim])
                } else {
                    y_u.row(slot[i]).iter().copied().collect()
                }
            })
            .collect(),
    ))
}

/// Directed lattice with edges pointing up and right.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub rows: usize,
    pub cols: usize,
    pub source_value: f64,
    pub sink_value: f64,
    pub uniform_weight: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            rows: 10,
            cols: 10,
            source_value: 0.10,
            sink_value: 1.00,
            uniform_weight: 1.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GridFixture {
    pub spec: GridSpec,
    pub net: RoadNetwork,
    pub states: StateTable,
    /// Rightward edge leaving the lower-left corner.
    pub source: EdgeIdx,
    /// Rightward edge entering the upper-right corner.
    pub sink: EdgeIdx,
}

/// Builds the grid with both corner edges observed and every other edge unset.
///
/// The endpoint values go into the volume payload. When both lie in [0, 1]
/// they also become class shares, as the class 9 share with the remainder on
/// class 5.
pub fn make_grid(spec: &GridSpec) -> Result<GridFixture, SynthError> {
    let GridSpec { rows, cols, .. } = *spec;
    if rows < 2 || cols < 2 {
        return Err(SynthError::GridTooSmall { rows, cols });
    }
    if !(spec.uniform_weight.is_finite() && spec.uniform_weight > 0.0) {
        return Err(SynthError::BadGridWeight(spec.uniform_weight));
    }
    if !(spec.source_value.is_finite() && spec.sink_value.is_finite()) {
        return Err(SynthError::BadGridValue);
    }
    let node = |r: usize, c: usize| format!("v{:03}_{:03}", r, c);
    let point = |r: usize, c: usize| {
        GeoPoint::new(ORIGIN.lon + c as f64 * SPACING_DEG, ORIGIN.lat + r as f64 * SPACING_DEG)
    };
    let mut nodes = Vec::with_capacity(rows * cols);
    let mut specs = Vec::new();
    let mut source_id = None;
    let mut sink_id = None;
    for r in 0..rows {
        for c in 0..cols {
            nodes.push((NodeId::from(node(r, c)), point(r, c)));
            let mut push = |r2: usize, c2: usize| {
                let id = format!("g{:05}", specs.len());
                let line = vec![point(r, c), point(r2, c2)];
                specs.push(EdgeSpec {
                    id: id.as_str().into(),
                    tail: node(r, c).into(),
                    head: node(r2, c2).into(),
                    length_mi: polyline_length_m(&line) / METERS_PER_MILE,
                    geometry: line,
                    region_tag: None,
                });
                id
            };
            if c + 1 < cols {
                let id = push(r, c + 1);
                if r == 0 && c == 0 {
                    source_id = Some(id);
                } else if r == rows - 1 && c + 2 == cols {
                    sink_id = Some(id);
                }
            }
            if r + 1 < rows {
                push(r + 1, c);
            }
        }
    }
    let net = build_network(nodes, specs)?;
    let source = net.edge_idx(&source_id.expect("grid has a source").into()).expect("built");
    let sink = net.edge_idx(&sink_id.expect("grid has a sink").into()).expect("built");

    let as_share = |v: f64| {
        (0.0..=1.0).contains(&v).then(|| {
            let mut p = [0.0; NUM_CLASSES];
            p[0] = 1.0 - v;
            p[4] = v;
            ClassShare::from_convex(p)
        })
    };
    let shares = as_share(spec.source_value).zip(as_share(spec.sink_value));
    let mut states = StateTable::for_network(&net);
    for e in net.edge_indices() {
        states.set_weight(&net, e, spec.uniform_weight).expect("validated weight");
    }
    states
        .observe(&net, source, Some(spec.source_value), shares.map(|s| s.0))
        .expect("finite source");
    states
        .observe(&net, sink, Some(spec.sink_value), shares.map(|s| s.1))
        .expect("finite sink");
    Ok(GridFixture {
        spec: *spec,
        net,
        states,
        source,
        sink,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EdgeTruth {
    pub volume: f64,
    pub class_share: ClassShare,
}

/// Random strongly connected network whose values satisfy the fixed point.
///
/// Two kinds of observed edges are drawn. Anchors carry arbitrary values and
/// define the fixed point; station edges carry the fixed-point value itself,
/// so masking any subset of stations leaves the truth unchanged.
#[derive(Debug, Clone)]
pub struct RandomFixture {
    pub seed: u64,
    pub net: RoadNetwork,
    /// Weights everywhere, anchors and stations observed.
    pub states: StateTable,
    pub truth: Vec<EdgeTruth>,
    pub anchors: Vec<EdgeIdx>,
    pub stations: Vec<EdgeIdx>,
}

/// Exactly `n_edges` edges on a jittered lattice, seeded.
///
/// Roughly `observation_fraction` of the edges are exposed, half of them as anchors.
pub fn make_random_fixture(n_edges: usize, observation_fraction: f64, seed: u64) -> Result<RandomFixture, SynthError> {
    if !(observation_fraction > 0.0 && observation_fraction < 1.0) {
        return Err(SynthError::BadFraction(observation_fraction));
    }
    if n_edges < 4 {
        return Err(SynthError::TooFewEdges(n_edges));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (rows, cols) = lattice_dims(n_edges);

    let node_id = |r: usize, c: usize| r * cols + c;
    let mut nodes = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        for c in 0..cols {
            let jl = rng.random_range(-0.1..0.1);
            let jc = rng.random_range(-0.1..0.1);
            let p = GeoPoint::new(
                ORIGIN.lon + (c as f64 + jc) * SPACING_DEG,
                ORIGIN.lat + (r as f64 + jl) * SPACING_DEG,
            );
            nodes.push((NodeId::from(format!("n{:05}", node_id(r, c))), p));
        }
    }

    // Snake cycle through every lattice node: along row 0, zigzag over
    // columns 1.. for the remaining rows, back down column 0.
    let mut order = Vec::with_capacity(rows * cols);
    order.extend((0..cols).map(|c| (0, c)));
    for r in 1..rows {
        if r % 2 == 1 {
            order.extend((1..cols).rev().map(|c| (r, c)));
        } else {
            order.extend((1..cols).map(|c| (r, c)));
        }
    }
    order.extend((1..rows).rev().map(|r| (r, 0)));
    let mut pairs: Vec<(usize, usize)> = order
        .iter()
        .zip(order.iter().cycle().skip(1))
        .map(|(&(r1, c1), &(r2, c2))| (node_id(r1, c1), node_id(r2, c2)))
        .collect();
    let used: std::collections::HashSet<(usize, usize)> =
        pairs.iter().map(|&(a, b)| (a.min(b), a.max(b))).collect();

    let mut extras = Vec::new();
    for r in 0..rows {
        for c in 0..cols {
            if c + 1 < cols {
                extras.push((node_id(r, c), node_id(r, c + 1)));
            }
            if r + 1 < rows {
                extras.push((node_id(r, c), node_id(r + 1, c)));
            }
            if r + 1 < rows && c + 1 < cols {
                extras.push(if rng.random_bool(0.5) {
                    (node_id(r, c), node_id(r + 1, c + 1))
                } else {
                    (node_id(r, c + 1), node_id(r + 1, c))
                });
            }
        }
    }
    extras.retain(|&(a, b)| !used.contains(&(a.min(b), a.max(b))));
    extras.shuffle(&mut rng);
    for &(a, b) in extras.iter().take(n_edges - pairs.len()) {
        pairs.push(if rng.random_bool(0.5) { (a, b) } else { (b, a) });
    }
    pairs.shuffle(&mut rng);

    let points: Vec<GeoPoint> = nodes.iter().map(|n| n.1).collect();
    let specs: Vec<EdgeSpec> = pairs
        .iter()
        .enumerate()
        .map(|(i, &(a, b))| {
            let line = vec![points[a], points[b]];
            EdgeSpec {
                id: format!("e{i:05}").into(),
                tail: format!("n{a:05}").into(),
                head: format!("n{b:05}").into(),
                length_mi: polyline_length_m(&line) / METERS_PER_MILE,
                geometry: line,
                region_tag: Some(if a % cols < cols / 2 { "west" } else { "east" }.to_string()),
            }
        })
        .collect();
    let net = build_network(nodes, specs)?;

    let mut states = StateTable::for_network(&net);
    for e in net.edge_indices() {
        states.set_weight(&net, e, rng.random_range(50.0..5000.0)).expect("finite");
    }
    let exposed = ((observation_fraction * n_edges as f64).round() as usize).clamp(2, n_edges - 1);
    let n_anchors = (exposed / 2).max(1);
    let mut picks: Vec<EdgeIdx> = net.edge_indices().collect();
    picks.shuffle(&mut rng);
    let mut anchors = picks[..n_anchors].to_vec();
    let mut stations = picks[n_anchors..exposed].to_vec();
    anchors.sort_unstable();
    stations.sort_unstable();

    let mut anchored = states.clone();
    for &e in &anchors {
        let volume = rng.random_range(10.0..500.0);
        anchored.observe(&net, e, Some(volume), Some(random_share(&mut rng))).expect("valid");
    }
    let sol = fixed_point_oracle(&net, &anchored)?;
    let volumes = sol.volume.expect("anchors carry volume");
    let shares = sol.class_share.expect("anchors carry shares");
    let truth: Vec<EdgeTruth> = volumes
        .into_iter()
        .zip(shares)
        .map(|(volume, class_share)| EdgeTruth { volume, class_share })
        .collect();

    let mut states = anchored;
    for &e in &stations {
        let t = truth[e.0];
        states.observe(&net, e, Some(t.volume), Some(t.class_share)).expect("valid");
    }
    Ok(RandomFixture {
        seed,
        net,
        states,
        truth,
        anchors,
        stations,
    })
}

/// Uniform draw from the simplex (normalized exponentials).
fn random_share(rng: &mut impl Rng) -> ClassShare {
    let mut p = [0.0; NUM_CLASSES];
    for v in p.iter_mut() {
        *v = -(1.0 - rng.random::<f64>()).ln();
    }
    ClassShare::from_counts(&p).unwrap_or_else(|_| ClassShare::uniform())
}

/// Lattice size whose snake cycle plus spare lattice pairs can hold `n` edges.
fn lattice_dims(n: usize) -> (usize, usize) {
    let target = 0.4 * n as f64;
    let mut best: Option<((f64, usize), (usize, usize))> = None;
    for r in (2..=n / 2).step_by(2) {
        for c in 2..=n / r {
            let capacity = r * (c - 1) + (r - 1) * c + (r - 1) * (c - 1);
            if r * c > n || n > capacity {
                continue;
            }
            let score = ((r * c) as f64 - target).abs();
            let key = (score, r.abs_diff(c));
            if best.is_none_or(|(b, _)| key < b) {
                best = Some((key, (r, c)));
            }
        }
    }
    best.expect("n >= 4 always fits").1
}

/// Files a pipeline needs to run on a random fixture.
#[derive(Debug, Clone)]
pub struct SyntheticInputs {
    /// One one-way segment per edge, over the middle of the edge, carrying its weight.
    pub dense: Vec<DenseSegment>,
    /// One station per anchor and station edge, at the edge midpoint.
    pub stations: Vec<Station>,
    /// A single hour per station reproducing its true volume and shares.
    pub hourly: Vec<HourlyClassRecord>,
    /// Anchor station ids, which cross-validation must never mask.
    pub pinned_stations: Vec<String>,
}

impl RandomFixture {
    /// Weights plus anchors, without station observations.
    pub fn base_states(&self) -> StateTable {
        let mut s = self.states.clone();
        for &e in &self.stations {
            s.clear(e);
        }
        s
    }

    /// Edges neither anchored nor observed by a station.
    pub fn hidden(&self) -> Vec<EdgeIdx> {
        self.net
            .edge_indices()
            .filter(|&e| self.states[e].status != EdgeStatus::Observed)
            .collect()
    }

    fn observation(&self, station_id: String, e: EdgeIdx) -> StationObservation {
        let t = self.truth[e.0];
        StationObservation {
            station_id,
            direction: self.direction(e),
            window: AggregationWindow::ALL,
            mean_hourly_volume: t.volume,
            class_share: t.class_share,
            n_hours: 1,
            matched_edge: Some(self.net.edge(e).id.clone()),
        }
    }

    fn direction(&self, e: EdgeIdx) -> DirectionCode {
        DirectionCode::nearest(edge_bearing(self.net.edge(e)).expect("lattice edges have length"))
    }

    pub fn station_observations(&self) -> Vec<StationObservation> {
        self.stations
            .iter()
            .enumerate()
            .map(|(i, &e)| self.observation(format!("S{i:05}"), e))
            .collect()
    }

    pub fn anchor_observations(&self) -> Vec<StationObservation> {
        self.anchors
            .iter()
            .enumerate()
            .map(|(i, &e)| self.observation(format!("A{i:05}"), e))
            .collect()
    }

    pub fn synthetic_inputs(&self) -> SyntheticInputs {
        let dense = self
            .net
            .edges()
            .iter()
            .enumerate()
            .map(|(i, edge)| {
                let (a, b) = (edge.geometry[0], edge.geometry[edge.geometry.len() - 1]);
                let lerp = |t: f64| GeoPoint::new(a.lon + t * (b.lon - a.lon), a.lat + t * (b.lat - a.lat));
                DenseSegment {
                    id: format!("d{i:05}"),
                    aadt: self.states[EdgeIdx(i)].weight.expect("fixture edges are weighted"),
                    one_way: true,
                    geometry: vec![lerp(0.2), lerp(0.8)],
                }
            })
            .collect();
        let hour = NaiveDate::from_ymd_opt(2021, 3, 1)
            .and_then(|d| d.and_hms_opt(12, 0, 0))
            .expect("valid date");
        let mut stations = Vec::new();
        let mut hourly = Vec::new();
        for o in self.anchor_observations().into_iter().chain(self.station_observations()) {
            let e = self.net.edge_idx(o.matched_edge.as_ref().expect("matched")).expect("own edge");
            let edge = self.net.edge(e);
            let (a, b) = (edge.geometry[0], edge.geometry[edge.geometry.len() - 1]);
            stations.push(Station {
                station_id: o.station_id.clone(),
                direction: o.direction,
                point: GeoPoint::new((a.lon + b.lon) / 2.0, (a.lat + b.lat) / 2.0),
                region_tag: edge.region_tag.clone(),
            });
            hourly.push(HourlyClassRecord {
                station_id: o.station_id,
                direction: o.direction,
                timestamp: hour,
                counts: o.class_share.as_array().map(|p| p * o.mean_hourly_volume),
            });
        }
        SyntheticInputs {
            dense,
            stations,
            hourly,
            pinned_stations: (0..self.anchors.len()).map(|i| format!("A{i:05}")).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::impute::{run_imputation, ImputeConfig, Payload};

    fn chain(values: &[(usize, f64)], n_edges: usize) -> (RoadNetwork, StateTable) {
        let nodes = (0..=n_edges)
            .map(|i| (NodeId::from(format!("n{i}")), GeoPoint::new(i as f64 * 0.01, 0.0)))
            .collect();
        let edges = (0..n_edges)
            .map(|i| EdgeSpec::straight(&format!("e{i}"), &format!("n{i}"), &format!("n{}", i + 1), 1.0))
            .collect();
        let net = build_network(nodes, edges).unwrap();
        let mut s = StateTable::for_network(&net);
        for e in net.edge_indices() {
            s.set_weight(&net, e, 1.0).unwrap();
        }
        for &(i, v) in values {
            s.observe(&net, EdgeIdx(i), Some(v), None).unwrap();
        }
        (net, s)
    }

    #[test]
    fn constant_chain() {
        let (net, s) = chain(&[(0, 7.0)], 5);
        let sol = fixed_point_oracle(&net, &s).unwrap();
        assert!(sol.volume.unwrap().iter().all(|v| (v - 7.0).abs() < 1e-12));
        assert!(sol.class_share.is_none());
    }

    #[test]
    fn three_edge_path_midpoint() {
        let (net, s) = chain(&[(0, 0.0), (2, 1.0)], 3);
        let v = fixed_point_oracle(&net, &s).unwrap().volume.unwrap();
        assert!((v[1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn oracle_errors() {
        let (net, s) = chain(&[], 3);
        assert_eq!(fixed_point_oracle(&net, &s), Err(OracleError::NoObservations));

        // e0 -> e1 in one component, e2 on its own
        let nodes = (0..5)
            .map(|i| (NodeId::from(format!("n{i}")), GeoPoint::new(i as f64 * 0.01, 0.0)))
            .collect();
        let edges = vec![
            EdgeSpec::straight("e0", "n0", "n1", 1.0),
            EdgeSpec::straight("e1", "n1", "n2", 1.0),
            EdgeSpec::straight("e2", "n3", "n4", 1.0),
        ];
        let net = build_network(nodes, edges).unwrap();
        let mut s = StateTable::for_network(&net);
        for e in net.edge_indices() {
            s.set_weight(&net, e, 1.0).unwrap();
        }
        s.observe(&net, EdgeIdx(0), Some(1.0), None).unwrap();
        assert_eq!(fixed_point_oracle(&net, &s), Err(OracleError::Unreachable("e2".into())));
    }

    #[test]
    fn grid_shape() {
        let g = make_grid(&GridSpec {
            rows: 2,
            cols: 2,
            ..GridSpec::default()
        })
        .unwrap();
        assert_eq!((g.net.node_count(), g.net.edge_count()), (4, 4));
        assert_eq!(g.states.observed_count(), 2);
        assert_eq!(g.net.edge(g.source).id.as_str(), "g00000");
        assert_eq!(g.net.edge(g.sink).id.as_str(), "g00003");

        let g = make_grid(&GridSpec::default()).unwrap();
        assert_eq!(g.net.edge_count(), 180);
        assert_eq!(g.states[g.source].volume, Some(0.10));
        assert_eq!(g.states[g.sink].volume, Some(1.00));
        assert!((g.states[g.sink].class_share.unwrap().get(9) - 1.0).abs() < 1e-15);

        assert_eq!(
            make_grid(&GridSpec {
                rows: 1,
                ..GridSpec::default()
            })
            .unwrap_err(),
            SynthError::GridTooSmall { rows: 1, cols: 10 }
        );
    }

    #[test]
    fn grid_oracle_matches_iteration() {
        let g = make_grid(&GridSpec {
            rows: 5,
            cols: 5,
            ..GridSpec::default()
        })
        .unwrap();
        let exact = fixed_point_oracle(&g.net, &g.states).unwrap();
        let cfg = ImputeConfig {
            tolerance: 1e-12,
            max_epochs: 20_000,
            ..ImputeConfig::default()
        };
        let run = run_imputation(&g.net, &g.states, &cfg).unwrap();
        assert!(run.converged);
        let ev = exact.volume.unwrap();
        let es = exact.class_share.unwrap();
        for e in g.net.edge_indices() {
            assert!((run.states[e].volume.unwrap() - ev[e.0]).abs() < 1e-10);
            assert!((run.states[e].class_share.unwrap().get(9) - es[e.0].get(9)).abs() < 1e-10);
            // class 9 share tracks the scalar payload exactly
            assert!((es[e.0].get(9) - ev[e.0]).abs() < 1e-12);
        }
    }

    #[test]
    fn lattice_fits() {
        for n in 4..400 {
            let (r, c) = lattice_dims(n);
            assert!(r % 2 == 0 && r * c <= n, "n={n}");
        }
    }

    #[test]
    fn random_fixture_shape() {
        let f = make_random_fixture(200, 0.1, 9).unwrap();
        assert_eq!(f.net.edge_count(), 200);
        assert_eq!(f.anchors.len(), 10);
        assert_eq!(f.stations.len(), 10);
        assert!(f.net.edges().iter().all(|e| e.reverse_twin.is_none()));
        let comps = f.net.neighbor_components();
        assert!(comps.iter().all(|&c| c == 0));
        // stations sit on the fixed point
        let sol = fixed_point_oracle(&f.net, &f.states).unwrap();
        for (e, t) in sol.volume.unwrap().iter().zip(&f.truth) {
            assert!((e - t.volume).abs() <= 1e-9 * t.volume.abs().max(1.0));
        }
        for n in [4, 5, 6, 7, 13, 57] {
            let f = make_random_fixture(n, 0.5, n as u64).unwrap();
            assert_eq!(f.net.edge_count(), n);
        }
    }

    #[test]
    fn random_fixture_is_seeded() {
        let a = make_random_fixture(60, 0.2, 5).unwrap();
        let b = make_random_fixture(60, 0.2, 5).unwrap();
        assert_eq!(a.states, b.states);
        assert_eq!(a.truth, b.truth);
        let c = make_random_fixture(60, 0.2, 6).unwrap();
        assert_ne!(a.truth, c.truth);
        assert!(make_random_fixture(60, 1.0, 5).is_err());
        assert!(make_random_fixture(3, 0.5, 5).is_err());
    }

    #[test]
    fn one_hidden_edge_is_recovered() {
        let f = make_random_fixture(40, 0.99, 1).unwrap();
        let hidden = f.hidden();
        assert_eq!(hidden.len(), 1);
        let cfg = ImputeConfig {
            tolerance: 1e-12,
            payload: Payload::Both,
            ..ImputeConfig::default()
        };
        let run = run_imputation(&f.net, &f.states, &cfg).unwrap();
        let e = hidden[0];
        assert!((run.states[e].volume.unwrap() - f.truth[e.0].volume).abs() < 1e-8 * f.truth[e.0].volume);
    }

    #[test]
    fn synthetic_inputs_cover_every_observation() {
        let f = make_random_fixture(80, 0.25, 3).unwrap();
        let inputs = f.synthetic_inputs();
        assert_eq!(inputs.dense.len(), 80);
        assert_eq!(inputs.stations.len(), f.anchors.len() + f.stations.len());
        assert_eq!(inputs.hourly.len(), inputs.stations.len());
        assert_eq!(inputs.pinned_stations.len(), f.anchors.len());
    }
}
