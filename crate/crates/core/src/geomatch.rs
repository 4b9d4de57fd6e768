//! Geometric matching: carrying AADT priors from a dense two-way network onto
//! the directed analysis network, and snapping count stations to edges.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geo::{angular_diff, haversine_m, initial_bearing, point_to_polyline_m, polyline_distance_m, BBox, GeoPoint};
use crate::network::{Edge, EdgeId, EdgeIdx, RoadNetwork};

#[derive(Debug, Error, PartialEq)]
pub enum MatchError {
    #[error("invalid match config: {0}")]
    InvalidConfig(String),
    #[error("geometry of {0} has coincident endpoints, bearing undefined")]
    DegenerateGeometry(String),
    #[error("dense segment {id} has invalid AADT {aadt}")]
    BadAadt { id: String, aadt: f64 },
    #[error("target network has no edges")]
    EmptyNetwork,
    #[error("no edge within {max_m} m of station {station}")]
    NoEdgeWithinDistance { station: String, max_m: f64 },
    #[error("no edge near station {station} runs {direction}")]
    NoDirectionConsistentEdge { station: String, direction: DirectionCode },
    #[error("unknown direction code {0:?}")]
    BadDirection(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MatchConfig {
    pub buffer_radius_m: f64,
    pub bearing_tolerance_deg: f64,
    pub station_bearing_tolerance_deg: f64,
    pub snap_max_distance_m: f64,
}

impl Default for MatchConfig {
    fn default() -> Self {
        MatchConfig {
            buffer_radius_m: 100.0,
            bearing_tolerance_deg: 15.0,
            station_bearing_tolerance_deg: 45.0,
            snap_max_distance_m: 500.0,
        }
    }
}

impl MatchConfig {
    pub fn validate(&self) -> Result<(), MatchError> {
        let positive = [
            ("buffer_radius_m", self.buffer_radius_m),
            ("bearing_tolerance_deg", self.bearing_tolerance_deg),
            ("station_bearing_tolerance_deg", self.station_bearing_tolerance_deg),
            ("snap_max_distance_m", self.snap_max_distance_m),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(MatchError::InvalidConfig(format!("{name} must be positive, got {v}")));
            }
        }
        for (name, v) in &positive[1..3] {
            if *v >= 90.0 {
                return Err(MatchError::InvalidConfig(format!("{name} must be below 90, got {v}")));
            }
        }
        Ok(())
    }
}

/// Posted travel direction of a count station.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum DirectionCode {
    N,
    NE,
    E,
    SE,
    S,
    SW,
    W,
    NW,
}

impl DirectionCode {
    pub const ALL: [DirectionCode; 8] = [
        DirectionCode::N,
        DirectionCode::NE,
        DirectionCode::E,
        DirectionCode::SE,
        DirectionCode::S,
        DirectionCode::SW,
        DirectionCode::W,
        DirectionCode::NW,
    ];

    pub fn azimuth(self) -> f64 {
        match self {
            DirectionCode::N => 0.0,
            DirectionCode::NE => 45.0,
            DirectionCode::E => 90.0,
            DirectionCode::SE => 135.0,
            DirectionCode::S => 180.0,
            DirectionCode::SW => 225.0,
            DirectionCode::W => 270.0,
            DirectionCode::NW => 315.0,
        }
    }

    pub fn opposite(self) -> Self {
        Self::ALL[(self as usize + 4) % 8]
    }

    /// The code whose azimuth is closest to `bearing`.
    pub fn nearest(bearing: f64) -> Self {
        let slot = (crate::geo::normalize_degrees(bearing) / 45.0).round() as usize % 8;
        Self::ALL[slot]
    }

    pub fn as_str(self) -> &'static str {
        match self {
            DirectionCode::N => "N",
            DirectionCode::NE => "NE",
            DirectionCode::E => "E",
            DirectionCode::SE => "SE",
            DirectionCode::S => "S",
            DirectionCode::SW => "SW",
            DirectionCode::W => "W",
            DirectionCode::NW => "NW",
        }
    }
}

impl fmt::Display for DirectionCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DirectionCode {
    type Err = MatchError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let t = s.trim();
        Self::ALL
            .into_iter()
            .find(|d| d.as_str().eq_ignore_ascii_case(t))
            .ok_or_else(|| MatchError::BadDirection(s.to_string()))
    }
}

/// First-to-last-point bearing of a polyline.
pub fn geometry_bearing(name: &str, line: &[GeoPoint]) -> Result<f64, MatchError> {
    let (Some(&first), Some(&last)) = (line.first(), line.last()) else {
        return Err(MatchError::DegenerateGeometry(name.to_string()));
    };
    if haversine_m(first, last) < 1e-6 {
        return Err(MatchError::DegenerateGeometry(name.to_string()));
    }
    Ok(initial_bearing(first, last))
}

pub fn edge_bearing(edge: &Edge) -> Result<f64, MatchError> {
    geometry_bearing(edge.id.as_str(), &edge.geometry)
}

/// A segment of the dense (typically two-way) inventory network.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseSegment {
    pub id: String,
    pub aadt: f64,
    pub one_way: bool,
    pub geometry: Vec<GeoPoint>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Travel {
    /// Digitized direction.
    Forward,
    Reverse,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DirectedSegment {
    pub source_id: String,
    pub travel: Travel,
    pub aadt: f64,
    pub geometry: Vec<GeoPoint>,
}

/// Splits two-way segments into two opposing directed segments carrying half
/// the AADT each; one-way segments pass through with their full AADT.
pub fn directionalize_and_halve(dense: &[DenseSegment]) -> Result<Vec<DirectedSegment>, MatchError> {
    let mut out = Vec::with_capacity(dense.len() * 2);
    for seg in dense {
        if !(seg.aadt.is_finite() && seg.aadt >= 0.0) {
            return Err(MatchError::BadAadt {
                id: seg.id.clone(),
                aadt: seg.aadt,
            });
        }
        if seg.one_way {
            out.push(DirectedSegment {
                source_id: seg.id.clone(),
                travel: Travel::Forward,
                aadt: seg.aadt,
                geometry: seg.geometry.clone(),
            });
        } else {
            let half = seg.aadt / 2.0;
            out.push(DirectedSegment {
                source_id: seg.id.clone(),
                travel: Travel::Forward,
                aadt: half,
                geometry: seg.geometry.clone(),
            });
            out.push(DirectedSegment {
                source_id: seg.id.clone(),
                travel: Travel::Reverse,
                aadt: half,
                geometry: seg.geometry.iter().rev().copied().collect(),
            });
        }
    }
    Ok(out)
}

/// Median with the even-count convention of averaging the middle pair.
pub fn median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    Some(if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / 2.0
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightMatch {
    pub edge: EdgeIdx,
    /// Median surviving AADT; `None` when nothing survived.
    pub weight: Option<f64>,
    /// Dense segments touching the buffer.
    pub n_candidates: usize,
    /// Candidates whose bearing agrees with the edge.
    pub n_after_bearing_filter: usize,
}

/// Assigns each target edge the median AADT of the directed dense segments
/// that lie within the buffer and run the same way. Output is in edge order.
pub fn transfer_weights(
    net: &RoadNetwork,
    segments: &[DirectedSegment],
    cfg: &MatchConfig,
) -> Result<Vec<WeightMatch>, MatchError> {
    cfg.validate()?;
    if net.edge_count() == 0 {
        return Err(MatchError::EmptyNetwork);
    }
    let prepared: Vec<(BBox, Option<f64>)> = segments
        .iter()
        .map(|s| (BBox::of(&s.geometry), geometry_bearing(&s.source_id, &s.geometry).ok()))
        .collect();

    let matches = net
        .edges()
        .par_iter()
        .enumerate()
        .map(|(i, edge)| {
            let reach = BBox::of(&edge.geometry).expand_m(cfg.buffer_radius_m);
            let bearing = edge_bearing(edge).ok();
            let mut n_candidates = 0;
            let mut surviving = Vec::new();
            for (seg, (bb, seg_bearing)) in segments.iter().zip(&prepared) {
                if !reach.intersects(bb)
                    || polyline_distance_m(&edge.geometry, &seg.geometry) > cfg.buffer_radius_m
                {
                    continue;
                }
                n_candidates += 1;
                if let (Some(a), Some(b)) = (bearing, seg_bearing) {
                    if angular_diff(a, *b) <= cfg.bearing_tolerance_deg {
                        surviving.push(seg.aadt);
                    }
                }
            }
            let n_after_bearing_filter = surviving.len();
            WeightMatch {
                edge: EdgeIdx(i),
                weight: median(&mut surviving),
                n_candidates,
                n_after_bearing_filter,
            }
        })
        .collect();
    Ok(matches)
}

/// A count station location with its posted travel direction.
#[derive(Debug, Clone, PartialEq)]
pub struct Station {
    pub station_id: String,
    pub direction: DirectionCode,
    pub point: GeoPoint,
    pub region_tag: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Snap {
    pub edge: EdgeIdx,
    pub distance_m: f64,
}

/// Nearest edge that runs in the station's posted direction. Ties go to the
/// lower EdgeId.
pub fn snap_station(station: &Station, net: &RoadNetwork, cfg: &MatchConfig) -> Result<Snap, MatchError> {
    cfg.validate()?;
    let probe = BBox::of(&[station.point]).expand_m(cfg.snap_max_distance_m);
    let azimuth = station.direction.azimuth();
    let mut any_near = false;
    let mut best: Option<Snap> = None;
    for (i, edge) in net.edges().iter().enumerate() {
        if !probe.intersects(&BBox::of(&edge.geometry)) {
            continue;
        }
        let d = point_to_polyline_m(station.point, &edge.geometry);
        if d > cfg.snap_max_distance_m {
            continue;
        }
        any_near = true;
        let Ok(bearing) = edge_bearing(edge) else { continue };
        if angular_diff(bearing, azimuth) > cfg.station_bearing_tolerance_deg {
            continue;
        }
        if best.is_none_or(|b| d < b.distance_m) {
            best = Some(Snap {
                edge: EdgeIdx(i),
                distance_m: d,
            });
        }
    }
    match best {
        Some(s) => Ok(s),
        None if any_near => Err(MatchError::NoDirectionConsistentEdge {
            station: station.station_id.clone(),
            direction: station.direction,
        }),
        None => Err(MatchError::NoEdgeWithinDistance {
            station: station.station_id.clone(),
            max_m: cfg.snap_max_distance_m,
        }),
    }
}

/// Snap outcome for one station, kept even when matching failed.
#[derive(Debug, Clone, PartialEq)]
pub struct SnapRecord {
    pub station_id: String,
    pub direction: DirectionCode,
    pub matched: Option<(EdgeId, f64)>,
    pub failure: Option<String>,
}

/// Snaps every station, in (station_id, direction) order.
pub fn snap_all(stations: &[Station], net: &RoadNetwork, cfg: &MatchConfig) -> Vec<SnapRecord> {
    let mut sorted: Vec<&Station> = stations.iter().collect();
    sorted.sort_by(|a, b| (&a.station_id, a.direction).cmp(&(&b.station_id, b.direction)));
    sorted
        .into_iter()
        .map(|s| match snap_station(s, net, cfg) {
            Ok(snap) => SnapRecord {
                station_id: s.station_id.clone(),
                direction: s.direction,
                matched: Some((net.edge(snap.edge).id.clone(), snap.distance_m)),
                failure: None,
            },
            Err(e) => {
                log::warn!("station {} {} unmatched: {e}", s.station_id, s.direction);
                SnapRecord {
                    station_id: s.station_id.clone(),
                    direction: s.direction,
                    matched: None,
                    failure: Some(e.to_string()),
                }
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{build_network, EdgeSpec, NodeId};
    use proptest::prelude::*;

    fn seg(id: &str, aadt: f64, one_way: bool, pts: &[(f64, f64)]) -> DenseSegment {
        DenseSegment {
            id: id.into(),
            aadt,
            one_way,
            geometry: pts.iter().map(|&(x, y)| GeoPoint::new(x, y)).collect(),
        }
    }

    /// A single eastbound edge along the equator.
    fn east_edge() -> RoadNetwork {
        let nodes: Vec<(NodeId, GeoPoint)> = vec![
            ("a".into(), GeoPoint::new(0.0, 0.0)),
            ("b".into(), GeoPoint::new(0.01, 0.0)),
        ];
        build_network(nodes, vec![EdgeSpec::straight("ab", "a", "b", 0.7)]).unwrap()
    }

    /// Directed segment leaving the edge midpoint at `bearing`.
    fn fan(bearing: f64, aadt: f64) -> DirectedSegment {
        let r = 0.002;
        let (s, c) = bearing.to_radians().sin_cos();
        DirectedSegment {
            source_id: format!("fan{bearing}"),
            travel: Travel::Forward,
            aadt,
            geometry: vec![GeoPoint::new(0.005, 0.0), GeoPoint::new(0.005 + r * s, r * c)],
        }
    }

    #[test]
    fn bearing_examples() {
        let o = GeoPoint::new(0.0, 0.0);
        assert!((geometry_bearing("x", &[o, GeoPoint::new(1.0, 0.0)]).unwrap() - 90.0).abs() < 1e-12);
        assert!(geometry_bearing("x", &[o, GeoPoint::new(0.0, 1.0)]).unwrap().abs() < 1e-12);
        assert!(matches!(
            geometry_bearing("x", &[o, GeoPoint::new(1.0, 1.0), o]),
            Err(MatchError::DegenerateGeometry(_))
        ));
    }

    #[test]
    fn bearing_off_axis_matches_tangent_plane_projection() {
        // Independent route: project the chord P1->P2 onto the local
        // north/east unit vectors at P1 in earth-centered coordinates.
        let ecef = |lat: f64, lon: f64| {
            let (la, lo) = (lat.to_radians(), lon.to_radians());
            [la.cos() * lo.cos(), la.cos() * lo.sin(), la.sin()]
        };
        let (p1, p2) = (ecef(10.0, 10.0), ecef(11.0, 11.0));
        let (la, lo) = (10f64.to_radians(), 10f64.to_radians());
        let north = [-la.sin() * lo.cos(), -la.sin() * lo.sin(), la.cos()];
        let east = [-lo.sin(), lo.cos(), 0.0];
        let d = [p2[0] - p1[0], p2[1] - p1[1], p2[2] - p1[2]];
        let dot = |a: [f64; 3], b: [f64; 3]| a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
        let oracle = dot(d, east).atan2(dot(d, north)).to_degrees();
        // frozen value of the same oracle
        assert!((oracle - 44.426_216_835_009_4).abs() < 1e-9);
        let got = geometry_bearing("x", &[GeoPoint::new(10.0, 10.0), GeoPoint::new(11.0, 11.0)]).unwrap();
        assert!((got - oracle).abs() < 1e-9, "{got} vs {oracle}");
    }

    #[test]
    fn halving_rules() {
        let out = directionalize_and_halve(&[seg("t", 5000.0, false, &[(0.0, 0.0), (0.01, 0.0)])]).unwrap();
        assert_eq!(out.len(), 2);
        assert!(out.iter().all(|d| d.aadt == 2500.0));
        assert_eq!(out[1].geometry[0], GeoPoint::new(0.01, 0.0));
        let out = directionalize_and_halve(&[seg("o", 800.0, true, &[(0.0, 0.0), (0.01, 0.0)])]).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].aadt, 800.0);
        let out = directionalize_and_halve(&[seg("z", 0.0, false, &[(0.0, 0.0), (0.01, 0.0)])]).unwrap();
        assert_eq!(out.iter().map(|d| d.aadt).collect::<Vec<_>>(), [0.0, 0.0]);
        assert!(matches!(
            directionalize_and_halve(&[seg("n", -1.0, true, &[(0.0, 0.0), (0.01, 0.0)])]),
            Err(MatchError::BadAadt { .. })
        ));
    }

    #[test]
    fn median_conventions() {
        assert_eq!(median(&mut [1000.0, 100.0, 200.0]), Some(200.0));
        assert_eq!(median(&mut [100.0, 300.0]), Some(200.0));
        assert_eq!(median(&mut []), None);
    }

    #[test]
    fn bearing_filter_keeps_aligned_candidates() {
        let net = east_edge();
        let w = transfer_weights(&net, &[fan(100.0, 10.0), fan(120.0, 99.0)], &MatchConfig::default()).unwrap();
        assert_eq!(w[0].n_candidates, 2);
        assert_eq!(w[0].n_after_bearing_filter, 1);
        assert_eq!(w[0].weight, Some(10.0));
    }

    #[test]
    fn edge_without_candidates_stays_unset() {
        let net = east_edge();
        let far = DirectedSegment {
            source_id: "far".into(),
            travel: Travel::Forward,
            aadt: 5.0,
            geometry: vec![GeoPoint::new(1.0, 1.0), GeoPoint::new(1.01, 1.0)],
        };
        let w = transfer_weights(&net, &[far], &MatchConfig::default()).unwrap();
        assert_eq!(w[0].weight, None);
        assert_eq!(w[0].n_candidates, 0);
    }

    #[test]
    fn empty_target_network_is_an_error() {
        let net = build_network(vec![], vec![]).unwrap();
        assert_eq!(
            transfer_weights(&net, &[], &MatchConfig::default()),
            Err(MatchError::EmptyNetwork)
        );
    }

    #[test]
    fn config_validation() {
        let mut cfg = MatchConfig::default();
        assert!(cfg.validate().is_ok());
        cfg.bearing_tolerance_deg = 90.0;
        assert!(cfg.validate().is_err());
        cfg = MatchConfig {
            buffer_radius_m: 0.0,
            ..MatchConfig::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn direction_codes() {
        assert_eq!("ne".parse::<DirectionCode>().unwrap(), DirectionCode::NE);
        assert!("X".parse::<DirectionCode>().is_err());
        assert_eq!(DirectionCode::E.opposite(), DirectionCode::W);
        assert_eq!(DirectionCode::NW.opposite(), DirectionCode::SE);
        assert_eq!(DirectionCode::nearest(350.0), DirectionCode::N);
        assert_eq!(DirectionCode::nearest(100.0), DirectionCode::E);
        assert_eq!(DirectionCode::SW.azimuth(), 225.0);
    }

    fn twin_road() -> RoadNetwork {
        let nodes: Vec<(NodeId, GeoPoint)> = vec![
            ("w".into(), GeoPoint::new(-0.01, 0.0)),
            ("e".into(), GeoPoint::new(0.01, 0.0)),
        ];
        build_network(
            nodes,
            vec![
                EdgeSpec::straight("eb", "w", "e", 1.4),
                EdgeSpec::straight("wb", "e", "w", 1.4),
            ],
        )
        .unwrap()
    }

    fn station(dir: DirectionCode, lon: f64, lat: f64) -> Station {
        Station {
            station_id: "s1".into(),
            direction: dir,
            point: GeoPoint::new(lon, lat),
            region_tag: None,
        }
    }

    #[test]
    fn snap_uses_direction_to_pick_twin() {
        let net = twin_road();
        let cfg = MatchConfig::default();
        let e = snap_station(&station(DirectionCode::E, 0.0, 0.0), &net, &cfg).unwrap();
        let w = snap_station(&station(DirectionCode::W, 0.0, 0.0), &net, &cfg).unwrap();
        assert_eq!(net.edge(e.edge).id.as_str(), "eb");
        assert_eq!(net.edge(w.edge).id.as_str(), "wb");
        assert_eq!(net.edge(e.edge).reverse_twin, Some(w.edge));
    }

    #[test]
    fn snap_failures() {
        let net = twin_road();
        let cfg = MatchConfig::default();
        // ~2.2 km north of the road
        let far = snap_station(&station(DirectionCode::E, 0.0, 0.02), &net, &cfg);
        assert!(matches!(far, Err(MatchError::NoEdgeWithinDistance { .. })));
        let cross = snap_station(&station(DirectionCode::N, 0.0, 0.0), &net, &cfg);
        assert!(matches!(cross, Err(MatchError::NoDirectionConsistentEdge { .. })));
    }

    proptest! {
        #[test]
        fn transfer_is_order_free_scale_covariant_and_bounded(
            bearings in proptest::collection::vec(60.0f64..120.0, 1..8),
            values in proptest::collection::vec(0.0f64..1e5, 8),
            exp in -4i32..8,
            rotate in 0usize..8,
        ) {
            let net = east_edge();
            let cfg = MatchConfig::default();
            let segs: Vec<DirectedSegment> =
                bearings.iter().zip(&values).map(|(&b, &v)| fan(b, v)).collect();
            let base = transfer_weights(&net, &segs, &cfg).unwrap()[0].clone();

            let mut rotated = segs.clone();
            let len = rotated.len();
            rotated.rotate_left(rotate % len);
            rotated.reverse();
            let again = transfer_weights(&net, &rotated, &cfg).unwrap()[0].clone();
            prop_assert_eq!(&base, &again);

            // powers of two scale exactly
            let c = 2f64.powi(exp);
            let scaled: Vec<DirectedSegment> = segs
                .iter()
                .map(|s| DirectedSegment { aadt: s.aadt * c, ..s.clone() })
                .collect();
            let sw = transfer_weights(&net, &scaled, &cfg).unwrap()[0].weight;
            prop_assert_eq!(sw, base.weight.map(|w| w * c));

            if let Some(w) = base.weight {
                let kept: Vec<f64> = segs
                    .iter()
                    .filter(|s| {
                        let b = geometry_bearing("s", &s.geometry).unwrap();
                        angular_diff(90.0, b) <= 15.0
                    })
                    .map(|s| s.aadt)
                    .collect();
                let lo = kept.iter().cloned().fold(f64::INFINITY, f64::min);
                let hi = kept.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                prop_assert!(lo <= w && w <= hi);
            }
        }

        #[test]
        fn transfer_scales_with_arbitrary_positive_factor(
            values in proptest::collection::vec(1.0f64..1e5, 1..6),
            c in 1e-3f64..1e3,
        ) {
            let net = east_edge();
            let cfg = MatchConfig::default();
            let segs: Vec<DirectedSegment> = values.iter().map(|&v| fan(90.0, v)).collect();
            let scaled: Vec<DirectedSegment> = values.iter().map(|&v| fan(90.0, v * c)).collect();
            let a = transfer_weights(&net, &segs, &cfg).unwrap()[0].weight.unwrap();
            let b = transfer_weights(&net, &scaled, &cfg).unwrap()[0].weight.unwrap();
            prop_assert!((b - a * c).abs() <= 1e-12 * (a * c).abs());
        }
    }
}
