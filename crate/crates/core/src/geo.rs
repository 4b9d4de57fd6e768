//! Spherical geometry on WGS84 longitude/latitude pairs.
//!
//! Everything here treats the earth as a sphere of mean radius
//! [`EARTH_RADIUS_M`]. Distances are in meters, bearings in degrees clockwise
//! from true north.

use serde::{Deserialize, Serialize};

/// Mean earth radius (IUGG), meters.
pub const EARTH_RADIUS_M: f64 = 6_371_008.8;

pub const METERS_PER_MILE: f64 = 1609.344;

/// A WGS84 coordinate in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoPoint {
    pub lon: f64,
    pub lat: f64,
}

impl GeoPoint {
    pub const fn new(lon: f64, lat: f64) -> Self {
        GeoPoint { lon, lat }
    }

    pub fn is_finite(&self) -> bool {
        self.lon.is_finite() && self.lat.is_finite()
    }
}

/// Great-circle distance in meters (haversine form).
pub fn haversine_m(a: GeoPoint, b: GeoPoint) -> f64 {
    let (phi1, phi2) = (a.lat.to_radians(), b.lat.to_radians());
    let dphi = phi2 - phi1;
    let dlambda = (b.lon - a.lon).to_radians();
    let h = (dphi / 2.0).sin().powi(2) + phi1.cos() * phi2.cos() * (dlambda / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_M * h.sqrt().min(1.0).asin()
}

/// Initial great-circle bearing from `a` towards `b`, in `[0, 360)`.
pub fn initial_bearing(a: GeoPoint, b: GeoPoint) -> f64 {
    let (phi1, phi2) = (a.lat.to_radians(), b.lat.to_radians());
    let dlambda = (b.lon - a.lon).to_radians();
    let y = dlambda.sin() * phi2.cos();
    let x = phi1.cos() * phi2.sin() - phi1.sin() * phi2.cos() * dlambda.cos();
    normalize_degrees(y.atan2(x).to_degrees())
}

/// Wraps any angle into `[0, 360)`.
pub fn normalize_degrees(deg: f64) -> f64 {
    let r = deg.rem_euclid(360.0);
    // rem_euclid can round up to exactly 360 for tiny negative inputs
    if r >= 360.0 {
        0.0
    } else {
        r
    }
}

/// Smallest absolute difference between two bearings, in `[0, 180]`.
pub fn angular_diff(a: f64, b: f64) -> f64 {
    let d = (a - b).abs().rem_euclid(360.0);
    d.min(360.0 - d)
}

/// Shortest distance from `p` to the great-circle arc `a`-`b`, meters.
pub fn point_to_segment_m(p: GeoPoint, a: GeoPoint, b: GeoPoint) -> f64 {
    let d_ab = haversine_m(a, b);
    let d_ap = haversine_m(a, p);
    if d_ab < 1e-9 {
        return d_ap;
    }
    if d_ap < 1e-9 {
        return 0.0;
    }
    let delta_ap = d_ap / EARTH_RADIUS_M;
    let theta = (initial_bearing(a, p) - initial_bearing(a, b)).to_radians();
    // behind the start of the arc
    if theta.cos() < 0.0 {
        return d_ap;
    }
    let cross = (delta_ap.sin() * theta.sin()).clamp(-1.0, 1.0).asin();
    let along = (delta_ap.cos() / cross.cos()).clamp(-1.0, 1.0).acos() * EARTH_RADIUS_M;
    if along > d_ab {
        haversine_m(b, p)
    } else {
        cross.abs() * EARTH_RADIUS_M
    }
}

/// Shortest distance from `p` to any segment of `line`, meters.
pub fn point_to_polyline_m(p: GeoPoint, line: &[GeoPoint]) -> f64 {
    match line.len() {
        0 => f64::INFINITY,
        1 => haversine_m(p, line[0]),
        _ => line
            .windows(2)
            .map(|w| point_to_segment_m(p, w[0], w[1]))
            .fold(f64::INFINITY, f64::min),
    }
}

/// Total great-circle length of a polyline, meters.
pub fn polyline_length_m(line: &[GeoPoint]) -> f64 {
    line.windows(2).map(|w| haversine_m(w[0], w[1])).sum()
}

/// Minimum distance between two polylines, meters. Zero when they cross.
pub fn polyline_distance_m(a: &[GeoPoint], b: &[GeoPoint]) -> f64 {
    let mut best = f64::INFINITY;
    for sa in a.windows(2) {
        for sb in b.windows(2) {
            if segments_cross(sa[0], sa[1], sb[0], sb[1]) {
                return 0.0;
            }
            let d = point_to_segment_m(sa[0], sb[0], sb[1])
                .min(point_to_segment_m(sa[1], sb[0], sb[1]))
                .min(point_to_segment_m(sb[0], sa[0], sa[1]))
                .min(point_to_segment_m(sb[1], sa[0], sa[1]));
            best = best.min(d);
        }
    }
    if best.is_infinite() {
        // at least one side is a single point
        best = a
            .iter()
            .map(|&p| point_to_polyline_m(p, b))
            .chain(b.iter().map(|&p| point_to_polyline_m(p, a)))
            .fold(f64::INFINITY, f64::min);
    }
    best
}

/// Proper-intersection test in a local equirectangular projection.
///
/// Segments are at most a few miles long, so the projection error is far
/// below any buffer radius we care about.
fn segments_cross(a1: GeoPoint, a2: GeoPoint, b1: GeoPoint, b2: GeoPoint) -> bool {
    let lat0 = ((a1.lat + a2.lat + b1.lat + b2.lat) / 4.0).to_radians();
    let k = lat0.cos();
    let proj = |p: GeoPoint| (p.lon * k, p.lat);
    let (p1, p2, q1, q2) = (proj(a1), proj(a2), proj(b1), proj(b2));
    let orient = |a: (f64, f64), b: (f64, f64), c: (f64, f64)| {
        (b.0 - a.0) * (c.1 - a.1) - (b.1 - a.1) * (c.0 - a.0)
    };
    let d1 = orient(q1, q2, p1);
    let d2 = orient(q1, q2, p2);
    let d3 = orient(p1, p2, q1);
    let d4 = orient(p1, p2, q2);
    ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0))
        && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
}

/// Axis-aligned bounding box in degrees, used as a cheap prefilter.
#[derive(Debug, Clone, Copy)]
pub(crate) struct BBox {
    min_lon: f64,
    min_lat: f64,
    max_lon: f64,
    max_lat: f64,
}

impl BBox {
    pub(crate) fn of(line: &[GeoPoint]) -> Self {
        let mut bb = BBox {
            min_lon: f64::INFINITY,
            min_lat: f64::INFINITY,
            max_lon: f64::NEG_INFINITY,
            max_lat: f64::NEG_INFINITY,
        };
        for p in line {
            bb.min_lon = bb.min_lon.min(p.lon);
            bb.min_lat = bb.min_lat.min(p.lat);
            bb.max_lon = bb.max_lon.max(p.lon);
            bb.max_lat = bb.max_lat.max(p.lat);
        }
        bb
    }

    /// Grows the box by at least `meters` in every direction.
    pub(crate) fn expand_m(self, meters: f64) -> Self {
        let dlat = (meters / EARTH_RADIUS_M).to_degrees();
        let max_abs_lat = self.min_lat.abs().max(self.max_lat.abs()).min(89.0);
        let dlon = dlat / max_abs_lat.to_radians().cos();
        BBox {
            min_lon: self.min_lon - dlon,
            min_lat: self.min_lat - dlat,
            max_lon: self.max_lon + dlon,
            max_lat: self.max_lat + dlat,
        }
    }

    pub(crate) fn intersects(&self, other: &BBox) -> bool {
        self.min_lon <= other.max_lon
            && other.min_lon <= self.max_lon
            && self.min_lat <= other.max_lat
            && other.min_lat <= self.max_lat
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bearings_on_cardinal_axes() {
        let o = GeoPoint::new(0.0, 0.0);
        assert!((initial_bearing(o, GeoPoint::new(1.0, 0.0)) - 90.0).abs() < 1e-12);
        assert!(initial_bearing(o, GeoPoint::new(0.0, 1.0)).abs() < 1e-12);
        assert!((initial_bearing(o, GeoPoint::new(0.0, -1.0)) - 180.0).abs() < 1e-12);
        assert!((initial_bearing(o, GeoPoint::new(-1.0, 0.0)) - 270.0).abs() < 1e-12);
    }

    #[test]
    fn angular_diff_wraps() {
        assert_eq!(angular_diff(350.0, 10.0), 20.0);
        assert_eq!(angular_diff(90.0, 90.0), 0.0);
        assert_eq!(angular_diff(0.0, 180.0), 180.0);
        assert_eq!(angular_diff(-30.0, 30.0), 60.0);
        assert_eq!(angular_diff(720.0, 1.0), 1.0);
    }

    #[test]
    fn one_degree_of_latitude() {
        let d = haversine_m(GeoPoint::new(0.0, 0.0), GeoPoint::new(0.0, 1.0));
        let expected = EARTH_RADIUS_M * std::f64::consts::PI / 180.0;
        assert!((d - expected).abs() < 1e-6);
    }

    #[test]
    fn point_to_segment_regions() {
        let a = GeoPoint::new(0.0, 0.0);
        let b = GeoPoint::new(0.01, 0.0);
        // beside the middle: perpendicular offset
        let p = GeoPoint::new(0.005, 0.001);
        let d = point_to_segment_m(p, a, b);
        let offset = haversine_m(GeoPoint::new(0.005, 0.0), p);
        assert!((d - offset).abs() < 1e-3, "{d} vs {offset}");
        // before a and past b: endpoint distances
        let before = GeoPoint::new(-0.002, 0.0);
        assert!((point_to_segment_m(before, a, b) - haversine_m(before, a)).abs() < 1e-6);
        let past = GeoPoint::new(0.013, 0.001);
        assert!((point_to_segment_m(past, a, b) - haversine_m(past, b)).abs() < 1e-6);
        assert_eq!(point_to_segment_m(a, a, b), 0.0);
    }

    #[test]
    fn crossing_polylines_have_zero_distance() {
        let h = [GeoPoint::new(-0.01, 0.0), GeoPoint::new(0.01, 0.0)];
        let v = [GeoPoint::new(0.0, -0.01), GeoPoint::new(0.0, 0.01)];
        assert_eq!(polyline_distance_m(&h, &v), 0.0);
        let far = [GeoPoint::new(-0.01, 0.01), GeoPoint::new(0.01, 0.01)];
        let d = polyline_distance_m(&h, &far);
        assert!((d - haversine_m(GeoPoint::new(0.0, 0.0), GeoPoint::new(0.0, 0.01))).abs() < 1e-3);
    }

    #[test]
    fn bbox_expansion_covers_radius() {
        let bb = BBox::of(&[GeoPoint::new(10.0, 45.0)]).expand_m(100.0);
        let east = BBox::of(&[GeoPoint::new(10.0 + 0.0012, 45.0)]);
        assert!(bb.intersects(&east)); // ~94 m east
        let far = BBox::of(&[GeoPoint::new(10.01, 45.0)]);
        assert!(!bb.intersects(&far));
    }
}
