//! File formats: GeoJSON and CSV readers for inputs, CSV and GeoJSON writers
//! for reports. Writers emit rows in a fixed order so reruns are byte-identical.

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use chrono::NaiveDateTime;
use serde_json::{json, Map, Value};
use thiserror::Error;

use crate::aggregate::{AggregationWindow, HourlyClassRecord, StationObservation};
use crate::evaluate::{FoldLabel, Metric, MetricsReport, Region, ScoredPayload};
use crate::geo::GeoPoint;
use crate::geomatch::{DenseSegment, DirectionCode, SnapRecord, Station, WeightMatch};
use crate::impute::EpochStats;
use crate::network::{EdgeSpec, NetworkError, NodeId, RoadNetwork};
use crate::state::{classes, ClassShare, StateTable, FIRST_CLASS, LAST_CLASS, NUM_CLASSES};

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{}: {source}", path.display())]
    Csv { path: PathBuf, source: csv::Error },
    #[error("{}: {source}", path.display())]
    Json { path: PathBuf, source: serde_json::Error },
    #[error("{}, line {line}: {msg}", path.display())]
    Record { path: PathBuf, line: u64, msg: String },
    #[error("{}: {msg}", path.display())]
    Format { path: PathBuf, msg: String },
    #[error("{}: {source}", path.display())]
    Network { path: PathBuf, source: NetworkError },
}

type Result<T> = std::result::Result<T, IoError>;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> IoError + '_ {
    move |source| IoError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn csv_err(path: &Path) -> impl FnOnce(csv::Error) -> IoError + '_ {
    move |source| IoError::Csv {
        path: path.to_path_buf(),
        source,
    }
}

fn format_err(path: &Path, msg: impl Into<String>) -> IoError {
    IoError::Format {
        path: path.to_path_buf(),
        msg: msg.into(),
    }
}

/// A network plus the truck AADT carried in its input file, by edge index.
#[derive(Debug, Clone)]
pub struct NetworkData {
    pub net: RoadNetwork,
    pub aadt_truck: Vec<Option<f64>>,
}

/// Reads `.geojson`/`.json` as GeoJSON and anything else as a CSV edge list.
pub fn read_network(path: &Path) -> Result<NetworkData> {
    match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase) {
        Some(ext) if ext == "geojson" || ext == "json" => read_network_geojson(path),
        _ => read_network_csv(path),
    }
}

struct RawEdge {
    spec: EdgeSpec,
    aadt: Option<f64>,
}

/// Node coordinates come from the geometry endpoints, first edge (by id) wins.
fn assemble(path: &Path, mut raw: Vec<RawEdge>) -> Result<NetworkData> {
    raw.sort_by(|a, b| a.spec.id.cmp(&b.spec.id));
    let mut nodes: BTreeMap<NodeId, GeoPoint> = BTreeMap::new();
    for r in &raw {
        let g = &r.spec.geometry;
        if g.len() < 2 {
            return Err(format_err(path, format!("edge {} needs at least two vertices", r.spec.id)));
        }
        nodes.entry(r.spec.tail.clone()).or_insert(g[0]);
        nodes.entry(r.spec.head.clone()).or_insert(g[g.len() - 1]);
    }
    let aadt: BTreeMap<_, _> = raw.iter().map(|r| (r.spec.id.clone(), r.aadt)).collect();
    let net = crate::network::build_network(nodes.into_iter().collect(), raw.into_iter().map(|r| r.spec).collect())
        .map_err(|source| IoError::Network {
            path: path.to_path_buf(),
            source,
        })?;
    let aadt_truck = net.edges().iter().map(|e| aadt[&e.id]).collect();
    Ok(NetworkData { net, aadt_truck })
}

fn check_aadt(path: &Path, id: &str, v: Option<f64>) -> Result<Option<f64>> {
    match v {
        Some(x) if !(x.is_finite() && x >= 0.0) => {
            Err(format_err(path, format!("edge {id} has invalid aadt_truck {x}")))
        }
        _ => Ok(v),
    }
}

pub fn read_network_geojson(path: &Path) -> Result<NetworkData> {
    let file = File::open(path).map_err(io_err(path))?;
    let doc: Value = serde_json::from_reader(BufReader::new(file)).map_err(|source| IoError::Json {
        path: path.to_path_buf(),
        source,
    })?;
    let features = doc
        .get("features")
        .and_then(Value::as_array)
        .ok_or_else(|| format_err(path, "expected a FeatureCollection"))?;
    let mut raw = Vec::with_capacity(features.len());
    for (i, f) in features.iter().enumerate() {
        let bad = |msg: &str| format_err(path, format!("feature {i}: {msg}"));
        let geom = f.get("geometry").ok_or_else(|| bad("missing geometry"))?;
        if geom.get("type").and_then(Value::as_str) != Some("LineString") {
            return Err(bad("geometry must be a LineString"));
        }
        let coords = geom
            .get("coordinates")
            .and_then(Value::as_array)
            .ok_or_else(|| bad("missing coordinates"))?;
        let geometry = coords
            .iter()
            .map(|c| match c.as_array().map(|a| a.as_slice()) {
                Some([lon, lat, ..]) => match (lon.as_f64(), lat.as_f64()) {
                    (Some(lon), Some(lat)) => Ok(GeoPoint::new(lon, lat)),
                    _ => Err(bad("non-numeric coordinate")),
                },
                _ => Err(bad("coordinate must be [lon, lat]")),
            })
            .collect::<Result<Vec<_>>>()?;
        let props = f
            .get("properties")
            .and_then(Value::as_object)
            .ok_or_else(|| bad("missing properties"))?;
        let text = |key: &str| match props.get(key) {
            Some(Value::String(s)) => Ok(s.clone()),
            Some(Value::Number(n)) => Ok(n.to_string()),
            _ => Err(bad(&format!("missing {key}"))),
        };
        let number = |key: &str| match props.get(key) {
            None | Some(Value::Null) => Ok(None),
            Some(v) => v.as_f64().map(Some).ok_or_else(|| bad(&format!("{key} is not a number"))),
        };
        let id = text("edge_id")?;
        let length_mi = number("length_mi")?.ok_or_else(|| bad("missing length_mi"))?;
        let aadt = check_aadt(path, &id, number("aadt_truck")?)?;
        raw.push(RawEdge {
            spec: EdgeSpec {
                id: id.into(),
                tail: text("tail_node")?.into(),
                head: text("head_node")?.into(),
                geometry,
                length_mi,
                region_tag: props.get("region_tag").and_then(Value::as_str).map(str::to_string),
            },
            aadt,
        });
    }
    assemble(path, raw)
}

#[derive(serde::Deserialize)]
struct EdgeRow {
    edge_id: String,
    tail: String,
    head: String,
    length_mi: f64,
    aadt_truck: Option<f64>,
    wkt_geometry: String,
    #[serde(default)]
    region_tag: Option<String>,
}

pub fn read_network_csv(path: &Path) -> Result<NetworkData> {
    let mut rdr = csv::Reader::from_path(path).map_err(csv_err(path))?;
    let mut raw = Vec::new();
    for row in rdr.deserialize::<EdgeRow>() {
        let row = row.map_err(csv_err(path))?;
        let geometry = parse_wkt_linestring(&row.wkt_geometry)
            .map_err(|msg| format_err(path, format!("edge {}: {msg}", row.edge_id)))?;
        let aadt = check_aadt(path, &row.edge_id, row.aadt_truck)?;
        raw.push(RawEdge {
            spec: EdgeSpec {
                id: row.edge_id.into(),
                tail: row.tail.into(),
                head: row.head.into(),
                geometry,
                length_mi: row.length_mi,
                region_tag: row.region_tag.filter(|s| !s.is_empty()),
            },
            aadt,
        });
    }
    assemble(path, raw)
}

/// Parses `LINESTRING (lon lat, lon lat, ...)`. A Z or M ordinate is dropped.
pub fn parse_wkt_linestring(text: &str) -> std::result::Result<Vec<GeoPoint>, String> {
    let t = text.trim();
    let upper = t.to_ascii_uppercase();
    let rest = upper
        .strip_prefix("LINESTRING")
        .ok_or_else(|| format!("expected LINESTRING, got {t:?}"))?;
    let rest = rest.trim_start();
    let rest = rest
        .strip_prefix("ZM")
        .or_else(|| rest.strip_prefix('Z'))
        .or_else(|| rest.strip_prefix('M'))
        .unwrap_or(rest)
        .trim();
    let body = rest
        .strip_prefix('(')
        .and_then(|r| r.strip_suffix(')'))
        .ok_or_else(|| format!("unbalanced parentheses in {t:?}"))?;
    let points = body
        .split(',')
        .map(|pair| {
            let nums: Vec<f64> = pair
                .split_whitespace()
                .map(|v| v.parse::<f64>().map_err(|_| format!("bad number {v:?}")))
                .collect::<std::result::Result<_, _>>()?;
            match nums[..] {
                [lon, lat, ..] => Ok(GeoPoint::new(lon, lat)),
                _ => Err(format!("vertex {pair:?} needs two ordinates")),
            }
        })
        .collect::<std::result::Result<Vec<_>, _>>()?;
    if points.len() < 2 {
        return Err("a LINESTRING needs at least two vertices".into());
    }
    Ok(points)
}

pub fn format_wkt_linestring(line: &[GeoPoint]) -> String {
    let body: Vec<String> = line.iter().map(|p| format!("{} {}", p.lon, p.lat)).collect();
    format!("LINESTRING ({})", body.join(", "))
}

fn parse_bool01(path: &Path, line: u64, v: &str) -> Result<bool> {
    match v.trim() {
        "1" | "true" | "TRUE" => Ok(true),
        "0" | "false" | "FALSE" => Ok(false),
        other => Err(IoError::Record {
            path: path.to_path_buf(),
            line,
            msg: format!("one_way must be 0 or 1, got {other:?}"),
        }),
    }
}

#[derive(serde::Deserialize)]
struct DenseRow {
    segment_id: String,
    aadt: f64,
    one_way: String,
    wkt_geometry: String,
}

pub fn read_dense_csv(path: &Path) -> Result<Vec<DenseSegment>> {
    let mut rdr = csv::Reader::from_path(path).map_err(csv_err(path))?;
    let mut out = Vec::new();
    let mut rec = csv::StringRecord::new();
    let headers = rdr.headers().map_err(csv_err(path))?.clone();
    while rdr.read_record(&mut rec).map_err(csv_err(path))? {
        let line = rec.position().map_or(0, |p| p.line());
        let row: DenseRow = rec.deserialize(Some(&headers)).map_err(csv_err(path))?;
        let geometry = parse_wkt_linestring(&row.wkt_geometry).map_err(|msg| IoError::Record {
            path: path.to_path_buf(),
            line,
            msg,
        })?;
        out.push(DenseSegment {
            one_way: parse_bool01(path, line, &row.one_way)?,
            id: row.segment_id,
            aadt: row.aadt,
            geometry,
        });
    }
    Ok(out)
}

#[derive(serde::Deserialize)]
struct StationRow {
    station_id: String,
    direction: String,
    lat: f64,
    lon: f64,
    #[serde(default)]
    region_tag: Option<String>,
}

pub fn read_stations_csv(path: &Path) -> Result<Vec<Station>> {
    let mut rdr = csv::Reader::from_path(path).map_err(csv_err(path))?;
    let headers = rdr.headers().map_err(csv_err(path))?.clone();
    let mut rec = csv::StringRecord::new();
    let mut out = Vec::new();
    while rdr.read_record(&mut rec).map_err(csv_err(path))? {
        let line = rec.position().map_or(0, |p| p.line());
        let row: StationRow = rec.deserialize(Some(&headers)).map_err(csv_err(path))?;
        let direction = row.direction.parse::<DirectionCode>().map_err(|e| IoError::Record {
            path: path.to_path_buf(),
            line,
            msg: e.to_string(),
        })?;
        out.push(Station {
            station_id: row.station_id,
            direction,
            point: GeoPoint::new(row.lon, row.lat),
            region_tag: row.region_tag.filter(|s| !s.is_empty()),
        });
    }
    Ok(out)
}

/// Hourly records plus the class columns that were present but not used.
#[derive(Debug, Clone)]
pub struct HourlyData {
    pub records: Vec<HourlyClassRecord>,
    pub ignored_columns: Vec<String>,
}

const TIMESTAMP_FORMATS: [&str; 3] = ["%Y-%m-%d %H:%M:%S", "%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M"];

fn parse_timestamp(s: &str) -> Option<NaiveDateTime> {
    TIMESTAMP_FORMATS
        .iter()
        .find_map(|f| NaiveDateTime::parse_from_str(s.trim(), f).ok())
}

/// Reads `station_id, direction, timestamp, class_05 .. class_13`.
///
/// Other `class_NN` columns are skipped with a warning. A repeated
/// (station, direction, timestamp) is an error.
pub fn read_hourly_csv(path: &Path) -> Result<HourlyData> {
    let mut rdr = csv::Reader::from_path(path).map_err(csv_err(path))?;
    let headers = rdr.headers().map_err(csv_err(path))?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| format_err(path, format!("missing column {name}")))
    };
    let (station_col, dir_col, ts_col) = (col("station_id")?, col("direction")?, col("timestamp")?);
    let mut class_cols = [0usize; NUM_CLASSES];
    for (slot, c) in class_cols.iter_mut().zip(classes()) {
        *slot = col(&format!("class_{c:02}"))?;
    }
    let ignored_columns: Vec<String> = headers
        .iter()
        .filter_map(|h| {
            let n: u8 = h.trim().strip_prefix("class_")?.parse().ok()?;
            (!(FIRST_CLASS..=LAST_CLASS).contains(&n)).then(|| h.trim().to_string())
        })
        .collect();
    if !ignored_columns.is_empty() {
        log::warn!(
            "{}: ignoring {} class columns outside {FIRST_CLASS}-{LAST_CLASS}: {}",
            path.display(),
            ignored_columns.len(),
            ignored_columns.join(", ")
        );
    }

    let mut seen = HashSet::new();
    let mut records = Vec::new();
    let mut rec = csv::StringRecord::new();
    while rdr.read_record(&mut rec).map_err(csv_err(path))? {
        let line = rec.position().map_or(0, |p| p.line());
        let bad = |msg: String| IoError::Record {
            path: path.to_path_buf(),
            line,
            msg,
        };
        let field = |i: usize| rec.get(i).unwrap_or("").trim();
        let direction = field(dir_col).parse::<DirectionCode>().map_err(|e| bad(e.to_string()))?;
        let timestamp =
            parse_timestamp(field(ts_col)).ok_or_else(|| bad(format!("bad timestamp {:?}", field(ts_col))))?;
        let mut counts = [0.0; NUM_CLASSES];
        for (dst, (&i, c)) in counts.iter_mut().zip(class_cols.iter().zip(classes())) {
            let v: f64 = field(i)
                .parse()
                .map_err(|_| bad(format!("class_{c:02} is not a number: {:?}", field(i))))?;
            if !(v.is_finite() && v >= 0.0) {
                return Err(bad(format!("class_{c:02} count {v} is negative or non-finite")));
            }
            *dst = v;
        }
        let station_id = field(station_col).to_string();
        if !seen.insert((station_id.clone(), direction, timestamp)) {
            return Err(bad(format!("duplicate record for {station_id} {direction} at {timestamp}")));
        }
        records.push(HourlyClassRecord {
            station_id,
            direction,
            timestamp,
            counts,
        });
    }
    Ok(HourlyData {
        records,
        ignored_columns,
    })
}

fn num(v: f64) -> String {
    format!("{v}")
}

fn opt(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

fn class_headers(prefix: &str) -> Vec<String> {
    classes().map(|c| format!("{prefix}{c:02}")).collect()
}

fn share_cells(s: Option<&ClassShare>) -> Vec<String> {
    match s {
        Some(s) => s.as_array().iter().map(|v| num(*v)).collect(),
        None => vec![String::new(); NUM_CLASSES],
    }
}

fn create_dir_for(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    Ok(())
}

fn csv_writer(path: &Path) -> Result<csv::Writer<File>> {
    create_dir_for(path)?;
    csv::Writer::from_path(path).map_err(csv_err(path))
}

fn write_rows<I, R>(path: &Path, header: &[String], rows: I) -> Result<()>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator<Item = String>,
{
    let mut w = csv_writer(path)?;
    w.write_record(header).map_err(csv_err(path))?;
    for row in rows {
        w.write_record(row).map_err(csv_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

fn strings(items: &[&str]) -> Vec<String> {
    items.iter().map(|s| s.to_string()).collect()
}

fn write_json(path: &Path, doc: &Value) -> Result<()> {
    create_dir_for(path)?;
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, doc).map_err(|source| IoError::Json {
        path: path.to_path_buf(),
        source,
    })?;
    writeln!(w).map_err(io_err(path))?;
    w.flush().map_err(io_err(path))
}

fn opt_json(v: Option<f64>) -> Value {
    v.map_or(Value::Null, |x| json!(x))
}

fn line_json(line: &[GeoPoint]) -> Value {
    json!({
        "type": "LineString",
        "coordinates": line.iter().map(|p| json!([p.lon, p.lat])).collect::<Vec<_>>(),
    })
}

/// Input-schema network file (for exporting fixtures).
pub fn write_network_geojson(path: &Path, net: &RoadNetwork, aadt_truck: Option<&[Option<f64>]>) -> Result<()> {
    let features: Vec<Value> = net
        .edge_indices()
        .map(|e| {
            let edge = net.edge(e);
            let mut props = Map::new();
            props.insert("edge_id".into(), json!(edge.id.as_str()));
            props.insert("tail_node".into(), json!(net.node(edge.tail).id.as_str()));
            props.insert("head_node".into(), json!(net.node(edge.head).id.as_str()));
            props.insert("length_mi".into(), json!(edge.length_mi));
            props.insert("aadt_truck".into(), opt_json(aadt_truck.and_then(|a| a[e.0])));
            props.insert("region_tag".into(), edge.region_tag.as_deref().map_or(Value::Null, |t| json!(t)));
            json!({"type": "Feature", "geometry": line_json(&edge.geometry), "properties": props})
        })
        .collect();
    write_json(path, &json!({"type": "FeatureCollection", "features": features}))
}

pub fn write_dense_csv(path: &Path, dense: &[DenseSegment]) -> Result<()> {
    write_rows(
        path,
        &strings(&["segment_id", "aadt", "one_way", "wkt_geometry"]),
        dense.iter().map(|d| {
            vec![
                d.id.clone(),
                num(d.aadt),
                if d.one_way { "1" } else { "0" }.to_string(),
                format_wkt_linestring(&d.geometry),
            ]
        }),
    )
}

pub fn write_stations_csv(path: &Path, stations: &[Station]) -> Result<()> {
    write_rows(
        path,
        &strings(&["station_id", "direction", "lat", "lon", "region_tag"]),
        stations.iter().map(|s| {
            vec![
                s.station_id.clone(),
                s.direction.to_string(),
                num(s.point.lat),
                num(s.point.lon),
                s.region_tag.clone().unwrap_or_default(),
            ]
        }),
    )
}

pub fn write_hourly_csv(path: &Path, records: &[HourlyClassRecord]) -> Result<()> {
    let mut header = strings(&["station_id", "direction", "timestamp"]);
    header.extend(class_headers("class_"));
    write_rows(
        path,
        &header,
        records.iter().map(|r| {
            let mut row = vec![
                r.station_id.clone(),
                r.direction.to_string(),
                r.timestamp.format("%Y-%m-%d %H:%M:%S").to_string(),
            ];
            row.extend(r.counts.iter().map(|c| num(*c)));
            row
        }),
    )
}

pub fn write_weight_report(path: &Path, net: &RoadNetwork, matches: &[WeightMatch]) -> Result<()> {
    write_rows(
        path,
        &strings(&["edge_id", "weight", "n_candidates", "n_after_bearing_filter"]),
        matches.iter().map(|m| {
            vec![
                net.edge(m.edge).id.to_string(),
                opt(m.weight),
                m.n_candidates.to_string(),
                m.n_after_bearing_filter.to_string(),
            ]
        }),
    )
}

pub fn write_snap_report(path: &Path, snaps: &[SnapRecord]) -> Result<()> {
    write_rows(
        path,
        &strings(&["station_id", "direction", "matched_edge_id", "snap_distance_m", "failure"]),
        snaps.iter().map(|s| {
            vec![
                s.station_id.clone(),
                s.direction.to_string(),
                s.matched.as_ref().map(|m| m.0.to_string()).unwrap_or_default(),
                opt(s.matched.as_ref().map(|m| m.1)),
                s.failure.clone().unwrap_or_default(),
            ]
        }),
    )
}

#[derive(serde::Deserialize)]
struct SnapRow {
    station_id: String,
    direction: String,
    matched_edge_id: String,
    snap_distance_m: Option<f64>,
    #[serde(default)]
    failure: String,
}

pub fn read_snap_report(path: &Path) -> Result<Vec<SnapRecord>> {
    let mut rdr = csv::Reader::from_path(path).map_err(csv_err(path))?;
    let mut out = Vec::new();
    for row in rdr.deserialize::<SnapRow>() {
        let row = row.map_err(csv_err(path))?;
        let direction = row
            .direction
            .parse::<DirectionCode>()
            .map_err(|e| format_err(path, e.to_string()))?;
        let matched = match (row.matched_edge_id.is_empty(), row.snap_distance_m) {
            (false, Some(d)) => Some((row.matched_edge_id.into(), d)),
            _ => None,
        };
        out.push(SnapRecord {
            station_id: row.station_id,
            direction,
            matched,
            failure: (!row.failure.is_empty()).then_some(row.failure),
        });
    }
    Ok(out)
}

pub fn write_observations_csv(path: &Path, obs: &[StationObservation]) -> Result<()> {
    let mut header = strings(&["station_id", "direction", "window", "mean_hourly_volume"]);
    header.extend(class_headers("p_class_"));
    header.extend(strings(&["n_hours", "matched_edge_id"]));
    write_rows(
        path,
        &header,
        obs.iter().map(|o| {
            let mut row = vec![
                o.station_id.clone(),
                o.direction.to_string(),
                o.window.to_string(),
                num(o.mean_hourly_volume),
            ];
            row.extend(share_cells(Some(&o.class_share)));
            row.push(o.n_hours.to_string());
            row.push(o.matched_edge.as_ref().map(|e| e.to_string()).unwrap_or_default());
            row
        }),
    )
}

pub fn read_observations_csv(path: &Path) -> Result<Vec<StationObservation>> {
    let mut rdr = csv::Reader::from_path(path).map_err(csv_err(path))?;
    let headers = rdr.headers().map_err(csv_err(path))?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| format_err(path, format!("missing column {name}")))
    };
    let cols = (
        col("station_id")?,
        col("direction")?,
        col("window")?,
        col("mean_hourly_volume")?,
        col("n_hours")?,
        col("matched_edge_id")?,
    );
    let share_cols: Vec<usize> = class_headers("p_class_").iter().map(|h| col(h)).collect::<Result<_>>()?;
    let mut rec = csv::StringRecord::new();
    let mut out = Vec::new();
    while rdr.read_record(&mut rec).map_err(csv_err(path))? {
        let line = rec.position().map_or(0, |p| p.line());
        let bad = |msg: String| IoError::Record {
            path: path.to_path_buf(),
            line,
            msg,
        };
        let f = |i: usize| rec.get(i).unwrap_or("");
        let parse = |i: usize| f(i).parse::<f64>().map_err(|_| bad(format!("bad number {:?}", f(i))));
        let mut p = [0.0; NUM_CLASSES];
        for (dst, &i) in p.iter_mut().zip(&share_cols) {
            *dst = parse(i)?;
        }
        out.push(StationObservation {
            station_id: f(cols.0).to_string(),
            direction: f(cols.1).parse().map_err(|e: crate::geomatch::MatchError| bad(e.to_string()))?,
            window: f(cols.2).parse().map_err(|e: crate::aggregate::WindowParseError| bad(e.to_string()))?,
            mean_hourly_volume: parse(cols.3)?,
            class_share: ClassShare::new(p).map_err(|e| bad(e.to_string()))?,
            n_hours: f(cols.4).parse().map_err(|_| bad(format!("bad n_hours {:?}", f(cols.4))))?,
            matched_edge: Some(f(cols.5)).filter(|s| !s.is_empty()).map(Into::into),
        });
    }
    Ok(out)
}

/// Per-edge output rows: `edge_id, status, weight, volume, p_class_05..13, component_id`.
pub fn write_imputed_csv(path: &Path, net: &RoadNetwork, states: &StateTable, components: &[usize]) -> Result<()> {
    let mut header = strings(&["edge_id", "status", "weight", "volume"]);
    header.extend(class_headers("p_class_"));
    header.push("component_id".into());
    write_rows(
        path,
        &header,
        states.iter().map(|(e, s)| {
            let mut row = vec![
                net.edge(e).id.to_string(),
                s.status.as_str().to_string(),
                opt(s.weight),
                opt(s.volume),
            ];
            row.extend(share_cells(s.class_share.as_ref()));
            row.push(components[e.0].to_string());
            row
        }),
    )
}

pub fn write_imputed_geojson(path: &Path, net: &RoadNetwork, states: &StateTable, components: &[usize]) -> Result<()> {
    let features: Vec<Value> = states
        .iter()
        .map(|(e, s)| {
            let edge = net.edge(e);
            let mut props = Map::new();
            props.insert("edge_id".into(), json!(edge.id.as_str()));
            props.insert("status".into(), json!(s.status.as_str()));
            props.insert("weight".into(), opt_json(s.weight));
            props.insert("volume".into(), opt_json(s.volume));
            for (c, v) in classes().zip(0..) {
                props.insert(
                    format!("p_class_{c:02}"),
                    opt_json(s.class_share.map(|p| p.as_array()[v])),
                );
            }
            props.insert("component_id".into(), json!(components[e.0]));
            json!({"type": "Feature", "geometry": line_json(&edge.geometry), "properties": props})
        })
        .collect();
    write_json(path, &json!({"type": "FeatureCollection", "features": features}))
}

pub fn write_trace_csv(path: &Path, trace: &[EpochStats]) -> Result<()> {
    write_rows(
        path,
        &strings(&["epoch", "max_delta", "newly_valued_count"]),
        trace
            .iter()
            .map(|t| vec![t.epoch.to_string(), num(t.max_delta), t.newly_valued.to_string()]),
    )
}

/// Long format: one row per metric cell.
pub fn write_metrics_long_csv(path: &Path, report: &MetricsReport) -> Result<()> {
    write_rows(
        path,
        &strings(&["window", "fold", "region", "payload", "class", "metric", "value", "n"]),
        report.cells.iter().map(|c| {
            let k = &c.key;
            vec![
                k.window.to_string(),
                k.fold.to_string(),
                k.region.to_string(),
                k.payload.as_str().to_string(),
                k.class.map(|c| c.to_string()).unwrap_or_default(),
                k.metric.as_str().to_string(),
                num(c.value),
                c.n.to_string(),
            ]
        }),
    )
}

/// One row per (window, pooled|mean): volume R², MAE, RMSE and share CEL.
pub fn write_metrics_summary_csv(path: &Path, report: &MetricsReport) -> Result<()> {
    let windows: std::collections::BTreeSet<AggregationWindow> =
        report.cells.iter().map(|c| c.key.window).collect();
    let mut rows = Vec::new();
    for w in windows {
        for fold in [FoldLabel::Pooled, FoldLabel::Mean] {
            let get = |p: ScoredPayload, m: Metric| report.value(w, fold.clone(), p, m);
            let n = report
                .cell(&crate::evaluate::CellKey {
                    window: w,
                    fold: fold.clone(),
                    region: Region::All,
                    payload: ScoredPayload::Volume,
                    class: None,
                    metric: Metric::Mae,
                })
                .map(|c| c.n);
            rows.push(vec![
                w.to_string(),
                fold.to_string(),
                opt(get(ScoredPayload::Volume, Metric::R2)),
                opt(get(ScoredPayload::Volume, Metric::Mae)),
                opt(get(ScoredPayload::Volume, Metric::Rmse)),
                opt(get(ScoredPayload::ClassShare, Metric::Cel)),
                n.map(|n| n.to_string()).unwrap_or_default(),
                get(ScoredPayload::Volume, Metric::Missing).map_or(0, |m| m as usize).to_string(),
            ]);
        }
    }
    write_rows(
        path,
        &strings(&["window", "aggregate", "r2", "mae", "rmse", "cel", "n", "missing"]),
        rows,
    )
}

pub fn write_predictions_csv(path: &Path, report: &MetricsReport) -> Result<()> {
    let mut header = strings(&[
        "window",
        "fold",
        "station_id",
        "direction",
        "edge_id",
        "region_tag",
        "observed_volume",
        "predicted_volume",
    ]);
    header.extend(class_headers("observed_p_class_"));
    header.extend(class_headers("predicted_p_class_"));
    write_rows(
        path,
        &header,
        report.predictions.iter().map(|p| {
            let mut row = vec![
                p.window.to_string(),
                p.fold.to_string(),
                p.station_id.clone(),
                p.direction.to_string(),
                p.edge.to_string(),
                p.region.clone().unwrap_or_default(),
                num(p.observed_volume),
                opt(p.predicted_volume),
            ];
            row.extend(share_cells(Some(&p.observed_share)));
            row.extend(share_cells(p.predicted_share.as_ref()));
            row
        }),
    )
}
