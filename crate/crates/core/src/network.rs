//! Directed road network: nodes, single-direction edges, adjacency and the
//! neighbor relation used by the imputation sweep.
//!
//! Edges are stored sorted by [`EdgeId`], so an [`EdgeIdx`] doubles as the
//! deterministic sweep position of an edge. Every list returned from this
//! module is ordered by index.

use std::collections::{HashMap, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geo::{haversine_m, point_to_polyline_m, GeoPoint};

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub String);

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EdgeId(pub String);

macro_rules! string_id {
    ($t:ident) => {
        impl $t {
            pub fn as_str(&self) -> &str {
                &self.0
            }
        }
        impl fmt::Display for $t {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }
        impl From<&str> for $t {
            fn from(s: &str) -> Self {
                $t(s.to_string())
            }
        }
        impl From<String> for $t {
            fn from(s: String) -> Self {
                $t(s)
            }
        }
    };
}
string_id!(NodeId);
string_id!(EdgeId);

/// Dense position of an edge in the network's EdgeId-sorted edge list.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct EdgeIdx(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeIdx(pub usize);

#[derive(Debug, Error, PartialEq)]
pub enum NetworkError {
    #[error("edge {edge} references undeclared node {node}")]
    DanglingNode { edge: EdgeId, node: NodeId },
    #[error("duplicate edge id {0}")]
    DuplicateEdge(EdgeId),
    #[error("duplicate node id {0}")]
    DuplicateNode(NodeId),
    #[error("edge {edge} has non-positive or non-finite length {length}")]
    BadLength { edge: EdgeId, length: f64 },
    #[error("edge {0} is a self-loop")]
    SelfLoop(EdgeId),
    #[error("edge {edge}: geometry endpoint is {distance_m:.1} m from node {node}")]
    GeometryMismatch { edge: EdgeId, node: NodeId, distance_m: f64 },
    #[error("node {0} has non-finite coordinates")]
    BadCoordinate(NodeId),
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("unknown edge {0}")]
    UnknownEdge(EdgeId),
}

/// Input description of one directed edge.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeSpec {
    pub id: EdgeId,
    pub tail: NodeId,
    pub head: NodeId,
    /// Polyline from tail to head. Empty means a straight line between the nodes.
    pub geometry: Vec<GeoPoint>,
    pub length_mi: f64,
    pub region_tag: Option<String>,
}

impl EdgeSpec {
    pub fn straight(id: &str, tail: &str, head: &str, length_mi: f64) -> Self {
        EdgeSpec {
            id: id.into(),
            tail: tail.into(),
            head: head.into(),
            geometry: Vec::new(),
            length_mi,
            region_tag: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Node {
    pub id: NodeId,
    pub point: GeoPoint,
}

#[derive(Debug, Clone)]
pub struct Edge {
    pub id: EdgeId,
    pub tail: NodeIdx,
    pub head: NodeIdx,
    pub geometry: Vec<GeoPoint>,
    pub length_mi: f64,
    pub reverse_twin: Option<EdgeIdx>,
    pub region_tag: Option<String>,
}

#[derive(Debug, Clone, Copy)]
pub struct BuildOptions {
    /// Allowed gap between a geometry endpoint and its node, meters.
    pub endpoint_tolerance_m: f64,
    /// Maximum vertex deviation for two opposing edges to count as twins, meters.
    pub twin_tolerance_m: f64,
}

impl Default for BuildOptions {
    fn default() -> Self {
        BuildOptions {
            endpoint_tolerance_m: 25.0,
            twin_tolerance_m: 25.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RoadNetwork {
    nodes: Vec<Node>,
    edges: Vec<Edge>,
    node_index: HashMap<NodeId, NodeIdx>,
    edge_index: HashMap<EdgeId, EdgeIdx>,
    in_adj: Vec<Vec<EdgeIdx>>,
    out_adj: Vec<Vec<EdgeIdx>>,
    neighbors: Vec<Vec<EdgeIdx>>,
}

/// Builds a network with [`BuildOptions::default`].
pub fn build_network(
    nodes: Vec<(NodeId, GeoPoint)>,
    edges: Vec<EdgeSpec>,
) -> Result<RoadNetwork, NetworkError> {
    RoadNetwork::build(nodes, edges, BuildOptions::default())
}

impl RoadNetwork {
    pub fn build(
        mut nodes: Vec<(NodeId, GeoPoint)>,
        mut edges: Vec<EdgeSpec>,
        opts: BuildOptions,
    ) -> Result<RoadNetwork, NetworkError> {
        nodes.sort_by(|a, b| a.0.cmp(&b.0));
        if let Some(w) = nodes.windows(2).find(|w| w[0].0 == w[1].0) {
            return Err(NetworkError::DuplicateNode(w[0].0.clone()));
        }
        if let Some((id, _)) = nodes.iter().find(|(_, p)| !p.is_finite()) {
            return Err(NetworkError::BadCoordinate(id.clone()));
        }
        let node_index: HashMap<NodeId, NodeIdx> = nodes
            .iter()
            .enumerate()
            .map(|(i, (id, _))| (id.clone(), NodeIdx(i)))
            .collect();
        let nodes: Vec<Node> = nodes.into_iter().map(|(id, point)| Node { id, point }).collect();

        edges.sort_by(|a, b| a.id.cmp(&b.id));
        if let Some(w) = edges.windows(2).find(|w| w[0].id == w[1].id) {
            return Err(NetworkError::DuplicateEdge(w[0].id.clone()));
        }

        let mut built = Vec::with_capacity(edges.len());
        for spec in edges {
            let lookup = |n: &NodeId| {
                node_index.get(n).copied().ok_or_else(|| NetworkError::DanglingNode {
                    edge: spec.id.clone(),
                    node: n.clone(),
                })
            };
            let tail = lookup(&spec.tail)?;
            let head = lookup(&spec.head)?;
            if tail == head {
                return Err(NetworkError::SelfLoop(spec.id));
            }
            if !(spec.length_mi.is_finite() && spec.length_mi > 0.0) {
                return Err(NetworkError::BadLength {
                    edge: spec.id,
                    length: spec.length_mi,
                });
            }
            let geometry = if spec.geometry.is_empty() {
                vec![nodes[tail.0].point, nodes[head.0].point]
            } else {
                for (end, node) in [
                    (spec.geometry[0], tail),
                    (spec.geometry[spec.geometry.len() - 1], head),
                ] {
                    let d = haversine_m(end, nodes[node.0].point);
                    if d.is_nan() || d > opts.endpoint_tolerance_m {
                        return Err(NetworkError::GeometryMismatch {
                            edge: spec.id.clone(),
                            node: nodes[node.0].id.clone(),
                            distance_m: d,
                        });
                    }
                }
                spec.geometry
            };
            built.push(Edge {
                id: spec.id,
                tail,
                head,
                geometry,
                length_mi: spec.length_mi,
                reverse_twin: None,
                region_tag: spec.region_tag,
            });
        }

        let edge_index = built
            .iter()
            .enumerate()
            .map(|(i, e)| (e.id.clone(), EdgeIdx(i)))
            .collect();
        let mut in_adj = vec![Vec::new(); nodes.len()];
        let mut out_adj = vec![Vec::new(); nodes.len()];
        for (i, e) in built.iter().enumerate() {
            out_adj[e.tail.0].push(EdgeIdx(i));
            in_adj[e.head.0].push(EdgeIdx(i));
        }

        let mut net = RoadNetwork {
            nodes,
            edges: built,
            node_index,
            edge_index,
            in_adj,
            out_adj,
            neighbors: Vec::new(),
        };
        net.pair_twins(opts.twin_tolerance_m);
        net.neighbors = (0..net.edges.len())
            .map(|i| net.compute_neighbors(EdgeIdx(i)))
            .collect();
        Ok(net)
    }

    /// Pairs each edge u->v with the closest-matching v->u edge whose
    /// geometry is the same road traversed backwards.
    fn pair_twins(&mut self, tolerance_m: f64) {
        for i in 0..self.edges.len() {
            if self.edges[i].reverse_twin.is_some() {
                continue;
            }
            let (tail, head) = (self.edges[i].tail, self.edges[i].head);
            let mut best: Option<(f64, usize)> = None;
            for &EdgeIdx(j) in &self.out_adj[head.0] {
                if self.edges[j].head != tail || self.edges[j].reverse_twin.is_some() {
                    continue;
                }
                let dev = geometry_deviation_m(&self.edges[i].geometry, &self.edges[j].geometry);
                if dev <= tolerance_m && best.is_none_or(|(d, _)| dev < d) {
                    best = Some((dev, j));
                }
            }
            if let Some((_, j)) = best {
                self.edges[i].reverse_twin = Some(EdgeIdx(j));
                self.edges[j].reverse_twin = Some(EdgeIdx(i));
            }
        }
    }

    fn compute_neighbors(&self, e: EdgeIdx) -> Vec<EdgeIdx> {
        let edge = &self.edges[e.0];
        let mut out: Vec<EdgeIdx> = self.in_adj[edge.tail.0]
            .iter()
            .chain(&self.out_adj[edge.head.0])
            .copied()
            .filter(|&n| n != e && Some(n) != edge.reverse_twin)
            .collect();
        out.sort_unstable();
        out.dedup();
        out
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn edge(&self, e: EdgeIdx) -> &Edge {
        &self.edges[e.0]
    }

    pub fn node(&self, n: NodeIdx) -> &Node {
        &self.nodes[n.0]
    }

    pub fn edge_indices(&self) -> impl Iterator<Item = EdgeIdx> + '_ {
        (0..self.edges.len()).map(EdgeIdx)
    }

    pub fn edge_idx(&self, id: &EdgeId) -> Option<EdgeIdx> {
        self.edge_index.get(id).copied()
    }

    pub fn node_idx(&self, id: &NodeId) -> Option<NodeIdx> {
        self.node_index.get(id).copied()
    }

    /// Edges ending at `node`, in EdgeId order.
    pub fn in_edges(&self, node: &NodeId) -> Result<&[EdgeIdx], NetworkError> {
        let n = self
            .node_idx(node)
            .ok_or_else(|| NetworkError::UnknownNode(node.clone()))?;
        Ok(&self.in_adj[n.0])
    }

    /// Edges starting at `node`, in EdgeId order.
    pub fn out_edges(&self, node: &NodeId) -> Result<&[EdgeIdx], NetworkError> {
        let n = self
            .node_idx(node)
            .ok_or_else(|| NetworkError::UnknownNode(node.clone()))?;
        Ok(&self.out_adj[n.0])
    }

    pub fn in_edges_of(&self, n: NodeIdx) -> &[EdgeIdx] {
        &self.in_adj[n.0]
    }

    pub fn out_edges_of(&self, n: NodeIdx) -> &[EdgeIdx] {
        &self.out_adj[n.0]
    }

    /// In-edges of the tail plus out-edges of the head, minus the edge
    /// itself and its reverse twin.
    pub fn neighbor_edges(&self, e: &EdgeId) -> Result<&[EdgeIdx], NetworkError> {
        let idx = self
            .edge_idx(e)
            .ok_or_else(|| NetworkError::UnknownEdge(e.clone()))?;
        Ok(&self.neighbors[idx.0])
    }

    pub fn neighbors_of(&self, e: EdgeIdx) -> &[EdgeIdx] {
        &self.neighbors[e.0]
    }

    /// Upstream links feeding `e`: in-edges of its tail, excluding its twin.
    pub fn upstream_of(&self, e: EdgeIdx) -> impl Iterator<Item = EdgeIdx> + '_ {
        let edge = &self.edges[e.0];
        self.in_adj[edge.tail.0]
            .iter()
            .copied()
            .filter(move |&n| Some(n) != edge.reverse_twin)
    }

    /// Downstream links fed by `e`: out-edges of its head, excluding its twin.
    pub fn downstream_of(&self, e: EdgeIdx) -> impl Iterator<Item = EdgeIdx> + '_ {
        let edge = &self.edges[e.0];
        self.out_adj[edge.head.0]
            .iter()
            .copied()
            .filter(move |&n| Some(n) != edge.reverse_twin)
    }

    /// Connected components of the neighbor relation. Component ids are
    /// assigned in order of each component's smallest edge index.
    pub fn neighbor_components(&self) -> Vec<usize> {
        let mut comp = vec![usize::MAX; self.edges.len()];
        let mut next = 0;
        let mut queue = VecDeque::new();
        for start in 0..self.edges.len() {
            if comp[start] != usize::MAX {
                continue;
            }
            comp[start] = next;
            queue.push_back(start);
            while let Some(i) = queue.pop_front() {
                for &EdgeIdx(j) in &self.neighbors[i] {
                    if comp[j] == usize::MAX {
                        comp[j] = next;
                        queue.push_back(j);
                    }
                }
            }
            next += 1;
        }
        comp
    }
}

/// Largest distance from any vertex of one geometry to the other geometry.
fn geometry_deviation_m(a: &[GeoPoint], b: &[GeoPoint]) -> f64 {
    let ab = a
        .iter()
        .map(|&p| point_to_polyline_m(p, b))
        .fold(0.0, f64::max);
    let ba = b
        .iter()
        .map(|&p| point_to_polyline_m(p, a))
        .fold(0.0, f64::max);
    ab.max(ba)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn node(id: &str, lon: f64, lat: f64) -> (NodeId, GeoPoint) {
        (id.into(), GeoPoint::new(lon, lat))
    }

    fn ids(net: &RoadNetwork, list: &[EdgeIdx]) -> Vec<String> {
        list.iter().map(|&e| net.edge(e).id.0.clone()).collect()
    }

    /// A and B feed C, C-D is the link of interest, D feeds E and F.
    fn fig8(two_way_cd: bool) -> RoadNetwork {
        let nodes = vec![
            node("A", 0.0, 0.01),
            node("B", 0.0, -0.01),
            node("C", 0.01, 0.0),
            node("D", 0.02, 0.0),
            node("E", 0.03, 0.01),
            node("F", 0.03, -0.01),
        ];
        let mut edges = vec![
            EdgeSpec::straight("AC", "A", "C", 1.0),
            EdgeSpec::straight("BC", "B", "C", 1.0),
            EdgeSpec::straight("CD", "C", "D", 1.0),
            EdgeSpec::straight("DE", "D", "E", 1.0),
            EdgeSpec::straight("DF", "D", "F", 1.0),
        ];
        if two_way_cd {
            edges.push(EdgeSpec::straight("DC", "D", "C", 1.0));
        }
        build_network(nodes, edges).unwrap()
    }

    #[test]
    fn directed_square() {
        let nodes = vec![
            node("a", 0.0, 0.0),
            node("b", 0.01, 0.0),
            node("c", 0.01, 0.01),
            node("d", 0.0, 0.01),
        ];
        let edges = vec![
            EdgeSpec::straight("1", "a", "b", 1.0),
            EdgeSpec::straight("2", "b", "c", 1.0),
            EdgeSpec::straight("3", "c", "d", 1.0),
            EdgeSpec::straight("4", "d", "a", 1.0),
        ];
        let net = build_network(nodes, edges).unwrap();
        assert_eq!(net.node_count(), 4);
        assert_eq!(net.edge_count(), 4);
        for n in ["a", "b", "c", "d"] {
            assert_eq!(net.in_edges(&n.into()).unwrap().len(), 1);
            assert_eq!(net.out_edges(&n.into()).unwrap().len(), 1);
        }
        assert!(net.edges().iter().all(|e| e.reverse_twin.is_none()));
    }

    #[test]
    fn fig8_adjacency() {
        let net = fig8(false);
        assert_eq!(ids(&net, net.in_edges(&"C".into()).unwrap()), ["AC", "BC"]);
        assert_eq!(ids(&net, net.out_edges(&"D".into()).unwrap()), ["DE", "DF"]);
        assert_eq!(
            ids(&net, net.neighbor_edges(&"CD".into()).unwrap()),
            ["AC", "BC", "DE", "DF"]
        );
    }

    #[test]
    fn fig8_two_way_excludes_twin() {
        let net = fig8(true);
        let cd = net.edge_idx(&"CD".into()).unwrap();
        let dc = net.edge_idx(&"DC".into()).unwrap();
        assert_eq!(net.edge(cd).reverse_twin, Some(dc));
        assert_eq!(net.edge(dc).reverse_twin, Some(cd));
        // Hand enumeration: in(C) = {AC, BC, DC}, out(D) = {DC, DE, DF};
        // dropping CD itself and its twin DC leaves the one-way answer.
        assert_eq!(
            ids(&net, net.neighbor_edges(&"CD".into()).unwrap()),
            ["AC", "BC", "DE", "DF"]
        );
        // DC: in(D) = {CD}, out(C) = {CD}; both are its twin.
        assert!(net.neighbor_edges(&"DC".into()).unwrap().is_empty());
    }

    #[test]
    fn corridor_neighbors() {
        let nodes = vec![node("A", 0.0, 0.0), node("B", 0.01, 0.0), node("C", 0.02, 0.0)];
        let edges = vec![
            EdgeSpec::straight("AB", "A", "B", 1.0),
            EdgeSpec::straight("BC", "B", "C", 1.0),
        ];
        let net = build_network(nodes, edges).unwrap();
        assert_eq!(ids(&net, net.neighbor_edges(&"BC".into()).unwrap()), ["AB"]);
        assert_eq!(ids(&net, net.neighbor_edges(&"AB".into()).unwrap()), ["BC"]);
    }

    #[test]
    fn isolated_node_has_no_edges() {
        let nodes = vec![node("A", 0.0, 0.0), node("B", 0.01, 0.0), node("Z", 1.0, 1.0)];
        let net = build_network(nodes, vec![EdgeSpec::straight("AB", "A", "B", 1.0)]).unwrap();
        assert!(net.in_edges(&"Z".into()).unwrap().is_empty());
        assert!(net.out_edges(&"Z".into()).unwrap().is_empty());
        assert_eq!(
            net.in_edges(&"Q".into()).unwrap_err(),
            NetworkError::UnknownNode("Q".into())
        );
    }

    #[test]
    fn build_errors() {
        let nodes = || vec![node("A", 0.0, 0.0), node("B", 0.01, 0.0)];
        let err = build_network(nodes(), vec![EdgeSpec::straight("e", "A", "Z", 1.0)]).unwrap_err();
        assert!(matches!(err, NetworkError::DanglingNode { ref node, .. } if node.0 == "Z"));
        let err = build_network(
            nodes(),
            vec![
                EdgeSpec::straight("e", "A", "B", 1.0),
                EdgeSpec::straight("e", "B", "A", 1.0),
            ],
        )
        .unwrap_err();
        assert_eq!(err, NetworkError::DuplicateEdge("e".into()));
        let err = build_network(nodes(), vec![EdgeSpec::straight("e", "A", "B", 0.0)]).unwrap_err();
        assert!(matches!(err, NetworkError::BadLength { .. }));
        let err = build_network(nodes(), vec![EdgeSpec::straight("e", "A", "A", 1.0)]).unwrap_err();
        assert_eq!(err, NetworkError::SelfLoop("e".into()));
        let mut off = EdgeSpec::straight("e", "A", "B", 1.0);
        off.geometry = vec![GeoPoint::new(0.0, 0.0), GeoPoint::new(0.02, 0.0)];
        let err = build_network(nodes(), vec![off]).unwrap_err();
        assert!(matches!(err, NetworkError::GeometryMismatch { .. }));
    }

    #[test]
    fn opposing_edges_with_different_roads_are_not_twins() {
        let nodes = vec![node("A", 0.0, 0.0), node("B", 0.01, 0.0)];
        let mut back = EdgeSpec::straight("BA", "B", "A", 1.0);
        // detour 1 km north
        back.geometry = vec![
            GeoPoint::new(0.01, 0.0),
            GeoPoint::new(0.005, 0.009),
            GeoPoint::new(0.0, 0.0),
        ];
        let net = build_network(nodes, vec![EdgeSpec::straight("AB", "A", "B", 1.0), back]).unwrap();
        assert!(net.edges().iter().all(|e| e.reverse_twin.is_none()));
    }

    #[test]
    fn degree_sums_match_edge_count() {
        let net = fig8(true);
        let ins: usize = net.nodes().iter().map(|n| net.in_edges(&n.id).unwrap().len()).sum();
        let outs: usize = net.nodes().iter().map(|n| net.out_edges(&n.id).unwrap().len()).sum();
        assert_eq!(ins, net.edge_count());
        assert_eq!(outs, net.edge_count());
    }

    #[test]
    fn components_follow_neighbor_relation() {
        let net = fig8(true);
        let comp = net.neighbor_components();
        let dc = net.edge_idx(&"DC".into()).unwrap();
        let cd = net.edge_idx(&"CD".into()).unwrap();
        assert_ne!(comp[dc.0], comp[cd.0]);
        let ac = net.edge_idx(&"AC".into()).unwrap();
        assert_eq!(comp[ac.0], comp[cd.0]);
    }
}
