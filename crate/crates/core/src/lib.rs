//! Imputation of truck volume and vehicle-class shares on directed road
//! networks from sparse count stations.
//!
//! The pipeline: build a [`RoadNetwork`], transfer prior weights from a dense
//! inventory network and snap stations ([`geomatch`]), roll hourly counts into
//! observations ([`aggregate`]), propagate them ([`impute`]) and score the
//! result by masking cross-validation ([`evaluate`]). [`synth`] holds test
//! networks and an exact solver for the fixed point.

pub mod aggregate;
pub mod evaluate;
pub mod geo;
pub mod geomatch;
pub mod impute;
pub mod io;
pub mod network;
pub mod state;
pub mod synth;

pub use aggregate::{aggregate_records, AggregationWindow, HourlyClassRecord, StationObservation};
pub use evaluate::{make_folds, run_cross_validation, FoldAssignment, MetricsReport};
pub use geo::GeoPoint;
pub use geomatch::{DirectionCode, MatchConfig, Station};
pub use impute::{run_imputation, ImputeConfig, ImputeResult, Payload, UpdateScheme};
pub use network::{build_network, EdgeId, EdgeIdx, EdgeSpec, NodeId, RoadNetwork};
pub use state::{ClassShare, EdgeState, EdgeStatus, StateTable};
pub use synth::{fixed_point_oracle, make_grid, make_random_fixture, GridSpec};
