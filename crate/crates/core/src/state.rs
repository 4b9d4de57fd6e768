//! Per-edge mutable state: prior weight, payload values and status.

use std::ops::{Index, IndexMut};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::network::{EdgeId, EdgeIdx, RoadNetwork};

/// First and last vehicle class carried in a [`ClassShare`].
pub const FIRST_CLASS: u8 = 5;
pub const LAST_CLASS: u8 = 13;
pub const NUM_CLASSES: usize = (LAST_CLASS - FIRST_CLASS + 1) as usize;

/// Allowed deviation of a share vector's sum from 1.
pub const SIMPLEX_TOL: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum ShareError {
    #[error("class share component {index} = {value} outside [0, 1]")]
    OutOfRange { index: usize, value: f64 },
    #[error("class shares sum to {0}, expected 1")]
    BadSum(f64),
    #[error("all class counts are zero")]
    ZeroTotal,
}

/// Probability distribution over vehicle classes 5 through 13.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassShare([f64; NUM_CLASSES]);

impl ClassShare {
    /// Validates an already-normalized vector.
    pub fn new(p: [f64; NUM_CLASSES]) -> Result<Self, ShareError> {
        for (index, &value) in p.iter().enumerate() {
            if !(0.0..=1.0).contains(&value) {
                return Err(ShareError::OutOfRange { index, value });
            }
        }
        let sum: f64 = p.iter().sum();
        if (sum - 1.0).abs() > SIMPLEX_TOL {
            return Err(ShareError::BadSum(sum));
        }
        Ok(ClassShare(p))
    }

    /// Normalizes non-negative counts (or weights) into shares.
    pub fn from_counts(counts: &[f64; NUM_CLASSES]) -> Result<Self, ShareError> {
        if let Some((index, &value)) = counts
            .iter()
            .enumerate()
            .find(|(_, v)| !(v.is_finite() && **v >= 0.0))
        {
            return Err(ShareError::OutOfRange { index, value });
        }
        let total: f64 = counts.iter().sum();
        if total <= 0.0 {
            return Err(ShareError::ZeroTotal);
        }
        let mut p = [0.0; NUM_CLASSES];
        for (dst, c) in p.iter_mut().zip(counts) {
            *dst = c / total;
        }
        Ok(ClassShare(p))
    }

    pub fn uniform() -> Self {
        ClassShare([1.0 / NUM_CLASSES as f64; NUM_CLASSES])
    }

    /// All mass on a single vehicle class.
    pub fn one_hot(class: u8) -> Self {
        let mut p = [0.0; NUM_CLASSES];
        p[class_slot(class)] = 1.0;
        ClassShare(p)
    }

    /// Wraps a vector produced by a convex combination of valid shares.
    /// Divides by the component sum when float drift exceeds 1e-12.
    pub(crate) fn from_convex(mut p: [f64; NUM_CLASSES]) -> Self {
        let sum: f64 = p.iter().sum();
        if (sum - 1.0).abs() > 1e-12 && sum > 0.0 {
            p.iter_mut().for_each(|v| *v /= sum);
        }
        ClassShare(p)
    }

    pub fn as_array(&self) -> &[f64; NUM_CLASSES] {
        &self.0
    }

    /// Share of vehicle class `class` (5..=13).
    pub fn get(&self, class: u8) -> f64 {
        self.0[class_slot(class)]
    }

    pub fn sum(&self) -> f64 {
        self.0.iter().sum()
    }
}

fn class_slot(class: u8) -> usize {
    assert!(
        (FIRST_CLASS..=LAST_CLASS).contains(&class),
        "vehicle class {class} outside {FIRST_CLASS}..={LAST_CLASS}"
    );
    (class - FIRST_CLASS) as usize
}

/// Vehicle classes carried by [`ClassShare`], in slot order.
pub fn classes() -> impl Iterator<Item = u8> {
    FIRST_CLASS..=LAST_CLASS
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EdgeStatus {
    Observed,
    Imputed,
    Unset,
}

impl EdgeStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            EdgeStatus::Observed => "observed",
            EdgeStatus::Imputed => "imputed",
            EdgeStatus::Unset => "unset",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EdgeState {
    /// Truck AADT prior, vehicles/day.
    pub weight: Option<f64>,
    /// Vehicles/hour.
    pub volume: Option<f64>,
    pub class_share: Option<ClassShare>,
    pub status: EdgeStatus,
}

impl Default for EdgeState {
    fn default() -> Self {
        EdgeState {
            weight: None,
            volume: None,
            class_share: None,
            status: EdgeStatus::Unset,
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum StateError {
    #[error("unknown edge {0}")]
    UnknownEdge(EdgeId),
    #[error("observation on edge {0} carries neither volume nor class share")]
    EmptyObservation(EdgeId),
    #[error("invalid weight {weight} on edge {edge}")]
    BadWeight { edge: EdgeId, weight: f64 },
    #[error("invalid volume {volume} on edge {edge}")]
    BadVolume { edge: EdgeId, volume: f64 },
}

/// Edge states indexed by [`EdgeIdx`], parallel to a network's edge list.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct StateTable {
    states: Vec<EdgeState>,
}

impl StateTable {
    pub fn new(edge_count: usize) -> Self {
        StateTable {
            states: vec![EdgeState::default(); edge_count],
        }
    }

    pub fn for_network(net: &RoadNetwork) -> Self {
        Self::new(net.edge_count())
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (EdgeIdx, &EdgeState)> {
        self.states.iter().enumerate().map(|(i, s)| (EdgeIdx(i), s))
    }

    pub fn as_slice(&self) -> &[EdgeState] {
        &self.states
    }

    pub fn set_weight(&mut self, net: &RoadNetwork, e: EdgeIdx, weight: f64) -> Result<(), StateError> {
        if !(weight.is_finite() && weight >= 0.0) {
            return Err(StateError::BadWeight {
                edge: net.edge(e).id.clone(),
                weight,
            });
        }
        self.states[e.0].weight = Some(weight);
        Ok(())
    }

    /// Pins an edge to an observed value.
    pub fn observe(
        &mut self,
        net: &RoadNetwork,
        e: EdgeIdx,
        volume: Option<f64>,
        class_share: Option<ClassShare>,
    ) -> Result<(), StateError> {
        let id = || net.edge(e).id.clone();
        if volume.is_none() && class_share.is_none() {
            return Err(StateError::EmptyObservation(id()));
        }
        if let Some(v) = volume {
            if !(v.is_finite() && v >= 0.0) {
                return Err(StateError::BadVolume { edge: id(), volume: v });
            }
        }
        let s = &mut self.states[e.0];
        s.volume = volume;
        s.class_share = class_share;
        s.status = EdgeStatus::Observed;
        Ok(())
    }

    /// Returns an edge to the unset state, keeping its weight.
    pub fn clear(&mut self, e: EdgeIdx) {
        let s = &mut self.states[e.0];
        s.volume = None;
        s.class_share = None;
        s.status = EdgeStatus::Unset;
    }

    pub fn observed_count(&self) -> usize {
        self.states
            .iter()
            .filter(|s| s.status == EdgeStatus::Observed)
            .count()
    }

    pub fn count_status(&self, status: EdgeStatus) -> usize {
        self.states.iter().filter(|s| s.status == status).count()
    }
}

impl Index<EdgeIdx> for StateTable {
    type Output = EdgeState;
    fn index(&self, e: EdgeIdx) -> &EdgeState {
        &self.states[e.0]
    }
}

impl IndexMut<EdgeIdx> for StateTable {
    fn index_mut(&mut self, e: EdgeIdx) -> &mut EdgeState {
        &mut self.states[e.0]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn share_validation() {
        assert!(ClassShare::new([1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]).is_ok());
        assert!(matches!(
            ClassShare::new([0.5; NUM_CLASSES]),
            Err(ShareError::OutOfRange { .. }) | Err(ShareError::BadSum(_))
        ));
        assert!(matches!(
            ClassShare::new([0.1; NUM_CLASSES]),
            Err(ShareError::BadSum(_))
        ));
        assert_eq!(
            ClassShare::from_counts(&[0.0; NUM_CLASSES]),
            Err(ShareError::ZeroTotal)
        );
    }

    #[test]
    fn class_indexing() {
        let s = ClassShare::one_hot(9);
        assert_eq!(s.get(9), 1.0);
        assert_eq!(s.get(5), 0.0);
        assert_eq!(classes().count(), NUM_CLASSES);
    }

    #[test]
    #[should_panic]
    fn class_four_is_not_carried() {
        ClassShare::uniform().get(4);
    }

    proptest! {
        #[test]
        fn counts_normalize_onto_simplex(
            counts in proptest::array::uniform9(0.0f64..1e6),
            scale in 1e-3f64..1e3,
        ) {
            prop_assume!(counts.iter().sum::<f64>() > 0.0);
            let s = ClassShare::from_counts(&counts).unwrap();
            prop_assert!((s.sum() - 1.0).abs() <= SIMPLEX_TOL);
            let mut scaled = counts;
            scaled.iter_mut().for_each(|c| *c *= scale);
            let t = ClassShare::from_counts(&scaled).unwrap();
            for (a, b) in s.as_array().iter().zip(t.as_array()) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }

        #[test]
        fn convex_renormalization_lands_on_simplex(raw in proptest::array::uniform9(0.0f64..1.0)) {
            let sum: f64 = raw.iter().sum();
            prop_assume!(sum > 1e-6);
            let mut drifted = raw;
            drifted.iter_mut().for_each(|v| *v /= sum * (1.0 + 1e-7));
            let s = ClassShare::from_convex(drifted);
            prop_assert!((s.sum() - 1.0).abs() <= SIMPLEX_TOL);
        }
    }
}
