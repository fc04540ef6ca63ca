//! The prediction contract queried at every Pass node, and its built-in
//! implementations.

mod oracle;
mod rule_based;
mod table;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::evaluator::is_candidate;
use crate::model::{
    is_probability_vector, ElemType, EventCluster, Predisposition, DIVISION_CLASSES, DOTS_CLASSES, PROB_TOLERANCE,
};
use crate::timebase::TimeWarp;

pub use oracle::OraclePicker;
pub use rule_based::{RuleBasedPicker, RuleConfig, TickAnchors};
pub use table::{prefix_digest, table_key, ScoreTable, TablePicker};

#[derive(Debug, Error)]
pub enum PickerError {
    #[error("prefix references unknown event id {0}")]
    UnknownId(u32),
    #[error("no prediction for prefix {0}")]
    MissingPrediction(String),
    #[error("malformed prediction: {0}")]
    Malformed(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Which elements are already chained, and the next order to assign.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct PrefixState {
    pub tip: u32,
    /// Event id to order; BOS (id 0) always maps to 0.
    pub fixed_orders: BTreeMap<u32, u32>,
}

impl PrefixState {
    /// Only BOS fixed, tip 1.
    pub fn initial() -> Self {
        PrefixState { tip: 1, fixed_orders: BTreeMap::from([(0, 0)]) }
    }

    /// Read the orders currently fixed on the cluster.
    pub fn from_cluster(cluster: &EventCluster, tip: u32) -> Self {
        let fixed_orders = cluster
            .elements
            .iter()
            .filter(|e| e.elem_type == ElemType::Bos || e.is_event())
            .filter_map(|e| e.order.map(|o| (e.id, o)))
            .collect();
        PrefixState { tip, fixed_orders }
    }

    /// The event that ends the voice in progress; `None` at a voice start.
    pub fn tail(&self) -> Option<u32> {
        if self.tip == 0 {
            return None;
        }
        let want = self.tip - 1;
        self.fixed_orders.iter().find(|(&id, &o)| o == want && id != 0).map(|(&id, _)| id)
    }

    pub fn is_fixed(&self, id: u32) -> bool {
        self.fixed_orders.contains_key(&id)
    }

    /// Fixed event ids (BOS excluded) sorted by order.
    pub fn chain(&self) -> Vec<(u32, u32)> {
        let mut v: Vec<(u32, u32)> =
            self.fixed_orders.iter().filter(|(&id, _)| id != 0).map(|(&id, &o)| (o, id)).collect();
        v.sort_unstable();
        v
    }

    pub fn check(&self, cluster: &EventCluster) -> Result<(), PickerError> {
        for &id in self.fixed_orders.keys() {
            if cluster.index_of(id).is_none() {
                return Err(PickerError::UnknownId(id));
            }
        }
        Ok(())
    }
}

/// Per-element posteriors returned with every query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ElementPrediction {
    pub division_vector: [f64; DIVISION_CLASSES],
    pub dots_vector: [f64; DOTS_CLASSES],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tick_estimate: Option<u32>,
    #[serde(default)]
    pub grace: f64,
    #[serde(default)]
    pub time_warped: f64,
    #[serde(default)]
    pub full_measure: f64,
    #[serde(default)]
    pub fake: f64,
    /// Explicit tuplet ratio; when absent a `timeWarped` flag above 0.5 means 2/3.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub time_warp: Option<TimeWarp>,
}

impl ElementPrediction {
    pub fn warp(&self) -> Option<TimeWarp> {
        match self.time_warp {
            Some(w) => Some(w),
            None if self.time_warped > 0.5 => Some(TimeWarp::TRIPLET),
            None => None,
        }
    }
}

impl From<&Predisposition> for ElementPrediction {
    fn from(p: &Predisposition) -> Self {
        ElementPrediction {
            division_vector: p.division_vector,
            dots_vector: p.dots_vector,
            tick_estimate: p.tick_estimate,
            grace: p.grace,
            time_warped: p.time_warped,
            full_measure: p.full_measure,
            fake: p.fake,
            time_warp: None,
        }
    }
}

/// One picker query result, aligned with `cluster.elements`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Prediction {
    pub successor: Vec<f64>,
    pub elements: Vec<ElementPrediction>,
}

impl Prediction {
    /// Check the contract: a probability vector with mass only on unfixed
    /// events and EOS, plus valid per-element posteriors.
    pub fn validate(&self, cluster: &EventCluster, prefix: &PrefixState) -> Result<(), PickerError> {
        let n = cluster.elements.len();
        if self.successor.len() != n || self.elements.len() != n {
            return Err(PickerError::Malformed(format!(
                "expected {n} entries, got {} successor / {} element",
                self.successor.len(),
                self.elements.len()
            )));
        }
        if !is_probability_vector(&self.successor) {
            return Err(PickerError::Malformed("successor is not a probability vector".into()));
        }
        for (e, &p) in cluster.elements.iter().zip(&self.successor) {
            let open = e.elem_type == ElemType::Eos || (e.is_event() && !prefix.is_fixed(e.id));
            if !open && p > PROB_TOLERANCE {
                return Err(PickerError::Malformed(format!("mass {p} on closed element {}", e.id)));
            }
        }
        for (e, ep) in cluster.elements.iter().zip(&self.elements) {
            if !is_probability_vector(&ep.division_vector) || !is_probability_vector(&ep.dots_vector) {
                return Err(PickerError::Malformed(format!("bad posterior on element {}", e.id)));
            }
        }
        Ok(())
    }

    /// Per-element posteriors copied from the cluster's predispositions.
    pub fn passthrough_elements(cluster: &EventCluster) -> Vec<ElementPrediction> {
        cluster.elements.iter().map(|e| ElementPrediction::from(&e.predisposition)).collect()
    }
}

/// Anything that can answer successor queries for a chain prefix.
pub trait Picker: Send + Sync {
    fn predict(&self, cluster: &EventCluster, prefix: &PrefixState) -> Result<Prediction, PickerError>;
}

impl<P: Picker + ?Sized> Picker for &P {
    fn predict(&self, cluster: &EventCluster, prefix: &PrefixState) -> Result<Prediction, PickerError> {
        (**self).predict(cluster, prefix)
    }
}

/// Open successor slots: unfixed candidate events plus EOS.
pub(crate) fn open_slots(cluster: &EventCluster, prefix: &PrefixState) -> Vec<bool> {
    cluster
        .elements
        .iter()
        .map(|e| e.elem_type == ElemType::Eos || (is_candidate(e) && !prefix.is_fixed(e.id)))
        .collect()
}

/// Normalize non-negative scores into a distribution; uniform over `mask`
/// when every score is zero.
pub(crate) fn normalize_scores(scores: &mut [f64], mask: &[bool]) {
    for (s, &m) in scores.iter_mut().zip(mask) {
        if !m || !s.is_finite() || *s < 0.0 {
            *s = 0.0;
        }
    }
    let total: f64 = scores.iter().sum();
    if total > 0.0 {
        scores.iter_mut().for_each(|s| *s /= total);
    } else {
        let k = mask.iter().filter(|&&m| m).count().max(1) as f64;
        for (s, &m) in scores.iter_mut().zip(mask) {
            *s = if m { 1.0 / k } else { 0.0 };
        }
    }
}
