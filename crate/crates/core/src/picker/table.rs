use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::cache::fingerprint;
use crate::model::EventCluster;

use super::{Picker, PickerError, Prediction, PrefixState};

/// Precomputed predictions keyed by `fingerprint:prefix-digest`.
pub type ScoreTable = BTreeMap<String, Prediction>;

/// Canonical text form of a prefix: chained ids in order, comma separated,
/// with `;` closing each finished voice. A prefix sitting at a fresh voice
/// therefore ends in `;`.
pub fn prefix_digest(prefix: &PrefixState) -> String {
    let mut out = String::new();
    let mut last: Option<u32> = None;
    for (order, id) in prefix.chain() {
        match last {
            Some(l) if order == l + 1 => out.push(','),
            Some(_) => out.push(';'),
            None => {}
        }
        out.push_str(&id.to_string());
        last = Some(order);
    }
    if last.is_some_and(|l| prefix.tip > l + 1) {
        out.push(';');
    }
    out
}

pub fn table_key(fingerprint: &str, prefix: &PrefixState) -> String {
    format!("{fingerprint}:{}", prefix_digest(prefix))
}

/// Replays predictions from a score table, e.g. the dumped outputs of an
/// external model. Stored vectors are aligned with `cluster.elements`.
#[derive(Debug, Clone, Default)]
pub struct TablePicker {
    pub table: ScoreTable,
}

impl TablePicker {
    pub fn new(table: ScoreTable) -> Self {
        TablePicker { table }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, PickerError> {
        let text = fs::read_to_string(path)?;
        Ok(TablePicker { table: serde_json::from_str(&text)? })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), PickerError> {
        fs::write(path, serde_json::to_string_pretty(&self.table)?)?;
        Ok(())
    }

    pub fn insert(&mut self, cluster: &EventCluster, prefix: &PrefixState, prediction: Prediction) {
        self.table.insert(table_key(&fingerprint(cluster), prefix), prediction);
    }
}

impl Picker for TablePicker {
    fn predict(&self, cluster: &EventCluster, prefix: &PrefixState) -> Result<Prediction, PickerError> {
        prefix.check(cluster)?;
        let key = table_key(&fingerprint(cluster), prefix);
        self.table.get(&key).cloned().ok_or(PickerError::MissingPrediction(key))
    }
}
