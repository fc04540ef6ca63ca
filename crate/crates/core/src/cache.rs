//! Solution cache keyed by a structural fingerprint of the measure, so a
//! repeated measure reuses its solution wherever it appears.

use std::collections::BTreeMap;
use std::fs::{self, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::model::{EventCluster, EventElement, MeasureInstance, RegulationSolution};
use crate::quality::evaluate_measure;

/// Geometry quanta, in staff spaces.
pub const X_QUANTUM: f64 = 0.25;
pub const Y_QUANTUM: f64 = 0.5;

#[derive(Debug, Error)]
pub enum CacheError {
    #[error("automatic solution is not fine; not cached")]
    NotFine,
    #[error("solution does not cover the measure's events")]
    Mismatch,
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("cache line {line}: {source}")]
    Parse { line: usize, source: serde_json::Error },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

fn quantize(v: f64, q: f64) -> i64 {
    (v / q).round() as i64
}

fn canonical_order(events: &mut [&EventElement]) {
    events.sort_by(|a, b| {
        a.staff.cmp(&b.staff).then(a.x.total_cmp(&b.x)).then(a.y1.total_cmp(&b.y1)).then(a.id.cmp(&b.id))
    });
}

/// Stable digest over types, staves, quantized geometry, hint argmaxes and
/// the measure context. Ids, indices and raw probabilities do not enter.
pub fn fingerprint(cluster: &EventCluster) -> String {
    let mut events: Vec<&EventElement> = cluster.events().collect();
    canonical_order(&mut events);
    let mut h = Sha256::new();
    h.update(format!("d{};t{};", cluster.measure_duration, cluster.time8th));
    for e in events {
        h.update(format!(
            "{:?},{},{},{},{},{},{},{:?},{:?},{};",
            e.elem_type,
            e.staff,
            quantize(e.x, X_QUANTUM),
            quantize(e.y1, Y_QUANTUM),
            quantize(e.y2, Y_QUANTUM),
            e.division_hint(),
            e.dots_hint(),
            e.beam_hint(),
            e.stem_hint(),
            (e.feature[crate::model::feature::GRACE] > 0.5) as u8,
        ));
    }
    hex::encode(h.finalize())
}

/// Key of a whole measure: the digest of its cluster fingerprints.
pub fn measure_key(measure: &MeasureInstance) -> String {
    let mut h = Sha256::new();
    h.update(format!("D{};", measure.duration));
    for c in &measure.clusters {
        h.update(fingerprint(c));
        h.update(";");
    }
    hex::encode(h.finalize())
}

/// Event ids of the measure in canonical order; position + 1 is the
/// canonical id used inside stored solutions.
pub fn canonical_ids(measure: &MeasureInstance) -> Vec<u32> {
    let mut out = Vec::new();
    for c in &measure.clusters {
        let mut events: Vec<&EventElement> = c.events().collect();
        canonical_order(&mut events);
        out.extend(events.iter().map(|e| e.id));
    }
    out
}

/// Rewrite every id of `solution` through `map`; `None` if an id is unmapped.
fn remap(solution: &RegulationSolution, map: &BTreeMap<u32, u32>) -> Option<RegulationSolution> {
    let mut out = solution.clone();
    for v in &mut out.voices {
        for id in v.iter_mut() {
            *id = *map.get(id)?;
        }
    }
    for e in &mut out.events {
        e.id = *map.get(&e.id)?;
    }
    out.events.sort_by_key(|e| e.id);
    out.rebuild_adjacency();
    Some(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Provenance {
    #[serde(rename = "auto-fine")]
    AutoFine,
    #[serde(rename = "human")]
    Human,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheEntry {
    pub key: String,
    pub provenance: Provenance,
    pub solution: RegulationSolution,
    pub timestamp: u64,
}

/// In-memory view of an append-only JSON-lines cache file.
#[derive(Debug, Default)]
pub struct SolutionCache {
    path: Option<PathBuf>,
    entries: BTreeMap<(String, Provenance), CacheEntry>,
}

impl SolutionCache {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Load `path` if it exists; later puts are appended to it.
    pub fn open(path: impl AsRef<Path>) -> Result<Self, CacheError> {
        let path = path.as_ref().to_path_buf();
        let mut cache = SolutionCache { path: Some(path.clone()), entries: BTreeMap::new() };
        if path.exists() {
            let reader = BufReader::new(fs::File::open(&path)?);
            for (i, line) in reader.lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let entry: CacheEntry =
                    serde_json::from_str(&line).map_err(|source| CacheError::Parse { line: i + 1, source })?;
                cache.entries.insert((entry.key.clone(), entry.provenance), entry);
            }
        }
        Ok(cache)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Highest-provenance entry for `key`.
    pub fn get(&self, key: &str) -> Option<&CacheEntry> {
        [Provenance::Human, Provenance::AutoFine].iter().find_map(|&p| self.entries.get(&(key.to_string(), p)))
    }

    /// Store a solution under `key`. Automatic solutions must be fine.
    pub fn put(&mut self, key: &str, solution: RegulationSolution, provenance: Provenance) -> Result<(), CacheError> {
        if provenance == Provenance::AutoFine && !evaluate_measure(&solution).fine {
            return Err(CacheError::NotFine);
        }
        let timestamp = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
        let entry = CacheEntry { key: key.to_string(), provenance, solution, timestamp };
        if let Some(path) = &self.path {
            let mut f = OpenOptions::new().create(true).append(true).open(path)?;
            writeln!(f, "{}", serde_json::to_string(&entry)?)?;
        }
        self.entries.insert((entry.key.clone(), provenance), entry);
        Ok(())
    }

    /// Cached solution for `measure`, with ids mapped onto its events.
    pub fn lookup(&self, measure: &MeasureInstance) -> Option<RegulationSolution> {
        let entry = self.get(&measure_key(measure))?;
        let map: BTreeMap<u32, u32> =
            canonical_ids(measure).into_iter().enumerate().map(|(i, id)| (i as u32 + 1, id)).collect();
        let mut s = remap(&entry.solution, &map)?;
        s.measure_index = measure.measure_index;
        Some(s)
    }

    /// Store `solution` for `measure` under canonical ids.
    pub fn store(
        &mut self,
        measure: &MeasureInstance,
        solution: &RegulationSolution,
        provenance: Provenance,
    ) -> Result<(), CacheError> {
        let map: BTreeMap<u32, u32> =
            canonical_ids(measure).into_iter().enumerate().map(|(i, id)| (id, i as u32 + 1)).collect();
        let canonical = remap(solution, &map).ok_or(CacheError::Mismatch)?;
        self.put(&measure_key(measure), canonical, provenance)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::baselines::greedy_regulate;
    use crate::model::{feature, ElemType, Status, TimeSignature};

    fn ev(id: u32, x: f64, division: u8) -> EventElement {
        let mut e = EventElement::event(id, ElemType::Chord, 0, x, 1.0, 2.0);
        e.feature[feature::DIVISION + division as usize] = 1.0;
        e
    }

    fn measure(events: Vec<EventElement>, index: i64) -> MeasureInstance {
        MeasureInstance {
            clusters: vec![EventCluster::new(events, 0, 1440)],
            measure_index: index,
            time_signature: TimeSignature::new(3, 4),
            duration: 1440,
            context_terms: vec![],
            warnings: vec![],
        }
    }

    fn events() -> Vec<EventElement> {
        vec![ev(1, 1.0, 2), ev(2, 5.0, 2), ev(3, 9.0, 2)]
    }

    #[test]
    fn key_ignores_index_and_ids() {
        let a = measure(events(), 3);
        let b = measure(vec![ev(7, 9.0, 2), ev(5, 1.0, 2), ev(6, 5.0, 2)], 40);
        assert_eq!(measure_key(&a), measure_key(&b));
        assert_eq!(fingerprint(&a.clusters[0]), fingerprint(&b.clusters[0]));
    }

    #[test]
    fn key_tracks_hints_and_quantized_geometry() {
        let base = fingerprint(&EventCluster::new(events(), 0, 1440));
        let mut flipped = events();
        flipped[1].feature[feature::DIVISION + 2] = 0.0;
        flipped[1].feature[feature::DIVISION + 3] = 1.0;
        assert_ne!(base, fingerprint(&EventCluster::new(flipped, 0, 1440)));
        let mut nudged = events();
        nudged[0].x += 0.1;
        assert_eq!(base, fingerprint(&EventCluster::new(nudged, 0, 1440)));
    }

    #[test]
    fn gate_and_shadowing() {
        let m = measure(events(), 0);
        let good = greedy_regulate(&m);
        assert_eq!(good.status, Status::Solved);
        let mut bad = good.clone();
        bad.event_mut(2).unwrap().tick = Some(100);
        let mut cache = SolutionCache::in_memory();
        assert!(cache.get("k").is_none());
        assert!(matches!(cache.put("k", bad.clone(), Provenance::AutoFine), Err(CacheError::NotFine)));
        cache.put("k", good.clone(), Provenance::AutoFine).unwrap();
        cache.put("k", bad.clone(), Provenance::Human).unwrap();
        let hit = cache.get("k").unwrap();
        assert_eq!(hit.provenance, Provenance::Human);
        assert_eq!(hit.solution, bad);
    }

    #[test]
    fn lookup_remaps_ids_and_persists() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cache.jsonl");
        let a = measure(events(), 1);
        let sol = greedy_regulate(&a);
        {
            let mut cache = SolutionCache::open(&path).unwrap();
            cache.store(&a, &sol, Provenance::AutoFine).unwrap();
        }
        let cache = SolutionCache::open(&path).unwrap();
        assert_eq!(cache.len(), 1);
        let b = measure(vec![ev(7, 9.0, 2), ev(5, 1.0, 2), ev(6, 5.0, 2)], 9);
        let hit = cache.lookup(&b).unwrap();
        assert_eq!(hit.voices, vec![vec![5, 6, 7]]);
        assert_eq!(hit.measure_index, 9);
        assert_eq!(hit.event(7).unwrap().tick, Some(960));
    }
}
