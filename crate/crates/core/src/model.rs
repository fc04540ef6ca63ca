//! Domain types: event elements, clusters, measures and regulation solutions,
//! plus the JSON record types used on the wire.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::timebase::{TimeWarp, WHOLE};

/// Number of local attribute hints per event.
pub const FEATURE_DIMS: usize = 16;
/// Division classes 0 (whole) ..= 8 (256th).
pub const DIVISION_CLASSES: usize = 9;
/// Dot classes 0 ..= 2.
pub const DOTS_CLASSES: usize = 3;
/// Vertical distance between consecutive staff origins when none are given.
pub const DEFAULT_STAFF_PITCH: f64 = 10.0;
/// Tolerance for probability vectors summing to one.
pub const PROB_TOLERANCE: f64 = 1e-9;

/// Offsets of the feature blocks inside the 16-dim hint vector.
pub mod feature {
    pub const DIVISION: usize = 0; // 7 dims
    pub const DOTS: usize = 7; // 2 dims
    pub const BEAM: usize = 9; // Open, Continue, Close
    pub const STEM: usize = 12; // Up, Down
    pub const GRACE: usize = 14;
    pub const TREMOLO_CATCHER: usize = 15;
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("event {id} is on staff {staff}, which belongs to no staff group")]
    StaffNotInGroup { id: u32, staff: u32 },
    #[error("staff {0} appears in more than one staff group")]
    StaffInTwoGroups(u32),
    #[error("duplicate event id {0}")]
    DuplicateId(u32),
    #[error("event id must be positive")]
    ZeroId,
    #[error("bad time signature {0}/{1}")]
    TimeSignature(u32, u32),
    #[error("event {id} has non-event type {elem_type:?}")]
    NonEventType { id: u32, elem_type: ElemType },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum ElemType {
    Pad = 0,
    Bos = 1,
    Eos = 2,
    Chord = 3,
    Rest = 4,
}

impl ElemType {
    pub fn is_event(self) -> bool {
        matches!(self, ElemType::Chord | ElemType::Rest)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub enum Beam {
    #[default]
    None,
    Open,
    Continue,
    Close,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub enum StemDirection {
    #[default]
    None,
    Up,
    Down,
}

/// Regulation outcome code.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Status {
    #[default]
    Solved,
    Issue,
    Fatal,
}

impl Status {
    pub fn code(self) -> i8 {
        match self {
            Status::Solved => 0,
            Status::Issue => 1,
            Status::Fatal => -1,
        }
    }

    pub fn from_code(code: i8) -> Option<Self> {
        match code {
            0 => Some(Status::Solved),
            1 => Some(Status::Issue),
            -1 => Some(Status::Fatal),
            _ => None,
        }
    }
}

impl Serialize for Status {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_i8(self.code())
    }
}

impl<'de> Deserialize<'de> for Status {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let code = i8::deserialize(d)?;
        Status::from_code(code).ok_or_else(|| serde::de::Error::custom(format!("unknown status code {code}")))
    }
}

/// Upstream soft evidence for one element.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Predisposition {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tick_estimate: Option<u32>,
    pub division_vector: [f64; DIVISION_CLASSES],
    pub dots_vector: [f64; DOTS_CLASSES],
    #[serde(default)]
    pub grace: f64,
    #[serde(default)]
    pub time_warped: f64,
    #[serde(default)]
    pub full_measure: f64,
    #[serde(default)]
    pub fake: f64,
}

impl Default for Predisposition {
    fn default() -> Self {
        Predisposition {
            tick_estimate: None,
            division_vector: [1.0 / DIVISION_CLASSES as f64; DIVISION_CLASSES],
            dots_vector: [1.0 / DOTS_CLASSES as f64; DOTS_CLASSES],
            grace: 0.0,
            time_warped: 0.0,
            full_measure: 0.0,
            fake: 0.0,
        }
    }
}

impl Predisposition {
    /// Events flagged grace, full-measure or fake never enter voice chains.
    pub fn excluded(&self) -> bool {
        self.grace > 0.5 || self.full_measure > 0.5 || self.fake > 0.5
    }

    pub fn division_argmax(&self) -> u8 {
        argmax(&self.division_vector) as u8
    }

    pub fn dots_argmax(&self) -> u8 {
        argmax(&self.dots_vector) as u8
    }
}

/// Index of the largest entry; the lowest index wins ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

pub fn is_probability_vector(values: &[f64]) -> bool {
    values.iter().all(|&v| v >= 0.0 && v.is_finite()) && (values.iter().sum::<f64>() - 1.0).abs() <= PROB_TOLERANCE
}

/// Clamp negatives to zero and rescale to unit sum (uniform when empty).
/// Returns true when the vector had to change.
pub fn normalize_probabilities(values: &mut [f64]) -> bool {
    if is_probability_vector(values) {
        return false;
    }
    for v in values.iter_mut() {
        if !v.is_finite() || *v < 0.0 {
            *v = 0.0;
        }
    }
    let sum: f64 = values.iter().sum();
    if sum <= 0.0 {
        let u = 1.0 / values.len() as f64;
        values.iter_mut().for_each(|v| *v = u);
    } else {
        values.iter_mut().for_each(|v| *v /= sum);
    }
    true
}

/// One candidate element of a cluster: a sentinel or a chord/rest event.
#[derive(Debug, Clone, PartialEq)]
pub struct EventElement {
    pub id: u32,
    pub elem_type: ElemType,
    pub staff: u32,
    pub x: f64,
    pub pivot_x: f64,
    pub y1: f64,
    pub y2: f64,
    pub feature: [f64; FEATURE_DIMS],
    pub predisposition: Predisposition,
    // solution fields
    pub order: Option<u32>,
    pub tick: Option<u32>,
    pub division: Option<u8>,
    pub dots: Option<u8>,
    pub beam: Beam,
    pub stem_direction: StemDirection,
    pub grace: bool,
    pub time_warp: Option<TimeWarp>,
    pub full_measure: bool,
    pub fake: bool,
}

impl EventElement {
    fn sentinel(id: u32, elem_type: ElemType, x: f64) -> Self {
        EventElement {
            id,
            elem_type,
            staff: 0,
            x,
            pivot_x: x,
            y1: 0.0,
            y2: 0.0,
            feature: [0.0; FEATURE_DIMS],
            predisposition: Predisposition::default(),
            order: None,
            tick: None,
            division: None,
            dots: None,
            beam: Beam::None,
            stem_direction: StemDirection::None,
            grace: false,
            time_warp: None,
            full_measure: false,
            fake: false,
        }
    }

    pub fn bos(x: f64) -> Self {
        let mut e = Self::sentinel(0, ElemType::Bos, x);
        e.order = Some(0);
        e
    }

    pub fn eos(id: u32, x: f64) -> Self {
        Self::sentinel(id, ElemType::Eos, x)
    }

    /// A chord or rest event with empty solution fields.
    pub fn event(id: u32, elem_type: ElemType, staff: u32, x: f64, y1: f64, y2: f64) -> Self {
        let mut e = Self::sentinel(id, elem_type, x);
        e.staff = staff;
        e.y1 = y1;
        e.y2 = y2;
        e
    }

    pub fn is_event(&self) -> bool {
        self.elem_type.is_event()
    }

    pub fn clear_solution(&mut self) {
        self.order = if self.elem_type == ElemType::Bos { Some(0) } else { None };
        self.tick = None;
        self.division = None;
        self.dots = None;
        self.beam = Beam::None;
        self.stem_direction = StemDirection::None;
        self.grace = false;
        self.time_warp = None;
        self.full_measure = false;
        self.fake = false;
    }

    /// Beam hint: the strongest of Open/Continue/Close when above 0.5.
    pub fn beam_hint(&self) -> Beam {
        let block = &self.feature[feature::BEAM..feature::BEAM + 3];
        let i = argmax(block);
        if block[i] <= 0.5 {
            return Beam::None;
        }
        [Beam::Open, Beam::Continue, Beam::Close][i]
    }

    pub fn stem_hint(&self) -> StemDirection {
        let block = &self.feature[feature::STEM..feature::STEM + 2];
        let i = argmax(block);
        if block[i] <= 0.5 {
            return StemDirection::None;
        }
        [StemDirection::Up, StemDirection::Down][i]
    }

    /// Division class implied by the 7 division hint scores.
    pub fn division_hint(&self) -> u8 {
        argmax(&self.feature[feature::DIVISION..feature::DIVISION + 7]) as u8
    }

    /// Dot count implied by the two thresholded dot hints.
    pub fn dots_hint(&self) -> u8 {
        let d1 = self.feature[feature::DOTS] > 0.5;
        let d2 = self.feature[feature::DOTS + 1] > 0.5;
        match (d1, d2) {
            (true, true) => 2,
            (true, false) | (false, true) => 1,
            _ => 0,
        }
    }

    pub fn y_center(&self) -> f64 {
        0.5 * (self.y1 + self.y2)
    }
}

/// BOS + events + EOS for one staff group of one measure.
#[derive(Debug, Clone, PartialEq)]
pub struct EventCluster {
    pub elements: Vec<EventElement>,
    pub staff_group: usize,
    pub staves: Vec<u32>,
    pub measure_duration: u32,
    pub time8th: u32,
}

impl EventCluster {
    /// Wrap events with BOS/EOS sentinels. BOS gets id 0; EOS gets `max id + 1`.
    pub fn new(events: Vec<EventElement>, staff_group: usize, measure_duration: u32) -> Self {
        let (min_x, max_x) =
            events.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), e| (lo.min(e.x), hi.max(e.x)));
        let (min_x, max_x) = if events.is_empty() { (0.0, 0.0) } else { (min_x, max_x) };
        let eos_id = events.iter().map(|e| e.id).max().unwrap_or(0) + 1;
        let mut staves: Vec<u32> = events.iter().map(|e| e.staff).collect::<BTreeSet<_>>().into_iter().collect();
        staves.dedup();
        let mut elements = Vec::with_capacity(events.len() + 2);
        elements.push(EventElement::bos(min_x));
        elements.extend(events);
        elements.push(EventElement::eos(eos_id, max_x));
        EventCluster { elements, staff_group, staves, measure_duration, time8th: time8th_for(measure_duration) }
    }

    /// Number of non-sentinel events.
    pub fn n(&self) -> usize {
        self.elements.iter().filter(|e| e.is_event()).count()
    }

    pub fn eos_index(&self) -> usize {
        self.elements.len() - 1
    }

    pub fn events(&self) -> impl Iterator<Item = &EventElement> {
        self.elements.iter().filter(|e| e.is_event())
    }

    pub fn index_of(&self, id: u32) -> Option<usize> {
        self.elements.iter().position(|e| e.id == id)
    }

    pub fn event_x_range(&self) -> (f64, f64) {
        let mut it = self.events().map(|e| e.x);
        match it.next() {
            None => (0.0, 0.0),
            Some(first) => it.fold((first, first), |(lo, hi), x| (lo.min(x), hi.max(x))),
        }
    }
}

/// Measure duration in eighth notes, capped at 16.
pub fn time8th_for(duration: u32) -> u32 {
    (duration / (WHOLE / 8)).clamp(1, 16)
}

/// One rule violation found by [`validate_cluster`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub rule: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub id: Option<u32>,
}

impl Violation {
    fn new(rule: &'static str, id: Option<u32>) -> Self {
        Violation { rule, id }
    }
}

/// Check the structural invariants of a cluster. Empty means valid.
pub fn validate_cluster(cluster: &EventCluster) -> Vec<Violation> {
    let mut out = Vec::new();
    let elems = &cluster.elements;
    let bos_count = elems.iter().filter(|e| e.elem_type == ElemType::Bos).count();
    let eos_count = elems.iter().filter(|e| e.elem_type == ElemType::Eos).count();
    if bos_count == 0 {
        out.push(Violation::new("missing-bos", None));
    } else if bos_count > 1 || elems[0].elem_type != ElemType::Bos {
        out.push(Violation::new("misplaced-bos", None));
    }
    if eos_count == 0 {
        out.push(Violation::new("missing-eos", None));
    } else if eos_count > 1 || elems.last().map(|e| e.elem_type) != Some(ElemType::Eos) {
        out.push(Violation::new("misplaced-eos", None));
    }
    let mut seen = BTreeSet::new();
    for e in elems {
        if !seen.insert(e.id) {
            out.push(Violation::new("duplicate-id", Some(e.id)));
        }
        match e.elem_type {
            ElemType::Pad => out.push(Violation::new("bad-elem-type", Some(e.id))),
            ElemType::Bos | ElemType::Eos => {
                if e.division.is_some() || e.dots.is_some() || e.beam != Beam::None {
                    out.push(Violation::new("sentinel-attributes", Some(e.id)));
                }
                if e.elem_type == ElemType::Bos && e.order.is_some_and(|o| o != 0) {
                    out.push(Violation::new("bos-order", Some(e.id)));
                }
            }
            ElemType::Chord | ElemType::Rest => {
                if e.id == 0 {
                    out.push(Violation::new("zero-id", Some(e.id)));
                }
                if !is_probability_vector(&e.predisposition.division_vector)
                    || !is_probability_vector(&e.predisposition.dots_vector)
                {
                    out.push(Violation::new("probability-vector", Some(e.id)));
                }
                if let Some(w) = e.time_warp {
                    if w.validate().is_err() {
                        out.push(Violation::new("bad-timewarp", Some(e.id)));
                    }
                }
                if e.division.is_some_and(|d| d > 8) || e.dots.is_some_and(|d| d > 2) {
                    out.push(Violation::new("attribute-range", Some(e.id)));
                }
            }
        }
    }
    if cluster.measure_duration == 0 {
        out.push(Violation::new("zero-duration", None));
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimeSignature {
    #[serde(rename = "num", alias = "numerator")]
    pub numerator: u32,
    #[serde(rename = "den", alias = "denominator")]
    pub denominator: u32,
}

impl TimeSignature {
    pub fn new(numerator: u32, denominator: u32) -> Self {
        TimeSignature { numerator, denominator }
    }

    /// `numerator · 1920 / denominator`.
    pub fn duration(&self) -> u32 {
        self.numerator * WHOLE / self.denominator.max(1)
    }
}

/// A contextual (non-event) term such as a clef or key change.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ContextTerm {
    pub staff: u32,
    pub x: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kind: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tick: Option<u32>,
}

/// A measure decomposed into one cluster per non-empty staff group.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasureInstance {
    pub clusters: Vec<EventCluster>,
    pub measure_index: i64,
    pub time_signature: TimeSignature,
    pub duration: u32,
    pub context_terms: Vec<ContextTerm>,
    pub warnings: Vec<String>,
}

impl MeasureInstance {
    pub fn event_count(&self) -> usize {
        self.clusters.iter().map(|c| c.n()).sum()
    }

    pub fn events(&self) -> impl Iterator<Item = &EventElement> {
        self.clusters.iter().flat_map(|c| c.events())
    }
}

// ---------------------------------------------------------------------------
// Wire formats

/// Input event record of the cluster JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct EventInput {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<u32>,
    #[serde(rename = "type")]
    pub elem_type: ElemType,
    pub staff: u32,
    pub x: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pivot_x: Option<f64>,
    pub y1: f64,
    pub y2: f64,
    #[serde(default = "zero_feature")]
    pub feature: [f64; FEATURE_DIMS],
    #[serde(default)]
    pub predisposition: Predisposition,
}

fn zero_feature() -> [f64; FEATURE_DIMS] {
    [0.0; FEATURE_DIMS]
}

/// Top-level cluster JSON: one measure with its staff grouping and events.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct MeasureInput {
    #[serde(default)]
    pub measure_index: i64,
    pub time_signature: TimeSignature,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub duration: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub time8th: Option<u32>,
    pub staff_groups: Vec<Vec<u32>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub staff_origins: Option<Vec<f64>>,
    pub events: Vec<EventInput>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub context_terms: Vec<ContextTerm>,
}

fn staff_origin(origins: Option<&Vec<f64>>, staff: u32) -> f64 {
    origins.and_then(|o| o.get(staff as usize).copied()).unwrap_or(staff as f64 * DEFAULT_STAFF_PITCH)
}

/// Partition a raw measure into per-staff-group clusters.
///
/// Ids are assigned `1..=n` in input order when absent. y coordinates are
/// re-expressed relative to the top staff of each group; x is unchanged.
pub fn split_measure(input: &MeasureInput) -> Result<MeasureInstance, ModelError> {
    let ts = input.time_signature;
    if ts.numerator == 0 || ts.denominator == 0 {
        return Err(ModelError::TimeSignature(ts.numerator, ts.denominator));
    }
    let mut warnings = Vec::new();
    let duration = input.duration.unwrap_or_else(|| ts.duration());
    if duration != ts.duration() {
        warnings.push(format!(
            "measure duration {duration} differs from time signature {}/{} ({})",
            ts.numerator,
            ts.denominator,
            ts.duration()
        ));
    }

    let mut group_of: HashMap<u32, usize> = HashMap::new();
    for (g, staves) in input.staff_groups.iter().enumerate() {
        for &s in staves {
            if group_of.insert(s, g).is_some() {
                return Err(ModelError::StaffInTwoGroups(s));
            }
        }
    }

    let mut seen = BTreeSet::new();
    let mut per_group: Vec<Vec<EventElement>> = vec![Vec::new(); input.staff_groups.len()];
    for (i, ev) in input.events.iter().enumerate() {
        let id = ev.id.unwrap_or(i as u32 + 1);
        if id == 0 {
            return Err(ModelError::ZeroId);
        }
        if !seen.insert(id) {
            return Err(ModelError::DuplicateId(id));
        }
        let g = *group_of.get(&ev.staff).ok_or(ModelError::StaffNotInGroup { id, staff: ev.staff })?;
        let top = *input.staff_groups[g].iter().min().expect("group holding an event is non-empty");
        let origin = staff_origin(input.staff_origins.as_ref(), top);
        let mut e = EventElement::event(id, ev.elem_type, ev.staff, ev.x, ev.y1 - origin, ev.y2 - origin);
        e.pivot_x = ev.pivot_x.unwrap_or(ev.x);
        e.feature = ev.feature;
        e.predisposition = ev.predisposition.clone();
        if !ev.elem_type.is_event() {
            return Err(ModelError::NonEventType { id, elem_type: ev.elem_type });
        }
        if normalize_probabilities(&mut e.predisposition.division_vector)
            | normalize_probabilities(&mut e.predisposition.dots_vector)
        {
            warnings.push(format!("event {id}: probability vector renormalized"));
        }
        per_group[g].push(e);
    }

    let clusters = per_group
        .into_iter()
        .enumerate()
        .filter(|(_, events)| !events.is_empty())
        .map(|(g, events)| {
            let mut c = EventCluster::new(events, g, duration);
            c.staves = input.staff_groups[g].clone();
            c.staves.sort_unstable();
            if let Some(t8) = input.time8th {
                c.time8th = t8.clamp(1, 16);
            }
            c
        })
        .collect();

    Ok(MeasureInstance {
        clusters,
        measure_index: input.measure_index,
        time_signature: ts,
        duration,
        context_terms: input.context_terms.clone(),
        warnings,
    })
}

/// Final per-event attributes of a regulated measure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct EventAssignment {
    pub id: u32,
    pub tick: Option<u32>,
    pub division: Option<u8>,
    pub dots: Option<u8>,
    #[serde(default)]
    pub beam: Beam,
    #[serde(default)]
    pub stem_direction: StemDirection,
    #[serde(default)]
    pub grace: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub time_warp: Option<TimeWarp>,
    #[serde(default)]
    pub full_measure: bool,
    #[serde(default)]
    pub fake: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub staff: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x: Option<f64>,
}

impl EventAssignment {
    pub fn from_element(e: &EventElement) -> Self {
        EventAssignment {
            id: e.id,
            tick: e.tick,
            division: e.division,
            dots: e.dots,
            beam: e.beam,
            stem_direction: e.stem_direction,
            grace: e.grace,
            time_warp: e.time_warp,
            full_measure: e.full_measure,
            fake: e.fake,
            staff: Some(e.staff),
            x: Some(e.x),
        }
    }

    /// Effective duration in (possibly fractional) ticks, when division is known.
    pub fn duration(&self) -> Option<crate::timebase::TickRatio> {
        let division = self.division?;
        crate::timebase::effective_duration(division, self.dots.unwrap_or(0), self.time_warp).ok()
    }
}

/// Dense boolean matrix over event ids: `get(i, j)` is true iff `j`
/// immediately precedes `i` in some voice.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Adjacency {
    ids: Vec<u32>,
    bits: Vec<bool>,
}

impl Adjacency {
    pub fn from_voices(ids: &[u32], voices: &[Vec<u32>]) -> Self {
        let mut ids = ids.to_vec();
        ids.sort_unstable();
        ids.dedup();
        let n = ids.len();
        let mut bits = vec![false; n * n];
        let pos = |id: u32| ids.binary_search(&id).ok();
        for voice in voices {
            for pair in voice.windows(2) {
                if let (Some(j), Some(i)) = (pos(pair[0]), pos(pair[1])) {
                    bits[i * n + j] = true;
                }
            }
        }
        Adjacency { ids, bits }
    }

    pub fn ids(&self) -> &[u32] {
        &self.ids
    }

    pub fn get(&self, i: u32, j: u32) -> bool {
        let n = self.ids.len();
        match (self.ids.binary_search(&i), self.ids.binary_search(&j)) {
            (Ok(a), Ok(b)) => self.bits[a * n + b],
            _ => false,
        }
    }

    /// All `(i, j)` pairs with `H[i][j]` set.
    pub fn edges(&self) -> Vec<(u32, u32)> {
        let n = self.ids.len();
        let mut out = Vec::new();
        for a in 0..n {
            for b in 0..n {
                if self.bits[a * n + b] {
                    out.push((self.ids[a], self.ids[b]));
                }
            }
        }
        out
    }
}

/// Regulated structure of one measure; also the JSON solution record. The
/// adjacency matrix is derived, so it is rebuilt on deserialization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", from = "SolutionRecord")]
pub struct RegulationSolution {
    #[serde(default)]
    pub measure_index: i64,
    pub voices: Vec<Vec<u32>>,
    pub duration: u32,
    #[serde(default)]
    pub status: Status,
    pub events: Vec<EventAssignment>,
    #[serde(skip)]
    pub adjacency: Adjacency,
}

#[derive(Deserialize)]
#[serde(rename_all = "camelCase")]
struct SolutionRecord {
    #[serde(default)]
    measure_index: i64,
    voices: Vec<Vec<u32>>,
    duration: u32,
    #[serde(default)]
    status: Status,
    events: Vec<EventAssignment>,
}

impl From<SolutionRecord> for RegulationSolution {
    fn from(r: SolutionRecord) -> Self {
        let mut s = RegulationSolution {
            measure_index: r.measure_index,
            voices: r.voices,
            duration: r.duration,
            status: r.status,
            events: r.events,
            adjacency: Adjacency::default(),
        };
        s.rebuild_adjacency();
        s
    }
}

impl RegulationSolution {
    pub fn event(&self, id: u32) -> Option<&EventAssignment> {
        self.events.iter().find(|e| e.id == id)
    }

    pub fn event_mut(&mut self, id: u32) -> Option<&mut EventAssignment> {
        self.events.iter_mut().find(|e| e.id == id)
    }

    pub fn event_map(&self) -> BTreeMap<u32, &EventAssignment> {
        self.events.iter().map(|e| (e.id, e)).collect()
    }

    pub fn rebuild_adjacency(&mut self) {
        let ids: Vec<u32> = self.events.iter().map(|e| e.id).collect();
        self.adjacency = Adjacency::from_voices(&ids, &self.voices);
    }

    /// Structural invariant check: no id in two voices, ticks strictly
    /// increasing inside each voice. Returns human-readable problems.
    pub fn invariant_problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        let mut seen = BTreeSet::new();
        let map = self.event_map();
        for (v, voice) in self.voices.iter().enumerate() {
            let mut last: Option<u32> = None;
            for &id in voice {
                if !seen.insert(id) {
                    out.push(format!("event {id} appears in more than one voice"));
                }
                match map.get(&id).and_then(|e| e.tick) {
                    Some(t) => {
                        if last.is_some_and(|l| t <= l) {
                            out.push(format!("voice {v}: tick of event {id} does not increase"));
                        }
                        last = Some(t);
                    }
                    None => out.push(format!("voice {v}: event {id} has no tick")),
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn event(id: u32, staff: u32, x: f64) -> EventInput {
        EventInput {
            id: Some(id),
            elem_type: ElemType::Chord,
            staff,
            x,
            pivot_x: None,
            y1: staff as f64 * DEFAULT_STAFF_PITCH + 1.0,
            y2: staff as f64 * DEFAULT_STAFF_PITCH + 2.0,
            feature: [0.0; FEATURE_DIMS],
            predisposition: Predisposition::default(),
        }
    }

    fn measure(events: Vec<EventInput>, groups: Vec<Vec<u32>>) -> MeasureInput {
        MeasureInput {
            measure_index: 0,
            time_signature: TimeSignature::new(4, 4),
            duration: None,
            time8th: None,
            staff_groups: groups,
            staff_origins: None,
            events,
            context_terms: vec![],
        }
    }

    fn three_event_cluster() -> EventCluster {
        let events = (1..=3).map(|i| EventElement::event(i, ElemType::Chord, 0, i as f64 * 3.0, 1.0, 2.0)).collect();
        EventCluster::new(events, 0, 1920)
    }

    #[test]
    fn valid_cluster_has_no_violations() {
        assert!(validate_cluster(&three_event_cluster()).is_empty());
    }

    #[test]
    fn missing_eos_is_reported() {
        let mut c = three_event_cluster();
        c.elements.pop();
        let v = validate_cluster(&c);
        assert_eq!(v, vec![Violation { rule: "missing-eos", id: None }]);
    }

    #[test]
    fn duplicate_id_is_reported() {
        let events = [1, 2, 4, 4]
            .iter()
            .enumerate()
            .map(|(i, &id)| EventElement::event(id, ElemType::Chord, 0, i as f64, 1.0, 2.0))
            .collect();
        let v = validate_cluster(&EventCluster::new(events, 0, 1920));
        assert_eq!(v, vec![Violation { rule: "duplicate-id", id: Some(4) }]);
    }

    #[test]
    fn sentinel_attributes_are_rejected() {
        let mut c = three_event_cluster();
        c.elements[0].division = Some(2);
        let v = validate_cluster(&c);
        assert_eq!(v[0].rule, "sentinel-attributes");
    }

    #[test]
    fn split_by_staff_group() {
        let events: Vec<_> = (1..=10).map(|i| event(i, i % 2, i as f64)).collect();
        let m = split_measure(&measure(events, vec![vec![0], vec![1]])).unwrap();
        assert_eq!(m.clusters.len(), 2);
        assert_eq!(m.clusters[0].n(), 5);
        assert_eq!(m.clusters[1].n(), 5);
        // staff 1 re-expressed in its own frame
        let e = m.clusters[1].events().next().unwrap();
        assert!((e.y1 - 1.0).abs() < 1e-12);
        assert_eq!(m.duration, 1920);
    }

    #[test]
    fn grand_staff_is_one_cluster() {
        let events: Vec<_> = (1..=10).map(|i| event(i, i % 2, i as f64)).collect();
        let m = split_measure(&measure(events, vec![vec![0, 1]])).unwrap();
        assert_eq!(m.clusters.len(), 1);
        assert_eq!(m.clusters[0].n(), 10);
        // staff 1 keeps its offset below the group's top staff
        let e = m.clusters[0].events().find(|e| e.staff == 1).unwrap();
        assert!((e.y1 - 11.0).abs() < 1e-12);
    }

    #[test]
    fn empty_group_emits_no_cluster() {
        let events: Vec<_> = (1..=4).map(|i| event(i, 0, i as f64)).collect();
        let m = split_measure(&measure(events, vec![vec![0], vec![1], vec![2]])).unwrap();
        assert_eq!(m.clusters.len(), 1);
    }

    #[test]
    fn staff_outside_groups_is_rejected() {
        let events = vec![event(1, 0, 1.0), event(2, 3, 2.0)];
        let err = split_measure(&measure(events, vec![vec![0]])).unwrap_err();
        assert_eq!(err, ModelError::StaffNotInGroup { id: 2, staff: 3 });
    }

    #[test]
    fn ids_assigned_in_input_order() {
        let mut events: Vec<_> = (1..=3).map(|i| event(i, 0, i as f64)).collect();
        events.iter_mut().for_each(|e| e.id = None);
        let m = split_measure(&measure(events, vec![vec![0]])).unwrap();
        let ids: Vec<u32> = m.clusters[0].elements.iter().map(|e| e.id).collect();
        assert_eq!(ids, vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn noisy_probabilities_are_renormalized_with_warning() {
        let mut e = event(1, 0, 1.0);
        e.predisposition.division_vector = [2.0, 0.0, 2.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0];
        let m = split_measure(&measure(vec![e], vec![vec![0]])).unwrap();
        let p = &m.clusters[0].elements[1].predisposition;
        assert!(is_probability_vector(&p.division_vector));
        assert_eq!(m.warnings.len(), 1);
    }

    #[test]
    fn adjacency_from_voices() {
        let h = Adjacency::from_voices(&[1, 2, 3, 4], &[vec![1, 2, 4], vec![3]]);
        assert!(h.get(2, 1));
        assert!(h.get(4, 2));
        assert!(!h.get(1, 2));
        assert!(!h.get(3, 2));
        assert_eq!(h.edges(), vec![(2, 1), (4, 2)]);
    }

    #[test]
    fn status_codes_round_trip() {
        for s in [Status::Solved, Status::Issue, Status::Fatal] {
            let j = serde_json::to_string(&s).unwrap();
            assert_eq!(serde_json::from_str::<Status>(&j).unwrap(), s);
        }
        assert_eq!(serde_json::to_string(&Status::Fatal).unwrap(), "-1");
    }
}
