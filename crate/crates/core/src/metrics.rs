//! Golden comparison: per-field event error rates, tick RMSE and the
//! measure tiers perfect / voice match / tick exact.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::model::{EventAssignment, RegulationSolution};

/// Tick differences up to this many ticks still count as a match.
pub const TICK_TOLERANCE: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum Field {
    Tick,
    Division,
    Dots,
    Beam,
    TimeWarp,
    StemDirection,
    Grace,
}

impl Field {
    /// The five per-field metrics that make up the default any-field set.
    pub const CORE: [Field; 5] = [Field::Tick, Field::Division, Field::Dots, Field::Beam, Field::TimeWarp];

    fn matches(self, pred: &EventAssignment, gold: &EventAssignment) -> bool {
        match self {
            Field::Tick => match (pred.tick, gold.tick) {
                (Some(p), Some(g)) => p.abs_diff(g) <= TICK_TOLERANCE,
                (None, None) => true,
                _ => false,
            },
            Field::Division => pred.division == gold.division,
            Field::Dots => pred.dots.unwrap_or(0) == gold.dots.unwrap_or(0),
            Field::Beam => pred.beam == gold.beam,
            Field::TimeWarp => match (pred.time_warp, gold.time_warp) {
                (Some(p), Some(g)) => p.ratio() == g.ratio(),
                (p, g) => p.is_none() && g.is_none(),
            },
            Field::StemDirection => pred.stem_direction == gold.stem_direction,
            Field::Grace => pred.grace == gold.grace,
        }
    }
}

/// Which fields make an event count as wrong.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", default)]
pub struct CompareConfig {
    pub fields: Vec<Field>,
}

impl Default for CompareConfig {
    fn default() -> Self {
        CompareConfig { fields: Field::CORE.to_vec() }
    }
}

/// Raw counts; rates are derived so that corpora can be pooled.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct EventCounts {
    /// Gold events (the denominator).
    pub total: usize,
    /// Gold events absent from the prediction.
    pub missing: usize,
    pub wrong_tick: usize,
    pub wrong_division: usize,
    pub wrong_dots: usize,
    pub wrong_beam: usize,
    pub wrong_time_warp: usize,
    pub wrong_any: usize,
    /// Events contributing to the RMSE, and their summed squared error.
    pub tick_pairs: usize,
    pub tick_sq_error: f64,
}

impl EventCounts {
    fn rate(&self, n: usize) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            n as f64 / self.total as f64
        }
    }

    pub fn tick_error(&self) -> f64 {
        self.rate(self.wrong_tick)
    }
    pub fn division_error(&self) -> f64 {
        self.rate(self.wrong_division)
    }
    pub fn dots_error(&self) -> f64 {
        self.rate(self.wrong_dots)
    }
    pub fn beam_error(&self) -> f64 {
        self.rate(self.wrong_beam)
    }
    pub fn time_warp_error(&self) -> f64 {
        self.rate(self.wrong_time_warp)
    }
    pub fn any_field_error(&self) -> f64 {
        self.rate(self.wrong_any)
    }

    pub fn tick_rmse(&self) -> f64 {
        if self.tick_pairs == 0 {
            0.0
        } else {
            (self.tick_sq_error / self.tick_pairs as f64).sqrt()
        }
    }

    pub fn add(&mut self, o: &EventCounts) {
        self.total += o.total;
        self.missing += o.missing;
        self.wrong_tick += o.wrong_tick;
        self.wrong_division += o.wrong_division;
        self.wrong_dots += o.wrong_dots;
        self.wrong_beam += o.wrong_beam;
        self.wrong_time_warp += o.wrong_time_warp;
        self.wrong_any += o.wrong_any;
        self.tick_pairs += o.tick_pairs;
        self.tick_sq_error += o.tick_sq_error;
    }
}

/// Match events by id against the gold events. Extra predicted events are
/// ignored; missing ones count as wrong in every field.
pub fn compare_events(pred: &RegulationSolution, gold: &RegulationSolution, config: &CompareConfig) -> EventCounts {
    let pred_map = pred.event_map();
    let mut c = EventCounts { total: gold.events.len(), ..Default::default() };
    for g in &gold.events {
        let Some(p) = pred_map.get(&g.id) else {
            c.missing += 1;
            c.wrong_tick += 1;
            c.wrong_division += 1;
            c.wrong_dots += 1;
            c.wrong_beam += 1;
            c.wrong_time_warp += 1;
            c.wrong_any += 1;
            continue;
        };
        let wrong = |f: Field| !f.matches(p, g);
        c.wrong_tick += wrong(Field::Tick) as usize;
        c.wrong_division += wrong(Field::Division) as usize;
        c.wrong_dots += wrong(Field::Dots) as usize;
        c.wrong_beam += wrong(Field::Beam) as usize;
        c.wrong_time_warp += wrong(Field::TimeWarp) as usize;
        c.wrong_any += config.fields.iter().any(|&f| wrong(f)) as usize;
        if let (Some(pt), Some(gt)) = (p.tick, g.tick) {
            c.tick_pairs += 1;
            c.tick_sq_error += (pt as f64 - gt as f64).powi(2);
        }
    }
    c
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct MeasureTiers {
    pub perfect: bool,
    pub voice_match: bool,
    pub tick_exact: bool,
}

/// Voices compared as a multiset of ordered id sequences.
pub fn voices_match(a: &[Vec<u32>], b: &[Vec<u32>]) -> bool {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort();
    b.sort();
    a == b
}

pub fn compare_measure(pred: &RegulationSolution, gold: &RegulationSolution, config: &CompareConfig) -> MeasureTiers {
    let voice_match = voices_match(&pred.voices, &gold.voices);
    let pred_map = pred.event_map();
    let ticks_equal = gold.events.iter().all(|g| pred_map.get(&g.id).is_some_and(|p| p.tick == g.tick));
    let tick_exact = voice_match && ticks_equal;
    let perfect = tick_exact && compare_events(pred, gold, config).wrong_any == 0;
    MeasureTiers { perfect, voice_match, tick_exact }
}

/// Pooled metrics over a corpus of measures.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct CorpusMetrics {
    pub measures: usize,
    pub perfect: usize,
    pub voice_match: usize,
    pub tick_exact: usize,
    pub events: EventCounts,
}

impl CorpusMetrics {
    pub fn add(
        &mut self,
        pred: &RegulationSolution,
        gold: &RegulationSolution,
        config: &CompareConfig,
    ) -> MeasureTiers {
        let tiers = compare_measure(pred, gold, config);
        self.measures += 1;
        self.perfect += tiers.perfect as usize;
        self.voice_match += tiers.voice_match as usize;
        self.tick_exact += tiers.tick_exact as usize;
        self.events.add(&compare_events(pred, gold, config));
        tiers
    }

    fn pct(&self, n: usize) -> f64 {
        if self.measures == 0 {
            0.0
        } else {
            100.0 * n as f64 / self.measures as f64
        }
    }

    pub fn perfect_pct(&self) -> f64 {
        self.pct(self.perfect)
    }
    pub fn voice_match_pct(&self) -> f64 {
        self.pct(self.voice_match)
    }
    pub fn tick_exact_pct(&self) -> f64 {
        self.pct(self.tick_exact)
    }
}

impl fmt::Display for CorpusMetrics {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let e = &self.events;
        let rows = [
            ("Any-field error", format!("{:.2}%", 100.0 * e.any_field_error())),
            ("Tick error", format!("{:.2}%", 100.0 * e.tick_error())),
            ("Division error", format!("{:.2}%", 100.0 * e.division_error())),
            ("Dots error", format!("{:.2}%", 100.0 * e.dots_error())),
            ("Beam error", format!("{:.2}%", 100.0 * e.beam_error())),
            ("TimeWarp error", format!("{:.2}%", 100.0 * e.time_warp_error())),
            ("Tick RMSE", format!("{:.2}", e.tick_rmse())),
            ("Perfect %", format!("{:.2}", self.perfect_pct())),
            ("Voice match %", format!("{:.2}", self.voice_match_pct())),
            ("Tick exact %", format!("{:.2}", self.tick_exact_pct())),
        ];
        writeln!(f, "{:<16} {:>10}", "metric", "value")?;
        for (i, (name, value)) in rows.iter().enumerate() {
            write!(f, "{name:<16} {value:>10}")?;
            if i + 1 < rows.len() {
                writeln!(f)?;
            }
        }
        Ok(())
    }
}
