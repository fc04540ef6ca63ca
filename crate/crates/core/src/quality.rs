//! Structural quality of a regulated measure: error and fine flags, the
//! composite score q, and before/after comparison of proposed fixes.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use num_rational::Ratio;
use serde::{Deserialize, Deserializer, Serialize};

use crate::evaluator::{covered_length, ratio_f64, voice_twist};
use crate::model::{Beam, EventAssignment, RegulationSolution, Status};
use crate::timebase::{TickRatio, TimeWarp, WHOLE};

/// ζ at or above this is not fine.
pub const FINE_TWIST: f64 = 0.3;
/// ζ must stay below this for a perfect measure.
pub const PERFECT_TWIST: f64 = 0.2;
/// More null-tick events than this is an error.
pub const MAX_NULL_EVENTS: usize = 2;
/// Tick granularity expected outside tuplets.
pub const TICK_GRANULE: u32 = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct QualityFlags {
    pub beam_broken: bool,
    pub tick_overlapped: bool,
    pub voice_rugged: bool,
    pub irregular_tick: bool,
    pub fractional_warp: bool,
    pub complex_warp: bool,
    pub grace_in_voice: bool,
    pub surplus: bool,
    pub space_nonzero: bool,
    pub twist_fatal: bool,
    pub null_events: bool,
    pub bad_warp: bool,
    pub overranged: bool,
    pub zero_duration: bool,
}

impl QualityFlags {
    /// `(name, value)` for every flag, in display order.
    pub fn entries(&self) -> [(&'static str, bool); 14] {
        [
            ("beamBroken", self.beam_broken),
            ("tickOverlapped", self.tick_overlapped),
            ("voiceRugged", self.voice_rugged),
            ("irregularTick", self.irregular_tick),
            ("fractionalWarp", self.fractional_warp),
            ("complexWarp", self.complex_warp),
            ("graceInVoice", self.grace_in_voice),
            ("surplus", self.surplus),
            ("spaceNonzero", self.space_nonzero),
            ("twistFatal", self.twist_fatal),
            ("nullEvents", self.null_events),
            ("badWarp", self.bad_warp),
            ("overranged", self.overranged),
            ("zeroDuration", self.zero_duration),
        ]
    }

    pub fn any_error(&self) -> bool {
        self.voice_rugged
            || self.tick_overlapped
            || self.twist_fatal
            || self.null_events
            || self.bad_warp
            || self.overranged
            || self.zero_duration
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct QualityDiagnostics {
    /// ζ: maximum per-voice tick twist.
    pub tick_twist: f64,
    /// Unused voice time summed over voices, in whole notes.
    pub space_time: f64,
    /// Unused voice time averaged over voices, in whole notes (enters q).
    pub mean_space_time: f64,
    /// Voice time beyond the measure, summed over voices, in ticks.
    pub surplus_time: f64,
    /// Largest per-voice duration sum over the measure duration.
    pub duration_rate: f64,
    pub irregular_warp_count: usize,
    pub total_events: usize,
    pub fake_events: usize,
    pub null_events: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct QualityReport {
    pub error: bool,
    pub fine: bool,
    pub perfect: bool,
    pub q: f64,
    pub flags: QualityFlags,
    pub diagnostics: QualityDiagnostics,
}

impl QualityReport {
    pub fn status(&self) -> Status {
        if self.error {
            Status::Fatal
        } else if self.fine {
            Status::Solved
        } else {
            Status::Issue
        }
    }
}

/// `q = (1 − tanh|space|)(1 − max(0, 1 − r_dur)²)(1 − tanh N_irr)(1 − ζ²)`.
pub fn quality_score(mean_space_time: f64, duration_rate: f64, irregular_warps: usize, tick_twist: f64) -> f64 {
    let l_space = mean_space_time.abs().tanh();
    let l_dur = (1.0 - duration_rate).max(0.0).powi(2);
    let l_warp = (irregular_warps as f64).tanh();
    let q = (1.0 - l_space) * (1.0 - l_dur) * (1.0 - l_warp) * (1.0 - tick_twist * tick_twist);
    q.clamp(0.0, 1.0)
}

/// Beamed events, in voice order, must read as `(Open Continue* Close)*`.
pub fn beams_valid(beams: &[Beam]) -> bool {
    let mut open = false;
    for &b in beams {
        match (b, open) {
            (Beam::None, _) => {}
            (Beam::Open, false) => open = true,
            (Beam::Continue, true) => {}
            (Beam::Close, true) => open = false,
            _ => return false,
        }
    }
    !open
}

fn close_warp_group(group: Option<(TimeWarp, TickRatio)>, flags: &mut QualityFlags, diag: &mut QualityDiagnostics) {
    if let Some((w, total)) = group {
        if !w.is_regular() {
            diag.irregular_warp_count += 1;
        }
        if !(total / Ratio::from_integer(w.denominator as i64)).is_integer() {
            flags.fractional_warp = true;
        }
    }
}

/// Check a regulated measure against the structural invariants.
pub fn evaluate_measure(solution: &RegulationSolution) -> QualityReport {
    let events: BTreeMap<u32, &EventAssignment> = solution.events.iter().map(|e| (e.id, e)).collect();
    let duration = solution.duration;
    let limit: TickRatio = Ratio::from_integer(duration as i64);
    let zero: TickRatio = Ratio::from_integer(0);
    let mut flags = QualityFlags { zero_duration: duration == 0, ..Default::default() };
    let mut diag = QualityDiagnostics { total_events: solution.events.len(), ..Default::default() };

    let mut seen = BTreeSet::new();
    let mut points: Vec<Vec<(f64, f64)>> = Vec::new();
    let mut space_sum = 0.0;
    let mut surplus = 0.0;
    let mut rate: Option<f64> = None;

    for voice in &solution.voices {
        let mut members = Vec::with_capacity(voice.len());
        for id in voice {
            if !seen.insert(*id) {
                flags.voice_rugged = true;
            }
            match events.get(id) {
                Some(e) => members.push(*e),
                None => flags.voice_rugged = true,
            }
        }
        if members.iter().any(|e| e.grace) {
            flags.grace_in_voice = true;
        }
        let beams: Vec<Beam> = members.iter().map(|e| e.beam).collect();
        if !beams_valid(&beams) {
            flags.beam_broken = true;
        }

        let mut sum = zero;
        let mut last_end = zero;
        let mut intervals = Vec::new();
        let mut warped_so_far = false;
        let mut prev: Option<(TickRatio, TickRatio)> = None;
        let mut voice_points = Vec::new();
        let mut group: Option<(TimeWarp, TickRatio)> = None;
        for e in &members {
            let dur = e.duration().unwrap_or(zero);
            sum += dur;
            if let Some(w) = e.time_warp {
                warped_so_far = true;
                if w.validate().is_err() {
                    flags.bad_warp = true;
                }
            }
            match (group, e.time_warp) {
                (Some((gw, total)), Some(w)) if gw == w => group = Some((gw, total + dur)),
                (g, w) => {
                    close_warp_group(g, &mut flags, &mut diag);
                    group = w.map(|w| (w, dur));
                }
            }
            let Some(tick) = e.tick else { continue };
            let start: TickRatio = Ratio::from_integer(tick as i64);
            if tick >= duration {
                flags.overranged = true;
            }
            if tick % TICK_GRANULE != 0 && !warped_so_far {
                flags.irregular_tick = true;
            }
            if let Some((_, prev_end)) = prev {
                if prev_end > start {
                    flags.tick_overlapped = true;
                }
            }
            let end = start + dur;
            prev = Some((start, end));
            last_end = last_end.max(end);
            intervals.push((start, end));
            if let Some(x) = e.x {
                voice_points.push((x, tick as f64));
            }
        }
        close_warp_group(group, &mut flags, &mut diag);

        let over = ratio_f64(sum.max(last_end)) - duration as f64;
        surplus += over.max(0.0);
        let covered = ratio_f64(covered_length(&intervals, limit));
        space_sum += (duration as f64 - covered).max(0.0) / WHOLE as f64;
        if duration > 0 {
            let r = ratio_f64(sum) / duration as f64;
            rate = Some(rate.map_or(r, |m: f64| m.max(r)));
        }
        points.push(voice_points);
    }

    let in_voice: BTreeSet<u32> = solution.voices.iter().flatten().copied().collect();
    diag.null_events = solution.events.iter().filter(|e| e.tick.is_none()).count();
    diag.fake_events =
        solution.events.iter().filter(|e| e.fake || (!in_voice.contains(&e.id) && !e.grace && !e.full_measure)).count();
    flags.null_events = diag.null_events > MAX_NULL_EVENTS;

    diag.tick_twist = voice_twist(&points, duration.max(1) as f64);
    diag.space_time = space_sum;
    diag.mean_space_time = if solution.voices.is_empty() { 0.0 } else { space_sum / solution.voices.len() as f64 };
    diag.surplus_time = surplus;
    diag.duration_rate = rate.unwrap_or(1.0);
    flags.twist_fatal = diag.tick_twist >= 1.0;
    flags.complex_warp = diag.irregular_warp_count > 0;
    flags.surplus = surplus > 0.0;
    flags.space_nonzero = space_sum > 0.0;

    let error = flags.any_error();
    let fine = !error
        && diag.tick_twist < FINE_TWIST
        && !flags.fractional_warp
        && !flags.irregular_tick
        && !flags.surplus
        && !flags.beam_broken
        && !flags.grace_in_voice;
    let perfect = fine && diag.tick_twist < PERFECT_TWIST && space_sum == 0.0 && diag.irregular_warp_count == 0;
    let q = if error {
        0.0
    } else {
        quality_score(diag.mean_space_time, diag.duration_rate, diag.irregular_warp_count, diag.tick_twist)
    };
    QualityReport { error, fine, perfect, q, flags, diagnostics: diag }
}

fn explicit<'de, D: Deserializer<'de>, T: Deserialize<'de>>(d: D) -> Result<Option<Option<T>>, D::Error> {
    Option::<T>::deserialize(d).map(Some)
}

/// Per-event override inside a fix; absent fields leave the event alone.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct FixEvent {
    pub id: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tick: Option<u32>,
    /// Omitted: unchanged. `null`: cleared.
    #[serde(default, deserialize_with = "explicit", skip_serializing_if = "Option::is_none")]
    pub time_warp: Option<Option<TimeWarp>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub division: Option<u8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dots: Option<u8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beam: Option<Beam>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grace: Option<bool>,
}

/// A proposed correction of one measure.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Fix {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub measure_index: Option<i64>,
    #[serde(default)]
    pub events: Vec<FixEvent>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub voices: Option<Vec<Vec<u32>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub duration: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub status: Option<Status>,
}

/// Apply a fix to a copy of `solution`. Overrides for unknown ids are ignored.
pub fn apply_fix(solution: &RegulationSolution, fix: &Fix) -> RegulationSolution {
    let mut out = solution.clone();
    if let Some(voices) = &fix.voices {
        out.voices = voices.clone();
    }
    if let Some(d) = fix.duration {
        out.duration = d;
    }
    for fe in &fix.events {
        let Some(e) = out.event_mut(fe.id) else { continue };
        if let Some(t) = fe.tick {
            e.tick = Some(t);
        }
        if let Some(w) = fe.time_warp {
            e.time_warp = w;
        }
        if let Some(d) = fe.division {
            e.division = Some(d);
        }
        if let Some(d) = fe.dots {
            e.dots = Some(d);
        }
        if let Some(b) = fe.beam {
            e.beam = b;
        }
        if let Some(g) = fe.grace {
            e.grace = g;
        }
    }
    out.rebuild_adjacency();
    if let Some(s) = fix.status {
        out.status = s;
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Verdict {
    Fixed,
    Improved,
    Worse { new_error: bool },
    Unchanged,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Verdict::Fixed => write!(f, "FIXED!"),
            Verdict::Improved => write!(f, "IMPROVED"),
            Verdict::Worse { new_error: true } => write!(f, "WORSE (new error)"),
            Verdict::Worse { new_error: false } => write!(f, "WORSE"),
            Verdict::Unchanged => write!(f, "UNCHANGED"),
        }
    }
}

/// Compare two reports by `(no error, fine, q)`.
pub fn verdict(before: &QualityReport, after: &QualityReport) -> Verdict {
    if after.error && !before.error {
        return Verdict::Worse { new_error: true };
    }
    if !before.fine && after.fine {
        return Verdict::Fixed;
    }
    let key = |r: &QualityReport| (!r.error, r.fine);
    match key(after).cmp(&key(before)).then(after.q.total_cmp(&before.q)) {
        std::cmp::Ordering::Greater => Verdict::Improved,
        std::cmp::Ordering::Less => Verdict::Worse { new_error: false },
        std::cmp::Ordering::Equal => Verdict::Unchanged,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct FixOutcome {
    pub measure_index: i64,
    pub before: QualityReport,
    pub after: QualityReport,
    pub verdict: Verdict,
    pub patched: RegulationSolution,
}

pub fn evaluate_fix(original: &RegulationSolution, fix: &Fix) -> FixOutcome {
    let patched = apply_fix(original, fix);
    let before = evaluate_measure(original);
    let after = evaluate_measure(&patched);
    FixOutcome {
        measure_index: fix.measure_index.unwrap_or(original.measure_index),
        verdict: verdict(&before, &after),
        before,
        after,
        patched,
    }
}

fn short(v: f64) -> String {
    let s = format!("{v:.3}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s.is_empty() || s == "-0" {
        "0".into()
    } else {
        s.to_string()
    }
}

fn write_report(f: &mut fmt::Formatter<'_>, label: &str, m: i64, r: &QualityReport) -> fmt::Result {
    let d = &r.diagnostics;
    writeln!(f, "{label} (m{m}): fine={}, error={}, tickTwist={:.3}", r.fine, r.error, d.tick_twist)?;
    writeln!(
        f,
        "  qualityScore={:.3}, spaceTime={}, surplusTime={}, beamBroken={}",
        r.q,
        short(d.space_time),
        short(d.surplus_time),
        r.flags.beam_broken
    )?;
    let valid = d.total_events.saturating_sub(d.fake_events + d.null_events);
    write!(f, "  Events: {} total, {valid} valid, {} fake, {} null", d.total_events, d.fake_events, d.null_events)?;
    let extra: Vec<String> = r
        .flags
        .entries()
        .iter()
        .filter(|(name, on)| *on && !matches!(*name, "beamBroken" | "surplus" | "spaceNonzero"))
        .map(|(name, _)| format!("{name}=true"))
        .collect();
    if !extra.is_empty() {
        write!(f, "\n  {}", extra.join(", "))?;
    }
    Ok(())
}

impl fmt::Display for FixOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write_report(f, "BEFORE", self.measure_index, &self.before)?;
        writeln!(f)?;
        writeln!(f)?;
        write_report(f, "AFTER ", self.measure_index, &self.after)?;
        writeln!(f)?;
        writeln!(f)?;
        let dt = self.after.diagnostics.tick_twist - self.before.diagnostics.tick_twist;
        write!(f, "d(tickTwist)={dt:+.3} -> {}", self.verdict)
    }
}
