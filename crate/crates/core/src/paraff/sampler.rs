//! Masked sampling of measure sentences.
//!
//! Every step keeps only the tokens that the transition matrix, the grammar
//! automaton and a semantic tracker all accept, then draws from the softmax
//! of the logit source over that set. The tracker keeps voices inside the
//! measure, pairs beams and tuplets, and reserves enough of the length budget
//! to finish the sentence.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::grammar::{transition_allowed, GrammarState};
use super::token::{render, vocabulary, Token, TIME_DENS};
use crate::timebase::WHOLE;

/// Shortest note the sampler writes (`D64`), and the grid of all durations.
const MIN_NOTE: u32 = 30;
const GRID: u32 = 15;
const MIN_MEASURE: u32 = 480;
const MAX_MEASURE: u32 = 2880;
const MAX_CHORD: u8 = 3;
/// Members of the one tuplet form the sampler writes: `W3 Dn W Dn Wx Dn`.
const TUPLET_SIZE: u8 = 3;

/// Per-token logits given the sentence so far.
pub trait LogitSource {
    fn logits(&mut self, prefix: &[Token], rng: &mut ChaCha8Rng, out: &mut [f64]);
}

/// Seeded uniform noise in `[0, 1)`.
#[derive(Debug, Clone, Copy, Default)]
pub struct UniformLogits;

impl LogitSource for UniformLogits {
    fn logits(&mut self, _prefix: &[Token], rng: &mut ChaCha8Rng, out: &mut [f64]) {
        out.iter_mut().for_each(|l| *l = rng.random::<f64>());
    }
}

/// Constraints standing in for prompt tokens.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", default)]
pub struct PromptConfig {
    pub min_voices: u8,
    pub max_voices: u8,
    pub min_distinct_durations: u8,
    /// Staves available to the sentence, 1..=3.
    pub staves: u8,
    pub max_tokens: usize,
    pub max_backtracks: usize,
}

impl Default for PromptConfig {
    fn default() -> Self {
        PromptConfig {
            min_voices: 1,
            max_voices: 4,
            min_distinct_durations: 1,
            staves: 2,
            max_tokens: 256,
            max_backtracks: 16,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SampleError {
    #[error("no valid continuation after {backtracks} backtracks at \"{prefix}\"")]
    Stuck { prefix: String, backtracks: usize },
    #[error("invalid prompt: {0}")]
    Prompt(String),
}

/// Remaining voice time that notes can still fill exactly.
fn fillable(rem: u32) -> bool {
    rem == 0 || (rem >= MIN_NOTE && rem.is_multiple_of(GRID))
}

/// Ticks of `division` with `dots`, when whole.
fn note_ticks(division: u8, dots: u8) -> Option<u32> {
    let total = WHOLE * ((1 << (dots + 1)) - 1);
    let denom = 1u32 << (division + dots);
    total.is_multiple_of(denom).then_some(total / denom)
}

/// (ticks, division, dots) of every writable note, longest first.
fn note_table() -> &'static [(u32, u8, u8)] {
    static TABLE: std::sync::OnceLock<Vec<(u32, u8, u8)>> = std::sync::OnceLock::new();
    TABLE.get_or_init(|| {
        let mut v: Vec<(u32, u8, u8)> =
            (0..=6u8).flat_map(|d| (0..=2u8).filter_map(move |k| note_ticks(d, k).map(|t| (t, d, k)))).collect();
        v.sort_by(|a, b| b.0.cmp(&a.0).then(a.2.cmp(&b.2)));
        v
    })
}

/// Tokens of the greedy completion that fills `rem` ticks. When `beamed`, the
/// first note must be beamable and closes the open beam.
fn fill_tokens(mut rem: u32, beamed: bool) -> usize {
    let mut n = 0;
    let mut first = beamed;
    while rem > 0 {
        let Some(&(t, _, k)) =
            note_table().iter().find(|&&(t, d, _)| t <= rem && fillable(rem - t) && (!first || d >= 3))
        else {
            return usize::MAX / 4;
        };
        n += 2 + k as usize + first as usize;
        first = false;
        rem -= t;
    }
    n
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Tuplet {
    division: u8,
    /// Members still to be written after the current event.
    left: u8,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
struct EventState {
    chord: u8,
    octave: bool,
    division: Option<u8>,
    dots: u8,
    warped: bool,
    ticks: u32,
    beam_left: bool,
    beam_right: bool,
    rest: bool,
    space: bool,
    expressive: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Tracker {
    grammar: GrammarState,
    len: usize,
    /// Header tokens read out of `K TN TD`.
    header: u8,
    time_num: u8,
    measure: u32,
    voices_done: u8,
    used_divisions: u8,
    // current voice
    elapsed: u32,
    visible: u8,
    staff: Option<u8>,
    voice_terms: u8,
    since_staff: u8,
    beam_open: bool,
    beam_events: u8,
    tuplet: Option<Tuplet>,
    event: EventState,
}

impl Tracker {
    fn new() -> Self {
        Tracker {
            grammar: GrammarState::Start,
            len: 0,
            header: 0,
            time_num: 0,
            measure: 0,
            voices_done: 0,
            used_divisions: 0,
            elapsed: 0,
            visible: 0,
            staff: None,
            voice_terms: 0,
            since_staff: 0,
            beam_open: false,
            beam_events: 0,
            tuplet: None,
            event: EventState::default(),
        }
    }

    fn rem(&self) -> u32 {
        self.measure - self.elapsed
    }

    fn close_event(&mut self) -> Option<()> {
        let ev = self.event;
        let elapsed = self.elapsed + ev.ticks;
        // members still owed by an open tuplet are already spoken for
        let owed = self.tuplet.map_or(0, |t| t.left as u32 * note_ticks(t.division, 0).unwrap_or(0) * 2 / 3);
        if elapsed + owed > self.measure || !fillable(self.measure - elapsed - owed) {
            return None;
        }
        if self.beam_open && elapsed == self.measure {
            return None;
        }
        self.elapsed = elapsed;
        if !ev.space {
            self.visible = self.visible.saturating_add(1);
            self.since_staff = self.since_staff.saturating_add(1);
        }
        if self.beam_open || ev.beam_right {
            self.beam_events += 1;
        }
        self.voice_terms = self.voice_terms.saturating_add(1);
        self.event = EventState::default();
        Some(())
    }

    fn voice_complete(&self) -> bool {
        self.header == 3
            && self.staff.is_some()
            && self.elapsed == self.measure
            && self.visible > 0
            && !self.beam_open
            && self.tuplet.is_none()
    }

    /// Successor state after `token`, or `None` when it is masked out.
    fn step(&self, token: Token, cfg: &PromptConfig) -> Option<Tracker> {
        let next = self.grammar.push(token)?;
        let mut s = *self;
        s.grammar = next;
        s.len += 1;
        let leaving = matches!(self.grammar, GrammarState::Duration | GrammarState::Post)
            && !matches!(next, GrammarState::Duration | GrammarState::Post);
        if leaving {
            s.close_event()?;
        }
        let rem = s.rem();
        match token {
            Token::Bom => {}
            Token::Key(_) => {
                (s.header == 0).then_some(())?;
                s.header = 1;
            }
            Token::TimeNum(n) => {
                (s.header == 1).then_some(())?;
                TIME_DENS.iter().any(|&d| meter_ok(n, d)).then_some(())?;
                s.time_num = n;
                s.header = 2;
            }
            Token::TimeDen(d) => {
                (s.header == 2 && meter_ok(s.time_num, d)).then_some(())?;
                s.measure = s.time_num as u32 * WHOLE / d as u32;
                s.header = 3;
            }
            Token::Staff(n) => {
                (s.header == 3 && n <= cfg.staves).then_some(())?;
                match s.staff {
                    None => {}
                    Some(cur) => (s.since_staff > 0 && cur != n).then_some(())?,
                }
                s.staff = Some(n);
                s.since_staff = 0;
                s.voice_terms += 1;
            }
            Token::Clef(_) => {
                (s.staff.is_some() && s.voice_terms == 1).then_some(())?;
                s.voice_terms += 1;
            }
            Token::Pitch(_) => {
                s.staff?;
                if matches!(self.grammar, GrammarState::Pitch { .. }) {
                    (s.event.chord < MAX_CHORD).then_some(())?;
                    s.event.chord += 1;
                } else {
                    (rem > 0).then_some(())?;
                    s.event = EventState { chord: 1, ..EventState::default() };
                }
                s.event.octave = false;
            }
            Token::Accidental(_) => {}
            Token::Octave(_) => {
                (matches!(self.grammar, GrammarState::Pitch { .. }) && !s.event.octave).then_some(())?;
                s.event.octave = true;
            }
            Token::Warp(n) => {
                (n == TUPLET_SIZE && s.tuplet.is_none()).then_some(())?;
                (0..=6u8).any(|d| tuplet_fits(d, rem, s.beam_open)).then_some(())?;
                s.event.warped = true;
            }
            Token::WarpContinue => {
                (s.tuplet?.left >= 2).then_some(())?;
                s.event.warped = true;
            }
            Token::WarpClose => {
                (s.tuplet?.left == 1).then_some(())?;
                s.event.warped = true;
            }
            Token::Duration(d) => {
                if s.beam_open && d < 3 {
                    return None;
                }
                match (s.tuplet, s.event.warped) {
                    (Some(t), true) => {
                        (t.division == d).then_some(())?;
                        s.event.ticks = note_ticks(d, 0)? * 2 / 3;
                        s.tuplet = (t.left > 1).then_some(Tuplet { division: d, left: t.left - 1 });
                    }
                    (Some(_), false) => return None,
                    (None, true) => {
                        tuplet_fits(d, rem, s.beam_open).then_some(())?;
                        s.event.ticks = note_ticks(d, 0)? * 2 / 3;
                        s.tuplet = Some(Tuplet { division: d, left: TUPLET_SIZE - 1 });
                    }
                    (None, false) => {
                        (0..=2)
                            .any(|k| note_ticks(d, k).is_some_and(|t| t <= rem && fillable(rem - t)))
                            .then_some(())?;
                        s.event.ticks = note_ticks(d, 0)?;
                    }
                }
                s.event.division = Some(d);
                s.used_divisions |= 1 << d;
            }
            Token::Dot => {
                let d = s.event.division?;
                (!s.event.warped && s.event.dots < 2).then_some(())?;
                let dots = s.event.dots + 1;
                let t = note_ticks(d, dots)?;
                let reachable = (dots..=2).any(|k| note_ticks(d, k).is_some_and(|t| t <= rem && fillable(rem - t)));
                (t <= rem && reachable).then_some(())?;
                s.event.dots = dots;
                s.event.ticks = t;
            }
            Token::BeamLeft => {
                let e = s.event;
                let after = rem.checked_sub(e.ticks)?;
                (!s.beam_open && !e.beam_right && !e.rest && !e.space && e.division? >= 3 && after >= MIN_NOTE)
                    .then_some(())?;
                s.event.beam_left = true;
                s.beam_open = true;
                s.beam_events = 0;
            }
            Token::BeamRight => {
                let e = s.event;
                (s.beam_open && !e.beam_left && !e.beam_right && !e.rest && s.beam_events >= 1).then_some(())?;
                s.event.beam_right = true;
                s.beam_open = false;
            }
            Token::Rest => {
                let e = s.event;
                (e.chord == 1 && !e.rest && !e.space && !e.beam_left && !e.beam_right && !s.beam_open).then_some(())?;
                s.event.rest = true;
            }
            Token::Space => {
                let e = s.event;
                let plain = !e.rest && !e.space && !e.beam_left && !e.beam_right && !e.expressive;
                let after = rem.checked_sub(e.ticks)?;
                (e.chord == 1 && plain && !s.beam_open && !e.warped && (s.visible > 0 || after > 0)).then_some(())?;
                s.event.space = true;
            }
            Token::Expressive(_) => {
                (!s.event.expressive && !s.event.space).then_some(())?;
                s.event.expressive = true;
            }
            Token::Vb => {
                (s.voice_complete() && s.voices_done + 1 < cfg.max_voices).then_some(())?;
                s.voices_done += 1;
                s.elapsed = 0;
                s.visible = 0;
                s.staff = None;
                s.voice_terms = 0;
                s.since_staff = 0;
                s.beam_events = 0;
            }
            Token::Eom => {
                let distinct = s.used_divisions.count_ones() as u8;
                (s.voice_complete() && s.voices_done + 1 >= cfg.min_voices && distinct >= cfg.min_distinct_durations)
                    .then_some(())?;
            }
            Token::Pad => return None,
        }
        Some(s)
    }

    /// Tokens of a cheap completion from this state up to and including `EOM`.
    fn estimate(&self, cfg: &PromptConfig) -> usize {
        if self.grammar.is_final() {
            return 0;
        }
        let largest = fill_tokens(MAX_MEASURE, false);
        if self.header < 3 {
            return (3 - self.header as usize) + cfg.min_voices.max(1) as usize * (2 + largest);
        }
        let mut n = 0usize;
        let mut rem = self.rem();
        let mut beam_open = self.beam_open;
        let mut tuplet = self.tuplet;
        match self.grammar {
            GrammarState::Pitch { .. } | GrammarState::Warp => {
                let warp_read = self.grammar == GrammarState::Warp;
                match tuplet {
                    Some(t) => {
                        let member = note_ticks(t.division, 0).unwrap_or(0) * 2 / 3;
                        n += 1 + !warp_read as usize;
                        rem = rem.saturating_sub(member);
                        tuplet = (t.left > 1).then_some(Tuplet { left: t.left - 1, ..t });
                    }
                    None if warp_read => {
                        let Some(d) = (0..=6u8).find(|&d| tuplet_fits(d, rem, beam_open)) else {
                            return usize::MAX / 4;
                        };
                        let member = note_ticks(d, 0).unwrap_or(0) * 2 / 3;
                        n += 1;
                        rem -= member;
                        tuplet = Some(Tuplet { division: d, left: TUPLET_SIZE - 1 });
                    }
                    None => {
                        let Some(&(t, _, k)) = note_table()
                            .iter()
                            .find(|&&(t, d, _)| t <= rem && fillable(rem - t) && (!beam_open || d >= 3))
                        else {
                            return usize::MAX / 4;
                        };
                        n += 1 + k as usize;
                        rem -= t;
                    }
                }
            }
            GrammarState::Duration | GrammarState::Post => {
                let e = self.event;
                let d = e.division.unwrap_or(0);
                let best = if e.warped || self.grammar == GrammarState::Post {
                    Some((0, rem.saturating_sub(e.ticks)))
                } else {
                    (e.dots..=2)
                        .filter_map(|k| note_ticks(d, k).map(|t| (k, t)))
                        .filter(|&(_, t)| t <= rem && fillable(rem - t))
                        .map(|(k, t)| ((k - e.dots) as usize, rem - t))
                        .min_by_key(|&(extra, r)| extra + fill_tokens(r, beam_open))
                };
                let Some((extra, r)) = best else { return usize::MAX / 4 };
                n += extra;
                rem = r;
            }
            _ => {}
        }
        if let Some(t) = tuplet {
            let member = note_ticks(t.division, 0).unwrap_or(0) * 2 / 3;
            n += 3 * t.left as usize;
            rem = rem.saturating_sub(member * t.left as u32);
        }
        if beam_open && rem == 0 {
            n += 1;
            beam_open = false;
        }
        n += fill_tokens(rem, beam_open);
        if self.staff.is_none() {
            n += 1;
        }
        n += 1;
        let more = cfg.min_voices.saturating_sub(self.voices_done + 1) as usize;
        n + more * (2 + fill_tokens(self.measure, false))
    }
}

fn meter_ok(num: u8, den: u8) -> bool {
    let d = num as u32 * WHOLE / den as u32;
    (MIN_MEASURE..=MAX_MEASURE).contains(&d)
}

/// A triplet of `division` notes fits in `rem` and leaves a fillable rest.
fn tuplet_fits(division: u8, rem: u32, beam_open: bool) -> bool {
    let Some(base) = note_ticks(division, 0) else { return false };
    let total = 2 * base;
    base % 3 == 0 && total <= rem && fillable(rem - total) && (!beam_open || division >= 3)
}

fn check_prompt(cfg: &PromptConfig) -> Result<(), SampleError> {
    if cfg.min_voices == 0 || cfg.min_voices > cfg.max_voices {
        return Err(SampleError::Prompt(format!("voices {}..={}", cfg.min_voices, cfg.max_voices)));
    }
    if !(1..=3).contains(&cfg.staves) {
        return Err(SampleError::Prompt(format!("{} staves", cfg.staves)));
    }
    if cfg.min_distinct_durations > 7 {
        return Err(SampleError::Prompt(format!("{} distinct durations", cfg.min_distinct_durations)));
    }
    Ok(())
}

/// Draw one measure sentence.
pub fn sample_measure(
    source: &mut dyn LogitSource,
    rng: &mut ChaCha8Rng,
    config: &PromptConfig,
) -> Result<Vec<Token>, SampleError> {
    check_prompt(config)?;
    let vocab = vocabulary();
    let mut tokens: Vec<Token> = Vec::new();
    let mut states = vec![Tracker::new()];
    let mut banned: Vec<Vec<usize>> = vec![Vec::new()];
    let mut backtracks = 0;
    let mut logits = vec![0.0; vocab.len()];
    let mut candidates: Vec<(usize, Tracker)> = Vec::with_capacity(vocab.len());

    loop {
        let state = *states.last().expect("state stack is never empty");
        if state.grammar.is_final() {
            return Ok(tokens);
        }
        source.logits(&tokens, rng, &mut logits);
        candidates.clear();
        let prev = tokens.last().map(|t| t.group());
        let ban = banned.last().expect("ban stack matches states");
        for (i, &t) in vocab.iter().enumerate() {
            if ban.contains(&i) || prev.is_some_and(|p| !transition_allowed(p, t.group())) {
                continue;
            }
            if let Some(next) = state.step(t, config) {
                if next.len + next.estimate(config) <= config.max_tokens {
                    candidates.push((i, next));
                }
            }
        }
        if candidates.is_empty() {
            if tokens.is_empty() || backtracks >= config.max_backtracks {
                return Err(SampleError::Stuck { prefix: render(&tokens), backtracks });
            }
            backtracks += 1;
            let dropped = tokens.pop().expect("non-empty");
            states.pop();
            banned.pop();
            banned.last_mut().expect("ban stack matches states").push(dropped.id());
            continue;
        }
        let top = candidates.iter().map(|&(i, _)| logits[i]).fold(f64::NEG_INFINITY, f64::max);
        let total: f64 = candidates.iter().map(|&(i, _)| (logits[i] - top).exp()).sum();
        let mut u = rng.random::<f64>() * total;
        let mut pick = candidates.len() - 1;
        for (k, &(i, _)) in candidates.iter().enumerate() {
            u -= (logits[i] - top).exp();
            if u < 0.0 {
                pick = k;
                break;
            }
        }
        let (i, next) = candidates[pick];
        tokens.push(vocab[i]);
        states.push(next);
        banned.push(Vec::new());
    }
}
