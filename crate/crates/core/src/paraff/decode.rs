//! Decoding a parsed measure into gold topology plus synthetic geometry.

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Dirichlet, Distribution};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::grammar::{EventTerm, MeasureAst, Term};
use super::token::{Clef, Token};
use crate::model::{
    feature, split_measure, Beam, ElemType, EventAssignment, EventInput, MeasureInput, MeasureInstance, ModelError,
    Predisposition, RegulationSolution, Status, StemDirection, TimeSignature, DEFAULT_STAFF_PITCH, DIVISION_CLASSES,
    DOTS_CLASSES, FEATURE_DIMS,
};
use crate::timebase::{duration_ratio, TickRatio, TimeWarp, WHOLE};

/// Left margin before the first column, staff spaces.
const LEFT_MARGIN: f64 = 1.5;
/// Largest shift of an inner warp knot, as a fraction of the measure.
const KNOT_SHIFT: f64 = 0.04;
const COLUMN_JITTER: f64 = 0.1;
const EVENT_JITTER: f64 = 0.05;
/// Range of the spacing scale, staff spaces per whole note. The lower end
/// keeps 64th-note columns more than one staff space apart after warp and
/// jitter, so unit-width columns never merge.
pub const SPACING: (f64, f64) = (104.0, 128.0);
/// Vertical shift of one octave, staff spaces.
pub const OCTAVE_SPAN: f64 = 3.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", default)]
pub struct LayoutConfig {
    /// Weight of the Dirichlet noise mixed into the gold one-hot hints.
    pub hint_noise: f64,
}

impl Default for LayoutConfig {
    fn default() -> Self {
        LayoutConfig { hint_noise: 0.15 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DecodeError {
    #[error("voice {voice} runs to {elapsed} ticks, past the measure's {duration}")]
    Overflow { voice: usize, elapsed: String, duration: u32 },
    #[error("voice {voice}: beam left open")]
    UnclosedBeam { voice: usize },
    #[error("voice {voice}: beam closed without opening")]
    UnopenedBeam { voice: usize },
    #[error("voice {voice}: tuplet left open")]
    UnclosedTuplet { voice: usize },
    #[error("voice {voice}: warp continuation outside a tuplet")]
    StrayWarp { voice: usize },
    #[error("voice {voice}: {dots} dots")]
    TooManyDots { voice: usize, dots: u8 },
    #[error("voice {voice}: onset {tick} is not a whole tick")]
    SubTick { voice: usize, tick: String },
    #[error("bad time signature {0}/{1}")]
    TimeSignature(u32, u32),
}

/// Scaling of the tuplet opened by `Wn`.
pub fn warp_for(n: u8) -> TimeWarp {
    let numerator = match n {
        2 => 3,
        4 => 3,
        8 => 6,
        16 => 12,
        n => 1u32 << (31 - (n as u32 - 1).leading_zeros()),
    };
    TimeWarp { numerator, denominator: n as u32 }
}

/// One gold event with its synthetic observation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SampleEvent {
    pub id: u32,
    pub staff: u32,
    pub voice: usize,
    pub tick: u32,
    pub division: u8,
    pub dots: u8,
    pub beam: Beam,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub time_warp: Option<TimeWarp>,
    pub is_rest: bool,
    pub grace: bool,
    pub stem_direction: StemDirection,
    pub x: f64,
    pub pivot_x: f64,
    pub y1: f64,
    pub y2: f64,
    pub feature: [f64; FEATURE_DIMS],
    pub predisposition: Predisposition,
}

/// Ground-truth measure decoded from a sentence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct TopologySample {
    pub measure_index: i64,
    #[serde(default)]
    pub sentence: String,
    pub time_signature: TimeSignature,
    pub measure_duration: u32,
    pub staves: u32,
    /// Event ids per voice in construction order; voices in source order.
    pub voices: Vec<Vec<u32>>,
    pub events: Vec<SampleEvent>,
}

impl TopologySample {
    pub fn event(&self, id: u32) -> Option<&SampleEvent> {
        self.events.iter().find(|e| e.id == id)
    }

    /// Cluster JSON record: one staff group holding every staff.
    pub fn to_measure_input(&self) -> MeasureInput {
        MeasureInput {
            measure_index: self.measure_index,
            time_signature: self.time_signature,
            duration: Some(self.measure_duration),
            time8th: None,
            staff_groups: vec![(0..self.staves).collect()],
            staff_origins: None,
            events: self
                .events
                .iter()
                .map(|e| EventInput {
                    id: Some(e.id),
                    elem_type: if e.is_rest { ElemType::Rest } else { ElemType::Chord },
                    staff: e.staff,
                    x: e.x,
                    pivot_x: Some(e.pivot_x),
                    y1: e.y1,
                    y2: e.y2,
                    feature: e.feature,
                    predisposition: e.predisposition.clone(),
                })
                .collect(),
            context_terms: Vec::new(),
        }
    }

    pub fn measure_instance(&self) -> Result<MeasureInstance, ModelError> {
        split_measure(&self.to_measure_input())
    }

    pub fn gold_solution(&self) -> RegulationSolution {
        let mut s = RegulationSolution {
            measure_index: self.measure_index,
            voices: self.voices.clone(),
            duration: self.measure_duration,
            status: Status::Solved,
            events: self
                .events
                .iter()
                .map(|e| EventAssignment {
                    id: e.id,
                    tick: Some(e.tick),
                    division: Some(e.division),
                    dots: Some(e.dots),
                    beam: e.beam,
                    stem_direction: e.stem_direction,
                    grace: e.grace,
                    time_warp: e.time_warp,
                    full_measure: false,
                    fake: false,
                    staff: Some(e.staff),
                    x: Some(e.x),
                })
                .collect(),
            adjacency: Default::default(),
        };
        s.rebuild_adjacency();
        s
    }
}

/// An event before layout.
struct Raw {
    staff: u32,
    voice: usize,
    tick: u32,
    division: u8,
    dots: u8,
    beam: Beam,
    time_warp: Option<TimeWarp>,
    is_rest: bool,
    /// Vertical positions of the noteheads relative to the staff top.
    heads: Vec<f64>,
}

fn head_y(step: u8, octave: i8, clef: Clef) -> f64 {
    // middle line: b under the G clef, d under the F clef
    let center = match clef {
        Clef::G => 6,
        Clef::F => 1,
    };
    let y = 2.0 - (step as f64 - center as f64) * 0.5 - OCTAVE_SPAN * octave as f64;
    y.clamp(-4.0, 8.0)
}

fn default_clef(staff: u32) -> Clef {
    if staff == 0 {
        Clef::G
    } else {
        Clef::F
    }
}

fn topology(ast: &MeasureAst, duration: u32) -> Result<Vec<Raw>, DecodeError> {
    let measure = TickRatio::from_integer(duration as i64);
    let initial_staff = ast.context.staff.unwrap_or(0);
    let mut clefs: BTreeMap<u32, Clef> = BTreeMap::new();
    let mut out = Vec::new();
    let mut voice = 0usize;
    for terms in &ast.voices {
        if !terms.iter().any(|t| matches!(t, Term::Event(e) if !e.has(Token::Space))) {
            continue;
        }
        let mut staff = initial_staff;
        let mut elapsed = TickRatio::from_integer(0);
        let mut beam_open = false;
        let mut group: Option<TimeWarp> = None;
        for term in terms {
            let e: &EventTerm = match term {
                Term::Context(Token::Staff(n)) => {
                    staff = *n as u32 - 1;
                    continue;
                }
                Term::Context(Token::Clef(c)) => {
                    clefs.insert(staff, *c);
                    continue;
                }
                Term::Context(_) => continue,
                Term::Event(e) => e,
            };
            if e.dots > 2 {
                return Err(DecodeError::TooManyDots { voice, dots: e.dots });
            }
            let (warp, closes) = match e.warp {
                Some(Token::Warp(n)) => {
                    if group.is_some() {
                        return Err(DecodeError::UnclosedTuplet { voice });
                    }
                    group = Some(warp_for(n));
                    (group, false)
                }
                Some(Token::WarpContinue) => (Some(group.ok_or(DecodeError::StrayWarp { voice })?), false),
                Some(Token::WarpClose) => (Some(group.ok_or(DecodeError::StrayWarp { voice })?), true),
                _ => {
                    if group.is_some() {
                        return Err(DecodeError::UnclosedTuplet { voice });
                    }
                    (None, false)
                }
            };
            if closes {
                group = None;
            }
            let mut length = duration_ratio(e.division, e.dots).expect("division and dots in range");
            if let Some(w) = warp {
                length *= w.ratio();
            }
            let onset = elapsed;
            elapsed += length;
            if elapsed > measure {
                return Err(DecodeError::Overflow { voice, elapsed: elapsed.to_string(), duration });
            }
            if e.has(Token::Space) {
                continue;
            }
            if !onset.is_integer() {
                return Err(DecodeError::SubTick { voice, tick: onset.to_string() });
            }
            let beam = match (e.has(Token::BeamLeft), e.has(Token::BeamRight)) {
                (true, true) => return Err(DecodeError::UnclosedBeam { voice }),
                (true, false) if beam_open => return Err(DecodeError::UnclosedBeam { voice }),
                (true, false) => {
                    beam_open = true;
                    Beam::Open
                }
                (false, true) if !beam_open => return Err(DecodeError::UnopenedBeam { voice }),
                (false, true) => {
                    beam_open = false;
                    Beam::Close
                }
                (false, false) if beam_open => Beam::Continue,
                (false, false) => Beam::None,
            };
            let clef = clefs.get(&staff).copied().unwrap_or_else(|| default_clef(staff));
            out.push(Raw {
                staff,
                voice,
                tick: onset.to_integer() as u32,
                division: e.division,
                dots: e.dots,
                beam,
                time_warp: warp,
                is_rest: e.has(Token::Rest),
                heads: e.pitches.iter().map(|p| head_y(p.step, p.octave, clef)).collect(),
            });
        }
        if beam_open {
            return Err(DecodeError::UnclosedBeam { voice });
        }
        if group.is_some() {
            return Err(DecodeError::UnclosedTuplet { voice });
        }
        voice += 1;
    }
    Ok(out)
}

/// Piecewise-linear monotone map of `[0, d]` with three random inner knots.
fn onset_warp(rng: &mut ChaCha8Rng, d: f64) -> Vec<(f64, f64)> {
    let mut knots = vec![(0.0, 0.0)];
    for k in 1..=3 {
        let u = k as f64 / 4.0;
        knots.push((u * d, (u + rng.random_range(-KNOT_SHIFT..KNOT_SHIFT)) * d));
    }
    knots.push((d, d));
    knots
}

fn apply_warp(knots: &[(f64, f64)], t: f64) -> f64 {
    for w in knots.windows(2) {
        let ((x0, y0), (x1, y1)) = (w[0], w[1]);
        if t <= x1 {
            return y0 + (t - x0) / (x1 - x0) * (y1 - y0);
        }
    }
    t
}

fn noisy_one_hot<const N: usize>(rng: &mut ChaCha8Rng, hot: usize, weight: f64) -> [f64; N] {
    let noise: [f64; N] = Dirichlet::new([1.0; N]).expect("unit concentration").sample(rng);
    std::array::from_fn(|i| (1.0 - weight) * (i == hot) as u8 as f64 + weight * noise[i])
}

/// Decode with the default layout configuration.
pub fn decode_topology(ast: &MeasureAst, layout_seed: u64) -> Result<TopologySample, DecodeError> {
    decode_topology_with(ast, layout_seed, &LayoutConfig::default())
}

pub fn decode_topology_with(
    ast: &MeasureAst,
    layout_seed: u64,
    config: &LayoutConfig,
) -> Result<TopologySample, DecodeError> {
    let (num, den) = ast.context.time.unwrap_or((4, 4));
    if num == 0 || den == 0 || !(num * WHOLE).is_multiple_of(den) {
        return Err(DecodeError::TimeSignature(num, den));
    }
    let time_signature = TimeSignature::new(num, den);
    let duration = time_signature.duration();
    let raw = topology(ast, duration)?;
    let mut rng = ChaCha8Rng::seed_from_u64(layout_seed);

    // x proportional to warped onsets
    let knots = onset_warp(&mut rng, duration as f64);
    let scale = rng.random_range(SPACING.0..SPACING.1);
    let onsets: BTreeSet<u32> = raw.iter().map(|r| r.tick).collect();
    let mut column_x: BTreeMap<u32, f64> = BTreeMap::new();
    let mut x = LEFT_MARGIN + rng.random_range(0.0..0.5);
    let mut last: Option<f64> = None;
    for &t in &onsets {
        let w = apply_warp(&knots, t as f64);
        if let Some(prev) = last {
            x += scale * (w - prev) / WHOLE as f64;
        }
        last = Some(w);
        column_x.insert(t, x + rng.random_range(-COLUMN_JITTER..COLUMN_JITTER));
    }

    let w = config.hint_noise;
    let mut events: Vec<SampleEvent> = raw
        .iter()
        .map(|r| {
            let x = column_x[&r.tick] + rng.random_range(-EVENT_JITTER..EVENT_JITTER);
            let origin = r.staff as f64 * DEFAULT_STAFF_PITCH;
            let (y1, y2, stem) = if r.is_rest || r.heads.is_empty() {
                (origin + 1.0, origin + 3.0, StemDirection::None)
            } else {
                let lo = r.heads.iter().copied().fold(f64::INFINITY, f64::min);
                let hi = r.heads.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let stem = if (lo + hi) / 2.0 > 2.0 { StemDirection::Up } else { StemDirection::Down };
                (origin + lo - 0.5, origin + hi + 0.5, stem)
            };
            let mut f = [0.0; FEATURE_DIMS];
            let div: [f64; 7] = noisy_one_hot(&mut rng, r.division as usize, w);
            f[feature::DIVISION..feature::DIVISION + 7].copy_from_slice(&div);
            let dots: [f64; 3] = noisy_one_hot(&mut rng, r.dots as usize, w);
            f[feature::DOTS] = dots[1] + dots[2];
            f[feature::DOTS + 1] = dots[2];
            let beam_class = match r.beam {
                Beam::None => 0,
                Beam::Open => 1,
                Beam::Continue => 2,
                Beam::Close => 3,
            };
            let beam: [f64; 4] = noisy_one_hot(&mut rng, beam_class, w);
            f[feature::BEAM..feature::BEAM + 3].copy_from_slice(&beam[1..]);
            let stem_class = match stem {
                StemDirection::None => 0,
                StemDirection::Up => 1,
                StemDirection::Down => 2,
            };
            let stem_hint: [f64; 3] = noisy_one_hot(&mut rng, stem_class, w);
            f[feature::STEM..feature::STEM + 2].copy_from_slice(&stem_hint[1..]);
            let predisposition = Predisposition {
                tick_estimate: None,
                division_vector: noisy_one_hot::<DIVISION_CLASSES>(&mut rng, r.division as usize, w),
                dots_vector: noisy_one_hot::<DOTS_CLASSES>(&mut rng, r.dots as usize, w),
                grace: 0.0,
                time_warped: (1.0 - w) * r.time_warp.is_some() as u8 as f64 + w * rng.random::<f64>(),
                full_measure: 0.0,
                fake: 0.0,
            };
            SampleEvent {
                id: 0,
                staff: r.staff,
                voice: r.voice,
                tick: r.tick,
                division: r.division,
                dots: r.dots,
                beam: r.beam,
                time_warp: r.time_warp,
                is_rest: r.is_rest,
                grace: false,
                stem_direction: stem,
                x,
                pivot_x: x,
                y1,
                y2,
                feature: f,
                predisposition,
            }
        })
        .collect();

    // ids follow reading order; voices keep source order
    let mut order: Vec<usize> = (0..events.len()).collect();
    order.sort_by(|&a, &b| {
        let (ea, eb) = (&events[a], &events[b]);
        ea.x.total_cmp(&eb.x).then(ea.staff.cmp(&eb.staff)).then(ea.y1.total_cmp(&eb.y1))
    });
    for (rank, &i) in order.iter().enumerate() {
        events[i].id = rank as u32 + 1;
    }
    let n_voices = events.iter().map(|e| e.voice + 1).max().unwrap_or(0);
    let mut voices = vec![Vec::new(); n_voices];
    for e in &events {
        voices[e.voice].push(e.id);
    }
    events.sort_by_key(|e| e.id);
    let staves = events.iter().map(|e| e.staff + 1).max().unwrap_or(1);

    Ok(TopologySample {
        measure_index: 0,
        sentence: String::new(),
        time_signature,
        measure_duration: duration,
        staves,
        voices,
        events,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::paraff::grammar::parse;
    use crate::paraff::token::tokenize;

    fn decode(text: &str) -> Result<TopologySample, DecodeError> {
        decode_topology(&parse(&tokenize(text).unwrap()).unwrap(), 3)
    }

    fn ticks(s: &TopologySample, voice: usize) -> Vec<u32> {
        s.voices[voice].iter().map(|&id| s.event(id).unwrap().tick).collect()
    }

    #[test]
    fn hello_world() {
        let s = decode("BOM K0 TN4 TD4 S1 Cg c D1 EOM").unwrap();
        assert_eq!(s.events.len(), 1);
        let e = &s.events[0];
        assert_eq!((e.tick, e.division, e.dots), (0, 0, 0));
        assert_eq!(s.measure_duration, 1920);
        assert_eq!(s.gold_solution().events[0].duration(), Some(TickRatio::from_integer(1920)));
    }

    #[test]
    fn triplet_ticks() {
        let s = decode("BOM TN2 TD4 S1 c W3 D8 d W D8 e Wx D8 f D4 EOM").unwrap();
        assert_eq!(ticks(&s, 0), vec![0, 160, 320, 480]);
        let warps: Vec<Option<TimeWarp>> = s.voices[0].iter().map(|&id| s.event(id).unwrap().time_warp).collect();
        assert_eq!(warps, vec![Some(TimeWarp::TRIPLET), Some(TimeWarp::TRIPLET), Some(TimeWarp::TRIPLET), None]);
    }

    #[test]
    fn beam_pairing() {
        let s = decode("BOM TN3 TD8 S1 c D8 Bl d D8 e D8 Br EOM").unwrap();
        let beams: Vec<Beam> = s.voices[0].iter().map(|&id| s.event(id).unwrap().beam).collect();
        assert_eq!(beams, vec![Beam::Open, Beam::Continue, Beam::Close]);
    }

    #[test]
    fn warp_ratios() {
        assert_eq!(warp_for(3), TimeWarp { numerator: 2, denominator: 3 });
        assert_eq!(warp_for(2), TimeWarp { numerator: 3, denominator: 2 });
        assert_eq!(warp_for(5), TimeWarp { numerator: 4, denominator: 5 });
        assert_eq!(warp_for(8), TimeWarp { numerator: 6, denominator: 8 });
        assert_eq!(warp_for(12), TimeWarp { numerator: 8, denominator: 12 });
        for n in 2..=16 {
            warp_for(n).validate().unwrap();
        }
    }

    #[test]
    fn rejections() {
        assert!(matches!(decode("BOM TN2 TD4 S1 c D2 d D4 EOM"), Err(DecodeError::Overflow { .. })));
        assert!(matches!(decode("BOM S1 c D8 Bl d D8 EOM"), Err(DecodeError::UnclosedBeam { .. })));
        assert!(matches!(decode("BOM S1 c D8 Br EOM"), Err(DecodeError::UnopenedBeam { .. })));
        assert!(matches!(decode("BOM c W3 D8 d D8 EOM"), Err(DecodeError::UnclosedTuplet { .. })));
        assert!(matches!(decode("BOM c W D8 EOM"), Err(DecodeError::StrayWarp { .. })));
        assert!(matches!(decode("BOM c D4 Dot Dot Dot EOM"), Err(DecodeError::TooManyDots { .. })));
    }

    #[test]
    fn spacer_and_staff_switch() {
        let s = decode("BOM TN3 TD4 S1 c D4 RSpace S2 d D4 e D4 Rest EOM").unwrap();
        assert_eq!(ticks(&s, 0), vec![480, 960]);
        let first = s.event(s.voices[0][0]).unwrap();
        assert_eq!(first.staff, 1);
        let rest = s.event(s.voices[0][1]).unwrap();
        assert!(rest.is_rest);
        assert_eq!(rest.y1 + rest.y2, 2.0 * (DEFAULT_STAFF_PITCH + 2.0));
        assert_eq!(s.staves, 2);
    }

    #[test]
    fn layout_properties() {
        let s = decode("BOM TN4 TD4 S1 c D8 Bl d D8 Br e D4 f D2 VB S2 c D4 d D4 Dot e D8 f D4 VB S1 g D2 a D2 EOM")
            .unwrap();
        let mut by_tick: BTreeMap<u32, Vec<f64>> = BTreeMap::new();
        for e in &s.events {
            by_tick.entry(e.tick).or_default().push(e.x);
        }
        let cols: Vec<(f64, f64)> = by_tick
            .values()
            .map(|xs| {
                (xs.iter().copied().fold(f64::INFINITY, f64::min), xs.iter().copied().fold(f64::NEG_INFINITY, f64::max))
            })
            .collect();
        for (lo, hi) in &cols {
            assert!(hi - lo <= 0.2 + 1e-12);
        }
        for w in cols.windows(2) {
            let min_gap = SPACING.0 * (1.0 - 4.0 * KNOT_SHIFT) * 240.0 / WHOLE as f64;
            assert!(w[1].0 - w[0].1 >= min_gap - 2.0 * (COLUMN_JITTER + EVENT_JITTER));
        }
        let ids: Vec<u32> = s.events.iter().map(|e| e.id).collect();
        assert_eq!(ids, (1..=s.events.len() as u32).collect::<Vec<_>>());
        let mut sorted = s.events.clone();
        sorted.sort_by(|a, b| a.x.total_cmp(&b.x));
        assert!(sorted.iter().zip(&s.events).all(|(a, b)| a.id == b.id));
    }

    #[test]
    fn hints_keep_gold_argmax() {
        let s = decode("BOM TN3 TD4 S1 c D4 Dot Bl d D8 Br e D4 EOM").unwrap();
        let m = s.measure_instance().unwrap();
        for e in m.events() {
            let gold = s.event(e.id).unwrap();
            assert_eq!(e.division_hint(), gold.division);
            assert_eq!(e.dots_hint(), gold.dots);
            assert_eq!(e.beam_hint(), gold.beam);
            assert_eq!(e.predisposition.division_argmax(), gold.division);
        }
    }

    #[test]
    fn deterministic_layout() {
        let ast = parse(&tokenize("BOM TN3 TD4 S1 c D4 d D4 e D4 EOM").unwrap()).unwrap();
        assert_eq!(decode_topology(&ast, 9), decode_topology(&ast, 9));
        assert_ne!(decode_topology(&ast, 9), decode_topology(&ast, 10));
    }

    #[test]
    fn converts_to_valid_cluster() {
        let s = decode("BOM TN3 TD4 S1 c D4 d D4 e D4 VB S2 c D2 Dot EOM").unwrap();
        let m = s.measure_instance().unwrap();
        assert_eq!(m.clusters.len(), 1);
        assert!(crate::model::validate_cluster(&m.clusters[0]).is_empty());
        assert!(s.gold_solution().invariant_problems().is_empty());
        let json = serde_json::to_string(&s).unwrap();
        assert_eq!(serde_json::from_str::<TopologySample>(&json).unwrap(), s);
    }
}
