//! Scalar loss over a (partial) chain: tick propagation, tick twist and the
//! weighted combination the search minimizes.

use std::f64::consts::PI;

use num_rational::Ratio;
use serde::{Deserialize, Serialize};

use crate::model::{EventCluster, EventElement};
use crate::timebase::{effective_duration, round_ticks, TickRatio, WHOLE};

/// Loss weights, in the order RMSE/T, τ, r, v, s/T, π.
pub const W_RMSE: f64 = 1.0;
pub const W_TWIST: f64 = 1.0;
pub const W_RESIDUE: f64 = 0.2;
pub const W_VOICES: f64 = 0.002;
pub const W_UNUSED: f64 = 0.4;
pub const W_PT: f64 = 0.02;

/// Hard cap on voices per cluster before a state counts as degenerate.
pub const MAX_VOICES: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ClusterEvaluation {
    pub loss: f64,
    pub fatal: bool,
    pub tick_twist: f64,
    pub residue_count: usize,
    pub voice_count: usize,
    pub mean_unused_time: f64,
    pub pretentiousness: f64,
    pub tick_rmse: f64,
}

/// Raw inputs of the combined loss.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossTerms {
    pub tick_rmse: f64,
    pub tick_twist: f64,
    pub residue_count: usize,
    pub voice_count: usize,
    pub mean_unused_time: f64,
    pub pretentiousness: f64,
}

/// The weighted sum, without any fatality adjustment.
pub fn combined_loss(t: &LossTerms) -> f64 {
    let whole = WHOLE as f64;
    W_RMSE * t.tick_rmse / whole
        + W_TWIST * t.tick_twist
        + W_RESIDUE * t.residue_count as f64
        + W_VOICES * t.voice_count as f64
        + W_UNUSED * t.mean_unused_time / whole
        + W_PT * t.pretentiousness
}

/// Build an evaluation from loss terms. A fatal state always reports loss ≥ 1.
pub fn cluster_loss(terms: LossTerms, degenerate: bool) -> ClusterEvaluation {
    let fatal = degenerate || terms.tick_twist >= 1.0;
    let mut loss = combined_loss(&terms);
    if fatal && loss < 1.0 {
        loss += 1.0;
    }
    ClusterEvaluation {
        loss,
        fatal,
        tick_twist: terms.tick_twist,
        residue_count: terms.residue_count,
        voice_count: terms.voice_count,
        mean_unused_time: terms.mean_unused_time,
        pretentiousness: terms.pretentiousness,
        tick_rmse: terms.tick_rmse,
    }
}

/// Twist term of one pair of points. `dx = 0` is the limit of the formula:
/// skipped (`None`) when `dt = 0`, otherwise at least 1.
pub fn pair_twist(dx: f64, dt: f64, x_span: f64, t_span: f64) -> Option<f64> {
    let nx = dx / x_span;
    let nt = dt / t_span;
    if nx == 0.0 {
        if nt == 0.0 {
            return None;
        }
        let angle = if nt > 0.0 { PI / 2.0 } else { -PI / 2.0 };
        return Some((4.0 / PI * angle - 1.0).powi(2));
    }
    // atan2 keeps backward x steps on the correct side of the diagonal
    let angle = nt.atan2(nx);
    let angle = if angle > PI / 2.0 {
        angle - PI
    } else if angle < -PI / 2.0 {
        angle + PI
    } else {
        angle
    };
    Some((4.0 / PI * angle - 1.0).powi(2))
}

/// τ over consecutive pairs of `points` taken in x order.
pub fn tick_twist(points: &[(f64, f64)], x_span: f64, t_span: f64) -> f64 {
    let mut sorted = points.to_vec();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    sorted.windows(2).filter_map(|w| pair_twist(w[1].0 - w[0].0, w[1].1 - w[0].1, x_span, t_span)).fold(0.0, f64::max)
}

/// Spans used to normalize a set of voices: the x range and tick range over
/// all their points, with fallbacks of 1 and `fallback_t_span`.
pub fn twist_spans(voices: &[Vec<(f64, f64)>], fallback_t_span: f64) -> (f64, f64) {
    let mut xs = (f64::INFINITY, f64::NEG_INFINITY);
    let mut ts = (f64::INFINITY, f64::NEG_INFINITY);
    for &(x, t) in voices.iter().flatten() {
        xs = (xs.0.min(x), xs.1.max(x));
        ts = (ts.0.min(t), ts.1.max(t));
    }
    let x_span = if xs.1 - xs.0 > 0.0 { xs.1 - xs.0 } else { 1.0 };
    let t_span = if ts.1 - ts.0 > 0.0 { ts.1 - ts.0 } else { fallback_t_span.max(1.0) };
    (x_span, t_span)
}

/// Maximum per-voice twist, every voice normalized by the shared spans.
pub fn voice_twist(voices: &[Vec<(f64, f64)>], fallback_t_span: f64) -> f64 {
    let (x_span, t_span) = twist_spans(voices, fallback_t_span);
    voices.iter().map(|v| tick_twist(v, x_span, t_span)).fold(0.0, f64::max)
}

/// Events that can be chained: chords and rests not flagged grace,
/// full-measure or fake.
pub fn is_candidate(e: &EventElement) -> bool {
    e.is_event() && !e.predisposition.excluded()
}

/// Effective duration of an element under its current attributes; zero when
/// division is still unassigned.
pub fn element_duration(e: &EventElement) -> TickRatio {
    match e.division {
        Some(d) => effective_duration(d, e.dots.unwrap_or(0), e.time_warp).unwrap_or_else(|_| Ratio::from_integer(0)),
        None => Ratio::from_integer(0),
    }
}

/// Result of walking the chain in order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Propagation {
    /// Tick per element index (`None` for unchained elements and sentinels).
    pub ticks: Vec<Option<u32>>,
    /// Element indices per voice, in chain order.
    pub voices: Vec<Vec<usize>>,
    /// Candidate events without an order.
    pub residue: Vec<usize>,
    /// Per voice: covered ticks inside the measure.
    pub covered: Vec<TickRatio>,
}

/// Voice-local cumulative ticks. Orders with a gap larger than one start a
/// new voice; an integer estimate in `estimates` lower-bounds the tick.
pub fn propagate_ticks(cluster: &EventCluster, estimates: &[Option<u32>]) -> Propagation {
    let n = cluster.elements.len();
    let mut chained: Vec<(u32, usize)> = cluster
        .elements
        .iter()
        .enumerate()
        .filter(|(_, e)| e.is_event())
        .filter_map(|(i, e)| e.order.map(|o| (o, i)))
        .collect();
    chained.sort_unstable();

    let mut out = Propagation { ticks: vec![None; n], ..Default::default() };
    let duration = Ratio::from_integer(cluster.measure_duration as i64);
    let mut last_order: Option<u32> = None;
    let mut cum = Ratio::from_integer(0);
    let mut intervals: Vec<Vec<(TickRatio, TickRatio)>> = Vec::new();
    for (order, idx) in chained {
        if last_order.is_none_or(|l| order != l + 1) {
            out.voices.push(Vec::new());
            intervals.push(Vec::new());
            cum = Ratio::from_integer(0);
        }
        last_order = Some(order);
        if let Some(t) = estimates.get(idx).copied().flatten() {
            let bound = Ratio::from_integer(t as i64);
            if bound > cum {
                cum = bound;
            }
        }
        let e = &cluster.elements[idx];
        let tick = round_ticks(cum).max(0) as u32;
        out.ticks[idx] = Some(tick);
        let end = cum + element_duration(e);
        intervals.last_mut().unwrap().push((cum, end));
        out.voices.last_mut().unwrap().push(idx);
        cum = end;
    }
    out.covered = intervals.iter().map(|iv| covered_length(iv, duration)).collect();
    out.residue = cluster
        .elements
        .iter()
        .enumerate()
        .filter(|(_, e)| is_candidate(e) && e.order.is_none())
        .map(|(i, _)| i)
        .collect();
    out
}

/// Length of the union of intervals clipped to `[0, limit]`.
pub fn covered_length(intervals: &[(TickRatio, TickRatio)], limit: TickRatio) -> TickRatio {
    let zero = Ratio::from_integer(0);
    let mut iv: Vec<(TickRatio, TickRatio)> = intervals
        .iter()
        .map(|&(a, b)| (a.max(zero).min(limit), b.max(zero).min(limit)))
        .filter(|(a, b)| b > a)
        .collect();
    iv.sort();
    let mut total = zero;
    let mut cur: Option<(TickRatio, TickRatio)> = None;
    for (a, b) in iv {
        cur = match cur {
            Some((ca, cb)) if a <= cb => Some((ca, cb.max(b))),
            Some((ca, cb)) => {
                total += cb - ca;
                Some((a, b))
            }
            None => Some((a, b)),
        };
    }
    if let Some((ca, cb)) = cur {
        total += cb - ca;
    }
    total
}

/// Evaluate the cluster's current chain. `terminal` marks evaluations that
/// end a path (prune or exhaustion), where too many unchained events make the
/// state degenerate.
pub fn evaluate_cluster(
    cluster: &EventCluster,
    estimates: &[Option<u32>],
    pretentiousness: f64,
    terminal: bool,
) -> ClusterEvaluation {
    let prop = propagate_ticks(cluster, estimates);
    let duration = cluster.measure_duration as f64;

    let mut sq = 0.0;
    let mut count = 0usize;
    for (idx, tick) in prop.ticks.iter().enumerate() {
        if let (Some(t), Some(est)) = (tick, estimates.get(idx).copied().flatten()) {
            sq += (*t as f64 - est as f64).powi(2);
            count += 1;
        }
    }
    let tick_rmse = if count > 0 { (sq / count as f64).sqrt() } else { 0.0 };

    let points: Vec<Vec<(f64, f64)>> = prop
        .voices
        .iter()
        .map(|v| v.iter().map(|&i| (cluster.elements[i].x, prop.ticks[i].unwrap_or(0) as f64)).collect())
        .collect();
    let tick_twist = voice_twist(&points, duration);

    let mean_unused_time = if prop.voices.is_empty() {
        0.0
    } else {
        let unused: f64 = prop.covered.iter().map(|c| (duration - ratio_f64(*c)).max(0.0)).sum();
        unused / prop.voices.len() as f64
    };

    let residue_count = prop.residue.len();
    let voice_count = prop.voices.len();
    let residue_limit = 2usize.max(cluster.n() / 2);
    let degenerate = voice_count > MAX_VOICES || (terminal && residue_count > residue_limit);
    cluster_loss(
        LossTerms { tick_rmse, tick_twist, residue_count, voice_count, mean_unused_time, pretentiousness },
        degenerate,
    )
}

pub fn ratio_f64(r: TickRatio) -> f64 {
    *r.numer() as f64 / *r.denom() as f64
}
