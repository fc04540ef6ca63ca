use serde::{Deserialize, Serialize};

use crate::baselines::{columns, hint_duration, sweep_ticks};
use crate::evaluator::{element_duration, is_candidate, propagate_ticks, ratio_f64};
use crate::model::{feature, ElemType, EventCluster, EventElement, DIVISION_CLASSES};
use crate::timebase::round_ticks;

use super::{normalize_scores, open_slots, ElementPrediction, Picker, PickerError, Prediction, PrefixState};

/// Fallback x advance between consecutive events of a voice, staff spaces.
pub const ADVANCE: f64 = 2.0;
/// Floor of the x continuation scale, staff spaces.
pub const SIGMA_X: f64 = 1.0;
/// Relative tolerance of the expected x advance.
pub const SIGMA_X_REL: f64 = 0.25;
/// Scale of the tick continuation score.
pub const SIGMA_T: f64 = 60.0;
/// Scale of the vertical proximity score, staff spaces.
pub const SIGMA_Y: f64 = 6.0;
/// Grid that interpolated tick estimates snap to.
pub const TICK_GRID: u32 = 60;

const SAME_COLUMN: f64 = 0.05;
const OTHER_STAFF: f64 = 0.5;
const EOS_OPEN: f64 = 0.3;
const EOS_FULL: f64 = 10.0;
const EOS_EMPTY: f64 = 1e6;

/// How tick estimates are anchored.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum TickAnchors {
    /// Column sweep over hint durations, interpolation where it overflows.
    #[default]
    Sweep,
    /// Straight interpolation between the BOS and EOS anchors.
    Interpolate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", default)]
pub struct RuleConfig {
    pub tick_anchors: TickAnchors,
}

/// Heuristic picker: horizontal grouping, left-to-right continuation,
/// anchored tick estimates and pass-through hint posteriors.
#[derive(Debug, Clone, Copy, Default)]
pub struct RuleBasedPicker {
    pub config: RuleConfig,
}

fn snap(value: f64, grid: u32) -> u32 {
    let g = grid as f64;
    ((value / g).round() * g).max(0.0) as u32
}

/// Tick by linear interpolation over x between BOS at the leftmost event and
/// EOS one median gap past the rightmost, snapped to the grid.
pub fn interpolated_tick(x: f64, x_lo: f64, x_hi: f64, duration: u32) -> u32 {
    if x_hi <= x_lo {
        return 0;
    }
    let t = (x - x_lo) / (x_hi - x_lo) * duration as f64;
    snap(t.clamp(0.0, duration as f64), TICK_GRID).min(duration)
}

fn interpolation_anchors(cluster: &EventCluster) -> (f64, f64) {
    let mut xs: Vec<f64> = cluster.elements.iter().filter(|e| is_candidate(e)).map(|e| e.x).collect();
    xs.sort_by(f64::total_cmp);
    xs.dedup_by(|a, b| (*a - *b).abs() < 0.5);
    let (Some(&lo), Some(&hi)) = (xs.first(), xs.last()) else {
        return (0.0, 0.0);
    };
    let mut gaps: Vec<f64> = xs.windows(2).map(|w| w[1] - w[0]).collect();
    gaps.sort_by(f64::total_cmp);
    let median = gaps.get(gaps.len() / 2).copied().unwrap_or(ADVANCE);
    (lo, hi + median)
}

impl RuleBasedPicker {
    pub fn new(config: RuleConfig) -> Self {
        RuleBasedPicker { config }
    }

    /// Tick estimate per element; `None` for sentinels and excluded events.
    pub fn tick_estimates(&self, cluster: &EventCluster) -> Vec<Option<u32>> {
        let duration = cluster.measure_duration;
        let (lo, hi) = interpolation_anchors(cluster);
        let mut out: Vec<Option<u32>> = cluster
            .elements
            .iter()
            .map(|e| is_candidate(e).then(|| interpolated_tick(e.x, lo, hi, duration)))
            .collect();
        if self.config.tick_anchors == TickAnchors::Sweep {
            let cols = columns(cluster, is_candidate);
            for (col, tick) in cols.iter().zip(sweep_ticks(cluster, &cols)) {
                let t = round_ticks(tick);
                if t >= 0 && t < duration as i64 {
                    for &i in col {
                        out[i] = Some(t as u32);
                    }
                }
            }
        }
        out
    }

    fn element(e: &EventElement, estimate: Option<u32>, duration: u32) -> ElementPrediction {
        let mut p = ElementPrediction::from(&e.predisposition);
        match e.elem_type {
            ElemType::Eos => p.tick_estimate = Some(duration),
            ElemType::Chord | ElemType::Rest => {
                let hints = &e.feature[feature::DIVISION..feature::DIVISION + 7];
                if hints.iter().any(|&v| v > 0.0) {
                    let mut v = [0.0; DIVISION_CLASSES];
                    for (d, &h) in v.iter_mut().zip(hints) {
                        *d = h.max(0.0);
                    }
                    let total: f64 = v.iter().sum();
                    v.iter_mut().for_each(|d| *d /= total);
                    p.division_vector = v;
                    let f1 = e.feature[feature::DOTS].clamp(0.0, 1.0);
                    let f2 = e.feature[feature::DOTS + 1].clamp(0.0, 1.0);
                    let mut dots = [(1.0 - f1).max(0.0), (f1 - f2).max(0.0), f2];
                    let total: f64 = dots.iter().sum();
                    if total > 0.0 {
                        dots.iter_mut().for_each(|d| *d /= total);
                        p.dots_vector = dots;
                    } else {
                        p.dots_vector = [1.0, 0.0, 0.0];
                    }
                }
                p.tick_estimate = estimate;
            }
            _ => {}
        }
        p
    }
}

impl Picker for RuleBasedPicker {
    fn predict(&self, cluster: &EventCluster, prefix: &PrefixState) -> Result<Prediction, PickerError> {
        prefix.check(cluster)?;
        let estimates = self.tick_estimates(cluster);
        let duration = cluster.measure_duration;

        // Work on a copy whose orders follow the prefix; chained attributes
        // that are not decided yet fall back to the hints.
        let mut state = cluster.clone();
        for e in &mut state.elements {
            e.order = prefix.fixed_orders.get(&e.id).copied();
        }
        let open = open_slots(&state, prefix);
        let residue = open.iter().zip(&state.elements).filter(|(&o, e)| o && e.is_event()).count();
        let eos = state.eos_index();
        let mut scores = vec![0.0; state.elements.len()];

        if residue == 0 {
            scores[eos] = EOS_EMPTY;
        } else {
            let tail = prefix.tail().and_then(|id| state.index_of(id));
            let prop = propagate_ticks(&state, &estimates);
            let (lo, hi) = interpolation_anchors(&state);
            let pace = if hi > lo { (hi - lo) / duration as f64 } else { 0.0 };
            // expected successor x and tick, with the x tolerance
            let (x_e, tau_e, sigma_x) = match tail {
                Some(t) => {
                    let e = &state.elements[t];
                    let d = ratio_f64(if e.division.is_some() { element_duration(e) } else { hint_duration(e) });
                    let tick = prop.ticks[t].unwrap_or(0) as f64;
                    let advance = if pace > 0.0 { pace * d } else { ADVANCE };
                    (e.x + advance, tick + d, SIGMA_X.max(SIGMA_X_REL * advance))
                }
                None => {
                    let left = state
                        .elements
                        .iter()
                        .zip(&open)
                        .filter(|(e, &o)| o && e.is_event())
                        .map(|(e, _)| e.x)
                        .fold(f64::INFINITY, f64::min);
                    (left, 0.0, SIGMA_X)
                }
            };
            let tail_column = tail.map(|t| state.elements[t].x);
            let mut best = 0.0f64;
            for (i, e) in state.elements.iter().enumerate() {
                if !open[i] || !e.is_event() {
                    continue;
                }
                let t_u = estimates[i].unwrap_or(0) as f64;
                let mut s = (-(e.x - x_e).abs() / sigma_x).exp() * (-(t_u - tau_e).abs() / SIGMA_T).exp();
                if let Some(t) = tail {
                    let te = &state.elements[t];
                    if tail_column.is_some_and(|cx| (e.x - cx).abs() < 1.0) {
                        s *= SAME_COLUMN;
                    }
                    if te.staff != e.staff {
                        s *= OTHER_STAFF;
                    }
                    s *= (-(e.y_center() - te.y_center()).abs() / SIGMA_Y).exp();
                }
                scores[i] = s;
                best = best.max(s);
            }
            let full = tail.is_some() && tau_e >= duration as f64;
            scores[eos] = best.max(f64::MIN_POSITIVE) * if full { EOS_FULL } else { EOS_OPEN };
        }
        normalize_scores(&mut scores, &open);

        let elements = state.elements.iter().zip(&estimates).map(|(e, &t)| Self::element(e, t, duration)).collect();
        Ok(Prediction { successor: scores, elements })
    }
}
