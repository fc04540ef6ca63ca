//! Greedy column-sweep regulator: fast, deterministic, never backtracks.

use num_rational::Ratio;

use crate::evaluator::is_candidate;
use crate::model::{feature, EventCluster, EventElement, MeasureInstance, RegulationSolution};
use crate::solver::{assemble_solution, finalize_cluster};
use crate::timebase::{effective_duration, round_ticks, TickRatio, TimeWarp};

/// Half-width of the x interval used for column grouping, in staff spaces.
pub const COLUMN_HALF_WIDTH: f64 = 0.5;

/// Division class from the feature hints, falling back to the
/// predisposition when the hint block is empty.
pub fn hint_division(e: &EventElement) -> u8 {
    let block = &e.feature[feature::DIVISION..feature::DIVISION + 7];
    if block.iter().all(|&v| v <= 0.0) {
        e.predisposition.division_argmax()
    } else {
        e.division_hint()
    }
}

pub fn hint_dots(e: &EventElement) -> u8 {
    let block = &e.feature[feature::DOTS..feature::DOTS + 2];
    let division_block = &e.feature[feature::DIVISION..feature::DIVISION + 7];
    if block.iter().all(|&v| v <= 0.0) && division_block.iter().all(|&v| v <= 0.0) {
        e.predisposition.dots_argmax()
    } else {
        e.dots_hint()
    }
}

pub fn hint_warp(e: &EventElement) -> Option<TimeWarp> {
    (e.predisposition.time_warped > 0.5).then_some(TimeWarp::TRIPLET)
}

/// Duration implied by the hints alone.
pub fn hint_duration(e: &EventElement) -> TickRatio {
    effective_duration(hint_division(e), hint_dots(e), hint_warp(e)).unwrap_or_else(|_| Ratio::from_integer(0))
}

/// Group elements selected by `member` into x-overlap columns, left to right.
/// Each column lists element indices sorted by id.
pub fn columns(cluster: &EventCluster, member: impl Fn(&EventElement) -> bool) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..cluster.elements.len()).filter(|&i| member(&cluster.elements[i])).collect();
    idx.sort_by(|&a, &b| {
        let (ea, eb) = (&cluster.elements[a], &cluster.elements[b]);
        ea.x.total_cmp(&eb.x).then(ea.id.cmp(&eb.id))
    });
    let mut out: Vec<Vec<usize>> = Vec::new();
    let mut reach = f64::NEG_INFINITY;
    for i in idx {
        let x = cluster.elements[i].x;
        if x - COLUMN_HALF_WIDTH < reach && !out.is_empty() {
            out.last_mut().unwrap().push(i);
        } else {
            out.push(vec![i]);
        }
        reach = reach.max(x + COLUMN_HALF_WIDTH);
    }
    for col in &mut out {
        col.sort_by_key(|&i| cluster.elements[i].id);
    }
    out
}

/// Column ticks from a left-to-right sweep: each column starts at the
/// earliest end time still in the future, using hint durations.
pub fn sweep_ticks(cluster: &EventCluster, cols: &[Vec<usize>]) -> Vec<TickRatio> {
    let mut ticks = Vec::with_capacity(cols.len());
    let mut ends: Vec<TickRatio> = Vec::new();
    let mut tick = Ratio::from_integer(0);
    for (c, col) in cols.iter().enumerate() {
        if c > 0 {
            let prev = tick;
            tick =
                ends.iter().copied().filter(|&e| e > prev).min().or_else(|| ends.iter().copied().max()).unwrap_or(prev);
        }
        ticks.push(tick);
        ends.extend(col.iter().map(|&i| tick + hint_duration(&cluster.elements[i])));
    }
    ticks
}

struct Chain {
    members: Vec<usize>,
    end: TickRatio,
    staff: u32,
    y: f64,
    touched: usize,
}

/// Regulate one cluster greedily; writes orders, attributes and ticks into it.
pub fn greedy_cluster(cluster: &mut EventCluster) {
    for e in &mut cluster.elements {
        e.clear_solution();
    }
    let cols = columns(cluster, is_candidate);
    let ticks = sweep_ticks(cluster, &cols);
    let mut chains: Vec<Chain> = Vec::new();
    let mut estimates = vec![None; cluster.elements.len()];
    for (c, col) in cols.iter().enumerate() {
        let tick = ticks[c];
        for &i in col {
            let e = &cluster.elements[i];
            let pick = chains
                .iter()
                .enumerate()
                .filter(|(_, ch)| ch.end == tick && ch.touched != c + 1)
                .min_by(|(ia, a), (ib, b)| {
                    (a.staff != e.staff)
                        .cmp(&(b.staff != e.staff))
                        .then((a.y - e.y_center()).abs().total_cmp(&(b.y - e.y_center()).abs()))
                        .then(ia.cmp(ib))
                })
                .map(|(k, _)| k);
            let end = tick + hint_duration(e);
            match pick {
                Some(k) => {
                    let ch = &mut chains[k];
                    ch.members.push(i);
                    ch.end = end;
                    ch.staff = e.staff;
                    ch.y = e.y_center();
                    ch.touched = c + 1;
                }
                None => chains.push(Chain { members: vec![i], end, staff: e.staff, y: e.y_center(), touched: c + 1 }),
            }
            estimates[i] = Some(round_ticks(tick).max(0) as u32);
        }
    }
    let mut order = 1;
    for ch in &chains {
        for &i in &ch.members {
            let e = &mut cluster.elements[i];
            e.order = Some(order);
            e.division = Some(hint_division(e));
            e.dots = Some(hint_dots(e));
            e.time_warp = hint_warp(e);
            order += 1;
        }
        order += 1;
    }
    finalize_cluster(cluster, &estimates);
}

/// Greedy regulation of every cluster in a measure.
pub fn greedy_regulate(measure: &MeasureInstance) -> RegulationSolution {
    let mut clusters = measure.clusters.clone();
    for c in &mut clusters {
        greedy_cluster(c);
    }
    assemble_solution(measure.measure_index, measure.duration, &clusters)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ElemType, EventElement, MeasureInstance, Status, TimeSignature};

    fn ev(id: u32, x: f64, division: u8, y: f64) -> EventElement {
        let mut e = EventElement::event(id, ElemType::Chord, 0, x, y, y + 1.0);
        e.feature[feature::DIVISION + division as usize] = 1.0;
        e
    }

    fn measure(events: Vec<EventElement>, duration: u32, ts: TimeSignature) -> MeasureInstance {
        MeasureInstance {
            clusters: vec![EventCluster::new(events, 0, duration)],
            measure_index: 0,
            time_signature: ts,
            duration,
            context_terms: vec![],
            warnings: vec![],
        }
    }

    #[test]
    fn monophonic_quarters() {
        let m =
            measure(vec![ev(1, 1.0, 2, 0.0), ev(2, 5.0, 2, 0.0), ev(3, 9.0, 2, 0.0)], 1440, TimeSignature::new(3, 4));
        let s = greedy_regulate(&m);
        assert_eq!(s.voices, vec![vec![1, 2, 3]]);
        let ticks: Vec<_> = s.events.iter().map(|e| e.tick.unwrap()).collect();
        assert_eq!(ticks, vec![0, 480, 960]);
        assert_eq!(s.status, Status::Solved);
    }

    #[test]
    fn columns_overlap_chain() {
        let c = EventCluster::new(vec![ev(1, 1.0, 2, 0.0), ev(2, 1.6, 2, 4.0), ev(3, 5.0, 2, 0.0)], 0, 1920);
        assert_eq!(columns(&c, is_candidate), vec![vec![1, 2], vec![3]]);
    }

    #[test]
    fn two_voices_split_by_end_time() {
        // upper: half half; lower: quarter x4
        let events = vec![
            ev(1, 1.0, 1, 0.0),
            ev(2, 1.0, 2, 6.0),
            ev(3, 4.0, 2, 6.0),
            ev(4, 7.0, 1, 0.0),
            ev(5, 7.0, 2, 6.0),
            ev(6, 10.0, 2, 6.0),
        ];
        let s = greedy_regulate(&measure(events, 1920, TimeSignature::new(4, 4)));
        assert_eq!(s.voices, vec![vec![1, 4], vec![2, 3, 5, 6]]);
    }

    #[test]
    fn deterministic() {
        let m =
            measure(vec![ev(1, 1.0, 3, 0.0), ev(2, 3.0, 3, 1.0), ev(3, 3.1, 2, 5.0)], 1920, TimeSignature::new(4, 4));
        assert_eq!(greedy_regulate(&m), greedy_regulate(&m));
    }
}
