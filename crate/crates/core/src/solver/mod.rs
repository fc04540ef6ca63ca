//! Probability-guided tree search over Pass / Division / Dots decisions.

mod search;

use log::{debug, warn};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::evaluator::{propagate_ticks, ClusterEvaluation};
use crate::model::{
    Adjacency, ContextTerm, EventAssignment, EventCluster, MeasureInstance, RegulationSolution, Status,
};
use crate::picker::{Picker, PickerError, PrefixState};
use crate::quality::evaluate_measure;
use crate::timebase::{TimeWarp, WHOLE};

pub use search::{NodeType, SearchNode, Searcher};

/// Hard cap on picker calls per cluster.
pub const Q_MAX: usize = 1000;

#[derive(Debug, Error)]
pub enum SolverError {
    #[error("picker failed on the root query: {0}")]
    Picker(#[from] PickerError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", default)]
pub struct SolverConfig {
    pub quota_factor: f64,
    pub pt_factor: f64,
    pub stop_loss: f64,
    pub multipass_factors: Vec<f64>,
    pub pre_pass: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            quota_factor: 40.0,
            pt_factor: 1.0,
            stop_loss: 0.02,
            multipass_factors: vec![10.0, 40.0, 80.0],
            pre_pass: false,
        }
    }
}

/// Budget formula `min(⌈(n+1) f ln(n+2)⌉, ⌈Q_max · min(1, (24/(n+1))²)⌉)`.
pub fn quota(n: usize, f: f64) -> usize {
    let n1 = (n + 1) as f64;
    let growth = (n1 * f * ((n + 2) as f64).ln()).ceil();
    let cap = (Q_MAX as f64 * (24.0 / n1).powi(2).min(1.0)).ceil();
    growth.min(cap) as usize
}

/// Per-cluster quota used when solving a measure: `min(⌈n f⌉, Q_max)`.
pub fn cluster_quota(n: usize, f: f64) -> usize {
    ((n as f64 * f).ceil() as usize).clamp(1, Q_MAX)
}

/// Branch score `p / (visits + 1)`.
pub fn adjusted_probability(p: f64, visits: u32) -> f64 {
    p / (visits as f64 + 1.0)
}

/// Pretentiousness added when a branch of probability `p` is taken.
pub fn pretentiousness_step(p: f64) -> f64 {
    if p <= 0.0 || p.is_nan() {
        return 100.0;
    }
    (-p.ln()).clamp(0.0, 100.0)
}

/// Counters and the best evaluation of one cluster solve.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct ClusterOutcome {
    pub evaluation: ClusterEvaluation,
    pub picker_calls: usize,
    pub paths: usize,
    pub picker_errors: usize,
    pub root_sealed: bool,
}

/// order, division, dots and warp of one element
type ElementFields = (Option<u32>, Option<u8>, Option<u8>, Option<TimeWarp>);

#[derive(Clone)]
struct Snapshot {
    fields: Vec<ElementFields>,
    estimates: Vec<Option<u32>>,
}

fn snapshot(cluster: &EventCluster, estimates: &[Option<u32>]) -> Snapshot {
    Snapshot {
        fields: cluster.elements.iter().map(|e| (e.order, e.division, e.dots, e.time_warp)).collect(),
        estimates: estimates.to_vec(),
    }
}

fn restore(cluster: &mut EventCluster, s: &Snapshot) {
    for (e, &(order, division, dots, warp)) in cluster.elements.iter_mut().zip(&s.fields) {
        e.order = order;
        e.division = division;
        e.dots = dots;
        e.time_warp = warp;
    }
}

/// Run the search on one cluster and keep the search tree for inspection.
/// The best state found is applied to `cluster` and finalized.
pub fn search_cluster<P: Picker + ?Sized>(
    cluster: &mut EventCluster,
    picker: &P,
    quota: usize,
    stop_loss: f64,
    lambda: f64,
) -> Result<(ClusterOutcome, Option<SearchNode>), SolverError> {
    if cluster.n() == 0 {
        for e in &mut cluster.elements {
            e.clear_solution();
        }
        finalize_cluster(cluster, &[]);
        return Ok((ClusterOutcome { root_sealed: true, ..Default::default() }, None));
    }
    let mut searcher = Searcher::new(cluster, picker, quota, lambda);
    let Some(mut root) = searcher.seed()? else {
        // zero budget: nothing can be chained
        let eval = crate::evaluator::evaluate_cluster(searcher.cluster, &searcher.estimates, 0.0, true);
        let outcome = ClusterOutcome { evaluation: eval, ..Default::default() };
        let estimates = searcher.estimates.clone();
        finalize_cluster(searcher.cluster, &estimates);
        return Ok((outcome, None));
    };

    let mut best: Option<(ClusterEvaluation, Snapshot)> = None;
    let mut paths = 0;
    while (paths == 0 || searcher.budget_left() > 0) && !root.sealed {
        searcher.rollback(0);
        let eval = searcher.deduce(&mut root);
        paths += 1;
        if best.as_ref().is_none_or(|(b, _)| eval.loss < b.loss) {
            best = Some((eval, snapshot(searcher.cluster, &searcher.estimates)));
            if eval.loss <= stop_loss {
                break;
            }
        }
    }
    let (evaluation, snap) = best.expect("at least one path");
    debug!(
        "cluster solved: loss {:.4}, {} paths, {} picker calls, root sealed {}",
        evaluation.loss, paths, searcher.picker_calls, root.sealed
    );
    let outcome = ClusterOutcome {
        evaluation,
        picker_calls: searcher.picker_calls,
        paths,
        picker_errors: searcher.picker_errors,
        root_sealed: root.sealed,
    };
    drop(searcher);
    restore(cluster, &snap);
    finalize_cluster(cluster, &snap.estimates);
    Ok((outcome, Some(root)))
}

/// Solve one cluster within `quota` picker calls.
pub fn solve_cluster<P: Picker + ?Sized>(
    cluster: &mut EventCluster,
    picker: &P,
    quota: usize,
    stop_loss: f64,
    lambda: f64,
) -> Result<ClusterOutcome, SolverError> {
    search_cluster(cluster, picker, quota, stop_loss, lambda).map(|(o, _)| o)
}

/// Solution of a whole measure plus the search bookkeeping behind it.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasureSolve {
    pub solution: RegulationSolution,
    /// Sum of the best cluster losses.
    pub loss: f64,
    pub clusters: Vec<ClusterOutcome>,
    /// The solved clusters (final attributes applied).
    pub solved: Vec<EventCluster>,
}

/// One glimpse query per cluster with only BOS fixed; refreshes tick
/// estimates and exclusion flags, and re-estimates the measure duration when
/// the EOS estimate disagrees with the signature by at least an eighth.
pub fn pre_pass<P: Picker + ?Sized>(clusters: &mut [EventCluster], picker: &P) -> Option<u32> {
    let mut duration = None;
    for cluster in clusters.iter_mut() {
        for e in &mut cluster.elements {
            e.clear_solution();
        }
        let pred = match picker.predict(cluster, &PrefixState::initial()) {
            Ok(p) if p.elements.len() == cluster.elements.len() => p,
            Ok(_) => {
                warn!("pre-pass prediction has the wrong length; skipped");
                continue;
            }
            Err(err) => {
                warn!("pre-pass query failed: {err}");
                continue;
            }
        };
        for (e, ep) in cluster.elements.iter_mut().zip(&pred.elements) {
            if e.is_event() {
                e.predisposition.tick_estimate = ep.tick_estimate;
                e.predisposition.full_measure = ep.full_measure;
                e.predisposition.fake = ep.fake;
            }
        }
        let eos = cluster.eos_index();
        if let Some(t) = pred.elements[eos].tick_estimate {
            if t > 0 && (t as i64 - cluster.measure_duration as i64).abs() >= (WHOLE / 8) as i64 {
                debug!("pre-pass: duration {} -> {t}", cluster.measure_duration);
                cluster.measure_duration = t;
                cluster.time8th = crate::model::time8th_for(t);
                duration.get_or_insert(t);
            }
        }
    }
    duration
}

/// Solve every cluster of the measure with the per-cluster quota
/// `min(⌈n f⌉, 1000)` and assemble the measure solution.
pub fn solve_measure<P: Picker + ?Sized>(
    measure: &MeasureInstance,
    picker: &P,
    config: &SolverConfig,
) -> Result<MeasureSolve, SolverError> {
    let mut clusters = measure.clusters.clone();
    let mut duration = measure.duration;
    if config.pre_pass {
        if let Some(d) = pre_pass(&mut clusters, picker) {
            duration = d;
        }
    }
    let mut outcomes = Vec::with_capacity(clusters.len());
    for c in &mut clusters {
        let q = cluster_quota(c.n(), config.quota_factor);
        outcomes.push(solve_cluster(c, picker, q, config.stop_loss, config.pt_factor)?);
    }
    let solution = assemble_solution(measure.measure_index, duration, &clusters);
    Ok(MeasureSolve {
        solution,
        loss: outcomes.iter().map(|o| o.evaluation.loss).sum(),
        clusters: outcomes,
        solved: clusters,
    })
}

/// Run one pass per configured quota factor and keep the lowest total loss;
/// ties keep the earlier pass.
pub fn solve_multipass<P: Picker + ?Sized>(
    measure: &MeasureInstance,
    picker: &P,
    config: &SolverConfig,
) -> Result<MeasureSolve, SolverError> {
    let mut best: Option<MeasureSolve> = None;
    let factors =
        if config.multipass_factors.is_empty() { vec![config.quota_factor] } else { config.multipass_factors.clone() };
    for f in factors {
        let cfg = SolverConfig { quota_factor: f, ..config.clone() };
        let solve = solve_measure(measure, picker, &cfg)?;
        debug!("multipass f={f}: loss {:.4}", solve.loss);
        if best.as_ref().is_none_or(|b| solve.loss < b.loss) {
            best = Some(solve);
        }
    }
    Ok(best.expect("at least one pass"))
}

/// Voices as id lists: consecutive orders share a voice, a larger gap
/// starts a new one. Unordered events belong to no voice.
pub fn extract_voices(cluster: &EventCluster) -> Vec<Vec<u32>> {
    let mut chained: Vec<(u32, u32)> =
        cluster.elements.iter().filter(|e| e.is_event()).filter_map(|e| e.order.map(|o| (o, e.id))).collect();
    chained.sort_unstable();
    let mut voices: Vec<Vec<u32>> = Vec::new();
    let mut last: Option<u32> = None;
    for (o, id) in chained {
        if last.is_none_or(|l| o != l + 1) {
            voices.push(Vec::new());
        }
        voices.last_mut().unwrap().push(id);
        last = Some(o);
    }
    voices
}

/// Largest x distance at which an unchained event borrows a chained tick.
pub const SNAP_DISTANCE: f64 = 2.0;
/// Grid used when an unchained event has no chained neighbor.
pub const SNAP_GRID: u32 = 60;

/// Post-search attribute finalization: ticks from propagation, snapped
/// ticks for residue and fake events, tick borrowing for grace and
/// full-measure events, and beam/stem/grace/warp from the hints.
pub fn finalize_cluster(cluster: &mut EventCluster, estimates: &[Option<u32>]) {
    let prop = propagate_ticks(cluster, estimates);
    let chained: Vec<(f64, u32)> =
        prop.voices.iter().flatten().map(|&i| (cluster.elements[i].x, prop.ticks[i].unwrap_or(0))).collect();
    let (x_lo, x_hi) = cluster.event_x_range();
    let duration = cluster.measure_duration;
    let nearest = |x: f64, limit: f64| -> Option<u32> {
        chained
            .iter()
            .map(|&(cx, t)| ((cx - x).abs(), t))
            .filter(|&(d, _)| d <= limit)
            .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)))
            .map(|(_, t)| t)
    };
    let grid = |x: f64| -> u32 {
        let frac = if x_hi > x_lo { ((x - x_lo) / (x_hi - x_lo)).clamp(0.0, 1.0) } else { 0.0 };
        let t = (frac * duration as f64 / SNAP_GRID as f64).round() as u32 * SNAP_GRID;
        t.min(duration.saturating_sub(1) / SNAP_GRID * SNAP_GRID)
    };

    for (i, e) in cluster.elements.iter_mut().enumerate() {
        if !e.is_event() {
            continue;
        }
        e.beam = e.beam_hint();
        e.stem_direction = e.stem_hint();
        if e.order.is_some() {
            e.tick = prop.ticks[i];
            e.grace = false;
            e.full_measure = false;
            e.fake = false;
            continue;
        }
        e.division = e.division.or(Some(e.predisposition.division_argmax()));
        e.dots = e.dots.or(Some(e.predisposition.dots_argmax()));
        if e.time_warp.is_none() && e.predisposition.time_warped > 0.5 {
            e.time_warp = Some(TimeWarp::TRIPLET);
        }
        let p = &e.predisposition;
        if p.grace > 0.5 || p.full_measure > 0.5 {
            e.grace = p.grace > 0.5;
            e.full_measure = !e.grace;
            e.fake = false;
            e.tick = Some(nearest(e.x, f64::INFINITY).unwrap_or(0));
        } else {
            e.fake = true;
            e.tick = Some(nearest(e.x, SNAP_DISTANCE).unwrap_or_else(|| grid(e.x)));
        }
    }
}

/// Build the measure solution from solved clusters; status comes from the
/// quality evaluation (Solved if fine, Issue if not fine, Fatal on error).
pub fn assemble_solution(measure_index: i64, duration: u32, clusters: &[EventCluster]) -> RegulationSolution {
    let voices: Vec<Vec<u32>> = clusters.iter().flat_map(extract_voices).collect();
    let mut events: Vec<EventAssignment> =
        clusters.iter().flat_map(|c| c.events().map(EventAssignment::from_element)).collect();
    events.sort_by_key(|e| e.id);
    let ids: Vec<u32> = events.iter().map(|e| e.id).collect();
    let mut solution = RegulationSolution {
        measure_index,
        adjacency: Adjacency::from_voices(&ids, &voices),
        voices,
        duration,
        status: Status::Solved,
        events,
    };
    let report = evaluate_measure(&solution);
    solution.status = report.status();
    solution
}

/// Give each context term the tick of the nearest following in-voice event
/// on its staff; the measure duration when none follows, 0 on a staff with
/// no events.
pub fn propagate_context_ticks(measure: &MeasureInstance, solution: &RegulationSolution) -> Vec<ContextTerm> {
    let in_voice: std::collections::BTreeSet<u32> = solution.voices.iter().flatten().copied().collect();
    let placed: Vec<(u32, f64, u32)> = measure
        .events()
        .filter(|e| in_voice.contains(&e.id))
        .filter_map(|e| solution.event(e.id).and_then(|a| a.tick).map(|t| (e.staff, e.x, t)))
        .collect();
    measure
        .context_terms
        .iter()
        .map(|term| {
            let on_staff: Vec<&(u32, f64, u32)> = placed.iter().filter(|p| p.0 == term.staff).collect();
            let tick = if on_staff.is_empty() {
                0
            } else {
                on_staff
                    .iter()
                    .filter(|p| p.1 >= term.x)
                    .min_by(|a, b| a.1.total_cmp(&b.1).then(a.2.cmp(&b.2)))
                    .map(|p| p.2)
                    .unwrap_or(solution.duration)
            };
            ContextTerm { tick: Some(tick), ..term.clone() }
        })
        .collect()
}

#[cfg(test)]
mod tests;
