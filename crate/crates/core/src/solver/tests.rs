use std::sync::atomic::{AtomicUsize, Ordering};

use super::*;
use crate::metrics::voices_match;
use crate::model::{feature, ElemType, EventElement, TimeSignature};
use crate::picker::{ElementPrediction, OraclePicker, Prediction, RuleBasedPicker};

fn ev(id: u32, staff: u32, x: f64, division: u8) -> EventElement {
    let mut e = EventElement::event(id, ElemType::Chord, staff, x, 1.0, 2.0);
    e.feature[feature::DIVISION + division as usize] = 1.0;
    e.predisposition.division_vector = [0.0; 9];
    e.predisposition.division_vector[division as usize] = 1.0;
    e
}

fn measure(clusters: Vec<EventCluster>, duration: u32) -> MeasureInstance {
    MeasureInstance {
        clusters,
        measure_index: 0,
        time_signature: TimeSignature::new(duration / 480, 4),
        duration,
        context_terms: vec![],
        warnings: vec![],
    }
}

/// Gold solution: `(id, tick, division)` per event and the voices.
fn gold(spec: &[(u32, u32, u8)], voices: Vec<Vec<u32>>, duration: u32) -> RegulationSolution {
    let events = spec
        .iter()
        .map(|&(id, tick, division)| EventAssignment {
            id,
            tick: Some(tick),
            division: Some(division),
            dots: Some(0),
            beam: Default::default(),
            stem_direction: Default::default(),
            grace: false,
            time_warp: None,
            full_measure: false,
            fake: false,
            staff: None,
            x: None,
        })
        .collect();
    let mut s = RegulationSolution {
        measure_index: 0,
        voices,
        duration,
        status: Status::Solved,
        events,
        adjacency: Default::default(),
    };
    s.rebuild_adjacency();
    s
}

type Script = Box<dyn Fn(&EventCluster, &PrefixState) -> Vec<f64> + Send + Sync>;

/// Picker with fixed per-query successor scores, counting its calls.
struct Scripted {
    calls: AtomicUsize,
    script: Script,
}

impl Scripted {
    fn new(script: impl Fn(&EventCluster, &PrefixState) -> Vec<f64> + Send + Sync + 'static) -> Self {
        Scripted { calls: AtomicUsize::new(0), script: Box::new(script) }
    }
}

impl Picker for Scripted {
    fn predict(&self, cluster: &EventCluster, prefix: &PrefixState) -> Result<Prediction, PickerError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let mut elements = Prediction::passthrough_elements(cluster);
        for ep in &mut elements {
            ep.division_vector = [0.0, 0.0, 0.9, 0.1, 0.0, 0.0, 0.0, 0.0, 0.0];
            ep.dots_vector = [1.0, 0.0, 0.0];
        }
        Ok(Prediction { successor: (self.script)(cluster, prefix), elements })
    }
}

/// Uniform over open slots.
fn uniform(cluster: &EventCluster, prefix: &PrefixState) -> Vec<f64> {
    let open = crate::picker::open_slots(cluster, prefix);
    let k = open.iter().filter(|&&o| o).count() as f64;
    open.iter().map(|&o| if o { 1.0 / k } else { 0.0 }).collect()
}

#[test]
fn quota_examples() {
    assert_eq!(quota(23, 40.0), 1000);
    assert_eq!(quota(5, 10.0), 117);
    assert_eq!(quota(100, 40.0), 57);
}

#[test]
fn cluster_quota_is_capped() {
    assert_eq!(cluster_quota(5, 40.0), 200);
    assert_eq!(cluster_quota(30, 40.0), 1000);
    assert_eq!(cluster_quota(0, 40.0), 1);
}

#[test]
fn branch_score_and_step() {
    assert_eq!(adjusted_probability(0.5, 0), 0.5);
    assert_eq!(adjusted_probability(0.5, 1), 0.25);
    assert!((adjusted_probability(0.9, 9) - 0.09).abs() < 1e-15);
    assert_eq!(pretentiousness_step(1.0), 0.0);
    assert!((pretentiousness_step((-2.0f64).exp()) - 2.0).abs() < 1e-12);
    assert_eq!(pretentiousness_step(1e-60), 100.0);
}

#[test]
fn voices_from_order_gaps() {
    let mut c = EventCluster::new(
        vec![ev(1, 0, 1.0, 2), ev(2, 0, 2.0, 2), ev(3, 0, 3.0, 2), ev(4, 0, 4.0, 2), ev(5, 0, 5.0, 2)],
        0,
        1920,
    );
    for (id, o) in [(1, 1), (2, 2), (3, 4), (4, 5)] {
        let i = c.index_of(id).unwrap();
        c.elements[i].order = Some(o);
    }
    assert_eq!(extract_voices(&c), vec![vec![1, 2], vec![3, 4]]);
}

#[test]
fn single_event_with_oracle() {
    let g = gold(&[(1, 0, 0)], vec![vec![1]], 1920);
    let mut c = EventCluster::new(vec![ev(1, 0, 1.0, 0)], 0, 1920);
    let (out, root) = search_cluster(&mut c, &OraclePicker::new(&g), 10, 0.02, 1.0).unwrap();
    assert_eq!(out.picker_calls, 1);
    assert_eq!(out.paths, 1);
    assert_eq!(extract_voices(&c), vec![vec![1]]);
    assert_eq!(c.elements[1].tick, Some(0));
    // Pass -> Division -> Dots -> leaf marker
    let root = root.unwrap();
    let div = &root.children[&1];
    assert_eq!(div.node_type, NodeType::Division);
    let dots = &div.children[&0];
    assert_eq!(dots.node_type, NodeType::Dots);
    assert!(dots.children[&0].sealed);
}

#[test]
fn quota_of_one_runs_one_path() {
    let picker = Scripted::new(uniform);
    let mut c = EventCluster::new(vec![ev(1, 0, 1.0, 2), ev(2, 0, 5.0, 2), ev(3, 0, 9.0, 2)], 0, 1440);
    let out = solve_cluster(&mut c, &picker, 1, -1.0, 1.0).unwrap();
    assert_eq!(out.paths, 1);
    assert_eq!(out.picker_calls, 1);
}

#[test]
fn picker_calls_stay_within_quota() {
    for q in [1, 2, 5, 17, 60] {
        let picker = Scripted::new(uniform);
        let mut c = EventCluster::new((1..=5).map(|i| ev(i, 0, 2.0 * i as f64, 2)).collect(), 0, 1920);
        let out = solve_cluster(&mut c, &picker, q, -1.0, 1.0).unwrap();
        assert!(out.picker_calls <= q);
        assert_eq!(picker.calls.load(Ordering::SeqCst), out.picker_calls);
    }
}

#[test]
fn unlikely_branch_is_pruned_after_one_step() {
    let picker = Scripted::new(|cluster, prefix| {
        let mut s = uniform(cluster, prefix);
        if prefix.chain().is_empty() {
            s = vec![0.0, 1.0 - 1e-60, 1e-60, 0.0];
        }
        s
    });
    let mut c = EventCluster::new(vec![ev(1, 0, 1.0, 2), ev(2, 0, 5.0, 2)], 0, 960);
    let (out, root) = search_cluster(&mut c, &picker, 1000, -1.0, 1.0).unwrap();
    let root = root.unwrap();
    assert!(out.root_sealed);
    let unlikely = &root.children[&2];
    assert_eq!(unlikely.pretentiousness, 100.0);
    assert!(unlikely.sealed);
    assert!(unlikely.children.is_empty());
    assert!(out.picker_calls <= 1000);
}

#[test]
fn rollback_restores_start_state() {
    let picker = Scripted::new(uniform);
    let mut c = EventCluster::new(vec![ev(1, 0, 1.0, 2), ev(2, 0, 5.0, 2)], 0, 960);
    let mut s = Searcher::new(&mut c, &picker, 100, 1.0);
    let mut root = s.seed().unwrap().unwrap();
    s.deduce(&mut root);
    assert!(s.cluster.elements[1..3].iter().any(|e| e.order.is_some()));
    s.rollback(0);
    assert!(s.cluster.elements[1..3].iter().all(|e| e.order.is_none() && e.division.is_none()));
    assert!(s.estimates.iter().all(Option::is_none));
}

#[test]
fn oracle_recovers_two_voices() {
    // bass staff of a 3/4 bar: [4,6] and [5,7,8,9,10]
    let spec = [(4, 0, 2), (5, 240, 3), (6, 480, 2), (7, 480, 3), (8, 720, 3), (9, 960, 3), (10, 1200, 3)];
    let g = gold(&spec, vec![vec![4, 6], vec![5, 7, 8, 9, 10]], 1440);
    let xs = [2.0, 10.0, 18.0, 18.0, 26.0, 34.0, 42.0];
    let events = spec.iter().zip(xs).map(|(&(id, _, d), x)| ev(id, 1, x, d)).collect();
    let m = measure(vec![EventCluster::new(events, 0, 1440)], 1440);
    let solve = solve_measure(&m, &OraclePicker::new(&g), &SolverConfig::default()).unwrap();
    let s = &solve.solution;
    assert!(voices_match(&s.voices, &g.voices), "{:?}", s.voices);
    for e in &g.events {
        let p = s.event(e.id).unwrap();
        assert_eq!((p.tick, p.division, p.dots), (e.tick, e.division, e.dots), "event {}", e.id);
    }
}

#[test]
fn staff_groups_never_share_voices() {
    let upper = EventCluster::new(vec![ev(1, 0, 1.0, 1), ev(2, 0, 9.0, 1)], 0, 1920);
    let lower = EventCluster::new(vec![ev(3, 1, 1.0, 0)], 1, 1920);
    let m = measure(vec![upper, lower], 1920);
    let solve = solve_measure(&m, &RuleBasedPicker::default(), &SolverConfig::default()).unwrap();
    for v in &solve.solution.voices {
        assert!(v.iter().all(|&id| id <= 2) || v.iter().all(|&id| id == 3));
    }
    assert_eq!(solve.solution.status, Status::Solved);
}

#[test]
fn grace_event_borrows_nearest_tick() {
    let mut grace = ev(4, 0, 4.6, 3);
    grace.predisposition.grace = 1.0;
    let events = vec![ev(1, 0, 1.0, 2), ev(2, 0, 5.0, 2), ev(3, 0, 9.0, 2), grace];
    let g = gold(&[(1, 0, 2), (2, 480, 2), (3, 960, 2)], vec![vec![1, 2, 3]], 1440);
    let m = measure(vec![EventCluster::new(events, 0, 1440)], 1440);
    let s = solve_measure(&m, &OraclePicker::new(&g), &SolverConfig::default()).unwrap().solution;
    assert_eq!(s.voices, vec![vec![1, 2, 3]]);
    let e = s.event(4).unwrap();
    assert!(e.grace);
    assert_eq!(e.tick, Some(480));
    assert_eq!(s.status, Status::Solved);
}

#[test]
fn monophonic_rule_based_is_solved() {
    let events = vec![ev(1, 0, 1.0, 2), ev(2, 0, 5.0, 2), ev(3, 0, 9.0, 2)];
    let m = measure(vec![EventCluster::new(events, 0, 1440)], 1440);
    let s = solve_measure(&m, &RuleBasedPicker::default(), &SolverConfig::default()).unwrap().solution;
    assert_eq!(s.voices, vec![vec![1, 2, 3]]);
    let ticks: Vec<_> = s.events.iter().map(|e| e.tick.unwrap()).collect();
    assert_eq!(ticks, vec![0, 480, 960]);
    assert_eq!(s.status, Status::Solved);
}

#[test]
fn multipass_tie_keeps_first_pass() {
    let events = vec![ev(1, 0, 1.0, 2), ev(2, 0, 5.0, 2), ev(3, 0, 9.0, 2)];
    let m = measure(vec![EventCluster::new(events, 0, 1440)], 1440);
    let picker = RuleBasedPicker::default();
    let config = SolverConfig { multipass_factors: vec![10.0, 40.0, 80.0], ..Default::default() };
    let best = solve_multipass(&m, &picker, &config).unwrap();
    let first = solve_measure(&m, &picker, &SolverConfig { quota_factor: 10.0, ..config.clone() }).unwrap();
    assert_eq!(best, first);
}

#[test]
fn pre_pass_overrides_duration() {
    struct Short;
    impl Picker for Short {
        fn predict(&self, cluster: &EventCluster, prefix: &PrefixState) -> Result<Prediction, PickerError> {
            let mut elements: Vec<ElementPrediction> = Prediction::passthrough_elements(cluster);
            let eos = cluster.eos_index();
            elements[eos].tick_estimate = Some(1440);
            Ok(Prediction { successor: uniform(cluster, prefix), elements })
        }
    }
    let events = vec![ev(1, 0, 1.0, 2), ev(2, 0, 5.0, 2), ev(3, 0, 9.0, 2)];
    let m = measure(vec![EventCluster::new(events, 0, 1920)], 1920);
    let mut clusters = m.clusters.clone();
    assert_eq!(pre_pass(&mut clusters, &Short), Some(1440));
    assert_eq!(clusters[0].measure_duration, 1440);
    let s = solve_measure(&m, &Short, &SolverConfig { pre_pass: true, ..Default::default() }).unwrap();
    assert_eq!(s.solution.duration, 1440);
}

#[test]
fn context_terms_take_following_ticks() {
    let events = vec![ev(1, 0, 2.0, 2), ev(2, 0, 6.0, 2), ev(3, 0, 10.0, 1)];
    let mut m = measure(vec![EventCluster::new(events, 0, 1920)], 1920);
    let term = |staff, x| ContextTerm { staff, x, kind: Some("clef".into()), tick: None };
    m.context_terms = vec![term(0, 0.5), term(0, 8.0), term(0, 30.0), term(1, 3.0)];
    let g = gold(&[(1, 0, 2), (2, 480, 2), (3, 960, 1)], vec![vec![1, 2, 3]], 1920);
    let terms = propagate_context_ticks(&m, &g);
    let ticks: Vec<_> = terms.iter().map(|t| t.tick.unwrap()).collect();
    assert_eq!(ticks, vec![0, 960, 1920, 0]);
}

#[test]
fn solving_is_deterministic() {
    let events = vec![ev(1, 0, 1.0, 3), ev(2, 0, 1.1, 2), ev(3, 0, 4.0, 3), ev(4, 0, 7.0, 2), ev(5, 0, 9.0, 3)];
    let m = measure(vec![EventCluster::new(events, 0, 1920)], 1920);
    let a = solve_measure(&m, &RuleBasedPicker::default(), &SolverConfig::default()).unwrap();
    let b = solve_measure(&m, &RuleBasedPicker::default(), &SolverConfig::default()).unwrap();
    assert_eq!(a, b);
}

#[test]
fn empty_cluster_is_trivial() {
    let mut c = EventCluster::new(vec![], 0, 1920);
    let out = solve_cluster(&mut c, &RuleBasedPicker::default(), 10, 0.02, 1.0).unwrap();
    assert_eq!(out.picker_calls, 0);
    assert_eq!(out.evaluation.loss, 0.0);
}
