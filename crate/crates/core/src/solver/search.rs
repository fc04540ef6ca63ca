use std::collections::BTreeMap;

use log::debug;

use crate::evaluator::{evaluate_cluster, is_candidate, ClusterEvaluation};
use crate::model::{ElemType, EventCluster};
use crate::picker::{ElementPrediction, Picker, PickerError, Prediction, PrefixState};
use crate::timebase::TimeWarp;

use super::{adjusted_probability, pretentiousness_step};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeType {
    Pass,
    Division,
    Dots,
}

/// One decision point of the search tree.
#[derive(Debug, Clone)]
pub struct SearchNode {
    pub node_type: NodeType,
    /// Raw branch probabilities (already masked for Pass nodes).
    pub posterior: Vec<f64>,
    pub children: BTreeMap<usize, SearchNode>,
    pub visits: u32,
    pub sealed: bool,
    /// Accumulated path pretentiousness on arrival at this node.
    pub pretentiousness: f64,
    /// Next order to assign (Pass) or the order of `elem` (Division, Dots).
    pub tip: u32,
    /// Element being decided by Division and Dots nodes.
    pub elem: usize,
    /// Pass nodes: the per-element posteriors of the query that created them.
    elements: Vec<ElementPrediction>,
    /// Division nodes: the dots posterior handed to their children.
    dots_posterior: Vec<f64>,
}

impl SearchNode {
    fn new(node_type: NodeType, posterior: Vec<f64>, pretentiousness: f64, tip: u32, elem: usize) -> Self {
        SearchNode {
            node_type,
            posterior,
            children: BTreeMap::new(),
            visits: 0,
            sealed: false,
            pretentiousness,
            tip,
            elem,
            elements: Vec::new(),
            dots_posterior: Vec::new(),
        }
    }

    /// A sealed placeholder for a branch that ended in a leaf.
    fn leaf(node_type: NodeType, pretentiousness: f64, tip: u32, elem: usize) -> Self {
        let mut n = Self::new(node_type, Vec::new(), pretentiousness, tip, elem);
        n.sealed = true;
        n.visits = 1;
        n
    }

    /// Visit count, or `None` once sealed.
    pub fn access_count(&self) -> Option<u32> {
        (!self.sealed).then_some(self.visits)
    }

    /// Number of nodes in this subtree.
    pub fn size(&self) -> usize {
        1 + self.children.values().map(SearchNode::size).sum::<usize>()
    }

    /// Branch with the highest adjusted probability; lowest index wins ties.
    fn select(&self) -> Option<usize> {
        let mut best: Option<(usize, f64)> = None;
        for (i, &p) in self.posterior.iter().enumerate() {
            if p <= 0.0 {
                continue;
            }
            let visits = match self.children.get(&i) {
                Some(c) if c.sealed => continue,
                Some(c) => c.visits,
                None => 0,
            };
            let score = adjusted_probability(p, visits);
            if best.is_none_or(|(_, b)| score > b) {
                best = Some((i, score));
            }
        }
        best.map(|(i, _)| i)
    }
}

#[derive(Debug, Clone, Copy)]
struct Undo {
    idx: usize,
    order: Option<u32>,
    division: Option<u8>,
    dots: Option<u8>,
    warp: Option<TimeWarp>,
    estimate: Option<u32>,
}

/// Mutable search context over one cluster: in-place state with an undo log.
pub struct Searcher<'a, P: Picker + ?Sized> {
    pub cluster: &'a mut EventCluster,
    picker: &'a P,
    lambda: f64,
    budget: usize,
    pub picker_calls: usize,
    pub picker_errors: usize,
    pub estimates: Vec<Option<u32>>,
    undo: Vec<Undo>,
}

/// Outcome of asking for a new Pass node.
enum Query {
    Ready(Prediction),
    Exhausted,
    Failed(PickerError),
}

impl<'a, P: Picker + ?Sized> Searcher<'a, P> {
    pub fn new(cluster: &'a mut EventCluster, picker: &'a P, budget: usize, lambda: f64) -> Self {
        for e in &mut cluster.elements {
            e.clear_solution();
        }
        let n = cluster.elements.len();
        Searcher {
            cluster,
            picker,
            lambda,
            budget,
            picker_calls: 0,
            picker_errors: 0,
            estimates: vec![None; n],
            undo: Vec::new(),
        }
    }

    pub fn budget_left(&self) -> usize {
        self.budget
    }

    /// Build the root Pass node from the seed query.
    pub fn seed(&mut self) -> Result<Option<SearchNode>, PickerError> {
        match self.query(1) {
            Query::Ready(p) => Ok(Some(self.pass_node(1, 0.0, p))),
            Query::Exhausted => Ok(None),
            Query::Failed(e) => Err(e),
        }
    }

    fn query(&mut self, tip: u32) -> Query {
        if self.budget == 0 {
            return Query::Exhausted;
        }
        self.budget -= 1;
        self.picker_calls += 1;
        let prefix = PrefixState::from_cluster(self.cluster, tip);
        match self.picker.predict(self.cluster, &prefix) {
            Ok(p) if p.successor.len() == self.cluster.elements.len() && p.elements.len() == p.successor.len() => {
                Query::Ready(p)
            }
            Ok(p) => Query::Failed(PickerError::Malformed(format!(
                "prediction has {} entries for {} elements",
                p.successor.len(),
                self.cluster.elements.len()
            ))),
            Err(e) => Query::Failed(e),
        }
    }

    fn residue(&self) -> usize {
        self.cluster.elements.iter().filter(|e| is_candidate(e) && e.order.is_none()).count()
    }

    /// Pass node with the successor restricted to open slots. EOS is closed
    /// at a voice start while events remain, so voices are never empty.
    fn pass_node(&self, tip: u32, pt: f64, prediction: Prediction) -> SearchNode {
        let at_start = PrefixState::from_cluster(self.cluster, tip).tail().is_none();
        let residue = self.residue();
        let mut posterior: Vec<f64> = self
            .cluster
            .elements
            .iter()
            .zip(&prediction.successor)
            .map(|(e, &p)| {
                let open = match e.elem_type {
                    ElemType::Eos => !(at_start && residue > 0),
                    _ => is_candidate(e) && e.order.is_none(),
                };
                if open && p.is_finite() && p > 0.0 {
                    p
                } else {
                    0.0
                }
            })
            .collect();
        let total: f64 = posterior.iter().sum();
        if total > 0.0 {
            posterior.iter_mut().for_each(|p| *p /= total);
        }
        let mut node = SearchNode::new(NodeType::Pass, posterior, pt, tip, 0);
        node.elements = prediction.elements;
        node
    }

    fn record(&mut self, idx: usize) {
        let e = &self.cluster.elements[idx];
        self.undo.push(Undo {
            idx,
            order: e.order,
            division: e.division,
            dots: e.dots,
            warp: e.time_warp,
            estimate: self.estimates[idx],
        });
    }

    pub fn mark(&self) -> usize {
        self.undo.len()
    }

    /// Undo every change made after `mark`.
    pub fn rollback(&mut self, mark: usize) {
        while self.undo.len() > mark {
            let u = self.undo.pop().unwrap();
            let e = &mut self.cluster.elements[u.idx];
            e.order = u.order;
            e.division = u.division;
            e.dots = u.dots;
            e.time_warp = u.warp;
            self.estimates[u.idx] = u.estimate;
        }
    }

    fn evaluate(&self, pt: f64, terminal: bool) -> ClusterEvaluation {
        evaluate_cluster(self.cluster, &self.estimates, pt, terminal)
    }

    /// Follow one path from `v` down to a leaf, prune point or dead end.
    pub fn deduce(&mut self, v: &mut SearchNode) -> ClusterEvaluation {
        v.visits += 1;
        let Some(ni) = v.select() else {
            v.sealed = true;
            return self.evaluate(v.pretentiousness, true);
        };
        let p = v.posterior[ni];
        let pt = v.pretentiousness + pretentiousness_step(p);
        if pt > 100.0 * self.lambda {
            debug!("prune at {:?} node, tip {}, pt {pt:.2}", v.node_type, v.tip);
            v.sealed = true;
            return self.evaluate(v.pretentiousness, true);
        }

        let eos = self.cluster.eos_index();
        let mut self_eval = None;
        let mark;
        match v.node_type {
            NodeType::Pass if ni == eos => {
                let eval = self.evaluate(pt, false);
                if eval.residue_count == 0 || eval.fatal {
                    v.children.insert(ni, SearchNode::leaf(NodeType::Pass, pt, v.tip + 1, 0));
                    return eval;
                }
                mark = self.mark();
                if !v.children.contains_key(&ni) {
                    match self.query(v.tip + 1) {
                        Query::Ready(pred) => {
                            let child = self.pass_node(v.tip + 1, pt, pred);
                            v.children.insert(ni, child);
                        }
                        Query::Exhausted => return self.evaluate(pt, true),
                        Query::Failed(err) => {
                            debug!("picker failed: {err}");
                            self.picker_errors += 1;
                            v.children.insert(ni, SearchNode::leaf(NodeType::Pass, pt, v.tip + 1, 0));
                            return self.evaluate(pt, true);
                        }
                    }
                }
                self_eval = Some(eval);
            }
            NodeType::Pass => {
                self.record(ni);
                let ep = &v.elements[ni];
                let (estimate, warp) = (ep.tick_estimate, ep.warp());
                let e = &mut self.cluster.elements[ni];
                e.order = Some(v.tip);
                e.time_warp = warp;
                self.estimates[ni] = estimate;
                mark = self.mark();
                if !v.children.contains_key(&ni) {
                    let mut child = SearchNode::new(NodeType::Division, ep.division_vector.to_vec(), pt, v.tip, ni);
                    child.dots_posterior = ep.dots_vector.to_vec();
                    v.children.insert(ni, child);
                }
            }
            NodeType::Division => {
                self.record(v.elem);
                self.cluster.elements[v.elem].division = Some(ni as u8);
                mark = self.mark();
                if !v.children.contains_key(&ni) {
                    let child = SearchNode::new(NodeType::Dots, v.dots_posterior.clone(), pt, v.tip, v.elem);
                    v.children.insert(ni, child);
                }
            }
            NodeType::Dots => {
                self.record(v.elem);
                self.cluster.elements[v.elem].dots = Some(ni as u8);
                let eval = self.evaluate(pt, false);
                if eval.residue_count == 0 || eval.fatal {
                    v.children.insert(ni, SearchNode::leaf(NodeType::Pass, pt, v.tip + 1, 0));
                    return eval;
                }
                mark = self.mark();
                if !v.children.contains_key(&ni) {
                    match self.query(v.tip + 1) {
                        Query::Ready(pred) => {
                            let child = self.pass_node(v.tip + 1, pt, pred);
                            v.children.insert(ni, child);
                        }
                        Query::Exhausted => return self.evaluate(pt, true),
                        Query::Failed(err) => {
                            debug!("picker failed: {err}");
                            self.picker_errors += 1;
                            v.children.insert(ni, SearchNode::leaf(NodeType::Pass, pt, v.tip + 1, 0));
                            return self.evaluate(pt, true);
                        }
                    }
                }
                self_eval = Some(eval);
            }
        }

        let child = v.children.get_mut(&ni).expect("child exists");
        let result = self.deduce(child);
        if let Some(own) = self_eval {
            if result.fatal && !own.fatal {
                self.rollback(mark);
                return own;
            }
        }
        result
    }
}
