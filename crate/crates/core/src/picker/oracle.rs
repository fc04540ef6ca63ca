use std::collections::BTreeMap;

use crate::model::{ElemType, EventAssignment, EventCluster, RegulationSolution, DIVISION_CLASSES, DOTS_CLASSES};

use super::{normalize_scores, open_slots, ElementPrediction, Picker, PickerError, Prediction, PrefixState};

/// Picker that replays a known gold structure.
///
/// Inside a gold voice it puts all mass on the gold successor. At a voice
/// boundary it spreads mass uniformly over the heads of the gold voices not
/// yet started, so any voice order is accepted. Prefixes that leave the gold
/// path get a uniform distribution over the open slots.
#[derive(Debug, Clone)]
pub struct OraclePicker {
    voices: Vec<Vec<u32>>,
    events: BTreeMap<u32, EventAssignment>,
    duration: u32,
}

impl OraclePicker {
    pub fn new(gold: &RegulationSolution) -> Self {
        OraclePicker {
            voices: gold.voices.clone(),
            events: gold.events.iter().map(|e| (e.id, e.clone())).collect(),
            duration: gold.duration,
        }
    }

    fn successor(&self, cluster: &EventCluster, prefix: &PrefixState) -> Vec<f64> {
        let open = open_slots(cluster, prefix);
        let n = cluster.elements.len();
        let eos = cluster.eos_index();
        let mut scores = vec![0.0; n];
        let slot = |id: u32| cluster.index_of(id).filter(|&i| open[i]);

        match prefix.tail() {
            Some(tail) => {
                let next =
                    self.voices.iter().find_map(|v| v.iter().position(|&id| id == tail).map(|k| v.get(k + 1).copied()));
                match next {
                    Some(Some(id)) => {
                        if let Some(i) = slot(id) {
                            scores[i] = 1.0;
                        }
                    }
                    Some(None) => scores[eos] = 1.0,
                    None => {}
                }
            }
            None => {
                let present: Vec<&Vec<u32>> =
                    self.voices.iter().filter(|v| v.iter().any(|&id| cluster.index_of(id).is_some())).collect();
                let partial = present.iter().any(|v| {
                    let fixed = v.iter().filter(|&&id| prefix.is_fixed(id)).count();
                    fixed > 0 && fixed < v.len()
                });
                if !partial {
                    let heads: Vec<usize> = present
                        .iter()
                        .filter(|v| v.iter().all(|&id| !prefix.is_fixed(id)))
                        .filter_map(|v| slot(v[0]))
                        .collect();
                    if heads.is_empty() {
                        scores[eos] = 1.0;
                    } else {
                        for i in heads {
                            scores[i] = 1.0;
                        }
                    }
                }
            }
        }
        normalize_scores(&mut scores, &open);
        scores
    }

    fn element(&self, e: &crate::model::EventElement) -> ElementPrediction {
        if e.elem_type == ElemType::Eos {
            let mut p = ElementPrediction::from(&e.predisposition);
            p.tick_estimate = Some(self.duration);
            return p;
        }
        let Some(g) = self.events.get(&e.id).filter(|_| e.is_event()) else {
            return ElementPrediction::from(&e.predisposition);
        };
        let mut division_vector = [0.0; DIVISION_CLASSES];
        let mut dots_vector = [0.0; DOTS_CLASSES];
        division_vector[g.division.unwrap_or(0).min(8) as usize] = 1.0;
        dots_vector[g.dots.unwrap_or(0).min(2) as usize] = 1.0;
        ElementPrediction {
            division_vector,
            dots_vector,
            tick_estimate: g.tick,
            grace: if g.grace { 1.0 } else { 0.0 },
            time_warped: if g.time_warp.is_some() { 1.0 } else { 0.0 },
            full_measure: if g.full_measure { 1.0 } else { 0.0 },
            fake: if g.fake { 1.0 } else { 0.0 },
            time_warp: g.time_warp,
        }
    }
}

impl Picker for OraclePicker {
    fn predict(&self, cluster: &EventCluster, prefix: &PrefixState) -> Result<Prediction, PickerError> {
        prefix.check(cluster)?;
        Ok(Prediction {
            successor: self.successor(cluster, prefix),
            elements: cluster.elements.iter().map(|e| self.element(e)).collect(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{EventElement, Status};

    fn gold() -> (EventCluster, RegulationSolution) {
        let events: Vec<_> = (1..=5).map(|i| EventElement::event(i, ElemType::Chord, 0, i as f64, 1.0, 2.0)).collect();
        let cluster = EventCluster::new(events.clone(), 0, 1920);
        let mut sol = RegulationSolution {
            measure_index: 0,
            voices: vec![vec![1, 5], vec![2, 3, 4]],
            duration: 1920,
            status: Status::Solved,
            events: events.iter().map(EventAssignment::from_element).collect(),
            adjacency: Default::default(),
        };
        for e in &mut sol.events {
            e.division = Some(2);
            e.dots = Some(0);
            e.tick = Some(0);
        }
        (cluster, sol)
    }

    #[test]
    fn one_hot_inside_voice() {
        let (c, g) = gold();
        let picker = OraclePicker::new(&g);
        let mut p = PrefixState::initial();
        p.fixed_orders.insert(2, 1);
        p.tip = 2;
        let pred = picker.predict(&c, &p).unwrap();
        assert_eq!(pred.successor[3], 1.0);
        pred.validate(&c, &p).unwrap();
        assert_eq!(pred.elements[1].division_vector[2], 1.0);
    }

    #[test]
    fn boundary_spreads_over_heads() {
        let (c, g) = gold();
        let pred = OraclePicker::new(&g).predict(&c, &PrefixState::initial()).unwrap();
        assert_eq!(pred.successor[1], 0.5);
        assert_eq!(pred.successor[2], 0.5);
    }

    #[test]
    fn voice_end_is_eos() {
        let (c, g) = gold();
        let mut p = PrefixState::initial();
        p.fixed_orders.insert(1, 1);
        p.fixed_orders.insert(5, 2);
        p.tip = 3;
        let pred = OraclePicker::new(&g).predict(&c, &p).unwrap();
        assert_eq!(pred.successor[c.eos_index()], 1.0);
    }

    #[test]
    fn off_path_prefix_is_uniform() {
        let (c, g) = gold();
        let mut p = PrefixState::initial();
        p.fixed_orders.insert(4, 1);
        p.fixed_orders.insert(3, 2);
        p.tip = 3;
        let pred = OraclePicker::new(&g).predict(&c, &p).unwrap();
        pred.validate(&c, &p).unwrap();
        assert!(pred.successor.iter().filter(|&&s| s > 0.0).count() > 1);
    }
}
