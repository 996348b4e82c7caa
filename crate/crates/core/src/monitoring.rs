//! Public and private signals derived from thresholds, played profiles and defection logs.

use serde::{Deserialize, Serialize};

use crate::epidemic_model::ForwardProfile;
use crate::overlay_graph::{DelayMatrix, NodeId, OverlayGraph, Vertex};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Cooperate,
    Defect,
}

/// One verdict per graph edge, indexed like `OverlayGraph::edges`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SignalVerdict {
    pub verdicts: Vec<Verdict>,
}

impl SignalVerdict {
    pub fn all_cooperate(g: &OverlayGraph) -> Self {
        SignalVerdict {
            verdicts: vec![Verdict::Cooperate; g.edges().len()],
        }
    }

    pub fn get(&self, g: &OverlayGraph, accused: NodeId, victim: NodeId) -> Verdict {
        g.edge_index(accused, victim)
            .map_or(Verdict::Cooperate, |e| self.verdicts[e])
    }

    /// Defecting edges in edge order.
    pub fn defects<'a>(&'a self, g: &'a OverlayGraph) -> impl Iterator<Item = (NodeId, NodeId)> + 'a {
        self.verdicts
            .iter()
            .enumerate()
            .filter(|(_, v)| **v == Verdict::Defect)
            .map(move |(e, _)| g.edges()[e])
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PrivateSignal {
    pub observer: Vertex,
    pub verdicts: SignalVerdict,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct DefectionEvent {
    pub accused: NodeId,
    pub victim: NodeId,
    pub stage: u64,
}

/// Perfect public monitoring: an edge cooperates iff the played probability meets the threshold.
pub fn public_signal(g: &OverlayGraph, thresholds: &ForwardProfile, played: &ForwardProfile) -> SignalVerdict {
    SignalVerdict {
        verdicts: thresholds
            .node_probs
            .iter()
            .zip(&played.node_probs)
            .take(g.edges().len())
            .map(|(t, p)| if p >= t { Verdict::Cooperate } else { Verdict::Defect })
            .collect(),
    }
}

/// What `observer` learns at `current_stage`: defections whose accusation arrives now.
pub fn private_signal(
    g: &OverlayGraph,
    observer: Vertex,
    event_log: &[DefectionEvent],
    current_stage: u64,
    delays: &DelayMatrix,
) -> PrivateSignal {
    let mut verdicts = SignalVerdict::all_cooperate(g);
    for ev in event_log {
        let Some(e) = g.edge_index(ev.accused, ev.victim) else {
            continue;
        };
        if let Some(d) = delays.get_by_edge(observer, e) {
            if ev.stage + d as u64 == current_stage {
                verdicts.verdicts[e] = Verdict::Defect;
            }
        }
    }
    PrivateSignal { observer, verdicts }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::overlay_graph::{build_graph, compute_delays, DelayModelConfig, DelayOverride};

    #[test]
    fn public_examples() {
        let g = build_graph(3, &[(0, 1), (1, 2), (2, 0)], &[0]).unwrap();
        let t = ForwardProfile::uniform(&g, 0.5, 0.6);
        assert!(public_signal(&g, &t, &t).defects(&g).next().is_none());
        let mut played = t.clone();
        played.set(&g, Vertex::Node(0), 1, 0.5);
        assert_eq!(public_signal(&g, &t, &played).defects(&g).collect::<Vec<_>>(), vec![(0, 1)]);
        let mut zero = t.clone();
        zero.set(&g, Vertex::Node(0), 1, 0.0);
        assert_eq!(public_signal(&g, &zero, &zero).get(&g, 0, 1), Verdict::Cooperate);
    }

    fn delayed() -> (OverlayGraph, DelayMatrix) {
        let g = build_graph(4, &[(0, 1), (1, 2), (2, 3)], &[0]).unwrap();
        let model = DelayModelConfig {
            overrides: vec![
                DelayOverride { observer: Vertex::Node(2), accused: 0, victim: 1, delay: Some(2) },
                DelayOverride { observer: Vertex::Node(3), accused: 0, victim: 1, delay: None },
            ],
        };
        let d = compute_delays(&g, &model).unwrap();
        (g, d)
    }

    #[test]
    fn private_examples() {
        let (g, d) = delayed();
        let log = [DefectionEvent { accused: 0, victim: 1, stage: 0 }];
        for t in 0..5 {
            let s = private_signal(&g, Vertex::Node(2), &log, t, &d);
            assert_eq!(s.verdicts.get(&g, 0, 1) == Verdict::Defect, t == 2);
            let never = private_signal(&g, Vertex::Node(3), &log, t, &d);
            assert_eq!(never.verdicts.get(&g, 0, 1), Verdict::Cooperate);
            let victim = private_signal(&g, Vertex::Node(1), &log, t, &d);
            assert_eq!(victim.verdicts.get(&g, 0, 1) == Verdict::Defect, t == 0);
        }
    }

    #[test]
    fn zero_delays_reduce_to_public() {
        let g = build_graph(3, &[(0, 1), (1, 2), (2, 0), (0, 2)], &[0]).unwrap();
        let d = DelayMatrix::zeros(&g);
        let t = ForwardProfile::uniform(&g, 0.5, 0.6);
        let mut played = t.clone();
        played.set(&g, Vertex::Node(0), 2, 0.1);
        played.set(&g, Vertex::Node(2), 0, 0.0);
        let public = public_signal(&g, &t, &played);
        let log: Vec<_> = public
            .defects(&g)
            .map(|(a, v)| DefectionEvent { accused: a, victim: v, stage: 4 })
            .collect();
        for k in 0..3 {
            assert_eq!(private_signal(&g, Vertex::Node(k), &log, 4, &d).verdicts, public);
        }
    }

    #[test]
    fn each_observer_told_once() {
        let (g, d) = delayed();
        let log = [
            DefectionEvent { accused: 0, victim: 1, stage: 1 },
            DefectionEvent { accused: 1, victim: 2, stage: 0 },
        ];
        for k in 0..4 {
            for &(a, v) in g.edges() {
                let told = (0..20)
                    .filter(|&t| private_signal(&g, Vertex::Node(k), &log, t, &d).verdicts.get(&g, a, v) == Verdict::Defect)
                    .count();
                let events = log.iter().filter(|e| (e.accused, e.victim) == (a, v)).count();
                let finite = d.get(&g, Vertex::Node(k), a, v).is_some();
                assert_eq!(told, if finite { events } else { 0 });
            }
        }
    }
}
