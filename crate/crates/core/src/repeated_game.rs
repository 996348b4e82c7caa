//! History evolution under the punishing strategy, stage utilities and discounted
//! differences between following the strategy and a drop deviation.

use std::collections::HashMap;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::epidemic_model::{exact_non_delivery, ForwardProfile};
use crate::error::{Error, Result};
use crate::monitoring::{private_signal, public_signal, DefectionEvent};
use crate::overlay_graph::{DelayMatrix, NodeId, OverlayGraph, Vertex};
use crate::punishing_strategy::{
    threshold_profile, update_ds_private, update_ds_public_with, DurationPolicy, PunishState, ReactionSetConfig,
    Tau,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtilityParams {
    pub beta: Vec<f64>,
    pub gamma: Vec<f64>,
    pub omega: Vec<f64>,
}

impl UtilityParams {
    pub fn uniform(n: usize, beta: f64, gamma: f64, omega: f64) -> Self {
        UtilityParams {
            beta: vec![beta; n],
            gamma: vec![gamma; n],
            omega: vec![omega; n],
        }
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        if self.beta.len() != n || self.gamma.len() != n || self.omega.len() != n {
            return Err(Error::config("utility", "per-node vectors must have one entry per node"));
        }
        for i in 0..n {
            if !(self.beta[i] >= 0.0) {
                return Err(Error::config(format!("utility.beta[{i}]"), "must be >= 0"));
            }
            if !(self.gamma[i] > 0.0) {
                return Err(Error::config(format!("utility.gamma[{i}]"), "must be > 0"));
            }
            if !(self.omega[i] > 0.0 && self.omega[i] < 1.0) {
                return Err(Error::config(format!("utility.omega[{i}]"), "must lie in (0,1)"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Monitoring {
    Public,
    Private,
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub graph: OverlayGraph,
    pub baseline: ForwardProfile,
    pub params: UtilityParams,
    pub monitoring: Monitoring,
    pub rs: ReactionSetConfig,
    pub durations: DurationPolicy,
    /// Accusation delays; all zero under public monitoring.
    pub delays: DelayMatrix,
}

/// Node `deviator` plays probability 0 toward every node of `dropped` at `at_stage`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct DropDeviation {
    pub deviator: NodeId,
    pub dropped: Vec<NodeId>,
    pub at_stage: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageOutcome {
    pub profile: ForwardProfile,
    pub q: Vec<f64>,
    pub pbar: Vec<f64>,
    pub u: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub stages: Vec<StageOutcome>,
    pub event_log: Vec<DefectionEvent>,
}

/// u_i = (1 − q_i)(β_i − γ_i p̄_i).
pub fn stage_utility(q_i: f64, pbar_i: f64, params: &UtilityParams, i: NodeId) -> f64 {
    (1.0 - q_i) * (params.beta[i] - params.gamma[i] * pbar_i)
}

/// Memoized non-delivery probabilities keyed by exact profile bits.
#[derive(Default)]
pub struct QCache {
    map: Mutex<HashMap<(Vec<u64>, NodeId), f64>>,
}

impl QCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn q(&self, g: &OverlayGraph, p: &ForwardProfile, i: NodeId) -> Result<f64> {
        let key = (p.bits(), i);
        if let Some(&v) = self.map.lock().unwrap().get(&key) {
            return Ok(v);
        }
        let v = exact_non_delivery(g, p, &[i])?;
        self.map.lock().unwrap().insert(key, v);
        Ok(v)
    }
}

/// Step-by-step play of the strategy profile with injected drops.
#[derive(Clone)]
pub(crate) struct Sim<'a> {
    sc: &'a Scenario,
    state: PunishState,
    pub(crate) log: Vec<DefectionEvent>,
    pub(crate) stage: u64,
    expiry_slack: i64,
}

impl<'a> Sim<'a> {
    pub(crate) fn new(sc: &'a Scenario) -> Self {
        Self::with_fault(sc, 0)
    }

    pub(crate) fn with_fault(sc: &'a Scenario, expiry_slack: i64) -> Self {
        let state = match sc.monitoring {
            Monitoring::Public => PunishState::new_public(&sc.graph),
            Monitoring::Private => PunishState::new_private(&sc.graph),
        };
        Sim {
            sc,
            state,
            log: Vec::new(),
            stage: 0,
            expiry_slack,
        }
    }

    pub(crate) fn state(&self) -> &PunishState {
        &self.state
    }

    pub(crate) fn thresholds(&self) -> ForwardProfile {
        threshold_profile(&self.sc.graph, &self.state, &self.sc.baseline)
    }

    /// Plays one stage; returns (thresholds, played profile).
    pub(crate) fn step(&mut self, drops: &[(NodeId, NodeId)]) -> (ForwardProfile, ForwardProfile) {
        let g = &self.sc.graph;
        let thr = self.thresholds();
        let mut played = thr.clone();
        for &(a, b) in drops {
            let e = g.edge_index(a, b).expect("drop on a non-edge");
            if thr.node_probs[e] > 0.0 {
                self.log.push(DefectionEvent {
                    accused: a,
                    victim: b,
                    stage: self.stage,
                });
            }
            played.node_probs[e] = 0.0;
        }
        self.state = match self.sc.monitoring {
            Monitoring::Public => {
                let sig = public_signal(g, &thr, &played);
                update_ds_public_with(g, &self.state, &sig, &self.sc.rs, &self.sc.durations, self.expiry_slack)
            }
            Monitoring::Private => {
                let sigs: Vec<_> = std::iter::once(Vertex::Source)
                    .chain((0..g.n()).map(Vertex::Node))
                    .map(|o| private_signal(g, o, &self.log, self.stage, &self.sc.delays))
                    .collect();
                update_ds_private(g, &self.state, &sigs, &self.sc.delays, &self.sc.durations)
            }
        };
        self.stage += 1;
        (thr, played)
    }
}

pub(crate) fn drops_at(actions: &[DropDeviation], t: u64) -> Vec<(NodeId, NodeId)> {
    actions
        .iter()
        .filter(|d| d.at_stage == t)
        .flat_map(|d| d.dropped.iter().map(move |&j| (d.deviator, j)))
        .collect()
}

/// Plays `horizon` stages from the empty history with the given drops injected.
pub fn evolve(sc: &Scenario, actions: &[DropDeviation], horizon: u64, cache: &QCache) -> Result<Trajectory> {
    let g = &sc.graph;
    let mut sim = Sim::new(sc);
    let mut stages = Vec::with_capacity(horizon as usize);
    for t in 0..horizon {
        let (_, played) = sim.step(&drops_at(actions, t));
        let q = (0..g.n()).map(|i| cache.q(g, &played, i)).collect::<Result<Vec<_>>>()?;
        let pbar: Vec<f64> = (0..g.n()).map(|i| played.pbar(g, i)).collect();
        let u = (0..g.n()).map(|i| stage_utility(q[i], pbar[i], &sc.params, i)).collect();
        stages.push(StageOutcome {
            profile: played,
            q,
            pbar,
            u,
        });
    }
    Ok(Trajectory {
        stages,
        event_log: sim.log,
    })
}

/// Defection log produced by playing `actions` for `len` stages.
pub fn defection_log(sc: &Scenario, actions: &[DropDeviation], len: u64) -> Vec<DefectionEvent> {
    let mut sim = Sim::new(sc);
    for t in 0..len {
        sim.step(&drops_at(actions, t));
    }
    sim.log
}

/// The history node `i` believes at stage `len`: under private monitoring, only the
/// defections it has observed (its own included) before that stage.
pub fn believed_history(sc: &Scenario, i: NodeId, log: &[DefectionEvent], len: u64) -> Vec<DefectionEvent> {
    match sc.monitoring {
        Monitoring::Public => log.to_vec(),
        Monitoring::Private => log
            .iter()
            .filter(|e| {
                e.accused == i
                    || sc
                        .delays
                        .get(&sc.graph, Vertex::Node(i), e.accused, e.victim)
                        .is_some_and(|d| e.stage + (d as u64) < len)
            })
            .copied()
            .collect(),
    }
}

pub(crate) fn log_as_actions(log: &[DefectionEvent]) -> Vec<DropDeviation> {
    log.iter()
        .map(|e| DropDeviation {
            deviator: e.accused,
            dropped: vec![e.victim],
            at_stage: e.stage,
        })
        .collect()
}

/// Per-stage terms of the discounted difference, affine in β and γ:
/// stage r contributes ω^r (β·dq[r] − γ·dc[r]); `tail` is the stationary stage
/// summed in closed form after the explicit ones.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiffCoefficients {
    pub dq: Vec<f64>,
    pub dc: Vec<f64>,
    pub tail: Option<(f64, f64)>,
    /// q_i and p̄_i along the strategy continuation, for bound estimates.
    pub q_star: Vec<f64>,
    pub pbar_star: Vec<f64>,
}

impl DiffCoefficients {
    pub fn margin(&self, beta: f64, gamma: f64, omega: f64) -> f64 {
        let (a, b) = self.ab(omega);
        beta * a - gamma * b
    }

    /// (A, B) with margin = β·A − γ·B.
    pub fn ab(&self, omega: f64) -> (f64, f64) {
        let mut a = 0.0;
        let mut b = 0.0;
        let mut w = 1.0;
        for r in 0..self.dq.len() {
            a += w * self.dq[r];
            b += w * self.dc[r];
            w *= omega;
        }
        if let Some((tq, tc)) = self.tail {
            let f = w / (1.0 - omega);
            a += f * tq;
            b += f * tc;
        }
        (a, b)
    }
}

/// Number of stages after the deviation (inclusive of it) beyond which the deviated and
/// conforming continuations coincide, or the stationary point under GRIM.
pub fn truncation(sc: &Scenario, i: NodeId) -> u64 {
    match (sc.monitoring, sc.durations.max_finite()) {
        (Monitoring::Public, Some(_)) => sc.durations.base.finite().unwrap() as u64,
        (Monitoring::Public, None) => 1,
        (Monitoring::Private, Some(t)) => {
            if sc.durations.coordinated {
                if let Some(m) = sc.delays.mdel(&sc.graph, i) {
                    return (m + sc.durations.base.finite().unwrap()) as u64;
                }
            }
            sc.delays.max_finite() as u64 + t as u64 + 1
        }
        (Monitoring::Private, None) => sc.delays.max_finite() as u64 + 1,
    }
}

/// State reached by playing the history node `i` believes in.
pub(crate) fn belief_sim<'a>(sc: &'a Scenario, history: &[DropDeviation], len: u64, i: NodeId) -> Sim<'a> {
    let truth = defection_log(sc, history, len);
    let belief = log_as_actions(&believed_history(sc, i, &truth, len));
    let mut sim = Sim::new(sc);
    for t in 0..len {
        sim.step(&drops_at(&belief, t));
    }
    sim
}

/// Out-neighbors toward which `i` has a positive threshold after the history.
pub fn legal_drop_targets(sc: &Scenario, history: &[DropDeviation], len: u64, i: NodeId) -> Vec<NodeId> {
    let g = &sc.graph;
    let thr = belief_sim(sc, history, len, i).thresholds();
    g.out_neighbors(i)
        .iter()
        .copied()
        .filter(|&j| thr.node_probs[g.edge_index(i, j).unwrap()] > 0.0)
        .collect()
}

/// (q_i, p̄_i) over `stages` stages of the conforming continuation as `i` believes it.
pub fn star_path(
    sc: &Scenario,
    history: &[DropDeviation],
    len: u64,
    i: NodeId,
    stages: u64,
    cache: &QCache,
) -> Result<Vec<(f64, f64)>> {
    let mut sim = belief_sim(sc, history, len, i);
    (0..stages)
        .map(|_| {
            let (_, p) = sim.step(&[]);
            Ok((cache.q(&sc.graph, &p, i)?, p.pbar(&sc.graph, i)))
        })
        .collect()
}

/// Coefficients of Σ_r ω^r (u*_r − u'_r) for `deviation` played at stage `len` after
/// the history generated by `history` (truth, before beliefs are applied).
pub fn deviation_coefficients(
    sc: &Scenario,
    history: &[DropDeviation],
    len: u64,
    deviation: &DropDeviation,
    cache: &QCache,
) -> Result<DiffCoefficients> {
    let i = deviation.deviator;
    let g = &sc.graph;
    if deviation.dropped.is_empty() {
        return Err(Error::IllegalDeviation("empty drop set".into()));
    }
    let mut star = belief_sim(sc, history, len, i);
    let mut dev = star.clone();
    let thr = dev.thresholds();
    for &j in &deviation.dropped {
        match g.edge_index(i, j) {
            Some(e) if thr.node_probs[e] > 0.0 => {}
            Some(_) => {
                return Err(Error::IllegalDeviation(format!(
                    "node {i} already forwards to {j} with threshold 0"
                )))
            }
            None => return Err(Error::NotAnEdge(i, j)),
        }
    }
    let h = truncation(sc, i);
    let grim = sc.durations.max_finite().is_none();
    let explicit = h + 1;
    let total = if grim { explicit + 1 } else { explicit };
    let mut out = DiffCoefficients {
        dq: Vec::new(),
        dc: Vec::new(),
        tail: None,
        q_star: Vec::new(),
        pbar_star: Vec::new(),
    };
    let dev_drops: Vec<(NodeId, NodeId)> = deviation.dropped.iter().map(|&j| (i, j)).collect();
    for r in 0..total {
        let (_, ps) = star.step(&[]);
        let (_, pd) = dev.step(if r == 0 { &dev_drops } else { &[] });
        let qs = cache.q(g, &ps, i)?;
        let qd = cache.q(g, &pd, i)?;
        let bs = ps.pbar(g, i);
        let bd = pd.pbar(g, i);
        let dq = qd - qs;
        let dc = (1.0 - qs) * bs - (1.0 - qd) * bd;
        if r < explicit {
            out.dq.push(dq);
            out.dc.push(dc);
            out.q_star.push(qs);
            out.pbar_star.push(bs);
        } else {
            out.tail = Some((dq, dc));
        }
    }
    Ok(out)
}

/// Σ_r ω_i^r (u*_r − u'_r) with the scenario's own β_i, γ_i, ω_i.
pub fn discounted_difference(
    sc: &Scenario,
    history: &[DropDeviation],
    len: u64,
    deviation: &DropDeviation,
    cache: &QCache,
) -> Result<f64> {
    let c = deviation_coefficients(sc, history, len, deviation, cache)?;
    let i = deviation.deviator;
    Ok(c.margin(sc.params.beta[i], sc.params.gamma[i], sc.params.omega[i]))
}

/// Convenience constructor used by tests and the CLI.
pub fn public_scenario(
    graph: OverlayGraph,
    baseline: ForwardProfile,
    params: UtilityParams,
    rs: ReactionSetConfig,
    tau: Tau,
) -> Scenario {
    let delays = DelayMatrix::zeros(&graph);
    Scenario {
        graph,
        baseline,
        params,
        monitoring: Monitoring::Public,
        rs,
        durations: DurationPolicy::uniform(tau),
        delays,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::overlay_graph::build_graph;
    use crate::overlay_graph::{compute_delays, DelayModelConfig};
    use crate::punishing_strategy::coordinated_durations;

    fn pair(beta: f64, rs: ReactionSetConfig, tau: Tau) -> Scenario {
        let g = build_graph(2, &[(0, 1), (1, 0)], &[0, 1]).unwrap();
        let p = ForwardProfile::uniform(&g, 0.5, 0.5);
        public_scenario(g, p, UtilityParams::uniform(2, beta, 1.0, 0.9), rs, tau)
    }

    fn drop(i: NodeId, js: &[NodeId], t: u64) -> DropDeviation {
        DropDeviation {
            deviator: i,
            dropped: js.to_vec(),
            at_stage: t,
        }
    }

    #[test]
    fn utility_examples() {
        let p = UtilityParams::uniform(1, 2.0, 1.0, 0.5);
        assert_eq!(stage_utility(0.0, 1.0, &p, 0), 1.0);
        let z = UtilityParams::uniform(1, 3.0, 1.5, 0.5);
        assert_eq!(stage_utility(0.3, 2.0, &z, 0), 0.0);
        let d = UtilityParams::uniform(1, 4.0, 1.0, 0.5);
        assert!((stage_utility(0.5625, 0.0, &d, 0) - 1.75).abs() < 1e-15);
    }

    #[test]
    fn no_deviation_is_stationary() {
        let sc = pair(10.0, ReactionSetConfig::full_indirect(), Tau::Finite(2));
        let cache = QCache::new();
        let tr = evolve(&sc, &[], 5, &cache).unwrap();
        for s in &tr.stages {
            assert_eq!(s, &tr.stages[0]);
        }
        assert!(tr.event_log.is_empty());
    }

    #[test]
    fn full_indirect_drop_all_isolates_deviator() {
        let sc = pair(10.0, ReactionSetConfig::full_indirect(), Tau::Finite(2));
        let cache = QCache::new();
        let base = evolve(&sc, &[], 1, &cache).unwrap().stages[0].clone();
        let tr = evolve(&sc, &[drop(0, &[1], 0)], 5, &cache).unwrap();
        for t in 1..=2 {
            assert_eq!(tr.stages[t].q[0], 1.0);
            assert_eq!(tr.stages[t].u[0], 0.0);
        }
        for t in 3..5 {
            assert_eq!(tr.stages[t], base);
        }
    }

    #[test]
    fn pair_margin_values() {
        let sc = pair(10.0, ReactionSetConfig::direct(), Tau::Finite(3));
        let cache = QCache::new();
        let m = discounted_difference(&sc, &[], 0, &drop(0, &[1], 0), &cache).unwrap();
        let expect = -0.3125 + (0.625 * 9.5 - 0.5 * 10.0) * (0.9 + 0.81 + 0.729);
        assert!((m - expect).abs() < 1e-12, "{m} vs {expect}");
        let low = pair(1.0, ReactionSetConfig::direct(), Tau::Finite(3));
        assert!(discounted_difference(&low, &[], 0, &drop(0, &[1], 0), &cache).unwrap() < 0.0);
    }

    #[test]
    fn illegal_drop_rejected() {
        let sc = pair(10.0, ReactionSetConfig::direct(), Tau::Finite(3));
        let cache = QCache::new();
        // after 0 drops 1 it self-punishes toward 1 at the next stage
        let r = discounted_difference(&sc, &[drop(0, &[1], 0)], 1, &drop(0, &[1], 1), &cache);
        assert!(matches!(r, Err(Error::IllegalDeviation(_))));
    }

    #[test]
    fn affine_in_beta_and_gamma() {
        let cache = QCache::new();
        let mk = |b: f64, c: f64| {
            let mut sc = pair(b, ReactionSetConfig::full_indirect(), Tau::Finite(2));
            sc.params.gamma = vec![c; 2];
            discounted_difference(&sc, &[], 0, &drop(1, &[0], 0), &cache).unwrap()
        };
        let (a, b, c) = (mk(2.0, 1.0), mk(4.0, 1.0), mk(3.0, 1.0));
        assert!((c - (a + b) / 2.0).abs() < 1e-12);
        let (a, b, c) = (mk(2.0, 1.0), mk(2.0, 3.0), mk(2.0, 2.0));
        assert!((c - (a + b) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn public_truncation_exact() {
        let g = build_graph(3, &[(0, 1), (1, 2), (2, 0), (0, 2)], &[0, 1]).unwrap();
        let p = ForwardProfile::uniform(&g, 0.6, 0.7);
        let sc = public_scenario(g, p, UtilityParams::uniform(3, 5.0, 1.0, 0.9), ReactionSetConfig::full_indirect(), Tau::Finite(2));
        let cache = QCache::new();
        let star = evolve(&sc, &[drop(1, &[2], 0)], 9, &cache).unwrap();
        let dev = evolve(&sc, &[drop(1, &[2], 0), drop(0, &[1, 2], 1)], 9, &cache).unwrap();
        for t in 4..9 {
            assert_eq!(star.stages[t].u, dev.stages[t].u);
        }
    }

    #[test]
    fn private_coordinated_zero_then_baseline() {
        let edges: Vec<_> = (0..4).flat_map(|a| (0..4).filter(move |&b| b != a).map(move |b| (a, b))).collect();
        let g = build_graph(4, &edges, &[0, 1]).unwrap();
        let delays = compute_delays(&g, &DelayModelConfig::default()).unwrap();
        let durations = coordinated_durations(&g, &delays, 2).unwrap();
        let baseline = ForwardProfile::uniform(&g, 0.8, 0.6);
        let sc = Scenario {
            graph: g,
            baseline,
            params: UtilityParams::uniform(4, 3.0, 1.0, 0.9),
            monitoring: Monitoring::Private,
            rs: ReactionSetConfig::full_indirect(),
            durations,
            delays,
        };
        let cache = QCache::new();
        let base = evolve(&sc, &[], 1, &cache).unwrap().stages[0].u[2];
        let tr = evolve(&sc, &[drop(2, &[3], 0)], 10, &cache).unwrap();
        let m = sc.delays.mdel(&sc.graph, 2).unwrap() as usize;
        for t in m + 1..=m + 2 {
            assert_eq!(tr.stages[t].u[2], 0.0);
        }
        for t in m + 3..10 {
            assert_eq!(tr.stages[t].u[2], base);
        }
    }
}
