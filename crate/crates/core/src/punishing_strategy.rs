//! Defection Set state machines, threshold profiles, reaction sets and punishment durations.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::epidemic_model::ForwardProfile;
use crate::error::{Error, Result};
use crate::monitoring::{PrivateSignal, SignalVerdict};
use crate::overlay_graph::{DelayMatrix, NodeId, OverlayGraph, Vertex};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReactionMode {
    Direct,
    FullIndirect,
    Custom,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReactionSetConfig {
    pub mode: ReactionMode,
    pub custom_sets: BTreeMap<(NodeId, NodeId), BTreeSet<Vertex>>,
}

impl ReactionSetConfig {
    pub fn direct() -> Self {
        ReactionSetConfig {
            mode: ReactionMode::Direct,
            custom_sets: BTreeMap::new(),
        }
    }

    pub fn full_indirect() -> Self {
        ReactionSetConfig {
            mode: ReactionMode::FullIndirect,
            custom_sets: BTreeMap::new(),
        }
    }

    /// RS[i,j], always containing i and j.
    pub fn set(&self, g: &OverlayGraph, i: NodeId, j: NodeId) -> BTreeSet<Vertex> {
        let mut rs: BTreeSet<Vertex> = [Vertex::Node(i), Vertex::Node(j)].into();
        match self.mode {
            ReactionMode::Direct => {}
            ReactionMode::FullIndirect => rs.extend(g.in_vertices(i)),
            ReactionMode::Custom => {
                if let Some(extra) = self.custom_sets.get(&(i, j)) {
                    rs.extend(extra.iter().copied());
                }
            }
        }
        rs
    }
}

/// Punishment duration τ; `Grim` never expires.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Tau {
    Finite(u32),
    Grim,
}

impl Tau {
    /// Whether a record of age `age + 1` survives the expiry clause.
    fn keeps(self, next_age: i64) -> bool {
        match self {
            Tau::Grim => true,
            Tau::Finite(t) => next_age < t as i64,
        }
    }

    pub fn finite(self) -> Option<u32> {
        match self {
            Tau::Finite(t) => Some(t),
            Tau::Grim => None,
        }
    }
}

impl fmt::Display for Tau {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tau::Finite(t) => write!(f, "{t}"),
            Tau::Grim => write!(f, "grim"),
        }
    }
}

impl Serialize for Tau {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Tau::Finite(t) => s.serialize_u32(*t),
            Tau::Grim => s.serialize_str("grim"),
        }
    }
}

impl<'de> Deserialize<'de> for Tau {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        match serde_json::Value::deserialize(d)? {
            serde_json::Value::String(s) if s == "grim" => Ok(Tau::Grim),
            serde_json::Value::Number(n) => n
                .as_u64()
                .filter(|&t| t >= 1 && t <= u32::MAX as u64)
                .map(|t| Tau::Finite(t as u32))
                .ok_or_else(|| serde::de::Error::custom("tau must be a positive integer or \"grim\"")),
            other => Err(serde::de::Error::custom(format!("bad tau {other}"))),
        }
    }
}

/// Key of a per-pair duration: (accused, victim, holder, peer) with the holders sorted.
pub type PairKey = (NodeId, NodeId, Vertex, Vertex);

fn pair_key(accused: NodeId, victim: NodeId, a: Vertex, b: Vertex) -> PairKey {
    if a <= b {
        (accused, victim, a, b)
    } else {
        (accused, victim, b, a)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DurationPolicy {
    pub base: Tau,
    pub per_pair: BTreeMap<PairKey, u32>,
    /// When set, pairs missing from `per_pair` do not react at all.
    pub coordinated: bool,
}

impl DurationPolicy {
    pub fn uniform(base: Tau) -> Self {
        DurationPolicy {
            base,
            per_pair: BTreeMap::new(),
            coordinated: false,
        }
    }

    /// τ[accused,victim | a,b], symmetric in (a, b).
    pub fn duration(&self, accused: NodeId, victim: NodeId, a: Vertex, b: Vertex) -> Tau {
        match self.per_pair.get(&pair_key(accused, victim, a, b)) {
            Some(&t) => Tau::Finite(t),
            None if self.coordinated => Tau::Finite(0),
            None => self.base,
        }
    }

    /// Longest finite duration in the policy, if any record can expire.
    pub fn max_finite(&self) -> Option<u32> {
        let base = self.base.finite()?;
        Some(self.per_pair.values().copied().fold(base, u32::max))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct DefectionRecord {
    pub accused: NodeId,
    pub victim: NodeId,
    pub age: i64,
}

/// DS_holder[peer] for every tracked (holder, peer) pair.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct PunishState {
    pub ds: BTreeMap<(Vertex, Vertex), BTreeSet<DefectionRecord>>,
}

impl PunishState {
    /// Public mode: one set per directed edge, the source included as a holder.
    pub fn new_public(g: &OverlayGraph) -> Self {
        let mut ds = BTreeMap::new();
        for &t in g.source_targets() {
            ds.insert((Vertex::Source, Vertex::Node(t)), BTreeSet::new());
        }
        for &(a, b) in g.edges() {
            ds.insert((Vertex::Node(a), Vertex::Node(b)), BTreeSet::new());
        }
        PunishState { ds }
    }

    /// Private mode: each holder keeps a set per in- and out-neighbor.
    pub fn new_private(g: &OverlayGraph) -> Self {
        let mut ds = BTreeMap::new();
        let holders = std::iter::once(Vertex::Source).chain((0..g.n()).map(Vertex::Node));
        for a in holders {
            for b in g.peers(a) {
                ds.insert((a, b), BTreeSet::new());
            }
        }
        PunishState { ds }
    }

    pub fn get(&self, holder: Vertex, peer: Vertex) -> Option<&BTreeSet<DefectionRecord>> {
        self.ds.get(&(holder, peer))
    }

    pub fn is_empty(&self) -> bool {
        self.ds.values().all(BTreeSet::is_empty)
    }
}

/// Public Defection Set update.
pub fn update_ds_public(
    g: &OverlayGraph,
    state: &PunishState,
    signal: &SignalVerdict,
    rs: &ReactionSetConfig,
    tau: &DurationPolicy,
) -> PunishState {
    update_ds_public_with(g, state, signal, rs, tau, 0)
}

/// `expiry_slack` shifts the expiry test; nonzero values exist only for fault injection.
pub(crate) fn update_ds_public_with(
    g: &OverlayGraph,
    state: &PunishState,
    signal: &SignalVerdict,
    rs: &ReactionSetConfig,
    tau: &DurationPolicy,
    expiry_slack: i64,
) -> PunishState {
    let defects: Vec<(NodeId, NodeId, BTreeSet<Vertex>)> = signal
        .defects(g)
        .map(|(k1, k2)| (k1, k2, rs.set(g, k1, k2)))
        .collect();
    let mut next = BTreeMap::new();
    for (&(a, b), recs) in &state.ds {
        let mut out: BTreeSet<DefectionRecord> = recs
            .iter()
            .filter(|r| tau.duration(r.accused, r.victim, a, b).keeps(r.age + 1 - expiry_slack))
            .map(|r| DefectionRecord { age: r.age + 1, ..*r })
            .collect();
        for (k1, k2, set) in &defects {
            if set.contains(&a) && set.contains(&b) {
                out.insert(DefectionRecord {
                    accused: *k1,
                    victim: *k2,
                    age: 0,
                });
            }
        }
        next.insert((a, b), out);
    }
    PunishState { ds: next }
}

/// Private Defection Set update; `signals` holds this stage's signal for each observer.
pub fn update_ds_private(
    g: &OverlayGraph,
    state: &PunishState,
    signals: &[PrivateSignal],
    delays: &DelayMatrix,
    tau: &DurationPolicy,
) -> PunishState {
    let mut next = BTreeMap::new();
    for (&(a, b), recs) in &state.ds {
        let mut out: BTreeSet<DefectionRecord> = recs
            .iter()
            .filter(|r| tau.duration(r.accused, r.victim, a, b).keeps(r.age + 1))
            .map(|r| DefectionRecord { age: r.age + 1, ..*r })
            .collect();
        if let Some(sig) = signals.iter().find(|s| s.observer == a) {
            for (k1, k2) in sig.verdicts.defects(g) {
                let e = g.edge_index(k1, k2).unwrap();
                let (Some(da), Some(db)) = (delays.get_by_edge(a, e), delays.get_by_edge(b, e)) else {
                    continue;
                };
                let v = (da as i64 - db as i64).min(0);
                let t = tau.duration(k1, k2, a, b);
                if t == Tau::Grim || v < t.finite().unwrap() as i64 {
                    out.insert(DefectionRecord {
                        accused: k1,
                        victim: k2,
                        age: v,
                    });
                }
            }
        }
        next.insert((a, b), out);
    }
    PunishState { ds: next }
}

/// Whether active records zero the threshold on the edge (a, b).
fn edge_zeroed(recs: Option<&BTreeSet<DefectionRecord>>, a: Vertex, b: NodeId) -> bool {
    recs.is_some_and(|recs| {
        recs.iter()
            .filter(|r| r.age >= 0)
            .any(|r| r.accused == b || (Vertex::Node(r.accused) == a && r.victim == b))
    })
}

/// Threshold profile computed by each edge's forwarding endpoint.
pub fn threshold_profile(g: &OverlayGraph, state: &PunishState, baseline: &ForwardProfile) -> ForwardProfile {
    let mut p = baseline.clone();
    for &t in g.source_targets() {
        if edge_zeroed(state.get(Vertex::Source, Vertex::Node(t)), Vertex::Source, t) {
            p.source_probs[t] = 0.0;
        }
    }
    for (e, &(a, b)) in g.edges().iter().enumerate() {
        if edge_zeroed(state.get(Vertex::Node(a), Vertex::Node(b)), Vertex::Node(a), b) {
            p.node_probs[e] = 0.0;
        }
    }
    p
}

/// Threshold p_a[b] as computed by the receiving endpoint b from DS_b[a] (private mode).
pub fn receiver_threshold(
    g: &OverlayGraph,
    state: &PunishState,
    baseline: &ForwardProfile,
    a: Vertex,
    b: NodeId,
) -> f64 {
    if edge_zeroed(state.get(Vertex::Node(b), a), a, b) {
        0.0
    } else {
        baseline.get(g, a, b)
    }
}

/// Durations that make every reaction to a defection of i end at stage mdel_i + τ.
pub fn coordinated_durations(g: &OverlayGraph, delays: &DelayMatrix, tau: u32) -> Result<DurationPolicy> {
    if tau == 0 {
        return Err(Error::InvalidProfile("tau must be at least 1".into()));
    }
    let mut mdel = vec![0u32; g.n()];
    for &(i, j) in g.edges() {
        for k in g.in_vertices(i) {
            match delays.get(g, k, i, j) {
                Some(d) => mdel[i] = mdel[i].max(d),
                None => {
                    return Err(Error::UnpunishableNode {
                        accused: i,
                        victim: j,
                        observer: k,
                    })
                }
            }
        }
    }
    let mut per_pair = BTreeMap::new();
    let holders: Vec<Vertex> = std::iter::once(Vertex::Source).chain((0..g.n()).map(Vertex::Node)).collect();
    for (e, &(i, j)) in g.edges().iter().enumerate() {
        let end = mdel[i] + tau;
        for &a in &holders {
            for b in g.peers(a) {
                if b < a {
                    continue;
                }
                let (Some(da), Some(db)) = (delays.get_by_edge(a, e), delays.get_by_edge(b, e)) else {
                    continue;
                };
                let gmax = da.max(db);
                let t = if gmax < end { end - gmax } else { 0 };
                per_pair.insert(pair_key(i, j, a, b), t);
            }
        }
    }
    Ok(DurationPolicy {
        base: Tau::Finite(tau),
        per_pair,
        coordinated: true,
    })
}

/// First edge (i, j) whose in-neighbor punishment windows share no stage.
pub fn coordination_failure(policy: &DurationPolicy, delays: &DelayMatrix, g: &OverlayGraph) -> Option<(NodeId, NodeId)> {
    for &(i, j) in g.edges() {
        let mut lo = 1u64;
        let mut hi = u64::MAX;
        for k in g.in_vertices(i) {
            let Some(d) = delays.get(g, k, i, j) else {
                return Some((i, j));
            };
            lo = lo.max(d as u64 + 1);
            if let Tau::Finite(t) = policy.duration(i, j, k, Vertex::Node(i)) {
                hi = hi.min(d as u64 + t as u64);
            }
        }
        if lo > hi {
            return Some((i, j));
        }
    }
    None
}

/// Punishment windows of all in-neighbors of every deviator overlap in some stage.
pub fn enforces_coordination(policy: &DurationPolicy, delays: &DelayMatrix, g: &OverlayGraph) -> bool {
    coordination_failure(policy, delays, g).is_none()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::monitoring::{private_signal, DefectionEvent, Verdict};
    use crate::overlay_graph::{build_graph, compute_delays, DelayModelConfig, DelayOverride};

    fn k3() -> OverlayGraph {
        build_graph(3, &[(0, 1), (0, 2), (1, 0), (1, 2), (2, 0), (2, 1)], &[0, 1, 2]).unwrap()
    }

    fn defect(g: &OverlayGraph, edges: &[(NodeId, NodeId)]) -> SignalVerdict {
        let mut s = SignalVerdict::all_cooperate(g);
        for &(a, b) in edges {
            s.verdicts[g.edge_index(a, b).unwrap()] = Verdict::Defect;
        }
        s
    }

    #[test]
    fn quiet_state_stays_empty() {
        let g = k3();
        let st = PunishState::new_public(&g);
        let next = update_ds_public(&g, &st, &SignalVerdict::all_cooperate(&g), &ReactionSetConfig::full_indirect(), &DurationPolicy::uniform(Tau::Finite(3)));
        assert!(next.is_empty());
    }

    #[test]
    fn single_defect_ages_and_expires() {
        let g = k3();
        let rs = ReactionSetConfig::full_indirect();
        let tau = DurationPolicy::uniform(Tau::Finite(3));
        let members = rs.set(&g, 0, 1);
        let mut st = update_ds_public(&g, &PunishState::new_public(&g), &defect(&g, &[(0, 1)]), &rs, &tau);
        for age in 0..3 {
            for (&(a, b), recs) in &st.ds {
                let expect = members.contains(&a) && members.contains(&b);
                let want: BTreeSet<_> = if expect {
                    [DefectionRecord { accused: 0, victim: 1, age }].into()
                } else {
                    BTreeSet::new()
                };
                assert_eq!(recs, &want, "holder {a} peer {b} age {age}");
            }
            st = update_ds_public(&g, &st, &SignalVerdict::all_cooperate(&g), &rs, &tau);
        }
        assert!(st.is_empty());
    }

    #[test]
    fn grim_records_persist() {
        let g = k3();
        let rs = ReactionSetConfig::direct();
        let tau = DurationPolicy::uniform(Tau::Grim);
        let mut st = update_ds_public(&g, &PunishState::new_public(&g), &defect(&g, &[(0, 1)]), &rs, &tau);
        for _ in 0..100 {
            st = update_ds_public(&g, &st, &SignalVerdict::all_cooperate(&g), &rs, &tau);
        }
        let recs = st.get(Vertex::Node(0), Vertex::Node(1)).unwrap();
        assert_eq!(recs.iter().next().unwrap().age, 100);
    }

    #[test]
    fn thresholds_follow_records() {
        let g = k3();
        let base = ForwardProfile::uniform(&g, 0.5, 0.7);
        let st = PunishState::new_public(&g);
        assert_eq!(threshold_profile(&g, &st, &base), base);
        let rs = ReactionSetConfig::full_indirect();
        let st = update_ds_public(&g, &st, &defect(&g, &[(0, 1)]), &rs, &DurationPolicy::uniform(Tau::Finite(2)));
        let p = threshold_profile(&g, &st, &base);
        assert_eq!(p.get(&g, Vertex::Node(2), 0), 0.0);
        assert_eq!(p.get(&g, Vertex::Node(1), 0), 0.0);
        assert_eq!(p.get(&g, Vertex::Source, 0), 0.0);
        assert_eq!(p.get(&g, Vertex::Node(0), 1), 0.0);
        assert_eq!(p.get(&g, Vertex::Node(0), 2), 0.7);
        assert_eq!(p.get(&g, Vertex::Node(2), 1), 0.7);
    }

    fn late_observer() -> (OverlayGraph, DelayMatrix) {
        let edges: Vec<_> = (0..4).flat_map(|a| (0..4).filter(move |&b| b != a).map(move |b| (a, b))).collect();
        let g = build_graph(4, &edges, &[0, 2]).unwrap();
        let model = DelayModelConfig {
            overrides: vec![
                DelayOverride { observer: Vertex::Node(2), accused: 0, victim: 1, delay: Some(1) },
                DelayOverride { observer: Vertex::Node(3), accused: 0, victim: 1, delay: Some(3) },
            ],
        };
        let d = compute_delays(&g, &model).unwrap();
        (g, d)
    }

    fn run_private(g: &OverlayGraph, d: &DelayMatrix, tau: &DurationPolicy, log: &[DefectionEvent], stages: u64) -> Vec<PunishState> {
        let observers: Vec<Vertex> = std::iter::once(Vertex::Source).chain((0..g.n()).map(Vertex::Node)).collect();
        let mut st = PunishState::new_private(g);
        let mut out = vec![st.clone()];
        for t in 0..stages {
            let sigs: Vec<_> = observers.iter().map(|&o| private_signal(g, o, log, t, d)).collect();
            st = update_ds_private(g, &st, &sigs, d, tau);
            out.push(st.clone());
        }
        out
    }

    #[test]
    fn private_waits_for_later_observer() {
        let (g, d) = late_observer();
        let tau = DurationPolicy::uniform(Tau::Finite(2));
        let log = [DefectionEvent { accused: 0, victim: 1, stage: 0 }];
        let states = run_private(&g, &d, &tau, &log, 8);
        let key = (Vertex::Node(2), Vertex::Node(3));
        // state index t is the set used at stage t
        assert!(states[1].get(key.0, key.1).unwrap().is_empty());
        let rec = |age| BTreeSet::from([DefectionRecord { accused: 0, victim: 1, age }]);
        assert_eq!(states[2].get(key.0, key.1).unwrap(), &rec(-2));
        assert_eq!(states[4].get(key.0, key.1).unwrap(), &rec(0));
        assert_eq!(states[5].get(key.0, key.1).unwrap(), &rec(1));
        assert!(states[6].get(key.0, key.1).unwrap().is_empty());
        // the edge's endpoints act at once
        assert_eq!(states[1].get(Vertex::Node(0), Vertex::Node(1)).unwrap(), &rec(0));
    }

    #[test]
    fn infinite_peer_delay_suppresses() {
        let (g, _) = late_observer();
        let d = compute_delays(
            &g,
            &DelayModelConfig {
                overrides: vec![DelayOverride { observer: Vertex::Node(3), accused: 0, victim: 1, delay: None }],
            },
        )
        .unwrap();
        let tau = DurationPolicy::uniform(Tau::Finite(3));
        let log = [DefectionEvent { accused: 0, victim: 1, stage: 0 }];
        for st in run_private(&g, &d, &tau, &log, 8) {
            assert!(st.get(Vertex::Node(2), Vertex::Node(3)).unwrap().is_empty());
            assert!(st.get(Vertex::Node(0), Vertex::Node(3)).unwrap().is_empty());
        }
    }

    #[test]
    fn coordinated_examples() {
        let (g, d) = late_observer();
        let pol = coordinated_durations(&g, &d, 3).unwrap();
        let mdel = d.mdel(&g, 0).unwrap();
        assert_eq!(mdel, 3);
        assert_eq!(pol.duration(0, 1, Vertex::Node(2), Vertex::Node(1)), Tau::Finite(mdel + 3 - 1));
        assert_eq!(pol.duration(0, 1, Vertex::Node(3), Vertex::Node(0)), Tau::Finite(3));
        assert!(enforces_coordination(&pol, &d, &g));
        let zeros = DelayMatrix::zeros(&g);
        let pz = coordinated_durations(&g, &zeros, 4).unwrap();
        assert_eq!(pz.duration(1, 2, Vertex::Node(0), Vertex::Node(1)), Tau::Finite(4));
    }

    #[test]
    fn coordinated_cutoff_is_zero() {
        let edges: Vec<_> = (0..4)
            .flat_map(|a| (0..4).filter(move |&b| b != a).map(move |b| (a, b)))
            .filter(|&e| e != (3, 1))
            .collect();
        let g = build_graph(4, &edges, &[0, 1, 2, 3]).unwrap();
        let d = compute_delays(
            &g,
            &DelayModelConfig {
                overrides: vec![DelayOverride { observer: Vertex::Node(3), accused: 1, victim: 2, delay: Some(10) }],
            },
        )
        .unwrap();
        let pol = coordinated_durations(&g, &d, 1).unwrap();
        assert_eq!(d.mdel(&g, 1), Some(1));
        assert_eq!(pol.duration(1, 2, Vertex::Node(3), Vertex::Node(0)), Tau::Finite(0));
        assert_eq!(pol.duration(1, 2, Vertex::Node(0), Vertex::Node(1)), Tau::Finite(1));
    }

    #[test]
    fn uncoordinated_windows_disjoint() {
        let g = build_graph(3, &[(0, 2), (1, 2), (2, 0), (2, 1)], &[0, 1]).unwrap();
        let d = compute_delays(
            &g,
            &DelayModelConfig {
                overrides: vec![DelayOverride { observer: Vertex::Node(1), accused: 2, victim: 0, delay: Some(2) }],
            },
        )
        .unwrap();
        let pol = DurationPolicy::uniform(Tau::Finite(1));
        assert!(!enforces_coordination(&pol, &d, &g));
        let single = build_graph(2, &[(0, 1)], &[0, 1]).unwrap();
        let ds = compute_delays(&single, &DelayModelConfig::default()).unwrap();
        assert!(enforces_coordination(&DurationPolicy::uniform(Tau::Finite(1)), &ds, &single));
    }

    #[test]
    fn unpunishable_reported() {
        let g = build_graph(3, &[(0, 1), (1, 2)], &[0]).unwrap();
        let d = compute_delays(&g, &DelayModelConfig::default()).unwrap();
        assert!(matches!(coordinated_durations(&g, &d, 2), Err(Error::UnpunishableNode { .. })));
    }

    #[test]
    fn tau_serde() {
        assert_eq!(serde_json::from_str::<Tau>("\"grim\"").unwrap(), Tau::Grim);
        assert_eq!(serde_json::from_str::<Tau>("3").unwrap(), Tau::Finite(3));
        assert!(serde_json::from_str::<Tau>("0").is_err());
        assert_eq!(serde_json::to_string(&Tau::Grim).unwrap(), "\"grim\"");
    }
}
