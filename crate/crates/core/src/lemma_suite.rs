//! Randomized property suites: reliability lemmas, Defection Set closed forms,
//! threshold agreement, truncation and the bound sandwich.

use std::collections::BTreeSet;
use std::ops::Range;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::epidemic_model::{
    exact_non_delivery, percolation_oracle, single_impact_ratio, ForwardProfile, ORACLE_EDGE_CAP,
};
use crate::equilibrium_analyzer::{effectiveness_threshold, HistoryFamily};
use crate::error::{Error, Result};
use crate::overlay_graph::{build_graph, compute_delays, DelayModelConfig, NodeId, OverlayGraph, Vertex};
use crate::punishing_strategy::{
    coordinated_durations, receiver_threshold, threshold_profile, DefectionRecord, DurationPolicy, PunishState,
    ReactionMode, ReactionSetConfig, Tau,
};
use crate::repeated_game::{
    drops_at, evolve, public_scenario, DropDeviation, Monitoring, QCache, Scenario, Sim, UtilityParams,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteResult {
    pub suite: String,
    pub cases: usize,
    pub passed: usize,
    pub failed: usize,
    /// Cases skipped because the generated instance did not meet the suite's assumptions.
    pub skipped: usize,
    pub counterexample: Option<String>,
}

impl SuiteResult {
    pub fn ok(&self) -> bool {
        self.failed == 0
    }
}

/// Deliberate defects for checking that the suites can fail.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Faults {
    /// Added to the public Defection Set expiry test.
    pub ds_expiry_slack: i64,
}

pub const SUITES: [&str; 6] = ["oracle", "appendix", "ds_public", "ds_private", "truncation", "sandwich"];

/// RNG for one case: the suite seed selects the key, the case index the stream.
pub fn case_rng(seed: u64, suite: u64, case: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ suite.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    rng.set_stream(case);
    rng
}

enum Outcome {
    Pass,
    Skip,
    Fail { size: (usize, usize), dump: String },
}

fn run_cases(name: &str, cases: usize, f: impl Fn(u64) -> Outcome + Sync) -> SuiteResult {
    let outcomes: Vec<Outcome> = (0..cases as u64).into_par_iter().map(&f).collect();
    let mut r = SuiteResult {
        suite: name.to_string(),
        cases,
        passed: 0,
        failed: 0,
        skipped: 0,
        counterexample: None,
    };
    let mut best: Option<((usize, usize), u64, String)> = None;
    for (c, o) in outcomes.into_iter().enumerate() {
        match o {
            Outcome::Pass => r.passed += 1,
            Outcome::Skip => r.skipped += 1,
            Outcome::Fail { size, dump } => {
                r.failed += 1;
                if best.as_ref().is_none_or(|b| (size, c as u64) < (b.0, b.1)) {
                    best = Some((size, c as u64, dump));
                }
            }
        }
    }
    r.counterexample = best.map(|(_, c, d)| format!("case {c}: {d}"));
    r
}

/// Random graph with `n ∈ [n_lo, n_hi]`, edge density drawn from `density`, connected from the source.
pub fn random_graph(rng: &mut ChaCha8Rng, n_lo: usize, n_hi: usize, density: Range<f64>) -> OverlayGraph {
    loop {
        let density = rng.gen_range(density.clone());
        let n = rng.gen_range(n_lo..=n_hi);
        let edges: Vec<(usize, usize)> = (0..n)
            .flat_map(|a| (0..n).map(move |b| (a, b)))
            .filter(|&(a, b)| a != b)
            .filter(|_| rng.gen_bool(density))
            .collect();
        let mut targets: Vec<usize> = (0..n).filter(|_| rng.gen_bool(0.4)).collect();
        if targets.is_empty() {
            targets.push(rng.gen_range(0..n));
        }
        if let Ok(g) = build_graph(n, &edges, &targets) {
            return g;
        }
    }
}

/// Profile with every probability drawn from `values`.
pub fn random_profile(rng: &mut ChaCha8Rng, g: &OverlayGraph, values: &[f64]) -> ForwardProfile {
    let mut p = ForwardProfile::zeros(g);
    for &t in g.source_targets() {
        p.source_probs[t] = *values.choose(rng).unwrap();
    }
    for x in p.node_probs.iter_mut() {
        *x = *values.choose(rng).unwrap();
    }
    p
}

/// Profile with every probability uniform in [lo, hi].
pub fn random_positive_profile(rng: &mut ChaCha8Rng, g: &OverlayGraph, lo: f64, hi: f64) -> ForwardProfile {
    let mut p = ForwardProfile::zeros(g);
    for &t in g.source_targets() {
        p.source_probs[t] = rng.gen_range(lo..=hi);
    }
    for x in p.node_probs.iter_mut() {
        *x = rng.gen_range(lo..=hi);
    }
    p
}

fn fractional_edges(p: &ForwardProfile) -> usize {
    p.source_probs
        .iter()
        .chain(&p.node_probs)
        .filter(|&&x| x > 0.0 && x < 1.0)
        .count()
}

fn dump_graph(g: &OverlayGraph, p: &ForwardProfile) -> String {
    format!(
        "n={} targets={:?} edges={:?} source_probs={:?} node_probs={:?}",
        g.n(),
        g.source_targets(),
        g.edges(),
        p.source_probs,
        p.node_probs
    )
}

fn size(g: &OverlayGraph) -> (usize, usize) {
    (g.n(), g.edges().len())
}

/// Random graph and profile whose percolation oracle fits the edge cap; also returns
/// how many draws were rejected for exceeding it.
pub fn oracle_instance(rng: &mut ChaCha8Rng, n_hi: usize, values: &[f64]) -> (OverlayGraph, ForwardProfile, usize) {
    let mut rejected = 0;
    loop {
        let g = random_graph(rng, 1, n_hi, 0.2..0.9);
        let p = random_profile(rng, &g, values);
        if fractional_edges(&p) <= ORACLE_EDGE_CAP {
            return (g, p, rejected);
        }
        rejected += 1;
    }
}

/// Exact recursion against the percolation oracle.
pub fn oracle_suite(cases: usize, seed: u64, n_hi: usize) -> SuiteResult {
    run_cases("oracle", cases, |c| {
        let mut rng = case_rng(seed, 0, c);
        let (g, p, _) = oracle_instance(&mut rng, n_hi, &[0.0, 0.3, 0.7, 1.0]);
        for i in 0..g.n() {
            let (Ok(a), Ok(b)) = (exact_non_delivery(&g, &p, &[i]), percolation_oracle(&g, &p, &[i])) else {
                return Outcome::Fail {
                    size: size(&g),
                    dump: format!("evaluation error; {}", dump_graph(&g, &p)),
                };
            };
            if (a - b).abs() > 1e-12 {
                return Outcome::Fail {
                    size: size(&g),
                    dump: format!("node {i}: exact {a} oracle {b}; {}", dump_graph(&g, &p)),
                };
            }
        }
        Outcome::Pass
    })
}

/// Random simple path s → … → node, as vertex pairs.
fn random_source_path(rng: &mut ChaCha8Rng, g: &OverlayGraph) -> (NodeId, Vec<(Vertex, NodeId)>) {
    let mut cur = *g.source_targets().choose(rng).unwrap();
    let mut path = vec![(Vertex::Source, cur)];
    let mut seen: BTreeSet<NodeId> = [cur].into();
    let len = rng.gen_range(0..=g.n());
    for _ in 0..len {
        let next: Vec<NodeId> = g.out_neighbors(cur).iter().copied().filter(|v| !seen.contains(v)).collect();
        let Some(&v) = next.choose(rng) else { break };
        path.push((Vertex::Node(cur), v));
        seen.insert(v);
        cur = v;
    }
    (cur, path)
}

fn appendix_case(rng: &mut ChaCha8Rng, n_hi: usize) -> std::result::Result<(), (OverlayGraph, String)> {
    let g = random_graph(rng, 1, n_hi, 0.2..0.8);
    let fail = |g: &OverlayGraph, m: String| Err((g.clone(), m));
    let vals = [0.0, 0.2, 0.5, 0.8, 1.0];

    let mut p = random_profile(rng, &g, &vals);
    let (i, path) = random_source_path(rng, &g);
    for &(u, v) in &path {
        p.set(&g, u, v, 1.0);
    }
    let q = exact_non_delivery(&g, &p, &[i]).unwrap();
    if q != 0.0 {
        return fail(&g, format!("certain path to {i} but q={q}; {}", dump_graph(&g, &p)));
    }

    let mut p = random_profile(rng, &g, &vals);
    let i = rng.gen_range(0..g.n());
    for k in g.in_vertices(i) {
        p.set(&g, k, i, 0.0);
    }
    let q = exact_non_delivery(&g, &p, &[i]).unwrap();
    if q != 1.0 {
        return fail(&g, format!("no feeding in-neighbor of {i} but q={q}; {}", dump_graph(&g, &p)));
    }

    let mut p = random_profile(rng, &g, &vals);
    let (i, path) = random_source_path(rng, &g);
    for &(u, v) in &path {
        if p.get(&g, u, v) == 0.0 {
            p.set(&g, u, v, rng.gen_range(0.01..1.0));
        }
    }
    let q = exact_non_delivery(&g, &p, &[i]).unwrap();
    if q >= 1.0 {
        return fail(&g, format!("positive path to {i} but q={q}; {}", dump_graph(&g, &p)));
    }

    let p = random_positive_profile(rng, &g, 0.0, 0.95);
    let i = rng.gen_range(0..g.n());
    let ins = g.in_vertices(i);
    if let Some(&j) = ins.choose(rng) {
        let cur = p.get(&g, j, i);
        if cur > 0.0 {
            let reduced = rng.gen_range(0.0..cur);
            let (q, q2) = single_impact_ratio(&g, &p, i, j, reduced).unwrap();
            if q > 0.0 && q2 > q * (1.0 - reduced) / (1.0 - cur) + 1e-12 {
                return fail(
                    &g,
                    format!("single impact {j}->{i}: q={q} q'={q2} p={cur} p'={reduced}; {}", dump_graph(&g, &p)),
                );
            }
        }
    }

    let p = random_positive_profile(rng, &g, 0.0, 1.0);
    let i = rng.gen_range(0..g.n());
    let mut p2 = p.clone();
    for k in (0..g.n()).filter(|&k| !g.on_simple_source_path(i, k)) {
        for &v in g.out_neighbors(k) {
            p2.set(&g, Vertex::Node(k), v, rng.gen_range(0.0..=1.0));
        }
    }
    let (a, b) = (exact_non_delivery(&g, &p, &[i]).unwrap(), exact_non_delivery(&g, &p2, &[i]).unwrap());
    if (a - b).abs() > 1e-12 {
        return fail(&g, format!("off-path change moved q_{i} from {a} to {b}; {}", dump_graph(&g, &p)));
    }
    Ok(())
}

/// Deterministic delivery, no feeding neighbor, positive path, single impact and
/// off-path invariance.
pub fn appendix_suite(cases: usize, seed: u64, n_hi: usize) -> SuiteResult {
    run_cases("appendix", cases, |c| {
        let mut rng = case_rng(seed, 1, c);
        match appendix_case(&mut rng, n_hi) {
            Ok(()) => Outcome::Pass,
            Err((g, dump)) => Outcome::Fail { size: size(&g), dump },
        }
    })
}

/// Random drops over `len` stages.
pub fn random_history(rng: &mut ChaCha8Rng, g: &OverlayGraph, len: u64) -> Vec<DropDeviation> {
    let mut out = vec![];
    for t in 0..len {
        for k in 0..g.n() {
            if !g.out_neighbors(k).is_empty() && rng.gen_bool(0.25) {
                out.push(random_drop(rng, g, k, t));
            }
        }
    }
    out
}

fn random_drop(rng: &mut ChaCha8Rng, g: &OverlayGraph, k: NodeId, t: u64) -> DropDeviation {
    let outs = g.out_neighbors(k);
    let mut dropped: Vec<NodeId> = outs.iter().copied().filter(|_| rng.gen_bool(0.5)).collect();
    if dropped.is_empty() {
        dropped.push(*outs.choose(rng).unwrap());
    }
    DropDeviation {
        deviator: k,
        dropped,
        at_stage: t,
    }
}

fn random_rs(rng: &mut ChaCha8Rng, g: &OverlayGraph) -> ReactionSetConfig {
    match rng.gen_range(0..3) {
        0 => ReactionSetConfig::direct(),
        1 => ReactionSetConfig::full_indirect(),
        _ => {
            let mut rs = ReactionSetConfig {
                mode: ReactionMode::Custom,
                custom_sets: Default::default(),
            };
            for &(a, b) in g.edges() {
                let set: BTreeSet<Vertex> = std::iter::once(Vertex::Source)
                    .chain((0..g.n()).map(Vertex::Node))
                    .filter(|_| rng.gen_bool(0.3))
                    .collect();
                rs.custom_sets.insert((a, b), set);
            }
            rs
        }
    }
}

type Ds = std::collections::BTreeMap<(Vertex, Vertex), BTreeSet<DefectionRecord>>;

fn aged(h: &Ds, r: i64, tau: i64) -> Ds {
    h.iter()
        .map(|(k, recs)| {
            let set = recs
                .iter()
                .filter(|x| x.age + r < tau)
                .map(|x| DefectionRecord { age: x.age + r, ..*x })
                .collect();
            (*k, set)
        })
        .collect()
}

fn ds_public_case(rng: &mut ChaCha8Rng, faults: Faults) -> std::result::Result<(), (OverlayGraph, String)> {
    let g = random_graph(rng, 2, 6, 0.3..0.8);
    let tau = rng.gen_range(1..=5u32);
    let rs = random_rs(rng, &g);
    let baseline = random_positive_profile(rng, &g, 0.1, 1.0);
    let sc = public_scenario(g.clone(), baseline, UtilityParams::uniform(g.n(), 1.0, 1.0, 0.5), rs, Tau::Finite(tau));
    let len = rng.gen_range(0..=3u64);
    let history = random_history(rng, &g, len);
    let k = rng.gen_range(1..=3usize);
    let mut drops = vec![];
    for _ in 0..k {
        let mut cands: Vec<NodeId> = (0..g.n()).filter(|&x| !g.out_neighbors(x).is_empty()).collect();
        cands.shuffle(rng);
        if let Some(&x) = cands.first() {
            let d = random_drop(rng, &g, x, len);
            drops.extend(d.dropped.iter().map(|&v| (x, v)));
        }
    }
    drops.sort();
    drops.dedup();
    let mut sim = Sim::with_fault(&sc, faults.ds_expiry_slack);
    for t in 0..len {
        sim.step(&drops_at(&history, t));
    }
    let h_ds = sim.state().ds.clone();
    let thr = sim.thresholds();
    let cd: Vec<(NodeId, NodeId)> = drops
        .iter()
        .copied()
        .filter(|&(a, b)| thr.node_probs[g.edge_index(a, b).unwrap()] > 0.0)
        .collect();
    let mut star = sim.clone();
    let mut dev = sim;
    let tau_i = tau as i64;
    let dump = |m: String| format!("{m}; tau={tau} rs={:?} history={history:?} drops={drops:?}", sc.rs.mode);
    for r in 1..=tau_i + 2 {
        star.step(&[]);
        dev.step(if r == 1 { &drops } else { &[] });
        let expect_star = aged(&h_ds, r, tau_i);
        if star.state().ds != expect_star {
            return Err((g.clone(), dump(format!("conforming set mismatch at r={r}"))));
        }
        let mut expect_dev = expect_star.clone();
        if r <= tau_i {
            for (&(a, b), set) in expect_dev.iter_mut() {
                for &(k1, k2) in &cd {
                    let members = sc.rs.set(&g, k1, k2);
                    if members.contains(&a) && members.contains(&b) {
                        set.insert(DefectionRecord {
                            accused: k1,
                            victim: k2,
                            age: r - 1,
                        });
                    }
                }
            }
        }
        if dev.state().ds != expect_dev {
            return Err((g.clone(), dump(format!("deviated set mismatch at r={r}"))));
        }
        if r > tau_i && !(star.state().is_empty() && dev.state().is_empty()) {
            return Err((g.clone(), dump(format!("sets not empty at r={r}"))));
        }
    }
    Ok(())
}

/// Public Defection Set evolution against its closed forms.
pub fn ds_public_suite(cases: usize, seed: u64, faults: Faults) -> SuiteResult {
    run_cases("ds_public", cases, |c| {
        let mut rng = case_rng(seed, 2, c);
        match ds_public_case(&mut rng, faults) {
            Ok(()) => Outcome::Pass,
            Err((g, dump)) => Outcome::Fail { size: size(&g), dump },
        }
    })
}

/// A private-monitoring scenario with default delays and a random duration policy.
pub fn random_private_scenario(rng: &mut ChaCha8Rng, n_lo: usize, n_hi: usize, policy: PolicyChoice) -> Option<Scenario> {
    let g = random_graph(rng, n_lo, n_hi, 0.4..0.9);
    let delays = compute_delays(&g, &DelayModelConfig::default()).ok()?;
    let tau = rng.gen_range(1..=3u32);
    let durations = match policy {
        PolicyChoice::Coordinated => coordinated_durations(&g, &delays, tau).ok()?,
        PolicyChoice::Any => match rng.gen_range(0..3) {
            0 => coordinated_durations(&g, &delays, tau).unwrap_or(DurationPolicy::uniform(Tau::Finite(tau))),
            1 => DurationPolicy::uniform(Tau::Finite(tau)),
            _ => DurationPolicy::uniform(Tau::Grim),
        },
    };
    let baseline = random_positive_profile(rng, &g, 0.3, 0.95);
    Some(Scenario {
        params: UtilityParams::uniform(g.n(), 1.0, 1.0, 0.5),
        graph: g,
        baseline,
        monitoring: Monitoring::Private,
        rs: ReactionSetConfig::full_indirect(),
        durations,
        delays,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PolicyChoice {
    Coordinated,
    Any,
}

fn agreement(g: &OverlayGraph, state: &PunishState, baseline: &ForwardProfile) -> Option<String> {
    let thr = threshold_profile(g, state, baseline);
    for &t in g.source_targets() {
        let r = receiver_threshold(g, state, baseline, Vertex::Source, t);
        if r != thr.source_probs[t] {
            return Some(format!("p_s[{t}]: sender {} receiver {r}", thr.source_probs[t]));
        }
    }
    for (e, &(a, b)) in g.edges().iter().enumerate() {
        let r = receiver_threshold(g, state, baseline, Vertex::Node(a), b);
        if r != thr.node_probs[e] {
            return Some(format!("p_{a}[{b}]: sender {} receiver {r}", thr.node_probs[e]));
        }
    }
    None
}

fn ds_private_case(rng: &mut ChaCha8Rng) -> std::result::Result<bool, (OverlayGraph, String)> {
    let Some(sc) = random_private_scenario(rng, 2, 6, PolicyChoice::Any) else {
        return Ok(false);
    };
    let g = &sc.graph;
    let len = rng.gen_range(0..=3u64);
    let history = random_history(rng, g, len);
    let x = loop {
        let x = rng.gen_range(0..g.n());
        if !g.out_neighbors(x).is_empty() {
            break Some(x);
        }
        if g.edges().is_empty() {
            break None;
        }
    };
    let drops: Vec<(NodeId, NodeId)> = match x {
        Some(x) => random_drop(rng, g, x, len).dropped.iter().map(|&v| (x, v)).collect(),
        None => vec![],
    };
    let dump = |m: String| {
        format!(
            "{m}; durations={:?} history={history:?} drops={drops:?} edges={:?} targets={:?}",
            sc.durations,
            g.edges(),
            g.source_targets()
        )
    };
    let mut sim = Sim::new(&sc);
    for t in 0..len {
        if let Some(m) = agreement(g, sim.state(), &sc.baseline) {
            return Err((g.clone(), dump(format!("history stage {t}: {m}"))));
        }
        sim.step(&drops_at(&history, t));
    }
    let thr = sim.thresholds();
    let cd: Vec<(NodeId, NodeId)> = drops
        .iter()
        .copied()
        .filter(|&(a, b)| thr.node_probs[g.edge_index(a, b).unwrap()] > 0.0)
        .collect();
    let mdel = sc.delays.max_finite() as i64;
    let tau = sc.durations.max_finite().unwrap_or(3) as i64;
    let horizon = 3 * (mdel + tau);
    let mut star = sim.clone();
    let mut dev = sim;
    for r in 1..=horizon {
        for (name, s) in [("conforming", &star), ("deviated", &dev)] {
            if let Some(m) = agreement(g, s.state(), &sc.baseline) {
                return Err((g.clone(), dump(format!("{name} r={}: {m}", r - 1))));
            }
        }
        star.step(&[]);
        dev.step(if r == 1 { &drops } else { &[] });
        let mut expect = star.state().ds.clone();
        for (&(a, b), set) in expect.iter_mut() {
            for &(k1, k2) in &cd {
                let (Some(da), Some(db)) = (sc.delays.get(g, a, k1, k2), sc.delays.get(g, b, k1, k2)) else {
                    continue;
                };
                let (da, db) = (da as i64, db as i64);
                let v = (da - db).min(0);
                let inside = match sc.durations.duration(k1, k2, a, b) {
                    Tau::Grim => r > da,
                    Tau::Finite(t) => r > da && r <= da + t as i64 - v,
                };
                if inside {
                    set.insert(DefectionRecord {
                        accused: k1,
                        victim: k2,
                        age: r - 1 - da + v,
                    });
                }
            }
        }
        if dev.state().ds != expect {
            return Err((g.clone(), dump(format!("window mismatch at r={r}"))));
        }
    }
    Ok(true)
}

/// Private Defection Set windows and sender/receiver threshold agreement.
pub fn ds_private_suite(cases: usize, seed: u64) -> SuiteResult {
    run_cases("ds_private", cases, |c| {
        let mut rng = case_rng(seed, 3, c);
        match ds_private_case(&mut rng) {
            Ok(true) => Outcome::Pass,
            Ok(false) => Outcome::Skip,
            Err((g, dump)) => Outcome::Fail { size: size(&g), dump },
        }
    })
}

/// One-shot deviation from the empty history under coordinated durations: the
/// deviator's utility at each stage, and whether it matched the expected pattern.
pub fn coordinated_deviation_check(sc: &Scenario, deviator: NodeId, dropped: &[NodeId]) -> Result<Option<String>> {
    let g = &sc.graph;
    let mdel = sc.delays.mdel(g, deviator).ok_or(Error::UnpunishableNode {
        accused: deviator,
        victim: dropped[0],
        observer: Vertex::Source,
    })? as usize;
    let tau = sc.durations.base.finite().ok_or(Error::WrongMode("finite durations needed"))? as usize;
    let cache = QCache::new();
    let horizon = mdel + tau + 4;
    let base = evolve(sc, &[], 1, &cache)?.stages[0].u[deviator];
    let dev = DropDeviation {
        deviator,
        dropped: dropped.to_vec(),
        at_stage: 0,
    };
    let tr = evolve(sc, &[dev], horizon as u64, &cache)?;
    for (t, s) in tr.stages.iter().enumerate() {
        let u = s.u[deviator];
        if (mdel + 1..=mdel + tau).contains(&t) && u != 0.0 {
            return Ok(Some(format!("stage {t}: utility {u}, expected 0 (mdel={mdel}, tau={tau})")));
        }
        if t > mdel + tau && u != base {
            return Ok(Some(format!("stage {t}: utility {u}, expected baseline {base}")));
        }
    }
    Ok(None)
}

fn truncation_case(rng: &mut ChaCha8Rng) -> std::result::Result<bool, (OverlayGraph, String)> {
    if rng.gen_bool(0.5) {
        let g = random_graph(rng, 2, 6, 0.3..0.8);
        let tau = rng.gen_range(1..=4u32);
        let rs = random_rs(rng, &g);
        let baseline = random_positive_profile(rng, &g, 0.2, 1.0);
        let sc = public_scenario(g.clone(), baseline, UtilityParams::uniform(g.n(), 3.0, 1.0, 0.5), rs, Tau::Finite(tau));
        let len = rng.gen_range(0..=2u64);
        let mut history = random_history(rng, &g, len);
        let Some(x) = (0..g.n()).find(|&x| !g.out_neighbors(x).is_empty()) else {
            return Ok(false);
        };
        let cache = QCache::new();
        let h = len + tau as u64 + 4;
        let star = evolve(&sc, &history, h, &cache).map_err(|e| (g.clone(), e.to_string()))?;
        history.push(random_drop(rng, &g, x, len));
        let dev = evolve(&sc, &history, h, &cache).map_err(|e| (g.clone(), e.to_string()))?;
        for t in (len + tau as u64 + 1)..h {
            if star.stages[t as usize].u != dev.stages[t as usize].u {
                return Err((g.clone(), format!("public utilities differ at stage {t}, tau={tau}, history={history:?}")));
            }
        }
        Ok(true)
    } else {
        let Some(sc) = random_private_scenario(rng, 2, 6, PolicyChoice::Coordinated) else {
            return Ok(false);
        };
        let g = &sc.graph;
        let cands: Vec<NodeId> = (0..g.n()).filter(|&x| !g.out_neighbors(x).is_empty()).collect();
        let Some(&x) = cands.choose(rng) else { return Ok(false) };
        let d = random_drop(rng, g, x, 0);
        match coordinated_deviation_check(&sc, x, &d.dropped) {
            Ok(None) => Ok(true),
            Ok(Some(m)) => Err((g.clone(), format!("{m}; deviator {x} drops {:?}; edges {:?}", d.dropped, g.edges()))),
            Err(e) => Err((g.clone(), e.to_string())),
        }
    }
}

/// Exact truncation of utility differences (public) and the coordinated punishment
/// window (private).
pub fn truncation_suite(cases: usize, seed: u64) -> SuiteResult {
    run_cases("truncation", cases, |c| {
        let mut rng = case_rng(seed, 4, c);
        match truncation_case(&mut rng) {
            Ok(true) => Outcome::Pass,
            Ok(false) => Outcome::Skip,
            Err((g, dump)) => Outcome::Fail { size: size(&g), dump },
        }
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundKind {
    PublicIndirect,
    PrivateCoordinated,
}

/// Random scenario for the given sufficient bound.
pub fn bound_scenario(rng: &mut ChaCha8Rng, kind: BoundKind, n_hi: usize) -> Option<Scenario> {
    match kind {
        BoundKind::PublicIndirect => {
            let g = random_graph(rng, 2, n_hi, 0.4..1.0);
            let tau = rng.gen_range(1..=4u32);
            let baseline = random_positive_profile(rng, &g, 0.3, 0.95);
            Some(public_scenario(
                g.clone(),
                baseline,
                UtilityParams::uniform(g.n(), 1.0, 1.0, 0.5),
                ReactionSetConfig::full_indirect(),
                Tau::Finite(tau),
            ))
        }
        BoundKind::PrivateCoordinated => random_private_scenario(rng, 2, n_hi, PolicyChoice::Coordinated),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SandwichRow {
    pub folk: f64,
    pub threshold: f64,
    pub sufficient: Option<f64>,
}

/// Folk ≤ threshold ≤ sufficient bound; `None` when the bound's assumptions fail.
pub fn sandwich(sc: &Scenario, depth: usize) -> Result<Option<SandwichRow>> {
    let cache = QCache::new();
    let fam = HistoryFamily::build(sc, depth);
    let r = effectiveness_threshold(sc, &fam, &cache)?;
    if r.sufficient.is_none() {
        return Ok(None);
    }
    Ok(Some(SandwichRow {
        folk: r.folk,
        threshold: r.threshold,
        sufficient: r.sufficient,
    }))
}

pub fn sandwich_holds(row: &SandwichRow) -> bool {
    let rel = 1e-6;
    row.folk <= row.threshold * (1.0 + rel) + 1e-12
        && row.sufficient.is_some_and(|s| row.threshold <= s * (1.0 + rel) + 1e-12)
}

pub fn sandwich_suite(cases: usize, seed: u64) -> SuiteResult {
    run_cases("sandwich", cases, |c| {
        let mut rng = case_rng(seed, 5, c);
        let kind = if c % 2 == 0 {
            BoundKind::PublicIndirect
        } else {
            BoundKind::PrivateCoordinated
        };
        let Some(sc) = bound_scenario(&mut rng, kind, 4) else {
            return Outcome::Skip;
        };
        match sandwich(&sc, 1) {
            Ok(None) => Outcome::Skip,
            Ok(Some(row)) if sandwich_holds(&row) => Outcome::Pass,
            Ok(Some(row)) => Outcome::Fail {
                size: size(&sc.graph),
                dump: format!("{kind:?} {row:?}; edges {:?}", sc.graph.edges()),
            },
            Err(e) => Outcome::Fail {
                size: size(&sc.graph),
                dump: e.to_string(),
            },
        }
    })
}

/// Every suite with `cases` cases each.
pub fn run_all(cases: usize, seed: u64, faults: Faults) -> Vec<SuiteResult> {
    vec![
        oracle_suite(cases, seed, 5),
        appendix_suite(cases, seed, 8),
        ds_public_suite(cases, seed, faults),
        ds_private_suite(cases, seed),
        truncation_suite(cases, seed),
        sandwich_suite(cases.div_ceil(10), seed),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suites_pass_small() {
        for r in run_all(12, 7, Faults::default()) {
            assert!(r.ok(), "{r:?}");
        }
    }

    #[test]
    fn expiry_fault_is_caught() {
        let r = ds_public_suite(30, 3, Faults { ds_expiry_slack: 1 });
        assert!(r.failed > 0);
        assert!(r.counterexample.is_some());
    }

    #[test]
    fn zero_cases_vacuous() {
        let r = oracle_suite(0, 1, 5);
        assert_eq!((r.cases, r.failed), (0, 0));
    }

    #[test]
    fn rng_streams_are_stable() {
        let a: u64 = case_rng(5, 1, 2).gen();
        let b: u64 = case_rng(5, 1, 2).gen();
        let c: u64 = case_rng(5, 1, 3).gen();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }
}
