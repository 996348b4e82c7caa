//! DC/PDC checks over a finite history family, effectiveness bounds, minimum discount
//! factors and empirical effectiveness thresholds.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::epidemic_model::single_impact_ratio;
use crate::error::{Error, Result};
use crate::overlay_graph::{NodeId, Vertex};
use crate::punishing_strategy::{coordination_failure, ReactionMode, Tau};
pub use crate::repeated_game::Scenario;
use crate::repeated_game::{
    defection_log, deviation_coefficients, legal_drop_targets, star_path, DiffCoefficients, DropDeviation,
    Monitoring, QCache,
};

pub const MARGIN_TOL: f64 = 1e-9;
const MAX_FULL_ENUMERATION: usize = 12;

/// A history prefix: drops played at stages before `len`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct HistorySeed {
    pub label: String,
    pub actions: Vec<DropDeviation>,
    pub len: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryFamily {
    pub seeds: Vec<HistorySeed>,
}

impl HistoryFamily {
    pub fn empty_only() -> Self {
        HistoryFamily {
            seeds: vec![HistorySeed {
                label: "empty".into(),
                actions: vec![],
                len: 0,
            }],
        }
    }

    /// depth 0: empty and aligned histories; depth 1 adds one-stage seeds; depth 2 adds
    /// two stacked seeds.
    pub fn build(sc: &Scenario, depth: usize) -> Self {
        let g = &sc.graph;
        let mut seeds = vec![HistorySeed {
            label: "empty".into(),
            actions: vec![],
            len: 0,
        }];
        let mut singles: Vec<(String, Vec<NodeId>, NodeId)> = Vec::new();
        for k in 0..g.n() {
            let outs = g.out_neighbors(k);
            if outs.is_empty() {
                continue;
            }
            for &l in outs {
                singles.push((format!("{k}>{l}"), vec![l], k));
            }
            if outs.len() > 1 {
                singles.push((format!("{k}>*"), outs.to_vec(), k));
            }
        }
        for i in 0..g.n() {
            let actions: Vec<DropDeviation> = (0..g.n())
                .filter(|&k| k != i && !g.out_neighbors(k).is_empty())
                .map(|k| DropDeviation {
                    deviator: k,
                    dropped: g.out_neighbors(k).to_vec(),
                    at_stage: 0,
                })
                .collect();
            if !actions.is_empty() {
                seeds.push(HistorySeed {
                    label: format!("aligned-except-{i}"),
                    actions,
                    len: 1,
                });
            }
        }
        if depth >= 1 {
            for (label, dropped, k) in &singles {
                seeds.push(HistorySeed {
                    label: label.clone(),
                    actions: vec![DropDeviation {
                        deviator: *k,
                        dropped: dropped.clone(),
                        at_stage: 0,
                    }],
                    len: 1,
                });
            }
        }
        if depth >= 2 {
            for (la, da, ka) in &singles {
                for (lb, db, kb) in &singles {
                    seeds.push(HistorySeed {
                        label: format!("{la},{lb}"),
                        actions: vec![
                            DropDeviation {
                                deviator: *ka,
                                dropped: da.clone(),
                                at_stage: 0,
                            },
                            DropDeviation {
                                deviator: *kb,
                                dropped: db.clone(),
                                at_stage: 1,
                            },
                        ],
                        len: 2,
                    });
                }
            }
        }
        let mut seen = BTreeSet::new();
        seeds.retain(|s| seen.insert((s.len, defection_log(sc, &s.actions, s.len))));
        HistoryFamily { seeds }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Pass,
    Fail,
    Inconclusive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginEntry {
    pub history: String,
    pub deviator: NodeId,
    pub dropped: Vec<NodeId>,
    pub margin: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumReport {
    pub verdict: Verdict,
    /// Worst drop set for every (history, deviator) pair.
    pub margins: Vec<MarginEntry>,
    pub deviations_checked: usize,
    pub worst: Option<MarginEntry>,
    pub bounds: BTreeMap<String, Option<f64>>,
    pub min_omega: Vec<Option<f64>>,
    pub notes: Vec<String>,
}

/// One deviation evaluated on one history, as margin coefficients.
#[derive(Debug, Clone)]
pub struct DeviationCase {
    pub history: usize,
    pub deviator: NodeId,
    pub dropped: Vec<NodeId>,
    pub coeffs: DiffCoefficients,
}

fn drop_sets(targets: &[NodeId]) -> Vec<Vec<NodeId>> {
    if targets.is_empty() {
        return vec![];
    }
    if targets.len() <= MAX_FULL_ENUMERATION {
        (1u32..1 << targets.len())
            .map(|m| (0..targets.len()).filter(|b| m >> b & 1 == 1).map(|b| targets[b]).collect())
            .collect()
    } else {
        let mut v: Vec<Vec<NodeId>> = targets.iter().map(|&t| vec![t]).collect();
        v.push(targets.to_vec());
        v
    }
}

/// Every legal drop deviation over the family, as margin coefficients.
pub fn enumerate_cases(sc: &Scenario, family: &HistoryFamily, cache: &QCache) -> Result<Vec<DeviationCase>> {
    let jobs: Vec<(usize, NodeId)> = (0..family.seeds.len())
        .flat_map(|h| (0..sc.graph.n()).map(move |i| (h, i)))
        .collect();
    let per_job: Vec<Vec<DeviationCase>> = jobs
        .par_iter()
        .map(|&(h, i)| {
            let seed = &family.seeds[h];
            let targets = legal_drop_targets(sc, &seed.actions, seed.len, i);
            drop_sets(&targets)
                .into_iter()
                .map(|dropped| {
                    let dev = DropDeviation {
                        deviator: i,
                        dropped: dropped.clone(),
                        at_stage: seed.len,
                    };
                    let coeffs = deviation_coefficients(sc, &seed.actions, seed.len, &dev, cache)?;
                    Ok(DeviationCase {
                        history: h,
                        deviator: i,
                        dropped,
                        coeffs,
                    })
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    Ok(per_job.into_iter().flatten().collect())
}

fn check(sc: &Scenario, family: &HistoryFamily, cache: &QCache, mut notes: Vec<String>) -> Result<EquilibriumReport> {
    let cases = enumerate_cases(sc, family, cache)?;
    let p = &sc.params;
    let mut worst_per: BTreeMap<(usize, NodeId), MarginEntry> = BTreeMap::new();
    for c in &cases {
        let i = c.deviator;
        let m = c.coeffs.margin(p.beta[i], p.gamma[i], p.omega[i]);
        let entry = MarginEntry {
            history: family.seeds[c.history].label.clone(),
            deviator: i,
            dropped: c.dropped.clone(),
            margin: m,
        };
        let slot = worst_per.entry((c.history, i)).or_insert_with(|| entry.clone());
        if m < slot.margin {
            *slot = entry;
        }
    }
    let margins: Vec<MarginEntry> = worst_per.into_values().collect();
    let worst = margins
        .iter()
        .min_by(|a, b| {
            a.margin
                .total_cmp(&b.margin)
                .then_with(|| (a.deviator, &a.dropped, &a.history).cmp(&(b.deviator, &b.dropped, &b.history)))
        })
        .cloned();
    let verdict = match &worst {
        None => {
            notes.push("no legal deviation in the family".into());
            Verdict::Inconclusive
        }
        Some(w) if w.margin >= -MARGIN_TOL => Verdict::Pass,
        Some(_) => Verdict::Fail,
    };
    let mut bounds = BTreeMap::new();
    bounds.insert("folk".to_string(), Some(folk_upper_bound(sc)));
    notes.push(format!(
        "verdict on a family of {} histories, {} deviations",
        family.seeds.len(),
        cases.len()
    ));
    notes.sort();
    Ok(EquilibriumReport {
        verdict,
        margins,
        deviations_checked: cases.len(),
        worst,
        bounds,
        min_omega: vec![None; sc.graph.n()],
        notes,
    })
}

/// DC Condition over the family under public monitoring.
pub fn dc_check(sc: &Scenario, family: &HistoryFamily, cache: &QCache) -> Result<EquilibriumReport> {
    if sc.monitoring != Monitoring::Public {
        return Err(Error::WrongMode("dc_check needs public monitoring"));
    }
    check(sc, family, cache, vec![])
}

/// PDC Condition over the family with point-mass beliefs.
pub fn pdc_check(sc: &Scenario, family: &HistoryFamily, cache: &QCache) -> Result<EquilibriumReport> {
    if sc.monitoring != Monitoring::Private {
        return Err(Error::WrongMode("pdc_check needs private monitoring"));
    }
    let g = &sc.graph;
    let mut notes = vec![];
    let mdel: Vec<String> = (0..g.n())
        .map(|i| sc.delays.mdel(g, i).map_or("inf".to_string(), |m| m.to_string()))
        .collect();
    notes.push(format!("mdel per node: [{}]", mdel.join(", ")));
    match coordination_failure(&sc.durations, &sc.delays, g) {
        None => notes.push("durations enforce coordination".into()),
        Some((i, j)) => notes.push(format!("durations do not enforce coordination on edge ({i},{j})")),
    }
    for &(i, j) in g.edges() {
        if !g.lemma_paths_condition(i, j)? {
            notes.push(format!("edge ({i},{j}) fails the path condition"));
        }
    }
    check(sc, family, cache, notes)
}

/// max_i p̄_i.
pub fn folk_upper_bound(sc: &Scenario) -> f64 {
    (0..sc.graph.n())
        .map(|i| sc.baseline.pbar(&sc.graph, i))
        .fold(0.0, f64::max)
}

/// Necessary ratio for direct reciprocity when only `j` punishes `i`.
pub fn direct_necessary_ratio(sc: &Scenario, i: NodeId, j: NodeId) -> Result<f64> {
    let g = &sc.graph;
    if sc.rs.mode != ReactionMode::Direct {
        return Err(Error::WrongMode("direct_necessary_ratio needs direct reaction sets"));
    }
    let Some(tau) = sc.durations.base.finite() else {
        return Err(Error::WrongMode("direct_necessary_ratio needs a finite duration"));
    };
    let Some(e) = g.edge_index(i, j) else {
        return Err(Error::NotAnEdge(i, j));
    };
    let p = sc.baseline.node_probs[e];
    if !g.has_edge(Vertex::Node(j), i) {
        return Err(Error::NoBite(i, j));
    }
    let current = sc.baseline.get(g, Vertex::Node(j), i);
    if current == 0.0 {
        return Err(Error::NoBite(i, j));
    }
    let (qs, qd) = single_impact_ratio(g, &sc.baseline, i, Vertex::Node(j), 0.0)?;
    Ok(direct_ratio_formula(sc.baseline.pbar(g, i), p, qs, qd, tau as f64).ok_or(Error::NoBite(i, j))?)
}

/// p̄ + p/(q'−q*)·(1 − q' + (1 − q*)/τ), or None when q' ≤ q*.
pub fn direct_ratio_formula(pbar: f64, p: f64, q_star: f64, q_dev: f64, tau: f64) -> Option<f64> {
    (q_dev > q_star).then(|| pbar + p / (q_dev - q_star) * (1.0 - q_dev + (1.0 - q_star) / tau))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SufficientBound {
    pub value: Option<f64>,
    /// Assumption constant estimated over the family; None when no finite value fits.
    pub c: Option<f64>,
    pub simplified: Option<f64>,
}

/// Sufficient ratio for full indirect reciprocity: max p̄[h,0]·(1 + c/τ).
pub fn indirect_sufficient_ratio(sc: &Scenario, family: &HistoryFamily, cache: &QCache) -> Result<SufficientBound> {
    if sc.rs.mode != ReactionMode::FullIndirect {
        return Err(Error::WrongMode("indirect_sufficient_ratio needs full indirect reaction sets"));
    }
    let Some(tau) = sc.durations.base.finite() else {
        return Err(Error::WrongMode("indirect_sufficient_ratio needs a finite duration"));
    };
    let paths = family_paths(sc, family, 2, cache)?;
    let mut c: f64 = 1.0;
    let mut pmax: f64 = 0.0;
    for path in &paths {
        let (q0, p0) = path[0];
        let (q1, _) = path[1];
        pmax = pmax.max(p0);
        if q0 < 1.0 {
            if q1 >= 1.0 {
                return Ok(SufficientBound {
                    value: None,
                    c: None,
                    simplified: None,
                });
            }
            c = c.max((1.0 - q0) / (1.0 - q1));
        }
    }
    Ok(SufficientBound {
        value: Some(indirect_formula(pmax, c, tau as f64)),
        c: Some(c),
        simplified: None,
    })
}

pub fn indirect_formula(pbar_max: f64, c: f64, tau: f64) -> f64 {
    pbar_max * (1.0 + c / tau)
}

fn family_paths(sc: &Scenario, family: &HistoryFamily, stages: u64, cache: &QCache) -> Result<Vec<Vec<(f64, f64)>>> {
    let jobs: Vec<(usize, NodeId)> = (0..family.seeds.len())
        .flat_map(|h| (0..sc.graph.n()).map(move |i| (h, i)))
        .collect();
    jobs.par_iter()
        .map(|&(h, i)| {
            let s = &family.seeds[h];
            star_path(sc, &s.actions, s.len, i, stages, cache)
        })
        .collect()
}

/// Sufficient ratio under private monitoring with coordinated durations:
/// max p̄[h,r]/A + p̄[h,r']/(B − C), with B = τ/(c(mdel_i+1)).
pub fn private_sufficient_ratio(
    sc: &Scenario,
    family: &HistoryFamily,
    epsilon: f64,
    cache: &QCache,
) -> Result<SufficientBound> {
    let g = &sc.graph;
    if sc.monitoring != Monitoring::Private {
        return Err(Error::WrongMode("private_sufficient_ratio needs private monitoring"));
    }
    if let Some((i, j)) = coordination_failure(&sc.durations, &sc.delays, g) {
        return Err(Error::NotCoordinated { accused: i, victim: j });
    }
    let Some(tau) = sc.durations.base.finite() else {
        return Err(Error::WrongMode("private_sufficient_ratio needs a finite duration"));
    };
    let mut mdel = vec![0u32; g.n()];
    for (i, m) in mdel.iter_mut().enumerate() {
        *m = sc.delays.mdel(g, i).ok_or(Error::UnpunishableNode {
            accused: i,
            victim: g.out_neighbors(i).first().copied().unwrap_or(i),
            observer: Vertex::Source,
        })?;
    }
    let horizon = mdel.iter().max().copied().unwrap_or(0) as u64 + tau as u64 + 1;
    let paths = family_paths(sc, family, horizon, cache)?;
    let n = g.n();
    let mut c: f64 = 0.0;
    let mut finite_c = true;
    for (ix, path) in paths.iter().enumerate() {
        let m = mdel[ix % n] as usize;
        for r in 0..=m {
            for rp in m + 1..=m + tau as usize {
                let (qr, _) = path[r];
                let (qp, _) = path[rp];
                if qr < 1.0 {
                    if qp >= 1.0 {
                        finite_c = false;
                    } else {
                        c = c.max((1.0 - qr) / (1.0 - qp));
                    }
                }
            }
        }
    }
    if !finite_c || c == 0.0 {
        return Ok(SufficientBound {
            value: None,
            c: finite_c.then_some(c),
            simplified: None,
        });
    }
    let mut value: Option<f64> = Some(0.0);
    let mut pmax0: f64 = 0.0;
    for (ix, path) in paths.iter().enumerate() {
        let m = mdel[ix % n] as usize;
        pmax0 = pmax0.max(path[0].1);
        for r in 0..=m + tau as usize {
            for rp in 0..=m + tau as usize {
                let (qr, pr) = path[r];
                let (qp, pp) = path[rp];
                if qr >= 1.0 || qp >= 1.0 {
                    continue;
                }
                let v = private_formula(pr, pp, qr, qp, epsilon, c, m as f64, tau as f64);
                value = match (value, v) {
                    (Some(a), Some(b)) => Some(a.max(b)),
                    _ => None,
                };
            }
        }
    }
    let mdel_max = mdel.iter().max().copied().unwrap_or(0);
    Ok(SufficientBound {
        value,
        c: Some(c),
        simplified: (tau > mdel_max).then(|| pmax0 * (1.0 + c)),
    })
}

/// One term of the private sufficient ratio; None when a denominator is not positive.
#[allow(clippy::too_many_arguments)]
pub fn private_formula(
    pbar_r: f64,
    pbar_rp: f64,
    q_r: f64,
    q_rp: f64,
    epsilon: f64,
    c: f64,
    mdel: f64,
    tau: f64,
) -> Option<f64> {
    let a = 1.0 - epsilon * (mdel + 1.0) / ((1.0 - q_r) * tau);
    let b = tau / (c * (mdel + 1.0));
    let cc = epsilon * (mdel + 1.0) / (1.0 - q_rp);
    (a > 0.0 && b - cc > 0.0).then(|| pbar_r / a + pbar_rp / (b - cc))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OmegaMin {
    pub value: f64,
    /// The condition already holds as ω → 0.
    pub degenerate: bool,
}

/// Least ω with ω(a−b+c) − ω^{τ+1}(a−b) − c ≥ 0, where a−b is the per-stage punishment
/// gain and c the stage-0 temptation.
pub fn min_omega_poly(gain: f64, c: f64, tau: u32) -> Option<OmegaMin> {
    if c <= 0.0 {
        return Some(OmegaMin {
            value: 0.0,
            degenerate: true,
        });
    }
    if gain <= 0.0 {
        return None;
    }
    let t = tau as f64;
    let f = |w: f64| w * (gain + c) - w.powf(t + 1.0) * gain - c;
    let star = ((gain + c) / (gain * (t + 1.0))).powf(1.0 / t);
    if star >= 1.0 || f(star) < 0.0 {
        return None;
    }
    let (mut lo, mut hi) = (0.0, star);
    while hi - lo > 1e-12 {
        let mid = 0.5 * (lo + hi);
        if f(mid) >= 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Some(OmegaMin {
        value: hi,
        degenerate: false,
    })
}

fn omega_grid() -> Vec<f64> {
    let mut v: Vec<f64> = (1..1000).map(|k| k as f64 * 1e-3).collect();
    v.extend((4..=9).map(|k| 1.0 - 10f64.powi(-k)));
    v
}

/// Least ω ∈ (0,1) with f(ω) ≥ 0 via grid search and bisection.
pub fn least_omega(f: impl Fn(f64) -> f64) -> Option<OmegaMin> {
    let grid = omega_grid();
    let first = grid.iter().position(|&w| f(w) >= 0.0)?;
    if first == 0 {
        let probe = 1e-9;
        if f(probe) >= 0.0 {
            return Some(OmegaMin {
                value: 0.0,
                degenerate: true,
            });
        }
    }
    let (mut lo, mut hi) = (if first == 0 { 0.0 } else { grid[first - 1] }, grid[first]);
    while hi - lo > 1e-12 {
        let mid = 0.5 * (lo + hi);
        if f(mid) >= 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Some(OmegaMin {
        value: hi,
        degenerate: false,
    })
}

/// Least ω making `deviation` after `history` unprofitable for its deviator.
pub fn min_omega(
    sc: &Scenario,
    deviation: &DropDeviation,
    history: &HistorySeed,
    cache: &QCache,
) -> Result<Option<OmegaMin>> {
    if sc.durations.max_finite().is_none() {
        return Err(Error::WrongMode("min_omega needs finite durations; use grim_min_omega"));
    }
    let i = deviation.deviator;
    let (beta, gamma) = (sc.params.beta[i], sc.params.gamma[i]);
    let co = deviation_coefficients(sc, &history.actions, history.len, deviation, cache)?;
    let stage = |r: usize| beta * co.dq[r] - gamma * co.dc[r];
    let tail: Vec<f64> = (1..co.dq.len()).map(stage).collect();
    let last_nonzero = tail.iter().rposition(|&x| x != 0.0).map_or(0, |k| k + 1);
    if last_nonzero >= 1 && tail[..last_nonzero].iter().all(|&x| x == tail[0]) {
        return Ok(min_omega_poly(tail[0], -stage(0), last_nonzero as u32));
    }
    Ok(least_omega(|w| co.margin(beta, gamma, w)))
}

/// (γp̄/β)^{1/mdel_i}, or γp̄/β when mdel_i = 0.
pub fn grim_min_omega(sc: &Scenario, i: NodeId) -> Result<f64> {
    let g = &sc.graph;
    let pbar = sc.baseline.pbar(g, i);
    let (beta, gamma) = (sc.params.beta[i], sc.params.gamma[i]);
    let mdel = match sc.monitoring {
        Monitoring::Public => 0,
        Monitoring::Private => sc.delays.mdel(g, i).ok_or(Error::UnpunishableNode {
            accused: i,
            victim: g.out_neighbors(i).first().copied().unwrap_or(i),
            observer: Vertex::Source,
        })?,
    };
    grim_formula(beta, gamma, pbar, mdel)
}

pub fn grim_formula(beta: f64, gamma: f64, pbar: f64, mdel: u32) -> Result<f64> {
    if beta <= gamma * pbar {
        return Err(Error::RatioTooSmall {
            beta,
            cost: gamma * pbar,
        });
    }
    let r = gamma * pbar / beta;
    Ok(if mdel == 0 { r } else { r.powf(1.0 / mdel as f64) })
}

/// Least β (γ = 1) making every case of one deviator unprofitable at a given ω.
fn required_ratio(cases: &[&DeviationCase], omega: f64) -> f64 {
    let mut need: f64 = 0.0;
    for c in cases {
        let (a, b) = c.coeffs.ab(omega);
        if a > 0.0 {
            need = need.max(b / a);
        } else if b > MARGIN_TOL {
            return f64::INFINITY;
        }
    }
    need
}

fn node_threshold(cases: &[&DeviationCase]) -> (f64, f64) {
    if cases.is_empty() {
        return (0.0, 0.5);
    }
    let grid = omega_grid();
    let vals: Vec<f64> = grid.iter().map(|&w| required_ratio(cases, w)).collect();
    let (k, &best) = vals
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .unwrap();
    if !best.is_finite() {
        return (f64::INFINITY, grid[k]);
    }
    let lo = if k == 0 { 1e-9 } else { grid[k - 1] };
    let hi = if k + 1 < grid.len() { grid[k + 1] } else { 1.0 - 1e-12 };
    let (mut a, mut b) = (lo, hi);
    let phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = b - phi * (b - a);
    let mut x2 = a + phi * (b - a);
    let (mut f1, mut f2) = (required_ratio(cases, x1), required_ratio(cases, x2));
    for _ in 0..80 {
        if f1 <= f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - phi * (b - a);
            f1 = required_ratio(cases, x1);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + phi * (b - a);
            f2 = required_ratio(cases, x2);
        }
    }
    let (w, v) = if f1 <= f2 { (x1, f1) } else { (x2, f2) };
    if v < best {
        (v, w)
    } else {
        (best, grid[k])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectivenessReport {
    /// Ratios above `threshold` admit discount factors making every deviation unprofitable.
    pub threshold: f64,
    pub per_node: Vec<f64>,
    /// Discount factor attaining each node's threshold.
    pub omega_at: Vec<f64>,
    pub folk: f64,
    pub sufficient: Option<f64>,
    pub folk_ok: bool,
    pub sufficient_ok: Option<bool>,
    pub notes: Vec<String>,
}

/// Empirical effectiveness threshold: max over nodes of the least ratio β/γ for which
/// some ω makes every deviation in the family unprofitable.
pub fn effectiveness_threshold(sc: &Scenario, family: &HistoryFamily, cache: &QCache) -> Result<EffectivenessReport> {
    let cases = enumerate_cases(sc, family, cache)?;
    effectiveness_from_cases(sc, family, &cases, cache)
}

pub fn effectiveness_from_cases(
    sc: &Scenario,
    family: &HistoryFamily,
    cases: &[DeviationCase],
    cache: &QCache,
) -> Result<EffectivenessReport> {
    let n = sc.graph.n();
    let per: Vec<(f64, f64)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mine: Vec<&DeviationCase> = cases.iter().filter(|c| c.deviator == i).collect();
            node_threshold(&mine)
        })
        .collect();
    let threshold = per.iter().map(|x| x.0).fold(0.0, f64::max);
    let folk = folk_upper_bound(sc);
    let mut notes = vec![];
    let sufficient = match (sc.monitoring, sc.rs.mode, sc.durations.base) {
        (Monitoring::Public, ReactionMode::FullIndirect, Tau::Finite(_)) => {
            let b = indirect_sufficient_ratio(sc, family, cache)?;
            notes.push(format!("indirect assumption constant c = {:?}", b.c));
            b.value
        }
        (Monitoring::Private, _, Tau::Finite(_)) if sc.durations.coordinated => {
            match private_sufficient_ratio(sc, family, 0.0, cache) {
                Ok(b) => {
                    notes.push(format!("private assumption constant c = {:?}", b.c));
                    b.value
                }
                Err(e) => {
                    notes.push(format!("private sufficient bound unavailable: {e}"));
                    None
                }
            }
        }
        _ => None,
    };
    if sc.monitoring == Monitoring::Private {
        if let Some((i, j)) = coordination_failure(&sc.durations, &sc.delays, &sc.graph) {
            notes.push(format!("durations do not enforce coordination on edge ({i},{j})"));
        }
    }
    let rel = 1e-6;
    let folk_ok = threshold >= folk * (1.0 - rel) - 1e-12;
    let sufficient_ok = sufficient.map(|s| threshold <= s * (1.0 + rel) + 1e-12);
    notes.sort();
    Ok(EffectivenessReport {
        threshold,
        per_node: per.iter().map(|x| x.0).collect(),
        omega_at: per.iter().map(|x| x.1).collect(),
        folk,
        sufficient,
        folk_ok,
        sufficient_ok,
        notes,
    })
}

/// Per node, the least ω making all of its deviations in the family unprofitable at the
/// scenario's own β and γ.
pub fn node_min_omegas(sc: &Scenario, cases: &[DeviationCase]) -> Vec<Option<f64>> {
    (0..sc.graph.n())
        .into_par_iter()
        .map(|i| {
            let mine: Vec<&DeviationCase> = cases.iter().filter(|c| c.deviator == i).collect();
            let (beta, gamma) = (sc.params.beta[i], sc.params.gamma[i]);
            least_omega(|w| {
                mine.iter()
                    .map(|c| c.coeffs.margin(beta, gamma, w))
                    .fold(f64::INFINITY, f64::min)
                    + MARGIN_TOL
            })
            .map(|m| m.value)
        })
        .collect()
}

/// Every bound that applies to the scenario, by name; `None` marks an applicable bound
/// whose assumptions fail.
pub fn applicable_bounds(
    sc: &Scenario,
    family: &HistoryFamily,
    cache: &QCache,
) -> Result<BTreeMap<String, Option<f64>>> {
    let g = &sc.graph;
    let mut b = BTreeMap::new();
    b.insert("folk".to_string(), Some(folk_upper_bound(sc)));
    let finite = sc.durations.base.finite().is_some();
    if sc.monitoring == Monitoring::Public && sc.rs.mode == ReactionMode::Direct && finite {
        let worst = g
            .edges()
            .iter()
            .filter_map(|&(i, j)| direct_necessary_ratio(sc, i, j).ok())
            .fold(None, |m: Option<f64>, v| Some(m.map_or(v, |m| m.max(v))));
        b.insert("direct_necessary".to_string(), worst);
    }
    if sc.monitoring == Monitoring::Public && sc.rs.mode == ReactionMode::FullIndirect && finite {
        b.insert("indirect_sufficient".to_string(), indirect_sufficient_ratio(sc, family, cache)?.value);
    }
    if sc.monitoring == Monitoring::Private && finite && coordination_failure(&sc.durations, &sc.delays, g).is_none() {
        let r = private_sufficient_ratio(sc, family, 0.0, cache)?;
        b.insert("private_sufficient".to_string(), r.value);
        if r.simplified.is_some() {
            b.insert("private_simplified".to_string(), r.simplified);
        }
    }
    Ok(b)
}
