//! Non-delivery probabilities of the gossip wave: exact recursion, percolation oracle
//! and seeded Monte Carlo.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::overlay_graph::{NodeId, OverlayGraph, Vertex};

pub const EXACT_NODE_CAP: usize = 14;
pub const ORACLE_EDGE_CAP: usize = 22;
pub const PRNG_NAME: &str = "ChaCha8Rng (rand_chacha 0.3), one stream per chunk of 4096 trials";

const MC_CHUNK: u64 = 4096;

/// Per-stage forwarding probabilities: `source_probs[i]` is p_s[i] and
/// `node_probs[e]` is p_u[v] for the edge with index `e`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForwardProfile {
    pub source_probs: Vec<f64>,
    pub node_probs: Vec<f64>,
}

impl ForwardProfile {
    pub fn zeros(g: &OverlayGraph) -> Self {
        ForwardProfile {
            source_probs: vec![0.0; g.n()],
            node_probs: vec![0.0; g.edges().len()],
        }
    }

    /// Same probability on every node edge and every source edge.
    pub fn uniform(g: &OverlayGraph, p_source: f64, p_node: f64) -> Self {
        let mut p = Self::zeros(g);
        for &t in g.source_targets() {
            p.source_probs[t] = p_source;
        }
        p.node_probs.iter_mut().for_each(|x| *x = p_node);
        p
    }

    pub fn get(&self, g: &OverlayGraph, u: Vertex, v: NodeId) -> f64 {
        match u {
            Vertex::Source => self.source_probs[v],
            Vertex::Node(u) => g.edge_index(u, v).map_or(0.0, |e| self.node_probs[e]),
        }
    }

    pub fn set(&mut self, g: &OverlayGraph, u: Vertex, v: NodeId, x: f64) {
        match u {
            Vertex::Source => self.source_probs[v] = x,
            Vertex::Node(u) => {
                let e = g.edge_index(u, v).expect("set on a non-edge");
                self.node_probs[e] = x;
            }
        }
    }

    /// p̄_i = Σ_j p_i[j].
    pub fn pbar(&self, g: &OverlayGraph, i: NodeId) -> f64 {
        g.out_neighbors(i)
            .iter()
            .map(|&j| self.node_probs[g.edge_index(i, j).unwrap()])
            .sum()
    }

    /// Checks the profile invariants, including a positive source probability.
    pub fn validate(&self, g: &OverlayGraph) -> Result<()> {
        self.validate_shape(g)?;
        if !self.source_probs.iter().any(|&x| x > 0.0) {
            return Err(Error::InvalidProfile("p_s[i] must be positive for some i".into()));
        }
        Ok(())
    }

    /// Shape and range checks only; punishment profiles may zero every source edge.
    pub fn validate_shape(&self, g: &OverlayGraph) -> Result<()> {
        if self.source_probs.len() != g.n() || self.node_probs.len() != g.edges().len() {
            return Err(Error::InvalidProfile("profile does not match graph size".into()));
        }
        for (k, &x) in self.source_probs.iter().enumerate() {
            if !(0.0..=1.0).contains(&x) {
                return Err(Error::InvalidProfile(format!("p_s[{k}] = {x} outside [0,1]")));
            }
            if x != 0.0 && !g.is_source_target(k) {
                return Err(Error::InvalidProfile(format!("p_s[{k}] set but {k} is not fed by the source")));
            }
        }
        for (e, &x) in self.node_probs.iter().enumerate() {
            if !(0.0..=1.0).contains(&x) {
                let (u, v) = g.edges()[e];
                return Err(Error::InvalidProfile(format!("p_{u}[{v}] = {x} outside [0,1]")));
            }
        }
        Ok(())
    }

    pub(crate) fn bits(&self) -> Vec<u64> {
        self.source_probs
            .iter()
            .chain(self.node_probs.iter())
            .map(|x| x.to_bits())
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloEstimate {
    pub mean: f64,
    pub trials: u64,
    pub std_error: f64,
    pub seed: u64,
}

struct Compact {
    m: usize,
    src: Vec<f64>,
    /// incoming positive edges per compact node: (compact tail, probability)
    inc: Vec<Vec<(usize, f64)>>,
    targets: u32,
}

fn positive_reach(g: &OverlayGraph, p: &ForwardProfile, only_ones: bool) -> Vec<bool> {
    let ok = |x: f64| if only_ones { x == 1.0 } else { x > 0.0 };
    let n = g.n();
    let mut seen = vec![false; n];
    let mut stack: Vec<NodeId> = g
        .source_targets()
        .iter()
        .copied()
        .filter(|&t| ok(p.source_probs[t]))
        .collect();
    for &t in &stack {
        seen[t] = true;
    }
    while let Some(u) = stack.pop() {
        for &v in g.out_neighbors(u) {
            if !seen[v] && ok(p.get(g, Vertex::Node(u), v)) {
                seen[v] = true;
                stack.push(v);
            }
        }
    }
    seen
}

fn co_reach(g: &OverlayGraph, p: &ForwardProfile, targets: &[NodeId]) -> Vec<bool> {
    let mut seen = vec![false; g.n()];
    let mut stack: Vec<NodeId> = targets.to_vec();
    for &t in targets {
        seen[t] = true;
    }
    while let Some(v) = stack.pop() {
        for &u in g.in_neighbors(v) {
            if !seen[u] && p.get(g, Vertex::Node(u), v) > 0.0 {
                seen[u] = true;
                stack.push(u);
            }
        }
    }
    seen
}

/// Some path from the source to a target uses only probability-one edges.
pub fn has_certain_path(g: &OverlayGraph, p: &ForwardProfile, targets: &[NodeId]) -> bool {
    let r = positive_reach(g, p, true);
    targets.iter().any(|&t| r[t])
}

/// Some path from the source to a target uses only positive-probability edges.
pub fn has_positive_path(g: &OverlayGraph, p: &ForwardProfile, targets: &[NodeId]) -> bool {
    let r = positive_reach(g, p, false);
    targets.iter().any(|&t| r[t])
}

fn check_targets(g: &OverlayGraph, targets: &[NodeId]) -> Result<()> {
    if targets.is_empty() {
        return Err(Error::InvalidProfile("targets must be non-empty".into()));
    }
    if let Some(&t) = targets.iter().find(|&&t| t >= g.n()) {
        return Err(Error::NodeOutOfRange {
            node: t as i64,
            n: g.n(),
        });
    }
    Ok(())
}

/// Probability that no node of `targets` receives the message, by the wave recursion.
pub fn exact_non_delivery(g: &OverlayGraph, p: &ForwardProfile, targets: &[NodeId]) -> Result<f64> {
    exact_non_delivery_capped(g, p, targets, EXACT_NODE_CAP)
}

pub fn exact_non_delivery_capped(
    g: &OverlayGraph,
    p: &ForwardProfile,
    targets: &[NodeId],
    cap: usize,
) -> Result<f64> {
    check_targets(g, targets)?;
    if g.n() > cap || g.n() > 31 {
        return Err(Error::TooLarge {
            what: "node count for exact mode",
            size: g.n(),
            cap: cap.min(31),
        });
    }
    if has_certain_path(g, p, targets) {
        return Ok(0.0);
    }
    if !has_positive_path(g, p, targets) {
        return Ok(1.0);
    }
    let fwd = positive_reach(g, p, false);
    let bwd = co_reach(g, p, targets);
    let keep: Vec<NodeId> = (0..g.n()).filter(|&k| fwd[k] && bwd[k]).collect();
    let mut ix = vec![usize::MAX; g.n()];
    for (c, &k) in keep.iter().enumerate() {
        ix[k] = c;
    }
    let m = keep.len();
    let mut inc = vec![Vec::new(); m];
    for (c, &k) in keep.iter().enumerate() {
        for &u in g.in_neighbors(k) {
            let x = p.get(g, Vertex::Node(u), k);
            if ix[u] != usize::MAX && x > 0.0 {
                inc[c].push((ix[u], x));
            }
        }
    }
    let mut tmask = 0u32;
    for &t in targets {
        if ix[t] != usize::MAX {
            tmask |= 1 << ix[t];
        }
    }
    let cp = Compact {
        m,
        src: keep.iter().map(|&k| p.source_probs[k]).collect(),
        inc,
        targets: tmask,
    };
    let mut memo = HashMap::new();
    let miss0: Vec<f64> = cp.src.iter().map(|&x| 1.0 - x).collect();
    Ok(wave(&cp, 0, &miss0, &mut memo))
}

/// Sums over the next infected set H given the per-node miss probabilities of the
/// current wave; `u` is the set of nodes already infected.
fn wave(cp: &Compact, u: u32, miss: &[f64], memo: &mut HashMap<u64, f64>) -> f64 {
    let mut base = 1.0;
    let mut forced = 0u32;
    let mut poss: Vec<usize> = Vec::new();
    for k in 0..cp.m {
        if u >> k & 1 == 1 {
            continue;
        }
        let mk = miss[k];
        if cp.targets >> k & 1 == 1 {
            base *= mk;
        } else if mk == 0.0 {
            forced |= 1 << k;
        } else if mk < 1.0 {
            poss.push(k);
        }
    }
    if base == 0.0 {
        return 0.0;
    }
    let np = poss.len();
    let mut sum = 0.0;
    for sub in 0u32..(1u32 << np) {
        let mut w = 1.0;
        let mut h = forced;
        for (b, &k) in poss.iter().enumerate() {
            if sub >> b & 1 == 1 {
                w *= 1.0 - miss[k];
                h |= 1 << k;
            } else {
                w *= miss[k];
            }
        }
        if h == 0 {
            sum += w;
        } else {
            sum += w * phi(cp, u | h, h, memo);
        }
    }
    base * sum
}

fn phi(cp: &Compact, u: u32, i: u32, memo: &mut HashMap<u64, f64>) -> f64 {
    let key = (u as u64) << 32 | i as u64;
    if let Some(&v) = memo.get(&key) {
        return v;
    }
    let mut miss = vec![1.0; cp.m];
    for k in 0..cp.m {
        if u >> k & 1 == 1 {
            continue;
        }
        for &(l, x) in &cp.inc[k] {
            if i >> l & 1 == 1 {
                miss[k] *= 1.0 - x;
            }
        }
    }
    let v = wave(cp, u, &miss, memo);
    memo.insert(key, v);
    v
}

/// Exact probability that no target is reachable through independently successful edges.
pub fn percolation_oracle(g: &OverlayGraph, p: &ForwardProfile, targets: &[NodeId]) -> Result<f64> {
    percolation_oracle_capped(g, p, targets, ORACLE_EDGE_CAP)
}

pub fn percolation_oracle_capped(
    g: &OverlayGraph,
    p: &ForwardProfile,
    targets: &[NodeId],
    cap: usize,
) -> Result<f64> {
    check_targets(g, targets)?;
    // (tail, head, probability) with tail == None for the source
    let mut edges: Vec<(Option<NodeId>, NodeId, f64)> = Vec::new();
    for &t in g.source_targets() {
        edges.push((None, t, p.source_probs[t]));
    }
    for (e, &(u, v)) in g.edges().iter().enumerate() {
        edges.push((Some(u), v, p.node_probs[e]));
    }
    let fractional: Vec<usize> = (0..edges.len())
        .filter(|&e| edges[e].2 > 0.0 && edges[e].2 < 1.0)
        .collect();
    if fractional.len() > cap.min(40) {
        return Err(Error::TooLarge {
            what: "fractional edge count for the percolation oracle",
            size: fractional.len(),
            cap: cap.min(40),
        });
    }
    let n = g.n();
    let mut total = 0.0;
    let mut present = vec![false; edges.len()];
    for outcome in 0u64..(1u64 << fractional.len()) {
        let mut w = 1.0;
        for (e, item) in edges.iter().enumerate() {
            present[e] = item.2 == 1.0;
        }
        for (b, &e) in fractional.iter().enumerate() {
            if outcome >> b & 1 == 1 {
                present[e] = true;
                w *= edges[e].2;
            } else {
                w *= 1.0 - edges[e].2;
            }
        }
        let mut reached = vec![false; n];
        let mut stack = Vec::new();
        for (e, &(tail, head, _)) in edges.iter().enumerate() {
            if tail.is_none() && present[e] && !reached[head] {
                reached[head] = true;
                stack.push(head);
            }
        }
        while let Some(u) = stack.pop() {
            for (e, &(tail, head, _)) in edges.iter().enumerate() {
                if tail == Some(u) && present[e] && !reached[head] {
                    reached[head] = true;
                    stack.push(head);
                }
            }
        }
        if !targets.iter().any(|&t| reached[t]) {
            total += w;
        }
    }
    Ok(total)
}

/// Seeded Monte Carlo estimate of the non-delivery probability. Trials are split
/// into fixed chunks, each drawing from its own ChaCha8 stream, so the estimate does
/// not depend on the number of worker threads.
pub fn monte_carlo_non_delivery(
    g: &OverlayGraph,
    p: &ForwardProfile,
    targets: &[NodeId],
    trials: u64,
    seed: u64,
) -> Result<MonteCarloEstimate> {
    check_targets(g, targets)?;
    if trials == 0 {
        return Err(Error::InvalidProfile("trials must be positive".into()));
    }
    let chunks = trials.div_ceil(MC_CHUNK);
    let failures: u64 = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(c);
            let count = MC_CHUNK.min(trials - c * MC_CHUNK);
            (0..count).filter(|_| !one_wave(g, p, targets, &mut rng)).count() as u64
        })
        .sum();
    let mean = failures as f64 / trials as f64;
    Ok(MonteCarloEstimate {
        mean,
        trials,
        std_error: (mean * (1.0 - mean) / trials as f64).sqrt(),
        seed,
    })
}

/// One simulated dissemination; true iff some target receives the message.
fn one_wave<R: Rng>(g: &OverlayGraph, p: &ForwardProfile, targets: &[NodeId], rng: &mut R) -> bool {
    let mut got = vec![false; g.n()];
    let mut frontier = Vec::new();
    for &t in g.source_targets() {
        if rng.gen::<f64>() < p.source_probs[t] && !got[t] {
            got[t] = true;
            frontier.push(t);
        }
    }
    while !frontier.is_empty() {
        let mut next = Vec::new();
        for &u in &frontier {
            for &v in g.out_neighbors(u) {
                if !got[v] && rng.gen::<f64>() < p.get(g, Vertex::Node(u), v) {
                    got[v] = true;
                    next.push(v);
                }
            }
        }
        frontier = next;
    }
    targets.iter().any(|&t| got[t])
}

/// q_i before and after lowering only p_j[i] to `reduced`.
pub fn single_impact_ratio(
    g: &OverlayGraph,
    p: &ForwardProfile,
    i: NodeId,
    j: Vertex,
    reduced: f64,
) -> Result<(f64, f64)> {
    if !g.has_edge(j, i) {
        return Err(match j {
            Vertex::Node(j) => Error::NotAnEdge(j, i),
            Vertex::Source => Error::InvalidProfile(format!("{i} is not fed by the source")),
        });
    }
    let current = p.get(g, j, i);
    if reduced >= current || reduced < 0.0 {
        return Err(Error::InvalidReduction { reduced, current });
    }
    let q = exact_non_delivery(g, p, &[i])?;
    let mut p2 = p.clone();
    p2.set(g, j, i, reduced);
    Ok((q, exact_non_delivery(g, &p2, &[i])?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::overlay_graph::build_graph;
    use proptest::prelude::*;

    fn diamond() -> (OverlayGraph, ForwardProfile) {
        let g = build_graph(3, &[(0, 2), (1, 2)], &[0, 1]).unwrap();
        let mut p = ForwardProfile::zeros(&g);
        p.source_probs[0] = 0.5;
        p.source_probs[1] = 0.5;
        p.node_probs.iter_mut().for_each(|x| *x = 0.5);
        (g, p)
    }

    #[test]
    fn diamond_value() {
        let (g, p) = diamond();
        assert!((exact_non_delivery(&g, &p, &[2]).unwrap() - 0.5625).abs() < 1e-15);
        assert!((percolation_oracle(&g, &p, &[2]).unwrap() - 0.5625).abs() < 1e-15);
    }

    #[test]
    fn chain_values() {
        let g = build_graph(2, &[(0, 1)], &[0]).unwrap();
        let mut p = ForwardProfile::uniform(&g, 1.0, 1.0);
        assert_eq!(exact_non_delivery(&g, &p, &[1]).unwrap(), 0.0);
        p.source_probs[0] = 0.5;
        p.node_probs[0] = 0.5;
        assert!((exact_non_delivery(&g, &p, &[1]).unwrap() - 0.75).abs() < 1e-15);
        assert!((percolation_oracle(&g, &p, &[1]).unwrap() - 0.75).abs() < 1e-15);
        p.node_probs[0] = 0.0;
        assert_eq!(exact_non_delivery(&g, &p, &[1]).unwrap(), 1.0);
    }

    #[test]
    fn pair_values_and_single_impact() {
        let g = build_graph(2, &[(0, 1), (1, 0)], &[0, 1]).unwrap();
        let p = ForwardProfile::uniform(&g, 0.5, 0.5);
        let (q, q2) = single_impact_ratio(&g, &p, 0, Vertex::Node(1), 0.0).unwrap();
        assert!((q - 0.375).abs() < 1e-15);
        assert!((q2 - 0.5).abs() < 1e-15);
        assert!(q2 <= q / 0.5);
        assert!(matches!(
            single_impact_ratio(&g, &p, 0, Vertex::Node(1), 0.5),
            Err(Error::InvalidReduction { .. })
        ));
    }

    #[test]
    fn monte_carlo_degenerate_and_statistical() {
        let g = build_graph(3, &[(0, 1), (1, 2)], &[0]).unwrap();
        let p = ForwardProfile::uniform(&g, 1.0, 1.0);
        assert_eq!(monte_carlo_non_delivery(&g, &p, &[2], 1000, 3).unwrap().mean, 0.0);
        let z = ForwardProfile::uniform(&g, 1.0, 0.0);
        assert_eq!(monte_carlo_non_delivery(&g, &z, &[2], 1000, 3).unwrap().mean, 1.0);
        let (g, p) = diamond();
        let est = monte_carlo_non_delivery(&g, &p, &[2], 100_000, 11).unwrap();
        assert!((est.mean - 0.5625).abs() <= 4.0 * est.std_error);
        let again = monte_carlo_non_delivery(&g, &p, &[2], 100_000, 11).unwrap();
        assert_eq!(est.mean.to_bits(), again.mean.to_bits());
    }

    #[test]
    fn monte_carlo_independent_of_thread_count() {
        let (g, p) = diamond();
        let a = monte_carlo_non_delivery(&g, &p, &[2], 20_000, 5).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let b = pool.install(|| monte_carlo_non_delivery(&g, &p, &[2], 20_000, 5).unwrap());
        assert_eq!(a, b);
    }

    #[test]
    fn size_caps() {
        let n = 15;
        let edges: Vec<_> = (0..n - 1).map(|i| (i, i + 1)).collect();
        let g = build_graph(n, &edges, &[0]).unwrap();
        let p = ForwardProfile::uniform(&g, 0.5, 0.5);
        assert!(matches!(exact_non_delivery(&g, &p, &[n - 1]), Err(Error::TooLarge { .. })));
        assert!(exact_non_delivery_capped(&g, &p, &[n - 1], 20).is_ok());
    }

    fn arb_instance() -> impl Strategy<Value = (OverlayGraph, ForwardProfile)> {
        (1usize..=5)
            .prop_flat_map(|n| {
                (
                    Just(n),
                    proptest::collection::vec(0usize..4, n * n),
                    proptest::collection::vec(0usize..4, n),
                )
            })
            .prop_filter_map("connected", |(n, adj, src)| {
                let grid = [0.0, 0.3, 0.7, 1.0];
                let mut edges = Vec::new();
                let mut probs = Vec::new();
                for x in 0..n * n {
                    if x / n != x % n && adj[x] > 0 {
                        edges.push((x / n, x % n));
                        probs.push(((x / n, x % n), grid[adj[x]]));
                    }
                }
                let targets: Vec<_> = (0..n).filter(|&i| src[i] > 0).collect();
                let g = build_graph(n, &edges, &targets).ok()?;
                let mut p = ForwardProfile::zeros(&g);
                for &t in &targets {
                    p.source_probs[t] = grid[src[t]];
                }
                for ((u, v), x) in probs {
                    p.set(&g, Vertex::Node(u), v, x);
                }
                Some((g, p))
            })
    }

    proptest! {
        #[test]
        fn matches_oracle((g, p) in arb_instance()) {
            for i in 0..g.n() {
                let a = exact_non_delivery(&g, &p, &[i]).unwrap();
                let b = percolation_oracle(&g, &p, &[i]).unwrap();
                prop_assert!((a - b).abs() <= 1e-12, "{} vs {}", a, b);
            }
        }

        #[test]
        fn raising_a_probability_never_hurts((g, p) in arb_instance(), e in any::<prop::sample::Index>()) {
            if g.edges().is_empty() { return Ok(()); }
            let e = e.index(g.edges().len());
            let mut hi = p.clone();
            hi.node_probs[e] = (p.node_probs[e] + 0.2).min(1.0);
            for i in 0..g.n() {
                let a = exact_non_delivery(&g, &p, &[i]).unwrap();
                let b = exact_non_delivery(&g, &hi, &[i]).unwrap();
                prop_assert!(b <= a + 1e-12);
            }
        }

        #[test]
        fn multi_target_is_joint_event((g, p) in arb_instance()) {
            let all: Vec<_> = (0..g.n()).collect();
            let a = exact_non_delivery(&g, &p, &all).unwrap();
            let b = percolation_oracle(&g, &p, &all).unwrap();
            prop_assert!((a - b).abs() <= 1e-12);
        }
    }
}
