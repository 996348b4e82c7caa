//! Scenario configuration: parsing with field-path errors, validation and
//! canonicalization.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Deserializer, Serialize};
use sha2::{Digest, Sha256};

use crate::epidemic_model::ForwardProfile;
use crate::error::{Error, Result};
use crate::overlay_graph::{build_graph, compute_delays, DelayMatrix, DelayModelConfig, NodeId, Vertex};
use crate::punishing_strategy::{coordinated_durations, DurationPolicy, ReactionMode, ReactionSetConfig, Tau};
use crate::repeated_game::{Monitoring, Scenario, UtilityParams};

/// A probability or real given as a JSON number or a decimal string.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(transparent)]
pub struct Real(pub f64);

impl<'de> Deserialize<'de> for Real {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Str(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(x) => Ok(Real(x)),
            Raw::Str(s) => s
                .trim()
                .parse::<f64>()
                .map(Real)
                .map_err(|_| serde::de::Error::custom(format!("not a decimal number: {s:?}"))),
        }
    }
}

/// One value for every entry, or an explicit list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Spread {
    All(Real),
    Each(Vec<Real>),
}

impl Spread {
    fn expand(&self, len: usize, path: &str) -> Result<Vec<f64>> {
        match self {
            Spread::All(x) => Ok(vec![x.0; len]),
            Spread::Each(v) if v.len() == len => Ok(v.iter().map(|x| x.0).collect()),
            Spread::Each(v) => Err(Error::config(path, format!("expected {len} entries, found {}", v.len()))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphSection {
    pub n: usize,
    pub edges: Vec<(i64, i64)>,
    pub source_targets: Vec<i64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProfileSection {
    /// Aligned with `graph.source_targets`.
    pub source_probs: Spread,
    /// Aligned with `graph.edges`.
    pub node_probs: Spread,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UtilitySection {
    pub beta: Spread,
    #[serde(default = "one")]
    pub gamma: Spread,
    pub omega: Spread,
}

fn one() -> Spread {
    Spread::All(Real(1.0))
}

impl Default for UtilitySection {
    fn default() -> Self {
        UtilitySection {
            beta: Spread::All(Real(10.0)),
            gamma: one(),
            omega: Spread::All(Real(0.9)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CustomSet {
    pub accused: NodeId,
    pub victim: NodeId,
    /// Extra reacting vertices; -1 is the source.
    pub members: Vec<Vertex>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StrategySection {
    #[serde(default = "full_indirect")]
    pub reaction: ReactionMode,
    #[serde(default)]
    pub custom_sets: Vec<CustomSet>,
    #[serde(default = "tau_one")]
    pub tau: Tau,
    /// Private mode: derive per-pair durations that enforce coordination.
    #[serde(default)]
    pub coordinated: bool,
}

fn full_indirect() -> ReactionMode {
    ReactionMode::FullIndirect
}

fn tau_one() -> Tau {
    Tau::Finite(1)
}

impl Default for StrategySection {
    fn default() -> Self {
        StrategySection {
            reaction: full_indirect(),
            custom_sets: vec![],
            tau: tau_one(),
            coordinated: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MonitoringSection {
    #[serde(default = "public")]
    pub mode: Monitoring,
    #[serde(default)]
    pub delay_model: DelayModelConfig,
}

fn public() -> Monitoring {
    Monitoring::Public
}

impl Default for MonitoringSection {
    fn default() -> Self {
        MonitoringSection {
            mode: public(),
            delay_model: DelayModelConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisSection {
    /// 0: empty and aligned histories; 1: plus one-stage seeds; 2: plus stacked seeds.
    #[serde(default = "depth_one")]
    pub history_depth: usize,
    #[serde(default = "trials")]
    pub trials: u64,
    #[serde(default)]
    pub seed: u64,
    /// Nodes reported by `reliability`; all nodes when absent.
    #[serde(default)]
    pub targets: Option<Vec<NodeId>>,
    #[serde(default)]
    pub epsilon: f64,
}

fn depth_one() -> usize {
    1
}

fn trials() -> u64 {
    100_000
}

impl Default for AnalysisSection {
    fn default() -> Self {
        AnalysisSection {
            history_depth: depth_one(),
            trials: trials(),
            seed: 0,
            targets: None,
            epsilon: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub graph: GraphSection,
    pub profile: ProfileSection,
    #[serde(default)]
    pub utility: UtilitySection,
    #[serde(default)]
    pub strategy: StrategySection,
    #[serde(default)]
    pub monitoring: MonitoringSection,
    #[serde(default)]
    pub analysis: AnalysisSection,
}

/// Parses a configuration document; errors name the offending field path.
pub fn parse_config(text: &str) -> Result<ScenarioConfig> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        Error::config(if path == "." { "(root)".to_string() } else { path }, e.into_inner().to_string())
    })
}

pub fn load_config(path: &Path) -> Result<ScenarioConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    parse_config(&text)
}

fn node(x: i64, n: usize, path: &str) -> Result<NodeId> {
    if x < 0 || x as usize >= n {
        return Err(Error::config(path, format!("node {x} outside 0..{n}")));
    }
    Ok(x as usize)
}

impl ScenarioConfig {
    /// Normal form: lists expanded, edges and targets sorted, probabilities as numbers.
    pub fn canonicalize(&self) -> ScenarioConfig {
        let mut c = self.clone();
        let n_src = c.graph.source_targets.len();
        let n_edges = c.graph.edges.len();
        if let Ok(v) = c.profile.source_probs.expand(n_src, "") {
            let mut pairs: Vec<(i64, f64)> = c.graph.source_targets.iter().copied().zip(v).collect();
            pairs.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)));
            c.graph.source_targets = pairs.iter().map(|p| p.0).collect();
            c.profile.source_probs = Spread::Each(pairs.iter().map(|p| Real(p.1)).collect());
        }
        if let Ok(v) = c.profile.node_probs.expand(n_edges, "") {
            let mut pairs: Vec<((i64, i64), f64)> = c.graph.edges.iter().copied().zip(v).collect();
            pairs.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)));
            c.graph.edges = pairs.iter().map(|p| p.0).collect();
            c.profile.node_probs = Spread::Each(pairs.iter().map(|p| Real(p.1)).collect());
        }
        let n = c.graph.n;
        for s in [&mut c.utility.beta, &mut c.utility.gamma, &mut c.utility.omega] {
            if let Ok(v) = s.expand(n, "") {
                *s = Spread::Each(v.into_iter().map(Real).collect());
            }
        }
        c.strategy.custom_sets.sort_by_key(|s| (s.accused, s.victim));
        for s in c.strategy.custom_sets.iter_mut() {
            s.members.sort();
            s.members.dedup();
        }
        c.monitoring
            .delay_model
            .overrides
            .sort_by_key(|o| (o.observer, o.accused, o.victim, o.delay));
        if let Some(t) = c.analysis.targets.as_mut() {
            t.sort();
            t.dedup();
        }
        c
    }

    /// SHA-256 of the canonical document, hex encoded.
    pub fn digest(&self) -> String {
        let text = serde_json::to_string(&self.canonicalize()).expect("config serializes");
        hex::encode(Sha256::digest(text.as_bytes()))
    }

    /// Builds and validates the scenario.
    pub fn to_scenario(&self) -> Result<Scenario> {
        let n = self.graph.n;
        if n == 0 {
            return Err(Error::config("graph.n", "must be at least 1"));
        }
        let edges = self
            .graph
            .edges
            .iter()
            .enumerate()
            .map(|(k, &(a, b))| {
                Ok((node(a, n, &format!("graph.edges[{k}]"))?, node(b, n, &format!("graph.edges[{k}]"))?))
            })
            .collect::<Result<Vec<_>>>()?;
        let targets = self
            .graph
            .source_targets
            .iter()
            .enumerate()
            .map(|(k, &t)| node(t, n, &format!("graph.source_targets[{k}]")))
            .collect::<Result<Vec<_>>>()?;
        let g = build_graph(n, &edges, &targets).map_err(|e| Error::config("graph", e.to_string()))?;

        let mut baseline = ForwardProfile::zeros(&g);
        let sp = self.profile.source_probs.expand(targets.len(), "profile.source_probs")?;
        for (k, (&t, &x)) in targets.iter().zip(&sp).enumerate() {
            check_prob(x, &format!("profile.source_probs[{k}]"))?;
            baseline.set(&g, Vertex::Source, t, x);
        }
        let np = self.profile.node_probs.expand(edges.len(), "profile.node_probs")?;
        for (k, (&(a, b), &x)) in edges.iter().zip(&np).enumerate() {
            check_prob(x, &format!("profile.node_probs[{k}]"))?;
            baseline.set(&g, Vertex::Node(a), b, x);
        }
        baseline.validate(&g).map_err(|e| Error::config("profile", e.to_string()))?;

        let params = UtilityParams {
            beta: self.utility.beta.expand(n, "utility.beta")?,
            gamma: self.utility.gamma.expand(n, "utility.gamma")?,
            omega: self.utility.omega.expand(n, "utility.omega")?,
        };
        params.validate(n)?;

        let mut rs = ReactionSetConfig {
            mode: self.strategy.reaction,
            custom_sets: BTreeMap::new(),
        };
        for (k, cs) in self.strategy.custom_sets.iter().enumerate() {
            let path = format!("strategy.custom_sets[{k}]");
            if g.edge_index(cs.accused, cs.victim).is_none() {
                return Err(Error::config(path, format!("({},{}) is not an edge", cs.accused, cs.victim)));
            }
            for m in &cs.members {
                if let Vertex::Node(x) = m {
                    node(*x as i64, n, &path)?;
                }
            }
            rs.custom_sets
                .entry((cs.accused, cs.victim))
                .or_insert_with(BTreeSet::new)
                .extend(cs.members.iter().copied());
        }

        let (delays, durations) = match self.monitoring.mode {
            Monitoring::Public => (DelayMatrix::zeros(&g), DurationPolicy::uniform(self.strategy.tau)),
            Monitoring::Private => {
                let delays = compute_delays(&g, &self.monitoring.delay_model)?;
                let durations = if self.strategy.coordinated {
                    let Tau::Finite(t) = self.strategy.tau else {
                        return Err(Error::config("strategy.coordinated", "coordinated durations need a finite tau"));
                    };
                    coordinated_durations(&g, &delays, t)?
                } else {
                    DurationPolicy::uniform(self.strategy.tau)
                };
                (delays, durations)
            }
        };
        if let Some(ts) = &self.analysis.targets {
            for (k, &t) in ts.iter().enumerate() {
                node(t as i64, n, &format!("analysis.targets[{k}]"))?;
            }
        }
        Ok(Scenario {
            graph: g,
            baseline,
            params,
            monitoring: self.monitoring.mode,
            rs,
            durations,
            delays,
        })
    }
}

fn check_prob(x: f64, path: &str) -> Result<()> {
    if (0.0..=1.0).contains(&x) {
        Ok(())
    } else {
        Err(Error::config(path, format!("probability {x} outside [0,1]")))
    }
}
