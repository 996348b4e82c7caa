//! Command-line front end. Exit codes: 0 ok, 1 property failure, 2 configuration
//! error, 3 size cap exceeded, 4 model precondition violated.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::json;

use super::config::{load_config, Real, ScenarioConfig, Spread};
use super::report::{cell, ReportDocument, Table};
use crate::epidemic_model::{exact_non_delivery, monte_carlo_non_delivery, percolation_oracle};
use crate::equilibrium_analyzer::{
    applicable_bounds, dc_check, effectiveness_from_cases, enumerate_cases, grim_min_omega, node_min_omegas,
    pdc_check, HistoryFamily, Verdict,
};
use crate::error::{Error, Result};
use crate::lemma_suite::{run_all, Faults};
use crate::overlay_graph::compute_delays;
use crate::punishing_strategy::{coordination_failure, Tau};
use crate::repeated_game::{Monitoring, QCache, Scenario};

#[derive(Parser, Debug)]
#[command(name = "epigame", version, about = "Gossip reliability and punishment-equilibrium analysis")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// Scenario configuration (JSON).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Write the report here instead of standard output.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seed for randomized work; overrides `analysis.seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Emit a CSV table instead of the JSON document.
    #[arg(long)]
    csv: bool,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Non-delivery probability and reliability per target.
    Reliability {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        exact: bool,
        #[arg(long)]
        oracle: bool,
        /// Monte Carlo with TRIALS trials and an optional seed.
        #[arg(long, num_args = 1..=2, value_names = ["TRIALS", "SEED"])]
        mc: Option<Vec<u64>>,
        #[arg(long, value_delimiter = ',')]
        targets: Vec<usize>,
    },
    /// Path conditions, redundancy and accusation delays.
    CheckTopology {
        #[command(flatten)]
        common: Common,
    },
    /// DC (public) or PDC (private) condition over the history family.
    CheckEquilibrium {
        #[command(flatten)]
        common: Common,
        /// Use this discount factor for every node.
        #[arg(long)]
        omega: Option<f64>,
        /// Also report the least discount factor per node.
        #[arg(long)]
        solve_omega: bool,
    },
    /// Effectiveness bounds and the empirical threshold.
    Effectiveness {
        #[command(flatten)]
        common: Common,
        /// PARAM=v1,v2,... with PARAM one of node_p, source_p, tau.
        #[arg(long)]
        sweep: Option<String>,
    },
    /// Randomized property suites.
    VerifyLemmas {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 200)]
        cases: usize,
        #[arg(long, hide = true)]
        inject_fault: Option<String>,
    },
}

struct Output {
    doc: ReportDocument,
    table: Table,
    code: i32,
}

/// Runs the CLI on `args` (program name first) and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let common = match &cli.cmd {
        Cmd::Reliability { common, .. }
        | Cmd::CheckTopology { common }
        | Cmd::CheckEquilibrium { common, .. }
        | Cmd::Effectiveness { common, .. }
        | Cmd::VerifyLemmas { common, .. } => common.clone(),
    };
    let out = match dispatch(&cli.cmd) {
        Ok(o) => o,
        Err(e) => {
            eprintln!("error: {e}");
            return e.exit_code();
        }
    };
    let text = if common.csv {
        match out.table.to_csv() {
            Ok(t) => t,
            Err(e) => {
                eprintln!("error: {e}");
                return e.exit_code();
            }
        }
    } else {
        out.doc.to_json()
    };
    match &common.out {
        Some(p) => {
            if let Err(e) = std::fs::write(p, text) {
                eprintln!("error: {}: {e}", p.display());
                return 2;
            }
        }
        None => print!("{text}"),
    }
    out.code
}

fn config_of(common: &Common) -> Result<ScenarioConfig> {
    let path = common
        .config
        .as_ref()
        .ok_or_else(|| Error::config("--config", "this command needs a configuration file"))?;
    load_config(path)
}

fn dispatch(cmd: &Cmd) -> Result<Output> {
    match cmd {
        Cmd::Reliability {
            common,
            exact,
            oracle,
            mc,
            targets,
        } => reliability(common, *exact, *oracle, mc.as_deref(), targets),
        Cmd::CheckTopology { common } => check_topology(common),
        Cmd::CheckEquilibrium {
            common,
            omega,
            solve_omega,
        } => check_equilibrium(common, *omega, *solve_omega),
        Cmd::Effectiveness { common, sweep } => effectiveness(common, sweep.as_deref()),
        Cmd::VerifyLemmas {
            common,
            cases,
            inject_fault,
        } => verify_lemmas(common, *cases, inject_fault.as_deref()),
    }
}

#[derive(Serialize)]
struct Method {
    q: f64,
    reliability: f64,
}

#[derive(Serialize)]
struct McMethod {
    q: f64,
    reliability: f64,
    std_error: f64,
    trials: u64,
}

#[derive(Serialize)]
struct TargetRow {
    target: usize,
    exact: Option<Method>,
    oracle: Option<Method>,
    monte_carlo: Option<McMethod>,
}

fn reliability(common: &Common, exact: bool, oracle: bool, mc: Option<&[u64]>, targets: &[usize]) -> Result<Output> {
    let cfg = config_of(common)?;
    let sc = cfg.to_scenario()?;
    let g = &sc.graph;
    let exact = exact || (!oracle && mc.is_none());
    let seed = mc
        .and_then(|v| v.get(1).copied())
        .or(common.seed)
        .unwrap_or(cfg.analysis.seed);
    let trials = mc.map(|v| v[0]);
    let targets: Vec<usize> = if !targets.is_empty() {
        targets.to_vec()
    } else {
        cfg.analysis.targets.clone().unwrap_or_else(|| (0..g.n()).collect())
    };
    for &t in &targets {
        if t >= g.n() {
            return Err(Error::config("--targets", format!("node {t} outside 0..{}", g.n())));
        }
    }
    let mut rows = vec![];
    let mut table = Table::new(&["target", "exact_q", "oracle_q", "mc_q", "mc_std_error", "reliability"]);
    let mut max_diff: Option<f64> = None;
    let mut max_z: Option<f64> = None;
    for &t in &targets {
        let e = if exact { Some(exact_non_delivery(g, &sc.baseline, &[t])?) } else { None };
        let o = if oracle { Some(percolation_oracle(g, &sc.baseline, &[t])?) } else { None };
        let m = match trials {
            Some(n) => Some(monte_carlo_non_delivery(g, &sc.baseline, &[t], n, seed)?),
            None => None,
        };
        if let (Some(a), Some(b)) = (e, o) {
            max_diff = Some(max_diff.unwrap_or(0.0).max((a - b).abs()));
        }
        if let (Some(reference), Some(m)) = (e.or(o), &m) {
            let z = if m.std_error > 0.0 {
                (m.mean - reference).abs() / m.std_error
            } else if m.mean == reference {
                0.0
            } else {
                f64::INFINITY
            };
            max_z = Some(max_z.unwrap_or(0.0).max(z));
        }
        let best = e.or(o).or(m.as_ref().map(|m| m.mean)).unwrap();
        table.push(vec![
            t.to_string(),
            cell(e),
            cell(o),
            cell(m.as_ref().map(|m| m.mean)),
            cell(m.as_ref().map(|m| m.std_error)),
            cell(Some(1.0 - best)),
        ]);
        rows.push(TargetRow {
            target: t,
            exact: e.map(|q| Method { q, reliability: 1.0 - q }),
            oracle: o.map(|q| Method { q, reliability: 1.0 - q }),
            monte_carlo: m.map(|m| McMethod {
                q: m.mean,
                reliability: 1.0 - m.mean,
                std_error: m.std_error,
                trials: m.trials,
            }),
        });
    }
    let agree = max_diff.is_none_or(|d| d <= 1e-12);
    let results = json!({
        "targets": rows,
        "diagnostics": {
            "max_exact_oracle_diff": max_diff,
            "exact_oracle_agree": agree,
            "max_mc_z_score": max_z,
        },
    });
    Ok(Output {
        doc: ReportDocument::new("reliability", Some(cfg.digest()), results, trials.map(|_| seed)),
        table,
        code: if agree { 0 } else { 1 },
    })
}

fn check_topology(common: &Common) -> Result<Output> {
    let cfg = config_of(common)?;
    let sc = cfg.to_scenario()?;
    let g = &sc.graph;
    let delays = compute_delays(g, &cfg.monitoring.delay_model)?;
    let mut table = Table::new(&["accused", "victim", "paths_condition"]);
    let mut edges = vec![];
    for (&(i, j), ok) in g.edges().iter().zip(g.lemma_paths_all()) {
        table.push(vec![i.to_string(), j.to_string(), ok.to_string()]);
        edges.push(json!({"accused": i, "victim": j, "paths_condition": ok}));
    }
    let infinite = g
        .edges()
        .iter()
        .enumerate()
        .flat_map(|(e, _)| {
            std::iter::once(crate::overlay_graph::Vertex::Source)
                .chain((0..g.n()).map(crate::overlay_graph::Vertex::Node))
                .map(move |k| (k, e))
        })
        .filter(|&(k, e)| delays.get_by_edge(k, e).is_none())
        .count();
    let results = json!({
        "edges": edges,
        "is_redundant": g.is_redundant(),
        "supports_full_indirect": (0..g.n()).map(|i| g.supports_full_indirect(i)).collect::<Vec<_>>(),
        "delays": {
            "max_finite": delays.max_finite(),
            "infinite_entries": infinite,
            "mdel": (0..g.n()).map(|i| delays.mdel(g, i)).collect::<Vec<_>>(),
        },
    });
    Ok(Output {
        doc: ReportDocument::new("check-topology", Some(cfg.digest()), results, None),
        table,
        code: 0,
    })
}

fn check_equilibrium(common: &Common, omega: Option<f64>, solve_omega: bool) -> Result<Output> {
    let cfg = config_of(common)?;
    let mut sc = cfg.to_scenario()?;
    if let Some(w) = omega {
        if !(w > 0.0 && w < 1.0) {
            return Err(Error::config("--omega", "must lie in (0,1)"));
        }
        sc.params.omega = vec![w; sc.graph.n()];
    }
    let family = HistoryFamily::build(&sc, cfg.analysis.history_depth);
    let cache = QCache::new();
    let mut report = match sc.monitoring {
        Monitoring::Public => dc_check(&sc, &family, &cache)?,
        Monitoring::Private => {
            if let Some((i, j)) = coordination_failure(&sc.durations, &sc.delays, &sc.graph) {
                return Err(Error::NotCoordinated { accused: i, victim: j });
            }
            pdc_check(&sc, &family, &cache)?
        }
    };
    report.bounds = applicable_bounds(&sc, &family, &cache)?;
    if solve_omega {
        report.min_omega = if sc.durations.max_finite().is_none() {
            (0..sc.graph.n())
                .map(|i| match grim_min_omega(&sc, i) {
                    Ok(w) => Some(w),
                    Err(e) => {
                        report.notes.push(format!("node {i}: {e}"));
                        None
                    }
                })
                .collect()
        } else {
            let cases = enumerate_cases(&sc, &family, &cache)?;
            node_min_omegas(&sc, &cases)
        };
        report.notes.sort();
    }
    let mut table = Table::new(&["history", "deviator", "dropped", "margin"]);
    for m in &report.margins {
        let dropped: Vec<String> = m.dropped.iter().map(|x| x.to_string()).collect();
        table.push(vec![m.history.clone(), m.deviator.to_string(), dropped.join(" "), cell(Some(m.margin))]);
    }
    let code = if report.verdict == Verdict::Fail { 1 } else { 0 };
    let seed = common.seed.unwrap_or(cfg.analysis.seed);
    Ok(Output {
        doc: ReportDocument::new("check-equilibrium", Some(cfg.digest()), &report, Some(seed)),
        table,
        code,
    })
}

#[derive(Serialize)]
struct EffRow {
    param: Option<String>,
    value: Option<f64>,
    folk: f64,
    bounds: std::collections::BTreeMap<String, Option<f64>>,
    threshold: f64,
    per_node: Vec<f64>,
    omega_at: Vec<f64>,
    folk_ok: bool,
    sufficient_ok: Option<bool>,
    notes: Vec<String>,
}

fn with_param(cfg: &ScenarioConfig, param: &str, v: f64) -> Result<ScenarioConfig> {
    let mut c = cfg.clone();
    match param {
        "node_p" => c.profile.node_probs = Spread::All(Real(v)),
        "source_p" => c.profile.source_probs = Spread::All(Real(v)),
        "tau" => {
            if v < 1.0 || v.fract() != 0.0 {
                return Err(Error::config("--sweep", format!("tau must be a positive integer, got {v}")));
            }
            c.strategy.tau = Tau::Finite(v as u32);
        }
        other => return Err(Error::config("--sweep", format!("unknown parameter {other:?}"))),
    }
    Ok(c)
}

fn effectiveness_row(sc: &Scenario, depth: usize) -> Result<EffRow> {
    let family = HistoryFamily::build(sc, depth);
    let cache = QCache::new();
    let cases = enumerate_cases(sc, &family, &cache)?;
    let r = effectiveness_from_cases(sc, &family, &cases, &cache)?;
    let bounds = applicable_bounds(sc, &family, &cache)?;
    Ok(EffRow {
        param: None,
        value: None,
        folk: r.folk,
        bounds,
        threshold: r.threshold,
        per_node: r.per_node,
        omega_at: r.omega_at,
        folk_ok: r.folk_ok,
        sufficient_ok: r.sufficient_ok,
        notes: r.notes,
    })
}

fn effectiveness(common: &Common, sweep: Option<&str>) -> Result<Output> {
    let cfg = config_of(common)?;
    let mut rows = vec![];
    match sweep {
        None => rows.push(effectiveness_row(&cfg.to_scenario()?, cfg.analysis.history_depth)?),
        Some(spec) => {
            let (param, grid) = spec
                .split_once('=')
                .ok_or_else(|| Error::config("--sweep", "expected PARAM=v1,v2,..."))?;
            for v in grid.split(',') {
                let v: f64 = v
                    .trim()
                    .parse()
                    .map_err(|_| Error::config("--sweep", format!("not a number: {v:?}")))?;
                let c = with_param(&cfg, param, v)?;
                let mut row = effectiveness_row(&c.to_scenario()?, c.analysis.history_depth)?;
                row.param = Some(param.to_string());
                row.value = Some(v);
                rows.push(row);
            }
        }
    }
    let mut table = Table::new(&[
        "param",
        "value",
        "folk",
        "direct_necessary",
        "sufficient",
        "threshold",
        "folk_ok",
        "sufficient_ok",
    ]);
    for r in &rows {
        let sufficient = r
            .bounds
            .get("indirect_sufficient")
            .or(r.bounds.get("private_sufficient"))
            .copied()
            .flatten();
        table.push(vec![
            r.param.clone().unwrap_or_default(),
            cell(r.value),
            cell(Some(r.folk)),
            cell(r.bounds.get("direct_necessary").copied().flatten()),
            cell(sufficient),
            cell(Some(r.threshold)),
            r.folk_ok.to_string(),
            r.sufficient_ok.map(|b| b.to_string()).unwrap_or_default(),
        ]);
    }
    let ok = rows.iter().all(|r| r.folk_ok && r.sufficient_ok != Some(false));
    let seed = common.seed.unwrap_or(cfg.analysis.seed);
    Ok(Output {
        doc: ReportDocument::new("effectiveness", Some(cfg.digest()), json!({ "rows": rows, "sandwich_ok": ok }), Some(seed)),
        table,
        code: if ok { 0 } else { 1 },
    })
}

fn verify_lemmas(common: &Common, cases: usize, fault: Option<&str>) -> Result<Output> {
    let seed = common.seed.unwrap_or(42);
    let faults = match fault {
        None => Faults::default(),
        Some("ds-expiry") => Faults { ds_expiry_slack: 1 },
        Some(other) => return Err(Error::config("--inject-fault", format!("unknown fault {other:?}"))),
    };
    let mut warnings = vec![];
    if cases == 0 {
        let w = "no cases requested: every suite passes vacuously".to_string();
        eprintln!("warning: {w}");
        warnings.push(w);
    }
    let suites = run_all(cases, seed, faults);
    let mut table = Table::new(&["suite", "cases", "passed", "failed", "skipped", "counterexample"]);
    for s in &suites {
        table.push(vec![
            s.suite.clone(),
            s.cases.to_string(),
            s.passed.to_string(),
            s.failed.to_string(),
            s.skipped.to_string(),
            s.counterexample.clone().unwrap_or_default(),
        ]);
    }
    let all = suites.iter().all(|s| s.ok());
    Ok(Output {
        doc: ReportDocument::new(
            "verify-lemmas",
            None,
            json!({ "suites": suites, "all_passed": all, "warnings": warnings }),
            Some(seed),
        ),
        table,
        code: if all { 0 } else { 1 },
    })
}
