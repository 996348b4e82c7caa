use std::path::{Path, PathBuf};

use epigame::scenario_cli::run;
use serde_json::Value;

fn configs() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("configs")
}

fn call(args: &[&str], out: &Path) -> (i32, String) {
    let mut full = vec!["epigame".to_string()];
    full.extend(args.iter().map(|s| s.to_string()));
    full.push("--out".into());
    full.push(out.to_string_lossy().into_owned());
    let code = run(full);
    (code, std::fs::read_to_string(out).unwrap_or_default())
}

fn cfg(name: &str) -> String {
    configs().join(name).to_string_lossy().into_owned()
}

#[test]
fn pair_equilibrium_pass_then_fail() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("r.json");
    let (code, text) = call(&["check-equilibrium", "--config", &cfg("pair.json")], &out);
    assert_eq!(code, 0);
    let v: Value = serde_json::from_str(&text).unwrap();
    assert_eq!(v["results"]["verdict"], "pass");
    assert!((v["results"]["worst"]["margin"].as_f64().unwrap() - 1.9740625).abs() < 1e-12);

    let low = dir.path().join("low.json");
    let mut c: Value = serde_json::from_str(&std::fs::read_to_string(configs().join("pair.json")).unwrap()).unwrap();
    c["utility"]["beta"] = 1.0.into();
    std::fs::write(&low, c.to_string()).unwrap();
    let (code, text) = call(&["check-equilibrium", "--config", low.to_str().unwrap()], &out);
    assert_eq!(code, 1);
    let v: Value = serde_json::from_str(&text).unwrap();
    assert_eq!(v["results"]["verdict"], "fail");
    assert!(v["results"]["worst"]["margin"].as_f64().unwrap() < 0.0);
}

#[test]
fn uncoordinated_private_is_a_precondition_error() {
    let dir = tempfile::tempdir().unwrap();
    let (code, _) = call(
        &["check-equilibrium", "--config", &cfg("private_triangle.json")],
        &dir.path().join("o"),
    );
    assert_eq!(code, 4);
}

#[test]
fn configuration_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    assert_eq!(call(&["check-topology", "--config", "/nonexistent.json"], &out).0, 2);
    assert_eq!(call(&["check-topology"], &out).0, 2);
    assert_eq!(call(&["no-such-command"], &out).0, 2);
    assert_eq!(call(&["check-equilibrium", "--config", &cfg("pair.json"), "--omega", "1.5"], &out).0, 2);
    assert_eq!(call(&["effectiveness", "--config", &cfg("pair.json"), "--sweep", "speed=1"], &out).0, 2);
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"graph":{"n":2,"edges":[[0,1]],"source_targets":[0],"colour":1},"profile":{"source_probs":1,"node_probs":1},"utility":{"beta":2,"omega":0.5}}"#).unwrap();
    assert_eq!(call(&["check-topology", "--config", bad.to_str().unwrap()], &out).0, 2);
}

#[test]
fn exact_beyond_node_cap_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let n = 15;
    let edges: Vec<[usize; 2]> = (0..n - 1).map(|i| [i, i + 1]).collect();
    let c = serde_json::json!({
        "graph": {"n": n, "edges": edges, "source_targets": [0]},
        "profile": {"source_probs": 1.0, "node_probs": 0.5},
        "utility": {"beta": 2, "omega": 0.5}
    });
    let path = dir.path().join("big.json");
    std::fs::write(&path, c.to_string()).unwrap();
    let (code, _) = call(&["reliability", "--config", path.to_str().unwrap(), "--exact"], &dir.path().join("o"));
    assert_eq!(code, 3);
    let (code, text) = call(
        &["reliability", "--config", path.to_str().unwrap(), "--mc", "2000", "--targets", "3"],
        &dir.path().join("o"),
    );
    assert_eq!(code, 0);
    let v: Value = serde_json::from_str(&text).unwrap();
    let q = v["results"]["targets"][0]["monte_carlo"]["q"].as_f64().unwrap();
    assert!((q - 0.875).abs() < 0.05, "{q}");
}

#[test]
fn reliability_methods_agree_and_csv_has_header() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    let (code, text) = call(&["reliability", "--config", &cfg("diamond.json"), "--exact", "--oracle"], &out);
    assert_eq!(code, 0);
    let v: Value = serde_json::from_str(&text).unwrap();
    assert_eq!(v["results"]["diagnostics"]["exact_oracle_agree"], true);
    assert_eq!(v["provenance"]["seed"], Value::Null);
    let (code, text) = call(&["reliability", "--config", &cfg("diamond.json"), "--csv"], &out);
    assert_eq!(code, 0);
    assert!(text.starts_with("target,exact_q,"));
    assert_eq!(text.lines().count(), 5);
}

#[test]
fn seeds_change_monte_carlo_but_not_reruns() {
    let dir = tempfile::tempdir().unwrap();
    let a = call(&["reliability", "--config", &cfg("cycle.json"), "--mc", "3000", "--seed", "1"], &dir.path().join("a")).1;
    let b = call(&["reliability", "--config", &cfg("cycle.json"), "--mc", "3000", "--seed", "1"], &dir.path().join("b")).1;
    let c = call(&["reliability", "--config", &cfg("cycle.json"), "--mc", "3000", "--seed", "2"], &dir.path().join("c")).1;
    assert_eq!(a, b);
    assert_ne!(a, c);
}

#[test]
fn verify_lemmas_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    let (code, text) = call(&["verify-lemmas", "--cases", "0"], &out);
    assert_eq!(code, 0);
    let v: Value = serde_json::from_str(&text).unwrap();
    assert_eq!(v["results"]["warnings"].as_array().unwrap().len(), 1);
    assert_eq!(call(&["verify-lemmas", "--cases", "15"], &out).0, 0);
    let (code, text) = call(&["verify-lemmas", "--cases", "40", "--inject-fault", "ds-expiry"], &out);
    assert_eq!(code, 1);
    let v: Value = serde_json::from_str(&text).unwrap();
    let failing: Vec<&str> = v["results"]["suites"]
        .as_array()
        .unwrap()
        .iter()
        .filter(|s| s["failed"].as_u64().unwrap() > 0)
        .map(|s| s["suite"].as_str().unwrap())
        .collect();
    assert_eq!(failing, ["ds_public"]);
}

#[test]
fn every_sample_config_runs() {
    let dir = tempfile::tempdir().unwrap();
    for entry in std::fs::read_dir(configs()).unwrap() {
        let path = entry.unwrap().path();
        let p = path.to_str().unwrap();
        for cmd in ["reliability", "check-topology", "effectiveness"] {
            let (code, text) = call(&[cmd, "--config", p], &dir.path().join("o"));
            assert_eq!(code, 0, "{cmd} {p}");
            let v: Value = serde_json::from_str(&text).unwrap();
            assert_eq!(v["schema_version"], "1");
            assert_eq!(v["scenario_digest"].as_str().unwrap().len(), 64);
        }
    }
}
