mod common;

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use sha2::{Digest, Sha256};

use afd_lab::dot::{observation_dot, tree_dot};
use afd_lab::harness::{analyze, load_scenario, parse_scenario, run_scenario, HarnessError, Mode};
use afd_lab::observation::Observation;
use afd_lab::tree::EdgeFilter;

fn root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn scenario(name: &str) -> PathBuf {
    root().join("scenarios").join(name)
}

fn golden(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name)
}

fn cli(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_afd-lab")).args(args).output().expect("the binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn short_hash(s: &str) -> String {
    Sha256::digest(s.as_bytes()).iter().take(8).map(|b| format!("{b:02x}")).collect()
}

#[test]
fn every_committed_scenario_loads() {
    let mut count = 0;
    for entry in std::fs::read_dir(root().join("scenarios")).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "toml") {
            load_scenario(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            count += 1;
        }
    }
    assert!(count >= 9);
}

#[test]
fn minimal_scenario_gets_defaults() {
    let s = parse_scenario("version = 1\nmode = \"consensus\"\nn = 2\nf = 0\nhorizon = 10\n").unwrap();
    assert_eq!(s.seed, 0);
    assert_eq!(s.window, 10);
    assert_eq!(s.analysis_bound, 8);
    assert!(s.crashes.is_empty());
    assert!(s.conformant);
    assert_eq!(s.mode, Mode::Consensus);
}

#[test]
fn scenario_errors_name_the_line() {
    let bad_loc = "version = 1\nmode = \"consensus\"\nn = 3\nf = 1\nhorizon = 100\ncrashes = [{ turn = 3, location = 5 }]\n";
    let e = parse_scenario(bad_loc).unwrap_err();
    assert_eq!(e.line, Some(6));
    let f_too_big = "version = 1\nmode = \"consensus\"\nn = 2\nf = 2\nhorizon = 100\n";
    assert_eq!(parse_scenario(f_too_big).unwrap_err().line, Some(4));
    let unknown = "version = 1\nmode = \"consensus\"\nn = 2\nf = 0\nhorizon = 100\ncolour = 3\n";
    assert!(parse_scenario(unknown).unwrap_err().line.is_some());
    let zero = "version = 1\nmode = \"consensus\"\nn = 2\nf = 0\nhorizon = 0\n";
    assert_eq!(parse_scenario(zero).unwrap_err().line, Some(5));
    let too_many = "version = 1\nmode = \"consensus\"\nn = 3\nf = 1\nhorizon = 100\ncrashes = [{ turn = 3, location = 1 }, { turn = 4, location = 2 }]\n";
    assert!(parse_scenario(too_many).is_err());
    let nonconformant = format!("{too_many}conformant = false\n");
    assert!(parse_scenario(&nonconformant).is_ok());
}

#[test]
fn consensus_scenario_holds_and_is_traceable() {
    let s = load_scenario(&scenario("consensus-n3-f1-seed3.toml")).unwrap();
    let r = run_scenario(&s, false).unwrap();
    assert!(r.verdict_of("consensus").unwrap().holds());
    assert!(r.verdict_of("detector").unwrap().holds());
    assert_eq!(r.exit_code(), 0);
    let trace = &r.artifacts["consensus.trace"];
    let detector = &r.artifacts["detector.trace"];
    for v in &r.verdicts {
        let input = if v.name == "detector" { detector } else { trace };
        assert_eq!(v.input, short_hash(input), "verdict {} is not traceable", v.name);
    }
}

#[test]
fn reports_are_byte_identical_across_runs() {
    for name in ["consensus-n5-f2-mixed.toml", "tree-n2-v5.toml"] {
        let s = load_scenario(&scenario(name)).unwrap();
        let a = run_scenario(&s, true).unwrap();
        let b = run_scenario(&s, true).unwrap();
        assert_eq!(a.to_text(), b.to_text());
        assert_eq!(a.artifacts, b.artifacts);
    }
}

#[test]
fn seed_changes_the_inputs_hash() {
    let mut s = load_scenario(&scenario("consensus-n3-f1-seed3.toml")).unwrap();
    let a = s.inputs_hash();
    s.seed += 1;
    assert_ne!(a, s.inputs_hash());
}

#[test]
fn extraction_scenario_stabilizes() {
    let s = load_scenario(&scenario("extraction-n2-seed7.toml")).unwrap();
    let r = run_scenario(&s, false).unwrap();
    assert!(r.verdict_of("stabilization").unwrap().holds());
    assert!(r.verdict_of("emulated-omega").unwrap().holds());
    let trace = afd_lab::afd::AfdTrace::parse(&r.artifacts["emulated.trace"]).unwrap();
    assert_eq!(afd_lab::afd::check_omega_f(&trace, 0), afd_lab::afd::Verdict::Holds);
}

#[test]
fn tiny_budget_is_a_capacity_error_with_a_partial_report() {
    let mut s = load_scenario(&scenario("tree-n2-v5.toml")).unwrap();
    s.budget = 3;
    match run_scenario(&s, false) {
        Err(e @ HarnessError::Capacity { .. }) => {
            assert_eq!(e.exit_code(), 2);
            let HarnessError::Capacity { report, .. } = e else { unreachable!() };
            assert_eq!(report.scenario, "tree-n2-v5");
        }
        other => panic!("expected a capacity error, got {other:?}"),
    }
}

#[test]
fn four_vertex_tree_analysis_matches_the_oracle() {
    let s = load_scenario(&scenario("tree-n2-v4.toml")).unwrap();
    let (_, g) = afd_lab::harness::observation_for(&s).unwrap();
    assert_eq!(g.len(), 4);
    let r = analyze(&s, g.clone(), None, false).unwrap();
    let tree = common::consensus_tree(2, g);
    let want = common::Oracle::new(&tree).gadgets();
    let got: Vec<&String> = r.gadgets.iter().collect();
    assert_eq!(got.len(), want.len());
    assert!(r.notes.contains(&"root bivalent".to_string()));
}

#[test]
fn five_vertex_tree_analysis_lists_the_oracle_gadgets() {
    let s = load_scenario(&scenario("tree-n2-v5.toml")).unwrap();
    let (_, g) = afd_lab::harness::observation_for(&s).unwrap();
    let r = analyze(&s, g.clone(), None, false).unwrap();
    let tree = common::consensus_tree(2, g);
    let want = common::Oracle::new(&tree).gadgets();
    assert!(!want.is_empty());
    let want_lines: Vec<String> = want.iter().map(|o| format!("gadget {} metric={}", o.kind, o.metric)).collect();
    let got_lines: Vec<String> = r.gadgets.iter().map(|l| l.split(" critical=").next().unwrap().to_string()).collect();
    assert_eq!(got_lines, want_lines);
}

#[test]
fn empty_observation_renders_no_nodes() {
    let dot = observation_dot(&Observation::empty(2));
    assert_eq!(dot, "digraph observation {\n}\n");
}

#[test]
fn chain_of_three_matches_the_golden_dot() {
    let g = Observation::parse(&std::fs::read_to_string(golden("chain3.obs")).unwrap()).unwrap();
    let want = std::fs::read_to_string(golden("chain3.dot")).unwrap();
    assert_eq!(observation_dot(&g), want);
}

#[test]
fn two_level_tree_slice_has_fan_out_plus_one_nodes() {
    let t = common::omega_run(2, 1, 50, &[]);
    let tree = common::consensus_tree(2, common::observation_of(&t, 3));
    let dot = tree_dot(&tree, 2).unwrap();
    let fan_out = tree.expand(&tree.root(), EdgeFilter::All).unwrap().len();
    let nodes = dot.lines().filter(|l| l.contains("[label=") && !l.contains("->")).count();
    assert_eq!(nodes, fan_out + 1);
    assert_eq!(dot.lines().filter(|l| l.contains("->")).count(), fan_out);
    assert!(dot.contains("style=dotted"));
}

#[test]
fn run_writes_the_report_and_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let o = cli(&["run", scenario("tree-n2-v4.toml").to_str().unwrap(), "--out", out.to_str().unwrap(), "--dot"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let report = std::fs::read_to_string(out.join("report.txt")).unwrap();
    assert_eq!(report, stdout(&o));
    for name in ["observation.obs", "observation.dot", "tree.dot"] {
        assert!(out.join(name).exists(), "{name} missing");
        assert!(report.contains(&format!("artifact {name}")));
    }
}

#[test]
fn run_seed_flag_overrides_the_file() {
    let path = scenario("consensus-n3-f1-seed3.toml");
    let a = cli(&["run", path.to_str().unwrap()]);
    let b = cli(&["run", path.to_str().unwrap(), "--seed", "3"]);
    let c = cli(&["run", path.to_str().unwrap(), "--seed", "4"]);
    assert_eq!(stdout(&a), stdout(&b));
    assert_ne!(stdout(&a), stdout(&c));
}

#[test]
fn run_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "version = 1\nmode = \"consensus\"\nn = 2\nf = 2\nhorizon = 5\n").unwrap();
    let o = cli(&["run", bad.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 4"));
    assert_eq!(cli(&["run", dir.path().join("missing.toml").to_str().unwrap()]).status.code(), Some(2));
}

#[test]
fn crashed_first_location_extraction_exits_with_a_violation() {
    let o = cli(&["run", scenario("extraction-n3-f1-crash1.toml").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).contains("verdict stabilization stabilization"));
}

#[test]
fn check_trace_cli() {
    let dir = tempfile::tempdir().unwrap();
    let good = dir.path().join("good.trace");
    std::fs::write(&good, "trace n=2 complete\nout 1 1 omega(1)\nout 2 1 omega(1)\n").unwrap();
    let o = cli(&["check-trace", good.to_str().unwrap(), "--problem", "omega"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(stdout(&o), "verdict omega holds\n");

    let bad = dir.path().join("bad.trace");
    std::fs::write(&bad, "trace n=2 complete\ncrash 1\nout 1 1 omega(1)\nout 2 1 omega(1)\n").unwrap();
    let o = cli(&["check-trace", bad.to_str().unwrap(), "--problem", "omega_f", "--f", "1"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).starts_with("verdict omega_f violated"));

    let junk = dir.path().join("junk.trace");
    std::fs::write(&junk, "trace n=2 complete\nwobble\n").unwrap();
    assert_eq!(cli(&["check-trace", junk.to_str().unwrap(), "--problem", "omega"]).status.code(), Some(2));
}

#[test]
fn check_trace_on_a_consensus_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let o = cli(&["run", scenario("consensus-n3-f1-seed3.toml").to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    let trace = dir.path().join("consensus.trace");
    let o = cli(&["check-trace", trace.to_str().unwrap(), "--problem", "consensus", "--f", "1"]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    let out = stdout(&o);
    assert!(out.starts_with("verdict consensus holds\n"));
    assert_eq!(out.lines().count(), 7);
}

#[test]
fn analyze_obs_cli() {
    let dir = tempfile::tempdir().unwrap();
    let system = scenario("tree-n2-v4.toml");
    let obs = golden("chain3.obs");
    let o = cli(&["analyze-obs", obs.to_str().unwrap(), "--system", system.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("vertices 3"));
    assert!(dir.path().join("report.txt").exists());

    let n3 = scenario("omega-n3-crashes.toml");
    let o = cli(&["analyze-obs", obs.to_str().unwrap(), "--system", n3.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}
