//! Scenario files, end-to-end runs and reports.
//!
//! A scenario is a TOML document:
//!
//! ```toml
//! version = 1
//! name = "ct-n3"
//! mode = "consensus"          # consensus | extraction | tree
//! n = 3
//! f = 1
//! seed = 3
//! horizon = 1500
//! scheduler = "seeded"        # seeded | round-robin
//! afd = "omega_f"             # omega | omega_f
//! proposes = [0, 1, 1]
//! crashes = [{ turn = 40, location = 1 }]
//! ```
//!
//! Omitted fields default to seed 0, the seeded scheduler, Ω_f, free
//! proposals, no crashes, `analysis_bound = 8` and `stabilization_window = 10`.

use std::collections::BTreeMap;
use std::fmt;
use std::ops::Range;

use serde::Deserialize;
use sha2::{Digest, Sha256};
use thiserror::Error;
use toml::Spanned;

use crate::afd::{check_omega, check_omega_f, AfdTrace, OmegaAutomaton, Verdict};
use crate::consensus::{check_consensus_trace, consensus_system, ConsensusTrace};
use crate::dot::{observation_dot, tree_dot};
use crate::extraction::{run_extraction, ExtractionConfig, ExtractionError};
use crate::gadget::{AnalysisError, Analyzer, DEFAULT_BUDGET};
use crate::ioa::{component, compose, run_fair, Action, ActionName, External, KernelError, Loc, SchedulerMode, SchedulerPolicy};
use crate::observation::{observation_from_trace, Observation, DEFAULT_BOUND};
use crate::system::{CrashAutomaton, Locations, SystemError};
use crate::tree::ExecutionTree;

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Mode {
    Consensus,
    Extraction,
    Tree,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Consensus => "consensus",
            Mode::Extraction => "extraction",
            Mode::Tree => "tree",
        })
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum AfdKind {
    Omega,
    OmegaF,
}

#[derive(Clone, PartialEq, Eq, Debug)]
pub struct Scenario {
    pub name: String,
    pub mode: Mode,
    pub locations: Locations,
    pub seed: u64,
    pub horizon: usize,
    pub scheduler: SchedulerMode,
    pub afd: AfdKind,
    pub proposes: Option<Vec<u8>>,
    pub crashes: Vec<(usize, Loc)>,
    pub analysis_bound: usize,
    pub window: usize,
    pub budget: usize,
    pub conformant: bool,
    /// The file text, for the inputs hash.
    pub source: String,
}

impl Scenario {
    pub fn policy(&self) -> SchedulerPolicy {
        SchedulerPolicy { mode: self.scheduler, seed: self.seed, horizon: self.horizon }
    }

    pub fn externals(&self) -> Vec<External> {
        self.crashes.iter().map(|&(turn, i)| External { turn, action: Action::crash(i) }).collect()
    }

    pub fn inputs_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.source.as_bytes());
        h.update(format!("\nseed={}", self.seed).as_bytes());
        hex(&h.finalize())
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().take(8).map(|b| format!("{b:02x}")).collect()
}

fn text_hash(s: &str) -> String {
    hex(&Sha256::digest(s.as_bytes()))
}

#[derive(Clone, PartialEq, Eq, Debug, Error)]
pub struct ScenarioError {
    pub line: Option<usize>,
    pub message: String,
}

impl fmt::Display for ScenarioError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(l) => write!(f, "line {l}: {}", self.message),
            None => f.write_str(&self.message),
        }
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCrash {
    turn: usize,
    location: u8,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScenario {
    version: Spanned<u32>,
    name: Option<String>,
    mode: Spanned<String>,
    n: Spanned<u8>,
    f: Spanned<u8>,
    #[serde(default)]
    seed: u64,
    horizon: Spanned<usize>,
    scheduler: Option<Spanned<String>>,
    fairness_window: Option<usize>,
    afd: Option<Spanned<String>>,
    proposes: Option<Spanned<Vec<u8>>>,
    #[serde(default)]
    crashes: Vec<Spanned<RawCrash>>,
    analysis_bound: Option<Spanned<usize>>,
    stabilization_window: Option<usize>,
    budget: Option<usize>,
    conformant: Option<bool>,
}

fn line_of(text: &str, span: Range<usize>) -> usize {
    text[..span.start.min(text.len())].matches('\n').count() + 1
}

/// Parse and validate a scenario.
pub fn parse_scenario(text: &str) -> Result<Scenario, ScenarioError> {
    let raw: RawScenario = toml::from_str(text).map_err(|e| ScenarioError {
        line: e.span().map(|s| line_of(text, s)),
        message: e.message().to_string(),
    })?;
    let err = |span: Range<usize>, message: String| ScenarioError { line: Some(line_of(text, span)), message };
    if *raw.version.get_ref() != 1 {
        return Err(err(raw.version.span(), format!("unsupported scenario version {}", raw.version.get_ref())));
    }
    let mode = match raw.mode.get_ref().as_str() {
        "consensus" => Mode::Consensus,
        "extraction" => Mode::Extraction,
        "tree" => Mode::Tree,
        other => return Err(err(raw.mode.span(), format!("unknown mode `{other}`"))),
    };
    let (n, f) = (*raw.n.get_ref(), *raw.f.get_ref());
    if n == 0 {
        return Err(err(raw.n.span(), "n must be at least 1".into()));
    }
    if f >= n {
        return Err(err(raw.f.span(), format!("f = {f} must be below n = {n}")));
    }
    let locations = Locations::new(n, f).map_err(|e| err(raw.n.span(), e.to_string()))?;
    if mode == Mode::Extraction && n > 3 {
        return Err(err(raw.n.span(), "extraction runs support n ≤ 3".into()));
    }
    let horizon = *raw.horizon.get_ref();
    if horizon == 0 {
        return Err(err(raw.horizon.span(), "horizon must be at least 1".into()));
    }
    let scheduler = match raw.scheduler.as_ref().map(|s| s.get_ref().as_str()) {
        None | Some("seeded") => SchedulerMode::SeededRandom { window: raw.fairness_window },
        Some("round-robin") => SchedulerMode::RoundRobin,
        Some(other) => {
            let span = raw.scheduler.as_ref().expect("present").span();
            return Err(err(span, format!("unknown scheduler `{other}`")));
        }
    };
    let afd = match raw.afd.as_ref().map(|s| s.get_ref().as_str()) {
        None | Some("omega_f") => AfdKind::OmegaF,
        Some("omega") => AfdKind::Omega,
        Some(other) => return Err(err(raw.afd.as_ref().expect("present").span(), format!("unknown detector `{other}`"))),
    };
    let proposes = match raw.proposes {
        None => None,
        Some(p) => {
            let v = p.get_ref();
            if v.len() != n as usize || v.iter().any(|&x| x > 1) {
                return Err(err(p.span(), format!("proposes must list {n} binary values")));
            }
            Some(v.clone())
        }
    };
    let mut crashes = Vec::new();
    for c in &raw.crashes {
        let RawCrash { turn, location } = *c.get_ref();
        if location == 0 || location > n {
            return Err(err(c.span(), format!("crash location {location} outside 1..={n}")));
        }
        if turn >= horizon {
            return Err(err(c.span(), format!("crash turn {turn} beyond horizon {horizon}")));
        }
        crashes.push((turn, Loc(location)));
    }
    let conformant = raw.conformant.unwrap_or(true);
    let crashed: std::collections::BTreeSet<Loc> = crashes.iter().map(|&(_, i)| i).collect();
    if conformant && crashed.len() > f as usize {
        let span = raw.crashes.last().expect("there are crashes").span();
        return Err(err(span, format!("{} locations crash but f = {f}; mark the scenario conformant = false", crashed.len())));
    }
    let analysis_bound = match raw.analysis_bound {
        None => DEFAULT_BOUND,
        Some(b) if *b.get_ref() == 0 => return Err(err(b.span(), "analysis_bound must be at least 1".into())),
        Some(b) => *b.get_ref(),
    };
    Ok(Scenario {
        name: raw.name.unwrap_or_else(|| "unnamed".into()),
        mode,
        locations,
        seed: raw.seed,
        horizon,
        scheduler,
        afd,
        proposes,
        crashes,
        analysis_bound,
        window: raw.stabilization_window.unwrap_or(crate::extraction::DEFAULT_WINDOW),
        budget: raw.budget.unwrap_or(DEFAULT_BUDGET),
        conformant,
        source: text.to_string(),
    })
}

pub fn load_scenario(path: &std::path::Path) -> Result<Scenario, ScenarioError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| ScenarioError { line: None, message: format!("{}: {e}", path.display()) })?;
    parse_scenario(&text)
}

#[derive(Clone, PartialEq, Eq, Debug)]
pub struct VerdictLine {
    pub name: String,
    pub checker: &'static str,
    /// Hash of the checked input.
    pub input: String,
    pub verdict: Verdict,
}

#[derive(Clone, Default, PartialEq, Eq, Debug)]
pub struct Report {
    pub scenario: String,
    pub mode: String,
    pub inputs_hash: String,
    pub warnings: Vec<String>,
    pub verdicts: Vec<VerdictLine>,
    pub gadgets: Vec<String>,
    pub notes: Vec<String>,
    pub counters: Vec<(String, u64)>,
    /// File name to contents; written next to the report by the CLI.
    pub artifacts: BTreeMap<String, String>,
}

impl Report {
    fn verdict(&mut self, name: &str, checker: &'static str, input: &str, verdict: Verdict) {
        self.verdicts.push(VerdictLine { name: name.into(), checker, input: text_hash(input), verdict });
    }

    fn counter(&mut self, name: &str, value: u64) {
        self.counters.push((name.into(), value));
    }

    pub fn verdict_of(&self, name: &str) -> Option<&Verdict> {
        self.verdicts.iter().find(|v| v.name == name).map(|v| &v.verdict)
    }

    pub fn violated(&self) -> bool {
        self.verdicts.iter().any(|v| v.verdict.is_violated())
    }

    pub fn exit_code(&self) -> i32 {
        i32::from(self.violated())
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("scenario {}\nmode {}\ninputs {}\n", self.scenario, self.mode, self.inputs_hash);
        for w in &self.warnings {
            out.push_str(&format!("warning {w}\n"));
        }
        for v in &self.verdicts {
            out.push_str(&format!("verdict {} {} input={} {}\n", v.name, v.checker, v.input, v.verdict));
        }
        for g in &self.gadgets {
            out.push_str(&format!("{g}\n"));
        }
        for n in &self.notes {
            out.push_str(&format!("{n}\n"));
        }
        for (k, v) in &self.counters {
            out.push_str(&format!("counter {k} {v}\n"));
        }
        for a in self.artifacts.keys() {
            out.push_str(&format!("artifact {a}\n"));
        }
        out
    }
}

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error("capacity exceeded: {reason}")]
    Capacity { reason: String, report: Box<Report> },
    #[error("run aborted: {reason}")]
    Fatal { reason: String, report: Box<Report> },
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    System(#[from] SystemError),
}

impl HarnessError {
    /// Everything that is not a verdict is a capacity or configuration
    /// problem.
    pub fn exit_code(&self) -> i32 {
        2
    }
}

fn start_report(s: &Scenario) -> Report {
    let mut r = Report { scenario: s.name.clone(), mode: s.mode.to_string(), inputs_hash: s.inputs_hash(), ..Report::default() };
    let n = s.locations.n as usize;
    let f = s.locations.f as usize;
    if s.mode != Mode::Tree && 2 * f >= n {
        r.warnings.push(format!("f = {f} is not below n/2; the consensus algorithm is only expected to be correct for f < n/2"));
    }
    r
}

fn afd_verdict(s: &Scenario, t: &AfdTrace) -> (Verdict, &'static str) {
    match s.afd {
        AfdKind::Omega => (check_omega(t), "check_omega"),
        AfdKind::OmegaF => (check_omega_f(t, s.locations.f as usize), "check_omega_f"),
    }
}

pub fn run_scenario(s: &Scenario, want_dot: bool) -> Result<Report, HarnessError> {
    match s.mode {
        Mode::Consensus => run_consensus(s),
        Mode::Extraction => run_extraction_scenario(s, want_dot),
        Mode::Tree => run_tree_scenario(s, want_dot),
    }
}

fn run_consensus(s: &Scenario) -> Result<Report, HarnessError> {
    let mut report = start_report(s);
    let built = consensus_system(s.locations, s.proposes.as_deref(), true)?;
    let run = run_fair(&built.system, &s.policy(), &s.externals())?;
    let n = s.locations.n;
    let ct = ConsensusTrace::from_events(n, &run.execution.events, true);
    let text = ct.to_text();
    let v = check_consensus_trace(&ct, s.locations.f as usize, true);
    report.verdict("consensus", "check_consensus_trace", &text, v.overall.clone());
    for (name, clause) in v.clauses() {
        report.verdict(name, "check_consensus_trace", &text, clause.clone());
    }
    let afd = AfdTrace::new(
        n,
        run.execution.events.iter().filter(|a| a.is_crash() || a.name == ActionName::FdOmega).cloned().collect(),
        true,
    );
    let afd_text = afd.to_text();
    let (av, checker) = afd_verdict(s, &afd);
    report.verdict("detector", checker, &afd_text, av);
    let values: Vec<String> = ct.decision_values().iter().map(|v| v.to_string()).collect();
    report.notes.push(format!("decisions {}", if values.is_empty() { "none".into() } else { values.join(",") }));
    report.counter("events", run.execution.events.len() as u64);
    report.counter("skips", run.skips.len() as u64);
    report.artifacts.insert("consensus.trace".into(), text);
    report.artifacts.insert("detector.trace".into(), afd_text);
    Ok(report)
}

fn run_extraction_scenario(s: &Scenario, want_dot: bool) -> Result<Report, HarnessError> {
    let mut report = start_report(s);
    let config = ExtractionConfig {
        locations: s.locations,
        policy: s.policy(),
        crashes: s.externals(),
        bound: s.analysis_bound,
        budget: s.budget,
        window: s.window,
    };
    let out = match run_extraction(&config) {
        Ok(o) => o,
        Err(ExtractionError::Aborted { reason, stats }) => {
            report.counter("analyses", stats.analyses);
            report.counter("nodes_expanded", stats.nodes_expanded);
            let capacity = reason.contains("budget");
            let report = Box::new(report);
            return Err(if capacity { HarnessError::Capacity { reason, report } } else { HarnessError::Fatal { reason, report } });
        }
        Err(ExtractionError::System(e)) => return Err(e.into()),
        Err(ExtractionError::Kernel(e)) => return Err(e.into()),
    };
    let omega_text = out.omega_trace.to_text();
    let mut fdout = String::new();
    for (i, tl) in &out.timelines {
        for (turn, v) in tl {
            fdout.push_str(&format!("fdout {i} {turn} {v}\n"));
        }
    }
    let st = &out.stabilization;
    let sv = if st.holds { Verdict::Holds } else { Verdict::violated(st.reason.clone()) };
    report.verdict("stabilization", "stabilization", &fdout, sv);
    let (ov, checker) = afd_verdict(s, &out.omega_trace);
    report.verdict("emulated-omega", checker, &omega_text, ov);
    let afd_text = out.afd_trace.to_text();
    let (uv, checker) = afd_verdict(s, &out.afd_trace);
    report.verdict("detector", checker, &afd_text, uv);
    for (i, v) in &st.per_location {
        report.notes.push(format!("final {i} {}", v.map_or("unstable".to_string(), |l| l.to_string())));
    }
    report.counter("events", out.run.execution.events.len() as u64);
    report.counter("analyses", out.stats.analyses);
    report.counter("analysis_cache_hits", out.stats.cache_hits);
    report.counter("nodes_expanded", out.stats.nodes_expanded);
    report.counter("memo_hits", out.stats.memo_hits);
    report.counter("location_mismatches", out.stats.location_mismatches);
    report.counter("largest_snapshot", out.stats.largest_snapshot as u64);
    report.artifacts.insert("emulated.trace".into(), omega_text);
    report.artifacts.insert("detector.trace".into(), afd_text);
    report.artifacts.insert("fdout.txt".into(), fdout);
    if want_dot {
        let lay = &out.built.layout;
        for i in s.locations.all() {
            let last = out.run.execution.last_state().get::<crate::extraction::ExtractionState>(lay.proc(i));
            report.artifacts.insert(format!("window-{i}.dot"), observation_dot(&last.g.greedy_prefix(s.analysis_bound)));
        }
    }
    Ok(report)
}

/// Run the detector alone and take the observation of its first
/// `analysis_bound` outputs.
pub fn observation_for(s: &Scenario) -> Result<(AfdTrace, Observation), HarnessError> {
    let loc = s.locations;
    let sys = compose("detector", vec![component(OmegaAutomaton { locations: loc }), component(CrashAutomaton { locations: loc })])?;
    let run = run_fair(&sys, &s.policy(), &s.externals())?;
    let trace = AfdTrace::new(loc.n, run.execution.events.clone(), true);
    let mut outputs = 0;
    let cut: Vec<Action> = trace
        .events
        .iter()
        .take_while(|a| {
            if !a.is_crash() {
                outputs += 1;
            }
            outputs <= s.analysis_bound
        })
        .cloned()
        .collect();
    let g = observation_from_trace(&AfdTrace::new(loc.n, cut, false))
        .map_err(|e| HarnessError::Fatal { reason: e.to_string(), report: Box::default() })?;
    Ok((trace, g))
}

fn run_tree_scenario(s: &Scenario, want_dot: bool) -> Result<Report, HarnessError> {
    let (trace, g) = observation_for(s)?;
    analyze(s, g, Some(&trace), want_dot)
}

/// Valence and gadget report for the reference consensus system over `g`.
/// With the generating trace, also audit that every critical location is
/// crash-free there.
pub fn analyze(s: &Scenario, g: Observation, generating: Option<&AfdTrace>, want_dot: bool) -> Result<Report, HarnessError> {
    let mut report = start_report(s);
    let obs_text = g.to_text();
    let built = consensus_system(s.locations, None, false)?;
    let tree = ExecutionTree::new(built, g.clone());
    let mut an = Analyzer::with_budget(&tree, s.budget);
    let capacity = |e: AnalysisError, report: &Report| match e {
        AnalysisError::Kernel(k) => HarnessError::Kernel(k),
        other => HarnessError::Capacity { reason: other.to_string(), report: Box::new(report.clone()) },
    };
    let valence = an.valence(&[]).map_err(|e| capacity(e, &report))?;
    report.notes.push(format!("vertices {}", g.len()));
    report.notes.push(format!("root {valence}"));
    let gadgets = an.enumerate_gadgets().map_err(|e| capacity(e, &report))?;
    let first = an.first_gadget().map_err(|e| capacity(e, &report))?;
    let mut critical_ok = Verdict::Holds;
    for rg in &gadgets {
        let crit = rg.gadget.critical_location();
        let shown = crit.as_ref().map_or("mismatch".to_string(), |c| c.to_string());
        report.gadgets.push(format!("gadget {} metric={} critical={shown} node={}", rg.gadget.kind, rg.metric, rg.gadget.node_hash()));
        if let (Some(t), Ok(c)) = (generating, &crit) {
            if t.faulty().contains(c) && critical_ok.holds() {
                // A finite G still holds the pre-crash outputs of c, so
                // its own tasks can act; only G in the limit excludes it.
                critical_ok = Verdict::Undetermined(format!("critical location {c} crashes in the generating trace but still has vertices in G"));
            }
        }
    }
    if let Some(f) = &first {
        report.notes.push(format!("first {} metric={} {}", f.gadget.kind, f.metric, f.gadget));
    } else {
        report.notes.push("first none".into());
    }
    let trace_text = generating.map(|t| t.to_text()).unwrap_or_default();
    if let Some(t) = generating {
        let (v, checker) = afd_verdict(s, t);
        report.verdict("detector", checker, &trace_text, v);
    }
    report.verdict("critical-live", "gadget_audit", &format!("{obs_text}{trace_text}"), critical_ok);
    report.counter("gadgets", gadgets.len() as u64);
    report.counter("non_bot_nodes", an.non_bot_count().map_err(|e| capacity(e, &report))?.try_into().unwrap_or(u64::MAX));
    report.counter("nodes_expanded", an.counters.expanded);
    report.counter("memo_hits", an.counters.memo_hits);
    report.artifacts.insert("observation.obs".into(), obs_text);
    if want_dot {
        report.artifacts.insert("observation.dot".into(), observation_dot(&g));
        report.artifacts.insert("tree.dot".into(), tree_dot(&tree, 2)?);
    }
    Ok(report)
}
