//! Extracting Ω from any detector that solves consensus.
//!
//! Every location runs [`ExtractionAutomaton`]: it records each detector
//! output as a vertex of its observation G, ships G to everyone, and after
//! every output analyzes the execution tree of a fixed consensus system
//! over G. When that tree has a decision gadget, the output is the critical
//! location of the first one.
//!
//! The tree over all of G grows without bound, so the analysis looks at a
//! window: the greedy prefix of G with at most `bound` vertices. The window
//! is itself an observation and a prefix of G, and once the low-index
//! vertices of every location have arrived everywhere it is the same at
//! every location. Results are cached per location by window.

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::sync::{Arc, Mutex};

use thiserror::Error;

use crate::afd::{check_omega_f, AfdTrace, OmegaAutomaton, Verdict};
use crate::consensus::consensus_system;
use crate::gadget::{AnalysisError, Analyzer, GadgetKind};
use crate::ioa::{
    component, run_fair, Action, ActionFamily, ActionName, Automaton, External, KernelError, Loc, Payload, Run,
    SchedulerPolicy, Signature, Task, TaskLabel,
};
use crate::observation::{Observation, UnionConflict, Vertex, DEFAULT_BOUND};
use crate::system::{build_system, empty_environment, BuiltSystem, Locations, Message, ProcessContract, SystemError, SystemLayout};
use crate::tree::ExecutionTree;

pub const DEFAULT_WINDOW: usize = 10;

#[derive(Clone, PartialEq, Eq, Hash, Debug)]
pub enum Outgoing {
    Snapshot(Arc<Observation>, Loc),
    Leader(Loc),
}

#[derive(Clone, PartialEq, Eq, Hash, Debug)]
pub struct ExtractionState {
    pub g: Observation,
    pub k: u32,
    pub sendq: VecDeque<Outgoing>,
    pub fdout: Loc,
    pub faulty: bool,
}

/// What one window analysis found.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct Finding {
    pub kind: GadgetKind,
    pub metric: u128,
    /// `None` when the gadget's tags disagree on the location.
    pub critical: Option<Loc>,
}

#[derive(Clone, Default, PartialEq, Eq, Debug)]
pub struct ExtractionStats {
    pub analyses: u64,
    pub cache_hits: u64,
    pub nodes_expanded: u64,
    pub memo_hits: u64,
    pub location_mismatches: u64,
    pub largest_snapshot: usize,
    pub failure: Option<String>,
}

/// The extraction process at one location: gossip observations, analyse
/// the window, and emit the critical location of the first gadget.
pub struct ExtractionAutomaton {
    pub at: Loc,
    pub locations: Locations,
    pub bound: usize,
    pub budget: usize,
    reference: BuiltSystem,
    cache: Mutex<HashMap<Observation, Option<Finding>>>,
    stats: Arc<Mutex<ExtractionStats>>,
}

impl ExtractionAutomaton {
    pub fn new(at: Loc, locations: Locations, bound: usize, budget: usize, stats: Arc<Mutex<ExtractionStats>>) -> Self {
        let reference = consensus_system(locations, None, false).expect("the reference consensus system assembles");
        ExtractionAutomaton { at, locations, bound, budget, reference, cache: Mutex::new(HashMap::new()), stats }
    }

    /// First gadget of the tree over the window of `g`, cached.
    pub fn analyze(&self, g: &Observation) -> Result<Option<Finding>, AnalysisError> {
        let window = g.greedy_prefix(self.bound);
        if let Some(hit) = self.cache.lock().expect("cache lock").get(&window) {
            self.stats.lock().expect("stats lock").cache_hits += 1;
            return Ok(*hit);
        }
        let tree = ExecutionTree::new(self.reference.clone(), window.clone());
        let mut an = Analyzer::with_budget(&tree, self.budget);
        let first = an.first_gadget();
        let mut stats = self.stats.lock().expect("stats lock");
        stats.analyses += 1;
        stats.nodes_expanded += an.counters.expanded;
        stats.memo_hits += an.counters.memo_hits;
        let finding = first?.map(|g| Finding {
            kind: g.gadget.kind,
            metric: g.metric,
            critical: g.gadget.critical_location().ok(),
        });
        if finding.is_some_and(|f| f.critical.is_none()) {
            stats.location_mismatches += 1;
        }
        self.cache.lock().expect("cache lock").insert(window, finding);
        Ok(finding)
    }

    fn fail(&self, why: String) {
        self.stats.lock().expect("stats lock").failure.get_or_insert(why);
    }

    fn others(&self) -> impl Iterator<Item = Loc> + '_ {
        self.locations.all().filter(move |&j| j != self.at)
    }
}

impl Automaton for ExtractionAutomaton {
    type State = ExtractionState;

    fn name(&self) -> String {
        format!("extract{}", self.at)
    }

    fn signature(&self) -> Signature {
        let i = self.at;
        let mut s = Signature::default();
        s.inputs.insert(ActionFamily::new(ActionName::Crash, i, None));
        s.inputs.insert(ActionFamily::new(ActionName::FdOmega, i, None));
        s.outputs.insert(ActionFamily::new(ActionName::FdEmulated, i, None));
        for j in self.others() {
            s.inputs.insert(ActionFamily::new(ActionName::Receive, i, Some(j)));
            s.outputs.insert(ActionFamily::new(ActionName::Send, i, Some(j)));
        }
        s
    }

    fn tasks(&self) -> Vec<Task> {
        vec![Task { label: TaskLabel::Proc(self.at), families: Automaton::signature(self).outputs.into_iter().collect() }]
    }

    fn initial(&self) -> ExtractionState {
        ExtractionState { g: Observation::empty(self.locations.n), k: 0, sendq: VecDeque::new(), fdout: self.at, faulty: false }
    }

    fn enabled(&self, s: &ExtractionState, _task: usize) -> Vec<Action> {
        if s.faulty {
            return vec![];
        }
        match s.sendq.front() {
            Some(Outgoing::Snapshot(g, j)) => vec![Action::send(self.at, *j, Message::Observation(g.clone()))],
            Some(Outgoing::Leader(l)) => vec![Action::fd_emulated(self.at, *l)],
            None => vec![],
        }
    }

    fn step(&self, s: &ExtractionState, a: &Action) -> Option<ExtractionState> {
        let mut next = s.clone();
        match (&a.name, &a.payload) {
            (ActionName::Crash, _) => next.faulty = true,
            _ if s.faulty && matches!(a.name, ActionName::Send | ActionName::FdEmulated) => return None,
            _ if s.faulty => {}
            (ActionName::Send, _) | (ActionName::FdEmulated, _) => {
                if Automaton::enabled(self, s, 0).first() != Some(a) {
                    return None;
                }
                next.sendq.pop_front();
            }
            (ActionName::FdOmega, _) => {
                next.k += 1;
                next.g = match next.g.insert(Vertex::new(next.k, a.clone())) {
                    Ok(g) => g,
                    Err(e) => {
                        self.fail(format!("insert at {}: {e}", self.at));
                        return None;
                    }
                };
                let snapshot = Arc::new(next.g.clone());
                {
                    let mut stats = self.stats.lock().expect("stats lock");
                    stats.largest_snapshot = stats.largest_snapshot.max(snapshot.len());
                }
                for j in self.others() {
                    next.sendq.push_back(Outgoing::Snapshot(snapshot.clone(), j));
                }
                match self.analyze(&next.g) {
                    Ok(Some(Finding { critical: Some(c), .. })) => next.fdout = c,
                    Ok(_) => {}
                    Err(e) => {
                        self.fail(format!("analysis at {}: {e}", self.at));
                        return None;
                    }
                }
                next.sendq.push_back(Outgoing::Leader(next.fdout));
            }
            (ActionName::Receive, Payload::Msg(Message::Observation(h))) => match next.g.union(h) {
                Ok(g) => next.g = g,
                Err(UnionConflict { kind, witness }) => {
                    self.fail(format!("union conflict at {}: {kind:?} {witness:?}", self.at));
                    return None;
                }
            },
            _ => {}
        }
        Some(next)
    }
}

#[derive(Clone, Debug)]
pub struct ExtractionConfig {
    pub locations: Locations,
    pub policy: SchedulerPolicy,
    pub crashes: Vec<External>,
    pub bound: usize,
    pub budget: usize,
    /// Number of trailing equal outputs that counts as stable.
    pub window: usize,
}

impl ExtractionConfig {
    pub fn new(locations: Locations, policy: SchedulerPolicy) -> ExtractionConfig {
        ExtractionConfig {
            locations,
            policy,
            crashes: Vec::new(),
            bound: DEFAULT_BOUND,
            budget: crate::gadget::DEFAULT_BUDGET,
            window: DEFAULT_WINDOW,
        }
    }
}

#[derive(Clone, PartialEq, Eq, Debug)]
pub struct Stabilization {
    /// Last value of each crash-free location if its final `window` outputs
    /// agree.
    pub per_location: BTreeMap<Loc, Option<Loc>>,
    pub common: Option<Loc>,
    pub holds: bool,
    pub reason: String,
}

#[derive(Debug)]
pub struct ExtractionOutcome {
    pub built: BuiltSystem,
    pub run: Run,
    /// Crashes and emulated outputs.
    pub omega_trace: AfdTrace,
    /// Crashes and the underlying detector's outputs.
    pub afd_trace: AfdTrace,
    /// `(turn, value)` for every emulated output, per location.
    pub timelines: BTreeMap<Loc, Vec<(usize, Loc)>>,
    pub stabilization: Stabilization,
    pub verdict: Verdict,
    pub stats: ExtractionStats,
}

#[derive(Debug, Error)]
pub enum ExtractionError {
    #[error("extraction aborted: {reason}")]
    Aborted { reason: String, stats: ExtractionStats },
    #[error(transparent)]
    System(#[from] SystemError),
    #[error(transparent)]
    Kernel(#[from] KernelError),
}

/// Extraction automata, channels, crash automaton, an empty environment and
/// the Ω automaton as the underlying detector.
pub fn extraction_system(config: &ExtractionConfig, stats: Arc<Mutex<ExtractionStats>>) -> Result<BuiltSystem, SystemError> {
    let loc = config.locations;
    let procs = loc
        .all()
        .map(|i| {
            let a = ExtractionAutomaton::new(i, loc, config.bound, config.budget, stats.clone());
            ProcessContract::new(i, component(a))
        })
        .collect::<Result<Vec<_>, _>>()?;
    build_system(procs, empty_environment(), loc, vec![component(OmegaAutomaton { locations: loc })])
}

/// Each location's state after every event, for invariant audits.
pub fn states_at<'r>(run: &'r Run, layout: &SystemLayout, i: Loc) -> impl Iterator<Item = &'r ExtractionState> + 'r {
    let idx = layout.proc(i);
    run.execution.states.iter().map(move |s| s.get::<ExtractionState>(idx))
}

pub fn stabilization(timelines: &BTreeMap<Loc, Vec<(usize, Loc)>>, live: &[Loc], window: usize) -> Stabilization {
    let mut per_location = BTreeMap::new();
    for &i in live {
        let values: Vec<Loc> = timelines.get(&i).map(|t| t.iter().map(|&(_, v)| v).collect()).unwrap_or_default();
        let stable = (values.len() >= window && window > 0)
            .then(|| values[values.len() - window..].to_vec())
            .filter(|tail| tail.iter().all(|v| *v == tail[0]))
            .map(|tail| tail[0]);
        per_location.insert(i, stable);
    }
    let values: Vec<Option<Loc>> = per_location.values().copied().collect();
    let (common, holds, reason) = match values.first() {
        None => (None, true, "no crash-free locations".to_string()),
        Some(&first) if values.iter().all(|v| *v == first && v.is_some()) => {
            let l = first.expect("checked");
            if live.contains(&l) {
                (Some(l), true, format!("all crash-free locations end with {window} outputs naming {l}"))
            } else {
                (Some(l), false, format!("common output {l} is a crashed location"))
            }
        }
        _ => {
            let bad = per_location.iter().find(|(_, v)| v.is_none()).map(|(i, _)| *i);
            let reason = match bad {
                Some(i) => format!("location {i} has no {window} trailing equal outputs"),
                None => "crash-free locations stabilize on different values".to_string(),
            };
            (None, false, reason)
        }
    };
    Stabilization { per_location, common, holds, reason }
}

pub fn run_extraction(config: &ExtractionConfig) -> Result<ExtractionOutcome, ExtractionError> {
    let stats = Arc::new(Mutex::new(ExtractionStats::default()));
    let built = extraction_system(config, stats.clone())?;
    let run = match run_fair(&built.system, &config.policy, &config.crashes) {
        Ok(r) => r,
        Err(e) => {
            let stats = stats.lock().expect("stats lock").clone();
            let reason = stats.failure.clone().unwrap_or_else(|| e.to_string());
            return Err(ExtractionError::Aborted { reason, stats });
        }
    };
    let n = config.locations.n;
    let events = &run.execution.events;
    let omega_events: Vec<Action> =
        events.iter().filter(|a| a.is_crash() || a.name == ActionName::FdEmulated).cloned().collect();
    let afd_events: Vec<Action> =
        events.iter().filter(|a| a.is_crash() || a.name == ActionName::FdOmega).cloned().collect();
    let omega_trace = AfdTrace::new(n, omega_events, true);
    let afd_trace = AfdTrace::new(n, afd_events, true);
    let mut timelines: BTreeMap<Loc, Vec<(usize, Loc)>> = config.locations.all().map(|i| (i, Vec::new())).collect();
    for (a, &turn) in events.iter().zip(&run.event_turns) {
        if let (ActionName::FdEmulated, Some(l)) = (&a.name, a.named_loc()) {
            timelines.entry(a.loc).or_default().push((turn, l));
        }
    }
    let live: Vec<Loc> = omega_trace.live().into_iter().collect();
    let stabilization = stabilization(&timelines, &live, config.window);
    let verdict = check_omega_f(&omega_trace, config.locations.f as usize);
    let stats = stats.lock().expect("stats lock").clone();
    Ok(ExtractionOutcome { built, run, omega_trace, afd_trace, timelines, stabilization, verdict, stats })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn automaton(n: u8) -> ExtractionAutomaton {
        let loc = Locations::new(n, 0).unwrap();
        ExtractionAutomaton::new(Loc(1), loc, DEFAULT_BOUND, 100_000, Arc::new(Mutex::new(ExtractionStats::default())))
    }

    #[test]
    fn first_output_queues_snapshots_then_the_leader() {
        let a = automaton(2);
        let s0 = Automaton::initial(&a);
        assert_eq!(s0.fdout, Loc(1));
        let d = Action::fd_omega(Loc(1), Loc(1));
        let s1 = Automaton::step(&a, &s0, &d).unwrap();
        assert_eq!(s1.k, 1);
        assert_eq!(s1.g.len(), 1);
        assert_eq!(s1.g.action(crate::observation::VertexId::new(1, 1)), Some(&d));
        assert_eq!(s1.sendq.len(), 2);
        assert!(matches!(&s1.sendq[0], Outgoing::Snapshot(g, j) if **g == s1.g && *j == Loc(2)));
        assert_eq!(s1.sendq[1], Outgoing::Leader(Loc(1)));
    }

    #[test]
    fn receiving_a_prefix_changes_nothing() {
        let a = automaton(2);
        let d = Action::fd_omega(Loc(1), Loc(1));
        let s1 = Automaton::step(&a, &Automaton::initial(&a), &d).unwrap();
        let s2 = Automaton::step(&a, &s1, &d).unwrap();
        let recv = Action::receive(Loc(2), Loc(1), Message::Observation(Arc::new(s1.g.clone())));
        assert_eq!(Automaton::step(&a, &s2, &recv).unwrap().g, s2.g);
    }

    #[test]
    fn crash_disables_everything() {
        let a = automaton(2);
        let s1 = Automaton::step(&a, &Automaton::initial(&a), &Action::fd_omega(Loc(1), Loc(1))).unwrap();
        let s2 = Automaton::step(&a, &s1, &Action::crash(Loc(1))).unwrap();
        assert!(s2.faulty);
        assert!(Automaton::enabled(&a, &s2, 0).is_empty());
    }

    #[test]
    fn stabilization_needs_a_common_live_value() {
        let tl = |v: &[(u8, &[u8])]| -> BTreeMap<Loc, Vec<(usize, Loc)>> {
            v.iter().map(|(i, xs)| (Loc(*i), xs.iter().enumerate().map(|(t, &x)| (t, Loc(x))).collect())).collect()
        };
        let ok = stabilization(&tl(&[(1, &[2, 1, 1, 1]), (2, &[1, 1, 1])]), &[Loc(1), Loc(2)], 3);
        assert!(ok.holds && ok.common == Some(Loc(1)));
        let short = stabilization(&tl(&[(1, &[1, 1, 1]), (2, &[1, 1])]), &[Loc(1), Loc(2)], 3);
        assert!(!short.holds);
        let split = stabilization(&tl(&[(1, &[1, 1, 1]), (2, &[2, 2, 2])]), &[Loc(1), Loc(2)], 3);
        assert!(!split.holds);
        let dead = stabilization(&tl(&[(1, &[2, 2, 2])]), &[Loc(1)], 3);
        assert!(!dead.holds);
    }
}
