//! Binary consensus: the trace checker for T_{P,f}, the environment E_C, and
//! a rotating-coordinator algorithm driven by Ω.
//!
//! The algorithm is Paxos-shaped so that agreement survives leader changes.
//! Round r is coordinated by `(r mod n) + 1`. Round 0 needs no estimate
//! collection: its coordinator proposes its own input. In later rounds every
//! process reports `(estimate, timestamp)` to the coordinator, which proposes
//! the estimate with the highest timestamp among a majority. A process that
//! adopts a proposal locks it (timestamp := round) and acknowledges to
//! everyone; whoever sees a majority of locks for the round decides and
//! relays the decision. A process moves to the next round when its latest
//! detector output names someone other than the current coordinator, and
//! jumps forward whenever it hears of a higher round.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;

use crate::afd::{OmegaAutomaton, ParseError, Verdict};
use crate::ioa::{
    compose, component, Action, ActionFamily, ActionName, Automaton, Component, Loc, Payload, Signature, Task,
    TaskLabel,
};
use crate::system::{build_system, BuiltSystem, Locations, Message, ProcessContract, SystemError};
use crate::text::{parse_bit, parse_loc};

/// Protocol messages. Every round message carries its round.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Debug)]
pub enum CtMsg {
    /// A process's current estimate and the round it was locked in.
    Est { round: u32, est: Option<u8>, ts: Option<u32> },
    Prop { round: u32, value: u8 },
    Ack { round: u32, value: u8 },
    Dec { value: u8 },
    /// From a coordinator to a process still in an older round.
    Nudge { round: u32 },
}

impl CtMsg {
    fn round(&self) -> Option<u32> {
        match *self {
            CtMsg::Est { round, .. } | CtMsg::Prop { round, .. } | CtMsg::Ack { round, .. } | CtMsg::Nudge { round } => {
                Some(round)
            }
            CtMsg::Dec { .. } => None,
        }
    }
}

impl fmt::Display for CtMsg {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let opt = |x: Option<u32>| x.map_or("-".to_string(), |v| v.to_string());
        match *self {
            CtMsg::Est { round, est, ts } => write!(f, "est:{round}:{}:{}", opt(est.map(u32::from)), opt(ts)),
            CtMsg::Prop { round, value } => write!(f, "prop:{round}:{value}"),
            CtMsg::Ack { round, value } => write!(f, "ack:{round}:{value}"),
            CtMsg::Dec { value } => write!(f, "dec:{value}"),
            CtMsg::Nudge { round } => write!(f, "new:{round}"),
        }
    }
}

#[derive(Clone, PartialEq, Eq, Hash, Debug)]
pub enum Pending {
    Send(Loc, CtMsg),
    Decide(u8),
}

#[derive(Clone, Default, PartialEq, Eq, Hash, Debug)]
pub struct CtState {
    pub crashed: bool,
    pub est: Option<u8>,
    pub ts: Option<u32>,
    pub round: u32,
    pub leader: Option<Loc>,
    /// Estimates reported for the current round (coordinator only).
    pub reports: BTreeMap<Loc, (Option<u8>, Option<u32>)>,
    pub proposed: bool,
    /// Processes known to have locked `lock_value` in the current round.
    pub lockers: BTreeSet<Loc>,
    pub lock_value: Option<u8>,
    pub decided: Option<u8>,
    /// Whether `decide` has been emitted.
    pub announced: bool,
    pub outbox: VecDeque<Pending>,
}

/// One process of the rotating-coordinator algorithm.
#[derive(Clone, Debug)]
pub struct CtProcess {
    pub at: Loc,
    pub locations: Locations,
}

impl CtProcess {
    fn coordinator(&self, round: u32) -> Loc {
        Loc::from_index(round as usize % self.locations.n as usize)
    }

    fn majority(&self) -> usize {
        self.locations.n as usize / 2 + 1
    }

    fn others(&self) -> impl Iterator<Item = Loc> + '_ {
        self.locations.all().filter(move |&j| j != self.at)
    }

    fn broadcast(&self, s: &mut CtState, m: CtMsg) {
        for j in self.others() {
            s.outbox.push_back(Pending::Send(j, m.clone()));
        }
    }

    fn decide(&self, s: &mut CtState, v: u8) {
        if s.decided.is_some() {
            return;
        }
        s.decided = Some(v);
        s.outbox.push_front(Pending::Decide(v));
        self.broadcast(s, CtMsg::Dec { value: v });
    }

    /// Enter round `r`. `report` sends the estimate to the new coordinator;
    /// it is skipped when the round was learned from its proposal or an
    /// acknowledgement, since the coordinator has then stopped collecting.
    fn enter_round(&self, s: &mut CtState, r: u32, report: bool) {
        s.round = r;
        s.reports.clear();
        s.proposed = false;
        s.lockers.clear();
        s.lock_value = None;
        let c = self.coordinator(r);
        if c != self.at && r > 0 && report {
            s.outbox.push_back(Pending::Send(c, CtMsg::Est { round: r, est: s.est, ts: s.ts }));
        }
    }

    fn count_lock(&self, s: &mut CtState, who: Loc, value: u8) {
        s.lock_value = Some(value);
        s.lockers.insert(who);
        s.lockers.insert(self.coordinator(s.round));
        if s.lockers.len() >= self.majority() {
            self.decide(s, value);
        }
    }

    /// Coordinator duties that depend only on local state.
    fn progress(&self, s: &mut CtState) {
        if s.decided.is_some() || s.proposed || self.coordinator(s.round) != self.at {
            return;
        }
        let value = if s.round == 0 {
            s.est
        } else {
            let mut reports = s.reports.clone();
            reports.insert(self.at, (s.est, s.ts));
            if reports.len() < self.majority() {
                return;
            }
            let locked = reports.values().filter(|(e, t)| e.is_some() && t.is_some()).max_by_key(|(_, t)| *t);
            match locked {
                Some(&(e, _)) => e,
                None => s.est.or_else(|| reports.values().find_map(|(e, _)| *e)),
            }
        };
        let Some(v) = value else { return };
        s.proposed = true;
        s.est = Some(v);
        s.ts = Some(s.round);
        self.broadcast(s, CtMsg::Prop { round: s.round, value: v });
        self.count_lock(s, self.at, v);
    }

    fn on_message(&self, s: &mut CtState, from: Loc, m: &CtMsg) {
        if let CtMsg::Dec { value } = *m {
            self.decide(s, value);
            return;
        }
        if s.decided.is_some() {
            return;
        }
        let r = m.round().expect("round message");
        if r < s.round {
            if matches!(m, CtMsg::Est { .. }) && self.coordinator(s.round) == self.at {
                s.outbox.push_back(Pending::Send(from, CtMsg::Nudge { round: s.round }));
            }
            return;
        }
        if r > s.round {
            let report = matches!(m, CtMsg::Est { .. } | CtMsg::Nudge { .. });
            self.enter_round(s, r, report);
        }
        match *m {
            CtMsg::Est { est, ts, .. } => {
                if self.coordinator(r) == self.at {
                    s.reports.insert(from, (est, ts));
                }
            }
            CtMsg::Prop { value, .. } if from == self.coordinator(r) && s.lock_value.is_none_or(|v| v == value) => {
                s.est = Some(value);
                s.ts = Some(r);
                let majority_now = {
                    let mut l = s.lockers.clone();
                    l.extend([self.at, from]);
                    l.len() >= self.majority()
                };
                if !majority_now {
                    self.broadcast(s, CtMsg::Ack { round: r, value });
                }
                self.count_lock(s, self.at, value);
            }
            CtMsg::Ack { value, .. } => self.count_lock(s, from, value),
            _ => {}
        }
    }
}

impl Automaton for CtProcess {
    type State = CtState;

    fn name(&self) -> String {
        format!("ct{}", self.at)
    }

    fn signature(&self) -> Signature {
        let i = self.at;
        let mut s = Signature::default();
        s.inputs.insert(ActionFamily::new(ActionName::Crash, i, None));
        s.inputs.insert(ActionFamily::new(ActionName::Propose, i, None));
        s.inputs.insert(ActionFamily::new(ActionName::FdOmega, i, None));
        s.outputs.insert(ActionFamily::new(ActionName::Decide, i, None));
        for j in self.others() {
            s.inputs.insert(ActionFamily::new(ActionName::Receive, i, Some(j)));
            s.outputs.insert(ActionFamily::new(ActionName::Send, i, Some(j)));
        }
        s
    }

    fn tasks(&self) -> Vec<Task> {
        let sig = Automaton::signature(self);
        vec![Task { label: TaskLabel::Proc(self.at), families: sig.outputs.into_iter().collect() }]
    }

    fn initial(&self) -> CtState {
        CtState::default()
    }

    fn enabled(&self, s: &CtState, _task: usize) -> Vec<Action> {
        if s.crashed {
            return vec![];
        }
        match s.outbox.front() {
            Some(Pending::Send(j, m)) => vec![Action::send(self.at, *j, Message::Consensus(m.clone()))],
            Some(Pending::Decide(v)) => vec![Action::decide(self.at, *v)],
            None => vec![],
        }
    }

    fn step(&self, s: &CtState, a: &Action) -> Option<CtState> {
        let mut next = s.clone();
        match (&a.name, &a.payload) {
            (ActionName::Crash, _) => {
                next.crashed = true;
                next.outbox.clear();
                return Some(next);
            }
            (ActionName::Send, _) | (ActionName::Decide, _) => {
                if s.crashed || Automaton::enabled(self, s, 0).first() != Some(a) {
                    return None;
                }
                next.outbox.pop_front();
                if matches!(a.name, ActionName::Decide) {
                    next.announced = true;
                }
                return Some(next);
            }
            _ if s.crashed => return Some(next),
            (ActionName::Propose, Payload::Bit(v)) => {
                if next.est.is_none() {
                    next.est = Some(*v);
                }
            }
            (ActionName::FdOmega, Payload::Loc(l)) => {
                next.leader = Some(*l);
                if next.decided.is_none() && *l != self.coordinator(next.round) {
                    let r = next.round + 1;
                    self.enter_round(&mut next, r, true);
                }
            }
            (ActionName::Receive, Payload::Msg(Message::Consensus(m))) => {
                self.on_message(&mut next, a.peer.expect("receives have a sender"), m);
            }
            // Inputs are always accepted; anything else is ignored.
            _ => return Some(next),
        }
        self.progress(&mut next);
        Some(next)
    }
}

/// The algorithm's process automata, one per location.
pub fn ct_algorithm(locations: Locations) -> Vec<ProcessContract> {
    locations
        .all()
        .map(|i| {
            ProcessContract::new(i, component(CtProcess { at: i, locations }))
                .expect("ct processes are single-task and location-local")
        })
        .collect()
}

#[derive(Clone, Default, PartialEq, Eq, Hash, Debug)]
pub struct EnvState {
    pub stop: bool,
}

/// E_C at one location: propose 0 or 1 once, unless crashed first. With
/// `only` set, just that value is ever proposed.
#[derive(Clone, Debug)]
pub struct EnvAutomaton {
    pub at: Loc,
    pub only: Option<u8>,
}

impl Automaton for EnvAutomaton {
    type State = EnvState;

    fn name(&self) -> String {
        format!("env{}", self.at)
    }

    fn signature(&self) -> Signature {
        let i = self.at;
        let mut s = Signature::default();
        s.outputs.insert(ActionFamily::new(ActionName::Propose, i, None));
        s.inputs.insert(ActionFamily::new(ActionName::Decide, i, None));
        s.inputs.insert(ActionFamily::new(ActionName::Crash, i, None));
        s
    }

    fn tasks(&self) -> Vec<Task> {
        let fam = ActionFamily::new(ActionName::Propose, self.at, None);
        (0..2).map(|x| Task { label: TaskLabel::Env(self.at, x), families: vec![fam.clone()] }).collect()
    }

    fn initial(&self) -> EnvState {
        EnvState::default()
    }

    fn enabled(&self, s: &EnvState, task: usize) -> Vec<Action> {
        let v = task as u8;
        if s.stop || self.only.is_some_and(|o| o != v) {
            vec![]
        } else {
            vec![Action::propose(self.at, v)]
        }
    }

    fn step(&self, s: &EnvState, a: &Action) -> Option<EnvState> {
        match a.name {
            ActionName::Propose => {
                let v = a.bit()?;
                (!s.stop && self.only.is_none_or(|o| o == v)).then_some(EnvState { stop: true })
            }
            ActionName::Crash => Some(EnvState { stop: true }),
            _ => Some(s.clone()),
        }
    }
}

/// E_C for all locations, composed in location order. `proposals` pins the
/// value each location proposes.
pub fn env_automaton(locations: Locations, proposals: Option<&[u8]>) -> Component {
    let parts = locations
        .all()
        .map(|i| component(EnvAutomaton { at: i, only: proposals.map(|p| p[i.index()]) }))
        .collect();
    component(compose("env", parts).expect("per-location environments share no outputs"))
}

/// `ct_algorithm` + E_C + channels + crash automaton, optionally with the Ω
/// automaton supplying detector outputs.
pub fn consensus_system(locations: Locations, proposals: Option<&[u8]>, with_omega: bool) -> Result<BuiltSystem, SystemError> {
    let extras = if with_omega { vec![component(OmegaAutomaton { locations })] } else { vec![] };
    build_system(ct_algorithm(locations), env_automaton(locations, proposals), locations, extras)
}

/// A sequence over propose, decide and crash events.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct ConsensusTrace {
    pub n: u8,
    pub events: Vec<Action>,
    pub complete: bool,
}

impl ConsensusTrace {
    pub fn from_events(n: u8, events: &[Action], complete: bool) -> ConsensusTrace {
        let events = events
            .iter()
            .filter(|a| matches!(a.name, ActionName::Propose | ActionName::Decide | ActionName::Crash))
            .cloned()
            .collect();
        ConsensusTrace { n, events, complete }
    }

    pub fn decision_values(&self) -> BTreeSet<u8> {
        self.events.iter().filter(|a| a.name == ActionName::Decide).filter_map(|a| a.bit()).collect()
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("consensus n={} {}\n", self.n, if self.complete { "complete" } else { "prefix" });
        for a in &self.events {
            match a.name {
                ActionName::Crash => out.push_str(&format!("crash {}\n", a.loc)),
                ActionName::Propose => out.push_str(&format!("propose {} {}\n", a.loc, a.bit().unwrap_or(0))),
                ActionName::Decide => out.push_str(&format!("decide {} {}\n", a.loc, a.bit().unwrap_or(0))),
                _ => {}
            }
        }
        out
    }

    pub fn parse(text: &str) -> Result<ConsensusTrace, ParseError> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('#'));
        let err = |line: usize, message: String| ParseError { line: line + 1, message };
        let (hl, header) = lines.next().ok_or(ParseError { line: 1, message: "empty trace file".into() })?;
        let words: Vec<&str> = header.split_whitespace().collect();
        let (n, complete) = match words.as_slice() {
            ["consensus", n, rest @ ..] => {
                let n = n.strip_prefix("n=").and_then(|s| s.parse::<u8>().ok()).filter(|&n| n > 0);
                let complete = match rest {
                    [] | ["complete"] => Some(true),
                    ["prefix"] => Some(false),
                    _ => None,
                };
                n.zip(complete).ok_or_else(|| err(hl, "expected `consensus n=<n> complete|prefix`".into()))?
            }
            _ => return Err(err(hl, "expected `consensus n=<n> complete|prefix`".into())),
        };
        let mut events = Vec::new();
        for (ln, line) in lines {
            let parts: Vec<&str> = line.split_whitespace().collect();
            let loc = |s: &str| -> Result<Loc, ParseError> {
                parse_loc(s).map_err(|m| err(ln, m)).and_then(|i| {
                    if i.0 <= n {
                        Ok(i)
                    } else {
                        Err(err(ln, format!("location {i} outside 1..={n}")))
                    }
                })
            };
            let bit = |s: &str| parse_bit(s).map_err(|m| err(ln, m));
            match parts.as_slice() {
                ["crash", i] => events.push(Action::crash(loc(i)?)),
                ["propose", i, v] => events.push(Action::propose(loc(i)?, bit(v)?)),
                ["decide", i, v] => events.push(Action::decide(loc(i)?, bit(v)?)),
                _ => return Err(err(ln, format!("unrecognised line `{line}`"))),
            }
        }
        Ok(ConsensusTrace { n, events, complete })
    }
}

#[derive(Clone, PartialEq, Eq, Debug)]
pub struct ConsensusVerdict {
    pub well_formed: Verdict,
    pub crash_limit: Verdict,
    pub crash_validity: Verdict,
    pub agreement: Verdict,
    pub validity: Verdict,
    pub termination: Verdict,
    pub overall: Verdict,
}

impl ConsensusVerdict {
    pub fn clauses(&self) -> [(&'static str, &Verdict); 6] {
        [
            ("env-well-formedness", &self.well_formed),
            ("f-crash-limitation", &self.crash_limit),
            ("crash-validity", &self.crash_validity),
            ("agreement", &self.agreement),
            ("validity", &self.validity),
            ("termination", &self.termination),
        ]
    }
}

/// Evaluate every clause of T_{P,f}. Clauses that need the whole run
/// (exactly one proposal and exactly one decision at live locations) are
/// undetermined on prefixes.
pub fn check_consensus_trace(t: &ConsensusTrace, f: usize, complete: bool) -> ConsensusVerdict {
    let ev = &t.events;
    let locs: Vec<Loc> = (1..=t.n).map(Loc).collect();
    let faulty: BTreeSet<Loc> = ev.iter().filter(|a| a.is_crash()).map(|a| a.loc).collect();
    let live: Vec<Loc> = locs.iter().copied().filter(|i| !faulty.contains(i)).collect();
    let positions = |name: ActionName, i: Loc| -> Vec<usize> {
        ev.iter().enumerate().filter(|(_, a)| a.name == name && a.loc == i).map(|(p, _)| p).collect()
    };
    let first_crash = |i: Loc| ev.iter().position(|a| a.is_crash() && a.loc == i);
    let missing = |name: ActionName, what: &str| -> Verdict {
        match live.iter().find(|&&i| positions(name.clone(), i).is_empty()) {
            None => Verdict::Holds,
            Some(i) if complete => Verdict::violated(format!("live location {i} never {what}")),
            Some(i) => Verdict::Undetermined(format!("live location {i} has not {what} yet")),
        }
    };

    let mut well_formed = Verdict::Holds;
    for &i in &locs {
        let p = positions(ActionName::Propose, i);
        if p.len() > 1 {
            well_formed = well_formed.and(Verdict::violated_at(p[1] + 1, format!("second proposal at {i}")));
        }
        if let (Some(c), Some(&last)) = (first_crash(i), p.last()) {
            if last > c {
                well_formed = well_formed.and(Verdict::violated_at(last + 1, format!("proposal at {i} after its crash")));
            }
        }
    }
    let well_formed = well_formed.and(missing(ActionName::Propose, "proposed"));

    let crash_limit = if faulty.len() > f {
        Verdict::violated(format!("{} locations crash, more than f={f}", faulty.len()))
    } else {
        Verdict::Holds
    };

    let mut crash_validity = Verdict::Holds;
    for &i in &locs {
        if let Some(c) = first_crash(i) {
            if let Some(&d) = positions(ActionName::Decide, i).iter().find(|&&d| d > c) {
                crash_validity = crash_validity.and(Verdict::violated_at(d + 1, format!("decision at {i} after crash")));
            }
        }
    }

    let decides: Vec<(usize, &Action)> = ev.iter().enumerate().filter(|(_, a)| a.name == ActionName::Decide).collect();
    let agreement = match decides.first() {
        None => Verdict::Holds,
        Some((_, first)) => match decides.iter().find(|(_, a)| a.bit() != first.bit()) {
            Some((p, _)) => Verdict::violated_at(p + 1, "two locations decide differently"),
            None => Verdict::Holds,
        },
    };

    let proposed: BTreeSet<u8> = ev.iter().filter(|a| a.name == ActionName::Propose).filter_map(|a| a.bit()).collect();
    let validity = match decides.iter().find(|(_, a)| !a.bit().is_some_and(|v| proposed.contains(&v))) {
        Some((p, _)) => Verdict::violated_at(p + 1, "decided value was never proposed"),
        None => Verdict::Holds,
    };

    let mut termination = Verdict::Holds;
    for &i in &locs {
        let d = positions(ActionName::Decide, i);
        if d.len() > 1 {
            termination = termination.and(Verdict::violated_at(d[1] + 1, format!("second decision at {i}")));
        }
    }
    let termination = termination.and(missing(ActionName::Decide, "decided"));

    let hypothesis = well_formed.clone().and(crash_limit.clone());
    let conclusion = crash_validity.clone().and(agreement.clone()).and(validity.clone()).and(termination.clone());
    let overall = match hypothesis {
        Verdict::Violated(_) => Verdict::Holds,
        Verdict::Holds => conclusion,
        Verdict::Undetermined(why) => match conclusion {
            Verdict::Holds => Verdict::Holds,
            _ => Verdict::Undetermined(why),
        },
    };
    ConsensusVerdict { well_formed, crash_limit, crash_validity, agreement, validity, termination, overall }
}
