//! Crash problems and asynchronous failure detectors: closure predicates over
//! finite traces, the Ω automaton, and three-valued membership verdicts for
//! Ω and Ω_f.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use thiserror::Error;

use crate::ioa::{Action, ActionFamily, ActionName, Automaton, Loc, Signature, Task, TaskLabel};
use crate::system::Locations;
use crate::text::{action_body, parse_action_body, parse_loc};

/// A finite sequence over crashes and detector outputs.
#[derive(Clone, PartialEq, Eq, Hash, Debug)]
pub struct AfdTrace {
    pub n: u8,
    pub events: Vec<Action>,
    /// Whether the trace is a whole (finished) run rather than a prefix.
    pub complete: bool,
}

impl AfdTrace {
    pub fn new(n: u8, events: Vec<Action>, complete: bool) -> AfdTrace {
        AfdTrace { n, events, complete }
    }

    pub fn locations(&self) -> impl Iterator<Item = Loc> {
        (1..=self.n).map(Loc)
    }

    pub fn faulty(&self) -> BTreeSet<Loc> {
        self.events.iter().filter(|e| e.is_crash()).map(|e| e.loc).collect()
    }

    pub fn live(&self) -> BTreeSet<Loc> {
        let faulty = self.faulty();
        self.locations().filter(|i| !faulty.contains(i)).collect()
    }

    /// Outputs at location `i`, in order.
    pub fn outputs_at(&self, i: Loc) -> Vec<&Action> {
        self.events.iter().filter(|e| !e.is_crash() && e.loc == i).collect()
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("trace n={} {}\n", self.n, if self.complete { "complete" } else { "prefix" });
        let mut counts: BTreeMap<Loc, usize> = BTreeMap::new();
        for e in &self.events {
            if e.is_crash() {
                out.push_str(&format!("crash {}\n", e.loc));
            } else {
                let k = counts.entry(e.loc).or_default();
                *k += 1;
                out.push_str(&format!("out {} {} {}\n", e.loc, k, action_body(e)));
            }
        }
        out
    }

    /// Parse the line format written by [`AfdTrace::to_text`].
    pub fn parse(text: &str) -> Result<AfdTrace, ParseError> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('#'));
        let (hl, header) = lines.next().ok_or(ParseError { line: 1, message: "empty trace file".into() })?;
        let err = |line: usize, message: String| ParseError { line: line + 1, message };
        let mut words = header.split_whitespace();
        if words.next() != Some("trace") {
            return Err(err(hl, "expected `trace n=<n> complete|prefix`".into()));
        }
        let n = words
            .next()
            .and_then(|w| w.strip_prefix("n="))
            .and_then(|w| w.parse::<u8>().ok())
            .filter(|&n| n > 0)
            .ok_or_else(|| err(hl, "missing or bad `n=`".into()))?;
        let complete = match words.next() {
            None | Some("complete") => true,
            Some("prefix") => false,
            Some(w) => return Err(err(hl, format!("unknown trace flag `{w}`"))),
        };
        let mut events = Vec::new();
        let mut counts: BTreeMap<Loc, usize> = BTreeMap::new();
        for (ln, line) in lines {
            let parts: Vec<&str> = line.split_whitespace().collect();
            let loc = |s: &str| -> Result<Loc, ParseError> {
                let i = parse_loc(s).map_err(|m| err(ln, m))?;
                if i.0 > n {
                    return Err(err(ln, format!("location {i} outside 1..={n}")));
                }
                Ok(i)
            };
            match parts.as_slice() {
                ["crash", i] => events.push(Action::crash(loc(i)?)),
                ["out", i, k, body] => {
                    let i = loc(i)?;
                    let c = counts.entry(i).or_default();
                    *c += 1;
                    if k.parse::<usize>().ok() != Some(*c) {
                        return Err(err(ln, format!("output index {k} at {i}; expected {c}")));
                    }
                    let a = parse_action_body(body, i).map_err(|m| err(ln, m))?;
                    if a.is_crash() {
                        return Err(err(ln, "crash written as an output".into()));
                    }
                    events.push(a);
                }
                _ => return Err(err(ln, format!("unrecognised line `{line}`"))),
            }
        }
        Ok(AfdTrace { n, events, complete })
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("line {line}: {message}")]
pub struct ParseError {
    pub line: usize,
    pub message: String,
}

/// The clause a trace fails, with the earliest witnessing event (1-based)
/// when the clause is a safety clause.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct Violation {
    pub at: Option<usize>,
    pub clause: String,
}

/// Finite-horizon reading of a trace property.
#[derive(Clone, PartialEq, Eq, Debug)]
pub enum Verdict {
    Holds,
    Violated(Violation),
    Undetermined(String),
}

impl Verdict {
    pub fn violated_at(at: usize, clause: impl Into<String>) -> Verdict {
        Verdict::Violated(Violation { at: Some(at), clause: clause.into() })
    }

    pub fn violated(clause: impl Into<String>) -> Verdict {
        Verdict::Violated(Violation { at: None, clause: clause.into() })
    }

    pub fn holds(&self) -> bool {
        matches!(self, Verdict::Holds)
    }

    pub fn is_violated(&self) -> bool {
        matches!(self, Verdict::Violated(_))
    }

    /// Conjunction: a violation dominates, then undetermined.
    pub fn and(self, other: Verdict) -> Verdict {
        match (self, other) {
            (v @ Verdict::Violated(_), _) | (_, v @ Verdict::Violated(_)) => v,
            (u @ Verdict::Undetermined(_), _) | (_, u @ Verdict::Undetermined(_)) => u,
            _ => Verdict::Holds,
        }
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Verdict::Holds => write!(f, "holds"),
            Verdict::Violated(Violation { at: Some(i), clause }) => write!(f, "violated at event {i}: {clause}"),
            Verdict::Violated(Violation { at: None, clause }) => write!(f, "violated: {clause}"),
            Verdict::Undetermined(why) => write!(f, "undetermined: {why}"),
        }
    }
}

/// Safety half of validity: the 1-based index of the first output at a
/// location after that location crashed.
pub fn first_post_crash_output(events: &[Action]) -> Option<usize> {
    let mut crashed = BTreeSet::new();
    for (idx, e) in events.iter().enumerate() {
        if e.is_crash() {
            crashed.insert(e.loc);
        } else if crashed.contains(&e.loc) {
            return Some(idx + 1);
        }
    }
    None
}

/// Validity: no output after a crash at the same location, and every
/// crash-free location keeps producing outputs. A finite trace can only
/// witness "at least one output", so a silent crash-free location violates a
/// complete trace and leaves a prefix undetermined.
pub fn is_valid_sequence(t: &AfdTrace) -> Verdict {
    if let Some(at) = first_post_crash_output(&t.events) {
        return Verdict::violated_at(at, "output after crash at the same location");
    }
    let silent: Vec<Loc> = t.live().into_iter().filter(|&i| t.outputs_at(i).is_empty()).collect();
    match silent.first() {
        None => Verdict::Holds,
        Some(i) if t.complete => Verdict::violated(format!("crash-free location {i} has no outputs")),
        Some(i) => Verdict::Undetermined(format!("crash-free location {i} has not output yet")),
    }
}

/// Drop every crash that repeats an earlier crash at the same location.
pub fn mincrash(t: &AfdTrace) -> AfdTrace {
    let mut seen = BTreeSet::new();
    let events = t.events.iter().filter(|e| !e.is_crash() || seen.insert(e.loc)).cloned().collect();
    AfdTrace { events, ..t.clone() }
}

/// Is `sub` a subsequence of `t` under an embedding that uses every position
/// flagged in `required`?
fn embeds(sub: &[Action], t: &[Action], required: &[bool]) -> bool {
    let (a, b) = (sub.len(), t.len());
    // suffix_req[j]: some required position lies in t[j..].
    let mut suffix_req = vec![false; b + 1];
    for j in (0..b).rev() {
        suffix_req[j] = suffix_req[j + 1] || required[j];
    }
    let mut next: Vec<bool> = (0..=b).map(|j| !suffix_req[j]).collect();
    for i in (0..a).rev() {
        let mut cur = vec![false; b + 1];
        for j in (0..b).rev() {
            let skip = !required[j] && cur[j + 1];
            let take = sub[i] == t[j] && next[j + 1];
            cur[j] = skip || take;
        }
        next = cur;
    }
    next[0]
}

pub fn is_subsequence(sub: &[Action], t: &[Action]) -> bool {
    embeds(sub, t, &vec![false; t.len()])
}

/// Sampling: `sub` keeps every output at crash-free locations, keeps the
/// first crash of each faulty location, and keeps a prefix of the outputs of
/// each faulty location.
pub fn is_sampling(sub: &AfdTrace, t: &AfdTrace) -> bool {
    let faulty = t.faulty();
    let mut seen = BTreeSet::new();
    let required: Vec<bool> = t.events.iter().map(|e| e.is_crash() && seen.insert(e.loc)).collect();
    if !embeds(&sub.events, &t.events, &required) {
        return false;
    }
    t.locations().all(|i| {
        let (got, all) = (sub.outputs_at(i), t.outputs_at(i));
        if faulty.contains(&i) {
            all.starts_with(&got)
        } else {
            got == all
        }
    })
}

/// Constrained reordering: `t2` permutes `t` while keeping the order of
/// same-location outputs and of every (crash, later output) pair, and stays
/// valid. Identical events are matched in order of occurrence.
pub fn constrained_reordering(t2: &AfdTrace, t: &AfdTrace) -> Result<(), String> {
    let mut occurrences: HashMap<&Action, Vec<usize>> = HashMap::new();
    for (p, e) in t.events.iter().enumerate() {
        occurrences.entry(e).or_default().push(p);
    }
    if t2.events.len() != t.events.len() {
        return Err("not a permutation: lengths differ".into());
    }
    let mut used: HashMap<&Action, usize> = HashMap::new();
    let mut origin = Vec::with_capacity(t2.events.len());
    for e in &t2.events {
        let n = used.entry(e).or_default();
        let Some(&p) = occurrences.get(e).and_then(|v| v.get(*n)) else {
            return Err(format!("not a permutation: extra {e}"));
        };
        *n += 1;
        origin.push(p);
    }
    let constrained = |e: &Action, later: &Action| {
        !later.is_crash() && (e.is_crash() || e.loc == later.loc)
    };
    for q in 0..origin.len() {
        for p in 0..q {
            // t2[p] before t2[q], but in t the order was the other way round.
            if origin[p] > origin[q] && constrained(&t.events[origin[q]], &t.events[origin[p]]) {
                return Err(format!("order of {} and {} not preserved", t.events[origin[q]], t.events[origin[p]]));
            }
        }
    }
    if let Some(at) = first_post_crash_output(&t2.events) {
        return Err(format!("output after crash at event {at}"));
    }
    Ok(())
}

pub fn is_constrained_reordering(t2: &AfdTrace, t: &AfdTrace) -> bool {
    constrained_reordering(t2, t).is_ok()
}

/// Strong sampling: any subsequence that is still a valid sequence.
pub fn is_strong_sampling(sub: &AfdTrace, t: &AfdTrace) -> bool {
    is_subsequence(&sub.events, &t.events) && !is_valid_sequence(sub).is_violated()
}

/// Membership in T_Ω_f, read at finite horizon.
///
/// With more than `f` faulty locations only validity is required. Otherwise
/// a complete trace must end in a block, starting after the last live-location
/// output naming some other leader, in which every live location outputs and
/// all live outputs name one live location. Outputs at faulty locations are
/// unconstrained. A prefix without a safety violation is undetermined.
pub fn check_omega_f(t: &AfdTrace, f: usize) -> Verdict {
    if let Some(at) = first_post_crash_output(&t.events) {
        return Verdict::violated_at(at, "output after crash at the same location");
    }
    let live = t.live();
    if t.faulty().len() > f {
        return Verdict::Holds;
    }
    if !t.complete {
        return Verdict::Undetermined("leader stabilization cannot be judged on a prefix".into());
    }
    let live_outputs: Vec<(usize, &Action)> =
        t.events.iter().enumerate().filter(|(_, e)| !e.is_crash() && live.contains(&e.loc)).collect();
    let Some(&(_, last)) = live_outputs.last() else {
        return match live.first() {
            None => Verdict::Holds,
            Some(i) => Verdict::violated(format!("crash-free location {i} has no outputs")),
        };
    };
    let leader = last.named_loc();
    let block_start = live_outputs.iter().rposition(|(_, e)| e.named_loc() != leader).map_or(0, |p| p + 1);
    let block: BTreeSet<Loc> = live_outputs[block_start..].iter().map(|(_, e)| e.loc).collect();
    if let Some(i) = live.iter().find(|i| !block.contains(i)) {
        return Verdict::violated(format!("no stable suffix: location {i} has no output in the final block"));
    }
    match leader {
        Some(l) if live.contains(&l) => Verdict::Holds,
        Some(l) => Verdict::violated(format!("final block names faulty location {l}")),
        None => Verdict::violated("final outputs name no location"),
    }
}

/// Membership in T_Ω (Ω_f with f = n).
pub fn check_omega(t: &AfdTrace) -> Verdict {
    check_omega_f(t, t.n as usize)
}

/// Plug-in point for other detectors described by a trace checker.
pub trait AfdSpec {
    fn name(&self) -> String;
    fn check(&self, t: &AfdTrace) -> Verdict;
}

#[derive(Copy, Clone, Debug)]
pub struct OmegaF {
    pub f: usize,
}

impl AfdSpec for OmegaF {
    fn name(&self) -> String {
        format!("omega_{}", self.f)
    }

    fn check(&self, t: &AfdTrace) -> Verdict {
        check_omega_f(t, self.f)
    }
}

#[derive(Clone, Default, PartialEq, Eq, Hash, Debug)]
pub struct OmegaState {
    pub crashset: BTreeSet<Loc>,
}

/// The Ω automaton: location i may output FD-Ω(j) whenever it has not
/// crashed, where j is the least location that has not crashed.
#[derive(Clone, Debug)]
pub struct OmegaAutomaton {
    pub locations: Locations,
}

impl OmegaAutomaton {
    pub fn leader(&self, s: &OmegaState) -> Option<Loc> {
        self.locations.all().find(|i| !s.crashset.contains(i))
    }
}

impl Automaton for OmegaAutomaton {
    type State = OmegaState;

    fn name(&self) -> String {
        "omega".into()
    }

    fn signature(&self) -> Signature {
        let mut s = Signature::default();
        for i in self.locations.all() {
            s.inputs.insert(ActionFamily::new(ActionName::Crash, i, None));
            s.outputs.insert(ActionFamily::new(ActionName::FdOmega, i, None));
        }
        s
    }

    fn tasks(&self) -> Vec<Task> {
        self.locations
            .all()
            .map(|i| Task { label: TaskLabel::Fd(i), families: vec![ActionFamily::new(ActionName::FdOmega, i, None)] })
            .collect()
    }

    fn initial(&self) -> OmegaState {
        OmegaState::default()
    }

    fn enabled(&self, s: &OmegaState, task: usize) -> Vec<Action> {
        let i = Loc::from_index(task);
        match self.leader(s) {
            Some(j) if !s.crashset.contains(&i) => vec![Action::fd_omega(i, j)],
            _ => vec![],
        }
    }

    fn step(&self, s: &OmegaState, a: &Action) -> Option<OmegaState> {
        match a.name {
            ActionName::Crash => {
                let mut next = s.clone();
                next.crashset.insert(a.loc);
                Some(next)
            }
            ActionName::FdOmega => {
                let ok = !s.crashset.contains(&a.loc) && a.named_loc() == self.leader(s);
                ok.then(|| s.clone())
            }
            _ => None,
        }
    }
}
