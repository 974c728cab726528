//! Concrete system pieces: locations, reliable FIFO channels, the crash
//! automaton, the process contract, and assembly of a full system.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;
use std::sync::Arc;

use thiserror::Error;

use crate::consensus::CtMsg;
use crate::ioa::{
    compose, component, Action, ActionFamily, ActionName, Automaton, Component, Composition, KernelError, Loc,
    Signature, SystemState, Task, TaskLabel,
};
use crate::observation::Observation;

/// Π = {1..n} with crash tolerance f < n.
#[derive(Copy, Clone, PartialEq, Eq, Hash, Debug)]
pub struct Locations {
    pub n: u8,
    pub f: u8,
}

impl Locations {
    pub fn new(n: u8, f: u8) -> Result<Locations, SystemError> {
        if n == 0 {
            return Err(SystemError::NoLocations);
        }
        if f >= n {
            return Err(SystemError::ToleranceTooLarge { n, f });
        }
        Ok(Locations { n, f })
    }

    pub fn all(&self) -> impl Iterator<Item = Loc> + Clone {
        (1..=self.n).map(Loc)
    }

    pub fn contains(&self, i: Loc) -> bool {
        (1..=self.n).contains(&i.0)
    }

    /// Ordered pairs (i, j) with i ≠ j.
    pub fn pairs(&self) -> impl Iterator<Item = (Loc, Loc)> + '_ {
        self.all().flat_map(move |i| self.all().filter(move |&j| j != i).map(move |j| (i, j)))
    }
}

/// The message alphabet M.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Debug)]
pub enum Message {
    Consensus(CtMsg),
    Observation(Arc<Observation>),
}

impl fmt::Display for Message {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Message::Consensus(m) => write!(f, "{m}"),
            Message::Observation(g) => write!(f, "obs[{}]", g.len()),
        }
    }
}

#[derive(Clone, Default, PartialEq, Eq, Hash, Debug)]
pub struct ChannelState {
    pub queue: VecDeque<Message>,
}

/// Reliable FIFO channel from `from` to `to`.
#[derive(Clone, Debug)]
pub struct Channel {
    pub from: Loc,
    pub to: Loc,
}

impl Channel {
    fn send_family(&self) -> ActionFamily {
        ActionFamily::new(ActionName::Send, self.from, Some(self.to))
    }

    fn receive_family(&self) -> ActionFamily {
        ActionFamily::new(ActionName::Receive, self.to, Some(self.from))
    }
}

/// Send appends, receive removes the head (and only the head).
pub fn channel_step(state: &ChannelState, action: &Action) -> Option<ChannelState> {
    let crate::ioa::Payload::Msg(m) = &action.payload else {
        return None;
    };
    match action.name {
        ActionName::Send => {
            let mut next = state.clone();
            next.queue.push_back(m.clone());
            Some(next)
        }
        ActionName::Receive if state.queue.front() == Some(m) => {
            let mut next = state.clone();
            next.queue.pop_front();
            Some(next)
        }
        _ => None,
    }
}

impl Automaton for Channel {
    type State = ChannelState;

    fn name(&self) -> String {
        format!("chan{}{}", self.from, self.to)
    }

    fn signature(&self) -> Signature {
        let mut s = Signature::default();
        s.inputs.insert(self.send_family());
        s.outputs.insert(self.receive_family());
        s
    }

    fn tasks(&self) -> Vec<Task> {
        vec![Task { label: TaskLabel::Chan(self.from, self.to), families: vec![self.receive_family()] }]
    }

    fn initial(&self) -> ChannelState {
        ChannelState::default()
    }

    fn enabled(&self, s: &ChannelState, _task: usize) -> Vec<Action> {
        s.queue.front().map(|m| Action::receive(self.from, self.to, m.clone())).into_iter().collect()
    }

    fn step(&self, s: &ChannelState, a: &Action) -> Option<ChannelState> {
        let fam = a.family();
        if fam != self.send_family() && fam != self.receive_family() {
            return None;
        }
        channel_step(s, a)
    }
}

/// Outputs `crash_i` for every location; it is driven entirely by injected
/// externals, so it has no tasks.
#[derive(Clone, Debug)]
pub struct CrashAutomaton {
    pub locations: Locations,
}

impl Automaton for CrashAutomaton {
    type State = ();

    fn name(&self) -> String {
        "crash".into()
    }

    fn signature(&self) -> Signature {
        let mut s = Signature::default();
        for i in self.locations.all() {
            s.outputs.insert(ActionFamily::new(ActionName::Crash, i, None));
        }
        s
    }

    fn tasks(&self) -> Vec<Task> {
        Vec::new()
    }

    fn initial(&self) {}

    fn enabled(&self, _s: &(), _task: usize) -> Vec<Action> {
        Vec::new()
    }

    fn step(&self, _s: &(), a: &Action) -> Option<()> {
        (a.is_crash() && self.locations.contains(a.loc)).then_some(())
    }
}

/// A process automaton at a declared location.
#[derive(Clone)]
pub struct ProcessContract {
    pub loc: Loc,
    pub automaton: Component,
}

impl fmt::Debug for ProcessContract {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ProcessContract({}, {})", self.loc, self.automaton.name())
    }
}

impl ProcessContract {
    /// Checks the structural parts of the contract: a single task and every
    /// action located at `loc`. Crash absorption is behavioural and is
    /// checked on runs.
    pub fn new(loc: Loc, automaton: Component) -> Result<ProcessContract, SystemError> {
        let tasks = automaton.tasks();
        if tasks.len() != 1 {
            return Err(SystemError::NotSingleTask { loc, tasks: tasks.len() });
        }
        let sig = automaton.signature();
        for fam in sig.inputs.iter().chain(&sig.outputs).chain(&sig.internals) {
            if fam.loc != loc {
                return Err(SystemError::ForeignAction { loc, action: fam.clone() });
            }
        }
        Ok(ProcessContract { loc, automaton })
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SystemError {
    #[error("a system needs at least one location")]
    NoLocations,
    #[error("crash tolerance f={f} must be below n={n}")]
    ToleranceTooLarge { n: u8, f: u8 },
    #[error("process at {loc} has {tasks} tasks; exactly one is required")]
    NotSingleTask { loc: Loc, tasks: usize },
    #[error("process at {loc} declares {action:?}, which is not located there")]
    ForeignAction { loc: Loc, action: ActionFamily },
    #[error("no process supplied for location {0}")]
    MissingProcess(Loc),
    #[error("process supplied twice, or outside Π, for location {0}")]
    UnexpectedProcess(Loc),
    #[error("{action:?} has no matching channel")]
    UnmatchedChannelAction { action: ActionFamily },
    #[error(transparent)]
    Kernel(#[from] KernelError),
}

/// Where each piece of a built system lives in its [`SystemState`].
#[derive(Clone, Debug)]
pub struct SystemLayout {
    pub locations: Locations,
    pub procs: Vec<usize>,
    pub channels: BTreeMap<(Loc, Loc), usize>,
    pub crash: usize,
    pub env: usize,
    pub extras: Vec<usize>,
}

impl SystemLayout {
    pub fn proc(&self, i: Loc) -> usize {
        self.procs[i.index()]
    }

    pub fn channel(&self, from: Loc, to: Loc) -> usize {
        self.channels[&(from, to)]
    }

    /// State of the per-location environment E_i, when the environment was
    /// composed from one part per location.
    pub fn env_part<'a>(&self, state: &'a SystemState, i: Loc) -> Option<&'a crate::ioa::StateBox> {
        let env: &SystemState = state.part(self.env).downcast()?;
        env.parts().get(i.index())
    }
}

/// A built system S with its layout.
#[derive(Clone, Debug)]
pub struct BuiltSystem {
    pub system: Arc<Composition>,
    pub layout: SystemLayout,
}

/// Compose processes, all n(n−1) channels, the crash automaton, the
/// environment, and any extra components (e.g. a detector automaton), in that
/// order.
pub fn build_system(
    algorithm: Vec<ProcessContract>,
    environment: Component,
    locations: Locations,
    extras: Vec<Component>,
) -> Result<BuiltSystem, SystemError> {
    let mut by_loc: BTreeMap<Loc, ProcessContract> = BTreeMap::new();
    for p in algorithm {
        if !locations.contains(p.loc) || by_loc.contains_key(&p.loc) {
            return Err(SystemError::UnexpectedProcess(p.loc));
        }
        by_loc.insert(p.loc, p);
    }
    if let Some(i) = locations.all().find(|i| !by_loc.contains_key(i)) {
        return Err(SystemError::MissingProcess(i));
    }

    let channels: Vec<Channel> = locations.pairs().map(|(from, to)| Channel { from, to }).collect();
    let chan_fams: BTreeSet<ActionFamily> =
        channels.iter().flat_map(|c| [c.send_family(), c.receive_family()]).collect();
    for p in by_loc.values() {
        let sig = p.automaton.signature();
        for fam in sig.inputs.iter().chain(&sig.outputs) {
            let channel_action = matches!(fam.name, ActionName::Send | ActionName::Receive);
            if channel_action && !chan_fams.contains(fam) {
                return Err(SystemError::UnmatchedChannelAction { action: fam.clone() });
            }
        }
    }

    let mut parts: Vec<Component> = Vec::new();
    let procs: Vec<usize> = by_loc
        .into_values()
        .map(|p| {
            parts.push(p.automaton);
            parts.len() - 1
        })
        .collect();
    let mut chan_idx = BTreeMap::new();
    for c in channels {
        chan_idx.insert((c.from, c.to), parts.len());
        parts.push(component(c));
    }
    let crash = parts.len();
    parts.push(component(CrashAutomaton { locations }));
    let env = parts.len();
    parts.push(environment);
    let extras = extras
        .into_iter()
        .map(|e| {
            parts.push(e);
            parts.len() - 1
        })
        .collect();

    let system = compose("system", parts)?;
    Ok(BuiltSystem {
        system: Arc::new(system),
        layout: SystemLayout { locations, procs, channels: chan_idx, crash, env, extras },
    })
}

/// An environment with no actions and no tasks.
pub fn empty_environment() -> Component {
    component(compose("env", Vec::new()).expect("the empty composition is well formed"))
}
