//! Task-deterministic I/O automata: actions, signatures, composition and a
//! deterministic fair scheduler.
//!
//! Components are written against the typed [`Automaton`] trait and erased
//! into [`Component`] handles for composition. A composed system is itself an
//! [`Automaton`] whose state is a [`SystemState`] (one slot per component), so
//! compositions nest.

use std::any::Any;
use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::hash::{Hash, Hasher};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::system::Message;

/// A location in Π = {1, …, n}.
#[derive(Copy, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Debug)]
pub struct Loc(pub u8);

impl Loc {
    /// Zero-based index, for slot arithmetic.
    pub fn index(self) -> usize {
        self.0 as usize - 1
    }

    pub fn from_index(i: usize) -> Loc {
        Loc(i as u8 + 1)
    }
}

impl fmt::Display for Loc {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Symbolic action names. Names match by identity across components.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Debug)]
pub enum ActionName {
    Crash,
    Send,
    Receive,
    Propose,
    Decide,
    /// Output of the underlying Ω detector automaton.
    FdOmega,
    /// Ω output emulated by the extraction algorithm.
    FdEmulated,
    Named(Arc<str>),
}

#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Debug)]
pub enum Payload {
    None,
    Bit(u8),
    Loc(Loc),
    Msg(Message),
}

/// A concrete action. Every action of this crate's systems has a location;
/// `peer` is the other endpoint of sends and receives.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Debug)]
pub struct Action {
    pub name: ActionName,
    pub loc: Loc,
    pub peer: Option<Loc>,
    pub payload: Payload,
}

impl Action {
    pub fn crash(i: Loc) -> Action {
        Action { name: ActionName::Crash, loc: i, peer: None, payload: Payload::None }
    }

    /// `send(m, to)_from`.
    pub fn send(from: Loc, to: Loc, m: Message) -> Action {
        Action { name: ActionName::Send, loc: from, peer: Some(to), payload: Payload::Msg(m) }
    }

    /// `receive(m, from)_to`; its location is the receiver.
    pub fn receive(from: Loc, to: Loc, m: Message) -> Action {
        Action { name: ActionName::Receive, loc: to, peer: Some(from), payload: Payload::Msg(m) }
    }

    /// `FD-Ω(leader)_at`.
    pub fn fd_omega(at: Loc, leader: Loc) -> Action {
        Action { name: ActionName::FdOmega, loc: at, peer: None, payload: Payload::Loc(leader) }
    }

    pub fn fd_emulated(at: Loc, leader: Loc) -> Action {
        Action { name: ActionName::FdEmulated, loc: at, peer: None, payload: Payload::Loc(leader) }
    }

    pub fn propose(i: Loc, v: u8) -> Action {
        Action { name: ActionName::Propose, loc: i, peer: None, payload: Payload::Bit(v) }
    }

    pub fn decide(i: Loc, v: u8) -> Action {
        Action { name: ActionName::Decide, loc: i, peer: None, payload: Payload::Bit(v) }
    }

    pub fn named(name: &str, i: Loc) -> Action {
        Action { name: ActionName::Named(name.into()), loc: i, peer: None, payload: Payload::None }
    }

    pub fn family(&self) -> ActionFamily {
        ActionFamily { name: self.name.clone(), loc: self.loc, peer: self.peer }
    }

    pub fn is_crash(&self) -> bool {
        self.name == ActionName::Crash
    }

    pub fn bit(&self) -> Option<u8> {
        match self.payload {
            Payload::Bit(v) => Some(v),
            _ => None,
        }
    }

    pub fn named_loc(&self) -> Option<Loc> {
        match self.payload {
            Payload::Loc(l) => Some(l),
            _ => None,
        }
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        crate::text::write_action(f, self)
    }
}

/// An action with its payload abstracted away. Signatures and dispatch work
/// at this granularity; payloads are unconstrained.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Debug)]
pub struct ActionFamily {
    pub name: ActionName,
    pub loc: Loc,
    pub peer: Option<Loc>,
}

impl ActionFamily {
    pub fn new(name: ActionName, loc: Loc, peer: Option<Loc>) -> ActionFamily {
        ActionFamily { name, loc, peer }
    }
}

#[derive(Copy, Clone, PartialEq, Eq, Hash, Debug)]
pub enum ActionKind {
    Input,
    Output,
    Internal,
}

#[derive(Clone, Default, PartialEq, Eq, Debug)]
pub struct Signature {
    pub inputs: BTreeSet<ActionFamily>,
    pub outputs: BTreeSet<ActionFamily>,
    pub internals: BTreeSet<ActionFamily>,
}

impl Signature {
    pub fn kind_of(&self, fam: &ActionFamily) -> Option<ActionKind> {
        if self.outputs.contains(fam) {
            Some(ActionKind::Output)
        } else if self.internals.contains(fam) {
            Some(ActionKind::Internal)
        } else if self.inputs.contains(fam) {
            Some(ActionKind::Input)
        } else {
            None
        }
    }

    pub fn is_external(&self, fam: &ActionFamily) -> bool {
        self.inputs.contains(fam) || self.outputs.contains(fam)
    }
}

/// Task names. The tree analysis refers to tasks by these labels.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Debug)]
pub enum TaskLabel {
    Proc(Loc),
    /// Channel from the first location to the second.
    Chan(Loc, Loc),
    Env(Loc, u8),
    Fd(Loc),
    Named(Arc<str>),
}

impl TaskLabel {
    /// The location at which the task's actions occur. Channel actions are
    /// receives, which happen at the destination.
    pub fn loc(&self) -> Option<Loc> {
        match *self {
            TaskLabel::Proc(i) | TaskLabel::Env(i, _) | TaskLabel::Fd(i) => Some(i),
            TaskLabel::Chan(_, j) => Some(j),
            TaskLabel::Named(_) => None,
        }
    }
}

impl fmt::Display for TaskLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TaskLabel::Proc(i) => write!(f, "Proc_{i}"),
            TaskLabel::Chan(i, j) => write!(f, "Chan_{{{i},{j}}}"),
            TaskLabel::Env(i, x) => write!(f, "Env_{{{i},{x}}}"),
            TaskLabel::Fd(i) => write!(f, "FD_{i}"),
            TaskLabel::Named(s) => write!(f, "{s}"),
        }
    }
}

#[derive(Clone, PartialEq, Eq, Debug)]
pub struct Task {
    pub label: TaskLabel,
    pub families: Vec<ActionFamily>,
}

/// A task-deterministic automaton with a unique start state.
///
/// `step` is total on inputs and returns `None` exactly when a locally
/// controlled action is not enabled. `enabled` lists the task's enabled
/// actions; more than one is a task-determinism violation that the kernel
/// reports at dispatch.
pub trait Automaton: Send + Sync {
    type State: Clone + Eq + Hash + fmt::Debug + Send + Sync + 'static;

    fn name(&self) -> String;
    fn signature(&self) -> Signature;
    fn tasks(&self) -> Vec<Task>;
    fn initial(&self) -> Self::State;
    fn enabled(&self, state: &Self::State, task: usize) -> Vec<Action>;
    fn step(&self, state: &Self::State, action: &Action) -> Option<Self::State>;
}

/// Object-safe view of a state value.
pub trait StateValue: Any + fmt::Debug + Send + Sync {
    fn eq_dyn(&self, other: &dyn StateValue) -> bool;
    fn hash_dyn(&self, h: &mut dyn Hasher);
    fn as_any(&self) -> &dyn Any;
}

impl<T: Any + fmt::Debug + Eq + Hash + Send + Sync> StateValue for T {
    fn eq_dyn(&self, other: &dyn StateValue) -> bool {
        other.as_any().downcast_ref::<T>().is_some_and(|o| o == self)
    }

    fn hash_dyn(&self, mut h: &mut dyn Hasher) {
        self.hash(&mut h);
    }

    fn as_any(&self) -> &dyn Any {
        self
    }
}

/// A shared, immutable component state.
#[derive(Clone)]
pub struct StateBox(Arc<dyn StateValue>);

impl StateBox {
    pub fn new<T: StateValue>(v: T) -> StateBox {
        StateBox(Arc::new(v))
    }

    pub fn downcast<T: 'static>(&self) -> Option<&T> {
        self.0.as_any().downcast_ref::<T>()
    }
}

impl PartialEq for StateBox {
    fn eq(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.0, &other.0) || self.0.eq_dyn(&*other.0)
    }
}

impl Eq for StateBox {}

impl Hash for StateBox {
    fn hash<H: Hasher>(&self, state: &mut H) {
        self.0.hash_dyn(state);
    }
}

impl fmt::Debug for StateBox {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

/// Type-erased automaton.
pub trait DynAutomaton: Send + Sync {
    fn name(&self) -> String;
    fn signature(&self) -> Signature;
    fn tasks(&self) -> Vec<Task>;
    fn initial(&self) -> StateBox;
    fn enabled(&self, state: &StateBox, task: usize) -> Vec<Action>;
    fn step(&self, state: &StateBox, action: &Action) -> Option<StateBox>;
}

impl<A: Automaton> DynAutomaton for A {
    fn name(&self) -> String {
        Automaton::name(self)
    }

    fn signature(&self) -> Signature {
        Automaton::signature(self)
    }

    fn tasks(&self) -> Vec<Task> {
        Automaton::tasks(self)
    }

    fn initial(&self) -> StateBox {
        StateBox::new(Automaton::initial(self))
    }

    fn enabled(&self, state: &StateBox, task: usize) -> Vec<Action> {
        Automaton::enabled(self, expect_state::<A>(state), task)
    }

    fn step(&self, state: &StateBox, action: &Action) -> Option<StateBox> {
        Automaton::step(self, expect_state::<A>(state), action).map(StateBox::new)
    }
}

fn expect_state<A: Automaton>(state: &StateBox) -> &A::State {
    state
        .downcast::<A::State>()
        .unwrap_or_else(|| panic!("state slot holds {state:?}, not a state of this component"))
}

pub type Component = Arc<dyn DynAutomaton>;

pub fn component<A: Automaton + 'static>(a: A) -> Component {
    Arc::new(a)
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum KernelError {
    #[error("action {action:?} is an output of both `{first}` and `{second}`")]
    DuplicateOutput { action: ActionFamily, first: String, second: String },
    #[error("component `{component}` declares {action:?} in more than one role")]
    OverlappingSignature { component: String, action: ActionFamily },
    #[error("no component declares {0}")]
    UnknownAction(Action),
    #[error("{action} is not enabled")]
    Disabled { action: Action },
    #[error("component `{component}` refused input {action}")]
    InputRefused { component: String, action: Action },
    #[error("task {task} of `{component}` has {count} enabled actions")]
    TaskDeterminism { component: String, task: TaskLabel, count: usize },
    #[error("external event at turn {turn} lies beyond horizon {horizon}")]
    ExternalBeyondHorizon { turn: usize, horizon: usize },
    #[error("fairness window {window} is smaller than the task count {tasks}")]
    WindowTooSmall { window: usize, tasks: usize },
}

/// The composed state: one slot per component, in composition order.
#[derive(Clone, PartialEq, Eq, Hash, Debug)]
pub struct SystemState {
    parts: Vec<StateBox>,
}

impl SystemState {
    pub fn part(&self, idx: usize) -> &StateBox {
        &self.parts[idx]
    }

    pub fn parts(&self) -> &[StateBox] {
        &self.parts
    }

    /// Downcast a slot; panics on a type mismatch, which is a wiring bug.
    pub fn get<T: 'static>(&self, idx: usize) -> &T {
        self.parts[idx]
            .downcast::<T>()
            .unwrap_or_else(|| panic!("slot {idx} has unexpected type: {:?}", self.parts[idx]))
    }
}

#[derive(Clone, Debug)]
struct ComposedTask {
    component: usize,
    local: usize,
    label: TaskLabel,
    families: Vec<ActionFamily>,
}

/// A composition of components matched by action identity.
pub struct Composition {
    name: String,
    components: Vec<Component>,
    names: Vec<String>,
    dispatch: HashMap<ActionFamily, Vec<(usize, ActionKind)>>,
    tasks: Vec<ComposedTask>,
    signature: Signature,
}

impl fmt::Debug for Composition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Composition").field("name", &self.name).field("components", &self.names).finish()
    }
}

/// Compose components. Fails if two components share an output.
pub fn compose(name: &str, specs: Vec<Component>) -> Result<Composition, KernelError> {
    let mut dispatch: HashMap<ActionFamily, Vec<(usize, ActionKind)>> = HashMap::new();
    let mut owner: HashMap<ActionFamily, usize> = HashMap::new();
    let mut tasks = Vec::new();
    let mut inputs = BTreeSet::new();
    let mut outputs = BTreeSet::new();
    let mut internals = BTreeSet::new();
    let names: Vec<String> = specs.iter().map(|c| c.name()).collect();

    for (idx, spec) in specs.iter().enumerate() {
        let sig = spec.signature();
        let roles = [
            (&sig.inputs, ActionKind::Input),
            (&sig.outputs, ActionKind::Output),
            (&sig.internals, ActionKind::Internal),
        ];
        let mut seen = BTreeSet::new();
        for (set, kind) in roles {
            for fam in set {
                if !seen.insert(fam.clone()) {
                    return Err(KernelError::OverlappingSignature { component: names[idx].clone(), action: fam.clone() });
                }
                if kind != ActionKind::Input {
                    if let Some(&prev) = owner.get(fam) {
                        return Err(KernelError::DuplicateOutput {
                            action: fam.clone(),
                            first: names[prev].clone(),
                            second: names[idx].clone(),
                        });
                    }
                    owner.insert(fam.clone(), idx);
                }
                dispatch.entry(fam.clone()).or_default().push((idx, kind));
            }
        }
        outputs.extend(sig.outputs.iter().cloned());
        internals.extend(sig.internals.iter().cloned());
        inputs.extend(sig.inputs.iter().cloned());
        for (local, t) in spec.tasks().into_iter().enumerate() {
            tasks.push(ComposedTask { component: idx, local, label: t.label, families: t.families });
        }
    }
    inputs.retain(|f| !owner.contains_key(f));
    // Internal actions shared with another component would be visible; the
    // components in this crate never do that, so keep the simple reading.
    Ok(Composition {
        name: name.to_string(),
        components: specs,
        names,
        dispatch,
        tasks,
        signature: Signature { inputs, outputs, internals },
    })
}

impl Composition {
    pub fn components(&self) -> &[Component] {
        &self.components
    }

    pub fn component_name(&self, idx: usize) -> &str {
        &self.names[idx]
    }

    pub fn task_count(&self) -> usize {
        self.tasks.len()
    }

    pub fn task_label(&self, task: usize) -> &TaskLabel {
        &self.tasks[task].label
    }

    pub fn task_labels(&self) -> Vec<TaskLabel> {
        self.tasks.iter().map(|t| t.label.clone()).collect()
    }

    /// Index of the component that owns a task.
    pub fn task_component(&self, task: usize) -> usize {
        self.tasks[task].component
    }

    pub fn initial_state(&self) -> SystemState {
        SystemState { parts: self.components.iter().map(|c| c.initial()).collect() }
    }

    pub fn sig(&self) -> &Signature {
        &self.signature
    }

    /// The enabled action of a task, checking task determinism.
    pub fn enabled_action(&self, state: &SystemState, task: usize) -> Result<Option<Action>, KernelError> {
        let t = &self.tasks[task];
        let mut acts = self.components[t.component].enabled(&state.parts[t.component], t.local);
        match acts.len() {
            0 => Ok(None),
            1 => Ok(acts.pop()),
            count => Err(KernelError::TaskDeterminism {
                component: self.names[t.component].clone(),
                task: t.label.clone(),
                count,
            }),
        }
    }

    /// Perform `action`, stepping every component that declares it.
    pub fn apply(&self, state: &SystemState, action: &Action) -> Result<SystemState, KernelError> {
        let fam = action.family();
        let Some(parts) = self.dispatch.get(&fam) else {
            return Err(KernelError::UnknownAction(action.clone()));
        };
        let mut next = state.clone();
        for &(idx, kind) in parts {
            match self.components[idx].step(&state.parts[idx], action) {
                Some(s) => next.parts[idx] = s,
                None if kind == ActionKind::Input => {
                    return Err(KernelError::InputRefused { component: self.names[idx].clone(), action: action.clone() })
                }
                None => return Err(KernelError::Disabled { action: action.clone() }),
            }
        }
        Ok(next)
    }

    pub fn declares(&self, fam: &ActionFamily) -> bool {
        self.dispatch.contains_key(fam)
    }

    pub fn families(&self) -> impl Iterator<Item = &ActionFamily> {
        self.dispatch.keys()
    }

    /// Families declared by one component.
    pub fn component_signature(&self, idx: usize) -> Signature {
        self.components[idx].signature()
    }
}

impl Automaton for Composition {
    type State = SystemState;

    fn name(&self) -> String {
        self.name.clone()
    }

    fn signature(&self) -> Signature {
        self.signature.clone()
    }

    fn tasks(&self) -> Vec<Task> {
        self.tasks.iter().map(|t| Task { label: t.label.clone(), families: t.families.clone() }).collect()
    }

    fn initial(&self) -> SystemState {
        self.initial_state()
    }

    fn enabled(&self, state: &SystemState, task: usize) -> Vec<Action> {
        let t = &self.tasks[task];
        self.components[t.component].enabled(&state.parts[t.component], t.local)
    }

    fn step(&self, state: &SystemState, action: &Action) -> Option<SystemState> {
        self.apply(state, action).ok()
    }
}

/// Alternating states and events; `states.len() == events.len() + 1`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Execution {
    pub states: Vec<SystemState>,
    pub events: Vec<Action>,
}

impl Execution {
    pub fn null(initial: SystemState) -> Execution {
        Execution { states: vec![initial], events: Vec::new() }
    }

    pub fn last_state(&self) -> &SystemState {
        self.states.last().expect("an execution has at least one state")
    }

    pub fn push(&mut self, action: Action, state: SystemState) {
        self.events.push(action);
        self.states.push(state);
    }
}

/// Ordered subsequence of events satisfying `keep`.
pub fn project(events: &[Action], keep: impl Fn(&Action) -> bool) -> Vec<Action> {
    events.iter().filter(|a| keep(a)).cloned().collect()
}

#[derive(Copy, Clone, PartialEq, Eq, Debug)]
pub enum SchedulerMode {
    RoundRobin,
    /// Uniform random choice under a fairness window; `None` means four times
    /// the task count.
    SeededRandom { window: Option<usize> },
}

#[derive(Copy, Clone, PartialEq, Eq, Debug)]
pub struct SchedulerPolicy {
    pub mode: SchedulerMode,
    pub seed: u64,
    pub horizon: usize,
}

impl SchedulerPolicy {
    pub fn round_robin(horizon: usize) -> SchedulerPolicy {
        SchedulerPolicy { mode: SchedulerMode::RoundRobin, seed: 0, horizon }
    }

    pub fn seeded(seed: u64, horizon: usize) -> SchedulerPolicy {
        SchedulerPolicy { mode: SchedulerMode::SeededRandom { window: None }, seed, horizon }
    }

    /// The fairness bound B for a system with `tasks` tasks.
    pub fn window(&self, tasks: usize) -> usize {
        match self.mode {
            SchedulerMode::RoundRobin => tasks,
            SchedulerMode::SeededRandom { window } => window.unwrap_or(4 * tasks),
        }
    }
}

/// An event injected before the scheduled task of turn `turn`.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct External {
    pub turn: usize,
    pub action: Action,
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct Skip {
    pub turn: usize,
    pub task: usize,
}

/// A finished run: the execution plus the scheduler's bookkeeping.
#[derive(Clone, Debug)]
pub struct Run {
    pub execution: Execution,
    /// Task scheduled at each turn.
    pub schedule: Vec<usize>,
    pub skips: Vec<Skip>,
    /// For each event, the turn at which it happened.
    pub event_turns: Vec<usize>,
}

impl Run {
    pub fn trace(&self, system: &Composition) -> Vec<Action> {
        project(&self.execution.events, |a| system.sig().is_external(&a.family()))
    }
}

/// Picks one task per turn.
struct Picker {
    mode: SchedulerMode,
    window: usize,
    rng: ChaCha8Rng,
    last: Vec<Option<usize>>,
}

impl Picker {
    fn pick(&mut self, turn: usize) -> usize {
        let tasks = self.last.len();
        let choice = match self.mode {
            SchedulerMode::RoundRobin => turn % tasks,
            SchedulerMode::SeededRandom { .. } => {
                let candidate = self.rng.gen_range(0..tasks);
                if self.feasible_without(candidate, turn) {
                    candidate
                } else {
                    self.earliest_deadline()
                }
            }
        };
        self.last[choice] = Some(turn);
        choice
    }

    // Task t must run by deadline(t): its last turn plus the window, or
    // window-1 if it never ran.
    fn deadline(&self, t: usize) -> usize {
        match self.last[t] {
            Some(l) => l + self.window,
            None => self.window - 1,
        }
    }

    fn earliest_deadline(&self) -> usize {
        (0..self.last.len()).min_by_key(|&t| (self.deadline(t), t)).expect("at least one task")
    }

    /// Can every other task still meet its deadline if `chosen` runs now?
    fn feasible_without(&self, chosen: usize, turn: usize) -> bool {
        let mut deadlines: Vec<usize> = (0..self.last.len()).filter(|&t| t != chosen).map(|t| self.deadline(t)).collect();
        deadlines.sort_unstable();
        deadlines.iter().enumerate().all(|(m, &d)| d >= turn + 1 + m)
    }
}

/// Run `system` fairly for `policy.horizon` turns.
///
/// Externals scheduled for turn t are applied, in listed order, before the
/// task scheduled at turn t. A turn whose task has nothing enabled is
/// recorded as a skip.
pub fn run_fair(system: &Composition, policy: &SchedulerPolicy, externals: &[External]) -> Result<Run, KernelError> {
    if let Some(e) = externals.iter().find(|e| e.turn >= policy.horizon) {
        return Err(KernelError::ExternalBeyondHorizon { turn: e.turn, horizon: policy.horizon });
    }
    let mut ext: Vec<&External> = externals.iter().collect();
    ext.sort_by_key(|e| e.turn);
    let mut ext = ext.into_iter().peekable();

    let tasks = system.task_count();
    let window = policy.window(tasks);
    if tasks > 0 && window < tasks {
        return Err(KernelError::WindowTooSmall { window, tasks });
    }
    let mut picker = Picker {
        mode: policy.mode,
        window: window.max(1),
        rng: ChaCha8Rng::seed_from_u64(policy.seed),
        last: vec![None; tasks],
    };

    let mut run = Run {
        execution: Execution::null(system.initial_state()),
        schedule: Vec::with_capacity(policy.horizon),
        skips: Vec::new(),
        event_turns: Vec::new(),
    };
    for turn in 0..policy.horizon {
        while let Some(e) = ext.next_if(|e| e.turn == turn) {
            let next = system.apply(run.execution.last_state(), &e.action)?;
            run.execution.push(e.action.clone(), next);
            run.event_turns.push(turn);
        }
        if tasks == 0 {
            continue;
        }
        let task = picker.pick(turn);
        run.schedule.push(task);
        match system.enabled_action(run.execution.last_state(), task)? {
            Some(a) => {
                let next = system.apply(run.execution.last_state(), &a)?;
                run.execution.push(a, next);
                run.event_turns.push(turn);
            }
            None => run.skips.push(Skip { turn, task }),
        }
    }
    Ok(run)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// A counter that can tick up to a limit; ticks are its only output.
    #[derive(Clone)]
    struct Ticker {
        at: Loc,
        limit: u8,
    }

    impl Automaton for Ticker {
        type State = u8;

        fn name(&self) -> String {
            format!("ticker{}", self.at)
        }

        fn signature(&self) -> Signature {
            let mut s = Signature::default();
            s.outputs.insert(ActionFamily::new(ActionName::Named("tick".into()), self.at, None));
            s.inputs.insert(ActionFamily::new(ActionName::Named("reset".into()), self.at, None));
            s
        }

        fn tasks(&self) -> Vec<Task> {
            vec![Task {
                label: TaskLabel::Proc(self.at),
                families: vec![ActionFamily::new(ActionName::Named("tick".into()), self.at, None)],
            }]
        }

        fn initial(&self) -> u8 {
            0
        }

        fn enabled(&self, s: &u8, _task: usize) -> Vec<Action> {
            if *s < self.limit {
                vec![Action::named("tick", self.at)]
            } else {
                vec![]
            }
        }

        fn step(&self, s: &u8, a: &Action) -> Option<u8> {
            match &a.name {
                ActionName::Named(n) if &**n == "tick" => (*s < self.limit).then_some(s + 1),
                ActionName::Named(n) if &**n == "reset" => Some(0),
                _ => None,
            }
        }
    }

    #[test]
    fn empty_composition_has_one_state_and_nothing_to_do() {
        let c = compose("empty", vec![]).unwrap();
        assert_eq!(c.task_count(), 0);
        assert!(c.initial_state().parts().is_empty());
        let run = run_fair(&c, &SchedulerPolicy::round_robin(5), &[]).unwrap();
        assert!(run.execution.events.is_empty());
    }

    #[test]
    fn duplicate_outputs_are_rejected_with_both_names() {
        let t = Ticker { at: Loc(1), limit: 1 };
        let err = compose("dup", vec![component(t.clone()), component(t)]).unwrap_err();
        match err {
            KernelError::DuplicateOutput { first, second, .. } => {
                assert_eq!(first, "ticker1");
                assert_eq!(second, "ticker1");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn disabled_output_is_a_step_error() {
        let c = compose("one", vec![component(Ticker { at: Loc(1), limit: 0 })]).unwrap();
        let err = c.apply(&c.initial_state(), &Action::named("tick", Loc(1))).unwrap_err();
        assert!(matches!(err, KernelError::Disabled { .. }));
    }

    #[test]
    fn horizon_zero_is_the_null_execution() {
        let c = compose("one", vec![component(Ticker { at: Loc(1), limit: 3 })]).unwrap();
        let run = run_fair(&c, &SchedulerPolicy::round_robin(0), &[]).unwrap();
        assert_eq!(run.execution.states.len(), 1);
        assert!(run.execution.events.is_empty());
    }

    #[test]
    fn externals_beyond_horizon_are_configuration_errors() {
        let c = compose("one", vec![component(Ticker { at: Loc(1), limit: 3 })]).unwrap();
        let ext = [External { turn: 4, action: Action::named("reset", Loc(1)) }];
        let err = run_fair(&c, &SchedulerPolicy::round_robin(4), &ext).unwrap_err();
        assert_eq!(err, KernelError::ExternalBeyondHorizon { turn: 4, horizon: 4 });
    }

    #[test]
    fn skips_are_logged_outside_the_execution() {
        let c = compose("one", vec![component(Ticker { at: Loc(1), limit: 2 })]).unwrap();
        let run = run_fair(&c, &SchedulerPolicy::round_robin(5), &[]).unwrap();
        assert_eq!(run.execution.events.len(), 2);
        assert_eq!(run.skips.len(), 3);
        assert_eq!(run.schedule.len(), 5);
    }

    #[test]
    fn externals_precede_the_scheduled_task() {
        let c = compose("one", vec![component(Ticker { at: Loc(1), limit: 1 })]).unwrap();
        let ext = [External { turn: 2, action: Action::named("reset", Loc(1)) }];
        let run = run_fair(&c, &SchedulerPolicy::round_robin(4), &ext).unwrap();
        let names: Vec<String> = run.execution.events.iter().map(|a| a.to_string()).collect();
        assert_eq!(names, ["tick_1", "reset_1", "tick_1"]);
        assert_eq!(run.event_turns, [0, 2, 2]);
    }

    #[test]
    fn unaffected_components_keep_their_state() {
        let c = compose(
            "two",
            vec![component(Ticker { at: Loc(1), limit: 3 }), component(Ticker { at: Loc(2), limit: 3 })],
        )
        .unwrap();
        let s0 = c.initial_state();
        let s1 = c.apply(&s0, &Action::named("tick", Loc(1))).unwrap();
        assert_eq!(s1.get::<u8>(0), &1);
        assert_eq!(s1.part(1), s0.part(1));
    }

    #[test]
    fn seeded_scheduler_respects_its_window() {
        let specs: Vec<Component> = (1..=5).map(|i| component(Ticker { at: Loc(i), limit: 200 })).collect();
        let c = compose("five", specs).unwrap();
        for seed in 0..20 {
            let policy = SchedulerPolicy { mode: SchedulerMode::SeededRandom { window: Some(7) }, seed, horizon: 300 };
            let run = run_fair(&c, &policy, &[]).unwrap();
            for t in 0..5 {
                let turns: Vec<usize> =
                    run.schedule.iter().enumerate().filter(|(_, &x)| x == t).map(|(i, _)| i).collect();
                assert!(turns[0] < 7);
                assert!(turns.windows(2).all(|w| w[1] - w[0] <= 7), "seed {seed} task {t}: {turns:?}");
                assert!(turns.len() >= 300 / 7);
            }
        }
    }

    #[test]
    fn window_smaller_than_task_count_is_rejected() {
        let specs: Vec<Component> = (1..=3).map(|i| component(Ticker { at: Loc(i), limit: 1 })).collect();
        let c = compose("three", specs).unwrap();
        let policy = SchedulerPolicy { mode: SchedulerMode::SeededRandom { window: Some(2) }, seed: 0, horizon: 5 };
        assert_eq!(run_fair(&c, &policy, &[]).unwrap_err(), KernelError::WindowTooSmall { window: 2, tasks: 3 });
    }

    #[test]
    fn runs_replay_bit_for_bit() {
        let specs: Vec<Component> = (1..=3).map(|i| component(Ticker { at: Loc(i), limit: 4 })).collect();
        let c = compose("three", specs).unwrap();
        let p = SchedulerPolicy::seeded(99, 40);
        let a = run_fair(&c, &p, &[]).unwrap();
        let b = run_fair(&c, &p, &[]).unwrap();
        assert_eq!(a.execution, b.execution);
        assert_eq!(a.schedule, b.schedule);
    }

    #[test]
    fn projection_is_idempotent() {
        let evs = vec![Action::crash(Loc(1)), Action::named("tick", Loc(2)), Action::crash(Loc(2))];
        let once = project(&evs, |a| a.is_crash());
        assert_eq!(project(&once, |a| a.is_crash() && a.loc == Loc(2)), project(&evs, |a| a.is_crash() && a.loc == Loc(2)));
        assert!(project(&[], |_| true).is_empty());
    }
}
