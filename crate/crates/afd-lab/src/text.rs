//! Plain-text renderings of actions shared by the trace, observation and
//! report formats.

use std::fmt;

use crate::ioa::{Action, ActionName, Loc, Payload};

/// Action text without its location, e.g. `omega(2)` or `propose(1)`.
pub fn action_body(a: &Action) -> String {
    match (&a.name, &a.payload) {
        (ActionName::Crash, _) => "crash".into(),
        (ActionName::FdOmega, Payload::Loc(j)) => format!("omega({j})"),
        (ActionName::FdEmulated, Payload::Loc(j)) => format!("omega*({j})"),
        (ActionName::Propose, Payload::Bit(v)) => format!("propose({v})"),
        (ActionName::Decide, Payload::Bit(v)) => format!("decide({v})"),
        (ActionName::Send, Payload::Msg(m)) => format!("send({m},{})", a.peer.map_or(0, |p| p.0)),
        (ActionName::Receive, Payload::Msg(m)) => format!("receive({m},{})", a.peer.map_or(0, |p| p.0)),
        (ActionName::Named(n), _) => n.to_string(),
        (name, payload) => format!("{name:?}{payload:?}"),
    }
}

pub(crate) fn write_action(f: &mut fmt::Formatter<'_>, a: &Action) -> fmt::Result {
    write!(f, "{}_{}", action_body(a), a.loc)
}

/// Parse an action body located at `loc`. Only detector outputs, crashes,
/// consensus inputs/outputs and bare names have a text form; messages do
/// not appear in any file format.
pub fn parse_action_body(body: &str, loc: Loc) -> Result<Action, String> {
    let call = |prefix: &str| -> Option<&str> { body.strip_prefix(prefix)?.strip_suffix(')') };
    if body == "crash" {
        return Ok(Action::crash(loc));
    }
    if let Some(arg) = call("omega(") {
        return parse_loc(arg).map(|j| Action::fd_omega(loc, j));
    }
    if let Some(arg) = call("omega*(") {
        return parse_loc(arg).map(|j| Action::fd_emulated(loc, j));
    }
    if let Some(arg) = call("propose(") {
        return parse_bit(arg).map(|v| Action::propose(loc, v));
    }
    if let Some(arg) = call("decide(") {
        return parse_bit(arg).map(|v| Action::decide(loc, v));
    }
    if !body.is_empty() && body.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_') {
        return Ok(Action::named(body, loc));
    }
    Err(format!("unrecognised action `{body}`"))
}

pub fn parse_loc(s: &str) -> Result<Loc, String> {
    match s.trim().parse::<u8>() {
        Ok(0) | Err(_) => Err(format!("`{s}` is not a location")),
        Ok(i) => Ok(Loc(i)),
    }
}

pub fn parse_bit(s: &str) -> Result<u8, String> {
    match s.trim() {
        "0" => Ok(0),
        "1" => Ok(1),
        other => Err(format!("`{other}` is not a binary value")),
    }
}
