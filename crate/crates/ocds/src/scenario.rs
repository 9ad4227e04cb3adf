//! Scenario descriptions and their plain-text format.
//!
//! A scenario declares peers (store kind plus gateway predicates), links,
//! initial store contents, and a time-ordered script of operations, link
//! failures, repairs, and assertions. One statement per line, `#` starts a
//! comment:
//!
//! ```text
//! peer <id> store=(sorted|bst) offer="<pred>" accept="<pred>"
//! link <id> <id> [latency=<int>]
//! init <id> {e1,e2,...}
//! at <tick|END> op <id> (insert|delete) <int>
//! at <tick|END> partition <id> <id>
//! at <tick|END> heal <id> <id>
//! at <tick|END> assert-consistent <id> <id>
//! at <tick|END> assert-state <id> {e1,...}
//! at <tick|END> assert-shared <id> <id> {e1,...}
//! ```
//!
//! The predicate grammar is described at [`Predicate::parse`]. Assertions at
//! the reserved tick `END` evaluate after the network has gone quiescent.
//! Events must be listed in nondecreasing time order; events at the same tick
//! run in file order.

use std::collections::BTreeSet;
use std::fmt;

use thiserror::Error;

use crate::lens::{format_set, Predicate, PredicateLens};
use crate::op::{Element, OpKind, PeerId};
use crate::store::StoreKind;

/// A peer declaration: identity, store implementation, gateway lens applied
/// to every link, and initial content.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct PeerSpec {
    pub id: PeerId,
    pub store: StoreKind,
    pub lens: PredicateLens,
    pub initial: BTreeSet<Element>,
}

/// An undirected link with per-direction FIFO delivery.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct LinkSpec {
    pub a: PeerId,
    pub b: PeerId,
    pub latency: u64,
}

impl LinkSpec {
    /// Order-insensitive endpoint key.
    pub fn key(&self) -> (PeerId, PeerId) {
        normalize_pair(&self.a, &self.b)
    }

    pub fn connects(&self, x: &PeerId, y: &PeerId) -> bool {
        (&self.a == x && &self.b == y) || (&self.a == y && &self.b == x)
    }
}

pub fn normalize_pair(x: &PeerId, y: &PeerId) -> (PeerId, PeerId) {
    if x <= y {
        (x.clone(), y.clone())
    } else {
        (y.clone(), x.clone())
    }
}

/// When a scripted event fires: at a tick, or after quiescence.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Debug)]
pub enum EventTime {
    Tick(u64),
    End,
}

impl fmt::Display for EventTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EventTime::Tick(t) => write!(f, "{t}"),
            EventTime::End => f.write_str("END"),
        }
    }
}

#[derive(Clone, PartialEq, Eq, Debug)]
pub enum Action {
    Op {
        peer: PeerId,
        kind: OpKind,
        element: Element,
    },
    Partition {
        a: PeerId,
        b: PeerId,
    },
    Heal {
        a: PeerId,
        b: PeerId,
    },
    AssertConsistent {
        a: PeerId,
        b: PeerId,
    },
    AssertState {
        peer: PeerId,
        expected: BTreeSet<Element>,
    },
    AssertShared {
        a: PeerId,
        b: PeerId,
        expected: BTreeSet<Element>,
    },
}

impl Action {
    pub fn is_assertion(&self) -> bool {
        matches!(
            self,
            Action::AssertConsistent { .. } | Action::AssertState { .. } | Action::AssertShared { .. }
        )
    }
}

#[derive(Clone, PartialEq, Eq, Debug)]
pub struct SimEvent {
    pub at: EventTime,
    pub action: Action,
}

/// A complete scripted scenario.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct Scenario {
    pub peers: Vec<PeerSpec>,
    pub links: Vec<LinkSpec>,
    pub events: Vec<SimEvent>,
    pub seed: u64,
}

impl Scenario {
    pub fn peer(&self, id: &PeerId) -> Option<&PeerSpec> {
        self.peers.iter().find(|p| &p.id == id)
    }

    pub fn link_between(&self, x: &PeerId, y: &PeerId) -> Option<&LinkSpec> {
        self.links.iter().find(|l| l.connects(x, y))
    }

    pub fn assertion_count(&self) -> usize {
        self.events.iter().filter(|e| e.action.is_assertion()).count()
    }

    /// Structural validation for programmatically built scenarios. The text
    /// parser performs the same checks with line positions.
    pub fn validate(&self) -> Result<(), ScenarioError> {
        let err = |message: String| ScenarioError { line: 0, message };
        let mut seen = BTreeSet::new();
        for p in &self.peers {
            if !seen.insert(p.id.clone()) {
                return Err(err(format!("duplicate peer {}", p.id)));
            }
        }
        let known = |id: &PeerId| seen.contains(id);
        let mut link_keys = BTreeSet::new();
        for l in &self.links {
            if l.a == l.b {
                return Err(err(format!("link from {} to itself", l.a)));
            }
            if !known(&l.a) || !known(&l.b) {
                return Err(err(format!("link references undeclared peer {} or {}", l.a, l.b)));
            }
            if l.latency == 0 {
                return Err(err("link latency must be at least 1".into()));
            }
            if !link_keys.insert(l.key()) {
                return Err(err(format!("duplicate link {} {}", l.a, l.b)));
            }
        }
        let mut last = EventTime::Tick(0);
        for ev in &self.events {
            if ev.at < last {
                return Err(err(format!("event at {} out of time order", ev.at)));
            }
            last = ev.at;
            match &ev.action {
                Action::Op { peer, kind, .. } => {
                    if !known(peer) {
                        return Err(err(format!("op references undeclared peer {peer}")));
                    }
                    if *kind == OpKind::Identity {
                        return Err(err("scripted operations must insert or delete".into()));
                    }
                }
                Action::AssertState { peer, .. } => {
                    if !known(peer) {
                        return Err(err(format!("assert-state references undeclared peer {peer}")));
                    }
                }
                Action::Partition { a, b }
                | Action::Heal { a, b }
                | Action::AssertConsistent { a, b }
                | Action::AssertShared { a, b, .. } => {
                    if !link_keys.contains(&normalize_pair(a, b)) {
                        return Err(err(format!("no link between {a} and {b}")));
                    }
                }
            }
        }
        Ok(())
    }

    /// Canonical text form; parsing it back yields an equal scenario.
    pub fn to_canonical(&self) -> String {
        let mut out = String::new();
        for p in &self.peers {
            out.push_str(&format!(
                "peer {} store={} offer=\"{}\" accept=\"{}\"\n",
                p.id,
                p.store,
                p.lens.offer(),
                p.lens.accept()
            ));
        }
        for l in &self.links {
            out.push_str(&format!("link {} {} latency={}\n", l.a, l.b, l.latency));
        }
        for p in &self.peers {
            if !p.initial.is_empty() {
                out.push_str(&format!("init {} {}\n", p.id, format_set(&p.initial)));
            }
        }
        for ev in &self.events {
            out.push_str(&format!("at {} ", ev.at));
            match &ev.action {
                Action::Op { peer, kind, element } => {
                    out.push_str(&format!("op {peer} {kind} {element}\n"));
                }
                Action::Partition { a, b } => out.push_str(&format!("partition {a} {b}\n")),
                Action::Heal { a, b } => out.push_str(&format!("heal {a} {b}\n")),
                Action::AssertConsistent { a, b } => {
                    out.push_str(&format!("assert-consistent {a} {b}\n"));
                }
                Action::AssertState { peer, expected } => {
                    out.push_str(&format!("assert-state {peer} {}\n", format_set(expected)));
                }
                Action::AssertShared { a, b, expected } => {
                    out.push_str(&format!("assert-shared {a} {b} {}\n", format_set(expected)));
                }
            }
        }
        out
    }
}

#[derive(Error, Debug, Clone, PartialEq, Eq)]
#[error("line {line}: {message}")]
pub struct ScenarioError {
    /// 1-based source line, or 0 for errors without a position.
    pub line: usize,
    pub message: String,
}

/// Parses the scenario text format.
pub fn parse_scenario(text: &str) -> Result<Scenario, ScenarioError> {
    let mut scenario = Scenario {
        peers: Vec::new(),
        links: Vec::new(),
        events: Vec::new(),
        seed: 0,
    };
    let mut last_time = EventTime::Tick(0);

    for (idx, raw_line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let fail = |message: String| ScenarioError { line: line_no, message };
        let tokens = split_line(raw_line, line_no)?;
        if tokens.is_empty() {
            continue;
        }
        match tokens[0].as_str() {
            "peer" => {
                let p = parse_peer(&tokens, line_no)?;
                if scenario.peer(&p.id).is_some() {
                    return Err(fail(format!("duplicate peer {}", p.id)));
                }
                scenario.peers.push(p);
            }
            "link" => {
                let l = parse_link(&tokens, line_no, &scenario)?;
                if scenario.link_between(&l.a, &l.b).is_some() {
                    return Err(fail(format!("duplicate link {} {}", l.a, l.b)));
                }
                scenario.links.push(l);
            }
            "init" => {
                if tokens.len() < 3 {
                    return Err(fail("usage: init <peer> {e1,e2,...}".into()));
                }
                let id = parse_peer_ref(&tokens[1], line_no, &scenario)?;
                let set = parse_element_set(&tokens[2..].join(""), line_no)?;
                let peer = scenario
                    .peers
                    .iter_mut()
                    .find(|p| p.id == id)
                    .expect("checked by parse_peer_ref");
                if !peer.initial.is_empty() {
                    return Err(fail(format!("peer {id} already initialized")));
                }
                peer.initial = set;
            }
            "at" => {
                let ev = parse_event(&tokens, line_no, &scenario)?;
                if ev.at < last_time {
                    return Err(fail(format!("event at {} out of time order", ev.at)));
                }
                last_time = ev.at;
                scenario.events.push(ev);
            }
            other => {
                return Err(fail(format!(
                    "unknown statement {other:?} (expected peer, link, init, or at)"
                )));
            }
        }
    }
    Ok(scenario)
}

/// Splits a line into whitespace-separated tokens, honoring double quotes
/// (quoted text joins the current token verbatim) and `#` comments.
fn split_line(line: &str, line_no: usize) -> Result<Vec<String>, ScenarioError> {
    let mut tokens = Vec::new();
    let mut current = String::new();
    let mut chars = line.chars();
    let mut started = false;
    loop {
        match chars.next() {
            None => break,
            Some('#') => break,
            Some('"') => {
                started = true;
                loop {
                    match chars.next() {
                        Some('"') => break,
                        Some(c) => current.push(c),
                        None => {
                            return Err(ScenarioError {
                                line: line_no,
                                message: "unterminated quote".into(),
                            })
                        }
                    }
                }
            }
            Some(c) if c.is_whitespace() => {
                if started {
                    tokens.push(std::mem::take(&mut current));
                    started = false;
                }
            }
            Some(c) => {
                started = true;
                current.push(c);
            }
        }
    }
    if started {
        tokens.push(current);
    }
    Ok(tokens)
}

fn parse_peer(tokens: &[String], line_no: usize) -> Result<PeerSpec, ScenarioError> {
    let fail = |message: String| ScenarioError { line: line_no, message };
    if tokens.len() != 5 {
        return Err(fail(
            "usage: peer <id> store=(sorted|bst) offer=\"<pred>\" accept=\"<pred>\"".into(),
        ));
    }
    let id = PeerId::new(tokens[1].clone()).map_err(|e| fail(e.to_string()))?;
    let mut store = None;
    let mut offer = None;
    let mut accept = None;
    for tok in &tokens[2..] {
        let (key, value) = tok
            .split_once('=')
            .ok_or_else(|| fail(format!("expected key=value, found {tok:?}")))?;
        match key {
            "store" => {
                store = Some(value.parse::<StoreKind>().map_err(&fail)?);
            }
            "offer" => {
                offer = Some(Predicate::parse(value).map_err(|e| fail(format!("offer: {e}")))?);
            }
            "accept" => {
                accept = Some(Predicate::parse(value).map_err(|e| fail(format!("accept: {e}")))?);
            }
            other => return Err(fail(format!("unknown peer attribute {other:?}"))),
        }
    }
    Ok(PeerSpec {
        id,
        store: store.ok_or_else(|| fail("peer is missing store=".into()))?,
        lens: PredicateLens::new(
            offer.ok_or_else(|| fail("peer is missing offer=".into()))?,
            accept.ok_or_else(|| fail("peer is missing accept=".into()))?,
        ),
        initial: BTreeSet::new(),
    })
}

fn parse_link(
    tokens: &[String],
    line_no: usize,
    scenario: &Scenario,
) -> Result<LinkSpec, ScenarioError> {
    let fail = |message: String| ScenarioError { line: line_no, message };
    if tokens.len() < 3 || tokens.len() > 4 {
        return Err(fail("usage: link <id> <id> [latency=<int>]".into()));
    }
    let a = parse_peer_ref(&tokens[1], line_no, scenario)?;
    let b = parse_peer_ref(&tokens[2], line_no, scenario)?;
    if a == b {
        return Err(fail(format!("link from {a} to itself")));
    }
    let latency = match tokens.get(3) {
        None => 1,
        Some(tok) => {
            let value = tok
                .strip_prefix("latency=")
                .ok_or_else(|| fail(format!("expected latency=<int>, found {tok:?}")))?;
            let latency: u64 = value
                .parse()
                .map_err(|_| fail(format!("bad latency {value:?}")))?;
            if latency == 0 {
                return Err(fail("link latency must be at least 1".into()));
            }
            latency
        }
    };
    Ok(LinkSpec { a, b, latency })
}

fn parse_event(
    tokens: &[String],
    line_no: usize,
    scenario: &Scenario,
) -> Result<SimEvent, ScenarioError> {
    let fail = |message: String| ScenarioError { line: line_no, message };
    if tokens.len() < 3 {
        return Err(fail("usage: at <tick|END> <action> ...".into()));
    }
    let at = if tokens[1] == "END" {
        EventTime::End
    } else {
        EventTime::Tick(
            tokens[1]
                .parse()
                .map_err(|_| fail(format!("bad tick {:?}", tokens[1])))?,
        )
    };
    let require_link = |a: &PeerId, b: &PeerId| -> Result<(), ScenarioError> {
        if scenario.link_between(a, b).is_none() {
            Err(fail(format!("no link between {a} and {b}")))
        } else {
            Ok(())
        }
    };
    let action = match tokens[2].as_str() {
        "op" => {
            if tokens.len() != 6 {
                return Err(fail("usage: at <t> op <peer> (insert|delete) <int>".into()));
            }
            let peer = parse_peer_ref(&tokens[3], line_no, scenario)?;
            let kind = match tokens[4].as_str() {
                "insert" => OpKind::Insert,
                "delete" => OpKind::Delete,
                other => return Err(fail(format!("unknown operation {other:?}"))),
            };
            let element = Element(
                tokens[5]
                    .parse()
                    .map_err(|_| fail(format!("bad element {:?}", tokens[5])))?,
            );
            Action::Op { peer, kind, element }
        }
        "partition" | "heal" | "assert-consistent" => {
            if tokens.len() != 5 {
                return Err(fail(format!("usage: at <t> {} <peer> <peer>", tokens[2])));
            }
            let a = parse_peer_ref(&tokens[3], line_no, scenario)?;
            let b = parse_peer_ref(&tokens[4], line_no, scenario)?;
            require_link(&a, &b)?;
            match tokens[2].as_str() {
                "partition" => Action::Partition { a, b },
                "heal" => Action::Heal { a, b },
                _ => Action::AssertConsistent { a, b },
            }
        }
        "assert-state" => {
            if tokens.len() < 5 {
                return Err(fail("usage: at <t> assert-state <peer> {e1,...}".into()));
            }
            let peer = parse_peer_ref(&tokens[3], line_no, scenario)?;
            let expected = parse_element_set(&tokens[4..].join(""), line_no)?;
            Action::AssertState { peer, expected }
        }
        "assert-shared" => {
            if tokens.len() < 6 {
                return Err(fail("usage: at <t> assert-shared <peer> <peer> {e1,...}".into()));
            }
            let a = parse_peer_ref(&tokens[3], line_no, scenario)?;
            let b = parse_peer_ref(&tokens[4], line_no, scenario)?;
            require_link(&a, &b)?;
            let expected = parse_element_set(&tokens[5..].join(""), line_no)?;
            Action::AssertShared { a, b, expected }
        }
        other => return Err(fail(format!("unknown action {other:?}"))),
    };
    Ok(SimEvent { at, action })
}

fn parse_peer_ref(
    token: &str,
    line_no: usize,
    scenario: &Scenario,
) -> Result<PeerId, ScenarioError> {
    let id = PeerId::new(token).map_err(|e| ScenarioError {
        line: line_no,
        message: e.to_string(),
    })?;
    if scenario.peer(&id).is_none() {
        return Err(ScenarioError {
            line: line_no,
            message: format!("undeclared peer {id}"),
        });
    }
    Ok(id)
}

fn parse_element_set(text: &str, line_no: usize) -> Result<BTreeSet<Element>, ScenarioError> {
    let fail = |message: String| ScenarioError { line: line_no, message };
    let inner = text
        .strip_prefix('{')
        .and_then(|t| t.strip_suffix('}'))
        .ok_or_else(|| fail(format!("expected {{e1,e2,...}}, found {text:?}")))?;
    let mut set = BTreeSet::new();
    for part in inner.split(',') {
        let part = part.trim();
        if part.is_empty() {
            continue;
        }
        let value: i64 = part
            .parse()
            .map_err(|_| fail(format!("bad element {part:?}")))?;
        set.insert(Element(value));
    }
    Ok(set)
}
