//! Deterministic discrete-event execution of scenarios.
//!
//! Time is integer ticks. Within one tick the simulator first completes every
//! message delivery due at that tick, then runs the scripted events for the
//! tick in file order, then drains agent outboxes onto their links (one
//! operation per step, FIFO per direction, arriving `latency` ticks later).
//! A downed link keeps unsent operations in the sender's outbox, and pulls
//! anything already in flight back there, so nothing crosses a partition;
//! healing simply lets the next drain pass go ahead. Events scheduled at
//! `END` run after the network has gone quiescent.
//!
//! Identical scenarios produce identical reports, byte for byte.

use std::collections::{BTreeMap, VecDeque};
use std::fmt;

use thiserror::Error;

use crate::agent::{consistent, shared_views, Agent, AgentError, Message, RecvDisposition};
use crate::lens::{format_set, link_symmetric};
use crate::op::{Element, OpKind, Operation, PeerId};
use crate::scenario::{normalize_pair, Action, EventTime, Scenario, ScenarioError, SimEvent};

/// Universe over which link symmetry is checked before a run.
pub const SYMMETRY_CHECK_UNIVERSE: std::ops::RangeInclusive<i64> = 0..=10_000;

#[derive(Clone, Debug)]
pub struct RunOptions {
    /// Discard non-effectful local operations (the normal mode). Turning
    /// this off reproduces divergence under unconditional propagation.
    pub effectful_filter: bool,
    /// Escalate asymmetric-lens warnings to an error.
    pub strict: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            effectful_filter: true,
            strict: false,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum AssertKind {
    Consistent,
    State,
    Shared,
}

impl fmt::Display for AssertKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AssertKind::Consistent => f.write_str("consistent"),
            AssertKind::State => f.write_str("state"),
            AssertKind::Shared => f.write_str("shared"),
        }
    }
}

#[derive(Clone, PartialEq, Eq, Debug)]
pub struct AssertResult {
    pub at: EventTime,
    pub kind: AssertKind,
    pub passed: bool,
    pub detail: String,
}

/// One line of the execution trace.
#[derive(Clone, PartialEq, Eq, Debug)]
pub enum TraceEntry {
    Submit {
        tick: EventTime,
        peer: PeerId,
        kind: OpKind,
        element: Element,
        applied: bool,
    },
    Deliver {
        tick: u64,
        from: PeerId,
        to: PeerId,
        op: Operation,
        disposition: RecvDisposition,
    },
    Partition {
        tick: EventTime,
        a: PeerId,
        b: PeerId,
    },
    Heal {
        tick: EventTime,
        a: PeerId,
        b: PeerId,
    },
}

impl fmt::Display for TraceEntry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TraceEntry::Submit { tick, peer, kind, element, applied } => {
                let fate = if *applied { "applied" } else { "discarded (non-effectful)" };
                write!(f, "[{tick}] {peer} submits {kind} {element}: {fate}")
            }
            TraceEntry::Deliver { tick, from, to, op, disposition } => {
                write!(f, "[{tick}] {to} receives {op} from {from}: {disposition}")
            }
            TraceEntry::Partition { tick, a, b } => write!(f, "[{tick}] partition {a} {b}"),
            TraceEntry::Heal { tick, a, b } => write!(f, "[{tick}] heal {a} {b}"),
        }
    }
}

/// Everything a run produces.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct RunReport {
    pub asserts: Vec<AssertResult>,
    /// Final snapshot per peer, in declaration order.
    pub finals: Vec<(PeerId, Vec<Element>)>,
    /// Messages delivered to agents over the whole run.
    pub message_count: u64,
    pub quiescence_tick: u64,
    pub trace: Vec<TraceEntry>,
    pub warnings: Vec<String>,
    /// Local operations that passed the effectful filter, in submission
    /// order, with the stamps they were given.
    pub accepted_ops: Vec<Operation>,
}

impl RunReport {
    pub fn all_passed(&self) -> bool {
        self.asserts.iter().all(|a| a.passed)
    }
}

#[derive(Error, Debug, Clone, PartialEq, Eq)]
pub enum SimError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error("asymmetric lens pair on link {a} {b}")]
    AsymmetricLink { a: PeerId, b: PeerId },
}

struct Link {
    a: PeerId,
    b: PeerId,
    latency: u64,
    up: bool,
    /// In-flight messages per direction, FIFO, tagged with delivery tick.
    flight_ab: VecDeque<(u64, Message)>,
    flight_ba: VecDeque<(u64, Message)>,
}

impl Link {
    fn flight_from_mut(&mut self, from: &PeerId) -> &mut VecDeque<(u64, Message)> {
        if from == &self.a {
            &mut self.flight_ab
        } else {
            &mut self.flight_ba
        }
    }

    fn in_flight(&self) -> usize {
        self.flight_ab.len() + self.flight_ba.len()
    }
}

/// A scenario in progress.
pub struct Simulator {
    peer_order: Vec<PeerId>,
    agents: BTreeMap<PeerId, Agent>,
    links: Vec<Link>,
    now: u64,
    scripted: VecDeque<SimEvent>,
    end_events: VecDeque<SimEvent>,
    asserts: Vec<AssertResult>,
    trace: Vec<TraceEntry>,
    accepted_ops: Vec<Operation>,
    message_count: u64,
    warnings: Vec<String>,
}

impl Simulator {
    pub fn new(scenario: &Scenario, options: &RunOptions) -> Result<Self, SimError> {
        scenario.validate()?;

        let mut warnings = Vec::new();
        for link in &scenario.links {
            let lens_a = &scenario.peer(&link.a).expect("validated").lens;
            let lens_b = &scenario.peer(&link.b).expect("validated").lens;
            if !link_symmetric(lens_a, lens_b, SYMMETRY_CHECK_UNIVERSE) {
                if options.strict {
                    return Err(SimError::AsymmetricLink {
                        a: link.a.clone(),
                        b: link.b.clone(),
                    });
                }
                warnings.push(format!(
                    "link {} {} has an asymmetric lens pair; convergence is not guaranteed",
                    link.a, link.b
                ));
            }
        }

        let mut agents = BTreeMap::new();
        let mut peer_order = Vec::new();
        for spec in &scenario.peers {
            let mut agent = Agent::new(spec.id.clone(), spec.store.new_store());
            agent.set_effectful_filter(options.effectful_filter);
            agent.seed(spec.initial.iter().copied());
            peer_order.push(spec.id.clone());
            agents.insert(spec.id.clone(), agent);
        }
        for link in &scenario.links {
            let lens_a = scenario.peer(&link.a).expect("validated").lens.clone();
            let lens_b = scenario.peer(&link.b).expect("validated").lens.clone();
            agents
                .get_mut(&link.a)
                .expect("validated")
                .add_partner(link.b.clone(), lens_a)?;
            agents
                .get_mut(&link.b)
                .expect("validated")
                .add_partner(link.a.clone(), lens_b)?;
        }

        let (scripted, end_events) = scenario
            .events
            .iter()
            .cloned()
            .partition::<VecDeque<_>, _>(|ev| ev.at != EventTime::End);

        Ok(Simulator {
            peer_order,
            agents,
            links: scenario
                .links
                .iter()
                .map(|l| Link {
                    a: l.a.clone(),
                    b: l.b.clone(),
                    latency: l.latency,
                    up: true,
                    flight_ab: VecDeque::new(),
                    flight_ba: VecDeque::new(),
                })
                .collect(),
            now: 0,
            scripted,
            end_events,
            asserts: Vec::new(),
            trace: Vec::new(),
            accepted_ops: Vec::new(),
            message_count: 0,
            warnings,
        })
    }

    pub fn now(&self) -> u64 {
        self.now
    }

    pub fn agent(&self, id: &PeerId) -> Option<&Agent> {
        self.agents.get(id)
    }

    /// No message is in flight and every outbox toward an up link is empty.
    /// Operations buffered toward a downed link do not count: they cannot
    /// move until someone heals the link.
    pub fn quiescent(&self) -> bool {
        self.links.iter().all(|l| l.in_flight() == 0) && !self.any_drainable_outbox()
    }

    fn any_drainable_outbox(&self) -> bool {
        self.links.iter().any(|l| {
            l.up && (self.outbox_len(&l.a, &l.b) > 0 || self.outbox_len(&l.b, &l.a) > 0)
        })
    }

    fn outbox_len(&self, from: &PeerId, to: &PeerId) -> usize {
        self.agents.get(from).map_or(0, |a| a.outbox_len(to))
    }

    /// Performs one unit of work: a delivery, a scripted event, an outbox
    /// send, or a tick advance. Returns false when the scripted timeline is
    /// exhausted and the network is quiescent.
    pub fn step(&mut self) -> bool {
        if self.deliver_one() {
            return true;
        }
        if let Some(ev) = self.next_scripted_now() {
            self.execute(&ev);
            return true;
        }
        if self.send_one() {
            return true;
        }
        self.advance_tick()
    }

    /// Runs scripted events to quiescence, then the END events, and returns
    /// the report.
    pub fn finish(mut self) -> RunReport {
        while self.step() {}
        let quiescence_tick = self.now;
        while let Some(ev) = self.end_events.pop_front() {
            self.execute(&ev);
            // Anything the event set in motion settles before the next one.
            while self.step() {}
        }
        RunReport {
            asserts: self.asserts,
            finals: self
                .peer_order
                .iter()
                .map(|id| (id.clone(), self.agents[id].snapshot()))
                .collect(),
            message_count: self.message_count,
            quiescence_tick,
            trace: self.trace,
            warnings: self.warnings,
            accepted_ops: self.accepted_ops,
        }
    }

    fn deliver_one(&mut self) -> bool {
        for i in 0..self.links.len() {
            for dir in 0..2 {
                let link = &mut self.links[i];
                let queue = if dir == 0 { &mut link.flight_ab } else { &mut link.flight_ba };
                if queue.front().is_some_and(|(t, _)| *t <= self.now) {
                    let (_, msg) = queue.pop_front().expect("front checked");
                    self.message_count += 1;
                    let agent = self.agents.get_mut(&msg.to).expect("validated");
                    let disposition = agent.receive_remote(&msg).expect("links are partnered");
                    self.trace.push(TraceEntry::Deliver {
                        tick: self.now,
                        from: msg.from,
                        to: msg.to,
                        op: msg.op,
                        disposition,
                    });
                    return true;
                }
            }
        }
        false
    }

    fn next_scripted_now(&mut self) -> Option<SimEvent> {
        match self.scripted.front() {
            Some(ev) if ev.at == EventTime::Tick(self.now) => self.scripted.pop_front(),
            _ => None,
        }
    }

    fn send_one(&mut self) -> bool {
        for i in 0..self.links.len() {
            if !self.links[i].up {
                continue;
            }
            let (a, b) = (self.links[i].a.clone(), self.links[i].b.clone());
            for (from, to) in [(a.clone(), b.clone()), (b, a)] {
                if self.outbox_len(&from, &to) == 0 {
                    continue;
                }
                let agent = self.agents.get_mut(&from).expect("validated");
                let mut msgs = agent.drain_outbox(&to).expect("partnered");
                let msg = msgs.remove(0);
                agent.requeue_front(&to, msgs.into_iter().map(|m| m.op))
                    .expect("partnered");
                let link = &mut self.links[i];
                let deliver_at = self.now + link.latency;
                link.flight_from_mut(&from).push_back((deliver_at, msg));
                return true;
            }
        }
        false
    }

    fn advance_tick(&mut self) -> bool {
        let next_scripted = match self.scripted.front() {
            Some(SimEvent { at: EventTime::Tick(t), .. }) => Some(*t),
            _ => None,
        };
        let next_delivery = self
            .links
            .iter()
            .flat_map(|l| [l.flight_ab.front(), l.flight_ba.front()])
            .flatten()
            .map(|(t, _)| *t)
            .min();
        match [next_scripted, next_delivery].into_iter().flatten().min() {
            Some(next) if next > self.now => {
                self.now = next;
                true
            }
            // Work at the current tick would have been handled by the
            // earlier phases; nothing scheduled means quiescence.
            _ => false,
        }
    }

    fn execute(&mut self, ev: &SimEvent) {
        match &ev.action {
            Action::Op { peer, kind, element } => {
                let agent = self.agents.get_mut(peer).expect("validated");
                let outcome = agent.submit_local(*kind, *element).expect("kind is insert/delete");
                if let Some(op) = &outcome.op {
                    self.accepted_ops.push(op.clone());
                }
                self.trace.push(TraceEntry::Submit {
                    tick: ev.at,
                    peer: peer.clone(),
                    kind: *kind,
                    element: *element,
                    applied: outcome.applied,
                });
            }
            Action::Partition { a, b } => {
                self.set_link(a, b, false);
                self.trace.push(TraceEntry::Partition {
                    tick: ev.at,
                    a: a.clone(),
                    b: b.clone(),
                });
            }
            Action::Heal { a, b } => {
                self.set_link(a, b, true);
                self.trace.push(TraceEntry::Heal {
                    tick: ev.at,
                    a: a.clone(),
                    b: b.clone(),
                });
            }
            Action::AssertConsistent { a, b } => {
                let (agent_a, agent_b) = (&self.agents[a], &self.agents[b]);
                let passed = consistent(agent_a, agent_b).expect("linked pair");
                let (va, vb) = shared_views(agent_a, agent_b).expect("linked pair");
                self.asserts.push(AssertResult {
                    at: ev.at,
                    kind: AssertKind::Consistent,
                    passed,
                    detail: format!("{a}={} {b}={}", format_set(&va), format_set(&vb)),
                });
            }
            Action::AssertState { peer, expected } => {
                let got = self.agents[peer].snapshot();
                let passed = got.iter().copied().eq(expected.iter().copied());
                self.asserts.push(AssertResult {
                    at: ev.at,
                    kind: AssertKind::State,
                    passed,
                    detail: format!(
                        "{peer} got={} want={}",
                        format_set(&got),
                        format_set(expected)
                    ),
                });
            }
            Action::AssertShared { a, b, expected } => {
                let (va, vb) = shared_views(&self.agents[a], &self.agents[b]).expect("linked pair");
                let passed = &va == expected && &vb == expected;
                self.asserts.push(AssertResult {
                    at: ev.at,
                    kind: AssertKind::Shared,
                    passed,
                    detail: format!(
                        "{a}-{b} got {a}={} {b}={} want={}",
                        format_set(&va),
                        format_set(&vb),
                        format_set(expected)
                    ),
                });
            }
        }
    }

    /// Raises or drops a link. Dropping pulls in-flight messages back to the
    /// front of their senders' outboxes, preserving send order, so they are
    /// retransmitted on heal rather than crossing the partition.
    fn set_link(&mut self, a: &PeerId, b: &PeerId, up: bool) {
        let key = normalize_pair(a, b);
        let link = self
            .links
            .iter_mut()
            .find(|l| normalize_pair(&l.a, &l.b) == key)
            .expect("validated");
        if link.up == up {
            return;
        }
        link.up = up;
        if !up {
            let pulled_ab: Vec<Operation> =
                link.flight_ab.drain(..).map(|(_, m)| m.op).collect();
            let pulled_ba: Vec<Operation> =
                link.flight_ba.drain(..).map(|(_, m)| m.op).collect();
            let (la, lb) = (link.a.clone(), link.b.clone());
            self.agents
                .get_mut(&la)
                .expect("validated")
                .requeue_front(&lb, pulled_ab)
                .expect("partnered");
            self.agents
                .get_mut(&lb)
                .expect("validated")
                .requeue_front(&la, pulled_ba)
                .expect("partnered");
        }
    }
}

/// Runs a scenario to completion.
pub fn run(scenario: &Scenario, options: &RunOptions) -> Result<RunReport, SimError> {
    Ok(Simulator::new(scenario, options)?.finish())
}
