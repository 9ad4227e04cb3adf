//! Finite-state-machine homomorphism checking.
//!
//! Two machines are homomorphic under a mapping `h` of states and operations
//! if operating then mapping equals mapping then operating: for every state
//! `s` and every operation `o` defined at `s`,
//! `delta_b(h(s), h(o)) = h(delta_a(s, o))`. Operations may be partial —
//! valid only at some states — and every machine carries the identity
//! operation `!`, which maps any state to itself. Mapping an operation to
//! `!` erases it on the target side.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use thiserror::Error;

/// Label of the identity operation, present in every machine.
pub const IDENTITY_OP: &str = "!";

/// A finite state machine with a partial, deterministic transition map.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct Fsm {
    name: String,
    states: BTreeSet<String>,
    ops: BTreeSet<String>,
    delta: BTreeMap<(String, String), String>,
}

impl Fsm {
    /// Creates a machine over the given states and operations. The identity
    /// operation and its self-transitions are added automatically.
    pub fn new(
        name: impl Into<String>,
        states: impl IntoIterator<Item = impl Into<String>>,
        ops: impl IntoIterator<Item = impl Into<String>>,
    ) -> Result<Self, FsmError> {
        let name = name.into();
        let states: BTreeSet<String> = states.into_iter().map(Into::into).collect();
        if states.is_empty() {
            return Err(FsmError::NoStates(name));
        }
        let mut all_ops: BTreeSet<String> = ops.into_iter().map(Into::into).collect();
        all_ops.insert(IDENTITY_OP.to_string());
        let delta = states
            .iter()
            .map(|s| ((s.clone(), IDENTITY_OP.to_string()), s.clone()))
            .collect();
        Ok(Fsm {
            name,
            states,
            ops: all_ops,
            delta,
        })
    }

    pub fn add_transition(
        &mut self,
        state: &str,
        op: &str,
        next: &str,
    ) -> Result<(), FsmError> {
        if op == IDENTITY_OP {
            return Err(FsmError::IdentityRedefined(self.name.clone()));
        }
        for s in [state, next] {
            if !self.states.contains(s) {
                return Err(FsmError::UnknownState(self.name.clone(), s.to_string()));
            }
        }
        if !self.ops.contains(op) {
            return Err(FsmError::UnknownOp(self.name.clone(), op.to_string()));
        }
        let key = (state.to_string(), op.to_string());
        if self.delta.contains_key(&key) {
            return Err(FsmError::DuplicateTransition(
                self.name.clone(),
                state.to_string(),
                op.to_string(),
            ));
        }
        self.delta.insert(key, next.to_string());
        Ok(())
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn states(&self) -> impl Iterator<Item = &str> {
        self.states.iter().map(String::as_str)
    }

    pub fn ops(&self) -> impl Iterator<Item = &str> {
        self.ops.iter().map(String::as_str)
    }

    /// The next state, if `op` is valid at `state`.
    pub fn transition(&self, state: &str, op: &str) -> Option<&str> {
        self.delta
            .get(&(state.to_string(), op.to_string()))
            .map(String::as_str)
    }
}

/// A total mapping of one machine's states and operations onto another's.
#[derive(Clone, PartialEq, Eq, Debug, Default)]
pub struct HomMap {
    pub state_map: BTreeMap<String, String>,
    pub op_map: BTreeMap<String, String>,
}

impl HomMap {
    pub fn map_state(mut self, from: &str, to: &str) -> Self {
        self.state_map.insert(from.to_string(), to.to_string());
        self
    }

    pub fn map_op(mut self, from: &str, to: &str) -> Self {
        self.op_map.insert(from.to_string(), to.to_string());
        self
    }

    /// The composite mapping `second ∘ self`.
    pub fn then(&self, second: &HomMap) -> Option<HomMap> {
        let mut out = HomMap::default();
        for (from, mid) in &self.state_map {
            out.state_map
                .insert(from.clone(), second.state_map.get(mid)?.clone());
        }
        for (from, mid) in &self.op_map {
            out.op_map
                .insert(from.clone(), second.op_map.get(mid)?.clone());
        }
        Some(out)
    }
}

/// Identity mapping of a machine onto itself.
pub fn identity_map(fsm: &Fsm) -> HomMap {
    HomMap {
        state_map: fsm.states().map(|s| (s.to_string(), s.to_string())).collect(),
        op_map: fsm.ops().map(|o| (o.to_string(), o.to_string())).collect(),
    }
}

/// Outcome of a homomorphism check: every transition of the source machine
/// whose image does not commute.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct HomReport {
    /// Number of (state, op) squares examined.
    pub checked: usize,
    pub violations: Vec<(String, String)>,
}

impl HomReport {
    pub fn ok(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for HomReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.ok() {
            write!(f, "homomorphism: OK ({} squares checked)", self.checked)
        } else {
            write!(f, "homomorphism: FAIL ({} squares checked)", self.checked)?;
            for (state, op) in &self.violations {
                write!(f, "\nviolation: ({state}, {op})")?;
            }
            Ok(())
        }
    }
}

/// Checks that `h` carries every defined transition of `a` onto a matching
/// transition of `b`. `h` must map every state and operation of `a`.
pub fn check_homomorphism(a: &Fsm, b: &Fsm, h: &HomMap) -> Result<HomReport, FsmError> {
    for s in a.states() {
        if !h.state_map.contains_key(s) {
            return Err(FsmError::MissingStateMapping(s.to_string()));
        }
    }
    for o in a.ops() {
        if !h.op_map.contains_key(o) {
            return Err(FsmError::MissingOpMapping(o.to_string()));
        }
    }

    let mut checked = 0;
    let mut violations = Vec::new();
    for s in a.states() {
        for o in a.ops() {
            let Some(next) = a.transition(s, o) else { continue };
            checked += 1;
            let image_state = &h.state_map[s];
            let image_op = &h.op_map[o];
            let want = &h.state_map[next];
            match b.transition(image_state, image_op) {
                Some(got) if got == want => {}
                _ => violations.push((s.to_string(), o.to_string())),
            }
        }
    }
    Ok(HomReport { checked, violations })
}

/// The door and light machines with the mapping that makes them collaborate:
/// door open ↔ light lit, opening turns the light on, closing turns it off,
/// and ringing the bell leaves it alone.
pub fn door_light_example() -> (Fsm, Fsm, HomMap) {
    let mut door = Fsm::new(
        "door",
        ["DoorOpen", "DoorClosed"],
        ["Open", "Close", "RingBell"],
    )
    .expect("static machine is valid");
    door.add_transition("DoorClosed", "Open", "DoorOpen").expect("valid");
    door.add_transition("DoorOpen", "Close", "DoorClosed").expect("valid");
    // The bell only rings at a closed door, and the door stays closed.
    door.add_transition("DoorClosed", "RingBell", "DoorClosed").expect("valid");

    let mut light = Fsm::new("light", ["LightLit", "LightDim"], ["On", "Off"])
        .expect("static machine is valid");
    light.add_transition("LightDim", "On", "LightLit").expect("valid");
    light.add_transition("LightLit", "Off", "LightDim").expect("valid");

    let h = HomMap::default()
        .map_state("DoorOpen", "LightLit")
        .map_state("DoorClosed", "LightDim")
        .map_op("Open", "On")
        .map_op("Close", "Off")
        .map_op("RingBell", IDENTITY_OP)
        .map_op(IDENTITY_OP, IDENTITY_OP);
    (door, light, h)
}

#[derive(Error, Debug, Clone, PartialEq, Eq)]
pub enum FsmError {
    #[error("machine {0} has no states")]
    NoStates(String),
    #[error("machine {0}: unknown state {1}")]
    UnknownState(String, String),
    #[error("machine {0}: unknown op {1}")]
    UnknownOp(String, String),
    #[error("machine {0}: transition for ({1}, {2}) already defined")]
    DuplicateTransition(String, String, String),
    #[error("machine {0}: the identity transition cannot be redefined")]
    IdentityRedefined(String),
    #[error("mapping is missing state {0}")]
    MissingStateMapping(String),
    #[error("mapping is missing op {0}")]
    MissingOpMapping(String),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
}

/// Parses the machine-pair text format used by `check-hom`:
///
/// ```text
/// fsm <name>            # first machine is the source, second the target
/// states <id> ...
/// ops <id> ...
/// delta <state> <op> -> <state>
/// map state <a> -> <b>
/// map op <a> -> <b>
/// ```
///
/// `#` starts a comment. The identity op `!` exists implicitly and maps to
/// itself unless remapped.
pub fn parse_fsm_file(text: &str) -> Result<(Fsm, Fsm, HomMap), FsmError> {
    struct Section {
        name: String,
        states: Vec<String>,
        ops: Vec<String>,
        deltas: Vec<(String, String, String)>,
    }
    let mut sections: Vec<Section> = Vec::new();
    let mut map = HomMap::default();

    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let fail = |message: String| FsmError::Parse { line: line_no, message };
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let tokens: Vec<&str> = line.split_whitespace().collect();
        match tokens[0] {
            "fsm" => {
                if tokens.len() != 2 {
                    return Err(fail("usage: fsm <name>".into()));
                }
                sections.push(Section {
                    name: tokens[1].to_string(),
                    states: Vec::new(),
                    ops: Vec::new(),
                    deltas: Vec::new(),
                });
            }
            "states" | "ops" => {
                let section = sections
                    .last_mut()
                    .ok_or_else(|| fail(format!("{} before any fsm", tokens[0])))?;
                let items = tokens[1..].iter().map(|t| t.to_string());
                if tokens[0] == "states" {
                    section.states.extend(items);
                } else {
                    section.ops.extend(items);
                }
            }
            "delta" => {
                if tokens.len() != 5 || tokens[3] != "->" {
                    return Err(fail("usage: delta <state> <op> -> <state>".into()));
                }
                let section = sections
                    .last_mut()
                    .ok_or_else(|| fail("delta before any fsm".into()))?;
                section.deltas.push((
                    tokens[1].to_string(),
                    tokens[2].to_string(),
                    tokens[4].to_string(),
                ));
            }
            "map" => {
                if tokens.len() != 5 || tokens[3] != "->" {
                    return Err(fail("usage: map (state|op) <a> -> <b>".into()));
                }
                match tokens[1] {
                    "state" => {
                        map.state_map.insert(tokens[2].to_string(), tokens[4].to_string());
                    }
                    "op" => {
                        map.op_map.insert(tokens[2].to_string(), tokens[4].to_string());
                    }
                    other => return Err(fail(format!("unknown map kind {other:?}"))),
                }
            }
            other => return Err(fail(format!("unknown statement {other:?}"))),
        }
    }

    if sections.len() != 2 {
        return Err(FsmError::Parse {
            line: 0,
            message: format!("expected exactly 2 machines, found {}", sections.len()),
        });
    }
    let mut built = sections.into_iter().map(|sec| {
        let mut fsm = Fsm::new(sec.name, sec.states, sec.ops)?;
        for (s, o, n) in sec.deltas {
            fsm.add_transition(&s, &o, &n)?;
        }
        Ok::<Fsm, FsmError>(fsm)
    });
    let a = built.next().expect("length checked")?;
    let b = built.next().expect("length checked")?;
    map.op_map
        .entry(IDENTITY_OP.to_string())
        .or_insert_with(|| IDENTITY_OP.to_string());
    Ok((a, b, map))
}
