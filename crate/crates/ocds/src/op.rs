//! Elements, peers, and the updating operations exchanged between them.
//!
//! An [`Operation`] inserts or deletes a single [`Element`], or is the
//! identity `!` which leaves any store unchanged. Every operation carries its
//! origin peer, a Lamport time, and a per-origin sequence number. The
//! `(origin, seq)` pair ([`OpId`]) identifies the operation system-wide and
//! never changes as the operation is forwarded; the `(lamport, origin)` pair
//! ([`Stamp`]) is the total order used to arbitrate concurrent operations on
//! the same element.

use std::fmt;

use thiserror::Error;

/// A set element. Values are 64-bit signed integers, totally ordered.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub struct Element(pub i64);

impl fmt::Display for Element {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl From<i64> for Element {
    fn from(v: i64) -> Self {
        Element(v)
    }
}

/// Peer identifier: a nonempty name with no whitespace, ordered
/// lexicographically. The ordering is load-bearing: it breaks ties between
/// operations with equal Lamport times.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub struct PeerId(String);

impl PeerId {
    pub fn new(name: impl Into<String>) -> Result<Self, ModelError> {
        let name = name.into();
        if name.is_empty() {
            return Err(ModelError::EmptyPeerName);
        }
        if name.chars().any(char::is_whitespace) {
            return Err(ModelError::PeerNameWhitespace(name));
        }
        Ok(PeerId(name))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for PeerId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// What an operation does to a store.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug)]
pub enum OpKind {
    Insert,
    Delete,
    /// The no-op `!`. Also produced by a gateway suppressing an operation.
    Identity,
}

impl fmt::Display for OpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OpKind::Insert => f.write_str("insert"),
            OpKind::Delete => f.write_str("delete"),
            OpKind::Identity => f.write_str("!"),
        }
    }
}

/// System-wide operation identity: `(origin, seq)`.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub struct OpId {
    pub origin: PeerId,
    pub seq: u64,
}

impl fmt::Display for OpId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.origin, self.seq)
    }
}

/// Arbitration stamp. Compared by Lamport time first, then origin, which is a
/// total order every peer computes identically.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub struct Stamp {
    pub lamport: u64,
    pub origin: PeerId,
}

impl fmt::Display for Stamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.lamport, self.origin)
    }
}

/// A stamped updating operation on one element.
#[derive(Clone, PartialEq, Eq, Hash, Debug)]
pub struct Operation {
    kind: OpKind,
    element: Option<Element>,
    origin: PeerId,
    lamport: u64,
    seq: u64,
}

impl Operation {
    /// Builds a well-formed operation. Identity must carry no element;
    /// insert/delete must carry one.
    pub fn new(
        kind: OpKind,
        element: Option<Element>,
        origin: PeerId,
        lamport: u64,
        seq: u64,
    ) -> Result<Self, ModelError> {
        match (kind, element) {
            (OpKind::Identity, Some(_)) => Err(ModelError::IdentityWithElement),
            (OpKind::Insert, None) | (OpKind::Delete, None) => {
                Err(ModelError::MissingElement(kind))
            }
            _ => Ok(Operation {
                kind,
                element,
                origin,
                lamport,
                seq,
            }),
        }
    }

    pub fn insert(e: Element, origin: PeerId, lamport: u64, seq: u64) -> Self {
        Operation {
            kind: OpKind::Insert,
            element: Some(e),
            origin,
            lamport,
            seq,
        }
    }

    pub fn delete(e: Element, origin: PeerId, lamport: u64, seq: u64) -> Self {
        Operation {
            kind: OpKind::Delete,
            element: Some(e),
            origin,
            lamport,
            seq,
        }
    }

    pub fn identity(origin: PeerId, lamport: u64, seq: u64) -> Self {
        Operation {
            kind: OpKind::Identity,
            element: None,
            origin,
            lamport,
            seq,
        }
    }

    /// The identity operation with this operation's stamps, used when a
    /// gateway suppresses the operation but the trace should stay auditable.
    pub fn suppressed(&self) -> Self {
        Operation::identity(self.origin.clone(), self.lamport, self.seq)
    }

    pub fn kind(&self) -> OpKind {
        self.kind
    }

    pub fn element(&self) -> Option<Element> {
        self.element
    }

    pub fn origin(&self) -> &PeerId {
        &self.origin
    }

    pub fn lamport(&self) -> u64 {
        self.lamport
    }

    pub fn seq(&self) -> u64 {
        self.seq
    }

    pub fn op_id(&self) -> OpId {
        OpId {
            origin: self.origin.clone(),
            seq: self.seq,
        }
    }

    pub fn stamp(&self) -> Stamp {
        Stamp {
            lamport: self.lamport,
            origin: self.origin.clone(),
        }
    }

    pub fn is_identity(&self) -> bool {
        self.kind == OpKind::Identity
    }
}

impl fmt::Display for Operation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (self.kind, self.element) {
            (OpKind::Identity, _) => write!(f, "!{{{}:{}}}", self.origin, self.seq),
            (kind, Some(e)) => write!(
                f,
                "{}({}) [{}:{} @{}]",
                kind, e, self.origin, self.seq, self.lamport
            ),
            (kind, None) => write!(f, "{}(?)", kind),
        }
    }
}

#[derive(Error, Debug, Clone, PartialEq, Eq)]
pub enum ModelError {
    #[error("peer name must be nonempty")]
    EmptyPeerName,
    #[error("peer name {0:?} contains whitespace")]
    PeerNameWhitespace(String),
    #[error("identity operation cannot carry an element")]
    IdentityWithElement,
    #[error("{0} operation requires an element")]
    MissingElement(OpKind),
}
