//! Local set replicas with effectful operation application.
//!
//! A [`SetStore`] is a mutable set of elements. Applying an operation reports
//! whether it was *effectful*: an insert of an absent element or a delete of a
//! present one. Non-effectful applications leave the store untouched. Two
//! implementations are provided — a sorted vector and an unbalanced binary
//! search tree — which stay interchangeable under any operation history.

use std::fmt;
use std::str::FromStr;

use crate::op::{Element, OpKind, Operation};

/// Mutable set of elements, confined to a single agent. Stores move between
/// threads with their agent but are never shared concurrently.
pub trait SetStore: fmt::Debug + Send {
    /// Adds `e`; returns true iff it was absent.
    fn insert(&mut self, e: Element) -> bool;

    /// Removes `e`; returns true iff it was present.
    fn remove(&mut self, e: Element) -> bool;

    fn contains(&self, e: Element) -> bool;

    /// Current membership in ascending order.
    fn snapshot(&self) -> Vec<Element>;

    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Applies `op` to `store` and reports whether it changed anything.
pub fn apply_effectful(store: &mut dyn SetStore, op: &Operation) -> bool {
    match (op.kind(), op.element()) {
        (OpKind::Insert, Some(e)) => store.insert(e),
        (OpKind::Delete, Some(e)) => store.remove(e),
        _ => false,
    }
}

/// True iff both stores currently hold the same elements.
pub fn stores_equivalent(a: &dyn SetStore, b: &dyn SetStore) -> bool {
    a.snapshot() == b.snapshot()
}

/// Which store implementation a peer uses.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum StoreKind {
    Sorted,
    Bst,
}

impl StoreKind {
    pub fn new_store(self) -> Box<dyn SetStore> {
        match self {
            StoreKind::Sorted => Box::new(SortedSetStore::new()),
            StoreKind::Bst => Box::new(BstSetStore::new()),
        }
    }
}

impl fmt::Display for StoreKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StoreKind::Sorted => f.write_str("sorted"),
            StoreKind::Bst => f.write_str("bst"),
        }
    }
}

impl FromStr for StoreKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "sorted" => Ok(StoreKind::Sorted),
            "bst" => Ok(StoreKind::Bst),
            other => Err(format!("unknown store kind {other:?} (expected sorted or bst)")),
        }
    }
}

/// Reference implementation: a strictly increasing vector.
#[derive(Clone, Default, Debug)]
pub struct SortedSetStore {
    elements: Vec<Element>,
}

impl SortedSetStore {
    pub fn new() -> Self {
        Self::default()
    }
}

impl FromIterator<Element> for SortedSetStore {
    fn from_iter<I: IntoIterator<Item = Element>>(iter: I) -> Self {
        let mut s = Self::new();
        for e in iter {
            s.insert(e);
        }
        s
    }
}

impl SetStore for SortedSetStore {
    fn insert(&mut self, e: Element) -> bool {
        match self.elements.binary_search(&e) {
            Ok(_) => false,
            Err(pos) => {
                self.elements.insert(pos, e);
                true
            }
        }
    }

    fn remove(&mut self, e: Element) -> bool {
        match self.elements.binary_search(&e) {
            Ok(pos) => {
                self.elements.remove(pos);
                true
            }
            Err(_) => false,
        }
    }

    fn contains(&self, e: Element) -> bool {
        self.elements.binary_search(&e).is_ok()
    }

    fn snapshot(&self) -> Vec<Element> {
        self.elements.clone()
    }

    fn len(&self) -> usize {
        self.elements.len()
    }
}

/// Set implemented by an unbalanced binary search tree.
#[derive(Clone, Default, Debug)]
pub struct BstSetStore {
    root: Option<Box<Node>>,
    size: usize,
}

#[derive(Clone, Debug)]
struct Node {
    value: Element,
    left: Option<Box<Node>>,
    right: Option<Box<Node>>,
}

impl Node {
    fn leaf(value: Element) -> Box<Node> {
        Box::new(Node {
            value,
            left: None,
            right: None,
        })
    }
}

impl BstSetStore {
    pub fn new() -> Self {
        Self::default()
    }
}

impl FromIterator<Element> for BstSetStore {
    fn from_iter<I: IntoIterator<Item = Element>>(iter: I) -> Self {
        let mut s = Self::new();
        for e in iter {
            s.insert(e);
        }
        s
    }
}

fn bst_insert(slot: &mut Option<Box<Node>>, e: Element) -> bool {
    match slot {
        None => {
            *slot = Some(Node::leaf(e));
            true
        }
        Some(node) => {
            if e < node.value {
                bst_insert(&mut node.left, e)
            } else if e > node.value {
                bst_insert(&mut node.right, e)
            } else {
                false
            }
        }
    }
}

fn bst_remove(slot: &mut Option<Box<Node>>, e: Element) -> bool {
    let Some(node) = slot else { return false };
    if e < node.value {
        bst_remove(&mut node.left, e)
    } else if e > node.value {
        bst_remove(&mut node.right, e)
    } else {
        let node = slot.take().expect("slot checked above");
        *slot = match (node.left, node.right) {
            (None, None) => None,
            (Some(l), None) => Some(l),
            (None, Some(r)) => Some(r),
            (Some(l), Some(r)) => {
                // Replace the removed node by the minimum of its right subtree.
                let mut right = Some(r);
                let succ = bst_take_min(&mut right).expect("right subtree is nonempty");
                Some(Box::new(Node {
                    value: succ,
                    left: Some(l),
                    right,
                }))
            }
        };
        true
    }
}

fn bst_take_min(slot: &mut Option<Box<Node>>) -> Option<Element> {
    let node = slot.as_mut()?;
    if node.left.is_some() {
        bst_take_min(&mut node.left)
    } else {
        let node = slot.take().expect("slot checked above");
        *slot = node.right;
        Some(node.value)
    }
}

impl SetStore for BstSetStore {
    fn insert(&mut self, e: Element) -> bool {
        let added = bst_insert(&mut self.root, e);
        if added {
            self.size += 1;
        }
        added
    }

    fn remove(&mut self, e: Element) -> bool {
        let removed = bst_remove(&mut self.root, e);
        if removed {
            self.size -= 1;
        }
        removed
    }

    fn contains(&self, e: Element) -> bool {
        let mut cur = self.root.as_deref();
        while let Some(node) = cur {
            cur = if e < node.value {
                node.left.as_deref()
            } else if e > node.value {
                node.right.as_deref()
            } else {
                return true;
            };
        }
        false
    }

    fn snapshot(&self) -> Vec<Element> {
        // Iterative in-order traversal.
        let mut out = Vec::with_capacity(self.size);
        let mut stack = Vec::new();
        let mut cur = self.root.as_deref();
        while cur.is_some() || !stack.is_empty() {
            while let Some(node) = cur {
                stack.push(node);
                cur = node.left.as_deref();
            }
            let node = stack.pop().expect("loop condition guarantees a node");
            out.push(node.value);
            cur = node.right.as_deref();
        }
        out
    }

    fn len(&self) -> usize {
        self.size
    }
}
