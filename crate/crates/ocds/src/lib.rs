//! Operation-based collaborative data sharing between set replicas.
//!
//! Peers hold local sets and exchange *operations* — single-element inserts
//! and deletes — instead of states. Each peer guards its links with a
//! predicate lens: an offer predicate filters what goes out, an accept
//! predicate filters what comes in, and anything suppressed becomes the
//! identity operation `!`. Local operations that would not change the store
//! (inserting a present element, deleting an absent one) are discarded before
//! they can propagate; this effectful filtering is what lets concurrent
//! updates merge without locks. Remaining conflicts between concurrent effectful
//! operations on the same element are settled by a total `(lamport, origin)`
//! stamp order that every peer computes identically.
//!
//! The crate provides:
//!
//! - [`op`], [`store`]: elements, stamped operations, and two interchangeable
//!   set implementations with effectful application.
//! - [`lens`]: predicate lenses, the get/put view functions, their
//!   round-tripping law checker, and the operation gates.
//! - [`agent`]: the per-peer event loop — submission, receipt, arbitration,
//!   and relaying with echo suppression.
//! - [`sim`], [`scenario`], [`report`]: a deterministic discrete-event
//!   simulator driven by a plain-text scenario format, with partitions,
//!   heals, and assertions.
//! - [`oracle`], [`random`]: an independent convergence predictor and a
//!   seeded scenario generator for randomized campaigns.
//! - [`fsm`]: a finite-state-machine homomorphism checker.

pub mod agent;
pub mod fsm;
pub mod lens;
pub mod op;
pub mod oracle;
pub mod random;
pub mod report;
pub mod scenario;
pub mod sim;
pub mod store;

pub use agent::{consistent, shared_views, Agent, AgentError, Message, RecvDisposition};
pub use lens::{link_symmetric, shared_domain, LensError, Predicate, PredicateLens};
pub use op::{Element, ModelError, OpId, OpKind, Operation, PeerId, Stamp};
pub use oracle::{oracle_final_views, OracleError};
pub use random::random_scenario;
pub use report::{render_report, render_trace, ReportFormat};
pub use scenario::{parse_scenario, Scenario, ScenarioError};
pub use sim::{run, RunOptions, RunReport, SimError, Simulator};
pub use store::{apply_effectful, stores_equivalent, SetStore, StoreKind};
