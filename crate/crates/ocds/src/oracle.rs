//! Ground-truth predictor for converged shared views.
//!
//! Given a scenario and the stamped operations its agents accepted, this
//! module computes what every link's shared view must contain once the
//! network quiesces — without queues, gateways, partitions, or relays. For
//! each element it finds the peers connected by links whose shared domain
//! admits the element, replays that group's operations in stamp order against
//! the group's initial membership, and keeps the outcome. Agreement between
//! this replay and the agent machinery is what the randomized campaigns
//! check.
//!
//! Preconditions: every link's lens pair is symmetric, every partition heals,
//! and linked peers start consistent. Scenarios violating these are rejected
//! rather than mispredicted.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use thiserror::Error;

use crate::lens::shared_domain;
use crate::op::{Element, OpKind, Operation, PeerId};
use crate::scenario::{normalize_pair, Action, Scenario};

/// Expected shared view per link, keyed by normalized endpoint pair.
pub type ExpectedViews = BTreeMap<(PeerId, PeerId), BTreeSet<Element>>;

#[derive(Error, Debug, Clone, PartialEq, Eq)]
pub enum OracleError {
    #[error("link {0} {1} admits {2} in one direction only; oracle requires symmetric lenses")]
    AsymmetricLink(PeerId, PeerId, Element),
    #[error("partition of {0} {1} is never healed")]
    UnhealedPartition(PeerId, PeerId),
    #[error("element {element} starts in {holder} but not in {missing}, which share it")]
    InconsistentInitial {
        element: Element,
        holder: PeerId,
        missing: PeerId,
    },
}

pub fn oracle_final_views(
    scenario: &Scenario,
    accepted_ops: &[Operation],
) -> Result<ExpectedViews, OracleError> {
    check_partitions_heal(scenario)?;

    // Everything an op or an initial store mentions; other elements cannot
    // appear in any view.
    let mut candidates: BTreeSet<Element> = accepted_ops.iter().filter_map(|o| o.element()).collect();
    for peer in &scenario.peers {
        candidates.extend(peer.initial.iter().copied());
    }

    // Per-link shared-domain predicates, validated to be direction-agnostic
    // on the candidate elements.
    let mut domains = Vec::with_capacity(scenario.links.len());
    for link in &scenario.links {
        let lens_a = &scenario.peer(&link.a).expect("validated scenario").lens;
        let lens_b = &scenario.peer(&link.b).expect("validated scenario").lens;
        let ab = shared_domain(lens_a, lens_b);
        let ba = shared_domain(lens_b, lens_a);
        for &e in &candidates {
            if ab.eval(e) != ba.eval(e) {
                return Err(OracleError::AsymmetricLink(link.a.clone(), link.b.clone(), e));
            }
        }
        domains.push(ab);
    }

    let mut views: ExpectedViews = scenario
        .links
        .iter()
        .map(|l| (l.key(), BTreeSet::new()))
        .collect();

    for &e in &candidates {
        // Peers joined by links that admit `e` form a group whose membership
        // of `e` must converge together.
        let mut adjacency: BTreeMap<&PeerId, Vec<&PeerId>> = BTreeMap::new();
        for (link, domain) in scenario.links.iter().zip(&domains) {
            if domain.eval(e) {
                adjacency.entry(&link.a).or_default().push(&link.b);
                adjacency.entry(&link.b).or_default().push(&link.a);
            }
        }

        let mut assigned: BTreeMap<&PeerId, bool> = BTreeMap::new();
        for peer in &scenario.peers {
            if assigned.contains_key(&peer.id) || !adjacency.contains_key(&peer.id) {
                continue;
            }
            let group = flood(&peer.id, &adjacency);
            let final_membership = replay_group(scenario, accepted_ops, e, &group)?;
            for member in group {
                assigned.insert(member, final_membership);
            }
        }

        for (link, domain) in scenario.links.iter().zip(&domains) {
            if domain.eval(e) && assigned[&link.a] {
                views.get_mut(&link.key()).expect("inserted above").insert(e);
            }
        }
    }
    Ok(views)
}

/// Connected component of `start` in the element's link graph.
fn flood<'a>(start: &'a PeerId, adjacency: &BTreeMap<&'a PeerId, Vec<&'a PeerId>>) -> Vec<&'a PeerId> {
    let mut seen: BTreeSet<&PeerId> = [start].into();
    let mut queue: VecDeque<&PeerId> = [start].into();
    while let Some(peer) = queue.pop_front() {
        for &next in adjacency.get(peer).into_iter().flatten() {
            if seen.insert(next) {
                queue.push_back(next);
            }
        }
    }
    seen.into_iter().collect()
}

/// Replays the group's accepted operations on `e` in stamp order, starting
/// from the group's (necessarily shared) initial membership.
fn replay_group(
    scenario: &Scenario,
    accepted_ops: &[Operation],
    e: Element,
    group: &[&PeerId],
) -> Result<bool, OracleError> {
    let mut initial: Option<(bool, &PeerId)> = None;
    for &member in group {
        let holds = scenario
            .peer(member)
            .expect("validated scenario")
            .initial
            .contains(&e);
        match initial {
            None => initial = Some((holds, member)),
            Some((prior, witness)) if prior != holds => {
                let (holder, missing) = if prior { (witness, member) } else { (member, witness) };
                return Err(OracleError::InconsistentInitial {
                    element: e,
                    holder: holder.clone(),
                    missing: missing.clone(),
                });
            }
            Some(_) => {}
        }
    }
    let mut membership = initial.is_some_and(|(holds, _)| holds);

    let mut relevant: Vec<&Operation> = accepted_ops
        .iter()
        .filter(|op| op.element() == Some(e) && group.iter().any(|&g| g == op.origin()))
        .collect();
    relevant.sort_by_key(|op| op.stamp());
    for op in relevant {
        match op.kind() {
            OpKind::Insert => membership = true,
            OpKind::Delete => membership = false,
            OpKind::Identity => {}
        }
    }
    Ok(membership)
}

fn check_partitions_heal(scenario: &Scenario) -> Result<(), OracleError> {
    let mut down: BTreeSet<(PeerId, PeerId)> = BTreeSet::new();
    for ev in &scenario.events {
        match &ev.action {
            Action::Partition { a, b } => {
                down.insert(normalize_pair(a, b));
            }
            Action::Heal { a, b } => {
                down.remove(&normalize_pair(a, b));
            }
            _ => {}
        }
    }
    match down.into_iter().next() {
        Some((a, b)) => Err(OracleError::UnhealedPartition(a, b)),
        None => Ok(()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::parse_scenario;
    use crate::sim::{run, RunOptions};

    const STORY1: &str = include_str!("../../../scenarios/story1.ocds");

    fn pid(name: &str) -> PeerId {
        PeerId::new(name).unwrap()
    }

    #[test]
    fn story_one_expects_shared_six() {
        let scenario = parse_scenario(STORY1).unwrap();
        let report = run(&scenario, &RunOptions::default()).unwrap();
        let views = oracle_final_views(&scenario, &report.accepted_ops).unwrap();
        let expected: BTreeSet<Element> = [Element(6)].into();
        assert_eq!(views[&(pid("P"), pid("Q"))], expected);
    }

    #[test]
    fn no_ops_means_initial_shared_views() {
        let text = "\
peer P store=sorted offer=\"x % 2 == 0\" accept=\"x % 2 == 0\"
peer Q store=sorted offer=\"x % 2 == 0\" accept=\"x % 2 == 0\"
link P Q
init P {2,3,4}
init Q {1,2,4}
";
        let scenario = parse_scenario(text).unwrap();
        let views = oracle_final_views(&scenario, &[]).unwrap();
        let expected: BTreeSet<Element> = [Element(2), Element(4)].into();
        assert_eq!(views[&(pid("P"), pid("Q"))], expected);
    }

    #[test]
    fn rejects_unhealed_partition() {
        let text = "\
peer P store=sorted offer=\"true\" accept=\"true\"
peer Q store=sorted offer=\"true\" accept=\"true\"
link P Q
at 1 partition P Q
";
        let scenario = parse_scenario(text).unwrap();
        assert!(matches!(
            oracle_final_views(&scenario, &[]),
            Err(OracleError::UnhealedPartition(..))
        ));
    }

    #[test]
    fn rejects_inconsistent_initial_states() {
        let text = "\
peer P store=sorted offer=\"true\" accept=\"true\"
peer Q store=sorted offer=\"true\" accept=\"true\"
link P Q
init P {1}
";
        let scenario = parse_scenario(text).unwrap();
        assert!(matches!(
            oracle_final_views(&scenario, &[]),
            Err(OracleError::InconsistentInitial { .. })
        ));
    }

    #[test]
    fn rejects_asymmetric_lenses() {
        let text = "\
peer P store=sorted offer=\"x % 2 == 0\" accept=\"x % 2 == 0\"
peer Q store=sorted offer=\"x % 3 == 0\" accept=\"true\"
link P Q
init P {2}
";
        let scenario = parse_scenario(text).unwrap();
        assert!(matches!(
            oracle_final_views(&scenario, &[]),
            Err(OracleError::AsymmetricLink(..))
        ));
    }

    #[test]
    fn group_replay_orders_by_stamp_not_arrival() {
        // Insert at lamport 9 beats delete at lamport 4 on the same element.
        let text = "\
peer P store=sorted offer=\"true\" accept=\"true\"
peer Q store=sorted offer=\"true\" accept=\"true\"
link P Q
init P {5}
init Q {5}
";
        let scenario = parse_scenario(text).unwrap();
        let ops = [
            Operation::delete(Element(5), pid("Q"), 4, 0),
            Operation::insert(Element(5), pid("P"), 9, 0),
        ];
        let views = oracle_final_views(&scenario, &ops).unwrap();
        assert!(views[&(pid("P"), pid("Q"))].contains(&Element(5)));

        let ops = [
            Operation::delete(Element(5), pid("Q"), 14, 1),
            Operation::insert(Element(5), pid("P"), 9, 0),
        ];
        let views = oracle_final_views(&scenario, &ops).unwrap();
        assert!(!views[&(pid("P"), pid("Q"))].contains(&Element(5)));
    }

    #[test]
    fn disconnected_groups_evolve_independently() {
        // P-Q share evens, Q-R share triples: element 2 binds only P-Q,
        // element 3 only Q-R, element 6 spans all three.
        let text = "\
peer P store=sorted offer=\"x % 2 == 0\" accept=\"x % 2 == 0\"
peer Q store=sorted offer=\"true\" accept=\"true\"
peer R store=sorted offer=\"x % 3 == 0\" accept=\"x % 3 == 0\"
link P Q
link Q R
";
        let scenario = parse_scenario(text).unwrap();
        let ops = [
            Operation::insert(Element(2), pid("P"), 1, 0),
            Operation::insert(Element(3), pid("R"), 1, 0),
            Operation::insert(Element(6), pid("Q"), 1, 0),
        ];
        let views = oracle_final_views(&scenario, &ops).unwrap();
        let pq = &views[&(pid("P"), pid("Q"))];
        let qr = &views[&(pid("Q"), pid("R"))];
        assert_eq!(pq, &BTreeSet::from([Element(2), Element(6)]));
        assert_eq!(qr, &BTreeSet::from([Element(3), Element(6)]));
    }
}
