//! Seeded random scenarios for convergence campaigns.
//!
//! Each scenario draws 2–4 peers on a line, star, or triangle, gives every
//! peer a symmetric modulo lens, seeds initial stores that agree wherever a
//! link shares an element, and scripts up to 40 operations interleaved with
//! up to 3 partition/heal cycles. Every partition heals, so the run must end
//! consistent on every link.

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::lens::{shared_domain, Predicate, PredicateLens};
use crate::op::{Element, OpKind, PeerId};
use crate::scenario::{Action, EventTime, LinkSpec, PeerSpec, Scenario, SimEvent};
use crate::store::StoreKind;

const PEER_NAMES: [&str; 4] = ["P", "Q", "R", "S"];
const ELEMENT_SPAN: i64 = 30;
const MAX_OPS: usize = 40;
const MAX_PARTITION_CYCLES: usize = 3;
const LAST_OP_TICK: u64 = 48;

fn lens_pool() -> Vec<Predicate> {
    let m = |k, r| Predicate::modulo(k, r).expect("pool moduli are valid");
    vec![
        Predicate::True,
        m(2, 0),
        m(2, 1),
        m(3, 0),
        m(4, 0),
        m(6, 0),
        m(2, 0).or(m(3, 0)),
    ]
}

/// Builds a deterministic random scenario for the given seed.
pub fn random_scenario(seed: u64) -> Scenario {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let n_peers = rng.random_range(2..=4usize);
    let pool = lens_pool();
    let mut peers: Vec<PeerSpec> = (0..n_peers)
        .map(|i| PeerSpec {
            id: PeerId::new(PEER_NAMES[i]).expect("static names are valid"),
            store: if rng.random_bool(0.5) { StoreKind::Sorted } else { StoreKind::Bst },
            lens: PredicateLens::symmetric(pool[rng.random_range(0..pool.len())].clone()),
            initial: BTreeSet::new(),
        })
        .collect();

    let index_pairs: Vec<(usize, usize)> = match n_peers {
        2 => vec![(0, 1)],
        3 => match rng.random_range(0..3u8) {
            0 => vec![(0, 1), (1, 2)],          // line
            1 => vec![(0, 1), (0, 2)],          // star
            _ => vec![(0, 1), (1, 2), (0, 2)],  // triangle
        },
        _ => {
            if rng.random_bool(0.5) {
                vec![(0, 1), (1, 2), (2, 3)]    // line
            } else {
                vec![(0, 1), (0, 2), (0, 3)]    // star
            }
        }
    };
    let links: Vec<LinkSpec> = index_pairs
        .iter()
        .map(|&(i, j)| LinkSpec {
            a: peers[i].id.clone(),
            b: peers[j].id.clone(),
            latency: rng.random_range(1..=3),
        })
        .collect();

    seed_initial_stores(&mut rng, &mut peers, &index_pairs);

    // Scripted operations and partition/heal cycles, merged in time order.
    let mut timed: Vec<(u64, usize, Action)> = Vec::new();
    let mut order = 0..;
    let op_count = rng.random_range(1..=MAX_OPS);
    for _ in 0..op_count {
        let tick = rng.random_range(0..=LAST_OP_TICK);
        let peer = peers[rng.random_range(0..n_peers)].id.clone();
        let kind = if rng.random_bool(0.5) { OpKind::Insert } else { OpKind::Delete };
        let element = Element(rng.random_range(0..ELEMENT_SPAN));
        timed.push((
            tick,
            order.next().expect("infinite"),
            Action::Op { peer, kind, element },
        ));
    }
    for _ in 0..rng.random_range(0..=MAX_PARTITION_CYCLES) {
        let link = &links[rng.random_range(0..links.len())];
        let down_at = rng.random_range(0..=LAST_OP_TICK - 3);
        let up_at = rng.random_range(down_at + 1..=LAST_OP_TICK + 1);
        timed.push((
            down_at,
            order.next().expect("infinite"),
            Action::Partition { a: link.a.clone(), b: link.b.clone() },
        ));
        timed.push((
            up_at,
            order.next().expect("infinite"),
            Action::Heal { a: link.a.clone(), b: link.b.clone() },
        ));
    }
    timed.sort_by_key(|(tick, order, _)| (*tick, *order));

    let mut events: Vec<SimEvent> = timed
        .into_iter()
        .map(|(tick, _, action)| SimEvent { at: EventTime::Tick(tick), action })
        .collect();
    for link in &links {
        events.push(SimEvent {
            at: EventTime::End,
            action: Action::AssertConsistent { a: link.a.clone(), b: link.b.clone() },
        });
    }

    let scenario = Scenario { peers, links, events, seed: 0 };
    scenario.validate().expect("generator produces valid scenarios");
    scenario
}

/// Populates initial stores so that linked peers agree on every element in
/// their shared domain: for each element, the peers transitively connected by
/// admitting links either all hold it or none do.
fn seed_initial_stores(rng: &mut ChaCha8Rng, peers: &mut [PeerSpec], index_pairs: &[(usize, usize)]) {
    for value in 0..ELEMENT_SPAN {
        let e = Element(value);
        // Union-find over the peer indices, joined by admitting links.
        let mut root: Vec<usize> = (0..peers.len()).collect();
        fn find(root: &mut Vec<usize>, i: usize) -> usize {
            if root[i] != i {
                root[i] = find(root, root[i]);
            }
            root[i]
        }
        for &(i, j) in index_pairs {
            let admits = shared_domain(&peers[i].lens, &peers[j].lens).eval(e);
            if admits {
                let (ri, rj) = (find(&mut root, i), find(&mut root, j));
                root[ri] = rj;
            }
        }
        let mut group_holds: Vec<Option<bool>> = vec![None; peers.len()];
        for (i, peer) in peers.iter_mut().enumerate() {
            let r = find(&mut root, i);
            let holds = *group_holds[r].get_or_insert_with(|| rng.random_bool(0.4));
            if holds {
                peer.initial.insert(e);
            }
        }
    }
}
