//! Deterministic fixture builders shared by the benchmarks.

use std::collections::BTreeSet;

use trustscope_core::{
    build_graph, build_scope_network, Behavior, Chain, FbaNetwork, FbaNode, LocationId,
    MicrocellGraph, PreparedDataset, QuorumSlice, Role, Scope, TrustValue,
};

/// Movement graph over the `cells` most-visited microcells of the built-in
/// synthetic world.
pub fn synthetic_graph(cells: usize) -> MicrocellGraph {
    let data = PreparedDataset::synthetic(0);
    let cells: BTreeSet<LocationId> = data.ranked_universe(cells).iter().copied().collect();
    let movements = data.movements_within(&cells);
    build_graph(&movements, &cells)
}

/// Consensus network for a single scope spanning `cells` microcells with
/// `devices` devices each.
pub fn scope_network(cells: u64, devices: usize) -> FbaNetwork {
    let scope = Scope {
        scope_id: 0,
        members: (0..cells).collect(),
        terminal: 0,
    };
    build_scope_network(&scope, devices, 3, 0)
}

/// `n`-node network where node i requires its window {i, i+1, i+2} (mod n),
/// giving the quorum search a long dependency chain to close over.
pub fn ring_network(n: usize) -> FbaNetwork {
    let ids: Vec<String> = (0..n).map(|i| format!("n{i:02}")).collect();
    let nodes = (0..n)
        .map(|i| FbaNode {
            node_id: ids[i].clone(),
            role: Role::EdgeServer,
            behavior: Behavior::Honest,
            slices: vec![QuorumSlice {
                members: (0..3).map(|k| ids[(i + k) % n].clone()).collect(),
            }],
        })
        .collect();
    FbaNetwork::new(nodes).expect("ring network is well formed")
}

/// Chain holding `blocks` consensus-approved records over a small key space,
/// so later blocks overwrite earlier keys the way live traffic does.
pub fn seeded_chain(blocks: usize) -> Chain {
    let network = scope_network(1, 2);
    let mut chain = Chain::new(0);
    for i in 0..blocks {
        chain
            .store(
                &format!("key{}", i % 64),
                TrustValue::Float((i % 100) as f64 / 10.0),
                &network,
            )
            .expect("honest scope accepts");
    }
    chain
}
