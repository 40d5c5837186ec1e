//! Federated Byzantine agreement: quorum slices, the quorum predicate,
//! quorum enumeration and intersection checks, and single-round federated
//! voting on candidate blocks.
//!
//! A quorum is a nonempty node set that contains, for each of its members,
//! at least one complete slice of that member. Voting is one synchronous
//! round: honest nodes accept any candidate, byzantine nodes reject (the
//! worst case for liveness in this model), and a value is accepted when some
//! quorum consists entirely of accepting nodes.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng;
use crate::scoping::Scope;

pub type NodeId = String;

/// Exhaustive quorum enumeration is bounded to this many nodes.
pub const MAX_ENUMERATION_NODES: usize = 20;

#[derive(Debug, Error)]
pub enum ConsensusError {
    #[error("node {0} declares no quorum slices")]
    NoSlices(NodeId),
    #[error("node {0} declares an empty quorum slice")]
    EmptySlice(NodeId),
    #[error("node {node} lists unknown node {member} in a slice")]
    UnknownSliceMember { node: NodeId, member: NodeId },
    #[error("duplicate node id {0}")]
    DuplicateNode(NodeId),
    #[error("unknown node id {0}")]
    UnknownNode(NodeId),
    #[error("network has {size} nodes; exhaustive enumeration is capped at {MAX_ENUMERATION_NODES}")]
    NetworkTooLarge { size: usize },
    #[error("unreadable network description: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed network description: {0}")]
    Format(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Role {
    EdgeServer,
    IotDevice,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Behavior {
    Honest,
    Byzantine,
}

/// A set of nodes that the declaring node trusts as a unit.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QuorumSlice {
    pub members: BTreeSet<NodeId>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FbaNode {
    pub node_id: NodeId,
    pub role: Role,
    pub behavior: Behavior,
    pub slices: Vec<QuorumSlice>,
}

/// Validated FBA network. Node order (and therefore bit positions in the
/// cached slice masks) is ascending by node id.
#[derive(Debug, Clone)]
pub struct FbaNetwork {
    nodes: BTreeMap<NodeId, FbaNode>,
    ids: Vec<NodeId>,
    // slice_masks[i] holds node i's slices as bitsets over `ids`.
    slice_masks: Vec<Vec<Mask>>,
    // Lazily computed greatest honest quorum; voting is called once per
    // chain append, so the fixpoint search must not rerun every time.
    vote_cache: OnceLock<Option<Mask>>,
}

type Mask = Vec<u64>;

fn mask_words(n: usize) -> usize {
    n.div_ceil(64)
}

fn set_bit(mask: &mut Mask, i: usize) {
    mask[i / 64] |= 1 << (i % 64);
}

fn test_bit(mask: &Mask, i: usize) -> bool {
    mask[i / 64] & (1 << (i % 64)) != 0
}

fn is_subset(a: &Mask, b: &Mask) -> bool {
    a.iter().zip(b).all(|(x, y)| x & !y == 0)
}

fn is_empty_mask(mask: &Mask) -> bool {
    mask.iter().all(|&w| w == 0)
}

impl FbaNetwork {
    /// Validates the node list and caches slice bitsets.
    pub fn new(nodes: Vec<FbaNode>) -> Result<Self, ConsensusError> {
        let mut map = BTreeMap::new();
        for node in nodes {
            if node.slices.is_empty() {
                return Err(ConsensusError::NoSlices(node.node_id));
            }
            if node.slices.iter().any(|s| s.members.is_empty()) {
                return Err(ConsensusError::EmptySlice(node.node_id));
            }
            let id = node.node_id.clone();
            if map.insert(id.clone(), node).is_some() {
                return Err(ConsensusError::DuplicateNode(id));
            }
        }
        let ids: Vec<NodeId> = map.keys().cloned().collect();
        let index: BTreeMap<&NodeId, usize> =
            ids.iter().enumerate().map(|(i, id)| (id, i)).collect();
        let words = mask_words(ids.len());
        let mut slice_masks = Vec::with_capacity(ids.len());
        for id in &ids {
            let node = &map[id];
            let mut masks = Vec::with_capacity(node.slices.len());
            for slice in &node.slices {
                let mut mask = vec![0u64; words];
                for member in &slice.members {
                    let Some(&i) = index.get(member) else {
                        return Err(ConsensusError::UnknownSliceMember {
                            node: id.clone(),
                            member: member.clone(),
                        });
                    };
                    set_bit(&mut mask, i);
                }
                masks.push(mask);
            }
            slice_masks.push(masks);
        }
        Ok(FbaNetwork {
            nodes: map,
            ids,
            slice_masks,
            vote_cache: OnceLock::new(),
        })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Node ids, ascending.
    pub fn ids(&self) -> &[NodeId] {
        &self.ids
    }

    pub fn node(&self, id: &str) -> Option<&FbaNode> {
        self.nodes.get(id)
    }

    pub fn nodes(&self) -> impl Iterator<Item = &FbaNode> {
        self.nodes.values()
    }

    /// Flips a node's behavior; the quorum structure is unaffected.
    pub fn set_behavior(&mut self, id: &str, behavior: Behavior) -> Result<(), ConsensusError> {
        match self.nodes.get_mut(id) {
            Some(node) => {
                node.behavior = behavior;
                self.vote_cache = OnceLock::new();
                Ok(())
            }
            None => Err(ConsensusError::UnknownNode(id.to_string())),
        }
    }

    fn index_of(&self, id: &str) -> Result<usize, ConsensusError> {
        self.ids
            .binary_search_by(|probe| probe.as_str().cmp(id))
            .map_err(|_| ConsensusError::UnknownNode(id.to_string()))
    }

    fn mask_of(&self, set: &BTreeSet<NodeId>) -> Result<Mask, ConsensusError> {
        let mut mask = vec![0u64; mask_words(self.len())];
        for id in set {
            set_bit(&mut mask, self.index_of(id)?);
        }
        Ok(mask)
    }

    fn set_of(&self, mask: &Mask) -> BTreeSet<NodeId> {
        self.ids
            .iter()
            .enumerate()
            .filter(|&(i, _)| test_bit(mask, i))
            .map(|(_, id)| id.clone())
            .collect()
    }

    /// True when every member of `mask` has at least one slice inside it.
    fn is_quorum_mask(&self, mask: &Mask) -> bool {
        if is_empty_mask(mask) {
            return false;
        }
        (0..self.len()).all(|i| {
            !test_bit(mask, i) || self.slice_masks[i].iter().any(|s| is_subset(s, mask))
        })
    }

    /// Drops members without a contained slice until a fixpoint. The result
    /// is the unique maximal quorum inside `mask`, or all-zero if none.
    fn greatest_quorum_mask(&self, mask: &Mask) -> Mask {
        let mut current = mask.clone();
        loop {
            let mut next = current.clone();
            let mut changed = false;
            for i in 0..self.len() {
                if test_bit(&current, i)
                    && !self.slice_masks[i].iter().any(|s| is_subset(s, &current))
                {
                    next[i / 64] &= !(1 << (i % 64));
                    changed = true;
                }
            }
            if !changed {
                return current;
            }
            current = next;
        }
    }

    fn honest_quorum_mask(&self) -> Option<&Mask> {
        self.vote_cache
            .get_or_init(|| {
                let mut honest = vec![0u64; mask_words(self.len())];
                for (i, id) in self.ids.iter().enumerate() {
                    if self.nodes[id].behavior == Behavior::Honest {
                        set_bit(&mut honest, i);
                    }
                }
                let greatest = self.greatest_quorum_mask(&honest);
                if is_empty_mask(&greatest) {
                    None
                } else {
                    Some(greatest)
                }
            })
            .as_ref()
    }

    /// The vote decision alone, without materializing the agreeing quorum.
    pub(crate) fn vote_accepts(&self) -> bool {
        self.honest_quorum_mask().is_some()
    }
}

/// True iff `candidate` is nonempty and every member has a slice contained
/// in `candidate`.
pub fn is_quorum(
    network: &FbaNetwork,
    candidate: &BTreeSet<NodeId>,
) -> Result<bool, ConsensusError> {
    let mask = network.mask_of(candidate)?;
    Ok(network.is_quorum_mask(&mask))
}

/// The unique maximal quorum contained in `subset`, if any.
pub fn greatest_quorum(
    network: &FbaNetwork,
    subset: &BTreeSet<NodeId>,
) -> Result<Option<BTreeSet<NodeId>>, ConsensusError> {
    let mask = network.mask_of(subset)?;
    let greatest = network.greatest_quorum_mask(&mask);
    if is_empty_mask(&greatest) {
        Ok(None)
    } else {
        Ok(Some(network.set_of(&greatest)))
    }
}

/// All inclusion-minimal quorums, exhaustively over 2^n subsets.
/// Output is ordered by size, then lexicographically by member list.
pub fn enumerate_minimal_quorums(
    network: &FbaNetwork,
) -> Result<Vec<BTreeSet<NodeId>>, ConsensusError> {
    let n = network.len();
    if n > MAX_ENUMERATION_NODES {
        return Err(ConsensusError::NetworkTooLarge { size: n });
    }
    let mut quorums: Vec<u32> = Vec::new();
    for candidate in 1u32..(1u32 << n) {
        let mask = vec![candidate as u64];
        if network.is_quorum_mask(&mask) {
            quorums.push(candidate);
        }
    }
    quorums.sort_unstable_by_key(|q| (q.count_ones(), *q));
    let mut minimal: Vec<u32> = Vec::new();
    for q in quorums {
        if !minimal.iter().any(|&m| m & q == m) {
            minimal.push(q);
        }
    }
    let mut out: Vec<BTreeSet<NodeId>> = minimal
        .into_iter()
        .map(|m| network.set_of(&vec![m as u64]))
        .collect();
    out.sort_by(|a, b| {
        (a.len(), a.iter().collect::<Vec<_>>()).cmp(&(b.len(), b.iter().collect::<Vec<_>>()))
    });
    Ok(out)
}

/// True iff every pair of minimal quorums shares at least one node.
pub fn quorums_intersect(network: &FbaNetwork) -> Result<bool, ConsensusError> {
    let minimal = enumerate_minimal_quorums(network)?;
    let masks: Vec<Mask> = minimal
        .iter()
        .map(|q| network.mask_of(q).expect("members come from the network"))
        .collect();
    for (i, a) in masks.iter().enumerate() {
        for b in &masks[i + 1..] {
            if a.iter().zip(b).all(|(x, y)| x & y == 0) {
                return Ok(false);
            }
        }
    }
    Ok(true)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VoteOutcome {
    pub accepted: bool,
    pub agreeing_quorum: Option<BTreeSet<NodeId>>,
}

/// One synchronous voting round over a candidate digest. Honest nodes vote
/// accept, byzantine nodes vote reject, and the candidate is accepted iff the
/// accepting nodes contain a quorum; the maximal such quorum is returned.
pub fn federated_vote(network: &FbaNetwork, _digest: &[u8]) -> VoteOutcome {
    let agreeing = network.honest_quorum_mask().map(|m| network.set_of(m));
    VoteOutcome {
        accepted: agreeing.is_some(),
        agreeing_quorum: agreeing,
    }
}

/// Classical Byzantine agreement bound: the largest f with 3f + 1 ≤ n.
pub fn ba_tolerance(n: usize) -> usize {
    assert!(n >= 1, "tolerance is defined for at least one node");
    (n - 1) / 3
}

/// Builds the consensus network for one scope: an edge server per member
/// microcell plus `devices_per_microcell` devices per microcell. Every node
/// gets a single slice holding its own microcell's edge server plus
/// `slice_size - 1` distinct random peers from the same scope.
pub fn build_scope_network(
    scope: &Scope,
    devices_per_microcell: usize,
    slice_size: usize,
    seed: u64,
) -> FbaNetwork {
    assert!(slice_size >= 1, "slices must have at least one member");
    let mut ids: Vec<(NodeId, NodeId, Role)> = Vec::new();
    for &cell in &scope.members {
        let server = format!("es-{cell}");
        ids.push((server.clone(), server.clone(), Role::EdgeServer));
        for k in 0..devices_per_microcell {
            ids.push((format!("dev-{cell}-{k}"), server.clone(), Role::IotDevice));
        }
    }
    ids.sort_by(|a, b| a.0.cmp(&b.0));
    let all: Vec<NodeId> = ids.iter().map(|(id, _, _)| id.clone()).collect();
    let mut rng = rng::stream(seed, "quorum-slices", &[scope.scope_id]);
    let nodes = ids
        .into_iter()
        .map(|(id, server, role)| {
            let mut members = BTreeSet::from([server]);
            let mut pool: Vec<&NodeId> = all
                .iter()
                .filter(|&peer| *peer != id && !members.contains(peer))
                .collect();
            let extra = (slice_size - 1).min(pool.len());
            for _ in 0..extra {
                let pick = rand::Rng::gen_range(&mut rng, 0..pool.len());
                members.insert(pool.swap_remove(pick).clone());
            }
            FbaNode {
                node_id: id,
                role,
                behavior: Behavior::Honest,
                slices: vec![QuorumSlice { members }],
            }
        })
        .collect();
    FbaNetwork::new(nodes).expect("generated network references only its own nodes")
}

#[derive(Serialize, Deserialize)]
struct NodeSpec {
    role: Role,
    behavior: Behavior,
    slices: Vec<Vec<NodeId>>,
}

/// Writes the network as a JSON map node_id → {role, behavior, slices}.
pub fn write_network<W: Write>(network: &FbaNetwork, out: W) -> Result<(), ConsensusError> {
    let spec: BTreeMap<&NodeId, NodeSpec> = network
        .nodes()
        .map(|node| {
            (
                &node.node_id,
                NodeSpec {
                    role: node.role,
                    behavior: node.behavior,
                    slices: node
                        .slices
                        .iter()
                        .map(|s| s.members.iter().cloned().collect())
                        .collect(),
                },
            )
        })
        .collect();
    serde_json::to_writer_pretty(out, &spec)?;
    Ok(())
}

/// Reads and validates a network description written by [`write_network`].
pub fn read_network<R: Read>(source: R) -> Result<FbaNetwork, ConsensusError> {
    let spec: BTreeMap<NodeId, NodeSpec> = serde_json::from_reader(source)?;
    let nodes = spec
        .into_iter()
        .map(|(node_id, spec)| FbaNode {
            node_id,
            role: spec.role,
            behavior: spec.behavior,
            slices: spec
                .slices
                .into_iter()
                .map(|members| QuorumSlice {
                    members: members.into_iter().collect(),
                })
                .collect(),
        })
        .collect();
    FbaNetwork::new(nodes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn node(id: &str, slices: &[&[&str]]) -> FbaNode {
        FbaNode {
            node_id: id.to_string(),
            role: Role::EdgeServer,
            behavior: Behavior::Honest,
            slices: slices
                .iter()
                .map(|s| QuorumSlice {
                    members: s.iter().map(|m| m.to_string()).collect(),
                })
                .collect(),
        }
    }

    fn ids(names: &[&str]) -> BTreeSet<NodeId> {
        names.iter().map(|n| n.to_string()).collect()
    }

    /// The three-node example: A trusts {B,C}, B trusts {C}, C trusts {A,B}.
    fn abc_network() -> FbaNetwork {
        FbaNetwork::new(vec![
            node("A", &[&["B", "C"]]),
            node("B", &[&["C"]]),
            node("C", &[&["A", "B"]]),
        ])
        .unwrap()
    }

    /// As above but A's slice additionally requires D.
    fn abcd_network() -> FbaNetwork {
        FbaNetwork::new(vec![
            node("A", &[&["B", "C", "D"]]),
            node("B", &[&["C"]]),
            node("C", &[&["A", "B"]]),
            node("D", &[&["D"]]),
        ])
        .unwrap()
    }

    /// Brute force: checks the quorum predicate directly from slice sets.
    fn naive_is_quorum(network: &FbaNetwork, candidate: &BTreeSet<NodeId>) -> bool {
        !candidate.is_empty()
            && candidate.iter().all(|id| {
                network
                    .node(id)
                    .expect("candidate drawn from network")
                    .slices
                    .iter()
                    .any(|slice| slice.members.is_subset(candidate))
            })
    }

    fn naive_minimal_quorums(network: &FbaNetwork) -> Vec<BTreeSet<NodeId>> {
        let ids = network.ids();
        let n = ids.len();
        let mut quorums: Vec<BTreeSet<NodeId>> = Vec::new();
        for mask in 1u32..(1 << n) {
            let candidate: BTreeSet<NodeId> = (0..n)
                .filter(|i| mask & (1 << i) != 0)
                .map(|i| ids[i].clone())
                .collect();
            if naive_is_quorum(network, &candidate) {
                quorums.push(candidate);
            }
        }
        let mut minimal: Vec<BTreeSet<NodeId>> = Vec::new();
        for q in &quorums {
            if !quorums.iter().any(|other| other != q && other.is_subset(q)) {
                minimal.push(q.clone());
            }
        }
        minimal.sort_by(|a, b| {
            (a.len(), a.iter().collect::<Vec<_>>()).cmp(&(b.len(), b.iter().collect::<Vec<_>>()))
        });
        minimal
    }

    /// Random small network; node i always lists itself somewhere so that
    /// validation holds and quorums exist for some subsets.
    fn random_network(n: usize, seed: u64) -> FbaNetwork {
        let mut rng = rng::stream(seed, "test-network", &[n as u64]);
        let names: Vec<String> = (0..n).map(|i| format!("n{i:02}")).collect();
        let nodes = names
            .iter()
            .map(|name| {
                let slice_count = rand::Rng::gen_range(&mut rng, 1..=3);
                let slices = (0..slice_count)
                    .map(|_| {
                        let size = rand::Rng::gen_range(&mut rng, 1..=n.min(4));
                        let mut members = BTreeSet::new();
                        while members.len() < size {
                            let pick = rand::Rng::gen_range(&mut rng, 0..n);
                            members.insert(names[pick].clone());
                        }
                        QuorumSlice { members }
                    })
                    .collect();
                FbaNode {
                    node_id: name.clone(),
                    role: Role::IotDevice,
                    behavior: Behavior::Honest,
                    slices,
                }
            })
            .collect();
        FbaNetwork::new(nodes).unwrap()
    }

    #[test]
    fn three_node_example_forms_a_quorum() {
        let network = abc_network();
        assert!(is_quorum(&network, &ids(&["A", "B", "C"])).unwrap());
    }

    #[test]
    fn widened_slice_breaks_the_quorum() {
        let network = abcd_network();
        assert!(!is_quorum(&network, &ids(&["A", "B", "C"])).unwrap());
        assert!(is_quorum(&network, &ids(&["A", "B", "C", "D"])).unwrap());
    }

    #[test]
    fn subset_without_contained_slice_is_no_quorum() {
        let network = abc_network();
        // C's only slice {A,B} is not inside {B,C}.
        assert!(!is_quorum(&network, &ids(&["B", "C"])).unwrap());
        assert!(!is_quorum(&network, &ids(&[])).unwrap());
    }

    #[test]
    fn unknown_candidate_member_is_an_error() {
        let network = abc_network();
        assert!(matches!(
            is_quorum(&network, &ids(&["A", "Z"])),
            Err(ConsensusError::UnknownNode(_))
        ));
    }

    #[test]
    fn validation_rejects_unknown_slice_members_and_empty_slices() {
        assert!(matches!(
            FbaNetwork::new(vec![node("A", &[&["B"]])]),
            Err(ConsensusError::UnknownSliceMember { .. })
        ));
        assert!(matches!(
            FbaNetwork::new(vec![node("A", &[&[]])]),
            Err(ConsensusError::EmptySlice(_))
        ));
        assert!(matches!(
            FbaNetwork::new(vec![FbaNode {
                node_id: "A".into(),
                role: Role::EdgeServer,
                behavior: Behavior::Honest,
                slices: vec![],
            }]),
            Err(ConsensusError::NoSlices(_))
        ));
    }

    #[test]
    fn minimal_quorums_of_the_example_network() {
        let network = abc_network();
        assert_eq!(
            enumerate_minimal_quorums(&network).unwrap(),
            vec![ids(&["A", "B", "C"])]
        );
    }

    #[test]
    fn self_trusting_single_node_is_its_own_quorum() {
        let network = FbaNetwork::new(vec![node("A", &[&["A"]])]).unwrap();
        assert_eq!(
            enumerate_minimal_quorums(&network).unwrap(),
            vec![ids(&["A"])]
        );
        assert!(quorums_intersect(&network).unwrap());
    }

    #[test]
    fn enumeration_matches_brute_force_on_random_networks() {
        for seed in 0..60 {
            let n = 1 + (seed as usize % 10);
            let network = random_network(n, seed);
            assert_eq!(
                enumerate_minimal_quorums(&network).unwrap(),
                naive_minimal_quorums(&network),
                "seed {seed}"
            );
        }
    }

    #[test]
    fn enumeration_rejects_oversized_networks() {
        let network = random_network(21, 0);
        assert!(matches!(
            enumerate_minimal_quorums(&network),
            Err(ConsensusError::NetworkTooLarge { size: 21 })
        ));
    }

    #[test]
    fn disjoint_islands_do_not_intersect() {
        let network = FbaNetwork::new(vec![
            node("A", &[&["B"]]),
            node("B", &[&["A"]]),
            node("C", &[&["D"]]),
            node("D", &[&["C"]]),
        ])
        .unwrap();
        assert!(!quorums_intersect(&network).unwrap());
        assert!(quorums_intersect(&abc_network()).unwrap());
    }

    #[test]
    fn quorum_grows_monotonically_under_closure() {
        // If S is a quorum and T ⊇ S only adds nodes with a slice inside T,
        // then T is a quorum. Exhaustive check against the naive predicate.
        for seed in 0..20 {
            let n = 2 + (seed as usize % 7);
            let network = random_network(n, 1000 + seed);
            let ids = network.ids().to_vec();
            for s_mask in 1u32..(1 << n) {
                let s: BTreeSet<NodeId> = (0..n)
                    .filter(|i| s_mask & (1 << i) != 0)
                    .map(|i| ids[i].clone())
                    .collect();
                if !naive_is_quorum(&network, &s) {
                    continue;
                }
                for t_mask in 1u32..(1 << n) {
                    if t_mask & s_mask != s_mask {
                        continue;
                    }
                    let t: BTreeSet<NodeId> = (0..n)
                        .filter(|i| t_mask & (1 << i) != 0)
                        .map(|i| ids[i].clone())
                        .collect();
                    let additions_covered = t.iter().all(|id| {
                        s.contains(id)
                            || network
                                .node(id)
                                .unwrap()
                                .slices
                                .iter()
                                .any(|slice| slice.members.is_subset(&t))
                    });
                    if additions_covered {
                        assert!(is_quorum(&network, &t).unwrap(), "seed {seed}");
                    }
                }
            }
        }
    }

    #[test]
    fn all_honest_vote_accepts_with_full_quorum() {
        let network = abc_network();
        let outcome = federated_vote(&network, b"digest");
        assert!(outcome.accepted);
        assert_eq!(outcome.agreeing_quorum, Some(ids(&["A", "B", "C"])));
    }

    #[test]
    fn single_byzantine_node_blocks_the_example_network() {
        let mut network = abc_network();
        network.set_behavior("C", Behavior::Byzantine).unwrap();
        let outcome = federated_vote(&network, b"digest");
        assert!(!outcome.accepted);
        assert_eq!(outcome.agreeing_quorum, None);
    }

    #[test]
    fn all_byzantine_vote_rejects() {
        let mut network = abc_network();
        for id in ["A", "B", "C"] {
            network.set_behavior(id, Behavior::Byzantine).unwrap();
        }
        assert!(!federated_vote(&network, b"digest").accepted);
    }

    #[test]
    fn accepted_quorum_contains_only_honest_nodes() {
        for seed in 0..40 {
            let n = 2 + (seed as usize % 9);
            let mut network = random_network(n, 2000 + seed);
            let byzantine: Vec<NodeId> = network
                .ids()
                .iter()
                .take(ba_tolerance(n))
                .cloned()
                .collect();
            for id in &byzantine {
                network.set_behavior(id, Behavior::Byzantine).unwrap();
            }
            let outcome = federated_vote(&network, b"digest");
            if let Some(quorum) = &outcome.agreeing_quorum {
                assert!(outcome.accepted);
                for id in quorum {
                    assert_eq!(network.node(id).unwrap().behavior, Behavior::Honest);
                }
                assert!(is_quorum(&network, quorum).unwrap());
            }
        }
    }

    #[test]
    fn tolerance_matches_the_classical_bound() {
        assert_eq!(ba_tolerance(10), 3);
        assert_eq!(ba_tolerance(1), 0);
        assert_eq!(ba_tolerance(4), 1);
        for f in 0..=100 {
            assert_eq!(ba_tolerance(3 * f + 1), f);
        }
    }

    #[test]
    fn scope_network_has_expected_shape() {
        let scope = Scope {
            scope_id: 1,
            members: BTreeSet::from([10, 20, 30]),
            terminal: 10,
        };
        let network = build_scope_network(&scope, 2, 3, 7);
        assert_eq!(network.len(), 9);
        let servers = network
            .nodes()
            .filter(|n| n.role == Role::EdgeServer)
            .count();
        assert_eq!(servers, 3);
        for node in network.nodes() {
            assert_eq!(node.slices.len(), 1);
            assert!(node.slices[0].members.len() <= 3);
        }
        // Every slice sits inside the full node set, so it is a quorum.
        let all: BTreeSet<NodeId> = network.ids().iter().cloned().collect();
        assert!(is_quorum(&network, &all).unwrap());
    }

    #[test]
    fn scope_network_is_deterministic_per_seed() {
        let scope = Scope {
            scope_id: 4,
            members: BTreeSet::from([1, 2, 3, 4]),
            terminal: 1,
        };
        let a = build_scope_network(&scope, 1, 3, 11);
        let b = build_scope_network(&scope, 1, 3, 11);
        for (x, y) in a.nodes().zip(b.nodes()) {
            assert_eq!(x, y);
        }
    }

    #[test]
    fn single_cell_scope_with_unit_slice_trusts_itself() {
        let scope = Scope {
            scope_id: 9,
            members: BTreeSet::from([9]),
            terminal: 9,
        };
        let network = build_scope_network(&scope, 0, 1, 0);
        assert_eq!(network.len(), 1);
        let node = network.node("es-9").unwrap();
        assert_eq!(node.slices[0].members, ids(&["es-9"]));
        assert!(federated_vote(&network, b"x").accepted);
    }

    #[test]
    fn network_description_round_trips_through_json() {
        let mut network = abcd_network();
        network.set_behavior("D", Behavior::Byzantine).unwrap();
        let mut buf = Vec::new();
        write_network(&network, &mut buf).unwrap();
        let restored = read_network(&buf[..]).unwrap();
        assert_eq!(restored.len(), network.len());
        for (a, b) in network.nodes().zip(restored.nodes()) {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn malformed_network_description_is_rejected() {
        assert!(matches!(
            read_network(&b"not json"[..]),
            Err(ConsensusError::Format(_))
        ));
        // Structurally valid JSON referencing a missing node fails validation.
        let bad = br#"{"A": {"role": "edge-server", "behavior": "honest", "slices": [["Z"]]}}"#;
        assert!(matches!(
            read_network(&bad[..]),
            Err(ConsensusError::UnknownSliceMember { .. })
        ));
    }
}
