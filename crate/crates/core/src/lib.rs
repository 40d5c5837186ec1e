//! Movement-scoped trust information storage.
//!
//! The pipeline turns a location check-in dataset into a running storage
//! simulation in five stages:
//!
//! 1. [`dataset`] parses check-in logs and social edge lists, and derives
//!    user movements between microcells (one microcell per dataset location).
//! 2. [`graph`] aggregates movements into a weighted undirected microcell
//!    graph.
//! 3. [`scoping`] partitions the graph into scopes (weighted label
//!    propagation) and picks a terminal microcell per scope.
//! 4. [`consensus`] and [`ledger`] give every scope a quorum-gated,
//!    hash-chained key-value ledger for trust records.
//! 5. [`sim`] runs a two-phase workload (providers store, consumers
//!    retrieve) over the scoped ledgers and reports storage efficiency and
//!    access-miss metrics; [`experiment`] drives parameter sweeps.
//!
//! Everything downstream of a `(dataset, seed)` pair is bit-reproducible:
//! random choices come from isolated [`rng`] streams.

pub mod consensus;
pub mod dataset;
pub mod experiment;
pub mod graph;
pub mod ledger;
pub mod rng;
pub mod scoping;
pub mod sim;
pub mod synth;

pub use consensus::{
    ba_tolerance, build_scope_network, enumerate_minimal_quorums, federated_vote, greatest_quorum,
    is_quorum, quorums_intersect, Behavior, ConsensusError, FbaNetwork, FbaNode, NodeId,
    QuorumSlice, Role, VoteOutcome,
};
pub use dataset::{
    dataset_stats, derive_movements, location_visitors, parse_checkins, parse_social_edges,
    rank_locations_by_visitors, sample_microcells, CheckIn, DatasetStats, IngestError, LocationId,
    Movement, ParsedCheckIns, ParsedEdges, UserId,
};
pub use experiment::{
    run_experiment, rows_to_csv, summarize, ExperimentError, ExperimentPlan, PreparedDataset,
    SummaryRow, Sweep, SweepRow, CSV_HEADER, DEFAULT_DENSITY_FACTOR,
};
pub use graph::{build_graph, filter_movements, GraphError, MicrocellGraph};
pub use ledger::{
    contract_address, lookup_contract, read_chain_ndjson, verify_blocks, verify_chain,
    write_chain_ndjson, Block, Chain, ContractRegistry, CrossScopeResult, LedgerError,
    ScopedLedgers, TrustRecord, TrustValue,
};
pub use scoping::{
    label_propagation, select_terminals, single_microcell_scopes, Scope, ScopeAssignment, ScopeId,
    DEFAULT_MAX_ITERATIONS,
};
pub use sim::{
    compute_am, compute_se, compute_se_ratio, run_simulation, ProviderTracker, ScopeBreakdown,
    ScopingMode, ServiceSession, SimConfig, SimError, SimResult, PROVIDER_RANK_LIMIT,
    SYNTHETIC_PROVIDER_BASE,
};
pub use synth::{synthetic_checkins, SyntheticWorldConfig};
