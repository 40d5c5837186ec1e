//! Two-phase service-session workload over scoped ledgers.
//!
//! Phase 1 walks every sampled microcell: each of its providers runs a number
//! of service sessions, and every session stores the provider's three trust
//! keys (owner rating, device model, session count) into the microcell's
//! scope chain through consensus. Phase 2 sends consumers through each
//! microcell: a consumer draws query targets from the cell's check-in
//! history (providers of linked cells and the deep visitor pool), retrieves
//! the target's trust keys from the local scope chain, and on a miss routes
//! the lookup to the remaining scopes in ascending order. A record counts as
//! used once any retrieval returns it; misses are counted at the requesting
//! scope even when a remote copy is found.
//!
//! The consumer index drives a growing section window, so early consumers
//! query close to the best-linked cells and later consumers reach deeper
//! into the visitor pool. Draw streams are keyed by (microcell, consumer
//! index) alone, which keeps runs with more consumers a strict superset of
//! runs with fewer and makes the movement fraction invisible to
//! single-microcell scoping.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use thiserror::Error;

use crate::consensus::{build_scope_network, FbaNetwork};
use crate::dataset::{LocationId, Movement, UserId};
use crate::graph::MicrocellGraph;
use crate::ledger::{verify_chain, LedgerError, ScopedLedgers, TrustValue};
use crate::rng;
use crate::scoping::{Scope, ScopeId};

/// Visitor rank where the deep-pool query section starts. Provider prefixes
/// never reach past `max(providers_per_microcell, PROVIDER_RANK_LIMIT)`, so
/// deep-pool targets are never providers of the cell itself.
pub const PROVIDER_RANK_LIMIT: usize = 40;

/// Synthetic provider ids start here; real check-in user ids stay far below.
pub const SYNTHETIC_PROVIDER_BASE: u64 = 1 << 40;
const SYNTHETIC_CELL_STRIDE: u64 = 1 << 20;

// Query-pool shape. A cell links to at most LINK_CAP other cells that share
// at least LINK_MIN_SHARED prefix providers with it; each linked cell
// contributes one section, and the deep visitor pool contributes a final
// section whose weight grows with the provider count.
const LINK_CAP: usize = 4;
const LINK_MIN_SHARED: usize = 3;
const TAIL_LENGTH_FACTOR: usize = 1;
const FOREIGN_SECTION_MASS: f64 = 1.0;
const TAIL_ENTRY_MASS: f64 = 0.1;

/// The section window is calibrated against this many consumers: consumer j
/// of any run sees the window at offset (j+1)/100 regardless of how many
/// consumers the run actually has.
const WINDOW_REFERENCE_CONSUMERS: f64 = 100.0;

/// Queries per consumer, as a fraction of providers_per_microcell (min 1).
const DRAW_RATIO: f64 = 0.25;

const DEVICE_MODELS: [&str; 8] = [
    "camera",
    "thermostat",
    "lock",
    "speaker",
    "light",
    "sensor",
    "tracker",
    "display",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScopingMode {
    /// Movement-derived multi-microcell scopes.
    MultiMicrocell,
    /// One scope per microcell.
    SingleMicrocell,
}

impl ScopingMode {
    pub fn label(self) -> &'static str {
        match self {
            ScopingMode::MultiMicrocell => "mm",
            ScopingMode::SingleMicrocell => "sm",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub microcell_count: usize,
    pub providers_per_microcell: usize,
    pub services_per_microcell: usize,
    pub consumers_per_microcell: usize,
    pub movement_fraction: f64,
    pub scoping_mode: ScopingMode,
    pub devices_per_microcell: usize,
    pub slice_size: usize,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            microcell_count: 5000,
            providers_per_microcell: 40,
            services_per_microcell: 40,
            consumers_per_microcell: 100,
            movement_fraction: 1.0,
            scoping_mode: ScopingMode::MultiMicrocell,
            devices_per_microcell: 2,
            slice_size: 3,
            seed: 0,
        }
    }
}

/// One provisioning period of a service at a microcell.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ServiceSession {
    pub provider_id: UserId,
    pub microcell_id: LocationId,
    /// Absent iff this is the provider's first session in the run. A repeat
    /// session at the same cell reports that cell (recorded, but such a
    /// self-transition never becomes a graph edge).
    pub previous_microcell_id: Option<LocationId>,
    /// 0-based, counted per provider across the whole run.
    pub session_index: u64,
}

/// Per-provider session state for a run.
#[derive(Debug, Default)]
pub struct ProviderTracker {
    state: BTreeMap<UserId, (LocationId, u64)>,
}

impl ProviderTracker {
    pub fn new() -> Self {
        Self::default()
    }

    /// Opens the provider's next session at `microcell`, reporting the
    /// previous microcell so the receiving cell can log the movement.
    pub fn announce_session(&mut self, provider: UserId, microcell: LocationId) -> ServiceSession {
        let prior = self.state.get(&provider).copied();
        let session_index = prior.map_or(0, |(_, count)| count);
        self.state.insert(provider, (microcell, session_index + 1));
        ServiceSession {
            provider_id: provider,
            microcell_id: microcell,
            previous_microcell_id: prior.map(|(cell, _)| cell),
            session_index,
        }
    }

    /// Sessions announced so far for this provider.
    pub fn session_count(&self, provider: UserId) -> u64 {
        self.state.get(&provider).map_or(0, |&(_, count)| count)
    }
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error("movement fraction {0} is outside [0, 1]")]
    InvalidFraction(f64),
    #[error("microcell {0} is not covered by any scope")]
    UncoveredMicrocell(LocationId),
    #[error("misses ({misses}) exceed accesses ({accesses})")]
    MissesExceedAccesses { misses: u64, accesses: u64 },
    #[error(transparent)]
    Ledger(#[from] LedgerError),
}

/// Storage efficiency as a fraction of all stored records: used / (used +
/// unused), 0 when nothing was stored.
pub fn compute_se(used: u64, unused: u64) -> f64 {
    let total = used + unused;
    if total == 0 {
        0.0
    } else {
        used as f64 / total as f64
    }
}

/// The literal used : unused ratio; 0 when the denominator is 0.
pub fn compute_se_ratio(used: u64, unused: u64) -> f64 {
    if unused == 0 {
        0.0
    } else {
        used as f64 / unused as f64
    }
}

/// Miss fraction misses / accesses; 0 when there were no accesses.
pub fn compute_am(misses: u64, accesses: u64) -> Result<f64, SimError> {
    if misses > accesses {
        return Err(SimError::MissesExceedAccesses { misses, accesses });
    }
    if accesses == 0 {
        Ok(0.0)
    } else {
        Ok(misses as f64 / accesses as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScopeBreakdown {
    pub scope_id: ScopeId,
    pub member_count: usize,
    pub chain_length: u64,
    /// Records in the scope chain's current state (3 per provider).
    pub stored_records: u64,
    pub used_records: u64,
    pub unused_records: u64,
    /// Accesses issued by this scope's own consumers.
    pub access_count: u64,
    pub miss_count: u64,
    /// Misses satisfied by a record found in another scope.
    pub remote_hit_count: u64,
    /// Providers invented to pad cells with thin visitor pools.
    pub synthetic_providers: u64,
    /// Movements whose destination lies in this scope.
    pub movement_observations: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimResult {
    pub storage_efficiency: f64,
    pub storage_efficiency_ratio: f64,
    pub access_misses: f64,
    pub used_records: u64,
    pub unused_records: u64,
    pub miss_count: u64,
    pub access_count: u64,
    pub remote_hit_count: u64,
    pub per_scope: Vec<ScopeBreakdown>,
}

struct Section {
    members: Vec<UserId>,
    mass: f64,
}

#[derive(Default, Clone, Copy)]
struct AccessCounter {
    accesses: u64,
    misses: u64,
    remote_hits: u64,
}

fn owner_rating(provider: UserId) -> f64 {
    1.0 + (provider % 40) as f64 / 10.0
}

fn device_model(provider: UserId) -> &'static str {
    DEVICE_MODELS[(provider % DEVICE_MODELS.len() as u64) as usize]
}

/// Runs both phases over the sampled world and reports the two metrics.
///
/// `pools` maps each microcell to its historical visitors in first-visit
/// order; `movements` are the (already filtered) movements that built
/// `graph`; `scopes` must cover every graph vertex.
pub fn run_simulation(
    pools: &BTreeMap<LocationId, Vec<UserId>>,
    movements: &[Movement],
    graph: &MicrocellGraph,
    scopes: &[Scope],
    config: &SimConfig,
) -> Result<SimResult, SimError> {
    if !(0.0..=1.0).contains(&config.movement_fraction) {
        return Err(SimError::InvalidFraction(config.movement_fraction));
    }
    let cells: Vec<LocationId> = graph.vertices().iter().copied().collect();
    let mut scope_of: BTreeMap<LocationId, ScopeId> = BTreeMap::new();
    for scope in scopes {
        for &cell in &scope.members {
            scope_of.insert(cell, scope.scope_id);
        }
    }
    for &cell in &cells {
        if !scope_of.contains_key(&cell) {
            return Err(SimError::UncoveredMicrocell(cell));
        }
    }

    let mut ledgers = ScopedLedgers::new(scopes.to_vec());
    let networks: BTreeMap<ScopeId, FbaNetwork> = scopes
        .iter()
        .map(|scope| {
            let network = build_scope_network(
                scope,
                config.devices_per_microcell,
                config.slice_size,
                config.seed,
            );
            (scope.scope_id, network)
        })
        .collect();

    // Phase 1: every provider of every cell stores its keys each session.
    let mut tracker = ProviderTracker::new();
    let mut providers_by_cell: Vec<Vec<UserId>> = Vec::with_capacity(cells.len());
    let mut real_counts: Vec<usize> = Vec::with_capacity(cells.len());
    let mut synth_by_scope: BTreeMap<ScopeId, u64> = BTreeMap::new();
    let empty_pool: Vec<UserId> = Vec::new();
    for (cell_index, &cell) in cells.iter().enumerate() {
        let pool = pools.get(&cell).unwrap_or(&empty_pool);
        let real = pool.len().min(config.providers_per_microcell);
        let mut providers: Vec<UserId> = pool[..real].to_vec();
        for k in 0..(config.providers_per_microcell - real) as u64 {
            providers.push(SYNTHETIC_PROVIDER_BASE + cell_index as u64 * SYNTHETIC_CELL_STRIDE + k);
        }
        let scope_id = scope_of[&cell];
        *synth_by_scope.entry(scope_id).or_default() += (providers.len() - real) as u64;
        let network = &networks[&scope_id];
        let chain = ledgers
            .chain_mut(scope_id)
            .expect("every scope id comes from the ledger's own scope list");
        for &provider in &providers {
            let rating_key = format!("owner_rating:{provider}");
            let model_key = format!("device_model:{provider}");
            let count_key = format!("session_count:{provider}");
            for _ in 0..config.services_per_microcell {
                let session = tracker.announce_session(provider, cell);
                chain.store(
                    &rating_key,
                    TrustValue::Float(owner_rating(provider)),
                    network,
                )?;
                chain.store(
                    &model_key,
                    TrustValue::Text(device_model(provider).to_string()),
                    network,
                )?;
                chain.store(
                    &count_key,
                    TrustValue::Count(session.session_index + 1),
                    network,
                )?;
            }
        }
        real_counts.push(real);
        providers_by_cell.push(providers);
    }

    // Where each provider's records live, for local hit tests and routing.
    let mut scope_providers: BTreeMap<ScopeId, BTreeSet<UserId>> = BTreeMap::new();
    let mut provider_scopes: BTreeMap<UserId, Vec<ScopeId>> = BTreeMap::new();
    for scope in scopes {
        scope_providers.entry(scope.scope_id).or_default();
    }
    for (ci, &cell) in cells.iter().enumerate() {
        let scope_id = scope_of[&cell];
        let members = scope_providers
            .get_mut(&scope_id)
            .expect("initialized above");
        for &provider in &providers_by_cell[ci] {
            if members.insert(provider) {
                provider_scopes.entry(provider).or_default().push(scope_id);
            }
        }
    }
    for scope_list in provider_scopes.values_mut() {
        scope_list.sort_unstable();
    }

    // Phase 2 query pools: per cell, one section per linked cell (cells
    // sharing prefix providers, best overlap first) holding the linked
    // cell's providers minus the cell's own, then the deep visitor pool.
    let real_sets: Vec<BTreeSet<UserId>> = providers_by_cell
        .iter()
        .zip(&real_counts)
        .map(|(providers, &real)| providers[..real].iter().copied().collect())
        .collect();
    let mut cells_of_provider: BTreeMap<UserId, Vec<usize>> = BTreeMap::new();
    for (ci, providers) in providers_by_cell.iter().enumerate() {
        for &provider in &providers[..real_counts[ci]] {
            cells_of_provider.entry(provider).or_default().push(ci);
        }
    }
    let mut sections_by_cell: Vec<Vec<Section>> = Vec::with_capacity(cells.len());
    for (ci, &cell) in cells.iter().enumerate() {
        let mut shared: BTreeMap<usize, usize> = BTreeMap::new();
        for provider in &real_sets[ci] {
            for &cj in &cells_of_provider[provider] {
                if cj != ci {
                    *shared.entry(cj).or_default() += 1;
                }
            }
        }
        let mut linked: Vec<(usize, usize)> = shared
            .into_iter()
            .filter(|&(_, overlap)| overlap >= LINK_MIN_SHARED)
            .map(|(cj, overlap)| (cj, overlap))
            .collect();
        linked.sort_by_key(|&(cj, overlap)| (std::cmp::Reverse(overlap), cells[cj]));
        linked.truncate(LINK_CAP);

        let mut sections = Vec::new();
        for (cj, _) in linked {
            let members: Vec<UserId> = providers_by_cell[cj][..real_counts[cj]]
                .iter()
                .filter(|p| !real_sets[ci].contains(p))
                .copied()
                .collect();
            if !members.is_empty() {
                sections.push(Section {
                    members,
                    mass: FOREIGN_SECTION_MASS,
                });
            }
        }
        let pool = pools.get(&cell).unwrap_or(&empty_pool);
        let tail_start = config.providers_per_microcell.max(PROVIDER_RANK_LIMIT);
        let tail_end = pool
            .len()
            .min(tail_start + TAIL_LENGTH_FACTOR * config.providers_per_microcell);
        if tail_start < tail_end {
            let members = pool[tail_start..tail_end].to_vec();
            sections.push(Section {
                mass: TAIL_ENTRY_MASS * members.len() as f64,
                members,
            });
        }
        sections_by_cell.push(sections);
    }

    // Phase 2 draws. Usage marks are (scope, provider): a provider's three
    // keys always travel together, so records count as 3 per mark.
    let queries = ((config.providers_per_microcell as f64 * DRAW_RATIO).round() as usize).max(1);
    let mut used: BTreeSet<(ScopeId, UserId)> = BTreeSet::new();
    let mut counters: BTreeMap<ScopeId, AccessCounter> = BTreeMap::new();
    for (ci, &cell) in cells.iter().enumerate() {
        let sections = &sections_by_cell[ci];
        if sections.is_empty() {
            continue;
        }
        let local = scope_of[&cell];
        let local_providers = &scope_providers[&local];
        for j in 0..config.consumers_per_microcell {
            let mut draw_rng = rng::stream(config.seed, "consumer-draws", &[cell, j as u64]);
            let frontier =
                (j + 1) as f64 / WINDOW_REFERENCE_CONSUMERS * sections.len() as f64;
            let weights: Vec<f64> = sections
                .iter()
                .enumerate()
                .map(|(i, s)| s.mass * (frontier - i as f64).clamp(0.0, 1.0))
                .collect();
            let total: f64 = weights.iter().sum();
            if total <= 0.0 {
                continue;
            }
            let last_open = weights
                .iter()
                .rposition(|&w| w > 0.0)
                .expect("total is positive");
            for _ in 0..queries {
                let mut pick = last_open;
                let mut point = draw_rng.gen::<f64>() * total;
                for (i, &w) in weights.iter().enumerate() {
                    if w > 0.0 && point < w {
                        pick = i;
                        break;
                    }
                    point -= w;
                }
                let members = &sections[pick].members;
                let target = members[draw_rng.gen_range(0..members.len())];
                let counter = counters.entry(local).or_default();
                counter.accesses += 3;
                if local_providers.contains(&target) {
                    if used.insert((local, target)) {
                        debug_assert!(ledgers
                            .chain(local)
                            .expect("scope exists")
                            .retrieve(&format!("owner_rating:{target}"))
                            .is_some());
                    }
                } else {
                    counter.misses += 3;
                    // Route the lookup through the other scopes in ascending
                    // order; the first copy found is the one that gets used.
                    if let Some(holders) = provider_scopes.get(&target) {
                        if let Some(&remote) = holders.iter().find(|&&s| s != local) {
                            counter.remote_hits += 3;
                            if used.insert((remote, target)) {
                                debug_assert!(ledgers
                                    .chain(remote)
                                    .expect("scope exists")
                                    .retrieve(&format!("owner_rating:{target}"))
                                    .is_some());
                            }
                        }
                    }
                }
            }
        }
    }

    // Movement observations land at the destination cell's scope.
    let mut observations: BTreeMap<ScopeId, u64> = BTreeMap::new();
    for movement in movements {
        if let Some(&scope_id) = scope_of.get(&movement.to) {
            *observations.entry(scope_id).or_default() += 1;
        }
    }

    let mut used_by_scope: BTreeMap<ScopeId, u64> = BTreeMap::new();
    for &(scope_id, _) in &used {
        *used_by_scope.entry(scope_id).or_default() += 3;
    }

    let mut per_scope = Vec::with_capacity(scopes.len());
    let mut totals = (0u64, 0u64, 0u64, 0u64, 0u64); // stored, used, accesses, misses, remote
    for scope in ledgers.scopes() {
        let scope_id = scope.scope_id;
        let chain = ledgers.chain(scope_id).expect("scope exists");
        let stored = 3 * scope_providers[&scope_id].len() as u64;
        debug_assert_eq!(stored as usize, chain.state().len());
        let used_here = used_by_scope.get(&scope_id).copied().unwrap_or(0);
        let counter = counters.get(&scope_id).copied().unwrap_or_default();
        totals.0 += stored;
        totals.1 += used_here;
        totals.2 += counter.accesses;
        totals.3 += counter.misses;
        totals.4 += counter.remote_hits;
        per_scope.push(ScopeBreakdown {
            scope_id,
            member_count: scope.members.len(),
            chain_length: chain.len() as u64,
            stored_records: stored,
            used_records: used_here,
            unused_records: stored - used_here,
            access_count: counter.accesses,
            miss_count: counter.misses,
            remote_hit_count: counter.remote_hits,
            synthetic_providers: synth_by_scope.get(&scope_id).copied().unwrap_or(0),
            movement_observations: observations.get(&scope_id).copied().unwrap_or(0),
        });
    }

    if cfg!(debug_assertions) {
        for chain in ledgers.chains() {
            assert!(verify_chain(chain), "chain must verify at simulation end");
        }
    }

    let (stored, used_total, accesses, misses, remote_hits) = totals;
    let unused = stored - used_total;
    Ok(SimResult {
        storage_efficiency: compute_se(used_total, unused),
        storage_efficiency_ratio: compute_se_ratio(used_total, unused),
        access_misses: compute_am(misses, accesses)?,
        used_records: used_total,
        unused_records: unused,
        miss_count: misses,
        access_count: accesses,
        remote_hit_count: remote_hits,
        per_scope,
    })
}
