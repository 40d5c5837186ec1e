//! Per-scope hash-chained ledgers for trust records, plus the contract
//! address registry and cross-scope retrieval routing.
//!
//! Every scope owns one chain. A store wraps a single keyed record in a
//! candidate block; the block is appended only when the scope's consensus
//! network votes to accept its digest. The materialized state has
//! latest-write-wins semantics, while earlier values stay recoverable from
//! the block history.
//!
//! Block timestamps come from a simulated clock that starts at a fixed epoch
//! and ticks one second per appended block, so identical inputs produce
//! bit-identical chains.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Read, Write};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::consensus::FbaNetwork;
use crate::dataset::LocationId;
use crate::scoping::{Scope, ScopeId};

pub type Digest32 = [u8; 32];

/// Simulated clock origin: 2020-01-01T00:00:00Z.
pub const GENESIS_TIME: i64 = 1_577_836_800;

#[derive(Debug, Error)]
pub enum LedgerError {
    #[error("consensus rejected the candidate block for scope {0}")]
    ConsensusRejected(ScopeId),
    #[error("microcell {0} is not registered to any scope")]
    UnknownMicrocell(LocationId),
    #[error("invalid chain: {0}")]
    InvalidChain(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("malformed block line: {0}")]
    Format(#[from] serde_json::Error),
}

/// A stored trust value. The canonical encoding is one tag byte followed by
/// the value bytes; it feeds the block digest, so it must never change.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum TrustValue {
    Bytes(Vec<u8>),
    Float(f64),
    Text(String),
    Count(u64),
}

impl TrustValue {
    pub fn canonical_bytes(&self) -> Vec<u8> {
        match self {
            TrustValue::Bytes(b) => {
                let mut out = vec![0u8];
                out.extend_from_slice(b);
                out
            }
            TrustValue::Float(f) => {
                let mut out = vec![1u8];
                out.extend_from_slice(&f.to_bits().to_be_bytes());
                out
            }
            TrustValue::Text(s) => {
                let mut out = vec![2u8];
                out.extend_from_slice(s.as_bytes());
                out
            }
            TrustValue::Count(c) => {
                let mut out = vec![3u8];
                out.extend_from_slice(&c.to_be_bytes());
                out
            }
        }
    }
}

/// One trust record. The timestamp is assigned by the ledger at store time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrustRecord {
    pub timestamp: i64,
    pub data: TrustValue,
}

mod hex_digest {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(digest: &super::Digest32, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(digest))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<super::Digest32, D::Error> {
        let text = String::deserialize(d)?;
        let bytes = hex::decode(&text).map_err(serde::de::Error::custom)?;
        bytes
            .try_into()
            .map_err(|_| serde::de::Error::custom("digest must be 32 bytes"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Block {
    pub index: u64,
    #[serde(with = "hex_digest")]
    pub prev_hash: Digest32,
    pub payload: Vec<(String, TrustRecord)>,
    pub timestamp: i64,
    #[serde(with = "hex_digest")]
    pub hash: Digest32,
}

/// Canonical block serialization: big-endian 8-byte index, 32-byte previous
/// hash, 8-byte payload byte length, payload operations (length-prefixed
/// UTF-8 key, 8-byte record timestamp, length-prefixed value bytes), and the
/// 8-byte block timestamp.
pub fn canonical_block_bytes(
    index: u64,
    prev_hash: &Digest32,
    payload: &[(String, TrustRecord)],
    timestamp: i64,
) -> Vec<u8> {
    let mut body = Vec::new();
    for (key, record) in payload {
        body.extend_from_slice(&(key.len() as u64).to_be_bytes());
        body.extend_from_slice(key.as_bytes());
        body.extend_from_slice(&record.timestamp.to_be_bytes());
        let data = record.data.canonical_bytes();
        body.extend_from_slice(&(data.len() as u64).to_be_bytes());
        body.extend_from_slice(&data);
    }
    let mut out = Vec::with_capacity(56 + body.len());
    out.extend_from_slice(&index.to_be_bytes());
    out.extend_from_slice(prev_hash);
    out.extend_from_slice(&(body.len() as u64).to_be_bytes());
    out.extend_from_slice(&body);
    out.extend_from_slice(&timestamp.to_be_bytes());
    out
}

pub fn block_hash(
    index: u64,
    prev_hash: &Digest32,
    payload: &[(String, TrustRecord)],
    timestamp: i64,
) -> Digest32 {
    Sha256::digest(canonical_block_bytes(index, prev_hash, payload, timestamp)).into()
}

/// Append-only chain plus its latest-write-wins state.
#[derive(Debug, Clone, PartialEq)]
pub struct Chain {
    scope_id: ScopeId,
    blocks: Vec<Block>,
    state: BTreeMap<String, TrustRecord>,
}

impl Chain {
    pub fn new(scope_id: ScopeId) -> Self {
        Chain {
            scope_id,
            blocks: Vec::new(),
            state: BTreeMap::new(),
        }
    }

    /// Rebuilds a chain from dumped blocks, rejecting any chain that fails
    /// verification. State is replayed from the payloads.
    pub fn from_blocks(scope_id: ScopeId, blocks: Vec<Block>) -> Result<Self, LedgerError> {
        check_blocks(&blocks).map_err(LedgerError::InvalidChain)?;
        let mut state = BTreeMap::new();
        for block in &blocks {
            for (key, record) in &block.payload {
                state.insert(key.clone(), record.clone());
            }
        }
        Ok(Chain {
            scope_id,
            blocks,
            state,
        })
    }

    pub fn scope_id(&self) -> ScopeId {
        self.scope_id
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn state(&self) -> &BTreeMap<String, TrustRecord> {
        &self.state
    }

    fn tip_hash(&self) -> Digest32 {
        self.blocks.last().map(|b| b.hash).unwrap_or([0u8; 32])
    }

    /// Current simulated time: one second per appended block.
    fn now(&self) -> i64 {
        GENESIS_TIME + self.blocks.len() as i64
    }

    /// Wraps the record in a candidate block and appends it iff the scope's
    /// consensus network accepts the block digest. On rejection the chain is
    /// untouched and the error reports the scope.
    pub fn store(
        &mut self,
        key: &str,
        data: TrustValue,
        consensus: &FbaNetwork,
    ) -> Result<(), LedgerError> {
        let timestamp = self.now();
        let record = TrustRecord { timestamp, data };
        let payload = vec![(key.to_string(), record)];
        let index = self.blocks.len() as u64;
        let prev_hash = self.tip_hash();
        let hash = block_hash(index, &prev_hash, &payload, timestamp);
        // Same decision as `federated_vote` on `hash`, minus materializing
        // the agreeing quorum; stores happen once per appended block.
        if !consensus.vote_accepts() {
            return Err(LedgerError::ConsensusRejected(self.scope_id));
        }
        let (key, record) = payload.into_iter().next().expect("payload built above");
        self.state.insert(key.clone(), record.clone());
        self.blocks.push(Block {
            index,
            prev_hash,
            payload: vec![(key, record)],
            timestamp,
            hash,
        });
        Ok(())
    }

    /// Looks up the latest record for `key`; a miss is `None`, never an
    /// error, because misses feed the access-miss metric.
    pub fn retrieve(&self, key: &str) -> Option<&TrustRecord> {
        self.state.get(key)
    }
}

fn check_blocks(blocks: &[Block]) -> Result<(), String> {
    let mut prev = [0u8; 32];
    for (i, block) in blocks.iter().enumerate() {
        if block.index != i as u64 {
            return Err(format!("block {i} carries index {}", block.index));
        }
        if block.prev_hash != prev {
            return Err(format!("block {i} does not link to its predecessor"));
        }
        let expected = block_hash(block.index, &block.prev_hash, &block.payload, block.timestamp);
        if block.hash != expected {
            return Err(format!("block {i} hash does not match its contents"));
        }
        prev = block.hash;
    }
    Ok(())
}

/// True iff every hash recomputes from its block's fields and every
/// prev_hash link (including the all-zero genesis link) holds.
pub fn verify_blocks(blocks: &[Block]) -> bool {
    check_blocks(blocks).is_ok()
}

pub fn verify_chain(chain: &Chain) -> bool {
    verify_blocks(&chain.blocks)
}

/// Writes one JSON block per line, hashes hex-encoded.
pub fn write_chain_ndjson<W: Write>(chain: &Chain, mut out: W) -> Result<(), LedgerError> {
    for block in &chain.blocks {
        serde_json::to_writer(&mut out, block)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Reads a chain dump produced by [`write_chain_ndjson`], verifying it.
pub fn read_chain_ndjson<R: Read>(scope_id: ScopeId, source: R) -> Result<Chain, LedgerError> {
    let mut blocks = Vec::new();
    for line in BufReader::new(source).lines() {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        blocks.push(serde_json::from_str::<Block>(&line)?);
    }
    Chain::from_blocks(scope_id, blocks)
}

/// Deterministic contract address for a scope's handler: 20 bytes of the
/// scope digest, rendered as 0x-prefixed hex.
pub fn contract_address(scope_id: ScopeId) -> String {
    let digest = Sha256::digest(format!("scope-contract:{scope_id}").as_bytes());
    format!("0x{}", hex::encode(&digest[..20]))
}

/// Maps each microcell to its scope's contract address, emulating the
/// per-edge-server address book.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContractRegistry {
    addresses: BTreeMap<LocationId, (ScopeId, String)>,
}

impl ContractRegistry {
    pub fn build(scopes: &[Scope]) -> Self {
        let mut addresses = BTreeMap::new();
        for scope in scopes {
            let address = contract_address(scope.scope_id);
            for &cell in &scope.members {
                addresses.insert(cell, (scope.scope_id, address.clone()));
            }
        }
        ContractRegistry { addresses }
    }

    pub fn scope_of(&self, cell: LocationId) -> Option<ScopeId> {
        self.addresses.get(&cell).map(|(scope, _)| *scope)
    }
}

/// Returns the contract address serving `cell`.
pub fn lookup_contract(registry: &ContractRegistry, cell: LocationId) -> Result<&str, LedgerError> {
    registry
        .addresses
        .get(&cell)
        .map(|(_, address)| address.as_str())
        .ok_or(LedgerError::UnknownMicrocell(cell))
}

/// Outcome of a scoped lookup. `local_miss` is true whenever the requester's
/// own scope lacked the key, even if another scope supplied the record; the
/// route lists the terminal microcells traversed, empty on a local hit.
#[derive(Debug, Clone, PartialEq)]
pub struct CrossScopeResult {
    pub record: Option<TrustRecord>,
    pub route: Vec<LocationId>,
    pub local_miss: bool,
}

/// All scopes' chains plus the microcell→scope map and address registry.
#[derive(Debug, Clone)]
pub struct ScopedLedgers {
    scopes: Vec<Scope>,
    chains: BTreeMap<ScopeId, Chain>,
    cell_to_scope: BTreeMap<LocationId, ScopeId>,
    registry: ContractRegistry,
}

impl ScopedLedgers {
    /// `scopes` must partition the microcells (disjoint member sets).
    pub fn new(mut scopes: Vec<Scope>) -> Self {
        scopes.sort_by_key(|s| s.scope_id);
        let chains = scopes
            .iter()
            .map(|s| (s.scope_id, Chain::new(s.scope_id)))
            .collect();
        let mut cell_to_scope = BTreeMap::new();
        for scope in &scopes {
            for &cell in &scope.members {
                let previous = cell_to_scope.insert(cell, scope.scope_id);
                debug_assert!(previous.is_none(), "scopes must be disjoint");
            }
        }
        let registry = ContractRegistry::build(&scopes);
        ScopedLedgers {
            scopes,
            chains,
            cell_to_scope,
            registry,
        }
    }

    pub fn scopes(&self) -> &[Scope] {
        &self.scopes
    }

    pub fn scope_of(&self, cell: LocationId) -> Option<ScopeId> {
        self.cell_to_scope.get(&cell).copied()
    }

    pub fn chain(&self, scope_id: ScopeId) -> Option<&Chain> {
        self.chains.get(&scope_id)
    }

    pub fn chain_mut(&mut self, scope_id: ScopeId) -> Option<&mut Chain> {
        self.chains.get_mut(&scope_id)
    }

    pub fn chains(&self) -> impl Iterator<Item = &Chain> {
        self.chains.values()
    }

    pub fn registry(&self) -> &ContractRegistry {
        &self.registry
    }

    /// Looks `key` up from `requester`'s scope; on a local miss the request
    /// is routed through the local terminal to every other scope's terminal
    /// in ascending scope order until a hit.
    pub fn cross_scope_retrieve(
        &self,
        key: &str,
        requester: LocationId,
    ) -> Result<CrossScopeResult, LedgerError> {
        let local_scope = self
            .scope_of(requester)
            .ok_or(LedgerError::UnknownMicrocell(requester))?;
        let local_chain = &self.chains[&local_scope];
        if let Some(record) = local_chain.retrieve(key) {
            return Ok(CrossScopeResult {
                record: Some(record.clone()),
                route: Vec::new(),
                local_miss: false,
            });
        }
        let local_terminal = self
            .scopes
            .iter()
            .find(|s| s.scope_id == local_scope)
            .expect("cell_to_scope only references known scopes")
            .terminal;
        let mut route = vec![local_terminal];
        for scope in &self.scopes {
            if scope.scope_id == local_scope {
                continue;
            }
            route.push(scope.terminal);
            if let Some(record) = self.chains[&scope.scope_id].retrieve(key) {
                return Ok(CrossScopeResult {
                    record: Some(record.clone()),
                    route,
                    local_miss: true,
                });
            }
        }
        Ok(CrossScopeResult {
            record: None,
            route,
            local_miss: true,
        })
    }
}
