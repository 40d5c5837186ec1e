//! Scope formation: weighted label propagation over the microcell graph and
//! terminal election per scope.
//!
//! Every vertex starts with its own id as label. Sweeps visit vertices in a
//! seeded-random order; a vertex adopts the neighbor label with the greatest
//! total incident edge weight. Ties prefer the vertex's current label, then
//! the smallest label id, so a run is fully determined by (graph, seed). The
//! surviving labels become scope ids; each scope elects the member with the
//! most edges leaving the scope as its terminal.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{self, Write};

use rand::seq::SliceRandom;

use crate::dataset::LocationId;
use crate::graph::MicrocellGraph;
use crate::rng;

pub type ScopeId = u64;

/// Sweep cap; label propagation normally converges in a handful of sweeps.
pub const DEFAULT_MAX_ITERATIONS: usize = 100;

/// Result of label propagation: one label per vertex.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScopeAssignment {
    pub labels: BTreeMap<LocationId, ScopeId>,
    pub converged: bool,
    pub iterations: usize,
}

impl ScopeAssignment {
    /// Groups vertices by label, ascending by scope id.
    pub fn groups(&self) -> BTreeMap<ScopeId, BTreeSet<LocationId>> {
        let mut groups: BTreeMap<ScopeId, BTreeSet<LocationId>> = BTreeMap::new();
        for (&cell, &label) in &self.labels {
            groups.entry(label).or_default().insert(cell);
        }
        groups
    }

    pub fn scope_count(&self) -> usize {
        self.labels.values().collect::<BTreeSet<_>>().len()
    }
}

/// A scope: a set of microcells sharing one ledger, with the elected
/// terminal microcell that routes requests to other scopes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Scope {
    pub scope_id: ScopeId,
    pub members: BTreeSet<LocationId>,
    pub terminal: LocationId,
}

/// Runs asynchronous weighted label propagation.
///
/// `max_iterations` must be ≥ 1. Convergence means one full sweep left every
/// label unchanged; `iterations` counts the sweeps actually performed.
pub fn label_propagation(
    graph: &MicrocellGraph,
    seed: u64,
    max_iterations: usize,
) -> ScopeAssignment {
    assert!(max_iterations >= 1, "max_iterations must be at least 1");
    let mut labels: BTreeMap<LocationId, ScopeId> =
        graph.vertices().iter().map(|&v| (v, v)).collect();
    let mut order: Vec<LocationId> = graph.vertices().iter().copied().collect();
    let mut rng = rng::stream(seed, "label-propagation", &[]);
    for iteration in 1..=max_iterations {
        order.shuffle(&mut rng);
        let mut changed = false;
        for &v in &order {
            let current = labels[&v];
            let best = strongest_label(graph, &labels, v, current);
            if best != current {
                labels.insert(v, best);
                changed = true;
            }
        }
        if !changed {
            return ScopeAssignment {
                labels,
                converged: true,
                iterations: iteration,
            };
        }
    }
    ScopeAssignment {
        labels,
        converged: false,
        iterations: max_iterations,
    }
}

/// Label with the greatest summed weight over `v`'s incident edges.
/// Ties keep `current` when it is among the strongest, else the smallest id.
/// A vertex without neighbors keeps its current label.
fn strongest_label(
    graph: &MicrocellGraph,
    labels: &BTreeMap<LocationId, ScopeId>,
    v: LocationId,
    current: ScopeId,
) -> ScopeId {
    let mut strength: BTreeMap<ScopeId, u64> = BTreeMap::new();
    for &(n, w) in graph.neighbors(v) {
        *strength.entry(labels[&n]).or_insert(0) += w;
    }
    let Some(&max) = strength.values().max() else {
        return current;
    };
    if strength.get(&current) == Some(&max) {
        return current;
    }
    strength
        .iter()
        .find(|&(_, &w)| w == max)
        .map(|(&label, _)| label)
        .expect("nonempty strength map has a maximum")
}

/// Elects one terminal per scope: the member with the most edges to vertices
/// outside the scope, ties to the smallest microcell id. A scope with no
/// outward edges gets its smallest member.
pub fn select_terminals(assignment: &ScopeAssignment, graph: &MicrocellGraph) -> Vec<Scope> {
    let mut scopes = Vec::new();
    for (scope_id, members) in assignment.groups() {
        let mut terminal = *members.iter().next().expect("scopes are nonempty");
        let mut best_outward = outward_edge_count(graph, assignment, terminal);
        for &cell in members.iter().skip(1) {
            let outward = outward_edge_count(graph, assignment, cell);
            if outward > best_outward {
                terminal = cell;
                best_outward = outward;
            }
        }
        scopes.push(Scope {
            scope_id,
            members,
            terminal,
        });
    }
    scopes
}

fn outward_edge_count(
    graph: &MicrocellGraph,
    assignment: &ScopeAssignment,
    v: LocationId,
) -> usize {
    let own = assignment.labels[&v];
    graph
        .neighbors(v)
        .iter()
        .filter(|&&(n, _)| assignment.labels[&n] != own)
        .count()
}

/// Baseline scoping: every microcell is its own scope and its own terminal.
pub fn single_microcell_scopes(vertices: &BTreeSet<LocationId>) -> Vec<Scope> {
    vertices
        .iter()
        .map(|&v| Scope {
            scope_id: v,
            members: BTreeSet::from([v]),
            terminal: v,
        })
        .collect()
}

/// Writes `microcell_id<TAB>scope_id<TAB>is_terminal` rows, ascending by
/// microcell id, with is_terminal rendered as 0 or 1.
pub fn write_scope_assignment<W: Write>(scopes: &[Scope], mut out: W) -> io::Result<()> {
    let mut rows: Vec<(LocationId, ScopeId, bool)> = Vec::new();
    for scope in scopes {
        for &cell in &scope.members {
            rows.push((cell, scope.scope_id, cell == scope.terminal));
        }
    }
    rows.sort_unstable();
    for (cell, scope_id, is_terminal) in rows {
        writeln!(out, "{cell}\t{scope_id}\t{}", u8::from(is_terminal))?;
    }
    Ok(())
}
