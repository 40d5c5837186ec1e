//! Weighted undirected microcell graph built from provider movements.
//!
//! Vertices are microcell ids; an edge's weight counts the movements between
//! its endpoints in either direction. Movements touching microcells outside
//! the chosen vertex set are dropped silently so a sampled subset of cells can
//! be analyzed without pre-filtering the movement list.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{self, Write};

use thiserror::Error;

use crate::dataset::{LocationId, Movement};
use crate::rng;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("movement fraction {0} outside [0, 1]")]
    InvalidFraction(f64),
}

/// Immutable weighted undirected graph over microcells.
///
/// Edge keys are normalized as (low, high); adjacency lists are materialized
/// at construction so neighbor scans during scoping are allocation-free.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MicrocellGraph {
    vertices: BTreeSet<LocationId>,
    edges: BTreeMap<(LocationId, LocationId), u64>,
    adjacency: BTreeMap<LocationId, Vec<(LocationId, u64)>>,
}

impl MicrocellGraph {
    pub fn vertices(&self) -> &BTreeSet<LocationId> {
        &self.vertices
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    /// Iterates edges as (low endpoint, high endpoint, weight), ascending.
    pub fn edges(&self) -> impl Iterator<Item = (LocationId, LocationId, u64)> + '_ {
        self.edges.iter().map(|(&(u, v), &w)| (u, v, w))
    }

    pub fn weight(&self, u: LocationId, v: LocationId) -> Option<u64> {
        let key = if u <= v { (u, v) } else { (v, u) };
        self.edges.get(&key).copied()
    }

    /// Neighbors of `v` with edge weights, ascending by neighbor id.
    /// Isolated or unknown vertices yield an empty slice.
    pub fn neighbors(&self, v: LocationId) -> &[(LocationId, u64)] {
        self.adjacency.get(&v).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Sum of all edge weights; equals the number of retained movements.
    pub fn total_weight(&self) -> u64 {
        self.edges.values().sum()
    }

    /// Writes the edge list as `u<TAB>v<TAB>weight` lines in ascending order.
    pub fn write_edge_list<W: Write>(&self, mut out: W) -> io::Result<()> {
        for ((u, v), w) in &self.edges {
            writeln!(out, "{u}\t{v}\t{w}")?;
        }
        Ok(())
    }
}

/// Builds the microcell graph from movements restricted to `vertices`.
///
/// Both directions accumulate into one undirected weight. Vertices never
/// visited by a movement stay in the graph as isolated vertices.
pub fn build_graph(movements: &[Movement], vertices: &BTreeSet<LocationId>) -> MicrocellGraph {
    let mut edges: BTreeMap<(LocationId, LocationId), u64> = BTreeMap::new();
    for m in movements {
        if m.from == m.to || !vertices.contains(&m.from) || !vertices.contains(&m.to) {
            continue;
        }
        let key = if m.from <= m.to {
            (m.from, m.to)
        } else {
            (m.to, m.from)
        };
        *edges.entry(key).or_insert(0) += 1;
    }
    let mut adjacency: BTreeMap<LocationId, Vec<(LocationId, u64)>> = BTreeMap::new();
    for (&(u, v), &w) in &edges {
        adjacency.entry(u).or_default().push((v, w));
        adjacency.entry(v).or_default().push((u, w));
    }
    for list in adjacency.values_mut() {
        list.sort_unstable();
    }
    MicrocellGraph {
        vertices: vertices.clone(),
        edges,
        adjacency,
    }
}

/// Keeps a uniform `round(fraction * len)` subset of movements, preserving
/// input order among the survivors. `fraction` 0 empties the list and 1 keeps
/// it unchanged; anything outside [0, 1] is rejected.
pub fn filter_movements(
    movements: &[Movement],
    fraction: f64,
    seed: u64,
) -> Result<Vec<Movement>, GraphError> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(GraphError::InvalidFraction(fraction));
    }
    let keep = (fraction * movements.len() as f64).round() as usize;
    if keep == movements.len() {
        return Ok(movements.to_vec());
    }
    let mut rng = rng::stream(seed, "movement-filter", &[]);
    let mut indices: Vec<usize> = (0..movements.len()).collect();
    // Partial Fisher-Yates: the first `keep` slots end up a uniform sample.
    for i in 0..keep {
        let j = i + rand::Rng::gen_range(&mut rng, 0..indices.len() - i);
        indices.swap(i, j);
    }
    indices.truncate(keep);
    indices.sort_unstable();
    Ok(indices.into_iter().map(|i| movements[i].clone()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mv(provider: u64, from: LocationId, to: LocationId) -> Movement {
        Movement {
            provider_id: provider,
            from,
            to,
        }
    }

    fn verts(ids: &[LocationId]) -> BTreeSet<LocationId> {
        ids.iter().copied().collect()
    }

    #[test]
    fn single_movement_yields_unit_edge() {
        let g = build_graph(&[mv(1, 5, 7)], &verts(&[5, 7]));
        assert_eq!(g.weight(5, 7), Some(1));
        assert_eq!(g.weight(7, 5), Some(1));
        assert_eq!(g.edge_count(), 1);
    }

    #[test]
    fn opposite_directions_sum_into_one_edge() {
        let g = build_graph(&[mv(1, 4, 1), mv(2, 1, 4)], &verts(&[1, 4]));
        assert_eq!(g.weight(1, 4), Some(2));
        assert_eq!(g.edge_count(), 1);
    }

    #[test]
    fn no_movements_leaves_isolated_vertices() {
        let g = build_graph(&[], &verts(&[1, 2, 3]));
        assert_eq!(g.vertex_count(), 3);
        assert_eq!(g.edge_count(), 0);
        assert!(g.neighbors(1).is_empty());
    }

    #[test]
    fn movements_outside_vertex_set_are_dropped() {
        let g = build_graph(&[mv(1, 1, 2), mv(1, 2, 9)], &verts(&[1, 2]));
        assert_eq!(g.edge_count(), 1);
        assert_eq!(g.total_weight(), 1);
    }

    #[test]
    fn graph_is_order_insensitive() {
        let a = [mv(1, 1, 2), mv(2, 2, 3), mv(3, 3, 1), mv(4, 1, 2)];
        let mut b = a.clone();
        b.reverse();
        let vs = verts(&[1, 2, 3]);
        assert_eq!(build_graph(&a, &vs), build_graph(&b, &vs));
    }

    #[test]
    fn total_weight_counts_retained_movements() {
        let moves = [mv(1, 1, 2), mv(2, 2, 1), mv(3, 2, 3), mv(4, 3, 7)];
        let g = build_graph(&moves, &verts(&[1, 2, 3]));
        assert_eq!(g.total_weight(), 3);
    }

    #[test]
    fn neighbors_are_sorted_with_weights() {
        let g = build_graph(&[mv(1, 2, 1), mv(2, 2, 3), mv(3, 3, 2)], &verts(&[1, 2, 3]));
        assert_eq!(g.neighbors(2), &[(1, 1), (3, 2)]);
    }

    #[test]
    fn filter_full_fraction_is_identity() {
        let moves = vec![mv(1, 1, 2), mv(2, 2, 3), mv(3, 3, 4)];
        let kept = filter_movements(&moves, 1.0, 9).unwrap();
        assert_eq!(kept, moves);
    }

    #[test]
    fn filter_zero_fraction_is_empty() {
        let moves = vec![mv(1, 1, 2), mv(2, 2, 3)];
        assert!(filter_movements(&moves, 0.0, 9).unwrap().is_empty());
    }

    #[test]
    fn filter_rounds_to_nearest_count() {
        let moves: Vec<Movement> = (0..1000).map(|i| mv(i, i, i + 1)).collect();
        assert_eq!(filter_movements(&moves, 0.25, 3).unwrap().len(), 250);
        // 3 movements at 0.5 rounds up to 2.
        assert_eq!(filter_movements(&moves[..3], 0.5, 3).unwrap().len(), 2);
    }

    #[test]
    fn filter_is_deterministic_and_order_preserving() {
        let moves: Vec<Movement> = (0..100).map(|i| mv(i, i, i + 1)).collect();
        let a = filter_movements(&moves, 0.4, 11).unwrap();
        let b = filter_movements(&moves, 0.4, 11).unwrap();
        assert_eq!(a, b);
        // Survivors must appear in their original relative order.
        let ids: Vec<u64> = a.iter().map(|m| m.provider_id).collect();
        let mut sorted = ids.clone();
        sorted.sort_unstable();
        assert_eq!(ids, sorted);
        // A different seed picks a different subset at this size.
        let c = filter_movements(&moves, 0.4, 12).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn filter_rejects_out_of_range_fraction() {
        let moves = vec![mv(1, 1, 2)];
        assert!(filter_movements(&moves, -0.1, 0).is_err());
        assert!(filter_movements(&moves, 1.1, 0).is_err());
        assert!(filter_movements(&moves, f64::NAN, 0).is_err());
    }

    #[test]
    fn edge_list_export_is_tab_separated_and_sorted() {
        let g = build_graph(&[mv(1, 7, 5), mv(2, 1, 4), mv(3, 4, 1)], &verts(&[1, 4, 5, 7]));
        let mut buf = Vec::new();
        g.write_edge_list(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "1\t4\t2\n5\t7\t1\n");
    }
}
