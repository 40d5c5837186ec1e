//! Parameter sweeps over a prepared check-in dataset.
//!
//! An experiment fixes a microcell sample size and a set of seeds, sweeps
//! one knob (consumers, providers, or the movement fraction), and runs the
//! simulation once per (sweep point, seed, scoping mode). Each seed draws
//! its own microcell sample from the densest part of the dataset, so the
//! per-point spread reflects sampling variance rather than RNG noise.
//!
//! Runs execute sequentially: a single run's chains are the peak memory
//! cost, and sequential order keeps that bounded.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use thiserror::Error;

use crate::dataset::{
    derive_movements, location_visitors, rank_locations_by_visitors, sample_microcells, CheckIn,
    IngestError, LocationId, Movement, UserId,
};
use crate::graph::{build_graph, filter_movements, GraphError};
use crate::scoping::{
    label_propagation, select_terminals, single_microcell_scopes, DEFAULT_MAX_ITERATIONS,
};
use crate::sim::{run_simulation, ScopingMode, SimConfig, SimError, SimResult};
use crate::synth::{synthetic_checkins, SyntheticWorldConfig};

/// How many ranked locations feed the sampler per requested microcell. The
/// universe is the `density_factor * microcells` most-visited locations, so
/// samples stay in the dense part of the dataset where pools are deep.
pub const DEFAULT_DENSITY_FACTOR: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub enum Sweep {
    Consumers(Vec<usize>),
    Providers(Vec<usize>),
    MovementFraction(Vec<f64>),
}

impl Sweep {
    fn validate(&self) -> Result<(), ExperimentError> {
        let increasing = match self {
            Sweep::Consumers(v) | Sweep::Providers(v) => {
                !v.is_empty() && v.windows(2).all(|w| w[0] < w[1])
            }
            Sweep::MovementFraction(v) => {
                for &f in v {
                    if !(0.0..=1.0).contains(&f) {
                        return Err(ExperimentError::InvalidFraction(f));
                    }
                }
                !v.is_empty() && v.windows(2).all(|w| w[0] < w[1])
            }
        };
        if increasing {
            Ok(())
        } else {
            Err(ExperimentError::InvalidSweep)
        }
    }

    /// The swept points as full (consumers, providers, fraction) settings.
    fn points(&self, base: &SimConfig) -> Vec<(usize, usize, f64)> {
        match self {
            Sweep::Consumers(v) => v
                .iter()
                .map(|&c| (c, base.providers_per_microcell, base.movement_fraction))
                .collect(),
            Sweep::Providers(v) => v
                .iter()
                .map(|&p| (base.consumers_per_microcell, p, base.movement_fraction))
                .collect(),
            Sweep::MovementFraction(v) => v
                .iter()
                .map(|&f| {
                    (
                        base.consumers_per_microcell,
                        base.providers_per_microcell,
                        f,
                    )
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentPlan {
    pub sweep: Sweep,
    pub microcells: usize,
    pub seeds: Vec<u64>,
    pub modes: Vec<ScopingMode>,
    /// Values for whatever the sweep does not vary.
    pub base: SimConfig,
    pub density_factor: usize,
}

impl ExperimentPlan {
    pub fn new(sweep: Sweep, microcells: usize, seeds: Vec<u64>) -> Self {
        ExperimentPlan {
            sweep,
            microcells,
            seeds,
            modes: vec![ScopingMode::MultiMicrocell, ScopingMode::SingleMicrocell],
            base: SimConfig::default(),
            density_factor: DEFAULT_DENSITY_FACTOR,
        }
    }
}

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("sweep values must be non-empty and strictly increasing")]
    InvalidSweep,
    #[error("movement fraction {0} is outside [0, 1]")]
    InvalidFraction(f64),
    #[error("no seeds given")]
    NoSeeds,
    #[error("dataset has no locations to sample")]
    EmptyUniverse,
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Sim(#[from] SimError),
}

/// A dataset parsed once and reused across sweep points and seeds.
pub struct PreparedDataset {
    checkins: Vec<CheckIn>,
    movements: Vec<Movement>,
    ranked_locations: Vec<LocationId>,
}

impl PreparedDataset {
    pub fn from_checkins(checkins: Vec<CheckIn>) -> Self {
        let movements = derive_movements(&checkins);
        let ranked_locations = rank_locations_by_visitors(&checkins);
        PreparedDataset {
            checkins,
            movements,
            ranked_locations,
        }
    }

    /// The built-in synthetic world at its default scale.
    pub fn synthetic(seed: u64) -> Self {
        let config = SyntheticWorldConfig {
            seed,
            ..SyntheticWorldConfig::default()
        };
        Self::from_checkins(synthetic_checkins(&config))
    }

    pub fn location_count(&self) -> usize {
        self.ranked_locations.len()
    }

    /// The top `n` locations by distinct visitors (fewer if the dataset is
    /// smaller).
    pub fn ranked_universe(&self, n: usize) -> &[LocationId] {
        &self.ranked_locations[..n.min(self.ranked_locations.len())]
    }

    /// Movements with both endpoints inside the sampled cell set.
    pub fn movements_within(&self, cells: &BTreeSet<LocationId>) -> Vec<Movement> {
        self.movements
            .iter()
            .filter(|m| cells.contains(&m.from) && cells.contains(&m.to))
            .cloned()
            .collect()
    }

    /// Visitor pools for the sampled cells, in first-visit order.
    pub fn pools_for(&self, cells: &BTreeSet<LocationId>) -> BTreeMap<LocationId, Vec<UserId>> {
        location_visitors(&self.checkins, cells)
    }
}

/// One simulation run's settings and outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub mode: ScopingMode,
    pub consumers: usize,
    pub providers: usize,
    pub movement_fraction: f64,
    pub seed: u64,
    pub result: SimResult,
}

/// Per-point mean and range over seeds.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub mode: ScopingMode,
    pub consumers: usize,
    pub providers: usize,
    pub movement_fraction: f64,
    pub seed_count: usize,
    pub mean_storage_efficiency: f64,
    pub min_storage_efficiency: f64,
    pub max_storage_efficiency: f64,
    pub mean_access_misses: f64,
    pub min_access_misses: f64,
    pub max_access_misses: f64,
}

pub fn run_experiment(
    data: &PreparedDataset,
    plan: &ExperimentPlan,
) -> Result<Vec<SweepRow>, ExperimentError> {
    plan.sweep.validate()?;
    if plan.seeds.is_empty() {
        return Err(ExperimentError::NoSeeds);
    }
    let universe = data.ranked_universe(plan.density_factor.saturating_mul(plan.microcells));
    if universe.is_empty() {
        return Err(ExperimentError::EmptyUniverse);
    }
    let points = plan.sweep.points(&plan.base);

    let mut rows = Vec::with_capacity(points.len() * plan.seeds.len() * plan.modes.len());
    for &seed in &plan.seeds {
        let sample = sample_microcells(universe, plan.microcells.min(universe.len()), seed)?;
        let cell_set: BTreeSet<LocationId> = sample.into_iter().collect();
        let pools: BTreeMap<LocationId, Vec<UserId>> = data.pools_for(&cell_set);
        let local_movements = data.movements_within(&cell_set);
        for &(consumers, providers, fraction) in &points {
            let filtered = filter_movements(&local_movements, fraction, seed)?;
            let graph = build_graph(&filtered, &cell_set);
            for &mode in &plan.modes {
                let scopes = match mode {
                    ScopingMode::MultiMicrocell => select_terminals(
                        &label_propagation(&graph, seed, DEFAULT_MAX_ITERATIONS),
                        &graph,
                    ),
                    ScopingMode::SingleMicrocell => single_microcell_scopes(&cell_set),
                };
                let config = SimConfig {
                    microcell_count: plan.microcells,
                    providers_per_microcell: providers,
                    consumers_per_microcell: consumers,
                    movement_fraction: fraction,
                    scoping_mode: mode,
                    seed,
                    ..plan.base.clone()
                };
                let result = run_simulation(&pools, &filtered, &graph, &scopes, &config)?;
                rows.push(SweepRow {
                    mode,
                    consumers,
                    providers,
                    movement_fraction: fraction,
                    seed,
                    result,
                });
            }
        }
    }
    rows.sort_by(|a, b| {
        (a.mode.label(), a.consumers, a.providers, a.movement_fraction.to_bits(), a.seed).cmp(&(
            b.mode.label(),
            b.consumers,
            b.providers,
            b.movement_fraction.to_bits(),
            b.seed,
        ))
    });
    Ok(rows)
}

pub const CSV_HEADER: &str =
    "mode,consumers,providers,movement_fraction,seed,se,am,used,unused,misses,accesses";

pub fn rows_to_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for row in rows {
        writeln!(
            out,
            "{},{},{},{:.6},{},{:.6},{:.6},{},{},{},{}",
            row.mode.label(),
            row.consumers,
            row.providers,
            row.movement_fraction,
            row.seed,
            row.result.storage_efficiency,
            row.result.access_misses,
            row.result.used_records,
            row.result.unused_records,
            row.result.miss_count,
            row.result.access_count,
        )
        .expect("writing to a String cannot fail");
    }
    out
}

/// Means and ranges per (mode, point), in the sorted row order.
pub fn summarize(rows: &[SweepRow]) -> Vec<SummaryRow> {
    struct Agg {
        n: usize,
        se_sum: f64,
        se_min: f64,
        se_max: f64,
        am_sum: f64,
        am_min: f64,
        am_max: f64,
    }
    let mut grouped: BTreeMap<(&str, usize, usize, u64), Agg> = BTreeMap::new();
    for row in rows {
        let key = (
            row.mode.label(),
            row.consumers,
            row.providers,
            row.movement_fraction.to_bits(),
        );
        let se = row.result.storage_efficiency;
        let am = row.result.access_misses;
        let agg = grouped.entry(key).or_insert(Agg {
            n: 0,
            se_sum: 0.0,
            se_min: f64::INFINITY,
            se_max: f64::NEG_INFINITY,
            am_sum: 0.0,
            am_min: f64::INFINITY,
            am_max: f64::NEG_INFINITY,
        });
        agg.n += 1;
        agg.se_sum += se;
        agg.se_min = agg.se_min.min(se);
        agg.se_max = agg.se_max.max(se);
        agg.am_sum += am;
        agg.am_min = agg.am_min.min(am);
        agg.am_max = agg.am_max.max(am);
    }
    grouped
        .into_iter()
        .map(|((mode, consumers, providers, fraction_bits), agg)| SummaryRow {
            mode: if mode == "mm" {
                ScopingMode::MultiMicrocell
            } else {
                ScopingMode::SingleMicrocell
            },
            consumers,
            providers,
            movement_fraction: f64::from_bits(fraction_bits),
            seed_count: agg.n,
            mean_storage_efficiency: agg.se_sum / agg.n as f64,
            min_storage_efficiency: agg.se_min,
            max_storage_efficiency: agg.se_max,
            mean_access_misses: agg.am_sum / agg.n as f64,
            min_access_misses: agg.am_min,
            max_access_misses: agg.am_max,
        })
        .collect()
}
