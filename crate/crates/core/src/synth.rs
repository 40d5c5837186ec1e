//! Synthetic check-in worlds for runs without a mounted dataset.
//!
//! The generator lays out `regions x cells_per_region` microcells and gives
//! every user a home region plus 2 to 4 anchor cells inside it, picked with
//! a popularity bias (cell 0 of a region is the most anchored, later cells
//! fall off harmonically). Visits then mix anchor returns, popularity-biased
//! trips inside the home region, and a little global noise. Users take turns
//! visiting, so a cell's earliest visitors are spread across user ids rather
//! than clustered, and popular cells of one region end up sharing early
//! visitors. That gives downstream runs the two properties real check-in
//! logs show: movement stays mostly regional, and the provider prefixes of
//! popular nearby cells overlap.

use rand::Rng;

use crate::dataset::CheckIn;
use crate::rng;

/// Share of visits that return to one of the user's anchor cells.
const ANCHOR_SHARE: f64 = 0.55;
/// Share of visits that pick a popularity-biased cell in the home region;
/// the remainder is uniform global noise.
const REGIONAL_SHARE: f64 = 0.35;
const MIN_ANCHORS: usize = 2;
const MAX_ANCHORS: usize = 4;
/// Popularity falloff exponent for cells within a region.
const POPULARITY_EXPONENT: f64 = 1.0;

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticWorldConfig {
    pub regions: usize,
    pub cells_per_region: usize,
    pub users_per_region: usize,
    pub visits_per_user: usize,
    pub seed: u64,
}

impl Default for SyntheticWorldConfig {
    fn default() -> Self {
        SyntheticWorldConfig {
            regions: 14,
            cells_per_region: 40,
            users_per_region: 450,
            visits_per_user: 55,
            seed: 0,
        }
    }
}

/// First timestamp of the generated log (2008-01-01T00:00:00Z).
const WORLD_EPOCH: i64 = 1_199_145_600;

fn location_id(region: usize, cell: usize) -> u64 {
    (region as u64) * 1_000 + cell as u64 + 1
}

/// Cumulative harmonic popularity weights for one region's cells.
fn popularity_cumulative(cells: usize) -> Vec<f64> {
    let mut cumulative = Vec::with_capacity(cells);
    let mut total = 0.0;
    for i in 0..cells {
        total += 1.0 / ((i + 1) as f64).powf(POPULARITY_EXPONENT);
        cumulative.push(total);
    }
    cumulative
}

fn pick_popular(cumulative: &[f64], rng: &mut impl Rng) -> usize {
    let total = *cumulative.last().expect("at least one cell per region");
    let point = rng.gen::<f64>() * total;
    cumulative.partition_point(|&c| c <= point).min(cumulative.len() - 1)
}

/// Generates the full check-in log, ordered by timestamp. Timestamps are
/// unique: users visit in rotation, one second apart.
pub fn synthetic_checkins(config: &SyntheticWorldConfig) -> Vec<CheckIn> {
    let total_users = config.regions * config.users_per_region;
    let cumulative = popularity_cumulative(config.cells_per_region);
    let mut per_user: Vec<Vec<CheckIn>> = Vec::with_capacity(total_users);
    for user_index in 0..total_users {
        let user_id = (user_index + 1) as u64;
        let region = user_index / config.users_per_region;
        let mut user_rng = rng::stream(config.seed, "synthetic-world", &[user_id]);

        let anchor_count = user_rng.gen_range(MIN_ANCHORS..=MAX_ANCHORS);
        let mut anchors: Vec<usize> = Vec::with_capacity(anchor_count);
        while anchors.len() < anchor_count.min(config.cells_per_region) {
            let cell = pick_popular(&cumulative, &mut user_rng);
            if !anchors.contains(&cell) {
                anchors.push(cell);
            }
        }

        let mut visits = Vec::with_capacity(config.visits_per_user);
        for visit in 0..config.visits_per_user {
            let roll = user_rng.gen::<f64>();
            let (visit_region, cell) = if roll < ANCHOR_SHARE {
                (region, anchors[user_rng.gen_range(0..anchors.len())])
            } else if roll < ANCHOR_SHARE + REGIONAL_SHARE {
                (region, pick_popular(&cumulative, &mut user_rng))
            } else {
                (
                    user_rng.gen_range(0..config.regions),
                    user_rng.gen_range(0..config.cells_per_region),
                )
            };
            visits.push(CheckIn {
                user_id,
                timestamp: WORLD_EPOCH + (visit * total_users + user_index) as i64,
                latitude: visit_region as f64 / 2.0,
                longitude: cell as f64 / 2.0,
                location_id: location_id(visit_region, cell),
            });
        }
        per_user.push(visits);
    }

    let mut checkins: Vec<CheckIn> = Vec::with_capacity(total_users * config.visits_per_user);
    for visit in 0..config.visits_per_user {
        for user_visits in &per_user {
            checkins.push(user_visits[visit].clone());
        }
    }
    checkins
}
