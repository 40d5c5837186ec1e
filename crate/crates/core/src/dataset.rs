//! Check-in dataset ingestion.
//!
//! A dataset is two tab-separated files: a check-in log with lines
//! `user<TAB>time<TAB>latitude<TAB>longitude<TAB>location` and an undirected
//! social edge list with lines `user<TAB>user`. Either file may be
//! gzip-compressed; compression is detected from the leading magic bytes,
//! never from the file name. Malformed lines are counted and skipped, so a
//! handful of bad rows never aborts an ingest.
//!
//! Each dataset location is one microcell. Consecutive check-ins of the same
//! user at distinct locations yield a movement between the two microcells.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use flate2::read::GzDecoder;
use rand::Rng;
use thiserror::Error;

use crate::rng;

pub type UserId = u64;
pub type LocationId = u64;

/// One row of the check-in log.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckIn {
    pub user_id: UserId,
    /// Seconds since the Unix epoch, UTC.
    pub timestamp: i64,
    /// Degrees in [-90, 90].
    pub latitude: f64,
    /// Degrees in [-180, 180].
    pub longitude: f64,
    pub location_id: LocationId,
}

/// A user's transition between two distinct microcells.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Movement {
    pub provider_id: UserId,
    pub from: LocationId,
    pub to: LocationId,
}

/// Dataset-level counts. Node and edge counts come from the social edge
/// list; check-in and location counts from the check-in log.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub struct DatasetStats {
    pub node_count: u64,
    pub edge_count: u64,
    pub checkin_count: u64,
    pub location_count: u64,
}

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("dataset i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("cannot sample {requested} microcells from {available} distinct ids")]
    SampleTooLarge { requested: usize, available: usize },
}

/// Check-ins in input order plus the count of skipped malformed lines.
#[derive(Debug, Default)]
pub struct ParsedCheckIns {
    pub checkins: Vec<CheckIn>,
    pub skipped_lines: u64,
}

/// Deduplicated undirected edges (endpoints stored low-high) plus the count
/// of skipped malformed lines.
#[derive(Debug, Default)]
pub struct ParsedEdges {
    pub edges: BTreeSet<(UserId, UserId)>,
    pub skipped_lines: u64,
}

/// Opens a dataset file, transparently decompressing gzip input.
pub fn open_dataset_file(path: &Path) -> Result<Box<dyn Read>, IngestError> {
    let file = std::fs::File::open(path)?;
    Ok(decompress_if_gzip(file)?)
}

fn decompress_if_gzip<'a, R: Read + 'a>(input: R) -> std::io::Result<Box<dyn Read + 'a>> {
    let mut reader = BufReader::new(input);
    let magic = reader.fill_buf()?;
    if magic.starts_with(&[0x1f, 0x8b]) {
        Ok(Box::new(GzDecoder::new(reader)))
    } else {
        Ok(Box::new(reader))
    }
}

fn parse_checkin_line(line: &str) -> Option<CheckIn> {
    let mut fields = line.split('\t');
    let user_id = fields.next()?.trim().parse().ok()?;
    let timestamp = chrono::DateTime::parse_from_rfc3339(fields.next()?.trim())
        .ok()?
        .timestamp();
    let latitude: f64 = fields.next()?.trim().parse().ok()?;
    let longitude: f64 = fields.next()?.trim().parse().ok()?;
    let location_id = fields.next()?.trim().parse().ok()?;
    if fields.next().is_some() {
        return None;
    }
    if !(-90.0..=90.0).contains(&latitude) || !(-180.0..=180.0).contains(&longitude) {
        return None;
    }
    Some(CheckIn { user_id, timestamp, latitude, longitude, location_id })
}

/// Parses a check-in log. Input order is preserved; malformed lines
/// (wrong field count, unparseable values, out-of-range coordinates) are
/// skipped and counted.
pub fn parse_checkins<R: Read>(input: R) -> Result<ParsedCheckIns, IngestError> {
    let reader = BufReader::new(decompress_if_gzip(input)?);
    let mut out = ParsedCheckIns::default();
    for line in reader.lines() {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        match parse_checkin_line(&line) {
            Some(checkin) => out.checkins.push(checkin),
            None => out.skipped_lines += 1,
        }
    }
    Ok(out)
}

/// Parses a social edge list into a deduplicated undirected edge set.
/// `a<TAB>b` and `b<TAB>a` are the same edge.
pub fn parse_social_edges<R: Read>(input: R) -> Result<ParsedEdges, IngestError> {
    let reader = BufReader::new(decompress_if_gzip(input)?);
    let mut out = ParsedEdges::default();
    for line in reader.lines() {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let mut fields = line.split('\t');
        let parsed = (|| {
            let a: UserId = fields.next()?.trim().parse().ok()?;
            let b: UserId = fields.next()?.trim().parse().ok()?;
            if fields.next().is_some() {
                return None;
            }
            Some((a.min(b), a.max(b)))
        })();
        match parsed {
            Some(edge) => {
                out.edges.insert(edge);
            }
            None => out.skipped_lines += 1,
        }
    }
    Ok(out)
}

/// Derives movements: per user, check-ins are ordered by timestamp (ties
/// keep input order) and every consecutive pair at distinct locations
/// becomes one movement. A stay (A, A, B) therefore yields just A -> B.
///
/// Output is grouped by ascending user id, chronological within each user.
pub fn derive_movements(checkins: &[CheckIn]) -> Vec<Movement> {
    let mut per_user: BTreeMap<UserId, Vec<(i64, usize, LocationId)>> = BTreeMap::new();
    for (position, c) in checkins.iter().enumerate() {
        per_user
            .entry(c.user_id)
            .or_default()
            .push((c.timestamp, position, c.location_id));
    }
    let mut movements = Vec::new();
    for (provider_id, mut visits) in per_user {
        visits.sort_unstable_by_key(|&(ts, position, _)| (ts, position));
        for pair in visits.windows(2) {
            let (from, to) = (pair[0].2, pair[1].2);
            if from != to {
                movements.push(Movement { provider_id, from, to });
            }
        }
    }
    movements
}

/// Counts nodes/edges from the edge set and check-ins/locations from the
/// check-in log.
pub fn dataset_stats(checkins: &[CheckIn], edges: &BTreeSet<(UserId, UserId)>) -> DatasetStats {
    let mut users: HashSet<UserId> = HashSet::new();
    for &(a, b) in edges {
        users.insert(a);
        users.insert(b);
    }
    let locations: HashSet<LocationId> = checkins.iter().map(|c| c.location_id).collect();
    DatasetStats {
        node_count: users.len() as u64,
        edge_count: edges.len() as u64,
        checkin_count: checkins.len() as u64,
        location_count: locations.len() as u64,
    }
}

/// Uniform sample of `n` distinct microcell ids, without replacement,
/// deterministic per seed. The returned ids are sorted ascending.
pub fn sample_microcells(
    location_ids: &[LocationId],
    n: usize,
    seed: u64,
) -> Result<Vec<LocationId>, IngestError> {
    let mut ids: Vec<LocationId> = location_ids.to_vec();
    ids.sort_unstable();
    ids.dedup();
    if n > ids.len() {
        return Err(IngestError::SampleTooLarge { requested: n, available: ids.len() });
    }
    let mut rng = rng::stream(seed, "microcell-sample", &[]);
    for slot in 0..n {
        let pick = rng.gen_range(slot..ids.len());
        ids.swap(slot, pick);
    }
    ids.truncate(n);
    ids.sort_unstable();
    Ok(ids)
}

/// Distinct visitors of each kept location, ordered by first check-in time
/// (ties keep input order). This is the per-microcell user pool the
/// simulation draws providers and query targets from.
pub fn location_visitors(
    checkins: &[CheckIn],
    keep: &BTreeSet<LocationId>,
) -> BTreeMap<LocationId, Vec<UserId>> {
    let mut first_visit: HashMap<(LocationId, UserId), (i64, usize)> = HashMap::new();
    for (position, c) in checkins.iter().enumerate() {
        if !keep.contains(&c.location_id) {
            continue;
        }
        let entry = first_visit.entry((c.location_id, c.user_id)).or_insert((c.timestamp, position));
        if (c.timestamp, position) < *entry {
            *entry = (c.timestamp, position);
        }
    }
    let mut grouped: BTreeMap<LocationId, Vec<(i64, usize, UserId)>> = BTreeMap::new();
    for ((location, user), (ts, position)) in first_visit {
        grouped.entry(location).or_default().push((ts, position, user));
    }
    grouped
        .into_iter()
        .map(|(location, mut visitors)| {
            visitors.sort_unstable();
            (location, visitors.into_iter().map(|(_, _, user)| user).collect())
        })
        .collect()
}

/// Location ids ranked by distinct visitor count (descending, ties by
/// ascending id). The head of this ranking is the sampling universe for
/// experiments: low-traffic locations carry no reusable trust information.
pub fn rank_locations_by_visitors(checkins: &[CheckIn]) -> Vec<LocationId> {
    let mut pairs: Vec<(LocationId, UserId)> =
        checkins.iter().map(|c| (c.location_id, c.user_id)).collect();
    pairs.sort_unstable();
    pairs.dedup();
    let mut counts: Vec<(LocationId, u64)> = Vec::new();
    for (location, _) in pairs {
        match counts.last_mut() {
            Some((last, n)) if *last == location => *n += 1,
            _ => counts.push((location, 1)),
        }
    }
    counts.sort_by_key(|&(location, n)| (std::cmp::Reverse(n), location));
    counts.into_iter().map(|(location, _)| location).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    const LOG: &str = "0\t2010-10-19T23:55:27Z\t30.23\t-97.79\t22847\n\
                       1\t2009-01-03T18:15:05Z\t37.60\t-122.38\t10259\n";

    #[test]
    fn parses_fields_and_epoch_timestamps() {
        let parsed = parse_checkins(LOG.as_bytes()).unwrap();
        assert_eq!(parsed.skipped_lines, 0);
        assert_eq!(parsed.checkins.len(), 2);
        let first = &parsed.checkins[0];
        assert_eq!(first.user_id, 0);
        assert_eq!(first.timestamp, 1287532527);
        assert_eq!(first.location_id, 22847);
        assert_eq!(parsed.checkins[1].timestamp, 1231006505);
    }

    #[test]
    fn skips_malformed_lines_without_aborting() {
        let log = "9\t2010-10-19T23:55:27Z\t1.0\t2.0\t5\n\
                   not-a-user\t2010-10-19T23:55:27Z\t1.0\t2.0\t5\n\
                   9\t2010-13-45T99:00:00Z\t1.0\t2.0\t5\n\
                   9\t2010-10-19T23:55:27Z\t95.0\t2.0\t5\n\
                   9\t2010-10-19T23:55:27Z\t1.0\t-200.0\t5\n\
                   9\t2010-10-19T23:55:27Z\t1.0\t2.0\n\
                   9\t2010-10-19T23:55:27Z\t1.0\t2.0\t5\textra\n\
                   8\t2010-10-20T00:00:00Z\t1.0\t2.0\t6\n";
        let parsed = parse_checkins(log.as_bytes()).unwrap();
        assert_eq!(parsed.skipped_lines, 6);
        let users: Vec<UserId> = parsed.checkins.iter().map(|c| c.user_id).collect();
        assert_eq!(users, vec![9, 8], "surviving rows keep input order");
    }

    #[test]
    fn detects_gzip_by_magic_bytes() {
        let mut encoder =
            flate2::write::GzEncoder::new(Vec::new(), flate2::Compression::default());
        encoder.write_all(LOG.as_bytes()).unwrap();
        let compressed = encoder.finish().unwrap();
        let via_gzip = parse_checkins(&compressed[..]).unwrap();
        let plain = parse_checkins(LOG.as_bytes()).unwrap();
        assert_eq!(via_gzip.checkins, plain.checkins);
    }

    #[test]
    fn edge_list_is_deduplicated_and_undirected() {
        let edges = "0\t1\n1\t0\n0\t2\nbad line\n2\t0\n";
        let parsed = parse_social_edges(edges.as_bytes()).unwrap();
        assert_eq!(parsed.skipped_lines, 1);
        let expected: BTreeSet<(UserId, UserId)> = [(0, 1), (0, 2)].into_iter().collect();
        assert_eq!(parsed.edges, expected);
    }

    fn checkin(user: UserId, ts: i64, location: LocationId) -> CheckIn {
        CheckIn { user_id: user, timestamp: ts, latitude: 0.0, longitude: 0.0, location_id: location }
    }

    #[test]
    fn stay_at_same_location_yields_single_movement() {
        let checkins = vec![checkin(1, 10, 100), checkin(1, 20, 100), checkin(1, 30, 200)];
        assert_eq!(
            derive_movements(&checkins),
            vec![Movement { provider_id: 1, from: 100, to: 200 }]
        );
    }

    #[test]
    fn movements_follow_timestamps_not_input_order() {
        let checkins = vec![checkin(1, 30, 300), checkin(1, 10, 100), checkin(1, 20, 200)];
        assert_eq!(
            derive_movements(&checkins),
            vec![
                Movement { provider_id: 1, from: 100, to: 200 },
                Movement { provider_id: 1, from: 200, to: 300 },
            ]
        );
    }

    #[test]
    fn simultaneous_checkins_keep_input_order() {
        let checkins = vec![checkin(1, 10, 100), checkin(1, 10, 200), checkin(2, 5, 7)];
        assert_eq!(
            derive_movements(&checkins),
            vec![Movement { provider_id: 1, from: 100, to: 200 }]
        );
    }

    #[test]
    fn movement_count_bounded_by_checkins_minus_users() {
        let checkins = vec![
            checkin(1, 1, 10),
            checkin(1, 2, 11),
            checkin(2, 1, 10),
            checkin(2, 2, 10),
            checkin(3, 9, 5),
        ];
        let distinct_users = 3;
        let movements = derive_movements(&checkins);
        assert!(movements.len() <= checkins.len() - distinct_users);
    }

    #[test]
    fn stats_count_users_from_edges_and_locations_from_checkins() {
        let checkins = vec![checkin(1, 1, 10), checkin(2, 2, 10), checkin(1, 3, 11)];
        let edges: BTreeSet<(UserId, UserId)> = [(0, 1), (1, 5)].into_iter().collect();
        let stats = dataset_stats(&checkins, &edges);
        assert_eq!(
            stats,
            DatasetStats { node_count: 3, edge_count: 2, checkin_count: 3, location_count: 2 }
        );
    }

    #[test]
    fn sampling_is_deterministic_and_without_replacement() {
        let ids: Vec<LocationId> = (0..100).collect();
        let a = sample_microcells(&ids, 10, 42).unwrap();
        let b = sample_microcells(&ids, 10, 42).unwrap();
        assert_eq!(a, b);
        let dedup: BTreeSet<_> = a.iter().collect();
        assert_eq!(dedup.len(), 10);
        assert!(a.iter().all(|id| *id < 100));
        let other = sample_microcells(&ids, 10, 43).unwrap();
        assert_ne!(a, other, "different seeds should pick different samples");
    }

    #[test]
    fn sampling_more_than_available_errors() {
        let err = sample_microcells(&[1, 1, 2], 3, 0).unwrap_err();
        assert!(matches!(err, IngestError::SampleTooLarge { requested: 3, available: 2 }));
    }

    #[test]
    fn visitor_pools_are_ordered_by_first_visit() {
        let checkins = vec![
            checkin(5, 30, 100),
            checkin(7, 10, 100),
            checkin(5, 5, 100), // earlier revisit moves user 5 to the front
            checkin(9, 10, 100), // same timestamp as user 7, later in the file
            checkin(7, 1, 999),
        ];
        let keep: BTreeSet<LocationId> = [100].into_iter().collect();
        let pools = location_visitors(&checkins, &keep);
        assert_eq!(pools[&100], vec![5, 7, 9]);
        assert!(!pools.contains_key(&999), "locations outside the keep set are dropped");
    }

    #[test]
    fn location_ranking_orders_by_distinct_visitors() {
        let checkins = vec![
            checkin(1, 1, 100),
            checkin(1, 2, 100), // revisit, still one distinct visitor
            checkin(2, 3, 200),
            checkin(3, 4, 200),
            checkin(4, 5, 300),
            checkin(5, 6, 300),
        ];
        assert_eq!(rank_locations_by_visitors(&checkins), vec![200, 300, 100]);
    }
}
