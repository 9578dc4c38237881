//! Check-in ingestion, trajectory segmentation, and chronological splits.
//!
//! Input files are UTF-8 text with one check-in per line and eight
//! tab-separated fields: user id, venue id, category id, category name,
//! latitude, longitude, timezone offset in minutes, and a UTC timestamp such
//! as `Tue Apr 03 18:00:09 +0000 2012`. The category id is carried through
//! but unused.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use chrono::DateTime;
use serde::Serialize;
use thiserror::Error;

use crate::geo::GeoPoint;

/// Seconds in the trajectory window: a check-in joins the current trajectory
/// iff it falls within this many seconds of the trajectory's first check-in.
pub const TRAJECTORY_WINDOW_SECS: i64 = 86_400;

const TIMESTAMP_FORMAT: &str = "%a %b %d %H:%M:%S %z %Y";

#[derive(Debug, Error)]
pub enum DataError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {reason}")]
    MalformedRecord { line: usize, reason: String },
    #[error("dataset contains no check-ins")]
    EmptyDataset,
    #[error("trajectory {0} has fewer than two check-ins")]
    TrajectoryTooShort(String),
    #[error("poi id {0} does not resolve in the catalog")]
    UnknownPoi(String),
    #[error("test case has an empty context")]
    EmptyContext,
}

/// A point of interest: identifier, semantic category, and coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct Poi {
    pub id: String,
    pub category: String,
    pub location: GeoPoint,
}

/// One timestamped visit by a user.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckIn {
    pub user_id: String,
    pub poi_id: String,
    /// Seconds since the Unix epoch, in UTC.
    pub utc_time: i64,
    pub tz_offset_minutes: i32,
}

/// A user's consecutive check-ins within the trajectory window.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub id: String,
    pub user_id: String,
    pub checkins: Vec<CheckIn>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.checkins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.checkins.is_empty()
    }

    pub fn start_time(&self) -> i64 {
        self.checkins[0].utc_time
    }
}

/// POI catalog with first-occurrence-wins deduplication.
#[derive(Debug, Default, Clone)]
pub struct Catalog {
    pois: Vec<Poi>,
    by_id: HashMap<String, usize>,
    conflicting_duplicates: usize,
}

impl Catalog {
    pub fn new() -> Self {
        Self::default()
    }

    /// Records a POI definition. The first definition of an id wins; a later
    /// definition with different category or coordinates only bumps the
    /// conflict counter.
    pub fn insert(&mut self, poi: Poi) {
        match self.by_id.get(&poi.id) {
            Some(&idx) => {
                if self.pois[idx] != poi {
                    self.conflicting_duplicates += 1;
                }
            }
            None => {
                self.by_id.insert(poi.id.clone(), self.pois.len());
                self.pois.push(poi);
            }
        }
    }

    pub fn get(&self, poi_id: &str) -> Option<&Poi> {
        self.by_id.get(poi_id).map(|&idx| &self.pois[idx])
    }

    pub fn len(&self) -> usize {
        self.pois.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pois.is_empty()
    }

    /// POIs in first-occurrence order.
    pub fn iter(&self) -> impl Iterator<Item = &Poi> {
        self.pois.iter()
    }

    /// Number of later definitions that disagreed with the first one.
    pub fn conflicting_duplicates(&self) -> usize {
        self.conflicting_duplicates
    }

    pub fn category_count(&self) -> usize {
        let mut cats: Vec<&str> = self.pois.iter().map(|p| p.category.as_str()).collect();
        cats.sort_unstable();
        cats.dedup();
        cats.len()
    }
}

/// One parsed input line: the check-in plus the POI attributes it carries.
#[derive(Debug, Clone)]
pub struct ParsedRecord {
    pub checkin: CheckIn,
    pub poi: Poi,
    /// Present in the file layout but unused by the harness.
    pub category_id: String,
}

/// Parses one tab-separated check-in record. `line_no` is 1-based and only
/// used for error reporting.
pub fn parse_checkin_line(line: &str, line_no: usize) -> Result<ParsedRecord, DataError> {
    let malformed = |reason: String| DataError::MalformedRecord { line: line_no, reason };

    let fields: Vec<&str> = line.trim_end_matches(['\r', '\n']).split('\t').map(str::trim).collect();
    if fields.len() != 8 {
        return Err(malformed(format!("expected 8 tab-separated fields, found {}", fields.len())));
    }

    let lat: f64 = fields[4]
        .parse()
        .map_err(|_| malformed(format!("unparseable latitude {:?}", fields[4])))?;
    let lon: f64 = fields[5]
        .parse()
        .map_err(|_| malformed(format!("unparseable longitude {:?}", fields[5])))?;
    let location = GeoPoint::new(lat, lon).map_err(|e| malformed(e.to_string()))?;

    let tz_offset_minutes: i32 = fields[6]
        .parse()
        .map_err(|_| malformed(format!("unparseable timezone offset {:?}", fields[6])))?;

    let utc_time = DateTime::parse_from_str(fields[7], TIMESTAMP_FORMAT)
        .map_err(|e| malformed(format!("unparseable timestamp {:?}: {e}", fields[7])))?
        .timestamp();

    Ok(ParsedRecord {
        checkin: CheckIn {
            user_id: fields[0].to_string(),
            poi_id: fields[1].to_string(),
            utc_time,
            tz_offset_minutes,
        },
        poi: Poi {
            id: fields[1].to_string(),
            category: fields[3].to_string(),
            location,
        },
        category_id: fields[2].to_string(),
    })
}

/// A parsed dataset: deduplicated catalog plus globally time-sorted check-ins.
#[derive(Debug)]
pub struct LoadedDataset {
    pub catalog: Catalog,
    pub checkins: Vec<CheckIn>,
    /// Malformed lines skipped in non-strict mode.
    pub skipped_records: usize,
}

/// Reads and validates a check-in file. In strict mode the first malformed
/// record aborts the load; otherwise malformed records are counted and
/// skipped. Check-ins come back sorted by time, ties keeping file order.
pub fn load_dataset(path: &Path, strict: bool) -> Result<LoadedDataset, DataError> {
    let file = File::open(path).map_err(|source| DataError::Io { path: path.to_path_buf(), source })?;
    let reader = BufReader::new(file);

    let mut catalog = Catalog::new();
    let mut checkins = Vec::new();
    let mut skipped = 0usize;

    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(|source| DataError::Io { path: path.to_path_buf(), source })?;
        if line.trim().is_empty() {
            continue;
        }
        match parse_checkin_line(&line, idx + 1) {
            Ok(record) => {
                catalog.insert(record.poi);
                checkins.push(record.checkin);
            }
            Err(err) if strict => return Err(err),
            Err(err) => {
                log::warn!("skipping record: {err}");
                skipped += 1;
            }
        }
    }

    if checkins.is_empty() {
        return Err(DataError::EmptyDataset);
    }
    checkins.sort_by_key(|c| c.utc_time);

    Ok(LoadedDataset { catalog, checkins, skipped_records: skipped })
}

/// Splits one user's time-sorted check-ins greedily: a check-in joins the
/// current trajectory iff it lies within [`TRAJECTORY_WINDOW_SECS`] of the
/// trajectory's first check-in, otherwise it starts a new one.
pub fn segment_trajectories(checkins: &[CheckIn]) -> Vec<Trajectory> {
    let mut trajectories: Vec<Trajectory> = Vec::new();
    for checkin in checkins {
        match trajectories.last_mut() {
            Some(current) if checkin.utc_time - current.start_time() <= TRAJECTORY_WINDOW_SECS => {
                current.checkins.push(checkin.clone());
            }
            _ => {
                trajectories.push(Trajectory {
                    id: format!("{}-{}", checkin.user_id, checkin.utc_time),
                    user_id: checkin.user_id.clone(),
                    checkins: vec![checkin.clone()],
                });
            }
        }
    }
    trajectories
}

/// Fractions of the chronologically ordered check-ins assigned to each split.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, serde::Deserialize)]
pub struct SplitRatios {
    pub train: f64,
    pub validation: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        SplitRatios { train: 0.8, validation: 0.1, test: 0.1 }
    }
}

impl SplitRatios {
    pub fn validate(&self) -> Result<(), String> {
        let parts = [self.train, self.validation, self.test];
        if parts.iter().any(|r| !(0.0..=1.0).contains(r)) {
            return Err(format!("split ratios must lie in [0, 1]: {self:?}"));
        }
        let sum: f64 = parts.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(format!("split ratios must sum to 1, got {sum}"));
        }
        Ok(())
    }
}

/// Chronological partition of the check-ins plus the segmented test portion.
#[derive(Debug)]
pub struct DatasetSplit {
    pub train: Vec<CheckIn>,
    pub validation: Vec<CheckIn>,
    /// All trajectories segmented from the test portion, including
    /// single-check-in trajectories that cannot become test cases.
    pub test_trajectories: Vec<Trajectory>,
}

impl DatasetSplit {
    /// Trajectories long enough to yield a test case (length >= 2),
    /// chronological by start time.
    pub fn eligible_test_trajectories(&self) -> impl Iterator<Item = &Trajectory> {
        self.test_trajectories.iter().filter(|t| t.len() >= 2)
    }

    /// Length-1 test trajectories dropped from evaluation.
    pub fn dropped_singletons(&self) -> usize {
        self.test_trajectories.iter().filter(|t| t.len() < 2).count()
    }
}

/// Splits globally time-sorted check-ins at floor(train * N) and
/// floor((train + validation) * N), then segments the test portion per user.
pub fn chronological_split(checkins: &[CheckIn], ratios: SplitRatios) -> Result<DatasetSplit, DataError> {
    if checkins.is_empty() {
        return Err(DataError::EmptyDataset);
    }
    ratios
        .validate()
        .map_err(|reason| DataError::MalformedRecord { line: 0, reason })?;

    let n = checkins.len();
    let train_end = (ratios.train * n as f64).floor() as usize;
    let val_end = ((ratios.train + ratios.validation) * n as f64).floor() as usize;

    let train = checkins[..train_end].to_vec();
    let validation = checkins[train_end..val_end].to_vec();
    let test = &checkins[val_end..];

    // Group the test portion per user, keeping each user's chronological
    // order, then segment and restore a global chronological order.
    let mut per_user: HashMap<&str, Vec<CheckIn>> = HashMap::new();
    for checkin in test {
        per_user.entry(checkin.user_id.as_str()).or_default().push(checkin.clone());
    }
    let mut test_trajectories: Vec<Trajectory> = per_user
        .values()
        .flat_map(|user_checkins| segment_trajectories(user_checkins))
        .collect();
    test_trajectories.sort_by(|a, b| a.start_time().cmp(&b.start_time()).then_with(|| a.id.cmp(&b.id)));

    Ok(DatasetSplit { train, validation, test_trajectories })
}

/// One evaluation unit: the context check-ins and the ground-truth next POI.
#[derive(Debug, Clone)]
pub struct TestCase {
    pub trajectory_id: String,
    pub user_id: String,
    /// The first k-1 check-ins of the trajectory, oldest first.
    pub context: Vec<CheckIn>,
    pub ground_truth_poi: String,
    /// Coordinates of the POI at the last context check-in.
    pub current_position: GeoPoint,
}

/// Builds a test case from a trajectory of length >= 2: all but the last
/// check-in become the context and the last one is the ground truth.
pub fn make_test_case(trajectory: &Trajectory, catalog: &Catalog) -> Result<TestCase, DataError> {
    if trajectory.len() < 2 {
        return Err(DataError::TrajectoryTooShort(trajectory.id.clone()));
    }
    let (last, context) = trajectory.checkins.split_last().expect("len >= 2");
    let ground_truth = catalog
        .get(&last.poi_id)
        .ok_or_else(|| DataError::UnknownPoi(last.poi_id.clone()))?;
    let current = &context[context.len() - 1];
    let current_poi = catalog
        .get(&current.poi_id)
        .ok_or_else(|| DataError::UnknownPoi(current.poi_id.clone()))?;

    Ok(TestCase {
        trajectory_id: trajectory.id.clone(),
        user_id: trajectory.user_id.clone(),
        context: context.to_vec(),
        ground_truth_poi: ground_truth.id.clone(),
        current_position: current_poi.location,
    })
}

/// Visit counts and per-user histories computed over the train split only.
#[derive(Debug, Default, Clone)]
pub struct TrainStats {
    poi_visits: HashMap<String, u64>,
    category_visits: HashMap<String, u64>,
    user_history: HashMap<String, Vec<CheckIn>>,
}

impl TrainStats {
    pub fn poi_count(&self, poi_id: &str) -> u64 {
        self.poi_visits.get(poi_id).copied().unwrap_or(0)
    }

    pub fn category_count(&self, category: &str) -> u64 {
        self.category_visits.get(category).copied().unwrap_or(0)
    }

    /// The user's train-split check-ins, oldest first. Unknown users get an
    /// empty history.
    pub fn history(&self, user_id: &str) -> &[CheckIn] {
        self.user_history.get(user_id).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn poi_visits(&self) -> &HashMap<String, u64> {
        &self.poi_visits
    }

    pub fn total_visits(&self) -> u64 {
        self.poi_visits.values().sum()
    }
}

/// Counts POI and category visits over the train split and collects each
/// user's time-ordered history.
pub fn build_stats(train: &[CheckIn], catalog: &Catalog) -> TrainStats {
    let mut stats = TrainStats::default();
    for checkin in train {
        *stats.poi_visits.entry(checkin.poi_id.clone()).or_insert(0) += 1;
        if let Some(poi) = catalog.get(&checkin.poi_id) {
            *stats.category_visits.entry(poi.category.clone()).or_insert(0) += 1;
        }
        stats.user_history.entry(checkin.user_id.clone()).or_default().push(checkin.clone());
    }
    stats
}

/// Dataset summary in the shape the `ingest` subcommand prints.
#[derive(Debug, Serialize, PartialEq)]
pub struct IngestSummary {
    pub users: usize,
    pub pois: usize,
    pub categories: usize,
    pub checkins: usize,
    pub test_trajectories: usize,
    pub all_test_trajectories: usize,
    pub dropped_singletons: usize,
    pub train_checkins: usize,
    pub validation_checkins: usize,
    pub test_checkins: usize,
    pub conflicting_duplicates: usize,
    pub skipped_records: usize,
}

pub fn summarize(loaded: &LoadedDataset, split: &DatasetSplit) -> IngestSummary {
    let mut users: Vec<&str> = loaded.checkins.iter().map(|c| c.user_id.as_str()).collect();
    users.sort_unstable();
    users.dedup();

    IngestSummary {
        users: users.len(),
        pois: loaded.catalog.len(),
        categories: loaded.catalog.category_count(),
        checkins: loaded.checkins.len(),
        test_trajectories: split.eligible_test_trajectories().count(),
        all_test_trajectories: split.test_trajectories.len(),
        dropped_singletons: split.dropped_singletons(),
        train_checkins: split.train.len(),
        validation_checkins: split.validation.len(),
        test_checkins: split.test_trajectories.iter().map(Trajectory::len).sum(),
        conflicting_duplicates: loaded.catalog.conflicting_duplicates(),
        skipped_records: loaded.skipped_records,
    }
}
