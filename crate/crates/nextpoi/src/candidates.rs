//! Candidate-set construction and presentation order.
//!
//! Each test case is evaluated against the ground-truth POI plus `n` POIs
//! sampled uniformly without replacement from the rest of the catalog. The
//! order in which candidates are presented is an experimental variable with
//! five strategies; every strategy is fully deterministic given the run seed
//! and the trajectory id.

use std::collections::HashSet;

use rand::SeedableRng;
use rand::Rng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{Catalog, DataError, TestCase, TrainStats};
use crate::geo::{haversine_distance, DistanceKm};
use crate::seed::subseed;

/// How candidates are ordered when presented to a recommender.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum OrderingStrategy {
    /// Ascending distance from the current position.
    DistAsc,
    /// Descending distance from the current position.
    DistDes,
    /// Seeded random shuffle.
    Rand,
    /// Ascending train-split category frequency.
    FreqAsc,
    /// Descending train-split category frequency.
    FreqDes,
}

impl std::fmt::Display for OrderingStrategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            OrderingStrategy::DistAsc => "dist-asc",
            OrderingStrategy::DistDes => "dist-des",
            OrderingStrategy::Rand => "rand",
            OrderingStrategy::FreqAsc => "freq-asc",
            OrderingStrategy::FreqDes => "freq-des",
        };
        f.write_str(s)
    }
}

/// A candidate POI annotated with everything the orderings and baselines use.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateEntry {
    pub poi_id: String,
    pub category: String,
    /// Distance from the test case's current position.
    pub distance_km: DistanceKm,
    /// Train-split visit count of this POI.
    pub popularity: u64,
    /// Train-split visit count of this POI's category.
    pub category_frequency: u64,
}

/// The ordered candidate list for one test case.
#[derive(Debug, Clone)]
pub struct CandidateSet {
    pub entries: Vec<CandidateEntry>,
    pub ground_truth_poi: String,
    pub ordering: OrderingStrategy,
    pub seed: u64,
}

impl CandidateSet {
    pub fn poi_ids(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.poi_id.as_str())
    }

    pub fn contains(&self, poi_id: &str) -> bool {
        self.entries.iter().any(|e| e.poi_id == poi_id)
    }
}

/// Uniformly samples `n` POI ids without replacement from the catalog minus
/// the ground truth. Deterministic given (seed, trajectory id).
pub fn sample_candidates(test_case: &TestCase, catalog: &Catalog, n: usize, seed: u64) -> Vec<String> {
    let pool: Vec<&str> = catalog
        .iter()
        .map(|p| p.id.as_str())
        .filter(|id| *id != test_case.ground_truth_poi)
        .collect();
    let amount = n.min(pool.len());
    let mut rng = ChaCha20Rng::seed_from_u64(subseed(seed, &test_case.trajectory_id, "sample"));
    rand::seq::index::sample(&mut rng, pool.len(), amount)
        .iter()
        .map(|i| pool[i].to_string())
        .collect()
}

/// Annotates the ground truth plus the sampled ids with distance, popularity,
/// and category frequency, then applies the ordering strategy.
pub fn build_candidate_set(
    test_case: &TestCase,
    sampled: &[String],
    catalog: &Catalog,
    stats: &TrainStats,
    ordering: OrderingStrategy,
    seed: u64,
) -> Result<CandidateSet, DataError> {
    let mut entries = Vec::with_capacity(sampled.len() + 1);
    for poi_id in std::iter::once(&test_case.ground_truth_poi).chain(sampled) {
        let poi = catalog.get(poi_id).ok_or_else(|| DataError::UnknownPoi(poi_id.clone()))?;
        entries.push(CandidateEntry {
            poi_id: poi.id.clone(),
            category: poi.category.clone(),
            distance_km: haversine_distance(test_case.current_position, poi.location),
            popularity: stats.poi_count(&poi.id),
            category_frequency: stats.category_count(&poi.category),
        });
    }
    // Canonical base order before the strategy is applied, so the shuffled
    // ordering does not depend on sampling order.
    entries.sort_by(|a, b| a.poi_id.cmp(&b.poi_id));
    order_candidates(&mut entries, ordering, seed, &test_case.trajectory_id);

    Ok(CandidateSet { entries, ground_truth_poi: test_case.ground_truth_poi.clone(), ordering, seed })
}

/// Reorders annotated entries in place. Sorting strategies break ties by poi
/// id ascending (Freq strategies by distance ascending first); Rand is a
/// Fisher-Yates shuffle over a per-case ChaCha stream.
pub fn order_candidates(entries: &mut [CandidateEntry], ordering: OrderingStrategy, seed: u64, trajectory_id: &str) {
    match ordering {
        OrderingStrategy::DistAsc => entries.sort_by(|a, b| {
            a.distance_km.km().total_cmp(&b.distance_km.km()).then_with(|| a.poi_id.cmp(&b.poi_id))
        }),
        OrderingStrategy::DistDes => entries.sort_by(|a, b| {
            b.distance_km.km().total_cmp(&a.distance_km.km()).then_with(|| a.poi_id.cmp(&b.poi_id))
        }),
        OrderingStrategy::Rand => {
            let mut rng = ChaCha20Rng::seed_from_u64(subseed(seed, trajectory_id, "shuffle"));
            fisher_yates(entries, &mut rng);
        }
        OrderingStrategy::FreqAsc => entries.sort_by(|a, b| {
            a.category_frequency
                .cmp(&b.category_frequency)
                .then_with(|| a.distance_km.km().total_cmp(&b.distance_km.km()))
                .then_with(|| a.poi_id.cmp(&b.poi_id))
        }),
        OrderingStrategy::FreqDes => entries.sort_by(|a, b| {
            b.category_frequency
                .cmp(&a.category_frequency)
                .then_with(|| a.distance_km.km().total_cmp(&b.distance_km.km()))
                .then_with(|| a.poi_id.cmp(&b.poi_id))
        }),
    }
}

fn fisher_yates<T>(items: &mut [T], rng: &mut impl Rng) {
    for i in (1..items.len()).rev() {
        let j = rng.gen_range(0..=i);
        items.swap(i, j);
    }
}

/// Checks the construction invariants of a candidate set; used by tests and
/// the harness debug path.
pub fn check_invariants(set: &CandidateSet) -> Result<(), String> {
    let mut seen = HashSet::new();
    for entry in &set.entries {
        if !entry.distance_km.km().is_finite() {
            return Err(format!("non-finite distance for {}", entry.poi_id));
        }
        if !seen.insert(entry.poi_id.as_str()) {
            return Err(format!("duplicate candidate {}", entry.poi_id));
        }
    }
    if !seen.contains(set.ground_truth_poi.as_str()) {
        return Err("ground truth missing from candidate set".into());
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{CheckIn, Poi};
    use crate::geo::GeoPoint;
    use rand::prelude::*;

    fn catalog_of(n: usize) -> Catalog {
        let mut catalog = Catalog::new();
        for i in 0..n {
            catalog.insert(Poi {
                id: format!("p{i:03}"),
                category: format!("cat{}", i % 7),
                location: GeoPoint::new((i as f64 * 0.7) % 80.0, (i as f64 * 1.3) % 170.0).unwrap(),
            });
        }
        catalog
    }

    fn case(gt: &str) -> TestCase {
        TestCase {
            trajectory_id: "u-100".into(),
            user_id: "u".into(),
            context: vec![CheckIn { user_id: "u".into(), poi_id: "p000".into(), utc_time: 0, tz_offset_minutes: 0 }],
            ground_truth_poi: gt.into(),
            current_position: GeoPoint::new(10.0, 10.0).unwrap(),
        }
    }

    fn stats_for(catalog: &Catalog) -> TrainStats {
        let train: Vec<CheckIn> = catalog
            .iter()
            .enumerate()
            .flat_map(|(i, p)| {
                (0..(i % 5)).map(move |k| CheckIn {
                    user_id: "u".into(),
                    poi_id: p.id.clone(),
                    utc_time: (i * 10 + k) as i64,
                    tz_offset_minutes: 0,
                })
            })
            .collect();
        crate::dataset::build_stats(&train, catalog)
    }

    #[test]
    fn small_catalog_is_exhausted() {
        let catalog = catalog_of(5);
        let sampled = sample_candidates(&case("p000"), &catalog, 100, 1);
        let mut sorted = sampled.clone();
        sorted.sort();
        assert_eq!(sorted, ["p001", "p002", "p003", "p004"]);
    }

    #[test]
    fn sampling_is_deterministic_per_seed() {
        let catalog = catalog_of(200);
        let a = sample_candidates(&case("p000"), &catalog, 100, 7);
        let b = sample_candidates(&case("p000"), &catalog, 100, 7);
        assert_eq!(a, b);
        let c = sample_candidates(&case("p000"), &catalog, 100, 8);
        assert_ne!(a, c);
    }

    #[test]
    fn sampling_never_returns_ground_truth() {
        let catalog = catalog_of(30);
        for seed in 0..20 {
            let sampled = sample_candidates(&case("p013"), &catalog, 10, seed);
            assert!(!sampled.contains(&"p013".to_string()));
            assert_eq!(sampled.len(), 10);
        }
    }

    #[test]
    fn sampling_inclusion_is_uniform() {
        // Binomial oracle: inclusion probability of each non-ground-truth POI
        // is 10/49; over 10_000 draws the observed frequency must fall within
        // 3 sigma of that.
        let catalog = catalog_of(50);
        let mut counts = std::collections::HashMap::new();
        let draws = 10_000u32;
        for seed in 0..draws {
            let mut tc = case("p000");
            tc.trajectory_id = format!("u-{seed}");
            for id in sample_candidates(&tc, &catalog, 10, u64::from(seed)) {
                *counts.entry(id).or_insert(0u32) += 1;
            }
        }
        let p = 10.0 / 49.0;
        let sigma = (p * (1.0 - p) / f64::from(draws)).sqrt();
        for i in 1..50 {
            let id = format!("p{i:03}");
            let freq = f64::from(counts.get(&id).copied().unwrap_or(0)) / f64::from(draws);
            assert!((freq - p).abs() <= 3.0 * sigma, "{id}: freq {freq} vs expected {p}");
        }
    }

    #[test]
    fn built_set_contains_ground_truth_once() {
        let catalog = catalog_of(150);
        let tc = case("p010");
        let stats = stats_for(&catalog);
        let sampled = sample_candidates(&tc, &catalog, 100, 3);
        let set = build_candidate_set(&tc, &sampled, &catalog, &stats, OrderingStrategy::DistAsc, 3).unwrap();
        assert_eq!(set.entries.len(), 101);
        assert_eq!(set.poi_ids().filter(|id| *id == "p010").count(), 1);
        check_invariants(&set).unwrap();
    }

    #[test]
    fn built_set_distances_match_recomputation() {
        let catalog = catalog_of(40);
        let tc = case("p000");
        let stats = stats_for(&catalog);
        let sampled = sample_candidates(&tc, &catalog, 20, 5);
        let set = build_candidate_set(&tc, &sampled, &catalog, &stats, OrderingStrategy::Rand, 5).unwrap();
        let points: Vec<GeoPoint> = set.entries.iter().map(|e| catalog.get(&e.poi_id).unwrap().location).collect();
        let recomputed = crate::geo::distances_to_candidates(tc.current_position, &points);
        for (entry, d) in set.entries.iter().zip(recomputed) {
            assert_eq!(entry.distance_km.km(), d.km());
        }
    }

    #[test]
    fn unknown_sampled_id_is_rejected() {
        let catalog = catalog_of(5);
        let tc = case("p000");
        let stats = stats_for(&catalog);
        let err = build_candidate_set(&tc, &["zzz".to_string()], &catalog, &stats, OrderingStrategy::DistAsc, 1);
        assert!(matches!(err, Err(DataError::UnknownPoi(id)) if id == "zzz"));
    }

    fn random_entries(rng: &mut impl Rng, n: usize) -> Vec<CandidateEntry> {
        (0..n)
            .map(|i| CandidateEntry {
                poi_id: format!("p{i:03}"),
                category: format!("cat{}", rng.gen_range(0..5)),
                distance_km: haversine_distance(
                    GeoPoint::new(0.0, 0.0).unwrap(),
                    GeoPoint::new(rng.gen_range(-10.0..10.0), rng.gen_range(-10.0..10.0)).unwrap(),
                ),
                popularity: rng.gen_range(0..50),
                category_frequency: rng.gen_range(0..200),
            })
            .collect()
    }

    #[test]
    fn dist_des_is_reverse_of_dist_asc_for_distinct_keys() {
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(1);
        let mut entries = random_entries(&mut rng, 30);
        // Distinct distances with overwhelming probability; enforce anyway.
        entries.dedup_by(|a, b| a.distance_km == b.distance_km);
        let mut asc = entries.clone();
        order_candidates(&mut asc, OrderingStrategy::DistAsc, 0, "t");
        let mut des = entries.clone();
        order_candidates(&mut des, OrderingStrategy::DistDes, 0, "t");
        asc.reverse();
        assert_eq!(asc, des);
    }

    #[test]
    fn equal_distances_fall_back_to_poi_id() {
        let entry = |id: &str| CandidateEntry {
            poi_id: id.into(),
            category: "c".into(),
            distance_km: haversine_distance(GeoPoint::new(0.0, 0.0).unwrap(), GeoPoint::new(0.0, 1.0).unwrap()),
            popularity: 0,
            category_frequency: 0,
        };
        let mut entries = vec![entry("b"), entry("c"), entry("a")];
        order_candidates(&mut entries, OrderingStrategy::DistAsc, 0, "t");
        let ids: Vec<&str> = entries.iter().map(|e| e.poi_id.as_str()).collect();
        assert_eq!(ids, ["a", "b", "c"]);
    }

    #[test]
    fn rand_ordering_matches_reference_shuffle() {
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(2);
        let base = random_entries(&mut rng, 25);

        let mut got = base.clone();
        got.sort_by(|a, b| a.poi_id.cmp(&b.poi_id));
        order_candidates(&mut got, OrderingStrategy::Rand, 77, "traj-9");

        // Reference shuffle written out independently of order_candidates.
        let mut want = base;
        want.sort_by(|a, b| a.poi_id.cmp(&b.poi_id));
        let mut oracle_rng = rand_chacha::ChaCha20Rng::seed_from_u64(subseed(77, "traj-9", "shuffle"));
        let mut i = want.len() - 1;
        while i >= 1 {
            let j = oracle_rng.gen_range(0..=i);
            want.swap(i, j);
            i -= 1;
        }
        assert_eq!(got, want);
    }

    #[test]
    fn orderings_preserve_the_multiset() {
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(3);
        for ordering in [
            OrderingStrategy::DistAsc,
            OrderingStrategy::DistDes,
            OrderingStrategy::Rand,
            OrderingStrategy::FreqAsc,
            OrderingStrategy::FreqDes,
        ] {
            let entries = random_entries(&mut rng, 40);
            let mut ordered = entries.clone();
            order_candidates(&mut ordered, ordering, 5, "t");
            let mut a: Vec<String> = entries.iter().map(|e| e.poi_id.clone()).collect();
            let mut b: Vec<String> = ordered.iter().map(|e| e.poi_id.clone()).collect();
            a.sort();
            b.sort();
            assert_eq!(a, b, "{ordering:?} must permute, not alter");
        }
    }

    #[test]
    fn freq_orderings_sort_by_category_frequency() {
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(4);
        let mut asc = random_entries(&mut rng, 60);
        order_candidates(&mut asc, OrderingStrategy::FreqAsc, 0, "t");
        assert!(asc.windows(2).all(|w| w[0].category_frequency <= w[1].category_frequency));
        let mut des = asc.clone();
        order_candidates(&mut des, OrderingStrategy::FreqDes, 0, "t");
        assert!(des.windows(2).all(|w| w[0].category_frequency >= w[1].category_frequency));
    }
}
