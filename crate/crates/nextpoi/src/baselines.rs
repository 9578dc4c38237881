//! Non-LLM reference recommenders over the same candidate sets.

use crate::candidates::CandidateSet;

/// Top-k candidates by train-split visit count, most visited first; ties by
/// poi id ascending. Popularity is global across all users.
pub fn recommend_popu(candidate_set: &CandidateSet, k: usize) -> Vec<String> {
    let mut entries: Vec<(&str, u64)> =
        candidate_set.entries.iter().map(|e| (e.poi_id.as_str(), e.popularity)).collect();
    entries.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    entries.into_iter().take(k).map(|(id, _)| id.to_string()).collect()
}

/// Top-k candidates by distance from the current position, nearest first;
/// ties by poi id ascending.
pub fn recommend_dist(candidate_set: &CandidateSet, k: usize) -> Vec<String> {
    let mut entries: Vec<(&str, f64)> =
        candidate_set.entries.iter().map(|e| (e.poi_id.as_str(), e.distance_km.km())).collect();
    entries.sort_by(|a, b| a.1.total_cmp(&b.1).then_with(|| a.0.cmp(b.0)));
    entries.into_iter().take(k).map(|(id, _)| id.to_string()).collect()
}
