//! Shared helpers for the integration and acceptance suites.
#![allow(dead_code)]

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::prelude::*;
use rand_chacha::ChaCha20Rng;

use nextpoi::harness::RunConfig;

pub const CATEGORIES: &[&str] = &[
    "Bar",
    "Gym / Fitness Center",
    "Coffee Shop",
    "Home (private)",
    "Subway",
    "Park",
    "Office",
    "Neighborhood",
    "Elementary School",
    "Plaza",
];

pub fn fmt_timestamp(utc_secs: i64) -> String {
    chrono::DateTime::from_timestamp(utc_secs, 0)
        .expect("valid timestamp")
        .format("%a %b %d %H:%M:%S %z %Y")
        .to_string()
}

fn record_line(user: &str, poi: &str, category: &str, lat: f64, lon: f64, utc_secs: i64) -> String {
    let cat_idx = CATEGORIES.iter().position(|c| *c == category).unwrap_or(0);
    format!(
        "{user}\t{poi}\tcid{cat_idx:02}\t{category}\t{lat:.6}\t{lon:.6}\t-240\t{}",
        fmt_timestamp(utc_secs)
    )
}

/// A deterministic synthetic check-in log in the harness input layout:
/// `n_checkins` records over `n_users` users and `n_pois` POIs around one
/// city, with timestamps advancing ~10 minutes per record so per-user test
/// trajectories of length >= 2 occur naturally.
pub fn synthetic_checkins(n_users: usize, n_pois: usize, n_checkins: usize, seed: u64) -> String {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let pois: Vec<(String, &str, f64, f64)> = (0..n_pois)
        .map(|i| {
            (
                format!("p{i:04}"),
                CATEGORIES[i % CATEGORIES.len()],
                40.5 + rng.gen_range(0.0..0.4),
                -74.2 + rng.gen_range(0.0..0.4),
            )
        })
        .collect();

    let base = 1_333_475_000i64; // 2012-04-03, matching the source data era
    let mut out = String::new();
    for i in 0..n_checkins {
        let user = rng.gen_range(0..n_users);
        let (id, category, lat, lon) = &pois[rng.gen_range(0..n_pois)];
        let t = base + (i as i64) * 600 + rng.gen_range(0..300);
        let _ = writeln!(out, "{}", record_line(&format!("u{user}"), id, category, *lat, *lon, t));
    }
    out
}

/// A 10-POI catalog arranged in five far-apart pairs, with the final fifteen
/// check-ins forming five per-user test trajectories `[b_i, a_i, a_i]`: the
/// ground truth `a_i` is a repeat visit of the current position, which makes
/// it the unique nearest candidate (distance zero beats the 111 m pair mate
/// and the 200+ km everything else). With 150 records total the 80/10/10
/// split puts exactly those fifteen check-ins in the test portion.
pub fn paired_poi_dataset() -> String {
    let poi = |i: usize, half: usize| -> (String, f64, f64) {
        let lat = 10.0 + 2.0 * i as f64 + 0.001 * half as f64;
        (format!("pair{i}{}", ["a", "b"][half]), lat, 50.0)
    };

    let base = 1_333_475_000i64;
    let mut out = String::new();
    let mut t = base;
    // 135 train/validation records cycling through every POI.
    for step in 0..135 {
        let (id, lat, lon) = poi(step % 5, (step / 5) % 2);
        let user = format!("u{}", step % 5);
        let _ = writeln!(out, "{}", record_line(&user, &id, CATEGORIES[step % 3], lat, lon, t));
        t += 600;
    }
    // 15 test records: user i visits b_i, moves to a_i, then checks in at
    // a_i again.
    for i in 0..5 {
        for half in [1usize, 0, 0] {
            let (id, lat, lon) = poi(i, half);
            let _ = writeln!(out, "{}", record_line(&format!("u{i}"), &id, CATEGORIES[i % 3], lat, lon, t));
            t += 600;
        }
    }
    out
}

pub fn write_dataset(dir: &Path, name: &str, content: &str) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, content).expect("write dataset");
    path
}

/// Repository root (two levels above the crate manifest).
pub fn workspace_root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .parent()
        .and_then(Path::parent)
        .expect("workspace root")
        .to_path_buf()
}

/// Locates a real check-in file by env var (`NEXTPOI_NYC` / `NEXTPOI_TKY`) or
/// under `<repo>/data/dataset_TSMC2014_<NAME>.txt`. Returns `None` when the
/// file is not available in this environment.
pub fn real_dataset(name: &str) -> Option<PathBuf> {
    if let Ok(path) = std::env::var(format!("NEXTPOI_{name}")) {
        let path = PathBuf::from(path);
        if path.exists() {
            return Some(path);
        }
    }
    let fallback = workspace_root().join("data").join(format!("dataset_TSMC2014_{name}.txt"));
    fallback.exists().then_some(fallback)
}

/// Base run configuration over a dataset file, writing under `dir`.
pub fn base_config(dataset: &Path, dir: &Path, out_name: &str) -> RunConfig {
    RunConfig {
        dataset: dataset.to_path_buf(),
        out: dir.join(out_name),
        ..RunConfig::default()
    }
}

/// True iff `needle` is a (not necessarily contiguous) character subsequence
/// of `hay`.
pub fn is_char_subsequence(needle: &str, hay: &str) -> bool {
    let mut hay_chars = hay.chars();
    needle.chars().all(|n| hay_chars.by_ref().any(|h| h == n))
}

/// Removes the `N. ` numbering from requirement lines so prompts can be
/// compared across ablations. Ablating a flag deletes content but also
/// renumbers the requirement list; modulo that renumbering, an ablated
/// prompt deletes characters from the full one and nothing else.
pub fn strip_requirement_numbers(text: &str) -> String {
    let lines: Vec<String> = text
        .lines()
        .map(|line| match line.split_once(". ") {
            Some((prefix, rest))
                if !prefix.is_empty() && prefix.chars().all(|c| c.is_ascii_digit()) =>
            {
                format!(". {rest}")
            }
            _ => line.to_string(),
        })
        .collect();
    lines.join("\n")
}
