//! Prompt assembly.
//!
//! A prompt presents three kinds of background data — the user's long-term
//! history, the current trajectory, and the candidate list with precomputed
//! distances — followed by numbered ranking requirements and a JSON output
//! instruction. Each of the four requirements can be ablated independently;
//! the current-position line always stays because candidate distances are
//! measured from it.

use serde::{Deserialize, Serialize};

use crate::candidates::{CandidateEntry, CandidateSet, OrderingStrategy};
use crate::dataset::{Catalog, CheckIn, DataError, TestCase};
use crate::geo::DistanceKm;

pub const SYSTEM_TEXT: &str = "You are a location recommendation assistant. Given a user's check-in \
                               history and a list of candidate places, you select the candidates the user \
                               is most likely to visit next.";

pub const LONG_TERM_HEADER: &str = "The user's long-term check-in history (oldest first):";
pub const RECENT_HEADER: &str = "The user's check-ins in the current trajectory (oldest first):";
pub const CANDIDATE_HEADER: &str = "The candidate places for the next check-in:";
pub const REQUIREMENTS_HEADER: &str = "When ranking the candidates, consider the following:";
pub const CURRENT_POSITION_SUFFIX: &str = " <- current position";
pub const EMPTY_HISTORY_BODY: &str = "None";

const REQUIREMENT_LP: &str =
    "The long-term history shows which places and categories the user generally prefers.";
const REQUIREMENT_RP: &str =
    "The check-ins in the current trajectory show what the user is interested in right now.";
const REQUIREMENT_GEO: &str =
    "Users usually go somewhere close by, so candidates with a smaller distance from the current position are more likely.";
const REQUIREMENT_SEQ: &str =
    "Transitions between consecutive categories in the long-term history show which kind of place tends to follow which.";

/// Which requirement statements (and their data blocks) are active.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RequirementFlags {
    pub lp: bool,
    pub rp: bool,
    pub geo: bool,
    pub seq: bool,
}

impl Default for RequirementFlags {
    fn default() -> Self {
        RequirementFlags::ALL
    }
}

impl RequirementFlags {
    /// The canonical configuration: all four requirements active.
    pub const ALL: RequirementFlags = RequirementFlags { lp: true, rp: true, geo: true, seq: true };

    pub const NONE: RequirementFlags = RequirementFlags { lp: false, rp: false, geo: false, seq: false };

    pub fn any(&self) -> bool {
        self.lp || self.rp || self.geo || self.seq
    }
}

/// A check-in resolved to what the prompt shows: id and category.
#[derive(Debug, Clone, PartialEq)]
pub struct Visit {
    pub poi_id: String,
    pub category: String,
}

impl Visit {
    pub fn resolve(checkin: &CheckIn, catalog: &Catalog) -> Result<Visit, DataError> {
        let poi = catalog
            .get(&checkin.poi_id)
            .ok_or_else(|| DataError::UnknownPoi(checkin.poi_id.clone()))?;
        Ok(Visit { poi_id: poi.id.clone(), category: poi.category.clone() })
    }
}

/// A fully rendered prompt plus the knobs that produced it.
#[derive(Debug, Clone)]
pub struct PromptBundle {
    pub system_text: String,
    pub user_text: String,
    pub flags: RequirementFlags,
    pub ordering: OrderingStrategy,
    pub trajectory_id: String,
    pub candidate_count: usize,
    pub top_k: usize,
}

fn visit_line(visit: &Visit) -> String {
    format!("(POIID {}, Category {})", visit.poi_id, visit.category)
}

/// Kilometres formatted exactly as prompts print them: two decimals, ties to
/// even (the rounding `format!` performs on binary floats).
pub fn format_km(distance: DistanceKm) -> String {
    format!("{:.2}", distance.km())
}

fn candidate_line(entry: &CandidateEntry, include_distance: bool) -> String {
    if include_distance {
        format!(
            "(POIID {}, Category {}, Distance {} km)",
            entry.poi_id,
            entry.category,
            format_km(entry.distance_km)
        )
    } else {
        format!("(POIID {}, Category {})", entry.poi_id, entry.category)
    }
}

/// The long-term block: the `m` most recent visits, oldest first, or a
/// literal `None` body for users with no history.
pub fn render_long_term_block(history: &[Visit], m: usize) -> String {
    let mut out = String::from(LONG_TERM_HEADER);
    out.push('\n');
    if history.is_empty() {
        out.push_str(EMPTY_HISTORY_BODY);
        return out;
    }
    let start = history.len().saturating_sub(m);
    let mut lines = history[start..].iter().map(visit_line);
    out.push_str(&lines.next().expect("non-empty"));
    for line in lines {
        out.push('\n');
        out.push_str(&line);
    }
    out
}

/// The current-trajectory block. The final visit is tagged as the current
/// position, which candidate distances are measured from.
pub fn render_recent_block(context: &[Visit]) -> Result<String, DataError> {
    let Some((current, earlier)) = context.split_last() else {
        return Err(DataError::EmptyContext);
    };
    let mut out = String::from(RECENT_HEADER);
    for visit in earlier {
        out.push('\n');
        out.push_str(&visit_line(visit));
    }
    out.push('\n');
    out.push_str(&visit_line(current));
    out.push_str(CURRENT_POSITION_SUFFIX);
    Ok(out)
}

/// The candidate block, one line per entry in set order. Distances are
/// omitted when the geographical requirement is ablated.
pub fn render_candidate_block(set: &CandidateSet, include_distance: bool) -> String {
    let mut out = String::from(CANDIDATE_HEADER);
    for entry in &set.entries {
        out.push('\n');
        out.push_str(&candidate_line(entry, include_distance));
    }
    out
}

/// The numbered requirement statements for the active flags. Numbering stays
/// contiguous when requirements are ablated. Empty when no flag is set.
pub fn render_requirements(flags: RequirementFlags) -> String {
    let active: Vec<&str> = [
        (flags.lp, REQUIREMENT_LP),
        (flags.rp, REQUIREMENT_RP),
        (flags.geo, REQUIREMENT_GEO),
        (flags.seq, REQUIREMENT_SEQ),
    ]
    .into_iter()
    .filter_map(|(on, text)| on.then_some(text))
    .collect();

    if active.is_empty() {
        return String::new();
    }
    let mut out = String::from(REQUIREMENTS_HEADER);
    for (i, text) in active.iter().enumerate() {
        out.push('\n');
        out.push_str(&format!("{}. {}", i + 1, text));
    }
    out
}

fn output_instruction(top_k: usize) -> String {
    format!(
        "Answer with a single JSON object containing two keys: \"recommendation\", an array of exactly \
         {top_k} candidate POIID strings ordered from most to least likely, and \"reason\", a string briefly \
         explaining the choice. Output nothing else."
    )
}

/// Renders the full prompt for one test case.
///
/// The long-term block appears when either the long-term or the sequential
/// requirement is active (sequential transitions are read off the long-term
/// history). The current-position line is always present; ablating the recent
/// requirement drops only the earlier trajectory check-ins.
pub fn build_prompt(
    test_case: &TestCase,
    candidate_set: &CandidateSet,
    history: &[CheckIn],
    catalog: &Catalog,
    flags: RequirementFlags,
    m_long_term: usize,
    top_k: usize,
) -> Result<PromptBundle, DataError> {
    if test_case.context.is_empty() {
        return Err(DataError::EmptyContext);
    }

    let mut sections: Vec<String> = Vec::new();

    if flags.lp || flags.seq {
        let visits: Vec<Visit> =
            history.iter().map(|c| Visit::resolve(c, catalog)).collect::<Result<_, _>>()?;
        sections.push(render_long_term_block(&visits, m_long_term));
    }

    let context_visits: Vec<Visit> =
        test_case.context.iter().map(|c| Visit::resolve(c, catalog)).collect::<Result<_, _>>()?;
    let shown: &[Visit] = if flags.rp {
        &context_visits
    } else {
        &context_visits[context_visits.len() - 1..]
    };
    sections.push(render_recent_block(shown)?);

    sections.push(render_candidate_block(candidate_set, flags.geo));

    let requirements = render_requirements(flags);
    if !requirements.is_empty() {
        sections.push(requirements);
    }

    sections.push(output_instruction(top_k));

    Ok(PromptBundle {
        system_text: SYSTEM_TEXT.to_string(),
        user_text: sections.join("\n\n") + "\n",
        flags,
        ordering: candidate_set.ordering,
        trajectory_id: test_case.trajectory_id.clone(),
        candidate_count: candidate_set.entries.len(),
        top_k,
    })
}

/// One `(POIID …)` line parsed back out of a prompt.
#[derive(Debug, Clone, PartialEq)]
pub struct ParsedLine {
    pub poi_id: String,
    pub category: String,
    pub distance_km: Option<f64>,
    pub is_current_position: bool,
}

/// Parses a visit or candidate line. Returns `None` for anything that is not
/// in the `(POIID …, Category …[, Distance … km])` shape.
pub fn parse_prompt_line(line: &str) -> Option<ParsedLine> {
    let line = line.trim();
    let (body, is_current_position) = match line.strip_suffix(CURRENT_POSITION_SUFFIX) {
        Some(body) => (body, true),
        None => (line, false),
    };
    let inner = body.strip_prefix('(')?.strip_suffix(')')?;
    let rest = inner.strip_prefix("POIID ")?;
    let (poi_id, rest) = rest.split_once(", Category ")?;
    let (category, distance_km) = match rest.rsplit_once(", Distance ") {
        Some((category, tail)) => {
            let km: f64 = tail.strip_suffix(" km")?.parse().ok()?;
            (category, Some(km))
        }
        None => (rest, None),
    };
    Some(ParsedLine {
        poi_id: poi_id.to_string(),
        category: category.to_string(),
        distance_km,
        is_current_position,
    })
}

/// Extracts the candidate block lines from a rendered user text. This is what
/// the mock backends see; it reads the same line grammar `build_prompt`
/// writes.
pub fn extract_candidates(user_text: &str) -> Vec<ParsedLine> {
    let mut out = Vec::new();
    let mut in_block = false;
    for line in user_text.lines() {
        if line == CANDIDATE_HEADER {
            in_block = true;
            continue;
        }
        if in_block {
            match parse_prompt_line(line) {
                Some(parsed) => out.push(parsed),
                None => break,
            }
        }
    }
    out
}
