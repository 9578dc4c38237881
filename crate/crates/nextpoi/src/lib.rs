//! A benchmark harness for zero-shot next-POI recommendation.
//!
//! The pipeline: check-in ingestion → trajectory segmentation → candidate
//! construction → prompt assembly → chat-model dispatch → structured-response
//! scoring, plus distance/popularity baselines over the same candidate sets.
//! Every stage is deterministic given the run seed, so experiments replay
//! byte-for-byte with mock or cached backends.
//!
//! The `book/` directory of the repository is a guide to the concepts; its
//! code snippets compile and run as doc-tests of this crate.

pub mod baselines;
pub mod candidates;
pub mod dataset;
pub mod geo;
pub mod harness;
pub mod llm;
pub mod metrics;
pub mod prompting;
pub mod response;
pub mod seed;

// Keep the guide's snippets honest: every fenced Rust block in the book runs
// under `cargo test --doc`.
#[cfg(doctest)]
mod book {
    macro_rules! doc_check {
        ($name:ident, $path:literal) => {
            #[doc = include_str!($path)]
            #[allow(dead_code)]
            struct $name;
        };
    }

    doc_check!(Introduction, "../../../book/src/introduction.md");
    doc_check!(DataModel, "../../../book/src/data-model.md");
    doc_check!(Distances, "../../../book/src/distances.md");
    doc_check!(Candidates, "../../../book/src/candidates.md");
    doc_check!(Prompts, "../../../book/src/prompts.md");
    doc_check!(Backends, "../../../book/src/backends.md");
    doc_check!(Metrics, "../../../book/src/metrics.md");
    doc_check!(RunningExperiments, "../../../book/src/running.md");
}
