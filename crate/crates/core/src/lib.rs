//! Survey-conditioned language model sampling.
//!
//! This library turns coded survey records into first-person conditioning
//! texts, harvests completions or next-token probabilities from a language
//! model, and quantifies how faithful the model-derived responses are to the
//! original human data.
//!
//! The pipeline is split into narrow layers:
//!
//! * [`survey`] loads and validates coded survey tables against a codebook.
//! * [`templating`] renders backstories and interview transcripts from
//!   records, with fragment omission for missing values.
//! * [`backend`] abstracts the language model: HTTP providers, deterministic
//!   mocks, a replay store, plus caching and cost accounting.
//! * [`probes`] collapses next-token distributions onto candidate token sets
//!   and normalizes them into head-to-head probabilities.
//! * [`extraction`] codes free-text completions: word lists and closed
//!   interview answers.
//! * [`stats`] holds the fidelity metrics: tetrachoric correlation, Cohen's
//!   kappa, intraclass correlation, proportion agreement, and Cramér's V
//!   association matrices.
//! * [`experiments`] wires the layers into reproducible study runs with
//!   manifests, seeded randomness, and bounded parallelism.

pub mod backend;
pub mod exec;
pub mod experiments;
pub mod extraction;
pub mod probes;
pub mod stats;
pub mod survey;
pub mod templating;
