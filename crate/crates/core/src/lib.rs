//! Evaluation of a binary surrogate endpoint against a time-to-event
//! endpoint across randomized trials.
//!
//! Digitized Kaplan-Meier curves are turned back into patient-level data,
//! per-trial treatment effects are estimated, and surrogacy is summarized
//! at the individual level (the Plackett global odds ratio) and at the
//! trial level (weighted regression R², copula R², surrogate threshold
//! effect).

pub mod copula;
pub mod ingest;
pub mod jet;
pub mod meta;
pub mod optim;
pub mod pipeline;
pub mod reconstruct;
pub mod report;
pub mod rng;
pub mod simlab;
pub mod survival;
pub mod svg;
