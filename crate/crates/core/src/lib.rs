//! Run-time assessment and substitution of ML models by a non-functional
//! property, using Thompson sampling over execution traces.
//!
//! A [`bandit::CandidateSet`] holds one Beta posterior per model. The
//! [`window::Engine`] consumes traces one by one, updating posteriors,
//! closing evaluation windows via the value-remaining rule and swapping the
//! production model through [`substitution`]. [`harness`] runs dual-track
//! experiments and writes reports.

pub mod bandit;
pub mod domain;
pub mod error;
pub mod harness;
pub mod models;
pub mod rng;
pub mod scoring;
pub mod substitution;
pub mod window;

pub use bandit::{static_select, thompson_select, BetaState, CandidateSet, StaticSelection};
pub use domain::{EngineConfig, ExecutionTrace, FeatureSchema, NonFunctionalProperty, SubstitutionEvent};
pub use error::{Error, Result};
pub use window::{Engine, StepOutcome, WindowPolicy, WindowRecord};
