//! Simulation and analysis toolkit for DELTA, a distributed medium-access
//! protocol that keeps the Age of Incorrect Information (AoII) of anomaly
//! reports low by reasoning on common-knowledge public announcements.
//!
//! Modules follow the data flow of one slot: [`domain`] owns the ground
//! truth, [`channel`] resolves the uplink and the feedback, [`protocol`] and
//! [`baselines`] decide who transmits, and [`sim`] ties them together.
//! [`cr`] and [`smm`] hold the analytical models used to configure DELTA.

pub mod baselines;
pub mod channel;
pub mod cr;
pub mod domain;
pub mod error;
pub mod experiment;
pub mod numeric;
pub mod protocol;
pub mod sim;
pub mod smm;

pub use baselines::{BaselineConfig, BaselineKind};
pub use channel::{FeedbackModel, Observed, ObservedFeedback, OutcomeKind, SlotOutcome};
pub use cr::{ColliderBelief, PhaseTypeModel};
pub use domain::{NodeRecord, SystemParams};
pub use error::{Error, Result};
pub use protocol::{DeltaConfig, Phase, ProtocolState, Variant};
pub use sim::{run_episode, EpisodeConfig, MetricsLedger, ProtocolSpec};
pub use smm::{ModelVariant, SemiMarkovModel};
