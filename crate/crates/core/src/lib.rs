//! Edge-gated discrete diffusion over scene graphs.
//!
//! A scene graph is a set of labeled nodes plus a dense directed pair grid
//! of edge bits and relation labels, with relations allowed only where the
//! edge bit is set. The crate provides the forward corruption chain, exact
//! reverse posteriors, a tabular Bayes denoiser and a small trainable
//! message-passing network, refinement kernels, reward-tilted SMC, and the
//! evaluation metrics.

pub mod completion;
pub mod config;
pub mod data;
pub mod denoiser;
pub mod error;
pub mod forward;
pub mod graph;
pub mod layout;
pub mod metrics;
pub mod refine;
pub mod reverse;
pub mod reward;
pub mod schedule;
pub mod smc;

pub use denoiser::{Denoiser, DenoiserOutput};
pub use error::{Error, Result};
pub use graph::{validate, SceneGraphState, ValidityReport, Vocabulary};
pub use layout::Bbox;
pub use schedule::{Channel, NoiseSchedule, ScheduleConfig};
