//! Identification of time-dependent switched dynamical systems from
//! input-state traces.
//!
//! The pipeline has four stages, each usable on its own:
//!
//! 1. [`detection`] — locate switching instants from finite-difference
//!    discontinuity statistics and segment the traces between them.
//! 2. [`modeling`] — merge segments that admit a common least-squares fit
//!    and train one extreme learning machine per discovered subsystem.
//! 3. [`reconstruction`] — label the detected instants with subsystem
//!    indices and, for (semi-)periodic switching, infer a closed-form
//!    time-dependent switching law.
//! 4. [`pipeline`] — orchestration, artifact files, and evaluation against
//!    ground truth.
//!
//! A switched-linear [`simulator`] with a DC-DC boost-converter preset
//! generates ground-truth traces for end-to-end validation.

pub mod activation;
pub mod detection;
pub mod elm;
pub mod error;
pub mod modeling;
pub mod pipeline;
pub mod reconstruction;
pub mod simulator;
pub mod trace;

pub use activation::ActivationKind;
pub use elm::{ElmModel, HiddenLayer};
pub use error::{Error, Result};
pub use trace::Trace;
