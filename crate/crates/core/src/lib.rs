//! Multipath QUIC over a space-air-ground network: a slot-level simulator
//! with learned path scheduling, handover-aware congestion control and a
//! reward-drift monitor.

pub mod autodiff;
pub mod cc;
pub mod error;
pub mod gpasp;
pub mod harness;
pub mod metrics;
pub mod rhrm;
pub mod scenario;
pub mod sched;
pub mod transport;

pub use error::{Error, Result};
