//! Range supervision for FP32 CNN classifiers under memory bit flips.
//!
//! The crate is `no_std` (it needs `alloc`). It covers bit-level FP32
//! manipulation, a small sequential inference engine with output hooks,
//! bound extraction and the restriction policies, weight and neuron fault
//! injection, a fixture trainer, and the campaign statistics. File formats,
//! parallel execution and the command line live in the `faultrange` crate.

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod bits;
pub mod campaign;
pub mod data;
pub mod error;
pub mod fault;
pub mod metrics;
pub mod nn;
pub mod protection;
pub mod rng;
pub mod tensor;
pub mod train;

pub use bits::{bit_state, flip_bit, BitIndex, MSB};
pub use campaign::{Campaign, CampaignConfig, CampaignCounts, CampaignReport, RunRecord};
pub use error::{Error, Result};
pub use fault::{FaultKind, FaultPlan, FaultSpec};
pub use nn::{forward, predict, InferenceOutcome, Layer, LayerHook, LayerKind, ModelGraph};
pub use protection::{BoundsProfile, Policy, ProtectionHook};
pub use tensor::{NonFinite, Tensor};
