//! Code-domain sparse multiple access with slot-index modulation.
//!
//! Each user spreads a block of `n` slots over `K` shared resources, keeping `t`
//! slots active. The active pattern carries index bits chosen from a lookup
//! table and each active slot carries one sparse codeword. The receiver runs
//! per-slot message passing and repairs users whose detected pattern is not a
//! valid table row with a joint partial maximum-likelihood search.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod channel;
pub mod codebook;
pub mod error;
pub mod index_map;
pub mod mpa;
pub mod mpad;
pub mod sim;
pub mod transmitter;

pub use channel::{ChannelState, Coherence, ReceivedFrame};
pub use codebook::{Codebook, FactorGraph};
pub use error::{Error, Result};
pub use index_map::IndexLut;
pub use mpa::{Entry, MpaDetector, MpaParams, ZeroPrior};
pub use mpad::{FrameDetection, Mpad, PatternCase};
pub use sim::{run_sweep, SimConfig, SimSystem, SweepPoint, SweepReport, System};
pub use transmitter::{BlockFormat, NormalizeMode, SymbolMapping, UserBlock};
