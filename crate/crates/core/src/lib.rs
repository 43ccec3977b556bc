//! Prior-free fair allocation for single-slot ad auctions.
pub mod alloc;
pub mod dataset;
pub mod error;
pub mod payments;
pub mod profiler;
pub mod stability;
pub mod subset;

pub use alloc::{AllocRule, Allocation, AllocationRule, ValueVector};
pub use error::{Error, Result};
