//! Fair division of indivisible goods under additive valuations.
//!
//! The crate covers the whole evaluation pipeline:
//!
//! * [`model`], [`welfare`], [`envy`]: instances, allocations, welfare and
//!   EF1/EFX checks
//! * [`gen`]: seeded uniform, Pareto and correlated valuation generators
//! * [`baselines`]: Round-Robin, Envy Cycle Elimination, MaxUtil
//! * [`repair`]: EF1 repair by Nash-improving transfers
//! * [`exact`]: optimal utilitarian and Nash welfare
//! * [`tensor`]: a small reverse-mode autodiff engine
//! * [`fairformer`]: the two-tower attention allocator and its trainer
//! * [`harness`]: cohort evaluation, statistics, timing and report files

pub mod baselines;
pub mod envy;
pub mod error;
pub mod exact;
pub mod fairformer;
pub mod gen;
pub mod harness;
pub mod model;
pub mod repair;
pub mod rng;
pub mod tensor;
pub mod welfare;

pub use error::{Error, Result};
pub use exact::ExactNwResult;
pub use model::{Allocation, DiscreteAllocation, FractionalAllocation, Instance, InstanceMeta, UtilityVector};
pub use repair::RepairResult;
