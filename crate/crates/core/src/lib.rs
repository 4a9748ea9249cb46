//! Batched sparse BiCG for stiff chemical kinetics, with an analytic model of
//! GPU thread-block layouts.
//!
//! The crate solves many small independent sparse systems (one per grid cell)
//! under three load-distribution layouts:
//!
//! * **One-cell**: every cell solved on its own, sequentially.
//! * **Multi-cells**: all cells assembled into one block-diagonal system with a
//!   single global convergence test, reduced in two stages (per block, then on
//!   the host).
//! * **Block-cells(k)**: `k` whole cells per thread block, each block an
//!   independent system with an in-block reduction; `k = N` packs as many
//!   cells as fit in one block.
//!
//! [`exec_model`] plans the simulated launch geometry; [`bicg`] runs the
//! solver with the reduction order that geometry implies; [`problem`]
//! generates synthetic stiff systems; [`bench`] drives experiments.

pub mod bench;
pub mod bicg;
pub mod direct;
pub mod error;
pub mod exec_model;
pub mod problem;
pub mod sparse;
pub mod strategies;

pub use error::{Error, Result};
