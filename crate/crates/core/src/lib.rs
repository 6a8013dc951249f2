//! Capability-split 2D navigation: privileged depth-ray experts trained with
//! PPO in three scene families (reaching, squeezing, avoiding), distilled into
//! a single non-privileged student by success-filtered behavior cloning and
//! capability-balanced online data aggregation, evaluated by SR / CR / WTT on
//! fixed benchmark scenes.
//!
//! Crate layout mirrors the pipeline:
//!
//! - [`geom`] — planar shapes, intersection tests, ray casting
//! - [`world`] — procedural scene generation and dynamic-obstacle motion
//! - [`simkernel`] — kinematics, action clipping, collision, episode stepping
//! - [`sensing`] — four-view depth rays, expert/student observation assembly
//! - [`nn`] — dense tensors, reverse-mode autodiff, MLPs, Adam, checkpoints
//! - [`rlexpert`] — capability rewards, PPO, privileged expert training
//! - [`student`] — windowed multi-view student policy and BC loss
//! - [`distill`] — offline collection, DAgger, gap-balanced aggregation
//! - [`evalbench`] — fixed benchmark suites and SR/CR/WTT metrics
//! - [`config`] / [`dataset`] — run configuration and trajectory persistence

pub mod config;
pub mod dataset;
pub mod distill;
pub mod error;
pub mod evalbench;
pub mod geom;
pub mod nn;
pub mod rlexpert;
pub mod rng;
pub mod runner;
pub mod sensing;
pub mod simkernel;
pub mod student;
pub mod threads;
pub mod world;

pub use error::{Error, Result};
pub use world::Capability;
