//! Short-term voltage stability (STVS) laboratory.
//!
//! End-to-end pieces for studying post-fault voltage dynamics on meshed
//! transmission grids and classifying them with a small CNN:
//!
//! - [`grid`] — network model, grid file format, susceptance partitions,
//!   topology-change scenarios (embedded New England 39-bus dataset).
//! - [`steady`] — Newton-Raphson power flow and the steady-state stress
//!   mathematics: load matrix `L_s`, reactive demand `q_L`, stability
//!   index `Δ`.
//! - [`dynamics`] — time-domain simulation with classical generators and
//!   composite induction-motor loads under three-phase bus faults.
//! - [`features`] — topology-aware voltage dynamic features: per-snapshot
//!   `Δ_t`, stacked feature matrices, moving windows, PMU noise, labeling.
//! - [`nn`] — a minimal CNN engine (conv / batch-norm / dense / softmax)
//!   with Adam training, fine-tuning and finite-difference gradient checks.
//! - [`harness`] — dataset generation, k-fold evaluation, ablations and the
//!   topology-transfer experiment suite.
//!
//! The data-parallel inner loops (dataset generation, fold training, batch
//! gradient accumulation) run on rayon when the default `parallel` feature
//! is enabled and fall back to sequential iteration without it. Results are
//! bit-identical either way: work is split into fixed-size chunks and
//! reduced in index order.

pub mod dynamics;
pub mod exec;
pub mod features;
pub mod grid;
pub mod harness;
pub mod io;
pub mod nn;
pub mod steady;
