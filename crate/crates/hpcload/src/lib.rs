//! Per-user snapshot of CPU, memory, and GPU utilization across the nodes
//! running a user's cluster jobs.
//!
//! The pipeline orchestrates the scheduler's own commands plus a remote GPU
//! query, joins the results into a [`model::UserLoadReport`], and renders
//! it as an aligned table or stable JSON. Every external command goes
//! through the [`transport`] seam, so the whole thing runs against an
//! on-disk fixture tree as readily as against a live cluster.

pub mod aggregate;
pub mod cli;
pub mod fixture;
pub mod gpu;
pub mod hostlist;
pub mod model;
pub mod render;
pub mod scheduler;
pub mod transport;
