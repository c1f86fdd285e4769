//! An in-process serverless analytics platform whose control plane is
//! programmed through decision workflows.
//!
//! * [`dataplane`]: deterministic discrete-event cluster that runs function
//!   instances under per-node slot limits and models network time.
//! * [`operators`]: scan, shuffle partitioning, sort-merge and broadcast hash
//!   joins, group-by.
//! * [`decision`]: decision nodes, placement policies, plan compilation and the
//!   workflow runner.
//! * [`controlplane`]: shared cell state with optimistic commits and
//!   priority arbitration between tenants.
//! * [`bench`]: table generation, scenarios, CSV output and reporting.

pub mod bench;
pub mod controlplane;
pub mod dataplane;
pub mod decision;
pub mod error;
pub mod model;
pub mod operators;

pub use error::{Error, Result};
