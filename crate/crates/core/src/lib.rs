//! Semi-discrete optimal transport for discrete measures.
//!
//! Transport cost between two weighted point clouds is approximated by
//! forcing every unit of mass through one of `m` center points: the
//! two-leg cost `min_z c1(x,z) + c2(z,y)` dominates the ground cost and
//! the approximation error shrinks as centers are added. The resulting
//! problem has a concave, piecewise-linear dual in the `m` center prices,
//! which this crate maximizes by projected supergradient ascent. From the
//! maximizing prices it extracts the two cell partitions, balances their
//! masses, assembles the sparse optimal plan, and improves the center set
//! by a monotone Lloyd-type loop.
//!
//! An exact linear-programming oracle for small instances lives in
//! [`oracle`], used to verify the dual value and to measure the
//! approximation gap and its decay rate.

pub mod cost;
pub mod dual;
pub mod error;
pub mod measures;
pub mod optimizer;
pub mod oracle;
pub mod partition;
pub mod refine;
pub mod seeding;

pub use crate::cost::{CenterSet, CostSpec, Leg};
pub use crate::dual::{DualEval, PriceVector};
pub use crate::error::{Error, Result};
pub use crate::measures::{DiscreteMeasure, MapKind, MapSpec, Point};
pub use crate::optimizer::{SolveOptions, SolveReport, StepPolicy};
pub use crate::oracle::{CostMatrix, GapReport, SweepResult};
pub use crate::partition::{Partition, Side, TransportPlan};
pub use crate::refine::{RefineOptions, RefineTrajectory, StopReason};
