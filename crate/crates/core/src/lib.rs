//! Constrained backward stochastic differential equations on a binomial lattice.
//!
//! The crate computes the minimal supersolution of a BSDE whose solution must
//! stay in the zero set of a constraint `phi`, by solving penalized equations
//! with generator `g + m * phi` for a growing sequence of `m`. A reflected
//! dynamic-programming solver serves as an independent oracle for lower-barrier
//! constraints, and [`properties`] turns comparison, convexity, the Fatou
//! property and `L^2` continuity into quantified checks.
//!
//! ```
//! use cbsde::lattice::{build_lattice, LatticeMode};
//! use cbsde::model::{Barrier, Claim, Constraint, Generator};
//! use cbsde::penalize::{solve_minimal, Schedule, Tolerances};
//!
//! let lattice = build_lattice(1.0, 16, LatticeMode::Recombining).unwrap();
//! let phi = Constraint::ReflectBelow { barrier: Barrier::Constant { k: 1.0 } };
//! let result = solve_minimal(
//!     &Generator::Discount { r: 0.5 },
//!     &phi,
//!     &Claim::MaxWith { k: 1.0 },
//!     &lattice,
//!     &Schedule::new(1.0, 2.0, 4096.0).unwrap(),
//!     &Tolerances::default(),
//! )
//! .unwrap();
//! assert!(result.y0() >= 1.0 - 1e-3);
//! ```

pub mod bsde;
pub mod cli;
pub mod error;
pub mod lattice;
pub mod model;
pub mod penalize;
pub mod properties;
pub mod reflected;

pub use error::{Error, Result};
