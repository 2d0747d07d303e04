//! Fokker–Planck evolution with λ-monotone drift, exact discrete optimal
//! transport, backward Kolmogorov duals and the regularization ladders needed
//! to check transport-cost contraction numerically.
//!
//! The building blocks are layered bottom-up:
//!
//! * [`measures`]: grids, weighted point clouds, test functions;
//! * [`drift`]: λ-monotone fields and the approximation `A → Y_n → A_n → A_{n,m}`;
//! * [`rescale`]: the time/space change reducing λ-monotone to monotone drift;
//! * [`costs`]: radial costs, rescaling, Lipschitz and tail regularizations;
//! * [`ot`]: network simplex with dual certificates;
//! * [`fp_forward`] and [`backward`]: the forward equation and its adjoint;
//! * [`harness`]: end-to-end experiments and the closed-form self-test.

pub mod backward;
pub mod costs;
pub mod drift;
pub mod error;
pub mod fp_forward;
pub mod harness;
pub mod measures;
pub mod ot;
pub mod quadrature;
pub mod rescale;

pub use costs::CostFn;
pub use drift::{DriftField, DriftSpec};
pub use error::{Error, Result};
pub use fp_forward::{SolverConfig, Trajectory};
pub use measures::{DiscreteMeasure, Grid};
