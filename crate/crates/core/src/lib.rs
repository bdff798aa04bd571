#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod cumulant;
pub mod error;
pub mod innovations;
pub mod martingale;
pub mod montecarlo;
pub mod passage;
pub mod quadrature;
pub mod rng;
pub mod run;
pub mod special;

pub use cumulant::{LimitCumulant, SlopeReport};
pub use error::{FptError, Result};
pub use innovations::{Family, InnovationSpec, Moments, TailDiagnostics};
pub use martingale::{TransformKind, Transforms};
pub use montecarlo::SimulationSummary;
pub use passage::{PassageProblem, PassageReport};
pub use quadrature::{QuadratureOptions, QuadratureResult};
