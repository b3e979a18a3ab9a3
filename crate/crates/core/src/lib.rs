//! Multilevel deformable image registration with a normalized gradient
//! fields distance, curvature regularization and L-BFGS.
//!
//! The deformation lives on a coarser grid than the images; [`transfer`]
//! maps it to image resolution and back. Every kernel is generic over
//! [`Real`] so a run can use single or double precision.

pub mod benchmark;
pub mod cli;
pub mod curvature;
pub mod error;
pub mod evaluation;
pub mod geometry;
pub mod io;
pub mod lbfgs;
pub mod multilevel;
pub mod ngf;
pub mod objective;
pub mod oracle;
pub mod parallel;
pub mod real;
mod stencil;
pub mod synthetic;
pub mod transfer;
pub mod warp;

pub use error::{Error, Result};
pub use evaluation::{field_difference_stats, landmark_error, FieldDifference, LandmarkError, LandmarkFrame, LandmarkSet};
pub use geometry::{make_identity, DeformationField, Grid3, Image3, VectorField3};
pub use lbfgs::{lbfgs_minimize, LbfgsConfig, StoppingRules, Termination};
pub use multilevel::{register, Levels, MultilevelConfig, RegistrationReport};
pub use ngf::NgfParams;
pub use objective::{evaluate_objective, LevelProblem};
pub use real::{Precision, Real};
pub use transfer::{GridTransfer, PtVariant};
