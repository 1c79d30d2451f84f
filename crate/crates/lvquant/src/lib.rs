//! Full left-ventricle quantification on synthetic cardiac phantoms.
//!
//! A CNN embedder feeds two recurrent branches: one regresses eleven
//! structural indices (2 areas, 3 cavity dimensions, 6 regional wall
//! thicknesses), the other classifies the cardiac phase. Training couples the
//! tasks through a group-lasso penalty on the regression heads and
//! phase-guided monotonicity penalties on the predicted index trajectories.

pub mod contours;
pub mod dataset;
pub mod layers;
pub mod lstm;
pub mod gradcheck;
pub mod model;
pub mod objective;
pub mod phantom;
pub mod preprocess;
pub mod scalar;
pub mod tensor;
