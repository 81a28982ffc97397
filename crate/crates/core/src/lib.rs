pub mod eval;
pub mod formats;
pub mod gradcheck;
pub mod lie_se3;
pub mod model;
pub mod nn;
pub mod simulator;
pub mod training;
