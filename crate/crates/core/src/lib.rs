//! Tactile-reactive grasp adjustment.

pub mod controller;
pub mod descent;
pub mod kinematics;
pub mod pose;
pub mod qp;
pub mod sim;
pub mod stability;
pub mod surface;
