//! Mobile-manipulator process automation: one-shot teaching, iterative
//! eye-in-hand pose estimation over colored point-cloud registration, and
//! path correction, together with a synthetic world to exercise them.

pub mod geometry;
pub mod pointcloud;
pub mod registration;
pub mod ipe;
pub mod pathlearn;
pub mod seed;
pub mod sim;
pub mod taskstore;
