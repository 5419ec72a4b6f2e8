//! The two deterioration case studies.

pub mod corrosion;
pub mod crack;
pub mod kalman;
pub mod kl;
