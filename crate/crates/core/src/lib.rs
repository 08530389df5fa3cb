//! Robust feedback synthesis over landmark probability-mass functions for convex cell
//! decompositions, with independent verification and closed-loop simulation.

pub mod basis;
pub mod clfcbf;
pub mod geometry;
pub mod io;
pub mod measurement;
pub mod planning;
pub mod robust;
pub mod simulation;
pub mod synthesis;
pub mod verification;
