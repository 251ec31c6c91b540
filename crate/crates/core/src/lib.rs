//! Minimum-average-power transmission scheduling for a single wireless link
//! under an average-delay budget, with a continuous i.i.d. channel gain.

pub mod model;
pub mod simplex;
pub mod occupancy;
pub mod simulator;
pub mod construction;
pub mod io;
pub mod sweep;
pub mod config;
pub mod certify;
pub mod cli;
