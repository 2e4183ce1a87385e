pub mod bench;
pub mod error;
pub mod io;
pub mod l1_solvers;
pub mod mat_core;
pub mod pcp;
pub mod randomized;
pub mod sa;
mod simplex;
pub mod synth;
pub mod theory;
