//! Belief-aware shared-control core: environment, goal inference, simulated
//! pilot, expert planner, neural policy, training and evaluation.

pub mod belief;
pub mod episode;
pub mod env;
pub mod eval;
pub mod expert;
pub mod geom;
pub mod neural;
pub mod pilot;
pub mod reward;
pub mod theory;
pub mod train;

