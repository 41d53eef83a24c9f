//! Command-line tool and HTTP service for the retinal surgery planner.

pub mod api;
pub mod cli;
