//! Bayesian social learning on weighted influence networks, with initial
//! belief precision chosen by rational-inattention utility maximization.

pub mod acquisition;
pub mod analytics;
pub mod cli;
pub mod config;
pub mod dynamics;
pub mod estimation;
pub mod network;
pub mod tables;
