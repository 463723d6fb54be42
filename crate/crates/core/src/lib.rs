//! Traffic assignment with state-dependent link travel times: fundamental
//! diagram parameters, cost models, a convex QP solver, branch and bound for
//! the user equilibrium and congestion evolution.

pub mod bnb;
pub mod cost;
pub mod cqp;
pub mod error;
pub mod evolution;
pub mod fdgen;
pub mod io;
pub mod network;
pub mod scalar;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Network = network::Network<f64>;
pub type DemandTable = network::DemandTable<f64>;
pub type FlowPattern = network::FlowPattern<f64>;
pub type LinkParams = fdgen::LinkParams<f64>;
pub type BasicParams = fdgen::BasicParams<f64>;
pub type BnbConfig = bnb::BnbConfig<f64>;
pub type BnbRun = bnb::BnbRun<f64>;
pub type EvolutionConfig = evolution::EvolutionConfig<f64>;
pub type EvolutionReport = evolution::EvolutionReport<f64>;
pub type QpProblem = cqp::QpProblem<f64>;

/// Single-precision aliases.
pub mod f32 {
    pub type Network = crate::network::Network<f32>;
    pub type DemandTable = crate::network::DemandTable<f32>;
    pub type FlowPattern = crate::network::FlowPattern<f32>;
    pub type LinkParams = crate::fdgen::LinkParams<f32>;
    pub type BnbConfig = crate::bnb::BnbConfig<f32>;
    pub type BnbRun = crate::bnb::BnbRun<f32>;
    pub type EvolutionConfig = crate::evolution::EvolutionConfig<f32>;
    pub type QpProblem = crate::cqp::QpProblem<f32>;
}
