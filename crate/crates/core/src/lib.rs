#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analytic;
pub mod error;
pub mod hedging;
pub mod instruments;
pub mod lsmc_poly;
pub mod market_sim;
pub mod methods;
pub mod runner;
pub mod scalar;
pub mod seeds;
pub mod twin_net;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type MarketConfig64 = market_sim::MarketConfig<f64>;
pub type MarketConfig32 = market_sim::MarketConfig<f32>;
pub type PathBatch64 = market_sim::PathBatch<f64>;
pub type PathBatch32 = market_sim::PathBatch<f32>;
pub type Instrument64 = instruments::Instrument<f64>;
pub type TrainingSet64 = instruments::TrainingSet<f64>;
pub type TrainingSet32 = instruments::TrainingSet<f32>;
pub type PolyModel64 = lsmc_poly::PolyModel<f64>;
pub type PolyModel32 = lsmc_poly::PolyModel<f32>;
pub type NetParams64 = twin_net::NetParams<f64>;
pub type NetParams32 = twin_net::NetParams<f32>;
pub type FittedModel64 = methods::FittedModel<f64>;
pub type HedgeReport64 = hedging::HedgeReport<f64>;
