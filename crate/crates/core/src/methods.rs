//! The four pricing/hedging methods compared in the backtest and how each one
//! is fitted from a batch of training paths.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::analytic::{bs_call, bs_digital};
use crate::error::{Error, Result};
use crate::instruments::{build_training_set, Instrument, InstrumentKind, LabelOptions, SampleMode, TrainingSet};
use crate::lsmc_poly::{fit_poly, PolyModel, DEFAULT_DEGREE};
use crate::market_sim::{MarketConfig, PathBatch};
use crate::scalar::Scalar;
use crate::seeds::substream;
use crate::twin_net::{train, Evaluator, NetParams, Objective, TrainConfig, TrainedNet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Analytic,
    LsmcPoly,
    LsmcNn,
    DiffNn,
}

impl Method {
    pub const LEARNED: [Method; 3] = [Method::LsmcPoly, Method::LsmcNn, Method::DiffNn];

    pub fn name(self) -> &'static str {
        match self {
            Method::Analytic => "analytic",
            Method::LsmcPoly => "lsmc_poly",
            Method::LsmcNn => "lsmc_nn",
            Method::DiffNn => "diff_nn",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "analytic" | "bs" | "black_scholes" => Ok(Method::Analytic),
            "lsmc_poly" => Ok(Method::LsmcPoly),
            "lsmc_nn" => Ok(Method::LsmcNn),
            "diff_nn" => Ok(Method::DiffNn),
            other => Err(Error::Config(format!(
                "unknown method `{other}` (expected analytic, lsmc_poly, lsmc_nn or diff_nn)"
            ))),
        }
    }
}

/// Hyperparameters shared by every fit in a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct MethodSettings<T> {
    pub degree: usize,
    pub lambda: T,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: T,
    pub hidden_width: usize,
    pub hidden_layers: usize,
    pub bandwidth: Option<T>,
}

impl Default for MethodSettings<f64> {
    fn default() -> Self {
        MethodSettings {
            degree: DEFAULT_DEGREE,
            lambda: 1.0,
            epochs: 100,
            batch_size: 256,
            learning_rate: 1e-2,
            hidden_width: crate::twin_net::DEFAULT_WIDTH,
            hidden_layers: crate::twin_net::DEFAULT_HIDDEN_LAYERS,
            bandwidth: None,
        }
    }
}

impl<T: Scalar> MethodSettings<T> {
    pub fn train_config(&self, objective: Objective<T>, seed: u64) -> TrainConfig<T> {
        let mut cfg = TrainConfig::new(objective, self.epochs, seed);
        cfg.batch_size = self.batch_size;
        cfg.learning_rate = self.learning_rate;
        cfg.hidden_width = self.hidden_width;
        cfg.hidden_layers = self.hidden_layers;
        cfg
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar", rename_all = "snake_case", tag = "method")]
pub enum FittedModel<T> {
    Analytic,
    LsmcPoly { model: PolyModel<T> },
    LsmcNn { net: TrainedNet<T> },
    DiffNn { net: TrainedNet<T> },
}

/// Grid times the regressors see: every rebalance date before maturity.
pub fn rebalance_times<T: Scalar>(batch: &PathBatch<T>) -> Vec<T> {
    batch.grid[..batch.n_steps()].to_vec()
}

/// Training rows for `method`: one row per path at a random date (time as an
/// input) for the networks, per-date rows for the polynomial, skipping `t = 0`
/// where every path sits at the same spot. `None` for the analytic method.
pub fn training_set<T: Scalar>(
    method: Method,
    batch: &PathBatch<T>,
    inst: &Instrument<T>,
    settings: &MethodSettings<T>,
    seed: u64,
) -> Result<Option<TrainingSet<T>>> {
    let opts = LabelOptions { bandwidth: settings.bandwidth };
    let times = rebalance_times(batch);
    match method {
        Method::Analytic => Ok(None),
        Method::LsmcPoly => build_training_set(batch, inst, SampleMode::PerDate, &times[1..], seed, opts).map(Some),
        Method::LsmcNn | Method::DiffNn => {
            let s = substream(seed, "sample.dates");
            build_training_set(batch, inst, SampleMode::TimeFeature, &times, s, opts).map(Some)
        }
    }
}

/// Fits `method` on rows produced by [`training_set`] with the same seed.
pub fn fit_on<T: Scalar>(
    method: Method,
    ts: Option<&TrainingSet<T>>,
    settings: &MethodSettings<T>,
    seed: u64,
) -> Result<FittedModel<T>> {
    let ts = match (method, ts) {
        (Method::Analytic, _) => return Ok(FittedModel::Analytic),
        (_, Some(ts)) => ts,
        (_, None) => return Err(Error::State(format!("{method} needs a training set"))),
    };
    match method {
        Method::Analytic => unreachable!(),
        Method::LsmcPoly => Ok(FittedModel::LsmcPoly { model: fit_poly(ts, settings.degree)? }),
        Method::LsmcNn => {
            let cfg = settings.train_config(Objective::ValueOnly, substream(seed, "net.init"));
            Ok(FittedModel::LsmcNn { net: train(&ts.rows, &cfg)? })
        }
        Method::DiffNn => {
            let objective = Objective::Differential { lambda: settings.lambda };
            let cfg = settings.train_config(objective, substream(seed, "net.init"));
            Ok(FittedModel::DiffNn { net: train(&ts.rows, &cfg)? })
        }
    }
}

pub fn fit_method<T: Scalar>(
    method: Method,
    batch: &PathBatch<T>,
    inst: &Instrument<T>,
    settings: &MethodSettings<T>,
    seed: u64,
) -> Result<FittedModel<T>> {
    let ts = training_set(method, batch, inst, settings, seed)?;
    fit_on(method, ts.as_ref(), settings, seed)
}

impl<T: Scalar> FittedModel<T> {
    pub fn method(&self) -> Method {
        match self {
            FittedModel::Analytic => Method::Analytic,
            FittedModel::LsmcPoly { .. } => Method::LsmcPoly,
            FittedModel::LsmcNn { .. } => Method::LsmcNn,
            FittedModel::DiffNn { .. } => Method::DiffNn,
        }
    }

    pub fn net(&self) -> Option<&NetParams<T>> {
        match self {
            FittedModel::LsmcNn { net } | FittedModel::DiffNn { net } => Some(&net.params),
            _ => None,
        }
    }

    /// `(price, delta)` at grid index `date`, time `t`, spot `z`.
    pub fn quote(&self, market: &MarketConfig<T>, inst: &Instrument<T>, date: usize, t: T, z: T) -> Result<(T, T)> {
        self.evaluator().quote(market, inst, date, t, z)
    }

    pub fn evaluator(&self) -> ModelEvaluator<'_, T> {
        ModelEvaluator { model: self, net: self.net().map(Evaluator::new) }
    }
}

/// Quotes from a fitted model, reusing network buffers across calls.
pub struct ModelEvaluator<'a, T> {
    model: &'a FittedModel<T>,
    net: Option<Evaluator<'a, T>>,
}

impl<T: Scalar> ModelEvaluator<'_, T> {
    pub fn quote(&mut self, market: &MarketConfig<T>, inst: &Instrument<T>, date: usize, t: T, z: T) -> Result<(T, T)> {
        let tau = inst.maturity - t;
        match (self.model, &mut self.net) {
            (FittedModel::Analytic, _) => {
                let q = match inst.kind {
                    InstrumentKind::EuropeanCall => bs_call(z, inst.strike, market.sigma, tau, market.r)?,
                    InstrumentKind::Digital => bs_digital(z, inst.strike, market.sigma, tau, market.r)?,
                };
                Ok((q.price, q.delta))
            }
            (FittedModel::LsmcPoly { model }, _) => {
                let fit = model.nearest_fit(date)?;
                Ok((fit.price(z), fit.delta(z)))
            }
            (_, Some(net)) => {
                let out = net.predict(z, tau)?;
                Ok((out.y, out.dy_dz))
            }
            (_, None) => Err(Error::State("network evaluator missing".into())),
        }
    }
}
