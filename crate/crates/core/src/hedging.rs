//! Discrete delta-hedging backtest of a short option position.
//!
//! Per test path, with the premium `V0` received up front and the hedge ratio
//! fixed at the start of each interval:
//!
//! ```text
//! PnL = V0 - X + sum_{i=1..n} Delta(t_{i-1}, Z_{t_{i-1}}) (Z_{t_i} - Z_{t_{i-1}})
//! ```
//!
//! PnL is reported relative to `V0`; the relative hedging error is its
//! population standard deviation.

use std::collections::BTreeMap;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analytic::{bs_call, bs_digital};
use crate::error::{Error, Result};
use crate::instruments::{payoff, Instrument, InstrumentKind};
use crate::market_sim::{simulate, MarketConfig, PathBatch};
use crate::methods::{fit_method, FittedModel, Method, MethodSettings};
use crate::scalar::{mean_var, Scalar};
use crate::seeds::substream;

pub const HIST_BINS: usize = 61;

/// Where hedge ratios come from.
#[derive(Debug, Clone, Copy)]
pub enum DeltaSource<'a, T> {
    /// Never hedge.
    Zero,
    Model(&'a FittedModel<T>),
}

impl<'a, T: Scalar> DeltaSource<'a, T> {
    pub fn label(&self) -> &'static str {
        match self {
            DeltaSource::Zero => "no_hedge",
            DeltaSource::Model(m) => m.method().name(),
        }
    }

    pub fn delta(&self, market: &MarketConfig<T>, inst: &Instrument<T>, date: usize, t: T, z: T) -> Result<T> {
        match self {
            DeltaSource::Zero => Ok(T::zero()),
            DeltaSource::Model(m) => Ok(m.quote(market, inst, date, t, z)?.1),
        }
    }

    /// Hedge ratio held over each interval of `path`.
    fn positions(&self, market: &MarketConfig<T>, inst: &Instrument<T>, grid: &[T], path: &[T]) -> Result<Vec<T>> {
        let n = path.len() - 1;
        let mut eval = match self {
            DeltaSource::Zero => return Ok(vec![T::zero(); n]),
            DeltaSource::Model(m) => m.evaluator(),
        };
        (0..n)
            .map(|j| {
                eval.quote(market, inst, j, grid[j], path[j]).map(|q| q.1).map_err(|e| Error::Backtest {
                    method: self.label().to_string(),
                    date: grid[j].as_f64(),
                    source: Box::new(e),
                })
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct Histogram<T> {
    pub edges: Vec<T>,
    pub counts: Vec<usize>,
}

impl<T: Scalar> Histogram<T> {
    /// Equal-width bins over `[lo, hi]`; values outside land in the edge bins.
    pub fn build(values: &[T], lo: T, hi: T, bins: usize) -> Self {
        let width = (hi - lo) / T::from_usize_lossy(bins);
        let edges = (0..=bins).map(|k| lo + width * T::from_usize_lossy(k)).collect();
        let mut counts = vec![0usize; bins];
        for &v in values {
            let k = ((v - lo) / width).floor();
            let k = if k.is_nan() || k < T::zero() { 0 } else { k.to_usize().unwrap_or(bins - 1).min(bins - 1) };
            counts[k] += 1;
        }
        Histogram { edges, counts }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct HedgeReport<T> {
    pub method: String,
    pub pnl_rel: Vec<T>,
    pub rel_error: T,
    pub mean_pnl_rel: T,
    pub premium: T,
    pub histogram: Histogram<T>,
    pub n_test_paths: usize,
    pub seed: u64,
}

impl<T: Scalar> HedgeReport<T> {
    /// `path_id,pnl_rel`
    pub fn write_pnl_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "path_id,pnl_rel")?;
        for (i, v) in self.pnl_rel.iter().enumerate() {
            writeln!(w, "{i},{v}")?;
        }
        w.flush()?;
        Ok(())
    }

    /// `bin_left,bin_right,count,method`, without the header when `header` is false
    /// so several methods can share one file.
    pub fn write_hist_csv<W: Write>(&self, mut w: W, header: bool) -> Result<()> {
        if header {
            writeln!(w, "bin_left,bin_right,count,method")?;
        }
        let h = &self.histogram;
        for (k, c) in h.counts.iter().enumerate() {
            writeln!(w, "{},{},{},{}", h.edges[k], h.edges[k + 1], c, self.method)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Positions held over each interval, row-major `n_paths x n_steps`.
#[derive(Debug, Clone, PartialEq)]
pub struct HedgeRun<T> {
    pub report: HedgeReport<T>,
    pub positions: Vec<T>,
}

/// Analytic premium used to normalise every method.
pub fn premium<T: Scalar>(market: &MarketConfig<T>, inst: &Instrument<T>) -> Result<T> {
    let q = match inst.kind {
        InstrumentKind::EuropeanCall => bs_call(market.s0, inst.strike, market.sigma, inst.maturity, market.r)?,
        InstrumentKind::Digital => bs_digital(market.s0, inst.strike, market.sigma, inst.maturity, market.r)?,
    };
    if !(q.price > T::zero()) {
        return Err(Error::Domain(format!("premium must be positive, got {}", q.price)));
    }
    Ok(q.price)
}

/// Hedges every path of an existing test batch.
pub fn backtest_on<T: Scalar>(
    source: DeltaSource<'_, T>,
    batch: &PathBatch<T>,
    inst: &Instrument<T>,
) -> Result<HedgeRun<T>> {
    let market = batch.cfg;
    if (inst.maturity - market.maturity).abs() > market.dt() * T::lit(1e-9) {
        return Err(Error::Config("instrument maturity must match the simulation horizon".into()));
    }
    let v0 = premium(&market, inst)?;
    let n = batch.n_steps();

    let per_path: Vec<(T, Vec<T>)> = (0..batch.n_paths())
        .into_par_iter()
        .map(|i| {
            let path = batch.path(i);
            let pos = source.positions(&market, inst, &batch.grid, path)?;
            let mut gains = T::zero();
            for j in 0..n {
                gains += pos[j] * (path[j + 1] - path[j]);
            }
            let pnl = v0 - payoff(inst, path[n]) + gains;
            Ok((pnl / v0, pos))
        })
        .collect::<Result<Vec<_>>>()?;

    let (pnl_rel, positions): (Vec<T>, Vec<Vec<T>>) = per_path.into_iter().unzip();
    let (mean, var) = mean_var(&pnl_rel);
    let histogram = Histogram::build(&pnl_rel, -T::one(), T::one(), HIST_BINS);
    Ok(HedgeRun {
        report: HedgeReport {
            method: source.label().to_string(),
            rel_error: var.sqrt(),
            mean_pnl_rel: mean,
            premium: v0,
            histogram,
            n_test_paths: pnl_rel.len(),
            pnl_rel,
            seed: batch.seed,
        },
        positions: positions.concat(),
    })
}

/// Simulates `n_test_paths` fresh paths from `seed` and hedges them.
pub fn backtest<T: Scalar>(
    source: DeltaSource<'_, T>,
    market: &MarketConfig<T>,
    inst: &Instrument<T>,
    n_test_paths: usize,
    seed: u64,
) -> Result<HedgeReport<T>> {
    let batch = simulate(market, n_test_paths, seed)?;
    Ok(backtest_on(source, &batch, inst)?.report)
}

/// Grid of hedging experiments: every learned method at every training size,
/// replicated over independent seeds, all hedged on one shared test batch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct Table1Plan<T> {
    pub market: MarketConfig<T>,
    pub instrument: Instrument<T>,
    pub methods: Vec<Method>,
    pub sizes: Vec<usize>,
    pub replicates: usize,
    pub root_seed: u64,
    pub n_test_paths: usize,
    pub settings: MethodSettings<T>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct Table1Cell<T> {
    pub method: Method,
    pub size: usize,
    pub replicate: usize,
    pub train_seed: u64,
    pub rel_error: Option<T>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct Table1Result<T> {
    pub test_seed: u64,
    pub analytic: T,
    pub no_hedge: T,
    pub cells: Vec<Table1Cell<T>>,
    /// method -> size -> median rel_error over successful replicates
    pub medians: BTreeMap<Method, BTreeMap<usize, T>>,
}

/// Everything a table1 run produces beyond the summary table.
#[derive(Debug, Clone)]
pub struct Table1Run<T> {
    pub result: Table1Result<T>,
    /// analytic and no-hedge runs, then the first replicate of each method at the largest size
    pub runs: Vec<HedgeRun<T>>,
    /// `(method, replicate, model)` at the largest size
    pub models: Vec<(Method, usize, FittedModel<T>)>,
}

pub fn median<T: Scalar>(values: &[T]) -> Option<T> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let m = v.len() / 2;
    Some(if v.len() % 2 == 1 { v[m] } else { (v[m - 1] + v[m]) / T::lit(2.0) })
}

impl<T: Scalar> Table1Plan<T> {
    pub fn test_seed(&self) -> u64 {
        substream(self.root_seed, "sim.test")
    }

    pub fn train_seed(&self, size: usize, replicate: usize) -> u64 {
        substream(self.root_seed, &format!("sim.train.{size}.{replicate}"))
    }

    pub fn validate(&self) -> Result<()> {
        self.market.validate()?;
        if self.sizes.is_empty() || self.replicates == 0 || self.n_test_paths == 0 {
            return Err(Error::Config("table1 needs sizes, replicates and test paths".into()));
        }
        let test = self.test_seed();
        for &size in &self.sizes {
            for rep in 0..self.replicates {
                if self.train_seed(size, rep) == test {
                    return Err(Error::Config("training seed collides with the test seed".into()));
                }
            }
        }
        Ok(())
    }
}

/// Runs the grid. Cell failures are recorded, not propagated.
pub fn table1<T: Scalar>(plan: &Table1Plan<T>) -> Result<Table1Run<T>> {
    plan.validate()?;
    let test_seed = plan.test_seed();
    let test = simulate(&plan.market, plan.n_test_paths, test_seed)?;
    let analytic_model = FittedModel::Analytic;
    let analytic = backtest_on(DeltaSource::Model(&analytic_model), &test, &plan.instrument)?;
    let no_hedge = backtest_on(DeltaSource::Zero, &test, &plan.instrument)?;

    let learned: Vec<Method> = plan.methods.iter().copied().filter(|m| *m != Method::Analytic).collect();
    let jobs: Vec<(usize, usize)> =
        plan.sizes.iter().flat_map(|&s| (0..plan.replicates).map(move |r| (s, r))).collect();

    let largest = plan.sizes.iter().max().copied();
    type JobOut<T> = (Vec<Table1Cell<T>>, Vec<HedgeRun<T>>, Vec<(Method, usize, FittedModel<T>)>);
    let per_job: Vec<JobOut<T>> = jobs
        .par_iter()
        .map(|&(size, rep)| {
            let train_seed = plan.train_seed(size, rep);
            let batch = simulate(&plan.market, size, train_seed);
            let at_largest = Some(size) == largest;
            let (mut cells, mut runs, mut models) = (Vec::new(), Vec::new(), Vec::new());
            for &method in &learned {
                let outcome = batch.as_ref().map_err(|e| e.to_string()).and_then(|b| {
                    let model = fit_method(method, b, &plan.instrument, &plan.settings, train_seed)
                        .map_err(|e| format!("{method}: {e}"))?;
                    let run =
                        backtest_on(DeltaSource::Model(&model), &test, &plan.instrument).map_err(|e| e.to_string())?;
                    Ok((model, run))
                });
                let (rel_error, error) = match outcome {
                    Ok((model, run)) => {
                        let r = run.report.rel_error;
                        if at_largest {
                            if rep == 0 {
                                runs.push(run);
                            }
                            models.push((method, rep, model));
                        }
                        (Some(r), None)
                    }
                    Err(e) => (None, Some(e)),
                };
                cells.push(Table1Cell { method, size, replicate: rep, train_seed, rel_error, error });
            }
            (cells, runs, models)
        })
        .collect();

    let mut cells = Vec::new();
    let mut runs = vec![analytic.clone(), no_hedge.clone()];
    let mut models = Vec::new();
    for (c, r, m) in per_job {
        cells.extend(c);
        runs.extend(r);
        models.extend(m);
    }
    let mut medians: BTreeMap<Method, BTreeMap<usize, T>> = BTreeMap::new();
    for &method in &learned {
        for &size in &plan.sizes {
            let vals: Vec<T> =
                cells.iter().filter(|c| c.method == method && c.size == size).filter_map(|c| c.rel_error).collect();
            if let Some(m) = median(&vals) {
                medians.entry(method).or_default().insert(size, m);
            }
        }
    }
    Ok(Table1Run {
        result: Table1Result {
            test_seed,
            analytic: analytic.report.rel_error,
            no_hedge: no_hedge.report.rel_error,
            cells,
            medians,
        },
        runs,
        models,
    })
}
