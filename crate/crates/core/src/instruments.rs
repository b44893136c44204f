//! Payoffs and the labels the regressors learn from: payoff labels `x = g(Z_T)` and
//! differential labels `q`, the pathwise (generalized) derivative of the payoff with
//! respect to the spot at the sample date.

use std::io::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::market_sim::{path_rng, MarketConfig, PathBatch};
use crate::scalar::{mean_var, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InstrumentKind {
    EuropeanCall,
    Digital,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct Instrument<T> {
    pub kind: InstrumentKind,
    pub strike: T,
    pub maturity: T,
}

impl<T: Scalar> Instrument<T> {
    pub fn new(kind: InstrumentKind, strike: T, maturity: T) -> Result<Self> {
        if !(strike > T::zero()) || !(maturity > T::zero()) {
            return Err(Error::Config("strike and maturity must be positive".into()));
        }
        Ok(Instrument { kind, strike, maturity })
    }

    pub fn call(strike: T, maturity: T) -> Self {
        Instrument { kind: InstrumentKind::EuropeanCall, strike, maturity }
    }

    pub fn digital(strike: T, maturity: T) -> Self {
        Instrument { kind: InstrumentKind::Digital, strike, maturity }
    }

    pub fn payoff(&self, z_t: T) -> T {
        payoff(self, z_t)
    }
}

pub fn payoff<T: Scalar>(inst: &Instrument<T>, z_t: T) -> T {
    match inst.kind {
        InstrumentKind::EuropeanCall => (z_t - inst.strike).max(T::zero()),
        InstrumentKind::Digital => {
            if z_t > inst.strike {
                T::one()
            } else {
                T::zero()
            }
        }
    }
}

/// Indicator of exercise times the tangent `dZ_T/dZ_t`.
pub fn call_diff_label<T: Scalar>(inst: &Instrument<T>, z_t: T, tangent: T) -> T {
    if z_t > inst.strike {
        tangent
    } else {
        T::zero()
    }
}

/// Gaussian kernel `sqrt(n/pi) exp(-n x^2)` standing in for the Dirac delta.
#[inline]
pub fn smoothed_dirac<T: Scalar>(x: T, bandwidth_n: T) -> T {
    (bandwidth_n / T::lit(std::f64::consts::PI)).sqrt() * (-bandwidth_n * x * x).exp()
}

pub fn digital_diff_label<T: Scalar>(inst: &Instrument<T>, z_t: T, tangent: T, bandwidth_n: T) -> T {
    smoothed_dirac(z_t - inst.strike, bandwidth_n) * tangent
}

/// Kernel parameter for `n_samples` terminal spots with sample standard deviation
/// `spread`: a kernel width of order `spread * n^(-1/5)`.
pub fn default_bandwidth<T: Scalar>(n_samples: usize, spread: T) -> T {
    let n = T::from_usize_lossy(n_samples.max(1));
    let h = if spread > T::zero() { spread } else { T::one() };
    n.powf(T::lit(0.4)) / (T::lit(2.0) * h * h)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleMode {
    /// One full set of rows for every requested date.
    PerDate,
    /// One row per path, at a uniformly drawn date; time enters as a feature.
    TimeFeature,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct Sample<T> {
    pub z: T,
    pub tau: T,
    pub x: T,
    pub q: T,
    /// Grid index of the sample date.
    pub date: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct Provenance<T> {
    pub instrument: Instrument<T>,
    pub market: MarketConfig<T>,
    pub path_seed: u64,
    pub sample_seed: u64,
    pub mode: SampleMode,
    pub bandwidth: Option<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSet<T> {
    pub rows: Vec<Sample<T>>,
    pub provenance: Provenance<T>,
}

impl<T: Scalar> TrainingSet<T> {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Rows sampled at grid index `date`.
    pub fn at_date(&self, date: usize) -> impl Iterator<Item = &Sample<T>> {
        self.rows.iter().filter(move |r| r.date == date)
    }

    pub fn dates(&self) -> Vec<usize> {
        let mut d: Vec<usize> = self.rows.iter().map(|r| r.date).collect();
        d.sort_unstable();
        d.dedup();
        d
    }

    /// CSV dump with header `z,tau,x,q`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "z,tau,x,q")?;
        for r in &self.rows {
            writeln!(w, "{},{},{},{}", r.z, r.tau, r.x, r.q)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Label generation options. `bandwidth` only matters for the digital; `None`
/// selects [`default_bandwidth`] from the batch's terminal spread.
#[derive(Debug, Clone, Copy, Default)]
pub struct LabelOptions<T> {
    pub bandwidth: Option<T>,
}

fn resolve_dates<T: Scalar>(batch: &PathBatch<T>, dates: &[T]) -> Result<Vec<usize>> {
    if dates.is_empty() {
        return Err(Error::Config("no sample dates requested".into()));
    }
    dates
        .iter()
        .map(|&t| match batch.date_index(t) {
            Some(j) if j < batch.n_steps() => Ok(j),
            Some(_) => Err(Error::Config(format!("sample date {t} is not before maturity"))),
            None => Err(Error::Config(format!("sample date {t} is not on the simulation grid"))),
        })
        .collect()
}

pub fn build_training_set<T: Scalar>(
    batch: &PathBatch<T>,
    inst: &Instrument<T>,
    mode: SampleMode,
    dates: &[T],
    seed: u64,
    opts: LabelOptions<T>,
) -> Result<TrainingSet<T>> {
    if batch.n_paths() == 0 {
        return Err(Error::Config("empty path batch".into()));
    }
    let idx = resolve_dates(batch, dates)?;
    let maturity = batch.grid[batch.n_steps()];

    let bandwidth = match inst.kind {
        InstrumentKind::EuropeanCall => None,
        InstrumentKind::Digital => Some(match opts.bandwidth {
            Some(b) if b > T::zero() => b,
            Some(b) => return Err(Error::Domain(format!("bandwidth must be positive, got {b}"))),
            None => {
                let (_, var) = mean_var(&batch.terminals());
                default_bandwidth(batch.n_paths(), var.sqrt())
            }
        }),
    };

    let sample = |i: usize, j: usize| -> Sample<T> {
        let z_t = batch.terminal(i);
        let tangent = batch.tangent(i, j);
        let q = match inst.kind {
            InstrumentKind::EuropeanCall => call_diff_label(inst, z_t, tangent),
            InstrumentKind::Digital => digital_diff_label(inst, z_t, tangent, bandwidth.unwrap()),
        };
        Sample { z: batch.spot(i, j), tau: maturity - batch.grid[j], x: payoff(inst, z_t), q, date: j }
    };

    let rows: Vec<Sample<T>> = match mode {
        SampleMode::PerDate => {
            idx.iter().flat_map(|&j| (0..batch.n_paths()).map(move |i| (i, j))).map(|(i, j)| sample(i, j)).collect()
        }
        SampleMode::TimeFeature => (0..batch.n_paths())
            .map(|i| {
                let mut rng = path_rng(seed, i);
                let j = idx[rng.random_range(0..idx.len())];
                sample(i, j)
            })
            .collect(),
    };

    Ok(TrainingSet {
        rows,
        provenance: Provenance {
            instrument: *inst,
            market: batch.cfg,
            path_seed: batch.seed,
            sample_seed: seed,
            mode,
            bandwidth,
        },
    })
}
