//! Risk-neutral Black-Scholes path generation with the Euler scheme, plus
//! pathwise tangents `dZ_T / dZ_t` along every path.

use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Default grid: weekly steps over one year.
pub const DEFAULT_STEPS: usize = 52;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct MarketConfig<T> {
    pub s0: T,
    pub sigma: T,
    pub r: T,
    pub maturity: T,
    pub n_steps: usize,
}

impl<T: Scalar> MarketConfig<T> {
    pub fn validate(&self) -> Result<()> {
        if !(self.s0 > T::zero()) || !self.s0.is_finite() {
            return Err(Error::Config(format!("s0 must be positive, got {}", self.s0)));
        }
        if !(self.sigma >= T::zero()) || !self.sigma.is_finite() {
            return Err(Error::Config(format!("sigma must be non-negative, got {}", self.sigma)));
        }
        if !self.r.is_finite() {
            return Err(Error::Config("r must be finite".into()));
        }
        if !(self.maturity > T::zero()) || !self.maturity.is_finite() {
            return Err(Error::Config(format!("maturity must be positive, got {}", self.maturity)));
        }
        if self.n_steps == 0 {
            return Err(Error::Config("n_steps must be at least 1".into()));
        }
        Ok(())
    }

    pub fn dt(&self) -> T {
        self.maturity / T::from_usize_lossy(self.n_steps)
    }

    /// Uniform grid `0 = t_0 < ... < t_n = T`.
    pub fn grid(&self) -> Vec<T> {
        let n = self.n_steps;
        (0..=n)
            .map(
                |j| {
                    if j == n {
                        self.maturity
                    } else {
                        self.maturity * T::from_usize_lossy(j) / T::from_usize_lossy(n)
                    }
                },
            )
            .collect()
    }
}

impl Default for MarketConfig<f64> {
    fn default() -> Self {
        MarketConfig { s0: 100.0, sigma: 0.2, r: 0.0, maturity: 1.0, n_steps: DEFAULT_STEPS }
    }
}

/// Simulated paths on a fixed grid. Matrices are stored row-major, one row per path.
#[derive(Debug, Clone, PartialEq)]
pub struct PathBatch<T> {
    pub cfg: MarketConfig<T>,
    pub grid: Vec<T>,
    pub seed: u64,
    n_paths: usize,
    paths: Vec<T>,
    tangents: Vec<T>,
    shocks: Vec<T>,
    floored: Vec<bool>,
}

/// Per-path generator: the ChaCha stream id is the path index, so any path can
/// be regenerated independently of the others.
pub fn path_rng(seed: u64, path: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(path as u64);
    rng
}

pub fn simulate<T: Scalar>(cfg: &MarketConfig<T>, n_paths: usize, seed: u64) -> Result<PathBatch<T>> {
    cfg.validate()?;
    if n_paths == 0 {
        return Err(Error::Config("n_paths must be at least 1".into()));
    }
    let n = cfg.n_steps;
    let width = n + 1;
    let dt = cfg.dt();
    let drift = cfg.r * dt;
    let vol = cfg.sigma * dt.sqrt();

    let mut paths = vec![T::zero(); n_paths * width];
    let mut shocks = vec![T::zero(); n_paths * n];
    let mut floored = vec![false; n_paths];

    paths.par_chunks_mut(width).zip(shocks.par_chunks_mut(n)).zip(floored.par_iter_mut()).enumerate().for_each(
        |(i, ((row, eps), flag))| {
            let mut rng = path_rng(seed, i);
            row[0] = cfg.s0;
            for k in 0..n {
                let draw: f64 = StandardNormal.sample(&mut rng);
                eps[k] = T::lit(draw);
                if *flag {
                    row[k + 1] = T::zero();
                    continue;
                }
                let next = row[k] + drift * row[k] + vol * row[k] * eps[k];
                if next <= T::zero() {
                    *flag = true;
                    row[k + 1] = T::zero();
                } else {
                    row[k + 1] = next;
                }
            }
        },
    );

    let batch = PathBatch { cfg: *cfg, grid: cfg.grid(), seed, n_paths, paths, tangents: Vec::new(), shocks, floored };
    Ok(propagate_tangents(batch))
}

/// Rebuilds `tangents[i][j] = prod_{k >= j} (1 + r dt + sigma sqrt(dt) N_k)` from the
/// stored shocks. Floored paths get zero tangents before maturity.
pub fn propagate_tangents<T: Scalar>(mut batch: PathBatch<T>) -> PathBatch<T> {
    let n = batch.cfg.n_steps;
    let width = n + 1;
    let dt = batch.cfg.dt();
    let drift = batch.cfg.r * dt;
    let vol = batch.cfg.sigma * dt.sqrt();
    let mut tangents = vec![T::zero(); batch.n_paths * width];

    tangents.par_chunks_mut(width).zip(batch.shocks.par_chunks(n)).zip(batch.floored.par_iter()).for_each(
        |((tan, eps), &flag)| {
            tan[n] = T::one();
            if flag {
                return;
            }
            for j in (0..n).rev() {
                tan[j] = tan[j + 1] * (T::one() + drift + vol * eps[j]);
            }
        },
    );
    batch.tangents = tangents;
    batch
}

impl<T: Scalar> PathBatch<T> {
    pub fn n_paths(&self) -> usize {
        self.n_paths
    }

    pub fn n_steps(&self) -> usize {
        self.cfg.n_steps
    }

    pub fn path(&self, i: usize) -> &[T] {
        let w = self.cfg.n_steps + 1;
        &self.paths[i * w..(i + 1) * w]
    }

    pub fn tangent_row(&self, i: usize) -> &[T] {
        let w = self.cfg.n_steps + 1;
        &self.tangents[i * w..(i + 1) * w]
    }

    pub fn shock_row(&self, i: usize) -> &[T] {
        let n = self.cfg.n_steps;
        &self.shocks[i * n..(i + 1) * n]
    }

    #[inline]
    pub fn spot(&self, i: usize, j: usize) -> T {
        self.paths[i * (self.cfg.n_steps + 1) + j]
    }

    #[inline]
    pub fn tangent(&self, i: usize, j: usize) -> T {
        self.tangents[i * (self.cfg.n_steps + 1) + j]
    }

    #[inline]
    pub fn terminal(&self, i: usize) -> T {
        self.spot(i, self.cfg.n_steps)
    }

    pub fn is_floored(&self, i: usize) -> bool {
        self.floored[i]
    }

    pub fn terminals(&self) -> Vec<T> {
        (0..self.n_paths).map(|i| self.terminal(i)).collect()
    }

    /// Grid index of `t`, if `t` is (to rounding) a grid point.
    pub fn date_index(&self, t: T) -> Option<usize> {
        let tol = self.cfg.dt() * T::lit(1e-9);
        self.grid.iter().position(|&g| (g - t).abs() <= tol)
    }

    /// CSV dump with header `path_id,step,time,spot,tangent_to_T`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "path_id,step,time,spot,tangent_to_T")?;
        for i in 0..self.n_paths {
            for (j, t) in self.grid.iter().enumerate() {
                writeln!(w, "{},{},{},{},{}", i, j, t, self.spot(i, j), self.tangent(i, j))?;
            }
        }
        w.flush()?;
        Ok(())
    }
}
