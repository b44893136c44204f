//! Least Squares Monte Carlo with a monomial basis: one polynomial regression of
//! the payoff on the spot per sample date, solved by Householder QR.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::instruments::TrainingSet;
use crate::scalar::{mean_var, Scalar};

pub const DEFAULT_DEGREE: usize = 5;
pub const MAX_DEGREE: usize = 12;

/// Fitted polynomial in the scaled input `(z - center) / scale`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct DateFit<T> {
    pub date: usize,
    pub time: T,
    pub degree: usize,
    pub center: T,
    pub scale: T,
    pub coefficients: Vec<T>,
    pub train_mse: T,
}

impl<T: Scalar> DateFit<T> {
    #[inline]
    fn scaled(&self, z: T) -> T {
        (z - self.center) / self.scale
    }

    pub fn price(&self, z: T) -> T {
        let u = self.scaled(z);
        self.coefficients.iter().rev().fold(T::zero(), |acc, &b| acc * u + b)
    }

    pub fn delta(&self, z: T) -> T {
        let u = self.scaled(z);
        let d = self
            .coefficients
            .iter()
            .enumerate()
            .skip(1)
            .rev()
            .fold(T::zero(), |acc, (i, &b)| acc * u + T::from_usize_lossy(i) * b);
        d / self.scale
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct PolyModel<T> {
    pub fits: Vec<DateFit<T>>,
}

impl<T: Scalar> PolyModel<T> {
    pub fn fit_at(&self, date: usize) -> Result<&DateFit<T>> {
        self.fits.iter().find(|f| f.date == date).ok_or_else(|| Error::Lookup(format!("grid date {date}")))
    }

    /// Fit at `date`, or at the closest fitted date (later date on ties).
    pub fn nearest_fit(&self, date: usize) -> Result<&DateFit<T>> {
        self.fits
            .iter()
            .min_by_key(|f| (f.date.abs_diff(date), std::cmp::Reverse(f.date)))
            .ok_or_else(|| Error::Lookup("empty polynomial model".into()))
    }

    pub fn price(&self, date: usize, z: T) -> Result<T> {
        Ok(self.fit_at(date)?.price(z))
    }

    pub fn delta(&self, date: usize, z: T) -> Result<T> {
        Ok(self.fit_at(date)?.delta(z))
    }

    pub fn dates(&self) -> Vec<usize> {
        self.fits.iter().map(|f| f.date).collect()
    }
}

pub fn poly_price<T: Scalar>(model: &PolyModel<T>, date: usize, z: T) -> Result<T> {
    model.price(date, z)
}

pub fn poly_delta<T: Scalar>(model: &PolyModel<T>, date: usize, z: T) -> Result<T> {
    model.delta(date, z)
}

/// Least-squares solution of `A beta = y` for a column-major `m x p` matrix via
/// Householder reflections. Fails if `A` is numerically rank deficient.
pub fn lstsq_qr<T: Scalar>(a: &[T], m: usize, p: usize, y: &[T]) -> std::result::Result<Vec<T>, String> {
    assert_eq!(a.len(), m * p);
    assert_eq!(y.len(), m);
    if m < p {
        return Err(format!("{m} rows cannot determine {p} coefficients"));
    }
    let mut a = a.to_vec();
    let mut b = y.to_vec();
    let mut diag = vec![T::zero(); p];
    for k in 0..p {
        let col = &mut a[k * m..(k + 1) * m];
        let norm = col[k..].iter().map(|&v| v * v).sum::<T>().sqrt();
        if norm == T::zero() {
            return Err(format!("basis column {k} is degenerate"));
        }
        let alpha = if col[k] > T::zero() { -norm } else { norm };
        // v = x - alpha e_k, stored in place of the column
        col[k] -= alpha;
        let vnorm2 = col[k..].iter().map(|&v| v * v).sum::<T>();
        diag[k] = alpha;
        let v: Vec<T> = col[k..].to_vec();
        for j in (k + 1)..p {
            let cj = &mut a[j * m..(j + 1) * m];
            let dot = v.iter().zip(&cj[k..]).map(|(&vi, &ci)| vi * ci).sum::<T>();
            let f = T::lit(2.0) * dot / vnorm2;
            for (ci, &vi) in cj[k..].iter_mut().zip(&v) {
                *ci -= f * vi;
            }
        }
        let dot = v.iter().zip(&b[k..]).map(|(&vi, &bi)| vi * bi).sum::<T>();
        let f = T::lit(2.0) * dot / vnorm2;
        for (bi, &vi) in b[k..].iter_mut().zip(&v) {
            *bi -= f * vi;
        }
    }
    let rmax = diag.iter().fold(T::zero(), |acc, d| acc.max(d.abs()));
    let tol = rmax * T::epsilon() * T::from_usize_lossy(m.max(p)) * T::lit(10.0);
    if let Some(k) = diag.iter().position(|d| d.abs() <= tol) {
        return Err(format!("rank deficient basis (pivot {k})"));
    }
    // back substitution with R: diagonal in `diag`, strict upper part in a[j*m + i], i < j
    let mut beta = vec![T::zero(); p];
    for i in (0..p).rev() {
        let mut s = b[i];
        for j in (i + 1)..p {
            s -= a[j * m + i] * beta[j];
        }
        beta[i] = s / diag[i];
    }
    Ok(beta)
}

fn fit_date<T: Scalar>(date: usize, time: T, zs: &[T], xs: &[T], degree: usize) -> Result<DateFit<T>> {
    let fail = |reason: String| Error::Fit { date: time.as_f64(), reason };
    let m = zs.len();
    if m < degree + 2 {
        return Err(fail(format!("{m} rows, need at least {}", degree + 2)));
    }
    let mut distinct = zs.to_vec();
    distinct.sort_by(|a, b| a.partial_cmp(b).unwrap());
    distinct.dedup();
    if distinct.len() < degree + 1 {
        return Err(fail(format!("{} distinct spots, need at least {}", distinct.len(), degree + 1)));
    }
    let (center, var) = mean_var(zs);
    let scale = if var > T::zero() { var.sqrt() } else { T::one() };

    let p = degree + 1;
    let mut a = vec![T::zero(); m * p];
    for (r, &z) in zs.iter().enumerate() {
        let u = (z - center) / scale;
        let mut pow = T::one();
        for c in 0..p {
            a[c * m + r] = pow;
            pow *= u;
        }
    }
    let coefficients = lstsq_qr(&a, m, p, xs).map_err(fail)?;
    let mut fit = DateFit { date, time, degree, center, scale, coefficients, train_mse: T::zero() };
    let sse = zs.iter().zip(xs).map(|(&z, &x)| (fit.price(z) - x).powi(2)).sum::<T>();
    fit.train_mse = sse / T::from_usize_lossy(m);
    Ok(fit)
}

/// Fits one regression per date present in `ts` (rows laid out per date).
pub fn fit_poly<T: Scalar>(ts: &TrainingSet<T>, degree: usize) -> Result<PolyModel<T>> {
    if degree > MAX_DEGREE {
        return Err(Error::Domain(format!("degree {degree} outside 0..={MAX_DEGREE}")));
    }
    if ts.is_empty() {
        return Err(Error::Config("empty training set".into()));
    }
    let maturity = ts.provenance.market.maturity;
    let fits = ts
        .dates()
        .into_par_iter()
        .map(|d| {
            let (zs, xs): (Vec<T>, Vec<T>) = ts.at_date(d).map(|r| (r.z, r.x)).unzip();
            let time = maturity - ts.at_date(d).next().unwrap().tau;
            fit_date(d, time, &zs, &xs, degree)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PolyModel { fits })
}
