//! Closed-form Black-Scholes quotes for the European call and the cash-or-nothing
//! digital, used as ground truth and as the benchmark hedge.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{norm_pdf, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct BsQuote<T> {
    pub price: T,
    pub delta: T,
    pub d1: T,
    pub d2: T,
}

fn check_inputs<T: Scalar>(s: T, k: T, sigma: T, tau: T) -> Result<()> {
    if !(s > T::zero()) {
        return Err(Error::Domain(format!("spot must be positive, got {s}")));
    }
    if !(k > T::zero()) {
        return Err(Error::Domain(format!("strike must be positive, got {k}")));
    }
    if !(tau > T::zero()) {
        return Err(Error::Domain(format!("time to maturity must be positive, got {tau}")));
    }
    if !(sigma >= T::zero()) {
        return Err(Error::Domain(format!("volatility must be non-negative, got {sigma}")));
    }
    Ok(())
}

fn d1_d2<T: Scalar>(s: T, k: T, sigma: T, tau: T, r: T) -> (T, T) {
    let vol = sigma * tau.sqrt();
    let d1 = ((s / k).ln() + (r + sigma * sigma / T::lit(2.0)) * tau) / vol;
    (d1, d1 - vol)
}

pub fn bs_call<T: Scalar>(s: T, k: T, sigma: T, tau: T, r: T) -> Result<BsQuote<T>> {
    check_inputs(s, k, sigma, tau)?;
    let df = (-r * tau).exp();
    if sigma == T::zero() {
        let fwd_itm = s > k * df;
        let inf = if fwd_itm { T::infinity() } else { T::neg_infinity() };
        return Ok(BsQuote {
            price: (s - k * df).max(T::zero()),
            delta: if fwd_itm { T::one() } else { T::zero() },
            d1: inf,
            d2: inf,
        });
    }
    let (d1, d2) = d1_d2(s, k, sigma, tau, r);
    let price = s * d1.norm_cdf() - k * df * d2.norm_cdf();
    Ok(BsQuote { price: price.max(T::zero()), delta: d1.norm_cdf(), d1, d2 })
}

pub fn bs_digital<T: Scalar>(s: T, k: T, sigma: T, tau: T, r: T) -> Result<BsQuote<T>> {
    check_inputs(s, k, sigma, tau)?;
    let df = (-r * tau).exp();
    if sigma == T::zero() {
        let fwd = s / df;
        if fwd == k {
            return Err(Error::Domain("digital delta undefined at the zero-volatility boundary".into()));
        }
        let itm = fwd > k;
        let inf = if itm { T::infinity() } else { T::neg_infinity() };
        return Ok(BsQuote { price: if itm { df } else { T::zero() }, delta: T::zero(), d1: inf, d2: inf });
    }
    let (d1, d2) = d1_d2(s, k, sigma, tau, r);
    Ok(BsQuote { price: df * d2.norm_cdf(), delta: df * norm_pdf(d2) / (s * sigma * tau.sqrt()), d1, d2 })
}

/// Density of `Z_tau` under risk-neutral GBM started at `s0`.
pub fn lognormal_pdf<T: Scalar>(z: T, s0: T, sigma: T, tau: T, r: T) -> Result<T> {
    if !(s0 > T::zero()) || !(sigma > T::zero()) || !(tau > T::zero()) {
        return Err(Error::Domain("lognormal density needs s0, sigma, tau > 0".into()));
    }
    if z <= T::zero() {
        return Ok(T::zero());
    }
    let vol = sigma * tau.sqrt();
    let mu = s0.ln() + (r - sigma * sigma / T::lit(2.0)) * tau;
    Ok(norm_pdf((z.ln() - mu) / vol) / (z * vol))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_call() {
        let q = bs_call::<f64>(100.0, 110.0, 0.2, 1.0, 0.0).unwrap();
        assert!((q.price - 4.292).abs() < 1e-3, "{}", q.price);
        assert!((q.delta - 0.3528).abs() < 1e-3, "{}", q.delta);
        assert!((q.d2 - (q.d1 - 0.2)).abs() < 1e-15);
    }

    #[test]
    fn reference_digital() {
        let q = bs_digital::<f64>(100.0, 110.0, 0.2, 1.0, 0.0).unwrap();
        assert!((q.price - 0.2819).abs() < 1e-3, "{}", q.price);
        assert!((q.delta - 0.01688).abs() < 1e-4, "{}", q.delta);
    }

    #[test]
    fn forward_limit() {
        let q = bs_call::<f64>(100.0, 1e-12, 0.2, 1.0, 0.0).unwrap();
        assert!((q.price - 100.0).abs() < 1e-9);
        assert!((q.delta - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_vol_degenerates() {
        let q = bs_call::<f64>(100.0, 110.0, 0.0, 1.0, 0.0).unwrap();
        assert_eq!((q.price, q.delta), (0.0, 0.0));
        let q = bs_call::<f64>(100.0, 90.0, 0.0, 1.0, 0.05).unwrap();
        assert!((q.price - (100.0 - 90.0 * (-0.05f64).exp())).abs() < 1e-12);
        assert_eq!(q.delta, 1.0);
        assert!(bs_digital::<f64>(100.0, 100.0, 0.0, 1.0, 0.0).is_err());
        assert_eq!(bs_digital::<f64>(100.0, 90.0, 0.0, 1.0, 0.0).unwrap().price, 1.0);
    }

    #[test]
    fn deep_itm_digital_saturates() {
        let q = bs_digital::<f64>(1e6, 110.0, 0.2, 1.0, 0.0).unwrap();
        assert!((q.price - 1.0).abs() < 1e-12);
        assert!(q.delta.abs() < 1e-12);
    }

    #[test]
    fn domain_errors() {
        assert!(bs_call::<f64>(0.0, 110.0, 0.2, 1.0, 0.0).is_err());
        assert!(bs_call::<f64>(100.0, -1.0, 0.2, 1.0, 0.0).is_err());
        assert!(bs_call::<f64>(100.0, 110.0, 0.2, 0.0, 0.0).is_err());
        assert!(bs_digital::<f64>(100.0, 110.0, -0.2, 1.0, 0.0).is_err());
    }

    #[test]
    fn pdf_mode_below_forward() {
        let s0 = 100.0;
        let fwd = s0 * (0.03f64).exp();
        let mode = (1..4000)
            .map(|i| 50.0 + 0.05 * i as f64)
            .max_by(|a, b| {
                let fa = lognormal_pdf(*a, s0, 0.25, 1.0, 0.03).unwrap();
                let fb = lognormal_pdf(*b, s0, 0.25, 1.0, 0.03).unwrap();
                fa.partial_cmp(&fb).unwrap()
            })
            .unwrap();
        assert!(mode < fwd);
        assert_eq!(lognormal_pdf(-1.0, s0, 0.25, 1.0, 0.0).unwrap(), 0.0);
    }

    #[test]
    fn call_bounds_and_monotone_delta() {
        let mut prev = 0.0;
        for i in 0..200 {
            let s = 40.0 + i as f64;
            let q = bs_call::<f64>(s, 110.0, 0.2, 0.5, 0.03).unwrap();
            assert!(q.delta >= prev && (0.0..=1.0).contains(&q.delta));
            prev = q.delta;
            let lower = (s - 110.0 * (-0.03f64 * 0.5).exp()).max(0.0);
            assert!(q.price >= lower - 1e-12 && q.price <= s);
        }
    }
}
