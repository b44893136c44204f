mod common;

use diffhedge::analytic::{bs_call, bs_digital, lognormal_pdf};

#[test]
fn call_reference_point_matches_quadrature() {
    let q = bs_call(100.0, 110.0, 0.2, 1.0, 0.0).unwrap();
    let price = common::quad_call(100.0, 110.0, 0.2, 1.0, 0.0);
    assert!((q.price - price).abs() / price < 1e-4);
    let delta = common::diff4(|s| common::quad_call(s, 110.0, 0.2, 1.0, 0.0), 100.0, 0.1);
    assert!((q.delta - delta).abs() / delta < 1e-4);
    assert!((q.price - 4.29).abs() < 5e-3 && (q.delta - 0.353).abs() < 5e-4);
}

#[test]
fn digital_reference_point_matches_quadrature() {
    let q = bs_digital(100.0, 110.0, 0.2, 1.0, 0.0).unwrap();
    let price = common::quad_digital(100.0, 110.0, 0.2, 1.0, 0.0);
    assert!((q.price - price).abs() / price < 1e-4);
    let delta = common::diff4(|s| common::quad_digital(s, 110.0, 0.2, 1.0, 0.0), 100.0, 0.1);
    assert!((q.delta - delta).abs() / delta < 1e-4);
    assert!((q.price - 0.282).abs() < 5e-4 && (q.delta - 0.0169).abs() < 5e-5);
}

#[test]
fn digital_price_is_tail_mass_of_density() {
    for (s, tau, r) in [(100.0, 1.0, 0.0), (90.0, 0.5, 0.03), (130.0, 0.2, 0.01)] {
        let k = 110.0;
        let tail = common::simpson(|z| lognormal_pdf(z, s, 0.2, tau, r).unwrap(), k, 20.0 * s, 400_000);
        let d = bs_digital(s, k, 0.2, tau, r).unwrap();
        assert!((d.price - (-r * tau).exp() * tail).abs() < 1e-8, "{s} {tau}");
    }
}

#[test]
fn density_integrates_to_one() {
    for (sigma, tau) in [(0.2, 1.0), (0.4, 0.25), (0.1, 2.0)] {
        let mass = common::simpson(|z| lognormal_pdf(z, 100.0, sigma, tau, 0.02).unwrap(), 1e-9, 2000.0, 1_000_000);
        assert!((mass - 1.0).abs() < 1e-8, "sigma {sigma} tau {tau}: {mass}");
    }
}

#[test]
fn digital_delta_is_density_at_strike() {
    // d/ds P(Z_T > k) = pdf(k) k / s for GBM started at s
    let (s, k, sigma, tau) = (100.0_f64, 110.0, 0.2, 1.0);
    let d = bs_digital(s, k, sigma, tau, 0.0).unwrap().delta;
    let via_pdf = lognormal_pdf(k, s, sigma, tau, 0.0).unwrap() * k / s;
    assert!((d - via_pdf).abs() / d < 1e-12);
    let fd = common::diff4(|x| bs_digital(x, k, sigma, tau, 0.0).unwrap().price, s, 1e-2);
    assert!((d - fd).abs() / d < 1e-8);
}

#[test]
fn strike_derivative_of_call_is_minus_digital() {
    for s in [70.0, 100.0, 150.0] {
        for tau in [0.05, 1.0, 3.0] {
            let dk = common::diff4(|k| bs_call(s, k, 0.25, tau, 0.02).unwrap().price, 110.0, 1e-2);
            let dig = bs_digital(s, 110.0, 0.25, tau, 0.02).unwrap().price;
            assert!((dk + dig).abs() / dig < 1e-6, "s {s} tau {tau}");
        }
    }
}
