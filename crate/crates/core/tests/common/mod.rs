#![allow(dead_code)]

/// Composite Simpson rule with `n` (even) intervals.
pub fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let h = (b - a) / n as f64;
    let mut s = f(a) + f(b);
    for i in 1..n {
        s += f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    s * h / 3.0
}

fn std_normal_pdf(u: f64) -> f64 {
    (-0.5 * u * u).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Standard-normal quantile at which `s` grows to `k` under GBM.
fn kink(s: f64, k: f64, sigma: f64, tau: f64, r: f64) -> f64 {
    ((k / s).ln() - (r - 0.5 * sigma * sigma) * tau) / (sigma * tau.sqrt())
}

fn terminal(s: f64, sigma: f64, tau: f64, r: f64, u: f64) -> f64 {
    s * ((r - 0.5 * sigma * sigma) * tau + sigma * tau.sqrt() * u).exp()
}

const STEPS: usize = 200_000;

/// Discounted GBM expectation of `(Z - k)^+`, integrated over the normal driver.
pub fn quad_call(s: f64, k: f64, sigma: f64, tau: f64, r: f64) -> f64 {
    let u0 = kink(s, k, sigma, tau, r);
    let f = |u: f64| (terminal(s, sigma, tau, r, u) - k).max(0.0) * std_normal_pdf(u);
    (-r * tau).exp() * simpson(f, u0, u0.max(0.0) + 40.0, STEPS)
}

/// Discounted GBM probability of `Z > k`.
pub fn quad_digital(s: f64, k: f64, sigma: f64, tau: f64, r: f64) -> f64 {
    let u0 = kink(s, k, sigma, tau, r);
    (-r * tau).exp() * simpson(std_normal_pdf, u0, u0.max(0.0) + 40.0, STEPS)
}

/// Fourth-order central difference of `f` at `x`.
pub fn diff4(f: impl Fn(f64) -> f64, x: f64, h: f64) -> f64 {
    (f(x - 2.0 * h) - 8.0 * f(x - h) + 8.0 * f(x + h) - f(x + 2.0 * h)) / (12.0 * h)
}
