//! Feed-forward softplus network with its adjoint "twin": one pass gives the
//! price, the reverse sweep gives the derivative of the price with respect to the
//! spot input. Training minimises
//!
//! ```text
//! (1/N) sum (x~ - y~)^2  +  lambda (1/N) sum (q~ - dy~)^2
//! ```
//!
//! in normalised units. Parameter gradients of the derivative term need a
//! forward-over-reverse sweep, so the second derivative of softplus shows up.
//!
//! Layer `l` computes `a_l = W_l h_{l-1} + b_l` with `h_0 = a_0` (the normalised
//! inputs) and `h_l = G(a_l)` for hidden layers; the output layer is linear.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::instruments::Sample;
use crate::scalar::{mean_var, Scalar};

pub const INPUTS: usize = 2;
pub const DEFAULT_WIDTH: usize = 20;
pub const DEFAULT_HIDDEN_LAYERS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Softplus,
    /// Linear hidden units; only useful for checking the chain rule.
    Identity,
}

#[inline]
pub fn softplus<T: Scalar>(u: T) -> T {
    u.max(T::zero()) + (-u.abs()).exp().ln_1p()
}

#[inline]
pub fn sigmoid<T: Scalar>(u: T) -> T {
    if u >= T::zero() {
        T::one() / (T::one() + (-u).exp())
    } else {
        let e = u.exp();
        e / (T::one() + e)
    }
}

impl Activation {
    /// `(G(u), G'(u), G''(u))`
    #[inline]
    fn eval<T: Scalar>(self, u: T) -> (T, T, T) {
        match self {
            Activation::Softplus => {
                let e = (-u.abs()).exp();
                let inv = T::one() / (T::one() + e);
                let s = if u >= T::zero() { inv } else { e * inv };
                (u.max(T::zero()) + e.ln_1p(), s, s * (T::one() - s))
            }
            Activation::Identity => (u, T::one(), T::zero()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct Normalization<T> {
    pub mean_z: T,
    pub std_z: T,
    pub mean_tau: T,
    pub std_tau: T,
    pub mean_x: T,
    pub std_x: T,
    pub std_q: T,
}

fn positive_or_one<T: Scalar>(v: T) -> T {
    if v > T::zero() && v.is_finite() {
        v
    } else {
        T::one()
    }
}

impl<T: Scalar> Normalization<T> {
    pub fn identity() -> Self {
        Normalization {
            mean_z: T::zero(),
            std_z: T::one(),
            mean_tau: T::zero(),
            std_tau: T::one(),
            mean_x: T::zero(),
            std_x: T::one(),
            std_q: T::one(),
        }
    }

    /// Sample moments of the rows; degenerate spreads fall back to 1.
    pub fn fit(rows: &[Sample<T>]) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::Domain("cannot normalise an empty training set".into()));
        }
        let col = |f: fn(&Sample<T>) -> T| -> (T, T) {
            let v: Vec<T> = rows.iter().map(f).collect();
            let (m, var) = mean_var(&v);
            (m, positive_or_one(var.sqrt()))
        };
        let (mean_z, std_z) = col(|r| r.z);
        let (mean_tau, std_tau) = col(|r| r.tau);
        let (mean_x, std_x) = col(|r| r.x);
        let (_, std_q) = col(|r| r.q);
        Ok(Normalization { mean_z, std_z, mean_tau, std_tau, mean_x, std_x, std_q })
    }

    #[inline]
    pub fn inputs(&self, z: T, tau: T) -> [T; INPUTS] {
        [(z - self.mean_z) / self.std_z, (tau - self.mean_tau) / self.std_tau]
    }

    #[inline]
    pub fn target(&self, x: T) -> T {
        (x - self.mean_x) / self.std_x
    }

    #[inline]
    pub fn diff_target(&self, q: T) -> T {
        q / self.std_q
    }

    /// Converts `dy~/dz~` into the units of the normalised differential label.
    #[inline]
    pub fn diff_scale(&self) -> T {
        self.std_x / (self.std_z * self.std_q)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct Layer<T> {
    pub n_in: usize,
    pub n_out: usize,
    /// Row-major `n_out x n_in`.
    pub weights: Vec<T>,
    pub biases: Vec<T>,
}

impl<T: Scalar> Layer<T> {
    fn zeros(n_in: usize, n_out: usize) -> Self {
        Layer { n_in, n_out, weights: vec![T::zero(); n_in * n_out], biases: vec![T::zero(); n_out] }
    }

    #[inline]
    pub fn w(&self, o: usize, i: usize) -> T {
        self.weights[o * self.n_in + i]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct NetParams<T> {
    pub layer_sizes: Vec<usize>,
    pub layers: Vec<Layer<T>>,
    pub norm: Normalization<T>,
    #[serde(default)]
    pub activation: Activation,
}

/// Layer sizes `[2, width x hidden, 1]`.
pub fn architecture(hidden_layers: usize, width: usize) -> Vec<usize> {
    let mut sizes = vec![INPUTS];
    sizes.extend(std::iter::repeat_n(width, hidden_layers));
    sizes.push(1);
    sizes
}

/// Glorot-normal weights (variance `2 / (fan_in + fan_out)`), zero biases.
pub fn init<T: Scalar>(layer_sizes: &[usize], seed: u64) -> Result<NetParams<T>> {
    if layer_sizes.len() < 2
        || layer_sizes[0] != INPUTS
        || *layer_sizes.last().unwrap() != 1
        || layer_sizes.contains(&0)
    {
        return Err(Error::Config(format!("invalid layer sizes {layer_sizes:?}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layers = layer_sizes
        .windows(2)
        .map(|w| {
            let (n_in, n_out) = (w[0], w[1]);
            let std = (2.0 / (n_in + n_out) as f64).sqrt();
            let weights = (0..n_in * n_out)
                .map(|_| {
                    let d: f64 = StandardNormal.sample(&mut rng);
                    T::lit(d * std)
                })
                .collect();
            Layer { n_in, n_out, weights, biases: vec![T::zero(); n_out] }
        })
        .collect();
    Ok(NetParams {
        layer_sizes: layer_sizes.to_vec(),
        layers,
        norm: Normalization::identity(),
        activation: Activation::Softplus,
    })
}

/// Intermediate values of one forward pass, needed by the twin and gradient sweeps.
#[derive(Debug, Clone, PartialEq)]
pub struct Tape<T> {
    /// `a_0 .. a_L`
    pub pre: Vec<Vec<T>>,
    /// `G(a_l)`, with `h_0 = a_0`
    act: Vec<Vec<T>>,
    d1: Vec<Vec<T>>,
    d2: Vec<Vec<T>>,
}

impl<T: Scalar> Tape<T> {
    fn for_params(p: &NetParams<T>) -> Self {
        let mk = || p.layer_sizes.iter().map(|&n| vec![T::zero(); n]).collect::<Vec<_>>();
        Tape { pre: mk(), act: mk(), d1: mk(), d2: mk() }
    }

    pub fn output(&self) -> T {
        self.pre.last().unwrap()[0]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct TwinOutput<T> {
    pub y_norm: T,
    pub y: T,
    pub dy_dz_norm: T,
    pub dy_dz: T,
}

impl<T: Scalar> NetParams<T> {
    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.biases.len()).sum()
    }

    fn run(&self, input: [T; INPUTS], tape: &mut Tape<T>) {
        tape.pre[0].copy_from_slice(&input);
        tape.act[0].copy_from_slice(&input);
        let last = self.depth();
        for (l, layer) in self.layers.iter().enumerate().map(|(i, x)| (i + 1, x)) {
            let (prev, cur) = tape.act.split_at_mut(l);
            let h = &prev[l - 1];
            let a = &mut tape.pre[l];
            for ((ao, row), b) in a.iter_mut().zip(layer.weights.chunks_exact(layer.n_in)).zip(&layer.biases) {
                let mut s = *b;
                for (w, x) in row.iter().zip(h) {
                    s += *w * *x;
                }
                *ao = s;
            }
            if l < last {
                for o in 0..layer.n_out {
                    let (g, g1, g2) = self.activation.eval(a[o]);
                    cur[0][o] = g;
                    tape.d1[l][o] = g1;
                    tape.d2[l][o] = g2;
                }
            }
        }
    }

    /// Forward pass on normalised inputs.
    pub fn forward_normalized(&self, input: [T; INPUTS]) -> Result<Tape<T>> {
        let mut tape = Tape::for_params(self);
        self.run(input, &mut tape);
        if let Some(layer) = tape.pre.iter().position(|a| a.iter().any(|v| !v.is_finite())) {
            return Err(Error::Numeric { layer });
        }
        Ok(tape)
    }

    /// Price at raw `(z, tau)`; the returned tape feeds [`twin_backward`].
    pub fn forward(&self, z: T, tau: T) -> Result<(T, Tape<T>)> {
        let tape = self.forward_normalized(self.norm.inputs(z, tau))?;
        let y = tape.output() * self.norm.std_x + self.norm.mean_x;
        Ok((y, tape))
    }

    /// Price and delta at raw `(z, tau)`.
    pub fn predict(&self, z: T, tau: T) -> Result<TwinOutput<T>> {
        let (y, tape) = self.forward(z, tau)?;
        let dy_dz_norm = twin_sweep(self, &tape)[0];
        Ok(TwinOutput { y_norm: tape.output(), y, dy_dz_norm, dy_dz: dy_dz_norm * self.norm.std_x / self.norm.std_z })
    }

    pub fn price(&self, z: T, tau: T) -> Result<T> {
        Ok(self.forward(z, tau)?.0)
    }

    pub fn delta(&self, z: T, tau: T) -> Result<T> {
        Ok(self.predict(z, tau)?.dy_dz)
    }
}

/// Adjoint sweep `abar_{l-1} = (W_l^T abar_l) o G'(a_{l-1})` from `abar_L = 1`;
/// returns `abar_0`, the gradient of the normalised output w.r.t. the normalised inputs.
fn twin_sweep<T: Scalar>(p: &NetParams<T>, tape: &Tape<T>) -> Vec<T> {
    let mut abar = vec![T::one()];
    for l in (1..=p.depth()).rev() {
        let layer = &p.layers[l - 1];
        let mut next = vec![T::zero(); layer.n_in];
        for (o, &g) in abar.iter().enumerate() {
            let row = &layer.weights[o * layer.n_in..(o + 1) * layer.n_in];
            for (n, w) in next.iter_mut().zip(row) {
                *n += *w * g;
            }
        }
        if l > 1 {
            for (n, d) in next.iter_mut().zip(&tape.d1[l - 1]) {
                *n *= *d;
            }
        }
        abar = next;
    }
    abar
}

/// De-normalised `dy/dz` from a forward tape.
pub fn twin_backward<T: Scalar>(p: &NetParams<T>, tape: &Tape<T>) -> Result<T> {
    let shapes_match =
        tape.pre.len() == p.layer_sizes.len() && tape.pre.iter().zip(&p.layer_sizes).all(|(a, &n)| a.len() == n);
    if !shapes_match {
        return Err(Error::State("forward tape does not belong to these parameters".into()));
    }
    Ok(twin_sweep(p, tape)[0] * p.norm.std_x / p.norm.std_z)
}

/// Gradient buffers congruent to the layers of a [`NetParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T> {
    pub layers: Vec<Layer<T>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn zeros_like(p: &NetParams<T>) -> Self {
        Gradients { layers: p.layers.iter().map(|l| Layer::zeros(l.n_in, l.n_out)).collect() }
    }

    fn reset(&mut self) {
        for l in &mut self.layers {
            l.weights.iter_mut().for_each(|w| *w = T::zero());
            l.biases.iter_mut().for_each(|b| *b = T::zero());
        }
    }

    pub fn flat(&self) -> Vec<T> {
        self.layers.iter().flat_map(|l| l.weights.iter().chain(&l.biases).copied()).collect()
    }
}

/// What the network is fitted to.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar", rename_all = "snake_case", tag = "kind")]
pub enum Objective<T> {
    /// Payoff labels only (plain regression).
    ValueOnly,
    /// Payoff and differential labels, derivative term weighted by `lambda`.
    Differential { lambda: T },
}

impl<T: Scalar> Objective<T> {
    pub fn lambda(&self) -> T {
        match self {
            Objective::ValueOnly => T::zero(),
            Objective::Differential { lambda } => *lambda,
        }
    }
}

/// Per-row scratch space so the gradient loop does not allocate.
struct Scratch<T> {
    tape: Tape<T>,
    /// adjoints of the twin variables, forward order: `g_l = d loss / d abar_l`
    g: Vec<Vec<T>>,
    /// `abar_l`
    abar: Vec<Vec<T>>,
    /// `t_{l-1} = W_l^T abar_l`
    tw: Vec<Vec<T>>,
    /// adjoints of the forward pre-activations
    r: Vec<Vec<T>>,
    extra: Vec<Vec<T>>,
    u: Vec<Vec<T>>,
}

impl<T: Scalar> Scratch<T> {
    fn new(p: &NetParams<T>) -> Self {
        let mk = || p.layer_sizes.iter().map(|&n| vec![T::zero(); n]).collect::<Vec<_>>();
        Scratch { tape: Tape::for_params(p), g: mk(), abar: mk(), tw: mk(), r: mk(), extra: mk(), u: mk() }
    }
}

#[inline]
fn outer_add<T: Scalar>(dw: &mut [T], n_in: usize, left: &[T], right: &[T]) {
    for (o, &l) in left.iter().enumerate() {
        let row = &mut dw[o * n_in..(o + 1) * n_in];
        for (d, &r) in row.iter_mut().zip(right) {
            *d += l * r;
        }
    }
}

/// Reverse sweep through the forward pass only, seeded with `r_L = seed` and the
/// extra pre-activation adjoints in `s.extra` (zero for a value-only fit).
fn backprop_forward<T: Scalar>(p: &NetParams<T>, s: &mut Scratch<T>, seed: T, grads: &mut Gradients<T>) {
    let depth = p.depth();
    s.r[depth][0] = seed;
    for l in (1..=depth).rev() {
        let layer = &p.layers[l - 1];
        let gl = &mut grads.layers[l - 1];
        outer_add(&mut gl.weights, layer.n_in, &s.r[l], &s.tape.act[l - 1]);
        for (b, &r) in gl.biases.iter_mut().zip(&s.r[l]) {
            *b += r;
        }
        if l > 1 {
            let (lo, hi) = s.r.split_at_mut(l);
            let prev = &mut lo[l - 1];
            prev.iter_mut().for_each(|v| *v = T::zero());
            for (o, &r) in hi[0].iter().enumerate() {
                let row = &layer.weights[o * layer.n_in..(o + 1) * layer.n_in];
                for (pv, w) in prev.iter_mut().zip(row) {
                    *pv += *w * r;
                }
            }
            for ((pv, d), e) in prev.iter_mut().zip(&s.tape.d1[l - 1]).zip(&s.extra[l - 1]) {
                *pv = *pv * *d + *e;
            }
        }
    }
}

/// Twin sweep storing `abar_l` and `W_l^T abar_l`; returns `abar_0[0]`.
fn twin_store<T: Scalar>(p: &NetParams<T>, s: &mut Scratch<T>) -> T {
    let depth = p.depth();
    s.abar[depth][0] = T::one();
    for l in (1..=depth).rev() {
        let layer = &p.layers[l - 1];
        let (lo, hi) = s.abar.split_at_mut(l);
        let t = &mut s.tw[l - 1];
        t.iter_mut().for_each(|v| *v = T::zero());
        for (o, &g) in hi[0].iter().enumerate() {
            let row = &layer.weights[o * layer.n_in..(o + 1) * layer.n_in];
            for (tv, w) in t.iter_mut().zip(row) {
                *tv += *w * g;
            }
        }
        let dst = &mut lo[l - 1];
        if l > 1 {
            for ((a, tv), d) in dst.iter_mut().zip(t.iter()).zip(&s.tape.d1[l - 1]) {
                *a = *tv * *d;
            }
        } else {
            dst.copy_from_slice(t);
        }
    }
    s.abar[0][0]
}

/// Accumulates the gradient of one row's contribution to the objective; returns
/// the row's (value residual^2, derivative residual^2).
fn accumulate_row<T: Scalar>(
    p: &NetParams<T>,
    s: &mut Scratch<T>,
    row: &Sample<T>,
    objective: Objective<T>,
    inv_n: T,
    grads: &mut Gradients<T>,
) -> (T, T) {
    let two = T::lit(2.0);
    p.run(p.norm.inputs(row.z, row.tau), &mut s.tape);
    let value_res = s.tape.output() - p.norm.target(row.x);
    let depth = p.depth();

    let deriv_res = match objective {
        Objective::ValueOnly => {
            for e in s.extra.iter_mut() {
                e.iter_mut().for_each(|v| *v = T::zero());
            }
            T::zero()
        }
        Objective::Differential { lambda } => {
            let cd = p.norm.diff_scale();
            let dy = twin_store(p, s);
            let res = cd * dy - p.norm.diff_target(row.q);
            // seed on abar_0: only the spot component enters the loss
            s.g[0].iter_mut().for_each(|v| *v = T::zero());
            s.g[0][0] = two * lambda * res * cd * inv_n;
            for l in 1..=depth {
                let layer = &p.layers[l - 1];
                let (lo, hi) = s.g.split_at_mut(l);
                let gprev = &lo[l - 1];
                let gl = &mut grads.layers[l - 1];
                if l == 1 {
                    outer_add(&mut gl.weights, layer.n_in, &s.abar[1], gprev);
                    for (o, gv) in hi[0].iter_mut().enumerate() {
                        let row = &layer.weights[o * layer.n_in..(o + 1) * layer.n_in];
                        *gv = row.iter().zip(gprev).map(|(w, g)| *w * *g).sum();
                    }
                } else {
                    let u = &mut s.u[l - 1];
                    for ((uv, g), d) in u.iter_mut().zip(gprev).zip(&s.tape.d1[l - 1]) {
                        *uv = *g * *d;
                    }
                    let u = &s.u[l - 1];
                    outer_add(&mut gl.weights, layer.n_in, &s.abar[l], u);
                    for (((e, g), t), d2) in
                        s.extra[l - 1].iter_mut().zip(gprev).zip(&s.tw[l - 1]).zip(&s.tape.d2[l - 1])
                    {
                        *e = *g * *t * *d2;
                    }
                    for (o, gv) in hi[0].iter_mut().enumerate() {
                        let row = &layer.weights[o * layer.n_in..(o + 1) * layer.n_in];
                        *gv = row.iter().zip(u).map(|(w, g)| *w * *g).sum();
                    }
                }
            }
            res
        }
    };
    backprop_forward(p, s, two * value_res * inv_n, grads);
    (value_res * value_res, deriv_res * deriv_res)
}

fn combine<T: Scalar>(objective: Objective<T>, sv: T, sd: T, n: T) -> T {
    match objective {
        Objective::ValueOnly => sv / n,
        Objective::Differential { lambda } => sv / n + lambda * (sd / n),
    }
}

/// Objective value and its exact parameter gradient over `rows`.
pub fn loss_and_gradients<T: Scalar>(
    p: &NetParams<T>,
    rows: &[Sample<T>],
    objective: Objective<T>,
) -> Result<(T, Gradients<T>)> {
    let mut grads = Gradients::zeros_like(p);
    let mut s = Scratch::new(p);
    let l = loss_and_gradients_into(p, rows, objective, &mut s, &mut grads)?;
    Ok((l, grads))
}

fn loss_and_gradients_into<T: Scalar>(
    p: &NetParams<T>,
    rows: &[Sample<T>],
    objective: Objective<T>,
    s: &mut Scratch<T>,
    grads: &mut Gradients<T>,
) -> Result<T> {
    if rows.is_empty() {
        return Err(Error::Domain("empty batch".into()));
    }
    grads.reset();
    let n = T::from_usize_lossy(rows.len());
    let inv_n = T::one() / n;
    let (mut sv, mut sd) = (T::zero(), T::zero());
    for row in rows {
        let (v, d) = accumulate_row(p, s, row, objective, inv_n, grads);
        sv += v;
        sd += d;
    }
    Ok(combine(objective, sv, sd, n))
}

/// `(1/N) sum (x~ - y~)^2 + lambda (1/N) sum (q~ - dy~)^2`.
pub fn loss<T: Scalar>(p: &NetParams<T>, rows: &[Sample<T>], lambda: T) -> Result<T> {
    loss_with(p, rows, lambda, &mut Scratch::new(p))
}

fn loss_with<T: Scalar>(p: &NetParams<T>, rows: &[Sample<T>], lambda: T, s: &mut Scratch<T>) -> Result<T> {
    if rows.is_empty() {
        return Err(Error::Domain("empty batch".into()));
    }
    let cd = p.norm.diff_scale();
    let (mut sv, mut sd) = (T::zero(), T::zero());
    for row in rows {
        p.run(p.norm.inputs(row.z, row.tau), &mut s.tape);
        let v = s.tape.output() - p.norm.target(row.x);
        sv += v * v;
        if lambda != T::zero() {
            let d = cd * twin_store(p, s) - p.norm.diff_target(row.q);
            sd += d * d;
        }
    }
    let n = T::from_usize_lossy(rows.len());
    Ok(sv / n + lambda * (sd / n))
}

/// Reusable buffers for repeated price/delta evaluation of one network.
pub struct Evaluator<'a, T> {
    params: &'a NetParams<T>,
    scratch: Scratch<T>,
}

impl<'a, T: Scalar> Evaluator<'a, T> {
    pub fn new(params: &'a NetParams<T>) -> Self {
        Evaluator { params, scratch: Scratch::new(params) }
    }

    pub fn predict(&mut self, z: T, tau: T) -> Result<TwinOutput<T>> {
        let p = self.params;
        p.run(p.norm.inputs(z, tau), &mut self.scratch.tape);
        let y_norm = self.scratch.tape.output();
        let dy_dz_norm = twin_store(p, &mut self.scratch);
        if !y_norm.is_finite() || !dy_dz_norm.is_finite() {
            return Err(Error::Numeric { layer: p.depth() });
        }
        Ok(TwinOutput {
            y_norm,
            y: y_norm * p.norm.std_x + p.norm.mean_x,
            dy_dz_norm,
            dy_dz: dy_dz_norm * p.norm.std_x / p.norm.std_z,
        })
    }
}

pub fn param_gradients<T: Scalar>(p: &NetParams<T>, rows: &[Sample<T>], lambda: T) -> Result<Gradients<T>> {
    Ok(loss_and_gradients(p, rows, Objective::Differential { lambda })?.1)
}

/// Plain backpropagation of the value-only mean squared error.
pub fn value_gradients<T: Scalar>(p: &NetParams<T>, rows: &[Sample<T>]) -> Result<Gradients<T>> {
    Ok(loss_and_gradients(p, rows, Objective::ValueOnly)?.1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct TrainConfig<T> {
    pub objective: Objective<T>,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: T,
    /// Epochs at which the learning rate is multiplied by `lr_decay`.
    pub lr_milestones: Vec<usize>,
    pub lr_decay: T,
    pub seed: u64,
    pub hidden_width: usize,
    pub hidden_layers: usize,
}

impl<T: Scalar> TrainConfig<T> {
    /// Adam at `1e-2`, decayed tenfold at 60% and 90% of the run.
    pub fn new(objective: Objective<T>, epochs: usize, seed: u64) -> Self {
        TrainConfig {
            objective,
            epochs,
            batch_size: 256,
            learning_rate: T::lit(1e-2),
            lr_milestones: vec![epochs * 6 / 10, epochs * 9 / 10],
            lr_decay: T::lit(0.1),
            seed,
            hidden_width: DEFAULT_WIDTH,
            hidden_layers: DEFAULT_HIDDEN_LAYERS,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.objective.lambda() < T::zero() {
            return Err(Error::Config("lambda must be non-negative".into()));
        }
        if self.epochs == 0 || self.batch_size == 0 || self.hidden_width == 0 {
            return Err(Error::Config("epochs, batch_size and hidden_width must be positive".into()));
        }
        if !(self.learning_rate > T::zero()) {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        Ok(())
    }

    pub fn learning_rate_at(&self, epoch: usize) -> T {
        let decays = self.lr_milestones.iter().filter(|&&m| epoch >= m).count();
        self.learning_rate * self.lr_decay.powi(decays as i32)
    }
}

struct Adam<T> {
    m: Vec<T>,
    v: Vec<T>,
    t: i32,
}

impl<T: Scalar> Adam<T> {
    const B1: f64 = 0.9;
    const B2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(n: usize) -> Self {
        Adam { m: vec![T::zero(); n], v: vec![T::zero(); n], t: 0 }
    }

    fn step(&mut self, params: &mut NetParams<T>, grads: &Gradients<T>, lr: T) {
        let (b1, b2, eps) = (T::lit(Self::B1), T::lit(Self::B2), T::lit(Self::EPS));
        self.t += 1;
        let c1 = T::one() - b1.powi(self.t);
        let c2 = T::one() - b2.powi(self.t);
        let mut k = 0;
        for (layer, g) in params.layers.iter_mut().zip(&grads.layers) {
            for (w, &gw) in
                layer.weights.iter_mut().chain(layer.biases.iter_mut()).zip(g.weights.iter().chain(&g.biases))
            {
                self.m[k] = b1 * self.m[k] + (T::one() - b1) * gw;
                self.v[k] = b2 * self.v[k] + (T::one() - b2) * gw * gw;
                let mhat = self.m[k] / c1;
                let vhat = self.v[k] / c2;
                *w -= lr * mhat / (vhat.sqrt() + eps);
                k += 1;
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct TrainedNet<T> {
    pub params: NetParams<T>,
    pub config: TrainConfig<T>,
    /// Full-sample objective before training (index 0) and after each epoch.
    pub loss_history: Vec<T>,
}

impl<T: Scalar> TrainedNet<T> {
    /// Loss history CSV, header `epoch,loss`.
    pub fn write_loss_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "epoch,loss")?;
        for (e, l) in self.loss_history.iter().enumerate() {
            writeln!(w, "{e},{l}")?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Adam over shuffled minibatches. Deterministic given `cfg.seed`: the weights are
/// drawn from stream `seed` and the shuffles from `seed + 1`.
pub fn train<T: Scalar>(rows: &[Sample<T>], cfg: &TrainConfig<T>) -> Result<TrainedNet<T>> {
    cfg.validate()?;
    if rows.is_empty() || rows.len() < cfg.batch_size {
        return Err(Error::Config(format!("{} rows cannot fill a minibatch of {}", rows.len(), cfg.batch_size)));
    }
    let sizes = architecture(cfg.hidden_layers, cfg.hidden_width);
    let mut params = init::<T>(&sizes, cfg.seed)?;
    params.norm = Normalization::fit(rows)?;
    train_from(params, rows, cfg)
}

/// Same as [`train`] but starting from given parameters (and their normalisation).
pub fn train_from<T: Scalar>(
    mut params: NetParams<T>,
    rows: &[Sample<T>],
    cfg: &TrainConfig<T>,
) -> Result<TrainedNet<T>> {
    cfg.validate()?;
    if rows.is_empty() {
        return Err(Error::Domain("empty training set".into()));
    }
    let batch = cfg.batch_size.min(rows.len());
    let mut order: Vec<usize> = (0..rows.len()).collect();
    let mut shuffler = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let mut adam = Adam::new(params.n_params());
    let mut grads = Gradients::zeros_like(&params);
    let mut scratch = Scratch::new(&params);
    let mut buf: Vec<Sample<T>> = Vec::with_capacity(batch);

    let lambda = cfg.objective.lambda();
    let full_loss = |p: &NetParams<T>, s: &mut Scratch<T>| loss_with(p, rows, lambda, s);
    let mut history = vec![full_loss(&params, &mut scratch)?];
    if !history[0].is_finite() {
        return Err(Error::Training { epoch: 0 });
    }

    for epoch in 0..cfg.epochs {
        let lr = cfg.learning_rate_at(epoch);
        order.shuffle(&mut shuffler);
        for chunk in order.chunks(batch) {
            buf.clear();
            buf.extend(chunk.iter().map(|&i| rows[i]));
            let l = loss_and_gradients_into(&params, &buf, cfg.objective, &mut scratch, &mut grads)?;
            if !l.is_finite() {
                return Err(Error::Training { epoch: epoch + 1 });
            }
            adam.step(&mut params, &grads, lr);
        }
        let l = full_loss(&params, &mut scratch)?;
        if !l.is_finite() {
            return Err(Error::Training { epoch: epoch + 1 });
        }
        history.push(l);
    }
    Ok(TrainedNet { params, config: cfg.clone(), loss_history: history })
}
