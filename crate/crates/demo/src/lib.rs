//! Browser bindings for the loss curves, the excess-risk bounds and the
//! realizable tail. Curves come back as flat `Float64Array`s of interleaved
//! columns so the page can draw them without parsing.

use pnorm_erm::bounds::{
    realizable_sample_size, realizable_tail, BoundInputs, BoundReport, Theorem,
};
use pnorm_erm::LossKernel;
use wasm_bindgen::prelude::*;

fn js(e: pnorm_erm::Error) -> JsValue {
    JsValue::from_str(&e.to_string())
}

fn grid(lo: f64, hi: f64, points: usize) -> impl Iterator<Item = f64> {
    let steps = points.max(2) - 1;
    (0..=steps).map(move |i| lo + (hi - lo) * i as f64 / steps as f64)
}

/// Rows `(t, ℓ_p(t), ℓ_p'(t))` for `t` on `[lo, hi]`.
pub fn loss_rows(p: f64, lo: f64, hi: f64, points: usize) -> pnorm_erm::Result<Vec<f64>> {
    let k = LossKernel::new(p)?;
    Ok(grid(lo, hi, points)
        .flat_map(|t| [t, k.loss(t), k.grad(t)])
        .collect())
}

/// Rows `(x, γ_p(t, x), (p/2) t^{p-2} x², x^p)` for `x` on `[0, x_max]`.
pub fn gamma_rows(p: f64, t: f64, x_max: f64, points: usize) -> pnorm_erm::Result<Vec<f64>> {
    let k = LossKernel::new(p)?;
    let mut out = Vec::with_capacity(4 * points.max(2));
    for x in grid(0.0, x_max, points) {
        let quad = if t > 0.0 {
            0.5 * p * t.powf(p - 2.0) * x * x
        } else {
            f64::INFINITY
        };
        out.extend([x, k.gamma(t, x)?, quad, x.powf(p)]);
    }
    Ok(out)
}

/// Rows `(n, bound, leading, higher_order, threshold_met)` for `n` on a
/// log-spaced grid, using the bound that matches `p`.
#[allow(clippy::too_many_arguments)]
pub fn bound_rows(
    p: f64,
    d: usize,
    delta: f64,
    inputs: &BoundInputs,
    n_min: u64,
    n_max: u64,
    points: usize,
) -> pnorm_erm::Result<Vec<f64>> {
    let theorem = Theorem::for_exponent(p)?;
    let (lo, hi) = (
        (n_min.max(1) as f64).ln(),
        (n_max.max(n_min.max(1)) as f64).ln(),
    );
    let mut out = Vec::with_capacity(5 * points.max(2));
    let mut last = 0;
    for x in grid(lo, hi, points) {
        let n = x.exp().round() as u64;
        if n == last {
            continue;
        }
        last = n;
        let r = BoundReport::evaluate(theorem, p, d, n, delta, inputs)?;
        out.extend([
            n as f64,
            r.bound_value,
            r.leading_term,
            r.higher_order_term,
            f64::from(u8::from(r.threshold_met)),
        ]);
    }
    Ok(out)
}

/// Rows `(n, C(n, d-1) ρ^{n-d+1})` for `n = d..=n_max`.
pub fn tail_rows(d: usize, rho: f64, n_max: u64) -> pnorm_erm::Result<Vec<f64>> {
    let start = d as u64;
    let mut out = Vec::new();
    for n in start..=n_max.max(start) {
        out.extend([n as f64, realizable_tail(n, d, rho)?]);
    }
    Ok(out)
}

#[wasm_bindgen]
pub fn loss_curve(p: f64, lo: f64, hi: f64, points: usize) -> Result<Vec<f64>, JsValue> {
    loss_rows(p, lo, hi, points).map_err(js)
}

#[wasm_bindgen]
pub fn gamma_curve(p: f64, t: f64, x_max: f64, points: usize) -> Result<Vec<f64>, JsValue> {
    gamma_rows(p, t, x_max, points).map_err(js)
}

#[wasm_bindgen]
#[allow(clippy::too_many_arguments)]
pub fn bound_curve(
    p: f64,
    d: usize,
    delta: f64,
    v: f64,
    sigma_sq: f64,
    c_lp: f64,
    c_l2: f64,
    c_star: f64,
    n_min: u32,
    n_max: u32,
    points: usize,
) -> Result<Vec<f64>, JsValue> {
    let inputs = BoundInputs {
        v,
        sigma_p_sq: sigma_sq,
        c_p_lp: c_lp,
        c_p_l2: c_l2,
        c_star_p: c_star,
        rho: 0.0,
    };
    bound_rows(p, d, delta, &inputs, n_min.into(), n_max.into(), points).map_err(js)
}

#[wasm_bindgen]
pub fn tail_curve(d: usize, rho: f64, n_max: u32) -> Result<Vec<f64>, JsValue> {
    tail_rows(d, rho, n_max.into()).map_err(js)
}

/// Smallest `n` whose realizable tail is at most `delta`.
#[wasm_bindgen]
pub fn tail_sample_size(d: usize, delta: f64, rho: f64) -> Result<f64, JsValue> {
    realizable_sample_size(d, delta, rho)
        .map(|(n, _)| n as f64)
        .map_err(js)
}
