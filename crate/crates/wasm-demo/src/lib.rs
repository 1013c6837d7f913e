//! Browser bindings: fields of the closed-form approximation and of its error
//! over a 2-d slice of `A_n`, plus an importance-sampling estimate at one state.
//!
//! Slices vary coordinates `a` and `b` (1-based) with the rest held at 0. Fields
//! are row-major with `i = x(a)` selecting the row and `j = x(b)` the column,
//! `(n+1)²` entries, `NaN` where undefined.

use tandem_core::model::{affine_map_tn, NetworkParams};
use tandem_core::oracle::{solve_exact, SolveOptions};
use tandem_core::simulate::{is_estimate, SimConfig};
use tandem_core::tandem::TandemFormula;
use tandem_core::{Error, Result};
use wasm_bindgen::prelude::*;

/// States the in-browser oracle may allocate.
pub const ORACLE_BUDGET: u128 = 2_000_000;

/// Rates from positive weights `λ : μ_1 : … : μ_d`.
pub fn params_from_weights(lambda: f64, mu: &[f64]) -> Result<NetworkParams> {
    let total = lambda + mu.iter().sum::<f64>();
    if !(total.is_finite() && total > 0.0) {
        return Err(Error::InvalidParams("weights must be positive".into()));
    }
    let mu: Vec<f64> = mu.iter().map(|m| m / total).collect();
    NetworkParams::from_f64(lambda / total, &mu)
}

fn check_axes(d: usize, a: usize, b: usize) -> Result<()> {
    if a == b || a == 0 || b == 0 || a > d || b > d {
        return Err(Error::InvalidState(format!("axes must be two distinct coordinates in 1..={d}")));
    }
    Ok(())
}

fn slice_state(d: usize, a: usize, b: usize, i: i64, j: i64) -> Vec<i64> {
    let mut x = vec![0i64; d];
    x[a - 1] = i;
    x[b - 1] = j;
    x
}

/// `P_{T_n x}(τ < ∞)` over the slice.
pub fn approx_field(p: &NetworkParams, n: i64, a: usize, b: usize) -> Result<Vec<f64>> {
    check_axes(p.dim(), a, b)?;
    let f = TandemFormula::<f64>::new(p)?;
    let mut out = vec![f64::NAN; ((n + 1) * (n + 1)) as usize];
    for i in 0..=n {
        for j in 0..=n - i {
            let x = slice_state(p.dim(), a, b, i, j);
            out[(i * (n + 1) + j) as usize] = f.eval(&affine_map_tn(n, &x))?;
        }
    }
    Ok(out)
}

/// `(V − W)/V` with `V = −log P_x(τ_n < τ_0)/n` from the oracle and `W` from the approximation.
pub fn decay_error_field(p: &NetworkParams, n: i64, a: usize, b: usize) -> Result<Vec<f64>> {
    check_axes(p.dim(), a, b)?;
    let grid = solve_exact(p, n as usize, &SolveOptions { budget: ORACLE_BUDGET, ..Default::default() })?;
    let approx = approx_field(p, n, a, b)?;
    let mut out = vec![f64::NAN; approx.len()];
    for i in 0..=n {
        for j in 0..=n - i {
            if i + j == 0 || i + j == n {
                continue;
            }
            let k = (i * (n + 1) + j) as usize;
            let v = -grid.value(&slice_state(p.dim(), a, b, i, j)).expect("slice lies in A_n").ln();
            let w = -approx[k].ln();
            out[k] = (v - w) / v;
        }
    }
    Ok(out)
}

fn js(e: Error) -> JsError {
    JsError::new(&e.to_string())
}

/// Closed-form field over the slice `x(a) = i, x(b) = j`.
#[wasm_bindgen]
pub fn probability_field(lambda: f64, mu: &[f64], n: u32, a: u32, b: u32) -> std::result::Result<Vec<f64>, JsError> {
    let p = params_from_weights(lambda, mu).map_err(js)?;
    approx_field(&p, n as i64, a as usize, b as usize).map_err(js)
}

/// Relative error of the decay rates over the slice; solves the oracle on `A_n`.
#[wasm_bindgen]
pub fn relative_error_field(lambda: f64, mu: &[f64], n: u32, a: u32, b: u32) -> std::result::Result<Vec<f64>, JsError> {
    let p = params_from_weights(lambda, mu).map_err(js)?;
    decay_error_field(&p, n as i64, a as usize, b as usize).map_err(js)
}

/// `[estimate, standard error, closed form]` at `x`.
#[wasm_bindgen]
pub fn estimate_at(lambda: f64, mu: &[f64], n: u32, x: &[i32], samples: u32, seed: u32) -> std::result::Result<Vec<f64>, JsError> {
    let p = params_from_weights(lambda, mu).map_err(js)?;
    let x: Vec<i64> = x.iter().map(|&v| v as i64).collect();
    let rep = is_estimate(&p, n as i64, &x, &SimConfig::new(samples as u64, seed as u64)).map_err(js)?;
    let f = TandemFormula::<f64>::new(&p).map_err(js)?.eval(&affine_map_tn(n as i64, &x)).map_err(js)?;
    Ok(vec![rep.estimate, rep.std_error, f])
}
