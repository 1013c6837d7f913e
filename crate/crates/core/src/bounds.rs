//! Superharmonic upper bounds, the subharmonic lower bound `g_n`, the rate
//! function `g` and the regions where the approximation error decays.

use num_rational::BigRational;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::loglinear::JacksonRouting;
use crate::model::NetworkParams;
use crate::systems::harmonic_residual;

/// `r`, the constants `γ_k`, the pair ratios `γ_{k-1,k}` and stage products `Γ_j`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SuperharmonicParams {
    pub r: f64,
    /// `gamma[k - 1] = γ_k`, `γ_1 = 1`.
    pub gamma: Vec<f64>,
    /// `gamma_pair[k - 2] = γ_{k-1,k} = γ_{k-1}/(γ_{k-1} + γ_k)`.
    pub gamma_pair: Vec<f64>,
    /// `stage[j] = Γ_j = Π_{l=2}^{j} γ_{l-1,l}` for `j = 0..=d` (`Γ_0 = Γ_1 = 1`).
    pub stage: Vec<f64>,
}

impl SuperharmonicParams {
    pub fn dim(&self) -> usize {
        self.gamma.len()
    }

    /// `γ_k`.
    pub fn gamma(&self, k: usize) -> f64 {
        self.gamma[k - 1]
    }

    /// `λ(1/r − 1) Σ_j γ_j`, the per-step drift compensator of the stage supermartingale.
    pub fn compensator(&self, params: &NetworkParams) -> f64 {
        params.lambda() * (1.0 / self.r - 1.0) * self.gamma.iter().sum::<f64>()
    }
}

/// Default `r`: the midpoint of `(ρ, 1)`.
pub fn default_r(params: &NetworkParams) -> f64 {
    (params.rho_max() + 1.0) / 2.0
}

/// `γ_1 = 1`, `γ_k = (1/d) min_{j<k} γ_j (λ(1−1/r) + μ_j(1−r)) / (λ(1/r−1))`.
pub fn gamma_constants(params: &NetworkParams, r: f64) -> Result<SuperharmonicParams> {
    let rho = params.rho_max();
    if !(r > rho && r < 1.0) {
        return Err(Error::InvalidParams(format!("r = {r} must lie in (rho, 1) = ({rho}, 1)")));
    }
    let d = params.dim();
    let lambda = params.lambda();
    let den = lambda * (1.0 / r - 1.0);
    let mut gamma = vec![1.0];
    for k in 2..=d {
        let m = (1..k)
            .map(|j| gamma[j - 1] * (lambda * (1.0 - 1.0 / r) + params.mu(j) * (1.0 - r)))
            .fold(f64::INFINITY, f64::min);
        gamma.push(m / (d as f64 * den));
    }
    let gamma_pair: Vec<f64> = (2..=d).map(|k| gamma[k - 2] / (gamma[k - 2] + gamma[k - 1])).collect();
    let mut stage = vec![1.0, 1.0];
    for p in &gamma_pair {
        let last = *stage.last().unwrap();
        stage.push(last * p);
    }
    stage.truncate(d + 1);
    Ok(SuperharmonicParams { r, gamma, gamma_pair, stage })
}

/// `h_{k,r}(y) = r^{y(1) − Σ_{j=2}^{k} y(j)}`.
pub fn eval_hkr(k: usize, r: f64, y: &[i64]) -> f64 {
    let e = y[0] - y[1..k].iter().sum::<i64>();
    r.powi(e as i32)
}

/// `E_y[h_{k,r}(Y_1)] − h_{k,r}(y)` in closed form: `h(λ(1/r−1) + μ_1(r−1))` for
/// `k = 1`, and `h(λ(1/r−1) + μ_k(r−1) 1{y(k) > 0})` for `k >= 2`.
pub fn superharmonic_residual_hkr(params: &NetworkParams, k: usize, r: f64, y: &[i64]) -> f64 {
    let h = eval_hkr(k, r, y);
    let l = params.lambda() * (1.0 / r - 1.0);
    let s = if k == 1 || y[k - 1] > 0 { params.mu(k) * (r - 1.0) } else { 0.0 };
    h * (l + s)
}

/// `E_y[h(Y_1)] − h(y)` for any function under the tandem Y dynamics.
pub fn direct_residual(params: &NetworkParams, h: impl Fn(&[i64]) -> f64, y: &[i64]) -> f64 {
    harmonic_residual(&JacksonRouting::<f64>::tandem(params), h, y)
}

/// `h_{2,k,r} = Σ_{j=1}^{k} γ_j h_{j,r}`.
pub fn eval_h2kr(sp: &SuperharmonicParams, k: usize, y: &[i64]) -> f64 {
    (1..=k).map(|j| sp.gamma(j) * eval_hkr(j, sp.r, y)).sum()
}

/// Upper bound `h_{2,d,r}(y)/γ_d` on `P_y(τ < ∞)`.
pub fn ptau_upper_bound(sp: &SuperharmonicParams, y: &[i64]) -> f64 {
    let d = sp.dim();
    eval_h2kr(sp, d, y) / sp.gamma(d)
}

/// Maximal elements `𝓜` of `i ≼ j ⇔ ρ_i <= ρ_j, i <= j`, and the thresholds
/// `1 − log ρ / log ρ_i`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RateRegion {
    pub members: Vec<usize>,
    pub thresholds: Vec<f64>,
    /// `ρ_i = ρ` exactly, which makes the threshold exactly zero.
    #[serde(skip)]
    top: Vec<bool>,
    #[serde(skip)]
    log_rho: Vec<f64>,
    rho: f64,
}

impl RateRegion {
    pub fn new(params: &NetworkParams) -> Self {
        let d = params.dim();
        let rq: Vec<BigRational> = (1..=d).map(|i| params.rho_exact(i)).collect();
        let rho_q = params.rho_max_exact();
        let rho = params.rho_max();
        let members: Vec<usize> = (1..=d).filter(|&i| !(i + 1..=d).any(|j| rq[j - 1] >= rq[i - 1])).collect();
        let top: Vec<bool> = members.iter().map(|&i| rq[i - 1] == rho_q).collect();
        let log_rho: Vec<f64> = members.iter().map(|&i| params.rho(i).ln()).collect();
        let thresholds = members
            .iter()
            .zip(&top)
            .zip(&log_rho)
            .map(|((_, &t), &l)| if t { 0.0 } else { 1.0 - rho.ln() / l })
            .collect();
        RateRegion { members, thresholds, top, log_rho, rho }
    }

    /// `x ∈ R_ρ`: `Σ_{j<=i} x(j) <= 1 − log ρ/log ρ_i` for every `i ∈ 𝓜`.
    pub fn contains_scaled(&self, x: &[f64]) -> bool {
        self.members.iter().zip(&self.thresholds).zip(&self.top).all(|((&i, &t), &top)| {
            let s: f64 = x[..i].iter().sum();
            if top {
                s <= 0.0
            } else {
                s <= t
            }
        })
    }

    /// `x ∈ R_{ρ,n}`, i.e. `x/n ∈ R_ρ`, decided as `Σ_{j<=i} x(j) <= n t_i`.
    pub fn contains_lattice(&self, n: i64, x: &[i64]) -> bool {
        self.members.iter().zip(&self.thresholds).zip(&self.top).all(|((&i, &t), &top)| {
            let s: i64 = x[..i].iter().sum();
            if top {
                s <= 0
            } else {
                (s as f64) <= n as f64 * t
            }
        })
    }

    /// `x ∈ R̄_{ρ,n}`: `Σ_{j<=i} x(j) >= 1 + n t_i` for some `i ∈ 𝓜`.
    pub fn in_rbar(&self, n: i64, x: &[i64]) -> bool {
        self.members.iter().zip(&self.thresholds).zip(&self.top).any(|((&i, &t), &top)| {
            let s: i64 = x[..i].iter().sum();
            if top {
                s >= 1
            } else {
                s as f64 >= 1.0 + n as f64 * t
            }
        })
    }

    /// `g(x) = min_{i∈𝓜} (1 − Σ_{j<=i} x(j)) log_ρ ρ_i`.
    pub fn rate_g(&self, x: &[f64]) -> f64 {
        let lr = self.rho.ln();
        self.members
            .iter()
            .zip(&self.log_rho)
            .map(|(&i, &l)| (1.0 - x[..i].iter().sum::<f64>()) * l / lr)
            .fold(f64::INFINITY, f64::min)
    }
}

pub fn maximal_set(params: &NetworkParams) -> Vec<usize> {
    RateRegion::new(params).members
}

/// `g_n(x) = max_i ρ_i^{n − Σ_{j<=i} x(j)}`.
pub fn gn(params: &NetworkParams, n: i64, x: &[i64]) -> f64 {
    let mut s = 0;
    let mut best = 0.0f64;
    for i in 1..=params.dim() {
        s += x[i - 1];
        best = best.max(params.rho(i).powi((n - s) as i32));
    }
    best
}

/// Lower bound `g_n(x) − ρ^n <= P_x(τ_n < τ_0)`.
pub fn lower_bound_gn(params: &NetworkParams, n: i64, x: &[i64]) -> f64 {
    gn(params, n, x) - params.rho_max().powi(n as i32)
}

/// `g` at a scaled point.
pub fn rate_g(params: &NetworkParams, x_scaled: &[f64]) -> f64 {
    RateRegion::new(params).rate_g(x_scaled)
}

/// `x ∈ R̄_{ρ,n}`.
pub fn in_rbar(params: &NetworkParams, n: i64, x: &[i64]) -> bool {
    RateRegion::new(params).in_rbar(n, x)
}

/// `ρ^{n(1 − g(x/n) − ε)}`, the relative-error bound on `R̄_{ρ,n}`.
pub fn relative_error_bound(params: &NetworkParams, n: i64, x: &[i64], eps: f64) -> f64 {
    let xs: Vec<f64> = x.iter().map(|&v| v as f64 / n as f64).collect();
    let g = rate_g(params, &xs);
    params.rho_max().powf(n as f64 * (1.0 - g - eps))
}

/// Exponential rate `(−log ρ)(1 − g(x))` of the relative-error bound.
pub fn error_rate(params: &NetworkParams, x_scaled: &[f64]) -> f64 {
    -params.rho_max().ln() * (1.0 - rate_g(params, x_scaled))
}
