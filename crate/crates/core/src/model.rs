//! Network parameters, lattice states and the transition laws of X, Y and X̄.
//!
//! Nodes are labelled `1..=d` throughout; vectors are stored 0-based so node `j`
//! lives at index `j - 1`.

use std::fmt;

use num_rational::BigRational;
use num_traits::{One, Signed};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{format_rational, parse_rational, rational_from_f64, ratio_to_f64, Scalar};

/// Float tolerance on `lambda + sum(mu) = 1` for rates that are not exactly normalized.
pub const NORMALIZATION_TOL: f64 = 1e-9;

/// Arrival probability `lambda` and service probabilities `mu_1..mu_d` of one step of the walk.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawParams", into = "RawParams")]
pub struct NetworkParams {
    lambda_q: BigRational,
    mu_q: Vec<BigRational>,
    lambda: f64,
    mu: Vec<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(untagged)]
enum RateValue {
    Text(String),
    Num(f64),
}

impl RateValue {
    fn to_rational(&self) -> Result<BigRational> {
        match self {
            RateValue::Text(s) => parse_rational(s),
            RateValue::Num(v) => rational_from_f64(*v),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct RawParams {
    lambda: RateValue,
    mu: Vec<RateValue>,
}

impl TryFrom<RawParams> for NetworkParams {
    type Error = Error;

    fn try_from(raw: RawParams) -> Result<Self> {
        let lambda = raw.lambda.to_rational()?;
        let mu = raw.mu.iter().map(RateValue::to_rational).collect::<Result<Vec<_>>>()?;
        NetworkParams::new(lambda, mu)
    }
}

impl From<NetworkParams> for RawParams {
    fn from(p: NetworkParams) -> Self {
        RawParams {
            lambda: RateValue::Text(format_rational(&p.lambda_q)),
            mu: p.mu_q.iter().map(|m| RateValue::Text(format_rational(m))).collect(),
        }
    }
}

impl NetworkParams {
    /// Validates positivity, normalization and stability (`lambda < min mu`).
    pub fn new(lambda: BigRational, mu: Vec<BigRational>) -> Result<Self> {
        if mu.is_empty() {
            return Err(Error::InvalidParams("at least one service rate is required".into()));
        }
        if !lambda.is_positive() {
            return Err(Error::InvalidParams(format!(
                "lambda must be positive, got {}",
                format_rational(&lambda)
            )));
        }
        for (i, m) in mu.iter().enumerate() {
            if !m.is_positive() {
                return Err(Error::InvalidParams(format!(
                    "mu_{} must be positive, got {}",
                    i + 1,
                    format_rational(m)
                )));
            }
        }
        let total = mu.iter().fold(lambda.clone(), |a, b| a + b);
        if !total.is_one() && (ratio_to_f64(&total) - 1.0).abs() > NORMALIZATION_TOL {
            return Err(Error::InvalidParams(format!(
                "rates are jump probabilities and must sum to 1; lambda + sum(mu) = {}",
                ratio_to_f64(&total)
            )));
        }
        for (i, m) in mu.iter().enumerate() {
            if &lambda >= m {
                return Err(Error::InvalidParams(format!(
                    "unstable network: lambda = {} must be below every service rate, mu_{} = {}",
                    ratio_to_f64(&lambda),
                    i + 1,
                    ratio_to_f64(m)
                )));
            }
        }
        let lambda_f = ratio_to_f64(&lambda);
        let mu_f = mu.iter().map(ratio_to_f64).collect();
        Ok(NetworkParams { lambda_q: lambda, mu_q: mu, lambda: lambda_f, mu: mu_f })
    }

    pub fn from_f64(lambda: f64, mu: &[f64]) -> Result<Self> {
        let l = rational_from_f64(lambda)?;
        let m = mu.iter().map(|&v| rational_from_f64(v)).collect::<Result<Vec<_>>>()?;
        Self::new(l, m)
    }

    /// Rates proportional to integer weights, normalized by their total.
    pub fn from_weights(lambda: u64, mu: &[u64]) -> Result<Self> {
        let total: u64 = lambda + mu.iter().sum::<u64>();
        if total == 0 {
            return Err(Error::InvalidParams("all weights are zero".into()));
        }
        let q = |w: u64| BigRational::new(w.into(), total.into());
        Self::new(q(lambda), mu.iter().map(|&w| q(w)).collect())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("params serialize")
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// Service probability of node `i` (1-based).
    pub fn mu(&self, i: usize) -> f64 {
        self.mu[i - 1]
    }

    pub fn mus(&self) -> &[f64] {
        &self.mu
    }

    pub fn rho(&self, i: usize) -> f64 {
        self.lambda / self.mu[i - 1]
    }

    /// `rho = max_i rho_i`.
    pub fn rho_max(&self) -> f64 {
        ratio_to_f64(&self.rho_max_exact())
    }

    pub fn lambda_exact(&self) -> &BigRational {
        &self.lambda_q
    }

    pub fn mu_exact(&self, i: usize) -> &BigRational {
        &self.mu_q[i - 1]
    }

    pub fn rho_exact(&self, i: usize) -> BigRational {
        &self.lambda_q / &self.mu_q[i - 1]
    }

    pub fn rho_max_exact(&self) -> BigRational {
        let min_mu = self.mu_q.iter().min().expect("nonempty");
        &self.lambda_q / min_mu
    }

    /// True when `lambda + sum(mu)` is exactly one.
    pub fn exactly_normalized(&self) -> bool {
        self.mu_q.iter().fold(self.lambda_q.clone(), |a, b| a + b).is_one()
    }

    /// `(lambda, [mu_1..mu_d])` in the requested scalar type.
    pub fn rates<S: Scalar>(&self) -> (S, Vec<S>) {
        (S::from_ratio(&self.lambda_q), self.mu_q.iter().map(S::from_ratio).collect())
    }

    /// Fails on the first pair of equal service rates.
    pub fn check_distinct(&self) -> Result<()> {
        for i in 0..self.dim() {
            for j in i + 1..self.dim() {
                if self.mu_q[i] == self.mu_q[j] {
                    return Err(Error::EqualRates { i: i + 1, j: j + 1 });
                }
            }
        }
        Ok(())
    }

    /// Smallest `|mu_i - mu_j|`, or infinity for `d = 1`.
    pub fn min_rate_gap(&self) -> f64 {
        let mut gap = f64::INFINITY;
        for i in 0..self.dim() {
            for j in i + 1..self.dim() {
                gap = gap.min((self.mu[i] - self.mu[j]).abs());
            }
        }
        gap
    }

    /// Probability of an increment.
    pub fn prob(&self, inc: Increment) -> f64 {
        match inc {
            Increment::Arrival => self.lambda,
            Increment::Transfer(j) => self.mu[j - 1],
            Increment::Departure => self.mu[self.dim() - 1],
        }
    }

    /// Increment probabilities in [`Increment::all`] order.
    pub fn increment_probs(&self) -> Vec<f64> {
        let mut p = Vec::with_capacity(self.dim() + 1);
        p.push(self.lambda);
        p.extend_from_slice(&self.mu);
        p
    }

    /// The first `k` nodes with rates renormalized to sum to one.
    pub fn prefix(&self, k: usize) -> Result<Self> {
        if k == 0 || k > self.dim() {
            return Err(Error::Dimension { expected: self.dim(), got: k });
        }
        let total = self.mu_q[..k].iter().fold(self.lambda_q.clone(), |a, b| a + b);
        Self::new(&self.lambda_q / &total, self.mu_q[..k].iter().map(|m| m / &total).collect())
    }
}

impl fmt::Display for NetworkParams {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "lambda={}, mu=[", format_rational(&self.lambda_q))?;
        for (i, m) in self.mu_q.iter().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{}", format_rational(m))?;
        }
        write!(f, "]")
    }
}

/// One jump of the network.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Increment {
    /// `+e_1`
    Arrival,
    /// `-e_j + e_{j+1}`, `1 <= j < d`
    Transfer(usize),
    /// `-e_d`
    Departure,
}

impl Increment {
    /// Arrival, transfers in node order, departure.
    pub fn all(d: usize) -> Vec<Increment> {
        (0..=d).map(|k| Increment::from_index(k, d)).collect()
    }

    /// Inverse of [`Increment::index`].
    pub fn from_index(k: usize, d: usize) -> Increment {
        if k == 0 {
            Increment::Arrival
        } else if k == d {
            Increment::Departure
        } else {
            Increment::Transfer(k)
        }
    }

    /// Position in [`Increment::all`]: 0 for arrival, else the serving node.
    pub fn index(self, d: usize) -> usize {
        match self {
            Increment::Arrival => 0,
            Increment::Transfer(j) => j,
            Increment::Departure => d,
        }
    }

    /// The increment vector in x-coordinates.
    pub fn vector(self, d: usize) -> Vec<i64> {
        let mut v = vec![0; d];
        match self {
            Increment::Arrival => v[0] = 1,
            Increment::Transfer(j) => {
                v[j - 1] = -1;
                v[j] = 1;
            }
            Increment::Departure => v[d - 1] = -1,
        }
        v
    }
}

/// Point of the constrained walk X in `Z_+^d`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct StateX(pub Vec<i64>);

/// Point of `Z x Z_+^{d-1}`: Y in y-coordinates, or X̄ in x-coordinates.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct StateY(pub Vec<i64>);

/// X̄ lives on the same lattice as Y.
pub type XbarState = StateY;

impl StateX {
    pub fn new(x: Vec<i64>) -> Result<Self> {
        if x.is_empty() {
            return Err(Error::InvalidState("empty state".into()));
        }
        if let Some(i) = x.iter().position(|&v| v < 0) {
            return Err(Error::InvalidState(format!("x({}) = {} is negative", i + 1, x[i])));
        }
        Ok(StateX(x))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn sum(&self) -> i64 {
        sum_s(&self.0)
    }

    /// `T_n(x)`.
    pub fn to_y(&self, n: i64) -> StateY {
        StateY(affine_map_tn(n, &self.0))
    }
}

impl StateY {
    pub fn new(y: Vec<i64>) -> Result<Self> {
        if y.is_empty() {
            return Err(Error::InvalidState("empty state".into()));
        }
        if let Some(j) = y.iter().skip(1).position(|&v| v < 0) {
            return Err(Error::InvalidState(format!("y({}) = {} is negative", j + 2, y[j + 1])));
        }
        Ok(StateY(y))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    /// `T_n(y)`, which is a valid [`StateX`] when `y(1) <= n`.
    pub fn to_x(&self, n: i64) -> Result<StateX> {
        StateX::new(affine_map_tn(n, &self.0))
    }

    /// `y(1) - sum_{j>=2} y(j)`.
    pub fn excess(&self) -> i64 {
        excess(&self.0)
    }
}

impl fmt::Display for StateX {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write_tuple(f, &self.0)
    }
}

impl fmt::Display for StateY {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write_tuple(f, &self.0)
    }
}

fn write_tuple(f: &mut fmt::Formatter<'_>, v: &[i64]) -> fmt::Result {
    write!(f, "(")?;
    for (i, c) in v.iter().enumerate() {
        if i > 0 {
            write!(f, ",")?;
        }
        write!(f, "{c}")?;
    }
    write!(f, ")")
}

/// Parse `1,0,0,0` (parentheses and spaces tolerated).
pub fn parse_point(s: &str) -> Result<Vec<i64>> {
    let t = s.trim().trim_start_matches('(').trim_end_matches(')');
    t.split(',')
        .map(|c| c.trim().parse::<i64>().map_err(|_| Error::Parse(format!("bad coordinate {c:?} in {s:?}"))))
        .collect()
}

/// `T_n`: `y(1) = n - x(1)`, other coordinates unchanged. It is an involution.
pub fn affine_map_tn(n: i64, x: &[i64]) -> Vec<i64> {
    let mut y = x.to_vec();
    y[0] = n - x[0];
    y
}

/// `S(x) = sum_j x(j)`.
pub fn sum_s(x: &[i64]) -> i64 {
    x.iter().sum()
}

/// `y(1) - sum_{j>=2} y(j)`; nonnegative exactly on B.
pub fn excess(y: &[i64]) -> i64 {
    y[0] - y[1..].iter().sum::<i64>()
}

/// `y in dB`, i.e. `y(1) = sum_{j>=2} y(j)`.
pub fn in_boundary_b(y: &StateY) -> bool {
    excess(&y.0) == 0
}

/// `y in B`, i.e. `y(1) >= sum_{j>=2} y(j)`.
pub fn in_b(y: &StateY) -> bool {
    excess(&y.0) >= 0
}

/// Scaled-state membership in the region where the approximation guarantee degenerates.
pub fn in_region_rrho(params: &NetworkParams, x_scaled: &[f64]) -> bool {
    crate::bounds::RateRegion::new(params).contains_scaled(x_scaled)
}

/// X dynamics in place; returns whether the jump was feasible.
#[inline]
pub fn step_x_in_place(x: &mut [i64], inc: Increment) -> bool {
    let d = x.len();
    match inc {
        Increment::Arrival => {
            x[0] += 1;
            true
        }
        Increment::Transfer(j) => {
            if x[j - 1] > 0 {
                x[j - 1] -= 1;
                x[j] += 1;
                true
            } else {
                false
            }
        }
        Increment::Departure => {
            if x[d - 1] > 0 {
                x[d - 1] -= 1;
                true
            } else {
                false
            }
        }
    }
}

/// Y dynamics in place: the first coordinate of every increment is reflected and
/// left unconstrained.
#[inline]
pub fn step_y_in_place(y: &mut [i64], inc: Increment) -> bool {
    let d = y.len();
    match inc {
        Increment::Arrival => {
            y[0] -= 1;
            true
        }
        Increment::Transfer(1) => {
            y[0] += 1;
            y[1] += 1;
            true
        }
        Increment::Departure if d == 1 => {
            y[0] += 1;
            true
        }
        other => step_x_in_place(y, other),
    }
}

/// X̄ dynamics in place: as X but coordinate 1 may go negative.
#[inline]
pub fn step_xbar_in_place(x: &mut [i64], inc: Increment) -> bool {
    let d = x.len();
    match inc {
        Increment::Transfer(1) => {
            x[0] -= 1;
            x[1] += 1;
            true
        }
        Increment::Departure if d == 1 => {
            x[0] -= 1;
            true
        }
        other => step_x_in_place(x, other),
    }
}

pub fn step_x(x: &StateX, inc: Increment) -> StateX {
    let mut v = x.0.clone();
    step_x_in_place(&mut v, inc);
    StateX(v)
}

pub fn step_y(y: &StateY, inc: Increment) -> StateY {
    let mut v = y.0.clone();
    step_y_in_place(&mut v, inc);
    StateY(v)
}

pub fn step_xbar(x: &XbarState, inc: Increment) -> XbarState {
    let mut v = x.0.clone();
    step_xbar_in_place(&mut v, inc);
    StateY(v)
}
