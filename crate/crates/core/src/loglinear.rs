//! Log-linear atoms `[(β,α),y]`, characteristic polynomials and conjugate points.

use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::model::NetworkParams;
use crate::scalar::Scalar;

/// Subset of node labels `{1..31}` as a bitmask (bit `i` for label `i`).
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct Subset(pub u32);

impl Subset {
    pub const EMPTY: Subset = Subset(0);

    pub fn from_labels(labels: &[usize]) -> Subset {
        Subset(labels.iter().fold(0, |m, &l| m | (1u32 << l)))
    }

    /// `{lo..=hi}`.
    pub fn range(lo: usize, hi: usize) -> Subset {
        Subset((lo..=hi).fold(0, |m, l| m | (1u32 << l)))
    }

    pub fn contains(self, l: usize) -> bool {
        l < 32 && self.0 >> l & 1 == 1
    }

    pub fn with(self, l: usize) -> Subset {
        Subset(self.0 | 1 << l)
    }

    pub fn without(self, l: usize) -> Subset {
        Subset(self.0 & !(1 << l))
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn max(self) -> Option<usize> {
        (self.0 != 0).then(|| 31 - self.0.leading_zeros() as usize)
    }

    pub fn min(self) -> Option<usize> {
        (self.0 != 0).then(|| self.0.trailing_zeros() as usize)
    }

    /// Labels in ascending order.
    pub fn iter(self) -> impl Iterator<Item = usize> {
        let mut m = self.0;
        std::iter::from_fn(move || {
            if m == 0 {
                None
            } else {
                let l = m.trailing_zeros() as usize;
                m &= m - 1;
                Some(l)
            }
        })
    }

    pub fn labels(self) -> Vec<usize> {
        self.iter().collect()
    }

    pub fn union(self, o: Subset) -> Subset {
        Subset(self.0 | o.0)
    }

    pub fn minus(self, o: Subset) -> Subset {
        Subset(self.0 & !o.0)
    }
}

impl fmt::Debug for Subset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{")?;
        for (k, l) in self.iter().enumerate() {
            if k > 0 {
                write!(f, ",")?;
            }
            write!(f, "{l}")?;
        }
        write!(f, "}}")
    }
}

impl fmt::Display for Subset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

impl Serialize for Subset {
    fn serialize<Se: Serializer>(&self, s: Se) -> std::result::Result<Se::Ok, Se::Error> {
        self.labels().serialize(s)
    }
}

impl<'de> Deserialize<'de> for Subset {
    fn deserialize<De: Deserializer<'de>>(d: De) -> std::result::Result<Self, De::Error> {
        let labels = Vec::<usize>::deserialize(d)?;
        if let Some(&l) = labels.iter().find(|&&l| l >= 32) {
            return Err(serde::de::Error::custom(format!("label {l} out of range")));
        }
        Ok(Subset::from_labels(&labels))
    }
}

/// `(β, α)` with `α` indexed by labels `2..=d`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Point<S> {
    pub beta: S,
    /// `alpha[j - 2] = α(j)`.
    pub alpha: Vec<S>,
}

impl<S: Scalar> Point<S> {
    pub fn new(beta: S, alpha: Vec<S>) -> Self {
        Point { beta, alpha }
    }

    /// `β` together with `α ≡ 1`.
    pub fn flat(beta: S, d: usize) -> Self {
        Point { beta, alpha: vec![S::one(); d - 1] }
    }

    pub fn dim(&self) -> usize {
        self.alpha.len() + 1
    }

    /// `α(j)` for `2 <= j <= d + 1`, with `α(d+1) = β`.
    pub fn alpha(&self, j: usize) -> &S {
        if j == self.dim() + 1 {
            &self.beta
        } else {
            &self.alpha[j - 2]
        }
    }

    pub fn alpha_mut(&mut self, j: usize) -> &mut S {
        &mut self.alpha[j - 2]
    }

    fn check_nonzero(&self) -> Result<()> {
        if self.beta.is_zero() || self.alpha.iter().any(|a| a.is_zero()) {
            return Err(Error::DivisionByZero("beta and alpha entries must be nonzero".into()));
        }
        Ok(())
    }

    /// `[(β,α), y] = β^{y(1) - Σ_{j≥2} y(j)} Π_{j≥2} α(j)^{y(j)}`.
    pub fn atom(&self, y: &[i64]) -> S {
        let mut e1 = y[0];
        let mut v = S::one();
        for (a, &yj) in self.alpha.iter().zip(&y[1..]) {
            e1 -= yj;
            if yj != 0 {
                v = v * a.powi(yj);
            }
        }
        v * self.beta.powi(e1)
    }

    /// Atom of the reflected jump `v_{i,j} = I_1(-e_i + e_j)`, `e_0 = 0`.
    pub fn jump_atom(&self, i: usize, j: usize) -> S {
        let d = self.dim();
        let mut w = vec![0i64; d];
        if i > 0 {
            w[i - 1] -= 1;
        }
        if j > 0 {
            w[j - 1] += 1;
        }
        w[0] = -w[0];
        self.atom(&w)
    }
}

impl Point<f64> {
    /// `ln [(β,α), y]` for positive entries.
    pub fn log_atom(&self, y: &[i64]) -> f64 {
        let mut e1 = y[0];
        let mut s = 0.0;
        for (a, &yj) in self.alpha.iter().zip(&y[1..]) {
            e1 -= yj;
            if yj != 0 {
                s += yj as f64 * a.ln();
            }
        }
        s + e1 as f64 * self.beta.ln()
    }

    pub fn is_positive(&self) -> bool {
        self.beta > 0.0 && self.alpha.iter().all(|&a| a > 0.0)
    }
}

/// `c · [(β,α), y]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogLinearTerm<S> {
    pub c: S,
    pub point: Point<S>,
}

impl<S: Scalar> LogLinearTerm<S> {
    pub fn new(c: S, beta: S, alpha: Vec<S>) -> Self {
        LogLinearTerm { c, point: Point { beta, alpha } }
    }
}

/// Evaluate a term in the linear domain; float overflow is reported, not returned.
pub fn eval_term<S: Scalar>(t: &LogLinearTerm<S>, y: &[i64]) -> Result<S> {
    if t.point.dim() != y.len() {
        return Err(Error::Dimension { expected: t.point.dim(), got: y.len() });
    }
    t.point.check_nonzero()?;
    let v = t.c.clone() * t.point.atom(y);
    if !S::EXACT && !v.to_f64().is_finite() {
        return Err(Error::Overflow(format!("term at y={y:?}")));
    }
    Ok(v)
}

/// Log-domain evaluation: `(sign(c), ln |c · [(β,α),y]|)`; requires positive `β`, `α`.
pub fn eval_term_log(t: &LogLinearTerm<f64>, y: &[i64]) -> Result<(f64, f64)> {
    if !t.point.is_positive() {
        return Err(Error::InvalidParams("log-domain evaluation needs positive beta and alpha".into()));
    }
    Ok((t.c.signum(), t.c.abs().ln() + t.point.log_atom(y)))
}

/// Routing matrix `p(i,j)`, `i,j = 0..d`, where node 0 is the outside world.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JacksonRouting<S> {
    p: Vec<Vec<S>>,
}

impl<S: Scalar> JacksonRouting<S> {
    /// Validates shape, zero diagonal, nonnegativity and total mass one.
    pub fn new(p: Vec<Vec<S>>) -> Result<Self> {
        let n = p.len();
        if n < 2 {
            return Err(Error::InvalidParams("routing needs at least one node".into()));
        }
        for (i, row) in p.iter().enumerate() {
            if row.len() != n {
                return Err(Error::Dimension { expected: n, got: row.len() });
            }
            if !row[i].is_zero() {
                return Err(Error::InvalidParams(format!("p({i},{i}) must be zero")));
            }
            if row.iter().any(|v| v.is_negative()) {
                return Err(Error::InvalidParams(format!("row {i} has a negative entry")));
            }
        }
        let total = S::sum_all(p.iter().flatten().cloned());
        if !total.close(&S::one(), 1e-12) {
            return Err(Error::InvalidParams(format!(
                "routing probabilities sum to {}, not 1",
                total.to_f64()
            )));
        }
        Ok(JacksonRouting { p })
    }

    /// Tandem routing: `0 → 1 → 2 → … → d → 0`.
    pub fn tandem(params: &NetworkParams) -> Self {
        let (lambda, mu) = params.rates::<S>();
        let d = mu.len();
        let mut p = vec![vec![S::zero(); d + 1]; d + 1];
        p[0][1] = lambda;
        for j in 1..d {
            p[j][j + 1] = mu[j - 1].clone();
        }
        p[d][0] = mu[d - 1].clone();
        JacksonRouting { p }
    }

    pub fn dim(&self) -> usize {
        self.p.len() - 1
    }

    pub fn p(&self, i: usize, j: usize) -> &S {
        &self.p[i][j]
    }

    pub fn matrix(&self) -> &[Vec<S>] {
        &self.p
    }

    /// `μ_i = Σ_j p(i,j)`; `μ_0` is the arrival rate.
    pub fn mu(&self, i: usize) -> S {
        S::sum_all(self.p[i].iter().cloned())
    }

    /// Nonzero entries `(i, j, p(i,j))`.
    pub fn jumps(&self) -> impl Iterator<Item = (usize, usize, &S)> {
        self.p
            .iter()
            .enumerate()
            .flat_map(|(i, row)| row.iter().enumerate().map(move |(j, v)| (i, j, v)))
            .filter(|(_, _, v)| !v.is_zero())
    }
}

/// `p_a(β,α) = Σ_{i∉a, j} p(i,j)[(β,α), v_{i,j}] + Σ_{i∈a} μ_i` with `a ⊂ {2..d}`.
pub fn char_poly_general<S: Scalar>(routing: &JacksonRouting<S>, a: Subset, point: &Point<S>) -> Result<S> {
    point.check_nonzero()?;
    check_dims(routing.dim(), point.dim())?;
    let terms = routing.jumps().map(|(i, j, p)| {
        if a.contains(i) {
            p.clone()
        } else {
            p.clone() * point.jump_atom(i, j)
        }
    });
    Ok(S::sum_all(terms))
}

/// `C(i,β,α) = μ_i − Σ_j p(i,j)[(β,α), v_{i,j}]`.
pub fn c_general<S: Scalar>(routing: &JacksonRouting<S>, i: usize, point: &Point<S>) -> Result<S> {
    point.check_nonzero()?;
    check_dims(routing.dim(), point.dim())?;
    let s = S::sum_all(
        routing.p[i]
            .iter()
            .enumerate()
            .filter(|(_, p)| !p.is_zero())
            .map(|(j, p)| p.clone() * point.jump_atom(i, j)),
    );
    Ok(routing.mu(i) - s)
}

/// Tandem characteristic polynomial `λ/β + μ_1 α(2) + Σ_{j=2}^d μ_j α(j+1)/α(j)`.
pub fn char_poly_tandem<S: Scalar>(params: &NetworkParams, point: &Point<S>) -> Result<S> {
    let (lambda, mu) = params.rates::<S>();
    char_poly_tandem_rates(&lambda, &mu, point)
}

pub(crate) fn char_poly_tandem_rates<S: Scalar>(lambda: &S, mu: &[S], point: &Point<S>) -> Result<S> {
    point.check_nonzero()?;
    check_dims(mu.len(), point.dim())?;
    let d = mu.len();
    let mut terms = Vec::with_capacity(d + 1);
    terms.push(lambda.clone() / point.beta.clone());
    terms.push(mu[0].clone() * point.alpha(2).clone());
    for j in 2..=d {
        terms.push(mu[j - 1].clone() * point.alpha(j + 1).clone() / point.alpha(j).clone());
    }
    Ok(S::sum_all(terms))
}

/// Tandem `C(j,β,α) = μ_j (1 − α(j+1)/α(j))` for `2 <= j <= d`.
pub fn c_tandem<S: Scalar>(params: &NetworkParams, j: usize, point: &Point<S>) -> Result<S> {
    let d = params.dim();
    check_dims(d, point.dim())?;
    if !(2..=d).contains(&j) {
        return Err(Error::InvalidParams(format!("boundary label {j} outside 2..={d}")));
    }
    point.check_nonzero()?;
    let mu = S::from_ratio(params.mu_exact(j));
    Ok(mu * (S::one() - point.alpha(j + 1).clone() / point.alpha(j).clone()))
}

/// Coefficients `(A, B, C)` of `p(β,α) = A α(i) + B + C / α(i)` in the variable `α(i)`.
pub fn conjugate_quadratic<S: Scalar>(routing: &JacksonRouting<S>, point: &Point<S>, i: usize) -> Result<(S, S, S)> {
    let d = routing.dim();
    check_dims(d, point.dim())?;
    if !(2..=d).contains(&i) {
        return Err(Error::InvalidParams(format!("conjugacy label {i} outside 2..={d}")));
    }
    let mut base = point.clone();
    *base.alpha_mut(i) = S::one();
    base.check_nonzero()?;
    let (mut a, mut b, mut c) = (Vec::new(), Vec::new(), Vec::new());
    for (k, l, p) in routing.jumps() {
        let t = p.clone() * base.jump_atom(k, l);
        // exponent of α(i) in the atom of v_{k,l} is the i-th coordinate of −e_k + e_l
        let e = (l == i) as i32 - (k == i) as i32;
        match e {
            1 => a.push(t),
            -1 => c.push(t),
            _ => b.push(t),
        }
    }
    Ok((S::sum_all(a), S::sum_all(b), S::sum_all(c)))
}

/// Product of the two `α(i)` roots: `C/A`.
pub fn conjugate_product<S: Scalar>(routing: &JacksonRouting<S>, point: &Point<S>, i: usize) -> Result<S> {
    let (a, _, c) = conjugate_quadratic(routing, point, i)?;
    if a.is_zero() {
        return Err(Error::Degenerate(format!("no jump into node {i}")));
    }
    Ok(c / a)
}

/// The two real roots `α(i)` (ascending) of `A α² + (B − 1) α + C = 0`; other
/// coordinates of `base` are kept.
pub fn conjugate_point(routing: &JacksonRouting<f64>, base: &Point<f64>, i: usize) -> Result<(f64, f64)> {
    let (a, b, c) = conjugate_quadratic(routing, base, i)?;
    if a == 0.0 {
        return Err(Error::Degenerate(format!("leading coefficient vanishes for label {i}")));
    }
    let bm = b - 1.0;
    let disc = bm * bm - 4.0 * a * c;
    if disc < 0.0 {
        return Err(Error::ComplexRoots(disc));
    }
    let q = -0.5 * (bm + bm.signum() * disc.sqrt());
    if q == 0.0 {
        return Ok((0.0, 0.0));
    }
    let (r1, r2) = (q / a, c / q);
    Ok(if r1 <= r2 { (r1, r2) } else { (r2, r1) })
}

fn check_dims(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::Dimension { expected, got });
    }
    Ok(())
}
