//! The graphs `G_{d,D}`, their explicit harmonic solutions, the functions `h*_d`
//! and the closed form for `P_y(τ < ∞)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::loglinear::{Point, Subset};
use crate::model::{excess, NetworkParams, StateX};
use crate::scalar::Scalar;
use crate::systems::{HarmonicSolution, LabeledGraph};

/// Vertices `a ∪ {d}`, `a ⊂ {1..d-1}`, in increasing bitmask order of `a`.
pub fn vertex_sets(d: usize) -> Vec<Subset> {
    (0u32..1 << (d - 1)).map(|m| Subset(m << 1).with(d)).collect()
}

/// `G_{d,D}`: a `j`-edge joins `V` and `V ∪ {j-1}` when `j ∈ V`, `j >= 2`, `j-1 ∉ V`;
/// every other label of `{2..D}` is a loop.
pub fn build_g(d: usize, big_d: usize) -> LabeledGraph {
    assert!(1 <= d && d <= big_d && big_d < 32, "need 1 <= d <= D < 32");
    let vertices = vertex_sets(d);
    let index = |s: Subset| ((s.0 >> 1) & ((1 << (d - 1)) - 1)) as usize;
    let mut edges = Vec::new();
    let mut loops = Vec::with_capacity(vertices.len());
    let all = if big_d >= 2 { Subset::range(2, big_d) } else { Subset::EMPTY };
    for (u, &v) in vertices.iter().enumerate() {
        for j in v.iter().filter(|&j| j >= 2) {
            if !v.contains(j - 1) {
                edges.push((u, index(v.with(j - 1)), j));
            }
        }
        loops.push(all.minus(v));
    }
    LabeledGraph { vertices, edges, loops }
}

/// One block of the partition of `V_{G_{D,D}}` by second-largest element.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmbeddingPart {
    /// `None` for the lone vertex `{D}`.
    pub k: Option<usize>,
    pub vertices: Vec<Subset>,
}

/// Split `V_{G_{D,D}}` into `{D}` and the copies `G^k`, `k = 1..D-1`, of vertices
/// whose second-largest element is `k`.
pub fn decompose_embedding(big_d: usize) -> Vec<EmbeddingPart> {
    assert!(big_d >= 2);
    let mut parts = vec![EmbeddingPart { k: None, vertices: vec![] }];
    parts.extend((1..big_d).map(|k| EmbeddingPart { k: Some(k), vertices: vec![] }));
    for v in vertex_sets(big_d) {
        match v.without(big_d).max() {
            None => parts[0].vertices.push(v),
            Some(k) => parts[k].vertices.push(v),
        }
    }
    parts
}

/// `c*_a = (−1)^{|a|−1} Π_j Π_{l=a(j)+1}^{a(j+1)} (μ_l − λ)/(μ_l − μ_{a(j)})`.
pub fn cstar<S: Scalar>(a: Subset, lambda: &S, mu: &[S]) -> Result<S> {
    let labels = a.labels();
    if labels.is_empty() {
        return Err(Error::InvalidParams("c* needs a nonempty subset".into()));
    }
    let mut c = if labels.len() % 2 == 1 { S::one() } else { -S::one() };
    for w in labels.windows(2) {
        c = c * ratio_product(w[0], w[1], lambda, mu)?;
    }
    Ok(c)
}

/// `Π_{l=a+1}^{b} (μ_l − λ)/(μ_l − μ_a)`.
pub fn ratio_product<S: Scalar>(a: usize, b: usize, lambda: &S, mu: &[S]) -> Result<S> {
    let mut r = S::one();
    for l in a + 1..=b {
        let den = mu[l - 1].clone() - mu[a - 1].clone();
        if den.is_zero() {
            return Err(Error::EqualRates { i: a, j: l });
        }
        r = r * (mu[l - 1].clone() - lambda.clone()) / den;
    }
    Ok(r)
}

/// `α*_a` over labels `2..=D`: 1 up to `a(1)`, `ρ_{a(j)}` on `(a(j), a(j+1)]`,
/// `ρ_{max a}` beyond.
pub fn alphastar<S: Scalar>(a: Subset, rho: &[S], big_d: usize) -> Vec<S> {
    let labels = a.labels();
    (2..=big_d)
        .map(|l| match labels.iter().rev().find(|&&v| v < l) {
            None => S::one(),
            Some(&v) => rho[v - 1].clone(),
        })
        .collect()
}

/// `β*_a = ρ_{max a}`.
pub fn betastar<S: Scalar>(a: Subset, rho: &[S]) -> S {
    rho[a.max().expect("nonempty subset") - 1].clone()
}

/// `w_d = Π_{l=d+1}^{D} (μ_l − λ)/(μ_l − μ_d)`.
pub fn outer_weight<S: Scalar>(d: usize, lambda: &S, mu: &[S]) -> Result<S> {
    ratio_product(d, mu.len(), lambda, mu)
}

fn rhos<S: Scalar>(lambda: &S, mu: &[S]) -> Vec<S> {
    mu.iter().map(|m| lambda.clone() / m.clone()).collect()
}

/// `(G_{d,D}, (c*, α*, β*))` for the tandem network `params` of dimension `D`.
pub fn tandem_system<S: Scalar>(params: &NetworkParams, d: usize) -> Result<(LabeledGraph, HarmonicSolution<S>)> {
    let big_d = params.dim();
    if d == 0 || d > big_d {
        return Err(Error::Dimension { expected: big_d, got: d });
    }
    let (lambda, mu) = params.rates::<S>();
    let rho = rhos(&lambda, &mu);
    let g = build_g(d, big_d);
    let c = g.vertices.iter().map(|&v| cstar(v, &lambda, &mu)).collect::<Result<Vec<_>>>()?;
    let alpha = g.vertices.iter().map(|&v| alphastar(v, &rho, big_d)).collect();
    let sol = HarmonicSolution { beta: rho[d - 1].clone(), alpha, c };
    Ok((g, sol))
}

/// One summand of the closed form.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TermRow<S> {
    pub d: usize,
    pub subset: Subset,
    /// `w_d · c*_V`, so that `term = c · [(β, α), y]`.
    pub c: S,
    pub beta: S,
    pub alpha: Vec<S>,
    pub term: S,
}

/// Precomputed summands of `Σ_d w_d h*_d`.
#[derive(Clone, Debug)]
pub struct TandemFormula<S> {
    dim: usize,
    /// `(d, subset, w_d c*, point)` grouped by `d`, subsets in Gray-code order.
    terms: Vec<(usize, Subset, S, Point<S>)>,
    /// Index range of each `d` in `terms`.
    ranges: Vec<std::ops::Range<usize>>,
}

impl<S: Scalar> TandemFormula<S> {
    /// Requires pairwise distinct service rates.
    pub fn new(params: &NetworkParams) -> Result<Self> {
        params.check_distinct()?;
        let big_d = params.dim();
        let (lambda, mu) = params.rates::<S>();
        let rho = rhos(&lambda, &mu);
        let mut terms = Vec::with_capacity((1usize << big_d) - 1);
        let mut ranges = Vec::with_capacity(big_d);
        for d in 1..=big_d {
            let start = terms.len();
            let w = outer_weight(d, &lambda, &mu)?;
            for k in 0u32..1 << (d - 1) {
                let gray = k ^ (k >> 1);
                let v = Subset(gray << 1).with(d);
                let c = w.clone() * cstar(v, &lambda, &mu)?;
                let pt = Point::new(rho[d - 1].clone(), alphastar(v, &rho, big_d));
                terms.push((d, v, c, pt));
            }
            ranges.push(start..terms.len());
        }
        Ok(TandemFormula { dim: big_d, terms, ranges })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn term_count(&self) -> usize {
        self.terms.len()
    }

    fn check(&self, y: &[i64]) -> Result<()> {
        if y.len() != self.dim {
            return Err(Error::Dimension { expected: self.dim, got: y.len() });
        }
        if y[1..].iter().any(|&v| v < 0) {
            return Err(Error::InvalidState(format!("{y:?} has a negative coordinate beyond the first")));
        }
        if excess(y) < 0 {
            return Err(Error::InvalidState(format!("{y:?} is not in B")));
        }
        Ok(())
    }

    /// `w_d h*_d(y)`, the contribution of one `d` to the closed form.
    pub fn weighted_hstar(&self, d: usize, y: &[i64]) -> S {
        let r = self.ranges[d - 1].clone();
        S::sum_all(self.terms[r].iter().map(|(_, _, c, pt)| c.clone() * pt.atom(y)))
    }

    /// `P_y(τ < ∞)` for `y ∈ B`.
    pub fn eval(&self, y: &[i64]) -> Result<S> {
        self.check(y)?;
        Ok(self.eval_unchecked(y))
    }

    /// Evaluation without the `y ∈ B` check; the sum is still harmonic off `B`.
    pub fn eval_unchecked(&self, y: &[i64]) -> S {
        S::sum_all(self.terms.iter().map(|(_, _, c, pt)| c.clone() * pt.atom(y)))
    }

    /// Every summand at `y`.
    pub fn breakdown(&self, y: &[i64]) -> Result<Vec<TermRow<S>>> {
        self.check(y)?;
        Ok(self
            .terms
            .iter()
            .map(|(d, v, c, pt)| TermRow {
                d: *d,
                subset: *v,
                c: c.clone(),
                beta: pt.beta.clone(),
                alpha: pt.alpha.clone(),
                term: c.clone() * pt.atom(y),
            })
            .collect())
    }
}

/// `h*_d(y) = Σ_{a ⊂ {1..d-1}} c*_{a∪{d}} [(ρ_d, α*_{a∪{d}}), y]`.
pub fn eval_hstar<S: Scalar>(d: usize, params: &NetworkParams, y: &[i64]) -> Result<S> {
    let big_d = params.dim();
    if d == 0 || d > big_d {
        return Err(Error::Dimension { expected: big_d, got: d });
    }
    if y.len() != big_d {
        return Err(Error::Dimension { expected: big_d, got: y.len() });
    }
    let (lambda, mu) = params.rates::<S>();
    let rho = rhos(&lambda, &mu);
    let mut terms = Vec::with_capacity(1 << (d - 1));
    for k in 0u32..1 << (d - 1) {
        let v = Subset((k ^ (k >> 1)) << 1).with(d);
        let pt = Point::new(rho[d - 1].clone(), alphastar(v, &rho, big_d));
        terms.push(cstar(v, &lambda, &mu)? * pt.atom(y));
    }
    Ok(S::sum_all(terms))
}

/// `P_y(τ < ∞) = Σ_{d=1}^{D} w_d h*_d(y)` for `y ∈ B`.
pub fn prob_tau_finite<S: Scalar>(params: &NetworkParams, y: &[i64]) -> Result<S> {
    TandemFormula::<S>::new(params)?.eval(y)
}

/// The approximation `P_{T_n(x)}(τ < ∞)` of `P_x(τ_n < τ_0)`.
pub fn approx_prob_x<S: Scalar>(params: &NetworkParams, n: i64, x: &StateX) -> Result<S> {
    if x.sum() > n {
        return Err(Error::InvalidState(format!("S({x}) = {} exceeds n = {n}", x.sum())));
    }
    prob_tau_finite(params, &x.to_y(n).0)
}

/// Two-node closed form
/// `ρ_2^{y1−y2} − K ρ_2^{y1−y2} ρ_1^{y2} + K ρ_1^{y1}`, `K = (μ_2−λ)/(μ_2−μ_1)`.
pub fn prob_tau_finite_d2<S: Scalar>(params: &NetworkParams, y: &[i64]) -> Result<S> {
    if params.dim() != 2 || y.len() != 2 {
        return Err(Error::Dimension { expected: 2, got: params.dim() });
    }
    params.check_distinct()?;
    let (lambda, mu) = params.rates::<S>();
    let r1 = lambda.clone() / mu[0].clone();
    let r2 = lambda.clone() / mu[1].clone();
    let k = (mu[1].clone() - lambda) / (mu[1].clone() - mu[0].clone());
    let a = r2.powi(y[0] - y[1]);
    Ok(S::sum_all([a.clone(), -(k.clone() * a * r1.powi(y[1])), k * r1.powi(y[0])]))
}

/// Limit of the closed form for `d = 3` and `μ_1 = μ_2 = μ_3 = μ`:
/// `ρ^{ȳ}(½c²ȳ²ρ^{y2+y3} + ρ^{y3}((c²/2 + y3 c²)ρ^{y2} + c)ȳ + 1)`, `c = (μ−λ)/μ`,
/// `ȳ = y1 − y2 − y3`.
pub fn prob_tau_finite_equal_rates_d3<S: Scalar>(lambda: &S, mu: &[S], y: &[i64]) -> Result<S> {
    if mu.len() != 3 || y.len() != 3 {
        return Err(Error::Dimension { expected: 3, got: mu.len() });
    }
    if mu[0] != mu[1] || mu[1] != mu[2] {
        return Err(Error::InvalidParams("equal-rates formula needs mu_1 = mu_2 = mu_3".into()));
    }
    if y[1] < 0 || y[2] < 0 || excess(y) < 0 {
        return Err(Error::InvalidState(format!("{y:?} is not in B")));
    }
    let m = mu[0].clone();
    if lambda >= &m {
        return Err(Error::InvalidParams("unstable: lambda >= mu".into()));
    }
    let rho = lambda.clone() / m.clone();
    let c = (m.clone() - lambda.clone()) / m;
    let c2 = c.clone() * c.clone();
    let yb = S::from_i64(excess(y));
    let half = S::one() / S::from_i64(2);
    let inner = S::sum_all([
        half.clone() * c2.clone() * yb.clone() * yb.clone() * rho.powi(y[1] + y[2]),
        rho.powi(y[2]) * ((half * c2.clone() + S::from_i64(y[2]) * c2) * rho.powi(y[1]) + c) * yb,
        S::one(),
    ]);
    Ok(rho.powi(excess(y)) * inner)
}

/// `O(D²)` evaluation of the closed form for repeated use, e.g. inside a sampler.
///
/// With `K(a,b) = Π_{l=a+1}^{b} (μ_l−λ)/(μ_l−μ_a) · ρ_a^{Σ_{l=a+1}^{b} y(l)}`, the
/// alternating sum over chains `v_1 < … < v_k = d` collapses to
/// `T(b) = 1 − Σ_{a<b} T(a) K(a,b)` and `h*_d(y) = ρ_d^{y(1) − Σ_{j=2}^{d} y(j)} T(d)`.
#[derive(Clone, Debug)]
pub struct FastFormula {
    dim: usize,
    rho: Vec<f64>,
    /// `ratio[a][b]` for `1 <= a < b <= D`, 0-based.
    ratio: Vec<Vec<f64>>,
    weight: Vec<f64>,
    /// `pow[a][k] = ρ_a^k` for `k <= max_power`.
    pow: Vec<Vec<f64>>,
}

impl FastFormula {
    /// Powers up to `max_power` are tabulated; larger exponents fall back to `powi`.
    pub fn new(params: &NetworkParams, max_power: usize) -> Result<Self> {
        params.check_distinct()?;
        let big_d = params.dim();
        let (lambda, mu) = params.rates::<f64>();
        let rho = rhos(&lambda, &mu);
        let mut ratio = vec![vec![0.0; big_d]; big_d];
        for a in 0..big_d {
            let mut r = 1.0;
            for b in a + 1..big_d {
                r *= (mu[b] - lambda) / (mu[b] - mu[a]);
                ratio[a][b] = r;
            }
        }
        let weight = (1..=big_d).map(|d| outer_weight(d, &lambda, &mu)).collect::<Result<Vec<_>>>()?;
        let pow = rho
            .iter()
            .map(|&r| {
                let mut v = Vec::with_capacity(max_power + 1);
                let mut p = 1.0;
                for _ in 0..=max_power {
                    v.push(p);
                    p *= r;
                }
                v
            })
            .collect();
        Ok(FastFormula { dim: big_d, rho, ratio, weight, pow })
    }

    #[inline]
    fn power(&self, a: usize, k: i64) -> f64 {
        match self.pow[a].get(k as usize) {
            Some(&v) if k >= 0 => v,
            _ => self.rho[a].powi(k as i32),
        }
    }

    /// Closed form at `y` (no membership check).
    pub fn eval(&self, y: &[i64]) -> f64 {
        let big_d = self.dim;
        let mut t = [0.0f64; 32];
        let mut total = crate::scalar::NeumaierSum::default();
        let mut tail = 0i64;
        for b in 0..big_d {
            let mut acc = crate::scalar::NeumaierSum::default();
            acc.add(1.0);
            // cumulative Σ_{l=a+1}^{b} y(l) for a descending
            let mut seg = 0i64;
            for a in (0..b).rev() {
                seg += y[a + 1];
                acc.add(-t[a] * self.ratio[a][b] * self.power(a, seg));
            }
            t[b] = acc.total();
            if b >= 1 {
                tail += y[b];
            }
            total.add(self.weight[b] * self.power(b, y[0] - tail) * t[b]);
        }
        total.total()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_rational::BigRational;

    fn q(p: i64, d: i64) -> BigRational {
        BigRational::new(p.into(), d.into())
    }

    fn sym8() -> (BigRational, Vec<BigRational>) {
        let p = NetworkParams::from_weights(1, &[3, 5, 7, 9, 4, 6, 8, 10]).unwrap();
        p.rates()
    }

    #[test]
    fn g11_and_g44() {
        let g = build_g(1, 1);
        assert_eq!(g.vertices, vec![Subset::from_labels(&[1])]);
        assert!(g.edges.is_empty() && g.loops[0].is_empty());
        let g = build_g(4, 4);
        assert_eq!(g.len(), 8);
        let es = g.edge_set();
        assert!(es.contains(&(Subset::from_labels(&[4]), Subset::from_labels(&[3, 4]), 4)));
        let v4 = g.index_of(Subset::from_labels(&[4])).unwrap();
        assert!(g.loops[v4].contains(2) && g.loops[v4].contains(3));
        g.check_regular(Subset::range(2, 4)).unwrap();
    }

    #[test]
    fn embedding_d4() {
        let parts = decompose_embedding(4);
        let sets: Vec<Vec<Vec<usize>>> = parts.iter().map(|p| p.vertices.iter().map(|v| v.labels()).collect()).collect();
        assert_eq!(sets[0], vec![vec![4]]);
        assert_eq!(sets[1], vec![vec![1, 4]]);
        assert_eq!(sets[2], vec![vec![2, 4], vec![1, 2, 4]]);
        assert_eq!(sets[3], vec![vec![3, 4], vec![1, 3, 4], vec![2, 3, 4], vec![1, 2, 3, 4]]);
    }

    #[test]
    fn worked_d8_coefficients() {
        let (l, mu) = sym8();
        let m = |i: usize| mu[i - 1].clone();
        assert_eq!(cstar(Subset::from_labels(&[5]), &l, &mu).unwrap(), q(1, 1));
        let want36 = -((m(4) - l.clone()) * (m(5) - l.clone()) * (m(6) - l.clone()))
            / ((m(4) - m(3)) * (m(5) - m(3)) * (m(6) - m(3)));
        assert_eq!(cstar(Subset::from_labels(&[3, 6]), &l, &mu).unwrap(), want36);
        let want357 = (m(4) - l.clone()) * (m(5) - l.clone()) / ((m(4) - m(3)) * (m(5) - m(3)))
            * (m(6) - l.clone())
            * (m(7) - l.clone())
            / ((m(6) - m(5)) * (m(7) - m(5)));
        assert_eq!(cstar(Subset::from_labels(&[3, 5, 7]), &l, &mu).unwrap(), want357);
    }

    #[test]
    fn worked_d8_alphas() {
        let (l, mu) = sym8();
        let rho: Vec<BigRational> = mu.iter().map(|m| l.clone() / m).collect();
        let r = |i: usize| rho[i - 1].clone();
        let one = q(1, 1);
        assert_eq!(
            alphastar(Subset::from_labels(&[5]), &rho, 8),
            vec![one.clone(), one.clone(), one.clone(), one.clone(), r(5), r(5), r(5)]
        );
        assert_eq!(
            alphastar(Subset::from_labels(&[3, 5, 7]), &rho, 8),
            vec![one.clone(), one.clone(), r(3), r(3), r(5), r(5), r(7)]
        );
        assert_eq!(alphastar(Subset::from_labels(&[8]), &rho, 8), vec![one; 7]);
        assert_eq!(betastar(Subset::from_labels(&[8]), &rho), r(8));
    }

    #[test]
    fn hstar_d1_is_rho_power() {
        let p = NetworkParams::from_weights(1, &[3, 7, 2]).unwrap();
        let y = [7i64, 2, 1];
        let h: BigRational = eval_hstar(1, &p, &y).unwrap();
        assert_eq!(h, p.rho_exact(1).powi(7));
    }

    #[test]
    fn fast_matches_explicit() {
        let p = NetworkParams::from_weights(1, &[3, 7, 2, 5]).unwrap();
        let f = TandemFormula::<BigRational>::new(&p).unwrap();
        let fast = FastFormula::new(&p, 80).unwrap();
        for y in [[59i64, 0, 0, 0], [30, 3, 0, 5], [12, 1, 2, 3], [4, 4, 0, 0], [100, 9, 9, 9]] {
            let want = f.eval(&y).unwrap().to_f64();
            let got = fast.eval(&y);
            assert!(((got - want) / want).abs() < 1e-12, "{y:?}: {got} vs {want}");
        }
    }

    #[test]
    fn equal_rates_is_one_on_boundary() {
        let (l, mu) = (q(1, 10), vec![q(3, 10); 3]);
        assert_eq!(prob_tau_finite_equal_rates_d3(&l, &mu, &[5, 2, 3]).unwrap(), q(1, 1));
        assert!(prob_tau_finite_equal_rates_d3(&l, &[q(3, 10), q(3, 10), q(2, 10)], &[5, 2, 3]).is_err());
    }

    #[test]
    fn term_count_is_two_to_d_minus_one() {
        let p = NetworkParams::from_weights(1, &[3, 7, 2, 5, 11, 13]).unwrap();
        assert_eq!(TandemFormula::<f64>::new(&p).unwrap().term_count(), 63);
    }
}
