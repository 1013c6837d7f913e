//! Labeled regular graphs, harmonic systems and their verification, and simple
//! extensions of routing matrices.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::loglinear::{char_poly_general, c_general, conjugate_product, JacksonRouting, Point, Subset};
use crate::scalar::Scalar;

/// Graph over subset-labelled vertices whose edges and loops carry node labels.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawGraph", into = "RawGraph")]
pub struct LabeledGraph {
    pub vertices: Vec<Subset>,
    /// `(u, v, label)` with `u != v`, each undirected edge listed once.
    pub edges: Vec<(usize, usize, usize)>,
    /// Loop labels per vertex.
    pub loops: Vec<Subset>,
}

#[derive(Serialize, Deserialize)]
struct RawGraph {
    vertices: Vec<Subset>,
    edges: Vec<(usize, usize, usize)>,
    loops: BTreeMap<String, Vec<usize>>,
}

impl TryFrom<RawGraph> for LabeledGraph {
    type Error = Error;

    fn try_from(raw: RawGraph) -> Result<Self> {
        let mut loops = vec![Subset::EMPTY; raw.vertices.len()];
        for (k, labels) in raw.loops {
            let v: usize = k.parse().map_err(|_| Error::Parse(format!("bad vertex key {k:?}")))?;
            let slot = loops.get_mut(v).ok_or_else(|| Error::Parse(format!("loop on unknown vertex {v}")))?;
            *slot = Subset::from_labels(&labels);
        }
        Ok(LabeledGraph { vertices: raw.vertices, edges: raw.edges, loops })
    }
}

impl From<LabeledGraph> for RawGraph {
    fn from(g: LabeledGraph) -> Self {
        let loops = g
            .loops
            .iter()
            .enumerate()
            .filter(|(_, l)| !l.is_empty())
            .map(|(v, l)| (v.to_string(), l.labels()))
            .collect();
        RawGraph { vertices: g.vertices, edges: g.edges, loops }
    }
}

/// What a vertex sees along one label.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Incidence {
    Edge(usize),
    Loop,
}

impl LabeledGraph {
    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    pub fn index_of(&self, v: Subset) -> Option<usize> {
        self.vertices.iter().position(|&w| w == v)
    }

    /// Every label on some edge or loop.
    pub fn labels(&self) -> Subset {
        let e = self.edges.iter().fold(Subset::EMPTY, |s, &(_, _, l)| s.with(l));
        self.loops.iter().fold(e, |s, &l| s.union(l))
    }

    /// Checks that every vertex has exactly one incidence per label in `labels`
    /// and no other incidences.
    pub fn check_regular(&self, labels: Subset) -> Result<()> {
        let n = self.len();
        if self.loops.len() != n {
            return Err(Error::NotRegular(format!("{} loop sets for {n} vertices", self.loops.len())));
        }
        for i in 0..n {
            if self.vertices[i + 1..].contains(&self.vertices[i]) {
                return Err(Error::NotRegular(format!("duplicate vertex {}", self.vertices[i])));
            }
        }
        let mut seen = self.loops.clone();
        for &(u, v, l) in &self.edges {
            if u >= n || v >= n {
                return Err(Error::NotRegular(format!("edge ({u},{v}) references a missing vertex")));
            }
            if u == v {
                return Err(Error::NotRegular(format!("edge ({u},{u}) must be a loop")));
            }
            for w in [u, v] {
                if seen[w].contains(l) {
                    return Err(Error::NotRegular(format!(
                        "vertex {} has two {l}-incidences",
                        self.vertices[w]
                    )));
                }
                seen[w] = seen[w].with(l);
            }
        }
        for (w, s) in seen.iter().enumerate() {
            if *s != labels {
                return Err(Error::NotRegular(format!(
                    "vertex {} has labels {s}, expected {labels}",
                    self.vertices[w]
                )));
            }
        }
        Ok(())
    }

    /// `incidences()[v]` maps each label to the edge partner or a loop.
    pub fn incidences(&self) -> Vec<BTreeMap<usize, Incidence>> {
        let mut inc: Vec<BTreeMap<usize, Incidence>> = self
            .loops
            .iter()
            .map(|s| s.iter().map(|l| (l, Incidence::Loop)).collect())
            .collect();
        for &(u, v, l) in &self.edges {
            inc[u].insert(l, Incidence::Edge(v));
            inc[v].insert(l, Incidence::Edge(u));
        }
        inc
    }

    /// Edges as a sorted set of `(min, max, label)` in vertex-subset terms.
    pub fn edge_set(&self) -> Vec<(Subset, Subset, usize)> {
        let mut e: Vec<_> = self
            .edges
            .iter()
            .map(|&(u, v, l)| {
                let (a, b) = (self.vertices[u], self.vertices[v]);
                (std::cmp::min(a, b), std::cmp::max(a, b), l)
            })
            .collect();
        e.sort();
        e
    }
}

/// Add an `l`-loop at every vertex for each label of `new_labels` not yet used.
pub fn extend_graph(g: &LabeledGraph, new_labels: Subset) -> Result<LabeledGraph> {
    let old = g.labels();
    if old.minus(new_labels) != Subset::EMPTY {
        return Err(Error::InvalidParams(format!("label set {new_labels} does not contain {old}")));
    }
    let extra = new_labels.minus(old);
    let mut out = g.clone();
    for l in out.loops.iter_mut() {
        *l = l.union(extra);
    }
    Ok(out)
}

/// Per-vertex surface points sharing `β`, with nonzero coefficients.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HarmonicSolution<S> {
    pub beta: S,
    /// `alpha[v][j - 2] = α_v(j)`.
    pub alpha: Vec<Vec<S>>,
    pub c: Vec<S>,
}

impl<S: Scalar> HarmonicSolution<S> {
    pub fn point(&self, v: usize) -> Point<S> {
        Point::new(self.beta.clone(), self.alpha[v].clone())
    }

    pub fn len(&self) -> usize {
        self.c.len()
    }

    pub fn is_empty(&self) -> bool {
        self.c.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.alpha.first().map_or(1, |a| a.len() + 1)
    }
}

/// `h_G(y) = Σ_v c_v [(β, α_v), y]`.
pub fn eval_hg<S: Scalar>(sol: &HarmonicSolution<S>, y: &[i64]) -> S {
    S::sum_all((0..sol.len()).map(|v| sol.c[v].clone() * sol.point(v).atom(y)))
}

/// One of the five conditions of a harmonic system.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ConditionReport {
    pub condition: u8,
    pub name: String,
    pub passed: bool,
    /// Worst residual, or for distinctness the smallest coordinate gap.
    pub worst: Option<f64>,
    pub failures: usize,
    pub witness: Option<String>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct VerificationReport {
    pub exact: bool,
    pub tol: f64,
    pub conditions: Vec<ConditionReport>,
}

impl VerificationReport {
    pub fn passed(&self) -> bool {
        self.conditions.iter().all(|c| c.passed)
    }

    pub fn condition(&self, k: u8) -> &ConditionReport {
        &self.conditions[k as usize - 1]
    }
}

struct Tracker {
    report: ConditionReport,
    exact: bool,
    tol: f64,
}

impl Tracker {
    fn new(condition: u8, name: &str, exact: bool, tol: f64) -> Self {
        Tracker {
            report: ConditionReport {
                condition,
                name: name.into(),
                passed: true,
                worst: None,
                failures: 0,
                witness: None,
            },
            exact,
            tol,
        }
    }

    fn residual<S: Scalar>(&mut self, r: S, witness: impl FnOnce() -> String) {
        let ok = if self.exact { r.is_zero() } else { r.to_f64() <= self.tol };
        self.observe(r.to_f64(), ok, true, witness);
    }

    fn observe(&mut self, v: f64, ok: bool, larger_is_worse: bool, witness: impl FnOnce() -> String) {
        let worse = match self.report.worst {
            None => true,
            Some(w) => v.is_nan() || if larger_is_worse { v > w } else { v < w },
        };
        if worse {
            self.report.worst = Some(v);
        }
        if !ok {
            self.report.failures += 1;
            if self.report.passed {
                self.report.passed = false;
                self.report.witness = Some(witness());
            }
        } else if worse && self.report.passed {
            self.report.witness = Some(witness());
        }
    }

    fn fail(&mut self, witness: String) {
        self.report.failures += 1;
        if self.report.passed {
            self.report.passed = false;
            self.report.witness = Some(witness);
        }
    }
}

/// Check the five defining conditions of a harmonic system for `routing` on `g`.
///
/// Residuals must vanish exactly for exact scalars and be at most `tol` otherwise.
pub fn verify_system<S: Scalar>(
    routing: &JacksonRouting<S>,
    g: &LabeledGraph,
    sol: &HarmonicSolution<S>,
    tol: f64,
) -> Result<VerificationReport> {
    let d = routing.dim();
    let labels = if d >= 2 { Subset::range(2, d) } else { Subset::EMPTY };
    g.check_regular(labels)?;
    if sol.len() != g.len() || sol.alpha.len() != g.len() {
        return Err(Error::Dimension { expected: g.len(), got: sol.len() });
    }
    if let Some(a) = sol.alpha.iter().find(|a| a.len() + 1 != d) {
        return Err(Error::Dimension { expected: d, got: a.len() + 1 });
    }
    let exact = S::EXACT;
    let points: Vec<Point<S>> = (0..g.len()).map(|v| sol.point(v)).collect();
    let name = |v: usize| g.vertices[v].to_string();

    let mut surface = Tracker::new(1, "characteristic surface", exact, tol);
    for (v, pt) in points.iter().enumerate() {
        let p = char_poly_general(routing, Subset::EMPTY, pt)?;
        surface.residual((p - S::one()).abs(), || format!("vertex {}", name(v)));
        if sol.c[v].is_zero() {
            surface.fail(format!("vertex {} has zero coefficient", name(v)));
        }
    }

    let mut distinct = Tracker::new(2, "distinct points", exact, tol);
    for u in 0..g.len() {
        for v in u + 1..g.len() {
            let gap = points[u]
                .alpha
                .iter()
                .zip(&points[v].alpha)
                .map(|(a, b)| (a.clone() - b.clone()).abs())
                .fold(S::zero(), |m, x| if x > m { x } else { m });
            let ok = if exact { !gap.is_zero() } else { gap.to_f64() > tol };
            distinct.observe(gap.to_f64(), ok, false, || format!("vertices {} and {}", name(u), name(v)));
        }
    }

    let mut conj = Tracker::new(3, "conjugacy along edges", exact, tol);
    let mut ratio = Tracker::new(4, "coefficient ratios", exact, tol);
    for &(u, v, l) in &g.edges {
        let (pu, pv) = (&points[u], &points[v]);
        let witness = || format!("edge {}-{} label {l}", name(u), name(v));
        let mut off = S::zero();
        for j in 2..=d {
            if j != l {
                let gap = (pu.alpha(j).clone() - pv.alpha(j).clone()).abs();
                if gap > off {
                    off = gap;
                }
            }
        }
        let prod = conjugate_product(routing, pu, l)?;
        let pr = (pu.alpha(l).clone() * pv.alpha(l).clone() - prod).abs();
        let res = if pr > off { pr } else { off };
        conj.residual(res, witness);
        if pu.alpha(l) == pv.alpha(l) {
            conj.fail(format!("edge {}-{} joins equal roots", name(u), name(v)));
        }
        let cu = sol.c[u].clone() * c_general(routing, l, pu)?;
        let cv = sol.c[v].clone() * c_general(routing, l, pv)?;
        let scale = if cu.abs() > cv.abs() { cu.abs() } else { cv.abs() };
        let sum = (cu + cv).abs();
        let rel = if scale.is_zero() { sum } else { sum / scale };
        ratio.residual(rel, witness);
    }

    let mut loops = Tracker::new(5, "loop surfaces", exact, tol);
    for (v, pt) in points.iter().enumerate() {
        for l in g.loops[v].iter() {
            let p = char_poly_general(routing, Subset::EMPTY.with(l), pt)?;
            loops.residual((p - S::one()).abs(), || format!("vertex {} loop {l}", name(v)));
        }
    }

    Ok(VerificationReport {
        exact,
        tol,
        conditions: vec![surface.report, distinct.report, conj.report, ratio.report, loops.report],
    })
}

/// `E_y[h(Y_1)] − h(y)` under the routing's reflected jumps.
pub fn harmonic_residual<S: Scalar>(routing: &JacksonRouting<S>, h: impl Fn(&[i64]) -> S, y: &[i64]) -> S {
    let h0 = h(y);
    let mut next = y.to_vec();
    let terms: Vec<S> = routing
        .jumps()
        .filter_map(|(i, j, p)| {
            if !apply_jump(&mut next, y, i, j) {
                return None;
            }
            Some(p.clone() * (h(&next) - h0.clone()))
        })
        .collect();
    S::sum_all(terms)
}

/// `D_a h(y) = Σ_{i∈a} μ_i h(y) + Σ_{i∉a, j} p(i,j) h(y + v_{i,j}) − h(y)`, evaluated
/// without constraints.
pub fn d_operator<S: Scalar>(routing: &JacksonRouting<S>, a: Subset, h: impl Fn(&[i64]) -> S, y: &[i64]) -> S {
    let h0 = h(y);
    let mut next = y.to_vec();
    let mut terms = Vec::new();
    for (i, j, p) in routing.jumps() {
        if a.contains(i) {
            continue;
        }
        shift(&mut next, y, i, j);
        terms.push(p.clone() * (h(&next) - h0.clone()));
    }
    S::sum_all(terms)
}

fn shift(next: &mut [i64], y: &[i64], i: usize, j: usize) {
    next.copy_from_slice(y);
    if i > 0 {
        next[i - 1] += if i == 1 { 1 } else { -1 };
    }
    if j > 0 {
        next[j - 1] += if j == 1 { -1 } else { 1 };
    }
}

fn apply_jump(next: &mut [i64], y: &[i64], i: usize, j: usize) -> bool {
    if i >= 2 && y[i - 1] == 0 {
        return false;
    }
    shift(next, y, i, j);
    true
}

/// Sufficient condition for `h_G` to be determined by its values on `∂B`:
/// `|β| < 1` and every `|α_v(i)| <= 1`.
pub fn check_db_determined_gate<S: Scalar>(sol: &HarmonicSolution<S>) -> bool {
    sol.beta.abs() < S::one() && sol.alpha.iter().flatten().all(|a| a.abs() <= S::one())
}

/// Outcome of [`simple_extension_check`].
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SimpleExtension<S> {
    pub is_extension: bool,
    /// The lumped `(d1+1) x (d1+1)` matrix `p'`.
    pub p_prime: Vec<Vec<S>>,
    /// `Σ p'`.
    pub scale: S,
    pub reason: Option<String>,
}

/// Decide whether `p2` is a simple extension of `p1`: with jumps into the new
/// nodes lumped into exits, `p' = (Σ p') p1`, and the new nodes never feed back.
pub fn simple_extension_check<S: Scalar>(
    p1: &JacksonRouting<S>,
    p2: &JacksonRouting<S>,
) -> Result<SimpleExtension<S>> {
    let (d1, d2) = (p1.dim(), p2.dim());
    if d2 <= d1 {
        return Err(Error::Dimension { expected: d1 + 1, got: d2 });
    }
    let mut pp = vec![vec![S::zero(); d1 + 1]; d1 + 1];
    for (i, row) in pp.iter_mut().enumerate() {
        for (j, e) in row.iter_mut().enumerate().skip(1) {
            *e = p2.p(i, j).clone();
        }
        if i > 0 {
            row[0] = S::sum_all(std::iter::once(p2.p(i, 0).clone()).chain((d1 + 1..=d2).map(|j| p2.p(i, j).clone())));
        }
    }
    let scale = S::sum_all(pp.iter().flatten().cloned());
    let tol = 1e-12;
    let mut reason = None;
    if scale.is_zero() {
        reason = Some("p' vanishes".to_string());
    }
    'outer: for i in 0..=d1 {
        for j in 0..=d1 {
            let want = scale.clone() * p1.p(i, j).clone();
            if !pp[i][j].close(&want, tol) {
                reason = Some(format!(
                    "p'({i},{j}) = {} but (Σp')·p1({i},{j}) = {}",
                    pp[i][j].to_f64(),
                    want.to_f64()
                ));
                break 'outer;
            }
        }
    }
    if reason.is_none() {
        'fb: for i in d1 + 1..=d2 {
            for j in 1..=d1 {
                if !p2.p(i, j).is_zero() {
                    reason = Some(format!("new node {i} feeds back into node {j}"));
                    break 'fb;
                }
            }
        }
    }
    Ok(SimpleExtension { is_extension: reason.is_none(), p_prime: pp, scale, reason })
}

/// Lift a solution for `p1` to the extension `p2` by setting the new `α` coordinates to `β`.
pub fn extend_solution<S: Scalar>(
    sol: &HarmonicSolution<S>,
    p1: &JacksonRouting<S>,
    p2: &JacksonRouting<S>,
) -> Result<HarmonicSolution<S>> {
    let ext = simple_extension_check(p1, p2)?;
    if !ext.is_extension {
        return Err(Error::NotExtension(ext.reason.unwrap_or_default()));
    }
    let extra = p2.dim() - p1.dim();
    let alpha = sol
        .alpha
        .iter()
        .map(|a| a.iter().cloned().chain(std::iter::repeat(sol.beta.clone()).take(extra)).collect())
        .collect();
    Ok(HarmonicSolution { beta: sol.beta.clone(), alpha, c: sol.c.clone() })
}
