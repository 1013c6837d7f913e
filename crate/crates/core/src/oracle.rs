//! Ground truth: `P_x(τ_n < τ_0)` by Gauss–Seidel iteration of the harmonic
//! equation on `A_n`, bracketing solves for `P_y(τ < ∞)`, and the gambler's-ruin
//! closed form for `d = 1`.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::bounds::{gamma_constants, ptau_upper_bound, SuperharmonicParams};
use crate::error::{Error, Result};
use crate::model::{excess, step_x_in_place, Increment, NetworkParams, StateX};
use crate::tandem::approx_prob_x;

/// Default state budget for the exact solver.
pub const DEFAULT_BUDGET: u128 = 20_000_000;

/// Solver settings.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SolveOptions {
    /// Relative tolerance on the sup-norm residual.
    pub tol: f64,
    pub max_sweeps: usize,
    /// Over-relaxation factor (1 = plain Gauss–Seidel).
    pub omega: f64,
    pub budget: u128,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions { tol: 1e-12, max_sweeps: 100_000, omega: 1.0, budget: DEFAULT_BUDGET }
    }
}

impl SolveOptions {
    pub fn with_tol(tol: f64) -> Self {
        SolveOptions { tol, ..Default::default() }
    }
}

/// Ranking of `A_n = {x ∈ Z_+^d : S(x) <= n}`: level by level, lexicographically
/// ascending within a level.
#[derive(Clone, Debug)]
pub struct StateSpace {
    d: usize,
    n: usize,
    /// `binom[m][k] = C(m, k)` for `k <= d`.
    binom: Vec<Vec<u128>>,
    offset: Vec<usize>,
}

impl StateSpace {
    pub fn new(d: usize, n: usize, budget: u128) -> Result<Self> {
        if d == 0 {
            return Err(Error::InvalidParams("dimension must be at least 1".into()));
        }
        let binom = binomials(n + d + 1, d);
        let total = binom[n + d][d];
        if total > budget {
            return Err(Error::Budget { states: total, budget });
        }
        let offset = (0..=n + 1).map(|s| if s == 0 { 0 } else { binom[s - 1 + d][d] as usize }).collect();
        Ok(StateSpace { d, n, binom, offset })
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn level_max(&self) -> usize {
        self.n
    }

    pub fn len(&self) -> usize {
        self.offset[self.n + 1]
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Number of states `|A_n| = C(n + d, d)`.
    pub fn count(d: usize, n: usize) -> u128 {
        binomials(n + d + 1, d)[n + d][d]
    }

    /// Index range of level `s`.
    pub fn level(&self, s: usize) -> std::ops::Range<usize> {
        self.offset[s]..self.offset[s + 1]
    }

    /// Compositions of `m` into `k` parts.
    fn comps(&self, m: usize, k: usize) -> usize {
        self.binom[m + k - 1][k - 1] as usize
    }

    /// Rank of `x`, or `None` outside `A_n`.
    pub fn rank(&self, x: &[i64]) -> Option<usize> {
        if x.len() != self.d || x.iter().any(|&v| v < 0) {
            return None;
        }
        let s = x.iter().sum::<i64>() as usize;
        if s > self.n {
            return None;
        }
        let mut r = self.offset[s];
        let mut rem = s;
        for i in 0..self.d - 1 {
            let k = self.d - i - 1;
            for v in 0..x[i] as usize {
                r += self.comps(rem - v, k);
            }
            rem -= x[i] as usize;
        }
        Some(r)
    }

    /// All states in rank order, flattened `d` coordinates at a time.
    pub fn enumerate(&self) -> Vec<i64> {
        let mut out = Vec::with_capacity(self.len() * self.d);
        let mut x = vec![0i64; self.d];
        for s in 0..=self.n {
            // lexicographically smallest composition of s
            x.iter_mut().for_each(|v| *v = 0);
            x[self.d - 1] = s as i64;
            loop {
                out.extend_from_slice(&x);
                if !next_composition(&mut x) {
                    break;
                }
            }
        }
        out
    }
}

/// Next composition with the same sum in lexicographic order.
fn next_composition(x: &mut [i64]) -> bool {
    let d = x.len();
    if d == 1 {
        return false;
    }
    // rightmost position before the last with something to its right
    let mut tail = x[d - 1];
    let mut i = d - 1;
    while i > 0 {
        i -= 1;
        if tail > 0 {
            x[i] += 1;
            let t = tail - 1;
            for v in x[i + 1..].iter_mut() {
                *v = 0;
            }
            x[d - 1] = t;
            return true;
        }
        tail += x[i];
    }
    false
}

fn binomials(m: usize, k: usize) -> Vec<Vec<u128>> {
    let mut b = vec![vec![0u128; k + 1]; m + 1];
    for i in 0..=m {
        b[i][0] = 1;
        for j in 1..=k.min(i) {
            b[i][j] = b[i - 1][j - 1].saturating_add(if j <= i - 1 { b[i - 1][j] } else { 0 });
        }
    }
    b
}

/// Oracle values on `A_n` with convergence metadata.
#[derive(Clone, Debug)]
pub struct SolveGrid {
    pub n: usize,
    pub d: usize,
    pub values: Vec<f64>,
    /// Sup over interior states of `|E_x h(X_1) − h(x)| / h(x)`.
    pub residual: f64,
    pub iterations: usize,
    space: StateSpace,
}

impl SolveGrid {
    pub fn space(&self) -> &StateSpace {
        &self.space
    }

    /// `P_x(τ_n < τ_0)`.
    pub fn value(&self, x: &[i64]) -> Option<f64> {
        self.space.rank(x).map(|r| self.values[r])
    }

    /// `V_n = −log P_x(τ_n < τ_0) / n`.
    pub fn v_n(&self, x: &[i64]) -> Option<f64> {
        self.value(x).map(|p| -p.ln() / self.n as f64)
    }

    /// CSV with header `x1,..,xd,value`, rows in rank order.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let header: Vec<String> = (1..=self.d).map(|i| format!("x{i}")).collect();
        writeln!(w, "{},value", header.join(","))?;
        let states = self.space.enumerate();
        for (k, v) in self.values.iter().enumerate() {
            let x = &states[k * self.d..(k + 1) * self.d];
            let coords: Vec<String> = x.iter().map(|c| c.to_string()).collect();
            writeln!(w, "{},{:e}", coords.join(","), v)?;
        }
        Ok(())
    }

    /// Binary table: `d` and `n` as little-endian `u64`, then the values in rank
    /// order as little-endian `f64`.
    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(&(self.d as u64).to_le_bytes())?;
        w.write_all(&(self.n as u64).to_le_bytes())?;
        for v in &self.values {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    /// Reads [`SolveGrid::write_binary`] output; residual and iteration count are not stored.
    pub fn read_binary<R: Read>(mut r: R) -> Result<Self> {
        let mut b8 = [0u8; 8];
        r.read_exact(&mut b8)?;
        let d = u64::from_le_bytes(b8) as usize;
        r.read_exact(&mut b8)?;
        let n = u64::from_le_bytes(b8) as usize;
        let space = StateSpace::new(d, n, u128::MAX)?;
        let mut values = Vec::with_capacity(space.len());
        for _ in 0..space.len() {
            r.read_exact(&mut b8)?;
            values.push(f64::from_le_bytes(b8));
        }
        Ok(SolveGrid { n, d, values, residual: f64::NAN, iterations: 0, space })
    }
}

/// Solve `h(x) = Σ_v p_v h(x + π(x,v))` on `A_n` with `h = 1` on `S(x) = n` and `h(0) = 0`.
///
/// Sweeps run over levels `n−1` down to 1 and lexicographically ascending within a
/// level, so arrivals and transfers read values already updated in the same sweep.
/// Iteration stops once the relative change falls below `tol (1 − κ)`, with `κ` the
/// observed contraction, and the relative residual is at most `tol`.
pub fn solve_exact(params: &NetworkParams, n: usize, opts: &SolveOptions) -> Result<SolveGrid> {
    if n == 0 {
        return Err(Error::InvalidParams("n must be at least 1".into()));
    }
    let d = params.dim();
    let space = StateSpace::new(d, n, opts.budget)?;
    let states = space.enumerate();
    let len = space.len();
    let probs = params.increment_probs();
    let incs = Increment::all(d);
    let k = d + 1;
    // neighbour ranks; u32::MAX marks a blocked jump
    let mut nbr = vec![u32::MAX; len * k];
    let mut x = vec![0i64; d];
    for i in space.level(0).start..space.level(n).start {
        for (v, &inc) in incs.iter().enumerate() {
            x.copy_from_slice(&states[i * d..(i + 1) * d]);
            if step_x_in_place(&mut x, inc) {
                nbr[i * k + v] = space.rank(&x).expect("neighbour in A_n") as u32;
            }
        }
    }
    drop(states);
    let self_mass: Vec<f64> = (0..len)
        .map(|i| (0..k).filter(|&v| nbr[i * k + v] == u32::MAX).map(|v| probs[v]).sum())
        .collect();

    let mut h = vec![0.0f64; len];
    for v in &mut h[space.level(n)] {
        *v = 1.0;
    }
    let omega = opts.omega;
    let mut prev_change = f64::INFINITY;
    let mut iterations = 0;
    let mut residual = f64::INFINITY;
    while iterations < opts.max_sweeps {
        iterations += 1;
        let mut change = 0.0f64;
        for s in (1..n).rev() {
            for i in space.level(s) {
                let mut acc = 0.0;
                for v in 0..k {
                    let j = nbr[i * k + v];
                    if j != u32::MAX {
                        acc += probs[v] * h[j as usize];
                    }
                }
                let gs = acc / (1.0 - self_mass[i]);
                let new = if omega == 1.0 { gs } else { h[i] + omega * (gs - h[i]) };
                if new > 0.0 {
                    change = change.max(((new - h[i]) / new).abs());
                }
                h[i] = new;
            }
        }
        let kappa = if prev_change.is_finite() && prev_change > 0.0 { (change / prev_change).min(0.999) } else { 0.0 };
        prev_change = change;
        if change <= opts.tol * (1.0 - kappa) {
            residual = relative_residual(&space, &h, &nbr, &probs, n);
            if residual <= opts.tol {
                break;
            }
        }
    }
    if residual > opts.tol {
        return Err(Error::NoConvergence { iterations, change: prev_change });
    }
    Ok(SolveGrid { n, d, values: h, residual, iterations, space })
}

fn relative_residual(space: &StateSpace, h: &[f64], nbr: &[u32], probs: &[f64], n: usize) -> f64 {
    let k = probs.len();
    let mut worst = 0.0f64;
    for i in space.level(1).start..space.level(n).start {
        let mut acc = 0.0;
        for v in 0..k {
            let j = nbr[i * k + v];
            acc += probs[v] * if j == u32::MAX { h[i] } else { h[j as usize] };
        }
        worst = worst.max(((acc - h[i]) / h[i]).abs());
    }
    worst
}

/// `P_x(τ_n < τ_0)` for `d = 1`: `ρ^{n−x}(1 − ρ^x)/(1 − ρ^n)`.
pub fn gambler_ruin(params: &NetworkParams, n: i64, x: i64) -> Result<f64> {
    if params.dim() != 1 {
        return Err(Error::Dimension { expected: 1, got: params.dim() });
    }
    if x < 0 || x > n {
        return Err(Error::InvalidState(format!("x = {x} outside [0, {n}]")));
    }
    let lr = params.rho(1).ln();
    let num = -(x as f64 * lr).exp_m1();
    let den = -(n as f64 * lr).exp_m1();
    Ok(((n - x) as f64 * lr).exp() * num / den)
}

/// `(V_n, W_n)` at `x`: decay exponents of the oracle and of the closed form.
pub fn log_decay(grid: &SolveGrid, params: &NetworkParams, x: &[i64]) -> Result<(f64, f64)> {
    let p = grid
        .value(x)
        .ok_or_else(|| Error::InvalidState(format!("{x:?} outside A_{}", grid.n)))?;
    if p <= 0.0 {
        return Err(Error::InvalidState(format!("zero probability at {x:?}")));
    }
    let n = grid.n as i64;
    let f: f64 = approx_prob_x(params, n, &StateX::new(x.to_vec())?)?;
    if f <= 0.0 {
        return Err(Error::InvalidState(format!("non-positive approximation {f:e} at {x:?}")));
    }
    Ok((-p.ln() / n as f64, -f.ln() / n as f64))
}

/// Bracket `P_y(τ < ∞)` by solving the Y equation on the box
/// `{0 <= y(1) − Σ_{j≥2} y(j) <= L, y(j) <= L}` with value 1 on `∂B`. On leaving the
/// box the lower solve scores 0 and the upper solve scores the superharmonic bound
/// `min(1, h_{2,d,r}/γ_d)` at the exit state.
pub fn solve_y_bracket(params: &NetworkParams, y: &[i64], l: usize, tol: f64, budget: u128) -> Result<(f64, f64)> {
    let d = params.dim();
    if y.len() != d {
        return Err(Error::Dimension { expected: d, got: y.len() });
    }
    let z0 = excess(y);
    if z0 < 0 || y[1..].iter().any(|&v| v < 0) {
        return Err(Error::InvalidState(format!("{y:?} is not in B")));
    }
    if z0 == 0 {
        return Ok((1.0, 1.0));
    }
    if z0 as usize > l || y[1..].iter().any(|&v| v as usize > l) {
        return Err(Error::InvalidParams(format!("truncation radius {l} does not cover {y:?}")));
    }
    let side = l + 1;
    let total = (side as u128).pow(d as u32);
    if total > budget {
        return Err(Error::Budget { states: total, budget });
    }
    let len = total as usize;
    let probs = params.increment_probs();
    // box coordinates c[0] = z, c[j] = y(j+1)
    let index = |c: &[i64]| -> Option<usize> {
        let mut idx = 0usize;
        for &v in c.iter().rev() {
            if v < 0 || v as usize > l {
                return None;
            }
            idx = idx * side + v as usize;
        }
        Some(idx)
    };
    #[derive(Clone, Copy)]
    enum Target {
        Inside(usize),
        Boundary,
        Exit(f64),
        Blocked,
    }
    // upper values at exit: the smallest superharmonic bound over a grid of r
    let rho = params.rho_max();
    let grid: Vec<SuperharmonicParams> = (1..8)
        .filter_map(|i| gamma_constants(params, rho + (1.0 - rho) * i as f64 / 8.0).ok())
        .collect();
    let exit_bound = |y: &[i64]| grid.iter().map(|sp| ptau_upper_bound(sp, y)).fold(1.0f64, f64::min);
    let k = d + 1;
    let mut table = vec![Target::Blocked; len * k];
    let mut c = vec![0i64; d];
    for i in 0..len {
        let mut rem = i;
        for v in c.iter_mut() {
            *v = (rem % side) as i64;
            rem /= side;
        }
        for (v, inc) in Increment::all(d).into_iter().enumerate() {
            let mut t = c.clone();
            let moved = match inc {
                Increment::Arrival => {
                    t[0] -= 1;
                    true
                }
                Increment::Transfer(1) => {
                    t[1] += 1;
                    true
                }
                Increment::Transfer(j) => {
                    if t[j - 1] > 0 {
                        t[j - 1] -= 1;
                        t[j] += 1;
                        true
                    } else {
                        false
                    }
                }
                Increment::Departure => {
                    if d == 1 || t[d - 1] > 0 {
                        if d > 1 {
                            t[d - 1] -= 1;
                        }
                        t[0] += 1;
                        true
                    } else {
                        false
                    }
                }
            };
            table[i * k + v] = if !moved {
                Target::Blocked
            } else if t[0] == 0 {
                Target::Boundary
            } else {
                match index(&t) {
                    Some(j) => Target::Inside(j),
                    None => {
                        let mut out = t.clone();
                        out[0] += t[1..].iter().sum::<i64>();
                        Target::Exit(exit_bound(&out))
                    }
                }
            };
        }
    }
    let mut start = vec![z0];
    start.extend_from_slice(&y[1..]);
    let at = index(&start).expect("start inside box");
    let solve = |upper: bool| -> Result<f64> {
        let mut h = vec![if upper { 1.0 } else { 0.0 }; len];
        for (i, v) in h.iter_mut().enumerate() {
            if i % side == 0 {
                *v = 1.0;
            }
        }
        let mut prev = f64::INFINITY;
        for it in 0..1_000_000usize {
            let mut change = 0.0f64;
            for i in 0..len {
                if i % side == 0 {
                    continue;
                }
                let mut acc = 0.0;
                let mut stay = 0.0;
                for v in 0..k {
                    match table[i * k + v] {
                        Target::Inside(j) => acc += probs[v] * h[j],
                        Target::Boundary => acc += probs[v],
                        Target::Exit(b) => {
                            if upper {
                                acc += probs[v] * b;
                            }
                        }
                        Target::Blocked => stay += probs[v],
                    }
                }
                let new = acc / (1.0 - stay);
                if new > 0.0 {
                    change = change.max(((new - h[i]) / new).abs());
                }
                h[i] = new;
            }
            let kappa = if prev.is_finite() && prev > 0.0 { (change / prev).min(0.999) } else { 0.0 };
            prev = change;
            if change <= tol * (1.0 - kappa) {
                return Ok(h[at]);
            }
            if it + 1 == 1_000_000 {
                break;
            }
        }
        Err(Error::NoConvergence { iterations: 1_000_000, change: prev })
    };
    Ok((solve(false)?, solve(true)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ranks_follow_enumeration() {
        for (d, n) in [(1, 5), (2, 6), (3, 5), (4, 4)] {
            let sp = StateSpace::new(d, n, u128::MAX).unwrap();
            let all = sp.enumerate();
            assert_eq!(all.len(), sp.len() * d);
            assert_eq!(sp.len() as u128, StateSpace::count(d, n));
            for (i, x) in all.chunks(d).enumerate() {
                assert_eq!(sp.rank(x), Some(i), "{x:?}");
            }
        }
    }

    #[test]
    fn count_for_paper_case() {
        assert_eq!(StateSpace::count(4, 60), 635_376);
    }

    #[test]
    fn budget_enforced() {
        let p = NetworkParams::from_weights(1, &[3, 7, 2, 5]).unwrap();
        let opts = SolveOptions { budget: 1000, ..Default::default() };
        assert!(matches!(solve_exact(&p, 60, &opts), Err(Error::Budget { .. })));
    }

    #[test]
    fn boundary_values() {
        let p = NetworkParams::from_f64(0.2, &[0.5, 0.3]).unwrap();
        let g = solve_exact(&p, 8, &SolveOptions::default()).unwrap();
        assert_eq!(g.value(&[0, 0]), Some(0.0));
        assert_eq!(g.value(&[3, 5]), Some(1.0));
        assert!(g.residual <= 1e-12);
        assert_eq!(log_decay(&g, &p, &[8, 0]).unwrap(), (0.0, 0.0));
    }

    #[test]
    fn binary_round_trip() {
        let p = NetworkParams::from_f64(0.2, &[0.5, 0.3]).unwrap();
        let g = solve_exact(&p, 6, &SolveOptions::default()).unwrap();
        let mut buf = Vec::new();
        g.write_binary(&mut buf).unwrap();
        assert_eq!(buf.len(), 16 + 8 * 28);
        let back = SolveGrid::read_binary(&buf[..]).unwrap();
        assert_eq!(back.values, g.values);
        let mut csv = Vec::new();
        g.write_csv(&mut csv).unwrap();
        let text = String::from_utf8(csv).unwrap();
        assert!(text.starts_with("x1,x2,value\n0,0,0e0\n"));
    }

    #[test]
    fn bracket_on_boundary() {
        let p = NetworkParams::from_f64(0.2, &[0.5, 0.3]).unwrap();
        assert_eq!(solve_y_bracket(&p, &[3, 3], 10, 1e-12, DEFAULT_BUDGET).unwrap(), (1.0, 1.0));
    }
}
