//! Plain Monte Carlo and importance sampling of `P_x(τ_n < τ_0)`, coupled runs of
//! X and X̄, and trajectory checks of the stage supermartingale.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bounds::{eval_h2kr, gamma_constants, SuperharmonicParams};
use crate::error::{Error, Result};
use crate::model::{step_x_in_place, step_xbar_in_place, sum_s, Increment, NetworkParams};
use crate::scalar::NeumaierSum;
use crate::tandem::FastFormula;

/// Sampling settings shared by the estimators.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SimConfig {
    pub samples: u64,
    pub seed: u64,
    /// Paths are cut after `horizon_mult · n` steps.
    pub horizon_mult: u64,
    /// Floor applied to the guiding function before it enters the kernel.
    pub floor: f64,
    pub threads: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig { samples: 10_000, seed: 1, horizon_mult: 64, floor: 1e-300, threads: 1 }
    }
}

impl SimConfig {
    pub fn new(samples: u64, seed: u64) -> Self {
        SimConfig { samples, seed, ..Default::default() }
    }
}

/// Estimator output.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SimReport {
    pub method: String,
    pub n: i64,
    pub x: Vec<i64>,
    pub estimate: f64,
    pub std_error: f64,
    pub ci95: (f64, f64),
    /// Unbiased per-sample variance of the summands.
    pub sample_variance: f64,
    pub samples: u64,
    pub hit_count: u64,
    pub seed: u64,
    pub horizon: u64,
    pub overruns: u64,
    /// IS variance over the plain indicator variance `p(1 − p)` at a reference `p`.
    pub variance_ratio: Option<f64>,
    pub reference: Option<f64>,
}

impl SimReport {
    /// Attach a reference probability (e.g. the oracle value).
    pub fn with_reference(mut self, p: f64) -> Self {
        self.reference = Some(p);
        let plain = p * (1.0 - p);
        self.variance_ratio = (plain > 0.0).then(|| self.sample_variance / plain);
        self
    }

    pub fn covers(&self, p: f64) -> bool {
        self.ci95.0 <= p && p <= self.ci95.1
    }
}

/// Counter-based substream for sample `index`.
pub fn sample_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

struct Outcome {
    value: f64,
    hit: bool,
    overrun: bool,
}

fn check_start(params: &NetworkParams, n: i64, x: &[i64]) -> Result<()> {
    if x.len() != params.dim() {
        return Err(Error::Dimension { expected: params.dim(), got: x.len() });
    }
    if x.iter().any(|&v| v < 0) {
        return Err(Error::InvalidState(format!("{x:?} has a negative coordinate")));
    }
    let s = sum_s(x);
    if s > n || n < 1 {
        return Err(Error::InvalidState(format!("S(x) = {s} must lie in [0, n], n = {n}")));
    }
    Ok(())
}

fn run_samples(cfg: &SimConfig, f: impl Fn(u64) -> Outcome + Sync) -> Result<Vec<Outcome>> {
    if cfg.samples == 0 {
        return Err(Error::InvalidParams("at least one sample is required".into()));
    }
    #[cfg(feature = "parallel")]
    if cfg.threads > 1 {
        use rayon::prelude::*;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.threads)
            .build()
            .map_err(|e| Error::InvalidParams(e.to_string()))?;
        return Ok(pool.install(|| (0..cfg.samples).into_par_iter().map(&f).collect()));
    }
    Ok((0..cfg.samples).map(f).collect())
}

fn summarize(method: &str, n: i64, x: &[i64], cfg: &SimConfig, horizon: u64, out: &[Outcome]) -> SimReport {
    let m = out.len() as f64;
    let mut sum = NeumaierSum::default();
    for o in out {
        sum.add(o.value);
    }
    let mean = sum.total() / m;
    let mut ss = NeumaierSum::default();
    for o in out {
        ss.add((o.value - mean) * (o.value - mean));
    }
    let var = if out.len() > 1 { ss.total() / (m - 1.0) } else { 0.0 };
    let se = (var / m).sqrt();
    SimReport {
        method: method.into(),
        n,
        x: x.to_vec(),
        estimate: mean,
        std_error: se,
        ci95: (mean - 1.96 * se, mean + 1.96 * se),
        sample_variance: var,
        samples: cfg.samples,
        hit_count: out.iter().filter(|o| o.hit).count() as u64,
        seed: cfg.seed,
        horizon,
        overruns: out.iter().filter(|o| o.overrun).count() as u64,
        variance_ratio: None,
        reference: None,
    }
}

fn cdf(p: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    let mut c: Vec<f64> = p
        .iter()
        .map(|v| {
            acc += v;
            acc
        })
        .collect();
    *c.last_mut().unwrap() = f64::INFINITY;
    c
}

#[inline]
fn pick(c: &[f64], u: f64) -> usize {
    c.iter().position(|&v| u < v).unwrap_or(c.len() - 1)
}

/// Indicator average of `{τ_n < τ_0}` under the original dynamics.
pub fn mc_estimate(params: &NetworkParams, n: i64, x: &[i64], cfg: &SimConfig) -> Result<SimReport> {
    check_start(params, n, x)?;
    let d = params.dim();
    let incs = Increment::all(d);
    let c = cdf(&params.increment_probs());
    let horizon = cfg.horizon_mult * n as u64;
    let out = run_samples(cfg, |i| {
        let mut rng = sample_rng(cfg.seed, i);
        let mut s = x.to_vec();
        let mut total = sum_s(&s);
        for _ in 0..=horizon {
            if total == n {
                return Outcome { value: 1.0, hit: true, overrun: false };
            }
            if total == 0 {
                return Outcome { value: 0.0, hit: false, overrun: false };
            }
            let inc = incs[pick(&c, rng.gen::<f64>())];
            if step_x_in_place(&mut s, inc) {
                match inc {
                    Increment::Arrival => total += 1,
                    Increment::Departure => total -= 1,
                    Increment::Transfer(_) => {}
                }
            }
        }
        Outcome { value: 0.0, hit: false, overrun: true }
    })?;
    Ok(summarize("plain", n, x, cfg, horizon, &out))
}

/// Doob-transform kernel `q(x → x') ∝ p_v f̂(x')` built from a positive guide `f̂`.
pub struct IsKernel<'a> {
    n: i64,
    probs: Vec<f64>,
    incs: Vec<Increment>,
    floor: f64,
    guide: Box<dyn Fn(&[i64]) -> f64 + Send + Sync + 'a>,
}

/// One branch of the kernel at a state.
#[derive(Clone, Debug)]
pub struct Branch {
    pub inc: Increment,
    pub next: Vec<i64>,
    /// Sampling probability under the tilted kernel.
    pub q: f64,
    /// Likelihood-ratio factor `p/q`.
    pub weight: f64,
}

impl<'a> IsKernel<'a> {
    /// Guide `f̂(x) = P_{T_n(x)}(τ < ∞)` evaluated in `O(d²)`.
    pub fn from_formula(params: &NetworkParams, n: i64, floor: f64) -> Result<IsKernel<'static>> {
        let f = FastFormula::new(params, n as usize + 1)?;
        let d = params.dim();
        let guide = move |x: &[i64]| {
            let mut y = [0i64; 32];
            y[..d].copy_from_slice(x);
            y[0] = n - x[0];
            f.eval(&y[..d])
        };
        Ok(IsKernel {
            n,
            probs: params.increment_probs(),
            incs: Increment::all(d),
            floor,
            guide: Box::new(guide),
        })
    }

    /// Kernel driven by an arbitrary guide (e.g. `|_| 1.0`, which recovers plain MC).
    pub fn with_guide(params: &NetworkParams, n: i64, floor: f64, guide: impl Fn(&[i64]) -> f64 + Send + Sync + 'a) -> Self {
        IsKernel {
            n,
            probs: params.increment_probs(),
            incs: Increment::all(params.dim()),
            floor,
            guide: Box::new(guide),
        }
    }

    pub fn level(&self) -> i64 {
        self.n
    }

    fn fhat(&self, x: &[i64]) -> f64 {
        let v = (self.guide)(x);
        if v.is_finite() && v > self.floor {
            v
        } else {
            self.floor
        }
    }

    /// All branches out of `x` with tilted probabilities and weight factors.
    pub fn branches(&self, x: &[i64]) -> Vec<Branch> {
        let here = self.fhat(x);
        let mut out: Vec<Branch> = self
            .incs
            .iter()
            .zip(&self.probs)
            .map(|(&inc, &p)| {
                let mut next = x.to_vec();
                let f = if step_x_in_place(&mut next, inc) { self.fhat(&next) } else { here };
                Branch { inc, next, q: p * f, weight: 0.0 }
            })
            .collect();
        let z: f64 = out.iter().map(|b| b.q).sum();
        for (b, &p) in out.iter_mut().zip(&self.probs) {
            b.weight = z / (b.q / p);
            b.q /= z;
        }
        out
    }
}

/// Importance sampling under the Doob transform of the closed form.
pub fn is_estimate(params: &NetworkParams, n: i64, x: &[i64], cfg: &SimConfig) -> Result<SimReport> {
    check_start(params, n, x)?;
    let kernel = IsKernel::from_formula(params, n, cfg.floor)?;
    is_estimate_with(params, &kernel, x, cfg)
}

/// Importance sampling with a prepared kernel.
pub fn is_estimate_with(params: &NetworkParams, kernel: &IsKernel<'_>, x: &[i64], cfg: &SimConfig) -> Result<SimReport> {
    let n = kernel.n;
    check_start(params, n, x)?;
    let d = params.dim();
    let horizon = cfg.horizon_mult * n as u64;
    let out = run_samples(cfg, |i| {
        let mut rng = sample_rng(cfg.seed, i);
        let mut s = x.to_vec();
        let mut logw = 0.0f64;
        let mut f = vec![0.0; d + 1];
        let mut nxt = vec![0i64; d];
        for _ in 0..=horizon {
            let total = sum_s(&s);
            if total == n {
                return Outcome { value: logw.exp(), hit: true, overrun: false };
            }
            if total == 0 {
                return Outcome { value: 0.0, hit: false, overrun: false };
            }
            let here = kernel.fhat(&s);
            let mut z = 0.0;
            for (v, &inc) in kernel.incs.iter().enumerate() {
                nxt.copy_from_slice(&s);
                f[v] = if step_x_in_place(&mut nxt, inc) { kernel.fhat(&nxt) } else { here };
                z += kernel.probs[v] * f[v];
            }
            let u = rng.gen::<f64>() * z;
            let mut acc = 0.0;
            let mut pickv = d;
            for v in 0..=d {
                acc += kernel.probs[v] * f[v];
                if u < acc {
                    pickv = v;
                    break;
                }
            }
            logw += z.ln() - f[pickv].ln();
            step_x_in_place(&mut s, kernel.incs[pickv]);
        }
        Outcome { value: 0.0, hit: false, overrun: true }
    })?;
    Ok(summarize("is", n, x, cfg, horizon, &out))
}

/// Shared-increment run of X and X̄ with the hitting times of the path lemmas.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CoupledTrace {
    pub increments: Vec<Increment>,
    pub x_path: Vec<Vec<i64>>,
    pub xbar_path: Vec<Vec<i64>>,
    /// `sigma[j - 1] = σ_{j-1,j}` when observed.
    pub sigma: Vec<Option<usize>>,
    pub tau_n: Option<usize>,
    pub tau_bar_n: Option<usize>,
    pub tau_0: Option<usize>,
    pub tau_bar_0: Option<usize>,
    pub overrun: bool,
}

/// Violations of the componentwise comparisons and hitting-time relations.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct CouplingReport {
    pub violations: Vec<String>,
    /// Both `τ_n`-relations could be decided within the horizon.
    pub resolved: bool,
    /// `τ_0 < σ_{d-1,d}`: the walk emptied before reaching every face in order.
    pub tau0_before_sigma: bool,
}

/// Drive X and X̄ from `x` with one increment stream until `τ_0`, `τ_n` or the horizon.
pub fn coupled_run(params: &NetworkParams, n: i64, x: &[i64], seed: u64, horizon_mult: u64) -> Result<(CoupledTrace, CouplingReport)> {
    check_start(params, n, x)?;
    let s0 = sum_s(x);
    if s0 == 0 || s0 >= n {
        return Err(Error::InvalidState(format!("coupling needs 0 < S(x) < n, got S(x) = {s0}")));
    }
    let d = params.dim();
    let incs = Increment::all(d);
    let c = cdf(&params.increment_probs());
    let mut rng = sample_rng(seed, 0);
    let horizon = (horizon_mult * n as u64) as usize;
    let mut tr = CoupledTrace {
        increments: vec![],
        x_path: vec![x.to_vec()],
        xbar_path: vec![x.to_vec()],
        sigma: vec![None; d],
        tau_n: None,
        tau_bar_n: None,
        tau_0: None,
        tau_bar_0: None,
        overrun: false,
    };
    let mut rep = CouplingReport::default();
    let mut stage = 0usize;
    let mut k = 0usize;
    loop {
        let (xk, xb) = (tr.x_path[k].clone(), tr.xbar_path[k].clone());
        check_lemma(stage, d, k, &xk, &xb, &mut rep);
        if stage < d && xk[stage] == 0 {
            tr.sigma[stage] = Some(k);
            stage += 1;
        }
        if tr.tau_bar_n.is_none() && sum_s(&xb) == n {
            tr.tau_bar_n = Some(k);
        }
        if tr.tau_bar_0.is_none() && xb.iter().all(|&v| v == 0) {
            tr.tau_bar_0 = Some(k);
        }
        let sx = sum_s(&xk);
        if sx == n {
            tr.tau_n = Some(k);
            break;
        }
        if sx == 0 {
            tr.tau_0 = Some(k);
            break;
        }
        if k >= horizon {
            tr.overrun = true;
            break;
        }
        let inc = incs[pick(&c, rng.gen::<f64>())];
        let (mut a, mut b) = (xk, xb);
        step_x_in_place(&mut a, inc);
        step_xbar_in_place(&mut b, inc);
        tr.increments.push(inc);
        tr.x_path.push(a);
        tr.xbar_path.push(b);
        k += 1;
    }
    check_tau(&tr, d, &mut rep);
    if let (Some(t0), sig) = (tr.tau_0, tr.sigma[d - 1]) {
        rep.tau0_before_sigma = sig.map_or(true, |s| t0 < s);
    }
    Ok((tr, rep))
}

fn check_lemma(stage: usize, d: usize, k: usize, x: &[i64], xb: &[i64], rep: &mut CouplingReport) {
    // `stage` = min{j : k <= σ_{j,j+1}}; stage d means k > σ_{d-1,d}
    if stage < d {
        let j = stage;
        for l in 2..=(j + 1).min(d) {
            if xb[l - 1] < x[l - 1] {
                rep.violations.push(format!("k={k}: X̄({l}) = {} < X({l}) = {} (j={j})", xb[l - 1], x[l - 1]));
            }
        }
        for l in j + 2..=d {
            if xb[l - 1] != x[l - 1] {
                rep.violations.push(format!("k={k}: X̄({l}) = {} != X({l}) = {} (j={j})", xb[l - 1], x[l - 1]));
            }
        }
        if j == 0 && x != xb {
            rep.violations.push(format!("k={k}: paths differ before σ_(0,1)"));
        }
        if sum_s(x) != sum_s(xb) {
            rep.violations.push(format!("k={k}: S(X) = {} != S(X̄) = {}", sum_s(x), sum_s(xb)));
        }
    } else if sum_s(x) < sum_s(xb) {
        rep.violations.push(format!("k={k}: S(X) = {} < S(X̄) = {} after σ_(d-1,d)", sum_s(x), sum_s(xb)));
    }
}

fn check_tau(tr: &CoupledTrace, d: usize, rep: &mut CouplingReport) {
    let sigma = tr.sigma[d - 1];
    match (tr.tau_n, tr.tau_0) {
        (Some(tn), _) => {
            rep.resolved = true;
            match sigma {
                Some(s) if s < tn => {
                    if tr.tau_bar_n.is_some_and(|tb| tb <= s) {
                        rep.violations.push(format!("σ < τ_n = {tn} but τ̄_n <= σ = {s}"));
                    }
                }
                _ => {
                    if tr.tau_bar_n != Some(tn) {
                        rep.violations.push(format!("σ >= τ_n = {tn} but τ̄_n = {:?}", tr.tau_bar_n));
                    }
                }
            }
            if tr.tau_bar_n.is_some_and(|tb| tb < tn) {
                rep.violations.push(format!("τ̄_n = {:?} < τ_n = {tn} although n > S(x)", tr.tau_bar_n));
            }
        }
        (None, Some(t0)) => {
            rep.resolved = true;
            if let Some(s) = sigma {
                if tr.tau_bar_n.is_some_and(|tb| tb <= s) {
                    rep.violations.push(format!("σ = {s} < τ_n but τ̄_n <= σ"));
                }
            }
            if tr.tau_bar_n.is_some() {
                rep.violations.push(format!("τ̄_n = {:?} before τ_n > τ_0 = {t0}", tr.tau_bar_n));
            }
        }
        (None, None) => {}
    }
}

/// Result of [`supermartingale_check`].
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SupermartingaleReport {
    pub r: f64,
    pub paths: u64,
    pub steps: u64,
    /// `max(E[S_{k+1} | F_k] − S_k, 0)`.
    pub max_violation: f64,
    /// The same, relative to `S'_k`.
    pub max_relative_violation: f64,
    pub jump_checks: u64,
    pub jump_violations: u64,
    pub stage_product: f64,
    pub overruns: u64,
}

/// `Γ_j h_{2,j,r}(T_n x)` with `h_{2,0,r} = r^n`.
fn stage_value(sp: &SuperharmonicParams, n: i64, j: usize, x: &[i64]) -> f64 {
    if j == 0 {
        return sp.r.powi(n as i32);
    }
    let mut y = x.to_vec();
    y[0] = n - x[0];
    sp.stage[j] * eval_h2kr(sp, j, &y)
}

/// Simulate X paths and verify `E[S_{k+1} | F_k] <= S_k` at every visited step by
/// enumerating the increment distribution, where `S_k = S'_k − k λ(1/r − 1) Σγ r^n`.
pub fn supermartingale_check(
    params: &NetworkParams,
    n: i64,
    r: f64,
    x: &[i64],
    seed: u64,
    paths: u64,
    horizon_mult: u64,
) -> Result<SupermartingaleReport> {
    check_start(params, n, x)?;
    let sp = gamma_constants(params, r)?;
    let d = params.dim();
    let incs = Increment::all(d);
    let probs = params.increment_probs();
    let c = cdf(&probs);
    let comp = sp.compensator(params) * r.powi(n as i32);
    let horizon = (horizon_mult * n as u64) as usize;
    let mut rep = SupermartingaleReport {
        r,
        paths,
        steps: 0,
        max_violation: 0.0,
        max_relative_violation: 0.0,
        jump_checks: 0,
        jump_violations: 0,
        stage_product: sp.stage[d],
        overruns: 0,
    };
    for p in 0..paths {
        let mut rng = sample_rng(seed, p);
        let mut s = x.to_vec();
        let mut stage = 0usize;
        let mut finished = false;
        for _k in 0..=horizon {
            let total = sum_s(&s);
            if total == n || total == 0 {
                finished = true;
                break;
            }
            let now = stage_value(&sp, n, stage, &s);
            let next_stage = if stage < d && s[stage] == 0 { stage + 1 } else { stage };
            if next_stage != stage && next_stage >= 2 {
                // k = σ_{j-1,j} with j = next_stage: X_k ∈ ∂_j
                rep.jump_checks += 1;
                let mut y = s.clone();
                y[0] = n - s[0];
                let ratio = eval_h2kr(&sp, next_stage - 1, &y) / eval_h2kr(&sp, next_stage, &y);
                if ratio < sp.gamma_pair[next_stage - 2] * (1.0 - 1e-12) {
                    rep.jump_violations += 1;
                }
            }
            let mut e = NeumaierSum::default();
            for (v, &inc) in incs.iter().enumerate() {
                let mut t = s.clone();
                step_x_in_place(&mut t, inc);
                e.add(probs[v] * stage_value(&sp, n, next_stage, &t));
            }
            // E[S_{k+1}] − S_k = E[S'_{k+1}] − comp − S'_k
            let gap = e.total() - comp - now;
            rep.steps += 1;
            if gap > 0.0 {
                rep.max_violation = rep.max_violation.max(gap);
                rep.max_relative_violation = rep.max_relative_violation.max(gap / now);
            }
            let inc = incs[pick(&c, rng.gen::<f64>())];
            step_x_in_place(&mut s, inc);
            stage = next_stage;
        }
        if !finished {
            rep.overruns += 1;
        }
    }
    Ok(rep)
}
