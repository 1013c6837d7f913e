use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use num_rational::BigRational;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};
use tandem_core::bounds::*;
use tandem_core::loglinear::JacksonRouting;
use tandem_core::model::*;
use tandem_core::oracle::*;
use tandem_core::scalar::{format_rational, parse_rational, ratio_to_f64};
use tandem_core::simulate::*;
use tandem_core::systems::*;
use tandem_core::tandem::*;
use tandem_core::Scalar;

use crate::{
    ApproxArgs, BoundsArgs, Cli, Command, CoupleArgs, ExactArgs, Failure, Method, Mode, SimulateArgs, SweepArgs,
    VerifyCommand, BUDGET_ENV,
};

type Res<T> = std::result::Result<T, Failure>;

/// Weights used when a verification is asked for a dimension without rates.
const DEFAULT_WEIGHTS: [u64; 16] = [3, 5, 7, 9, 4, 6, 8, 10, 11, 13, 12, 14, 15, 17, 16, 18];

/// Rate gap below which float evaluation of the closed form is flagged.
const NEAR_EQUAL_GAP: f64 = 1e-3;

pub fn run(cli: &Cli) -> Res<()> {
    if cli.threads == 0 {
        return Err(Failure::Usage("--threads must be at least 1".into()));
    }
    match &cli.command {
        Command::Approx(a) => approx(cli, a),
        Command::Exact(a) => exact(cli, a),
        Command::Simulate(a) => simulate(cli, a),
        Command::Bounds(a) => bounds(cli, a),
        Command::Verify { what } => verify(cli, what),
        Command::Sweep(a) => sweep(cli, a),
        Command::Couple(a) => couple(cli, a),
    }
}

fn load_params(cli: &Cli, default_dim: Option<usize>) -> Res<NetworkParams> {
    if let Some(path) = &cli.params {
        let text = fs::read_to_string(path).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
        return Ok(NetworkParams::from_json(&text)?);
    }
    if let (Some(l), Some(mu)) = (&cli.lambda, &cli.mu) {
        let mu = mu.iter().map(|m| parse_rational(m)).collect::<tandem_core::Result<Vec<_>>>()?;
        return Ok(NetworkParams::new(parse_rational(l)?, mu)?);
    }
    match default_dim {
        Some(d) if (1..=DEFAULT_WEIGHTS.len()).contains(&d) => Ok(NetworkParams::from_weights(1, &DEFAULT_WEIGHTS[..d])?),
        Some(_) => Err(Failure::Usage(format!("--d must be in 1..={}", DEFAULT_WEIGHTS.len()))),
        None => Err(Failure::Usage("network parameters are required: --params FILE or --lambda L --mu M1,M2,..".into())),
    }
}

fn budget() -> Res<u128> {
    match std::env::var(BUDGET_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| Failure::Usage(format!("{BUDGET_ENV} must be a state count, got {v:?}"))),
        Err(_) => Ok(DEFAULT_BUDGET),
    }
}

fn parse_state(s: &str, d: usize, what: &str) -> Res<Vec<i64>> {
    let v = parse_point(s)?;
    if v.len() != d {
        return Err(Failure::Usage(format!("{what} has {} coordinates, the network has {d}", v.len())));
    }
    Ok(v)
}

fn check_x(x: &[i64], n: i64) -> Res<()> {
    if x.iter().any(|&v| v < 0) {
        return Err(Failure::Usage(format!("x = {x:?} has a negative coordinate")));
    }
    if n < 1 || sum_s(x) > n {
        return Err(Failure::Usage(format!("need n >= 1 and S(x) <= n; S(x) = {}, n = {n}", sum_s(x))));
    }
    Ok(())
}

fn emit(cli: &Cli, text: &str) -> Res<()> {
    match &cli.out {
        Some(path) => write_file(path, text.as_bytes()),
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(text.as_bytes()).and_then(|_| out.flush()).map_err(|e| Failure::Usage(e.to_string()))
        }
    }
}

fn emit_json(cli: &Cli, v: &Value) -> Res<()> {
    emit(cli, &(serde_json::to_string_pretty(v).expect("json") + "\n"))
}

fn write_file(path: &Path, bytes: &[u8]) -> Res<()> {
    fs::write(path, bytes).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))
}

fn joined<T: ToString>(v: &[T]) -> String {
    v.iter().map(|c| c.to_string()).collect::<Vec<_>>().join(",")
}

fn header(d: usize) -> String {
    joined(&(1..=d).map(|i| format!("x{i}")).collect::<Vec<_>>())
}

fn approx(cli: &Cli, a: &ApproxArgs) -> Res<()> {
    let p = load_params(cli, None)?;
    let d = p.dim();
    let (x, y) = match (&a.x, &a.y) {
        (Some(xs), _) => {
            let n = a.n.ok_or_else(|| Failure::Usage("--x needs --n".into()))?;
            let x = parse_state(xs, d, "x")?;
            check_x(&x, n)?;
            let y = StateX::new(x.clone())?.to_y(n).0;
            (Some(x), y)
        }
        (None, Some(ys)) => (None, parse_state(ys, d, "y")?),
        (None, None) => return Err(Failure::Usage("give --x with --n, or --y".into())),
    };
    let equal = p.check_distinct().is_err();
    if equal && !(d == 3 && p.mus().iter().all(|&m| m == p.mu(1))) {
        p.check_distinct()?;
    }
    if !equal && a.mode == Mode::Float && p.min_rate_gap() < NEAR_EQUAL_GAP {
        eprintln!(
            "warning: service rates differ by {:.1e}; float evaluation may lose digits, consider --mode rational",
            p.min_rate_gap()
        );
    }
    let (value, exact_text) = match a.mode {
        Mode::Float => {
            let v: f64 = if equal {
                let (l, mu) = p.rates::<f64>();
                prob_tau_finite_equal_rates_d3(&l, &mu, &y)?
            } else {
                prob_tau_finite(&p, &y)?
            };
            (v, None)
        }
        Mode::Rational => {
            let v: BigRational = if equal {
                let (l, mu) = p.rates::<BigRational>();
                prob_tau_finite_equal_rates_d3(&l, &mu, &y)?
            } else {
                prob_tau_finite(&p, &y)?
            };
            (ratio_to_f64(&v), Some(format_rational(&v)))
        }
    };
    if let Some(path) = &a.breakdown {
        if equal {
            return Err(Failure::Usage("no per-term breakdown for the equal-rates expression".into()));
        }
        let csv = match a.mode {
            Mode::Float => breakdown_csv::<f64>(&p, &y, |v| format!("{v:e}"))?,
            Mode::Rational => breakdown_csv::<BigRational>(&p, &y, format_rational)?,
        };
        write_file(path, csv.as_bytes())?;
    }
    let w_n = a.n.filter(|_| x.is_some()).map(|n| -value.ln() / n as f64);
    let report = json!({
        "params": p,
        "mode": if a.mode == Mode::Float { "float" } else { "rational" },
        "n": a.n.filter(|_| x.is_some()),
        "x": x,
        "y": y,
        "value": value,
        "exact": exact_text,
        "w_n": w_n,
        "terms": if equal { None } else { Some((1usize << d) - 1) },
    });
    emit_json(cli, &report)
}

fn breakdown_csv<S: Scalar>(p: &NetworkParams, y: &[i64], fmt: impl Fn(&S) -> String) -> Res<String> {
    let rows = TandemFormula::<S>::new(p)?.breakdown(y)?;
    let d = p.dim();
    let mut out = String::from("d,subset,c,beta");
    for j in 2..=d {
        let _ = write!(out, ",alpha{j}");
    }
    out.push_str(",term\n");
    for r in rows {
        let labels: Vec<String> = r.subset.iter().map(|l| l.to_string()).collect();
        let _ = write!(out, "{},{},{},{}", r.d, labels.join(" "), fmt(&r.c), fmt(&r.beta));
        for a in &r.alpha {
            let _ = write!(out, ",{}", fmt(a));
        }
        let _ = writeln!(out, ",{}", fmt(&r.term));
    }
    Ok(out)
}

fn solve_opts(tol: f64, omega: f64, max_sweeps: usize) -> Res<SolveOptions> {
    if !(tol > 0.0) || !(omega > 0.0 && omega < 2.0) || max_sweeps == 0 {
        return Err(Failure::Usage("need tol > 0, 0 < omega < 2 and max-sweeps >= 1".into()));
    }
    Ok(SolveOptions { tol, omega, max_sweeps, budget: budget()? })
}

fn exact(cli: &Cli, a: &ExactArgs) -> Res<()> {
    let p = load_params(cli, None)?;
    let x = a.x.as_deref().map(|s| parse_state(s, p.dim(), "x")).transpose()?;
    if let Some(x) = &x {
        check_x(x, a.n as i64)?;
    }
    let grid = solve_exact(&p, a.n, &solve_opts(a.tol, a.omega, a.max_sweeps)?)?;
    if let Some(path) = &a.csv {
        let mut buf = vec![];
        grid.write_csv(&mut buf)?;
        write_file(path, &buf)?;
    }
    if let Some(path) = &a.binary {
        let mut buf = vec![];
        grid.write_binary(&mut buf)?;
        write_file(path, &buf)?;
    }
    let value = x.as_ref().and_then(|x| grid.value(x));
    let report = json!({
        "params": p,
        "n": a.n,
        "d": p.dim(),
        "states": grid.space().len(),
        "iterations": grid.iterations,
        "residual": grid.residual,
        "x": x,
        "value": value,
        "v_n": x.as_ref().and_then(|x| grid.v_n(x)),
    });
    emit_json(cli, &report)
}

fn simulate(cli: &Cli, a: &SimulateArgs) -> Res<()> {
    let p = load_params(cli, None)?;
    let x = parse_state(&a.x, p.dim(), "x")?;
    check_x(&x, a.n)?;
    if a.samples < 2 || a.horizon_mult == 0 {
        return Err(Failure::Usage("need at least 2 samples and horizon-mult >= 1".into()));
    }
    let cfg = SimConfig { samples: a.samples, seed: a.seed, horizon_mult: a.horizon_mult, threads: cli.threads, ..Default::default() };
    let mut rep = match a.method {
        Method::Mc => mc_estimate(&p, a.n, &x, &cfg)?,
        Method::Is => is_estimate(&p, a.n, &x, &cfg)?,
    };
    if a.reference {
        let grid = solve_exact(&p, a.n as usize, &SolveOptions { budget: budget()?, ..Default::default() })?;
        rep = rep.with_reference(grid.value(&x).expect("x in A_n"));
    }
    emit_json(cli, &json!({ "params": p, "report": rep }))
}

fn bounds(cli: &Cli, a: &BoundsArgs) -> Res<()> {
    let p = load_params(cli, None)?;
    let d = p.dim();
    let states: Vec<Vec<i64>> = match &a.x {
        Some(s) => {
            let x = parse_state(s, d, "x")?;
            check_x(&x, a.n)?;
            vec![x]
        }
        None => {
            if a.n < 1 {
                return Err(Failure::Usage("n must be at least 1".into()));
            }
            let space = StateSpace::new(d, a.n as usize, budget()?)?;
            space.enumerate().chunks(d).map(|c| c.to_vec()).collect()
        }
    };
    let grid = if a.oracle {
        Some(solve_exact(&p, a.n as usize, &SolveOptions { budget: budget()?, ..Default::default() })?)
    } else {
        None
    };
    let region = RateRegion::new(&p);
    let mut out = format!("{},g_n,lower,rel_bound,in_rbar", header(d));
    if grid.is_some() {
        out.push_str(",oracle");
    }
    out.push('\n');
    for x in &states {
        let _ = write!(
            out,
            "{},{:e},{:e},{:e},{}",
            joined(x),
            gn(&p, a.n, x),
            lower_bound_gn(&p, a.n, x),
            relative_error_bound(&p, a.n, x, a.eps),
            u8::from(region.in_rbar(a.n, x))
        );
        if let Some(g) = &grid {
            let _ = write!(out, ",{:e}", g.value(x).expect("x in A_n"));
        }
        out.push('\n');
    }
    emit(cli, &out)
}

/// All tails in `{0..=m}^{d-1}`.
fn tails(d: usize, m: i64) -> Vec<Vec<i64>> {
    let mut out = vec![];
    let mut t = vec![0i64; d - 1];
    loop {
        out.push(t.clone());
        let mut i = 0;
        while i < t.len() && t[i] == m {
            t[i] = 0;
            i += 1;
        }
        if i == t.len() {
            return out;
        }
        t[i] += 1;
    }
}

fn with_excess(tail: &[i64], e: i64) -> Vec<i64> {
    let mut y = vec![e + tail.iter().sum::<i64>()];
    y.extend_from_slice(tail);
    y
}

fn verify(cli: &Cli, what: &VerifyCommand) -> Res<()> {
    let (report, ok) = match what {
        VerifyCommand::System { d, mode, tol } => verify_systems(&load_params(cli, *d)?, *d, *mode, *tol)?,
        VerifyCommand::Formula { d, grid, mode, tol } => verify_formula(&load_params(cli, *d)?, *grid, *mode, *tol)?,
        VerifyCommand::Bounds { d, states, n, r, seed } => verify_bounds(&load_params(cli, *d)?, *states, *n, *r, *seed)?,
        VerifyCommand::Coupling { d, paths, n, seed, horizon_mult } => {
            verify_coupling(&load_params(cli, *d)?, *paths, *n, *seed, *horizon_mult)?
        }
    };
    emit_json(cli, &report)?;
    if ok {
        Ok(())
    } else {
        Err(Failure::Check("verification failed".into()))
    }
}

fn verify_systems(p: &NetworkParams, d: Option<usize>, mode: Mode, tol: f64) -> Res<(Value, bool)> {
    let top = d.unwrap_or(p.dim());
    if top == 0 || top > p.dim() {
        return Err(Failure::Usage(format!("--d must be in 1..={}", p.dim())));
    }
    fn one<S: Scalar>(p: &NetworkParams, k: usize, tol: f64) -> Res<(Value, bool)> {
        let r = JacksonRouting::<S>::tandem(p);
        let (g, sol) = tandem_system::<S>(p, k)?;
        let rep = verify_system(&r, &g, &sol, tol)?;
        let gate = check_db_determined_gate(&sol);
        let ok = rep.passed() && gate;
        Ok((json!({ "d": k, "vertices": g.vertices.len(), "passed": ok, "gate": gate, "report": rep }), ok))
    }
    let mut systems = vec![];
    let mut ok = true;
    for k in 1..=top {
        let (v, pass) = match mode {
            Mode::Float => one::<f64>(p, k, tol)?,
            Mode::Rational => one::<BigRational>(p, k, tol)?,
        };
        ok &= pass;
        systems.push(v);
    }
    Ok((json!({ "check": "system", "params": p, "passed": ok, "systems": systems }), ok))
}

fn verify_formula(p: &NetworkParams, grid: i64, mode: Mode, tol: f64) -> Res<(Value, bool)> {
    if grid < 1 {
        return Err(Failure::Usage("--grid must be at least 1".into()));
    }
    fn run<S: Scalar>(p: &NetworkParams, grid: i64) -> Res<(f64, usize, f64, usize, usize)> {
        let f = TandemFormula::<S>::new(p)?;
        let r = JacksonRouting::<S>::tandem(p);
        let (mut boundary, mut inexact, mut residual, mut nb, mut nr) = (0.0f64, 0, 0.0f64, 0, 0);
        for t in tails(p.dim(), 2) {
            let v = f.eval(&with_excess(&t, 0))?;
            boundary = boundary.max((v.to_f64() - 1.0).abs());
            if v != S::one() {
                inexact += 1;
            }
            nb += 1;
            for e in 1..=grid {
                let y = with_excess(&t, e);
                // residual against the summands it is built from
                let size: f64 = f.breakdown(&y)?.iter().map(|row| row.term.to_f64().abs()).sum();
                let res = harmonic_residual(&r, |z| f.eval_unchecked(z), &y).to_f64();
                residual = residual.max(res.abs() / size);
                nr += 1;
            }
        }
        Ok((boundary, inexact, residual, nb, nr))
    }
    let (boundary, inexact, residual, nb, nr) = match mode {
        Mode::Float => run::<f64>(p, grid)?,
        Mode::Rational => run::<BigRational>(p, grid)?,
    };
    let tol = if mode == Mode::Rational { 0.0 } else { tol };
    let ok = boundary <= tol && residual <= tol && (mode == Mode::Float || inexact == 0);
    Ok((
        json!({
            "check": "formula",
            "params": p,
            "passed": ok,
            "tol": tol,
            "boundary_states": nb,
            "max_boundary_error": boundary,
            "boundary_not_exactly_one": inexact,
            "residual_states": nr,
            "max_relative_residual": residual,
        }),
        ok,
    ))
}

fn verify_bounds(p: &NetworkParams, states: usize, n: usize, r: Option<f64>, seed: u64) -> Res<(Value, bool)> {
    let d = p.dim();
    let r = r.unwrap_or_else(|| default_r(p));
    let sp = gamma_constants(p, r)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut positive, mut worst) = (0usize, f64::NEG_INFINITY);
    for _ in 0..states {
        let mut y: Vec<i64> = (0..d).map(|_| rng.gen_range(0..10)).collect();
        y[0] = rng.gen_range(-5..30);
        for k in 1..=d {
            let res = direct_residual(p, |z| eval_h2kr(&sp, k, z), &y);
            worst = worst.max(res / eval_h2kr(&sp, k, &y));
            if res > 0.0 {
                positive += 1;
            }
        }
    }
    let f = TandemFormula::<f64>::new(p)?;
    let mut dominated = 0usize;
    let mut probes = 0usize;
    for t in tails(d, 2) {
        for e in 0..=10 {
            let y = with_excess(&t, e);
            let v = f.eval(&y)?;
            probes += 1;
            if v > ptau_upper_bound(&sp, &y) * (1.0 + 1e-12) {
                dominated += 1;
            }
        }
    }
    let grid = solve_exact(p, n, &SolveOptions { budget: budget()?, ..Default::default() })?;
    let mut lower_bad = 0usize;
    for x in grid.space().enumerate().chunks(d) {
        if lower_bound_gn(p, n as i64, x) > grid.value(x).expect("x in A_n") + 1e-12 {
            lower_bad += 1;
        }
    }
    let nn = (2 * n as i64).max(4);
    let mut x0 = vec![0i64; d];
    x0[0] = nn / 2;
    let sm = supermartingale_check(p, nn, r, &x0, seed, 200, 64)?;
    let ok = positive == 0 && dominated == 0 && lower_bad == 0 && sm.max_violation <= 1e-12 && sm.jump_violations == 0;
    Ok((
        json!({
            "check": "bounds",
            "params": p,
            "r": r,
            "passed": ok,
            "superharmonic": { "states": states, "positive_residuals": positive, "max_relative_residual": worst },
            "upper_bound": { "probes": probes, "violations": dominated },
            "lower_bound": { "n": n, "states": grid.space().len(), "violations": lower_bad },
            "supermartingale": sm,
        }),
        ok,
    ))
}

fn verify_coupling(p: &NetworkParams, paths: u64, n: i64, seed: u64, horizon_mult: u64) -> Res<(Value, bool)> {
    if n < 2 {
        return Err(Failure::Usage("coupling needs n >= 2".into()));
    }
    let d = p.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut resolved, mut bad, mut early) = (0u64, 0u64, 0u64);
    let mut examples = vec![];
    for i in 0..paths {
        let x = loop {
            let x: Vec<i64> = (0..d).map(|_| rng.gen_range(0..=n / 2)).collect();
            if (1..n).contains(&sum_s(&x)) {
                break x;
            }
        };
        let (_, rep) = coupled_run(p, n, &x, seed.wrapping_add(i), horizon_mult)?;
        early += u64::from(rep.tau0_before_sigma);
        if rep.resolved {
            resolved += 1;
            if !rep.violations.is_empty() {
                bad += 1;
                if examples.len() < 5 {
                    examples.push(json!({ "x": x, "seed": seed.wrapping_add(i), "violations": rep.violations }));
                }
            }
        }
    }
    let ok = bad == 0;
    Ok((
        json!({
            "check": "coupling",
            "params": p,
            "n": n,
            "passed": ok,
            "paths": paths,
            "resolved": resolved,
            "violating": bad,
            "tau0_before_sigma": early,
            "examples": examples,
        }),
        ok,
    ))
}

fn sweep(cli: &Cli, a: &SweepArgs) -> Res<()> {
    let p = load_params(cli, None)?;
    let d = p.dim();
    let ax = &a.axes;
    if ax.len() != 2 || ax[0] == ax[1] || ax.iter().any(|&i| i == 0 || i > d) {
        return Err(Failure::Usage(format!("--axes needs two distinct coordinates in 1..={d}")));
    }
    if a.n < 2 {
        return Err(Failure::Usage("n must be at least 2".into()));
    }
    let grid = solve_exact(&p, a.n as usize, &SolveOptions { tol: a.tol, budget: budget()?, ..Default::default() })?;
    // exact arithmetic: far from the exit the closed form is a small difference of O(1) terms
    let f = TandemFormula::<BigRational>::new(&p)?;
    let region = RateRegion::new(&p);
    let nf = a.n as f64;
    let mut out = format!("{},in_rbar,oracle,approx,V_n,W_n,rel_err,prob_rel_err,bound\n", header(d));
    for i in 0..=a.n {
        for j in 0..=a.n - i {
            // V is undefined at the origin and both values are 1 on the exit level
            if i + j == 0 || i + j == a.n {
                continue;
            }
            let mut x = vec![0i64; d];
            x[ax[0] - 1] = i;
            x[ax[1] - 1] = j;
            let v = grid.value(&x).expect("x in A_n");
            let w = ratio_to_f64(&f.eval(&affine_map_tn(a.n, &x))?);
            let (vn, wn) = (-v.ln() / nf, -w.ln() / nf);
            let _ = writeln!(
                out,
                "{},{},{:e},{:e},{},{},{},{},{:e}",
                joined(&x),
                u8::from(region.in_rbar(a.n, &x)),
                v,
                w,
                vn,
                wn,
                (vn - wn) / vn,
                (w - v) / v,
                relative_error_bound(&p, a.n, &x, a.eps)
            );
        }
    }
    emit(cli, &out)
}

fn couple(cli: &Cli, a: &CoupleArgs) -> Res<()> {
    let p = load_params(cli, None)?;
    let x = parse_state(&a.x, p.dim(), "x")?;
    check_x(&x, a.n)?;
    let (trace, rep) = coupled_run(&p, a.n, &x, a.seed, a.horizon_mult)?;
    emit_json(cli, &json!({ "params": p, "n": a.n, "x": x, "seed": a.seed, "report": rep, "trace": trace }))
}
