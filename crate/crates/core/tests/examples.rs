//! Worked examples that cross module boundaries, each checked against an
//! independent computation written here.

use num_rational::BigRational;
use num_traits::{One, Zero};
use tandem_core::bounds::*;
use tandem_core::loglinear::*;
use tandem_core::model::*;
use tandem_core::oracle::*;
use tandem_core::systems::*;
use tandem_core::tandem::*;

fn q(p: i64, d: i64) -> BigRational {
    BigRational::new(p.into(), d.into())
}

fn paper4() -> NetworkParams {
    NetworkParams::from_weights(1, &[3, 7, 2, 5]).unwrap()
}

fn d8() -> NetworkParams {
    NetworkParams::from_weights(1, &[3, 5, 7, 9, 4, 6, 8, 10]).unwrap()
}

/// Every y with `y(1) ∈ -3..=6` and the other coordinates in `0..=3`.
fn probe_set(d: usize) -> Vec<Vec<i64>> {
    let mut out = vec![];
    let mut tail = vec![0i64; d - 1];
    loop {
        for y1 in -3..=6 {
            let mut y = vec![y1];
            y.extend(&tail);
            out.push(y);
        }
        let mut i = 0;
        while i < tail.len() && tail[i] == 3 {
            tail[i] = 0;
            i += 1;
        }
        if i == tail.len() {
            return out;
        }
        tail[i] += 1;
    }
}

fn pow_loop(b: f64, e: i64) -> f64 {
    let mut v = 1.0;
    for _ in 0..e.abs() {
        v *= b;
    }
    if e < 0 {
        1.0 / v
    } else {
        v
    }
}

/// Printed two-node expression, coded from scratch.
fn two_node(lambda: f64, mu: [f64; 2], y: [i64; 2]) -> f64 {
    let (r1, r2) = (lambda / mu[0], lambda / mu[1]);
    let k = (mu[1] - lambda) / (mu[1] - mu[0]);
    pow_loop(r2, y[0] - y[1]) - k * pow_loop(r2, y[0] - y[1]) * pow_loop(r1, y[1]) + k * pow_loop(r1, y[0])
}

#[test]
fn char_poly_tandem_point_equals_one() {
    let p = paper4();
    let pt = Point::new(p.rho_exact(4), vec![q(1, 1); 3]);
    assert!(char_poly_tandem(&p, &pt).unwrap().is_one());
    let r = JacksonRouting::<BigRational>::tandem(&p);
    assert!(char_poly_general(&r, Subset::EMPTY, &pt).unwrap().is_one());
    let with2 = char_poly_general(&r, Subset::from_labels(&[2]), &pt).unwrap();
    assert!((with2 - char_poly_general(&r, Subset::EMPTY, &pt).unwrap()).is_zero());
}

#[test]
fn c_at_worked_point() {
    let p = d8();
    let rho: Vec<BigRational> = (1..=8).map(|i| p.rho_exact(i)).collect();
    let v = Subset::from_labels(&[3, 6]);
    let pt = Point::new(p.rho_exact(8), alphastar(v, &rho, 8));
    let got = c_tandem(&p, 6, &pt).unwrap();
    let want = p.mu_exact(6).clone() * (q(1, 1) - rho[5].clone() / rho[2].clone());
    assert_eq!(got, want);
    let r = JacksonRouting::<BigRational>::tandem(&p);
    assert_eq!(c_general(&r, 6, &pt).unwrap(), want);
}

#[test]
fn conjugate_partner_along_a_six_edge() {
    // {3,6} and {3,5,6} share every coordinate but α(6): ρ_3 against ρ_5
    let p = d8();
    let rho: Vec<f64> = (1..=8).map(|i| p.rho(i)).collect();
    let base = Point::new(rho[5], alphastar(Subset::from_labels(&[3, 6]), &rho, 8));
    let r = JacksonRouting::<f64>::tandem(&p);
    let (a, b) = conjugate_point(&r, &base, 6).unwrap();
    let mut roots = [rho[2], rho[4]];
    roots.sort_by(f64::total_cmp);
    assert!((a - roots[0]).abs() < 1e-14 && (b - roots[1]).abs() < 1e-14, "{a} {b}");
    let partner = alphastar(Subset::from_labels(&[3, 5, 6]), &rho, 8);
    assert!((partner[4] - rho[4]).abs() < 1e-15);
    // α(5) has no edge at {3,6}: 5 ∉ V, so the α(5)-roots are not α* values
    let (a5, b5) = conjugate_point(&r, &base, 5).unwrap();
    assert!((a5 * b5 - rho[2] * rho[2] * p.mu(5) / p.mu(4)).abs() < 1e-14);
    assert!((a5 - rho[3]).abs() > 1e-3 && (b5 - rho[3]).abs() > 1e-3);
}

#[test]
fn perturbed_coefficient_breaks_every_edge_at_vertex() {
    let p = NetworkParams::from_weights(1, &[3, 7, 2, 5, 4]).unwrap();
    let r = JacksonRouting::<f64>::tandem(&p);
    let (g, mut sol) = tandem_system::<f64>(&p, 4).unwrap();
    assert!(verify_system(&r, &g, &sol, 1e-12).unwrap().passed());
    let v = g.index_of(Subset::from_labels(&[2, 4])).unwrap();
    sol.c[v] *= 1.01;
    let rep = verify_system(&r, &g, &sol, 1e-12).unwrap();
    let degree = g.edges.iter().filter(|e| e.0 == v || e.1 == v).count();
    assert!(degree > 0);
    assert!(!rep.condition(4).passed);
    assert_eq!(rep.condition(4).failures, degree);
    for k in [1, 2, 3, 5] {
        assert!(rep.condition(k).passed);
    }
}

#[test]
fn single_vertex_with_all_loops_fails_only_top_loop() {
    // a d-loop needs α(d) = β; with α ≡ 1 and β = ρ_d only the loops 2..d-1 hold
    let p = paper4();
    let r = JacksonRouting::<BigRational>::tandem(&p);
    let g = LabeledGraph {
        vertices: vec![Subset::from_labels(&[4])],
        edges: vec![],
        loops: vec![Subset::range(2, 4)],
    };
    let sol = HarmonicSolution { beta: p.rho_exact(4), alpha: vec![vec![q(1, 1); 3]], c: vec![q(1, 1)] };
    let rep = verify_system(&r, &g, &sol, 0.0).unwrap();
    for k in 1..=4 {
        assert!(rep.condition(k).passed);
    }
    assert_eq!(rep.condition(5).failures, 1);
    assert_eq!(rep.condition(5).witness.as_deref(), Some("vertex {4} loop 4"));
    let g3 = LabeledGraph { loops: vec![Subset::range(2, 3)], ..g };
    for l in [2, 3] {
        let pt = sol.point(0);
        assert!(char_poly_general(&r, Subset::EMPTY.with(l), &pt).unwrap().is_one());
    }
    assert!(g3.check_regular(Subset::range(2, 4)).is_err());
}

#[test]
fn hg_at_origin_sums_coefficients() {
    let p = d8();
    let (_, sol) = tandem_system::<BigRational>(&p, 5).unwrap();
    let y = vec![0i64; 8];
    let total: BigRational = sol.c.iter().cloned().fold(BigRational::zero(), |a, b| a + b);
    assert_eq!(eval_hg(&sol, &y), total);
}

#[test]
fn two_node_graph_sum_is_the_printed_formula() {
    let p = NetworkParams::from_f64(0.15, &[0.5, 0.35]).unwrap();
    let (lambda, mu) = (p.lambda(), [p.mu(1), p.mu(2)]);
    let w1 = (mu[1] - lambda) / (mu[1] - mu[0]);
    let (_, s1) = tandem_system::<f64>(&p, 1).unwrap();
    let (_, s2) = tandem_system::<f64>(&p, 2).unwrap();
    for y1 in 0..20 {
        for y2 in 0..=y1 {
            let y = [y1, y2];
            let f = w1 * eval_hg(&s1, &y) + eval_hg(&s2, &y);
            let want = two_node(lambda, mu, y);
            assert!((f - want).abs() <= 1e-13 * want.abs(), "{y:?}");
            let lib = prob_tau_finite_d2::<f64>(&p, &y).unwrap();
            assert!((lib - want).abs() <= 1e-14 * want);
        }
    }
}

#[test]
fn surface_atom_is_harmonic_in_interior() {
    let p = paper4();
    let r = JacksonRouting::<BigRational>::tandem(&p);
    let rho: Vec<BigRational> = (1..=4).map(|i| p.rho_exact(i)).collect();
    let pt = Point::new(p.rho_exact(3), alphastar(Subset::from_labels(&[1, 3]), &rho, 4));
    assert!(char_poly_general(&r, Subset::EMPTY, &pt).unwrap().is_one());
    for y in [[5, 1, 1, 1], [9, 2, 3, 1], [0, 4, 4, 4]] {
        let res = harmonic_residual(&r, |z| pt.atom(z), &y);
        assert!(res.is_zero(), "{y:?}");
    }
}

#[test]
fn hstar_is_harmonic_on_face_two() {
    let p = NetworkParams::from_weights(2, &[9, 5, 11, 7, 13]).unwrap();
    let r = JacksonRouting::<f64>::tandem(&p);
    for d in 1..=5 {
        for y in [[4, 0, 1, 2, 0], [7, 0, 0, 0, 3], [2, 0, 2, 0, 0]] {
            let h = |z: &[i64]| eval_hstar::<f64>(d, &p, z).unwrap();
            let res = harmonic_residual(&r, h, &y);
            assert!(res.abs() <= 1e-12 * h(&y).abs().max(1e-300), "d={d} {y:?} {res:e}");
        }
    }
}

#[test]
fn gate_accepts_unit_alpha() {
    let sol = HarmonicSolution { beta: 0.5, alpha: vec![vec![1.0, 0.3]], c: vec![1.0] };
    assert!(check_db_determined_gate(&sol));
    for d in 1..=4 {
        let (_, sol) = tandem_system::<BigRational>(&paper4(), d).unwrap();
        assert!(check_db_determined_gate(&sol));
    }
}

fn paper_p1() -> JacksonRouting<BigRational> {
    JacksonRouting::new(vec![
        vec![q(0, 1), q(1, 7), q(0, 1)],
        vec![q(0, 1), q(0, 1), q(4, 7)],
        vec![q(2, 7), q(0, 1), q(0, 1)],
    ])
    .unwrap()
}

fn paper_p2() -> JacksonRouting<BigRational> {
    let rows = [
        [0, 5, 0, 0, 2],
        [0, 0, 20, 0, 0],
        [10, 0, 0, 10, 0],
        [0, 0, 0, 0, 25],
        [10, 0, 0, 18, 0],
    ];
    JacksonRouting::new(rows.iter().map(|r| r.iter().map(|&v| q(v, 100)).collect()).collect()).unwrap()
}

#[test]
fn paper_matrices_fail_the_lumped_check() {
    let ext = simple_extension_check(&paper_p1(), &paper_p2()).unwrap();
    assert!(!ext.is_extension);
}

#[test]
fn back_edge_is_not_an_extension() {
    let p1 = paper_p1();
    let mut m = vec![vec![q(0, 1); 4]; 4];
    for i in 0..3 {
        for j in 0..3 {
            m[i][j] = p1.p(i, j).clone() * q(9, 10);
        }
    }
    m[3][1] = q(1, 20);
    m[0][3] = q(1, 20);
    let p2 = JacksonRouting::new(m).unwrap();
    let ext = simple_extension_check(&p1, &p2).unwrap();
    assert!(!ext.is_extension);
}

#[test]
fn lumped_paper_matrix_fixes_p1() {
    // p' lumps jumps into nodes 3,4 into exits; its normalisation is the matrix p1 must equal
    let ext = simple_extension_check(&paper_p1(), &paper_p2()).unwrap();
    assert_eq!(ext.scale, q(45, 100));
    let want = [[0, 1, 0], [0, 0, 4], [4, 0, 0]];
    for i in 0..3 {
        for j in 0..3 {
            assert_eq!(ext.p_prime[i][j].clone() / ext.scale.clone(), q(want[i][j], 9), "({i},{j})");
        }
    }
    let fixed = JacksonRouting::new(
        want.iter().map(|r| r.iter().map(|&v| q(v, 9)).collect()).collect(),
    )
    .unwrap();
    assert!(simple_extension_check(&fixed, &paper_p2()).unwrap().is_extension);
}

#[test]
fn extension_of_a_hand_built_two_node_solution() {
    // p1 = lumped paper matrix; node 1 feeds node 2 feeds the exit, β = α(2) = ρ_1
    let p1 = JacksonRouting::new(vec![
        vec![q(0, 1), q(1, 9), q(0, 1)],
        vec![q(0, 1), q(0, 1), q(4, 9)],
        vec![q(4, 9), q(0, 1), q(0, 1)],
    ])
    .unwrap();
    let p2 = paper_p2();
    let g1 = LabeledGraph {
        vertices: vec![Subset::from_labels(&[2])],
        edges: vec![],
        loops: vec![Subset::from_labels(&[2])],
    };
    let sol = HarmonicSolution { beta: q(1, 4), alpha: vec![vec![q(1, 4)]], c: vec![q(1, 1)] };
    assert!(verify_system(&p1, &g1, &sol, 0.0).unwrap().passed());
    let g2 = extend_graph(&g1, Subset::range(2, 4)).unwrap();
    let sol2 = extend_solution(&sol, &p1, &p2).unwrap();
    assert_eq!(sol2.alpha[0], vec![q(1, 4); 3]);
    assert!(verify_system(&p2, &g2, &sol2, 0.0).unwrap().passed());
    for y in [[3, 1, 0, 0], [5, 2, 4, 1], [0, 0, 0, 0]] {
        assert_eq!(eval_hg(&sol2, &y), eval_hg(&sol, &y[..2]));
    }
}

#[test]
fn tandem_graphs_are_simple_extensions() {
    for big_d in 2..=8 {
        for d in 1..big_d {
            let ext = extend_graph(&build_g(d, d), Subset::range(2, big_d)).unwrap();
            let direct = build_g(d, big_d);
            let mut a = ext.edge_set();
            let mut b = direct.edge_set();
            a.sort();
            b.sort();
            assert_eq!(a, b);
            assert_eq!(ext.vertices, direct.vertices);
            assert_eq!(ext.loops, direct.loops);
        }
    }
}

#[test]
fn extended_tandem_solution_matches_projection() {
    let p = NetworkParams::from_weights(2, &[9, 5, 11, 7, 13, 6]).unwrap();
    let r = JacksonRouting::<BigRational>::tandem(&p);
    for d1 in 1..6 {
        let base = p.prefix(d1).unwrap();
        let r1 = JacksonRouting::<BigRational>::tandem(&base);
        let (g1, s1) = tandem_system::<BigRational>(&base, d1).unwrap();
        let s2 = extend_solution(&s1, &r1, &r).unwrap();
        for sub in &s2.alpha {
            assert!(sub[d1 - 1..].iter().all(|a| *a == s2.beta));
        }
        let g2 = extend_graph(&g1, Subset::range(2, 6)).unwrap();
        assert!(verify_system(&r, &g2, &s2, 0.0).unwrap().passed(), "d1={d1}");
        for y in [[4, 1, 0, 2, 1, 0], [9, 0, 3, 0, 0, 2]] {
            assert_eq!(eval_hg(&s2, &y), eval_hg(&s1, &y[..d1]));
        }
    }
}

#[test]
fn embedding_parts() {
    for big_d in 2..=9 {
        let parts = decompose_embedding(big_d);
        assert_eq!(parts.iter().map(|p| p.vertices.len()).sum::<usize>(), 1 << (big_d - 1));
        let owner = |v: Subset| parts.iter().position(|p| p.vertices.contains(&v)).unwrap();
        let g = build_g(big_d, big_d);
        for &(u, v, l) in &g.edges {
            if owner(g.vertices[u]) != owner(g.vertices[v]) {
                assert_eq!(l, big_d);
            }
        }
    }
}

#[test]
fn hstar_scaling_identity_on_boundary() {
    // −w_2 h*_2 = Σ over vertices of G_{4,4} with second-largest element 2, on ∂B
    let p = NetworkParams::from_weights(1, &[3, 7, 2, 5]).unwrap();
    let (lambda, mu) = p.rates::<BigRational>();
    let rho: Vec<BigRational> = mu.iter().map(|m| lambda.clone() / m.clone()).collect();
    let part = &decompose_embedding(4)[2];
    assert_eq!(part.k, Some(2));
    let w2 = outer_weight(2, &lambda, &mu).unwrap();
    for y in [[3, 1, 2, 0], [4, 0, 1, 3], [2, 2, 0, 0], [0, 0, 0, 0]] {
        let lhs = -(w2.clone() * eval_hstar::<BigRational>(2, &p, &y).unwrap());
        let rhs = part
            .vertices
            .iter()
            .map(|&v| cstar(v, &lambda, &mu).unwrap() * Point::new(rho[3].clone(), alphastar(v, &rho, 4)).atom(&y))
            .fold(BigRational::zero(), |a, b| a + b);
        assert_eq!(lhs, rhs, "{y:?}");
    }
}

#[test]
fn worked_cstar_values() {
    let p = d8();
    let (l, m) = p.rates::<BigRational>();
    let one = q(1, 1);
    assert_eq!(cstar(Subset::from_labels(&[5]), &l, &m).unwrap(), one);
    let f = |a: usize, b: usize| {
        (a + 1..=b)
            .map(|k| (m[k - 1].clone() - l.clone()) / (m[k - 1].clone() - m[a - 1].clone()))
            .fold(q(1, 1), |x, y| x * y)
    };
    assert_eq!(cstar(Subset::from_labels(&[3, 6]), &l, &m).unwrap(), -f(3, 6));
    assert_eq!(cstar(Subset::from_labels(&[3, 5, 7]), &l, &m).unwrap(), f(3, 5) * f(5, 7));
    let rho: Vec<BigRational> = m.iter().map(|v| l.clone() / v.clone()).collect();
    assert_eq!(betastar(Subset::from_labels(&[8]), &rho), rho[7]);
}

#[test]
fn approx_at_exit_and_monotone_in_n() {
    let p = paper4();
    for n in [3, 10, 40] {
        let v: f64 = approx_prob_x(&p, n, &StateX::new(vec![n, 0, 0, 0]).unwrap()).unwrap();
        assert_eq!(v, 1.0);
    }
    let x = StateX::new(vec![2, 1, 0, 1]).unwrap();
    let vals: Vec<f64> = (4..60).map(|n| approx_prob_x(&p, n, &x).unwrap()).collect();
    assert!(vals.windows(2).all(|w| w[1] < w[0]));
}

#[test]
fn bracket_for_paper_rates_contains_formula() {
    let p = paper4();
    let y = [6, 1, 0, 2];
    let f: f64 = prob_tau_finite(&p, &y).unwrap();
    let (lo, hi) = solve_y_bracket(&p, &y, 24, 1e-12, DEFAULT_BUDGET).unwrap();
    assert!(lo <= f + 1e-9 && f <= hi + 1e-9, "{lo} {f} {hi}");
    assert!(hi - lo < 0.05);
}

#[test]
fn bracket_contains_formula_random_low_dims() {
    let sets: [(u64, &[u64]); 4] = [(1, &[4, 3]), (2, &[3, 9]), (1, &[3, 5, 2]), (2, &[7, 4, 9])];
    for (l, m) in sets {
        let p = NetworkParams::from_weights(l, m).unwrap();
        let d = p.dim();
        let y: Vec<i64> = if d == 2 { vec![5, 2] } else { vec![4, 1, 1] };
        let f: f64 = prob_tau_finite(&p, &y).unwrap();
        let big = if d == 2 { 40 } else { 24 };
        let (lo20, hi20) = solve_y_bracket(&p, &y, big / 2, 1e-13, DEFAULT_BUDGET).unwrap();
        let (lo, hi) = solve_y_bracket(&p, &y, big, 1e-13, DEFAULT_BUDGET).unwrap();
        assert!(lo <= f + 1e-10 && f <= hi + 1e-10, "{p} {lo} {f} {hi}");
        assert!(hi - lo <= hi20 - lo20, "width must shrink");
    }
}

#[test]
fn log_decay_examples() {
    let p = paper4();
    let g = solve_exact(&p, 12, &SolveOptions::default()).unwrap();
    assert_eq!(log_decay(&g, &p, &[12, 0, 0, 0]).unwrap(), (0.0, 0.0));
    assert!(log_decay(&g, &p, &[0, 0, 0, 0]).is_err());
    let p1 = NetworkParams::from_f64(0.3, &[0.7]).unwrap();
    let target = -p1.rho(1).ln();
    let mut last = f64::INFINITY;
    for n in [10, 40, 160] {
        let g = solve_exact(&p1, n, &SolveOptions::default()).unwrap();
        let (v, _) = log_decay(&g, &p1, &[1]).unwrap();
        let gap = (v - target).abs();
        assert!(gap < last);
        last = gap;
    }
    assert!(last < 0.01);
}

#[test]
fn oracle_is_monotone_in_first_coordinate_and_stable_under_more_sweeps() {
    let p = NetworkParams::from_f64(0.1, &[0.35, 0.3, 0.25]).unwrap();
    let a = solve_exact(&p, 14, &SolveOptions::default()).unwrap();
    let b = solve_exact(&p, 14, &SolveOptions { tol: 1e-14, ..SolveOptions::default() }).unwrap();
    let xs = a.space().enumerate();
    for x in xs.chunks(3) {
        let v = a.value(x).unwrap();
        assert!((0.0..=1.0).contains(&v));
        assert!((v - b.value(x).unwrap()).abs() <= 1e-12);
        if x.iter().sum::<i64>() < 14 {
            let up = [x[0] + 1, x[1], x[2]];
            assert!(a.value(&up).unwrap() >= v - 1e-15);
        }
    }
}

#[test]
fn gamma_example_by_hand() {
    let p = NetworkParams::from_f64(0.25, &[0.375, 0.375]).unwrap();
    let sp = gamma_constants(&p, 0.8).unwrap();
    let (l, m) = (0.25, 0.375);
    let want = 0.5 * (l * (1.0 - 1.25) + m * 0.2) / (l * 0.25);
    assert!((sp.gamma(2) - want).abs() < 1e-15);
    assert_eq!(sp.gamma(1), 1.0);
}

#[test]
fn hkr_residual_cases() {
    let p = paper4();
    let r = default_r(&p);
    for y in probe_set(4) {
        for k in 1..=4 {
            let formula = superharmonic_residual_hkr(&p, k, r, &y);
            let direct = direct_residual(&p, |z| eval_hkr(k, r, z), &y);
            assert!((formula - direct).abs() <= 1e-13 * eval_hkr(k, r, &y), "{k} {y:?}");
            if k == 1 {
                assert!(formula < 0.0);
            } else if y[k - 1] == 0 {
                let h = eval_hkr(k, r, &y);
                assert!((formula - h * p.lambda() * (1.0 / r - 1.0)).abs() < 1e-15 * h);
            }
        }
        let sp = gamma_constants(&p, r).unwrap();
        assert_eq!(eval_h2kr(&sp, 1, &y), eval_hkr(1, r, &y));
    }
}

#[test]
fn rbar_examples() {
    let p = paper4();
    let reg = RateRegion::new(&p);
    assert_eq!(reg.members, vec![3, 4]);
    assert!(reg.in_rbar(60, &[1, 0, 0, 0]));
    assert!(reg.in_rbar(60, &[0, 0, 1, 0]));
    assert!(!reg.in_rbar(60, &[0, 0, 0, 0]));
    // 𝓜 = {d}
    let p = NetworkParams::from_weights(1, &[9, 7, 5, 3]).unwrap();
    let reg = RateRegion::new(&p);
    assert_eq!(reg.members, vec![4]);
    for x in StateSpace::new(4, 6, DEFAULT_BUDGET).unwrap().enumerate().chunks(4) {
        assert_eq!(reg.in_rbar(6, x), x.iter().sum::<i64>() >= 1);
    }
}

#[test]
fn relative_error_under_bound_on_member_states() {
    let p = NetworkParams::from_f64(0.1, &[0.35, 0.3, 0.25]).unwrap();
    let reg = RateRegion::new(&p);
    for n in [12usize, 16, 20] {
        let g = solve_exact(&p, n, &SolveOptions::default()).unwrap();
        let xs = g.space().enumerate();
        let members: Vec<&[i64]> = xs.chunks(3).filter(|x| reg.in_rbar(n as i64, x)).collect();
        let stride = (members.len() / 50).max(1);
        let mut checked = 0;
        let mut over = vec![];
        for x in members.iter().step_by(stride).take(50) {
            let v = g.value(x).unwrap();
            let f: f64 = approx_prob_x(&p, n as i64, &StateX::new(x.to_vec()).unwrap()).unwrap();
            let rel = (f - v).abs() / v;
            let bound = relative_error_bound(&p, n as i64, x, 0.1);
            if rel > bound {
                over.push((x.to_vec(), rel, bound));
            }
            checked += 1;
        }
        assert!(over.is_empty(), "n={n}: {} of 50 states exceed the bound, first {:?}", over.len(), over[0]);
        assert_eq!(checked, 50);
    }
}

#[test]
fn gn_properties_on_enumerated_states() {
    for (l, m) in [(1u64, vec![3u64, 7, 2, 5]), (1, vec![5, 4, 6]), (2, vec![9, 5, 7])] {
        let p = NetworkParams::from_weights(l, &m).unwrap();
        let d = p.dim();
        let reg = RateRegion::new(&p);
        let rho = p.rho_max();
        for n in [6i64, 9] {
            let rn = rho.powi(n as i32);
            for x in StateSpace::new(d, n as usize, DEFAULT_BUDGET).unwrap().enumerate().chunks(d) {
                let all = gn(&p, n, x);
                let mut s = 0;
                let mut over_m = 0.0f64;
                for i in 1..=d {
                    s += x[i - 1];
                    if reg.members.contains(&i) {
                        over_m = over_m.max(p.rho(i).powi((n - s) as i32));
                    }
                }
                assert!((all - over_m).abs() <= 1e-15 * all);
                let flat = (all - rn).abs() <= 1e-13 * rn;
                assert_eq!(flat, reg.contains_lattice(n, x), "{x:?}");
                if reg.in_rbar(n, x) {
                    assert!(all / (all - rn) <= 1.0 / (1.0 - rho) + 1e-9);
                }
            }
        }
    }
}

#[test]
fn jump_inequality_on_faces() {
    let p = NetworkParams::from_weights(2, &[9, 5, 11, 7, 13]).unwrap();
    let sp = gamma_constants(&p, default_r(&p)).unwrap();
    for y in probe_set(5) {
        for k in 2..=5 {
            if y[k - 1] == 0 {
                let ratio = eval_h2kr(&sp, k - 1, &y) / eval_h2kr(&sp, k, &y);
                assert!(ratio >= sp.gamma_pair[k - 2] * (1.0 - 1e-14), "{k} {y:?}");
            }
        }
    }
}

#[test]
fn dense_solve_agrees_for_two_nodes() {
    let p = NetworkParams::from_f64(0.2, &[0.5, 0.3]).unwrap();
    for n in [3usize, 7, 12] {
        let g = solve_exact(&p, n, &SolveOptions::with_tol(1e-14)).unwrap();
        let xs = g.space().enumerate();
        let states: Vec<[i64; 2]> = xs.chunks(2).map(|c| [c[0], c[1]]).collect();
        let idx = |s: [i64; 2]| states.iter().position(|&t| t == s).unwrap();
        let m = states.len();
        let mut a = vec![vec![0.0; m + 1]; m];
        for (r, &s) in states.iter().enumerate() {
            a[r][r] = 1.0;
            let tot = s[0] + s[1];
            if tot == n as i64 {
                a[r][m] = 1.0;
                continue;
            }
            if tot == 0 {
                continue;
            }
            for inc in Increment::all(2) {
                let t = step_x(&StateX(s.to_vec()), inc).0;
                a[r][idx([t[0], t[1]])] -= p.prob(inc);
            }
        }
        // Gaussian elimination with partial pivoting
        for c in 0..m {
            let piv = (c..m).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs())).unwrap();
            a.swap(c, piv);
            for r in 0..m {
                if r != c && a[r][c] != 0.0 {
                    let f = a[r][c] / a[c][c];
                    for k in c..=m {
                        a[r][k] -= f * a[c][k];
                    }
                }
            }
        }
        for (r, &s) in states.iter().enumerate() {
            let dense = a[r][m] / a[r][r];
            assert!((dense - g.value(&s).unwrap()).abs() <= 1e-12, "n={n} {s:?}");
        }
    }
}

#[test]
fn gambler_ruin_against_birth_death_sum() {
    let p = NetworkParams::from_f64(0.3, &[0.7]).unwrap();
    let ratio = p.mu(1) / p.lambda();
    for n in [1i64, 5, 30] {
        let total: f64 = (0..n).map(|k| ratio.powi(k as i32)).sum();
        for x in 0..=n {
            let part: f64 = (0..x).map(|k| ratio.powi(k as i32)).sum();
            let want = part / total;
            assert!((gambler_ruin(&p, n, x).unwrap() - want).abs() <= 1e-13 * want.max(1e-300));
        }
    }
}

#[test]
fn general_and_tandem_char_poly_agree_on_random_points() {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
    let p = NetworkParams::from_weights(2, &[9, 5, 11, 7, 13]).unwrap();
    let r = JacksonRouting::<f64>::tandem(&p);
    for _ in 0..100 {
        let beta = rng.gen_range(0.05..2.0);
        let alpha: Vec<f64> = (0..4).map(|_| rng.gen_range(0.05..2.0)).collect();
        let pt = Point::new(beta, alpha);
        let a = char_poly_tandem(&p, &pt).unwrap();
        let b = char_poly_general(&r, Subset::EMPTY, &pt).unwrap();
        assert!((a - b).abs() <= 1e-14 * a.abs().max(1.0));
        for j in 2..=5 {
            let a = c_tandem(&p, j, &pt).unwrap();
            let b = c_general(&r, j, &pt).unwrap();
            assert!((a - b).abs() <= 1e-14 * a.abs().max(1.0));
        }
    }
}

#[test]
fn equal_rates_formula_is_harmonic() {
    let (l, mu) = (0.1f64, [0.3f64; 3]);
    let p = NetworkParams::from_f64(0.1, &[0.3, 0.3, 0.3]).unwrap();
    let r = JacksonRouting::<f64>::tandem(&p);
    let h = |z: &[i64]| {
        // the expression is polynomial-times-exponential, so evaluate it off B as well
        let yb = (z[0] - z[1] - z[2]) as f64;
        let rho = l / mu[0];
        let c = (mu[0] - l) / mu[0];
        rho.powf(yb)
            * (0.5 * c * c * yb * yb * rho.powi((z[1] + z[2]) as i32)
                + rho.powi(z[2] as i32) * ((c * c / 2.0 + z[2] as f64 * c * c) * rho.powi(z[1] as i32) + c) * yb
                + 1.0)
    };
    for y in probe_set(3).into_iter().filter(|y| excess(y) >= 1) {
        let lib = prob_tau_finite_equal_rates_d3(&l, &mu, &y).unwrap();
        assert!((lib - h(&y)).abs() <= 1e-14 * lib);
        let res = harmonic_residual(&r, h, &y);
        assert!(res.abs() <= 1e-10 * lib, "{y:?} {res:e}");
    }
}
