#![allow(clippy::needless_range_loop)]

use std::sync::Arc;

use pmefront::domain::{Domain, StarCurve};
use pmefront::expr::{Bindings, Expr, Func};
use pmefront::fichera::{check_conditions, FicheraTolerances, LinearCoefficients};
use pmefront::fields::{Grid, ScalarField};
use pmefront::linsolve::{solve_linear, LinearRunConfig};
use pmefront::oracle::ExactPmeSolution;
use pmefront::transform::{assemble_a, deformed_pressure, h_from_v, HState, PmeProblem};
use proptest::prelude::*;

fn cases(n: u32) -> ProptestConfig {
    ProptestConfig { cases: n, ..ProptestConfig::default() }
}

fn line(n: usize) -> (Domain, Arc<Grid>) {
    let dom = Domain::interval(0.0, 1.0).unwrap();
    let g = Grid::for_domain(&dom, n, 2).unwrap();
    (dom, g)
}

fn num(v: f64) -> String {
    format!("({v})")
}

fn interior_point(dom: &Domain, r: f64, th: f64) -> Vec<f64> {
    let (lo, hi) = dom.bounding_box();
    let c = [(lo[0] + hi[0]) / 2.0, (lo[1] + hi[1]) / 2.0];
    let half = [(hi[0] - lo[0]) / 2.0, (hi[1] - lo[1]) / 2.0];
    vec![c[0] + r * half[0] * th.cos(), c[1] + r * half[1] * th.sin()]
}

proptest! {
    #![proptest_config(cases(32))]

    #[test]
    fn partition_of_unity_sums_to_one(r in 0.0..0.999f64, th in 0.0..std::f64::consts::TAU, ellipse in any::<bool>()) {
        let dom = if ellipse {
            Domain::star_shaped(StarCurve::ellipse([0.1, -0.2], 1.5, 1.0, 64).unwrap()).unwrap()
        } else {
            Domain::disk([0.3, -0.2], 1.5).unwrap()
        };
        let (_, pou) = dom.build_charts(6).unwrap();
        let x = interior_point(&dom, r, th);
        prop_assume!(dom.signed_distance(&x) < 0.0);
        let w = pou.weights(&x);
        let s: f64 = w.iter().sum();
        prop_assert!((s - 1.0).abs() < 1e-12, "sum {s}");
        prop_assert!(w.iter().all(|v| *v >= -1e-15));
    }

    #[test]
    fn chart_coordinates_round_trip(k in 0usize..6, s in 0.0..1.0f64, frac in 0.0..0.95f64, ellipse in any::<bool>()) {
        let dom = if ellipse {
            Domain::star_shaped(StarCurve::ellipse([0.0, 0.0], 1.5, 1.0, 64).unwrap()).unwrap()
        } else {
            Domain::disk([0.3, -0.2], 1.5).unwrap()
        };
        let (charts, _) = dom.build_charts(6).unwrap();
        let ch = &charts[k];
        let x0 = ch.from_chart(&[0.0], 0.0);
        let (xc0, _) = ch.to_chart(&x0);
        let xc = vec![xc0[0] + (s - 0.5) * 0.2];
        let y = -frac * ch.collar_width();
        let x = ch.from_chart(&xc, y);
        let (back, yb) = ch.to_chart(&x);
        prop_assert!((back[0] - xc[0]).abs() < 1e-9, "{} vs {}", back[0], xc[0]);
        prop_assert!((yb - y).abs() < 1e-9, "{yb} vs {y}");
    }

    #[test]
    fn transform_matrix_inverts_c(frac in -0.9..0.9f64, kx in 0.5..3.0f64, ky in 0.5..3.0f64, ph in 0.0..3.0f64) {
        let dom = Domain::disk([0.0, 0.0], 1.0).unwrap();
        let g = Grid::for_domain(&dom, 12, 2).unwrap();
        let p = PmeProblem::from_expression(2.0, dom, g.clone(), "1 - x^2 - y^2").unwrap();
        let amp = frac * p.tube();
        let h = ScalarField::from_fn(g, |x| amp * (kx * x[0] + ph).sin() * (ky * x[1]).cos());
        let st = HState::new(h, 0.0, p.tube()).unwrap();
        let ts = assemble_a(&p, &st).unwrap();
        for n in 0..ts.a.len() {
            let (a, c) = (ts.a[n], ts.c[n]);
            for i in 0..2 {
                for j in 0..2 {
                    let ac: f64 = (0..2).map(|k| a[i][k] * c[k][j]).sum();
                    let want = if i == j { 1.0 } else { 0.0 };
                    prop_assert!((ac - want).abs() < 1e-11, "node {n} ({i},{j}): {ac}");
                }
            }
        }
    }

    #[test]
    fn vanishing_conormal_forces_nonpositive_q2(c0 in 0.1..2.0f64, c1 in -0.09..2.0f64, b0 in -2.0..2.0f64, b1 in -2.0..2.0f64) {
        let (dom, g) = line(41);
        let a = format!("x * (1 - x) * ({} + {} * x^2)", num(c0), num(c1));
        let b = format!("{} + {} * x", num(b0), num(b1));
        let co = LinearCoefficients::from_expressions(g, &[&a], &[&b], "0").unwrap();
        let rep = check_conditions(&co, &dom, 0.0, FicheraTolerances::default()).unwrap();
        prop_assert!(rep.verdicts.a1);
        prop_assert!(rep.a1_consistent(), "q2 {:?}", rep.q2);
    }

    #[test]
    fn strict_outflow_implies_outflow(c0 in 0.1..2.0f64, b0 in -3.0..3.0f64, b1 in -3.0..3.0f64) {
        let (dom, g) = line(41);
        let a = format!("x * (1 - x) * {}", num(c0));
        let b = format!("{} + {} * x", num(b0), num(b1));
        let co = LinearCoefficients::from_expressions(g, &[&a], &[&b], "0").unwrap();
        let rep = check_conditions(&co, &dom, 0.0, FicheraTolerances::default()).unwrap();
        prop_assert!(!rep.verdicts.b_prime || rep.verdicts.b);
    }
}

fn linear_cfg() -> LinearRunConfig {
    LinearRunConfig { dt: 0.02, t_end: 0.2, theta: 1.0, energy: false, force: true, ..LinearRunConfig::default() }
}

fn flat(t: f64) -> f64 {
    if t > 0.0 {
        (-1.0 / t).exp()
    } else {
        0.0
    }
}

proptest! {
    #![proptest_config(cases(12))]

    #[test]
    fn zero_forcing_gives_zero(c0 in 0.1..2.0f64, b0 in -2.0..2.0f64, f0 in -1.0..1.0f64) {
        let (dom, g) = line(41);
        let a = format!("x * (1 - x) * {}", num(c0));
        let b = num(b0);
        let co = LinearCoefficients::from_expressions(g, &[&a], &[&b], &num(f0)).unwrap();
        let run = solve_linear(&co, &dom, &linear_cfg()).unwrap();
        prop_assert!(run.final_w.values.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn implicit_steps_preserve_order(c0 in 0.2..2.0f64, f0 in -1.0..0.0f64, k in 1.0..4.0f64, bump in 0.0..1.0f64, s in 0.0..1.0f64) {
        let (dom, g) = line(41);
        let a = format!("x * (1 - x) * {}", num(c0));
        let pts: Vec<f64> = g.points().iter().map(|x| x[0]).collect();
        let base: Vec<f64> = pts.iter().map(|x| (k * x).sin()).collect();
        let extra: Vec<f64> = pts.iter().map(|x| bump * (-(x - s).powi(2) * 20.0).exp()).collect();
        let b1 = base.clone();
        let g1 = LinearCoefficients::from_expressions(g.clone(), &[&a], &["0"], &num(f0))
            .unwrap()
            .with_forcing(move |t| Ok(b1.iter().map(|v| flat(t) * v).collect()));
        let g2 = LinearCoefficients::from_expressions(g, &[&a], &["0"], &num(f0))
            .unwrap()
            .with_forcing(move |t| Ok(base.iter().zip(&extra).map(|(v, e)| flat(t) * (v + e)).collect()));
        let w1 = solve_linear(&g1, &dom, &linear_cfg()).unwrap().final_w;
        let w2 = solve_linear(&g2, &dom, &linear_cfg()).unwrap().final_w;
        for (u, v) in w1.values.iter().zip(&w2.values) {
            prop_assert!(*v >= *u - 1e-8, "{v} < {u}");
        }
    }

    #[test]
    fn pressure_survives_height_round_trip(m in 1.2..2.5f64, t in 1.0..2.0f64) {
        let exact = ExactPmeSolution::quadratic_pressure_1d(m, 1.0).unwrap();
        let r = exact.front_radius(1.0);
        let dom = Domain::interval(-r, r).unwrap();
        let g = Grid::for_domain(&dom, 41, 2).unwrap();
        let v0 = format!("{} - {} * x^2", num(exact.coeff_a(1.0)), num(exact.coeff_b(1.0)));
        let p = PmeProblem::from_expression(m, dom, g, &v0).unwrap();
        let src = exact.at(1.0 + (t - 1.0) * 0.1);
        let st = h_from_v(&p, &src, src.t).unwrap();
        for (y, v) in deformed_pressure(&p, &st) {
            let want = exact.pressure_extended(&y, src.t);
            prop_assert!((v - want).abs() < 1e-8, "at {y:?}: {v} vs {want}");
        }
    }
}

fn arb_expr() -> impl Strategy<Value = Expr> {
    let leaf = prop_oneof![
        (-5.0..5.0f64).prop_map(Expr::Num),
        prop_oneof![Just("x"), Just("y"), Just("t")].prop_map(|s| Expr::Var(s.to_string())),
    ];
    leaf.prop_recursive(4, 24, 2, |inner| {
        let bx = |e: Expr| Box::new(e);
        prop_oneof![
            inner.clone().prop_map(move |e| Expr::Neg(bx(e))),
            (inner.clone(), inner.clone()).prop_map(move |(a, b)| Expr::Add(bx(a), bx(b))),
            (inner.clone(), inner.clone()).prop_map(move |(a, b)| Expr::Sub(bx(a), bx(b))),
            (inner.clone(), inner.clone()).prop_map(move |(a, b)| Expr::Mul(bx(a), bx(b))),
            (inner.clone(), inner.clone()).prop_map(move |(a, b)| Expr::Div(bx(a), bx(b))),
            (inner.clone(), 0u32..4).prop_map(move |(a, k)| Expr::Pow(bx(a), bx(Expr::Num(k as f64)))),
            (prop_oneof![Just(Func::Sin), Just(Func::Cos), Just(Func::Exp)], inner)
                .prop_map(move |(f, a)| Expr::Call(f, bx(a))),
        ]
    })
}

proptest! {
    #![proptest_config(cases(256))]

    #[test]
    fn printed_expressions_parse_to_the_same_values(e in arb_expr(), x in -2.0..2.0f64, y in -2.0..2.0f64, t in 0.0..1.0f64) {
        let printed = e.to_string();
        let back = Expr::parse(&printed).unwrap();
        let b = Bindings::new().with("x", x).with("y", y).with("t", t);
        let (u, v) = (e.eval(&b), back.eval(&b));
        match (u, v) {
            (Ok(u), Ok(v)) => prop_assert!(u.to_bits() == v.to_bits() || (u.is_nan() && v.is_nan()), "{printed}: {u} vs {v}"),
            (Err(_), Err(_)) => {}
            (u, v) => prop_assert!(false, "{printed}: {u:?} vs {v:?}"),
        }
    }
}
