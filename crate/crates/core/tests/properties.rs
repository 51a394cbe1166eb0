use difincl::expr::{Expr, Node};
use difincl::functionals::{penalty, total, PenaltyPoint};
use difincl::grid::{cum_integral, integral, Grid, Trajectory};
use difincl::problem::{from_interval_form, Interval, Problem, Psi};
use difincl::superdiff::{direction, farthest_vertex, SuperdiffConfig, SuperdiffNode};
use ndarray::{Array1, Array2};
use proptest::prelude::*;

const DIM: usize = 3;

fn smooth_node() -> impl Strategy<Value = Node> {
    let leaf = prop_oneof![
        (-3.0f64..3.0).prop_map(Node::Num),
        (1usize..=DIM).prop_map(Node::Var),
    ];
    leaf.prop_recursive(4, 24, 2, |inner| {
        prop_oneof![
            (inner.clone(), inner.clone()).prop_map(|(a, b)| Node::Add(Box::new(a), Box::new(b))),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| Node::Sub(Box::new(a), Box::new(b))),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| Node::Mul(Box::new(a), Box::new(b))),
            inner.clone().prop_map(|a| Node::Neg(Box::new(a))),
            (inner.clone(), 0u32..4).prop_map(|(a, k)| Node::Pow(Box::new(a), k)),
            inner.clone().prop_map(|a| Node::Sin(Box::new(a))),
            inner.clone().prop_map(|a| Node::Cos(Box::new(a))),
        ]
    })
}

fn point() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1.5f64..1.5, DIM)
}

fn same(a: f64, b: f64) -> bool {
    a == b || (a.is_nan() && b.is_nan())
}

proptest! {
    #[test]
    fn print_then_parse_preserves_values(node in smooth_node(), x in point()) {
        let e = Expr::from_node(node, DIM).unwrap();
        let printed = e.to_string();
        let back = Expr::parse(&printed, DIM).unwrap();
        prop_assert!(same(e.eval(&x).unwrap(), back.eval(&x).unwrap()), "{printed}");
        let again = Expr::parse(&back.to_string(), DIM).unwrap();
        prop_assert_eq!(again.node(), back.node());
    }

    #[test]
    fn gradient_matches_central_difference(node in smooth_node(), x in point()) {
        let e = Expr::from_node(node, DIM).unwrap();
        let (v, g) = e.value_and_grad(&x).unwrap();
        prop_assert!(same(v, e.eval(&x).unwrap()));
        let h = 1e-6;
        for j in 0..DIM {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[j] += h;
            xm[j] -= h;
            let fd = (e.eval(&xp).unwrap() - e.eval(&xm).unwrap()) / (2.0 * h);
            let scale = 1.0 + g[j].abs() + v.abs();
            prop_assert!((fd - g[j]).abs() <= 1e-5 * scale, "d/dx{} of {}: {} vs {}", j + 1, e, g[j], fd);
        }
    }

    #[test]
    fn interval_bounds_are_ordered(
        a in prop::collection::vec(prop::collection::vec(-3.0f64..3.0, 2), 2),
        abar in prop::collection::vec(0.0f64..3.0, 2),
        x in prop::collection::vec(-5.0f64..5.0, 2),
    ) {
        for row in from_interval_form(&a, &abar).unwrap() {
            let b = row.interval_bounds(&x).unwrap();
            prop_assert!(b.lo <= b.hi);
            let radius = row.terms.iter().map(|t| t.coeff * t.max_value(&x, Psi::Plus).unwrap()).sum::<f64>();
            prop_assert!((b.hi - b.lo - 2.0 * radius).abs() <= 1e-12 * (1.0 + radius));
        }
    }

    #[test]
    fn penalty_is_distance_to_interval(lo in -5.0f64..5.0, width in 0.0f64..5.0, z in -12.0f64..12.0) {
        let b = Interval { lo, hi: lo + width };
        let pp = PenaltyPoint::from_bounds(b, z);
        let expected = if z < b.lo { b.lo - z } else if z > b.hi { z - b.hi } else { 0.0 };
        prop_assert_eq!(pp.h, expected);
        if pp.h > 0.0 {
            prop_assert_eq!(pp.psi_star, if z < b.lo { Psi::Minus } else { Psi::Plus });
        }
    }

    #[test]
    fn penalty_of_rows_matches_bounds(x in prop::collection::vec(-2.0f64..2.0, 2), z in -10.0f64..10.0) {
        let rows = from_interval_form(&[vec![0.5, -1.0], vec![2.0, 0.0]], &[1.0, 0.25]).unwrap();
        for row in &rows {
            let b = row.interval_bounds(&x).unwrap();
            let h = penalty(row, &x, z).unwrap().h;
            prop_assert!(h >= 0.0);
            prop_assert_eq!(h == 0.0, b.lo <= z && z <= b.hi);
        }
    }

    #[test]
    fn farthest_vertex_dominates_members(
        base in prop::collection::vec(-1.0f64..1.0, 3),
        factors in prop::collection::vec(prop::collection::vec(prop::collection::vec(-2.0f64..2.0, 3), 1..4), 0..4),
    ) {
        let node = SuperdiffNode { base, factors };
        let v = farthest_vertex(&node, 4096).unwrap();
        let norm: f64 = v.point.iter().map(|x| x * x).sum();
        let mut choice = vec![0usize; node.factors.len()];
        for (f, factor) in node.factors.iter().enumerate() {
            for m in 0..factor.len() {
                choice[f] = m;
                let other: f64 = node.vertex(&choice).iter().map(|x| x * x).sum();
                prop_assert!(other <= norm);
            }
            choice[f] = 0;
        }
    }

    #[test]
    fn trapezoid_integral_is_linear(
        a in prop::collection::vec(-3.0f64..3.0, 7),
        b in prop::collection::vec(-3.0f64..3.0, 7),
        s in -2.0f64..2.0,
    ) {
        let g = Grid::new(7, 1.5).unwrap();
        let (a, b) = (Array1::from(a), Array1::from(b));
        let combined = &a * s + &b;
        let lhs = integral(&g, combined.view());
        let rhs = s * integral(&g, a.view()) + integral(&g, b.view());
        prop_assert!((lhs - rhs).abs() <= 1e-12);
        let col = combined.clone().into_shape_with_order((7, 1)).unwrap();
        prop_assert!((cum_integral(&g, col.view())[[6, 0]] - lhs).abs() <= 1e-12);
    }

    #[test]
    fn trajectory_csv_round_trip(values in prop::collection::vec(-1e3f64..1e3, 5 * 4)) {
        let g = Grid::new(5, 2.0).unwrap();
        let x = Array2::from_shape_vec((5, 2), values[..10].to_vec()).unwrap();
        let z = Array2::from_shape_vec((5, 2), values[10..].to_vec()).unwrap();
        let t = Trajectory::new(x, z).unwrap();
        let text = t.to_csv_string(&g).unwrap();
        let back = Trajectory::from_csv_str(&g, 2, &text).unwrap();
        prop_assert_eq!(back, t);
    }

    #[test]
    fn small_step_along_direction_decreases(seed in prop::collection::vec(-2.0f64..2.0, 24)) {
        let p = example1();
        let g = Grid::new(6, 1.0).unwrap();
        let t = Trajectory::new(
            Array2::from_shape_vec((6, 2), seed[..12].to_vec()).unwrap(),
            Array2::from_shape_vec((6, 2), seed[12..].to_vec()).unwrap(),
        ).unwrap();
        let d = direction(&p, &g, &t, &SuperdiffConfig::default()).unwrap();
        prop_assume!(!d.is_stationary());
        let i0 = total(&p, &g, &t).unwrap().total();
        let i1 = total(&p, &g, &t.stepped(1e-6, d.g.view())).unwrap().total();
        prop_assert!(i1 < i0, "{} -> {}", i0, i1);
    }
}

fn example1() -> Problem {
    Problem::load(format!("{}/problems/example1.json", env!("CARGO_MANIFEST_DIR"))).unwrap()
}
