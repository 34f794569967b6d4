use std::collections::BTreeSet;
use std::sync::Arc;
use std::thread;

use integrable::expr::{Expression, Node, Parameters};
use proptest::prelude::*;

const N: usize = 3;

fn boxed(a: Node, b: Node, f: fn(Box<Node>, Box<Node>) -> Node) -> Node {
    f(Box::new(a), Box::new(b))
}

/// Polynomial and rational trees. Every denominator has the form `c + p²`
/// with `c ≥ 0.5`, so the expressions are smooth on all of ℝ³.
fn smooth_expression() -> impl Strategy<Value = Node> {
    let leaf = prop_oneof![(0..N).prop_map(Node::Var), (-3.0..3.0f64).prop_map(Node::Const)];
    leaf.prop_recursive(4, 24, 2, |inner| {
        prop_oneof![
            (inner.clone(), inner.clone()).prop_map(|(a, b)| boxed(a, b, Node::Add)),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| boxed(a, b, Node::Sub)),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| boxed(a, b, Node::Mul)),
            inner.clone().prop_map(|a| Node::Neg(Box::new(a))),
            (inner.clone(), 2u32..4).prop_map(|(a, k)| boxed(a, Node::Const(k as f64), Node::Pow)),
            (inner.clone(), inner, 0.5..2.0f64).prop_map(|(num, p, c)| {
                let square = boxed(p, Node::Const(2.0), Node::Pow);
                boxed(num, boxed(Node::Const(c), square, Node::Add), Node::Div)
            }),
        ]
    })
}

fn point() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-2.0..2.0f64, N)
}

fn central_difference(e: &Expression, x: &[f64], axis: usize) -> f64 {
    let h = f64::EPSILON.cbrt() * x[axis].abs().max(1.0);
    let (mut lo, mut hi) = (x.to_vec(), x.to_vec());
    lo[axis] -= h;
    hi[axis] += h;
    let p = Parameters::new();
    (e.eval(&hi, &p).unwrap() - e.eval(&lo, &p).unwrap()) / (hi[axis] - lo[axis])
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 500, ..ProptestConfig::default() })]

    #[test]
    fn dual_derivative_matches_central_difference(node in smooth_expression(), x in point()) {
        let e = Expression::from_node(node, N);
        let p = Parameters::new();
        for axis in 0..N {
            let d = e.eval_dual(&x, axis, &p).unwrap().derivative;
            let fd = central_difference(&e, &x, axis);
            prop_assert!((d - fd).abs() <= 1e-6 * (1.0 + d.abs()), "{e}: d/dx{} dual {d} fd {fd}", axis + 1);
        }
    }

    #[test]
    fn printing_round_trips(node in smooth_expression()) {
        let printed = Expression::from_node(node, N).to_string();
        let first = Expression::parse(&printed, N, &BTreeSet::new()).unwrap();
        let second = Expression::parse(&first.to_string(), N, &BTreeSet::new()).unwrap();
        prop_assert_eq!(first.root(), second.root());
    }

    #[test]
    fn evaluation_is_bit_reproducible(node in smooth_expression(), x in point()) {
        let e = Expression::from_node(node, N);
        let p = Parameters::new();
        prop_assert_eq!(e.eval(&x, &p).unwrap().to_bits(), e.eval(&x, &p).unwrap().to_bits());
    }
}

#[test]
fn corpus_round_trips() {
    let params: BTreeSet<String> = ["I1", "I2", "I3", "k"].map(String::from).into();
    for src in [
        "x1*(x2+x3)",
        "x2*(-x1+x3)",
        "x3*(-x1-x2)",
        "-(x1^2*x3^2)/(x1+x2+x3)",
        "x2*(x1+x2+x3)/(x1*x3)",
        "(I2-I3)/(I2*I3)*x2*x3",
        "0.5*(x1^2/I1+x2^2/I2+x3^2/I3)",
        "2^-1",
        "-x1^2",
        "x1-(x2-x3)",
        "x1/(x2/x3)",
        "(x1^2)^3",
        "x1^2^3",
        "1.5e-3*k - -x2",
    ] {
        let a = Expression::parse(src, 3, &params).unwrap();
        let b = Expression::parse(&a.to_string(), 3, &params).unwrap();
        assert_eq!(a.root(), b.root(), "{src} printed as {a}");
    }
}

#[test]
fn concurrent_evaluation_agrees_with_serial() {
    let e = Arc::new(Expression::parse("-(x1^2*x3^2)/(x1+x2+x3)", 3, &BTreeSet::new()).unwrap());
    let serial: Vec<u64> =
        (0..64).map(|k| e.eval(&[1.0 + k as f64, 1.0, 2.0], &Parameters::new()).unwrap().to_bits()).collect();
    let handles: Vec<_> = (0..8)
        .map(|_| {
            let e = Arc::clone(&e);
            thread::spawn(move || {
                (0..64)
                    .map(|k| e.eval(&[1.0 + k as f64, 1.0, 2.0], &Parameters::new()).unwrap().to_bits())
                    .collect::<Vec<u64>>()
            })
        })
        .collect();
    for h in handles {
        assert_eq!(h.join().unwrap(), serial);
    }
}
