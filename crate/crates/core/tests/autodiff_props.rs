use mvskill_core::gradsuite::{run_suite, Suite};
use mvskill_core::tensor::gradcheck::{gradcheck, ParamList};
use mvskill_core::tensor::{Graph, Param, Tensor};
use proptest::prelude::*;

fn tensor(shape: &[usize], data: &[f64]) -> Tensor {
    Tensor::new(shape.to_vec(), data[..shape.iter().product::<usize>()].to_vec()).unwrap()
}

fn data(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-2.0f64..2.0, n)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn matmul_matches_naive_sum(m in 1usize..6, k in 1usize..6, n in 1usize..6, a in data(36), b in data(36)) {
        let (ta, tb) = (tensor(&[m, k], &a), tensor(&[k, n], &b));
        let mut g = Graph::new();
        let (va, vb) = (g.constant(&ta), g.constant(&tb));
        let c = g.matmul(va, vb).unwrap();
        prop_assert_eq!(g.shape(c), &[m, n][..]);
        for i in 0..m {
            for j in 0..n {
                let want: f64 = (0..k).map(|t| a[i * k + t] * b[t * n + j]).sum();
                prop_assert!((g.value(c)[i * n + j] - want).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn softmax_rows_are_distributions(r in 1usize..6, c in 1usize..8, x in data(64)) {
        let t = tensor(&[r, c], &x);
        let mut g = Graph::new();
        let v = g.constant(&t);
        let s = g.softmax_lastdim(v).unwrap();
        let sq = g.constant(&tensor(&[c, c], &x));
        let cs = g.causal_softmax(sq).unwrap();
        for row in 0..r {
            let p = &g.value(s)[row * c..(row + 1) * c];
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(p.iter().all(|&v| v > 0.0 && v <= 1.0));
        }
        for row in 0..c {
            let q = &g.value(cs)[row * c..(row + 1) * c];
            prop_assert!((q.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(q.iter().skip(row + 1).all(|&v| v == 0.0));
        }
    }

    #[test]
    fn composite_expressions_pass_gradcheck(r in 1usize..4, k in 1usize..4, c in 1usize..4, a in data(16), b in data(16), w in data(16)) {
        let mut params = ParamList(vec![
            Param::trainable("a", tensor(&[r, k], &a)),
            Param::trainable("b", tensor(&[k, c], &b)),
            Param::trainable("w", tensor(&[r, c], &w)),
        ]);
        let before = params.clone();
        let loss = |p: &ParamList, g: &mut Graph| {
            let (a, b, w) = (g.param(&p.0[0]), g.param(&p.0[1]), g.param(&p.0[2]));
            let h = g.matmul(a, b)?;
            let s = g.sigmoid(h);
            let e = g.gelu(h);
            let m = g.mul(s, e)?;
            let sm = g.softmax_lastdim(m)?;
            let y = g.mul(sm, w)?;
            let t = g.softplus(y);
            Ok(g.sum_all(t))
        };
        let report = gradcheck(&mut params, &loss, 1e-6, 1e-5).unwrap();
        prop_assert!(report.resolved_passed(), "{report:?}");
        prop_assert_eq!(report.components_checked, r * k + k * c + r * c);
        for (p, q) in params.0.iter().zip(&before.0) {
            prop_assert!(p.value.data().iter().zip(q.value.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
    }
}

#[test]
fn gradient_of_a_sum_is_all_ones() {
    let p = Param::trainable("x", Tensor::new(vec![3, 4], (0..12).map(f64::from).collect()).unwrap());
    let mut g = Graph::new();
    let v = g.param(&p);
    let s = g.sum_all(v);
    let grads = g.backward(s).unwrap();
    assert_eq!(grads.param("x").unwrap(), &[1.0; 12][..]);
}

#[test]
fn full_suite_covers_enough_instances() {
    for seed in [0, 1] {
        let report = run_suite(Suite::All, seed).unwrap();
        assert!(report.instances >= 100, "{}", report.instances);
        assert!(
            report.passed(),
            "seed {seed}: {} in {}",
            report.max_resolved_error,
            report.worst_case
        );
    }
}
