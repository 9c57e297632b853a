use dsgg_autodiff::{finite_diff_check, Error, Graph, ParamStore, Tensor};
use proptest::prelude::*;

fn mat(rows: &[&[f64]]) -> Tensor {
    Tensor::from_rows(rows)
}

#[test]
fn matmul_examples() {
    let mut g = Graph::new();
    let eye = g.constant(mat(&[&[1.0, 0.0], &[0.0, 1.0]]));
    let b = g.constant(mat(&[&[1.0, 2.0], &[3.0, 4.0]]));
    let out = g.matmul(eye, b).unwrap();
    assert_eq!(g.value(out).data(), &[1.0, 2.0, 3.0, 4.0]);

    let zero = g.constant(Tensor::zeros(&[2, 2]));
    let out = g.matmul(zero, b).unwrap();
    assert_eq!(g.value(out).data(), &[0.0; 4]);

    let a = g.constant(mat(&[&[1.0, 2.0], &[3.0, 4.0]]));
    let col = g.constant(mat(&[&[5.0], &[6.0]]));
    let out = g.matmul(a, col).unwrap();
    assert_eq!(g.value(out).shape(), &[2, 1]);
    assert_eq!(g.value(out).data(), &[17.0, 39.0]);

    let bad = g.constant(Tensor::zeros(&[3, 1]));
    assert!(matches!(g.matmul(a, bad), Err(Error::Dimension { .. })));
}

#[test]
fn softmax_examples() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::from_vec(vec![0.0, 0.0, 0.0]));
    let y = g.softmax(x).unwrap();
    for v in g.value(y).data() {
        assert!((v - 1.0 / 3.0).abs() < 1e-15);
    }

    let x = g.constant(Tensor::from_vec(vec![0.0, 3f64.ln()]));
    let y = g.softmax(x).unwrap();
    assert!((g.value(y).data()[0] - 0.25).abs() < 1e-15);
    assert!((g.value(y).data()[1] - 0.75).abs() < 1e-15);

    let x = g.constant(Tensor::from_vec(vec![1000.0, 0.0]));
    let y = g.softmax(x).unwrap();
    let d = g.value(y).data();
    assert!(d.iter().all(|v| v.is_finite()));
    assert!((d[0] - 1.0).abs() < 1e-300_f64.max(1e-15) && d[1] < 1e-300);

    let x = g.constant(Tensor::from_vec(vec![0.0, f64::NAN]));
    assert!(matches!(g.softmax(x), Err(Error::Numeric { .. })));
}

#[test]
fn layer_norm_examples() {
    let eps = 1e-5;
    let mut g = Graph::new();
    let gain = g.constant(Tensor::filled(&[1, 4], 1.0));
    let bias = g.constant(Tensor::zeros(&[1, 4]));
    let x = g.constant(Tensor::from_vec(vec![3.0; 4]));
    let y = g.layer_norm(x, gain, bias, eps).unwrap();
    assert!(g.value(y).data().iter().all(|v| v.abs() < 1e-12));

    let std = [1.0, -1.0, 1.0, -1.0];
    let x = g.constant(Tensor::from_vec(std.to_vec()));
    let y = g.layer_norm(x, gain, bias, eps).unwrap();
    for (a, b) in g.value(y).data().iter().zip(std) {
        assert!((a - b).abs() < 1e-5);
    }

    let gain2 = g.constant(Tensor::filled(&[1, 2], 1.0));
    let bias2 = g.constant(Tensor::zeros(&[1, 2]));
    let x = g.constant(Tensor::from_vec(vec![1.0, 3.0]));
    let y = g.layer_norm(x, gain2, bias2, eps).unwrap();
    let expected = 1.0 / (1.0 + eps).sqrt();
    assert!((g.value(y).data()[0] + expected).abs() < 1e-15);
    assert!((g.value(y).data()[1] - expected).abs() < 1e-15);
}

#[test]
fn backward_examples() {
    let mut g = Graph::new();
    let theta = g.param(Tensor::from_vec(vec![1.0, -2.0]));
    let sq = g.mul(theta, theta).unwrap();
    let loss = g.sum(sq);
    let grads = g.backward(loss).unwrap();
    assert_eq!(grads.get(theta).unwrap(), &[2.0, -4.0]);

    let mut g = Graph::new();
    let theta = g.param(Tensor::from_vec(vec![1.0, -2.0]));
    let other = g.param(Tensor::from_vec(vec![5.0]));
    let loss = g.sum(other);
    let grads = g.backward(loss).unwrap();
    assert_eq!(grads.get(theta).unwrap(), &[0.0, 0.0]);

    let not_scalar = g.scale(theta, 2.0);
    assert!(matches!(g.backward(not_scalar), Err(Error::Contract(_))));
}

#[test]
fn shared_subexpression_accumulates() {
    let mut g = Graph::new();
    let x = g.param(Tensor::from_vec(vec![0.7]));
    let twice = g.add(x, x).unwrap();
    let loss = g.sum(twice);
    let grads = g.backward(loss).unwrap();
    assert_eq!(grads.get(x).unwrap(), &[2.0]);
}

#[test]
fn gradcheck_examples() {
    let mut params = ParamStore::new();
    params.insert("theta", Tensor::from_vec(vec![0.3, -1.2, 2.5]));
    params.insert("dead", Tensor::from_vec(vec![4.0, 5.0]));
    let report = finite_diff_check(&params, 1e-5, |g, b| {
        let t = b.var("theta")?;
        let sq = g.mul(t, t)?;
        Ok(g.sum(sq))
    })
    .unwrap();
    assert!(report.max_rel_error < 1e-8, "{:?}", report);
    assert!(report.max_param_error() < 1e-8 && report.params.len() == 2, "{:?}", report.params);
    assert_eq!(report.coordinates, 5);

    // Non-deterministic functions are rejected.
    let counter = std::cell::Cell::new(0.0);
    let err = finite_diff_check(&params, 1e-5, |g, b| {
        counter.set(counter.get() + 1.0);
        let t = b.var("theta")?;
        let s = g.sum(t);
        Ok(g.scale(s, counter.get()))
    });
    assert!(matches!(err, Err(Error::Contract(_))));
}

#[test]
fn cross_entropy_requires_a_label() {
    let mut g = Graph::new();
    let x = g.param(Tensor::zeros(&[2, 3]));
    assert!(matches!(g.cross_entropy(x, &[None, None]), Err(Error::Contract(_))));
    let l = g.cross_entropy(x, &[Some(1), None]).unwrap();
    assert!((g.value(l).item() - 3f64.ln()).abs() < 1e-15);
}

fn small_matrix(rows: usize, cols: usize) -> impl Strategy<Value = Vec<f64>> {
    proptest::collection::vec(-1.5f64..1.5, rows * cols)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn softmax_rows_sum_to_one(data in proptest::collection::vec(-50.0f64..50.0, 12)) {
        let mut g = Graph::new();
        let x = g.constant(Tensor::matrix(3, 4, data).unwrap());
        let y = g.softmax(x).unwrap();
        for r in 0..3 {
            let s: f64 = g.value(y).row(r).iter().sum();
            prop_assert!((s - 1.0).abs() <= 1e-12);
            prop_assert!(g.value(y).row(r).iter().all(|v| *v >= 0.0 && *v <= 1.0));
        }
    }

    #[test]
    fn elementary_ops_match_finite_differences(
        a in small_matrix(3, 4), b in small_matrix(4, 2), c in small_matrix(3, 4),
        w in small_matrix(1, 4),
    ) {
        let mut params = ParamStore::new();
        params.insert("a", Tensor::matrix(3, 4, a).unwrap());
        params.insert("b", Tensor::matrix(4, 2, b).unwrap());
        params.insert("c", Tensor::matrix(3, 4, c).unwrap());
        params.insert("w", Tensor::matrix(1, 4, w).unwrap());
        let report = finite_diff_check(&params, 1e-5, |g, p| {
            let (a, b, c, w) = (p.var("a")?, p.var("b")?, p.var("c")?, p.var("w")?);
            let ab = g.matmul(a, b)?;                 // 3x2
            let cbt = g.matmul_bt(c, a)?;             // 3x3
            let s = g.sigmoid(cbt);
            let prod = g.mul(s, s)?;
            let ac = g.sub(a, c)?;
            let shifted = g.add_row(ac, w)?;
            let sm = g.softmax_groups(shifted, 2)?;
            let cat = g.concat_cols(&[ab, prod, sm])?; // 3x9
            let picked = g.gather_rows(cat, &[2, 0, 2])?;
            let sl = g.slice_cols(picked, 0, 6)?;
            let sg = g.sum_groups(sl, 3)?;
            let rows = g.concat_rows(&[sg, ab])?;
            let ss = g.scale(rows, 0.7);
            let sq = g.mul(ss, ss)?;
            Ok(g.sum(sq))
        }).unwrap();
        prop_assert!(report.max_rel_error < 1e-6, "{:?}", report);
    }

    #[test]
    fn normalization_and_losses_match_finite_differences(
        x in small_matrix(4, 3), gain in small_matrix(1, 3), bias in small_matrix(1, 3),
    ) {
        let mut params = ParamStore::new();
        params.insert("x", Tensor::matrix(4, 3, x).unwrap());
        params.insert("gain", Tensor::matrix(1, 3, gain).unwrap());
        params.insert("bias", Tensor::matrix(1, 3, bias).unwrap());
        let targets = [1.0, 0.0, 1.0, 0.0, 0.0, 1.0, 1.0, 1.0, 0.0, 0.0, 1.0, 0.0];
        let report = finite_diff_check(&params, 1e-5, |g, p| {
            let (x, gn, bs) = (p.var("x")?, p.var("gain")?, p.var("bias")?);
            let ln = g.layer_norm(x, gn, bs, 1e-5)?;
            let ce = g.cross_entropy(ln, &[Some(0), None, Some(2), Some(1)])?;
            let prob = g.sigmoid(ln);
            let root = g.sqrt(prob)?;
            let bce = g.binary_cross_entropy(root, &targets, &[1.0; 12])?;
            let d = g.pairwise_sq_dist(x)?;
            let shifted = g.scale(d, -1.0);
            let r = g.relu(shifted);
            let ds = g.sum(d);
            let rs = g.sum(r);
            let total = g.add(ce, bce)?;
            let total = g.add(total, ds)?;
            Ok(g.add(total, rs)?)
        }).unwrap();
        prop_assert!(report.max_rel_error < 1e-6, "{:?}", report);
    }
}
