use dgcnn::tensor::{grad_check, Tape, Tensor};
use dgcnn::Error;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn t(rows: &[&[f64]]) -> Tensor {
    Tensor::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
}

#[test]
fn matmul_examples() {
    let mut tape = Tape::new();
    let a = tape.constant(t(&[&[1.0, 2.0], &[3.0, 4.0]])).unwrap();
    let i = tape.constant(Tensor::identity(2)).unwrap();
    let ones = tape.constant(t(&[&[1.0], &[1.0]])).unwrap();
    let ai = tape.matmul(a, i).unwrap();
    assert_eq!(tape.value(ai).data(), &[1.0, 2.0, 3.0, 4.0]);
    let s = tape.matmul(a, ones).unwrap();
    assert_eq!(tape.value(s).data(), &[3.0, 7.0]);
    let e = tape.constant(t(&[&[5.0], &[7.0]])).unwrap();
    let ie = tape.matmul(i, e).unwrap();
    assert_eq!(tape.value(ie).data(), &[5.0, 7.0]);
    assert!(matches!(tape.matmul(ones, ones), Err(Error::Dimension(_))));
}

#[test]
fn leaky_relu_examples() {
    let mut tape = Tape::new();
    let x = tape.variable(Tensor::vector(vec![-1.0, 0.0, 2.0])).unwrap();
    let y = tape.leaky_relu(x, 0.2).unwrap();
    assert_eq!(tape.value(y).data(), &[-0.2, 0.0, 2.0]);
    let s = tape.sum(y).unwrap();
    // slope at the kink itself
    assert_eq!(tape.backward(s).unwrap().wrt(x).data(), &[0.2, 0.2, 1.0]);
    let z = tape.constant(Tensor::vector(vec![-10.0])).unwrap();
    let z = tape.leaky_relu(z, 0.01).unwrap();
    assert!((tape.value(z).data()[0] + 0.1).abs() < 1e-15);
}

#[test]
fn batch_norm_examples() {
    let mut tape = Tape::new();
    let g = tape.constant(Tensor::vector(vec![1.0])).unwrap();
    let b = tape.constant(Tensor::vector(vec![0.0])).unwrap();
    let x = tape.constant(t(&[&[1.0], &[3.0]])).unwrap();
    let (y, mean, var) = tape.batch_norm_train(x, g, b, 1e-5).unwrap();
    assert_eq!((mean[0], var[0]), (2.0, 1.0));
    let expect = 1.0 / (1.0f64 + 1e-5).sqrt();
    assert!((tape.value(y).data()[0] + expect).abs() < 1e-15);
    assert!((tape.value(y).data()[1] - expect).abs() < 1e-15);

    let beta = tape.constant(Tensor::vector(vec![0.7])).unwrap();
    let flat = tape.constant(t(&[&[4.0], &[4.0], &[4.0]])).unwrap();
    let (y, _, _) = tape.batch_norm_train(flat, g, beta, 1e-5).unwrap();
    assert_eq!(tape.value(y).data(), &[0.7, 0.7, 0.7]);

    let one = tape.constant(t(&[&[4.0]])).unwrap();
    assert!(matches!(tape.batch_norm_train(one, g, b, 1e-5), Err(Error::DegenerateBatch(_))));
}

#[test]
fn max_axis_examples() {
    let mut tape = Tape::new();
    let x = tape.variable(t(&[&[1.0, 5.0], &[3.0, 2.0]])).unwrap();
    let (m, arg) = tape.max_axis(x, 0).unwrap();
    assert_eq!(tape.value(m).data(), &[3.0, 5.0]);
    assert_eq!(arg, vec![1, 0]);
    let eq = tape.constant(t(&[&[2.0], &[2.0], &[2.0]])).unwrap();
    assert_eq!(tape.max_axis(eq, 0).unwrap().1, vec![0]);
    let single = tape.constant(t(&[&[4.0, -1.0]])).unwrap();
    let (v, arg) = tape.max_axis(single, 0).unwrap();
    assert_eq!((tape.value(v).data(), arg), (&[4.0, -1.0][..], vec![0, 0]));
}

#[test]
fn sum_and_concat_examples() {
    let mut tape = Tape::new();
    let x = tape.constant(t(&[&[1.0, 2.0], &[3.0, 4.0]])).unwrap();
    let s = tape.sum_axis(x, 0).unwrap();
    assert_eq!(tape.value(s).data(), &[4.0, 6.0]);
    let a = tape.constant(Tensor::vector(vec![1.0, 2.0])).unwrap();
    let b = tape.constant(Tensor::vector(vec![3.0])).unwrap();
    let c = tape.concat(&[a, b], 0).unwrap();
    assert_eq!(tape.value(c).data(), &[1.0, 2.0, 3.0]);
    let only = tape.concat(&[a], 0).unwrap();
    assert_eq!(tape.value(only).data(), &[1.0, 2.0]);
    let p = tape.constant(Tensor::zeros(&[2, 3])).unwrap();
    let q = tape.constant(Tensor::zeros(&[2, 5])).unwrap();
    let pq = tape.concat(&[p, q], 1).unwrap();
    assert_eq!(tape.shape(pq), &[2, 8]);
    let r = tape.constant(Tensor::zeros(&[3, 5])).unwrap();
    assert!(matches!(tape.concat(&[p, r], 1), Err(Error::Dimension(_))));
}

#[test]
fn dropout_examples() {
    let mut tape = Tape::new();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = tape.constant(Tensor::vector((0..50).map(f64::from).collect())).unwrap();
    assert_eq!(tape.dropout(x, 1.0, true, &mut rng).unwrap(), x);
    assert_eq!(tape.dropout(x, 0.5, false, &mut rng).unwrap(), x);
    assert!(matches!(tape.dropout(x, 0.0, true, &mut rng), Err(Error::Parameter(_))));
    let masks: Vec<Tensor> = (0..2)
        .map(|_| {
            let mut rng = ChaCha8Rng::seed_from_u64(9);
            let y = tape.dropout(x, 0.5, true, &mut rng).unwrap();
            tape.value(y).clone()
        })
        .collect();
    assert_eq!(masks[0], masks[1]);
    assert!(masks[0].data().iter().zip(0..).all(|(&v, i)| v == 0.0 || v == 2.0 * f64::from(i)));
}

#[test]
fn cross_entropy_examples() {
    let mut tape = Tape::new();
    let uniform = tape.constant(Tensor::zeros(&[2, 5])).unwrap();
    let l = tape.softmax_cross_entropy(uniform, &[0, 3]).unwrap();
    assert!((tape.value(l).item().unwrap() - 5f64.ln()).abs() < 1e-15);
    let sat = tape.constant(t(&[&[10.0, -10.0]])).unwrap();
    let l = tape.softmax_cross_entropy(sat, &[0]).unwrap();
    assert!(tape.value(l).item().unwrap() < 1e-8);
    let x = tape.variable(t(&[&[0.0, 0.0, 0.0, 1.0]])).unwrap();
    let l = tape.softmax_cross_entropy(x, &[3]).unwrap();
    let expect = (3.0 + 1f64.exp()).ln() - 1.0;
    assert!((tape.value(l).item().unwrap() - expect).abs() < 1e-15);
    // ln(3 + e) - 1 evaluated independently
    assert!((expect - 0.743_668_38).abs() < 1e-8);
    // gradient = softmax - onehot
    let g = tape.backward(l).unwrap().wrt(x);
    let z = 3.0 + 1f64.exp();
    let want = [1.0 / z, 1.0 / z, 1.0 / z, 1f64.exp() / z - 1.0];
    assert!(g.data().iter().zip(want).all(|(a, b)| (a - b).abs() < 1e-15));
    assert!(matches!(tape.softmax_cross_entropy(x, &[4]), Err(Error::Index(_))));
}

#[test]
fn backward_examples() {
    let mut tape = Tape::new();
    let x = tape.variable(Tensor::vector(vec![1.5, -2.0, 0.25])).unwrap();
    let unused = tape.variable(Tensor::vector(vec![1.0, 2.0])).unwrap();
    let s = tape.sum(x).unwrap();
    let g = tape.backward(s).unwrap();
    assert_eq!(g.wrt(x).data(), &[1.0, 1.0, 1.0]);
    assert_eq!(g.wrt(unused).data(), &[0.0, 0.0]);
    let sq = tape.mul(x, x).unwrap();
    let s = tape.sum(sq).unwrap();
    assert_eq!(tape.backward(s).unwrap().wrt(x).data(), &[3.0, -4.0, 0.5]);
    assert!(matches!(tape.backward(x), Err(Error::Contract(_))));
}

#[test]
fn grad_check_examples() {
    let x = Tensor::vector(vec![0.3, -1.2, 4.0, 2.5]);
    let err = grad_check(|t, v| t.sum(v), &x, 1e-5).unwrap();
    assert!(err <= 1e-10, "{err}");
    let logits = Tensor::from_rows(&[vec![0.2, -0.7, 1.1], vec![0.9, 0.1, -0.4]]).unwrap();
    let err = grad_check(|t, v| t.softmax_cross_entropy(v, &[2, 0]), &logits, 1e-5).unwrap();
    assert!(err < 1e-6, "{err}");
    let bad = Tensor::vector(vec![f64::NAN]);
    assert!(matches!(grad_check(|t, v| t.sum(v), &bad, 1e-5), Err(Error::Numeric(_))));
}

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = Tensor> {
    prop::collection::vec(-3.0..3.0f64, rows * cols).prop_map(move |d| Tensor::new(vec![rows, cols], d).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn replay_is_bitwise_deterministic(x in matrix(6, 4), w in matrix(4, 3), seed in any::<u64>()) {
        let run = || {
            let mut tape = Tape::new();
            let xv = tape.variable(x.clone()).unwrap();
            let wv = tape.variable(w.clone()).unwrap();
            let h = tape.matmul(xv, wv).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let h = tape.dropout(h, 0.6, true, &mut rng).unwrap();
            let h = tape.leaky_relu(h, 0.2).unwrap();
            let (m, _) = tape.max_axis(h, 0).unwrap();
            let l = tape.sum(m).unwrap();
            let g = tape.backward(l).unwrap();
            (tape.value(l).clone(), g.wrt(xv), g.wrt(wv))
        };
        prop_assert_eq!(run(), run());
    }

    #[test]
    fn max_backward_hits_one_element_per_channel(x in matrix(7, 5)) {
        let mut tape = Tape::new();
        let xv = tape.variable(x).unwrap();
        let (m, arg) = tape.max_axis(xv, 0).unwrap();
        let l = tape.sum(m).unwrap();
        let g = tape.backward(l).unwrap().wrt(xv);
        for c in 0..5 {
            let col: Vec<f64> = (0..7).map(|r| g.at(&[r, c])).collect();
            prop_assert_eq!(col.iter().filter(|&&v| v != 0.0).count(), 1);
            prop_assert_eq!(col[arg[c]], 1.0);
        }
    }

    #[test]
    fn eval_batch_norm_is_affine_per_channel(
        x in matrix(5, 3),
        y in matrix(5, 3),
        a in -2.0..2.0f64,
        stats in prop::collection::vec((-1.0..1.0f64, 0.1..3.0f64), 3),
    ) {
        let mean: Vec<f64> = stats.iter().map(|s| s.0).collect();
        let var: Vec<f64> = stats.iter().map(|s| s.1).collect();
        let mut tape = Tape::new();
        let g = tape.constant(Tensor::vector(vec![1.3, -0.4, 2.0])).unwrap();
        let b = tape.constant(Tensor::vector(vec![0.1, 0.0, -0.5])).unwrap();
        let mut bn = |t: &Tensor| {
            let v = tape.constant(t.clone()).unwrap();
            let o = tape.batch_norm_eval(v, g, b, &mean, &var, 1e-5).unwrap();
            tape.value(o).clone()
        };
        // f(a·x + (1-a)·y) = a·f(x) + (1-a)·f(y) for an affine map
        let mix: Vec<f64> = x.data().iter().zip(y.data()).map(|(p, q)| a * p + (1.0 - a) * q).collect();
        let lhs = bn(&Tensor::new(vec![5, 3], mix).unwrap());
        let (fx, fy) = (bn(&x), bn(&y));
        for i in 0..15 {
            let rhs = a * fx.data()[i] + (1.0 - a) * fy.data()[i];
            prop_assert!((lhs.data()[i] - rhs).abs() < 1e-12);
        }
    }

    #[test]
    fn primitives_pass_grad_check(x in matrix(4, 3), w in matrix(3, 2)) {
        let w2 = w.clone();
        let err = grad_check(move |t, v| {
            let wv = t.constant(w2.clone())?;
            let h = t.matmul(v, wv)?;
            let h = t.mul(h, h)?;
            let (g, b) = (t.constant(Tensor::vector(vec![1.0, 0.5]))?, t.constant(Tensor::vector(vec![0.0, 0.2]))?);
            let (h, _, _) = t.batch_norm_train(h, g, b, 1e-5)?;
            t.softmax_cross_entropy(h, &[0, 1, 1, 0])
        }, &x, 1e-5).unwrap();
        prop_assert!(err < 1e-6, "max rel err {}", err);
    }
}
