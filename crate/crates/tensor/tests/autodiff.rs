use std::cell::Cell;
use std::sync::Arc;

use dip_tensor::{finite_diff_check, ParamStore, Result, Segments, Tape, Tensor, TensorError, Var, LEAKY_SLOPE};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Tensor {
    Tensor::from_vec(r, c, (0..r * c).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

#[test]
fn product_rule() {
    let mut tape = Tape::new();
    let x = tape.param(Tensor::from_vec(1, 2, vec![1.0, 2.0]).unwrap());
    let y = tape.param(Tensor::from_vec(1, 2, vec![3.0, 4.0]).unwrap());
    let p = tape.mul(x, y).unwrap();
    let loss = tape.sum(p).unwrap();
    let g = tape.backward(loss).unwrap();
    assert_eq!(g.get(x).unwrap().data(), &[3.0, 4.0]);
    assert_eq!(g.get(y).unwrap().data(), &[1.0, 2.0]);
}

#[test]
fn leaky_relu_gradient() {
    let mut tape = Tape::new();
    let x = tape.param(Tensor::from_vec(1, 2, vec![-2.0, 5.0]).unwrap());
    let a = tape.leaky_relu(x, LEAKY_SLOPE).unwrap();
    let loss = tape.sum(a).unwrap();
    let g = tape.backward(loss).unwrap();
    assert_eq!(g.get(x).unwrap().data(), &[0.01, 1.0]);
}

#[test]
fn unused_parameter_gets_zero_gradient() {
    let mut tape = Tape::new();
    let x = tape.param(Tensor::scalar(2.0));
    let unused = tape.param(Tensor::zeros(2, 3));
    let loss = tape.scale(x, 4.0).unwrap();
    let g = tape.backward(loss).unwrap();
    assert_eq!(g.get(x).unwrap().data(), &[4.0]);
    assert_eq!(g.get(unused).unwrap(), &Tensor::zeros(2, 3));
}

#[test]
fn backward_requires_scalar() {
    let mut tape = Tape::<f64>::new();
    let x = tape.param(Tensor::zeros(2, 2));
    assert!(matches!(tape.backward(x), Err(TensorError::NotScalar((2, 2)))));
}

#[test]
fn non_finite_output_is_an_error() {
    let mut tape = Tape::<f64>::new();
    let x = tape.constant(Tensor::scalar(f64::MAX));
    assert!(matches!(
        tape.scale(x, 10.0),
        Err(TensorError::NonFinite { op: "scale" })
    ));
}

#[test]
fn shape_mismatch_reported() {
    let mut tape = Tape::<f64>::new();
    let a = tape.constant(Tensor::zeros(2, 3));
    let b = tape.constant(Tensor::zeros(2, 3));
    assert!(matches!(
        tape.matmul(a, b),
        Err(TensorError::ShapeMismatch { op: "matmul", .. })
    ));
}

/// Composite exercising every primitive once, used for the
/// finite-difference comparison below.
fn all_primitives(tape: &mut Tape, p: &[Var]) -> Result<Var> {
    let (x, w, w2, bias, lam) = (p[0], p[1], p[2], p[3], p[4]);
    let h = tape.matmul(x, w)?; // 5x4
    let h = tape.add_row(h, bias)?;
    let h = tape.leaky_relu(h, LEAKY_SLOPE)?;
    let s = tape.sigmoid(h)?;
    let hs = tape.mul(h, s)?;
    let hs = tape.scale_column_groups(hs, lam)?;
    let att = tape.matmul_nt(hs, hs)?; // 5x5
    let att = tape.softmax_rows(att)?;
    let mixed = tape.matmul_invariant(att, hs)?; // 5x4
    let seg = Arc::new(Segments::new(vec![0, 2, 2, 3, 5, 6], vec![1, 4, 0, 2, 3, 1]).unwrap());
    let nb = tape.segment_mean(mixed, seg)?;
    let cat = tape.concat_cols(&[nb, hs])?; // 5x8
    let logits = tape.matmul(cat, w2)?; // 5x3
    let idx: Arc<[usize]> = Arc::from(vec![0usize, 2, 2, 4]);
    let g = tape.gather_rows(logits, idx.clone())?;
    let back = tape.scatter_add_rows(g, Arc::from(vec![1usize, 0, 3, 3]), 5)?;
    let sum = tape.add(logits, back)?;
    let ce = tape.cross_entropy(
        sum,
        Arc::from(vec![0usize, 1, 2, 0, 1]),
        Arc::from(vec![0usize, 1, 3, 4]),
    )?;
    let rs = tape.row_sum(sum)?;
    let bce = tape.bce_with_logits(rs, Arc::from(vec![1.0, 0.0, 1.0, 1.0, 0.0]))?;
    let tot = tape.add(ce, bce)?;
    tape.scale(tot, 0.7)
}

fn primitive_store(seed: u64) -> ParamStore {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut s = ParamStore::new();
    s.add("x", random(&mut rng, 5, 3));
    s.add("w", random(&mut rng, 3, 4));
    s.add("w2", random(&mut rng, 8, 3));
    s.add("bias", random(&mut rng, 1, 4));
    s.add("lambda", random(&mut rng, 1, 2));
    s
}

#[test]
fn every_primitive_matches_central_differences() {
    for seed in 0..5 {
        let store = primitive_store(seed);
        let report = finite_diff_check(&store, all_primitives, 200, 1e-5, seed).unwrap();
        assert!(report.max_rel_error < 1e-6, "seed {seed}: {report:?}");
    }
}

/// Random three-layer perceptron with softmax and cross entropy.
#[test]
fn three_layer_composition_matches_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let mut s = ParamStore::new();
    s.add("w1", random(&mut rng, 6, 8));
    s.add("w2", random(&mut rng, 8, 8));
    s.add("w3", random(&mut rng, 8, 4));
    let x = random(&mut rng, 10, 6);
    let labels: Arc<[usize]> = (0..10).map(|i| i % 4).collect();
    let rows: Arc<[usize]> = (0..10).collect();
    let f = move |tape: &mut Tape, p: &[Var]| -> Result<Var> {
        let x = tape.constant(x.clone());
        let h = tape.matmul(x, p[0])?;
        let h = tape.leaky_relu(h, LEAKY_SLOPE)?;
        let h = tape.matmul(h, p[1])?;
        let h = tape.softmax_rows(h)?;
        let h = tape.matmul(h, p[2])?;
        tape.cross_entropy(h, labels.clone(), rows.clone())
    };
    let report = finite_diff_check(&s, f, 96, 1e-5, 1).unwrap();
    assert!(report.max_rel_error < 1e-6, "{report:?}");
}

#[test]
fn linear_loss_is_exact() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut s = ParamStore::new();
    s.add("w", random(&mut rng, 4, 2));
    let x = random(&mut rng, 3, 4);
    let f = move |tape: &mut Tape, p: &[Var]| {
        let x = tape.constant(x.clone());
        let y = tape.matmul(x, p[0])?;
        tape.sum(y)
    };
    let report = finite_diff_check(&s, f, 8, 1e-5, 0).unwrap();
    assert!(report.max_rel_error < 1e-9, "{report:?}");
}

#[test]
fn fresh_randomness_detected() {
    let mut s = ParamStore::new();
    s.add("w", Tensor::scalar(1.0));
    let calls = Cell::new(0u64);
    let f = |tape: &mut Tape, p: &[Var]| {
        calls.set(calls.get() + 1);
        let mut rng = ChaCha8Rng::seed_from_u64(calls.get());
        let noise: f64 = rng.random();
        tape.scale(p[0], noise)
    };
    assert!(matches!(
        finite_diff_check(&s, f, 4, 1e-5, 0),
        Err(TensorError::NonDeterministic { .. })
    ));
}

#[test]
fn replay_is_bit_identical() {
    let store = primitive_store(9);
    let run = || {
        let mut tape = Tape::new();
        let vars = store.bind(&mut tape);
        let loss = all_primitives(&mut tape, &vars).unwrap();
        tape.value(loss).clone()
    };
    assert!(run().bitwise_eq(&run()));
}

#[test]
fn operation_counters() {
    let mut tape = Tape::<f64>::new();
    let a = tape.constant(Tensor::zeros(7, 3));
    let b = tape.constant(Tensor::zeros(5, 3));
    tape.matmul_nt(a, b).unwrap();
    assert_eq!(tape.stats().get("matmul_nt"), 7 * 5 * 3);
    assert_eq!(tape.stats().get("matmul"), 0);
}

#[test]
fn segment_mean_handles_empty_segments() {
    let mut tape = Tape::<f64>::new();
    let x = tape.constant(Tensor::from_vec(2, 1, vec![2.0, 4.0]).unwrap());
    let seg = Arc::new(Segments::new(vec![0, 0, 2], vec![0, 1]).unwrap());
    let m = tape.segment_mean(x, seg).unwrap();
    assert_eq!(tape.value(m).data(), &[0.0, 3.0]);
}

proptest! {
    #[test]
    fn softmax_rows_are_distributions(data in prop::collection::vec(-30.0f64..30.0, 12)) {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::from_vec(3, 4, data).unwrap());
        let s = tape.softmax_rows(x).unwrap();
        let v = tape.value(s);
        for i in 0..3 {
            let total: f64 = v.row(i).iter().sum();
            prop_assert!((total - 1.0).abs() <= 1e-12);
            prop_assert!(v.row(i).iter().all(|&p| p > 0.0));
        }
    }

    #[test]
    fn leaky_relu_elementwise(data in prop::collection::vec(-5.0f64..5.0, 1..40)) {
        let n = data.len();
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::from_vec(1, n, data.clone()).unwrap());
        let y = tape.leaky_relu(x, 0.01).unwrap();
        for (&x, &y) in data.iter().zip(tape.value(y).data()) {
            prop_assert_eq!(y, if x >= 0.0 { x } else { 0.01 * x });
        }
    }

    #[test]
    fn matmul_rows_permute_exactly(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random(&mut rng, 9, 5);
        let b = random(&mut rng, 5, 4);
        let perm: Vec<usize> = (0..9).rev().collect();
        let lhs = a.select_rows(&perm).matmul(&b).unwrap();
        let rhs = a.matmul(&b).unwrap().select_rows(&perm);
        prop_assert!(lhs.bitwise_eq(&rhs));
    }
}
