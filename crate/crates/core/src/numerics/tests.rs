use std::rc::Rc;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

fn t(rows: &[&[f64]]) -> Tensor {
    Tensor::from_rows(rows).unwrap()
}

#[test]
fn affine_identity_weights() {
    let mut tape = Tape::new();
    let x = tape.input(t(&[&[1.0, 2.0]]));
    let w = tape.input(Tensor::identity(2));
    let b = tape.input(Tensor::vector(vec![0.0, 0.0]));
    let y = tape.affine(x, w, b).unwrap();
    assert_eq!(tape.value(y).values(), &[1.0, 2.0]);
}

#[test]
fn affine_hand_multiply() {
    let mut tape = Tape::new();
    let x = tape.input(t(&[&[1.0, 1.0]]));
    let w = tape.input(t(&[&[2.0, 0.0], &[0.0, 3.0]]));
    let b = tape.input(Tensor::vector(vec![1.0, -1.0]));
    let y = tape.affine(x, w, b).unwrap();
    assert_eq!(tape.value(y).shape(), &[1, 2]);
    assert_eq!(tape.value(y).values(), &[3.0, 2.0]);
}

#[test]
fn affine_bias_gradient_counts_rows() {
    let mut tape = Tape::new();
    let x = tape.input(t(&[&[1.0, -1.0], &[0.5, 2.0], &[3.0, 0.0]]));
    let w = tape.input(t(&[&[1.0, 2.0], &[3.0, 4.0]]));
    let b = tape.input(Tensor::vector(vec![0.1, 0.2]));
    let y = tape.affine(x, w, b).unwrap();
    let ones = Tensor::filled(&[3, 2], 1.0);
    let g = tape.vjp(y, ones, &[b], GrlMode::Reverse).unwrap();
    assert_eq!(g[0].values(), &[3.0, 3.0]);
    // finite-difference cross-check of d sum(y) / d b
    let sum_out = |bias: &[f64]| -> f64 {
        let mut tp = Tape::new();
        let x = tp.input(t(&[&[1.0, -1.0], &[0.5, 2.0], &[3.0, 0.0]]));
        let w = tp.input(t(&[&[1.0, 2.0], &[3.0, 4.0]]));
        let b = tp.input(Tensor::vector(bias.to_vec()));
        let y = tp.affine(x, w, b).unwrap();
        tp.value(y).values().iter().sum()
    };
    let eps = 1e-5;
    let numeric = (sum_out(&[0.1 + eps, 0.2]) - sum_out(&[0.1 - eps, 0.2])) / (2.0 * eps);
    assert!((numeric - 3.0).abs() < 1e-8);
}

#[test]
fn affine_rejects_bad_shapes() {
    let mut tape = Tape::new();
    let x = tape.input(t(&[&[1.0, 2.0, 3.0]]));
    let w = tape.input(Tensor::identity(2));
    let b = tape.input(Tensor::vector(vec![0.0, 0.0]));
    let err = tape.affine(x, w, b).unwrap_err();
    let msg = err.to_string();
    assert!(msg.contains("[1, 3]") && msg.contains("[2, 2]"), "{msg}");
}

#[test]
fn relu_forward_and_gradient() {
    let mut tape = Tape::new();
    let x = tape.input(Tensor::vector(vec![-1.0, 0.0, 2.0]));
    let y = tape.relu(x);
    assert_eq!(tape.value(y).values(), &[0.0, 0.0, 2.0]);
    let g = tape
        .vjp(y, Tensor::vector(vec![1.0, 1.0, 1.0]), &[x], GrlMode::Reverse)
        .unwrap();
    // subgradient at 0 is 0
    assert_eq!(g[0].values(), &[0.0, 0.0, 1.0]);

    let mut tape = Tape::new();
    let x = tape.input(Tensor::vector(vec![3.0, -3.0]));
    let y = tape.relu(x);
    let g = tape.vjp(y, Tensor::vector(vec![1.0, 1.0]), &[x], GrlMode::Reverse).unwrap();
    assert_eq!(g[0].values(), &[1.0, 0.0]);
}

#[test]
fn relu_all_negative_is_dead() {
    let mut tape = Tape::new();
    let x = tape.input(Tensor::vector(vec![-0.5, -2.0, -1e-9]));
    let y = tape.relu(x);
    assert!(tape.value(y).values().iter().all(|&v| v == 0.0));
    let g = tape
        .vjp(y, Tensor::vector(vec![0.3, -1.0, 5.0]), &[x], GrlMode::Reverse)
        .unwrap();
    assert!(g[0].values().iter().all(|&v| v == 0.0));
}

fn xent(logits: &[f64], target: usize) -> f64 {
    let mut tape = Tape::new();
    let l = tape.input(Tensor::from_rows(&[logits]).unwrap());
    let loss = tape.softmax_cross_entropy(l, &[target]).unwrap();
    tape.value(loss).item()
}

#[test]
fn cross_entropy_values() {
    assert!((xent(&[0.0, 0.0], 0) - std::f64::consts::LN_2).abs() < 1e-12);
    // ln(1 + e^-2)
    assert!((xent(&[2.0, 0.0], 0) - 0.126_928_011_042_972_6).abs() < 1e-12);
    let big = xent(&[1000.0, 0.0], 0);
    assert!(big.is_finite() && big.abs() < 1e-300);
    let wrong = xent(&[1000.0, 0.0], 1);
    assert!((wrong - 1000.0).abs() < 1e-9);
}

#[test]
fn cross_entropy_rejects_bad_target() {
    let mut tape = Tape::new();
    let l = tape.input(t(&[&[0.0, 1.0]]));
    assert!(matches!(
        tape.softmax_cross_entropy(l, &[2]),
        Err(crate::SanError::Index { index: 2, bound: 2, .. })
    ));
}

#[test]
fn grl_forward_identity_backward_reversed() {
    for (coeff, expected) in [(1.0, [-0.3, 0.1]), (0.5, [-0.15, 0.05])] {
        let mut tape = Tape::new();
        let x = tape.input(Tensor::vector(vec![1.5, -2.0]));
        let y = tape.grl(x, coeff).unwrap();
        assert_eq!(tape.value(y).values(), &[1.5, -2.0]);
        let g = tape
            .vjp(y, Tensor::vector(vec![0.3, -0.1]), &[x], GrlMode::Reverse)
            .unwrap();
        for (a, b) in g[0].values().iter().zip(expected) {
            assert!((a - b).abs() < 1e-15);
        }
        let pass = tape
            .vjp(y, Tensor::vector(vec![0.3, -0.1]), &[x], GrlMode::PassThrough)
            .unwrap();
        assert_eq!(pass[0].values(), &[0.3, -0.1]);
    }
    let mut tape = Tape::new();
    let x = tape.input(Tensor::scalar(1.0));
    assert!(tape.grl(x, -1.0).is_err());
}

fn one_param(v: f64) -> (ParamSets, ParamId) {
    let mut p = ParamSets::new();
    let id = p.add(ParamGroup::Encoder, "p", Tensor::new(vec![1, 1], vec![v]).unwrap());
    (p, id)
}

#[test]
fn sgd_basic_step() {
    let (mut p, id) = one_param(1.0);
    let mut g = Gradients::for_params(&p);
    g.accumulate(id, &Tensor::new(vec![1, 1], vec![0.5]).unwrap());
    sgd_step(&mut p, &g, 0.1).unwrap();
    assert!((p.get(id).item() - 0.95).abs() < 1e-15);

    let (mut p, id) = one_param(1.0);
    let mut g = Gradients::for_params(&p);
    g.accumulate(id, &Tensor::new(vec![1, 1], vec![0.0]).unwrap());
    sgd_step(&mut p, &g, 0.1).unwrap();
    assert_eq!(p.get(id).item(), 1.0);
}

#[test]
fn sgd_accumulates_repeated_uses() {
    // loss = 0.2 * p + 0.2 * p through two separate leaves
    let (mut p, id) = one_param(1.0);
    let mut tape = Tape::new();
    let c = tape.input(Tensor::new(vec![1, 1], vec![0.2]).unwrap());
    let a = tape.param(&p, id);
    let b = tape.param(&p, id);
    let u = tape.matmul(a, c).unwrap();
    let v = tape.matmul(b, c).unwrap();
    let loss = tape.add(u, v).unwrap();
    let g = tape.backward(loss).unwrap();
    assert!((g.get(id).unwrap().item() - 0.4).abs() < 1e-15);
    sgd_step(&mut p, &g, 1.0).unwrap();
    assert!((p.get(id).item() - 0.6).abs() < 1e-15);
}

#[test]
fn sgd_requires_gradients_for_trainable_params() {
    let (mut p, _) = one_param(1.0);
    let other = p.add(ParamGroup::Discriminator, "d", Tensor::scalar(2.0));
    let g = Gradients::for_params(&p);
    assert!(matches!(sgd_step(&mut p, &g, 0.1), Err(crate::SanError::Consistency(_))));
    p.freeze(ParamGroup::Encoder);
    assert!(sgd_step(&mut p, &g, 0.1).is_err());
    p.freeze(ParamGroup::Discriminator);
    sgd_step(&mut p, &g, 0.1).unwrap();
    assert_eq!(p.get(other).item(), 2.0);
}

#[test]
fn finite_difference_quadratic() {
    let (p, id) = one_param(3.0);
    let mut tape = Tape::new();
    let a = tape.param(&p, id);
    let b = tape.param(&p, id);
    let sq = tape.matmul(a, b).unwrap();
    let g = tape.backward(sq).unwrap();
    assert_eq!(g.get(id).unwrap().item(), 6.0);
    let report = finite_difference_check(&p, &g, 1e-5, &ParamGroup::ALL, |ps| {
        Ok(ps.get(id).item().powi(2))
    })
    .unwrap();
    assert!(report.max_rel_error < 1e-7, "{report:?}");
    assert_eq!(report.checked, 1);
}

#[test]
fn finite_difference_rejects_bad_epsilon_and_nan() {
    let (p, id) = one_param(3.0);
    let g = Gradients::for_params(&p);
    assert!(finite_difference_check(&p, &g, 1e-2, &ParamGroup::ALL, |_| Ok(0.0)).is_err());
    let r = finite_difference_check(&p, &g, 1e-5, &ParamGroup::ALL, |ps| {
        Ok(if ps.get(id).item() > 3.0 { f64::NAN } else { 0.0 })
    });
    assert!(matches!(r, Err(crate::SanError::Numeric(_))));
}

struct Mlp {
    params: ParamSets,
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
}

fn small_mlp(seed: u64) -> Mlp {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = ParamSets::new();
    let w1 = params.add_glorot(ParamGroup::Encoder, "w1", 3, 5, &mut rng);
    let b1 = params.add(
        ParamGroup::Encoder,
        "b1",
        Tensor::vector((0..5).map(|_| rng.random_range(-0.5..0.5)).collect()),
    );
    let w2 = params.add_glorot(ParamGroup::Classifier, "w2", 5, 2, &mut rng);
    let b2 = params.add_zeros(ParamGroup::Classifier, "b2", &[2]);
    Mlp { params, w1, b1, w2, b2 }
}

fn mlp_loss(m: &Mlp, params: &ParamSets, x: &Tensor, y: &[usize]) -> (f64, Gradients) {
    let mut tape = Tape::new();
    let xi = tape.input(x.clone());
    let w1 = tape.param(params, m.w1);
    let b1 = tape.param(params, m.b1);
    let w2 = tape.param(params, m.w2);
    let b2 = tape.param(params, m.b2);
    let h = tape.affine(xi, w1, b1).unwrap();
    let h = tape.relu(h);
    let logits = tape.affine(h, w2, b2).unwrap();
    let loss = tape.softmax_cross_entropy(logits, y).unwrap();
    (tape.value(loss).item(), tape.backward(loss).unwrap())
}

#[test]
fn finite_difference_affine_relu_xent_chain() {
    let m = small_mlp(7);
    let x = t(&[&[0.3, -1.2, 0.8], &[1.1, 0.4, -0.7], &[-0.2, 0.9, 1.5]]);
    let y = [0, 1, 1];
    let (_, g) = mlp_loss(&m, &m.params, &x, &y);
    let report = finite_difference_check(&m.params, &g, 1e-5, &ParamGroup::ALL, |ps| {
        Ok(mlp_loss(&m, ps, &x, &y).0)
    })
    .unwrap();
    assert!(report.max_rel_error < 1e-5, "{report:?}");
}

#[test]
fn batch_gradient_equals_mean_of_half_batches() {
    let m = small_mlp(11);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let n = 6;
    let rows: Vec<Vec<f64>> = (0..2 * n)
        .map(|_| (0..3).map(|_| rng.random_range(-2.0..2.0)).collect())
        .collect();
    let labels: Vec<usize> = (0..2 * n).map(|i| i % 2).collect();
    let all = Tensor::from_rows(&rows).unwrap();
    let first = Tensor::from_rows(&rows[..n]).unwrap();
    let second = Tensor::from_rows(&rows[n..]).unwrap();
    let (_, g_all) = mlp_loss(&m, &m.params, &all, &labels);
    let (_, mut g_a) = mlp_loss(&m, &m.params, &first, &labels[..n]);
    let (_, g_b) = mlp_loss(&m, &m.params, &second, &labels[n..]);
    g_a.merge(&g_b);
    g_a.scale(0.5);
    for id in m.params.ids() {
        for (a, b) in g_all.get(id).unwrap().values().iter().zip(g_a.get(id).unwrap().values()) {
            assert!((a - b).abs() < 1e-10);
        }
    }
}

#[test]
fn sgd_with_zero_rate_is_bitwise_noop() {
    let mut m = small_mlp(3);
    let before = m.params.clone();
    let x = t(&[&[0.3, -1.2, 0.8]]);
    let (_, g) = mlp_loss(&m, &m.params, &x, &[1]);
    sgd_step(&mut m.params, &g, 0.0).unwrap();
    for (a, b) in before.entries().iter().zip(m.params.entries()) {
        let ab: Vec<u64> = a.value.values().iter().map(|v| v.to_bits()).collect();
        let bb: Vec<u64> = b.value.values().iter().map(|v| v.to_bits()).collect();
        assert_eq!(ab, bb);
    }
}

#[test]
fn sparse_propagate_matches_dense() {
    let adj = SparseMatrix::from_triplets(3, 3, vec![(0, 0, 0.5), (0, 1, 0.5), (1, 0, 0.5), (2, 2, 1.0), (1, 1, 0.5)]);
    let dense = adj.to_dense();
    let mut tape = Tape::new();
    let x = tape.input(t(&[&[1.0, 2.0], &[3.0, 4.0], &[5.0, 6.0]]));
    let a = tape.input(dense);
    let y1 = tape.propagate(Rc::new(adj), x).unwrap();
    let y2 = tape.matmul(a, x).unwrap();
    assert_eq!(tape.value(y1), tape.value(y2));
}

// ---------- randomized gradient oracle over every op ----------

type Builder = fn(&mut Tape, &[Var]) -> Var;

/// Central differences of `<upstream, f(inputs)>` against `vjp`.
fn check_op(inputs: Vec<Tensor>, build: Builder, rng: &mut ChaCha8Rng) -> f64 {
    let eval = |ins: &[Tensor]| -> (Tape, Var, Vec<Var>) {
        let mut tape = Tape::new();
        let vars: Vec<Var> = ins.iter().map(|t| tape.input(t.clone())).collect();
        let out = build(&mut tape, &vars);
        (tape, out, vars)
    };
    let (tape, out, vars) = eval(&inputs);
    let shape = tape.value(out).shape().to_vec();
    let upstream = Tensor::new(
        shape.clone(),
        (0..shape.iter().product::<usize>()).map(|_| rng.random_range(-1.0..1.0)).collect(),
    )
    .unwrap();
    let analytic = tape.vjp(out, upstream.clone(), &vars, GrlMode::PassThrough).unwrap();
    let dot = |ins: &[Tensor]| -> f64 {
        let (tp, o, _) = eval(ins);
        tp.value(o).values().iter().zip(upstream.values()).map(|(a, b)| a * b).sum()
    };
    let eps = 1e-5;
    let mut worst: f64 = 0.0;
    let mut probe = inputs.clone();
    for (which, input) in inputs.iter().enumerate() {
        for k in 0..input.len() {
            let orig = input.values()[k];
            probe[which].values_mut()[k] = orig + eps;
            let plus = dot(&probe);
            probe[which].values_mut()[k] = orig - eps;
            let minus = dot(&probe);
            probe[which].values_mut()[k] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            let exact = analytic[which].values()[k];
            let diff = (exact - numeric).abs();
            // Coordinates with an exactly vanishing derivative (the softmax in
            // attention is shift invariant in a_dst) only see roundoff noise.
            if diff <= 1e-10 {
                continue;
            }
            let rel = diff / exact.abs().max(numeric.abs()).max(1e-8);
            worst = worst.max(rel);
        }
    }
    worst
}

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.5..1.5)).collect()).unwrap()
}

fn random_tree_adjacency(rng: &mut ChaCha8Rng, n: usize) -> (SparseMatrix, Neighborhoods) {
    let mut trip = Vec::new();
    let mut lists = vec![vec![]; n];
    for i in 0..n {
        trip.push((i, i, 1.0));
        lists[i].push(i);
    }
    for child in 1..n {
        let parent = rng.random_range(0..child);
        trip.push((child, parent, 0.5));
        trip.push((parent, child, 0.5));
        lists[child].push(parent);
        lists[parent].push(child);
    }
    (SparseMatrix::from_triplets(n, n, trip), Neighborhoods::new(lists))
}

thread_local! {
    static GRAPH: std::cell::RefCell<Option<(Rc<SparseMatrix>, Rc<Neighborhoods>)>> = const { std::cell::RefCell::new(None) };
}

#[test]
fn every_op_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst = Vec::new();
    for instance in 0..100 {
        let n = rng.random_range(1..5);
        let d = rng.random_range(1..4);
        let m = rng.random_range(1..4);
        let (adj, nbrs) = random_tree_adjacency(&mut rng, n);
        GRAPH.with(|g| *g.borrow_mut() = Some((Rc::new(adj), Rc::new(nbrs))));

        let cases: Vec<(&str, Vec<Tensor>, Builder)> = vec![
            ("affine", vec![rand_tensor(&mut rng, &[n, d]), rand_tensor(&mut rng, &[d, m]), rand_tensor(&mut rng, &[m])],
                |t, v| t.affine(v[0], v[1], v[2]).unwrap()),
            ("matmul", vec![rand_tensor(&mut rng, &[n, d]), rand_tensor(&mut rng, &[d, m])],
                |t, v| t.matmul(v[0], v[1]).unwrap()),
            ("add_bias", vec![rand_tensor(&mut rng, &[n, d]), rand_tensor(&mut rng, &[d])],
                |t, v| t.add_bias(v[0], v[1]).unwrap()),
            ("relu", vec![rand_tensor(&mut rng, &[n, d])], |t, v| t.relu(v[0])),
            ("leaky_relu", vec![rand_tensor(&mut rng, &[n, d])], |t, v| t.leaky_relu(v[0], 0.2)),
            ("grl", vec![rand_tensor(&mut rng, &[n, d])], |t, v| t.grl(v[0], 0.7).unwrap()),
            ("add_scale", vec![rand_tensor(&mut rng, &[n, d]), rand_tensor(&mut rng, &[n, d])],
                |t, v| { let s = t.add(v[0], v[1]).unwrap(); t.scale(s, -1.3) }),
            ("concat", vec![rand_tensor(&mut rng, &[n, d]), rand_tensor(&mut rng, &[n, m])],
                |t, v| t.concat_cols(v[0], v[1]).unwrap()),
            ("propagate", vec![rand_tensor(&mut rng, &[n, d])], |t, v| {
                let adj = GRAPH.with(|g| g.borrow().as_ref().unwrap().0.clone());
                t.propagate(adj, v[0]).unwrap()
            }),
            ("segment_mean", vec![rand_tensor(&mut rng, &[n + 2, d])], |t, v| {
                let n = t.value(v[0]).rows();
                t.segment_mean(Rc::new(vec![(0, 2), (2, n - 2)]), v[0]).unwrap()
            }),
            ("xent", vec![rand_tensor(&mut rng, &[n, m + 1])], |t, v| {
                let n = t.value(v[0]).rows();
                let c = t.value(v[0]).cols();
                let targets: Vec<usize> = (0..n).map(|i| (i * 7 + 1) % c).collect();
                t.softmax_cross_entropy(v[0], &targets).unwrap()
            }),
            ("attention", {
                let heads = 1 + instance % 2;
                let f = m;
                vec![rand_tensor(&mut rng, &[n, heads * f]), rand_tensor(&mut rng, &[heads, f]), rand_tensor(&mut rng, &[heads, f])]
            }, |t, v| {
                let g = GRAPH.with(|g| g.borrow().as_ref().unwrap().1.clone());
                let heads = t.value(v[1]).rows();
                t.attention(v[0], v[1], v[2], g, heads, 0.2).unwrap()
            }),
        ];
        for (name, inputs, build) in cases {
            let err = check_op(inputs, build, &mut rng);
            worst.push((name, instance, err));
        }
    }
    let bad: Vec<_> = worst.iter().filter(|(_, _, e)| *e > 1e-4).collect();
    assert!(bad.is_empty(), "gradient mismatches: {bad:?}");
}

#[test]
fn attention_uniform_when_features_identical() {
    let mut tape = Tape::new();
    let z = tape.input(t(&[&[0.4, -0.2], &[0.4, -0.2], &[0.4, -0.2]]));
    let a_src = tape.input(t(&[&[1.0, 2.0]]));
    let a_dst = tape.input(t(&[&[-0.5, 0.3]]));
    let g = Rc::new(Neighborhoods::new(vec![vec![0, 1, 2], vec![1, 0], vec![2, 0]]));
    let out = tape.attention(z, a_src, a_dst, g, 1, 0.2).unwrap();
    let alpha = tape.attention_weights(out).unwrap();
    let expected = [1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0, 0.5, 0.5, 0.5, 0.5];
    for (a, e) in alpha.iter().zip(expected) {
        assert!((a - e).abs() < 1e-15);
    }
}

proptest! {
    #[test]
    fn softmax_rows_normalized_and_xent_nonnegative(
        rows in proptest::collection::vec(proptest::collection::vec(-50.0f64..50.0, 2..6), 1..6)
    ) {
        let c = rows[0].len();
        let rows: Vec<Vec<f64>> = rows.into_iter().map(|mut r| { r.resize(c, 0.0); r }).collect();
        let logits = Tensor::from_rows(&rows).unwrap();
        let p = softmax_rows(&logits);
        for i in 0..p.rows() {
            let s: f64 = p.row(i).iter().sum();
            prop_assert!((s - 1.0).abs() < 1e-12);
        }
        let mut tape = Tape::new();
        let l = tape.input(logits);
        let targets: Vec<usize> = (0..rows.len()).map(|i| i % c).collect();
        let loss = tape.softmax_cross_entropy(l, &targets).unwrap();
        prop_assert!(tape.value(loss).item() >= 0.0);
    }

    #[test]
    fn grl_forward_is_bitwise_identity(values in proptest::collection::vec(proptest::num::f64::NORMAL, 1..10), coeff in 0.0f64..10.0) {
        let mut tape = Tape::new();
        let x = tape.input(Tensor::vector(values.clone()));
        let y = tape.grl(x, coeff).unwrap();
        let a: Vec<u64> = values.iter().map(|v| v.to_bits()).collect();
        let b: Vec<u64> = tape.value(y).values().iter().map(|v| v.to_bits()).collect();
        prop_assert_eq!(a, b);
    }
}
