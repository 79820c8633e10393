//! Oracle tests for the array core: brute-force kernels, closed forms and
//! finite-difference gradient checks of every differentiable operation.

use ktlab_core::ndcore::{
    conv1d_causal, dropout, glu, grad_check, lstm_sequence, masked_softmax, relative_error,
    Direction, LstmWeights, ParamSet, Tape, Tensor, Var,
};
use ktlab_core::Scalar;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(shape: &[usize], scale: f64, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::from_vec(
        shape,
        (0..n).map(|_| rng.random_range(-scale..scale)).collect(),
    )
    .unwrap()
}

fn conv_oracle(x: &Tensor<f64>, w: &Tensor<f64>, b: &Tensor<f64>) -> Tensor<f64> {
    let (k, cin) = (x.rows(), x.cols());
    let (width, cout) = (w.shape()[0], w.shape()[2]);
    let mut y = Tensor::zeros(&[k, cout]);
    for t in 0..k {
        for o in 0..cout {
            let mut acc = b.data()[o];
            for d in 0..width {
                let src = t as isize - (width as isize - 1) + d as isize;
                if src < 0 {
                    continue;
                }
                for c in 0..cin {
                    acc += x.get(src as usize, c) * w.data()[(d * cin + c) * cout + o];
                }
            }
            y.set(t, o, acc);
        }
    }
    y
}

#[test]
fn conv_identity_kernel() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = random(&[6, 3], 1.0, &mut rng);
    let mut w = Tensor::zeros(&[1, 3, 3]);
    for c in 0..3 {
        w.data_mut()[c * 3 + c] = 1.0;
    }
    let y = conv1d_causal(&x, &w, &Tensor::zeros(&[3])).unwrap();
    assert_eq!(y, x);
}

#[test]
fn conv_all_ones_width_two() {
    let x = Tensor::matrix(3, 1, &[1.0, 2.0, 3.0]).unwrap();
    let w = Tensor::from_vec(&[2, 1, 1], vec![1.0, 1.0]).unwrap();
    let y = conv1d_causal(&x, &w, &Tensor::zeros(&[1])).unwrap();
    assert_eq!(y.data(), &[1.0, 3.0, 5.0]);
}

#[test]
fn conv_matches_triple_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for (k, cin, cout, width) in [(9, 4, 3, 2), (5, 2, 6, 4), (3, 3, 2, 5), (12, 7, 7, 3)] {
        let x = random(&[k, cin], 1.0, &mut rng);
        let w = random(&[width, cin, cout], 1.0, &mut rng);
        let b = random(&[cout], 1.0, &mut rng);
        let y = conv1d_causal(&x, &w, &b).unwrap();
        assert!(y.max_abs_diff(&conv_oracle(&x, &w, &b)) <= 1e-12);
    }
}

#[test]
fn conv_rejects_shape_mismatch() {
    let x = Tensor::<f64>::zeros(&[4, 3]);
    assert!(conv1d_causal(&x, &Tensor::zeros(&[2, 2, 1]), &Tensor::zeros(&[1])).is_err());
    assert!(conv1d_causal(&x, &Tensor::zeros(&[2, 3, 2]), &Tensor::zeros(&[1])).is_err());
}

proptest! {
    #[test]
    fn conv_is_causal(t in 0usize..8, seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random(&[8, 3], 1.0, &mut rng);
        let w = random(&[3, 3, 2], 1.0, &mut rng);
        let b = random(&[2], 1.0, &mut rng);
        let base = conv1d_causal(&x, &w, &b).unwrap();
        let mut x2 = x.clone();
        x2.set(t, 1, x2.get(t, 1) + 5.0);
        let moved = conv1d_causal(&x2, &w, &b).unwrap();
        for r in 0..t {
            prop_assert_eq!(base.row(r), moved.row(r));
        }
    }

    #[test]
    fn masked_softmax_is_distribution(
        logits in prop::collection::vec(-30.0f64..30.0, 1..12),
        bits in prop::collection::vec(any::<bool>(), 12),
    ) {
        let mask = &bits[..logits.len()];
        let y = masked_softmax(&logits, mask);
        if mask.iter().any(|&m| m) {
            prop_assert!((y.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        } else {
            prop_assert!(y.iter().all(|&v| v == 0.0));
        }
        for (v, &m) in y.iter().zip(mask) {
            prop_assert!(*v >= 0.0);
            if !m { prop_assert_eq!(*v, 0.0); }
        }
    }
}

#[test]
fn glu_examples() {
    let v = Tensor::<f64>::vector(&[2.0, -4.0]);
    let half = glu(&v, &Tensor::zeros(&[2])).unwrap();
    assert_eq!(half.data(), &[1.0, -2.0]);
    let sat = glu(&v, &Tensor::vector(&[800.0, 800.0])).unwrap();
    assert_eq!(sat.data(), v.data());
    let g = glu(
        &Tensor::<f64>::vector(&[2.0]),
        &Tensor::vector(&[3f64.ln()]),
    )
    .unwrap();
    assert!((g.data()[0] - 1.5).abs() < 1e-15);
    assert!(glu(&v, &Tensor::zeros(&[3])).is_err());
}

#[test]
fn masked_softmax_examples() {
    assert_eq!(
        masked_softmax(&[3.0, -1.0, 8.0], &[false, true, false]),
        vec![0.0, 1.0, 0.0]
    );
    let third = masked_softmax(&[0.4f64, 0.4, 0.4], &[true; 3]);
    assert!(third.iter().all(|&v| (v - 1.0 / 3.0).abs() < 1e-15));
    let y = masked_softmax(&[1.0, 2.0], &[true, true]);
    // closed form: 1/(1+e), e/(1+e)
    let e = 1f64.exp();
    assert!((y[0] - 1.0 / (1.0 + e)).abs() < 1e-15);
    assert!((y[0] - 0.26894).abs() < 1e-5 && (y[1] - 0.73106).abs() < 1e-5);
    assert_eq!(masked_softmax(&[1.0, 2.0], &[false, false]), vec![0.0, 0.0]);
}

fn lstm_params(
    d: usize,
    g: usize,
    scale: f64,
    rng: &mut ChaCha8Rng,
) -> (Tensor<f64>, Tensor<f64>, Tensor<f64>) {
    (
        random(&[d, 4 * g], scale, rng),
        random(&[g, 4 * g], scale, rng),
        random(&[4 * g], scale, rng),
    )
}

#[test]
fn lstm_zero_parameters_give_zero_states() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = random(&[6, 4], 1.0, &mut rng);
    let (wx, wh, b) = (
        Tensor::zeros(&[4, 12]),
        Tensor::zeros(&[3, 12]),
        Tensor::zeros(&[12]),
    );
    let w = LstmWeights {
        input: &wx,
        hidden: &wh,
        bias: &b,
    };
    for dir in [Direction::Forward, Direction::Backward] {
        let h = lstm_sequence(&x, w, dir, 6).unwrap();
        assert!(h.data().iter().all(|&v| v == 0.0));
    }
}

#[test]
fn lstm_single_scalar_cell() {
    // D = g = 1, one step; gates from hand-set pre-activations.
    let x = Tensor::<f64>::matrix(1, 1, &[0.5]).unwrap();
    let wx = Tensor::matrix(1, 4, &[0.2, -0.4, 1.0, 0.8]).unwrap();
    let wh = Tensor::matrix(1, 4, &[0.3, 0.3, 0.3, 0.3]).unwrap();
    let b = Tensor::vector(&[0.1, 0.0, -0.2, 0.05]);
    let h = lstm_sequence(
        &x,
        LstmWeights {
            input: &wx,
            hidden: &wh,
            bias: &b,
        },
        Direction::Forward,
        1,
    )
    .unwrap();
    let s = |z: f64| 1.0 / (1.0 + (-z).exp());
    let i = s(0.5 * 0.2 + 0.1);
    let o = s(0.5 * 1.0 - 0.2);
    let cand = (0.5f64 * 0.8 + 0.05).tanh();
    let c = i * cand; // previous cell is zero, so the forget gate drops out
    assert!((h.data()[0] - o * c.tanh()).abs() <= 1e-12);
}

fn reverse_rows(x: &Tensor<f64>, len: usize) -> Tensor<f64> {
    let mut out = x.clone();
    for t in 0..len {
        out.row_mut(t).copy_from_slice(x.row(len - 1 - t));
    }
    out
}

#[test]
fn lstm_backward_is_forward_on_reversed_prefix() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (wx, wh, b) = lstm_params(5, 4, 0.8, &mut rng);
    let w = LstmWeights {
        input: &wx,
        hidden: &wh,
        bias: &b,
    };
    let x = random(&[9, 5], 1.0, &mut rng);
    for len in [1, 4, 9] {
        let back = lstm_sequence(&x, w, Direction::Backward, len).unwrap();
        let fwd = lstm_sequence(&reverse_rows(&x, len), w, Direction::Forward, len).unwrap();
        let restored = reverse_rows(&fwd, len);
        assert!(back.max_abs_diff(&restored) <= 1e-12);
        for t in len..9 {
            assert!(back.row(t).iter().all(|&v| v == 0.0));
        }
    }
}

#[test]
fn lstm_rejects_bad_shapes() {
    let (wx, wh, b) = (
        Tensor::<f64>::zeros(&[3, 8]),
        Tensor::zeros(&[2, 8]),
        Tensor::zeros(&[8]),
    );
    let w = LstmWeights {
        input: &wx,
        hidden: &wh,
        bias: &b,
    };
    assert!(lstm_sequence(&Tensor::zeros(&[4, 4]), w, Direction::Forward, 4).is_err());
    assert!(lstm_sequence(&Tensor::zeros(&[4, 3]), w, Direction::Forward, 5).is_err());
}

#[test]
fn dropout_modes() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = random(&[10, 10], 1.0, &mut rng);
    assert_eq!(dropout(&x, 0.2, false, &mut rng).unwrap(), x);
    assert_eq!(dropout(&x, 1.0, true, &mut rng).unwrap(), x);
    assert_eq!(dropout(&x, 1.0, false, &mut rng).unwrap(), x);
    assert!(dropout(&x, 0.0, true, &mut rng).is_err());
    assert!(dropout(&x, -0.5, false, &mut rng).is_err());
}

#[test]
fn dropout_keep_fraction() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let x = Tensor::<f64>::full(&[100_000], 1.0);
    let y = dropout(&x, 0.2, true, &mut rng).unwrap();
    let kept = y.data().iter().filter(|&&v| v != 0.0).count();
    assert!(y
        .data()
        .iter()
        .all(|&v| v == 0.0 || (v - 5.0).abs() < 1e-12));
    let frac = kept as f64 / 100_000.0;
    assert!((frac - 0.2).abs() < 0.01, "{frac}");
}

// ---- gradient checks through the tape --------------------------------------

/// Reduces `out` to a scalar with fixed random weights so every entry of
/// the gradient is exercised.
fn weighted_sum(tape: &mut Tape<'_, f64>, out: Var, weights: &Tensor<f64>) -> Var {
    let v = tape.value(out);
    let positions: Vec<_> = (0..v.rows())
        .flat_map(|r| (0..v.cols()).map(move |c| (r, c)))
        .collect();
    let picked = tape.pick(out, &positions).unwrap();
    let w = tape.constant(weights.clone());
    tape.matmul(w, picked).unwrap()
}

fn check<F>(params: &mut ParamSet<f64>, out_len: usize, build: F) -> f64
where
    F: Fn(&mut Tape<'_, f64>, &[Var]) -> Var,
{
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let weights = random(&[1, out_len], 1.0, &mut rng);
    let eval = |ps: &ParamSet<f64>, grads: bool| -> (f64, Vec<Option<Tensor<f64>>>) {
        let mut tape = Tape::new();
        let vars: Vec<Var> = (0..ps.len())
            .map(|i| {
                let id = ktlab_core::ndcore::ParamId(i);
                tape.param(id, ps.value(id))
            })
            .collect();
        let out = build(&mut tape, &vars);
        let loss = weighted_sum(&mut tape, out, &weights);
        let value = tape.value(loss).data()[0];
        if !grads {
            return (value, Vec::new());
        }
        let g = tape.backward(loss);
        (value, vars.iter().map(|&v| g.of(v).cloned()).collect())
    };
    let (_, grads) = eval(params, true);
    params.zero_grads();
    for (i, g) in grads.into_iter().enumerate() {
        if let Some(g) = g {
            params.accumulate_grad(ktlab_core::ndcore::ParamId(i), &g);
        }
    }
    let report = grad_check(params, 1e-4, |ps| Ok(eval(ps, false).0)).unwrap();
    report.max_error()
}

fn set(entries: Vec<(&str, Tensor<f64>)>) -> ParamSet<f64> {
    let mut ps = ParamSet::new();
    for (n, t) in entries {
        ps.add(n, t);
    }
    ps
}

#[test]
fn gradcheck_linear_is_exact() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut ps = set(vec![("w", random(&[1, 6], 1.0, &mut rng))]);
    let x = random(&[6, 1], 1.0, &mut rng);
    let err = check(&mut ps, 1, |tape, v| {
        let xc = tape.constant(x.clone());
        tape.matmul(v[0], xc).unwrap()
    });
    assert!(err <= 1e-10, "{err}");
}

#[test]
fn gradcheck_detects_corrupted_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut ps = set(vec![("w", random(&[1, 6], 1.0, &mut rng))]);
    let x = random(&[6, 1], 1.0, &mut rng);
    let loss = |ps: &ParamSet<f64>| -> f64 {
        ps.iter()
            .next()
            .unwrap()
            .value
            .data()
            .iter()
            .zip(x.data())
            .map(|(a, b)| a * b)
            .sum()
    };
    for (g, &xv) in ps
        .iter_mut()
        .next()
        .unwrap()
        .grad
        .data_mut()
        .iter_mut()
        .zip(x.data())
    {
        *g = 2.0 * xv;
    }
    let report = grad_check(&mut ps, 1e-4, |p| Ok(loss(p))).unwrap();
    assert!(report.max_error() > 0.3);
    assert!((relative_error(2.0, 1.0) - 1.0 / 3.0).abs() < 1e-15);
}

#[test]
fn gradcheck_matmul_bias_and_activations() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut ps = set(vec![
        ("x", random(&[4, 3], 1.0, &mut rng)),
        ("w", random(&[3, 5], 1.0, &mut rng)),
        ("b", random(&[5], 1.0, &mut rng)),
        ("gate", random(&[4, 5], 1.0, &mut rng)),
    ]);
    let err = check(&mut ps, 20, |tape, v| {
        let a = tape.affine(v[0], v[1], v[2]).unwrap();
        let t = tape.tanh(a);
        tape.glu(t, v[3]).unwrap()
    });
    assert!(err < 1e-4, "{err}");
}

#[test]
fn gradcheck_matmul_nt_softmax_gather_concat() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut ps = set(vec![
        ("table", random(&[5, 3], 1.0, &mut rng)),
        ("e", random(&[6, 4], 1.0, &mut rng)),
    ]);
    let idx = [0usize, 3, 3, 1, 4, 2];
    let mask: Vec<bool> = (0..36).map(|i| (i % 6) < (i / 6)).collect();
    let err = check(&mut ps, 6 * 7, |tape, v| {
        let s = tape.gather_rows(v[0], &idx).unwrap();
        let rel = tape.matmul_nt(s, s).unwrap();
        let w = tape.masked_softmax_rows(rel, &mask).unwrap();
        let hrp = tape.matmul(w, v[1]).unwrap();
        tape.concat_cols(&[hrp, s]).unwrap()
    });
    assert!(err < 1e-4, "{err}");
}

#[test]
fn gradcheck_conv() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut ps = set(vec![
        ("x", random(&[7, 3], 1.0, &mut rng)),
        ("k", random(&[3, 3, 4], 1.0, &mut rng)),
        ("b", random(&[4], 1.0, &mut rng)),
    ]);
    let err = check(&mut ps, 28, |tape, v| {
        tape.conv1d_causal(v[0], v[1], v[2]).unwrap()
    });
    assert!(err < 1e-4, "{err}");
}

#[test]
fn gradcheck_lstm_both_directions() {
    for dir in [Direction::Forward, Direction::Backward] {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let (wx, wh, b) = lstm_params(4, 3, 0.8, &mut rng);
        let mut ps = set(vec![
            ("x", random(&[6, 4], 1.0, &mut rng)),
            ("wx", wx),
            ("wh", wh),
            ("b", b),
        ]);
        let err = check(&mut ps, 18, |tape, v| {
            tape.lstm(v[0], v[1], v[2], v[3], dir, 5).unwrap()
        });
        assert!(err < 1e-4, "{dir:?}: {err}");
    }
}

#[test]
fn gradcheck_bce_and_mul_const() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut ps = set(vec![("z", random(&[5, 2], 2.0, &mut rng))]);
    let mask = Tensor::matrix(5, 2, &[1.0, 0.0, 2.5, 1.0, 0.0, 0.0, 1.0, 1.0, 5.0, 0.0]).unwrap();
    let err = check(&mut ps, 1, |tape, v| {
        let m = tape.mul_const(v[0], mask.clone()).unwrap();
        let p = tape.sigmoid(m);
        let picked = tape
            .pick(p, &[(0, 0), (1, 1), (2, 0), (3, 1), (4, 0)])
            .unwrap();
        tape.bce_sum(picked, vec![1.0, 0.0, 0.0, 1.0, 1.0], 1e-7)
            .unwrap()
    });
    assert!(err < 1e-4, "{err}");
}

#[test]
fn f32_kernels_agree_with_f64() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let x = random(&[6, 3], 1.0, &mut rng);
    let w = random(&[2, 3, 2], 1.0, &mut rng);
    let b = random(&[2], 1.0, &mut rng);
    let y64 = conv1d_causal(&x, &w, &b).unwrap();
    let y32 = conv1d_causal(&x.cast::<f32>(), &w.cast(), &b.cast()).unwrap();
    assert!(y64.max_abs_diff(&y32.cast()) < 1e-5);
    assert!((0.25f32.sigmoid() as f64 - 0.25f64.sigmoid()).abs() < 1e-7);
}
