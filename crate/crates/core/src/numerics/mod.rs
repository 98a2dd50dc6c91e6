//! Dense tensors, reverse-mode differentiation, initialization and SGD.

mod init;
mod optim;
mod params;
mod tape;
mod tensor;

pub use init::{fans, seeded_init, splitmix64, stream_id, stream_rng, xavier_bound, InitScheme};
pub use optim::{sgd_step, SgdConfig};
pub use params::{ParamBuilder, ParamId, ParamStore, Session};
pub use tape::{sigmoid, BackwardFault, Tape, Var};
pub use tensor::{Real, Tensor};

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Central-difference step used by gradient checks.
pub const FD_STEP: f64 = 1e-5;

/// `|a - b| / max(|a|, |b|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(floor);
    (analytic - numeric).abs() / denom
}

/// Central-difference gradient of a scalar function of one tensor.
pub fn numerical_gradient(x: &Tensor<f64>, step: f64, mut f: impl FnMut(&Tensor<f64>) -> f64) -> Tensor<f64> {
    let mut probe = x.clone();
    let mut grad = Tensor::zeros(x.shape());
    for i in 0..x.numel() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + step;
        let up = f(&probe);
        probe.data_mut()[i] = orig - step;
        let down = f(&probe);
        probe.data_mut()[i] = orig;
        grad.data_mut()[i] = (up - down) / (2.0 * step);
    }
    grad
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;
    use rand::Rng;

    use super::*;
    use crate::error::Error;

    fn random(shape: &[usize], seed: u64) -> Tensor<f64> {
        let mut rng = stream_rng(seed, 99);
        let n: usize = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    fn naive_matmul(a: &Tensor<f64>, b: &Tensor<f64>) -> Vec<f64> {
        let (m, k, n) = (a.rows(), a.cols(), b.cols());
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                let mut s = 0.0;
                for t in 0..k {
                    s += a.get2(i, t) * b.get2(t, j);
                }
                out[i * n + j] = s;
            }
        }
        out
    }

    /// Checks the tape gradient of `build(inputs) -> scalar` against central
    /// differences for every input.
    fn check_grad(inputs: &[Tensor<f64>], build: impl Fn(&mut Tape<f64>, &[Var]) -> Var) {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
        let out = build(&mut tape, &vars);
        tape.backward(out).unwrap();
        for (k, input) in inputs.iter().enumerate() {
            let analytic = tape.grad_or_zeros(vars[k]);
            let numeric = numerical_gradient(input, FD_STEP, |probe| {
                let mut t = Tape::new();
                let vs: Vec<Var> = inputs
                    .iter()
                    .enumerate()
                    .map(|(j, x)| t.param(if j == k { probe.clone() } else { x.clone() }))
                    .collect();
                let o = build(&mut t, &vs);
                t.value(o).item()
            });
            for (a, n) in analytic.data().iter().zip(numeric.data()) {
                let err = relative_error(*a, *n, 1e-6);
                assert!(err <= 1e-5, "input {k}: analytic {a} vs numeric {n} (rel {err})");
            }
        }
    }

    /// Weighted sum so every output entry gets a distinct upstream gradient.
    fn weighted_sum(t: &mut Tape<f64>, x: Var, seed: u64) -> Var {
        let w = random(t.shape(x), seed);
        let wv = t.constant(w);
        let p = t.mul(x, wv).unwrap();
        t.sum(p)
    }

    #[test]
    fn matmul_identity_cases() {
        let mut t = Tape::new();
        let a = random(&[3, 3], 1);
        let eye = Tensor::from_rows(&[vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]]).unwrap();
        let (av, iv) = (t.constant(a.clone()), t.constant(eye));
        let out = t.matmul(iv, av).unwrap();
        assert_eq!(t.value(out), &a);

        let m = Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let i2 = Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let (mv, i2v) = (t.constant(m.clone()), t.constant(i2));
        let out = t.matmul(mv, i2v).unwrap();
        assert_eq!(t.value(out), &m);
    }

    #[test]
    fn matmul_matches_triple_loop() {
        let a = random(&[4, 5], 2);
        let b = random(&[5, 3], 3);
        let expected = naive_matmul(&a, &b);
        let mut t = Tape::new();
        let (av, bv) = (t.constant(a), t.constant(b));
        let out = t.matmul(av, bv).unwrap();
        assert_eq!(t.shape(out), &[4, 3]);
        for (x, y) in t.value(out).data().iter().zip(&expected) {
            assert!((x - y).abs() <= 1e-6);
        }
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let mut t: Tape<f32> = Tape::new();
        let a = t.constant(Tensor::zeros(&[2, 3]));
        let b = t.constant(Tensor::zeros(&[4, 2]));
        match t.matmul(a, b) {
            Err(Error::Shape { left, right, .. }) => {
                assert_eq!(left, vec![2, 3]);
                assert_eq!(right, vec![4, 2]);
            }
            other => panic!("expected shape error, got {other:?}"),
        }
    }

    #[test]
    fn concat_last_examples() {
        let mut t: Tape<f32> = Tape::new();
        let a = t.constant(Tensor::vector(vec![1.0, 2.0]));
        let b = t.constant(Tensor::vector(vec![3.0, 4.0, 5.0]));
        let c = t.concat_last(a, b).unwrap();
        assert_eq!(t.value(c).data(), &[1.0, 2.0, 3.0, 4.0, 5.0]);

        let a = t.constant(Tensor::zeros(&[1, 32]));
        let b = t.constant(Tensor::zeros(&[1, 48]));
        let c = t.concat_last(a, b).unwrap();
        assert_eq!(t.shape(c), &[1, 80]);

        let a = t.constant(Tensor::vector(vec![7.0, 8.0]));
        let empty = t.constant(Tensor::zeros(&[0]));
        let c = t.concat_last(a, empty).unwrap();
        assert_eq!(t.value(c).data(), &[7.0, 8.0]);

        let a = t.constant(Tensor::zeros(&[2, 3]));
        let b = t.constant(Tensor::zeros(&[3, 3]));
        assert!(matches!(t.concat_last(a, b), Err(Error::Shape { .. })));
    }

    #[test]
    fn softmax_examples() {
        let mut t: Tape<f64> = Tape::new();
        let x = t.constant(Tensor::vector(vec![0.0, 0.0, 0.0]));
        let y = t.softmax_last(x).unwrap();
        for &v in t.value(y).data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-12);
        }
        let mut t32: Tape<f32> = Tape::new();
        let x = t32.constant(Tensor::vector(vec![1000.0, 0.0]));
        let y = t32.softmax_last(x).unwrap();
        let v = t32.value(y).data();
        assert!(v.iter().all(|p| p.is_finite()));
        assert!((v[0] - 1.0).abs() < 1e-6 && v[1] < 1e-6);
    }

    #[test]
    fn layer_norm_examples() {
        let mut t: Tape<f64> = Tape::new();
        let x = t.constant(Tensor::vector(vec![2.5; 4]));
        let g = t.constant(Tensor::full(&[4], 1.0));
        let b = t.constant(Tensor::zeros(&[4]));
        let y = t.layer_norm(x, g, b, LAYER_NORM_EPS).unwrap();
        assert!(t.value(y).data().iter().all(|&v| v == 0.0));

        let x = t.constant(Tensor::vector(vec![1.0, -1.0]));
        let g = t.constant(Tensor::full(&[2], 1.0));
        let b = t.constant(Tensor::zeros(&[2]));
        let y = t.layer_norm(x, g, b, 1e-12).unwrap();
        let v = t.value(y).data();
        assert!((v[0] - 1.0).abs() < 1e-9 && (v[1] + 1.0).abs() < 1e-9);
    }

    #[test]
    fn relu_and_lookup() {
        let mut t: Tape<f32> = Tape::new();
        let x = t.constant(Tensor::vector(vec![-1.0, 0.0, 2.0]));
        let y = t.relu(x);
        assert_eq!(t.value(y).data(), &[0.0, 0.0, 2.0]);

        let table = t.param(Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap());
        let rows = t.embedding_lookup(table, &[0, 0]).unwrap();
        let v = t.value(rows);
        assert_eq!(v.row(0), v.row(1));
        let s = t.sum(rows);
        t.backward(s).unwrap();
        assert_eq!(t.grad(table).unwrap().data(), &[2.0, 2.0, 0.0, 0.0]);

        match t.embedding_lookup(table, &[5]) {
            Err(Error::Index { index, .. }) => assert_eq!(index, 5),
            other => panic!("expected index error, got {other:?}"),
        }
    }

    #[test]
    fn bce_examples() {
        let mut t: Tape<f64> = Tape::new();
        for y in [0.0, 1.0] {
            let z = t.constant(Tensor::vector(vec![0.0]));
            let l = t.bce_with_logits(z, &[y]).unwrap();
            assert!((t.value(l).item() - std::f64::consts::LN_2).abs() < 1e-12);
        }
        let z = t.constant(Tensor::vector(vec![20.0]));
        let l = t.bce_with_logits(z, &[1.0]).unwrap();
        assert!(t.value(l).item() < 1e-8);

        let z = t.constant(Tensor::vector(vec![0.0, 1.0]));
        assert!(matches!(t.bce_with_logits(z, &[1.0]), Err(Error::Shape { .. })));
    }

    #[test]
    fn bce_gradient_closed_form() {
        let z = Tensor::vector(vec![0.3, -1.2, 2.0]);
        let y = [1.0, 0.0, 1.0];
        let mut t = Tape::new();
        let zv = t.param(z.clone());
        let l = t.bce_with_logits(zv, &y).unwrap();
        t.backward(l).unwrap();
        for (i, g) in t.grad(zv).unwrap().data().iter().enumerate() {
            let zi: f64 = z.data()[i];
            let expect = (1.0 / (1.0 + (-zi).exp()) - y[i]) / 3.0;
            assert!((g - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn backward_simple_cases() {
        let mut t: Tape<f64> = Tape::new();
        let x = t.param(Tensor::scalar(3.0));
        let unused = t.param(Tensor::scalar(1.0));
        let y = t.mul(x, x).unwrap();
        t.backward(y).unwrap();
        assert_eq!(t.grad(x).unwrap().item(), 6.0);
        assert_eq!(t.grad_or_zeros(unused).item(), 0.0);

        let v = t.param(Tensor::vector(vec![1.0, 2.0]));
        assert!(matches!(t.backward(v), Err(Error::Contract(_))));
    }

    #[test]
    fn tape_records_form_a_dag() {
        let mut t: Tape<f64> = Tape::new();
        let a = t.param(random(&[2, 3], 1));
        let b = t.param(random(&[3, 2], 2));
        let c = t.matmul(a, b).unwrap();
        let d = t.relu(c);
        let s = t.sum(d);
        for v in [a, b, c, d, s] {
            assert!(t.inputs(v).iter().all(|inp| inp.index() < v.index()));
        }
        assert_eq!(t.op_name(s), "sum");
        assert_eq!(t.inputs(d), vec![c]);
    }

    #[test]
    fn gradients_of_every_op_match_finite_differences() {
        check_grad(&[random(&[3, 4], 1), random(&[4, 2], 2)], |t, v| {
            let m = t.matmul(v[0], v[1]).unwrap();
            weighted_sum(t, m, 10)
        });
        check_grad(&[random(&[3, 4], 3)], |t, v| {
            let m = t.transpose(v[0]).unwrap();
            weighted_sum(t, m, 11)
        });
        check_grad(&[random(&[2, 3], 4), random(&[2, 3], 5)], |t, v| {
            let m = t.add(v[0], v[1]).unwrap();
            let m = t.mul(m, v[0]).unwrap();
            weighted_sum(t, m, 12)
        });
        check_grad(&[random(&[3, 4], 6), random(&[4], 7)], |t, v| {
            let m = t.add_row(v[0], v[1]).unwrap();
            weighted_sum(t, m, 13)
        });
        check_grad(&[random(&[3, 2], 8), random(&[3, 5], 9)], |t, v| {
            let m = t.concat_last(v[0], v[1]).unwrap();
            weighted_sum(t, m, 14)
        });
        check_grad(&[random(&[2, 3], 15), random(&[1, 3], 16)], |t, v| {
            let m = t.concat_rows(&[v[0], v[1]]).unwrap();
            weighted_sum(t, m, 17)
        });
        check_grad(&[random(&[3, 6], 18)], |t, v| {
            let m = t.slice_last(v[0], 2, 3).unwrap();
            weighted_sum(t, m, 19)
        });
        check_grad(&[random(&[3, 5], 20)], |t, v| {
            let m = t.scale(v[0], 1.5);
            let m = t.softmax_last(m).unwrap();
            weighted_sum(t, m, 21)
        });
        check_grad(&[random(&[3, 5], 22), random(&[5], 23), random(&[5], 24)], |t, v| {
            let m = t.layer_norm(v[0], v[1], v[2], LAYER_NORM_EPS).unwrap();
            weighted_sum(t, m, 25)
        });
        check_grad(&[random(&[4, 3], 26)], |t, v| {
            let m = t.relu(v[0]);
            weighted_sum(t, m, 27)
        });
        check_grad(&[random(&[4, 3], 28)], |t, v| {
            let m = t.embedding_lookup(v[0], &[2, 0, 2, 3]).unwrap();
            weighted_sum(t, m, 29)
        });
        let targets = [1.0, 0.0, 0.0, 1.0, 1.0];
        check_grad(&[random(&[5], 30).map(|v| 3.0 * v)], |t, v| {
            t.bce_with_logits(v[0], &targets).unwrap()
        });
    }

    #[test]
    fn injected_concat_fault_changes_left_gradient() {
        let mut t: Tape<f64> = Tape::new();
        t.inject_fault(BackwardFault::ConcatLastLeftDoubled);
        let a = t.param(Tensor::vector(vec![1.0]));
        let b = t.param(Tensor::vector(vec![1.0]));
        let c = t.concat_last(a, b).unwrap();
        let s = t.sum(c);
        t.backward(s).unwrap();
        assert_eq!(t.grad(a).unwrap().item(), 2.0);
        assert_eq!(t.grad(b).unwrap().item(), 1.0);
    }

    proptest! {
        #[test]
        fn softmax_slices_are_distributions(values in proptest::collection::vec(-50.0f32..50.0, 1..40), shift in -100.0f32..100.0) {
            let n = values.len();
            let mut t: Tape<f32> = Tape::new();
            let x = t.constant(Tensor::vector(values.clone()));
            let y = t.softmax_last(x).unwrap();
            let p = t.value(y).data().to_vec();
            let total: f64 = p.iter().map(|&v| v as f64).sum();
            prop_assert!((total - 1.0).abs() <= 1e-6);
            prop_assert!(p.iter().all(|&v| (0.0..=1.0).contains(&v)));

            let shifted: Vec<f64> = values.iter().map(|&v| v as f64 + shift as f64).collect();
            let mut t64: Tape<f64> = Tape::new();
            let a = t64.constant(Tensor::vector(values.iter().map(|&v| v as f64).collect()));
            let b = t64.constant(Tensor::vector(shifted));
            let ya = t64.softmax_last(a).unwrap();
            let yb = t64.softmax_last(b).unwrap();
            for i in 0..n {
                prop_assert!((t64.value(ya).data()[i] - t64.value(yb).data()[i]).abs() < 1e-9);
            }
        }

        #[test]
        fn concat_prefix_suffix_recovery(a in proptest::collection::vec(-1e3f32..1e3, 0..20), b in proptest::collection::vec(-1e3f32..1e3, 0..20)) {
            let (d1, d2) = (a.len(), b.len());
            let mut t: Tape<f32> = Tape::new();
            let av = t.constant(Tensor::vector(a.clone()));
            let bv = t.constant(Tensor::vector(b.clone()));
            let c = t.concat_last(av, bv).unwrap();
            prop_assert_eq!(t.shape(c), &[d1 + d2]);
            let head = t.slice_last(c, 0, d1).unwrap();
            let tail = t.slice_last(c, d1, d2).unwrap();
            prop_assert_eq!(t.value(head).data(), a.as_slice());
            prop_assert_eq!(t.value(tail).data(), b.as_slice());
        }
    }
}
