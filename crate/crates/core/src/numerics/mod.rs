//! Dense tensors, a reverse-mode tape, Adam, and the checkpoint format.

mod adam;
pub mod checkpoint;
mod finite_diff;
mod gemm;
mod graph;
mod tensor;

pub use adam::{adam_step, AdamState};
pub use checkpoint::{write_atomic, Checkpoint};
pub use finite_diff::{finite_difference_grad, max_relative_error};
pub use graph::{Graph, Var, LAYER_NORM_EPS};
pub use tensor::Tensor;

use crate::error::Result;

/// Matrix product of two 2-D tensors.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let mut g = Graph::new();
    let (va, vb) = (g.constant(a.clone()), g.constant(b.clone()));
    let out = g.matmul(va, vb)?;
    Ok(g.value(out).clone())
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows(x: &Tensor) -> Tensor {
    let mut g = Graph::new();
    let v = g.constant(x.clone());
    let out = g.softmax_rows(v);
    g.value(out).clone()
}

pub fn layer_norm(x: &Tensor, gain: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let mut g = Graph::new();
    let (vx, vg, vb) = (
        g.constant(x.clone()),
        g.constant(gain.clone()),
        g.constant(bias.clone()),
    );
    let out = g.layer_norm(vx, vg, vb)?;
    Ok(g.value(out).clone())
}

/// Mean negative log-softmax probability of `targets`.
pub fn cross_entropy_logits(logits: &Tensor, targets: &[usize]) -> Result<f64> {
    let mut g = Graph::new();
    let v = g.constant(logits.clone());
    let out = g.cross_entropy(v, targets)?;
    Ok(g.value(out).item())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn t2(rows: &[&[f64]]) -> Tensor {
        Tensor::from_rows(rows).unwrap()
    }

    #[test]
    fn matmul_examples() {
        let m = t2(&[&[1.0, 2.0], &[3.0, 4.0]]);
        let eye = t2(&[&[1.0, 0.0], &[0.0, 1.0]]);
        assert_eq!(matmul(&eye, &m).unwrap(), m);
        let proj = t2(&[&[1.0, 0.0], &[0.0, 0.0]]);
        let b = t2(&[&[5.0, 6.0], &[7.0, 8.0]]);
        assert_eq!(matmul(&proj, &b).unwrap(), t2(&[&[5.0, 6.0], &[0.0, 0.0]]));
        let ones = t2(&[&[1.0], &[1.0]]);
        assert_eq!(matmul(&m, &ones).unwrap(), t2(&[&[3.0], &[7.0]]));
        assert!(matches!(matmul(&ones, &ones), Err(Error::Dimension(_))));
    }

    #[test]
    fn softmax_examples() {
        let s = softmax_rows(&t2(&[&[0.0, 0.0]]));
        assert!((s.data()[0] - 0.5).abs() < 1e-12);
        let s = softmax_rows(&t2(&[&[2f64.ln(), 0.0]]));
        assert!((s.data()[0] - 2.0 / 3.0).abs() < 1e-12);
        assert!((s.data()[1] - 1.0 / 3.0).abs() < 1e-12);
        let s = softmax_rows(&t2(&[&[1000.0, 0.0]]));
        assert!(s.is_finite());
        assert!((s.data()[0] - 1.0).abs() < 1e-12 && s.data()[1] < 1e-300);
    }

    #[test]
    fn layer_norm_examples() {
        let ones = Tensor::vector(vec![1.0; 3]).unwrap();
        let zeros = Tensor::vector(vec![0.0; 3]).unwrap();
        let c = Tensor::new(vec![1, 3], vec![2.5; 3]).unwrap();
        let y = layer_norm(&c, &ones, &zeros).unwrap();
        assert!(y.data().iter().all(|v| v.abs() < 1e-12));

        let x = Tensor::new(vec![1, 2], vec![1.0, -1.0]).unwrap();
        let y = layer_norm(
            &x,
            &Tensor::vector(vec![1.0; 2]).unwrap(),
            &Tensor::vector(vec![0.0; 2]).unwrap(),
        )
        .unwrap();
        let expect = 1.0 / (1.0 + LAYER_NORM_EPS).sqrt();
        assert!((y.data()[0] - expect).abs() < 1e-12 && (y.data()[1] + expect).abs() < 1e-12);

        let x = Tensor::new(vec![2, 3], vec![3.0, -1.0, 7.0, 0.1, 0.2, 0.3]).unwrap();
        let bias = Tensor::vector(vec![0.5, -0.5, 2.0]).unwrap();
        let y = layer_norm(&x, &zeros, &bias).unwrap();
        assert_eq!(y.row(0), bias.data());
        assert_eq!(y.row(1), bias.data());
    }

    #[test]
    fn cross_entropy_examples() {
        let ce = cross_entropy_logits(&t2(&[&[0.0, 0.0]]), &[0]).unwrap();
        assert!((ce - 2f64.ln()).abs() < 1e-12);
        let ce = cross_entropy_logits(&t2(&[&[40.0, -40.0]]), &[0]).unwrap();
        assert!(ce < 1e-30);
        let ce = cross_entropy_logits(&t2(&[&[0.0, 0.0], &[40.0, -40.0]]), &[0, 0]).unwrap();
        assert!((ce - 0.346574).abs() < 1e-6);
        assert!(matches!(
            cross_entropy_logits(&t2(&[&[0.0, 0.0]]), &[2]),
            Err(Error::Index(_))
        ));
    }

    fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    /// Checks d(loss)/d(input `which`) from the tape against central differences.
    fn check_grad<F>(inputs: &[Tensor], which: usize, build: F)
    where
        F: Fn(&mut Graph, &[Var]) -> Var,
    {
        let eval = |ins: &[Tensor]| {
            let mut g = Graph::new();
            let vars: Vec<Var> = ins.iter().map(|t| g.param(t.clone())).collect();
            let loss = build(&mut g, &vars);
            (g, vars, loss)
        };
        let (mut g, vars, loss) = eval(inputs);
        g.backward(loss).unwrap();
        let analytic = g.grad(vars[which]).unwrap().to_vec();
        let numeric = finite_difference_grad(
            |x| {
                let mut ins = inputs.to_vec();
                ins[which] = x.clone();
                let (g, _, loss) = eval(&ins);
                g.value(loss).item()
            },
            &inputs[which],
            1e-5,
        )
        .unwrap();
        let err = max_relative_error(&analytic, &numeric, 1e-6);
        assert!(err <= 1e-3, "relative error {err}: {analytic:?} vs {numeric:?}");
    }

    /// Reduces an arbitrary tensor to a scalar with fixed random weights so
    /// every output coordinate contributes distinctly.
    fn probe(g: &mut Graph, v: Var, seed: u64) -> Var {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = random(g.value(v).shape(), &mut rng);
        let w = g.constant(w);
        let p = g.mul(v, w).unwrap();
        g.sum(p)
    }

    #[test]
    fn op_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for trial in 0..5u64 {
            let a = random(&[3, 4], &mut rng);
            let b = random(&[4, 2], &mut rng);
            let bt = random(&[5, 4], &mut rng);
            for w in 0..2 {
                check_grad(&[a.clone(), b.clone()], w, |g, v| {
                    let y = g.matmul(v[0], v[1]).unwrap();
                    probe(g, y, trial)
                });
                check_grad(&[a.clone(), bt.clone()], w, |g, v| {
                    let y = g.matmul_nt(v[0], v[1]).unwrap();
                    probe(g, y, trial)
                });
            }
            let bias = random(&[4], &mut rng);
            for w in 0..2 {
                check_grad(&[a.clone(), bias.clone()], w, |g, v| {
                    let y = g.add_row(v[0], v[1]).unwrap();
                    let y = g.gelu(y);
                    probe(g, y, trial)
                });
            }
            let gain = random(&[4], &mut rng);
            for w in 0..3 {
                check_grad(&[a.clone(), gain.clone(), bias.clone()], w, |g, v| {
                    let y = g.layer_norm(v[0], v[1], v[2]).unwrap();
                    probe(g, y, trial)
                });
            }
            check_grad(std::slice::from_ref(&a), 0, |g, v| {
                let y = g.softmax_rows(v[0]);
                probe(g, y, trial)
            });
            check_grad(std::slice::from_ref(&a), 0, |g, v| {
                let y = g.log_softmax_rows(v[0]);
                probe(g, y, trial)
            });
            check_grad(std::slice::from_ref(&a), 0, |g, v| {
                let y = g.l2_normalize_rows(v[0]).unwrap();
                probe(g, y, trial)
            });
            check_grad(std::slice::from_ref(&a), 0, |g, v| g.cross_entropy(v[0], &[0, 3, 1]).unwrap());
            let q = crate::numerics::softmax_rows(&random(&[3, 4], &mut rng));
            check_grad(std::slice::from_ref(&a), 0, |g, v| g.soft_cross_entropy(v[0], &q).unwrap());
            let table = random(&[6, 3], &mut rng);
            check_grad(&[table], 0, |g, v| {
                let y = g.gather(v[0], &[5, 0, 5, 2]).unwrap();
                let y = g.select_rows(y, &[3, 1]).unwrap();
                probe(g, y, trial)
            });
        }
    }

    #[test]
    fn attention_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        // two sequences of length 4, second one padded after 2 tokens
        let mask = [true, true, true, true, true, true, false, false];
        for trial in 0..3u64 {
            let ins: Vec<Tensor> = (0..3).map(|_| random(&[8, 4], &mut rng)).collect();
            for w in 0..3 {
                check_grad(&ins, w, |g, v| {
                    let y = g.attention(v[0], v[1], v[2], 4, 2, &mask).unwrap();
                    probe(g, y, trial)
                });
            }
        }
    }

    #[test]
    fn attention_ignores_padding() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let q = random(&[3, 4], &mut rng);
        let k = random(&[3, 4], &mut rng);
        let v = random(&[3, 4], &mut rng);
        let mut g = Graph::new();
        let (vq, vk, vv) = (g.constant(q.clone()), g.constant(k.clone()), g.constant(v.clone()));
        let short = g.attention(vq, vk, vv, 3, 2, &[true, true, true]).unwrap();
        let short = g.value(short).clone();

        // Same three tokens followed by two pads with arbitrary content.
        let pad = |t: &Tensor, rng: &mut ChaCha8Rng| {
            let mut d = t.data().to_vec();
            d.extend(random(&[2, 4], rng).data());
            Tensor::new(vec![5, 4], d).unwrap()
        };
        let (q5, k5, v5) = (pad(&q, &mut rng), pad(&k, &mut rng), pad(&v, &mut rng));
        let mut g = Graph::new();
        let (vq, vk, vv) = (g.constant(q5), g.constant(k5), g.constant(v5));
        let long = g
            .attention(vq, vk, vv, 5, 2, &[true, true, true, false, false])
            .unwrap();
        let long = g.value(long);
        for i in 0..3 {
            for (a, b) in short.row(i).iter().zip(long.row(i)) {
                assert!((a - b).abs() < 1e-12);
            }
        }
        assert!(long.row(3).iter().chain(long.row(4)).all(|v| *v == 0.0));
    }

    proptest! {
        #[test]
        fn softmax_rows_are_distributions(
            rows in prop::collection::vec(prop::collection::vec(-50.0f64..50.0, 4), 1..6)
        ) {
            let s = softmax_rows(&Tensor::from_rows(&rows).unwrap());
            for r in 0..s.rows() {
                let row = s.row(r);
                prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
                prop_assert!(row.iter().all(|p| *p > 0.0));
            }
        }

        #[test]
        fn adam_zero_grad_fresh_state_no_op(
            params in prop::collection::vec(-10.0f64..10.0, 1..16),
            lr in 1e-5f64..1.0
        ) {
            let mut p = Tensor::vector(params).unwrap();
            let before = p.clone();
            let mut s = AdamState::new(p.numel(), lr);
            let zeros = vec![0.0; p.numel()];
            adam_step(&mut p, &zeros, &mut s).unwrap();
            prop_assert_eq!(p, before);
        }
    }
}
