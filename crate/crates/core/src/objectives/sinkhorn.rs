use crate::numerics::Tensor;

fn lse(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let m = xs.clone().fold(f64::NEG_INFINITY, f64::max);
    m + xs.map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Final assignment plus the iterate just before the last row pass, where
/// columns still sum to `B/K`.
#[derive(Clone, Debug, PartialEq)]
pub struct SinkhornTrace {
    pub assignment: Tensor,
    pub before_last_row_pass: Tensor,
}

/// Log-domain Sinkhorn-Knopp on `exp(scores / ε)`: each iteration scales
/// columns to sum `B/K`, then rows to sum 1.
pub fn sinkhorn_trace(scores: &Tensor, epsilon: f64, iters: usize) -> SinkhornTrace {
    let (b, k) = (scores.rows(), scores.cols());
    let mut log_q: Vec<f64> = scores.data().iter().map(|s| s / epsilon).collect();
    let col_target = (b as f64 / k as f64).ln();
    let mut before = log_q.clone();
    for _ in 0..iters.max(1) {
        for c in 0..k {
            let z = lse((0..b).map(|r| log_q[r * k + c]));
            for r in 0..b {
                log_q[r * k + c] += col_target - z;
            }
        }
        before.copy_from_slice(&log_q);
        for r in 0..b {
            let row = &mut log_q[r * k..(r + 1) * k];
            let z = lse(row.iter().copied());
            row.iter_mut().for_each(|v| *v -= z);
        }
    }
    let to_tensor = |v: &[f64]| {
        Tensor::new(vec![b, k], v.iter().map(|x| x.exp()).collect()).expect("same shape as scores")
    };
    SinkhornTrace {
        assignment: to_tensor(&log_q),
        before_last_row_pass: to_tensor(&before),
    }
}

pub fn sinkhorn_assign(scores: &Tensor, epsilon: f64, iters: usize) -> Tensor {
    sinkhorn_trace(scores, epsilon, iters).assignment
}
