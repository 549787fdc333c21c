//! Central finite-difference verification of every graph op's backward
//! pass. For each op a tiny graph ends in a fixed linear functional of the
//! op output; analytic gradients must agree with ±h re-evaluations on
//! every input element. The canonical per-op sweep lives here so the test
//! suite and the acceptance gate share one table.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::graph::{BnConfig, BnRunning, Graph, NodeId};
use super::Tensor;

pub const FD_STEP: f64 = 1e-5;

/// Deterministic values in `[lo, hi]`, optionally sign-flipped, with
/// magnitudes bounded away from zero so kinked ops (relu, |.|) are never
/// sampled at their kink.
pub fn rand_values(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64, signed: bool) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let v = lo + (hi - lo) * rng.gen::<f64>();
            if signed && rng.gen::<bool>() {
                -v
            } else {
                v
            }
        })
        .collect()
}

pub fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64, signed: bool) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), rand_values(rng, n, lo, hi, signed)).unwrap()
}

/// Linear functional coefficients used to reduce an op output to a scalar.
pub fn reducer(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    rand_values(rng, n, 0.2, 1.0, true)
}

/// Check analytic vs central finite-difference gradients of `build` w.r.t.
/// every element of every input tensor; panics past `tol` relative error.
pub fn check_op<F>(name: &str, inputs: &[Tensor], tol: f64, build: F)
where
    F: Fn(&mut Graph, &[NodeId]) -> NodeId,
{
    let eval = |perturb: Option<(usize, usize, f64)>| -> (f64, Option<Vec<Vec<f64>>>) {
        let mut g = Graph::new();
        let ids: Vec<NodeId> = inputs
            .iter()
            .enumerate()
            .map(|(j, t)| {
                let mut t = t.clone();
                if let Some((pj, pe, d)) = perturb {
                    if pj == j {
                        t.data_mut()[pe] += d;
                    }
                }
                g.leaf(t, true)
            })
            .collect();
        let loss = build(&mut g, &ids);
        let val = g.value(loss).item().expect("loss must be scalar");
        if perturb.is_none() {
            let grads = g.backward(loss).expect("backward");
            let per_input = ids
                .iter()
                .map(|&id| grads.get(id).expect("leaf grad").data().to_vec())
                .collect();
            (val, Some(per_input))
        } else {
            (val, None)
        }
    };

    let (base, analytic) = eval(None);
    assert!(base.is_finite(), "{name}: non-finite base loss {base}");
    let analytic = analytic.unwrap();

    for (j, t) in inputs.iter().enumerate() {
        for e in 0..t.numel() {
            let (lp, _) = eval(Some((j, e, FD_STEP)));
            let (lm, _) = eval(Some((j, e, -FD_STEP)));
            let fd = (lp - lm) / (2.0 * FD_STEP);
            let an = analytic[j][e];
            let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(1.0);
            assert!(
                rel < tol,
                "{name}: input {j} element {e}: analytic {an:.9e} vs fd {fd:.9e} (rel {rel:.3e})"
            );
        }
    }
}

pub fn conv2d_suite(tol: f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for &(n, cin, h, w, cout, k, stride, pad) in &[
        (1usize, 1usize, 4usize, 4usize, 1usize, 3usize, 1usize, 1usize),
        (2, 3, 8, 8, 4, 4, 2, 1),
        (1, 2, 5, 7, 3, 3, 2, 0),
    ] {
        let x = rand_tensor(&mut rng, &[n, cin, h, w], 0.1, 1.0, true);
        let wt = rand_tensor(&mut rng, &[cout, cin, k, k], 0.1, 0.8, true);
        let b = rand_tensor(&mut rng, &[cout], 0.1, 0.5, true);
        let oh = (h + 2 * pad - k) / stride + 1;
        let ow = (w + 2 * pad - k) / stride + 1;
        let r = reducer(&mut rng, n * cout * oh * ow);
        check_op("conv2d", &[x, wt, b], tol, |g, ids| {
            let y = g.conv2d(ids[0], ids[1], ids[2], stride, pad).unwrap();
            g.dot(y, &r).unwrap()
        });
    }
}

pub fn conv_transpose2d_suite(tol: f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for &(n, cin, h, w, cout, k, stride, pad) in &[
        (1usize, 1usize, 2usize, 2usize, 1usize, 4usize, 2usize, 1usize),
        (2, 4, 3, 3, 2, 4, 2, 1),
        (1, 3, 4, 5, 2, 3, 1, 0),
    ] {
        let x = rand_tensor(&mut rng, &[n, cin, h, w], 0.1, 1.0, true);
        let wt = rand_tensor(&mut rng, &[cin, cout, k, k], 0.1, 0.8, true);
        let b = rand_tensor(&mut rng, &[cout], 0.1, 0.5, true);
        let oh = (h - 1) * stride + k - 2 * pad;
        let ow = (w - 1) * stride + k - 2 * pad;
        let r = reducer(&mut rng, n * cout * oh * ow);
        check_op("conv_transpose2d", &[x, wt, b], tol, |g, ids| {
            let y = g.conv_transpose2d(ids[0], ids[1], ids[2], stride, pad).unwrap();
            g.dot(y, &r).unwrap()
        });
    }
}

pub fn batch_norm_train_suite(tol: f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for shape in [[2usize, 1, 2, 2], [2, 3, 4, 4], [3, 2, 1, 5]] {
        let c = shape[1];
        let x = rand_tensor(&mut rng, &shape, 0.2, 1.5, true);
        let gamma = rand_tensor(&mut rng, &[c], 0.5, 1.5, false);
        let beta = rand_tensor(&mut rng, &[c], 0.1, 0.5, true);
        let r = reducer(&mut rng, shape.iter().product());
        check_op("batch_norm/train", &[x, gamma, beta], tol, |g, ids| {
            let mut running = BnRunning::new(c);
            let y = g
                .batch_norm(ids[0], ids[1], ids[2], &mut running, BnConfig::default(), true)
                .unwrap();
            g.dot(y, &r).unwrap()
        });
    }
}

pub fn batch_norm_eval_suite(tol: f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    for shape in [[1usize, 2, 2, 2], [2, 1, 3, 3], [2, 4, 2, 2]] {
        let c = shape[1];
        let x = rand_tensor(&mut rng, &shape, 0.2, 1.5, true);
        let gamma = rand_tensor(&mut rng, &[c], 0.5, 1.5, false);
        let beta = rand_tensor(&mut rng, &[c], 0.1, 0.5, true);
        let mean = rand_values(&mut rng, c, 0.1, 0.4, true);
        let var = rand_values(&mut rng, c, 0.5, 2.0, false);
        let r = reducer(&mut rng, shape.iter().product());
        check_op("batch_norm/eval", &[x, gamma, beta], tol, |g, ids| {
            let mut running = BnRunning { mean: mean.clone(), var: var.clone() };
            let y = g
                .batch_norm(ids[0], ids[1], ids[2], &mut running, BnConfig::default(), false)
                .unwrap();
            g.dot(y, &r).unwrap()
        });
    }
}

pub fn activation_suite(tol: f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    for shape in [vec![7usize], vec![2, 3], vec![2, 2, 3, 3]] {
        let x = rand_tensor(&mut rng, &shape, 0.1, 1.2, true);
        let n = x.numel();
        let r1 = reducer(&mut rng, n);
        check_op("relu", std::slice::from_ref(&x), tol, |g, ids| {
            let y = g.relu(ids[0]);
            g.dot(y, &r1).unwrap()
        });
        let r2 = reducer(&mut rng, n);
        check_op("leaky_relu", std::slice::from_ref(&x), tol, |g, ids| {
            let y = g.leaky_relu(ids[0], 0.2);
            g.dot(y, &r2).unwrap()
        });
        let r3 = reducer(&mut rng, n);
        check_op("sigmoid", std::slice::from_ref(&x), tol, |g, ids| {
            let y = g.sigmoid(ids[0]);
            g.dot(y, &r3).unwrap()
        });
        let r4 = reducer(&mut rng, n);
        check_op("log1p", &[rand_tensor(&mut rng, &shape, 0.05, 2.0, false)], tol, |g, ids| {
            let y = g.log1p(ids[0]);
            g.dot(y, &r4).unwrap()
        });
    }
}

pub fn affine_suite(tol: f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    for &(n, k, m) in &[(2usize, 3usize, 4usize), (1, 5, 2), (4, 2, 7)] {
        let x = rand_tensor(&mut rng, &[n, k], 0.1, 1.0, true);
        let w = rand_tensor(&mut rng, &[k, m], 0.1, 0.8, true);
        let b = rand_tensor(&mut rng, &[m], 0.1, 0.5, true);
        let r = reducer(&mut rng, n * m);
        check_op("affine", &[x, w, b], tol, |g, ids| {
            let y = g.affine(ids[0], ids[1], ids[2]).unwrap();
            g.dot(y, &r).unwrap()
        });
    }
}

pub fn structural_suite(tol: f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(17);

    for &(ca, cb) in &[(1usize, 2usize), (3, 1), (2, 2)] {
        let a = rand_tensor(&mut rng, &[2, ca, 2, 3], 0.1, 1.0, true);
        let b = rand_tensor(&mut rng, &[2, cb, 2, 3], 0.1, 1.0, true);
        let r = reducer(&mut rng, 2 * (ca + cb) * 6);
        check_op("concat_channels", &[a, b], tol, |g, ids| {
            let y = g.concat_channels(ids[0], ids[1]).unwrap();
            g.dot(y, &r).unwrap()
        });
    }

    for &(n, c, h, w) in &[(2usize, 3usize, 2usize, 2usize), (1, 4, 3, 5), (3, 1, 1, 1)] {
        let x = rand_tensor(&mut rng, &[n, c], 0.1, 1.0, true);
        let r = reducer(&mut rng, n * c * h * w);
        check_op("tile_spatial", std::slice::from_ref(&x), tol, |g, ids| {
            let y = g.tile_spatial(ids[0], h, w).unwrap();
            g.dot(y, &r).unwrap()
        });
    }

    for &(n, c, h, w) in &[(1usize, 2usize, 3usize, 3usize), (2, 4, 2, 5), (3, 1, 4, 1)] {
        let x = rand_tensor(&mut rng, &[n, c, h, w], 0.1, 1.0, true);
        let r = reducer(&mut rng, n * c);
        check_op("global_avg_pool", std::slice::from_ref(&x), tol, |g, ids| {
            let y = g.global_avg_pool(ids[0]).unwrap();
            g.dot(y, &r).unwrap()
        });
    }
}

pub fn elementwise_suite(tol: f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(18);
    for shape in [vec![5usize], vec![2, 4], vec![1, 2, 2, 3]] {
        let a = rand_tensor(&mut rng, &shape, 0.1, 1.0, true);
        let b = rand_tensor(&mut rng, &shape, 0.1, 1.0, true);
        let n = a.numel();
        let r1 = reducer(&mut rng, n);
        check_op("add", &[a.clone(), b.clone()], tol, |g, ids| {
            let y = g.add(ids[0], ids[1]).unwrap();
            g.dot(y, &r1).unwrap()
        });
        let r2 = reducer(&mut rng, n);
        check_op("sub", &[a.clone(), b.clone()], tol, |g, ids| {
            let y = g.sub(ids[0], ids[1]).unwrap();
            g.dot(y, &r2).unwrap()
        });
        let r3 = reducer(&mut rng, n);
        check_op("mul", &[a.clone(), b.clone()], tol, |g, ids| {
            let y = g.mul(ids[0], ids[1]).unwrap();
            g.dot(y, &r3).unwrap()
        });
        for &factor in &[0.05, -2.0, 1.0] {
            let r = reducer(&mut rng, n);
            check_op("scale", std::slice::from_ref(&a), tol, |g, ids| {
                let y = g.scale(ids[0], factor);
                g.dot(y, &r).unwrap()
            });
        }
    }
}

pub fn weighted_l1_suite(tol: f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(19);
    for shape in [vec![6usize], vec![2, 5], vec![1, 3, 2, 2]] {
        // keep |pred - target| >= 0.3 so FD never crosses the kink
        let pred = rand_tensor(&mut rng, &shape, 1.0, 2.0, false);
        let target = rand_tensor(&mut rng, &shape, 0.1, 0.7, false);
        let weight = rand_tensor(&mut rng, &shape, 0.2, 2.0, false);
        check_op("weighted_l1", &[pred, target, weight], tol, |g, ids| {
            g.weighted_l1(ids[0], ids[1], ids[2]).unwrap()
        });
    }
}

pub fn softmax_cross_entropy_suite(tol: f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    for &(n, k) in &[(2usize, 3usize), (1, 5), (4, 4)] {
        let logits = rand_tensor(&mut rng, &[n, k], 0.1, 2.0, true);
        let labels: Vec<usize> = (0..n).map(|_| rng.gen_range(0..k)).collect();
        check_op("softmax_cross_entropy", std::slice::from_ref(&logits), tol, |g, ids| {
            g.softmax_cross_entropy(ids[0], &labels).unwrap()
        });
    }
}

pub fn embed_rows_suite(tol: f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    // repeated index 2 exercises gradient accumulation into one row
    for (rows, dim, idx) in [
        (5usize, 3usize, vec![0usize, 2, 4, 2]),
        (3, 2, vec![1]),
        (6, 4, vec![5, 0]),
    ] {
        let table = rand_tensor(&mut rng, &[rows, dim], 0.1, 1.0, true);
        let r = reducer(&mut rng, idx.len() * dim);
        check_op("embed_rows", std::slice::from_ref(&table), tol, |g, ids| {
            let y = g.embed_rows(ids[0], &idx).unwrap();
            g.dot(y, &r).unwrap()
        });
    }
}

pub fn batch_select_sum_suite(tol: f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    // overlapping groups exercise fan-out of one row into two outputs
    for (n, rest, groups) in [
        (4usize, vec![2usize], vec![vec![0usize, 2], vec![1, 3]]),
        (3, vec![2, 2], vec![vec![0, 1, 2]]),
        (5, vec![3], vec![vec![0, 1], vec![1, 4], vec![3]]),
    ] {
        let mut shape = vec![n];
        shape.extend(&rest);
        let x = rand_tensor(&mut rng, &shape, 0.1, 1.0, true);
        let out_numel: usize = groups.len() * rest.iter().product::<usize>();
        let r = reducer(&mut rng, out_numel);
        check_op("batch_select_sum", std::slice::from_ref(&x), tol, |g, ids| {
            let y = g.batch_select_sum(ids[0], &groups).unwrap();
            g.dot(y, &r).unwrap()
        });
    }
}

/// End-to-end chains shaped like the real models: a miniature masking
/// U-Net branch and a miniature classifier head.
pub fn composite_suite(tol: f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(23);

    // conv -> bn -> leaky_relu -> conv_transpose -> sigmoid -> mask applied
    // to the mixture -> weighted L1 against a target mask
    let x = rand_tensor(&mut rng, &[2, 1, 4, 4], 0.2, 1.0, false);
    let w1 = rand_tensor(&mut rng, &[2, 1, 4, 4], 0.1, 0.6, true);
    let b1 = rand_tensor(&mut rng, &[2], 0.05, 0.2, true);
    let gamma = rand_tensor(&mut rng, &[2], 0.8, 1.2, false);
    let beta = rand_tensor(&mut rng, &[2], 0.05, 0.2, true);
    let w2 = rand_tensor(&mut rng, &[2, 1, 4, 4], 0.1, 0.6, true);
    let b2 = rand_tensor(&mut rng, &[1], 0.05, 0.2, true);
    let target = rand_tensor(&mut rng, &[2, 1, 4, 4], 0.0, 0.4, false);
    let weight = rand_tensor(&mut rng, &[2, 1, 4, 4], 0.5, 1.5, false);
    check_op(
        "composite/mask_branch",
        &[x.clone(), w1, b1, gamma, beta, w2, b2],
        tol,
        |g, ids| {
            let t = g.constant(target.clone());
            let wgt = g.constant(weight.clone());
            let c1 = g.conv2d(ids[0], ids[1], ids[2], 2, 1).unwrap();
            let mut running = BnRunning::new(2);
            let bn =
                g.batch_norm(c1, ids[3], ids[4], &mut running, BnConfig::default(), true).unwrap();
            let act = g.leaky_relu(bn, 0.2);
            let up = g.conv_transpose2d(act, ids[5], ids[6], 2, 1).unwrap();
            let mask = g.sigmoid(up);
            let sep = g.mul(mask, ids[0]).unwrap();
            g.weighted_l1(sep, t, wgt).unwrap()
        },
    );

    // conv -> relu -> global pool -> affine -> cross entropy
    let cx = rand_tensor(&mut rng, &[3, 1, 6, 6], 0.1, 1.0, false);
    let cw = rand_tensor(&mut rng, &[2, 1, 3, 3], 0.1, 0.6, true);
    let cb = rand_tensor(&mut rng, &[2], 0.05, 0.2, true);
    let fw = rand_tensor(&mut rng, &[2, 4], 0.1, 0.6, true);
    let fb = rand_tensor(&mut rng, &[4], 0.05, 0.2, true);
    let labels = vec![0usize, 3, 1];
    check_op("composite/classifier", &[cx, cw, cb, fw, fb], tol, |g, ids| {
        let c = g.conv2d(ids[0], ids[1], ids[2], 2, 1).unwrap();
        let a = g.relu(c);
        let p = g.global_avg_pool(a).unwrap();
        let logits = g.affine(p, ids[3], ids[4]).unwrap();
        g.softmax_cross_entropy(logits, &labels).unwrap()
    });
}

/// Every suite, in one call: the full differentiable-op catalog at ≥3
/// shapes per op.
pub fn check_all_ops(tol: f64) {
    conv2d_suite(tol);
    conv_transpose2d_suite(tol);
    batch_norm_train_suite(tol);
    batch_norm_eval_suite(tol);
    activation_suite(tol);
    affine_suite(tol);
    structural_suite(tol);
    elementwise_suite(tol);
    weighted_l1_suite(tol);
    softmax_cross_entropy_suite(tol);
    embed_rows_suite(tol);
    batch_select_sum_suite(tol);
    composite_suite(tol);
}

#[cfg(test)]
mod tests {
    use super::*;

    /// A negative tolerance is unsatisfiable, so the very first element
    /// comparison must trip — proving the sweep really asserts.
    #[test]
    #[should_panic(expected = "conv2d")]
    fn sweep_panics_when_tolerance_is_unsatisfiable() {
        conv2d_suite(-1.0);
    }
}
