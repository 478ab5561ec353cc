mod support;

use duplex_tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use support::fd::{max_relative_error, weighted_sum};

const TOL: f64 = 1e-4;

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

/// Values bounded away from zero so ReLU stays differentiable under perturbation.
fn rand_away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let mut t = rand_tensor(rng, shape);
    for v in t.data_mut() {
        *v = v.signum() * (0.1 + v.abs());
    }
    t
}

fn rng() -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(7)
}

#[test]
fn matmul_gradients() {
    let mut r = rng();
    for (m, k, n) in [(1, 1, 1), (3, 4, 2), (5, 2, 7)] {
        let ins = [rand_tensor(&mut r, &[m, k]), rand_tensor(&mut r, &[k, n])];
        let e = max_relative_error(&ins, |g, v| {
            let y = g.matmul(v[0], v[1]);
            weighted_sum(g, y)
        });
        assert!(e < TOL, "matmul {m}x{k}x{n}: {e}");
        let ins = [rand_tensor(&mut r, &[m, k]), rand_tensor(&mut r, &[n, k])];
        let e = max_relative_error(&ins, |g, v| {
            let y = g.matmul_bt(v[0], v[1]);
            weighted_sum(g, y)
        });
        assert!(e < TOL, "matmul_bt {m}x{k}x{n}: {e}");
    }
}

#[test]
fn softmax_gradients() {
    let mut r = rng();
    for (rows, cols) in [(1, 3), (4, 5), (6, 2)] {
        let ins = [rand_tensor(&mut r, &[rows, cols])];
        let e = max_relative_error(&ins, |g, v| {
            let y = g.softmax_rows(v[0], None);
            weighted_sum(g, y)
        });
        assert!(e < TOL, "softmax {rows}x{cols}: {e}");
        // causal-style mask: row i may see columns <= i (clamped)
        let mask: Vec<bool> = (0..rows * cols).map(|i| i % cols <= (i / cols).min(cols - 1)).collect();
        let e = max_relative_error(&ins, |g, v| {
            let y = g.softmax_rows(v[0], Some(&mask));
            weighted_sum(g, y)
        });
        assert!(e < TOL, "masked softmax {rows}x{cols}: {e}");
    }
}

#[test]
fn layer_norm_gradients() {
    let mut r = rng();
    for (rows, cols) in [(1, 2), (3, 5), (4, 8)] {
        let ins = [
            rand_tensor(&mut r, &[rows, cols]),
            rand_tensor(&mut r, &[cols]),
            rand_tensor(&mut r, &[cols]),
        ];
        let e = max_relative_error(&ins, |g, v| {
            let y = g.layer_norm(v[0], v[1], v[2], 1e-5);
            weighted_sum(g, y)
        });
        assert!(e < TOL, "layer_norm {rows}x{cols}: {e}");
    }
}

#[test]
fn conv1d_gradients() {
    let mut r = rng();
    for (t, cin, cout, k) in [(1, 2, 3, 1), (4, 3, 2, 3), (7, 2, 4, 5)] {
        let ins = [
            rand_tensor(&mut r, &[t, cin]),
            rand_tensor(&mut r, &[k, cin, cout]),
            rand_tensor(&mut r, &[cout]),
        ];
        let e = max_relative_error(&ins, |g, v| {
            let y = g.conv1d(v[0], v[1], v[2]);
            weighted_sum(g, y)
        });
        assert!(e < TOL, "conv1d t={t} k={k}: {e}");
    }
}

#[test]
fn gather_gradients() {
    let mut r = rng();
    for (vocab, dim, ids) in [(1usize, 2usize, vec![0usize]), (5, 3, vec![4, 0, 4]), (7, 4, vec![1, 2, 3, 1, 6])] {
        let ins = [rand_tensor(&mut r, &[vocab, dim])];
        let e = max_relative_error(&ins, |g, v| {
            let y = g.gather_rows(v[0], &ids);
            weighted_sum(g, y)
        });
        assert!(e < TOL, "gather {vocab}x{dim}: {e}");
    }
}

#[test]
fn loss_gradients() {
    let mut r = rng();
    for (rows, cols) in [(1, 1), (3, 4), (5, 6)] {
        let target = rand_tensor(&mut r, &[rows, cols]);
        let ins = [rand_tensor(&mut r, &[rows, cols])];
        let e = max_relative_error(&ins, |g, v| g.mse(v[0], &target, 0.37));
        assert!(e < TOL, "mse {rows}x{cols}: {e}");
    }
    for (rows, cols) in [(1, 2), (3, 4), (6, 9)] {
        let targets: Vec<usize> = (0..rows).map(|i| (i * 7 + 1) % cols).collect();
        let ins = [rand_tensor(&mut r, &[rows, cols])];
        let e = max_relative_error(&ins, |g, v| g.nll(v[0], &targets, 0.5));
        assert!(e < TOL, "nll {rows}x{cols}: {e}");
    }
    for n in [1usize, 4, 9] {
        let targets: Vec<f64> = (0..n).map(|i| if i + 1 == n { 1.0 } else { 0.0 }).collect();
        let ins = [rand_tensor(&mut r, &[n, 1])];
        let e = max_relative_error(&ins, |g, v| g.bce_with_logits(v[0], &targets, 5.0, 0.25));
        assert!(e < TOL, "bce n={n}: {e}");
    }
}

#[test]
fn elementwise_gradients() {
    let mut r = rng();
    for shape in [[1usize, 1usize], [2, 3], [4, 5]] {
        let x = rand_away_from_zero(&mut r, &shape);
        let e = max_relative_error(&[x.clone()], |g, v| {
            let y = g.sigmoid(v[0]);
            weighted_sum(g, y)
        });
        assert!(e < TOL, "sigmoid {shape:?}: {e}");
        let e = max_relative_error(&[x.clone()], |g, v| {
            let y = g.tanh(v[0]);
            weighted_sum(g, y)
        });
        assert!(e < TOL, "tanh {shape:?}: {e}");
        let e = max_relative_error(&[x.clone()], |g, v| {
            let y = g.relu(v[0]);
            weighted_sum(g, y)
        });
        assert!(e < TOL, "relu {shape:?}: {e}");
        let y2 = rand_tensor(&mut r, &shape);
        let bias = rand_tensor(&mut r, &[shape[1]]);
        let e = max_relative_error(&[x.clone(), y2.clone(), bias], |g, v| {
            let a = g.mul(v[0], v[1]);
            let b = g.sub(a, v[0]);
            let c = g.add_row(b, v[2]);
            let d = g.scale(c, -1.5);
            let e = g.add(d, v[1]);
            weighted_sum(g, e)
        });
        assert!(e < TOL, "arith {shape:?}: {e}");
    }
}

#[test]
fn slicing_gradients() {
    let mut r = rng();
    for (rows, cols) in [(1, 2), (3, 4), (5, 6)] {
        let ins = [rand_tensor(&mut r, &[rows, cols]), rand_tensor(&mut r, &[rows, cols])];
        let e = max_relative_error(&ins, |g, v| {
            let a = g.slice_cols(v[0], 1, cols - 1);
            let b = g.slice_rows(v[1], 0, rows);
            let bb = g.slice_cols(b, 0, 1);
            let c = g.concat_cols(&[bb, a]);
            let d = g.concat_rows(&[c, v[1]]);
            weighted_sum(g, d)
        });
        assert!(e < TOL, "slice/concat {rows}x{cols}: {e}");
    }
}
