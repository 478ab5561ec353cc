//! Raw row-major kernels used by the gradient graph.
//!
//! All loops run in a fixed order so results are bit-reproducible.

/// `[m, k] · [k, n] -> [m, n]`
pub fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    matmul_acc(a, b, m, k, n, &mut out);
    out
}

/// `out += [m, k] · [k, n]`
pub fn matmul_acc(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    const R: usize = 4;
    const C: usize = 8;
    let full_rows = m / R * R;
    let full_cols = n / C * C;
    let mut i = 0;
    while i < full_rows {
        let mut j = 0;
        while j < full_cols {
            let mut acc = [[0.0f64; C]; R];
            for (r, acc_row) in acc.iter_mut().enumerate() {
                acc_row.copy_from_slice(&out[(i + r) * n + j..(i + r) * n + j + C]);
            }
            for p in 0..k {
                let bv: &[f64; C] = b[p * n + j..p * n + j + C].try_into().unwrap();
                for (r, acc_row) in acc.iter_mut().enumerate() {
                    let av = a[(i + r) * k + p];
                    for c in 0..C {
                        acc_row[c] += av * bv[c];
                    }
                }
            }
            for (r, acc_row) in acc.iter().enumerate() {
                out[(i + r) * n + j..(i + r) * n + j + C].copy_from_slice(acc_row);
            }
            j += C;
        }
        if full_cols < n {
            for r in i..i + R {
                row_tail(a, b, k, n, r, full_cols, out);
            }
        }
        i += R;
    }
    for r in full_rows..m {
        row_tail(a, b, k, n, r, 0, out);
    }
}

/// Columns `from..n` of output row `i`.
fn row_tail(a: &[f64], b: &[f64], k: usize, n: usize, i: usize, from: usize, out: &mut [f64]) {
    let orow = &mut out[i * n + from..(i + 1) * n];
    let arow = &a[i * k..(i + 1) * k];
    for (p, &av) in arow.iter().enumerate() {
        if av == 0.0 {
            continue;
        }
        let brow = &b[p * n + from..(p + 1) * n];
        for (o, &bv) in orow.iter_mut().zip(brow) {
            *o += av * bv;
        }
    }
}

/// Row-major transpose of an `[rows, cols]` matrix.
pub fn transpose(x: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    debug_assert_eq!(x.len(), rows * cols);
    let mut out = vec![0.0; rows * cols];
    for i in 0..rows {
        for j in 0..cols {
            out[j * rows + i] = x[i * cols + j];
        }
    }
    out
}

/// `[m, k] · [n, k]ᵀ -> [m, n]`
pub fn matmul_bt(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    let bt = transpose(b, n, k);
    matmul(a, &bt, m, k, n)
}

/// `out += [m, k]ᵀ · [m, n]`, giving `[k, n]`.
pub fn matmul_at_acc(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), m * n);
    let at = transpose(a, m, k);
    matmul_acc(&at, b, k, m, n, out);
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    // Four partial sums let the compiler vectorize without reassociating.
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        for l in 0..4 {
            acc[l] += a[4 * c + l] * b[4 * c + l];
        }
    }
    let mut tail = 0.0;
    for i in chunks * 4..a.len() {
        tail += a[i] * b[i];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Row-wise softmax with optional mask (`true` = allowed). Masked entries get
/// exactly zero weight. Panics if a row has no allowed entry.
pub fn softmax_rows(x: &[f64], rows: usize, cols: usize, allowed: Option<&[bool]>) -> Vec<f64> {
    let mut out = vec![0.0; rows * cols];
    for r in 0..rows {
        let xr = &x[r * cols..(r + 1) * cols];
        let ok = |j: usize| allowed.map_or(true, |m| m[r * cols + j]);
        let mut max = f64::NEG_INFINITY;
        for (j, &v) in xr.iter().enumerate() {
            if ok(j) && v > max {
                max = v;
            }
        }
        assert!(max > f64::NEG_INFINITY, "softmax row {r} is fully masked");
        let orow = &mut out[r * cols..(r + 1) * cols];
        let mut total = 0.0;
        for j in 0..cols {
            if ok(j) {
                let e = (xr[j] - max).exp();
                orow[j] = e;
                total += e;
            }
        }
        let inv = 1.0 / total;
        for o in orow.iter_mut() {
            *o *= inv;
        }
    }
    out
}

/// `log(sum(exp(x)))` over one row, stabilized by the row maximum.
pub fn log_sum_exp(row: &[f64]) -> f64 {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    max + row.iter().map(|&v| (v - max).exp()).sum::<f64>().ln()
}

/// `log(1 + exp(x))` without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Same-padded 1-D convolution over time.
///
/// `x`: `[t, cin]`, `w`: `[kernel, cin, cout]`, `b`: `[cout]`, output `[t, cout]`.
pub fn conv1d(x: &[f64], w: &[f64], b: &[f64], t: usize, cin: usize, cout: usize, kernel: usize) -> Vec<f64> {
    let pad = (kernel - 1) / 2;
    let mut out = Vec::with_capacity(t * cout);
    for _ in 0..t {
        out.extend_from_slice(b);
    }
    for k in 0..kernel {
        let wk = &w[k * cin * cout..(k + 1) * cin * cout];
        let (lo, hi) = conv_rows(t, k, pad);
        if lo >= hi {
            continue;
        }
        let src = &x[(lo + k - pad) * cin..(hi + k - pad) * cin];
        matmul_acc(src, wk, hi - lo, cin, cout, &mut out[lo * cout..hi * cout]);
    }
    out
}

/// Gradients of [`conv1d`] given the upstream gradient `g` (`[t, cout]`).
pub fn conv1d_backward(
    x: &[f64],
    w: &[f64],
    g: &[f64],
    t: usize,
    cin: usize,
    cout: usize,
    kernel: usize,
    dx: Option<&mut [f64]>,
    dw: Option<&mut [f64]>,
    db: Option<&mut [f64]>,
) {
    let pad = (kernel - 1) / 2;
    if let Some(db) = db {
        for row in g.chunks(cout) {
            for (d, &v) in db.iter_mut().zip(row) {
                *d += v;
            }
        }
    }
    if let Some(dw) = dw {
        for k in 0..kernel {
            let (lo, hi) = conv_rows(t, k, pad);
            if lo >= hi {
                continue;
            }
            let src = &x[(lo + k - pad) * cin..(hi + k - pad) * cin];
            let gk = &g[lo * cout..hi * cout];
            matmul_at_acc(src, gk, hi - lo, cin, cout, &mut dw[k * cin * cout..(k + 1) * cin * cout]);
        }
    }
    if let Some(dx) = dx {
        for k in 0..kernel {
            let (lo, hi) = conv_rows(t, k, pad);
            if lo >= hi {
                continue;
            }
            let wk = &w[k * cin * cout..(k + 1) * cin * cout];
            let gk = &g[lo * cout..hi * cout];
            let part = matmul_bt(gk, wk, hi - lo, cout, cin);
            let dst = &mut dx[(lo + k - pad) * cin..(hi + k - pad) * cin];
            for (d, p) in dst.iter_mut().zip(part) {
                *d += p;
            }
        }
    }
}

/// Output rows `lo..hi` whose input row `t + k - pad` is in range.
fn conv_rows(t: usize, k: usize, pad: usize) -> (usize, usize) {
    let lo = pad.saturating_sub(k);
    let hi = (t + pad).saturating_sub(k).min(t);
    (lo, hi)
}
