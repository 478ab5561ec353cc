use crate::kernels::{self, conv1d, conv1d_backward, matmul, matmul_at_acc, matmul_bt};
use crate::{Gradients, ParamId, ParamStore, Result, Tensor, TensorError};

/// Handle to a value recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op {
    Constant,
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    MatMulBt(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Tanh(Var),
    Sigmoid(Var),
    Softmax(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        rstd: Vec<f64>,
    },
    Gather {
        table: Var,
        ids: Vec<usize>,
    },
    Conv1d {
        x: Var,
        w: Var,
        b: Var,
    },
    SliceCols {
        x: Var,
        start: usize,
    },
    ConcatCols(Vec<Var>),
    SliceRows {
        x: Var,
        start: usize,
    },
    ConcatRows(Vec<Var>),
    Sum(Var),
    Mse {
        pred: Var,
        diff: Vec<f64>,
        scale: f64,
    },
    Nll {
        logits: Var,
        probs: Vec<f64>,
        targets: Vec<usize>,
        scale: f64,
    },
    BceLogits {
        logits: Var,
        sig: Vec<f64>,
        targets: Vec<f64>,
        pos_weight: f64,
        scale: f64,
    },
}

impl Op {
    fn inputs(&self) -> Vec<Var> {
        use Op::*;
        match self {
            Constant | Leaf | Param(_) => vec![],
            MatMul(a, b) | MatMulBt(a, b) | Add(a, b) | Sub(a, b) | Mul(a, b) | AddRow(a, b) => vec![*a, *b],
            Scale(a, _) | Relu(a) | Tanh(a) | Sigmoid(a) | Softmax(a) | Sum(a) => vec![*a],
            LayerNorm { x, gamma, beta, .. } => vec![*x, *gamma, *beta],
            Gather { table, .. } => vec![*table],
            Conv1d { x, w, b } => vec![*x, *w, *b],
            SliceCols { x, .. } | SliceRows { x, .. } => vec![*x],
            ConcatCols(vs) | ConcatRows(vs) => vs.clone(),
            Mse { pred, .. } => vec![*pred],
            Nll { logits, .. } | BceLogits { logits, .. } => vec![*logits],
        }
    }
}

struct Node {
    /// `None` for parameter leaves, whose value lives in the store.
    value: Option<Tensor>,
    op: Op,
    needs_grad: bool,
}

/// A linear tape of tensor operations over a borrowed [`ParamStore`].
///
/// Nodes only ever reference earlier nodes, so the tape order is a topological
/// order and backward is a single reverse sweep. Shape contracts on ops are
/// enforced with panics; they indicate programming errors in the caller.
pub struct Graph<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
    record: bool,
}

impl<'p> Graph<'p> {
    /// A tape that records gradients for parameters and leaves.
    pub fn new(params: &'p ParamStore) -> Self {
        Self {
            params,
            nodes: Vec::new(),
            record: true,
        }
    }

    /// A tape for inference: values are computed, nothing requires grad.
    pub fn inference(params: &'p ParamStore) -> Self {
        Self {
            params,
            nodes: Vec::new(),
            record: false,
        }
    }

    pub fn grad_enabled(&self) -> bool {
        self.record
    }

    pub fn params(&self) -> &'p ParamStore {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        let node = &self.nodes[v.0];
        match (&node.value, &node.op) {
            (Some(t), _) => t,
            (None, Op::Param(id)) => self.params.get(*id),
            _ => unreachable!("node without value"),
        }
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.value(v).shape()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        let needs_grad = self.record && op.inputs().iter().any(|i| self.nodes[i.0].needs_grad);
        self.nodes.push(Node {
            value: Some(value),
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// A value that never receives a gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.nodes.push(Node {
            value: Some(t),
            op: Op::Constant,
            needs_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    /// A non-parameter leaf whose gradient can be read back with
    /// [`Graph::backward_leaves`].
    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.nodes.push(Node {
            value: Some(t),
            op: Op::Leaf,
            needs_grad: self.record,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        self.nodes.push(Node {
            value: None,
            op: Op::Param(id),
            needs_grad: self.record,
        });
        Var(self.nodes.len() - 1)
    }

    fn dims2(&self, v: Var) -> (usize, usize) {
        let t = self.value(v);
        (t.rows(), t.cols())
    }

    /// `[m, k] · [k, n]`
    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (m, k) = self.dims2(a);
        let (k2, n) = self.dims2(b);
        assert_eq!(k, k2, "matmul inner dimensions {k} vs {k2}");
        let out = matmul(self.value(a).data(), self.value(b).data(), m, k, n);
        self.push(Tensor::from_parts(vec![m, n], out), Op::MatMul(a, b))
    }

    /// `[m, k] · [n, k]ᵀ`
    pub fn matmul_bt(&mut self, a: Var, b: Var) -> Var {
        let (m, k) = self.dims2(a);
        let (n, k2) = self.dims2(b);
        assert_eq!(k, k2, "matmul_bt inner dimensions {k} vs {k2}");
        let out = matmul_bt(self.value(a).data(), self.value(b).data(), m, k, n);
        self.push(Tensor::from_parts(vec![m, n], out), Op::MatMulBt(a, b))
    }

    fn zip_with(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Var {
        let (ta, tb) = (self.value(a), self.value(b));
        assert_eq!(ta.shape(), tb.shape(), "element-wise op shape mismatch");
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        let shape = ta.shape().to_vec();
        self.push(Tensor::from_parts(shape, data), op)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.zip_with(a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.zip_with(a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.zip_with(a, b, |x, y| x * y, Op::Mul(a, b))
    }

    /// Adds the vector `bias` (length `n`) to every row of `x` (`[m, n]`).
    pub fn add_row(&mut self, x: Var, bias: Var) -> Var {
        let (tx, tb) = (self.value(x), self.value(bias));
        let n = tx.cols();
        assert_eq!(tb.len(), n, "add_row bias length");
        let mut data = tx.data().to_vec();
        for row in data.chunks_mut(n) {
            for (v, &b) in row.iter_mut().zip(tb.data()) {
                *v += b;
            }
        }
        let shape = tx.shape().to_vec();
        self.push(Tensor::from_parts(shape, data), Op::AddRow(x, bias))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let t = self.value(x).map(|v| v * c);
        self.push(t, Op::Scale(x, c))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let t = self.value(x).map(|v| v.max(0.0));
        self.push(t, Op::Relu(x))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let t = self.value(x).map(f64::tanh);
        self.push(t, Op::Tanh(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let t = self.value(x).map(kernels::sigmoid);
        self.push(t, Op::Sigmoid(x))
    }

    /// Row-wise softmax. `allowed` (row-major, same size as `x`) marks the
    /// entries that may receive weight; the rest get exactly zero.
    pub fn softmax_rows(&mut self, x: Var, allowed: Option<&[bool]>) -> Var {
        let (r, c) = self.dims2(x);
        if let Some(m) = allowed {
            assert_eq!(m.len(), r * c, "softmax mask size");
        }
        let out = kernels::softmax_rows(self.value(x).data(), r, c, allowed);
        self.push(Tensor::from_parts(vec![r, c], out), Op::Softmax(x))
    }

    /// Per-row layer normalization with learned gain and bias (length = row width).
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Var {
        let (r, c) = self.dims2(x);
        let (g, b) = (self.value(gamma), self.value(beta));
        assert_eq!(g.len(), c, "layer_norm gain length");
        assert_eq!(b.len(), c, "layer_norm bias length");
        let xd = self.value(x).data();
        let mut xhat = vec![0.0; r * c];
        let mut rstd = vec![0.0; r];
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            let row = &xd[i * c..(i + 1) * c];
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
            let s = 1.0 / (var + eps).sqrt();
            rstd[i] = s;
            for j in 0..c {
                let h = (row[j] - mean) * s;
                xhat[i * c + j] = h;
                out[i * c + j] = h * g.data()[j] + b.data()[j];
            }
        }
        let shape = self.value(x).shape().to_vec();
        self.push(
            Tensor::from_parts(shape, out),
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            },
        )
    }

    /// Embedding lookup: rows `ids` of `table` (`[vocab, dim]`).
    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Var {
        let (v, d) = self.dims2(table);
        assert!(!ids.is_empty(), "gather of zero rows");
        let t = self.value(table).data();
        let mut out = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            assert!(id < v, "id {id} out of range for table of {v} rows");
            out.extend_from_slice(&t[id * d..(id + 1) * d]);
        }
        self.push(
            Tensor::from_parts(vec![ids.len(), d], out),
            Op::Gather {
                table,
                ids: ids.to_vec(),
            },
        )
    }

    /// Same-padded convolution over rows. `x`: `[t, cin]`, `w`: `[kernel, cin, cout]`
    /// with odd `kernel`, `b`: `[cout]`.
    pub fn conv1d(&mut self, x: Var, w: Var, b: Var) -> Var {
        let (t, cin) = self.dims2(x);
        let ws = self.value(w).shape().to_vec();
        assert_eq!(ws.len(), 3, "conv1d weight must be [kernel, cin, cout]");
        assert_eq!(ws[1], cin, "conv1d input channels");
        assert!(ws[0] % 2 == 1, "conv1d kernel must be odd");
        let cout = ws[2];
        assert_eq!(self.value(b).len(), cout, "conv1d bias length");
        let out = conv1d(
            self.value(x).data(),
            self.value(w).data(),
            self.value(b).data(),
            t,
            cin,
            cout,
            ws[0],
        );
        self.push(Tensor::from_parts(vec![t, cout], out), Op::Conv1d { x, w, b })
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Var {
        let (r, c) = self.dims2(x);
        assert!(len > 0 && start + len <= c, "slice_cols {start}+{len} of {c}");
        let d = self.value(x).data();
        let mut out = Vec::with_capacity(r * len);
        for i in 0..r {
            out.extend_from_slice(&d[i * c + start..i * c + start + len]);
        }
        self.push(Tensor::from_parts(vec![r, len], out), Op::SliceCols { x, start })
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let r = self.dims2(parts[0]).0;
        let widths: Vec<usize> = parts
            .iter()
            .map(|&p| {
                let (pr, pc) = self.dims2(p);
                assert_eq!(pr, r, "concat_cols row count");
                pc
            })
            .collect();
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(r * total);
        for i in 0..r {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(p).data()[i * w..(i + 1) * w]);
            }
        }
        self.push(Tensor::from_parts(vec![r, total], out), Op::ConcatCols(parts.to_vec()))
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Var {
        let (r, c) = self.dims2(x);
        assert!(len > 0 && start + len <= r, "slice_rows {start}+{len} of {r}");
        let out = self.value(x).data()[start * c..(start + len) * c].to_vec();
        self.push(Tensor::from_parts(vec![len, c], out), Op::SliceRows { x, start })
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let c = self.dims2(parts[0]).1;
        let mut out = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let (pr, pc) = self.dims2(p);
            assert_eq!(pc, c, "concat_rows width");
            rows += pr;
            out.extend_from_slice(self.value(p).data());
        }
        self.push(Tensor::from_parts(vec![rows, c], out), Op::ConcatRows(parts.to_vec()))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).sum();
        self.push(Tensor::scalar(s), Op::Sum(x))
    }

    /// `scale · Σ (pred − target)²`
    pub fn mse(&mut self, pred: Var, target: &Tensor, scale: f64) -> Var {
        let p = self.value(pred);
        assert_eq!(p.len(), target.len(), "mse size mismatch");
        let diff: Vec<f64> = p.data().iter().zip(target.data()).map(|(a, b)| a - b).collect();
        let loss = scale * diff.iter().map(|d| d * d).sum::<f64>();
        self.push(Tensor::scalar(loss), Op::Mse { pred, diff, scale })
    }

    /// `scale · Σ_t −log softmax(logits_t)[targets_t]`
    pub fn nll(&mut self, logits: Var, targets: &[usize], scale: f64) -> Var {
        let (r, c) = self.dims2(logits);
        assert_eq!(r, targets.len(), "nll needs one target per row");
        let l = self.value(logits).data();
        let probs = kernels::softmax_rows(l, r, c, None);
        let mut loss = 0.0;
        for (i, &t) in targets.iter().enumerate() {
            assert!(t < c, "target {t} out of range for {c} classes");
            let row = &l[i * c..(i + 1) * c];
            loss += kernels::log_sum_exp(row) - row[t];
        }
        self.push(
            Tensor::scalar(scale * loss),
            Op::Nll {
                logits,
                probs,
                targets: targets.to_vec(),
                scale,
            },
        )
    }

    /// Binary cross-entropy on logits with a positive-class weight:
    /// `scale · Σ −(w·y·log σ(z) + (1−y)·log(1−σ(z)))`.
    pub fn bce_with_logits(&mut self, logits: Var, targets: &[f64], pos_weight: f64, scale: f64) -> Var {
        let z = self.value(logits).data();
        assert_eq!(z.len(), targets.len(), "bce size mismatch");
        let mut loss = 0.0;
        let mut sig = Vec::with_capacity(z.len());
        for (&zi, &y) in z.iter().zip(targets) {
            loss += pos_weight * y * kernels::softplus(-zi) + (1.0 - y) * kernels::softplus(zi);
            sig.push(kernels::sigmoid(zi));
        }
        self.push(
            Tensor::scalar(scale * loss),
            Op::BceLogits {
                logits,
                sig,
                targets: targets.to_vec(),
                pos_weight,
                scale,
            },
        )
    }

    /// Reverse-mode sweep from the scalar `loss`; returns parameter gradients.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let mut grads = Gradients::zeros_like(self.params);
        self.backward_into(loss, &mut grads)?;
        Ok(grads)
    }

    /// Like [`Graph::backward`] but adds into existing buffers.
    pub fn backward_into(&self, loss: Var, grads: &mut Gradients) -> Result<()> {
        self.sweep(loss, &[], Some(grads)).map(|_| ())
    }

    /// Gradients of `loss` with respect to the given leaves (zeros when unreached).
    pub fn backward_leaves(&self, loss: Var, leaves: &[Var]) -> Result<Vec<Tensor>> {
        self.sweep(loss, leaves, None)
    }

    fn sweep(&self, loss: Var, keep: &[Var], mut params_out: Option<&mut Gradients>) -> Result<Vec<Tensor>> {
        let lt = self.value(loss);
        if !lt.is_scalar() {
            return Err(TensorError::NonScalarLoss(lt.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = Vec::with_capacity(loss.0 + 1);
        grads.resize_with(loss.0 + 1, || None);
        grads[loss.0] = Some(Tensor::scalar(1.0));
        let mut kept: Vec<Option<Tensor>> = vec![None; keep.len()];

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                grads[i] = None;
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            for inp in node.op.inputs() {
                if inp.0 >= i {
                    return Err(TensorError::Cycle(i));
                }
            }
            match &node.op {
                Op::Constant => {}
                Op::Leaf => {
                    if let Some(k) = keep.iter().position(|v| v.0 == i) {
                        kept[k] = Some(g);
                    }
                }
                Op::Param(id) => {
                    if let Some(out) = params_out.as_deref_mut() {
                        out.accumulate(*id, &g);
                    }
                }
                op => self.propagate(Var(i), op, &g, &mut grads),
            }
        }
        Ok(keep
            .iter()
            .zip(kept)
            .map(|(v, g)| g.unwrap_or_else(|| Tensor::zeros(self.shape(*v))))
            .collect())
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn acc(&self, grads: &mut [Option<Tensor>], v: Var, data: Vec<f64>) {
        if !self.wants(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(t) => {
                for (a, b) in t.data_mut().iter_mut().zip(&data) {
                    *a += b;
                }
            }
            slot @ None => *slot = Some(Tensor::from_parts(self.shape(v).to_vec(), data)),
        }
    }

    fn propagate(&self, out: Var, op: &Op, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let gd = g.data();
        match op {
            Op::Constant | Op::Leaf | Op::Param(_) => unreachable!(),
            Op::MatMul(a, b) => {
                let (m, k) = self.dims2(*a);
                let n = self.dims2(*b).1;
                if self.wants(*a) {
                    let da = matmul_bt(gd, self.value(*b).data(), m, n, k);
                    self.acc(grads, *a, da);
                }
                if self.wants(*b) {
                    let mut db = vec![0.0; k * n];
                    matmul_at_acc(self.value(*a).data(), gd, m, k, n, &mut db);
                    self.acc(grads, *b, db);
                }
            }
            Op::MatMulBt(a, b) => {
                let (m, k) = self.dims2(*a);
                let n = self.dims2(*b).0;
                if self.wants(*a) {
                    let da = matmul(gd, self.value(*b).data(), m, n, k);
                    self.acc(grads, *a, da);
                }
                if self.wants(*b) {
                    let mut db = vec![0.0; n * k];
                    matmul_at_acc(gd, self.value(*a).data(), m, n, k, &mut db);
                    self.acc(grads, *b, db);
                }
            }
            Op::Add(a, b) => {
                self.acc(grads, *a, gd.to_vec());
                self.acc(grads, *b, gd.to_vec());
            }
            Op::Sub(a, b) => {
                self.acc(grads, *a, gd.to_vec());
                self.acc(grads, *b, gd.iter().map(|v| -v).collect());
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                if self.wants(*a) {
                    self.acc(grads, *a, gd.iter().zip(vb).map(|(g, y)| g * y).collect());
                }
                if self.wants(*b) {
                    self.acc(grads, *b, gd.iter().zip(va).map(|(g, x)| g * x).collect());
                }
            }
            Op::AddRow(x, bias) => {
                self.acc(grads, *x, gd.to_vec());
                if self.wants(*bias) {
                    let n = self.value(*bias).len();
                    let mut db = vec![0.0; n];
                    for row in gd.chunks(n) {
                        for (d, v) in db.iter_mut().zip(row) {
                            *d += v;
                        }
                    }
                    self.acc(grads, *bias, db);
                }
            }
            Op::Scale(x, c) => self.acc(grads, *x, gd.iter().map(|v| v * c).collect()),
            Op::Relu(x) => {
                let xv = self.value(*x).data();
                self.acc(grads, *x, gd.iter().zip(xv).map(|(g, &v)| if v > 0.0 { *g } else { 0.0 }).collect());
            }
            Op::Tanh(x) => {
                let y = self.value(out).data();
                self.acc(grads, *x, gd.iter().zip(y).map(|(g, y)| g * (1.0 - y * y)).collect());
            }
            Op::Sigmoid(x) => {
                let y = self.value(out).data();
                self.acc(grads, *x, gd.iter().zip(y).map(|(g, y)| g * y * (1.0 - y)).collect());
            }
            Op::Softmax(x) => {
                let y = self.value(out).data();
                let c = self.dims2(*x).1;
                let mut dx = vec![0.0; y.len()];
                for ((yr, gr), dr) in y.chunks(c).zip(gd.chunks(c)).zip(dx.chunks_mut(c)) {
                    let s: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for j in 0..c {
                        dr[j] = yr[j] * (gr[j] - s);
                    }
                }
                self.acc(grads, *x, dx);
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            } => {
                let c = self.value(*gamma).len();
                let gam = self.value(*gamma).data();
                if self.wants(*gamma) {
                    let mut dg = vec![0.0; c];
                    for (gr, hr) in gd.chunks(c).zip(xhat.chunks(c)) {
                        for j in 0..c {
                            dg[j] += gr[j] * hr[j];
                        }
                    }
                    self.acc(grads, *gamma, dg);
                }
                if self.wants(*beta) {
                    let mut db = vec![0.0; c];
                    for gr in gd.chunks(c) {
                        for j in 0..c {
                            db[j] += gr[j];
                        }
                    }
                    self.acc(grads, *beta, db);
                }
                if self.wants(*x) {
                    let mut dx = vec![0.0; gd.len()];
                    for (i, ((gr, hr), dr)) in gd.chunks(c).zip(xhat.chunks(c)).zip(dx.chunks_mut(c)).enumerate() {
                        let mut mean_dh = 0.0;
                        let mut mean_dh_h = 0.0;
                        for j in 0..c {
                            let dh = gr[j] * gam[j];
                            mean_dh += dh;
                            mean_dh_h += dh * hr[j];
                        }
                        mean_dh /= c as f64;
                        mean_dh_h /= c as f64;
                        for j in 0..c {
                            let dh = gr[j] * gam[j];
                            dr[j] = rstd[i] * (dh - mean_dh - hr[j] * mean_dh_h);
                        }
                    }
                    self.acc(grads, *x, dx);
                }
            }
            Op::Gather { table, ids } => {
                let (v, d) = self.dims2(*table);
                let mut dt = vec![0.0; v * d];
                for (r, &id) in ids.iter().enumerate() {
                    for j in 0..d {
                        dt[id * d + j] += gd[r * d + j];
                    }
                }
                self.acc(grads, *table, dt);
            }
            Op::Conv1d { x, w, b } => {
                let (t, cin) = self.dims2(*x);
                let ws = self.value(*w).shape();
                let (kernel, cout) = (ws[0], ws[2]);
                let mut dx = self.wants(*x).then(|| vec![0.0; t * cin]);
                let mut dw = self.wants(*w).then(|| vec![0.0; kernel * cin * cout]);
                let mut db = self.wants(*b).then(|| vec![0.0; cout]);
                conv1d_backward(
                    self.value(*x).data(),
                    self.value(*w).data(),
                    gd,
                    t,
                    cin,
                    cout,
                    kernel,
                    dx.as_deref_mut(),
                    dw.as_deref_mut(),
                    db.as_deref_mut(),
                );
                if let Some(d) = dx {
                    self.acc(grads, *x, d);
                }
                if let Some(d) = dw {
                    self.acc(grads, *w, d);
                }
                if let Some(d) = db {
                    self.acc(grads, *b, d);
                }
            }
            Op::SliceCols { x, start } => {
                let (r, c) = self.dims2(*x);
                let len = g.cols();
                let mut dx = vec![0.0; r * c];
                for i in 0..r {
                    dx[i * c + start..i * c + start + len].copy_from_slice(&gd[i * len..(i + 1) * len]);
                }
                self.acc(grads, *x, dx);
            }
            Op::ConcatCols(parts) => {
                let total = g.cols();
                let r = g.rows();
                let mut off = 0;
                for &p in parts {
                    let w = self.dims2(p).1;
                    if self.wants(p) {
                        let mut dp = Vec::with_capacity(r * w);
                        for i in 0..r {
                            dp.extend_from_slice(&gd[i * total + off..i * total + off + w]);
                        }
                        self.acc(grads, p, dp);
                    }
                    off += w;
                }
            }
            Op::SliceRows { x, start } => {
                let (r, c) = self.dims2(*x);
                let mut dx = vec![0.0; r * c];
                dx[start * c..start * c + gd.len()].copy_from_slice(gd);
                self.acc(grads, *x, dx);
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for &p in parts {
                    let n = self.value(p).len();
                    if self.wants(p) {
                        self.acc(grads, p, gd[off..off + n].to_vec());
                    }
                    off += n;
                }
            }
            Op::Sum(x) => {
                let n = self.value(*x).len();
                self.acc(grads, *x, vec![gd[0]; n]);
            }
            Op::Mse { pred, diff, scale } => {
                let f = 2.0 * scale * gd[0];
                self.acc(grads, *pred, diff.iter().map(|d| f * d).collect());
            }
            Op::Nll {
                logits,
                probs,
                targets,
                scale,
            } => {
                let c = self.dims2(*logits).1;
                let f = scale * gd[0];
                let mut dl: Vec<f64> = probs.iter().map(|p| f * p).collect();
                for (i, &t) in targets.iter().enumerate() {
                    dl[i * c + t] -= f;
                }
                self.acc(grads, *logits, dl);
            }
            Op::BceLogits {
                logits,
                sig,
                targets,
                pos_weight,
                scale,
            } => {
                let f = scale * gd[0];
                let dl = sig
                    .iter()
                    .zip(targets)
                    .map(|(&s, &y)| f * (-pos_weight * y * (1.0 - s) + (1.0 - y) * s))
                    .collect();
                self.acc(grads, *logits, dl);
            }
        }
    }
}
