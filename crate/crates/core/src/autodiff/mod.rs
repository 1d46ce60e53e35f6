//! Reverse-mode automatic differentiation over row-major 2-D `f64` arrays.
//!
//! A [`Tape`] records each primitive with the data its pullback needs.
//! Quaternion primitives operate row-wise on `[n × 4]` arrays in `(w, x, y, z)`
//! order. Per-row losses return `[n × 1]`; reductions return `[1 × 1]`.

mod params;

pub use params::{AdamConfig, Checkpoint, CheckpointParam, ParamId, ParamStore, CHECKPOINT_FORMAT};

use crate::error::{Error, Result};
use crate::so3::hamilton;
use crate::tolerances::DEGENERATE_NORM;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::ShapeMismatch(format!(
                "{} values for shape [{rows}, {cols}]",
                data.len()
            )));
        }
        Ok(Tensor { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn scalar(v: f64) -> Self {
        Tensor {
            rows: 1,
            cols: 1,
            data: vec![v],
        }
    }

    pub fn from_rows<const C: usize>(rows: &[[f64; C]]) -> Self {
        Tensor {
            rows: rows.len(),
            cols: C,
            data: rows.iter().flatten().copied().collect(),
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> [usize; 2] {
        [self.rows, self.cols]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn quat_row(&self, i: usize) -> [f64; 4] {
        let r = self.row(i);
        [r[0], r[1], r[2], r[3]]
    }

    /// The single value of a `[1 × 1]` tensor.
    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.data.len(), 1);
        self.data[0]
    }

    fn add_assign(&mut self, other: &Tensor) {
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Linear { x: Var, w: Var, b: Option<Var> },
    Relu(Var),
    Concat { xs: Vec<Var>, axis: usize },
    Add(Var, Var),
    Mul(Var, Var),
    Gather { x: Var, index: Vec<usize> },
    ScatterMean { src: Var, index: Vec<usize>, counts: Vec<usize> },
    QuatNormalize { x: Var, norms: Vec<f64> },
    QuatCompose(Var, Var),
    QuatConj(Var),
    BceWithLogits { z: Var, targets: Vec<f64> },
    QuatDistLoss { p: Var, diffs: Vec<[f64; 4]> },
    WeightedSum { x: Var, weights: Vec<f64> },
    Mean(Var),
    Scale(Var, f64),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Gradients of one backward pass, indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: Vec<(Var, ParamId)>,
    consumed: bool,
}

fn mismatch(op: &str, detail: String) -> Error {
    Error::ShapeMismatch(format!("{op}: {detail}"))
}

// C = A·B + beta·C with arbitrary strides on A and B.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    rsa: isize,
    csa: isize,
    b: &[f64],
    rsb: isize,
    csb: isize,
    c: &mut [f64],
    beta: f64,
) {
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        c.iter_mut().for_each(|x| *x *= beta);
        return;
    }
    // SAFETY: callers pass slices covering every element addressed by the
    // given dimensions and strides; c is a dense row-major m×n block.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn conj(q: [f64; 4]) -> [f64; 4] {
    [q[0], -q[1], -q[2], -q[3]]
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// A value that receives no gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// A leaf whose gradient is reported by [`Tape::gradients`].
    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Records the current value of a stored parameter.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        let v = self.push(store.value(id).clone(), Op::Leaf, true);
        self.params.push((v, id));
        v
    }

    /// `x·W + b` for `x: [n × in]`, `W: [in × out]`, `b: [1 × out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (xt, wt) = (self.value(x), self.value(w));
        if xt.cols != wt.rows {
            return Err(mismatch("linear", format!("x {:?} · W {:?}", xt.shape(), wt.shape())));
        }
        let (n, k, m) = (xt.rows, xt.cols, wt.cols);
        let mut out = vec![0.0; n * m];
        let mut beta = 0.0;
        if let Some(b) = b {
            let bt = self.value(b);
            if bt.shape() != [1, m] {
                return Err(mismatch("linear", format!("bias {:?} for {m} outputs", bt.shape())));
            }
            for row in out.chunks_exact_mut(m.max(1)) {
                row.copy_from_slice(&bt.data);
            }
            beta = 1.0;
        }
        gemm(n, k, m, &xt.data, k as isize, 1, &wt.data, m as isize, 1, &mut out, beta);
        let rg = self.rg(x) || self.rg(w) || b.is_some_and(|b| self.rg(b));
        Ok(self.push(Tensor { rows: n, cols: m, data: out }, Op::Linear { x, w, b }, rg))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let data = t.data.iter().map(|&v| v.max(0.0)).collect();
        let out = Tensor { data, ..*t };
        let rg = self.rg(x);
        self.push(out, Op::Relu(x), rg)
    }

    /// Concatenates along rows (`axis = 0`) or columns (`axis = 1`).
    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        let first = xs.first().ok_or_else(|| mismatch("concat", "no inputs".into()))?;
        let out = match axis {
            0 => {
                let cols = self.value(*first).cols;
                let mut data = Vec::new();
                let mut rows = 0;
                for &v in xs {
                    let t = self.value(v);
                    if t.cols != cols {
                        return Err(mismatch("concat", format!("column counts {cols} and {}", t.cols)));
                    }
                    data.extend_from_slice(&t.data);
                    rows += t.rows;
                }
                Tensor { rows, cols, data }
            }
            1 => {
                let rows = self.value(*first).rows;
                let mut cols = 0;
                for &v in xs {
                    let t = self.value(v);
                    if t.rows != rows {
                        return Err(mismatch("concat", format!("row counts {rows} and {}", t.rows)));
                    }
                    cols += t.cols;
                }
                let mut data = Vec::with_capacity(rows * cols);
                for r in 0..rows {
                    for &v in xs {
                        data.extend_from_slice(self.value(v).row(r));
                    }
                }
                Tensor { rows, cols, data }
            }
            _ => return Err(mismatch("concat", format!("axis {axis} on a 2-D array"))),
        };
        let rg = xs.iter().any(|&v| self.rg(v));
        Ok(self.push(out, Op::Concat { xs: xs.to_vec(), axis }, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (at, bt) = (self.value(a), self.value(b));
        if at.shape() != bt.shape() {
            return Err(mismatch("add", format!("{:?} + {:?}", at.shape(), bt.shape())));
        }
        let data = at.data.iter().zip(&bt.data).map(|(x, y)| x + y).collect();
        let out = Tensor { data, ..*at };
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Add(a, b), rg))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (at, bt) = (self.value(a), self.value(b));
        if at.shape() != bt.shape() {
            return Err(mismatch("mul", format!("{:?} * {:?}", at.shape(), bt.shape())));
        }
        let data = at.data.iter().zip(&bt.data).map(|(x, y)| x * y).collect();
        let out = Tensor { data, ..*at };
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Mul(a, b), rg))
    }

    /// Row `i` of the output is row `index[i]` of `x`.
    pub fn gather(&mut self, x: Var, index: &[usize]) -> Result<Var> {
        let t = self.value(x);
        let mut data = Vec::with_capacity(index.len() * t.cols);
        for &i in index {
            if i >= t.rows {
                return Err(Error::IndexOutOfRange { index: i, len: t.rows });
            }
            data.extend_from_slice(t.row(i));
        }
        let out = Tensor {
            rows: index.len(),
            cols: t.cols,
            data,
        };
        let rg = self.rg(x);
        Ok(self.push(out, Op::Gather { x, index: index.to_vec() }, rg))
    }

    /// Mean of the `src` rows sent to each of `n` targets; targets receiving
    /// nothing get a zero row. Each column is summed in ascending value order,
    /// so the result does not depend on the order of `src` rows.
    pub fn scatter_mean(&mut self, src: Var, index: &[usize], n: usize) -> Result<Var> {
        let t = self.value(src);
        if index.len() != t.rows {
            return Err(mismatch("scatter_mean", format!("{} indices for {} rows", index.len(), t.rows)));
        }
        let c = t.cols;
        let mut counts = vec![0usize; n];
        for &i in index {
            if i >= n {
                return Err(Error::IndexOutOfRange { index: i, len: n });
            }
            counts[i] += 1;
        }
        let mut start = vec![0usize; n + 1];
        for i in 0..n {
            start[i + 1] = start[i] + counts[i];
        }
        let mut fill = start.clone();
        let mut grouped = vec![0usize; index.len()];
        for (r, &i) in index.iter().enumerate() {
            grouped[fill[i]] = r;
            fill[i] += 1;
        }
        let mut data = vec![0.0; n * c];
        let mut buf = Vec::new();
        for i in 0..n {
            let rows = &grouped[start[i]..start[i + 1]];
            match rows.len() {
                0 => {}
                1 => data[i * c..(i + 1) * c].copy_from_slice(t.row(rows[0])),
                k => {
                    for col in 0..c {
                        buf.clear();
                        buf.extend(rows.iter().map(|&r| t.data[r * c + col]));
                        buf.sort_unstable_by(f64::total_cmp);
                        data[i * c + col] = buf.iter().sum::<f64>() / k as f64;
                    }
                }
            }
        }
        let out = Tensor { rows: n, cols: c, data };
        let rg = self.rg(src);
        Ok(self.push(
            out,
            Op::ScatterMean {
                src,
                index: index.to_vec(),
                counts,
            },
            rg,
        ))
    }

    fn check_quat(&self, op: &str, v: Var) -> Result<()> {
        let t = self.value(v);
        if t.cols != 4 {
            return Err(mismatch(op, format!("expected [n, 4], got {:?}", t.shape())));
        }
        Ok(())
    }

    /// Row-wise division by the Euclidean norm; rows with norm below
    /// `1e-12` are an error.
    pub fn quat_normalize(&mut self, x: Var) -> Result<Var> {
        self.check_quat("quat_normalize", x)?;
        let t = self.value(x);
        let mut norms = Vec::with_capacity(t.rows);
        let mut data = Vec::with_capacity(t.data.len());
        for r in 0..t.rows {
            let row = t.row(r);
            let n = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if n.is_nan() || n < DEGENERATE_NORM {
                return Err(Error::DegenerateQuaternion {
                    norm: n,
                    min: DEGENERATE_NORM,
                });
            }
            norms.push(n);
            data.extend(row.iter().map(|v| v / n));
        }
        let out = Tensor { data, ..*t };
        let rg = self.rg(x);
        Ok(self.push(out, Op::QuatNormalize { x, norms }, rg))
    }

    /// Row-wise Hamilton product `a ⋆ b`.
    pub fn quat_compose(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_quat("quat_compose", a)?;
        self.check_quat("quat_compose", b)?;
        let (at, bt) = (self.value(a), self.value(b));
        if at.rows != bt.rows {
            return Err(mismatch("quat_compose", format!("{} vs {} rows", at.rows, bt.rows)));
        }
        let data = (0..at.rows)
            .flat_map(|r| hamilton(at.quat_row(r), bt.quat_row(r)))
            .collect();
        let out = Tensor { data, ..*at };
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::QuatCompose(a, b), rg))
    }

    pub fn quat_conj(&mut self, x: Var) -> Result<Var> {
        self.check_quat("quat_conj", x)?;
        let t = self.value(x);
        let data = (0..t.rows).flat_map(|r| conj(t.quat_row(r))).collect();
        let out = Tensor { data, ..*t };
        let rg = self.rg(x);
        Ok(self.push(out, Op::QuatConj(x), rg))
    }

    /// Per-row binary cross-entropy of `sigmoid(z)` against `targets`.
    pub fn bce_with_logits(&mut self, z: Var, targets: &[f64]) -> Result<Var> {
        let t = self.value(z);
        if t.cols != 1 || t.rows != targets.len() {
            return Err(mismatch(
                "bce_with_logits",
                format!("logits {:?} for {} targets", t.shape(), targets.len()),
            ));
        }
        let data = t
            .data
            .iter()
            .zip(targets)
            .map(|(&z, &y)| z.max(0.0) - z * y + (-z.abs()).exp().ln_1p())
            .collect();
        let out = Tensor {
            rows: targets.len(),
            cols: 1,
            data,
        };
        let rg = self.rg(z);
        Ok(self.push(
            out,
            Op::BceWithLogits {
                z,
                targets: targets.to_vec(),
            },
            rg,
        ))
    }

    /// Per-row `min(‖p − t‖, ‖p + t‖)`; ties take the `p + t` branch.
    pub fn quat_dist_loss(&mut self, p: Var, targets: &[[f64; 4]]) -> Result<Var> {
        self.check_quat("quat_dist_loss", p)?;
        let t = self.value(p);
        if t.rows != targets.len() {
            return Err(mismatch(
                "quat_dist_loss",
                format!("{} predictions for {} targets", t.rows, targets.len()),
            ));
        }
        let mut diffs = Vec::with_capacity(t.rows);
        let mut data = Vec::with_capacity(t.rows);
        for (r, q) in targets.iter().enumerate() {
            let p = t.quat_row(r);
            let minus: [f64; 4] = std::array::from_fn(|i| p[i] - q[i]);
            let plus: [f64; 4] = std::array::from_fn(|i| p[i] + q[i]);
            let nm = minus.iter().map(|v| v * v).sum::<f64>().sqrt();
            let np = plus.iter().map(|v| v * v).sum::<f64>().sqrt();
            if nm < np {
                diffs.push(minus);
                data.push(nm);
            } else {
                diffs.push(plus);
                data.push(np);
            }
        }
        let out = Tensor {
            rows: targets.len(),
            cols: 1,
            data,
        };
        let rg = self.rg(p);
        Ok(self.push(out, Op::QuatDistLoss { p, diffs }, rg))
    }

    /// `Σ_i weights[i]·x_i` over all elements, as `[1 × 1]`.
    pub fn weighted_sum(&mut self, x: Var, weights: &[f64]) -> Result<Var> {
        let t = self.value(x);
        if t.data.len() != weights.len() {
            return Err(mismatch(
                "weighted_sum",
                format!("{} weights for {} values", weights.len(), t.data.len()),
            ));
        }
        let s = t.data.iter().zip(weights).map(|(a, b)| a * b).sum();
        let rg = self.rg(x);
        Ok(self.push(
            Tensor::scalar(s),
            Op::WeightedSum {
                x,
                weights: weights.to_vec(),
            },
            rg,
        ))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let n = self.value(x).data.len();
        self.weighted_sum(x, &vec![1.0; n]).expect("weights sized to input")
    }

    /// Mean over all elements; zero for an empty input.
    pub fn mean(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let m = if t.data.is_empty() {
            0.0
        } else {
            t.data.iter().sum::<f64>() / t.data.len() as f64
        };
        let rg = self.rg(x);
        self.push(Tensor::scalar(m), Op::Mean(x), rg)
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        let t = self.value(x);
        let data = t.data.iter().map(|v| v * s).collect();
        let out = Tensor { data, ..*t };
        let rg = self.rg(x);
        self.push(out, Op::Scale(x, s), rg)
    }

    /// Gradients of the scalar `loss` with respect to every node that
    /// requires them. Consumes the tape.
    pub fn gradients(&mut self, loss: Var) -> Result<Gradients> {
        if self.consumed {
            return Err(Error::Tape("tape already consumed by a backward pass".into()));
        }
        let lt = self.value(loss);
        if lt.shape() != [1, 1] {
            return Err(Error::Tape(format!("loss must be a scalar, got shape {:?}", lt.shape())));
        }
        self.consumed = true;
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(1.0));
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if self.nodes[i].requires_grad {
                self.pullback(i, &g, &mut grads);
            }
            grads[i] = Some(g);
        }
        for (i, node) in self.nodes.iter().enumerate() {
            if !node.requires_grad {
                grads[i] = None;
            }
        }
        Ok(Gradients { grads })
    }

    /// Backward pass accumulating parameter gradients into `store`.
    /// Parameters recorded on the tape but not reached by `loss` receive zeros.
    pub fn backward(&mut self, loss: Var, store: &mut ParamStore) -> Result<()> {
        let grads = self.gradients(loss)?;
        for &(v, id) in &self.params {
            match grads.get(v) {
                Some(g) => store.accumulate_grad(id, g),
                None => store.accumulate_grad(id, &Tensor::zeros(self.value(v).rows, self.value(v).cols)),
            }
        }
        Ok(())
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
        if !self.rg(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&g),
            slot => *slot = Some(g),
        }
    }

    fn pullback(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[i];
        match &node.op {
            Op::Leaf => {}
            Op::Linear { x, w, b } => {
                let (xt, wt) = (self.value(*x), self.value(*w));
                let (n, k, m) = (xt.rows, xt.cols, wt.cols);
                if self.rg(*x) {
                    let mut dx = vec![0.0; n * k];
                    // dY · Wᵀ
                    gemm(n, m, k, &g.data, m as isize, 1, &wt.data, 1, m as isize, &mut dx, 0.0);
                    self.accumulate(grads, *x, Tensor { rows: n, cols: k, data: dx });
                }
                if self.rg(*w) {
                    let mut dw = vec![0.0; k * m];
                    // Xᵀ · dY
                    gemm(k, n, m, &xt.data, 1, k as isize, &g.data, m as isize, 1, &mut dw, 0.0);
                    self.accumulate(grads, *w, Tensor { rows: k, cols: m, data: dw });
                }
                if let Some(b) = b {
                    if self.rg(*b) {
                        let mut db = vec![0.0; m];
                        for row in g.data.chunks_exact(m.max(1)) {
                            for (d, v) in db.iter_mut().zip(row) {
                                *d += v;
                            }
                        }
                        self.accumulate(grads, *b, Tensor { rows: 1, cols: m, data: db });
                    }
                }
            }
            Op::Relu(x) => {
                let data = node
                    .value
                    .data
                    .iter()
                    .zip(&g.data)
                    .map(|(&y, &d)| if y > 0.0 { d } else { 0.0 })
                    .collect();
                self.accumulate(grads, *x, Tensor { data, ..*g });
            }
            Op::Concat { xs, axis } => {
                let mut offset = 0;
                for &v in xs {
                    let t = self.value(v);
                    let part = if *axis == 0 {
                        let len = t.data.len();
                        let d = g.data[offset..offset + len].to_vec();
                        offset += len;
                        d
                    } else {
                        let d = (0..t.rows)
                            .flat_map(|r| g.row(r)[offset..offset + t.cols].iter().copied())
                            .collect();
                        offset += t.cols;
                        d
                    };
                    self.accumulate(grads, v, Tensor { data: part, ..*t });
                }
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::Mul(a, b) => {
                let (at, bt) = (self.value(*a), self.value(*b));
                let da = g.data.iter().zip(&bt.data).map(|(d, y)| d * y).collect();
                let db = g.data.iter().zip(&at.data).map(|(d, x)| d * x).collect();
                self.accumulate(grads, *a, Tensor { data: da, ..*g });
                self.accumulate(grads, *b, Tensor { data: db, ..*g });
            }
            Op::Gather { x, index } => {
                let t = self.value(*x);
                let c = t.cols;
                let mut d = vec![0.0; t.data.len()];
                for (r, &src) in index.iter().enumerate() {
                    for (o, v) in d[src * c..(src + 1) * c].iter_mut().zip(g.row(r)) {
                        *o += v;
                    }
                }
                self.accumulate(grads, *x, Tensor { data: d, ..*t });
            }
            Op::ScatterMean { src, index, counts } => {
                let t = self.value(*src);
                let c = t.cols;
                let mut d = Vec::with_capacity(t.data.len());
                for &i in index {
                    let inv = 1.0 / counts[i] as f64;
                    d.extend(g.row(i).iter().map(|v| v * inv));
                }
                debug_assert_eq!(d.len(), c * t.rows);
                self.accumulate(grads, *src, Tensor { data: d, ..*t });
            }
            Op::QuatNormalize { x, norms } => {
                let y = &node.value;
                let mut d = Vec::with_capacity(y.data.len());
                for (r, n) in norms.iter().enumerate() {
                    let (yr, gr) = (y.row(r), g.row(r));
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    d.extend(yr.iter().zip(gr).map(|(yv, gv)| (gv - yv * dot) / n));
                }
                self.accumulate(grads, *x, Tensor { data: d, ..*y });
            }
            Op::QuatCompose(a, b) => {
                let (at, bt) = (self.value(*a), self.value(*b));
                if self.rg(*a) {
                    let d = (0..g.rows)
                        .flat_map(|r| hamilton(g.quat_row(r), conj(bt.quat_row(r))))
                        .collect();
                    self.accumulate(grads, *a, Tensor { data: d, ..*g });
                }
                if self.rg(*b) {
                    let d = (0..g.rows)
                        .flat_map(|r| hamilton(conj(at.quat_row(r)), g.quat_row(r)))
                        .collect();
                    self.accumulate(grads, *b, Tensor { data: d, ..*g });
                }
            }
            Op::QuatConj(x) => {
                let d = (0..g.rows).flat_map(|r| conj(g.quat_row(r))).collect();
                self.accumulate(grads, *x, Tensor { data: d, ..*g });
            }
            Op::BceWithLogits { z, targets } => {
                let zt = self.value(*z);
                let d = zt
                    .data
                    .iter()
                    .zip(targets)
                    .zip(&g.data)
                    .map(|((&z, &y), &gv)| gv * (sigmoid(z) - y))
                    .collect();
                self.accumulate(grads, *z, Tensor { data: d, ..*zt });
            }
            Op::QuatDistLoss { p, diffs } => {
                let mut d = Vec::with_capacity(diffs.len() * 4);
                for ((diff, &dist), &gv) in diffs.iter().zip(&node.value.data).zip(&g.data) {
                    if dist > 0.0 {
                        d.extend(diff.iter().map(|v| gv * v / dist));
                    } else {
                        d.extend([0.0; 4]);
                    }
                }
                self.accumulate(grads, *p, Tensor { data: d, ..*self.value(*p) });
            }
            Op::WeightedSum { x, weights } => {
                let s = g.item();
                let d = weights.iter().map(|w| w * s).collect();
                self.accumulate(grads, *x, Tensor { data: d, ..*self.value(*x) });
            }
            Op::Mean(x) => {
                let t = self.value(*x);
                let s = g.item() / t.data.len().max(1) as f64;
                self.accumulate(grads, *x, Tensor { data: vec![s; t.data.len()], ..*t });
            }
            Op::Scale(x, s) => {
                let d = g.data.iter().map(|v| v * s).collect();
                self.accumulate(grads, *x, Tensor { data: d, ..*g });
            }
        }
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}
