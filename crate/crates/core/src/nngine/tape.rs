//! Reverse-mode automatic differentiation on a flat tape.
//!
//! Every intermediate result is a real-valued matrix node; building an op
//! appends a node that remembers its parents, so node indices are already a
//! topological order and the backward pass is a single reverse sweep. The
//! graph is rebuilt from scratch each training step — no retained state, no
//! reentrancy concerns, and checkpointing only ever touches the parameter
//! store.
//!
//! Batches are laid out rows = samples, cols = features. Complex-valued
//! computation lives one level up (see [`super::complex`]) as pairs of real
//! nodes, which keeps every gradient here a plain real derivative.
//!
//! The binary feedback layer gets two ops: [`Tape::hard_sign`] is the real
//! thing (forward emits exactly ±1, backward uses the sigmoid-adjusted
//! surrogate slope), and [`Tape::soft_sign`] runs the surrogate in the
//! forward pass too, existing so finite differences can certify the shared
//! backward rule. Training never uses `soft_sign`.

use crate::{Error, Result};

/// Handle to a tape node.
pub type NodeId = usize;

#[derive(Debug, Clone)]
enum Op {
    Leaf { binding: Option<String> },
    MatMul(NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    /// `(m x n) + (1 x n)`: bias rows broadcast down the batch.
    AddRowBroadcast(NodeId, NodeId),
    Scale(NodeId, f64),
    AddConst(NodeId),
    Relu(NodeId),
    Sigmoid(NodeId),
    Tanh(NodeId),
    Sin(NodeId),
    Cos(NodeId),
    Sqrt(NodeId),
    Recip(NodeId),
    HardSign { x: NodeId, alpha: f64 },
    SoftSign { x: NodeId, alpha: f64 },
    /// Training-mode batch norm; normalized inputs and 1/std cached per call.
    BatchNorm { x: NodeId, gamma: NodeId, beta: NodeId, x_hat: Vec<f64>, inv_std: Vec<f64> },
    /// Inference-mode batch norm over fixed running statistics.
    BatchNormFrozen { x: NodeId, gamma: NodeId, x_hat: Vec<f64>, inv_std: Vec<f64> },
    Dropout { x: NodeId, mask: Vec<f64> },
    Transpose(NodeId),
    Reshape(NodeId),
    SliceRows { x: NodeId, start: usize },
    ConcatRows(Vec<NodeId>),
    ConcatCols(Vec<NodeId>),
    SumAll(NodeId),
    /// Elementwise product with a broadcast 1x1 scalar node.
    ScaleByNode { x: NodeId, s: NodeId },
    BceWithLogits { logits: NodeId, targets: Vec<f64> },
    MseLoss { x: NodeId, targets: Vec<f64> },
}

#[derive(Debug, Clone)]
struct Node {
    rows: usize,
    cols: usize,
    value: Vec<f64>,
    grad: Vec<f64>,
    op: Op,
}

/// The graph under construction. Single-shot: build, `backward`, `harvest`.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    backward_done: bool,
}

/// Logistic function, shared by the sigmoid op and the surrogate slope.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Derivative of the sign surrogate `2σ(αx) − 1` with respect to `x`.
pub fn surrogate_slope(x: f64, alpha: f64) -> f64 {
    let s = sigmoid(alpha * x);
    2.0 * alpha * s * (1.0 - s)
}

/// Hard sign with the declared tie rule: zero maps to +1.
pub fn hard_sign_value(x: f64) -> f64 {
    if x >= 0.0 {
        1.0
    } else {
        -1.0
    }
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

    pub fn dims(&self, id: NodeId) -> (usize, usize) {
        (self.nodes[id].rows, self.nodes[id].cols)
    }

    pub fn value(&self, id: NodeId) -> &[f64] {
        &self.nodes[id].value
    }

    pub fn grad(&self, id: NodeId) -> &[f64] {
        &self.nodes[id].grad
    }

    /// Scalar convenience for 1x1 nodes (losses).
    pub fn scalar(&self, id: NodeId) -> Result<f64> {
        let n = &self.nodes[id];
        if n.rows * n.cols != 1 {
            return Err(Error::Shape {
                op: "Tape::scalar",
                details: format!("node is {}x{}, not 1x1", n.rows, n.cols),
            });
        }
        Ok(n.value[0])
    }

    fn push(&mut self, rows: usize, cols: usize, value: Vec<f64>, op: Op) -> NodeId {
        debug_assert_eq!(value.len(), rows * cols);
        let grad = vec![0.0; value.len()];
        self.nodes.push(Node { rows, cols, value, grad, op });
        self.nodes.len() - 1
    }

    fn check(&self, op: &'static str, id: NodeId) -> Result<()> {
        if id >= self.nodes.len() {
            return Err(Error::Shape { op, details: format!("node {id} does not exist") });
        }
        Ok(())
    }

    fn same_shape(&self, op: &'static str, a: NodeId, b: NodeId) -> Result<()> {
        self.check(op, a)?;
        self.check(op, b)?;
        let (x, y) = (&self.nodes[a], &self.nodes[b]);
        if x.rows != y.rows || x.cols != y.cols {
            return Err(Error::Shape {
                op,
                details: format!("{}x{} vs {}x{}", x.rows, x.cols, y.rows, y.cols),
            });
        }
        Ok(())
    }

    // -- leaves --------------------------------------------------------

    /// Constant input node (no parameter binding; gradients are computed but
    /// never harvested).
    pub fn input(&mut self, rows: usize, cols: usize, value: Vec<f64>) -> Result<NodeId> {
        if value.len() != rows * cols {
            return Err(Error::Shape {
                op: "Tape::input",
                details: format!("{rows}x{cols} needs {} values, got {}", rows * cols, value.len()),
            });
        }
        Ok(self.push(rows, cols, value, Op::Leaf { binding: None }))
    }

    /// Leaf bound to a store parameter; `harvest` routes its gradient back.
    pub fn param(&mut self, store: &super::store::ParameterStore, name: &str) -> Result<NodeId> {
        let entry = store.get(name)?;
        Ok(self.push(
            entry.rows(),
            entry.cols(),
            entry.value.clone(),
            Op::Leaf { binding: Some(name.to_string()) },
        ))
    }

    // -- arithmetic ----------------------------------------------------

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.check("Tape::matmul", a)?;
        self.check("Tape::matmul", b)?;
        let (m, k1) = self.dims(a);
        let (k2, n) = self.dims(b);
        if k1 != k2 {
            return Err(Error::Shape {
                op: "Tape::matmul",
                details: format!("{m}x{k1} times {k2}x{n}"),
            });
        }
        let mut out = vec![0.0; m * n];
        mat_mul(m, k1, n, &self.nodes[a].value, &self.nodes[b].value, &mut out);
        Ok(self.push(m, n, out, Op::MatMul(a, b)))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape("Tape::add", a, b)?;
        let value = zip(&self.nodes[a].value, &self.nodes[b].value, |x, y| x + y);
        let (r, c) = self.dims(a);
        Ok(self.push(r, c, value, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape("Tape::sub", a, b)?;
        let value = zip(&self.nodes[a].value, &self.nodes[b].value, |x, y| x - y);
        let (r, c) = self.dims(a);
        Ok(self.push(r, c, value, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape("Tape::mul", a, b)?;
        let value = zip(&self.nodes[a].value, &self.nodes[b].value, |x, y| x * y);
        let (r, c) = self.dims(a);
        Ok(self.push(r, c, value, Op::Mul(a, b)))
    }

    pub fn add_row_broadcast(&mut self, x: NodeId, bias: NodeId) -> Result<NodeId> {
        self.check("Tape::add_row_broadcast", x)?;
        self.check("Tape::add_row_broadcast", bias)?;
        let (m, n) = self.dims(x);
        let (br, bc) = self.dims(bias);
        if br != 1 || bc != n {
            return Err(Error::Shape {
                op: "Tape::add_row_broadcast",
                details: format!("bias is {br}x{bc}, input {m}x{n}"),
            });
        }
        let xv = &self.nodes[x].value;
        let bv = &self.nodes[bias].value;
        let mut out = Vec::with_capacity(m * n);
        for i in 0..m {
            for j in 0..n {
                out.push(xv[i * n + j] + bv[j]);
            }
        }
        Ok(self.push(m, n, out, Op::AddRowBroadcast(x, bias)))
    }

    pub fn scale(&mut self, x: NodeId, c: f64) -> Result<NodeId> {
        self.check("Tape::scale", x)?;
        let value = self.nodes[x].value.iter().map(|v| v * c).collect();
        let (r, co) = self.dims(x);
        Ok(self.push(r, co, value, Op::Scale(x, c)))
    }

    pub fn add_const(&mut self, x: NodeId, c: f64) -> Result<NodeId> {
        self.check("Tape::add_const", x)?;
        let value = self.nodes[x].value.iter().map(|v| v + c).collect();
        let (r, co) = self.dims(x);
        Ok(self.push(r, co, value, Op::AddConst(x)))
    }

    // -- activations ---------------------------------------------------

    pub fn relu(&mut self, x: NodeId) -> Result<NodeId> {
        self.unary(x, "Tape::relu", |v| v.max(0.0), Op::Relu(x))
    }

    pub fn sigmoid_node(&mut self, x: NodeId) -> Result<NodeId> {
        self.unary(x, "Tape::sigmoid", sigmoid, Op::Sigmoid(x))
    }

    pub fn tanh_node(&mut self, x: NodeId) -> Result<NodeId> {
        self.unary(x, "Tape::tanh", f64::tanh, Op::Tanh(x))
    }

    pub fn sin(&mut self, x: NodeId) -> Result<NodeId> {
        self.unary(x, "Tape::sin", f64::sin, Op::Sin(x))
    }

    pub fn cos(&mut self, x: NodeId) -> Result<NodeId> {
        self.unary(x, "Tape::cos", f64::cos, Op::Cos(x))
    }

    pub fn sqrt(&mut self, x: NodeId) -> Result<NodeId> {
        self.check("Tape::sqrt", x)?;
        if self.nodes[x].value.iter().any(|&v| v < 0.0) {
            return Err(Error::Domain {
                op: "Tape::sqrt",
                details: "negative entry under square root".into(),
            });
        }
        self.unary(x, "Tape::sqrt", f64::sqrt, Op::Sqrt(x))
    }

    pub fn recip(&mut self, x: NodeId) -> Result<NodeId> {
        self.unary(x, "Tape::recip", |v| 1.0 / v, Op::Recip(x))
    }

    fn unary(
        &mut self,
        x: NodeId,
        opname: &'static str,
        f: impl Fn(f64) -> f64,
        op: Op,
    ) -> Result<NodeId> {
        self.check(opname, x)?;
        let value = self.nodes[x].value.iter().map(|&v| f(v)).collect();
        let (r, c) = self.dims(x);
        Ok(self.push(r, c, value, op))
    }

    // -- binary feedback -------------------------------------------------

    /// Straight-through sign: forward is exactly ±1 (ties to +1), backward
    /// applies the surrogate slope at `alpha`.
    pub fn hard_sign(&mut self, x: NodeId, alpha: f64) -> Result<NodeId> {
        if !(alpha > 0.0) {
            return Err(Error::Domain {
                op: "Tape::hard_sign",
                details: format!("slope must be positive, got {alpha}"),
            });
        }
        self.unary(x, "Tape::hard_sign", hard_sign_value, Op::HardSign { x, alpha })
    }

    /// Surrogate `2σ(αx) − 1` in the forward pass as well; identical
    /// backward rule to [`Tape::hard_sign`]. Exists for gradient
    /// verification only.
    pub fn soft_sign(&mut self, x: NodeId, alpha: f64) -> Result<NodeId> {
        if !(alpha > 0.0) {
            return Err(Error::Domain {
                op: "Tape::soft_sign",
                details: format!("slope must be positive, got {alpha}"),
            });
        }
        self.unary(
            x,
            "Tape::soft_sign",
            |v| 2.0 * sigmoid(alpha * v) - 1.0,
            Op::SoftSign { x, alpha },
        )
    }

    // -- normalization & regularization ---------------------------------

    const BN_EPS: f64 = 1e-5;

    /// Training-mode batch normalization over columns (features). Returns
    /// the normalized output and the per-feature batch statistics so the
    /// caller can fold them into running averages.
    pub fn batchnorm_train(
        &mut self,
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
    ) -> Result<(NodeId, Vec<f64>, Vec<f64>)> {
        self.check("Tape::batchnorm", x)?;
        let (m, n) = self.dims(x);
        if m < 2 {
            return Err(Error::Domain {
                op: "Tape::batchnorm",
                details: format!("training-mode batch norm needs batch >= 2, got {m}"),
            });
        }
        for (name, id) in [("gamma", gamma), ("beta", beta)] {
            self.check("Tape::batchnorm", id)?;
            let (r, c) = self.dims(id);
            if r != 1 || c != n {
                return Err(Error::Shape {
                    op: "Tape::batchnorm",
                    details: format!("{name} is {r}x{c}, expected 1x{n}"),
                });
            }
        }
        let xv = &self.nodes[x].value;
        let mut mean = vec![0.0; n];
        for i in 0..m {
            for j in 0..n {
                mean[j] += xv[i * n + j];
            }
        }
        mean.iter_mut().for_each(|v| *v /= m as f64);
        let mut var = vec![0.0; n];
        for i in 0..m {
            for j in 0..n {
                let d = xv[i * n + j] - mean[j];
                var[j] += d * d;
            }
        }
        var.iter_mut().for_each(|v| *v /= m as f64);
        let inv_std: Vec<f64> = var.iter().map(|&v| 1.0 / (v + Self::BN_EPS).sqrt()).collect();
        let mut x_hat = Vec::with_capacity(m * n);
        for i in 0..m {
            for j in 0..n {
                x_hat.push((xv[i * n + j] - mean[j]) * inv_std[j]);
            }
        }
        let gv = &self.nodes[gamma].value;
        let bv = &self.nodes[beta].value;
        let mut out = Vec::with_capacity(m * n);
        for i in 0..m {
            for j in 0..n {
                out.push(gv[j] * x_hat[i * n + j] + bv[j]);
            }
        }
        let id = self.push(m, n, out, Op::BatchNorm { x, gamma, beta, x_hat, inv_std });
        Ok((id, mean, var))
    }

    /// Inference-mode batch normalization over fixed running statistics.
    pub fn batchnorm_eval(
        &mut self,
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        running_mean: &[f64],
        running_var: &[f64],
    ) -> Result<NodeId> {
        self.check("Tape::batchnorm", x)?;
        let (m, n) = self.dims(x);
        if running_mean.len() != n || running_var.len() != n {
            return Err(Error::Shape {
                op: "Tape::batchnorm",
                details: format!(
                    "running stats carry {}/{} features, input has {n}",
                    running_mean.len(),
                    running_var.len()
                ),
            });
        }
        let inv_std: Vec<f64> =
            running_var.iter().map(|&v| 1.0 / (v + Self::BN_EPS).sqrt()).collect();
        let xv = &self.nodes[x].value;
        let mut x_hat = Vec::with_capacity(m * n);
        for i in 0..m {
            for j in 0..n {
                x_hat.push((xv[i * n + j] - running_mean[j]) * inv_std[j]);
            }
        }
        let gv = &self.nodes[gamma].value;
        let mut out = Vec::with_capacity(m * n);
        for i in 0..m {
            for j in 0..n {
                out.push(gv[j] * x_hat[i * n + j]);
            }
        }
        // The op covers the scale path; the shift by beta rides a standard
        // broadcast add so its gradient flows without a dedicated rule.
        let scaled = self.push(m, n, out, Op::BatchNormFrozen { x, gamma, x_hat, inv_std });
        self.add_row_broadcast(scaled, beta)
    }

    /// Inverted dropout with a pre-scaled mask (entries 0 or 1/(1-rate)).
    pub fn dropout(&mut self, x: NodeId, rate: f64, rng: &mut crate::numerics::RngStream) -> Result<NodeId> {
        self.check("Tape::dropout", x)?;
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Domain {
                op: "Tape::dropout",
                details: format!("rate must be in [0, 1), got {rate}"),
            });
        }
        let (m, n) = self.dims(x);
        if rate == 0.0 {
            let value = self.nodes[x].value.clone();
            return Ok(self.push(m, n, value, Op::Dropout { x, mask: vec![1.0; m * n] }));
        }
        let keep = 1.0 - rate;
        let scale = 1.0 / keep;
        let mask: Vec<f64> = (0..m * n)
            .map(|_| if rng.uniform(0.0, 1.0) < keep { scale } else { 0.0 })
            .collect();
        let value = zip(&self.nodes[x].value, &mask, |v, m| v * m);
        Ok(self.push(m, n, value, Op::Dropout { x, mask }))
    }

    // -- structure -------------------------------------------------------

    pub fn transpose(&mut self, x: NodeId) -> Result<NodeId> {
        self.check("Tape::transpose", x)?;
        let (m, n) = self.dims(x);
        let xv = &self.nodes[x].value;
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = xv[i * n + j];
            }
        }
        Ok(self.push(n, m, out, Op::Transpose(x)))
    }

    /// Reinterprets the row-major buffer under new dimensions.
    pub fn reshape(&mut self, x: NodeId, rows: usize, cols: usize) -> Result<NodeId> {
        self.check("Tape::reshape", x)?;
        let (m, n) = self.dims(x);
        if m * n != rows * cols {
            return Err(Error::Shape {
                op: "Tape::reshape",
                details: format!("{m}x{n} cannot become {rows}x{cols}"),
            });
        }
        let value = self.nodes[x].value.clone();
        Ok(self.push(rows, cols, value, Op::Reshape(x)))
    }

    /// Contiguous row slice `[start, start+len)`.
    pub fn slice_rows(&mut self, x: NodeId, start: usize, len: usize) -> Result<NodeId> {
        self.check("Tape::slice_rows", x)?;
        let (m, n) = self.dims(x);
        if start + len > m || len == 0 {
            return Err(Error::Shape {
                op: "Tape::slice_rows",
                details: format!("rows [{start}, {}) out of {m}", start + len),
            });
        }
        let value = self.nodes[x].value[start * n..(start + len) * n].to_vec();
        Ok(self.push(len, n, value, Op::SliceRows { x, start }))
    }

    /// Stacks nodes with equal column counts along the row axis.
    pub fn concat_rows(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(Error::Shape { op: "Tape::concat_rows", details: "no parts".into() });
        }
        for &p in parts {
            self.check("Tape::concat_rows", p)?;
        }
        let n = self.dims(parts[0]).1;
        let mut rows = 0;
        let mut value = Vec::new();
        for &p in parts {
            let (r, c) = self.dims(p);
            if c != n {
                return Err(Error::Shape {
                    op: "Tape::concat_rows",
                    details: format!("column mismatch: {c} vs {n}"),
                });
            }
            rows += r;
            value.extend_from_slice(&self.nodes[p].value);
        }
        Ok(self.push(rows, n, value, Op::ConcatRows(parts.to_vec())))
    }

    /// Stitches nodes with equal row counts along the column axis.
    pub fn concat_cols(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(Error::Shape { op: "Tape::concat_cols", details: "no parts".into() });
        }
        for &p in parts {
            self.check("Tape::concat_cols", p)?;
        }
        let m = self.dims(parts[0]).0;
        let mut total_cols = 0;
        for &p in parts {
            let (r, c) = self.dims(p);
            if r != m {
                return Err(Error::Shape {
                    op: "Tape::concat_cols",
                    details: format!("row mismatch: {r} vs {m}"),
                });
            }
            total_cols += c;
        }
        let mut value = vec![0.0; m * total_cols];
        let mut offset = 0;
        for &p in parts {
            let (_, c) = self.dims(p);
            let pv = &self.nodes[p].value;
            for i in 0..m {
                value[i * total_cols + offset..i * total_cols + offset + c]
                    .copy_from_slice(&pv[i * c..(i + 1) * c]);
            }
            offset += c;
        }
        Ok(self.push(m, total_cols, value, Op::ConcatCols(parts.to_vec())))
    }

    pub fn sum_all(&mut self, x: NodeId) -> Result<NodeId> {
        self.check("Tape::sum_all", x)?;
        let s: f64 = self.nodes[x].value.iter().sum();
        Ok(self.push(1, 1, vec![s], Op::SumAll(x)))
    }

    /// Multiplies every entry of `x` by the 1x1 node `s`.
    pub fn scale_by_node(&mut self, x: NodeId, s: NodeId) -> Result<NodeId> {
        self.check("Tape::scale_by_node", x)?;
        self.check("Tape::scale_by_node", s)?;
        let (sr, sc) = self.dims(s);
        if sr != 1 || sc != 1 {
            return Err(Error::Shape {
                op: "Tape::scale_by_node",
                details: format!("scale node is {sr}x{sc}, not 1x1"),
            });
        }
        let c = self.nodes[s].value[0];
        let value = self.nodes[x].value.iter().map(|v| v * c).collect();
        let (r, co) = self.dims(x);
        Ok(self.push(r, co, value, Op::ScaleByNode { x, s }))
    }

    // -- losses ----------------------------------------------------------

    /// Numerically stable binary cross-entropy on logits against {0,1}
    /// targets: summed over the bits of each sample (row), averaged over the
    /// batch. Matches `phy::bce_loss` applied to `sigmoid(logits)`.
    pub fn bce_with_logits(&mut self, logits: NodeId, targets: &[f64]) -> Result<NodeId> {
        self.check("Tape::bce_with_logits", logits)?;
        let (m, n) = self.dims(logits);
        if targets.len() != m * n {
            return Err(Error::Shape {
                op: "Tape::bce_with_logits",
                details: format!("targets carry {} values for a {m}x{n} batch", targets.len()),
            });
        }
        if let Some(t) = targets.iter().find(|t| !(0.0..=1.0).contains(*t)) {
            return Err(Error::Domain {
                op: "Tape::bce_with_logits",
                details: format!("target {t} outside [0, 1]"),
            });
        }
        let zv = &self.nodes[logits].value;
        let mut total = 0.0;
        for (z, t) in zv.iter().zip(targets) {
            // max(z,0) − z·t + ln(1 + e^(−|z|)) — stable in both tails.
            total += z.max(0.0) - z * t + (-z.abs()).exp().ln_1p();
        }
        let loss = total / m as f64;
        Ok(self.push(1, 1, vec![loss], Op::BceWithLogits { logits, targets: targets.to_vec() }))
    }

    /// Mean squared error over all coordinates.
    pub fn mse_loss(&mut self, x: NodeId, targets: &[f64]) -> Result<NodeId> {
        self.check("Tape::mse_loss", x)?;
        let (m, n) = self.dims(x);
        if targets.len() != m * n {
            return Err(Error::Shape {
                op: "Tape::mse_loss",
                details: format!("targets carry {} values for a {m}x{n} batch", targets.len()),
            });
        }
        let xv = &self.nodes[x].value;
        let loss =
            xv.iter().zip(targets).map(|(a, t)| (a - t) * (a - t)).sum::<f64>() / (m * n) as f64;
        Ok(self.push(1, 1, vec![loss], Op::MseLoss { x, targets: targets.to_vec() }))
    }

    // -- reverse sweep ----------------------------------------------------

    /// Propagates d(loss)/d(node) to every node from a scalar loss. One shot
    /// per tape.
    pub fn backward(&mut self, loss: NodeId) -> Result<()> {
        self.check("Tape::backward", loss)?;
        if self.backward_done {
            return Err(Error::Config("backward already ran on this tape".into()));
        }
        let l = &self.nodes[loss];
        if l.rows * l.cols != 1 {
            return Err(Error::Shape {
                op: "Tape::backward",
                details: format!("loss node is {}x{}, not scalar", l.rows, l.cols),
            });
        }
        self.backward_done = true;
        self.nodes[loss].grad[0] = 1.0;
        for i in (0..self.nodes.len()).rev() {
            if self.nodes[i].grad.iter().all(|&g| g == 0.0) {
                continue;
            }
            for (parent, contribution) in self.backward_op(i) {
                let pg = &mut self.nodes[parent].grad;
                for (g, c) in pg.iter_mut().zip(&contribution) {
                    *g += c;
                }
            }
        }
        Ok(())
    }

    /// Gradient contributions of node `i` to each of its parents.
    fn backward_op(&self, i: NodeId) -> Vec<(NodeId, Vec<f64>)> {
        let node = &self.nodes[i];
        let dy = &node.grad;
        let (m, n) = (node.rows, node.cols);
        match &node.op {
            Op::Leaf { .. } => vec![],
            Op::MatMul(a, b) => {
                let (am, ak) = (self.nodes[*a].rows, self.nodes[*a].cols);
                let bn = self.nodes[*b].cols;
                // dA = dY · Bᵀ ; dB = Aᵀ · dY
                let mut da = vec![0.0; am * ak];
                mat_mul_nt(am, bn, ak, dy, &self.nodes[*b].value, &mut da);
                let mut db = vec![0.0; ak * bn];
                mat_mul_tn(ak, am, bn, &self.nodes[*a].value, dy, &mut db);
                vec![(*a, da), (*b, db)]
            }
            Op::Add(a, b) => vec![(*a, dy.clone()), (*b, dy.clone())],
            Op::Sub(a, b) => vec![(*a, dy.clone()), (*b, dy.iter().map(|g| -g).collect())],
            Op::Mul(a, b) => {
                let da = zip(dy, &self.nodes[*b].value, |g, v| g * v);
                let db = zip(dy, &self.nodes[*a].value, |g, v| g * v);
                vec![(*a, da), (*b, db)]
            }
            Op::AddRowBroadcast(x, bias) => {
                let mut db = vec![0.0; n];
                for i in 0..m {
                    for j in 0..n {
                        db[j] += dy[i * n + j];
                    }
                }
                vec![(*x, dy.clone()), (*bias, db)]
            }
            Op::Scale(x, c) => vec![(*x, dy.iter().map(|g| g * c).collect())],
            Op::AddConst(x) => vec![(*x, dy.clone())],
            Op::Relu(x) => {
                let dx = zip(dy, &self.nodes[*x].value, |g, v| if v > 0.0 { g } else { 0.0 });
                vec![(*x, dx)]
            }
            Op::Sigmoid(_) => {
                let y = &node.value;
                let x = match node.op {
                    Op::Sigmoid(x) => x,
                    _ => unreachable!(),
                };
                let dx = zip(dy, y, |g, s| g * s * (1.0 - s));
                vec![(x, dx)]
            }
            Op::Tanh(x) => {
                let dx = zip(dy, &node.value, |g, t| g * (1.0 - t * t));
                vec![(*x, dx)]
            }
            Op::Sin(x) => {
                let dx = zip(dy, &self.nodes[*x].value, |g, v| g * v.cos());
                vec![(*x, dx)]
            }
            Op::Cos(x) => {
                let dx = zip(dy, &self.nodes[*x].value, |g, v| -g * v.sin());
                vec![(*x, dx)]
            }
            Op::Sqrt(x) => {
                let dx = zip(dy, &node.value, |g, s| if s > 0.0 { g / (2.0 * s) } else { 0.0 });
                vec![(*x, dx)]
            }
            Op::Recip(x) => {
                let dx = zip(dy, &node.value, |g, y| -g * y * y);
                vec![(*x, dx)]
            }
            Op::HardSign { x, alpha } | Op::SoftSign { x, alpha } => {
                let dx = zip(dy, &self.nodes[*x].value, |g, v| g * surrogate_slope(v, *alpha));
                vec![(*x, dx)]
            }
            Op::BatchNorm { x, gamma, beta, x_hat, inv_std } => {
                let gv = &self.nodes[*gamma].value;
                let mut dgamma = vec![0.0; n];
                let mut dbeta = vec![0.0; n];
                let mut sum_dxhat = vec![0.0; n];
                let mut sum_dxhat_xhat = vec![0.0; n];
                let mut dxhat = vec![0.0; m * n];
                for i in 0..m {
                    for j in 0..n {
                        let idx = i * n + j;
                        dgamma[j] += dy[idx] * x_hat[idx];
                        dbeta[j] += dy[idx];
                        dxhat[idx] = dy[idx] * gv[j];
                        sum_dxhat[j] += dxhat[idx];
                        sum_dxhat_xhat[j] += dxhat[idx] * x_hat[idx];
                    }
                }
                let mut dx = vec![0.0; m * n];
                let mf = m as f64;
                for i in 0..m {
                    for j in 0..n {
                        let idx = i * n + j;
                        dx[idx] = inv_std[j] / mf
                            * (mf * dxhat[idx] - sum_dxhat[j] - x_hat[idx] * sum_dxhat_xhat[j]);
                    }
                }
                vec![(*x, dx), (*gamma, dgamma), (*beta, dbeta)]
            }
            Op::BatchNormFrozen { x, gamma, x_hat, inv_std } => {
                let gv = &self.nodes[*gamma].value;
                let mut dgamma = vec![0.0; n];
                let mut dx = vec![0.0; m * n];
                for i in 0..m {
                    for j in 0..n {
                        let idx = i * n + j;
                        dgamma[j] += dy[idx] * x_hat[idx];
                        dx[idx] = dy[idx] * gv[j] * inv_std[j];
                    }
                }
                vec![(*x, dx), (*gamma, dgamma)]
            }
            Op::Dropout { x, mask } => {
                let dx = zip(dy, mask, |g, m| g * m);
                vec![(*x, dx)]
            }
            Op::Transpose(x) => {
                // node is n_x × m_x transposed; route grads back through the
                // inverse permutation.
                let (xm, xn) = (self.nodes[*x].rows, self.nodes[*x].cols);
                let mut dx = vec![0.0; xm * xn];
                for i in 0..m {
                    for j in 0..n {
                        dx[j * xn + i] = dy[i * n + j];
                    }
                }
                vec![(*x, dx)]
            }
            Op::Reshape(x) => vec![(*x, dy.clone())],
            Op::SliceRows { x, start } => {
                let (xm, xn) = (self.nodes[*x].rows, self.nodes[*x].cols);
                let mut dx = vec![0.0; xm * xn];
                dx[start * xn..start * xn + dy.len()].copy_from_slice(dy);
                vec![(*x, dx)]
            }
            Op::ConcatRows(parts) => {
                let mut out = Vec::with_capacity(parts.len());
                let mut offset = 0;
                for &p in parts {
                    let len = self.nodes[p].value.len();
                    out.push((p, dy[offset..offset + len].to_vec()));
                    offset += len;
                }
                out
            }
            Op::ConcatCols(parts) => {
                let mut out = Vec::with_capacity(parts.len());
                let mut col_offset = 0;
                for &p in parts {
                    let (pm, pc) = (self.nodes[p].rows, self.nodes[p].cols);
                    let mut dp = vec![0.0; pm * pc];
                    for i in 0..pm {
                        dp[i * pc..(i + 1) * pc].copy_from_slice(
                            &dy[i * n + col_offset..i * n + col_offset + pc],
                        );
                    }
                    out.push((p, dp));
                    col_offset += pc;
                }
                out
            }
            Op::SumAll(x) => {
                let g = dy[0];
                vec![(*x, vec![g; self.nodes[*x].value.len()])]
            }
            Op::ScaleByNode { x, s } => {
                let c = self.nodes[*s].value[0];
                let dx = dy.iter().map(|g| g * c).collect();
                let ds = dy
                    .iter()
                    .zip(&self.nodes[*x].value)
                    .map(|(g, v)| g * v)
                    .sum::<f64>();
                vec![(*x, dx), (*s, vec![ds])]
            }
            Op::BceWithLogits { logits, targets } => {
                let g = dy[0];
                let (lm, _) = (self.nodes[*logits].rows, self.nodes[*logits].cols);
                let dz = self.nodes[*logits]
                    .value
                    .iter()
                    .zip(targets)
                    .map(|(&z, &t)| g * (sigmoid(z) - t) / lm as f64)
                    .collect();
                vec![(*logits, dz)]
            }
            Op::MseLoss { x, targets } => {
                let g = dy[0];
                let len = self.nodes[*x].value.len() as f64;
                let dx = self.nodes[*x]
                    .value
                    .iter()
                    .zip(targets)
                    .map(|(&v, &t)| g * 2.0 * (v - t) / len)
                    .collect();
                vec![(*x, dx)]
            }
        }
    }

    /// Routes gradients of every bound leaf into the store (accumulating).
    /// Requires a completed backward pass.
    pub fn harvest(&self, store: &mut super::store::ParameterStore) -> Result<()> {
        if !self.backward_done {
            return Err(Error::Config("harvest requires a completed backward pass".into()));
        }
        for node in &self.nodes {
            if let Op::Leaf { binding: Some(name) } = &node.op {
                store.add_grad(name, &node.grad)?;
            }
        }
        Ok(())
    }
}

// -- raw kernels ---------------------------------------------------------

fn zip(a: &[f64], b: &[f64], f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()
}

/// out(m×n) = a(m×k) · b(k×n)
fn mat_mul(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], out: &mut [f64]) {
    for i in 0..m {
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == 0.0 {
                continue;
            }
            let br = &b[p * n..(p + 1) * n];
            let or = &mut out[i * n..(i + 1) * n];
            for j in 0..n {
                or[j] += aip * br[j];
            }
        }
    }
}

/// out(m×k) = a(m×n) · b(k×n)ᵀ
fn mat_mul_nt(m: usize, n: usize, k: usize, a: &[f64], b: &[f64], out: &mut [f64]) {
    for i in 0..m {
        for j in 0..k {
            let mut acc = 0.0;
            let ar = &a[i * n..(i + 1) * n];
            let br = &b[j * n..(j + 1) * n];
            for p in 0..n {
                acc += ar[p] * br[p];
            }
            out[i * k + j] = acc;
        }
    }
}

/// out(k×n) = a(m×k)ᵀ · b(m×n)
fn mat_mul_tn(k: usize, m: usize, n: usize, a: &[f64], b: &[f64], out: &mut [f64]) {
    for p in 0..m {
        for i in 0..k {
            let api = a[p * k + i];
            if api == 0.0 {
                continue;
            }
            let br = &b[p * n..(p + 1) * n];
            let or = &mut out[i * n..(i + 1) * n];
            for j in 0..n {
                or[j] += api * br[j];
            }
        }
    }
}
