use super::kernels::{add_into, gemm};
use super::{Tensor, TensorError};

/// `sqrt(2 / pi)`, the scale inside the tanh approximation of GELU.
pub const SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;
/// Cubic coefficient of the tanh approximation of GELU.
pub const GELU_COEFF: f64 = 0.044_715;

/// Handle to a node recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Backward rule for [`Tape::custom_unary`]: `(input, output_grad) -> input_grad`.
pub type CustomBackward = Box<dyn Fn(&[f64], &[f64]) -> Vec<f64>>;

enum Op {
    Leaf,
    MatMul(Var, Var),
    BatchMatMul {
        a: Var,
        b: Var,
        transpose_b: bool,
    },
    Add(Var, Var),
    AddBias {
        x: Var,
        bias: Var,
    },
    Mul(Var, Var),
    Scale(Var, f64),
    Sum(Var),
    Reshape(Var),
    Gelu(Var),
    Softmax {
        x: Var,
        axis: usize,
    },
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        normed: Vec<f64>,
        inv_std: Vec<f64>,
    },
    GatherRows {
        table: Var,
        ids: Vec<usize>,
    },
    CrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        ignore: usize,
        probs: Vec<f64>,
        counted: usize,
    },
    Dropout {
        x: Var,
        mask: Vec<f64>,
    },
    MaskKeys {
        x: Var,
        key_mask: Vec<bool>,
        heads: usize,
    },
    SplitHeads {
        x: Var,
        batch: usize,
        seq: usize,
        heads: usize,
    },
    MergeHeads {
        x: Var,
        batch: usize,
        seq: usize,
        heads: usize,
    },
    Custom {
        x: Var,
        backward: CustomBackward,
    },
}

impl Op {
    fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf => vec![],
            Op::MatMul(a, b) | Op::Add(a, b) | Op::Mul(a, b) => vec![*a, *b],
            Op::BatchMatMul { a, b, .. } => vec![*a, *b],
            Op::AddBias { x, bias } => vec![*x, *bias],
            Op::LayerNorm { x, gain, bias, .. } => vec![*x, *gain, *bias],
            Op::Scale(x, _) | Op::Sum(x) | Op::Reshape(x) | Op::Gelu(x) => vec![*x],
            Op::Softmax { x, .. }
            | Op::Dropout { x, .. }
            | Op::MaskKeys { x, .. }
            | Op::SplitHeads { x, .. }
            | Op::MergeHeads { x, .. }
            | Op::Custom { x, .. } => vec![*x],
            Op::GatherRows { table, .. } => vec![*table],
            Op::CrossEntropy { logits, .. } => vec![*logits],
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
}

/// Records operations in execution order; `backward` replays them in reverse.
///
/// Nodes are only ever appended, so every node's inputs precede it and a
/// reverse sweep is a valid topological order. Leaf gradients live in each
/// leaf tensor's `grad` buffer and accumulate across `backward` calls until
/// [`Tape::zero_grad`]; intermediate gradients are rebuilt on every call.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn shape_err(op: &'static str, lhs: &[usize], rhs: &[usize]) -> TensorError {
    TensorError::Shape {
        op,
        lhs: lhs.to_vec(),
        rhs: rhs.to_vec(),
    }
}

fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let len = shape[axis];
    let inner = shape[axis + 1..].iter().product();
    (outer, len, inner)
}

fn gelu(x: f64) -> f64 {
    let u = SQRT_2_OVER_PI * (x + GELU_COEFF * x * x * x);
    0.5 * x * (1.0 + u.tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let u = SQRT_2_OVER_PI * (x + GELU_COEFF * x * x * x);
    let t = u.tanh();
    let du = SQRT_2_OVER_PI * (1.0 + 3.0 * GELU_COEFF * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, mut value: Tensor, op: Op) -> Var {
        value.requires_grad = op.inputs().iter().any(|v| self.nodes[v.0].value.requires_grad);
        value.grad = None;
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// Records a leaf, keeping the tensor's own `requires_grad` flag.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
        });
        Var(self.nodes.len() - 1)
    }

    /// Records a trainable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value.with_grad())
    }

    /// Records a leaf that never receives a gradient.
    pub fn constant(&mut self, mut value: Tensor) -> Var {
        value.requires_grad = false;
        self.leaf(value)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Accumulated gradient of a leaf, if any backward pass reached it.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].value.grad()
    }

    /// Moves a leaf's accumulated gradient out of the tape.
    pub fn take_grad(&mut self, v: Var) -> Option<Vec<f64>> {
        self.nodes[v.0].value.grad.take()
    }

    pub fn zero_grad(&mut self) {
        for node in &mut self.nodes {
            node.value.grad = None;
        }
    }

    /// `[m, k] x [k, n] -> [m, n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(shape_err("matmul", sa, sb));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; m * n];
        gemm(
            m,
            k,
            n,
            self.value(a).data(),
            false,
            self.value(b).data(),
            false,
            &mut out,
            false,
        );
        let t = Tensor::new(vec![m, n], out)?;
        Ok(self.push(t, Op::MatMul(a, b)))
    }

    /// Batched product over the leading axis: `[N, m, k] x [N, k, n]`, or
    /// `[N, m, k] x [N, n, k]^T` when `transpose_b` is set.
    pub fn batch_matmul(&mut self, a: Var, b: Var, transpose_b: bool) -> Result<Var, TensorError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        let ok = sa.len() == 3
            && sb.len() == 3
            && sa[0] == sb[0]
            && if transpose_b { sa[2] == sb[2] } else { sa[2] == sb[1] };
        if !ok {
            return Err(shape_err("batch_matmul", sa, sb));
        }
        let (batch, m, k) = (sa[0], sa[1], sa[2]);
        let n = if transpose_b { sb[1] } else { sb[2] };
        let mut out = vec![0.0; batch * m * n];
        let (ad, bd) = (self.value(a).data(), self.value(b).data());
        for i in 0..batch {
            gemm(
                m,
                k,
                n,
                &ad[i * m * k..(i + 1) * m * k],
                false,
                &bd[i * k * n..(i + 1) * k * n],
                transpose_b,
                &mut out[i * m * n..(i + 1) * m * n],
                false,
            );
        }
        let t = Tensor::new(vec![batch, m, n], out)?;
        Ok(self.push(t, Op::BatchMatMul { a, b, transpose_b }))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(shape_err("add", sa, sb));
        }
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x + y)
            .collect();
        let t = Tensor::new(sa.to_vec(), data)?;
        Ok(self.push(t, Op::Add(a, b)))
    }

    /// Adds a `[n]` bias to every trailing row of `x`.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var, TensorError> {
        let (sx, sb) = (self.shape(x), self.shape(bias));
        if sb.len() != 1 || sx.last() != Some(&sb[0]) {
            return Err(shape_err("add_bias", sx, sb));
        }
        let n = sb[0];
        let b = self.value(bias).data();
        let data = self
            .value(x)
            .data()
            .iter()
            .enumerate()
            .map(|(i, v)| v + b[i % n])
            .collect();
        let t = Tensor::new(sx.to_vec(), data)?;
        Ok(self.push(t, Op::AddBias { x, bias }))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(shape_err("mul", sa, sb));
        }
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x * y)
            .collect();
        let t = Tensor::new(sa.to_vec(), data)?;
        Ok(self.push(t, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let src = self.value(x);
        let t = Tensor {
            shape: src.shape.clone(),
            data: src.data.iter().map(|v| v * factor).collect(),
            requires_grad: false,
            grad: None,
        };
        self.push(t, Op::Scale(x, factor))
    }

    /// Sum of all elements as a scalar.
    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(x))
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var, TensorError> {
        let src = self.value(x);
        if shape.iter().product::<usize>() != src.numel() {
            return Err(shape_err("reshape", src.shape(), &shape));
        }
        let t = Tensor::new(shape, src.data.clone())?;
        Ok(self.push(t, Op::Reshape(x)))
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, x: Var) -> Var {
        let src = self.value(x);
        let t = Tensor {
            shape: src.shape.clone(),
            data: src.data.iter().map(|&v| gelu(v)).collect(),
            requires_grad: false,
            grad: None,
        };
        self.push(t, Op::Gelu(x))
    }

    /// Max-shifted softmax along `axis`. Slices that are entirely `-inf`
    /// come out as zeros instead of NaN.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var, TensorError> {
        let src = self.value(x);
        if axis >= src.shape.len() {
            return Err(TensorError::Axis {
                axis,
                shape: src.shape.clone(),
            });
        }
        let (outer, len, inner) = split_axis(&src.shape, axis);
        let mut out = vec![0.0; src.numel()];
        for o in 0..outer {
            for i in 0..inner {
                let idx = |j: usize| (o * len + j) * inner + i;
                let max = (0..len)
                    .map(|j| src.data[idx(j)])
                    .fold(f64::NEG_INFINITY, f64::max);
                if max == f64::NEG_INFINITY {
                    continue;
                }
                let mut total = 0.0;
                for j in 0..len {
                    let e = (src.data[idx(j)] - max).exp();
                    out[idx(j)] = e;
                    total += e;
                }
                for j in 0..len {
                    out[idx(j)] /= total;
                }
            }
        }
        let t = Tensor::new(src.shape.clone(), out)?;
        Ok(self.push(t, Op::Softmax { x, axis }))
    }

    /// Normalizes each trailing row to zero mean and unit variance
    /// (population variance, `eps` inside the square root), then applies
    /// `gain * x_hat + bias`.
    pub fn layernorm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var, TensorError> {
        let sx = self.shape(x).to_vec();
        let n = *sx.last().unwrap_or(&0);
        for p in [gain, bias] {
            let sp = self.shape(p);
            if sp.len() != 1 || sp[0] != n || n == 0 {
                return Err(shape_err("layernorm", &sx, sp));
            }
        }
        let (xd, g, b) = (
            self.value(x).data(),
            self.value(gain).data(),
            self.value(bias).data(),
        );
        let rows = xd.len() / n;
        let mut normed = vec![0.0; xd.len()];
        let mut inv_std = vec![0.0; rows];
        let mut out = vec![0.0; xd.len()];
        for r in 0..rows {
            let row = &xd[r * n..(r + 1) * n];
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std[r] = is;
            for j in 0..n {
                let h = (row[j] - mean) * is;
                normed[r * n + j] = h;
                out[r * n + j] = g[j] * h + b[j];
            }
        }
        let t = Tensor::new(sx, out)?;
        Ok(self.push(
            t,
            Op::LayerNorm {
                x,
                gain,
                bias,
                normed,
                inv_std,
            },
        ))
    }

    /// Selects rows of a 2-D table: `[V, H]` with `n` ids gives `[n, H]`.
    /// Serves both embedding lookup and CLS-position selection.
    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Result<Var, TensorError> {
        let st = self.shape(table);
        if st.len() != 2 {
            return Err(shape_err("gather_rows", st, &[ids.len()]));
        }
        let (rows, cols) = (st[0], st[1]);
        if let Some(&bad) = ids.iter().find(|&&i| i >= rows) {
            return Err(TensorError::Index { index: bad, rows });
        }
        let td = self.value(table).data();
        let mut out = Vec::with_capacity(ids.len() * cols);
        for &i in ids {
            out.extend_from_slice(&td[i * cols..(i + 1) * cols]);
        }
        let t = Tensor::new(vec![ids.len(), cols], out)?;
        Ok(self.push(
            t,
            Op::GatherRows {
                table,
                ids: ids.to_vec(),
            },
        ))
    }

    /// Mean negative log-likelihood over rows whose label is not `ignore`.
    /// All rows ignored gives a loss of 0 with zero gradient.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize], ignore: usize) -> Result<Var, TensorError> {
        let sl = self.shape(logits);
        if sl.len() != 2 || sl[0] != labels.len() {
            return Err(shape_err("cross_entropy", sl, &[labels.len()]));
        }
        let (rows, classes) = (sl[0], sl[1]);
        for (row, &label) in labels.iter().enumerate() {
            if label != ignore && label >= classes {
                return Err(TensorError::Label {
                    row,
                    label,
                    classes,
                });
            }
        }
        let ld = self.value(logits).data();
        let mut probs = vec![0.0; rows * classes];
        let mut total = 0.0;
        let mut counted = 0;
        for r in 0..rows {
            let row = &ld[r * classes..(r + 1) * classes];
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let sum_exp: f64 = row.iter().map(|v| (v - max).exp()).sum();
            let log_z = max + sum_exp.ln();
            for c in 0..classes {
                probs[r * classes + c] = (row[c] - log_z).exp();
            }
            if labels[r] != ignore {
                total += log_z - row[labels[r]];
                counted += 1;
            }
        }
        let loss = if counted == 0 { 0.0 } else { total / counted as f64 };
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
                ignore,
                probs,
                counted,
            },
        ))
    }

    /// Inverted dropout with a caller-supplied mask source. Each element is
    /// kept with probability `1 - p` and scaled by `1 / (1 - p)`.
    pub fn dropout(&mut self, x: Var, p: f64, rng: &mut crate::rng::SplitMix64) -> Var {
        if p <= 0.0 {
            return x;
        }
        let keep = 1.0 / (1.0 - p);
        let src = self.value(x);
        let mask: Vec<f64> = (0..src.numel())
            .map(|_| if rng.next_f64() < p { 0.0 } else { keep })
            .collect();
        let data = src.data.iter().zip(&mask).map(|(v, m)| v * m).collect();
        let t = Tensor {
            shape: src.shape.clone(),
            data,
            requires_grad: false,
            grad: None,
        };
        self.push(t, Op::Dropout { x, mask })
    }

    /// Sets attention logits `[batch*heads, Tq, Tk]` to `-inf` wherever the
    /// key position is padding. `key_mask` is `[batch, Tk]`, true for real tokens.
    pub fn mask_keys(&mut self, x: Var, key_mask: &[bool], heads: usize) -> Result<Var, TensorError> {
        let sx = self.shape(x);
        if sx.len() != 3 || heads == 0 || !sx[0].is_multiple_of(heads) || key_mask.len() != (sx[0] / heads) * sx[2] {
            return Err(shape_err("mask_keys", sx, &[key_mask.len()]));
        }
        let (n, tq, tk) = (sx[0], sx[1], sx[2]);
        let mut data = self.value(x).data().to_vec();
        for bh in 0..n {
            let b = bh / heads;
            for q in 0..tq {
                for k in 0..tk {
                    if !key_mask[b * tk + k] {
                        data[(bh * tq + q) * tk + k] = f64::NEG_INFINITY;
                    }
                }
            }
        }
        let t = Tensor::new(vec![n, tq, tk], data)?;
        Ok(self.push(
            t,
            Op::MaskKeys {
                x,
                key_mask: key_mask.to_vec(),
                heads,
            },
        ))
    }

    /// `[batch*seq, heads*d] -> [batch*heads, seq, d]`.
    pub fn split_heads(&mut self, x: Var, batch: usize, seq: usize, heads: usize) -> Result<Var, TensorError> {
        let sx = self.shape(x);
        if sx.len() != 2 || sx[0] != batch * seq || heads == 0 || !sx[1].is_multiple_of(heads) {
            return Err(shape_err("split_heads", sx, &[batch, seq, heads]));
        }
        let hidden = sx[1];
        let d = hidden / heads;
        let src = self.value(x).data();
        let mut out = vec![0.0; src.len()];
        for b in 0..batch {
            for t in 0..seq {
                for h in 0..heads {
                    let from = (b * seq + t) * hidden + h * d;
                    let to = ((b * heads + h) * seq + t) * d;
                    out[to..to + d].copy_from_slice(&src[from..from + d]);
                }
            }
        }
        let tensor = Tensor::new(vec![batch * heads, seq, d], out)?;
        Ok(self.push(
            tensor,
            Op::SplitHeads {
                x,
                batch,
                seq,
                heads,
            },
        ))
    }

    /// Inverse of [`Tape::split_heads`].
    pub fn merge_heads(&mut self, x: Var, batch: usize, seq: usize, heads: usize) -> Result<Var, TensorError> {
        let sx = self.shape(x);
        if sx.len() != 3 || sx[0] != batch * heads || sx[1] != seq {
            return Err(shape_err("merge_heads", sx, &[batch, seq, heads]));
        }
        let d = sx[2];
        let hidden = heads * d;
        let src = self.value(x).data();
        let mut out = vec![0.0; src.len()];
        for b in 0..batch {
            for t in 0..seq {
                for h in 0..heads {
                    let to = (b * seq + t) * hidden + h * d;
                    let from = ((b * heads + h) * seq + t) * d;
                    out[to..to + d].copy_from_slice(&src[from..from + d]);
                }
            }
        }
        let tensor = Tensor::new(vec![batch * seq, hidden], out)?;
        Ok(self.push(
            tensor,
            Op::MergeHeads {
                x,
                batch,
                seq,
                heads,
            },
        ))
    }

    /// Elementwise op with a caller-provided forward value and backward rule.
    pub fn custom_unary(
        &mut self,
        x: Var,
        forward: impl Fn(f64) -> f64,
        backward: CustomBackward,
    ) -> Var {
        let src = self.value(x);
        let t = Tensor {
            shape: src.shape.clone(),
            data: src.data.iter().map(|&v| forward(v)).collect(),
            requires_grad: false,
            grad: None,
        };
        self.push(t, Op::Custom { x, backward })
    }

    /// Propagates `d loss / d node` back to every trainable leaf.
    pub fn backward(&mut self, loss: Var) -> Result<(), TensorError> {
        let lv = self.value(loss);
        if !lv.is_scalar() {
            return Err(TensorError::NonScalar(lv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = Vec::new();
        grads.resize_with(loss.0 + 1, || None);
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            if !self.nodes[idx].value.requires_grad {
                continue;
            }
            if let Op::Leaf = self.nodes[idx].op {
                self.nodes[idx].value.accumulate_grad(&g);
                continue;
            }
            let contributions = self.local_grads(idx, &g);
            for (input, delta) in contributions {
                if !self.nodes[input.0].value.requires_grad {
                    continue;
                }
                match &mut grads[input.0] {
                    Some(acc) => add_into(acc, &delta),
                    slot @ None => *slot = Some(delta),
                }
            }
        }
        Ok(())
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].value.requires_grad
    }

    /// Gradient contributions of node `idx` to its inputs, given its output grad.
    fn local_grads(&self, idx: usize, g: &[f64]) -> Vec<(Var, Vec<f64>)> {
        let node = &self.nodes[idx];
        let out = &node.value;
        let mut res = Vec::new();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, k, n) = (av.shape[0], av.shape[1], bv.shape[1]);
                if self.wants(*a) {
                    let mut da = vec![0.0; m * k];
                    gemm(m, n, k, g, false, &bv.data, true, &mut da, false);
                    res.push((*a, da));
                }
                if self.wants(*b) {
                    let mut db = vec![0.0; k * n];
                    gemm(k, m, n, &av.data, true, g, false, &mut db, false);
                    res.push((*b, db));
                }
            }
            Op::BatchMatMul { a, b, transpose_b } => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (batch, m, k) = (av.shape[0], av.shape[1], av.shape[2]);
                let n = out.shape[2];
                if self.wants(*a) {
                    let mut da = vec![0.0; batch * m * k];
                    for i in 0..batch {
                        // dA = dC · op(B)^T
                        gemm(
                            m,
                            n,
                            k,
                            &g[i * m * n..(i + 1) * m * n],
                            false,
                            &bv.data[i * k * n..(i + 1) * k * n],
                            !transpose_b,
                            &mut da[i * m * k..(i + 1) * m * k],
                            false,
                        );
                    }
                    res.push((*a, da));
                }
                if self.wants(*b) {
                    let mut db = vec![0.0; batch * k * n];
                    for i in 0..batch {
                        let ga = &g[i * m * n..(i + 1) * m * n];
                        let aa = &av.data[i * m * k..(i + 1) * m * k];
                        let dst = &mut db[i * k * n..(i + 1) * k * n];
                        if *transpose_b {
                            // B stored [n, k]: dB = dC^T · A
                            gemm(n, m, k, ga, true, aa, false, dst, false);
                        } else {
                            gemm(k, m, n, aa, true, ga, false, dst, false);
                        }
                    }
                    res.push((*b, db));
                }
            }
            Op::Add(a, b) => {
                res.push((*a, g.to_vec()));
                res.push((*b, g.to_vec()));
            }
            Op::AddBias { x, bias } => {
                res.push((*x, g.to_vec()));
                if self.wants(*bias) {
                    let n = self.value(*bias).numel();
                    let mut db = vec![0.0; n];
                    for row in g.chunks(n) {
                        add_into(&mut db, row);
                    }
                    res.push((*bias, db));
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (&self.value(*a).data, &self.value(*b).data);
                res.push((*a, g.iter().zip(bv).map(|(g, y)| g * y).collect()));
                res.push((*b, g.iter().zip(av).map(|(g, x)| g * x).collect()));
            }
            Op::Scale(x, factor) => {
                res.push((*x, g.iter().map(|v| v * factor).collect()));
            }
            Op::Sum(x) => {
                res.push((*x, vec![g[0]; self.value(*x).numel()]));
            }
            Op::Reshape(x) => res.push((*x, g.to_vec())),
            Op::Gelu(x) => {
                let xv = &self.value(*x).data;
                res.push((*x, g.iter().zip(xv).map(|(g, &v)| g * gelu_grad(v)).collect()));
            }
            Op::Softmax { x, axis } => {
                let (outer, len, inner) = split_axis(&out.shape, *axis);
                let y = &out.data;
                let mut dx = vec![0.0; y.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let idx = |j: usize| (o * len + j) * inner + i;
                        let dot: f64 = (0..len).map(|j| g[idx(j)] * y[idx(j)]).sum();
                        for j in 0..len {
                            dx[idx(j)] = y[idx(j)] * (g[idx(j)] - dot);
                        }
                    }
                }
                res.push((*x, dx));
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                normed,
                inv_std,
            } => {
                let gv = &self.value(*gain).data;
                let n = gv.len();
                let rows = normed.len() / n;
                if self.wants(*x) {
                    let mut dx = vec![0.0; normed.len()];
                    for r in 0..rows {
                        let gr = &g[r * n..(r + 1) * n];
                        let hr = &normed[r * n..(r + 1) * n];
                        let mut mean_d = 0.0;
                        let mut mean_dh = 0.0;
                        for j in 0..n {
                            let d = gr[j] * gv[j];
                            mean_d += d;
                            mean_dh += d * hr[j];
                        }
                        mean_d /= n as f64;
                        mean_dh /= n as f64;
                        for j in 0..n {
                            let d = gr[j] * gv[j];
                            dx[r * n + j] = inv_std[r] * (d - mean_d - hr[j] * mean_dh);
                        }
                    }
                    res.push((*x, dx));
                }
                if self.wants(*gain) {
                    let mut dg = vec![0.0; n];
                    for r in 0..rows {
                        for j in 0..n {
                            dg[j] += g[r * n + j] * normed[r * n + j];
                        }
                    }
                    res.push((*gain, dg));
                }
                if self.wants(*bias) {
                    let mut db = vec![0.0; n];
                    for row in g.chunks(n) {
                        add_into(&mut db, row);
                    }
                    res.push((*bias, db));
                }
            }
            Op::GatherRows { table, ids } => {
                let tv = self.value(*table);
                let cols = tv.shape[1];
                let mut dt = vec![0.0; tv.numel()];
                for (r, &i) in ids.iter().enumerate() {
                    add_into(&mut dt[i * cols..(i + 1) * cols], &g[r * cols..(r + 1) * cols]);
                }
                res.push((*table, dt));
            }
            Op::CrossEntropy {
                logits,
                labels,
                ignore,
                probs,
                counted,
            } => {
                let classes = self.value(*logits).shape[1];
                let mut dl = vec![0.0; probs.len()];
                if *counted > 0 {
                    let scale = g[0] / *counted as f64;
                    for (r, &label) in labels.iter().enumerate() {
                        if label == *ignore {
                            continue;
                        }
                        for c in 0..classes {
                            let target = if c == label { 1.0 } else { 0.0 };
                            dl[r * classes + c] = scale * (probs[r * classes + c] - target);
                        }
                    }
                }
                res.push((*logits, dl));
            }
            Op::Dropout { x, mask } => {
                res.push((*x, g.iter().zip(mask).map(|(g, m)| g * m).collect()));
            }
            Op::MaskKeys { x, key_mask, heads } => {
                let (n, tq, tk) = (out.shape[0], out.shape[1], out.shape[2]);
                let mut dx = g.to_vec();
                for bh in 0..n {
                    let b = bh / heads;
                    for q in 0..tq {
                        for k in 0..tk {
                            if !key_mask[b * tk + k] {
                                dx[(bh * tq + q) * tk + k] = 0.0;
                            }
                        }
                    }
                }
                res.push((*x, dx));
            }
            Op::SplitHeads {
                x,
                batch,
                seq,
                heads,
            } => {
                let d = out.shape[2];
                let hidden = heads * d;
                let mut dx = vec![0.0; g.len()];
                for b in 0..*batch {
                    for t in 0..*seq {
                        for h in 0..*heads {
                            let to = (b * seq + t) * hidden + h * d;
                            let from = ((b * heads + h) * seq + t) * d;
                            dx[to..to + d].copy_from_slice(&g[from..from + d]);
                        }
                    }
                }
                res.push((*x, dx));
            }
            Op::MergeHeads {
                x,
                batch,
                seq,
                heads,
            } => {
                let hidden = out.shape[1];
                let d = hidden / heads;
                let mut dx = vec![0.0; g.len()];
                for b in 0..*batch {
                    for t in 0..*seq {
                        for h in 0..*heads {
                            let from = (b * seq + t) * hidden + h * d;
                            let to = ((b * heads + h) * seq + t) * d;
                            dx[to..to + d].copy_from_slice(&g[from..from + d]);
                        }
                    }
                }
                res.push((*x, dx));
            }
            Op::Custom { x, backward } => {
                res.push((*x, backward(&self.value(*x).data, g)));
            }
        }
        res
    }
}
