//! Reverse-mode tape.
//!
//! Every operation appends a node whose inputs were created earlier, so the
//! node vector is already in topological order and `backward` is a single
//! reverse sweep.

use super::gemm::gemm;
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Linear {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    Add(Var, Var),
    Sub(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    SoftmaxRows(Var),
    ConcatLast(Var, Var),
    ConcatTime(Var, Var),
    Conv1d {
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        padding: usize,
        cols: Vec<f64>,
    },
    Upsample {
        x: Var,
        factor: usize,
    },
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<f64>,
        rstd: Vec<f64>,
    },
    CausalAttention {
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        probs: Vec<f64>,
    },
    GatherRows {
        table: Var,
        indices: Vec<usize>,
    },
    AddTimeEmbedding {
        x: Var,
        table: Var,
    },
    StopGrad,
    StraightThrough {
        encoded: Var,
    },
    SmoothL1 {
        a: Var,
        b: Var,
        beta: f64,
    },
    MeanSquaredError(Var, Var),
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        weights: Vec<f64>,
        probs: Vec<f64>,
    },
    Sum(Var),
    Mean(Var),
    Reshape(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Recorded computation graph for one forward pass.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// `None` when the variable does not require grad or received no gradient.
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn take(&mut self, v: Var) -> Option<Vec<f64>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

fn check_finite(op: &'static str, data: &[f64]) -> Result<()> {
    if data.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite { op })
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    /// Non-trainable leaf.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, name: &'static str, value: Tensor, op: Op, inputs: &[Var]) -> Result<Var> {
        check_finite(name, value.data())?;
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    // ---- dense ---------------------------------------------------------

    /// `[m, k] x [k, n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::dim(format!("matmul {:?} x {:?}", sa, sb)));
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
        self.push(
            "matmul",
            Tensor::from_parts(vec![m, n], out),
            Op::MatMul(a, b),
            &[a, b],
        )
    }

    /// `y = x W + b` applied over the trailing dimension of `x`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        let sw = self.shape(w);
        let din = *sx.last().ok_or_else(|| Error::dim("linear on scalar"))?;
        if sw.len() != 2 || sw[0] != din {
            return Err(Error::dim(format!("linear x {:?} with W {:?}", sx, sw)));
        }
        let dout = sw[1];
        if let Some(b) = b {
            if self.shape(b) != [dout] {
                return Err(Error::dim(format!(
                    "linear bias {:?}, expected [{}]",
                    self.shape(b),
                    dout
                )));
            }
        }
        let rows = self.value(x).numel() / din.max(1);
        let mut out = vec![0.0; rows * dout];
        if let Some(b) = b {
            let bias = self.value(b).data();
            for row in out.chunks_mut(dout) {
                row.copy_from_slice(bias);
            }
        }
        gemm(
            rows,
            din,
            dout,
            self.value(x).data(),
            false,
            self.value(w).data(),
            false,
            &mut out,
            b.is_some(),
        );
        let mut shape = sx;
        *shape.last_mut().unwrap() = dout;
        let inputs: Vec<Var> = [Some(x), Some(w), b].into_iter().flatten().collect();
        self.push(
            "linear",
            Tensor::from_parts(shape, out),
            Op::Linear { x, w, b },
            &inputs,
        )
    }

    // ---- elementwise ---------------------------------------------------

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let out: Vec<f64> = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x + y)
            .collect();
        let shape = self.shape(a).to_vec();
        self.push("add", Tensor::from_parts(shape, out), Op::Add(a, b), &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let out: Vec<f64> = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x - y)
            .collect();
        let shape = self.shape(a).to_vec();
        self.push("sub", Tensor::from_parts(shape, out), Op::Sub(a, b), &[a, b])
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        let out: Vec<f64> = self.value(a).data().iter().map(|x| x * c).collect();
        let shape = self.shape(a).to_vec();
        self.push("scale", Tensor::from_parts(shape, out), Op::Scale(a, c), &[a])
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        if self.value(a).numel() == 0 {
            return Err(Error::dim("relu of empty tensor"));
        }
        let out: Vec<f64> = self.value(a).data().iter().map(|x| x.max(0.0)).collect();
        let shape = self.shape(a).to_vec();
        self.push("relu", Tensor::from_parts(shape, out), Op::Relu(a), &[a])
    }

    /// Softmax over the trailing dimension.
    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let d = t.last_dim();
        if d == 0 || t.numel() == 0 {
            return Err(Error::dim("softmax over empty rows"));
        }
        let mut out = t.data().to_vec();
        for row in out.chunks_mut(d) {
            softmax_in_place(row);
        }
        let shape = t.shape().to_vec();
        self.push(
            "softmax_rows",
            Tensor::from_parts(shape, out),
            Op::SoftmaxRows(a),
            &[a],
        )
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(a).clone().reshape(shape)?;
        self.push("reshape", value, Op::Reshape(a), &[a])
    }

    // ---- structural ----------------------------------------------------

    /// Concatenate along the trailing dimension; leading dims must agree.
    pub fn concat_lastdim(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.is_empty() || sa.len() != sb.len() || sa[..sa.len() - 1] != sb[..sb.len() - 1] {
            return Err(Error::dim(format!("concat_lastdim {:?} and {:?}", sa, sb)));
        }
        let (da, db) = (*sa.last().unwrap(), *sb.last().unwrap());
        let rows = self.value(a).num_rows();
        let (va, vb) = (self.value(a).data(), self.value(b).data());
        let mut out = Vec::with_capacity(rows * (da + db));
        for r in 0..rows {
            out.extend_from_slice(&va[r * da..(r + 1) * da]);
            out.extend_from_slice(&vb[r * db..(r + 1) * db]);
        }
        let mut shape = sa;
        *shape.last_mut().unwrap() = da + db;
        self.push(
            "concat_lastdim",
            Tensor::from_parts(shape, out),
            Op::ConcatLast(a, b),
            &[a, b],
        )
    }

    /// Concatenate `[B, La, D]` and `[B, Lb, D]` along time.
    pub fn concat_time(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] || sa[2] != sb[2] {
            return Err(Error::dim(format!("concat_time {:?} and {:?}", sa, sb)));
        }
        let (batch, la, lb, d) = (sa[0], sa[1], sb[1], sa[2]);
        let (va, vb) = (self.value(a).data(), self.value(b).data());
        let mut out = Vec::with_capacity(batch * (la + lb) * d);
        for i in 0..batch {
            out.extend_from_slice(&va[i * la * d..(i + 1) * la * d]);
            out.extend_from_slice(&vb[i * lb * d..(i + 1) * lb * d]);
        }
        self.push(
            "concat_time",
            Tensor::from_parts(vec![batch, la + lb, d], out),
            Op::ConcatTime(a, b),
            &[a, b],
        )
    }

    /// Rows of `table` selected by `indices`: `[len(indices), D]`.
    pub fn gather_rows(&mut self, table: Var, indices: &[usize]) -> Result<Var> {
        let st = self.shape(table);
        if st.len() != 2 {
            return Err(Error::dim(format!("gather_rows from {:?}", st)));
        }
        let (n, d) = (st[0], st[1]);
        let src = self.value(table).data();
        let mut out = Vec::with_capacity(indices.len() * d);
        for &i in indices {
            if i >= n {
                return Err(Error::Index { index: i, size: n });
            }
            out.extend_from_slice(&src[i * d..(i + 1) * d]);
        }
        self.push(
            "gather_rows",
            Tensor::from_parts(vec![indices.len(), d], out),
            Op::GatherRows {
                table,
                indices: indices.to_vec(),
            },
            &[table],
        )
    }

    /// `x[b, t] + table[t]` for `x: [B, L, D]`, `table: [P, D]`, `L <= P`.
    pub fn add_time_embedding(&mut self, x: Var, table: Var) -> Result<Var> {
        let (sx, st) = (self.shape(x).to_vec(), self.shape(table).to_vec());
        if sx.len() != 3 || st.len() != 2 || st[1] != sx[2] || sx[1] > st[0] {
            return Err(Error::dim(format!(
                "add_time_embedding {:?} with table {:?}",
                sx, st
            )));
        }
        let (l, d) = (sx[1], sx[2]);
        let tab = self.value(table).data();
        let mut out = self.value(x).data().to_vec();
        for seq in out.chunks_mut(l * d) {
            for (o, t) in seq.iter_mut().zip(&tab[..l * d]) {
                *o += t;
            }
        }
        self.push(
            "add_time_embedding",
            Tensor::from_parts(sx, out),
            Op::AddTimeEmbedding { x, table },
            &[x, table],
        )
    }

    // ---- temporal ------------------------------------------------------

    /// Batched 1D cross-correlation.
    ///
    /// `x: [B, T, C_in]` (time-major), `w: [C_out, C_in, k]`, `b: [C_out]`.
    /// Output `[B, T', C_out]` with `T' = (T + 2 padding - k) / stride + 1`.
    pub fn conv1d(
        &mut self,
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        padding: usize,
    ) -> Result<Var> {
        let (sx, sw) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        if sx.len() != 3 || sw.len() != 3 || sw[1] != sx[2] {
            return Err(Error::dim(format!("conv1d x {:?} with kernel {:?}", sx, sw)));
        }
        let (batch, t_in, c_in) = (sx[0], sx[1], sx[2]);
        let (c_out, k) = (sw[0], sw[2]);
        if k == 0 || stride == 0 {
            return Err(Error::Parameter("conv1d needs k >= 1 and stride >= 1".into()));
        }
        if t_in + 2 * padding < k {
            return Err(Error::dim(format!(
                "conv1d output length < 1 (T={}, k={}, padding={})",
                t_in, k, padding
            )));
        }
        let t_out = (t_in + 2 * padding - k) / stride + 1;
        if let Some(b) = b {
            if self.shape(b) != [c_out] {
                return Err(Error::dim("conv1d bias shape"));
            }
        }
        let width = c_in * k;
        let xv = self.value(x).data();
        let mut cols = vec![0.0; batch * t_out * width];
        for bi in 0..batch {
            for t in 0..t_out {
                let row = &mut cols[(bi * t_out + t) * width..(bi * t_out + t + 1) * width];
                for kk in 0..k {
                    let src = (t * stride + kk) as isize - padding as isize;
                    if src < 0 || src as usize >= t_in {
                        continue;
                    }
                    let base = (bi * t_in + src as usize) * c_in;
                    for ci in 0..c_in {
                        row[ci * k + kk] = xv[base + ci];
                    }
                }
            }
        }
        let mut out = vec![0.0; batch * t_out * c_out];
        if let Some(b) = b {
            let bias = self.value(b).data();
            for row in out.chunks_mut(c_out) {
                row.copy_from_slice(bias);
            }
        }
        gemm(
            batch * t_out,
            width,
            c_out,
            &cols,
            false,
            self.value(w).data(),
            true,
            &mut out,
            b.is_some(),
        );
        let inputs: Vec<Var> = [Some(x), Some(w), b].into_iter().flatten().collect();
        self.push(
            "conv1d",
            Tensor::from_parts(vec![batch, t_out, c_out], out),
            Op::Conv1d {
                x,
                w,
                b,
                stride,
                padding,
                cols,
            },
            &inputs,
        )
    }

    /// Nearest-neighbour upsampling along time: `[B, T, C] -> [B, T*factor, C]`.
    pub fn nn_upsample(&mut self, x: Var, factor: usize) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        if sx.len() != 3 || factor == 0 || self.value(x).numel() == 0 {
            return Err(Error::dim(format!("nn_upsample {:?} by {}", sx, factor)));
        }
        let (batch, t, c) = (sx[0], sx[1], sx[2]);
        let xv = self.value(x).data();
        let mut out = Vec::with_capacity(batch * t * factor * c);
        for row in xv.chunks(c) {
            for _ in 0..factor {
                out.extend_from_slice(row);
            }
        }
        self.push(
            "nn_upsample",
            Tensor::from_parts(vec![batch, t * factor, c], out),
            Op::Upsample { x, factor },
            &[x],
        )
    }

    // ---- transformer ---------------------------------------------------

    /// Layer normalisation over the trailing dimension.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let d = self.value(x).last_dim();
        if self.shape(gain) != [d] || self.shape(bias) != [d] || d == 0 {
            return Err(Error::dim("layer_norm parameter shape"));
        }
        let xv = self.value(x).data();
        let (g, bv) = (self.value(gain).data(), self.value(bias).data());
        let rows = xv.len() / d;
        let mut xhat = vec![0.0; xv.len()];
        let mut rstd = vec![0.0; rows];
        let mut out = vec![0.0; xv.len()];
        for r in 0..rows {
            let row = &xv[r * d..(r + 1) * d];
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let rs = 1.0 / (var + eps).sqrt();
            rstd[r] = rs;
            for j in 0..d {
                let h = (row[j] - mean) * rs;
                xhat[r * d + j] = h;
                out[r * d + j] = h * g[j] + bv[j];
            }
        }
        let shape = self.shape(x).to_vec();
        self.push(
            "layer_norm",
            Tensor::from_parts(shape, out),
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            },
            &[x, gain, bias],
        )
    }

    /// Multi-head causal attention over `[B, L, D]` projections.
    ///
    /// Per head, row `i` attends to rows `j <= i` only:
    /// `softmax(q k^T / sqrt(d_head) + M) v` with `M_ij = -inf` for `j > i`.
    pub fn causal_attention(&mut self, q: Var, k: Var, v: Var, heads: usize) -> Result<Var> {
        let sq = self.shape(q).to_vec();
        if sq.len() != 3 || self.shape(k) != sq.as_slice() || self.shape(v) != sq.as_slice() {
            return Err(Error::dim(format!("causal_attention q {:?}", sq)));
        }
        let (batch, len, d) = (sq[0], sq[1], sq[2]);
        if heads == 0 || d % heads != 0 {
            return Err(Error::Parameter(format!(
                "model dim {} not divisible by {} heads",
                d, heads
            )));
        }
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let (qv, kv, vv) = (
            self.value(q).data(),
            self.value(k).data(),
            self.value(v).data(),
        );
        let mut probs = vec![0.0; batch * heads * len * len];
        let mut out = vec![0.0; batch * len * d];
        for b in 0..batch {
            for h in 0..heads {
                let off = h * dh;
                for i in 0..len {
                    let p = &mut probs[((b * heads + h) * len + i) * len..][..len];
                    let qi = &qv[(b * len + i) * d + off..][..dh];
                    for j in 0..=i {
                        let kj = &kv[(b * len + j) * d + off..][..dh];
                        p[j] = dot(qi, kj) * scale;
                    }
                    softmax_in_place(&mut p[..=i]);
                    let o = &mut out[(b * len + i) * d + off..][..dh];
                    for j in 0..=i {
                        let vj = &vv[(b * len + j) * d + off..][..dh];
                        let w = p[j];
                        for (oe, ve) in o.iter_mut().zip(vj) {
                            *oe += w * ve;
                        }
                    }
                }
            }
        }
        self.push(
            "causal_attention",
            Tensor::from_parts(sq, out),
            Op::CausalAttention {
                q,
                k,
                v,
                heads,
                probs,
            },
            &[q, k, v],
        )
    }

    // ---- gradient routing ----------------------------------------------

    /// Identity in the forward pass; blocks all gradient flow.
    pub fn stop_gradient(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).clone();
        self.nodes.push(Node {
            value,
            op: Op::StopGrad,
            requires_grad: false,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Forward value is exactly `quantized`; the backward pass copies the
    /// incoming gradient to `encoded` unchanged and gives `quantized` none.
    pub fn straight_through(&mut self, encoded: Var, quantized: Var) -> Result<Var> {
        self.same_shape("straight_through", encoded, quantized)?;
        let value = self.value(quantized).clone();
        self.push(
            "straight_through",
            value,
            Op::StraightThrough { encoded },
            &[encoded],
        )
    }

    // ---- reductions and losses -----------------------------------------

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).data().iter().sum();
        self.push("sum", Tensor::scalar(s), Op::Sum(a), &[a])
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let n = self.value(a).numel();
        if n == 0 {
            return Err(Error::dim("mean of empty tensor"));
        }
        let s = self.value(a).data().iter().sum::<f64>() / n as f64;
        self.push("mean", Tensor::scalar(s), Op::Mean(a), &[a])
    }

    /// Elementwise smooth-L1 with threshold `beta`, averaged over all elements.
    pub fn smooth_l1(&mut self, a: Var, b: Var, beta: f64) -> Result<Var> {
        if beta <= 0.0 || !beta.is_finite() {
            return Err(Error::Parameter(format!("smooth_l1 beta must be > 0, got {}", beta)));
        }
        self.same_shape("smooth_l1", a, b)?;
        let n = self.value(a).numel();
        if n == 0 {
            return Err(Error::dim("smooth_l1 of empty tensors"));
        }
        let total: f64 = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| smooth_l1_elem(x - y, beta))
            .sum();
        self.push(
            "smooth_l1",
            Tensor::scalar(total / n as f64),
            Op::SmoothL1 { a, b, beta },
            &[a, b],
        )
    }

    /// Mean of squared differences over all elements.
    pub fn mean_squared_error(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mean_squared_error", a, b)?;
        let n = self.value(a).numel();
        if n == 0 {
            return Err(Error::dim("mean_squared_error of empty tensors"));
        }
        let total: f64 = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| (x - y) * (x - y))
            .sum();
        self.push(
            "mean_squared_error",
            Tensor::scalar(total / n as f64),
            Op::MeanSquaredError(a, b),
            &[a, b],
        )
    }

    /// `-sum_t w_t log softmax(logits_t)[target_t]` over rows of `[N, K]` logits.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize], weights: &[f64]) -> Result<Var> {
        let sl = self.shape(logits).to_vec();
        if sl.len() != 2 {
            return Err(Error::dim(format!("cross_entropy logits {:?}", sl)));
        }
        let (n, k) = (sl[0], sl[1]);
        if targets.len() != n || weights.len() != n {
            return Err(Error::dim(format!(
                "cross_entropy: {} rows, {} targets, {} weights",
                n,
                targets.len(),
                weights.len()
            )));
        }
        if let Some(&t) = targets.iter().find(|&&t| t >= k) {
            return Err(Error::Index { index: t, size: k });
        }
        let mut probs = self.value(logits).data().to_vec();
        let mut loss = 0.0;
        for (r, row) in probs.chunks_mut(k).enumerate() {
            let lse = log_sum_exp(row);
            loss -= weights[r] * (row[targets[r]] - lse);
            softmax_in_place(row);
        }
        self.push(
            "cross_entropy",
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                weights: weights.to_vec(),
                probs,
            },
            &[logits],
        )
    }

    fn same_shape(&self, op: &str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::dim(format!(
                "{}: shapes {:?} and {:?} differ",
                op,
                self.shape(a),
                self.shape(b)
            )));
        }
        Ok(())
    }

    // ---- backward ------------------------------------------------------

    /// Reverse sweep from a scalar `loss`. Gradients are kept for leaves only.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if lv.numel() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                lv.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        if !self.nodes[loss.0].requires_grad {
            return Ok(Gradients { grads });
        }
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let g = match grads[idx].take() {
                Some(g) => g,
                None => continue,
            };
            self.backprop_node(node, &g, &mut grads);
            if matches!(node.op, Op::Leaf) {
                grads[idx] = Some(g);
            }
        }
        Ok(Gradients { grads })
    }

    fn accumulate<F: FnOnce(&mut [f64])>(&self, grads: &mut [Option<Vec<f64>>], v: Var, f: F) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        let n = self.nodes[v.0].value.numel();
        let buf = grads[v.0].get_or_insert_with(|| vec![0.0; n]);
        f(buf);
    }

    fn backprop_node(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        match &node.op {
            Op::Leaf | Op::StopGrad => {}
            Op::MatMul(a, b) => {
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                self.accumulate(grads, *a, |ga| gemm(m, n, k, g, false, bv, true, ga, true));
                self.accumulate(grads, *b, |gb| gemm(k, m, n, av, true, g, false, gb, true));
            }
            Op::Linear { x, w, b } => {
                let sw = self.shape(*w);
                let (din, dout) = (sw[0], sw[1]);
                let rows = g.len() / dout;
                let (xv, wv) = (self.value(*x).data(), self.value(*w).data());
                self.accumulate(grads, *x, |gx| gemm(rows, dout, din, g, false, wv, true, gx, true));
                self.accumulate(grads, *w, |gw| gemm(din, rows, dout, xv, true, g, false, gw, true));
                if let Some(b) = b {
                    self.accumulate(grads, *b, |gb| {
                        for row in g.chunks(dout) {
                            for (o, v) in gb.iter_mut().zip(row) {
                                *o += v;
                            }
                        }
                    });
                }
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, |ga| add_into(ga, g));
                self.accumulate(grads, *b, |gb| add_into(gb, g));
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, |ga| add_into(ga, g));
                self.accumulate(grads, *b, |gb| {
                    for (o, v) in gb.iter_mut().zip(g) {
                        *o -= v;
                    }
                });
            }
            Op::Scale(a, c) => {
                self.accumulate(grads, *a, |ga| {
                    for (o, v) in ga.iter_mut().zip(g) {
                        *o += c * v;
                    }
                });
            }
            Op::Relu(a) => {
                let av = self.value(*a).data();
                self.accumulate(grads, *a, |ga| {
                    for ((o, v), x) in ga.iter_mut().zip(g).zip(av) {
                        if *x > 0.0 {
                            *o += v;
                        }
                    }
                });
            }
            Op::SoftmaxRows(a) => {
                let y = node.value.data();
                let d = node.value.last_dim();
                self.accumulate(grads, *a, |ga| {
                    for ((go, gy), yr) in ga.chunks_mut(d).zip(g.chunks(d)).zip(y.chunks(d)) {
                        let s = dot(gy, yr);
                        for j in 0..d {
                            go[j] += yr[j] * (gy[j] - s);
                        }
                    }
                });
            }
            Op::Reshape(a) => self.accumulate(grads, *a, |ga| add_into(ga, g)),
            Op::ConcatLast(a, b) => {
                let (da, db) = (self.value(*a).last_dim(), self.value(*b).last_dim());
                self.accumulate(grads, *a, |ga| {
                    for (o, row) in ga.chunks_mut(da).zip(g.chunks(da + db)) {
                        add_into(o, &row[..da]);
                    }
                });
                self.accumulate(grads, *b, |gb| {
                    for (o, row) in gb.chunks_mut(db).zip(g.chunks(da + db)) {
                        add_into(o, &row[da..]);
                    }
                });
            }
            Op::ConcatTime(a, b) => {
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let (la, lb, d) = (sa[1], sb[1], sa[2]);
                let seq = (la + lb) * d;
                self.accumulate(grads, *a, |ga| {
                    for (o, s) in ga.chunks_mut(la * d).zip(g.chunks(seq)) {
                        add_into(o, &s[..la * d]);
                    }
                });
                self.accumulate(grads, *b, |gb| {
                    for (o, s) in gb.chunks_mut(lb * d).zip(g.chunks(seq)) {
                        add_into(o, &s[la * d..]);
                    }
                });
            }
            Op::GatherRows { table, indices } => {
                let d = self.value(*table).last_dim();
                self.accumulate(grads, *table, |gt| {
                    for (r, &i) in indices.iter().enumerate() {
                        add_into(&mut gt[i * d..(i + 1) * d], &g[r * d..(r + 1) * d]);
                    }
                });
            }
            Op::AddTimeEmbedding { x, table } => {
                let sx = self.shape(*x);
                let (l, d) = (sx[1], sx[2]);
                self.accumulate(grads, *x, |gx| add_into(gx, g));
                self.accumulate(grads, *table, |gt| {
                    for seq in g.chunks(l * d) {
                        add_into(&mut gt[..l * d], seq);
                    }
                });
            }
            Op::Conv1d {
                x,
                w,
                b,
                stride,
                padding,
                cols,
            } => {
                let sx = self.shape(*x);
                let (batch, t_in, c_in) = (sx[0], sx[1], sx[2]);
                let sw = self.shape(*w);
                let (c_out, k) = (sw[0], sw[2]);
                let width = c_in * k;
                let t_out = node.value.shape()[1];
                let rows = batch * t_out;
                self.accumulate(grads, *w, |gw| {
                    gemm(c_out, rows, width, g, true, cols, false, gw, true)
                });
                if let Some(b) = b {
                    self.accumulate(grads, *b, |gb| {
                        for row in g.chunks(c_out) {
                            add_into(gb, row);
                        }
                    });
                }
                if self.nodes[x.0].requires_grad {
                    let mut dcols = vec![0.0; rows * width];
                    gemm(rows, c_out, width, g, false, self.value(*w).data(), false, &mut dcols, false);
                    self.accumulate(grads, *x, |gx| {
                        for bi in 0..batch {
                            for t in 0..t_out {
                                let row = &dcols[(bi * t_out + t) * width..][..width];
                                for kk in 0..k {
                                    let src = (t * stride + kk) as isize - *padding as isize;
                                    if src < 0 || src as usize >= t_in {
                                        continue;
                                    }
                                    let base = (bi * t_in + src as usize) * c_in;
                                    for ci in 0..c_in {
                                        gx[base + ci] += row[ci * k + kk];
                                    }
                                }
                            }
                        }
                    });
                }
            }
            Op::Upsample { x, factor } => {
                let c = self.value(*x).last_dim();
                self.accumulate(grads, *x, |gx| {
                    for (o, block) in gx.chunks_mut(c).zip(g.chunks(c * factor)) {
                        for rep in block.chunks(c) {
                            add_into(o, rep);
                        }
                    }
                });
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            } => {
                let d = self.value(*x).last_dim();
                let gv = self.value(*gain).data();
                self.accumulate(grads, *gain, |gg| {
                    for (gr, hr) in g.chunks(d).zip(xhat.chunks(d)) {
                        for j in 0..d {
                            gg[j] += gr[j] * hr[j];
                        }
                    }
                });
                self.accumulate(grads, *bias, |gb| {
                    for gr in g.chunks(d) {
                        add_into(gb, gr);
                    }
                });
                self.accumulate(grads, *x, |gx| {
                    let mut dxhat = vec![0.0; d];
                    for (r, ((gxr, gr), hr)) in gx
                        .chunks_mut(d)
                        .zip(g.chunks(d))
                        .zip(xhat.chunks(d))
                        .enumerate()
                    {
                        for j in 0..d {
                            dxhat[j] = gr[j] * gv[j];
                        }
                        let m1 = dxhat.iter().sum::<f64>() / d as f64;
                        let m2 = dot(&dxhat, hr) / d as f64;
                        for j in 0..d {
                            gxr[j] += rstd[r] * (dxhat[j] - m1 - hr[j] * m2);
                        }
                    }
                });
            }
            Op::CausalAttention {
                q,
                k,
                v,
                heads,
                probs,
            } => {
                let sq = self.shape(*q);
                let (batch, len, d) = (sq[0], sq[1], sq[2]);
                let heads = *heads;
                let dh = d / heads;
                let scale = 1.0 / (dh as f64).sqrt();
                let (qv, kv, vv) = (
                    self.value(*q).data(),
                    self.value(*k).data(),
                    self.value(*v).data(),
                );
                let mut gq = vec![0.0; qv.len()];
                let mut gk = vec![0.0; kv.len()];
                let mut gv = vec![0.0; vv.len()];
                let mut dp = vec![0.0; len];
                for b in 0..batch {
                    for h in 0..heads {
                        let off = h * dh;
                        for i in 0..len {
                            let p = &probs[((b * heads + h) * len + i) * len..][..len];
                            let go = &g[(b * len + i) * d + off..][..dh];
                            for j in 0..=i {
                                let vj = &vv[(b * len + j) * d + off..][..dh];
                                dp[j] = dot(go, vj);
                                let gvj = &mut gv[(b * len + j) * d + off..][..dh];
                                for (o, x) in gvj.iter_mut().zip(go) {
                                    *o += p[j] * x;
                                }
                            }
                            let s: f64 = (0..=i).map(|j| p[j] * dp[j]).sum();
                            let qi = &qv[(b * len + i) * d + off..][..dh];
                            for j in 0..=i {
                                let ds = p[j] * (dp[j] - s) * scale;
                                if ds == 0.0 {
                                    continue;
                                }
                                let kj = &kv[(b * len + j) * d + off..][..dh];
                                let gqi = &mut gq[(b * len + i) * d + off..][..dh];
                                for (o, x) in gqi.iter_mut().zip(kj) {
                                    *o += ds * x;
                                }
                                let gkj = &mut gk[(b * len + j) * d + off..][..dh];
                                for (o, x) in gkj.iter_mut().zip(qi) {
                                    *o += ds * x;
                                }
                            }
                        }
                    }
                }
                self.accumulate(grads, *q, |o| add_into(o, &gq));
                self.accumulate(grads, *k, |o| add_into(o, &gk));
                self.accumulate(grads, *v, |o| add_into(o, &gv));
            }
            Op::StraightThrough { encoded } => {
                self.accumulate(grads, *encoded, |ge| add_into(ge, g));
            }
            Op::Sum(a) => {
                let s = g[0];
                self.accumulate(grads, *a, |ga| ga.iter_mut().for_each(|o| *o += s));
            }
            Op::Mean(a) => {
                let n = self.value(*a).numel() as f64;
                let s = g[0] / n;
                self.accumulate(grads, *a, |ga| ga.iter_mut().for_each(|o| *o += s));
            }
            Op::SmoothL1 { a, b, beta } => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                let scale = g[0] / av.len() as f64;
                let local: Vec<f64> = av
                    .iter()
                    .zip(bv)
                    .map(|(x, y)| {
                        let d = x - y;
                        if d.abs() < *beta {
                            d / beta
                        } else {
                            d.signum()
                        }
                    })
                    .collect();
                self.accumulate(grads, *a, |ga| {
                    for (o, l) in ga.iter_mut().zip(&local) {
                        *o += scale * l;
                    }
                });
                self.accumulate(grads, *b, |gb| {
                    for (o, l) in gb.iter_mut().zip(&local) {
                        *o -= scale * l;
                    }
                });
            }
            Op::MeanSquaredError(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                let scale = 2.0 * g[0] / av.len() as f64;
                self.accumulate(grads, *a, |ga| {
                    for ((o, x), y) in ga.iter_mut().zip(av).zip(bv) {
                        *o += scale * (x - y);
                    }
                });
                self.accumulate(grads, *b, |gb| {
                    for ((o, x), y) in gb.iter_mut().zip(av).zip(bv) {
                        *o -= scale * (x - y);
                    }
                });
            }
            Op::CrossEntropy {
                logits,
                targets,
                weights,
                probs,
            } => {
                let k = self.value(*logits).last_dim();
                let s = g[0];
                self.accumulate(grads, *logits, |gl| {
                    for (r, (o, p)) in gl.chunks_mut(k).zip(probs.chunks(k)).enumerate() {
                        let w = weights[r] * s;
                        if w == 0.0 {
                            continue;
                        }
                        for j in 0..k {
                            o[j] += w * p[j];
                        }
                        o[targets[r]] -= w;
                    }
                });
            }
        }
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (o, v) in dst.iter_mut().zip(src) {
        *o += v;
    }
}

fn smooth_l1_elem(d: f64, beta: f64) -> f64 {
    if d.abs() < beta {
        0.5 * d * d / beta
    } else {
        d.abs() - 0.5 * beta
    }
}

fn log_sum_exp(row: &[f64]) -> f64 {
    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    for v in row.iter_mut() {
        *v = (*v - m).exp();
        z += *v;
    }
    for v in row.iter_mut() {
        *v /= z;
    }
}
