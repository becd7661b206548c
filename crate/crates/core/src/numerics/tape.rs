//! Reverse-mode differentiation over a linear tape.
//!
//! Every forward op appends a node holding its value and whatever the
//! backward rule needs. A tape lives for one forward/backward pass and is
//! then dropped; nothing is reused between passes.

use rand::Rng;

use super::kernels::{axis_split, gemm};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

enum Op {
    Leaf,
    MatMul {
        a: Var,
        b: Var,
        trans_a: bool,
        trans_b: bool,
    },
    Add(Var, Var),
    Mul(Var, Var),
    AddBias {
        x: Var,
        bias: Var,
    },
    Scale {
        x: Var,
        factor: f64,
    },
    Relu(Var),
    Softmax {
        x: Var,
        axis: usize,
    },
    MaskedSoftmax {
        x: Var,
    },
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Concat {
        parts: Vec<Var>,
        axis: usize,
    },
    Narrow {
        x: Var,
        axis: usize,
        start: usize,
    },
    GatherRows {
        x: Var,
        ids: Vec<usize>,
    },
    Aggregate {
        x: Var,
        edges: Vec<(usize, usize, f64)>,
    },
    MulConst {
        x: Var,
        factor: Vec<f64>,
    },
    CrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        probs: Vec<f64>,
    },
    Sum(Var),
    Mean(Var),
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
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

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Gradient of the last `backward` target with respect to `v`; zeros when
    /// `v` did not influence it.
    pub fn grad(&self, v: Var) -> Tensor {
        let shape = self.shape(v).to_vec();
        match self.grads.get(v.0).and_then(|g| g.as_ref()) {
            Some(g) => Tensor::new(shape, g.clone()).expect("grad shape"),
            None => Tensor::zeros(&shape),
        }
    }

    fn matrix_dims(&self, v: Var, op: &'static str) -> Result<(usize, usize)> {
        match self.shape(v) {
            [r, c] => Ok((*r, *c)),
            s => Err(Error::shape(op, s, &[0, 0])),
        }
    }

    /// `op(a) · op(b)` with optional transposition of either operand.
    pub fn matmul_ext(&mut self, a: Var, b: Var, trans_a: bool, trans_b: bool) -> Result<Var> {
        let (ar, ac) = self.matrix_dims(a, "matmul")?;
        let (br, bc) = self.matrix_dims(b, "matmul")?;
        let k_a = if trans_a { ar } else { ac };
        let k_b = if trans_b { bc } else { br };
        if k_a != k_b {
            return Err(Error::shape("matmul", self.shape(a), self.shape(b)));
        }
        let m = if trans_a { ac } else { ar };
        let n = if trans_b { br } else { bc };
        let mut out = vec![0.0; m * n];
        gemm(
            self.value(a).data(),
            ar,
            ac,
            trans_a,
            self.value(b).data(),
            br,
            bc,
            trans_b,
            &mut out,
            false,
        );
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(
            Tensor::new(vec![m, n], out)?,
            Op::MatMul {
                a,
                b,
                trans_a,
                trans_b,
            },
            rg,
        ))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_ext(a, b, false, false)
    }

    /// `a · bᵀ`.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_ext(a, b, false, true)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(op, self.shape(a), self.shape(b)));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let va = self.value(a);
        let out: Vec<f64> = va
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x + y)
            .collect();
        let t = Tensor::new(va.shape().to_vec(), out)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(t, Op::Add(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let va = self.value(a);
        let out: Vec<f64> = va
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x * y)
            .collect();
        let t = Tensor::new(va.shape().to_vec(), out)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(t, Op::Mul(a, b), rg))
    }

    /// Adds a length-`d` vector to every row of a `[.. × d]` tensor.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let d = self.value(x).cols();
        if self.shape(bias) != [d] {
            return Err(Error::shape("add_bias", self.shape(x), self.shape(bias)));
        }
        let b = self.value(bias).data();
        let vx = self.value(x);
        let mut out = vx.data().to_vec();
        for row in out.chunks_mut(d) {
            for (o, bi) in row.iter_mut().zip(b) {
                *o += bi;
            }
        }
        let t = Tensor::new(vx.shape().to_vec(), out)?;
        let rg = self.rg(x) || self.rg(bias);
        Ok(self.push(t, Op::AddBias { x, bias }, rg))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let t = self.value(x).map(|v| v * factor);
        let rg = self.rg(x);
        self.push(t, Op::Scale { x, factor }, rg)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let t = self.value(x).map(|v| v.max(0.0));
        let rg = self.rg(x);
        self.push(t, Op::Relu(x), rg)
    }

    /// Softmax along `axis`, computed with max subtraction.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let vx = self.value(x);
        if axis >= vx.rank() {
            return Err(Error::Axis {
                axis,
                rank: vx.rank(),
            });
        }
        let (outer, len, inner) = axis_split(vx.shape(), axis);
        let src = vx.data();
        let mut out = vec![0.0; src.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |k: usize| o * len * inner + k * inner + i;
                let max = (0..len)
                    .map(|k| src[at(k)])
                    .fold(f64::NEG_INFINITY, f64::max);
                let mut z = 0.0;
                for k in 0..len {
                    let e = (src[at(k)] - max).exp();
                    out[at(k)] = e;
                    z += e;
                }
                for k in 0..len {
                    out[at(k)] /= z;
                }
            }
        }
        let t = Tensor::new(vx.shape().to_vec(), out)?;
        let rg = self.rg(x);
        Ok(self.push(t, Op::Softmax { x, axis }, rg))
    }

    /// Row-wise softmax of a 2-D tensor restricted to entries where `mask`
    /// (row-major, same extent) is set. Rows with no admissible entry are
    /// all zero.
    pub fn masked_softmax(&mut self, x: Var, mask: &[bool]) -> Result<Var> {
        let (r, c) = self.matrix_dims(x, "masked_softmax")?;
        if mask.len() != r * c {
            return Err(Error::shape("masked_softmax", &[r, c], &[mask.len()]));
        }
        let src = self.value(x).data();
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            let row = i * c..(i + 1) * c;
            let max = row
                .clone()
                .filter(|&k| mask[k])
                .map(|k| src[k])
                .fold(f64::NEG_INFINITY, f64::max);
            if max == f64::NEG_INFINITY {
                continue;
            }
            let mut z = 0.0;
            for k in row.clone().filter(|&k| mask[k]) {
                let e = (src[k] - max).exp();
                out[k] = e;
                z += e;
            }
            for k in row.filter(|&k| mask[k]) {
                out[k] /= z;
            }
        }
        let t = Tensor::new(vec![r, c], out)?;
        let rg = self.rg(x);
        Ok(self.push(t, Op::MaskedSoftmax { x }, rg))
    }

    /// Normalizes each row over the last axis, then applies `gamma`/`beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        if eps.partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater) {
            return Err(Error::invalid(format!(
                "layer_norm eps must be > 0, got {eps}"
            )));
        }
        let vx = self.value(x);
        let d = vx.cols();
        for p in [gamma, beta] {
            if self.shape(p) != [d] {
                return Err(Error::shape("layer_norm", vx.shape(), self.shape(p)));
            }
        }
        let g = self.value(gamma).data();
        let b = self.value(beta).data();
        let rows = vx.numel() / d;
        let mut xhat = vec![0.0; vx.numel()];
        let mut inv_std = vec![0.0; rows];
        let mut out = vec![0.0; vx.numel()];
        for (r, row) in vx.data().chunks(d).enumerate() {
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std[r] = is;
            for k in 0..d {
                let h = (row[k] - mean) * is;
                xhat[r * d + k] = h;
                out[r * d + k] = h * g[k] + b[k];
            }
        }
        let t = Tensor::new(vx.shape().to_vec(), out)?;
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        Ok(self.push(
            t,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            rg,
        ))
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::invalid("concat of zero tensors"))?;
        let base = self.shape(first).to_vec();
        if axis >= base.len() {
            return Err(Error::Axis {
                axis,
                rank: base.len(),
            });
        }
        let mut total = 0;
        for &p in parts {
            let s = self.shape(p);
            let compatible = s.len() == base.len()
                && s.iter()
                    .zip(&base)
                    .enumerate()
                    .all(|(k, (a, b))| k == axis || a == b);
            if !compatible {
                return Err(Error::shape("concat", &base, s));
            }
            total += s[axis];
        }
        let (outer, _, inner) = axis_split(&base, axis);
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &p in parts {
                let len = self.shape(p)[axis];
                let slab = len * inner;
                out.extend_from_slice(&self.value(p).data()[o * slab..(o + 1) * slab]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(
            Tensor::new(shape, out)?,
            Op::Concat {
                parts: parts.to_vec(),
                axis,
            },
            rg,
        ))
    }

    /// The sub-range `start..start+len` of `axis`.
    pub fn narrow(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(Error::Axis {
                axis,
                rank: shape.len(),
            });
        }
        if len == 0 || start + len > shape[axis] {
            return Err(Error::Index {
                what: "narrow range end",
                index: start + len,
                len: shape[axis],
            });
        }
        let (outer, full, inner) = axis_split(&shape, axis);
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let from = o * full * inner + start * inner;
            out.extend_from_slice(&src[from..from + len * inner]);
        }
        let mut new_shape = shape;
        new_shape[axis] = len;
        let rg = self.rg(x);
        Ok(self.push(
            Tensor::new(new_shape, out)?,
            Op::Narrow { x, axis, start },
            rg,
        ))
    }

    /// Rows of a 2-D tensor selected by index; repeats allowed.
    pub fn gather_rows(&mut self, x: Var, ids: &[usize]) -> Result<Var> {
        let (r, c) = self.matrix_dims(x, "gather_rows")?;
        if ids.is_empty() {
            return Err(Error::invalid("gather_rows with no ids"));
        }
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(ids.len() * c);
        for &i in ids {
            if i >= r {
                return Err(Error::Index {
                    what: "row",
                    index: i,
                    len: r,
                });
            }
            out.extend_from_slice(&src[i * c..(i + 1) * c]);
        }
        let rg = self.rg(x);
        Ok(self.push(
            Tensor::new(vec![ids.len(), c], out)?,
            Op::GatherRows {
                x,
                ids: ids.to_vec(),
            },
            rg,
        ))
    }

    /// Weighted scatter of rows: `out[dst] += w · x[src]` for each
    /// `(src, dst, w)`, with `out` of `n_out` rows.
    pub fn aggregate(
        &mut self,
        x: Var,
        edges: &[(usize, usize, f64)],
        n_out: usize,
    ) -> Result<Var> {
        let (r, c) = self.matrix_dims(x, "aggregate")?;
        let src = self.value(x).data();
        let mut out = vec![0.0; n_out * c];
        for &(s, d, w) in edges {
            if s >= r || d >= n_out {
                return Err(Error::Index {
                    what: "aggregate node",
                    index: s.max(d),
                    len: r.min(n_out),
                });
            }
            let dst = &mut out[d * c..(d + 1) * c];
            for (o, v) in dst.iter_mut().zip(&src[s * c..(s + 1) * c]) {
                *o += w * v;
            }
        }
        let rg = self.rg(x);
        Ok(self.push(
            Tensor::new(vec![n_out, c], out)?,
            Op::Aggregate {
                x,
                edges: edges.to_vec(),
            },
            rg,
        ))
    }

    /// Elementwise product with a constant array.
    pub fn mul_const(&mut self, x: Var, factor: Vec<f64>) -> Result<Var> {
        let vx = self.value(x);
        if factor.len() != vx.numel() {
            return Err(Error::shape("mul_const", vx.shape(), &[factor.len()]));
        }
        let out = vx.data().iter().zip(&factor).map(|(a, b)| a * b).collect();
        let t = Tensor::new(vx.shape().to_vec(), out)?;
        let rg = self.rg(x);
        Ok(self.push(t, Op::MulConst { x, factor }, rg))
    }

    /// Inverted dropout: in training, zeroes each entry with probability
    /// `rate` and scales survivors by `1/(1-rate)`. Identity otherwise.
    pub fn dropout<R: Rng + ?Sized>(
        &mut self,
        x: Var,
        rate: f64,
        training: bool,
        rng: &mut R,
    ) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::invalid(format!(
                "dropout rate {rate} outside [0, 1)"
            )));
        }
        if !training || rate == 0.0 {
            return Ok(x);
        }
        let keep = 1.0 - rate;
        let n = self.value(x).numel();
        let factor = (0..n)
            .map(|_| {
                if rng.gen::<f64>() < keep {
                    1.0 / keep
                } else {
                    0.0
                }
            })
            .collect();
        self.mul_const(x, factor)
    }

    /// Rows of `table` selected by `ids`.
    pub fn embedding_lookup(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        self.gather_rows(table, ids)
    }

    /// Mean over rows of `-log softmax(logits)[label]`.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let (n, m) = self.matrix_dims(logits, "cross_entropy")?;
        if labels.len() != n {
            return Err(Error::shape("cross_entropy", &[n, m], &[labels.len()]));
        }
        let src = self.value(logits).data();
        let mut probs = vec![0.0; n * m];
        let mut loss = 0.0;
        for (i, &y) in labels.iter().enumerate() {
            if y >= m {
                return Err(Error::Index {
                    what: "label",
                    index: y,
                    len: m,
                });
            }
            let row = &src[i * m..(i + 1) * m];
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = row.iter().map(|v| (v - max).exp()).sum();
            let lse = max + z.ln();
            loss += lse - row[y];
            for k in 0..m {
                probs[i * m + k] = (row[k] - lse).exp();
            }
        }
        let rg = self.rg(logits);
        Ok(self.push(
            Tensor::scalar(loss / n as f64),
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
            rg,
        ))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        let rg = self.rg(x);
        self.push(Tensor::scalar(s), Op::Sum(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let s = v.data().iter().sum::<f64>() / v.numel() as f64;
        let rg = self.rg(x);
        self.push(Tensor::scalar(s), Op::Mean(x), rg)
    }

    /// Populates gradients of `loss` with respect to every node that
    /// requires one. Gradients from multiple uses of a node add up.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).numel() != 1 {
            return Err(Error::shape(
                "backward (loss must be scalar)",
                self.shape(loss),
                &[1],
            ));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        for id in (0..=loss.0).rev() {
            if !self.nodes[id].requires_grad {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            self.backprop_node(id, &g, &mut grads);
            grads[id] = Some(g);
        }
        self.grads = grads;
        Ok(())
    }

    fn backprop_node(&self, id: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[id];
        let nodes = &self.nodes;
        match &node.op {
            Op::Leaf => {}
            &Op::MatMul {
                a,
                b,
                trans_a,
                trans_b,
            } => {
                let (m, n) = (node.value.shape()[0], node.value.shape()[1]);
                let va = &nodes[a.0].value;
                let vb = &nodes[b.0].value;
                let (ar, ac) = (va.shape()[0], va.shape()[1]);
                let (br, bc) = (vb.shape()[0], vb.shape()[1]);
                if let Some(ga) = slot(nodes, grads, a) {
                    if trans_a {
                        // dA = op(B) · dCᵀ
                        gemm(vb.data(), br, bc, trans_b, g, m, n, true, ga, true);
                    } else {
                        // dA = dC · op(B)ᵀ
                        gemm(g, m, n, false, vb.data(), br, bc, !trans_b, ga, true);
                    }
                }
                if let Some(gb) = slot(nodes, grads, b) {
                    if trans_b {
                        // dB = dCᵀ · op(A)
                        gemm(g, m, n, true, va.data(), ar, ac, trans_a, gb, true);
                    } else {
                        // dB = op(A)ᵀ · dC
                        gemm(va.data(), ar, ac, !trans_a, g, m, n, false, gb, true);
                    }
                }
            }
            &Op::Add(a, b) => {
                for v in [a, b] {
                    if let Some(gv) = slot(nodes, grads, v) {
                        add_into(gv, g);
                    }
                }
            }
            &Op::Mul(a, b) => {
                let (va, vb) = (nodes[a.0].value.data(), nodes[b.0].value.data());
                if let Some(ga) = slot(nodes, grads, a) {
                    for ((o, gi), bi) in ga.iter_mut().zip(g).zip(vb) {
                        *o += gi * bi;
                    }
                }
                if let Some(gb) = slot(nodes, grads, b) {
                    for ((o, gi), ai) in gb.iter_mut().zip(g).zip(va) {
                        *o += gi * ai;
                    }
                }
            }
            &Op::AddBias { x, bias } => {
                if let Some(gx) = slot(nodes, grads, x) {
                    add_into(gx, g);
                }
                if let Some(gb) = slot(nodes, grads, bias) {
                    let d = gb.len();
                    for row in g.chunks(d) {
                        add_into(gb, row);
                    }
                }
            }
            &Op::Scale { x, factor } => {
                if let Some(gx) = slot(nodes, grads, x) {
                    for (o, gi) in gx.iter_mut().zip(g) {
                        *o += factor * gi;
                    }
                }
            }
            &Op::Relu(x) => {
                let vx = nodes[x.0].value.data();
                if let Some(gx) = slot(nodes, grads, x) {
                    for ((o, gi), xi) in gx.iter_mut().zip(g).zip(vx) {
                        if *xi > 0.0 {
                            *o += gi;
                        }
                    }
                }
            }
            &Op::Softmax { x, axis } => {
                let y = node.value.data();
                let (outer, len, inner) = axis_split(node.value.shape(), axis);
                if let Some(gx) = slot(nodes, grads, x) {
                    for o in 0..outer {
                        for i in 0..inner {
                            let at = |k: usize| o * len * inner + k * inner + i;
                            let dot: f64 = (0..len).map(|k| y[at(k)] * g[at(k)]).sum();
                            for k in 0..len {
                                gx[at(k)] += y[at(k)] * (g[at(k)] - dot);
                            }
                        }
                    }
                }
            }
            &Op::MaskedSoftmax { x } => {
                let y = node.value.data();
                let c = node.value.cols();
                if let Some(gx) = slot(nodes, grads, x) {
                    for ((yr, gr), or) in y.chunks(c).zip(g.chunks(c)).zip(gx.chunks_mut(c)) {
                        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for k in 0..c {
                            or[k] += yr[k] * (gr[k] - dot);
                        }
                    }
                }
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let d = node.value.cols();
                let gam = nodes[gamma.0].value.data();
                if let Some(gg) = slot(nodes, grads, *gamma) {
                    for (gr, hr) in g.chunks(d).zip(xhat.chunks(d)) {
                        for k in 0..d {
                            gg[k] += gr[k] * hr[k];
                        }
                    }
                }
                if let Some(gb) = slot(nodes, grads, *beta) {
                    for gr in g.chunks(d) {
                        add_into(gb, gr);
                    }
                }
                if let Some(gx) = slot(nodes, grads, *x) {
                    let mut dh = vec![0.0; d];
                    for (r, ((gr, hr), or)) in g
                        .chunks(d)
                        .zip(xhat.chunks(d))
                        .zip(gx.chunks_mut(d))
                        .enumerate()
                    {
                        for k in 0..d {
                            dh[k] = gr[k] * gam[k];
                        }
                        let sum_dh: f64 = dh.iter().sum();
                        let sum_dh_h: f64 = dh.iter().zip(hr).map(|(a, b)| a * b).sum();
                        let s = inv_std[r] / d as f64;
                        for k in 0..d {
                            or[k] += s * (d as f64 * dh[k] - sum_dh - hr[k] * sum_dh_h);
                        }
                    }
                }
            }
            Op::Concat { parts, axis } => {
                let (outer, total, inner) = axis_split(node.value.shape(), *axis);
                let mut offset = 0;
                for &p in parts {
                    let len = nodes[p.0].value.shape()[*axis];
                    if let Some(gp) = slot(nodes, grads, p) {
                        for o in 0..outer {
                            let from = o * total * inner + offset * inner;
                            let to = o * len * inner;
                            add_into(&mut gp[to..to + len * inner], &g[from..from + len * inner]);
                        }
                    }
                    offset += len;
                }
            }
            &Op::Narrow { x, axis, start } => {
                let full = nodes[x.0].value.shape()[axis];
                let (outer, len, inner) = axis_split(node.value.shape(), axis);
                if let Some(gx) = slot(nodes, grads, x) {
                    for o in 0..outer {
                        let to = o * full * inner + start * inner;
                        let from = o * len * inner;
                        add_into(&mut gx[to..to + len * inner], &g[from..from + len * inner]);
                    }
                }
            }
            Op::GatherRows { x, ids } => {
                let c = node.value.cols();
                if let Some(gx) = slot(nodes, grads, *x) {
                    for (k, &i) in ids.iter().enumerate() {
                        add_into(&mut gx[i * c..(i + 1) * c], &g[k * c..(k + 1) * c]);
                    }
                }
            }
            Op::Aggregate { x, edges } => {
                let c = node.value.cols();
                if let Some(gx) = slot(nodes, grads, *x) {
                    for &(s, d, w) in edges {
                        let dst = &mut gx[s * c..(s + 1) * c];
                        for (o, gi) in dst.iter_mut().zip(&g[d * c..(d + 1) * c]) {
                            *o += w * gi;
                        }
                    }
                }
            }
            Op::MulConst { x, factor } => {
                if let Some(gx) = slot(nodes, grads, *x) {
                    for ((o, gi), f) in gx.iter_mut().zip(g).zip(factor) {
                        *o += gi * f;
                    }
                }
            }
            Op::CrossEntropy {
                logits,
                labels,
                probs,
            } => {
                let n = labels.len();
                let m = probs.len() / n;
                let s = g[0] / n as f64;
                if let Some(gl) = slot(nodes, grads, *logits) {
                    for (i, &y) in labels.iter().enumerate() {
                        for k in 0..m {
                            let target = if k == y { 1.0 } else { 0.0 };
                            gl[i * m + k] += s * (probs[i * m + k] - target);
                        }
                    }
                }
            }
            &Op::Sum(x) => {
                if let Some(gx) = slot(nodes, grads, x) {
                    gx.iter_mut().for_each(|o| *o += g[0]);
                }
            }
            &Op::Mean(x) => {
                if let Some(gx) = slot(nodes, grads, x) {
                    let s = g[0] / gx.len() as f64;
                    gx.iter_mut().for_each(|o| *o += s);
                }
            }
        }
    }
}

fn slot<'g>(nodes: &[Node], grads: &'g mut [Option<Vec<f64>>], v: Var) -> Option<&'g mut Vec<f64>> {
    if !nodes[v.0].requires_grad {
        return None;
    }
    let n = nodes[v.0].value.numel();
    Some(grads[v.0].get_or_insert_with(|| vec![0.0; n]))
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}
