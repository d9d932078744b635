use std::collections::HashMap;

use rand::Rng;

use crate::error::{Error, Result};

use super::kernels::{layer_norm_row, masked_softmax_row, matmul_nn, matmul_nt, matmul_tn};
use super::{Gradients, ParamId, ParamStore, Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

#[derive(Debug)]
enum Op<F> {
    Leaf,
    MatMul {
        a: NodeId,
        b: NodeId,
    },
    Linear {
        x: NodeId,
        w: NodeId,
        b: Option<NodeId>,
    },
    Bmm {
        a: NodeId,
        b: NodeId,
        trans_b: bool,
    },
    Add {
        a: NodeId,
        b: NodeId,
    },
    Mul {
        a: NodeId,
        b: NodeId,
    },
    Scale {
        a: NodeId,
        s: F,
    },
    Relu {
        a: NodeId,
    },
    Softmax {
        a: NodeId,
        axis: usize,
    },
    MaskedSoftmax {
        a: NodeId,
    },
    LayerNorm {
        x: NodeId,
        gain: NodeId,
        bias: NodeId,
        xhat: Vec<F>,
        rstd: Vec<F>,
    },
    Dropout {
        a: NodeId,
        keep: Vec<F>,
    },
    SplitHeads {
        a: NodeId,
        heads: usize,
    },
    MergeHeads {
        a: NodeId,
        heads: usize,
    },
    Embedding {
        table: NodeId,
        ids: Vec<usize>,
        scale: F,
    },
    CrossEntropy {
        logits: NodeId,
        targets: Vec<usize>,
        ignore: usize,
        probs: Vec<F>,
        count: usize,
    },
    Sum {
        a: NodeId,
    },
    Reshape {
        a: NodeId,
    },
}

#[derive(Debug)]
struct Node<F> {
    tensor: Tensor<F>,
    op: Op<F>,
}

/// Records operations in execution order; `backward` replays their rules in
/// reverse. Node ids are indices, so every input precedes its consumers.
#[derive(Debug, Default)]
pub struct Tape<F> {
    nodes: Vec<Node<F>>,
    params: HashMap<ParamId, NodeId>,
}

fn dim_err(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Error {
    Error::Dimension {
        op,
        lhs: lhs.to_vec(),
        rhs: rhs.to_vec(),
    }
}

impl<F: Scalar> Tape<F> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            params: HashMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, mut tensor: Tensor<F>, op: Op<F>, inputs: &[NodeId]) -> NodeId {
        if !matches!(op, Op::Leaf) {
            tensor.requires_grad = inputs.iter().any(|i| self.nodes[i.0].tensor.requires_grad);
        }
        self.nodes.push(Node { tensor, op });
        NodeId(self.nodes.len() - 1)
    }

    fn out(&self, shape: &[usize], values: Vec<F>) -> Tensor<F> {
        Tensor {
            shape: shape.to_vec(),
            values,
            requires_grad: false,
            grad: None,
        }
    }

    /// Records a leaf. Gradients flow into it iff `tensor.requires_grad()`.
    pub fn leaf(&mut self, tensor: Tensor<F>) -> NodeId {
        self.push(tensor, Op::Leaf, &[])
    }

    pub fn constant(&mut self, shape: &[usize], values: Vec<F>) -> Result<NodeId> {
        Ok(self.leaf(Tensor::new(shape, values)?))
    }

    /// Registers a trainable parameter; repeated calls return the same node.
    pub fn param(&mut self, store: &ParamStore<F>, id: ParamId) -> NodeId {
        if let Some(&n) = self.params.get(&id) {
            return n;
        }
        let t = Tensor {
            shape: store.shape(id).to_vec(),
            values: store.values(id).to_vec(),
            requires_grad: true,
            grad: None,
        };
        let n = self.leaf(t);
        self.params.insert(id, n);
        n
    }

    pub fn value(&self, id: NodeId) -> &Tensor<F> {
        &self.nodes[id.0].tensor
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        &self.nodes[id.0].tensor.shape
    }

    pub fn values(&self, id: NodeId) -> &[F] {
        &self.nodes[id.0].tensor.values
    }

    pub fn grad(&self, id: NodeId) -> Option<&[F]> {
        self.nodes[id.0].tensor.grad()
    }

    /// Plain 2-D product `[m,k]·[k,n]`.
    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(dim_err("matmul", &sa, &sb));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut c = vec![F::zero(); m * n];
        matmul_nn(self.values(a), self.values(b), &mut c, m, k, n, false);
        let t = self.out(&[m, n], c);
        Ok(self.push(t, Op::MatMul { a, b }, &[a, b]))
    }

    /// `x[..., k]·w[k, n] + b[n]`, leading axes flattened into rows.
    pub fn linear(&mut self, x: NodeId, w: NodeId, b: Option<NodeId>) -> Result<NodeId> {
        let sx = self.shape(x).to_vec();
        let sw = self.shape(w).to_vec();
        let k = *sx.last().unwrap();
        if sw.len() != 2 || sw[0] != k {
            return Err(dim_err("linear", &sx, &sw));
        }
        let n = sw[1];
        if let Some(b) = b {
            if self.shape(b) != [n] {
                return Err(dim_err("linear bias", &sw, self.shape(b)));
            }
        }
        let rows = self.value(x).numel() / k;
        let mut c = vec![F::zero(); rows * n];
        if let Some(b) = b {
            let bv = self.values(b);
            for r in 0..rows {
                c[r * n..(r + 1) * n].copy_from_slice(bv);
            }
        }
        matmul_nn(self.values(x), self.values(w), &mut c, rows, k, n, b.is_some());
        let mut shape = sx.clone();
        *shape.last_mut().unwrap() = n;
        let t = self.out(&shape, c);
        let mut inputs = vec![x, w];
        inputs.extend(b);
        Ok(self.push(t, Op::Linear { x, w, b }, &inputs))
    }

    /// Batched product `[B,m,k]·[B,k,n]`, or `[B,m,k]·[B,n,k]ᵀ` when `trans_b`.
    pub fn bmm(&mut self, a: NodeId, b: NodeId, trans_b: bool) -> Result<NodeId> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let ok = sa.len() == 3
            && sb.len() == 3
            && sa[0] == sb[0]
            && if trans_b { sa[2] == sb[2] } else { sa[2] == sb[1] };
        if !ok {
            return Err(dim_err("bmm", &sa, &sb));
        }
        let (bs, m, k) = (sa[0], sa[1], sa[2]);
        let n = if trans_b { sb[1] } else { sb[2] };
        let mut c = vec![F::zero(); bs * m * n];
        let (av, bv) = (self.values(a), self.values(b));
        for i in 0..bs {
            let ab = &av[i * m * k..(i + 1) * m * k];
            let bb = &bv[i * k * n..(i + 1) * k * n];
            let cb = &mut c[i * m * n..(i + 1) * m * n];
            if trans_b {
                matmul_nt(ab, bb, cb, m, k, n, false);
            } else {
                matmul_nn(ab, bb, cb, m, k, n, false);
            }
        }
        let t = self.out(&[bs, m, n], c);
        Ok(self.push(t, Op::Bmm { a, b, trans_b }, &[a, b]))
    }

    fn same_shape(&self, op: &'static str, a: NodeId, b: NodeId) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(dim_err(op, self.shape(a), self.shape(b)));
        }
        Ok(())
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape("add", a, b)?;
        let v = self
            .values(a)
            .iter()
            .zip(self.values(b))
            .map(|(&x, &y)| x + y)
            .collect();
        let t = self.out(self.shape(a), v);
        Ok(self.push(t, Op::Add { a, b }, &[a, b]))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape("mul", a, b)?;
        let v = self
            .values(a)
            .iter()
            .zip(self.values(b))
            .map(|(&x, &y)| x * y)
            .collect();
        let t = self.out(self.shape(a), v);
        Ok(self.push(t, Op::Mul { a, b }, &[a, b]))
    }

    pub fn scale(&mut self, a: NodeId, s: F) -> NodeId {
        let v = self.values(a).iter().map(|&x| x * s).collect();
        let t = self.out(self.shape(a), v);
        self.push(t, Op::Scale { a, s }, &[a])
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let v = self.values(a).iter().map(|&x| x.max(F::zero())).collect();
        let t = self.out(self.shape(a), v);
        self.push(t, Op::Relu { a }, &[a])
    }

    /// Softmax along `axis` with max subtraction.
    pub fn softmax(&mut self, a: NodeId, axis: usize) -> Result<NodeId> {
        let shape = self.shape(a).to_vec();
        if axis >= shape.len() {
            return Err(Error::Contract(format!(
                "softmax axis {axis} out of range for shape {shape:?}"
            )));
        }
        let (outer, n, inner) = split_axis(&shape, axis);
        let src = self.values(a);
        let mut v = vec![F::zero(); src.len()];
        let mut row = vec![F::zero(); n];
        for o in 0..outer {
            for j in 0..inner {
                for i in 0..n {
                    row[i] = src[(o * n + i) * inner + j];
                }
                masked_softmax_row(&mut row, None);
                for i in 0..n {
                    v[(o * n + i) * inner + j] = row[i];
                }
            }
        }
        let t = self.out(&shape, v);
        Ok(self.push(t, Op::Softmax { a, axis }, &[a]))
    }

    /// Softmax over the last axis of a `[B·H, Lq, Lk]` score tensor. `allowed`
    /// has shape `[B, Lq, Lk]` and is shared by the `heads` consecutive slices
    /// of each batch item. Rows with no allowed key produce zeros.
    pub fn masked_softmax(&mut self, a: NodeId, allowed: &[bool], heads: usize) -> Result<NodeId> {
        let shape = self.shape(a).to_vec();
        if shape.len() != 3 || heads == 0 || !shape[0].is_multiple_of(heads) {
            return Err(dim_err("masked_softmax", &shape, &[heads]));
        }
        let (bh, lq, lk) = (shape[0], shape[1], shape[2]);
        if allowed.len() != bh / heads * lq * lk {
            return Err(dim_err("masked_softmax mask", &shape, &[allowed.len()]));
        }
        let mut v = self.values(a).to_vec();
        for s in 0..bh {
            let b = s / heads;
            for q in 0..lq {
                let row = &mut v[(s * lq + q) * lk..(s * lq + q + 1) * lk];
                let m = &allowed[(b * lq + q) * lk..(b * lq + q + 1) * lk];
                masked_softmax_row(row, Some(m));
            }
        }
        let t = self.out(&shape, v);
        Ok(self.push(t, Op::MaskedSoftmax { a }, &[a]))
    }

    /// Layer normalization over the last axis.
    pub fn layer_norm(&mut self, x: NodeId, gain: NodeId, bias: NodeId, eps: F) -> Result<NodeId> {
        let shape = self.shape(x).to_vec();
        let d = *shape.last().unwrap();
        if self.shape(gain) != [d] || self.shape(bias) != [d] {
            return Err(dim_err("layer_norm", &shape, self.shape(gain)));
        }
        let rows = self.value(x).numel() / d;
        let mut out = vec![F::zero(); rows * d];
        let mut xhat = vec![F::zero(); rows * d];
        let mut rstd = vec![F::zero(); rows];
        {
            let (xv, gv, bv) = (self.values(x), self.values(gain), self.values(bias));
            for r in 0..rows {
                let span = r * d..(r + 1) * d;
                rstd[r] = layer_norm_row(
                    &xv[span.clone()],
                    gv,
                    bv,
                    eps,
                    &mut out[span.clone()],
                    Some(&mut xhat[span]),
                );
            }
        }
        let t = self.out(&shape, out);
        Ok(self.push(
            t,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            },
            &[x, gain, bias],
        ))
    }

    /// Inverted dropout: zero with probability `p`, scale survivors by
    /// `1/(1-p)`. Identity (no node recorded) when `p == 0`.
    pub fn dropout<R: Rng + ?Sized>(&mut self, a: NodeId, p: f64, rng: &mut R) -> Result<NodeId> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::Contract(format!("dropout rate {p} outside [0,1)")));
        }
        if p == 0.0 {
            return Ok(a);
        }
        let scale = F::of(1.0 / (1.0 - p));
        let keep: Vec<F> = (0..self.value(a).numel())
            .map(|_| {
                if rng.random::<f64>() < p {
                    F::zero()
                } else {
                    scale
                }
            })
            .collect();
        let v = self
            .values(a)
            .iter()
            .zip(&keep)
            .map(|(&x, &k)| x * k)
            .collect();
        let t = self.out(self.shape(a), v);
        Ok(self.push(t, Op::Dropout { a, keep }, &[a]))
    }

    /// `[B, L, H·dh] → [B·H, L, dh]`.
    pub fn split_heads(&mut self, a: NodeId, heads: usize) -> Result<NodeId> {
        let s = self.shape(a).to_vec();
        if s.len() != 3 || heads == 0 || !s[2].is_multiple_of(heads) {
            return Err(dim_err("split_heads", &s, &[heads]));
        }
        let (b, l, d) = (s[0], s[1], s[2]);
        let dh = d / heads;
        let src = self.values(a);
        let mut v = vec![F::zero(); src.len()];
        for bi in 0..b {
            for h in 0..heads {
                for li in 0..l {
                    let dst = ((bi * heads + h) * l + li) * dh;
                    let from = (bi * l + li) * d + h * dh;
                    v[dst..dst + dh].copy_from_slice(&src[from..from + dh]);
                }
            }
        }
        let t = self.out(&[b * heads, l, dh], v);
        Ok(self.push(t, Op::SplitHeads { a, heads }, &[a]))
    }

    /// `[B·H, L, dh] → [B, L, H·dh]`.
    pub fn merge_heads(&mut self, a: NodeId, heads: usize) -> Result<NodeId> {
        let s = self.shape(a).to_vec();
        if s.len() != 3 || heads == 0 || !s[0].is_multiple_of(heads) {
            return Err(dim_err("merge_heads", &s, &[heads]));
        }
        let (bh, l, dh) = (s[0], s[1], s[2]);
        let b = bh / heads;
        let d = dh * heads;
        let src = self.values(a);
        let mut v = vec![F::zero(); src.len()];
        for bi in 0..b {
            for h in 0..heads {
                for li in 0..l {
                    let from = ((bi * heads + h) * l + li) * dh;
                    let dst = (bi * l + li) * d + h * dh;
                    v[dst..dst + dh].copy_from_slice(&src[from..from + dh]);
                }
            }
        }
        let t = self.out(&[b, l, d], v);
        Ok(self.push(t, Op::MergeHeads { a, heads }, &[a]))
    }

    /// Row lookup `table[ids[i]] · scale`, output shaped `lead ++ [d]`.
    pub fn embedding(&mut self, table: NodeId, ids: &[usize], lead: &[usize], scale: F) -> Result<NodeId> {
        let st = self.shape(table).to_vec();
        if st.len() != 2 {
            return Err(dim_err("embedding", &st, lead));
        }
        let (vocab, d) = (st[0], st[1]);
        if lead.iter().product::<usize>() != ids.len() {
            return Err(dim_err("embedding ids", lead, &[ids.len()]));
        }
        let tv = self.values(table);
        let mut v = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            if id >= vocab {
                return Err(Error::Index {
                    index: id,
                    extent: vocab,
                });
            }
            v.extend(tv[id * d..(id + 1) * d].iter().map(|&x| x * scale));
        }
        let mut shape = lead.to_vec();
        shape.push(d);
        super::check_shape(&shape)?;
        let t = self.out(&shape, v);
        Ok(self.push(
            t,
            Op::Embedding {
                table,
                ids: ids.to_vec(),
                scale,
            },
            &[table],
        ))
    }

    /// Mean negative log-likelihood of `targets` under row-wise softmax of
    /// `logits` (`[..., V]`), skipping rows whose target equals `ignore`.
    /// Returns 0 with zero gradient when every row is ignored.
    pub fn cross_entropy(&mut self, logits: NodeId, targets: &[usize], ignore: usize) -> Result<NodeId> {
        let shape = self.shape(logits).to_vec();
        let v = *shape.last().unwrap();
        let rows = self.value(logits).numel() / v;
        if rows != targets.len() {
            return Err(dim_err("cross_entropy", &shape, &[targets.len()]));
        }
        let lv = self.values(logits);
        let mut probs = lv.to_vec();
        let mut total = F::zero();
        let mut count = 0;
        for r in 0..rows {
            let row = &mut probs[r * v..(r + 1) * v];
            masked_softmax_row(row, None);
            let t = targets[r];
            if t == ignore {
                continue;
            }
            if t >= v {
                return Err(Error::Index { index: t, extent: v });
            }
            let src = &lv[r * v..(r + 1) * v];
            let max = src.iter().copied().fold(F::neg_infinity(), F::max);
            let lse = src.iter().map(|&x| (x - max).exp()).sum::<F>().ln() + max;
            total += lse - src[t];
            count += 1;
        }
        let loss = if count == 0 {
            F::zero()
        } else {
            total / F::of(count as f64)
        };
        let t = self.out(&[1], vec![loss]);
        Ok(self.push(
            t,
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                ignore,
                probs,
                count,
            },
            &[logits],
        ))
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let s = self.values(a).iter().copied().sum();
        let t = self.out(&[1], vec![s]);
        self.push(t, Op::Sum { a }, &[a])
    }

    pub fn reshape(&mut self, a: NodeId, shape: &[usize]) -> Result<NodeId> {
        let n = super::check_shape(shape)?;
        if n != self.value(a).numel() {
            return Err(dim_err("reshape", self.shape(a), shape));
        }
        let t = self.out(shape, self.values(a).to_vec());
        Ok(self.push(t, Op::Reshape { a }, &[a]))
    }

    /// Propagates d`loss`/d· to every node that requires a gradient and is
    /// reachable from `loss`. Fan-out contributions are summed.
    pub fn backward(&mut self, loss: NodeId) -> Result<()> {
        if self.value(loss).numel() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<F>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![F::one()]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].tensor.requires_grad {
                continue;
            }
            self.backward_node(i, &g, &mut grads);
            self.nodes[i].tensor.set_grad(g);
        }
        Ok(())
    }

    fn backward_node(&self, i: usize, g: &[F], grads: &mut [Option<Vec<F>>]) {
        let nodes = &self.nodes;
        let val = |id: NodeId| nodes[id.0].tensor.values.as_slice();
        let needs = |id: NodeId| nodes[id.0].tensor.requires_grad;
        let mut acc = |id: NodeId, f: &mut dyn FnMut(&mut [F])| {
            if !needs(id) {
                return;
            }
            let slot = grads[id.0].get_or_insert_with(|| vec![F::zero(); nodes[id.0].tensor.values.len()]);
            f(slot);
        };
        let shape = &nodes[i].tensor.shape;
        match &nodes[i].op {
            Op::Leaf => {}
            Op::MatMul { a, b } => {
                let (m, k) = (nodes[a.0].tensor.shape[0], nodes[a.0].tensor.shape[1]);
                let n = nodes[b.0].tensor.shape[1];
                acc(*a, &mut |s| matmul_nt(g, val(*b), s, m, n, k, true));
                acc(*b, &mut |s| matmul_tn(val(*a), g, s, k, m, n, true));
            }
            Op::Linear { x, w, b } => {
                let k = nodes[w.0].tensor.shape[0];
                let n = nodes[w.0].tensor.shape[1];
                let rows = g.len() / n;
                acc(*x, &mut |s| matmul_nt(g, val(*w), s, rows, n, k, true));
                acc(*w, &mut |s| matmul_tn(val(*x), g, s, k, rows, n, true));
                if let Some(b) = b {
                    acc(*b, &mut |s| {
                        for r in 0..rows {
                            for j in 0..n {
                                s[j] += g[r * n + j];
                            }
                        }
                    });
                }
            }
            Op::Bmm { a, b, trans_b } => {
                let sa = &nodes[a.0].tensor.shape;
                let (bs, m, k) = (sa[0], sa[1], sa[2]);
                let n = shape[2];
                let (av, bv) = (val(*a), val(*b));
                acc(*a, &mut |s| {
                    for i in 0..bs {
                        let gb = &g[i * m * n..(i + 1) * m * n];
                        let bb = &bv[i * k * n..(i + 1) * k * n];
                        let sb = &mut s[i * m * k..(i + 1) * m * k];
                        if *trans_b {
                            matmul_nn(gb, bb, sb, m, n, k, true);
                        } else {
                            matmul_nt(gb, bb, sb, m, n, k, true);
                        }
                    }
                });
                acc(*b, &mut |s| {
                    for i in 0..bs {
                        let gb = &g[i * m * n..(i + 1) * m * n];
                        let ab = &av[i * m * k..(i + 1) * m * k];
                        let sb = &mut s[i * k * n..(i + 1) * k * n];
                        if *trans_b {
                            matmul_tn(gb, ab, sb, n, m, k, true);
                        } else {
                            matmul_tn(ab, gb, sb, k, m, n, true);
                        }
                    }
                });
            }
            Op::Add { a, b } => {
                acc(*a, &mut |s| s.iter_mut().zip(g).for_each(|(x, &y)| *x += y));
                acc(*b, &mut |s| s.iter_mut().zip(g).for_each(|(x, &y)| *x += y));
            }
            Op::Mul { a, b } => {
                let (av, bv) = (val(*a), val(*b));
                acc(*a, &mut |s| {
                    for j in 0..s.len() {
                        s[j] += g[j] * bv[j];
                    }
                });
                acc(*b, &mut |s| {
                    for j in 0..s.len() {
                        s[j] += g[j] * av[j];
                    }
                });
            }
            Op::Scale { a, s: k } => {
                acc(*a, &mut |s| s.iter_mut().zip(g).for_each(|(x, &y)| *x += y * *k));
            }
            Op::Relu { a } => {
                let av = val(*a);
                acc(*a, &mut |s| {
                    for j in 0..s.len() {
                        if av[j] > F::zero() {
                            s[j] += g[j];
                        }
                    }
                });
            }
            Op::Softmax { a, axis } => {
                let y = &nodes[i].tensor.values;
                let (outer, n, inner) = split_axis(shape, *axis);
                acc(*a, &mut |s| {
                    for o in 0..outer {
                        for j in 0..inner {
                            let idx = |t: usize| (o * n + t) * inner + j;
                            let dot: F = (0..n).map(|t| y[idx(t)] * g[idx(t)]).sum();
                            for t in 0..n {
                                s[idx(t)] += y[idx(t)] * (g[idx(t)] - dot);
                            }
                        }
                    }
                });
            }
            Op::MaskedSoftmax { a } => {
                let y = &nodes[i].tensor.values;
                let lk = shape[2];
                acc(*a, &mut |s| {
                    for r in 0..y.len() / lk {
                        let span = r * lk..(r + 1) * lk;
                        let (yr, gr) = (&y[span.clone()], &g[span.clone()]);
                        let dot: F = yr.iter().zip(gr).map(|(&p, &q)| p * q).sum();
                        for (t, sv) in s[span].iter_mut().enumerate() {
                            *sv += yr[t] * (gr[t] - dot);
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
                let d = *shape.last().unwrap();
                let rows = g.len() / d;
                let gv = val(*gain);
                let dn = F::of(d as f64);
                acc(*x, &mut |s| {
                    for r in 0..rows {
                        let span = r * d..(r + 1) * d;
                        let (gr, xr) = (&g[span.clone()], &xhat[span.clone()]);
                        let mut m1 = F::zero();
                        let mut m2 = F::zero();
                        for j in 0..d {
                            let dxh = gr[j] * gv[j];
                            m1 += dxh;
                            m2 += dxh * xr[j];
                        }
                        m1 /= dn;
                        m2 /= dn;
                        for (j, sv) in s[span].iter_mut().enumerate() {
                            *sv += rstd[r] * (gr[j] * gv[j] - m1 - xr[j] * m2);
                        }
                    }
                });
                acc(*gain, &mut |s| {
                    for r in 0..rows {
                        for j in 0..d {
                            s[j] += g[r * d + j] * xhat[r * d + j];
                        }
                    }
                });
                acc(*bias, &mut |s| {
                    for r in 0..rows {
                        for j in 0..d {
                            s[j] += g[r * d + j];
                        }
                    }
                });
            }
            Op::Dropout { a, keep } => {
                acc(*a, &mut |s| {
                    for j in 0..s.len() {
                        s[j] += g[j] * keep[j];
                    }
                });
            }
            Op::SplitHeads { a, heads } => {
                let sa = &nodes[a.0].tensor.shape;
                let (b, l, d) = (sa[0], sa[1], sa[2]);
                let dh = d / heads;
                acc(*a, &mut |s| {
                    for bi in 0..b {
                        for h in 0..*heads {
                            for li in 0..l {
                                let from = ((bi * heads + h) * l + li) * dh;
                                let dst = (bi * l + li) * d + h * dh;
                                for j in 0..dh {
                                    s[dst + j] += g[from + j];
                                }
                            }
                        }
                    }
                });
            }
            Op::MergeHeads { a, heads } => {
                let sa = &nodes[a.0].tensor.shape;
                let (bh, l, dh) = (sa[0], sa[1], sa[2]);
                let d = dh * heads;
                acc(*a, &mut |s| {
                    for bi in 0..bh / heads {
                        for h in 0..*heads {
                            for li in 0..l {
                                let dst = ((bi * heads + h) * l + li) * dh;
                                let from = (bi * l + li) * d + h * dh;
                                for j in 0..dh {
                                    s[dst + j] += g[from + j];
                                }
                            }
                        }
                    }
                });
            }
            Op::Embedding { table, ids, scale } => {
                let d = *shape.last().unwrap();
                acc(*table, &mut |s| {
                    for (r, &id) in ids.iter().enumerate() {
                        for j in 0..d {
                            s[id * d + j] += g[r * d + j] * *scale;
                        }
                    }
                });
            }
            Op::CrossEntropy {
                logits,
                targets,
                ignore,
                probs,
                count,
            } => {
                if *count == 0 {
                    return;
                }
                let v = *nodes[logits.0].tensor.shape.last().unwrap();
                let w = g[0] / F::of(*count as f64);
                acc(*logits, &mut |s| {
                    for (r, &t) in targets.iter().enumerate() {
                        if t == *ignore {
                            continue;
                        }
                        for j in 0..v {
                            s[r * v + j] += w * probs[r * v + j];
                        }
                        s[r * v + t] -= w;
                    }
                });
            }
            Op::Sum { a } => {
                acc(*a, &mut |s| s.iter_mut().for_each(|x| *x += g[0]));
            }
            Op::Reshape { a } => {
                acc(*a, &mut |s| s.iter_mut().zip(g).for_each(|(x, &y)| *x += y));
            }
        }
    }

    /// Gradients of all registered parameters after [`Tape::backward`].
    pub fn gradients(&self, store: &ParamStore<F>) -> Gradients<F> {
        let mut out = Gradients::zeros_like(store);
        for (&pid, &node) in &self.params {
            if let Some(g) = self.grad(node) {
                out.get_mut(pid).copy_from_slice(g);
            }
        }
        out
    }
}

fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}
