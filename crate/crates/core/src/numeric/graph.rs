use super::kernels::{dot, gelu_grad, gelu_scalar, matmul, matmul_at, matmul_bt};
use super::{NumericError, Real, Tensor};
use rand::{Rng, RngCore};

/// Handle to a node on the tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

const LN_EPS: f64 = 1e-5;

enum Op<T> {
    Param(usize),
    Constant,
    Embedding { table: Var, ids: Vec<u32> },
    Add(Var, Var),
    AddBias(Var, Var),
    MatMul(Var, Var),
    MatMulBt(Var, Var),
    Gelu(Var),
    LayerNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<T>, rstd: Vec<T> },
    Dropout { x: Var, mask: Vec<T> },
    Attention { q: Var, k: Var, v: Var, heads: usize, scale: T, probs: Vec<T>, mask: Option<Vec<T>> },
    Softmax(Var),
    GatherRows { x: Var, rows: Vec<usize> },
    CrossEntropy { logits: Var, targets: Vec<(usize, u32)>, probs: Vec<T>, norm: T },
    SumSquares(Var),
}

struct Node<T> {
    op: Op<T>,
    /// `None` only for parameters, which are read from the borrowed store.
    value: Option<Tensor<T>>,
    needs_grad: bool,
}

/// Forward tape over a borrowed parameter list. Parameters are never copied;
/// `backward` returns gradients indexed like the parameter slice.
pub struct Graph<'p, T: Real> {
    params: &'p [Tensor<T>],
    nodes: Vec<Node<T>>,
}

impl<'p, T: Real> Graph<'p, T> {
    pub fn new(params: &'p [Tensor<T>]) -> Self {
        Graph {
            params,
            nodes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op<T>, value: Tensor<T>, inputs: &[Var]) -> Var {
        let needs_grad = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        self.nodes.push(Node {
            op,
            value: Some(value),
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        let node = &self.nodes[v.0];
        match node.op {
            Op::Param(i) => &self.params[i],
            _ => node.value.as_ref().expect("non-parameter nodes own their value"),
        }
    }

    /// The single value of a one-element node.
    pub fn scalar(&self, v: Var) -> T {
        let t = self.value(v);
        assert_eq!(t.len(), 1, "scalar() on a tensor of shape {:?}", t.shape());
        t.data()[0]
    }

    pub fn param(&mut self, index: usize) -> Var {
        assert!(index < self.params.len(), "parameter {index} out of range");
        self.nodes.push(Node {
            op: Op::Param(index),
            value: None,
            needs_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.nodes.push(Node {
            op: Op::Constant,
            value: Some(t),
            needs_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    /// Rows of `table` selected by `ids`.
    pub fn embedding(&mut self, table: Var, ids: &[u32]) -> Var {
        let t = self.value(table);
        let (rows, d) = t.dims2();
        let mut out = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            assert!((id as usize) < rows, "embedding id {id} out of range {rows}");
            out.extend_from_slice(t.row(id as usize));
        }
        let value = Tensor::from_vec(&[ids.len(), d], out);
        self.push(Op::Embedding { table, ids: ids.to_vec() }, value, &[table])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let (x, y) = (self.value(a), self.value(b));
        assert_eq!(x.shape(), y.shape(), "add shape mismatch");
        let data = x.data().iter().zip(y.data()).map(|(&p, &q)| p + q).collect();
        let value = Tensor::from_vec(x.shape(), data);
        self.push(Op::Add(a, b), value, &[a, b])
    }

    /// `x[n,d] + b[d]` broadcast over rows.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Var {
        let (xv, bv) = (self.value(x), self.value(b));
        let (_, d) = xv.dims2();
        assert_eq!(bv.len(), d, "bias length mismatch");
        let mut data = xv.data().to_vec();
        for row in data.chunks_mut(d) {
            for (a, &c) in row.iter_mut().zip(bv.data()) {
                *a += c;
            }
        }
        let value = Tensor::from_vec(xv.shape(), data);
        self.push(Op::AddBias(x, b), value, &[x, b])
    }

    /// `a[n,k] · b[k,m]`
    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        let (n, k) = av.dims2();
        let (k2, m) = bv.dims2();
        assert_eq!(k, k2, "matmul inner dimension mismatch");
        let mut out = vec![T::zero(); n * m];
        matmul(av.data(), bv.data(), n, k, m, &mut out);
        self.push(Op::MatMul(a, b), Tensor::from_vec(&[n, m], out), &[a, b])
    }

    /// `a[n,k] · b[m,k]ᵀ`
    pub fn matmul_bt(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        let (n, k) = av.dims2();
        let (m, k2) = bv.dims2();
        assert_eq!(k, k2, "matmul_bt inner dimension mismatch");
        let mut out = vec![T::zero(); n * m];
        matmul_bt(av.data(), bv.data(), n, k, m, &mut out);
        self.push(Op::MatMulBt(a, b), Tensor::from_vec(&[n, m], out), &[a, b])
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let data = xv.data().iter().map(|&z| gelu_scalar(z)).collect();
        let value = Tensor::from_vec(xv.shape(), data);
        self.push(Op::Gelu(x), value, &[x])
    }

    /// Per-row normalisation with affine `gamma`, `beta` (eps 1e-5).
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Var {
        let (xv, gv, bv) = (self.value(x), self.value(gamma), self.value(beta));
        let (n, d) = xv.dims2();
        assert!(gv.len() == d && bv.len() == d, "layer norm parameter length mismatch");
        let inv_d = T::from_f64(1.0 / d as f64);
        let eps = T::from_f64(LN_EPS);
        let mut xhat = vec![T::zero(); n * d];
        let mut rstd = vec![T::zero(); n];
        let mut out = vec![T::zero(); n * d];
        for r in 0..n {
            let row = &xv.data()[r * d..(r + 1) * d];
            let mean = row.iter().copied().sum::<T>() * inv_d;
            let var = row.iter().map(|&z| (z - mean) * (z - mean)).sum::<T>() * inv_d;
            let rs = T::one() / (var + eps).sqrt();
            rstd[r] = rs;
            for c in 0..d {
                let h = (row[c] - mean) * rs;
                xhat[r * d + c] = h;
                out[r * d + c] = h * gv.data()[c] + bv.data()[c];
            }
        }
        let value = Tensor::from_vec(xv.shape(), out);
        self.push(Op::LayerNorm { x, gamma, beta, xhat, rstd }, value, &[x, gamma, beta])
    }

    /// Inverted dropout. With `rng = None` or `p = 0` this is the identity and
    /// records nothing.
    pub fn dropout(&mut self, x: Var, p: f64, rng: Option<&mut (dyn RngCore + '_)>) -> Var {
        let Some(rng) = rng else { return x };
        if p <= 0.0 {
            return x;
        }
        let mask = dropout_mask::<T>(self.value(x).len(), p, rng);
        let xv = self.value(x);
        let data = xv.data().iter().zip(&mask).map(|(&a, &m)| a * m).collect();
        let value = Tensor::from_vec(xv.shape(), data);
        self.push(Op::Dropout { x, mask }, value, &[x])
    }

    /// Multi-head scaled dot-product self-attention over one sequence.
    /// `q`, `k`, `v` are `[n, H]` with heads in contiguous column blocks;
    /// keys with `key_mask[j] == false` receive zero weight. Dropout applies
    /// to the attention probabilities.
    pub fn attention(
        &mut self,
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        key_mask: &[bool],
        p: f64,
        rng: Option<&mut (dyn RngCore + '_)>,
    ) -> Var {
        let (n, hd) = self.value(q).dims2();
        assert_eq!(self.value(k).dims2(), (n, hd), "attention k shape");
        assert_eq!(self.value(v).dims2(), (n, hd), "attention v shape");
        assert_eq!(key_mask.len(), n, "key mask length");
        assert!(heads > 0 && hd % heads == 0, "hidden size not divisible by heads");
        let d = hd / heads;
        let scale = T::from_f64(1.0 / (d as f64).sqrt());
        let mask = match rng {
            Some(r) if p > 0.0 => Some(dropout_mask::<T>(heads * n * n, p, r)),
            _ => None,
        };
        let mut probs = vec![T::zero(); heads * n * n];
        let mut out = vec![T::zero(); n * hd];
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        let mut mixed = vec![T::zero(); n * n];
        let mut ctx = vec![T::zero(); n * d];
        for h in 0..heads {
            let qh = head_cols(qv.data(), n, hd, h, d);
            let kh = head_cols(kv.data(), n, hd, h, d);
            let vh = head_cols(vv.data(), n, hd, h, d);
            let ph = &mut probs[h * n * n..(h + 1) * n * n];
            matmul_bt(&qh, &kh, n, d, n, ph);
            for row in ph.chunks_mut(n) {
                masked_softmax(row, key_mask, scale);
            }
            match &mask {
                Some(m) => {
                    let mh = &m[h * n * n..(h + 1) * n * n];
                    for ((o, &a), &b) in mixed.iter_mut().zip(ph.iter()).zip(mh) {
                        *o = a * b;
                    }
                }
                None => mixed.copy_from_slice(ph),
            }
            ctx.iter_mut().for_each(|c| *c = T::zero());
            matmul(&mixed, &vh, n, n, d, &mut ctx);
            scatter_cols(&ctx, &mut out, n, hd, h, d);
        }
        let value = Tensor::from_vec(&[n, hd], out);
        self.push(
            Op::Attention { q, k, v, heads, scale, probs, mask },
            value,
            &[q, k, v],
        )
    }

    /// Row-wise softmax.
    pub fn softmax(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let (_, d) = xv.dims2();
        let mut data = xv.data().to_vec();
        for row in data.chunks_mut(d) {
            super::kernels::softmax_row(row);
        }
        let value = Tensor::from_vec(xv.shape(), data);
        self.push(Op::Softmax(x), value, &[x])
    }

    pub fn gather_rows(&mut self, x: Var, rows: &[usize]) -> Var {
        let xv = self.value(x);
        let (n, d) = xv.dims2();
        let mut data = Vec::with_capacity(rows.len() * d);
        for &r in rows {
            assert!(r < n, "gather row {r} out of range {n}");
            data.extend_from_slice(xv.row(r));
        }
        let value = Tensor::from_vec(&[rows.len(), d], data);
        self.push(Op::GatherRows { x, rows: rows.to_vec() }, value, &[x])
    }

    /// Sum of `-log softmax(logits[row])[id]` over `targets`, divided by
    /// `normalizer` (default: number of targets).
    pub fn cross_entropy(
        &mut self,
        logits: Var,
        targets: &[(usize, u32)],
        normalizer: Option<f64>,
    ) -> Result<Var, NumericError> {
        if targets.is_empty() {
            return Err(NumericError::NoTargets);
        }
        let lv = self.value(logits);
        let (rows, cols) = lv.dims2();
        for &(row, id) in targets {
            if row >= rows || id as usize >= cols {
                return Err(NumericError::TargetOutOfRange { row, id, rows, cols });
            }
        }
        let mut probs = lv.data().to_vec();
        let mut total = T::zero();
        for &(row, id) in targets {
            let lp = super::kernels::log_softmax_row(lv.row(row));
            total += -lp[id as usize];
        }
        for row in probs.chunks_mut(cols) {
            super::kernels::softmax_row(row);
        }
        let norm = T::from_f64(normalizer.unwrap_or(targets.len() as f64));
        let value = Tensor::from_vec(&[1], vec![total / norm]);
        Ok(self.push(
            Op::CrossEntropy { logits, targets: targets.to_vec(), probs, norm },
            value,
            &[logits],
        ))
    }

    pub fn sum_squares(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().map(|&a| a * a).sum();
        self.push(Op::SumSquares(x), Tensor::from_vec(&[1], vec![s]), &[x])
    }

    /// Reverse pass from a scalar `root`. Entry `i` of the result is the
    /// gradient of parameter `i`, or `None` if the root does not depend on it.
    pub fn backward(&self, root: Var) -> Vec<Option<Tensor<T>>> {
        assert_eq!(self.value(root).len(), 1, "backward needs a scalar root");
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        let mut param_grads: Vec<Option<Tensor<T>>> = (0..self.params.len()).map(|_| None).collect();
        grads[root.0] = Some(Tensor::full(&[1], T::one()));

        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            match &node.op {
                Op::Param(p) => match &mut param_grads[*p] {
                    Some(acc) => acc.add_assign(&g),
                    slot => *slot = Some(g),
                },
                Op::Constant => {}
                Op::Embedding { table, ids } => {
                    if let Some(dt) = self.grad_slot(&mut grads, *table) {
                        let d = dt.dims2().1;
                        let dd = dt.data_mut();
                        for (r, &id) in ids.iter().enumerate() {
                            let src = &g.data()[r * d..(r + 1) * d];
                            for (a, &b) in dd[id as usize * d..(id as usize + 1) * d].iter_mut().zip(src) {
                                *a += b;
                            }
                        }
                    }
                }
                Op::Add(a, b) => {
                    for v in [*a, *b] {
                        if let Some(dv) = self.grad_slot(&mut grads, v) {
                            dv.add_assign(&g);
                        }
                    }
                }
                Op::AddBias(x, b) => {
                    if let Some(dx) = self.grad_slot(&mut grads, *x) {
                        dx.add_assign(&g);
                    }
                    if let Some(db) = self.grad_slot(&mut grads, *b) {
                        let d = db.len();
                        let dd = db.data_mut();
                        for row in g.data().chunks(d) {
                            for (a, &c) in dd.iter_mut().zip(row) {
                                *a += c;
                            }
                        }
                    }
                }
                Op::MatMul(a, b) => {
                    let (n, k) = self.value(*a).dims2();
                    let m = self.value(*b).dims2().1;
                    if self.nodes[a.0].needs_grad {
                        let bv = self.value(*b).data().to_vec();
                        let da = self.grad_slot(&mut grads, *a).expect("needs grad");
                        matmul_bt(g.data(), &bv, n, m, k, da.data_mut());
                    }
                    if self.nodes[b.0].needs_grad {
                        let av = self.value(*a).data().to_vec();
                        let db = self.grad_slot(&mut grads, *b).expect("needs grad");
                        matmul_at(&av, g.data(), n, k, m, db.data_mut());
                    }
                }
                Op::MatMulBt(a, b) => {
                    let (n, k) = self.value(*a).dims2();
                    let m = self.value(*b).dims2().0;
                    if self.nodes[a.0].needs_grad {
                        let bv = self.value(*b).data().to_vec();
                        let da = self.grad_slot(&mut grads, *a).expect("needs grad");
                        matmul(g.data(), &bv, n, m, k, da.data_mut());
                    }
                    if self.nodes[b.0].needs_grad {
                        let av = self.value(*a).data().to_vec();
                        let db = self.grad_slot(&mut grads, *b).expect("needs grad");
                        matmul_at(g.data(), &av, n, m, k, db.data_mut());
                    }
                }
                Op::Gelu(x) => {
                    let xv = self.value(*x).data().to_vec();
                    if let Some(dx) = self.grad_slot(&mut grads, *x) {
                        for ((a, &z), &gz) in dx.data_mut().iter_mut().zip(&xv).zip(g.data()) {
                            *a += gz * gelu_grad(z);
                        }
                    }
                }
                Op::LayerNorm { x, gamma, beta, xhat, rstd } => {
                    let d = self.value(*gamma).len();
                    let gam = self.value(*gamma).data().to_vec();
                    if let Some(dg) = self.grad_slot(&mut grads, *gamma) {
                        let dd = dg.data_mut();
                        for (gr, hr) in g.data().chunks(d).zip(xhat.chunks(d)) {
                            for c in 0..d {
                                dd[c] += gr[c] * hr[c];
                            }
                        }
                    }
                    if let Some(db) = self.grad_slot(&mut grads, *beta) {
                        let dd = db.data_mut();
                        for gr in g.data().chunks(d) {
                            for c in 0..d {
                                dd[c] += gr[c];
                            }
                        }
                    }
                    if let Some(dx) = self.grad_slot(&mut grads, *x) {
                        let inv_d = T::from_f64(1.0 / d as f64);
                        let dd = dx.data_mut();
                        let mut dh = vec![T::zero(); d];
                        for (r, &rs) in rstd.iter().enumerate() {
                            let gr = &g.data()[r * d..(r + 1) * d];
                            let hr = &xhat[r * d..(r + 1) * d];
                            let mut s1 = T::zero();
                            let mut s2 = T::zero();
                            for c in 0..d {
                                dh[c] = gr[c] * gam[c];
                                s1 += dh[c];
                                s2 += dh[c] * hr[c];
                            }
                            s1 *= inv_d;
                            s2 *= inv_d;
                            for c in 0..d {
                                dd[r * d + c] += rs * (dh[c] - s1 - hr[c] * s2);
                            }
                        }
                    }
                }
                Op::Dropout { x, mask } => {
                    if let Some(dx) = self.grad_slot(&mut grads, *x) {
                        for ((a, &m), &gz) in dx.data_mut().iter_mut().zip(mask).zip(g.data()) {
                            *a += gz * m;
                        }
                    }
                }
                Op::Attention { q, k, v, heads, scale, probs, mask } => {
                    self.attention_backward(&mut grads, &g, [*q, *k, *v], *heads, *scale, probs, mask.as_deref());
                }
                Op::Softmax(x) => {
                    let y = node.value.as_ref().expect("owned");
                    let d = y.dims2().1;
                    if let Some(dx) = self.grad_slot(&mut grads, *x) {
                        let dd = dx.data_mut();
                        for (r, (yr, gr)) in y.data().chunks(d).zip(g.data().chunks(d)).enumerate() {
                            let s = dot(yr, gr);
                            for c in 0..d {
                                dd[r * d + c] += yr[c] * (gr[c] - s);
                            }
                        }
                    }
                }
                Op::GatherRows { x, rows } => {
                    if let Some(dx) = self.grad_slot(&mut grads, *x) {
                        let d = dx.dims2().1;
                        let dd = dx.data_mut();
                        for (i, &r) in rows.iter().enumerate() {
                            for c in 0..d {
                                dd[r * d + c] += g.data()[i * d + c];
                            }
                        }
                    }
                }
                Op::CrossEntropy { logits, targets, probs, norm } => {
                    let scale = g.data()[0] / *norm;
                    if let Some(dl) = self.grad_slot(&mut grads, *logits) {
                        let cols = dl.dims2().1;
                        let dd = dl.data_mut();
                        for &(row, id) in targets {
                            let pr = &probs[row * cols..(row + 1) * cols];
                            for c in 0..cols {
                                dd[row * cols + c] += scale * pr[c];
                            }
                            dd[row * cols + id as usize] -= scale;
                        }
                    }
                }
                Op::SumSquares(x) => {
                    let xv = self.value(*x).data().to_vec();
                    let two = T::from_f64(2.0) * g.data()[0];
                    if let Some(dx) = self.grad_slot(&mut grads, *x) {
                        for (a, &z) in dx.data_mut().iter_mut().zip(&xv) {
                            *a += two * z;
                        }
                    }
                }
            }
        }
        param_grads
    }

    /// Zero-initialised gradient buffer for `v`, or `None` if `v` is constant.
    fn grad_slot<'g>(&self, grads: &'g mut [Option<Tensor<T>>], v: Var) -> Option<&'g mut Tensor<T>> {
        if !self.nodes[v.0].needs_grad {
            return None;
        }
        let shape = self.value(v).shape().to_vec();
        Some(grads[v.0].get_or_insert_with(|| Tensor::zeros(&shape)))
    }

    #[allow(clippy::too_many_arguments)]
    fn attention_backward(
        &self,
        grads: &mut [Option<Tensor<T>>],
        g: &Tensor<T>,
        qkv: [Var; 3],
        heads: usize,
        scale: T,
        probs: &[T],
        mask: Option<&[T]>,
    ) {
        let [q, k, v] = qkv;
        let (n, hd) = self.value(q).dims2();
        let d = hd / heads;
        let mut dq = vec![T::zero(); n * hd];
        let mut dk = vec![T::zero(); n * hd];
        let mut dv = vec![T::zero(); n * hd];
        let mut mixed = vec![T::zero(); n * n];
        let mut dp = vec![T::zero(); n * n];
        for h in 0..heads {
            let qh = head_cols(self.value(q).data(), n, hd, h, d);
            let kh = head_cols(self.value(k).data(), n, hd, h, d);
            let vh = head_cols(self.value(v).data(), n, hd, h, d);
            let gh = head_cols(g.data(), n, hd, h, d);
            let ph = &probs[h * n * n..(h + 1) * n * n];
            let mh = mask.map(|m| &m[h * n * n..(h + 1) * n * n]);
            match mh {
                Some(m) => {
                    for ((o, &a), &b) in mixed.iter_mut().zip(ph).zip(m) {
                        *o = a * b;
                    }
                }
                None => mixed.copy_from_slice(ph),
            }
            let mut dvh = vec![T::zero(); n * d];
            matmul_at(&mixed, &gh, n, n, d, &mut dvh);
            dp.iter_mut().for_each(|x| *x = T::zero());
            matmul_bt(&gh, &vh, n, d, n, &mut dp);
            if let Some(m) = mh {
                for (a, &b) in dp.iter_mut().zip(m) {
                    *a *= b;
                }
            }
            for (pr, dr) in ph.chunks(n).zip(dp.chunks_mut(n)) {
                let s = dot(pr, dr);
                for (x, &pv) in dr.iter_mut().zip(pr) {
                    *x = pv * (*x - s) * scale;
                }
            }
            let mut dqh = vec![T::zero(); n * d];
            let mut dkh = vec![T::zero(); n * d];
            matmul(&dp, &kh, n, n, d, &mut dqh);
            matmul_at(&dp, &qh, n, n, d, &mut dkh);
            scatter_cols(&dqh, &mut dq, n, hd, h, d);
            scatter_cols(&dkh, &mut dk, n, hd, h, d);
            scatter_cols(&dvh, &mut dv, n, hd, h, d);
        }
        for (var, buf) in [(q, dq), (k, dk), (v, dv)] {
            if let Some(slot) = self.grad_slot(grads, var) {
                for (a, b) in slot.data_mut().iter_mut().zip(buf) {
                    *a += b;
                }
            }
        }
    }
}

fn dropout_mask<T: Real>(len: usize, p: f64, rng: &mut dyn RngCore) -> Vec<T> {
    let keep = T::from_f64(1.0 / (1.0 - p));
    (0..len)
        .map(|_| if rng.random::<f64>() < p { T::zero() } else { keep })
        .collect()
}

fn masked_softmax<T: Real>(row: &mut [T], key_mask: &[bool], scale: T) {
    let mut mx: Option<T> = None;
    for (x, &ok) in row.iter_mut().zip(key_mask) {
        if ok {
            *x *= scale;
            mx = Some(match mx {
                Some(m) => m.max(*x),
                None => *x,
            });
        }
    }
    let Some(mx) = mx else {
        row.iter_mut().for_each(|x| *x = T::zero());
        return;
    };
    let mut sum = T::zero();
    for (x, &ok) in row.iter_mut().zip(key_mask) {
        *x = if ok { (*x - mx).exp() } else { T::zero() };
        sum += *x;
    }
    for x in row.iter_mut() {
        *x /= sum;
    }
}

fn head_cols<T: Real>(src: &[T], n: usize, hd: usize, h: usize, d: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(n * d);
    for r in 0..n {
        out.extend_from_slice(&src[r * hd + h * d..r * hd + (h + 1) * d]);
    }
    out
}

fn scatter_cols<T: Real>(src: &[T], dst: &mut [T], n: usize, hd: usize, h: usize, d: usize) {
    for r in 0..n {
        for c in 0..d {
            dst[r * hd + h * d + c] += src[r * d + c];
        }
    }
}
