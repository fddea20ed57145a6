//! Tape-based reverse-mode differentiation over dense matrices.
//!
//! Every operation appends a node holding its forward value and enough
//! saved state to run its adjoint. [`Tape::backward`] walks the nodes in
//! reverse and accumulates gradients; parameter gradients are then read back
//! per [`ParamId`].
//!
//! All tensors on a tape are treated as matrices (see [`Tensor::dims2`]).

use super::params::{ParamId, ParamStore};
use super::tensor::{log_softmax_in_place, normalize_row, softmax_in_place, Scalar, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

enum Op<T> {
    Leaf,
    MatMul { a: usize, b: usize, trans_b: bool },
    Add(usize, usize),
    Mul(usize, usize),
    AddRow { x: usize, bias: usize },
    Scale { x: usize, factor: T },
    Relu(usize),
    Tanh(usize),
    Sigmoid(usize),
    SoftmaxRows(usize),
    LogSoftmaxRows(usize),
    LayerNormRows { x: usize, gain: usize, bias: usize, xhat: Vec<T>, inv_std: Vec<T> },
    SliceCols { x: usize, start: usize },
    SliceRows { x: usize, start: usize },
    ConcatCols(Vec<usize>),
    ConcatRows(Vec<usize>),
    Reshape(usize),
    GatherRows { table: usize, index: Vec<usize> },
    OuterAddRows { a: usize, b: usize },
    MeanRows(usize),
    Pick { x: usize, index: Vec<usize> },
    Sum(usize),
    Custom { x: usize, grad: Tensor<T> },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
}

/// Records a forward computation for later differentiation.
pub struct Tape<'p, T: Scalar = f32> {
    store: &'p ParamStore,
    nodes: Vec<Node<T>>,
    param_nodes: Vec<Option<usize>>,
    nudge: Option<(ParamId, usize, T)>,
}

impl<'p, T: Scalar> Tape<'p, T> {
    pub fn new(store: &'p ParamStore) -> Self {
        Self {
            store,
            nodes: Vec::new(),
            param_nodes: vec![None; store.len()],
            nudge: None,
        }
    }

    /// A tape on which one parameter entry reads as `value + delta`.
    /// Used for finite differences without rounding the perturbation to `f32`.
    pub fn with_nudge(store: &'p ParamStore, id: ParamId, entry: usize, delta: T) -> Self {
        let mut tape = Self::new(store);
        tape.nudge = Some((id, entry, delta));
        tape
    }

    pub fn store(&self) -> &'p ParamStore {
        self.store
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn dims(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.dims2()
    }

    /// Leaf for a parameter; repeated calls return the same node.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(n) = self.param_nodes[id.0] {
            return Var(n);
        }
        let mut value: Tensor<T> = self.store.get(id).value.cast();
        if let Some((nid, entry, delta)) = self.nudge {
            if nid == id {
                value.data_mut()[entry] = value.data()[entry] + delta;
            }
        }
        let v = self.push(value, Op::Leaf);
        self.param_nodes[id.0] = Some(v.0);
        v
    }

    pub fn constant(&mut self, value: &Tensor) -> Var {
        let value = value.cast();
        self.push(value, Op::Leaf)
    }

    pub fn constant_t(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims(a);
        let (k2, n) = self.dims(b);
        if k != k2 {
            return Err(Error::Dimension(format!("matmul {m}x{k} by {k2}x{n}")));
        }
        let mut out = Tensor::zeros(&[m, n]);
        T::gemm(m, k, n, self.value(a).data(), false, self.value(b).data(), false, out.data_mut(), false);
        Ok(self.push(out, Op::MatMul { a: a.0, b: b.0, trans_b: false }))
    }

    /// `a · bᵀ`
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims(a);
        let (n, k2) = self.dims(b);
        if k != k2 {
            return Err(Error::Dimension(format!("matmul {m}x{k} by ({n}x{k2})ᵀ")));
        }
        let mut out = Tensor::zeros(&[m, n]);
        T::gemm(m, k, n, self.value(a).data(), false, self.value(b).data(), true, out.data_mut(), false);
        Ok(self.push(out, Op::MatMul { a: a.0, b: b.0, trans_b: true }))
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.dims(a) != self.dims(b) {
            return Err(Error::Dimension(format!(
                "{what}: {:?} vs {:?}",
                self.dims(a),
                self.dims(b)
            )));
        }
        Ok(())
    }

    fn elementwise(&self, x: Var, f: impl Fn(T) -> T) -> Tensor<T> {
        let (r, c) = self.dims(x);
        let data = self.value(x).data().iter().map(|&v| f(v)).collect();
        Tensor::new(vec![r, c], data).unwrap()
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let (r, c) = self.dims(a);
        let data = self.value(a).data().iter().zip(self.value(b).data()).map(|(&x, &y)| x + y).collect();
        Ok(self.push(Tensor::new(vec![r, c], data)?, Op::Add(a.0, b.0)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let (r, c) = self.dims(a);
        let data = self.value(a).data().iter().zip(self.value(b).data()).map(|(&x, &y)| x * y).collect();
        Ok(self.push(Tensor::new(vec![r, c], data)?, Op::Mul(a.0, b.0)))
    }

    /// Adds `bias` (one entry per column) to every row of `x`.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (r, c) = self.dims(x);
        if self.value(bias).numel() != c {
            return Err(Error::Dimension(format!(
                "row bias of {} entries for {c} columns",
                self.value(bias).numel()
            )));
        }
        let b = self.value(bias).data();
        let mut out = self.value(x).clone().reshape(vec![r, c])?;
        for row in out.data_mut().chunks_mut(c.max(1)) {
            for (o, &bv) in row.iter_mut().zip(b) {
                *o = *o + bv;
            }
        }
        Ok(self.push(out, Op::AddRow { x: x.0, bias: bias.0 }))
    }

    pub fn scale(&mut self, x: Var, factor: T) -> Var {
        let out = self.elementwise(x, |v| v * factor);
        self.push(out, Op::Scale { x: x.0, factor })
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.elementwise(x, |v| v.max(T::zero()));
        self.push(out, Op::Relu(x.0))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let out = self.elementwise(x, |v| v.tanh());
        self.push(out, Op::Tanh(x.0))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = self.elementwise(x, |v| T::one() / (T::one() + (-v).exp()));
        self.push(out, Op::Sigmoid(x.0))
    }

    pub fn softmax_rows(&mut self, x: Var) -> Var {
        let (r, c) = self.dims(x);
        let mut out = self.value(x).clone().reshape(vec![r, c]).unwrap();
        for row in out.data_mut().chunks_mut(c.max(1)) {
            softmax_in_place(row);
        }
        self.push(out, Op::SoftmaxRows(x.0))
    }

    pub fn log_softmax_rows(&mut self, x: Var) -> Var {
        let (r, c) = self.dims(x);
        let mut out = self.value(x).clone().reshape(vec![r, c]).unwrap();
        for row in out.data_mut().chunks_mut(c.max(1)) {
            log_softmax_in_place(row);
        }
        self.push(out, Op::LogSoftmaxRows(x.0))
    }

    pub fn layer_norm_rows(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        let (r, c) = self.dims(x);
        if c < 2 {
            return Err(Error::Domain(format!("layer norm over {c} features")));
        }
        if self.value(gain).numel() != c || self.value(bias).numel() != c {
            return Err(Error::Dimension("layer norm gain/bias width".into()));
        }
        let mut xhat = vec![T::zero(); r * c];
        let mut inv_std = Vec::with_capacity(r);
        let xs = self.value(x).data();
        for (row, out) in xs.chunks(c).zip(xhat.chunks_mut(c)) {
            inv_std.push(normalize_row(row, out));
        }
        let g = self.value(gain).data();
        let b = self.value(bias).data();
        let mut out = Tensor::zeros(&[r, c]);
        for (orow, hrow) in out.data_mut().chunks_mut(c).zip(xhat.chunks(c)) {
            for j in 0..c {
                orow[j] = hrow[j] * g[j] + b[j];
            }
        }
        Ok(self.push(
            out,
            Op::LayerNormRows { x: x.0, gain: gain.0, bias: bias.0, xhat, inv_std },
        ))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (r, c) = self.dims(x);
        if start + len > c {
            return Err(Error::Dimension(format!("columns {start}..{} of {c}", start + len)));
        }
        let src = self.value(x);
        let out = Tensor::from_fn(r, len, |i, j| src.data()[i * c + start + j]);
        Ok(self.push(out, Op::SliceCols { x: x.0, start }))
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (r, c) = self.dims(x);
        if start + len > r {
            return Err(Error::Dimension(format!("rows {start}..{} of {r}", start + len)));
        }
        let data = self.value(x).data()[start * c..(start + len) * c].to_vec();
        Ok(self.push(Tensor::new(vec![len, c], data)?, Op::SliceRows { x: x.0, start }))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = parts.first().map(|&p| self.dims(p).0).ok_or_else(|| Error::Dimension("empty concat".into()))?;
        if parts.iter().any(|&p| self.dims(p).0 != rows) {
            return Err(Error::Dimension("concat_cols with differing row counts".into()));
        }
        let total: usize = parts.iter().map(|&p| self.dims(p).1).sum();
        let mut data = Vec::with_capacity(rows * total);
        for i in 0..rows {
            for &p in parts {
                let v = self.value(p);
                let c = v.dims2().1;
                data.extend_from_slice(&v.data()[i * c..(i + 1) * c]);
            }
        }
        let out = Tensor::new(vec![rows, total], data)?;
        Ok(self.push(out, Op::ConcatCols(parts.iter().map(|p| p.0).collect())))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let cols = parts.first().map(|&p| self.dims(p).1).ok_or_else(|| Error::Dimension("empty concat".into()))?;
        if parts.iter().any(|&p| self.dims(p).1 != cols) {
            return Err(Error::Dimension("concat_rows with differing column counts".into()));
        }
        let mut data = Vec::new();
        for &p in parts {
            data.extend_from_slice(self.value(p).data());
        }
        let rows = data.len().checked_div(cols).unwrap_or(0);
        let out = Tensor::new(vec![rows, cols], data)?;
        Ok(self.push(out, Op::ConcatRows(parts.iter().map(|p| p.0).collect())))
    }

    pub fn reshape(&mut self, x: Var, rows: usize, cols: usize) -> Result<Var> {
        let out = self.value(x).clone().reshape(vec![rows, cols])?;
        Ok(self.push(out, Op::Reshape(x.0)))
    }

    /// Row lookup, e.g. an embedding table indexed by token ids.
    pub fn gather_rows(&mut self, table: Var, index: &[usize]) -> Result<Var> {
        let (r, c) = self.dims(table);
        if let Some(&bad) = index.iter().find(|&&i| i >= r) {
            return Err(Error::Index(format!("row {bad} of a {r}-row table")));
        }
        let src = self.value(table).data();
        let mut data = Vec::with_capacity(index.len() * c);
        for &i in index {
            data.extend_from_slice(&src[i * c..(i + 1) * c]);
        }
        let out = Tensor::new(vec![index.len(), c], data)?;
        Ok(self.push(out, Op::GatherRows { table: table.0, index: index.to_vec() }))
    }

    /// `out[t·S + s] = a[t] + b[s]` for `a: T×J`, `b: S×J`.
    pub fn outer_add_rows(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, ja) = self.dims(a);
        let (sb, jb) = self.dims(b);
        if ja != jb {
            return Err(Error::Dimension(format!("outer add of width {ja} and {jb}")));
        }
        let av = self.value(a).data();
        let bv = self.value(b).data();
        let mut data = Vec::with_capacity(ta * sb * ja);
        for t in 0..ta {
            for s in 0..sb {
                for j in 0..ja {
                    data.push(av[t * ja + j] + bv[s * ja + j]);
                }
            }
        }
        let out = Tensor::new(vec![ta * sb, ja], data)?;
        Ok(self.push(out, Op::OuterAddRows { a: a.0, b: b.0 }))
    }

    pub fn mean_rows(&mut self, x: Var) -> Result<Var> {
        let (r, c) = self.dims(x);
        if r == 0 {
            return Err(Error::Domain("mean over zero rows".into()));
        }
        let inv = T::one() / T::from_usize(r).unwrap();
        let mut out = Tensor::zeros(&[1, c]);
        for row in self.value(x).data().chunks(c) {
            for (o, &v) in out.data_mut().iter_mut().zip(row) {
                *o = *o + v;
            }
        }
        out.data_mut().iter_mut().for_each(|o| *o = *o * inv);
        Ok(self.push(out, Op::MeanRows(x.0)))
    }

    /// Gathers individual entries by flat row-major index into a row vector.
    pub fn pick(&mut self, x: Var, index: &[usize]) -> Result<Var> {
        let n = self.value(x).numel();
        if let Some(&bad) = index.iter().find(|&&i| i >= n) {
            return Err(Error::Index(format!("entry {bad} of {n}")));
        }
        let src = self.value(x).data();
        let data = index.iter().map(|&i| src[i]).collect();
        let out = Tensor::new(vec![1, index.len()], data)?;
        Ok(self.push(out, Op::Pick { x: x.0, index: index.to_vec() }))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().copied().sum();
        self.push(Tensor::new(vec![1, 1], vec![s]).unwrap(), Op::Sum(x.0))
    }

    /// Scalar node whose gradient with respect to `x` was computed by the
    /// caller (e.g. alignment losses evaluated by forward-backward).
    pub fn custom_scalar(&mut self, x: Var, value: T, grad: Tensor<T>) -> Result<Var> {
        if grad.numel() != self.value(x).numel() {
            return Err(Error::Dimension("custom gradient shape".into()));
        }
        Ok(self.push(Tensor::new(vec![1, 1], vec![value])?, Op::Custom { x: x.0, grad }))
    }

    pub fn scalar_value(&self, v: Var) -> T {
        self.value(v).data()[0]
    }

    /// Reverse pass from a scalar node.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if self.value(loss).numel() != 1 {
            return Err(Error::Dimension("backward from a non-scalar node".into()));
        }
        self.backward_seeded(&[(loss, Tensor::scalar(T::one()))])
    }

    /// Reverse pass from arbitrary nodes with explicit upstream gradients.
    pub fn backward_seeded(&self, seeds: &[(Var, Tensor<T>)]) -> Result<Gradients<T>> {
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        let mut last = 0;
        for (v, g) in seeds {
            if g.numel() != self.value(*v).numel() {
                return Err(Error::Dimension("seed gradient shape".into()));
            }
            let slot = grad_slot(&mut grads, &self.nodes, v.0);
            for (s, &x) in slot.data_mut().iter_mut().zip(g.data()) {
                *s = *s + x;
            }
            last = last.max(v.0);
        }
        for i in (0..=last).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Gradients {
            node_grads: grads,
            param_nodes: self.param_nodes.clone(),
        })
    }

    fn backprop_node(&self, i: usize, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let nodes = &self.nodes;
        let out = &nodes[i].value;
        let gd = g.data();
        match &nodes[i].op {
            Op::Leaf => {}
            &Op::MatMul { a, b, trans_b } => {
                let (m, k) = nodes[a].value.dims2();
                let n = out.dims2().1;
                let av = nodes[a].value.data();
                let bv = nodes[b].value.data();
                {
                    let ga = grad_slot(grads, nodes, a);
                    // dA = G Bᵀ (or G B when B was transposed)
                    T::gemm(m, n, k, gd, false, bv, !trans_b, ga.data_mut(), true);
                }
                let gb = grad_slot(grads, nodes, b);
                if trans_b {
                    T::gemm(n, m, k, gd, true, av, false, gb.data_mut(), true);
                } else {
                    T::gemm(k, m, n, av, true, gd, false, gb.data_mut(), true);
                }
            }
            &Op::Add(a, b) => {
                add_into(grad_slot(grads, nodes, a).data_mut(), gd);
                add_into(grad_slot(grads, nodes, b).data_mut(), gd);
            }
            &Op::Mul(a, b) => {
                let av = nodes[a].value.data();
                let bv = nodes[b].value.data();
                for ((s, &gv), &y) in grad_slot(grads, nodes, a).data_mut().iter_mut().zip(gd).zip(bv) {
                    *s = *s + gv * y;
                }
                for ((s, &gv), &x) in grad_slot(grads, nodes, b).data_mut().iter_mut().zip(gd).zip(av) {
                    *s = *s + gv * x;
                }
            }
            &Op::AddRow { x, bias } => {
                add_into(grad_slot(grads, nodes, x).data_mut(), gd);
                let c = out.dims2().1;
                let gb = grad_slot(grads, nodes, bias);
                for row in gd.chunks(c.max(1)) {
                    add_into(gb.data_mut(), row);
                }
            }
            &Op::Scale { x, factor } => {
                for (s, &gv) in grad_slot(grads, nodes, x).data_mut().iter_mut().zip(gd) {
                    *s = *s + gv * factor;
                }
            }
            &Op::Relu(x) => {
                let y = out.data();
                for ((s, &gv), &yv) in grad_slot(grads, nodes, x).data_mut().iter_mut().zip(gd).zip(y) {
                    if yv > T::zero() {
                        *s = *s + gv;
                    }
                }
            }
            &Op::Tanh(x) => {
                let y = out.data();
                for ((s, &gv), &yv) in grad_slot(grads, nodes, x).data_mut().iter_mut().zip(gd).zip(y) {
                    *s = *s + gv * (T::one() - yv * yv);
                }
            }
            &Op::Sigmoid(x) => {
                let y = out.data();
                for ((s, &gv), &yv) in grad_slot(grads, nodes, x).data_mut().iter_mut().zip(gd).zip(y) {
                    *s = *s + gv * yv * (T::one() - yv);
                }
            }
            &Op::SoftmaxRows(x) => {
                let c = out.dims2().1.max(1);
                let gx = grad_slot(grads, nodes, x);
                for ((srow, grow), yrow) in gx.data_mut().chunks_mut(c).zip(gd.chunks(c)).zip(out.data().chunks(c)) {
                    let dot: T = grow.iter().zip(yrow).map(|(&a, &b)| a * b).sum();
                    for j in 0..srow.len() {
                        srow[j] = srow[j] + yrow[j] * (grow[j] - dot);
                    }
                }
            }
            &Op::LogSoftmaxRows(x) => {
                let c = out.dims2().1.max(1);
                let gx = grad_slot(grads, nodes, x);
                for ((srow, grow), yrow) in gx.data_mut().chunks_mut(c).zip(gd.chunks(c)).zip(out.data().chunks(c)) {
                    let total: T = grow.iter().copied().sum();
                    for j in 0..srow.len() {
                        srow[j] = srow[j] + grow[j] - yrow[j].exp() * total;
                    }
                }
            }
            Op::LayerNormRows { x, gain, bias, xhat, inv_std } => {
                let (x, gain, bias) = (*x, *gain, *bias);
                let c = out.dims2().1;
                let n = T::from_usize(c).unwrap();
                let gval = nodes[gain].value.data().to_vec();
                {
                    let gg = grad_slot(grads, nodes, gain);
                    for (grow, hrow) in gd.chunks(c).zip(xhat.chunks(c)) {
                        for j in 0..c {
                            gg.data_mut()[j] = gg.data()[j] + grow[j] * hrow[j];
                        }
                    }
                }
                {
                    let gb = grad_slot(grads, nodes, bias);
                    for grow in gd.chunks(c) {
                        add_into(gb.data_mut(), grow);
                    }
                }
                let gx = grad_slot(grads, nodes, x);
                let mut dxhat = vec![T::zero(); c];
                for (r, ((srow, grow), hrow)) in gx
                    .data_mut()
                    .chunks_mut(c)
                    .zip(gd.chunks(c))
                    .zip(xhat.chunks(c))
                    .enumerate()
                {
                    for j in 0..c {
                        dxhat[j] = grow[j] * gval[j];
                    }
                    let sum_d: T = dxhat.iter().copied().sum();
                    let sum_dh: T = dxhat.iter().zip(hrow).map(|(&a, &b)| a * b).sum();
                    let scale = inv_std[r] / n;
                    for j in 0..c {
                        srow[j] = srow[j] + scale * (n * dxhat[j] - sum_d - hrow[j] * sum_dh);
                    }
                }
            }
            &Op::SliceCols { x, start } => {
                let (r, len) = out.dims2();
                let c = nodes[x].value.dims2().1;
                let gx = grad_slot(grads, nodes, x);
                for i in 0..r {
                    for j in 0..len {
                        let s = &mut gx.data_mut()[i * c + start + j];
                        *s = *s + gd[i * len + j];
                    }
                }
            }
            &Op::SliceRows { x, start } => {
                let c = out.dims2().1;
                let gx = grad_slot(grads, nodes, x);
                add_into(&mut gx.data_mut()[start * c..start * c + gd.len()], gd);
            }
            Op::ConcatCols(parts) => {
                let (rows, total) = out.dims2();
                let mut offset = 0;
                for &p in parts {
                    let c = nodes[p].value.dims2().1;
                    let gp = grad_slot(grads, nodes, p);
                    for i in 0..rows {
                        add_into(
                            &mut gp.data_mut()[i * c..(i + 1) * c],
                            &gd[i * total + offset..i * total + offset + c],
                        );
                    }
                    offset += c;
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let n = nodes[p].value.numel();
                    add_into(grad_slot(grads, nodes, p).data_mut(), &gd[offset..offset + n]);
                    offset += n;
                }
            }
            &Op::Reshape(x) => add_into(grad_slot(grads, nodes, x).data_mut(), gd),
            Op::GatherRows { table, index } => {
                let c = out.dims2().1;
                let gt = grad_slot(grads, nodes, *table);
                for (k, &row) in index.iter().enumerate() {
                    add_into(&mut gt.data_mut()[row * c..(row + 1) * c], &gd[k * c..(k + 1) * c]);
                }
            }
            &Op::OuterAddRows { a, b } => {
                let (ta, j) = nodes[a].value.dims2();
                let sb = nodes[b].value.dims2().0;
                {
                    let ga = grad_slot(grads, nodes, a);
                    for t in 0..ta {
                        for s in 0..sb {
                            let off = (t * sb + s) * j;
                            add_into(&mut ga.data_mut()[t * j..(t + 1) * j], &gd[off..off + j]);
                        }
                    }
                }
                let gb = grad_slot(grads, nodes, b);
                for t in 0..ta {
                    for s in 0..sb {
                        let off = (t * sb + s) * j;
                        add_into(&mut gb.data_mut()[s * j..(s + 1) * j], &gd[off..off + j]);
                    }
                }
            }
            &Op::MeanRows(x) => {
                let (r, c) = nodes[x].value.dims2();
                let inv = T::one() / T::from_usize(r).unwrap();
                let gx = grad_slot(grads, nodes, x);
                for row in gx.data_mut().chunks_mut(c.max(1)) {
                    for (s, &gv) in row.iter_mut().zip(gd) {
                        *s = *s + gv * inv;
                    }
                }
            }
            Op::Pick { x, index } => {
                let gx = grad_slot(grads, nodes, *x);
                for (&i, &gv) in index.iter().zip(gd) {
                    gx.data_mut()[i] = gx.data()[i] + gv;
                }
            }
            &Op::Sum(x) => {
                let gv = gd[0];
                for s in grad_slot(grads, nodes, x).data_mut() {
                    *s = *s + gv;
                }
            }
            Op::Custom { x, grad } => {
                let gv = gd[0];
                for (s, &d) in grad_slot(grads, nodes, *x).data_mut().iter_mut().zip(grad.data()) {
                    *s = *s + gv * d;
                }
            }
        }
    }
}

fn grad_slot<'a, T: Scalar>(grads: &'a mut [Option<Tensor<T>>], nodes: &[Node<T>], i: usize) -> &'a mut Tensor<T> {
    grads[i].get_or_insert_with(|| Tensor::zeros(nodes[i].value.shape()))
}

fn add_into<T: Scalar>(dst: &mut [T], src: &[T]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d = *d + s;
    }
}

/// Result of a reverse pass.
pub struct Gradients<T: Scalar = f32> {
    node_grads: Vec<Option<Tensor<T>>>,
    param_nodes: Vec<Option<usize>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn grad(&self, v: Var) -> Option<&Tensor<T>> {
        self.node_grads[v.0].as_ref()
    }

    pub fn param_grad(&self, id: ParamId) -> Option<&Tensor<T>> {
        self.param_nodes[id.0].and_then(|n| self.node_grads[n].as_ref())
    }

    pub fn all_finite(&self) -> bool {
        self.node_grads.iter().flatten().all(Tensor::is_finite)
    }

    /// Adds parameter gradients into the store's gradient buffers.
    pub fn accumulate_into(&self, store: &mut ParamStore) {
        for id in store.ids().collect::<Vec<_>>() {
            if let Some(g) = self.param_grad(id) {
                let p = store.get_mut(id);
                for (s, v) in p.grad.data_mut().iter_mut().zip(g.data()) {
                    *s += v.to_f32().unwrap();
                }
            }
        }
    }
}
