//! Dynamically recorded computation graph and its reverse sweep.

use crate::conv::ConvGeometry;
use crate::error::{Result, TensorError};
use crate::gemm::{gemm, Operand};
use crate::{ParamSet, Real, Tensor};

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Store<R> {
    Owned(Vec<R>),
    Param(usize),
}

enum Op<R> {
    Leaf,
    Param(usize),
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, R),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    SliceCols { src: Var, start: usize },
    SliceRows { src: Var, start: usize },
    StackRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    Reshape(Var),
    PadRows(Var),
    Sum(Var),
    Softmax(Var),
    Conv2d {
        input: Var,
        kernel: Var,
        geom: ConvGeometry,
        cols: Vec<R>,
    },
    MaskedSse {
        pred: Var,
        target: Vec<R>,
        rows: Vec<bool>,
    },
    MaskedKl {
        pred: Var,
        // per element ln(p/q) - row KL, already divided by the row sum
        coeff: Vec<R>,
        rows: Vec<bool>,
    },
    MaskedXent {
        logits: Var,
        probs: Vec<R>,
        bins: Vec<usize>,
        rows: Vec<bool>,
    },
}

struct Node<R> {
    shape: Vec<usize>,
    store: Store<R>,
    op: Op<R>,
    needs_grad: bool,
}

/// Gradients produced by [`Graph::backward`].
#[derive(Debug)]
pub struct Gradients<R> {
    nodes: Vec<Option<Vec<R>>>,
    params: Vec<Vec<R>>,
}

impl<R: Real> Gradients<R> {
    /// Gradient of the loss with respect to a node, if one was produced.
    pub fn wrt(&self, v: Var) -> Option<&[R]> {
        self.nodes.get(v.0).and_then(|g| g.as_deref())
    }

    /// Gradient for parameter `index`; zeros when the parameter was unreachable.
    pub fn param(&self, index: usize) -> &[R] {
        &self.params[index]
    }

    pub fn params(&self) -> &[Vec<R>] {
        &self.params
    }

    pub fn into_params(self) -> Vec<Vec<R>> {
        self.params
    }
}

/// Tape of operations recorded during one forward evaluation.
pub struct Graph<'p, R: Real> {
    params: Option<&'p ParamSet<R>>,
    bound: Vec<Option<Var>>,
    nodes: Vec<Node<R>>,
}

fn rows_cols(shape: &[usize]) -> (usize, usize) {
    match shape {
        [] => (1, 1),
        [n] => (1, *n),
        [m, n] => (*m, *n),
        s => (s[..s.len() - 1].iter().product(), s[s.len() - 1]),
    }
}

impl<R: Real> Default for Graph<'_, R> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'p, R: Real> Graph<'p, R> {
    pub fn new() -> Self {
        Graph {
            params: None,
            bound: Vec::new(),
            nodes: Vec::new(),
        }
    }

    pub fn with_params(params: &'p ParamSet<R>) -> Self {
        Graph {
            params: Some(params),
            bound: vec![None; params.len()],
            nodes: Vec::with_capacity(1024),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, shape: Vec<usize>, data: Vec<R>, op: Op<R>, needs_grad: bool) -> Var {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        self.nodes.push(Node {
            shape,
            store: Store::Owned(data),
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn value(&self, v: Var) -> &[R] {
        match &self.nodes[v.0].store {
            Store::Owned(d) => d,
            Store::Param(i) => self
                .params
                .expect("param node without param set")
                .tensor(*i)
                .data(),
        }
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn tensor(&self, v: Var) -> Tensor<R> {
        Tensor::from_vec(self.shape(v), self.value(v).to_vec()).expect("node shape")
    }

    /// First element of a node, for scalar results.
    pub fn scalar(&self, v: Var) -> R {
        self.value(v)[0]
    }

    /// Leaf node; receives a gradient when `t.requires_grad` is set.
    pub fn input(&mut self, t: Tensor<R>) -> Var {
        let rg = t.requires_grad;
        let shape = t.shape().to_vec();
        self.push(shape, t.into_data(), Op::Leaf, rg)
    }

    /// Non-differentiable leaf.
    pub fn constant(&mut self, shape: &[usize], data: Vec<R>) -> Result<Var> {
        let t = Tensor::from_vec(shape, data)?;
        Ok(self.input(t))
    }

    /// Binds parameter `index` of the attached set (once per graph).
    pub fn param(&mut self, index: usize) -> Var {
        if let Some(v) = self.bound[index] {
            return v;
        }
        let params = self.params.expect("graph has no parameter set");
        let shape = params.tensor(index).shape().to_vec();
        self.nodes.push(Node {
            shape,
            store: Store::Param(index),
            op: Op::Param(index),
            needs_grad: true,
        });
        let v = Var(self.nodes.len() - 1);
        self.bound[index] = Some(v);
        v
    }

    pub fn param_named(&mut self, name: &str) -> Result<Var> {
        let index = self
            .params
            .and_then(|p| p.index_of(name))
            .ok_or_else(|| TensorError::Usage(format!("unknown parameter {name}")))?;
        Ok(self.param(index))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() > 2 || sb.len() > 2 {
            return Err(TensorError::dim("matmul", format!("{sa:?} x {sb:?}")));
        }
        let (m, k) = rows_cols(sa);
        let (k2, n) = rows_cols(sb);
        if k != k2 {
            return Err(TensorError::dim("matmul", format!("{sa:?} x {sb:?}")));
        }
        let mut out = vec![R::zero(); m * n];
        gemm(
            m,
            k,
            n,
            Operand::plain(self.value(a)),
            Operand::plain(self.value(b)),
            &mut out,
            false,
        );
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(vec![m, n], out, Op::MatMul(a, b), ng))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(TensorError::dim(
                op,
                format!("{:?} vs {:?}", self.shape(a), self.shape(b)),
            ));
        }
        Ok(())
    }

    fn zip_with(&mut self, a: Var, b: Var, op: Op<R>, f: impl Fn(R, R) -> R) -> Var {
        let out = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(&x, &y)| f(x, y))
            .collect();
        let ng = self.ng(a) || self.ng(b);
        let shape = self.shape(a).to_vec();
        self.push(shape, out, op, ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        Ok(self.zip_with(a, b, Op::Add(a, b), |x, y| x + y))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        Ok(self.zip_with(a, b, Op::Sub(a, b), |x, y| x - y))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        Ok(self.zip_with(a, b, Op::Mul(a, b), |x, y| x * y))
    }

    /// Adds vector `b` to every row of `a`.
    pub fn add_row(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, n) = rows_cols(self.shape(a));
        if self.value(b).len() != n {
            return Err(TensorError::dim(
                "add_row",
                format!("{:?} + row {:?}", self.shape(a), self.shape(b)),
            ));
        }
        let bv = self.value(b);
        let mut out = self.value(a).to_vec();
        for r in 0..m {
            for (o, &x) in out[r * n..(r + 1) * n].iter_mut().zip(bv) {
                *o += x;
            }
        }
        let ng = self.ng(a) || self.ng(b);
        let shape = self.shape(a).to_vec();
        Ok(self.push(shape, out, Op::AddRow(a, b), ng))
    }

    pub fn scale(&mut self, a: Var, s: R) -> Var {
        let out = self.value(a).iter().map(|&x| x * s).collect();
        let ng = self.ng(a);
        let shape = self.shape(a).to_vec();
        self.push(shape, out, Op::Scale(a, s), ng)
    }

    fn map(&mut self, a: Var, op: Op<R>, f: impl Fn(R) -> R) -> Var {
        let out = self.value(a).iter().map(|&x| f(x)).collect();
        let ng = self.ng(a);
        let shape = self.shape(a).to_vec();
        self.push(shape, out, op, ng)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.map(a, Op::Sigmoid(a), sigmoid)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.map(a, Op::Tanh(a), R::tanh)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.map(a, Op::Relu(a), |x| if x > R::zero() { x } else { R::zero() })
    }

    /// Columns `[start, start+len)` of a matrix.
    pub fn slice_cols(&mut self, src: Var, start: usize, len: usize) -> Result<Var> {
        let (m, n) = rows_cols(self.shape(src));
        if start + len > n {
            return Err(TensorError::dim(
                "slice_cols",
                format!("[{start}, {}) of {n} columns", start + len),
            ));
        }
        let v = self.value(src);
        let mut out = Vec::with_capacity(m * len);
        for r in 0..m {
            out.extend_from_slice(&v[r * n + start..r * n + start + len]);
        }
        let ng = self.ng(src);
        Ok(self.push(vec![m, len], out, Op::SliceCols { src, start }, ng))
    }

    /// Rows `[start, start+len)` of a matrix.
    pub fn slice_rows(&mut self, src: Var, start: usize, len: usize) -> Result<Var> {
        let (m, n) = rows_cols(self.shape(src));
        if start + len > m {
            return Err(TensorError::dim(
                "slice_rows",
                format!("[{start}, {}) of {m} rows", start + len),
            ));
        }
        let out = self.value(src)[start * n..(start + len) * n].to_vec();
        let ng = self.ng(src);
        Ok(self.push(vec![len, n], out, Op::SliceRows { src, start }, ng))
    }

    pub fn row(&mut self, src: Var, index: usize) -> Result<Var> {
        self.slice_rows(src, index, 1)
    }

    /// Vertical concatenation of matrices with equal column counts.
    pub fn stack_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| TensorError::dim("stack_rows", "no inputs"))?;
        let n = rows_cols(self.shape(*first)).1;
        let mut m = 0;
        let mut out = Vec::new();
        for &p in parts {
            let (pm, pn) = rows_cols(self.shape(p));
            if pn != n {
                return Err(TensorError::dim("stack_rows", format!("{pn} vs {n} columns")));
            }
            m += pm;
            out.extend_from_slice(self.value(p));
        }
        let ng = parts.iter().any(|&p| self.ng(p));
        Ok(self.push(vec![m, n], out, Op::StackRows(parts.to_vec()), ng))
    }

    /// Horizontal concatenation of matrices with equal row counts.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| TensorError::dim("concat_cols", "no inputs"))?;
        let m = rows_cols(self.shape(*first)).0;
        let widths: Vec<usize> = parts.iter().map(|&p| rows_cols(self.shape(p)).1).collect();
        for &p in parts {
            let pm = rows_cols(self.shape(p)).0;
            if pm != m {
                return Err(TensorError::dim("concat_cols", format!("{pm} vs {m} rows")));
            }
        }
        let n: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(m * n);
        for r in 0..m {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(p)[r * w..(r + 1) * w]);
            }
        }
        let ng = parts.iter().any(|&p| self.ng(p));
        Ok(self.push(vec![m, n], out, Op::ConcatCols(parts.to_vec()), ng))
    }

    pub fn reshape(&mut self, src: Var, shape: &[usize]) -> Result<Var> {
        if shape.iter().product::<usize>() != self.value(src).len() {
            return Err(TensorError::dim(
                "reshape",
                format!("{:?} -> {shape:?}", self.shape(src)),
            ));
        }
        let out = self.value(src).to_vec();
        let ng = self.ng(src);
        Ok(self.push(shape.to_vec(), out, Op::Reshape(src), ng))
    }

    /// Appends `extra` zero rows.
    pub fn pad_rows(&mut self, src: Var, extra: usize) -> Var {
        let (m, n) = rows_cols(self.shape(src));
        let mut out = self.value(src).to_vec();
        out.resize((m + extra) * n, R::zero());
        let ng = self.ng(src);
        self.push(vec![m + extra, n], out, Op::PadRows(src), ng)
    }

    pub fn sum(&mut self, src: Var) -> Var {
        let s = self.value(src).iter().copied().sum();
        let ng = self.ng(src);
        self.push(vec![], vec![s], Op::Sum(src), ng)
    }

    pub fn mean(&mut self, src: Var) -> Var {
        let n = self.value(src).len().max(1);
        let s = self.sum(src);
        self.scale(s, R::one() / R::of(n as f64))
    }

    /// Row-wise softmax over the first `valid` columns; later columns get 0.
    pub fn softmax_masked(&mut self, src: Var, valid: usize) -> Result<Var> {
        let (m, n) = rows_cols(self.shape(src));
        if n == 0 || valid == 0 || valid > n {
            return Err(TensorError::dim(
                "softmax",
                format!("{valid} valid of {n} positions"),
            ));
        }
        let v = self.value(src);
        let mut out = vec![R::zero(); m * n];
        for r in 0..m {
            softmax_into(&v[r * n..r * n + valid], &mut out[r * n..r * n + valid]);
        }
        let ng = self.ng(src);
        let shape = self.shape(src).to_vec();
        Ok(self.push(shape, out, Op::Softmax(src), ng))
    }

    pub fn softmax(&mut self, src: Var) -> Result<Var> {
        let n = rows_cols(self.shape(src)).1;
        self.softmax_masked(src, n)
    }

    /// Cross-correlation. `input` is `[T, F]` or `[T, F, C_in]`; `kernel` is
    /// `[C_out, k_t, k_f]` or `[C_out, k_t, k_f, C_in]`. Output `[T', F', C_out]`.
    pub fn conv2d(
        &mut self,
        input: Var,
        kernel: Var,
        stride: (usize, usize),
        padding: (usize, usize),
    ) -> Result<Var> {
        let (in_t, in_f, in_c) = match *self.shape(input) {
            [t, f] => (t, f, 1),
            [t, f, c] => (t, f, c),
            ref s => return Err(TensorError::dim("conv2d", format!("input shape {s:?}"))),
        };
        let (out_c, k_t, k_f, k_c) = match *self.shape(kernel) {
            [c, kt, kf] => (c, kt, kf, 1),
            [c, kt, kf, ci] => (c, kt, kf, ci),
            ref s => return Err(TensorError::dim("conv2d", format!("kernel shape {s:?}"))),
        };
        if k_c != in_c {
            return Err(TensorError::dim(
                "conv2d",
                format!("kernel expects {k_c} input channels, input has {in_c}"),
            ));
        }
        let geom = ConvGeometry {
            in_t,
            in_f,
            in_c,
            out_c,
            k_t,
            k_f,
            stride,
            padding,
        };
        geom.validate()?;
        let cols = geom.im2col(self.value(input));
        let p = geom.out_t() * geom.out_f();
        let mut out = vec![R::zero(); p * out_c];
        gemm(
            p,
            geom.patch_len(),
            out_c,
            Operand::plain(&cols),
            Operand::t(self.value(kernel)),
            &mut out,
            false,
        );
        let ng = self.ng(input) || self.ng(kernel);
        let shape = vec![geom.out_t(), geom.out_f(), out_c];
        Ok(self.push(
            shape,
            out,
            Op::Conv2d {
                input,
                kernel,
                geom,
                cols: if ng { cols } else { Vec::new() },
            },
            ng,
        ))
    }

    fn check_rows(&self, op: &'static str, v: Var, rows: &[bool]) -> Result<(usize, usize)> {
        let (m, n) = rows_cols(self.shape(v));
        if rows.len() != m {
            return Err(TensorError::dim(op, format!("mask of {} rows for {m} rows", rows.len())));
        }
        Ok((m, n))
    }

    /// Sum of squared differences over the rows marked valid.
    pub fn masked_sse(&mut self, pred: Var, target: &[R], rows: &[bool]) -> Result<Var> {
        let (_, n) = self.check_rows("masked_sse", pred, rows)?;
        if target.len() != self.value(pred).len() {
            return Err(TensorError::dim(
                "masked_sse",
                format!("target of {} values for {:?}", target.len(), self.shape(pred)),
            ));
        }
        let p = self.value(pred);
        let mut s = R::zero();
        for (r, &valid) in rows.iter().enumerate() {
            if valid {
                for j in r * n..(r + 1) * n {
                    let d = p[j] - target[j];
                    s += d * d;
                }
            }
        }
        let ng = self.ng(pred);
        Ok(self.push(
            vec![],
            vec![s],
            Op::MaskedSse {
                pred,
                target: target.to_vec(),
                rows: rows.to_vec(),
            },
            ng,
        ))
    }

    /// Sum over valid rows of KL(P‖Q), where each row of `pred` (P) and
    /// `target` (Q) is turned into a distribution after adding `floor`.
    pub fn masked_kl(&mut self, pred: Var, target: &[R], rows: &[bool], floor: R) -> Result<Var> {
        let (_, n) = self.check_rows("masked_kl", pred, rows)?;
        if target.len() != self.value(pred).len() {
            return Err(TensorError::dim(
                "masked_kl",
                format!("target of {} values for {:?}", target.len(), self.shape(pred)),
            ));
        }
        let p = self.value(pred);
        let mut coeff = vec![R::zero(); p.len()];
        let mut total = R::zero();
        for (r, &valid) in rows.iter().enumerate() {
            if !valid {
                continue;
            }
            let pr = &p[r * n..(r + 1) * n];
            let qr = &target[r * n..(r + 1) * n];
            let sp: R = pr.iter().map(|&x| x + floor).sum();
            let sq: R = qr.iter().map(|&x| x + floor).sum();
            let mut kl = R::zero();
            let c = &mut coeff[r * n..(r + 1) * n];
            for j in 0..n {
                let pj = (pr[j] + floor) / sp;
                let qj = (qr[j] + floor) / sq;
                let lr = (pj / qj).ln();
                c[j] = lr;
                kl += pj * lr;
            }
            for cj in c.iter_mut() {
                *cj = (*cj - kl) / sp;
            }
            total += kl;
        }
        let ng = self.ng(pred);
        Ok(self.push(
            vec![],
            vec![total],
            Op::MaskedKl {
                pred,
                coeff,
                rows: rows.to_vec(),
            },
            ng,
        ))
    }

    /// Sum over valid rows of `-log softmax(logits_row)[bin]`.
    pub fn masked_xent(&mut self, logits: Var, bins: &[usize], rows: &[bool]) -> Result<Var> {
        let (m, k) = self.check_rows("masked_xent", logits, rows)?;
        if bins.len() != m {
            return Err(TensorError::dim(
                "masked_xent",
                format!("{} labels for {m} rows", bins.len()),
            ));
        }
        if let Some(&b) = bins.iter().find(|&&b| b >= k) {
            return Err(TensorError::dim(
                "masked_xent",
                format!("label {b} outside {k} classes"),
            ));
        }
        let l = self.value(logits);
        let mut probs = vec![R::zero(); m * k];
        let mut total = R::zero();
        for r in 0..m {
            if !rows[r] {
                continue;
            }
            let row = &l[r * k..(r + 1) * k];
            let (am, mx) = row
                .iter()
                .copied()
                .enumerate()
                .fold((0, R::neg_infinity()), |b, (i, x)| if x > b.1 { (i, x) } else { b });
            // log-sum-exp relative to the maximum: ln(1 + Σ_{j≠max} e^{x_j − max})
            let rest = row
                .iter()
                .enumerate()
                .filter(|&(i, _)| i != am)
                .map(|(_, &x)| (x - mx).exp())
                .sum::<R>();
            let off = rest.ln_1p();
            total += (mx - row[bins[r]]) + off;
            for (p, &x) in probs[r * k..(r + 1) * k].iter_mut().zip(row) {
                *p = (x - mx - off).exp();
            }
        }
        let ng = self.ng(logits);
        Ok(self.push(
            vec![],
            vec![total],
            Op::MaskedXent {
                logits,
                probs,
                bins: bins.to_vec(),
                rows: rows.to_vec(),
            },
            ng,
        ))
    }

    /// Reverse sweep from a scalar node.
    pub fn backward(&self, loss: Var) -> Result<Gradients<R>> {
        if self.value(loss).len() != 1 {
            return Err(TensorError::Usage(format!(
                "backward needs a scalar root, got shape {:?}",
                self.shape(loss)
            )));
        }
        if !self.scalar(loss).is_finite() {
            return Err(TensorError::NonFinite("loss".into()));
        }
        let mut grads: Vec<Option<Vec<R>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![R::one()]);
        let param_len = self.params.map_or(0, ParamSet::len);
        let mut param_grads: Vec<Option<Vec<R>>> = vec![None; param_len];

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.propagate(node, &g, &mut grads);
            if let Op::Param(p) = node.op {
                param_grads[p] = Some(g.clone());
            }
            grads[idx] = Some(g);
        }

        let params = match self.params {
            Some(ps) => param_grads
                .into_iter()
                .enumerate()
                .map(|(i, g)| g.unwrap_or_else(|| vec![R::zero(); ps.tensor(i).len()]))
                .collect(),
            None => Vec::new(),
        };
        Ok(Gradients {
            nodes: grads,
            params,
        })
    }

    fn acc<'g>(&self, grads: &'g mut [Option<Vec<R>>], v: Var) -> Option<&'g mut Vec<R>> {
        if !self.ng(v) {
            return None;
        }
        let len = self.value(v).len();
        Some(grads[v.0].get_or_insert_with(|| vec![R::zero(); len]))
    }

    fn propagate(&self, node: &Node<R>, g: &[R], grads: &mut [Option<Vec<R>>]) {
        match &node.op {
            Op::Leaf | Op::Param(_) => {}
            Op::MatMul(a, b) => {
                let (m, k) = rows_cols(self.shape(*a));
                let n = rows_cols(self.shape(*b)).1;
                let (av, bv) = (self.value(*a), self.value(*b));
                if let Some(ga) = self.acc(grads, *a) {
                    gemm(m, n, k, Operand::plain(g), Operand::t(bv), ga, true);
                }
                if let Some(gb) = self.acc(grads, *b) {
                    gemm(k, m, n, Operand::t(av), Operand::plain(g), gb, true);
                }
            }
            Op::Add(a, b) => {
                for (v, sign) in [(*a, R::one()), (*b, R::one())] {
                    if let Some(gv) = self.acc(grads, v) {
                        gv.iter_mut().zip(g).for_each(|(x, &y)| *x += sign * y);
                    }
                }
            }
            Op::Sub(a, b) => {
                for (v, sign) in [(*a, R::one()), (*b, -R::one())] {
                    if let Some(gv) = self.acc(grads, v) {
                        gv.iter_mut().zip(g).for_each(|(x, &y)| *x += sign * y);
                    }
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if let Some(ga) = self.acc(grads, *a) {
                    for ((x, &y), &o) in ga.iter_mut().zip(g).zip(bv) {
                        *x += y * o;
                    }
                }
                if let Some(gb) = self.acc(grads, *b) {
                    for ((x, &y), &o) in gb.iter_mut().zip(g).zip(av) {
                        *x += y * o;
                    }
                }
            }
            Op::AddRow(a, b) => {
                if let Some(ga) = self.acc(grads, *a) {
                    ga.iter_mut().zip(g).for_each(|(x, &y)| *x += y);
                }
                let n = self.value(*b).len();
                if let Some(gb) = self.acc(grads, *b) {
                    for chunk in g.chunks(n) {
                        gb.iter_mut().zip(chunk).for_each(|(x, &y)| *x += y);
                    }
                }
            }
            Op::Scale(a, s) => {
                if let Some(ga) = self.acc(grads, *a) {
                    ga.iter_mut().zip(g).for_each(|(x, &y)| *x += y * *s);
                }
            }
            Op::Sigmoid(a) => {
                let out = owned(node);
                if let Some(ga) = self.acc(grads, *a) {
                    for ((x, &y), &o) in ga.iter_mut().zip(g).zip(out) {
                        *x += y * o * (R::one() - o);
                    }
                }
            }
            Op::Tanh(a) => {
                let out = owned(node);
                if let Some(ga) = self.acc(grads, *a) {
                    for ((x, &y), &o) in ga.iter_mut().zip(g).zip(out) {
                        *x += y * (R::one() - o * o);
                    }
                }
            }
            Op::Relu(a) => {
                let out = owned(node);
                if let Some(ga) = self.acc(grads, *a) {
                    for ((x, &y), &o) in ga.iter_mut().zip(g).zip(out) {
                        if o > R::zero() {
                            *x += y;
                        }
                    }
                }
            }
            Op::SliceCols { src, start } => {
                let n = rows_cols(self.shape(*src)).1;
                let (m, len) = rows_cols(&node.shape);
                if let Some(gs) = self.acc(grads, *src) {
                    for r in 0..m {
                        let dst = &mut gs[r * n + start..r * n + start + len];
                        dst.iter_mut()
                            .zip(&g[r * len..(r + 1) * len])
                            .for_each(|(x, &y)| *x += y);
                    }
                }
            }
            Op::SliceRows { src, start } => {
                let n = rows_cols(self.shape(*src)).1;
                if let Some(gs) = self.acc(grads, *src) {
                    gs[start * n..start * n + g.len()]
                        .iter_mut()
                        .zip(g)
                        .for_each(|(x, &y)| *x += y);
                }
            }
            Op::StackRows(parts) => {
                let mut off = 0;
                for &p in parts {
                    let len = self.value(p).len();
                    if let Some(gp) = self.acc(grads, p) {
                        gp.iter_mut()
                            .zip(&g[off..off + len])
                            .for_each(|(x, &y)| *x += y);
                    }
                    off += len;
                }
            }
            Op::ConcatCols(parts) => {
                let (m, n) = rows_cols(&node.shape);
                let mut col = 0;
                for &p in parts {
                    let w = rows_cols(self.shape(p)).1;
                    if let Some(gp) = self.acc(grads, p) {
                        for r in 0..m {
                            gp[r * w..(r + 1) * w]
                                .iter_mut()
                                .zip(&g[r * n + col..r * n + col + w])
                                .for_each(|(x, &y)| *x += y);
                        }
                    }
                    col += w;
                }
            }
            Op::Reshape(src) | Op::PadRows(src) => {
                if let Some(gs) = self.acc(grads, *src) {
                    let len = gs.len();
                    gs.iter_mut().zip(&g[..len]).for_each(|(x, &y)| *x += y);
                }
            }
            Op::Sum(src) => {
                if let Some(gs) = self.acc(grads, *src) {
                    gs.iter_mut().for_each(|x| *x += g[0]);
                }
            }
            Op::Softmax(src) => {
                let out = owned(node);
                let (m, n) = rows_cols(&node.shape);
                if let Some(gs) = self.acc(grads, *src) {
                    for r in 0..m {
                        let y = &out[r * n..(r + 1) * n];
                        let gy = &g[r * n..(r + 1) * n];
                        let dot: R = y.iter().zip(gy).map(|(&a, &b)| a * b).sum();
                        for j in 0..n {
                            gs[r * n + j] += y[j] * (gy[j] - dot);
                        }
                    }
                }
            }
            Op::Conv2d {
                input,
                kernel,
                geom,
                cols,
            } => {
                let p = geom.out_t() * geom.out_f();
                let pl = geom.patch_len();
                let oc = geom.out_c;
                if let Some(gk) = self.acc(grads, *kernel) {
                    gemm(oc, p, pl, Operand::t(g), Operand::plain(cols), gk, true);
                }
                if self.ng(*input) {
                    let mut dcols = vec![R::zero(); p * pl];
                    gemm(
                        p,
                        oc,
                        pl,
                        Operand::plain(g),
                        Operand::plain(self.value(*kernel)),
                        &mut dcols,
                        false,
                    );
                    if let Some(gi) = self.acc(grads, *input) {
                        geom.col2im(&dcols, gi);
                    }
                }
            }
            Op::MaskedSse { pred, target, rows } => {
                let n = rows_cols(self.shape(*pred)).1;
                let p = self.value(*pred);
                if let Some(gp) = self.acc(grads, *pred) {
                    let two = R::of(2.0) * g[0];
                    for (r, &valid) in rows.iter().enumerate() {
                        if valid {
                            for j in r * n..(r + 1) * n {
                                gp[j] += two * (p[j] - target[j]);
                            }
                        }
                    }
                }
            }
            Op::MaskedKl { pred, coeff, rows } => {
                let n = rows_cols(self.shape(*pred)).1;
                if let Some(gp) = self.acc(grads, *pred) {
                    for (r, &valid) in rows.iter().enumerate() {
                        if valid {
                            for j in r * n..(r + 1) * n {
                                gp[j] += g[0] * coeff[j];
                            }
                        }
                    }
                }
            }
            Op::MaskedXent {
                logits,
                probs,
                bins,
                rows,
            } => {
                let k = rows_cols(self.shape(*logits)).1;
                if let Some(gl) = self.acc(grads, *logits) {
                    for (r, &valid) in rows.iter().enumerate() {
                        if valid {
                            for j in 0..k {
                                let onehot = if j == bins[r] { R::one() } else { R::zero() };
                                gl[r * k + j] += g[0] * (probs[r * k + j] - onehot);
                            }
                        }
                    }
                }
            }
        }
    }
}

fn owned<R>(node: &Node<R>) -> &[R] {
    match &node.store {
        Store::Owned(d) => d,
        Store::Param(_) => unreachable!("activation nodes own their values"),
    }
}

pub(crate) fn sigmoid<R: Real>(x: R) -> R {
    if x >= R::zero() {
        R::one() / (R::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (R::one() + e)
    }
}

/// Max-subtracted softmax of `scores` written into `out`.
pub(crate) fn softmax_into<R: Real>(scores: &[R], out: &mut [R]) {
    let mx = scores.iter().copied().fold(R::neg_infinity(), R::max);
    let mut total = R::zero();
    for (o, &s) in out.iter_mut().zip(scores) {
        *o = (s - mx).exp();
        total += *o;
    }
    for o in out.iter_mut() {
        *o /= total;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::from_vec(shape, data.to_vec()).unwrap()
    }

    #[test]
    fn matmul_hand_example() {
        let mut g = Graph::<f64>::new();
        let a = g.input(t(&[2, 2], &[1., 2., 3., 4.]));
        let b = g.input(t(&[2, 1], &[1., 1.]));
        let c = g.matmul(a, b).unwrap();
        assert_eq!(g.value(c), &[3.0, 7.0]);
        assert_eq!(g.shape(c), &[2, 1]);
    }

    #[test]
    fn matmul_identity_and_zero() {
        let mut g = Graph::<f64>::new();
        let i = g.input(t(&[2, 2], &[1., 0., 0., 1.]));
        let z = g.input(t(&[2, 2], &[0.; 4]));
        let x = g.input(t(&[2, 3], &[1., -2., 3., 0.5, 7., -1.]));
        let ix = g.matmul(i, x).unwrap();
        assert_eq!(g.value(ix), g.value(x));
        let zx = g.matmul(z, x).unwrap();
        assert!(g.value(zx).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let mut g = Graph::<f64>::new();
        let a = g.input(Tensor::zeros(&[2, 3]));
        let b = g.input(Tensor::zeros(&[2, 3]));
        let err = g.matmul(a, b).unwrap_err().to_string();
        assert!(err.contains("[2, 3] x [2, 3]"), "{err}");
    }

    #[test]
    fn softmax_examples() {
        let mut g = Graph::<f64>::new();
        let a = g.input(t(&[4], &[2.0; 4]));
        let s = g.softmax(a).unwrap();
        for &v in g.value(s) {
            assert!((v - 0.25).abs() < 1e-15);
        }
        let b = g.input(t(&[2], &[1000.0, 0.0]));
        let s = g.softmax(b).unwrap();
        assert!((g.value(s)[0] - 1.0).abs() < 1e-12);
        assert!(g.value(s)[1] >= 0.0 && g.value(s)[1] < 1e-300);
        let c = g.input(t(&[2], &[0.0, 3f64.ln()]));
        let s = g.softmax(c).unwrap();
        assert!((g.value(s)[0] - 0.25).abs() < 1e-12);
        assert!((g.value(s)[1] - 0.75).abs() < 1e-12);
    }

    #[test]
    fn softmax_empty_is_error() {
        let mut g = Graph::<f64>::new();
        let a = g.input(Tensor::zeros(&[0]));
        assert!(matches!(g.softmax(a), Err(TensorError::Dimension { .. })));
    }

    #[test]
    fn masked_softmax_zeroes_tail() {
        let mut g = Graph::<f64>::new();
        let a = g.input(t(&[1, 4], &[0.3, -0.1, 5.0, 9.0]));
        let s = g.softmax_masked(a, 2).unwrap();
        let v = g.value(s);
        assert_eq!(&v[2..], &[0.0, 0.0]);
        assert!((v[0] + v[1] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn backward_of_sum_is_ones() {
        let mut g = Graph::<f64>::new();
        let x = g.input(t(&[2, 3], &[1., 2., 3., 4., 5., 6.]).with_grad());
        let s = g.sum(x);
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.wrt(x).unwrap(), &[1.0; 6]);
    }

    #[test]
    fn backward_of_square() {
        let mut g = Graph::<f64>::new();
        let x = g.input(t(&[1], &[3.0]).with_grad());
        let y = g.mul(x, x).unwrap();
        let s = g.sum(y);
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.wrt(x).unwrap(), &[6.0]);
    }

    #[test]
    fn backward_rejects_non_scalar_root() {
        let mut g = Graph::<f64>::new();
        let x = g.input(t(&[2], &[1.0, 2.0]).with_grad());
        assert!(matches!(g.backward(x), Err(TensorError::Usage(_))));
    }

    #[test]
    fn unreachable_params_get_zero_gradient() {
        let mut ps = ParamSet::new();
        ps.insert("used", t(&[2], &[1.0, 2.0]));
        ps.insert("unused", t(&[3], &[1.0, 2.0, 3.0]));
        let mut g = Graph::with_params(&ps);
        let u = g.param(0);
        let s = g.sum(u);
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.param(0), &[1.0, 1.0]);
        assert_eq!(grads.param(1), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn delta_kernel_is_identity() {
        let mut g = Graph::<f64>::new();
        let data: Vec<f64> = (0..35).map(|i| (i as f64 * 0.37).sin()).collect();
        let x = g.input(t(&[5, 7], &data));
        let mut k = vec![0.0; 9];
        k[4] = 1.0;
        let kv = g.input(t(&[1, 3, 3], &k));
        let y = g.conv2d(x, kv, (1, 1), (1, 1)).unwrap();
        assert_eq!(g.shape(y), &[5, 7, 1]);
        assert_eq!(g.value(y), &data[..]);
    }

    #[test]
    fn conv_oversized_kernel_is_dimension_error() {
        let mut g = Graph::<f64>::new();
        let x = g.input(Tensor::zeros(&[2, 2]));
        let k = g.input(Tensor::zeros(&[1, 5, 5]));
        assert!(matches!(
            g.conv2d(x, k, (1, 1), (0, 0)),
            Err(TensorError::Dimension { .. })
        ));
    }
}
