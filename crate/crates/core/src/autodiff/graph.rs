use super::{gemm, AutodiffError, ParamId, ParamStore, Scalar, Tensor};

/// Variance floor inside [`Graph::layer_norm`].
pub const LAYER_NORM_EPS: f64 = 1e-8;

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Value<T> {
    Owned(Tensor<T>),
    Param(ParamId),
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddBias(Var, Var),
    Broadcast(Var),
    Scale(Var, T),
    AddScalar(Var),
    Sigmoid(Var),
    Tanh(Var),
    Softsign(Var),
    Relu(Var),
    Exp(Var),
    Ln(Var),
    Abs(Var),
    Square(Var),
    LayerNorm { x: Var, gain: Var, bias: Var, xhat: Tensor<T>, inv_std: Vec<T> },
    Concat(Vec<Var>),
    Slice { a: Var, start: usize },
    Sum(Var),
    Mean(Var),
    RowSum(Var),
    Mse(Var, Var),
    Minimum(Var, Var),
    Clamp { a: Var, lo: T, hi: T },
}

#[derive(Debug)]
struct Node<T> {
    value: Value<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Gradients of a scalar root with respect to the parameters it reached.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, id: ParamId) -> Option<&Tensor<T>> {
        self.grads.get(id.0).and_then(Option::as_ref)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Tensor<T>)> {
        self.grads.iter().enumerate().filter_map(|(i, g)| g.as_ref().map(|g| (ParamId(i), g)))
    }
}

/// A single-use tape of operations over values from a [`ParamStore`].
///
/// Shape mismatches panic. Non-finite results are recorded and reported by
/// [`Graph::backward`].
pub struct Graph<'p, T: Scalar> {
    store: &'p ParamStore<T>,
    nodes: Vec<Node<T>>,
    param_vars: Vec<Option<Var>>,
    const_vars: Vec<Option<Var>>,
    fault: Option<&'static str>,
}

impl<'p, T: Scalar> Graph<'p, T> {
    pub fn new(store: &'p ParamStore<T>) -> Self {
        Self {
            store,
            nodes: Vec::new(),
            param_vars: vec![None; store.len()],
            const_vars: vec![None; store.len()],
            fault: None,
        }
    }

    pub fn store(&self) -> &'p ParamStore<T> {
        self.store
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Name of the first op that produced a non-finite value, if any.
    pub fn fault(&self) -> Option<&'static str> {
        self.fault
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        match &self.nodes[v.0].value {
            Value::Owned(t) => t,
            Value::Param(id) => self.store.value(*id),
        }
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.value(v).shape()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, needs_grad: bool, name: &'static str) -> Var {
        if self.fault.is_none() && !value.is_finite() {
            self.fault = Some(name);
        }
        self.nodes.push(Node { value: Value::Owned(value), op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Constant input.
    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, false, "input")
    }

    /// Trainable parameter; repeated calls return the same node.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars[id.0] {
            return v;
        }
        self.nodes.push(Node { value: Value::Param(id), op: Op::Param(id), needs_grad: true });
        let v = Var(self.nodes.len() - 1);
        self.param_vars[id.0] = Some(v);
        v
    }

    /// Parameter value used as a constant; no gradient flows to it.
    pub fn param_const(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.const_vars[id.0] {
            return v;
        }
        self.nodes.push(Node { value: Value::Param(id), op: Op::Leaf, needs_grad: false });
        let v = Var(self.nodes.len() - 1);
        self.const_vars[id.0] = Some(v);
        v
    }

    /// Copy of `a` cut from the tape.
    pub fn detach(&mut self, a: Var) -> Var {
        let t = self.value(a).clone();
        self.constant(t)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (m, _) = self.shape(a);
        let (_, n) = self.shape(b);
        let mut c = Tensor::zeros(m, n);
        gemm(self.value(a), false, self.value(b), false, &mut c, T::zero());
        let ng = self.ng(a) || self.ng(b);
        self.push(c, Op::MatMul(a, b), ng, "matmul")
    }

    fn zip(&mut self, a: Var, b: Var, f: impl Fn(T, T) -> T, op: Op<T>, name: &'static str) -> Var {
        let (ta, tb) = (self.value(a), self.value(b));
        assert_eq!(ta.shape(), tb.shape(), "{name}: shape mismatch");
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        let t = Tensor::new(ta.rows(), ta.cols(), data);
        let ng = self.ng(a) || self.ng(b);
        self.push(t, op, ng, name)
    }

    fn unary(&mut self, a: Var, f: impl Fn(T) -> T, op: Op<T>, name: &'static str) -> Var {
        let t = self.value(a).map(f);
        let ng = self.ng(a);
        self.push(t, op, ng, name)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.zip(a, b, |x, y| x + y, Op::Add(a, b), "add")
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.zip(a, b, |x, y| x - y, Op::Sub(a, b), "sub")
    }

    /// Hadamard product.
    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.zip(a, b, |x, y| x * y, Op::Mul(a, b), "mul")
    }

    /// Elementwise minimum; ties take the gradient path of `b`.
    pub fn minimum(&mut self, a: Var, b: Var) -> Var {
        self.zip(a, b, |x, y| if x < y { x } else { y }, Op::Minimum(a, b), "minimum")
    }

    /// Adds the `1 x n` row `b` to every row of `a`.
    pub fn add_bias(&mut self, a: Var, b: Var) -> Var {
        let (ta, tb) = (self.value(a), self.value(b));
        assert_eq!(tb.rows(), 1, "add_bias: bias must be a row");
        assert_eq!(ta.cols(), tb.cols(), "add_bias: width mismatch");
        let mut t = ta.clone();
        let n = ta.cols();
        for (i, x) in t.data_mut().iter_mut().enumerate() {
            *x += tb.data()[i % n];
        }
        let ng = self.ng(a) || self.ng(b);
        self.push(t, Op::AddBias(a, b), ng, "add_bias")
    }

    /// Expands a 1x1 tensor to `rows x cols`.
    pub fn broadcast(&mut self, a: Var, rows: usize, cols: usize) -> Var {
        let v = self.value(a).item();
        let ng = self.ng(a);
        self.push(Tensor::full(rows, cols, v), Op::Broadcast(a), ng, "broadcast")
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let k = T::from_f64_lossy(k);
        self.unary(a, |x| x * k, Op::Scale(a, k), "scale")
    }

    pub fn add_scalar(&mut self, a: Var, k: f64) -> Var {
        let k = T::from_f64_lossy(k);
        self.unary(a, |x| x + k, Op::AddScalar(a), "add_scalar")
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, |x| T::one() / (T::one() + (-x).exp()), Op::Sigmoid(a), "sigmoid")
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.tanh(), Op::Tanh(a), "tanh")
    }

    /// `x / (1 + |x|)`.
    pub fn softsign(&mut self, a: Var) -> Var {
        self.unary(a, |x| x / (T::one() + x.abs()), Op::Softsign(a), "softsign")
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.max(T::zero()), Op::Relu(a), "relu")
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.exp(), Op::Exp(a), "exp")
    }

    pub fn ln(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.ln(), Op::Ln(a), "ln")
    }

    pub fn abs(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.abs(), Op::Abs(a), "abs")
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(a, |x| x * x, Op::Square(a), "square")
    }

    /// Clamps into `[lo, hi]`; gradient passes only strictly inside.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        assert!(lo <= hi, "clamp: lo > hi");
        let (lo, hi) = (T::from_f64_lossy(lo), T::from_f64_lossy(hi));
        self.unary(a, |x| x.max(lo).min(hi), Op::Clamp { a, lo, hi }, "clamp")
    }

    /// Per-row normalization to zero mean and unit variance followed by
    /// `gain ⊙ x̂ + bias`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Var {
        let tx = self.value(x);
        let (rows, cols) = tx.shape();
        let (tg, tb) = (self.value(gain), self.value(bias));
        assert_eq!(tg.shape(), (1, cols), "layer_norm: gain shape");
        assert_eq!(tb.shape(), (1, cols), "layer_norm: bias shape");
        let n = T::from_usize(cols).unwrap();
        let eps = T::from_f64_lossy(LAYER_NORM_EPS);
        let mut xhat = Tensor::zeros(rows, cols);
        let mut out = Tensor::zeros(rows, cols);
        let mut inv_std = Vec::with_capacity(rows);
        for r in 0..rows {
            let row = tx.row_slice(r);
            let mean = row.iter().copied().sum::<T>() / n;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
            let is = T::one() / (var + eps).sqrt();
            inv_std.push(is);
            for c in 0..cols {
                let h = (row[c] - mean) * is;
                xhat.data_mut()[r * cols + c] = h;
                out.data_mut()[r * cols + c] = h * tg.data()[c] + tb.data()[c];
            }
        }
        let ng = self.ng(x) || self.ng(gain) || self.ng(bias);
        self.push(out, Op::LayerNorm { x, gain, bias, xhat, inv_std }, ng, "layer_norm")
    }

    /// Column-wise concatenation of equal-height tensors.
    pub fn concat(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat of nothing");
        let rows = self.shape(parts[0]).0;
        let cols: usize = parts.iter().map(|p| self.shape(*p).1).sum();
        let mut t = Tensor::zeros(rows, cols);
        let mut off = 0;
        for p in parts {
            let tp = self.value(*p);
            assert_eq!(tp.rows(), rows, "concat: row mismatch");
            let w = tp.cols();
            for r in 0..rows {
                t.data_mut()[r * cols + off..r * cols + off + w].copy_from_slice(tp.row_slice(r));
            }
            off += w;
        }
        let ng = parts.iter().any(|p| self.ng(*p));
        self.push(t, Op::Concat(parts.to_vec()), ng, "concat")
    }

    /// Columns `start..end`.
    pub fn slice(&mut self, a: Var, start: usize, end: usize) -> Var {
        let ta = self.value(a);
        assert!(start < end && end <= ta.cols(), "slice {start}..{end} of width {}", ta.cols());
        let w = end - start;
        let mut data = Vec::with_capacity(ta.rows() * w);
        for r in 0..ta.rows() {
            data.extend_from_slice(&ta.row_slice(r)[start..end]);
        }
        let t = Tensor::new(ta.rows(), w, data);
        let ng = self.ng(a);
        self.push(t, Op::Slice { a, start }, ng, "slice")
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().copied().sum::<T>();
        let ng = self.ng(a);
        self.push(Tensor::scalar(s), Op::Sum(a), ng, "sum")
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let ta = self.value(a);
        let s = ta.data().iter().copied().sum::<T>() / T::from_usize(ta.len()).unwrap();
        let ng = self.ng(a);
        self.push(Tensor::scalar(s), Op::Mean(a), ng, "mean")
    }

    /// Sums each row into a `rows x 1` column.
    pub fn row_sum(&mut self, a: Var) -> Var {
        let ta = self.value(a);
        let data = (0..ta.rows()).map(|r| ta.row_slice(r).iter().copied().sum::<T>()).collect();
        let t = Tensor::new(ta.rows(), 1, data);
        let ng = self.ng(a);
        self.push(t, Op::RowSum(a), ng, "row_sum")
    }

    /// `(1/n) Σ (a − b)²` over all entries.
    pub fn mse(&mut self, a: Var, b: Var) -> Var {
        let (ta, tb) = (self.value(a), self.value(b));
        assert_eq!(ta.shape(), tb.shape(), "mse: shape mismatch");
        let s = ta.data().iter().zip(tb.data()).map(|(&x, &y)| (x - y) * (x - y)).sum::<T>();
        let v = s / T::from_usize(ta.len()).unwrap();
        let ng = self.ng(a) || self.ng(b);
        self.push(Tensor::scalar(v), Op::Mse(a, b), ng, "mse")
    }

    /// `Σ|θ|` over trainable parameters `ids`.
    pub fn l1_penalty(&mut self, ids: &[super::ParamId]) -> Var {
        let mut acc: Option<Var> = None;
        for id in ids {
            let p = self.param(*id);
            let a = self.abs(p);
            let s = self.sum(a);
            acc = Some(match acc {
                Some(x) => self.add(x, s),
                None => s,
            });
        }
        acc.unwrap_or_else(|| self.constant(Tensor::scalar(T::zero())))
    }

    /// Reverse sweep from a 1x1 `root`.
    pub fn backward(&self, root: Var) -> Result<Gradients<T>, AutodiffError> {
        let (rows, cols) = self.shape(root);
        if (rows, cols) != (1, 1) {
            return Err(AutodiffError::NotScalar { rows, cols });
        }
        if let Some(op) = self.fault {
            return Err(AutodiffError::NonFinite { op });
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        let mut out = Gradients { grads: vec![None; self.store.len()] };
        grads[root.0] = Some(Tensor::scalar(T::one()));
        for i in (0..=root.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let Some(dy) = grads[i].take() else { continue };
            self.backprop(i, &dy, &mut grads, &mut out);
        }
        for g in out.grads.iter().flatten() {
            if !g.is_finite() {
                return Err(AutodiffError::NonFinite { op: "backward" });
            }
        }
        Ok(out)
    }

    fn acc<'g>(&self, grads: &'g mut [Option<Tensor<T>>], v: Var) -> Option<&'g mut Tensor<T>> {
        if !self.nodes[v.0].needs_grad {
            return None;
        }
        let (r, c) = self.shape(v);
        Some(grads[v.0].get_or_insert_with(|| Tensor::zeros(r, c)))
    }

    fn acc_map(&self, grads: &mut [Option<Tensor<T>>], v: Var, dy: &Tensor<T>, f: impl Fn(usize, T) -> T) {
        if let Some(g) = self.acc(grads, v) {
            for (i, (gx, &d)) in g.data_mut().iter_mut().zip(dy.data()).enumerate() {
                *gx += f(i, d);
            }
        }
    }

    fn backprop(&self, i: usize, dy: &Tensor<T>, grads: &mut [Option<Tensor<T>>], out: &mut Gradients<T>) {
        let y = self.value(Var(i));
        let one = T::one();
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::Param(id) => match &mut out.grads[id.0] {
                Some(g) => g.add_assign(dy),
                slot => *slot = Some(dy.clone()),
            },
            Op::MatMul(a, b) => {
                if let Some(ga) = self.acc(grads, *a) {
                    gemm(dy, false, self.value(*b), true, ga, one);
                }
                if let Some(gb) = self.acc(grads, *b) {
                    gemm(self.value(*a), true, dy, false, gb, one);
                }
            }
            Op::Add(a, b) => {
                self.acc_map(grads, *a, dy, |_, d| d);
                self.acc_map(grads, *b, dy, |_, d| d);
            }
            Op::Sub(a, b) => {
                self.acc_map(grads, *a, dy, |_, d| d);
                self.acc_map(grads, *b, dy, |_, d| -d);
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                self.acc_map(grads, *a, dy, |k, d| d * tb.data()[k]);
                self.acc_map(grads, *b, dy, |k, d| d * ta.data()[k]);
            }
            Op::Minimum(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                self.acc_map(grads, *a, dy, |k, d| if ta.data()[k] < tb.data()[k] { d } else { T::zero() });
                self.acc_map(grads, *b, dy, |k, d| if ta.data()[k] < tb.data()[k] { T::zero() } else { d });
            }
            Op::AddBias(a, b) => {
                self.acc_map(grads, *a, dy, |_, d| d);
                if let Some(gb) = self.acc(grads, *b) {
                    let n = dy.cols();
                    for (k, &d) in dy.data().iter().enumerate() {
                        gb.data_mut()[k % n] += d;
                    }
                }
            }
            Op::Broadcast(a) => {
                let s = dy.data().iter().copied().sum::<T>();
                if let Some(g) = self.acc(grads, *a) {
                    g.data_mut()[0] += s;
                }
            }
            Op::Scale(a, k) => self.acc_map(grads, *a, dy, |_, d| d * *k),
            Op::AddScalar(a) => self.acc_map(grads, *a, dy, |_, d| d),
            Op::Sigmoid(a) => self.acc_map(grads, *a, dy, |k, d| {
                let s = y.data()[k];
                d * s * (one - s)
            }),
            Op::Tanh(a) => self.acc_map(grads, *a, dy, |k, d| {
                let t = y.data()[k];
                d * (one - t * t)
            }),
            Op::Softsign(a) => {
                let ta = self.value(*a);
                self.acc_map(grads, *a, dy, |k, d| {
                    let q = one + ta.data()[k].abs();
                    d / (q * q)
                })
            }
            Op::Relu(a) => {
                let ta = self.value(*a);
                self.acc_map(grads, *a, dy, |k, d| if ta.data()[k] > T::zero() { d } else { T::zero() })
            }
            Op::Exp(a) => self.acc_map(grads, *a, dy, |k, d| d * y.data()[k]),
            Op::Ln(a) => {
                let ta = self.value(*a);
                self.acc_map(grads, *a, dy, |k, d| d / ta.data()[k])
            }
            Op::Abs(a) => {
                let ta = self.value(*a);
                self.acc_map(grads, *a, dy, |k, d| {
                    let x = ta.data()[k];
                    if x > T::zero() {
                        d
                    } else if x < T::zero() {
                        -d
                    } else {
                        T::zero()
                    }
                })
            }
            Op::Square(a) => {
                let ta = self.value(*a);
                let two = one + one;
                self.acc_map(grads, *a, dy, |k, d| two * d * ta.data()[k])
            }
            Op::Clamp { a, lo, hi } => {
                let ta = self.value(*a);
                self.acc_map(grads, *a, dy, |k, d| {
                    let x = ta.data()[k];
                    if x > *lo && x < *hi {
                        d
                    } else {
                        T::zero()
                    }
                })
            }
            Op::LayerNorm { x, gain, bias, xhat, inv_std } => {
                let (rows, cols) = dy.shape();
                let tg = self.value(*gain);
                if let Some(gg) = self.acc(grads, *gain) {
                    for r in 0..rows {
                        for c in 0..cols {
                            gg.data_mut()[c] += dy.get(r, c) * xhat.get(r, c);
                        }
                    }
                }
                if let Some(gb) = self.acc(grads, *bias) {
                    for r in 0..rows {
                        for c in 0..cols {
                            gb.data_mut()[c] += dy.get(r, c);
                        }
                    }
                }
                if let Some(gx) = self.acc(grads, *x) {
                    let n = T::from_usize(cols).unwrap();
                    let mut dh = vec![T::zero(); cols];
                    for r in 0..rows {
                        let mut m1 = T::zero();
                        let mut m2 = T::zero();
                        for c in 0..cols {
                            dh[c] = dy.get(r, c) * tg.data()[c];
                            m1 += dh[c];
                            m2 += dh[c] * xhat.get(r, c);
                        }
                        m1 = m1 / n;
                        m2 = m2 / n;
                        for c in 0..cols {
                            gx.data_mut()[r * cols + c] += inv_std[r] * (dh[c] - m1 - xhat.get(r, c) * m2);
                        }
                    }
                }
            }
            Op::Concat(parts) => {
                let cols = dy.cols();
                let mut off = 0;
                for p in parts {
                    let w = self.shape(*p).1;
                    if let Some(g) = self.acc(grads, *p) {
                        for r in 0..dy.rows() {
                            for c in 0..w {
                                g.data_mut()[r * w + c] += dy.data()[r * cols + off + c];
                            }
                        }
                    }
                    off += w;
                }
            }
            Op::Slice { a, start } => {
                let w = dy.cols();
                let cols = self.shape(*a).1;
                if let Some(g) = self.acc(grads, *a) {
                    for r in 0..dy.rows() {
                        for c in 0..w {
                            g.data_mut()[r * cols + start + c] += dy.data()[r * w + c];
                        }
                    }
                }
            }
            Op::Sum(a) => {
                let d = dy.item();
                self.acc_map(grads, *a, &Tensor::full(self.shape(*a).0, self.shape(*a).1, d), |_, d| d)
            }
            Op::Mean(a) => {
                let (r, c) = self.shape(*a);
                let d = dy.item() / T::from_usize(r * c).unwrap();
                if let Some(g) = self.acc(grads, *a) {
                    g.data_mut().iter_mut().for_each(|x| *x += d);
                }
            }
            Op::RowSum(a) => {
                let cols = self.shape(*a).1;
                if let Some(g) = self.acc(grads, *a) {
                    for (k, x) in g.data_mut().iter_mut().enumerate() {
                        *x += dy.data()[k / cols];
                    }
                }
            }
            Op::Mse(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let k2 = (one + one) * dy.item() / T::from_usize(ta.len()).unwrap();
                if let Some(g) = self.acc(grads, *a) {
                    for (k, x) in g.data_mut().iter_mut().enumerate() {
                        *x += k2 * (ta.data()[k] - tb.data()[k]);
                    }
                }
                if let Some(g) = self.acc(grads, *b) {
                    for (k, x) in g.data_mut().iter_mut().enumerate() {
                        *x += k2 * (tb.data()[k] - ta.data()[k]);
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn store1(v: &[f64]) -> (ParamStore<f64>, ParamId) {
        let mut s = ParamStore::new();
        let id = s.add("x", Tensor::from_f64(1, v.len(), v));
        (s, id)
    }

    #[test]
    fn activation_values() {
        let s = ParamStore::<f64>::new();
        let mut g = Graph::new(&s);
        let x = g.constant(Tensor::row(vec![0.0, 1.0, -3.0, 1e6]));
        let ss = g.softsign(x);
        assert_eq!(g.value(ss).data()[..2], [0.0, 0.5]);
        assert!(g.value(ss).data().iter().all(|v| v.abs() < 1.0));
        let z = g.constant(Tensor::row(vec![0.0]));
        let sg = g.sigmoid(z);
        let th = g.tanh(z);
        assert_eq!(g.value(sg).item(), 0.5);
        assert_eq!(g.value(th).item(), 0.0);
    }

    #[test]
    fn mse_identity_and_hand_derivative() {
        let (s, id) = store1(&[3.0]);
        let mut g = Graph::new(&s);
        let x = g.param(id);
        let same = g.mse(x, x);
        assert_eq!(g.value(same).item(), 0.0);
        let zero = g.constant(Tensor::row(vec![0.0]));
        let l = g.mse(x, zero);
        let grads = g.backward(l).unwrap();
        assert_eq!(grads.get(id).unwrap().item(), 6.0);
    }

    #[test]
    fn grad_of_sum_tanh_at_zero_is_one() {
        let (s, id) = store1(&[0.0; 5]);
        let mut g = Graph::new(&s);
        let x = g.param(id);
        let t = g.tanh(x);
        let l = g.sum(t);
        let grads = g.backward(l).unwrap();
        assert_eq!(grads.get(id).unwrap().data(), &[1.0; 5]);
    }

    #[test]
    fn non_scalar_root_is_rejected() {
        let (s, id) = store1(&[1.0, 2.0]);
        let mut g = Graph::new(&s);
        let x = g.param(id);
        assert!(matches!(g.backward(x), Err(AutodiffError::NotScalar { rows: 1, cols: 2 })));
    }

    #[test]
    fn non_finite_trips_fault() {
        let (s, id) = store1(&[-1.0]);
        let mut g = Graph::new(&s);
        let x = g.param(id);
        let l = g.ln(x);
        assert_eq!(g.fault(), Some("ln"));
        assert!(matches!(g.backward(l), Err(AutodiffError::NonFinite { op: "ln" })));
    }

    #[test]
    fn layer_norm_moments() {
        let s = ParamStore::<f64>::new();
        let mut g = Graph::new(&s);
        let x = g.constant(Tensor::from_f64(2, 4, &[1.0, 2.0, 3.0, 10.0, -0.1, 0.05, 0.3, 0.0]));
        let gain = g.constant(Tensor::full(1, 4, 1.0));
        let bias = g.constant(Tensor::zeros(1, 4));
        let y = g.layer_norm(x, gain, bias);
        for r in 0..2 {
            let row = g.value(y).row_slice(r);
            let m: f64 = row.iter().sum::<f64>() / 4.0;
            let v: f64 = row.iter().map(|a| (a - m) * (a - m)).sum::<f64>() / 4.0;
            assert!(m.abs() < 1e-12);
            assert!((v - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn minimum_ties_follow_second_argument() {
        let (s, id) = store1(&[1.0]);
        let mut g = Graph::new(&s);
        let x = g.param(id);
        let c = g.clamp(x, 1.0, 1.0);
        let m = g.minimum(x, c);
        let grads = g.backward(m).unwrap();
        assert_eq!(grads.get(id).unwrap().item(), 0.0);
    }

    #[test]
    fn const_params_get_no_gradient() {
        let (s, id) = store1(&[2.0]);
        let mut g = Graph::new(&s);
        let a = g.param_const(id);
        let b = g.param(id);
        let p = g.mul(a, b);
        let grads = g.backward(p).unwrap();
        assert_relative_eq!(grads.get(id).unwrap().item(), 2.0);
    }

    #[test]
    fn reused_param_accumulates() {
        let (s, id) = store1(&[3.0]);
        let mut g = Graph::new(&s);
        let a = g.param(id);
        let b = g.param(id);
        assert_eq!(a, b);
        let p = g.mul(a, b);
        let grads = g.backward(p).unwrap();
        assert_relative_eq!(grads.get(id).unwrap().item(), 6.0);
    }
}
