//! Reverse-mode automatic differentiation over dense row-major matrices.
//!
//! Parameters live in a [`ParamStore`]; a [`Graph`] borrows the store,
//! records operations and produces [`Gradients`] that are accumulated back
//! into the store before an optimizer step. Everything is generic over
//! [`Scalar`] so the same model code runs in `f32` for training and `f64`
//! for gradient checks.

mod checkpoint;
mod gradcheck;
mod graph;
mod optim;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use gradcheck::{check_every_op, check_gradients, relative_error, GradCheckReport};
pub use graph::{Gradients, Graph, Var, LAYER_NORM_EPS};
pub use optim::{clip_grad_norm, grad_norm, Adam};

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::AddAssign;

use num_traits::{Float, FromPrimitive, ToPrimitive};
use rand::Rng;

#[derive(Debug, thiserror::Error)]
pub enum AutodiffError {
    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },
    #[error("backward root must be 1x1, got {rows}x{cols}")]
    NotScalar { rows: usize, cols: usize },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Floating point element type with a GEMM kernel.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Default + Debug + Display + Send + Sync + Sum + AddAssign + 'static
{
    /// `c = alpha * a b + beta * c` with explicit strides, as in `matrixmultiply`.
    ///
    /// # Safety
    /// Pointers and strides must describe valid `m x k`, `k x n` and `m x n` views.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );

    fn from_f64_lossy(x: f64) -> Self {
        Self::from_f64(x).expect("f64 converts to every Scalar")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().expect("Scalar converts to f64")
    }
}

impl Scalar for f32 {
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: f32,
        a: *const f32,
        rsa: isize,
        csa: isize,
        b: *const f32,
        rsb: isize,
        csb: isize,
        beta: f32,
        c: *mut f32,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc);
    }
}

impl Scalar for f64 {
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: f64,
        a: *const f64,
        rsa: isize,
        csa: isize,
        b: *const f64,
        rsb: isize,
        csb: isize,
        beta: f64,
        c: *mut f64,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc);
    }
}

/// Dense row-major matrix. Vectors are `1 x n` rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn new(rows: usize, cols: usize, data: Vec<T>) -> Self {
        assert_eq!(rows * cols, data.len(), "tensor data length does not match {rows}x{cols}");
        Self { rows, cols, data }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::full(rows, cols, T::zero())
    }

    pub fn full(rows: usize, cols: usize, v: T) -> Self {
        Self { rows, cols, data: vec![v; rows * cols] }
    }

    pub fn scalar(v: T) -> Self {
        Self { rows: 1, cols: 1, data: vec![v] }
    }

    pub fn row(data: Vec<T>) -> Self {
        Self { rows: 1, cols: data.len(), data }
    }

    pub fn from_f64(rows: usize, cols: usize, data: &[f64]) -> Self {
        Self::new(rows, cols, data.iter().map(|&x| T::from_f64_lossy(x)).collect())
    }

    /// Entries drawn from U(-bound, bound).
    pub fn uniform<R: Rng + ?Sized>(rows: usize, cols: usize, bound: f64, rng: &mut R) -> Self {
        let data = (0..rows * cols)
            .map(|_| T::from_f64_lossy(rng.gen_range(-bound..=bound)))
            .collect();
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn get(&self, r: usize, c: usize) -> T {
        self.data[r * self.cols + c]
    }

    pub fn row_slice(&self, r: usize) -> &[T] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// The single value of a 1x1 tensor.
    pub fn item(&self) -> T {
        assert_eq!(self.data.len(), 1, "item() on a {}x{} tensor", self.rows, self.cols);
        self.data[0]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self { rows: self.rows, cols: self.cols, data: self.data.iter().map(|&x| f(x)).collect() }
    }

    pub fn fill(&mut self, v: T) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    pub fn add_assign(&mut self, other: &Tensor<T>) {
        assert_eq!(self.shape(), other.shape(), "add_assign shape mismatch");
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn sum_f64(&self) -> f64 {
        self.data.iter().map(|x| x.as_f64()).sum()
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.data.iter().map(|x| x.as_f64()).collect()
    }

    /// Copies rows `idx` into a new tensor.
    pub fn gather_rows(&self, idx: &[usize]) -> Self {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(self.row_slice(i));
        }
        Self { rows: idx.len(), cols: self.cols, data }
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|x| U::from_f64_lossy(x.as_f64())).collect(),
        }
    }
}

/// `c = op(a) op(b) + beta c`, where `op` transposes when the flag is set.
pub fn gemm<T: Scalar>(a: &Tensor<T>, ta: bool, b: &Tensor<T>, tb: bool, c: &mut Tensor<T>, beta: T) {
    let (m, k, rsa, csa) = if ta {
        (a.cols, a.rows, 1isize, a.cols as isize)
    } else {
        (a.rows, a.cols, a.cols as isize, 1isize)
    };
    let (k2, n, rsb, csb) = if tb {
        (b.cols, b.rows, 1isize, b.cols as isize)
    } else {
        (b.rows, b.cols, b.cols as isize, 1isize)
    };
    assert_eq!(k, k2, "matmul inner dimensions differ: {:?} x {:?}", a.shape(), b.shape());
    assert_eq!((c.rows, c.cols), (m, n), "matmul output shape");
    if m == 0 || n == 0 {
        return;
    }
    // SAFETY: the views above lie inside the three buffers, checked by the asserts.
    unsafe {
        T::gemm_raw(
            m,
            k,
            n,
            T::one(),
            a.data.as_ptr(),
            rsa,
            csa,
            b.data.as_ptr(),
            rsb,
            csb,
            beta,
            c.data.as_mut_ptr(),
            c.cols as isize,
            1,
        );
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

#[derive(Debug, Clone, PartialEq)]
pub struct Param<T> {
    pub name: String,
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
}

/// Named trainable tensors and their gradient buffers.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore<T> {
    params: Vec<Param<T>>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self { params: Vec::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>) -> ParamId {
        let name = name.into();
        assert!(self.find(&name).is_none(), "duplicate parameter name {name}");
        let grad = Tensor::zeros(value.rows, value.cols);
        self.params.push(Param { name, value, grad });
        ParamId(self.params.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.params[id.0].name
    }

    pub fn value(&self, id: ParamId) -> &Tensor<T> {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.params[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> &Tensor<T> {
        &self.params[id.0].grad
    }

    pub fn grad_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.params[id.0].grad
    }

    pub fn params(&self) -> &[Param<T>] {
        &self.params
    }

    /// Total number of scalar parameters in `ids`.
    pub fn count(&self, ids: &[ParamId]) -> usize {
        ids.iter().map(|id| self.value(*id).len()).sum()
    }

    pub fn total_count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn zero_grad(&mut self, ids: &[ParamId]) {
        for id in ids {
            self.params[id.0].grad.fill(T::zero());
        }
    }

    pub fn accumulate(&mut self, grads: &Gradients<T>) {
        for (id, g) in grads.iter() {
            self.params[id.0].grad.add_assign(g);
        }
    }

    /// `Σ|θ|` over `ids`.
    pub fn l1_norm(&self, ids: &[ParamId]) -> f64 {
        ids.iter()
            .flat_map(|id| self.value(*id).data().iter())
            .map(|x| x.as_f64().abs())
            .sum()
    }

    /// Copies values of `src` into `dst` (same shapes).
    pub fn copy_values(&mut self, src: &[ParamId], dst: &[ParamId]) {
        assert_eq!(src.len(), dst.len());
        for (s, d) in src.iter().zip(dst) {
            let v = self.params[s.0].value.clone();
            assert_eq!(v.shape(), self.params[d.0].value.shape(), "copy_values shape mismatch");
            self.params[d.0].value = v;
        }
    }

    /// `dst = tau * src + (1 - tau) * dst`.
    pub fn polyak(&mut self, src: &[ParamId], dst: &[ParamId], tau: f64) {
        assert_eq!(src.len(), dst.len());
        let tau = T::from_f64_lossy(tau);
        let keep = T::one() - tau;
        for (s, d) in src.iter().zip(dst) {
            assert_ne!(s, d);
            let (lo, hi) = if s.0 < d.0 { (s.0, d.0) } else { (d.0, s.0) };
            let (a, b) = self.params.split_at_mut(hi);
            let (sp, dp) = if s.0 < d.0 { (&a[lo], &mut b[0]) } else { (&b[0], &mut a[lo]) };
            assert_eq!(sp.value.shape(), dp.value.shape(), "polyak shape mismatch");
            for (x, &y) in dp.value.data.iter_mut().zip(&sp.value.data) {
                *x = tau * y + keep * *x;
            }
        }
    }

    /// SHA-256 over names, shapes and little-endian f32 values of `ids`.
    pub fn checksum(&self, ids: &[ParamId]) -> [u8; 32] {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        for id in ids {
            let p = &self.params[id.0];
            h.update(p.name.as_bytes());
            h.update((p.value.rows as u64).to_le_bytes());
            h.update((p.value.cols as u64).to_le_bytes());
            for x in &p.value.data {
                h.update(x.to_f32().unwrap_or(f32::NAN).to_le_bytes());
            }
        }
        h.finalize().into()
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            params: self
                .params
                .iter()
                .map(|p| Param { name: p.name.clone(), value: p.value.cast(), grad: p.grad.cast() })
                .collect(),
        }
    }
}

/// Fully connected layer `y = x W + b`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
    pub input: usize,
    pub output: usize,
}

impl Linear {
    /// Weights and bias from U(-1/sqrt(input), 1/sqrt(input)).
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        input: usize,
        output: usize,
        rng: &mut R,
    ) -> Self {
        let bound = 1.0 / (input as f64).sqrt();
        let w = store.add(format!("{name}.w"), Tensor::uniform(input, output, bound, rng));
        let b = store.add(format!("{name}.b"), Tensor::uniform(1, output, bound, rng));
        Self { w, b, input, output }
    }

    pub fn ids(&self) -> [ParamId; 2] {
        [self.w, self.b]
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var) -> Var {
        let w = g.param(self.w);
        let b = g.param(self.b);
        let y = g.matmul(x, w);
        g.add_bias(y, b)
    }

    /// [`Linear::forward`] or [`Linear::forward_frozen`].
    pub fn apply<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var, frozen: bool) -> Var {
        if frozen {
            self.forward_frozen(g, x)
        } else {
            self.forward(g, x)
        }
    }

    /// Forward pass that treats the weights as constants.
    pub fn forward_frozen<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var) -> Var {
        let w = g.param_const(self.w);
        let b = g.param_const(self.b);
        let y = g.matmul(x, w);
        g.add_bias(y, b)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn gemm_with_transposes() {
        let a = Tensor::<f64>::from_f64(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let b = Tensor::<f64>::from_f64(3, 2, &[7.0, 8.0, 9.0, 10.0, 11.0, 12.0]);
        let mut c = Tensor::zeros(2, 2);
        gemm(&a, false, &b, false, &mut c, 0.0);
        assert_eq!(c.data(), &[58.0, 64.0, 139.0, 154.0]);
        let mut d = Tensor::zeros(3, 3);
        gemm(&a, true, &a, false, &mut d, 0.0);
        assert_eq!(d.data(), &[17.0, 22.0, 27.0, 22.0, 29.0, 36.0, 27.0, 36.0, 45.0]);
        let mut e = Tensor::zeros(2, 2);
        gemm(&a, false, &a, true, &mut e, 0.0);
        assert_eq!(e.data(), &[14.0, 32.0, 32.0, 77.0]);
        gemm(&a, false, &a, true, &mut e, 1.0);
        assert_eq!(e.data(), &[28.0, 64.0, 64.0, 154.0]);
    }

    #[test]
    fn polyak_endpoints() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut s = ParamStore::<f32>::new();
        let a = s.add("a", Tensor::uniform(2, 2, 1.0, &mut rng));
        let b = s.add("b", Tensor::uniform(2, 2, 1.0, &mut rng));
        let before = s.value(b).clone();
        s.polyak(&[a], &[b], 0.0);
        assert_eq!(s.value(b), &before);
        s.polyak(&[a], &[b], 1.0);
        assert_eq!(s.value(b), s.value(a));
        s.polyak(&[b], &[a], 0.5);
        assert_eq!(s.value(b), s.value(a));
    }

    #[test]
    fn checksum_tracks_values() {
        let mut s = ParamStore::<f32>::new();
        let a = s.add("a", Tensor::row(vec![1.0, 2.0]));
        let c0 = s.checksum(&[a]);
        assert_eq!(c0, s.clone().checksum(&[a]));
        s.value_mut(a).data_mut()[1] = 2.5;
        assert_ne!(c0, s.checksum(&[a]));
    }
}
