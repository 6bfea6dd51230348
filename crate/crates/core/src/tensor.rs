//! Dense row-major tensors and the scalar trait the whole crate is generic
//! over. Training runs in `f32`; gradient verification runs in `f64`.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};
use std::sync::Arc;

use num_traits::{Float, FromPrimitive, ToPrimitive};

pub trait Real:
    Float
    + FromPrimitive
    + ToPrimitive
    + Default
    + Debug
    + Display
    + Sum
    + AddAssign
    + SubAssign
    + MulAssign
    + Send
    + Sync
    + 'static
{
    /// `c = alpha * a * b + beta * c` with arbitrary element strides.
    ///
    /// # Safety
    /// Pointers and strides must describe valid `m×k`, `k×n` and `m×n`
    /// matrices, and `c` must not alias `a` or `b`.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm(
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

    #[inline]
    fn c(v: f64) -> Self {
        Self::from_f64(v).expect("f64 literal representable")
    }

    #[inline]
    fn f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Real for f32 {
    unsafe fn gemm(
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
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

impl Real for f64 {
    unsafe fn gemm(
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
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

/// Immutable-by-default dense tensor. Storage is reference counted so
/// reshapes and clones are free; writers go through [`Tensor::data_mut`].
#[derive(Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Arc<Vec<T>>,
}

impl<T: Debug> Debug for Tensor<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Tensor{:?}", self.shape)?;
        if self.data.len() <= 16 {
            write!(f, " {:?}", self.data)?;
        }
        Ok(())
    }
}

pub fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

pub fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

impl<T: Real> Tensor<T> {
    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Self {
        assert_eq!(
            numel(shape),
            data.len(),
            "tensor data length does not match shape {shape:?}"
        );
        Tensor {
            shape: shape.to_vec(),
            data: Arc::new(data),
        }
    }

    pub fn full(shape: &[usize], v: T) -> Self {
        Self::from_vec(shape, vec![v; numel(shape)])
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, T::one())
    }

    pub fn scalar(v: T) -> Self {
        Self::from_vec(&[], vec![v])
    }

    pub fn from_f64(shape: &[usize], data: &[f64]) -> Self {
        Self::from_vec(shape, data.iter().map(|&v| T::c(v)).collect())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn ndim(&self) -> usize {
        self.shape.len()
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
        Arc::make_mut(&mut self.data).as_mut_slice()
    }

    pub fn into_vec(self) -> Vec<T> {
        Arc::try_unwrap(self.data).unwrap_or_else(|a| (*a).clone())
    }

    pub fn item(&self) -> T {
        assert_eq!(self.data.len(), 1, "item() on tensor of shape {:?}", self.shape);
        self.data[0]
    }

    pub fn reshape(&self, shape: &[usize]) -> Self {
        assert_eq!(
            numel(shape),
            self.len(),
            "cannot reshape {:?} into {shape:?}",
            self.shape
        );
        Tensor {
            shape: shape.to_vec(),
            data: Arc::clone(&self.data),
        }
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: Arc::new(self.data.iter().map(|&v| f(v)).collect()),
        }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(T, T) -> T) -> Self {
        assert_eq!(self.shape, other.shape);
        Tensor {
            shape: self.shape.clone(),
            data: Arc::new(
                self.data
                    .iter()
                    .zip(other.data.iter())
                    .map(|(&a, &b)| f(a, b))
                    .collect(),
            ),
        }
    }

    pub fn sum(&self) -> T {
        self.data.iter().fold(T::zero(), |acc, &v| acc + v)
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: Arc::new(self.data.iter().map(|&v| U::c(v.f64())).collect()),
        }
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.data.iter().map(|v| v.f64()).collect()
    }

    /// Slice `[start, start+len)` along the leading axis.
    pub fn slice_outer(&self, start: usize, len: usize) -> Self {
        let inner: usize = self.shape[1..].iter().product();
        let mut shape = self.shape.clone();
        shape[0] = len;
        Tensor::from_vec(&shape, self.data[start * inner..(start + len) * inner].to_vec())
    }

    /// Concatenate along the leading axis.
    pub fn stack_outer(parts: &[Tensor<T>]) -> Self {
        assert!(!parts.is_empty());
        let tail = &parts[0].shape[1..];
        let mut data = Vec::with_capacity(parts.iter().map(|p| p.len()).sum());
        let mut lead = 0;
        for p in parts {
            assert_eq!(&p.shape[1..], tail, "stack_outer: mismatched trailing shape");
            lead += p.shape[0];
            data.extend_from_slice(&p.data);
        }
        let mut shape = vec![lead];
        shape.extend_from_slice(tail);
        Tensor::from_vec(&shape, data)
    }
}

/// Broadcast shape of two operands, numpy rules.
pub fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let n = a.len().max(b.len());
    let mut out = vec![0; n];
    for i in 0..n {
        let da = if i + a.len() >= n { a[i + a.len() - n] } else { 1 };
        let db = if i + b.len() >= n { b[i + b.len() - n] } else { 1 };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return None,
        };
    }
    Some(out)
}

/// Strides of `src` viewed as broadcast to `out` (zero on broadcast axes).
fn broadcast_strides(src: &[usize], out: &[usize]) -> Vec<usize> {
    let s = strides(src);
    let off = out.len() - src.len();
    (0..out.len())
        .map(|i| {
            if i < off || src[i - off] == 1 {
                0
            } else {
                s[i - off]
            }
        })
        .collect()
}

/// Merge adjacent axes that are contiguous in every operand so the inner
/// loop runs over the longest possible stride-uniform run.
fn coalesce(shape: &[usize], strides: &mut [Vec<usize>]) -> (Vec<usize>, Vec<Vec<usize>>) {
    let mut dims: Vec<usize> = Vec::new();
    let mut st: Vec<Vec<usize>> = vec![Vec::new(); strides.len()];
    for (i, &d) in shape.iter().enumerate() {
        if d == 1 {
            continue;
        }
        if let Some(&last) = dims.last() {
            let mergeable = strides
                .iter()
                .zip(st.iter())
                .all(|(s, acc)| *acc.last().unwrap() == s[i] * d);
            if mergeable {
                let k = dims.len() - 1;
                dims[k] = last * d;
                for (s, acc) in strides.iter().zip(st.iter_mut()) {
                    *acc.last_mut().unwrap() = s[i];
                }
                continue;
            }
        }
        dims.push(d);
        for (s, acc) in strides.iter().zip(st.iter_mut()) {
            acc.push(s[i]);
        }
    }
    if dims.is_empty() {
        dims.push(1);
        for acc in st.iter_mut() {
            acc.push(0);
        }
    }
    (dims, st)
}

/// Visit `(offset_per_operand, run_length, inner_stride_per_operand)` for
/// each contiguous inner run of an n-ary broadcast iteration.
fn for_each_run<const N: usize>(
    out_shape: &[usize],
    operand_strides: [Vec<usize>; N],
    mut f: impl FnMut([usize; N], usize, [usize; N]),
) {
    let mut ops: Vec<Vec<usize>> = operand_strides.into_iter().collect();
    let (dims, st) = coalesce(out_shape, &mut ops);
    let nd = dims.len();
    let inner = dims[nd - 1];
    let inner_st: [usize; N] = std::array::from_fn(|k| st[k][nd - 1]);
    let outer: usize = dims[..nd - 1].iter().product();
    let mut idx = vec![0usize; nd - 1];
    let mut base = [0usize; N];
    for _ in 0..outer {
        f(base, inner, inner_st);
        // increment multi-index
        for ax in (0..nd - 1).rev() {
            idx[ax] += 1;
            for k in 0..N {
                base[k] += st[k][ax];
            }
            if idx[ax] < dims[ax] {
                break;
            }
            for k in 0..N {
                base[k] -= st[k][ax] * dims[ax];
            }
            idx[ax] = 0;
        }
    }
}

/// Elementwise binary op with numpy broadcasting.
pub fn broadcast_binary<T: Real>(a: &Tensor<T>, b: &Tensor<T>, f: impl Fn(T, T) -> T) -> Tensor<T> {
    if a.shape == b.shape {
        return a.zip_map(b, f);
    }
    let out_shape = broadcast_shape(&a.shape, &b.shape)
        .unwrap_or_else(|| panic!("shapes {:?} and {:?} do not broadcast", a.shape, b.shape));
    let n = numel(&out_shape);
    let mut out = Vec::with_capacity(n);
    let sa = broadcast_strides(&a.shape, &out_shape);
    let sb = broadcast_strides(&b.shape, &out_shape);
    let (ad, bd) = (a.data(), b.data());
    for_each_run(&out_shape, [sa, sb], |[oa, ob], len, [ia, ib]| {
        for j in 0..len {
            out.push(f(ad[oa + j * ia], bd[ob + j * ib]));
        }
    });
    Tensor::from_vec(&out_shape, out)
}

/// Expand `a` to `shape` (numpy broadcasting).
pub fn broadcast_to<T: Real>(a: &Tensor<T>, shape: &[usize]) -> Tensor<T> {
    if a.shape == shape {
        return a.clone();
    }
    assert_eq!(
        broadcast_shape(&a.shape, shape).as_deref(),
        Some(shape),
        "cannot broadcast {:?} to {shape:?}",
        a.shape
    );
    let mut out = Vec::with_capacity(numel(shape));
    let sa = broadcast_strides(&a.shape, shape);
    let ad = a.data();
    for_each_run(shape, [sa], |[oa], len, [ia]| {
        for j in 0..len {
            out.push(ad[oa + j * ia]);
        }
    });
    Tensor::from_vec(shape, out)
}

/// Sum `a` down to `shape`, the adjoint of [`broadcast_to`]. Accumulation
/// order is fixed by the iteration order, so results are reproducible.
pub fn sum_to<T: Real>(a: &Tensor<T>, shape: &[usize]) -> Tensor<T> {
    if a.shape == shape {
        return a.clone();
    }
    assert_eq!(
        broadcast_shape(shape, &a.shape).as_deref(),
        Some(a.shape()),
        "cannot sum {:?} down to {shape:?}",
        a.shape
    );
    let mut out = vec![T::zero(); numel(shape)];
    let so = broadcast_strides(shape, &a.shape);
    let sa = strides(&a.shape);
    let ad = a.data();
    for_each_run(&a.shape, [sa, so], |[oa, oo], len, [ia, io]| {
        if io == 0 {
            let mut acc = T::zero();
            for j in 0..len {
                acc += ad[oa + j * ia];
            }
            out[oo] += acc;
        } else {
            for j in 0..len {
                out[oo + j * io] += ad[oa + j * ia];
            }
        }
    });
    Tensor::from_vec(shape, out)
}
