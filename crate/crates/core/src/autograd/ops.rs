use std::rc::Rc;

use super::var::Var;
use crate::tensor::{broadcast_binary, broadcast_to, numel, sum_to, Real, Tensor};

fn unary<T: Real>(
    x: &Var<T>,
    value: Tensor<T>,
    backward: impl Fn(&Var<T>, &Var<T>, &Var<T>) -> Var<T> + 'static,
) -> Var<T> {
    Var::from_op(
        value,
        vec![x.clone()],
        Box::new(move |inp, out, g| vec![Some(backward(&inp[0], out, g))]),
    )
}

impl<T: Real> Var<T> {
    // ---- broadcasting binary ops -------------------------------------------

    pub fn add(&self, other: &Var<T>) -> Var<T> {
        let v = broadcast_binary(self.value(), other.value(), |a, b| a + b);
        Var::from_op(
            v,
            vec![self.clone(), other.clone()],
            Box::new(|inp, _, g| {
                vec![
                    Some(g.sum_to(inp[0].shape())),
                    Some(g.sum_to(inp[1].shape())),
                ]
            }),
        )
    }

    pub fn sub(&self, other: &Var<T>) -> Var<T> {
        let v = broadcast_binary(self.value(), other.value(), |a, b| a - b);
        Var::from_op(
            v,
            vec![self.clone(), other.clone()],
            Box::new(|inp, _, g| {
                vec![
                    Some(g.sum_to(inp[0].shape())),
                    Some(g.neg().sum_to(inp[1].shape())),
                ]
            }),
        )
    }

    pub fn mul(&self, other: &Var<T>) -> Var<T> {
        let v = broadcast_binary(self.value(), other.value(), |a, b| a * b);
        Var::from_op(
            v,
            vec![self.clone(), other.clone()],
            Box::new(|inp, _, g| {
                let ga = inp[0].requires_grad().then(|| g.mul(&inp[1]).sum_to(inp[0].shape()));
                let gb = inp[1].requires_grad().then(|| g.mul(&inp[0]).sum_to(inp[1].shape()));
                vec![ga, gb]
            }),
        )
    }

    pub fn div(&self, other: &Var<T>) -> Var<T> {
        let v = broadcast_binary(self.value(), other.value(), |a, b| a / b);
        Var::from_op(
            v,
            vec![self.clone(), other.clone()],
            Box::new(|inp, out, g| {
                let ga = inp[0].requires_grad().then(|| g.div(&inp[1]).sum_to(inp[0].shape()));
                let gb = inp[1]
                    .requires_grad()
                    .then(|| g.mul(out).div(&inp[1]).neg().sum_to(inp[1].shape()));
                vec![ga, gb]
            }),
        )
    }

    // ---- shape ops ------------------------------------------------------------

    pub fn sum_to(&self, shape: &[usize]) -> Var<T> {
        if self.shape() == shape {
            return self.clone();
        }
        Var::from_op(
            sum_to(self.value(), shape),
            vec![self.clone()],
            Box::new(|inp, _, g| vec![Some(g.broadcast_to(inp[0].shape()))]),
        )
    }

    pub fn broadcast_to(&self, shape: &[usize]) -> Var<T> {
        if self.shape() == shape {
            return self.clone();
        }
        Var::from_op(
            broadcast_to(self.value(), shape),
            vec![self.clone()],
            Box::new(|inp, _, g| vec![Some(g.sum_to(inp[0].shape()))]),
        )
    }

    pub fn reshape(&self, shape: &[usize]) -> Var<T> {
        if self.shape() == shape {
            return self.clone();
        }
        Var::from_op(
            self.value().reshape(shape),
            vec![self.clone()],
            Box::new(|inp, _, g| vec![Some(g.reshape(inp[0].shape()))]),
        )
    }

    pub fn sum(&self) -> Var<T> {
        self.sum_to(&[])
    }

    pub fn mean(&self) -> Var<T> {
        let n = self.value().len();
        self.sum().scale(T::one() / T::c(n as f64))
    }

    /// Sum over `axes`, keeping them as size-1 dimensions.
    pub fn sum_keep(&self, axes: &[usize]) -> Var<T> {
        let mut shape = self.shape().to_vec();
        for &a in axes {
            shape[a] = 1;
        }
        self.sum_to(&shape)
    }

    pub fn mean_keep(&self, axes: &[usize]) -> Var<T> {
        let n: usize = axes.iter().map(|&a| self.shape()[a]).product();
        self.sum_keep(axes).scale(T::one() / T::c(n as f64))
    }

    /// `len` entries starting at `start` along `axis`.
    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Var<T> {
        let shape = self.shape().to_vec();
        assert!(start + len <= shape[axis], "narrow out of range");
        if start == 0 && len == shape[axis] {
            return self.clone();
        }
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let src = self.value().data();
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * shape[axis] + start) * inner;
            out.extend_from_slice(&src[base..base + len * inner]);
        }
        let mut oshape = shape.clone();
        oshape[axis] = len;
        let full = shape[axis];
        Var::from_op(
            Tensor::from_vec(&oshape, out),
            vec![self.clone()],
            Box::new(move |_, _, g| vec![Some(g.pad_axis(axis, start, full))]),
        )
    }

    /// Zero-pad along `axis` so the current contents start at `before` in
    /// an axis of length `total`. Adjoint of [`Var::narrow`].
    pub fn pad_axis(&self, axis: usize, before: usize, total: usize) -> Var<T> {
        let shape = self.shape().to_vec();
        let len = shape[axis];
        assert!(before + len <= total);
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let mut oshape = shape.clone();
        oshape[axis] = total;
        let mut out = vec![T::zero(); numel(&oshape)];
        let src = self.value().data();
        for o in 0..outer {
            let dst = (o * total + before) * inner;
            out[dst..dst + len * inner].copy_from_slice(&src[o * len * inner..(o + 1) * len * inner]);
        }
        Var::from_op(
            Tensor::from_vec(&oshape, out),
            vec![self.clone()],
            Box::new(move |_, _, g| vec![Some(g.narrow(axis, before, len))]),
        )
    }

    pub fn concat(parts: &[Var<T>], axis: usize) -> Var<T> {
        assert!(!parts.is_empty());
        let first = parts[0].shape().to_vec();
        let outer: usize = first[..axis].iter().product();
        let inner: usize = first[axis + 1..].iter().product();
        let lens: Vec<usize> = parts.iter().map(|p| p.shape()[axis]).collect();
        let total: usize = lens.iter().sum();
        for p in parts {
            assert_eq!(p.shape()[..axis], first[..axis], "concat shape mismatch");
            assert_eq!(p.shape()[axis + 1..], first[axis + 1..], "concat shape mismatch");
        }
        let mut oshape = first.clone();
        oshape[axis] = total;
        let mut out = Vec::with_capacity(numel(&oshape));
        for o in 0..outer {
            for (p, &l) in parts.iter().zip(&lens) {
                let src = p.value().data();
                out.extend_from_slice(&src[o * l * inner..(o + 1) * l * inner]);
            }
        }
        Var::from_op(
            Tensor::from_vec(&oshape, out),
            parts.to_vec(),
            Box::new(move |inp, _, g| {
                let mut start = 0;
                inp.iter()
                    .zip(&lens)
                    .map(|(p, &l)| {
                        let r = p.requires_grad().then(|| g.narrow(axis, start, l));
                        start += l;
                        r
                    })
                    .collect()
            }),
        )
    }

    /// `out[i] = self.flat[indices[i]]`, reshaped to `shape`.
    pub fn gather_flat(&self, indices: Rc<Vec<usize>>, shape: &[usize]) -> Var<T> {
        assert_eq!(indices.len(), numel(shape));
        let src = self.value().data();
        let out: Vec<T> = indices.iter().map(|&i| src[i]).collect();
        let in_shape = self.shape().to_vec();
        Var::from_op(
            Tensor::from_vec(shape, out),
            vec![self.clone()],
            Box::new(move |_, _, g| vec![Some(g.scatter_add_flat(Rc::clone(&indices), &in_shape))]),
        )
    }

    /// Adjoint of [`Var::gather_flat`]: accumulate entries into a zero
    /// tensor of `shape` at `indices`.
    pub fn scatter_add_flat(&self, indices: Rc<Vec<usize>>, shape: &[usize]) -> Var<T> {
        assert_eq!(indices.len(), self.value().len());
        let mut out = vec![T::zero(); numel(shape)];
        for (&i, &v) in indices.iter().zip(self.value().data()) {
            out[i] += v;
        }
        let src_shape = self.shape().to_vec();
        Var::from_op(
            Tensor::from_vec(shape, out),
            vec![self.clone()],
            Box::new(move |_, _, g| vec![Some(g.gather_flat(Rc::clone(&indices), &src_shape))]),
        )
    }

    // ---- pointwise ---------------------------------------------------------

    pub fn neg(&self) -> Var<T> {
        unary(self, self.value().map(|v| -v), |_, _, g| g.neg())
    }

    pub fn scale(&self, c: T) -> Var<T> {
        unary(self, self.value().map(|v| v * c), move |_, _, g| g.scale(c))
    }

    pub fn add_scalar(&self, c: T) -> Var<T> {
        unary(self, self.value().map(|v| v + c), |_, _, g| g.clone())
    }

    pub fn square(&self) -> Var<T> {
        unary(self, self.value().map(|v| v * v), |x, _, g| {
            g.mul(x).scale(T::c(2.0))
        })
    }

    pub fn exp(&self) -> Var<T> {
        unary(self, self.value().map(|v| v.exp()), |_, out, g| g.mul(out))
    }

    pub fn ln(&self) -> Var<T> {
        unary(self, self.value().map(|v| v.ln()), |x, _, g| g.div(x))
    }

    pub fn sqrt(&self) -> Var<T> {
        unary(self, self.value().map(|v| v.sqrt()), |_, out, g| {
            g.div(out).scale(T::c(0.5))
        })
    }

    pub fn powf(&self, p: T) -> Var<T> {
        unary(self, self.value().map(|v| v.powf(p)), move |x, _, g| {
            g.mul(&x.powf(p - T::one())).scale(p)
        })
    }

    pub fn tanh(&self) -> Var<T> {
        unary(self, self.value().map(|v| v.tanh()), |_, out, g| {
            g.mul(&out.square().neg().add_scalar(T::one()))
        })
    }

    pub fn sigmoid(&self) -> Var<T> {
        unary(self, self.value().map(sigmoid), |_, out, g| {
            g.mul(&out.mul(&out.neg().add_scalar(T::one())))
        })
    }

    /// `ln(1 + e^x)`, evaluated without overflow.
    pub fn softplus(&self) -> Var<T> {
        unary(self, self.value().map(softplus), |x, _, g| g.mul(&x.sigmoid()))
    }

    pub fn abs(&self) -> Var<T> {
        unary(self, self.value().map(|v| v.abs()), |x, _, g| {
            let sign = x.value().map(|v| {
                if v > T::zero() {
                    T::one()
                } else if v < T::zero() {
                    -T::one()
                } else {
                    T::zero()
                }
            });
            g.mul(&Var::constant(sign))
        })
    }

    pub fn leaky_relu(&self, slope: T) -> Var<T> {
        unary(
            self,
            self.value().map(|v| if v > T::zero() { v } else { v * slope }),
            move |x, _, g| {
                let mask = x.value().map(|v| if v > T::zero() { T::one() } else { slope });
                g.mul(&Var::constant(mask))
            },
        )
    }

    // ---- linear algebra ------------------------------------------------------

    /// Batched matrix product `op(a) · op(b)` where `op` optionally
    /// transposes the trailing two axes. Each operand is either a single
    /// matrix (shared across the batch) or a `[B, r, c]` stack. With
    /// `reduce`, the per-batch products of two stacks are summed.
    pub fn bmm(&self, other: &Var<T>, ta: bool, tb: bool, reduce: bool) -> Var<T> {
        let value = bmm_raw(self.value(), other.value(), ta, tb, reduce);
        Var::from_op(
            value,
            vec![self.clone(), other.clone()],
            Box::new(move |inp, _, g| {
                let (a, b) = (&inp[0], &inp[1]);
                let ga = a.requires_grad().then(|| {
                    let red = a.shape().len() == 2 && (g.shape().len() == 3 || b.shape().len() == 3);
                    if !ta {
                        g.bmm(b, false, !tb, red)
                    } else {
                        b.bmm(g, tb, true, red)
                    }
                });
                let gb = b.requires_grad().then(|| {
                    let red = b.shape().len() == 2 && (g.shape().len() == 3 || a.shape().len() == 3);
                    if !tb {
                        a.bmm(g, !ta, false, red)
                    } else {
                        g.bmm(a, true, ta, red)
                    }
                });
                vec![ga, gb]
            }),
        )
    }

    /// `x [B, in] · wᵀ` for `w [out, in]`.
    pub fn linear(&self, w: &Var<T>) -> Var<T> {
        self.bmm(w, false, true, false)
    }

    // ---- image ops -------------------------------------------------------------

    pub fn im2col(&self, geom: ConvGeom) -> Var<T> {
        let in_shape = self.shape().to_vec();
        Var::from_op(
            im2col(self.value(), geom),
            vec![self.clone()],
            Box::new(move |_, _, g| vec![Some(g.col2im(geom, &in_shape))]),
        )
    }

    pub fn col2im(&self, geom: ConvGeom, image_shape: &[usize]) -> Var<T> {
        Var::from_op(
            col2im(self.value(), geom, image_shape),
            vec![self.clone()],
            Box::new(move |_, _, g| vec![Some(g.im2col(geom))]),
        )
    }

    /// Nearest-neighbour 2× upsampling of `[B, C, H, W]`.
    pub fn upsample2x(&self) -> Var<T> {
        let s = self.shape().to_vec();
        let (planes, h, w) = (s[0] * s[1], s[2], s[3]);
        let src = self.value().data();
        let mut out = Vec::with_capacity(planes * 4 * h * w);
        for p in 0..planes {
            for y in 0..2 * h {
                let row = &src[(p * h + y / 2) * w..(p * h + y / 2 + 1) * w];
                for &v in row {
                    out.push(v);
                    out.push(v);
                }
            }
        }
        Var::from_op(
            Tensor::from_vec(&[s[0], s[1], 2 * h, 2 * w], out),
            vec![self.clone()],
            Box::new(|_, _, g| vec![Some(g.sumpool2x())]),
        )
    }

    /// Sum over non-overlapping 2×2 blocks; adjoint of [`Var::upsample2x`].
    pub fn sumpool2x(&self) -> Var<T> {
        let s = self.shape().to_vec();
        let (planes, h, w) = (s[0] * s[1], s[2] / 2, s[3] / 2);
        assert!(s[2] % 2 == 0 && s[3] % 2 == 0, "sumpool2x needs even sides");
        let src = self.value().data();
        let mut out = vec![T::zero(); planes * h * w];
        for p in 0..planes {
            for y in 0..2 * h {
                let row = &src[(p * 2 * h + y) * 2 * w..(p * 2 * h + y + 1) * 2 * w];
                let dst = &mut out[(p * h + y / 2) * w..(p * h + y / 2 + 1) * w];
                for (x, d) in dst.iter_mut().enumerate() {
                    *d += row[2 * x] + row[2 * x + 1];
                }
            }
        }
        Var::from_op(
            Tensor::from_vec(&[s[0], s[1], h, w], out),
            vec![self.clone()],
            Box::new(|_, _, g| vec![Some(g.upsample2x())]),
        )
    }

    pub fn avgpool2x(&self) -> Var<T> {
        self.sumpool2x().scale(T::c(0.25))
    }
}

fn sigmoid<T: Real>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

fn softplus<T: Real>(v: T) -> T {
    v.max(T::zero()) + (-v.abs()).exp().ln_1p()
}

fn bmm_raw<T: Real>(a: &Tensor<T>, b: &Tensor<T>, ta: bool, tb: bool, reduce: bool) -> Tensor<T> {
    let mat = |t: &Tensor<T>, trans: bool| -> (usize, usize, usize, isize, isize) {
        let s = t.shape();
        let (batch, r, c) = match s.len() {
            2 => (0, s[0], s[1]),
            3 => (s[0], s[1], s[2]),
            _ => panic!("bmm operand must be 2-D or 3-D, got {s:?}"),
        };
        if trans {
            (batch, c, r, 1, c as isize)
        } else {
            (batch, r, c, c as isize, 1)
        }
    };
    let (ba, m, ka, rsa, csa) = mat(a, ta);
    let (bb, kb, n, rsb, csb) = mat(b, tb);
    assert_eq!(ka, kb, "bmm inner dimensions differ: {:?} vs {:?}", a.shape(), b.shape());
    let batch = match (ba, bb) {
        (0, 0) => 0,
        (x, 0) | (0, x) => x,
        (x, y) => {
            assert_eq!(x, y, "bmm batch sizes differ");
            x
        }
    };
    if reduce {
        assert!(ba > 0 && bb > 0, "bmm reduce needs two stacked operands");
    }
    let out_batches = if batch == 0 || reduce { 1 } else { batch };
    let mut out = vec![T::zero(); out_batches * m * n];
    let a_stride = if ba > 0 { m * ka } else { 0 };
    let b_stride = if bb > 0 { ka * n } else { 0 };
    let steps = batch.max(1);
    for i in 0..steps {
        let c_off = if reduce { 0 } else { i * m * n };
        // SAFETY: offsets and strides stay within the owned buffers.
        unsafe {
            T::gemm(
                m,
                ka,
                n,
                T::one(),
                a.data().as_ptr().add(i * a_stride),
                rsa,
                csa,
                b.data().as_ptr().add(i * b_stride),
                rsb,
                csb,
                if reduce && i > 0 { T::one() } else { T::zero() },
                out.as_mut_ptr().add(c_off),
                n as isize,
                1,
            );
        }
    }
    let shape: Vec<usize> = if batch == 0 || reduce {
        vec![m, n]
    } else {
        vec![batch, m, n]
    };
    Tensor::from_vec(&shape, out)
}

/// Square-kernel convolution geometry.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    pub fn out_size(&self, n: usize) -> usize {
        (n + 2 * self.pad - self.kernel) / self.stride + 1
    }
}

/// `[B, C, H, W] -> [B, C·k·k, Ho·Wo]`, rows ordered `(c, ky, kx)`.
pub fn im2col<T: Real>(x: &Tensor<T>, g: ConvGeom) -> Tensor<T> {
    let s = x.shape();
    let (b, c, h, w) = (s[0], s[1], s[2], s[3]);
    let (ho, wo) = (g.out_size(h), g.out_size(w));
    let k = g.kernel;
    let rows = c * k * k;
    let mut out = vec![T::zero(); b * rows * ho * wo];
    let src = x.data();
    for bi in 0..b {
        for ci in 0..c {
            let plane = &src[(bi * c + ci) * h * w..(bi * c + ci + 1) * h * w];
            for ky in 0..k {
                for kx in 0..k {
                    let row = (ci * k + ky) * k + kx;
                    let dst = &mut out[(bi * rows + row) * ho * wo..(bi * rows + row + 1) * ho * wo];
                    for oy in 0..ho {
                        let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let srow = &plane[iy as usize * w..(iy as usize + 1) * w];
                        let drow = &mut dst[oy * wo..(oy + 1) * wo];
                        for (ox, d) in drow.iter_mut().enumerate() {
                            let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                            if ix >= 0 && ix < w as isize {
                                *d = srow[ix as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    Tensor::from_vec(&[b, rows, ho * wo], out)
}

/// Adjoint of [`im2col`]: scatter-add columns back into an image.
pub fn col2im<T: Real>(cols: &Tensor<T>, g: ConvGeom, image_shape: &[usize]) -> Tensor<T> {
    let (b, c, h, w) = (image_shape[0], image_shape[1], image_shape[2], image_shape[3]);
    let (ho, wo) = (g.out_size(h), g.out_size(w));
    let k = g.kernel;
    let rows = c * k * k;
    assert_eq!(cols.shape(), &[b, rows, ho * wo], "col2im shape mismatch");
    let mut out = vec![T::zero(); b * c * h * w];
    let src = cols.data();
    for bi in 0..b {
        for ci in 0..c {
            let plane = &mut out[(bi * c + ci) * h * w..(bi * c + ci + 1) * h * w];
            for ky in 0..k {
                for kx in 0..k {
                    let row = (ci * k + ky) * k + kx;
                    let col = &src[(bi * rows + row) * ho * wo..(bi * rows + row + 1) * ho * wo];
                    for oy in 0..ho {
                        let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let drow = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                        for ox in 0..wo {
                            let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                            if ix >= 0 && ix < w as isize {
                                drow[ix as usize] += col[oy * wo + ox];
                            }
                        }
                    }
                }
            }
        }
    }
    Tensor::from_vec(image_shape, out)
}
