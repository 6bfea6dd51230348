//! Parameter storage and the handful of layers the networks are built from.
//!
//! Weights are stored with unit variance and scaled at runtime by
//! `1/sqrt(fan_in)` (equalized learning rate).

use rand::Rng;
use sha2::{Digest, Sha256};

use crate::autograd::{ConvGeom, Var};
use crate::rng::normal_tensor;
use crate::tensor::{Real, Tensor};

pub const LRELU_SLOPE: f64 = 0.2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

/// Named, ordered parameter tensors of one network (or network family).
#[derive(Clone, Debug)]
pub struct ParamStore<T: Real> {
    names: Vec<String>,
    values: Vec<Tensor<T>>,
}

impl<T: Real> Default for ParamStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore {
            names: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>) -> ParamId {
        let name = name.into();
        assert!(!self.names.contains(&name), "duplicate parameter name {name}");
        self.names.push(name);
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn values(&self) -> &[Tensor<T>] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.values
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.values[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.names.iter().map(String::as_str).zip(self.values.iter())
    }

    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(Tensor::len).sum()
    }

    /// Put the values on a fresh tape. `trainable` decides whether they
    /// receive gradients.
    pub fn bind(&self, trainable: bool) -> Bound<T> {
        Bound {
            vars: self
                .values
                .iter()
                .map(|v| {
                    if trainable {
                        Var::param(v.clone())
                    } else {
                        Var::constant(v.clone())
                    }
                })
                .collect(),
        }
    }

    /// SHA-256 over names, shapes and values (as f64 little-endian).
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        for (name, v) in self.iter() {
            h.update(name.as_bytes());
            for &d in v.shape() {
                h.update((d as u64).to_le_bytes());
            }
            for &x in v.data() {
                h.update(x.f64().to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }

    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore {
            names: self.names.clone(),
            values: self.values.iter().map(Tensor::cast).collect(),
        }
    }
}

/// Parameters of a [`ParamStore`] as tape variables for one forward pass.
#[derive(Clone, Debug)]
pub struct Bound<T: Real> {
    vars: Vec<Var<T>>,
}

impl<T: Real> Bound<T> {
    /// Wrap explicit tape variables, one per parameter in store order.
    pub fn from_vars(vars: Vec<Var<T>>) -> Self {
        Bound { vars }
    }

    pub fn get(&self, id: ParamId) -> &Var<T> {
        &self.vars[id.0]
    }

    pub fn vars(&self) -> &[Var<T>] {
        &self.vars
    }
}

fn lrelu_slope<T: Real>() -> T {
    T::c(LRELU_SLOPE)
}

pub fn lrelu<T: Real>(x: &Var<T>) -> Var<T> {
    x.leaky_relu(lrelu_slope())
}

/// Fully connected layer, `y = x·Wᵀ·gain + b`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub gain: f64,
}

impl Linear {
    pub fn new<T: Real>(
        ps: &mut ParamStore<T>,
        name: &str,
        input: usize,
        output: usize,
        bias_init: Option<f64>,
        rng: &mut impl Rng,
    ) -> Self {
        let weight = ps.add(format!("{name}.weight"), normal_tensor(rng, &[output, input]));
        let bias = bias_init.map(|b| ps.add(format!("{name}.bias"), Tensor::full(&[output], T::c(b))));
        Linear {
            weight,
            bias,
            gain: 1.0 / (input as f64).sqrt(),
        }
    }

    pub fn forward<T: Real>(&self, p: &Bound<T>, x: &Var<T>) -> Var<T> {
        let y = x.linear(p.get(self.weight)).scale(T::c(self.gain));
        match self.bias {
            Some(b) => y.add(p.get(b)),
            None => y,
        }
    }
}

/// Square-kernel 2-D convolution over `[B, C, H, W]`.
#[derive(Clone, Debug)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub geom: ConvGeom,
    pub in_channels: usize,
    pub out_channels: usize,
    pub gain: f64,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Real>(
        ps: &mut ParamStore<T>,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        bias: bool,
        rng: &mut impl Rng,
    ) -> Self {
        let weight = ps.add(
            format!("{name}.weight"),
            normal_tensor(rng, &[out_channels, in_channels, kernel, kernel]),
        );
        let bias = bias.then(|| ps.add(format!("{name}.bias"), Tensor::zeros(&[out_channels])));
        Conv2d {
            weight,
            bias,
            geom: ConvGeom {
                kernel,
                stride,
                pad: kernel / 2,
            },
            in_channels,
            out_channels,
            gain: 1.0 / ((in_channels * kernel * kernel) as f64).sqrt(),
        }
    }

    pub fn forward<T: Real>(&self, p: &Bound<T>, x: &Var<T>) -> Var<T> {
        let y = conv2d(x, p.get(self.weight), self.geom).scale(T::c(self.gain));
        match self.bias {
            Some(b) => y.add(&p.get(b).reshape(&[1, self.out_channels, 1, 1])),
            None => y,
        }
    }
}

/// Raw convolution with weight `[O, C, k, k]`, no bias or gain.
pub fn conv2d<T: Real>(x: &Var<T>, weight: &Var<T>, geom: ConvGeom) -> Var<T> {
    let s = x.shape();
    let (b, c, h, w) = (s[0], s[1], s[2], s[3]);
    let o = weight.shape()[0];
    let (ho, wo) = (geom.out_size(h), geom.out_size(w));
    let cols = if geom.kernel == 1 && geom.stride == 1 {
        x.reshape(&[b, c, h * w])
    } else {
        x.im2col(geom)
    };
    let w2 = weight.reshape(&[o, c * geom.kernel * geom.kernel]);
    w2.bmm(&cols, false, false, false).reshape(&[b, o, ho, wo])
}

/// Style-modulated convolution: per-sample input-channel scaling from an
/// affine map of the style vector, optional weight demodulation.
#[derive(Clone, Debug)]
pub struct ModConv {
    pub conv: Conv2d,
    pub affine: Linear,
    pub demodulate: bool,
}

impl ModConv {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Real>(
        ps: &mut ParamStore<T>,
        name: &str,
        style_dim: usize,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        demodulate: bool,
        rng: &mut impl Rng,
    ) -> Self {
        let conv = Conv2d::new(ps, name, in_channels, out_channels, kernel, 1, true, rng);
        let affine = Linear::new(ps, &format!("{name}.affine"), style_dim, in_channels, Some(1.0), rng);
        ModConv {
            conv,
            affine,
            demodulate,
        }
    }

    /// `x: [B, C, H, W]`, `style: [Bs, style_dim]` with `Bs` ∈ {1, B}.
    pub fn forward<T: Real>(&self, p: &Bound<T>, x: &Var<T>, style: &Var<T>) -> Var<T> {
        let c = self.conv.in_channels;
        let o = self.conv.out_channels;
        let s = self.affine.forward(p, style);
        let bs = s.shape()[0];
        let xm = x.mul(&s.reshape(&[bs, c, 1, 1]));
        let weight = p.get(self.conv.weight);
        let mut y = conv2d(&xm, weight, self.conv.geom).scale(T::c(self.conv.gain));
        if self.demodulate {
            let k2 = self.conv.geom.kernel * self.conv.geom.kernel;
            let wsq = weight
                .reshape(&[o, c, k2])
                .square()
                .sum_to(&[o, c, 1])
                .reshape(&[o, c])
                .scale(T::c(self.conv.gain * self.conv.gain));
            let d = s
                .square()
                .linear(&wsq)
                .add_scalar(T::c(1e-8))
                .powf(T::c(-0.5));
            y = y.mul(&d.reshape(&[bs, o, 1, 1]));
        }
        match self.conv.bias {
            Some(b) => y.add(&p.get(b).reshape(&[1, o, 1, 1])),
            None => y,
        }
    }
}

/// Adds `strength · noise` where `noise` is a single-channel raster
/// broadcast over batch and channels. Strength starts at zero.
#[derive(Clone, Debug)]
pub struct NoiseInjection {
    pub strength: ParamId,
}

impl NoiseInjection {
    pub fn new<T: Real>(ps: &mut ParamStore<T>, name: &str) -> Self {
        NoiseInjection {
            strength: ps.add(format!("{name}.noise_strength"), Tensor::zeros(&[1])),
        }
    }

    pub fn forward<T: Real>(&self, p: &Bound<T>, x: &Var<T>, noise: &Var<T>) -> Var<T> {
        x.add(&noise.mul(p.get(self.strength)))
    }
}
