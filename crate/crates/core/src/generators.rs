//! The three style-based generators:
//!
//! * face generator `F_fa = G_f(z_f, ε_f)`
//! * background generator `F_b = G_b(z_b, ε_b)`
//! * avatar generator `[I_FM, I_A] = G_style(F_fa, F_b, I_R, I_UV, z_g, ε_g)`
//!
//! `G_f`/`G_b` synthesize from a learned 4×4 constant. `G_style` encodes the
//! 12-channel condition stack down to 4×4 and decodes with modulated
//! convolutions, encoder skips at every resolution, and summed per-resolution
//! to-image outputs.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::Var;
use crate::error::{Error, Result};
use crate::nn::{lrelu, Bound, Conv2d, Linear, ModConv, NoiseInjection, ParamId, ParamStore};
use crate::rng::{keyed_rng, normal_tensor};
use crate::tensor::{Real, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenConfig {
    pub resolution: usize,
    pub latent_dim: usize,
    /// Channel cap of the avatar generator.
    pub base_channels: usize,
    pub mapping_layers: usize,
    /// Channel cap of the face and background generators.
    pub aux_base_channels: usize,
    pub min_channels: usize,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            resolution: 64,
            latent_dim: 64,
            base_channels: 32,
            mapping_layers: 2,
            aux_base_channels: 16,
            min_channels: 8,
        }
    }
}

impl GenConfig {
    pub fn check(&self) -> Result<()> {
        if !self.resolution.is_power_of_two() || self.resolution < 32 {
            return Err(Error::Config(format!(
                "generator resolution must be a power of two >= 32, got {}",
                self.resolution
            )));
        }
        if self.base_channels < 8 || self.aux_base_channels < 8 {
            return Err(Error::Config("base_channels must be >= 8".into()));
        }
        if self.latent_dim == 0 || self.min_channels == 0 {
            return Err(Error::Config("latent_dim and min_channels must be positive".into()));
        }
        Ok(())
    }

    /// Channel width at resolution `r`: capped at `base`, halving per
    /// doubling above 16×16, never below `min_channels`.
    pub fn channels(&self, base: usize, r: usize) -> usize {
        base.min((base * 16 / r).max(self.min_channels))
    }

    /// 4, 8, …, resolution.
    pub fn resolutions(&self) -> Vec<usize> {
        let mut v = Vec::new();
        let mut r = 4;
        while r <= self.resolution {
            v.push(r);
            r *= 2;
        }
        v
    }
}

/// Latent vector and per-resolution single-channel noise rasters.
#[derive(Clone, Debug)]
pub struct LatentCode<T: Real> {
    /// `[1, latent_dim]`
    pub z: Var<T>,
    /// `[1, 1, r, r]` for r = 4 … resolution
    pub noise: Vec<Var<T>>,
}

/// Generator inputs, all `[B, 3, R, R]` in model range `[-1, 1]`
/// (canvases may have batch 1 and are broadcast).
#[derive(Clone, Debug)]
pub struct ConditionSet<T: Real> {
    pub face_canvas: Var<T>,
    pub background_canvas: Var<T>,
    pub render: Var<T>,
    pub uv: Var<T>,
}

#[derive(Clone, Debug)]
pub struct GeneratorOutput<T: Real> {
    /// `[B, 3, R, R]` in `[0, 1]`
    pub avatar: Var<T>,
    /// `[B, 1, R, R]` in `[0, 1]`
    pub foreground_mask: Var<T>,
}

/// Which to-image branches contribute to the output.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum ToImageBranches {
    #[default]
    All,
    CoarsestOnly,
}

#[derive(Clone, Debug)]
struct Mapping {
    layers: Vec<Linear>,
}

impl Mapping {
    fn new<T: Real>(ps: &mut ParamStore<T>, name: &str, cfg: &GenConfig, rng: &mut impl Rng) -> Self {
        let d = cfg.latent_dim;
        let layers = (0..cfg.mapping_layers)
            .map(|i| Linear::new(ps, &format!("{name}.mapping{i}"), d, d, Some(0.0), rng))
            .collect();
        Mapping { layers }
    }

    fn forward<T: Real>(&self, p: &Bound<T>, z: &Var<T>) -> Var<T> {
        let ms = z.square().mean_keep(&[1]).add_scalar(T::c(1e-8)).powf(T::c(-0.5));
        let mut w = z.mul(&ms);
        for l in &self.layers {
            w = lrelu(&l.forward(p, &w));
        }
        w
    }
}

#[derive(Clone, Debug)]
struct StyledLayer {
    conv: ModConv,
    noise: NoiseInjection,
}

impl StyledLayer {
    #[allow(clippy::too_many_arguments)]
    fn new<T: Real>(
        ps: &mut ParamStore<T>,
        name: &str,
        style_dim: usize,
        cin: usize,
        cout: usize,
        rng: &mut impl Rng,
    ) -> Self {
        StyledLayer {
            conv: ModConv::new(ps, name, style_dim, cin, cout, 3, true, rng),
            noise: NoiseInjection::new(ps, name),
        }
    }

    fn forward<T: Real>(&self, p: &Bound<T>, x: &Var<T>, w: &Var<T>, noise: &Var<T>) -> Var<T> {
        let y = self.conv.forward(p, x, w);
        lrelu(&self.noise.forward(p, &y, noise))
    }
}

/// Constant-input synthesis network (`G_f`, `G_b`).
#[derive(Clone, Debug)]
pub struct SynthesisNet {
    mapping: Mapping,
    constant: ParamId,
    /// Per resolution: the 4×4 block has one layer, the others two.
    layers: Vec<Vec<StyledLayer>>,
    to_rgb: Vec<ModConv>,
    latent_dim: usize,
    resolutions: Vec<usize>,
}

impl SynthesisNet {
    fn new<T: Real>(ps: &mut ParamStore<T>, name: &str, cfg: &GenConfig, rng: &mut impl Rng) -> Self {
        let mapping = Mapping::new(ps, name, cfg, rng);
        let base = cfg.aux_base_channels;
        let res = cfg.resolutions();
        let c4 = cfg.channels(base, 4);
        let constant = ps.add(format!("{name}.const"), normal_tensor(rng, &[1, c4, 4, 4]));
        let mut layers = Vec::new();
        let mut to_rgb = Vec::new();
        let mut cin = c4;
        for &r in &res {
            let c = cfg.channels(base, r);
            let mut block = vec![StyledLayer::new(ps, &format!("{name}.b{r}.conv0"), cfg.latent_dim, cin, c, rng)];
            if r > 4 {
                block.push(StyledLayer::new(ps, &format!("{name}.b{r}.conv1"), cfg.latent_dim, c, c, rng));
            }
            layers.push(block);
            to_rgb.push(ModConv::new(ps, &format!("{name}.b{r}.to_rgb"), cfg.latent_dim, c, 3, 1, false, rng));
            cin = c;
        }
        SynthesisNet {
            mapping,
            constant,
            layers,
            to_rgb,
            latent_dim: cfg.latent_dim,
            resolutions: res,
        }
    }

    /// `[1, 3, R, R]` in `[-1, 1]`.
    pub fn forward<T: Real>(&self, p: &Bound<T>, code: &LatentCode<T>) -> Result<Var<T>> {
        check_code(code, self.latent_dim, &self.resolutions)?;
        let w = self.mapping.forward(p, &code.z);
        let mut x = p.get(self.constant).clone();
        let mut img: Option<Var<T>> = None;
        for (i, block) in self.layers.iter().enumerate() {
            if i > 0 {
                x = x.upsample2x();
            }
            for layer in block {
                x = layer.forward(p, &x, &w, &code.noise[i]);
            }
            let rgb = self.to_rgb[i].forward(p, &x, &w);
            img = Some(match img {
                Some(prev) => prev.upsample2x().add(&rgb),
                None => rgb,
            });
        }
        Ok(img.unwrap().tanh())
    }
}

fn check_code<T: Real>(code: &LatentCode<T>, dim: usize, res: &[usize]) -> Result<()> {
    if code.z.shape() != [1, dim] {
        return Err(Error::shape(format!(
            "latent has shape {:?}, expected [1, {dim}]",
            code.z.shape()
        )));
    }
    if code.noise.len() != res.len()
        || code
            .noise
            .iter()
            .zip(res)
            .any(|(n, &r)| n.shape() != [1, 1, r, r])
    {
        return Err(Error::shape("noise rasters do not match synthesis resolutions"));
    }
    Ok(())
}

/// Condition-driven U-shaped generator (`G_style`).
#[derive(Clone, Debug)]
pub struct AvatarNet {
    mapping: Mapping,
    from_cond: Conv2d,
    down: Vec<Conv2d>,
    /// Index 0 is the 4×4 block, then one per doubling.
    up: Vec<(Option<StyledLayer>, StyledLayer)>,
    to_img: Vec<ModConv>,
    latent_dim: usize,
    resolutions: Vec<usize>,
}

pub const CONDITION_CHANNELS: usize = 12;

impl AvatarNet {
    fn new<T: Real>(ps: &mut ParamStore<T>, name: &str, cfg: &GenConfig, rng: &mut impl Rng) -> Self {
        let mapping = Mapping::new(ps, name, cfg, rng);
        let base = cfg.base_channels;
        let res = cfg.resolutions();
        let top = cfg.resolution;
        let from_cond = Conv2d::new(
            ps,
            &format!("{name}.from_cond"),
            CONDITION_CHANNELS,
            cfg.channels(base, top),
            1,
            1,
            true,
            rng,
        );
        let mut down = Vec::new();
        let mut r = top;
        while r > 4 {
            down.push(Conv2d::new(
                ps,
                &format!("{name}.enc{r}"),
                cfg.channels(base, r),
                cfg.channels(base, r / 2),
                3,
                2,
                true,
                rng,
            ));
            r /= 2;
        }
        let d = cfg.latent_dim;
        let mut up = Vec::new();
        let mut to_img = Vec::new();
        for &r in &res {
            let c = cfg.channels(base, r);
            let block = if r == 4 {
                (None, StyledLayer::new(ps, &format!("{name}.dec4.conv"), d, c, c, rng))
            } else {
                let cin = cfg.channels(base, r / 2) + c;
                (
                    Some(StyledLayer::new(ps, &format!("{name}.dec{r}.conv0"), d, cin, c, rng)),
                    StyledLayer::new(ps, &format!("{name}.dec{r}.conv1"), d, c, c, rng),
                )
            };
            up.push(block);
            to_img.push(ModConv::new(ps, &format!("{name}.dec{r}.to_img"), d, c, 4, 1, false, rng));
        }
        AvatarNet {
            mapping,
            from_cond,
            down,
            up,
            to_img,
            latent_dim: d,
            resolutions: res,
        }
    }

    pub fn forward<T: Real>(
        &self,
        p: &Bound<T>,
        cond: &ConditionSet<T>,
        code: &LatentCode<T>,
        branches: ToImageBranches,
    ) -> Result<GeneratorOutput<T>> {
        check_code(code, self.latent_dim, &self.resolutions)?;
        let top = *self.resolutions.last().unwrap();
        let rs = cond.render.shape().to_vec();
        if rs.len() != 4 || rs[1] != 3 || rs[2] != top || rs[3] != top {
            return Err(Error::shape(format!(
                "render condition has shape {rs:?}, expected [B, 3, {top}, {top}]"
            )));
        }
        let batch = rs[0];
        let full = [batch, 3, top, top];
        let mut parts = Vec::with_capacity(4);
        for (what, v) in [
            ("face canvas", &cond.face_canvas),
            ("background canvas", &cond.background_canvas),
            ("render", &cond.render),
            ("uv", &cond.uv),
        ] {
            let s = v.shape();
            if s.len() != 4 || s[1..] != full[1..] || (s[0] != batch && s[0] != 1) {
                return Err(Error::shape(format!("{what} has shape {s:?}, expected {full:?}")));
            }
            parts.push(v.broadcast_to(&full));
        }
        let stack = Var::concat(&parts, 1);

        let w = self.mapping.forward(p, &code.z);
        // encoder features, finest first
        let mut skips = vec![lrelu(&self.from_cond.forward(p, &stack))];
        for conv in &self.down {
            let next = lrelu(&conv.forward(p, skips.last().unwrap()));
            skips.push(next);
        }
        let mut x = skips.pop().unwrap();
        let mut img: Option<Var<T>> = None;
        for (i, (first, second)) in self.up.iter().enumerate() {
            let noise = &code.noise[i];
            if let Some(first) = first {
                let skip = skips.pop().expect("one skip per decoder resolution");
                x = Var::concat(&[x.upsample2x(), skip], 1);
                x = first.forward(p, &x, &w, noise);
            }
            x = second.forward(p, &x, &w, noise);
            let use_branch = i == 0 || branches == ToImageBranches::All;
            img = Some(match img {
                None => self.to_img[i].forward(p, &x, &w),
                Some(prev) if use_branch => prev.upsample2x().add(&self.to_img[i].forward(p, &x, &w)),
                Some(prev) => prev.upsample2x(),
            });
        }
        let img = img.unwrap();
        let avatar = img.narrow(1, 0, 3).tanh().add_scalar(T::one()).scale(T::c(0.5));
        let foreground_mask = img.narrow(1, 3, 1).sigmoid();
        Ok(GeneratorOutput {
            avatar,
            foreground_mask,
        })
    }
}

/// Per-resolution noise for the three generators.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSet<T: Real> {
    pub face: Vec<Tensor<T>>,
    pub background: Vec<Tensor<T>>,
    pub avatar: Vec<Tensor<T>>,
}

impl<T: Real> NoiseSet<T> {
    pub fn sample(cfg: &GenConfig, rng: &mut impl Rng) -> Self {
        let mut draw = || -> Vec<Tensor<T>> {
            cfg.resolutions()
                .iter()
                .map(|&r| normal_tensor::<f32>(rng, &[1, 1, r, r]).cast())
                .collect()
        };
        NoiseSet {
            face: draw(),
            background: draw(),
            avatar: draw(),
        }
    }

    pub fn zeros(cfg: &GenConfig) -> Self {
        let z = || cfg.resolutions().iter().map(|&r| Tensor::zeros(&[1, 1, r, r])).collect();
        NoiseSet {
            face: z(),
            background: z(),
            avatar: z(),
        }
    }

    pub fn named(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out = Vec::new();
        for (tag, set) in [("face", &self.face), ("background", &self.background), ("avatar", &self.avatar)] {
            for t in set {
                out.push((format!("noise.{tag}.{}", t.shape()[2]), t));
            }
        }
        out
    }

    pub fn cast<U: Real>(&self) -> NoiseSet<U> {
        let c = |v: &Vec<Tensor<T>>| v.iter().map(Tensor::cast).collect();
        NoiseSet {
            face: c(&self.face),
            background: c(&self.background),
            avatar: c(&self.avatar),
        }
    }
}

/// Face, background and avatar generators with their learnable latents.
#[derive(Clone, Debug)]
pub struct Generators<T: Real> {
    pub config: GenConfig,
    pub params: ParamStore<T>,
    pub face: SynthesisNet,
    pub background: SynthesisNet,
    pub avatar: AvatarNet,
    pub z_face: ParamId,
    pub z_background: ParamId,
    pub z_avatar: ParamId,
}

/// Everything one forward pass of the full pipeline produces.
#[derive(Clone, Debug)]
pub struct PipelineOutput<T: Real> {
    pub face_canvas: Var<T>,
    pub background_canvas: Var<T>,
    pub output: GeneratorOutput<T>,
}

fn to_model_range<T: Real>(x: &Var<T>) -> Var<T> {
    x.scale(T::c(2.0)).add_scalar(-T::one())
}

impl<T: Real> Generators<T> {
    pub fn new(cfg: &GenConfig, seed: u64) -> Result<Self> {
        cfg.check()?;
        let mut rng = keyed_rng(seed, 0, "generators");
        let mut ps = ParamStore::new();
        let face = SynthesisNet::new(&mut ps, "face", cfg, &mut rng);
        let background = SynthesisNet::new(&mut ps, "background", cfg, &mut rng);
        let avatar = AvatarNet::new(&mut ps, "avatar", cfg, &mut rng);
        let d = cfg.latent_dim;
        let z_face = ps.add("latent.face", normal_tensor(&mut rng, &[1, d]));
        let z_background = ps.add("latent.background", normal_tensor(&mut rng, &[1, d]));
        let z_avatar = ps.add("latent.avatar", normal_tensor(&mut rng, &[1, d]));
        for v in ps.values_mut() {
            *v = v.cast::<f32>().cast();
        }
        Ok(Generators {
            config: cfg.clone(),
            params: ps,
            face,
            background,
            avatar,
            z_face,
            z_background,
            z_avatar,
        })
    }

    pub fn num_params(&self) -> usize {
        self.params.num_scalars()
    }

    fn code(p: &Bound<T>, z: ParamId, noise: &[Tensor<T>]) -> LatentCode<T> {
        LatentCode {
            z: p.get(z).clone(),
            noise: noise.iter().map(|n| Var::constant(n.clone())).collect(),
        }
    }

    pub fn gen_face(&self, p: &Bound<T>, code: &LatentCode<T>) -> Result<Var<T>> {
        self.face.forward(p, code)
    }

    pub fn gen_background(&self, p: &Bound<T>, code: &LatentCode<T>) -> Result<Var<T>> {
        self.background.forward(p, code)
    }

    pub fn gen_avatar(&self, p: &Bound<T>, cond: &ConditionSet<T>, code: &LatentCode<T>) -> Result<GeneratorOutput<T>> {
        self.avatar.forward(p, cond, code, ToImageBranches::All)
    }

    /// Full pipeline on `[B, 3, R, R]` render and uv rasters in `[0, 1]`.
    pub fn forward(
        &self,
        p: &Bound<T>,
        render: &Var<T>,
        uv: &Var<T>,
        noise: &NoiseSet<T>,
        branches: ToImageBranches,
    ) -> Result<PipelineOutput<T>> {
        let (face_canvas, background_canvas) = self.canvases(p, noise)?;
        let output = self.avatar_from_canvases(p, &face_canvas, &background_canvas, render, uv, noise, branches)?;
        Ok(PipelineOutput {
            face_canvas,
            background_canvas,
            output,
        })
    }

    /// `(F_fa, F_b)`; they depend only on the latents and noise, so
    /// inference computes them once.
    pub fn canvases(&self, p: &Bound<T>, noise: &NoiseSet<T>) -> Result<(Var<T>, Var<T>)> {
        let face = self.gen_face(p, &Self::code(p, self.z_face, &noise.face))?;
        let background = self.gen_background(p, &Self::code(p, self.z_background, &noise.background))?;
        Ok((face, background))
    }

    #[allow(clippy::too_many_arguments)]
    pub fn avatar_from_canvases(
        &self,
        p: &Bound<T>,
        face_canvas: &Var<T>,
        background_canvas: &Var<T>,
        render: &Var<T>,
        uv: &Var<T>,
        noise: &NoiseSet<T>,
        branches: ToImageBranches,
    ) -> Result<GeneratorOutput<T>> {
        let cond = ConditionSet {
            face_canvas: face_canvas.clone(),
            background_canvas: background_canvas.clone(),
            render: to_model_range(render),
            uv: to_model_range(uv),
        };
        let code = Self::code(p, self.z_avatar, &noise.avatar);
        self.avatar.forward(p, &cond, &code, branches)
    }

    /// Names of the latent vectors inside `params`.
    pub fn latent_names() -> [&'static str; 3] {
        ["latent.face", "latent.background", "latent.avatar"]
    }
}
