use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::attention::default_lambda;
use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::model::codec::area_downsample;
use crate::model::config::{Injection, Mode, ModelConfig, PluckerEncoding, GLOBAL_POOL};
use crate::model::inputs::{ControlSignal, GlobalEmbedding, GlobalSource, ModelInput, Role, Segment, ViewTokenBatch};
use crate::model::patch::{area_pool_matrix, patch_index, patchify, unpatchify};
use crate::model::posenc::{posenc_2d, sinusoidal_posenc};
use crate::params::{self, ParamStore};
use crate::rng;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
enum Init {
    Zeros,
    Lecun,
    Normal(f64),
    Uniform(f64),
}

struct Spec {
    name: String,
    rows: usize,
    cols: usize,
    init: Init,
}

fn linear_specs(out: &mut Vec<Spec>, name: &str, fan_in: usize, fan_out: usize, zero: bool) {
    let init = if zero { Init::Zeros } else { Init::Lecun };
    out.push(Spec { name: format!("{name}.w"), rows: fan_in, cols: fan_out, init });
    out.push(Spec { name: format!("{name}.b"), rows: 1, cols: fan_out, init: Init::Zeros });
}

/// Prefix shared by every parameter of the post-training control path.
pub const CONTROL_PREFIX: &str = "control.";
/// Prefix of the mid-training camera token MLP.
pub const CAMERA_PREFIX: &str = "camera.";

const ROLE_INIT: f64 = 0.02;

fn backbone_specs(c: &ModelConfig) -> Vec<Spec> {
    let d = c.dim;
    let mut s = Vec::new();
    linear_specs(&mut s, "patch_embed", c.patch_dim(), d, false);
    s.push(Spec { name: "role_embed".into(), rows: 3, cols: d, init: Init::Normal(ROLE_INIT) });
    s.push(Spec { name: "view_embed".into(), rows: c.max_views, cols: d, init: Init::Zeros });
    s.push(Spec { name: "null_ref".into(), rows: 1, cols: d, init: Init::Normal(ROLE_INIT) });
    linear_specs(&mut s, "t_embed.fc1", d, d, false);
    linear_specs(&mut s, "t_embed.fc2", d, d, false);
    if c.global_embedding {
        linear_specs(&mut s, "global", GLOBAL_POOL * GLOBAL_POOL * c.channels, d, false);
        s.push(Spec { name: "null_global".into(), rows: 1, cols: d, init: Init::Normal(ROLE_INIT) });
    }
    for i in 0..c.depth {
        for part in ["shift", "scale", "gate_attn", "gate_mlp"] {
            linear_specs(&mut s, &format!("blocks.{i}.ada.{part}"), d, d, true);
        }
        for part in ["q", "k", "v", "o"] {
            linear_specs(&mut s, &format!("blocks.{i}.attn.{part}"), d, d, false);
        }
        linear_specs(&mut s, &format!("blocks.{i}.mlp.fc1"), d, c.mlp_ratio * d, false);
        linear_specs(&mut s, &format!("blocks.{i}.mlp.fc2"), c.mlp_ratio * d, d, false);
    }
    linear_specs(&mut s, "final.ada.shift", d, d, true);
    linear_specs(&mut s, "final.ada.scale", d, d, true);
    linear_specs(&mut s, "final.head", d, c.patch_dim(), false);
    s
}

/// Channels of the spatial control grid before patching.
fn control_channels(c: &ModelConfig, mode: Mode) -> usize {
    match mode {
        Mode::Midtrain => 0,
        Mode::Posttrain { inputs, .. } => {
            let p = match inputs.plucker {
                PluckerEncoding::None => 0,
                PluckerEncoding::Raw => 6,
                PluckerEncoding::Siren => c.siren_features,
            };
            p + if inputs.anchor { c.channels } else { 0 }
        }
    }
}

fn mode_specs(c: &ModelConfig, mode: Mode) -> Result<Vec<Spec>> {
    let d = c.dim;
    let mut s = Vec::new();
    match mode {
        Mode::Midtrain => {
            linear_specs(&mut s, "camera.fc1", 16, d, false);
            linear_specs(&mut s, "camera.fc2", d, d, false);
        }
        Mode::Posttrain { injection, inputs } => {
            let cin = control_channels(c, mode);
            if cin == 0 {
                return Err(Error::InvalidArgument("post-training control needs Plücker or anchor input".into()));
            }
            if inputs.plucker == PluckerEncoding::Siren {
                let bound = 1.0 / 6.0;
                let f = c.siren_features;
                s.push(Spec { name: "control.siren.w".into(), rows: 6, cols: f, init: Init::Uniform(bound) });
                s.push(Spec { name: "control.siren.b".into(), rows: 1, cols: f, init: Init::Uniform(bound) });
            }
            linear_specs(&mut s, "control.in", cin * c.patch * c.patch, d, false);
            linear_specs(&mut s, "control.hidden", d, d, false);
            match injection {
                Injection::Modulation => {
                    for i in 0..c.depth {
                        linear_specs(&mut s, &format!("control.blocks.{i}.scale"), d, d, true);
                        linear_specs(&mut s, &format!("control.blocks.{i}.shift"), d, d, true);
                    }
                }
                Injection::PositionalEncoding => linear_specs(&mut s, "control.pe", d, d, true),
                Injection::CrossAttention => {
                    for i in 0..c.depth {
                        for part in ["q", "k", "v"] {
                            linear_specs(&mut s, &format!("control.cross.{i}.{part}"), d, d, false);
                        }
                        linear_specs(&mut s, &format!("control.cross.{i}.o"), d, d, true);
                    }
                }
            }
        }
    }
    Ok(s)
}

fn init_tensor(rng: &mut rng::Rng, spec: &Spec) -> Tensor {
    match spec.init {
        Init::Zeros => Tensor::zeros(spec.rows, spec.cols),
        Init::Lecun => params::lecun_normal(rng, spec.rows, spec.cols),
        Init::Normal(std) => params::normal(rng, spec.rows, spec.cols, std),
        Init::Uniform(b) => params::uniform(rng, spec.rows, spec.cols, b),
    }
}

fn grid_rows(g: &Grid) -> Tensor {
    Tensor::from_vec(g.height * g.width, g.channels, g.data.clone()).expect("grid size")
}

/// Maps an image in `[0, 1]` to a latent in `[−1, 1]`.
pub fn encode_image(image: &Grid, factor: usize) -> Result<Grid> {
    Ok(area_downsample(image, factor)?.map(|x| 2.0 * x - 1.0))
}

/// Inverse of [`encode_image`], back to `[0, 1]` (unclamped).
pub fn decode_latent(latent: &Grid, factor: usize) -> Result<Grid> {
    Ok(crate::model::codec::latent_codec_decode(latent, factor)?.map(|x| 0.5 * (x + 1.0)))
}

fn pool_global(image: &Grid, channels: usize) -> Result<Tensor> {
    if image.channels != channels || image.height % GLOBAL_POOL != 0 || image.width % GLOBAL_POOL != 0 {
        return Err(Error::InvalidArgument(format!(
            "global encoder input {}x{}x{} incompatible with {GLOBAL_POOL}x{GLOBAL_POOL} pooling of {channels} channels",
            image.height, image.width, image.channels
        )));
    }
    let (ch, cw) = (image.height / GLOBAL_POOL, image.width / GLOBAL_POOL);
    let mut out = Tensor::zeros(1, GLOBAL_POOL * GLOBAL_POOL * channels);
    let inv = 1.0 / (ch * cw) as f64;
    for r in 0..image.height {
        for c in 0..image.width {
            let cell = (r / ch) * GLOBAL_POOL + c / cw;
            for k in 0..channels {
                out.data_mut()[cell * channels + k] += image.get(r, c, k) * inv;
            }
        }
    }
    Ok(out)
}

enum ControlVars {
    None,
    Modulation(Vec<(Var, Var)>),
    Cross(Var),
}

struct Embedded {
    tokens: Var,
    segments: Vec<Segment>,
    cameras: Vec<Option<crate::camera::CameraParams>>,
}

/// The multi-view diffusion transformer: configuration plus parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Mvdit {
    config: ModelConfig,
    params: ParamStore,
    seed: u64,
}

impl Mvdit {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut m = Self { config, params: ParamStore::new(), seed };
        m.add_missing(&backbone_specs(&config), 0);
        m.add_missing(&mode_specs(&config, config.mode)?, 1);
        Ok(m)
    }

    /// Rebuilds a model from stored parameters, checking every required
    /// tensor is present with the right shape.
    pub fn from_parts(config: ModelConfig, params: ParamStore, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut specs = backbone_specs(&config);
        specs.extend(mode_specs(&config, config.mode)?);
        for s in &specs {
            let t = params.get(&s.name).ok_or_else(|| Error::UnknownParameter(s.name.clone()))?;
            if t.shape() != (s.rows, s.cols) {
                return Err(crate::error::shape_err(
                    format!("{} {}x{}", s.name, s.rows, s.cols),
                    format!("{}x{}", t.rows(), t.cols()),
                ));
            }
        }
        Ok(Self { config, params, seed })
    }

    fn add_missing(&mut self, specs: &[Spec], stream: u64) {
        let mut rng = rng::stream(self.seed, stream);
        for s in specs {
            if !self.params.contains(&s.name) {
                let t = init_tensor(&mut rng, s);
                self.params.add(&s.name, t);
            }
        }
    }

    /// Switches the conditioning mode, adding freshly initialized parameters
    /// for the new path. Existing parameters are kept.
    pub fn set_mode(&mut self, mode: Mode) -> Result<()> {
        let specs = mode_specs(&self.config, mode)?;
        let stream = match mode {
            Mode::Midtrain => 1,
            Mode::Posttrain { .. } => 2,
        };
        self.add_missing(&specs, stream);
        self.config.mode = mode;
        Ok(())
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    fn p(&self, g: &mut Graph, name: &str) -> Result<Var> {
        g.param_named(&self.params, name)
    }

    fn linear(&self, g: &mut Graph, name: &str, x: Var) -> Result<Var> {
        let w = self.p(g, &format!("{name}.w"))?;
        let b = self.p(g, &format!("{name}.b"))?;
        let y = g.matmul(x, w)?;
        g.add_row(y, b)
    }

    fn check_input(&self, input: &ModelInput) -> Result<()> {
        let c = &self.config;
        let n = input.noisy.len();
        if n == 0 || n > c.max_views {
            return Err(Error::InvalidArgument(format!("{n} target views, expected 1..={}", c.max_views)));
        }
        if input.conditioning.views() != n {
            return Err(crate::error::shape_err(format!("{n} conditioning views"), input.conditioning.views()));
        }
        let shape = (c.latent_height(), c.latent_width(), c.channels);
        let latents = input.noisy.iter().chain(input.reference).chain(input.face);
        for l in latents {
            if (l.height, l.width, l.channels) != shape {
                return Err(crate::error::shape_err(
                    format!("{shape:?} latent"),
                    format!("{:?}", (l.height, l.width, l.channels)),
                ));
            }
        }
        if let Some(slots) = input.view_slots {
            if slots.len() != n || slots.iter().any(|&s| s >= c.max_views) {
                return Err(Error::InvalidArgument("view slots must name one valid slot per view".into()));
            }
        }
        if input.global.is_some() && !c.global_embedding {
            return Err(Error::ModeMismatch("global input given but the model has no global embedding".into()));
        }
        Ok(())
    }

    fn time_embedding(&self, g: &mut Graph, input: &ModelInput) -> Result<Var> {
        let d = self.config.dim;
        let s = g.constant(Tensor::from_vec(1, d, sinusoidal_posenc(input.t as f64, d)?)?);
        let h = self.linear(g, "t_embed.fc1", s)?;
        let h = g.silu(h);
        let temb = self.linear(g, "t_embed.fc2", h)?;
        if !self.config.global_embedding {
            return Ok(temb);
        }
        let e = match (input.global, input.drop_conditioning) {
            (Some(GlobalSource::Image(img)), false) => {
                let pooled = g.constant(pool_global(img, self.config.channels)?);
                self.linear(g, "global", pooled)?
            }
            (Some(GlobalSource::Embedding(e)), false) => {
                if e.as_tensor().cols() != d {
                    return Err(crate::error::shape_err(d, e.as_tensor().cols()));
                }
                g.constant(e.as_tensor().clone())
            }
            _ => self.p(g, "null_global")?,
        };
        g.add(temb, e)
    }

    /// The toy stand-in for an image-level encoder: 4×4 mean pool then a
    /// linear map to the model width.
    pub fn toy_global_encoder(&self, image: &Grid) -> Result<GlobalEmbedding> {
        if !self.config.global_embedding {
            return Err(Error::ModeMismatch("model has no global embedding".into()));
        }
        let mut g = Graph::new();
        let pooled = g.constant(pool_global(image, self.config.channels)?);
        let e = self.linear(&mut g, "global", pooled)?;
        GlobalEmbedding::new(g.value(e).data().to_vec())
    }

    fn camera_token(&self, g: &mut Graph, cam: &crate::camera::CameraParams) -> Result<Var> {
        let x = g.constant(Tensor::from_vec(1, 16, cam.flat16().to_vec())?);
        let h = self.linear(g, "camera.fc1", x)?;
        let h = g.silu(h);
        self.linear(g, "camera.fc2", h)
    }

    fn image_tokens(&self, g: &mut Graph, latent: Option<&Grid>, role: usize) -> Result<Var> {
        let c = &self.config;
        let (gh, gw) = c.token_grid();
        let base = match latent {
            Some(l) => {
                let raw = g.constant(patchify(l, c.patch)?);
                self.linear(g, "patch_embed", raw)?
            }
            None => {
                let z = g.constant(Tensor::zeros(gh * gw, c.dim));
                let null = self.p(g, "null_ref")?;
                g.add_row(z, null)?
            }
        };
        let pos = g.constant(posenc_2d(gh, gw, c.dim)?);
        let x = g.add(base, pos)?;
        let roles = self.p(g, "role_embed")?;
        let r = g.slice_rows(roles, role, 1)?;
        g.add_row(x, r)
    }

    /// Spatial control features for every target view, patched to token
    /// alignment: `(views·tokens) × (channels·patch²)`.
    fn control_features(&self, g: &mut Graph, input: &ModelInput) -> Result<Var> {
        let c = &self.config;
        let Mode::Posttrain { inputs, .. } = c.mode else {
            return Err(Error::ModeMismatch("control features need post-training mode".into()));
        };
        let (hh, ww, f) = (c.image_height, c.image_width, c.latent_downsample);
        let (lh, lw) = (c.latent_height(), c.latent_width());
        let cin = control_channels(c, c.mode);
        let mut views = Vec::with_capacity(input.noisy.len());
        for v in 0..input.noisy.len() {
            let mut parts = Vec::new();
            if inputs.plucker != PluckerEncoding::None {
                let pl = input
                    .conditioning
                    .plucker(v)
                    .ok_or_else(|| Error::ModeMismatch(format!("view {v} has no Plücker grid")))?;
                if (pl.height, pl.width) != (hh, ww) {
                    return Err(crate::error::shape_err(
                        format!("{hh}x{ww} Plücker grid"),
                        format!("{}x{}", pl.height, pl.width),
                    ));
                }
                if inputs.plucker == PluckerEncoding::Raw {
                    parts.push(g.constant(grid_rows(&area_downsample(&pl.to_grid(), f)?)));
                } else {
                    let x = g.constant(grid_rows(&pl.to_grid()));
                    let w = self.p(g, "control.siren.w")?;
                    let b = self.p(g, "control.siren.b")?;
                    let pre = g.matmul(x, w)?;
                    let pre = g.add_row(pre, b)?;
                    let pre = g.scale(pre, c.siren_omega0);
                    let mut feat = g.sin(pre);
                    if f > 1 {
                        let fw = c.siren_features;
                        let idx = patch_index(hh, ww, fw, f)?;
                        let blocks = g.gather(feat, idx, lh * lw, f * f * fw)?;
                        let pool = g.constant(area_pool_matrix(fw, f));
                        feat = g.matmul(blocks, pool)?;
                    }
                    parts.push(feat);
                }
            }
            if inputs.anchor {
                let a = input
                    .conditioning
                    .anchor(v)
                    .ok_or_else(|| Error::ModeMismatch(format!("view {v} has no anchor image")))?;
                if (a.0.height, a.0.width, a.0.channels) != (hh, ww, c.channels) {
                    return Err(crate::error::shape_err(
                        format!("{hh}x{ww}x{} anchor image", c.channels),
                        format!("{}x{}x{}", a.0.height, a.0.width, a.0.channels),
                    ));
                }
                parts.push(g.constant(grid_rows(&encode_image(&a.0, f)?)));
            }
            let spatial = if parts.len() == 1 { parts[0] } else { g.concat_cols(&parts)? };
            let idx = patch_index(lh, lw, cin, c.patch)?;
            views.push(g.gather(spatial, idx, c.tokens_per_view(), cin * c.patch * c.patch)?);
        }
        g.concat_rows(&views)
    }

    fn control_trunk(&self, g: &mut Graph, input: &ModelInput, temb: Option<Var>) -> Result<Var> {
        let feats = self.control_features(g, input)?;
        let mut h = self.linear(g, "control.in", feats)?;
        if let Some(t) = temb {
            h = g.add_row(h, t)?;
        }
        let h = g.silu(h);
        let h = self.linear(g, "control.hidden", h)?;
        Ok(g.silu(h))
    }

    fn control(&self, g: &mut Graph, input: &ModelInput, temb: Var) -> Result<ControlVars> {
        match self.config.mode {
            Mode::Posttrain { injection: Injection::Modulation, .. } => {
                let h = self.control_trunk(g, input, Some(temb))?;
                let mut blocks = Vec::with_capacity(self.config.depth);
                for i in 0..self.config.depth {
                    let s = self.linear(g, &format!("control.blocks.{i}.scale"), h)?;
                    let t = self.linear(g, &format!("control.blocks.{i}.shift"), h)?;
                    blocks.push((s, t));
                }
                Ok(ControlVars::Modulation(blocks))
            }
            Mode::Posttrain { injection: Injection::CrossAttention, .. } => {
                Ok(ControlVars::Cross(self.control_trunk(g, input, Some(temb))?))
            }
            _ => Ok(ControlVars::None),
        }
    }

    fn embed(&self, g: &mut Graph, input: &ModelInput) -> Result<Embedded> {
        let c = &self.config;
        let n = input.noisy.len();
        let tpv = c.tokens_per_view();
        let views = self.p(g, "view_embed")?;
        let mut parts = Vec::with_capacity(n + 2);
        let mut segments = Vec::new();
        let mut cameras = Vec::with_capacity(n);
        for (v, latent) in input.noisy.iter().enumerate() {
            let mut x = self.image_tokens(g, Some(latent), 0)?;
            let slot = input.view_slots.map_or(v, |s| s[v]);
            let ve = g.slice_rows(views, slot, 1)?;
            x = g.add_row(x, ve)?;
            if c.mode == Mode::Midtrain {
                let cam = input
                    .conditioning
                    .camera(v)
                    .ok_or_else(|| Error::ModeMismatch(format!("view {v} has no camera")))?;
                let tok = self.camera_token(g, cam)?;
                x = g.add_row(x, tok)?;
                cameras.push(Some(cam.clone()));
            } else {
                cameras.push(None);
            }
            parts.push(x);
            segments.extend(core::iter::repeat_n(Segment { view: Some(v), role: Role::Target }, tpv));
        }
        if let Mode::Posttrain { injection: Injection::PositionalEncoding, .. } = c.mode {
            let targets = g.concat_rows(&parts)?;
            let h = self.control_trunk(g, input, None)?;
            let pe = self.linear(g, "control.pe", h)?;
            parts = vec![g.add(targets, pe)?];
        }
        for (latent, role, r) in [(input.reference, Role::Reference, 1), (input.face, Role::Face, 2)] {
            if let Some(l) = latent {
                let l = if input.drop_conditioning { None } else { Some(l) };
                parts.push(self.image_tokens(g, l, r)?);
                segments.extend(core::iter::repeat_n(Segment { view: None, role }, tpv));
            }
        }
        let tokens = g.concat_rows(&parts)?;
        Ok(Embedded { tokens, segments, cameras })
    }

    /// One transformer block. `temb` is the `1×dim` conditioning embedding;
    /// `control` is an optional `(scale, shift)` pair over all tokens.
    pub fn block_forward(
        &self,
        g: &mut Graph,
        layer: usize,
        x: Var,
        temb: Var,
        control: Option<(Var, Var)>,
        lambda: f64,
    ) -> Result<Var> {
        let c = g.silu(temb);
        self.block(g, layer, x, c, control, lambda)
    }

    fn block(&self, g: &mut Graph, i: usize, x: Var, c: Var, control: Option<(Var, Var)>, lambda: f64) -> Result<Var> {
        let mut h = g.layer_norm(x);
        if let Some((scale, shift)) = control {
            h = g.modulate(h, scale, shift)?;
        }
        let shift = self.linear(g, &format!("blocks.{i}.ada.shift"), c)?;
        let scale = self.linear(g, &format!("blocks.{i}.ada.scale"), c)?;
        let gate_a = self.linear(g, &format!("blocks.{i}.ada.gate_attn"), c)?;
        let gate_m = self.linear(g, &format!("blocks.{i}.ada.gate_mlp"), c)?;
        let h = g.modulate(h, scale, shift)?;
        let q = self.linear(g, &format!("blocks.{i}.attn.q"), h)?;
        let k = self.linear(g, &format!("blocks.{i}.attn.k"), h)?;
        let v = self.linear(g, &format!("blocks.{i}.attn.v"), h)?;
        let a = g.attention(q, k, v, self.config.heads, lambda, Some(i))?;
        let a = self.linear(g, &format!("blocks.{i}.attn.o"), a)?;
        let m = self.linear(g, &format!("blocks.{i}.mlp.fc1"), h)?;
        let m = g.gelu(m);
        let m = self.linear(g, &format!("blocks.{i}.mlp.fc2"), m)?;
        let a = g.mul_row(a, gate_a)?;
        let m = g.mul_row(m, gate_m)?;
        let x = g.add(x, a)?;
        g.add(x, m)
    }

    fn cross_block(&self, g: &mut Graph, i: usize, x: Var, ctrl: Var, n_target: usize) -> Result<Var> {
        let total = g.value(x).rows();
        let tpv = self.config.tokens_per_view();
        let xt = g.slice_rows(x, 0, n_target)?;
        let h = g.layer_norm(xt);
        let q = self.linear(g, &format!("control.cross.{i}.q"), h)?;
        let k = self.linear(g, &format!("control.cross.{i}.k"), ctrl)?;
        let v = self.linear(g, &format!("control.cross.{i}.v"), ctrl)?;
        let lambda = default_lambda(self.config.head_dim());
        let mut outs = Vec::with_capacity(n_target / tpv);
        for view in 0..n_target / tpv {
            let qv = g.slice_rows(q, view * tpv, tpv)?;
            let kv = g.slice_rows(k, view * tpv, tpv)?;
            let vv = g.slice_rows(v, view * tpv, tpv)?;
            outs.push(g.attention(qv, kv, vv, self.config.heads, lambda, None)?);
        }
        let o = g.concat_rows(&outs)?;
        let o = self.linear(g, &format!("control.cross.{i}.o"), o)?;
        let xt = g.add(xt, o)?;
        if total == n_target {
            return Ok(xt);
        }
        let rest = g.slice_rows(x, n_target, total - n_target)?;
        g.concat_rows(&[xt, rest])
    }

    /// ε-prediction for the target tokens, `(views·tokens) × patch_dim`.
    pub fn forward(&self, g: &mut Graph, input: &ModelInput) -> Result<Var> {
        self.check_input(input)?;
        let c = &self.config;
        let n_target = input.noisy.len() * c.tokens_per_view();
        let lambda = input.lambda.unwrap_or_else(|| default_lambda(c.head_dim()));
        let temb = self.time_embedding(g, input)?;
        let emb = self.embed(g, input)?;
        let total = emb.segments.len();
        let cond = g.silu(temb);
        let control = self.control(g, input, temb)?;
        let pad = if total > n_target { Some(g.constant(Tensor::zeros(total - n_target, c.dim))) } else { None };
        let mut x = emb.tokens;
        for i in 0..c.depth {
            let ctrl = match &control {
                ControlVars::Modulation(blocks) => {
                    let (s, t) = blocks[i];
                    Some(match pad {
                        Some(z) => (g.concat_rows(&[s, z])?, g.concat_rows(&[t, z])?),
                        None => (s, t),
                    })
                }
                _ => None,
            };
            x = self.block(g, i, x, cond, ctrl, lambda)?;
            if let ControlVars::Cross(tokens) = control {
                x = self.cross_block(g, i, x, tokens, n_target)?;
            }
        }
        let h = g.layer_norm(x);
        let shift = self.linear(g, "final.ada.shift", cond)?;
        let scale = self.linear(g, "final.ada.scale", cond)?;
        let h = g.modulate(h, scale, shift)?;
        let h = g.slice_rows(h, 0, n_target)?;
        self.linear(g, "final.head", h)
    }

    /// Forward pass returning one ε-prediction grid per target view.
    pub fn predict(&self, input: &ModelInput) -> Result<Vec<Grid>> {
        let mut g = Graph::inference();
        let out = self.forward(&mut g, input)?;
        self.split_views(g.value(out))
    }

    /// Like [`Mvdit::predict`] but also returns attention entropy for the
    /// listed layers.
    pub fn predict_probed(&self, input: &ModelInput, layers: Vec<usize>) -> Result<(Vec<Grid>, Vec<crate::autograd::ProbeRecord>)> {
        let mut g = Graph::inference();
        g.probe_layers(layers);
        let out = self.forward(&mut g, input)?;
        Ok((self.split_views(g.value(out))?, g.probes().to_vec()))
    }

    pub fn split_views(&self, tokens: &Tensor) -> Result<Vec<Grid>> {
        let c = &self.config;
        let tpv = c.tokens_per_view();
        (0..tokens.rows() / tpv)
            .map(|v| unpatchify(&tokens.slice_rows(v * tpv, tpv), c.latent_height(), c.latent_width(), c.channels, c.patch))
            .collect()
    }

    /// Mean squared error between the prediction and the true noise of
    /// every target view.
    pub fn loss(&self, g: &mut Graph, input: &ModelInput, noise: &[Grid]) -> Result<Var> {
        let out = self.forward(g, input)?;
        let parts: Vec<Tensor> = noise.iter().map(|e| patchify(e, self.config.patch)).collect::<Result<_>>()?;
        let refs: Vec<&Tensor> = parts.iter().collect();
        g.mse(out, Tensor::concat_rows(&refs)?)
    }

    /// Embedded input sequence before the first block.
    pub fn token_batch(&self, input: &ModelInput) -> Result<ViewTokenBatch> {
        self.check_input(input)?;
        let mut g = Graph::new();
        let emb = self.embed(&mut g, input)?;
        Ok(ViewTokenBatch {
            tokens: g.value(emb.tokens).clone(),
            segments: emb.segments,
            cameras: emb.cameras,
        })
    }

    /// Per-block control over target tokens, or `None` when the mode has no
    /// modulation control.
    pub fn control_signal(&self, input: &ModelInput) -> Result<Option<ControlSignal>> {
        self.check_input(input)?;
        let mut g = Graph::new();
        let temb = self.time_embedding(&mut g, input)?;
        Ok(match self.control(&mut g, input, temb)? {
            ControlVars::Modulation(blocks) => Some(ControlSignal {
                blocks: blocks.iter().map(|&(s, t)| (g.value(s).clone(), g.value(t).clone())).collect(),
            }),
            _ => None,
        })
    }
}
