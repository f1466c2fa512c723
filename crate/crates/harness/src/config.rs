//! Flat `key = value` run configuration.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use mvdit_core::attention::Scaling;
use mvdit_core::model::{Injection, Mode, ModelConfig, PluckerEncoding};
use mvdit_core::optim::{OptimizerKind, Warmup};
use mvdit_core::params::Precision;
use mvdit_core::schedule::{make_schedule, CfgMode, CfgPolicy, DiffusionSchedule};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("line {line}: expected key = value")]
    Syntax { line: usize },
    #[error("unknown key {0:?}")]
    UnknownKey(String),
    #[error("bad value {value:?} for {key}: {reason}")]
    BadValue { key: String, value: String, reason: String },
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    /// The mid-trained checkpoint, evaluated without further training.
    Baseline,
    CameraMlp,
    PluckerPe,
    PluckerControlMlp,
    PluckerSirenControlMlp,
    AnchorFull,
    NoAnchor,
    NoPlucker,
    CrossAttn,
}

impl Variant {
    pub const ALL: [Variant; 9] = [
        Variant::Baseline,
        Variant::CameraMlp,
        Variant::PluckerPe,
        Variant::PluckerControlMlp,
        Variant::PluckerSirenControlMlp,
        Variant::AnchorFull,
        Variant::NoAnchor,
        Variant::NoPlucker,
        Variant::CrossAttn,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Baseline => "baseline",
            Variant::CameraMlp => "camera_mlp",
            Variant::PluckerPe => "plucker_pe",
            Variant::PluckerControlMlp => "plucker_controlmlp",
            Variant::PluckerSirenControlMlp => "plucker_siren_controlmlp",
            Variant::AnchorFull => "anchor_full",
            Variant::NoAnchor => "no_anchor",
            Variant::NoPlucker => "no_plucker",
            Variant::CrossAttn => "cross_attn",
        }
    }

    pub fn mode(self) -> Mode {
        use Injection::*;
        use PluckerEncoding::*;
        match self {
            Variant::Baseline | Variant::CameraMlp => Mode::Midtrain,
            Variant::PluckerPe => Mode::posttrain(PositionalEncoding, Raw, false),
            Variant::PluckerControlMlp => Mode::posttrain(Modulation, Raw, false),
            Variant::PluckerSirenControlMlp | Variant::NoAnchor => Mode::posttrain(Modulation, Siren, false),
            Variant::AnchorFull => Mode::posttrain(Modulation, Siren, true),
            Variant::NoPlucker => Mode::posttrain(Modulation, PluckerEncoding::None, true),
            Variant::CrossAttn => Mode::posttrain(CrossAttention, Siren, true),
        }
    }

    /// Whether the named parameter belongs to this variant's trainable
    /// control pathway.
    pub fn trains(self, name: &str) -> bool {
        match self {
            Variant::Baseline => false,
            Variant::CameraMlp => name.starts_with(mvdit_core::model::CAMERA_PREFIX),
            _ => name.starts_with(mvdit_core::model::CONTROL_PREFIX),
        }
    }
}

impl FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| format!("unknown variant {s:?}"))
    }
}

fn mode_name(m: Mode) -> String {
    match m {
        Mode::Midtrain => "midtrain".into(),
        Mode::Posttrain { injection, inputs } => {
            let inj = match injection {
                Injection::Modulation => "modulation",
                Injection::PositionalEncoding => "pe",
                Injection::CrossAttention => "cross",
            };
            let pl = match inputs.plucker {
                PluckerEncoding::None => "none",
                PluckerEncoding::Raw => "raw",
                PluckerEncoding::Siren => "siren",
            };
            format!("posttrain:{inj}:{pl}:{}", if inputs.anchor { "anchor" } else { "noanchor" })
        }
    }
}

pub fn parse_mode(s: &str) -> Result<Mode, String> {
    if s == "midtrain" {
        return Ok(Mode::Midtrain);
    }
    if s == "posttrain" {
        return Ok(Variant::AnchorFull.mode());
    }
    let parts: Vec<&str> = s.split(':').collect();
    let [head, inj, pl, anchor] = parts[..] else {
        return Err(format!("unknown mode {s:?}"));
    };
    if head != "posttrain" {
        return Err(format!("unknown mode {s:?}"));
    }
    let injection = match inj {
        "modulation" => Injection::Modulation,
        "pe" => Injection::PositionalEncoding,
        "cross" => Injection::CrossAttention,
        _ => return Err(format!("unknown injection {inj:?}")),
    };
    let plucker = match pl {
        "none" => PluckerEncoding::None,
        "raw" => PluckerEncoding::Raw,
        "siren" => PluckerEncoding::Siren,
        _ => return Err(format!("unknown Plücker encoding {pl:?}")),
    };
    let anchor = match anchor {
        "anchor" => true,
        "noanchor" => false,
        _ => return Err(format!("unknown anchor flag {anchor:?}")),
    };
    Ok(Mode::posttrain(injection, plucker, anchor))
}

/// Every tunable of a run. Defaults are the desk-scale setup.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    // model
    pub depth: usize,
    pub dim: usize,
    pub heads: usize,
    pub patch: usize,
    pub latent_downsample: usize,
    pub image_size: usize,
    pub max_views: usize,
    pub mlp_ratio: usize,
    pub siren_features: usize,
    pub siren_omega0: f64,
    pub global_embedding: bool,
    pub mode: Mode,
    pub param_precision: Precision,
    // schedule and sampling
    pub diffusion_steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    pub sample_steps: usize,
    /// Predicted-x0 clamp during sampling; 0 disables it.
    pub sample_clip: f64,
    pub cfg_mode: CfgMode,
    pub cfg_base: f64,
    pub cfg_peak: f64,
    pub dropout_p: f64,
    pub ratio_multiplier: f64,
    // optimization
    pub optimizer: String,
    pub lr: f64,
    pub lr_start: f64,
    pub warmup_steps: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub weight_decay: f64,
    pub steps: usize,
    /// Reuse the first batch for every step.
    pub fixed_batch: bool,
    pub log_every: usize,
    // data and views
    pub dataset: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub resume: Option<PathBuf>,
    pub n_train_views: usize,
    pub n_infer_views: usize,
    pub ref_view: usize,
    pub val_every: usize,
    pub eval_views: usize,
    pub anchor_axis_len: f64,
    // variants
    pub variant: Variant,
    pub variants: Vec<Variant>,
    pub overfit_steps: usize,
    // attention
    /// Softmax scaling when the sampled sequence is longer than training.
    pub gamma: Scaling,
    pub probe_layers: Option<Vec<usize>>,
    pub sweep_source: String,
    pub sweep_tokens: Vec<usize>,
    pub sweep_views: Vec<usize>,
    pub sweep_scalings: Vec<Scaling>,
    pub sweep_train_tokens: usize,
    pub sweep_head_dim: usize,
    pub sweep_seeds: usize,
    // metric
    pub re_conf_threshold: f64,
    pub re_min_matches: usize,
    pub re_sigma: f64,
    // scene generation
    pub n_views: usize,
    pub n_objects: usize,
    pub n_scenes: usize,
    pub n_points: usize,
    pub camera_radius: f64,
    pub focal_scale: f64,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let m = ModelConfig::default();
        Self {
            depth: m.depth,
            dim: m.dim,
            heads: m.heads,
            patch: m.patch,
            latent_downsample: m.latent_downsample,
            image_size: m.image_height,
            max_views: 48,
            mlp_ratio: m.mlp_ratio,
            siren_features: m.siren_features,
            siren_omega0: m.siren_omega0,
            global_embedding: m.global_embedding,
            mode: Mode::Midtrain,
            param_precision: Precision::F32,
            diffusion_steps: 1000,
            beta_start: 1e-4,
            beta_end: 0.02,
            sample_steps: 50,
            sample_clip: 1.0,
            cfg_mode: CfgMode::Constant,
            cfg_base: 1.0,
            cfg_peak: 1.0,
            dropout_p: 0.2,
            ratio_multiplier: mvdit_core::schedule::DEFAULT_RATIO_MULTIPLIER,
            optimizer: "adam".into(),
            lr: 1e-4,
            lr_start: 1e-6,
            warmup_steps: 1000,
            beta1: 0.9,
            beta2: 0.98,
            adam_eps: 1e-6,
            weight_decay: 0.0,
            steps: 2000,
            fixed_batch: false,
            log_every: 100,
            dataset: None,
            checkpoint: None,
            resume: None,
            n_train_views: 8,
            n_infer_views: 8,
            ref_view: 0,
            val_every: 4,
            eval_views: 0,
            anchor_axis_len: 0.6,
            variant: Variant::AnchorFull,
            variants: vec![Variant::AnchorFull, Variant::CameraMlp],
            overfit_steps: 2000,
            gamma: Scaling::Gamma(1.0),
            probe_layers: None,
            sweep_source: "random".into(),
            sweep_tokens: vec![256, 1024, 4096],
            sweep_views: vec![1, 2, 5, 10],
            sweep_scalings: vec![
                Scaling::None,
                Scaling::Gamma(1.0),
                Scaling::Gamma(1.2),
                Scaling::Gamma(1.4),
                Scaling::Gamma(1.6),
                Scaling::Gamma(2.0),
            ],
            sweep_train_tokens: 256,
            sweep_head_dim: 64,
            sweep_seeds: 10,
            re_conf_threshold: 0.2,
            re_min_matches: 5,
            re_sigma: 0.0,
            n_views: 24,
            n_objects: 4,
            n_scenes: 4,
            n_points: 400,
            camera_radius: 3.0,
            focal_scale: 1.6,
            seed: 0,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: std::fmt::Display,
{
    value.parse().map_err(|e: T::Err| ConfigError::BadValue {
        key: key.into(),
        value: value.into(),
        reason: e.to_string(),
    })
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>, ConfigError>
where
    T::Err: std::fmt::Display,
{
    value.split(',').map(|v| parse(key, v.trim())).collect()
}

fn parse_scaling(key: &str, value: &str) -> Result<Scaling, ConfigError> {
    if value == "none" {
        Ok(Scaling::None)
    } else {
        Ok(Scaling::Gamma(parse(key, value)?))
    }
}

pub fn scaling_name(s: Scaling) -> String {
    match s {
        Scaling::None => "none".into(),
        Scaling::Gamma(g) => g.to_string(),
    }
}

impl RunConfig {
    pub fn from_file(path: &Path) -> anyhow::Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_file(path)?;
        Ok(cfg)
    }

    /// Layer another config file over the current values.
    pub fn apply_file(&mut self, path: &Path) -> anyhow::Result<()> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| anyhow::anyhow!("reading config {}: {e}", path.display()))?;
        self.apply_text(&text)?;
        Ok(())
    }

    pub fn apply_text(&mut self, text: &str) -> Result<(), ConfigError> {
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or(ConfigError::Syntax { line: i + 1 })?;
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, v: &str) -> Result<(), ConfigError> {
        let k = key;
        let path = |v: &str| if v.is_empty() { None } else { Some(PathBuf::from(v)) };
        match k {
            "depth" => self.depth = parse(k, v)?,
            "dim" => self.dim = parse(k, v)?,
            "heads" => self.heads = parse(k, v)?,
            "patch" => self.patch = parse(k, v)?,
            "latent_downsample" => self.latent_downsample = parse(k, v)?,
            "image_size" => self.image_size = parse(k, v)?,
            "max_views" => self.max_views = parse(k, v)?,
            "mlp_ratio" => self.mlp_ratio = parse(k, v)?,
            "siren_features" => self.siren_features = parse(k, v)?,
            "siren_omega0" => self.siren_omega0 = parse(k, v)?,
            "global_embedding" => self.global_embedding = parse(k, v)?,
            "mode" => {
                self.mode = parse_mode(v).map_err(|reason| ConfigError::BadValue { key: k.into(), value: v.into(), reason })?
            }
            "param_precision" => {
                self.param_precision = Precision::parse(v).map_err(|e| ConfigError::BadValue {
                    key: k.into(),
                    value: v.into(),
                    reason: e.to_string(),
                })?
            }
            "diffusion_steps" => self.diffusion_steps = parse(k, v)?,
            "beta_start" => self.beta_start = parse(k, v)?,
            "beta_end" => self.beta_end = parse(k, v)?,
            "sample_steps" => self.sample_steps = parse(k, v)?,
            "sample_clip" => self.sample_clip = parse(k, v)?,
            "cfg_mode" => {
                self.cfg_mode = match v {
                    "constant" => CfgMode::Constant,
                    "bump" => CfgMode::Bump,
                    _ => {
                        return Err(ConfigError::BadValue {
                            key: k.into(),
                            value: v.into(),
                            reason: "expected constant or bump".into(),
                        })
                    }
                }
            }
            "cfg_base" => self.cfg_base = parse(k, v)?,
            "cfg_peak" => self.cfg_peak = parse(k, v)?,
            "dropout_p" => self.dropout_p = parse(k, v)?,
            "ratio_multiplier" => self.ratio_multiplier = parse(k, v)?,
            "optimizer" => self.optimizer = v.into(),
            "lr" => self.lr = parse(k, v)?,
            "lr_start" => self.lr_start = parse(k, v)?,
            "warmup_steps" => self.warmup_steps = parse(k, v)?,
            "beta1" => self.beta1 = parse(k, v)?,
            "beta2" => self.beta2 = parse(k, v)?,
            "adam_eps" => self.adam_eps = parse(k, v)?,
            "weight_decay" => self.weight_decay = parse(k, v)?,
            "steps" => self.steps = parse(k, v)?,
            "fixed_batch" => self.fixed_batch = parse(k, v)?,
            "log_every" => self.log_every = parse(k, v)?,
            "dataset" => self.dataset = path(v),
            "checkpoint" => self.checkpoint = path(v),
            "resume" => self.resume = path(v),
            "n_train_views" => self.n_train_views = parse(k, v)?,
            "n_infer_views" => self.n_infer_views = parse(k, v)?,
            "ref_view" => self.ref_view = parse(k, v)?,
            "val_every" => self.val_every = parse(k, v)?,
            "eval_views" => self.eval_views = parse(k, v)?,
            "anchor_axis_len" => self.anchor_axis_len = parse(k, v)?,
            "variant" => self.variant = parse(k, v)?,
            "variants" => self.variants = parse_list(k, v)?,
            "overfit_steps" => self.overfit_steps = parse(k, v)?,
            "gamma" => self.gamma = parse_scaling(k, v)?,
            "probe_layers" => self.probe_layers = if v.is_empty() { None } else { Some(parse_list(k, v)?) },
            "sweep_source" => self.sweep_source = v.into(),
            "sweep_tokens" => self.sweep_tokens = parse_list(k, v)?,
            "sweep_views" => self.sweep_views = parse_list(k, v)?,
            "sweep_scalings" => {
                self.sweep_scalings = v.split(',').map(|s| parse_scaling(k, s.trim())).collect::<Result<_, _>>()?
            }
            "sweep_train_tokens" => self.sweep_train_tokens = parse(k, v)?,
            "sweep_head_dim" => self.sweep_head_dim = parse(k, v)?,
            "sweep_seeds" => self.sweep_seeds = parse(k, v)?,
            "re_conf_threshold" => self.re_conf_threshold = parse(k, v)?,
            "re_min_matches" => self.re_min_matches = parse(k, v)?,
            "re_sigma" => self.re_sigma = parse(k, v)?,
            "n_views" => self.n_views = parse(k, v)?,
            "n_objects" => self.n_objects = parse(k, v)?,
            "n_scenes" => self.n_scenes = parse(k, v)?,
            "n_points" => self.n_points = parse(k, v)?,
            "camera_radius" => self.camera_radius = parse(k, v)?,
            "focal_scale" => self.focal_scale = parse(k, v)?,
            "seed" => self.seed = parse(k, v)?,
            _ => return Err(ConfigError::UnknownKey(k.into())),
        }
        Ok(())
    }

    /// The model-defining keys, in a fixed order, as embedded in checkpoints.
    pub fn model_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "depth={}", self.depth);
        let _ = writeln!(s, "dim={}", self.dim);
        let _ = writeln!(s, "heads={}", self.heads);
        let _ = writeln!(s, "patch={}", self.patch);
        let _ = writeln!(s, "latent_downsample={}", self.latent_downsample);
        let _ = writeln!(s, "image_size={}", self.image_size);
        let _ = writeln!(s, "max_views={}", self.max_views);
        let _ = writeln!(s, "mlp_ratio={}", self.mlp_ratio);
        let _ = writeln!(s, "siren_features={}", self.siren_features);
        let _ = writeln!(s, "siren_omega0={}", self.siren_omega0);
        let _ = writeln!(s, "global_embedding={}", self.global_embedding);
        let _ = writeln!(s, "mode={}", mode_name(self.mode));
        let _ = writeln!(s, "param_precision={}", self.param_precision.name());
        let _ = writeln!(s, "diffusion_steps={}", self.diffusion_steps);
        let _ = writeln!(s, "beta_start={}", self.beta_start);
        let _ = writeln!(s, "beta_end={}", self.beta_end);
        let _ = writeln!(s, "n_train_views={}", self.n_train_views);
        s
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            depth: self.depth,
            dim: self.dim,
            heads: self.heads,
            patch: self.patch,
            latent_downsample: self.latent_downsample,
            image_height: self.image_size,
            image_width: self.image_size,
            channels: 3,
            max_views: self.max_views,
            mlp_ratio: self.mlp_ratio,
            siren_features: self.siren_features,
            siren_omega0: self.siren_omega0,
            global_embedding: self.global_embedding,
            mode: self.mode,
        }
    }

    /// Overwrites the model-defining fields.
    pub fn set_model_config(&mut self, m: &ModelConfig) {
        self.depth = m.depth;
        self.dim = m.dim;
        self.heads = m.heads;
        self.patch = m.patch;
        self.latent_downsample = m.latent_downsample;
        self.image_size = m.image_height;
        self.max_views = m.max_views;
        self.mlp_ratio = m.mlp_ratio;
        self.siren_features = m.siren_features;
        self.siren_omega0 = m.siren_omega0;
        self.global_embedding = m.global_embedding;
        self.mode = m.mode;
    }

    pub fn schedule(&self) -> anyhow::Result<DiffusionSchedule> {
        Ok(make_schedule(self.diffusion_steps, self.beta_start, self.beta_end)?)
    }

    pub fn clip_x0(&self) -> Option<f64> {
        (self.sample_clip > 0.0).then_some(self.sample_clip)
    }

    pub fn cfg_policy(&self) -> anyhow::Result<CfgPolicy> {
        Ok(CfgPolicy::new(self.cfg_base, self.cfg_peak, self.cfg_mode)?)
    }

    pub fn optimizer_kind(&self) -> Result<OptimizerKind, ConfigError> {
        match self.optimizer.as_str() {
            "sgd" => Ok(OptimizerKind::Sgd),
            "adam" => Ok(OptimizerKind::Adam {
                beta1: self.beta1,
                beta2: self.beta2,
                eps: self.adam_eps,
                weight_decay: self.weight_decay,
            }),
            other => Err(ConfigError::BadValue {
                key: "optimizer".into(),
                value: other.into(),
                reason: "expected adam or sgd".into(),
            }),
        }
    }

    pub fn warmup(&self) -> Warmup {
        Warmup {
            base_lr: self.lr,
            start_lr: self.lr_start,
            warmup_steps: self.warmup_steps,
        }
    }

    pub fn dataset(&self) -> Result<&Path, ConfigError> {
        let p = self.dataset.as_deref().ok_or_else(|| ConfigError::Invalid("dataset is not set".into()))?;
        if !p.exists() {
            return Err(ConfigError::Invalid(format!("dataset {} does not exist", p.display())));
        }
        Ok(p)
    }

    pub fn checkpoint(&self) -> Result<&Path, ConfigError> {
        let p = self.checkpoint.as_deref().ok_or_else(|| ConfigError::Invalid("checkpoint is not set".into()))?;
        if !p.exists() {
            return Err(ConfigError::Invalid(format!("checkpoint {} does not exist", p.display())));
        }
        Ok(p)
    }

    /// Tokens per sequence at training time: targets plus the reference.
    pub fn train_tokens(&self) -> usize {
        self.model_config().sequence_len(self.n_train_views, true, false)
    }
}
