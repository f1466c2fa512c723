//! Joint DDIM sampling of many views with per-view guidance and the
//! token-count-dependent softmax scale.

use std::path::Path;

use anyhow::{bail, Context};
use mvdit_core::attention::{default_lambda, Scaling};
use mvdit_core::autograd::ProbeRecord;
use mvdit_core::model::{decode_latent, GlobalSource, ModelInput, Mvdit, ViewConditioning};
use mvdit_core::schedule::{ddim_sample, Branch, CfgPolicy, DdimOptions, DiffusionSchedule};
use mvdit_core::Grid;

use crate::config::RunConfig;
use crate::data::{self, SceneData};
use crate::formats::csv::{self, Table};
use crate::formats::png;
use crate::model_io;
use crate::scene::view_file_name;

#[derive(Debug, thiserror::Error)]
#[error("attention maps for {tokens} tokens need about {needed} MiB, limit is {limit} MiB")]
pub struct ResourceError {
    pub tokens: usize,
    pub needed: usize,
    pub limit: usize,
}

/// Upper bound on one layer's attention maps.
pub const ATTENTION_LIMIT_MIB: usize = 2048;

#[derive(Debug, Clone)]
pub struct SampleRequest<'a> {
    pub scene: &'a SceneData,
    pub targets: Vec<usize>,
    pub reference: usize,
    /// Sequence length the checkpoint was trained at.
    pub train_tokens: usize,
    pub scaling: Scaling,
    pub policy: CfgPolicy,
    pub steps: usize,
    pub seed: u64,
    pub axis_len: f64,
    pub probe_layers: Option<Vec<usize>>,
    /// Latents live in `[-1, 1]`; clamping predictions there keeps early
    /// high-noise steps from drifting.
    pub clip_x0: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct SampleResult {
    /// Decoded images in `[0, 1]` (unclamped).
    pub images: Vec<Grid>,
    pub tokens: usize,
    pub lambda: f64,
    pub azimuths: Vec<f64>,
    pub scales: Vec<f64>,
    /// Entropy records from every conditional pass.
    pub probes: Vec<ProbeRecord>,
}

impl SampleResult {
    pub fn mean_entropy(&self) -> Option<f64> {
        if self.probes.is_empty() {
            return None;
        }
        Some(self.probes.iter().map(|p| p.stats.mean).sum::<f64>() / self.probes.len() as f64)
    }
}

/// First, middle and last block.
pub fn default_probe_layers(depth: usize) -> Vec<usize> {
    let mut v = vec![0, depth / 2, depth.saturating_sub(1)];
    v.dedup();
    v
}

/// Softmax scale for a sequence of `tokens`. The default scale is kept
/// whenever the length matches training.
pub fn lambda_for(head_dim: usize, train_tokens: usize, tokens: usize, scaling: Scaling) -> anyhow::Result<Option<f64>> {
    if tokens == train_tokens || scaling == Scaling::None {
        return Ok(None);
    }
    Ok(Some(scaling.lambda(head_dim, train_tokens, tokens)?))
}

pub fn sample_views(model: &Mvdit, sched: &DiffusionSchedule, req: &SampleRequest) -> anyhow::Result<SampleResult> {
    let mc = *model.config();
    let scene = req.scene;
    let n = req.targets.len();
    if n == 0 {
        bail!("need at least one view to sample");
    }
    let tpv = mc.tokens_per_view();
    let tokens = mc.sequence_len(n, true, false);
    let needed = tokens * tokens * mc.heads * 8 / (1 << 20);
    if needed > ATTENTION_LIMIT_MIB {
        return Err(ResourceError { tokens, needed, limit: ATTENTION_LIMIT_MIB }.into());
    }
    let lambda = lambda_for(mc.head_dim(), req.train_tokens, tokens, req.scaling)?;
    let cond: Vec<ViewConditioning> = data::conditioning(&mc, scene, &req.targets, req.axis_len)?;
    let reference = data::latents(&mc, scene, &[req.reference])?.remove(0);
    let ref_image = &scene.images[req.reference];
    let azimuths: Vec<f64> = req.targets.iter().map(|&v| scene.anchor.azimuth_deg(&scene.cameras[v])).collect();
    let scales = azimuths.iter().map(|&a| req.policy.scale_at(a)).collect();
    let (lh, lw, ch) = (mc.latent_height(), mc.latent_width(), mc.channels);

    let mut probes = Vec::new();
    let mut denoise = |z: &[Vec<f64>], t: usize, branch: Branch| -> mvdit_core::Result<Vec<Vec<f64>>> {
        let noisy: Vec<Grid> = z.iter().map(|d| Grid::from_vec(lh, lw, ch, d.clone())).collect::<mvdit_core::Result<_>>()?;
        let mut input = ModelInput::new(&noisy, &cond, t);
        input.reference = Some(&reference);
        input.lambda = lambda;
        input.drop_conditioning = branch == Branch::Unconditional;
        if mc.global_embedding {
            input.global = Some(GlobalSource::Image(ref_image));
        }
        let out = match (&req.probe_layers, branch) {
            (Some(layers), Branch::Conditional) => {
                let (out, p) = model.predict_probed(&input, layers.clone())?;
                probes.extend(p);
                out
            }
            _ => model.predict(&input)?,
        };
        Ok(out.into_iter().map(|g| g.data).collect())
    };
    let opts = DdimOptions { steps: req.steps, seed: req.seed, cfg: req.policy, clip_x0: req.clip_x0 };
    let sizes = vec![lh * lw * ch; n];
    let z0 = ddim_sample(&mut denoise, &sizes, &azimuths, sched, &opts)?;
    let images = z0
        .into_iter()
        .map(|d| decode_latent(&Grid::from_vec(lh, lw, ch, d)?, mc.latent_downsample))
        .collect::<mvdit_core::Result<Vec<_>>>()?;
    debug_assert_eq!(tokens, (n + 1) * tpv);
    Ok(SampleResult {
        images,
        tokens,
        lambda: lambda.unwrap_or_else(|| default_lambda(mc.head_dim())),
        azimuths,
        scales,
        probes,
    })
}

/// `n` target views following the reference around the ring.
pub fn ring_targets(n_views: usize, reference: usize, n: usize) -> anyhow::Result<Vec<usize>> {
    if n + 1 > n_views {
        bail!("cannot sample {n} views besides the reference from a {n_views}-view scene");
    }
    Ok((1..=n).map(|k| (reference + k) % n_views).collect())
}

/// Training sequence length recorded in a checkpoint's config.
pub fn train_tokens(model: &Mvdit, ck_cfg: &RunConfig) -> usize {
    model.config().sequence_len(ck_cfg.n_train_views, true, false)
}

/// `sample` command: PNG per view, `manifest.csv` and `entropy.csv`.
pub fn sample(cfg: &RunConfig, out: &Path) -> anyhow::Result<SampleResult> {
    let loaded = model_io::load(cfg.checkpoint()?, cfg.optimizer_kind()?)?;
    let scenes = data::load_dataset(cfg.dataset()?)?;
    let scene = &scenes[0];
    if cfg.n_infer_views == 0 {
        bail!("n_infer_views must be at least 1");
    }
    let model = &loaded.model;
    let targets = ring_targets(scene.n_views(), cfg.ref_view, cfg.n_infer_views)?;
    let layers = cfg.probe_layers.clone().unwrap_or_else(|| default_probe_layers(model.config().depth));
    let req = SampleRequest {
        scene,
        targets: targets.clone(),
        reference: cfg.ref_view,
        train_tokens: train_tokens(model, &loaded.config),
        scaling: cfg.gamma,
        policy: cfg.cfg_policy()?,
        steps: cfg.sample_steps,
        seed: cfg.seed,
        axis_len: cfg.anchor_axis_len,
        probe_layers: Some(layers),
        clip_x0: cfg.clip_x0(),
    };
    let res = sample_views(model, &loaded.config.schedule()?, &req).context("sampling")?;

    std::fs::create_dir_all(out)?;
    let mut manifest = Table::new(&["view", "file", "azimuth_deg", "cfg_scale"]);
    for (i, &v) in targets.iter().enumerate() {
        let name = view_file_name(v);
        png::write_png(&out.join(&name), &res.images[i])?;
        manifest.push(vec![csv::cell(v), name, csv::f(res.azimuths[i]), csv::f(res.scales[i])]);
    }
    manifest.write(&out.join("manifest.csv"))?;
    entropy_table(&res).write(&out.join("entropy.csv"))?;
    Ok(res)
}

/// Mean entropy per probed layer over heads and sampling steps.
pub fn entropy_table(res: &SampleResult) -> Table {
    let mut t = Table::new(&["layer", "tokens", "lambda", "mean_entropy", "min", "max"]);
    let mut layers: Vec<usize> = res.probes.iter().map(|p| p.layer).collect();
    layers.sort_unstable();
    layers.dedup();
    for l in layers {
        let recs: Vec<&ProbeRecord> = res.probes.iter().filter(|p| p.layer == l).collect();
        let mean = recs.iter().map(|p| p.stats.mean).sum::<f64>() / recs.len() as f64;
        let min = recs.iter().map(|p| p.stats.min).fold(f64::INFINITY, f64::min);
        let max = recs.iter().map(|p| p.stats.max).fold(f64::NEG_INFINITY, f64::max);
        t.push(vec![csv::cell(l), csv::cell(res.tokens), csv::f(res.lambda), csv::f(mean), csv::f(min), csv::f(max)]);
    }
    t
}
