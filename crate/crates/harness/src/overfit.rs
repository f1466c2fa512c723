//! Single-scene overfitting of one control pathway on a frozen backbone.

use std::path::Path;

use anyhow::{bail, Context};
use mvdit_core::attention::Scaling;
use mvdit_core::model::{Mode, Mvdit};
use mvdit_core::optim::Optimizer;
use mvdit_core::schedule::DiffusionSchedule;

use crate::config::{RunConfig, Variant};
use crate::data::{self, SceneData};
use crate::eval::psnr;
use crate::formats::csv::{self, Table};
use crate::model_io;
use crate::sample::{sample_views, SampleRequest};
use crate::train::{run_steps, ViewPool};

#[derive(Debug, thiserror::Error)]
#[error("variant {variant} cannot start from a checkpoint in mode {mode:?}")]
pub struct IncompatibleVariant {
    pub variant: &'static str,
    pub mode: Mode,
}

/// Every `val_every`-th view (counting from `val_every - 1`) is held out.
pub fn split_views(n_views: usize, val_every: usize) -> (Vec<usize>, Vec<usize>) {
    if val_every == 0 {
        return ((0..n_views).collect(), Vec::new());
    }
    (0..n_views).partition(|&v| v % val_every != val_every - 1)
}

#[derive(Debug, Clone, PartialEq)]
pub struct OverfitRow {
    pub variant: Variant,
    pub seed: u64,
    pub psnr_train: f64,
    pub psnr_val: f64,
    pub steps: usize,
}

/// Mean PSNR of the listed views, sampled jointly in groups of at most
/// `n_train_views`.
pub fn evaluate(model: &Mvdit, cfg: &RunConfig, sched: &DiffusionSchedule, scene: &SceneData, views: &[usize], reference: usize) -> anyhow::Result<f64> {
    let views: Vec<usize> = if cfg.eval_views > 0 { views.iter().copied().take(cfg.eval_views).collect() } else { views.to_vec() };
    if views.is_empty() {
        bail!("no views to evaluate");
    }
    let train_tokens = model.config().sequence_len(cfg.n_train_views, true, false);
    let mut total = 0.0;
    for (i, group) in views.chunks(cfg.n_train_views.max(1)).enumerate() {
        let req = SampleRequest {
            scene,
            targets: group.to_vec(),
            reference,
            train_tokens,
            scaling: Scaling::None,
            policy: cfg.cfg_policy()?,
            steps: cfg.sample_steps,
            seed: cfg.seed.wrapping_add(i as u64),
            axis_len: cfg.anchor_axis_len,
            probe_layers: None,
            clip_x0: cfg.clip_x0(),
        };
        let res = sample_views(model, sched, &req)?;
        for (img, &v) in res.images.iter().zip(group) {
            total += psnr(&img.map(|x| x.clamp(0.0, 1.0)), &scene.images[v])?;
        }
    }
    Ok(total / views.len() as f64)
}

/// Prepares the model for a variant: switches mode, reseeds new parameters
/// and freezes everything outside the variant's control path.
pub fn variant_model(base: &Mvdit, variant: Variant, seed: u64) -> anyhow::Result<Mvdit> {
    let ck_mode = base.config().mode;
    let target = variant.mode();
    if ck_mode != Mode::Midtrain && ck_mode != target {
        return Err(IncompatibleVariant { variant: variant.name(), mode: ck_mode }.into());
    }
    let mut m = Mvdit::from_parts(*base.config(), base.params().clone(), seed)?;
    m.set_mode(target)?;
    m.params_mut().set_trainable(|n| variant.trains(n));
    Ok(m)
}

pub fn run_variant(base: &Mvdit, cfg: &RunConfig, sched: &DiffusionSchedule, scene: &SceneData, variant: Variant) -> anyhow::Result<(OverfitRow, Mvdit)> {
    let (train_views, val_views) = split_views(scene.n_views(), cfg.val_every);
    if !train_views.contains(&cfg.ref_view) {
        bail!("reference view {} is held out for validation", cfg.ref_view);
    }
    let mut model = variant_model(base, variant, cfg.seed)?;
    let steps = if variant == Variant::Baseline { 0 } else { cfg.overfit_steps };
    if steps > 0 {
        let pool = ViewPool { targets: vec![train_views.clone()], reference: Some(cfg.ref_view) };
        let mut opt = Optimizer::new(cfg.optimizer_kind()?);
        let scenes = std::slice::from_ref(scene);
        run_steps(&mut model, &mut opt, cfg, scenes, &pool, &cfg.warmup(), 0, steps)
            .with_context(|| format!("overfitting {}", variant.name()))?;
    }
    let eval_train: Vec<usize> = train_views.iter().copied().filter(|&v| v != cfg.ref_view).collect();
    let psnr_train = evaluate(&model, cfg, sched, scene, &eval_train, cfg.ref_view)?;
    let psnr_val = if val_views.is_empty() { f64::NAN } else { evaluate(&model, cfg, sched, scene, &val_views, cfg.ref_view)? };
    log::info!("{}: PSNR train {psnr_train:.3} val {psnr_val:.3}", variant.name());
    Ok((OverfitRow { variant, seed: cfg.seed, psnr_train, psnr_val, steps }, model))
}

pub fn rows_table(rows: &[OverfitRow]) -> Table {
    let mut t = Table::new(&["variant", "seed", "psnr_train", "psnr_val", "steps"]);
    for r in rows {
        t.push(vec![r.variant.name().into(), csv::cell(r.seed), csv::f(r.psnr_train), csv::f(r.psnr_val), csv::cell(r.steps)]);
    }
    t
}

/// `overfit` command: one CSV row per variant in `overfit.csv`.
pub fn overfit(cfg: &RunConfig, out: &Path) -> anyhow::Result<Vec<OverfitRow>> {
    let loaded = model_io::load(cfg.checkpoint()?, cfg.optimizer_kind()?)?;
    let scenes = data::load_dataset(cfg.dataset()?)?;
    if scenes.len() > 1 {
        log::warn!("overfitting uses only the first of {} scenes", scenes.len());
    }
    let scene = &scenes[0];
    let sched = loaded.config.schedule()?;
    let mut rows = Vec::new();
    for &v in &cfg.variants {
        let (row, _) = run_variant(&loaded.model, cfg, &sched, scene, v)?;
        rows.push(row);
    }
    std::fs::create_dir_all(out)?;
    rows_table(&rows).write(&out.join("overfit.csv"))?;
    Ok(rows)
}
