//! Denoising training loop shared by `train` and `overfit`.

use std::path::Path;

use anyhow::{bail, Context};
use mvdit_core::autograd::Graph;
use mvdit_core::model::{GlobalSource, ModelConfig, ModelInput, Mvdit};
use mvdit_core::optim::{Optimizer, Warmup};
use mvdit_core::rng::{self, RngExt};
use mvdit_core::schedule::{condition_dropout, forward_noise, DiffusionSchedule};
use mvdit_core::Grid;

use crate::config::RunConfig;
use crate::data::{self, SceneData};
use crate::formats::csv::{self, Table};
use crate::model_io;

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("non-finite loss {loss} at step {step} (scene {scene}, t = {t}, lr = {lr:e})")]
    NonFinite { step: usize, loss: f64, scene: usize, t: usize, lr: f64 },
}

/// Which views a step may draw from.
#[derive(Debug, Clone)]
pub struct ViewPool {
    /// Candidate target views per scene.
    pub targets: Vec<Vec<usize>>,
    /// Fixed reference view; otherwise one is drawn from the pool.
    pub reference: Option<usize>,
}

impl ViewPool {
    pub fn all(scenes: &[SceneData]) -> Self {
        Self {
            targets: scenes.iter().map(|s| (0..s.n_views()).collect()).collect(),
            reference: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub scene: usize,
    pub reference: usize,
    pub targets: Vec<usize>,
    pub t: usize,
    pub noise: Vec<Grid>,
    pub drop: bool,
}

const TRAIN_STREAM: u64 = 1 << 40;

/// The batch for `step`, a pure function of `(seed, step)`.
pub fn draw_batch(cfg: &RunConfig, mc: &ModelConfig, pool: &ViewPool, sched: &DiffusionSchedule, step: usize) -> anyhow::Result<Batch> {
    let mut rng = rng::stream(cfg.seed, TRAIN_STREAM + step as u64);
    let scene = rng.gen_range(0..pool.targets.len());
    let mut views = pool.targets[scene].clone();
    let reference = match pool.reference {
        Some(r) => {
            views.retain(|&v| v != r);
            r
        }
        None => {
            if views.is_empty() {
                bail!("scene {scene} has no views to draw a reference from");
            }
            views.swap_remove(rng.gen_range(0..views.len()))
        }
    };
    let n = cfg.n_train_views;
    if views.len() < n {
        bail!("scene {scene} offers {} target views, need {n}", views.len());
    }
    // Partial Fisher-Yates draw of n distinct views.
    for i in 0..n {
        let j = rng.gen_range(i..views.len());
        views.swap(i, j);
    }
    views.truncate(n);
    let t = rng.gen_range(1..=sched.num_steps());
    let drop = condition_dropout(false, true, cfg.dropout_p, &mut rng);
    let (h, w) = (mc.latent_height(), mc.latent_width());
    let noise = (0..n)
        .map(|_| Grid::from_vec(h, w, 3, rng::normal_vec(&mut rng, h * w * 3)).expect("sized"))
        .collect();
    Ok(Batch { scene, reference, targets: views, t, noise, drop })
}

/// Forward pass and loss node for one batch.
pub fn batch_loss(model: &Mvdit, cfg: &RunConfig, scenes: &[SceneData], batch: &Batch, sched: &DiffusionSchedule, g: &mut Graph) -> anyhow::Result<mvdit_core::autograd::Var> {
    let mc = model.config();
    let scene = &scenes[batch.scene];
    let clean = data::latents(mc, scene, &batch.targets)?;
    let noisy: Vec<Grid> = clean
        .iter()
        .zip(&batch.noise)
        .map(|(z, e)| {
            let d = forward_noise(&z.data, batch.t, &e.data, sched)?;
            Grid::from_vec(z.height, z.width, z.channels, d)
        })
        .collect::<mvdit_core::Result<_>>()?;
    let cond = data::conditioning(mc, scene, &batch.targets, cfg.anchor_axis_len)?;
    let reference = data::latents(mc, scene, &[batch.reference])?.remove(0);
    let ref_image = &scene.images[batch.reference];
    let mut input = ModelInput::new(&noisy, &cond, batch.t);
    input.reference = Some(&reference);
    input.drop_conditioning = batch.drop;
    if mc.global_embedding {
        input.global = Some(GlobalSource::Image(ref_image));
    }
    Ok(model.loss(g, &input, &batch.noise)?)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossRow {
    pub step: usize,
    pub loss: f64,
    pub lr: f64,
}

/// Runs optimizer steps `start..end`. With `cfg.fixed_batch` every step
/// reuses the batch of `start`.
#[allow(clippy::too_many_arguments)]
pub fn run_steps(
    model: &mut Mvdit,
    opt: &mut Optimizer,
    cfg: &RunConfig,
    scenes: &[SceneData],
    pool: &ViewPool,
    warmup: &Warmup,
    start: usize,
    end: usize,
) -> anyhow::Result<Vec<LossRow>> {
    let sched = cfg.schedule()?;
    let mc = *model.config();
    let mut rows = Vec::with_capacity(end.saturating_sub(start));
    let fixed = if cfg.fixed_batch { Some(draw_batch(cfg, &mc, pool, &sched, start)?) } else { None };
    for step in start..end {
        let batch = match &fixed {
            Some(b) => b.clone(),
            None => draw_batch(cfg, &mc, pool, &sched, step)?,
        };
        let lr = warmup.lr(step);
        let mut g = Graph::new();
        let loss_var = match batch_loss(model, cfg, scenes, &batch, &sched, &mut g) {
            Err(e) if matches!(e.downcast_ref(), Some(mvdit_core::Error::NonFinite(_))) => {
                return Err(TrainError::NonFinite { step, loss: f64::NAN, scene: batch.scene, t: batch.t, lr }.into());
            }
            r => r?,
        };
        let loss = g.value(loss_var).get(0, 0);
        if !loss.is_finite() {
            return Err(TrainError::NonFinite { step, loss, scene: batch.scene, t: batch.t, lr }.into());
        }
        let grads = g.backward(loss_var)?.into_params();
        drop(g);
        opt.apply(model.params_mut(), &grads, lr);
        model.params_mut().round_to(cfg.param_precision);
        if cfg.log_every > 0 && (step % cfg.log_every == 0 || step + 1 == end) {
            log::info!("step {step} loss {loss:.6} lr {lr:.3e}");
        }
        rows.push(LossRow { step, loss, lr });
    }
    Ok(rows)
}

pub fn loss_table(rows: &[LossRow]) -> Table {
    let mut t = Table::new(&["step", "loss", "lr"]);
    for r in rows {
        t.push(vec![csv::cell(r.step), format!("{:e}", r.loss), format!("{:.6e}", r.lr)]);
    }
    t
}

#[derive(Debug)]
pub struct TrainReport {
    pub rows: Vec<LossRow>,
    pub model: Mvdit,
    pub optimizer: Optimizer,
    pub step: usize,
}

/// Full `train` command: fresh, initialized-from or resumed model, then
/// `loss.csv` and `checkpoint.bin` in `out`.
pub fn train(cfg: &RunConfig, out: &Path) -> anyhow::Result<TrainReport> {
    let scenes = data::load_dataset(cfg.dataset()?)?;
    let kind = cfg.optimizer_kind()?;
    let (mut model, mut opt, start, mut rows) = if let Some(resume) = &cfg.resume {
        let loaded = model_io::load(resume, kind).with_context(|| format!("resuming from {}", resume.display()))?;
        let opt = loaded.optimizer.unwrap_or_else(|| Optimizer::new(kind));
        let prev = resume.with_file_name("loss.csv");
        let rows = if prev.exists() { read_loss_rows(&prev, loaded.step)? } else { Vec::new() };
        (loaded.model, opt, loaded.step, rows)
    } else if let Some(init) = &cfg.checkpoint {
        let mut loaded = model_io::load(init, kind)?;
        loaded.model.set_mode(cfg.mode)?;
        (loaded.model, Optimizer::new(kind), 0, Vec::new())
    } else {
        (Mvdit::new(cfg.model_config(), cfg.seed)?, Optimizer::new(kind), 0, Vec::new())
    };
    model.params_mut().round_to(cfg.param_precision);
    let pool = ViewPool::all(&scenes);
    let new_rows = run_steps(&mut model, &mut opt, cfg, &scenes, &pool, &cfg.warmup(), start, cfg.steps.max(start))?;
    rows.extend(new_rows);
    std::fs::create_dir_all(out)?;
    loss_table(&rows).write(&out.join("loss.csv"))?;
    let step = cfg.steps.max(start);
    model_io::save(&out.join("checkpoint.bin"), cfg, &model, Some(&opt), step)?;
    Ok(TrainReport { rows, model, optimizer: opt, step })
}

fn read_loss_rows(path: &Path, upto: usize) -> anyhow::Result<Vec<LossRow>> {
    let t = Table::read(path)?;
    let mut rows = Vec::new();
    for r in t.rows() {
        let row = LossRow { step: r[0].parse()?, loss: r[1].parse()?, lr: r[2].parse()? };
        if row.step < upto {
            rows.push(row);
        }
    }
    Ok(rows)
}
