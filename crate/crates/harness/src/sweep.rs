//! Attention entropy against sequence length and growth factor.

use std::fmt::Write as _;
use std::path::Path;

use anyhow::bail;
use mvdit_core::attention::{entropy_probe, gaussian_qk, ProbeRow, Scaling};
use mvdit_core::model::{GlobalSource, ModelInput};
use mvdit_core::rng;
use mvdit_core::schedule::forward_noise;
use mvdit_core::Grid;

use crate::config::{scaling_name, RunConfig};
use crate::data;
use crate::formats::csv::{self, Table};
use crate::model_io;
use crate::sample::default_probe_layers;

/// Random mode: i.i.d. Gaussian queries and keys.
pub fn random_sweep(cfg: &RunConfig) -> anyhow::Result<Vec<ProbeRow>> {
    let train = if cfg.sweep_train_tokens == 0 { cfg.sweep_tokens[0] } else { cfg.sweep_train_tokens };
    Ok(entropy_probe(
        gaussian_qk(cfg.sweep_head_dim, cfg.seed),
        &cfg.sweep_tokens,
        &cfg.sweep_scalings,
        cfg.sweep_head_dim,
        train,
        cfg.sweep_seeds,
    )?)
}

/// Checkpoint mode: live activations of a noised scene at mid-schedule,
/// one row per (view count, scaling), averaged over the probed layers and
/// `sweep_seeds` noise draws.
pub fn checkpoint_sweep(cfg: &RunConfig) -> anyhow::Result<Vec<ProbeRow>> {
    let loaded = model_io::load(cfg.checkpoint()?, cfg.optimizer_kind()?)?;
    let scenes = data::load_dataset(cfg.dataset()?)?;
    let scene = &scenes[0];
    let model = &loaded.model;
    let mc = *model.config();
    let sched = loaded.config.schedule()?;
    let t = sched.num_steps() / 2;
    let train_tokens = mc.sequence_len(loaded.config.n_train_views, true, false);
    let layers = cfg.probe_layers.clone().unwrap_or_else(|| default_probe_layers(mc.depth));
    let tag = layers.iter().map(|l| l.to_string()).collect::<Vec<_>>().join(";");
    let reference = cfg.ref_view;
    let ref_latent = data::latents(&mc, scene, &[reference])?.remove(0);
    let mut rows = Vec::new();
    for &nv in &cfg.sweep_views {
        let targets: Vec<usize> = (1..=nv).map(|k| (reference + k) % scene.n_views()).collect();
        let tokens = mc.sequence_len(nv, true, false);
        let clean = data::latents(&mc, scene, &targets)?;
        let cond = data::conditioning(&mc, scene, &targets, cfg.anchor_axis_len)?;
        for &scaling in &cfg.sweep_scalings {
            let lambda = scaling.lambda(mc.head_dim(), train_tokens, tokens)?;
            let (mut sum, mut count) = (0.0, 0usize);
            let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
            for s in 0..cfg.sweep_seeds.max(1) {
                let mut r = rng::stream(cfg.seed, ((nv as u64) << 16) ^ s as u64);
                let noisy: Vec<Grid> = clean
                    .iter()
                    .map(|z| {
                        let eps = rng::normal_vec(&mut r, z.data.len());
                        Grid::from_vec(z.height, z.width, z.channels, forward_noise(&z.data, t, &eps, &sched)?)
                    })
                    .collect::<mvdit_core::Result<_>>()?;
                let mut input = ModelInput::new(&noisy, &cond, t);
                input.reference = Some(&ref_latent);
                input.lambda = Some(lambda);
                if mc.global_embedding {
                    input.global = Some(GlobalSource::Image(&scene.images[reference]));
                }
                let (_, probes) = model.predict_probed(&input, layers.clone())?;
                for p in probes {
                    sum += p.stats.mean;
                    count += 1;
                    lo = lo.min(p.stats.min);
                    hi = hi.max(p.stats.max);
                }
            }
            rows.push(ProbeRow {
                tokens,
                scaling,
                lambda,
                mean: sum / count.max(1) as f64,
                min: lo,
                max: hi,
                layer_tag: tag.clone(),
            });
        }
    }
    Ok(rows)
}

pub fn sweep_table(rows: &[ProbeRow]) -> Table {
    let mut t = Table::new(&["N_tokens", "gamma", "lambda", "mean_entropy", "min", "max", "layer_tag"]);
    for r in rows {
        t.push(vec![
            csv::cell(r.tokens),
            scaling_name(r.scaling),
            csv::f(r.lambda),
            csv::f(r.mean),
            csv::f(r.min),
            csv::f(r.max),
            r.layer_tag.clone(),
        ]);
    }
    t
}

/// gnuplot data: one indexed block per scaling, columns `N mean min max`.
pub fn gnuplot_data(rows: &[ProbeRow], scalings: &[Scaling]) -> String {
    let mut s = String::new();
    for sc in scalings {
        let _ = writeln!(s, "# gamma={}", scaling_name(*sc));
        for r in rows.iter().filter(|r| r.scaling == *sc) {
            let _ = writeln!(s, "{} {:.6} {:.6} {:.6}", r.tokens, r.mean, r.min, r.max);
        }
        s.push_str("\n\n");
    }
    s
}

/// `entropy-sweep` command: `entropy_sweep.csv` and `entropy_sweep.dat`.
pub fn entropy_sweep_cmd(cfg: &RunConfig, out: &Path) -> anyhow::Result<Vec<ProbeRow>> {
    let rows = match cfg.sweep_source.as_str() {
        "random" => random_sweep(cfg)?,
        "checkpoint" => checkpoint_sweep(cfg)?,
        other => bail!("sweep_source must be random or checkpoint, got {other:?}"),
    };
    std::fs::create_dir_all(out)?;
    sweep_table(&rows).write(&out.join("entropy_sweep.csv"))?;
    std::fs::write(out.join("entropy_sweep.dat"), gnuplot_data(&rows, &cfg.sweep_scalings))?;
    Ok(rows)
}
