//! Model and optimizer state in checkpoints.

use std::fmt::Write as _;
use std::path::Path;

use anyhow::{bail, Context};
use mvdit_core::model::Mvdit;
use mvdit_core::optim::{Optimizer, OptimizerKind};
use mvdit_core::params::{ParamStore, Precision};

use crate::config::RunConfig;
use crate::formats::checkpoint::Checkpoint;

const STATE_PREFIX: &str = "state.";

pub struct Loaded {
    /// Defaults overlaid with the model keys stored in the checkpoint.
    pub config: RunConfig,
    pub model: Mvdit,
    pub optimizer: Option<Optimizer>,
    pub step: usize,
}

/// The model's own config overrides the model keys of `cfg`.
pub fn save(path: &Path, cfg: &RunConfig, model: &Mvdit, opt: Option<&Optimizer>, step: usize) -> anyhow::Result<()> {
    let mut cfg = cfg.clone();
    cfg.set_model_config(model.config());
    let mut meta = cfg.model_text();
    let _ = writeln!(meta, "{STATE_PREFIX}model_seed={}", model.seed());
    let _ = writeln!(meta, "{STATE_PREFIX}step={step}");
    let mut tensors = Vec::new();
    for (name, t) in model.params().iter() {
        tensors.push((name.to_string(), cfg.param_precision, t.clone()));
    }
    if let Some(opt) = opt {
        let _ = writeln!(meta, "{STATE_PREFIX}opt_step={}", opt.step);
        let store = model.params();
        for (i, (m, v)) in opt.m.iter().zip(&opt.v).enumerate() {
            if let (Some(m), Some(v)) = (m, v) {
                tensors.push((format!("opt.m.{}", store.name(i)), Precision::F64, m.clone()));
                tensors.push((format!("opt.v.{}", store.name(i)), Precision::F64, v.clone()));
            }
        }
    }
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    Checkpoint { meta, tensors }.save(path)?;
    Ok(())
}

pub fn load(path: &Path, kind: OptimizerKind) -> anyhow::Result<Loaded> {
    let ck = Checkpoint::load(path)?;
    let mut config = RunConfig::default();
    let model_text: String = ck
        .meta
        .lines()
        .filter(|l| !l.starts_with(STATE_PREFIX))
        .map(|l| format!("{l}\n"))
        .collect();
    config
        .apply_text(&model_text)
        .with_context(|| format!("{}: checkpoint metadata", path.display()))?;
    let state = |k: &str| -> anyhow::Result<Option<u64>> {
        ck.meta_value(&format!("{STATE_PREFIX}{k}"))
            .map(|v| v.parse::<u64>().with_context(|| format!("{}: bad {k}", path.display())))
            .transpose()
    };
    let seed = state("model_seed")?.unwrap_or(0);
    let step = state("step")?.unwrap_or(0) as usize;

    let mut params = ParamStore::new();
    for (name, _, t) in &ck.tensors {
        if !name.starts_with("opt.") {
            params.add(name, t.clone());
        }
    }
    let model = Mvdit::from_parts(config.model_config(), params, seed)
        .with_context(|| format!("{}: parameters do not match the stored config", path.display()))?;

    let optimizer = match state("opt_step")? {
        None => None,
        Some(s) => {
            let mut opt = Optimizer::new(kind);
            opt.step = s as usize;
            let n = model.params().len();
            opt.m = vec![None; n];
            opt.v = vec![None; n];
            for (name, _, t) in &ck.tensors {
                let (slot, pname) = if let Some(p) = name.strip_prefix("opt.m.") {
                    (&mut opt.m, p)
                } else if let Some(p) = name.strip_prefix("opt.v.") {
                    (&mut opt.v, p)
                } else {
                    continue;
                };
                let Some(i) = model.params().index_of(pname) else {
                    bail!("{}: optimizer state for unknown parameter {pname}", path.display());
                };
                slot[i] = Some(t.clone());
            }
            Some(opt)
        }
    };
    Ok(Loaded { config, model, optimizer, step })
}
