//! Building a training configuration from a file, flags and `--set` pairs.

use std::fs;

use anyhow::{anyhow, bail, Context, Result};
use spadsplat::trainer::TrainConfig;
use toml::Value;

use crate::TrainArgs;

/// Apply `key.path=value` to a TOML table. The value is parsed as TOML and
/// falls back to a plain string.
fn set_path(root: &mut Value, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| anyhow!("--set expects KEY=VALUE, got `{assignment}`"))?;
    let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()));
    let parts: Vec<&str> = key.trim().split('.').collect();
    let mut node = root;
    for (i, part) in parts.iter().enumerate() {
        let table = node
            .as_table_mut()
            .ok_or_else(|| anyhow!("`{key}`: `{}` is not a table", parts[..i].join(".")))?;
        if i + 1 == parts.len() {
            table.insert(part.to_string(), value);
            return Ok(());
        }
        node = table.entry(part.to_string()).or_insert_with(|| Value::Table(Default::default()));
    }
    bail!("empty key in --set")
}

/// `base` with every override from `args` applied.
pub fn train_config(args: &TrainArgs, base: TrainConfig) -> Result<TrainConfig> {
    let mut cfg = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
        }
        None => match args.total_iters {
            Some(n) => TrainConfig { seed: base.seed, ..TrainConfig::scaled(n) },
            None => base,
        },
    };
    macro_rules! take {
        ($flag:ident => $($field:ident).+) => {
            if let Some(v) = args.$flag {
                cfg.$($field).+ = v;
            }
        };
    }
    take!(total_iters => total_iters);
    take!(smooth_start_iter => smooth_start_iter);
    take!(sigma_smooth => sigma_smooth);
    take!(num_perturbed => num_perturbed);
    take!(smooth_weight => weights.smooth);
    take!(gamma => gamma);
    take!(m_blur => m_blur);
    take!(stage2_iters => stage2_iters);
    take!(sh_degree => sh_degree);
    take!(seed => seed);
    take!(init_opacity => init_opacity);
    take!(lr_position => lr.position_init);
    take!(lr_scale => lr.log_scale);
    take!(lr_rotation => lr.rotation);
    take!(lr_opacity => lr.opacity);
    take!(lr_sh_gray => lr.sh_gray);
    take!(lr_sh_color => lr.sh_color);
    take!(lr_trajectory => lr.trajectory);
    take!(densify_interval => density.interval);
    take!(densify_grad_threshold => density.grad_threshold);
    take!(max_gaussians => density.max_gaussians);
    take!(prune_opacity => density.prune_opacity);
    if args.baseline_averaging.is_some() {
        cfg.baseline_window = args.baseline_averaging;
    }
    if args.pin_knots {
        cfg.pin_knots = true;
    }
    if !args.set.is_empty() {
        let mut value = Value::try_from(&cfg).context("serializing configuration")?;
        for s in &args.set {
            set_path(&mut value, s)?;
        }
        cfg = value.try_into().context("applying --set")?;
    }
    cfg.validate()?;
    Ok(cfg)
}
