//! Training the same configuration under several modalities and seeds.

use super::config::RunConfig;
use crate::env::Modality;
use crate::error::{Error, Result};
use crate::sac::{train_with, Augmentation, MetricsRow};

pub const COMPARE_HEADER: &str = "step,modality,seed,eval_return";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CompareRow {
    pub step: u64,
    pub modality: Modality,
    pub seed: u64,
    pub eval_return: f64,
}

pub fn compare_csv(rows: &[CompareRow]) -> String {
    let mut s = format!("{COMPARE_HEADER}\n");
    for r in rows {
        s.push_str(&format!("{},{},{},{}\n", r.step, r.modality, r.seed, r.eval_return));
    }
    s
}

/// Config for one run of a comparison: the modality and seed replaced, and
/// outputs under `<out>/<modality>_seed<seed>` when an output directory is set.
pub fn run_variant(base: &RunConfig, modality: Modality, seed: u64) -> Result<RunConfig> {
    let mut cfg = base.clone();
    cfg.env.obs_modality = modality;
    cfg.run.seed = seed;
    cfg.run.out_dir = base.run.out_dir.as_ref().map(|d| d.join(format!("{modality}_seed{seed}")));
    let image_aug = matches!(cfg.agent.drq.augmentation, Augmentation::Identity | Augmentation::PixelShift { .. });
    if modality.is_image() && !image_aug {
        return Err(Error::Config(format!(
            "augmentation {} does not apply to {modality} observations",
            cfg.agent.drq.augmentation
        )));
    }
    cfg.finalize()?;
    Ok(cfg)
}

/// Trains every (modality, seed) pair in order and collects the evaluation
/// points. `progress` sees each metrics row with its modality and seed.
pub fn compare_modalities(
    base: &RunConfig,
    modalities: &[Modality],
    seeds: &[u64],
    progress: &mut dyn FnMut(Modality, u64, &MetricsRow),
) -> Result<Vec<CompareRow>> {
    if modalities.is_empty() || seeds.is_empty() {
        return Err(Error::Input("comparison needs at least one modality and one seed".into()));
    }
    let mut out = Vec::new();
    for &modality in modalities {
        for &seed in seeds {
            let cfg = run_variant(base, modality, seed)?;
            let run = train_with(&cfg.env, &cfg.agent, &cfg.run, &mut |row| progress(modality, seed, row))?;
            out.extend(run.rows.iter().filter_map(|r| {
                r.eval_return.map(|eval_return| CompareRow {
                    step: r.step,
                    modality,
                    seed,
                    eval_return,
                })
            }));
        }
    }
    Ok(out)
}
