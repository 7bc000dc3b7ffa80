use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;

use super::eval::evaluate_case;
use super::{batch_stream, derive_seed, stream_seeds, train_adaptation, train_segmentation, SegSource, TrainState};
use super::{ExperimentMode, TrainConfig};
use crate::data::{generate_phantom, kfold_split, Appearance, Mask, PatchSampler, PhantomSpec, Volume};
use crate::error::{Error, Result};
use crate::networks::Domain;

/// Mean scores of one fold on one evaluation split.
#[derive(Debug, Clone, PartialEq)]
pub struct FoldResult {
    pub fold: usize,
    /// `target` (held-out domain-Y scans) or `source` (held-out domain-X scans).
    pub split: &'static str,
    pub dice: f64,
    pub jaccard: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentReport {
    pub mode: ExperimentMode,
    pub folds: Vec<FoldResult>,
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

impl ExperimentReport {
    fn column(&self, split: &str, f: fn(&FoldResult) -> f64) -> Vec<f64> {
        self.folds.iter().filter(|r| r.split == split).map(f).collect()
    }

    /// Mean and population standard deviation of Dice over folds.
    pub fn dice(&self, split: &str) -> (f64, f64) {
        mean_std(&self.column(split, |r| r.dice))
    }

    pub fn jaccard(&self, split: &str) -> (f64, f64) {
        mean_std(&self.column(split, |r| r.jaccard))
    }

    /// `fold,split,dice,jaccard` rows followed by `mean` and `std` rows per split.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("fold,split,dice,jaccard\n");
        for r in &self.folds {
            let _ = writeln!(s, "{},{},{},{}", r.fold, r.split, r.dice, r.jaccard);
        }
        for split in ["target", "source"] {
            if self.folds.iter().all(|r| r.split != split) {
                continue;
            }
            let (dm, ds) = self.dice(split);
            let (jm, js) = self.jaccard(split);
            let _ = writeln!(s, "mean,{split},{dm},{jm}");
            let _ = writeln!(s, "std,{split},{ds},{js}");
        }
        s
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path.as_ref(), self.to_csv()).map_err(|e| Error::io(path.as_ref(), e))
    }
}

type Labeled = (Volume, Mask);

/// Unpaired phantom sets of both domains. In multimodal mode the target
/// scans cycle through the configured appearance variants.
pub fn experiment_data(cfg: &TrainConfig) -> Result<(Vec<Labeled>, Vec<Labeled>)> {
    let multimodal = cfg.mode == ExperimentMode::MultimodalTarget;
    let mut xs = Vec::with_capacity(cfg.cases);
    let mut ys = Vec::with_capacity(cfg.cases);
    for i in 0..cfg.cases as u64 {
        let sx = PhantomSpec::new(Domain::X, derive_seed(cfg.seed, 1000 + i)).with_dims(cfg.volume_dims);
        xs.push(generate_phantom(&sx)?);
        let mut sy = PhantomSpec::new(Domain::Y, derive_seed(cfg.seed, 2000 + i)).with_dims(cfg.volume_dims);
        if multimodal {
            sy.appearance = Appearance::y_variant(i as usize % cfg.y_variants);
        }
        ys.push(generate_phantom(&sy)?);
    }
    Ok((xs, ys))
}

fn pick(cases: &[Labeled], ids: &[usize], labels: bool) -> Vec<(Volume, Option<Mask>)> {
    ids.iter()
        .map(|&i| (cases[i].0.clone(), labels.then(|| cases[i].1.clone())))
        .collect()
}

fn mean_scores(
    state: &TrainState,
    domain: Domain,
    cases: &[Labeled],
    ids: &[usize],
) -> Result<(f64, f64)> {
    let mut d = 0.0;
    let mut j = 0.0;
    for &i in ids {
        let s = evaluate_case(&state.bundle, domain, &cases[i].0, &cases[i].1)?;
        d += s.dice;
        j += s.jaccard;
    }
    let n = ids.len() as f64;
    Ok((d / n, j / n))
}

fn sampler(cfg: &TrainConfig, cases: Vec<(Volume, Option<Mask>)>) -> Result<Arc<PatchSampler>> {
    Ok(Arc::new(PatchSampler::new(cases, cfg.net.patch, cfg.augment)?))
}

/// Trains and evaluates one fold, returning the trained state.
pub fn run_fold(
    cfg: &TrainConfig,
    xs: &[Labeled],
    ys: &[Labeled],
    train: &[usize],
    progress: &mut dyn FnMut(&str),
) -> Result<TrainState> {
    let mut state = TrainState::new(cfg)?;
    let (sx, sy, sseg) = stream_seeds(cfg.seed);
    let seg_iters = cfg.seg_iterations as u64;
    if cfg.mode == ExperimentMode::BaselineUnadapted {
        // source encoder and head trained together on raw source scans
        let mut stream = batch_stream(cfg, sampler(cfg, pick(xs, train, true))?, sseg, 0, seg_iters);
        let mut sources = [SegSource {
            domain: Domain::X,
            stream: &mut *stream,
        }];
        train_segmentation(&mut state, &mut sources, seg_iters, true, &mut |_| Ok(()))?;
        return Ok(state);
    }

    let iters = cfg.adapt_iterations as u64;
    let mut stream_x = batch_stream(cfg, sampler(cfg, pick(xs, train, false))?, sx, 0, iters);
    let mut stream_y = batch_stream(cfg, sampler(cfg, pick(ys, train, false))?, sy, 0, iters);
    let every = (iters / 10).max(1);
    train_adaptation(cfg, &mut state, &mut *stream_x, &mut *stream_y, iters, &mut |log| {
        if (log.step + 1) % every == 0 {
            progress(&format!(
                "  adapt {}/{iters} total {:.4} critic gap {:.4}",
                log.step + 1,
                log.report.total,
                log.critic_gap
            ));
        }
        Ok(())
    })?;

    let mut seg_x = batch_stream(cfg, sampler(cfg, pick(xs, train, true))?, sseg, 0, seg_iters);
    let mut seg_y;
    let mut sources = vec![SegSource {
        domain: Domain::X,
        stream: &mut *seg_x,
    }];
    if cfg.mode == ExperimentMode::AdaptThenSegJoint {
        seg_y = batch_stream(cfg, sampler(cfg, pick(ys, train, true))?, sseg ^ 1, 0, seg_iters);
        sources.push(SegSource {
            domain: Domain::Y,
            stream: &mut *seg_y,
        });
    }
    train_segmentation(&mut state, &mut sources, seg_iters, cfg.joint_finetune, &mut |_| Ok(()))?;
    Ok(state)
}

/// Cross-validated run of one experiment mode on generated phantoms.
/// Every fold trains from scratch on the training split of both domains
/// and is scored on its held-out scans; the baseline reads target scans
/// through the source content encoder.
pub fn run_experiment(cfg: &TrainConfig, progress: &mut dyn FnMut(&str)) -> Result<ExperimentReport> {
    cfg.validate()?;
    let (xs, ys) = experiment_data(cfg)?;
    let ids: Vec<usize> = (0..cfg.cases).collect();
    let splits = kfold_split(&ids, cfg.folds, derive_seed(cfg.seed, 5))?;
    let target_domain = match cfg.mode {
        ExperimentMode::BaselineUnadapted => Domain::X,
        _ => Domain::Y,
    };
    let mut folds = Vec::new();
    for (k, (train, test)) in splits.iter().enumerate() {
        progress(&format!("{} fold {}/{}", cfg.mode, k + 1, cfg.folds));
        let fold_cfg = TrainConfig {
            seed: derive_seed(cfg.seed, 100 + k as u64),
            ..cfg.clone()
        };
        let state = run_fold(&fold_cfg, &xs, &ys, train, progress)?;
        let (dice, jaccard) = mean_scores(&state, target_domain, &ys, test)?;
        folds.push(FoldResult {
            fold: k,
            split: "target",
            dice,
            jaccard,
        });
        let (dice_s, jaccard_s) = mean_scores(&state, Domain::X, &xs, test)?;
        folds.push(FoldResult {
            fold: k,
            split: "source",
            dice: dice_s,
            jaccard: jaccard_s,
        });
        progress(&format!("  target dice {dice:.4} source dice {dice_s:.4}"));
    }
    Ok(ExperimentReport { mode: cfg.mode, folds })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_summary_rows() {
        let r = ExperimentReport {
            mode: ExperimentMode::BaselineUnadapted,
            folds: vec![
                FoldResult {
                    fold: 0,
                    split: "target",
                    dice: 0.5,
                    jaccard: 1.0 / 3.0,
                },
                FoldResult {
                    fold: 1,
                    split: "target",
                    dice: 1.0,
                    jaccard: 1.0,
                },
            ],
        };
        let csv = r.to_csv();
        assert!(csv.starts_with("fold,split,dice,jaccard\n0,target,0.5,"));
        assert!(csv.contains("mean,target,0.75,"));
        assert!(csv.contains("std,target,0.25,"));
        assert!(!csv.contains("source"));
    }
}
