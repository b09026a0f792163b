use rayon::prelude::*;

use crate::data::{kfold_split, LoggedDataset};
use crate::error::{CrmError, Result};
use crate::estimators::truncated_ips_risk;
use crate::policy::SoftmaxPolicy;
use crate::seed;

use super::{train, TrainConfig, SHORT_EPOCHS};

/// Which regularization weight the grid varies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TuneTarget {
    #[default]
    Lambda,
    /// The extra L2 weight of POEM-L2.
    LambdaL2,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvConfig {
    pub num_folds: usize,
    pub seed: u64,
    pub epochs: usize,
    /// Worker threads; `None` lets the pool pick.
    pub threads: Option<usize>,
    pub target: TuneTarget,
}

impl Default for CvConfig {
    fn default() -> Self {
        Self {
            num_folds: 5,
            seed: 0,
            epochs: SHORT_EPOCHS,
            threads: None,
            target: TuneTarget::Lambda,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvRow {
    pub lambda: f64,
    /// Truncated-IPS reward estimate on each held-out fold; `-inf` marks an
    /// aborted run.
    pub fold_scores: Vec<f64>,
    pub mean_score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvResult {
    pub best_lambda: f64,
    pub rows: Vec<CvRow>,
}

/// K-fold grid search scored by `1 - truncated_ips_risk` on each held-out fold.
/// All λ values of one fold share the fold's training seed.
pub fn cross_validate(
    data: &LoggedDataset,
    base: &TrainConfig,
    prior: Option<&SoftmaxPolicy>,
    grid: &[f64],
    cv: &CvConfig,
) -> Result<CvResult> {
    if grid.is_empty() {
        return Err(CrmError::arg("empty lambda grid"));
    }
    if let Some(bad) = grid.iter().find(|l| !(**l >= 0.0)) {
        return Err(CrmError::arg(format!(
            "grid value {bad} is not a nonnegative number"
        )));
    }
    if cv.num_folds < 2 {
        return Err(CrmError::arg(format!(
            "need at least two folds, got {}",
            cv.num_folds
        )));
    }
    if cv.threads == Some(0) {
        return Err(CrmError::arg("thread count must be positive"));
    }
    let folds = kfold_split(data.len(), cv.num_folds, seed::derive(cv.seed, "cv-split"))?;

    let mut splits = Vec::with_capacity(cv.num_folds);
    for f in 0..cv.num_folds {
        let (train_idx, hold_idx) = folds.split(f);
        splits.push((data.subset(&train_idx)?, data.subset(&hold_idx)?));
    }
    let jobs: Vec<(usize, usize)> = (0..cv.num_folds)
        .flat_map(|f| (0..grid.len()).map(move |l| (f, l)))
        .collect();

    let run = |&(fold, li): &(usize, usize)| -> Result<f64> {
        let mut config = TrainConfig {
            epochs: cv.epochs,
            seed: seed::derive_indexed(cv.seed, "cv-fold", fold as u64),
            ..base.clone()
        };
        match cv.target {
            TuneTarget::Lambda => config.lambda = grid[li],
            TuneTarget::LambdaL2 => config.lambda_l2 = grid[li],
        }
        let (train_set, holdout) = &splits[fold];
        match train(&config, train_set, prior) {
            Ok(report) => {
                let score = 1.0 - truncated_ips_risk(&report.final_policy, holdout, config.tau)?;
                Ok(if score.is_nan() {
                    f64::NEG_INFINITY
                } else {
                    score
                })
            }
            Err(e) if e.is_numeric() => {
                log::warn!("lambda {} fold {fold}: {e}", grid[li]);
                Ok(f64::NEG_INFINITY)
            }
            Err(e) => Err(e),
        }
    };

    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(t) = cv.threads {
        builder = builder.num_threads(t);
    }
    let pool = builder
        .build()
        .map_err(|e| CrmError::arg(format!("cannot start worker threads: {e}")))?;
    let scores: Vec<f64> = pool
        .install(|| jobs.par_iter().map(run).collect::<Vec<Result<f64>>>())
        .into_iter()
        .collect::<Result<_>>()?;

    let rows: Vec<CvRow> = grid
        .iter()
        .enumerate()
        .map(|(li, &lambda)| {
            let fold_scores: Vec<f64> = (0..cv.num_folds)
                .map(|f| scores[f * grid.len() + li])
                .collect();
            let mean_score = fold_scores.iter().sum::<f64>() / cv.num_folds as f64;
            CvRow {
                lambda,
                fold_scores,
                mean_score,
            }
        })
        .collect();

    let mut best = &rows[0];
    for row in &rows[1..] {
        let better = row.mean_score > best.mean_score
            || (row.mean_score == best.mean_score && row.lambda < best.lambda);
        if better {
            best = row;
        }
    }
    Ok(CvResult {
        best_lambda: best.lambda,
        rows,
    })
}
