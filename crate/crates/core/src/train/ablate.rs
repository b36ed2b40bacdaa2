use std::fmt::Write as _;

use rayon::prelude::*;

use crate::error::Result;
use crate::features::SampleSet;
use crate::model::{BranchMode, TgcnnConfig, TgcnnModel};

use super::{evaluate, train, MetricsReport, TrainConfig};

#[derive(Clone, Debug, PartialEq)]
pub struct AblationRun {
    pub mode: BranchMode,
    pub seed: u64,
    pub epochs_run: usize,
    pub metrics: MetricsReport,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationReport {
    pub runs: Vec<AblationRun>,
}

/// Median of a non-empty list; the mean of the middle pair for even lengths.
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

impl AblationReport {
    pub fn f1_scores(&self, mode: BranchMode) -> Vec<f64> {
        self.runs.iter().filter(|r| r.mode == mode).map(|r| r.metrics.f1).collect()
    }

    pub fn median_f1(&self, mode: BranchMode) -> f64 {
        median(&self.f1_scores(mode))
    }

    /// Median step-wise-only F1 minus median channel-wise-only F1.
    pub fn stepwise_gap(&self) -> f64 {
        self.median_f1(BranchMode::StepwiseOnly) - self.median_f1(BranchMode::ChannelwiseOnly)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::from("mode,seed,epochs,f1,auc_roc,iou,accuracy\n");
        for r in &self.runs {
            let m = &r.metrics;
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{}",
                r.mode, r.seed, r.epochs_run, m.f1, m.auc_roc, m.iou, m.accuracy
            );
        }
        for mode in BranchMode::ALL {
            let _ = writeln!(s, "median_f1_{mode}={}", self.median_f1(mode));
        }
        let _ = writeln!(s, "median_gap_stepwise_minus_channelwise={}", self.stepwise_gap());
        s
    }
}

/// Trains every branch mode once per seed on `train_set` and scores it on `test_set`.
///
/// For seed `s`, both the model and the training shuffle use `s`. Runs execute in
/// parallel; the report lists them mode-major, in seed order.
pub fn ablate(
    train_set: &SampleSet,
    test_set: &SampleSet,
    base: &TgcnnConfig,
    train_cfg: &TrainConfig,
    seeds: &[u64],
) -> Result<AblationReport> {
    let jobs: Vec<(BranchMode, u64)> = BranchMode::ALL
        .into_iter()
        .flat_map(|mode| seeds.iter().map(move |&s| (mode, s)))
        .collect();
    let runs = jobs
        .into_par_iter()
        .map(|(mode, seed)| {
            let config = TgcnnConfig {
                branch_mode: mode,
                seed,
                ..base.clone()
            };
            let mut model = TgcnnModel::<f64>::build(config)?;
            let cfg = TrainConfig {
                seed,
                ..train_cfg.clone()
            };
            let history = train(&mut model, train_set, test_set, &cfg)?;
            Ok(AblationRun {
                mode,
                seed,
                epochs_run: history.len(),
                metrics: evaluate(&model, test_set, 0.5)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(AblationReport { runs })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_values() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    }
}
