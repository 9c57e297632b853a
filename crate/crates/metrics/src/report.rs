use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::rank::Regime;
use crate::recall::{mean_of_present, outcomes, per_class_from, recall_from, Matching, Pooling};
use crate::split::{split_report, SplitReport, Thresholds};
use crate::{Error, FrameGroundTruth, FramePrediction, Result, TaskMode};

#[derive(Clone, Debug, PartialEq)]
pub struct EvalOptions {
    pub task: TaskMode,
    pub ks: Vec<usize>,
    pub iou_threshold: f64,
    pub pooling: Pooling,
    pub thresholds: Thresholds,
    /// Number of predicate classes.
    pub classes: usize,
}

impl EvalOptions {
    pub fn new(task: TaskMode, classes: usize) -> Self {
        Self {
            task,
            ks: vec![10, 20, 50],
            iou_threshold: 0.5,
            pooling: Pooling::Pooled,
            thresholds: Thresholds::default(),
            classes,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KReport {
    pub k: usize,
    pub recall: f64,
    pub mean_recall: f64,
    /// Recall per predicate class; `null` for classes absent from the test
    /// ground truth.
    pub per_class: Vec<Option<f64>>,
    pub split: SplitReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegimeReport {
    pub regime: Regime,
    pub at_k: Vec<KReport>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub task: TaskMode,
    pub pooling: Pooling,
    pub iou_threshold: f64,
    pub thresholds: Thresholds,
    /// Frames with at least one ground-truth triplet.
    pub frames: usize,
    /// Training-sample count per predicate class (drives the buckets).
    pub train_counts: Vec<u64>,
    /// Ground-truth triplet count per predicate class in the evaluated set.
    pub test_counts: Vec<u64>,
    pub regimes: Vec<RegimeReport>,
}

impl MetricReport {
    pub fn at(&self, regime: Regime, k: usize) -> Option<&KReport> {
        self.regimes.iter().find(|r| r.regime == regime)?.at_k.iter().find(|r| r.k == k)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

/// Computes R@K, mR@K, per-class recall and bucket means for both regimes
/// and every K in `options.ks`.
pub fn evaluate(
    predictions: &[FramePrediction],
    ground_truth: &[FrameGroundTruth],
    train_counts: &[u64],
    options: &EvalOptions,
) -> Result<MetricReport> {
    if options.ks.iter().any(|&k| k == 0) {
        return Err(Error::Contract("K must be positive".into()));
    }
    if train_counts.len() != options.classes {
        return Err(Error::Contract(format!("{} training counts for {} classes", train_counts.len(), options.classes)));
    }
    let mut test_counts = vec![0u64; options.classes];
    for f in ground_truth {
        for t in &f.triplets {
            *test_counts
                .get_mut(t.predicate)
                .ok_or_else(|| Error::Contract(format!("predicate class {} out of range", t.predicate)))? += 1;
        }
    }
    let matching = Matching::for_task(options.task, options.iou_threshold);
    let mut regimes = Vec::new();
    let mut frames = 0;
    for regime in Regime::ALL {
        let o = outcomes(predictions, ground_truth, regime, matching)?;
        frames = o.len();
        let mut at_k = Vec::new();
        for &k in &options.ks {
            let per_class = per_class_from(&o, k, options.classes, options.pooling)?;
            at_k.push(KReport {
                k,
                recall: recall_from(&o, k),
                mean_recall: mean_of_present(&per_class)?,
                split: split_report(&per_class, train_counts, &options.thresholds)?,
                per_class,
            });
        }
        regimes.push(RegimeReport { regime, at_k });
    }
    Ok(MetricReport {
        task: options.task,
        pooling: options.pooling,
        iou_threshold: options.iou_threshold,
        thresholds: options.thresholds,
        frames,
        train_counts: train_counts.to_vec(),
        test_counts,
        regimes,
    })
}
