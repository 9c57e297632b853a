use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::rank::{rank_triplets, Regime};
use crate::{iou, Candidate, Error, FrameGroundTruth, FrameId, FramePrediction, GtEntity, GtTriplet, Result, TaskMode};

/// How a predicted entity is matched to a ground-truth entity.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Matching {
    /// Exact box and class equality; boxes are ground truth so this is
    /// matching by identity.
    Identity,
    /// Class equality and box IoU at or above the threshold.
    Iou(f64),
}

impl Matching {
    pub fn for_task(task: TaskMode, iou_threshold: f64) -> Self {
        match task {
            TaskMode::PredCls | TaskMode::SgCls => Matching::Identity,
            TaskMode::SgDet => Matching::Iou(iou_threshold),
        }
    }

    fn entity(self, pred: &crate::Entity, gt: &GtEntity) -> bool {
        if pred.class != gt.class {
            return false;
        }
        match self {
            Matching::Identity => pred.bbox == gt.bbox,
            Matching::Iou(t) => iou(&pred.bbox, &gt.bbox) >= t,
        }
    }

    pub fn triplet(self, c: &Candidate, gt: &GtTriplet) -> bool {
        c.predicate.class == gt.predicate && self.entity(&c.subject, &gt.subject) && self.entity(&c.object, &gt.object)
    }
}

/// How per-class recall is aggregated across frames.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pooling {
    /// Matched and total counts are summed over frames, then divided.
    #[default]
    Pooled,
    /// Per-class recall is computed per frame and averaged over the frames
    /// where the class occurs.
    PerFrame,
}

/// Greedy one-to-one matching in rank order: each candidate consumes the
/// lowest-index unmatched ground-truth triplet it matches. Returns, for every
/// ground-truth triplet, the rank of the candidate that consumed it.
pub fn frame_matches(ranked: &[Candidate], gt: &[GtTriplet], matching: Matching) -> Vec<Option<usize>> {
    let mut taken: Vec<Option<usize>> = vec![None; gt.len()];
    for (rank, c) in ranked.iter().enumerate() {
        if let Some(j) = (0..gt.len()).find(|&j| taken[j].is_none() && matching.triplet(c, &gt[j])) {
            taken[j] = Some(rank);
        }
    }
    taken
}

/// Per ground-truth frame: `(predicate class, matched rank)` for each triplet.
pub(crate) type Outcomes = Vec<Vec<(usize, Option<usize>)>>;

pub(crate) fn outcomes(
    predictions: &[FramePrediction],
    ground_truth: &[FrameGroundTruth],
    regime: Regime,
    matching: Matching,
) -> Result<Outcomes> {
    let mut by_frame: BTreeMap<FrameId, &FramePrediction> = BTreeMap::new();
    for p in predictions {
        if by_frame.insert(p.frame, p).is_some() {
            return Err(Error::Contract(format!("duplicate prediction for frame {:?}", p.frame)));
        }
    }
    let mut out = Vec::new();
    for g in ground_truth {
        if g.triplets.is_empty() {
            continue;
        }
        let ranked = by_frame.get(&g.frame).map(|p| rank_triplets(p, regime)).unwrap_or_default();
        let matched = frame_matches(&ranked, &g.triplets, matching);
        out.push(g.triplets.iter().map(|t| t.predicate).zip(matched).collect());
    }
    Ok(out)
}

fn check_k(k: usize) -> Result<()> {
    if k == 0 {
        return Err(Error::Contract("K must be positive".into()));
    }
    Ok(())
}

pub(crate) fn recall_from(outcomes: &Outcomes, k: usize) -> f64 {
    if outcomes.is_empty() {
        return 0.0;
    }
    let total: f64 = outcomes
        .iter()
        .map(|f| f.iter().filter(|(_, r)| r.is_some_and(|r| r < k)).count() as f64 / f.len() as f64)
        .sum();
    total / outcomes.len() as f64
}

pub(crate) fn per_class_from(
    outcomes: &Outcomes,
    k: usize,
    classes: usize,
    pooling: Pooling,
) -> Result<Vec<Option<f64>>> {
    let mut sums = vec![0.0; classes];
    let mut weights = vec![0usize; classes];
    for frame in outcomes {
        let mut hit = vec![0usize; classes];
        let mut total = vec![0usize; classes];
        for &(class, rank) in frame {
            if class >= classes {
                return Err(Error::Contract(format!("predicate class {} out of range ({})", class, classes)));
            }
            total[class] += 1;
            if rank.is_some_and(|r| r < k) {
                hit[class] += 1;
            }
        }
        for c in 0..classes {
            match pooling {
                Pooling::Pooled => {
                    sums[c] += hit[c] as f64;
                    weights[c] += total[c];
                }
                Pooling::PerFrame if total[c] > 0 => {
                    sums[c] += hit[c] as f64 / total[c] as f64;
                    weights[c] += 1;
                }
                Pooling::PerFrame => {}
            }
        }
    }
    Ok(sums.iter().zip(&weights).map(|(&s, &w)| (w > 0).then(|| s / w as f64)).collect())
}

pub(crate) fn mean_of_present(per_class: &[Option<f64>]) -> Result<f64> {
    let present: Vec<f64> = per_class.iter().flatten().copied().collect();
    if present.is_empty() {
        return Err(Error::Contract("no ground-truth triplets".into()));
    }
    Ok(present.iter().sum::<f64>() / present.len() as f64)
}

/// Image-based Recall@K: per frame, the fraction of ground-truth triplets
/// matched by the top-K candidates, averaged over frames with at least one
/// ground-truth triplet. Returns 0 when no frame has ground truth.
pub fn recall_at_k(
    predictions: &[FramePrediction],
    ground_truth: &[FrameGroundTruth],
    k: usize,
    regime: Regime,
    task: TaskMode,
    iou_threshold: f64,
) -> Result<f64> {
    check_k(k)?;
    let o = outcomes(predictions, ground_truth, regime, Matching::for_task(task, iou_threshold))?;
    Ok(recall_from(&o, k))
}

/// Mean Recall@K over predicate classes that occur in the ground truth,
/// together with the per-class recall vector (`None` for absent classes).
#[allow(clippy::too_many_arguments)]
pub fn mean_recall_at_k(
    predictions: &[FramePrediction],
    ground_truth: &[FrameGroundTruth],
    k: usize,
    regime: Regime,
    task: TaskMode,
    iou_threshold: f64,
    classes: usize,
    pooling: Pooling,
) -> Result<(f64, Vec<Option<f64>>)> {
    check_k(k)?;
    let o = outcomes(predictions, ground_truth, regime, Matching::for_task(task, iou_threshold))?;
    let per_class = per_class_from(&o, k, classes, pooling)?;
    Ok((mean_of_present(&per_class)?, per_class))
}
