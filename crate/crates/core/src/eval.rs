//! Inference over a corpus and conversion to metric inputs.

use dsgg_autodiff::Graph;
use dsgg_metrics::{
    evaluate, Entity, EvalOptions, FrameGroundTruth, FrameId, FramePrediction, GtEntity, GtTriplet, MetricReport,
    TaskMode,
};

use crate::model::{Model, Pass, VideoBatch};
use crate::{Error, Result};

/// Raw model outputs for one video.
#[derive(Clone, Debug, PartialEq)]
pub struct VideoOutput {
    /// Class distribution of every object, in batch order.
    pub object_probs: Vec<Vec<f64>>,
    /// Predicate scores of every pair, in batch order.
    pub pair_scores: Vec<Vec<f64>>,
}

pub trait Predictor {
    fn predict(&self, batch: &VideoBatch) -> Result<VideoOutput>;
}

fn softmax(row: &[f64]) -> Vec<f64> {
    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = row.iter().map(|x| (x - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|x| x / z).collect()
}

impl Predictor for Model {
    /// Deterministic inference: memory unit bypassed, mixture head without
    /// sampling.
    fn predict(&self, batch: &VideoBatch) -> Result<VideoOutput> {
        let mut g = Graph::new();
        let b = self.params.bind_frozen(&mut g);
        let f = self.forward(&mut g, &b, batch, Pass::Infer)?;
        let logits = g.value(f.object_logits);
        let object_probs = (0..logits.rows()).map(|r| softmax(logits.row(r))).collect();
        let pair_scores = match f.scores {
            Some(s) => {
                let t = g.value(s);
                (0..t.rows()).map(|r| t.row(r).to_vec()).collect()
            }
            None => Vec::new(),
        };
        Ok(VideoOutput { object_probs, pair_scores })
    }
}

/// Predicts the clean annotation exactly: one-hot object classes and score
/// 1 for every true predicate, 0 otherwise.
#[derive(Clone, Copy, Debug)]
pub struct OraclePredictor {
    pub object_classes: usize,
    pub predicate_classes: usize,
}

impl Predictor for OraclePredictor {
    fn predict(&self, batch: &VideoBatch) -> Result<VideoOutput> {
        let object_probs = batch
            .gt_classes
            .iter()
            .map(|&c| (0..self.object_classes).map(|i| if i == c { 1.0 } else { 0.0 }).collect())
            .collect();
        let pair_scores = batch
            .gt_labels
            .iter()
            .map(|l| (0..self.predicate_classes).map(|p| if l.contains(&p) { 1.0 } else { 0.0 }).collect())
            .collect();
        Ok(VideoOutput { object_probs, pair_scores })
    }
}

/// Metric inputs for a whole corpus plus the predicted object classes.
#[derive(Clone, Debug)]
pub struct Predictions {
    pub frames: Vec<FramePrediction>,
    pub truth: Vec<FrameGroundTruth>,
    /// Predicted class of every object, one vector per video in batch order.
    pub object_classes: Vec<Vec<usize>>,
}

fn argmax(v: &[f64]) -> (usize, f64) {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    (best, v[best])
}

/// Runs `predictor` on every video and builds per-frame candidates and
/// clean ground truth.
///
/// PREDCLS entities carry ground-truth boxes and classes with score 1;
/// SGCLS keeps the ground-truth box and takes the most probable class;
/// SGDET additionally uses the detector box.
pub fn predict_corpus(predictor: &dyn Predictor, batches: &[VideoBatch], task: TaskMode) -> Result<Predictions> {
    let mut out = Predictions { frames: Vec::new(), truth: Vec::new(), object_classes: Vec::new() };
    for batch in batches {
        if batch.objects.is_empty() {
            for &f in &batch.frame_index {
                let frame = FrameId { video: batch.video_id, frame: f };
                out.frames.push(FramePrediction { frame, candidates: Vec::new() });
                out.truth.push(FrameGroundTruth { frame, triplets: Vec::new() });
            }
            out.object_classes.push(Vec::new());
            continue;
        }
        let o = predictor.predict(batch)?;
        if o.object_probs.len() != batch.objects.len() || o.pair_scores.len() != batch.pairs() {
            return Err(Error::Contract(format!("predictor output does not match video {}", batch.video_id)));
        }
        let entities: Vec<Entity> = (0..batch.objects.len())
            .map(|i| {
                let (class, score) = argmax(&o.object_probs[i]);
                match task {
                    TaskMode::PredCls => Entity { bbox: batch.gt_boxes[i], class: batch.gt_classes[i], score: 1.0 },
                    TaskMode::SgCls => Entity { bbox: batch.gt_boxes[i], class, score },
                    TaskMode::SgDet => Entity { bbox: batch.boxes[i], class, score },
                }
            })
            .collect();
        out.object_classes.push(o.object_probs.iter().map(|p| argmax(p).0).collect());
        let gt = |i: usize| GtEntity { bbox: batch.gt_boxes[i], class: batch.gt_classes[i] };
        for (t, &f) in batch.frame_index.iter().enumerate() {
            let frame = FrameId { video: batch.video_id, frame: f };
            let pairs: Vec<usize> = (0..batch.pairs()).filter(|&p| batch.pair_frames[p] == t).collect();
            let scored: Vec<_> = pairs
                .iter()
                .map(|&p| (entities[batch.subjects[p]], entities[batch.pair_objects[p]], o.pair_scores[p].clone()))
                .collect();
            out.frames.push(FramePrediction::from_pair_scores(frame, &scored));
            let triplets = pairs
                .iter()
                .flat_map(|&p| {
                    batch.gt_labels[p].iter().map(move |&predicate| GtTriplet {
                        subject: gt(batch.subjects[p]),
                        predicate,
                        object: gt(batch.pair_objects[p]),
                    })
                })
                .collect();
            out.truth.push(FrameGroundTruth { frame, triplets });
        }
    }
    Ok(out)
}

/// Number of times a tracked object's predicted class changes between
/// consecutive frames in which it appears, summed over all tracks.
pub fn class_flips(batches: &[VideoBatch], predicted: &[Vec<usize>]) -> usize {
    let mut flips = 0;
    for (batch, classes) in batches.iter().zip(predicted) {
        let mut last: std::collections::HashMap<usize, usize> = Default::default();
        for (i, &c) in classes.iter().enumerate() {
            if let Some(prev) = last.insert(batch.tracks[i], c) {
                flips += usize::from(prev != c);
            }
        }
    }
    flips
}

/// Predicts and scores a corpus in one go.
pub fn evaluate_corpus(
    predictor: &dyn Predictor,
    batches: &[VideoBatch],
    train_counts: &[u64],
    options: &EvalOptions,
) -> Result<(MetricReport, Predictions)> {
    let p = predict_corpus(predictor, batches, options.task)?;
    let report = evaluate(&p.frames, &p.truth, train_counts, options)?;
    Ok((report, p))
}
