//! Scene-graph evaluation: triplet ranking under the With-Constraint and
//! No-Constraints regimes, image-based Recall@K, mean Recall@K, and
//! HEAD/BODY/TAIL aggregation of per-class recall.

mod io;
mod rank;
mod recall;
mod report;
mod split;

pub use io::{read_predictions, write_predictions};
pub use rank::{rank_triplets, Regime};
pub use recall::{frame_matches, mean_recall_at_k, recall_at_k, Matching, Pooling};
pub use report::{evaluate, EvalOptions, KReport, MetricReport, RegimeReport};
pub use split::{split_report, Bucket, SplitReport, Thresholds};

use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

/// Axis-aligned box `[x1, y1, x2, y2]`.
pub type BoundingBox = [f64; 4];

/// Evaluation setting: which parts of the graph are given to the model.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskMode {
    /// Ground-truth boxes and object classes given.
    PredCls,
    /// Ground-truth boxes given.
    SgCls,
    /// Nothing given; boxes come from a detector.
    SgDet,
}

impl TaskMode {
    pub fn name(self) -> &'static str {
        match self {
            TaskMode::PredCls => "predcls",
            TaskMode::SgCls => "sgcls",
            TaskMode::SgDet => "sgdet",
        }
    }
}

impl std::str::FromStr for TaskMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "predcls" => Ok(TaskMode::PredCls),
            "sgcls" => Ok(TaskMode::SgCls),
            "sgdet" => Ok(TaskMode::SgDet),
            other => Err(Error::Contract(format!("unknown task mode `{}`", other))),
        }
    }
}

/// Identifies one frame of one video.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct FrameId {
    pub video: u64,
    pub frame: usize,
}

/// A scored object in a candidate triplet.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Entity {
    #[serde(rename = "box")]
    pub bbox: BoundingBox,
    pub class: usize,
    pub score: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredicateScore {
    pub class: usize,
    pub score: f64,
}

/// One `(pair, predicate)` hypothesis. `pair` groups candidates that share a
/// subject–object pair; the With-Constraint regime keeps one per pair.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub pair: usize,
    pub subject: Entity,
    pub predicate: PredicateScore,
    pub object: Entity,
}

impl Candidate {
    pub fn composite(&self) -> f64 {
        self.subject.score * self.predicate.score * self.object.score
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FramePrediction {
    pub frame: FrameId,
    pub candidates: Vec<Candidate>,
}

impl FramePrediction {
    /// Expands per-pair predicate score vectors into one candidate per
    /// `(pair, predicate)`.
    pub fn from_pair_scores(frame: FrameId, pairs: &[(Entity, Entity, Vec<f64>)]) -> Self {
        let mut candidates = Vec::new();
        for (pair, (subject, object, scores)) in pairs.iter().enumerate() {
            for (class, &score) in scores.iter().enumerate() {
                candidates.push(Candidate {
                    pair,
                    subject: *subject,
                    predicate: PredicateScore { class, score },
                    object: *object,
                });
            }
        }
        Self { frame, candidates }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GtEntity {
    #[serde(rename = "box")]
    pub bbox: BoundingBox,
    pub class: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GtTriplet {
    pub subject: GtEntity,
    pub predicate: usize,
    pub object: GtEntity,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameGroundTruth {
    pub frame: FrameId,
    pub triplets: Vec<GtTriplet>,
}

/// Intersection over union of two boxes; 0 for degenerate boxes.
pub fn iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let iw = (a[2].min(b[2]) - a[0].max(b[0])).max(0.0);
    let ih = (a[3].min(b[3]) - a[1].max(b[1])).max(0.0);
    let inter = iw * ih;
    let area = |r: &BoundingBox| (r[2] - r[0]).max(0.0) * (r[3] - r[1]).max(0.0);
    let union = area(a) + area(b) - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}
