//! Random evaluation instances and a brute-force reference evaluator.
//!
//! The reference re-derives everything from scratch for every K: it ranks
//! by repeated selection of the best remaining candidate, truncates, and
//! matches with nested loops.

#![allow(dead_code)]

use dsgg_metrics::{
    Candidate, Entity, FrameGroundTruth, FrameId, FramePrediction, GtEntity, GtTriplet, PredicateScore, TaskMode,
};
use rand::Rng;

pub struct Instance {
    pub task: TaskMode,
    pub classes: usize,
    pub predictions: Vec<FramePrediction>,
    pub ground_truth: Vec<FrameGroundTruth>,
}

const SCORES: [f64; 5] = [0.1, 0.25, 0.5, 0.75, 0.9];

fn pick_box(rng: &mut impl Rng) -> [f64; 4] {
    let x = rng.gen_range(0..3) as f64 * 0.25;
    let y = rng.gen_range(0..2) as f64 * 0.25;
    [x, y, x + 0.5, y + 0.5]
}

fn perturb(rng: &mut impl Rng, b: [f64; 4]) -> [f64; 4] {
    let d = [0.0, 0.05, 0.1, 0.2][rng.gen_range(0..4)];
    [b[0] + d, b[1], b[2] + d, b[3]]
}

fn guess(rng: &mut impl Rng, task: TaskMode, g: &GtEntity) -> Entity {
    let (bbox, class, score) = match task {
        TaskMode::PredCls => (g.bbox, g.class, 1.0),
        TaskMode::SgCls => {
            let c = if rng.gen_bool(0.7) { g.class } else { rng.gen_range(0..3) };
            (g.bbox, c, SCORES[rng.gen_range(0..SCORES.len())])
        }
        TaskMode::SgDet => {
            let c = if rng.gen_bool(0.7) { g.class } else { rng.gen_range(0..3) };
            (perturb(rng, g.bbox), c, SCORES[rng.gen_range(0..SCORES.len())])
        }
    };
    Entity { bbox, class, score }
}

/// At most 5 frames, 4 pairs per frame and 6 predicate classes; scores come
/// from a small set so ties are common.
pub fn random_instance(rng: &mut impl Rng, task: TaskMode) -> Instance {
    let classes = rng.gen_range(1..=6);
    let frames = rng.gen_range(1..=5);
    let mut predictions = Vec::new();
    let mut ground_truth = Vec::new();
    for f in 0..frames {
        let frame = FrameId { video: rng.gen_range(0..2), frame: f };
        let pairs = rng.gen_range(0..=4);
        let mut triplets = Vec::new();
        let mut candidates = Vec::new();
        for pair in 0..pairs {
            let s = GtEntity { bbox: pick_box(rng), class: rng.gen_range(0..3) };
            let o = GtEntity { bbox: pick_box(rng), class: rng.gen_range(0..3) };
            for _ in 0..rng.gen_range(1..=2) {
                triplets.push(GtTriplet { subject: s, predicate: rng.gen_range(0..classes), object: o });
            }
            let ps = guess(rng, task, &s);
            let po = guess(rng, task, &o);
            for class in 0..classes {
                candidates.push(Candidate {
                    pair,
                    subject: ps,
                    predicate: PredicateScore { class, score: SCORES[rng.gen_range(0..SCORES.len())] },
                    object: po,
                });
            }
        }
        // Duplicate frame ids are not allowed; keep only the first.
        if ground_truth.iter().any(|g: &FrameGroundTruth| g.frame == frame) {
            continue;
        }
        if rng.gen_bool(0.9) {
            predictions.push(FramePrediction { frame, candidates });
        }
        ground_truth.push(FrameGroundTruth { frame, triplets });
    }
    Instance { task, classes, predictions, ground_truth }
}

fn oracle_iou(a: &[f64; 4], b: &[f64; 4]) -> f64 {
    let inter_w = f64::max(0.0, f64::min(a[2], b[2]) - f64::max(a[0], b[0]));
    let inter_h = f64::max(0.0, f64::min(a[3], b[3]) - f64::max(a[1], b[1]));
    let inter = inter_w * inter_h;
    let total = (a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter;
    if total > 0.0 {
        inter / total
    } else {
        0.0
    }
}

fn entity_ok(task: TaskMode, p: &Entity, g: &GtEntity) -> bool {
    p.class == g.class
        && match task {
            TaskMode::SgDet => oracle_iou(&p.bbox, &g.bbox) >= 0.5,
            _ => p.bbox == g.bbox,
        }
}

fn better(a: &Candidate, b: &Candidate) -> bool {
    let sa = a.subject.score * a.predicate.score * a.object.score;
    let sb = b.subject.score * b.predicate.score * b.object.score;
    if sa != sb {
        return sa > sb;
    }
    if a.pair != b.pair {
        return a.pair < b.pair;
    }
    a.predicate.class < b.predicate.class
}

/// Candidates in rank order, found by repeated selection.
pub fn oracle_rank(p: &FramePrediction, no_constraints: bool) -> Vec<Candidate> {
    let mut pool: Vec<Candidate> = if no_constraints {
        p.candidates.clone()
    } else {
        let mut keep = Vec::new();
        for c in &p.candidates {
            let dominated = p.candidates.iter().any(|d| {
                d.pair == c.pair
                    && (d.predicate.score > c.predicate.score
                        || (d.predicate.score == c.predicate.score && d.predicate.class < c.predicate.class))
            });
            if !dominated {
                keep.push(*c);
            }
        }
        keep
    };
    let mut out = Vec::new();
    while !pool.is_empty() {
        let mut best = 0;
        for i in 1..pool.len() {
            if better(&pool[i], &pool[best]) {
                best = i;
            }
        }
        out.push(pool.remove(best));
    }
    out
}

/// Matched flags per ground-truth triplet of one frame for the top `k`.
pub fn oracle_frame(inst: &Instance, g: &FrameGroundTruth, k: usize, no_constraints: bool) -> Vec<bool> {
    let mut matched = vec![false; g.triplets.len()];
    let Some(p) = inst.predictions.iter().find(|p| p.frame == g.frame) else {
        return matched;
    };
    let ranked = oracle_rank(p, no_constraints);
    for c in ranked.iter().take(k) {
        for (j, t) in g.triplets.iter().enumerate() {
            if !matched[j]
                && c.predicate.class == t.predicate
                && entity_ok(inst.task, &c.subject, &t.subject)
                && entity_ok(inst.task, &c.object, &t.object)
            {
                matched[j] = true;
                break;
            }
        }
    }
    matched
}

pub fn oracle_recall(inst: &Instance, k: usize, no_constraints: bool) -> f64 {
    let mut sum = 0.0;
    let mut frames = 0;
    for g in inst.ground_truth.iter().filter(|g| !g.triplets.is_empty()) {
        let m = oracle_frame(inst, g, k, no_constraints);
        sum += m.iter().filter(|&&x| x).count() as f64 / m.len() as f64;
        frames += 1;
    }
    if frames == 0 {
        0.0
    } else {
        sum / frames as f64
    }
}

/// Per-class recall and its mean over present classes; `per_frame` selects
/// averaging per-frame class recalls instead of pooling counts.
pub fn oracle_mean_recall(
    inst: &Instance,
    k: usize,
    no_constraints: bool,
    per_frame: bool,
) -> (Option<f64>, Vec<Option<f64>>) {
    let mut per_class = Vec::new();
    for class in 0..inst.classes {
        let mut hits = 0.0;
        let mut total = 0.0;
        for g in &inst.ground_truth {
            let m = oracle_frame(inst, g, k, no_constraints);
            let idx: Vec<usize> = (0..g.triplets.len()).filter(|&j| g.triplets[j].predicate == class).collect();
            if idx.is_empty() {
                continue;
            }
            let h = idx.iter().filter(|&&j| m[j]).count() as f64;
            if per_frame {
                hits += h / idx.len() as f64;
                total += 1.0;
            } else {
                hits += h;
                total += idx.len() as f64;
            }
        }
        per_class.push(if total > 0.0 { Some(hits / total) } else { None });
    }
    let present: Vec<f64> = per_class.iter().flatten().copied().collect();
    let mean = if present.is_empty() { None } else { Some(present.iter().sum::<f64>() / present.len() as f64) };
    (mean, per_class)
}
