use std::cmp::Ordering;
use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::{Candidate, FramePrediction};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    /// At most one predicate per subject–object pair.
    WithConstraint,
    /// Every predicate of every pair competes.
    NoConstraints,
}

impl Regime {
    pub const ALL: [Regime; 2] = [Regime::WithConstraint, Regime::NoConstraints];

    pub fn name(self) -> &'static str {
        match self {
            Regime::WithConstraint => "with_constraint",
            Regime::NoConstraints => "no_constraints",
        }
    }
}

fn tie_key(c: &Candidate) -> (usize, usize) {
    (c.pair, c.predicate.class)
}

/// Orders a frame's candidates by composite score, highest first. Ties go to
/// the lower `(pair, predicate)` index. Under [`Regime::WithConstraint`] only
/// the best predicate of each pair survives.
pub fn rank_triplets(frame: &FramePrediction, regime: Regime) -> Vec<Candidate> {
    let mut pool: Vec<Candidate> = match regime {
        Regime::NoConstraints => frame.candidates.clone(),
        Regime::WithConstraint => {
            let mut best: BTreeMap<usize, Candidate> = BTreeMap::new();
            for c in &frame.candidates {
                match best.get(&c.pair) {
                    Some(b) if b.predicate.score > c.predicate.score => {}
                    Some(b) if b.predicate.score == c.predicate.score && b.predicate.class <= c.predicate.class => {}
                    _ => {
                        best.insert(c.pair, *c);
                    }
                }
            }
            best.into_values().collect()
        }
    };
    pool.sort_by(|a, b| match b.composite().total_cmp(&a.composite()) {
        Ordering::Equal => tie_key(a).cmp(&tie_key(b)),
        o => o,
    });
    pool
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::{Entity, FrameId};

    fn frame(scores: &[&[f64]]) -> FramePrediction {
        let e = Entity { bbox: [0.0, 0.0, 1.0, 1.0], class: 0, score: 1.0 };
        let pairs: Vec<_> = scores.iter().map(|s| (e, e, s.to_vec())).collect();
        FramePrediction::from_pair_scores(FrameId { video: 0, frame: 0 }, &pairs)
    }

    #[test]
    fn single_pair_examples() {
        let f = frame(&[&[0.9, 0.1]]);
        let wc = rank_triplets(&f, Regime::WithConstraint);
        assert_eq!(wc.len(), 1);
        assert_eq!(wc[0].predicate.class, 0);
        let nc = rank_triplets(&f, Regime::NoConstraints);
        assert_eq!(nc.iter().map(|c| c.predicate.score).collect::<Vec<_>>(), vec![0.9, 0.1]);
    }

    #[test]
    fn ties_prefer_lower_indices() {
        let f = frame(&[&[0.5, 0.5], &[0.5, 0.2]]);
        let nc = rank_triplets(&f, Regime::NoConstraints);
        let keys: Vec<_> = nc.iter().map(tie_key).collect();
        assert_eq!(keys, vec![(0, 0), (0, 1), (1, 0), (1, 1)]);
        let wc = rank_triplets(&f, Regime::WithConstraint);
        assert_eq!(wc.iter().map(tie_key).collect::<Vec<_>>(), vec![(0, 0), (1, 0)]);
    }
}
