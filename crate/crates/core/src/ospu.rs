//! Object sequence processing: per-class object sequences across frames,
//! the sequence encoder, the object classifier and the intra-video
//! contrastive loss.

use dsgg_autodiff::{Binding, Graph, ParamStore, Tensor, Var};
use rand::Rng;

use crate::attention::{init_linear, linear, sinusoidal_positions, EncoderLayer, Mask};
use crate::{Error, Result};

/// What sequence construction needs to know about one detection.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ObjectRef {
    pub frame: usize,
    /// Class used for grouping (detector class, or ground truth when given).
    pub class: usize,
    pub confidence: f64,
}

/// Detections of one class across a video, in frame order. Same-frame
/// duplicates are ordered by confidence, highest first.
#[derive(Clone, Debug, PartialEq)]
pub struct ObjectSequence {
    pub class: usize,
    /// Indices into the video's object list.
    pub members: Vec<usize>,
    pub frames: Vec<usize>,
}

/// Sequences zero-padded to a common length.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct SequenceBatch {
    pub sequences: Vec<ObjectSequence>,
    pub max_len: usize,
}

impl SequenceBatch {
    /// `mask[s][slot]` is true for real (unpadded) slots.
    pub fn mask(&self) -> Vec<Vec<bool>> {
        self.sequences.iter().map(|s| (0..self.max_len).map(|i| i < s.members.len()).collect()).collect()
    }

    pub fn valid_slots(&self) -> usize {
        self.sequences.iter().map(|s| s.members.len()).sum()
    }

    /// Object index of every unpadded slot, sequence by sequence.
    pub fn slot_objects(&self) -> Vec<usize> {
        self.sequences.iter().flat_map(|s| s.members.iter().copied()).collect()
    }

    /// Sequence number of every unpadded slot.
    pub fn slot_sequences(&self) -> Vec<usize> {
        self.sequences.iter().enumerate().flat_map(|(i, s)| std::iter::repeat(i).take(s.members.len())).collect()
    }
}

/// One sequence per class present, classes ascending.
pub fn build_sequences(objects: &[ObjectRef]) -> SequenceBatch {
    let mut classes: Vec<usize> = objects.iter().map(|o| o.class).collect();
    classes.sort_unstable();
    classes.dedup();
    let sequences: Vec<ObjectSequence> = classes
        .into_iter()
        .map(|class| {
            let mut members: Vec<usize> = (0..objects.len()).filter(|&i| objects[i].class == class).collect();
            members.sort_by(|&a, &b| {
                objects[a]
                    .frame
                    .cmp(&objects[b].frame)
                    .then(objects[b].confidence.total_cmp(&objects[a].confidence))
                    .then(a.cmp(&b))
            });
            let frames = members.iter().map(|&i| objects[i].frame).collect();
            ObjectSequence { class, members, frames }
        })
        .collect();
    let max_len = sequences.iter().map(|s| s.members.len()).max().unwrap_or(0);
    SequenceBatch { sequences, max_len }
}

#[derive(Clone, Debug)]
pub struct OspuConfig {
    pub feature_dim: usize,
    pub object_classes: usize,
    pub heads: usize,
    pub layers: usize,
    pub ffn_hidden: usize,
    pub classifier_hidden: usize,
}

impl OspuConfig {
    fn layer(&self, l: usize) -> EncoderLayer {
        EncoderLayer::new(format!("ospu.enc{}", l), self.heads)
    }

    pub fn init(&self, store: &mut ParamStore, rng: &mut impl Rng) {
        for l in 0..self.layers {
            self.layer(l).init(store, self.feature_dim, self.ffn_hidden, rng);
        }
        init_linear(store, "ospu.cls1", self.feature_dim, self.classifier_hidden, rng);
        init_linear(store, "ospu.cls2", self.classifier_hidden, self.object_classes, rng);
    }
}

/// Encoder outputs and class logits, both in the video's object order.
#[derive(Clone, Copy, Debug)]
pub struct OspuOutput {
    pub embeddings: Var,
    pub logits: Var,
}

/// Encodes every sequence of `batch` and classifies each detection.
///
/// With `temporal` set, sequences receive sinusoidal encodings of the frame
/// index and each slot attends to the unpadded slots of its own sequence.
/// Without it every detection attends only to itself and gets no position
/// signal: a per-frame classifier with exactly the same parameters.
pub fn encode_and_classify(
    g: &mut Graph,
    b: &Binding,
    cfg: &OspuConfig,
    features: Var,
    objects: &[ObjectRef],
    batch: &SequenceBatch,
    temporal: bool,
) -> Result<OspuOutput> {
    let n = objects.len();
    if batch.valid_slots() == 0 || batch.valid_slots() != n {
        return Err(Error::Contract(format!("{} detections but {} unpadded slots", n, batch.valid_slots())));
    }
    let order = batch.slot_objects();
    let mut inverse = vec![0; n];
    for (slot, &obj) in order.iter().enumerate() {
        inverse[obj] = slot;
    }
    let mut x = g.gather_rows(features, &order)?;
    let mask = if temporal {
        let max_frame = objects.iter().map(|o| o.frame).max().unwrap_or(0);
        let table = sinusoidal_positions(max_frame + 1, cfg.feature_dim)?;
        let pos: Vec<f64> = order.iter().flat_map(|&o| table.row(objects[o].frame).to_vec()).collect();
        let pe = g.constant(Tensor::matrix(n, cfg.feature_dim, pos)?);
        x = g.add(x, pe)?;
        let seq = batch.slot_sequences();
        Mask::groups(&seq, &seq)
    } else {
        Mask::diagonal(n)
    };
    for l in 0..cfg.layers {
        x = cfg.layer(l).self_attend(g, b, x, Some(&mask))?;
    }
    let embeddings = g.gather_rows(x, &inverse)?;
    let h = linear(g, b, "ospu.cls1", embeddings)?;
    let h = g.relu(h);
    let logits = linear(g, b, "ospu.cls2", h)?;
    Ok(OspuOutput { embeddings, logits })
}

/// `Σ_{i<j, same class} ‖x_i − x_j‖² + Σ_{i<j, different class} max(0, 1 − ‖x_i − x_j‖²)`.
pub fn intra_contrastive(g: &mut Graph, x: Var, labels: &[usize]) -> Result<Var> {
    let n = labels.len();
    if g.value(x).rows() != n {
        return Err(Error::Contract(format!("{} embeddings but {} labels", g.value(x).rows(), n)));
    }
    let mut pos = vec![0.0; n * n];
    let mut neg = vec![0.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            if labels[i] == labels[j] {
                pos[i * n + j] = 1.0;
            } else {
                neg[i * n + j] = 1.0;
            }
        }
    }
    let d = g.pairwise_sq_dist(x)?;
    let pos = g.constant(Tensor::matrix(n, n, pos)?);
    let neg = g.constant(Tensor::matrix(n, n, neg)?);
    let ones = g.constant(Tensor::filled(&[n, n], 1.0));
    let pull = g.mul(d, pos)?;
    let gap = g.sub(ones, d)?;
    let hinge = g.relu(gap);
    let push = g.mul(hinge, neg)?;
    let a = g.sum(pull);
    let b = g.sum(push);
    Ok(g.add(a, b)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn obj(frame: usize, class: usize, confidence: f64) -> ObjectRef {
        ObjectRef { frame, class, confidence }
    }

    #[test]
    fn grouping_examples() {
        let b = build_sequences(&[obj(0, 2, 0.9)]);
        assert_eq!(b.sequences.len(), 1);
        assert_eq!(b.max_len, 1);

        // cup (class 1) in frames 0..3, table (class 4) in frame 1.
        let objs = [obj(0, 1, 0.9), obj(1, 1, 0.8), obj(1, 4, 0.7), obj(2, 1, 0.6)];
        let b = build_sequences(&objs);
        assert_eq!(b.sequences.iter().map(|s| s.members.len()).collect::<Vec<_>>(), vec![3, 1]);
        assert_eq!(b.max_len, 3);
        assert_eq!(b.mask()[1], vec![true, false, false]);

        let dup = [obj(1, 0, 0.3), obj(0, 0, 0.5), obj(1, 0, 0.7)];
        let b = build_sequences(&dup);
        assert_eq!(b.sequences[0].members, vec![1, 2, 0]);
        assert_eq!(b.sequences[0].frames, vec![0, 1, 1]);

        assert_eq!(build_sequences(&[]).sequences.len(), 0);
    }

    #[test]
    fn contrastive_examples() {
        let mut g = Graph::new();
        let same = g.constant(Tensor::from_rows(&[&[0.3, 0.1], &[0.3, 0.1]]));
        let l = intra_contrastive(&mut g, same, &[0, 0]).unwrap();
        assert_eq!(g.value(l).item(), 0.0);
        let l = intra_contrastive(&mut g, same, &[0, 1]).unwrap();
        assert_eq!(g.value(l).item(), 1.0);
        let x = g.constant(Tensor::from_rows(&[&[0.0, 0.0], &[1.0, 1.0], &[2.0, 0.0]]));
        // (0,1) positive at distance √2 → 2; (0,2) negative at distance 2 → 0;
        // (1,2) negative at distance √2 → 0.
        let l = intra_contrastive(&mut g, x, &[0, 0, 1]).unwrap();
        assert!((g.value(l).item() - 2.0).abs() < 1e-12);
    }
}
