//! Predicate embedding generator: pair representations, the per-frame
//! spatial encoder, temporal windows, and the windowed temporal decoder.

use std::ops::Range;

use dsgg_autodiff::{Binding, Graph, ParamStore, Tensor, Var};
use rand::Rng;

use crate::attention::{init_linear, linear, EncoderLayer, Mask};
use crate::{Error, Result};

#[derive(Clone, Debug)]
pub struct PegConfig {
    pub feature_dim: usize,
    pub object_classes: usize,
    pub d_v: usize,
    pub d_u: usize,
    pub d_s: usize,
    pub heads: usize,
    pub spatial_layers: usize,
    pub temporal_layers: usize,
    pub ffn_hidden: usize,
    pub eta: usize,
    pub stride: usize,
}

impl PegConfig {
    pub fn rel_dim(&self) -> usize {
        2 * self.d_v + self.d_u + 2 * self.d_s
    }

    fn spatial(&self, l: usize) -> EncoderLayer {
        EncoderLayer::new(format!("peg.spa{}", l), self.heads)
    }

    fn temporal(&self, l: usize) -> EncoderLayer {
        EncoderLayer::new(format!("peg.tem{}", l), self.heads)
    }

    pub fn init(&self, store: &mut ParamStore, rng: &mut impl Rng) {
        let d = self.rel_dim();
        init_linear(store, "peg.fv", self.feature_dim, self.d_v, rng);
        init_linear(store, "peg.fbox1", 8, self.feature_dim, rng);
        init_linear(store, "peg.fbox2", self.feature_dim, self.feature_dim, rng);
        init_linear(store, "peg.fu", self.feature_dim, self.d_u, rng);
        let bound = 1.0 / (self.d_s as f64).sqrt();
        store.init_uniform("peg.sem", &[self.object_classes, self.d_s], bound, rng);
        for l in 0..self.spatial_layers {
            self.spatial(l).init(store, d, self.ffn_hidden, rng);
        }
        for l in 0..self.temporal_layers {
            self.temporal(l).init(store, d, self.ffn_hidden, rng);
        }
        store.init_uniform("peg.er", &[self.eta, d], 1.0 / (d as f64).sqrt(), rng);
    }
}

/// Segments of the pair representations, all `[P × ·]`.
#[derive(Clone, Copy, Debug)]
pub struct PairParts {
    pub subject: Var,
    pub object: Var,
    pub union: Var,
    pub subject_sem: Var,
    pub object_sem: Var,
    /// `Concat(subject, object, union, subject_sem, object_sem)`, `[P × D_rel]`.
    pub rel: Var,
}

/// Inputs of [`build_pair_input`] for the `P` pairs of one video.
pub struct PairSources<'a> {
    /// `[N × D_feat]` object features.
    pub features: Var,
    pub subjects: &'a [usize],
    pub objects: &'a [usize],
    /// `[P × 8]` subject box then object box.
    pub boxes: Tensor,
    /// `[P × D_feat]` union-region features.
    pub union: Var,
    /// Semantic class of every object (ground truth or predicted).
    pub classes: &'a [usize],
}

/// `r = Concat(f_v(v_i), f_v(v_j), f_u(u + f_box(b_i, b_j)), s_i, s_j)`.
pub fn build_pair_input(g: &mut Graph, b: &Binding, cfg: &PegConfig, src: &PairSources) -> Result<PairParts> {
    if src.subjects.len() != src.objects.len() || src.boxes.rows() != src.subjects.len() {
        return Err(Error::Contract("pair index and box counts differ".into()));
    }
    if let Some(i) = (0..src.subjects.len()).find(|&i| src.subjects[i] == src.objects[i]) {
        return Err(Error::Contract(format!("pair {} relates an object to itself", i)));
    }
    let projected = linear(g, b, "peg.fv", src.features)?;
    let subject = g.gather_rows(projected, src.subjects)?;
    let object = g.gather_rows(projected, src.objects)?;
    let boxes = g.constant(src.boxes.clone());
    let fb = linear(g, b, "peg.fbox1", boxes)?;
    let fb = g.relu(fb);
    let fb = linear(g, b, "peg.fbox2", fb)?;
    let u = g.add(src.union, fb)?;
    let union = linear(g, b, "peg.fu", u)?;
    let table = b.var("peg.sem")?;
    let sc: Vec<usize> = src.subjects.iter().map(|&i| src.classes[i]).collect();
    let oc: Vec<usize> = src.objects.iter().map(|&i| src.classes[i]).collect();
    if sc.iter().chain(&oc).any(|&c| c >= cfg.object_classes) {
        return Err(Error::Contract("semantic class out of range".into()));
    }
    let subject_sem = g.gather_rows(table, &sc)?;
    let object_sem = g.gather_rows(table, &oc)?;
    let rel = g.concat_cols(&[subject, object, union, subject_sem, object_sem])?;
    Ok(PairParts { subject, object, union, subject_sem, object_sem, rel })
}

/// Encodes each frame's pairs jointly; pairs of different frames never
/// attend to each other. No positional signal: pairs within a frame are
/// unordered.
pub fn spatial_encode(g: &mut Graph, b: &Binding, cfg: &PegConfig, rel: Var, frames: &[usize]) -> Result<Var> {
    let mask = Mask::groups(frames, frames);
    let mut x = rel;
    for l in 0..cfg.spatial_layers {
        x = cfg.spatial(l).self_attend(g, b, x, Some(&mask))?;
    }
    Ok(x)
}

/// Frame ranges of length `eta` starting every `stride` frames. When the
/// full-length windows leave trailing frames uncovered, one shorter window
/// covers them.
pub fn build_windows(frames: usize, eta: usize, stride: usize) -> Result<Vec<Range<usize>>> {
    if eta == 0 || stride == 0 || stride > eta {
        return Err(Error::Contract(format!("need 1 <= stride <= eta, got eta {} stride {}", eta, stride)));
    }
    let mut out = Vec::new();
    let mut start = 0;
    while start + eta <= frames {
        out.push(start..start + eta);
        start += stride;
    }
    let covered = out.last().map_or(0, |w| w.end);
    if covered < frames {
        let s = if out.is_empty() { 0 } else { start };
        out.push(s..frames);
    }
    Ok(out)
}

/// Temporal decoding over windows. Every pair is copied into each window
/// containing its frame; queries and keys carry the learnable encoding of
/// the slot's offset inside its window, values do not. A pair's output is
/// taken from the earliest window that contains it.
pub fn temporal_decode(
    g: &mut Graph,
    b: &Binding,
    cfg: &PegConfig,
    spa: Var,
    frames: &[usize],
    windows: &[Range<usize>],
) -> Result<Var> {
    let mut slot_pair = Vec::new();
    let mut slot_offset = Vec::new();
    let mut slot_window = Vec::new();
    let mut first_slot = vec![None; frames.len()];
    for (w, range) in windows.iter().enumerate() {
        for (p, &f) in frames.iter().enumerate() {
            if range.contains(&f) {
                if first_slot[p].is_none() {
                    first_slot[p] = Some(slot_pair.len());
                }
                slot_pair.push(p);
                slot_offset.push(f - range.start);
                slot_window.push(w);
            }
        }
    }
    let pick: Vec<usize> = first_slot
        .iter()
        .enumerate()
        .map(|(p, s)| s.ok_or_else(|| Error::Contract(format!("pair {} is outside every window", p))))
        .collect::<Result<_>>()?;
    if slot_offset.iter().any(|&o| o >= cfg.eta) {
        return Err(Error::Contract("window longer than the temporal encoding table".into()));
    }
    let er = b.var("peg.er")?;
    let enc = g.gather_rows(er, &slot_offset)?;
    let mask = Mask::groups(&slot_window, &slot_window);
    let mut x = g.gather_rows(spa, &slot_pair)?;
    for l in 0..cfg.temporal_layers {
        let qk = g.add(x, enc)?;
        x = cfg.temporal(l).forward(g, b, qk, qk, x, Some(&mask))?;
    }
    Ok(g.gather_rows(x, &pick)?)
}
