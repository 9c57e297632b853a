//! The full pipeline for one video: object sequences → classifier, pair
//! representations → spatial encoder → temporal decoder → optional memory
//! diffusion → predicate head.

use dsgg_autodiff::{seed, Binding, Checkpoint, Graph, ParamStore, Tensor, Var};
use dsgg_metrics::TaskMode;
use dsgg_synth::{BoundingBox, LabelSource, VideoAnnotation};

use crate::config::ModelConfig;
use crate::gmm::{self, GmmVars};
use crate::memory::{self, MemoryBank};
use crate::ospu::{self, ObjectRef};
use crate::peg::{self, PairSources};
use crate::{Error, Result};

/// One video flattened into model inputs. Objects and pairs of all frames
/// are concatenated in frame order.
#[derive(Clone, Debug)]
pub struct VideoBatch {
    pub video_id: u64,
    /// Annotation frame index of each frame position.
    pub frame_index: Vec<usize>,
    pub objects: Vec<ObjectRef>,
    /// `[N × D_feat]`.
    pub features: Tensor,
    pub gt_classes: Vec<usize>,
    pub tracks: Vec<usize>,
    /// Boxes the model sees: ground truth, or detector boxes in SGDET.
    pub boxes: Vec<BoundingBox>,
    pub gt_boxes: Vec<BoundingBox>,
    /// Frame position of each pair.
    pub pair_frames: Vec<usize>,
    pub subjects: Vec<usize>,
    pub pair_objects: Vec<usize>,
    /// `[P × D_feat]`.
    pub union: Tensor,
    /// Training label sets (possibly noisy) and their `[P × C_r]` 0/1 form.
    pub train_labels: Vec<Vec<usize>>,
    pub targets: Vec<f64>,
    /// Clean labels, used for evaluation only.
    pub gt_labels: Vec<Vec<usize>>,
}

impl VideoBatch {
    pub fn from_annotation(
        video: &VideoAnnotation,
        task: TaskMode,
        predicate_classes: usize,
        labels: LabelSource,
    ) -> Result<Self> {
        let mut b = VideoBatch {
            video_id: video.video_id,
            frame_index: Vec::new(),
            objects: Vec::new(),
            features: Tensor::zeros(&[0, 0]),
            gt_classes: Vec::new(),
            tracks: Vec::new(),
            boxes: Vec::new(),
            gt_boxes: Vec::new(),
            pair_frames: Vec::new(),
            subjects: Vec::new(),
            pair_objects: Vec::new(),
            union: Tensor::zeros(&[0, 0]),
            train_labels: Vec::new(),
            targets: Vec::new(),
            gt_labels: Vec::new(),
        };
        let mut features = Vec::new();
        let mut union = Vec::new();
        let (mut fdim, mut udim) = (0, 0);
        for (t, frame) in video.frames.iter().enumerate() {
            b.frame_index.push(frame.index);
            let offset = b.objects.len();
            for o in &frame.objects {
                let class = match task {
                    TaskMode::PredCls => o.gt_class,
                    TaskMode::SgCls | TaskMode::SgDet => o.detector_class,
                };
                b.objects.push(ObjectRef { frame: t, class, confidence: o.confidence });
                fdim = o.feature.len();
                features.extend_from_slice(&o.feature);
                b.gt_classes.push(o.gt_class);
                b.tracks.push(o.track);
                b.boxes.push(if task == TaskMode::SgDet { o.detector_box } else { o.bbox });
                b.gt_boxes.push(o.bbox);
            }
            for p in &frame.pairs {
                if p.subject >= frame.objects.len() || p.object >= frame.objects.len() {
                    return Err(Error::Contract(format!(
                        "video {} frame {}: pair index out of range",
                        video.video_id, t
                    )));
                }
                b.pair_frames.push(t);
                b.subjects.push(offset + p.subject);
                b.pair_objects.push(offset + p.object);
                udim = p.union.len();
                union.extend_from_slice(&p.union);
                let train = match labels {
                    LabelSource::GroundTruth => p.labels.clone(),
                    LabelSource::Observed => p.observed.clone(),
                };
                let mut row = vec![0.0; predicate_classes];
                for &l in &train {
                    *row.get_mut(l).ok_or_else(|| Error::Contract(format!("predicate {} out of range", l)))? = 1.0;
                }
                b.targets.extend(row);
                b.train_labels.push(train);
                b.gt_labels.push(p.labels.clone());
            }
        }
        b.features = Tensor::matrix(b.objects.len(), fdim, features)?;
        b.union = Tensor::matrix(b.subjects.len(), udim, union)?;
        Ok(b)
    }

    pub fn pairs(&self) -> usize {
        self.subjects.len()
    }

    /// `[P × 8]`: subject box then object box.
    pub fn pair_boxes(&self) -> Tensor {
        let data = self
            .subjects
            .iter()
            .zip(&self.pair_objects)
            .flat_map(|(&s, &o)| self.boxes[s].iter().chain(self.boxes[o].iter()).copied().collect::<Vec<_>>())
            .collect();
        Tensor::matrix(self.pairs(), 8, data).expect("sized")
    }
}

/// What a forward pass is for.
#[derive(Clone, Copy, Debug)]
pub enum Pass<'a> {
    /// Training: losses are built; `eps` feeds the mixture head and `bank`
    /// (when present and the unit is on) drives memory diffusion.
    Train { eps: Option<&'a Tensor>, bank: Option<&'a MemoryBank> },
    /// Inference: no sampling, no memory, no losses.
    Infer,
}

#[derive(Clone, Copy, Debug)]
pub struct Losses {
    pub total: Var,
    pub predicate: Option<Var>,
    pub object: Var,
    pub intra: Option<Var>,
}

#[derive(Clone, Debug)]
pub struct Forward {
    pub object_logits: Var,
    pub object_embeddings: Var,
    /// Classes used for the semantic embeddings.
    pub semantic_classes: Vec<usize>,
    /// Temporal decoder output, `[P × D_rel]`; `None` without pairs.
    pub r_tem: Option<Var>,
    /// Head input after optional memory diffusion.
    pub r_hat: Option<Var>,
    /// Predicate scores `[P × C_r]` in (0, 1).
    pub scores: Option<Var>,
    pub gmm: Option<GmmVars>,
    pub losses: Option<Losses>,
}

/// Row-wise argmax, ties to the lowest index.
pub fn argmax_rows(t: &Tensor) -> Vec<usize> {
    (0..t.rows())
        .map(|r| {
            let row = t.row(r);
            let mut best = 0;
            for (i, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = i;
                }
            }
            best
        })
        .collect()
}

#[derive(Clone, Debug)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParamStore,
}

impl Model {
    /// Initializes every parameter from the init stream of `seed`. The
    /// memory unit is initialized last so switching it off leaves every
    /// other initial weight unchanged.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = seed::stream(seed, seed::streams::INIT);
        let mut params = ParamStore::new();
        config.ospu().init(&mut params, &mut rng);
        config.peg().init(&mut params, &mut rng);
        if config.toggles.gmm {
            config.gmm().init(&mut params, &mut rng);
        } else {
            gmm::plain_init(&mut params, config.rel_dim(), config.predicate_classes, &mut rng);
        }
        if config.toggles.mdu {
            memory::init_mdu(&mut params, config.rel_dim(), &mut rng);
        }
        Ok(Self { config, params })
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::new(self.params.clone());
        ck.meta = self.config.to_meta();
        ck
    }

    pub fn from_checkpoint(ck: Checkpoint) -> Result<Self> {
        let config = ModelConfig::from_meta(&ck.meta)?;
        let fresh = Model::init(config.clone(), 0)?;
        for (name, t) in fresh.params.iter() {
            match ck.params.get(name) {
                Some(c) if c.shape() == t.shape() => {}
                _ => {
                    return Err(Error::Config {
                        field: "checkpoint",
                        message: format!("parameter `{}` missing or misshaped", name),
                    })
                }
            }
        }
        if ck.params.len() != fresh.params.len() {
            return Err(Error::Config { field: "checkpoint", message: "unexpected parameters".into() });
        }
        Ok(Self { config, params: ck.params })
    }

    pub fn forward(&self, g: &mut Graph, b: &Binding, batch: &VideoBatch, pass: Pass) -> Result<Forward> {
        let cfg = &self.config;
        if batch.objects.is_empty() {
            return Err(Error::Contract(format!("video {} has no objects", batch.video_id)));
        }
        let features = g.constant(batch.features.clone());
        let seqs = ospu::build_sequences(&batch.objects);
        let ocfg = cfg.ospu();
        let out = ospu::encode_and_classify(g, b, &ocfg, features, &batch.objects, &seqs, cfg.toggles.ospu)?;
        let semantic_classes = match cfg.task {
            TaskMode::PredCls => batch.gt_classes.clone(),
            TaskMode::SgCls | TaskMode::SgDet => argmax_rows(g.value(out.logits)),
        };

        let mut fwd = Forward {
            object_logits: out.logits,
            object_embeddings: out.embeddings,
            semantic_classes,
            r_tem: None,
            r_hat: None,
            scores: None,
            gmm: None,
            losses: None,
        };
        let mut train_eps = None;
        if batch.pairs() > 0 {
            let pcfg = cfg.peg();
            let union = g.constant(batch.union.clone());
            let parts = peg::build_pair_input(
                g,
                b,
                &pcfg,
                &PairSources {
                    features,
                    subjects: &batch.subjects,
                    objects: &batch.pair_objects,
                    boxes: batch.pair_boxes(),
                    union,
                    classes: &fwd.semantic_classes,
                },
            )?;
            let spa = peg::spatial_encode(g, b, &pcfg, parts.rel, &batch.pair_frames)?;
            let windows = peg::build_windows(batch.frame_index.len(), pcfg.eta, pcfg.stride)?;
            let r_tem = peg::temporal_decode(g, b, &pcfg, spa, &batch.pair_frames, &windows)?;
            let r_hat = match pass {
                Pass::Train { bank: Some(bank), .. } if cfg.toggles.mdu => {
                    memory::memory_diffuse(g, b, r_tem, bank, cfg.lambda)?
                }
                _ => r_tem,
            };
            fwd.r_tem = Some(r_tem);
            fwd.r_hat = Some(r_hat);
            if cfg.toggles.gmm {
                let gcfg = cfg.gmm();
                let vars = gmm::gmm_params(g, b, &gcfg, r_hat)?;
                fwd.scores = Some(match pass {
                    Pass::Train { eps: Some(eps), .. } => {
                        train_eps = Some(eps);
                        gmm::train_scores(g, &gcfg, &vars, eps)?.1
                    }
                    _ => gmm::infer_scores(g, &gcfg, &vars)?,
                });
                fwd.gmm = Some(vars);
            } else {
                fwd.scores = Some(gmm::plain_scores(g, b, r_hat)?);
            }
        }

        if let Pass::Train { .. } = pass {
            let _ = train_eps;
            let labels: Vec<Option<usize>> = batch.gt_classes.iter().map(|&c| Some(c)).collect();
            let object = g.cross_entropy(fwd.object_logits, &labels)?;
            let mut total = object;
            let intra = if cfg.toggles.intra {
                let l = ospu::intra_contrastive(g, fwd.object_embeddings, &batch.gt_classes)?;
                total = g.add(total, l)?;
                Some(l)
            } else {
                None
            };
            let predicate = match fwd.scores {
                Some(s) => {
                    let l = gmm::predicate_loss(g, s, &batch.targets)?;
                    total = g.add(l, total)?;
                    Some(l)
                }
                None => None,
            };
            fwd.losses = Some(Losses { total, predicate, object, intra });
        }
        Ok(fwd)
    }

    /// Temporal decoder output of every pair, with frozen weights and the
    /// memory unit bypassed. Feeds memory bank construction.
    pub fn embed_pairs(&self, batch: &VideoBatch) -> Result<Option<Tensor>> {
        let mut g = Graph::new();
        let b = self.params.bind_frozen(&mut g);
        let f = self.forward(&mut g, &b, batch, Pass::Infer)?;
        Ok(f.r_tem.map(|v| g.value(v).clone()))
    }
}

/// Prototype bank for `epoch` from the current weights: every training pair
/// embedding contributes to each class of its training label set.
pub fn compute_memory_bank(model: &Model, batches: &[VideoBatch], epoch: usize) -> Result<MemoryBank> {
    let mut builder = memory::BankBuilder::new(model.config.predicate_classes, model.config.rel_dim());
    for batch in batches {
        if let Some(emb) = model.embed_pairs(batch)? {
            for (p, labels) in batch.train_labels.iter().enumerate() {
                builder.add(emb.row(p), labels)?;
            }
        }
    }
    builder.finish(epoch)
}
