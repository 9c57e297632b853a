//! Run configuration: model shape, ablation toggles and training schedule.
//!
//! Configuration is flat `key = value` text. [`RunConfig::set`] accepts the
//! same keys the text format uses, so file values and command-line flags go
//! through one code path.

use std::collections::BTreeMap;

use dsgg_metrics::{Pooling, TaskMode};
use dsgg_synth::CorpusHeader;

use crate::gmm::GmmConfig;
use crate::ospu::OspuConfig;
use crate::peg::PegConfig;
use crate::{Error, Result};

/// Which model components are active.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Toggles {
    /// Memory diffusion during training (epoch 2 onwards).
    pub mdu: bool,
    /// Mixture head; off means a plain sigmoid classifier.
    pub gmm: bool,
    /// Sequence encoder across frames; off means a per-frame classifier
    /// with identical parameters.
    pub ospu: bool,
    /// Intra-video contrastive loss.
    pub intra: bool,
}

impl Toggles {
    pub const ALL_ON: Toggles = Toggles { mdu: true, gmm: true, ospu: true, intra: true };
    pub const ALL_OFF: Toggles = Toggles { mdu: false, gmm: false, ospu: false, intra: false };
}

impl Default for Toggles {
    fn default() -> Self {
        Toggles::ALL_ON
    }
}

pub fn default_lambda(task: TaskMode) -> f64 {
    match task {
        TaskMode::SgCls => 0.3,
        TaskMode::PredCls | TaskMode::SgDet => 0.5,
    }
}

pub fn default_components(task: TaskMode) -> usize {
    match task {
        TaskMode::PredCls => 6,
        TaskMode::SgCls | TaskMode::SgDet => 4,
    }
}

/// Fully resolved model shape.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub task: TaskMode,
    pub object_classes: usize,
    pub predicate_classes: usize,
    pub feature_dim: usize,
    pub d_v: usize,
    pub d_u: usize,
    pub d_s: usize,
    pub heads: usize,
    /// Encoder FFN hidden width as a multiple of the encoder dim.
    pub ffn_mult: usize,
    pub seq_layers: usize,
    pub spatial_layers: usize,
    pub temporal_layers: usize,
    pub eta: usize,
    pub stride: usize,
    pub gmm_k: usize,
    pub lambda: f64,
    pub toggles: Toggles,
}

impl ModelConfig {
    pub fn rel_dim(&self) -> usize {
        self.peg().rel_dim()
    }

    pub fn ospu(&self) -> OspuConfig {
        OspuConfig {
            feature_dim: self.feature_dim,
            object_classes: self.object_classes,
            heads: self.heads,
            layers: self.seq_layers,
            ffn_hidden: self.ffn_mult * self.feature_dim,
            classifier_hidden: self.feature_dim,
        }
    }

    pub fn peg(&self) -> PegConfig {
        let rel = 2 * self.d_v + self.d_u + 2 * self.d_s;
        PegConfig {
            feature_dim: self.feature_dim,
            object_classes: self.object_classes,
            d_v: self.d_v,
            d_u: self.d_u,
            d_s: self.d_s,
            heads: self.heads,
            spatial_layers: self.spatial_layers,
            temporal_layers: self.temporal_layers,
            ffn_hidden: self.ffn_mult * rel,
            eta: self.eta,
            stride: self.stride,
        }
    }

    pub fn gmm(&self) -> GmmConfig {
        GmmConfig { rel_dim: self.rel_dim(), classes: self.predicate_classes, components: self.gmm_k }
    }

    pub fn validate(&self) -> Result<()> {
        let cfg = |field: &'static str, message: String| Err(Error::Config { field, message });
        if self.feature_dim % 2 != 0 {
            return cfg("feature_dim", format!("{} must be even for position tables", self.feature_dim));
        }
        if self.heads == 0 || self.feature_dim % self.heads != 0 || self.rel_dim() % self.heads != 0 {
            return cfg(
                "heads",
                format!("{} must divide feature_dim {} and D_rel {}", self.heads, self.feature_dim, self.rel_dim()),
            );
        }
        if self.eta == 0 {
            return cfg("eta", "must be at least 1".into());
        }
        if self.stride == 0 || self.stride > self.eta {
            return cfg("stride", format!("{} must be in 1..=eta", self.stride));
        }
        if self.gmm_k == 0 {
            return cfg("gmm_k", "must be at least 1".into());
        }
        if self.object_classes == 0 || self.predicate_classes == 0 {
            return cfg("classes", "need at least one object and one predicate class".into());
        }
        crate::memory::check_lambda(self.lambda)
    }

    /// Key/value form stored in checkpoints.
    pub fn to_meta(&self) -> BTreeMap<String, String> {
        let t = &self.toggles;
        [
            ("task", self.task.name().to_string()),
            ("object_classes", self.object_classes.to_string()),
            ("predicate_classes", self.predicate_classes.to_string()),
            ("feature_dim", self.feature_dim.to_string()),
            ("d_v", self.d_v.to_string()),
            ("d_u", self.d_u.to_string()),
            ("d_s", self.d_s.to_string()),
            ("heads", self.heads.to_string()),
            ("ffn_mult", self.ffn_mult.to_string()),
            ("seq_layers", self.seq_layers.to_string()),
            ("spatial_layers", self.spatial_layers.to_string()),
            ("temporal_layers", self.temporal_layers.to_string()),
            ("eta", self.eta.to_string()),
            ("stride", self.stride.to_string()),
            ("gmm_k", self.gmm_k.to_string()),
            ("lambda", self.lambda.to_string()),
            ("mdu", t.mdu.to_string()),
            ("gmm", t.gmm.to_string()),
            ("ospu", t.ospu.to_string()),
            ("intra", t.intra.to_string()),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
    }

    pub fn from_meta(meta: &BTreeMap<String, String>) -> Result<Self> {
        fn get<T: std::str::FromStr>(meta: &BTreeMap<String, String>, key: &'static str) -> Result<T> {
            meta.get(key)
                .ok_or_else(|| Error::Config { field: key, message: "missing from checkpoint".into() })?
                .parse()
                .map_err(|_| Error::Config { field: key, message: "unparsable checkpoint value".into() })
        }
        let task: String = get(meta, "task")?;
        let cfg = ModelConfig {
            task: task.parse().map_err(|_| Error::Config { field: "task", message: task.clone() })?,
            object_classes: get(meta, "object_classes")?,
            predicate_classes: get(meta, "predicate_classes")?,
            feature_dim: get(meta, "feature_dim")?,
            d_v: get(meta, "d_v")?,
            d_u: get(meta, "d_u")?,
            d_s: get(meta, "d_s")?,
            heads: get(meta, "heads")?,
            ffn_mult: get(meta, "ffn_mult")?,
            seq_layers: get(meta, "seq_layers")?,
            spatial_layers: get(meta, "spatial_layers")?,
            temporal_layers: get(meta, "temporal_layers")?,
            eta: get(meta, "eta")?,
            stride: get(meta, "stride")?,
            gmm_k: get(meta, "gmm_k")?,
            lambda: get(meta, "lambda")?,
            toggles: Toggles {
                mdu: get(meta, "mdu")?,
                gmm: get(meta, "gmm")?,
                ospu: get(meta, "ospu")?,
                intra: get(meta, "intra")?,
            },
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Training schedule.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub seed: u64,
    /// Epochs without sufficient improvement before the lr is halved.
    pub plateau_patience: usize,
    pub plateau_min_delta: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { epochs: 10, lr: 1e-5, weight_decay: 1e-4, seed: 0, plateau_patience: 2, plateau_min_delta: 1e-4 }
    }
}

/// Everything a run needs besides the data: user-facing knobs with
/// task-dependent defaults left unresolved until the task is known.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub task: TaskMode,
    pub d_v: usize,
    pub d_u: usize,
    pub d_s: usize,
    pub heads: usize,
    pub ffn_mult: usize,
    pub seq_layers: usize,
    pub spatial_layers: usize,
    pub temporal_layers: usize,
    pub eta: usize,
    /// Defaults to `eta` (non-overlapping windows).
    pub stride: Option<usize>,
    /// Defaults to the task's value.
    pub gmm_k: Option<usize>,
    /// Defaults to the task's value.
    pub lambda: Option<f64>,
    pub toggles: Toggles,
    pub train: TrainConfig,
    pub pooling: Pooling,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            task: TaskMode::PredCls,
            d_v: 32,
            d_u: 32,
            d_s: 16,
            heads: 8,
            ffn_mult: 2,
            seq_layers: 1,
            spatial_layers: 1,
            temporal_layers: 1,
            eta: 2,
            stride: None,
            gmm_k: None,
            lambda: None,
            toggles: Toggles::ALL_ON,
            train: TrainConfig::default(),
            pooling: Pooling::Pooled,
        }
    }
}

fn parse<T: std::str::FromStr>(field: &'static str, v: &str) -> Result<T> {
    v.trim().parse().map_err(|_| Error::Config { field, message: format!("cannot parse `{}`", v) })
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "task" => {
                self.task = value
                    .parse()
                    .map_err(|_| Error::Config { field: "task", message: format!("unknown task `{}`", value) })?
            }
            "d_v" => self.d_v = parse("d_v", value)?,
            "d_u" => self.d_u = parse("d_u", value)?,
            "d_s" => self.d_s = parse("d_s", value)?,
            "heads" => self.heads = parse("heads", value)?,
            "ffn_mult" => self.ffn_mult = parse("ffn_mult", value)?,
            "seq_layers" => self.seq_layers = parse("seq_layers", value)?,
            "spatial_layers" => self.spatial_layers = parse("spatial_layers", value)?,
            "temporal_layers" => self.temporal_layers = parse("temporal_layers", value)?,
            "eta" => self.eta = parse("eta", value)?,
            "stride" => self.stride = Some(parse("stride", value)?),
            "gmm_k" => self.gmm_k = Some(parse("gmm_k", value)?),
            "lambda" => self.lambda = Some(parse("lambda", value)?),
            "mdu" => self.toggles.mdu = parse("mdu", value)?,
            "gmm" => self.toggles.gmm = parse("gmm", value)?,
            "ospu" => self.toggles.ospu = parse("ospu", value)?,
            "intra" => self.toggles.intra = parse("intra", value)?,
            "epochs" => self.train.epochs = parse("epochs", value)?,
            "lr" => self.train.lr = parse("lr", value)?,
            "weight_decay" => self.train.weight_decay = parse("weight_decay", value)?,
            "seed" => self.train.seed = parse("seed", value)?,
            "plateau_patience" => self.train.plateau_patience = parse("plateau_patience", value)?,
            "plateau_min_delta" => self.train.plateau_min_delta = parse("plateau_min_delta", value)?,
            "pooling" => {
                self.pooling = match value.trim() {
                    "pooled" => Pooling::Pooled,
                    "per_frame" => Pooling::PerFrame,
                    other => {
                        return Err(Error::Config { field: "pooling", message: format!("unknown pooling `{}`", other) })
                    }
                }
            }
            other => return Err(Error::Config { field: "config", message: format!("unknown key `{}`", other) }),
        }
        Ok(())
    }

    pub fn apply(&mut self, entries: &BTreeMap<String, String>) -> Result<()> {
        for (k, v) in entries {
            self.set(k, v)?;
        }
        Ok(())
    }

    /// Text form accepted by [`RunConfig::set`]; unresolved task defaults
    /// are left out.
    pub fn to_kv(&self) -> String {
        let t = &self.train;
        let mut s = format!(
            "task = {}\nd_v = {}\nd_u = {}\nd_s = {}\nheads = {}\nffn_mult = {}\nseq_layers = {}\n\
             spatial_layers = {}\ntemporal_layers = {}\neta = {}\n",
            self.task.name(),
            self.d_v,
            self.d_u,
            self.d_s,
            self.heads,
            self.ffn_mult,
            self.seq_layers,
            self.spatial_layers,
            self.temporal_layers,
            self.eta
        );
        for (k, v) in [("stride", self.stride.map(|x| x.to_string())), ("gmm_k", self.gmm_k.map(|x| x.to_string()))] {
            if let Some(v) = v {
                s += &format!("{} = {}\n", k, v);
            }
        }
        if let Some(l) = self.lambda {
            s += &format!("lambda = {}\n", l);
        }
        let g = &self.toggles;
        s += &format!(
            "mdu = {}\ngmm = {}\nospu = {}\nintra = {}\nepochs = {}\nlr = {}\nweight_decay = {}\nseed = {}\n\
             plateau_patience = {}\nplateau_min_delta = {}\npooling = {}\n",
            g.mdu,
            g.gmm,
            g.ospu,
            g.intra,
            t.epochs,
            t.lr,
            t.weight_decay,
            t.seed,
            t.plateau_patience,
            t.plateau_min_delta,
            match self.pooling {
                Pooling::Pooled => "pooled",
                Pooling::PerFrame => "per_frame",
            }
        );
        s
    }

    /// Resolves defaults against the data's class counts and feature dim.
    pub fn model_config(&self, header: &CorpusHeader) -> Result<ModelConfig> {
        let cfg = ModelConfig {
            task: self.task,
            object_classes: header.object_classes,
            predicate_classes: header.predicate_classes,
            feature_dim: header.feature_dim,
            d_v: self.d_v,
            d_u: self.d_u,
            d_s: self.d_s,
            heads: self.heads,
            ffn_mult: self.ffn_mult,
            seq_layers: self.seq_layers,
            spatial_layers: self.spatial_layers,
            temporal_layers: self.temporal_layers,
            eta: self.eta,
            stride: self.stride.unwrap_or(self.eta),
            gmm_k: self.gmm_k.unwrap_or_else(|| default_components(self.task)),
            lambda: self.lambda.unwrap_or_else(|| default_lambda(self.task)),
            toggles: self.toggles,
        };
        cfg.validate()?;
        self.validate_train()?;
        Ok(cfg)
    }

    pub fn validate_train(&self) -> Result<()> {
        if !(self.train.lr > 0.0 && self.train.lr.is_finite()) {
            return Err(Error::Config { field: "lr", message: format!("{} must be positive", self.train.lr) });
        }
        if !(self.train.weight_decay >= 0.0) {
            return Err(Error::Config { field: "weight_decay", message: "must be non-negative".into() });
        }
        Ok(())
    }
}
