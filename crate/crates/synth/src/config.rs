use std::collections::BTreeMap;

use crate::{Error, Result};

/// Parameters of the synthetic corpus.
#[derive(Clone, Debug, PartialEq)]
pub struct GeneratorConfig {
    pub object_classes: usize,
    pub predicate_classes: usize,
    pub videos: usize,
    /// Id of the first generated video; lets train and test corpora share a
    /// world (same seed) without sharing videos.
    pub first_video_id: u64,
    pub frames: usize,
    pub objects_min: usize,
    pub objects_max: usize,
    pub zipf_exponent: f64,
    pub multi_label_rate: f64,
    pub missing_rate: f64,
    pub flip_rate: f64,
    /// Probability that a pair keeps its predicate set from one frame to the next.
    pub persistence: f64,
    pub feature_dim: usize,
    pub jitter_sigma: f64,
    pub drift_sigma: f64,
    pub blur_prob: f64,
    pub blur_sigma: f64,
    /// Scale of the per-predicate offset carried by union features.
    pub predicate_signal: f64,
    pub union_sigma: f64,
    /// Probability that the detector reports a wrong object class.
    pub detector_noise: f64,
    /// Detector box noise, as a fraction of box size.
    pub box_jitter: f64,
    /// Pair every ordered object couple instead of subject-centric pairs.
    pub all_pairs: bool,
    pub seed: u64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            object_classes: 8,
            predicate_classes: 12,
            videos: 200,
            first_video_id: 0,
            frames: 8,
            objects_min: 3,
            objects_max: 4,
            zipf_exponent: 1.5,
            multi_label_rate: 0.3,
            missing_rate: 0.1,
            flip_rate: 0.0,
            persistence: 0.8,
            feature_dim: 32,
            jitter_sigma: 0.3,
            drift_sigma: 0.05,
            blur_prob: 0.1,
            blur_sigma: 1.5,
            predicate_signal: 1.0,
            union_sigma: 1.0,
            detector_noise: 0.15,
            box_jitter: 0.1,
            all_pairs: false,
            seed: 0,
        }
    }
}

fn unit_rate(field: &'static str, v: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&v) {
        return Err(Error::Config { field, message: format!("{} is outside [0, 1]", v) });
    }
    Ok(())
}

fn non_negative(field: &'static str, v: f64) -> Result<()> {
    if !(v >= 0.0 && v.is_finite()) {
        return Err(Error::Config { field, message: format!("{} must be finite and non-negative", v) });
    }
    Ok(())
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        unit_rate("multi_label_rate", self.multi_label_rate)?;
        unit_rate("missing_rate", self.missing_rate)?;
        unit_rate("flip_rate", self.flip_rate)?;
        unit_rate("persistence", self.persistence)?;
        unit_rate("blur_prob", self.blur_prob)?;
        unit_rate("detector_noise", self.detector_noise)?;
        for (field, v) in [
            ("jitter_sigma", self.jitter_sigma),
            ("drift_sigma", self.drift_sigma),
            ("blur_sigma", self.blur_sigma),
            ("predicate_signal", self.predicate_signal),
            ("union_sigma", self.union_sigma),
            ("box_jitter", self.box_jitter),
        ] {
            non_negative(field, v)?;
        }
        if !(self.zipf_exponent > 0.0 && self.zipf_exponent.is_finite()) {
            return Err(Error::Config { field: "zipf_exponent", message: "must be > 0".into() });
        }
        if self.frames == 0 {
            return Err(Error::Config { field: "frames", message: "must be at least 1".into() });
        }
        if self.object_classes < 2 {
            return Err(Error::Config { field: "object_classes", message: "need a subject class and one more".into() });
        }
        if self.predicate_classes == 0 {
            return Err(Error::Config { field: "predicate_classes", message: "must be at least 1".into() });
        }
        if self.feature_dim == 0 {
            return Err(Error::Config { field: "feature_dim", message: "must be at least 1".into() });
        }
        if self.objects_min < 2 || self.objects_max < self.objects_min {
            return Err(Error::Config {
                field: "objects_min",
                message: format!(
                    "need 2 <= objects_min <= objects_max, got {}..{}",
                    self.objects_min, self.objects_max
                ),
            });
        }
        Ok(())
    }

    /// Applies `key = value` overrides on top of `self`.
    pub fn apply(&mut self, entries: &BTreeMap<String, String>) -> Result<()> {
        for (key, value) in entries {
            self.set(key, value)?;
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn parse<T: std::str::FromStr>(field: &'static str, v: &str) -> Result<T> {
            v.trim().parse().map_err(|_| Error::Config { field, message: format!("cannot parse `{}`", v) })
        }
        match key {
            "object_classes" => self.object_classes = parse("object_classes", value)?,
            "predicate_classes" => self.predicate_classes = parse("predicate_classes", value)?,
            "videos" => self.videos = parse("videos", value)?,
            "first_video_id" => self.first_video_id = parse("first_video_id", value)?,
            "frames" => self.frames = parse("frames", value)?,
            "objects_min" => self.objects_min = parse("objects_min", value)?,
            "objects_max" => self.objects_max = parse("objects_max", value)?,
            "zipf_exponent" => self.zipf_exponent = parse("zipf_exponent", value)?,
            "multi_label_rate" => self.multi_label_rate = parse("multi_label_rate", value)?,
            "missing_rate" => self.missing_rate = parse("missing_rate", value)?,
            "flip_rate" => self.flip_rate = parse("flip_rate", value)?,
            "persistence" => self.persistence = parse("persistence", value)?,
            "feature_dim" => self.feature_dim = parse("feature_dim", value)?,
            "jitter_sigma" => self.jitter_sigma = parse("jitter_sigma", value)?,
            "drift_sigma" => self.drift_sigma = parse("drift_sigma", value)?,
            "blur_prob" => self.blur_prob = parse("blur_prob", value)?,
            "blur_sigma" => self.blur_sigma = parse("blur_sigma", value)?,
            "predicate_signal" => self.predicate_signal = parse("predicate_signal", value)?,
            "union_sigma" => self.union_sigma = parse("union_sigma", value)?,
            "detector_noise" => self.detector_noise = parse("detector_noise", value)?,
            "box_jitter" => self.box_jitter = parse("box_jitter", value)?,
            "all_pairs" => self.all_pairs = parse("all_pairs", value)?,
            "seed" => self.seed = parse("seed", value)?,
            other => return Err(Error::Config { field: "config", message: format!("unknown key `{}`", other) }),
        }
        Ok(())
    }

    pub fn to_kv(&self) -> String {
        format!(
            "object_classes = {}\npredicate_classes = {}\nvideos = {}\nfirst_video_id = {}\nframes = {}\n\
             objects_min = {}\nobjects_max = {}\nzipf_exponent = {}\nmulti_label_rate = {}\nmissing_rate = {}\n\
             flip_rate = {}\npersistence = {}\nfeature_dim = {}\njitter_sigma = {}\ndrift_sigma = {}\n\
             blur_prob = {}\nblur_sigma = {}\npredicate_signal = {}\nunion_sigma = {}\ndetector_noise = {}\n\
             box_jitter = {}\nall_pairs = {}\nseed = {}\n",
            self.object_classes,
            self.predicate_classes,
            self.videos,
            self.first_video_id,
            self.frames,
            self.objects_min,
            self.objects_max,
            self.zipf_exponent,
            self.multi_label_rate,
            self.missing_rate,
            self.flip_rate,
            self.persistence,
            self.feature_dim,
            self.jitter_sigma,
            self.drift_sigma,
            self.blur_prob,
            self.blur_sigma,
            self.predicate_signal,
            self.union_sigma,
            self.detector_noise,
            self.box_jitter,
            self.all_pairs,
            self.seed,
        )
    }
}

/// Parses flat `key = value` text. `#` starts a comment; blank lines are
/// ignored. Later duplicates override earlier ones.
pub fn parse_kv(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Parse { line: i + 1, message: format!("expected `key = value`, got `{}`", line) })?;
        out.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(out)
}
