//! Video scene-graph annotations and their JSON Lines container.
//!
//! File layout: the first line is a [`CorpusHeader`] record, every following
//! line is one [`VideoAnnotation`]. Floats are written in shortest
//! round-trip form, so `read(write(x)) == x` field for field.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub const FORMAT_NAME: &str = "dsgg-annotations";
pub const FORMAT_VERSION: u32 = 1;

/// Axis-aligned box `[x1, y1, x2, y2]` in normalized image coordinates.
pub type BoundingBox = [f64; 4];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusHeader {
    pub format: String,
    pub version: u32,
    pub object_classes: usize,
    pub predicate_classes: usize,
    pub feature_dim: usize,
}

impl CorpusHeader {
    pub fn new(object_classes: usize, predicate_classes: usize, feature_dim: usize) -> Self {
        Self {
            format: FORMAT_NAME.to_string(),
            version: FORMAT_VERSION,
            object_classes,
            predicate_classes,
            feature_dim,
        }
    }
}

/// One object instance in one frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectRecord {
    /// Persistent identity across frames (used only for evaluation of
    /// temporal consistency; the model never sees it).
    pub track: usize,
    pub gt_class: usize,
    #[serde(rename = "box")]
    pub bbox: BoundingBox,
    pub feature: Vec<f64>,
    pub detector_class: usize,
    pub detector_box: BoundingBox,
    pub confidence: f64,
}

/// A directed subject–object pair within one frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairRecord {
    pub subject: usize,
    pub object: usize,
    pub union: Vec<f64>,
    /// Ground-truth predicate set; never empty.
    pub labels: Vec<usize>,
    /// Annotated predicate set after missing/flip noise; may be empty.
    pub observed: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameRecord {
    pub index: usize,
    pub objects: Vec<ObjectRecord>,
    pub pairs: Vec<PairRecord>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VideoAnnotation {
    pub video_id: u64,
    pub frames: Vec<FrameRecord>,
}

impl VideoAnnotation {
    pub fn pair_count(&self) -> usize {
        self.frames.iter().map(|f| f.pairs.len()).sum()
    }

    pub fn object_count(&self) -> usize {
        self.frames.iter().map(|f| f.objects.len()).sum()
    }

    /// Checks index bounds and label-set invariants against `header`.
    pub fn validate(&self, header: &CorpusHeader) -> std::result::Result<(), String> {
        for frame in &self.frames {
            for o in &frame.objects {
                if o.gt_class >= header.object_classes || o.detector_class >= header.object_classes {
                    return Err(format!("frame {}: object class out of range", frame.index));
                }
                if o.feature.len() != header.feature_dim {
                    return Err(format!("frame {}: feature has {} dims", frame.index, o.feature.len()));
                }
            }
            for p in &frame.pairs {
                let n = frame.objects.len();
                if p.subject >= n || p.object >= n || p.subject == p.object {
                    return Err(format!("frame {}: pair ({}, {}) invalid", frame.index, p.subject, p.object));
                }
                if p.labels.is_empty() {
                    return Err(format!("frame {}: empty ground-truth predicate set", frame.index));
                }
                let bad = |s: &[usize]| s.iter().any(|&l| l >= header.predicate_classes);
                if bad(&p.labels) || bad(&p.observed) {
                    return Err(format!("frame {}: predicate class out of range", frame.index));
                }
                if p.union.len() != header.feature_dim {
                    return Err(format!("frame {}: union feature has {} dims", frame.index, p.union.len()));
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Corpus {
    pub header: CorpusHeader,
    pub videos: Vec<VideoAnnotation>,
}

/// Which predicate set of a pair to count.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LabelSource {
    GroundTruth,
    Observed,
}

impl Corpus {
    /// Number of pair-labels per predicate class.
    pub fn predicate_counts(&self, source: LabelSource) -> Vec<u64> {
        let mut counts = vec![0u64; self.header.predicate_classes];
        for v in &self.videos {
            for f in &v.frames {
                for p in &f.pairs {
                    let set = match source {
                        LabelSource::GroundTruth => &p.labels,
                        LabelSource::Observed => &p.observed,
                    };
                    for &l in set {
                        counts[l] += 1;
                    }
                }
            }
        }
        counts
    }

    pub fn to_writer(&self, w: impl Write) -> Result<()> {
        let mut w = BufWriter::new(w);
        serde_json::to_writer(&mut w, &self.header)?;
        w.write_all(b"\n")?;
        for v in &self.videos {
            serde_json::to_writer(&mut w, v)?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.to_writer(&mut buf).expect("writing to memory");
        buf
    }

    pub fn from_reader(r: impl BufRead) -> Result<Self> {
        let mut header: Option<CorpusHeader> = None;
        let mut videos = Vec::new();
        for (i, line) in r.lines().enumerate() {
            let line_no = i + 1;
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let parse_err = |e: serde_json::Error| Error::Parse { line: line_no, message: e.to_string() };
            match &header {
                None => {
                    let h: CorpusHeader = serde_json::from_str(&line).map_err(parse_err)?;
                    if h.format != FORMAT_NAME || h.version != FORMAT_VERSION {
                        return Err(Error::Parse {
                            line: line_no,
                            message: format!("unsupported format {} v{}", h.format, h.version),
                        });
                    }
                    header = Some(h);
                }
                Some(h) => {
                    let v: VideoAnnotation = serde_json::from_str(&line).map_err(parse_err)?;
                    v.validate(h).map_err(|message| Error::Parse { line: line_no, message })?;
                    videos.push(v);
                }
            }
        }
        let header = header.ok_or(Error::Parse { line: 1, message: "missing header record".into() })?;
        Ok(Self { header, videos })
    }
}

pub fn write_annotations(corpus: &Corpus, path: impl AsRef<Path>) -> Result<()> {
    corpus.to_writer(File::create(path)?)
}

pub fn read_annotations(path: impl AsRef<Path>) -> Result<Corpus> {
    Corpus::from_reader(BufReader::new(File::open(path)?))
}
