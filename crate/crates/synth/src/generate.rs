//! Seeded long-tailed video scene-graph generator.
//!
//! A corpus is a function of `(config, seed)` only. The "world" (object
//! class centroids and predicate offsets) comes from one seed stream and each
//! video from its own stream keyed by video id, so a test corpus generated
//! with the same seed and a different `first_video_id` shares the world but
//! none of the videos.

use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::annotation::{BoundingBox, Corpus, CorpusHeader, FrameRecord, ObjectRecord, PairRecord, VideoAnnotation};
use crate::{GeneratorConfig, Result};

const WORLD_STREAM: u64 = 11;
const VIDEO_STREAM: u64 = 12;

/// Normalized Zipf weights `rank^(−s)` for ranks `1..=n`.
pub fn zipf_weights(n: usize, exponent: f64) -> Vec<f64> {
    let raw: Vec<f64> = (1..=n).map(|r| (r as f64).powf(-exponent)).collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|w| w / total).collect()
}

fn video_rng(seed: u64, video_id: u64) -> ChaCha8Rng {
    let mut parent = ChaCha8Rng::seed_from_u64(seed);
    parent.set_stream(VIDEO_STREAM);
    parent.set_word_pos(u128::from(video_id) * 4);
    let mut rng = ChaCha8Rng::seed_from_u64(parent.next_u64());
    rng.set_stream(VIDEO_STREAM);
    rng
}

fn normal(rng: &mut impl Rng) -> f64 {
    rng.sample::<f64, _>(StandardNormal)
}

struct World {
    object_centroids: Vec<Vec<f64>>,
    predicate_offsets: Vec<Vec<f64>>,
    zipf: WeightedIndex<f64>,
}

impl World {
    fn new(cfg: &GeneratorConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(WORLD_STREAM);
        let d = cfg.feature_dim;
        let object_centroids = (0..cfg.object_classes).map(|_| (0..d).map(|_| normal(&mut rng)).collect()).collect();
        let predicate_offsets = (0..cfg.predicate_classes)
            .map(|_| (0..d).map(|_| cfg.predicate_signal * normal(&mut rng)).collect())
            .collect();
        let zipf =
            WeightedIndex::new(zipf_weights(cfg.predicate_classes, cfg.zipf_exponent)).expect("positive weights");
        Self { object_centroids, predicate_offsets, zipf }
    }
}

struct Track {
    class: usize,
    center: [f64; 2],
    size: [f64; 2],
    velocity: [f64; 2],
    drift: Vec<f64>,
}

fn sample_labels(cfg: &GeneratorConfig, world: &World, rng: &mut impl Rng) -> Vec<usize> {
    let first = world.zipf.sample(rng);
    let mut labels = vec![first];
    if rng.gen_bool(cfg.multi_label_rate) {
        let second = world.zipf.sample(rng);
        if second != first {
            labels.push(second);
        }
    }
    labels.sort_unstable();
    labels
}

fn observe(cfg: &GeneratorConfig, labels: &[usize], rng: &mut impl Rng) -> Vec<usize> {
    let mut out = Vec::with_capacity(labels.len());
    for &l in labels {
        // Both draws are always taken so noise rates do not shift the stream.
        let dropped = rng.gen_bool(cfg.missing_rate);
        let flipped = rng.gen_bool(cfg.flip_rate);
        let replacement = rng.gen_range(0..cfg.predicate_classes.max(2) - 1);
        if dropped {
            continue;
        }
        if flipped && cfg.predicate_classes > 1 {
            out.push(if replacement >= l { replacement + 1 } else { replacement });
        } else {
            out.push(l);
        }
    }
    out.sort_unstable();
    out.dedup();
    out
}

fn clamp_box(b: BoundingBox) -> BoundingBox {
    let mut x = [b[0].min(b[2]), b[1].min(b[3]), b[0].max(b[2]), b[1].max(b[3])];
    for v in &mut x {
        *v = v.clamp(0.0, 1.0);
    }
    if x[2] - x[0] < 1e-3 {
        x[2] = (x[0] + 1e-3).min(1.0);
        x[0] = x[2] - 1e-3;
    }
    if x[3] - x[1] < 1e-3 {
        x[3] = (x[1] + 1e-3).min(1.0);
        x[1] = x[3] - 1e-3;
    }
    x
}

fn generate_video(cfg: &GeneratorConfig, world: &World, video_id: u64) -> VideoAnnotation {
    let mut rng = video_rng(cfg.seed, video_id);
    let d = cfg.feature_dim;
    let n = rng.gen_range(cfg.objects_min..=cfg.objects_max);
    let mut tracks: Vec<Track> = (0..n)
        .map(|i| {
            let class = if i == 0 { 0 } else { rng.gen_range(1..cfg.object_classes) };
            Track {
                class,
                center: [rng.gen_range(0.25..0.75), rng.gen_range(0.25..0.75)],
                size: [rng.gen_range(0.1..0.3), rng.gen_range(0.1..0.3)],
                velocity: [0.02 * normal(&mut rng), 0.02 * normal(&mut rng)],
                drift: vec![0.0; d],
            }
        })
        .collect();

    let pair_indices: Vec<(usize, usize)> = if cfg.all_pairs {
        (0..n).flat_map(|s| (0..n).filter(move |&o| o != s).map(move |o| (s, o))).collect()
    } else {
        (1..n).map(|o| (0, o)).collect()
    };
    let mut pair_labels: Vec<Vec<usize>> = pair_indices.iter().map(|_| sample_labels(cfg, world, &mut rng)).collect();

    let mut frames = Vec::with_capacity(cfg.frames);
    for t in 0..cfg.frames {
        if t > 0 {
            for labels in pair_labels.iter_mut() {
                if !rng.gen_bool(cfg.persistence) {
                    *labels = sample_labels(cfg, world, &mut rng);
                }
            }
        }
        let mut objects = Vec::with_capacity(n);
        for (i, track) in tracks.iter_mut().enumerate() {
            for k in 0..2 {
                track.center[k] = (track.center[k] + track.velocity[k] + 0.01 * normal(&mut rng)).clamp(0.1, 0.9);
            }
            for x in track.drift.iter_mut() {
                *x += cfg.drift_sigma * normal(&mut rng);
            }
            let blurred = rng.gen_bool(cfg.blur_prob);
            let feature: Vec<f64> = (0..d)
                .map(|k| {
                    let mut v =
                        world.object_centroids[track.class][k] + track.drift[k] + cfg.jitter_sigma * normal(&mut rng);
                    if blurred {
                        v += cfg.blur_sigma * normal(&mut rng);
                    }
                    v
                })
                .collect();
            let bbox = clamp_box([
                track.center[0] - track.size[0] / 2.0,
                track.center[1] - track.size[1] / 2.0,
                track.center[0] + track.size[0] / 2.0,
                track.center[1] + track.size[1] / 2.0,
            ]);
            let wrong = rng.gen_bool(cfg.detector_noise);
            let other = rng.gen_range(0..cfg.object_classes - 1);
            let detector_class = if wrong {
                if other >= track.class {
                    other + 1
                } else {
                    other
                }
            } else {
                track.class
            };
            let confidence = if wrong { rng.gen_range(0.3..0.7) } else { rng.gen_range(0.5..1.0) };
            let (w, h) = (bbox[2] - bbox[0], bbox[3] - bbox[1]);
            let j = cfg.box_jitter;
            let detector_box = clamp_box([
                bbox[0] + j * w * normal(&mut rng),
                bbox[1] + j * h * normal(&mut rng),
                bbox[2] + j * w * normal(&mut rng),
                bbox[3] + j * h * normal(&mut rng),
            ]);
            objects.push(ObjectRecord {
                track: i,
                gt_class: track.class,
                bbox,
                feature,
                detector_class,
                detector_box,
                confidence,
            });
        }
        let pairs = pair_indices
            .iter()
            .zip(&pair_labels)
            .map(|(&(s, o), labels)| {
                let union = (0..d)
                    .map(|k| {
                        let mut u = 0.5 * (objects[s].feature[k] + objects[o].feature[k]);
                        for &l in labels {
                            u += world.predicate_offsets[l][k];
                        }
                        u + cfg.union_sigma * normal(&mut rng)
                    })
                    .collect();
                let observed = observe(cfg, labels, &mut rng);
                PairRecord { subject: s, object: o, union, labels: labels.clone(), observed }
            })
            .collect();
        frames.push(FrameRecord { index: t, objects, pairs });
    }
    VideoAnnotation { video_id, frames }
}

/// Generates `config.videos` videos with ids starting at `first_video_id`.
pub fn generate(config: &GeneratorConfig) -> Result<Corpus> {
    config.validate()?;
    let world = World::new(config);
    let videos = (0..config.videos as u64).map(|i| generate_video(config, &world, config.first_video_id + i)).collect();
    Ok(Corpus {
        header: CorpusHeader::new(config.object_classes, config.predicate_classes, config.feature_dim),
        videos,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Error;

    fn small() -> GeneratorConfig {
        GeneratorConfig { videos: 5, feature_dim: 8, frames: 4, ..Default::default() }
    }

    #[test]
    fn zipf_weights_are_normalized_and_decreasing() {
        let w = zipf_weights(10, 1.5);
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(w.windows(2).all(|p| p[0] > p[1]));
        assert!((w[1] / w[0] - 2f64.powf(-1.5)).abs() < 1e-12);
    }

    #[test]
    fn same_seed_same_bytes() {
        let a = generate(&small()).unwrap().to_bytes();
        let b = generate(&small()).unwrap().to_bytes();
        assert_eq!(a, b);
        let c = generate(&GeneratorConfig { seed: 1, ..small() }).unwrap().to_bytes();
        assert_ne!(a, c);
    }

    #[test]
    fn noiseless_observation_equals_ground_truth() {
        let cfg = GeneratorConfig { missing_rate: 0.0, flip_rate: 0.0, ..small() };
        let corpus = generate(&cfg).unwrap();
        for v in &corpus.videos {
            for f in &v.frames {
                for p in &f.pairs {
                    assert_eq!(p.labels, p.observed);
                }
            }
        }
    }

    #[test]
    fn invariants_hold() {
        let cfg = GeneratorConfig { all_pairs: true, missing_rate: 0.5, flip_rate: 0.3, ..small() };
        let corpus = generate(&cfg).unwrap();
        for v in &corpus.videos {
            v.validate(&corpus.header).unwrap();
            assert_eq!(v.frames.len(), cfg.frames);
            for f in &v.frames {
                for o in &f.objects {
                    assert!(o.bbox.iter().all(|c| (0.0..=1.0).contains(c)));
                    assert!(o.bbox[0] < o.bbox[2] && o.bbox[1] < o.bbox[3]);
                    assert!((0.0..=1.0).contains(&o.confidence));
                }
            }
        }
    }

    #[test]
    fn shared_world_distinct_videos() {
        let train = generate(&small()).unwrap();
        let test = generate(&GeneratorConfig { first_video_id: 1000, ..small() }).unwrap();
        assert_eq!(test.videos[0].video_id, 1000);
        assert_ne!(train.videos[0].frames[0].objects[0].feature, test.videos[0].frames[0].objects[0].feature);
    }

    #[test]
    fn invalid_rate_is_a_config_error() {
        let cfg = GeneratorConfig { flip_rate: 1.5, ..small() };
        assert!(matches!(generate(&cfg), Err(Error::Config { field: "flip_rate", .. })));
    }
}
