use std::io::Write;

use dsgg_synth::{generate, read_annotations, write_annotations, zipf_weights, Error, GeneratorConfig, LabelSource};
use proptest::prelude::*;
use sha2::{Digest, Sha256};
use statrs::distribution::{ChiSquared, ContinuousCDF};

fn tiny(videos: usize) -> GeneratorConfig {
    GeneratorConfig { videos, frames: 3, feature_dim: 4, ..Default::default() }
}

#[test]
fn zipf_frequencies_pass_chi_square() {
    // One frame per video and single labels, so every pair-label is an
    // independent draw from the class distribution.
    let cfg = GeneratorConfig {
        predicate_classes: 10,
        zipf_exponent: 1.5,
        videos: 4200,
        frames: 1,
        multi_label_rate: 0.0,
        feature_dim: 2,
        seed: 7,
        ..Default::default()
    };
    let corpus = generate(&cfg).unwrap();
    let counts = corpus.predicate_counts(LabelSource::GroundTruth);
    let n: u64 = counts.iter().sum();
    assert!(n >= 10_000, "only {} labels", n);
    let expected = zipf_weights(10, 1.5);
    let stat: f64 = counts
        .iter()
        .zip(&expected)
        .map(|(&c, &p)| {
            let e = p * n as f64;
            (c as f64 - e).powi(2) / e
        })
        .sum();
    let p_value = 1.0 - ChiSquared::new(9.0).unwrap().cdf(stat);
    assert!(p_value > 0.01, "chi2 = {}, p = {}", stat, p_value);
}

#[test]
fn long_tail_histogram_is_monotone() {
    // Persistence repeats labels across frames, so single-frame videos give
    // the most independent draws per label.
    let cfg = GeneratorConfig { videos: 40_000, frames: 1, feature_dim: 1, ..Default::default() };
    let counts = generate(&cfg).unwrap().predicate_counts(LabelSource::GroundTruth);
    assert!(counts.iter().sum::<u64>() >= 10_000);
    assert!(counts.windows(2).all(|w| w[0] >= w[1]), "{:?}", counts);
}

#[test]
fn round_trip_is_field_exact() {
    let corpus = generate(&tiny(3)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("toy.jsonl");
    write_annotations(&corpus, &path).unwrap();
    assert_eq!(read_annotations(&path).unwrap(), corpus);
}

#[test]
fn large_round_trip_is_hash_identical() {
    let corpus = generate(&GeneratorConfig { videos: 100, feature_dim: 16, ..Default::default() }).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("corpus.jsonl");
    write_annotations(&corpus, &path).unwrap();
    let first = Sha256::digest(std::fs::read(&path).unwrap());
    let back = read_annotations(&path).unwrap();
    let again = Sha256::digest(back.to_bytes());
    assert_eq!(first, again);
    assert_eq!(back.predicate_counts(LabelSource::GroundTruth), corpus.predicate_counts(LabelSource::GroundTruth));
    assert_eq!(back.predicate_counts(LabelSource::Observed), corpus.predicate_counts(LabelSource::Observed));
}

#[test]
fn truncated_file_reports_line() {
    let bytes = generate(&tiny(3)).unwrap().to_bytes();
    let text = String::from_utf8(bytes).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("cut.jsonl");
    let mut f = std::fs::File::create(&path).unwrap();
    writeln!(f, "{}", lines[0]).unwrap();
    writeln!(f, "{}", lines[1]).unwrap();
    write!(f, "{}", &lines[2][..lines[2].len() / 2]).unwrap();
    drop(f);
    match read_annotations(&path) {
        Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
        other => panic!("expected parse error, got {:?}", other.map(|c| c.videos.len())),
    }
}

#[test]
fn missing_header_is_rejected() {
    let bytes = generate(&tiny(1)).unwrap().to_bytes();
    let text = String::from_utf8(bytes).unwrap();
    let body = text.lines().nth(1).unwrap();
    let err = dsgg_synth::Corpus::from_reader(body.as_bytes()).unwrap_err();
    assert!(matches!(err, Error::Parse { line: 1, .. }));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn generated_corpora_are_valid_and_reproducible(
        seed in 0u64..1000, missing in 0.0f64..1.0, flip in 0.0f64..1.0, multi in 0.0f64..1.0,
        all_pairs in any::<bool>(),
    ) {
        let cfg = GeneratorConfig {
            seed, missing_rate: missing, flip_rate: flip, multi_label_rate: multi, all_pairs,
            ..tiny(4)
        };
        let a = generate(&cfg).unwrap();
        for v in &a.videos {
            prop_assert!(v.validate(&a.header).is_ok());
            for f in &v.frames {
                for p in &f.pairs {
                    prop_assert!(!p.labels.is_empty());
                    prop_assert!(p.labels.windows(2).all(|w| w[0] < w[1]));
                }
            }
        }
        prop_assert_eq!(a.to_bytes(), generate(&cfg).unwrap().to_bytes());
    }
}
