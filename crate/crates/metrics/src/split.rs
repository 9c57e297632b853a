use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Bucket {
    Head,
    Body,
    Tail,
}

/// How predicate classes are bucketed by training-sample count.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Thresholds {
    /// `count >= head_min` is HEAD, `body_min <= count < head_min` is BODY,
    /// anything smaller is TAIL.
    Absolute { head_min: u64, body_min: u64 },
    /// Classes sorted by count (descending, ties by class index): the first
    /// `round(head * C)` are HEAD, the next `round(body * C)` BODY, the rest
    /// TAIL.
    Quantile { head: f64, body: f64 },
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds::Quantile { head: 0.2, body: 0.5 }
    }
}

impl Thresholds {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Thresholds::Absolute { head_min, body_min } if !(head_min > body_min && body_min > 0) => {
                Err(Error::Contract(format!("need head_min > body_min > 0, got {} and {}", head_min, body_min)))
            }
            Thresholds::Quantile { head, body } if !(head >= 0.0 && body >= 0.0 && head + body <= 1.0) => {
                Err(Error::Contract(format!(
                    "quantile fractions {} and {} must be non-negative and sum to <= 1",
                    head, body
                )))
            }
            _ => Ok(()),
        }
    }

    pub fn assign(&self, counts: &[u64]) -> Result<Vec<Bucket>> {
        self.validate()?;
        Ok(match *self {
            Thresholds::Absolute { head_min, body_min } => counts
                .iter()
                .map(|&c| {
                    if c >= head_min {
                        Bucket::Head
                    } else if c >= body_min {
                        Bucket::Body
                    } else {
                        Bucket::Tail
                    }
                })
                .collect(),
            Thresholds::Quantile { head, body } => {
                let n = counts.len();
                let n_head = (head * n as f64).round() as usize;
                let n_body = ((body * n as f64).round() as usize).min(n - n_head.min(n));
                let mut order: Vec<usize> = (0..n).collect();
                order.sort_by(|&a, &b| counts[b].cmp(&counts[a]).then(a.cmp(&b)));
                let mut out = vec![Bucket::Tail; n];
                for (rank, &c) in order.iter().enumerate() {
                    if rank < n_head {
                        out[c] = Bucket::Head;
                    } else if rank < n_head + n_body {
                        out[c] = Bucket::Body;
                    }
                }
                out
            }
        })
    }
}

/// Mean recall per bucket. A bucket with no class that has a recall value is
/// `None` (absent), not zero.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitReport {
    pub buckets: Vec<Bucket>,
    pub head: Option<f64>,
    pub body: Option<f64>,
    pub tail: Option<f64>,
}

impl SplitReport {
    pub fn get(&self, bucket: Bucket) -> Option<f64> {
        match bucket {
            Bucket::Head => self.head,
            Bucket::Body => self.body,
            Bucket::Tail => self.tail,
        }
    }
}

/// Buckets classes by `train_counts` and averages `recalls` within each
/// bucket. Classes whose recall is `None` (no test ground truth) are skipped.
pub fn split_report(recalls: &[Option<f64>], train_counts: &[u64], thresholds: &Thresholds) -> Result<SplitReport> {
    if recalls.len() != train_counts.len() {
        return Err(Error::Contract(format!(
            "{} recall values but {} class counts",
            recalls.len(),
            train_counts.len()
        )));
    }
    let buckets = thresholds.assign(train_counts)?;
    let mean = |b: Bucket| {
        let vals: Vec<f64> = recalls.iter().zip(&buckets).filter(|(_, &x)| x == b).filter_map(|(r, _)| *r).collect();
        (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    };
    Ok(SplitReport { head: mean(Bucket::Head), body: mean(Bucket::Body), tail: mean(Bucket::Tail), buckets })
}
