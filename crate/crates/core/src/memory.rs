//! Predicate-class prototype memory and the memory diffusion unit.

use std::fmt::Write as _;
use std::path::Path;

use dsgg_autodiff::{Binding, Graph, ParamStore, Tensor, Var};
use rand::Rng;

use crate::attention::attention;
use crate::{Error, Result};

/// Class centroids of predicate embeddings computed from one model snapshot.
#[derive(Clone, Debug, PartialEq)]
pub struct MemoryBank {
    /// `prototypes[p]` is the mean embedding of class `p`, zeros when
    /// `counts[p] == 0`.
    pub prototypes: Vec<Vec<f64>>,
    pub counts: Vec<u64>,
    /// Epoch whose weights produced the embeddings.
    pub source_epoch: usize,
}

/// Running sums for one pass over the training set.
#[derive(Clone, Debug)]
pub struct BankBuilder {
    sums: Vec<Vec<f64>>,
    counts: Vec<u64>,
}

impl BankBuilder {
    pub fn new(classes: usize, dim: usize) -> Self {
        Self { sums: vec![vec![0.0; dim]; classes], counts: vec![0; classes] }
    }

    /// Adds one pair embedding to the centroid of every class it carries.
    pub fn add(&mut self, embedding: &[f64], labels: &[usize]) -> Result<()> {
        for &p in labels {
            let sum =
                self.sums.get_mut(p).ok_or_else(|| Error::Contract(format!("predicate class {} out of range", p)))?;
            if sum.len() != embedding.len() {
                return Err(Error::Contract(format!("embedding dim {} != bank dim {}", embedding.len(), sum.len())));
            }
            for (s, e) in sum.iter_mut().zip(embedding) {
                *s += e;
            }
            self.counts[p] += 1;
        }
        Ok(())
    }

    /// Finishes the bank used during `epoch`, built from the weights at the
    /// end of `epoch − 1`. Epoch 1 has no previous snapshot.
    pub fn finish(self, epoch: usize) -> Result<MemoryBank> {
        if epoch < 2 {
            return Err(Error::Contract(format!("no memory bank for epoch {}: the unit is bypassed", epoch)));
        }
        let prototypes = self
            .sums
            .into_iter()
            .zip(&self.counts)
            .map(|(s, &n)| if n == 0 { s } else { s.into_iter().map(|x| x / n as f64).collect() })
            .collect();
        Ok(MemoryBank { prototypes, counts: self.counts, source_epoch: epoch - 1 })
    }
}

impl MemoryBank {
    pub fn dim(&self) -> usize {
        self.prototypes.first().map_or(0, Vec::len)
    }

    /// Prototypes with at least one contributor, as rows.
    pub fn active(&self) -> Result<Tensor> {
        let rows: Vec<f64> = self
            .prototypes
            .iter()
            .zip(&self.counts)
            .filter(|(_, &n)| n > 0)
            .flat_map(|(p, _)| p.iter().copied())
            .collect();
        let n = self.counts.iter().filter(|&&n| n > 0).count();
        if n == 0 {
            return Err(Error::Contract("memory bank has no populated prototype".into()));
        }
        Ok(Tensor::matrix(n, self.dim(), rows)?)
    }

    /// Text dump: a header line, then `class count v1 v2 …` per class.
    pub fn to_text(&self) -> String {
        let mut s = format!("# memory bank from epoch {} weights\n", self.source_epoch);
        for (p, (proto, n)) in self.prototypes.iter().zip(&self.counts).enumerate() {
            write!(s, "{} {}", p, n).unwrap();
            for v in proto {
                write!(s, " {}", v).unwrap();
            }
            s.push('\n');
        }
        s
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }
}

pub fn init_mdu(store: &mut ParamStore, dim: usize, rng: &mut impl Rng) {
    for w in ["mdu.wq", "mdu.wk", "mdu.wv"] {
        store.init_weight(w, dim, dim, rng);
    }
}

/// `r̂ = λ r + (1 − λ) A(r W_Q, Ω W_K, Ω W_V)` over the populated prototypes
/// `Ω`. The bank is a constant: gradients reach `r` and the three weight
/// matrices only.
pub fn memory_diffuse(g: &mut Graph, b: &Binding, r: Var, bank: &MemoryBank, lambda: f64) -> Result<Var> {
    check_lambda(lambda)?;
    let omega = g.constant(bank.active()?);
    let q = g.matmul(r, b.var("mdu.wq")?)?;
    let k = g.matmul(omega, b.var("mdu.wk")?)?;
    let v = g.matmul(omega, b.var("mdu.wv")?)?;
    let mem = attention(g, q, k, v, None)?;
    let direct = g.scale(r, lambda);
    let diffused = g.scale(mem, 1.0 - lambda);
    Ok(g.add(direct, diffused)?)
}

pub fn check_lambda(lambda: f64) -> Result<()> {
    if !(lambda > 0.0 && lambda <= 1.0) {
        return Err(Error::Config { field: "lambda", message: format!("{} is outside (0, 1]", lambda) });
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MduMode {
    Bypass,
    /// Diffuse with the bank built from the weights of `source_epoch`.
    Diffuse {
        source_epoch: usize,
    },
}

/// Epoch 1 and inference bypass the unit; epoch `α ≥ 2` uses the bank from
/// the end of epoch `α − 1`.
pub fn mdu_schedule(epoch: usize, inference: bool) -> MduMode {
    if inference || epoch <= 1 {
        MduMode::Bypass
    } else {
        MduMode::Diffuse { source_epoch: epoch - 1 }
    }
}
