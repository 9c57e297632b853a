//! Scaled dot-product and multi-head attention, the post-norm encoder layer,
//! and sinusoidal position tables.

use dsgg_autodiff::{Binding, Graph, ParamStore, Tensor, Var};
use rand::Rng;

use crate::{Error, Result};

/// Additive logit for disallowed query–key pairs.
pub const MASKED_LOGIT: f64 = -1e30;
pub const LN_EPS: f64 = 1e-5;

/// Which keys each query may attend to.
#[derive(Clone, Debug, PartialEq)]
pub struct Mask {
    rows: usize,
    cols: usize,
    allow: Vec<bool>,
}

impl Mask {
    pub fn full(rows: usize, cols: usize) -> Self {
        Self { rows, cols, allow: vec![true; rows * cols] }
    }

    /// Query `i` may attend to key `j` iff `q_groups[i] == k_groups[j]`.
    /// Used to batch independent sequences into one attention call.
    pub fn groups(q_groups: &[usize], k_groups: &[usize]) -> Self {
        let allow = q_groups.iter().flat_map(|qg| k_groups.iter().map(move |kg| qg == kg)).collect();
        Self { rows: q_groups.len(), cols: k_groups.len(), allow }
    }

    /// Every query sees exactly the keys flagged valid.
    pub fn key_padding(rows: usize, valid: &[bool]) -> Self {
        let allow = (0..rows).flat_map(|_| valid.iter().copied()).collect();
        Self { rows, cols: valid.len(), allow }
    }

    /// Each position attends only to itself.
    pub fn diagonal(n: usize) -> Self {
        let allow = (0..n * n).map(|i| i / n == i % n).collect();
        Self { rows: n, cols: n, allow }
    }

    pub fn allows(&self, r: usize, c: usize) -> bool {
        self.allow[r * self.cols + c]
    }

    fn bias(&self, rows: usize, cols: usize) -> Result<Tensor> {
        if rows != self.rows || cols != self.cols {
            return Err(Error::Contract(format!(
                "mask is {}x{} but attention logits are {}x{}",
                self.rows, self.cols, rows, cols
            )));
        }
        for r in 0..rows {
            if !(0..cols).any(|c| self.allows(r, c)) {
                return Err(Error::Contract(format!("every key is masked for query {}", r)));
            }
        }
        let data = self.allow.iter().map(|&a| if a { 0.0 } else { MASKED_LOGIT }).collect();
        Ok(Tensor::matrix(rows, cols, data)?)
    }
}

/// `softmax(Q Kᵀ / √d_k) V`, with masked keys excluded.
pub fn attention(g: &mut Graph, q: Var, k: Var, v: Var, mask: Option<&Mask>) -> Result<Var> {
    let dk = g.value(q).cols();
    let raw = g.matmul_bt(q, k)?;
    let mut logits = g.scale(raw, 1.0 / (dk as f64).sqrt());
    let (rows, cols) = (g.value(logits).rows(), g.value(logits).cols());
    match mask {
        Some(m) => {
            let bias = g.constant(m.bias(rows, cols)?);
            logits = g.add(logits, bias)?;
        }
        None if cols == 0 => return Err(Error::Contract("attention over zero keys".into())),
        None => {}
    }
    let weights = g.softmax(logits)?;
    Ok(g.matmul(weights, v)?)
}

/// Projection weights of one multi-head attention block. All heads share
/// the model dim: per-head dims are `D / H`.
#[derive(Clone, Copy, Debug)]
pub struct MhaWeights {
    pub wq: Var,
    pub wk: Var,
    pub wv: Var,
    pub wh: Var,
}

impl MhaWeights {
    pub fn bind(b: &Binding, prefix: &str) -> Result<Self> {
        Ok(Self {
            wq: b.var(&format!("{}.wq", prefix))?,
            wk: b.var(&format!("{}.wk", prefix))?,
            wv: b.var(&format!("{}.wv", prefix))?,
            wh: b.var(&format!("{}.wh", prefix))?,
        })
    }

    pub fn init(store: &mut ParamStore, prefix: &str, dim: usize, rng: &mut impl Rng) {
        for w in ["wq", "wk", "wv", "wh"] {
            store.init_weight(format!("{}.{}", prefix, w), dim, dim, rng);
        }
    }
}

/// `Concat(head_1, …, head_H) · W_H` where head `i` attends with the `i`-th
/// column block of the projected queries, keys and values.
pub fn multi_head(
    g: &mut Graph,
    xq: Var,
    xk: Var,
    xv: Var,
    w: &MhaWeights,
    heads: usize,
    mask: Option<&Mask>,
) -> Result<Var> {
    let q = g.matmul(xq, w.wq)?;
    let k = g.matmul(xk, w.wk)?;
    let v = g.matmul(xv, w.wv)?;
    let dim = g.value(q).cols();
    if heads == 0 || dim % heads != 0 || g.value(v).cols() % heads != 0 {
        return Err(Error::Contract(format!("{} heads do not divide model dim {}", heads, dim)));
    }
    let (dq, dv) = (dim / heads, g.value(v).cols() / heads);
    let mut outs = Vec::with_capacity(heads);
    for h in 0..heads {
        let qh = g.slice_cols(q, h * dq, dq)?;
        let kh = g.slice_cols(k, h * dq, dq)?;
        let vh = g.slice_cols(v, h * dv, dv)?;
        outs.push(attention(g, qh, kh, vh, mask)?);
    }
    let cat = g.concat_cols(&outs)?;
    Ok(g.matmul(cat, w.wh)?)
}

pub fn init_linear(store: &mut ParamStore, prefix: &str, fan_in: usize, fan_out: usize, rng: &mut impl Rng) {
    store.init_weight(format!("{}.w", prefix), fan_in, fan_out, rng);
    store.init_zeros(format!("{}.b", prefix), &[1, fan_out]);
}

/// `x W + b` for parameters `{prefix}.w` and `{prefix}.b`.
pub fn linear(g: &mut Graph, b: &Binding, prefix: &str, x: Var) -> Result<Var> {
    let w = b.var(&format!("{}.w", prefix))?;
    let bias = b.var(&format!("{}.b", prefix))?;
    let xw = g.matmul(x, w)?;
    Ok(g.add_row(xw, bias)?)
}

/// Parameter layout of one encoder layer under `prefix`.
#[derive(Clone, Debug)]
pub struct EncoderLayer {
    pub prefix: String,
    pub heads: usize,
}

impl EncoderLayer {
    pub fn new(prefix: impl Into<String>, heads: usize) -> Self {
        Self { prefix: prefix.into(), heads }
    }

    pub fn init(&self, store: &mut ParamStore, dim: usize, hidden: usize, rng: &mut impl Rng) {
        let p = &self.prefix;
        MhaWeights::init(store, &format!("{}.mha", p), dim, rng);
        init_linear(store, &format!("{}.ffn1", p), dim, hidden, rng);
        init_linear(store, &format!("{}.ffn2", p), hidden, dim, rng);
        for ln in ["ln1", "ln2"] {
            store.init_filled(format!("{}.{}.gain", p, ln), &[1, dim], 1.0);
            store.init_zeros(format!("{}.{}.bias", p, ln), &[1, dim]);
        }
    }

    fn norm(&self, g: &mut Graph, b: &Binding, which: &str, x: Var) -> Result<Var> {
        let gain = b.var(&format!("{}.{}.gain", self.prefix, which))?;
        let bias = b.var(&format!("{}.{}.bias", self.prefix, which))?;
        Ok(g.layer_norm(x, gain, bias, LN_EPS)?)
    }

    /// Post-norm layer: `h = LN(x_v + MA(x_q, x_k, x_v))`,
    /// `out = LN(h + FFN(h))`. Self-attention passes the same input three
    /// times; the temporal decoder passes position-tagged queries and keys.
    pub fn forward(&self, g: &mut Graph, b: &Binding, xq: Var, xk: Var, xv: Var, mask: Option<&Mask>) -> Result<Var> {
        let w = MhaWeights::bind(b, &format!("{}.mha", self.prefix))?;
        let att = multi_head(g, xq, xk, xv, &w, self.heads, mask)?;
        let res = g.add(xv, att)?;
        let h = self.norm(g, b, "ln1", res)?;
        let f1 = linear(g, b, &format!("{}.ffn1", self.prefix), h)?;
        let f1 = g.relu(f1);
        let f2 = linear(g, b, &format!("{}.ffn2", self.prefix), f1)?;
        let res = g.add(h, f2)?;
        self.norm(g, b, "ln2", res)
    }

    pub fn self_attend(&self, g: &mut Graph, b: &Binding, x: Var, mask: Option<&Mask>) -> Result<Var> {
        self.forward(g, b, x, x, x, mask)
    }
}

/// Fixed table `pe[t, 2i] = sin(t / 10000^(2i/D))`, `pe[t, 2i+1] = cos(…)`.
pub fn sinusoidal_positions(len: usize, dim: usize) -> Result<Tensor> {
    if dim % 2 != 0 {
        return Err(Error::Contract(format!("sinusoidal positions need an even dim, got {}", dim)));
    }
    let mut data = Vec::with_capacity(len * dim);
    for t in 0..len {
        for i in 0..dim / 2 {
            let angle = t as f64 / 10000f64.powf(2.0 * i as f64 / dim as f64);
            data.push(angle.sin());
            data.push(angle.cos());
        }
    }
    Ok(Tensor::matrix(len, dim, data)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn position_table_examples() {
        let pe = sinusoidal_positions(4, 4).unwrap();
        assert_eq!(pe.row(0), &[0.0, 1.0, 0.0, 1.0]);
        for t in 0..4 {
            assert_eq!(pe.at(t, 0), (t as f64).sin());
        }
        assert!((pe.at(3, 2) - (3.0f64 / 100.0).sin()).abs() < 1e-15);
        assert!(matches!(sinusoidal_positions(2, 3), Err(Error::Contract(_))));
    }

    #[test]
    fn fully_masked_query_is_rejected() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::zeros(&[2, 2]));
        let mask = Mask::key_padding(2, &[false, false]);
        assert!(matches!(attention(&mut g, x, x, x, Some(&mask)), Err(Error::Contract(_))));
    }
}
