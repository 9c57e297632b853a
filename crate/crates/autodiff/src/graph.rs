//! Dynamic computation graph with reverse-mode differentiation.
//!
//! A [`Graph`] is rebuilt for every forward pass. Nodes are appended in
//! evaluation order, so walking the node list backwards is a valid reverse
//! topological order and `backward` needs no sort.

use crate::{Error, Result, Tensor};

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Clamp applied to probabilities before taking logarithms.
pub const PROB_CLAMP: f64 = 1e-12;

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulBt(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Sigmoid(Var),
    Sqrt(Var),
    Softmax { x: Var, group: usize },
    LayerNorm { x: Var, gain: Var, bias: Var, xhat: Vec<f64>, inv_std: Vec<f64> },
    SumGroups { x: Var, group: usize },
    Sum(Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols { x: Var, start: usize },
    GatherRows { x: Var, index: Vec<usize> },
    CrossEntropy { logits: Var, targets: Vec<Option<usize>>, probs: Vec<f64>, count: usize },
    BinaryCrossEntropy { p: Var, targets: Vec<f64>, weights: Vec<f64> },
    PairwiseSqDist(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Tape of tensor operations recorded during one forward pass.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Graph::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&[f64]> {
        self.grads.get(var.0).and_then(|g| g.as_deref())
    }

    pub fn take(&mut self, var: Var) -> Option<Vec<f64>> {
        self.grads.get_mut(var.0).and_then(Option::take)
    }
}

fn dim_err(op: &'static str, detail: String) -> Error {
    Error::Dimension { op, detail }
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(dim_err(op, format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Leaf that receives a gradient (a parameter or differentiable input).
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
        if tb.rows() != k {
            return Err(dim_err("matmul", format!("[{}x{}] · [{}x{}]", m, k, tb.rows(), n)));
        }
        let (ad, bd) = (ta.data(), tb.data());
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let orow = &mut out[i * n..(i + 1) * n];
            for p in 0..k {
                let aip = ad[i * k + p];
                if aip == 0.0 {
                    continue;
                }
                let brow = &bd[p * n..(p + 1) * n];
                for (o, &bv) in orow.iter_mut().zip(brow) {
                    *o += aip * bv;
                }
            }
        }
        let rg = self.needs(&[a, b]);
        Ok(self.push(Tensor::matrix(m, n, out)?, Op::MatMul(a, b), rg))
    }

    /// `a · bᵀ` without materializing the transpose.
    pub fn matmul_bt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (m, k, n) = (ta.rows(), ta.cols(), tb.rows());
        if tb.cols() != k {
            return Err(dim_err("matmul_bt", format!("[{}x{}] · [{}x{}]ᵀ", m, k, n, tb.cols())));
        }
        let (ad, bd) = (ta.data(), tb.data());
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let arow = &ad[i * k..(i + 1) * k];
            for j in 0..n {
                let brow = &bd[j * k..(j + 1) * k];
                out[i * n + j] = arow.iter().zip(brow).map(|(x, y)| x * y).sum();
            }
        }
        let rg = self.needs(&[a, b]);
        Ok(self.push(Tensor::matrix(m, n, out)?, Op::MatMulBt(a, b), rg))
    }

    fn zip_with(&mut self, op: &'static str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let (ta, tb) = (self.value(a), self.value(b));
        same_shape(op, ta, tb)?;
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(ta.shape().to_vec(), data)
    }

    fn map(&self, a: Var, f: impl Fn(f64) -> f64) -> Tensor {
        let ta = self.value(a);
        let data = ta.data().iter().map(|&x| f(x)).collect();
        Tensor::new(ta.shape().to_vec(), data).expect("same length")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip_with("add", a, b, |x, y| x + y)?;
        let rg = self.needs(&[a, b]);
        Ok(self.push(t, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip_with("sub", a, b, |x, y| x - y)?;
        let rg = self.needs(&[a, b]);
        Ok(self.push(t, Op::Sub(a, b), rg))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip_with("mul", a, b, |x, y| x * y)?;
        let rg = self.needs(&[a, b]);
        Ok(self.push(t, Op::Mul(a, b), rg))
    }

    /// Adds the row vector `b` to every row of `a`.
    pub fn add_row(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let n = ta.cols();
        if tb.len() != n {
            return Err(dim_err("add_row", format!("row of {} onto {:?}", tb.len(), ta.shape())));
        }
        let mut data = ta.data().to_vec();
        for row in data.chunks_mut(n.max(1)) {
            for (x, &y) in row.iter_mut().zip(tb.data()) {
                *x += y;
            }
        }
        let t = Tensor::new(ta.shape().to_vec(), data)?;
        let rg = self.needs(&[a, b]);
        Ok(self.push(t, Op::AddRow(a, b), rg))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let t = self.map(a, |x| c * x);
        let rg = self.needs(&[a]);
        self.push(t, Op::Scale(a, c), rg)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let t = self.map(a, |x| if x > 0.0 { x } else { 0.0 });
        let rg = self.needs(&[a]);
        self.push(t, Op::Relu(a), rg)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let t = self.map(a, sigmoid);
        let rg = self.needs(&[a]);
        self.push(t, Op::Sigmoid(a), rg)
    }

    /// Elementwise square root; inputs must be strictly positive.
    pub fn sqrt(&mut self, a: Var) -> Result<Var> {
        if let Some(x) = self.value(a).data().iter().find(|x| !(**x > 0.0)) {
            return Err(Error::Numeric { op: "sqrt", detail: format!("non-positive input {}", x) });
        }
        let t = self.map(a, f64::sqrt);
        let rg = self.needs(&[a]);
        Ok(self.push(t, Op::Sqrt(a), rg))
    }

    /// Softmax along the last axis, max-subtracted.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let c = self.value(a).cols();
        self.softmax_groups(a, c)
    }

    /// Softmax over consecutive blocks of `group` entries along the last axis.
    pub fn softmax_groups(&mut self, a: Var, group: usize) -> Result<Var> {
        let ta = self.value(a);
        if group == 0 || ta.cols() % group != 0 {
            return Err(dim_err("softmax", format!("group {} does not divide {}", group, ta.cols())));
        }
        if ta.data().iter().any(|x| x.is_nan()) {
            return Err(Error::Numeric { op: "softmax", detail: "NaN input".into() });
        }
        let mut data = ta.data().to_vec();
        for block in data.chunks_mut(group) {
            let m = block.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut s = 0.0;
            for x in block.iter_mut() {
                *x = (*x - m).exp();
                s += *x;
            }
            for x in block.iter_mut() {
                *x /= s;
            }
        }
        let t = Tensor::new(ta.shape().to_vec(), data)?;
        let rg = self.needs(&[a]);
        Ok(self.push(t, Op::Softmax { x: a, group }, rg))
    }

    /// Normalizes each row to zero mean and unit variance, then applies
    /// `gain ⊙ x̂ + bias`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let tx = self.value(x);
        let d = tx.cols();
        if d == 0 {
            return Err(dim_err("layer_norm", "empty last axis".into()));
        }
        let (tg, tb) = (self.value(gain), self.value(bias));
        if tg.len() != d || tb.len() != d {
            return Err(dim_err("layer_norm", format!("gain {} / bias {} for width {}", tg.len(), tb.len(), d)));
        }
        let rows = tx.rows();
        let mut xhat = vec![0.0; rows * d];
        let mut inv_std = vec![0.0; rows];
        let mut out = vec![0.0; rows * d];
        for r in 0..rows {
            let row = tx.row(r);
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let inv = 1.0 / (var + eps).sqrt();
            inv_std[r] = inv;
            for c in 0..d {
                let h = (row[c] - mean) * inv;
                xhat[r * d + c] = h;
                out[r * d + c] = tg.data()[c] * h + tb.data()[c];
            }
        }
        let t = Tensor::new(tx.shape().to_vec(), out)?;
        let rg = self.needs(&[x, gain, bias]);
        Ok(self.push(t, Op::LayerNorm { x, gain, bias, xhat, inv_std }, rg))
    }

    /// Sums consecutive blocks of `group` entries along the last axis.
    pub fn sum_groups(&mut self, a: Var, group: usize) -> Result<Var> {
        let ta = self.value(a);
        if group == 0 || ta.cols() % group != 0 {
            return Err(dim_err("sum_groups", format!("group {} does not divide {}", group, ta.cols())));
        }
        let data: Vec<f64> = ta.data().chunks(group).map(|b| b.iter().sum()).collect();
        let t = Tensor::matrix(ta.rows(), ta.cols() / group, data)?;
        let rg = self.needs(&[a]);
        Ok(self.push(t, Op::SumGroups { x: a, group }, rg))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        let rg = self.needs(&[a]);
        self.push(Tensor::scalar(s), Op::Sum(a), rg)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = match parts.first() {
            Some(&p) => self.value(p).rows(),
            None => return Err(dim_err("concat_cols", "no inputs".into())),
        };
        if let Some(p) = parts.iter().find(|p| self.value(**p).rows() != rows) {
            return Err(dim_err("concat_cols", format!("{} rows vs {}", self.value(*p).rows(), rows)));
        }
        let width: usize = parts.iter().map(|p| self.value(*p).cols()).sum();
        let mut data = Vec::with_capacity(rows * width);
        for r in 0..rows {
            for p in parts {
                data.extend_from_slice(self.value(*p).row(r));
            }
        }
        let t = Tensor::matrix(rows, width, data)?;
        let rg = self.needs(parts);
        Ok(self.push(t, Op::ConcatCols(parts.to_vec()), rg))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let cols = match parts.first() {
            Some(&p) => self.value(p).cols(),
            None => return Err(dim_err("concat_rows", "no inputs".into())),
        };
        if let Some(p) = parts.iter().find(|p| self.value(**p).cols() != cols) {
            return Err(dim_err("concat_rows", format!("{} cols vs {}", self.value(*p).cols(), cols)));
        }
        let mut data = Vec::new();
        for p in parts {
            data.extend_from_slice(self.value(*p).data());
        }
        let rows = data.len() / cols.max(1);
        let t = Tensor::matrix(rows, cols, data)?;
        let rg = self.needs(parts);
        Ok(self.push(t, Op::ConcatRows(parts.to_vec()), rg))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let ta = self.value(a);
        if start + len > ta.cols() {
            return Err(dim_err("slice_cols", format!("{}..{} of {}", start, start + len, ta.cols())));
        }
        let mut data = Vec::with_capacity(ta.rows() * len);
        for r in 0..ta.rows() {
            data.extend_from_slice(&ta.row(r)[start..start + len]);
        }
        let t = Tensor::matrix(ta.rows(), len, data)?;
        let rg = self.needs(&[a]);
        Ok(self.push(t, Op::SliceCols { x: a, start }, rg))
    }

    /// Row `r` of the output is row `index[r]` of `a`.
    pub fn gather_rows(&mut self, a: Var, index: &[usize]) -> Result<Var> {
        let ta = self.value(a);
        let cols = ta.cols();
        if let Some(i) = index.iter().find(|&&i| i >= ta.rows()) {
            return Err(dim_err("gather_rows", format!("row {} of {}", i, ta.rows())));
        }
        let mut data = Vec::with_capacity(index.len() * cols);
        for &i in index {
            data.extend_from_slice(ta.row(i));
        }
        let t = Tensor::matrix(index.len(), cols, data)?;
        let rg = self.needs(&[a]);
        Ok(self.push(t, Op::GatherRows { x: a, index: index.to_vec() }, rg))
    }

    /// Mean softmax cross entropy over the rows whose target is `Some`.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[Option<usize>]) -> Result<Var> {
        let tl = self.value(logits);
        let (rows, c) = (tl.rows(), tl.cols());
        if targets.len() != rows {
            return Err(dim_err("cross_entropy", format!("{} targets for {} rows", targets.len(), rows)));
        }
        let count = targets.iter().filter(|t| t.is_some()).count();
        if count == 0 {
            return Err(Error::Contract("cross entropy with no labelled rows".into()));
        }
        let mut probs = vec![0.0; rows * c];
        let mut loss = 0.0;
        for r in 0..rows {
            let row = tl.row(r);
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = row.iter().map(|x| (x - m).exp()).sum();
            for j in 0..c {
                probs[r * c + j] = (row[j] - m).exp() / z;
            }
            if let Some(t) = targets[r] {
                if t >= c {
                    return Err(dim_err("cross_entropy", format!("class {} of {}", t, c)));
                }
                loss += z.ln() + m - row[t];
            }
        }
        let t = Tensor::scalar(loss / count as f64);
        let rg = self.needs(&[logits]);
        Ok(self.push(t, Op::CrossEntropy { logits, targets: targets.to_vec(), probs, count }, rg))
    }

    /// Weighted binary cross entropy `-Σ w [y ln p + (1-y) ln(1-p)]`, summed.
    ///
    /// `p` is clamped to `[PROB_CLAMP, 1 - PROB_CLAMP]`; clamped entries pass
    /// no gradient.
    pub fn binary_cross_entropy(&mut self, p: Var, targets: &[f64], weights: &[f64]) -> Result<Var> {
        let tp = self.value(p);
        if targets.len() != tp.len() || weights.len() != tp.len() {
            return Err(dim_err(
                "binary_cross_entropy",
                format!("{} targets / {} weights for {} entries", targets.len(), weights.len(), tp.len()),
            ));
        }
        let mut loss = 0.0;
        for ((&pv, &y), &w) in tp.data().iter().zip(targets).zip(weights) {
            if w == 0.0 {
                continue;
            }
            let q = pv.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
            loss -= w * (y * q.ln() + (1.0 - y) * (1.0 - q).ln());
        }
        let rg = self.needs(&[p]);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::BinaryCrossEntropy { p, targets: targets.to_vec(), weights: weights.to_vec() },
            rg,
        ))
    }

    /// `out[i][j] = ‖x_i − x_j‖²` over the rows of `x`.
    pub fn pairwise_sq_dist(&mut self, x: Var) -> Result<Var> {
        let tx = self.value(x);
        let n = tx.rows();
        let mut out = vec![0.0; n * n];
        for i in 0..n {
            for j in (i + 1)..n {
                let d: f64 = tx.row(i).iter().zip(tx.row(j)).map(|(a, b)| (a - b) * (a - b)).sum();
                out[i * n + j] = d;
                out[j * n + i] = d;
            }
        }
        let t = Tensor::matrix(n, n, out)?;
        let rg = self.needs(&[x]);
        Ok(self.push(t, Op::PairwiseSqDist(x), rg))
    }

    /// Reverse sweep from a scalar `loss`.
    ///
    /// Every node that requires a gradient ends up with one; nodes the loss
    /// does not depend on receive zeros.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if node.requires_grad {
                self.propagate(idx, &g, &mut grads);
            }
            grads[idx] = Some(g);
        }
        for (idx, node) in self.nodes.iter().enumerate() {
            if node.requires_grad && grads[idx].is_none() {
                grads[idx] = Some(vec![0.0; node.value.len()]);
            } else if !node.requires_grad {
                grads[idx] = None;
            }
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Vec<f64>>], v: Var, f: impl FnOnce(&mut [f64])) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        let slot = grads[v.0].get_or_insert_with(|| vec![0.0; self.nodes[v.0].value.len()]);
        f(slot);
    }

    fn propagate(&self, idx: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let out = &self.nodes[idx].value;
        match &self.nodes[idx].op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
                self.accumulate(grads, *a, |ga| {
                    for i in 0..m {
                        let grow = &g[i * n..(i + 1) * n];
                        for p in 0..k {
                            let brow = &tb.data()[p * n..(p + 1) * n];
                            ga[i * k + p] += grow.iter().zip(brow).map(|(x, y)| x * y).sum::<f64>();
                        }
                    }
                });
                self.accumulate(grads, *b, |gb| {
                    for i in 0..m {
                        let grow = &g[i * n..(i + 1) * n];
                        for p in 0..k {
                            let aip = ta.data()[i * k + p];
                            if aip == 0.0 {
                                continue;
                            }
                            for (o, &gv) in gb[p * n..(p + 1) * n].iter_mut().zip(grow) {
                                *o += aip * gv;
                            }
                        }
                    }
                });
            }
            Op::MatMulBt(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k, n) = (ta.rows(), ta.cols(), tb.rows());
                self.accumulate(grads, *a, |ga| {
                    for i in 0..m {
                        for j in 0..n {
                            let gij = g[i * n + j];
                            if gij == 0.0 {
                                continue;
                            }
                            for (o, &bv) in ga[i * k..(i + 1) * k].iter_mut().zip(tb.row(j)) {
                                *o += gij * bv;
                            }
                        }
                    }
                });
                self.accumulate(grads, *b, |gb| {
                    for i in 0..m {
                        for j in 0..n {
                            let gij = g[i * n + j];
                            if gij == 0.0 {
                                continue;
                            }
                            for (o, &av) in gb[j * k..(j + 1) * k].iter_mut().zip(ta.row(i)) {
                                *o += gij * av;
                            }
                        }
                    }
                });
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, |ga| ga.iter_mut().zip(g).for_each(|(o, v)| *o += v));
                self.accumulate(grads, *b, |gb| gb.iter_mut().zip(g).for_each(|(o, v)| *o += v));
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, |ga| ga.iter_mut().zip(g).for_each(|(o, v)| *o += v));
                self.accumulate(grads, *b, |gb| gb.iter_mut().zip(g).for_each(|(o, v)| *o -= v));
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                self.accumulate(grads, *a, |ga| {
                    for ((o, &gv), &bv) in ga.iter_mut().zip(g).zip(tb.data()) {
                        *o += gv * bv;
                    }
                });
                self.accumulate(grads, *b, |gb| {
                    for ((o, &gv), &av) in gb.iter_mut().zip(g).zip(ta.data()) {
                        *o += gv * av;
                    }
                });
            }
            Op::AddRow(a, b) => {
                let n = self.value(*b).len();
                self.accumulate(grads, *a, |ga| ga.iter_mut().zip(g).for_each(|(o, v)| *o += v));
                self.accumulate(grads, *b, |gb| {
                    for row in g.chunks(n.max(1)) {
                        gb.iter_mut().zip(row).for_each(|(o, v)| *o += v);
                    }
                });
            }
            Op::Scale(a, c) => {
                self.accumulate(grads, *a, |ga| ga.iter_mut().zip(g).for_each(|(o, v)| *o += c * v));
            }
            Op::Relu(a) => {
                let ta = self.value(*a);
                self.accumulate(grads, *a, |ga| {
                    for ((o, &gv), &x) in ga.iter_mut().zip(g).zip(ta.data()) {
                        if x > 0.0 {
                            *o += gv;
                        }
                    }
                });
            }
            Op::Sigmoid(a) => {
                self.accumulate(grads, *a, |ga| {
                    for ((o, &gv), &y) in ga.iter_mut().zip(g).zip(out.data()) {
                        *o += gv * y * (1.0 - y);
                    }
                });
            }
            Op::Sqrt(a) => {
                self.accumulate(grads, *a, |ga| {
                    for ((o, &gv), &y) in ga.iter_mut().zip(g).zip(out.data()) {
                        *o += gv * 0.5 / y;
                    }
                });
            }
            Op::Softmax { x, group } => {
                self.accumulate(grads, *x, |gx| {
                    for ((gblk, yblk), oblk) in
                        g.chunks(*group).zip(out.data().chunks(*group)).zip(gx.chunks_mut(*group))
                    {
                        let dot: f64 = gblk.iter().zip(yblk).map(|(a, b)| a * b).sum();
                        for ((o, &gv), &y) in oblk.iter_mut().zip(gblk).zip(yblk) {
                            *o += y * (gv - dot);
                        }
                    }
                });
            }
            Op::LayerNorm { x, gain, bias, xhat, inv_std } => {
                let d = out.cols();
                let gain_v = self.value(*gain).data();
                self.accumulate(grads, *gain, |gg| {
                    for (grow, hrow) in g.chunks(d).zip(xhat.chunks(d)) {
                        for c in 0..d {
                            gg[c] += grow[c] * hrow[c];
                        }
                    }
                });
                self.accumulate(grads, *bias, |gb| {
                    for grow in g.chunks(d) {
                        gb.iter_mut().zip(grow).for_each(|(o, v)| *o += v);
                    }
                });
                self.accumulate(grads, *x, |gx| {
                    let mut dh = vec![0.0; d];
                    for (r, ((grow, hrow), xrow)) in g.chunks(d).zip(xhat.chunks(d)).zip(gx.chunks_mut(d)).enumerate() {
                        for c in 0..d {
                            dh[c] = grow[c] * gain_v[c];
                        }
                        let s1: f64 = dh.iter().sum();
                        let s2: f64 = dh.iter().zip(hrow).map(|(a, b)| a * b).sum();
                        let k = inv_std[r] / d as f64;
                        for c in 0..d {
                            xrow[c] += k * (d as f64 * dh[c] - s1 - hrow[c] * s2);
                        }
                    }
                });
            }
            Op::SumGroups { x, group } => {
                self.accumulate(grads, *x, |gx| {
                    for (blk, &gv) in gx.chunks_mut(*group).zip(g) {
                        blk.iter_mut().for_each(|o| *o += gv);
                    }
                });
            }
            Op::Sum(a) => {
                let gv = g[0];
                self.accumulate(grads, *a, |ga| ga.iter_mut().for_each(|o| *o += gv));
            }
            Op::ConcatCols(parts) => {
                let width = out.cols();
                let mut offset = 0;
                for p in parts {
                    let w = self.value(*p).cols();
                    self.accumulate(grads, *p, |gp| {
                        for (r, prow) in gp.chunks_mut(w.max(1)).enumerate() {
                            let src = &g[r * width + offset..r * width + offset + w];
                            prow.iter_mut().zip(src).for_each(|(o, v)| *o += v);
                        }
                    });
                    offset += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for p in parts {
                    let len = self.value(*p).len();
                    self.accumulate(grads, *p, |gp| {
                        gp.iter_mut().zip(&g[offset..offset + len]).for_each(|(o, v)| *o += v);
                    });
                    offset += len;
                }
            }
            Op::SliceCols { x, start } => {
                let src_cols = self.value(*x).cols();
                let w = out.cols();
                self.accumulate(grads, *x, |gx| {
                    for (r, grow) in g.chunks(w.max(1)).enumerate() {
                        let dst = &mut gx[r * src_cols + start..r * src_cols + start + w];
                        dst.iter_mut().zip(grow).for_each(|(o, v)| *o += v);
                    }
                });
            }
            Op::GatherRows { x, index } => {
                let c = out.cols();
                self.accumulate(grads, *x, |gx| {
                    for (r, &i) in index.iter().enumerate() {
                        let dst = &mut gx[i * c..(i + 1) * c];
                        dst.iter_mut().zip(&g[r * c..(r + 1) * c]).for_each(|(o, v)| *o += v);
                    }
                });
            }
            Op::CrossEntropy { logits, targets, probs, count } => {
                let c = self.value(*logits).cols();
                let scale = g[0] / *count as f64;
                self.accumulate(grads, *logits, |gl| {
                    for (r, t) in targets.iter().enumerate() {
                        let Some(t) = t else { continue };
                        for j in 0..c {
                            let onehot = if j == *t { 1.0 } else { 0.0 };
                            gl[r * c + j] += scale * (probs[r * c + j] - onehot);
                        }
                    }
                });
            }
            Op::BinaryCrossEntropy { p, targets, weights } => {
                let tp = self.value(*p);
                let gv = g[0];
                self.accumulate(grads, *p, |gp| {
                    for (i, o) in gp.iter_mut().enumerate() {
                        let (pv, y, w) = (tp.data()[i], targets[i], weights[i]);
                        if w == 0.0 || !(PROB_CLAMP..=1.0 - PROB_CLAMP).contains(&pv) {
                            continue;
                        }
                        *o += gv * w * (-y / pv + (1.0 - y) / (1.0 - pv));
                    }
                });
            }
            Op::PairwiseSqDist(x) => {
                let tx = self.value(*x);
                let (n, d) = (tx.rows(), tx.cols());
                self.accumulate(grads, *x, |gx| {
                    for i in 0..n {
                        for j in 0..n {
                            let c = 2.0 * g[i * n + j];
                            if i == j || c == 0.0 {
                                continue;
                            }
                            for k in 0..d {
                                let diff = tx.data()[i * d + k] - tx.data()[j * d + k];
                                gx[i * d + k] += c * diff;
                                gx[j * d + k] -= c * diff;
                            }
                        }
                    }
                });
            }
        }
    }
}
