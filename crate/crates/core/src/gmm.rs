//! Gaussian-mixture predicate head and its uncertainty decomposition.
//!
//! Every predicate class `p` owns `K` scalar components. Head outputs are
//! laid out class-major: column `p·K + k` holds component `k` of class `p`,
//! so per-class reductions are `K`-wide group operations.

use dsgg_autodiff::{Binding, Graph, ParamStore, Tensor, Var};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::attention::{init_linear, linear};
use crate::Result;

#[derive(Clone, Debug)]
pub struct GmmConfig {
    pub rel_dim: usize,
    pub classes: usize,
    pub components: usize,
}

impl GmmConfig {
    pub fn width(&self) -> usize {
        self.classes * self.components
    }

    pub fn init(&self, store: &mut ParamStore, rng: &mut impl Rng) {
        for head in ["gmm.mu", "gmm.sigma", "gmm.pi"] {
            init_linear(store, head, self.rel_dim, self.width(), rng);
        }
    }

    /// One standard-normal draw per (pair, class, component).
    pub fn sample_eps(&self, pairs: usize, rng: &mut impl Rng) -> Tensor {
        let data = (0..pairs * self.width()).map(|_| rng.sample(StandardNormal)).collect();
        Tensor::matrix(pairs, self.width(), data).expect("sized")
    }
}

/// Mixture parameters, each `[P × C·K]`.
#[derive(Clone, Copy, Debug)]
pub struct GmmVars {
    pub mu: Var,
    /// Variances in (0, 1).
    pub sigma: Var,
    /// Mixture weights; each `K`-group sums to one.
    pub pi: Var,
}

/// `μ = f_μ(z)`, `Σ = σ(f_Σ(z))`, `π = softmax_k(f_π(z))`.
pub fn gmm_params(g: &mut Graph, b: &Binding, cfg: &GmmConfig, z: Var) -> Result<GmmVars> {
    let mu = linear(g, b, "gmm.mu", z)?;
    let s = linear(g, b, "gmm.sigma", z)?;
    let sigma = g.sigmoid(s);
    let p = linear(g, b, "gmm.pi", z)?;
    let pi = g.softmax_groups(p, cfg.components)?;
    Ok(GmmVars { mu, sigma, pi })
}

/// Reparameterized scores: `ĉ = μ + ε√Σ`, `ŷ = Σ_k π σ(ĉ)`. Returns `(ĉ, ŷ)`.
pub fn train_scores(g: &mut Graph, cfg: &GmmConfig, v: &GmmVars, eps: &Tensor) -> Result<(Var, Var)> {
    let e = g.constant(eps.clone());
    let sd = g.sqrt(v.sigma)?;
    let noise = g.mul(e, sd)?;
    let c = g.add(v.mu, noise)?;
    let sc = g.sigmoid(c);
    let weighted = g.mul(v.pi, sc)?;
    let y = g.sum_groups(weighted, cfg.components)?;
    Ok((c, y))
}

/// Deterministic scores `ŷ = Σ_k π σ(μ)`.
pub fn infer_scores(g: &mut Graph, cfg: &GmmConfig, v: &GmmVars) -> Result<Var> {
    let s = g.sigmoid(v.mu);
    let weighted = g.mul(v.pi, s)?;
    Ok(g.sum_groups(weighted, cfg.components)?)
}

/// Binary cross entropy of `ŷ` against multi-label targets, summed over
/// pairs and classes.
pub fn predicate_loss(g: &mut Graph, y: Var, targets: &[f64]) -> Result<Var> {
    let ones = vec![1.0; targets.len()];
    Ok(g.binary_cross_entropy(y, targets, &ones)?)
}

/// `U_al = Σ_k π_k Σ_k` for each `K`-group.
pub fn aleatoric(pi: &[f64], sigma: &[f64], k: usize) -> Vec<f64> {
    pi.chunks(k).zip(sigma.chunks(k)).map(|(p, s)| p.iter().zip(s).map(|(a, b)| a * b).sum()).collect()
}

/// `U_ep = Σ_k π_k (μ_k − Σ_j π_j μ_j)²` for each `K`-group.
pub fn epistemic(pi: &[f64], mu: &[f64], k: usize) -> Vec<f64> {
    pi.chunks(k)
        .zip(mu.chunks(k))
        .map(|(p, m)| {
            let mean: f64 = p.iter().zip(m).map(|(a, b)| a * b).sum();
            p.iter().zip(m).map(|(a, b)| a * (b - mean).powi(2)).sum()
        })
        .collect()
}

/// Plain classifier used when the mixture head is switched off:
/// `ŷ = σ(W z + b)`.
pub fn plain_init(store: &mut ParamStore, rel_dim: usize, classes: usize, rng: &mut impl Rng) {
    init_linear(store, "head", rel_dim, classes, rng);
}

pub fn plain_scores(g: &mut Graph, b: &Binding, z: Var) -> Result<Var> {
    let logits = linear(g, b, "head", z)?;
    Ok(g.sigmoid(logits))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uncertainty_examples() {
        assert_eq!(aleatoric(&[1.0], &[0.37], 1), vec![0.37]);
        assert!((aleatoric(&[0.5, 0.5], &[0.2, 0.4], 2)[0] - 0.3).abs() < 1e-15);
        assert_eq!(epistemic(&[1.0], &[2.5], 1), vec![0.0]);
        assert_eq!(epistemic(&[0.5, 0.5], &[0.0, 2.0], 2), vec![1.0]);
        assert!(epistemic(&[0.2, 0.8], &[1.5, 1.5], 2)[0] < 1e-30);
    }

    #[test]
    fn closed_form_scores() {
        let cfg = GmmConfig { rel_dim: 1, classes: 1, components: 1 };
        let mut g = Graph::new();
        let mu = g.constant(Tensor::from_vec(vec![0.0]));
        let sigma = g.constant(Tensor::from_vec(vec![0.25]));
        let pi = g.constant(Tensor::from_vec(vec![1.0]));
        let v = GmmVars { mu, sigma, pi };
        let (c, y) = train_scores(&mut g, &cfg, &v, &Tensor::from_vec(vec![1.0])).unwrap();
        assert_eq!(g.value(c).item(), 0.5);
        assert!((g.value(y).item() - 1.0 / (1.0 + (-0.5f64).exp())).abs() < 1e-15);
        assert!((g.value(y).item() - 0.6225).abs() < 1e-4);

        let cfg = GmmConfig { rel_dim: 1, classes: 1, components: 2 };
        let mu = g.constant(Tensor::from_vec(vec![0.0, 3f64.ln()]));
        let pi = g.constant(Tensor::from_vec(vec![0.25, 0.75]));
        let sigma = g.constant(Tensor::from_vec(vec![0.5, 0.5]));
        let y = infer_scores(&mut g, &cfg, &GmmVars { mu, sigma, pi }).unwrap();
        assert!((g.value(y).item() - 0.6875).abs() < 1e-15);
    }

    #[test]
    fn loss_examples() {
        let mut g = Graph::new();
        let y = g.constant(Tensor::from_vec(vec![0.5]));
        let l = predicate_loss(&mut g, y, &[1.0]).unwrap();
        assert!((g.value(l).item() - 2f64.ln()).abs() < 1e-15);
        let y = g.constant(Tensor::from_vec(vec![0.8, 0.3]));
        let l = predicate_loss(&mut g, y, &[1.0, 0.0]).unwrap();
        assert!((g.value(l).item() + (0.8f64.ln() + 0.7f64.ln())).abs() < 1e-15);
        assert!((g.value(l).item() - 0.5798).abs() < 1e-4);
    }
}
