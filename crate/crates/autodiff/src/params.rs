use std::collections::{BTreeMap, HashMap};

use rand::Rng;

use crate::{Error, Gradients, Graph, Result, Tensor, Var};

/// Named learnable tensors, iterated in name order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    params: BTreeMap<String, Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) {
        self.params.insert(name.into(), value);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.params.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.params.get_mut(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor)> {
        self.params.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.params.keys()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total scalar count across all tensors.
    pub fn numel(&self) -> usize {
        self.params.values().map(Tensor::len).sum()
    }

    /// Weight matrix `[fan_in × fan_out]` drawn from `U(−1/√fan_in, 1/√fan_in)`.
    pub fn init_weight(&mut self, name: impl Into<String>, fan_in: usize, fan_out: usize, rng: &mut impl Rng) {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let data = (0..fan_in * fan_out).map(|_| rng.gen_range(-bound..bound)).collect();
        self.insert(name, Tensor::new(vec![fan_in, fan_out], data).expect("sized"));
    }

    /// Any-shape tensor drawn from `U(−bound, bound)` (embedding tables).
    pub fn init_uniform(&mut self, name: impl Into<String>, shape: &[usize], bound: f64, rng: &mut impl Rng) {
        let n = shape.iter().product();
        let data = (0..n).map(|_| rng.gen_range(-bound..bound)).collect();
        self.insert(name, Tensor::new(shape.to_vec(), data).expect("sized"));
    }

    pub fn init_zeros(&mut self, name: impl Into<String>, shape: &[usize]) {
        self.insert(name, Tensor::zeros(shape));
    }

    pub fn init_filled(&mut self, name: impl Into<String>, shape: &[usize], value: f64) {
        self.insert(name, Tensor::filled(shape, value));
    }

    /// Registers every tensor as a gradient-carrying leaf of `graph`.
    pub fn bind(&self, graph: &mut Graph) -> Binding {
        let vars = self.params.iter().map(|(name, t)| (name.clone(), graph.param(t.clone()))).collect();
        Binding { vars }
    }

    /// Registers every tensor as a constant (no gradient).
    pub fn bind_frozen(&self, graph: &mut Graph) -> Binding {
        let vars = self.params.iter().map(|(name, t)| (name.clone(), graph.constant(t.clone()))).collect();
        Binding { vars }
    }
}

/// Parameter name to graph node mapping for one forward pass.
#[derive(Debug, Clone)]
pub struct Binding {
    vars: HashMap<String, Var>,
}

impl Binding {
    pub fn var(&self, name: &str) -> Result<Var> {
        self.vars.get(name).copied().ok_or_else(|| Error::Contract(format!("unknown parameter `{}`", name)))
    }

    /// Collects per-parameter gradients after [`Graph::backward`].
    pub fn gradients(&self, grads: &mut Gradients) -> BTreeMap<String, Vec<f64>> {
        self.vars.iter().filter_map(|(name, v)| grads.take(*v).map(|g| (name.clone(), g))).collect()
    }
}
