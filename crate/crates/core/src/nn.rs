//! Named parameters and small layer helpers built on the tape.

use std::collections::HashMap;

use rand::Rng;

use crate::autodiff::{Graph, NodeId};
use crate::error::{EngramError, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// A trainable tensor plus its optimizer slots. Moment accumulators and the
/// EMA shadow always share the parameter's shape.
#[derive(Debug, Clone)]
pub struct Parameter<S> {
    pub name: String,
    pub value: Tensor<S>,
    pub first_moment: Tensor<S>,
    pub second_moment: Tensor<S>,
    pub ema: Tensor<S>,
}

impl<S: Scalar> Parameter<S> {
    fn new(name: String, value: Tensor<S>) -> Self {
        let (r, c) = (value.rows, value.cols);
        Parameter {
            name,
            ema: value.clone(),
            value,
            first_moment: Tensor::zeros(r, c),
            second_moment: Tensor::zeros(r, c),
        }
    }
}

/// Ordered collection of named parameters. Insertion order is the canonical
/// order for checkpoints and gradient reductions.
#[derive(Debug, Clone, Default)]
pub struct ParamStore<S> {
    params: Vec<Parameter<S>>,
    index: HashMap<String, usize>,
}

#[derive(Debug, Clone, Copy)]
pub enum Init {
    Zeros,
    Ones,
    /// Gaussian with the given standard deviation.
    Gauss(f64),
    /// Gaussian with std sqrt(2 / (fan_in + fan_out)).
    Xavier,
    Const(f64),
}

impl<S: Scalar> ParamStore<S> {
    pub fn new() -> Self {
        ParamStore { params: Vec::new(), index: HashMap::new() }
    }

    pub fn add<R: Rng>(&mut self, name: &str, rows: usize, cols: usize, init: Init, rng: &mut R) {
        assert!(!self.index.contains_key(name), "duplicate parameter {name}");
        let value = match init {
            Init::Zeros => Tensor::zeros(rows, cols),
            Init::Ones => Tensor::full(rows, cols, S::one()),
            Init::Const(c) => Tensor::full(rows, cols, S::from_f64(c)),
            Init::Gauss(std) => Tensor::randn(rows, cols, std, rng),
            Init::Xavier => {
                let std = (2.0 / (rows + cols) as f64).sqrt();
                Tensor::randn(rows, cols, std, rng)
            }
        };
        self.index.insert(name.to_string(), self.params.len());
        self.params.push(Parameter::new(name.to_string(), value));
    }

    pub fn insert_tensor(&mut self, name: &str, value: Tensor<S>) {
        assert!(!self.index.contains_key(name), "duplicate parameter {name}");
        self.index.insert(name.to_string(), self.params.len());
        self.params.push(Parameter::new(name.to_string(), value));
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn names(&self) -> Vec<String> {
        self.params.iter().map(|p| p.name.clone()).collect()
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    pub fn get(&self, name: &str) -> &Parameter<S> {
        let i = *self.index.get(name).unwrap_or_else(|| panic!("unknown parameter {name}"));
        &self.params[i]
    }

    pub fn get_mut(&mut self, name: &str) -> &mut Parameter<S> {
        let i = *self.index.get(name).unwrap_or_else(|| panic!("unknown parameter {name}"));
        &mut self.params[i]
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter<S>> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter<S>> {
        self.params.iter_mut()
    }

    pub fn total_entries(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    /// Insert every parameter into `g` as a trainable leaf.
    pub fn bind(&self, g: &mut Graph<S>) -> Bound {
        let ids = self.params.iter().map(|p| g.param(p.value.clone())).collect();
        Bound { ids, index: self.index.clone() }
    }

    /// Insert every parameter as a constant leaf (frozen forward passes).
    pub fn bind_frozen(&self, g: &mut Graph<S>) -> Bound {
        let ids = self.params.iter().map(|p| g.constant(p.value.clone())).collect();
        Bound { ids, index: self.index.clone() }
    }

    /// Insert EMA shadow weights as constant leaves.
    pub fn bind_ema(&self, g: &mut Graph<S>) -> Bound {
        let ids = self.params.iter().map(|p| g.constant(p.ema.clone())).collect();
        Bound { ids, index: self.index.clone() }
    }

    /// Gradients for each parameter in store order; zero where the graph has
    /// no gradient (parameter unused by this loss).
    pub fn collect_grads(&self, g: &Graph<S>, bound: &Bound) -> Vec<Tensor<S>> {
        self.params
            .iter()
            .enumerate()
            .map(|(i, p)| match g.grad(bound.ids[i]) {
                Some(t) => t.clone(),
                None => Tensor::zeros(p.value.rows, p.value.cols),
            })
            .collect()
    }

    pub fn to_f64(&self) -> ParamStore<f64> {
        let mut out = ParamStore::new();
        for p in &self.params {
            out.insert_tensor(&p.name, p.value.to_f64());
        }
        out
    }

    /// FNV-1a hash over the raw little-endian value bytes, in store order.
    pub fn value_hash(&self) -> u64 {
        let mut h: u64 = 0xcbf29ce484222325;
        let mut eat = |bytes: &[u8]| {
            for &b in bytes {
                h ^= b as u64;
                h = h.wrapping_mul(0x100000001b3);
            }
        };
        for p in &self.params {
            eat(p.name.as_bytes());
            for v in &p.value.data {
                eat(&(v.as_f64() as f32).to_le_bytes());
            }
        }
        h
    }
}

/// Parameter leaves bound into one graph.
pub struct Bound {
    ids: Vec<NodeId>,
    index: HashMap<String, usize>,
}

impl Bound {
    pub fn get(&self, name: &str) -> NodeId {
        let i = *self.index.get(name).unwrap_or_else(|| panic!("parameter {name} not bound"));
        self.ids[i]
    }

    pub fn ids(&self) -> &[NodeId] {
        &self.ids
    }
}

/// `x @ w + b` with `w` named `{name}.w` and `b` named `{name}.b`.
pub fn linear<S: Scalar>(g: &mut Graph<S>, p: &Bound, name: &str, x: NodeId) -> NodeId {
    let w = p.get(&format!("{name}.w"));
    let b = p.get(&format!("{name}.b"));
    let y = g.matmul(x, w);
    g.add_row_vec(y, b)
}

pub fn add_linear_params<S: Scalar, R: Rng>(
    store: &mut ParamStore<S>,
    rng: &mut R,
    name: &str,
    fan_in: usize,
    fan_out: usize,
    init: Init,
) {
    store.add(&format!("{name}.w"), fan_in, fan_out, init, rng);
    store.add(&format!("{name}.b"), 1, fan_out, Init::Zeros, rng);
}

/// Two-layer perceptron with SiLU in the middle.
pub fn mlp2<S: Scalar>(g: &mut Graph<S>, p: &Bound, name: &str, x: NodeId) -> NodeId {
    let h = linear(g, p, &format!("{name}.fc1"), x);
    let h = g.silu(h);
    linear(g, p, &format!("{name}.fc2"), h)
}

pub fn add_mlp2_params<S: Scalar, R: Rng>(
    store: &mut ParamStore<S>,
    rng: &mut R,
    name: &str,
    fan_in: usize,
    hidden: usize,
    fan_out: usize,
    out_init: Init,
) {
    add_linear_params(store, rng, &format!("{name}.fc1"), fan_in, hidden, Init::Xavier);
    add_linear_params(store, rng, &format!("{name}.fc2"), hidden, fan_out, out_init);
}

/// Layer norm followed by a learned per-feature gain and bias.
pub fn layer_norm_affine<S: Scalar>(g: &mut Graph<S>, p: &Bound, name: &str, x: NodeId) -> NodeId {
    let y = g.layer_norm(x);
    let gain = p.get(&format!("{name}.gain"));
    let bias = p.get(&format!("{name}.bias"));
    let y = g.mul_row_vec(y, gain);
    g.add_row_vec(y, bias)
}

pub fn add_layer_norm_params<S: Scalar, R: Rng>(
    store: &mut ParamStore<S>,
    rng: &mut R,
    name: &str,
    width: usize,
) {
    store.add(&format!("{name}.gain"), 1, width, Init::Ones, rng);
    store.add(&format!("{name}.bias"), 1, width, Init::Zeros, rng);
}

pub struct AttnOutput {
    pub out: NodeId,
    /// Per-head attention weight matrices (rows sum to one).
    pub weights: Vec<NodeId>,
}

/// Multi-head scaled dot-product attention with an optional additive logit
/// bias shared across heads. Parameters: `{name}.{wq,wk,wv,wo}` plus output
/// bias `{name}.bo`.
pub fn multihead_attention<S: Scalar>(
    g: &mut Graph<S>,
    p: &Bound,
    name: &str,
    queries: NodeId,
    keys: NodeId,
    values: NodeId,
    heads: usize,
    logit_bias: Option<NodeId>,
) -> AttnOutput {
    let d = g.cols(queries);
    assert_eq!(d % heads, 0, "width must divide into heads");
    let dh = d / heads;
    let q = g.matmul(queries, p.get(&format!("{name}.wq")));
    let k = g.matmul(keys, p.get(&format!("{name}.wk")));
    let v = g.matmul(values, p.get(&format!("{name}.wv")));
    let scale = S::from_f64(1.0 / (dh as f64).sqrt());
    let mut head_outs = Vec::with_capacity(heads);
    let mut weights = Vec::with_capacity(heads);
    for h in 0..heads {
        let qh = g.slice_cols(q, h * dh, dh);
        let kh = g.slice_cols(k, h * dh, dh);
        let vh = g.slice_cols(v, h * dh, dh);
        let kht = g.transpose(kh);
        let logits = g.matmul(qh, kht);
        let mut logits = g.scale(logits, scale);
        if let Some(b) = logit_bias {
            logits = g.add(logits, b);
        }
        let a = g.softmax(logits);
        weights.push(a);
        head_outs.push(g.matmul(a, vh));
    }
    let concat = g.concat_cols(&head_outs);
    let out = g.matmul(concat, p.get(&format!("{name}.wo")));
    let out = g.add_row_vec(out, p.get(&format!("{name}.bo")));
    AttnOutput { out, weights }
}

pub fn add_attention_params<S: Scalar, R: Rng>(
    store: &mut ParamStore<S>,
    rng: &mut R,
    name: &str,
    width: usize,
    out_init: Init,
) {
    store.add(&format!("{name}.wq"), width, width, Init::Xavier, rng);
    store.add(&format!("{name}.wk"), width, width, Init::Xavier, rng);
    store.add(&format!("{name}.wv"), width, width, Init::Xavier, rng);
    store.add(&format!("{name}.wo"), width, width, out_init, rng);
    store.add(&format!("{name}.bo"), 1, width, Init::Zeros, rng);
}

/// Check a gradient tensor against its parameter's shape.
pub fn check_grad_shapes<S: Scalar>(store: &ParamStore<S>, grads: &[Tensor<S>]) -> Result<()> {
    if grads.len() != store.len() {
        return Err(EngramError::ShapeMismatch {
            context: "gradient list".into(),
            expected: format!("{} tensors", store.len()),
            got: format!("{} tensors", grads.len()),
        });
    }
    for (p, gr) in store.iter().zip(grads) {
        if (gr.rows, gr.cols) != (p.value.rows, p.value.cols) {
            return Err(EngramError::ShapeMismatch {
                context: format!("gradient for {}", p.name),
                expected: format!("{}x{}", p.value.rows, p.value.cols),
                got: format!("{}x{}", gr.rows, gr.cols),
            });
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn attention_single_key_weight_is_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut store: ParamStore<f64> = ParamStore::new();
        add_attention_params(&mut store, &mut rng, "attn", 8, Init::Xavier);
        let mut g = Graph::new();
        let b = store.bind(&mut g);
        let q = g.constant(Tensor::randn(3, 8, 1.0, &mut rng));
        let kv = g.constant(Tensor::randn(1, 8, 1.0, &mut rng));
        let out = multihead_attention(&mut g, &b, "attn", q, kv, kv, 2, None);
        for w in &out.weights {
            assert!(g.value(*w).data.iter().all(|&x| (x - 1.0).abs() < 1e-12));
        }
    }

    #[test]
    fn softmax_shift_invariance() {
        let mut g: Graph<f64> = Graph::new();
        let x = g.constant(Tensor::new(1, 4, vec![0.1, 0.4, -0.3, 2.0]));
        let y1 = g.softmax(x);
        let shifted = g.add_scalar(x, 5.0);
        let y2 = g.softmax(shifted);
        let a = g.value(y1).clone();
        let b = g.value(y2).clone();
        for (u, v) in a.data.iter().zip(&b.data) {
            assert!((u - v).abs() < 1e-12);
        }
    }

    #[test]
    fn value_hash_changes_with_values() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store: ParamStore<f32> = ParamStore::new();
        store.add("p", 2, 2, Init::Gauss(1.0), &mut rng);
        let h0 = store.value_hash();
        store.get_mut("p").value.data[0] += 0.5;
        assert_ne!(h0, store.value_hash());
    }
}
