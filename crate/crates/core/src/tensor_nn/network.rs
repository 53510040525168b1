use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::matrix::Matrix;
use crate::error::{Error, Result};

/// Affine layer `y = W x + b` with `W` stored as `out × in`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

impl Dense {
    pub fn new(weight: Matrix, bias: Vec<f64>) -> Result<Self> {
        if bias.len() != weight.rows() {
            return Err(Error::shape(
                "Dense::new",
                format!("bias {} for weight {:?}", bias.len(), weight.shape()),
            ));
        }
        Ok(Dense { weight, bias })
    }

    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Dense {
            weight: Matrix::zeros(out_dim, in_dim),
            bias: vec![0.0; out_dim],
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut y = self.weight.matvec(x);
        for (v, b) in y.iter_mut().zip(&self.bias) {
            *v += b;
        }
        y
    }

    fn zeros_like(&self) -> Self {
        Dense::zeros(self.in_dim(), self.out_dim())
    }
}

/// Layer widths of the policy network.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkShape {
    pub input: usize,
    pub hidden: Vec<usize>,
    pub vocab: usize,
    pub perception: usize,
}

/// Feed-forward policy: rectified-linear hidden stack feeding two linear heads,
/// one producing `M` trajectory logits and one producing perception outputs.
///
/// The same struct doubles as the gradient container for itself.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkWeights {
    pub hidden: Vec<Dense>,
    pub plan_head: Dense,
    pub perception_head: Dense,
}

/// Gradients with the exact layout of [`NetworkWeights`].
pub type GradientSet = NetworkWeights;

/// Output of one forward pass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyOutput {
    pub logits: Vec<f64>,
    pub perception: Vec<f64>,
}

impl PolicyOutput {
    pub fn probs(&self) -> Vec<f64> {
        softmax(&self.logits)
    }

    pub fn log_probs(&self) -> Vec<f64> {
        log_softmax(&self.logits)
    }
}

/// Intermediate values needed by [`NetworkWeights::backward`].
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// `activations[0]` is the input, `activations[i + 1]` the output of hidden layer `i`.
    pub activations: Vec<Vec<f64>>,
    pre_activations: Vec<Vec<f64>>,
    masks: Option<Vec<Vec<f64>>>,
}

impl ForwardCache {
    /// Input to both heads.
    pub fn embedding(&self) -> &[f64] {
        self.activations.last().expect("cache always holds the input")
    }
}

/// Inverted-dropout multipliers (0 or 1/(1-p)) for each hidden layer.
#[derive(Debug, Clone)]
pub struct DropoutMask(pub Vec<Vec<f64>>);

impl DropoutMask {
    pub fn sample<R: Rng + ?Sized>(shape: &NetworkShape, p: f64, rng: &mut R) -> Self {
        let keep = 1.0 - p;
        DropoutMask(
            shape
                .hidden
                .iter()
                .map(|&w| {
                    (0..w)
                        .map(|_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
                        .collect()
                })
                .collect(),
        )
    }
}

impl NetworkWeights {
    /// He-normal hidden layers, Xavier-normal heads, zero biases.
    pub fn init(shape: &NetworkShape, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut prev = shape.input;
        let mut hidden = Vec::with_capacity(shape.hidden.len());
        for &w in &shape.hidden {
            let std = (2.0 / prev as f64).sqrt();
            hidden.push(Dense {
                weight: Matrix::randn(w, prev, std, &mut rng),
                bias: vec![0.0; w],
            });
            prev = w;
        }
        let head = |out: usize, rng: &mut ChaCha8Rng| Dense {
            weight: Matrix::randn(out, prev, (2.0 / (prev + out) as f64).sqrt(), rng),
            bias: vec![0.0; out],
        };
        let plan_head = head(shape.vocab, &mut rng);
        let perception_head = head(shape.perception, &mut rng);
        NetworkWeights {
            hidden,
            plan_head,
            perception_head,
        }
    }

    pub fn zeros(shape: &NetworkShape) -> Self {
        let mut prev = shape.input;
        let hidden = shape
            .hidden
            .iter()
            .map(|&w| {
                let d = Dense::zeros(prev, w);
                prev = w;
                d
            })
            .collect();
        NetworkWeights {
            hidden,
            plan_head: Dense::zeros(prev, shape.vocab),
            perception_head: Dense::zeros(prev, shape.perception),
        }
    }

    pub fn zeros_like(&self) -> Self {
        NetworkWeights {
            hidden: self.hidden.iter().map(Dense::zeros_like).collect(),
            plan_head: self.plan_head.zeros_like(),
            perception_head: self.perception_head.zeros_like(),
        }
    }

    pub fn shape(&self) -> NetworkShape {
        NetworkShape {
            input: self.input_dim(),
            hidden: self.hidden.iter().map(Dense::out_dim).collect(),
            vocab: self.plan_head.out_dim(),
            perception: self.perception_head.out_dim(),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.hidden
            .first()
            .map_or(self.plan_head.in_dim(), Dense::in_dim)
    }

    /// Width of the representation feeding the heads.
    pub fn embed_dim(&self) -> usize {
        self.plan_head.in_dim()
    }

    pub fn vocab_size(&self) -> usize {
        self.plan_head.out_dim()
    }

    pub fn perception_dim(&self) -> usize {
        self.perception_head.out_dim()
    }

    /// Checks that adjacent layers compose.
    pub fn validate(&self) -> Result<()> {
        let mut prev = self.input_dim();
        for (i, layer) in self.hidden.iter().enumerate() {
            if layer.in_dim() != prev || layer.bias.len() != layer.out_dim() {
                return Err(Error::shape(
                    format!("hidden[{i}]"),
                    format!("expects {} inputs, previous layer gives {prev}", layer.in_dim()),
                ));
            }
            prev = layer.out_dim();
        }
        for (name, head) in [("plan_head", &self.plan_head), ("perception_head", &self.perception_head)] {
            if head.in_dim() != prev || head.bias.len() != head.out_dim() {
                return Err(Error::shape(
                    name,
                    format!("expects {} inputs, hidden stack gives {prev}", head.in_dim()),
                ));
            }
        }
        Ok(())
    }

    pub fn forward(&self, features: &[f64]) -> Result<PolicyOutput> {
        self.forward_cached(features, None).map(|(out, _)| out)
    }

    pub fn forward_cached(
        &self,
        features: &[f64],
        dropout: Option<&DropoutMask>,
    ) -> Result<(PolicyOutput, ForwardCache)> {
        let cache = self.trunk(features, dropout)?;
        let emb = cache.embedding();
        let out = PolicyOutput {
            logits: self.plan_head.apply(emb),
            perception: self.perception_head.apply(emb),
        };
        Ok((out, cache))
    }

    /// Runs the hidden stack only.
    pub fn trunk(&self, features: &[f64], dropout: Option<&DropoutMask>) -> Result<ForwardCache> {
        if features.len() != self.input_dim() {
            let location = if self.hidden.is_empty() { "plan_head".to_string() } else { "hidden[0]".to_string() };
            return Err(Error::shape(
                location,
                format!("expected {} features, got {}", self.input_dim(), features.len()),
            ));
        }
        let mut activations = Vec::with_capacity(self.hidden.len() + 1);
        let mut pre_activations = Vec::with_capacity(self.hidden.len());
        activations.push(features.to_vec());
        for (i, layer) in self.hidden.iter().enumerate() {
            let x = activations.last().expect("non-empty");
            if x.len() != layer.in_dim() {
                return Err(Error::shape(
                    format!("hidden[{i}]"),
                    format!("expected {} inputs, got {}", layer.in_dim(), x.len()),
                ));
            }
            let z = layer.apply(x);
            let mut a: Vec<f64> = z.iter().map(|&v| v.max(0.0)).collect();
            if let Some(mask) = dropout {
                for (v, m) in a.iter_mut().zip(&mask.0[i]) {
                    *v *= m;
                }
            }
            pre_activations.push(z);
            activations.push(a);
        }
        Ok(ForwardCache {
            activations,
            pre_activations,
            masks: dropout.map(|m| m.0.clone()),
        })
    }

    /// Reverse-mode gradients of a scalar loss given its gradient at both heads.
    pub fn backward(
        &self,
        cache: &ForwardCache,
        d_logits: &[f64],
        d_perception: &[f64],
    ) -> Result<GradientSet> {
        let mut grads = self.zeros_like();
        self.backward_into(cache, d_logits, d_perception, 1.0, &mut grads)?;
        Ok(grads)
    }

    /// Adds `scale` times the gradients of [`backward`](Self::backward) into `grads`.
    pub fn backward_into(
        &self,
        cache: &ForwardCache,
        d_logits: &[f64],
        d_perception: &[f64],
        scale: f64,
        grads: &mut GradientSet,
    ) -> Result<()> {
        check_upstream("logits", d_logits, self.vocab_size())?;
        check_upstream("perception", d_perception, self.perception_dim())?;
        let emb = cache.embedding();

        grads.plan_head.weight.add_outer(d_logits, emb, scale);
        axpy(&mut grads.plan_head.bias, d_logits, scale);
        grads.perception_head.weight.add_outer(d_perception, emb, scale);
        axpy(&mut grads.perception_head.bias, d_perception, scale);

        let mut upstream = self.plan_head.weight.matvec_t(d_logits);
        for (u, v) in upstream
            .iter_mut()
            .zip(self.perception_head.weight.matvec_t(d_perception))
        {
            *u += v;
        }
        self.backprop_hidden(cache, upstream, scale, grads);
        Ok(())
    }

    /// Propagates a gradient at the embedding down through the hidden stack,
    /// adding `scale` times the hidden-layer gradients into `grads`.
    fn backprop_hidden(&self, cache: &ForwardCache, d_embedding: Vec<f64>, scale: f64, grads: &mut GradientSet) {
        let mut upstream = d_embedding;
        for i in (0..self.hidden.len()).rev() {
            let mut d_pre = upstream;
            if let Some(masks) = &cache.masks {
                for (d, m) in d_pre.iter_mut().zip(&masks[i]) {
                    *d *= m;
                }
            }
            for (d, &z) in d_pre.iter_mut().zip(&cache.pre_activations[i]) {
                if z <= 0.0 {
                    *d = 0.0;
                }
            }
            grads.hidden[i].weight.add_outer(&d_pre, &cache.activations[i], scale);
            axpy(&mut grads.hidden[i].bias, &d_pre, scale);
            if i > 0 {
                upstream = self.hidden[i].weight.matvec_t(&d_pre);
            } else {
                break;
            }
        }
    }

    /// Total number of scalar parameters.
    pub fn parameter_count(&self) -> usize {
        self.slices().iter().map(|s| s.len()).sum()
    }

    /// Sum of `in × out` over all linear maps (weights only).
    pub fn weight_count(&self) -> usize {
        self.hidden
            .iter()
            .chain([&self.plan_head, &self.perception_head])
            .map(|d| d.in_dim() * d.out_dim())
            .sum()
    }
}

fn axpy(y: &mut [f64], x: &[f64], a: f64) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

fn check_upstream(name: &str, grad: &[f64], expected: usize) -> Result<()> {
    if grad.len() != expected {
        return Err(Error::shape(
            name,
            format!("upstream gradient has {} entries, head has {expected}", grad.len()),
        ));
    }
    if let Some(i) = grad.iter().position(|v| !v.is_finite()) {
        return Err(Error::Numeric(format!("upstream gradient at {name}[{i}]")));
    }
    Ok(())
}

/// Flat read/write access to every trainable tensor, in a fixed order.
pub trait Params {
    fn slices(&self) -> Vec<&[f64]>;
    fn slices_mut(&mut self) -> Vec<&mut [f64]>;

    fn all_finite(&self) -> bool {
        self.slices().iter().all(|s| s.iter().all(|v| v.is_finite()))
    }

    fn flatten(&self) -> Vec<f64> {
        self.slices().concat()
    }
}

impl Params for NetworkWeights {
    fn slices(&self) -> Vec<&[f64]> {
        let mut out = Vec::with_capacity(2 * self.hidden.len() + 4);
        for d in self.hidden.iter().chain([&self.plan_head, &self.perception_head]) {
            out.push(d.weight.data());
            out.push(d.bias.as_slice());
        }
        out
    }

    fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::with_capacity(2 * self.hidden.len() + 4);
        for d in self
            .hidden
            .iter_mut()
            .chain([&mut self.plan_head, &mut self.perception_head])
        {
            out.push(d.weight.data_mut());
            out.push(d.bias.as_mut_slice());
        }
        out
    }
}

/// `params ← params − lr · grads`.
pub fn sgd_step<P: Params>(params: &mut P, grads: &P, learning_rate: f64) -> Result<()> {
    let g = grads.slices();
    let mut p = params.slices_mut();
    if g.len() != p.len() || g.iter().zip(p.iter()).any(|(a, b)| a.len() != b.len()) {
        return Err(Error::shape("sgd_step", "gradients are not shape-congruent with parameters"));
    }
    for (ps, gs) in p.iter_mut().zip(g) {
        for (w, d) in ps.iter_mut().zip(gs) {
            *w -= learning_rate * d;
        }
    }
    Ok(())
}

/// In-place `acc += scale · other` over congruent parameter sets.
pub fn accumulate<P: Params>(acc: &mut P, other: &P, scale: f64) -> Result<()> {
    sgd_step(acc, other, -scale)
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|&z| (z - max).exp()).sum::<f64>().ln();
    logits.iter().map(|&z| z - lse).collect()
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}
