//! Low-rank adapter ensembles on the planning head.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor_nn::{softmax, Dense, Matrix, NetworkWeights, Params, PolicyOutput};

/// Standard deviation of the Gaussian `A` initialization.
pub const A_INIT_STD: f64 = 0.02;

/// Rank-`r` update `(1/r) A B` of a `d_out × d_in` layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoraPair {
    /// `d_out × r`
    pub a: Matrix,
    /// `r × d_in`
    pub b: Matrix,
}

impl LoraPair {
    pub fn rank(&self) -> usize {
        self.a.cols()
    }

    /// Dense `(1/r) A B`.
    pub fn delta(&self) -> Result<Matrix> {
        let mut d = self.a.matmul(&self.b)?;
        d.scale(1.0 / self.rank() as f64);
        Ok(d)
    }

    fn check(&self, layer: &Dense, name: &str) -> Result<()> {
        let ok = self.a.rows() == layer.out_dim()
            && self.b.cols() == layer.in_dim()
            && self.a.cols() == self.b.rows()
            && self.rank() >= 1;
        if ok {
            Ok(())
        } else {
            Err(Error::shape(
                name,
                format!(
                    "adapter A {:?}, B {:?} do not compose with layer {}×{}",
                    self.a.shape(),
                    self.b.shape(),
                    layer.out_dim(),
                    layer.in_dim()
                ),
            ))
        }
    }

    /// `W x + b + (1/r) A (B x)` together with the intermediate `B x`.
    fn apply(&self, layer: &Dense, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let bx = self.b.matvec(x);
        let abx = self.a.matvec(&bx);
        let inv_r = 1.0 / self.rank() as f64;
        let mut y = layer.apply(x);
        for (v, d) in y.iter_mut().zip(abx) {
            *v += inv_r * d;
        }
        (y, bx)
    }
}

/// One specialist: a LoRA pair on each adapted layer (only the planning head).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdapterMember {
    pub plan_head: LoraPair,
}

impl Params for AdapterMember {
    fn slices(&self) -> Vec<&[f64]> {
        vec![self.plan_head.a.data(), self.plan_head.b.data()]
    }

    fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        let LoraPair { a, b } = &mut self.plan_head;
        vec![a.data_mut(), b.data_mut()]
    }
}

impl AdapterMember {
    pub fn zeros_like(&self) -> Self {
        AdapterMember {
            plan_head: LoraPair {
                a: Matrix::zeros(self.plan_head.a.rows(), self.plan_head.a.cols()),
                b: Matrix::zeros(self.plan_head.b.rows(), self.plan_head.b.cols()),
            },
        }
    }

    /// Adapted planning logits from a trunk embedding.
    pub fn logits(&self, base: &NetworkWeights, embedding: &[f64]) -> Vec<f64> {
        self.plan_head.apply(&base.plan_head, embedding).0
    }

    /// Gradient with respect to `A` and `B` of a loss whose gradient at the
    /// adapted logits is `d_logits`. The base weights are constants here.
    pub fn gradient(&self, embedding: &[f64], d_logits: &[f64]) -> AdapterMember {
        let r = self.plan_head.rank();
        let inv_r = 1.0 / r as f64;
        let bx = self.plan_head.b.matvec(embedding);
        let at_g = self.plan_head.a.matvec_t(d_logits);
        let mut g = self.zeros_like();
        g.plan_head.a.add_outer(d_logits, &bx, inv_r);
        g.plan_head.b.add_outer(&at_g, embedding, inv_r);
        g
    }
}

/// `K` independently initialized specialists sharing one frozen base.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdapterEnsemble {
    pub members: Vec<AdapterMember>,
}

/// Gaussian `A`, zero `B`: every member reproduces the base at initialization.
pub fn init_ensemble(base: &NetworkWeights, k: usize, rank: usize, seed: u64) -> Result<AdapterEnsemble> {
    let (d_out, d_in) = base.plan_head.weight.shape();
    if k == 0 {
        return Err(Error::Config("ensemble needs at least one member".into()));
    }
    if rank == 0 || rank > d_in.min(d_out) {
        return Err(Error::Config(format!(
            "adapter rank {rank} must lie in [1, {}]",
            d_in.min(d_out)
        )));
    }
    let members = (0..k)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(i as u64));
            AdapterMember {
                plan_head: LoraPair {
                    a: Matrix::randn(d_out, rank, A_INIT_STD, &mut rng),
                    b: Matrix::zeros(rank, d_in),
                },
            }
        })
        .collect();
    Ok(AdapterEnsemble { members })
}

impl AdapterEnsemble {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn rank(&self) -> usize {
        self.members.first().map_or(0, |m| m.plan_head.rank())
    }

    /// Checks every member against the base planning head.
    pub fn validate(&self, base: &NetworkWeights) -> Result<()> {
        if self.members.is_empty() {
            return Err(Error::Input("adapter ensemble is empty".into()));
        }
        let rank = self.rank();
        for (i, m) in self.members.iter().enumerate() {
            m.plan_head.check(&base.plan_head, &format!("member[{i}].plan_head"))?;
            if m.plan_head.rank() != rank {
                return Err(Error::shape(format!("member[{i}]"), "members disagree on rank"));
            }
        }
        Ok(())
    }

    /// Trainable parameters across all members.
    pub fn parameter_count(&self) -> usize {
        self.members.iter().map(|m| m.slices().iter().map(|s| s.len()).sum::<usize>()).sum()
    }
}

/// Forward pass of the base with one member's adapters applied.
pub fn adapted_forward(base: &NetworkWeights, member: &AdapterMember, features: &[f64]) -> Result<PolicyOutput> {
    member.plan_head.check(&base.plan_head, "plan_head")?;
    let cache = base.trunk(features, None)?;
    let emb = cache.embedding();
    Ok(PolicyOutput {
        logits: member.logits(base, emb),
        perception: base.perception_head.apply(emb),
    })
}

/// Ensemble mean probabilities and scalar uncertainty
/// `mean_m (1/K) Σ_k (p_k[m] − p̄[m])²`.
///
/// Statistics are accumulated as offsets from the first member, so identical
/// members give exactly their own probabilities and zero uncertainty.
pub fn ensemble_from_probs(member_probs: &[Vec<f64>]) -> (Vec<f64>, f64) {
    let Some(first) = member_probs.first() else {
        return (Vec::new(), 0.0);
    };
    let k = member_probs.len() as f64;
    let m = first.len();
    let mut shift = vec![0.0; m];
    for p in member_probs {
        for ((acc, v), f) in shift.iter_mut().zip(p).zip(first) {
            *acc += (v - f) / k;
        }
    }
    let mut var = 0.0;
    for p in member_probs {
        for ((v, f), s) in p.iter().zip(first).zip(&shift) {
            var += (v - f - s).powi(2);
        }
    }
    let mean = first.iter().zip(&shift).map(|(f, s)| f + s).collect();
    (mean, var / (k * m.max(1) as f64))
}

/// Member probabilities from a trunk embedding.
pub fn member_probs(base: &NetworkWeights, ensemble: &AdapterEnsemble, embedding: &[f64]) -> Vec<Vec<f64>> {
    ensemble
        .members
        .iter()
        .map(|m| softmax(&m.logits(base, embedding)))
        .collect()
}

pub fn ensemble_forward(base: &NetworkWeights, ensemble: &AdapterEnsemble, features: &[f64]) -> Result<(Vec<f64>, f64)> {
    ensemble.validate(base)?;
    let cache = base.trunk(features, None)?;
    Ok(ensemble_from_probs(&member_probs(base, ensemble, cache.embedding())))
}

/// Independent per-member SGD: member `k` moves by `−(η/K) g_k`.
pub fn ensemble_step(ensemble: &mut AdapterEnsemble, grads: &[AdapterMember], learning_rate: f64) -> Result<()> {
    if grads.len() != ensemble.members.len() {
        return Err(Error::shape(
            "ensemble_step",
            format!("{} gradients for {} members", grads.len(), ensemble.members.len()),
        ));
    }
    let eta = learning_rate / ensemble.members.len() as f64;
    for (m, g) in ensemble.members.iter_mut().zip(grads) {
        crate::tensor_nn::sgd_step(m, g, eta)?;
    }
    Ok(())
}
