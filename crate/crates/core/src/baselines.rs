//! Single dense layer emitting N category logits and M independent concept
//! logits, trained with the same losses as the gated head.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::decoder::{argmax, Prediction};
use crate::error::{Error, Result};
use crate::num::{dot, softmax, Real};
use crate::ontology::{CondensedHierarchy, NodeId};
use crate::training::loss::{category_loss_from_logits, concept_grad, concept_loss, LossConfig};
use crate::training::Model;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlatTopology {
    pub d0: usize,
    /// Ascending id order, matching the gated head.
    pub categories: Vec<NodeId>,
    /// Hierarchy preorder, matching the gated head.
    pub concepts: Vec<NodeId>,
}

/// Parameters are `(N + M) x d0` weights, one row per output (categories
/// first), followed by `N + M` biases.
impl FlatTopology {
    pub fn new(h: &CondensedHierarchy, d0: usize) -> Result<Self> {
        if d0 == 0 {
            return Err(Error::InvalidArgument("d0 must be at least 1".into()));
        }
        Ok(Self { d0, categories: h.categories(), concepts: h.concepts() })
    }

    pub fn num_outputs(&self) -> usize {
        self.categories.len() + self.concepts.len()
    }

    pub fn num_params(&self) -> usize {
        self.num_outputs() * (self.d0 + 1)
    }

    fn bias_offset(&self) -> usize {
        self.num_outputs() * self.d0
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("topology serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn hash(&self) -> [u8; 32] {
        Sha256::digest(self.to_json().as_bytes()).into()
    }

    /// Glorot-uniform weights, zero biases.
    pub fn init_parameters(&self, seed: u64) -> Vec<f64> {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let s = (6.0 / (self.d0 + self.num_outputs()) as f64).sqrt();
        let mut p = vec![0.0; self.num_params()];
        for w in &mut p[..self.bias_offset()] {
            *w = rng.random_range(-s..s);
        }
        p
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlatOutput<T> {
    pub logits: Vec<T>,
    pub probs: Vec<T>,
    pub z: Vec<T>,
}

pub fn flat_forward<T: Real>(p: &[T], t: &FlatTopology, features: &[T]) -> Result<FlatOutput<T>> {
    if features.len() != t.d0 {
        return Err(Error::ShapeMismatch { expected: t.d0, found: features.len() });
    }
    if p.len() != t.num_params() {
        return Err(Error::ShapeMismatch { expected: t.num_params(), found: p.len() });
    }
    let n = t.categories.len();
    let b = t.bias_offset();
    let out: Vec<T> = (0..t.num_outputs()).map(|o| dot(&p[o * t.d0..(o + 1) * t.d0], features) + p[b + o]).collect();
    let logits = out[..n].to_vec();
    let probs = softmax(&logits);
    let z = out[n..].iter().map(|v| v.sigmoid()).collect();
    Ok(FlatOutput { logits, probs, z })
}

/// Independent thresholding: every concept with `z >= threshold` is
/// reported, whether or not the result forms a path.
pub fn flat_decode<T: Real>(out: &FlatOutput<T>, t: &FlatTopology, threshold: f64) -> Prediction {
    let best = argmax(&out.probs);
    let bits: Vec<bool> = out.z.iter().map(|z| z.to_f64() >= threshold).collect();
    let (chain, chain_scores) =
        t.concepts.iter().zip(&out.z).zip(&bits).filter(|(_, &on)| on).map(|((&c, z), _)| (c, z.to_f64())).unzip();
    Prediction {
        category: t.categories[best],
        category_prob: out.probs[best].to_f64(),
        chain,
        chain_scores,
        z_thresholded: bits,
    }
}

impl Model for FlatTopology {
    fn num_params(&self) -> usize {
        FlatTopology::num_params(self)
    }

    fn d0(&self) -> usize {
        self.d0
    }

    fn num_categories(&self) -> usize {
        self.categories.len()
    }

    fn num_concepts(&self) -> usize {
        self.concepts.len()
    }

    fn concept_mask(&self) -> Vec<bool> {
        let n = self.categories.len();
        let mut mask = vec![false; self.num_params()];
        for o in n..self.num_outputs() {
            mask[o * self.d0..(o + 1) * self.d0].iter_mut().for_each(|m| *m = true);
            mask[self.bias_offset() + o] = true;
        }
        mask
    }

    fn loss_and_grad<T: Real>(
        &self,
        p: &[T],
        features: &[T],
        label: usize,
        targets: &[f64],
        cfg: &LossConfig,
        scale: T,
        grad: &mut [T],
    ) -> Result<(f64, f64)> {
        let out = flat_forward(p, self, features)?;
        let n = self.categories.len();
        let m = self.concepts.len();
        if targets.len() != m || label >= n || grad.len() != p.len() {
            return Err(Error::TraceMismatch("targets or label do not fit the flat head".into()));
        }
        let b = self.bias_offset();
        let lambda = T::from_f64(cfg.lambda);
        for o in 0..self.num_outputs() {
            let d = if o < n {
                let pj = out.probs[o];
                (if o == label { pj - T::ONE } else { pj }) * scale
            } else {
                let k = o - n;
                scale * lambda * T::from_f64(concept_grad(out.z[k].to_f64(), targets[k], m, cfg.concept_loss))
            };
            for (g, &x) in grad[o * self.d0..(o + 1) * self.d0].iter_mut().zip(features) {
                *g += d * x;
            }
            grad[b + o] += d;
        }
        Ok((category_loss_from_logits(&out.logits, label), concept_loss(&out.z, targets, cfg.concept_loss)))
    }

    fn outputs<T: Real>(&self, p: &[T], features: &[T]) -> Result<(Vec<T>, Vec<T>)> {
        let out = flat_forward(p, self, features)?;
        Ok((out.probs, out.z))
    }

    fn decode<T: Real>(&self, p: &[T], features: &[T], _h: &CondensedHierarchy, threshold: f64) -> Result<Prediction> {
        Ok(flat_decode(&flat_forward(p, self, features)?, self, threshold))
    }
}
