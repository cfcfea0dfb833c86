use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::head::ForwardTrace;
use crate::num::Real;
use crate::ontology::{CondensedHierarchy, NodeId, NodeKind};

/// BCE inputs are clamped to `[CLAMP, 1 - CLAMP]`.
pub const CLAMP: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConceptLossKind {
    #[default]
    #[serde(alias = "bce")]
    BinaryCrossEntropy,
    #[serde(alias = "mse")]
    MeanSquaredError,
}

impl std::str::FromStr for ConceptLossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bce" | "binary_cross_entropy" => Ok(Self::BinaryCrossEntropy),
            "mse" | "mean_squared_error" => Ok(Self::MeanSquaredError),
            other => Err(Error::Config(format!("unknown concept loss {other:?} (expected bce or mse)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub lambda: f64,
    pub concept_loss: ConceptLossKind,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self { lambda: 5.0, concept_loss: ConceptLossKind::BinaryCrossEntropy }
    }
}

/// Bit m is 1 iff concept m (in `h.concepts()` order) is an ancestor of
/// `category`.
pub fn concept_targets(h: &CondensedHierarchy, category: NodeId) -> Result<Vec<f64>> {
    if h.kind(category)? != NodeKind::Category {
        return Err(Error::UnknownLabel(category));
    }
    let chain = h.ancestor_chain(category)?;
    Ok(h.concepts().iter().map(|c| if chain.contains(c) { 1.0 } else { 0.0 }).collect())
}

/// `-ln p[label]`.
pub fn category_loss<T: Real>(probs: &[T], label: usize) -> f64 {
    -probs[label].to_f64().ln()
}

/// Same quantity computed from logits, which stays finite when the softmax
/// underflows.
pub(crate) fn category_loss_from_logits<T: Real>(logits: &[T], label: usize) -> f64 {
    let max = logits.iter().fold(f64::NEG_INFINITY, |m, x| m.max(x.to_f64()));
    let lse = max + logits.iter().map(|x| (x.to_f64() - max).exp()).sum::<f64>().ln();
    lse - logits[label].to_f64()
}

/// Mean over concepts of per-concept BCE or squared error. Zero when there
/// are no concepts.
pub fn concept_loss<T: Real>(z: &[T], targets: &[f64], kind: ConceptLossKind) -> f64 {
    if z.is_empty() {
        return 0.0;
    }
    let total: f64 = z
        .iter()
        .zip(targets)
        .map(|(&z, &t)| {
            let z = z.to_f64();
            match kind {
                ConceptLossKind::BinaryCrossEntropy => {
                    let zc = z.clamp(CLAMP, 1.0 - CLAMP);
                    -(t * zc.ln() + (1.0 - t) * (1.0 - zc).ln())
                }
                ConceptLossKind::MeanSquaredError => (z - t) * (z - t),
            }
        })
        .sum();
    total / z.len() as f64
}

/// `(L_CE, L_CON)` for one trace.
pub fn loss_terms<T: Real>(
    trace: &ForwardTrace<T>,
    label: usize,
    targets: &[f64],
    kind: ConceptLossKind,
) -> (f64, f64) {
    let ce = if trace.logits.is_empty() {
        category_loss(&trace.probs, label)
    } else {
        category_loss_from_logits(&trace.logits, label)
    };
    (ce, concept_loss(&trace.z, targets, kind))
}

/// `L_CE + lambda * L_CON`.
pub fn combined_loss<T: Real>(trace: &ForwardTrace<T>, label: usize, targets: &[f64], cfg: &LossConfig) -> f64 {
    let (ce, con) = loss_terms(trace, label, targets, cfg.concept_loss);
    ce + cfg.lambda * con
}

/// Derivative of the concept term with respect to the gate pre-activation,
/// before the lambda and batch scaling.
pub(crate) fn concept_grad(z: f64, t: f64, m: usize, kind: ConceptLossKind) -> f64 {
    let m = m as f64;
    match kind {
        // The sigmoid and log derivatives cancel.
        ConceptLossKind::BinaryCrossEntropy => (z - t) / m,
        ConceptLossKind::MeanSquaredError => 2.0 * (z - t) / m * z * (1.0 - z),
    }
}
