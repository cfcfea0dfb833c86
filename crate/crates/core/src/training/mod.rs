//! Losses, reverse-mode gradients, RMSProp and the staged training loop.

mod backward;
mod config;
pub mod gradcheck;
pub(crate) mod loss;
mod optimizer;
mod trainer;

pub use backward::{backward, GradientSet};
pub use config::TrainConfig;
pub use loss::{category_loss, combined_loss, concept_loss, concept_targets, loss_terms, ConceptLossKind, LossConfig};
pub use optimizer::{OptimizerConfig, OptimizerState, RMS_EPS};
pub use trainer::{evaluate_model, predict_all, train, Decoding, EpochRecord, TrainOutcome, EPOCH_CSV_HEADER};

use crate::decoder::{decode, Prediction};
use crate::error::Result;
use crate::head::{forward_values, HeadTopology};
use crate::num::Real;
use crate::ontology::CondensedHierarchy;

/// A trainable head: the gated multilayer head or the flat baseline.
pub trait Model: Sync {
    fn num_params(&self) -> usize;
    fn d0(&self) -> usize;
    fn num_categories(&self) -> usize;
    fn num_concepts(&self) -> usize;

    /// Parameters that belong to the concept side; only these move during
    /// the first training stage.
    fn concept_mask(&self) -> Vec<bool>;

    /// Adds `scale` times the gradient of `L_CE + lambda * L_CON` into
    /// `grad` and returns `(L_CE, L_CON)`.
    #[allow(clippy::too_many_arguments)]
    fn loss_and_grad<T: Real>(
        &self,
        p: &[T],
        features: &[T],
        label: usize,
        targets: &[f64],
        cfg: &LossConfig,
        scale: T,
        grad: &mut [T],
    ) -> Result<(f64, f64)>;

    /// Category probabilities and concept scores.
    fn outputs<T: Real>(&self, p: &[T], features: &[T]) -> Result<(Vec<T>, Vec<T>)>;

    fn decode<T: Real>(&self, p: &[T], features: &[T], h: &CondensedHierarchy, threshold: f64) -> Result<Prediction>;
}

impl Model for HeadTopology {
    fn num_params(&self) -> usize {
        HeadTopology::num_params(self)
    }

    fn d0(&self) -> usize {
        self.d0
    }

    fn num_categories(&self) -> usize {
        HeadTopology::num_categories(self)
    }

    fn num_concepts(&self) -> usize {
        HeadTopology::num_concepts(self)
    }

    fn concept_mask(&self) -> Vec<bool> {
        self.concept_param_mask()
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
        backward::head_loss_and_grad(self, p, features, label, targets, cfg, scale, grad)
    }

    fn outputs<T: Real>(&self, p: &[T], features: &[T]) -> Result<(Vec<T>, Vec<T>)> {
        let trace = forward_values(p, self, features, &[])?;
        Ok((trace.probs, trace.z))
    }

    fn decode<T: Real>(&self, p: &[T], features: &[T], h: &CondensedHierarchy, threshold: f64) -> Result<Prediction> {
        decode(&forward_values(p, self, features, &[])?, h, threshold)
    }
}
