//! Hierarchical concept prediction with multilayer gated dense heads.
//!
//! The crate condenses a label ontology into a compact tree, builds a
//! classification head whose hidden blocks mirror that tree, trains it with a
//! combined category/concept loss and decodes root-to-leaf concept chains.
//! Features are expected to be precomputed by an external backbone.

pub mod baselines;
pub mod checkpoint;
pub mod dataio;
pub mod decoder;
pub mod error;
pub mod head;
pub mod metrics;
pub mod num;
pub mod ontology;
pub mod training;

pub use error::{Error, Result};
pub use num::Real;
pub use ontology::{CondensedHierarchy, NodeId, NodeKind, Ontology};
