//! Turning head outputs into a category and a concept chain.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::head::ForwardTrace;
use crate::num::Real;
use crate::ontology::{CondensedHierarchy, NodeId, NodeKind};

pub const DEFAULT_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Prediction {
    pub category: NodeId,
    pub category_prob: f64,
    /// Predicted concepts, root excluded. A parent-linked path for the gated
    /// head; an unordered set for the flat baseline.
    pub chain: Vec<NodeId>,
    /// Score (z or marginal) of each chain member.
    pub chain_scores: Vec<f64>,
    /// Per-concept detection bits after parent forcing, in concept order.
    pub z_thresholded: Vec<bool>,
}

impl Prediction {
    /// `example_id,pred_category,prob,id:z;id:z;...`
    pub fn to_line(&self, example_id: &str) -> String {
        let chain: Vec<String> =
            self.chain.iter().zip(&self.chain_scores).map(|(id, z)| format!("{id}:{z:.6}")).collect();
        format!("{example_id},{},{:.6},{}", self.category, self.category_prob, chain.join(";"))
    }

    /// Inverse of [`Prediction::to_line`]; returns the example id too.
    /// `z_thresholded` is left empty.
    pub fn parse_line(line: &str) -> Result<(String, Prediction)> {
        let bad = || Error::Format(format!("malformed prediction line {line:?}"));
        let mut fields = line.trim().splitn(4, ',');
        let id = fields.next().ok_or_else(bad)?.to_string();
        let category = NodeId(fields.next().ok_or_else(bad)?.trim().parse().map_err(|_| bad())?);
        let category_prob: f64 = fields.next().ok_or_else(bad)?.trim().parse().map_err(|_| bad())?;
        let mut chain = Vec::new();
        let mut chain_scores = Vec::new();
        for item in fields.next().unwrap_or("").split(';').filter(|s| !s.trim().is_empty()) {
            let (c, z) = item.split_once(':').ok_or_else(bad)?;
            chain.push(NodeId(c.trim().parse().map_err(|_| bad())?));
            chain_scores.push(z.trim().parse().map_err(|_| bad())?);
        }
        Ok((id, Prediction { category, category_prob, chain, chain_scores, z_thresholded: Vec::new() }))
    }
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax<T: Real>(values: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Decodes the gated head: argmax category, and a greedy max-z chain where
/// a concept only counts if every ancestor passed the threshold.
pub fn decode<T: Real>(trace: &ForwardTrace<T>, h: &CondensedHierarchy, threshold: f64) -> Result<Prediction> {
    let categories = h.categories();
    let concepts = h.concepts();
    if trace.probs.len() != categories.len() || trace.z.len() != concepts.len() {
        return Err(Error::TraceMismatch(format!(
            "trace has {} categories / {} concepts, hierarchy {} / {}",
            trace.probs.len(),
            trace.z.len(),
            categories.len(),
            concepts.len()
        )));
    }
    let best = argmax(&trace.probs);
    let z: Vec<f64> = trace.z.iter().map(|v| v.to_f64()).collect();
    let (chain, chain_scores, z_thresholded) = greedy_chain(h, &concepts, &z, threshold, true)?;
    Ok(Prediction {
        category: categories[best],
        category_prob: trace.probs[best].to_f64(),
        chain,
        chain_scores,
        z_thresholded,
    })
}

/// Top-down walk over concept scores (in `concepts` order). With `force`,
/// a concept whose parent fell below the threshold is zeroed first.
pub(crate) fn greedy_chain(
    h: &CondensedHierarchy,
    concepts: &[NodeId],
    scores: &[f64],
    threshold: f64,
    force: bool,
) -> Result<(Vec<NodeId>, Vec<f64>, Vec<bool>)> {
    let pos: std::collections::HashMap<NodeId, usize> = concepts.iter().enumerate().map(|(i, &c)| (c, i)).collect();
    let root = h.root();
    let mut effective = scores.to_vec();
    if force {
        // Preorder guarantees parents are final before their children.
        for (i, &c) in concepts.iter().enumerate() {
            let parent = h.parent(c)?.expect("concept has a parent");
            if parent != root && effective[pos[&parent]] < threshold {
                effective[i] = 0.0;
            }
        }
    }
    let bits: Vec<bool> = effective.iter().map(|&z| z >= threshold).collect();

    let mut chain = Vec::new();
    let mut chain_scores = Vec::new();
    let mut at = root;
    loop {
        let mut best: Option<(usize, f64)> = None;
        for c in h.children(at)? {
            if h.kind(c)? != NodeKind::Concept {
                continue;
            }
            let i = pos[&c];
            let s = effective[i];
            if s >= threshold && best.is_none_or(|(_, b)| s > b) {
                best = Some((i, s));
            }
        }
        match best {
            Some((i, s)) => {
                chain.push(concepts[i]);
                chain_scores.push(s);
                at = concepts[i];
            }
            None => break,
        }
    }
    Ok((chain, chain_scores, bits))
}

/// Marginal probability of every concept: the summed probability of the
/// categories beneath it. Returned in `h.concepts()` order, plus the root.
pub fn concept_marginals<T: Real>(probs: &[T], h: &CondensedHierarchy) -> Result<(Vec<f64>, f64)> {
    let categories = h.categories();
    if probs.len() != categories.len() {
        return Err(Error::ShapeMismatch { expected: categories.len(), found: probs.len() });
    }
    let mut mass: std::collections::HashMap<NodeId, f64> = std::collections::HashMap::new();
    for (&c, &p) in categories.iter().zip(probs) {
        let p = p.to_f64();
        let mut cur = h.parent(c)?;
        while let Some(a) = cur {
            *mass.entry(a).or_default() += p;
            cur = h.parent(a)?;
        }
    }
    let concepts = h.concepts();
    let marginals = concepts.iter().map(|c| mass.get(c).copied().unwrap_or(0.0)).collect();
    Ok((marginals, mass.get(&h.root()).copied().unwrap_or(0.0)))
}

/// Probability-aggregation decoding: greedy max-marginal path from the root
/// while the marginal stays at or above the threshold.
pub fn decode_pragg<T: Real>(probs: &[T], h: &CondensedHierarchy, threshold: f64) -> Result<Prediction> {
    let (marginals, _) = concept_marginals(probs, h)?;
    let concepts = h.concepts();
    let (chain, chain_scores, z_thresholded) = greedy_chain(h, &concepts, &marginals, threshold, false)?;
    let best = argmax(probs);
    Ok(Prediction {
        category: h.categories()[best],
        category_prob: probs[best].to_f64(),
        chain,
        chain_scores,
        z_thresholded,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    // root(0) -> {A(1), B(2), c9}; A -> {A1(3), c5}; A1 -> {c6, c7}; B -> {c8, c10}
    fn tree() -> CondensedHierarchy {
        CondensedHierarchy::parse(
            "node 0 concept R\nnode 1 concept A\nnode 2 concept B\nnode 3 concept A1\n\
             node 5 category c5\nnode 6 category c6\nnode 7 category c7\nnode 8 category c8\nnode 9 category c9\nnode 10 category c10\n\
             edge 0 1\nedge 0 2\nedge 0 9\nedge 1 3\nedge 1 5\nedge 3 6\nedge 3 7\nedge 2 8\nedge 2 10\n",
        )
        .unwrap()
    }

    fn trace(z: Vec<f64>, probs: Vec<f64>) -> ForwardTrace<f64> {
        ForwardTrace { hidden: vec![], pre_hidden: vec![], z, pre_logits: vec![], logits: vec![], probs }
    }

    #[test]
    fn concept_order_is_preorder() {
        assert_eq!(tree().concepts(), vec![NodeId(1), NodeId(3), NodeId(2)]);
    }

    #[test]
    fn all_gates_closed_gives_empty_chain() {
        let h = tree();
        let p = decode(&trace(vec![0.1, 0.2, 0.3], vec![0.1, 0.5, 0.1, 0.1, 0.1, 0.1]), &h, 0.5).unwrap();
        assert!(p.chain.is_empty());
        assert_eq!(p.category, NodeId(6));
        assert_eq!(p.z_thresholded, vec![false, false, false]);
    }

    #[test]
    fn low_parent_forces_child_off() {
        let h = tree();
        // A = 0.3, A1 = 0.9
        let p = decode(&trace(vec![0.3, 0.9, 0.1], vec![1.0 / 6.0; 6]), &h, 0.5).unwrap();
        assert!(p.chain.is_empty());
        assert_eq!(p.z_thresholded, vec![false, false, false]);
    }

    #[test]
    fn highest_sibling_wins() {
        let h = tree();
        let p = decode(&trace(vec![0.7, 0.6, 0.8], vec![1.0 / 6.0; 6]), &h, 0.5).unwrap();
        assert_eq!(p.chain, vec![NodeId(2)]);
        let p = decode(&trace(vec![0.8, 0.6, 0.7], vec![1.0 / 6.0; 6]), &h, 0.5).unwrap();
        assert_eq!(p.chain, vec![NodeId(1), NodeId(3)]);
        assert_eq!(p.chain_scores, vec![0.8, 0.6]);
    }

    #[test]
    fn ties_go_to_lowest_index() {
        let h = tree();
        let p = decode(&trace(vec![0.0; 3], vec![0.25, 0.25, 0.25, 0.25, 0.0, 0.0]), &h, 0.5).unwrap();
        assert_eq!(p.category, NodeId(5));
    }

    #[test]
    fn pragg_full_mass() {
        let h = tree();
        // all mass on c7
        let probs = [0.0, 0.0, 1.0, 0.0, 0.0, 0.0];
        for thr in [0.1, 0.5, 1.0] {
            let p = decode_pragg(&probs, &h, thr).unwrap();
            assert_eq!(p.chain, h.ancestor_chain(NodeId(7)).unwrap());
        }
    }

    #[test]
    fn pragg_split_mass_below_threshold() {
        let h = tree();
        // half on c7 (under A), half on c8 (under B)
        let probs = [0.0, 0.0, 0.5, 0.5, 0.0, 0.0];
        assert!(decode_pragg(&probs, &h, 0.6).unwrap().chain.is_empty());
        let (m, root) = concept_marginals(&probs, &h).unwrap();
        assert_eq!(m, vec![0.5, 0.5, 0.5]);
        assert_eq!(root, 1.0);
    }

    #[test]
    fn prediction_line_round_trip() {
        let p = Prediction {
            category: NodeId(7),
            category_prob: 0.75,
            chain: vec![NodeId(1), NodeId(3)],
            chain_scores: vec![0.9, 0.625],
            z_thresholded: vec![],
        };
        let line = p.to_line("ex12");
        assert_eq!(line, "ex12,7,0.750000,1:0.900000;3:0.625000");
        let (id, back) = Prediction::parse_line(&line).unwrap();
        assert_eq!(id, "ex12");
        assert_eq!(back, p);
        let (_, empty) = Prediction::parse_line("e,5,1.0,").unwrap();
        assert!(empty.chain.is_empty());
    }
}
