use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::FeatureDataset;
use crate::error::{Error, Result};
use crate::ontology::{CondensedHierarchy, Node, NodeId, NodeKind, Ontology};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthConfig {
    pub d0: usize,
    pub per_category: usize,
    pub sigma: f64,
    pub seed: u64,
    /// A node at depth k contributes `level_gain^k` along its direction.
    pub level_gain: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self { d0: 64, per_category: 100, sigma: 0.15, seed: 0, level_gain: 1.0 }
    }
}

/// Hierarchical Gaussian features. Every node gets its own basis direction
/// (root first, then concepts in preorder, then categories); an example of
/// category c is the sum of the directions on c's root path plus isotropic
/// noise. Rows are grouped by category in ascending id order.
pub fn gen_synthetic(h: &CondensedHierarchy, cfg: &SynthConfig) -> Result<FeatureDataset> {
    let nodes = 1 + h.num_concepts() + h.num_categories();
    if cfg.d0 < nodes {
        return Err(Error::Dimension(format!("d0 = {} is smaller than the {nodes} hierarchy nodes", cfg.d0)));
    }
    if !(cfg.sigma >= 0.0 && cfg.sigma.is_finite()) {
        return Err(Error::InvalidArgument(format!("noise sigma must be finite and >= 0, got {}", cfg.sigma)));
    }
    let mut axis = std::collections::HashMap::new();
    axis.insert(h.root(), 0usize);
    for (i, c) in h.concepts().into_iter().chain(h.categories()).enumerate() {
        axis.insert(c, i + 1);
    }
    let noise = Normal::new(0.0, cfg.sigma).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let categories = h.categories();
    let mut features = Vec::with_capacity(categories.len() * cfg.per_category * cfg.d0);
    let mut labels = Vec::with_capacity(categories.len() * cfg.per_category);
    for &c in &categories {
        let mut mean = vec![0.0; cfg.d0];
        let mut cur = Some(c);
        while let Some(n) = cur {
            mean[axis[&n]] = cfg.level_gain.powi(h.depth(n)? as i32);
            cur = h.parent(n)?;
        }
        for _ in 0..cfg.per_category {
            features.extend(mean.iter().map(|&m| m + noise.sample(&mut rng)));
            labels.push(c);
        }
    }
    let ids = (0..labels.len()).map(|i| format!("s{i}")).collect();
    FeatureDataset::new(cfg.d0, features, labels, Some(ids))
}

fn concept(id: u32) -> Node {
    Node { id: NodeId(id), name: format!("concept {id}"), kind: NodeKind::Concept }
}

fn category(id: u32) -> Node {
    Node { id: NodeId(id), name: format!("category {id}"), kind: NodeKind::Category }
}

/// Random tree with the given number of concepts on each level below the
/// root and `categories` leaves. Concepts get ids 1..=M in level order,
/// categories follow. Categories first bring every node up to two
/// children; the rest land on random concepts or the root.
pub fn random_hierarchy(concepts_per_level: &[usize], categories: usize, seed: u64) -> Result<CondensedHierarchy> {
    if concepts_per_level.contains(&0) {
        return Err(Error::InvalidArgument("every level needs at least one concept".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut nodes = vec![concept(0)];
    let mut edges = Vec::new();
    let mut prev = vec![0u32];
    let mut next_id = 1u32;
    for &count in concepts_per_level {
        let mut level = Vec::with_capacity(count);
        for _ in 0..count {
            let parent = prev[rng.random_range(0..prev.len())];
            nodes.push(concept(next_id));
            edges.push((NodeId(parent), NodeId(next_id)));
            level.push(next_id);
            next_id += 1;
        }
        prev = level;
    }
    let m = next_id;
    let mut children = vec![0usize; m as usize];
    for &(p, _) in &edges {
        children[p.0 as usize] += 1;
    }
    // Top up every concept to two children so no chain can be collapsed.
    let mut owners = Vec::new();
    for c in 0..m {
        for _ in children[c as usize]..2 {
            owners.push(c);
        }
    }
    if categories < owners.len() {
        return Err(Error::InvalidArgument(format!(
            "{categories} categories cannot give every concept two children (need {})",
            owners.len()
        )));
    }
    for k in 0..categories as u32 {
        let id = m + k;
        let parent = match owners.get(k as usize) {
            Some(&c) => c,
            None => rng.random_range(0..m),
        };
        nodes.push(category(id));
        edges.push((NodeId(parent), NodeId(id)));
    }
    CondensedHierarchy::from_tree(&Ontology::new(nodes, edges)?)
}

/// Complete `alpha`-way tree of concepts, `depth` concept levels below the
/// root, with `leaves` categories under each bottom concept.
pub fn balanced_hierarchy(alpha: usize, depth: usize, leaves: usize) -> Result<CondensedHierarchy> {
    if alpha < 2 || leaves == 0 {
        return Err(Error::InvalidArgument("need alpha >= 2 and at least one leaf per concept".into()));
    }
    let mut nodes = vec![concept(0)];
    let mut edges = Vec::new();
    let mut frontier = vec![0u32];
    let mut next = 1u32;
    for _ in 0..depth {
        let mut level = Vec::new();
        for &p in &frontier {
            for _ in 0..alpha {
                nodes.push(concept(next));
                edges.push((NodeId(p), NodeId(next)));
                level.push(next);
                next += 1;
            }
        }
        frontier = level;
    }
    for &p in &frontier {
        for _ in 0..leaves {
            nodes.push(category(next));
            edges.push((NodeId(p), NodeId(next)));
            next += 1;
        }
    }
    CondensedHierarchy::from_tree(&Ontology::new(nodes, edges)?)
}

/// Random rooted DAG on `n` nodes. Node i > 0 links to one earlier concept
/// and, with probability `extra`, to a second one. Nodes that end up
/// without children become categories.
pub fn random_dag<R: Rng>(n: usize, concept_share: f64, extra: f64, rng: &mut R) -> Result<Ontology> {
    if n < 2 {
        return Err(Error::InvalidArgument("a DAG needs at least two nodes".into()));
    }
    let mut is_concept = vec![true];
    let mut concepts = vec![0u32];
    let mut edges = Vec::new();
    for i in 1..n as u32 {
        let p = concepts[rng.random_range(0..concepts.len())];
        edges.push((NodeId(p), NodeId(i)));
        if rng.random_bool(extra) {
            let q = concepts[rng.random_range(0..concepts.len())];
            if q != p {
                edges.push((NodeId(q), NodeId(i)));
            }
        }
        let c = rng.random_bool(concept_share);
        is_concept.push(c);
        if c {
            concepts.push(i);
        }
    }
    let mut has_child = vec![false; n];
    for &(p, _) in &edges {
        has_child[p.0 as usize] = true;
    }
    let nodes = (0..n as u32)
        .map(|i| if is_concept[i as usize] && has_child[i as usize] { concept(i) } else { category(i) })
        .collect();
    Ontology::new(nodes, edges)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn noiseless_examples_are_identical() {
        let h = random_hierarchy(&[2, 3], 8, 1).unwrap();
        let cfg = SynthConfig { d0: 20, per_category: 3, sigma: 0.0, seed: 4, level_gain: 1.0 };
        let ds = gen_synthetic(&h, &cfg).unwrap();
        assert_eq!(ds.len(), 24);
        for c in 0..8 {
            assert_eq!(ds.row(3 * c), ds.row(3 * c + 1));
        }
    }

    #[test]
    fn shared_ancestors_share_components() {
        let h = random_hierarchy(&[2, 3], 8, 1).unwrap();
        let cfg = SynthConfig { d0: 14, per_category: 1, sigma: 0.0, seed: 0, level_gain: 1.0 };
        let ds = gen_synthetic(&h, &cfg).unwrap();
        let cats = h.categories();
        for a in 0..cats.len() {
            for b in 0..cats.len() {
                if a == b {
                    continue;
                }
                let shared = {
                    let ca = h.ancestor_chain(cats[a]).unwrap();
                    let cb = h.ancestor_chain(cats[b]).unwrap();
                    ca.iter().filter(|c| cb.contains(c)).count()
                };
                // Root plus shared concepts agree at value 1.
                let agree = ds.row(a).iter().zip(ds.row(b)).filter(|(x, y)| **x == 1.0 && **y == 1.0).count();
                assert_eq!(agree, shared + 1);
            }
        }
    }

    #[test]
    fn too_narrow() {
        let h = random_hierarchy(&[2], 4, 0).unwrap();
        let cfg = SynthConfig { d0: 6, ..Default::default() };
        assert!(matches!(gen_synthetic(&h, &cfg), Err(Error::Dimension(_))));
    }

    #[test]
    fn hierarchy_shapes() {
        let h = random_hierarchy(&[2, 2, 3], 24, 5).unwrap();
        assert_eq!(h.num_concepts(), 7);
        assert_eq!(h.num_categories(), 24);
        assert_eq!(h.concepts_per_level(), vec![2, 2, 3]);
        let b = balanced_hierarchy(3, 2, 4).unwrap();
        assert_eq!((b.num_concepts(), b.num_categories(), b.height()), (12, 36, 3));
    }

    #[test]
    fn random_dag_is_valid() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let o = random_dag(100, 0.4, 0.3, &mut rng).unwrap();
            assert!(o.num_categories() > 0);
        }
    }
}
