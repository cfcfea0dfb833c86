use std::collections::{HashMap, HashSet};

use super::condense::RemovalLog;
use super::{write_hierarchy_text, Node, NodeId, NodeKind, Ontology};
use crate::error::{Error, Result};

/// A rooted tree of concepts with categories as leaves.
///
/// Children are kept in ascending id order. Concept order everywhere in the
/// crate (head units, concept targets, z vectors) is the DFS preorder of this
/// tree, root excluded.
#[derive(Debug, Clone)]
pub struct CondensedHierarchy {
    nodes: Vec<Node>,
    index: HashMap<NodeId, usize>,
    parent: Vec<Option<usize>>,
    children: Vec<Vec<usize>>,
    eta: Vec<usize>,
    depth: Vec<usize>,
    below: Vec<usize>,
    root: usize,
    height: usize,
    preorder: Vec<usize>,
    log: RemovalLog,
}

impl CondensedHierarchy {
    pub(crate) fn build(
        nodes: Vec<Node>,
        parent_ids: Vec<Option<NodeId>>,
        root: NodeId,
        log: RemovalLog,
    ) -> Result<Self> {
        let index: HashMap<NodeId, usize> = nodes.iter().enumerate().map(|(i, n)| (n.id, i)).collect();
        let root = *index.get(&root).ok_or(Error::UnknownNode(root))?;
        let mut parent = vec![None; nodes.len()];
        let mut children = vec![Vec::new(); nodes.len()];
        for (i, p) in parent_ids.iter().enumerate() {
            if let Some(p) = p {
                let pi = *index.get(p).ok_or(Error::UnknownNode(*p))?;
                if nodes[pi].kind == NodeKind::Category {
                    return Err(Error::NonLeafCategory(*p));
                }
                parent[i] = Some(pi);
                children[pi].push(i);
            } else if i != root {
                return Err(Error::Root(format!("node {} has no parent", nodes[i].id)));
            }
        }
        for c in &mut children {
            c.sort_by_key(|&i| nodes[i].id);
        }

        let n = nodes.len();
        let mut preorder = Vec::with_capacity(n);
        let mut depth = vec![0; n];
        let mut stack = vec![root];
        while let Some(u) = stack.pop() {
            preorder.push(u);
            for &c in children[u].iter().rev() {
                depth[c] = depth[u] + 1;
                stack.push(c);
            }
        }
        if preorder.len() != n {
            return Err(Error::Root("tree has nodes unreachable from the root".into()));
        }

        let mut eta = vec![0; n];
        let mut below = vec![0; n];
        for &u in preorder.iter().rev() {
            for &c in &children[u] {
                eta[u] += if nodes[c].kind == NodeKind::Category { 1 } else { eta[c] };
                below[u] = below[u].max(below[c] + 1);
            }
        }
        let height = below[root];
        Ok(Self { nodes, index, parent, children, eta, depth, below, root, height, preorder, log })
    }

    /// Wraps an ontology that already is a tree, without condensing it.
    pub fn from_tree(o: &Ontology) -> Result<Self> {
        let mut parent_ids = Vec::with_capacity(o.nodes().len());
        for n in o.nodes() {
            let parents: Vec<NodeId> = o.parents(n.id)?.collect();
            match parents.as_slice() {
                [] => parent_ids.push(None),
                [p] => parent_ids.push(Some(*p)),
                _ => return Err(Error::NotATree(n.id)),
            }
        }
        Self::build(o.nodes().to_vec(), parent_ids, o.root(), RemovalLog::default())
    }

    /// Parses a hierarchy file that must already describe a tree.
    pub fn parse(text: &str) -> Result<Self> {
        Self::from_tree(&Ontology::parse(text)?)
    }

    pub fn to_ontology(&self) -> Ontology {
        Ontology::new(self.nodes.clone(), self.edges()).expect("a valid tree is a valid ontology")
    }

    /// Writes the tree in the hierarchy file format.
    pub fn to_text(&self) -> String {
        let mut nodes: Vec<&Node> = self.nodes.iter().collect();
        nodes.sort_by_key(|n| n.id);
        let mut edges = self.edges();
        edges.sort();
        write_hierarchy_text(nodes.into_iter(), edges.into_iter())
    }

    pub fn edges(&self) -> Vec<(NodeId, NodeId)> {
        self.parent.iter().enumerate().filter_map(|(i, p)| p.map(|p| (self.nodes[p].id, self.nodes[i].id))).collect()
    }

    pub fn root(&self) -> NodeId {
        self.nodes[self.root].id
    }

    pub fn contains(&self, id: NodeId) -> bool {
        self.index.contains_key(&id)
    }

    pub fn node(&self, id: NodeId) -> Result<&Node> {
        Ok(&self.nodes[self.idx(id)?])
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn kind(&self, id: NodeId) -> Result<NodeKind> {
        Ok(self.node(id)?.kind)
    }

    pub fn parent(&self, id: NodeId) -> Result<Option<NodeId>> {
        Ok(self.parent[self.idx(id)?].map(|p| self.nodes[p].id))
    }

    /// Children in ascending id order.
    pub fn children(&self, id: NodeId) -> Result<Vec<NodeId>> {
        Ok(self.children[self.idx(id)?].iter().map(|&c| self.nodes[c].id).collect())
    }

    pub fn child_concepts(&self, id: NodeId) -> Result<Vec<NodeId>> {
        Ok(self.children[self.idx(id)?]
            .iter()
            .filter(|&&c| self.nodes[c].kind == NodeKind::Concept)
            .map(|&c| self.nodes[c].id)
            .collect())
    }

    pub fn child_categories(&self, id: NodeId) -> Result<Vec<NodeId>> {
        Ok(self.children[self.idx(id)?]
            .iter()
            .filter(|&&c| self.nodes[c].kind == NodeKind::Category)
            .map(|&c| self.nodes[c].id)
            .collect())
    }

    /// Number of category leaves below `id` (0 for categories).
    pub fn eta(&self, id: NodeId) -> Result<usize> {
        Ok(self.eta[self.idx(id)?])
    }

    /// Edge distance from the root.
    pub fn depth(&self, id: NodeId) -> Result<usize> {
        Ok(self.depth[self.idx(id)?])
    }

    /// Longest root-to-leaf path, in edges.
    pub fn height(&self) -> usize {
        self.height
    }

    /// Non-root concepts in DFS preorder.
    pub fn concepts(&self) -> Vec<NodeId> {
        self.preorder
            .iter()
            .filter(|&&i| i != self.root && self.nodes[i].kind == NodeKind::Concept)
            .map(|&i| self.nodes[i].id)
            .collect()
    }

    /// Categories in ascending id order.
    pub fn categories(&self) -> Vec<NodeId> {
        let mut c: Vec<NodeId> = self.nodes.iter().filter(|n| n.kind == NodeKind::Category).map(|n| n.id).collect();
        c.sort();
        c
    }

    pub fn num_categories(&self) -> usize {
        self.eta[self.root]
    }

    pub fn num_concepts(&self) -> usize {
        self.nodes.iter().filter(|n| n.kind == NodeKind::Concept).count() - 1
    }

    /// Count of non-root concepts per depth, index 0 being depth 1.
    pub fn concepts_per_level(&self) -> Vec<usize> {
        let mut levels = Vec::new();
        for &i in &self.preorder {
            if i == self.root || self.nodes[i].kind != NodeKind::Concept {
                continue;
            }
            let d = self.depth[i];
            if levels.len() < d {
                levels.resize(d, 0);
            }
            levels[d - 1] += 1;
        }
        levels
    }

    pub fn removal_log(&self) -> &RemovalLog {
        &self.log
    }

    /// Concepts from just below the root down to `id` itself for a concept,
    /// or down to its parent for a category.
    pub fn ancestor_chain(&self, id: NodeId) -> Result<Vec<NodeId>> {
        let i = self.idx(id)?;
        let mut chain = Vec::with_capacity(self.depth[i]);
        let mut cur = match self.nodes[i].kind {
            NodeKind::Concept => Some(i),
            NodeKind::Category => self.parent[i],
        };
        while let Some(u) = cur {
            if u == self.root {
                break;
            }
            chain.push(self.nodes[u].id);
            cur = self.parent[u];
        }
        chain.reverse();
        Ok(chain)
    }

    /// Deepest common ancestor of `a` and `b` (a node is its own ancestor)
    /// together with that node's height above its deepest leaf.
    pub fn lca(&self, a: NodeId, b: NodeId) -> Result<(NodeId, usize)> {
        let (mut x, mut y) = (self.idx(a)?, self.idx(b)?);
        while self.depth[x] > self.depth[y] {
            x = self.parent[x].expect("non-root has a parent");
        }
        while self.depth[y] > self.depth[x] {
            y = self.parent[y].expect("non-root has a parent");
        }
        while x != y {
            x = self.parent[x].expect("non-root has a parent");
            y = self.parent[y].expect("non-root has a parent");
        }
        Ok((self.nodes[x].id, self.below[x]))
    }

    /// Max edge distance from `id` down to a leaf beneath it.
    pub fn subtree_height(&self, id: NodeId) -> Result<usize> {
        Ok(self.below[self.idx(id)?])
    }

    /// Every category id below `id` (itself for a category).
    pub fn leaves_under(&self, id: NodeId) -> Result<Vec<NodeId>> {
        let mut out = Vec::new();
        let mut stack = vec![self.idx(id)?];
        while let Some(u) = stack.pop() {
            if self.nodes[u].kind == NodeKind::Category {
                out.push(self.nodes[u].id);
            }
            stack.extend(self.children[u].iter().copied());
        }
        out.sort();
        Ok(out)
    }

    /// True if `chain` is a parent-linked path starting below the root.
    pub fn is_path(&self, chain: &[NodeId]) -> bool {
        let mut expected_parent = self.root;
        let mut seen = HashSet::new();
        for id in chain {
            let Some(&i) = self.index.get(id) else { return false };
            if self.parent[i] != Some(expected_parent) || !seen.insert(i) {
                return false;
            }
            expected_parent = i;
        }
        true
    }

    fn idx(&self, id: NodeId) -> Result<usize> {
        self.index.get(&id).copied().ok_or(Error::UnknownNode(id))
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    /// Entity -> Living thing -> Chordate -> Mammal -> Primate -> Chimpanzee,
    /// with a few siblings so that nothing is a single-child chain.
    pub(crate) fn fig1() -> CondensedHierarchy {
        let text = "\
node 0 concept Entity
node 1 concept Living thing
node 2 concept Chordate
node 3 concept Mammal
node 4 concept Primate
node 5 category Chimpanzee
node 6 category Gorilla
node 7 category Horse
node 8 category Eagle
node 9 category Oak
node 10 category Traffic light
edge 0 1
edge 0 10
edge 1 2
edge 1 9
edge 2 3
edge 2 8
edge 3 4
edge 3 7
edge 4 5
edge 4 6
";
        CondensedHierarchy::parse(text).unwrap()
    }

    #[test]
    fn chimpanzee_chain() {
        let h = fig1();
        assert_eq!(h.ancestor_chain(NodeId(5)).unwrap(), vec![NodeId(1), NodeId(2), NodeId(3), NodeId(4)]);
        assert_eq!(h.ancestor_chain(NodeId(3)).unwrap(), vec![NodeId(1), NodeId(2), NodeId(3)]);
    }

    #[test]
    fn category_under_root_has_empty_chain() {
        let h = fig1();
        assert!(h.ancestor_chain(NodeId(10)).unwrap().is_empty());
        assert!(h.ancestor_chain(NodeId(0)).unwrap().is_empty());
        assert!(matches!(h.ancestor_chain(NodeId(99)), Err(Error::UnknownNode(_))));
    }

    #[test]
    fn lca_cases() {
        let h = fig1();
        assert_eq!(h.lca(NodeId(5), NodeId(5)).unwrap(), (NodeId(5), 0));
        assert_eq!(h.lca(NodeId(5), NodeId(6)).unwrap(), (NodeId(4), 1));
        assert_eq!(h.lca(NodeId(5), NodeId(7)).unwrap(), (NodeId(3), 2));
        assert_eq!(h.lca(NodeId(7), NodeId(5)).unwrap(), (NodeId(3), 2));
        assert_eq!(h.lca(NodeId(10), NodeId(5)).unwrap(), (NodeId(0), 5));
    }

    #[test]
    fn shape_queries() {
        let h = fig1();
        assert_eq!(h.height(), 5);
        assert_eq!(h.num_categories(), 6);
        assert_eq!(h.num_concepts(), 4);
        assert_eq!(h.eta(NodeId(2)).unwrap(), 4);
        assert_eq!(h.concepts(), vec![NodeId(1), NodeId(2), NodeId(3), NodeId(4)]);
        assert_eq!(h.concepts_per_level(), vec![1, 1, 1, 1]);
        assert!(h.is_path(&[NodeId(1), NodeId(2)]));
        assert!(!h.is_path(&[NodeId(2)]));
    }

    #[test]
    fn dag_is_not_a_tree() {
        let text = "node 0 concept R\nnode 1 concept A\nnode 2 category x\nedge 0 1\nedge 0 2\nedge 1 2\n";
        assert!(matches!(CondensedHierarchy::parse(text), Err(Error::NotATree(NodeId(2)))));
    }
}
