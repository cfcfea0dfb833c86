//! Label ontologies: parsing, validation and condensation into a tree.
//!
//! Hierarchy files are line oriented UTF-8:
//!
//! ```text
//! # comment
//! node 0 concept Entity
//! node 1 category Dog
//! edge 0 1
//! ```
//!
//! The root is the unique node without incoming edges.

mod condense;
pub(crate) mod tree;

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use condense::{condense, condense_with, CondenseOptions, RemovalLog, RemovalReason, RemovedConcept};
pub use tree::CondensedHierarchy;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub u32);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeKind {
    Concept,
    Category,
}

impl NodeKind {
    pub fn as_str(self) -> &'static str {
        match self {
            NodeKind::Concept => "concept",
            NodeKind::Category => "category",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Node {
    pub id: NodeId,
    pub name: String,
    pub kind: NodeKind,
}

/// How the descendant count of a concept is measured.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CountMode {
    /// Distinct category leaves below the node.
    #[default]
    Leaves,
    /// Every distinct descendant node, concepts included.
    AllDescendants,
}

/// A validated DAG of concepts and categories with a single root.
#[derive(Debug, Clone)]
pub struct Ontology {
    nodes: Vec<Node>,
    edges: Vec<(NodeId, NodeId)>,
    index: HashMap<NodeId, usize>,
    children: Vec<Vec<usize>>,
    parents: Vec<Vec<usize>>,
    root: usize,
}

impl Ontology {
    /// Validates and builds an ontology. Duplicate edges are ignored.
    pub fn new(nodes: Vec<Node>, edges: Vec<(NodeId, NodeId)>) -> Result<Self> {
        let mut index = HashMap::with_capacity(nodes.len());
        for (i, n) in nodes.iter().enumerate() {
            if index.insert(n.id, i).is_some() {
                return Err(Error::DuplicateNode(n.id));
            }
        }
        let mut children = vec![Vec::new(); nodes.len()];
        let mut parents = vec![Vec::new(); nodes.len()];
        let mut kept_edges = Vec::with_capacity(edges.len());
        for &(p, c) in &edges {
            let (Some(&pi), Some(&ci)) = (index.get(&p), index.get(&c)) else {
                return Err(Error::DanglingEdge { parent: p, child: c });
            };
            if children[pi].contains(&ci) {
                continue;
            }
            children[pi].push(ci);
            parents[ci].push(pi);
            kept_edges.push((p, c));
        }
        for list in children.iter_mut().chain(parents.iter_mut()) {
            list.sort_by_key(|&i| nodes[i].id);
        }

        // Kahn's algorithm; leftovers sit on or below a cycle.
        let mut indeg: Vec<usize> = parents.iter().map(Vec::len).collect();
        let mut queue: Vec<usize> = (0..nodes.len()).filter(|&i| indeg[i] == 0).collect();
        let sources = queue.clone();
        let mut seen = 0;
        while let Some(u) = queue.pop() {
            seen += 1;
            for &c in &children[u] {
                indeg[c] -= 1;
                if indeg[c] == 0 {
                    queue.push(c);
                }
            }
        }
        if seen != nodes.len() {
            let on_cycle =
                (0..nodes.len()).filter(|&i| indeg[i] > 0).min_by_key(|&i| nodes[i].id).expect("unprocessed node");
            return Err(Error::Cycle(nodes[on_cycle].id));
        }

        let root = match sources.as_slice() {
            [] => return Err(Error::Root("hierarchy is empty".into())),
            [r] => *r,
            many => {
                let ids: Vec<String> = many.iter().map(|&i| nodes[i].id.to_string()).collect();
                return Err(Error::Root(format!("several nodes without parent: {}", ids.join(", "))));
            }
        };
        if nodes[root].kind != NodeKind::Concept {
            return Err(Error::Root(format!("root {} must be a concept", nodes[root].id)));
        }
        if let Some(i) = (0..nodes.len()).find(|&i| nodes[i].kind == NodeKind::Category && !children[i].is_empty()) {
            return Err(Error::NonLeafCategory(nodes[i].id));
        }

        Ok(Self { nodes, edges: kept_edges, index, children, parents, root })
    }

    /// Parses the line-oriented hierarchy format.
    pub fn parse(text: &str) -> Result<Self> {
        let mut nodes = Vec::new();
        let mut edges = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = lineno + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let err = |message: String| Error::Parse { line, message };
            let mut parts = content.splitn(2, char::is_whitespace);
            let keyword = parts.next().unwrap_or("");
            let rest = parts.next().unwrap_or("").trim_start();
            match keyword {
                "node" => {
                    let mut fields = rest.splitn(3, char::is_whitespace);
                    let id = parse_id(fields.next()).map_err(err)?;
                    let kind = match fields.next().map(str::trim) {
                        Some("concept") => NodeKind::Concept,
                        Some("category") => NodeKind::Category,
                        other => return Err(err(format!("unknown node kind {other:?}"))),
                    };
                    let name = fields.next().map(str::trim).unwrap_or("");
                    if name.is_empty() {
                        return Err(err("node name missing".into()));
                    }
                    nodes.push(Node { id, name: name.to_string(), kind });
                }
                "edge" => {
                    let mut fields = rest.split_whitespace();
                    let p = parse_id(fields.next()).map_err(err)?;
                    let c = parse_id(fields.next()).map_err(err)?;
                    if fields.next().is_some() {
                        return Err(err("trailing tokens after edge".into()));
                    }
                    edges.push((p, c));
                }
                other => return Err(err(format!("unknown directive {other:?}"))),
            }
        }
        Self::new(nodes, edges)
    }

    /// Serializes in the same format `parse` reads: nodes by ascending id,
    /// then edges sorted by (parent, child).
    pub fn to_text(&self) -> String {
        let mut nodes: Vec<&Node> = self.nodes.iter().collect();
        nodes.sort_by_key(|n| n.id);
        let mut edges = self.edges.clone();
        edges.sort();
        write_hierarchy_text(nodes.into_iter(), edges.into_iter())
    }

    pub fn root(&self) -> NodeId {
        self.nodes[self.root].id
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn edges(&self) -> &[(NodeId, NodeId)] {
        &self.edges
    }

    pub fn node(&self, id: NodeId) -> Option<&Node> {
        self.index.get(&id).map(|&i| &self.nodes[i])
    }

    pub fn contains(&self, id: NodeId) -> bool {
        self.index.contains_key(&id)
    }

    /// Children of `id` in ascending id order.
    pub fn children(&self, id: NodeId) -> Result<impl Iterator<Item = NodeId> + '_> {
        let i = self.idx(id)?;
        Ok(self.children[i].iter().map(move |&c| self.nodes[c].id))
    }

    pub fn parents(&self, id: NodeId) -> Result<impl Iterator<Item = NodeId> + '_> {
        let i = self.idx(id)?;
        Ok(self.parents[i].iter().map(move |&c| self.nodes[c].id))
    }

    pub fn num_categories(&self) -> usize {
        self.nodes.iter().filter(|n| n.kind == NodeKind::Category).count()
    }

    pub(crate) fn idx(&self, id: NodeId) -> Result<usize> {
        self.index.get(&id).copied().ok_or(Error::UnknownNode(id))
    }

    pub(crate) fn root_index(&self) -> usize {
        self.root
    }

    pub(crate) fn child_indices(&self, i: usize) -> &[usize] {
        &self.children[i]
    }
}

fn parse_id(token: Option<&str>) -> std::result::Result<NodeId, String> {
    let token = token.ok_or_else(|| "missing node id".to_string())?;
    token.trim().parse::<u32>().map(NodeId).map_err(|_| format!("invalid node id {token:?}"))
}

pub(crate) fn write_hierarchy_text<'a>(
    nodes: impl Iterator<Item = &'a Node>,
    edges: impl Iterator<Item = (NodeId, NodeId)>,
) -> String {
    let mut out = String::new();
    for n in nodes {
        out.push_str(&format!("node {} {} {}\n", n.id, n.kind.as_str(), n.name));
    }
    for (p, c) in edges {
        out.push_str(&format!("edge {p} {c}\n"));
    }
    out
}

/// Descendant count for every node of a DAG, with distinct-set semantics:
/// a node reachable along several paths is counted once.
///
/// Categories report 0.
pub fn descendant_counts(o: &Ontology, mode: CountMode) -> BTreeMap<NodeId, usize> {
    let n = o.nodes.len();
    let words = n.div_ceil(64);
    let mut reach: Vec<Option<Vec<u64>>> = vec![None; n];

    // Post-order over the DAG so every child set is ready before its parents.
    let mut order = Vec::with_capacity(n);
    let mut state = vec![0u8; n];
    let mut stack = vec![(o.root, 0usize)];
    state[o.root] = 1;
    while let Some((u, k)) = stack.pop() {
        if k < o.children[u].len() {
            stack.push((u, k + 1));
            let c = o.children[u][k];
            if state[c] == 0 {
                state[c] = 1;
                stack.push((c, 0));
            }
        } else {
            order.push(u);
        }
    }

    for &u in &order {
        let mut set = vec![0u64; words];
        for &c in &o.children[u] {
            let count_child = match mode {
                CountMode::Leaves => o.nodes[c].kind == NodeKind::Category,
                CountMode::AllDescendants => true,
            };
            if count_child {
                set[c / 64] |= 1 << (c % 64);
            }
            if let Some(child_set) = &reach[c] {
                for (a, b) in set.iter_mut().zip(child_set) {
                    *a |= *b;
                }
            }
        }
        reach[u] = Some(set);
    }

    o.nodes
        .iter()
        .enumerate()
        .map(|(i, node)| {
            let count = match node.kind {
                NodeKind::Category => 0,
                NodeKind::Concept => {
                    reach[i].as_ref().map(|s| s.iter().map(|w| w.count_ones() as usize).sum()).unwrap_or(0)
                }
            };
            (node.id, count)
        })
        .collect()
}
