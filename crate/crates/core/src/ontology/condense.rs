//! Condensation of a DAG ontology into a compact tree.
//!
//! The DAG is first resolved into a tree by a depth-first traversal from the
//! root (children in ascending id order, each node keeps the parent that
//! reached it first). Then, top-down, each concept is compared with its
//! nearest surviving ancestor `a`:
//!
//! * `eta(c) / eta(a) >= tau`: `c` is absorbed by `a`,
//! * `eta(c) < delta`: `c` is pruned,
//!
//! and in both cases the children of `c` are re-attached to `a`. A concept
//! whose only child is another concept is a special case of absorption since
//! the ratio is then exactly 1.

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

use super::{CondensedHierarchy, CountMode, Node, NodeId, NodeKind, Ontology};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CondenseOptions {
    pub tau: f64,
    pub delta: usize,
    pub count_mode: CountMode,
}

impl CondenseOptions {
    pub fn new(tau: f64, delta: usize) -> Self {
        Self { tau, delta, count_mode: CountMode::Leaves }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RemovalReason {
    /// Held at least `tau` of its parent's descendants.
    Absorbed,
    /// Fewer than `delta` descendants.
    Pruned,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemovedConcept {
    pub id: NodeId,
    pub name: String,
    pub reason: RemovalReason,
    pub merged_into: NodeId,
    pub eta: usize,
}

/// Record of what condensation discarded.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RemovalLog {
    pub tau: Option<f64>,
    pub delta: Option<usize>,
    pub removed: Vec<RemovedConcept>,
    /// DAG edges dropped when a node kept only its first-visited parent.
    pub detached_edges: Vec<(NodeId, NodeId)>,
}

impl RemovalLog {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("log serializes")
    }
}

/// Condenses with distinct-leaf descendant counts.
pub fn condense(o: &Ontology, tau: f64, delta: usize) -> Result<CondensedHierarchy> {
    condense_with(o, &CondenseOptions::new(tau, delta))
}

pub fn condense_with(o: &Ontology, opts: &CondenseOptions) -> Result<CondensedHierarchy> {
    if !(opts.tau > 0.0 && opts.tau <= 1.0) {
        return Err(Error::InvalidArgument(format!("tau must lie in (0, 1], got {}", opts.tau)));
    }
    if opts.delta == 0 {
        return Err(Error::InvalidArgument("delta must be at least 1".into()));
    }
    let n_categories = o.num_categories();
    if n_categories == 0 {
        return Err(Error::DegenerateHierarchy("no categories".into()));
    }
    if opts.delta > n_categories {
        return Err(Error::DegenerateHierarchy(format!(
            "delta {} exceeds the number of categories {n_categories}",
            opts.delta
        )));
    }

    let (parent, detached) = resolve_tree(o);
    let mut log =
        RemovalLog { tau: Some(opts.tau), delta: Some(opts.delta), removed: Vec::new(), detached_edges: detached };
    let mut nodes: Vec<Node> = o.nodes().to_vec();
    let mut parent_ids: Vec<Option<NodeId>> = parent.iter().map(|p| p.map(|p| nodes[p].id)).collect();
    let root = o.root();

    // One top-down sweep reaches the fixed point in leaf-count mode; the
    // loop matters for the all-descendants mode where counts shift.
    loop {
        let tree = CondensedHierarchy::build(nodes.clone(), parent_ids.clone(), root, RemovalLog::default())?;
        let (new_parent, removed) = sweep(&tree, opts)?;
        if removed.is_empty() {
            break;
        }
        let gone: HashSet<NodeId> = removed.iter().map(|r| r.id).collect();
        nodes.retain(|n| !gone.contains(&n.id));
        parent_ids = nodes.iter().map(|n| new_parent[&n.id]).collect();
        log.removed.extend(removed);
    }
    CondensedHierarchy::build(nodes, parent_ids, root, log)
}

/// DFS from the root; each node keeps the parent that first reached it.
fn resolve_tree(o: &Ontology) -> (Vec<Option<usize>>, Vec<(NodeId, NodeId)>) {
    let n = o.nodes().len();
    let root = o.root_index();
    let mut parent = vec![None; n];
    let mut visited = vec![false; n];
    visited[root] = true;
    let mut stack = vec![(root, 0usize)];
    while let Some((u, k)) = stack.pop() {
        let kids = o.child_indices(u);
        if k < kids.len() {
            stack.push((u, k + 1));
            let c = kids[k];
            if !visited[c] {
                visited[c] = true;
                parent[c] = Some(u);
                stack.push((c, 0));
            }
        }
    }
    let mut detached: Vec<(NodeId, NodeId)> = o
        .edges()
        .iter()
        .filter(|&&(p, c)| {
            let (pi, ci) = (o.idx(p).expect("edge endpoint"), o.idx(c).expect("edge endpoint"));
            parent[ci] != Some(pi)
        })
        .copied()
        .collect();
    detached.sort();
    (parent, detached)
}

/// New parent of every node of `tree` plus the concepts removed in this sweep.
type SweepResult = (HashMap<NodeId, Option<NodeId>>, Vec<RemovedConcept>);

fn sweep(tree: &CondensedHierarchy, opts: &CondenseOptions) -> Result<SweepResult> {
    let count = |id: NodeId| -> Result<usize> {
        match opts.count_mode {
            CountMode::Leaves => tree.eta(id),
            CountMode::AllDescendants => {
                let mut total = 0;
                let mut stack = tree.children(id)?;
                while let Some(c) = stack.pop() {
                    total += 1;
                    stack.extend(tree.children(c)?);
                }
                Ok(total)
            }
        }
    };

    let root = tree.root();
    // Surviving representative of every node decided so far.
    let mut survivor: HashMap<NodeId, NodeId> = HashMap::new();
    survivor.insert(root, root);
    let mut removed = Vec::new();

    // Breadth-first, so every parent is decided before its children.
    let mut order = vec![root];
    let mut i = 0;
    while i < order.len() {
        let kids = tree.children(order[i])?;
        order.extend(kids);
        i += 1;
    }
    for &id in order.iter().skip(1) {
        let node = tree.node(id)?;
        let parent = tree.parent(id)?.expect("non-root");
        let anchor = survivor[&parent];
        if node.kind == NodeKind::Category {
            survivor.insert(id, id);
            continue;
        }
        let eta = count(id)?;
        let anchor_eta = count(anchor)?;
        let reason = if anchor_eta > 0 && eta as f64 / anchor_eta as f64 >= opts.tau {
            Some(RemovalReason::Absorbed)
        } else if tree.eta(id)? < opts.delta {
            Some(RemovalReason::Pruned)
        } else {
            None
        };
        match reason {
            Some(reason) => {
                removed.push(RemovedConcept { id, name: node.name.clone(), reason, merged_into: anchor, eta });
                survivor.insert(id, anchor);
            }
            None => {
                survivor.insert(id, id);
            }
        }
    }

    let mut parents = HashMap::with_capacity(order.len());
    for &id in &order {
        parents.insert(id, tree.parent(id)?.map(|p| survivor[&p]));
    }
    Ok((parents, removed))
}
