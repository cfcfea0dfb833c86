//! The multilayer gated dense head.
//!
//! Every concept `g` owns a hidden vector `h_g` of width `mu * eta_g`; the
//! root owns the input features. For a unit with hidden `h` and gate value
//! `z` (the root's gate is the constant 1):
//!
//! ```text
//! z_g      = sigmoid(u_g . h_g + bz_g)                  (concepts only)
//! x~_j     = v_j . h + b_j                              child category j
//! h~_c     = relu(W_c h + bh_c)                         child concept c
//! x_j      = x~_j * z          h_c = h~_c * z
//! ```
//!
//! and category probabilities are a softmax over all `x`.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::num::{dot, softmax, Real};
use crate::ontology::{CondensedHierarchy, NodeId};

pub const DEFAULT_MU: usize = 2;

/// One hidden block: the root (features) or a concept.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UnitRecord {
    /// `None` for the root unit.
    pub concept: Option<NodeId>,
    pub hidden: usize,
    pub parent: Option<usize>,
    pub child_units: Vec<usize>,
    /// Indices into [`HeadTopology::categories`].
    pub child_categories: Vec<usize>,
    pub depth: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HeadTopology {
    pub d0: usize,
    pub mu: usize,
    /// Unit 0 is the root; the rest are concepts in hierarchy preorder, so
    /// concept index `m` lives in unit `m + 1`.
    pub units: Vec<UnitRecord>,
    /// Category ids in ascending order; softmax position = index here.
    pub categories: Vec<NodeId>,
    pub height: usize,
    #[serde(skip)]
    layout: ParamLayout,
}

impl PartialEq for HeadTopology {
    fn eq(&self, other: &Self) -> bool {
        self.d0 == other.d0
            && self.mu == other.mu
            && self.units == other.units
            && self.categories == other.categories
            && self.height == other.height
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockKind {
    GateWeights,
    GateBias,
    HiddenWeights,
    HiddenBias,
    CategoryWeights,
    CategoryBias,
}

impl BlockKind {
    pub const ALL: [BlockKind; 6] = [
        BlockKind::GateWeights,
        BlockKind::GateBias,
        BlockKind::HiddenWeights,
        BlockKind::HiddenBias,
        BlockKind::CategoryWeights,
        BlockKind::CategoryBias,
    ];

    /// Blocks trained during the concept-only warm-up stage.
    pub fn is_concept_block(self) -> bool {
        !matches!(self, BlockKind::CategoryWeights | BlockKind::CategoryBias)
    }

    pub fn is_bias(self) -> bool {
        matches!(self, BlockKind::GateBias | BlockKind::HiddenBias | BlockKind::CategoryBias)
    }

    pub fn symbol(self) -> &'static str {
        match self {
            BlockKind::GateWeights => "u",
            BlockKind::GateBias => "b_z",
            BlockKind::HiddenWeights => "W",
            BlockKind::HiddenBias => "b_h",
            BlockKind::CategoryWeights => "v",
            BlockKind::CategoryBias => "b_x",
        }
    }
}

/// A contiguous run of parameters. Matrices are row-major with one row per
/// output.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Block {
    pub kind: BlockKind,
    /// Owning unit; for hidden blocks this is the child unit being fed.
    pub unit: usize,
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
}

impl Block {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

impl fmt::Display for Block {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}[unit {}] {}x{}", self.kind.symbol(), self.unit, self.rows, self.cols)
    }
}

#[derive(Debug, Clone, Default)]
struct UnitOffsets {
    gate_w: usize,
    gate_b: usize,
    hidden_w: usize,
    hidden_b: usize,
    cat_w: usize,
    cat_b: usize,
}

#[derive(Debug, Clone, Default)]
struct ParamLayout {
    blocks: Vec<Block>,
    total: usize,
    offsets: Vec<UnitOffsets>,
}

impl ParamLayout {
    /// Declared block order: for each unit, its gate (u, b_z), then the
    /// hidden blocks of each child concept (W, b_h), then its child
    /// categories (v, b_x).
    fn new(d0: usize, units: &[UnitRecord]) -> Self {
        let mut blocks = Vec::new();
        let mut offsets = vec![UnitOffsets::default(); units.len()];
        let mut at = 0;
        let mut push = |kind, unit, rows, cols, blocks: &mut Vec<Block>| {
            let b = Block { kind, unit, offset: at, rows, cols };
            at += rows * cols;
            blocks.push(b);
            b.offset
        };
        for (ui, u) in units.iter().enumerate() {
            let width = if ui == 0 { d0 } else { u.hidden };
            if ui != 0 {
                offsets[ui].gate_w = push(BlockKind::GateWeights, ui, 1, width, &mut blocks);
                offsets[ui].gate_b = push(BlockKind::GateBias, ui, 1, 1, &mut blocks);
            }
            for &c in &u.child_units {
                let rows = units[c].hidden;
                offsets[c].hidden_w = push(BlockKind::HiddenWeights, c, rows, width, &mut blocks);
                offsets[c].hidden_b = push(BlockKind::HiddenBias, c, rows, 1, &mut blocks);
            }
            if !u.child_categories.is_empty() {
                let rows = u.child_categories.len();
                offsets[ui].cat_w = push(BlockKind::CategoryWeights, ui, rows, width, &mut blocks);
                offsets[ui].cat_b = push(BlockKind::CategoryBias, ui, rows, 1, &mut blocks);
            }
        }
        Self { blocks, total: at, offsets }
    }
}

impl HeadTopology {
    pub fn num_categories(&self) -> usize {
        self.categories.len()
    }

    pub fn num_concepts(&self) -> usize {
        self.units.len() - 1
    }

    pub fn num_params(&self) -> usize {
        self.layout.total
    }

    pub fn blocks(&self) -> &[Block] {
        &self.layout.blocks
    }

    /// Hidden width of a unit (the feature width for the root).
    pub fn width(&self, unit: usize) -> usize {
        if unit == 0 {
            self.d0
        } else {
            self.units[unit].hidden
        }
    }

    /// Concept ids in unit order (root excluded).
    pub fn concepts(&self) -> Vec<NodeId> {
        self.units.iter().skip(1).map(|u| u.concept.expect("concept unit")).collect()
    }

    pub fn category_index(&self, id: NodeId) -> Option<usize> {
        self.categories.binary_search(&id).ok()
    }

    pub fn concept_index(&self, id: NodeId) -> Option<usize> {
        self.units.iter().skip(1).position(|u| u.concept == Some(id))
    }

    /// Mask selecting parameters in concept blocks (u, b_z, W, b_h).
    pub fn concept_param_mask(&self) -> Vec<bool> {
        let mut mask = vec![false; self.num_params()];
        for b in self.blocks() {
            if b.kind.is_concept_block() {
                mask[b.range()].iter_mut().for_each(|m| *m = true);
            }
        }
        mask
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("topology serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let mut t: HeadTopology = serde_json::from_str(text)?;
        t.validate()?;
        t.layout = ParamLayout::new(t.d0, &t.units);
        Ok(t)
    }

    /// SHA-256 over the canonical (compact) JSON form.
    pub fn hash(&self) -> [u8; 32] {
        let canonical = serde_json::to_vec(self).expect("topology serializes");
        Sha256::digest(&canonical).into()
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: &str| Error::Format(format!("topology: {m}"));
        if self.units.is_empty() || self.units[0].concept.is_some() || self.units[0].parent.is_some() {
            return Err(bad("unit 0 must be the root"));
        }
        let mut seen_categories = vec![false; self.categories.len()];
        for (i, u) in self.units.iter().enumerate() {
            if i > 0 && (u.concept.is_none() || u.parent.is_none_or(|p| p >= i)) {
                return Err(bad("units must be in preorder with parents first"));
            }
            for &c in &u.child_units {
                if c >= self.units.len() || self.units[c].parent != Some(i) {
                    return Err(bad("inconsistent child unit"));
                }
            }
            for &j in &u.child_categories {
                if j >= seen_categories.len() || std::mem::replace(&mut seen_categories[j], true) {
                    return Err(bad("category attached twice or out of range"));
                }
            }
        }
        if seen_categories.iter().any(|s| !s) {
            return Err(bad("unattached category"));
        }
        Ok(())
    }
}

/// Builds one hidden unit per concept with width `mu * eta`.
pub fn build_topology(h: &CondensedHierarchy, d0: usize, mu: usize) -> Result<HeadTopology> {
    if d0 == 0 || mu == 0 {
        return Err(Error::InvalidArgument("d0 and mu must be positive".into()));
    }
    let categories = h.categories();
    let concepts = h.concepts();
    let mut units = Vec::with_capacity(concepts.len() + 1);
    units.push(UnitRecord {
        concept: None,
        hidden: d0,
        parent: None,
        child_units: Vec::new(),
        child_categories: Vec::new(),
        depth: 0,
    });
    let mut unit_of = std::collections::HashMap::new();
    unit_of.insert(h.root(), 0usize);
    for &c in &concepts {
        let parent = unit_of[&h.parent(c)?.expect("non-root concept has a parent")];
        let ui = units.len();
        unit_of.insert(c, ui);
        units.push(UnitRecord {
            concept: Some(c),
            hidden: mu * h.eta(c)?,
            parent: Some(parent),
            child_units: Vec::new(),
            child_categories: Vec::new(),
            depth: h.depth(c)?,
        });
        units[parent].child_units.push(ui);
    }
    for (j, &cat) in categories.iter().enumerate() {
        let parent = h.parent(cat)?.expect("category has a parent");
        units[unit_of[&parent]].child_categories.push(j);
    }
    let layout = ParamLayout::new(d0, &units);
    Ok(HeadTopology { d0, mu, units, categories, height: h.height(), layout })
}

/// Flat parameter vector in declared block order.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadParameters<T = f64> {
    pub values: Vec<T>,
}

impl<T: Real> HeadParameters<T> {
    pub fn zeros(t: &HeadTopology) -> Self {
        Self { values: vec![T::ZERO; t.num_params()] }
    }

    pub fn block(&self, b: &Block) -> &[T] {
        &self.values[b.range()]
    }

    pub fn block_mut(&mut self, b: &Block) -> &mut [T] {
        &mut self.values[b.range()]
    }

    pub fn cast<U: Real>(&self) -> HeadParameters<U> {
        HeadParameters { values: self.values.iter().map(|v| U::from_f64(v.to_f64())).collect() }
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// Glorot-uniform weights per block, zero biases.
pub fn init_parameters(t: &HeadTopology, seed: u64) -> HeadParameters<f64> {
    init_parameters_with(t, seed, 0.0)
}

/// Like [`init_parameters`], with every hidden bias set to `hidden_bias`.
/// A small positive value keeps narrow ReLU layers from starting dead.
pub fn init_parameters_with(t: &HeadTopology, seed: u64, hidden_bias: f64) -> HeadParameters<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = HeadParameters::zeros(t);
    for b in t.blocks() {
        if b.kind == BlockKind::HiddenBias {
            p.block_mut(b).fill(hidden_bias);
        }
        if b.kind.is_bias() {
            continue;
        }
        let s = init_scale(b);
        for v in p.block_mut(b) {
            *v = rng.random_range(-s..s);
        }
    }
    p
}

/// `sqrt(6 / (fan_in + fan_out))` for a weight block.
pub fn init_scale(b: &Block) -> f64 {
    (6.0 / (b.cols + b.rows) as f64).sqrt()
}

/// Every intermediate of one forward evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace<T = f64> {
    /// Post-gate hidden vectors per unit; unit 0 holds the features.
    pub hidden: Vec<Vec<T>>,
    /// Pre-gate hidden vectors per unit (empty for the root).
    pub pre_hidden: Vec<Vec<T>>,
    /// Concept predictions in concept order.
    pub z: Vec<T>,
    pub pre_logits: Vec<T>,
    pub logits: Vec<T>,
    pub probs: Vec<T>,
}

impl<T: Real> ForwardTrace<T> {
    /// Gate applied to the children of `unit`; the root's is 1.
    pub fn gate(&self, unit: usize) -> T {
        if unit == 0 {
            T::ONE
        } else {
            self.z[unit - 1]
        }
    }
}

pub fn forward<T: Real>(p: &HeadParameters<T>, t: &HeadTopology, features: &[T]) -> Result<ForwardTrace<T>> {
    forward_values(&p.values, t, features, &[])
}

/// Forward pass where selected concept gates are replaced by fixed values
/// after being computed. `overrides` holds `(concept index, z)` pairs.
pub fn forward_gated<T: Real>(
    p: &HeadParameters<T>,
    t: &HeadTopology,
    features: &[T],
    overrides: &[(usize, T)],
) -> Result<ForwardTrace<T>> {
    forward_values(&p.values, t, features, overrides)
}

pub(crate) fn forward_values<T: Real>(
    p: &[T],
    t: &HeadTopology,
    features: &[T],
    overrides: &[(usize, T)],
) -> Result<ForwardTrace<T>> {
    if features.len() != t.d0 {
        return Err(Error::ShapeMismatch { expected: t.d0, found: features.len() });
    }
    if p.len() != t.num_params() {
        return Err(Error::ShapeMismatch { expected: t.num_params(), found: p.len() });
    }
    let n_units = t.units.len();
    let n = t.num_categories();
    let mut hidden: Vec<Vec<T>> = vec![Vec::new(); n_units];
    let mut pre_hidden: Vec<Vec<T>> = vec![Vec::new(); n_units];
    let mut z = vec![T::ZERO; n_units - 1];
    let mut pre_logits = vec![T::ZERO; n];
    let mut logits = vec![T::ZERO; n];
    hidden[0] = features.to_vec();

    for (ui, unit) in t.units.iter().enumerate() {
        let off = &t.layout.offsets[ui];
        let width = t.width(ui);
        let h = std::mem::take(&mut hidden[ui]);
        let gate = if ui == 0 {
            T::ONE
        } else {
            let u = &p[off.gate_w..off.gate_w + width];
            let mut zv = (dot(u, &h) + p[off.gate_b]).sigmoid();
            if let Some(&(_, forced)) = overrides.iter().find(|(m, _)| *m == ui - 1) {
                zv = forced;
            }
            z[ui - 1] = zv;
            zv
        };
        for (r, &j) in unit.child_categories.iter().enumerate() {
            let row = &p[off.cat_w + r * width..off.cat_w + (r + 1) * width];
            let xt = dot(row, &h) + p[off.cat_b + r];
            pre_logits[j] = xt;
            logits[j] = xt * gate;
        }
        for &c in &unit.child_units {
            let coff = &t.layout.offsets[c];
            let rows = t.units[c].hidden;
            let mut pre = Vec::with_capacity(rows);
            let mut post = Vec::with_capacity(rows);
            for r in 0..rows {
                let row = &p[coff.hidden_w + r * width..coff.hidden_w + (r + 1) * width];
                let a = (dot(row, &h) + p[coff.hidden_b + r]).relu();
                pre.push(a);
                post.push(a * gate);
            }
            pre_hidden[c] = pre;
            hidden[c] = post;
        }
        hidden[ui] = h;
    }
    let probs = softmax(&logits);
    Ok(ForwardTrace { hidden, pre_hidden, z, pre_logits, logits, probs })
}

/// Parameter offsets the backward pass needs, without exposing the layout.
pub(crate) struct UnitView {
    pub gate_w: usize,
    pub gate_b: usize,
    pub hidden_w: usize,
    pub hidden_b: usize,
    pub cat_w: usize,
    pub cat_b: usize,
}

impl HeadTopology {
    pub(crate) fn unit_view(&self, unit: usize) -> UnitView {
        let o = &self.layout.offsets[unit];
        UnitView {
            gate_w: o.gate_w,
            gate_b: o.gate_b,
            hidden_w: o.hidden_w,
            hidden_b: o.hidden_b,
            cat_w: o.cat_w,
            cat_b: o.cat_b,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BlockCount {
    pub block: String,
    pub kind: BlockKind,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BalancedBound {
    pub alpha: usize,
    pub bound: f64,
    pub within: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParamCountReport {
    pub total: usize,
    pub weights: usize,
    pub biases: usize,
    pub per_kind: Vec<(BlockKind, usize)>,
    pub per_block: Vec<BlockCount>,
    /// `d0 * N + N`: a single dense softmax layer.
    pub flat_total: usize,
    /// `(d0 + 1) * (N + M)`: the flat baseline that also emits concepts.
    pub flat_with_concepts: usize,
    pub height: usize,
    /// Present when the topology is a balanced alpha-way decomposition.
    pub balanced: Option<BalancedBound>,
}

pub fn count_parameters(t: &HeadTopology) -> ParamCountReport {
    let per_block: Vec<BlockCount> =
        t.blocks().iter().map(|b| BlockCount { block: b.to_string(), kind: b.kind, count: b.len() }).collect();
    let total = per_block.iter().map(|b| b.count).sum();
    let biases = per_block.iter().filter(|b| b.kind.is_bias()).map(|b| b.count).sum();
    let per_kind =
        BlockKind::ALL.iter().map(|&k| (k, per_block.iter().filter(|b| b.kind == k).map(|b| b.count).sum())).collect();
    let n = t.num_categories();
    let m = t.num_concepts();
    let balanced = balanced_arity(t).map(|alpha| {
        let a = alpha as f64;
        let bound = (t.mu * t.d0) as f64 * (n as f64 + t.height as f64 + a / (a - 1.0));
        BalancedBound { alpha, bound, within: total as f64 <= bound }
    });
    ParamCountReport {
        total,
        weights: total - biases,
        biases,
        per_kind,
        per_block,
        flat_total: t.d0 * n + n,
        flat_with_concepts: (t.d0 + 1) * (n + m),
        height: t.height,
        balanced,
    }
}

/// `Some(alpha)` when every internal unit has exactly `alpha >= 2` concept
/// children and no categories, and all leaf concepts share one depth and one
/// category count.
pub fn balanced_arity(t: &HeadTopology) -> Option<usize> {
    let alpha = t.units[0].child_units.len();
    if alpha < 2 {
        return None;
    }
    let mut leaf_shape = None;
    for u in &t.units {
        if u.child_units.is_empty() {
            if u.child_categories.is_empty() {
                return None;
            }
            let shape = (u.depth, u.child_categories.len());
            if *leaf_shape.get_or_insert(shape) != shape {
                return None;
            }
        } else if u.child_units.len() != alpha || !u.child_categories.is_empty() {
            return None;
        }
    }
    Some(alpha)
}
