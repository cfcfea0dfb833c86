//! Category accuracy, chain precision/recall and mistake severity.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::ontology::{CondensedHierarchy, NodeId};

/// What the evaluator needs from a prediction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EvalItem {
    pub category: NodeId,
    /// Predicted concepts, root excluded; treated as a set.
    pub chain: Vec<NodeId>,
}

impl From<&crate::decoder::Prediction> for EvalItem {
    fn from(p: &crate::decoder::Prediction) -> Self {
        Self { category: p.category, chain: p.chain.clone() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReport {
    pub count: usize,
    pub acc_cat: f64,
    pub acc_con: f64,
    pub acc_comb: f64,
    pub mhp: f64,
    pub mhr: f64,
    /// Mean LCA height over misclassified examples; 0 when there are none.
    pub h_lca_mean: f64,
    pub misclassified: usize,
    /// False when `h_lca_mean` averages over an empty set.
    pub h_lca_defined: bool,
    pub n_diff: f64,
    pub iou_concept: f64,
}

impl MetricsReport {
    /// Aligned text table, percentages with two decimals.
    pub fn to_table(&self, label: &str) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<12} {:>8} {:>8} {:>9} {:>8} {:>8} {:>7} {:>7} {:>8}",
            "Method", "Acc_CAT", "Acc_CON", "Acc_COMB", "mhP", "mhR", "N_diff", "h_LCA", "IoU_CON"
        );
        let h_lca = if self.h_lca_defined { format!("{:.3}", self.h_lca_mean) } else { "-".to_string() };
        let _ = writeln!(
            out,
            "{:<12} {:>8.2} {:>8.2} {:>9.2} {:>8.2} {:>8.2} {:>7.2} {:>7} {:>8.2}",
            label,
            100.0 * self.acc_cat,
            100.0 * self.acc_con,
            100.0 * self.acc_comb,
            100.0 * self.mhp,
            100.0 * self.mhr,
            100.0 * self.n_diff,
            h_lca,
            100.0 * self.iou_concept
        );
        out
    }
}

/// Set-based hierarchical precision and recall.
///
/// An empty prediction has precision 1 against an empty truth and 0
/// otherwise; recall against an empty truth is 1.
pub fn hier_pr(pred: &[NodeId], truth: &[NodeId]) -> (f64, f64) {
    let (inter, np, nt) = overlap(pred, truth);
    let hp = if np == 0 {
        if nt == 0 {
            1.0
        } else {
            0.0
        }
    } else {
        inter as f64 / np as f64
    };
    let hr = if nt == 0 { 1.0 } else { inter as f64 / nt as f64 };
    (hp, hr)
}

/// Intersection over union of two concept sets; 1 when both are empty.
pub fn iou(pred: &[NodeId], truth: &[NodeId]) -> f64 {
    let (inter, np, nt) = overlap(pred, truth);
    let union = np + nt - inter;
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}

fn overlap(pred: &[NodeId], truth: &[NodeId]) -> (usize, usize, usize) {
    let p: BTreeSet<NodeId> = pred.iter().copied().collect();
    let t: BTreeSet<NodeId> = truth.iter().copied().collect();
    (p.intersection(&t).count(), p.len(), t.len())
}

pub fn evaluate(predictions: &[EvalItem], truths: &[NodeId], h: &CondensedHierarchy) -> Result<MetricsReport> {
    if predictions.len() != truths.len() {
        return Err(Error::LengthMismatch(predictions.len(), truths.len()));
    }
    let n = predictions.len();
    let (mut cat, mut con, mut comb, mut diff) = (0usize, 0usize, 0usize, 0usize);
    let (mut sum_p, mut sum_r, mut sum_iou) = (0.0, 0.0, 0.0);
    let (mut lca_sum, mut wrong) = (0usize, 0usize);
    for (pred, &truth) in predictions.iter().zip(truths) {
        let truth_chain = h.ancestor_chain(truth)?;
        let (inter, np, nt) = overlap(&pred.chain, &truth_chain);
        let (hp, hr) = hier_pr(&pred.chain, &truth_chain);
        sum_p += hp;
        sum_r += hr;
        sum_iou += iou(&pred.chain, &truth_chain);
        // Exact: both ratios equal 1 iff the sets coincide.
        let chain_ok = inter == np && inter == nt;
        let cat_ok = pred.category == truth;
        cat += cat_ok as usize;
        con += chain_ok as usize;
        comb += (cat_ok && chain_ok) as usize;
        if !cat_ok {
            wrong += 1;
            lca_sum += h.lca(pred.category, truth)?.1;
        }
        if h.ancestor_chain(pred.category)? != truth_chain {
            diff += 1;
        }
    }
    let frac = |k: usize| if n == 0 { 0.0 } else { k as f64 / n as f64 };
    let mean = |s: f64| if n == 0 { 0.0 } else { s / n as f64 };
    Ok(MetricsReport {
        count: n,
        acc_cat: frac(cat),
        acc_con: frac(con),
        acc_comb: frac(comb),
        mhp: mean(sum_p),
        mhr: mean(sum_r),
        h_lca_mean: if wrong == 0 { 0.0 } else { lca_sum as f64 / wrong as f64 },
        misclassified: wrong,
        h_lca_defined: wrong > 0,
        n_diff: frac(diff),
        iou_concept: mean(sum_iou),
    })
}
