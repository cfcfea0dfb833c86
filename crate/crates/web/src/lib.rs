//! Browser demo. Every export takes and returns plain strings and numbers
//! (JSON for structured results) so the same functions run natively in
//! tests.

use serde::Serialize;
use wasm_bindgen::prelude::*;

use mdhc::dataio::{gen_synthetic, split, SynthConfig};
use mdhc::decoder::decode;
use mdhc::head::{build_topology, count_parameters, forward_gated, init_parameters_with, HeadParameters, HeadTopology};
use mdhc::ontology::condense as condense_ontology;
use mdhc::training::{evaluate_model, train, Decoding, TrainConfig};
use mdhc::{CondensedHierarchy, NodeId, Ontology};

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

fn json<T: Serialize>(v: &T) -> Result<String, String> {
    serde_json::to_string(v).map_err(err)
}

#[derive(Serialize)]
struct Condensed {
    text: String,
    concepts: usize,
    categories: usize,
    height: usize,
    levels: Vec<usize>,
    removed: Vec<(u32, String, String)>,
}

/// Condenses a raw hierarchy file.
#[wasm_bindgen]
pub fn condense(text: &str, tau: f64, delta: usize) -> Result<String, String> {
    let o = Ontology::parse(text).map_err(err)?;
    let h = condense_ontology(&o, tau, delta).map_err(err)?;
    let removed = h
        .removal_log()
        .removed
        .iter()
        .map(|r| (r.id.0, r.name.clone(), format!("{:?} into {}", r.reason, r.merged_into).to_lowercase()))
        .collect();
    json(&Condensed {
        text: h.to_text(),
        concepts: h.num_concepts(),
        categories: h.num_categories(),
        height: h.height(),
        levels: h.concepts_per_level(),
        removed,
    })
}

/// Parameter counts of the gated head over a condensed hierarchy.
#[wasm_bindgen]
pub fn param_count(text: &str, d0: usize, mu: usize) -> Result<String, String> {
    let h = CondensedHierarchy::parse(text).map_err(err)?;
    let t = build_topology(&h, d0, mu).map_err(err)?;
    json(&count_parameters(&t))
}

#[derive(Serialize)]
struct Gate {
    id: u32,
    name: String,
    depth: usize,
    parent: u32,
    z: f64,
    forced: bool,
}

#[derive(Serialize)]
struct Decoded {
    category: u32,
    category_name: String,
    prob: f64,
    chain: Vec<u32>,
    gates: Vec<Gate>,
    top: Vec<(u32, String, f64)>,
}

/// A small gated head trained on synthetic features for one hierarchy.
#[wasm_bindgen]
pub struct Demo {
    h: CondensedHierarchy,
    t: HeadTopology,
    params: HeadParameters,
    synth: SynthConfig,
    accuracy: String,
}

#[wasm_bindgen]
impl Demo {
    /// Trains on `per_category` synthetic examples per category.
    #[wasm_bindgen(constructor)]
    pub fn new(text: &str, seed: u32, epochs: u32, per_category: u32) -> Result<Demo, String> {
        let h = CondensedHierarchy::parse(text).map_err(err)?;
        let d0 = (1 + h.num_concepts() + h.num_categories()).next_multiple_of(8);
        let synth =
            SynthConfig { d0, per_category: per_category as usize, sigma: 0.15, seed: seed as u64, level_gain: 1.0 };
        let ds = gen_synthetic(&h, &synth).map_err(err)?;
        let (tr, te) = split(&ds, 0.8, seed as u64).map_err(err)?;
        let t = build_topology(&h, d0, 2).map_err(err)?;
        let cfg =
            TrainConfig { epochs: epochs as usize, lr: 0.003, batch: 32, seed: seed as u64, ..Default::default() };
        let init = init_parameters_with(&t, seed as u64, 0.1).values;
        let out = train(&t, init, &tr, None, &h, &cfg, |_, _| Ok(())).map_err(err)?;
        let report = evaluate_model(&t, &out.params, &te, &h, cfg.threshold, Decoding::Native).map_err(err)?;
        Ok(Demo { h, t, params: HeadParameters { values: out.params }, synth, accuracy: json(&report)? })
    }

    /// Held-out metrics of the trained head, as JSON.
    pub fn accuracy(&self) -> String {
        self.accuracy.clone()
    }

    /// `[[id, name], ...]` for categories, then concepts.
    pub fn nodes(&self) -> String {
        let list = |ids: Vec<NodeId>| -> Vec<(u32, String)> {
            ids.into_iter().map(|c| (c.0, self.h.node(c).map(|n| n.name.clone()).unwrap_or_default())).collect()
        };
        json(&(list(self.h.categories()), list(self.h.concepts()))).unwrap_or_default()
    }

    /// Decodes one noisy example of `category`. `forced` is a JSON list of
    /// `[concept_id, z]` pairs that replace the computed gates.
    pub fn decode(
        &self,
        category: u32,
        noise: f64,
        sample: u32,
        threshold: f64,
        forced: &str,
    ) -> Result<String, String> {
        let cats = self.h.categories();
        let row = cats.iter().position(|c| c.0 == category).ok_or_else(|| format!("{category} is not a category"))?;
        let cfg =
            SynthConfig { per_category: 1, sigma: noise, seed: self.synth.seed ^ (sample as u64 + 1), ..self.synth };
        let ds = gen_synthetic(&self.h, &cfg).map_err(err)?;
        let pairs: Vec<(u32, f64)> =
            if forced.trim().is_empty() { Vec::new() } else { serde_json::from_str(forced).map_err(err)? };
        let mut overrides = Vec::new();
        for (id, z) in &pairs {
            let m = self.t.concept_index(NodeId(*id)).ok_or_else(|| format!("{id} is not a concept"))?;
            overrides.push((m, z.clamp(0.0, 1.0)));
        }
        let trace = forward_gated(&self.params, &self.t, ds.row(row), &overrides).map_err(err)?;
        let p = decode(&trace, &self.h, threshold).map_err(err)?;
        let name = |id: NodeId| self.h.node(id).map(|n| n.name.clone()).unwrap_or_default();
        let gates = self
            .h
            .concepts()
            .into_iter()
            .zip(&trace.z)
            .map(|(c, &z)| Gate {
                id: c.0,
                name: name(c),
                depth: self.h.depth(c).unwrap_or(0),
                parent: self.h.parent(c).ok().flatten().map_or(0, |p| p.0),
                z,
                forced: pairs.iter().any(|(id, _)| *id == c.0),
            })
            .collect();
        let mut order: Vec<usize> = (0..cats.len()).collect();
        order.sort_by(|&a, &b| trace.probs[b].total_cmp(&trace.probs[a]));
        let top = order.iter().take(5).map(|&j| (cats[j].0, name(cats[j]), trace.probs[j])).collect();
        json(&Decoded {
            category: p.category.0,
            category_name: name(p.category),
            prob: p.category_prob,
            chain: p.chain.iter().map(|c| c.0).collect(),
            gates,
            top,
        })
    }
}
