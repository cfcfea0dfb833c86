//! Acceptance checks, one line per criterion.
//!
//! `cargo test -p mdhc-cli --test acceptance` runs them all; pass criterion
//! numbers as arguments to run a subset.

use std::collections::{BTreeSet, HashMap};
use std::process::{Command, ExitCode};
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use anyhow::{ensure, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use mdhc::baselines::FlatTopology;
use mdhc::dataio::{
    balanced_hierarchy, gen_synthetic, random_dag, random_hierarchy, split, FeatureDataset, SynthConfig,
};
use mdhc::decoder::{concept_marginals, decode, decode_pragg};
use mdhc::head::{build_topology, count_parameters, forward, forward_gated, init_parameters_with, BlockKind};
use mdhc::metrics::{evaluate, hier_pr, iou, EvalItem, MetricsReport};
use mdhc::num::softmax;
use mdhc::ontology::condense;
use mdhc::training::gradcheck::{gradcheck, head_regions, random_problem, ProblemSize};
use mdhc::training::{evaluate_model, train, ConceptLossKind, Decoding, LossConfig, TrainConfig};
use mdhc::{CondensedHierarchy, NodeId, NodeKind, Ontology};

type Check = fn() -> Result<String>;

fn main() -> ExitCode {
    let only: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let criteria: [(&str, Check); 9] = [
        ("gradient correctness", gradients),
        ("gating invariant", gating),
        ("condensation postconditions", condensation),
        ("metrics oracle", metrics_oracle),
        ("synthetic training", synthetic_training),
        ("flat baseline parity", flat_parity),
        ("parameter count", parameter_count),
        ("determinism", determinism),
        ("decoder properties", decoder_properties),
    ];
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().expect("thread pool");
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let k = i + 1;
        if !only.is_empty() && !only.contains(&k) {
            continue;
        }
        let start = Instant::now();
        let result = pool.install(check);
        let secs = start.elapsed().as_secs_f64();
        match result {
            Ok(detail) => println!("criterion {k} PASS  {name} ({secs:.1} s): {detail}"),
            Err(e) => {
                failed += 1;
                println!("criterion {k} FAIL  {name} ({secs:.1} s): {e:#}");
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

fn within(start: Instant, limit: Duration) -> Result<()> {
    let took = start.elapsed();
    ensure!(took < limit, "took {:.1} s, limit {:.0} s", took.as_secs_f64(), limit.as_secs_f64());
    Ok(())
}

// 1 -----------------------------------------------------------------------

fn gradients() -> Result<String> {
    let start = Instant::now();
    let prob = random_problem(&ProblemSize::default(), 7)?;
    ensure!(prob.hierarchy.num_concepts() == 6 && prob.hierarchy.num_categories() == 12);
    let regions = head_regions(&prob.topology);
    let mut worst: f64 = 0.0;
    for kind in [ConceptLossKind::BinaryCrossEntropy, ConceptLossKind::MeanSquaredError] {
        for lambda in [0.0, 5.0] {
            let cfg = LossConfig { lambda, concept_loss: kind };
            let r =
                gradcheck::<_, f64>(&prob.topology, &prob.params, &regions, &prob.samples, &cfg, &Default::default())?;
            for reg in &r.regions {
                ensure!(
                    reg.max_rel_err <= 1e-5,
                    "{kind:?} lambda {lambda}: {} error {:.2e}",
                    reg.name,
                    reg.max_rel_err
                );
            }
            worst = worst.max(r.max_rel_err);
        }
    }
    within(start, Duration::from_secs(10))?;
    Ok(format!("{} blocks x 4 configs, max rel err {worst:.2e}", regions.len()))
}

// 2 -----------------------------------------------------------------------

fn gating() -> Result<String> {
    let prob = random_problem(&ProblemSize::default(), 11)?;
    let t = &prob.topology;
    let p = init_parameters_with(t, 11, 0.5);
    let mut checked = 0;
    for s in &prob.samples {
        for m in 0..t.num_concepts() {
            let unit = &t.units[m + 1];
            let closed = forward_gated(&p, t, &s.features, &[(m, 0.0)])?;
            let open = forward_gated(&p, t, &s.features, &[(m, 1.0)])?;
            for &j in &unit.child_categories {
                ensure!(closed.logits[j] == 0.0, "concept {m}: logit {j} is {}", closed.logits[j]);
                ensure!(open.logits[j].to_bits() == open.pre_logits[j].to_bits(), "concept {m}: logit {j} changed");
            }
            for &c in &unit.child_units {
                ensure!(closed.hidden[c].iter().all(|&v| v == 0.0), "concept {m}: unit {c} not silenced");
                let same = open.hidden[c].iter().zip(&open.pre_hidden[c]).all(|(a, b)| a.to_bits() == b.to_bits());
                ensure!(same, "concept {m}: unit {c} changed under an open gate");
            }
            checked += 1;
        }
    }
    Ok(format!("{checked} (sample, concept) pairs, {} concepts", t.num_concepts()))
}

// 3 -----------------------------------------------------------------------

/// Postconditions of condensation, checked from the edge list alone.
fn check_condensed(o: &Ontology, h: &CondensedHierarchy, tau: f64, delta: usize) -> Result<()> {
    let kind: HashMap<NodeId, NodeKind> = h.nodes().iter().map(|n| (n.id, n.kind)).collect();
    let root = o.root();
    let mut parent: HashMap<NodeId, NodeId> = HashMap::new();
    let mut children: HashMap<NodeId, Vec<NodeId>> = HashMap::new();
    for (p, c) in h.edges() {
        ensure!(kind.contains_key(&p) && kind.contains_key(&c), "edge {p:?}->{c:?} leaves the node set");
        ensure!(parent.insert(c, p).is_none(), "{c:?} has two parents");
        children.entry(p).or_default().push(c);
    }
    ensure!(!parent.contains_key(&root), "root has a parent");
    ensure!(parent.len() + 1 == kind.len(), "not every non-root node has a parent");
    // Walk up from every node; a cycle would exceed the node count.
    for &n in kind.keys() {
        let mut cur = n;
        let mut steps = 0;
        while cur != root {
            cur = parent[&cur];
            steps += 1;
            ensure!(steps <= kind.len(), "{n:?} does not reach the root");
        }
    }
    fn eta(n: NodeId, kind: &HashMap<NodeId, NodeKind>, children: &HashMap<NodeId, Vec<NodeId>>) -> usize {
        match kind[&n] {
            NodeKind::Category => 1,
            NodeKind::Concept => children.get(&n).map_or(0, |cs| cs.iter().map(|&c| eta(c, kind, children)).sum()),
        }
    }
    for (&n, &k) in &kind {
        if k == NodeKind::Category {
            ensure!(!children.contains_key(&n), "category {n:?} has children");
            continue;
        }
        let kids = children.get(&n).cloned().unwrap_or_default();
        ensure!(!kids.is_empty(), "concept {n:?} has no children");
        ensure!(!(kids.len() == 1 && kind[&kids[0]] == NodeKind::Concept), "{n:?} has a single concept child");
        if n == root {
            continue;
        }
        let e = eta(n, &kind, &children);
        ensure!(e >= delta, "{n:?}: eta {e} < delta {delta}");
        let ep = eta(parent[&n], &kind, &children);
        ensure!((e as f64) / (ep as f64) < tau, "{n:?}: eta ratio {e}/{ep} >= tau {tau}");
    }
    let before: BTreeSet<NodeId> = o.nodes().iter().filter(|n| n.kind == NodeKind::Category).map(|n| n.id).collect();
    let after: BTreeSet<NodeId> = kind.iter().filter(|(_, k)| **k == NodeKind::Category).map(|(&n, _)| n).collect();
    ensure!(before == after, "category set changed");
    Ok(())
}

fn condensation() -> Result<String> {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let (mut redrawn, mut largest, mut removed) = (0, 0, 0);
    for case in 0..500 {
        let tau = rng.random_range(0.5..=1.0);
        let delta = rng.random_range(1..=30);
        // Redraw until the DAG has at least delta categories.
        let (n, o) = loop {
            let n = rng.random_range(2..=300);
            let o = random_dag(n, rng.random_range(0.2..0.8), rng.random_range(0.0..0.6), &mut rng)?;
            if o.num_categories() >= delta {
                break (n, o);
            }
            redrawn += 1;
        };
        largest = largest.max(n);
        let h = condense(&o, tau, delta).map_err(|e| anyhow::anyhow!("case {case}: {e}"))?;
        check_condensed(&o, &h, tau, delta).map_err(|e| e.context(format!("case {case} tau {tau} delta {delta}")))?;
        removed += h.removal_log().removed.len();
    }
    within(start, Duration::from_secs(30))?;
    Ok(format!("500 of 500 pass ({removed} concepts removed, up to {largest} nodes, {redrawn} DAGs redrawn)"))
}

// 4 -----------------------------------------------------------------------

struct Oracle {
    parent: HashMap<NodeId, NodeId>,
    children: HashMap<NodeId, Vec<NodeId>>,
    root: NodeId,
}

impl Oracle {
    fn new(h: &CondensedHierarchy) -> Self {
        let mut parent = HashMap::new();
        let mut children: HashMap<NodeId, Vec<NodeId>> = HashMap::new();
        for (p, c) in h.edges() {
            parent.insert(c, p);
            children.entry(p).or_default().push(c);
        }
        Oracle { parent, children, root: h.root() }
    }

    /// Strict ancestors without the root.
    fn ancestors(&self, n: NodeId) -> BTreeSet<NodeId> {
        let mut out = BTreeSet::new();
        let mut cur = self.parent[&n];
        while cur != self.root {
            out.insert(cur);
            cur = self.parent[&cur];
        }
        out
    }

    fn height(&self, n: NodeId) -> usize {
        self.children.get(&n).map_or(0, |cs| 1 + cs.iter().map(|&c| self.height(c)).max().unwrap_or(0))
    }

    fn lca_height(&self, a: NodeId, b: NodeId) -> usize {
        let up = |mut n: NodeId| {
            let mut v = vec![n];
            while n != self.root {
                n = self.parent[&n];
                v.push(n);
            }
            v
        };
        let pa = up(a);
        let pb: BTreeSet<NodeId> = up(b).into_iter().collect();
        let l = pa.into_iter().find(|n| pb.contains(n)).expect("common root");
        self.height(l)
    }
}

/// Ratio with the 0/0 convention passed in.
fn ratio(num: usize, den: usize, empty: f64) -> f64 {
    if den == 0 {
        empty
    } else {
        num as f64 / den as f64
    }
}

fn metrics_oracle() -> Result<String> {
    let h = random_hierarchy(&[3, 4, 6], 40, 5)?;
    let oracle = Oracle::new(&h);
    let cats = h.categories();
    let concepts = h.concepts();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut items = Vec::new();
    let mut truths = Vec::new();
    for _ in 0..1000 {
        let truth = cats[rng.random_range(0..cats.len())];
        let cat = if rng.random_bool(0.5) { truth } else { cats[rng.random_range(0..cats.len())] };
        let chain: Vec<NodeId> = match rng.random_range(0..4) {
            0 => h.ancestor_chain(truth)?,
            1 => h.ancestor_chain(cat)?,
            2 => {
                let mut c = h.ancestor_chain(truth)?;
                c.truncate(rng.random_range(0..=c.len()));
                c
            }
            _ => concepts.iter().copied().filter(|_| rng.random_bool(0.2)).collect(),
        };
        items.push(EvalItem { category: cat, chain });
        truths.push(truth);
    }

    let (mut sp, mut sr, mut siou) = (0.0, 0.0, 0.0);
    let (mut con, mut comb, mut cat_ok, mut diff, mut wrong, mut lca_sum) = (0, 0, 0, 0, 0, 0);
    for (it, &truth) in items.iter().zip(&truths) {
        let pred: BTreeSet<NodeId> = it.chain.iter().copied().collect();
        let gold = oracle.ancestors(truth);
        let inter = pred.intersection(&gold).count();
        let union = pred.union(&gold).count();
        let hp = if pred.is_empty() {
            if gold.is_empty() {
                1.0
            } else {
                0.0
            }
        } else {
            ratio(inter, pred.len(), 1.0)
        };
        let hr = ratio(inter, gold.len(), 1.0);
        let j = ratio(inter, union, 1.0);
        let (lp, lr) = hier_pr(&it.chain, &h.ancestor_chain(truth)?);
        let lj = iou(&it.chain, &h.ancestor_chain(truth)?);
        ensure!(lp == hp && lr == hr && lj == j, "per-pair mismatch: ({lp}, {lr}, {lj}) vs ({hp}, {hr}, {j})");
        sp += hp;
        sr += hr;
        siou += j;
        let c_ok = pred == gold;
        let k_ok = it.category == truth;
        con += c_ok as usize;
        cat_ok += k_ok as usize;
        comb += (c_ok && k_ok) as usize;
        if !k_ok {
            wrong += 1;
            lca_sum += oracle.lca_height(it.category, truth);
        }
        diff += (oracle.ancestors(it.category) != gold) as usize;
    }
    let n = items.len() as f64;
    let want = [
        ("acc_cat", cat_ok as f64 / n),
        ("acc_con", con as f64 / n),
        ("acc_comb", comb as f64 / n),
        ("mhp", sp / n),
        ("mhr", sr / n),
        ("iou", siou / n),
        ("n_diff", diff as f64 / n),
        ("h_lca", ratio(lca_sum, wrong, 0.0)),
    ];
    let r: MetricsReport = evaluate(&items, &truths, &h)?;
    let got = [r.acc_cat, r.acc_con, r.acc_comb, r.mhp, r.mhr, r.iou_concept, r.n_diff, r.h_lca_mean];
    for ((name, w), g) in want.iter().zip(got) {
        ensure!((w - g).abs() <= 1e-12, "{name}: library {g}, oracle {w}");
    }
    ensure!(r.misclassified == wrong);
    Ok(format!("1000 pairs, {wrong} misclassified, all 9 quantities agree to 1e-12"))
}

// 5, 6 --------------------------------------------------------------------

struct Runs {
    md: MetricsReport,
    md_no_concepts: MetricsReport,
    flat: MetricsReport,
    md_seconds: f64,
    per_category: (usize, usize),
}

fn synthetic_data() -> Result<(CondensedHierarchy, FeatureDataset, FeatureDataset)> {
    let h = random_hierarchy(&[2, 2, 3], 24, 0)?;
    let synth = SynthConfig { d0: 64, per_category: 250, sigma: 0.15, seed: 1, level_gain: 1.0 };
    let ds = gen_synthetic(&h, &synth)?;
    let (tr, te) = split(&ds, 0.8, 2)?;
    Ok((h, tr, te))
}

fn config(lambda: f64) -> TrainConfig {
    TrainConfig { lambda, lr: 0.003, epochs: 50, seed: 0, ..Default::default() }
}

fn runs() -> Result<&'static Runs> {
    static RUNS: OnceLock<std::result::Result<Runs, String>> = OnceLock::new();
    RUNS.get_or_init(|| run_all().map_err(|e| format!("{e:#}"))).as_ref().map_err(|e| anyhow::anyhow!("{e}"))
}

fn run_all() -> Result<Runs> {
    let (h, tr, te) = synthetic_data()?;
    let counts_tr = tr.label_counts();
    let counts_te = te.label_counts();
    ensure!(counts_tr.len() == 24 && counts_te.len() == 24);
    let per_category = (*counts_tr.values().min().unwrap(), *counts_te.values().min().unwrap());

    let t = build_topology(&h, 64, 2)?;
    let md_run = |lambda: f64| -> Result<MetricsReport> {
        let cfg = config(lambda);
        let init = init_parameters_with(&t, cfg.seed, 0.1).values;
        let out = train(&t, init, &tr, None, &h, &cfg, |_, _| Ok(()))?;
        Ok(evaluate_model(&t, &out.params, &te, &h, cfg.threshold, Decoding::Native)?)
    };
    let start = Instant::now();
    let md = md_run(5.0)?;
    let md_no_concepts = md_run(0.0)?;
    let md_seconds = start.elapsed().as_secs_f64();

    let ft = FlatTopology::new(&h, 64)?;
    let cfg = config(5.0);
    let out = train(&ft, ft.init_parameters(cfg.seed), &tr, None, &h, &cfg, |_, _| Ok(()))?;
    let flat = evaluate_model(&ft, &out.params, &te, &h, cfg.threshold, Decoding::Native)?;
    Ok(Runs { md, md_no_concepts, flat, md_seconds, per_category })
}

fn synthetic_training() -> Result<String> {
    let r = runs()?;
    ensure!(r.per_category == (200, 50), "split gives {:?} per category", r.per_category);
    ensure!(r.md_seconds < 120.0, "two training runs took {:.1} s", r.md_seconds);
    ensure!(r.md.acc_comb >= 0.95, "Acc_COMB {:.4} < 0.95", r.md.acc_comb);
    let gap = r.md.acc_con - r.md_no_concepts.acc_con;
    ensure!(gap >= 0.3, "Acc_CON gap {gap:.4} < 0.3");
    Ok(format!(
        "Acc_COMB {:.4}, Acc_CON {:.4} vs {:.4} at lambda 0 (gap {gap:.3}), both runs {:.1} s",
        r.md.acc_comb, r.md.acc_con, r.md_no_concepts.acc_con, r.md_seconds
    ))
}

fn flat_parity() -> Result<String> {
    let r = runs()?;
    let d = (r.flat.acc_cat - r.md.acc_cat).abs();
    ensure!(d <= 0.03, "Acc_CAT differs by {d:.4} (flat {:.4}, gated {:.4})", r.flat.acc_cat, r.md.acc_cat);
    ensure!(r.md.acc_con >= r.flat.acc_con, "Acc_CON gated {:.4} < flat {:.4}", r.md.acc_con, r.flat.acc_con);
    Ok(format!(
        "Acc_CAT gated {:.4} / flat {:.4}, Acc_CON gated {:.4} / flat {:.4}",
        r.md.acc_cat, r.flat.acc_cat, r.md.acc_con, r.flat.acc_con
    ))
}

// 7 -----------------------------------------------------------------------

/// Parameter count by walking the hierarchy: one gate, one hidden block and
/// one softmax row per node, sized from leaf counts alone.
fn enumerate_weights(h: &CondensedHierarchy, d0: usize, mu: usize) -> Result<HashMap<BlockKind, usize>> {
    let oracle = Oracle::new(h);
    let leaves = |n: NodeId| -> usize {
        let mut stack = vec![n];
        let mut k = 0;
        while let Some(x) = stack.pop() {
            match oracle.children.get(&x) {
                Some(cs) => stack.extend(cs),
                None => k += 1,
            }
        }
        k
    };
    let width = |n: NodeId| if n == oracle.root { d0 } else { mu * leaves(n) };
    let mut counts: HashMap<BlockKind, usize> = HashMap::new();
    let mut add = |k: BlockKind, n: usize| *counts.entry(k).or_default() += n;
    for node in h.nodes() {
        if node.id == oracle.root {
            continue;
        }
        let parent_width = width(oracle.parent[&node.id]);
        match node.kind {
            NodeKind::Concept => {
                let w = width(node.id);
                for _ in 0..w {
                    for _ in 0..parent_width {
                        add(BlockKind::HiddenWeights, 1);
                    }
                    add(BlockKind::HiddenBias, 1);
                    add(BlockKind::GateWeights, 1);
                }
                add(BlockKind::GateBias, 1);
            }
            NodeKind::Category => {
                for _ in 0..parent_width {
                    add(BlockKind::CategoryWeights, 1);
                }
                add(BlockKind::CategoryBias, 1);
            }
        }
    }
    Ok(counts)
}

fn parameter_count() -> Result<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for case in 0..100 {
        let h = if case % 2 == 0 {
            let levels: Vec<usize> = (0..rng.random_range(1..=4)).map(|_| rng.random_range(1..=4)).collect();
            let m: usize = levels.iter().sum();
            random_hierarchy(&levels, 2 * m + rng.random_range(0..20), rng.random())?
        } else {
            let o = random_dag(rng.random_range(10..120), 0.4, 0.3, &mut rng)?;
            condense(&o, rng.random_range(0.6..=1.0), 1)?
        };
        let d0 = rng.random_range(1..=64);
        let mu = rng.random_range(1..=3);
        let t = build_topology(&h, d0, mu)?;
        let report = count_parameters(&t);
        let oracle = enumerate_weights(&h, d0, mu)?;
        for (kind, n) in &report.per_kind {
            let want = oracle.get(kind).copied().unwrap_or(0);
            ensure!(*n == want, "case {case}: {kind:?} counted {n}, enumerated {want}");
        }
        ensure!(report.total == oracle.values().sum::<usize>() && report.total == t.num_params());
    }

    let d0 = 2048;
    let mu = 2;
    let shapes = [(2, 1, 4), (2, 2, 4), (2, 3, 4), (2, 4, 4), (3, 1, 4), (3, 2, 4), (3, 3, 2), (4, 1, 4), (4, 2, 4)];
    let mut tightest: f64 = 0.0;
    for (alpha, depth, leaves) in shapes {
        let h = balanced_hierarchy(alpha, depth, leaves)?;
        let t = build_topology(&h, d0, mu)?;
        let total = count_parameters(&t).total as f64;
        let (n, rho, a) = (h.num_categories() as f64, h.height() as f64, alpha as f64);
        let bound = (mu * d0) as f64 * (n + rho + a / (a - 1.0));
        ensure!(total <= bound, "alpha {alpha} depth {depth} leaves {leaves}: {total} > {bound}");
        tightest = tightest.max(total / bound);
    }
    Ok(format!(
        "100 random topologies match, {} balanced shapes within the bound (max ratio {tightest:.3})",
        shapes.len()
    ))
}

// 8 -----------------------------------------------------------------------

fn determinism() -> Result<String> {
    let dir = tempfile::tempdir()?;
    let d = dir.path();
    let run = |args: &[&str]| -> Result<()> {
        let out = Command::new(env!("CARGO_BIN_EXE_mdhc")).current_dir(d).args(args).output()?;
        ensure!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
        Ok(())
    };
    run(&["--seed", "5", "gen-synth", "-o", ".", "--per-category", "40", "--train-fraction", "0.8"])?;
    for k in ["a", "b"] {
        let out = format!("{k}.ckpt");
        run(&[
            "--threads",
            "1",
            "--seed",
            "9",
            "train",
            "--hierarchy",
            "hierarchy.txt",
            "--features",
            "train.bin",
            "--labels",
            "train.labels.csv",
            "--test-features",
            "test.bin",
            "--test-labels",
            "test.labels.csv",
            "--epochs",
            "6",
            "--lr",
            "0.003",
            "--hidden-bias",
            "0.1",
            "-o",
            &out,
        ])?;
    }
    let mut bytes = 0;
    for suffix in ["ckpt", "ckpt.epochs.csv", "ckpt.topology.json"] {
        let a = std::fs::read(d.join(format!("a.{suffix}")))?;
        let b = std::fs::read(d.join(format!("b.{suffix}")))?;
        ensure!(a == b, "{suffix} differs between runs");
        bytes += a.len();
    }
    Ok(format!("checkpoints, sidecars and epoch logs identical ({bytes} bytes compared)"))
}

// 9 -----------------------------------------------------------------------

fn parent_closed(oracle: &Oracle, chain: &[NodeId]) -> bool {
    let set: BTreeSet<NodeId> = chain.iter().copied().collect();
    set.len() == chain.len() && chain.iter().all(|c| oracle.parent[c] == oracle.root || set.contains(&oracle.parent[c]))
}

fn decoder_properties() -> Result<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let mut chains = 0;
    for case in 0..100u64 {
        let prob = random_problem(&ProblemSize { samples: 10, ..Default::default() }, case)?;
        let oracle = Oracle::new(&prob.hierarchy);
        let p = init_parameters_with(&prob.topology, case, rng.random_range(-0.5..1.0));
        for s in &prob.samples {
            let trace = forward(&p, &prob.topology, &s.features)?;
            let thr = rng.random_range(0.05..0.95);
            let a = decode(&trace, &prob.hierarchy, thr)?;
            let b = decode_pragg(&trace.probs, &prob.hierarchy, thr)?;
            ensure!(parent_closed(&oracle, &a.chain), "case {case}: gated chain {:?}", a.chain);
            ensure!(parent_closed(&oracle, &b.chain), "case {case}: pragg chain {:?}", b.chain);
            chains += 2;
        }
    }

    let h = random_hierarchy(&[2, 3, 4], 30, 3)?;
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let scale = rng.random_range(0.1..20.0);
        let logits: Vec<f64> = (0..h.num_categories()).map(|_| scale * rng.random_range(-1.0..1.0)).collect();
        let (_, root) = concept_marginals(&softmax(&logits), &h)?;
        worst = worst.max((root - 1.0).abs());
    }
    ensure!(worst <= 1e-9, "root marginal off by {worst:.2e}");

    let (h, tr, _) = small_synthetic()?;
    let t = build_topology(&h, 16, 2)?;
    let cfg = TrainConfig { epochs: 1, stage_epochs: 1, batch: 16, lr: 0.003, ..Default::default() };
    let init = init_parameters_with(&t, 0, 0.1).values;
    let after = train(&t, init.clone(), &tr, None, &h, &cfg, |_, _| Ok(()))?.params;
    let mut frozen = 0;
    for b in t.blocks() {
        let r = b.range();
        let same = after[r.clone()] == init[r];
        let category = matches!(b.kind, BlockKind::CategoryWeights | BlockKind::CategoryBias);
        ensure!(same == category, "block {b}: unchanged = {same} after the first stage");
        frozen += category as usize;
    }
    let ft = FlatTopology::new(&h, 16)?;
    let init = ft.init_parameters(0);
    let after = train(&ft, init.clone(), &tr, None, &h, &cfg, |_, _| Ok(()))?.params;
    let mask = mdhc::training::Model::concept_mask(&ft);
    ensure!(mask.iter().zip(init.iter().zip(&after)).all(|(&m, (a, b))| m || a == b), "flat category weights moved");

    Ok(format!(
        "{chains} chains parent-closed, root marginal within {worst:.1e}, {frozen} category blocks frozen in stage 1"
    ))
}

fn small_synthetic() -> Result<(CondensedHierarchy, FeatureDataset, FeatureDataset)> {
    let h = random_hierarchy(&[2, 2], 8, 4)?;
    let ds = gen_synthetic(&h, &SynthConfig { d0: 16, per_category: 20, sigma: 0.2, seed: 4, level_gain: 1.0 })?;
    let (tr, te) = split(&ds, 0.75, 4)?;
    Ok((h, tr, te))
}
