//! Analytic gradients against central finite differences.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use super::{concept_targets, LossConfig, Model};
use crate::baselines::FlatTopology;
use crate::error::Result;
use crate::head::{build_topology, init_parameters, BlockKind, HeadTopology};
use crate::num::Real;
use crate::ontology::CondensedHierarchy;

pub const TOLERANCE_F64: f64 = 1e-5;
pub const TOLERANCE_F32: f64 = 1e-2;
pub const DEFAULT_EPS: f64 = 1e-6;
/// Denominator floor: differences between gradients smaller than this are
/// judged in absolute terms.
pub const DEFAULT_FLOOR: f64 = 1e-3;

/// `|a - n| / max(|a|, |n|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

#[derive(Debug, Clone)]
pub struct Sample {
    pub features: Vec<f64>,
    pub label: usize,
    pub targets: Vec<f64>,
}

/// A named parameter range to report on.
#[derive(Debug, Clone)]
pub struct Region {
    pub name: String,
    pub symbol: &'static str,
    pub range: std::ops::Range<usize>,
}

pub fn head_regions(t: &HeadTopology) -> Vec<Region> {
    t.blocks()
        .iter()
        .filter(|b| !b.is_empty())
        .map(|b| Region { name: b.to_string(), symbol: b.kind.symbol(), range: b.range() })
        .collect()
}

/// Category and concept weights and biases of the flat baseline.
pub fn flat_regions(t: &FlatTopology) -> Vec<Region> {
    let (n, m, d0) = (t.categories.len(), t.concepts.len(), t.d0);
    let b = (n + m) * d0;
    [
        ("category weights", "v", 0..n * d0),
        ("concept weights", "u", n * d0..b),
        ("category bias", "b_x", b..b + n),
        ("concept bias", "b_z", b + n..b + n + m),
    ]
    .into_iter()
    .filter(|(_, _, r)| !r.is_empty())
    .map(|(name, symbol, range)| Region { name: name.into(), symbol, range })
    .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckOptions {
    pub eps: f64,
    pub floor: f64,
    /// Test hook: perturb the analytic gradient of the first region with
    /// this symbol.
    pub corrupt: Option<&'static str>,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self { eps: DEFAULT_EPS, floor: DEFAULT_FLOOR, corrupt: None }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RegionError {
    pub name: String,
    pub symbol: &'static str,
    pub max_rel_err: f64,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub precision: &'static str,
    pub tolerance: f64,
    pub regions: Vec<RegionError>,
    pub max_rel_err: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_err <= self.tolerance
    }

    pub fn worst(&self) -> Option<&RegionError> {
        self.regions.iter().max_by(|a, b| a.max_rel_err.total_cmp(&b.max_rel_err))
    }

    /// Largest error per parameter symbol (u, b_z, W, ...), in first-seen order.
    pub fn by_symbol(&self) -> Vec<(&'static str, f64)> {
        let mut out: Vec<(&'static str, f64)> = Vec::new();
        for r in &self.regions {
            match out.iter_mut().find(|(s, _)| *s == r.symbol) {
                Some((_, e)) => *e = e.max(r.max_rel_err),
                None => out.push((r.symbol, r.max_rel_err)),
            }
        }
        out
    }
}

fn mean_loss<M: Model>(model: &M, p: &[f64], samples: &[Sample], cfg: &LossConfig, scratch: &mut [f64]) -> Result<f64> {
    let mut total = 0.0;
    for s in samples {
        let (ce, con) = model.loss_and_grad(p, &s.features, s.label, &s.targets, cfg, 0.0, scratch)?;
        total += ce + cfg.lambda * con;
    }
    Ok(total / samples.len() as f64)
}

/// Compares the gradient of the mean loss over `samples`, computed in
/// precision `T`, with 64-bit central differences.
pub fn gradcheck<M: Model, T: Real>(
    model: &M,
    params: &[f64],
    regions: &[Region],
    samples: &[Sample],
    cfg: &LossConfig,
    opts: &GradCheckOptions,
) -> Result<GradCheckReport> {
    let pt: Vec<T> = params.iter().map(|&v| T::from_f64(v)).collect();
    let mut grad = vec![T::ZERO; params.len()];
    let scale = T::from_f64(1.0 / samples.len() as f64);
    for s in samples {
        let x: Vec<T> = s.features.iter().map(|&v| T::from_f64(v)).collect();
        model.loss_and_grad(&pt, &x, s.label, &s.targets, cfg, scale, &mut grad)?;
    }
    let mut analytic: Vec<f64> = grad.iter().map(|g| g.to_f64()).collect();
    if let Some(sym) = opts.corrupt {
        if let Some(r) = regions.iter().find(|r| r.symbol == sym) {
            analytic[r.range.start] += 0.1;
        }
    }

    let mut p = params.to_vec();
    let mut scratch = vec![0.0; params.len()];
    let mut out = Vec::with_capacity(regions.len());
    for r in regions {
        let mut worst = RegionError {
            name: r.name.clone(),
            symbol: r.symbol,
            max_rel_err: 0.0,
            worst_index: r.range.start,
            analytic: 0.0,
            numeric: 0.0,
        };
        for i in r.range.clone() {
            let orig = p[i];
            p[i] = orig + opts.eps;
            let up = mean_loss(model, &p, samples, cfg, &mut scratch)?;
            p[i] = orig - opts.eps;
            let down = mean_loss(model, &p, samples, cfg, &mut scratch)?;
            p[i] = orig;
            let numeric = (up - down) / (2.0 * opts.eps);
            let e = relative_error(analytic[i], numeric, opts.floor);
            if e > worst.max_rel_err || i == r.range.start {
                worst.max_rel_err = e;
                worst.worst_index = i;
                worst.analytic = analytic[i];
                worst.numeric = numeric;
            }
        }
        out.push(worst);
    }
    let max_rel_err = out.iter().map(|r| r.max_rel_err).fold(0.0, f64::max);
    let tolerance = if T::NAME == "f32" { TOLERANCE_F32 } else { TOLERANCE_F64 };
    Ok(GradCheckReport { precision: T::NAME, tolerance, regions: out, max_rel_err })
}

/// Sizes of the random problem used by [`random_problem`].
#[derive(Debug, Clone, PartialEq)]
pub struct ProblemSize {
    pub d0: usize,
    pub mu: usize,
    pub concepts_per_level: Vec<usize>,
    pub categories: usize,
    pub samples: usize,
}

impl Default for ProblemSize {
    fn default() -> Self {
        Self { d0: 16, mu: 2, concepts_per_level: vec![2, 2, 2], categories: 12, samples: 4 }
    }
}

pub struct Problem {
    pub hierarchy: CondensedHierarchy,
    pub topology: HeadTopology,
    pub params: Vec<f64>,
    pub samples: Vec<Sample>,
}

/// Random hierarchy, Glorot parameters with randomized biases, and
/// standard-normal inputs with random labels.
pub fn random_problem(size: &ProblemSize, seed: u64) -> Result<Problem> {
    let hierarchy = crate::dataio::random_hierarchy(&size.concepts_per_level, size.categories, seed)?;
    let topology = build_topology(&hierarchy, size.d0, size.mu)?;
    let mut params = init_parameters(&topology, seed).values;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9);
    // Nonzero biases so that no bias gradient is trivially matched.
    for b in topology.blocks() {
        if b.kind.is_bias() {
            for v in &mut params[b.range()] {
                *v = rng.random_range(-0.5..0.5);
            }
        }
    }
    let categories = hierarchy.categories();
    let mut samples = Vec::with_capacity(size.samples);
    for _ in 0..size.samples {
        let label = rng.random_range(0..categories.len());
        samples.push(Sample {
            features: (0..size.d0).map(|_| StandardNormal.sample(&mut rng)).collect(),
            label,
            targets: concept_targets(&hierarchy, categories[label])?,
        });
    }
    Ok(Problem { hierarchy, topology, params, samples })
}

/// Every block kind of the gated head is present in `t`.
pub fn covers_all_kinds(t: &HeadTopology) -> bool {
    BlockKind::ALL.iter().all(|k| t.blocks().iter().any(|b| b.kind == *k && !b.is_empty()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::training::ConceptLossKind;

    #[test]
    fn default_problem_passes_in_f64() {
        let prob = random_problem(&ProblemSize::default(), 1).unwrap();
        assert!(covers_all_kinds(&prob.topology));
        let regions = head_regions(&prob.topology);
        for kind in [ConceptLossKind::BinaryCrossEntropy, ConceptLossKind::MeanSquaredError] {
            let cfg = LossConfig { lambda: 5.0, concept_loss: kind };
            let r =
                gradcheck::<_, f64>(&prob.topology, &prob.params, &regions, &prob.samples, &cfg, &Default::default())
                    .unwrap();
            assert!(r.passed(), "{kind:?}: {:?}", r.worst());
        }
    }

    #[test]
    fn f32_within_looser_tolerance() {
        let prob = random_problem(&ProblemSize::default(), 2).unwrap();
        let regions = head_regions(&prob.topology);
        let r = gradcheck::<_, f32>(
            &prob.topology,
            &prob.params,
            &regions,
            &prob.samples,
            &LossConfig::default(),
            &Default::default(),
        )
        .unwrap();
        assert_eq!(r.tolerance, TOLERANCE_F32);
        assert!(r.passed(), "{:?}", r.worst());
    }

    #[test]
    fn corrupted_gradient_is_named() {
        let prob = random_problem(&ProblemSize::default(), 3).unwrap();
        let regions = head_regions(&prob.topology);
        let opts = GradCheckOptions { corrupt: Some("W"), ..Default::default() };
        let r =
            gradcheck::<_, f64>(&prob.topology, &prob.params, &regions, &prob.samples, &LossConfig::default(), &opts)
                .unwrap();
        assert!(!r.passed());
        assert_eq!(r.worst().unwrap().symbol, "W");
    }

    #[test]
    fn flat_head_passes() {
        let prob = random_problem(&ProblemSize::default(), 4).unwrap();
        let t = FlatTopology::new(&prob.hierarchy, 16).unwrap();
        let params = t.init_parameters(4);
        let regions = flat_regions(&t);
        assert_eq!(regions.iter().map(|r| r.range.len()).sum::<usize>(), t.num_params());
        let r = gradcheck::<_, f64>(&t, &params, &regions, &prob.samples, &LossConfig::default(), &Default::default())
            .unwrap();
        assert!(r.passed(), "{:?}", r.worst());
    }
}
