use std::process::ExitCode;

use anyhow::Result;
use clap::Args;

use mdhc::baselines::FlatTopology;
use mdhc::training::gradcheck::{
    flat_regions, gradcheck as check, head_regions, random_problem, GradCheckOptions, GradCheckReport, ProblemSize,
    DEFAULT_EPS, DEFAULT_FLOOR,
};
use mdhc::training::{ConceptLossKind, LossConfig};

use super::Head;
use crate::Globals;

const SYMBOLS: [&str; 6] = ["u", "b_z", "v", "b_x", "W", "b_h"];

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 16)]
    pub d0: usize,
    #[arg(long, default_value_t = 2)]
    pub mu: usize,
    #[arg(long, value_delimiter = ',', default_value = "2,2,2")]
    pub levels: Vec<usize>,
    #[arg(long, default_value_t = 12)]
    pub categories: usize,
    #[arg(long, default_value_t = 4)]
    pub samples: usize,
    /// Concept loss to check; both when omitted.
    #[arg(long)]
    pub concept_loss: Option<ConceptLossKind>,
    /// Concept loss weights to check.
    #[arg(long, value_delimiter = ',', default_value = "0,5")]
    pub lambda: Vec<f64>,
    /// Run the analytic pass in 32-bit floats (looser tolerance).
    #[arg(long)]
    pub f32: bool,
    #[arg(long, value_enum, default_value_t = Head::Md)]
    pub head: Head,
    #[arg(long, default_value_t = DEFAULT_EPS)]
    pub eps: f64,
    #[arg(long, default_value_t = DEFAULT_FLOOR)]
    pub floor: f64,
    /// Test hook: perturb the analytic gradient of the first block with this
    /// symbol.
    #[arg(long, hide = true, value_parser = clap::builder::PossibleValuesParser::new(SYMBOLS))]
    pub corrupt: Option<String>,
}

pub fn gradcheck(a: GradcheckArgs, g: &Globals) -> Result<ExitCode> {
    let size = ProblemSize {
        d0: a.d0,
        mu: a.mu,
        concepts_per_level: a.levels.clone(),
        categories: a.categories,
        samples: a.samples,
    };
    let prob = random_problem(&size, g.seed())?;
    let corrupt = a.corrupt.as_deref().and_then(|c| SYMBOLS.iter().copied().find(|s| *s == c));
    let opts = GradCheckOptions { eps: a.eps, floor: a.floor, corrupt };
    let kinds = match a.concept_loss {
        Some(k) => vec![k],
        None => vec![ConceptLossKind::BinaryCrossEntropy, ConceptLossKind::MeanSquaredError],
    };
    let flat = FlatTopology::new(&prob.hierarchy, a.d0)?;
    let flat_params = flat.init_parameters(g.seed());
    println!(
        "head {:?}  d0 {}  concepts {}  categories {}  samples {}",
        a.head,
        a.d0,
        prob.hierarchy.num_concepts(),
        prob.hierarchy.num_categories(),
        a.samples
    );
    let mut ok = true;
    for kind in &kinds {
        for &lambda in &a.lambda {
            let cfg = LossConfig { lambda, concept_loss: *kind };
            let r: GradCheckReport = match (a.head, a.f32) {
                (Head::Md, false) => check::<_, f64>(
                    &prob.topology,
                    &prob.params,
                    &head_regions(&prob.topology),
                    &prob.samples,
                    &cfg,
                    &opts,
                )?,
                (Head::Md, true) => check::<_, f32>(
                    &prob.topology,
                    &prob.params,
                    &head_regions(&prob.topology),
                    &prob.samples,
                    &cfg,
                    &opts,
                )?,
                (Head::Flat, false) => {
                    check::<_, f64>(&flat, &flat_params, &flat_regions(&flat), &prob.samples, &cfg, &opts)?
                }
                (Head::Flat, true) => {
                    check::<_, f32>(&flat, &flat_params, &flat_regions(&flat), &prob.samples, &cfg, &opts)?
                }
            };
            let per: Vec<String> = r.by_symbol().iter().map(|(s, e)| format!("{s} {e:.2e}")).collect();
            println!(
                "{:<4} lambda {:<4} {}  max {:.3e} (tol {:.0e})  {}",
                format!("{kind:?}").chars().filter(|c| c.is_uppercase()).collect::<String>().to_lowercase(),
                lambda,
                r.precision,
                r.max_rel_err,
                r.tolerance,
                if r.passed() { "PASS" } else { "FAIL" }
            );
            println!("     {}", per.join("  "));
            if !r.passed() {
                ok = false;
                if let Some(w) = r.worst() {
                    eprintln!(
                        "gradient mismatch in block {} ({}): analytic {:.6e} vs numeric {:.6e} at index {}",
                        w.name, w.symbol, w.analytic, w.numeric, w.worst_index
                    );
                }
            }
        }
    }
    Ok(if ok { ExitCode::SUCCESS } else { ExitCode::from(1) })
}
