use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{ArgGroup, Args, ValueEnum};

use mdhc::checkpoint::{self, Topology};
use mdhc::dataio::{balanced_hierarchy, read_dataset_csv, read_features_bin, FeatureFormat};
use mdhc::head::{build_topology, count_parameters, DEFAULT_MU};
use mdhc::ontology::{condense_with, CondenseOptions, CountMode};
use mdhc::{CondensedHierarchy, Ontology};

use crate::{read_hierarchy, with_suffix, Globals};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CountArg {
    /// Distinct categories below a concept.
    Leaves,
    /// All descendants, concepts included.
    All,
}

#[derive(Debug, Args)]
pub struct CondenseArgs {
    /// Raw hierarchy file.
    #[arg(long, short = 'i')]
    pub input: PathBuf,
    /// Absorb a child concept holding at least this share of its parent's count.
    #[arg(long, default_value_t = 0.9)]
    pub tau: f64,
    /// Remove concepts with fewer descendants than this.
    #[arg(long, default_value_t = 20)]
    pub delta: usize,
    #[arg(long, short = 'o')]
    pub out: PathBuf,
    /// Removal log (default: `<out>.removed.json`).
    #[arg(long)]
    pub log: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = CountArg::Leaves)]
    pub count: CountArg,
}

pub fn condense(a: CondenseArgs) -> Result<ExitCode> {
    let text = std::fs::read_to_string(&a.input).with_context(|| format!("reading {}", a.input.display()))?;
    let o = Ontology::parse(&text).with_context(|| format!("parsing {}", a.input.display()))?;
    let count_mode = match a.count {
        CountArg::Leaves => CountMode::Leaves,
        CountArg::All => CountMode::AllDescendants,
    };
    let h = condense_with(&o, &CondenseOptions { tau: a.tau, delta: a.delta, count_mode })?;
    std::fs::write(&a.out, h.to_text()).with_context(|| format!("writing {}", a.out.display()))?;
    let log = a.log.unwrap_or_else(|| with_suffix(&a.out, ".removed.json"));
    std::fs::write(&log, h.removal_log().to_json())?;
    print_summary(&h);
    println!("removed concepts   {}", h.removal_log().removed.len());
    Ok(ExitCode::SUCCESS)
}

fn print_summary(h: &CondensedHierarchy) {
    let levels: Vec<String> = h.concepts_per_level().iter().map(|c| c.to_string()).collect();
    println!("concepts (M)       {}", h.num_concepts());
    println!("categories (N)     {}", h.num_categories());
    println!("height (rho)       {}", h.height());
    println!("concepts per level {}", if levels.is_empty() { "-".into() } else { levels.join(" ") });
}

#[derive(Debug, Args)]
#[command(group(ArgGroup::new("source").required(true).args(["hierarchy", "balanced"])))]
pub struct ParamcountArgs {
    #[arg(long)]
    pub hierarchy: Option<PathBuf>,
    /// Use a complete tree instead: `alpha,depth,leaves`.
    #[arg(long, value_delimiter = ',')]
    pub balanced: Option<Vec<usize>>,
    #[arg(long, default_value_t = 2048)]
    pub d0: usize,
    #[arg(long, default_value_t = DEFAULT_MU)]
    pub mu: usize,
    /// Print the report as JSON.
    #[arg(long)]
    pub json: bool,
}

pub fn paramcount(a: ParamcountArgs) -> Result<ExitCode> {
    let h = match (&a.hierarchy, &a.balanced) {
        (Some(p), _) => read_hierarchy(p)?,
        (None, Some(b)) => match b.as_slice() {
            &[alpha, depth, leaves] => balanced_hierarchy(alpha, depth, leaves)?,
            _ => bail!("--balanced takes alpha,depth,leaves"),
        },
        (None, None) => unreachable!("clap requires a source"),
    };
    let t = build_topology(&h, a.d0, a.mu)?;
    let r = count_parameters(&t);
    if a.json {
        println!("{}", serde_json::to_string_pretty(&r)?);
        return Ok(ExitCode::SUCCESS);
    }
    print_summary(&h);
    println!("d0 {}  mu {}", a.d0, a.mu);
    println!("{:<28} {:>14}", "gated head total", r.total);
    println!("{:<28} {:>14}", "  weights", r.weights);
    println!("{:<28} {:>14}", "  biases", r.biases);
    for (kind, n) in &r.per_kind {
        println!("{:<28} {:>14}", format!("  {}", kind.symbol()), n);
    }
    println!("{:<28} {:>14}", "flat softmax (d0*N + N)", r.flat_total);
    println!("{:<28} {:>14.4}", "ratio gated / flat", r.total as f64 / r.flat_total as f64);
    println!("{:<28} {:>14}", "flat N+M head", r.flat_with_concepts);
    match &r.balanced {
        Some(b) => println!(
            "{:<28} {:>14.1}  ({})",
            format!("balanced bound (alpha={})", b.alpha),
            b.bound,
            if b.within { "within" } else { "EXCEEDED" }
        ),
        None => println!("{:<28} {:>14}", "balanced bound", "n/a"),
    }
    Ok(ExitCode::SUCCESS)
}

#[derive(Debug, Args)]
#[command(group(ArgGroup::new("what").required(true).args(["hierarchy", "checkpoint", "features"])))]
pub struct InspectArgs {
    #[arg(long)]
    pub hierarchy: Option<PathBuf>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub features: Option<PathBuf>,
}

pub fn inspect(a: InspectArgs, g: &Globals) -> Result<ExitCode> {
    if let Some(p) = &a.hierarchy {
        let h = read_hierarchy(p)?;
        print_summary(&h);
        for c in h.concepts() {
            let depth = h.depth(c)?;
            println!("{}{} {} (eta {})", "  ".repeat(depth), c, h.node(c)?.name, h.eta(c)?);
        }
    }
    if let Some(p) = &a.checkpoint {
        let (t, params) = checkpoint::load(p)?;
        let hash: String = t.hash().iter().map(|b| format!("{b:02x}")).collect();
        let finite = params.iter().all(|v| v.is_finite());
        let max_abs = params.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        match &t {
            Topology::Gated(t) => println!(
                "gated head: d0 {} mu {} concepts {} categories {}",
                t.d0,
                t.mu,
                t.num_concepts(),
                t.num_categories()
            ),
            Topology::Flat(t) => {
                println!("flat head: d0 {} concepts {} categories {}", t.d0, t.concepts.len(), t.categories.len())
            }
        }
        println!("parameters {}  finite {}  max |w| {:.6}", params.len(), finite, max_abs);
        println!("topology hash {hash}");
    }
    if let Some(p) = &a.features {
        let file = std::io::BufReader::new(std::fs::File::open(p).with_context(|| format!("opening {}", p.display()))?);
        let (count, d0) = match g.format {
            FeatureFormat::Bin => {
                let (count, d0, _) = read_features_bin(file)?;
                (count, d0)
            }
            FeatureFormat::Csv => {
                let ds = read_dataset_csv(file)?;
                println!("labels {}", ds.label_counts().len());
                (ds.len(), ds.d0)
            }
        };
        println!("examples {count}  d0 {d0}");
    }
    Ok(ExitCode::SUCCESS)
}
