use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, ValueEnum};

use mdhc::baselines::FlatTopology;
use mdhc::checkpoint::{self, Topology};
use mdhc::dataio::{load_dataset, read_features_bin, read_labels_csv, FeatureDataset, FeatureFormat};
use mdhc::decoder::{Prediction, DEFAULT_THRESHOLD};
use mdhc::head::{build_topology, init_parameters_with, DEFAULT_MU};
use mdhc::metrics::{evaluate, EvalItem, MetricsReport};
use mdhc::training::{predict_all, train as fit, ConceptLossKind, Decoding, Model, TrainConfig, EPOCH_CSV_HEADER};
use mdhc::{CondensedHierarchy, NodeId, Real};

use super::Head;
use crate::{read_hierarchy, with_suffix, Globals};

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub hierarchy: PathBuf,
    #[arg(long)]
    pub features: PathBuf,
    /// Label file (`id,label`); required for binary features.
    #[arg(long)]
    pub labels: Option<PathBuf>,
    /// Held-out set for the per-epoch accuracies.
    #[arg(long)]
    pub test_features: Option<PathBuf>,
    #[arg(long, requires = "test_features")]
    pub test_labels: Option<PathBuf>,
    /// TOML or JSON training config; flags below override it.
    #[arg(long, short = 'c')]
    pub config: Option<PathBuf>,
    /// Checkpoint path; the topology goes to `<out>.topology.json`.
    #[arg(long, short = 'o')]
    pub out: PathBuf,
    /// Epoch log (default: `<out>.epochs.csv`).
    #[arg(long)]
    pub log: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Head::Md)]
    pub head: Head,
    #[arg(long, default_value_t = DEFAULT_MU)]
    pub mu: usize,
    /// Initial value of the hidden biases of the gated head.
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    pub hidden_bias: f64,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub stage_epochs: Option<usize>,
    /// `bce` or `mse`.
    #[arg(long)]
    pub concept_loss: Option<ConceptLossKind>,
    #[arg(long)]
    pub threshold: Option<f64>,
    /// Train in 32-bit floats.
    #[arg(long)]
    pub f32: bool,
    /// Also write `<out>.e<k>` after every epoch.
    #[arg(long)]
    pub epoch_checkpoints: bool,
}

impl TrainArgs {
    fn config(&self, g: &Globals) -> Result<TrainConfig> {
        let mut cfg = match &self.config {
            Some(p) => TrainConfig::load(p).with_context(|| format!("loading {}", p.display()))?,
            None => TrainConfig::default(),
        };
        macro_rules! set {
            ($($field:ident),*) => { $(if let Some(v) = self.$field { cfg.$field = v; })* };
        }
        set!(lambda, lr, batch, epochs, stage_epochs, concept_loss, threshold);
        if let Some(s) = g.seed {
            cfg.seed = s;
        }
        if let Some(d) = g.deterministic {
            cfg.deterministic = d;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn load(features: &Path, labels: Option<&Path>, h: &CondensedHierarchy, g: &Globals) -> Result<FeatureDataset> {
    load_dataset(features, labels, h, g.format).with_context(|| format!("loading {}", features.display()))
}

pub fn train(a: TrainArgs, g: &Globals) -> Result<ExitCode> {
    let cfg = a.config(g)?;
    let h = read_hierarchy(&a.hierarchy)?;
    let data = load(&a.features, a.labels.as_deref(), &h, g)?;
    let held_out = match &a.test_features {
        Some(f) => Some(load(f, a.test_labels.as_deref(), &h, g)?),
        None => None,
    };
    let (topology, init) = match a.head {
        Head::Md => {
            let t = build_topology(&h, data.d0, a.mu)?;
            let p = init_parameters_with(&t, cfg.seed, a.hidden_bias).values;
            (Topology::Gated(t), p)
        }
        Head::Flat => {
            let t = FlatTopology::new(&h, data.d0)?;
            let p = t.init_parameters(cfg.seed);
            (Topology::Flat(t), p)
        }
    };
    let log_path = a.log.clone().unwrap_or_else(|| with_suffix(&a.out, ".epochs.csv"));
    let mut log = BufWriter::new(File::create(&log_path).with_context(|| format!("creating {}", log_path.display()))?);
    writeln!(log, "{EPOCH_CSV_HEADER}")?;
    println!("{EPOCH_CSV_HEADER}");
    let run = Run { a: &a, h: &h, data: &data, held_out: held_out.as_ref(), cfg: &cfg, topology: &topology };
    let params = match (&topology, a.f32) {
        (Topology::Gated(t), false) => run.go::<_, f64>(t, init, &mut log)?,
        (Topology::Gated(t), true) => run.go::<_, f32>(t, init, &mut log)?,
        (Topology::Flat(t), false) => run.go::<_, f64>(t, init, &mut log)?,
        (Topology::Flat(t), true) => run.go::<_, f32>(t, init, &mut log)?,
    };
    log.flush()?;
    checkpoint::save(&a.out, &topology, &params)?;
    eprintln!("wrote {} and {}", a.out.display(), log_path.display());
    Ok(ExitCode::SUCCESS)
}

struct Run<'a> {
    a: &'a TrainArgs,
    h: &'a CondensedHierarchy,
    data: &'a FeatureDataset,
    held_out: Option<&'a FeatureDataset>,
    cfg: &'a TrainConfig,
    topology: &'a Topology,
}

impl Run<'_> {
    fn go<M: Model, T: Real>(&self, model: &M, init: Vec<f64>, log: &mut impl Write) -> Result<Vec<f64>> {
        let init: Vec<T> = init.into_iter().map(T::from_f64).collect();
        let out = fit(model, init, self.data, self.held_out, self.h, self.cfg, |rec, p| {
            let line = rec.csv_line();
            writeln!(log, "{line}")?;
            println!("{line}");
            if self.a.epoch_checkpoints {
                let p: Vec<f64> = p.iter().map(|v| v.to_f64()).collect();
                checkpoint::save(&with_suffix(&self.a.out, &format!(".e{}", rec.epoch)), self.topology, &p)?;
            }
            Ok(())
        })?;
        Ok(out.params.iter().map(|v| v.to_f64()).collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EvalMode {
    /// Gated chain decoding.
    Md,
    /// Independent concept thresholding of the flat head.
    Flat,
    /// Thresholded marginals of the category probabilities.
    Pragg,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long, required_unless_present = "predictions", conflicts_with = "predictions")]
    pub checkpoint: Option<PathBuf>,
    /// Score an existing prediction file against `--labels` instead.
    #[arg(long, requires = "labels")]
    pub predictions: Option<PathBuf>,
    #[arg(long)]
    pub hierarchy: PathBuf,
    #[arg(long, required_unless_present = "predictions")]
    pub features: Option<PathBuf>,
    #[arg(long)]
    pub labels: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
    pub threshold: f64,
    /// Decoders to score; repeatable. Defaults to the checkpoint's own.
    #[arg(long, value_enum)]
    pub mode: Vec<EvalMode>,
    /// Also write the reports as JSON here.
    #[arg(long)]
    pub json: Option<PathBuf>,
}

pub fn eval(a: EvalArgs, g: &Globals) -> Result<ExitCode> {
    let h = read_hierarchy(&a.hierarchy)?;
    let mut reports: Vec<(String, MetricsReport)> = Vec::new();
    if let Some(p) = &a.predictions {
        let labels = a.labels.as_deref().expect("clap requires labels");
        reports.push(("predictions".into(), score_file(p, labels, &h)?));
    } else {
        let ck = a.checkpoint.as_deref().expect("clap requires a checkpoint");
        let (topology, params) = checkpoint::load(ck).with_context(|| format!("loading {}", ck.display()))?;
        topology.check_hierarchy(&h).context("checkpoint does not match the hierarchy")?;
        let ds = load(a.features.as_deref().expect("clap requires features"), a.labels.as_deref(), &h, g)?;
        let modes = if a.mode.is_empty() {
            vec![match topology {
                Topology::Gated(_) => EvalMode::Md,
                Topology::Flat(_) => EvalMode::Flat,
            }]
        } else {
            a.mode.clone()
        };
        for mode in modes {
            let report = match (&topology, mode) {
                (Topology::Gated(t), EvalMode::Md) => score(t, &params, &ds, &h, a.threshold, Decoding::Native)?,
                (Topology::Flat(t), EvalMode::Flat) => score(t, &params, &ds, &h, a.threshold, Decoding::Native)?,
                (Topology::Gated(t), EvalMode::Pragg) => score(t, &params, &ds, &h, a.threshold, Decoding::PrAgg)?,
                (Topology::Flat(t), EvalMode::Pragg) => score(t, &params, &ds, &h, a.threshold, Decoding::PrAgg)?,
                (_, m) => bail!("mode {m:?} does not apply to this checkpoint"),
            };
            let label = format!("{mode:?}").to_lowercase();
            reports.push((label, report));
        }
    }
    for (i, (label, r)) in reports.iter().enumerate() {
        let table = r.to_table(label);
        // One header for all rows.
        let body = if i == 0 { table.as_str() } else { table.split_once('\n').map_or("", |(_, b)| b) };
        print!("{body}");
    }
    let json: serde_json::Map<String, serde_json::Value> =
        reports.iter().map(|(l, r)| Ok((l.clone(), serde_json::to_value(r)?))).collect::<Result<_>>()?;
    let json = serde_json::to_string_pretty(&json)?;
    println!("{json}");
    if let Some(p) = &a.json {
        std::fs::write(p, &json)?;
    }
    Ok(ExitCode::SUCCESS)
}

fn score<M: Model>(
    m: &M,
    p: &[f64],
    ds: &FeatureDataset,
    h: &CondensedHierarchy,
    threshold: f64,
    decoding: Decoding,
) -> Result<MetricsReport> {
    let preds = predict_all(m, p, ds, h, threshold, decoding)?;
    let items: Vec<EvalItem> = preds.iter().map(EvalItem::from).collect();
    Ok(evaluate(&items, &ds.labels, h)?)
}

/// Matches prediction lines to labels by example id.
fn score_file(predictions: &Path, labels: &Path, h: &CondensedHierarchy) -> Result<MetricsReport> {
    let (ids, truths) = read_labels_csv(BufReader::new(File::open(labels)?))?;
    let text = std::fs::read_to_string(predictions)?;
    let mut by_id = HashMap::new();
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let (id, p) = Prediction::parse_line(line)?;
        by_id.insert(id, EvalItem::from(&p));
    }
    let items = ids
        .iter()
        .map(|id| by_id.remove(id).with_context(|| format!("no prediction for example {id}")))
        .collect::<Result<Vec<_>>>()?;
    Ok(evaluate(&items, &truths, h)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PredictMode {
    /// The checkpoint's own decoder.
    Native,
    Pragg,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub hierarchy: PathBuf,
    #[arg(long)]
    pub features: PathBuf,
    /// Only used for example ids with binary features.
    #[arg(long)]
    pub labels: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
    pub threshold: f64,
    #[arg(long, value_enum, default_value_t = PredictMode::Native)]
    pub mode: PredictMode,
    /// Output file (default: stdout).
    #[arg(long, short = 'o')]
    pub out: Option<PathBuf>,
}

pub fn predict(a: PredictArgs, g: &Globals) -> Result<ExitCode> {
    let h = read_hierarchy(&a.hierarchy)?;
    let (topology, params) = checkpoint::load(&a.checkpoint)?;
    topology.check_hierarchy(&h).context("checkpoint does not match the hierarchy")?;
    let ds = match (g.format, &a.labels) {
        (FeatureFormat::Bin, None) => unlabeled(&a.features, &h)?,
        _ => load(&a.features, a.labels.as_deref(), &h, g)?,
    };
    let decoding = match a.mode {
        PredictMode::Native => Decoding::Native,
        PredictMode::Pragg => Decoding::PrAgg,
    };
    let preds = match &topology {
        Topology::Gated(t) => predict_all(t, &params, &ds, &h, a.threshold, decoding)?,
        Topology::Flat(t) => predict_all(t, &params, &ds, &h, a.threshold, decoding)?,
    };
    let mut out: Box<dyn Write> = match &a.out {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(std::io::stdout().lock()),
    };
    for (i, p) in preds.iter().enumerate() {
        writeln!(out, "{}", p.to_line(&ds.id(i)))?;
    }
    out.flush()?;
    Ok(ExitCode::SUCCESS)
}

/// Binary features without a label file. The dataset type needs labels, so
/// every row gets the first category; they are never read.
fn unlabeled(features: &Path, h: &CondensedHierarchy) -> Result<FeatureDataset> {
    let (count, d0, values) = read_features_bin(BufReader::new(File::open(features)?))?;
    let first: NodeId = *h.categories().first().context("hierarchy has no categories")?;
    Ok(FeatureDataset::new(d0, values, vec![first; count], None)?)
}
