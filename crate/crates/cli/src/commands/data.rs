use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::Args;

use mdhc::dataio::{
    gen_synthetic, random_hierarchy, split, write_dataset, Dtype, FeatureDataset, FeatureFormat, SynthConfig,
};

use crate::{read_hierarchy, Globals};

#[derive(Debug, Args)]
pub struct GenSynthArgs {
    #[arg(long, short = 'o')]
    pub out_dir: PathBuf,
    /// Existing condensed hierarchy. Without it a random one is generated
    /// and written to `<out-dir>/hierarchy.txt`.
    #[arg(long, conflicts_with_all = ["levels", "categories"])]
    pub hierarchy: Option<PathBuf>,
    /// Concepts per level of the generated hierarchy.
    #[arg(long, value_delimiter = ',', default_value = "2,2,3")]
    pub levels: Vec<usize>,
    #[arg(long, default_value_t = 24)]
    pub categories: usize,
    #[arg(long, default_value_t = 64)]
    pub d0: usize,
    #[arg(long, default_value_t = 250)]
    pub per_category: usize,
    #[arg(long, default_value_t = 0.15)]
    pub sigma: f64,
    #[arg(long, default_value_t = 1.0)]
    pub level_gain: f64,
    /// Write a stratified train/test split instead of one file.
    #[arg(long)]
    pub train_fraction: Option<f64>,
    /// Store binary features as 32-bit floats.
    #[arg(long)]
    pub f32: bool,
}

/// Paths of one dataset part: features plus (binary only) labels.
pub fn part_paths(dir: &Path, name: &str, format: FeatureFormat) -> (PathBuf, Option<PathBuf>) {
    match format {
        FeatureFormat::Csv => (dir.join(format!("{name}.csv")), None),
        FeatureFormat::Bin => (dir.join(format!("{name}.bin")), Some(dir.join(format!("{name}.labels.csv")))),
    }
}

pub fn gen_synth(a: GenSynthArgs, g: &Globals) -> Result<ExitCode> {
    let seed = g.seed();
    std::fs::create_dir_all(&a.out_dir).with_context(|| format!("creating {}", a.out_dir.display()))?;
    let h = match &a.hierarchy {
        Some(p) => read_hierarchy(p)?,
        None => {
            let h = random_hierarchy(&a.levels, a.categories, seed)?;
            std::fs::write(a.out_dir.join("hierarchy.txt"), h.to_text())?;
            h
        }
    };
    let cfg = SynthConfig {
        d0: a.d0,
        per_category: a.per_category,
        sigma: a.sigma,
        seed: seed.wrapping_add(1),
        level_gain: a.level_gain,
    };
    let ds = gen_synthetic(&h, &cfg)?;
    let dtype = if a.f32 { Dtype::F32 } else { Dtype::F64 };
    let write = |name: &str, part: &FeatureDataset| -> Result<()> {
        let (f, l) = part_paths(&a.out_dir, name, g.format);
        write_dataset(part, &f, l.as_deref(), g.format, dtype).with_context(|| format!("writing {}", f.display()))?;
        println!("{name:<6} {} examples -> {}", part.len(), f.display());
        Ok(())
    };
    match a.train_fraction {
        Some(frac) => {
            if !(frac > 0.0 && frac < 1.0) {
                bail!("--train-fraction must lie in (0, 1), got {frac}");
            }
            let (train, test) = split(&ds, frac, seed.wrapping_add(2))?;
            write("train", &train)?;
            write("test", &test)?;
        }
        None => write("all", &ds)?,
    }
    Ok(ExitCode::SUCCESS)
}
