//! Feature/label files, stratified splits and synthetic data.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::ontology::{CondensedHierarchy, NodeId, NodeKind};

mod synth;

pub use synth::{balanced_hierarchy, gen_synthetic, random_dag, random_hierarchy, SynthConfig};

pub const MAGIC: &[u8; 4] = b"MDFV";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureDataset {
    pub d0: usize,
    /// Row-major `len() x d0`.
    pub features: Vec<f64>,
    pub labels: Vec<NodeId>,
    pub ids: Option<Vec<String>>,
}

impl FeatureDataset {
    pub fn new(d0: usize, features: Vec<f64>, labels: Vec<NodeId>, ids: Option<Vec<String>>) -> Result<Self> {
        if d0 == 0 {
            return Err(Error::Dimension("feature width must be at least 1".into()));
        }
        if features.len() != labels.len() * d0 {
            return Err(Error::ShapeMismatch { expected: labels.len() * d0, found: features.len() });
        }
        if let Some(ids) = &ids {
            if ids.len() != labels.len() {
                return Err(Error::LengthMismatch(ids.len(), labels.len()));
            }
        }
        if let Some(i) = features.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { example: i / d0, feature: i % d0 });
        }
        Ok(Self { d0, features, labels, ids })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.d0..(i + 1) * self.d0]
    }

    /// Stored id, or the row index.
    pub fn id(&self, i: usize) -> String {
        match &self.ids {
            Some(ids) => ids[i].clone(),
            None => i.to_string(),
        }
    }

    /// Every label must be a category of `h`.
    pub fn check_labels(&self, h: &CondensedHierarchy) -> Result<()> {
        for &l in &self.labels {
            if !h.contains(l) || h.kind(l)? != NodeKind::Category {
                return Err(Error::UnknownLabel(l));
            }
        }
        Ok(())
    }

    pub fn check_width(&self, d0: usize) -> Result<()> {
        if self.d0 != d0 {
            return Err(Error::Dimension(format!("features have width {}, model expects {d0}", self.d0)));
        }
        Ok(())
    }

    pub fn subset(&self, rows: &[usize]) -> Self {
        let mut features = Vec::with_capacity(rows.len() * self.d0);
        for &r in rows {
            features.extend_from_slice(self.row(r));
        }
        Self {
            d0: self.d0,
            features,
            labels: rows.iter().map(|&r| self.labels[r]).collect(),
            ids: self.ids.as_ref().map(|ids| rows.iter().map(|&r| ids[r].clone()).collect()),
        }
    }

    /// Number of examples per label.
    pub fn label_counts(&self) -> BTreeMap<NodeId, usize> {
        let mut counts = BTreeMap::new();
        for &l in &self.labels {
            *counts.entry(l).or_default() += 1;
        }
        counts
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FeatureFormat {
    #[default]
    Bin,
    Csv,
}

impl std::str::FromStr for FeatureFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bin" => Ok(Self::Bin),
            "csv" => Ok(Self::Csv),
            other => Err(Error::Format(format!("unknown feature format {other:?} (expected bin or csv)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Dtype {
    F32,
    #[default]
    F64,
}

impl Dtype {
    fn code(self) -> u8 {
        match self {
            Dtype::F32 => 1,
            Dtype::F64 => 2,
        }
    }

    fn from_code(c: u8) -> Result<Self> {
        match c {
            1 => Ok(Dtype::F32),
            2 => Ok(Dtype::F64),
            other => Err(Error::Format(format!("unknown dtype code {other}"))),
        }
    }
}

/// Binary layout: magic, version (u32), count (u64), d0 (u64), dtype code
/// (u8), then row-major little-endian values.
pub fn write_features_bin<W: Write>(mut w: W, ds: &FeatureDataset, dtype: Dtype) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(ds.len() as u64).to_le_bytes())?;
    w.write_all(&(ds.d0 as u64).to_le_bytes())?;
    w.write_all(&[dtype.code()])?;
    for &v in &ds.features {
        match dtype {
            Dtype::F32 => w.write_all(&(v as f32).to_le_bytes())?,
            Dtype::F64 => w.write_all(&v.to_le_bytes())?,
        }
    }
    w.flush()?;
    Ok(())
}

/// Returns `(count, d0, values)`.
pub fn read_features_bin<R: Read>(mut r: R) -> Result<(usize, usize, Vec<f64>)> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(|_| Error::Format("truncated feature header".into()))?;
    if &magic != MAGIC {
        return Err(Error::Format("not a feature file (bad magic)".into()));
    }
    let mut header = [0u8; 21];
    r.read_exact(&mut header).map_err(|_| Error::Format("truncated feature header".into()))?;
    let version = u32::from_le_bytes(header[0..4].try_into().unwrap());
    if version != VERSION {
        return Err(Error::Format(format!("unsupported feature file version {version}")));
    }
    let count = u64::from_le_bytes(header[4..12].try_into().unwrap()) as usize;
    let d0 = u64::from_le_bytes(header[12..20].try_into().unwrap()) as usize;
    let dtype = Dtype::from_code(header[20])?;
    let width = match dtype {
        Dtype::F32 => 4,
        Dtype::F64 => 8,
    };
    let total = count.checked_mul(d0).ok_or_else(|| Error::Format("feature file too large".into()))?;
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    if bytes.len() != total * width {
        return Err(Error::Format(format!(
            "feature payload has {} bytes, header implies {}",
            bytes.len(),
            total * width
        )));
    }
    let values = match dtype {
        Dtype::F32 => bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64).collect(),
        Dtype::F64 => bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect(),
    };
    Ok((count, d0, values))
}

fn csv_err(e: csv::Error) -> Error {
    let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
    Error::Parse { line, message: e.to_string() }
}

fn parse_field<T: std::str::FromStr>(field: &str, what: &str, line: usize) -> Result<T> {
    field.trim().parse().map_err(|_| Error::Parse { line, message: format!("invalid {what} {field:?}") })
}

/// `id,label` with a header row.
pub fn write_labels_csv<W: Write>(w: W, ds: &FeatureDataset) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["id", "label"]).map_err(csv_err)?;
    for i in 0..ds.len() {
        out.write_record([ds.id(i), ds.labels[i].to_string()]).map_err(csv_err)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_labels_csv<R: Read>(r: R) -> Result<(Vec<String>, Vec<NodeId>)> {
    let mut rd = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(r);
    let (mut ids, mut labels) = (Vec::new(), Vec::new());
    for rec in rd.records() {
        let rec = rec.map_err(csv_err)?;
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
        if rec.len() != 2 {
            return Err(Error::Parse { line, message: format!("expected 2 fields, found {}", rec.len()) });
        }
        ids.push(rec[0].to_string());
        labels.push(NodeId(parse_field(&rec[1], "label", line)?));
    }
    Ok((ids, labels))
}

/// `id,label,f0,...,f{d0-1}` with a header row.
pub fn write_dataset_csv<W: Write>(w: W, ds: &FeatureDataset) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let mut header = vec!["id".to_string(), "label".to_string()];
    header.extend((0..ds.d0).map(|k| format!("f{k}")));
    out.write_record(&header).map_err(csv_err)?;
    for i in 0..ds.len() {
        let mut rec = vec![ds.id(i), ds.labels[i].to_string()];
        // Display prints the shortest string that parses back to the same bits.
        rec.extend(ds.row(i).iter().map(|v| v.to_string()));
        out.write_record(&rec).map_err(csv_err)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_dataset_csv<R: Read>(r: R) -> Result<FeatureDataset> {
    let mut rd = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(r);
    let header = rd.headers().map_err(csv_err)?.clone();
    if header.len() < 3 || &header[0] != "id" || &header[1] != "label" {
        return Err(Error::Format("csv header must be id,label,f0,...".into()));
    }
    let d0 = header.len() - 2;
    let (mut ids, mut labels, mut features) = (Vec::new(), Vec::new(), Vec::new());
    for rec in rd.records() {
        let rec = rec.map_err(csv_err)?;
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
        ids.push(rec[0].to_string());
        labels.push(NodeId(parse_field(&rec[1], "label", line)?));
        for k in 0..d0 {
            features.push(parse_field::<f64>(&rec[k + 2], "feature", line)?);
        }
    }
    FeatureDataset::new(d0, features, labels, Some(ids))
}

/// Writes features (and, for the binary format, a separate label file).
pub fn write_dataset(
    ds: &FeatureDataset,
    features: &Path,
    labels: Option<&Path>,
    format: FeatureFormat,
    dtype: Dtype,
) -> Result<()> {
    match format {
        FeatureFormat::Csv => write_dataset_csv(BufWriter::new(File::create(features)?), ds),
        FeatureFormat::Bin => {
            write_features_bin(BufWriter::new(File::create(features)?), ds, dtype)?;
            let labels = labels.ok_or_else(|| Error::Format("binary features need a label file".into()))?;
            write_labels_csv(BufWriter::new(File::create(labels)?), ds)
        }
    }
}

/// Reads a dataset and checks its labels against `h`.
pub fn load_dataset(
    features: &Path,
    labels: Option<&Path>,
    h: &CondensedHierarchy,
    format: FeatureFormat,
) -> Result<FeatureDataset> {
    let ds = match format {
        FeatureFormat::Csv => read_dataset_csv(BufReader::new(File::open(features)?))?,
        FeatureFormat::Bin => {
            let (count, d0, values) = read_features_bin(BufReader::new(File::open(features)?))?;
            let labels = labels.ok_or_else(|| Error::Format("binary features need a label file".into()))?;
            let (ids, labels) = read_labels_csv(BufReader::new(File::open(labels)?))?;
            if labels.len() != count {
                return Err(Error::LengthMismatch(count, labels.len()));
            }
            FeatureDataset::new(d0, values, labels, Some(ids))?
        }
    };
    ds.check_labels(h)?;
    Ok(ds)
}

/// Per-label stratified split. Each label keeps `round(fraction * count)`
/// examples in the first part; rows keep their original order.
pub fn split(ds: &FeatureDataset, train_fraction: f64, seed: u64) -> Result<(FeatureDataset, FeatureDataset)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::InvalidArgument(format!("train fraction must lie in (0, 1), got {train_fraction}")));
    }
    let mut by_label: BTreeMap<NodeId, Vec<usize>> = BTreeMap::new();
    for (i, &l) in ds.labels.iter().enumerate() {
        by_label.entry(l).or_default().push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut first, mut second) = (Vec::new(), Vec::new());
    for rows in by_label.values_mut() {
        rows.shuffle(&mut rng);
        let k = (train_fraction * rows.len() as f64).round() as usize;
        first.extend_from_slice(&rows[..k]);
        second.extend_from_slice(&rows[k..]);
    }
    first.sort_unstable();
    second.sort_unstable();
    Ok((ds.subset(&first), ds.subset(&second)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ontology::tree::tests::fig1;

    fn two_rows() -> FeatureDataset {
        FeatureDataset::new(
            3,
            vec![0.1, -2.5, 1e-300, 3.0, 0.0, -0.0],
            vec![NodeId(5), NodeId(10)],
            Some(vec!["a".into(), "b".into()]),
        )
        .unwrap()
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let ds = two_rows();
        let mut buf = Vec::new();
        write_dataset_csv(&mut buf, &ds).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("id,label,f0,f1,f2\na,5,0.1,-2.5,"));
        let back = read_dataset_csv(&buf[..]).unwrap();
        assert_eq!(back.labels, ds.labels);
        let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&back.features), bits(&ds.features));
    }

    #[test]
    fn bin_round_trip() {
        let ds = two_rows();
        let mut buf = Vec::new();
        write_features_bin(&mut buf, &ds, Dtype::F64).unwrap();
        assert_eq!(&buf[..4], b"MDFV");
        let (count, d0, values) = read_features_bin(&buf[..]).unwrap();
        assert_eq!((count, d0), (2, 3));
        assert_eq!(values, ds.features);
        buf.pop();
        assert!(matches!(read_features_bin(&buf[..]), Err(Error::Format(_))));
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(matches!(
            FeatureDataset::new(2, vec![0.0, f64::NAN], vec![NodeId(5)], None),
            Err(Error::NonFinite { example: 0, feature: 1 })
        ));
        let h = fig1();
        let ds = FeatureDataset::new(1, vec![0.0], vec![NodeId(3)], None).unwrap();
        assert!(matches!(ds.check_labels(&h), Err(Error::UnknownLabel(NodeId(3)))));
        let ds = FeatureDataset::new(1, vec![0.0], vec![NodeId(77)], None).unwrap();
        assert!(matches!(ds.check_labels(&h), Err(Error::UnknownLabel(NodeId(77)))));
        assert!(ds.check_width(2).is_err());
    }

    #[test]
    fn split_sixty_forty() {
        let labels: Vec<NodeId> = (0..30).map(|i| NodeId(5 + (i % 3))).collect();
        let ds = FeatureDataset::new(1, (0..30).map(|i| i as f64).collect(), labels, None).unwrap();
        let (a, b) = split(&ds, 0.6, 9).unwrap();
        assert!(a.label_counts().values().all(|&c| c == 6));
        assert!(b.label_counts().values().all(|&c| c == 4));
        let (a2, _) = split(&ds, 0.6, 9).unwrap();
        assert_eq!(a, a2);
        let mut all: Vec<f64> = a.features.iter().chain(&b.features).copied().collect();
        all.sort_by(f64::total_cmp);
        assert_eq!(all, ds.features);
        assert!(split(&ds, 1.0, 0).is_err());
    }
}
