use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::{concept_targets, Model, OptimizerState, TrainConfig};
use crate::dataio::FeatureDataset;
use crate::decoder::{decode_pragg, Prediction};
use crate::error::{Error, Result};
use crate::metrics::{evaluate, EvalItem, MetricsReport};
use crate::num::Real;
use crate::ontology::{CondensedHierarchy, NodeId};

pub const EPOCH_CSV_HEADER: &str = "epoch,L_CE,L_CON,acc_cat,acc_con,acc_comb";

/// Examples per partial gradient sum. Fixed so the reduction order does not
/// depend on the thread count.
const CHUNK: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    /// Mean training losses seen during the epoch.
    pub l_ce: f64,
    pub l_con: f64,
    /// Accuracies on the held-out set (or the training set without one).
    pub acc_cat: f64,
    pub acc_con: f64,
    pub acc_comb: f64,
}

impl EpochRecord {
    pub fn csv_line(&self) -> String {
        format!(
            "{},{:.6},{:.6},{:.6},{:.6},{:.6}",
            self.epoch, self.l_ce, self.l_con, self.acc_cat, self.acc_con, self.acc_comb
        )
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<T> {
    pub params: Vec<T>,
    pub log: Vec<EpochRecord>,
}

struct Prepared<T> {
    features: Vec<T>,
    labels: Vec<usize>,
    targets: Vec<Vec<f64>>,
}

fn prepare<M: Model, T: Real>(model: &M, ds: &FeatureDataset, h: &CondensedHierarchy) -> Result<Prepared<T>> {
    ds.check_width(model.d0())?;
    let categories = h.categories();
    if categories.len() != model.num_categories() || h.num_concepts() != model.num_concepts() {
        return Err(Error::TopologyMismatch);
    }
    let index: HashMap<NodeId, usize> = categories.iter().enumerate().map(|(i, &c)| (c, i)).collect();
    let mut targets = Vec::with_capacity(categories.len());
    for &c in &categories {
        targets.push(concept_targets(h, c)?);
    }
    let labels =
        ds.labels.iter().map(|l| index.get(l).copied().ok_or(Error::UnknownLabel(*l))).collect::<Result<Vec<_>>>()?;
    Ok(Prepared { features: ds.features.iter().map(|&v| T::from_f64(v)).collect(), labels, targets })
}

/// Mini-batch RMSProp over shuffled data. `on_epoch` sees every log record
/// together with the parameters at the end of that epoch.
pub fn train<M: Model, T: Real>(
    model: &M,
    init: Vec<T>,
    data: &FeatureDataset,
    held_out: Option<&FeatureDataset>,
    h: &CondensedHierarchy,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord, &[T]) -> Result<()>,
) -> Result<TrainOutcome<T>> {
    cfg.validate()?;
    let np = model.num_params();
    if init.len() != np {
        return Err(Error::ShapeMismatch { expected: np, found: init.len() });
    }
    if data.is_empty() {
        return Err(Error::InvalidArgument("training set is empty".into()));
    }
    let prep = prepare::<M, T>(model, data, h)?;
    if let Some(ho) = held_out {
        ho.check_width(model.d0())?;
        ho.check_labels(h)?;
    }
    let loss_cfg = cfg.loss();
    let mask = model.concept_mask();
    let mut opt = OptimizerState::<T>::new(cfg.optimizer(), np);
    let mut params = init;
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let d0 = model.d0();
    let mut log = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        opt.set_epoch(epoch);
        order.shuffle(&mut rng);
        let stage_mask = (epoch < cfg.stage_epochs).then_some(mask.as_slice());
        let (mut sum_ce, mut sum_con) = (0.0, 0.0);
        for batch in order.chunks(cfg.batch) {
            let scale = T::from_f64(1.0 / batch.len() as f64);
            let partial = |rows: &[usize]| -> Result<(Vec<T>, f64, f64)> {
                let mut g = vec![T::ZERO; np];
                let (mut ce, mut con) = (0.0, 0.0);
                for &i in rows {
                    let label = prep.labels[i];
                    let x = &prep.features[i * d0..(i + 1) * d0];
                    let (a, b) =
                        model.loss_and_grad(&params, x, label, &prep.targets[label], &loss_cfg, scale, &mut g)?;
                    ce += a;
                    con += b;
                }
                Ok((g, ce, con))
            };
            let (grad, ce, con) = if cfg.deterministic {
                let parts = batch.par_chunks(CHUNK).map(partial).collect::<Result<Vec<_>>>()?;
                let mut it = parts.into_iter();
                let first = it.next().expect("batch is non-empty");
                it.fold(first, |(mut g, ce, con), (g2, ce2, con2)| {
                    g.iter_mut().zip(&g2).for_each(|(a, &b)| *a += b);
                    (g, ce + ce2, con + con2)
                })
            } else {
                batch.par_chunks(CHUNK).map(partial).try_reduce(
                    || (vec![T::ZERO; np], 0.0, 0.0),
                    |(mut g, ce, con), (g2, ce2, con2)| {
                        g.iter_mut().zip(&g2).for_each(|(a, &b)| *a += b);
                        Ok((g, ce + ce2, con + con2))
                    },
                )?
            };
            sum_ce += ce;
            sum_con += con;
            opt.step(&mut params, &grad, stage_mask)?;
        }
        let report = evaluate_model(model, &params, held_out.unwrap_or(data), h, cfg.threshold, Decoding::Native)?;
        let record = EpochRecord {
            epoch: epoch + 1,
            l_ce: sum_ce / data.len() as f64,
            l_con: sum_con / data.len() as f64,
            acc_cat: report.acc_cat,
            acc_con: report.acc_con,
            acc_comb: report.acc_comb,
        };
        on_epoch(&record, &params)?;
        log.push(record);
    }
    Ok(TrainOutcome { params, log })
}

/// How concept chains are read off a model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Decoding {
    /// The model's own decoder (gated chain or flat thresholding).
    Native,
    /// Threshold aggregated category probabilities.
    PrAgg,
}

pub fn predict_all<M: Model, T: Real>(
    model: &M,
    p: &[T],
    ds: &FeatureDataset,
    h: &CondensedHierarchy,
    threshold: f64,
    decoding: Decoding,
) -> Result<Vec<Prediction>> {
    ds.check_width(model.d0())?;
    (0..ds.len())
        .into_par_iter()
        .map(|i| {
            let x: Vec<T> = ds.row(i).iter().map(|&v| T::from_f64(v)).collect();
            match decoding {
                Decoding::Native => model.decode(p, &x, h, threshold),
                Decoding::PrAgg => decode_pragg(&model.outputs(p, &x)?.0, h, threshold),
            }
        })
        .collect()
}

pub fn evaluate_model<M: Model, T: Real>(
    model: &M,
    p: &[T],
    ds: &FeatureDataset,
    h: &CondensedHierarchy,
    threshold: f64,
    decoding: Decoding,
) -> Result<MetricsReport> {
    let preds = predict_all(model, p, ds, h, threshold, decoding)?;
    let items: Vec<EvalItem> = preds.iter().map(EvalItem::from).collect();
    evaluate(&items, &ds.labels, h)
}
