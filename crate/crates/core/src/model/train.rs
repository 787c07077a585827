use std::fmt;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::network::{InputDims, LossBreakdown, PairOutputs};
use super::pairs::PairExample;
use super::{SiameseModel, VariantConfig};
use crate::error::{Error, Result};
use crate::features::PeakFeatures;
use crate::neuralnet::{adam_update, AdamConfig, AdamState, Mode, ParamSet, RngStream};

/// Examples per parallel work unit. Gradients are summed inside a chunk and
/// chunks are reduced in order, so results do not depend on thread count.
const CHUNK: usize = 4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub validation_fraction: f64,
    pub aux_loss_weight: f64,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_size: 64,
            validation_fraction: 0.2,
            aux_loss_weight: 0.2,
            learning_rate: 0.001,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return Err(Error::Config(format!(
                "validation fraction must be in (0, 1), got {}",
                self.validation_fraction
            )));
        }
        if !(self.aux_loss_weight >= 0.0 && self.aux_loss_weight.is_finite()) {
            return Err(Error::Config("aux loss weight must be a nonnegative number".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputKind {
    Main,
    Mass,
    Peak,
    Chrom,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Validation => "validation",
        })
    }
}

impl fmt::Display for OutputKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OutputKind::Main => "main",
            OutputKind::Mass => "mass",
            OutputKind::Peak => "peak",
            OutputKind::Chrom => "chrom",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HistoryRow {
    pub epoch: usize,
    pub split: Split,
    pub output: OutputKind,
    pub loss: f64,
    pub accuracy: f64,
}

pub const HISTORY_HEADER: &str = "epoch,split,output,loss,accuracy";

pub fn write_history(path: impl AsRef<Path>, rows: &[HistoryRow]) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "{HISTORY_HEADER}")?;
    for r in rows {
        writeln!(out, "{},{},{},{},{}", r.epoch, r.split, r.output, r.loss, r.accuracy)?;
    }
    out.flush()?;
    Ok(())
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub model: SiameseModel,
    pub history: Vec<HistoryRow>,
    /// Wall-clock seconds per epoch. Not part of any deterministic output.
    pub epoch_seconds: Vec<f64>,
}

/// Running per-output loss and accuracy.
#[derive(Clone, Copy, Debug, Default)]
struct Tally {
    n: usize,
    loss: [f64; 4],
    correct: [usize; 4],
}

impl Tally {
    fn add(&mut self, out: &PairOutputs, loss: &LossBreakdown, label: u8) {
        let probs = [Some(out.main), Some(out.mass), out.peak, Some(out.chrom)];
        let losses = [Some(loss.main), Some(loss.mass), loss.peak, Some(loss.chrom)];
        for k in 0..4 {
            if let (Some(p), Some(l)) = (probs[k], losses[k]) {
                self.loss[k] += l;
                self.correct[k] += usize::from(u8::from(p >= 0.5) == label);
            }
        }
        self.n += 1;
    }

    fn merge(&mut self, o: &Tally) {
        self.n += o.n;
        for k in 0..4 {
            self.loss[k] += o.loss[k];
            self.correct[k] += o.correct[k];
        }
    }

    fn rows(&self, epoch: usize, split: Split, with_peak: bool) -> Vec<HistoryRow> {
        let kinds = [OutputKind::Main, OutputKind::Mass, OutputKind::Peak, OutputKind::Chrom];
        let n = self.n.max(1) as f64;
        (0..4)
            .filter(|&k| with_peak || kinds[k] != OutputKind::Peak)
            .map(|k| HistoryRow {
                epoch,
                split,
                output: kinds[k],
                loss: self.loss[k] / n,
                accuracy: self.correct[k] as f64 / n,
            })
            .collect()
    }
}

/// Label-stratified split into (train, validation) pair indices.
fn stratified_split(pairs: &[PairExample], fraction: f64, rng: &mut RngStream) -> (Vec<usize>, Vec<usize>) {
    let mut train = Vec::new();
    let mut val = Vec::new();
    for label in [0u8, 1] {
        let mut idx: Vec<usize> = (0..pairs.len()).filter(|&i| pairs[i].label == label).collect();
        rng.shuffle(&mut idx);
        let n_val = ((idx.len() as f64 * fraction).round() as usize).clamp(1, idx.len() - 1);
        val.extend_from_slice(&idx[..n_val]);
        train.extend_from_slice(&idx[n_val..]);
    }
    (train, val)
}

pub fn train(
    features: &[PeakFeatures],
    pairs: &[PairExample],
    variant: &VariantConfig,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    for label in [0u8, 1] {
        if pairs.iter().filter(|p| p.label == label).count() < 2 {
            return Err(Error::Config(format!("training needs at least two pairs with label {label}")));
        }
    }
    if let Some(p) = pairs.iter().find(|p| p.a >= features.len() || p.b >= features.len()) {
        return Err(Error::arg(format!("pair ({}, {}) indexes past the feature list", p.a, p.b)));
    }
    let dims = InputDims::of(&features[pairs[0].a]);
    let root = RngStream::new(cfg.seed);
    let mut model = SiameseModel::new(variant, dims, root.derive(&[0]).seed())?;
    let (train_idx, val_idx) = stratified_split(pairs, cfg.validation_fraction, &mut root.derive(&[1]));
    let mut adam = AdamState::new(
        model.params(),
        AdamConfig {
            lr: cfg.learning_rate,
            ..AdamConfig::default()
        },
    );
    let with_peak = variant.has_peak_encoder();
    let mut history = Vec::new();
    let mut epoch_seconds = Vec::with_capacity(cfg.epochs);

    for epoch in 1..=cfg.epochs {
        let started = Instant::now();
        let mut order = train_idx.clone();
        root.derive(&[2, epoch as u64]).shuffle(&mut order);
        let mut tally = Tally::default();
        for batch in order.chunks(cfg.batch_size) {
            let parts: Vec<Result<(ParamSet, Tally)>> = batch
                .par_chunks(CHUNK)
                .map(|chunk| {
                    let mut grads = model.params().zeros_like();
                    let mut t = Tally::default();
                    for &i in chunk {
                        let pair = &pairs[i];
                        let mut rng = root.derive(&[3, epoch as u64, i as u64]);
                        let (out, loss) = model.accumulate_gradients(
                            &features[pair.a],
                            &features[pair.b],
                            f64::from(pair.label),
                            cfg.aux_loss_weight,
                            Mode::Train,
                            &mut rng,
                            &mut grads,
                        )?;
                        t.add(&out, &loss, pair.label);
                    }
                    Ok((grads, t))
                })
                .collect();
            let mut total: Option<ParamSet> = None;
            for part in parts {
                let (g, t) = part?;
                tally.merge(&t);
                match &mut total {
                    Some(acc) => acc.add_assign(&g),
                    None => total = Some(g),
                }
            }
            let mut grads = total.expect("batches are nonempty");
            grads.scale(1.0 / batch.len() as f64);
            adam_update(model.params_mut(), &grads, &mut adam).map_err(|e| Error::Training {
                epoch,
                message: e.to_string(),
            })?;
        }
        if tally.loss.iter().any(|l| !l.is_finite()) {
            return Err(Error::Training {
                epoch,
                message: "training loss is not finite".into(),
            });
        }
        epoch_seconds.push(started.elapsed().as_secs_f64());

        let val: Vec<Result<Tally>> = val_idx
            .par_chunks(CHUNK)
            .map(|chunk| {
                let mut t = Tally::default();
                for &i in chunk {
                    let pair = &pairs[i];
                    let out = model.outputs(&features[pair.a], &features[pair.b])?;
                    let loss = super::total_loss(&out, f64::from(pair.label), cfg.aux_loss_weight);
                    t.add(&out, &loss, pair.label);
                }
                Ok(t)
            })
            .collect();
        let mut vt = Tally::default();
        for t in val {
            vt.merge(&t?);
        }
        if vt.loss.iter().any(|l| !l.is_finite()) {
            return Err(Error::Training {
                epoch,
                message: "validation loss is not finite".into(),
            });
        }
        let rows = tally.rows(epoch, Split::Train, with_peak);
        log::info!(
            "epoch {epoch}: train loss {:.4} acc {:.3}, validation loss {:.4} acc {:.3}",
            rows[0].loss,
            rows[0].accuracy,
            vt.loss[0] / vt.n.max(1) as f64,
            vt.correct[0] as f64 / vt.n.max(1) as f64
        );
        history.extend(rows);
        history.extend(vt.rows(epoch, Split::Validation, with_peak));
    }
    Ok(TrainOutcome {
        model,
        history,
        epoch_seconds,
    })
}
