//! Siamese pair-scoring network: three encoders with shared weights, an
//! absolute-difference merge with the RT difference, a dense head and one
//! auxiliary head per encoder.

mod config;
mod network;
mod pairs;
mod train;

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use config::{EncoderSettings, PeakEncoderKind, VariantConfig};
pub use network::{total_loss, Embedding, InputDims, LossBreakdown, PairOutputs, HEAD_DROPOUT, HIDDEN_UNITS, PEAK_UNITS};
pub use pairs::{make_pairs, PairExample, PairSet};
pub use train::{train, write_history, HistoryRow, OutputKind, Split, TrainConfig, TrainOutcome, HISTORY_HEADER};

use crate::error::{Error, Result};
use crate::features::PeakFeatures;
use crate::neuralnet::{Mode, ParamSet, RngStream, Tensor};
use network::Network;

/// Anything that can score how likely two peaks are the same compound.
/// Peaks are embedded once and then scored pairwise.
pub trait PairScorer: Sync {
    type Embedding: Send + Sync;

    fn embed(&self, f: &PeakFeatures) -> Result<Self::Embedding>;

    fn score(&self, a: &Self::Embedding, b: &Self::Embedding) -> Result<f64>;
}

pub struct SiameseModel {
    net: Network,
    params: ParamSet,
}

impl fmt::Debug for SiameseModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SiameseModel")
            .field("variant", self.net.variant())
            .field("dims", &self.net.dims())
            .field("parameters", &self.params.scalar_count())
            .finish()
    }
}

#[derive(Serialize, Deserialize)]
struct WeightsFile {
    variant: VariantConfig,
    dims: InputDims,
    tensors: BTreeMap<String, Tensor>,
}

impl SiameseModel {
    /// Freshly initialised network.
    pub fn new(variant: &VariantConfig, dims: InputDims, seed: u64) -> Result<Self> {
        let mut params = ParamSet::new();
        let net = Network::build(variant, dims, &mut params, &mut RngStream::new(seed))?;
        Ok(Self { net, params })
    }

    pub fn variant(&self) -> &VariantConfig {
        self.net.variant()
    }

    pub fn dims(&self) -> InputDims {
        self.net.dims()
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    /// All four outputs for a pair.
    pub fn forward(&self, a: &PeakFeatures, b: &PeakFeatures, mode: Mode, rng: &mut RngStream) -> Result<PairOutputs> {
        Ok(self.net.forward(&self.params, a, b, mode, rng)?.0)
    }

    /// Inference-mode outputs.
    pub fn outputs(&self, a: &PeakFeatures, b: &PeakFeatures) -> Result<PairOutputs> {
        let ea = self.net.encode(&self.params, a)?;
        let eb = self.net.encode(&self.params, b)?;
        self.net.score(&self.params, &ea, &eb)
    }

    /// Probability that `a` and `b` are the same compound.
    pub fn predict_pair(&self, a: &PeakFeatures, b: &PeakFeatures) -> Result<f64> {
        Ok(self.outputs(a, b)?.main)
    }

    pub fn encode(&self, f: &PeakFeatures) -> Result<Embedding> {
        self.net.encode(&self.params, f)
    }

    pub fn score_embeddings(&self, a: &Embedding, b: &Embedding) -> Result<PairOutputs> {
        self.net.score(&self.params, a, b)
    }

    /// Runs one pair forward and backward, adding the loss gradient to
    /// `grads`.
    #[allow(clippy::too_many_arguments)]
    pub fn accumulate_gradients(
        &self,
        a: &PeakFeatures,
        b: &PeakFeatures,
        label: f64,
        aux_weight: f64,
        mode: Mode,
        rng: &mut RngStream,
        grads: &mut ParamSet,
    ) -> Result<(PairOutputs, LossBreakdown)> {
        let (out, cache) = self.net.forward(&self.params, a, b, mode, rng)?;
        let loss = self.net.backward(&self.params, &cache, &out, label, aux_weight, grads);
        Ok((out, loss))
    }

    /// Loss, branch fingerprint and gradient at arbitrary parameter values
    /// laid out like this model's. Dropout masks come from `seed`, so repeated
    /// calls with the same seed see the same masks.
    #[allow(clippy::too_many_arguments)]
    pub fn evaluate_at(
        &self,
        params: &ParamSet,
        a: &PeakFeatures,
        b: &PeakFeatures,
        label: f64,
        aux_weight: f64,
        mode: Mode,
        seed: u64,
    ) -> Result<(LossBreakdown, u64, ParamSet)> {
        let mut rng = RngStream::new(seed);
        let (out, cache) = self.net.forward(params, a, b, mode, &mut rng)?;
        let mut grads = params.zeros_like();
        let loss = self.net.backward(params, &cache, &out, label, aux_weight, &mut grads);
        Ok((loss, network::fingerprint(&cache), grads))
    }

    pub fn to_json(&self) -> Result<String> {
        let file = WeightsFile {
            variant: self.variant().clone(),
            dims: self.dims(),
            tensors: self.params.to_map(),
        };
        Ok(serde_json::to_string(&file)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: WeightsFile = serde_json::from_str(text)?;
        let mut model = Self::new(&file.variant, file.dims, 0)?;
        model.params.load_map(file.tensors)?;
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref())?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Json(j) => Error::Validation(format!("{}: {j}", path.as_ref().display())),
            other => other,
        })
    }
}

impl PairScorer for SiameseModel {
    type Embedding = Embedding;

    fn embed(&self, f: &PeakFeatures) -> Result<Embedding> {
        self.encode(f)
    }

    fn score(&self, a: &Embedding, b: &Embedding) -> Result<f64> {
        Ok(self.score_embeddings(a, b)?.main)
    }
}
