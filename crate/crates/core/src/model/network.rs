//! Parameter layout and explicit forward/backward passes of the Siamese
//! network. Everything here works against a borrowed [`ParamSet`] so the same
//! code serves training, inference and finite-difference checks.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use serde::{Deserialize, Serialize};

use super::config::{PeakEncoderKind, VariantConfig};
use crate::error::{Error, Result};
use crate::features::PeakFeatures;
use crate::neuralnet::{
    bce_loss, bidirectional_backward, bidirectional_final, bidirectional_final_backward,
    bidirectional_forward, conv1d_backward, conv1d_forward, dense_backward, dense_forward,
    dropout_forward, glorot, maxpool1d_backward, maxpool1d_forward, pooled_len, recurrent_backward,
    recurrent_forward, Activation, BidirectionalCache, CellKind, ConvCache, DenseCache, DropoutMask,
    Mode, ParamId, ParamSet, PoolCache, RecurrentCache, RecurrentWeights, RngStream, Tensor,
    CONV_KERNEL,
};

pub const PEAK_UNITS: usize = 64;
pub const HIDDEN_UNITS: usize = 64;
pub const HEAD_DROPOUT: f64 = 0.2;
const PEAK_LAYERS: usize = 3;
const FIRST_POOL: usize = 3;
const POOL: usize = 2;

/// Input sizes fixed at training time.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputDims {
    pub mass_len: usize,
    pub segment_len: usize,
}

impl InputDims {
    pub fn of(f: &PeakFeatures) -> Self {
        Self {
            mass_len: f.mass_spectrum.len(),
            segment_len: f.chrom_segment.len(),
        }
    }
}

#[derive(Clone, Copy, Debug)]
struct Dense {
    w: ParamId,
    b: ParamId,
    act: Activation,
}

impl Dense {
    fn new(ps: &mut ParamSet, name: &str, out: usize, inp: usize, act: Activation, rng: &mut RngStream) -> Result<Self> {
        let w = ps.insert(format!("{name}.w"), glorot(&[out, inp], inp, out, rng))?;
        let b = ps.insert(format!("{name}.b"), Tensor::zeros(&[out]))?;
        Ok(Self { w, b, act })
    }

    fn forward(&self, p: &ParamSet, x: &[f64]) -> Result<(Vec<f64>, DenseCache)> {
        dense_forward(x, p.get(self.w), p.get(self.b), self.act)
    }

    fn backward(&self, p: &ParamSet, cache: &DenseCache, dy: &[f64], g: &mut ParamSet) -> Vec<f64> {
        let lg = dense_backward(cache, p.get(self.w), dy);
        g.accumulate(self.w, &lg.dw);
        g.accumulate(self.b, &lg.db);
        lg.dx
    }
}

#[derive(Clone, Copy, Debug)]
struct Conv {
    k: ParamId,
    b: ParamId,
}

impl Conv {
    fn new(ps: &mut ParamSet, name: &str, c_out: usize, c_in: usize, rng: &mut RngStream) -> Result<Self> {
        let (fi, fo) = (c_in * CONV_KERNEL, c_out * CONV_KERNEL);
        let k = ps.insert(format!("{name}.k"), glorot(&[c_out, c_in, CONV_KERNEL], fi, fo, rng))?;
        let b = ps.insert(format!("{name}.b"), Tensor::zeros(&[c_out]))?;
        Ok(Self { k, b })
    }
}

#[derive(Clone, Copy, Debug)]
struct Recurrent {
    wx: ParamId,
    wh: ParamId,
    b: ParamId,
}

impl Recurrent {
    fn new(ps: &mut ParamSet, name: &str, kind: CellKind, d: usize, rng: &mut RngStream) -> Result<Self> {
        let rows = kind.gates() * PEAK_UNITS;
        let wx = ps.insert(format!("{name}.wx"), glorot(&[rows, d], d, rows, rng))?;
        let wh = ps.insert(format!("{name}.wh"), glorot(&[rows, PEAK_UNITS], PEAK_UNITS, rows, rng))?;
        let mut bias = Tensor::zeros(&[rows]);
        if kind == CellKind::Lstm {
            // forget gate starts open
            bias.data_mut()[PEAK_UNITS..2 * PEAK_UNITS].fill(1.0);
        }
        let b = ps.insert(format!("{name}.b"), bias)?;
        Ok(Self { wx, wh, b })
    }

    fn weights<'a>(&self, p: &'a ParamSet) -> RecurrentWeights<'a> {
        RecurrentWeights {
            wx: p.get(self.wx),
            wh: p.get(self.wh),
            b: p.get(self.b),
        }
    }

    fn accumulate(&self, g: &mut ParamSet, dwx: &[f64], dwh: &[f64], db: &[f64]) {
        g.accumulate(self.wx, dwx);
        g.accumulate(self.wh, dwh);
        g.accumulate(self.b, db);
    }
}

fn dropout(x: &[f64], rate: f64, mode: Mode, rng: &mut RngStream) -> (Vec<f64>, DropoutMask) {
    dropout_forward(x, rate, mode, rng).expect("dropout rates are validated with the variant")
}

// ---- mass encoder ----

struct MassEncoder {
    layers: [Dense; 3],
    dropout: f64,
}

#[derive(Clone, Debug)]
pub(crate) struct MassCache {
    dense: Vec<DenseCache>,
    masks: Vec<DropoutMask>,
}

impl MassEncoder {
    fn forward(&self, p: &ParamSet, x: &[f64], mode: Mode, rng: &mut RngStream) -> Result<(Vec<f64>, MassCache)> {
        let mut cache = MassCache {
            dense: Vec::with_capacity(3),
            masks: Vec::with_capacity(2),
        };
        let mut h = x.to_vec();
        for (i, layer) in self.layers.iter().enumerate() {
            if i > 0 {
                let (y, m) = dropout(&h, self.dropout, mode, rng);
                cache.masks.push(m);
                h = y;
            }
            let (y, c) = layer.forward(p, &h)?;
            cache.dense.push(c);
            h = y;
        }
        Ok((h, cache))
    }

    fn backward(&self, p: &ParamSet, cache: &MassCache, demb: &[f64], g: &mut ParamSet) {
        let mut d = demb.to_vec();
        for i in (0..3).rev() {
            d = self.layers[i].backward(p, &cache.dense[i], &d, g);
            if i > 0 {
                d = cache.masks[i - 1].backward(&d);
            }
        }
    }
}

// ---- peak encoder ----

struct PeakEncoder {
    kind: PeakEncoderKind,
    /// Forward-direction (or only) layers.
    fwd: Vec<Recurrent>,
    /// Backward-direction layers of the bidirectional encoder.
    bwd: Vec<Recurrent>,
    out: Dense,
    dropout: f64,
}

#[derive(Clone, Debug)]
enum RecurrentLayerCache {
    Bi(BidirectionalCache),
    Uni(RecurrentCache),
}

#[derive(Clone, Debug)]
pub(crate) struct PeakCache {
    steps: usize,
    layers: Vec<RecurrentLayerCache>,
    /// Masks applied to the outputs of all but the last recurrent layer.
    between: Vec<DropoutMask>,
    final_mask: DropoutMask,
    out: DenseCache,
}

impl PeakEncoder {
    fn cell(&self) -> CellKind {
        match self.kind {
            PeakEncoderKind::Full => CellKind::Lstm,
            _ => CellKind::Gru,
        }
    }

    fn forward(&self, p: &ParamSet, x: &[f64], mode: Mode, rng: &mut RngStream) -> Result<(Vec<f64>, PeakCache)> {
        let steps = x.len();
        if steps == 0 {
            return Err(Error::arg("peak profile is empty"));
        }
        let mut layers = Vec::with_capacity(PEAK_LAYERS);
        let mut between = Vec::with_capacity(PEAK_LAYERS - 1);
        let mut seq = x.to_vec();
        for l in 0..PEAK_LAYERS {
            if l > 0 {
                let (y, m) = dropout(&seq, self.dropout, mode, rng);
                between.push(m);
                seq = y;
            }
            seq = if self.bwd.is_empty() {
                let (y, c) = recurrent_forward(self.cell(), &seq, steps, self.fwd[l].weights(p))?;
                layers.push(RecurrentLayerCache::Uni(c));
                y
            } else {
                let (y, c) = bidirectional_forward(
                    self.cell(),
                    &seq,
                    steps,
                    self.fwd[l].weights(p),
                    self.bwd[l].weights(p),
                )?;
                layers.push(RecurrentLayerCache::Bi(c));
                y
            };
        }
        let last = if self.bwd.is_empty() {
            seq[(steps - 1) * PEAK_UNITS..].to_vec()
        } else {
            bidirectional_final(&seq, steps, PEAK_UNITS)
        };
        let (last, final_mask) = dropout(&last, self.dropout, mode, rng);
        let (emb, out) = self.out.forward(p, &last)?;
        Ok((
            emb,
            PeakCache {
                steps,
                layers,
                between,
                final_mask,
                out,
            },
        ))
    }

    fn backward(&self, p: &ParamSet, cache: &PeakCache, demb: &[f64], g: &mut ParamSet) {
        let steps = cache.steps;
        let dlast = self.out.backward(p, &cache.out, demb, g);
        let dlast = cache.final_mask.backward(&dlast);
        let mut dseq = if self.bwd.is_empty() {
            let mut d = vec![0.0; steps * PEAK_UNITS];
            d[(steps - 1) * PEAK_UNITS..].copy_from_slice(&dlast);
            d
        } else {
            bidirectional_final_backward(&dlast, steps, PEAK_UNITS)
        };
        for l in (0..PEAK_LAYERS).rev() {
            let dx = match &cache.layers[l] {
                RecurrentLayerCache::Uni(c) => {
                    let gr = recurrent_backward(c, self.fwd[l].weights(p), &dseq);
                    self.fwd[l].accumulate(g, &gr.dwx, &gr.dwh, &gr.db);
                    gr.dx
                }
                RecurrentLayerCache::Bi(c) => {
                    let (dx, gf, gb) =
                        bidirectional_backward(c, self.fwd[l].weights(p), self.bwd[l].weights(p), &dseq);
                    self.fwd[l].accumulate(g, &gf.dwx, &gf.dwh, &gf.db);
                    self.bwd[l].accumulate(g, &gb.dwx, &gb.dwh, &gb.db);
                    dx
                }
            };
            if l == 0 {
                break;
            }
            dseq = cache.between[l - 1].backward(&dx);
        }
    }
}

// ---- chromatogram encoder ----

struct ChromEncoder {
    left: Vec<Conv>,
    right: Vec<Conv>,
    out: Dense,
    conv_dropout: f64,
    dropout: f64,
    segment_len: usize,
}

#[derive(Clone, Debug)]
struct StageCache {
    mask: Option<DropoutMask>,
    conv: ConvCache,
    pool: PoolCache,
}

#[derive(Clone, Debug)]
pub(crate) struct ChromCache {
    first_pool: PoolCache,
    left: Vec<StageCache>,
    right: Vec<StageCache>,
    left_flat: usize,
    mask: DropoutMask,
    out: DenseCache,
}

/// Output (length, channels) of a conv/pool stack fed `len` samples after the
/// shared first pool.
fn stack_shape(len: usize, convs: usize, first_filters: usize) -> Result<(usize, usize)> {
    let mut len = len;
    let mut ch = 1;
    for i in 0..convs {
        if len < CONV_KERNEL {
            return Err(Error::Config(format!(
                "chromatogram segment too short for {convs} convolution blocks"
            )));
        }
        len -= CONV_KERNEL - 1;
        ch = first_filters << i;
        if len < POOL {
            return Err(Error::Config(format!(
                "chromatogram segment too short for {convs} convolution blocks"
            )));
        }
        len = pooled_len(len, POOL, POOL);
    }
    Ok((len, ch))
}

impl ChromEncoder {
    fn run_stack(
        &self,
        p: &ParamSet,
        convs: &[Conv],
        x: &[f64],
        len: usize,
        mode: Mode,
        rng: &mut RngStream,
    ) -> Result<(Vec<f64>, Vec<StageCache>)> {
        let mut h = x.to_vec();
        let mut len = len;
        let mut stages = Vec::with_capacity(convs.len());
        for (i, conv) in convs.iter().enumerate() {
            let mask = if i > 0 {
                let (y, m) = dropout(&h, self.conv_dropout, mode, rng);
                h = y;
                Some(m)
            } else {
                None
            };
            let (y, cc) = conv1d_forward(&h, len, p.get(conv.k), p.get(conv.b), Activation::Relu)?;
            let c_out = p.get(conv.k).shape()[0];
            len = cc.out_len();
            let (y, pc) = maxpool1d_forward(&y, len, c_out, POOL, POOL)?;
            len = pooled_len(len, POOL, POOL);
            stages.push(StageCache { mask, conv: cc, pool: pc });
            h = y;
        }
        Ok((h, stages))
    }

    fn back_stack(&self, p: &ParamSet, convs: &[Conv], stages: &[StageCache], dy: &[f64], g: &mut ParamSet) {
        let mut d = dy.to_vec();
        for i in (0..convs.len()).rev() {
            let st = &stages[i];
            d = maxpool1d_backward(&st.pool, &d);
            let lg = conv1d_backward(&st.conv, p.get(convs[i].k), &d);
            g.accumulate(convs[i].k, &lg.dw);
            g.accumulate(convs[i].b, &lg.db);
            if i == 0 {
                // nothing upstream carries parameters
                break;
            }
            d = match &st.mask {
                Some(m) => m.backward(&lg.dx),
                None => lg.dx,
            };
        }
    }

    fn forward(&self, p: &ParamSet, x: &[f64], mode: Mode, rng: &mut RngStream) -> Result<(Vec<f64>, ChromCache)> {
        let (pooled, first_pool) = maxpool1d_forward(x, self.segment_len, 1, FIRST_POOL, FIRST_POOL)?;
        let len = pooled_len(self.segment_len, FIRST_POOL, FIRST_POOL);
        let (l, left) = self.run_stack(p, &self.left, &pooled, len, mode, rng)?;
        let (r, right) = self.run_stack(p, &self.right, &pooled, len, mode, rng)?;
        let left_flat = l.len();
        let mut flat = l;
        flat.extend_from_slice(&r);
        let (flat, mask) = dropout(&flat, self.dropout, mode, rng);
        let (emb, out) = self.out.forward(p, &flat)?;
        Ok((
            emb,
            ChromCache {
                first_pool,
                left,
                right,
                left_flat,
                mask,
                out,
            },
        ))
    }

    fn backward(&self, p: &ParamSet, cache: &ChromCache, demb: &[f64], g: &mut ParamSet) {
        let dflat = self.out.backward(p, &cache.out, demb, g);
        let dflat = cache.mask.backward(&dflat);
        self.back_stack(p, &self.left, &cache.left, &dflat[..cache.left_flat], g);
        self.back_stack(p, &self.right, &cache.right, &dflat[cache.left_flat..], g);
    }
}

// ---- whole network ----

/// Per-encoder embedding of one peak.
#[derive(Clone, Debug, PartialEq)]
pub struct Embedding {
    pub mass: Vec<f64>,
    pub peak: Option<Vec<f64>>,
    pub chrom: Vec<f64>,
    pub rt: f64,
}

/// The four network outputs for a pair; `peak` is absent when the variant
/// has no peak encoder.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PairOutputs {
    pub main: f64,
    pub mass: f64,
    pub peak: Option<f64>,
    pub chrom: f64,
}

/// Per-output binary cross-entropy plus the weighted total.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossBreakdown {
    pub total: f64,
    pub main: f64,
    pub mass: f64,
    pub peak: Option<f64>,
    pub chrom: f64,
}

#[derive(Clone, Debug)]
pub(crate) struct EncodeCache {
    mass: MassCache,
    peak: Option<PeakCache>,
    chrom: ChromCache,
}

#[derive(Clone, Debug)]
pub(crate) struct PairCache {
    a: EncodeCache,
    b: EncodeCache,
    ea: Embedding,
    eb: Embedding,
    merged_mask: DropoutMask,
    hidden: DenseCache,
    out: DenseCache,
    aux: Vec<DenseCache>,
}

pub(crate) struct Network {
    variant: VariantConfig,
    dims: InputDims,
    mass: MassEncoder,
    peak: Option<PeakEncoder>,
    chrom: ChromEncoder,
    hidden: Dense,
    out: Dense,
    aux_mass: Dense,
    aux_peak: Option<Dense>,
    aux_chrom: Dense,
}

impl Network {
    /// Lays out and initialises every tensor of the network in `ps`.
    pub fn build(variant: &VariantConfig, dims: InputDims, ps: &mut ParamSet, rng: &mut RngStream) -> Result<Self> {
        variant.validate()?;
        if dims.mass_len == 0 {
            return Err(Error::Config("mass spectrum length must be positive".into()));
        }
        if dims.segment_len < FIRST_POOL {
            return Err(Error::Config("chromatogram segment is too short".into()));
        }
        let relu = Activation::Relu;
        let h = HIDDEN_UNITS;
        let mass = MassEncoder {
            layers: [
                Dense::new(ps, "mass.dense1", h, dims.mass_len, relu, rng)?,
                Dense::new(ps, "mass.dense2", h, h, relu, rng)?,
                Dense::new(ps, "mass.dense3", variant.mass.dim, h, relu, rng)?,
            ],
            dropout: variant.mass.dropout,
        };
        let peak = match variant.peak_encoder {
            PeakEncoderKind::None => None,
            kind => {
                let bi = kind == PeakEncoderKind::Full;
                let cell = if bi { CellKind::Lstm } else { CellKind::Gru };
                let width = if bi { 2 * PEAK_UNITS } else { PEAK_UNITS };
                let mut fwd = Vec::new();
                let mut bwd = Vec::new();
                for l in 0..PEAK_LAYERS {
                    let d = if l == 0 { 1 } else { width };
                    fwd.push(Recurrent::new(ps, &format!("peak.rnn{l}.fwd"), cell, d, rng)?);
                    if bi {
                        bwd.push(Recurrent::new(ps, &format!("peak.rnn{l}.bwd"), cell, d, rng)?);
                    }
                }
                let out = Dense::new(ps, "peak.dense", variant.peak.dim, width, relu, rng)?;
                Some(PeakEncoder {
                    kind,
                    fwd,
                    bwd,
                    out,
                    dropout: variant.peak.dropout,
                })
            }
        };
        let pooled = pooled_len(dims.segment_len, FIRST_POOL, FIRST_POOL);
        let f0 = variant.first_layer_filters;
        let (ll, lc) = stack_shape(pooled, variant.left_stack_convs, f0)?;
        let (rl, rc) = stack_shape(pooled, variant.right_stack_convs, f0)?;
        let mut stack = |side: &str, n: usize, ps: &mut ParamSet| -> Result<Vec<Conv>> {
            (0..n)
                .map(|i| {
                    let c_in = if i == 0 { 1 } else { f0 << (i - 1) };
                    Conv::new(ps, &format!("chrom.{side}.conv{i}"), f0 << i, c_in, rng)
                })
                .collect()
        };
        let left = stack("left", variant.left_stack_convs, ps)?;
        let right = stack("right", variant.right_stack_convs, ps)?;
        let flat = ll * lc + rl * rc;
        if flat == 0 {
            return Err(Error::Config("chromatogram encoder collapses to zero features".into()));
        }
        let chrom = ChromEncoder {
            left,
            right,
            out: Dense::new(ps, "chrom.dense", variant.chrom.dim, flat, relu, rng)?,
            conv_dropout: variant.conv_dropout,
            dropout: variant.chrom.dropout,
            segment_len: dims.segment_len,
        };
        let hidden = Dense::new(ps, "head.dense1", h, variant.merged_width(), relu, rng)?;
        let out = Dense::new(ps, "head.dense2", 1, h, Activation::Sigmoid, rng)?;
        let sig = Activation::Sigmoid;
        let aux_mass = Dense::new(ps, "aux.mass", 1, variant.mass.dim, sig, rng)?;
        let aux_peak = match peak {
            Some(_) => Some(Dense::new(ps, "aux.peak", 1, variant.peak.dim, sig, rng)?),
            None => None,
        };
        let aux_chrom = Dense::new(ps, "aux.chrom", 1, variant.chrom.dim, sig, rng)?;
        Ok(Self {
            variant: variant.clone(),
            dims,
            mass,
            peak,
            chrom,
            hidden,
            out,
            aux_mass,
            aux_peak,
            aux_chrom,
        })
    }

    pub fn variant(&self) -> &VariantConfig {
        &self.variant
    }

    pub fn dims(&self) -> InputDims {
        self.dims
    }

    fn check_input(&self, f: &PeakFeatures) -> Result<()> {
        if f.mass_spectrum.len() != self.dims.mass_len {
            return Err(Error::arg(format!(
                "mass spectrum has {} channels, model expects {}",
                f.mass_spectrum.len(),
                self.dims.mass_len
            )));
        }
        if f.chrom_segment.len() != self.dims.segment_len {
            return Err(Error::arg(format!(
                "chromatogram segment has {} steps, model expects {}",
                f.chrom_segment.len(),
                self.dims.segment_len
            )));
        }
        if self.peak.is_some() && f.peak_profile.is_empty() {
            return Err(Error::arg("peak profile is empty"));
        }
        Ok(())
    }

    pub fn encode_cached(
        &self,
        p: &ParamSet,
        f: &PeakFeatures,
        mode: Mode,
        rng: &mut RngStream,
    ) -> Result<(Embedding, EncodeCache)> {
        self.check_input(f)?;
        let (mass, mc) = self.mass.forward(p, &f.mass_spectrum, mode, rng)?;
        let (peak, pc) = match &self.peak {
            Some(enc) => {
                let (e, c) = enc.forward(p, &f.peak_profile, mode, rng)?;
                (Some(e), Some(c))
            }
            None => (None, None),
        };
        let (chrom, cc) = self.chrom.forward(p, &f.chrom_segment, mode, rng)?;
        Ok((
            Embedding {
                mass,
                peak,
                chrom,
                rt: f.rt,
            },
            EncodeCache {
                mass: mc,
                peak: pc,
                chrom: cc,
            },
        ))
    }

    /// Inference-mode embedding of one peak.
    pub fn encode(&self, p: &ParamSet, f: &PeakFeatures) -> Result<Embedding> {
        let mut rng = RngStream::new(0);
        Ok(self.encode_cached(p, f, Mode::Infer, &mut rng)?.0)
    }

    fn merged(ea: &Embedding, eb: &Embedding) -> Vec<f64> {
        let mut m: Vec<f64> = ea.mass.iter().zip(&eb.mass).map(|(u, v)| (u - v).abs()).collect();
        if let (Some(pa), Some(pb)) = (&ea.peak, &eb.peak) {
            m.extend(pa.iter().zip(pb).map(|(u, v)| (u - v).abs()));
        }
        m.extend(ea.chrom.iter().zip(&eb.chrom).map(|(u, v)| (u - v).abs()));
        m.push((ea.rt - eb.rt).abs());
        m
    }

    fn head(
        &self,
        p: &ParamSet,
        ea: &Embedding,
        eb: &Embedding,
        mode: Mode,
        rng: &mut RngStream,
    ) -> Result<(PairOutputs, DropoutMask, DenseCache, DenseCache, Vec<DenseCache>)> {
        let merged = Self::merged(ea, eb);
        let (dropped, mask) = dropout(&merged, HEAD_DROPOUT, mode, rng);
        let (h, hc) = self.hidden.forward(p, &dropped)?;
        let (o, oc) = self.out.forward(p, &h)?;
        let dm = self.variant.mass.dim;
        let dp = if self.peak.is_some() { self.variant.peak.dim } else { 0 };
        let (am, amc) = self.aux_mass.forward(p, &merged[..dm])?;
        let mut aux = vec![amc];
        let peak = match &self.aux_peak {
            Some(d) => {
                let (ap, apc) = d.forward(p, &merged[dm..dm + dp])?;
                aux.push(apc);
                Some(ap[0])
            }
            None => None,
        };
        let (ac, acc) = self.aux_chrom.forward(p, &merged[dm + dp..merged.len() - 1])?;
        aux.push(acc);
        let outputs = PairOutputs {
            main: o[0],
            mass: am[0],
            peak,
            chrom: ac[0],
        };
        Ok((outputs, mask, hc, oc, aux))
    }

    /// Inference-mode main probability from two precomputed embeddings.
    pub fn score(&self, p: &ParamSet, ea: &Embedding, eb: &Embedding) -> Result<PairOutputs> {
        let mut rng = RngStream::new(0);
        Ok(self.head(p, ea, eb, Mode::Infer, &mut rng)?.0)
    }

    pub fn forward(
        &self,
        p: &ParamSet,
        a: &PeakFeatures,
        b: &PeakFeatures,
        mode: Mode,
        rng: &mut RngStream,
    ) -> Result<(PairOutputs, PairCache)> {
        let (ea, ca) = self.encode_cached(p, a, mode, rng)?;
        let (eb, cb) = self.encode_cached(p, b, mode, rng)?;
        let (outputs, merged_mask, hidden, out, aux) = self.head(p, &ea, &eb, mode, rng)?;
        Ok((
            outputs,
            PairCache {
                a: ca,
                b: cb,
                ea,
                eb,
                merged_mask,
                hidden,
                out,
                aux,
            },
        ))
    }

    /// Accumulates the gradient of the total loss into `g` and returns the
    /// loss breakdown.
    pub fn backward(
        &self,
        p: &ParamSet,
        cache: &PairCache,
        outputs: &PairOutputs,
        label: f64,
        aux_weight: f64,
        g: &mut ParamSet,
    ) -> LossBreakdown {
        let loss = total_loss(outputs, label, aux_weight);
        let (_, dmain) = bce_loss(outputs.main, label);
        let dh = self.out.backward(p, &cache.out, &[dmain], g);
        let dd = self.hidden.backward(p, &cache.hidden, &dh, g);
        let mut dmerged = cache.merged_mask.backward(&dd);

        let dm = self.variant.mass.dim;
        let dp = if self.peak.is_some() { self.variant.peak.dim } else { 0 };
        let n = dmerged.len();
        let mut aux_heads: Vec<(&Dense, f64, std::ops::Range<usize>)> = vec![(&self.aux_mass, outputs.mass, 0..dm)];
        if let (Some(d), Some(pp)) = (&self.aux_peak, outputs.peak) {
            aux_heads.push((d, pp, dm..dm + dp));
        }
        aux_heads.push((&self.aux_chrom, outputs.chrom, dm + dp..n - 1));
        for ((head, prob, range), hc) in aux_heads.into_iter().zip(&cache.aux) {
            let (_, d) = bce_loss(prob, label);
            let dx = head.backward(p, hc, &[aux_weight * d], g);
            for (acc, v) in dmerged[range].iter_mut().zip(dx) {
                *acc += v;
            }
        }

        // d|u - v| = sign(u - v) (du - dv); zero at u == v
        let split = |ea: &[f64], eb: &[f64], d: &[f64]| -> (Vec<f64>, Vec<f64>) {
            let da: Vec<f64> = ea
                .iter()
                .zip(eb)
                .zip(d)
                .map(|((u, v), g)| if u > v { *g } else if u < v { -g } else { 0.0 })
                .collect();
            let db = da.iter().map(|x| -x).collect();
            (da, db)
        };
        let (dma, dmb) = split(&cache.ea.mass, &cache.eb.mass, &dmerged[..dm]);
        self.mass.backward(p, &cache.a.mass, &dma, g);
        self.mass.backward(p, &cache.b.mass, &dmb, g);
        if let Some(enc) = &self.peak {
            let (pa, pb) = (cache.ea.peak.as_ref().unwrap(), cache.eb.peak.as_ref().unwrap());
            let (dpa, dpb) = split(pa, pb, &dmerged[dm..dm + dp]);
            enc.backward(p, cache.a.peak.as_ref().unwrap(), &dpa, g);
            enc.backward(p, cache.b.peak.as_ref().unwrap(), &dpb, g);
        }
        let (dca, dcb) = split(&cache.ea.chrom, &cache.eb.chrom, &dmerged[dm + dp..n - 1]);
        self.chrom.backward(p, &cache.a.chrom, &dca, g);
        self.chrom.backward(p, &cache.b.chrom, &dcb, g);
        loss
    }
}

/// `bce(main) + aux_weight * sum(bce(aux))` over the enabled auxiliary heads.
pub fn total_loss(outputs: &PairOutputs, label: f64, aux_weight: f64) -> LossBreakdown {
    let main = bce_loss(outputs.main, label).0;
    let mass = bce_loss(outputs.mass, label).0;
    let peak = outputs.peak.map(|p| bce_loss(p, label).0);
    let chrom = bce_loss(outputs.chrom, label).0;
    LossBreakdown {
        total: main + aux_weight * (mass + peak.unwrap_or(0.0) + chrom),
        main,
        mass,
        peak,
        chrom,
    }
}

fn hash_dense(c: &DenseCache, h: &mut DefaultHasher) {
    c.fingerprint(h);
}

fn hash_encode(c: &EncodeCache, h: &mut DefaultHasher) {
    c.mass.dense.iter().for_each(|d| hash_dense(d, h));
    if let Some(pc) = &c.peak {
        hash_dense(&pc.out, h);
    }
    c.chrom.first_pool.fingerprint(h);
    for st in c.chrom.left.iter().chain(&c.chrom.right) {
        st.conv.fingerprint(h);
        st.pool.fingerprint(h);
    }
    hash_dense(&c.chrom.out, h);
}

/// Fingerprint of every non-smooth branch taken by a forward pass.
pub(crate) fn fingerprint(cache: &PairCache) -> u64 {
    let mut h = DefaultHasher::new();
    hash_encode(&cache.a, &mut h);
    hash_encode(&cache.b, &mut h);
    let signs = |ea: &[f64], eb: &[f64], h: &mut DefaultHasher| {
        for (u, v) in ea.iter().zip(eb) {
            u.partial_cmp(v).hash(h);
        }
    };
    signs(&cache.ea.mass, &cache.eb.mass, &mut h);
    if let (Some(a), Some(b)) = (&cache.ea.peak, &cache.eb.peak) {
        signs(a, b, &mut h);
    }
    signs(&cache.ea.chrom, &cache.eb.chrom, &mut h);
    hash_dense(&cache.hidden, &mut h);
    h.finish()
}
