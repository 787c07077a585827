use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PeakEncoderKind {
    /// Three bidirectional LSTM layers.
    Full,
    /// Three unidirectional GRU layers.
    Simplified,
    None,
}

impl std::str::FromStr for PeakEncoderKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Self::Full),
            "simplified" => Ok(Self::Simplified),
            "none" => Ok(Self::None),
            other => Err(Error::Config(format!("unknown peak encoder kind {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderSettings {
    /// Width of the encoder's final dense layer.
    pub dim: usize,
    pub dropout: f64,
}

impl Default for EncoderSettings {
    fn default() -> Self {
        Self { dim: 10, dropout: 0.2 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VariantConfig {
    pub id: String,
    pub peak_encoder: PeakEncoderKind,
    pub mass: EncoderSettings,
    pub peak: EncoderSettings,
    pub chrom: EncoderSettings,
    /// Dropout between the convolution blocks of the chromatogram encoder.
    pub conv_dropout: f64,
    pub left_stack_convs: usize,
    pub right_stack_convs: usize,
    pub first_layer_filters: usize,
}

impl Default for VariantConfig {
    fn default() -> Self {
        Self {
            id: "01".into(),
            peak_encoder: PeakEncoderKind::Full,
            mass: EncoderSettings::default(),
            peak: EncoderSettings::default(),
            chrom: EncoderSettings::default(),
            conv_dropout: 0.0,
            left_stack_convs: 2,
            right_stack_convs: 3,
            first_layer_filters: 6,
        }
    }
}

fn check_rate(name: &str, r: f64) -> Result<()> {
    if (0.0..1.0).contains(&r) {
        Ok(())
    } else {
        Err(Error::Config(format!("{name} must be in [0, 1), got {r}")))
    }
}

impl VariantConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, e) in [("mass", &self.mass), ("peak", &self.peak), ("chrom", &self.chrom)] {
            if e.dim == 0 {
                return Err(Error::Config(format!("{name} encoding dim must be positive")));
            }
            check_rate(&format!("{name} dropout"), e.dropout)?;
        }
        check_rate("conv dropout", self.conv_dropout)?;
        if self.left_stack_convs == 0 || self.right_stack_convs == 0 || self.first_layer_filters == 0 {
            return Err(Error::Config("conv stack sizes and filter count must be positive".into()));
        }
        Ok(())
    }

    pub fn has_peak_encoder(&self) -> bool {
        self.peak_encoder != PeakEncoderKind::None
    }

    /// Width of the merged difference vector, including the RT difference.
    pub fn merged_width(&self) -> usize {
        let peak = if self.has_peak_encoder() { self.peak.dim } else { 0 };
        self.mass.dim + peak + self.chrom.dim + 1
    }

    /// One of the 31 numbered variants of the reference model ("01".."31").
    pub fn preset(id: &str) -> Result<Self> {
        let n: u32 = id
            .parse()
            .map_err(|_| Error::Config(format!("unknown variant {id:?}")))?;
        let mut v = match n {
            1..=19 => single_change(n),
            20..=31 => {
                let base = if n <= 25 { 2 } else { 3 };
                let other = [8, 9, 11, 12, 17, 19][((n - 20) % 6) as usize];
                let mut v = single_change(base);
                apply(&mut v, other);
                v
            }
            _ => return Err(Error::Config(format!("unknown variant {id:?}"))),
        };
        v.id = format!("{n:02}");
        Ok(v)
    }
}

fn single_change(n: u32) -> VariantConfig {
    let mut v = VariantConfig::default();
    apply(&mut v, n);
    v
}

fn apply(v: &mut VariantConfig, n: u32) {
    let set = |e: &mut EncoderSettings, dropout: Option<f64>, dim: Option<usize>| {
        if let Some(d) = dropout {
            e.dropout = d;
        }
        if let Some(d) = dim {
            e.dim = d;
        }
    };
    match n {
        2 => v.peak_encoder = PeakEncoderKind::None,
        3 => v.peak_encoder = PeakEncoderKind::Simplified,
        4 => set(&mut v.peak, Some(0.5), None),
        5 => set(&mut v.peak, None, Some(5)),
        6 => set(&mut v.peak, Some(0.5), Some(20)),
        7 => set(&mut v.peak, Some(0.5), Some(30)),
        8 => set(&mut v.mass, None, Some(5)),
        9 => set(&mut v.mass, Some(0.5), Some(20)),
        10 => set(&mut v.mass, Some(0.5), Some(30)),
        11 => set(&mut v.chrom, None, Some(5)),
        12 => set(&mut v.chrom, Some(0.5), Some(20)),
        13 => set(&mut v.chrom, Some(0.5), Some(30)),
        14 => v.conv_dropout = 0.2,
        15 => v.conv_dropout = 0.5,
        16 => v.right_stack_convs += 1,
        17 => v.right_stack_convs -= 1,
        18 => v.left_stack_convs += 1,
        19 => v.left_stack_convs -= 1,
        _ => {}
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_cover_all_ids() {
        for n in 1..=31 {
            let v = VariantConfig::preset(&format!("{n:02}")).unwrap();
            v.validate().unwrap();
            assert_eq!(v.id, format!("{n:02}"));
        }
        assert!(VariantConfig::preset("32").is_err());
        assert!(VariantConfig::preset("x").is_err());
    }

    #[test]
    fn combined_presets() {
        let v = VariantConfig::preset("24").unwrap();
        assert_eq!(v.peak_encoder, PeakEncoderKind::None);
        assert_eq!(v.right_stack_convs, 2);
        let v = VariantConfig::preset("27").unwrap();
        assert_eq!(v.peak_encoder, PeakEncoderKind::Simplified);
        assert_eq!(v.mass, EncoderSettings { dim: 20, dropout: 0.5 });
        assert_eq!(VariantConfig::preset("02").unwrap().merged_width(), 21);
        assert_eq!(VariantConfig::preset("01").unwrap().merged_width(), 31);
    }
}
