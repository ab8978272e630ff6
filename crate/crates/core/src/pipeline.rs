//! The four preprocessing flows: (a) standardization only, and (b)-(d) Gabor
//! filtering followed by on/off rectification and standardization.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gabor::{build_bank, rectify_split, standardize, GaborBank};
use crate::imgio::GrayImage;
use crate::nn::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum PipelineVariant {
    A,
    B,
    C,
    D,
}

impl PipelineVariant {
    pub const ALL: [PipelineVariant; 4] = [Self::A, Self::B, Self::C, Self::D];

    pub fn tag(self) -> &'static str {
        match self {
            Self::A => "a",
            Self::B => "b",
            Self::C => "c",
            Self::D => "d",
        }
    }

    /// Channels of the preprocessed tensor.
    pub fn channels(self) -> usize {
        match self {
            Self::A => 1,
            Self::B => 8,
            Self::C | Self::D => 16,
        }
    }
}

impl fmt::Display for PipelineVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for PipelineVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "a" => Ok(Self::A),
            "b" => Ok(Self::B),
            "c" => Ok(Self::C),
            "d" => Ok(Self::D),
            other => Err(Error::UnknownVariant(other.to_string())),
        }
    }
}

impl TryFrom<String> for PipelineVariant {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<PipelineVariant> for String {
    fn from(v: PipelineVariant) -> String {
        v.tag().to_string()
    }
}

/// A ready-to-apply preprocessing flow. The bank is present iff the variant is not `a`.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineSpec {
    variant: PipelineVariant,
    bank: Option<GaborBank>,
}

pub fn build_pipeline(variant: PipelineVariant) -> Result<PipelineSpec> {
    let bank = match variant {
        PipelineVariant::A => None,
        v => Some(build_bank(v)?),
    };
    Ok(PipelineSpec { variant, bank })
}

impl PipelineSpec {
    pub fn variant(&self) -> PipelineVariant {
        self.variant
    }

    pub fn bank(&self) -> Option<&GaborBank> {
        self.bank.as_ref()
    }

    pub fn out_channels(&self) -> usize {
        self.variant.channels()
    }

    /// The tensor just before standardization: the raw image for `a`, the
    /// rectified filter responses for `b`-`d`.
    pub fn rectified(&self, img: &GrayImage) -> Result<Tensor> {
        if img.is_empty() {
            return Err(Error::EmptyImage);
        }
        let x = Tensor::from_image(img);
        match &self.bank {
            None => Ok(x),
            Some(bank) => rectify_split(&bank.apply(&x)?),
        }
    }

    pub fn apply(&self, img: &GrayImage) -> Result<Tensor> {
        standardize(&self.rectified(img)?)
    }
}

/// Runs `spec` on `img`, producing a `C x H x W` tensor.
pub fn apply_pipeline(spec: &PipelineSpec, img: &GrayImage) -> Result<Tensor> {
    spec.apply(img)
}
