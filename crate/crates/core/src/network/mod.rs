//! The multi-task 1-max CNN, the deep CNN baseline and their parameters.

mod checkpoint;
mod forward;
mod params;

use std::fmt;
use std::str::FromStr;

pub use checkpoint::{read_checkpoint, write_checkpoint, Checkpoint};
pub use forward::{
    assemble_context, batch_input, forward, forward_batch, forward_many_to_one, predict_batch, register_params,
};
pub use params::{init_params, ModelParams};

use crate::error::{Error, Result};

/// How epochs map onto network inputs and outputs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ContextMode {
    /// One epoch in, `2 tau + 1` posteriors out.
    OneToMany,
    /// One epoch in, one posterior out (`tau = 0`).
    OneToOne,
    /// `2 tau + 1` epochs in (concatenated along time), one posterior out.
    ManyToOne,
}

impl ContextMode {
    pub fn as_str(self) -> &'static str {
        match self {
            ContextMode::OneToMany => "one_to_many",
            ContextMode::OneToOne => "one_to_one",
            ContextMode::ManyToOne => "many_to_one",
        }
    }
}

impl fmt::Display for ContextMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ContextMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "one_to_many" => Ok(ContextMode::OneToMany),
            "one_to_one" => Ok(ContextMode::OneToOne),
            "many_to_one" => Ok(ContextMode::ManyToOne),
            _ => Err(Error::invalid(format!("unknown context mode `{s}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ContextConfig {
    pub tau: usize,
    pub mode: ContextMode,
}

impl ContextConfig {
    pub fn new(mode: ContextMode, tau: usize) -> Result<Self> {
        let c = ContextConfig { tau, mode };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if self.mode == ContextMode::OneToOne && self.tau != 0 {
            return Err(Error::invalid(format!("one_to_one needs tau = 0, got {}", self.tau)));
        }
        Ok(())
    }

    pub fn context_size(&self) -> usize {
        2 * self.tau + 1
    }

    /// Posterior slots emitted per input.
    pub fn n_outputs(&self) -> usize {
        match self.mode {
            ContextMode::OneToMany => self.context_size(),
            _ => 1,
        }
    }

    /// Epochs consumed per input.
    pub fn n_inputs(&self) -> usize {
        match self.mode {
            ContextMode::ManyToOne => self.context_size(),
            _ => 1,
        }
    }

    /// Tau as seen by decision aggregation (zero unless one-to-many).
    pub fn output_tau(&self) -> usize {
        match self.mode {
            ContextMode::OneToMany => self.tau,
            _ => 0,
        }
    }
}

/// Output layer layout.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HeadKind {
    /// One affine map to all `(2 tau + 1) * Y` logits.
    Shared,
    /// A separate affine map per output slot.
    PerSlot,
}

impl HeadKind {
    pub fn as_str(self) -> &'static str {
        match self {
            HeadKind::Shared => "shared",
            HeadKind::PerSlot => "per_slot",
        }
    }
}

impl FromStr for HeadKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "shared" => Ok(HeadKind::Shared),
            "per_slot" => Ok(HeadKind::PerSlot),
            _ => Err(Error::invalid(format!("unknown head kind `{s}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OneMaxCnnSpec {
    pub filter_widths: Vec<usize>,
    /// Q, filters per width.
    pub filters_per_width: usize,
    pub n_channels: usize,
    /// M, filter-bank outputs per channel.
    pub n_filters: usize,
    /// T, frames per epoch image.
    pub n_frames: usize,
    pub n_classes: usize,
    pub context: ContextConfig,
    pub dropout: f64,
    pub lambda_reg: f64,
    pub head: HeadKind,
    /// When set, inputs are raw spectrograms with this many bins and a
    /// trainable `P x M x F` bank maps them to `M` filters.
    pub learnable_bank_bins: Option<usize>,
}

impl OneMaxCnnSpec {
    pub fn new(
        filter_widths: Vec<usize>,
        filters_per_width: usize,
        (n_channels, n_filters, n_frames): (usize, usize, usize),
        context: ContextConfig,
    ) -> Self {
        OneMaxCnnSpec {
            filter_widths,
            filters_per_width,
            n_channels,
            n_filters,
            n_frames,
            n_classes: 5,
            context,
            dropout: 0.2,
            lambda_reg: 1e-3,
            head: HeadKind::Shared,
            learnable_bank_bins: None,
        }
    }

    pub fn feature_len(&self) -> usize {
        self.filters_per_width * self.filter_widths.len()
    }

    pub fn validate(&self) -> Result<()> {
        self.context.validate()?;
        let t = self.n_frames * self.context.n_inputs();
        if self.filter_widths.is_empty() {
            return Err(Error::invalid("no filter widths"));
        }
        if let Some(&w) = self.filter_widths.iter().find(|&&w| w == 0 || w >= t) {
            return Err(Error::invalid(format!("filter width {w} must be in 1..{t}")));
        }
        if self.filters_per_width == 0 || self.n_channels == 0 || self.n_filters == 0 || self.n_classes < 2 {
            return Err(Error::invalid(
                "filter count, channel count, filter-bank size and class count must be positive",
            ));
        }
        if self.learnable_bank_bins.is_some_and(|f| f < self.n_filters) {
            return Err(Error::invalid("learnable bank has fewer bins than filters"));
        }
        check_rates(self.dropout, self.lambda_reg)
    }
}

fn check_rates(dropout: f64, lambda: f64) -> Result<()> {
    if !(0.0..1.0).contains(&dropout) {
        return Err(Error::invalid(format!("dropout {dropout} outside [0, 1)")));
    }
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::invalid(format!(
            "regularization weight {lambda} must be non-negative"
        )));
    }
    Ok(())
}

/// The deep CNN baseline: two 3x3x96 convolutions with max pooling, two
/// 1024-unit fully connected layers and the multi-task output layer.
/// Convolutions are unpadded.
#[derive(Clone, Debug, PartialEq)]
pub struct DeepCnnSpec {
    pub n_channels: usize,
    pub n_filters: usize,
    pub n_frames: usize,
    pub n_classes: usize,
    pub context: ContextConfig,
    pub dropout: f64,
    pub lambda_reg: f64,
}

impl DeepCnnSpec {
    pub const CONV_MAPS: usize = 96;
    pub const KERNEL: usize = 3;
    /// Pooling windows as (frequency, time).
    pub const POOL1: (usize, usize) = (2, 1);
    pub const POOL2: (usize, usize) = (2, 2);
    pub const FC_UNITS: usize = 1024;

    pub fn new((n_channels, n_filters, n_frames): (usize, usize, usize), context: ContextConfig) -> Self {
        DeepCnnSpec {
            n_channels,
            n_filters,
            n_frames,
            n_classes: 5,
            context,
            dropout: 0.2,
            lambda_reg: 1e-3,
        }
    }

    /// (height, width) of the feature maps after conv1, pool1, conv2, pool2.
    pub fn map_dims(&self) -> Result<[(usize, usize); 4]> {
        let k = Self::KERNEL;
        let (h, w) = (self.n_filters, self.n_frames * self.context.n_inputs());
        if h < k || w < k {
            return Err(Error::invalid(format!("{h}x{w} input too small for the deep CNN")));
        }
        let c1 = (h - k + 1, w - k + 1);
        let p1 = (c1.0 / Self::POOL1.0, c1.1 / Self::POOL1.1);
        if p1.0 < k || p1.1 < k {
            return Err(Error::invalid(format!("{h}x{w} input too small for the deep CNN")));
        }
        let c2 = (p1.0 - k + 1, p1.1 - k + 1);
        let p2 = (c2.0 / Self::POOL2.0, c2.1 / Self::POOL2.1);
        if p2.0 == 0 || p2.1 == 0 {
            return Err(Error::invalid(format!("{h}x{w} input too small for the deep CNN")));
        }
        Ok([c1, p1, c2, p2])
    }

    pub fn flat_len(&self) -> Result<usize> {
        let p2 = self.map_dims()?[3];
        Ok(Self::CONV_MAPS * p2.0 * p2.1)
    }

    pub fn validate(&self) -> Result<()> {
        self.context.validate()?;
        if self.n_channels == 0 || self.n_classes < 2 {
            return Err(Error::invalid("channel and class counts must be positive"));
        }
        self.map_dims()?;
        check_rates(self.dropout, self.lambda_reg)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum ModelSpec {
    OneMax(OneMaxCnnSpec),
    Deep(DeepCnnSpec),
}

impl ModelSpec {
    pub fn arch_name(&self) -> &'static str {
        match self {
            ModelSpec::OneMax(_) => "onemax",
            ModelSpec::Deep(_) => "deepcnn",
        }
    }

    pub fn context(&self) -> ContextConfig {
        match self {
            ModelSpec::OneMax(s) => s.context,
            ModelSpec::Deep(s) => s.context,
        }
    }

    pub fn n_classes(&self) -> usize {
        match self {
            ModelSpec::OneMax(s) => s.n_classes,
            ModelSpec::Deep(s) => s.n_classes,
        }
    }

    pub fn dropout(&self) -> f64 {
        match self {
            ModelSpec::OneMax(s) => s.dropout,
            ModelSpec::Deep(s) => s.dropout,
        }
    }

    pub fn set_dropout(&mut self, rate: f64) {
        match self {
            ModelSpec::OneMax(s) => s.dropout = rate,
            ModelSpec::Deep(s) => s.dropout = rate,
        }
    }

    pub fn lambda_reg(&self) -> f64 {
        match self {
            ModelSpec::OneMax(s) => s.lambda_reg,
            ModelSpec::Deep(s) => s.lambda_reg,
        }
    }

    pub fn set_lambda_reg(&mut self, lambda: f64) {
        match self {
            ModelSpec::OneMax(s) => s.lambda_reg = lambda,
            ModelSpec::Deep(s) => s.lambda_reg = lambda,
        }
    }

    /// Dimensions `(P, bins, T)` of one epoch image as the model consumes it.
    /// `bins` is the spectrogram size when the bank is learnable.
    pub fn epoch_dims(&self) -> (usize, usize, usize) {
        match self {
            ModelSpec::OneMax(s) => (s.n_channels, s.learnable_bank_bins.unwrap_or(s.n_filters), s.n_frames),
            ModelSpec::Deep(s) => (s.n_channels, s.n_filters, s.n_frames),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            ModelSpec::OneMax(s) => s.validate(),
            ModelSpec::Deep(s) => s.validate(),
        }
    }
}
