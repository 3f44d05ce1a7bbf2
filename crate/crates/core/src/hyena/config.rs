use crate::error::{invalid, Result};
use crate::filtergen::{FilterVariant, WindowVariant, DEFAULT_GAMMA};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HyenaVariant {
    /// Raster-order sequence with a 1-D implicit filter.
    Hyena1d,
    /// Grid with a jointly parameterized N-D implicit filter.
    HyenaNd,
    /// Grid with an outer product of per-axis 1-D filters.
    HyenaNdProduct,
}

impl HyenaVariant {
    pub fn filter_variant(self) -> FilterVariant {
        match self {
            HyenaVariant::Hyena1d => FilterVariant::Implicit1d,
            HyenaVariant::HyenaNd => FilterVariant::ImplicitNd,
            HyenaVariant::HyenaNdProduct => FilterVariant::ProductNd,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Causal,
    /// Reverses every spatial axis around even recurrence steps.
    TwoDir,
    /// Mixes four 90°-rotated copies of the input and aggregates them.
    FourDir,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HyenaConfig {
    pub axes: usize,
    pub channels: usize,
    pub order: usize,
    pub variant: HyenaVariant,
    pub direction: Direction,
    pub short_filter_size: usize,
    pub window: WindowVariant,
    pub gamma: f64,
    pub learnable_window: bool,
    pub encoding_width: usize,
    pub hidden_layers: usize,
    /// Typical axis length; sets the decay-rate range and frequency ladder.
    pub reference_length: usize,
    pub residual_bias: bool,
}

impl HyenaConfig {
    pub fn new(variant: HyenaVariant, axes: usize, channels: usize, order: usize) -> Self {
        let window = match (variant, axes) {
            (HyenaVariant::Hyena1d, _) => WindowVariant::OneD,
            (_, 2) => WindowVariant::Dimensional,
            (HyenaVariant::HyenaNd, _) => WindowVariant::Symmetric,
            (HyenaVariant::HyenaNdProduct, _) => WindowVariant::OneD,
        };
        HyenaConfig {
            axes,
            channels,
            order,
            variant,
            direction: Direction::Causal,
            short_filter_size: 3,
            window,
            gamma: DEFAULT_GAMMA,
            learnable_window: false,
            encoding_width: 32,
            hidden_layers: 2,
            reference_length: 8,
            residual_bias: false,
        }
    }

    pub fn with_direction(mut self, direction: Direction) -> Self {
        self.direction = direction;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.axes == 0 || self.channels == 0 || self.order == 0 {
            return Err(invalid("Hyena needs at least one axis, channel and order step"));
        }
        if self.short_filter_size.is_multiple_of(2) {
            return Err(invalid(format!(
                "short filter size {} must be odd",
                self.short_filter_size
            )));
        }
        if self.direction == Direction::TwoDir && self.order < 2 {
            return Err(invalid("two-directional mixing needs at least two order steps"));
        }
        if self.direction == Direction::FourDir && self.axes != 2 {
            return Err(invalid("four-directional mixing needs a 2-D grid"));
        }
        if self.reference_length == 0 {
            return Err(invalid("reference length must be positive"));
        }
        Ok(())
    }

    /// Number of axes the filter and short convolution operate over.
    pub fn kernel_axes(&self) -> usize {
        match self.variant {
            HyenaVariant::Hyena1d => 1,
            _ => self.axes,
        }
    }

    /// Typical kernel length along each kernel axis.
    pub fn kernel_reference_length(&self) -> usize {
        match self.variant {
            HyenaVariant::Hyena1d => self.reference_length.pow(self.axes as u32),
            _ => self.reference_length,
        }
    }

    pub fn streams(&self) -> usize {
        (self.order + 1) * self.channels
    }
}
