use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Bounded map applied to the last layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputSquash {
    #[default]
    Sigmoid,
}

/// Encoder / residual / decoder layout of the transformation network.
///
/// The decoder mirrors the encoder: `up_widths` must equal the encoder
/// widths in reverse, ending at `base_width`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub base_width: usize,
    pub down_widths: Vec<usize>,
    pub residual_blocks: usize,
    pub up_widths: Vec<usize>,
    /// Kernel of the first and last convolution.
    pub outer_kernel: usize,
    /// Kernel of every other convolution.
    pub inner_kernel: usize,
    pub styles: usize,
    #[serde(default)]
    pub output: OutputSquash,
    pub seed: u64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            base_width: 8,
            down_widths: vec![16, 32],
            residual_blocks: 3,
            up_widths: vec![16, 8],
            outer_kernel: 9,
            inner_kernel: 3,
            styles: 1,
            output: OutputSquash::Sigmoid,
            seed: 0,
        }
    }
}

impl NetworkConfig {
    pub fn with_styles(mut self, styles: usize) -> Self {
        self.styles = styles;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.styles == 0 {
            return Err(Error::Config("a network needs at least one style".into()));
        }
        if self.base_width == 0 || self.down_widths.contains(&0) {
            return Err(Error::Config("layer widths must be positive".into()));
        }
        for (name, k) in [("outer_kernel", self.outer_kernel), ("inner_kernel", self.inner_kernel)] {
            if k == 0 || k % 2 == 0 {
                return Err(Error::Config(format!("{name} must be odd, got {k}")));
            }
        }
        let mirrored: Vec<usize> = self
            .down_widths
            .iter()
            .rev()
            .skip(1)
            .copied()
            .chain(std::iter::once(self.base_width))
            .collect();
        let expected = if self.down_widths.is_empty() { Vec::new() } else { mirrored };
        if self.up_widths != expected {
            return Err(Error::Config(format!(
                "upsample widths {:?} do not mirror downsample widths {:?} (expected {expected:?})",
                self.up_widths, self.down_widths
            )));
        }
        Ok(())
    }

    /// Input height and width must be multiples of this.
    pub fn size_multiple(&self) -> usize {
        1 << self.down_widths.len()
    }

    /// Width of the residual trunk.
    pub fn trunk_width(&self) -> usize {
        self.down_widths.last().copied().unwrap_or(self.base_width)
    }

    /// `(name, in_channels, out_channels, kernel)` of every convolution, in
    /// forward order. Each one is followed by a conditional instance norm.
    pub(crate) fn conv_layout(&self) -> Vec<(String, usize, usize, usize)> {
        let mut v = vec![("in".to_string(), 3, self.base_width, self.outer_kernel)];
        let mut c = self.base_width;
        for (i, &w) in self.down_widths.iter().enumerate() {
            v.push((format!("down{i}"), c, w, self.inner_kernel));
            c = w;
        }
        for i in 0..self.residual_blocks {
            v.push((format!("res{i}a"), c, c, self.inner_kernel));
            v.push((format!("res{i}b"), c, c, self.inner_kernel));
        }
        for (i, &w) in self.up_widths.iter().enumerate() {
            v.push((format!("up{i}"), c, w, self.inner_kernel));
            c = w;
        }
        v.push(("out".to_string(), c, 3, self.outer_kernel));
        v
    }
}
