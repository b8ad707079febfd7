//! The multi-style transformation network.

mod bank;
mod config;
mod network;

pub use self::bank::{cond_instance_norm, mix_styles, NormRows, Param, StyleBank, StyleWeights, CIN_EPS};
pub use self::config::{NetworkConfig, OutputSquash};
pub use self::network::{Conditioning, Recorded, StyleNetwork};
