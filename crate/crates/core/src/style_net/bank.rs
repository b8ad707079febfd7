use serde::{Deserialize, Serialize};

use crate::autograd;
use crate::error::{Error, Result};
use crate::tensor::{self, Tensor};

pub const CIN_EPS: f64 = 1e-5;

/// Convex weights over the styles of a bank.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StyleWeights(Vec<f64>);

impl StyleWeights {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::Contract("style weights must not be empty".into()));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::Contract(format!("style weights must be finite and ≥ 0: {weights:?}")));
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > 1e-6 {
            return Err(Error::Contract(format!("style weights sum to {sum}, expected 1")));
        }
        Ok(StyleWeights(weights))
    }

    pub fn one_hot(styles: usize, index: usize) -> Result<Self> {
        if index >= styles {
            return Err(Error::Contract(format!("style index {index} out of range for {styles} styles")));
        }
        let mut w = vec![0.0; styles];
        w[index] = 1.0;
        Ok(StyleWeights(w))
    }

    pub fn uniform(styles: usize) -> Result<Self> {
        if styles == 0 {
            return Err(Error::Contract("style weights must not be empty".into()));
        }
        Ok(StyleWeights(vec![1.0 / styles as f64; styles]))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Index of the single active style, if the weights are one-hot.
    pub fn single_style(&self) -> Option<usize> {
        let mut nz = self.0.iter().enumerate().filter(|(_, &w)| w != 0.0);
        match (nz.next(), nz.next()) {
            (Some((i, &w)), None) if w == 1.0 => Some(i),
            _ => None,
        }
    }
}

/// A named `f32` parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl Param {
    pub fn new(name: impl Into<String>, shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let name = name.into();
        if shape.iter().product::<usize>() != data.len() {
            return Err(Error::Contract(format!(
                "parameter {name} has shape {shape:?} but {} values",
                data.len()
            )));
        }
        Ok(Param { name, shape, data })
    }

    pub(crate) fn to_tensor(&self) -> Tensor {
        Tensor::new(self.shape.clone(), self.data.iter().map(|&v| v as f64).collect()).expect("param shape")
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

/// Scale and shift for one normalized layer.
#[derive(Debug, Clone, PartialEq)]
pub struct NormRows {
    pub scale: Vec<f64>,
    pub shift: Vec<f64>,
}

/// Per-style conditional instance norm parameters: one `[N, C]` scale and
/// one `[N, C]` shift table per normalized layer.
#[derive(Debug, Clone, PartialEq)]
pub struct StyleBank {
    pub(crate) styles: usize,
    pub(crate) scales: Vec<Param>,
    pub(crate) shifts: Vec<Param>,
}

impl StyleBank {
    /// Scales at one, shifts at zero.
    pub fn identity(styles: usize, layers: &[(String, usize)]) -> Self {
        let mut scales = Vec::new();
        let mut shifts = Vec::new();
        for (name, c) in layers {
            scales.push(Param {
                name: format!("{name}.scale"),
                shape: vec![styles, *c],
                data: vec![1.0; styles * c],
            });
            shifts.push(Param {
                name: format!("{name}.shift"),
                shape: vec![styles, *c],
                data: vec![0.0; styles * c],
            });
        }
        StyleBank { styles, scales, shifts }
    }

    pub fn styles(&self) -> usize {
        self.styles
    }

    pub fn layers(&self) -> usize {
        self.scales.len()
    }

    pub fn channels(&self, layer: usize) -> usize {
        self.scales[layer].shape[1]
    }

    /// Style `k`'s row for `layer`.
    pub fn rows(&self, layer: usize, k: usize) -> NormRows {
        let c = self.channels(layer);
        let pick = |p: &Param| p.data[k * c..(k + 1) * c].iter().map(|&v| v as f64).collect();
        NormRows {
            scale: pick(&self.scales[layer]),
            shift: pick(&self.shifts[layer]),
        }
    }

    pub fn scales_mut(&mut self, layer: usize) -> &mut [f32] {
        &mut self.scales[layer].data
    }

    pub fn shifts_mut(&mut self, layer: usize) -> &mut [f32] {
        &mut self.shifts[layer].data
    }

    pub(crate) fn validate(&self) -> Result<()> {
        for p in self.scales.iter().chain(&self.shifts) {
            if p.shape.len() != 2 || p.shape[0] != self.styles {
                return Err(Error::Config(format!("bank table {} has shape {:?}", p.name, p.shape)));
            }
            if p.data.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numeric(format!("bank table {} is not finite", p.name)));
            }
        }
        Ok(())
    }
}

/// `Σₖ wₖ·(scaleₖ, shiftₖ)` for every normalized layer.
pub fn mix_styles(bank: &StyleBank, w: &StyleWeights) -> Result<Vec<NormRows>> {
    if w.len() != bank.styles {
        return Err(Error::Contract(format!(
            "{} style weights for a bank of {} styles",
            w.len(),
            bank.styles
        )));
    }
    Ok((0..bank.layers())
        .map(|l| {
            let c = bank.channels(l);
            let widen = |p: &Param| p.data.iter().map(|&v| v as f64).collect::<Vec<f64>>();
            NormRows {
                scale: autograd::mix_rows(&widen(&bank.scales[l]), c, w.as_slice()),
                shift: autograd::mix_rows(&widen(&bank.shifts[l]), c, w.as_slice()),
            }
        })
        .collect())
}

/// Per-channel `(x − mean) / sqrt(var + eps) · scale + shift`, statistics
/// taken over this instance's H×W values.
pub fn cond_instance_norm(activation: &Tensor, scale: &[f64], shift: &[f64], eps: f64) -> Result<Tensor> {
    if activation.shape().len() != 3 || activation.is_empty() {
        return Err(Error::Contract(format!("expected a non-empty C×H×W map, got {:?}", activation.shape())));
    }
    let (c, h, w) = activation.dims3();
    if scale.len() != c || shift.len() != c {
        return Err(Error::Contract(format!(
            "{c} channels but {} scales and {} shifts",
            scale.len(),
            shift.len()
        )));
    }
    let (mut out, _) = tensor::instance_norm(activation, eps);
    let n = h * w;
    for (ch, chunk) in out.data_mut().chunks_mut(n).enumerate() {
        for v in chunk {
            *v = *v * scale[ch] + shift[ch];
        }
    }
    Ok(out)
}
