use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use sha2::{Digest, Sha256};

use super::bank::{mix_styles, NormRows, Param, StyleBank, StyleWeights, CIN_EPS};
use super::config::{NetworkConfig, OutputSquash};
use crate::autograd::{Activation, Gradients, Graph, Var};
use crate::data::Image;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// How the instance-norm layers are conditioned during a forward pass.
#[derive(Debug, Clone, Copy)]
pub enum Conditioning<'a> {
    /// Mix the bank rows on the tape, so gradients reach the bank.
    Mix(&'a StyleWeights),
    /// Use precomputed rows; the bank is bypassed.
    Rows(&'a [NormRows]),
}

/// Tape handles for one recorded forward pass.
#[derive(Debug, Clone)]
pub struct Recorded {
    pub output: Var,
    /// One entry per [`StyleNetwork::params`] item; `None` when the
    /// parameter did not take part in the pass.
    pub params: Vec<Option<Var>>,
}

impl Recorded {
    /// Gradients aligned with [`StyleNetwork::params`]; parameters that did
    /// not take part get exact zeros.
    pub fn collect(&self, net: &StyleNetwork, grads: &mut Gradients) -> Vec<Vec<f64>> {
        net.params()
            .iter()
            .zip(&self.params)
            .map(|(p, v)| {
                v.and_then(|v| grads.take(v))
                    .map(Tensor::into_data)
                    .unwrap_or_else(|| vec![0.0; p.len()])
            })
            .collect()
    }
}

/// Encoder / residual / decoder transformation network with a per-style
/// conditional instance norm after every convolution.
#[derive(Debug, Clone, PartialEq)]
pub struct StyleNetwork {
    config: NetworkConfig,
    convs: Vec<Param>,
    bank: StyleBank,
}

impl StyleNetwork {
    pub fn new(config: NetworkConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let layout = config.conv_layout();
        let mut convs = Vec::with_capacity(layout.len());
        for (name, cin, cout, k) in &layout {
            let fan_in = (cin * k * k) as f64;
            let normal = Normal::new(0.0, (2.0 / fan_in).sqrt()).expect("valid std");
            let data = (0..cout * cin * k * k).map(|_| normal.sample(&mut rng) as f32).collect();
            convs.push(Param::new(format!("{name}.weight"), vec![*cout, *cin, *k, *k], data)?);
        }
        let norm_layers: Vec<(String, usize)> = layout.iter().map(|(n, _, c, _)| (n.clone(), *c)).collect();
        let bank = StyleBank::identity(config.styles, &norm_layers);
        Ok(StyleNetwork { config, convs, bank })
    }

    /// Reassembles a network from a flat parameter list in [`Self::params`] order.
    pub fn from_params(config: NetworkConfig, params: Vec<Param>) -> Result<Self> {
        let mut net = Self::new(config)?;
        if params.len() != net.params().len() {
            return Err(Error::Config(format!(
                "expected {} parameter tensors, got {}",
                net.params().len(),
                params.len()
            )));
        }
        for (slot, p) in net.params_mut().into_iter().zip(params) {
            if slot.name != p.name || slot.shape != p.shape {
                return Err(Error::Config(format!(
                    "parameter {} {:?} does not match expected {} {:?}",
                    p.name, p.shape, slot.name, slot.shape
                )));
            }
            *slot = p;
        }
        net.bank.validate()?;
        if net.convs.iter().any(|p| p.data.iter().any(|v| !v.is_finite())) {
            return Err(Error::Numeric("convolution weights are not finite".into()));
        }
        Ok(net)
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn styles(&self) -> usize {
        self.config.styles
    }

    pub fn bank(&self) -> &StyleBank {
        &self.bank
    }

    pub fn bank_mut(&mut self) -> &mut StyleBank {
        &mut self.bank
    }

    /// Convolution weights, then every bank scale table, then every shift table.
    pub fn params(&self) -> Vec<&Param> {
        self.convs
            .iter()
            .chain(&self.bank.scales)
            .chain(&self.bank.shifts)
            .collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        self.convs
            .iter_mut()
            .chain(self.bank.scales.iter_mut())
            .chain(self.bank.shifts.iter_mut())
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    /// SHA-256 over the config and every parameter's bytes.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        h.update(serde_json::to_vec(&self.config).expect("config serializes"));
        for p in self.params() {
            h.update(p.name.as_bytes());
            for v in &p.data {
                h.update(v.to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }

    pub fn check_input(&self, height: usize, width: usize) -> Result<()> {
        let m = self.config.size_multiple();
        if !height.is_multiple_of(m) || !width.is_multiple_of(m) {
            return Err(Error::Size(format!(
                "input {height}×{width} must have both sides divisible by {m}"
            )));
        }
        Ok(())
    }

    /// Records a forward pass on `g`. With `trainable`, parameters enter as
    /// gradient-carrying leaves.
    pub fn record(&self, g: &mut Graph, input: Var, cond: Conditioning<'_>, trainable: bool) -> Result<Recorded> {
        let (c, h, w) = g.value(input).dims3();
        if c != 3 {
            return Err(Error::Contract(format!("network input must have 3 channels, got {c}")));
        }
        self.check_input(h, w)?;
        let layers = self.convs.len();
        match cond {
            Conditioning::Mix(sw) if sw.len() != self.styles() => {
                return Err(Error::Contract(format!(
                    "{} style weights for a network with {} styles",
                    sw.len(),
                    self.styles()
                )))
            }
            Conditioning::Rows(rows) if rows.len() != layers => {
                return Err(Error::Contract(format!("{} norm rows for {layers} layers", rows.len())))
            }
            _ => {}
        }

        let leaf = |g: &mut Graph, p: &Param| {
            if trainable {
                g.param(p.to_tensor())
            } else {
                g.constant(p.to_tensor())
            }
        };
        let conv_vars: Vec<Var> = self.convs.iter().map(|p| leaf(g, p)).collect();
        let mut scale_vars = vec![None; layers];
        let mut shift_vars = vec![None; layers];
        let mut norm_rows: Vec<(Var, Var)> = Vec::with_capacity(layers);
        for l in 0..layers {
            let pair = match cond {
                Conditioning::Mix(sw) => {
                    let sv = leaf(g, &self.bank.scales[l]);
                    let hv = leaf(g, &self.bank.shifts[l]);
                    scale_vars[l] = Some(sv);
                    shift_vars[l] = Some(hv);
                    (g.mix_rows(sv, sw.as_slice()), g.mix_rows(hv, sw.as_slice()))
                }
                Conditioning::Rows(rows) => {
                    let c = self.bank.channels(l);
                    if rows[l].scale.len() != c || rows[l].shift.len() != c {
                        return Err(Error::Contract(format!("norm rows for layer {l} must have {c} entries")));
                    }
                    (
                        g.constant(Tensor::new(vec![c], rows[l].scale.clone())?),
                        g.constant(Tensor::new(vec![c], rows[l].shift.clone())?),
                    )
                }
            };
            norm_rows.push(pair);
        }

        let k_in = self.config.inner_kernel;
        let k_out = self.config.outer_kernel;
        let conv_cin = |g: &mut Graph, x: Var, l: usize, stride: usize, k: usize| {
            let y = g.conv2d(x, conv_vars[l], None, stride, k / 2);
            let y = g.instance_norm(y, CIN_EPS);
            g.channel_affine(y, norm_rows[l].0, norm_rows[l].1)
        };

        let mut l = 0;
        let mut x = conv_cin(g, input, l, 1, k_out);
        x = g.activation(x, Activation::Relu);
        l += 1;
        for _ in &self.config.down_widths {
            let y = conv_cin(g, x, l, 2, k_in);
            x = g.activation(y, Activation::Relu);
            l += 1;
        }
        for _ in 0..self.config.residual_blocks {
            let y = conv_cin(g, x, l, 1, k_in);
            let y = g.activation(y, Activation::Relu);
            let y = conv_cin(g, y, l + 1, 1, k_in);
            x = g.add(x, y);
            l += 2;
        }
        for _ in &self.config.up_widths {
            let up = g.upsample_nearest(x, 2);
            let y = conv_cin(g, up, l, 1, k_in);
            x = g.activation(y, Activation::Relu);
            l += 1;
        }
        let y = conv_cin(g, x, l, 1, k_out);
        let output = match self.config.output {
            OutputSquash::Sigmoid => g.activation(y, Activation::Sigmoid),
        };
        debug_assert_eq!(l + 1, layers);

        let params = conv_vars
            .into_iter()
            .map(Some)
            .chain(scale_vars)
            .chain(shift_vars)
            .collect();
        Ok(Recorded { output, params })
    }

    pub(crate) fn forward_tensor(&self, input: &Tensor, cond: Conditioning<'_>) -> Result<Tensor> {
        let mut g = Graph::new();
        let x = g.constant(input.clone());
        let rec = self.record(&mut g, x, cond, false)?;
        Ok(g.value(rec.output).clone())
    }

    /// Stylizes `image` under the style mix `w`.
    pub fn forward(&self, image: &Image, w: &StyleWeights) -> Result<Image> {
        Image::from_tensor(&self.forward_tensor(&image.to_tensor(), Conditioning::Mix(w))?)
    }

    /// Stylizes with explicitly supplied per-layer norm rows.
    pub fn forward_with_rows(&self, image: &Image, rows: &[NormRows]) -> Result<Image> {
        Image::from_tensor(&self.forward_tensor(&image.to_tensor(), Conditioning::Rows(rows))?)
    }

    /// Like [`Self::forward`] for any input size: the bottom and right edges
    /// are replicated up to the size multiple and the result cropped back.
    pub fn forward_padded(&self, image: &Image, w: &StyleWeights) -> Result<Image> {
        let m = self.config.size_multiple();
        let (h, wd) = (image.height(), image.width());
        let (ph, pw) = (h.div_ceil(m) * m, wd.div_ceil(m) * m);
        if (ph, pw) == (h, wd) {
            return self.forward(image, w);
        }
        let padded = Image::from_fn(ph, pw, |y, x, c| image.get(y.min(h - 1), x.min(wd - 1), c))?;
        let out = self.forward(&padded, w)?;
        Image::from_fn(h, wd, |y, x, c| out.get(y, x, c))
    }

    /// [`mix_styles`] over this network's bank.
    pub fn mix(&self, w: &StyleWeights) -> Result<Vec<NormRows>> {
        mix_styles(&self.bank, w)
    }
}
