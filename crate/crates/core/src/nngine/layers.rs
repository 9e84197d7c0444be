//! Dense network assembly: layer specifications, parameter initialization,
//! and the forward pass that lowers a stack of layers onto the tape.
//!
//! A network is a name prefix plus a layer list. Parameters live in the
//! shared [`ParameterStore`] under `{prefix}/d{i}/w`-style names, so two
//! models built over the same prefix share weights — that is how the
//! long- and short-timescale models share one demodulator.

use super::store::ParameterStore;
use super::tape::{NodeId, Tape};
use crate::numerics::RngStream;
use crate::{Error, Result};

/// Running-statistics momentum for batch normalization.
pub const BN_MOMENTUM: f64 = 0.99;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Sigmoid,
    Tanh,
}

/// One stage of a network. Widths are implied by position: the builder
/// threads the running feature width through the list and rejects
/// inconsistent chains up front.
#[derive(Debug, Clone, PartialEq)]
pub enum LayerSpec {
    Dense { fan_in: usize, fan_out: usize },
    Activation(Activation),
    BatchNorm,
    Dropout { rate: f64 },
    /// Adds the block input to the block output; inner chain must preserve
    /// width.
    Residual { inner: Vec<LayerSpec> },
    /// Straight-through sign layer (the binary feedback stage).
    Binary,
}

/// Per-call forward context: mode, surrogate slope, and the dropout stream.
pub struct ForwardCtx<'a> {
    pub training: bool,
    /// Surrogate slope for binary layers (annealed across epochs).
    pub alpha: f64,
    /// Entropy for dropout masks; required when training with dropout > 0.
    pub dropout_rng: Option<&'a mut RngStream>,
    /// Run binary layers with the surrogate forward too (gradient
    /// verification only — never in real training or evaluation).
    pub soft_binary: bool,
}

impl<'a> ForwardCtx<'a> {
    pub fn training(alpha: f64, dropout_rng: &'a mut RngStream) -> Self {
        Self { training: true, alpha, dropout_rng: Some(dropout_rng), soft_binary: false }
    }

    pub fn inference() -> Self {
        // Alpha is irrelevant outside backward passes; keep the base slope.
        Self { training: false, alpha: 2.0, dropout_rng: None, soft_binary: false }
    }
}

/// A named dense network: validated layer stack with known end-to-end widths.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    prefix: String,
    input_width: usize,
    output_width: usize,
    layers: Vec<LayerSpec>,
}

impl Mlp {
    pub fn new(prefix: impl Into<String>, input_width: usize, layers: Vec<LayerSpec>) -> Result<Self> {
        let prefix = prefix.into();
        if input_width == 0 {
            return Err(Error::Config(format!("network `{prefix}` needs a positive input width")));
        }
        let output_width = Self::validate_chain(&prefix, input_width, &layers)?;
        Ok(Self { prefix, input_width, output_width, layers })
    }

    fn validate_chain(prefix: &str, input_width: usize, layers: &[LayerSpec]) -> Result<usize> {
        let mut width = input_width;
        for (i, layer) in layers.iter().enumerate() {
            match layer {
                LayerSpec::Dense { fan_in, fan_out } => {
                    if *fan_in == 0 || *fan_out == 0 {
                        return Err(Error::Config(format!(
                            "network `{prefix}` layer {i}: dense fan-in/fan-out must be >= 1"
                        )));
                    }
                    if *fan_in != width {
                        return Err(Error::Shape {
                            op: "Mlp::new",
                            details: format!(
                                "network `{prefix}` layer {i}: dense expects {fan_in} inputs, chain carries {width}"
                            ),
                        });
                    }
                    width = *fan_out;
                }
                LayerSpec::Activation(_) | LayerSpec::BatchNorm | LayerSpec::Binary => {}
                LayerSpec::Dropout { rate } => {
                    if !(0.0..1.0).contains(rate) {
                        return Err(Error::Config(format!(
                            "network `{prefix}` layer {i}: dropout rate {rate} outside [0, 1)"
                        )));
                    }
                }
                LayerSpec::Residual { inner } => {
                    let inner_out = Self::validate_chain(prefix, width, inner)?;
                    if inner_out != width {
                        return Err(Error::Shape {
                            op: "Mlp::new",
                            details: format!(
                                "network `{prefix}` layer {i}: residual block maps {width} -> {inner_out}, must preserve width"
                            ),
                        });
                    }
                }
            }
        }
        Ok(width)
    }

    pub fn prefix(&self) -> &str {
        &self.prefix
    }

    pub fn input_width(&self) -> usize {
        self.input_width
    }

    pub fn output_width(&self) -> usize {
        self.output_width
    }

    /// The standard hidden stack used throughout the pipeline: dense →
    /// batch norm → ReLU → dropout per hidden width, then a final dense
    /// projection with an optional output activation.
    pub fn standard(
        prefix: impl Into<String>,
        widths: &[usize],
        final_activation: Option<Activation>,
        dropout: f64,
    ) -> Result<Self> {
        let prefix = prefix.into();
        if widths.len() < 2 {
            return Err(Error::Config(format!(
                "network `{prefix}` needs at least input and output widths"
            )));
        }
        let mut layers = Vec::new();
        for w in 0..widths.len() - 1 {
            let last = w == widths.len() - 2;
            layers.push(LayerSpec::Dense { fan_in: widths[w], fan_out: widths[w + 1] });
            if !last {
                layers.push(LayerSpec::BatchNorm);
                layers.push(LayerSpec::Activation(Activation::Relu));
                if dropout > 0.0 {
                    layers.push(LayerSpec::Dropout { rate: dropout });
                }
            }
        }
        if let Some(act) = final_activation {
            layers.push(LayerSpec::Activation(act));
        }
        Mlp::new(prefix, widths[0], layers)
    }

    /// Registers all parameters and buffers. Dense weights draw from the
    /// uniform Glorot range ±√(6/(fan_in+fan_out)); biases start at zero;
    /// batch-norm scales at one, shifts at zero.
    pub fn init_params(&self, store: &mut ParameterStore, rng: &mut RngStream) -> Result<()> {
        self.init_chain(&self.prefix, self.input_width, &self.layers, store, rng)
    }

    fn init_chain(
        &self,
        prefix: &str,
        input_width: usize,
        layers: &[LayerSpec],
        store: &mut ParameterStore,
        rng: &mut RngStream,
    ) -> Result<()> {
        let mut width = input_width;
        let mut dense_idx = 0;
        let mut bn_idx = 0;
        let mut res_idx = 0;
        for layer in layers {
            match layer {
                LayerSpec::Dense { fan_in, fan_out } => {
                    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
                    let w: Vec<f64> =
                        (0..fan_in * fan_out).map(|_| rng.uniform(-bound, bound)).collect();
                    store.insert(&format!("{prefix}/d{dense_idx}/w"), *fan_in, *fan_out, w)?;
                    store.insert(
                        &format!("{prefix}/d{dense_idx}/b"),
                        1,
                        *fan_out,
                        vec![0.0; *fan_out],
                    )?;
                    dense_idx += 1;
                    width = *fan_out;
                }
                LayerSpec::BatchNorm => {
                    store.insert(&format!("{prefix}/bn{bn_idx}/gamma"), 1, width, vec![1.0; width])?;
                    store.insert(&format!("{prefix}/bn{bn_idx}/beta"), 1, width, vec![0.0; width])?;
                    store.insert_buffer(
                        &format!("{prefix}/bn{bn_idx}/mean"),
                        1,
                        width,
                        vec![0.0; width],
                    )?;
                    store.insert_buffer(
                        &format!("{prefix}/bn{bn_idx}/var"),
                        1,
                        width,
                        vec![1.0; width],
                    )?;
                    bn_idx += 1;
                }
                LayerSpec::Residual { inner } => {
                    self.init_chain(&format!("{prefix}/res{res_idx}"), width, inner, store, rng)?;
                    res_idx += 1;
                }
                LayerSpec::Activation(_) | LayerSpec::Dropout { .. } | LayerSpec::Binary => {}
            }
        }
        Ok(())
    }

    /// Lowers the network onto the tape. In training mode batch-norm layers
    /// use batch statistics and fold them into the store's running buffers;
    /// in inference mode they read the running buffers.
    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &mut ParameterStore,
        input: NodeId,
        ctx: &mut ForwardCtx,
    ) -> Result<NodeId> {
        let (_, w) = tape.dims(input);
        if w != self.input_width {
            return Err(Error::Shape {
                op: "Mlp::forward",
                details: format!(
                    "network `{}` expects {} features, input carries {w}",
                    self.prefix, self.input_width
                ),
            });
        }
        self.forward_chain(&self.prefix, &self.layers, tape, store, input, ctx)
    }

    fn forward_chain(
        &self,
        prefix: &str,
        layers: &[LayerSpec],
        tape: &mut Tape,
        store: &mut ParameterStore,
        input: NodeId,
        ctx: &mut ForwardCtx,
    ) -> Result<NodeId> {
        let mut x = input;
        let mut dense_idx = 0;
        let mut bn_idx = 0;
        let mut res_idx = 0;
        for layer in layers {
            x = match layer {
                LayerSpec::Dense { .. } => {
                    let w = tape.param(store, &format!("{prefix}/d{dense_idx}/w"))?;
                    let b = tape.param(store, &format!("{prefix}/d{dense_idx}/b"))?;
                    dense_idx += 1;
                    let xw = tape.matmul(x, w)?;
                    tape.add_row_broadcast(xw, b)?
                }
                LayerSpec::Activation(a) => match a {
                    Activation::Relu => tape.relu(x)?,
                    Activation::Sigmoid => tape.sigmoid_node(x)?,
                    Activation::Tanh => tape.tanh_node(x)?,
                },
                LayerSpec::BatchNorm => {
                    let gamma = tape.param(store, &format!("{prefix}/bn{bn_idx}/gamma"))?;
                    let beta = tape.param(store, &format!("{prefix}/bn{bn_idx}/beta"))?;
                    let mean_key = format!("{prefix}/bn{bn_idx}/mean");
                    let var_key = format!("{prefix}/bn{bn_idx}/var");
                    bn_idx += 1;
                    if ctx.training {
                        let (y, mean, var) = tape.batchnorm_train(x, gamma, beta)?;
                        fold_running(store, &mean_key, &mean)?;
                        fold_running(store, &var_key, &var)?;
                        y
                    } else {
                        let mean = store.buffer(&mean_key)?.value.clone();
                        let var = store.buffer(&var_key)?.value.clone();
                        tape.batchnorm_eval(x, gamma, beta, &mean, &var)?
                    }
                }
                LayerSpec::Dropout { rate } => {
                    if ctx.training && *rate > 0.0 {
                        let rng = ctx.dropout_rng.as_deref_mut().ok_or_else(|| {
                            Error::Config(format!(
                                "network `{}` has dropout but the context carries no stream",
                                self.prefix
                            ))
                        })?;
                        tape.dropout(x, *rate, rng)?
                    } else {
                        x
                    }
                }
                LayerSpec::Residual { inner } => {
                    let block_prefix = format!("{prefix}/res{res_idx}");
                    res_idx += 1;
                    let y = self.forward_chain(&block_prefix, inner, tape, store, x, ctx)?;
                    tape.add(x, y)?
                }
                LayerSpec::Binary => {
                    if ctx.soft_binary {
                        tape.soft_sign(x, ctx.alpha)?
                    } else {
                        tape.hard_sign(x, ctx.alpha)?
                    }
                }
            };
        }
        Ok(x)
    }
}

fn fold_running(store: &mut ParameterStore, key: &str, batch_stat: &[f64]) -> Result<()> {
    let buf = store.buffer_mut(key)?;
    for (r, &b) in buf.value.iter_mut().zip(batch_stat) {
        *r = BN_MOMENTUM * *r + (1.0 - BN_MOMENTUM) * b;
    }
    Ok(())
}
