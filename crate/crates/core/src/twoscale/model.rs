//! Model assembly: system dimensions, the long- and short-timescale network
//! bundles, parameter initialization, and checkpoint persistence.
//!
//! Parameter names are namespaced so whole subsystems can be frozen by
//! prefix: `lt/*` for the long-timescale model (including `lt/pilots/*` and
//! the per-pilot RF pairs under `lt/rf/*`), `st/*` for the short-timescale
//! model, and `demod` for the demodulator both timescales share.

use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::nngine::{
    load_checkpoint_with, register_pair, save_checkpoint_with, Activation, LayerSpec, Mlp,
    ParameterStore, SchedulePos,
};
use crate::numerics::{sample_cgauss, RngStream, StreamPurpose};
use crate::twoscale::phases::LongTermPhaseState;
use crate::{Error, Result};

/// Antenna, RF-chain, stream, and protocol dimensions that define one system.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SystemDims {
    /// Transmit antennas.
    pub n_t: usize,
    /// Receive antennas.
    pub n_r: usize,
    /// Transmit RF chains.
    pub n_t_rf: usize,
    /// Receive RF chains.
    pub n_r_rf: usize,
    /// Spatial streams.
    pub n_s: usize,
    /// Modulation order (4, 16, or 64).
    pub modulation: u32,
    /// Long-timescale pilot count.
    pub pilot_len: usize,
    /// Short-timescale pilot count (over the equivalent channel).
    pub eq_pilot_len: usize,
    /// Long-timescale feedback width in bits.
    pub bits_long: usize,
    /// Short-timescale feedback width in bits.
    pub bits_short: usize,
    /// Slots per frame: one long slot plus `slots_per_frame - 1` short slots.
    pub slots_per_frame: usize,
    /// How many recent channel estimates the analog networks see.
    pub window: usize,
}

impl SystemDims {
    /// Laptop-scale default: large enough to show every mechanism, small
    /// enough to train in minutes.
    pub fn desk() -> Self {
        Self {
            n_t: 16,
            n_r: 8,
            n_t_rf: 4,
            n_r_rf: 2,
            n_s: 2,
            modulation: 4,
            pilot_len: 12,
            eq_pilot_len: 4,
            bits_long: 32,
            bits_short: 8,
            slots_per_frame: 6,
            window: 3,
        }
    }

    /// Smallest system that still exercises every code path; used by fast
    /// tests and the end-to-end learning check.
    pub fn tiny() -> Self {
        Self {
            n_t: 8,
            n_r: 4,
            n_t_rf: 2,
            n_r_rf: 2,
            n_s: 2,
            modulation: 4,
            pilot_len: 8,
            eq_pilot_len: 2,
            bits_long: 24,
            bits_short: 8,
            slots_per_frame: 4,
            window: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("n_t", self.n_t),
            ("n_r", self.n_r),
            ("n_t_rf", self.n_t_rf),
            ("n_r_rf", self.n_r_rf),
            ("n_s", self.n_s),
            ("pilot_len", self.pilot_len),
            ("eq_pilot_len", self.eq_pilot_len),
            ("bits_long", self.bits_long),
            ("bits_short", self.bits_short),
            ("slots_per_frame", self.slots_per_frame),
            ("window", self.window),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("system dimension `{name}` must be positive")));
            }
        }
        if !(self.n_s <= self.n_t_rf && self.n_t_rf <= self.n_t) {
            return Err(Error::Config(format!(
                "need n_s <= n_t_rf <= n_t, got {} / {} / {}",
                self.n_s, self.n_t_rf, self.n_t
            )));
        }
        if !(self.n_s <= self.n_r_rf && self.n_r_rf <= self.n_r) {
            return Err(Error::Config(format!(
                "need n_s <= n_r_rf <= n_r, got {} / {} / {}",
                self.n_s, self.n_r_rf, self.n_r
            )));
        }
        if self.bits_short >= self.bits_long {
            return Err(Error::Config(format!(
                "short feedback must be cheaper than long: {} >= {}",
                self.bits_short, self.bits_long
            )));
        }
        self.bits_per_symbol()?;
        Ok(())
    }

    pub fn bits_per_symbol(&self) -> Result<usize> {
        match self.modulation {
            4 => Ok(2),
            16 => Ok(4),
            64 => Ok(6),
            other => Err(Error::Config(format!("unsupported modulation order {other}"))),
        }
    }

    /// Real features carried by the flattened long-pilot observation.
    pub fn pilot_feature_width(&self) -> usize {
        2 * self.n_r_rf * self.pilot_len
    }

    /// Real features of one full channel estimate.
    pub fn channel_feature_width(&self) -> usize {
        2 * self.n_r * self.n_t
    }

    /// Real features the analog networks consume: the stacked window.
    pub fn window_feature_width(&self) -> usize {
        self.window * self.channel_feature_width()
    }

    /// Real features of one equivalent-channel estimate.
    pub fn eq_feature_width(&self) -> usize {
        2 * self.n_r_rf * self.n_t_rf
    }

    /// Real features carried by the flattened short-pilot observation.
    pub fn eq_pilot_feature_width(&self) -> usize {
        2 * self.n_r_rf * self.eq_pilot_len
    }

    pub fn demod_output_width(&self) -> Result<usize> {
        Ok(self.n_s * self.bits_per_symbol()?)
    }

    pub fn precoder_phase_count(&self) -> usize {
        self.n_t * self.n_t_rf
    }

    pub fn combiner_phase_count(&self) -> usize {
        self.n_r * self.n_r_rf
    }
}

/// How the long-timescale feedback head emits its code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeedbackMode {
    /// Straight-through binary code of `bits_long` entries in {-1, +1}.
    Sign,
    /// Soft code of `neurons` tanh activations, quantized separately by a
    /// scalar codebook per neuron (the two-step training scheme).
    Tanh { neurons: usize },
}

impl FeedbackMode {
    /// Width of the code the feedback head produces.
    pub fn code_width(&self, dims: &SystemDims) -> usize {
        match self {
            FeedbackMode::Sign => dims.bits_long,
            FeedbackMode::Tanh { neurons } => *neurons,
        }
    }
}

/// Everything that defines a pipeline besides its learned parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub dims: SystemDims,
    pub feedback: FeedbackMode,
    /// Dropout rate on hidden layers.
    pub dropout: f64,
    /// Total transmit power budget for the data stage.
    pub p_t: f64,
    /// Per-pilot transmit power budget.
    pub pilot_power: f64,
}

impl ModelConfig {
    pub fn new(dims: SystemDims) -> Self {
        Self {
            dims,
            feedback: FeedbackMode::Sign,
            dropout: 0.1,
            p_t: crate::phy::DEFAULT_POWER,
            pilot_power: crate::phy::DEFAULT_POWER,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.dims.validate()?;
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout rate {} outside [0, 1)", self.dropout)));
        }
        if !(self.p_t > 0.0) || !(self.pilot_power > 0.0) {
            return Err(Error::Config("power budgets must be positive".into()));
        }
        if let FeedbackMode::Tanh { neurons } = self.feedback {
            if neurons == 0 {
                return Err(Error::Config("tanh feedback needs at least one neuron".into()));
            }
        }
        Ok(())
    }

    fn to_extras(&self) -> Vec<(String, String)> {
        let d = &self.dims;
        let feedback = match self.feedback {
            FeedbackMode::Sign => "sign".to_string(),
            FeedbackMode::Tanh { neurons } => format!("tanh:{neurons}"),
        };
        vec![
            ("n_t".into(), d.n_t.to_string()),
            ("n_r".into(), d.n_r.to_string()),
            ("n_t_rf".into(), d.n_t_rf.to_string()),
            ("n_r_rf".into(), d.n_r_rf.to_string()),
            ("n_s".into(), d.n_s.to_string()),
            ("modulation".into(), d.modulation.to_string()),
            ("pilot_len".into(), d.pilot_len.to_string()),
            ("eq_pilot_len".into(), d.eq_pilot_len.to_string()),
            ("bits_long".into(), d.bits_long.to_string()),
            ("bits_short".into(), d.bits_short.to_string()),
            ("slots_per_frame".into(), d.slots_per_frame.to_string()),
            ("window".into(), d.window.to_string()),
            ("feedback".into(), feedback),
            ("dropout".into(), self.dropout.to_string()),
            ("p_t".into(), self.p_t.to_string()),
            ("pilot_power".into(), self.pilot_power.to_string()),
        ]
    }

    fn from_extras(extras: &[(String, String)]) -> Result<Self> {
        let find = |key: &str| -> Result<&str> {
            extras
                .iter()
                .find(|(k, _)| k == key)
                .map(|(_, v)| v.as_str())
                .ok_or_else(|| Error::Integrity(format!("checkpoint lacks model field `{key}`")))
        };
        let usize_of = |key: &str| -> Result<usize> {
            find(key)?
                .parse()
                .map_err(|_| Error::Integrity(format!("checkpoint field `{key}` is not an integer")))
        };
        let f64_of = |key: &str| -> Result<f64> {
            find(key)?
                .parse()
                .map_err(|_| Error::Integrity(format!("checkpoint field `{key}` is not a number")))
        };
        let feedback = match find("feedback")? {
            "sign" => FeedbackMode::Sign,
            other => match other.strip_prefix("tanh:").and_then(|n| n.parse().ok()) {
                Some(neurons) => FeedbackMode::Tanh { neurons },
                None => {
                    return Err(Error::Integrity(format!(
                        "checkpoint feedback mode `{other}` is not recognized"
                    )))
                }
            },
        };
        let cfg = Self {
            dims: SystemDims {
                n_t: usize_of("n_t")?,
                n_r: usize_of("n_r")?,
                n_t_rf: usize_of("n_t_rf")?,
                n_r_rf: usize_of("n_r_rf")?,
                n_s: usize_of("n_s")?,
                modulation: usize_of("modulation")? as u32,
                pilot_len: usize_of("pilot_len")?,
                eq_pilot_len: usize_of("eq_pilot_len")?,
                bits_long: usize_of("bits_long")?,
                bits_short: usize_of("bits_short")?,
                slots_per_frame: usize_of("slots_per_frame")?,
                window: usize_of("window")?,
            },
            feedback,
            dropout: f64_of("dropout")?,
            p_t: f64_of("p_t")?,
            pilot_power: f64_of("pilot_power")?,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Networks refreshed on the slow timescale: pilot training, wide-band
/// feedback, channel recovery, and both analog phase heads, plus the digital
/// pair driven by the recovered channel.
#[derive(Debug, Clone)]
pub struct LongTermModel {
    pub feedback: Mlp,
    pub recovery: Mlp,
    pub analog_precoder: Mlp,
    pub analog_combiner: Mlp,
    pub digital_precoder: Mlp,
    pub digital_combiner: Mlp,
}

/// Networks refreshed every slot: equivalent-channel feedback, recovery, and
/// the digital pair. Analog beams are inherited from the long timescale.
#[derive(Debug, Clone)]
pub struct ShortTermModel {
    pub feedback: Mlp,
    pub recovery: Mlp,
    pub digital_precoder: Mlp,
    pub digital_combiner: Mlp,
}

/// Name of the shared complex parameter holding the long digital pilots
/// (`n_t_rf x pilot_len`).
pub const LONG_PILOTS: &str = "lt/pilots/sym";
/// Name of the shared complex parameter holding the short digital pilots
/// (`n_t_rf x eq_pilot_len`).
pub const SHORT_PILOTS: &str = "st/pilots/sym";

/// Per-pilot RF precoder parameter name (raw, pre-normalization).
pub fn pilot_rf_precoder_name(l: usize) -> String {
    format!("lt/rf/f{l:02}")
}

/// Per-pilot RF combiner parameter name (raw, pre-normalization).
pub fn pilot_rf_combiner_name(l: usize) -> String {
    format!("lt/rf/w{l:02}")
}

/// The full two-timescale system: config, both models, the shared
/// demodulator, and one parameter store backing them all.
#[derive(Debug, Clone)]
pub struct Pipeline {
    cfg: ModelConfig,
    pub long: LongTermModel,
    pub short: ShortTermModel,
    pub demod: Mlp,
    pub store: ParameterStore,
}

/// Hidden blocks `dense -> batch norm -> relu -> dropout` over the width
/// list, a final dense projection, then whatever tail layers the head needs.
fn stack(widths: &[usize], dropout: f64, tail: Vec<LayerSpec>) -> Vec<LayerSpec> {
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
    layers.extend(tail);
    layers
}

fn build_networks(cfg: &ModelConfig) -> Result<(LongTermModel, ShortTermModel, Mlp)> {
    let d = &cfg.dims;
    let drop = cfg.dropout;
    let code_width = cfg.feedback.code_width(d);
    let pilot_feat = d.pilot_feature_width();
    let h_feat = d.channel_feature_width();
    let win_feat = d.window_feature_width();
    let eq_feat = d.eq_feature_width();
    let eq_pilot_feat = d.eq_pilot_feature_width();
    let demod_out = d.demod_output_width()?;

    // The binary head normalizes its logits before the sign so the surrogate
    // gradient stays in its responsive range; the tanh head is already
    // bounded and feeds a scalar quantizer, so it stays plain.
    let feedback_tail = match cfg.feedback {
        FeedbackMode::Sign => vec![LayerSpec::BatchNorm, LayerSpec::Binary],
        FeedbackMode::Tanh { .. } => vec![LayerSpec::Activation(Activation::Tanh)],
    };

    let long = LongTermModel {
        feedback: Mlp::new(
            "lt/fb",
            pilot_feat,
            stack(&[pilot_feat, 256, 128, h_feat, 128, code_width], drop, feedback_tail),
        )?,
        recovery: Mlp::new(
            "lt/rec",
            code_width,
            stack(&[code_width, 256, 128, h_feat], drop, vec![]),
        )?,
        analog_precoder: Mlp::new(
            "lt/ap",
            win_feat,
            stack(&[win_feat, 256, 128, d.precoder_phase_count()], drop, vec![]),
        )?,
        analog_combiner: Mlp::new(
            "lt/ac",
            win_feat,
            stack(&[win_feat, 256, 128, d.combiner_phase_count()], drop, vec![]),
        )?,
        digital_precoder: Mlp::new(
            "lt/dp",
            eq_feat,
            stack(&[eq_feat, 64, 32, 2 * d.n_t_rf * d.n_s], drop, vec![]),
        )?,
        digital_combiner: Mlp::new(
            "lt/dc",
            eq_feat,
            stack(&[eq_feat, 64, 32, 2 * d.n_r_rf * d.n_s], drop, vec![]),
        )?,
    };

    let short = ShortTermModel {
        feedback: Mlp::new(
            "st/fb",
            eq_pilot_feat,
            stack(
                &[eq_pilot_feat, 128, 64, d.bits_short],
                drop,
                vec![LayerSpec::BatchNorm, LayerSpec::Binary],
            ),
        )?,
        recovery: Mlp::new(
            "st/rec",
            d.bits_short,
            stack(&[d.bits_short, 128, 64, eq_feat], drop, vec![]),
        )?,
        digital_precoder: Mlp::new(
            "st/dp",
            eq_feat,
            stack(&[eq_feat, 64, 32, 2 * d.n_t_rf * d.n_s], drop, vec![]),
        )?,
        digital_combiner: Mlp::new(
            "st/dc",
            eq_feat,
            stack(&[eq_feat, 64, 32, 2 * d.n_r_rf * d.n_s], drop, vec![]),
        )?,
    };

    let demod = Mlp::new("demod", 2 * d.n_s, stack(&[2 * d.n_s, 64, 32, demod_out], drop, vec![]))?;

    Ok((long, short, demod))
}

impl Pipeline {
    /// Builds the networks and initializes every parameter from the seed's
    /// dedicated initialization stream.
    pub fn new(cfg: ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let (long, short, demod) = build_networks(&cfg)?;
        let mut store = ParameterStore::new();
        let mut rng = RngStream::for_purpose(seed, StreamPurpose::ParamInit, 0);

        long.feedback.init_params(&mut store, &mut rng)?;
        long.recovery.init_params(&mut store, &mut rng)?;
        long.analog_precoder.init_params(&mut store, &mut rng)?;
        long.analog_combiner.init_params(&mut store, &mut rng)?;
        long.digital_precoder.init_params(&mut store, &mut rng)?;
        long.digital_combiner.init_params(&mut store, &mut rng)?;
        short.feedback.init_params(&mut store, &mut rng)?;
        short.recovery.init_params(&mut store, &mut rng)?;
        short.digital_precoder.init_params(&mut store, &mut rng)?;
        short.digital_combiner.init_params(&mut store, &mut rng)?;
        demod.init_params(&mut store, &mut rng)?;

        let d = &cfg.dims;
        let long_pilots = sample_cgauss(d.n_t_rf, d.pilot_len, 1.0, &mut rng)?;
        register_pair(&mut store, LONG_PILOTS, d.n_t_rf, d.pilot_len, long_pilots.data())?;
        let short_pilots = sample_cgauss(d.n_t_rf, d.eq_pilot_len, 1.0, &mut rng)?;
        register_pair(&mut store, SHORT_PILOTS, d.n_t_rf, d.eq_pilot_len, short_pilots.data())?;
        for l in 0..d.pilot_len {
            let f = unit_circle(d.n_t * d.n_t_rf, &mut rng);
            register_pair(&mut store, &pilot_rf_precoder_name(l), d.n_t, d.n_t_rf, &f)?;
            let w = unit_circle(d.n_r * d.n_r_rf, &mut rng);
            register_pair(&mut store, &pilot_rf_combiner_name(l), d.n_r, d.n_r_rf, &w)?;
        }

        Ok(Self { cfg, long, short, demod, store })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn dims(&self) -> &SystemDims {
        &self.cfg.dims
    }

    /// Re-initializes any constant-modulus raw parameter that drifted into
    /// the degenerate near-zero region. Returns how many entries were reset.
    pub fn guard_rf_parameters(&mut self, rng: &mut RngStream) -> Result<usize> {
        let mut reset = 0;
        for l in 0..self.cfg.dims.pilot_len {
            reset += crate::nngine::guard_unit_modulus(
                &mut self.store,
                &pilot_rf_precoder_name(l),
                rng,
            )?;
            reset += crate::nngine::guard_unit_modulus(
                &mut self.store,
                &pilot_rf_combiner_name(l),
                rng,
            )?;
        }
        Ok(reset)
    }

    /// Persists parameters, optimizer state, and the model configuration.
    pub fn save(&self, path: &Path, pos: SchedulePos) -> Result<()> {
        self.save_with_state(path, pos, None)
    }

    /// Like [`Pipeline::save`], additionally carrying the deployed
    /// moving-average phase state so an evaluation can resume mid-run.
    /// Phases are stored as raw IEEE-754 bits, so the round trip is exact.
    pub fn save_with_state(
        &self,
        path: &Path,
        pos: SchedulePos,
        state: Option<&LongTermPhaseState>,
    ) -> Result<()> {
        let mut extras = self.cfg.to_extras();
        if let Some(state) = state {
            let d = &self.cfg.dims;
            if state.precoder_phases().len() != d.precoder_phase_count()
                || state.combiner_phases().len() != d.combiner_phase_count()
            {
                return Err(Error::Shape {
                    op: "Pipeline::save_with_state",
                    details: format!(
                        "phase state ({}, {}) does not match the model ({}, {})",
                        state.precoder_phases().len(),
                        state.combiner_phases().len(),
                        d.precoder_phase_count(),
                        d.combiner_phase_count()
                    ),
                });
            }
            extras.push(("phase/precoder".into(), encode_bits(state.precoder_phases())));
            extras.push(("phase/combiner".into(), encode_bits(state.combiner_phases())));
            extras.push(("phase/frame".into(), state.frame().to_string()));
        }
        save_checkpoint_with(path, &self.store, pos, &extras)
    }

    /// Restores a pipeline saved by [`Pipeline::save`]: the configuration is
    /// read back from the checkpoint and the networks rebuilt around the
    /// stored parameters.
    pub fn load(path: &Path) -> Result<(Self, SchedulePos)> {
        let (pipeline, pos, _) = Self::load_with_state(path)?;
        Ok((pipeline, pos))
    }

    /// Full restore including the deployed phase state, when the checkpoint
    /// carries one.
    pub fn load_with_state(
        path: &Path,
    ) -> Result<(Self, SchedulePos, Option<LongTermPhaseState>)> {
        let (store, pos, extras) = load_checkpoint_with(path)?;
        let cfg = ModelConfig::from_extras(&extras)?;
        let (long, short, demod) = build_networks(&cfg)?;
        let state = decode_phase_state(&extras, &cfg.dims)?;
        let pipeline = Self { cfg, long, short, demod, store };
        pipeline.check_store_complete()?;
        Ok((pipeline, pos, state))
    }

    fn check_store_complete(&self) -> Result<()> {
        let probes = [
            "lt/fb/d0/w".to_string(),
            "lt/rec/d0/w".to_string(),
            "lt/ap/d0/w".to_string(),
            "st/fb/d0/w".to_string(),
            "demod/d0/w".to_string(),
            format!("{LONG_PILOTS}_re"),
            format!("{SHORT_PILOTS}_re"),
            format!("{}_re", pilot_rf_precoder_name(0)),
        ];
        for name in probes {
            if !self.store.contains(&name) {
                return Err(Error::Integrity(format!(
                    "checkpoint store lacks expected parameter `{name}`"
                )));
            }
        }
        Ok(())
    }
}

fn encode_bits(values: &[f64]) -> String {
    values
        .iter()
        .map(|v| format!("{:016x}", v.to_bits()))
        .collect::<Vec<_>>()
        .join(",")
}

fn decode_bits(text: &str) -> Result<Vec<f64>> {
    if text.is_empty() {
        return Ok(Vec::new());
    }
    text.split(',')
        .map(|tok| {
            u64::from_str_radix(tok, 16)
                .map(f64::from_bits)
                .map_err(|_| Error::Integrity(format!("checkpoint phase entry `{tok}` is not a hex float")))
        })
        .collect()
}

fn decode_phase_state(
    extras: &[(String, String)],
    dims: &SystemDims,
) -> Result<Option<LongTermPhaseState>> {
    let get = |key: &str| extras.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str());
    let (Some(prec), Some(comb), Some(frame)) =
        (get("phase/precoder"), get("phase/combiner"), get("phase/frame"))
    else {
        return Ok(None);
    };
    let phi_precoder = decode_bits(prec)?;
    let phi_combiner = decode_bits(comb)?;
    if phi_precoder.len() != dims.precoder_phase_count()
        || phi_combiner.len() != dims.combiner_phase_count()
    {
        return Err(Error::Integrity(format!(
            "checkpoint phase state ({}, {}) does not match the model ({}, {})",
            phi_precoder.len(),
            phi_combiner.len(),
            dims.precoder_phase_count(),
            dims.combiner_phase_count()
        )));
    }
    let frame = frame
        .parse()
        .map_err(|_| Error::Integrity("checkpoint phase frame is not an integer".into()))?;
    Ok(Some(LongTermPhaseState::from_parts(phi_precoder, phi_combiner, frame)))
}

fn unit_circle(n: usize, rng: &mut RngStream) -> Vec<Complex64> {
    (0..n)
        .map(|_| {
            let phase = rng.uniform(0.0, 2.0 * std::f64::consts::PI);
            Complex64::from_polar(1.0, phase)
        })
        .collect()
}

/// Checks that a dataset spec draws samples shaped for these dimensions.
pub(crate) fn check_spec_dims(d: &SystemDims, s: &crate::channel::DatasetSpec) -> Result<()> {
    let pairs = [
        ("n_t", s.n_t, d.n_t),
        ("n_r", s.n_r, d.n_r),
        ("n_streams", s.n_streams, d.n_s),
        ("modulation", s.modulation as usize, d.modulation as usize),
        ("pilot_len", s.pilot_len, d.pilot_len),
        ("eq_pilot_len", s.eq_pilot_len, d.eq_pilot_len),
    ];
    for (name, spec_v, model_v) in pairs {
        if spec_v != model_v {
            return Err(Error::Config(format!(
                "dataset spec disagrees with the model on `{name}`: {spec_v} vs {model_v}"
            )));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dimension_orderings_are_enforced() {
        let mut d = SystemDims::tiny();
        assert!(d.validate().is_ok());
        d.n_t_rf = d.n_t + 1;
        assert!(d.validate().is_err());

        let mut d = SystemDims::tiny();
        d.n_s = d.n_r_rf + 1;
        assert!(d.validate().is_err());

        let mut d = SystemDims::tiny();
        d.bits_short = d.bits_long;
        assert!(d.validate().is_err());

        let mut d = SystemDims::tiny();
        d.modulation = 8;
        assert!(d.validate().is_err());

        let mut d = SystemDims::tiny();
        d.window = 0;
        assert!(d.validate().is_err());
    }

    #[test]
    fn profiles_are_internally_consistent() {
        for dims in [SystemDims::tiny(), SystemDims::desk()] {
            dims.validate().unwrap();
            assert_eq!(dims.pilot_feature_width(), 2 * dims.n_r_rf * dims.pilot_len);
            assert_eq!(dims.window_feature_width(), dims.window * 2 * dims.n_r * dims.n_t);
        }
    }

    #[test]
    fn pipeline_registers_every_subsystem() {
        let cfg = ModelConfig::new(SystemDims::tiny());
        let p = Pipeline::new(cfg, 7).unwrap();
        for prefix in ["lt/fb", "lt/rec", "lt/ap", "lt/ac", "lt/dp", "lt/dc", "st/fb", "st/rec", "st/dp", "st/dc", "demod"] {
            assert!(
                p.store.contains(&format!("{prefix}/d0/w")),
                "missing first dense layer under `{prefix}`"
            );
        }
        assert!(p.store.contains(&format!("{LONG_PILOTS}_re")));
        assert!(p.store.contains(&format!("{SHORT_PILOTS}_re")));
        for l in 0..p.dims().pilot_len {
            assert!(p.store.contains(&format!("{}_im", pilot_rf_precoder_name(l))));
            assert!(p.store.contains(&format!("{}_im", pilot_rf_combiner_name(l))));
        }
        // RF raw parameters start exactly on the unit circle.
        let re = &p.store.get(&format!("{}_re", pilot_rf_precoder_name(0))).unwrap().value;
        let im = &p.store.get(&format!("{}_im", pilot_rf_precoder_name(0))).unwrap().value;
        for (a, b) in re.iter().zip(im) {
            assert!((a * a + b * b - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn same_seed_same_parameters_different_seed_different() {
        let cfg = ModelConfig::new(SystemDims::tiny());
        let a = Pipeline::new(cfg.clone(), 11).unwrap();
        let b = Pipeline::new(cfg.clone(), 11).unwrap();
        let c = Pipeline::new(cfg, 12).unwrap();
        let va = &a.store.get("lt/fb/d0/w").unwrap().value;
        let vb = &b.store.get("lt/fb/d0/w").unwrap().value;
        let vc = &c.store.get("lt/fb/d0/w").unwrap().value;
        assert_eq!(va, vb);
        assert_ne!(va, vc);
    }

    #[test]
    fn checkpoint_round_trip_restores_config_and_values() {
        let dir = std::env::temp_dir().join(format!("beamlink-pipe-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("pipe.blc");

        let mut cfg = ModelConfig::new(SystemDims::tiny());
        cfg.feedback = FeedbackMode::Tanh { neurons: 6 };
        cfg.dropout = 0.05;
        let p = Pipeline::new(cfg.clone(), 3).unwrap();
        p.save(&path, SchedulePos { epoch: 4, batch: 2 }).unwrap();

        let (q, pos) = Pipeline::load(&path).unwrap();
        assert_eq!(q.config(), &cfg);
        assert_eq!(pos, SchedulePos { epoch: 4, batch: 2 });
        for (name, entry) in p.store.entries() {
            assert_eq!(entry.value, q.store.get(name).unwrap().value, "mismatch in `{name}`");
        }
        std::fs::remove_file(&path).ok();
    }

    #[test]
    fn phase_state_round_trips_bit_exactly() {
        let dir = std::env::temp_dir().join(format!("beamlink-phase-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("with-state.blc");

        let cfg = ModelConfig::new(SystemDims::tiny());
        let d = cfg.dims;
        let p = Pipeline::new(cfg, 7).unwrap();
        let mut state =
            LongTermPhaseState::new(d.precoder_phase_count(), d.combiner_phase_count());
        let prec: Vec<f64> = (0..d.precoder_phase_count())
            .map(|i| (i as f64 * 0.37).sin() * 3.0)
            .collect();
        let comb: Vec<f64> = (0..d.combiner_phase_count())
            .map(|i| -(i as f64 * 0.11).cos() * 2.0)
            .collect();
        state.update(&prec, &comb).unwrap();
        let prec2: Vec<f64> = prec.iter().map(|v| v * 0.5 + 0.1).collect();
        let comb2: Vec<f64> = comb.iter().map(|v| v * -0.25).collect();
        state.update(&prec2, &comb2).unwrap();

        p.save_with_state(&path, SchedulePos { epoch: 1, batch: 0 }, Some(&state)).unwrap();
        let (_, _, restored) = Pipeline::load_with_state(&path).unwrap();
        let restored = restored.expect("state should be present");
        assert_eq!(restored.precoder_phases(), state.precoder_phases());
        assert_eq!(restored.combiner_phases(), state.combiner_phases());
        assert_eq!(restored.frame(), state.frame());

        // A checkpoint saved without state restores to no state.
        let bare = dir.join("no-state.blc");
        p.save(&bare, SchedulePos { epoch: 0, batch: 0 }).unwrap();
        let (_, _, none) = Pipeline::load_with_state(&bare).unwrap();
        assert!(none.is_none());

        // Mismatched lengths are rejected at save time.
        let wrong = LongTermPhaseState::new(3, 2);
        assert!(p.save_with_state(&path, SchedulePos { epoch: 0, batch: 0 }, Some(&wrong)).is_err());

        std::fs::remove_file(&path).ok();
        std::fs::remove_file(&bare).ok();
    }

    #[test]
    fn tanh_mode_widens_recovery_input() {
        let mut cfg = ModelConfig::new(SystemDims::tiny());
        cfg.feedback = FeedbackMode::Tanh { neurons: 5 };
        let p = Pipeline::new(cfg, 1).unwrap();
        assert_eq!(p.long.recovery.input_width(), 5);
        assert_eq!(p.long.feedback.output_width(), 5);
    }
}
