//! Differentiable forward passes for both timescales.
//!
//! Everything the receiver cannot see stays a constant (true channels,
//! noise); everything learned lives on the tape. The chains mirror the
//! reference implementations in [`phy`] operation for operation, which the
//! tests pin down by running both on the same inputs.
//!
//! Long timescale, per batch:
//!
//! ```text
//! pilots (trained, per-pilot RF pairs) ──▶ feedback ──▶ code (sign/tanh)
//! code ──▶ recovery ──▶ Ĥ ──▶ window ──▶ analog phase heads ──▶ F_RF, W_RF
//! Ŵ_RF^H Ĥ F̂_RF ──▶ digital heads ──▶ F_BB (power-normalized), W_BB
//! true H ──▶ data hop ──▶ shared demodulator ──▶ bit logits
//! ```
//!
//! Short timescale: the analog pair is inherited as a constant, pilots probe
//! the equivalent channel directly, and only the compact feedback/recovery/
//! digital heads run. Reduced-front-end deployment (`active_rf`) works by
//! selecting leading RF chains and zero-padding observations back to the
//! trained widths, so the same networks serve narrower hardware.

use num_complex::Complex64;

use crate::channel::DatasetSample;
use crate::nngine::complex::{self as cgraph, CNode};
use crate::nngine::{ForwardCtx, NodeId, Tape};
use crate::numerics::ComplexMatrix;
use crate::phy::{self, PayloadBits, PrecoderSet, SoftBits};
use crate::twoscale::model::{
    pilot_rf_combiner_name, pilot_rf_precoder_name, Pipeline, SystemDims, LONG_PILOTS,
    SHORT_PILOTS,
};
use crate::twoscale::phases::{phases_to_analog, quantize_phases, LongTermPhaseState};
use crate::twoscale::window::SlidingWindow;
use crate::{Error, Result};

/// Keeps power normalizations finite if a product collapses to zero; the
/// relative error it introduces (~1e-30/norm²) is far below every tolerance.
const NORM_EPS: f64 = 1e-30;

/// A detached matrix of per-sample feature rows — what the sliding window
/// stores between steps.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureBlock {
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f64>,
}

impl FeatureBlock {
    pub fn read(tape: &Tape, node: NodeId) -> Self {
        let (rows, cols) = tape.dims(node);
        Self { rows, cols, values: tape.value(node).to_vec() }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.cols..(i + 1) * self.cols]
    }
}

/// Deployment with fewer RF chains than the model was trained for: the
/// leading `tx`/`rx` chains stay wired, the rest are absent and their
/// observations zero-padded.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ActiveRf {
    pub tx: usize,
    pub rx: usize,
}

/// Where the long-timescale code comes from: the feedback network, or fixed
/// per-sample rows (the quantized-code retraining stage).
#[derive(Debug, Clone, Copy)]
pub enum CodeSource<'a> {
    Network,
    Fixed(&'a [Vec<f64>]),
}

/// Per-call deployment knobs. The default is the plain trained system.
#[derive(Debug, Clone, Copy)]
pub struct ForwardOpts<'a> {
    pub codes: CodeSource<'a>,
    /// Transmit only the first `n` long pilots; the feedback network sees the
    /// missing columns as zeros. Ignored by the short path.
    pub active_pilots: Option<usize>,
    /// Deploy on a reduced RF front end.
    pub active_rf: Option<ActiveRf>,
    /// Finite phase-shifter resolution in bits (0 = continuous). Evaluation
    /// only: quantization has no gradient.
    pub rf_phase_bits: u32,
}

impl Default for ForwardOpts<'static> {
    fn default() -> Self {
        Self { codes: CodeSource::Network, active_pilots: None, active_rf: None, rf_phase_bits: 0 }
    }
}

/// Inputs to one long-timescale step: per-sample channels (pilot hop and
/// data hop may differ under feedback delay), antenna-domain pilot noise,
/// data noise, and payload bits.
#[derive(Debug, Clone)]
pub struct LongBatch {
    pub channels: Vec<ComplexMatrix>,
    pub data_channels: Vec<ComplexMatrix>,
    pub pilot_noise: Vec<ComplexMatrix>,
    pub data_noise: Vec<ComplexMatrix>,
    pub payloads: Vec<PayloadBits>,
}

impl LongBatch {
    pub fn from_samples(samples: &[DatasetSample]) -> Self {
        Self {
            channels: samples.iter().map(|s| s.channel.h.clone()).collect(),
            data_channels: samples.iter().map(|s| s.channel.actual().clone()).collect(),
            pilot_noise: samples.iter().map(|s| s.pilot_noise.clone()).collect(),
            data_noise: samples.iter().map(|s| s.data_noise.clone()).collect(),
            payloads: samples.iter().map(|s| s.payload.clone()).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.channels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.channels.is_empty()
    }

    fn validate(&self, d: &SystemDims) -> Result<()> {
        let n = self.channels.len();
        if n == 0 {
            return Err(Error::Shape { op: "long_forward", details: "empty batch".into() });
        }
        if [self.data_channels.len(), self.pilot_noise.len(), self.data_noise.len(), self.payloads.len()]
            .iter()
            .any(|&len| len != n)
        {
            return Err(Error::Shape {
                op: "long_forward",
                details: "batch fields disagree on sample count".into(),
            });
        }
        for i in 0..n {
            check_dims("long batch channel", &self.channels[i], d.n_r, d.n_t)?;
            check_dims("long batch data channel", &self.data_channels[i], d.n_r, d.n_t)?;
            check_dims("long batch pilot noise", &self.pilot_noise[i], d.n_r, d.pilot_len)?;
            check_dims("long batch data noise", &self.data_noise[i], d.n_r, 1)?;
        }
        Ok(())
    }
}

/// Inputs to one short-timescale step. The channel is probed through the
/// given (full-size) analog pair; reduced deployments slice it per the
/// forward options.
#[derive(Debug, Clone)]
pub struct ShortBatch {
    pub channels: Vec<ComplexMatrix>,
    pub data_channels: Vec<ComplexMatrix>,
    pub eq_noise: Vec<ComplexMatrix>,
    pub data_noise: Vec<ComplexMatrix>,
    pub payloads: Vec<PayloadBits>,
    /// Deployed `(F_RF, W_RF)` per sample, full trained dimensions.
    pub analog: Vec<(ComplexMatrix, ComplexMatrix)>,
}

impl ShortBatch {
    pub fn from_samples(
        samples: &[DatasetSample],
        analog: Vec<(ComplexMatrix, ComplexMatrix)>,
    ) -> Self {
        Self {
            channels: samples.iter().map(|s| s.channel.h.clone()).collect(),
            data_channels: samples.iter().map(|s| s.channel.actual().clone()).collect(),
            eq_noise: samples.iter().map(|s| s.eq_pilot_noise.clone()).collect(),
            data_noise: samples.iter().map(|s| s.data_noise.clone()).collect(),
            payloads: samples.iter().map(|s| s.payload.clone()).collect(),
            analog,
        }
    }

    pub fn len(&self) -> usize {
        self.channels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.channels.is_empty()
    }

    fn validate(&self, d: &SystemDims) -> Result<()> {
        let n = self.channels.len();
        if n == 0 {
            return Err(Error::Shape { op: "short_forward", details: "empty batch".into() });
        }
        if [
            self.data_channels.len(),
            self.eq_noise.len(),
            self.data_noise.len(),
            self.payloads.len(),
            self.analog.len(),
        ]
        .iter()
        .any(|&len| len != n)
        {
            return Err(Error::Shape {
                op: "short_forward",
                details: "batch fields disagree on sample count".into(),
            });
        }
        for i in 0..n {
            check_dims("short batch channel", &self.channels[i], d.n_r, d.n_t)?;
            check_dims("short batch data channel", &self.data_channels[i], d.n_r, d.n_t)?;
            check_dims("short batch pilot noise", &self.eq_noise[i], d.n_r, d.eq_pilot_len)?;
            check_dims("short batch data noise", &self.data_noise[i], d.n_r, 1)?;
            check_dims("short batch analog precoder", &self.analog[i].0, d.n_t, d.n_t_rf)?;
            check_dims("short batch analog combiner", &self.analog[i].1, d.n_r, d.n_r_rf)?;
        }
        Ok(())
    }
}

fn check_dims(what: &str, m: &ComplexMatrix, rows: usize, cols: usize) -> Result<()> {
    if m.dims() != (rows, cols) {
        return Err(Error::Shape {
            op: "twoscale::forward",
            details: format!("{what} is {}x{}, expected {rows}x{cols}", m.rows(), m.cols()),
        });
    }
    Ok(())
}

/// The pilot configuration a long-timescale step actually transmitted, read
/// back as host matrices so the reference chain in [`phy`] can replay it.
#[derive(Debug, Clone)]
pub struct PilotArtifacts {
    /// Power-normalized digital pilots, `active_tx x active_pilots`.
    pub pilots: ComplexMatrix,
    /// Per-pilot RF precoders after modulus normalization, `n_t x active_tx`.
    pub rf_precoders: Vec<ComplexMatrix>,
    /// Per-pilot RF combiners, `n_r x active_rx`.
    pub rf_combiners: Vec<ComplexMatrix>,
}

/// Everything a long-timescale forward produces beyond the loss input.
pub struct LongForward {
    /// Demodulator logits, `batch x (n_s * log2 M)`.
    pub logits: NodeId,
    /// Per-sample feedback codes as plain values.
    pub codes: Vec<Vec<f64>>,
    /// Per-sample analog precoder phases (full width, pre-quantization).
    pub precoder_phases: Vec<Vec<f64>>,
    /// Per-sample analog combiner phases.
    pub combiner_phases: Vec<Vec<f64>>,
    /// Materialized per-sample precoder sets (active dimensions).
    pub precoders: Vec<PrecoderSet>,
    /// Detached recovered-channel features, the window entry for this step.
    pub recovered: FeatureBlock,
    /// Flattened pilot observations (absent when codes were fixed).
    pub pilot_features: Option<FeatureBlock>,
    /// What the pilots physically were (absent when codes were fixed).
    pub pilot_artifacts: Option<PilotArtifacts>,
    /// Flattened post-combining data observations, `batch x 2 n_s`.
    pub demod_features: FeatureBlock,
    /// Averaging weight used when a deployed state absorbed this proposal.
    pub gamma: Option<f64>,
}

/// Short-timescale counterpart of [`LongForward`].
pub struct ShortForward {
    pub logits: NodeId,
    pub codes: Vec<Vec<f64>>,
    pub precoders: Vec<PrecoderSet>,
    /// Power-normalized equivalent-channel pilots, `active_tx x eq_pilot_len`.
    pub eq_pilots: ComplexMatrix,
    pub pilot_features: FeatureBlock,
    pub demod_features: FeatureBlock,
}

impl Pipeline {
    /// Runs the full long-timescale chain for one batch. Pushes this step's
    /// recovered channel into `window` (so the analog heads always see the
    /// freshest estimate last) and returns the graph heads plus materialized
    /// side products.
    ///
    /// With `deploy` given, the network's phase outputs are treated as a
    /// proposal: the moving-average state is updated with it and the data
    /// hop runs over the *deployed* analog beams from that state (quantized
    /// per `opts.rf_phase_bits`), exactly as a live frame boundary would.
    /// Deployment is evaluation-only and single-sample, since the state
    /// evolves one frame at a time.
    pub fn long_forward(
        &mut self,
        tape: &mut Tape,
        batch: &LongBatch,
        window: &mut SlidingWindow<FeatureBlock>,
        ctx: &mut ForwardCtx,
        opts: &ForwardOpts,
        deploy: Option<&mut LongTermPhaseState>,
    ) -> Result<LongForward> {
        let cfg = self.config().clone();
        let d = cfg.dims;
        batch.validate(&d)?;
        let n = batch.len();
        let (tx, rx) = resolve_active_rf(&d, opts)?;
        let l_active = opts.active_pilots.unwrap_or(d.pilot_len);
        if l_active == 0 || l_active > d.pilot_len {
            return Err(Error::Config(format!(
                "active pilot count {l_active} outside 1..={}",
                d.pilot_len
            )));
        }
        if opts.rf_phase_bits > 0 && ctx.training {
            return Err(Error::Config(
                "phase-shifter quantization is evaluation-only: it has no gradient".into(),
            ));
        }
        if deploy.is_some() {
            if ctx.training {
                return Err(Error::Config(
                    "deployed-state forward is evaluation-only: the moving average \
                     is not differentiated"
                        .into(),
                ));
            }
            if n != 1 {
                return Err(Error::Config(format!(
                    "deployment folds one frame at a time, got a batch of {n}"
                )));
            }
        }
        if window.capacity() != d.window {
            return Err(Error::Config(format!(
                "window capacity {} does not match model window {}",
                window.capacity(),
                d.window
            )));
        }

        // Stage 1: pilots -> feedback code.
        let code_width = cfg.feedback.code_width(&d);
        let (codes_node, pilot_features, pilot_artifacts) = match opts.codes {
            CodeSource::Network => {
                let (features, artifacts) =
                    self.long_pilot_features(tape, batch, l_active, tx, rx, cfg.pilot_power)?;
                let codes = self.long.feedback.forward(tape, &mut self.store, features, ctx)?;
                (codes, Some(FeatureBlock::read(tape, features)), Some(artifacts))
            }
            CodeSource::Fixed(rows) => {
                if rows.len() != n || rows.iter().any(|r| r.len() != code_width) {
                    return Err(Error::Shape {
                        op: "long_forward",
                        details: format!(
                            "fixed codes must be {n} rows of width {code_width}"
                        ),
                    });
                }
                let flat: Vec<f64> = rows.iter().flat_map(|r| r.iter().copied()).collect();
                (tape.input(n, code_width, flat)?, None, None)
            }
        };

        // Stage 2: code -> channel estimate -> window -> analog phases.
        let recovered_node = self.long.recovery.forward(tape, &mut self.store, codes_node, ctx)?;
        let recovered = FeatureBlock::read(tape, recovered_node);
        window.push(recovered.clone());
        let win_input = {
            let slots = window.stacked()?;
            for slot in &slots {
                if slot.rows != n || slot.cols != d.channel_feature_width() {
                    return Err(Error::Shape {
                        op: "long_forward",
                        details: format!(
                            "window entry is {}x{}, current batch is {}x{}; batch shape must stay fixed across a run",
                            slot.rows,
                            slot.cols,
                            n,
                            d.channel_feature_width()
                        ),
                    });
                }
            }
            if d.window == 1 {
                recovered_node
            } else {
                let mut parts = Vec::with_capacity(d.window);
                for slot in &slots[..d.window - 1] {
                    parts.push(tape.input(slot.rows, slot.cols, slot.values.clone())?);
                }
                parts.push(recovered_node);
                tape.concat_cols(&parts)?
            }
        };
        let phi_f_node = self.long.analog_precoder.forward(tape, &mut self.store, win_input, ctx)?;
        let phi_w_node = self.long.analog_combiner.forward(tape, &mut self.store, win_input, ctx)?;
        let precoder_phases = chunk_rows(tape.value(phi_f_node), n, d.precoder_phase_count());
        let combiner_phases = chunk_rows(tape.value(phi_w_node), n, d.combiner_phase_count());

        // Fold the proposal into the deployed state at a frame boundary. The
        // data hop then uses the state's beams, not the raw proposal.
        let mut gamma = None;
        let deployed = match deploy {
            Some(state) => {
                gamma = Some(state.update(&precoder_phases[0], &combiner_phases[0])?);
                let pf = quantize_phases(state.precoder_phases(), opts.rf_phase_bits);
                let pw = quantize_phases(state.combiner_phases(), opts.rf_phase_bits);
                Some((
                    phases_to_analog(&pf, d.n_t, d.n_t_rf)?,
                    phases_to_analog(&pw, d.n_r, d.n_r_rf)?,
                ))
            }
            None => None,
        };

        // Stage 3: per-sample analog pair and estimated equivalent channel.
        let f_scale = 1.0 / (d.n_t as f64).sqrt();
        let w_scale = 1.0 / (d.n_r as f64).sqrt();
        let mut analog = Vec::with_capacity(n);
        let mut heq_rows = Vec::with_capacity(n);
        for i in 0..n {
            let f_full = if let Some((f_mat, _)) = &deployed {
                cgraph::constant(tape, f_mat)?
            } else if opts.rf_phase_bits > 0 {
                let q = quantize_phases(&precoder_phases[i], opts.rf_phase_bits);
                cgraph::constant(tape, &phases_to_analog(&q, d.n_t, d.n_t_rf)?)?
            } else {
                let row = tape.slice_rows(phi_f_node, i, 1)?;
                let col_major = tape.reshape(row, d.n_t_rf, d.n_t)?;
                let mat = tape.transpose(col_major)?;
                cgraph::phases_to_cnode(tape, mat, f_scale)?
            };
            let w_full = if let Some((_, w_mat)) = &deployed {
                cgraph::constant(tape, w_mat)?
            } else if opts.rf_phase_bits > 0 {
                let q = quantize_phases(&combiner_phases[i], opts.rf_phase_bits);
                cgraph::constant(tape, &phases_to_analog(&q, d.n_r, d.n_r_rf)?)?
            } else {
                let row = tape.slice_rows(phi_w_node, i, 1)?;
                let col_major = tape.reshape(row, d.n_r_rf, d.n_r)?;
                let mat = tape.transpose(col_major)?;
                cgraph::phases_to_cnode(tape, mat, w_scale)?
            };
            let f_act = take_cols(tape, f_full, tx)?;
            let w_act = take_cols(tape, w_full, rx)?;

            let rec_row = tape.slice_rows(recovered_node, i, 1)?;
            let h_hat = cgraph::unflatten_features(tape, rec_row, d.n_r, d.n_t)?;
            let w_h = cgraph::chermitian(tape, w_act)?;
            let hf = cgraph::cmatmul(tape, h_hat, f_act)?;
            let heq = cgraph::cmatmul(tape, w_h, hf)?;
            let heq_cols = pad_cols(tape, heq, d.n_t_rf)?;
            let heq_full = pad_rows(tape, heq_cols, d.n_r_rf)?;
            heq_rows.push(cgraph::flatten_features(tape, heq_full)?);
            analog.push((f_act, w_act));
        }
        let heq_features = tape.concat_rows(&heq_rows)?;

        // Stage 4: digital heads, data hop, shared demodulator.
        let dp_out = self.long.digital_precoder.forward(tape, &mut self.store, heq_features, ctx)?;
        let dc_out = self.long.digital_combiner.forward(tape, &mut self.store, heq_features, ctx)?;
        let (demod_in, precoders) = assemble_data_hop(
            tape,
            &d,
            batch_payload_views(&batch.payloads, &batch.data_channels, &batch.data_noise),
            dp_out,
            dc_out,
            &analog,
            tx,
            rx,
            cfg.p_t,
        )?;
        let logits = self.demod.forward(tape, &mut self.store, demod_in, ctx)?;

        Ok(LongForward {
            logits,
            codes: chunk_rows(tape.value(codes_node), n, code_width),
            precoder_phases,
            combiner_phases,
            precoders,
            recovered,
            pilot_features,
            pilot_artifacts,
            demod_features: FeatureBlock::read(tape, demod_in),
            gamma,
        })
    }

    /// Runs the short-timescale chain: equivalent-channel pilots through the
    /// inherited analog pair, compact feedback/recovery, digital heads, data
    /// hop, shared demodulator.
    pub fn short_forward(
        &mut self,
        tape: &mut Tape,
        batch: &ShortBatch,
        ctx: &mut ForwardCtx,
        opts: &ForwardOpts,
    ) -> Result<ShortForward> {
        let cfg = self.config().clone();
        let d = cfg.dims;
        batch.validate(&d)?;
        let n = batch.len();
        let (tx, rx) = resolve_active_rf(&d, opts)?;
        if matches!(opts.codes, CodeSource::Fixed(_)) {
            return Err(Error::Config(
                "fixed feedback codes apply to the long timescale only".into(),
            ));
        }

        // Shared: power-normalized equivalent-channel pilots (active chains).
        let pilots_param = cgraph::param_pair(tape, &self.store, SHORT_PILOTS)?;
        let mut col_re = Vec::with_capacity(d.eq_pilot_len);
        let mut col_im = Vec::with_capacity(d.eq_pilot_len);
        for l in 0..d.eq_pilot_len {
            let e = basis_column(tape, d.eq_pilot_len, l)?;
            let col = cgraph::cmatmul(tape, pilots_param, e)?;
            let col_act = take_rows(tape, col, tx)?;
            let (xhat, _) = normalize_to_power(tape, col_act, cfg.pilot_power)?;
            col_re.push(xhat.re);
            col_im.push(xhat.im);
        }
        let eq_pilot_mat = CNode {
            re: tape.concat_cols(&col_re)?,
            im: tape.concat_cols(&col_im)?,
        };
        let eq_pilots = cgraph::read_value(tape, eq_pilot_mat)?;

        // Per sample: pilot observation through the inherited analog pair.
        let mut feature_rows = Vec::with_capacity(n);
        let mut analog_hosts = Vec::with_capacity(n);
        for i in 0..n {
            let f_act_host = take_cols_host(&batch.analog[i].0, tx);
            let w_act_host = take_cols_host(&batch.analog[i].1, rx);
            let h_eq = phy::equivalent_channel(&batch.channels[i], &f_act_host, &w_act_host)?;
            let n_eq = w_act_host.hermitian().matmul(&batch.eq_noise[i])?;
            let h_eq_c = cgraph::constant(tape, &h_eq)?;
            let n_eq_c = cgraph::constant(tape, &n_eq)?;
            let through = cgraph::cmatmul(tape, h_eq_c, eq_pilot_mat)?;
            let received = cgraph::cadd(tape, through, n_eq_c)?;
            let padded = pad_rows(tape, received, d.n_r_rf)?;
            feature_rows.push(cgraph::flatten_features(tape, padded)?);
            analog_hosts.push((f_act_host, w_act_host));
        }
        let features = tape.concat_rows(&feature_rows)?;
        let pilot_features = FeatureBlock::read(tape, features);

        // Compact heads. The recovery output is already the flattened
        // equivalent-channel estimate, exactly what the digital heads eat.
        let codes_node = self.short.feedback.forward(tape, &mut self.store, features, ctx)?;
        let rec = self.short.recovery.forward(tape, &mut self.store, codes_node, ctx)?;
        let dp_out = self.short.digital_precoder.forward(tape, &mut self.store, rec, ctx)?;
        let dc_out = self.short.digital_combiner.forward(tape, &mut self.store, rec, ctx)?;

        // Data hop with constant analog matrices.
        let mut analog_nodes = Vec::with_capacity(n);
        for (f_host, w_host) in &analog_hosts {
            let f = cgraph::constant(tape, f_host)?;
            let w = cgraph::constant(tape, w_host)?;
            analog_nodes.push((f, w));
        }
        let (demod_in, precoders) = assemble_data_hop(
            tape,
            &d,
            batch_payload_views(&batch.payloads, &batch.data_channels, &batch.data_noise),
            dp_out,
            dc_out,
            &analog_nodes,
            tx,
            rx,
            cfg.p_t,
        )?;
        let logits = self.demod.forward(tape, &mut self.store, demod_in, ctx)?;

        Ok(ShortForward {
            logits,
            codes: chunk_rows(tape.value(codes_node), n, d.bits_short),
            precoders,
            eq_pilots,
            pilot_features,
            demod_features: FeatureBlock::read(tape, demod_in),
        })
    }

    /// Long-timescale inference on a throwaway window copy, returning the
    /// full-size analog pair each sample would deploy. This is how short
    /// steps obtain their inherited beams without disturbing training state.
    pub fn long_analog_for(
        &mut self,
        batch: &LongBatch,
        window: &SlidingWindow<FeatureBlock>,
        rf_phase_bits: u32,
    ) -> Result<Vec<(ComplexMatrix, ComplexMatrix)>> {
        let d = *self.dims();
        let mut scratch = window.clone();
        let mut tape = Tape::new();
        let mut ctx = ForwardCtx::inference();
        let out =
            self.long_forward(&mut tape, batch, &mut scratch, &mut ctx, &ForwardOpts::default(), None)?;
        out.precoder_phases
            .iter()
            .zip(&out.combiner_phases)
            .map(|(pf, pw)| {
                let pf = quantize_phases(pf, rf_phase_bits);
                let pw = quantize_phases(pw, rf_phase_bits);
                Ok((
                    phases_to_analog(&pf, d.n_t, d.n_t_rf)?,
                    phases_to_analog(&pw, d.n_r, d.n_r_rf)?,
                ))
            })
            .collect()
    }

    /// Pilot transmission and reception for the long timescale: trained
    /// digital pilots through per-pilot RF pairs, received on the active
    /// chains and zero-padded back to the trained feature width.
    fn long_pilot_features(
        &mut self,
        tape: &mut Tape,
        batch: &LongBatch,
        l_active: usize,
        tx: usize,
        rx: usize,
        pilot_power: f64,
    ) -> Result<(NodeId, PilotArtifacts)> {
        let d = *self.dims();
        let n = batch.len();
        let pilots_param = cgraph::param_pair(tape, &self.store, LONG_PILOTS)?;
        let f_norm = 1.0 / (d.n_t as f64).sqrt();
        let w_norm = 1.0 / (d.n_r as f64).sqrt();

        let mut beams = Vec::with_capacity(l_active);
        let mut pilot_cols_host = Vec::with_capacity(l_active);
        let mut rf_precoders = Vec::with_capacity(l_active);
        let mut rf_combiners = Vec::with_capacity(l_active);
        for l in 0..l_active {
            let e = basis_column(tape, d.pilot_len, l)?;
            let x_l = cgraph::cmatmul(tape, pilots_param, e)?;
            let x_act = take_rows(tape, x_l, tx)?;
            let (x_hat, _) = normalize_to_power(tape, x_act, pilot_power)?;

            let f_raw = cgraph::param_pair(tape, &self.store, &pilot_rf_precoder_name(l))?;
            let f_unit = cgraph::unit_modulus(tape, f_raw)?;
            let f_mat = cgraph::cscale(tape, f_unit, f_norm)?;
            let f_act = take_cols(tape, f_mat, tx)?;
            let w_raw = cgraph::param_pair(tape, &self.store, &pilot_rf_combiner_name(l))?;
            let w_unit = cgraph::unit_modulus(tape, w_raw)?;
            let w_mat = cgraph::cscale(tape, w_unit, w_norm)?;
            let w_act = take_cols(tape, w_mat, rx)?;

            let t_l = cgraph::cmatmul(tape, f_act, x_hat)?;
            let g_l = cgraph::chermitian(tape, w_act)?;

            pilot_cols_host.push(cgraph::read_value(tape, x_hat)?.column(0));
            rf_precoders.push(cgraph::read_value(tape, f_act)?);
            rf_combiners.push(cgraph::read_value(tape, w_act)?);
            beams.push((t_l, g_l));
        }

        let mut rows = Vec::with_capacity(n);
        for i in 0..n {
            let h = cgraph::constant(tape, &batch.channels[i])?;
            let mut obs_re = Vec::with_capacity(d.pilot_len);
            let mut obs_im = Vec::with_capacity(d.pilot_len);
            for l in 0..d.pilot_len {
                let y = if l < l_active {
                    let (t_l, g_l) = beams[l];
                    let noise_col = ComplexMatrix::from_fn(d.n_r, 1, |r, _| {
                        batch.pilot_noise[i].at(r, l)
                    });
                    let n_c = cgraph::constant(tape, &noise_col)?;
                    let through = cgraph::cmatmul(tape, h, t_l)?;
                    let z = cgraph::cadd(tape, through, n_c)?;
                    let y_act = cgraph::cmatmul(tape, g_l, z)?;
                    pad_rows(tape, y_act, d.n_r_rf)?
                } else {
                    cgraph::constant(tape, &ComplexMatrix::zeros(d.n_r_rf, 1))?
                };
                obs_re.push(y.re);
                obs_im.push(y.im);
            }
            let y_all = CNode {
                re: tape.concat_cols(&obs_re)?,
                im: tape.concat_cols(&obs_im)?,
            };
            rows.push(cgraph::flatten_features(tape, y_all)?);
        }
        let features = tape.concat_rows(&rows)?;
        let artifacts = PilotArtifacts {
            pilots: ComplexMatrix::from_columns(&pilot_cols_host)?,
            rf_precoders,
            rf_combiners,
        };
        Ok((features, artifacts))
    }

}

/// Slices the digital heads per sample, normalizes the precoder to the power
/// budget against its analog partner, and runs the data hop over the true
/// channel. Returns the stacked demodulator input and the materialized
/// precoder sets.
#[allow(clippy::too_many_arguments)]
fn assemble_data_hop(
    tape: &mut Tape,
    d: &SystemDims,
    views: PayloadViews<'_>,
    dp_out: NodeId,
    dc_out: NodeId,
    analog: &[(CNode, CNode)],
    tx: usize,
    rx: usize,
    p_t: f64,
) -> Result<(NodeId, Vec<PrecoderSet>)> {
    let n = analog.len();
    let mut demod_rows = Vec::with_capacity(n);
    let mut precoders = Vec::with_capacity(n);
    for i in 0..n {
        let (f_act, w_act) = analog[i];
        let dp_row = tape.slice_rows(dp_out, i, 1)?;
        let f_bar_full = cgraph::unflatten_features(tape, dp_row, d.n_t_rf, d.n_s)?;
        let f_bar = take_rows(tape, f_bar_full, tx)?;
        let f_bb = normalize_hybrid_power(tape, f_act, f_bar, p_t)?;
        let dc_row = tape.slice_rows(dc_out, i, 1)?;
        let w_bb_full = cgraph::unflatten_features(tape, dc_row, d.n_r_rf, d.n_s)?;
        let w_bb = take_rows(tape, w_bb_full, rx)?;

        let symbols = phy::modulate(&views.payloads[i], d.modulation)?;
        let s_c = cgraph::constant(tape, &ComplexMatrix::new(d.n_s, 1, symbols)?)?;
        let h_c = cgraph::constant(tape, &views.data_channels[i])?;
        let n_c = cgraph::constant(tape, &views.data_noise[i])?;
        let tx_sym = cgraph::cmatmul(tape, f_bb, s_c)?;
        let x = cgraph::cmatmul(tape, f_act, tx_sym)?;
        let hx = cgraph::cmatmul(tape, h_c, x)?;
        let z = cgraph::cadd(tape, hx, n_c)?;
        let w_rf_h = cgraph::chermitian(tape, w_act)?;
        let w_bb_h = cgraph::chermitian(tape, w_bb)?;
        let after_rf = cgraph::cmatmul(tape, w_rf_h, z)?;
        let r = cgraph::cmatmul(tape, w_bb_h, after_rf)?;
        demod_rows.push(cgraph::flatten_features(tape, r)?);

        precoders.push(PrecoderSet {
            f_rf: cgraph::read_value(tape, f_act)?,
            f_bb: cgraph::read_value(tape, f_bb)?,
            w_rf: cgraph::read_value(tape, w_act)?,
            w_bb: cgraph::read_value(tape, w_bb)?,
        });
    }
    Ok((tape.concat_rows(&demod_rows)?, precoders))
}

struct PayloadViews<'a> {
    payloads: &'a [PayloadBits],
    data_channels: &'a [ComplexMatrix],
    data_noise: &'a [ComplexMatrix],
}

fn batch_payload_views<'a>(
    payloads: &'a [PayloadBits],
    data_channels: &'a [ComplexMatrix],
    data_noise: &'a [ComplexMatrix],
) -> PayloadViews<'a> {
    PayloadViews { payloads, data_channels, data_noise }
}

fn resolve_active_rf(d: &SystemDims, opts: &ForwardOpts) -> Result<(usize, usize)> {
    match opts.active_rf {
        None => Ok((d.n_t_rf, d.n_r_rf)),
        Some(ActiveRf { tx, rx }) => {
            if !(d.n_s <= tx && tx <= d.n_t_rf) || !(d.n_s <= rx && rx <= d.n_r_rf) {
                return Err(Error::Config(format!(
                    "active RF chains ({tx}, {rx}) must satisfy {} <= tx <= {} and {} <= rx <= {}",
                    d.n_s, d.n_t_rf, d.n_s, d.n_r_rf
                )));
            }
            Ok((tx, rx))
        }
    }
}

/// `[I; 0]`-style rectangular identity used for selecting and padding.
fn eye_rect(rows: usize, cols: usize) -> ComplexMatrix {
    ComplexMatrix::from_fn(rows, cols, |i, j| {
        if i == j {
            Complex64::new(1.0, 0.0)
        } else {
            Complex64::new(0.0, 0.0)
        }
    })
}

fn basis_column(tape: &mut Tape, len: usize, idx: usize) -> Result<CNode> {
    cgraph::constant(
        tape,
        &ComplexMatrix::from_fn(len, 1, |i, _| {
            if i == idx {
                Complex64::new(1.0, 0.0)
            } else {
                Complex64::new(0.0, 0.0)
            }
        }),
    )
}

/// Keeps the first `active` columns. Identity when already that wide.
fn take_cols(tape: &mut Tape, x: CNode, active: usize) -> Result<CNode> {
    let (_, c) = tape.dims(x.re);
    if active == c {
        return Ok(x);
    }
    let sel = cgraph::constant(tape, &eye_rect(c, active))?;
    cgraph::cmatmul(tape, x, sel)
}

/// Keeps the first `active` rows. Identity when already that tall.
fn take_rows(tape: &mut Tape, x: CNode, active: usize) -> Result<CNode> {
    let (r, _) = tape.dims(x.re);
    if active == r {
        return Ok(x);
    }
    let sel = cgraph::constant(tape, &eye_rect(active, r))?;
    cgraph::cmatmul(tape, sel, x)
}

/// Zero-pads to `full` rows. Identity when already that tall.
fn pad_rows(tape: &mut Tape, x: CNode, full: usize) -> Result<CNode> {
    let (r, _) = tape.dims(x.re);
    if full == r {
        return Ok(x);
    }
    let sel = cgraph::constant(tape, &eye_rect(full, r))?;
    cgraph::cmatmul(tape, sel, x)
}

/// Zero-pads to `full` columns. Identity when already that wide.
fn pad_cols(tape: &mut Tape, x: CNode, full: usize) -> Result<CNode> {
    let (_, c) = tape.dims(x.re);
    if full == c {
        return Ok(x);
    }
    let sel = cgraph::constant(tape, &eye_rect(c, full))?;
    cgraph::cmatmul(tape, x, sel)
}

fn take_cols_host(m: &ComplexMatrix, active: usize) -> ComplexMatrix {
    ComplexMatrix::from_fn(m.rows(), active, |i, j| m.at(i, j))
}

/// Scales a complex vector so its squared norm is exactly the power budget;
/// returns the scaled vector and the (1x1) scale node.
fn normalize_to_power(tape: &mut Tape, v: CNode, power: f64) -> Result<(CNode, NodeId)> {
    let n2 = cgraph::cfro_norm_sq(tape, v)?;
    let alpha = inv_sqrt_scaled(tape, n2, power.sqrt())?;
    Ok((cgraph::cscale_by_node(tape, v, alpha)?, alpha))
}

/// `F_BB = sqrt(p_t) * F̄ / ||F_RF F̄||_F`, all on the tape.
fn normalize_hybrid_power(tape: &mut Tape, f_rf: CNode, f_bar: CNode, p_t: f64) -> Result<CNode> {
    let product = cgraph::cmatmul(tape, f_rf, f_bar)?;
    let n2 = cgraph::cfro_norm_sq(tape, product)?;
    let alpha = inv_sqrt_scaled(tape, n2, p_t.sqrt())?;
    cgraph::cscale_by_node(tape, f_bar, alpha)
}

fn inv_sqrt_scaled(tape: &mut Tape, norm_sq: NodeId, scale: f64) -> Result<NodeId> {
    let guarded = tape.add_const(norm_sq, NORM_EPS)?;
    let root = tape.sqrt(guarded)?;
    let inv = tape.recip(root)?;
    tape.scale(inv, scale)
}

fn chunk_rows(values: &[f64], rows: usize, cols: usize) -> Vec<Vec<f64>> {
    (0..rows).map(|i| values[i * cols..(i + 1) * cols].to_vec()).collect()
}

/// Bit targets for the logits loss, one row per sample in payload order.
pub fn bce_targets(payloads: &[PayloadBits]) -> Vec<f64> {
    payloads
        .iter()
        .flat_map(|p| p.as_slice().iter().map(|&b| f64::from(b)))
        .collect()
}

/// Materializes per-sample soft bit probabilities from a logits node.
pub fn soft_bits_rows(
    tape: &Tape,
    logits: NodeId,
    n_streams: usize,
    bits_per_symbol: usize,
) -> Result<Vec<SoftBits>> {
    let (rows, cols) = tape.dims(logits);
    if cols != n_streams * bits_per_symbol {
        return Err(Error::Shape {
            op: "soft_bits_rows",
            details: format!("logits width {cols} != {n_streams} streams x {bits_per_symbol} bits"),
        });
    }
    let values = tape.value(logits);
    (0..rows)
        .map(|i| {
            let probs = values[i * cols..(i + 1) * cols]
                .iter()
                .map(|&z| crate::nngine::sigmoid(z))
                .collect();
            SoftBits::new(n_streams, bits_per_symbol, probs)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{DatasetGenerator, DatasetSpec};
    use crate::twoscale::model::{FeedbackMode, ModelConfig};
    use crate::twoscale::phases::extract_phases;

    fn tiny_spec(noise: f64) -> DatasetSpec {
        let d = SystemDims::tiny();
        DatasetSpec {
            n_t: d.n_t,
            n_r: d.n_r,
            n_clusters: 2,
            n_rays: 3,
            pilot_len: d.pilot_len,
            eq_pilot_len: d.eq_pilot_len,
            n_streams: d.n_s,
            modulation: d.modulation,
            noise_variance: noise,
            doppler: 0.0,
            delay: 0.0,
            angle_drift: 0.0,
        }
    }

    fn tiny_pipeline(seed: u64) -> Pipeline {
        Pipeline::new(ModelConfig::new(SystemDims::tiny()), seed).unwrap()
    }

    fn fresh_window(p: &Pipeline) -> SlidingWindow<FeatureBlock> {
        SlidingWindow::new(p.dims().window).unwrap()
    }

    #[test]
    fn untrained_long_forward_is_shaped_constrained_and_deterministic() {
        let spec = tiny_spec(0.1);
        let batch = LongBatch::from_samples(
            &DatasetGenerator::new(5, 0, spec).batch(4).unwrap(),
        );
        let run = |seed: u64| {
            let mut p = tiny_pipeline(seed);
            let mut w = fresh_window(&p);
            let mut tape = Tape::new();
            let mut ctx = ForwardCtx::inference();
            let out = p
                .long_forward(&mut tape, &batch, &mut w, &mut ctx, &ForwardOpts::default(), None)
                .unwrap();
            let logits = tape.value(out.logits).to_vec();
            (out, logits, p)
        };
        let (out, logits, p) = run(9);
        let d = *p.dims();
        assert_eq!(logits.len(), 4 * d.demod_output_width().unwrap());
        assert!(logits.iter().all(|v| v.is_finite()));
        assert_eq!(out.codes.len(), 4);
        for code in &out.codes {
            assert_eq!(code.len(), d.bits_long);
            assert!(code.iter().all(|&b| b == 1.0 || b == -1.0), "binary code must be hard");
        }
        for set in &out.precoders {
            set.validate(p.config().p_t).unwrap();
        }
        assert_eq!(out.recovered.rows, 4);
        assert_eq!(out.recovered.cols, d.channel_feature_width());

        let (_, logits_again, _) = run(9);
        assert_eq!(logits, logits_again, "same seed and inputs must reproduce bit-exactly");
        let (_, logits_other, _) = run(10);
        assert_ne!(logits, logits_other);
    }

    #[test]
    fn deployed_state_drives_the_data_hop() {
        let spec = tiny_spec(0.05);
        let mut gen = DatasetGenerator::new(23, 0, spec);
        let d = SystemDims::tiny();
        let mut p = tiny_pipeline(6);
        let mut w = fresh_window(&p);
        let mut state =
            LongTermPhaseState::new(d.precoder_phase_count(), d.combiner_phase_count());

        // Frame 1: gamma is 1, so the deployed beams equal the proposal.
        let batch = LongBatch::from_samples(&gen.batch(1).unwrap());
        let mut tape = Tape::new();
        let mut ctx = ForwardCtx::inference();
        let out = p
            .long_forward(&mut tape, &batch, &mut w, &mut ctx, &ForwardOpts::default(), Some(&mut state))
            .unwrap();
        assert_eq!(out.gamma, Some(1.0));
        assert_eq!(state.frame(), 1);
        let from_proposal = phases_to_analog(&out.precoder_phases[0], d.n_t, d.n_t_rf).unwrap();
        assert!(out.precoders[0].f_rf.max_abs_diff(&from_proposal).unwrap() < 1e-12);

        // Frame 2: the moving average blends, so the deployed beams differ
        // from the fresh proposal but match the state.
        let batch2 = LongBatch::from_samples(&gen.batch(1).unwrap());
        let mut tape2 = Tape::new();
        let out2 = p
            .long_forward(&mut tape2, &batch2, &mut w, &mut ctx, &ForwardOpts::default(), Some(&mut state))
            .unwrap();
        let g2 = out2.gamma.unwrap();
        assert!(g2 < 1.0 && g2 > 0.0);
        assert_eq!(state.frame(), 2);
        let from_state =
            phases_to_analog(state.precoder_phases(), d.n_t, d.n_t_rf).unwrap();
        assert!(out2.precoders[0].f_rf.max_abs_diff(&from_state).unwrap() < 1e-12);
        let fresh = phases_to_analog(&out2.precoder_phases[0], d.n_t, d.n_t_rf).unwrap();
        assert!(
            out2.precoders[0].f_rf.max_abs_diff(&fresh).unwrap() > 1e-6,
            "blended beams should not equal the raw proposal"
        );
        out2.precoders[0].validate(p.config().p_t).unwrap();

        // Deployment rejects batches and training graphs.
        let batch4 = LongBatch::from_samples(&gen.batch(2).unwrap());
        let mut tape3 = Tape::new();
        let mut w3 = fresh_window(&p);
        let err = p.long_forward(
            &mut tape3,
            &batch4,
            &mut w3,
            &mut ctx,
            &ForwardOpts::default(),
            Some(&mut state),
        );
        assert!(matches!(err, Err(Error::Config(_))), "got {err:?}", err = err.map(|_| ()));
        let mut rng = crate::numerics::RngStream::new(2, 2);
        let mut train_ctx = ForwardCtx::training(2.0, &mut rng);
        let mut tape4 = Tape::new();
        let mut w4 = fresh_window(&p);
        let err = p.long_forward(
            &mut tape4,
            &batch,
            &mut w4,
            &mut train_ctx,
            &ForwardOpts::default(),
            Some(&mut state),
        );
        assert!(matches!(err, Err(Error::Config(_))), "got {:?}", err.map(|_| ()));
    }

    #[test]
    fn long_graph_matches_reference_chain() {
        let spec = tiny_spec(0.2);
        let samples = DatasetGenerator::new(17, 0, spec).batch(3).unwrap();
        let batch = LongBatch::from_samples(&samples);
        let mut p = tiny_pipeline(3);
        let mut w = fresh_window(&p);
        let mut tape = Tape::new();
        let mut ctx = ForwardCtx::inference();
        let out =
            p.long_forward(&mut tape, &batch, &mut w, &mut ctx, &ForwardOpts::default(), None).unwrap();
        let art = out.pilot_artifacts.as_ref().unwrap();
        let feats = out.pilot_features.as_ref().unwrap();
        let pilot_power = p.config().pilot_power;

        for i in 0..batch.len() {
            // Pilot stage: the graph observation equals the reference one.
            let y = phy::pilot_rx_long(
                &batch.channels[i],
                &art.pilots,
                &art.rf_precoders,
                &art.rf_combiners,
                &batch.pilot_noise[i],
                pilot_power,
            )
            .unwrap();
            let want = y.to_real_features();
            let got = feats.row(i);
            let diff = want
                .iter()
                .zip(got)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0f64, f64::max);
            assert!(diff < 1e-9, "pilot features diverge at sample {i}: {diff}");

            // Data stage: replaying the materialized precoders through the
            // reference chain reproduces the demodulator input.
            let symbols = phy::modulate(&batch.payloads[i], p.dims().modulation).unwrap();
            let r = phy::transmit_receive(
                &batch.data_channels[i],
                &out.precoders[i],
                &symbols,
                &batch.data_noise[i].column(0),
            )
            .unwrap();
            let r_mat = ComplexMatrix::new(r.len(), 1, r).unwrap();
            let want = r_mat.to_real_features();
            let got = out.demod_features.row(i);
            let diff = want
                .iter()
                .zip(got)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0f64, f64::max);
            assert!(diff < 1e-9, "data features diverge at sample {i}: {diff}");
        }
    }

    #[test]
    fn short_graph_matches_reference_chain() {
        let spec = tiny_spec(0.2);
        let samples = DatasetGenerator::new(23, 0, spec).batch(3).unwrap();
        let mut p = tiny_pipeline(4);
        let d = *p.dims();
        // Arbitrary constant-modulus analog pair per sample.
        let analog: Vec<_> = (0..samples.len())
            .map(|i| {
                let pf: Vec<f64> = (0..d.precoder_phase_count())
                    .map(|k| 0.13 * (i + 1) as f64 * k as f64)
                    .collect();
                let pw: Vec<f64> = (0..d.combiner_phase_count())
                    .map(|k| 0.29 * (i + 1) as f64 * (k + 1) as f64)
                    .collect();
                (
                    phases_to_analog(&pf, d.n_t, d.n_t_rf).unwrap(),
                    phases_to_analog(&pw, d.n_r, d.n_r_rf).unwrap(),
                )
            })
            .collect();
        let batch = ShortBatch::from_samples(&samples, analog);
        let mut tape = Tape::new();
        let mut ctx = ForwardCtx::inference();
        let out = p.short_forward(&mut tape, &batch, &mut ctx, &ForwardOpts::default()).unwrap();
        let pilot_power = p.config().pilot_power;

        for i in 0..batch.len() {
            let h_eq =
                phy::equivalent_channel(&batch.channels[i], &batch.analog[i].0, &batch.analog[i].1)
                    .unwrap();
            let n_eq = batch.analog[i].1.hermitian().matmul(&batch.eq_noise[i]).unwrap();
            let y = phy::pilot_rx_short(&h_eq, &out.eq_pilots, &n_eq, pilot_power).unwrap();
            let want = y.to_real_features();
            let got = out.pilot_features.row(i);
            let diff = want
                .iter()
                .zip(got)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0f64, f64::max);
            assert!(diff < 1e-9, "short pilot features diverge at sample {i}: {diff}");

            let symbols = phy::modulate(&batch.payloads[i], d.modulation).unwrap();
            let r = phy::transmit_receive(
                &batch.data_channels[i],
                &out.precoders[i],
                &symbols,
                &batch.data_noise[i].column(0),
            )
            .unwrap();
            let r_mat = ComplexMatrix::new(r.len(), 1, r).unwrap();
            let want = r_mat.to_real_features();
            let got = out.demod_features.row(i);
            let diff = want
                .iter()
                .zip(got)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0f64, f64::max);
            assert!(diff < 1e-9, "short data features diverge at sample {i}: {diff}");
            out.precoders[i].validate(p.config().p_t).unwrap();
        }
    }

    #[test]
    fn fixed_codes_reproduce_the_network_path_exactly() {
        let spec = tiny_spec(0.1);
        let samples = DatasetGenerator::new(31, 0, spec).batch(2).unwrap();
        let batch = LongBatch::from_samples(&samples);
        let mut p = tiny_pipeline(8);
        let base_window = fresh_window(&p);

        let mut w1 = base_window.clone();
        let mut tape1 = Tape::new();
        let mut ctx1 = ForwardCtx::inference();
        let first =
            p.long_forward(&mut tape1, &batch, &mut w1, &mut ctx1, &ForwardOpts::default(), None).unwrap();
        let logits_net = tape1.value(first.logits).to_vec();

        let mut w2 = base_window.clone();
        let mut tape2 = Tape::new();
        let mut ctx2 = ForwardCtx::inference();
        let opts = ForwardOpts { codes: CodeSource::Fixed(&first.codes), ..ForwardOpts::default() };
        let second = p.long_forward(&mut tape2, &batch, &mut w2, &mut ctx2, &opts, None).unwrap();
        let logits_fixed = tape2.value(second.logits).to_vec();

        assert_eq!(logits_net, logits_fixed);
        assert!(second.pilot_features.is_none());
        assert!(second.pilot_artifacts.is_none());
    }

    #[test]
    fn reduced_rf_deployment_zero_pads_and_stays_feasible() {
        // Tiny dims have n_t_rf == n_s, leaving no room to shrink the
        // transmit side, so widen the receive side instead.
        let mut dims = SystemDims::tiny();
        dims.n_r_rf = 3;
        dims.n_s = 2;
        let spec = DatasetSpec {
            n_t: dims.n_t,
            n_r: dims.n_r,
            n_clusters: 2,
            n_rays: 3,
            pilot_len: dims.pilot_len,
            eq_pilot_len: dims.eq_pilot_len,
            n_streams: dims.n_s,
            modulation: dims.modulation,
            noise_variance: 0.05,
            doppler: 0.0,
            delay: 0.0,
            angle_drift: 0.0,
        };
        let samples = DatasetGenerator::new(41, 0, spec).batch(2).unwrap();
        let batch = LongBatch::from_samples(&samples);
        let mut p = Pipeline::new(ModelConfig::new(dims), 5).unwrap();
        let mut w = fresh_window(&p);
        let mut tape = Tape::new();
        let mut ctx = ForwardCtx::inference();
        let opts = ForwardOpts {
            active_rf: Some(ActiveRf { tx: dims.n_t_rf, rx: 2 }),
            ..ForwardOpts::default()
        };
        let out = p.long_forward(&mut tape, &batch, &mut w, &mut ctx, &opts, None).unwrap();

        // Feature layout is column-major over an (n_r_rf x pilot_len) block:
        // within each pilot column, observation rows beyond the active rx
        // chains must be exactly zero (in both halves).
        let feats = out.pilot_features.as_ref().unwrap();
        let half = dims.n_r_rf * dims.pilot_len;
        for i in 0..batch.len() {
            let row = feats.row(i);
            for l in 0..dims.pilot_len {
                for r in 2..dims.n_r_rf {
                    let idx = l * dims.n_r_rf + r;
                    assert_eq!(row[idx], 0.0, "padded real part must be zero");
                    assert_eq!(row[half + idx], 0.0, "padded imaginary part must be zero");
                }
            }
        }
        // Materialized precoders carry active shapes and stay feasible.
        for set in &out.precoders {
            assert_eq!(set.w_rf.cols(), 2);
            assert_eq!(set.w_bb.rows(), 2);
            set.validate(p.config().p_t).unwrap();
        }
    }

    #[test]
    fn quantized_phases_land_on_grid_and_reject_training() {
        let spec = tiny_spec(0.1);
        let samples = DatasetGenerator::new(51, 0, spec).batch(2).unwrap();
        let batch = LongBatch::from_samples(&samples);
        let mut p = tiny_pipeline(6);
        let mut w = fresh_window(&p);
        let mut tape = Tape::new();
        let mut ctx = ForwardCtx::inference();
        let bits = 2;
        let opts = ForwardOpts { rf_phase_bits: bits, ..ForwardOpts::default() };
        let out = p.long_forward(&mut tape, &batch, &mut w, &mut ctx, &opts, None).unwrap();
        let step = std::f64::consts::TAU / f64::from(1u32 << bits);
        for set in &out.precoders {
            set.validate(p.config().p_t).unwrap();
            for phase in extract_phases(&set.f_rf) {
                let steps = phase / step;
                assert!((steps - steps.round()).abs() < 1e-9, "phase {phase} off-grid");
            }
        }

        let mut w2 = fresh_window(&p);
        let mut tape2 = Tape::new();
        let mut rng = crate::numerics::RngStream::new(1, 1);
        let mut train_ctx = ForwardCtx::training(2.0, &mut rng);
        let err = p.long_forward(&mut tape2, &batch, &mut w2, &mut train_ctx, &opts, None);
        assert!(matches!(err, Err(Error::Config(_))));
    }

    #[test]
    fn tanh_feedback_emits_soft_codes() {
        let mut cfg = ModelConfig::new(SystemDims::tiny());
        cfg.feedback = FeedbackMode::Tanh { neurons: 6 };
        let mut p = Pipeline::new(cfg, 2).unwrap();
        let spec = tiny_spec(0.1);
        let samples = DatasetGenerator::new(61, 0, spec).batch(2).unwrap();
        let batch = LongBatch::from_samples(&samples);
        let mut w = fresh_window(&p);
        let mut tape = Tape::new();
        let mut ctx = ForwardCtx::inference();
        let out =
            p.long_forward(&mut tape, &batch, &mut w, &mut ctx, &ForwardOpts::default(), None).unwrap();
        for code in &out.codes {
            assert_eq!(code.len(), 6);
            assert!(code.iter().all(|&c| (-1.0..1.0).contains(&c)), "tanh codes must be soft");
        }
    }

    #[test]
    fn batch_shape_mismatches_are_rejected() {
        let spec = tiny_spec(0.1);
        let samples = DatasetGenerator::new(71, 0, spec).batch(2).unwrap();
        let mut batch = LongBatch::from_samples(&samples);
        batch.payloads.pop();
        let mut p = tiny_pipeline(1);
        let mut w = fresh_window(&p);
        let mut tape = Tape::new();
        let mut ctx = ForwardCtx::inference();
        let err = p.long_forward(&mut tape, &batch, &mut w, &mut ctx, &ForwardOpts::default(), None);
        assert!(matches!(err, Err(Error::Shape { .. })));
    }
}
