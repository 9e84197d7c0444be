//! Frame-structured evaluation with live deployment semantics.
//!
//! Evaluation replays exactly what a receiver would see. Time is divided into
//! frames of `slots_per_frame` data slots, each slot drawing a fresh channel,
//! noise, and payload. Under the two-timescale scheme the first `T - 1` slots
//! of a frame run the short chain on the analog beams deployed at the last
//! frame boundary, and the closing slot runs the long chain with the
//! moving-average state plugged in, so the frame boundary both measures a
//! data slot and refreshes the beams. Before the first boundary the state
//! holds all-zero phases — a broadside array, the natural cold start. The
//! single-timescale ablation instead runs the full long chain on every slot.
//!
//! Errors are counted as integers against the true payload bits; the report
//! carries the exact feedback spend (summed from the code widths actually
//! emitted) and a normal-approximation confidence interval on the error rate.
//!
//! The dataset spec's `delay` field models stale CSI: the data hop then runs
//! over the drifted channel while pilots saw the nominal one. When comparing
//! schemes whose feedback bills differ, [`crate::channel::delay_for_scheme`]
//! scales a reference delay proportionally to each scheme's bit count.

use crate::channel::{DatasetGenerator, DatasetSpec};
use crate::nngine::{ForwardCtx, NodeId, Tape};
use crate::phy::PayloadBits;
use crate::twoscale::forward::{
    bce_targets, soft_bits_rows, ActiveRf, CodeSource, FeatureBlock, ForwardOpts, LongBatch,
    ShortBatch,
};
use crate::twoscale::model::{check_spec_dims, FeedbackMode, Pipeline, SystemDims};
use crate::twoscale::phases::{phases_to_analog, quantize_phases, LongTermPhaseState};
use crate::twoscale::window::SlidingWindow;
use crate::{Error, Result};

/// Dataset substream for evaluation draws; distinct from the training (0),
/// calibration (1), and held-out (2) substreams so one experiment seed never
/// replays data across phases.
const EVAL_SUBSTREAM: u64 = 3;

/// Two-sided 95% normal quantile for the error-rate confidence interval.
const Z_95: f64 = 1.96;

/// Which deployment is being measured.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scheme {
    /// Short chain on inherited beams, long refresh at frame boundaries.
    TwoTimescale,
    /// Full long chain on every slot.
    SingleTimescale,
}

impl Scheme {
    /// Stable lowercase name, used by log files.
    pub fn label(&self) -> &'static str {
        match self {
            Scheme::TwoTimescale => "two-timescale",
            Scheme::SingleTimescale => "single-timescale",
        }
    }
}

/// Everything one evaluation run needs.
#[derive(Debug, Clone)]
pub struct EvalConfig {
    /// Channel/noise/payload distribution; dimensions must match the model.
    pub spec: DatasetSpec,
    pub scheme: Scheme,
    /// Frames to simulate; each frame spans `slots_per_frame` data slots.
    pub frames: usize,
    pub seed: u64,
    /// Phase-shifter resolution of deployed beams (0 = continuous).
    pub rf_phase_bits: u32,
    /// Transmit only the first `n` long pilots (zero-padded adapter).
    pub active_pilots: Option<usize>,
    /// Deploy on a reduced RF front end (zero-padded adapter).
    pub active_rf: Option<ActiveRf>,
}

impl EvalConfig {
    pub fn new(spec: DatasetSpec, scheme: Scheme, frames: usize, seed: u64) -> Self {
        Self { spec, scheme, frames, seed, rf_phase_bits: 0, active_pilots: None, active_rf: None }
    }
}

/// Aggregate outcome of one evaluation run.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub scheme: Scheme,
    pub frames: usize,
    pub long_slots: usize,
    pub short_slots: usize,
    /// Payload bits decoded wrongly, and the total sent.
    pub bit_errors: u64,
    pub bits_total: u64,
    pub ber: f64,
    /// 95% normal-approximation interval on the error rate, clamped to [0,1].
    pub ber_ci: (f64, f64),
    /// Mean per-slot bit cross-entropy.
    pub bce: f64,
    /// Exact uplink feedback spend, summed from the emitted code widths.
    pub feedback_bits: u64,
}

#[derive(Default)]
struct Tally {
    long_slots: usize,
    short_slots: usize,
    bit_errors: u64,
    bits_total: u64,
    bce_sum: f64,
    feedback_bits: u64,
}

struct SlotMetrics {
    bce: f64,
    errors: u64,
    bits: u64,
    feedback: u64,
}

impl Tally {
    fn absorb(&mut self, m: SlotMetrics, kind: SlotCounter) {
        match kind {
            SlotCounter::Long => self.long_slots += 1,
            SlotCounter::Short => self.short_slots += 1,
        }
        self.bit_errors += m.errors;
        self.bits_total += m.bits;
        self.bce_sum += m.bce;
        self.feedback_bits += m.feedback;
    }

    fn report(self, cfg: &EvalConfig) -> EvalReport {
        let n = self.bits_total as f64;
        let ber = self.bit_errors as f64 / n;
        let half = Z_95 * (ber * (1.0 - ber) / n).sqrt();
        EvalReport {
            scheme: cfg.scheme,
            frames: cfg.frames,
            long_slots: self.long_slots,
            short_slots: self.short_slots,
            bit_errors: self.bit_errors,
            bits_total: self.bits_total,
            ber,
            ber_ci: ((ber - half).max(0.0), (ber + half).min(1.0)),
            bce: self.bce_sum / (self.long_slots + self.short_slots) as f64,
            feedback_bits: self.feedback_bits,
        }
    }
}

enum SlotCounter {
    Long,
    Short,
}

/// Simulates `cfg.frames` frames of live deployment and reports error rates
/// and the exact feedback spend. Only hard-feedback pipelines are accepted:
/// a soft (tanh) code has no defined bit count here — quantized deployments
/// of those are compared by
/// [`crate::twoscale::train::two_step_feedback_training`].
pub fn evaluate(pipeline: &mut Pipeline, cfg: &EvalConfig) -> Result<EvalReport> {
    if cfg.frames == 0 {
        return Err(Error::Config("evaluation needs at least one frame".into()));
    }
    if matches!(pipeline.config().feedback, FeedbackMode::Tanh { .. }) {
        return Err(Error::Config(
            "evaluation counts hard feedback bits; a tanh code head has none".into(),
        ));
    }
    check_spec_dims(pipeline.dims(), &cfg.spec)?;

    let d = *pipeline.dims();
    let mut gen = DatasetGenerator::new(cfg.seed, EVAL_SUBSTREAM, cfg.spec.clone());
    let mut window = SlidingWindow::new(d.window)?;
    let mut state = LongTermPhaseState::new(d.precoder_phase_count(), d.combiner_phase_count());
    let mut tally = Tally::default();

    let long_opts = ForwardOpts {
        codes: CodeSource::Network,
        active_pilots: cfg.active_pilots,
        active_rf: cfg.active_rf,
        rf_phase_bits: cfg.rf_phase_bits,
    };

    for _ in 0..cfg.frames {
        match cfg.scheme {
            Scheme::TwoTimescale => {
                for _ in 0..d.slots_per_frame - 1 {
                    short_slot(pipeline, &mut gen, &state, cfg, &mut tally)?;
                }
                long_slot(pipeline, &mut gen, &mut window, Some(&mut state), &long_opts, &mut tally)?;
            }
            Scheme::SingleTimescale => {
                for _ in 0..d.slots_per_frame {
                    long_slot(pipeline, &mut gen, &mut window, None, &long_opts, &mut tally)?;
                }
            }
        }
    }
    Ok(tally.report(cfg))
}

/// One short data slot on the currently deployed beams.
fn short_slot(
    pipeline: &mut Pipeline,
    gen: &mut DatasetGenerator,
    state: &LongTermPhaseState,
    cfg: &EvalConfig,
    tally: &mut Tally,
) -> Result<()> {
    let d = *pipeline.dims();
    let samples = gen.batch(1)?;
    // Deployment reads the state through the phase shifters, so quantization
    // applies at readout while the state itself stays continuous — the same
    // convention the long chain's deploy path uses.
    let pf = quantize_phases(state.precoder_phases(), cfg.rf_phase_bits);
    let pw = quantize_phases(state.combiner_phases(), cfg.rf_phase_bits);
    let analog = vec![(
        phases_to_analog(&pf, d.n_t, d.n_t_rf)?,
        phases_to_analog(&pw, d.n_r, d.n_r_rf)?,
    )];
    let batch = ShortBatch::from_samples(&samples, analog);
    let mut tape = Tape::new();
    let mut ctx = ForwardCtx::inference();
    let opts = ForwardOpts {
        codes: CodeSource::Network,
        active_pilots: None,
        active_rf: cfg.active_rf,
        rf_phase_bits: 0,
    };
    let out = pipeline.short_forward(&mut tape, &batch, &mut ctx, &opts)?;
    let metrics = slot_metrics(tape, out.logits, &out.codes, &batch.payloads, &d)?;
    tally.absorb(metrics, SlotCounter::Short);
    Ok(())
}

/// One long data slot; with `deploy` given this is a frame boundary that also
/// refreshes the moving-average state.
fn long_slot(
    pipeline: &mut Pipeline,
    gen: &mut DatasetGenerator,
    window: &mut SlidingWindow<FeatureBlock>,
    deploy: Option<&mut LongTermPhaseState>,
    opts: &ForwardOpts,
    tally: &mut Tally,
) -> Result<()> {
    let d = *pipeline.dims();
    let samples = gen.batch(1)?;
    let batch = LongBatch::from_samples(&samples);
    let mut tape = Tape::new();
    let mut ctx = ForwardCtx::inference();
    let out = pipeline.long_forward(&mut tape, &batch, window, &mut ctx, opts, deploy)?;
    let metrics = slot_metrics(tape, out.logits, &out.codes, &batch.payloads, &d)?;
    tally.absorb(metrics, SlotCounter::Long);
    Ok(())
}

/// Loss, integer error counts, and the feedback bill of one slot.
fn slot_metrics(
    mut tape: Tape,
    logits: NodeId,
    codes: &[Vec<f64>],
    payloads: &[PayloadBits],
    d: &SystemDims,
) -> Result<SlotMetrics> {
    let targets = bce_targets(payloads);
    let loss = tape.bce_with_logits(logits, &targets)?;
    let bce = tape.scalar(loss)?;
    if !bce.is_finite() {
        return Err(Error::Numerical(format!("evaluation produced a non-finite loss ({bce})")));
    }
    let probs = soft_bits_rows(&tape, logits, d.n_s, d.bits_per_symbol()?)?;
    let mut errors = 0u64;
    let mut bits = 0u64;
    for (payload, soft) in payloads.iter().zip(&probs) {
        let hard = soft.threshold();
        errors += payload
            .as_slice()
            .iter()
            .zip(hard.as_slice())
            .filter(|(sent, decoded)| sent != decoded)
            .count() as u64;
        bits += payload.as_slice().len() as u64;
    }
    let feedback = codes.iter().map(|c| c.len() as u64).sum();
    Ok(SlotMetrics { bce, errors, bits, feedback })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::twoscale::model::ModelConfig;

    fn spec_for(d: &SystemDims, noise: f64) -> DatasetSpec {
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

    #[test]
    fn frame_accounting_is_exact_for_both_schemes() {
        let mut p = tiny_pipeline(71);
        let d = *p.dims();
        let spec = spec_for(&d, 0.05);
        let frames = 3;
        let payload_bits = (d.n_s * d.bits_per_symbol().unwrap()) as u64;

        let two = evaluate(&mut p, &EvalConfig::new(spec.clone(), Scheme::TwoTimescale, frames, 5))
            .unwrap();
        assert_eq!(two.long_slots, frames);
        assert_eq!(two.short_slots, frames * (d.slots_per_frame - 1));
        assert_eq!(two.bits_total, payload_bits * (frames * d.slots_per_frame) as u64);
        assert_eq!(
            two.feedback_bits,
            frames as u64
                * ((d.slots_per_frame - 1) as u64 * d.bits_short as u64 + d.bits_long as u64),
            "two-timescale feedback must bill the short code per slot and the long code per frame"
        );
        assert!(two.ber >= 0.0 && two.ber <= 1.0);
        assert!(two.ber_ci.0 <= two.ber && two.ber <= two.ber_ci.1);
        assert!(two.bce.is_finite());

        let one =
            evaluate(&mut p, &EvalConfig::new(spec, Scheme::SingleTimescale, frames, 5)).unwrap();
        assert_eq!(one.long_slots, frames * d.slots_per_frame);
        assert_eq!(one.short_slots, 0);
        assert_eq!(
            one.feedback_bits,
            (frames * d.slots_per_frame) as u64 * d.bits_long as u64,
            "single-timescale feedback must bill the long code on every slot"
        );
        assert!(
            one.feedback_bits > two.feedback_bits,
            "the two-timescale scheme exists to cut this bill"
        );
    }

    #[test]
    fn evaluation_is_deterministic_in_the_seed() {
        let mut p = tiny_pipeline(73);
        let cfg = EvalConfig::new(spec_for(p.dims(), 0.1), Scheme::TwoTimescale, 2, 9);
        let reseeded = EvalConfig::new(spec_for(p.dims(), 0.1), Scheme::TwoTimescale, 2, 10);
        let a = evaluate(&mut p, &cfg).unwrap();
        let b = evaluate(&mut p, &cfg).unwrap();
        assert_eq!(a, b, "same seed and config must reproduce the report exactly");
        let other = evaluate(&mut p, &reseeded).unwrap();
        assert_ne!(a.bce, other.bce, "a different seed must draw different data");
    }

    #[test]
    fn reduced_hardware_adapters_evaluate_cleanly() {
        // Spare RF chains so the reduced deployment still carries n_s streams.
        let mut d = SystemDims::tiny();
        d.n_t_rf = 3;
        d.n_r_rf = 3;
        let mut p = Pipeline::new(ModelConfig::new(d), 77).unwrap();
        let mut cfg = EvalConfig::new(spec_for(p.dims(), 0.05), Scheme::TwoTimescale, 2, 11);
        cfg.active_pilots = Some(d.pilot_len - 2);
        cfg.active_rf = Some(ActiveRf { tx: 2, rx: 2 });
        cfg.rf_phase_bits = 3;
        let report = evaluate(&mut p, &cfg).unwrap();
        assert_eq!(report.long_slots, 2);
        assert!(report.bce.is_finite());
        assert!(report.ber >= 0.0 && report.ber <= 1.0);
    }

    #[test]
    fn stale_csi_changes_the_outcome() {
        let mut p = tiny_pipeline(79);
        let fresh_cfg = EvalConfig::new(spec_for(p.dims(), 0.05), Scheme::TwoTimescale, 2, 13);
        let fresh = evaluate(&mut p, &fresh_cfg).unwrap();
        let mut stale_spec = spec_for(p.dims(), 0.05);
        stale_spec.doppler = 200.0;
        stale_spec.delay = 5e-3;
        let stale =
            evaluate(&mut p, &EvalConfig::new(stale_spec, Scheme::TwoTimescale, 2, 13)).unwrap();
        assert_ne!(fresh.bce, stale.bce, "delayed CSI must steer the data hop differently");
        assert_eq!(
            fresh.feedback_bits, stale.feedback_bits,
            "staleness changes errors, never the feedback bill"
        );
    }

    #[test]
    fn degenerate_requests_are_rejected() {
        let mut p = tiny_pipeline(81);
        let spec = spec_for(p.dims(), 0.05);
        let zero = EvalConfig::new(spec.clone(), Scheme::TwoTimescale, 0, 1);
        assert!(matches!(evaluate(&mut p, &zero), Err(Error::Config(_))));

        let mut wrong = EvalConfig::new(spec.clone(), Scheme::TwoTimescale, 1, 1);
        wrong.spec.n_r = 7;
        assert!(matches!(evaluate(&mut p, &wrong), Err(Error::Config(_))));

        let mut cfg_model = ModelConfig::new(SystemDims::tiny());
        cfg_model.feedback = FeedbackMode::Tanh { neurons: 4 };
        let mut tanh = Pipeline::new(cfg_model, 83).unwrap();
        let soft = EvalConfig::new(spec, Scheme::TwoTimescale, 1, 1);
        assert!(matches!(evaluate(&mut tanh, &soft), Err(Error::Config(_))));
    }
}
