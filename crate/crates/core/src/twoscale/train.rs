//! Optimization loops for the pipeline.
//!
//! All loops share one skeleton: draw a fresh batch, build a tape, run the
//! matching forward chain, take the bit cross-entropy on the demodulator
//! logits, sweep backward, and apply one Adam step. They differ only in which
//! chain each slot exercises:
//!
//! * [`train_two_timescale`] — frame-aligned alternation. With `T` slots per
//!   frame, global step `k` trains the long chain when `k mod T == T - 1`
//!   (the closing slot of the frame) and the short chain otherwise, so the
//!   two loops see data in exactly the ratio a deployment would.
//! * [`train_single_timescale`] — the ablation that retrains the full long
//!   chain every slot, as a system without the split would have to.
//! * [`two_step_feedback_training`] — trains a soft (tanh) feedback code end
//!   to end, fits one scalar quantizer per code neuron, then freezes
//!   everything upstream of the quantizer and retrains the rest against the
//!   quantized codes.
//! * [`transfer_finetune`] — freezes caller-chosen stacks and adapts the rest
//!   to a new channel distribution.
//!
//! Each epoch yields one [`TrainRecord`] per slot kind with the mean loss,
//! bit error rate, and the schedule values (surrogate slope, learning rate,
//! deployment averaging weight) in force. A non-finite loss aborts the run
//! with a numerical error, after dropping a diagnostic checkpoint when the
//! config names a directory for it.

use std::path::PathBuf;

use crate::baselines::{lloyd_max_train, ScalarCodebook};
use crate::channel::{DatasetGenerator, DatasetSample, DatasetSpec};
use crate::nngine::{ForwardCtx, NodeId, SchedulePos, Tape, TrainSchedule};
use crate::numerics::{RngStream, StreamPurpose};
use crate::phy::{self, PayloadBits};
use crate::twoscale::forward::{
    bce_targets, soft_bits_rows, CodeSource, FeatureBlock, ForwardOpts, LongBatch, ShortBatch,
};
use crate::twoscale::model::{FeedbackMode, Pipeline};
use crate::twoscale::phases::averaging_gamma;
use crate::twoscale::window::SlidingWindow;
use crate::{Error, Result};

/// Dataset substream that feeds gradient steps.
const TRAIN_SUBSTREAM: u64 = 0;
/// Dataset substream for quantizer calibration draws.
const CALIBRATION_SUBSTREAM: u64 = 1;
/// Dataset substream for the held-out comparison in the two-step scheme.
const HELDOUT_SUBSTREAM: u64 = 2;
/// Batch size used when gathering quantizer calibration samples (inference
/// only, so the batch-norm minimum does not apply).
const CALIB_BATCH: usize = 64;

/// Which chain a training step exercised.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SlotKind {
    Long,
    Short,
}

impl SlotKind {
    /// Stable lowercase name, used by log files.
    pub fn label(&self) -> &'static str {
        match self {
            SlotKind::Long => "long",
            SlotKind::Short => "short",
        }
    }
}

/// One epoch × slot-kind row of the training log.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainRecord {
    pub epoch: usize,
    pub slot: SlotKind,
    /// Mean per-sample bit cross-entropy over the epoch's steps of this kind.
    pub bce: f64,
    /// Mean bit error rate over the same steps (thresholded logits).
    pub ber: f64,
    /// Surrogate slope the binary layers used this epoch.
    pub alpha: f64,
    pub lr: f64,
    /// Averaging weight the most recent frame deployment used (`1.0` until
    /// the first long step has run).
    pub gamma: f64,
    /// Steps aggregated into this row.
    pub steps: usize,
}

/// Everything a training run needs besides the pipeline itself.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub schedule: TrainSchedule,
    /// Channel/noise/payload distribution to draw batches from. Dimensions
    /// must agree with the pipeline; the delay and drift fields are honored
    /// as given (training conventionally runs with zero delay).
    pub spec: DatasetSpec,
    /// Phase-shifter resolution short steps inherit beams at (0 =
    /// continuous). Long-step graphs always train continuous phases.
    pub rf_phase_bits: u32,
    /// Where to drop a diagnostic checkpoint if the loss turns non-finite.
    pub diagnostics_dir: Option<PathBuf>,
}

impl TrainConfig {
    pub fn new(schedule: TrainSchedule, spec: DatasetSpec) -> Self {
        Self { schedule, spec, rf_phase_bits: 0, diagnostics_dir: None }
    }

    fn validate(&self, pipeline: &Pipeline) -> Result<()> {
        self.schedule.validate()?;
        if self.schedule.batch_size < 2 {
            return Err(Error::Config(
                "training-mode batch norm needs at least two samples per batch".into(),
            ));
        }
        crate::twoscale::model::check_spec_dims(pipeline.dims(), &self.spec)
    }
}

/// Which chain each slot trains; see the module docs.
enum LoopStyle<'a> {
    TwoTimescale,
    SingleTimescale,
    /// Long-chain steps whose codes come from the frozen front end, quantized
    /// per neuron (step two of the two-step feedback scheme).
    QuantizedCodes(&'a [ScalarCodebook]),
}

#[derive(Default)]
struct Accum {
    bce: f64,
    ber: f64,
    steps: usize,
}

impl Accum {
    fn add(&mut self, (bce, ber): (f64, f64)) {
        self.bce += bce;
        self.ber += ber;
        self.steps += 1;
    }

    fn record(&self, epoch: usize, slot: SlotKind, alpha: f64, lr: f64, gamma: f64) -> TrainRecord {
        let n = self.steps as f64;
        TrainRecord { epoch, slot, bce: self.bce / n, ber: self.ber / n, alpha, lr, gamma, steps: self.steps }
    }
}

/// Frame-aligned alternating training: the closing slot of each frame trains
/// the long chain, every other slot the short chain. Returns per-epoch rows,
/// short before long within an epoch.
pub fn train_two_timescale(pipeline: &mut Pipeline, cfg: &TrainConfig) -> Result<Vec<TrainRecord>> {
    train_loop(pipeline, cfg, LoopStyle::TwoTimescale)
}

/// Ablation that trains the long chain on every slot, the cost a system
/// without the timescale split would pay.
pub fn train_single_timescale(
    pipeline: &mut Pipeline,
    cfg: &TrainConfig,
) -> Result<Vec<TrainRecord>> {
    train_loop(pipeline, cfg, LoopStyle::SingleTimescale)
}

fn train_loop(pipeline: &mut Pipeline, cfg: &TrainConfig, style: LoopStyle) -> Result<Vec<TrainRecord>> {
    cfg.validate(pipeline)?;
    let books = match style {
        LoopStyle::QuantizedCodes(books) => {
            let width = pipeline.config().feedback.code_width(pipeline.dims());
            if books.len() != width {
                return Err(Error::Config(format!(
                    "quantized retraining needs one codebook per code neuron, got {} for width {width}",
                    books.len()
                )));
            }
            Some(books)
        }
        _ => None,
    };

    let sched = cfg.schedule.clone();
    let slots = pipeline.dims().slots_per_frame;
    let mut data = DatasetGenerator::new(sched.seed, TRAIN_SUBSTREAM, cfg.spec.clone());
    let mut dropout_rng = RngStream::for_purpose(sched.seed, StreamPurpose::Dropout, 0);
    // Substream 0 of this purpose initialized the parameters; the guard gets
    // its own draws so re-randomized entries never replay the init sequence.
    let mut guard_rng = RngStream::for_purpose(sched.seed, StreamPurpose::ParamInit, 1);
    let mut window = SlidingWindow::new(pipeline.dims().window)?;
    let mut records = Vec::with_capacity(2 * sched.epochs);
    let mut frames: u64 = 0;
    let mut global_step: usize = 0;

    for epoch in 0..sched.epochs {
        let lr = sched.lr_for(epoch);
        let alpha = sched.anneal.alpha(epoch);
        let mut long_acc = Accum::default();
        let mut short_acc = Accum::default();
        for batch_idx in 0..sched.batches_per_epoch {
            let samples = data.batch(sched.batch_size)?;
            let long_slot = !matches!(style, LoopStyle::TwoTimescale)
                || global_step % slots == slots - 1;
            let stats = if long_slot {
                let stats =
                    long_step(pipeline, &samples, &mut window, alpha, &mut dropout_rng, books)?;
                frames += 1;
                long_acc.add(stats);
                stats
            } else {
                let stats = short_step(
                    pipeline,
                    &samples,
                    &window,
                    cfg.rf_phase_bits,
                    alpha,
                    &mut dropout_rng,
                )?;
                short_acc.add(stats);
                stats
            };
            if !stats.0.is_finite() {
                dump_divergence(pipeline, cfg, epoch, batch_idx);
                return Err(Error::Numerical(format!(
                    "training loss became {} at epoch {epoch}, step {global_step}",
                    stats.0
                )));
            }
            pipeline.store.adam_step(lr)?;
            // Adam clears the gradients it consumed; frozen entries keep
            // accumulating unless wiped, which would poison a later unfreeze.
            pipeline.store.zero_grads();
            global_step += 1;
        }
        pipeline.guard_rf_parameters(&mut guard_rng)?;
        let gamma = averaging_gamma(frames.max(1));
        if short_acc.steps > 0 {
            records.push(short_acc.record(epoch, SlotKind::Short, alpha, lr, gamma));
        }
        if long_acc.steps > 0 {
            records.push(long_acc.record(epoch, SlotKind::Long, alpha, lr, gamma));
        }
    }
    Ok(records)
}

/// One long-chain gradient step. With codebooks given, the codes are gathered
/// from a frozen-front-end inference pass and quantized before the training
/// forward consumes them as fixed inputs.
fn long_step(
    pipeline: &mut Pipeline,
    samples: &[DatasetSample],
    window: &mut SlidingWindow<FeatureBlock>,
    alpha: f64,
    dropout_rng: &mut RngStream,
    books: Option<&[ScalarCodebook]>,
) -> Result<(f64, f64)> {
    let batch = LongBatch::from_samples(samples);
    let fixed = match books {
        Some(books) => Some(quantized_codes(pipeline, &batch, window, books)?),
        None => None,
    };
    let mut tape = Tape::new();
    let mut ctx = ForwardCtx::training(alpha, dropout_rng);
    let opts = match &fixed {
        Some(rows) => ForwardOpts {
            codes: CodeSource::Fixed(rows),
            active_pilots: None,
            active_rf: None,
            rf_phase_bits: 0,
        },
        None => ForwardOpts::default(),
    };
    let out = pipeline.long_forward(&mut tape, &batch, window, &mut ctx, &opts, None)?;
    finish_step(pipeline, tape, out.logits, &batch.payloads)
}

/// One short-chain gradient step: inherit beams from a throwaway long-chain
/// inference pass over the current window, then train the fast loop on them.
fn short_step(
    pipeline: &mut Pipeline,
    samples: &[DatasetSample],
    window: &SlidingWindow<FeatureBlock>,
    rf_phase_bits: u32,
    alpha: f64,
    dropout_rng: &mut RngStream,
) -> Result<(f64, f64)> {
    let long_batch = LongBatch::from_samples(samples);
    let analog = pipeline.long_analog_for(&long_batch, window, rf_phase_bits)?;
    let batch = ShortBatch::from_samples(samples, analog);
    let mut tape = Tape::new();
    let mut ctx = ForwardCtx::training(alpha, dropout_rng);
    let out = pipeline.short_forward(&mut tape, &batch, &mut ctx, &ForwardOpts::default())?;
    finish_step(pipeline, tape, out.logits, &batch.payloads)
}

/// Loss, metrics, backward sweep, gradient harvest. A non-finite loss returns
/// early without touching the gradients so the caller can abort cleanly.
fn finish_step(
    pipeline: &mut Pipeline,
    mut tape: Tape,
    logits: NodeId,
    payloads: &[PayloadBits],
) -> Result<(f64, f64)> {
    let d = *pipeline.dims();
    let targets = bce_targets(payloads);
    let loss = tape.bce_with_logits(logits, &targets)?;
    let bce = tape.scalar(loss)?;
    if !bce.is_finite() {
        return Ok((bce, f64::NAN));
    }
    let probs = soft_bits_rows(&tape, logits, d.n_s, d.bits_per_symbol()?)?;
    let ber = phy::ber(payloads, &probs)?;
    tape.backward(loss)?;
    tape.harvest(&mut pipeline.store)?;
    Ok((bce, ber))
}

fn dump_divergence(pipeline: &Pipeline, cfg: &TrainConfig, epoch: usize, batch: usize) {
    let Some(dir) = &cfg.diagnostics_dir else { return };
    let path = dir.join(format!("diverged-e{epoch:03}-b{batch:03}.ckpt"));
    match pipeline.save(&path, SchedulePos { epoch, batch }) {
        Ok(()) => log::error!("training diverged; diagnostic checkpoint at {}", path.display()),
        Err(e) => log::warn!("training diverged and the diagnostic checkpoint failed too: {e}"),
    }
}

/// Runs the frozen pipeline on a window copy and quantizes each sample's code
/// per neuron. This is what the receiver would transmit over the finite
/// feedback link in the two-step scheme.
fn quantized_codes(
    pipeline: &mut Pipeline,
    batch: &LongBatch,
    window: &SlidingWindow<FeatureBlock>,
    books: &[ScalarCodebook],
) -> Result<Vec<Vec<f64>>> {
    let mut scratch = window.clone();
    let mut tape = Tape::new();
    let mut ctx = ForwardCtx::inference();
    let out =
        pipeline.long_forward(&mut tape, batch, &mut scratch, &mut ctx, &ForwardOpts::default(), None)?;
    Ok(out
        .codes
        .iter()
        .map(|code| {
            debug_assert_eq!(code.len(), books.len());
            code.iter().zip(books).map(|(&x, book)| book.quantize(x).1).collect()
        })
        .collect())
}

/// Everything the two-step scheme produces: both training logs, the fitted
/// per-neuron codebooks, and a held-out comparison of the soft code against
/// its quantized deployment.
#[derive(Debug, Clone)]
pub struct TwoStepOutcome {
    /// Step one: end-to-end training with the soft (tanh) code.
    pub soft_records: Vec<TrainRecord>,
    /// Step two: back-end retraining against quantized codes.
    pub quantized_records: Vec<TrainRecord>,
    /// One scalar codebook per code neuron.
    pub codebooks: Vec<ScalarCodebook>,
    /// Held-out bit error rate of the step-one system (unquantized code).
    pub soft_ber: f64,
    /// Held-out bit error rate after quantization and retraining.
    pub quantized_ber: f64,
    /// Feedback payload of the quantized code: neurons × bits per neuron.
    pub feedback_bits: u64,
}

/// Two-step feedback training for pipelines with a tanh code head.
///
/// Step one trains the whole long chain end to end; the code stays soft. The
/// calibration pass then fits a scalar minimum-distortion codebook per code
/// neuron on fresh draws (a neuron whose activations have collapsed to too
/// few distinct values falls back to a uniform codebook over the tanh range,
/// with a warning). Step two freezes the pilots, the per-pilot RF front end,
/// and the feedback network — everything upstream of the quantizer — and
/// retrains the rest against the quantized codes. The front end stays frozen
/// on return, since that is the deployable configuration.
///
/// Both held-out error rates are measured on the same fresh draws: the soft
/// system right after step one, the quantized system right after step two.
pub fn two_step_feedback_training(
    pipeline: &mut Pipeline,
    cfg: &TrainConfig,
    bits_per_neuron: u32,
    heldout_batches: usize,
) -> Result<TwoStepOutcome> {
    let neurons = match pipeline.config().feedback {
        FeedbackMode::Tanh { neurons } => neurons,
        FeedbackMode::Sign => {
            return Err(Error::Config(
                "two-step training quantizes a soft code; build the pipeline with a tanh feedback head"
                    .into(),
            ))
        }
    };
    if bits_per_neuron == 0 {
        return Err(Error::Config("per-neuron quantization needs at least one bit".into()));
    }
    if heldout_batches == 0 {
        return Err(Error::Config("the held-out comparison needs at least one batch".into()));
    }

    let soft_records = train_loop(pipeline, cfg, LoopStyle::SingleTimescale)?;
    let soft_ber = heldout_long_ber(pipeline, cfg, heldout_batches, None)?;

    let codebooks = calibrate_codebooks(pipeline, cfg, neurons, bits_per_neuron)?;

    pipeline.store.freeze_prefix("lt/fb");
    pipeline.store.freeze_prefix("lt/pilots");
    pipeline.store.freeze_prefix("lt/rf");
    let quantized_records = train_loop(pipeline, cfg, LoopStyle::QuantizedCodes(&codebooks))?;
    let quantized_ber = heldout_long_ber(pipeline, cfg, heldout_batches, Some(&codebooks))?;

    Ok(TwoStepOutcome {
        soft_records,
        quantized_records,
        codebooks,
        soft_ber,
        quantized_ber,
        feedback_bits: neurons as u64 * u64::from(bits_per_neuron),
    })
}

/// Gathers code activations over calibration draws and fits one codebook per
/// neuron. Sample count scales with the codebook size so every level has
/// support.
fn calibrate_codebooks(
    pipeline: &mut Pipeline,
    cfg: &TrainConfig,
    neurons: usize,
    bits: u32,
) -> Result<Vec<ScalarCodebook>> {
    let levels = 1usize
        .checked_shl(bits)
        .ok_or_else(|| Error::Config(format!("{bits}-bit codebooks are out of range")))?;
    let need = levels.max(64) * 16;
    let batches = need.div_ceil(CALIB_BATCH);
    let mut gen = DatasetGenerator::new(cfg.schedule.seed, CALIBRATION_SUBSTREAM, cfg.spec.clone());
    let mut window = SlidingWindow::new(pipeline.dims().window)?;
    let mut per_neuron = vec![Vec::with_capacity(batches * CALIB_BATCH); neurons];
    for _ in 0..batches {
        let samples = gen.batch(CALIB_BATCH)?;
        let batch = LongBatch::from_samples(&samples);
        let mut tape = Tape::new();
        let mut ctx = ForwardCtx::inference();
        let out = pipeline.long_forward(
            &mut tape,
            &batch,
            &mut window,
            &mut ctx,
            &ForwardOpts::default(),
            None,
        )?;
        for code in &out.codes {
            for (neuron, &x) in code.iter().enumerate() {
                per_neuron[neuron].push(x);
            }
        }
    }
    per_neuron
        .iter()
        .enumerate()
        .map(|(neuron, samples)| match lloyd_max_train(samples, bits, 200, 1e-10) {
            Ok(book) => Ok(book),
            Err(Error::Domain { details, .. }) => {
                log::warn!(
                    "code neuron {neuron} is degenerate ({details}); using a uniform codebook"
                );
                ScalarCodebook::uniform(-1.0, 1.0, bits)
            }
            Err(e) => Err(e),
        })
        .collect()
}

/// Mean bit error rate of the long chain over fresh held-out draws, optionally
/// through per-neuron quantized codes. Fresh generator and window each call,
/// so back-to-back calls see identical data.
fn heldout_long_ber(
    pipeline: &mut Pipeline,
    cfg: &TrainConfig,
    batches: usize,
    books: Option<&[ScalarCodebook]>,
) -> Result<f64> {
    let mut gen = DatasetGenerator::new(cfg.schedule.seed, HELDOUT_SUBSTREAM, cfg.spec.clone());
    let mut window = SlidingWindow::new(pipeline.dims().window)?;
    let d = *pipeline.dims();
    let bits = d.bits_per_symbol()?;
    let mut total = 0.0;
    for _ in 0..batches {
        let samples = gen.batch(cfg.schedule.batch_size)?;
        let batch = LongBatch::from_samples(&samples);
        let fixed = match books {
            Some(books) => Some(quantized_codes(pipeline, &batch, &window, books)?),
            None => None,
        };
        let mut tape = Tape::new();
        let mut ctx = ForwardCtx::inference();
        let opts = match &fixed {
            Some(rows) => ForwardOpts {
                codes: CodeSource::Fixed(rows),
                active_pilots: None,
                active_rf: None,
                rf_phase_bits: 0,
            },
            None => ForwardOpts::default(),
        };
        let out = pipeline.long_forward(&mut tape, &batch, &mut window, &mut ctx, &opts, None)?;
        let probs = soft_bits_rows(&tape, out.logits, d.n_s, bits)?;
        total += phy::ber(&batch.payloads, &probs)?;
    }
    Ok(total / batches as f64)
}

/// Adapts a trained pipeline to a new channel distribution with the given
/// stacks frozen (prefix-matched, e.g. `"lt"` holds the whole long chain
/// still). Freezing everything is refused. The prefixes stay frozen on
/// return; call [`crate::nngine::ParameterStore::unfreeze_all`] to undo.
pub fn transfer_finetune(
    pipeline: &mut Pipeline,
    cfg: &TrainConfig,
    frozen_prefixes: &[&str],
) -> Result<Vec<TrainRecord>> {
    for prefix in frozen_prefixes {
        pipeline.store.freeze_prefix(prefix);
    }
    if pipeline.store.trainable_count() == 0 {
        return Err(Error::Config(
            "every parameter is frozen; transfer fine-tuning has nothing to adapt".into(),
        ));
    }
    train_loop(pipeline, cfg, LoopStyle::TwoTimescale)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::twoscale::model::{ModelConfig, SystemDims};

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

    fn tiny_cfg(batches_per_epoch: usize, epochs: usize, seed: u64) -> TrainConfig {
        let schedule =
            TrainSchedule::geometric(4, epochs, batches_per_epoch, 1e-3, 5e-4, seed).unwrap();
        TrainConfig::new(schedule, tiny_spec(0.05))
    }

    fn snapshot(p: &Pipeline, prefix: &str) -> Vec<(String, Vec<f64>)> {
        p.store
            .entries()
            .filter(|(name, _)| name.starts_with(prefix))
            .map(|(name, e)| (name.to_string(), e.value.clone()))
            .collect()
    }

    #[test]
    fn two_timescale_alternation_follows_the_frame_layout() {
        let mut p = tiny_pipeline(3);
        let slots = p.dims().slots_per_frame;
        let cfg = tiny_cfg(slots, 1, 11);
        let records = train_two_timescale(&mut p, &cfg).unwrap();

        // One frame: slots-1 short steps, then the closing long step.
        assert_eq!(records.len(), 2);
        let short = records.iter().find(|r| r.slot == SlotKind::Short).unwrap();
        let long = records.iter().find(|r| r.slot == SlotKind::Long).unwrap();
        assert_eq!(short.steps, slots - 1);
        assert_eq!(long.steps, 1);
        assert_eq!(p.store.step(), slots as u64, "one optimizer step per slot");
        for r in &records {
            assert!(r.bce.is_finite() && r.ber.is_finite());
            assert_eq!(r.alpha, cfg.schedule.anneal.alpha(0));
            assert_eq!(r.lr, cfg.schedule.lr_for(0));
            assert_eq!(r.gamma, 1.0, "exactly one frame has deployed");
        }
    }

    #[test]
    fn training_is_reproducible_and_moves_parameters() {
        let run = || {
            let mut p = tiny_pipeline(7);
            let cfg = tiny_cfg(2, 2, 13);
            let records = train_two_timescale(&mut p, &cfg).unwrap();
            (records, p)
        };
        let (r1, p1) = run();
        let (r2, p2) = run();
        assert_eq!(r1, r2, "records must reproduce bit-exactly from the seed");
        for (name, e) in p1.store.entries() {
            assert_eq!(e.value, p2.store.get(name).unwrap().value, "{name} must reproduce");
        }
        let fresh = tiny_pipeline(7);
        let moved = p1
            .store
            .entries()
            .any(|(name, e)| e.value != fresh.store.get(name).unwrap().value);
        assert!(moved, "training must move parameters away from initialization");
    }

    #[test]
    fn single_timescale_trains_the_long_chain_every_slot() {
        let mut p = tiny_pipeline(41);
        let cfg = tiny_cfg(3, 2, 43);
        let records = train_single_timescale(&mut p, &cfg).unwrap();
        assert_eq!(records.len(), 2);
        assert!(records.iter().all(|r| r.slot == SlotKind::Long && r.steps == 3));
        // Every step closes a frame, so the averaging weight decays with the
        // running frame count, and the schedule advances per epoch.
        assert_eq!(records[0].gamma, averaging_gamma(3));
        assert_eq!(records[1].gamma, averaging_gamma(6));
        assert_eq!(records[0].lr, cfg.schedule.lr_for(0));
        assert_eq!(records[1].lr, cfg.schedule.lr_for(1));
        assert!(records[1].alpha > records[0].alpha, "the surrogate slope anneals upward");
    }

    #[test]
    fn short_slots_leave_the_long_chain_untouched() {
        let mut p = tiny_pipeline(5);
        let long_before = snapshot(&p, "lt/");
        let short_before = snapshot(&p, "st/");
        // Three steps of a four-slot frame: all short.
        let cfg = tiny_cfg(3, 1, 17);
        let records = train_two_timescale(&mut p, &cfg).unwrap();
        assert_eq!(records.len(), 1);
        assert_eq!(records[0].slot, SlotKind::Short);
        for (name, value) in &long_before {
            assert_eq!(
                &p.store.get(name).unwrap().value,
                value,
                "{name} must not move on short slots"
            );
        }
        let short_moved = short_before
            .iter()
            .any(|(name, value)| &p.store.get(name).unwrap().value != value);
        assert!(short_moved, "short-chain parameters must move");
    }

    #[test]
    fn a_diverged_loss_saves_a_diagnostic_and_reports_numerical_failure() {
        let dir = std::env::temp_dir().join(format!("beamlink-diverge-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let mut p = tiny_pipeline(9);
        // Poison the demodulator so the very first loss is non-finite.
        let names: Vec<String> =
            p.store.names().filter(|n| n.starts_with("demod/")).map(String::from).collect();
        assert!(!names.is_empty());
        for name in &names {
            for v in p.store.get_mut(name).unwrap().value.iter_mut() {
                *v = f64::NAN;
            }
        }
        let mut cfg = tiny_cfg(1, 1, 19);
        cfg.diagnostics_dir = Some(dir.clone());
        let err = train_single_timescale(&mut p, &cfg);
        assert!(matches!(err, Err(Error::Numerical(_))), "got {err:?}", err = err.map(|_| ()));
        let dumped = std::fs::read_dir(&dir)
            .unwrap()
            .any(|e| e.unwrap().file_name().to_string_lossy().starts_with("diverged-"));
        assert!(dumped, "a diagnostic checkpoint must be written");
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn config_mismatches_are_rejected_before_any_step() {
        let mut p = tiny_pipeline(51);
        let mut starved = tiny_cfg(2, 1, 53);
        starved.schedule.batch_size = 1;
        assert!(matches!(train_two_timescale(&mut p, &starved), Err(Error::Config(_))));

        let mut wrong_dims = tiny_cfg(2, 1, 53);
        wrong_dims.spec.n_t = 16;
        assert!(matches!(train_two_timescale(&mut p, &wrong_dims), Err(Error::Config(_))));
        assert_eq!(p.store.step(), 0, "rejected configs must not touch the optimizer");
    }

    #[test]
    fn two_step_retraining_freezes_the_front_end_and_reports_both_error_rates() {
        let mut model_cfg = ModelConfig::new(SystemDims::tiny());
        model_cfg.feedback = FeedbackMode::Tanh { neurons: 6 };
        let mut p = Pipeline::new(model_cfg, 21).unwrap();
        let cfg = tiny_cfg(2, 1, 23);
        let out = two_step_feedback_training(&mut p, &cfg, 2, 2).unwrap();

        assert_eq!(out.codebooks.len(), 6);
        assert_eq!(out.feedback_bits, 12);
        assert!(out.soft_ber.is_finite() && out.quantized_ber.is_finite());
        assert!((0.0..=1.0).contains(&out.soft_ber) && (0.0..=1.0).contains(&out.quantized_ber));
        assert!(!out.soft_records.is_empty() && !out.quantized_records.is_empty());
        assert!(out.quantized_records.iter().all(|r| r.slot == SlotKind::Long));
        for book in &out.codebooks {
            assert!(book.levels().iter().all(|l| (-1.0..=1.0).contains(l)));
        }
        for prefix in ["lt/fb", "lt/pilots", "lt/rf"] {
            let name = p
                .store
                .names()
                .find(|n| n.starts_with(prefix))
                .unwrap_or_else(|| panic!("no parameter under {prefix}"))
                .to_string();
            assert!(p.store.is_frozen(&name), "{name} must stay frozen after step two");
        }
        // Downstream stacks stay trainable.
        assert!(p.store.trainable_count() > 0);
    }

    #[test]
    fn saturated_code_neurons_fall_back_to_uniform_codebooks() {
        let mut model_cfg = ModelConfig::new(SystemDims::tiny());
        model_cfg.feedback = FeedbackMode::Tanh { neurons: 4 };
        let mut p = Pipeline::new(model_cfg, 27).unwrap();
        // Drive the code head's final bias far into tanh saturation: every
        // calibration draw then lands on the same handful of values, which is
        // exactly the degenerate case the fallback covers.
        let bias_name = {
            let mut names: Vec<String> = p
                .store
                .names()
                .filter(|n| n.starts_with("lt/fb/") && n.ends_with("/b"))
                .map(String::from)
                .collect();
            names.sort();
            names.pop().unwrap()
        };
        for v in p.store.get_mut(&bias_name).unwrap().value.iter_mut() {
            *v = 1e4;
        }
        let cfg = tiny_cfg(1, 1, 29);
        let out = two_step_feedback_training(&mut p, &cfg, 2, 1).unwrap();
        let uniform = ScalarCodebook::uniform(-1.0, 1.0, 2).unwrap();
        for book in &out.codebooks {
            assert_eq!(book.levels(), uniform.levels(), "saturated neurons use the fallback");
        }
    }

    #[test]
    fn two_step_requires_a_tanh_head() {
        let mut p = tiny_pipeline(61);
        let cfg = tiny_cfg(1, 1, 63);
        assert!(matches!(
            two_step_feedback_training(&mut p, &cfg, 2, 1),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn transfer_finetune_trains_only_the_unfrozen_tail() {
        let mut p = tiny_pipeline(31);
        let frozen_before: Vec<(String, Vec<f64>)> =
            [snapshot(&p, "lt/"), snapshot(&p, "st/")].concat();
        let demod_before = snapshot(&p, "demod/");
        let cfg = tiny_cfg(4, 1, 37);
        let records = transfer_finetune(&mut p, &cfg, &["lt", "st"]).unwrap();
        assert!(!records.is_empty());
        for (name, value) in &frozen_before {
            assert_eq!(&p.store.get(name).unwrap().value, value, "{name} is frozen");
        }
        let demod_moved = demod_before
            .iter()
            .any(|(name, value)| &p.store.get(name).unwrap().value != value);
        assert!(demod_moved, "the unfrozen demodulator must adapt");

        let mut p2 = tiny_pipeline(31);
        assert!(matches!(
            transfer_finetune(&mut p2, &cfg, &["lt", "st", "demod"]),
            Err(Error::Config(_))
        ));
    }
}
