//! Classical limited feedback: quantize the channel's physical parameters.
//!
//! Instead of learning the feedback message, the conventional scheme sends
//! each ray's gain (real and imaginary part) and its departure/arrival
//! angles through scalar quantizers, splitting the bit budget evenly across
//! the four parameters of every ray. The base station rebuilds the channel
//! from the quantized parameters. This is the reference point for how many
//! bits a parameterized description needs before the learned binary
//! feedback becomes competitive.

use num_complex::Complex64;

use crate::baselines::quantizer::{lloyd_max_train, ScalarCodebook, MAX_BITS};
use crate::channel::{realize_channel, ChannelParams};
use crate::numerics::{ComplexMatrix, RngStream};
use crate::{Error, Result};

/// Seed for the deterministic codebook training draws. Part of the
/// reproducibility contract: the same budget always yields the same
/// codebooks.
const TRAINING_SEED: u64 = 0x00fe_edba;
/// Gaussian component samples used to train the gain codebook.
const TRAINING_SAMPLES: usize = 1 << 16;
/// Above this resolution the trained codebook stops paying for itself
/// (a handful of samples per cell) and a uniform grid over the sampled
/// range is used instead.
const LLOYD_MAX_BITS: u32 = 10;

/// Scalar codebooks for the four per-ray parameters. Ray gains are
/// circularly-symmetric unit Gaussians, so both components share one
/// codebook trained on the `N(0, 1/2)` marginal; angles are uniform on
/// (−π/2, π/2), for which the evenly spaced grid is already the
/// distortion-optimal quantizer.
#[derive(Debug, Clone)]
pub struct FeedbackCodebooks {
    gain: ScalarCodebook,
    angle: ScalarCodebook,
    bits_per_parameter: u32,
}

impl FeedbackCodebooks {
    /// Splits `total_bits` evenly over the `4 * n_paths` scalar parameters
    /// and trains the codebooks at that resolution. A budget too small to
    /// give every parameter at least one bit is rejected; leftover bits
    /// (when the budget is not a multiple of the parameter count) are
    /// dropped with a warning.
    pub fn for_budget(total_bits: u64, n_paths: usize) -> Result<Self> {
        if n_paths == 0 {
            return Err(Error::Domain {
                op: "FeedbackCodebooks::for_budget",
                details: "channel has no propagation paths".into(),
            });
        }
        let n_params = 4 * n_paths as u64;
        let mut bits = (total_bits / n_params) as u32;
        if bits == 0 {
            return Err(Error::Domain {
                op: "FeedbackCodebooks::for_budget",
                details: format!(
                    "{total_bits} bits cannot give {n_params} parameters one bit each"
                ),
            });
        }
        let remainder = total_bits % n_params;
        if remainder != 0 {
            log::warn!(
                "parameter feedback: {remainder} of {total_bits} bits unused \
                 ({bits} bits per parameter)"
            );
        }
        if bits > MAX_BITS {
            log::warn!("parameter feedback: clamping {bits} bits per parameter to {MAX_BITS}");
            bits = MAX_BITS;
        }

        let mut rng = RngStream::new(TRAINING_SEED, 0);
        let mut samples = Vec::with_capacity(2 * TRAINING_SAMPLES);
        for _ in 0..TRAINING_SAMPLES {
            let z = rng.cgauss(1.0);
            samples.push(z.re);
            samples.push(z.im);
        }
        let gain = if bits <= LLOYD_MAX_BITS {
            lloyd_max_train(&samples, bits, 200, 1e-10)?
        } else {
            let lo = samples.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = samples.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            ScalarCodebook::uniform(lo, hi, bits)?
        };
        let angle = ScalarCodebook::uniform(
            -std::f64::consts::FRAC_PI_2,
            std::f64::consts::FRAC_PI_2,
            bits,
        )?;
        Ok(Self { gain, angle, bits_per_parameter: bits })
    }

    pub fn bits_per_parameter(&self) -> u32 {
        self.bits_per_parameter
    }

    /// Total feedback message length for one channel description.
    pub fn message_bits(&self, n_paths: usize) -> u64 {
        4 * n_paths as u64 * self.bits_per_parameter as u64
    }

    pub fn gain_codebook(&self) -> &ScalarCodebook {
        &self.gain
    }

    pub fn angle_codebook(&self) -> &ScalarCodebook {
        &self.angle
    }

    /// Runs every parameter through its codebook and returns the quantized
    /// description the receiver would feed back.
    pub fn quantize_params(&self, params: &ChannelParams) -> ChannelParams {
        ChannelParams {
            n_clusters: params.n_clusters,
            n_rays: params.n_rays,
            gains: params
                .gains
                .iter()
                .map(|g| {
                    Complex64::new(self.gain.quantize(g.re).1, self.gain.quantize(g.im).1)
                })
                .collect(),
            aoa: params.aoa.iter().map(|&a| self.angle.quantize(a).1).collect(),
            aod: params.aod.iter().map(|&a| self.angle.quantize(a).1).collect(),
            spacing: params.spacing,
        }
    }

    /// Quantizes the parameters and rebuilds the channel matrix from them.
    pub fn reconstruct(
        &self,
        params: &ChannelParams,
        n_t: usize,
        n_r: usize,
    ) -> Result<(ComplexMatrix, ChannelParams)> {
        let quantized = self.quantize_params(params);
        let channel = realize_channel(&quantized, n_t, n_r)?;
        Ok((channel, quantized))
    }
}

/// One-shot convenience: build codebooks for the budget and reconstruct the
/// channel from the quantized parameters.
pub fn parameter_feedback_reconstruct(
    params: &ChannelParams,
    n_t: usize,
    n_r: usize,
    total_bits: u64,
) -> Result<ComplexMatrix> {
    let books = FeedbackCodebooks::for_budget(total_bits, params.n_paths())?;
    Ok(books.reconstruct(params, n_t, n_r)?.0)
}
