//! Clustered mmWave channel generation.
//!
//! Channels follow the narrowband clustered model: a normalized sum of
//! `N_cl * N_ray` rank-one ray contributions, each the outer product of
//! receive and transmit uniform-linear-array responses weighted by a complex
//! Gaussian gain. The "actual" channel seen by delayed CSI multiplies every
//! ray by a Doppler phase `exp(j 2π f_d τ cos(aoa))`, which leaves per-ray
//! energy untouched but decorrelates the matrix from its stale estimate.
//!
//! Dataset generation bundles everything one training/evaluation sample
//! needs — a channel realization, the pilot-stage and data-stage noise, and
//! payload bits — with each ingredient drawn from its own purpose-keyed
//! random stream so the pieces can be regenerated independently.

use num_complex::Complex64;

use crate::numerics::container::{ArrayEntry, Container};
use crate::numerics::{sample_cgauss, ComplexMatrix, RngStream, StreamPurpose};
use crate::phy::PayloadBits;
use crate::{Error, Result};

/// Half-wavelength element spacing, the implied standard for ULAs.
pub const DEFAULT_SPACING: f64 = 0.5;

/// One realization of the cluster/ray geometry: gains and angles for every
/// ray, plus the array spacing. Realizing a channel matrix from these params
/// is deterministic, which is what lets the delayed variant reuse the exact
/// same geometry.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelParams {
    pub n_clusters: usize,
    pub n_rays: usize,
    /// Complex ray gains, cluster-major: index `i * n_rays + l`.
    pub gains: Vec<Complex64>,
    /// Azimuth angles of arrival (radians), same indexing as `gains`.
    pub aoa: Vec<f64>,
    /// Azimuth angles of departure (radians), same indexing as `gains`.
    pub aod: Vec<f64>,
    /// Antenna spacing over wavelength (d/λ).
    pub spacing: f64,
}

impl ChannelParams {
    pub fn n_paths(&self) -> usize {
        self.n_clusters * self.n_rays
    }
}

/// A channel realization together with its delayed counterpart and the delay
/// model parameters. When `delay == 0` no separate delayed matrix is stored;
/// [`actual`](Self::actual) then returns the undelayed channel, keeping the
/// "zero delay changes nothing" invariant exact by construction.
#[derive(Debug, Clone)]
pub struct ChannelSample {
    pub params: ChannelParams,
    /// Channel observed by pilot training (the stale CSI source), `N_r x N_t`.
    pub h: ComplexMatrix,
    /// Channel the data actually propagates through, when delayed.
    pub h_delayed: Option<ComplexMatrix>,
    /// CSI delay in seconds.
    pub delay: f64,
    /// Maximum Doppler shift in Hz.
    pub doppler: f64,
}

impl ChannelSample {
    /// The matrix data transmission runs over: the delayed channel when a
    /// delay is modeled, otherwise the nominal one.
    pub fn actual(&self) -> &ComplexMatrix {
        self.h_delayed.as_ref().unwrap_or(&self.h)
    }
}

/// Uniform linear array response: entry `k` is
/// `(1/sqrt(n)) * exp(-j 2π (d/λ) k sin(φ))`.
pub fn array_response(n_antennas: usize, phi: f64, spacing: f64) -> Result<ComplexMatrix> {
    if n_antennas == 0 {
        return Err(Error::Domain {
            op: "array_response",
            details: "array needs at least one antenna".into(),
        });
    }
    let scale = 1.0 / (n_antennas as f64).sqrt();
    let step = -2.0 * std::f64::consts::PI * spacing * phi.sin();
    let data: Vec<Complex64> = (0..n_antennas)
        .map(|k| Complex64::from_polar(scale, step * k as f64))
        .collect();
    ComplexMatrix::new(n_antennas, 1, data)
}

/// Draws ray gains `CN(0,1)` and angles `Uniform(-π/2, π/2)`, all mutually
/// independent. Draw order per ray: gain, AoA, AoD — fixed for
/// reproducibility.
pub fn sample_channel_params(
    rng: &mut RngStream,
    n_clusters: usize,
    n_rays: usize,
) -> Result<ChannelParams> {
    sample_channel_params_drifted(rng, n_clusters, n_rays, 0.0)
}

/// Variant with an angle drift: every AoA/AoD is shifted by `drift` radians
/// and wrapped back into `(-π/2, π/2]`. A zero drift reproduces
/// [`sample_channel_params`] exactly; transfer-learning experiments use a
/// non-zero drift as a controlled statistics change.
pub fn sample_channel_params_drifted(
    rng: &mut RngStream,
    n_clusters: usize,
    n_rays: usize,
    drift: f64,
) -> Result<ChannelParams> {
    if n_clusters == 0 || n_rays == 0 {
        return Err(Error::Domain {
            op: "sample_channel_params",
            details: format!("need at least one cluster and ray, got {n_clusters}x{n_rays}"),
        });
    }
    let n = n_clusters * n_rays;
    let mut gains = Vec::with_capacity(n);
    let mut aoa = Vec::with_capacity(n);
    let mut aod = Vec::with_capacity(n);
    let half_pi = std::f64::consts::FRAC_PI_2;
    for _ in 0..n {
        gains.push(rng.cgauss(1.0));
        aoa.push(wrap_half_open(rng.uniform(-half_pi, half_pi) + drift));
        aod.push(wrap_half_open(rng.uniform(-half_pi, half_pi) + drift));
    }
    Ok(ChannelParams {
        n_clusters,
        n_rays,
        gains,
        aoa,
        aod,
        spacing: DEFAULT_SPACING,
    })
}

/// Wraps an angle into `(-π/2, π/2]` modulo π.
fn wrap_half_open(mut a: f64) -> f64 {
    let pi = std::f64::consts::PI;
    while a > pi / 2.0 {
        a -= pi;
    }
    while a <= -pi / 2.0 {
        a += pi;
    }
    a
}

/// `H = sqrt(N_t N_r / (N_cl N_ray)) Σ_il α_il a_r(aoa) a_t(aod)^H`, with an
/// optional per-ray phase factor supplied by the delayed variant. Keeping
/// one accumulation routine guarantees the τ = 0 delayed channel is
/// bit-identical to the undelayed one.
fn realize_with_phase(
    params: &ChannelParams,
    n_t: usize,
    n_r: usize,
    phase: impl Fn(usize) -> Complex64,
) -> Result<ComplexMatrix> {
    let n_paths = params.n_paths();
    if params.gains.len() != n_paths || params.aoa.len() != n_paths || params.aod.len() != n_paths
    {
        return Err(Error::Shape {
            op: "realize_channel",
            details: format!(
                "params advertise {n_paths} paths but carry {} gains / {} aoa / {} aod",
                params.gains.len(),
                params.aoa.len(),
                params.aod.len()
            ),
        });
    }
    let scale = ((n_t * n_r) as f64 / n_paths as f64).sqrt();
    let mut h = ComplexMatrix::zeros(n_r, n_t);
    for p in 0..n_paths {
        let ar = array_response(n_r, params.aoa[p], params.spacing)?;
        let at = array_response(n_t, params.aod[p], params.spacing)?;
        let weight = params.gains[p] * phase(p) * scale;
        // Accumulate the rank-one term weight * ar * at^H.
        for i in 0..n_r {
            let wi = weight * ar.at(i, 0);
            for j in 0..n_t {
                let v = h.at(i, j) + wi * at.at(j, 0).conj();
                h.set(i, j, v);
            }
        }
    }
    Ok(h)
}

/// Nominal clustered channel realization.
pub fn realize_channel(params: &ChannelParams, n_t: usize, n_r: usize) -> Result<ComplexMatrix> {
    realize_with_phase(params, n_t, n_r, |_| Complex64::new(1.0, 0.0))
}

/// Delayed ("actual") channel: each ray additionally rotated by
/// `exp(j 2π f_d τ cos(aoa))`. The receive-side angle alone drives the
/// Doppler phase.
pub fn realize_delayed_channel(
    params: &ChannelParams,
    n_t: usize,
    n_r: usize,
    doppler: f64,
    delay: f64,
) -> Result<ComplexMatrix> {
    if delay < 0.0 {
        return Err(Error::Domain {
            op: "realize_delayed_channel",
            details: format!("delay must be non-negative, got {delay}"),
        });
    }
    realize_with_phase(params, n_t, n_r, |p| {
        let angle = 2.0 * std::f64::consts::PI * doppler * delay * params.aoa[p].cos();
        Complex64::from_polar(1.0, angle)
    })
}

/// CSI delay proportional to a scheme's feedback bill: `τ = τ_s Q / Q_single`.
pub fn delay_for_scheme(tau_single: f64, q_scheme: u64, q_single: u64) -> Result<f64> {
    if q_single == 0 {
        return Err(Error::Domain {
            op: "delay_for_scheme",
            details: "single-timescale bit count must be positive".into(),
        });
    }
    Ok(tau_single * q_scheme as f64 / q_single as f64)
}

// ---------------------------------------------------------------------------
// Datasets
// ---------------------------------------------------------------------------

/// Shapes and statistics for one dataset draw.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSpec {
    pub n_t: usize,
    pub n_r: usize,
    pub n_clusters: usize,
    pub n_rays: usize,
    /// Long-term pilot count L: pilot noise is `N_r x L`.
    pub pilot_len: usize,
    /// Short-term pilot count L_eq: equivalent-stage noise is `N_r x L_eq`.
    pub eq_pilot_len: usize,
    pub n_streams: usize,
    /// Modulation order M; payloads carry `log2(M)` bits per stream.
    pub modulation: u32,
    /// Complex noise variance per entry (both pilot and data stages).
    pub noise_variance: f64,
    /// Maximum Doppler shift in Hz.
    pub doppler: f64,
    /// CSI delay in seconds; 0 disables the delayed-channel matrix.
    pub delay: f64,
    /// Angle drift in radians for transfer-learning sources.
    pub angle_drift: f64,
}

impl DatasetSpec {
    pub fn bits_per_symbol(&self) -> Result<usize> {
        match self.modulation {
            4 => Ok(2),
            16 => Ok(4),
            64 => Ok(6),
            other => Err(Error::Config(format!(
                "unsupported modulation order {other} in dataset spec"
            ))),
        }
    }
}

/// One training/evaluation tuple: the channel, independent noise for every
/// observation stage, and payload bits.
#[derive(Debug, Clone)]
pub struct DatasetSample {
    pub channel: ChannelSample,
    /// Antenna-domain noise for the long pilot stage, `N_r x L`.
    pub pilot_noise: ComplexMatrix,
    /// Antenna-domain noise for the short pilot stage, `N_r x L_eq`.
    pub eq_pilot_noise: ComplexMatrix,
    /// Data-stage noise, `N_r x 1`.
    pub data_noise: ComplexMatrix,
    pub payload: PayloadBits,
}

/// Lazily generates dataset samples from purpose-keyed streams. Memory stays
/// bounded: callers pull batches instead of materializing whole epochs.
#[derive(Debug, Clone)]
pub struct DatasetGenerator {
    spec: DatasetSpec,
    channel_rng: RngStream,
    noise_rng: RngStream,
    payload_rng: RngStream,
}

impl DatasetGenerator {
    /// Purpose streams are derived from the seed with the given sub-index,
    /// so independent generators (training vs. evaluation) coexist on one
    /// experiment seed.
    pub fn new(seed: u64, substream: u64, spec: DatasetSpec) -> Self {
        Self {
            channel_rng: RngStream::for_purpose(seed, StreamPurpose::Channel, substream),
            noise_rng: RngStream::for_purpose(seed, StreamPurpose::Noise, substream),
            payload_rng: RngStream::for_purpose(seed, StreamPurpose::Payload, substream),
            spec,
        }
    }

    pub fn spec(&self) -> &DatasetSpec {
        &self.spec
    }

    pub fn next_sample(&mut self) -> Result<DatasetSample> {
        let s = &self.spec;
        let params = sample_channel_params_drifted(
            &mut self.channel_rng,
            s.n_clusters,
            s.n_rays,
            s.angle_drift,
        )?;
        let h = realize_channel(&params, s.n_t, s.n_r)?;
        let h_delayed = if s.delay > 0.0 {
            Some(realize_delayed_channel(&params, s.n_t, s.n_r, s.doppler, s.delay)?)
        } else {
            None
        };
        let channel = ChannelSample {
            params,
            h,
            h_delayed,
            delay: s.delay,
            doppler: s.doppler,
        };
        let pilot_noise = sample_cgauss(s.n_r, s.pilot_len, s.noise_variance, &mut self.noise_rng)?;
        let eq_pilot_noise =
            sample_cgauss(s.n_r, s.eq_pilot_len, s.noise_variance, &mut self.noise_rng)?;
        let data_noise = sample_cgauss(s.n_r, 1, s.noise_variance, &mut self.noise_rng)?;
        let bits_per_symbol = s.bits_per_symbol()?;
        let bits: Vec<u8> = (0..s.n_streams * bits_per_symbol)
            .map(|_| self.payload_rng.bit())
            .collect();
        let payload = PayloadBits::new(s.n_streams, bits_per_symbol, bits)?;
        Ok(DatasetSample {
            channel,
            pilot_noise,
            eq_pilot_noise,
            data_noise,
            payload,
        })
    }

    pub fn batch(&mut self, count: usize) -> Result<Vec<DatasetSample>> {
        (0..count).map(|_| self.next_sample()).collect()
    }
}

/// Draws `count` samples from fresh purpose streams on `seed`.
pub fn generate_dataset(seed: u64, spec: DatasetSpec, count: usize) -> Result<Vec<DatasetSample>> {
    if count == 0 {
        return Err(Error::Domain {
            op: "generate_dataset",
            details: "sample count must be at least 1".into(),
        });
    }
    DatasetGenerator::new(seed, 0, spec).batch(count)
}

// ---------------------------------------------------------------------------
// Dump / load
// ---------------------------------------------------------------------------

/// Serializes realized channel matrices to the project container format.
/// The header records the generating geometry and seed; each sample's
/// nominal (and, when present, delayed) matrix is stored as a complex array.
pub fn dump_channels(
    path: &std::path::Path,
    samples: &[ChannelSample],
    n_t: usize,
    n_r: usize,
    n_clusters: usize,
    n_rays: usize,
    seed: u64,
) -> Result<()> {
    let mut c = Container::new();
    c.header.insert("kind".into(), "channel-dataset".into());
    c.header.insert("n_t".into(), n_t.to_string());
    c.header.insert("n_r".into(), n_r.to_string());
    c.header.insert("n_cl".into(), n_clusters.to_string());
    c.header.insert("n_ray".into(), n_rays.to_string());
    c.header.insert("seed".into(), seed.to_string());
    c.header.insert("count".into(), samples.len().to_string());
    for (idx, s) in samples.iter().enumerate() {
        c.entries.insert(
            format!("h/{idx:06}"),
            ArrayEntry::complex(vec![s.h.rows(), s.h.cols()], s.h.data().to_vec())?,
        );
        if let Some(hd) = &s.h_delayed {
            c.entries.insert(
                format!("h_delayed/{idx:06}"),
                ArrayEntry::complex(vec![hd.rows(), hd.cols()], hd.data().to_vec())?,
            );
        }
    }
    c.save(path)
}

/// Loads the matrices written by [`dump_channels`]: per sample, the nominal
/// channel and the delayed one if it was stored.
pub fn load_channels(
    path: &std::path::Path,
) -> Result<Vec<(ComplexMatrix, Option<ComplexMatrix>)>> {
    let c = Container::load(path)?;
    if c.header.get("kind").map(String::as_str) != Some("channel-dataset") {
        return Err(Error::Integrity(format!(
            "container at {} is not a channel dataset",
            path.display()
        )));
    }
    let count: usize = c
        .header
        .get("count")
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| Error::Integrity("channel dataset header lacks a count".into()))?;
    let mut out = Vec::with_capacity(count);
    for idx in 0..count {
        let entry = c
            .entries
            .get(&format!("h/{idx:06}"))
            .ok_or_else(|| Error::Integrity(format!("missing channel entry {idx}")))?;
        let h = complex_entry_to_matrix(entry)?;
        let hd = c
            .entries
            .get(&format!("h_delayed/{idx:06}"))
            .map(complex_entry_to_matrix)
            .transpose()?;
        out.push((h, hd));
    }
    Ok(out)
}

fn complex_entry_to_matrix(entry: &ArrayEntry) -> Result<ComplexMatrix> {
    use crate::numerics::container::ArrayData;
    let ArrayData::Complex(data) = &entry.data else {
        return Err(Error::Integrity("expected a complex array entry".into()));
    };
    if entry.dims.len() != 2 {
        return Err(Error::Integrity(format!(
            "expected rank-2 array, got rank {}",
            entry.dims.len()
        )));
    }
    ComplexMatrix::new(entry.dims[0], entry.dims[1], data.clone())
}
