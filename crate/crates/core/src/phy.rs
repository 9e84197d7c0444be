//! Deterministic physical-layer signal chain.
//!
//! This module is the reference math for everything the learned pipeline
//! does with matrices: Gray-mapped QAM, the precoded transmit/receive
//! equation, pilot observation models for both timescales, digital-precoder
//! power normalization, and the BER/BCE metrics. All functions are pure;
//! the training engine mirrors the same formulas node-by-node, and the
//! tests here are the ground truth both paths are held to.
//!
//! # Gray labeling
//!
//! The constellation labeling is fixed project-wide. For square M-QAM with
//! `k = log2(M)` bits per symbol, the first `k/2` bits select the in-phase
//! level, the last `k/2` the quadrature level (most significant bit first).
//! Each axis interprets its bit group as a Gray code: decoding the group to
//! a binary index `g` gives amplitude `(2^(k/2) - 1) - 2g`, so the all-zero
//! group maps to the most positive level and adjacent levels always differ
//! in exactly one bit. Symbols are scaled to unit average energy, e.g. for
//! QPSK the bit pair `(0,0)` maps to `(1+j)/sqrt(2)`.

use num_complex::Complex64;

use crate::numerics::ComplexMatrix;
use crate::{Error, Result};

/// Probability clamp for the binary cross-entropy.
pub const BCE_EPS: f64 = 1e-12;

/// Default transmit power budget: P = P_T = 1. With unit symbol energy the
/// per-entry noise variance at SNR `s` dB is `10^(-s/10)`.
pub const DEFAULT_POWER: f64 = 1.0;

/// Noise variance for an SNR in dB under the unit-power convention.
pub fn noise_variance(snr_db: f64) -> f64 {
    10f64.powf(-snr_db / 10.0)
}

// ---------------------------------------------------------------------------
// Precoders
// ---------------------------------------------------------------------------

/// The four matrices of one hybrid precoding/combining decision.
///
/// The struct itself is plain data; [`PrecoderSet::validate`] checks the
/// physical constraints (phase-shifter modulus on the analog parts, total
/// transmit power on the precoder product). Keeping validation separate lets
/// tests drive the signal chain with synthetic matrices (identities, zeros)
/// that deliberately ignore the hardware constraints.
#[derive(Debug, Clone)]
pub struct PrecoderSet {
    /// Analog precoder, `N_t x N_t_rf`.
    pub f_rf: ComplexMatrix,
    /// Digital precoder, `N_t_rf x N_s`.
    pub f_bb: ComplexMatrix,
    /// Analog combiner, `N_r x N_r_rf`.
    pub w_rf: ComplexMatrix,
    /// Digital combiner, `N_r_rf x N_s`.
    pub w_bb: ComplexMatrix,
}

/// Tolerance for the analog-modulus and transmit-power invariants.
pub const PRECODER_TOL: f64 = 1e-9;

impl PrecoderSet {
    /// Checks the constant-modulus constraint on both analog matrices
    /// (entry magnitude `1/sqrt(N)` within 1e-9) and the transmit power
    /// `||F_RF F_BB||_F^2 == p_t` within 1e-9 relative.
    pub fn validate(&self, p_t: f64) -> Result<()> {
        check_constant_modulus(&self.f_rf, "F_RF")?;
        check_constant_modulus(&self.w_rf, "W_RF")?;
        let product = self.f_rf.matmul(&self.f_bb)?;
        let power = product.fro_norm_sq();
        if (power - p_t).abs() > PRECODER_TOL * p_t.max(1.0) {
            return Err(Error::Constraint(format!(
                "transmit power {power:.12} deviates from budget {p_t}"
            )));
        }
        Ok(())
    }
}

/// Verifies every entry of an analog matrix has magnitude `1/sqrt(rows)`.
pub fn check_constant_modulus(m: &ComplexMatrix, name: &str) -> Result<()> {
    let want = 1.0 / (m.rows() as f64).sqrt();
    for i in 0..m.rows() {
        for j in 0..m.cols() {
            let got = m.at(i, j).norm();
            if (got - want).abs() > PRECODER_TOL {
                return Err(Error::Constraint(format!(
                    "{name}[{i},{j}] has magnitude {got:.12}, expected {want:.12}"
                )));
            }
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Bits
// ---------------------------------------------------------------------------

/// Transmitted payload bits: one row per stream, `log2(M)` columns.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PayloadBits {
    n_streams: usize,
    bits_per_symbol: usize,
    bits: Vec<u8>,
}

impl PayloadBits {
    pub fn new(n_streams: usize, bits_per_symbol: usize, bits: Vec<u8>) -> Result<Self> {
        if bits.len() != n_streams * bits_per_symbol {
            return Err(Error::Shape {
                op: "PayloadBits::new",
                details: format!(
                    "{n_streams}x{bits_per_symbol} needs {} bits, got {}",
                    n_streams * bits_per_symbol,
                    bits.len()
                ),
            });
        }
        if let Some(bad) = bits.iter().find(|&&b| b > 1) {
            return Err(Error::Domain {
                op: "PayloadBits::new",
                details: format!("entries must be 0/1, found {bad}"),
            });
        }
        Ok(Self { n_streams, bits_per_symbol, bits })
    }

    pub fn n_streams(&self) -> usize {
        self.n_streams
    }

    pub fn bits_per_symbol(&self) -> usize {
        self.bits_per_symbol
    }

    pub fn bit(&self, stream: usize, pos: usize) -> u8 {
        self.bits[stream * self.bits_per_symbol + pos]
    }

    /// Row-major bit slice (stream-major).
    pub fn as_slice(&self) -> &[u8] {
        &self.bits
    }
}

/// Demodulator soft output: per-bit probabilities, same layout as
/// [`PayloadBits`].
#[derive(Debug, Clone, PartialEq)]
pub struct SoftBits {
    n_streams: usize,
    bits_per_symbol: usize,
    probs: Vec<f64>,
}

impl SoftBits {
    pub fn new(n_streams: usize, bits_per_symbol: usize, probs: Vec<f64>) -> Result<Self> {
        if probs.len() != n_streams * bits_per_symbol {
            return Err(Error::Shape {
                op: "SoftBits::new",
                details: format!(
                    "{n_streams}x{bits_per_symbol} needs {} probs, got {}",
                    n_streams * bits_per_symbol,
                    probs.len()
                ),
            });
        }
        if let Some(bad) = probs.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(Error::Domain {
                op: "SoftBits::new",
                details: format!("probabilities must lie in [0,1], found {bad}"),
            });
        }
        Ok(Self { n_streams, bits_per_symbol, probs })
    }

    /// Converts hard bits into degenerate probabilities (0.0 / 1.0).
    pub fn from_hard(bits: &PayloadBits) -> Self {
        Self {
            n_streams: bits.n_streams,
            bits_per_symbol: bits.bits_per_symbol,
            probs: bits.bits.iter().map(|&b| f64::from(b)).collect(),
        }
    }

    pub fn prob(&self, stream: usize, pos: usize) -> f64 {
        self.probs[stream * self.bits_per_symbol + pos]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.probs
    }

    /// Hard decision under the project tie rule: `p >= 0.5` maps to bit 1.
    pub fn threshold(&self) -> PayloadBits {
        PayloadBits {
            n_streams: self.n_streams,
            bits_per_symbol: self.bits_per_symbol,
            bits: self.probs.iter().map(|&p| u8::from(p >= 0.5)).collect(),
        }
    }
}

// ---------------------------------------------------------------------------
// Modulation
// ---------------------------------------------------------------------------

fn bits_per_axis(m: u32) -> Result<usize> {
    match m {
        4 => Ok(1),
        16 => Ok(2),
        64 => Ok(3),
        other => Err(Error::Config(format!(
            "unsupported modulation order {other}; expected one of 4, 16, 64"
        ))),
    }
}

fn gray_to_binary(mut g: u32) -> u32 {
    let mut mask = g >> 1;
    while mask != 0 {
        g ^= mask;
        mask >>= 1;
    }
    g
}

fn binary_to_gray(b: u32) -> u32 {
    b ^ (b >> 1)
}

/// Per-axis amplitude for a bit group, before energy normalization.
fn axis_level(bits: &[u8], m_axis: usize) -> f64 {
    let mut g = 0u32;
    for &b in bits {
        g = (g << 1) | u32::from(b);
    }
    let idx = gray_to_binary(g);
    ((1u32 << m_axis) - 1) as f64 - 2.0 * idx as f64
}

/// Energy normalization so that the constellation has unit average symbol
/// energy: sqrt(2 * (4^m - 1) / 3) for m bits per axis.
fn energy_norm(m_axis: usize) -> f64 {
    let four_m = (1u64 << (2 * m_axis)) as f64;
    (2.0 * (four_m - 1.0) / 3.0).sqrt()
}

/// Maps payload bits to one Gray-labeled square-QAM symbol per stream.
pub fn modulate(bits: &PayloadBits, m: u32) -> Result<Vec<Complex64>> {
    let m_axis = bits_per_axis(m)?;
    if bits.bits_per_symbol != 2 * m_axis {
        return Err(Error::Shape {
            op: "modulate",
            details: format!(
                "M={m} needs {} bits per stream, payload carries {}",
                2 * m_axis,
                bits.bits_per_symbol
            ),
        });
    }
    let norm = energy_norm(m_axis);
    let mut out = Vec::with_capacity(bits.n_streams);
    for s in 0..bits.n_streams {
        let row = &bits.bits[s * bits.bits_per_symbol..(s + 1) * bits.bits_per_symbol];
        let re = axis_level(&row[..m_axis], m_axis) / norm;
        let im = axis_level(&row[m_axis..], m_axis) / norm;
        out.push(Complex64::new(re, im));
    }
    Ok(out)
}

/// Nearest-point hard demodulation under the same Gray labeling. This is the
/// detector used by the classical baselines (the learned pipeline has its own
/// demodulator network).
pub fn hard_demodulate(symbols: &[Complex64], m: u32) -> Result<PayloadBits> {
    let m_axis = bits_per_axis(m)?;
    let norm = energy_norm(m_axis);
    let levels = (1usize << m_axis) as f64;
    let mut bits = Vec::with_capacity(symbols.len() * 2 * m_axis);
    for sym in symbols {
        for axis in [sym.re, sym.im] {
            // Invert level = (2^m - 1) - 2*idx, clamping to the grid.
            let raw = ((levels - 1.0) - axis * norm) / 2.0;
            let idx = raw.round().clamp(0.0, levels - 1.0) as u32;
            let g = binary_to_gray(idx);
            for k in (0..m_axis).rev() {
                bits.push(((g >> k) & 1) as u8);
            }
        }
    }
    PayloadBits::new(symbols.len(), 2 * m_axis, bits)
}

// ---------------------------------------------------------------------------
// Signal chain
// ---------------------------------------------------------------------------

fn column_matrix(v: &[Complex64]) -> ComplexMatrix {
    ComplexMatrix::from_fn(v.len(), 1, |i, _| v[i])
}

/// Full precoded downlink equation:
/// `r = W_BB^H W_RF^H (H F_RF F_BB s + n)`.
pub fn transmit_receive(
    h: &ComplexMatrix,
    p: &PrecoderSet,
    s: &[Complex64],
    n: &[Complex64],
) -> Result<Vec<Complex64>> {
    if s.len() != p.f_bb.cols() {
        return Err(Error::Shape {
            op: "transmit_receive",
            details: format!("symbol vector has {} entries, F_BB expects {}", s.len(), p.f_bb.cols()),
        });
    }
    if n.len() != h.rows() {
        return Err(Error::Shape {
            op: "transmit_receive",
            details: format!("noise vector has {} entries, H has {} rows", n.len(), h.rows()),
        });
    }
    let x = p.f_rf.matmul(&p.f_bb)?.matmul(&column_matrix(s))?;
    let z = h.matmul(&x)?.add(&column_matrix(n))?;
    let combined = p.w_bb.hermitian().matmul(&p.w_rf.hermitian())?.matmul(&z)?;
    Ok(combined.column(0))
}

/// Low-dimensional equivalent channel `H_eq = W_RF^H H F_RF`.
pub fn equivalent_channel(
    h: &ComplexMatrix,
    f_rf: &ComplexMatrix,
    w_rf: &ComplexMatrix,
) -> Result<ComplexMatrix> {
    w_rf.hermitian().matmul(h)?.matmul(f_rf)
}

/// Scales an unnormalized digital precoder so the hybrid product meets the
/// power budget exactly: `F_BB = sqrt(P_T) * F̄_BB / ||F_RF F̄_BB||_F`.
pub fn normalize_digital(
    f_rf: &ComplexMatrix,
    f_bb_raw: &ComplexMatrix,
    p_t: f64,
) -> Result<ComplexMatrix> {
    let product_norm = f_rf.matmul(f_bb_raw)?.fro_norm()?;
    if product_norm <= 0.0 || !product_norm.is_finite() {
        return Err(Error::Degenerate(format!(
            "normalize_digital: ||F_RF * F_BB|| = {product_norm}; cannot normalize"
        )));
    }
    Ok(f_bb_raw.scale_re(p_t.sqrt() / product_norm))
}

fn check_pilot_power(pilots: &ComplexMatrix, budget: f64, op: &'static str) -> Result<()> {
    for l in 0..pilots.cols() {
        let power: f64 = (0..pilots.rows()).map(|i| pilots.at(i, l).norm_sqr()).sum();
        if power > budget * (1.0 + 1e-9) {
            return Err(Error::Constraint(format!(
                "{op}: pilot column {l} has power {power:.9} exceeding budget {budget}"
            )));
        }
    }
    Ok(())
}

/// Long-term pilot observation: column `l` is received through its own RF
/// pair, `y_l = W_l^H (H F_l x_l + n_l)`, where `n_l` is the l-th column of
/// the antenna-domain noise matrix.
pub fn pilot_rx_long(
    h: &ComplexMatrix,
    pilots: &ComplexMatrix,
    f_rf_per_pilot: &[ComplexMatrix],
    w_rf_per_pilot: &[ComplexMatrix],
    noise: &ComplexMatrix,
    power_budget: f64,
) -> Result<ComplexMatrix> {
    let l_pilots = pilots.cols();
    if f_rf_per_pilot.len() != l_pilots || w_rf_per_pilot.len() != l_pilots {
        return Err(Error::Shape {
            op: "pilot_rx_long",
            details: format!(
                "{} pilots but {} precoder / {} combiner entries",
                l_pilots,
                f_rf_per_pilot.len(),
                w_rf_per_pilot.len()
            ),
        });
    }
    if noise.cols() != l_pilots || noise.rows() != h.rows() {
        return Err(Error::Shape {
            op: "pilot_rx_long",
            details: format!(
                "noise is {}x{}, expected {}x{}",
                noise.rows(),
                noise.cols(),
                h.rows(),
                l_pilots
            ),
        });
    }
    check_pilot_power(pilots, power_budget, "pilot_rx_long")?;

    let n_rf_r = w_rf_per_pilot.first().map_or(0, ComplexMatrix::cols);
    let mut out = ComplexMatrix::zeros(n_rf_r, l_pilots);
    for l in 0..l_pilots {
        let x_l = ComplexMatrix::from_fn(pilots.rows(), 1, |i, _| pilots.at(i, l));
        let n_l = ComplexMatrix::from_fn(noise.rows(), 1, |i, _| noise.at(i, l));
        let through = h.matmul(&f_rf_per_pilot[l].matmul(&x_l)?)?.add(&n_l)?;
        let y_l = w_rf_per_pilot[l].hermitian().matmul(&through)?;
        out.set_column(l, &y_l.column(0));
    }
    Ok(out)
}

/// Short-term pilot observation over the equivalent channel:
/// `Y_eq = H_eq X_eq + N_eq`.
pub fn pilot_rx_short(
    h_eq: &ComplexMatrix,
    pilots_eq: &ComplexMatrix,
    noise_eq: &ComplexMatrix,
    power_budget: f64,
) -> Result<ComplexMatrix> {
    check_pilot_power(pilots_eq, power_budget, "pilot_rx_short")?;
    h_eq.matmul(pilots_eq)?.add(noise_eq)
}

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

fn check_batch<'a>(
    labels: &'a [PayloadBits],
    probs: &'a [SoftBits],
    op: &'static str,
) -> Result<()> {
    if labels.is_empty() || labels.len() != probs.len() {
        return Err(Error::Shape {
            op,
            details: format!("batch sizes: {} labels vs {} probs", labels.len(), probs.len()),
        });
    }
    for (l, p) in labels.iter().zip(probs) {
        if l.n_streams != p.n_streams || l.bits_per_symbol != p.bits_per_symbol {
            return Err(Error::Shape {
                op,
                details: format!(
                    "label {}x{} vs prob {}x{}",
                    l.n_streams, l.bits_per_symbol, p.n_streams, p.bits_per_symbol
                ),
            });
        }
    }
    Ok(())
}

/// Binary cross-entropy, summed over the bit positions of each sample and
/// averaged over the batch. Probabilities are clamped to `[ε, 1-ε]` with
/// ε = 1e-12 so the loss stays finite at saturated predictions.
pub fn bce_loss(labels: &[PayloadBits], probs: &[SoftBits]) -> Result<f64> {
    check_batch(labels, probs, "bce_loss")?;
    let mut total = 0.0;
    for (l, p) in labels.iter().zip(probs) {
        for (&bit, &prob) in l.bits.iter().zip(&p.probs) {
            let q = prob.clamp(BCE_EPS, 1.0 - BCE_EPS);
            total -= if bit == 1 { q.ln() } else { (1.0 - q).ln() };
        }
    }
    Ok(total / labels.len() as f64)
}

/// Bit error rate after thresholding at 0.5 (ties decide 1). The denominator
/// is the full bit count `batch * N_s * log2(M)`.
pub fn ber(labels: &[PayloadBits], probs: &[SoftBits]) -> Result<f64> {
    check_batch(labels, probs, "ber")?;
    let mut errors = 0usize;
    let mut total = 0usize;
    for (l, p) in labels.iter().zip(probs) {
        for (&bit, &prob) in l.bits.iter().zip(&p.probs) {
            let decided = u8::from(prob >= 0.5);
            errors += usize::from(decided != bit);
            total += 1;
        }
    }
    Ok(errors as f64 / total as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{sample_cgauss, RngStream};

    const TOL: f64 = 1e-12;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn all_bit_patterns(n: usize) -> Vec<Vec<u8>> {
        (0..1usize << n)
            .map(|v| (0..n).rev().map(|k| ((v >> k) & 1) as u8).collect())
            .collect()
    }

    // -- modulation --------------------------------------------------------

    #[test]
    fn qpsk_zero_bits_map_to_first_quadrant() {
        let bits = PayloadBits::new(1, 2, vec![0, 0]).unwrap();
        let s = modulate(&bits, 4).unwrap();
        let want = c(1.0, 1.0) / 2f64.sqrt();
        assert!((s[0] - want).norm() < TOL);
    }

    #[test]
    fn constellations_have_unit_average_energy() {
        for &m in &[4u32, 16, 64] {
            let k = (m as f64).log2() as usize;
            let mut acc = 0.0;
            let patterns = all_bit_patterns(k);
            for p in &patterns {
                let bits = PayloadBits::new(1, k, p.clone()).unwrap();
                let s = modulate(&bits, m).unwrap();
                acc += s[0].norm_sqr();
            }
            let avg = acc / patterns.len() as f64;
            assert!((avg - 1.0).abs() < TOL, "M={m}: average energy {avg}");
        }
    }

    #[test]
    fn modulate_demodulate_round_trips_exhaustively() {
        for &m in &[4u32, 16, 64] {
            let k = (m as f64).log2() as usize;
            for p in all_bit_patterns(k) {
                let bits = PayloadBits::new(1, k, p).unwrap();
                let s = modulate(&bits, m).unwrap();
                let back = hard_demodulate(&s, m).unwrap();
                assert_eq!(back, bits, "M={m}");
            }
        }
    }

    #[test]
    fn gray_neighbors_differ_in_one_bit() {
        // Walk the 16-QAM I axis: adjacent amplitude levels must differ in
        // exactly one bit of their 2-bit group.
        let pats = all_bit_patterns(2);
        let mut by_level: Vec<(f64, Vec<u8>)> = pats
            .into_iter()
            .map(|p| (axis_level(&p, 2), p))
            .collect();
        by_level.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        for w in by_level.windows(2) {
            let diff: usize = w[0].1.iter().zip(&w[1].1).filter(|(a, b)| a != b).count();
            assert_eq!(diff, 1, "levels {:?} and {:?}", w[0], w[1]);
        }
    }

    #[test]
    fn unsupported_order_is_a_config_error() {
        let bits = PayloadBits::new(1, 3, vec![0, 1, 0]).unwrap();
        let err = modulate(&bits, 8).unwrap_err();
        assert!(matches!(err, Error::Config(_)), "got {err}");
    }

    // -- signal chain ------------------------------------------------------

    fn identity_precoders(n: usize) -> PrecoderSet {
        PrecoderSet {
            f_rf: ComplexMatrix::identity(n),
            f_bb: ComplexMatrix::identity(n),
            w_rf: ComplexMatrix::identity(n),
            w_bb: ComplexMatrix::identity(n),
        }
    }

    #[test]
    fn identity_chain_returns_symbols() {
        let n = 2;
        let p = identity_precoders(n);
        let h = ComplexMatrix::identity(n);
        let s = vec![c(0.3, -0.4), c(-1.0, 0.25)];
        let zero = vec![c(0.0, 0.0); n];
        let r = transmit_receive(&h, &p, &s, &zero).unwrap();
        for (got, want) in r.iter().zip(&s) {
            assert!((got - want).norm() < TOL);
        }
    }

    #[test]
    fn zero_symbols_leave_combined_noise() {
        let n = 2;
        let p = identity_precoders(n);
        let h = ComplexMatrix::identity(n);
        let s = vec![c(0.0, 0.0); n];
        let noise = vec![c(0.5, -0.25), c(-0.125, 1.0)];
        let r = transmit_receive(&h, &p, &s, &noise).unwrap();
        for (got, want) in r.iter().zip(&noise) {
            assert!((got - want).norm() < TOL);
        }
    }

    #[test]
    fn transmit_receive_matches_two_step_oracle() {
        let mut rng = RngStream::new(5, 1);
        let (n_t, n_r, n_rf, n_s) = (4, 3, 2, 2);
        let h = sample_cgauss(n_r, n_t, 1.0, &mut rng).unwrap();
        let p = PrecoderSet {
            f_rf: sample_cgauss(n_t, n_rf, 1.0, &mut rng).unwrap(),
            f_bb: sample_cgauss(n_rf, n_s, 1.0, &mut rng).unwrap(),
            w_rf: sample_cgauss(n_r, n_rf, 1.0, &mut rng).unwrap(),
            w_bb: sample_cgauss(n_rf, n_s, 1.0, &mut rng).unwrap(),
        };
        let s: Vec<Complex64> = (0..n_s).map(|_| rng.cgauss(1.0)).collect();
        let n: Vec<Complex64> = (0..n_r).map(|_| rng.cgauss(1.0)).collect();

        // Oracle: scalar loops, transmit first (z = H F_RF F_BB s + n),
        // then combine with W = W_RF W_BB.
        let mut x = vec![c(0.0, 0.0); n_t];
        for i in 0..n_t {
            for a in 0..n_rf {
                for b in 0..n_s {
                    x[i] += p.f_rf.at(i, a) * p.f_bb.at(a, b) * s[b];
                }
            }
        }
        let mut z = n.clone();
        for i in 0..n_r {
            for j in 0..n_t {
                z[i] += h.at(i, j) * x[j];
            }
        }
        let mut w = vec![vec![c(0.0, 0.0); n_s]; n_r];
        for i in 0..n_r {
            for b in 0..n_s {
                for a in 0..n_rf {
                    w[i][b] += p.w_rf.at(i, a) * p.w_bb.at(a, b);
                }
            }
        }
        let mut want = vec![c(0.0, 0.0); n_s];
        for b in 0..n_s {
            for i in 0..n_r {
                want[b] += w[i][b].conj() * z[i];
            }
        }

        let got = transmit_receive(&h, &p, &s, &n).unwrap();
        for (g, w) in got.iter().zip(&want) {
            assert!((g - w).norm() < 1e-12, "got {g}, want {w}");
        }
    }

    #[test]
    fn transmit_receive_is_linear_in_symbols_and_noise() {
        let mut rng = RngStream::new(6, 2);
        let (n_t, n_r, n_rf, n_s) = (4, 4, 2, 2);
        let h = sample_cgauss(n_r, n_t, 1.0, &mut rng).unwrap();
        let p = PrecoderSet {
            f_rf: sample_cgauss(n_t, n_rf, 1.0, &mut rng).unwrap(),
            f_bb: sample_cgauss(n_rf, n_s, 1.0, &mut rng).unwrap(),
            w_rf: sample_cgauss(n_r, n_rf, 1.0, &mut rng).unwrap(),
            w_bb: sample_cgauss(n_rf, n_s, 1.0, &mut rng).unwrap(),
        };
        let s1: Vec<Complex64> = (0..n_s).map(|_| rng.cgauss(1.0)).collect();
        let s2: Vec<Complex64> = (0..n_s).map(|_| rng.cgauss(1.0)).collect();
        let n1: Vec<Complex64> = (0..n_r).map(|_| rng.cgauss(1.0)).collect();
        let n2: Vec<Complex64> = (0..n_r).map(|_| rng.cgauss(1.0)).collect();

        let sum_s: Vec<Complex64> = s1.iter().zip(&s2).map(|(a, b)| a + b).collect();
        let sum_n: Vec<Complex64> = n1.iter().zip(&n2).map(|(a, b)| a + b).collect();
        let lhs = transmit_receive(&h, &p, &sum_s, &sum_n).unwrap();
        let r1 = transmit_receive(&h, &p, &s1, &n1).unwrap();
        let r2 = transmit_receive(&h, &p, &s2, &n2).unwrap();
        for i in 0..n_s {
            assert!((lhs[i] - (r1[i] + r2[i])).norm() < 1e-12);
        }
    }

    #[test]
    fn transmit_receive_rejects_bad_shapes() {
        let p = identity_precoders(2);
        let h = ComplexMatrix::identity(2);
        let err = transmit_receive(&h, &p, &[c(1.0, 0.0)], &[c(0.0, 0.0); 2]).unwrap_err();
        assert!(matches!(err, Error::Shape { .. }), "got {err}");
    }

    #[test]
    fn equivalent_channel_identity_and_zero() {
        let mut rng = RngStream::new(7, 3);
        let h = sample_cgauss(3, 3, 1.0, &mut rng).unwrap();
        let eye = ComplexMatrix::identity(3);
        let eq = equivalent_channel(&h, &eye, &eye).unwrap();
        assert!(eq.max_abs_diff(&h).unwrap() < TOL);

        let zero = ComplexMatrix::zeros(3, 3);
        let eq0 = equivalent_channel(&zero, &eye, &eye).unwrap();
        assert!(eq0.fro_norm().unwrap() < TOL);
    }

    #[test]
    fn equivalent_channel_matches_triple_product() {
        let mut rng = RngStream::new(8, 4);
        let h = sample_cgauss(4, 6, 1.0, &mut rng).unwrap();
        let f = sample_cgauss(6, 2, 1.0, &mut rng).unwrap();
        let w = sample_cgauss(4, 3, 1.0, &mut rng).unwrap();
        let eq = equivalent_channel(&h, &f, &w).unwrap();
        let oracle = w.hermitian().matmul(&h).unwrap().matmul(&f).unwrap();
        assert!(eq.max_abs_diff(&oracle).unwrap() < TOL);
        assert_eq!(eq.dims(), (3, 2));
    }

    // -- normalize_digital -------------------------------------------------

    #[test]
    fn normalize_digital_hand_case() {
        // F_RF = (1/sqrt 2)[1,1]^T, raw F_BB = [2]:
        // F_RF*F_BB_raw = [sqrt2, sqrt2]^T has Frobenius norm 2, so the
        // normalized digital precoder is [2]*1/2 = [1] and the product power
        // lands exactly on P_T = 1.
        let inv = 1.0 / 2f64.sqrt();
        let f_rf = ComplexMatrix::new(2, 1, vec![c(inv, 0.0), c(inv, 0.0)]).unwrap();
        let raw = ComplexMatrix::new(1, 1, vec![c(2.0, 0.0)]).unwrap();
        let f_bb = normalize_digital(&f_rf, &raw, 1.0).unwrap();
        assert!((f_bb.at(0, 0) - c(1.0, 0.0)).norm() < TOL);
        let power = f_rf.matmul(&f_bb).unwrap().fro_norm_sq();
        assert!((power - 1.0).abs() < 1e-12);
    }

    #[test]
    fn normalize_digital_is_idempotent_and_scale_invariant() {
        let mut rng = RngStream::new(9, 5);
        let f_rf = sample_cgauss(4, 2, 1.0, &mut rng).unwrap();
        let raw = sample_cgauss(2, 2, 1.0, &mut rng).unwrap();
        let p_t = 1.0;
        let once = normalize_digital(&f_rf, &raw, p_t).unwrap();
        let twice = normalize_digital(&f_rf, &once, p_t).unwrap();
        assert!(twice.max_abs_diff(&once).unwrap() < 1e-12);

        let scaled = normalize_digital(&f_rf, &raw.scale_re(3.7), p_t).unwrap();
        assert!(scaled.max_abs_diff(&once).unwrap() < 1e-12);

        let power = f_rf.matmul(&once).unwrap().fro_norm_sq();
        assert!((power - p_t).abs() < 1e-12 * p_t);
    }

    #[test]
    fn normalize_digital_rejects_zero_product() {
        let f_rf = ComplexMatrix::zeros(4, 2);
        let raw = ComplexMatrix::new(2, 1, vec![c(1.0, 0.0), c(0.0, 0.0)]).unwrap();
        let err = normalize_digital(&f_rf, &raw, 1.0).unwrap_err();
        assert!(matches!(err, Error::Degenerate(_)), "got {err}");
    }

    // -- pilots ------------------------------------------------------------

    #[test]
    fn long_pilot_with_identity_rf_reads_channel_column() {
        let mut rng = RngStream::new(10, 6);
        let h = sample_cgauss(3, 3, 1.0, &mut rng).unwrap();
        let eye = ComplexMatrix::identity(3);
        // x = e1 with unit power.
        let pilots =
            ComplexMatrix::new(3, 1, vec![c(1.0, 0.0), c(0.0, 0.0), c(0.0, 0.0)]).unwrap();
        let noise = ComplexMatrix::zeros(3, 1);
        let y = pilot_rx_long(&h, &pilots, &[eye.clone()], &[eye], &noise, 1.0).unwrap();
        for i in 0..3 {
            assert!((y.at(i, 0) - h.at(i, 0)).norm() < TOL);
        }
    }

    #[test]
    fn long_pilot_matches_per_column_oracle() {
        let mut rng = RngStream::new(11, 7);
        let (n_t, n_r, n_rf_t, n_rf_r, l) = (4, 3, 2, 2, 5);
        let h = sample_cgauss(n_r, n_t, 1.0, &mut rng).unwrap();
        let mut pilots = sample_cgauss(n_rf_t, l, 1.0, &mut rng).unwrap();
        // Scale columns into the power budget.
        for j in 0..l {
            let p: f64 = (0..n_rf_t).map(|i| pilots.at(i, j).norm_sqr()).sum();
            let col: Vec<Complex64> =
                (0..n_rf_t).map(|i| pilots.at(i, j) / p.sqrt()).collect();
            pilots.set_column(j, &col);
        }
        let fs: Vec<ComplexMatrix> =
            (0..l).map(|_| sample_cgauss(n_t, n_rf_t, 1.0, &mut rng).unwrap()).collect();
        let ws: Vec<ComplexMatrix> =
            (0..l).map(|_| sample_cgauss(n_r, n_rf_r, 1.0, &mut rng).unwrap()).collect();
        let noise = sample_cgauss(n_r, l, 0.1, &mut rng).unwrap();

        let y = pilot_rx_long(&h, &pilots, &fs, &ws, &noise, 1.0).unwrap();
        assert_eq!(y.dims(), (n_rf_r, l));
        for li in 0..l {
            let x_l = ComplexMatrix::from_fn(n_rf_t, 1, |i, _| pilots.at(i, li));
            let n_l = ComplexMatrix::from_fn(n_r, 1, |i, _| noise.at(i, li));
            let want = ws[li]
                .hermitian()
                .matmul(&h.matmul(&fs[li].matmul(&x_l).unwrap()).unwrap().add(&n_l).unwrap())
                .unwrap();
            for i in 0..n_rf_r {
                assert!((y.at(i, li) - want.at(i, 0)).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn long_pilot_rejects_power_violation() {
        let h = ComplexMatrix::identity(2);
        let eye = ComplexMatrix::identity(2);
        let pilots = ComplexMatrix::new(2, 1, vec![c(2.0, 0.0), c(0.0, 0.0)]).unwrap();
        let noise = ComplexMatrix::zeros(2, 1);
        let err =
            pilot_rx_long(&h, &pilots, &[eye.clone()], &[eye], &noise, 1.0).unwrap_err();
        assert!(matches!(err, Error::Constraint(_)), "got {err}");
    }

    #[test]
    fn short_pilot_identity_and_zero_cases() {
        let mut rng = RngStream::new(12, 8);
        let h_eq = sample_cgauss(2, 2, 1.0, &mut rng).unwrap();
        let eye = ComplexMatrix::identity(2);
        let zero_noise = ComplexMatrix::zeros(2, 2);
        let y = pilot_rx_short(&h_eq, &eye, &zero_noise, 1.0).unwrap();
        assert!(y.max_abs_diff(&h_eq).unwrap() < TOL);

        let noise = sample_cgauss(2, 2, 1.0, &mut rng).unwrap();
        let y0 = pilot_rx_short(&ComplexMatrix::zeros(2, 2), &eye, &noise, 1.0).unwrap();
        assert!(y0.max_abs_diff(&noise).unwrap() < TOL);
    }

    #[test]
    fn short_pilot_matches_matmul_oracle() {
        let mut rng = RngStream::new(13, 9);
        let h_eq = sample_cgauss(2, 3, 1.0, &mut rng).unwrap();
        let mut pilots = sample_cgauss(3, 4, 1.0, &mut rng).unwrap();
        for j in 0..4 {
            let p: f64 = (0..3).map(|i| pilots.at(i, j).norm_sqr()).sum();
            let col: Vec<Complex64> = (0..3).map(|i| pilots.at(i, j) / p.sqrt()).collect();
            pilots.set_column(j, &col);
        }
        let noise = sample_cgauss(2, 4, 0.5, &mut rng).unwrap();
        let y = pilot_rx_short(&h_eq, &pilots, &noise, 1.0).unwrap();
        let oracle = h_eq.matmul(&pilots).unwrap().add(&noise).unwrap();
        assert!(y.max_abs_diff(&oracle).unwrap() < TOL);
    }

    // -- metrics -----------------------------------------------------------

    #[test]
    fn bce_single_bit_half_probability_is_ln2() {
        let labels = [PayloadBits::new(1, 1, vec![1]).unwrap()];
        let probs = [SoftBits::new(1, 1, vec![0.5]).unwrap()];
        let loss = bce_loss(&labels, &probs).unwrap();
        assert!((loss - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn bce_perfect_predictions_vanish() {
        let labels = [PayloadBits::new(2, 2, vec![1, 0, 0, 1]).unwrap()];
        let probs = [SoftBits::new(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap()];
        let loss = bce_loss(&labels, &probs).unwrap();
        assert!(loss >= 0.0);
        assert!(loss < 1e-11, "loss {loss}");
    }

    #[test]
    fn bce_matches_scalar_loop_oracle_on_2x2() {
        let labels = [
            PayloadBits::new(2, 2, vec![1, 0, 1, 1]).unwrap(),
            PayloadBits::new(2, 2, vec![0, 0, 1, 0]).unwrap(),
        ];
        let probs = [
            SoftBits::new(2, 2, vec![0.8, 0.3, 0.6, 0.9]).unwrap(),
            SoftBits::new(2, 2, vec![0.2, 0.5, 0.5, 0.1]).unwrap(),
        ];
        let mut want = 0.0;
        for (l, p) in labels.iter().zip(&probs) {
            for s in 0..2 {
                for b in 0..2 {
                    let y = f64::from(l.bit(s, b));
                    let q = p.prob(s, b);
                    want -= y * q.ln() + (1.0 - y) * (1.0 - q).ln();
                }
            }
        }
        want /= 2.0;
        let got = bce_loss(&labels, &probs).unwrap();
        assert!((got - want).abs() < 1e-12);
    }

    #[test]
    fn ber_hand_case_and_tie_rule() {
        // Only position (2,1) errs: 0.6 >= 0.5 decides 1 against label 0.
        let labels = [PayloadBits::new(2, 2, vec![1, 0, 0, 1]).unwrap()];
        let probs = [SoftBits::new(2, 2, vec![0.9, 0.2, 0.6, 0.7]).unwrap()];
        assert!((ber(&labels, &probs).unwrap() - 0.25).abs() < TOL);

        // All-0.5 probabilities decide 1 everywhere: BER = fraction of zeros.
        let labels = [PayloadBits::new(1, 4, vec![1, 0, 0, 1]).unwrap()];
        let probs = [SoftBits::new(1, 4, vec![0.5; 4]).unwrap()];
        assert!((ber(&labels, &probs).unwrap() - 0.5).abs() < TOL);
    }

    #[test]
    fn ber_is_zero_on_self_and_permutation_invariant() {
        let a = PayloadBits::new(2, 2, vec![1, 0, 1, 1]).unwrap();
        let b = PayloadBits::new(2, 2, vec![0, 0, 0, 1]).unwrap();
        let pa = SoftBits::from_hard(&a);
        let pb = SoftBits::from_hard(&b);
        assert_eq!(ber(&[a.clone()], &[pa.clone()]).unwrap(), 0.0);
        let fwd = ber(&[a.clone(), b.clone()], &[pb.clone(), pa.clone()]).unwrap();
        let rev = ber(&[b, a], &[pa, pb]).unwrap();
        assert!((fwd - rev).abs() < TOL);
    }

    #[test]
    fn metrics_reject_mismatched_batches() {
        let labels = [PayloadBits::new(1, 2, vec![0, 1]).unwrap()];
        let probs = [SoftBits::new(2, 2, vec![0.5; 4]).unwrap()];
        assert!(matches!(bce_loss(&labels, &probs).unwrap_err(), Error::Shape { .. }));
        let empty_l: [PayloadBits; 0] = [];
        let empty_p: [SoftBits; 0] = [];
        assert!(matches!(ber(&empty_l, &empty_p).unwrap_err(), Error::Shape { .. }));
    }

    #[test]
    fn identity_chain_ber_vanishes_at_high_snr() {
        // Scalar identity chain at 40 dB: QPSK errors are astronomically
        // unlikely; 1e5 symbols must come through clean (< 1e-4).
        let mut rng = RngStream::new(99, 10);
        let sigma2 = noise_variance(40.0);
        let p = identity_precoders(1);
        let h = ComplexMatrix::identity(1);
        let n_sym = 100_000;
        let mut errors = 0usize;
        for _ in 0..n_sym {
            let bits = PayloadBits::new(1, 2, vec![rng.bit(), rng.bit()]).unwrap();
            let s = modulate(&bits, 4).unwrap();
            let n = vec![rng.cgauss(sigma2)];
            let r = transmit_receive(&h, &p, &s, &n).unwrap();
            let back = hard_demodulate(&r, 4).unwrap();
            errors += back
                .as_slice()
                .iter()
                .zip(bits.as_slice())
                .filter(|(a, b)| a != b)
                .count();
        }
        let ber = errors as f64 / (2 * n_sym) as f64;
        assert!(ber < 1e-4, "ber {ber}");
    }
}
