//! Link-level error rates for the classical precoding chain.
//!
//! The learned pipeline demodulates with a network; the classical baselines
//! use the textbook receiver instead: form the end-to-end effective channel
//! (analog and digital stages on both sides), zero-force it, and make hard
//! nearest-point decisions. Monte Carlo over payloads and noise gives the
//! bit error rate a given precoder design actually delivers.

use num_complex::Complex64;

use crate::numerics::{lstsq, ComplexMatrix, RngStream};
use crate::phy::{self, PayloadBits, PrecoderSet};
use crate::Result;

/// End-to-end effective channel `W_BB^H W_RF^H H F_RF F_BB`, the
/// streams-by-streams matrix the equalizer sees.
pub fn effective_channel(h: &ComplexMatrix, p: &PrecoderSet) -> Result<ComplexMatrix> {
    let tx = p.f_rf.matmul(&p.f_bb)?;
    let rx = p.w_rf.matmul(&p.w_bb)?;
    rx.hermitian().matmul(h)?.matmul(&tx)
}

/// Zero-forcing equalization of one received vector. Uses the least-squares
/// pseudo-inverse, so a rank-deficient effective channel degrades (with a
/// logged warning from the solver) instead of crashing.
pub fn zf_equalize(effective: &ComplexMatrix, received: &[Complex64]) -> Result<Vec<Complex64>> {
    let r = ComplexMatrix::from_fn(received.len(), 1, |i, _| received[i]);
    Ok(lstsq(effective, &r)?.column(0))
}

/// Bit errors and bit count from running `n_payloads` random symbols over
/// one channel with one precoder design. The design may come from perfect
/// CSI or from an estimate; the signal always passes through the true `h`.
pub fn link_errors(
    h: &ComplexMatrix,
    design: &PrecoderSet,
    m: u32,
    noise_variance: f64,
    n_payloads: usize,
    rng: &mut RngStream,
) -> Result<(u64, u64)> {
    let n_streams = design.f_bb.cols();
    let bits_per_symbol = (m.trailing_zeros()) as usize;
    let geff = effective_channel(h, design)?;
    let mut errors = 0u64;
    let mut total = 0u64;
    for _ in 0..n_payloads {
        let bits: Vec<u8> = (0..n_streams * bits_per_symbol).map(|_| rng.bit()).collect();
        let payload = PayloadBits::new(n_streams, bits_per_symbol, bits)?;
        let s = phy::modulate(&payload, m)?;
        let noise: Vec<Complex64> = (0..h.rows()).map(|_| rng.cgauss(noise_variance)).collect();
        let received = phy::transmit_receive(h, design, &s, &noise)?;
        let equalized = zf_equalize(&geff, &received)?;
        let decided = phy::hard_demodulate(&equalized, m)?;
        errors += payload
            .as_slice()
            .iter()
            .zip(decided.as_slice())
            .filter(|(a, b)| a != b)
            .count() as u64;
        total += (n_streams * bits_per_symbol) as u64;
    }
    Ok((errors, total))
}
