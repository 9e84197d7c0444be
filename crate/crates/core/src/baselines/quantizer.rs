//! MSE-optimal scalar quantization (Lloyd-Max).
//!
//! The classical feedback baselines quantize channel parameters and code
//! neurons scalar-by-scalar. A codebook is trained once on samples of the
//! quantity's distribution and then applied as a nearest-level lookup; the
//! alternating centroid/threshold iteration converges to a local MSE optimum
//! and its distortion never increases from one sweep to the next.

use crate::{Error, Result};

/// Largest practical codebook: 2^20 levels. Beyond this the "optimal scalar
/// quantizer" framing stops making sense and memory would balloon.
pub const MAX_BITS: u32 = 20;

/// A trained scalar quantizer: strictly increasing levels and the midpoint
/// thresholds between them.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarCodebook {
    levels: Vec<f64>,
    thresholds: Vec<f64>,
}

impl ScalarCodebook {
    /// Evenly spaced levels covering `[lo, hi]` — the fallback when a
    /// quantity's empirical distribution is degenerate and training is
    /// meaningless.
    pub fn uniform(lo: f64, hi: f64, bits: u32) -> Result<Self> {
        let n = checked_level_count(bits)?;
        if !(lo < hi) {
            return Err(Error::Domain {
                op: "ScalarCodebook::uniform",
                details: format!("need lo < hi, got [{lo}, {hi}]"),
            });
        }
        let width = (hi - lo) / n as f64;
        let levels: Vec<f64> = (0..n).map(|k| lo + width * (k as f64 + 0.5)).collect();
        Ok(Self { thresholds: midpoints(&levels), levels })
    }

    pub fn levels(&self) -> &[f64] {
        &self.levels
    }

    pub fn thresholds(&self) -> &[f64] {
        &self.thresholds
    }

    /// Nearest-level assignment. Values at a threshold go to the lower cell,
    /// values outside the support clamp to the end levels.
    pub fn quantize(&self, x: f64) -> (usize, f64) {
        let idx = self.thresholds.partition_point(|&t| x > t);
        (idx, self.levels[idx])
    }
}

/// Trains a `2^bits`-level codebook on empirical samples: alternate between
/// midpoint thresholds and per-cell centroids until the distortion change
/// drops below `tol` (relative) or `max_iters` sweeps have run.
pub fn lloyd_max_train(
    samples: &[f64],
    bits: u32,
    max_iters: usize,
    tol: f64,
) -> Result<ScalarCodebook> {
    Ok(lloyd_max_with_trace(samples, bits, max_iters, tol)?.0)
}

/// Training variant that also returns the per-sweep distortion trace, which
/// the tests use to pin the monotonicity guarantee.
pub(crate) fn lloyd_max_with_trace(
    samples: &[f64],
    bits: u32,
    max_iters: usize,
    tol: f64,
) -> Result<(ScalarCodebook, Vec<f64>)> {
    let n_levels = checked_level_count(bits)?;
    if samples.iter().any(|x| !x.is_finite()) {
        return Err(Error::Domain {
            op: "lloyd_max_train",
            details: "samples must be finite".into(),
        });
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite samples compare"));
    let distinct = count_distinct(&sorted);
    if distinct < n_levels {
        return Err(Error::Domain {
            op: "lloyd_max_train",
            details: format!("{n_levels} levels need as many distinct samples, got {distinct}"),
        });
    }

    // Seed the levels with evenly strided distinct values: with at least
    // n_levels distinct samples the stride indices are strictly increasing,
    // so the initial levels are too.
    let mut uniques = sorted.clone();
    uniques.dedup();
    let mut levels: Vec<f64> = (0..n_levels)
        .map(|k| uniques[k * uniques.len() / n_levels + (uniques.len() / n_levels) / 2])
        .collect();

    let mut trace = Vec::new();
    let mut prev_distortion = f64::INFINITY;
    for _ in 0..max_iters {
        let thresholds = midpoints(&levels);
        // One linear pass over the sorted samples per sweep: accumulate each
        // cell's mass and the distortion of the codebook as it stands.
        let mut sums = vec![0.0f64; n_levels];
        let mut counts = vec![0usize; n_levels];
        let mut distortion = 0.0f64;
        let mut cell = 0usize;
        for &x in &sorted {
            while cell < thresholds.len() && x > thresholds[cell] {
                cell += 1;
            }
            sums[cell] += x;
            counts[cell] += 1;
            distortion += (x - levels[cell]).powi(2);
        }
        distortion /= sorted.len() as f64;
        debug_assert!(
            distortion <= prev_distortion * (1.0 + 1e-12) + f64::EPSILON,
            "Lloyd-Max distortion increased: {prev_distortion} -> {distortion}"
        );
        trace.push(distortion);

        for k in 0..n_levels {
            // Empty cells keep their previous level; it still sits strictly
            // between its neighbours so the ordering survives.
            if counts[k] > 0 {
                levels[k] = sums[k] / counts[k] as f64;
            }
        }

        let drop = prev_distortion - distortion;
        if distortion == 0.0 || (drop.is_finite() && drop <= tol * prev_distortion) {
            break;
        }
        prev_distortion = distortion;
    }

    debug_assert!(levels.windows(2).all(|w| w[0] < w[1]), "levels must stay increasing");
    Ok((ScalarCodebook { thresholds: midpoints(&levels), levels }, trace))
}

fn checked_level_count(bits: u32) -> Result<usize> {
    if bits == 0 || bits > MAX_BITS {
        return Err(Error::Domain {
            op: "ScalarCodebook",
            details: format!("bits must be in 1..={MAX_BITS}, got {bits}"),
        });
    }
    Ok(1usize << bits)
}

fn midpoints(levels: &[f64]) -> Vec<f64> {
    levels.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect()
}

fn count_distinct(sorted: &[f64]) -> usize {
    let mut n = usize::from(!sorted.is_empty());
    for w in sorted.windows(2) {
        if w[1] > w[0] {
            n += 1;
        }
    }
    n
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::RngStream;

    #[test]
    fn one_bit_gaussian_levels_are_the_conditional_means() {
        let mut rng = RngStream::new(404, 0);
        let samples: Vec<f64> = (0..1 << 17).map(|_| rng.standard_normal()).collect();
        let book = lloyd_max_train(&samples, 1, 100, 1e-12).unwrap();
        // The optimal one-bit quantizer for N(0,1) sits at ±E[X | X > 0]
        // = ±sqrt(2/π) ≈ ±0.7979.
        let target = (2.0 / std::f64::consts::PI).sqrt();
        assert!((book.levels()[0] + target).abs() < 0.01, "low level {}", book.levels()[0]);
        assert!((book.levels()[1] - target).abs() < 0.01, "high level {}", book.levels()[1]);
        assert_eq!(book.thresholds().len(), 1);
    }

    #[test]
    fn symmetric_two_point_mass_is_reproduced_exactly() {
        let a = 1.375;
        let samples: Vec<f64> = (0..64).map(|i| if i % 2 == 0 { -a } else { a }).collect();
        let book = lloyd_max_train(&samples, 1, 50, 1e-12).unwrap();
        assert_eq!(book.levels(), &[-a, a]);
    }

    #[test]
    fn distortion_never_increases_across_sweeps() {
        let mut rng = RngStream::new(405, 0);
        // A deliberately skewed mixture to give the iteration real work.
        let samples: Vec<f64> = (0..4096)
            .map(|i| {
                if i % 3 == 0 {
                    3.0 + 0.2 * rng.standard_normal()
                } else {
                    rng.standard_normal()
                }
            })
            .collect();
        let (_, trace) = lloyd_max_with_trace(&samples, 3, 200, 0.0).unwrap();
        assert!(trace.len() > 2, "expected several sweeps, got {}", trace.len());
        for w in trace.windows(2) {
            assert!(w[1] <= w[0] * (1.0 + 1e-12), "distortion rose: {} -> {}", w[0], w[1]);
        }
    }

    #[test]
    fn quantize_agrees_with_brute_force_nearest_level() {
        let mut rng = RngStream::new(406, 0);
        let samples: Vec<f64> = (0..2048).map(|_| 2.0 * rng.standard_normal() - 0.3).collect();
        let book = lloyd_max_train(&samples, 4, 100, 1e-10).unwrap();
        for _ in 0..1000 {
            let x = rng.uniform(-8.0, 8.0);
            let (idx, level) = book.quantize(x);
            let brute = book
                .levels()
                .iter()
                .enumerate()
                .min_by(|(_, a), (_, b)| {
                    (x - **a).abs().partial_cmp(&(x - **b).abs()).expect("finite")
                })
                .map(|(i, _)| i)
                .expect("nonempty codebook");
            assert_eq!(idx, brute, "x = {x}");
            assert_eq!(level, book.levels()[idx]);
        }
    }

    #[test]
    fn extremes_clamp_to_end_levels() {
        let book = ScalarCodebook::uniform(-1.0, 1.0, 2).unwrap();
        assert_eq!(book.quantize(-50.0), (0, book.levels()[0]));
        assert_eq!(book.quantize(50.0), (3, book.levels()[3]));
        // A value exactly on a threshold belongs to the lower cell.
        assert_eq!(book.quantize(0.0).0, 1);
    }

    #[test]
    fn uniform_codebook_covers_the_interval_evenly() {
        let book = ScalarCodebook::uniform(-1.0, 1.0, 2).unwrap();
        assert_eq!(book.levels(), &[-0.75, -0.25, 0.25, 0.75]);
        assert_eq!(book.thresholds(), &[-0.5, 0.0, 0.5]);
    }

    #[test]
    fn too_few_distinct_samples_are_rejected() {
        let samples = [1.0, 1.0, 2.0, 2.0, 3.0];
        let err = lloyd_max_train(&samples, 2, 10, 1e-9);
        assert!(matches!(err, Err(Error::Domain { .. })));
        assert!(lloyd_max_train(&[], 1, 10, 1e-9).is_err());
        assert!(lloyd_max_train(&[1.0, 2.0], 0, 10, 1e-9).is_err());
    }
}
