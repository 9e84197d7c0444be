//! Sparse channel estimation by orthogonal matching pursuit.
//!
//! The clustered channel is a short sum of rank-one terms, each an outer
//! product of receive and transmit steering vectors. Put those steering
//! vectors on a fixed angular grid and the pilot observations become a
//! linear measurement of a sparse gain vector: the greedy pursuit picks the
//! strongest atom, refits all gains by least squares, and repeats on the
//! residual. This is the classical estimator the learned feedback chain is
//! compared against.

use num_complex::Complex64;

use crate::channel::{array_response, DEFAULT_SPACING};
use crate::numerics::{lstsq, ComplexMatrix};
use crate::{Error, Result};

/// Steering vectors evaluated on a uniform angle grid, one set per array
/// side. Grid angles live strictly inside (−π/2, π/2) and every column is
/// unit-norm by construction.
#[derive(Debug, Clone)]
pub struct AngularDictionary {
    angles: Vec<f64>,
    tx_steering: ComplexMatrix,
    rx_steering: ComplexMatrix,
}

impl AngularDictionary {
    /// Half-wavelength dictionary with `grid_size` angles per side.
    pub fn new(n_t: usize, n_r: usize, grid_size: usize) -> Result<Self> {
        Self::with_spacing(n_t, n_r, grid_size, DEFAULT_SPACING)
    }

    pub fn with_spacing(n_t: usize, n_r: usize, grid_size: usize, spacing: f64) -> Result<Self> {
        if grid_size == 0 {
            return Err(Error::Domain {
                op: "AngularDictionary::new",
                details: "grid needs at least one angle".into(),
            });
        }
        let angles: Vec<f64> = (0..grid_size)
            .map(|g| {
                -std::f64::consts::FRAC_PI_2
                    + std::f64::consts::PI * (g as f64 + 0.5) / grid_size as f64
            })
            .collect();
        let tx_cols: Vec<Vec<Complex64>> = angles
            .iter()
            .map(|&a| Ok(array_response(n_t, a, spacing)?.column(0)))
            .collect::<Result<_>>()?;
        let rx_cols: Vec<Vec<Complex64>> = angles
            .iter()
            .map(|&a| Ok(array_response(n_r, a, spacing)?.column(0)))
            .collect::<Result<_>>()?;
        Ok(Self {
            angles,
            tx_steering: ComplexMatrix::from_columns(&tx_cols)?,
            rx_steering: ComplexMatrix::from_columns(&rx_cols)?,
        })
    }

    /// The conventional grid density: twice the larger array size.
    pub fn default_grid_size(n_t: usize, n_r: usize) -> usize {
        2 * n_t.max(n_r)
    }

    pub fn angles(&self) -> &[f64] {
        &self.angles
    }

    pub fn len(&self) -> usize {
        self.angles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.angles.is_empty()
    }

    fn rx_atom(&self, i: usize) -> Vec<Complex64> {
        self.rx_steering.column(i)
    }

    fn tx_atom(&self, j: usize) -> Vec<Complex64> {
        self.tx_steering.column(j)
    }
}

/// Result of a pursuit: reconstructed channel, the selected grid atoms as
/// (receive index, transmit index) pairs with their fitted gains, and the
/// final measurement-domain residual norm.
#[derive(Debug, Clone)]
pub struct OmpEstimate {
    pub channel: ComplexMatrix,
    pub atoms: Vec<(usize, usize)>,
    pub gains: Vec<Complex64>,
    pub residual_norm: f64,
}

/// Estimates the channel from long-term pilot observations. `observations`
/// is the received matrix (one column per pilot), produced by the same
/// pilot/RF configuration passed alongside; the sensing operator is built
/// from that configuration and the dictionary. Greedy selection maximizes
/// the normalized residual correlation; gains are refit by least squares
/// after every selection, so the residual norm never increases. Stops after
/// `sparsity` atoms or once the residual norm falls to `noise_floor`.
pub fn omp_estimate(
    observations: &ComplexMatrix,
    pilots: &ComplexMatrix,
    rf_precoders: &[ComplexMatrix],
    rf_combiners: &[ComplexMatrix],
    dict: &AngularDictionary,
    sparsity: usize,
    noise_floor: f64,
) -> Result<OmpEstimate> {
    let l_pilots = pilots.cols();
    if sparsity == 0 {
        return Err(Error::Domain {
            op: "omp_estimate",
            details: "sparsity must be at least 1".into(),
        });
    }
    if rf_precoders.len() != l_pilots || rf_combiners.len() != l_pilots || l_pilots == 0 {
        return Err(Error::Shape {
            op: "omp_estimate",
            details: format!(
                "{l_pilots} pilots with {} precoders / {} combiners",
                rf_precoders.len(),
                rf_combiners.len()
            ),
        });
    }
    let n_rf_r = rf_combiners[0].cols();
    if observations.dims() != (n_rf_r, l_pilots) {
        return Err(Error::Shape {
            op: "omp_estimate",
            details: format!(
                "observations are {}x{}, expected {}x{}",
                observations.rows(),
                observations.cols(),
                n_rf_r,
                l_pilots
            ),
        });
    }
    let g = dict.len();
    let n_t = dict.tx_steering.rows();
    let n_r = dict.rx_steering.rows();

    // Per pilot l: u_l(i) = W_l^H a_r(θ_i) (a column per receive atom) and
    // v_l(j) = a_t(θ_j)^H F_l x_l (a scalar per transmit atom). The sensing
    // column of atom (i, j) stacks u_l(i)·v_l(j) over l.
    let mut u_blocks = Vec::with_capacity(l_pilots);
    let mut v_blocks = Vec::with_capacity(l_pilots);
    for l in 0..l_pilots {
        let w_h = rf_combiners[l].hermitian();
        if rf_combiners[l].rows() != n_r || rf_precoders[l].rows() != n_t {
            return Err(Error::Shape {
                op: "omp_estimate",
                details: format!("pilot {l} RF pair does not match the dictionary arrays"),
            });
        }
        let u_l = w_h.matmul(&dict.rx_steering)?;
        let x_l = ComplexMatrix::from_fn(pilots.rows(), 1, |i, _| pilots.at(i, l));
        let t_l = rf_precoders[l].matmul(&x_l)?;
        let v_l: Vec<Complex64> = (0..g)
            .map(|j| {
                (0..n_t)
                    .map(|a| dict.tx_steering.at(a, j).conj() * t_l.at(a, 0))
                    .sum()
            })
            .collect();
        u_blocks.push(u_l);
        v_blocks.push(v_l);
    }

    // Squared sensing-column norms, for the normalized greedy criterion.
    let mut u_norms = vec![vec![0.0f64; g]; l_pilots];
    for l in 0..l_pilots {
        for i in 0..g {
            u_norms[l][i] = (0..n_rf_r).map(|r| u_blocks[l].at(r, i).norm_sqr()).sum();
        }
    }
    let mut col_norms = vec![0.0f64; g * g];
    for l in 0..l_pilots {
        for i in 0..g {
            let un = u_norms[l][i];
            for j in 0..g {
                col_norms[i * g + j] += un * v_blocks[l][j].norm_sqr();
            }
        }
    }

    let y: Vec<Complex64> = (0..l_pilots).flat_map(|l| observations.column(l)).collect();
    let y_mat = ComplexMatrix::new(y.len(), 1, y.clone())?;
    let y_norm = y.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    if y_norm == 0.0 {
        return Ok(OmpEstimate {
            channel: ComplexMatrix::zeros(n_r, n_t),
            atoms: Vec::new(),
            gains: Vec::new(),
            residual_norm: 0.0,
        });
    }

    let mut residual = y_mat.clone();
    let mut residual_norm = y_norm;
    let mut atoms: Vec<(usize, usize)> = Vec::new();
    let mut sensing_cols: Vec<Vec<Complex64>> = Vec::new();
    let mut gains = ComplexMatrix::zeros(0, 0);

    while atoms.len() < sparsity && residual_norm > noise_floor {
        // Correlate the residual against every atom through the separable
        // structure: corr(i, j) = Σ_l (u_l(i)^H r_l) conj(v_l(j)).
        let mut corr = vec![Complex64::new(0.0, 0.0); g * g];
        for l in 0..l_pilots {
            let r_l = ComplexMatrix::from_fn(n_rf_r, 1, |r, _| residual.at(l * n_rf_r + r, 0));
            let m_l = u_blocks[l].hermitian().matmul(&r_l)?;
            for i in 0..g {
                let mi = m_l.at(i, 0);
                for j in 0..g {
                    corr[i * g + j] += mi * v_blocks[l][j].conj();
                }
            }
        }
        let mut best: Option<(usize, f64)> = None;
        for (idx, c) in corr.iter().enumerate() {
            if col_norms[idx] <= 1e-24 || atoms.contains(&(idx / g, idx % g)) {
                continue;
            }
            let score = c.norm_sqr() / col_norms[idx];
            if best.is_none_or(|(_, s)| score > s) {
                best = Some((idx, score));
            }
        }
        let Some((idx, score)) = best else { break };
        if score <= 0.0 {
            break;
        }
        let (i, j) = (idx / g, idx % g);
        atoms.push((i, j));
        sensing_cols.push(sensing_column(&u_blocks, &v_blocks, n_rf_r, i, j));

        let phi = ComplexMatrix::from_columns(&sensing_cols)?;
        gains = lstsq(&phi, &y_mat)?;
        let fitted = phi.matmul(&gains)?;
        residual = ComplexMatrix::from_fn(y.len(), 1, |r, _| y_mat.at(r, 0) - fitted.at(r, 0));
        let new_norm = residual.fro_norm()?;
        debug_assert!(
            new_norm <= residual_norm * (1.0 + 1e-9) + 1e-12,
            "OMP residual increased: {residual_norm} -> {new_norm}"
        );
        residual_norm = new_norm;
    }

    let mut channel = ComplexMatrix::zeros(n_r, n_t);
    for (k, &(i, j)) in atoms.iter().enumerate() {
        let ar = dict.rx_atom(i);
        let at = dict.tx_atom(j);
        let gain = gains.at(k, 0);
        for r in 0..n_r {
            let w = gain * ar[r];
            for t in 0..n_t {
                let v = channel.at(r, t) + w * at[t].conj();
                channel.set(r, t, v);
            }
        }
    }
    let gains = (0..atoms.len()).map(|k| gains.at(k, 0)).collect();
    Ok(OmpEstimate { channel, atoms, gains, residual_norm })
}

fn sensing_column(
    u_blocks: &[ComplexMatrix],
    v_blocks: &[Vec<Complex64>],
    n_rf_r: usize,
    i: usize,
    j: usize,
) -> Vec<Complex64> {
    let mut col = Vec::with_capacity(u_blocks.len() * n_rf_r);
    for (u_l, v_l) in u_blocks.iter().zip(v_blocks) {
        for r in 0..n_rf_r {
            col.push(u_l.at(r, i) * v_l[j]);
        }
    }
    col
}
