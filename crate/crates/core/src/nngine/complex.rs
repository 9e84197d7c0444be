//! Complex-valued graph building on top of the real tape.
//!
//! A complex matrix in the graph is a pair of same-shaped real nodes. All
//! complex arithmetic expands into real ops — `(A + jB)(C + jD)` costs four
//! real matrix products — so the backward pass never needs complex calculus:
//! the derivative of the real loss with respect to each real/imaginary part
//! is exactly what the tape already computes.
//!
//! Feature extraction (`flatten_features`) matches
//! [`ComplexMatrix::to_real_features`](crate::numerics::ComplexMatrix::to_real_features):
//! column-major scan, all real parts then all imaginary parts, so constants
//! prepared outside the graph and activations computed inside it agree
//! byte for byte.

use num_complex::Complex64;

use super::store::ParameterStore;
use super::tape::{NodeId, Tape};
use crate::numerics::ComplexMatrix;
use crate::Result;

/// A complex matrix in the graph: two same-shaped real nodes.
#[derive(Debug, Clone, Copy)]
pub struct CNode {
    pub re: NodeId,
    pub im: NodeId,
}

/// Embeds a constant complex matrix as a pair of input nodes.
pub fn constant(tape: &mut Tape, m: &ComplexMatrix) -> Result<CNode> {
    let (r, c) = m.dims();
    let re: Vec<f64> = m.data().iter().map(|z| z.re).collect();
    let im: Vec<f64> = m.data().iter().map(|z| z.im).collect();
    Ok(CNode { re: tape.input(r, c, re)?, im: tape.input(r, c, im)? })
}

/// Binds a complex parameter stored as `{name}_re` / `{name}_im`.
pub fn param_pair(tape: &mut Tape, store: &ParameterStore, name: &str) -> Result<CNode> {
    Ok(CNode {
        re: tape.param(store, &format!("{name}_re"))?,
        im: tape.param(store, &format!("{name}_im"))?,
    })
}

/// Registers a complex parameter as its two real halves.
pub fn register_pair(
    store: &mut ParameterStore,
    name: &str,
    rows: usize,
    cols: usize,
    init: &[Complex64],
) -> Result<()> {
    store.insert(&format!("{name}_re"), rows, cols, init.iter().map(|z| z.re).collect())?;
    store.insert(&format!("{name}_im"), rows, cols, init.iter().map(|z| z.im).collect())
}

/// Reads a node pair's current values back into a [`ComplexMatrix`].
pub fn read_value(tape: &Tape, node: CNode) -> Result<ComplexMatrix> {
    let (r, c) = tape.dims(node.re);
    let re = tape.value(node.re);
    let im = tape.value(node.im);
    let data: Vec<Complex64> = re.iter().zip(im).map(|(&a, &b)| Complex64::new(a, b)).collect();
    ComplexMatrix::new(r, c, data)
}

pub fn cadd(tape: &mut Tape, a: CNode, b: CNode) -> Result<CNode> {
    Ok(CNode { re: tape.add(a.re, b.re)?, im: tape.add(a.im, b.im)? })
}

pub fn csub(tape: &mut Tape, a: CNode, b: CNode) -> Result<CNode> {
    Ok(CNode { re: tape.sub(a.re, b.re)?, im: tape.sub(a.im, b.im)? })
}

/// Scales by a real constant.
pub fn cscale(tape: &mut Tape, a: CNode, c: f64) -> Result<CNode> {
    Ok(CNode { re: tape.scale(a.re, c)?, im: tape.scale(a.im, c)? })
}

/// Scales by a real 1x1 node (broadcast).
pub fn cscale_by_node(tape: &mut Tape, a: CNode, s: NodeId) -> Result<CNode> {
    Ok(CNode { re: tape.scale_by_node(a.re, s)?, im: tape.scale_by_node(a.im, s)? })
}

/// `(A + jB)(C + jD) = (AC − BD) + j(AD + BC)`.
pub fn cmatmul(tape: &mut Tape, a: CNode, b: CNode) -> Result<CNode> {
    let ac = tape.matmul(a.re, b.re)?;
    let bd = tape.matmul(a.im, b.im)?;
    let ad = tape.matmul(a.re, b.im)?;
    let bc = tape.matmul(a.im, b.re)?;
    Ok(CNode { re: tape.sub(ac, bd)?, im: tape.add(ad, bc)? })
}

/// Conjugate transpose: `(A + jB)ᴴ = Aᵀ − jBᵀ`.
pub fn chermitian(tape: &mut Tape, a: CNode) -> Result<CNode> {
    let re = tape.transpose(a.re)?;
    let imt = tape.transpose(a.im)?;
    Ok(CNode { re, im: tape.scale(imt, -1.0)? })
}

/// Squared Frobenius norm as a real 1x1 node.
pub fn cfro_norm_sq(tape: &mut Tape, a: CNode) -> Result<NodeId> {
    let rr = tape.mul(a.re, a.re)?;
    let ii = tape.mul(a.im, a.im)?;
    let s = tape.add(rr, ii)?;
    tape.sum_all(s)
}

/// Column-major flatten to a `1 x 2rc` feature row: all real parts, then all
/// imaginary parts.
pub fn flatten_features(tape: &mut Tape, a: CNode) -> Result<NodeId> {
    let (r, c) = tape.dims(a.re);
    let ret = tape.transpose(a.re)?;
    let imt = tape.transpose(a.im)?;
    let re_flat = tape.reshape(ret, 1, r * c)?;
    let im_flat = tape.reshape(imt, 1, r * c)?;
    tape.concat_cols(&[re_flat, im_flat])
}

/// Inverse of [`flatten_features`]: reads a `1 x 2rc` feature row back into
/// an `r x c` complex pair.
pub fn unflatten_features(tape: &mut Tape, features: NodeId, rows: usize, cols: usize) -> Result<CNode> {
    let re_flat = tape.slice_cols_via_reshape(features, 0, rows * cols)?;
    let im_flat = tape.slice_cols_via_reshape(features, rows * cols, rows * cols)?;
    // Column-major payload: reshape to (cols x rows) then transpose.
    let re_cm = tape.reshape(re_flat, cols, rows)?;
    let im_cm = tape.reshape(im_flat, cols, rows)?;
    Ok(CNode { re: tape.transpose(re_cm)?, im: tape.transpose(im_cm)? })
}

impl Tape {
    /// Column slice of a single-row node, implemented with the existing
    /// row-structure ops (reshape to a column, slice rows, reshape back).
    pub fn slice_cols_via_reshape(&mut self, x: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let (r, c) = self.dims(x);
        if r != 1 {
            return Err(crate::Error::Shape {
                op: "Tape::slice_cols_via_reshape",
                details: format!("expected a 1-row node, got {r}x{c}"),
            });
        }
        let as_col = self.reshape(x, c, 1)?;
        let sliced = self.slice_rows(as_col, start, len)?;
        self.reshape(sliced, 1, len)
    }
}

/// Normalizes every complex entry to unit modulus, `z / |z|`, with gradients
/// flowing through the quotient. Entries must be bounded away from zero —
/// see [`guard_unit_modulus`] for the companion that re-initializes
/// degenerate raw parameters before the graph is built.
pub fn unit_modulus(tape: &mut Tape, a: CNode) -> Result<CNode> {
    let rr = tape.mul(a.re, a.re)?;
    let ii = tape.mul(a.im, a.im)?;
    let mod_sq = tape.add(rr, ii)?;
    let modulus = tape.sqrt(mod_sq)?;
    let inv = tape.recip(modulus)?;
    Ok(CNode { re: tape.mul(a.re, inv)?, im: tape.mul(a.im, inv)? })
}

/// Re-initializes near-zero entries of a raw complex parameter pair so that
/// [`unit_modulus`] stays well-conditioned. Returns how many entries were
/// reset; each reset is logged.
pub fn guard_unit_modulus(
    store: &mut ParameterStore,
    name: &str,
    rng: &mut crate::numerics::RngStream,
) -> Result<usize> {
    const FLOOR: f64 = 1e-30;
    let re_name = format!("{name}_re");
    let im_name = format!("{name}_im");
    let n = store.get(&re_name)?.len();
    let mut reset = 0;
    for i in 0..n {
        let re = store.get(&re_name)?.value[i];
        let im = store.get(&im_name)?.value[i];
        if (re * re + im * im).sqrt() <= FLOOR {
            let phase = rng.uniform(0.0, 2.0 * std::f64::consts::PI);
            store.get_mut(&re_name)?.value[i] = phase.cos();
            store.get_mut(&im_name)?.value[i] = phase.sin();
            reset += 1;
        }
    }
    if reset > 0 {
        log::warn!("re-initialized {reset} near-zero entries of constant-modulus parameter `{name}`");
    }
    Ok(reset)
}

/// Builds a constant-modulus complex matrix from a real phase node:
/// entries `scale · e^(jφ)`.
pub fn phases_to_cnode(tape: &mut Tape, phases: NodeId, scale: f64) -> Result<CNode> {
    let cos = tape.cos(phases)?;
    let sin = tape.sin(phases)?;
    Ok(CNode { re: tape.scale(cos, scale)?, im: tape.scale(sin, scale)? })
}
