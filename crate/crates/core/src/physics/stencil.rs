//! Finite-difference read-outs expressed as constant linear maps over the
//! network outputs of a token batch.

use crate::autodiff::SparseMatrix;
use crate::error::{Error, Result};
use crate::sampling::SequenceBatch;

/// Rows that turn the outputs of one `K x T` neighborhood into `∂ū/∂t̄`
/// and `∂²ū/∂x̄²` at every interior stencil center.
///
/// The time derivative is the forward difference between steps `j` and
/// `j+1`; the curvature is the central three-point difference averaged over
/// the same two steps, so both are centered at `t̄_j + Δt̄/2`.
pub fn push_pde_rows(dt_map: &mut SparseMatrix, dxx_map: &mut SparseMatrix, seq: &SequenceBatch, offset: usize) -> Result<()> {
    if seq.k < 3 || seq.t < 2 {
        return Err(Error::invalid(format!(
            "PDE residual needs K >= 3 and T >= 2, got K={} T={}",
            seq.k, seq.t
        )));
    }
    let idx = |k: usize, j: usize| offset + seq.index(k, j);
    let (it, ix2) = (1.0 / seq.dt, 0.5 / (seq.dx * seq.dx));
    for j in 0..seq.t - 1 {
        for k in 1..seq.k - 1 {
            dt_map.push_row(&[(idx(k, j + 1), it), (idx(k, j), -it)]);
            dxx_map.push_row(&[
                (idx(k - 1, j), ix2),
                (idx(k, j), -2.0 * ix2),
                (idx(k + 1, j), ix2),
                (idx(k - 1, j + 1), ix2),
                (idx(k, j + 1), -2.0 * ix2),
                (idx(k + 1, j + 1), ix2),
            ]);
        }
    }
    Ok(())
}

/// Number of residual rows contributed by one neighborhood.
pub fn pde_rows(seq: &SequenceBatch) -> usize {
    (seq.k.saturating_sub(2)) * (seq.t.saturating_sub(1))
}

/// Second-order one-sided first derivative at `columns[0]`, with
/// `columns[1]`, `columns[2]` at one and two steps of size `h` away in the
/// direction `dir` (+1 forward, -1 backward).
pub fn one_sided_slope(columns: [usize; 3], h: f64, dir: f64) -> [(usize, f64); 3] {
    let c = dir / (2.0 * h);
    [(columns[0], -3.0 * c), (columns[1], 4.0 * c), (columns[2], -c)]
}

/// Pointwise residuals `ū_t − ᾱ·ū_xx − s` for a field sampled on one
/// neighborhood.
pub fn pde_residuals_from_values(u: &[f64], seq: &SequenceBatch, alpha: f64, source_rate: f64) -> Result<Vec<f64>> {
    if u.len() != seq.len() {
        return Err(Error::invalid(format!("{} values for {} tokens", u.len(), seq.len())));
    }
    let n = seq.len();
    let mut dt = SparseMatrix::new(n);
    let mut dxx = SparseMatrix::new(n);
    push_pde_rows(&mut dt, &mut dxx, seq, 0)?;
    let a = dt.apply_vec(u);
    let b = dxx.apply_vec(u);
    Ok(a.iter().zip(&b).map(|(ut, uxx)| ut - alpha * uxx - source_rate).collect())
}
