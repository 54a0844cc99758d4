use crate::error::Result;
use crate::solver::SolverState;
use crate::sparsemat::{norm2, spmv, CsrMatrix};

/// Cheap replica comparison: `| |r_a| − |r_b| | < eps1`. Any NaN fails.
pub fn d1_check(norm_a: f64, norm_b: f64, eps1: f64) -> bool {
    (norm_a - norm_b).abs() < eps1
}

/// `|b − A·x − r| / |A|_F`, the drift between the recurrence residual and
/// the true one.
pub fn residual_gap(a: &CsrMatrix, b: &[f64], state: &SolverState) -> Result<f64> {
    let ax = spmv(a, &state.x)?;
    crate::error::check_len(b.len(), ax.len())?;
    let gap: Vec<f64> = b
        .iter()
        .zip(&ax)
        .zip(&state.r)
        .map(|((b, ax), r)| b - ax - r)
        .collect();
    Ok(norm2(&gap) / a.frobenius_norm())
}

/// Residual-consistency check. Dimension errors and NaN gaps count as failure.
pub fn d2_check(a: &CsrMatrix, b: &[f64], state: &SolverState, eps2: f64) -> bool {
    residual_gap(a, b, state).is_ok_and(|gap| gap < eps2)
}

/// Overwrites `faulty` with a bit-exact copy of `healthy`.
pub fn forward_recover(healthy: &SolverState, faulty: &mut SolverState) -> Result<()> {
    faulty.copy_from(healthy)
}
