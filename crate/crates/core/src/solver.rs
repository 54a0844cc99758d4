//! CG and Jacobi-preconditioned CG iterations over an explicit state, plus
//! checkpoint capture and restore.

use crate::error::{check_len, Error, Result};
use crate::sparsemat::{axpy, dot, norm2, spmv, spmv_into, xpby, CsrMatrix, DenseVector};

/// Everything one replica carries from one iteration to the next.
#[derive(Debug, Clone)]
pub struct SolverState {
    pub iter: usize,
    pub x: DenseVector,
    pub r: DenseVector,
    pub p: DenseVector,
    /// `A·p` scratch from the latest step.
    pub q: DenseVector,
    /// Preconditioned residual; only present for PCG.
    pub z: Option<DenseVector>,
    /// `<r,r>` for CG, `<r,z>` for PCG.
    pub rho: f64,
    pub res_norm: f64,
}

fn bits_eq(a: &[f64], b: &[f64]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
}

fn opt_bits_eq(a: &Option<DenseVector>, b: &Option<DenseVector>) -> bool {
    match (a, b) {
        (Some(a), Some(b)) => bits_eq(a, b),
        (None, None) => true,
        _ => false,
    }
}

impl SolverState {
    pub fn n(&self) -> usize {
        self.x.len()
    }

    /// Field-by-field comparison of the binary64 bit patterns.
    pub fn bit_eq(&self, other: &SolverState) -> bool {
        self.iter == other.iter
            && self.rho.to_bits() == other.rho.to_bits()
            && self.res_norm.to_bits() == other.res_norm.to_bits()
            && bits_eq(&self.x, &other.x)
            && bits_eq(&self.r, &other.r)
            && bits_eq(&self.p, &other.p)
            && bits_eq(&self.q, &other.q)
            && opt_bits_eq(&self.z, &other.z)
    }

    /// Overwrites `self` with a deep copy of `src`, reusing allocations.
    pub fn copy_from(&mut self, src: &SolverState) -> Result<()> {
        check_len(self.n(), src.n())?;
        self.iter = src.iter;
        self.x.copy_from_slice(&src.x);
        self.r.copy_from_slice(&src.r);
        self.p.copy_from_slice(&src.p);
        self.q.copy_from_slice(&src.q);
        self.z.clone_from(&src.z);
        self.rho = src.rho;
        self.res_norm = src.res_norm;
        Ok(())
    }
}

/// `M = diag(A)`, applied as an elementwise multiply by the inverse diagonal.
#[derive(Debug, Clone)]
pub struct JacobiPreconditioner {
    inv_diag: DenseVector,
}

impl JacobiPreconditioner {
    pub fn new(a: &CsrMatrix) -> Result<Self> {
        let diag = a.diagonal();
        if let Some((i, d)) = diag
            .iter()
            .enumerate()
            .find(|(_, d)| !(**d > 0.0 && d.is_finite()))
        {
            return Err(Error::InvalidMatrix(format!(
                "Jacobi preconditioner needs a positive diagonal, A[{i}][{i}] = {d}"
            )));
        }
        Ok(Self {
            inv_diag: diag.iter().map(|d| 1.0 / d).collect(),
        })
    }

    pub fn inv_diag(&self) -> &[f64] {
        &self.inv_diag
    }

    pub fn apply(&self, r: &[f64], z: &mut [f64]) -> Result<()> {
        check_len(self.inv_diag.len(), r.len())?;
        check_len(r.len(), z.len())?;
        for ((zi, ri), di) in z.iter_mut().zip(r).zip(&self.inv_diag) {
            *zi = ri * di;
        }
        Ok(())
    }
}

pub fn init_state(
    a: &CsrMatrix,
    b: &[f64],
    x0: &[f64],
    precond: Option<&JacobiPreconditioner>,
) -> Result<SolverState> {
    let n = a.n();
    check_len(n, b.len())?;
    check_len(n, x0.len())?;
    let ax = spmv(a, x0)?;
    let r: DenseVector = b.iter().zip(&ax).map(|(bi, axi)| bi - axi).collect();
    let (p, z, rho) = match precond {
        Some(m) => {
            let mut z = vec![0.0; n];
            m.apply(&r, &mut z)?;
            let rho = dot(&r, &z)?;
            (z.clone(), Some(z), rho)
        }
        None => (r.clone(), None, dot(&r, &r)?),
    };
    let res_norm = norm2(&r);
    Ok(SolverState {
        iter: 0,
        x: x0.to_vec(),
        r,
        p,
        q: vec![0.0; n],
        z,
        rho,
        res_norm,
    })
}

/// One unpreconditioned CG iteration.
pub fn cg_step(state: &mut SolverState, a: &CsrMatrix) -> Result<()> {
    step(state, a, None)
}

/// One Jacobi-preconditioned CG iteration.
pub fn pcg_step(state: &mut SolverState, a: &CsrMatrix, m: &JacobiPreconditioner) -> Result<()> {
    step(state, a, Some(m))
}

/// Dispatches to CG or PCG depending on `precond`.
pub fn step(
    state: &mut SolverState,
    a: &CsrMatrix,
    precond: Option<&JacobiPreconditioner>,
) -> Result<()> {
    check_len(a.n(), state.n())?;
    let iter = state.iter;
    spmv_into(a, &state.p, &mut state.q)?;
    let pq = dot(&state.p, &state.q)?;
    if !(pq > 0.0) {
        return Err(Error::Breakdown {
            iter,
            reason: "<p, A·p> is not positive",
        });
    }
    let alpha = state.rho / pq;
    axpy(alpha, &state.p, &mut state.x)?;
    axpy(-alpha, &state.q, &mut state.r)?;
    let rho_next = match (precond, state.z.as_mut()) {
        (Some(m), Some(z)) => {
            m.apply(&state.r, z)?;
            dot(&state.r, z)?
        }
        (None, None) => dot(&state.r, &state.r)?,
        _ => {
            return Err(Error::InvalidArgument(
                "state and preconditioner disagree on whether z is tracked".into(),
            ))
        }
    };
    if !(rho_next >= 0.0) {
        return Err(Error::Breakdown {
            iter,
            reason: "rho is negative or NaN",
        });
    }
    let beta = rho_next / state.rho;
    let direction = state.z.as_ref().unwrap_or(&state.r);
    xpby(direction, beta, &mut state.p)?;
    state.rho = rho_next;
    state.res_norm = norm2(&state.r);
    state.iter += 1;
    Ok(())
}

/// Relative stopping test `|r| <= tol·|b|` (inclusive).
pub fn converged(state: &SolverState, b_norm: f64, tol: f64) -> bool {
    state.res_norm <= tol * b_norm
}

/// Snapshot used for rollback recovery. Holds everything but the `q` scratch.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    iter: usize,
    x: DenseVector,
    r: DenseVector,
    p: DenseVector,
    z: Option<DenseVector>,
    rho: f64,
}

impl Checkpoint {
    pub fn iter(&self) -> usize {
        self.iter
    }

    pub fn x(&self) -> &[f64] {
        &self.x
    }

    /// True if `state` holds exactly the saved iterate, with `res_norm`
    /// consistent with the saved residual.
    pub fn matches(&self, state: &SolverState) -> bool {
        state.iter == self.iter
            && state.rho.to_bits() == self.rho.to_bits()
            && state.res_norm.to_bits() == norm2(&self.r).to_bits()
            && bits_eq(&state.x, &self.x)
            && bits_eq(&state.r, &self.r)
            && bits_eq(&state.p, &self.p)
            && opt_bits_eq(&state.z, &self.z)
    }
}

pub fn save_checkpoint(state: &SolverState) -> Checkpoint {
    Checkpoint {
        iter: state.iter,
        x: state.x.clone(),
        r: state.r.clone(),
        p: state.p.clone(),
        z: state.z.clone(),
        rho: state.rho,
    }
}

pub fn restore_checkpoint(state: &mut SolverState, ckpt: &Checkpoint) -> Result<()> {
    check_len(ckpt.x.len(), state.n())?;
    state.iter = ckpt.iter;
    state.x.copy_from_slice(&ckpt.x);
    state.r.copy_from_slice(&ckpt.r);
    state.p.copy_from_slice(&ckpt.p);
    state.z.clone_from(&ckpt.z);
    state.rho = ckpt.rho;
    state.res_norm = norm2(&state.r);
    Ok(())
}

/// Outcome of [`solve`].
#[derive(Debug, Clone)]
pub struct Solution {
    pub state: SolverState,
    pub converged: bool,
}

/// Iterates from `x0` until `|r| <= tol·|b|` or `max_iter` steps.
pub fn solve(
    a: &CsrMatrix,
    b: &[f64],
    x0: &[f64],
    precond: Option<&JacobiPreconditioner>,
    tol: f64,
    max_iter: usize,
) -> Result<Solution> {
    let b_norm = norm2(b);
    let mut state = init_state(a, b, x0, precond)?;
    while !converged(&state, b_norm, tol) {
        if state.iter >= max_iter {
            return Ok(Solution {
                state,
                converged: false,
            });
        }
        step(&mut state, a, precond)?;
    }
    Ok(Solution {
        state,
        converged: true,
    })
}
