//! Poisson-stencil test matrices (lexicographic grid ordering).

use super::CsrMatrix;
use crate::error::{Error, Result};

/// 5-point Laplacian on a `k × k` grid with Dirichlet boundary; `n = k²`.
pub fn gen_poisson2d(k: usize) -> Result<CsrMatrix> {
    check_side(k)?;
    stencil(&[k, k], 4.0)
}

/// 7-point Laplacian on a `k × k × k` grid; `n = k³`.
pub fn gen_poisson3d(k: usize) -> Result<CsrMatrix> {
    check_side(k)?;
    stencil(&[k, k, k], 6.0)
}

fn check_side(k: usize) -> Result<()> {
    if k < 2 {
        return Err(Error::InvalidArgument(format!(
            "grid side must be at least 2, got {k}"
        )));
    }
    Ok(())
}

fn stencil(dims: &[usize], diag: f64) -> Result<CsrMatrix> {
    let n: usize = dims.iter().product();
    // stride of each axis, slowest first
    let strides: Vec<usize> = (0..dims.len())
        .map(|a| dims[a + 1..].iter().product())
        .collect();
    let mut triplets = Vec::with_capacity(n * (2 * dims.len() + 1));
    for i in 0..n {
        triplets.push((i, i, diag));
        for (axis, &stride) in strides.iter().enumerate() {
            let coord = (i / stride) % dims[axis];
            if coord > 0 {
                triplets.push((i, i - stride, -1.0));
            }
            if coord + 1 < dims[axis] {
                triplets.push((i, i + stride, -1.0));
            }
        }
    }
    CsrMatrix::from_triplets(n, triplets)
}
