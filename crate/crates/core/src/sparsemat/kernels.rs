use super::CsrMatrix;
use crate::error::{check_len, Result};

/// `A·v`, accumulating each row in ascending column order.
pub fn spmv(a: &CsrMatrix, v: &[f64]) -> Result<Vec<f64>> {
    let mut out = vec![0.0; a.n()];
    spmv_into(a, v, &mut out)?;
    Ok(out)
}

pub fn spmv_into(a: &CsrMatrix, v: &[f64], out: &mut [f64]) -> Result<()> {
    check_len(a.n(), v.len())?;
    check_len(a.n(), out.len())?;
    let (row_ptr, cols, vals) = (a.row_ptr(), a.col_idx(), a.values());
    for (row, y) in out.iter_mut().enumerate() {
        let mut acc = 0.0;
        for k in row_ptr[row]..row_ptr[row + 1] {
            acc += vals[k] * v[cols[k]];
        }
        *y = acc;
    }
    Ok(())
}

pub fn dot(x: &[f64], y: &[f64]) -> Result<f64> {
    check_len(x.len(), y.len())?;
    Ok(x.iter().zip(y).fold(0.0, |acc, (a, b)| acc + a * b))
}

/// Euclidean norm.
///
/// Entries are scaled by a power of two so tiny or huge values neither
/// underflow nor overflow when squared, and the sum of squares is carried in
/// compensated (double-double) form before the square root.
pub fn norm2(v: &[f64]) -> f64 {
    let mut amax = 0.0f64;
    for x in v {
        if x.is_nan() {
            return f64::NAN;
        }
        amax = amax.max(x.abs());
    }
    if amax == 0.0 || amax.is_infinite() {
        return amax;
    }
    let exp = ((amax.to_bits() >> 52) & 0x7ff) as i32 - 1023;
    let scale = pow2(-exp);

    let (mut hi, mut lo) = (0.0f64, 0.0f64);
    for x in v {
        let y = x * scale;
        let p = y * y;
        let p_err = y.mul_add(y, -p);
        let s = hi + p;
        let t = s - hi;
        lo += (hi - (s - t)) + (p - t) + p_err;
        hi = s;
    }
    let sum = hi + lo;
    let sum_err = lo - (sum - hi);
    let root = sum.sqrt();
    let root = root + ((-root).mul_add(root, sum) + sum_err) / (2.0 * root);
    root / scale
}

/// `2^k` for `k` in `-1023..=1023`.
fn pow2(k: i32) -> f64 {
    debug_assert!((-1023..=1023).contains(&k));
    if k >= -1022 {
        f64::from_bits(((k + 1023) as u64) << 52)
    } else {
        f64::from_bits(1u64 << 51)
    }
}

/// `y ← y + alpha·x`
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) -> Result<()> {
    check_len(x.len(), y.len())?;
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
    Ok(())
}

/// `y ← x + beta·y` (the search-direction update).
pub fn xpby(x: &[f64], beta: f64, y: &mut [f64]) -> Result<()> {
    check_len(x.len(), y.len())?;
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi = xi + beta * *yi;
    }
    Ok(())
}

/// `out ← x − y`
pub fn sub(x: &[f64], y: &[f64], out: &mut [f64]) -> Result<()> {
    check_len(x.len(), y.len())?;
    check_len(x.len(), out.len())?;
    for ((o, a), b) in out.iter_mut().zip(x).zip(y) {
        *o = a - b;
    }
    Ok(())
}

pub fn copy(src: &[f64], dst: &mut [f64]) -> Result<()> {
    check_len(src.len(), dst.len())?;
    dst.copy_from_slice(src);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;
    use crate::sparsemat::gen_poisson2d;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Error-free product `a·b = hi + lo`.
    fn two_prod(a: f64, b: f64) -> (f64, f64) {
        let hi = a * b;
        (hi, a.mul_add(b, -hi))
    }

    /// Exact running sum as a non-overlapping expansion (Shewchuk's
    /// partials, as in Python's `math.fsum`).
    fn expansion_add(partials: &mut Vec<f64>, mut x: f64) {
        let mut i = 0;
        for k in 0..partials.len() {
            let mut y = partials[k];
            if x.abs() < y.abs() {
                std::mem::swap(&mut x, &mut y);
            }
            let hi = x + y;
            let lo = y - (hi - x);
            if lo != 0.0 {
                partials[i] = lo;
                i += 1;
            }
            x = hi;
        }
        partials.truncate(i);
        partials.push(x);
    }

    /// Exact `sum x_i·y_i`, returned as `(rounded, remainder)`.
    fn exact_dot(x: &[f64], y: &[f64]) -> (f64, f64) {
        let mut partials = Vec::new();
        for (a, b) in x.iter().zip(y) {
            let (hi, lo) = two_prod(*a, *b);
            expansion_add(&mut partials, hi);
            expansion_add(&mut partials, lo);
        }
        let total: f64 = partials.iter().rev().sum();
        let mut rest = partials.clone();
        expansion_add(&mut rest, -total);
        (total, rest.iter().sum())
    }

    fn ulp_distance(a: f64, b: f64) -> u64 {
        (a.to_bits() as i64 - b.to_bits() as i64).unsigned_abs()
    }

    fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.random::<f64>()).collect()
    }

    #[test]
    fn spmv_identity_and_diagonal() {
        assert_eq!(
            spmv(&CsrMatrix::identity(3), &[1.0, 2.0, 3.0]).unwrap(),
            vec![1.0, 2.0, 3.0]
        );
        assert_eq!(
            spmv(&CsrMatrix::from_diagonal(&[2.0, 2.0]), &[3.0, -1.0]).unwrap(),
            vec![6.0, -2.0]
        );
    }

    #[test]
    fn spmv_matches_dense_on_poisson() {
        let a = gen_poisson2d(3).unwrap();
        let ones = vec![1.0; 9];
        let dense = a.to_dense();
        let expected: Vec<f64> = dense.iter().map(|row| row.iter().sum()).collect();
        let got = spmv(&a, &ones).unwrap();
        assert_eq!(got, expected);
        // center of the 3x3 grid has all four neighbors
        assert_eq!(got[4], 0.0);
        assert_eq!(got[0], 2.0);
    }

    #[test]
    fn spmv_dimension_mismatch() {
        let err = spmv(&CsrMatrix::identity(3), &[1.0]).unwrap_err();
        assert!(matches!(
            err,
            Error::DimensionMismatch {
                expected: 3,
                actual: 1
            }
        ));
    }

    #[test]
    fn small_kernels() {
        assert_eq!(dot(&[1.0, 2.0], &[3.0, 4.0]).unwrap(), 11.0);
        let mut y = vec![0.0, 1.0];
        axpy(2.0, &[1.0, 1.0], &mut y).unwrap();
        assert_eq!(y, vec![2.0, 3.0]);
        assert_eq!(norm2(&[0.0, 0.0, 0.0]), 0.0);
        assert_eq!(norm2(&[3.0, 4.0]), 5.0);
        assert!(dot(&[1.0], &[1.0, 2.0]).is_err());
        assert!(axpy(1.0, &[1.0], &mut [0.0, 0.0]).is_err());
    }

    #[test]
    fn norm2_within_one_ulp_of_compensated_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let v: Vec<f64> = (0..100).map(|_| rng.random_range(-1.0..1.0)).collect();
            let (hi, lo) = exact_dot(&v, &v);
            let root = hi.sqrt();
            // one Newton step on the exact sum of squares
            let reference = root + ((-root).mul_add(root, hi) + lo) / (2.0 * root);
            assert!(
                ulp_distance(norm2(&v), reference) <= 1,
                "{} vs {}",
                norm2(&v),
                reference
            );
        }
    }

    #[test]
    fn norm2_extreme_magnitudes() {
        assert_eq!(norm2(&[3e-300, 4e-300]), 5e-300);
        assert_eq!(norm2(&[3e300, 4e300]), 5e300);
        assert_eq!(norm2(&[f64::MIN_POSITIVE / 8.0]), f64::MIN_POSITIVE / 8.0);
        assert!(norm2(&[1.0, f64::NAN]).is_nan());
        assert_eq!(norm2(&[1.0, f64::NEG_INFINITY]), f64::INFINITY);
    }

    #[test]
    fn dot_close_to_compensated_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let x = random_vec(&mut rng, 1000);
            let y = random_vec(&mut rng, 1000);
            let (reference, _) = exact_dot(&x, &y);
            let got = dot(&x, &y).unwrap();
            assert!(((got - reference) / reference).abs() <= 1e-12);
        }
    }

    proptest! {
        #[test]
        fn kernels_are_bit_deterministic(v in prop::collection::vec(-1e3f64..1e3, 1..64)) {
            let w: Vec<f64> = v.iter().rev().copied().collect();
            prop_assert_eq!(dot(&v, &w).unwrap().to_bits(), dot(&v, &w).unwrap().to_bits());
            prop_assert_eq!(norm2(&v).to_bits(), norm2(&v.clone()).to_bits());
            prop_assert!(dot(&v, &v).unwrap() >= 0.0);
            let a = CsrMatrix::from_diagonal(&w);
            let first: Vec<u64> = spmv(&a, &v).unwrap().iter().map(|x| x.to_bits()).collect();
            let second: Vec<u64> = spmv(&a.clone(), &v).unwrap().iter().map(|x| x.to_bits()).collect();
            prop_assert_eq!(first, second);
        }
    }
}
