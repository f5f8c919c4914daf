//! Dense linear-algebra kernels: thin SVD, small dense eigensolver and an
//! SVD-based least-squares solve.
//!
//! Factorizations are delegated to `nalgebra`; this module pins down the
//! conventions the rest of the crate relies on (descending singular values,
//! a deterministic sign per singular pair, eigenvalue ordering, and the
//! pseudoinverse cutoff).

use std::cmp::Ordering;
use std::fmt;

use nalgebra::{Complex, ComplexField, DMatrix, DVector, RealField, Schur, SVD};
use num_traits::{FromPrimitive, ToPrimitive};

use crate::error::{DmdError, Result};

/// Floating-point scalar the numerical core is generic over.
pub trait Real:
    RealField
    + Copy
    + FromPrimitive
    + ToPrimitive
    + fmt::Display
    + fmt::LowerExp
    + Send
    + Sync
    + 'static
{
    /// Converts an `f64` constant into this scalar type.
    fn lit(x: f64) -> Self {
        <Self as FromPrimitive>::from_f64(x).expect("f64 literal representable")
    }

    fn as_f64(self) -> f64 {
        ToPrimitive::to_f64(&self).expect("scalar convertible to f64")
    }

    fn from_count(n: usize) -> Self {
        <Self as FromPrimitive>::from_usize(n).expect("count representable")
    }
}

impl Real for f32 {}
impl Real for f64 {}

pub type C<T> = Complex<T>;

/// Relative cutoff below which singular values are ignored by [`pseudoinverse_apply`].
pub const PINV_RELATIVE_CUTOFF: f64 = 1e-12;

const MAX_SWEEPS: usize = 10_000;

/// Thin singular value decomposition `A = U diag(s) V*`.
#[derive(Debug, Clone)]
pub struct SvdResult<T: Real> {
    pub u: DMatrix<T>,
    pub singular_values: DVector<T>,
    pub v: DMatrix<T>,
}

impl<T: Real> SvdResult<T> {
    pub fn rank_len(&self) -> usize {
        self.singular_values.len()
    }

    /// Keeps the leading `r` singular triplets.
    pub fn truncate(&self, r: usize) -> SvdResult<T> {
        let r = r.min(self.rank_len());
        SvdResult {
            u: self.u.columns(0, r).into_owned(),
            singular_values: self.singular_values.rows(0, r).into_owned(),
            v: self.v.columns(0, r).into_owned(),
        }
    }
}

/// Eigenvalues and matching unit-norm eigenvectors of a small dense matrix.
#[derive(Debug, Clone)]
pub struct EigResult<T: Real> {
    pub eigenvalues: Vec<C<T>>,
    /// Column `k` pairs with `eigenvalues[k]`.
    pub eigenvectors: DMatrix<C<T>>,
}

/// Returns an error for the first non-finite entry of `a`.
pub fn check_finite<T: Real>(a: &DMatrix<T>) -> Result<()> {
    for j in 0..a.ncols() {
        for i in 0..a.nrows() {
            if !a[(i, j)].is_finite() {
                return Err(DmdError::NonFinite { row: i, col: j });
            }
        }
    }
    Ok(())
}

/// Thin SVD with singular values in descending order and, for every column,
/// the entry of largest magnitude in `U` made positive (the matching column
/// of `V` is flipped with it).
pub fn thin_svd<T: Real>(a: &DMatrix<T>) -> Result<SvdResult<T>> {
    let (m, n) = a.shape();
    if m == 0 || n == 0 {
        return Err(DmdError::Shape {
            expected: "non-empty matrix".into(),
            got: format!("{m}x{n}"),
        });
    }
    check_finite(a)?;

    let fail = || DmdError::NumericalFailure {
        what: "thin SVD",
        rows: m,
        cols: n,
    };

    let (mut u, s, mut v) = if m >= n {
        // Tall: reduce to the square triangular factor first.
        let (q, r) = if m > n {
            let qr = a.clone().qr();
            (Some(qr.q()), qr.r())
        } else {
            (None, a.clone())
        };
        let svd = SVD::try_new(r, true, true, T::default_epsilon(), MAX_SWEEPS).ok_or_else(fail)?;
        let u_small = svd.u.ok_or_else(fail)?;
        let v = svd.v_t.ok_or_else(fail)?.transpose();
        let u = match q {
            Some(q) => q * u_small,
            None => u_small,
        };
        (u, svd.singular_values, v)
    } else {
        let t = thin_svd(&a.transpose())?;
        (t.v, t.singular_values, t.u)
    };

    // nalgebra already sorts, but the QR path composes factors, so re-sort.
    let k = s.len();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&i, &j| {
        s[j].partial_cmp(&s[i])
            .unwrap_or(Ordering::Equal)
            .then(i.cmp(&j))
    });
    if order.iter().enumerate().any(|(p, &i)| p != i) {
        u = DMatrix::from_fn(u.nrows(), k, |r, c| u[(r, order[c])]);
        v = DMatrix::from_fn(v.nrows(), k, |r, c| v[(r, order[c])]);
    }
    let singular_values = DVector::from_fn(k, |i, _| s[order[i]]);

    for j in 0..k {
        let col = u.column(j);
        let mut best = 0;
        for i in 1..col.len() {
            if col[i].abs() > col[best].abs() {
                best = i;
            }
        }
        if col[best] < T::zero() {
            u.column_mut(j).neg_mut();
            v.column_mut(j).neg_mut();
        }
    }

    Ok(SvdResult {
        u,
        singular_values,
        v,
    })
}

/// Eigendecomposition of a small real square matrix.
///
/// Eigenvalues come back sorted by descending modulus, ties broken by
/// descending imaginary part. Eigenvectors have unit 2-norm and their entry of
/// largest magnitude is real and positive.
pub fn eig_dense<T: Real>(a: &DMatrix<T>) -> Result<EigResult<T>> {
    let ac = a.map(|x| C::new(x, T::zero()));
    eig_complex(&ac)
}

/// Eigendecomposition of a small complex square matrix (same conventions as [`eig_dense`]).
pub fn eig_complex<T: Real>(a: &DMatrix<C<T>>) -> Result<EigResult<T>> {
    let n = a.nrows();
    if n == 0 || a.ncols() != n {
        return Err(DmdError::Shape {
            expected: "non-empty square matrix".into(),
            got: format!("{}x{}", a.nrows(), a.ncols()),
        });
    }
    for x in a.iter() {
        if !(x.re.is_finite() && x.im.is_finite()) {
            return Err(DmdError::NumericalFailure {
                what: "eigendecomposition (non-finite input)",
                rows: n,
                cols: n,
            });
        }
    }
    let fail = || DmdError::NumericalFailure {
        what: "eigendecomposition",
        rows: n,
        cols: n,
    };

    let schur = Schur::try_new(a.clone(), T::default_epsilon(), MAX_SWEEPS).ok_or_else(fail)?;
    let (q, t) = schur.unpack();

    // Complex Schur form must be upper triangular.
    let scale = t
        .iter()
        .map(|z| z.modulus())
        .fold(T::zero(), |acc, x| acc.max(x));
    for j in 0..n {
        for i in (j + 1)..n {
            if t[(i, j)].modulus() > T::lit(1e-10) * scale.max(T::one()) {
                return Err(fail());
            }
        }
    }

    let values: Vec<C<T>> = (0..n).map(|k| t[(k, k)]).collect();
    let small = T::default_epsilon() * scale.max(T::lit(f64::MIN_POSITIVE));

    // Back substitution on (T - lambda_k I) y = 0 with y_k = 1.
    let mut vecs = DMatrix::<C<T>>::zeros(n, n);
    for k in 0..n {
        let lambda = values[k];
        let mut y = DVector::<C<T>>::zeros(n);
        y[k] = C::new(T::one(), T::zero());
        for i in (0..k).rev() {
            let mut acc = C::new(T::zero(), T::zero());
            for l in (i + 1)..=k {
                acc += t[(i, l)] * y[l];
            }
            let mut denom = t[(i, i)] - lambda;
            if denom.modulus() < small {
                denom = C::new(small, T::zero());
            }
            y[i] = -acc / denom;
        }
        let mut w = &q * y;
        normalize_phase(&mut w);
        vecs.set_column(k, &w);
    }

    let order = eigen_order(&values);
    let eigenvalues = order.iter().map(|&i| values[i]).collect();
    let eigenvectors = DMatrix::from_fn(n, n, |r, c| vecs[(r, order[c])]);
    Ok(EigResult {
        eigenvalues,
        eigenvectors,
    })
}

/// Scales `w` to unit 2-norm with its largest-magnitude entry real positive.
fn normalize_phase<T: Real>(w: &mut DVector<C<T>>) {
    let norm = w
        .iter()
        .map(|z| z.norm_sqr())
        .fold(T::zero(), |a, b| a + b)
        .sqrt();
    if norm == T::zero() {
        return;
    }
    let mut best = 0;
    for i in 1..w.len() {
        if w[i].modulus() > w[best].modulus() {
            best = i;
        }
    }
    let pivot = w[best];
    let phase = pivot.conj() / C::new(pivot.modulus(), T::zero());
    let factor = phase / C::new(norm, T::zero());
    for z in w.iter_mut() {
        *z *= factor;
    }
    w[best].im = T::zero();
}

/// Permutation sorting `values` by descending modulus, ties (relative 1e-12)
/// broken by descending imaginary part.
pub fn eigen_order<T: Real>(values: &[C<T>]) -> Vec<usize> {
    let tol = T::lit(1e-12);
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&i, &j| {
        values[j]
            .modulus()
            .partial_cmp(&values[i].modulus())
            .unwrap_or(Ordering::Equal)
            .then(i.cmp(&j))
    });
    // Re-sort runs of equal modulus by imaginary part.
    let mut start = 0;
    while start < idx.len() {
        let lead = values[idx[start]].modulus();
        let mut end = start + 1;
        while end < idx.len()
            && (lead - values[idx[end]].modulus()).abs() <= tol * lead.max(T::one())
        {
            end += 1;
        }
        idx[start..end].sort_by(|&i, &j| {
            values[j]
                .im
                .partial_cmp(&values[i].im)
                .unwrap_or(Ordering::Equal)
                .then(
                    values[j]
                        .re
                        .partial_cmp(&values[i].re)
                        .unwrap_or(Ordering::Equal),
                )
                .then(i.cmp(&j))
        });
        start = end;
    }
    idx
}

/// Least-squares solution of `phi * b ~= x` through the SVD of `phi`.
///
/// Singular values below `1e-12 * sigma_1` are treated as zero.
pub fn pseudoinverse_apply<T: Real>(
    phi: &DMatrix<C<T>>,
    x: &DVector<C<T>>,
) -> Result<DVector<C<T>>> {
    let (m, r) = phi.shape();
    if x.len() != m {
        return Err(DmdError::Shape {
            expected: format!("vector of length {m}"),
            got: format!("length {}", x.len()),
        });
    }
    if m == 0 || r == 0 {
        return Err(DmdError::DegenerateModes);
    }
    let fail = || DmdError::NumericalFailure {
        what: "pseudoinverse SVD",
        rows: m,
        cols: r,
    };

    // Reduce a tall mode matrix to its triangular factor before the SVD.
    let (q, core) = if m > r {
        let qr = phi.clone().qr();
        (Some(qr.q()), qr.r())
    } else {
        (None, phi.clone())
    };
    let rhs = match &q {
        Some(q) => q.adjoint() * x,
        None => x.clone(),
    };
    let svd = SVD::try_new(core, true, true, T::default_epsilon(), MAX_SWEEPS).ok_or_else(fail)?;
    let u = svd.u.as_ref().ok_or_else(fail)?;
    let v_t = svd.v_t.as_ref().ok_or_else(fail)?;
    let s = &svd.singular_values;

    let s_max = s.iter().fold(T::zero(), |a, &b| a.max(b));
    let cutoff = T::lit(PINV_RELATIVE_CUTOFF) * s_max;
    if !(s_max > T::zero()) {
        return Err(DmdError::DegenerateModes);
    }

    let coeffs = u.adjoint() * rhs;
    let mut b = DVector::<C<T>>::zeros(r);
    for (i, &si) in s.iter().enumerate() {
        if si > cutoff {
            let c = coeffs[i] / C::new(si, T::zero());
            for j in 0..r {
                b[j] += v_t[(i, j)].conj() * c;
            }
        }
    }
    Ok(b)
}

/// Frobenius norm of a real matrix.
pub fn frobenius<T: Real>(a: &DMatrix<T>) -> T {
    a.iter()
        .map(|&x| x * x)
        .fold(T::zero(), |s, x| s + x)
        .sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(m: usize, n: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(m, n, |_, _| rng.gen_range(-1.0..1.0))
    }

    fn max_dev_from_identity(g: &DMatrix<f64>) -> f64 {
        let n = g.nrows();
        (g - DMatrix::<f64>::identity(n, n)).amax()
    }

    fn reconstruct(s: &SvdResult<f64>) -> DMatrix<f64> {
        &s.u * DMatrix::from_diagonal(&s.singular_values) * s.v.transpose()
    }

    #[test]
    fn svd_identity_is_identity() {
        let s = thin_svd(&DMatrix::<f64>::identity(3, 3)).unwrap();
        assert_eq!(s.singular_values.as_slice(), &[1.0, 1.0, 1.0]);
        assert!((s.u.clone() - DMatrix::<f64>::identity(3, 3)).amax() < 1e-15);
        assert!((s.v.clone() - DMatrix::<f64>::identity(3, 3)).amax() < 1e-15);
    }

    #[test]
    fn svd_diagonal_is_sorted() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 3.0]);
        let s = thin_svd(&a).unwrap();
        assert!((s.singular_values[0] - 3.0).abs() < 1e-14);
        assert!((s.singular_values[1] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn svd_random_tall_and_wide() {
        for (m, n) in [(20, 7), (7, 20), (9, 9)] {
            let a = random(m, n, 42);
            let s = thin_svd(&a).unwrap();
            assert_eq!(s.u.shape(), (m, m.min(n)));
            assert_eq!(s.v.shape(), (n, m.min(n)));
            let rel = frobenius(&(reconstruct(&s) - &a)) / frobenius(&a);
            assert!(rel < 1e-12, "{m}x{n}: {rel}");
            assert!(max_dev_from_identity(&(s.u.transpose() * &s.u)) <= 1e-10);
            assert!(max_dev_from_identity(&(s.v.transpose() * &s.v)) <= 1e-10);
            for w in s.singular_values.as_slice().windows(2) {
                assert!(w[0] >= w[1]);
            }
            for j in 0..s.u.ncols() {
                let col = s.u.column(j);
                let imax = col.iamax();
                assert!(col[imax] > 0.0);
            }
        }
    }

    #[test]
    fn svd_rejects_nan() {
        let mut a = random(4, 3, 1);
        a[(2, 1)] = f64::NAN;
        assert!(matches!(
            thin_svd(&a),
            Err(DmdError::NonFinite { row: 2, col: 1 })
        ));
    }

    #[test]
    fn svd_generic_over_f32() {
        let a = DMatrix::<f32>::from_row_slice(3, 2, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let s = thin_svd(&a).unwrap();
        let back = &s.u * DMatrix::from_diagonal(&s.singular_values) * s.v.transpose();
        assert!((back - a).amax() < 1e-5);
    }

    fn eig_residual_ok(a: &DMatrix<f64>, e: &EigResult<f64>) {
        let ac = a.map(|x| C::new(x, 0.0));
        let fro = frobenius(a);
        for (k, &mu) in e.eigenvalues.iter().enumerate() {
            let w = e.eigenvectors.column(k).into_owned();
            let r = &ac * &w - w.map(|z| z * mu);
            assert!(r.norm() <= 1e-8 * fro * w.norm(), "pair {k}: {}", r.norm());
        }
    }

    #[test]
    fn eig_diagonal() {
        let a = DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, -1.0]);
        let e = eig_dense(&a).unwrap();
        assert!((e.eigenvalues[0] - C::new(2.0, 0.0)).norm() < 1e-14);
        assert!((e.eigenvalues[1] - C::new(-1.0, 0.0)).norm() < 1e-14);
        eig_residual_ok(&a, &e);
    }

    #[test]
    fn eig_rotation() {
        let th = std::f64::consts::FRAC_PI_4;
        let a = DMatrix::from_row_slice(2, 2, &[th.cos(), -th.sin(), th.sin(), th.cos()]);
        let e = eig_dense(&a).unwrap();
        // positive imaginary part first
        assert!((e.eigenvalues[0] - C::new(0.0, th).exp()).norm() < 1e-14);
        assert!((e.eigenvalues[1] - C::new(0.0, -th).exp()).norm() < 1e-14);
        eig_residual_ok(&a, &e);
    }

    #[test]
    fn eig_companion_roots() {
        // z^2 - 3z + 2 = (z - 2)(z - 1)
        let a = DMatrix::from_row_slice(2, 2, &[3.0, -2.0, 1.0, 0.0]);
        let e = eig_dense(&a).unwrap();
        assert!((e.eigenvalues[0] - C::new(2.0, 0.0)).norm() < 1e-12);
        assert!((e.eigenvalues[1] - C::new(1.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn eig_identity_gives_independent_vectors() {
        let a = DMatrix::<f64>::identity(4, 4);
        let e = eig_dense(&a).unwrap();
        let det = e.eigenvectors.clone().determinant();
        assert!(det.norm() > 0.5);
        eig_residual_ok(&a, &e);
    }

    #[test]
    fn eig_random_residuals() {
        for seed in 0..20 {
            let n = 2 + (seed as usize % 19);
            let a = random(n, n, seed);
            let e = eig_dense(&a).unwrap();
            eig_residual_ok(&a, &e);
            for w in e.eigenvalues.windows(2) {
                assert!(w[0].norm() >= w[1].norm() - 1e-12 * w[0].norm().max(1.0));
            }
        }
    }

    #[test]
    fn eig_is_deterministic() {
        let a = random(12, 12, 5);
        let e1 = eig_dense(&a).unwrap();
        let e2 = eig_dense(&a).unwrap();
        assert_eq!(e1.eigenvalues, e2.eigenvalues);
        assert_eq!(e1.eigenvectors, e2.eigenvectors);
    }

    fn cvec(v: &[f64]) -> DVector<C<f64>> {
        DVector::from_iterator(v.len(), v.iter().map(|&x| C::new(x, 0.0)))
    }

    #[test]
    fn pinv_identity() {
        let phi = DMatrix::<C<f64>>::identity(3, 3);
        let b = pseudoinverse_apply(&phi, &cvec(&[1.0, 2.0, 3.0])).unwrap();
        assert!((b - cvec(&[1.0, 2.0, 3.0])).norm() < 1e-14);
    }

    #[test]
    fn pinv_single_mode() {
        let u = cvec(&[0.6, 0.0, 0.8]);
        let phi = DMatrix::from_columns(std::slice::from_ref(&u));
        let b = pseudoinverse_apply(&phi, &(u * C::new(2.0, 0.0))).unwrap();
        assert!((b[0] - C::new(2.0, 0.0)).norm() < 1e-14);
    }

    #[test]
    fn pinv_recovers_coefficients_in_span() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let phi = DMatrix::from_fn(10, 3, |_, _| {
            C::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
        });
        let c = DVector::from_fn(3, |_, _| {
            C::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
        });
        let x = &phi * &c;
        let b = pseudoinverse_apply(&phi, &x).unwrap();
        assert!((&phi * &b - &x).norm() < 1e-10);
        assert!((b - c).norm() < 1e-10);
    }

    #[test]
    fn pinv_all_zero_is_degenerate() {
        let phi = DMatrix::<C<f64>>::zeros(4, 2);
        assert!(matches!(
            pseudoinverse_apply(&phi, &cvec(&[1.0, 0.0, 0.0, 0.0])),
            Err(DmdError::DegenerateModes)
        ));
    }
}
