//! Measurement-reduction operators applied to (augmented) snapshot matrices.
//!
//! Every operator is an `a x D` matrix `R` with the sketch `Z = R X`. The
//! concrete representation depends on the kind: row selection for sampling,
//! a sparse row list for Achlioptas matrices, a dense matrix otherwise.
//!
//! The Krylov operator is the transposed Arnoldi basis of `K(A, 1)` for a
//! seeded `D x D` standard-normal matrix `A`. `A` is only touched through
//! matrix-vector products, see [`GaussianMatrix`].

use std::fmt;

use log::warn;
use nalgebra::{DMatrix, DVector};
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{DmdError, Result};
use crate::numerics::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProjectionKind {
    Identity,
    Sampling,
    Gaussian,
    Achlioptas,
    Krylov,
}

impl fmt::Display for ProjectionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ProjectionKind::Identity => "identity",
            ProjectionKind::Sampling => "sampling",
            ProjectionKind::Gaussian => "gaussian",
            ProjectionKind::Achlioptas => "achlioptas",
            ProjectionKind::Krylov => "krylov",
        };
        f.write_str(s)
    }
}

/// Compressed sparse rows with every stored value equal to `+-scale`.
#[derive(Debug, Clone, PartialEq)]
struct SignedRows<T> {
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    negative: Vec<bool>,
    scale: T,
}

#[derive(Debug, Clone, PartialEq)]
enum Repr<T: Real> {
    Identity,
    Rows(Vec<usize>),
    Dense(DMatrix<T>),
    Sparse(SignedRows<T>),
}

/// Outcome of the Arnoldi run behind a Krylov operator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct KrylovInfo {
    pub steps_completed: usize,
    pub breakdown: bool,
}

/// A measurement operator `R` of shape `rows x dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionOperator<T: Real> {
    kind: ProjectionKind,
    dim: usize,
    a: usize,
    seed: Option<u64>,
    sparsity: Option<u32>,
    krylov: Option<KrylovInfo>,
    repr: Repr<T>,
}

/// Serializable summary of an operator (never the matrix itself).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperatorRecord {
    pub kind: ProjectionKind,
    pub a: usize,
    pub rows: usize,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub s: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub seed: Option<u64>,
    pub gram_deviation: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub krylov: Option<KrylovInfo>,
}

impl<T: Real> ProjectionOperator<T> {
    pub fn kind(&self) -> ProjectionKind {
        self.kind
    }

    /// Number of columns (`D`, the state dimension the operator acts on).
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// The count parameter the operator was built with. For Krylov operators
    /// this is the number of Arnoldi steps, one less than [`Self::rows`].
    pub fn a(&self) -> usize {
        self.a
    }

    /// Number of measurements, i.e. rows of `R`.
    pub fn rows(&self) -> usize {
        match &self.repr {
            Repr::Identity => self.dim,
            Repr::Rows(idx) => idx.len(),
            Repr::Dense(m) => m.nrows(),
            Repr::Sparse(s) => s.row_ptr.len() - 1,
        }
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    pub fn sparsity(&self) -> Option<u32> {
        self.sparsity
    }

    /// Sampled row indices, sorted ascending (sampling operators only).
    pub fn indices(&self) -> Option<&[usize]> {
        match &self.repr {
            Repr::Rows(idx) => Some(idx),
            _ => None,
        }
    }

    pub fn krylov_info(&self) -> Option<KrylovInfo> {
        self.krylov
    }

    /// Number of explicitly stored nonzeros, when the operator is sparse.
    pub fn nnz(&self) -> Option<usize> {
        match &self.repr {
            Repr::Sparse(s) => Some(s.cols.len()),
            Repr::Rows(idx) => Some(idx.len()),
            _ => None,
        }
    }

    /// Dense copy of `R`.
    pub fn to_dense(&self) -> DMatrix<T> {
        match &self.repr {
            Repr::Identity => DMatrix::identity(self.dim, self.dim),
            Repr::Rows(idx) => {
                let mut m = DMatrix::zeros(idx.len(), self.dim);
                for (r, &c) in idx.iter().enumerate() {
                    m[(r, c)] = T::one();
                }
                m
            }
            Repr::Dense(m) => m.clone(),
            Repr::Sparse(s) => {
                let rows = s.row_ptr.len() - 1;
                let mut m = DMatrix::zeros(rows, self.dim);
                for r in 0..rows {
                    for k in s.row_ptr[r]..s.row_ptr[r + 1] {
                        m[(r, s.cols[k])] = if s.negative[k] { -s.scale } else { s.scale };
                    }
                }
                m
            }
        }
    }

    /// `R X`. Sampling extracts rows and sparse operators skip zero entries.
    pub fn apply(&self, x: &DMatrix<T>) -> Result<DMatrix<T>> {
        if x.nrows() != self.dim {
            return Err(DmdError::Shape {
                expected: format!("{} rows", self.dim),
                got: format!("{}x{}", x.nrows(), x.ncols()),
            });
        }
        Ok(match &self.repr {
            Repr::Identity => x.clone(),
            Repr::Rows(idx) => x.select_rows(idx.iter()),
            Repr::Dense(m) => m * x,
            Repr::Sparse(s) => {
                let rows = s.row_ptr.len() - 1;
                let mut out = DMatrix::zeros(rows, x.ncols());
                for c in 0..x.ncols() {
                    let col = x.column(c);
                    for r in 0..rows {
                        let mut acc = T::zero();
                        for k in s.row_ptr[r]..s.row_ptr[r + 1] {
                            let v = col[s.cols[k]];
                            if s.negative[k] {
                                acc -= v;
                            } else {
                                acc += v;
                            }
                        }
                        out[(r, c)] = acc * s.scale;
                    }
                }
                out
            }
        })
    }

    /// `||R R* / c - I||_F / sqrt(rows)` with `c` the mean squared row norm.
    ///
    /// `c` is exactly 1 for sampling and Krylov operators; for the random
    /// operators it removes the `D/a` row-energy scale that comes with
    /// column-normalized entries.
    pub fn gram_deviation(&self) -> T {
        let rows = self.rows();
        match &self.repr {
            Repr::Identity => T::zero(),
            Repr::Rows(idx) => {
                // Distinct canonical rows: any repeat contributes an off-diagonal 1.
                let mut sorted = idx.clone();
                sorted.sort_unstable();
                let repeats = sorted.windows(2).filter(|w| w[0] == w[1]).count();
                (T::from_count(2 * repeats) / T::from_count(rows)).sqrt()
            }
            _ => {
                let r = self.to_dense();
                let g = &r * r.transpose();
                let mean_energy = g.trace() / T::from_count(rows);
                if !(mean_energy > T::zero()) {
                    return T::one();
                }
                let dev = g / mean_energy - DMatrix::<T>::identity(rows, rows);
                dev.norm() / T::from_count(rows).sqrt()
            }
        }
    }

    pub fn record(&self) -> OperatorRecord {
        OperatorRecord {
            kind: self.kind,
            a: self.a,
            rows: self.rows(),
            s: self.sparsity,
            seed: self.seed,
            gram_deviation: self.gram_deviation().as_f64(),
            krylov: self.krylov,
        }
    }
}

/// `R X` (free-function form of [`ProjectionOperator::apply`]).
pub fn apply<T: Real>(r: &ProjectionOperator<T>, x: &DMatrix<T>) -> Result<DMatrix<T>> {
    r.apply(x)
}

/// Row-gram deviation, see [`ProjectionOperator::gram_deviation`].
pub fn gram_deviation<T: Real>(r: &ProjectionOperator<T>) -> T {
    r.gram_deviation()
}

fn check_count(dim: usize, a: usize) -> Result<()> {
    if a == 0 || a > dim {
        return Err(DmdError::InvalidCount { a, dim });
    }
    Ok(())
}

/// The `D x D` identity (no reduction).
pub fn identity_operator<T: Real>(dim: usize) -> Result<ProjectionOperator<T>> {
    check_count(dim, dim.max(1))?;
    Ok(ProjectionOperator {
        kind: ProjectionKind::Identity,
        dim,
        a: dim,
        seed: None,
        sparsity: None,
        krylov: None,
        repr: Repr::Identity,
    })
}

/// `a` distinct canonical rows drawn uniformly without replacement, sorted ascending.
pub fn sampling_operator<T: Real>(
    dim: usize,
    a: usize,
    seed: u64,
) -> Result<ProjectionOperator<T>> {
    check_count(dim, a)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = index::sample(&mut rng, dim, a).into_vec();
    idx.sort_unstable();
    Ok(ProjectionOperator {
        kind: ProjectionKind::Sampling,
        dim,
        a,
        seed: Some(seed),
        sparsity: None,
        krylov: None,
        repr: Repr::Rows(idx),
    })
}

/// Dense operator with i.i.d. `N(0, 1/a)` entries, drawn row by row.
pub fn gaussian_operator<T: Real>(
    dim: usize,
    a: usize,
    seed: u64,
) -> Result<ProjectionOperator<T>> {
    check_count(dim, a)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scale = 1.0 / (a as f64).sqrt();
    let mut values = Vec::with_capacity(a * dim);
    for _ in 0..a * dim {
        let z: f64 = StandardNormal.sample(&mut rng);
        values.push(T::lit(z * scale));
    }
    Ok(ProjectionOperator {
        kind: ProjectionKind::Gaussian,
        dim,
        a,
        seed: Some(seed),
        sparsity: None,
        krylov: None,
        repr: Repr::Dense(DMatrix::from_row_slice(a, dim, &values)),
    })
}

/// Achlioptas operator: entries `sqrt(s/a) * {-1, 0, +1}` with probabilities
/// `1/(2s), 1 - 1/s, 1/(2s)`, `s` in `{1, 3}`. Only nonzeros are stored.
pub fn achlioptas_operator<T: Real>(
    dim: usize,
    a: usize,
    s: u32,
    seed: u64,
) -> Result<ProjectionOperator<T>> {
    if s != 1 && s != 3 {
        return Err(DmdError::param(
            "s",
            format!("sparsity must be 1 or 3, got {s}"),
        ));
    }
    check_count(dim, a)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let half = 1.0 / (2.0 * s as f64);
    let mut row_ptr = Vec::with_capacity(a + 1);
    let mut cols = Vec::new();
    let mut negative = Vec::new();
    row_ptr.push(0);
    for _ in 0..a {
        for c in 0..dim {
            let u: f64 = rng.gen();
            if u < half {
                cols.push(c);
                negative.push(true);
            } else if u < 2.0 * half {
                cols.push(c);
                negative.push(false);
            }
        }
        row_ptr.push(cols.len());
    }
    let scale = T::lit((s as f64 / a as f64).sqrt());
    Ok(ProjectionOperator {
        kind: ProjectionKind::Achlioptas,
        dim,
        a,
        seed: Some(seed),
        sparsity: Some(s),
        krylov: None,
        repr: Repr::Sparse(SignedRows {
            row_ptr,
            cols,
            negative,
            scale,
        }),
    })
}

/// Square linear map accessed through matrix-vector products.
pub trait LinearOperator<T: Real> {
    fn dim(&self) -> usize;
    fn apply_vec(&self, x: &DVector<T>) -> DVector<T>;
    fn frobenius_norm(&self) -> T;
}

impl<T: Real> LinearOperator<T> for DMatrix<T> {
    fn dim(&self) -> usize {
        self.nrows()
    }

    fn apply_vec(&self, x: &DVector<T>) -> DVector<T> {
        self * x
    }

    fn frobenius_norm(&self) -> T {
        self.norm()
    }
}

/// Largest Gaussian matrix (in entries) kept in memory; beyond this rows are
/// regenerated on every product.
pub const GAUSSIAN_MATERIALIZE_LIMIT: usize = 450_000_000;

/// Seeded `D x D` matrix with i.i.d. standard-normal entries.
///
/// Row `i` is drawn from its own ChaCha8 stream (`seed`, stream `i`), and
/// every entry is rounded to `f32`, so the stored and regenerated forms hold
/// identical values. Products accumulate in `f64`.
pub struct GaussianMatrix {
    dim: usize,
    seed: u64,
    stored: Option<Vec<f32>>,
    frobenius: f64,
}

impl GaussianMatrix {
    pub fn new(dim: usize, seed: u64) -> Self {
        Self::with_limit(dim, seed, GAUSSIAN_MATERIALIZE_LIMIT)
    }

    pub fn with_limit(dim: usize, seed: u64, limit: usize) -> Self {
        let mut sq = 0.0;
        let stored = if dim.saturating_mul(dim) <= limit {
            let mut buf = vec![0f32; dim * dim];
            for (i, row) in buf.chunks_mut(dim.max(1)).enumerate() {
                fill_row(seed, i, row);
                sq += row.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>();
            }
            Some(buf)
        } else {
            let mut row = vec![0f32; dim];
            for i in 0..dim {
                fill_row(seed, i, &mut row);
                sq += row.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>();
            }
            None
        };
        GaussianMatrix {
            dim,
            seed,
            stored,
            frobenius: sq.sqrt(),
        }
    }

    pub fn is_materialized(&self) -> bool {
        self.stored.is_some()
    }

    pub fn entry(&self, i: usize, j: usize) -> f64 {
        match &self.stored {
            Some(buf) => buf[i * self.dim + j] as f64,
            None => {
                let mut row = vec![0f32; self.dim];
                fill_row(self.seed, i, &mut row);
                row[j] as f64
            }
        }
    }

    fn matvec(&self, x: &[f64], y: &mut [f64]) {
        match &self.stored {
            Some(buf) => {
                for (yi, row) in y.iter_mut().zip(buf.chunks(self.dim)) {
                    *yi = dot_f32(row, x);
                }
            }
            None => {
                let mut row = vec![0f32; self.dim];
                for (i, yi) in y.iter_mut().enumerate() {
                    fill_row(self.seed, i, &mut row);
                    *yi = dot_f32(&row, x);
                }
            }
        }
    }
}

fn fill_row(seed: u64, i: usize, row: &mut [f32]) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(i as u64);
    for v in row.iter_mut() {
        let z: f64 = StandardNormal.sample(&mut rng);
        *v = z as f32;
    }
}

/// Four-lane dot product; the fixed lane split keeps results reproducible.
fn dot_f32(a: &[f32], x: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for k in 0..chunks {
        let o = 4 * k;
        acc[0] += a[o] as f64 * x[o];
        acc[1] += a[o + 1] as f64 * x[o + 1];
        acc[2] += a[o + 2] as f64 * x[o + 2];
        acc[3] += a[o + 3] as f64 * x[o + 3];
    }
    let mut tail = 0.0;
    for k in 4 * chunks..a.len() {
        tail += a[k] as f64 * x[k];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

impl<T: Real> LinearOperator<T> for GaussianMatrix {
    fn dim(&self) -> usize {
        self.dim
    }

    fn apply_vec(&self, x: &DVector<T>) -> DVector<T> {
        let xf: Vec<f64> = x.iter().map(|v| v.as_f64()).collect();
        let mut y = vec![0.0; self.dim];
        self.matvec(&xf, &mut y);
        DVector::from_iterator(self.dim, y.into_iter().map(T::lit))
    }

    fn frobenius_norm(&self) -> T {
        T::lit(self.frobenius)
    }
}

/// Orthonormal Krylov basis and the companion Hessenberg matrix.
#[derive(Debug, Clone)]
pub struct ArnoldiResult<T: Real> {
    /// `n x k` with orthonormal columns: `m + 1` vectors after a full run,
    /// `steps_completed` vectors after a breakdown.
    pub v_basis: DMatrix<T>,
    /// `(steps + 1) x steps` upper Hessenberg matrix.
    pub hessenberg: DMatrix<T>,
    pub steps_completed: usize,
    pub breakdown: bool,
}

/// Default breakdown tolerance, relative to `||A||_F`.
pub const ARNOLDI_RELATIVE_TOL: f64 = 1e-12;

/// Arnoldi process with modified Gram-Schmidt.
///
/// Stops early, flagging a breakdown, when the orthogonalized direction has
/// norm at most `tol` (default `1e-12 ||A||_F`).
pub fn arnoldi<T: Real, A: LinearOperator<T> + ?Sized>(
    a: &A,
    b: &DVector<T>,
    m: usize,
    tol: Option<T>,
) -> Result<ArnoldiResult<T>> {
    let n = a.dim();
    if b.len() != n {
        return Err(DmdError::Shape {
            expected: format!("start vector of length {n}"),
            got: format!("length {}", b.len()),
        });
    }
    if m == 0 || m > n {
        return Err(DmdError::param("m", format!("need 1 <= m <= {n}, got {m}")));
    }
    let bnorm = b.norm();
    if !(bnorm > T::zero()) {
        return Err(DmdError::InvalidStartVector);
    }
    let tol = tol.unwrap_or_else(|| T::lit(ARNOLDI_RELATIVE_TOL) * a.frobenius_norm());

    let mut basis: Vec<DVector<T>> = Vec::with_capacity(m + 1);
    basis.push(b / bnorm);
    let mut h = DMatrix::<T>::zeros(m + 1, m);
    let mut steps = 0;
    let mut breakdown = false;

    for i in 0..m {
        let mut w = a.apply_vec(&basis[i]);
        for (j, vj) in basis.iter().enumerate() {
            let hij = vj.dot(&w);
            h[(j, i)] = hij;
            w.axpy(-hij, vj, T::one());
        }
        let wn = w.norm();
        h[(i + 1, i)] = wn;
        steps = i + 1;
        if wn <= tol {
            breakdown = true;
            break;
        }
        basis.push(w / wn);
    }

    let hessenberg = h.view((0, 0), (steps + 1, steps)).into_owned();
    Ok(ArnoldiResult {
        v_basis: DMatrix::from_columns(&basis),
        hessenberg,
        steps_completed: steps,
        breakdown,
    })
}

/// Krylov operator: `V*` from `a` Arnoldi steps on a seeded Gaussian `D x D`
/// matrix with the all-ones start vector, giving `a + 1` orthonormal rows.
///
/// A breakdown yields fewer rows; the outcome is kept in [`KrylovInfo`].
pub fn krylov_operator<T: Real>(dim: usize, a: usize, seed: u64) -> Result<ProjectionOperator<T>> {
    if a == 0 || a + 1 > dim {
        return Err(DmdError::InvalidCount { a: a + 1, dim });
    }
    let mat = GaussianMatrix::new(dim, seed);
    krylov_from(&mat, dim, a, seed)
}

pub(crate) fn krylov_from<T: Real>(
    mat: &dyn LinearOperator<T>,
    dim: usize,
    a: usize,
    seed: u64,
) -> Result<ProjectionOperator<T>> {
    let ones = DVector::from_element(dim, T::one());
    let res = arnoldi(mat, &ones, a, None)?;
    if res.breakdown {
        warn!(
            "Krylov projection broke down after {} of {a} Arnoldi steps; using {} rows",
            res.steps_completed,
            res.v_basis.ncols()
        );
    }
    Ok(ProjectionOperator {
        kind: ProjectionKind::Krylov,
        dim,
        a,
        seed: Some(seed),
        sparsity: None,
        krylov: Some(KrylovInfo {
            steps_completed: res.steps_completed,
            breakdown: res.breakdown,
        }),
        repr: Repr::Dense(res.v_basis.transpose()),
    })
}
