//! DMD fitting pipelines and model evaluation.
//!
//! * [`dmd_classic`] fits a shifted pair `(X1, X2)`; modes are `U y`.
//! * [`dmd_tdc`] runs the same pipeline on the Hankel-augmented pair.
//! * [`dmd_projected`] fits a sketch `Z = R X_aug` and recovers full-space
//!   modes from the unprojected second matrix, `X2_aug V_Z S_Z^-1 W_Z`.
//!
//! All variants compute amplitudes as `b = pinv(Phi) x1` against the first
//! (augmented) snapshot and predict `Re[Phi diag(exp(omega t)) b]`, keeping
//! only the first `M` rows.

use std::fmt;
use std::str::FromStr;

use log::warn;
use nalgebra::{ComplexField, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{DmdError, Result};
use crate::numerics::{eig_dense, eigen_order, pseudoinverse_apply, thin_svd, Real, SvdResult, C};
use crate::projections::{ProjectionKind, ProjectionOperator};
use crate::snapshots::{hankel_augment, hankel_from_matrix, split, SnapshotMatrix};

/// How many singular triplets to keep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RankPolicy {
    Fixed(usize),
    /// Keep singular values above `tol * sigma_1`.
    RelativeThreshold(f64),
}

impl Default for RankPolicy {
    fn default() -> Self {
        RankPolicy::RelativeThreshold(1e-10)
    }
}

impl RankPolicy {
    pub fn validate(&self) -> Result<()> {
        match *self {
            RankPolicy::Fixed(0) => Err(DmdError::param("rank", "fixed rank must be >= 1")),
            RankPolicy::RelativeThreshold(tol) if !(tol > 0.0 && tol < 1.0) => Err(
                DmdError::param("rank", format!("threshold must lie in (0, 1), got {tol}")),
            ),
            _ => Ok(()),
        }
    }

    /// Truncation rank for descending singular values `s`.
    fn select<T: Real>(&self, s: &DVector<T>) -> Result<usize> {
        self.validate()?;
        let sigma1 = s.get(0).copied().unwrap_or_else(T::zero);
        if !(sigma1 > T::zero()) {
            return Err(DmdError::DegenerateData);
        }
        let numerical = count_above(s, T::lit(1e-14) * sigma1);
        match *self {
            RankPolicy::Fixed(r) => {
                if r > numerical {
                    warn!("fixed rank {r} exceeds the numerical rank {numerical}; truncating to {numerical}");
                }
                Ok(r.min(numerical))
            }
            RankPolicy::RelativeThreshold(tol) => {
                let r = count_above(s, T::lit(tol) * sigma1);
                if r == 0 {
                    return Err(DmdError::DegenerateData);
                }
                Ok(r)
            }
        }
    }
}

fn count_above<T: Real>(s: &DVector<T>, cutoff: T) -> usize {
    s.iter().take_while(|&&v| v > cutoff).count()
}

impl fmt::Display for RankPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RankPolicy::Fixed(r) => write!(f, "fixed:{r}"),
            RankPolicy::RelativeThreshold(t) => write!(f, "tol:{t:e}"),
        }
    }
}

impl FromStr for RankPolicy {
    type Err = DmdError;

    /// Parses `fixed:R` or `tol:T`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || DmdError::param("rank", format!("expected `fixed:R` or `tol:T`, got {s:?}"));
        let (kind, value) = s.split_once(':').ok_or_else(bad)?;
        let policy = match kind.trim() {
            "fixed" => RankPolicy::Fixed(value.trim().parse().map_err(|_| bad())?),
            "tol" => RankPolicy::RelativeThreshold(value.trim().parse().map_err(|_| bad())?),
            _ => return Err(bad()),
        };
        policy.validate()?;
        Ok(policy)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Classic,
    Tdc,
    Projected(ProjectionKind),
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Variant::Classic => f.write_str("classic"),
            Variant::Tdc => f.write_str("tdc"),
            Variant::Projected(k) => write!(f, "projected-{k}"),
        }
    }
}

/// A fitted model.
#[derive(Debug, Clone, PartialEq)]
pub struct DmdModel<T: Real> {
    /// `D_out x r`, with `D_out = q M` for the delay variants.
    pub modes: DMatrix<C<T>>,
    pub eigenvalues: Vec<C<T>>,
    /// `ln(mu) / dt`, principal branch.
    pub exponents: Vec<C<T>>,
    pub amplitudes: Vec<C<T>>,
    pub q: usize,
    pub base_m: usize,
    pub dt: T,
    pub t0: T,
    pub variant: Variant,
    /// Sketch rows used (projected variants only).
    pub measurements: Option<usize>,
}

/// Eigenvalues of modulus below this are dropped instead of producing `omega = -inf`.
pub const MIN_EIGENVALUE_MODULUS: f64 = 1e-12;

impl<T: Real> DmdModel<T> {
    pub fn rank(&self) -> usize {
        self.eigenvalues.len()
    }

    /// State at `t0 + k dt`.
    pub fn predict(&self, k: usize) -> DVector<T> {
        self.predict_at(self.dt * T::from_count(k))
    }

    /// State at time `t0 + t` (first `base_m` rows of the mode expansion).
    pub fn predict_at(&self, t: T) -> DVector<T> {
        let mut out = DVector::zeros(self.base_m);
        for (k, (&w, &b)) in self.exponents.iter().zip(&self.amplitudes).enumerate() {
            let coeff = ComplexField::exp(w * C::new(t, T::zero())) * b;
            let col = self.modes.column(k);
            for i in 0..self.base_m {
                let z = col[i] * coeff;
                out[i] += z.re;
            }
        }
        out
    }
}

/// Classic DMD on a shifted pair; modes are `U y` (projected modes).
pub fn dmd_classic<T: Real>(
    x1: &DMatrix<T>,
    x2: &DMatrix<T>,
    dt: T,
    policy: RankPolicy,
) -> Result<DmdModel<T>> {
    check_pair(x1, x2)?;
    let mut model = fit_svd_modes(x1, x2, dt, policy)?;
    model.base_m = x1.nrows();
    Ok(model)
}

/// Time-delay DMD with depth `q`; `q = 1` is classic DMD on `split(X)`.
pub fn dmd_tdc<T: Real>(
    x: &SnapshotMatrix<T>,
    q: usize,
    policy: RankPolicy,
) -> Result<DmdModel<T>> {
    let h = hankel_augment(x, q)?;
    let mut model = fit_svd_modes(&h.x1_aug, &h.x2_aug, x.dt(), policy)?;
    model.variant = if q == 1 {
        Variant::Classic
    } else {
        Variant::Tdc
    };
    model.q = q;
    model.base_m = x.m();
    model.t0 = x.t0();
    Ok(model)
}

/// Options for [`dmd_projected_with`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProjectedOptions {
    /// Project the raw `M`-dimensional snapshots, then delay-embed the sketch.
    /// The operator must then have `M` columns and the sketch has `q * rows`
    /// rows.
    pub project_before_augment: bool,
}

/// Projection-enabled time-delay DMD with the operator acting on the augmented state.
pub fn dmd_projected<T: Real>(
    x: &SnapshotMatrix<T>,
    q: usize,
    r: &ProjectionOperator<T>,
    policy: RankPolicy,
) -> Result<DmdModel<T>> {
    dmd_projected_with(x, q, r, policy, ProjectedOptions::default())
}

pub fn dmd_projected_with<T: Real>(
    x: &SnapshotMatrix<T>,
    q: usize,
    r: &ProjectionOperator<T>,
    policy: RankPolicy,
    opts: ProjectedOptions,
) -> Result<DmdModel<T>> {
    let h = hankel_augment(x, q)?;
    check_initial(&h.x1_aug)?;

    let (z1, z2, sketch_rows) = if opts.project_before_augment {
        if r.dim() != x.m() {
            return Err(DmdError::Shape {
                expected: format!("operator with {} columns (M)", x.m()),
                got: format!("{} columns", r.dim()),
            });
        }
        let zh = hankel_from_matrix(&r.apply(x.data())?, q)?;
        (zh.x1_aug, zh.x2_aug, q * r.rows())
    } else {
        if r.dim() != q * x.m() {
            return Err(DmdError::Shape {
                expected: format!("operator with {} columns (qM)", q * x.m()),
                got: format!("{} columns", r.dim()),
            });
        }
        (r.apply(&h.x1_aug)?, r.apply(&h.x2_aug)?, r.rows())
    };

    let svd = thin_svd(&z1)?;
    let aq = r.rows() * q;
    let insufficient = |rank| DmdError::InsufficientMeasurements {
        rank,
        rows: sketch_rows,
        a: r.rows(),
        q,
    };
    if let RankPolicy::Fixed(rank) = policy {
        if rank > aq {
            return Err(insufficient(rank));
        }
        if rank > sketch_rows {
            warn!("fixed rank {rank} exceeds the {sketch_rows} sketch rows; the fit rank is at most {sketch_rows}");
        }
    }
    let rank = policy.select(&svd.singular_values)?;
    if let RankPolicy::RelativeThreshold(_) = policy {
        // A full-row-rank wide sketch only says the data rank is at least `rows`.
        if rank >= sketch_rows && sketch_rows < z1.ncols() {
            if sketch_rows >= aq {
                return Err(insufficient(rank + 1));
            }
            warn!("sketch with {sketch_rows} rows is saturated; the data rank may be higher");
        }
    }
    let t = svd.truncate(rank);
    let s_inv = DMatrix::from_diagonal(&t.singular_values.map(|v| T::one() / v));
    let v_sinv = &t.v * &s_inv;
    let a_tilde = t.u.transpose() * (&z2 * &v_sinv);
    let eig = eig_dense(&a_tilde)?;

    // Phi_X = X2_aug V S^-1 W, split into real and imaginary parts.
    let w = &eig.eigenvectors;
    let g_re = &v_sinv * w.map(|z| z.re);
    let g_im = &v_sinv * w.map(|z| z.im);
    let p_re = &h.x2_aug * g_re;
    let p_im = &h.x2_aug * g_im;
    let modes = DMatrix::from_fn(p_re.nrows(), p_re.ncols(), |i, j| {
        C::new(p_re[(i, j)], p_im[(i, j)])
    });

    let x1 = h.x1_aug.column(0).into_owned();
    let mut model = finish(modes, eig.eigenvalues, &x1, x.dt())?;
    model.variant = Variant::Projected(r.kind());
    model.q = q;
    model.base_m = x.m();
    model.t0 = x.t0();
    model.measurements = Some(r.rows());
    Ok(model)
}

fn check_pair<T: Real>(x1: &DMatrix<T>, x2: &DMatrix<T>) -> Result<()> {
    if x1.shape() != x2.shape() || x1.ncols() == 0 || x1.nrows() == 0 {
        return Err(DmdError::Shape {
            expected: format!(
                "two non-empty matrices of equal shape (X1 is {}x{})",
                x1.nrows(),
                x1.ncols()
            ),
            got: format!("{}x{}", x2.nrows(), x2.ncols()),
        });
    }
    Ok(())
}

/// Rejects an identically zero first column.
fn check_initial<T: Real>(x1: &DMatrix<T>) -> Result<()> {
    let first = x1.column(0).norm();
    let scale = x1.norm();
    if first <= T::default_epsilon() * scale || !(scale > T::zero()) {
        if scale > T::zero() {
            return Err(DmdError::ZeroInitialCondition);
        }
        return Err(DmdError::DegenerateData);
    }
    Ok(())
}

fn fit_svd_modes<T: Real>(
    x1: &DMatrix<T>,
    x2: &DMatrix<T>,
    dt: T,
    policy: RankPolicy,
) -> Result<DmdModel<T>> {
    check_initial(x1)?;
    let svd: SvdResult<T> = thin_svd(x1)?;
    let rank = policy.select(&svd.singular_values)?;
    let t = svd.truncate(rank);
    let s_inv = DMatrix::from_diagonal(&t.singular_values.map(|v| T::one() / v));
    let s_tilde = t.u.transpose() * (x2 * (&t.v * s_inv));
    let eig = eig_dense(&s_tilde)?;
    let u_c = t.u.map(|v| C::new(v, T::zero()));
    let modes = u_c * &eig.eigenvectors;
    let x_first = x1.column(0).into_owned();
    finish(modes, eig.eigenvalues, &x_first, dt)
}

/// Drops near-zero eigenvalues, takes logarithms and solves for amplitudes.
fn finish<T: Real>(
    modes: DMatrix<C<T>>,
    eigenvalues: Vec<C<T>>,
    x1: &DVector<T>,
    dt: T,
) -> Result<DmdModel<T>> {
    let keep: Vec<usize> = (0..eigenvalues.len())
        .filter(|&k| eigenvalues[k].modulus() >= T::lit(MIN_EIGENVALUE_MODULUS))
        .collect();
    if keep.len() < eigenvalues.len() {
        warn!(
            "dropping {} eigenvalue(s) with modulus below {MIN_EIGENVALUE_MODULUS:e}",
            eigenvalues.len() - keep.len()
        );
    }
    if keep.is_empty() {
        return Err(DmdError::DegenerateModes);
    }
    let modes = modes.select_columns(keep.iter());
    let eigenvalues: Vec<C<T>> = keep.iter().map(|&k| eigenvalues[k]).collect();
    let dt_c = C::new(dt, T::zero());
    let exponents = eigenvalues
        .iter()
        .map(|&mu| ComplexField::ln(mu) / dt_c)
        .collect();
    let x1c = x1.map(|v| C::new(v, T::zero()));
    let amplitudes = pseudoinverse_apply(&modes, &x1c)?.iter().copied().collect();
    Ok(DmdModel {
        modes,
        eigenvalues,
        exponents,
        amplitudes,
        q: 1,
        base_m: x1.len(),
        dt,
        t0: T::zero(),
        variant: Variant::Classic,
        measurements: None,
    })
}

/// Classic DMD of a snapshot matrix (split, then fit).
pub fn dmd_classic_snapshots<T: Real>(
    x: &SnapshotMatrix<T>,
    policy: RankPolicy,
) -> Result<DmdModel<T>> {
    let (x1, x2) = split(x)?;
    let mut model = dmd_classic(&x1, &x2, x.dt(), policy)?;
    model.t0 = x.t0();
    Ok(model)
}

/// Left singular vectors of the full snapshot matrix, truncated per `policy`.
pub fn pod_modes<T: Real>(x: &SnapshotMatrix<T>, policy: RankPolicy) -> Result<DMatrix<T>> {
    let svd = thin_svd(x.data())?;
    let r = policy.select(&svd.singular_values)?;
    Ok(svd.u.columns(0, r).into_owned())
}

/// Position of an eigenvalue relative to the unit circle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Circle {
    Inside,
    On,
    Outside,
}

impl fmt::Display for Circle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Circle::Inside => "inside",
            Circle::On => "on",
            Circle::Outside => "outside",
        })
    }
}

/// Half-width of the band around `|mu| = 1` classified as [`Circle::On`].
pub const UNIT_CIRCLE_BAND: f64 = 1e-6;

pub fn classify(mu_abs: f64) -> Circle {
    if (mu_abs - 1.0).abs() <= UNIT_CIRCLE_BAND {
        Circle::On
    } else if mu_abs < 1.0 {
        Circle::Inside
    } else {
        Circle::Outside
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectrumEntry<T: Real> {
    pub mu: C<T>,
    pub omega: C<T>,
    pub amp_abs: T,
    pub circle: Circle,
}

/// Eigenvalues with exponents, amplitude magnitudes and unit-circle position,
/// in descending-modulus order.
pub fn spectrum<T: Real>(model: &DmdModel<T>) -> Vec<SpectrumEntry<T>> {
    let order = eigen_order(&model.eigenvalues);
    order
        .into_iter()
        .map(|k| {
            let mu = model.eigenvalues[k];
            SpectrumEntry {
                mu,
                omega: model.exponents[k],
                amp_abs: model.amplitudes[k].modulus(),
                circle: classify(mu.modulus().as_f64()),
            }
        })
        .collect()
}

/// Largest distance between an eigenvalue and the nearest conjugate of a
/// still-unmatched eigenvalue (greedy matching in spectrum order).
pub fn conjugate_mismatch<T: Real>(values: &[C<T>]) -> f64 {
    let mut used = vec![false; values.len()];
    let mut worst: f64 = 0.0;
    for i in 0..values.len() {
        if used[i] {
            continue;
        }
        let target = values[i].conj();
        let mut best = None;
        let mut best_d = f64::INFINITY;
        for j in 0..values.len() {
            if used[j] {
                continue;
            }
            let d = (values[j] - target).modulus().as_f64();
            if d < best_d {
                best_d = d;
                best = Some(j);
            }
        }
        if let Some(j) = best {
            used[i] = true;
            used[j] = true;
            worst = worst.max(best_d);
        }
    }
    worst
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComplexRecord {
    pub re: f64,
    pub im: f64,
}

impl<T: Real> From<C<T>> for ComplexRecord {
    fn from(z: C<T>) -> Self {
        ComplexRecord {
            re: z.re.as_f64(),
            im: z.im.as_f64(),
        }
    }
}

impl From<ComplexRecord> for C<f64> {
    fn from(z: ComplexRecord) -> Self {
        C::new(z.re, z.im)
    }
}

/// JSON form of a model. Modes are written separately (see [`write_modes_csv`]).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelRecord {
    pub variant: Variant,
    pub rank: usize,
    pub q: usize,
    pub base_m: usize,
    pub mode_rows: usize,
    pub dt: f64,
    pub t0: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub measurements: Option<usize>,
    pub eigenvalues: Vec<ComplexRecord>,
    pub exponents: Vec<ComplexRecord>,
    pub amplitudes: Vec<ComplexRecord>,
}

impl<T: Real> DmdModel<T> {
    pub fn to_record(&self) -> ModelRecord {
        ModelRecord {
            variant: self.variant,
            rank: self.rank(),
            q: self.q,
            base_m: self.base_m,
            mode_rows: self.modes.nrows(),
            dt: self.dt.as_f64(),
            t0: self.t0.as_f64(),
            measurements: self.measurements,
            eigenvalues: self.eigenvalues.iter().map(|&z| z.into()).collect(),
            exponents: self.exponents.iter().map(|&z| z.into()).collect(),
            amplitudes: self.amplitudes.iter().map(|&z| z.into()).collect(),
        }
    }
}

impl ModelRecord {
    /// Spectrum rows rebuilt from the stored eigenvalues, exponents and amplitudes.
    pub fn spectrum(&self) -> Vec<SpectrumEntry<f64>> {
        let mus: Vec<C<f64>> = self.eigenvalues.iter().map(|&z| z.into()).collect();
        eigen_order(&mus)
            .into_iter()
            .map(|k| {
                let mu = mus[k];
                let amp = self
                    .amplitudes
                    .get(k)
                    .map(|&b| C::<f64>::from(b).norm())
                    .unwrap_or(0.0);
                SpectrumEntry {
                    mu,
                    omega: self
                        .exponents
                        .get(k)
                        .map(|&w| w.into())
                        .unwrap_or_else(|| mu.ln() / self.dt),
                    amp_abs: amp,
                    circle: classify(mu.norm()),
                }
            })
            .collect()
    }
}

/// Writes modes as CSV: one column per mode, real parts in the first
/// `D_out` rows followed by imaginary parts.
pub fn write_modes_csv<T: Real>(model: &DmdModel<T>, path: &std::path::Path) -> Result<()> {
    use std::fmt::Write as _;
    let (rows, cols) = model.modes.shape();
    let mut out = String::with_capacity(2 * rows * cols * 24);
    for part in 0..2 {
        for i in 0..rows {
            for j in 0..cols {
                if j > 0 {
                    out.push(',');
                }
                let z = model.modes[(i, j)];
                let v = if part == 0 { z.re } else { z.im };
                write!(out, "{v}").expect("writing to String");
            }
            out.push('\n');
        }
    }
    std::fs::write(path, out).map_err(|e| DmdError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::projections::{identity_operator, sampling_operator};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn close(a: C<f64>, b: C<f64>, tol: f64) -> bool {
        (a - b).norm() < tol
    }

    fn simulate(a: &DMatrix<f64>, x1: &DVector<f64>, n: usize) -> DMatrix<f64> {
        let mut cols = vec![x1.clone()];
        for k in 1..n {
            let next = a * &cols[k - 1];
            cols.push(next);
        }
        DMatrix::from_columns(&cols)
    }

    fn snapshots(data: DMatrix<f64>, dt: f64) -> SnapshotMatrix<f64> {
        SnapshotMatrix::new(data, dt).unwrap()
    }

    #[test]
    fn rank_policy_parsing() {
        assert_eq!(
            "fixed:20".parse::<RankPolicy>().unwrap(),
            RankPolicy::Fixed(20)
        );
        assert_eq!(
            "tol:1e-8".parse::<RankPolicy>().unwrap(),
            RankPolicy::RelativeThreshold(1e-8)
        );
        assert!("fixed:0".parse::<RankPolicy>().is_err());
        assert!("tol:2".parse::<RankPolicy>().is_err());
        assert!("both:1".parse::<RankPolicy>().is_err());
        assert_eq!(RankPolicy::default(), RankPolicy::RelativeThreshold(1e-10));
    }

    #[test]
    fn scalar_doubling() {
        let x1 = DMatrix::from_row_slice(1, 2, &[1.0, 2.0]);
        let x2 = DMatrix::from_row_slice(1, 2, &[2.0, 4.0]);
        let m = dmd_classic(&x1, &x2, 1.0, RankPolicy::default()).unwrap();
        assert_eq!(m.rank(), 1);
        assert!(close(m.eigenvalues[0], C::new(2.0, 0.0), 1e-14));
        assert!(close(m.modes[(0, 0)], C::new(1.0, 0.0), 1e-14));
        assert!(close(m.amplitudes[0], C::new(1.0, 0.0), 1e-14));
    }

    #[test]
    fn static_data_has_zero_exponents() {
        let x1 = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 0.5, -1.0, 0.3, 2.0]);
        let m = dmd_classic(&x1, &x1, 0.1, RankPolicy::default()).unwrap();
        for (mu, w) in m.eigenvalues.iter().zip(&m.exponents) {
            assert!(close(*mu, C::new(1.0, 0.0), 1e-12));
            assert!(w.norm() < 1e-10);
        }
        for k in [0, 1, 7, 50] {
            assert!((m.predict(k) - x1.column(0)).amax() < 1e-10);
        }
    }

    #[test]
    fn diagonal_linear_system() {
        let a = DMatrix::from_row_slice(2, 2, &[0.9, 0.0, 0.0, 0.5]);
        let x = simulate(&a, &DVector::from_vec(vec![1.0, 1.0]), 10);
        let m = dmd_classic_snapshots(&snapshots(x, 1.0), RankPolicy::default()).unwrap();
        assert!(close(m.eigenvalues[0], C::new(0.9, 0.0), 1e-10));
        assert!(close(m.eigenvalues[1], C::new(0.5, 0.0), 1e-10));
        let p = m.predict(3);
        assert!((p[0] - 0.9f64.powi(3)).abs() < 1e-10);
        assert!((p[1] - 0.5f64.powi(3)).abs() < 1e-10);
    }

    #[test]
    fn zero_initial_condition_is_reported() {
        let x = DMatrix::from_row_slice(2, 4, &[0.0, 1.0, 2.0, 3.0, 0.0, 1.0, 0.5, 0.2]);
        let (x1, x2) = split(&snapshots(x, 1.0)).unwrap();
        assert!(matches!(
            dmd_classic(&x1, &x2, 1.0, RankPolicy::default()),
            Err(DmdError::ZeroInitialCondition)
        ));
        let zeros = DMatrix::<f64>::zeros(3, 4);
        assert!(matches!(
            dmd_classic(&zeros, &zeros, 1.0, RankPolicy::default()),
            Err(DmdError::DegenerateData)
        ));
    }

    #[test]
    fn tdc_q1_matches_classic() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = DMatrix::from_fn(4, 4, |_, _| rng.gen_range(-0.5..0.5));
        let x = snapshots(simulate(&a, &DVector::from_element(4, 1.0), 15), 0.1);
        let tdc = dmd_tdc(&x, 1, RankPolicy::default()).unwrap();
        let classic = dmd_classic_snapshots(&x, RankPolicy::default()).unwrap();
        assert_eq!(tdc.rank(), classic.rank());
        for (a, b) in tdc.eigenvalues.iter().zip(&classic.eigenvalues) {
            assert!(close(*a, *b, 1e-10));
        }
    }

    #[test]
    fn tdc_recovers_cosine_pair() {
        let theta = 0.3;
        let x = DMatrix::from_fn(1, 20, |_, k| (theta * k as f64).cos());
        let x = snapshots(x, 1.0);
        let classic = dmd_classic_snapshots(&x, RankPolicy::default()).unwrap();
        assert_eq!(classic.rank(), 1);
        assert!(classic.eigenvalues[0].im == 0.0);

        let m = dmd_tdc(&x, 2, RankPolicy::default()).unwrap();
        assert_eq!(m.rank(), 2);
        assert!(close(m.eigenvalues[0], C::new(0.0, theta).exp(), 1e-8));
        assert!(close(m.eigenvalues[1], C::new(0.0, -theta).exp(), 1e-8));
        assert!(conjugate_mismatch(&m.eigenvalues) < 1e-8);
    }

    #[test]
    fn sinusoid_frequency_extraction() {
        let dt = 0.05;
        for f in [0.7, 1.3, 3.1, 8.4] {
            let x = DMatrix::from_fn(3, 60, |i, k| {
                let t = (k + 1) as f64 * dt;
                (i as f64 + 1.0) * (2.0 * std::f64::consts::PI * f * t + 0.3 * i as f64).sin()
            });
            let m = dmd_tdc(&snapshots(x, dt), 2, RankPolicy::default()).unwrap();
            let entries = spectrum(&m);
            let top = entries
                .iter()
                .max_by(|a, b| a.amp_abs.partial_cmp(&b.amp_abs).unwrap())
                .unwrap();
            let got = top.omega.im.abs() / (2.0 * std::f64::consts::PI);
            assert!((got - f).abs() <= 1e-3 * f, "{got} vs {f}");
        }
    }

    #[test]
    fn projected_identity_matches_tdc() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let a = DMatrix::from_fn(3, 3, |_, _| rng.gen_range(-0.6..0.6));
        let x = snapshots(
            simulate(&a, &DVector::from_vec(vec![1.0, -0.5, 0.2]), 16),
            0.1,
        );
        let tdc = dmd_tdc(&x, 2, RankPolicy::default()).unwrap();
        let r = identity_operator::<f64>(6).unwrap();
        let proj = dmd_projected(&x, 2, &r, RankPolicy::default()).unwrap();
        assert_eq!(tdc.rank(), proj.rank());
        for (a, b) in tdc.eigenvalues.iter().zip(&proj.eigenvalues) {
            assert!(close(*a, *b, 1e-10));
        }
        assert_eq!(proj.variant, Variant::Projected(ProjectionKind::Identity));
        // Both reconstruct the first snapshot.
        assert!((proj.predict(0) - x.data().column(0)).amax() < 1e-8);
    }

    #[test]
    fn projected_rejects_rank_above_measurements() {
        let data = DMatrix::from_fn(5, 12, |i, k| {
            let t = k as f64 * 0.1;
            (i as f64 + 1.0) * (0.9f64).powf(t)
                + (i as f64 - 2.0) * (0.5f64).powf(t) * (i as f64).cos()
        });
        let x = snapshots(data, 0.1);
        let r = sampling_operator::<f64>(5, 1, 4).unwrap();
        let e = dmd_projected(&x, 1, &r, RankPolicy::default()).unwrap_err();
        assert!(
            matches!(e, DmdError::InsufficientMeasurements { .. }),
            "{e}"
        );
        let e = dmd_projected(&x, 1, &r, RankPolicy::Fixed(2)).unwrap_err();
        assert!(
            matches!(
                e,
                DmdError::InsufficientMeasurements {
                    rank: 2,
                    rows: 1,
                    ..
                }
            ),
            "{e}"
        );
        let r2 = sampling_operator::<f64>(5, 2, 4).unwrap();
        assert!(dmd_projected(&x, 1, &r2, RankPolicy::Fixed(2)).is_ok());
    }

    #[test]
    fn rank_guard_counts_delays() {
        let data = DMatrix::from_fn(6, 30, |i, k| {
            let t = k as f64 * 0.1;
            (i as f64 + 1.0) * (3.0 * t).sin() + (i as f64 - 2.5) * (7.0 * t).cos()
        });
        let x = snapshots(data, 0.1);
        let opts = ProjectedOptions {
            project_before_augment: true,
        };
        let r = sampling_operator::<f64>(6, 2, 1).unwrap();
        let ok = dmd_projected_with(&x, 2, &r, RankPolicy::Fixed(4), opts).unwrap();
        assert_eq!(ok.rank(), 4);
        let e = dmd_projected_with(&x, 2, &r, RankPolicy::Fixed(5), opts).unwrap_err();
        assert!(
            matches!(
                e,
                DmdError::InsufficientMeasurements {
                    rank: 5,
                    rows: 4,
                    a: 2,
                    q: 2
                }
            ),
            "{e}"
        );

        // Augment-then-project: two rows cap the fit at rank 2 even though aq = 4.
        let r = sampling_operator::<f64>(12, 2, 1).unwrap();
        let capped = dmd_projected(&x, 2, &r, RankPolicy::Fixed(4)).unwrap();
        assert_eq!(capped.rank(), 2);
        assert!(dmd_projected(&x, 2, &r, RankPolicy::Fixed(5)).is_err());
    }

    #[test]
    fn projected_checks_operator_width() {
        let x = snapshots(
            DMatrix::from_fn(4, 6, |i, k| ((i + 1) * (k + 2)) as f64),
            1.0,
        );
        let r = identity_operator::<f64>(4).unwrap();
        assert!(matches!(
            dmd_projected(&x, 2, &r, RankPolicy::default()),
            Err(DmdError::Shape { .. })
        ));
    }

    #[test]
    fn predict_first_snapshot_full_rank() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let x = snapshots(DMatrix::from_fn(8, 5, |_, _| rng.gen_range(-1.0..1.0)), 0.2);
        let m = dmd_classic_snapshots(&x, RankPolicy::default()).unwrap();
        let rel = (m.predict(0) - x.data().column(0)).norm() / x.data().column(0).norm();
        assert!(rel < 1e-8, "{rel}");
    }

    #[test]
    fn pod_modes_rank_one() {
        let u = DVector::from_vec(vec![0.6, -0.8, 0.0]);
        let v = DVector::from_vec(vec![1.0, 2.0, -1.0, 0.5]);
        let x = snapshots(&u * v.transpose() * 3.0, 1.0);
        let pod = pod_modes(&x, RankPolicy::default()).unwrap();
        assert_eq!(pod.ncols(), 1);
        // sign fixed so the largest entry (-0.8) becomes positive
        assert!((pod.column(0) + &u).amax() < 1e-14);
    }

    #[test]
    fn pod_modes_orthonormal() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = snapshots(
            DMatrix::from_fn(30, 9, |_, _| rng.gen_range(-1.0..1.0)),
            1.0,
        );
        let pod = pod_modes(&x, RankPolicy::Fixed(6)).unwrap();
        let g = pod.transpose() * &pod;
        assert!((g - DMatrix::<f64>::identity(6, 6)).amax() < 1e-10);
    }

    fn model_with(mus: &[C<f64>], dt: f64) -> DmdModel<f64> {
        let n = mus.len();
        DmdModel {
            modes: DMatrix::identity(n, n),
            eigenvalues: mus.to_vec(),
            exponents: mus.iter().map(|m| m.ln() / dt).collect(),
            amplitudes: vec![C::new(1.0, 0.0); n],
            q: 1,
            base_m: n,
            dt,
            t0: 0.0,
            variant: Variant::Classic,
            measurements: None,
        }
    }

    #[test]
    fn spectrum_classification() {
        let m = model_with(
            &[
                C::new(1.0, 0.0),
                C::new(0.0, 0.4).exp(),
                C::new(1.1, 0.0),
                C::new(0.5, 0.0),
            ],
            0.05,
        );
        let entries = spectrum(&m);
        assert_eq!(entries[0].mu, C::new(1.1, 0.0));
        assert_eq!(entries[0].circle, Circle::Outside);
        assert_eq!(entries[3].circle, Circle::Inside);
        let unit = entries.iter().find(|e| e.mu == C::new(1.0, 0.0)).unwrap();
        assert_eq!(unit.circle, Circle::On);
        assert!(unit.omega.norm() == 0.0);
        let rot = entries.iter().find(|e| e.mu.im > 0.0).unwrap();
        assert_eq!(rot.circle, Circle::On);
        assert!((rot.omega - C::new(0.0, 8.0)).norm() < 1e-12);
    }

    #[test]
    fn record_spectrum_matches_model() {
        let m = model_with(
            &[
                C::new(0.0, 0.4).exp(),
                C::new(0.0, -0.4).exp(),
                C::new(0.9, 0.0),
            ],
            0.05,
        );
        let rec = m.to_record();
        let json = serde_json::to_string(&rec).unwrap();
        let back: ModelRecord = serde_json::from_str(&json).unwrap();
        assert_eq!(back, rec);
        let a = spectrum(&m);
        let b = back.spectrum();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.mu, y.mu);
            assert_eq!(x.circle, y.circle);
        }
    }

    #[test]
    fn generic_over_f32() {
        let x1 = DMatrix::<f32>::from_row_slice(1, 3, &[1.0, 0.5, 0.25]);
        let x2 = DMatrix::<f32>::from_row_slice(1, 3, &[0.5, 0.25, 0.125]);
        let m = dmd_classic(&x1, &x2, 1.0f32, RankPolicy::default()).unwrap();
        assert!((m.eigenvalues[0].re - 0.5).abs() < 1e-6);
    }

    fn random_stable(m: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
        // Real diagonal/rotation blocks in a random basis, radii in [0.3, 0.95].
        let mut d = DMatrix::zeros(m, m);
        let mut i = 0;
        while i < m {
            let r = rng.gen_range(0.3..0.95);
            if i + 1 < m && rng.gen_bool(0.5) {
                let th = rng.gen_range(0.2..2.5);
                d[(i, i)] = r * f64::cos(th);
                d[(i, i + 1)] = -r * f64::sin(th);
                d[(i + 1, i)] = r * f64::sin(th);
                d[(i + 1, i + 1)] = r * f64::cos(th);
                i += 2;
            } else {
                d[(i, i)] = if rng.gen_bool(0.5) { r } else { -r };
                i += 1;
            }
        }
        let p = DMatrix::from_fn(
            m,
            m,
            |i, j| if i == j { 1.0 } else { 0.0 } + rng.gen_range(-0.4..0.4),
        );
        let p_inv = p.clone().try_inverse().unwrap();
        &p * d * p_inv
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(40))]

        #[test]
        fn linear_system_oracle(seed in 0u64..10_000, m in 1usize..=5) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = random_stable(m, &mut rng);
            let x1 = DVector::from_fn(m, |_, _| rng.gen_range(0.5..1.5));
            let x = snapshots(simulate(&a, &x1, 2 * m + 2), 0.1);
            let model = dmd_classic_snapshots(&x, RankPolicy::default()).unwrap();
            let truth = eig_dense(&a).unwrap().eigenvalues;
            prop_assert_eq!(model.rank(), m);
            for mu in &truth {
                let best = model.eigenvalues.iter().map(|z| (z - mu).norm()).fold(f64::INFINITY, f64::min);
                prop_assert!(best < 1e-8, "eig {} missed by {}", mu, best);
            }
            prop_assert!(conjugate_mismatch(&model.eigenvalues) < 1e-8);
        }

        #[test]
        fn exact_rank_reconstructs_training(seed in 0u64..10_000, m in 2usize..=5) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = random_stable(m, &mut rng);
            let x1 = DVector::from_fn(m, |_, _| rng.gen_range(0.5..1.5));
            let data = simulate(&a, &x1, 3 * m);
            let x = snapshots(data.clone(), 0.1);
            let model = dmd_classic_snapshots(&x, RankPolicy::default()).unwrap();
            for k in 0..data.ncols() {
                let truth = data.column(k);
                let err = (model.predict(k) - truth).norm() / truth.norm().max(1e-12);
                prop_assert!(err <= 1e-6, "step {} err {}", k, err);
            }
        }
    }
}
