//! Analytic benchmark generators: the double-gyre vorticity field and a
//! two-frequency signal on Gaussian spatial modes.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{DmdError, Result};
use crate::numerics::Real;
use crate::snapshots::{GridMeta, SnapshotMatrix};

/// Parameters of the time-periodic double gyre on `[0,2] x [0,1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DoubleGyreParams {
    pub amp: f64,
    /// Forcing frequency in rad/s.
    pub omega: f64,
    pub eps: f64,
    pub grid: GridMeta,
    pub nt: usize,
    pub dt: f64,
    pub t0: f64,
}

impl Default for DoubleGyreParams {
    fn default() -> Self {
        DoubleGyreParams {
            amp: 0.1,
            omega: 2.0 * PI / 10.0,
            eps: 0.25,
            grid: GridMeta {
                nx: 100,
                ny: 100,
                x_min: 0.0,
                x_max: 2.0,
                y_min: 0.0,
                y_max: 1.0,
            },
            nt: 200,
            dt: 0.05,
            t0: 0.0,
        }
    }
}

impl DoubleGyreParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.amp > 0.0) {
            return Err(DmdError::param(
                "amp",
                format!("must be > 0, got {}", self.amp),
            ));
        }
        if !(self.omega > 0.0) {
            return Err(DmdError::param(
                "omega",
                format!("must be > 0, got {}", self.omega),
            ));
        }
        if !(0.0..0.5).contains(&self.eps) {
            return Err(DmdError::param(
                "eps",
                format!("must lie in [0, 0.5), got {}", self.eps),
            ));
        }
        if self.nt < 2 {
            return Err(DmdError::param(
                "nt",
                format!("must be >= 2, got {}", self.nt),
            ));
        }
        if !(self.dt > 0.0) {
            return Err(DmdError::param(
                "dt",
                format!("must be > 0, got {}", self.dt),
            ));
        }
        self.grid.validate()?;
        if self.grid.nx < 3 || self.grid.ny < 3 {
            return Err(DmdError::InvalidGrid(format!(
                "vorticity stencils need at least 3x3 nodes, got {}x{}",
                self.grid.nx, self.grid.ny
            )));
        }
        Ok(())
    }
}

/// `(f, df/dx)` of the time-dependent x-warping.
fn warp<T: Real>(x: T, t: T, p: &DoubleGyreParams) -> (T, T) {
    let a = T::lit(p.eps) * (T::lit(p.omega) * t).sin();
    let two = T::lit(2.0);
    let f = a * x * x + x - two * a * x;
    let dfdx = two * a * x + T::one() - two * a;
    (f, dfdx)
}

/// Stream function of the double gyre.
pub fn stream_function<T: Real>(x: T, y: T, t: T, p: &DoubleGyreParams) -> T {
    let pi = T::pi();
    let (f, _) = warp(x, t, p);
    T::lit(p.amp) * (pi * f).sin() * (pi * y).sin()
}

/// Velocity `(u, v) = (-dpsi/dy, dpsi/dx)`.
pub fn velocity<T: Real>(x: T, y: T, t: T, p: &DoubleGyreParams) -> (T, T) {
    let pi = T::pi();
    let amp = T::lit(p.amp);
    let (f, dfdx) = warp(x, t, p);
    let u = -pi * amp * (pi * f).sin() * (pi * y).cos();
    let v = pi * amp * (pi * f).cos() * (pi * y).sin() * dfdx;
    (u, v)
}

/// Vorticity `dv/dx - du/dy` on the grid at time `t`, flattened y-outer.
///
/// Velocities are exact; derivatives use second-order central differences in
/// the interior and second-order one-sided differences on the boundary.
pub fn vorticity_field<T: Real>(t: T, p: &DoubleGyreParams) -> Result<DVector<T>> {
    let g = &p.grid;
    g.validate()?;
    if g.nx < 3 || g.ny < 3 {
        return Err(DmdError::InvalidGrid(format!(
            "vorticity stencils need at least 3x3 nodes, got {}x{}",
            g.nx, g.ny
        )));
    }
    let xs: Vec<T> = (0..g.nx).map(|i| T::lit(g.x(i))).collect();
    let ys: Vec<T> = (0..g.ny).map(|j| T::lit(g.y(j))).collect();
    let mut u = vec![T::zero(); g.len()];
    let mut v = vec![T::zero(); g.len()];
    for j in 0..g.ny {
        for i in 0..g.nx {
            let (uu, vv) = velocity(xs[i], ys[j], t, p);
            u[g.index(i, j)] = uu;
            v[g.index(i, j)] = vv;
        }
    }
    let hx = T::lit(g.dx());
    let hy = T::lit(g.dy());
    let mut out = DVector::zeros(g.len());
    for j in 0..g.ny {
        for i in 0..g.nx {
            let dvdx = diff(|k| v[g.index(k, j)], i, g.nx, hx);
            let dudy = diff(|k| u[g.index(i, k)], j, g.ny, hy);
            out[g.index(i, j)] = dvdx - dudy;
        }
    }
    Ok(out)
}

/// Second-order first derivative of a sampled line at index `i`.
fn diff<T: Real>(f: impl Fn(usize) -> T, i: usize, n: usize, h: T) -> T {
    let two = T::lit(2.0);
    let three = T::lit(3.0);
    let four = T::lit(4.0);
    if i == 0 {
        (-three * f(0) + four * f(1) - f(2)) / (two * h)
    } else if i == n - 1 {
        (three * f(n - 1) - four * f(n - 2) + f(n - 3)) / (two * h)
    } else {
        (f(i + 1) - f(i - 1)) / (two * h)
    }
}

/// Vorticity snapshots at `t0 + k dt` for `k = 0..nt`.
pub fn generate_double_gyre<T: Real>(p: &DoubleGyreParams) -> Result<SnapshotMatrix<T>> {
    p.validate()?;
    let mut data = DMatrix::zeros(p.grid.len(), p.nt);
    for k in 0..p.nt {
        let t = T::lit(p.t0) + T::lit(p.dt) * T::from_count(k);
        data.set_column(k, &vorticity_field(t, p)?);
    }
    SnapshotMatrix::with_meta(data, T::lit(p.dt), T::lit(p.t0), Some(p.grid))
}

/// Parameters of the two-frequency signal on `[-2,2]^2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SignalParams {
    /// Frequency of the `v1` mode in Hz.
    pub f1: f64,
    /// Frequency of the `v2` mode in Hz.
    pub f2: f64,
    pub noise_amp: f64,
    pub grid: GridMeta,
    /// Snapshot count; `None` covers `[t0, t_final]`.
    pub nt: Option<usize>,
    pub dt: f64,
    pub t_final: f64,
    pub t0: f64,
}

impl Default for SignalParams {
    fn default() -> Self {
        SignalParams {
            f1: 1.3,
            f2: 8.4,
            noise_amp: 0.0,
            grid: GridMeta {
                nx: 100,
                ny: 100,
                x_min: -2.0,
                x_max: 2.0,
                y_min: -2.0,
                y_max: 2.0,
            },
            nt: None,
            dt: 0.05,
            t_final: 4.0,
            t0: 0.0,
        }
    }
}

impl SignalParams {
    /// Number of snapshots generated.
    pub fn snapshot_count(&self) -> usize {
        self.nt
            .unwrap_or_else(|| ((self.t_final - self.t0) / self.dt).round().max(0.0) as usize + 1)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.f1 > 0.0) {
            return Err(DmdError::param(
                "f1",
                format!("must be > 0, got {}", self.f1),
            ));
        }
        if !(self.f2 > 0.0) {
            return Err(DmdError::param(
                "f2",
                format!("must be > 0, got {}", self.f2),
            ));
        }
        if !(self.noise_amp >= 0.0) {
            return Err(DmdError::param(
                "noise_amp",
                format!("must be >= 0, got {}", self.noise_amp),
            ));
        }
        if !(self.dt > 0.0) {
            return Err(DmdError::param(
                "dt",
                format!("must be > 0, got {}", self.dt),
            ));
        }
        let f_max = self.f1.max(self.f2);
        let limit = 1.0 / (2.0 * f_max);
        if self.dt > limit {
            return Err(DmdError::SamplingRate {
                dt: self.dt,
                f_max,
                limit,
            });
        }
        if self.snapshot_count() < 2 {
            return Err(DmdError::param("nt", "need at least 2 snapshots"));
        }
        self.grid.validate()
    }
}

/// The two spatial Gaussians `(v1, v2)` evaluated on the grid.
pub fn signal_modes<T: Real>(grid: &GridMeta) -> (DVector<T>, DVector<T>) {
    let mut v1 = DVector::zeros(grid.len());
    let mut v2 = DVector::zeros(grid.len());
    for j in 0..grid.ny {
        for i in 0..grid.nx {
            let (a, b) = gaussians(T::lit(grid.x(i)), T::lit(grid.y(j)));
            v1[grid.index(i, j)] = a;
            v2[grid.index(i, j)] = b;
        }
    }
    (v1, v2)
}

fn gaussians<T: Real>(x: T, y: T) -> (T, T) {
    let two = T::lit(2.0);
    let g = |dx: T, sx: f64, dy: T, sy: f64| {
        let sx = T::lit(sx);
        let sy = T::lit(sy);
        (-(dx * dx) / (two * sx * sx) - (dy * dy) / (two * sy * sy)).exp()
    };
    let v1 = two * g(x - T::lit(0.5), 0.6, y - T::lit(0.5), 0.2);
    let v2 = g(x + T::lit(0.25), 0.6, y - T::lit(0.35), 1.2);
    (v1, v2)
}

/// Noise-free signal snapshot at time `t`.
pub fn signal_snapshot<T: Real>(t: T, p: &SignalParams) -> DVector<T> {
    let (v1, v2) = signal_modes::<T>(&p.grid);
    let two_pi = T::two_pi();
    v1 * (two_pi * T::lit(p.f1) * t).sin() + v2 * (two_pi * T::lit(p.f2) * t).sin()
}

/// Signal snapshots at `t0 + k dt`, plus `noise_amp` times i.i.d. standard
/// normal noise drawn from `seed`.
pub fn generate_signal<T: Real>(p: &SignalParams, seed: u64) -> Result<SnapshotMatrix<T>> {
    p.validate()?;
    let nt = p.snapshot_count();
    let (v1, v2) = signal_modes::<T>(&p.grid);
    let two_pi = T::two_pi();
    let mut data = DMatrix::zeros(p.grid.len(), nt);
    for k in 0..nt {
        let t = T::lit(p.t0) + T::lit(p.dt) * T::from_count(k);
        let a1 = (two_pi * T::lit(p.f1) * t).sin();
        let a2 = (two_pi * T::lit(p.f2) * t).sin();
        data.set_column(k, &(&v1 * a1 + &v2 * a2));
    }
    if p.noise_amp > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let amp = T::lit(p.noise_amp);
        for k in 0..nt {
            for i in 0..p.grid.len() {
                let w: f64 = StandardNormal.sample(&mut rng);
                data[(i, k)] += amp * T::lit(w);
            }
        }
    }
    SnapshotMatrix::with_meta(data, T::lit(p.dt), T::lit(p.t0), Some(p.grid))
}
