//! Snapshot data model, shift splitting, Hankel (time-delay) augmentation,
//! train/test splitting and on-disk persistence.
//!
//! Snapshots are stored column-wise: column `k` is the state at time
//! `t0 + k * dt`.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{DmdError, Result};
use crate::numerics::{check_finite, Real};

/// Rectangular grid the state vector lives on, flattened y-outer, x-inner.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridMeta {
    pub nx: usize,
    pub ny: usize,
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

impl GridMeta {
    pub fn new(nx: usize, ny: usize, x: (f64, f64), y: (f64, f64)) -> Result<Self> {
        let g = GridMeta {
            nx,
            ny,
            x_min: x.0,
            x_max: x.1,
            y_min: y.0,
            y_max: y.1,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if self.nx == 0 || self.ny == 0 {
            return Err(DmdError::InvalidGrid(format!(
                "grid must have at least one node per axis, got {}x{}",
                self.nx, self.ny
            )));
        }
        let ordered = |lo: f64, hi: f64| lo.is_finite() && hi.is_finite() && lo < hi;
        if !ordered(self.x_min, self.x_max) || !ordered(self.y_min, self.y_max) {
            return Err(DmdError::InvalidGrid(format!(
                "bounds must satisfy min < max, got x [{}, {}], y [{}, {}]",
                self.x_min, self.x_max, self.y_min, self.y_max
            )));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn x(&self, i: usize) -> f64 {
        node(self.x_min, self.x_max, self.nx, i)
    }

    pub fn y(&self, j: usize) -> f64 {
        node(self.y_min, self.y_max, self.ny, j)
    }

    pub fn dx(&self) -> f64 {
        (self.x_max - self.x_min) / (self.nx.max(2) - 1) as f64
    }

    pub fn dy(&self) -> f64 {
        (self.y_max - self.y_min) / (self.ny.max(2) - 1) as f64
    }

    /// Flat index of node `(i, j)` (x index, y index).
    pub fn index(&self, i: usize, j: usize) -> usize {
        j * self.nx + i
    }
}

fn node(lo: f64, hi: f64, n: usize, i: usize) -> f64 {
    if n == 1 {
        return lo;
    }
    lo + (hi - lo) * i as f64 / (n - 1) as f64
}

/// States over time, one column per time instant.
#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotMatrix<T: Real> {
    data: DMatrix<T>,
    dt: T,
    t0: T,
    grid: Option<GridMeta>,
}

impl<T: Real> SnapshotMatrix<T> {
    pub fn new(data: DMatrix<T>, dt: T) -> Result<Self> {
        Self::with_meta(data, dt, T::zero(), None)
    }

    pub fn with_meta(data: DMatrix<T>, dt: T, t0: T, grid: Option<GridMeta>) -> Result<Self> {
        if data.nrows() == 0 {
            return Err(DmdError::Shape {
                expected: "at least one state row".into(),
                got: "0 rows".into(),
            });
        }
        if data.ncols() < 2 {
            return Err(DmdError::InsufficientSnapshots { n: data.ncols() });
        }
        if !(dt > T::zero()) || !dt.is_finite() {
            return Err(DmdError::param(
                "dt",
                format!("must be positive and finite, got {dt}"),
            ));
        }
        if !t0.is_finite() {
            return Err(DmdError::param("t0", "must be finite"));
        }
        if let Some(g) = &grid {
            g.validate()?;
            if g.len() != data.nrows() {
                return Err(DmdError::Consistency(format!(
                    "grid {}x{} has {} nodes but the data has {} rows",
                    g.nx,
                    g.ny,
                    g.len(),
                    data.nrows()
                )));
            }
        }
        check_finite(&data)?;
        Ok(SnapshotMatrix { data, dt, t0, grid })
    }

    pub fn data(&self) -> &DMatrix<T> {
        &self.data
    }

    pub fn into_data(self) -> DMatrix<T> {
        self.data
    }

    /// Number of state entries per snapshot (M).
    pub fn m(&self) -> usize {
        self.data.nrows()
    }

    /// Number of snapshots (N).
    pub fn n(&self) -> usize {
        self.data.ncols()
    }

    pub fn dt(&self) -> T {
        self.dt
    }

    pub fn t0(&self) -> T {
        self.t0
    }

    pub fn grid(&self) -> Option<&GridMeta> {
        self.grid.as_ref()
    }

    /// Time stamp of column `k`.
    pub fn time(&self, k: usize) -> T {
        self.t0 + self.dt * T::from_count(k)
    }

    /// Same data with every entry multiplied by `factor`.
    pub fn scaled(&self, factor: T) -> SnapshotMatrix<T> {
        SnapshotMatrix {
            data: &self.data * factor,
            ..self.clone()
        }
    }

    fn columns(&self, start: usize, count: usize, t0: T) -> SnapshotMatrix<T> {
        SnapshotMatrix {
            data: self.data.columns(start, count).into_owned(),
            dt: self.dt,
            t0,
            grid: self.grid,
        }
    }
}

/// Splits the sequence into `(X1, X2)`: columns `0..N-1` and `1..N`.
pub fn split<T: Real>(x: &SnapshotMatrix<T>) -> Result<(DMatrix<T>, DMatrix<T>)> {
    let n = x.n();
    if n < 2 {
        return Err(DmdError::InsufficientSnapshots { n });
    }
    Ok((
        x.data.columns(0, n - 1).into_owned(),
        x.data.columns(1, n - 1).into_owned(),
    ))
}

/// Time-delay augmented pair.
///
/// Column `j` of `x1_aug` stacks snapshots `j, j+1, ..., j+q-1`; `x2_aug` is
/// the same construction shifted forward by one snapshot.
#[derive(Debug, Clone, PartialEq)]
pub struct HankelPair<T: Real> {
    pub x1_aug: DMatrix<T>,
    pub x2_aug: DMatrix<T>,
    pub q: usize,
    pub base_m: usize,
    pub base_n: usize,
}

/// Builds the `(qM) x (N-q)` Hankel pair for delay depth `q`.
pub fn hankel_augment<T: Real>(x: &SnapshotMatrix<T>, q: usize) -> Result<HankelPair<T>> {
    hankel_from_matrix(&x.data, q)
}

pub(crate) fn hankel_from_matrix<T: Real>(data: &DMatrix<T>, q: usize) -> Result<HankelPair<T>> {
    let (m, n) = data.shape();
    if q == 0 || q >= n {
        return Err(DmdError::InvalidDelay { q, n });
    }
    let cols = n - q;
    let x1 = DMatrix::from_fn(q * m, cols, |r, c| data[(r % m, c + r / m)]);
    let x2 = DMatrix::from_fn(q * m, cols, |r, c| data[(r % m, c + 1 + r / m)]);
    Ok(HankelPair {
        x1_aug: x1,
        x2_aug: x2,
        q,
        base_m: m,
        base_n: n,
    })
}

/// Splits off the first `n_train` snapshots; the remainder keeps its own time origin.
pub fn train_test_split<T: Real>(
    x: &SnapshotMatrix<T>,
    n_train: usize,
) -> Result<(SnapshotMatrix<T>, SnapshotMatrix<T>)> {
    let n = x.n();
    if n_train < 2 || n_train >= n {
        return Err(DmdError::InvalidSplit { n_train, n });
    }
    let train = x.columns(0, n_train, x.t0);
    let test = SnapshotMatrix {
        data: x.data.columns(n_train, n - n_train).into_owned(),
        dt: x.dt,
        t0: x.time(n_train),
        grid: x.grid,
    };
    Ok((train, test))
}

/// Sidecar metadata stored next to the CSV data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotMeta {
    pub m: usize,
    pub n: usize,
    pub dt: f64,
    #[serde(default)]
    pub t0: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridMeta>,
}

/// Paths of the `<stem>.csv` / `<stem>.meta.json` pair for a user-supplied path.
///
/// Accepts the bare stem or either of the two file names.
pub fn snapshot_paths(path: &Path) -> (PathBuf, PathBuf) {
    let s = path.to_string_lossy();
    let stem = s
        .strip_suffix(".meta.json")
        .or_else(|| s.strip_suffix(".csv"))
        .unwrap_or(&s)
        .to_string();
    (
        PathBuf::from(format!("{stem}.csv")),
        PathBuf::from(format!("{stem}.meta.json")),
    )
}

/// Writes `<stem>.csv` (M rows, N columns, no header) and `<stem>.meta.json`.
///
/// Values are printed in shortest round-trip form, so loading returns the
/// exact same bits.
pub fn save<T: Real>(x: &SnapshotMatrix<T>, path: &Path) -> Result<()> {
    let (csv_path, meta_path) = snapshot_paths(path);
    if let Some(dir) = csv_path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| DmdError::io(dir, e))?;
    }
    let meta = SnapshotMeta {
        m: x.m(),
        n: x.n(),
        dt: x.dt.as_f64(),
        t0: x.t0.as_f64(),
        grid: x.grid,
    };
    let json = serde_json::to_string_pretty(&meta)?;
    fs::write(&meta_path, json + "\n").map_err(|e| DmdError::io(&meta_path, e))?;

    let mut out = String::with_capacity(x.m() * x.n() * 24);
    for i in 0..x.m() {
        for j in 0..x.n() {
            if j > 0 {
                out.push(',');
            }
            write!(out, "{}", x.data[(i, j)]).expect("writing to String");
        }
        out.push('\n');
    }
    fs::write(&csv_path, out).map_err(|e| DmdError::io(&csv_path, e))
}

/// Reads a snapshot pair written by [`save`].
pub fn load<T: Real>(path: &Path) -> Result<SnapshotMatrix<T>> {
    let (csv_path, meta_path) = snapshot_paths(path);
    let meta_text = fs::read_to_string(&meta_path).map_err(|e| DmdError::io(&meta_path, e))?;
    let meta = parse_meta(&meta_text, &meta_path)?;

    let csv_text = fs::read_to_string(&csv_path).map_err(|e| DmdError::io(&csv_path, e))?;
    let mut values = Vec::with_capacity(meta.m * meta.n);
    let mut rows = 0;
    for (lineno, line) in csv_text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut count = 0;
        for (col, field) in line.split(',').enumerate() {
            let v: f64 = field.trim().parse().map_err(|_| DmdError::Parse {
                path: csv_path.clone(),
                line: lineno + 1,
                field: format!("column {}", col + 1),
                message: format!("not a number: {:?}", field.trim()),
            })?;
            values.push(T::lit(v));
            count += 1;
        }
        if count != meta.n {
            return Err(DmdError::Consistency(format!(
                "{}:{}: expected {} columns (n in metadata), found {count}",
                csv_path.display(),
                lineno + 1,
                meta.n
            )));
        }
        rows += 1;
    }
    if rows != meta.m {
        return Err(DmdError::Consistency(format!(
            "{}: expected {} rows (m in metadata), found {rows}",
            csv_path.display(),
            meta.m
        )));
    }
    if let Some(g) = &meta.grid {
        if g.len() != meta.m {
            return Err(DmdError::Consistency(format!(
                "grid {}x{} = {} nodes does not match m = {}",
                g.nx,
                g.ny,
                g.len(),
                meta.m
            )));
        }
    }
    let data = DMatrix::from_row_slice(meta.m, meta.n, &values);
    SnapshotMatrix::with_meta(data, T::lit(meta.dt), T::lit(meta.t0), meta.grid)
}

fn parse_meta(text: &str, path: &Path) -> Result<SnapshotMeta> {
    let value: serde_json::Value = serde_json::from_str(text).map_err(|e| DmdError::Parse {
        path: path.to_path_buf(),
        line: e.line(),
        field: "<document>".into(),
        message: e.to_string(),
    })?;
    let obj = value.as_object().ok_or_else(|| DmdError::Parse {
        path: path.to_path_buf(),
        line: 1,
        field: "<document>".into(),
        message: "expected a JSON object".into(),
    })?;
    for field in ["m", "n", "dt"] {
        if !obj.contains_key(field) {
            return Err(DmdError::Parse {
                path: path.to_path_buf(),
                line: 1,
                field: field.into(),
                message: "missing required field".into(),
            });
        }
    }
    serde_json::from_value(value).map_err(|e| DmdError::Parse {
        path: path.to_path_buf(),
        line: 1,
        field: field_of(&e.to_string()),
        message: e.to_string(),
    })
}

fn field_of(msg: &str) -> String {
    msg.split('`').nth(1).unwrap_or("<unknown>").to_string()
}
