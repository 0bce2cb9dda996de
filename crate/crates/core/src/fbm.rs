//! Exact sampling of multidimensional fractional Brownian motion.
//!
//! Paths are drawn by a dense Cholesky factorization of the exact covariance
//! on a uniform grid. Every (path, component) pair owns its own ChaCha
//! stream, so sampling is reproducible regardless of thread scheduling.

use std::cell::Cell;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};

/// Largest grid accepted by the Cholesky sampler unless overridden.
pub const DEFAULT_CHOLESKY_CAP: usize = 4097;

const JITTER_LADDER: [f64; 6] = [0.0, 1e-14, 1e-13, 1e-12, 1e-11, 1e-10];

/// Relative tolerance of the inner kernel integral.
const KERNEL_REL_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HurstParam(f64);

impl HurstParam {
    pub fn new(value: f64) -> Result<Self> {
        if !(value > 0.0 && value < 1.0) {
            return domain(format!("Hurst parameter must lie in (0, 1), got {value}"));
        }
        Ok(Self(value))
    }

    pub fn value(self) -> f64 {
        self.0
    }

    /// True for 1/3 < H < 1/2, where the level-2 rough path machinery is needed.
    pub fn in_rough_regime(self) -> bool {
        self.0 > 1.0 / 3.0 && self.0 < 0.5
    }
}

/// Uniform grid `0 = t_0 < ... < t_{n-1} = T`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    horizon: f64,
    times: Vec<f64>,
}

impl TimeGrid {
    pub fn new(horizon: f64, n_points: usize) -> Result<Self> {
        if !(horizon > 0.0 && horizon.is_finite()) {
            return domain(format!("grid horizon must be positive, got {horizon}"));
        }
        if n_points < 2 {
            return domain(format!("grid needs at least 2 points, got {n_points}"));
        }
        let step = horizon / (n_points - 1) as f64;
        let mut times: Vec<f64> = (0..n_points).map(|i| i as f64 * step).collect();
        times[n_points - 1] = horizon;
        Ok(Self { horizon, times })
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn mesh(&self) -> f64 {
        self.horizon / (self.times.len() - 1) as f64
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn time(&self, i: usize) -> f64 {
        self.times[i]
    }

    /// Index of a grid time; off-grid times are a domain error.
    pub fn index_of(&self, t: f64) -> Result<usize> {
        let pos = t / self.mesh();
        let k = pos.round();
        if k < 0.0 || k as usize >= self.times.len() || (pos - k).abs() > 1e-9 {
            return domain(format!("time {t} is not on the grid (mesh {})", self.mesh()));
        }
        Ok(k as usize)
    }

    /// Coarsen by keeping every `stride`-th point; `stride` must divide `len - 1`.
    pub fn coarsen(&self, stride: usize) -> Result<TimeGrid> {
        if stride == 0 || !(self.len() - 1).is_multiple_of(stride) {
            return domain(format!(
                "stride {stride} does not divide {} grid intervals",
                self.len() - 1
            ));
        }
        TimeGrid::new(self.horizon, (self.len() - 1) / stride + 1)
    }
}

/// A `d`-dimensional path sampled on a uniform grid. Values are stored row
/// major: `values[i * dim + c]` is component `c` at time `t_i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplePath {
    grid: TimeGrid,
    dim: usize,
    values: Vec<f64>,
    hurst: Option<HurstParam>,
    seed: u64,
    index: u64,
}

impl SamplePath {
    /// Wrap externally produced values. The path must vanish at time 0.
    pub fn from_values(grid: TimeGrid, dim: usize, values: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return domain("path dimension must be at least 1");
        }
        if values.len() != grid.len() * dim {
            return domain(format!(
                "expected {} values for {} points x {} components, got {}",
                grid.len() * dim,
                grid.len(),
                dim,
                values.len()
            ));
        }
        if values[..dim].iter().any(|&v| v != 0.0) {
            return domain("sample paths must vanish at time 0");
        }
        Ok(Self {
            grid,
            dim,
            values,
            hurst: None,
            seed: 0,
            index: 0,
        })
    }

    /// Wrap a state trajectory (e.g. an equation solution) that need not
    /// start at 0.
    pub fn trajectory(grid: TimeGrid, dim: usize, values: Vec<f64>) -> Result<Self> {
        if dim == 0 || values.len() != grid.len() * dim {
            return domain(format!(
                "trajectory needs {} values of dimension {dim}, got {}",
                grid.len(),
                values.len()
            ));
        }
        Ok(Self {
            grid,
            dim,
            values,
            hurst: None,
            seed: 0,
            index: 0,
        })
    }

    /// Read the format written by [`SamplePath::to_csv`]. Times must form a
    /// uniform grid starting at 0.
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines.next().ok_or(Error::Parse {
            line: 1,
            msg: "empty path file".into(),
        })?;
        let dim = header.split(',').count().saturating_sub(1);
        if dim == 0 {
            return Err(Error::Parse {
                line: 1,
                msg: "header needs a time column and at least one component".into(),
            });
        }
        let mut times = Vec::new();
        let mut values = Vec::new();
        for (no, line) in lines {
            let row: Vec<f64> = line
                .split(',')
                .map(|c| c.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Parse {
                    line: no + 1,
                    msg: e.to_string(),
                })?;
            if row.len() != dim + 1 {
                return Err(Error::Parse {
                    line: no + 1,
                    msg: format!("expected {} columns, got {}", dim + 1, row.len()),
                });
            }
            times.push(row[0]);
            values.extend_from_slice(&row[1..]);
        }
        let grid = TimeGrid::new(*times.last().unwrap_or(&0.0), times.len())?;
        let tol = 1e-9 * grid.horizon();
        if times.iter().zip(grid.times()).any(|(a, b)| (a - b).abs() > tol) {
            return domain("path times are not a uniform grid starting at 0");
        }
        Self::trajectory(grid, dim, values)
    }

    /// Tag the path with the seed and stream index it was generated from.
    pub fn with_origin(mut self, hurst: Option<HurstParam>, seed: u64, index: u64) -> Self {
        self.hurst = hurst;
        self.seed = seed;
        self.index = index;
        self
    }

    /// Build a path from a function of time, shifted so that it starts at 0.
    pub fn from_fn(grid: TimeGrid, dim: usize, f: impl Fn(f64) -> Vec<f64>) -> Result<Self> {
        let start = f(0.0);
        let mut values = Vec::with_capacity(grid.len() * dim);
        for &t in grid.times() {
            let v = f(t);
            if v.len() != dim {
                return domain("path function returned the wrong dimension");
            }
            values.extend(v.iter().zip(&start).map(|(a, b)| a - b));
        }
        Self::from_values(grid, dim, values)
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    pub fn value(&self, i: usize, component: usize) -> f64 {
        self.values[i * self.dim + component]
    }

    /// Increment `x_{t_j} - x_{t_i}`.
    pub fn increment(&self, i: usize, j: usize) -> Vec<f64> {
        self.row(j).iter().zip(self.row(i)).map(|(b, a)| b - a).collect()
    }

    pub fn hurst(&self) -> Option<HurstParam> {
        self.hurst
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn index(&self) -> u64 {
        self.index
    }

    /// Restrict to one component, as a 1-dimensional path.
    pub fn component(&self, c: usize) -> SamplePath {
        let values = (0..self.len()).map(|i| self.value(i, c)).collect();
        SamplePath {
            grid: self.grid.clone(),
            dim: 1,
            values,
            hurst: self.hurst,
            seed: self.seed,
            index: self.index,
        }
    }

    /// Multiply every value by `c`.
    pub fn scaled(&self, c: f64) -> SamplePath {
        let mut out = self.clone();
        out.values.iter_mut().for_each(|v| *v *= c);
        out
    }

    /// CSV dump: header `t,comp_1,...,comp_d`, one row per grid point.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t");
        for c in 1..=self.dim {
            out.push_str(&format!(",comp_{c}"));
        }
        out.push('\n');
        for (i, &t) in self.grid.times().iter().enumerate() {
            out.push_str(&fmt_f64(t));
            for &v in self.row(i) {
                out.push(',');
                out.push_str(&fmt_f64(v));
            }
            out.push('\n');
        }
        out
    }

    pub fn metadata(&self, c_h: Option<f64>) -> PathMetadata {
        PathMetadata {
            hurst: self.hurst.map(HurstParam::value),
            horizon: self.grid.horizon(),
            n_points: self.grid.len(),
            d: self.dim,
            seed: self.seed,
            path_index: self.index,
            c_h,
        }
    }
}

/// JSON sidecar describing a dumped path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathMetadata {
    #[serde(rename = "H")]
    pub hurst: Option<f64>,
    #[serde(rename = "T")]
    pub horizon: f64,
    pub n_points: usize,
    pub d: usize,
    pub seed: u64,
    pub path_index: u64,
    /// Calibrated kernel constant, when it was computed for the run.
    pub c_h: Option<f64>,
}

/// Fixed float formatting (17 significant digits) used by every text artifact.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

/// fBm covariance `½(s^{2H} + t^{2H} - |t-s|^{2H})`.
pub fn covariance(s: f64, t: f64, h: HurstParam) -> Result<f64> {
    if s < 0.0 || t < 0.0 {
        return domain(format!("covariance needs non-negative times, got ({s}, {t})"));
    }
    let two_h = 2.0 * h.value();
    Ok(0.5 * (s.powf(two_h) + t.powf(two_h) - (t - s).abs().powf(two_h)))
}

/// Cholesky factor of the fBm covariance on the non-zero grid times.
#[derive(Debug, Clone)]
pub struct FbmSampler {
    hurst: HurstParam,
    grid: TimeGrid,
    factor: DMatrix<f64>,
    jitter: f64,
}

impl FbmSampler {
    pub fn new(hurst: HurstParam, grid: TimeGrid) -> Result<Self> {
        Self::with_cap(hurst, grid, DEFAULT_CHOLESKY_CAP)
    }

    pub fn with_cap(hurst: HurstParam, grid: TimeGrid, cap: usize) -> Result<Self> {
        if grid.len() > cap {
            return domain(format!(
                "grid of {} points exceeds the Cholesky cap of {cap}",
                grid.len()
            ));
        }
        let n = grid.len() - 1;
        let times = &grid.times()[1..];
        let mut cov = DMatrix::<f64>::zeros(n, n);
        for i in 0..n {
            for j in 0..=i {
                let c = covariance(times[i], times[j], hurst)?;
                cov[(i, j)] = c;
                cov[(j, i)] = c;
            }
        }
        for &eps in &JITTER_LADDER {
            let mut m = cov.clone();
            for i in 0..n {
                m[(i, i)] += eps;
            }
            if let Some(ch) = m.cholesky() {
                return Ok(Self {
                    hurst,
                    grid,
                    factor: ch.unpack(),
                    jitter: eps,
                });
            }
        }
        let min_diag = (0..n).map(|i| cov[(i, i)]).fold(f64::INFINITY, f64::min);
        Err(Error::Factorization {
            n,
            max_jitter: *JITTER_LADDER.last().unwrap(),
            detail: format!(
                "H = {}, smallest diagonal entry {min_diag:e}",
                hurst.value()
            ),
        })
    }

    pub fn hurst(&self) -> HurstParam {
        self.hurst
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    /// Diagonal jitter that was needed for the factorization to succeed.
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    /// Sample path number `index` of the stream family `seed`.
    pub fn sample_one(&self, d: usize, seed: u64, index: u64) -> Result<SamplePath> {
        if d == 0 {
            return domain("fBm dimension must be at least 1");
        }
        let n = self.grid.len();
        let mut values = vec![0.0; n * d];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for c in 0..d {
            rng.set_stream(index * d as u64 + c as u64);
            rng.set_word_pos(0);
            let z = DVector::from_iterator(
                n - 1,
                (0..n - 1).map(|_| StandardNormal.sample(&mut rng)),
            );
            let x = &self.factor * z;
            for (i, v) in x.iter().enumerate() {
                values[(i + 1) * d + c] = *v;
            }
        }
        Ok(SamplePath {
            grid: self.grid.clone(),
            dim: d,
            values,
            hurst: Some(self.hurst),
            seed,
            index,
        })
    }

    /// `n_paths` independent paths with indices `0..n_paths`.
    pub fn sample(&self, d: usize, n_paths: usize, seed: u64) -> Result<Vec<SamplePath>> {
        self.sample_range(d, 0..n_paths as u64, seed)
    }

    pub fn sample_range(
        &self,
        d: usize,
        indices: std::ops::Range<u64>,
        seed: u64,
    ) -> Result<Vec<SamplePath>> {
        indices
            .into_par_iter()
            .map(|i| self.sample_one(d, seed, i))
            .collect()
    }
}

/// Convenience wrapper: factorize and draw `n_paths` paths.
pub fn sample_fbm(
    hurst: HurstParam,
    grid: &TimeGrid,
    d: usize,
    n_paths: usize,
    seed: u64,
) -> Result<Vec<SamplePath>> {
    FbmSampler::new(hurst, grid.clone())?.sample(d, n_paths, seed)
}

/// `∫_u^t v^{H-3/2} (v-u)^{H-1/2} dv`, rewritten with `v = u/x` as
/// `u^{2H-1} ∫_{u/t}^1 x^{-2H} (1-x)^{H-1/2} dx` so the scale of `u` drops out.
fn kernel_inner(t: f64, u: f64, h: f64) -> Result<f64> {
    let lo = u / t;
    let value = if h < 0.5 {
        // y = x^{1-2H} absorbs the x^{-2H} spike at small x.
        let p = 1.0 - 2.0 * h;
        let g = |y: f64| (1.0 - y.powf(1.0 / p)).powf(h - 0.5) / p;
        integrate_rel(&g, lo.powf(p), 1.0, u, t)?
    } else {
        let f = |x: f64| x.powf(-2.0 * h) * (1.0 - x).powf(h - 0.5);
        integrate_rel(&f, lo, 1.0, u, t)?
    };
    Ok(u.powf(2.0 * h - 1.0) * value)
}

fn integrate_rel(f: &impl Fn(f64) -> f64, a: f64, b: f64, u: f64, t: f64) -> Result<f64> {
    if b <= a {
        return Ok(0.0);
    }
    let rough = quadrature::integrate(f, a, b, 1e-6);
    let target = (KERNEL_REL_TOL * rough.integral.abs()).max(1e-300);
    let out = quadrature::integrate(f, a, b, target);
    if !out.integral.is_finite() || out.error_estimate > (10.0 * target).max(1e-14) {
        return Err(Error::Numeric(format!(
            "kernel quadrature at (t, u) = ({t}, {u}) stalled: estimate {}, error {:e}",
            out.integral, out.error_estimate
        )));
    }
    Ok(out.integral)
}

/// Volterra kernel `K_H(t, u)`; zero outside `0 < u < t`.
pub fn kernel_k(t: f64, u: f64, hurst: HurstParam, c_h: f64) -> Result<f64> {
    if !(u > 0.0 && u < t) {
        return Ok(0.0);
    }
    let h = hurst.value();
    let first = (u / t).powf(0.5 - h) * (t - u).powf(h - 0.5);
    let second = if h == 0.5 {
        0.0
    } else {
        (0.5 - h) * u.powf(0.5 - h) * kernel_inner(t, u, h)?
    };
    Ok(c_h * (first + second))
}

/// `∫_0^{s∧t} K(t,r) K(s,r) dr` by double-exponential quadrature.
pub fn kernel_cross_integral(s: f64, t: f64, hurst: HurstParam, c_h: f64) -> Result<f64> {
    let upper = s.min(t);
    if upper <= 0.0 {
        return Ok(0.0);
    }
    let failure: Cell<Option<Error>> = Cell::new(None);
    let integrand = |r: f64| {
        let kt = kernel_k(t, r, hurst, c_h);
        let ks = kernel_k(s, r, hurst, c_h);
        match (kt, ks) {
            (Ok(a), Ok(b)) => a * b,
            (Err(e), _) | (_, Err(e)) => {
                failure.set(Some(e));
                0.0
            }
        }
    };
    let out = quadrature::integrate(integrand, 0.0, upper, 1e-9);
    if let Some(e) = failure.take() {
        return Err(e);
    }
    if !out.integral.is_finite() {
        return Err(Error::Numeric("kernel cross integral is not finite".into()));
    }
    Ok(out.integral)
}

/// Kernel constant normalised so that `∫_0^1 K(1,r)^2 dr = 1`.
pub fn calibrate_c_h(hurst: HurstParam) -> Result<f64> {
    let raw = kernel_cross_integral(1.0, 1.0, hurst, 1.0)?;
    if !(raw > 0.0) {
        return Err(Error::Numeric(format!("kernel self-integral is {raw}")));
    }
    Ok(1.0 / raw.sqrt())
}
