//! k-increments on a uniform grid, the `δ` operator, Hölder norms and the
//! sewing map `Λ`.
//!
//! Norms are suprema over grid pairs (or triples), so they never exceed the
//! continuum norms of the underlying functions.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::fbm::TimeGrid;

/// Vector-valued function of one grid time.
#[derive(Debug, Clone, PartialEq)]
pub struct Increment1 {
    grid: TimeGrid,
    dim: usize,
    values: Vec<f64>,
}

impl Increment1 {
    pub fn new(grid: TimeGrid, dim: usize, values: Vec<f64>) -> Result<Self> {
        if dim == 0 || values.len() != grid.len() * dim {
            return domain(format!(
                "Increment1 needs {} values of dimension {dim}, got {}",
                grid.len(),
                values.len()
            ));
        }
        Ok(Self { grid, dim, values })
    }

    pub fn from_fn(grid: TimeGrid, dim: usize, f: impl Fn(f64) -> Vec<f64>) -> Result<Self> {
        let values: Vec<f64> = grid.times().iter().flat_map(|&t| f(t)).collect();
        Self::new(grid, dim, values)
    }

    pub fn scalar(grid: TimeGrid, values: Vec<f64>) -> Result<Self> {
        Self::new(grid, 1, values)
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn at(&self, i: usize) -> &[f64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    /// Hölder semi-norm of `δb`.
    pub fn holder(&self, mu: f64) -> Result<f64> {
        holder_norm(&delta1(self), mu)
    }

    pub fn sup_norm(&self) -> f64 {
        (0..self.grid.len())
            .map(|i| euclid(self.at(i)))
            .fold(0.0, f64::max)
    }

    /// `‖b‖_{μ,∞} = ‖δb‖_μ + ‖b‖_∞`.
    pub fn holder_sup(&self, mu: f64) -> Result<f64> {
        Ok(self.holder(mu)? + self.sup_norm())
    }

    /// Trapezoidal `L¹` norm of `|b|`.
    pub fn l1_norm(&self) -> f64 {
        let h = self.grid.mesh();
        let n = self.grid.len();
        (0..n - 1)
            .map(|i| 0.5 * h * (euclid(self.at(i)) + euclid(self.at(i + 1))))
            .sum()
    }
}

/// Vector-valued function of grid pairs `s ≤ t`, stored upper-triangular.
#[derive(Debug, Clone, PartialEq)]
pub struct Increment2 {
    grid: TimeGrid,
    dim: usize,
    values: Vec<f64>,
}

fn tri_index(n: usize, s: usize, t: usize) -> usize {
    debug_assert!(s <= t && t < n);
    s * n - s * s.saturating_sub(1) / 2 + (t - s)
}

impl Increment2 {
    pub fn zeros(grid: TimeGrid, dim: usize) -> Self {
        let n = grid.len();
        Self {
            grid,
            dim,
            values: vec![0.0; n * (n + 1) / 2 * dim],
        }
    }

    /// Fill from `f(s, t)` for all `s < t`; diagonal entries stay zero.
    pub fn from_fn(
        grid: TimeGrid,
        dim: usize,
        f: impl Fn(usize, usize) -> Vec<f64>,
    ) -> Result<Self> {
        let mut out = Self::zeros(grid, dim);
        let n = out.grid.len();
        for s in 0..n {
            for t in s + 1..n {
                let v = f(s, t);
                if v.len() != dim {
                    return domain("Increment2 closure returned the wrong dimension");
                }
                out.at_mut(s, t).copy_from_slice(&v);
            }
        }
        Ok(out)
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn at(&self, s: usize, t: usize) -> &[f64] {
        let k = tri_index(self.grid.len(), s, t) * self.dim;
        &self.values[k..k + self.dim]
    }

    pub fn at_mut(&mut self, s: usize, t: usize) -> &mut [f64] {
        let k = tri_index(self.grid.len(), s, t) * self.dim;
        &mut self.values[k..k + self.dim]
    }

    /// `a·self + b·other`.
    pub fn combine(&self, a: f64, other: &Increment2, b: f64) -> Result<Increment2> {
        if self.dim != other.dim || self.grid != other.grid {
            return domain("cannot combine increments on different grids");
        }
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(x, y)| a * x + b * y)
            .collect();
        Ok(Increment2 {
            grid: self.grid.clone(),
            dim: self.dim,
            values,
        })
    }

    pub fn max_abs_diff(&self, other: &Increment2) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

type Eval3 = dyn Fn(usize, usize, usize) -> Vec<f64> + Send + Sync;

/// Function of grid triples `s ≤ u ≤ t`, evaluated lazily.
#[derive(Clone)]
pub struct Increment3 {
    grid: TimeGrid,
    dim: usize,
    eval: Arc<Eval3>,
}

impl std::fmt::Debug for Increment3 {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Increment3")
            .field("points", &self.grid.len())
            .field("dim", &self.dim)
            .finish()
    }
}

impl Increment3 {
    pub fn from_fn(
        grid: TimeGrid,
        dim: usize,
        f: impl Fn(usize, usize, usize) -> Vec<f64> + Send + Sync + 'static,
    ) -> Self {
        Self {
            grid,
            dim,
            eval: Arc::new(f),
        }
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn at(&self, s: usize, u: usize, t: usize) -> Vec<f64> {
        if s == u || u == t {
            return vec![0.0; self.dim];
        }
        (self.eval)(s, u, t)
    }

    /// Scale by a constant.
    pub fn scaled(&self, c: f64) -> Increment3 {
        let eval = Arc::clone(&self.eval);
        Increment3::from_fn(self.grid.clone(), self.dim, move |s, u, t| {
            eval(s, u, t).into_iter().map(|v| c * v).collect()
        })
    }

    /// `a·self + b·other`.
    pub fn combine(&self, a: f64, other: &Increment3, b: f64) -> Increment3 {
        let (e1, e2) = (Arc::clone(&self.eval), Arc::clone(&other.eval));
        Increment3::from_fn(self.grid.clone(), self.dim, move |s, u, t| {
            e1(s, u, t)
                .into_iter()
                .zip(e2(s, u, t))
                .map(|(x, y)| a * x + b * y)
                .collect()
        })
    }

    /// Single-split Hölder norm `sup |h_{sut}| / (|u-s|^γ |t-u|^ρ)`.
    pub fn split_norm(&self, gamma: f64, rho: f64) -> f64 {
        let n = self.grid.len();
        let times = self.grid.times();
        let mut best: f64 = 0.0;
        for s in 0..n {
            for u in s + 1..n {
                for t in u + 1..n {
                    let v = euclid(&self.at(s, u, t));
                    let w = (times[u] - times[s]).powf(gamma) * (times[t] - times[u]).powf(rho);
                    best = best.max(v / w);
                }
            }
        }
        best
    }

    /// `N[h; C_3^μ]`, approximated by the best single split on a fixed
    /// ladder of `ρ ∈ (0, μ)`. Always an upper bound of the infimum norm.
    pub fn norm(&self, mu: f64) -> f64 {
        (1..10)
            .map(|k| {
                let rho = mu * k as f64 / 10.0;
                self.split_norm(mu - rho, rho)
            })
            .fold(f64::INFINITY, f64::min)
    }

    /// Largest `|δh|` over grid quadruples, relative to the size of `h`.
    pub fn closedness_defect(&self) -> f64 {
        let n = self.grid.len();
        let mut defect: f64 = 0.0;
        let mut scale: f64 = 0.0;
        for s in 0..n {
            for u in s + 1..n {
                for v in u + 1..n {
                    for t in v + 1..n {
                        let a = self.at(u, v, t);
                        let b = self.at(s, v, t);
                        let c = self.at(s, u, t);
                        let d = self.at(s, u, v);
                        for k in 0..self.dim {
                            let x = a[k] - b[k] + c[k] - d[k];
                            defect = defect.max(x.abs());
                            scale = scale.max(a[k].abs().max(b[k].abs()).max(c[k].abs()));
                        }
                    }
                }
            }
        }
        if scale == 0.0 {
            defect
        } else {
            defect / scale
        }
    }
}

pub(crate) fn euclid(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// `(δg)_{st} = g_t - g_s`.
pub fn delta1(g: &Increment1) -> Increment2 {
    let mut out = Increment2::zeros(g.grid.clone(), g.dim);
    let n = g.grid.len();
    for s in 0..n {
        for t in s + 1..n {
            let (a, b) = (g.at(s), g.at(t));
            for (o, (x, y)) in out.at_mut(s, t).iter_mut().zip(a.iter().zip(b)) {
                *o = y - x;
            }
        }
    }
    out
}

/// `(δh)_{sut} = h_{st} - h_{su} - h_{ut}`.
pub fn delta2(h: &Increment2) -> Increment3 {
    let h = Arc::new(h.clone());
    let grid = h.grid.clone();
    let dim = h.dim;
    Increment3::from_fn(grid, dim, move |s, u, t| {
        let (st, su, ut) = (h.at(s, t), h.at(s, u), h.at(u, t));
        (0..dim).map(|k| st[k] - su[k] - ut[k]).collect()
    })
}

/// `‖f‖_μ = sup_{s<t} |f_{st}| / |t-s|^μ` over grid pairs.
pub fn holder_norm(x: &Increment2, mu: f64) -> Result<f64> {
    if !(mu > 0.0) {
        return domain(format!("Hölder exponent must be positive, got {mu}"));
    }
    let n = x.grid.len();
    let times = x.grid.times();
    let mut best: f64 = 0.0;
    for s in 0..n {
        for t in s + 1..n {
            best = best.max(euclid(x.at(s, t)) / (times[t] - times[s]).powf(mu));
        }
    }
    Ok(best)
}

/// `sup_{s≤t} |f_{st}|`.
pub fn sup_norm(x: &Increment2) -> f64 {
    let n = x.grid.len();
    let mut best: f64 = 0.0;
    for s in 0..n {
        for t in s..n {
            best = best.max(euclid(x.at(s, t)));
        }
    }
    best
}

/// `‖f‖_{μ,∞} = ‖f‖_μ + ‖f‖_∞`.
pub fn holder_sup_norm(x: &Increment2, mu: f64) -> Result<f64> {
    Ok(holder_norm(x, mu)? + sup_norm(x))
}

/// Default number of dyadic levels used by [`sewing`].
pub const DEFAULT_SEWING_DEPTH: usize = 12;

/// Validation tolerance for `δh = 0`.
const CLOSEDNESS_TOL: f64 = 1e-10;

fn check_sewing_args(h: &Increment3, mu: f64, validate: bool) -> Result<()> {
    if !(mu > 1.0) {
        return domain(format!("sewing needs μ > 1, got {mu}"));
    }
    if validate {
        let defect = h.closedness_defect();
        if defect > CLOSEDNESS_TOL {
            return Err(Error::Validation(format!(
                "3-increment is not closed: relative |δh| = {defect:e}"
            )));
        }
    }
    Ok(())
}

/// The sewing map `Λh` on every grid pair.
///
/// `Λh_{st} = h_{smt} + Λh_{sm} + Λh_{mt}` with `m` the (floor) grid midpoint,
/// recursing `depth` dyadic levels; consecutive grid points and exhausted
/// depth contribute zero. For closed `h` this gives `δΛh = h` exactly on the
/// grid once `2^depth` covers the grid.
pub fn sewing(h: &Increment3, mu: f64, depth: usize) -> Result<Increment2> {
    sewing_impl(h, mu, depth, true)
}

/// [`sewing`] without the O(n⁴) closedness validation.
pub fn sewing_unchecked(h: &Increment3, mu: f64, depth: usize) -> Result<Increment2> {
    sewing_impl(h, mu, depth, false)
}

fn sewing_impl(h: &Increment3, mu: f64, depth: usize, validate: bool) -> Result<Increment2> {
    check_sewing_args(h, mu, validate)?;
    let n = h.grid.len();
    let dim = h.dim;
    // Intervals shorter than 2^(levels) grid steps are reached within `depth`
    // halvings; longer ones are truncated per pair by `sewing_at`.
    let mut out = Increment2::zeros(h.grid.clone(), dim);
    let full_depth = depth >= ceil_log2(n.saturating_sub(1));
    for len in 2..n {
        for s in 0..n - len {
            let t = s + len;
            if full_depth {
                let m = (s + t) / 2;
                let mid = h.at(s, m, t);
                let left = out.at(s, m).to_vec();
                let right = out.at(m, t).to_vec();
                for (k, o) in out.at_mut(s, t).iter_mut().enumerate() {
                    *o = mid[k] + left[k] + right[k];
                }
            } else {
                let v = sewing_pair(h, s, t, depth);
                out.at_mut(s, t).copy_from_slice(&v);
            }
        }
    }
    Ok(out)
}

fn ceil_log2(x: usize) -> usize {
    let mut k = 0;
    while (1usize << k) < x {
        k += 1;
    }
    k
}

fn sewing_pair(h: &Increment3, s: usize, t: usize, depth: usize) -> Vec<f64> {
    if depth == 0 || t - s < 2 {
        return vec![0.0; h.dim];
    }
    let m = (s + t) / 2;
    let mut v = h.at(s, m, t);
    for (a, b) in v.iter_mut().zip(sewing_pair(h, s, m, depth - 1)) {
        *a += b;
    }
    for (a, b) in v.iter_mut().zip(sewing_pair(h, m, t, depth - 1)) {
        *a += b;
    }
    v
}

/// `Λh_{st}` for a single pair of grid indices.
pub fn sewing_at(h: &Increment3, mu: f64, s: usize, t: usize, depth: usize) -> Result<Vec<f64>> {
    check_sewing_args(h, mu, false)?;
    if s > t || t >= h.grid.len() {
        return domain(format!("invalid grid pair ({s}, {t})"));
    }
    Ok(sewing_pair(h, s, t, depth))
}

/// `(id - Λδ)g` on the pair `(s, t)`: the compensated Riemann sum of the
/// 2-increment `g` over `2^depth` dyadic pieces of `[s, t]`.
pub fn integrate_increment(g: &Increment2, mu: f64, s: usize, t: usize, depth: usize) -> Result<Vec<f64>> {
    let dg = delta2(g);
    let lam = sewing_at(&dg, mu, s, t, depth)?;
    Ok(g.at(s, t).iter().zip(lam).map(|(a, b)| a - b).collect())
}

/// Constant of the sewing bound, `1/(2^μ - 2)`.
pub fn sewing_constant(mu: f64) -> f64 {
    1.0 / (2f64.powf(mu) - 2.0)
}

/// Largest deviation from the product rule for `g ∈ C₂`, `h ∈ C₁` under
/// `(gh)_{st} = g_{st} h_t`, `(δg h)_{sut} = δg_{sut} h_t` and
/// `(g δh)_{sut} = g_{su} δh_{ut}`. With these conventions
/// `δ(gh) = δg h + g δh` holds exactly. Components are multiplied entrywise
/// when both sides have the same dimension, and `h` broadcasts when it is
/// scalar.
pub fn product_rule_defect(g: &Increment2, h: &Increment1) -> Result<f64> {
    product_rule_defect_signed(g, h, 1.0)
}

/// Same as [`product_rule_defect`] with `δ(gh) - (δg h + sign·g δh)`.
pub fn product_rule_defect_signed(g: &Increment2, h: &Increment1, sign: f64) -> Result<f64> {
    if g.grid != h.grid {
        return domain("product rule operands live on different grids");
    }
    let dim = g.dim;
    if h.dim != dim && h.dim != 1 {
        return domain(format!(
            "incompatible dimensions {} and {} in product rule",
            g.dim, h.dim
        ));
    }
    let hv = |i: usize, k: usize| if h.dim == 1 { h.at(i)[0] } else { h.at(i)[k] };
    let n = g.grid.len();
    let mut worst: f64 = 0.0;
    for s in 0..n {
        for u in s..n {
            for t in u..n {
                for k in 0..dim {
                    let gst = g.at(s, t)[k];
                    let gsu = g.at(s, u)[k];
                    let gut = g.at(u, t)[k];
                    let lhs = gst * hv(t, k) - gsu * hv(u, k) - gut * hv(t, k);
                    let dg = gst - gsu - gut;
                    let rhs = dg * hv(t, k) + sign * gsu * (hv(t, k) - hv(u, k));
                    worst = worst.max((lhs - rhs).abs());
                }
            }
        }
    }
    Ok(worst)
}

/// Closed 3-increment `h_{sut} = (f_s - f_u)(φ_t - φ_u)`, which is `δa` for
/// `a_{st} = f_s (φ_t - φ_s)`. Both inputs must be scalar on the same grid.
pub fn product_element(f: &Increment1, phi: &Increment1) -> Result<Increment3> {
    if f.dim() != 1 || phi.dim() != 1 || f.grid() != phi.grid() {
        return domain("product element needs two scalar 1-increments on one grid");
    }
    let (fv, pv) = (f.values.clone(), phi.values.clone());
    Ok(Increment3::from_fn(f.grid().clone(), 1, move |s, u, t| {
        vec![(fv[s] - fv[u]) * (pv[t] - pv[u])]
    }))
}

/// Measured sewing bound for one closed element.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SewingCheck {
    pub mu: f64,
    /// `N[h; C_3^μ]`.
    pub norm_h: f64,
    /// `‖Λh‖_μ`.
    pub norm_lambda: f64,
    /// `‖Λh‖_μ / N[h]`.
    pub ratio: f64,
    /// `1/(2^μ - 2)`.
    pub bound: f64,
    /// `max |δΛh - h|`.
    pub inverse_defect: f64,
}

pub fn sewing_check(h: &Increment3, mu: f64) -> Result<SewingCheck> {
    let lam = sewing(h, mu, DEFAULT_SEWING_DEPTH)?;
    let norm_h = h.norm(mu);
    let norm_lambda = holder_norm(&lam, mu)?;
    let back = delta2(&lam);
    let n = h.grid().len();
    let mut inverse_defect: f64 = 0.0;
    for s in 0..n {
        for u in s..n {
            for t in u..n {
                let (a, b) = (back.at(s, u, t), h.at(s, u, t));
                for k in 0..h.dim() {
                    inverse_defect = inverse_defect.max((a[k] - b[k]).abs());
                }
            }
        }
    }
    Ok(SewingCheck {
        mu,
        norm_h,
        norm_lambda,
        ratio: if norm_h > 0.0 { norm_lambda / norm_h } else { 0.0 },
        bound: sewing_constant(mu),
        inverse_defect,
    })
}
