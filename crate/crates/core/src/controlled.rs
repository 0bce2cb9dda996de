//! Controlled paths over a piecewise-linear rough driver, the rough integral
//! as a compensated Riemann sum, and a level-2 Taylor scheme for RDEs.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::fbm::{SamplePath, TimeGrid};
use crate::increments::{holder_norm, Increment1, Increment2};
use crate::liefields::{FloatField, PolyVectorField};

/// The pair `(B¹, B²)` of a piecewise-linear path, with `B²` served from
/// prefix sums: `B²_{ab} = S_b - S_a - B¹_{0a} ⊗ B¹_{ab}` where `S_k = B²_{0 t_k}`.
#[derive(Debug, Clone)]
pub struct RoughDriver {
    path: SamplePath,
    prefix: Vec<f64>,
}

impl RoughDriver {
    pub fn new(path: SamplePath) -> Self {
        let d = path.dim();
        let n = path.len();
        let mut prefix = vec![0.0; n * d * d];
        for k in 0..n - 1 {
            let x0 = path.row(k);
            let x1 = path.row(k + 1);
            let base = path.row(0);
            for i in 0..d {
                let from0 = x0[i] - base[i];
                let di = x1[i] - x0[i];
                for j in 0..d {
                    let dj = x1[j] - x0[j];
                    prefix[(k + 1) * d * d + i * d + j] =
                        prefix[k * d * d + i * d + j] + from0 * dj + 0.5 * di * dj;
                }
            }
        }
        Self { path, prefix }
    }

    pub fn path(&self) -> &SamplePath {
        &self.path
    }

    pub fn grid(&self) -> &TimeGrid {
        self.path.grid()
    }

    pub fn dim(&self) -> usize {
        self.path.dim()
    }

    pub fn len(&self) -> usize {
        self.path.len()
    }

    pub fn is_empty(&self) -> bool {
        self.path.is_empty()
    }

    /// `B¹_{ab}` between grid indices.
    pub fn x1(&self, a: usize, b: usize) -> Vec<f64> {
        self.path.increment(a, b)
    }

    /// `B²_{ab}`, row-major: entry `i*d + j` is `∫ B¹,ⁱ_{a u} dB^j_u`.
    pub fn x2(&self, a: usize, b: usize) -> Vec<f64> {
        let d = self.dim();
        let mut out = vec![0.0; d * d];
        self.x2_into(a, b, &mut out);
        out
    }

    pub fn x2_into(&self, a: usize, b: usize, out: &mut [f64]) {
        let d = self.dim();
        let (xa, xb, x0) = (self.path.row(a), self.path.row(b), self.path.row(0));
        if b == a + 1 {
            for i in 0..d {
                for j in 0..d {
                    out[i * d + j] = 0.5 * (xb[i] - xa[i]) * (xb[j] - xa[j]);
                }
            }
            return;
        }
        let (sa, sb) = (&self.prefix[a * d * d..(a + 1) * d * d], &self.prefix[b * d * d..(b + 1) * d * d]);
        for i in 0..d {
            for j in 0..d {
                out[i * d + j] = sb[i * d + j] - sa[i * d + j] - (xa[i] - x0[i]) * (xb[j] - xa[j]);
            }
        }
    }
}

/// A path `z` in `ℝ^m` with Gubinelli derivative `ζ` (an `m × d` matrix per
/// time) relative to a rough driver.
#[derive(Debug, Clone)]
pub struct ControlledPath {
    driver: Arc<RoughDriver>,
    m: usize,
    z: Vec<f64>,
    zeta: Vec<f64>,
}

impl ControlledPath {
    /// `z` holds `n*m` values, `zeta` holds `n*m*d` values with entry
    /// `(k*m + i)*d + j` the derivative of `z^i` along `B^j` at `t_k`.
    pub fn new(driver: Arc<RoughDriver>, m: usize, z: Vec<f64>, zeta: Vec<f64>) -> Result<Self> {
        let n = driver.len();
        let d = driver.dim();
        if m == 0 || z.len() != n * m || zeta.len() != n * m * d {
            return domain(format!(
                "controlled path on {n} points with m={m}, d={d} needs {} values and {} derivatives",
                n * m,
                n * m * d
            ));
        }
        if z.iter().chain(&zeta).any(|v| !v.is_finite()) {
            return Err(Error::Numeric("controlled path contains non-finite values".into()));
        }
        Ok(Self { driver, m, z, zeta })
    }

    /// The driver controlled by itself: `z = B`, `ζ = I`.
    pub fn from_driver(driver: Arc<RoughDriver>) -> Self {
        let d = driver.dim();
        let n = driver.len();
        let z = driver.path().values().to_vec();
        let mut zeta = vec![0.0; n * d * d];
        for k in 0..n {
            for i in 0..d {
                zeta[(k * d + i) * d + i] = 1.0;
            }
        }
        Self { driver, m: d, z, zeta }
    }

    /// Constant path with zero derivative.
    pub fn constant(driver: Arc<RoughDriver>, c: &[f64]) -> Self {
        let n = driver.len();
        let d = driver.dim();
        let m = c.len();
        Self {
            z: c.iter().copied().cycle().take(n * m).collect(),
            zeta: vec![0.0; n * m * d],
            m,
            driver,
        }
    }

    pub fn driver(&self) -> &Arc<RoughDriver> {
        &self.driver
    }

    pub fn grid(&self) -> &TimeGrid {
        self.driver.grid()
    }

    pub fn dim(&self) -> usize {
        self.m
    }

    pub fn len(&self) -> usize {
        self.driver.len()
    }

    pub fn is_empty(&self) -> bool {
        self.driver.is_empty()
    }

    pub fn value(&self, k: usize) -> &[f64] {
        &self.z[k * self.m..(k + 1) * self.m]
    }

    /// `ζ_{t_k}` as a row-major `m × d` block.
    pub fn zeta(&self, k: usize) -> &[f64] {
        let w = self.m * self.driver.dim();
        &self.zeta[k * w..(k + 1) * w]
    }

    pub fn values(&self) -> &[f64] {
        &self.z
    }

    /// `r_{st} = δz_{st} - ζ_s B¹_{st}`.
    pub fn remainder(&self, s: usize, t: usize) -> Vec<f64> {
        let d = self.driver.dim();
        let x = self.driver.x1(s, t);
        let (zs, zt, zeta) = (self.value(s), self.value(t), self.zeta(s));
        (0..self.m)
            .map(|i| zt[i] - zs[i] - (0..d).map(|j| zeta[i * d + j] * x[j]).sum::<f64>())
            .collect()
    }

    pub fn remainder_increment(&self) -> Result<Increment2> {
        Increment2::from_fn(self.grid().clone(), self.m, |s, t| self.remainder(s, t))
    }

    pub fn as_sample_path(&self) -> Result<SamplePath> {
        SamplePath::trajectory(self.grid().clone(), self.m, self.z.clone())
    }

    /// Component `j` of the derivative, `ζ^{·j}`, as a path in `ℝ^m`.
    pub fn zeta_column(&self, j: usize) -> Result<Increment1> {
        let d = self.driver.dim();
        let values = (0..self.len())
            .flat_map(|k| (0..self.m).map(move |i| (k, i)))
            .map(|(k, i)| self.zeta(k)[i * d + j])
            .collect();
        Increment1::new(self.grid().clone(), self.m, values)
    }
}

/// Value of a rough integral over `[s, t]` together with the running
/// integral `u ↦ ∫_s^u`, itself controlled with derivative `z`.
#[derive(Debug, Clone)]
pub struct RoughIntegral {
    pub value: Vec<f64>,
    pub as_controlled: ControlledPath,
    /// `|S_{2^r} - S_1|` for the compensated sums on coarsened partitions of
    /// `[s, t]` with stride `2^r`, `r = 1, 2, …`.
    pub refinement: Vec<f64>,
}

fn check_interval(z: &ControlledPath, s: usize, t: usize) -> Result<()> {
    if !(s < t && t < z.len()) {
        return domain(format!("rough integral needs grid indices s < t < {}, got ({s}, {t})", z.len()));
    }
    Ok(())
}

/// Compensated increment of the outer integral over `[a, b]`:
/// entry `i*d + j` is `z^i B¹,ʲ + Σ_l ζ^{il} B^{2,lj}`.
fn outer_increment(z: &ControlledPath, a: usize, b: usize, x2: &mut [f64], out: &mut [f64]) {
    let d = z.driver.dim();
    let x1 = z.driver.x1(a, b);
    z.driver.x2_into(a, b, x2);
    let (za, zeta) = (z.value(a), z.zeta(a));
    for i in 0..z.m {
        for j in 0..d {
            let mut v = za[i] * x1[j];
            for l in 0..d {
                v += zeta[i * d + l] * x2[l * d + j];
            }
            out[i * d + j] = v;
        }
    }
}

/// Contracted form: for `z` in `ℝ^{q·d}` read as a `q × d` matrix, entry `r`
/// is `Σ_j z^{rj} B¹,ʲ + Σ_{j,l} ζ^{(rj),l} B^{2,lj}`.
fn contract_increment(z: &ControlledPath, a: usize, b: usize, x2: &mut [f64], out: &mut [f64]) {
    let d = z.driver.dim();
    let q = z.m / d;
    let x1 = z.driver.x1(a, b);
    z.driver.x2_into(a, b, x2);
    let (za, zeta) = (z.value(a), z.zeta(a));
    for r in 0..q {
        let mut v = 0.0;
        for j in 0..d {
            let row = r * d + j;
            v += za[row] * x1[j];
            for l in 0..d {
                v += zeta[row * d + l] * x2[l * d + j];
            }
        }
        out[r] = v;
    }
}

type StepFn = fn(&ControlledPath, usize, usize, &mut [f64], &mut [f64]);

fn compensated(z: &ControlledPath, s: usize, t: usize, stride: usize, width: usize, step: StepFn) -> Vec<f64> {
    let d = z.driver.dim();
    let mut x2 = vec![0.0; d * d];
    let mut buf = vec![0.0; width];
    let mut acc = vec![0.0; width];
    let mut a = s;
    while a < t {
        let b = (a + stride).min(t);
        step(z, a, b, &mut x2, &mut buf);
        acc.iter_mut().zip(&buf).for_each(|(x, y)| *x += y);
        a = b;
    }
    acc
}

fn integrate(z: &ControlledPath, s: usize, t: usize, width: usize, step: StepFn) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    check_interval(z, s, t)?;
    let n = z.len();
    let d = z.driver.dim();
    let mut x2 = vec![0.0; d * d];
    let mut buf = vec![0.0; width];
    // Running integral from t_0, re-anchored at s afterwards.
    let mut run = vec![0.0; n * width];
    for k in 0..n - 1 {
        step(z, k, k + 1, &mut x2, &mut buf);
        for c in 0..width {
            run[(k + 1) * width + c] = run[k * width + c] + buf[c];
        }
    }
    let anchor: Vec<f64> = run[s * width..(s + 1) * width].to_vec();
    for k in 0..n {
        for c in 0..width {
            run[k * width + c] -= anchor[c];
        }
    }
    let value = compensated(z, s, t, 1, width, step);
    if value.iter().any(|v| !v.is_finite()) {
        return Err(Error::Convergence("rough integral produced a non-finite value".into()));
    }
    let mut refinement = Vec::new();
    let mut stride = 2;
    while stride <= t - s {
        let coarse = compensated(z, s, t, stride, width, step);
        refinement.push(coarse.iter().zip(&value).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max));
        stride *= 2;
    }
    Ok((value, run, refinement))
}

/// `∫_s^t z ⊗ dB` for a controlled `z` in `ℝ^m`: an `m × d` matrix, row-major.
///
/// The value is the compensated sum `Σ z_u B¹_{uu'} + ζ_u B²_{uu'}` over the
/// finest grid partition of `[s, t]`.
pub fn rough_integral(z: &ControlledPath, s: usize, t: usize) -> Result<RoughIntegral> {
    let d = z.driver.dim();
    let m = z.m;
    let width = m * d;
    let (value, run, refinement) = integrate(z, s, t, width, outer_increment)?;
    // The running integral of component (i, j) moves along B^k with weight z^i δ_{jk}.
    let n = z.len();
    let mut zeta = vec![0.0; n * width * d];
    for k in 0..n {
        let zk = z.value(k);
        for i in 0..m {
            for j in 0..d {
                zeta[(k * width + i * d + j) * d + j] = zk[i];
            }
        }
    }
    let as_controlled = ControlledPath::new(z.driver.clone(), width, run, zeta)?;
    Ok(RoughIntegral {
        value,
        as_controlled,
        refinement,
    })
}

/// `Σ_j ∫_s^t z^{·j} dB^j` for `z` in `ℝ^{q·d}` read as a `q × d` matrix
/// (row-major); the result lies in `ℝ^q`. With `q = 1` this is the pairing
/// `Σ_j ∫ z^j dB^j`.
pub fn rough_integral_contract(z: &ControlledPath, s: usize, t: usize) -> Result<RoughIntegral> {
    let d = z.driver.dim();
    if !z.m.is_multiple_of(d) {
        return domain(format!("integrand dimension {} is not a multiple of d = {d}", z.m));
    }
    let q = z.m / d;
    let (value, run, refinement) = integrate(z, s, t, q, contract_increment)?;
    let n = z.len();
    // Derivative of the running integral along B^k is z^{·k}.
    let zeta: Vec<f64> = (0..n).flat_map(|k| z.value(k).to_vec()).collect();
    let as_controlled = ControlledPath::new(z.driver.clone(), q, run, zeta)?;
    Ok(RoughIntegral {
        value,
        as_controlled,
        refinement,
    })
}

fn check_fields(fields: &[PolyVectorField], m: usize, d: usize) -> Result<()> {
    if fields.len() != d {
        return domain(format!("{} vector fields for a {d}-dimensional driver", fields.len()));
    }
    if let Some(f) = fields.iter().find(|f| f.dim() != m) {
        return domain(format!("vector field lives in ℝ^{}, initial condition in ℝ^{m}", f.dim()));
    }
    Ok(())
}

/// Stride between `grid` points measured in driver grid steps.
pub(crate) fn grid_stride(driver: &TimeGrid, grid: &TimeGrid) -> Result<usize> {
    let (nd, ng) = (driver.len() - 1, grid.len() - 1);
    if ng == 0 || nd % ng != 0 || (driver.horizon() - grid.horizon()).abs() > 1e-12 * driver.horizon() {
        return domain(format!(
            "solver grid ({} points on [0,{}]) is not a coarsening of the driver grid ({} points on [0,{}])",
            grid.len(),
            grid.horizon(),
            driver.len(),
            driver.horizon()
        ));
    }
    Ok(nd / ng)
}

/// Solution of `dy = Σ V_i(y) dB^i`, `y_0 = a`, on `grid` (a coarsening of the
/// driver grid) by the step
/// `y ← y + Σ V_i(y) B¹,ⁱ + Σ (∇V_j·V_i)(y) B^{2,ij}`.
///
/// The returned controlled path, with `ζ = [V_1(y) … V_d(y)]`, always lives
/// on the driver grid; when `grid` is coarser a second solve on the driver
/// grid provides it.
pub fn rde_solve(
    fields: &[PolyVectorField],
    a: &[f64],
    driver: &Arc<RoughDriver>,
    grid: &TimeGrid,
) -> Result<(SamplePath, ControlledPath)> {
    let m = a.len();
    let d = driver.dim();
    check_fields(fields, m, d)?;
    let compiled: Vec<FloatField> = fields.iter().map(PolyVectorField::compile).collect();
    let stride = grid_stride(driver.grid(), grid)?;
    let coarse = solve_strided(&compiled, a, driver, stride)?;
    let fine = if stride == 1 {
        coarse.clone()
    } else {
        solve_strided(&compiled, a, driver, 1)?
    };
    let n = driver.len();
    let mut zeta = vec![0.0; n * m * d];
    let mut v = vec![0.0; m];
    for k in 0..n {
        let y = &fine[k * m..(k + 1) * m];
        for (j, f) in compiled.iter().enumerate() {
            f.eval_into(y, &mut v);
            for i in 0..m {
                zeta[(k * m + i) * d + j] = v[i];
            }
        }
    }
    let controlled = ControlledPath::new(driver.clone(), m, fine, zeta)?;
    let path = SamplePath::trajectory(grid.clone(), m, coarse)?;
    Ok((path, controlled))
}

fn solve_strided(fields: &[FloatField], a: &[f64], driver: &RoughDriver, stride: usize) -> Result<Vec<f64>> {
    let m = a.len();
    let d = driver.dim();
    let steps = (driver.len() - 1) / stride;
    let mut out = Vec::with_capacity((steps + 1) * m);
    out.extend_from_slice(a);
    let mut y = a.to_vec();
    let mut vals = vec![0.0; d * m];
    let mut jacs = vec![0.0; d * m * m];
    let mut x2 = vec![0.0; d * d];
    for k in 0..steps {
        let (p, q) = (k * stride, (k + 1) * stride);
        let x1 = driver.x1(p, q);
        driver.x2_into(p, q, &mut x2);
        for (j, f) in fields.iter().enumerate() {
            f.eval_into(&y, &mut vals[j * m..(j + 1) * m]);
            f.jacobian_into(&y, &mut jacs[j * m * m..(j + 1) * m * m]);
        }
        let mut next = y.clone();
        for i in 0..d {
            let vi = &vals[i * m..(i + 1) * m];
            for r in 0..m {
                next[r] += vi[r] * x1[i];
            }
            for j in 0..d {
                let w = x2[i * d + j];
                if w == 0.0 {
                    continue;
                }
                let jac = &jacs[j * m * m..(j + 1) * m * m];
                for r in 0..m {
                    let dv: f64 = (0..m).map(|l| jac[r * m + l] * vi[l]).sum();
                    next[r] += dv * w;
                }
            }
        }
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::BlowUp {
                time: driver.grid().time(q),
            });
        }
        y = next;
        out.extend_from_slice(&y);
    }
    Ok(out)
}

/// Discrete controlled semi-norm and its three parts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControlledNorm {
    pub kappa: f64,
    pub value: f64,
    pub path_holder: f64,
    pub derivative: f64,
    pub remainder: f64,
}

/// `N[z; C₁^κ] + Σ_j N[ζ^j; C₁^{κ,0}] + N[r; C₂^{2κ}]` on grid pairs, with
/// `N[·; C₁^{κ,0}]` the Hölder norm plus the sup norm.
pub fn controlled_norm(z: &ControlledPath, kappa: f64) -> Result<ControlledNorm> {
    if !(kappa > 0.0 && kappa < 1.0) {
        return domain(format!("controlled norm needs 0 < kappa < 1, got {kappa}"));
    }
    let path = Increment1::new(z.grid().clone(), z.m, z.z.clone())?;
    let path_holder = path.holder(kappa)?;
    let mut derivative = 0.0;
    for j in 0..z.driver.dim() {
        derivative += z.zeta_column(j)?.holder_sup(kappa)?;
    }
    let remainder = holder_norm(&z.remainder_increment()?, 2.0 * kappa)?;
    Ok(ControlledNorm {
        kappa,
        value: path_holder + derivative + remainder,
        path_holder,
        derivative,
        remainder,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fbm::{sample_fbm, HurstParam};
    use crate::signature::path_signature_idx;

    fn fbm_driver(d: usize, n: usize, seed: u64) -> Arc<RoughDriver> {
        let p = sample_fbm(HurstParam::new(0.4).unwrap(), &TimeGrid::new(1.0, n).unwrap(), d, 1, seed)
            .unwrap()
            .remove(0);
        Arc::new(RoughDriver::new(p))
    }

    #[test]
    fn prefix_level2_matches_signature() {
        let drv = fbm_driver(3, 65, 4);
        for (a, b) in [(0, 64), (3, 17), (10, 11), (20, 50)] {
            let sig = path_signature_idx(drv.path(), a, b, 2).unwrap();
            let x2 = drv.x2(a, b);
            for (u, v) in x2.iter().zip(sig.level_values(2)) {
                assert!((u - v).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn constant_integrand() {
        let drv = fbm_driver(2, 33, 1);
        let z = ControlledPath::constant(drv.clone(), &[2.0, -1.0]);
        let r = rough_integral(&z, 4, 30).unwrap();
        let x = drv.x1(4, 30);
        let want = [2.0 * x[0], 2.0 * x[1], -x[0], -x[1]];
        for (a, b) in r.value.iter().zip(want) {
            assert!((a - b).abs() < 1e-14);
        }
        let c = rough_integral_contract(&z, 4, 30).unwrap();
        assert!((c.value[0] - (2.0 * x[0] - x[1])).abs() < 1e-14);
    }

    #[test]
    fn self_integral_shuffle() {
        // ∫ B ⊗ dB from s equals B_s ⊗ B¹_{st} + B²_{st}; its symmetric part
        // relative to B_s is ½ B¹ ⊗ B¹.
        let drv = fbm_driver(2, 65, 7);
        let z = ControlledPath::from_driver(drv.clone());
        let (s, t) = (8, 60);
        let r = rough_integral(&z, s, t).unwrap();
        let (bs, x1, x2) = (drv.path().row(s).to_vec(), drv.x1(s, t), drv.x2(s, t));
        for i in 0..2 {
            for j in 0..2 {
                let area = r.value[i * 2 + j] - bs[i] * x1[j];
                assert!((area - x2[i * 2 + j]).abs() < 1e-12);
            }
        }
        for i in 0..2 {
            for j in 0..2 {
                let a = r.value[i * 2 + j] - bs[i] * x1[j];
                let b = r.value[j * 2 + i] - bs[j] * x1[i];
                assert!((a + b - x1[i] * x1[j]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn smooth_driver_gives_riemann_stieltjes() {
        // B_t = (sin t), z = cos(B), ζ = -sin(B): ∫_0^1 cos(sin u) cos u du = sin(sin 1).
        let n = 4097;
        let grid = TimeGrid::new(1.0, n).unwrap();
        let p = SamplePath::from_fn(grid, 1, |t| vec![t.sin()]).unwrap();
        let drv = Arc::new(RoughDriver::new(p));
        let z: Vec<f64> = (0..n).map(|k| drv.path().value(k, 0).cos()).collect();
        let zeta: Vec<f64> = (0..n).map(|k| -drv.path().value(k, 0).sin()).collect();
        let cp = ControlledPath::new(drv, 1, z, zeta).unwrap();
        let r = rough_integral(&cp, 0, n - 1).unwrap();
        assert!((r.value[0] - 1f64.sin().sin()).abs() < 1e-8, "{}", r.value[0]);
    }

    #[test]
    fn additivity() {
        let drv = fbm_driver(2, 129, 3);
        let z = ControlledPath::from_driver(drv);
        let a = rough_integral(&z, 0, 40).unwrap().value;
        let b = rough_integral(&z, 40, 128).unwrap().value;
        let c = rough_integral(&z, 0, 128).unwrap().value;
        for k in 0..4 {
            assert!((a[k] + b[k] - c[k]).abs() < 1e-10);
        }
    }

    #[test]
    fn integral_is_controlled_by_integrand() {
        let drv = fbm_driver(2, 257, 9);
        let z = ControlledPath::from_driver(drv);
        let r = rough_integral(&z, 0, 256).unwrap();
        // Remainder of the running integral is second order: B² plus ζB² terms.
        let rem = r.as_controlled.remainder(100, 101);
        let first = r.as_controlled.value(101)[1] - r.as_controlled.value(100)[1];
        assert!(rem.iter().all(|v| v.abs() <= first.abs() + 1e-2));
        assert!(r.refinement.len() == 8);
    }

    #[test]
    fn rde_linear_scalar_exponential() {
        let n = 1025;
        let drv = fbm_driver(1, n, 5);
        let v = vec![PolyVectorField::parse(&["x1"]).unwrap()];
        let (y, ctrl) = rde_solve(&v, &[1.5], &drv, drv.grid()).unwrap();
        let want = 1.5 * drv.path().value(n - 1, 0).exp();
        let got = y.value(n - 1, 0);
        assert!((got - want).abs() / want < 1e-3, "{got} vs {want}");
        assert_eq!(ctrl.zeta(n - 1)[0], got);
        // Coarser grid: still close, and the error shrinks under refinement.
        let coarse = drv.grid().coarsen(8).unwrap();
        let (yc, _) = rde_solve(&v, &[1.5], &drv, &coarse).unwrap();
        let ec = (yc.value(coarse.len() - 1, 0) - want).abs();
        assert!((got - want).abs() < ec);
    }

    #[test]
    fn rde_zero_fields_stay_put() {
        let drv = fbm_driver(2, 65, 2);
        let zero = vec![PolyVectorField::zero(3), PolyVectorField::zero(3)];
        let (y, _) = rde_solve(&zero, &[1.0, 2.0, 3.0], &drv, drv.grid()).unwrap();
        assert_eq!(y.row(64), &[1.0, 2.0, 3.0]);
    }

    #[test]
    fn rde_blow_up_is_reported() {
        let grid = TimeGrid::new(1.0, 65).unwrap();
        let p = SamplePath::from_fn(grid, 1, |t| vec![1e3 * t]).unwrap();
        let drv = Arc::new(RoughDriver::new(p));
        let v = vec![PolyVectorField::parse(&["x1^3"]).unwrap()];
        assert!(matches!(rde_solve(&v, &[1.0], &drv, drv.grid()), Err(Error::BlowUp { .. })));
    }

    #[test]
    fn controlled_norm_examples() {
        let drv = fbm_driver(2, 65, 11);
        let c = ControlledPath::constant(drv.clone(), &[1.0, 2.0]);
        assert_eq!(controlled_norm(&c, 0.35).unwrap().value, 0.0);
        // ζ = 0, z = B: remainder is B itself.
        let z = drv.path().values().to_vec();
        let zero = ControlledPath::new(drv.clone(), 2, z, vec![0.0; 65 * 4]).unwrap();
        let nrm = controlled_norm(&zero, 0.35).unwrap();
        let bnorm = Increment1::new(drv.grid().clone(), 2, drv.path().values().to_vec())
            .unwrap()
            .holder(0.7)
            .unwrap();
        assert!((nrm.remainder - bnorm).abs() < 1e-12);
        let own = controlled_norm(&ControlledPath::from_driver(drv), 0.35).unwrap();
        assert!(own.value.is_finite() && own.remainder >= 0.0);
    }
}
