//! Jacobian flow of the solution map and its inverse, Malliavin derivatives
//! `D_u y_t`, and the bracket processes `Z^U_t = <J_{0,t}^{-1} U(y_t), η>`.
//!
//! Everything goes through the Strichartz representation: `y_t` is the
//! time-one flow of `Z_t`, and derivatives of `y_t` solve the linearised
//! flow equations in the auxiliary time `s ∈ [0, 1]`.

use std::sync::Arc;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::controlled::{rough_integral_contract, ControlledPath, RoughDriver};
use crate::error::{domain, Error, Result};
use crate::fbm::{SamplePath, TimeGrid};
use crate::liefields::{bracket, constant_brackets, FloatField, PolyVectorField};
use crate::signature::{path_signature_idx, segment_signature, IteratedIntegrals, Word};
use crate::strichartz::StrichartzSystem;

/// Fixed-step RK4 for `x' = f(x)` on `[0, 1]`; `time` in errors is `s`.
fn rk4(x: &mut [f64], steps: usize, f: impl Fn(&[f64], &mut [f64])) -> Result<()> {
    if steps == 0 {
        return domain("flow integration needs at least one step");
    }
    let n = x.len();
    let h = 1.0 / steps as f64;
    let (mut k1, mut k2, mut k3, mut k4, mut tmp) =
        (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    for step in 0..steps {
        f(x, &mut k1);
        for i in 0..n {
            tmp[i] = x[i] + 0.5 * h * k1[i];
        }
        f(&tmp, &mut k2);
        for i in 0..n {
            tmp[i] = x[i] + 0.5 * h * k2[i];
        }
        f(&tmp, &mut k3);
        for i in 0..n {
            tmp[i] = x[i] + h * k3[i];
        }
        f(&tmp, &mut k4);
        for i in 0..n {
            x[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::BlowUp {
                time: (step + 1) as f64 * h,
            });
        }
    }
    Ok(())
}

/// Endpoint, Jacobian and inverse Jacobian of the time-one flow of `z`.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowJacobian {
    pub y: Vec<f64>,
    pub j: DMatrix<f64>,
    pub j_inv: DMatrix<f64>,
}

/// Integrate `φ' = Z(φ)`, `J̃' = ∇Z(φ) J̃`, `J̄' = -J̄ ∇Z(φ)` from `(a, I, I)`.
pub fn flow_with_jacobian(z: &FloatField, a: &[f64], steps: usize) -> Result<FlowJacobian> {
    let m = z.dim();
    if a.len() != m {
        return domain(format!("initial point has dimension {}, field lives in {m}", a.len()));
    }
    let mm = m * m;
    let mut state = vec![0.0; m + 2 * mm];
    state[..m].copy_from_slice(a);
    for i in 0..m {
        state[m + i * m + i] = 1.0;
        state[m + mm + i * m + i] = 1.0;
    }
    if !z.is_zero() {
        let grad = std::cell::RefCell::new(vec![0.0; mm]);
        rk4(&mut state, steps, |x, out| {
            let mut g = grad.borrow_mut();
            z.eval_into(&x[..m], &mut out[..m]);
            z.jacobian_into(&x[..m], &mut g);
            let (jt, jb) = (&x[m..m + mm], &x[m + mm..]);
            for r in 0..m {
                for c in 0..m {
                    let mut fwd = 0.0;
                    let mut inv = 0.0;
                    for l in 0..m {
                        fwd += g[r * m + l] * jt[l * m + c];
                        inv += jb[r * m + l] * g[l * m + c];
                    }
                    out[m + r * m + c] = fwd;
                    out[m + mm + r * m + c] = -inv;
                }
            }
        })?;
    }
    Ok(FlowJacobian {
        y: state[..m].to_vec(),
        j: DMatrix::from_row_slice(m, m, &state[m..m + mm]),
        j_inv: DMatrix::from_row_slice(m, m, &state[m + mm..]),
    })
}

/// `(J_{0,t}, J_{0,t}^{-1})` from the flow of `Z_t` started at `a`.
pub fn jacobian_flow_strichartz(
    sys: &StrichartzSystem,
    p: &SamplePath,
    a: &[f64],
    t: f64,
    steps: usize,
) -> Result<FlowJacobian> {
    let k = p.grid().index_of(t)?;
    jacobian_between(sys, p, a, 0, k, steps)
}

/// Flow Jacobian over grid indices `[s, t]`, started from `a` at `t_s`.
pub fn jacobian_between(
    sys: &StrichartzSystem,
    p: &SamplePath,
    a: &[f64],
    s: usize,
    t: usize,
    steps: usize,
) -> Result<FlowJacobian> {
    if s == t {
        let m = sys.dim();
        return Ok(FlowJacobian {
            y: a.to_vec(),
            j: DMatrix::identity(m, m),
            j_inv: DMatrix::identity(m, m),
        });
    }
    let sig = path_signature_idx(p, s, t, sys.order() - 1)?;
    flow_with_jacobian(&sys.build_z(&sig)?.z, a, steps)
}

/// `y`, `J_{0,t}` and `J_{0,t}^{-1}` at every grid time.
#[derive(Debug, Clone)]
pub struct JacobianPath {
    pub y: SamplePath,
    pub j: Vec<DMatrix<f64>>,
    pub j_inv: Vec<DMatrix<f64>>,
}

impl JacobianPath {
    pub fn times(&self) -> &[f64] {
        self.y.grid().times()
    }

    /// `max_t ‖J_{0,t} J_{0,t}^{-1} - I‖_max`.
    pub fn inverse_defect(&self) -> f64 {
        self.j
            .iter()
            .zip(&self.j_inv)
            .map(|(a, b)| {
                let m = a.nrows();
                (a * b - DMatrix::<f64>::identity(m, m)).amax()
            })
            .fold(0.0, f64::max)
    }
}

/// Compose per-segment flows along the grid: `y_{k+1} = exp(Z_{k,k+1})(y_k)`,
/// `J_{0,k+1} = J_{k,k+1} J_{0,k}`.
pub fn jacobian_path(sys: &StrichartzSystem, p: &SamplePath, a: &[f64], steps: usize) -> Result<JacobianPath> {
    let m = sys.dim();
    if a.len() != m {
        return domain(format!("initial point has dimension {}, fields live in {m}", a.len()));
    }
    let n = p.len();
    let level = sys.order() - 1;
    let mut ys = Vec::with_capacity(n * m);
    let mut js = Vec::with_capacity(n);
    let mut jis = Vec::with_capacity(n);
    ys.extend_from_slice(a);
    js.push(DMatrix::identity(m, m));
    jis.push(DMatrix::identity(m, m));
    let mut y = a.to_vec();
    for k in 0..n - 1 {
        let sig = segment_signature(&p.increment(k, k + 1), level)?;
        let f = flow_with_jacobian(&sys.build_z(&sig)?.z, &y, steps).map_err(|e| match e {
            Error::BlowUp { .. } => Error::BlowUp { time: p.grid().time(k + 1) },
            other => other,
        })?;
        y = f.y;
        ys.extend_from_slice(&y);
        js.push(&f.j * &js[k]);
        jis.push(&jis[k] * &f.j_inv);
    }
    Ok(JacobianPath {
        y: SamplePath::trajectory(p.grid().clone(), m, ys)?,
        j: js,
        j_inv: jis,
    })
}

/// `D_u y_t` for every grid time `u`, at fixed `t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MalliavinSlice {
    pub t: f64,
    pub u: Vec<f64>,
    pub m: usize,
    pub d: usize,
    /// Row-major `m × d` blocks; column `j` is the derivative along `B^j`.
    pub values: Vec<Vec<f64>>,
}

impl MalliavinSlice {
    pub fn at(&self, k: usize) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.m, self.d, &self.values[k])
    }

    pub fn max_abs_diff(&self, other: &MalliavinSlice) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .flat_map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y).abs()))
            .fold(0.0, f64::max)
    }

    /// CSV with header `u,D_11,D_12,…` (row-major entries).
    pub fn to_csv(&self) -> String {
        let mut out = String::from("u");
        for i in 1..=self.m {
            for j in 1..=self.d {
                out.push_str(&format!(",D_{i}_{j}"));
            }
        }
        out.push('\n');
        for (u, row) in self.u.iter().zip(&self.values) {
            out.push_str(&crate::fbm::fmt_f64(*u));
            for v in row {
                out.push(',');
                out.push_str(&crate::fbm::fmt_f64(*v));
            }
            out.push('\n');
        }
        out
    }
}

fn sig_value(sig: &IteratedIntegrals, letters: &[usize]) -> f64 {
    if letters.is_empty() {
        1.0
    } else {
        sig.get(&Word::new(letters.to_vec()))
    }
}

/// `D^j_u B^w_{0t} = Σ_{l : w_l = j} B^{w_1…w_{l-1}}_{0u} B^{w_{l+1}…w_k}_{ut}`.
pub fn signature_derivative(before: &IteratedIntegrals, after: &IteratedIntegrals, word: &Word, j: usize) -> f64 {
    let w = word.letters();
    (0..w.len())
        .filter(|&l| w[l] == j)
        .map(|l| sig_value(before, &w[..l]) * sig_value(after, &w[l + 1..]))
        .sum()
}

fn require_constant_brackets(sys: &StrichartzSystem) -> Result<()> {
    if !constant_brackets(sys.fields(), sys.order().max(2))? {
        return Err(Error::Precondition(
            "Malliavin derivatives need brackets of length >= 2 to be constant".into(),
        ));
    }
    Ok(())
}

/// `D_u y_t` at one `u`: joint RK4 of `φ' = Z(φ)` and
/// `(D^j φ)' = ∇Z(φ) D^j φ + Σ_w D^j_u ψ_w V_w(φ)`.
fn malliavin_at(
    sys: &StrichartzSystem,
    p: &SamplePath,
    a: &[f64],
    u: usize,
    t: usize,
    steps: usize,
) -> Result<Vec<f64>> {
    let (m, d) = (sys.dim(), sys.n_fields());
    if u >= t {
        return Ok(vec![0.0; m * d]);
    }
    let level = sys.order() - 1;
    let sig = path_signature_idx(p, 0, t, level)?;
    let before = if u == 0 {
        IteratedIntegrals::identity(d, level, 0.0, 0.0)
    } else {
        path_signature_idx(p, 0, u, level)?
    };
    let after = path_signature_idx(p, u, t, level)?;
    let z = sys.build_z(&sig)?.z;
    // Driving field for each direction j.
    let drives: Vec<FloatField> = (0..d)
        .map(|j| sys.assemble(&sys.psi_levels(|w| signature_derivative(&before, &after, w, j))))
        .collect();
    let mut state = vec![0.0; m + m * d];
    state[..m].copy_from_slice(a);
    let scratch = std::cell::RefCell::new((vec![0.0; m * m], vec![0.0; m]));
    rk4(&mut state, steps, |x, out| {
        let mut guard = scratch.borrow_mut();
        let (g, v) = &mut *guard;
        let phi = &x[..m];
        z.eval_into(phi, &mut out[..m]);
        z.jacobian_into(phi, g);
        for (j, drive) in drives.iter().enumerate() {
            drive.eval_into(phi, v);
            for r in 0..m {
                let mut acc = v[r];
                for l in 0..m {
                    acc += g[r * m + l] * x[m + l * d + j];
                }
                out[m + r * d + j] = acc;
            }
        }
    })?;
    Ok(state[m..].to_vec())
}

/// `D_u y_t` for all grid `u` through the linearised Strichartz flow.
pub fn malliavin_derivative(
    sys: &StrichartzSystem,
    p: &SamplePath,
    a: &[f64],
    t: f64,
    steps: usize,
) -> Result<MalliavinSlice> {
    require_constant_brackets(sys)?;
    let k = p.grid().index_of(t)?;
    let values = (0..p.len())
        .into_par_iter()
        .map(|u| malliavin_at(sys, p, a, u, k, steps))
        .collect::<Result<Vec<_>>>()?;
    Ok(MalliavinSlice {
        t,
        u: p.grid().times().to_vec(),
        m: sys.dim(),
        d: sys.n_fields(),
        values,
    })
}

/// Same slice through `D^j_u y_t = J_{0,t} J_{0,u}^{-1} V_j(y_u)` for `u < t`.
pub fn malliavin_via_jacobian(
    sys: &StrichartzSystem,
    p: &SamplePath,
    a: &[f64],
    t: f64,
    steps: usize,
) -> Result<MalliavinSlice> {
    let k = p.grid().index_of(t)?;
    let (m, d) = (sys.dim(), sys.n_fields());
    let fields: Vec<FloatField> = sys.fields().iter().map(PolyVectorField::compile).collect();
    let at_t = jacobian_between(sys, p, a, 0, k, steps)?;
    let values = (0..p.len())
        .into_par_iter()
        .map(|u| {
            if u >= k {
                return Ok(vec![0.0; m * d]);
            }
            let at_u = jacobian_between(sys, p, a, 0, u, steps)?;
            let prop = &at_t.j * &at_u.j_inv;
            let mut out = vec![0.0; m * d];
            for (j, f) in fields.iter().enumerate() {
                let v = nalgebra::DVector::from_vec(f.eval(&at_u.y));
                let col = &prop * v;
                for r in 0..m {
                    out[r * d + j] = col[r];
                }
            }
            Ok(out)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(MalliavinSlice {
        t,
        u: p.grid().times().to_vec(),
        m,
        d,
        values,
    })
}

/// `D^j_u y_t` by central differences of a jump `±ε e_j` inserted at `u`.
#[allow(clippy::too_many_arguments)]
pub fn malliavin_finite_difference(
    sys: &StrichartzSystem,
    p: &SamplePath,
    a: &[f64],
    u: usize,
    t: usize,
    j: usize,
    eps: f64,
    steps: usize,
) -> Result<Vec<f64>> {
    let d = sys.n_fields();
    let level = sys.order() - 1;
    if u >= t {
        return Ok(vec![0.0; sys.dim()]);
    }
    let before = if u == 0 {
        IteratedIntegrals::identity(d, level, 0.0, p.grid().time(0))
    } else {
        path_signature_idx(p, 0, u, level)?
    };
    let after = path_signature_idx(p, u, t, level)?;
    let tu = p.grid().time(u);
    let bumped = |e: f64| -> Result<Vec<f64>> {
        let mut v = vec![0.0; d];
        v[j] = e;
        let jump = crate::signature::segment_signature_on(&v, level, tu, tu)?;
        let sig = crate::signature::chen_concat(&crate::signature::chen_concat(&before, &jump)?, &after)?;
        crate::strichartz::exp_flow(&sys.build_z(&sig)?, a, steps)
    };
    let (plus, minus) = (bumped(eps)?, bumped(-eps)?);
    Ok(plus.iter().zip(&minus).map(|(x, y)| (x - y) / (2.0 * eps)).collect())
}

fn normalized(eta: &[f64]) -> Result<Vec<f64>> {
    let norm = eta.iter().map(|v| v * v).sum::<f64>().sqrt();
    if !(norm > 0.0) {
        return domain("direction η must be non-zero");
    }
    Ok(eta.iter().map(|v| v / norm).collect())
}

/// `Z^U_t = <J_{0,t}^{-1} U(y_t), η>` along a precomputed flow path.
pub fn z_process_on(flow: &JacobianPath, u: &PolyVectorField, eta: &[f64]) -> Result<Vec<f64>> {
    let m = flow.y.dim();
    if u.dim() != m || eta.len() != m {
        return domain(format!("U and η must live in ℝ^{m}"));
    }
    let eta = normalized(eta)?;
    let uf = u.compile();
    Ok((0..flow.y.len())
        .map(|k| {
            let v = nalgebra::DVector::from_vec(uf.eval(flow.y.row(k)));
            let w = &flow.j_inv[k] * v;
            w.iter().zip(&eta).map(|(a, b)| a * b).sum()
        })
        .collect())
}

/// `Z^U_t` at every point of `grid` (a coarsening of the path grid).
pub fn z_process(
    sys: &StrichartzSystem,
    p: &SamplePath,
    a: &[f64],
    u: &PolyVectorField,
    eta: &[f64],
    grid: &TimeGrid,
    steps: usize,
) -> Result<Vec<f64>> {
    let stride = crate::controlled::grid_stride(p.grid(), grid)?;
    let flow = jacobian_path(sys, p, a, steps)?;
    let full = z_process_on(&flow, u, eta)?;
    Ok(full.into_iter().step_by(stride).collect())
}

/// The integrand of the `Z^U` dynamics as a controlled path:
/// `z^j = Z^{[V_j,U]}`, `ζ^{jk} = Z^{[V_k,[V_j,U]]}`.
pub fn z_integrand(
    flow: &JacobianPath,
    driver: Arc<RoughDriver>,
    fields: &[PolyVectorField],
    u: &PolyVectorField,
    eta: &[f64],
) -> Result<ControlledPath> {
    let d = fields.len();
    let n = flow.y.len();
    let mut z = vec![0.0; n * d];
    let mut zeta = vec![0.0; n * d * d];
    for (j, vj) in fields.iter().enumerate() {
        let first = bracket(vj, u)?;
        let zj = z_process_on(flow, &first, eta)?;
        for k in 0..n {
            z[k * d + j] = zj[k];
        }
        for (l, vl) in fields.iter().enumerate() {
            let second = z_process_on(flow, &bracket(vl, &first)?, eta)?;
            for k in 0..n {
                zeta[(k * d + j) * d + l] = second[k];
            }
        }
    }
    ControlledPath::new(driver, d, z, zeta)
}

/// `max_t |Z^U_t - <η,U(a)> - Σ_j ∫_0^t Z^{[V_j,U]} dB^j|`.
pub fn z_dynamics_residual(
    sys: &StrichartzSystem,
    p: &SamplePath,
    a: &[f64],
    u: &PolyVectorField,
    eta: &[f64],
    steps: usize,
) -> Result<f64> {
    let flow = jacobian_path(sys, p, a, steps)?;
    let zu = z_process_on(&flow, u, eta)?;
    let driver = Arc::new(RoughDriver::new(p.clone()));
    let integrand = z_integrand(&flow, driver, sys.fields(), u, eta)?;
    let integral = rough_integral_contract(&integrand, 0, p.len() - 1)?;
    Ok((0..p.len())
        .map(|k| (zu[k] - zu[0] - integral.as_controlled.value(k)[0]).abs())
        .fold(0.0, f64::max))
}

/// Monte-Carlo moments `E[sup_t |y_t|^q]`, `E[|J_{0,T}|^q]`, `E[|J^{-1}_{0,T}|^q]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentProbe {
    pub q: f64,
    pub n_paths: usize,
    pub sup_y: f64,
    pub jacobian: f64,
    pub inverse: f64,
}

pub fn moment_probe(
    sys: &StrichartzSystem,
    paths: &[SamplePath],
    a: &[f64],
    qs: &[f64],
    steps: usize,
) -> Result<Vec<MomentProbe>> {
    let stats = paths
        .par_iter()
        .map(|p| {
            let f = jacobian_path(sys, p, a, steps)?;
            let sup = (0..f.y.len())
                .map(|k| f.y.row(k).iter().map(|v| v * v).sum::<f64>().sqrt())
                .fold(0.0, f64::max);
            let last = f.j.len() - 1;
            Ok((sup, f.j[last].norm(), f.j_inv[last].norm()))
        })
        .collect::<Result<Vec<_>>>()?;
    let n = stats.len() as f64;
    Ok(qs
        .iter()
        .map(|&q| MomentProbe {
            q,
            n_paths: stats.len(),
            sup_y: stats.iter().map(|s| s.0.powf(q)).sum::<f64>() / n,
            jacobian: stats.iter().map(|s| s.1.powf(q)).sum::<f64>() / n,
            inverse: stats.iter().map(|s| s.2.powf(q)).sum::<f64>() / n,
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fbm::{sample_fbm, HurstParam};

    fn yamato() -> Vec<PolyVectorField> {
        vec![
            PolyVectorField::zero(3),
            PolyVectorField::parse(&["1", "0", "2*x2"]).unwrap(),
            PolyVectorField::parse(&["0", "1", "-2*x1"]).unwrap(),
        ]
    }

    fn path(d: usize, n: usize, seed: u64) -> SamplePath {
        sample_fbm(HurstParam::new(0.4).unwrap(), &TimeGrid::new(1.0, n).unwrap(), d, 1, seed)
            .unwrap()
            .remove(0)
    }

    #[test]
    fn zero_fields_give_identity() {
        let sys = StrichartzSystem::new(&[PolyVectorField::zero(2), PolyVectorField::zero(2)], 2).unwrap();
        let p = path(2, 17, 1);
        let f = jacobian_flow_strichartz(&sys, &p, &[1.0, 2.0], 1.0, 16).unwrap();
        assert_eq!(f.j, DMatrix::identity(2, 2));
        assert_eq!(f.j_inv, DMatrix::identity(2, 2));
    }

    #[test]
    fn yamato_jacobian_is_unit_lower_triangular() {
        let sys = StrichartzSystem::new(&yamato(), 3).unwrap();
        let p = path(3, 65, 4);
        let f = jacobian_flow_strichartz(&sys, &p, &[0.1, 0.2, 0.3], 1.0, 64).unwrap();
        let (b2, b3) = (p.value(64, 1), p.value(64, 2));
        let want = DMatrix::from_row_slice(3, 3, &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0, -2.0 * b3, 2.0 * b2, 1.0]);
        assert!((&f.j - want).amax() < 1e-12);
        assert!((&f.j * &f.j_inv - DMatrix::<f64>::identity(3, 3)).amax() < 1e-12);
    }

    #[test]
    fn nonlinear_jacobian_contracts() {
        // 4-nilpotent, with a quadratic component so J depends on the state.
        let f = vec![
            PolyVectorField::parse(&["1", "0", "0", "0"]).unwrap(),
            PolyVectorField::parse(&["0", "1", "x1", "1/2*x1^2"]).unwrap(),
        ];
        let sys = StrichartzSystem::new(&f, 4).unwrap();
        let p = path(2, 33, 9);
        let a = [0.3, -0.1, 0.2, 0.5];
        let full = jacobian_flow_strichartz(&sys, &p, &a, 1.0, 256).unwrap();
        assert!((&full.j * &full.j_inv - DMatrix::<f64>::identity(4, 4)).amax() < 1e-9);
        // Finite differences of the endpoint map.
        let eps = 1e-4;
        for k in 0..4 {
            let mut ap = a;
            let mut am = a;
            ap[k] += eps;
            am[k] -= eps;
            let yp = sys.solve(&p, &ap, 1.0, 256).unwrap();
            let ym = sys.solve(&p, &am, 1.0, 256).unwrap();
            for r in 0..4 {
                assert!((full.j[(r, k)] - (yp[r] - ym[r]) / (2.0 * eps)).abs() < 1e-6);
            }
        }
        // Flow property through a restart at u.
        let u = 12;
        let first = jacobian_between(&sys, &p, &a, 0, u, 256).unwrap();
        let second = jacobian_between(&sys, &p, &first.y, u, 32, 256).unwrap();
        assert!((&second.j * &first.j - &full.j).amax() < 1e-8);
        // The composed path agrees at the end.
        let comp = jacobian_path(&sys, &p, &a, 32).unwrap();
        assert!((&comp.j[32] - &full.j).amax() < 1e-8);
        assert!(comp.inverse_defect() < 1e-9);
    }

    #[test]
    fn signature_derivative_matches_jump_difference() {
        let p = path(2, 33, 17);
        let level = 3;
        let before = path_signature_idx(&p, 0, 10, level).unwrap();
        let after = path_signature_idx(&p, 10, 32, level).unwrap();
        let t10 = p.grid().time(10);
        let eps = 1e-5;
        for w in (1..=3).flat_map(|k| Word::all(k, 2)) {
            for j in 0..2 {
                let total = |e: f64| {
                    let mut v = vec![0.0; 2];
                    v[j] = e;
                    let jump = crate::signature::segment_signature_on(&v, level, t10, t10).unwrap();
                    let s = crate::signature::chen_concat(&before, &jump).unwrap();
                    crate::signature::chen_concat(&s, &after).unwrap().get(&w)
                };
                let fd = (total(eps) - total(-eps)) / (2.0 * eps);
                let exact = signature_derivative(&before, &after, &w, j);
                assert!((fd - exact).abs() < 1e-8, "{w} j={j}: {fd} vs {exact}");
            }
        }
    }

    #[test]
    fn malliavin_routes_agree_on_yamato() {
        let sys = StrichartzSystem::new(&yamato(), 3).unwrap();
        let p = path(3, 33, 23);
        let a = [0.5, -0.5, 0.0];
        let ode = malliavin_derivative(&sys, &p, &a, 0.75, 64).unwrap();
        let jac = malliavin_via_jacobian(&sys, &p, &a, 0.75, 64).unwrap();
        assert!(ode.max_abs_diff(&jac) < 1e-10);
        assert!(ode.values[30].iter().all(|&v| v == 0.0));
        for u in [0, 5, 20] {
            for j in 0..3 {
                let fd = malliavin_finite_difference(&sys, &p, &a, u, 24, j, 1e-4, 64).unwrap();
                let m = ode.at(u);
                for r in 0..3 {
                    assert!((m[(r, j)] - fd[r]).abs() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn malliavin_commuting_constant_fields() {
        let f = vec![
            PolyVectorField::parse(&["1", "2"]).unwrap(),
            PolyVectorField::parse(&["0", "-1"]).unwrap(),
        ];
        let sys = StrichartzSystem::new(&f, 2).unwrap();
        let p = path(2, 17, 2);
        let s = malliavin_derivative(&sys, &p, &[0.0, 0.0], 1.0, 8).unwrap();
        let want = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 2.0, -1.0]);
        assert!((s.at(3) - want).amax() < 1e-14);
        assert!(s.at(16).amax() == 0.0);
    }

    #[test]
    fn malliavin_requires_constant_brackets() {
        let f = vec![
            PolyVectorField::parse(&["1", "0", "0", "0"]).unwrap(),
            PolyVectorField::parse(&["0", "1", "x1", "1/2*x1^2"]).unwrap(),
        ];
        let sys = StrichartzSystem::new(&f, 4).unwrap();
        let p = path(2, 9, 2);
        assert!(matches!(
            malliavin_derivative(&sys, &p, &[0.0; 4], 1.0, 8),
            Err(Error::Precondition(_))
        ));
    }

    #[test]
    fn z_process_examples() {
        let sys = StrichartzSystem::new(&yamato(), 3).unwrap();
        let p = path(3, 65, 31);
        let a = [0.2, 0.7, -0.1];
        let grid = p.grid().clone();
        let zero = z_process(&sys, &p, &a, &PolyVectorField::zero(3), &[0.0, 0.0, 1.0], &grid, 1).unwrap();
        assert!(zero.iter().all(|&v| v == 0.0));
        let u = yamato()[1].clone();
        let z = z_process(&sys, &p, &a, &u, &[0.0, 0.0, 2.0], &grid, 1).unwrap();
        assert!((z[0] - 2.0 * a[1]).abs() < 1e-14);
        // Z^{A2} = 2 a2 + 4 B^3_t for η = e3.
        for k in 0..65 {
            assert!((z[k] - (2.0 * a[1] + 4.0 * p.value(k, 2))).abs() < 1e-12);
        }
        let coarse = grid.coarsen(16).unwrap();
        assert_eq!(z_process(&sys, &p, &a, &u, &[0.0, 0.0, 1.0], &coarse, 1).unwrap().len(), 5);
    }

    #[test]
    fn z_dynamics_residual_is_small() {
        let sys = StrichartzSystem::new(&yamato(), 3).unwrap();
        let p = path(3, 257, 41);
        let a = [0.2, 0.7, -0.1];
        // Second brackets of this U with the Yamato fields are constant, so
        // the compensated sum is exact on the piecewise-linear driver.
        let u = PolyVectorField::parse(&["x2", "0", "x1^2"]).unwrap();
        let eta = [0.3, -0.4, 0.5];
        let r = z_dynamics_residual(&sys, &p, &a, &u, &eta, 1).unwrap();
        assert!(r < 1e-10, "residual {r}");
        // The opposite bracket order does not satisfy the dynamics.
        let flow = jacobian_path(&sys, &p, &a, 1).unwrap();
        let zu = z_process_on(&flow, &u, &eta).unwrap();
        let drv = Arc::new(RoughDriver::new(p.clone()));
        let neg: Vec<PolyVectorField> = sys
            .fields()
            .iter()
            .map(|f| f.scale(&-num_rational::BigRational::from_integer(1.into())))
            .collect();
        let wrong = z_integrand(&flow, drv, &neg, &u, &eta).unwrap();
        let int = rough_integral_contract(&wrong, 0, 256).unwrap();
        let bad = (zu[256] - zu[0] - int.value[0]).abs();
        assert!(bad > 1e-3 || int.value[0].abs() < 1e-12);
    }
}
