//! Fourth-variation statistics of fBm increments, their Hermite closed
//! forms, the interpolation inequality, and a Monte-Carlo probe of the
//! small-integral / large-integrand dichotomy.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};
use crate::fbm::{FbmSampler, HurstParam, SamplePath, TimeGrid};
use crate::flows::{jacobian_path, z_process_on};
use crate::increments::Increment1;
use crate::liefields::{bracket, PolyVectorField};
use crate::strichartz::StrichartzSystem;

/// Fine step `δ` and block length `Δ = rδ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TwoScale {
    pub delta: f64,
    #[serde(rename = "Delta")]
    pub big_delta: f64,
    pub r: usize,
}

impl TwoScale {
    pub fn new(delta: f64, big_delta: f64) -> Result<Self> {
        if !(delta > 0.0 && big_delta <= 1.0 && big_delta > delta) {
            return domain(format!("need 0 < δ < Δ ≤ 1, got δ={delta}, Δ={big_delta}"));
        }
        let ratio = big_delta / delta;
        let r = ratio.round();
        if (ratio - r).abs() > 1e-9 * ratio || r < 2.0 {
            return domain(format!("Δ/δ = {ratio} is not an integer ≥ 2"));
        }
        Ok(Self {
            delta,
            big_delta,
            r: r as usize,
        })
    }
}

impl Default for TwoScale {
    fn default() -> Self {
        Self {
            delta: 2f64.powi(-10),
            big_delta: 2f64.powi(-5),
            r: 32,
        }
    }
}

/// Probabilists' Hermite polynomial `H_k(x)`, `k ≤ 6`.
pub fn hermite(k: usize, x: f64) -> Result<f64> {
    if k > 6 {
        return domain(format!("Hermite degree {k} is outside 0..=6"));
    }
    let (mut prev, mut cur) = (1.0, x);
    if k == 0 {
        return Ok(1.0);
    }
    for j in 1..k {
        let next = x * cur - j as f64 * prev;
        prev = cur;
        cur = next;
    }
    Ok(cur)
}

/// Correlation of unit-step fBm increments at lag `m`:
/// `½(|m+1|^{2H} + |m-1|^{2H} - 2|m|^{2H})`.
pub fn alpha(m: usize, h: HurstParam) -> f64 {
    let two_h = 2.0 * h.value();
    let m = m as f64;
    0.5 * ((m + 1.0).powf(two_h) + (m - 1.0).abs().powf(two_h) - 2.0 * m.powf(two_h))
}

/// Mean and variance of `X̃_K = Σ_{n=1}^K |B_{t_{n+1}} - B_{t_n}|⁴` at mesh `δ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HermiteMoments {
    pub mean: f64,
    pub variance: f64,
}

/// Closed form from `G⁴ = H₄(G) + 6H₂(G) + 3` and
/// `E[H_k(U)H_l(V)] = k!ρ^k 1_{k=l}`:
/// `Var = δ^{8H} Σ_{n₁,n₂} (24α⁴ + 72α²)`.
pub fn hermite_moments(k: usize, h: HurstParam, delta: f64) -> Result<HermiteMoments> {
    if k == 0 {
        return domain("K must be at least 1");
    }
    if !(delta > 0.0) {
        return domain(format!("δ must be positive, got {delta}"));
    }
    let scale = delta.powf(4.0 * h.value());
    let mut sum = 0.0;
    for lag in 0..k {
        let a = alpha(lag, h);
        let weight = if lag == 0 { k } else { 2 * (k - lag) } as f64;
        sum += weight * (24.0 * a.powi(4) + 72.0 * a * a);
    }
    Ok(HermiteMoments {
        mean: 3.0 * k as f64 * scale,
        variance: scale * scale * sum,
    })
}

/// `S_K = Σ_{n₁,n₂=1}^K (12α⁴ + α²)`, the compact sum whose growth is linear in `K`.
pub fn s_k(k: usize, h: HurstParam) -> f64 {
    (0..k)
        .map(|lag| {
            let a = alpha(lag, h);
            let weight = if lag == 0 { k } else { 2 * (k - lag) } as f64;
            weight * (12.0 * a.powi(4) + a * a)
        })
        .sum()
}

/// Monte-Carlo mean and variance of `X̂_K` (unit mesh) with standard errors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McMoments {
    pub n: usize,
    pub mean: f64,
    pub mean_stderr: f64,
    pub variance: f64,
    pub variance_stderr: f64,
}

pub fn summarize(samples: &[f64]) -> McMoments {
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let m2 = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    let m4 = samples.iter().map(|x| (x - mean).powi(4)).sum::<f64>() / n;
    let variance = m2 * n / (n - 1.0);
    McMoments {
        n: samples.len(),
        mean,
        mean_stderr: (variance / n).sqrt(),
        variance,
        variance_stderr: ((m4 - m2 * m2) / n).max(0.0).sqrt(),
    }
}

/// Samples of `X̂_K = Σ_{n=1}^K G_n⁴` with `G_n` unit-mesh fBm increments.
pub fn hermite_samples(k: usize, h: HurstParam, n_samples: usize, seed: u64) -> Result<Vec<f64>> {
    let sampler = FbmSampler::new(h, TimeGrid::new(k as f64, k + 1)?)?;
    (0..n_samples as u64)
        .into_par_iter()
        .map(|i| {
            let p = sampler.sample_one(1, seed, i)?;
            Ok((0..k).map(|n| (p.value(n + 1, 0) - p.value(n, 0)).powi(4)).sum())
        })
        .collect()
}

/// Fourth variations per block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockStats {
    pub scales: TwoScale,
    /// `X_N = Σ_{n in block N} |B¹_{t_n t_{n+1}}|⁴`.
    pub x: Vec<f64>,
    /// `Y_N = X_N^{1/4}`.
    pub y: Vec<f64>,
    /// `Σ_N X_N`.
    pub total: f64,
    pub mean: f64,
    pub variance: f64,
}

/// Block statistics of a path whose grid step divides `δ`.
pub fn block_stats(p: &SamplePath, scales: &TwoScale) -> Result<BlockStats> {
    let mesh = p.grid().mesh();
    let ratio = scales.delta / mesh;
    let stride = ratio.round() as usize;
    if stride == 0 || (ratio - stride as f64).abs() > 1e-9 * ratio {
        return domain(format!("δ = {} is not a multiple of the grid step {mesh}", scales.delta));
    }
    let fine_steps = (p.len() - 1) / stride;
    let blocks = fine_steps / scales.r;
    if blocks == 0 {
        return domain("path is shorter than one block Δ");
    }
    let x: Vec<f64> = (0..blocks)
        .map(|b| {
            (0..scales.r)
                .map(|i| {
                    let n = (b * scales.r + i) * stride;
                    let inc = p.increment(n, n + stride);
                    inc.iter().map(|v| v * v).sum::<f64>().powi(2)
                })
                .sum()
        })
        .collect();
    let y = x.iter().map(|v: &f64| v.powf(0.25)).collect();
    let total: f64 = x.iter().sum();
    let mean = total / blocks as f64;
    let variance = if blocks > 1 {
        x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (blocks - 1) as f64
    } else {
        0.0
    };
    Ok(BlockStats {
        scales: *scales,
        x,
        y,
        total,
        mean,
        variance,
    })
}

/// `E[X_N] = d(d+2) r δ^{4H}` for a `d`-dimensional fBm.
pub fn block_mean_theory(d: usize, h: HurstParam, scales: &TwoScale) -> f64 {
    (d * (d + 2)) as f64 * scales.r as f64 * scales.delta.powf(4.0 * h.value())
}

/// Monte-Carlo of block means: every block of every path is one sample.
pub fn block_mean_mc(
    h: HurstParam,
    d: usize,
    scales: &TwoScale,
    horizon: f64,
    n_paths: usize,
    seed: u64,
) -> Result<McMoments> {
    let n = (horizon / scales.delta).round() as usize + 1;
    let sampler = FbmSampler::new(h, TimeGrid::new(horizon, n)?)?;
    let xs: Vec<Vec<f64>> = (0..n_paths as u64)
        .into_par_iter()
        .map(|i| Ok(block_stats(&sampler.sample_one(d, seed, i)?, scales)?.x))
        .collect::<Result<_>>()?;
    // One block per path keeps the samples independent.
    let firsts: Vec<f64> = xs.iter().map(|x| x[0]).collect();
    Ok(summarize(&firsts))
}

/// Tail frequencies of `|X_N - E X_N| / (Δ^{1/2} δ^{4H-1/2})` over a `u` grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConcentrationRow {
    pub u: f64,
    pub frequency: f64,
}

pub fn concentration_probe(
    stats: &[BlockStats],
    d: usize,
    h: HurstParam,
    us: &[f64],
) -> Vec<ConcentrationRow> {
    let Some(first) = stats.first() else {
        return Vec::new();
    };
    let sc = first.scales;
    let center = block_mean_theory(d, h, &sc);
    let norm = sc.big_delta.sqrt() * sc.delta.powf(4.0 * h.value() - 0.5);
    let dev: Vec<f64> = stats
        .iter()
        .flat_map(|s| s.x.iter().map(|x| (x - center).abs() / norm))
        .collect();
    us.iter()
        .map(|&u| ConcentrationRow {
            u,
            frequency: dev.iter().filter(|&&v| v > u).count() as f64 / dev.len() as f64,
        })
        .collect()
}

/// Inner and η-form checks of the interpolation inequality.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterpolationReport {
    pub alpha: f64,
    pub rho: f64,
    /// `‖b‖_α`.
    pub lhs: f64,
    /// `2^{1-α/ρ} ‖b‖_∞^{1-α/ρ} ‖b‖_ρ^{α/ρ}`.
    pub rhs: f64,
    pub holds: bool,
    /// `(η, C(η))` with `C(η) = ‖b‖_{α,∞} / (η‖b‖_{ρ,∞} + η^{-1/(ρ-α)}‖b‖_{L¹})`.
    pub implied_c: Vec<(f64, f64)>,
    /// `max_η C(η)`.
    pub implied_c_max: f64,
}

pub fn interpolation_check(b: &Increment1, alpha: f64, rho: f64) -> Result<InterpolationReport> {
    if !(0.0 < alpha && alpha < rho && rho < 1.0) {
        return domain(format!("need 0 < α < ρ < 1, got α={alpha}, ρ={rho}"));
    }
    let theta = alpha / rho;
    let lhs = b.holder(alpha)?;
    let sup = b.sup_norm();
    let rho_norm = b.holder(rho)?;
    let rhs = 2f64.powf(1.0 - theta) * sup.powf(1.0 - theta) * rho_norm.powf(theta);
    let holds = lhs <= rhs * (1.0 + 1e-12) + 1e-300;
    let full = lhs + sup;
    let rho_full = rho_norm + sup;
    let l1 = b.l1_norm();
    let implied_c: Vec<(f64, f64)> = (-20..=20)
        .map(|k| {
            let eta = 2f64.powf(k as f64 / 2.0);
            let denom = eta * rho_full + eta.powf(-1.0 / (rho - alpha)) * l1;
            (eta, if denom > 0.0 { full / denom } else { 0.0 })
        })
        .collect();
    let implied_c_max = implied_c.iter().map(|p| p.1).fold(0.0, f64::max);
    Ok(InterpolationReport {
        alpha,
        rho,
        lhs,
        rhs,
        holds,
        implied_c,
        implied_c_max,
    })
}

/// Parameters of the dichotomy experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NorrisSetup {
    pub hurst: f64,
    pub horizon: f64,
    pub n_points: usize,
    pub gamma: f64,
    pub alpha: f64,
    pub q: f64,
    pub eps: Vec<f64>,
    pub n_paths: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NorrisRow {
    pub eps: f64,
    pub count: usize,
    pub frequency: f64,
    /// True when no event was seen; `frequency` is then the bound `3/n`.
    pub upper_bound_only: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NorrisTable {
    pub setup: NorrisSetup,
    pub rows: Vec<NorrisRow>,
    /// Slope of log frequency against log ε over rows with events.
    pub fitted_exponent: Option<f64>,
    pub non_increasing: bool,
}

/// Least-squares slope of `y` against `x`.
pub fn ls_slope(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    if x.len() < 2 {
        return None;
    }
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    Some(sxy / sxx)
}

/// Per-path norms `(‖y‖_{γ,∞}, ‖z‖_{α,∞})` with `y = Z^U - Z^U_0` and
/// `z = (Z^{[V_j,U]})_j`.
pub fn dichotomy_norms(
    sys: &StrichartzSystem,
    p: &SamplePath,
    a: &[f64],
    u: &PolyVectorField,
    eta: &[f64],
    gamma: f64,
    alpha: f64,
) -> Result<(f64, f64)> {
    let flow = jacobian_path(sys, p, a, 1)?;
    let zu = z_process_on(&flow, u, eta)?;
    let y: Vec<f64> = zu.iter().map(|v| v - zu[0]).collect();
    let ynorm = Increment1::scalar(p.grid().clone(), y)?.holder_sup(gamma)?;
    let d = sys.n_fields();
    let n = p.len();
    let mut z = vec![0.0; n * d];
    for (j, vj) in sys.fields().iter().enumerate() {
        let zj = z_process_on(&flow, &bracket(vj, u)?, eta)?;
        for k in 0..n {
            z[k * d + j] = zj[k];
        }
    }
    let znorm = Increment1::new(p.grid().clone(), d, z)?.holder_sup(alpha)?;
    Ok((ynorm, znorm))
}

/// Frequencies of `{‖y‖_{γ,∞} < ε, ‖z‖_{α,∞} > ε^q}` over an ε grid.
pub fn norris_dichotomy_mc(
    fields: &[PolyVectorField],
    n_order: usize,
    u: &PolyVectorField,
    eta: &[f64],
    a: &[f64],
    setup: &NorrisSetup,
) -> Result<NorrisTable> {
    if !(setup.q > 0.0) {
        return domain(format!("q must be positive, got {}", setup.q));
    }
    if setup.eps.is_empty() || setup.eps.iter().any(|&e| !(e > 0.0)) {
        return domain("ε grid must be non-empty and positive");
    }
    let sys = StrichartzSystem::new(fields, n_order)?;
    let h = HurstParam::new(setup.hurst)?;
    let sampler = FbmSampler::new(h, TimeGrid::new(setup.horizon, setup.n_points)?)?;
    let norms: Vec<(f64, f64)> = (0..setup.n_paths as u64)
        .into_par_iter()
        .map(|i| {
            let p = sampler.sample_one(fields.len(), setup.seed, i)?;
            dichotomy_norms(&sys, &p, a, u, eta, setup.gamma, setup.alpha)
        })
        .collect::<Result<_>>()?;
    let n = norms.len() as f64;
    let mut eps = setup.eps.clone();
    eps.sort_by(|x, y| y.total_cmp(x));
    let rows: Vec<NorrisRow> = eps
        .iter()
        .map(|&e| {
            let count = norms.iter().filter(|(y, z)| *y < e && *z > e.powf(setup.q)).count();
            NorrisRow {
                eps: e,
                count,
                frequency: if count > 0 { count as f64 / n } else { 3.0 / n },
                upper_bound_only: count == 0,
            }
        })
        .collect();
    let seen: Vec<&NorrisRow> = rows.iter().filter(|r| !r.upper_bound_only).collect();
    let lx: Vec<f64> = seen.iter().map(|r| r.eps.ln()).collect();
    let ly: Vec<f64> = seen.iter().map(|r| r.frequency.ln()).collect();
    let non_increasing = rows.windows(2).all(|w| w[1].count <= w[0].count);
    Ok(NorrisTable {
        setup: setup.clone(),
        fitted_exponent: ls_slope(&lx, &ly),
        rows,
        non_increasing,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn h(v: f64) -> HurstParam {
        HurstParam::new(v).unwrap()
    }

    #[test]
    fn hermite_examples() {
        assert_eq!(hermite(2, 1.0).unwrap(), 0.0);
        assert_eq!(hermite(4, 0.0).unwrap(), 3.0);
        assert_eq!(hermite(4, 2.0).unwrap(), -5.0);
        assert_eq!(hermite(0, 7.0).unwrap(), 1.0);
        assert!(hermite(7, 1.0).is_err());
    }

    #[test]
    fn alpha_examples() {
        assert_eq!(alpha(0, h(0.4)), 1.0);
        assert!((alpha(1, h(0.4)) - 0.5 * (2f64.powf(0.8) - 2.0)).abs() < 1e-15);
        assert!((alpha(1, h(0.4)) + 0.12945).abs() < 1e-5);
        let ratio = alpha(200, h(0.4)) / alpha(100, h(0.4));
        assert!((ratio - 2f64.powf(0.8 - 2.0)).abs() < 1e-3);
    }

    #[test]
    fn alpha_telescopes() {
        let hp = h(0.37);
        for big_m in [1usize, 5, 40] {
            let sum: f64 = (0..=big_m).map(|m| alpha(m, hp)).sum();
            let m = big_m as f64;
            let want = 0.5 * ((m + 1.0).powf(0.74) - m.powf(0.74) + 1.0);
            assert!((sum - want).abs() < 1e-12);
        }
    }

    #[test]
    fn moments_examples() {
        let m = hermite_moments(10, h(0.4), 1.0).unwrap();
        assert_eq!(m.mean, 30.0);
        // Independent increments: Var(G⁴) = 105 - 9 = 96 per term.
        let bm = hermite_moments(5, h(0.5), 1.0).unwrap();
        assert!((bm.variance - 5.0 * 96.0).abs() < 1e-10);
        let scaled = hermite_moments(4, h(0.4), 0.25).unwrap();
        let unit = hermite_moments(4, h(0.4), 1.0).unwrap();
        assert!((scaled.variance - unit.variance * 0.25f64.powf(3.2)).abs() < 1e-12);
    }

    #[test]
    fn block_stats_examples() {
        let grid = TimeGrid::new(1.0, 65).unwrap();
        let flat = SamplePath::from_values(grid.clone(), 1, vec![0.0; 65]).unwrap();
        let sc = TwoScale::new(1.0 / 64.0, 1.0 / 8.0).unwrap();
        let s = block_stats(&flat, &sc).unwrap();
        assert_eq!(s.x, vec![0.0; 8]);
        // Linear path: each fine increment is δ, X_N = r δ⁴.
        let lin = SamplePath::from_fn(grid, 1, |t| vec![t]).unwrap();
        let s = block_stats(&lin, &sc).unwrap();
        assert!((s.x[3] - 8.0 * (1.0f64 / 64.0).powi(4)).abs() < 1e-18);
        assert!((s.y[3] - s.x[3].powf(0.25)).abs() < 1e-15);
        let bad = TwoScale::new(1.0 / 96.0, 1.0 / 8.0);
        assert!(bad.is_err() || block_stats(&lin, &bad.unwrap()).is_err());
        assert!(TwoScale::new(0.1, 0.25).is_err());
    }

    #[test]
    fn interpolation_examples() {
        let grid = TimeGrid::new(1.0, 65).unwrap();
        let c = Increment1::scalar(grid.clone(), vec![2.0; 65]).unwrap();
        let r = interpolation_check(&c, 0.25, 0.3).unwrap();
        assert_eq!(r.lhs, 0.0);
        assert!(r.holds);
        let id = Increment1::from_fn(grid, 1, |t| vec![t]).unwrap();
        let r = interpolation_check(&id, 0.25, 0.3).unwrap();
        assert!((r.lhs - 1.0).abs() < 1e-12);
        assert!((r.rhs - 2f64.powf(1.0 - 0.25 / 0.3)).abs() < 1e-12);
        assert!(r.holds);
        assert!(interpolation_check(&id, 0.3, 0.25).is_err());
    }

    #[test]
    fn ls_slope_recovers_line() {
        let x = [0.0, 1.0, 2.0];
        let y = [1.0, 3.0, 5.0];
        assert!((ls_slope(&x, &y).unwrap() - 2.0).abs() < 1e-15);
        assert!(ls_slope(&[1.0], &[1.0]).is_none());
    }

    #[test]
    fn s_k_grows_linearly() {
        let hp = h(0.4);
        let a = s_k(64, hp) / 64.0;
        let b = s_k(256, hp) / 256.0;
        assert!((a - b).abs() / a < 0.1);
    }
}
