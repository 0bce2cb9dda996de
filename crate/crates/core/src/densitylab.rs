//! The Yamato system end to end: fields, closed-form solution, and
//! Monte-Carlo density probes of `y_t` (kernel density estimate, atom check,
//! symmetry and smoothness proxies, KS distance to the closed form).

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::fbm::{fmt_f64, FbmSampler, HurstParam, SamplePath, TimeGrid};
use crate::liefields::{constant_brackets, hormander_rank, is_nilpotent, PolyVectorField};
use crate::signature::{path_signature, Word};
use crate::strichartz::StrichartzSystem;

/// `A₁ = 0`, `A₂ = ∂₁ + 2x₂∂₃`, `A₃ = ∂₂ - 2x₁∂₃` on ℝ³.
pub fn yamato_fields() -> Vec<PolyVectorField> {
    vec![
        PolyVectorField::zero(3),
        PolyVectorField::parse(&["1", "0", "2*x2"]).expect("static field"),
        PolyVectorField::parse(&["0", "1", "-2*x1"]).expect("static field"),
    ]
}

/// Field-file text of [`yamato_fields`].
pub const YAMATO_FIELD_FILE: &str = "\
# Yamato system on R^3, driven by a 3-dimensional path (first field is zero)
3 3
# A1
0
0
0
# A2
1
0
2*x2
# A3
0
1
-2*x1
";

/// Closed-form Yamato solution at time `t`:
/// `y¹ = a₁ + B²_t`, `y² = a₂ + B³_t`,
/// `y³ = a₃ + 2a₂B²_t - 2a₁B³_t + 2(B^{32}_{0t} - B^{23}_{0t})`.
pub fn yamato_explicit(p: &SamplePath, initial: &[f64], t: f64) -> Result<Vec<f64>> {
    if p.dim() != 3 {
        return domain(format!("Yamato driver must be 3-dimensional, got {}", p.dim()));
    }
    if initial.len() != 3 {
        return domain(format!("Yamato initial condition must lie in ℝ³, got {}", initial.len()));
    }
    let k = p.grid().index_of(t)?;
    if k == 0 {
        return Ok(initial.to_vec());
    }
    let sig = path_signature(p, 0.0, t, 2)?;
    let (b2, b3) = (p.value(k, 1), p.value(k, 2));
    let area = sig.get(&Word::new(vec![2, 1])) - sig.get(&Word::new(vec![1, 2]));
    Ok(vec![
        initial[0] + b2,
        initial[1] + b3,
        initial[2] + 2.0 * initial[1] * b2 - 2.0 * initial[0] * b3 + 2.0 * area,
    ])
}

/// Kernel density estimate on a uniform evaluation grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityEstimate {
    pub grid: Vec<f64>,
    pub values: Vec<f64>,
    pub bandwidth: f64,
    pub n_samples: usize,
}

impl DensityEstimate {
    /// Trapezoidal integral over the evaluation grid.
    pub fn integral(&self) -> f64 {
        self.grid
            .windows(2)
            .zip(self.values.windows(2))
            .map(|(x, v)| 0.5 * (x[1] - x[0]) * (v[0] + v[1]))
            .sum()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("x,density\n");
        for (x, v) in self.grid.iter().zip(&self.values) {
            out.push_str(&format!("{},{}\n", fmt_f64(*x), fmt_f64(*v)));
        }
        out
    }

    /// `max |f(x) - g(x)|` over the evaluation grid.
    pub fn sup_error(&self, g: impl Fn(f64) -> f64) -> f64 {
        self.grid
            .iter()
            .zip(&self.values)
            .map(|(&x, &v)| (v - g(x)).abs())
            .fold(0.0, f64::max)
    }

    /// Largest first and second finite differences, `max|f'|`, `max|f''|`.
    pub fn smoothness(&self) -> (f64, f64) {
        let h = self.grid[1] - self.grid[0];
        let first = self
            .values
            .windows(2)
            .map(|w| ((w[1] - w[0]) / h).abs())
            .fold(0.0, f64::max);
        let second = self
            .values
            .windows(3)
            .map(|w| ((w[2] - 2.0 * w[1] + w[0]) / (h * h)).abs())
            .fold(0.0, f64::max);
        (first, second)
    }

    /// Number of strict local maxima above 1% of the peak.
    pub fn modes(&self) -> usize {
        let peak = self.values.iter().cloned().fold(0.0, f64::max);
        self.values
            .windows(3)
            .filter(|w| w[1] > w[0] && w[1] >= w[2] && w[1] > 0.01 * peak)
            .count()
    }
}

fn mean_sd(samples: &[f64]) -> (f64, f64) {
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Silverman's rule `1.06 σ̂ n^{-1/5}`.
pub fn silverman_bandwidth(samples: &[f64]) -> f64 {
    let (_, sd) = mean_sd(samples);
    1.06 * sd * (samples.len() as f64).powf(-0.2)
}

/// Gaussian KDE on `grid_points` points spanning the samples plus four bandwidths.
pub fn kde(samples: &[f64], bandwidth: Option<f64>, grid_points: usize) -> Result<DensityEstimate> {
    let (lo, hi) = samples
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
    let h = check_samples(samples, bandwidth)?;
    kde_on(samples, Some(h), lo - 4.0 * h, hi + 4.0 * h, grid_points)
}

fn check_samples(samples: &[f64], bandwidth: Option<f64>) -> Result<f64> {
    if samples.len() < 100 {
        return domain(format!("KDE needs at least 100 samples, got {}", samples.len()));
    }
    if samples.iter().any(|x| !x.is_finite()) {
        return Err(Error::Numeric("KDE samples contain non-finite values".into()));
    }
    let (mean, sd) = mean_sd(samples);
    if !(sd > 0.0) {
        return Err(Error::Atom { value: mean });
    }
    match bandwidth {
        Some(h) if !(h > 0.0) => domain(format!("bandwidth must be positive, got {h}")),
        Some(h) => Ok(h),
        None => Ok(silverman_bandwidth(samples)),
    }
}

/// Gaussian KDE on an explicit range `[lo, hi]`.
pub fn kde_on(samples: &[f64], bandwidth: Option<f64>, lo: f64, hi: f64, grid_points: usize) -> Result<DensityEstimate> {
    let h = check_samples(samples, bandwidth)?;
    if grid_points < 2 || !(hi > lo) {
        return domain("KDE grid needs at least 2 points and lo < hi");
    }
    let step = (hi - lo) / (grid_points - 1) as f64;
    let grid: Vec<f64> = (0..grid_points).map(|i| lo + i as f64 * step).collect();
    let norm = 1.0 / (samples.len() as f64 * h * (2.0 * std::f64::consts::PI).sqrt());
    let values = grid
        .par_iter()
        .map(|&x| {
            samples
                .iter()
                .map(|&s| {
                    let z = (x - s) / h;
                    if z.abs() > 12.0 {
                        0.0
                    } else {
                        (-0.5 * z * z).exp()
                    }
                })
                .sum::<f64>()
                * norm
        })
        .collect();
    Ok(DensityEstimate {
        grid,
        values,
        bandwidth: h,
        n_samples: samples.len(),
    })
}

/// Two-sample Kolmogorov–Smirnov statistic.
pub fn ks_distance(a: &[f64], b: &[f64]) -> f64 {
    let mut x = a.to_vec();
    let mut y = b.to_vec();
    x.sort_by(f64::total_cmp);
    y.sort_by(f64::total_cmp);
    let (n, m) = (x.len() as f64, y.len() as f64);
    let (mut i, mut j, mut best) = (0, 0, 0.0f64);
    while i < x.len() && j < y.len() {
        let v = x[i].min(y[j]);
        while i < x.len() && x[i] <= v {
            i += 1;
        }
        while j < y.len() && y[j] <= v {
            j += 1;
        }
        best = best.max((i as f64 / n - j as f64 / m).abs());
    }
    best
}

/// Sample skewness `m₃ / m₂^{3/2}`.
pub fn skewness(samples: &[f64]) -> f64 {
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let m2 = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    let m3 = samples.iter().map(|x| (x - mean).powi(3)).sum::<f64>() / n;
    m3 / m2.powf(1.5)
}

/// Skewness with a batch-means standard error over `batches` equal batches.
pub fn skewness_with_stderr(samples: &[f64], batches: usize) -> (f64, f64) {
    let size = samples.len() / batches.max(1);
    let per: Vec<f64> = samples.chunks_exact(size.max(1)).take(batches).map(skewness).collect();
    let (_, sd) = mean_sd(&per);
    (skewness(samples), sd / (per.len() as f64).sqrt())
}

/// Real-valued observable of the state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Functional {
    /// Component with 1-based index.
    Component(usize),
    Linear(Vec<f64>),
}

impl Functional {
    fn weights(&self, m: usize) -> Result<Vec<f64>> {
        match self {
            Functional::Component(k) if *k >= 1 && *k <= m => {
                let mut w = vec![0.0; m];
                w[k - 1] = 1.0;
                Ok(w)
            }
            Functional::Component(k) => domain(format!("component {k} is outside 1..={m}")),
            Functional::Linear(w) if w.len() == m => Ok(w.clone()),
            Functional::Linear(w) => domain(format!("functional has {} weights for ℝ^{m}", w.len())),
        }
    }
}

/// Outcome of the three structural checks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HypothesisReport {
    pub nilpotent_order: Option<usize>,
    pub constant_brackets: bool,
    pub hormander_rank: usize,
    pub dimension: usize,
}

/// Smallest `n ≤ max_order` with vanishing brackets of length `n`, the
/// constant-bracket check up to that order and the bracket rank at `x`.
pub fn check_hypotheses(fields: &[PolyVectorField], x: &[f64], max_order: usize) -> Result<HypothesisReport> {
    let mut order = None;
    for n in 2..=max_order {
        if is_nilpotent(fields, n)?.0 {
            order = Some(n);
            break;
        }
    }
    let up_to = order.unwrap_or(max_order).max(2);
    Ok(HypothesisReport {
        nilpotent_order: order,
        constant_brackets: constant_brackets(fields, up_to)?,
        hormander_rank: hormander_rank(fields, x, up_to)?,
        dimension: fields[0].dim(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityConfig {
    pub hurst: f64,
    pub t: f64,
    pub n_points: usize,
    pub n_paths: usize,
    pub seed: u64,
    pub initial: Vec<f64>,
    pub functional: Functional,
    pub grid_points: usize,
    pub bandwidth: Option<f64>,
    pub flow_steps: usize,
}

impl DensityConfig {
    pub fn yamato(functional: Functional, n_paths: usize, seed: u64) -> Self {
        Self {
            hurst: 0.4,
            t: 1.0,
            n_points: 129,
            n_paths,
            seed,
            initial: vec![0.0; 3],
            functional,
            grid_points: 401,
            bandwidth: None,
            flow_steps: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmoothnessProxy {
    pub first_diff_max: f64,
    pub second_diff_max: f64,
    pub first_diff_half: f64,
    pub second_diff_half: f64,
    /// `|stat(n) / stat(n/2) - 1|` for the two statistics.
    pub first_change: f64,
    pub second_change: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityReport {
    pub config: DensityConfig,
    pub hypotheses: HypothesisReport,
    pub kde: DensityEstimate,
    pub mean: f64,
    pub variance: f64,
    pub skewness: f64,
    pub skewness_stderr: f64,
    pub modes: usize,
    pub mass: f64,
    pub smoothness: SmoothnessProxy,
    /// KS distance to samples of the closed form on independent noise.
    pub ks_explicit: Option<f64>,
    #[serde(skip)]
    pub samples: Vec<f64>,
}

/// Sample `⟨w, y_t⟩` through the Strichartz representation.
pub fn solver_samples(
    sys: &StrichartzSystem,
    sampler: &FbmSampler,
    cfg: &DensityConfig,
    indices: std::ops::Range<u64>,
) -> Result<Vec<f64>> {
    let w = cfg.functional.weights(sys.dim())?;
    indices
        .into_par_iter()
        .map(|i| {
            let p = sampler.sample_one(sys.n_fields(), cfg.seed, i)?;
            let y = sys.solve(&p, &cfg.initial, cfg.t, cfg.flow_steps)?;
            Ok(w.iter().zip(&y).map(|(a, b)| a * b).sum())
        })
        .collect()
}

/// Sample `⟨w, y_t⟩` from the Yamato closed form.
pub fn yamato_explicit_samples(
    sampler: &FbmSampler,
    cfg: &DensityConfig,
    indices: std::ops::Range<u64>,
) -> Result<Vec<f64>> {
    let w = cfg.functional.weights(3)?;
    indices
        .into_par_iter()
        .map(|i| {
            let p = sampler.sample_one(3, cfg.seed, i)?;
            let y = yamato_explicit(&p, &cfg.initial, cfg.t)?;
            Ok(w.iter().zip(&y).map(|(a, b)| a * b).sum())
        })
        .collect()
}

/// Monte-Carlo density probe. Refuses fields that fail nilpotency,
/// constant brackets, or full bracket rank at the initial point.
pub fn density_report(fields: &[PolyVectorField], cfg: &DensityConfig) -> Result<DensityReport> {
    if fields.is_empty() {
        return domain("no vector fields given");
    }
    let m = fields[0].dim();
    if cfg.initial.len() != m {
        return domain(format!("initial condition has dimension {}, fields live in {m}", cfg.initial.len()));
    }
    cfg.functional.weights(m)?;
    let hyp = check_hypotheses(fields, &cfg.initial, 6)?;
    let Some(order) = hyp.nilpotent_order else {
        return Err(Error::Precondition("hypothesis failed: nilpotency (no order ≤ 6)".into()));
    };
    if !hyp.constant_brackets {
        return Err(Error::Precondition("hypothesis failed: constant brackets".into()));
    }
    if hyp.hormander_rank < m {
        return Err(Error::Precondition(format!(
            "hypothesis failed: Hörmander rank {} < {m}",
            hyp.hormander_rank
        )));
    }
    let sys = StrichartzSystem::new(fields, order)?;
    let hurst = HurstParam::new(cfg.hurst)?;
    let sampler = FbmSampler::new(hurst, TimeGrid::new(cfg.t, cfg.n_points)?)?;
    let n = cfg.n_paths as u64;
    let samples = solver_samples(&sys, &sampler, cfg, 0..n)?;
    let est = kde(&samples, cfg.bandwidth, cfg.grid_points)?;
    let half = &samples[..samples.len() / 2];
    let half_est = kde_on(half, Some(est.bandwidth), est.grid[0], *est.grid.last().unwrap(), cfg.grid_points)?;
    let (f1, f2) = est.smoothness();
    let (h1, h2) = half_est.smoothness();
    let (mean, sd) = mean_sd(&samples);
    let (skew, skew_se) = skewness_with_stderr(&samples, 100);
    let ks_explicit = if fields == yamato_fields().as_slice() {
        // Independent streams: indices n..2n.
        let explicit = yamato_explicit_samples(&sampler, cfg, n..2 * n)?;
        Some(ks_distance(&samples, &explicit))
    } else {
        None
    };
    Ok(DensityReport {
        config: cfg.clone(),
        hypotheses: hyp,
        mean,
        variance: sd * sd,
        skewness: skew,
        skewness_stderr: skew_se,
        modes: est.modes(),
        mass: est.integral(),
        smoothness: SmoothnessProxy {
            first_diff_max: f1,
            second_diff_max: f2,
            first_diff_half: h1,
            second_diff_half: h2,
            first_change: (f1 / h1 - 1.0).abs(),
            second_change: (f2 / h2 - 1.0).abs(),
        },
        kde: est,
        ks_explicit,
        samples,
    })
}

/// Standard normal density.
pub fn normal_pdf(x: f64, mean: f64, sd: f64) -> f64 {
    let z = (x - mean) / sd;
    (-0.5 * z * z).exp() / (sd * (2.0 * std::f64::consts::PI).sqrt())
}
