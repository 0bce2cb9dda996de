//! Acceptance suite: one numbered check per criterion, printed as a
//! PASS/FAIL line. Exits non-zero when any check fails.

#![allow(clippy::needless_range_loop)]

use std::process::Command;
use std::sync::Arc;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use roughflow::cli::{sewing_trials, Manifest};
use roughflow::controlled::{rde_solve, RoughDriver};
use roughflow::densitylab::{
    density_report, normal_pdf, yamato_explicit, yamato_fields, DensityConfig, Functional, YAMATO_FIELD_FILE,
};
use roughflow::fbm::{FbmSampler, HurstParam, TimeGrid};
use roughflow::flows::{jacobian_between, jacobian_path, malliavin_derivative, malliavin_finite_difference, malliavin_via_jacobian};
use roughflow::increments::sewing_constant;
use roughflow::liefields::{bracket, constant_brackets, hormander_rank, is_nilpotent, PolyVectorField};
use roughflow::norris::{alpha, hermite_moments, hermite_samples, ls_slope, norris_dichotomy_mc, s_k, summarize, NorrisSetup};
use roughflow::signature::{levy_area, path_signature_idx};
use roughflow::strichartz::{StrichartzSystem, DEFAULT_FLOW_STEPS};

type Check = Result<String, String>;

fn h(v: f64) -> HurstParam {
    HurstParam::new(v).unwrap()
}

fn verdict(pass: bool, detail: String) -> Check {
    if pass {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn fbm_law() -> Check {
    let start = Instant::now();
    let grid = TimeGrid::new(1.0, 257).unwrap();
    let mut detail = Vec::new();
    let mut pass = true;
    for (k, hv) in [0.35, 0.40, 0.45].into_iter().enumerate() {
        let paths = FbmSampler::new(h(hv), grid.clone()).unwrap().sample(1, 10_000, 100 + k as u64).unwrap();
        let ends: Vec<f64> = paths.iter().map(|p| p.value(256, 0)).collect();
        let n = ends.len() as f64;
        let var = ends.iter().map(|x| x * x).sum::<f64>() / n;
        let m4 = ends.iter().map(|x| x.powi(4)).sum::<f64>() / n;
        let se = ((m4 - var * var) / n).sqrt();
        let z = (var - 1.0) / se;
        pass &= z.abs() <= 3.0;
        detail.push(format!("H={hv}: Var={var:.4} ({z:+.2}σ)"));
    }
    let secs = start.elapsed().as_secs_f64();
    pass &= secs < 30.0;
    verdict(pass, format!("{}; {secs:.1}s", detail.join(", ")))
}

fn chen_identity() -> Check {
    let grid = TimeGrid::new(1.0, 65).unwrap();
    let paths = FbmSampler::new(h(0.4), grid).unwrap().sample(2, 20, 7).unwrap();
    let worst = paths
        .par_iter()
        .map(|p| {
            let n = p.len();
            let sigs: Vec<Vec<_>> = (0..n)
                .map(|s| (0..n).map(|t| (t > s).then(|| path_signature_idx(p, s, t, 2).unwrap())).collect())
                .collect();
            let mut worst: f64 = 0.0;
            for s in 0..n {
                for u in s + 1..n {
                    for t in u + 1..n {
                        let (st, su, ut) = (
                            sigs[s][t].as_ref().unwrap(),
                            sigs[s][u].as_ref().unwrap(),
                            sigs[u][t].as_ref().unwrap(),
                        );
                        let (a, b) = (su.increment(), ut.increment());
                        for i in 0..2 {
                            for j in 0..2 {
                                let k = i * 2 + j;
                                let db2 = st.level_values(2)[k] - su.level_values(2)[k] - ut.level_values(2)[k];
                                worst = worst.max((db2 - a[i] * b[j]).abs());
                            }
                        }
                    }
                }
            }
            worst
        })
        .reduce(|| 0.0, f64::max);
    verdict(worst <= 1e-13, format!("max |δB² - B¹⊗B¹| = {worst:.2e} over 20 paths"))
}

fn sewing_bound() -> Check {
    let mu = 1.2;
    let sampler = FbmSampler::new(h(0.7), TimeGrid::new(1.0, 33).unwrap()).unwrap();
    let checks = sewing_trials(&sampler, mu, 100, 11).unwrap();
    let bound = sewing_constant(mu) + 0.05;
    let ratio = checks.iter().map(|c| c.ratio).fold(0.0, f64::max);
    let defect = checks.iter().map(|c| c.inverse_defect).fold(0.0, f64::max);
    verdict(
        ratio <= bound && defect <= 1e-10 && checks.len() == 100,
        format!("max ratio {ratio:.3} ≤ {bound:.3}, max |δΛh - h| = {defect:.1e}"),
    )
}

fn levy_area_exponent() -> Check {
    let hv = 0.4;
    let n = 1025;
    let grid = TimeGrid::new(0.5, n).unwrap();
    let paths = FbmSampler::new(h(hv), grid).unwrap().sample(2, 10_000, 21).unwrap();
    let ts: Vec<f64> = (1..=6).map(|k| 2f64.powi(-k)).collect();
    let logs: Vec<f64> = ts
        .iter()
        .map(|&t| {
            let mean = paths
                .par_iter()
                .map(|p| levy_area(p, 0.0, t).unwrap()[(0, 1)].abs())
                .sum::<f64>()
                / paths.len() as f64;
            mean.ln()
        })
        .collect();
    let lt: Vec<f64> = ts.iter().map(|t| t.ln()).collect();
    let slope = ls_slope(&lt, &logs).unwrap();
    verdict(
        (slope - 2.0 * hv).abs() <= 0.1,
        format!("slope {slope:.3} vs 2H = {:.2}", 2.0 * hv),
    )
}

fn strichartz_exactness() -> Check {
    let fields = yamato_fields();
    let sys = StrichartzSystem::new(&fields, 3).unwrap();
    let grid = TimeGrid::new(1.0, 1025).unwrap();
    let sampler = FbmSampler::new(h(0.4), grid.clone()).unwrap();
    let (exact, scheme) = (0..100u64)
        .into_par_iter()
        .map(|i| {
            let p = sampler.sample_one(3, 31, i).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(i);
            let a: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let s = sys.solve(&p, &a, 1.0, DEFAULT_FLOW_STEPS).unwrap();
            let e = yamato_explicit(&p, &a, 1.0).unwrap();
            let (y, _) = rde_solve(&fields, &a, &Arc::new(RoughDriver::new(p)), &grid).unwrap();
            let r = y.row(y.len() - 1);
            let d1 = (0..3).map(|k| (s[k] - e[k]).abs()).fold(0.0, f64::max);
            let d2 = (0..3).map(|k| (r[k] - e[k]).abs().max((r[k] - s[k]).abs())).fold(0.0, f64::max);
            (d1, d2)
        })
        .reduce(|| (0.0, 0.0), |a, b| (a.0.max(b.0), a.1.max(b.1)));
    verdict(
        exact <= 1e-10 && scheme <= 1e-4,
        format!("strichartz vs explicit {exact:.1e}, rde_solve at 2^-10 {scheme:.1e} (100 drivers)"),
    )
}

fn random_field(rng: &mut ChaCha8Rng) -> PolyVectorField {
    let comp = |rng: &mut ChaCha8Rng| {
        let mut s = String::from("0");
        for _ in 0..rng.gen_range(0..4) {
            let c: i32 = rng.gen_range(-3..=3);
            let a: u32 = rng.gen_range(0..=3);
            let b: u32 = rng.gen_range(0..=3 - a);
            let c3: u32 = rng.gen_range(0..=3 - a - b);
            s.push_str(&format!(" + ({c})*x1^{a}*x2^{b}*x3^{c3}"));
        }
        s
    };
    let comps: Vec<String> = (0..3).map(|_| comp(rng)).collect();
    let refs: Vec<&str> = comps.iter().map(String::as_str).collect();
    PolyVectorField::parse(&refs).unwrap()
}

fn lie_algebra() -> Check {
    let f = yamato_fields();
    let nil = is_nilpotent(&f, 3).unwrap().0;
    let constant = constant_brackets(&f, 3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let full = (0..10).all(|_| {
        let x: Vec<f64> = (0..3).map(|_| rng.gen_range(-5.0..5.0)).collect();
        hormander_rank(&f, &x, 2).unwrap() == 3
    });
    let mut algebra = true;
    for _ in 0..50 {
        let (x, y, z) = (random_field(&mut rng), random_field(&mut rng), random_field(&mut rng));
        let anti = bracket(&x, &y).unwrap().add(&bracket(&y, &x).unwrap()).unwrap().is_zero();
        let jacobi = bracket(&x, &bracket(&y, &z).unwrap())
            .unwrap()
            .add(&bracket(&y, &bracket(&z, &x).unwrap()).unwrap())
            .unwrap()
            .add(&bracket(&z, &bracket(&x, &y).unwrap()).unwrap())
            .unwrap()
            .is_zero();
        algebra &= anti && jacobi;
    }
    verdict(
        nil && constant && full && algebra,
        format!("nilpotent(3)={nil}, constant brackets={constant}, rank 3 at 10 points={full}, 50 antisymmetry/Jacobi triples={algebra}"),
    )
}

/// `E[Π x_i]` for a centred Gaussian vector by summing over all pairings.
fn isserlis(idx: &[usize], cov: &dyn Fn(usize, usize) -> f64) -> f64 {
    if idx.is_empty() {
        return 1.0;
    }
    let first = idx[0];
    let rest = &idx[1..];
    (0..rest.len())
        .map(|k| {
            let others: Vec<usize> = rest.iter().enumerate().filter(|(j, _)| *j != k).map(|(_, v)| *v).collect();
            cov(first, rest[k]) * isserlis(&others, cov)
        })
        .sum()
}

fn hermite_statistics() -> Check {
    let hp = h(0.4);
    let k = 3;
    let cov = |a: usize, b: usize| alpha(a.abs_diff(b), hp);
    let mean: f64 = (0..k).map(|n| isserlis(&[n; 4], &cov)).sum();
    let mut second = 0.0;
    for n in 0..k {
        for m in 0..k {
            second += isserlis(&[n, n, n, n, m, m, m, m], &cov);
        }
    }
    let oracle_var = second - mean * mean;
    let closed = hermite_moments(k, hp, 1.0).unwrap();
    let oracle_ok = (closed.mean - mean).abs() <= 1e-10 && (closed.variance - oracle_var).abs() <= 1e-10;

    let k8 = hermite_moments(8, hp, 1.0).unwrap();
    let mc = summarize(&hermite_samples(8, hp, 100_000, 51).unwrap());
    let mean_ok = (mc.mean - 24.0).abs() <= 3.0 * mc.mean_stderr;
    let var_ok = (mc.variance / k8.variance - 1.0).abs() <= 0.05;

    let ratio = (s_k(256, hp) / 256.0) / (s_k(64, hp) / 64.0);
    let linear_ok = (ratio - 1.0).abs() <= 0.1;
    verdict(
        oracle_ok && mean_ok && var_ok && linear_ok,
        format!(
            "K=3 closed-form vs Isserlis Δvar={:.1e}; K=8 MC mean {:.3}±{:.3} vs 24, var {:.1} vs {:.1}; (S_256/256)/(S_64/64)={ratio:.4}",
            (closed.variance - oracle_var).abs(),
            mc.mean,
            mc.mean_stderr,
            mc.variance,
            k8.variance
        ),
    )
}

fn jacobian_contracts() -> Check {
    // A non-linear nilpotent pair next to the Yamato system.
    let curved = vec![
        PolyVectorField::parse(&["1", "0", "0"]).unwrap(),
        PolyVectorField::parse(&["0", "x1^2", "x1"]).unwrap(),
    ];
    let systems = [(yamato_fields(), 3usize), (curved, 4)];
    let grid = TimeGrid::new(1.0, 33).unwrap();
    let sampler = FbmSampler::new(h(0.4), grid).unwrap();
    let (mut inv, mut fd, mut flow) = (0.0f64, 0.0f64, 0.0f64);
    for (fields, order) in &systems {
        let sys = StrichartzSystem::new(fields, *order).unwrap();
        for i in 0..10u64 {
            let p = sampler.sample_one(fields.len(), 61, i).unwrap();
            let a = [0.3, -0.2, 0.5];
            let jp = jacobian_path(&sys, &p, &a, 16).unwrap();
            inv = inv.max(jp.inverse_defect());
            let last = p.len() - 1;
            let eps = 1e-5;
            for c in 0..3 {
                let bump = |e: f64| {
                    let mut b = a;
                    b[c] += e;
                    jacobian_path(&sys, &p, &b, 16).unwrap().y.row(last).to_vec()
                };
                let (up, down) = (bump(eps), bump(-eps));
                for r in 0..3 {
                    fd = fd.max(((up[r] - down[r]) / (2.0 * eps) - jp.j[last][(r, c)]).abs());
                }
            }
            let u = 1 + (i as usize * 7) % (last - 1);
            let y_u = jp.y.row(u).to_vec();
            let tail = jacobian_between(&sys, &p, &y_u, u, last, 16).unwrap();
            flow = flow.max((&jp.j[last] - &tail.j * &jp.j[u]).abs().max());
        }
    }
    verdict(
        inv <= 1e-9 && fd <= 1e-6 && flow <= 1e-8,
        format!("|JJ⁻¹-I| {inv:.1e}, finite differences {fd:.1e}, flow property {flow:.1e}"),
    )
}

fn malliavin_cross_check() -> Check {
    let fields = yamato_fields();
    let sys = StrichartzSystem::new(&fields, 3).unwrap();
    let grid = TimeGrid::new(1.0, 65).unwrap();
    let sampler = FbmSampler::new(h(0.4), grid).unwrap();
    let a = [0.4, -0.1, 0.2];
    let (routes, fd) = (0..50u64)
        .into_par_iter()
        .map(|i| {
            let p = sampler.sample_one(3, 71, i).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(1000 + i);
            let mut worst = (0.0f64, 0.0f64);
            // 4 evaluation times × 5 derivative times = 20 pairs.
            for _ in 0..4 {
                let t = rng.gen_range(8..=64usize);
                let tt = p.grid().time(t);
                let ode = malliavin_derivative(&sys, &p, &a, tt, 1).unwrap();
                let jac = malliavin_via_jacobian(&sys, &p, &a, tt, 1).unwrap();
                for _ in 0..5 {
                    let u = rng.gen_range(0..t);
                    let (x, y) = (ode.at(u), jac.at(u));
                    worst.0 = worst.0.max((&x - &y).abs().max());
                    let j = rng.gen_range(0..3);
                    let f = malliavin_finite_difference(&sys, &p, &a, u, t, j, 1e-4, 1).unwrap();
                    for r in 0..3 {
                        worst.1 = worst.1.max((f[r] - x[(r, j)]).abs());
                    }
                }
            }
            worst
        })
        .reduce(|| (0.0, 0.0), |a, b| (a.0.max(b.0), a.1.max(b.1)));
    verdict(
        routes <= 1e-6 && fd <= 1e-6,
        format!("ODE vs J-flow {routes:.1e}, vs jump finite differences {fd:.1e} (50 paths × 20 pairs)"),
    )
}

fn norris_probe() -> Check {
    let setup = NorrisSetup {
        hurst: 0.4,
        horizon: 2f64.powi(-8),
        n_points: 65,
        gamma: 0.37,
        alpha: 0.34,
        q: 0.5,
        eps: vec![0.4, 0.2, 0.1, 0.05],
        n_paths: 4000,
        seed: 81,
    };
    let u = PolyVectorField::parse(&["0", "0", "x1^2"]).unwrap();
    let table = norris_dichotomy_mc(&yamato_fields(), 3, &u, &[0.0, 0.0, 1.0], &[0.0; 3], &setup).unwrap();
    let counts: Vec<String> = table.rows.iter().map(|r| format!("{}:{}", r.eps, r.count)).collect();
    let slope = table.fitted_exponent.unwrap_or(f64::NAN);
    verdict(
        table.non_increasing && slope > 0.0,
        format!("counts {} of {}, fitted exponent {slope:.2}", counts.join(" "), setup.n_paths),
    )
}

fn density_probe() -> Check {
    let fields = yamato_fields();
    let c1 = density_report(&fields, &DensityConfig::yamato(Functional::Component(1), 100_000, 91));
    let c3 = density_report(&fields, &DensityConfig::yamato(Functional::Component(3), 100_000, 92));
    let (c1, c3) = match (c1, c3) {
        (Ok(a), Ok(b)) => (a, b),
        (a, b) => return Err(format!("report failed: {:?} / {:?}", a.err(), b.err())),
    };
    let sd = c1.config.t.powf(c1.config.hurst);
    let sup = c1.kde.sup_error(|x| normal_pdf(x, 0.0, sd));
    let ks1 = c1.ks_explicit.unwrap();
    let ks3 = c3.ks_explicit.unwrap();
    let skew_ok = c3.skewness.abs() <= 3.0 * c3.skewness_stderr;
    verdict(
        sup <= 0.02 && ks1 <= 0.01 && ks3 <= 0.01 && skew_ok && c3.modes == 1,
        format!(
            "comp1 sup-error {sup:.4}, KS {ks1:.4}; comp3 skew {:.3}±{:.3}, KS {ks3:.4}, modes {}, mass {:.3}, FD-stat change {:.0}%/{:.0}%",
            c3.skewness,
            c3.skewness_stderr,
            c3.modes,
            c3.mass,
            100.0 * c3.smoothness.first_change,
            100.0 * c3.smoothness.second_change
        ),
    )
}

fn cli_determinism() -> Check {
    let tmp = tempfile::tempdir().unwrap();
    let vf = tmp.path().join("yamato.vf");
    std::fs::write(&vf, YAMATO_FIELD_FILE).unwrap();
    let vf = vf.to_str().unwrap().to_string();
    let runs: Vec<Vec<&str>> = vec![
        vec!["sample-fbm", "--paths", "4", "--mesh-exp", "6", "--seed", "3"],
        vec!["signature", "--mesh-exp", "6", "--level", "3", "--seed", "3"],
        vec!["sewing-test", "--elements", "5", "--n-points", "17", "--seed", "3"],
        vec!["solve", "--fields", &vf, "--initial", "0.1,0.2,0.3", "--mesh-exp", "7", "--paths", "2", "--seed", "3"],
        vec!["check-fields", &vf, "--nilpotent", "3", "--hormander", "0,0,0", "--constant-brackets"],
        vec!["strichartz", "--fields", &vf, "--initial", "0,0,0", "--mesh-exp", "6", "--paths", "3", "--seed", "3"],
        vec!["jacobian", "--fields", &vf, "--initial", "1,2,3", "--mesh-exp", "5", "--steps", "2", "--seed", "3"],
        vec!["malliavin", "--fields", &vf, "--initial", "1,2,3", "--mesh-exp", "5", "--steps", "1", "--seed", "3"],
        vec!["norris-stats", "--samples", "2000", "--paths", "200", "--seed", "3"],
        vec![
            "norris-mc", "--fields", &vf, "--u-field", "0,0,x1^2", "--eta", "0,0,1", "--initial", "0,0,0",
            "--horizon", "0.00390625", "--n-points", "33", "--paths", "300", "--seed", "3",
        ],
        vec!["density", "--fields", &vf, "--component", "3", "--paths", "2000", "--n-points", "33", "--seed", "3"],
    ];
    let mut mismatched = Vec::new();
    for args in &runs {
        let mut manifests = Vec::new();
        for rep in ["first", "second"] {
            let out = tmp.path().join(rep);
            let status = Command::new(env!("CARGO_BIN_EXE_roughflow"))
                .args(["--out", out.to_str().unwrap()])
                .args(args)
                .output()
                .unwrap();
            if !status.status.success() {
                return Err(format!("{} failed: {}", args[0], String::from_utf8_lossy(&status.stderr)));
            }
            let dir = std::fs::read_dir(&out)
                .unwrap()
                .map(|e| e.unwrap().path())
                .find(|p| p.file_name().unwrap().to_str().unwrap().starts_with(args[0]))
                .unwrap();
            let m: Manifest = serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap();
            manifests.push(m);
        }
        if manifests[0] != manifests[1] {
            mismatched.push(args[0]);
        }
    }
    verdict(
        mismatched.is_empty(),
        format!("{} experiments re-run, mismatched: {:?}", runs.len(), mismatched),
    )
}

type Criterion = (&'static str, fn() -> Check);

fn main() {
    let criteria: [Criterion; 12] = [
        ("fBm law", fbm_law),
        ("Chen identity", chen_identity),
        ("sewing bound", sewing_bound),
        ("Lévy-area moment exponent", levy_area_exponent),
        ("Strichartz exactness", strichartz_exactness),
        ("Lie algebra checks", lie_algebra),
        ("Hermite statistics", hermite_statistics),
        ("Jacobian contracts", jacobian_contracts),
        ("Malliavin cross-check", malliavin_cross_check),
        ("Norris dichotomy probe", norris_probe),
        ("density probe", density_probe),
        ("CLI determinism", cli_determinism),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let result = std::panic::catch_unwind(check).unwrap_or_else(|_| Err("panicked".into()));
        let secs = start.elapsed().as_secs_f64();
        match result {
            Ok(d) => println!("[PASS] {:>2} {name}: {d} [{secs:.1}s]", i + 1),
            Err(d) => {
                failed += 1;
                println!("[FAIL] {:>2} {name}: {d} [{secs:.1}s]", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
