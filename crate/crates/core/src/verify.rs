//! Monte Carlo checks of the limit theorems at desk scale: variance of
//! Hermite partial sums, the reduction principle and weak convergence of the
//! normalized sup-statistic.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::hermite::{c_m, coefficient_table, hermite_all, scaling, CoeffOptions};
use crate::kernel::Kernel;
use crate::limit_law::{ks_distance, LimitEnsemble, ProcessDescriptor};
use crate::lrd_sim::{asymptotic_l, subordinate, CirculantSampler, LrdParams};
use crate::par::{try_map_indexed, Execution};
use crate::rng;
use crate::special::factorial;
use crate::ustat::{changepoint_statistic, normalize, ustat_with, Normalization};

/// Highest total degree searched for the Hermite rank.
pub const RANK_SEARCH_DEGREE: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub n: usize,
    pub stats: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub name: String,
    pub params: BTreeMap<String, Value>,
    pub rows: Vec<ReportRow>,
    pub passed: bool,
    pub tolerance: String,
    pub seeds: Vec<u64>,
    pub wall_clock_secs: f64,
}

impl ExperimentReport {
    pub fn row(&self, n: usize) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.n == n)
    }

    pub fn stat(&self, n: usize, key: &str) -> Option<f64> {
        self.row(n).and_then(|r| r.stats.get(key).copied())
    }

    /// Plain-text summary, one line per n.
    pub fn text_summary(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{}: {}", self.name, if self.passed { "PASS" } else { "FAIL" });
        let _ = writeln!(out, "  tolerance: {}", self.tolerance);
        for (k, v) in &self.params {
            let _ = writeln!(out, "  {k} = {v}");
        }
        for row in &self.rows {
            let stats: Vec<String> = row.stats.iter().map(|(k, v)| format!("{k}={v:.6e}")).collect();
            let _ = writeln!(out, "  n={}: {}", row.n, stats.join(" "));
        }
        let _ = writeln!(out, "  seeds: {:?}", self.seeds);
        out
    }
}

/// Σ_{i,j≤n} k!·γ(|i−j|)^k, the exact variance of Σ_{i≤n} H_k(ξ_i).
pub fn exact_hermite_sum_variance(k: usize, params: &LrdParams, n: usize) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let mut total = n as f64;
    let mut c = 0.0;
    for h in 1..n {
        let term = 2.0 * (n - h) as f64 * params.covariance(h).powi(k as i32);
        let t = total + term;
        c += if total.abs() >= term.abs() {
            (total - t) + term
        } else {
            (term - t) + total
        };
        total = t;
    }
    factorial(k) * (total + c)
}

/// Σ_{h ∈ ℤ} γ(h)^k for kD > 1: direct sum plus a power-law tail integral.
pub fn long_run_sum(k: usize, params: &LrdParams) -> f64 {
    const DIRECT: usize = 1 << 20;
    let kf = k as i32;
    let mut total = 1.0;
    for h in 1..=DIRECT {
        total += 2.0 * params.covariance(h).powi(kf);
    }
    let dk = params.d() * k as f64;
    let l = asymptotic_l(params, DIRECT);
    total + 2.0 * l.powi(kf) * (DIRECT as f64 + 0.5).powf(1.0 - dk) / (dk - 1.0)
}

/// Asymptotic variance of Σ_{i≤n} H_k(ξ_i) in the branch selected by kD.
pub fn asymptotic_variance(k: usize, params: &LrdParams, n: usize) -> Option<(&'static str, f64)> {
    let dk = params.d() * k as f64;
    if dk < 1.0 {
        let l = asymptotic_l(params, n);
        Some(("lrd", c_m(params.d(), k) * (n as f64).powf(2.0 - dk) * l.powi(k as i32)))
    } else if dk > 1.0 {
        Some(("srd", factorial(k) * long_run_sum(k, params) * n as f64))
    } else {
        None
    }
}

fn check_n_list(n_list: &[usize], min: usize) -> Result<()> {
    if n_list.is_empty() {
        return Err(Error::Parameter("n-list is empty".into()));
    }
    if let Some(n) = n_list.iter().find(|&&n| n < min) {
        return Err(Error::Parameter(format!("sample size {n} is below the minimum {min}")));
    }
    Ok(())
}

fn base_params(params: &LrdParams, n_list: &[usize], reps: usize) -> BTreeMap<String, Value> {
    let mut p = BTreeMap::new();
    p.insert("D".into(), json!(params.d()));
    p.insert("family".into(), json!(params.family().to_string()));
    p.insert("n".into(), json!(n_list));
    p.insert("reps".into(), json!(reps));
    p
}

fn mean_and_se(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    (mean, (var / n).sqrt())
}

/// Exact, asymptotic and (for reps > 0) Monte Carlo variance of Σ H_k(ξ_i).
///
/// `reps = 0` skips the Monte Carlo part; otherwise at least 100 are needed.
/// Passes when every Monte Carlo estimate is within 4 standard errors of the
/// exact value and, at the largest n, the exact variance is within 10% of the
/// LRD asymptote (kD < 1) or Var/n moved by less than 5% over the last
/// doubling step (kD > 1).
pub fn check_variance(
    k: usize,
    params: &LrdParams,
    n_list: &[usize],
    reps: usize,
    seed: u64,
) -> Result<ExperimentReport> {
    check_variance_with(k, params, n_list, reps, seed, Execution::default())
}

pub fn check_variance_with(
    k: usize,
    params: &LrdParams,
    n_list: &[usize],
    reps: usize,
    seed: u64,
    exec: Execution,
) -> Result<ExperimentReport> {
    let start = Instant::now();
    if k < 1 {
        return Err(Error::Parameter("Hermite degree k must be at least 1".into()));
    }
    if reps != 0 && reps < 100 {
        return Err(Error::Parameter(format!(
            "variance check needs reps = 0 or reps ≥ 100, got {reps}"
        )));
    }
    check_n_list(n_list, 1)?;
    let mut rows = Vec::with_capacity(n_list.len());
    let mut passed = true;
    let mut branch = "boundary";
    for (idx, &n) in n_list.iter().enumerate() {
        let mut stats = BTreeMap::new();
        let exact = exact_hermite_sum_variance(k, params, n);
        stats.insert("exact".into(), exact);
        stats.insert("exact_over_n".into(), exact / n as f64);
        if let Some((b, asym)) = asymptotic_variance(k, params, n) {
            branch = b;
            stats.insert("asymptote".into(), asym);
            stats.insert("ratio".into(), exact / asym);
        }
        if reps > 0 {
            let sampler = if n >= 2 {
                Some(CirculantSampler::new(params, n)?)
            } else {
                None
            };
            let sums = try_map_indexed(reps, exec, |r| -> Result<f64> {
                let mut g = rng::replication(seed, ((idx as u64) << 32) | r as u64);
                let xs = match &sampler {
                    Some(s) => s.sample(&mut g),
                    None => {
                        use rand::Rng as _;
                        vec![g.sample::<f64, _>(rand_distr::StandardNormal)]
                    }
                };
                Ok(xs.iter().map(|&x| hermite_all(k, x)[k]).sum())
            })?;
            let m = reps as f64;
            let mean = sums.iter().sum::<f64>() / m;
            let centered: Vec<f64> = sums.iter().map(|s| (s - mean).powi(2)).collect();
            let var = centered.iter().sum::<f64>() / (m - 1.0);
            let m4 = centered.iter().map(|c| c * c).sum::<f64>() / m;
            let se = ((m4 - var * var).max(0.0) / m).sqrt();
            let z = (var - exact).abs() / se.max(f64::MIN_POSITIVE);
            stats.insert("mc_variance".into(), var);
            stats.insert("mc_se".into(), se);
            stats.insert("mc_z".into(), z);
            if z > 4.0 {
                passed = false;
            }
        }
        rows.push(ReportRow { n, stats });
    }
    let last = rows.last().expect("non-empty n-list");
    match branch {
        "lrd" => {
            let r = last.stats["ratio"];
            passed &= (0.9..=1.1).contains(&r);
        }
        "srd" if rows.len() >= 2 => {
            let prev = &rows[rows.len() - 2];
            let slope_ratio = last.stats["exact_over_n"] / prev.stats["exact_over_n"];
            passed &= (slope_ratio - 1.0).abs() <= 0.05;
        }
        _ => {}
    }
    let mut p = base_params(params, n_list, reps);
    p.insert("k".into(), json!(k));
    p.insert("branch".into(), json!(branch));
    Ok(ExperimentReport {
        name: "variance".into(),
        params: p,
        rows,
        passed,
        tolerance: "MC within 4 se of exact; LRD ratio in [0.9, 1.1] or SRD slope drift ≤ 5% at the largest n".into(),
        seeds: vec![seed],
        wall_clock_secs: start.elapsed().as_secs_f64(),
    })
}

/// Degree-m coefficients of the kernel and its centering a_00.
pub struct Projection {
    pub m: usize,
    pub a00: f64,
    pub diagonal: Vec<(usize, usize, f64)>,
}

/// Hermite rank and rank-m diagonal of `kernel`, searched up to total degree
/// [`RANK_SEARCH_DEGREE`].
pub fn projection(kernel: &Kernel, opts: &CoeffOptions) -> Result<Projection> {
    let table = coefficient_table(kernel, RANK_SEARCH_DEGREE, opts)?;
    let m = table.rank.ok_or(Error::RankNotFound(RANK_SEARCH_DEGREE))?;
    let a00 = table.get(0, 0).unwrap_or(0.0);
    let diagonal = table
        .diagonal(m)
        .into_iter()
        .filter(|&(_, _, a)| a.abs() > table.tol)
        .collect();
    Ok(Projection { m, a00, diagonal })
}

/// max_k |U(k) − a_00·k(n−k) − Σ_{k'+l=m} a/(k'! l!)·P_{k'}(k)(P_l(n) − P_l(k))|
/// with P_j(k) = Σ_{i≤k} H_j(ξ_i).
pub fn reduction_discrepancy(xi: &[f64], kernel: &Kernel, proj: &Projection, exec: Execution) -> Result<f64> {
    let n = xi.len();
    let u = ustat_with(xi, kernel, exec)?;
    let m = proj.m;
    let mut prefix = vec![vec![0.0; n + 1]; m + 1];
    for (i, &x) in xi.iter().enumerate() {
        let h = hermite_all(m, x);
        for j in 0..=m {
            prefix[j][i + 1] = prefix[j][i] + h[j];
        }
    }
    let terms: Vec<(usize, usize, f64)> = proj
        .diagonal
        .iter()
        .map(|&(k, l, a)| (k, l, a / (factorial(k) * factorial(l))))
        .collect();
    let mut worst: f64 = 0.0;
    for split in 1..n {
        let kf = split as f64;
        let mut p = proj.a00 * kf * (n as f64 - kf);
        for &(k, l, w) in &terms {
            p += w * prefix[k][split] * (prefix[l][n] - prefix[l][split]);
        }
        worst = worst.max((u.raw[split - 1] - p).abs());
    }
    Ok(worst)
}

/// E[sup_λ |U_n(λ) − rank-m projection| / (d'_n n)] per n.
pub fn check_reduction(
    kernel: &Kernel,
    params: &LrdParams,
    n_list: &[usize],
    reps: usize,
    seed: u64,
) -> Result<ExperimentReport> {
    check_reduction_with(
        kernel,
        params,
        n_list,
        reps,
        seed,
        &CoeffOptions::default(),
        Execution::default(),
    )
}

pub fn check_reduction_with(
    kernel: &Kernel,
    params: &LrdParams,
    n_list: &[usize],
    reps: usize,
    seed: u64,
    opts: &CoeffOptions,
    exec: Execution,
) -> Result<ExperimentReport> {
    let start = Instant::now();
    if reps == 0 {
        return Err(Error::Parameter("reduction check needs reps ≥ 1".into()));
    }
    check_n_list(n_list, 2)?;
    let proj = projection(kernel, opts)?;
    let dm = params.d() * proj.m as f64;
    if dm >= 1.0 {
        return Err(Error::Regime(dm));
    }
    let mut rows = Vec::with_capacity(n_list.len());
    for (idx, &n) in n_list.iter().enumerate() {
        let sampler = CirculantSampler::new(params, n)?;
        let sc = scaling(params.d(), proj.m, n, asymptotic_l(params, n))?;
        let divisor = sc.d_n_prime * n as f64;
        let values = try_map_indexed(reps, exec, |r| {
            let mut g = rng::replication(seed, ((idx as u64) << 32) | r as u64);
            let xi = sampler.sample(&mut g);
            reduction_discrepancy(&xi, kernel, &proj, Execution::Sequential).map(|v| v / divisor)
        })?;
        let (mean, se) = mean_and_se(&values);
        let mut stats = BTreeMap::new();
        stats.insert("mean_discrepancy".into(), mean);
        stats.insert("se".into(), se);
        stats.insert("max_discrepancy".into(), values.iter().cloned().fold(0.0, f64::max));
        rows.push(ReportRow { n, stats });
    }
    let first = rows.first().expect("non-empty").stats["mean_discrepancy"];
    let last = rows.last().expect("non-empty").stats["mean_discrepancy"];
    let mut p = base_params(params, n_list, reps);
    p.insert("kernel".into(), json!(kernel.name()));
    p.insert("m".into(), json!(proj.m));
    p.insert("a00".into(), json!(proj.a00));
    p.insert(
        "decay_ratio".into(),
        json!(if first > 0.0 { last / first } else { 0.0 }),
    );
    Ok(ExperimentReport {
        name: "reduction".into(),
        params: p,
        rows,
        passed: last <= first,
        tolerance: "mean discrepancy at the largest n does not exceed its value at the smallest n".into(),
        seeds: vec![seed],
        wall_clock_secs: start.elapsed().as_secs_f64(),
    })
}

/// Default KS threshold of the weak-convergence check.
pub const WEAK_KS_THRESHOLD: f64 = 0.1;

/// Normalized sup-statistics of `reps` simulated datasets, matching the
/// normalization of the limit functional in `limit`.
pub fn simulated_sup_statistics(
    kernel: &Kernel,
    params: &LrdParams,
    n: usize,
    reps: usize,
    limit: &LimitEnsemble,
    seed: u64,
    exec: Execution,
) -> Result<Vec<f64>> {
    let (lkernel, theorem, d, m, g) = match &limit.descriptor {
        ProcessDescriptor::Functional {
            kernel,
            theorem,
            d,
            m,
            subordinator,
            ..
        } => (kernel.as_str(), *theorem, *d, *m, subordinator.clone()),
        other => {
            return Err(Error::Parameter(format!(
                "limit ensemble is a bare process ({other:?}), not a limit functional"
            )))
        }
    };
    if lkernel != kernel.name() {
        return Err(Error::Parameter(format!(
            "limit ensemble belongs to kernel '{lkernel}', not '{}'",
            kernel.name()
        )));
    }
    if (d - params.d()).abs() > 1e-12 {
        return Err(Error::Parameter(format!(
            "limit ensemble has D = {d}, data model has D = {}",
            params.d()
        )));
    }
    let sampler = CirculantSampler::new(params, n)?;
    let sc = scaling(params.d(), m, n, asymptotic_l(params, n))?;
    let (mode, center) = if theorem == 1 {
        (Normalization::Thm1, kernel.mean_under_normal())
    } else {
        let g = g
            .clone()
            .ok_or_else(|| Error::Parameter("empirical-process limit without subordinator".into()))?;
        let gh = crate::quad::GaussHermite::new(crate::hermite::DEFAULT_QUAD_ORDER);
        let mean = gh.expect(|s| gh.expect(|t| kernel.eval(g.apply_clamped(s), g.apply_clamped(t))));
        (Normalization::Thm2, mean)
    };
    try_map_indexed(reps, exec, |r| {
        let mut rg = rng::replication(seed, r as u64);
        let xi = sampler.sample(&mut rg);
        let data = match &g {
            Some(g) if theorem == 2 => subordinate(&xi, g)?,
            _ => xi,
        };
        let path = ustat_with(&data, kernel, Execution::Sequential)?;
        let norm = normalize(&path, &sc, mode, center)?;
        Ok(changepoint_statistic(&norm).0)
    })
}

/// KS distance between simulated normalized sup-statistics and the sup of
/// the limit ensemble.
pub fn check_weak_convergence(
    kernel: &Kernel,
    params: &LrdParams,
    n: usize,
    reps: usize,
    limit: &LimitEnsemble,
    seed: u64,
) -> Result<ExperimentReport> {
    check_weak_convergence_with(kernel, params, n, reps, limit, seed, Execution::default())
}

pub fn check_weak_convergence_with(
    kernel: &Kernel,
    params: &LrdParams,
    n: usize,
    reps: usize,
    limit: &LimitEnsemble,
    seed: u64,
    exec: Execution,
) -> Result<ExperimentReport> {
    let start = Instant::now();
    if reps == 0 {
        return Err(Error::Parameter("weak-convergence check needs reps ≥ 1".into()));
    }
    let sample = simulated_sup_statistics(kernel, params, n, reps, limit, seed, exec)?;
    let reference = limit.sup_statistics();
    let ks = ks_distance(&sample, &reference);
    let (sm, _) = mean_and_se(&sample);
    let (lm, _) = mean_and_se(&reference);
    let mut stats = BTreeMap::new();
    stats.insert("ks".into(), ks);
    stats.insert("sample_size".into(), sample.len() as f64);
    stats.insert("limit_size".into(), reference.len() as f64);
    stats.insert("sample_mean_sup".into(), sm);
    stats.insert("limit_mean_sup".into(), lm);
    let mut p = base_params(params, &[n], reps);
    p.insert("kernel".into(), json!(kernel.name()));
    p.insert("limit".into(), serde_json::to_value(&limit.descriptor)?);
    Ok(ExperimentReport {
        name: "weak_convergence".into(),
        params: p,
        rows: vec![ReportRow { n, stats }],
        passed: ks <= WEAK_KS_THRESHOLD,
        tolerance: format!("two-sample KS distance ≤ {WEAK_KS_THRESHOLD}"),
        seeds: vec![seed, limit.seed],
        wall_clock_secs: start.elapsed().as_secs_f64(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lrd_sim::CovarianceFamily;

    #[test]
    fn exact_variance_examples() {
        let p = LrdParams::tweaked(0.5).unwrap();
        let v = exact_hermite_sum_variance(1, &p, 3);
        let want = 3.0 + 2.0 * (2.0 * 2f64.powf(-0.5) + 3f64.powf(-0.5));
        assert!((v - want).abs() < 1e-12);
        assert!((v - 6.98313).abs() < 1e-5);
        assert_eq!(exact_hermite_sum_variance(2, &p, 1), 2.0);
    }

    #[test]
    fn exact_variance_matches_double_sum() {
        let p = LrdParams::new(0.3, CovarianceFamily::Fgn).unwrap();
        let n: usize = 40;
        for k in 1..=3 {
            let mut brute = 0.0;
            for i in 0..n {
                for j in 0..n {
                    brute += factorial(k) * p.covariance(i.abs_diff(j)).powi(k as i32);
                }
            }
            assert!((exact_hermite_sum_variance(k, &p, n) - brute).abs() < 1e-9 * brute);
        }
    }

    #[test]
    fn variance_mc_agrees_with_exact() {
        let p = LrdParams::fgn(0.4).unwrap();
        let r = check_variance(2, &p, &[64, 256], 2000, 17).unwrap();
        for row in &r.rows {
            assert!(row.stats["mc_z"] < 4.0, "{row:?}");
        }
        assert!(check_variance(1, &p, &[8], 50, 1).is_err());
    }

    #[test]
    fn reduction_is_exact_for_hermite_combinations() {
        let k = Kernel::custom("h1x-h1y", |x, y| x - y);
        let p = LrdParams::fgn(0.4).unwrap();
        let r = check_reduction(&k, &p, &[50, 100], 3, 2).unwrap();
        for row in &r.rows {
            assert!(row.stats["max_discrepancy"] <= 1e-10, "{row:?}");
        }
        assert!(check_reduction(&k, &p, &[50], 0, 2).is_err());
    }

    #[test]
    fn weak_convergence_rejects_mismatched_limits() {
        let p = LrdParams::fgn(0.4).unwrap();
        let grid = crate::limit_law::uniform_grid(16);
        let fbm = crate::limit_law::simulate_fbm(0.8, &grid, 10, 1).unwrap();
        assert!(check_weak_convergence(&Kernel::cusum(), &p, 50, 5, &fbm, 1).is_err());
        let joint = crate::limit_law::JointHermiteEnsemble::from_fbm(fbm);
        let lim = crate::limit_law::limit_thm1(&[(1, 0, 1.0), (0, 1, -1.0)], 0.4, &joint, "cusum").unwrap();
        assert!(check_weak_convergence(&Kernel::wilcoxon(), &p, 50, 5, &lim, 1).is_err());
        let r = check_weak_convergence(&Kernel::cusum(), &p, 50, 5, &lim, 1).unwrap();
        assert!(r.stat(50, "ks").unwrap() <= 1.0);
    }

    #[test]
    fn reports_are_reproducible() {
        let p = LrdParams::fgn(0.3).unwrap();
        let a = check_reduction(&Kernel::gaussian_bump(), &p, &[40], 4, 9).unwrap();
        let b = check_reduction(&Kernel::gaussian_bump(), &p, &[40], 4, 9).unwrap();
        assert_eq!(a.rows, b.rows);
        assert!(a.text_summary().starts_with("reduction: "));
    }
}
