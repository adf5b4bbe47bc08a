//! Limit processes of the U-statistic process: fractional Brownian motion,
//! Hermite processes through the finite-N non-central approximation, the
//! two limit functionals, and critical values of their sup-statistics.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hermite::{c_m, hermite_all, scaling, ClassCoeffs, DEFAULT_QUAD_ORDER};
use crate::kernel::Kernel;
use crate::lrd_sim::{asymptotic_l, CirculantSampler, LrdParams, Subordinator};
use crate::par::{map_indexed, Execution};
use crate::quad::{integrate, GaussHermite};
use crate::rng;
use crate::special::{factorial, normal_pdf};

pub const DEFAULT_GRID_POINTS: usize = 256;
pub const DEFAULT_REPS: usize = 2000;
pub const DEFAULT_N_AUX: usize = 1 << 15;
pub const MIN_N_AUX: usize = 1 << 12;
pub const MIN_CRITICAL_REPS: usize = 100;
/// Environment variable naming the critical-value cache directory.
pub const CACHE_ENV: &str = "LRD_USTAT_CACHE";

/// {k/points : k = 0..=points}
pub fn uniform_grid(points: usize) -> Vec<f64> {
    let points = points.max(1);
    (0..=points).map(|k| k as f64 / points as f64).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "process", rename_all = "snake_case")]
pub enum ProcessDescriptor {
    Fbm {
        hurst: f64,
        resolution: usize,
    },
    HermiteApprox {
        m: usize,
        #[serde(rename = "D")]
        d: f64,
        n_aux: usize,
    },
    Functional {
        name: String,
        kernel: String,
        theorem: u8,
        #[serde(rename = "D")]
        d: f64,
        m: usize,
        components: BTreeMap<String, f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        subordinator: Option<Subordinator>,
        driver: Box<ProcessDescriptor>,
    },
}

impl ProcessDescriptor {
    pub fn kernel(&self) -> Option<&str> {
        match self {
            ProcessDescriptor::Functional { kernel, .. } => Some(kernel),
            _ => None,
        }
    }
}

/// R sample paths on a common λ-grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LimitEnsemble {
    pub grid: Vec<f64>,
    /// paths[r][g] = Z_r(grid[g])
    pub paths: Vec<Vec<f64>>,
    /// Z_r(1) for every replication.
    pub terminal: Vec<f64>,
    pub descriptor: ProcessDescriptor,
    pub seed: u64,
    pub reps: usize,
}

impl LimitEnsemble {
    /// sup_λ |Z(λ)| per replication.
    pub fn sup_statistics(&self) -> Vec<f64> {
        self.paths
            .iter()
            .map(|p| p.iter().fold(0.0_f64, |m, v| m.max(v.abs())))
            .collect()
    }

    /// Values at grid index `g` across replications.
    pub fn column(&self, g: usize) -> Vec<f64> {
        self.paths.iter().map(|p| p[g]).collect()
    }

    pub fn summary(&self, levels: &[f64]) -> Result<EnsembleSummary> {
        let sups = self.sup_statistics();
        let quantiles = levels
            .iter()
            .map(|&p| Ok((p, quantile_checked(&sups, p)?)))
            .collect::<Result<_>>()?;
        Ok(EnsembleSummary {
            descriptor: self.descriptor.clone(),
            grid: self.grid.clone(),
            reps: self.reps,
            seed: self.seed,
            quantiles,
        })
    }

    /// Long-format CSV `rep,lambda,value`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["rep", "lambda", "value"])?;
        for (r, path) in self.paths.iter().enumerate() {
            for (lambda, v) in self.grid.iter().zip(path) {
                w.write_record([r.to_string(), lambda.to_string(), v.to_string()])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// JSON form of an ensemble: `{descriptor, grid, quantiles}` of its sup-statistic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSummary {
    pub descriptor: ProcessDescriptor,
    pub grid: Vec<f64>,
    pub reps: usize,
    pub seed: u64,
    pub quantiles: Vec<(f64, f64)>,
}

fn check_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::Parameter("λ-grid is empty".into()));
    }
    if grid.iter().any(|&l| !(0.0..=1.0).contains(&l)) || grid.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::Parameter("λ-grid must be sorted inside [0, 1]".into()));
    }
    Ok(())
}

/// Linear interpolation of the partial-sum path s[0..=N] (s[0] = 0) at t ∈ [0, N].
fn interpolate(s: &[f64], t: f64) -> f64 {
    let last = s.len() - 1;
    let i = (t.floor() as usize).min(last);
    if i == last {
        return s[last];
    }
    let frac = t - i as f64;
    s[i] + frac * (s[i + 1] - s[i])
}

/// fBm paths as normalized cumulative sums of exact fractional Gaussian noise.
///
/// H = 1/2 is accepted and gives Brownian motion.
pub fn simulate_fbm(hurst: f64, grid: &[f64], reps: usize, seed: u64) -> Result<LimitEnsemble> {
    simulate_fbm_with(
        hurst,
        grid,
        reps,
        seed,
        fbm_resolution(grid.len()),
        Execution::default(),
    )
}

/// Default fGn resolution: a power of two ≥ max(4096, 4·|grid|).
pub fn fbm_resolution(grid_len: usize) -> usize {
    (4 * grid_len).max(4096).next_power_of_two()
}

pub fn simulate_fbm_with(
    hurst: f64,
    grid: &[f64],
    reps: usize,
    seed: u64,
    resolution: usize,
    exec: Execution,
) -> Result<LimitEnsemble> {
    if !(0.5..1.0).contains(&hurst) {
        return Err(Error::Parameter(format!(
            "Hurst index H = {hurst} must lie in [1/2, 1)"
        )));
    }
    if reps == 0 {
        return Err(Error::Parameter("reps must be positive".into()));
    }
    check_grid(grid)?;
    if resolution < 2 {
        return Err(Error::Parameter("fBm resolution must be at least 2".into()));
    }
    let sampler = if hurst > 0.5 {
        Some(CirculantSampler::new(&LrdParams::from_hurst(hurst)?, resolution)?)
    } else {
        None
    };
    let scale = (resolution as f64).powf(-hurst);
    let rows = map_indexed(reps, exec, |r| {
        let mut rng = rng::replication(seed, r as u64);
        let noise: Vec<f64> = match &sampler {
            Some(s) => s.sample(&mut rng),
            None => (0..resolution).map(|_| rng.sample(StandardNormal)).collect(),
        };
        let mut partial = Vec::with_capacity(resolution + 1);
        partial.push(0.0);
        let mut acc = 0.0;
        for x in noise {
            acc += x;
            partial.push(acc * scale);
        }
        let path: Vec<f64> = grid
            .iter()
            .map(|&l| interpolate(&partial, l * resolution as f64))
            .collect();
        (path, partial[resolution])
    });
    let (paths, terminal) = rows.into_iter().unzip();
    Ok(LimitEnsemble {
        grid: grid.to_vec(),
        paths,
        terminal,
        descriptor: ProcessDescriptor::Fbm { hurst, resolution },
        seed,
        reps,
    })
}

/// Hermite processes Z_1..Z_m driven by the same Gaussian path in every
/// replication.
#[derive(Debug, Clone, PartialEq)]
pub struct JointHermiteEnsemble {
    /// orders[k − 1] is the ensemble of Z_k.
    pub orders: Vec<LimitEnsemble>,
}

impl JointHermiteEnsemble {
    pub fn max_order(&self) -> usize {
        self.orders.len()
    }

    pub fn order(&self, k: usize) -> Option<&LimitEnsemble> {
        (k >= 1).then(|| self.orders.get(k - 1)).flatten()
    }

    /// Uses an fBm ensemble as Z_1.
    pub fn from_fbm(fbm: LimitEnsemble) -> Self {
        Self { orders: vec![fbm] }
    }

    fn grid(&self) -> &[f64] {
        &self.orders[0].grid
    }

    fn reps(&self) -> usize {
        self.orders[0].reps
    }
}

/// Z_k(λ) ≈ d_N(k)^{-1} Σ_{i ≤ ⌊λN⌋} H_k(ζ_i) for k = 1..=m from one FGN
/// path ζ of length N per replication.
pub fn simulate_hermite(
    m: usize,
    d: f64,
    grid: &[f64],
    reps: usize,
    n_aux: usize,
    seed: u64,
) -> Result<JointHermiteEnsemble> {
    simulate_hermite_with(m, d, grid, reps, n_aux, seed, Execution::default())
}

pub fn simulate_hermite_with(
    m: usize,
    d: f64,
    grid: &[f64],
    reps: usize,
    n_aux: usize,
    seed: u64,
    exec: Execution,
) -> Result<JointHermiteEnsemble> {
    if m < 1 {
        return Err(Error::Parameter("Hermite order m must be at least 1".into()));
    }
    let params = LrdParams::fgn(d)?;
    if d * m as f64 >= 1.0 {
        return Err(Error::Regime(d * m as f64));
    }
    if n_aux < MIN_N_AUX {
        return Err(Error::Parameter(format!(
            "N_aux = {n_aux} must be at least {MIN_N_AUX}"
        )));
    }
    if reps == 0 {
        return Err(Error::Parameter("reps must be positive".into()));
    }
    check_grid(grid)?;
    let l = asymptotic_l(&params, n_aux);
    let inv_scale: Vec<f64> = (1..=m)
        .map(|k| scaling(d, k, n_aux, l).map(|s| 1.0 / s.d_n))
        .collect::<Result<_>>()?;
    let sampler = CirculantSampler::new(&params, n_aux)?;
    let splits: Vec<usize> = grid
        .iter()
        .map(|&lambda| ((lambda * n_aux as f64).floor() as usize).min(n_aux))
        .collect();
    // rows[r][k−1] = (path, terminal)
    let rows = map_indexed(reps, exec, |r| {
        let mut rng = rng::replication(seed, r as u64);
        let zeta = sampler.sample(&mut rng);
        let mut partial = vec![Vec::with_capacity(n_aux + 1); m];
        let mut acc = vec![0.0; m];
        for p in partial.iter_mut() {
            p.push(0.0);
        }
        for &z in &zeta {
            let h = hermite_all(m, z);
            for k in 0..m {
                acc[k] += h[k + 1];
                partial[k].push(acc[k]);
            }
        }
        (0..m)
            .map(|k| {
                let path: Vec<f64> = splits.iter().map(|&s| partial[k][s] * inv_scale[k]).collect();
                (path, partial[k][n_aux] * inv_scale[k])
            })
            .collect::<Vec<_>>()
    });
    let mut orders = Vec::with_capacity(m);
    for k in 0..m {
        let (paths, terminal): (Vec<_>, Vec<_>) = rows.iter().map(|row| row[k].clone()).unzip();
        orders.push(LimitEnsemble {
            grid: grid.to_vec(),
            paths,
            terminal,
            descriptor: ProcessDescriptor::HermiteApprox { m: k + 1, d, n_aux },
            seed,
            reps,
        });
    }
    Ok(JointHermiteEnsemble { orders })
}

/// Σ_{k+l=m} a_kl/(k! l!)·√(c_k c_l)·Z_k(λ)(Z_l(1) − Z_l(λ)) with Z_0(λ) = λ.
pub fn limit_thm1(
    coeffs: &[(usize, usize, f64)],
    d: f64,
    joint: &JointHermiteEnsemble,
    kernel: &str,
) -> Result<LimitEnsemble> {
    let m = match coeffs.first() {
        Some(&(k, l, _)) => k + l,
        None => return Err(Error::Parameter("no coefficients supplied".into())),
    };
    if m == 0 || coeffs.iter().any(|&(k, l, _)| k + l != m) {
        return Err(Error::Parameter(format!(
            "coefficients must all lie on one diagonal k + l = m ≥ 1 (got {coeffs:?})"
        )));
    }
    if m > joint.max_order() {
        return Err(Error::Parameter(format!(
            "degree {m} needs Hermite processes up to order {m}, ensemble has {}",
            joint.max_order()
        )));
    }
    let grid = joint.grid().to_vec();
    let reps = joint.reps();
    let terms: Vec<(usize, usize, f64)> = coeffs
        .iter()
        .filter(|c| c.2 != 0.0)
        .map(|&(k, l, a)| (k, l, a / (factorial(k) * factorial(l)) * (c_m(d, k) * c_m(d, l)).sqrt()))
        .collect();
    let z = |k: usize, r: usize, g: usize| -> f64 {
        if k == 0 {
            grid[g]
        } else {
            joint.orders[k - 1].paths[r][g]
        }
    };
    let z1 = |k: usize, r: usize| -> f64 {
        if k == 0 {
            1.0
        } else {
            joint.orders[k - 1].terminal[r]
        }
    };
    let mut paths = Vec::with_capacity(reps);
    let mut terminal = Vec::with_capacity(reps);
    for r in 0..reps {
        let path = (0..grid.len())
            .map(|g| {
                terms
                    .iter()
                    .map(|&(k, l, w)| w * z(k, r, g) * (z1(l, r) - z(l, r, g)))
                    .sum()
            })
            .collect();
        paths.push(path);
        terminal.push(0.0);
    }
    let components = coeffs.iter().map(|&(k, l, a)| (format!("a_{k}{l}"), a)).collect();
    let driver = joint.orders[0].descriptor.clone();
    Ok(LimitEnsemble {
        grid,
        paths,
        terminal,
        descriptor: ProcessDescriptor::Functional {
            name: "thm1".into(),
            kernel: kernel.to_string(),
            theorem: 1,
            d,
            m,
            components,
            subordinator: None,
            driver: Box::new(driver),
        },
        seed: joint.orders[0].seed,
        reps,
    })
}

/// The two constants of the second limit functional:
/// A = ∫J(x) dh̃(x) and B = ∬J(y) d_y h(x, y) dF(x).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thm2Constants {
    pub a: f64,
    pub b: f64,
}

/// h̃(x) = E[h(x, G(η))], η ~ N(0, 1), by adaptive integration over η.
fn h_tilde(kernel: &Kernel, g: &Subordinator, x: f64) -> f64 {
    integrate(
        |s| kernel.eval(x, g.apply_clamped(s)) * normal_pdf(s),
        -12.0,
        12.0,
        1e-11,
    )
}

/// Stieltjes sum Σ ½(J_i + J_{i+1})·(v_{i+1} − v_i) on the class grid.
fn stieltjes(j: &[f64], v: &[f64]) -> f64 {
    j.windows(2)
        .zip(v.windows(2))
        .map(|(jw, vw)| 0.5 * (jw[0] + jw[1]) * (vw[1] - vw[0]))
        .sum()
}

pub fn thm2_constants(
    kernel: &Kernel,
    g: &Subordinator,
    class: &ClassCoeffs,
    exec: Execution,
) -> Result<Thm2Constants> {
    let m = class
        .rank
        .ok_or_else(|| Error::Parameter("class coefficients carry no rank".into()))?;
    let j = class.j(m).expect("rank order is stored");
    let grid = &class.grid;
    let ht = map_indexed(grid.len(), exec, |i| h_tilde(kernel, g, grid[i]));
    let a = stieltjes(j, &ht);
    let gh = GaussHermite::new(DEFAULT_QUAD_ORDER);
    let inner = map_indexed(gh.len(), exec, |q| {
        let x = g.apply_clamped(gh.nodes[q]);
        let hv: Vec<f64> = grid.iter().map(|&y| kernel.eval(x, y)).collect();
        stieltjes(j, &hv)
    });
    let b: f64 = inner.iter().zip(&gh.weights).map(|(v, w)| v * w).sum();
    if !(a.is_finite() && b.is_finite()) {
        return Err(Error::Numeric(format!(
            "limit constants are not finite (A = {a}, B = {b})"
        )));
    }
    Ok(Thm2Constants { a, b })
}

/// −(1−λ)Z(λ)·A − λ(Z(1) − Z(λ))·B with Z = Z_m/m!; `z` holds Z_m.
pub fn limit_thm2(kernel: &Kernel, g: &Subordinator, class: &ClassCoeffs, z: &LimitEnsemble) -> Result<LimitEnsemble> {
    limit_thm2_with(kernel, g, class, z, Execution::default())
}

pub fn limit_thm2_with(
    kernel: &Kernel,
    g: &Subordinator,
    class: &ClassCoeffs,
    z: &LimitEnsemble,
    exec: Execution,
) -> Result<LimitEnsemble> {
    let m = class
        .rank
        .ok_or_else(|| Error::Parameter("class coefficients carry no rank".into()))?;
    let (d, z_order) = match &z.descriptor {
        ProcessDescriptor::Fbm { hurst, .. } => (2.0 - 2.0 * hurst, 1),
        ProcessDescriptor::HermiteApprox { m, d, .. } => (*d, *m),
        ProcessDescriptor::Functional { .. } => {
            return Err(Error::Parameter(
                "empirical-process functional needs a Hermite-process ensemble".into(),
            ))
        }
    };
    if z_order != m {
        return Err(Error::Parameter(format!(
            "class rank {m} does not match the order {z_order} of the driving process"
        )));
    }
    let tv = crate::kernel::tv_probe(kernel, 10.0, 201);
    if tv.violated {
        log::warn!(
            "kernel '{}' fails the total-variation probe (max variation {:.3e}, bound {:?})",
            kernel.name(),
            tv.max_tv_first.max(tv.max_tv_second),
            tv.bound
        );
    }
    let Thm2Constants { a, b } = thm2_constants(kernel, g, class, exec)?;
    let scale = 1.0 / factorial(m);
    let paths = z
        .paths
        .iter()
        .zip(&z.terminal)
        .map(|(path, &z_end)| {
            z.grid
                .iter()
                .zip(path)
                .map(|(&lambda, &zl)| {
                    let (zl, z1) = (zl * scale, z_end * scale);
                    -(1.0 - lambda) * zl * a - lambda * (z1 - zl) * b
                })
                .collect()
        })
        .collect();
    let mut components = BTreeMap::new();
    components.insert("A".to_string(), a);
    components.insert("B".to_string(), b);
    if tv.violated {
        components.insert("tv_probe_max".to_string(), tv.max_tv_first.max(tv.max_tv_second));
    }
    Ok(LimitEnsemble {
        grid: z.grid.clone(),
        paths,
        terminal: vec![0.0; z.reps],
        descriptor: ProcessDescriptor::Functional {
            name: "thm2".into(),
            kernel: kernel.name().to_string(),
            theorem: 2,
            d,
            m,
            components,
            subordinator: Some(g.clone()),
            driver: Box::new(z.descriptor.clone()),
        },
        seed: z.seed,
        reps: z.reps,
    })
}

/// Empirical quantiles of a sup-statistic at the requested levels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriticalValueTable {
    pub kernel: String,
    #[serde(rename = "D")]
    pub d: f64,
    pub m: usize,
    pub levels: Vec<f64>,
    pub values: Vec<f64>,
    pub reps: usize,
    pub grid_size: usize,
}

impl CriticalValueTable {
    /// Critical value for `level`, if tabulated.
    pub fn value(&self, level: f64) -> Option<f64> {
        self.levels
            .iter()
            .position(|&l| (l - level).abs() < 1e-12)
            .map(|i| self.values[i])
    }
}

/// Type-7 (linear interpolation) empirical quantile of unsorted data.
pub fn quantile(data: &[f64], p: f64) -> f64 {
    let mut sorted = data.to_vec();
    sorted.sort_by(f64::total_cmp);
    quantile_sorted(&sorted, p)
}

pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let h = (sorted.len() - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

fn quantile_checked(data: &[f64], p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::Parameter(format!("quantile level {p} must lie in (0, 1)")));
    }
    Ok(quantile(data, p))
}

fn check_levels(levels: &[f64]) -> Result<()> {
    if levels.is_empty() {
        return Err(Error::Parameter("no quantile levels requested".into()));
    }
    if let Some(p) = levels.iter().find(|&&p| !(p > 0.0 && p < 1.0)) {
        return Err(Error::Parameter(format!("quantile level {p} must lie in (0, 1)")));
    }
    Ok(())
}

pub fn critical_values(ensemble: &LimitEnsemble, levels: &[f64]) -> Result<CriticalValueTable> {
    let (kernel, d, m) = match &ensemble.descriptor {
        ProcessDescriptor::Functional { kernel, d, m, .. } => (kernel.clone(), *d, *m),
        ProcessDescriptor::Fbm { hurst, .. } => ("none".into(), 2.0 - 2.0 * hurst, 1),
        ProcessDescriptor::HermiteApprox { m, d, .. } => ("none".into(), *d, *m),
    };
    critical_values_from_sups(&ensemble.sup_statistics(), levels, kernel, d, m, ensemble.grid.len())
}

pub fn critical_values_from_sups(
    sups: &[f64],
    levels: &[f64],
    kernel: String,
    d: f64,
    m: usize,
    grid_size: usize,
) -> Result<CriticalValueTable> {
    if sups.len() < MIN_CRITICAL_REPS {
        return Err(Error::Parameter(format!(
            "critical values need at least {MIN_CRITICAL_REPS} replications, got {}",
            sups.len()
        )));
    }
    check_levels(levels)?;
    let mut sorted = sups.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut order: Vec<f64> = levels.to_vec();
    order.sort_by(f64::total_cmp);
    let values = order.iter().map(|&p| quantile_sorted(&sorted, p)).collect();
    Ok(CriticalValueTable {
        kernel,
        d,
        m,
        levels: order,
        values,
        reps: sups.len(),
        grid_size,
    })
}

/// Two-sample Kolmogorov–Smirnov distance sup_x |F_a(x) − F_b(x)|.
pub fn ks_distance(a: &[f64], b: &[f64]) -> f64 {
    if a.is_empty() || b.is_empty() {
        return f64::NAN;
    }
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut best: f64 = 0.0;
    while i < a.len() && j < b.len() {
        let x = if a[i] <= b[j] { a[i] } else { b[j] };
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        best = best.max((i as f64 / na - j as f64 / nb).abs());
    }
    best
}

/// Identifies a cached sup-statistic sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheKey {
    pub kernel: String,
    pub family: String,
    #[serde(rename = "D")]
    pub d: f64,
    pub m: usize,
    pub reps: usize,
    pub grid: usize,
    pub n_aux: usize,
    pub seed: u64,
}

impl CacheKey {
    pub fn digest(&self) -> String {
        use sha2::{Digest, Sha256};
        let canonical = serde_json::to_string(self).expect("cache key serializes");
        Sha256::digest(canonical.as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct CacheEntry {
    key: CacheKey,
    sups: Vec<f64>,
}

/// Directory of sup-statistic samples keyed by [`CacheKey::digest`].
#[derive(Debug, Clone, PartialEq)]
pub struct TableCache {
    dir: PathBuf,
}

impl TableCache {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    /// The directory named by `LRD_USTAT_CACHE`, if set.
    pub fn from_env() -> Option<Self> {
        std::env::var_os(CACHE_ENV).filter(|v| !v.is_empty()).map(Self::new)
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn path(&self, key: &CacheKey) -> PathBuf {
        self.dir.join(format!("{}.json", key.digest()))
    }

    pub fn load(&self, key: &CacheKey) -> Option<Vec<f64>> {
        let text = std::fs::read_to_string(self.path(key)).ok()?;
        let entry: CacheEntry = serde_json::from_str(&text).ok()?;
        (entry.key == *key).then_some(entry.sups)
    }

    pub fn store(&self, key: &CacheKey, sups: &[f64]) -> Result<()> {
        std::fs::create_dir_all(&self.dir)?;
        let entry = CacheEntry {
            key: key.clone(),
            sups: sups.to_vec(),
        };
        let tmp = self.dir.join(format!("{}.tmp{}", key.digest(), std::process::id()));
        std::fs::write(&tmp, serde_json::to_vec(&entry)?)?;
        std::fs::rename(tmp, self.path(key))?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hermite::class_coeffs;
    use crate::hermite::default_class_grid;

    fn mean_var(v: &[f64]) -> (f64, f64) {
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        (mean, var)
    }

    #[test]
    fn fbm_normalization_and_self_similarity() {
        let grid = uniform_grid(16);
        let ens = simulate_fbm(0.8, &grid, 5000, 11).unwrap();
        assert!(ens.paths.iter().all(|p| p[0] == 0.0));
        let (_, v1) = mean_var(&ens.terminal);
        assert!((v1 - 1.0).abs() < 0.06, "Var B(1) = {v1}");
        let (_, vh) = mean_var(&ens.column(8));
        assert!((vh - 0.5f64.powf(1.6)).abs() < 0.03, "Var B(1/2) = {vh}");
        for g in 0..grid.len() {
            let col = ens.column(g);
            let (m, v) = mean_var(&col);
            assert!(m.abs() <= 3.0 * (v / col.len() as f64).sqrt() + 1e-12);
        }
        let half = ens.column(8);
        let scaled: Vec<f64> = ens.terminal.iter().map(|x| x * 0.5f64.powf(0.8)).collect();
        assert!(ks_distance(&half, &scaled) < 0.05);
    }

    #[test]
    fn fbm_is_deterministic_in_any_execution_mode() {
        let grid = uniform_grid(8);
        let a = simulate_fbm_with(0.7, &grid, 20, 3, 4096, Execution::Parallel).unwrap();
        let b = simulate_fbm_with(0.7, &grid, 20, 3, 4096, Execution::Sequential).unwrap();
        assert_eq!(a, b);
        assert!(simulate_fbm(1.0, &grid, 2, 0).is_err());
    }

    #[test]
    fn hermite_orders_share_the_path() {
        let grid = uniform_grid(4);
        let joint = simulate_hermite(2, 0.3, &grid, 300, 4096, 5).unwrap();
        assert_eq!(joint.max_order(), 2);
        for k in 1..=2 {
            assert!(joint.order(k).unwrap().paths.iter().all(|p| p[0] == 0.0));
        }
        let again = simulate_hermite(1, 0.3, &grid, 300, 4096, 5).unwrap();
        assert_eq!(again.orders[0], joint.orders[0]);
        assert!(matches!(
            simulate_hermite(3, 0.4, &grid, 10, 4096, 1),
            Err(Error::Regime(_))
        ));
        assert!(simulate_hermite(1, 0.4, &grid, 10, 1024, 1).is_err());
    }

    #[test]
    fn thm1_cusum_and_wilcoxon_forms() {
        let grid = uniform_grid(32);
        let fbm = simulate_fbm(0.8, &grid, 50, 9).unwrap();
        let joint = JointHermiteEnsemble::from_fbm(fbm.clone());
        let d = 0.4;
        let sc1 = c_m(d, 1).sqrt();
        let cusum = limit_thm1(&[(1, 0, 1.0), (0, 1, -1.0)], d, &joint, "cusum").unwrap();
        let a = 1.0 / (2.0 * std::f64::consts::PI.sqrt());
        let wil = limit_thm1(&[(1, 0, -a), (0, 1, a)], d, &joint, "wilcoxon").unwrap();
        for r in 0..50 {
            let b1 = fbm.terminal[r];
            for (g, &l) in grid.iter().enumerate() {
                let b = fbm.paths[r][g];
                let want = sc1 * ((1.0 - l) * b - l * (b1 - b));
                assert!((cusum.paths[r][g] - want).abs() < 1e-12);
                let want = sc1 * a * (l * b1 - b);
                assert!((wil.paths[r][g] - want).abs() < 1e-12);
            }
        }
        let zero = limit_thm1(&[(1, 0, 0.0), (0, 1, 0.0)], d, &joint, "zero").unwrap();
        assert!(zero.paths.iter().flatten().all(|&v| v == 0.0));
        assert!(limit_thm1(&[(1, 0, 1.0), (1, 1, 1.0)], d, &joint, "bad").is_err());
        let doubled = limit_thm1(&[(1, 0, 2.0), (0, 1, -2.0)], d, &joint, "cusum").unwrap();
        for (p, q) in doubled.paths.iter().flatten().zip(cusum.paths.iter().flatten()) {
            assert_eq!(*p, 2.0 * q);
        }
    }

    #[test]
    fn thm2_constants_for_builtin_kernels() {
        let g = Subordinator::identity();
        let grid = default_class_grid(&g, 2001, 10.0);
        let class = class_coeffs(&g, 1, &grid).unwrap();
        let a = 1.0 / (2.0 * std::f64::consts::PI.sqrt());
        let w = thm2_constants(&Kernel::wilcoxon(), &g, &class, Execution::default()).unwrap();
        assert!((w.a - a).abs() < 1e-4, "A = {}", w.a);
        assert!((w.b + a).abs() < 1e-4, "B = {}", w.b);
        let c = thm2_constants(&Kernel::cusum(), &g, &class, Execution::default()).unwrap();
        assert!((c.a + 1.0).abs() < 1e-6, "A = {}", c.a);
        assert!((c.b - 1.0).abs() < 1e-6, "B = {}", c.b);
        let z = thm2_constants(&Kernel::zero(), &g, &class, Execution::default()).unwrap();
        assert_eq!((z.a, z.b), (0.0, 0.0));
    }

    #[test]
    fn critical_value_tables() {
        let grid = uniform_grid(8);
        let fbm = simulate_fbm(0.8, &grid, 200, 1).unwrap();
        let joint = JointHermiteEnsemble::from_fbm(fbm);
        let zero = limit_thm1(&[(1, 0, 0.0)], 0.4, &joint, "zero").unwrap();
        let t = critical_values(&zero, &[0.95]).unwrap();
        assert_eq!(t.values, vec![0.0]);
        let cusum = limit_thm1(&[(1, 0, 1.0), (0, 1, -1.0)], 0.4, &joint, "cusum").unwrap();
        let t = critical_values(&cusum, &[0.99, 0.5, 0.9]).unwrap();
        assert_eq!(t.levels, vec![0.5, 0.9, 0.99]);
        assert!(t.values.windows(2).all(|w| w[0] <= w[1]));
        let small = simulate_fbm(0.8, &grid, 50, 1).unwrap();
        assert!(critical_values(&small, &[0.95]).is_err());
        assert!(critical_values(&cusum, &[1.0]).is_err());
    }

    #[test]
    fn ks_basics() {
        let a = [1.0, 2.0, 3.0];
        assert_eq!(ks_distance(&a, &a), 0.0);
        assert_eq!(ks_distance(&[0.0, 0.1], &[5.0, 6.0]), 1.0);
        assert!((ks_distance(&[1.0, 2.0], &[1.5, 2.5]) - 0.5).abs() < 1e-15);
        assert!((quantile(&[3.0, 1.0, 2.0, 4.0], 0.5) - 2.5).abs() < 1e-15);
    }

    #[test]
    fn cache_round_trip() {
        let dir = std::env::temp_dir().join(format!("lrd-ustat-cache-test-{}", std::process::id()));
        let cache = TableCache::new(&dir);
        let key = CacheKey {
            kernel: "wilcoxon".into(),
            family: "fgn".into(),
            d: 0.4,
            m: 1,
            reps: 100,
            grid: 257,
            n_aux: 0,
            seed: 1,
        };
        assert!(cache.load(&key).is_none());
        cache.store(&key, &[1.0, 2.0]).unwrap();
        assert_eq!(cache.load(&key), Some(vec![1.0, 2.0]));
        let other = CacheKey { seed: 2, ..key.clone() };
        assert_ne!(other.digest(), key.digest());
        assert!(cache.load(&other).is_none());
        std::fs::remove_dir_all(dir).unwrap();
    }
}
