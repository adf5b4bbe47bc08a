//! Sup-type change-point test: the normalized U-statistic process against
//! simulated critical values of its limit.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hermite::{scaling, CoeffOptions};
use crate::kernel::Kernel;
use crate::limit_law::{
    critical_values_from_sups, limit_thm1, simulate_fbm_with, simulate_hermite_with, uniform_grid, CacheKey,
    CriticalValueTable, JointHermiteEnsemble, TableCache, DEFAULT_GRID_POINTS, DEFAULT_N_AUX, DEFAULT_REPS,
};
use crate::lrd_sim::{asymptotic_l, CovarianceFamily, LrdParams};
use crate::par::Execution;
use crate::rng;
use crate::ustat::{changepoint_statistic, normalize, ustat_with, Normalization};
use crate::verify::projection;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectConfig {
    #[serde(rename = "D")]
    pub d: f64,
    pub family: CovarianceFamily,
    pub levels: Vec<f64>,
    pub reps: usize,
    pub grid_points: usize,
    pub n_aux: usize,
    pub seed: u64,
}

impl DetectConfig {
    pub fn new(d: f64) -> Self {
        Self {
            d,
            family: CovarianceFamily::Fgn,
            levels: vec![0.95],
            reps: DEFAULT_REPS,
            grid_points: DEFAULT_GRID_POINTS,
            n_aux: DEFAULT_N_AUX,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionReport {
    pub n: usize,
    pub kernel: String,
    #[serde(rename = "D")]
    pub d: f64,
    pub m: usize,
    pub statistic: f64,
    pub k_star: usize,
    pub lambda_star: f64,
    pub center: f64,
    pub divisor: f64,
    pub critical_values: CriticalValueTable,
    /// reject[i] is the decision at critical_values.levels[i].
    pub reject: Vec<bool>,
    pub cached: bool,
}

impl DetectionReport {
    pub fn rejects_at(&self, level: f64) -> Option<bool> {
        self.critical_values
            .levels
            .iter()
            .position(|&l| (l - level).abs() < 1e-12)
            .map(|i| self.reject[i])
    }
}

/// Sup-statistic sample of the Hermite-projection limit for `kernel`, optionally
/// served from `cache`. Returns the sample, m, and whether it was cached.
pub fn limit_sup_sample(
    kernel: &Kernel,
    cfg: &DetectConfig,
    cache: Option<&TableCache>,
    exec: Execution,
) -> Result<(Vec<f64>, usize, bool)> {
    let proj = projection(kernel, &CoeffOptions::default())?;
    let m = proj.m;
    let dm = cfg.d * m as f64;
    if dm >= 1.0 {
        return Err(Error::Regime(dm));
    }
    let key = CacheKey {
        kernel: kernel.name().to_string(),
        family: cfg.family.to_string(),
        d: cfg.d,
        m,
        reps: cfg.reps,
        grid: cfg.grid_points + 1,
        n_aux: if m == 1 { 0 } else { cfg.n_aux },
        seed: cfg.seed,
    };
    if let Some(sups) = cache.and_then(|c| c.load(&key)) {
        return Ok((sups, m, true));
    }
    let grid = uniform_grid(cfg.grid_points);
    let seed = rng::derive_seed(cfg.seed, "limit");
    let joint = if m == 1 {
        let hurst = 1.0 - cfg.d / 2.0;
        let resolution = crate::limit_law::fbm_resolution(grid.len());
        JointHermiteEnsemble::from_fbm(simulate_fbm_with(hurst, &grid, cfg.reps, seed, resolution, exec)?)
    } else {
        simulate_hermite_with(m, cfg.d, &grid, cfg.reps, cfg.n_aux, seed, exec)?
    };
    let limit = limit_thm1(&proj.diagonal, cfg.d, &joint, kernel.name())?;
    let sups = limit.sup_statistics();
    if let Some(c) = cache {
        if let Err(e) = c.store(&key, &sups) {
            log::warn!("could not write critical-value cache in {}: {e}", c.dir().display());
        }
    }
    Ok((sups, m, false))
}

/// Runs the test on `data`, treated as a realization of the Gaussian LRD
/// model with the user-supplied D.
pub fn detect(
    data: &[f64],
    kernel: &Kernel,
    cfg: &DetectConfig,
    cache: Option<&TableCache>,
) -> Result<DetectionReport> {
    detect_with(data, kernel, cfg, cache, Execution::default())
}

pub fn detect_with(
    data: &[f64],
    kernel: &Kernel,
    cfg: &DetectConfig,
    cache: Option<&TableCache>,
    exec: Execution,
) -> Result<DetectionReport> {
    let params = LrdParams::new(cfg.d, cfg.family)?;
    let n = data.len();
    if n < 2 {
        return Err(Error::Input(format!(
            "need at least 2 observations for a split, got {n}"
        )));
    }
    let (sups, m, cached) = limit_sup_sample(kernel, cfg, cache, exec)?;
    let table = critical_values_from_sups(
        &sups,
        &cfg.levels,
        kernel.name().to_string(),
        cfg.d,
        m,
        cfg.grid_points + 1,
    )?;
    let sc = scaling(cfg.d, m, n, asymptotic_l(&params, n))?;
    let center = kernel.mean_under_normal();
    let path = normalize(&ustat_with(data, kernel, exec)?, &sc, Normalization::Thm1, center)?;
    let (statistic, k_star) = changepoint_statistic(&path);
    let reject = table.values.iter().map(|&c| statistic > c).collect();
    Ok(DetectionReport {
        n,
        kernel: kernel.name().to_string(),
        d: cfg.d,
        m,
        statistic,
        k_star,
        lambda_star: k_star as f64 / n as f64,
        center,
        divisor: path.divisor,
        critical_values: table,
        reject,
        cached,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lrd_sim::simulate_gaussian;

    fn small_cfg() -> DetectConfig {
        DetectConfig {
            reps: 200,
            grid_points: 64,
            ..DetectConfig::new(0.4)
        }
    }

    #[test]
    fn detects_a_large_shift() {
        let params = LrdParams::fgn(0.4).unwrap();
        let mut x = simulate_gaussian(&params, 1000, 4).unwrap().values;
        for v in &mut x[500..] {
            *v += 3.0;
        }
        let r = detect(&x, &Kernel::wilcoxon(), &small_cfg(), None).unwrap();
        assert_eq!(r.rejects_at(0.95), Some(true));
        assert!((r.lambda_star - 0.5).abs() < 0.1, "{r:?}");
        assert_eq!(r.m, 1);
    }

    #[test]
    fn rejects_short_input() {
        assert!(matches!(
            detect(&[1.0], &Kernel::cusum(), &small_cfg(), None),
            Err(Error::Input(_))
        ));
    }

    #[test]
    fn cache_is_used() {
        let dir = std::env::temp_dir().join(format!("lrd-ustat-detect-cache-{}", std::process::id()));
        let cache = TableCache::new(&dir);
        let x: Vec<f64> = (0..50).map(|i| (i as f64 * 0.37).sin()).collect();
        let a = detect(&x, &Kernel::cusum(), &small_cfg(), Some(&cache)).unwrap();
        let b = detect(&x, &Kernel::cusum(), &small_cfg(), Some(&cache)).unwrap();
        assert!(!a.cached && b.cached);
        assert_eq!(a.critical_values, b.critical_values);
        std::fs::remove_dir_all(dir).unwrap();
    }
}
