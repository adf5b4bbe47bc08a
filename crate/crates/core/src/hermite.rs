//! Hermite expansions: polynomials, bivariate coefficients a_kl and ranks,
//! the class coefficients J_k(x), summability diagnostics and the scaling
//! constants c_m, d_n, d'_n.

use std::f64::consts::PI;

use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::Kernel;
use crate::lrd_sim::Subordinator;
use crate::par::{map_indexed, Execution};
use crate::quad::{integrate, GaussHermite};
use crate::rng;
use crate::special::{factorial, gamma, ln_factorial, normal_pdf};

/// Default tensor Gauss–Hermite order.
pub const DEFAULT_QUAD_ORDER: usize = 200;

/// Probabilists' Hermite polynomial H_k(x) by the three-term recurrence.
pub fn hermite_eval(k: usize, x: f64) -> f64 {
    match k {
        0 => 1.0,
        1 => x,
        _ => {
            let (mut prev, mut cur) = (1.0, x);
            for j in 1..k {
                let next = x * cur - j as f64 * prev;
                prev = cur;
                cur = next;
            }
            cur
        }
    }
}

/// H_0(x), …, H_k(x).
pub fn hermite_all(k: usize, x: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(k + 1);
    out.push(1.0);
    if k >= 1 {
        out.push(x);
    }
    for j in 1..k {
        let next = x * out[j] - j as f64 * out[j - 1];
        out.push(next);
    }
    out
}

/// H_j(x)/√j! for j = 0..=k; stays finite where H_j itself would overflow.
pub fn hermite_normalized_all(k: usize, x: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(k + 1);
    out.push(1.0);
    if k >= 1 {
        out.push(x);
    }
    for j in 1..k {
        let jf = j as f64;
        let next = (x * out[j] - jf.sqrt() * out[j - 1]) / (jf + 1.0).sqrt();
        out.push(next);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CoeffSource {
    Quadrature,
    ClosedForm,
    MonteCarlo,
}

/// Truncated coefficient matrix a_kl for k + l ≤ Q.
#[derive(Debug, Clone, PartialEq)]
pub struct HermiteCoeffTable {
    q: usize,
    entries: Vec<Vec<f64>>,
    std_errors: Option<Vec<Vec<f64>>>,
    pub quadrature_order: usize,
    pub source: CoeffSource,
    pub tol: f64,
    pub rank: Option<usize>,
    /// Estimate of E[h(ξ, η)²] (quadrature and Monte Carlo sources).
    pub mean_square: Option<f64>,
    pub warnings: Vec<String>,
}

impl HermiteCoeffTable {
    fn from_entries(
        q: usize,
        entries: Vec<Vec<f64>>,
        source: CoeffSource,
        quadrature_order: usize,
        mean_square: Option<f64>,
        tol: f64,
    ) -> Self {
        let mut table = Self {
            q,
            entries,
            std_errors: None,
            quadrature_order,
            source,
            tol,
            rank: None,
            mean_square,
            warnings: Vec::new(),
        };
        table.rank = rank_2d(&table, tol).ok();
        table
    }

    pub fn max_total_degree(&self) -> usize {
        self.q
    }

    /// a_kl, or `None` when k + l exceeds the stored degree.
    pub fn get(&self, k: usize, l: usize) -> Option<f64> {
        (k + l <= self.q).then(|| self.entries[k][l])
    }

    /// Monte Carlo standard error of a_kl (Monte Carlo source only).
    pub fn std_error(&self, k: usize, l: usize) -> Option<f64> {
        if k + l > self.q {
            return None;
        }
        self.std_errors.as_ref().map(|s| s[k][l])
    }

    /// Entries (k, l, a_kl) on the diagonal k + l = degree.
    pub fn diagonal(&self, degree: usize) -> Vec<(usize, usize, f64)> {
        (0..=degree.min(self.q))
            .filter(|&k| degree - k <= self.q)
            .map(|k| (k, degree - k, self.entries[k][degree - k]))
            .collect()
    }

    /// Σ_{k+l≤Q} a_kl²/(k! l!), excluding a_00.
    pub fn parseval_sum(&self) -> f64 {
        let mut total = 0.0;
        for k in 0..=self.q {
            for l in 0..=(self.q - k) {
                if k + l == 0 {
                    continue;
                }
                let a = self.entries[k][l];
                total += a * a * (-(ln_factorial(k) + ln_factorial(l))).exp();
            }
        }
        total
    }

    pub fn to_json(&self) -> CoeffTableJson {
        let mut entries = Vec::new();
        for k in 0..=self.q {
            for l in 0..=(self.q - k) {
                let a = self.entries[k][l];
                if a.abs() > self.tol {
                    entries.push((k, l, a));
                }
            }
        }
        CoeffTableJson {
            q: self.q,
            source: self.source,
            tol: self.tol,
            entries,
            rank: self.rank,
            warnings: self.warnings.clone(),
        }
    }
}

/// JSON form: `{Q, source, tol, entries: [[k, l, a]], rank}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoeffTableJson {
    #[serde(rename = "Q")]
    pub q: usize,
    pub source: CoeffSource,
    pub tol: f64,
    pub entries: Vec<(usize, usize, f64)>,
    pub rank: Option<usize>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

fn default_tol(mean_square: f64) -> f64 {
    1e-8 * (1.0 + mean_square).sqrt()
}

/// a_kl = E[h(ξ, η) H_k(ξ) H_l(η)] by tensor Gauss–Hermite quadrature.
pub fn coeffs_2d(kernel: &Kernel, q: usize, quad_order: usize) -> Result<HermiteCoeffTable> {
    if q < 1 {
        return Err(Error::Parameter("maximal total degree Q must be at least 1".into()));
    }
    if quad_order < q + 1 {
        return Err(Error::Parameter(format!(
            "quadrature order {quad_order} must be at least Q + 1 = {}",
            q + 1
        )));
    }
    let gh = GaussHermite::new(quad_order);
    let n = gh.len();
    let mut values = vec![0.0; n * n];
    for (i, &x) in gh.nodes.iter().enumerate() {
        for (j, &y) in gh.nodes.iter().enumerate() {
            let v = kernel.eval(x, y);
            if !v.is_finite() {
                return Err(Error::Evaluation { x, y });
            }
            values[i * n + j] = v;
        }
    }
    // basis[k][i] = w_i H_k(x_i)/√k!
    let basis: Vec<Vec<f64>> = {
        let per_node: Vec<Vec<f64>> = gh.nodes.iter().map(|&x| hermite_normalized_all(q, x)).collect();
        (0..=q)
            .map(|k| (0..n).map(|i| gh.weights[i] * per_node[i][k]).collect())
            .collect()
    };
    let mut mean_square = 0.0;
    for i in 0..n {
        for j in 0..n {
            let v = values[i * n + j];
            mean_square += gh.weights[i] * gh.weights[j] * v * v;
        }
    }
    // partial[k][j] = Σ_i basis[k][i] h(x_i, x_j)
    let partial: Vec<Vec<f64>> = (0..=q)
        .map(|k| {
            let mut row = vec![0.0; n];
            for i in 0..n {
                let b = basis[k][i];
                if b == 0.0 {
                    continue;
                }
                let vals = &values[i * n..(i + 1) * n];
                for (r, &v) in row.iter_mut().zip(vals) {
                    *r += b * v;
                }
            }
            row
        })
        .collect();
    let mut entries = vec![vec![0.0; q + 1]; q + 1];
    for k in 0..=q {
        for l in 0..=(q - k) {
            let normalized: f64 = (0..n).map(|j| basis[l][j] * partial[k][j]).sum();
            entries[k][l] = normalized * (0.5 * (ln_factorial(k) + ln_factorial(l))).exp();
        }
    }
    let mut table = HermiteCoeffTable::from_entries(
        q,
        entries,
        CoeffSource::Quadrature,
        quad_order,
        Some(mean_square),
        default_tol(mean_square),
    );
    if kernel.is_discontinuous() {
        table.warnings.push(format!(
            "quadrature-unreliable: kernel '{}' is discontinuous; tensor Gauss-Hermite converges slowly",
            kernel.name()
        ));
    }
    Ok(table)
}

/// Table filled from the kernel's closed-form coefficient provider.
pub fn coeffs_closed_form(kernel: &Kernel, q: usize) -> Result<HermiteCoeffTable> {
    let provider = kernel
        .closed_form()
        .ok_or_else(|| Error::Unsupported(format!("kernel '{}' has no closed-form coefficients", kernel.name())))?;
    let entries: Vec<Vec<f64>> = (0..=q)
        .map(|k| (0..=q).map(|l| if k + l <= q { provider(k, l) } else { 0.0 }).collect())
        .collect();
    let mut probe = HermiteCoeffTable::from_entries(q, entries, CoeffSource::ClosedForm, 0, None, 0.0);
    probe.tol = default_tol(probe.parseval_sum() + probe.entries[0][0].powi(2));
    probe.rank = rank_2d(&probe, probe.tol).ok();
    Ok(probe)
}

/// Monte Carlo estimates of a_kl from `pairs` independent normal pairs, with
/// standard errors.
pub fn coeffs_monte_carlo(
    kernel: &Kernel,
    q: usize,
    pairs: usize,
    seed: u64,
    exec: Execution,
) -> Result<HermiteCoeffTable> {
    if pairs < 2 {
        return Err(Error::Parameter(
            "Monte Carlo coefficients need at least 2 pairs".into(),
        ));
    }
    const BLOCKS: usize = 64;
    let dim = (q + 1) * (q + 1);
    let blocks = map_indexed(BLOCKS, exec, |b| -> Result<(Vec<f64>, Vec<f64>, f64)> {
        let count = pairs / BLOCKS + usize::from(b < pairs % BLOCKS);
        let mut rng = rng::replication(seed, b as u64);
        let mut sum = vec![0.0; dim];
        let mut sum_sq = vec![0.0; dim];
        let mut h_sq = 0.0;
        for _ in 0..count {
            let x: f64 = rng.sample(StandardNormal);
            let y: f64 = rng.sample(StandardNormal);
            let h = kernel.eval(x, y);
            if !h.is_finite() {
                return Err(Error::Evaluation { x, y });
            }
            h_sq += h * h;
            let hx = hermite_all(q, x);
            let hy = hermite_all(q, y);
            for k in 0..=q {
                for l in 0..=(q - k) {
                    let v = h * hx[k] * hy[l];
                    sum[k * (q + 1) + l] += v;
                    sum_sq[k * (q + 1) + l] += v * v;
                }
            }
        }
        Ok((sum, sum_sq, h_sq))
    });
    let mut sum = vec![0.0; dim];
    let mut sum_sq = vec![0.0; dim];
    let mut h_sq = 0.0;
    for block in blocks {
        let (s, s2, hs) = block?;
        sum.iter_mut().zip(&s).for_each(|(a, b)| *a += b);
        sum_sq.iter_mut().zip(&s2).for_each(|(a, b)| *a += b);
        h_sq += hs;
    }
    let nf = pairs as f64;
    let mut entries = vec![vec![0.0; q + 1]; q + 1];
    let mut errors = vec![vec![0.0; q + 1]; q + 1];
    for k in 0..=q {
        for l in 0..=(q - k) {
            let idx = k * (q + 1) + l;
            let mean = sum[idx] / nf;
            let var = (sum_sq[idx] / nf - mean * mean).max(0.0) * nf / (nf - 1.0);
            entries[k][l] = mean;
            errors[k][l] = (var / nf).sqrt();
        }
    }
    let mean_square = h_sq / nf;
    // zero test at three standard errors
    let max_se = errors.iter().flatten().cloned().fold(0.0_f64, f64::max);
    let tol = default_tol(mean_square).max(3.0 * max_se);
    let mut table = HermiteCoeffTable::from_entries(q, entries, CoeffSource::MonteCarlo, 0, Some(mean_square), tol);
    table.std_errors = Some(errors);
    Ok(table)
}

/// Options for [`coefficient_table`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoeffOptions {
    pub source: Option<CoeffSource>,
    pub quad_order: usize,
    pub mc_pairs: usize,
    pub seed: u64,
}

impl Default for CoeffOptions {
    fn default() -> Self {
        Self {
            source: None,
            quad_order: DEFAULT_QUAD_ORDER,
            mc_pairs: 1_000_000,
            seed: 0,
        }
    }
}

/// Coefficient table from the requested source, or by default: closed form
/// when the kernel has one, Monte Carlo for discontinuous kernels, tensor
/// quadrature otherwise.
pub fn coefficient_table(kernel: &Kernel, q: usize, opts: &CoeffOptions) -> Result<HermiteCoeffTable> {
    let source = opts.source.unwrap_or(if kernel.closed_form().is_some() {
        CoeffSource::ClosedForm
    } else if kernel.is_discontinuous() {
        CoeffSource::MonteCarlo
    } else {
        CoeffSource::Quadrature
    });
    match source {
        CoeffSource::ClosedForm => coeffs_closed_form(kernel, q),
        CoeffSource::Quadrature => coeffs_2d(kernel, q, opts.quad_order.max(q + 1)),
        CoeffSource::MonteCarlo => coeffs_monte_carlo(kernel, q, opts.mc_pairs, opts.seed, Execution::Parallel),
    }
}

/// Closed-form Hermite coefficients of h(x, y) = 1{x ≤ y}.
pub fn wilcoxon_coeff_closed_form(k: usize, l: usize) -> f64 {
    let total = k + l;
    if total == 0 {
        return 0.5;
    }
    if total.is_multiple_of(2) {
        return 0.0;
    }
    let exponent = (l + 3 * k - 1) / 2;
    let sign = if exponent.is_multiple_of(2) { 1.0 } else { -1.0 };
    sign * gamma(total as f64 / 2.0) / (2.0 * PI)
}

/// Smallest total degree k + l ≥ 1 with |a_kl| > tol.
pub fn rank_2d(table: &HermiteCoeffTable, tol: f64) -> Result<usize> {
    for degree in 1..=table.q {
        if (0..=degree).any(|k| table.entries[k][degree - k].abs() > tol) {
            return Ok(degree);
        }
    }
    Err(Error::RankNotFound(table.q))
}

/// J_k(x) for k = 1..=k_max on a grid, plus the rank of the class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassCoeffs {
    pub grid: Vec<f64>,
    /// values[k − 1][i] = J_k(grid[i])
    pub values: Vec<Vec<f64>>,
    pub rank: Option<usize>,
    pub tol: f64,
}

impl ClassCoeffs {
    pub fn k_max(&self) -> usize {
        self.values.len()
    }

    /// J_k on the grid (k ≥ 1).
    pub fn j(&self, k: usize) -> Option<&[f64]> {
        (k >= 1).then(|| self.values.get(k - 1).map(Vec::as_slice)).flatten()
    }
}

/// Integration range for the standard normal variable in J_k.
const NORMAL_RANGE: f64 = 40.0;

/// J_k(x) = E[1{G(ξ) ≤ x} H_k(ξ)] by adaptive quadrature over the level set
/// {s : G(s) ≤ x}, a half-line for monotone G.
pub fn class_coeffs(g: &Subordinator, k_max: usize, grid: &[f64]) -> Result<ClassCoeffs> {
    if k_max < 1 {
        return Err(Error::Parameter("k_max must be at least 1".into()));
    }
    if grid.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::Parameter("class-coefficient grid must be sorted".into()));
    }
    let direction = g.monotonicity();
    if direction == 0 {
        return Err(Error::Unsupported(
            "class coefficients need a monotone subordinator; non-monotone tables are not supported".into(),
        ));
    }
    let mut values = vec![Vec::with_capacity(grid.len()); k_max];
    for &x in grid {
        let t = g.level_crossing(x, NORMAL_RANGE);
        let (a, b) = if direction > 0 {
            (-NORMAL_RANGE, t)
        } else {
            (t, NORMAL_RANGE)
        };
        for (k, row) in values.iter_mut().enumerate() {
            let order = k + 1;
            let v = if b <= a {
                0.0
            } else {
                integrate(|s| hermite_eval(order, s) * normal_pdf(s), a, b, 1e-13)
            };
            row.push(v);
        }
    }
    let tol = 1e-10;
    let rank = values
        .iter()
        .position(|row| row.iter().any(|v| v.abs() > tol))
        .map(|i| i + 1);
    Ok(ClassCoeffs {
        grid: grid.to_vec(),
        values,
        rank,
        tol,
    })
}

/// Grid x = G(s) for s uniform on [−range, range]; sorted for monotone G.
pub fn default_class_grid(g: &Subordinator, points: usize, range: f64) -> Vec<f64> {
    let points = points.max(2);
    let mut grid: Vec<f64> = (0..points)
        .map(|i| g.apply_clamped(-range + 2.0 * range * i as f64 / (points - 1) as f64))
        .collect();
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    grid
}

/// Source of coefficients a_kl for the summability diagnostic.
pub trait CoeffProvider {
    fn coeff(&self, k: usize, l: usize) -> Result<f64>;
}

impl CoeffProvider for HermiteCoeffTable {
    fn coeff(&self, k: usize, l: usize) -> Result<f64> {
        self.get(k, l)
            .ok_or_else(|| Error::Parameter(format!("coefficient ({k}, {l}) beyond stored degree {}", self.q)))
    }
}

impl CoeffProvider for Kernel {
    fn coeff(&self, k: usize, l: usize) -> Result<f64> {
        self.closed_form()
            .map(|f| f(k, l))
            .ok_or_else(|| Error::Unsupported(format!("kernel '{}' has no closed-form coefficients", self.name())))
    }
}

/// Wraps a closure as a provider.
pub struct FnProvider<F>(pub F);

impl<F: Fn(usize, usize) -> f64> CoeffProvider for FnProvider<F> {
    fn coeff(&self, k: usize, l: usize) -> Result<f64> {
        Ok((self.0)(k, l))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Summability {
    ConvergentLikely,
    DivergentLikely,
    Inconclusive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummabilityReport {
    pub q: Vec<usize>,
    /// S(Q) = Σ_{1≤k+l≤Q} |a_kl|/√(k! l!)
    pub partial_sums: Vec<f64>,
    pub classification: Summability,
}

/// Partial sums of the absolute summability series with an advisory
/// classification from the tail increments.
///
/// Increments are measured per unit of log Q: a harmonic tail keeps that
/// rate roughly constant (or growing), a geometric tail collapses it.
pub fn summability_diagnostic(provider: &dyn CoeffProvider, q_list: &[usize]) -> Result<SummabilityReport> {
    let mut qs: Vec<usize> = q_list.iter().copied().filter(|&q| q >= 1).collect();
    qs.sort_unstable();
    qs.dedup();
    let q_max = qs.last().copied().unwrap_or(0);
    let mut per_degree = vec![0.0; q_max + 1];
    for (degree, slot) in per_degree.iter_mut().enumerate().skip(1) {
        for k in 0..=degree {
            let l = degree - k;
            let a = provider.coeff(k, l)?;
            if a != 0.0 {
                *slot += a.abs() * (-0.5 * (ln_factorial(k) + ln_factorial(l))).exp();
            }
        }
    }
    let mut partial_sums = Vec::with_capacity(qs.len());
    let mut running = 0.0;
    let mut next = 1;
    for &q in &qs {
        while next <= q {
            running += per_degree[next];
            next += 1;
        }
        partial_sums.push(running);
    }
    let classification = classify(&qs, &partial_sums);
    Ok(SummabilityReport {
        q: qs,
        partial_sums,
        classification,
    })
}

fn classify(qs: &[usize], sums: &[f64]) -> Summability {
    if qs.len() < 2 {
        return Summability::Inconclusive;
    }
    let last = sums.len() - 1;
    let scale = 1.0 + sums[last].abs();
    let rate = |j: usize| (sums[j] - sums[j - 1]) / (qs[j] as f64 / qs[j - 1] as f64).ln();
    if sums[last] - sums[last - 1] <= 1e-9 * scale {
        return Summability::ConvergentLikely;
    }
    if qs.len() < 3 {
        return Summability::Inconclusive;
    }
    let prev = rate(last - 1);
    if prev <= 1e-9 * scale {
        return Summability::Inconclusive;
    }
    let ratio = rate(last) / prev;
    if ratio >= 0.7 {
        Summability::DivergentLikely
    } else if ratio <= 0.35 {
        Summability::ConvergentLikely
    } else {
        Summability::Inconclusive
    }
}

/// c_m = 2·m!/((1 − Dm)(2 − Dm)), with c_0 = 1.
pub fn c_m(d: f64, m: usize) -> f64 {
    if m == 0 {
        return 1.0;
    }
    let dm = d * m as f64;
    2.0 * factorial(m) / ((1.0 - dm) * (2.0 - dm))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalingConstants {
    #[serde(rename = "D")]
    pub d: f64,
    pub m: usize,
    pub n: usize,
    pub c_m: f64,
    pub d_n: f64,
    pub d_n_prime: f64,
    pub hurst: f64,
    pub k_const: f64,
}

/// Scaling constants for rank `m` at sample size `n`; requires mD < 1.
pub fn scaling(d: f64, m: usize, n: usize, l_at_n: f64) -> Result<ScalingConstants> {
    if !(d > 0.0 && d < 1.0) {
        return Err(Error::Parameter(format!("D = {d} must lie in (0, 1)")));
    }
    if m < 1 || n < 1 {
        return Err(Error::Parameter("scaling needs m ≥ 1 and n ≥ 1".into()));
    }
    if l_at_n.is_nan() || l_at_n <= 0.0 {
        return Err(Error::Parameter(format!("L(n) = {l_at_n} must be positive")));
    }
    let dm = d * m as f64;
    if dm >= 1.0 {
        return Err(Error::Regime(dm));
    }
    let cm = c_m(d, m);
    let d_n_prime = ((n as f64).powf(2.0 - dm) * l_at_n.powi(m as i32)).sqrt();
    Ok(ScalingConstants {
        d,
        m,
        n,
        c_m: cm,
        d_n: cm.sqrt() * d_n_prime,
        d_n_prime,
        hurst: 1.0 - dm / 2.0,
        k_const: 2.0 * gamma(d) * (d * PI / 2.0).cos(),
    })
}
