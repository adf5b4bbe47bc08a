//! The two-sample U-statistic process
//! `U_n(k) = Σ_{i≤k} Σ_{j>k} h(X_i, X_j)` for k = 1..n−1, its
//! normalizations and the sup-type change-point statistic.
//!
//! [`ustat`] dispatches to the O(n) CUSUM path, the O(n log n) Wilcoxon path
//! or the O(n²) incremental path depending on the kernel tags;
//! [`ustat_naive`] is the O(n³) reference.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hermite::ScalingConstants;
use crate::par::{map_indexed, Execution};

pub use crate::kernel::{Kernel, KernelSpec, KernelTag};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Normalization {
    #[default]
    None,
    /// divide by d'_n·n
    Thm1,
    /// divide by n·d_n
    Thm2,
}

impl std::str::FromStr for Normalization {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "none" => Ok(Self::None),
            "thm1" => Ok(Self::Thm1),
            "thm2" => Ok(Self::Thm2),
            other => Err(Error::Parameter(format!(
                "unknown normalization '{other}' (expected none, thm1 or thm2)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UStatPath {
    /// U(k) for k = 1..n−1.
    pub raw: Vec<f64>,
    /// Normalized values; equal to `raw` until [`normalize`] is applied.
    pub values: Vec<f64>,
    pub n: usize,
    pub kernel: String,
    pub normalization: Normalization,
    /// Per-pair mean subtracted before scaling (0 if none).
    pub centering: f64,
    /// Scale the centered values were divided by (1 if none).
    pub divisor: f64,
}

impl UStatPath {
    fn from_raw(raw: Vec<f64>, n: usize, kernel: &str) -> Self {
        Self {
            values: raw.clone(),
            raw,
            n,
            kernel: kernel.to_string(),
            normalization: Normalization::None,
            centering: 0.0,
            divisor: 1.0,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Value at split k (1 ≤ k ≤ n−1); 0 for the empty splits k = 0 and k = n.
    pub fn at(&self, k: usize) -> f64 {
        if k == 0 || k >= self.n {
            0.0
        } else {
            self.values[k - 1]
        }
    }

    /// U_n(λ) with k = ⌊λn⌋.
    pub fn value_at(&self, lambda: f64) -> f64 {
        if lambda.is_nan() || lambda < 0.0 {
            return 0.0;
        }
        self.at((lambda * self.n as f64).floor() as usize)
    }

    /// CSV with columns `k,lambda,raw,normalized`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["k", "lambda", "raw", "normalized"])?;
        for (i, (r, v)) in self.raw.iter().zip(&self.values).enumerate() {
            let k = i + 1;
            w.write_record([
                k.to_string(),
                format!("{}", k as f64 / self.n as f64),
                format!("{r}"),
                format!("{v}"),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

fn check_data(data: &[f64]) -> Result<()> {
    if data.len() < 2 {
        return Err(Error::Input(format!(
            "need at least 2 observations for a split, got {}",
            data.len()
        )));
    }
    if let Some(i) = data.iter().position(|x| !x.is_finite()) {
        return Err(Error::Input(format!("non-finite observation {} at index {i}", data[i])));
    }
    Ok(())
}

/// Neumaier's compensated accumulator.
#[derive(Debug, Clone, Copy, Default)]
struct Compensated {
    sum: f64,
    c: f64,
}

impl Compensated {
    #[inline]
    fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.c += (self.sum - t) + x;
        } else {
            self.c += (x - t) + self.sum;
        }
        self.sum = t;
    }

    #[inline]
    fn value(&self) -> f64 {
        self.sum + self.c
    }
}

/// Direct double summation for every split, O(n³). Reference oracle.
pub fn ustat_naive(data: &[f64], kernel: &Kernel) -> Result<UStatPath> {
    ustat_naive_with(data, kernel, Execution::default())
}

pub fn ustat_naive_with(data: &[f64], kernel: &Kernel, exec: Execution) -> Result<UStatPath> {
    check_data(data)?;
    let n = data.len();
    let raw = map_indexed(n - 1, exec, |idx| {
        let k = idx + 1;
        let mut acc = Compensated::default();
        for &x in &data[..k] {
            for &y in &data[k..] {
                acc.add(kernel.eval(x, y));
            }
        }
        acc.value()
    });
    Ok(UStatPath::from_raw(raw, n, kernel.name()))
}

/// O(n²) evaluation through
/// U(k+1) = U(k) − Σ_{i≤k} h(X_i, X_{k+1}) + Σ_{j>k+1} h(X_{k+1}, X_j).
pub fn ustat_incremental(data: &[f64], kernel: &Kernel) -> Result<UStatPath> {
    ustat_incremental_with(data, kernel, Execution::default())
}

pub fn ustat_incremental_with(data: &[f64], kernel: &Kernel, exec: Execution) -> Result<UStatPath> {
    check_data(data)?;
    let n = data.len();
    // (Σ_{i<t} h(X_i, X_t), Σ_{j>t} h(X_t, X_j)) for each t
    let sums = map_indexed(n, exec, |t| {
        let x = data[t];
        let mut before = Compensated::default();
        for &xi in &data[..t] {
            before.add(kernel.eval(xi, x));
        }
        let mut after = Compensated::default();
        for &xj in &data[t + 1..] {
            after.add(kernel.eval(x, xj));
        }
        (before.value(), after.value())
    });
    let mut u = Compensated::default();
    let mut raw = Vec::with_capacity(n - 1);
    for &(before, after) in &sums[..n - 1] {
        u.add(-before);
        u.add(after);
        raw.push(u.value());
    }
    Ok(UStatPath::from_raw(raw, n, kernel.name()))
}

/// CUSUM path for h(x, y) = x − y: U(k) = (n−k)·S_k − k·(S_n − S_k).
pub fn ustat_cusum(data: &[f64]) -> Result<UStatPath> {
    cusum_signed(data, 1.0, "cusum")
}

fn cusum_signed(data: &[f64], sign: f64, name: &str) -> Result<UStatPath> {
    check_data(data)?;
    let n = data.len();
    let mut prefix = Vec::with_capacity(n);
    let mut acc = Compensated::default();
    for &x in data {
        acc.add(x);
        prefix.push(acc.value());
    }
    let total = prefix[n - 1];
    let raw = (1..n)
        .map(|k| {
            let s_k = prefix[k - 1];
            let (kf, rest) = (k as f64, (n - k) as f64);
            sign * (rest * s_k - kf * (total - s_k))
        })
        .collect();
    Ok(UStatPath::from_raw(raw, n, name))
}

struct Fenwick {
    tree: Vec<i64>,
}

impl Fenwick {
    fn new(size: usize) -> Self {
        Self {
            tree: vec![0; size + 1],
        }
    }

    fn add(&mut self, rank: usize, delta: i64) {
        let mut i = rank + 1;
        while i < self.tree.len() {
            self.tree[i] += delta;
            i += i & i.wrapping_neg();
        }
    }

    /// Count of entries with rank ≤ `rank`.
    fn prefix(&self, rank: usize) -> i64 {
        let mut i = rank + 1;
        let mut s = 0;
        while i > 0 {
            s += self.tree[i];
            i -= i & i.wrapping_neg();
        }
        s
    }
}

/// Wilcoxon path for h(x, y) = 1{x ≤ y} in O(n log n), exact integer counts.
pub fn ustat_wilcoxon(data: &[f64]) -> Result<UStatPath> {
    let counts = wilcoxon_counts(data)?;
    let raw = counts.into_iter().map(|c| c as f64).collect();
    Ok(UStatPath::from_raw(raw, data.len(), "wilcoxon"))
}

/// The integer values of the Wilcoxon path.
pub fn wilcoxon_counts(data: &[f64]) -> Result<Vec<i64>> {
    check_data(data)?;
    let n = data.len();
    let mut sorted = data.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted.dedup();
    let rank = |x: f64| sorted.partition_point(|&s| s < x);
    let ranks: Vec<usize> = data.iter().map(|&x| rank(x)).collect();
    let m = sorted.len();
    let mut prefix = Fenwick::new(m);
    let mut suffix = Fenwick::new(m);
    for &r in &ranks {
        suffix.add(r, 1);
    }
    let mut suffix_len = n as i64;
    let mut u: i64 = 0;
    let mut out = Vec::with_capacity(n - 1);
    for &r in &ranks[..n - 1] {
        suffix.add(r, -1);
        suffix_len -= 1;
        u -= prefix.prefix(r);
        let below = if r == 0 { 0 } else { suffix.prefix(r - 1) };
        u += suffix_len - below;
        prefix.add(r, 1);
        out.push(u);
    }
    Ok(out)
}

/// Fastest exact path for the kernel's tags.
pub fn ustat(data: &[f64], kernel: &Kernel) -> Result<UStatPath> {
    ustat_with(data, kernel, Execution::default())
}

pub fn ustat_with(data: &[f64], kernel: &Kernel, exec: Execution) -> Result<UStatPath> {
    if kernel.has_tag(KernelTag::FastCusum) {
        cusum_signed(data, kernel.cusum_sign(), kernel.name())
    } else if kernel.has_tag(KernelTag::FastWilcoxon) {
        let mut p = ustat_wilcoxon(data)?;
        p.kernel = kernel.name().to_string();
        Ok(p)
    } else {
        ustat_incremental_with(data, kernel, exec)
    }
}

/// Subtracts k(n−k)·center and divides by d'_n·n (Thm1) or n·d_n (Thm2).
pub fn normalize(path: &UStatPath, sc: &ScalingConstants, mode: Normalization, center: f64) -> Result<UStatPath> {
    if path.normalization != Normalization::None {
        return Err(Error::AlreadyNormalized);
    }
    if sc.n != path.n {
        return Err(Error::Parameter(format!(
            "scaling constants are for n = {}, path has n = {}",
            sc.n, path.n
        )));
    }
    if !center.is_finite() {
        return Err(Error::Parameter(format!("centering {center} is not finite")));
    }
    let n = path.n as f64;
    let divisor = match mode {
        Normalization::None => 1.0,
        Normalization::Thm1 => sc.d_n_prime * n,
        Normalization::Thm2 => sc.d_n * n,
    };
    let values = path
        .raw
        .iter()
        .enumerate()
        .map(|(i, &r)| {
            let k = (i + 1) as f64;
            (r - k * (n - k) * center) / divisor
        })
        .collect();
    Ok(UStatPath {
        raw: path.raw.clone(),
        values,
        n: path.n,
        kernel: path.kernel.clone(),
        normalization: mode,
        centering: center,
        divisor,
    })
}

/// max_k |U(k)| and the first split k* attaining it.
pub fn changepoint_statistic(path: &UStatPath) -> (f64, usize) {
    sup_abs(&path.values)
}

/// max |v| and its first 1-based position (1 for an empty or all-zero slice).
pub fn sup_abs(values: &[f64]) -> (f64, usize) {
    let mut best = 0.0;
    let mut arg = 1;
    for (i, v) in values.iter().enumerate() {
        if v.abs() > best {
            best = v.abs();
            arg = i + 1;
        }
    }
    (best, arg)
}
