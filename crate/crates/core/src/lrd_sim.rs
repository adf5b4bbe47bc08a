//! Stationary Gaussian sequences with power-law autocovariance
//! γ(k) = L(k)·k^{−D}, sampled exactly by circulant embedding, and the
//! subordinating transforms X = G(ξ).

use std::fmt;
use std::io::{Read, Write};
use std::sync::Arc;

use rand::Rng as _;
use rand_distr::StandardNormal;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quad::GaussHermite;
use crate::rng;
use crate::special::{normal_cdf, normal_quantile, normal_sf};

/// Relative tolerance below which negative circulant eigenvalues are clipped.
pub const EMBED_TOLERANCE: f64 = 1e-10;

/// Magic header of the binary path format.
pub const PATH_MAGIC: &[u8; 16] = b"LRDUSTAT-PATH\0\0\0";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CovarianceFamily {
    /// Fractional Gaussian noise with Hurst index H = 1 − D/2.
    #[default]
    Fgn,
    /// γ(k) = (1 + k)^{−D} for k ≥ 1.
    #[serde(alias = "tweaked-power-law")]
    Tweaked,
}

impl fmt::Display for CovarianceFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CovarianceFamily::Fgn => write!(f, "fgn"),
            CovarianceFamily::Tweaked => write!(f, "tweaked"),
        }
    }
}

impl std::str::FromStr for CovarianceFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "fgn" => Ok(CovarianceFamily::Fgn),
            "tweaked" | "tweaked-power-law" | "powerlaw" => Ok(CovarianceFamily::Tweaked),
            other => Err(Error::Parameter(format!(
                "unknown covariance family '{other}' (expected fgn or tweaked)"
            ))),
        }
    }
}

/// LRD model: exponent D ∈ (0,1) and covariance family.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "LrdParamsRepr")]
pub struct LrdParams {
    #[serde(rename = "D")]
    d: f64,
    family: CovarianceFamily,
}

#[derive(Deserialize)]
struct LrdParamsRepr {
    #[serde(rename = "D")]
    d: f64,
    family: CovarianceFamily,
}

impl TryFrom<LrdParamsRepr> for LrdParams {
    type Error = Error;

    fn try_from(r: LrdParamsRepr) -> Result<Self> {
        LrdParams::new(r.d, r.family)
    }
}

impl LrdParams {
    pub fn new(d: f64, family: CovarianceFamily) -> Result<Self> {
        if !(d > 0.0 && d < 1.0) {
            return Err(Error::Parameter(format!(
                "D = {d} must lie in the open interval (0, 1)"
            )));
        }
        Ok(Self { d, family })
    }

    pub fn fgn(d: f64) -> Result<Self> {
        Self::new(d, CovarianceFamily::Fgn)
    }

    pub fn tweaked(d: f64) -> Result<Self> {
        Self::new(d, CovarianceFamily::Tweaked)
    }

    /// FGN parameters for a given Hurst index H ∈ (1/2, 1).
    pub fn from_hurst(h: f64) -> Result<Self> {
        if !(h > 0.5 && h < 1.0) {
            return Err(Error::Parameter(format!("H = {h} must lie in (1/2, 1)")));
        }
        Self::fgn(2.0 - 2.0 * h)
    }

    pub fn d(&self) -> f64 {
        self.d
    }

    pub fn family(&self) -> CovarianceFamily {
        self.family
    }

    pub fn hurst(&self) -> f64 {
        1.0 - self.d / 2.0
    }

    /// Exact autocovariance at lag `k`.
    pub fn covariance(&self, k: usize) -> f64 {
        if k == 0 {
            return 1.0;
        }
        let kf = k as f64;
        match self.family {
            CovarianceFamily::Fgn => fgn_covariance(self.hurst(), kf),
            CovarianceFamily::Tweaked => (1.0 + kf).powf(-self.d),
        }
    }
}

fn fgn_covariance(h: f64, k: f64) -> f64 {
    let two_h = 2.0 * h;
    if k < 16.0 {
        return 0.5 * ((k + 1.0).powf(two_h) - 2.0 * k.powf(two_h) + (k - 1.0).abs().powf(two_h));
    }
    // second difference via (1+x)^a + (1−x)^a − 2 = 2 Σ_j C(a, 2j) x^{2j},
    // which avoids cancellation at large lags
    let x2 = 1.0 / (k * k);
    let mut binom = 1.0;
    let mut power = 1.0;
    let mut sum = 0.0;
    for j in 1..=12 {
        let i = 2.0 * j as f64;
        binom *= (two_h - i + 2.0) * (two_h - i + 1.0) / ((i - 1.0) * i);
        power *= x2;
        sum += binom * power;
    }
    k.powf(two_h) * sum
}

/// γ(0..=max_lag) of the model.
pub fn build_covariance(params: &LrdParams, max_lag: usize) -> Vec<f64> {
    (0..=max_lag).map(|k| params.covariance(k)).collect()
}

/// Slowly varying factor L(n) in γ(n) = L(n)·n^{−D}.
///
/// FGN uses its asymptotic constant H(2H−1); the tweaked power law uses
/// (n/(1+n))^D.
pub fn asymptotic_l(params: &LrdParams, n: usize) -> f64 {
    match params.family {
        CovarianceFamily::Fgn => {
            let h = params.hurst();
            h * (2.0 * h - 1.0)
        }
        CovarianceFamily::Tweaked => {
            let nf = n.max(1) as f64;
            (nf / (1.0 + nf)).powf(params.d)
        }
    }
}

/// Circulant-embedding sampler for a fixed covariance and length. Build it
/// once and call [`CirculantSampler::sample`] per replication.
#[derive(Clone)]
pub struct CirculantSampler {
    n: usize,
    scaled_sqrt_eigenvalues: Vec<f64>,
    clipped: usize,
    fft: Arc<dyn Fft<f64>>,
}

impl fmt::Debug for CirculantSampler {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CirculantSampler")
            .field("n", &self.n)
            .field("embedding", &self.scaled_sqrt_eigenvalues.len())
            .field("clipped", &self.clipped)
            .finish()
    }
}

impl CirculantSampler {
    pub fn new(params: &LrdParams, n: usize) -> Result<Self> {
        if n < 2 {
            return Err(Error::Parameter(format!("path length n = {n} must be at least 2")));
        }
        let half = (n - 1).next_power_of_two();
        let cov = build_covariance(params, half);
        let label = format!("{} (D = {})", params.family, params.d);
        Self::from_covariance(&cov, n, &label)
    }

    /// Embeds γ(0..=N) into a circulant of size 2N and keeps the first `n`
    /// coordinates of each draw (requires n ≤ N + 1).
    pub fn from_covariance(cov: &[f64], n: usize, label: &str) -> Result<Self> {
        if cov.len() < 2 || n > cov.len() {
            return Err(Error::Parameter(format!(
                "covariance of {} lags cannot generate a path of length {n}",
                cov.len()
            )));
        }
        let half = cov.len() - 1;
        let size = 2 * half;
        let mut row: Vec<Complex<f64>> = (0..size)
            .map(|j| {
                let lag = if j <= half { j } else { size - j };
                Complex::new(cov[lag], 0.0)
            })
            .collect();
        let mut planner = FftPlanner::new();
        let fft = planner.plan_fft_forward(size);
        fft.process(&mut row);
        let eig: Vec<f64> = row.iter().map(|c| c.re).collect();
        let max = eig.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let min = eig.iter().cloned().fold(f64::INFINITY, f64::min);
        if min < -EMBED_TOLERANCE * max {
            return Err(Error::NonEmbeddable {
                model: label.to_string(),
                n,
                min_eigenvalue: min,
                max_eigenvalue: max,
            });
        }
        let clipped = eig.iter().filter(|&&e| e < 0.0).count();
        if clipped > 0 {
            log::warn!(
                "circulant embedding of {label} at n = {n}: clipped {clipped} small negative eigenvalues (min {min:.3e})"
            );
        }
        let scale = 1.0 / size as f64;
        Ok(Self {
            n,
            scaled_sqrt_eigenvalues: eig.iter().map(|&e| (e.max(0.0) * scale).sqrt()).collect(),
            clipped,
            fft,
        })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// Number of slightly negative eigenvalues that were set to zero.
    pub fn clipped_eigenvalues(&self) -> usize {
        self.clipped
    }

    pub fn sample(&self, rng: &mut rng::Rng) -> Vec<f64> {
        let mut buf: Vec<Complex<f64>> = self
            .scaled_sqrt_eigenvalues
            .iter()
            .map(|&s| {
                let re: f64 = rng.sample(StandardNormal);
                let im: f64 = rng.sample(StandardNormal);
                Complex::new(s * re, s * im)
            })
            .collect();
        self.fft.process(&mut buf);
        buf.iter().take(self.n).map(|c| c.re).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianPath {
    pub values: Vec<f64>,
    pub params: LrdParams,
    pub seed: u64,
    pub clipped_eigenvalues: usize,
}

impl GaussianPath {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Exact stationary Gaussian sample of length `n`, deterministic in `seed`.
pub fn simulate_gaussian(params: &LrdParams, n: usize, seed: u64) -> Result<GaussianPath> {
    let sampler = CirculantSampler::new(params, n)?;
    let mut rng = rng::seeded(seed);
    Ok(GaussianPath {
        values: sampler.sample(&mut rng),
        params: *params,
        seed,
        clipped_eigenvalues: sampler.clipped_eigenvalues(),
    })
}

/// Target law of a quantile transform G = F⁻¹ ∘ Φ.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "lowercase")]
pub enum TargetLaw {
    Exponential { rate: f64 },
    Pareto { shape: f64, scale: f64 },
    Laplace { scale: f64 },
    Uniform { low: f64, high: f64 },
}

impl TargetLaw {
    fn validate(&self) -> Result<()> {
        let ok = match *self {
            TargetLaw::Exponential { rate } => rate > 0.0,
            TargetLaw::Pareto { shape, scale } => shape > 1.0 && scale > 0.0,
            TargetLaw::Laplace { scale } => scale > 0.0,
            TargetLaw::Uniform { low, high } => high > low,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Parameter(format!("ill-formed target law {self:?}")))
        }
    }

    /// F⁻¹(Φ(s)), using the upper tail 1 − Φ(s) directly where it matters.
    fn transform(&self, s: f64) -> f64 {
        match *self {
            TargetLaw::Exponential { rate } => -normal_sf(s).ln() / rate,
            TargetLaw::Pareto { shape, scale } => scale * normal_sf(s).powf(-1.0 / shape),
            TargetLaw::Laplace { scale } => {
                if s < 0.0 {
                    scale * (2.0 * normal_cdf(s)).ln()
                } else {
                    -scale * (2.0 * normal_sf(s)).ln()
                }
            }
            TargetLaw::Uniform { low, high } => low + (high - low) * normal_cdf(s),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum SubordinatorKind {
    Identity,
    Quantile(TargetLaw),
    /// Piecewise-linear lookup through (xs, ys); xs strictly increasing.
    Tabulated {
        xs: Vec<f64>,
        ys: Vec<f64>,
    },
}

/// A transform G with E[G(ξ)] = 0 enforced by subtracting its Gauss–Hermite
/// mean at construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Subordinator {
    kind: SubordinatorKind,
    offset: f64,
}

/// Nodes used for centering subordinators.
pub const CENTERING_NODES: usize = 200;

impl Subordinator {
    pub fn identity() -> Self {
        Self {
            kind: SubordinatorKind::Identity,
            offset: 0.0,
        }
    }

    pub fn quantile(law: TargetLaw) -> Result<Self> {
        law.validate()?;
        Ok(Self::centered(SubordinatorKind::Quantile(law)))
    }

    pub fn tabulated(xs: Vec<f64>, ys: Vec<f64>) -> Result<Self> {
        if xs.len() < 2 || xs.len() != ys.len() {
            return Err(Error::Parameter(
                "tabulated subordinator needs at least two (x, y) pairs of equal length".into(),
            ));
        }
        if xs.windows(2).any(|w| w[1] <= w[0]) || xs.iter().chain(&ys).any(|v| !v.is_finite()) {
            return Err(Error::Parameter(
                "tabulated subordinator needs finite, strictly increasing x values".into(),
            ));
        }
        Ok(Self::centered(SubordinatorKind::Tabulated { xs, ys }))
    }

    fn centered(kind: SubordinatorKind) -> Self {
        let raw = Self { kind, offset: 0.0 };
        let gh = GaussHermite::new(CENTERING_NODES);
        let mean = gh.expect(|s| raw.raw_clamped(s));
        Self { offset: mean, ..raw }
    }

    pub fn kind(&self) -> &SubordinatorKind {
        &self.kind
    }

    /// The constant subtracted to center G.
    pub fn offset(&self) -> f64 {
        self.offset
    }

    fn raw_clamped(&self, s: f64) -> f64 {
        match &self.kind {
            SubordinatorKind::Identity => s,
            SubordinatorKind::Quantile(law) => law.transform(s),
            SubordinatorKind::Tabulated { xs, ys } => {
                let s = s.clamp(xs[0], xs[xs.len() - 1]);
                interpolate(xs, ys, s)
            }
        }
    }

    /// G(s), centered.
    pub fn apply(&self, s: f64) -> Result<f64> {
        if let SubordinatorKind::Tabulated { xs, .. } = &self.kind {
            let (lo, hi) = (xs[0], xs[xs.len() - 1]);
            if !(lo..=hi).contains(&s) {
                return Err(Error::Extrapolation { value: s, lo, hi });
            }
        }
        Ok(self.raw_clamped(s) - self.offset)
    }

    /// G(s) with tabulated lookups held constant outside the table; used by
    /// quadrature routines that sample far into the tails.
    pub fn apply_clamped(&self, s: f64) -> f64 {
        self.raw_clamped(s) - self.offset
    }

    /// +1 if G is nondecreasing, −1 if nonincreasing, 0 otherwise.
    pub fn monotonicity(&self) -> i8 {
        match &self.kind {
            SubordinatorKind::Identity | SubordinatorKind::Quantile(_) => 1,
            SubordinatorKind::Tabulated { ys, .. } => {
                if ys.windows(2).all(|w| w[1] >= w[0]) {
                    1
                } else if ys.windows(2).all(|w| w[1] <= w[0]) {
                    -1
                } else {
                    0
                }
            }
        }
    }

    /// Smallest s with G(s) > x (for nondecreasing G) found by bisection on
    /// [−lim, lim]; the boundary of {s : G(s) ≤ x}.
    pub fn level_crossing(&self, x: f64, lim: f64) -> f64 {
        if let SubordinatorKind::Identity = self.kind {
            return x.clamp(-lim, lim);
        }
        if let SubordinatorKind::Quantile(TargetLaw::Uniform { low, high }) = self.kind {
            let p = (x + self.offset - low) / (high - low);
            return normal_quantile(p.clamp(0.0, 1.0)).clamp(-lim, lim);
        }
        let sign = if self.monotonicity() < 0 { -1.0 } else { 1.0 };
        let g = |s: f64| sign * self.apply_clamped(s);
        let target = sign * x;
        let (mut lo, mut hi) = (-lim, lim);
        if g(lo) > target {
            return lo;
        }
        if g(hi) <= target {
            return hi;
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if g(mid) <= target {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo < 1e-15 * hi.abs().max(1.0) {
                break;
            }
        }
        0.5 * (lo + hi)
    }
}

fn interpolate(xs: &[f64], ys: &[f64], s: f64) -> f64 {
    let idx = xs.partition_point(|&x| x <= s);
    if idx == 0 {
        return ys[0];
    }
    if idx >= xs.len() {
        return ys[ys.len() - 1];
    }
    let (x0, x1) = (xs[idx - 1], xs[idx]);
    let t = (s - x0) / (x1 - x0);
    ys[idx - 1] + t * (ys[idx] - ys[idx - 1])
}

/// X_i = G(ξ_i) elementwise.
pub fn subordinate(values: &[f64], g: &Subordinator) -> Result<Vec<f64>> {
    if let SubordinatorKind::Identity = g.kind {
        return Ok(values.to_vec());
    }
    values.iter().map(|&s| g.apply(s)).collect()
}

/// JSON model description `{family, D, n, seed}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub family: CovarianceFamily,
    #[serde(rename = "D")]
    pub d: f64,
    pub n: usize,
    pub seed: u64,
}

impl ModelConfig {
    pub fn params(&self) -> Result<LrdParams> {
        LrdParams::new(self.d, self.family)
    }
}

pub fn write_values_csv<W: Write>(values: &[f64], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["value"])?;
    for v in values {
        w.write_record([format!("{v:?}")])?;
    }
    w.flush()?;
    Ok(())
}

/// Reads the `value` column of a CSV file.
pub fn read_values_csv<R: Read>(reader: R) -> Result<Vec<f64>> {
    let mut r = csv::Reader::from_reader(reader);
    let col = r
        .headers()?
        .iter()
        .position(|h| h.trim() == "value")
        .ok_or_else(|| Error::Input("CSV input has no 'value' column".into()))?;
    let mut out = Vec::new();
    for (line, record) in r.records().enumerate() {
        let record = record?;
        let field = record.get(col).unwrap_or("").trim();
        let v: f64 = field
            .parse()
            .map_err(|_| Error::Input(format!("row {}: cannot parse '{field}' as a number", line + 1)))?;
        out.push(v);
    }
    Ok(out)
}

pub fn write_values_binary<W: Write>(values: &[f64], mut writer: W) -> Result<()> {
    writer.write_all(PATH_MAGIC)?;
    for v in values {
        writer.write_all(&v.to_le_bytes())?;
    }
    writer.flush()?;
    Ok(())
}

pub fn read_values_binary<R: Read>(mut reader: R) -> Result<Vec<f64>> {
    let mut bytes = Vec::new();
    reader.read_to_end(&mut bytes)?;
    if bytes.len() < PATH_MAGIC.len() || &bytes[..PATH_MAGIC.len()] != PATH_MAGIC {
        return Err(Error::Input("missing LRDUSTAT-PATH header".into()));
    }
    let body = &bytes[PATH_MAGIC.len()..];
    if body.len() % 8 != 0 {
        return Err(Error::Input(format!(
            "binary path body of {} bytes is not a whole number of f64 values",
            body.len()
        )));
    }
    Ok(body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect())
}
