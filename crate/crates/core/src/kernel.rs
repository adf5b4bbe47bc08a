//! Two-argument kernels h(x, y) with the metadata the fast paths and limit
//! laws need.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hermite::hermite_eval;
use crate::quad::GaussHermite;
use crate::special::{factorial, ln_factorial};

pub type KernelFn = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;
pub type CoeffFn = Arc<dyn Fn(usize, usize) -> f64 + Send + Sync>;
pub type ScoreFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum KernelTag {
    Discontinuous,
    FastCusum,
    FastWilcoxon,
    RobustScore,
}

#[derive(Clone)]
pub struct Kernel {
    name: String,
    eval: KernelFn,
    tags: BTreeSet<KernelTag>,
    tv_bound: Option<f64>,
    coeffs: Option<CoeffFn>,
    score: Option<ScoreFn>,
    mean: Option<f64>,
    cusum_sign: f64,
    spec: Option<KernelSpec>,
}

impl fmt::Debug for Kernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Kernel")
            .field("name", &self.name)
            .field("tags", &self.tags)
            .field("tv_bound", &self.tv_bound)
            .field("closed_form", &self.coeffs.is_some())
            .finish()
    }
}

impl Kernel {
    /// Arbitrary kernel without fast path or closed-form coefficients.
    pub fn custom<F>(name: &str, f: F) -> Self
    where
        F: Fn(f64, f64) -> f64 + Send + Sync + 'static,
    {
        Self {
            name: name.to_string(),
            eval: Arc::new(f),
            tags: BTreeSet::new(),
            tv_bound: None,
            coeffs: None,
            score: None,
            mean: None,
            cusum_sign: 1.0,
            spec: None,
        }
    }

    /// h(x, y) = x − y.
    pub fn cusum() -> Self {
        Self::signed_cusum(1.0)
    }

    /// h(x, y) = y − x, the opposite sign convention.
    pub fn cusum_reversed() -> Self {
        Self::signed_cusum(-1.0)
    }

    fn signed_cusum(sign: f64) -> Self {
        let name = if sign > 0.0 { "cusum" } else { "cusum-reversed" };
        let mut k = Self::custom(name, move |x, y| sign * (x - y));
        k.tags.insert(KernelTag::FastCusum);
        k.cusum_sign = sign;
        k.mean = Some(0.0);
        k.coeffs = Some(Arc::new(move |a, b| match (a, b) {
            (1, 0) => sign,
            (0, 1) => -sign,
            _ => 0.0,
        }));
        k.spec = Some(if sign > 0.0 {
            KernelSpec::Cusum
        } else {
            KernelSpec::CusumReversed
        });
        k
    }

    /// h(x, y) = 1{x ≤ y}.
    pub fn wilcoxon() -> Self {
        let mut k = Self::custom("wilcoxon", |x, y| if x <= y { 1.0 } else { 0.0 });
        k.tags.insert(KernelTag::Discontinuous);
        k.tags.insert(KernelTag::FastWilcoxon);
        k.tv_bound = Some(1.0);
        k.mean = Some(0.5);
        k.coeffs = Some(Arc::new(crate::hermite::wilcoxon_coeff_closed_form));
        k.spec = Some(KernelSpec::Wilcoxon);
        k
    }

    /// h(x, y) = Ψ(x − y) for a bounded score Ψ with total variation `tv`.
    pub fn robust<F>(name: &str, psi: F, tv: f64) -> Result<Self>
    where
        F: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        let psi: ScoreFn = Arc::new(psi);
        check_bounded(&*psi)?;
        let p = psi.clone();
        let mut k = Self::custom(name, move |x, y| p(x - y));
        k.tags.insert(KernelTag::RobustScore);
        k.tv_bound = Some(tv);
        k.score = Some(psi);
        Ok(k)
    }

    /// Huber score Ψ(t) = clamp(t, −δ, δ).
    pub fn huber(delta: f64) -> Result<Self> {
        if !(delta > 0.0 && delta.is_finite()) {
            return Err(Error::Parameter(format!("Huber δ = {delta} must be positive")));
        }
        let mut k = Self::robust(&format!("huber:{delta}"), move |t| t.clamp(-delta, delta), 2.0 * delta)?;
        k.mean = Some(0.0);
        k.spec = Some(KernelSpec::Huber { delta });
        Ok(k)
    }

    /// Tukey biweight Ψ(t) = t(1 − (t/c)²)² on |t| ≤ c, zero outside.
    pub fn tukey(c: f64) -> Result<Self> {
        if !(c > 0.0 && c.is_finite()) {
            return Err(Error::Parameter(format!("Tukey c = {c} must be positive")));
        }
        let psi = move |t: f64| {
            if t.abs() <= c {
                let u = 1.0 - (t / c).powi(2);
                t * u * u
            } else {
                0.0
            }
        };
        // extrema ±16c/(25√5) at t = ±c/√5; Ψ rises and falls twice
        let tv = 4.0 * 16.0 * c / (25.0 * 5f64.sqrt());
        let mut k = Self::robust(&format!("tukey:{c}"), psi, tv)?;
        k.mean = Some(0.0);
        k.spec = Some(KernelSpec::Tukey { c });
        Ok(k)
    }

    /// h(x, y) = exp(−x² − y²) (not centered; its mean is 1/3).
    pub fn gaussian_bump() -> Self {
        let mut k = Self::custom("bump", |x, y| (-x * x - y * y).exp());
        k.mean = Some(1.0 / 3.0);
        k.tv_bound = Some(2.0);
        k.coeffs = Some(Arc::new(|a, b| bump_coeff_1d(a) * bump_coeff_1d(b)));
        k.spec = Some(KernelSpec::Bump);
        k
    }

    /// h(x, y) = H_k(x)·H_l(y).
    pub fn hermite_product(k: usize, l: usize) -> Self {
        let mut ker = Self::custom(&format!("hermite:{k},{l}"), move |x, y| {
            hermite_eval(k, x) * hermite_eval(l, y)
        });
        ker.mean = Some(if k == 0 && l == 0 { 1.0 } else { 0.0 });
        let norm = factorial(k) * factorial(l);
        ker.coeffs = Some(Arc::new(move |a, b| if a == k && b == l { norm } else { 0.0 }));
        ker.spec = Some(KernelSpec::HermiteProduct { k, l });
        ker
    }

    pub fn zero() -> Self {
        let mut k = Self::custom("zero", |_, _| 0.0);
        k.mean = Some(0.0);
        k.tv_bound = Some(0.0);
        k.coeffs = Some(Arc::new(|_, _| 0.0));
        k.spec = Some(KernelSpec::Zero);
        k
    }

    /// c·h, with coefficients, mean and TV bound scaled accordingly.
    pub fn scaled(&self, c: f64) -> Self {
        let f = self.eval.clone();
        let mut k = Self::custom(&format!("{}*{c}", self.name), move |x, y| c * f(x, y));
        k.tags = self
            .tags
            .iter()
            .copied()
            .filter(|t| matches!(t, KernelTag::Discontinuous))
            .collect();
        k.mean = self.mean.map(|m| c * m);
        k.tv_bound = self.tv_bound.map(|t| c.abs() * t);
        k.coeffs = self
            .coeffs
            .clone()
            .map(|g| -> CoeffFn { Arc::new(move |a, b| c * g(a, b)) });
        k
    }

    /// h − E[h(ξ, η)], the mean taken under two independent standard normals.
    pub fn centered(&self) -> Self {
        let mean = self.mean_under_normal();
        if mean == 0.0 {
            return self.clone();
        }
        let f = self.eval.clone();
        let mut k = self.clone();
        k.name = format!("{}-centered", self.name);
        k.eval = Arc::new(move |x, y| f(x, y) - mean);
        k.mean = Some(0.0);
        k.tags.remove(&KernelTag::FastCusum);
        k.tags.remove(&KernelTag::FastWilcoxon);
        k.coeffs = self
            .coeffs
            .clone()
            .map(|g| -> CoeffFn { Arc::new(move |a, b| if a == 0 && b == 0 { 0.0 } else { g(a, b) }) });
        k.spec = None;
        k
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    #[inline]
    pub fn eval(&self, x: f64, y: f64) -> f64 {
        (self.eval)(x, y)
    }

    pub fn tags(&self) -> &BTreeSet<KernelTag> {
        &self.tags
    }

    pub fn has_tag(&self, tag: KernelTag) -> bool {
        self.tags.contains(&tag)
    }

    pub fn is_discontinuous(&self) -> bool {
        self.has_tag(KernelTag::Discontinuous)
    }

    pub fn tv_bound(&self) -> Option<f64> {
        self.tv_bound
    }

    pub fn closed_form(&self) -> Option<&CoeffFn> {
        self.coeffs.as_ref()
    }

    pub fn score(&self) -> Option<&ScoreFn> {
        self.score.as_ref()
    }

    /// Sign s in h(x, y) = s·(x − y) for FastCusum kernels.
    pub fn cusum_sign(&self) -> f64 {
        self.cusum_sign
    }

    pub fn spec(&self) -> Option<&KernelSpec> {
        self.spec.as_ref()
    }

    /// E[h(ξ, η)] for independent standard normals: known value when
    /// available, otherwise a 200×200 Gauss–Hermite estimate.
    pub fn mean_under_normal(&self) -> f64 {
        if let Some(m) = self.mean {
            return m;
        }
        let gh = GaussHermite::new(200);
        let mut total = 0.0;
        for (&x, &wx) in gh.nodes.iter().zip(&gh.weights) {
            let inner: f64 = gh
                .nodes
                .iter()
                .zip(&gh.weights)
                .map(|(&y, &wy)| wy * self.eval(x, y))
                .sum();
            total += wx * inner;
        }
        total
    }
}

fn check_bounded(psi: &dyn Fn(f64) -> f64) -> Result<()> {
    let probe = |lim: f64| {
        (0..=2000)
            .map(|i| psi(-lim + 2.0 * lim * i as f64 / 2000.0).abs())
            .fold(0.0_f64, f64::max)
    };
    let near = probe(50.0);
    let far = probe(1e6);
    if !far.is_finite() || far > 1.0 + 10.0 * near {
        return Err(Error::Parameter(format!(
            "score function must be bounded (sup on [-50, 50] is {near}, on [-1e6, 1e6] is {far})"
        )));
    }
    Ok(())
}

/// a_k = E[exp(−ξ²) H_k(ξ)] = k!·[t^k] exp(−t²/3)/√3.
fn bump_coeff_1d(k: usize) -> f64 {
    if k % 2 == 1 {
        return 0.0;
    }
    let j = k / 2;
    let sign = if j.is_multiple_of(2) { 1.0 } else { -1.0 };
    let log_mag = ln_factorial(k) - ln_factorial(j) - j as f64 * 3f64.ln();
    sign * log_mag.exp() / 3f64.sqrt()
}

/// Serializable name of a built-in kernel, e.g. `wilcoxon` or `huber:1.345`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum KernelSpec {
    Cusum,
    CusumReversed,
    Wilcoxon,
    Huber { delta: f64 },
    Tukey { c: f64 },
    Bump,
    HermiteProduct { k: usize, l: usize },
    Zero,
}

impl KernelSpec {
    pub fn build(&self) -> Result<Kernel> {
        Ok(match *self {
            KernelSpec::Cusum => Kernel::cusum(),
            KernelSpec::CusumReversed => Kernel::cusum_reversed(),
            KernelSpec::Wilcoxon => Kernel::wilcoxon(),
            KernelSpec::Huber { delta } => Kernel::huber(delta)?,
            KernelSpec::Tukey { c } => Kernel::tukey(c)?,
            KernelSpec::Bump => Kernel::gaussian_bump(),
            KernelSpec::HermiteProduct { k, l } => Kernel::hermite_product(k, l),
            KernelSpec::Zero => Kernel::zero(),
        })
    }
}

impl fmt::Display for KernelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KernelSpec::Cusum => write!(f, "cusum"),
            KernelSpec::CusumReversed => write!(f, "cusum-reversed"),
            KernelSpec::Wilcoxon => write!(f, "wilcoxon"),
            KernelSpec::Huber { delta } => write!(f, "huber:{delta}"),
            KernelSpec::Tukey { c } => write!(f, "tukey:{c}"),
            KernelSpec::Bump => write!(f, "bump"),
            KernelSpec::HermiteProduct { k, l } => write!(f, "hermite:{k},{l}"),
            KernelSpec::Zero => write!(f, "zero"),
        }
    }
}

impl FromStr for KernelSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        let (head, arg) = match s.split_once(':') {
            Some((h, a)) => (h, Some(a)),
            None => (s.as_str(), None),
        };
        let num = |a: Option<&str>, default: f64| -> Result<f64> {
            a.map_or(Ok(default), |v| {
                v.parse()
                    .map_err(|_| Error::Parameter(format!("bad kernel parameter '{v}'")))
            })
        };
        Ok(match head {
            "cusum" => KernelSpec::Cusum,
            "cusum-reversed" => KernelSpec::CusumReversed,
            "wilcoxon" => KernelSpec::Wilcoxon,
            "huber" => KernelSpec::Huber { delta: num(arg, 1.345)? },
            "tukey" => KernelSpec::Tukey { c: num(arg, 4.685)? },
            "bump" => KernelSpec::Bump,
            "zero" => KernelSpec::Zero,
            "hermite" => {
                let arg = arg.ok_or_else(|| Error::Parameter("hermite kernel needs 'hermite:k,l'".into()))?;
                let (k, l) = arg
                    .split_once(',')
                    .ok_or_else(|| Error::Parameter("hermite kernel needs 'hermite:k,l'".into()))?;
                let parse = |v: &str| {
                    v.trim().parse::<usize>().map_err(|_| Error::Parameter(format!("bad Hermite degree '{v}'")))
                };
                KernelSpec::HermiteProduct { k: parse(k)?, l: parse(l)? }
            }
            other => {
                return Err(Error::Parameter(format!(
                    "unknown kernel '{other}' (expected cusum, cusum-reversed, wilcoxon, huber[:δ], tukey[:c], bump, hermite:k,l, zero)"
                )))
            }
        })
    }
}

impl From<KernelSpec> for String {
    fn from(k: KernelSpec) -> String {
        k.to_string()
    }
}

impl TryFrom<String> for KernelSpec {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

/// Total-variation probe of h(·, y) and h(x, ·) on a finite grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TvReport {
    pub max_tv_first: f64,
    pub max_tv_second: f64,
    pub bound: Option<f64>,
    pub violated: bool,
}

/// Probes the TV conditions on [−range, range]; `violated` is set when no
/// bound is declared or the probed variation exceeds it.
pub fn tv_probe(kernel: &Kernel, range: f64, points: usize) -> TvReport {
    let points = points.max(3);
    let grid: Vec<f64> = (0..points)
        .map(|i| -range + 2.0 * range * i as f64 / (points - 1) as f64)
        .collect();
    let anchors: Vec<f64> = (0..41).map(|i| -range + 2.0 * range * i as f64 / 40.0).collect();
    let tv = |f: &dyn Fn(f64) -> f64| grid.windows(2).map(|w| (f(w[1]) - f(w[0])).abs()).sum::<f64>();
    let max_tv_first = anchors
        .iter()
        .map(|&y| tv(&|x| kernel.eval(x, y)))
        .fold(0.0_f64, f64::max);
    let max_tv_second = anchors
        .iter()
        .map(|&x| tv(&|y| kernel.eval(x, y)))
        .fold(0.0_f64, f64::max);
    let bound = kernel.tv_bound();
    let violated = match bound {
        Some(c) => max_tv_first.max(max_tv_second) > c * (1.0 + 1e-9) + 1e-12,
        None => true,
    };
    TvReport {
        max_tv_first,
        max_tv_second,
        bound,
        violated,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_kernels_evaluate() {
        assert_eq!(Kernel::cusum().eval(3.0, 1.0), 2.0);
        assert_eq!(Kernel::cusum_reversed().eval(3.0, 1.0), -2.0);
        assert_eq!(Kernel::wilcoxon().eval(1.0, 1.0), 1.0);
        assert_eq!(Kernel::wilcoxon().eval(1.5, 1.0), 0.0);
        assert_eq!(Kernel::huber(1.0).unwrap().eval(5.0, 0.0), 1.0);
        assert_eq!(Kernel::tukey(2.0).unwrap().eval(3.0, 0.0), 0.0);
        assert_eq!(Kernel::hermite_product(2, 1).eval(0.0, 2.0), -2.0);
    }

    #[test]
    fn unbounded_score_is_rejected() {
        assert!(Kernel::robust("linear", |t| t, 1.0).is_err());
        assert!(Kernel::robust("atan", f64::atan, std::f64::consts::PI).is_ok());
    }

    #[test]
    fn tukey_tv_matches_probe() {
        let k = Kernel::tukey(3.0).unwrap();
        let report = tv_probe(&k, 10.0, 20001);
        assert!((report.max_tv_first - k.tv_bound().unwrap()).abs() < 1e-3, "{report:?}");
        assert!(!report.violated);
    }

    #[test]
    fn tv_probe_flags_cusum() {
        let report = tv_probe(&Kernel::cusum(), 10.0, 201);
        assert!(report.violated);
        assert!(!tv_probe(&Kernel::wilcoxon(), 10.0, 201).violated);
        assert!(!tv_probe(&Kernel::huber(1.0).unwrap(), 10.0, 201).violated);
    }

    #[test]
    fn means() {
        assert!((Kernel::custom("bump", |x, y| (-x * x - y * y).exp()).mean_under_normal() - 1.0 / 3.0).abs() < 1e-12);
        let c = Kernel::wilcoxon().centered();
        assert_eq!(c.eval(0.0, 1.0), 0.5);
        assert!(!c.has_tag(KernelTag::FastWilcoxon));
        assert_eq!(c.closed_form().unwrap()(0, 0), 0.0);
    }

    #[test]
    fn spec_round_trip() {
        for s in [
            "cusum",
            "cusum-reversed",
            "wilcoxon",
            "huber:1.5",
            "tukey:4.685",
            "bump",
            "hermite:2,1",
            "zero",
        ] {
            let spec: KernelSpec = s.parse().unwrap();
            assert_eq!(spec.to_string(), s);
            spec.build().unwrap();
        }
        assert!("nope".parse::<KernelSpec>().is_err());
        assert_eq!(
            serde_json::to_string(&KernelSpec::Huber { delta: 2.0 }).unwrap(),
            "\"huber:2\""
        );
    }
}
