//! Quadrature rules: Gauss–Hermite in the standard normal weight and an
//! adaptive Gauss–Kronrod integrator for finite intervals.

use std::f64::consts::PI;

/// Nodes and weights for E[f(ξ)], ξ ~ N(0,1): Σ wᵢ f(xᵢ) with Σ wᵢ = 1.
#[derive(Debug, Clone)]
pub struct GaussHermite {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussHermite {
    /// Roots of the orthonormal physicists' Hermite polynomial are bracketed
    /// by a sign scan and polished by safeguarded Newton, then rescaled to
    /// the probabilists' weight.
    pub fn new(order: usize) -> Self {
        assert!(order >= 1, "Gauss-Hermite order must be positive");
        let n = order;
        let nf = n as f64;
        let pim4 = PI.powf(-0.25);
        // (ψ_n(z), ψ_{n-1}(z)) without the Gaussian factor
        let eval = |z: f64| {
            let mut p1 = pim4;
            let mut p2 = 0.0;
            for j in 1..=n {
                let p3 = p2;
                p2 = p1;
                let jf = j as f64;
                p1 = z * (2.0 / jf).sqrt() * p2 - ((jf - 1.0) / jf).sqrt() * p3;
            }
            (p1, p2)
        };
        let upper = (2.0 * nf + 1.0).sqrt() + 1.0;
        let step = PI / (8.0 * (2.0 * nf + 1.0).sqrt());
        let mut roots = Vec::with_capacity(n.div_ceil(2));
        if n % 2 == 1 {
            roots.push(0.0);
        }
        let mut a = if n % 2 == 1 { step * 0.5 } else { 0.0 };
        let mut fa = eval(a).0;
        while a < upper && roots.len() < n.div_ceil(2) {
            let b = a + step;
            let fb = eval(b).0;
            if fa == 0.0 {
                roots.push(a);
            } else if fa.signum() != fb.signum() {
                let (mut lo, mut hi, flo) = (a, b, fa);
                let mut z = 0.5 * (lo + hi);
                for _ in 0..200 {
                    let (p1, p2) = eval(z);
                    if p1 == 0.0 {
                        break;
                    }
                    if p1.signum() == flo.signum() {
                        lo = z;
                    } else {
                        hi = z;
                    }
                    let pp = (2.0 * nf).sqrt() * p2;
                    let mut next = z - p1 / pp;
                    if !(next > lo && next < hi) {
                        next = 0.5 * (lo + hi);
                    }
                    let done = (next - z).abs() <= 4.0 * f64::EPSILON * z.abs().max(1.0);
                    z = next;
                    if done {
                        break;
                    }
                }
                roots.push(z);
            }
            a = b;
            fa = fb;
        }
        assert_eq!(roots.len(), n.div_ceil(2), "Gauss-Hermite root scan failed");
        let mut z_nodes = Vec::with_capacity(n);
        let mut w_nodes = Vec::with_capacity(n);
        for &z in &roots {
            let pp = (2.0 * nf).sqrt() * eval(z).1;
            let w = 2.0 / (pp * pp);
            z_nodes.push(z);
            w_nodes.push(w);
            if z != 0.0 {
                z_nodes.push(-z);
                w_nodes.push(w);
            }
        }
        let mut pairs: Vec<(f64, f64)> = z_nodes
            .iter()
            .zip(&w_nodes)
            .map(|(&z, &w)| (z * std::f64::consts::SQRT_2, w / PI.sqrt()))
            .collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        // renormalize away the last few ulps so that Σw = 1
        let total: f64 = pairs.iter().map(|p| p.1).sum();
        Self {
            nodes: pairs.iter().map(|p| p.0).collect(),
            weights: pairs.iter().map(|p| p.1 / total).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Σ wᵢ f(xᵢ)
    pub fn expect<F: Fn(f64) -> f64>(&self, f: F) -> f64 {
        self.nodes.iter().zip(&self.weights).map(|(&x, &w)| w * f(x)).sum()
    }
}

const GK_NODES: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const K15_WEIGHTS: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
const G7_WEIGHTS: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

fn gk15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut kronrod = K15_WEIGHTS[7] * fc;
    let mut gauss = G7_WEIGHTS[3] * fc;
    for i in 0..7 {
        let dx = h * GK_NODES[i];
        let s = f(c - dx) + f(c + dx);
        kronrod += K15_WEIGHTS[i] * s;
        if i % 2 == 1 {
            gauss += G7_WEIGHTS[i / 2] * s;
        }
    }
    (kronrod * h, ((kronrod - gauss) * h).abs())
}

fn adapt<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64, depth: usize) -> f64 {
    let (val, err) = gk15(f, a, b);
    if err <= tol || depth == 0 || (b - a).abs() < 1e-12 {
        return val;
    }
    let c = 0.5 * (a + b);
    adapt(f, a, c, 0.5 * tol, depth - 1) + adapt(f, c, b, 0.5 * tol, depth - 1)
}

/// Adaptive Gauss–Kronrod (7/15) integral of `f` over [a, b].
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, tol: f64) -> f64 {
    if a == b {
        return 0.0;
    }
    if a > b {
        return -integrate(f, b, a, tol);
    }
    adapt(&f, a, b, tol, 40)
}
