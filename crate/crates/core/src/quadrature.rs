//! Gauss–Legendre rules and geometrically graded composites for integrands
//! with algebraic endpoint singularities.

use std::f64::consts::PI;
use std::sync::{Arc, RwLock};

/// An `n`-point Gauss–Legendre rule on `[-1, 1]`.
#[derive(Debug, Clone)]
pub struct GaussLegendre {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl GaussLegendre {
    /// Nodes are the roots of `P_n`, found by Newton iteration from the
    /// Tricomi initial guesses.
    pub fn new(n: usize) -> Self {
        assert!(n >= 1, "Gauss-Legendre rule needs at least one node");
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        let nf = n as f64;
        for i in 0..n.div_ceil(2) {
            let mut x = (PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
            let mut dp = 1.0;
            for _ in 0..100 {
                let (p, d) = legendre_with_derivative(n, x);
                dp = d;
                let dx = p / d;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            let (_, d) = legendre_with_derivative(n, x);
            if d != 0.0 {
                dp = d;
            }
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            nodes[i] = -x;
            nodes[n - 1 - i] = x;
            weights[i] = w;
            weights[n - 1 - i] = w;
        }
        if n % 2 == 1 {
            nodes[n / 2] = 0.0;
        }
        Self { nodes, weights }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Nodes and weights mapped to `[a, b]`, appended to `out`.
    pub fn push_mapped(&self, a: f64, b: f64, out: &mut Vec<(f64, f64)>) {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        for (&x, &w) in self.nodes.iter().zip(&self.weights) {
            out.push((mid + half * x, half * w));
        }
    }

    pub fn integrate<F: FnMut(f64) -> f64>(&self, a: f64, b: f64, mut f: F) -> f64 {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        let mut acc = 0.0;
        for (&x, &w) in self.nodes.iter().zip(&self.weights) {
            acc += w * f(mid + half * x);
        }
        acc * half
    }
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Behaviour of an integrand at one end of an integration interval.
///
/// `exponent` is the algebraic order of the singularity sitting exactly at the
/// end (`0` for none); `gap` is the distance from the end to the nearest
/// singular point lying outside the interval (infinite for none).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EndPoint {
    pub exponent: f64,
    pub gap: f64,
}

impl EndPoint {
    pub const REGULAR: EndPoint = EndPoint {
        exponent: 0.0,
        gap: f64::INFINITY,
    };

    pub fn power(exponent: f64) -> Self {
        Self {
            exponent,
            gap: f64::INFINITY,
        }
    }

    pub fn near(gap: f64) -> Self {
        Self { exponent: 0.0, gap }
    }

    pub fn with_gap(self, gap: f64) -> Self {
        Self {
            gap: self.gap.min(gap),
            ..self
        }
    }

    fn is_regular(&self) -> bool {
        self.exponent == 0.0 && self.gap.is_infinite()
    }
}

/// Gauss rule for `∫_0^1 t^e g(t) dt` with `e > -1`, built by the
/// Golub–Welsch eigenvalue method from the Jacobi recurrence.
#[derive(Debug, Clone)]
pub struct GaussJacobi {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl GaussJacobi {
    pub fn new(n: usize, exponent: f64) -> Self {
        assert!(n >= 1 && exponent > -1.0);
        // Weight (1 + x)^beta on [-1, 1], alpha = 0.
        let beta = exponent;
        let mut diag = vec![0.0; n];
        let mut off = vec![0.0; n];
        for (k, d) in diag.iter_mut().enumerate() {
            let kf = k as f64;
            let s = 2.0 * kf + beta;
            *d = if k == 0 {
                beta / (beta + 2.0)
            } else {
                beta * beta / (s * (s + 2.0))
            };
        }
        for (k, o) in off.iter_mut().enumerate().skip(1) {
            let kf = k as f64;
            let s = 2.0 * kf + beta;
            let b2 = if k == 1 {
                4.0 * (1.0 + beta) / ((2.0 + beta).powi(2) * (3.0 + beta))
            } else {
                4.0 * kf * kf * (kf + beta) * (kf + beta) / (s * s * (s + 1.0) * (s - 1.0))
            };
            *o = b2.sqrt();
        }
        let (values, first) = symmetric_tridiagonal_eigen(diag, off);
        let mu0 = 2f64.powf(1.0 + beta) / (1.0 + beta);
        let mut pairs: Vec<(f64, f64)> = values
            .into_iter()
            .zip(first)
            .map(|(x, v)| (0.5 * (x + 1.0), mu0 * v * v / 2f64.powf(1.0 + beta)))
            .collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        Self {
            nodes: pairs.iter().map(|p| p.0).collect(),
            weights: pairs.iter().map(|p| p.1).collect(),
        }
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
}

/// Eigenvalues and first eigenvector components of the symmetric tridiagonal
/// matrix with diagonal `d` and sub-diagonal `e[1..]`, by implicit QL.
fn symmetric_tridiagonal_eigen(mut d: Vec<f64>, mut e: Vec<f64>) -> (Vec<f64>, Vec<f64>) {
    let n = d.len();
    let mut z = vec![0.0; n];
    z[0] = 1.0;
    for i in 1..n {
        e[i - 1] = e[i];
    }
    e[n - 1] = 0.0;
    for l in 0..n {
        let mut iter = 0;
        loop {
            let mut m = l;
            while m + 1 < n {
                let dd = d[m].abs() + d[m + 1].abs();
                if e[m].abs() <= f64::EPSILON * dd {
                    break;
                }
                m += 1;
            }
            if m == l {
                break;
            }
            iter += 1;
            assert!(iter < 60, "tridiagonal eigen solver did not converge");
            let mut g = (d[l + 1] - d[l]) / (2.0 * e[l]);
            let mut r = g.hypot(1.0);
            g = d[m] - d[l] + e[l] / (g + r.copysign(g));
            let (mut s, mut c, mut p) = (1.0, 1.0, 0.0);
            let mut i = m;
            let mut underflow = false;
            while i > l {
                i -= 1;
                let f = s * e[i];
                let b = c * e[i];
                r = f.hypot(g);
                e[i + 1] = r;
                if r == 0.0 {
                    d[i + 1] -= p;
                    e[m] = 0.0;
                    underflow = true;
                    break;
                }
                s = f / r;
                c = g / r;
                g = d[i + 1] - p;
                r = (d[i] - g) * s + 2.0 * c * b;
                p = s * r;
                d[i + 1] = g + p;
                g = c * r - b;
                let zf = z[i + 1];
                z[i + 1] = s * z[i] + c * zf;
                z[i] = c * z[i] - s * zf;
            }
            if underflow {
                continue;
            }
            d[l] -= p;
            e[l] = g;
            e[m] = 0.0;
        }
    }
    (d, z)
}

/// Composite Gauss–Legendre rule graded geometrically toward singular ends.
///
/// An interval with a non-regular end is split into layers whose widths shrink
/// by `ratio` toward that end. A negative-order singularity is absorbed in the
/// innermost layer by a Gauss–Jacobi rule; non-negative orders are resolved by
/// layering alone.
#[derive(Debug)]
pub struct GradedRule {
    rule: GaussLegendre,
    jacobi_cache: RwLock<Vec<(u64, Arc<GaussJacobi>)>>,
    ratio: f64,
    tolerance: f64,
    min_layers: usize,
    max_layers: usize,
}

impl Clone for GradedRule {
    fn clone(&self) -> Self {
        Self {
            rule: self.rule.clone(),
            jacobi_cache: RwLock::new(Vec::new()),
            ratio: self.ratio,
            tolerance: self.tolerance,
            min_layers: self.min_layers,
            max_layers: self.max_layers,
        }
    }
}

impl GradedRule {
    pub fn new(points: usize, ratio: f64, tolerance: f64) -> Self {
        assert!(ratio > 0.0 && ratio < 1.0);
        Self {
            rule: GaussLegendre::new(points),
            jacobi_cache: RwLock::new(Vec::new()),
            ratio,
            tolerance,
            min_layers: 2,
            max_layers: 60,
        }
    }

    /// Layers always placed next to a singular end, even when it is weak.
    pub fn with_min_layers(mut self, n: usize) -> Self {
        self.min_layers = n;
        self
    }

    fn jacobi(&self, exponent: f64) -> Arc<GaussJacobi> {
        let key = exponent.to_bits();
        if let Some((_, rule)) = self.jacobi_cache.read().expect("cache lock").iter().find(|(k, _)| *k == key) {
            return rule.clone();
        }
        let rule = Arc::new(GaussJacobi::new(self.rule.len(), exponent));
        let mut cache = self.jacobi_cache.write().expect("cache lock");
        if cache.len() > 256 {
            cache.clear();
        }
        cache.push((key, rule.clone()));
        rule
    }

    pub fn points_per_panel(&self) -> usize {
        self.rule.len()
    }

    fn layers(&self, width: f64, end: EndPoint) -> usize {
        if end.is_regular() {
            return 0;
        }
        let ln_r = self.ratio.ln();
        let mut layers = 0usize;
        if end.exponent != 0.0 {
            layers = self.min_layers;
            if end.exponent > 0.0 {
                let need = self.tolerance.ln() / ((end.exponent + 1.0) * ln_r);
                layers = layers.max(need.ceil() as usize);
            }
        }
        if end.gap.is_finite() && end.gap < width {
            let need = (0.5 * end.gap / width).ln() / ln_r;
            layers = layers.max(need.ceil().max(1.0) as usize);
        }
        layers.min(self.max_layers)
    }

    /// Nodes graded toward `a` on `[a, b]` (or toward `b` when `toward_left` is false).
    fn push_one_sided(&self, a: f64, b: f64, end: EndPoint, toward_left: bool, out: &mut Vec<(f64, f64)>) {
        let width = b - a;
        if width <= 0.0 {
            return;
        }
        let layers = self.layers(width, end);
        let at = |offset: f64| if toward_left { a + offset } else { b - offset };
        let mut outer = width;
        for _ in 0..layers {
            let inner = outer * self.ratio;
            let (lo, hi) = if toward_left {
                (at(inner), at(outer))
            } else {
                (at(outer), at(inner))
            };
            self.rule.push_mapped(lo, hi, out);
            outer = inner;
        }
        if end.exponent < 0.0 {
            let jacobi = self.jacobi(end.exponent);
            let e = end.exponent;
            for (&t, &w) in jacobi.nodes.iter().zip(&jacobi.weights) {
                // The rule integrates t^e g(t); callers pass f = t^e g, so divide it back out.
                out.push((at(outer * t), outer * w / t.powf(e)));
            }
        } else {
            let (lo, hi) = if toward_left { (a, at(outer)) } else { (at(outer), b) };
            self.rule.push_mapped(lo, hi, out);
        }
    }

    /// Append weighted nodes for `[a, b]` given the behaviour at each end.
    pub fn push_nodes(&self, a: f64, b: f64, left: EndPoint, right: EndPoint, out: &mut Vec<(f64, f64)>) {
        if b <= a {
            return;
        }
        match (left.is_regular(), right.is_regular()) {
            (true, true) => self.rule.push_mapped(a, b, out),
            (false, true) => self.push_one_sided(a, b, left, true, out),
            (true, false) => self.push_one_sided(a, b, right, false, out),
            (false, false) => {
                let mid = 0.5 * (a + b);
                self.push_one_sided(a, mid, left, true, out);
                self.push_one_sided(mid, b, right, false, out);
            }
        }
    }

    pub fn nodes(&self, a: f64, b: f64, left: EndPoint, right: EndPoint) -> Vec<(f64, f64)> {
        let mut out = Vec::new();
        self.push_nodes(a, b, left, right, &mut out);
        out
    }

    pub fn integrate<F: FnMut(f64) -> f64>(&self, a: f64, b: f64, left: EndPoint, right: EndPoint, mut f: F) -> f64 {
        self.nodes(a, b, left, right)
            .into_iter()
            .map(|(x, w)| w * f(x))
            .sum()
    }
}
