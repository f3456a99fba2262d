//! The derivative `∂₁K^h(u, s)` of the fractional Brownian Volterra kernel for
//! `h ∈ (1/2, 1)` and its covariance inner product.

use serde::{Deserialize, Serialize};
use statrs::function::beta::{beta, beta_reg};

use crate::error::{invalid, Result};
use crate::quadrature::{EndPoint, GradedRule};

/// Kernel index `h` together with its normalisation `c_h`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelParams {
    h: f64,
    c_h: f64,
}

impl KernelParams {
    pub fn new(h: f64) -> Result<Self> {
        if !(h > 0.5 && h < 1.0) {
            return Err(invalid(format!("kernel index must lie in (1/2, 1), got {h}")));
        }
        let c_h = (h * (2.0 * h - 1.0) / beta(2.0 - 2.0 * h, h - 0.5)).sqrt();
        Ok(Self { h, c_h })
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn c_h(&self) -> f64 {
        self.c_h
    }

    /// `c_h (u/s)^{h-1/2} (u-s)^{h-3/2}` for `0 < s < u`.
    pub fn dk(&self, u: f64, s: f64) -> Result<f64> {
        if !(s > 0.0 && s < u) {
            return Err(invalid(format!("kernel derivative needs 0 < s < u, got u = {u}, s = {s}")));
        }
        Ok(self.dk_unchecked(u, s))
    }

    #[inline]
    pub(crate) fn dk_unchecked(&self, u: f64, s: f64) -> f64 {
        let h = self.h;
        self.c_h * (u / s).powf(h - 0.5) * (u - s).powf(h - 1.5)
    }

    /// `∫_0^{u∧v} ∂₁K(u,a) ∂₁K(v,a) da` by graded quadrature.
    pub fn inner_product(&self, u: f64, v: f64) -> Result<f64> {
        self.inner_product_with(u, v, &default_rule())
    }

    pub fn inner_product_with(&self, u: f64, v: f64, rule: &GradedRule) -> Result<f64> {
        if !(u > 0.0 && v > 0.0) || !(u.is_finite() && v.is_finite()) {
            return Err(invalid(format!("times must be positive, got u = {u}, v = {v}")));
        }
        if u == v {
            return Err(invalid("inner product diverges on the diagonal u == v"));
        }
        let (lo, hi) = if u < v { (u, v) } else { (v, u) };
        let h = self.h;
        let left = EndPoint::power(1.0 - 2.0 * h);
        let right = EndPoint::power(h - 1.5).with_gap(hi - lo);
        // Evaluate the factors in a form that stays accurate next to `lo`.
        let c2 = self.c_h * self.c_h;
        let total = rule.integrate(0.0, lo, left, right, |a| {
            c2 * ((u * v).sqrt() / a).powf(2.0 * h - 1.0) * ((lo - a) * (hi - a)).powf(h - 1.5)
        });
        Ok(total)
    }

    /// `∫_{lo}^{min(hi,u)} ∂₁K(u, s) ds`, in closed form through the
    /// regularised incomplete beta function. Zero when `lo >= u`.
    pub fn cell_integral(&self, u: f64, lo: f64, hi: f64) -> f64 {
        if lo >= u || hi <= lo {
            return 0.0;
        }
        let a = 1.5 - self.h;
        let b = self.h - 0.5;
        let z0 = (lo / u).max(0.0);
        let z1 = (hi / u).min(1.0);
        // Use whichever tail of the incomplete beta avoids cancellation.
        let mass = if z0 > 0.5 {
            let upper = |z: f64| if z >= 1.0 { 0.0 } else { beta_reg(b, a, 1.0 - z) };
            upper(z0) - upper(z1)
        } else {
            let lower = |z: f64| if z <= 0.0 { 0.0 } else { beta_reg(a, b, z) };
            lower(z1) - lower(z0)
        };
        self.c_h * u.powf(self.h - 0.5) * beta(a, b) * mass
    }
}

fn default_rule() -> GradedRule {
    GradedRule::new(16, 0.15, 1e-12)
}

/// `∂₁K^h(u, s)`.
pub fn dk(u: f64, s: f64, h: f64) -> Result<f64> {
    KernelParams::new(h)?.dk(u, s)
}

/// Quadrature value of `∫_0^{u∧v} ∂₁K^h(u,a) ∂₁K^h(v,a) da`.
pub fn kernel_inner_product(u: f64, v: f64, h: f64) -> Result<f64> {
    KernelParams::new(h)?.inner_product(u, v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature::GaussLegendre;
    use proptest::prelude::*;

    fn closed_form(u: f64, v: f64, h: f64) -> f64 {
        h * (2.0 * h - 1.0) * (u - v).abs().powf(2.0 * h - 2.0)
    }

    #[test]
    fn dk_reference_value() {
        let v = dk(1.0, 0.5, 0.85).unwrap();
        assert!((v - 0.658).abs() < 5e-4, "{v}");
    }

    #[test]
    fn dk_domain() {
        assert!(dk(1.0, 1.0, 0.7).is_err());
        assert!(dk(1.0, 0.0, 0.7).is_err());
        assert!(dk(0.5, 0.7, 0.7).is_err());
        assert!(dk(1.0, 0.5, 0.5).is_err());
    }

    #[test]
    fn inner_product_examples() {
        let got = kernel_inner_product(1.0, 0.5, 0.85).unwrap();
        assert!((got / closed_form(1.0, 0.5, 0.85) - 1.0).abs() < 1e-4);
        assert!((got - 0.7325).abs() < 1e-3);
        let got = kernel_inner_product(1.0, 0.999, 0.85).unwrap();
        let want = 0.595 * 0.001f64.powf(-0.3);
        assert!((got / want - 1.0).abs() < 1e-4, "{got} vs {want}");
        assert!(kernel_inner_product(0.3, 0.3, 0.85).is_err());
    }

    #[test]
    fn doubling_nodes_is_stable() {
        let k = KernelParams::new(0.8).unwrap();
        for (u, v) in [(1.0, 0.5), (0.9, 0.899), (0.01, 0.7), (1.0, 0.001)] {
            let coarse = k.inner_product_with(u, v, &GradedRule::new(16, 0.15, 1e-12)).unwrap();
            let fine = k.inner_product_with(u, v, &GradedRule::new(32, 0.15, 1e-12)).unwrap();
            assert!((coarse / fine - 1.0).abs() < 1e-6, "{u} {v}: {coarse} {fine}");
        }
    }

    #[test]
    fn node_budget() {
        let rule = default_rule();
        let h = 0.51;
        let nodes = rule.nodes(
            0.0,
            0.999,
            EndPoint::power(1.0 - 2.0 * h),
            EndPoint::power(h - 1.5).with_gap(1e-3),
        );
        assert!(nodes.len() <= 2048, "{}", nodes.len());
    }

    #[test]
    fn cell_integral_matches_quadrature() {
        let k = KernelParams::new(0.75).unwrap();
        let g = GaussLegendre::new(40);
        let u = 0.8;
        // Regular cell away from u.
        let want = g.integrate(0.2, 0.4, |s| k.dk_unchecked(u, s));
        assert!((k.cell_integral(u, 0.2, 0.4) / want - 1.0).abs() < 1e-12);
        // Cell containing u: substitute s = u - t^2 ... via graded rule.
        let rule = GradedRule::new(20, 0.15, 1e-14);
        let want = rule.integrate(0.7, u, EndPoint::REGULAR, EndPoint::power(k.h() - 1.5), |s| k.dk_unchecked(u, s));
        assert!((k.cell_integral(u, 0.7, 0.9) / want - 1.0).abs() < 1e-10);
        // Whole range: additivity over a partition.
        let parts: f64 = (0..8).map(|i| k.cell_integral(u, i as f64 * 0.1, (i + 1) as f64 * 0.1)).sum();
        assert!((parts / k.cell_integral(u, 0.0, 1.0) - 1.0).abs() < 1e-13);
        assert_eq!(k.cell_integral(u, 0.8, 0.9), 0.0);
    }

    proptest! {
        #[test]
        fn dk_positive(u in 0.01f64..1.0, frac in 0.001f64..0.999, h in 0.501f64..0.999) {
            let v = dk(u, u * frac, h).unwrap();
            prop_assert!(v > 0.0 && v.is_finite());
        }

        #[test]
        fn dk_homogeneity(u in 0.01f64..0.5, frac in 0.001f64..0.999, h in 0.501f64..0.999) {
            let s = u * frac;
            let lhs = dk(2.0 * u, 2.0 * s, h).unwrap();
            let rhs = 2f64.powf(h - 1.5) * dk(u, s, h).unwrap();
            prop_assert!((lhs / rhs - 1.0).abs() <= 1e-12);
        }

        #[test]
        fn inner_product_symmetric_and_exact(u in 0.001f64..1.0, v in 0.001f64..1.0, h in 0.501f64..0.999) {
            prop_assume!((u - v).abs() >= 1e-3);
            let a = kernel_inner_product(u, v, h).unwrap();
            let b = kernel_inner_product(v, u, h).unwrap();
            prop_assert!((a - b).abs() <= 1e-12 * a.abs());
            prop_assert!((a / closed_form(u, v, h) - 1.0).abs() <= 1e-4);
        }
    }
}
