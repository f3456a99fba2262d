//! Model parameters, derived exponents and the closed-form constants.
//!
//! Every vector-valued expression (`N^{2H}`, `H'(2H'-1)`, ...) is read as the
//! product over axes of the scalar expression.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Largest Hermite order whose factorial-based constants are computed exactly.
pub const MAX_ORDER: u32 = 20;

/// Per-axis self-similarity indices, each strictly inside (1/2, 1).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct HurstVector(Vec<f64>);

impl HurstVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Empty("Hurst vector"));
        }
        for (axis, &value) in values.iter().enumerate() {
            if !(value > 0.5 && value < 1.0) {
                return Err(Error::HurstOutOfRange { axis, value });
            }
        }
        Ok(Self(values))
    }

    /// The same index on each of `dim` axes.
    pub fn uniform(dim: usize, h: f64) -> Result<Self> {
        Self::new(vec![h; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

impl TryFrom<Vec<f64>> for HurstVector {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<HurstVector> for Vec<f64> {
    fn from(h: HurstVector) -> Self {
        h.0
    }
}

/// The exponents attached to one axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AxisExponents {
    /// `H`.
    pub hurst: f64,
    /// `1 + (H - 1)/q`, the index of the Gaussian substrate.
    pub substrate: f64,
    /// `2H' - 1 = 1 + (2H - 2)/q`, the index of the limiting Rosenblatt sheet.
    pub rosenblatt: f64,
    /// `(2 - 2H)/q`, the growth rate in the normalisation of the limit theorem.
    pub rate: f64,
}

impl AxisExponents {
    /// `H'(2H' - 1)`.
    pub fn substrate_variance_factor(&self) -> f64 {
        self.substrate * (2.0 * self.substrate - 1.0)
    }

    /// `2H' - 2`, the exponent of the substrate covariance density.
    pub fn covariance_exponent(&self) -> f64 {
        2.0 * self.substrate - 2.0
    }
}

fn check_order(q: u32) -> Result<()> {
    if q == 0 || q > MAX_ORDER {
        return Err(Error::OrderOutOfRange(q));
    }
    Ok(())
}

/// Per-axis exponents for order `q`.
pub fn derive_exponents(q: u32, hurst: &HurstVector) -> Result<Vec<AxisExponents>> {
    check_order(q)?;
    let qf = f64::from(q);
    Ok(hurst
        .as_slice()
        .iter()
        .map(|&h| {
            let substrate = 1.0 + (h - 1.0) / qf;
            AxisExponents {
                hurst: h,
                substrate,
                rosenblatt: 2.0 * substrate - 1.0,
                rate: (2.0 - 2.0 * h) / qf,
            }
        })
        .collect())
}

/// `n!`, exact for `n <= 20`.
pub fn factorial(n: u32) -> u64 {
    (1..=u64::from(n)).product()
}

fn binomial(n: u32, k: u32) -> u128 {
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * u128::from(n - i) / u128::from(i + 1);
    }
    acc
}

/// Multiplicities `r! C(q,r)^2` of the chaos components `F_{2q-2r}` of the
/// quadratic variation, indexed by `r = 0..q-1`.
pub fn chaos_coefficients(q: u32) -> Result<Vec<u128>> {
    check_order(q)?;
    Ok((0..q)
        .map(|r| {
            let c = binomial(q, r);
            u128::from(factorial(r)) * c * c
        })
        .collect())
}

/// The normalising constant `b` of the finite-time kernel representation,
/// making `E[Z(1)^2] = 1`.
pub fn normalizing_constant_b(q: u32, hurst: &HurstVector) -> Result<f64> {
    let axes = derive_exponents(q, hurst)?;
    let qf = factorial(q) as f64;
    let mut b = qf.sqrt().powi(axes.len() as i32 - 1);
    for ax in &axes {
        let h = ax.hurst;
        b *= (h * (2.0 * h - 1.0)).sqrt()
            / (qf * ax.substrate_variance_factor().powi(q as i32)).sqrt();
    }
    Ok(b)
}

/// Per-axis factor `2 / [(4H'-3)(4H'-2)((2H'-2)(q-1)+1)^2((H'-1)(q-1)+1)^2]`.
fn f3_axis_factor(q: u32, ax: &AxisExponents) -> f64 {
    let hp = ax.substrate;
    let qm1 = f64::from(q) - 1.0;
    let a = (2.0 * hp - 2.0) * qm1 + 1.0;
    let c = (hp - 1.0) * qm1 + 1.0;
    2.0 / ((4.0 * hp - 3.0) * (4.0 * hp - 2.0) * a * a * c * c)
}

fn check_c1_domain(q: u32, axes: &[AxisExponents]) -> Result<()> {
    for (axis, ax) in axes.iter().enumerate() {
        if 4.0 * ax.substrate - 3.0 <= 0.0 {
            return Err(invalid(format!(
                "the limit constant needs 4H' > 3, but axis {axis} has H' = {} \
                 (q = {q}, H = {}); for q = 1 this means H must exceed 3/4",
                ax.substrate, ax.hurst
            )));
        }
    }
    Ok(())
}

/// Product over axes of the asymptotic per-axis factor of the second-chaos
/// variance integral.
pub fn limit_constant_f3(q: u32, hurst: &HurstVector) -> Result<f64> {
    let axes = derive_exponents(q, hurst)?;
    check_c1_domain(q, &axes)?;
    Ok(axes.iter().map(|ax| f3_axis_factor(q, ax)).product())
}

/// The constant `c1` of the limit theorem, written directly from its closed
/// form rather than through [`limit_constant_f3`].
pub fn limit_constant_c1(q: u32, hurst: &HurstVector) -> Result<f64> {
    let axes = derive_exponents(q, hurst)?;
    check_c1_domain(q, &axes)?;
    let b = normalizing_constant_b(q, hurst)?;
    let qm1 = f64::from(q) - 1.0;
    let mut num = 2.0 * 2f64.powi(axes.len() as i32) * b.powi(4);
    let mut den = 1.0;
    for ax in &axes {
        let hp = ax.substrate;
        num *= ax.substrate_variance_factor().powi(2 * q as i32);
        let a = (2.0 * hp - 2.0) * qm1 + 1.0;
        let c = (hp - 1.0) * qm1 + 1.0;
        den *= (4.0 * hp - 3.0) * (4.0 * hp - 2.0) * a * a * c * c;
    }
    Ok(num / den)
}

/// Order, Hurst vector and everything derived from them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    q: u32,
    hurst: HurstVector,
    axes: Vec<AxisExponents>,
    b: f64,
    c1: Option<f64>,
    chaos_coeffs: Vec<u128>,
}

impl ModelParams {
    pub fn new(q: u32, hurst: HurstVector) -> Result<Self> {
        let axes = derive_exponents(q, &hurst)?;
        let b = normalizing_constant_b(q, &hurst)?;
        let c1 = limit_constant_c1(q, &hurst).ok();
        let chaos_coeffs = chaos_coefficients(q)?;
        Ok(Self {
            q,
            hurst,
            axes,
            b,
            c1,
            chaos_coeffs,
        })
    }

    /// Convenience constructor from a plain slice.
    pub fn from_slice(q: u32, hurst: &[f64]) -> Result<Self> {
        Self::new(q, HurstVector::new(hurst.to_vec())?)
    }

    pub fn q(&self) -> u32 {
        self.q
    }

    pub fn dim(&self) -> usize {
        self.hurst.dim()
    }

    pub fn hurst(&self) -> &HurstVector {
        &self.hurst
    }

    pub fn axes(&self) -> &[AxisExponents] {
        &self.axes
    }

    pub fn substrate_hurst(&self) -> Vec<f64> {
        self.axes.iter().map(|a| a.substrate).collect()
    }

    pub fn rosenblatt_hurst(&self) -> Vec<f64> {
        self.axes.iter().map(|a| a.rosenblatt).collect()
    }

    pub fn b(&self) -> f64 {
        self.b
    }

    /// `c1`, or an error explaining why it is undefined (q = 1 with H <= 3/4).
    pub fn c1(&self) -> Result<f64> {
        match self.c1 {
            Some(c) => Ok(c),
            None => limit_constant_c1(self.q, &self.hurst),
        }
    }

    pub fn chaos_coeffs(&self) -> &[u128] {
        &self.chaos_coeffs
    }

    /// `q! q`, the coefficient of the second chaos.
    pub fn second_chaos_coeff(&self) -> f64 {
        factorial(self.q) as f64 * f64::from(self.q)
    }

    /// `prod_j (H'_j(2H'_j - 1))^{2q}`.
    pub fn substrate_factor_power(&self) -> f64 {
        self.axes
            .iter()
            .map(|a| a.substrate_variance_factor().powi(2 * self.q as i32))
            .product()
    }
}
