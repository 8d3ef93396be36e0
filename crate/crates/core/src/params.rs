//! Physical parameters of the focusing NLS with attractive inverse-square
//! potential `i u_t + Δu + c|x|^{-2} u + |u|^{p-1} u = 0` in dimension `N`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative tolerance used to decide whether `p` is the L²-critical power.
const CRITICAL_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhysicalParams {
    pub dim_n: u32,
    pub coupling_c: f64,
    pub exponent_p: f64,
    pub c_star: f64,
    pub sobolev_crit: f64,
}

impl PhysicalParams {
    /// Validates `N ≥ 3`, `0 < c < (N-2)²/4` and `1 < p < 1 + 4/(N-2)`.
    pub fn new(dim_n: u32, coupling_c: f64, exponent_p: f64) -> Result<Self> {
        if dim_n < 3 {
            return Err(Error::InvalidParams(format!("dimension N = {dim_n} must satisfy N >= 3")));
        }
        let n = f64::from(dim_n);
        let c_star = hardy_constant(dim_n);
        if !(coupling_c.is_finite() && coupling_c > 0.0 && coupling_c < c_star) {
            return Err(Error::InvalidParams(format!(
                "coupling c = {coupling_c} must satisfy 0 < c < (N-2)^2/4 = {c_star}"
            )));
        }
        let p_max = 1.0 + 4.0 / (n - 2.0);
        if !(exponent_p.is_finite() && exponent_p > 1.0 && exponent_p < p_max) {
            return Err(Error::InvalidParams(format!(
                "exponent p = {exponent_p} must satisfy 1 < p < 1 + 4/(N-2) = {p_max}"
            )));
        }
        Ok(Self { dim_n, coupling_c, exponent_p, c_star, sobolev_crit: 2.0 * n / (n - 2.0) })
    }

    /// Parameters at the L²-critical power `p = 1 + 4/N`.
    pub fn critical(dim_n: u32, coupling_c: f64) -> Result<Self> {
        Self::new(dim_n, coupling_c, 1.0 + 4.0 / f64::from(dim_n.max(1)))
    }

    pub fn n(&self) -> f64 {
        f64::from(self.dim_n)
    }

    pub fn critical_exponent(&self) -> f64 {
        1.0 + 4.0 / self.n()
    }

    pub fn is_critical(&self) -> bool {
        (self.exponent_p - self.critical_exponent()).abs() < CRITICAL_TOL
    }

    /// Regular indicial exponent σ of `Δφ + cφ/r² = 0` at the origin.
    pub fn sigma(&self) -> f64 {
        indicial_exponent_raw(self.dim_n, self.coupling_c).expect("validated parameters")
    }

    /// Exponents `(a, b)` of the Weinstein quotient
    /// `J = H^a ‖u‖_2^b / ‖u‖_{p+1}^{p+1}`.
    pub fn weinstein_exponents(&self) -> (f64, f64) {
        let n = self.n();
        let p = self.exponent_p;
        ((p - 1.0) * n / 4.0, 2.0 + (p - 1.0) * (2.0 - n) / 2.0)
    }
}

/// Best constant in Hardy's inequality, `(N-2)²/4`.
pub fn hardy_constant(dim_n: u32) -> f64 {
    let n = f64::from(dim_n);
    (n - 2.0) * (n - 2.0) / 4.0
}

/// Larger root of `σ² + (N-2)σ + c = 0` for `0 ≤ c ≤ c*`.
pub fn indicial_exponent_raw(dim_n: u32, coupling_c: f64) -> Result<f64> {
    let c_star = hardy_constant(dim_n);
    if dim_n < 3 || !(0.0..=c_star).contains(&coupling_c) {
        return Err(Error::InvalidParams(format!(
            "indicial exponent needs N >= 3 and 0 <= c <= {c_star}, got N = {dim_n}, c = {coupling_c}"
        )));
    }
    let half = (f64::from(dim_n) - 2.0) / 2.0;
    Ok(-half + (c_star - coupling_c).sqrt())
}

/// Indicial exponent of validated parameters.
pub fn indicial_exponent(params: &PhysicalParams) -> f64 {
    params.sigma()
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Independent oracle: both roots of the quadratic, larger one returned.
    fn quadratic_larger_root(a: f64, b: f64, c: f64) -> f64 {
        let disc = b * b - 4.0 * a * c;
        let r1 = (-b + disc.sqrt()) / (2.0 * a);
        let r2 = (-b - disc.sqrt()) / (2.0 * a);
        r1.max(r2)
    }

    #[test]
    fn rejects_invalid_parameters() {
        assert!(PhysicalParams::critical(2, 0.1).is_err());
        assert!(PhysicalParams::critical(3, 0.0).is_err());
        assert!(PhysicalParams::critical(3, 0.25).is_err());
        assert!(PhysicalParams::critical(3, 0.3).is_err());
        assert!(PhysicalParams::new(3, 0.1, 5.0).is_err());
        assert!(PhysicalParams::new(3, 0.1, 1.0).is_err());
        let msg = PhysicalParams::critical(3, 0.25).unwrap_err().to_string();
        assert!(msg.contains("0 < c < (N-2)^2/4"), "{msg}");
    }

    #[test]
    fn derived_constants() {
        let p = PhysicalParams::critical(3, 0.1).unwrap();
        assert_eq!(p.c_star, 0.25);
        assert_eq!(p.sobolev_crit, 6.0);
        assert!(p.is_critical());
        assert!(!PhysicalParams::new(3, 0.1, 2.0).unwrap().is_critical());
        let (a, b) = p.weinstein_exponents();
        assert!((a - 1.0).abs() < 1e-15);
        assert!((b - 4.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn indicial_examples() {
        assert_eq!(indicial_exponent_raw(3, 0.0).unwrap(), 0.0);
        let s = indicial_exponent_raw(3, 0.1875).unwrap();
        assert!((s - quadratic_larger_root(1.0, 1.0, 0.1875)).abs() < 1e-15);
        assert!((s + 0.25).abs() < 1e-15);
        assert_eq!(indicial_exponent_raw(5, 2.25).unwrap(), -1.5);
        let near = indicial_exponent_raw(4, 1.0 - 1e-12).unwrap();
        assert!((near + 1.0).abs() < 1e-5);
        assert!(indicial_exponent_raw(3, 0.3).is_err());
    }

    #[test]
    fn indicial_monotone_in_coupling() {
        for dim in [3u32, 4, 5] {
            let cs = hardy_constant(dim);
            let mut prev = 0.0;
            for k in 1..200 {
                let c = cs * f64::from(k) / 200.0;
                let s = indicial_exponent_raw(dim, c).unwrap();
                assert!(s < prev);
                assert!(s > -(f64::from(dim) - 2.0) / 2.0);
                let oracle = quadratic_larger_root(1.0, f64::from(dim) - 2.0, c);
                assert!((s - oracle).abs() < 1e-9);
                prev = s;
            }
        }
    }
}
