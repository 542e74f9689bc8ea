//! Least-squares power laws `e ≈ c·N^{-p}` fitted in log–log space.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerFit {
    pub c: f64,
    pub p: f64,
    /// `ln e_i - ln(c N_i^{-p})` per sample.
    pub residuals: Vec<f64>,
}

impl PowerFit {
    pub fn predict(&self, n: f64) -> f64 {
        self.c * n.powf(-self.p)
    }
}

impl std::fmt::Display for PowerFit {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:.2e}·N^(-{:.2})", self.c, self.p)
    }
}

pub fn fit_power_law(ns: &[f64], errors: &[f64]) -> Result<PowerFit> {
    if ns.len() != errors.len() || ns.len() < 2 {
        return Err(Error::InvalidArgument("need at least two (N, error) pairs".into()));
    }
    if ns.iter().chain(errors).any(|&v| !(v > 0.0 && v.is_finite())) {
        return Err(Error::InvalidArgument("sizes and errors must be positive and finite".into()));
    }
    let xs: Vec<f64> = ns.iter().map(|n| n.ln()).collect();
    let ys: Vec<f64> = errors.iter().map(|e| e.ln()).collect();
    let m = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / m;
    let my = ys.iter().sum::<f64>() / m;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::InvalidArgument("grid sizes must not all be equal".into()));
    }
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let residuals = xs.iter().zip(&ys).map(|(x, y)| y - (intercept + slope * x)).collect();
    Ok(PowerFit { c: intercept.exp(), p: -slope, residuals })
}

/// Fits for one method over a size sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub method: String,
    pub sizes: Vec<usize>,
    pub u_sup: PowerFit,
    pub u_rms: PowerFit,
    pub grad_sup: PowerFit,
    pub grad_rms: PowerFit,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn recovers_exact_power_law() {
        let ns = [129.0, 257.0, 513.0, 1025.0];
        let es: Vec<f64> = ns.iter().map(|n: &f64| 0.2 * n.powf(-2.0)).collect();
        let f = fit_power_law(&ns, &es).unwrap();
        assert!((f.p - 2.0).abs() < 1e-12);
        assert!((f.c - 0.2).abs() < 1e-12);
        assert_eq!(format!("{:.2}", f.p), "2.00");
        assert!(f.residuals.iter().all(|r| r.abs() < 1e-12));
        assert!((f.predict(129.0) - es[0]).abs() < 1e-18);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(fit_power_law(&[1.0], &[1.0]).is_err());
        assert!(fit_power_law(&[2.0, 2.0], &[1.0, 0.5]).is_err());
        assert!(fit_power_law(&[2.0, 4.0], &[1.0, 0.0]).is_err());
    }
}
