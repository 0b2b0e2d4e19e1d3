//! The kernel equation `l(n, α) = r(Λ)` and everything derived from it:
//! kernel sets, the local `μ`-charts, the transversality test and `σ`.

use std::f64::consts::PI;

use serde::Serialize;

use crate::error::{Result, WaveError};
use crate::spectral::bisect;
use crate::trivial_flows::{ThetaValue, TrivialParameters};

/// Default relative membership tolerance for `kernel_set`.
pub const DEFAULT_MEMBERSHIP_TOL: f64 = 1e-9;

const SCAN_LIMIT: u64 = 10_000_000;

/// `θ coth θ − 1` as a function of `z = θ²`, accurate near `z = 0`.
/// Returns `None` at the poles `z = −m²π²`.
pub fn l_minus_one(theta_sq: f64) -> Option<f64> {
    let z = theta_sq;
    if z.abs() < 1e-4 {
        return Some(z * (1.0 / 3.0 + z * (-1.0 / 45.0 + z * (2.0 / 945.0 - z / 4725.0))));
    }
    if z > 0.0 {
        let t = z.sqrt();
        Some(t / t.tanh() - 1.0)
    } else {
        let t = (-z).sqrt();
        let (sn, cs) = t.sin_cos();
        if sn.abs() < 1e-12 * (1.0 + t) {
            None
        } else {
            Some(t * cs / sn - 1.0)
        }
    }
}

/// `|dl/dθ²|`, used to size the rounding error of `l` at large `n`.
pub fn l_sensitivity(theta_sq: f64) -> f64 {
    let z = theta_sq;
    if z.abs() < 1e-4 {
        return 1.0 / 3.0;
    }
    if z > 0.0 {
        let t = z.sqrt();
        let sh = t.sinh();
        ((1.0 / t.tanh() - t / (sh * sh)) / (2.0 * t)).abs()
    } else {
        let t = (-z).sqrt();
        let sn = t.sin();
        ((t.cos() / sn - t / (sn * sn)) / (2.0 * t)).abs()
    }
}

/// `l(n, α) = θₙ coth θₙ`, or `None` where `sinh θₙ = 0` with `θₙ ≠ 0`.
pub fn dispersion_l(n: u64, alpha: f64, kappa: f64) -> Option<f64> {
    let theta = ThetaValue::new(n, alpha, kappa);
    l_minus_one(theta.theta_sq).map(|v| v + 1.0)
}

/// `r(Λ) = 1/(μ²|α| sin²λ) + |α|^{1/2} cot λ`
pub fn rhs_r(params: &TrivialParameters) -> Result<f64> {
    params.validate()?;
    Ok(rhs_r_unchecked(params))
}

pub(crate) fn rhs_r_unchecked(p: &TrivialParameters) -> f64 {
    let k = p.root_alpha();
    let sl = p.lambda.sin();
    1.0 / (p.mu * p.mu * k * k * sl * sl) + k * p.lambda.cos() / sl
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KernelMode {
    pub n: u64,
    pub theta: ThetaValue,
    pub kappa: f64,
}

impl KernelMode {
    pub fn new(n: u64, alpha: f64, kappa: f64) -> Self {
        Self {
            n,
            theta: ThetaValue::new(n, alpha, kappa),
            kappa,
        }
    }

    /// `φₙ(x, s) = cos(nκx) sinh(θₙ s)/θₙ`
    pub fn phi(&self, x: f64, s: f64) -> f64 {
        (self.n as f64 * self.kappa * x).cos() * self.theta.sinhc_at(s)
    }
}

/// One row of the scan performed by `kernel_set`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ScanEntry {
    pub n: u64,
    pub l: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KernelSet {
    pub modes: Vec<u64>,
    pub thetas: Vec<ThetaValue>,
    pub contains_zero: bool,
    pub dimension: usize,
    pub r: f64,
    pub scanned: Vec<ScanEntry>,
    pub undefined_modes: Vec<u64>,
}

impl KernelSet {
    pub fn contains(&self, n: u64) -> bool {
        self.modes.binary_search(&n).is_ok()
    }

    pub fn kernel_modes(&self, alpha: f64, kappa: f64) -> Vec<KernelMode> {
        self.modes
            .iter()
            .map(|&n| KernelMode::new(n, alpha, kappa))
            .collect()
    }
}

/// Scans `n = 0, 1, 2, …` for solutions of the kernel equation. A mode is
/// accepted when `|l(n, α) − r(Λ)| ≤ tol · max(1, |r|)`.
pub fn kernel_set(params: &TrivialParameters, tol: f64) -> Result<KernelSet> {
    params.validate()?;
    if !(tol > 0.0) {
        return Err(WaveError::InvalidInput("tolerance must be positive".into()));
    }
    let r = rhs_r_unchecked(params);
    let band = tol * r.abs().max(1.0);
    let monotone_from = params.root_alpha() / params.kappa;
    let mut modes = Vec::new();
    let mut scanned = Vec::new();
    let mut undefined_modes = Vec::new();
    for n in 0..SCAN_LIMIT {
        let l = dispersion_l(n, params.alpha, params.kappa);
        scanned.push(ScanEntry { n, l });
        match l {
            None => undefined_modes.push(n),
            Some(l) => {
                // θₙ² = α + n²κ² carries a rounding error of a few ulps of n²κ²
                let nk = (n * n) as f64 * params.kappa * params.kappa;
                let rounding = 4.0 * f64::EPSILON * (nk + params.alpha.abs()) * l_sensitivity(params.alpha + nk);
                if (l - r).abs() <= band + rounding {
                    modes.push(n);
                }
                if n as f64 >= monotone_from && l > r + band {
                    let thetas = modes
                        .iter()
                        .map(|&m| params.theta(m))
                        .collect::<Vec<_>>();
                    return Ok(KernelSet {
                        contains_zero: modes.first() == Some(&0),
                        dimension: modes.len(),
                        modes,
                        thetas,
                        r,
                        scanned,
                        undefined_modes,
                    });
                }
            }
        }
    }
    Err(WaveError::InvalidInput(format!(
        "kernel scan did not terminate within {SCAN_LIMIT} modes"
    )))
}

/// The chart `μᵢ(α, λ)` on which mode `n` stays in the kernel, for the
/// requested sign branch.
pub fn mu_for_mode(n: u64, alpha: f64, lambda: f64, kappa: f64, sign: f64) -> Option<f64> {
    let l = dispersion_l(n, alpha, kappa)?;
    let k = (-alpha).sqrt();
    let radicand = l - k / lambda.tan();
    if !(radicand > 0.0) || !(alpha < 0.0) {
        return None;
    }
    Some(sign.signum() / (k * lambda.sin() * radicand.sqrt()))
}

/// `cot λ + μ²|α|^{3/2}/2`; transversality holds when it is nonzero.
pub fn transversality_defect(params: &TrivialParameters) -> f64 {
    let k = params.root_alpha();
    1.0 / params.lambda.tan() + 0.5 * params.mu * params.mu * k * k * k
}

pub fn transversality_ok(params: &TrivialParameters) -> bool {
    transversality_defect(params).abs() > 1e-12
}

/// The `j`-th positive root of `tan x = x`, lying in `(jπ, jπ + π/2)`.
pub fn tan_root(j: u32) -> f64 {
    assert!(j >= 1);
    let lo = j as f64 * PI;
    let hi = lo + 0.5 * PI;
    // sin x − x cos x has the same roots without the poles of tan
    let g = |x: f64| x.sin() - x * x.cos();
    let mut x = bisect(g, lo + 1e-3, hi, 1e-15).expect("bracket");
    for _ in 0..3 {
        let step = g(x) / (x * x.sin());
        x -= step;
    }
    x
}

/// `σ`, the smallest positive solution of `x cot x = 1`.
pub fn sigma_constant() -> f64 {
    tan_root(1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_2;

    #[test]
    fn dispersion_examples() {
        assert_eq!(dispersion_l(1, -1.0, 1.0), Some(1.0));
        let l0 = dispersion_l(0, -1.0, 1.0).unwrap();
        assert!((l0 - 1f64.cos() / 1f64.sin()).abs() < 1e-15);
        assert!((l0 - 0.642092615934).abs() < 1e-11);
        let l2 = dispersion_l(2, -1.0, 1.0).unwrap();
        let t = 3f64.sqrt();
        assert!((l2 - t / t.tanh()).abs() < 1e-14);
    }

    #[test]
    fn dispersion_poles_are_undefined() {
        assert_eq!(dispersion_l(0, -PI * PI, 1.0), None);
        assert_eq!(dispersion_l(1, -4.0 * PI * PI - 1.0, 1.0), None);
        assert!(dispersion_l(0, -PI * PI * (1.0 + 1e-6), 1.0).is_some());
    }

    #[test]
    fn series_matches_closed_form_at_switch() {
        for z in [9.9e-5, -9.9e-5] {
            let s = l_minus_one(z).unwrap();
            let t = z.abs().sqrt();
            let direct = if z > 0.0 { t / t.tanh() - 1.0 } else { t / t.tan() - 1.0 };
            assert!((s - direct).abs() < 1e-15);
        }
    }

    #[test]
    fn sigma_value() {
        let s = sigma_constant();
        assert!((s - 4.493409457909064).abs() < 1e-14);
        assert!((s / s.tan() - 1.0).abs() < 1e-12);
        assert!((s.sin() / s - s.cos()).abs() < 1e-12);
        let s2 = tan_root(2);
        assert!((s2.tan() - s2).abs() < 1e-9);
        assert!(s2 > 2.0 * PI && s2 < 2.5 * PI);
    }

    #[test]
    fn rhs_examples() {
        let p = TrivialParameters::new(1.0, -1.0, FRAC_PI_2, 1.0).unwrap();
        assert!((rhs_r(&p).unwrap() - 1.0).abs() < 1e-15);
        let lam = 0.75 * PI;
        let alpha: f64 = -3.7;
        let mu = (-2.0 / ((-alpha).powf(1.5) * (2.0 * lam).sin())).sqrt();
        let p = TrivialParameters::new(mu, alpha, lam, 1.0).unwrap();
        assert!(rhs_r(&p).unwrap().abs() < 1e-13);
    }

    #[test]
    fn explicit_kernels() {
        let p = TrivialParameters::new(1.0, -1.0, FRAC_PI_2, 1.0).unwrap();
        assert_eq!(kernel_set(&p, 1e-9).unwrap().modes, vec![1]);
        let sigma = sigma_constant();
        let kappa = sigma / 3f64.sqrt();
        let p = TrivialParameters::new(0.5 / kappa, -4.0 * kappa * kappa, FRAC_PI_2, kappa).unwrap();
        assert_eq!(kernel_set(&p, 1e-9).unwrap().modes, vec![1, 2]);
        let kappa = sigma / 5f64.sqrt();
        let p = TrivialParameters::new(1.0 / (3.0 * kappa), -9.0 * kappa * kappa, FRAC_PI_2, kappa)
            .unwrap();
        let m = kernel_set(&p, 1e-9).unwrap();
        assert_eq!(m.modes, vec![2, 3]);
        assert_eq!(m.dimension, 2);
        assert!(!m.contains_zero);
    }

    #[test]
    fn mu_chart_examples() {
        let mu = mu_for_mode(1, -1.0, FRAC_PI_2, 1.0, 1.0).unwrap();
        assert!((mu - 1.0).abs() < 1e-15);
        let kappa = sigma_constant() / 3f64.sqrt();
        let mu = mu_for_mode(2, -4.0 * kappa * kappa, FRAC_PI_2, kappa, 1.0).unwrap();
        assert!((mu - 0.5 / kappa).abs() < 1e-14);
        let mu0 = mu_for_mode(0, -1.0, FRAC_PI_2, 1.0, 1.0).unwrap();
        assert!((mu0 - 1.0 / (1f64.cos() / 1f64.sin()).sqrt()).abs() < 1e-14);
        let mu = mu_for_mode(1, -1.0, FRAC_PI_2, 1.0, -1.0).unwrap();
        assert!((mu + 1.0).abs() < 1e-15);
    }

    #[test]
    fn transversality_examples() {
        let p = TrivialParameters::new(1.0, -1.0, FRAC_PI_2, 1.0).unwrap();
        assert!(transversality_ok(&p));
        let p = TrivialParameters::new(1.0, -1.0, 0.75 * PI, 1.0).unwrap();
        assert!(transversality_ok(&p));
        // cot λ = −1/2 with μ = 1, α = −1
        let lam = FRAC_PI_2 + 0.5f64.atan();
        let p = TrivialParameters::new(1.0, -1.0, lam, 1.0).unwrap();
        assert!(transversality_defect(&p).abs() < 1e-15);
        assert!(!transversality_ok(&p));
    }
}
