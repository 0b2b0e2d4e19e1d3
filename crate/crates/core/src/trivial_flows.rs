//! Parallel shear flows `ψ₀(s) = μ cos(|α|^{1/2}(s − 1) + λ)` on the unit
//! strip, their Bernoulli and boundary constants, and the branch-safe
//! hyperbolic kernels shared by the rest of the crate.

use serde::{Deserialize, Serialize};

use crate::error::{Result, WaveError};

/// Below this value of `|θ²| s²` the Taylor series is used for the
/// hyperbolic kernels.
pub const SERIES_SWITCH: f64 = 1e-8;

/// Returns `(sinh(θ s)/θ, cosh(θ s))` for `θ² = theta_sq`, real in both
/// regimes and continuous through `θ = 0`.
pub fn branch_kernels(theta_sq: f64, s: f64) -> (f64, f64) {
    let z = theta_sq * s * s;
    if z.abs() < SERIES_SWITCH {
        let sinhc = s * (1.0 + z / 6.0 * (1.0 + z / 20.0));
        let cosh = 1.0 + z / 2.0 * (1.0 + z / 12.0);
        return (sinhc, cosh);
    }
    if theta_sq > 0.0 {
        let t = theta_sq.sqrt();
        ((t * s).sinh() / t, (t * s).cosh())
    } else {
        let t = (-theta_sq).sqrt();
        ((t * s).sin() / t, (t * s).cos())
    }
}

/// `θₙ² = α + n²κ²` together with the mode it belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThetaValue {
    pub theta_sq: f64,
    pub mode_n: u64,
}

impl ThetaValue {
    pub fn new(n: u64, alpha: f64, kappa: f64) -> Self {
        let nk = n as f64 * kappa;
        Self {
            theta_sq: alpha + nk * nk,
            mode_n: n,
        }
    }

    pub fn sinhc_at(&self, s: f64) -> f64 {
        branch_kernels(self.theta_sq, s).0
    }

    pub fn cosh_at(&self, s: f64) -> f64 {
        branch_kernels(self.theta_sq, s).1
    }

    /// `θ sinh(θ s)`, the derivative of `cosh(θ s)`.
    pub fn theta_sinh_at(&self, s: f64) -> f64 {
        self.theta_sq * self.sinhc_at(s)
    }

    pub fn is_oscillatory(&self) -> bool {
        self.theta_sq < 0.0
    }
}

/// The parameter triple `Λ = (μ, α, λ)` and the wavenumber `κ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrivialParameters {
    pub mu: f64,
    pub alpha: f64,
    pub lambda: f64,
    pub kappa: f64,
}

impl TrivialParameters {
    /// Validated constructor; rejects parameters outside `U` or a
    /// non-positive wavenumber.
    pub fn new(mu: f64, alpha: f64, lambda: f64, kappa: f64) -> Result<Self> {
        let p = Self {
            mu,
            alpha,
            lambda,
            kappa,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let Self {
            mu,
            alpha,
            lambda,
            kappa,
        } = *self;
        if !(mu.is_finite() && alpha.is_finite() && lambda.is_finite() && kappa.is_finite()) {
            return Err(WaveError::Domain("parameters must be finite".into()));
        }
        if mu == 0.0 {
            return Err(WaveError::Domain("mu must be nonzero".into()));
        }
        if alpha >= 0.0 {
            return Err(WaveError::Domain(format!(
                "alpha must be strictly negative (got {alpha})"
            )));
        }
        if !(lambda > 0.0 && lambda < std::f64::consts::PI) {
            return Err(WaveError::Domain(format!(
                "lambda must lie in (0, pi) (got {lambda})"
            )));
        }
        if kappa <= 0.0 {
            return Err(WaveError::Domain(format!(
                "kappa must be strictly positive (got {kappa})"
            )));
        }
        Ok(())
    }

    /// `|α|^{1/2}`
    pub fn root_alpha(&self) -> f64 {
        (-self.alpha).sqrt()
    }

    pub fn theta(&self, n: u64) -> ThetaValue {
        ThetaValue::new(n, self.alpha, self.kappa)
    }

    pub fn with_lambda(self, lambda: f64) -> Self {
        Self { lambda, ..self }
    }

    pub fn with_alpha(self, alpha: f64) -> Self {
        Self { alpha, ..self }
    }

    pub fn with_mu(self, mu: f64) -> Self {
        Self { mu, ..self }
    }
}

/// A trivial solution together with closed-form derivatives in `s` and in
/// the parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrivialFlow {
    pub params: TrivialParameters,
    /// Bernoulli constant
    pub q: f64,
    pub m0: f64,
    pub m1: f64,
}

pub fn make_trivial_flow(params: TrivialParameters) -> Result<TrivialFlow> {
    params.validate()?;
    Ok(TrivialFlow::from_valid(params))
}

impl TrivialFlow {
    pub(crate) fn from_valid(params: TrivialParameters) -> Self {
        let TrivialParameters {
            mu, alpha, lambda, ..
        } = params;
        let k = params.root_alpha();
        Self {
            params,
            q: 0.5 * mu * mu * (-alpha) * lambda.sin().powi(2),
            m0: mu * (lambda - k).cos(),
            m1: mu * lambda.cos(),
        }
    }

    fn phase(&self, s: f64) -> (f64, f64) {
        let k = self.params.root_alpha();
        (k, k * (s - 1.0) + self.params.lambda)
    }

    pub fn psi0(&self, s: f64) -> f64 {
        let (_, a) = self.phase(s);
        self.params.mu * a.cos()
    }

    pub fn psi0_s(&self, s: f64) -> f64 {
        let (k, a) = self.phase(s);
        -self.params.mu * k * a.sin()
    }

    pub fn psi0_ss(&self, s: f64) -> f64 {
        let (k, a) = self.phase(s);
        -self.params.mu * k * k * a.cos()
    }

    pub fn psi0_lambda(&self, s: f64) -> f64 {
        let (_, a) = self.phase(s);
        -self.params.mu * a.sin()
    }

    pub fn psi0_s_lambda(&self, s: f64) -> f64 {
        let (k, a) = self.phase(s);
        -self.params.mu * k * a.cos()
    }

    pub fn psi0_ss_lambda(&self, s: f64) -> f64 {
        let (k, a) = self.phase(s);
        self.params.mu * k * k * a.sin()
    }

    // dk/dα = −1/(2k)
    fn dk_dalpha(&self) -> f64 {
        -0.5 / self.params.root_alpha()
    }

    pub fn psi0_alpha(&self, s: f64) -> f64 {
        let (_, a) = self.phase(s);
        -self.params.mu * a.sin() * (s - 1.0) * self.dk_dalpha()
    }

    pub fn psi0_s_alpha(&self, s: f64) -> f64 {
        let (k, a) = self.phase(s);
        -self.params.mu * self.dk_dalpha() * (a.sin() + k * (s - 1.0) * a.cos())
    }

    pub fn psi0_ss_alpha(&self, s: f64) -> f64 {
        let (k, a) = self.phase(s);
        -self.params.mu * self.dk_dalpha() * (2.0 * k * a.cos() - k * k * (s - 1.0) * a.sin())
    }

    pub fn psi0_s_mu(&self, s: f64) -> f64 {
        self.psi0_s(s) / self.params.mu
    }

    pub fn psi0_ss_mu(&self, s: f64) -> f64 {
        self.psi0_ss(s) / self.params.mu
    }

    pub fn q_lambda(&self) -> f64 {
        let TrivialParameters {
            mu, alpha, lambda, ..
        } = self.params;
        mu * mu * (-alpha) * lambda.sin() * lambda.cos()
    }

    pub fn q_alpha(&self) -> f64 {
        let TrivialParameters { mu, lambda, .. } = self.params;
        -0.5 * mu * mu * lambda.sin().powi(2)
    }

    /// `ψ₀s(1) = −μ|α|^{1/2} sin λ`, nonzero on `U`.
    pub fn surface_slope(&self) -> f64 {
        self.psi0_s(1.0)
    }
}
