//! Linear operators at a trivial flow, the `Y` inner product and projection
//! onto the cokernel, transversality pairings, the two-mode determinant, the
//! derivatives of the flattened operator up to third order, and the
//! second-order data of bifurcating curves and sheets.
//!
//! Fields are represented modally: a finite sum of `cos(mκx)` times an
//! `s`-profile that returns the value and its first two derivatives.

use std::f64::consts::PI;
use std::ops::{Add, Mul, Sub};
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Result, WaveError};
use crate::kernel_analysis::{
    kernel_set, l_minus_one, rhs_r_unchecked, transversality_defect, transversality_ok,
    KernelMode, KernelSet, DEFAULT_MEMBERSHIP_TOL,
};
use crate::spectral::{gauss_legendre, periodic_nodes, ChebyshevGrid};
use crate::trivial_flows::{branch_kernels, TrivialFlow};

/// Nodes used for `s`-integration in the `Y` inner product.
pub const GL_NODES: usize = 64;
/// Collocation nodes for the second-order boundary value problems.
pub const BVP_NODES: usize = 48;

/// An `s`-profile returning `[f, f', f'']`.
#[derive(Clone)]
pub struct Profile(Arc<dyn Fn(f64) -> [f64; 3] + Send + Sync>);

impl Profile {
    pub fn new<F: Fn(f64) -> [f64; 3] + Send + Sync + 'static>(f: F) -> Self {
        Self(Arc::new(f))
    }

    pub fn eval(&self, s: f64) -> [f64; 3] {
        (self.0)(s)
    }

    pub fn value(&self, s: f64) -> f64 {
        (self.0)(s)[0]
    }

    pub fn zero() -> Self {
        Self::new(|_| [0.0; 3])
    }

    /// `sinh(θs)/θ` and its derivatives.
    pub fn sinhc(theta_sq: f64) -> Self {
        Self::new(move |s| {
            let (sc, ch) = branch_kernels(theta_sq, s);
            [sc, ch, theta_sq * sc]
        })
    }

    fn combine(&self, a: f64, other: &Profile, b: f64) -> Self {
        let (p, q) = (self.clone(), other.clone());
        Self::new(move |s| {
            let (u, v) = (p.eval(s), q.eval(s));
            [a * u[0] + b * v[0], a * u[1] + b * v[1], a * u[2] + b * v[2]]
        })
    }
}

impl std::fmt::Debug for Profile {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("Profile")
    }
}

/// Value and derivatives of a scalar field at a point.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct FieldJet {
    pub v: f64,
    pub v_s: f64,
    pub v_ss: f64,
    pub v_x: f64,
    pub v_xs: f64,
    pub v_xx: f64,
}

/// `φ(x, s) = Σ cos(mκx) pₘ(s)`
#[derive(Debug, Clone)]
pub struct ModalField {
    pub kappa: f64,
    pub terms: Vec<(u64, Profile)>,
}

impl ModalField {
    pub fn single(kappa: f64, m: u64, profile: Profile) -> Self {
        Self {
            kappa,
            terms: vec![(m, profile)],
        }
    }

    /// The kernel candidate `φₙ(x, s) = cos(nκx) sinh(θₙs)/θₙ`.
    pub fn from_mode(mode: &KernelMode) -> Self {
        Self::single(mode.kappa, mode.n, Profile::sinhc(mode.theta.theta_sq))
    }

    pub fn jet(&self, x: f64, s: f64) -> FieldJet {
        let mut j = FieldJet::default();
        for (m, p) in &self.terms {
            let q = *m as f64 * self.kappa;
            let (sn, cs) = (q * x).sin_cos();
            let [f, fs, fss] = p.eval(s);
            j.v += f * cs;
            j.v_s += fs * cs;
            j.v_ss += fss * cs;
            j.v_x -= q * f * sn;
            j.v_xs -= q * fs * sn;
            j.v_xx -= q * q * f * cs;
        }
        j
    }

    pub fn value(&self, x: f64, s: f64) -> f64 {
        self.jet(x, s).v
    }

    pub fn max_harmonic(&self) -> u64 {
        self.terms.iter().map(|t| t.0).max().unwrap_or(0)
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            kappa: self.kappa,
            terms: self
                .terms
                .iter()
                .map(|(m, p)| (*m, p.combine(c, &Profile::zero(), 0.0)))
                .collect(),
        }
    }
}

/// Jet of a pair `w = (η, φ̂)` at `(x, s)`.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct WJet {
    pub eta: f64,
    pub eta_x: f64,
    pub eta_xx: f64,
    pub ph: f64,
    pub ph_s: f64,
    pub ph_ss: f64,
    pub ph_x: f64,
    pub ph_xs: f64,
    pub ph_xx: f64,
}

impl WJet {
    fn as_array(&self) -> [f64; 9] {
        [
            self.eta, self.eta_x, self.eta_xx, self.ph, self.ph_s, self.ph_ss, self.ph_x,
            self.ph_xs, self.ph_xx,
        ]
    }

    fn from_array(a: [f64; 9]) -> Self {
        Self {
            eta: a[0],
            eta_x: a[1],
            eta_xx: a[2],
            ph: a[3],
            ph_s: a[4],
            ph_ss: a[5],
            ph_x: a[6],
            ph_xs: a[7],
            ph_xx: a[8],
        }
    }
}

impl Add for WJet {
    type Output = WJet;
    fn add(self, o: WJet) -> WJet {
        let (a, b) = (self.as_array(), o.as_array());
        WJet::from_array(std::array::from_fn(|i| a[i] + b[i]))
    }
}

impl Sub for WJet {
    type Output = WJet;
    fn sub(self, o: WJet) -> WJet {
        self + o * -1.0
    }
}

impl Mul<f64> for WJet {
    type Output = WJet;
    fn mul(self, c: f64) -> WJet {
        WJet::from_array(self.as_array().map(|v| v * c))
    }
}

/// One harmonic of a pair: `η = eta cos(mκx)`, `φ̂ = profile(s) cos(mκx)`.
#[derive(Debug, Clone)]
pub struct ModalTerm {
    pub m: u64,
    pub eta: f64,
    pub profile: Profile,
}

/// An element `(η, φ̂)` of `X` (or of `Y`, with the second component read
/// as an interior function).
#[derive(Debug, Clone)]
pub struct ModalPair {
    pub kappa: f64,
    pub terms: Vec<ModalTerm>,
}

impl ModalPair {
    pub fn zero(kappa: f64) -> Self {
        Self {
            kappa,
            terms: Vec::new(),
        }
    }

    pub fn jet(&self, x: f64, s: f64) -> WJet {
        let mut j = WJet::default();
        for t in &self.terms {
            let q = t.m as f64 * self.kappa;
            let (sn, cs) = (q * x).sin_cos();
            let [f, fs, fss] = t.profile.eval(s);
            j.eta += t.eta * cs;
            j.eta_x -= q * t.eta * sn;
            j.eta_xx -= q * q * t.eta * cs;
            j.ph += f * cs;
            j.ph_s += fs * cs;
            j.ph_ss += fss * cs;
            j.ph_x -= q * f * sn;
            j.ph_xs -= q * fs * sn;
            j.ph_xx -= q * q * f * cs;
        }
        j
    }

    pub fn eta_at(&self, x: f64) -> f64 {
        self.terms
            .iter()
            .map(|t| t.eta * (t.m as f64 * self.kappa * x).cos())
            .sum()
    }

    pub fn phi_at(&self, x: f64, s: f64) -> f64 {
        self.terms
            .iter()
            .map(|t| t.profile.value(s) * (t.m as f64 * self.kappa * x).cos())
            .sum()
    }

    pub fn max_harmonic(&self) -> u64 {
        self.terms.iter().map(|t| t.m).max().unwrap_or(0)
    }

    /// `a·self + b·other`
    pub fn combine(&self, a: f64, other: &ModalPair, b: f64) -> ModalPair {
        let mut terms: Vec<ModalTerm> = self
            .terms
            .iter()
            .map(|t| ModalTerm {
                m: t.m,
                eta: a * t.eta,
                profile: t.profile.combine(a, &Profile::zero(), 0.0),
            })
            .collect();
        for t in &other.terms {
            if let Some(u) = terms.iter_mut().find(|u| u.m == t.m) {
                u.eta += b * t.eta;
                u.profile = u.profile.combine(1.0, &t.profile, b);
            } else {
                terms.push(ModalTerm {
                    m: t.m,
                    eta: b * t.eta,
                    profile: t.profile.combine(b, &Profile::zero(), 0.0),
                });
            }
        }
        ModalPair {
            kappa: self.kappa,
            terms,
        }
    }
}

/// Anything with a surface and an interior component that can enter the
/// `Y` inner product.
pub trait YElement: Sync {
    fn surface(&self, x: f64) -> f64;
    fn interior(&self, x: f64, s: f64) -> f64;
    /// Largest harmonic index present; sets the trapezoid resolution.
    fn max_harmonic(&self) -> u64;
}

impl YElement for ModalPair {
    fn surface(&self, x: f64) -> f64 {
        self.eta_at(x)
    }
    fn interior(&self, x: f64, s: f64) -> f64 {
        self.phi_at(x, s)
    }
    fn max_harmonic(&self) -> u64 {
        ModalPair::max_harmonic(self)
    }
}

type SurfaceFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;
type InteriorFn = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;

/// A `Y`-valued result given pointwise, e.g. `L(Λ)φ` or a derivative of
/// the flattened operator.
#[derive(Clone)]
pub struct YFunctions {
    pub surface: SurfaceFn,
    pub interior: InteriorFn,
    pub max_harmonic: u64,
}

impl YElement for YFunctions {
    fn surface(&self, x: f64) -> f64 {
        (self.surface)(x)
    }
    fn interior(&self, x: f64, s: f64) -> f64 {
        (self.interior)(x, s)
    }
    fn max_harmonic(&self) -> u64 {
        self.max_harmonic
    }
}

/// The pair `T(Λ)φ = (η_φ, φ̂)` together with the mode it came from.
#[derive(Debug, Clone)]
pub struct KernelPair {
    pub pair: ModalPair,
    pub source_mode: Option<KernelMode>,
}

impl KernelPair {
    pub fn eta_phi(&self, x: f64) -> f64 {
        self.pair.eta_at(x)
    }

    pub fn phi_hat(&self, x: f64, s: f64) -> f64 {
        self.pair.phi_at(x, s)
    }
}

fn check_vanishes_at_bottom(phi: &ModalField) -> Result<()> {
    for (m, p) in &phi.terms {
        let [v0, v1, _] = p.eval(0.0);
        if v0.abs() > 1e-12 * (1.0 + v1.abs()) {
            return Err(WaveError::InvalidInput(format!(
                "harmonic {m} does not vanish at s = 0 (value {v0:e})"
            )));
        }
    }
    Ok(())
}

/// `T(Λ)φ = (−φ(·,1)/ψ₀s(1), φ − sψ₀s(s)/ψ₀s(1) φ(·,1))`
pub fn t_isomorphism(flow: &TrivialFlow, phi: &ModalField) -> Result<KernelPair> {
    check_vanishes_at_bottom(phi)?;
    Ok(KernelPair {
        pair: t_map(flow, phi),
        source_mode: None,
    })
}

fn t_map(flow: &TrivialFlow, phi: &ModalField) -> ModalPair {
    let p1 = flow.surface_slope();
    let alpha = flow.params.alpha;
    let fl = *flow;
    let terms = phi
        .terms
        .iter()
        .map(|(m, prof)| {
            let top = prof.value(1.0);
            let prof = prof.clone();
            ModalTerm {
                m: *m,
                eta: -top / p1,
                profile: Profile::new(move |s| {
                    let [f, fs, fss] = prof.eval(s);
                    let (d1, d2) = (fl.psi0_s(s), fl.psi0_ss(s));
                    let g = s * d1 / p1;
                    let gs = (d1 + s * d2) / p1;
                    let gss = (2.0 * d2 + s * alpha * d1) / p1;
                    [f - g * top, fs - gs * top, fss - gss * top]
                }),
            }
        })
        .collect();
    ModalPair {
        kappa: phi.kappa,
        terms,
    }
}

/// `w̃ = (η_φ, φ)`, the cokernel representative attached to `φ`.
pub fn tilde(flow: &TrivialFlow, phi: &ModalField) -> ModalPair {
    let p1 = flow.surface_slope();
    ModalPair {
        kappa: phi.kappa,
        terms: phi
            .terms
            .iter()
            .map(|(m, p)| ModalTerm {
                m: *m,
                eta: -p.value(1.0) / p1,
                profile: p.clone(),
            })
            .collect(),
    }
}

/// `L(Λ)φ = ([ψ₀sφ_s − (ψ₀ss + 1/ψ₀s)φ]_{s=1}, (Δ − α)φ)`
pub fn apply_l(flow: &TrivialFlow, phi: &ModalField) -> YFunctions {
    let p1 = flow.surface_slope();
    let coef = flow.psi0_ss(1.0) + 1.0 / p1;
    let alpha = flow.params.alpha;
    let (a, b) = (phi.clone(), phi.clone());
    YFunctions {
        surface: Arc::new(move |x| {
            let j = a.jet(x, 1.0);
            p1 * j.v_s - coef * j.v
        }),
        interior: Arc::new(move |x, s| {
            let j = b.jet(x, s);
            j.v_xx + j.v_ss - alpha * j.v
        }),
        max_harmonic: phi.max_harmonic(),
    }
}

/// Parameters with respect to which `L(Λ)` is differentiated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Param {
    Mu,
    Alpha,
    Lambda,
}

/// `D_β L(Λ) φ` for fixed `φ`.
pub fn d_param_l(flow: &TrivialFlow, phi: &ModalField, param: Param) -> YFunctions {
    let p1 = flow.surface_slope();
    let (ds, dss, interior_coef) = match param {
        Param::Mu => (flow.psi0_s_mu(1.0), flow.psi0_ss_mu(1.0), 0.0),
        Param::Alpha => (flow.psi0_s_alpha(1.0), flow.psi0_ss_alpha(1.0), -1.0),
        Param::Lambda => (flow.psi0_s_lambda(1.0), flow.psi0_ss_lambda(1.0), 0.0),
    };
    let coef = dss - ds / (p1 * p1);
    let (a, b) = (phi.clone(), phi.clone());
    YFunctions {
        surface: Arc::new(move |x| {
            let j = a.jet(x, 1.0);
            ds * j.v_s - coef * j.v
        }),
        interior: Arc::new(move |x, s| interior_coef * b.value(x, s)),
        max_harmonic: phi.max_harmonic(),
    }
}

/// `⟨w₁, w₂⟩_Y = ∫η₁η₂ dx + ∫∫φ̂₁φ̂₂ dx ds` over one period `2π/κ`.
pub fn ip_y(w1: &dyn YElement, w2: &dyn YElement, kappa: f64) -> f64 {
    let (h1, h2) = (w1.max_harmonic(), w2.max_harmonic());
    let m = (4 * h1.max(h2) + 8).max(h1 + h2 + 1) as usize;
    let (xs, h) = periodic_nodes(m, kappa);
    let (sn, sw) = gauss_legendre(GL_NODES);
    let mut total = 0.0;
    for &x in &xs {
        let mut col = w1.surface(x) * w2.surface(x);
        for (&s, &w) in sn.iter().zip(&sw) {
            col += w * w1.interior(x, s) * w2.interior(x, s);
        }
        total += h * col;
    }
    total
}

/// Mode-wise data of the kernel at a trivial flow.
#[derive(Debug, Clone)]
pub struct ModeData {
    pub mode: KernelMode,
    pub phi: ModalField,
    pub w_star: ModalPair,
    pub w_tilde: ModalPair,
}

impl ModeData {
    pub fn new(flow: &TrivialFlow, n: u64) -> Self {
        let mode = KernelMode::new(n, flow.params.alpha, flow.params.kappa);
        let phi = ModalField::from_mode(&mode);
        Self {
            w_star: t_map(flow, &phi),
            w_tilde: tilde(flow, &phi),
            mode,
            phi,
        }
    }

    pub fn kernel_pair(&self) -> KernelPair {
        KernelPair {
            pair: self.w_star.clone(),
            source_mode: Some(self.mode),
        }
    }

    /// `‖w̃ₙ‖²_Y` in closed form.
    pub fn tilde_norm_sq(&self, flow: &TrivialFlow) -> f64 {
        let th = self.mode.theta.theta_sq;
        let s1 = self.mode.theta.sinhc_at(1.0);
        let p1 = flow.surface_slope();
        let w = harmonic_weight(self.mode.n, flow.params.kappa);
        w * (s1 * s1 / (p1 * p1) + sinhc_sq_integral(th))
    }
}

/// `∫₀^{2π/κ} cos²(nκx) dx`
fn harmonic_weight(n: u64, kappa: f64) -> f64 {
    if n == 0 {
        2.0 * PI / kappa
    } else {
        PI / kappa
    }
}

/// `∫₀¹ (sinh(θs)/θ)² ds`
fn sinhc_sq_integral(theta_sq: f64) -> f64 {
    let z = theta_sq;
    if z.abs() < 1e-3 {
        // 1/3 + 2z/15 + 17z²/315 + …  from the series of sinh²
        let mut sum = 0.0;
        let mut term = 1.0;
        let mut fact = 1.0;
        for k in 1..20u32 {
            // sinh²(t)/t² = Σ_{k≥1} 2^{2k−1} t^{2k−2} / (2k)!
            fact *= (2 * k - 1) as f64 * (2 * k) as f64;
            let c = 2f64.powi(2 * k as i32 - 1) / fact;
            sum += c * term / (2 * k + 1) as f64;
            term *= z;
        }
        return sum;
    }
    let (sc, ch) = branch_kernels(z, 1.0);
    // ∫ sinh²(θs)/θ² ds = (sinh θ cosh θ/θ − 1)/(2θ²)
    (sc * ch - 1.0) / (2.0 * z)
}

/// `⟨Π_Z w⟩` coefficients `⟨w, w̃ₙ⟩/‖w̃ₙ‖²` for each kernel mode.
pub fn project_z(flow: &TrivialFlow, modes: &KernelSet, w: &dyn YElement) -> Result<Vec<(u64, f64)>> {
    if modes.modes.is_empty() {
        return Err(WaveError::InvalidInput("kernel set is empty".into()));
    }
    Ok(modes
        .modes
        .iter()
        .map(|&n| {
            let md = ModeData::new(flow, n);
            (n, ip_y(w, &md.w_tilde, flow.params.kappa) / md.tilde_norm_sq(flow))
        })
        .collect())
}

fn require_modes(flow: &TrivialFlow, ns: &[u64]) -> Result<KernelSet> {
    let ks = kernel_set(&flow.params, DEFAULT_MEMBERSHIP_TOL)?;
    for &n in ns {
        if n == 0 {
            return Err(WaveError::InvalidInput(
                "mode 0 carries no wave; pairings are defined for n >= 1".into(),
            ));
        }
        if !ks.contains(n) {
            return Err(WaveError::NotInKernel(n));
        }
    }
    Ok(ks)
}

/// `A = −(2π/(κψ₀s(1)²))[cot λ + μ²|α|^{3/2}/2]`
pub fn pairing_constant_a(flow: &TrivialFlow) -> f64 {
    let p1 = flow.surface_slope();
    -(2.0 * PI / (flow.params.kappa * p1 * p1)) * transversality_defect(&flow.params)
}

/// `B = (π/κ)[1/(μ²α² sin²λ) − cot λ/(2|α|^{1/2})]`
pub fn pairing_constant_b(flow: &TrivialFlow) -> f64 {
    let p = &flow.params;
    let sl = p.lambda.sin();
    (PI / p.kappa)
        * (1.0 / (p.mu * p.mu * p.alpha * p.alpha * sl * sl)
            - 1.0 / (p.lambda.tan() * 2.0 * p.root_alpha()))
}

/// `f(θ) = (π/κ)(θ − cosh θ sinh θ)/(2θ³)` as a function of `θ²`, with
/// `f(0) = −π/(3κ)`.
pub fn f_theta(theta_sq: f64, kappa: f64) -> f64 {
    let z = theta_sq;
    let g = if z.abs() < 0.1 {
        // −½ Σ_{k≥1} 4^k z^{k−1}/(2k+1)!
        let mut sum = 0.0;
        let mut zk = 1.0;
        let mut fact = 6.0;
        let mut four = 4.0;
        for k in 1..16u32 {
            sum += four * zk / fact;
            zk *= z;
            four *= 4.0;
            fact *= (2 * k + 2) as f64 * (2 * k + 3) as f64;
        }
        -0.5 * sum
    } else if z > 0.0 {
        let t = z.sqrt();
        (t - t.cosh() * t.sinh()) / (2.0 * t * t * t)
    } else {
        let t = (-z).sqrt();
        -(t - t.sin() * t.cos()) / (2.0 * t * t * t)
    };
    PI / kappa * g
}

/// `⟨D_λL(Λ)φₙ, w̃ₙ⟩ = A (sinh θₙ/θₙ)²`
pub fn pairing_dlambda(flow: &TrivialFlow, n: u64) -> Result<f64> {
    require_modes(flow, &[n])?;
    Ok(pairing_dlambda_unchecked(flow, n))
}

fn pairing_dlambda_unchecked(flow: &TrivialFlow, n: u64) -> f64 {
    let s1 = flow.params.theta(n).sinhc_at(1.0);
    pairing_constant_a(flow) * s1 * s1
}

/// `⟨D_αL(Λ)φₙ, w̃ₙ⟩ = B (sinh θₙ/θₙ)² + f(θₙ)`
pub fn pairing_dalpha(flow: &TrivialFlow, n: u64) -> Result<f64> {
    require_modes(flow, &[n])?;
    Ok(pairing_dalpha_unchecked(flow, n))
}

fn pairing_dalpha_unchecked(flow: &TrivialFlow, n: u64) -> f64 {
    let th = flow.params.theta(n);
    let s1 = th.sinhc_at(1.0);
    pairing_constant_b(flow) * s1 * s1 + f_theta(th.theta_sq, flow.params.kappa)
}

/// Quadrature of `⟨D_βL(Λ)φₙ, w̃ₙ⟩_Y`, independent of the closed forms.
pub fn pairing_quadrature(flow: &TrivialFlow, n: u64, param: Param) -> f64 {
    let md = ModeData::new(flow, n);
    let d = d_param_l(flow, &md.phi, param);
    ip_y(&d, &md.w_tilde, flow.params.kappa)
}

#[derive(Debug, Clone, Serialize)]
pub struct DeterminantReport {
    pub n1: u64,
    pub n2: u64,
    /// `[[λ-pairing n₁, λ-pairing n₂], [α-pairing n₁, α-pairing n₂]]`
    pub pairings: [[f64; 2]; 2],
    pub matrix_form: f64,
    /// `A((sinh θ₁/θ₁)² f(θ₂) − (sinh θ₂/θ₂)² f(θ₁))`
    pub reduced_form: f64,
    pub simplified_form: f64,
    pub theta2_zero_branch: bool,
    pub r: f64,
}

impl DeterminantReport {
    pub fn value(&self) -> f64 {
        self.matrix_form
    }

    /// Largest pairwise gap between the three evaluations.
    pub fn agreement(&self) -> f64 {
        let v = [self.matrix_form, self.reduced_form, self.simplified_form];
        (v[0] - v[1]).abs().max((v[0] - v[2]).abs()).max((v[1] - v[2]).abs())
    }
}

/// The determinant `C` of the `(λ, α)` pairings of two kernel modes, in
/// matrix form and in the factored form.
pub fn determinant_c(flow: &TrivialFlow, n1: u64, n2: u64) -> Result<DeterminantReport> {
    if n1 >= n2 {
        return Err(WaveError::InvalidInput(format!("need n1 < n2 (got {n1}, {n2})")));
    }
    require_modes(flow, &[n1, n2])?;
    Ok(determinant_c_unchecked(flow, n1, n2))
}

pub(crate) fn determinant_c_unchecked(flow: &TrivialFlow, n1: u64, n2: u64) -> DeterminantReport {
    let kappa = flow.params.kappa;
    let a = pairing_constant_a(flow);
    let (t1, t2) = (flow.params.theta(n1), flow.params.theta(n2));
    let (s1, s2) = (t1.sinhc_at(1.0), t2.sinhc_at(1.0));
    let (f1, f2) = (f_theta(t1.theta_sq, kappa), f_theta(t2.theta_sq, kappa));
    let pairings = [
        [pairing_dlambda_unchecked(flow, n1), pairing_dlambda_unchecked(flow, n2)],
        [pairing_dalpha_unchecked(flow, n1), pairing_dalpha_unchecked(flow, n2)],
    ];
    let det = pairings[0][0] * pairings[1][1] - pairings[0][1] * pairings[1][0];
    let reduced_form = a * (s1 * s1 * f2 - s2 * s2 * f1);
    let r = rhs_r_unchecked(&flow.params);
    // θ² = α + n²κ² carries rounding of order ε|α|
    let theta2_zero_branch = t2.theta_sq.abs() <= 1e-13 * flow.params.alpha.abs();
    let simplified_form = if theta2_zero_branch {
        PI * a * s1 * s1 / (6.0 * kappa)
    } else {
        // (r − 1)/θ² is evaluated through l − 1 on each mode so that the
        // θ_{n₂} → 0 limit is approached without cancellation.
        let q = |th: f64| l_minus_one(th).map(|v| v / th).unwrap_or(f64::NAN);
        PI * a / (2.0 * kappa) * s1 * s1 * s2 * s2 * r * (q(t2.theta_sq) - q(t1.theta_sq))
    };
    DeterminantReport {
        n1,
        n2,
        pairings,
        matrix_form: det,
        reduced_form,
        simplified_form,
        theta2_zero_branch,
        r,
    }
}

/// Pointwise second and third derivatives of the flattened operator at `(0, Λ)`.
#[derive(Debug, Clone, Copy)]
struct Forms {
    alpha: f64,
    p1_top: f64,
    flow: TrivialFlow,
}

impl Forms {
    fn new(flow: &TrivialFlow) -> Self {
        Self {
            alpha: flow.params.alpha,
            p1_top: flow.surface_slope(),
            flow: *flow,
        }
    }

    fn surface(&self, order: usize, j: &WJet) -> f64 {
        let p = self.p1_top;
        let (e, ex, ps) = (j.eta, j.eta_x, j.ph_s);
        match order {
            1 => (1.0 - p * p) * e + p * ps,
            2 => 3.0 * p * p * e * e + p * p * ex * ex - 4.0 * p * e * ps + ps * ps,
            _ => {
                -12.0 * p * p * e * e * e - 6.0 * p * p * e * ex * ex + 18.0 * p * e * e * ps
                    + 6.0 * p * ex * ex * ps
                    - 6.0 * e * ps * ps
            }
        }
    }

    fn interior(&self, order: usize, s: f64, j: &WJet) -> f64 {
        let (d1, d2) = (self.flow.psi0_s(s), self.flow.psi0_ss(s));
        let (e, ex, exx) = (j.eta, j.eta_x, j.eta_xx);
        match order {
            1 => -2.0 * d2 * e - s * d1 * exx + j.ph_xx + j.ph_ss - self.alpha * j.ph,
            2 => {
                6.0 * d2 * e * e + 2.0 * s * d1 * e * exx + (4.0 * s * d1 + 2.0 * s * s * d2) * ex * ex
                    - 4.0 * e * j.ph_ss
                    - 4.0 * s * ex * j.ph_xs
                    - 2.0 * s * exx * j.ph_s
            }
            _ => {
                -24.0 * d2 * e * e * e - 6.0 * s * d1 * e * e * exx
                    - (24.0 * s * d1 + 12.0 * s * s * d2) * e * ex * ex
                    + 18.0 * e * e * j.ph_ss
                    + 12.0 * s * e * ex * j.ph_xs
                    + 6.0 * s * e * exx * j.ph_s
                    + 12.0 * s * ex * ex * j.ph_s
                    + 6.0 * s * s * ex * ex * j.ph_ss
            }
        }
    }

    /// Symmetric multilinear value by polarization of the diagonal form.
    fn polarized<F: Fn(&WJet) -> f64>(order: usize, jets: &[WJet], q: F) -> f64 {
        match order {
            1 => q(&jets[0]),
            2 => 0.25 * (q(&(jets[0] + jets[1])) - q(&(jets[0] - jets[1]))),
            _ => {
                let mut acc = 0.0;
                for e2 in [1.0, -1.0] {
                    for e3 in [1.0, -1.0] {
                        acc += e2 * e3 * q(&(jets[0] + jets[1] * e2 + jets[2] * e3));
                    }
                }
                acc / 24.0
            }
        }
    }
}

/// `D^k_w F(0, Λ)[w₁, …, w_k]` for `k = 1, 2, 3`; the surface component is
/// evaluated at `s = 1`.
pub fn appendix_derivatives(flow: &TrivialFlow, inputs: &[ModalPair], order: usize) -> Result<YFunctions> {
    if !(1..=3).contains(&order) {
        return Err(WaveError::InvalidInput(format!("order must be 1, 2 or 3 (got {order})")));
    }
    if inputs.len() != order {
        return Err(WaveError::InvalidInput(format!(
            "order {order} needs {order} inputs (got {})",
            inputs.len()
        )));
    }
    let forms = Forms::new(flow);
    let max_harmonic = inputs.iter().map(|w| w.max_harmonic()).sum();
    let a: Arc<Vec<ModalPair>> = Arc::new(inputs.to_vec());
    let b = a.clone();
    Ok(YFunctions {
        surface: Arc::new(move |x| {
            let jets: Vec<WJet> = a.iter().map(|w| w.jet(x, 1.0)).collect();
            Forms::polarized(order, &jets, |j| forms.surface(order, j))
        }),
        interior: Arc::new(move |x, s| {
            let jets: Vec<WJet> = b.iter().map(|w| w.jet(x, s)).collect();
            Forms::polarized(order, &jets, |j| forms.interior(order, s, j))
        }),
        max_harmonic,
    })
}

/// `D²_wF(0, Λ*)(w*)² = (c₀ + c₂ cos(2nκx), b₀(s) + b₂(s) cos(2nκx))`
#[derive(Clone)]
pub struct HarmonicCoefficients {
    pub c0: f64,
    pub c2: f64,
    pub b0: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
    pub b2: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
    pub base_mode: u64,
    /// Largest coefficient of any other harmonic, sampled on the surface and
    /// at a few interior levels.
    pub stray_harmonics: f64,
}

impl std::fmt::Debug for HarmonicCoefficients {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HarmonicCoefficients")
            .field("c0", &self.c0)
            .field("c2", &self.c2)
            .field("base_mode", &self.base_mode)
            .field("stray_harmonics", &self.stray_harmonics)
            .finish_non_exhaustive()
    }
}

/// Cosine coefficients `(a₀, a₁, …)` of an even `2π/κ`-periodic function
/// sampled at `m` trapezoid nodes (`a₀` is the mean).
fn cosine_coefficients<F: Fn(f64) -> f64>(f: F, kappa: f64, m: usize, upto: usize) -> Vec<f64> {
    let (xs, _) = periodic_nodes(m, kappa);
    let vals: Vec<f64> = xs.iter().map(|&x| f(x)).collect();
    (0..=upto)
        .map(|k| {
            let acc: f64 = xs
                .iter()
                .zip(&vals)
                .map(|(&x, v)| v * (k as f64 * kappa * x).cos())
                .sum();
            if k == 0 {
                acc / m as f64
            } else {
                2.0 * acc / m as f64
            }
        })
        .collect()
}

pub fn second_order_data(flow: &TrivialFlow, n: u64) -> Result<HarmonicCoefficients> {
    require_modes(flow, &[n])?;
    Ok(second_order_unchecked(flow, n))
}

fn second_order_unchecked(flow: &TrivialFlow, n: u64) -> HarmonicCoefficients {
    let kappa = flow.params.kappa;
    let md = ModeData::new(flow, n);
    let d2 = appendix_derivatives(flow, &[md.w_star.clone(), md.w_star.clone()], 2)
        .expect("order 2 with two inputs");
    let m = 8 * n as usize + 8;
    let two_n = 2 * n as usize;
    let cs = cosine_coefficients(|x| (d2.surface)(x), kappa, m, 3 * n as usize);
    let mut stray = 0.0f64;
    let mut track = |c: &[f64]| {
        for (k, v) in c.iter().enumerate() {
            if k != 0 && k != two_n {
                stray = stray.max(v.abs());
            }
        }
    };
    track(&cs);
    for s in [0.25, 0.5, 0.75, 1.0] {
        let ci = cosine_coefficients(|x| (d2.interior)(x, s), kappa, m, 3 * n as usize);
        track(&ci);
    }
    let (i0, i2) = (d2.interior.clone(), d2.interior.clone());
    HarmonicCoefficients {
        c0: cs[0],
        c2: cs[two_n],
        b0: Arc::new(move |s| cosine_coefficients(|x| i0(x, s), kappa, m, 0)[0]),
        b2: Arc::new(move |s| cosine_coefficients(|x| i2(x, s), kappa, m, two_n)[two_n]),
        base_mode: n,
        stray_harmonics: stray,
    }
}

/// Collocation solution of `a″ − θ²a = −b`, `a(0) = 0`,
/// `ψ₀s(1)a′(1) − (ψ₀ss(1) + 1/ψ₀s(1))a(1) = −c`.
#[derive(Debug, Clone)]
pub struct ModeBvpSolution {
    pub grid: Arc<ChebyshevGrid>,
    pub values: Vec<f64>,
    pub first: Vec<f64>,
    pub second: Vec<f64>,
    pub theta_sq: f64,
    pub boundary_residual: f64,
    pub interior_residual: f64,
}

impl ModeBvpSolution {
    pub fn a(&self, s: f64) -> f64 {
        self.grid.interpolate(&self.values, s)
    }

    pub fn profile(&self) -> Profile {
        let me = self.clone();
        Profile::new(move |s| {
            [
                me.grid.interpolate(&me.values, s),
                me.grid.interpolate(&me.first, s),
                me.grid.interpolate(&me.second, s),
            ]
        })
    }
}

pub fn solve_mode_bvp(
    theta_sq: f64,
    b: &dyn Fn(f64) -> f64,
    c: f64,
    flow: &TrivialFlow,
) -> Result<ModeBvpSolution> {
    solve_mode_bvp_on(Arc::new(ChebyshevGrid::new(BVP_NODES)), theta_sq, b, c, flow)
}

pub fn solve_mode_bvp_on(
    grid: Arc<ChebyshevGrid>,
    theta_sq: f64,
    b: &dyn Fn(f64) -> f64,
    c: f64,
    flow: &TrivialFlow,
) -> Result<ModeBvpSolution> {
    let n = grid.len();
    let p1 = flow.surface_slope();
    let robin = flow.psi0_ss(1.0) + 1.0 / p1;
    let mut mat = DMatrix::zeros(n, n);
    let mut rhs = DVector::zeros(n);
    mat[(0, 0)] = 1.0;
    for i in 1..n - 1 {
        for j in 0..n {
            mat[(i, j)] = grid.d2[(i, j)];
        }
        mat[(i, i)] -= theta_sq;
        rhs[i] = -b(grid.nodes[i]);
    }
    for j in 0..n {
        mat[(n - 1, j)] = p1 * grid.d1[(n - 1, j)];
    }
    mat[(n - 1, n - 1)] -= robin;
    rhs[n - 1] = -c;

    let sv = mat.clone().singular_values();
    let ratio = sv.min() / sv.max();
    if !(ratio > 1e-13) {
        return Err(WaveError::Solvability(format!(
            "collocation matrix is singular (ratio {ratio:.3e}); theta^2 = {theta_sq} is resonant"
        )));
    }
    let sol = mat
        .lu()
        .solve(&rhs)
        .ok_or_else(|| WaveError::Solvability("LU factorization failed".into()))?;
    let values: Vec<f64> = sol.iter().copied().collect();
    let first = grid.differentiate(&values);
    let second = grid.differentiate2(&values);
    let boundary_residual = p1 * first[n - 1] - robin * values[n - 1] + c;
    let interior_residual = (1..n - 1)
        .map(|i| (second[i] - theta_sq * values[i] + b(grid.nodes[i])).abs())
        .fold(0.0, f64::max);
    Ok(ModeBvpSolution {
        grid,
        values,
        first,
        second,
        theta_sq,
        boundary_residual,
        interior_residual,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct NumeratorTerms {
    /// `⟨D³F(w*)³, w̃⟩`
    pub cubic: f64,
    /// `3⟨D²F(w*, Tζ), w̃⟩`
    pub mixed: f64,
    pub numerator: f64,
    /// `3⟨D_λLφ*, w̃⟩`
    pub denominator: f64,
}

/// Second-order data of the one-dimensional bifurcation curve.
#[derive(Debug, Clone)]
pub struct CurveJet {
    pub n: u64,
    pub lambda_dot: f64,
    pub lambda_ddot: f64,
    pub mu_ddot: f64,
    pub ratio_residual: f64,
    pub numerator_terms: NumeratorTerms,
    pub c0: f64,
    pub c2: f64,
    pub a0: ModeBvpSolution,
    pub a2: ModeBvpSolution,
    /// `T(Λ*)ζ` with `ζ = a₀(s) + a₂(s) cos(2nκx)`
    pub w_ddot: ModalPair,
    pub pairing_lambda: f64,
    pub pairing_mu: f64,
}

pub fn curve_jet(flow: &TrivialFlow, n: u64) -> Result<CurveJet> {
    let ks = require_modes(flow, &[n])?;
    if ks.modes != [n] {
        return Err(WaveError::InvalidInput(format!(
            "curve jet needs a one-dimensional kernel, found {:?}",
            ks.modes
        )));
    }
    if !transversality_ok(&flow.params) {
        return Err(WaveError::Domain("transversality condition fails".into()));
    }
    let kappa = flow.params.kappa;
    let alpha = flow.params.alpha;
    let md = ModeData::new(flow, n);
    let hc = second_order_unchecked(flow, n);
    let grid = Arc::new(ChebyshevGrid::new(BVP_NODES));
    let nk = 2.0 * n as f64 * kappa;
    let a0 = solve_mode_bvp_on(grid.clone(), alpha, &*hc.b0, hc.c0, flow)?;
    let a2 = solve_mode_bvp_on(grid, alpha + nk * nk, &*hc.b2, hc.c2, flow)?;
    let zeta = ModalField {
        kappa,
        terms: vec![(0, a0.profile()), (2 * n, a2.profile())],
    };
    let tz = t_map(flow, &zeta);

    let ws = md.w_star.clone();
    let d3 = appendix_derivatives(flow, &[ws.clone(), ws.clone(), ws.clone()], 3)?;
    let d2m = appendix_derivatives(flow, &[ws.clone(), tz.clone()], 2)?;
    let d2d = appendix_derivatives(flow, &[ws.clone(), ws], 2)?;
    let cubic = ip_y(&d3, &md.w_tilde, kappa);
    let mixed = 3.0 * ip_y(&d2m, &md.w_tilde, kappa);
    let quad = ip_y(&d2d, &md.w_tilde, kappa);

    let pairing_lambda = pairing_dlambda_unchecked(flow, n);
    let pairing_mu = pairing_quadrature(flow, n, Param::Mu);
    let numerator = cubic + mixed;
    let denominator = 3.0 * pairing_lambda;
    let lambda_ddot = -numerator / denominator;
    let mu_ddot = -numerator / (3.0 * pairing_mu);
    let ratio = mu_ddot / (flow.params.mu * transversality_defect(&flow.params));
    Ok(CurveJet {
        n,
        lambda_dot: -quad / (2.0 * pairing_lambda),
        lambda_ddot,
        mu_ddot,
        ratio_residual: (lambda_ddot - ratio).abs(),
        numerator_terms: NumeratorTerms {
            cubic,
            mixed,
            numerator,
            denominator,
        },
        c0: hc.c0,
        c2: hc.c2,
        a0,
        a2,
        w_ddot: tz,
        pairing_lambda,
        pairing_mu,
    })
}

/// First-order data of a two-dimensional sheet at its base point.
#[derive(Debug, Clone, Serialize)]
pub struct GradientData {
    pub n1: u64,
    pub n2: u64,
    pub divides: bool,
    /// `Φ_{l tᵢ tⱼ}` coefficients `⟨D²F(wᵢ*, wⱼ*), w̃ₗ⟩/‖w̃ₗ‖²`, indexed `[l][i][j]`.
    pub phi2: [[[f64; 2]; 2]; 2],
    /// `[[Ψ₁α, Ψ₁λ], [Φ₂t₂α, Φ₂t₂λ]]` as coefficients of `w̃ₗ`.
    pub psi_beta: [[f64; 2]; 2],
}

impl GradientData {
    /// `(Ψ₁r, Ψ₂r)` at `(0, v)`.
    pub fn psi_r(&self, v: f64) -> (f64, f64) {
        let p = &self.phi2;
        let (c, s) = (v.cos(), v.sin());
        let psi1 = 0.5 * c * p[0][0][0] + s * p[0][0][1];
        let psi2 = if self.divides {
            0.5 * c * c * p[1][0][0] + 0.5 * s * s * p[1][1][1] + s * c * p[1][0][1]
        } else {
            0.5 * s * p[1][1][1] + c * p[1][0][1]
        };
        (psi1, psi2)
    }

    /// `(ᾱ_r(0, v), λ̄_r(0, v))` from the linearized system.
    pub fn parameter_slopes(&self, v: f64) -> (f64, f64) {
        let (r1, r2) = self.psi_r(v);
        let sv = if self.divides { v.sin() } else { 1.0 };
        let m = [
            [self.psi_beta[0][0], self.psi_beta[0][1]],
            [self.psi_beta[1][0] * sv, self.psi_beta[1][1] * sv],
        ];
        let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
        let a = (-r1 * m[1][1] + r2 * m[0][1]) / det;
        let l = (-r2 * m[0][0] + r1 * m[1][0]) / det;
        (a, l)
    }
}

pub fn gradient_data(flow: &TrivialFlow, n1: u64, n2: u64) -> Result<GradientData> {
    if n1 >= n2 {
        return Err(WaveError::InvalidInput(format!("need n1 < n2 (got {n1}, {n2})")));
    }
    let ks = require_modes(flow, &[n1, n2])?;
    if ks.modes != [n1, n2] {
        return Err(WaveError::InvalidInput(format!(
            "sheet data needs the kernel {{{n1}, {n2}}}, found {:?}",
            ks.modes
        )));
    }
    let kappa = flow.params.kappa;
    let md = [ModeData::new(flow, n1), ModeData::new(flow, n2)];
    let norms = [md[0].tilde_norm_sq(flow), md[1].tilde_norm_sq(flow)];
    let mut phi2 = [[[0.0; 2]; 2]; 2];
    for i in 0..2 {
        for j in i..2 {
            let d2 = appendix_derivatives(flow, &[md[i].w_star.clone(), md[j].w_star.clone()], 2)?;
            for l in 0..2 {
                let v = ip_y(&d2, &md[l].w_tilde, kappa) / norms[l];
                phi2[l][i][j] = v;
                phi2[l][j][i] = v;
            }
        }
    }
    let psi_beta = [
        [
            pairing_dalpha_unchecked(flow, n1) / norms[0],
            pairing_dlambda_unchecked(flow, n1) / norms[0],
        ],
        [
            pairing_dalpha_unchecked(flow, n2) / norms[1],
            pairing_dlambda_unchecked(flow, n2) / norms[1],
        ],
    ];
    Ok(GradientData {
        n1,
        n2,
        divides: n2 % n1 == 0,
        phi2,
        psi_beta,
    })
}
