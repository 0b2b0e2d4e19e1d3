//! Collocation of the flattened free-boundary problem and Newton
//! continuation of small-amplitude solution curves and sheets.
//!
//! Unknowns are `η` at the cosine nodes, `φ̂` on the tensor grid and the
//! free parameters. Residual rows are laid out in the same order as the
//! unknowns: surface rows in the `η` slots, interior and boundary rows in
//! the `φ̂` slots, amplitude constraints in the parameter slots.

use std::sync::Arc;

use faer::linalg::solvers::{PartialPivLu, Solve};
use faer::Mat;
use rayon::prelude::*;
use serde::Serialize;

use crate::asymptotics::{determinant_c_unchecked, ModalPair, ModeData};
use crate::error::{Result, WaveError};
use crate::kernel_analysis::{kernel_set, transversality_ok, DEFAULT_MEMBERSHIP_TOL};
use crate::spectral::{ChebyshevGrid, CosineGrid};
use crate::trivial_flows::{TrivialFlow, TrivialParameters};

pub const DEFAULT_NX: usize = 16;
pub const DEFAULT_NS: usize = 48;

/// Cosine collocation in `x` and Chebyshev collocation in `s`.
#[derive(Debug, Clone)]
pub struct Discretization {
    pub n_x: usize,
    pub n_s: usize,
    pub kappa: f64,
    pub x: CosineGrid,
    pub s: ChebyshevGrid,
}

impl Discretization {
    pub fn new(n_x: usize, n_s: usize, kappa: f64) -> Result<Self> {
        if n_x < 2 || n_s < 4 {
            return Err(WaveError::InvalidInput(format!(
                "grid too small (n_x = {n_x}, n_s = {n_s})"
            )));
        }
        if !(kappa > 0.0 && kappa.is_finite()) {
            return Err(WaveError::Domain(format!("kappa must be positive (got {kappa})")));
        }
        Ok(Self {
            n_x,
            n_s,
            kappa,
            x: CosineGrid::new(n_x, kappa),
            s: ChebyshevGrid::new(n_s),
        })
    }

    /// Number of `(η, φ̂)` unknowns.
    pub fn state_len(&self) -> usize {
        self.n_x * (1 + self.n_s)
    }

    pub fn phi_idx(&self, j: usize, i: usize) -> usize {
        self.n_x + j * self.n_s + i
    }

    /// Discrete `Y` inner product of two packed `(η, φ̂)` vectors.
    pub fn inner(&self, a: &[f64], b: &[f64]) -> f64 {
        let wx = self.x.period_weight();
        let mut acc = 0.0;
        for j in 0..self.n_x {
            acc += a[j] * b[j];
            for i in 0..self.n_s {
                let k = self.phi_idx(j, i);
                acc += self.s.quad[i] * a[k] * b[k];
            }
        }
        wx * acc
    }

    pub fn norm(&self, a: &[f64]) -> f64 {
        self.inner(a, a).sqrt()
    }

    /// Diagonal weights `g` with `inner(a, b) = Σ gₖ aₖ bₖ`.
    pub fn inner_weights(&self) -> Vec<f64> {
        let wx = self.x.period_weight();
        let mut g = vec![wx; self.state_len()];
        for j in 0..self.n_x {
            for i in 0..self.n_s {
                g[self.phi_idx(j, i)] = wx * self.s.quad[i];
            }
        }
        g
    }

    /// Packs a modal pair into nodal `(η, φ̂)` values.
    pub fn sample_pair(&self, w: &ModalPair) -> Vec<f64> {
        let mut out = vec![0.0; self.state_len()];
        for (j, &x) in self.x.nodes.iter().enumerate() {
            out[j] = w.eta_at(x);
            for (i, &s) in self.s.nodes.iter().enumerate() {
                out[self.phi_idx(j, i)] = w.phi_at(x, s);
            }
        }
        out
    }
}

/// A linear amplitude functional `ℓ(w) = ⟨w, w̃ₙ⟩_h / ⟨w*, w̃ₙ⟩_h`.
#[derive(Debug, Clone)]
pub struct AmplitudeConstraint {
    pub mode: u64,
    pub weights: Vec<f64>,
    /// `w*` on the grid, so that `ℓ(w*) = 1`.
    pub w_star: Vec<f64>,
}

impl AmplitudeConstraint {
    pub fn new(disc: &Discretization, flow: &TrivialFlow, mode: u64) -> Self {
        let md = ModeData::new(flow, mode);
        let ws = disc.sample_pair(&md.w_star);
        let wt = disc.sample_pair(&md.w_tilde);
        let den = disc.inner(&ws, &wt);
        let wx = disc.x.period_weight();
        let mut weights = vec![0.0; disc.state_len()];
        for j in 0..disc.n_x {
            weights[j] = wx * wt[j] / den;
            for i in 0..disc.n_s {
                let k = disc.phi_idx(j, i);
                weights[k] = wx * disc.s.quad[i] * wt[k] / den;
            }
        }
        Self {
            mode,
            weights,
            w_star: ws,
        }
    }

    pub fn apply(&self, w: &[f64]) -> f64 {
        self.weights.iter().zip(w).map(|(a, b)| a * b).sum()
    }
}

/// Which of `α`, `λ` are unknowns; `μ` is always held fixed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct FreeParams {
    pub alpha: bool,
    pub lambda: bool,
}

impl FreeParams {
    pub const CURVE: FreeParams = FreeParams {
        alpha: false,
        lambda: true,
    };
    pub const SHEET: FreeParams = FreeParams {
        alpha: true,
        lambda: true,
    };

    pub fn count(&self) -> usize {
        self.alpha as usize + self.lambda as usize
    }
}

/// Collocation values of `(η, φ̂)` together with the parameters and the
/// amplitude coordinates they were computed for.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiscreteWaveState {
    /// `η` at the cosine nodes
    pub eta: Vec<f64>,
    /// `φ̂` on the grid, `x`-major (`j * n_s + i`)
    pub phi_hat: Vec<f64>,
    pub params: TrivialParameters,
    pub amplitude: Vec<f64>,
}

impl DiscreteWaveState {
    pub fn trivial(disc: &Discretization, params: TrivialParameters, amplitude: Vec<f64>) -> Self {
        Self {
            eta: vec![0.0; disc.n_x],
            phi_hat: vec![0.0; disc.n_x * disc.n_s],
            params,
            amplitude,
        }
    }

    pub fn from_packed(w: &[f64], disc: &Discretization, params: TrivialParameters, amplitude: Vec<f64>) -> Self {
        Self {
            eta: w[..disc.n_x].to_vec(),
            phi_hat: w[disc.n_x..disc.state_len()].to_vec(),
            params,
            amplitude,
        }
    }

    pub fn packed(&self) -> Vec<f64> {
        let mut v = self.eta.clone();
        v.extend_from_slice(&self.phi_hat);
        v
    }

    pub fn eta_coeffs(&self, disc: &Discretization) -> Vec<f64> {
        disc.x.coefficients(&self.eta)
    }

    pub fn min_depth(&self) -> f64 {
        self.eta.iter().fold(f64::INFINITY, |m, e| m.min(1.0 + e))
    }
}

fn apply_rows(m: &nalgebra::DMatrix<f64>, v: &[f64], stride: usize, offset: usize, len: usize) -> Vec<f64> {
    (0..m.nrows())
        .map(|r| (0..len).map(|c| m[(r, c)] * v[offset + c * stride]).sum())
        .collect()
}

/// Derivative data of `(η, φ̂)` on the grid.
struct GridFields {
    e: Vec<f64>,
    ex: Vec<f64>,
    exx: Vec<f64>,
    ph: Vec<f64>,
    ph_s: Vec<f64>,
    ph_ss: Vec<f64>,
    ph_xx: Vec<f64>,
    ph_xs: Vec<f64>,
}

impl GridFields {
    fn new(disc: &Discretization, w: &[f64]) -> Self {
        let (nx, ns) = (disc.n_x, disc.n_s);
        let eta = &w[..nx];
        let ex = crate::spectral::matvec(&disc.x.dx, eta);
        let exx = crate::spectral::matvec(&disc.x.dxx, eta);
        let ph = w[nx..nx + nx * ns].to_vec();
        let mut ph_s = vec![0.0; nx * ns];
        let mut ph_ss = vec![0.0; nx * ns];
        for j in 0..nx {
            let col = &ph[j * ns..(j + 1) * ns];
            let d1 = crate::spectral::matvec(&disc.s.d1, col);
            let d2 = crate::spectral::matvec(&disc.s.d2, col);
            ph_s[j * ns..(j + 1) * ns].copy_from_slice(&d1);
            ph_ss[j * ns..(j + 1) * ns].copy_from_slice(&d2);
        }
        let mut ph_xx = vec![0.0; nx * ns];
        let mut ph_xs = vec![0.0; nx * ns];
        for i in 0..ns {
            let a = apply_rows(&disc.x.dxx, &ph, ns, i, nx);
            let b = apply_rows(&disc.x.dx, &ph_s, ns, i, nx);
            for j in 0..nx {
                ph_xx[j * ns + i] = a[j];
                ph_xs[j * ns + i] = b[j];
            }
        }
        Self {
            e: eta.iter().map(|v| 1.0 + v).collect(),
            ex,
            exx,
            ph,
            ph_s,
            ph_ss,
            ph_xx,
            ph_xs,
        }
    }
}

/// `ψ₀` and its parameter derivatives at the `s` nodes.
struct BaseProfiles {
    p: Vec<f64>,
    ps: Vec<f64>,
    pss: Vec<f64>,
    d_lambda: [Vec<f64>; 3],
    d_alpha: [Vec<f64>; 3],
}

impl BaseProfiles {
    fn new(flow: &TrivialFlow, s: &[f64]) -> Self {
        let map = |f: &dyn Fn(f64) -> f64| s.iter().map(|&v| f(v)).collect::<Vec<_>>();
        Self {
            p: map(&|v| flow.psi0(v)),
            ps: map(&|v| flow.psi0_s(v)),
            pss: map(&|v| flow.psi0_ss(v)),
            d_lambda: [
                map(&|v| flow.psi0_lambda(v)),
                map(&|v| flow.psi0_s_lambda(v)),
                map(&|v| flow.psi0_ss_lambda(v)),
            ],
            d_alpha: [
                map(&|v| flow.psi0_alpha(v)),
                map(&|v| flow.psi0_s_alpha(v)),
                map(&|v| flow.psi0_ss_alpha(v)),
            ],
        }
    }
}

/// Residual of the flattened system for packed `w`, optionally with the
/// `w`-Jacobian and the `α`, `λ` parameter columns.
pub(crate) struct Assembled {
    pub res: Vec<f64>,
    pub jac: Option<Mat<f64>>,
    pub d_alpha: Vec<f64>,
    pub d_lambda: Vec<f64>,
}

pub(crate) fn assemble_flattened(
    disc: &Discretization,
    w: &[f64],
    params: &TrivialParameters,
    with_jac: bool,
) -> Assembled {
    let (nx, ns) = (disc.n_x, disc.n_s);
    let n = disc.state_len();
    let flow = TrivialFlow::from_valid(*params);
    let alpha = params.alpha;
    let base = BaseProfiles::new(&flow, &disc.s.nodes);
    let g = GridFields::new(disc, w);
    let top = ns - 1;
    let mut res = vec![0.0; n];
    let mut d_alpha = vec![0.0; n];
    let mut d_lambda = vec![0.0; n];
    let mut jac = if with_jac { Some(Mat::<f64>::zeros(n, n)) } else { None };

    for j in 0..nx {
        let (e, ex, exx) = (g.e[j], g.ex[j], g.exx[j]);
        for i in 0..ns {
            let row = disc.phi_idx(j, i);
            let k = j * ns + i;
            if i == 0 || i == top {
                res[row] = g.ph[k];
                if let Some(m) = jac.as_mut() {
                    m[(row, row)] = 1.0;
                }
                continue;
            }
            let s = disc.s.nodes[i];
            let gg = s * ex / e;
            let c_xs = -2.0 * gg;
            let c_ss = gg * gg + 1.0 / (e * e);
            let c_s = 2.0 * s * ex * ex / (e * e) - s * exx / e;
            let hs = base.ps[i] + g.ph_s[k];
            let hss = base.pss[i] + g.ph_ss[k];
            let h = base.p[i] + g.ph[k];
            let hxs = g.ph_xs[k];
            res[row] = g.ph_xx[k] + c_xs * hxs + c_ss * hss + c_s * hs - alpha * h;

            let [_, dls, dlss] = &base.d_lambda;
            d_lambda[row] = c_ss * dlss[i] + c_s * dls[i] - alpha * base.d_lambda[0][i];
            let [dal, das, dass] = &base.d_alpha;
            d_alpha[row] = c_ss * dass[i] + c_s * das[i] - alpha * dal[i] - h;

            if let Some(m) = jac.as_mut() {
                for jp in 0..nx {
                    let dxx = disc.x.dxx[(j, jp)];
                    let dxc = c_xs * disc.x.dx[(j, jp)];
                    let base_col = disc.phi_idx(jp, 0);
                    m[(row, disc.phi_idx(jp, i))] += dxx;
                    if dxc != 0.0 {
                        for ip in 0..ns {
                            m[(row, base_col + ip)] += dxc * disc.s.d1[(i, ip)];
                        }
                    }
                }
                let own = disc.phi_idx(j, 0);
                for ip in 0..ns {
                    m[(row, own + ip)] += c_ss * disc.s.d2[(i, ip)] + c_s * disc.s.d1[(i, ip)];
                }
                m[(row, row)] -= alpha;

                let e2 = e * e;
                let e3 = e2 * e;
                let d_e = 2.0 * s * ex / e2 * hxs
                    + (-2.0 * s * s * ex * ex / e3 - 2.0 / e3) * hss
                    + (-4.0 * s * ex * ex / e3 + s * exx / e2) * hs;
                let d_ex = -2.0 * s / e * hxs + 2.0 * s * s * ex / e2 * hss + 4.0 * s * ex / e2 * hs;
                let d_exx = -s / e * hs;
                m[(row, j)] += d_e;
                for jp in 0..nx {
                    m[(row, jp)] += d_ex * disc.x.dx[(j, jp)] + d_exx * disc.x.dxx[(j, jp)];
                }
            }
        }

        // surface row
        let k_top = j * ns + top;
        let pp = base.ps[top] + g.ph_s[k_top];
        let a = 1.0 + ex * ex;
        res[j] = a * pp * pp / (2.0 * e * e) + (e - 1.0) - flow.q;
        d_lambda[j] = a * pp / (e * e) * base.d_lambda[1][top] - flow.q_lambda();
        d_alpha[j] = a * pp / (e * e) * base.d_alpha[1][top] - flow.q_alpha();
        if let Some(m) = jac.as_mut() {
            let c = a * pp / (e * e);
            let own = disc.phi_idx(j, 0);
            for ip in 0..ns {
                m[(j, own + ip)] += c * disc.s.d1[(top, ip)];
            }
            m[(j, j)] += -a * pp * pp / (e * e * e) + 1.0;
            let cx = ex * pp * pp / (e * e);
            for jp in 0..nx {
                m[(j, jp)] += cx * disc.x.dx[(j, jp)];
            }
        }
    }
    Assembled {
        res,
        jac,
        d_alpha,
        d_lambda,
    }
}

/// Threshold on `min pivot ratio / |t|`. On transversal base points the
/// ratio scales like `t`, on non-transversal ones like `t²`.
pub const CONDITIONING_ALERT: f64 = 1e-7;

/// Options for the damped Newton corrector.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct NewtonOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub min_step: f64,
    /// Pivot ratio `min|uᵢᵢ|/max|uᵢᵢ|` below which the Jacobian is treated
    /// as singular.
    pub singular_ratio: f64,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        Self {
            tol: 1e-11,
            max_iter: 25,
            min_step: 1.0 / 1024.0,
            singular_ratio: 1e-14,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct NewtonReport {
    pub iterations: usize,
    /// `‖R‖∞` before the first and after every accepted step
    pub residual_history: Vec<f64>,
    pub step_lengths: Vec<f64>,
    /// smallest pivot ratio seen in the LU factorizations
    pub min_pivot_ratio: f64,
    /// set when the pivot ratio is small relative to the amplitude, which
    /// happens when the base point is (nearly) non-transversal
    pub conditioning_alert: bool,
}

impl NewtonReport {
    pub fn final_residual(&self) -> f64 {
        *self.residual_history.last().unwrap_or(&f64::NAN)
    }
}

pub(crate) trait NewtonSystem {
    fn residual(&self, x: &[f64]) -> Vec<f64>;
    fn jacobian(&self, x: &[f64]) -> Mat<f64>;
    fn admissible(&self, x: &[f64]) -> bool;
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn two_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn pivot_ratio(lu: &PartialPivLu<f64>) -> f64 {
    let u = lu.U();
    let n = u.nrows();
    let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
    for i in 0..n {
        let v = u[(i, i)].abs();
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if hi == 0.0 {
        0.0
    } else {
        lo / hi
    }
}

/// Solves `J δ = −r`, reporting the pivot ratio of the factorization.
pub(crate) fn lu_solve(jac: &Mat<f64>, r: &[f64]) -> (Vec<f64>, f64) {
    let n = r.len();
    let lu = jac.partial_piv_lu();
    let ratio = pivot_ratio(&lu);
    let rhs = Mat::<f64>::from_fn(n, 1, |i, _| -r[i]);
    let sol = lu.solve(&rhs);
    ((0..n).map(|i| sol[(i, 0)]).collect(), ratio)
}

pub(crate) fn newton<S: NewtonSystem>(sys: &S, x0: &[f64], opts: &NewtonOptions) -> Result<(Vec<f64>, NewtonReport)> {
    let mut x = x0.to_vec();
    let mut r = sys.residual(&x);
    let mut report = NewtonReport {
        min_pivot_ratio: f64::INFINITY,
        ..Default::default()
    };
    report.residual_history.push(inf_norm(&r));
    for it in 0..opts.max_iter {
        let rn = inf_norm(&r);
        if rn <= opts.tol {
            report.iterations = it;
            return Ok((x, report));
        }
        if !rn.is_finite() {
            break;
        }
        let jac = sys.jacobian(&x);
        let (dx, ratio) = lu_solve(&jac, &r);
        report.min_pivot_ratio = report.min_pivot_ratio.min(ratio);
        if !(ratio > opts.singular_ratio) || dx.iter().any(|v| !v.is_finite()) {
            return Err(WaveError::SingularJacobian { rcond: ratio });
        }
        let r2 = two_norm(&r);
        let mut step = 1.0;
        let mut accepted = None;
        while step >= opts.min_step {
            let trial: Vec<f64> = x.iter().zip(&dx).map(|(a, d)| a + step * d).collect();
            if sys.admissible(&trial) {
                let rt = sys.residual(&trial);
                if two_norm(&rt) <= (1.0 - 1e-4 * step) * r2 {
                    accepted = Some((trial, rt));
                    break;
                }
            }
            step *= 0.5;
        }
        let (xn, rn_vec) = match accepted {
            Some(v) => v,
            None => {
                // no Armijo decrease: take the smallest admissible step so the
                // iteration can still leave a plateau caused by rounding
                let trial: Vec<f64> = x.iter().zip(&dx).map(|(a, d)| a + opts.min_step * d).collect();
                if !sys.admissible(&trial) {
                    return Err(WaveError::Domain(
                        "Newton step leaves the domain min(1 + eta) > 0".into(),
                    ));
                }
                step = opts.min_step;
                let rt = sys.residual(&trial);
                (trial, rt)
            }
        };
        x = xn;
        r = rn_vec;
        report.step_lengths.push(step);
        report.residual_history.push(inf_norm(&r));
        report.iterations = it + 1;
    }
    let rn = inf_norm(&r);
    if rn <= opts.tol {
        return Ok((x, report));
    }
    Err(WaveError::Divergence {
        iterations: report.iterations,
        residual: rn,
    })
}

/// The bordered system `F(w, Λ) = 0`, `ℓ_c(w) = t_c`.
#[derive(Debug, Clone)]
pub struct WaveProblem {
    pub disc: Arc<Discretization>,
    pub base: TrivialParameters,
    pub free: FreeParams,
    pub constraints: Vec<AmplitudeConstraint>,
}

impl WaveProblem {
    pub fn new(disc: Arc<Discretization>, base: TrivialParameters, modes: &[u64], free: FreeParams) -> Result<Self> {
        base.validate()?;
        if (base.kappa - disc.kappa).abs() > 1e-15 * base.kappa {
            return Err(WaveError::InvalidInput("discretization and base point use different kappa".into()));
        }
        if modes.len() != free.count() {
            return Err(WaveError::InvalidInput(format!(
                "{} amplitude constraints need {} free parameters",
                modes.len(),
                modes.len()
            )));
        }
        for &n in modes {
            if n == 0 || n as usize >= disc.n_x / 2 {
                return Err(WaveError::InvalidInput(format!(
                    "mode {n} is not resolved by n_x = {}",
                    disc.n_x
                )));
            }
        }
        let flow = TrivialFlow::from_valid(base);
        let constraints = modes
            .iter()
            .map(|&n| AmplitudeConstraint::new(&disc, &flow, n))
            .collect();
        Ok(Self {
            disc,
            base,
            free,
            constraints,
        })
    }

    fn unknowns(&self) -> usize {
        self.disc.state_len() + self.free.count()
    }

    pub fn pack(&self, state: &DiscreteWaveState) -> Vec<f64> {
        let mut v = state.packed();
        if self.free.alpha {
            v.push(state.params.alpha);
        }
        if self.free.lambda {
            v.push(state.params.lambda);
        }
        v
    }

    fn params_of(&self, x: &[f64]) -> TrivialParameters {
        let mut p = self.base;
        let mut k = self.disc.state_len();
        if self.free.alpha {
            p.alpha = x[k];
            k += 1;
        }
        if self.free.lambda {
            p.lambda = x[k];
        }
        p
    }

    fn with_targets<'a>(&'a self, targets: &'a [f64]) -> Bordered<'a> {
        Bordered { prob: self, targets }
    }

    pub fn unpack(&self, x: &[f64], amplitude: Vec<f64>) -> DiscreteWaveState {
        DiscreteWaveState::from_packed(x, &self.disc, self.params_of(x), amplitude)
    }

    /// The discrete `w*` of the given constraint, as a packed state.
    pub fn kernel_direction(&self, c: usize) -> &[f64] {
        &self.constraints[c].w_star
    }
}

struct Bordered<'a> {
    prob: &'a WaveProblem,
    targets: &'a [f64],
}

impl NewtonSystem for Bordered<'_> {
    fn residual(&self, x: &[f64]) -> Vec<f64> {
        let p = self.prob;
        let n = p.disc.state_len();
        let params = p.params_of(x);
        let mut r = assemble_flattened(&p.disc, &x[..n], &params, false).res;
        for (c, t) in p.constraints.iter().zip(self.targets) {
            r.push(c.apply(&x[..n]) - t);
        }
        r
    }

    fn jacobian(&self, x: &[f64]) -> Mat<f64> {
        let p = self.prob;
        let n = p.disc.state_len();
        let m = p.unknowns();
        let params = p.params_of(x);
        let a = assemble_flattened(&p.disc, &x[..n], &params, true);
        let inner = a.jac.expect("jacobian requested");
        let mut jac = Mat::<f64>::zeros(m, m);
        jac.as_mut().submatrix_mut(0, 0, n, n).copy_from(inner.as_ref());
        let mut col = n;
        if p.free.alpha {
            for r in 0..n {
                jac[(r, col)] = a.d_alpha[r];
            }
            col += 1;
        }
        if p.free.lambda {
            for r in 0..n {
                jac[(r, col)] = a.d_lambda[r];
            }
        }
        for (ci, c) in p.constraints.iter().enumerate() {
            for (k, w) in c.weights.iter().enumerate() {
                jac[(n + ci, k)] = *w;
            }
        }
        jac
    }

    fn admissible(&self, x: &[f64]) -> bool {
        let p = self.prob;
        let params = p.params_of(x);
        x[..p.disc.n_x].iter().all(|e| 1.0 + e > 0.0) && params.validate().is_ok()
    }
}

/// Stacked residual (interior, surface, boundary rows in their unknown
/// slots, then amplitude constraints) of `state` for `problem`.
pub fn assemble_residual(problem: &WaveProblem, state: &DiscreteWaveState) -> Result<Vec<f64>> {
    if state.min_depth() <= 0.0 {
        return Err(WaveError::Domain(format!(
            "min(1 + eta) = {} is not positive",
            state.min_depth()
        )));
    }
    let x = problem.pack(state);
    Ok(problem.with_targets(&state.amplitude).residual(&x))
}

/// Analytic Jacobian of [`assemble_residual`] with respect to the packed
/// unknowns, as a dense row-major matrix.
pub fn assemble_jacobian(problem: &WaveProblem, state: &DiscreteWaveState) -> Vec<Vec<f64>> {
    let x = problem.pack(state);
    let j = problem.with_targets(&state.amplitude).jacobian(&x);
    (0..j.nrows()).map(|r| (0..j.ncols()).map(|c| j[(r, c)]).collect()).collect()
}

/// Newton correction of `state` towards a solution with the amplitude
/// coordinates stored in `state.amplitude`.
pub fn newton_correct(
    problem: &WaveProblem,
    state: &DiscreteWaveState,
    opts: &NewtonOptions,
) -> Result<(DiscreteWaveState, NewtonReport)> {
    if state.amplitude.len() != problem.constraints.len() {
        return Err(WaveError::InvalidInput("amplitude arity does not match the constraints".into()));
    }
    if state.min_depth() <= 0.0 {
        return Err(WaveError::Domain("initial state violates min(1 + eta) > 0".into()));
    }
    let x0 = problem.pack(state);
    let sys = problem.with_targets(&state.amplitude);
    let (x, mut report) = newton(&sys, &x0, opts)?;
    let amp = inf_norm(&state.amplitude);
    report.conditioning_alert = amp > 0.0 && report.min_pivot_ratio.is_finite() && report.min_pivot_ratio < CONDITIONING_ALERT * amp;
    Ok((problem.unpack(&x, state.amplitude.clone()), report))
}

/// One stored solution on a branch.
#[derive(Debug, Clone, Serialize)]
pub struct BranchPoint {
    pub amplitude: Vec<f64>,
    /// `(r, v)` for sheet points
    pub polar: Option<(f64, f64)>,
    pub state: DiscreteWaveState,
    pub residual_norm: f64,
    pub newton: NewtonReport,
}

#[derive(Debug, Clone, Serialize)]
pub struct ContinuationBranch {
    pub kappa: f64,
    pub base_point: TrivialParameters,
    pub modes: Vec<u64>,
    pub n_x: usize,
    pub n_s: usize,
    pub points: Vec<BranchPoint>,
}

fn check_single_mode(base: &TrivialParameters, n: u64) -> Result<()> {
    let ks = kernel_set(base, DEFAULT_MEMBERSHIP_TOL)?;
    if ks.modes != [n] {
        return Err(WaveError::InvalidInput(format!(
            "curve continuation needs M = {{{n}}}, found {:?}",
            ks.modes
        )));
    }
    if n == 0 {
        return Err(WaveError::InvalidInput("mode must be positive".into()));
    }
    if !transversality_ok(base) {
        return Err(WaveError::Domain("transversality condition fails at the base point".into()));
    }
    Ok(())
}

/// Continues the curve bifurcating from `base` in mode `n`, stepping the
/// amplitude `t` from 0 to `t_max` (which may be negative) with `λ` free.
pub fn continue_curve_1d(
    base: TrivialParameters,
    n: u64,
    t_max: f64,
    steps: usize,
    n_x: usize,
    n_s: usize,
    opts: &NewtonOptions,
) -> Result<ContinuationBranch> {
    match continue_curve_1d_partial(base, n, t_max, steps, n_x, n_s, opts)? {
        (branch, None) => Ok(branch),
        (_, Some(fail)) => Err(fail.error),
    }
}

/// The step at which a continuation stopped.
#[derive(Debug)]
pub struct FailedStep {
    pub amplitude: Vec<f64>,
    pub error: WaveError,
}

/// As [`continue_curve_1d`], but a failing step ends the branch early and
/// is returned next to the points computed so far.
pub fn continue_curve_1d_partial(
    base: TrivialParameters,
    n: u64,
    t_max: f64,
    steps: usize,
    n_x: usize,
    n_s: usize,
    opts: &NewtonOptions,
) -> Result<(ContinuationBranch, Option<FailedStep>)> {
    check_single_mode(&base, n)?;
    if !t_max.is_finite() {
        return Err(WaveError::InvalidInput("t_max must be finite".into()));
    }
    let disc = Arc::new(Discretization::new(n_x, n_s, base.kappa)?);
    let prob = WaveProblem::new(disc.clone(), base, &[n], FreeParams::CURVE)?;
    let mut branch = ContinuationBranch {
        kappa: base.kappa,
        base_point: base,
        modes: vec![n],
        n_x,
        n_s,
        points: Vec::new(),
    };
    let trivial = DiscreteWaveState::trivial(&disc, base, vec![0.0]);
    let (s0, rep0) = newton_correct(&prob, &trivial, opts)?;
    branch.points.push(BranchPoint {
        amplitude: vec![0.0],
        polar: None,
        residual_norm: rep0.final_residual(),
        state: s0,
        newton: rep0,
    });
    if t_max == 0.0 || steps == 0 {
        return Ok((branch, None));
    }
    let dt = t_max / steps as f64;
    let ws = prob.kernel_direction(0).to_vec();
    for k in 1..=steps {
        let t = dt * k as f64;
        let pts = &branch.points;
        let guess = if pts.len() >= 2 {
            // secant extrapolation through the last two points
            let a = prob.pack(&pts[pts.len() - 1].state);
            let b = prob.pack(&pts[pts.len() - 2].state);
            a.iter().zip(&b).map(|(x, y)| 2.0 * x - y).collect()
        } else {
            let mut g: Vec<f64> = ws.iter().map(|v| t * v).collect();
            g.push(base.lambda);
            g
        };
        let start = prob.unpack(&guess, vec![t]);
        let (state, rep) = match newton_correct(&prob, &start, opts) {
            Ok(v) => v,
            Err(error) => {
                return Ok((
                    branch,
                    Some(FailedStep {
                        amplitude: vec![t],
                        error,
                    }),
                ))
            }
        };
        branch.points.push(BranchPoint {
            amplitude: vec![t],
            polar: None,
            residual_norm: rep.final_residual(),
            state,
            newton: rep,
        });
    }
    Ok((branch, None))
}

/// `F(w, λ) = 0`, `ℓ(w) = t` and `⟨τ, y − y₀⟩ = ds` in the unknowns
/// `y = (w, λ, t)`.
struct ArclengthSystem<'a> {
    prob: &'a WaveProblem,
    weights: Vec<f64>,
    tangent: Vec<f64>,
    prev: Vec<f64>,
    ds: f64,
}

impl ArclengthSystem<'_> {
    fn arc_row(&self) -> Vec<f64> {
        let n = self.weights.len();
        let mut row: Vec<f64> = self.weights.iter().zip(&self.tangent).map(|(g, t)| g * t).collect();
        row.extend_from_slice(&self.tangent[n..]);
        row
    }

    fn unit(&self, v: Vec<f64>) -> Vec<f64> {
        let n = self.weights.len();
        let q: f64 = (0..n).map(|k| self.weights[k] * v[k] * v[k]).sum::<f64>() + v[n..].iter().map(|x| x * x).sum::<f64>();
        let q = q.sqrt();
        v.into_iter().map(|x| x / q).collect()
    }
}

impl NewtonSystem for ArclengthSystem<'_> {
    fn residual(&self, y: &[f64]) -> Vec<f64> {
        let m = y.len() - 1;
        let mut r = self.prob.with_targets(&[y[m]]).residual(&y[..m]);
        let arc: f64 = self.arc_row().iter().zip(y.iter().zip(&self.prev)).map(|(a, (u, v))| a * (u - v)).sum();
        r.push(arc - self.ds);
        r
    }

    fn jacobian(&self, y: &[f64]) -> Mat<f64> {
        let m = y.len() - 1;
        let inner = self.prob.with_targets(&[y[m]]).jacobian(&y[..m]);
        let mut jac = Mat::<f64>::zeros(m + 1, m + 1);
        jac.as_mut().submatrix_mut(0, 0, m, m).copy_from(inner.as_ref());
        jac[(m - 1, m)] = -1.0;
        for (k, a) in self.arc_row().into_iter().enumerate() {
            jac[(m, k)] = a;
        }
        jac
    }

    fn admissible(&self, y: &[f64]) -> bool {
        self.prob.with_targets(&[0.0]).admissible(&y[..y.len() - 1])
    }
}

/// Pseudo-arclength continuation of the curve in mode `n`: the amplitude
/// `t` becomes an unknown and every step advances `ds` along the secant
/// tangent in `(w, λ, t)`, measured in the discrete `Y` norm. Unlike
/// [`continue_curve_1d`] the stored amplitudes need not be monotone, so
/// folds in `t` can be passed.
pub fn continue_curve_arclength(
    base: TrivialParameters,
    n: u64,
    ds: f64,
    steps: usize,
    n_x: usize,
    n_s: usize,
    opts: &NewtonOptions,
) -> Result<(ContinuationBranch, Option<FailedStep>)> {
    check_single_mode(&base, n)?;
    if !(ds.is_finite() && ds != 0.0) {
        return Err(WaveError::InvalidInput("arclength step must be finite and nonzero".into()));
    }
    let disc = Arc::new(Discretization::new(n_x, n_s, base.kappa)?);
    let prob = WaveProblem::new(disc.clone(), base, &[n], FreeParams::CURVE)?;
    let trivial = DiscreteWaveState::trivial(&disc, base, vec![0.0]);
    let (s0, rep0) = newton_correct(&prob, &trivial, opts)?;
    let mut y = prob.pack(&s0);
    y.push(0.0);
    let mut branch = ContinuationBranch {
        kappa: base.kappa,
        base_point: base,
        modes: vec![n],
        n_x,
        n_s,
        points: vec![BranchPoint {
            amplitude: vec![0.0],
            polar: None,
            residual_norm: rep0.final_residual(),
            state: s0,
            newton: rep0,
        }],
    };
    let mut sys = ArclengthSystem {
        prob: &prob,
        weights: disc.inner_weights(),
        tangent: Vec::new(),
        prev: y.clone(),
        ds: ds.abs(),
    };
    // tangent at the trivial point: (w*, λ̇ = 0, ṫ = 1), oriented by the sign of ds
    let mut t0 = prob.kernel_direction(0).to_vec();
    t0.extend([0.0, 1.0]);
    sys.tangent = sys.unit(t0.into_iter().map(|v| v * ds.signum()).collect());
    for _ in 0..steps {
        let guess: Vec<f64> = sys.prev.iter().zip(&sys.tangent).map(|(p, t)| p + sys.ds * t).collect();
        let (y_new, rep) = match newton(&sys, &guess, opts) {
            Ok(v) => v,
            Err(error) => {
                let amplitude = vec![guess[guess.len() - 1]];
                return Ok((branch, Some(FailedStep { amplitude, error })));
            }
        };
        let m = y_new.len() - 1;
        let t = y_new[m];
        let secant: Vec<f64> = y_new.iter().zip(&sys.prev).map(|(a, b)| a - b).collect();
        sys.tangent = sys.unit(secant);
        sys.prev = y_new.clone();
        branch.points.push(BranchPoint {
            amplitude: vec![t],
            polar: None,
            residual_norm: rep.final_residual(),
            state: prob.unpack(&y_new[..m], vec![t]),
            newton: rep,
        });
    }
    Ok((branch, None))
}

/// Options for sheet continuation.
#[derive(Debug, Clone, Copy)]
pub struct SheetOptions {
    /// radial sub-steps from 0 to the requested `r`
    pub radial_steps: usize,
    /// `|sin v| > δ` is required when `n₁ | n₂`
    pub delta: f64,
    pub newton: NewtonOptions,
}

impl Default for SheetOptions {
    fn default() -> Self {
        Self {
            radial_steps: 4,
            delta: 0.1,
            newton: NewtonOptions::default(),
        }
    }
}

/// Pure-mode branch point: a solution in the `2π/(mκ)`-periodic subspace
/// at which the linearization acquires the other kernel mode.
struct BranchPointSystem<'a> {
    full: &'a Discretization,
    reduced: &'a Discretization,
    mu: f64,
    kappa: f64,
    /// `n_x × n_x_reduced` interpolation from reduced to full nodes
    px: nalgebra::DMatrix<f64>,
    pure: AmplitudeConstraint,
    pure_target: f64,
    other: AmplitudeConstraint,
}

impl BranchPointSystem<'_> {
    fn sizes(&self) -> (usize, usize) {
        (self.reduced.state_len(), self.full.state_len())
    }

    fn lift(&self, wp: &[f64]) -> Vec<f64> {
        let (nxp, nx, ns) = (self.reduced.n_x, self.full.n_x, self.full.n_s);
        let mut out = vec![0.0; self.full.state_len()];
        for j in 0..nx {
            out[j] = (0..nxp).map(|q| self.px[(j, q)] * wp[q]).sum();
            for i in 0..ns {
                out[self.full.phi_idx(j, i)] =
                    (0..nxp).map(|q| self.px[(j, q)] * wp[self.reduced.phi_idx(q, i)]).sum();
            }
        }
        out
    }

    fn lift_matrix(&self) -> Mat<f64> {
        let (np, nf) = self.sizes();
        let (nxp, nx, ns) = (self.reduced.n_x, self.full.n_x, self.full.n_s);
        let mut p = Mat::<f64>::zeros(nf, np);
        for j in 0..nx {
            for q in 0..nxp {
                let c = self.px[(j, q)];
                p[(j, q)] = c;
                for i in 0..ns {
                    p[(self.full.phi_idx(j, i), self.reduced.phi_idx(q, i))] = c;
                }
            }
        }
        p
    }

    fn split<'b>(&self, x: &'b [f64]) -> (&'b [f64], &'b [f64], f64, f64) {
        let (np, nf) = self.sizes();
        (&x[..np], &x[np..np + nf], x[np + nf], x[np + nf + 1])
    }

    fn params(&self, alpha: f64, lambda: f64, kappa: f64) -> TrivialParameters {
        TrivialParameters {
            mu: self.mu,
            alpha,
            lambda,
            kappa,
        }
    }

    fn jz(&self, w: &[f64], z: &[f64], p: &TrivialParameters) -> Vec<f64> {
        let a = assemble_flattened(self.full, w, p, true);
        let j = a.jac.expect("jacobian");
        let n = z.len();
        (0..n).map(|r| (0..n).map(|c| j[(r, c)] * z[c]).sum()).collect()
    }
}

impl NewtonSystem for BranchPointSystem<'_> {
    fn residual(&self, x: &[f64]) -> Vec<f64> {
        let (wp, z, alpha, lambda) = self.split(x);
        let pr = self.params(alpha, lambda, self.reduced.kappa);
        let pf = self.params(alpha, lambda, self.kappa);
        let mut r = assemble_flattened(self.reduced, wp, &pr, false).res;
        r.push(self.pure.apply(wp) - self.pure_target);
        let w = self.lift(wp);
        r.extend(self.jz(&w, z, &pf));
        r.push(self.other.apply(z) - 1.0);
        r
    }

    fn jacobian(&self, x: &[f64]) -> Mat<f64> {
        let (np, nf) = self.sizes();
        let m = np + nf + 2;
        let (wp, z, alpha, lambda) = self.split(x);
        let pr = self.params(alpha, lambda, self.reduced.kappa);
        let pf = self.params(alpha, lambda, self.kappa);
        let mut jac = Mat::<f64>::zeros(m, m);

        let a = assemble_flattened(self.reduced, wp, &pr, true);
        let ja = a.jac.expect("jacobian");
        jac.as_mut().submatrix_mut(0, 0, np, np).copy_from(ja.as_ref());
        for r in 0..np {
            jac[(r, np + nf)] = a.d_alpha[r];
            jac[(r, np + nf + 1)] = a.d_lambda[r];
        }
        for (k, w) in self.pure.weights.iter().enumerate() {
            jac[(np, k)] = *w;
        }

        let w = self.lift(wp);
        let full = assemble_flattened(self.full, &w, &pf, true);
        let jf = full.jac.expect("jacobian");
        jac.as_mut()
            .submatrix_mut(np + 1, np, nf, nf)
            .copy_from(jf.as_ref());

        // D_w(J(w)z) = D²F(w)[z, ·], by central differences along z
        let zn = z.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
        let eps = 1e-5 / zn;
        let wp_plus: Vec<f64> = w.iter().zip(z).map(|(a, b)| a + eps * b).collect();
        let wp_minus: Vec<f64> = w.iter().zip(z).map(|(a, b)| a - eps * b).collect();
        let jp = assemble_flattened(self.full, &wp_plus, &pf, true).jac.expect("jacobian");
        let jm = assemble_flattened(self.full, &wp_minus, &pf, true).jac.expect("jacobian");
        let hess = Mat::<f64>::from_fn(nf, nf, |r, c| (jp[(r, c)] - jm[(r, c)]) / (2.0 * eps));
        let lift = self.lift_matrix();
        let hp = &hess * &lift;
        jac.as_mut().submatrix_mut(np + 1, 0, nf, np).copy_from(hp.as_ref());

        for (col, h) in [(np + nf, 1e-6 * alpha.abs().max(1.0)), (np + nf + 1, 1e-6)] {
            let shift = |d: f64| {
                if col == np + nf {
                    self.params(alpha + d, lambda, self.kappa)
                } else {
                    self.params(alpha, lambda + d, self.kappa)
                }
            };
            let up = self.jz(&w, z, &shift(h));
            let dn = self.jz(&w, z, &shift(-h));
            for r in 0..nf {
                jac[(np + 1 + r, col)] = (up[r] - dn[r]) / (2.0 * h);
            }
        }
        for (k, v) in self.other.weights.iter().enumerate() {
            jac[(np + 1 + nf, np + k)] = *v;
        }
        jac
    }

    fn admissible(&self, x: &[f64]) -> bool {
        let (wp, _, alpha, lambda) = self.split(x);
        wp[..self.reduced.n_x].iter().all(|e| 1.0 + e > 0.0)
            && self.params(alpha, lambda, self.kappa).validate().is_ok()
    }
}

/// Maps reduced-grid nodal values (wavenumber `mκ`) to the full cosine
/// nodes, dropping reduced harmonics the full grid cannot represent.
fn pure_mode_interpolation(full: &Discretization, reduced: &Discretization, m: u64) -> nalgebra::DMatrix<f64> {
    let (nx, nxp) = (full.n_x, reduced.n_x);
    let mut synth = nalgebra::DMatrix::zeros(nx, nxp);
    for (j, &x) in full.x.nodes.iter().enumerate() {
        for q in (0..nxp).take_while(|q| (q * m as usize) < nx) {
            synth[(j, q)] = (q as f64 * m as f64 * full.kappa * x).cos();
        }
    }
    synth * &reduced.x.analysis
}

/// Solution of the branch-point system: packed unknowns `(w_p, z, α, λ)`,
/// the lifted state and the report.
struct PurePoint {
    unknowns: Vec<f64>,
    w: Vec<f64>,
    params: TrivialParameters,
    report: NewtonReport,
}

fn solve_pure_mode_point(
    base: TrivialParameters,
    disc: &Arc<Discretization>,
    pure_mode: u64,
    other_mode: u64,
    t_pure: f64,
    start: Option<Vec<f64>>,
    opts: &NewtonOptions,
) -> Result<PurePoint> {
    let m = pure_mode;
    // with m | n_x the reduced nodes are the first n_x/m full nodes, so the
    // two collocation problems coincide on pure-mode states
    if disc.n_x % m as usize != 0 {
        return Err(WaveError::InvalidInput(format!(
            "n_x = {} is not a multiple of the pure mode {m}",
            disc.n_x
        )));
    }
    let reduced = Discretization::new(disc.n_x / m as usize, disc.n_s, m as f64 * disc.kappa)?;
    let base_r = TrivialParameters {
        kappa: reduced.kappa,
        ..base
    };
    let flow_r = TrivialFlow::from_valid(base_r);
    let flow = TrivialFlow::from_valid(base);
    let sys = BranchPointSystem {
        full: disc,
        reduced: &reduced,
        mu: base.mu,
        kappa: disc.kappa,
        px: pure_mode_interpolation(disc, &reduced, m),
        pure: AmplitudeConstraint::new(&reduced, &flow_r, 1),
        pure_target: t_pure,
        other: AmplitudeConstraint::new(disc, &flow, other_mode),
    };
    let x0 = match start {
        Some(v) => v,
        None => {
            let mut v: Vec<f64> = sys.pure.w_star.iter().map(|w| t_pure * w).collect();
            v.extend(sys.other.w_star.iter());
            v.push(base.alpha);
            v.push(base.lambda);
            v
        }
    };
    let (x, report) = newton(&sys, &x0, opts)?;
    let (wp, _, alpha, lambda) = sys.split(&x);
    let w = sys.lift(wp);
    let params = TrivialParameters { alpha, lambda, ..base };
    Ok(PurePoint {
        w,
        params,
        report,
        unknowns: x,
    })
}

/// Smallest multiple of `lcm(n₁, n₂)` that is at least `n_x`; pure-mode
/// points need the reduced grid to be a subset of the full one.
pub fn sheet_grid_size(n_x: usize, n1: u64, n2: u64) -> usize {
    let l = (n1 / crate::diophantine::gcd(n1, n2) * n2) as usize;
    n_x.div_ceil(l) * l
}

/// Points on the sheet bifurcating from a two-dimensional kernel
/// `{n₁, n₂}`, one radial branch per requested `(r, v)` with
/// `(t₁, t₂) = (r cos v, r sin v)`.
pub fn continue_sheet_2d(
    base: TrivialParameters,
    n1: u64,
    n2: u64,
    rv: &[(f64, f64)],
    n_x: usize,
    n_s: usize,
    opts: &SheetOptions,
) -> Result<Vec<ContinuationBranch>> {
    continue_sheet_2d_each(base, n1, n2, rv, n_x, n_s, opts)?
        .into_iter()
        .map(|r| r.map_err(|f| f.error))
        .collect()
}

/// As [`continue_sheet_2d`], with one outcome per requested `(r, v)`.
pub fn continue_sheet_2d_each(
    base: TrivialParameters,
    n1: u64,
    n2: u64,
    rv: &[(f64, f64)],
    n_x: usize,
    n_s: usize,
    opts: &SheetOptions,
) -> Result<Vec<std::result::Result<ContinuationBranch, FailedStep>>> {
    if n1 >= n2 {
        return Err(WaveError::InvalidInput(format!("need n1 < n2 (got {n1}, {n2})")));
    }
    let ks = kernel_set(&base, DEFAULT_MEMBERSHIP_TOL)?;
    if ks.modes != [n1, n2] {
        return Err(WaveError::InvalidInput(format!(
            "sheet continuation needs M = {{{n1}, {n2}}}, found {:?}",
            ks.modes
        )));
    }
    if !transversality_ok(&base) {
        return Err(WaveError::Domain("transversality condition fails at the base point".into()));
    }
    let flow = TrivialFlow::from_valid(base);
    let c = determinant_c_unchecked(&flow, n1, n2);
    if c.value().abs() <= 1e-12 {
        return Err(WaveError::Domain(format!("determinant C = {:e} vanishes", c.value())));
    }
    let divides = n2 % n1 == 0;
    for &(_, v) in rv {
        if divides && v.sin().abs() <= opts.delta {
            return Err(WaveError::InvalidInput(format!(
                "n1 | n2 requires |sin v| > delta = {} (v = {v})",
                opts.delta
            )));
        }
    }
    let n_x = sheet_grid_size(n_x, n1, n2);
    let disc = Arc::new(Discretization::new(n_x, n_s, base.kappa)?);
    let prob = WaveProblem::new(disc.clone(), base, &[n1, n2], FreeParams::SHEET)?;
    Ok(rv
        .par_iter()
        .map(|&(r, v)| sheet_ray(&prob, &disc, base, n1, n2, r, v, divides, opts))
        .collect())
}

#[allow(clippy::too_many_arguments)]
/// Angles with `|cos v|` or `|sin v|` below this are treated as axis
/// directions.
pub const AXIS_SNAP: f64 = 1e-6;

fn sheet_ray(
    prob: &WaveProblem,
    disc: &Arc<Discretization>,
    base: TrivialParameters,
    n1: u64,
    n2: u64,
    r: f64,
    v: f64,
    divides: bool,
    opts: &SheetOptions,
) -> std::result::Result<ContinuationBranch, FailedStep> {
    let (mut c, mut s) = (v.cos(), v.sin());
    // directions along a coordinate axis are exact pure-mode problems;
    // angles within AXIS_SNAP of an axis are snapped onto it
    if c.abs() < AXIS_SNAP {
        c = 0.0;
    }
    if s.abs() < AXIS_SNAP {
        s = 0.0;
    }
    let mut branch = ContinuationBranch {
        kappa: base.kappa,
        base_point: base,
        modes: vec![n1, n2],
        n_x: disc.n_x,
        n_s: disc.n_s,
        points: Vec::new(),
    };
    let steps = opts.radial_steps.max(1);
    let ws1 = prob.kernel_direction(0).to_vec();
    let ws2 = prob.kernel_direction(1).to_vec();
    let mut last: Option<Vec<f64>> = None;
    let mut last_pure: Option<(Vec<f64>, usize)> = None;
    let mut last_r = 0.0;
    for k in 1..=steps {
        let rk = r * k as f64 / steps as f64;
        let (t1, t2) = (rk * c, rk * s);
        let (state, report) = if c == 0.0 || (s == 0.0 && !divides) {
            let (pure, other, tp) = if c == 0.0 { (n2, n1, t2) } else { (n1, n2, t1) };
            let start = last_pure.as_ref().map(|(x, np): &(Vec<f64>, usize)| {
                let scale = rk / last_r;
                x.iter().enumerate().map(|(k, v)| if k < *np { v * scale } else { *v }).collect()
            });
            let fail = |error| FailedStep {
                amplitude: vec![t1, t2],
                error,
            };
            let pp = solve_pure_mode_point(base, disc, pure, other, tp, start, &opts.newton).map_err(fail)?;
            let st = DiscreteWaveState::from_packed(&pp.w, disc, pp.params, vec![t1, t2]);
            let mut rep = pp.report;
            // certify on the full grid the branch lives on
            let full = sheet_residual(prob, &st);
            if !(full <= 1e-10) {
                return Err(fail(WaveError::Divergence {
                    iterations: rep.iterations,
                    residual: full,
                }));
            }
            rep.residual_history.push(full);
            last_pure = Some((pp.unknowns, disc.state_len()));
            (st, rep)
        } else {
            let guess = match &last {
                Some(p) => {
                    let scale = rk / last_r;
                    let mut g: Vec<f64> = p[..disc.state_len()].iter().map(|v| v * scale).collect();
                    g.extend_from_slice(&p[disc.state_len()..]);
                    g
                }
                None => {
                    let mut g: Vec<f64> = ws1.iter().zip(&ws2).map(|(a, b)| t1 * a + t2 * b).collect();
                    g.push(base.alpha);
                    g.push(base.lambda);
                    g
                }
            };
            let start = prob.unpack(&guess, vec![t1, t2]);
            let (st, rep) = newton_correct(prob, &start, &opts.newton).map_err(|error| FailedStep {
                amplitude: vec![t1, t2],
                error,
            })?;
            last = Some(prob.pack(&st));
            (st, rep)
        };
        last_r = rk;
        branch.points.push(BranchPoint {
            amplitude: vec![t1, t2],
            polar: Some((rk, v)),
            residual_norm: report.final_residual(),
            state,
            newton: report,
        });
    }
    Ok(branch)
}

/// Residual of the full bordered sheet system at a stored state; used to
/// certify points produced by the pure-mode solver.
pub fn sheet_residual(prob: &WaveProblem, state: &DiscreteWaveState) -> f64 {
    let x = prob.pack(state);
    inf_norm(&prob.with_targets(&state.amplitude).residual(&x))
}

/// Solves the interior and boundary rows for `φ̂` given `η` and the
/// parameters (they are linear in `φ̂`).
pub fn recover_interior(disc: &Discretization, eta: &[f64], params: &TrivialParameters) -> Result<Vec<f64>> {
    params.validate()?;
    if eta.len() != disc.n_x {
        return Err(WaveError::InvalidInput(format!(
            "eta has {} values, grid has {}",
            eta.len(),
            disc.n_x
        )));
    }
    if eta.iter().any(|e| 1.0 + e <= 0.0) {
        return Err(WaveError::Domain("min(1 + eta) must be positive".into()));
    }
    let n = disc.state_len();
    let mut w = vec![0.0; n];
    w[..disc.n_x].copy_from_slice(eta);
    let a = assemble_flattened(disc, &w, params, true);
    let jac = a.jac.expect("jacobian");
    let m = disc.n_x * disc.n_s;
    let block = Mat::<f64>::from_fn(m, m, |r, c| jac[(disc.n_x + r, disc.n_x + c)]);
    let (phi, _) = lu_solve(&block, &a.res[disc.n_x..]);
    Ok(phi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_2;

    fn ek1() -> TrivialParameters {
        TrivialParameters::new(1.0, -1.0, FRAC_PI_2, 1.0).unwrap()
    }

    #[test]
    fn trivial_state_has_zero_residual() {
        let disc = Arc::new(Discretization::new(8, 16, 1.0).unwrap());
        let prob = WaveProblem::new(disc.clone(), ek1(), &[1], FreeParams::CURVE).unwrap();
        let st = DiscreteWaveState::trivial(&disc, ek1(), vec![0.0]);
        let r = assemble_residual(&prob, &st).unwrap();
        assert!(inf_norm(&r) < 1e-14);
    }

    #[test]
    fn flat_surface_offset_shows_only_on_surface_rows() {
        let disc = Discretization::new(8, 16, 1.0).unwrap();
        let mut w = vec![0.0; disc.state_len()];
        // a flat raised surface with a rescaled base flow is no solution
        for e in w.iter_mut().take(disc.n_x) {
            *e = 0.1;
        }
        let a = assemble_flattened(&disc, &w, &ek1(), false);
        let flow = TrivialFlow::from_valid(ek1());
        let top = flow.psi0_s(1.0);
        let expect = top * top / (2.0 * 1.1 * 1.1) + 0.1 - flow.q;
        for j in 0..disc.n_x {
            assert!((a.res[j] - expect).abs() < 1e-14);
        }
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let disc = Arc::new(Discretization::new(6, 10, 1.3).unwrap());
        let base = TrivialParameters::new(0.8, -1.7, 1.2, 1.3).unwrap();
        let prob = WaveProblem {
            disc: disc.clone(),
            base,
            free: FreeParams::SHEET,
            constraints: vec![
                AmplitudeConstraint::new(&disc, &TrivialFlow::from_valid(base), 1),
                AmplitudeConstraint::new(&disc, &TrivialFlow::from_valid(base), 2),
            ],
        };
        let n = disc.state_len();
        let mut x: Vec<f64> = (0..n + 2).map(|k| 0.03 * ((k as f64) * 0.7).sin()).collect();
        for j in 0..disc.n_x {
            for i in [0, disc.n_s - 1] {
                x[disc.phi_idx(j, i)] = 0.0;
            }
        }
        x[n] = -1.6;
        x[n + 1] = 1.25;
        let targets = [0.01, 0.02];
        let sys = prob.with_targets(&targets);
        let jac = sys.jacobian(&x);
        let h = 1e-6;
        let mut worst = 0.0f64;
        for c in 0..n + 2 {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[c] += h;
            xm[c] -= h;
            let (rp, rm) = (sys.residual(&xp), sys.residual(&xm));
            for r in 0..n + 2 {
                let fd = (rp[r] - rm[r]) / (2.0 * h);
                let scale = 1.0 + jac[(r, c)].abs();
                worst = worst.max((fd - jac[(r, c)]).abs() / scale);
            }
        }
        assert!(worst < 1e-6, "worst relative mismatch {worst}");
    }

    #[test]
    fn zero_amplitude_returns_trivial_point() {
        let b = continue_curve_1d(ek1(), 1, 0.0, 10, 8, 16, &NewtonOptions::default()).unwrap();
        assert_eq!(b.points.len(), 1);
        assert!(b.points[0].state.eta.iter().all(|e| *e == 0.0));
        assert_eq!(b.points[0].newton.iterations, 0);
    }

    #[test]
    fn small_branch_converges() {
        let b = continue_curve_1d(ek1(), 1, 0.02, 2, 16, 32, &NewtonOptions::default()).unwrap();
        assert_eq!(b.points.len(), 3);
        for p in &b.points {
            assert!(p.residual_norm <= 1e-10, "{}", p.residual_norm);
        }
        let disc = Discretization::new(16, 32, 1.0).unwrap();
        let c = b.points[2].state.eta_coeffs(&disc);
        assert!((c[1] - 0.02).abs() < 0.1 * 0.02);
    }

    #[test]
    fn non_transversal_base_raises_alert() {
        // cot(λ) = −μ²/2 with α = −1, κ = 1 keeps mode 1 in the kernel
        let mu2: f64 = -2.0 + 2.0 * 2f64.sqrt();
        let lam = FRAC_PI_2 + (mu2 / 2.0).atan();
        let bad = TrivialParameters::new(mu2.sqrt(), -1.0, lam, 1.0).unwrap();
        let mut alerts = Vec::new();
        for p in [ek1(), bad] {
            let disc = Arc::new(Discretization::new(16, 32, 1.0).unwrap());
            let prob = WaveProblem::new(disc.clone(), p, &[1], FreeParams::CURVE).unwrap();
            let t = 1e-2;
            let mut g: Vec<f64> = prob.kernel_direction(0).iter().map(|v| t * v).collect();
            g.push(p.lambda);
            let opts = NewtonOptions {
                singular_ratio: 0.0,
                ..Default::default()
            };
            let (_, rep) = newton_correct(&prob, &prob.unpack(&g, vec![t]), &opts).unwrap();
            alerts.push(rep.conditioning_alert);
        }
        assert_eq!(alerts, [false, true]);
    }

    #[test]
    fn arclength_points_lie_on_the_natural_branch() {
        let base = TrivialParameters::new(1.0, -1.0, std::f64::consts::FRAC_PI_2, 1.0).unwrap();
        let opts = NewtonOptions::default();
        let (arc, fail) = continue_curve_arclength(base, 1, 0.02, 3, 12, 24, &opts).unwrap();
        assert!(fail.is_none());
        let ts: Vec<f64> = arc.points.iter().map(|p| p.amplitude[0]).collect();
        assert!(ts.windows(2).all(|w| w[1] > w[0]), "{ts:?}");
        let disc = Arc::new(Discretization::new(12, 24, 1.0).unwrap());
        let prob = WaveProblem::new(disc, base, &[1], FreeParams::CURVE).unwrap();
        for p in &arc.points[1..] {
            assert!(p.residual_norm <= 1e-11);
            let (again, _) = newton_correct(&prob, &p.state, &opts).unwrap();
            assert!((again.params.lambda - p.state.params.lambda).abs() < 1e-12);
        }
    }

    #[test]
    fn interior_recovery_reproduces_solution() {
        let b = continue_curve_1d(ek1(), 1, 0.02, 1, 12, 24, &NewtonOptions::default()).unwrap();
        let st = &b.points[1].state;
        let disc = Discretization::new(12, 24, 1.0).unwrap();
        let phi = recover_interior(&disc, &st.eta, &st.params).unwrap();
        let err = phi.iter().zip(&st.phi_hat).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        assert!(err < 1e-10, "{err}");
    }
}
