//! Physical stream-function fields over the fluid domain, stagnation
//! points and closed-streamline (critical layer) detection.

use std::collections::HashMap;

use nalgebra::{Matrix2, Vector2};
use serde::Serialize;

use crate::continuation::{DiscreteWaveState, Discretization};
use crate::error::{Result, WaveError};
use crate::spectral::matvec;
use crate::trivial_flows::{TrivialFlow, TrivialParameters};

/// `ψ` sampled on a uniform `(x, s)` grid, `x ∈ [0, 2π/κ)`, `s ∈ [0, 1]`,
/// with `y = (1 + η(x)) s`. Derivatives are with respect to the flattened
/// coordinates; all grids are indexed `[ix][is]`.
#[derive(Debug, Clone, Serialize)]
pub struct PhysicalField {
    pub params: TrivialParameters,
    pub period: f64,
    pub x: Vec<f64>,
    pub s: Vec<f64>,
    pub eta: Vec<f64>,
    pub y: Vec<Vec<f64>>,
    pub psi: Vec<Vec<f64>>,
    pub psi_x: Vec<Vec<f64>>,
    pub psi_s: Vec<Vec<f64>>,
    pub psi_xs: Vec<Vec<f64>>,
    pub m0: f64,
    pub m1: f64,
    /// `max |ψ − m₀|` on `y = 0` and `max |ψ − m₁|` on the surface
    pub boundary_error: f64,
}

impl PhysicalField {
    pub fn nx(&self) -> usize {
        self.x.len()
    }

    pub fn ns(&self) -> usize {
        self.s.len()
    }

    fn hx(&self) -> f64 {
        self.period / self.nx() as f64
    }

    fn hs(&self) -> f64 {
        1.0 / (self.ns() - 1) as f64
    }

    /// Rows `x,y,psi` in `x`-major order.
    pub fn rows(&self) -> impl Iterator<Item = [f64; 3]> + '_ {
        (0..self.nx()).flat_map(move |i| (0..self.ns()).map(move |j| [self.x[i], self.y[i][j], self.psi[i][j]]))
    }
}

/// Samples `ψ = ψ₀ + φ̂` of `state` on an `nx × ns` grid.
pub fn reconstruct_field(state: &DiscreteWaveState, disc: &Discretization, nx: usize, ns: usize) -> Result<PhysicalField> {
    if nx < 4 || ns < 2 {
        return Err(WaveError::InvalidInput(format!("field resolution too small ({nx} x {ns})")));
    }
    if state.eta.len() != disc.n_x || state.phi_hat.len() != disc.n_x * disc.n_s {
        return Err(WaveError::InvalidInput("state does not match the discretization".into()));
    }
    state.params.validate()?;
    if state.min_depth() <= 0.0 {
        return Err(WaveError::Domain("min(1 + eta) must be positive".into()));
    }
    let flow = TrivialFlow::from_valid(state.params);
    let kappa = disc.kappa;
    let period = 2.0 * std::f64::consts::PI / kappa;
    let n = disc.n_x;
    let ncheb = disc.n_s;
    let eta_c = state.eta_coeffs(disc);
    // cosine coefficients of φ̂ at every Chebyshev node
    let mut coef = vec![vec![0.0; ncheb]; n];
    for i in 0..ncheb {
        let col: Vec<f64> = (0..n).map(|j| state.phi_hat[j * ncheb + i]).collect();
        let c = matvec(&disc.x.analysis, &col);
        for k in 0..n {
            coef[k][i] = c[k];
        }
    }
    let xs: Vec<f64> = (0..nx).map(|i| period * i as f64 / nx as f64).collect();
    let ss: Vec<f64> = (0..ns).map(|j| j as f64 / (ns - 1) as f64).collect();
    let mut out = PhysicalField {
        params: state.params,
        period,
        x: xs.clone(),
        s: ss.clone(),
        eta: Vec::with_capacity(nx),
        y: Vec::with_capacity(nx),
        psi: Vec::with_capacity(nx),
        psi_x: Vec::with_capacity(nx),
        psi_s: Vec::with_capacity(nx),
        psi_xs: Vec::with_capacity(nx),
        m0: flow.m0,
        m1: flow.m1,
        boundary_error: 0.0,
    };
    let base: Vec<[f64; 2]> = ss.iter().map(|&s| [flow.psi0(s), flow.psi0_s(s)]).collect();
    for &x in &xs {
        let eta = disc.x.synthesize(&eta_c, x);
        let mut v = vec![0.0; ncheb];
        let mut vx = vec![0.0; ncheb];
        for k in 0..n {
            let q = k as f64 * kappa;
            let (sn, cs) = (q * x).sin_cos();
            for i in 0..ncheb {
                v[i] += coef[k][i] * cs;
                vx[i] -= coef[k][i] * q * sn;
            }
        }
        let vs = disc.s.differentiate(&v);
        let vxs = disc.s.differentiate(&vx);
        let mut row = [vec![], vec![], vec![], vec![], vec![]];
        for (j, &s) in ss.iter().enumerate() {
            row[0].push((1.0 + eta) * s);
            row[1].push(base[j][0] + disc.s.interpolate(&v, s));
            row[2].push(disc.s.interpolate(&vx, s));
            row[3].push(base[j][1] + disc.s.interpolate(&vs, s));
            row[4].push(disc.s.interpolate(&vxs, s));
        }
        out.boundary_error = out
            .boundary_error
            .max((row[1][0] - flow.m0).abs())
            .max((row[1][ns - 1] - flow.m1).abs());
        let [y, p, px, ps, pxs] = row;
        out.eta.push(eta);
        out.y.push(y);
        out.psi.push(p);
        out.psi_x.push(px);
        out.psi_s.push(ps);
        out.psi_xs.push(pxs);
    }
    Ok(out)
}

/// Stagnation points and closed-streamline levels.
#[derive(Debug, Clone, Default, Serialize)]
pub struct StagnationReport {
    /// physical `(x, y)`
    pub points: Vec<[f64; 2]>,
    /// the same points in flattened `(x, s)` coordinates
    pub flattened: Vec<[f64; 2]>,
    /// `true` where the Hessian is definite (a center), `false` for saddles
    /// and degenerate points
    pub centers: Vec<bool>,
    /// streamline levels with a closed contour around a stagnation point
    pub critical_layers: Vec<f64>,
}

fn hermite(t: f64) -> [[f64; 3]; 4] {
    // value, first and second derivative of h00, h10, h01, h11
    let t2 = t * t;
    let t3 = t2 * t;
    [
        [2.0 * t3 - 3.0 * t2 + 1.0, 6.0 * t2 - 6.0 * t, 12.0 * t - 6.0],
        [t3 - 2.0 * t2 + t, 3.0 * t2 - 4.0 * t + 1.0, 6.0 * t - 4.0],
        [-2.0 * t3 + 3.0 * t2, -6.0 * t2 + 6.0 * t, -12.0 * t + 6.0],
        [t3 - t2, 3.0 * t2 - 2.0 * t, 6.0 * t - 2.0],
    ]
}

/// Bicubic Hermite patch data at `(x, s)`: value, gradient and Hessian.
struct Patch {
    g: Vector2<f64>,
    h: Matrix2<f64>,
}

fn wrap(i: isize, n: usize) -> usize {
    i.rem_euclid(n as isize) as usize
}

fn eval_patch(f: &PhysicalField, x: f64, s: f64) -> Patch {
    let (hx, hs) = (f.hx(), f.hs());
    let (nx, ns) = (f.nx(), f.ns());
    let fx = x / hx;
    let ix = fx.floor();
    let u = fx - ix;
    let js = ((s / hs).floor().max(0.0) as usize).min(ns - 2);
    let v = s / hs - js as f64;
    let i0 = wrap(ix as isize, nx);
    let i1 = wrap(ix as isize + 1, nx);
    let bu = hermite(u);
    let bv = hermite(v);
    let mut g = Vector2::zeros();
    let mut h = Matrix2::zeros();
    for (a, ia) in [(0usize, i0), (1, i1)] {
        for (b, jb) in [(0usize, js), (1, js + 1)] {
            let data = [
                (f.psi[ia][jb], 2 * a, 2 * b),
                (hx * f.psi_x[ia][jb], 2 * a + 1, 2 * b),
                (hs * f.psi_s[ia][jb], 2 * a, 2 * b + 1),
                (hx * hs * f.psi_xs[ia][jb], 2 * a + 1, 2 * b + 1),
            ];
            for (c, pu, pv) in data {
                // 2a + d picks h00, h10, h01, h11 for (end a, derivative d)
                let (eu, ev) = (bu[pu], bv[pv]);
                g[0] += c * eu[1] * ev[0] / hx;
                g[1] += c * eu[0] * ev[1] / hs;
                h[(0, 0)] += c * eu[2] * ev[0] / (hx * hx);
                h[(1, 1)] += c * eu[0] * ev[2] / (hs * hs);
                h[(0, 1)] += c * eu[1] * ev[1] / (hx * hs);
            }
        }
    }
    h[(1, 0)] = h[(0, 1)];
    Patch { g, h }
}

fn sign_change(v: &[f64], tol: f64) -> bool {
    let lo = v.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    (lo <= 0.0 && hi >= 0.0) || v.iter().any(|c| c.abs() <= tol)
}

/// Zeros of `∇ψ` (in flattened coordinates, where they coincide with the
/// physical ones) refined by Newton steps on the bicubic interpolant, and
/// the closed-streamline levels around them.
pub fn detect_stagnation(field: &PhysicalField, tol: f64) -> Result<StagnationReport> {
    if !(tol > 0.0) {
        return Err(WaveError::InvalidInput("tolerance must be positive".into()));
    }
    let (nx, ns) = (field.nx(), field.ns());
    let (hx, hs) = (field.hx(), field.hs());
    let mut found: Vec<[f64; 2]> = Vec::new();
    for i in 0..nx {
        let i1 = (i + 1) % nx;
        for j in 0..ns - 1 {
            let gx = [field.psi_x[i][j], field.psi_x[i1][j], field.psi_x[i][j + 1], field.psi_x[i1][j + 1]];
            let gs = [field.psi_s[i][j], field.psi_s[i1][j], field.psi_s[i][j + 1], field.psi_s[i1][j + 1]];
            if !(sign_change(&gx, tol) && sign_change(&gs, tol)) {
                continue;
            }
            let (x0, s0) = ((i as f64 + 0.5) * hx, (j as f64 + 0.5) * hs);
            let (mut x, mut s) = (x0, s0);
            let mut ok = false;
            for _ in 0..40 {
                let p = eval_patch(field, x, s);
                if p.g.norm() <= tol * 1e-3 {
                    ok = true;
                    break;
                }
                // minimal-norm step, so degenerate (line) zeros stay put in x
                let step = match p.h.svd(true, true).pseudo_inverse(1e-12 * p.h.norm().max(1e-300)) {
                    Ok(pinv) => -(pinv * p.g),
                    Err(_) => break,
                };
                x += step[0];
                s = (s + step[1]).clamp(0.0, 1.0);
                if (x - x0).abs() > 1.5 * hx || (s - s0).abs() > 1.5 * hs {
                    break;
                }
            }
            if !ok {
                ok = eval_patch(field, x, s).g.norm() <= tol;
            }
            if !ok || (x - x0).abs() > 0.5 * hx + 1e-12 || (s - s0).abs() > 0.5 * hs + 1e-12 {
                continue;
            }
            let x = x.rem_euclid(field.period);
            let dup = found.iter().any(|q| {
                let dx = (q[0] - x).abs();
                let dx = dx.min(field.period - dx);
                dx < 0.25 * hx && (q[1] - s).abs() < 0.25 * hs
            });
            if !dup {
                found.push([x, s]);
            }
        }
    }
    found.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
    let mut report = StagnationReport::default();
    for &[x, s] in &found {
        let p = eval_patch(field, x, s);
        report.centers.push(p.h.determinant() > 1e-12 * p.h.norm_squared());
        let eta = interp_periodic(&field.eta, x, hx);
        report.points.push([x, (1.0 + eta) * s]);
        report.flattened.push([x, s]);
    }
    report.critical_layers = closed_levels(field, &found, 48);
    Ok(report)
}

fn interp_periodic(v: &[f64], x: f64, h: f64) -> f64 {
    let n = v.len();
    let t = x / h;
    let i = t.floor();
    let w = t - i;
    let i0 = wrap(i as isize, n);
    (1.0 - w) * v[i0] + w * v[(i0 + 1) % n]
}

/// Edge of the sampling grid: horizontal `(i, j)`–`(i+1, j)` or vertical
/// `(i, j)`–`(i, j+1)`, with `i` taken modulo `nx`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
enum Edge {
    H(usize, usize),
    V(usize, usize),
}

/// Marching squares contours of one level; returns closed, contractible
/// loops as polygons in unwrapped `(x, s)`.
fn closed_loops(field: &PhysicalField, level: f64) -> Vec<Vec<[f64; 2]>> {
    let (nx, ns) = (field.nx(), field.ns());
    let (hx, hs) = (field.hx(), field.hs());
    let val = |i: usize, j: usize| field.psi[i % nx][j] - level;
    let point = |e: Edge| -> [f64; 2] {
        match e {
            Edge::H(i, j) => {
                let (a, b) = (val(i, j), val(i + 1, j));
                [(i as f64 + a / (a - b)) * hx, j as f64 * hs]
            }
            Edge::V(i, j) => {
                let (a, b) = (val(i, j), val(i, j + 1));
                [i as f64 * hx, (j as f64 + a / (a - b)) * hs]
            }
        }
    };
    let mut adj: HashMap<Edge, Vec<Edge>> = HashMap::new();
    let mut link = |a: Edge, b: Edge| {
        adj.entry(a).or_default().push(b);
        adj.entry(b).or_default().push(a);
    };
    for i in 0..nx {
        let i1 = (i + 1) % nx;
        for j in 0..ns - 1 {
            let c = [val(i, j), val(i1, j), val(i1, j + 1), val(i, j + 1)];
            let inside = c.map(|v| v >= 0.0);
            let edges = [Edge::H(i, j), Edge::V(i1, j), Edge::H(i, j + 1), Edge::V(i, j)];
            // edge k joins corners k and k+1
            let cut: Vec<usize> = (0..4).filter(|&k| inside[k] != inside[(k + 1) % 4]).collect();
            match cut.len() {
                2 => link(edges[cut[0]], edges[cut[1]]),
                4 => {
                    let centre = c.iter().sum::<f64>() / 4.0 >= 0.0;
                    if centre == inside[0] {
                        link(edges[0], edges[1]);
                        link(edges[2], edges[3]);
                    } else {
                        link(edges[3], edges[0]);
                        link(edges[1], edges[2]);
                    }
                }
                _ => {}
            }
        }
    }
    let period = field.period;
    let mut seen: std::collections::HashSet<Edge> = Default::default();
    let mut loops = Vec::new();
    let starts: Vec<Edge> = adj.keys().copied().collect();
    for start in starts {
        if seen.contains(&start) || adj[&start].len() != 2 {
            continue;
        }
        let mut poly = vec![point(start)];
        seen.insert(start);
        let (mut prev, mut cur) = (start, adj[&start][0]);
        let mut closed = false;
        loop {
            if cur == start {
                closed = true;
                break;
            }
            if seen.contains(&cur) || adj[&cur].len() != 2 {
                break;
            }
            seen.insert(cur);
            let mut p = point(cur);
            let last = poly.last().expect("nonempty");
            // nearest periodic image keeps the polygon unwrapped
            p[0] += ((last[0] - p[0]) / period).round() * period;
            poly.push(p);
            let nb = &adj[&cur];
            let next = if nb[0] == prev { nb[1] } else { nb[0] };
            prev = cur;
            cur = next;
        }
        if !closed {
            continue;
        }
        let mut p = point(start);
        let last = poly.last().expect("nonempty");
        p[0] += ((last[0] - p[0]) / period).round() * period;
        // a loop that winds once around the period is an open streamline
        if (p[0] - poly[0][0]).abs() < 0.5 * period {
            loops.push(poly);
        }
    }
    loops
}

fn point_in_polygon(poly: &[[f64; 2]], q: [f64; 2]) -> bool {
    let mut inside = false;
    let n = poly.len();
    for k in 0..n {
        let (a, b) = (poly[k], poly[(k + 1) % n]);
        if (a[1] > q[1]) != (b[1] > q[1]) {
            let x = a[0] + (q[1] - a[1]) / (b[1] - a[1]) * (b[0] - a[0]);
            if q[0] < x {
                inside = !inside;
            }
        }
    }
    inside
}

fn closed_levels(field: &PhysicalField, stag: &[[f64; 2]], count: usize) -> Vec<f64> {
    if stag.is_empty() {
        return Vec::new();
    }
    let lo = field.psi.iter().flatten().cloned().fold(f64::INFINITY, f64::min);
    let hi = field.psi.iter().flatten().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        return Vec::new();
    }
    let mut levels = Vec::new();
    for k in 1..count {
        let level = lo + (hi - lo) * k as f64 / count as f64;
        let loops = closed_loops(field, level);
        let encloses = loops.iter().any(|poly| {
            stag.iter().any(|&[x, s]| {
                (-1..=1).any(|m| point_in_polygon(poly, [x + m as f64 * field.period, s]))
            })
        });
        if encloses {
            levels.push(level);
        }
    }
    levels
}
