//! Spectral building blocks: Chebyshev–Lobatto collocation on `[0, 1]`,
//! cosine collocation in the horizontal variable, and the quadrature rules
//! used for the `Y` inner product.

use std::f64::consts::PI;

use nalgebra::DMatrix;

/// Chebyshev–Lobatto nodes mapped to `[0, 1]`, in ascending order with both
/// endpoints present.
pub fn lobatto_nodes(n: usize) -> Vec<f64> {
    assert!(n >= 2, "need at least two Lobatto nodes");
    let m = (n - 1) as f64;
    (0..n)
        .map(|i| {
            // sin form is symmetric and exact at the endpoints
            let t = (i as f64) * PI / (2.0 * m);
            t.sin().powi(2)
        })
        .collect()
}

fn lobatto_weights(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| {
            let sign = if i % 2 == 0 { 1.0 } else { -1.0 };
            if i == 0 || i == n - 1 {
                0.5 * sign
            } else {
                sign
            }
        })
        .collect()
}

/// Chebyshev collocation on `[0, 1]`: nodes, barycentric weights, first and
/// second differentiation matrices and Clenshaw–Curtis quadrature weights.
#[derive(Debug, Clone)]
pub struct ChebyshevGrid {
    pub nodes: Vec<f64>,
    pub bary: Vec<f64>,
    pub d1: DMatrix<f64>,
    pub d2: DMatrix<f64>,
    pub quad: Vec<f64>,
}

impl ChebyshevGrid {
    pub fn new(n: usize) -> Self {
        let nodes = lobatto_nodes(n);
        let bary = lobatto_weights(n);
        let mut d1 = DMatrix::zeros(n, n);
        for i in 0..n {
            let mut sum = 0.0;
            for j in 0..n {
                if i != j {
                    let v = (bary[j] / bary[i]) / (nodes[i] - nodes[j]);
                    d1[(i, j)] = v;
                    sum += v;
                }
            }
            d1[(i, i)] = -sum;
        }
        // Welfert's recursion for the second derivative keeps the
        // off-diagonal entries exact and fixes the diagonal by row sums.
        let mut d2 = DMatrix::zeros(n, n);
        for i in 0..n {
            let mut sum = 0.0;
            for j in 0..n {
                if i != j {
                    let v = 2.0 * d1[(i, j)] * (d1[(i, i)] - 1.0 / (nodes[i] - nodes[j]));
                    d2[(i, j)] = v;
                    sum += v;
                }
            }
            d2[(i, i)] = -sum;
        }
        let quad = clenshaw_curtis(n);
        Self {
            nodes,
            bary,
            d1,
            d2,
            quad,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Barycentric interpolation of nodal `values` at `s`.
    pub fn interpolate(&self, values: &[f64], s: f64) -> f64 {
        let mut num = 0.0;
        let mut den = 0.0;
        for (j, (&sj, &wj)) in self.nodes.iter().zip(&self.bary).enumerate() {
            let d = s - sj;
            if d == 0.0 {
                return values[j];
            }
            let c = wj / d;
            num += c * values[j];
            den += c;
        }
        num / den
    }

    /// Applies the first differentiation matrix to nodal values.
    pub fn differentiate(&self, values: &[f64]) -> Vec<f64> {
        matvec(&self.d1, values)
    }

    pub fn differentiate2(&self, values: &[f64]) -> Vec<f64> {
        matvec(&self.d2, values)
    }

    pub fn integrate(&self, values: &[f64]) -> f64 {
        self.quad.iter().zip(values).map(|(w, v)| w * v).sum()
    }
}

pub(crate) fn matvec(m: &DMatrix<f64>, v: &[f64]) -> Vec<f64> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)] * v[j]).sum())
        .collect()
}

/// Clenshaw–Curtis weights for the Lobatto nodes of [`lobatto_nodes`],
/// scaled to the interval `[0, 1]`.
pub fn clenshaw_curtis(n: usize) -> Vec<f64> {
    let big_n = n - 1;
    let mut w = vec![0.0; n];
    if big_n == 0 {
        return vec![1.0];
    }
    let theta: Vec<f64> = (0..n).map(|i| i as f64 * PI / big_n as f64).collect();
    let mut v = vec![1.0; n];
    let interior = 1..big_n;
    if big_n % 2 == 0 {
        let nn = (big_n * big_n) as f64;
        w[0] = 1.0 / (nn - 1.0);
        w[big_n] = w[0];
        for k in 1..big_n / 2 {
            for i in interior.clone() {
                v[i] -= 2.0 * (2.0 * k as f64 * theta[i]).cos() / (4.0 * (k * k) as f64 - 1.0);
            }
        }
        for i in interior.clone() {
            v[i] -= (big_n as f64 * theta[i]).cos() / (nn - 1.0);
        }
    } else {
        let nn = (big_n * big_n) as f64;
        w[0] = 1.0 / nn;
        w[big_n] = w[0];
        for k in 1..=(big_n - 1) / 2 {
            for i in interior.clone() {
                v[i] -= 2.0 * (2.0 * k as f64 * theta[i]).cos() / (4.0 * (k * k) as f64 - 1.0);
            }
        }
    }
    for i in interior {
        w[i] = 2.0 * v[i] / big_n as f64;
    }
    // [-1, 1] -> [0, 1]
    w.iter().map(|x| 0.5 * x).collect()
}

/// Gauss–Legendre nodes and weights on `[0, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n {
        let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
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
        nodes[i] = 0.5 * (1.0 - x);
        weights[i] = 1.0 / ((1.0 - x * x) * dp * dp);
    }
    // ascending order
    (nodes, weights)
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let k = k as f64;
        let p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Cosine collocation on the half period `[0, π/κ]` with midpoint nodes
/// `x_j = (j + 1/2) π / (κ N)` and basis `cos(k κ x)`, `k < N`.
#[derive(Debug, Clone)]
pub struct CosineGrid {
    pub kappa: f64,
    pub nodes: Vec<f64>,
    /// nodal values -> cosine coefficients
    pub analysis: DMatrix<f64>,
    pub dx: DMatrix<f64>,
    pub dxx: DMatrix<f64>,
}

impl CosineGrid {
    pub fn new(n: usize, kappa: f64) -> Self {
        let nodes: Vec<f64> = (0..n)
            .map(|j| (j as f64 + 0.5) * PI / (kappa * n as f64))
            .collect();
        let mut analysis = DMatrix::zeros(n, n);
        for k in 0..n {
            let scale = if k == 0 { 1.0 } else { 2.0 } / n as f64;
            for (j, &x) in nodes.iter().enumerate() {
                analysis[(k, j)] = scale * (k as f64 * kappa * x).cos();
            }
        }
        let mut sin_d = DMatrix::zeros(n, n);
        let mut cos_dd = DMatrix::zeros(n, n);
        for (j, &x) in nodes.iter().enumerate() {
            for k in 0..n {
                let q = k as f64 * kappa;
                sin_d[(j, k)] = -q * (q * x).sin();
                cos_dd[(j, k)] = -q * q * (q * x).cos();
            }
        }
        let dx = &sin_d * &analysis;
        let dxx = &cos_dd * &analysis;
        Self {
            kappa,
            nodes,
            analysis,
            dx,
            dxx,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn coefficients(&self, values: &[f64]) -> Vec<f64> {
        matvec(&self.analysis, values)
    }

    /// Evaluates a cosine series with the given coefficients at `x`.
    pub fn synthesize(&self, coeffs: &[f64], x: f64) -> f64 {
        coeffs
            .iter()
            .enumerate()
            .map(|(k, c)| c * (k as f64 * self.kappa * x).cos())
            .sum()
    }

    /// Weight of every node in the full-period integral `∫_0^{2π/κ}` of an
    /// even function.
    pub fn period_weight(&self) -> f64 {
        2.0 * PI / (self.kappa * self.nodes.len() as f64)
    }
}

/// Uniform trapezoid nodes over one full period `[0, 2π/κ)`; exact for
/// trigonometric polynomials of degree below `m`.
pub fn periodic_nodes(m: usize, kappa: f64) -> (Vec<f64>, f64) {
    let period = 2.0 * PI / kappa;
    let h = period / m as f64;
    ((0..m).map(|j| j as f64 * h).collect(), h)
}

/// Bisection for a sign change of `f` on `[a, b]`.
pub fn bisect<F: Fn(f64) -> f64>(f: F, mut a: f64, mut b: f64, tol: f64) -> Option<f64> {
    let mut fa = f(a);
    let fb = f(b);
    if fa == 0.0 {
        return Some(a);
    }
    if fb == 0.0 {
        return Some(b);
    }
    if fa.signum() == fb.signum() {
        return None;
    }
    for _ in 0..200 {
        let m = 0.5 * (a + b);
        if (b - a).abs() <= tol || m == a || m == b {
            return Some(m);
        }
        let fm = f(m);
        if fm == 0.0 {
            return Some(m);
        }
        if fm.signum() == fa.signum() {
            a = m;
            fa = fm;
        } else {
            b = m;
        }
    }
    Some(0.5 * (a + b))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chebyshev_differentiates_polynomials_exactly() {
        let g = ChebyshevGrid::new(12);
        let f: Vec<f64> = g.nodes.iter().map(|s| s.powi(5) - 2.0 * s).collect();
        let d = g.differentiate(&f);
        let dd = g.differentiate2(&f);
        for (i, s) in g.nodes.iter().enumerate() {
            assert!((d[i] - (5.0 * s.powi(4) - 2.0)).abs() < 1e-11);
            assert!((dd[i] - 20.0 * s.powi(3)).abs() < 1e-9);
        }
    }

    #[test]
    fn quadrature_rules_integrate_smooth_functions() {
        let g = ChebyshevGrid::new(33);
        let f: Vec<f64> = g.nodes.iter().map(|s| s.exp()).collect();
        assert!((g.integrate(&f) - (1f64.exp() - 1.0)).abs() < 1e-14);
        let (x, w) = gauss_legendre(64);
        let i: f64 = x.iter().zip(&w).map(|(x, w)| w * (3.0 * x).cos()).sum();
        assert!((i - 3f64.sin() / 3.0).abs() < 1e-14);
        let even = ChebyshevGrid::new(32);
        let f: Vec<f64> = even.nodes.iter().map(|s| s * s).collect();
        assert!((even.integrate(&f) - 1.0 / 3.0).abs() < 1e-14);
    }

    #[test]
    fn cosine_grid_roundtrip_and_derivatives() {
        let kappa = 1.7;
        let g = CosineGrid::new(10, kappa);
        let f: Vec<f64> = g
            .nodes
            .iter()
            .map(|x| 0.3 + (2.0 * kappa * x).cos() - 0.5 * (7.0 * kappa * x).cos())
            .collect();
        let c = g.coefficients(&f);
        assert!((c[0] - 0.3).abs() < 1e-14);
        assert!((c[2] - 1.0).abs() < 1e-14);
        assert!((c[7] + 0.5).abs() < 1e-14);
        let dx = matvec(&g.dx, &f);
        for (j, x) in g.nodes.iter().enumerate() {
            let exact = -2.0 * kappa * (2.0 * kappa * x).sin() + 3.5 * kappa * (7.0 * kappa * x).sin();
            assert!((dx[j] - exact).abs() < 1e-11);
        }
        let integral: f64 = f.iter().map(|v| v * g.period_weight()).sum();
        assert!((integral - 0.3 * 2.0 * PI / kappa).abs() < 1e-12);
    }

    #[test]
    fn interpolation_matches_function() {
        let g = ChebyshevGrid::new(30);
        let f: Vec<f64> = g.nodes.iter().map(|s| (2.0 * s).sin()).collect();
        for s in [0.0, 0.123, 0.5, 0.999, 1.0] {
            assert!((g.interpolate(&f, s) - (2.0 * s).sin()).abs() < 1e-13);
        }
    }
}
