#![allow(dead_code)]

use std::f64::consts::PI;

use rand::Rng;
use wavekit::asymptotics::{ModalField, Profile};
use wavekit::kernel_analysis::{kernel_set, mu_for_mode, tan_root, DEFAULT_MEMBERSHIP_TOL};
use wavekit::trivial_flows::{make_trivial_flow, TrivialFlow, TrivialParameters};

/// `θ coth θ` written out directly from `z = θ²`.
pub fn l_of(z: f64) -> f64 {
    if z > 0.0 {
        let t = z.sqrt();
        t * t.cosh() / t.sinh()
    } else if z < 0.0 {
        let t = (-z).sqrt();
        t * t.cos() / t.sin()
    } else {
        1.0
    }
}

/// Plain bisection; `f(a)` and `f(b)` must differ in sign.
pub fn root(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> f64 {
    let fa = f(a);
    assert!(fa * f(b) <= 0.0, "no sign change on [{a}, {b}]");
    for _ in 0..200 {
        let m = 0.5 * (a + b);
        if (f(m) > 0.0) == (fa > 0.0) {
            a = m;
        } else {
            b = m;
        }
    }
    0.5 * (a + b)
}

/// A base point whose kernel contains mode `n`, with `μ` from the local
/// chart. Returns `None` when the draw leaves the admissible set.
pub fn random_member(rng: &mut impl Rng) -> Option<(TrivialParameters, u64)> {
    let kappa = rng.gen_range(0.4..3.0);
    let n = rng.gen_range(1..=5u64);
    let alpha = -rng.gen_range(0.05f64..40.0);
    let lambda = rng.gen_range(0.15..PI - 0.15);
    let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
    let mu = mu_for_mode(n, alpha, lambda, kappa, sign)?;
    let p = TrivialParameters::new(mu, alpha, lambda, kappa).ok()?;
    make_trivial_flow(p).ok()?;
    let ks = kernel_set(&p, DEFAULT_MEMBERSHIP_TOL).ok()?;
    ks.contains(n).then_some((p, n))
}

/// A base point with `θ²_{n₁} = −ϑ₁²` on an oscillatory branch and a second
/// mode `n₂` at the same value of `l`, so that `{n₁, n₂} ⊂ M`.
pub fn random_two_mode(rng: &mut impl Rng) -> Option<(TrivialParameters, u64, u64)> {
    let n1 = rng.gen_range(1..=3u64);
    let n2 = n1 + rng.gen_range(1..=3u64);
    let branch = rng.gen_range(1..=2) as f64;
    let t1 = rng.gen_range(branch * PI + 0.05..(branch + 1.0) * PI - 0.05);
    let target = l_of(-t1 * t1);
    // the second mode sits on the first oscillatory branch or on θ² > 0
    let z2 = if target >= 1.0 {
        let hi = (target + 1.0).powi(2);
        root(|z| l_of(z) - target, 0.0, hi)
    } else {
        let t2 = root(|t| t * t.cos() / t.sin() - target, 1e-9, PI - 1e-12);
        -t2 * t2
    };
    let z1 = -t1 * t1;
    let k2 = (z2 - z1) / ((n2 * n2 - n1 * n1) as f64);
    if !(k2 > 0.0) {
        return None;
    }
    let kappa = k2.sqrt();
    let alpha = z1 - (n1 * n1) as f64 * k2;
    let lambda = rng.gen_range(0.2..PI - 0.2);
    let mu = mu_for_mode(n1, alpha, lambda, kappa, 1.0)?;
    let p = TrivialParameters::new(mu, alpha, lambda, kappa).ok()?;
    make_trivial_flow(p).ok()?;
    let ks = kernel_set(&p, 1e-8).ok()?;
    (ks.contains(n1) && ks.contains(n2)).then_some((p, n1, n2))
}

/// Two modes sharing `l = 1` with `θ²_{n₂} = −σ² ≠ 0`: `θ₁ = ` second root
/// of `tan x = x`, `θ₂ = σ`.
pub fn unit_r_two_mode(n1: u64, n2: u64, lambda: f64) -> (TrivialParameters, u64, u64) {
    let (s1, s2) = (tan_root(2), tan_root(1));
    let k2 = (s1 * s1 - s2 * s2) / ((n2 * n2 - n1 * n1) as f64);
    let kappa = k2.sqrt();
    let alpha = -s1 * s1 - (n1 * n1) as f64 * k2;
    let mu = mu_for_mode(n1, alpha, lambda, kappa, 1.0).expect("chart exists");
    (TrivialParameters::new(mu, alpha, lambda, kappa).unwrap(), n1, n2)
}

pub fn flow(p: TrivialParameters) -> TrivialFlow {
    make_trivial_flow(p).unwrap()
}

/// `c₁ s + c₂ s² + c₃ s³ + d sin(e s)` with its first two derivatives.
pub fn random_profile(rng: &mut impl Rng) -> Profile {
    let c: [f64; 3] = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
    let d = rng.gen_range(-1.0..1.0);
    let e = rng.gen_range(0.5..4.0);
    Profile::new(move |s| {
        [
            c[0] * s + c[1] * s * s + c[2] * s * s * s + d * (e * s).sin(),
            c[0] + 2.0 * c[1] * s + 3.0 * c[2] * s * s + d * e * (e * s).cos(),
            2.0 * c[1] + 6.0 * c[2] * s - d * e * e * (e * s).sin(),
        ]
    })
}

/// A random field on harmonics `0`, the given modes and one more.
pub fn random_field(rng: &mut impl Rng, kappa: f64, modes: &[u64]) -> ModalField {
    let mut harmonics = vec![0];
    harmonics.extend_from_slice(modes);
    harmonics.push(modes.iter().max().copied().unwrap_or(1) + rng.gen_range(1..3));
    ModalField {
        kappa,
        terms: harmonics.into_iter().map(|m| (m, random_profile(rng))).collect(),
    }
}

/// Least squares for `y ≈ Σ cₖ t^{pₖ}`.
pub fn poly_fit(t: &[f64], y: &[f64], powers: &[i32]) -> Vec<f64> {
    let a = nalgebra::DMatrix::from_fn(t.len(), powers.len(), |i, j| t[i].powi(powers[j]));
    let b = nalgebra::DVector::from_column_slice(y);
    let svd = a.svd(true, true);
    svd.solve(&b, 1e-15).unwrap().iter().copied().collect()
}

/// Local maxima of a periodic sample.
pub fn periodic_maxima(v: &[f64]) -> usize {
    let n = v.len();
    (0..n)
        .filter(|&i| {
            let (a, b) = (v[(i + n - 1) % n], v[(i + 1) % n]);
            v[i] > a && v[i] >= b
        })
        .count()
}
