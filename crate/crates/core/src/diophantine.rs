//! Kernels of prescribed dimension from representations of an odd integer
//! as a sum of two squares.

use std::f64::consts::PI;

use serde::Serialize;

use crate::error::{Result, WaveError};
use crate::kernel_analysis::{kernel_set, rhs_r, DEFAULT_MEMBERSHIP_TOL};
use crate::trivial_flows::TrivialParameters;

/// `H = even_part² + odd_part²`
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct TwoSquareRepresentation {
    pub even_part: u64,
    pub odd_part: u64,
    #[serde(rename = "H")]
    pub h: u64,
}

impl TwoSquareRepresentation {
    /// The mode index `even_part / 2`.
    pub fn n(&self) -> u64 {
        self.even_part / 2
    }
}

pub fn isqrt(v: u64) -> u64 {
    let mut r = (v as f64).sqrt() as u64;
    while (r as u128) * (r as u128) > v as u128 {
        r -= 1;
    }
    while ((r + 1) as u128) * ((r + 1) as u128) <= v as u128 {
        r += 1;
    }
    r
}

fn check_odd(h: u64) -> Result<()> {
    if h == 0 || h % 2 == 0 {
        return Err(WaveError::InvalidInput(format!(
            "H must be a positive odd integer (got {h})"
        )));
    }
    Ok(())
}

/// All representations `H = (2n)² + (2m − 1)²`, by exhaustive search,
/// ordered by the even part.
pub fn two_square_representations(h: u64) -> Result<Vec<TwoSquareRepresentation>> {
    check_odd(h)?;
    let top = isqrt(h);
    let mut out = Vec::new();
    let mut e = 0u64;
    while e <= top {
        let rest = h - e * e;
        let o = isqrt(rest);
        if o * o == rest && o % 2 == 1 {
            out.push(TwoSquareRepresentation {
                even_part: e,
                odd_part: o,
                h,
            });
        }
        e += 2;
    }
    Ok(out)
}

/// Prime factorization by trial division, as `(prime, exponent)` pairs.
pub fn factorize(mut v: u64) -> Vec<(u64, u32)> {
    let mut out = Vec::new();
    let mut p = 2u64;
    while (p as u128) * (p as u128) <= v as u128 {
        if v % p == 0 {
            let mut e = 0;
            while v % p == 0 {
                v /= p;
                e += 1;
            }
            out.push((p, e));
        }
        p += if p == 2 { 1 } else { 2 };
    }
    if v > 1 {
        out.push((v, 1));
    }
    out
}

pub fn is_prime(v: u64) -> bool {
    v >= 2 && factorize(v) == vec![(v, 1)]
}

pub fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// Number of representations with even part `≥ 0` and odd part `> 0`,
/// from the factorization of `H`: with `r₂(H) = 4 Π_{p≡1(4)} (e_p + 1)`
/// when every prime `≡ 3 (mod 4)` has even exponent (and `0` otherwise),
/// the count is `(r₂(H)/4 + [H square]) / 2`.
pub fn representation_count_by_factorization(h: u64) -> Result<u64> {
    check_odd(h)?;
    let mut prod = 1u64;
    for (p, e) in factorize(h) {
        if p % 4 == 3 {
            if e % 2 == 1 {
                return Ok(0);
            }
        } else {
            prod *= e as u64 + 1;
        }
    }
    let square = isqrt(h).pow(2) == h;
    Ok((prod + square as u64) / 2)
}

/// `true` when no mode divides another.
pub fn divisor_free(modes: &[u64]) -> bool {
    modes.iter().enumerate().all(|(i, &a)| {
        modes
            .iter()
            .enumerate()
            .all(|(j, &b)| i == j || a == 0 || b % a != 0)
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConstructedKernel {
    pub params: TrivialParameters,
    pub kappa: f64,
    pub target_modes: Vec<u64>,
    #[serde(rename = "H")]
    pub h: u64,
    /// `(r, s)` with `κ = πr/s`
    pub rational_kappa: (u64, u64),
    pub verified_modes: Vec<u64>,
    pub r_value: f64,
    pub divisor_free: bool,
}

/// Parameters for which the kernel is `{s ñ : (2ñ)² + odd² = H}`:
/// `κ = πr/s`, `α = −π²r²H/4`, `μ² = −2/(|α|^{3/2} sin 2λ)`.
pub fn construct_kernel_for_h(h: u64, r: u64, s: u64, lambda: f64) -> Result<ConstructedKernel> {
    check_odd(h)?;
    if r == 0 || r % 2 == 0 {
        return Err(WaveError::InvalidInput(format!("r must be odd and positive (got {r})")));
    }
    if s == 0 || gcd(r, s) != 1 {
        return Err(WaveError::InvalidInput(format!(
            "r and s must be coprime positive integers (got {r}, {s})"
        )));
    }
    if !(lambda > 0.5 * PI && lambda < PI) {
        return Err(WaveError::Domain(format!("lambda must lie in (pi/2, pi) (got {lambda})")));
    }
    let reps = two_square_representations(h)?;
    let mut target_modes: Vec<u64> = reps.iter().map(|t| s * t.n()).collect();
    target_modes.sort_unstable();
    if target_modes.first() == Some(&0) {
        return Err(WaveError::InvalidInput(format!(
            "H = {h} is a perfect square, so mode 0 would enter the kernel"
        )));
    }
    let kappa = PI * r as f64 / s as f64;
    let alpha = -PI * PI * (r * r) as f64 * h as f64 / 4.0;
    let mu = (-2.0 / ((-alpha).powf(1.5) * (2.0 * lambda).sin())).sqrt();
    let params = TrivialParameters::new(mu, alpha, lambda, kappa)?;
    let ks = kernel_set(&params, DEFAULT_MEMBERSHIP_TOL)?;
    let r_value = rhs_r(&params)?;
    if ks.modes != target_modes {
        return Err(WaveError::Verification(format!(
            "kernel scan found {:?}, construction predicts {:?}",
            ks.modes, target_modes
        )));
    }
    Ok(ConstructedKernel {
        params,
        kappa,
        divisor_free: divisor_free(&target_modes),
        target_modes,
        h,
        rational_kappa: (r, s),
        verified_modes: ks.modes,
        r_value,
    })
}

/// The construction with `H = p^{2N−1}`, which has exactly `N`
/// representations.
pub fn construct_kernel(
    dim: u32,
    p: u64,
    r: u64,
    s: u64,
    lambda: f64,
) -> Result<ConstructedKernel> {
    if dim == 0 {
        return Err(WaveError::InvalidInput("dimension must be positive".into()));
    }
    if !is_prime(p) || p % 4 != 1 {
        return Err(WaveError::InvalidInput(format!(
            "p must be a prime congruent to 1 mod 4 (got {p})"
        )));
    }
    let h = p.checked_pow(2 * dim - 1).ok_or_else(|| {
        WaveError::InvalidInput(format!("p^(2N-1) overflows 64 bits for p = {p}, N = {dim}"))
    })?;
    let out = construct_kernel_for_h(h, r, s, lambda)?;
    if out.target_modes.len() != dim as usize {
        return Err(WaveError::Verification(format!(
            "expected {dim} modes, found {}",
            out.target_modes.len()
        )));
    }
    Ok(out)
}
