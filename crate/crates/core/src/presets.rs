//! Named parameter sets: the explicit kernels, a few constructed
//! high-dimensional kernels and a base point with a critical layer.

use std::f64::consts::{FRAC_PI_2, PI};

use serde::Serialize;

use crate::diophantine::construct_kernel_for_h;
use crate::error::{Result, WaveError};
use crate::kernel_analysis::{kernel_set, mu_for_mode, sigma_constant, DEFAULT_MEMBERSHIP_TOL};
use crate::trivial_flows::TrivialParameters;

/// Phase used for the constructed kernels unless overridden.
pub const DEFAULT_CONSTRUCT_LAMBDA: f64 = 0.75 * PI;

#[derive(Debug, Clone, Serialize)]
pub struct Preset {
    pub name: &'static str,
    pub params: TrivialParameters,
    pub kappa: f64,
    /// expected kernel `M`
    pub modes: Vec<u64>,
    pub notes: &'static str,
}

pub const PRESET_NAMES: [&str; 9] = [
    "ek1", "ek2", "ek3", "dio325", "dio1105", "dio3125", "dio725", "dio3145", "cl3",
];

fn explicit(name: &'static str, n: u64, notes: &'static str) -> Result<Preset> {
    // modes n and n+1 share the kernel, θ_{n+1} = 0
    let kappa = match n {
        0 => 1.0,
        1 => sigma_constant() / 3f64.sqrt(),
        _ => sigma_constant() / 5f64.sqrt(),
    };
    let (params, modes) = match n {
        0 => (TrivialParameters::new(1.0, -1.0, FRAC_PI_2, 1.0)?, vec![1]),
        _ => {
            let m = (n + 1) as f64;
            (
                TrivialParameters::new(1.0 / (m * kappa), -m * m * kappa * kappa, FRAC_PI_2, kappa)?,
                vec![n, n + 1],
            )
        }
    };
    Ok(Preset {
        name,
        params,
        kappa,
        modes,
        notes,
    })
}

fn diophantine(name: &'static str, h: u64) -> Result<Preset> {
    let k = construct_kernel_for_h(h, 1, 1, DEFAULT_CONSTRUCT_LAMBDA)?;
    Ok(Preset {
        name,
        params: k.params,
        kappa: k.kappa,
        modes: k.target_modes,
        notes: "kernel built from the two-square representations of H, kappa = pi",
    })
}

pub fn load(name: &str) -> Result<Preset> {
    match name {
        "ek1" => explicit("ek1", 0, "kappa = 1, one-dimensional kernel spanned by cos(x) s"),
        "ek2" => explicit("ek2", 1, "kappa = sigma/sqrt(3), modes 1 and 2 with theta_2 = 0"),
        "ek3" => explicit("ek3", 2, "kappa = sigma/sqrt(5), modes 2 and 3 with theta_3 = 0"),
        "dio325" => diophantine("dio325", 325),
        "dio1105" => diophantine("dio1105", 1105),
        "dio3125" => diophantine("dio3125", 3125),
        "dio725" => diophantine("dio725", 725),
        "dio3145" => diophantine("dio3145", 3145),
        "cl3" => {
            let mu = mu_for_mode(3, -4.0, 1.0, 1.0, 1.0)
                .ok_or_else(|| WaveError::Domain("no mu puts mode 3 in the kernel".into()))?;
            Ok(Preset {
                name: "cl3",
                params: TrivialParameters::new(mu, -4.0, 1.0, 1.0)?,
                kappa: 1.0,
                modes: vec![3],
                notes: "shear flow reverses at s = 1/2; waves carry cat's-eye critical layers",
            })
        }
        _ => Err(WaveError::InvalidInput(format!(
            "unknown preset '{name}' (known: {})",
            PRESET_NAMES.join(", ")
        ))),
    }
}

impl Preset {
    /// Recomputes the kernel and compares it with the stored modes.
    pub fn verify(&self) -> Result<()> {
        let ks = kernel_set(&self.params, DEFAULT_MEMBERSHIP_TOL)?;
        if ks.modes != self.modes {
            return Err(WaveError::Verification(format!(
                "preset {} expects M = {:?}, kernel_set gives {:?}",
                self.name, self.modes, ks.modes
            )));
        }
        Ok(())
    }
}
