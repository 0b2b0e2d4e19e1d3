//! Branch and field files. Floats are written with 17 significant digits.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::continuation::{recover_interior, ContinuationBranch, DiscreteWaveState, Discretization};
use crate::error::{Result, WaveError};
use crate::field::{PhysicalField, StagnationReport};
use crate::trivial_flows::TrivialParameters;

/// JSON formatter printing every float as `d.dddddddddddddddde±x`.
#[derive(Debug, Default, Clone, Copy)]
pub struct FullPrecision;

impl serde_json::ser::Formatter for FullPrecision {
    fn write_f64<W: ?Sized + Write>(&mut self, w: &mut W, value: f64) -> std::io::Result<()> {
        if value.is_finite() {
            write!(w, "{}", fmt_f64(value))
        } else {
            w.write_all(b"null")
        }
    }

    fn write_f32<W: ?Sized + Write>(&mut self, w: &mut W, value: f32) -> std::io::Result<()> {
        self.write_f64(w, value as f64)
    }
}

pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn to_json<T: Serialize>(value: &T) -> Result<String> {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, FullPrecision);
    value.serialize(&mut ser)?;
    Ok(String::from_utf8(buf).expect("serde_json writes utf-8"))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = to_json(value)?;
    s.push('\n');
    fs::write(path, s)?;
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct BranchHeader {
    pub kappa: f64,
    pub base: TrivialParameters,
    pub modes: Vec<u64>,
    pub n_x: usize,
    pub n_s: usize,
}

/// `t` for curves, `[t₁, t₂]` for sheets.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(untagged)]
pub enum Amplitude {
    Curve(f64),
    Sheet([f64; 2]),
}

impl Amplitude {
    pub fn values(&self) -> Vec<f64> {
        match self {
            Amplitude::Curve(t) => vec![*t],
            Amplitude::Sheet(t) => t.to_vec(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct BranchRecord {
    pub t: Amplitude,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rv: Option<[f64; 2]>,
    pub mu: f64,
    pub lambda: f64,
    pub alpha: f64,
    pub eta_coeffs: Vec<f64>,
    pub residual_norm: f64,
    #[serde(default)]
    pub newton_iterations: usize,
    #[serde(default)]
    pub conditioning_alert: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct BranchFile {
    pub header: BranchHeader,
    pub points: Vec<BranchRecord>,
}

impl BranchFile {
    pub fn from_branch(branch: &ContinuationBranch) -> Result<Self> {
        let disc = Discretization::new(branch.n_x, branch.n_s, branch.kappa)?;
        let points = branch
            .points
            .iter()
            .map(|p| BranchRecord {
                t: match p.amplitude.as_slice() {
                    [t] => Amplitude::Curve(*t),
                    [a, b] => Amplitude::Sheet([*a, *b]),
                    _ => unreachable!("one or two amplitude coordinates"),
                },
                rv: p.polar.map(|(r, v)| [r, v]),
                mu: p.state.params.mu,
                lambda: p.state.params.lambda,
                alpha: p.state.params.alpha,
                eta_coeffs: p.state.eta_coeffs(&disc),
                residual_norm: p.residual_norm,
                newton_iterations: p.newton.iterations,
                conditioning_alert: p.newton.conditioning_alert,
            })
            .collect();
        Ok(Self {
            header: BranchHeader {
                kappa: branch.kappa,
                base: branch.base_point,
                modes: branch.modes.clone(),
                n_x: branch.n_x,
                n_s: branch.n_s,
            },
            points,
        })
    }

    /// Parses and checks a branch document; errors name the offending line
    /// or field.
    pub fn parse(text: &str) -> Result<Self> {
        let file: BranchFile = serde_json::from_str(text).map_err(|e| {
            WaveError::InvalidInput(format!(
                "malformed branch file at line {} column {}: {e}",
                e.line(),
                e.column()
            ))
        })?;
        file.validate()?;
        Ok(file)
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::parse(&fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        let h = &self.header;
        let bad = |what: String| Err(WaveError::InvalidInput(format!("branch file: {what}")));
        if !(h.kappa > 0.0) {
            return bad("header.kappa must be positive".into());
        }
        if (h.base.kappa - h.kappa).abs() > 1e-15 * h.kappa {
            return bad("header.base.kappa differs from header.kappa".into());
        }
        if h.modes.is_empty() || h.modes.len() > 2 {
            return bad("header.modes must list one or two modes".into());
        }
        if h.n_x < 2 || h.n_s < 4 {
            return bad("header.n_x / header.n_s too small".into());
        }
        for (k, p) in self.points.iter().enumerate() {
            if p.eta_coeffs.len() != h.n_x {
                return bad(format!(
                    "points[{k}].eta_coeffs has {} entries, header.n_x is {}",
                    p.eta_coeffs.len(),
                    h.n_x
                ));
            }
            if p.t.values().len() != h.modes.len() {
                return bad(format!("points[{k}].t does not match the number of modes"));
            }
        }
        Ok(())
    }

    /// Rebuilds the collocation state of point `index`; `φ̂` is recovered
    /// from `η` by the linear interior solve.
    pub fn state(&self, index: usize) -> Result<(Discretization, DiscreteWaveState)> {
        let p = self.points.get(index).ok_or_else(|| {
            WaveError::InvalidInput(format!(
                "point index {index} out of range (branch has {} points)",
                self.points.len()
            ))
        })?;
        let h = &self.header;
        let disc = Discretization::new(h.n_x, h.n_s, h.kappa)?;
        let params = TrivialParameters::new(p.mu, p.alpha, p.lambda, h.kappa)?;
        let eta: Vec<f64> = disc.x.nodes.iter().map(|&x| disc.x.synthesize(&p.eta_coeffs, x)).collect();
        let phi_hat = recover_interior(&disc, &eta, &params)?;
        let state = DiscreteWaveState {
            eta,
            phi_hat,
            params,
            amplitude: p.t.values(),
        };
        Ok((disc, state))
    }
}

/// `φ̂` grids of every point: `point,j,i,x,s,phi_hat`.
pub fn write_full_state_csv(path: &Path, branch: &ContinuationBranch) -> Result<()> {
    let disc = Discretization::new(branch.n_x, branch.n_s, branch.kappa)?;
    let mut out = String::from("point,j,i,x,s,phi_hat\n");
    for (k, p) in branch.points.iter().enumerate() {
        for (j, &x) in disc.x.nodes.iter().enumerate() {
            for (i, &s) in disc.s.nodes.iter().enumerate() {
                out.push_str(&format!(
                    "{k},{j},{i},{},{},{}\n",
                    fmt_f64(x),
                    fmt_f64(s),
                    fmt_f64(p.state.phi_hat[j * disc.n_s + i])
                ));
            }
        }
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn field_csv(field: &PhysicalField) -> String {
    let mut out = String::from("x,y,psi\n");
    for [x, y, p] in field.rows() {
        out.push_str(&format!("{},{},{}\n", fmt_f64(x), fmt_f64(y), fmt_f64(p)));
    }
    out
}

/// The report written next to a field CSV.
#[derive(Debug, Clone, Serialize)]
pub struct FieldReport<'a> {
    pub points: &'a [[f64; 2]],
    pub critical_layers: &'a [f64],
    pub centers: &'a [bool],
    pub m0: f64,
    pub m1: f64,
    pub boundary_error: f64,
}

impl<'a> FieldReport<'a> {
    pub fn new(field: &PhysicalField, report: &'a StagnationReport) -> Self {
        Self {
            points: &report.points,
            critical_layers: &report.critical_layers,
            centers: &report.centers,
            m0: field.m0,
            m1: field.m1,
            boundary_error: field.boundary_error,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::continuation::{continue_curve_1d, NewtonOptions};

    #[test]
    fn floats_carry_seventeen_digits() {
        let s = to_json(&vec![0.1f64, -2.5e-300, 1.0]).unwrap();
        assert_eq!(s, "[1.0000000000000001e-1,-2.5000000000000000e-300,1.0000000000000000e0]");
        let back: Vec<f64> = serde_json::from_str(&s).unwrap();
        assert_eq!(back, vec![0.1, -2.5e-300, 1.0]);
    }

    #[test]
    fn branch_round_trip_restores_state() {
        let p = TrivialParameters::new(1.0, -1.0, std::f64::consts::FRAC_PI_2, 1.0).unwrap();
        let b = continue_curve_1d(p, 1, 0.02, 2, 12, 24, &NewtonOptions::default()).unwrap();
        let file = BranchFile::from_branch(&b).unwrap();
        let text = to_json(&file).unwrap();
        let back = BranchFile::parse(&text).unwrap();
        assert_eq!(back, file);
        let (_, st) = back.state(2).unwrap();
        let orig = &b.points[2].state;
        let err = st.phi_hat.iter().zip(&orig.phi_hat).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        assert!(err < 1e-10, "{err}");
        assert!(st.eta.iter().zip(&orig.eta).all(|(a, b)| (a - b).abs() < 1e-14));
    }

    #[test]
    fn malformed_documents_name_the_problem() {
        let e = BranchFile::parse("{\"header\": {\"kappa\": 1.0,\n \"oops\" }").unwrap_err();
        assert!(e.to_string().contains("line 2"), "{e}");
        let doc = r#"{"header":{"kappa":1.0,"base":{"mu":1.0,"alpha":-1.0,"lambda":1.5,"kappa":1.0},"modes":[1],"n_x":4,"n_s":8},
"points":[{"t":0.0,"mu":1.0,"lambda":1.5,"alpha":-1.0,"eta_coeffs":[0.0],"residual_norm":0.0}]}"#;
        let e = BranchFile::parse(doc).unwrap_err();
        assert!(e.to_string().contains("points[0].eta_coeffs"), "{e}");
    }
}
