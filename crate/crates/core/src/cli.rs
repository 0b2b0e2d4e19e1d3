//! The `wavekit` command line. Exit codes: 0 success, 2 input or domain
//! error, 3 verification failure, 4 solver divergence.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use crate::asymptotics::{curve_jet, determinant_c, gradient_data, pairing_dlambda};
use crate::continuation::{
    continue_curve_1d_partial, continue_curve_arclength, continue_sheet_2d_each, ContinuationBranch, FailedStep, NewtonOptions, SheetOptions,
    DEFAULT_NS, DEFAULT_NX,
};
use crate::diophantine::{construct_kernel, construct_kernel_for_h, ConstructedKernel};
use crate::error::{Result, WaveError};
use crate::field::{detect_stagnation, reconstruct_field};
use crate::io::{field_csv, to_json, write_full_state_csv, BranchFile, FieldReport};
use crate::kernel_analysis::{kernel_set, transversality_defect, transversality_ok, DEFAULT_MEMBERSHIP_TOL};
use crate::presets::{self, DEFAULT_CONSTRUCT_LAMBDA};
use crate::trivial_flows::{make_trivial_flow, TrivialParameters};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_VERIFICATION: i32 = 3;
pub const EXIT_DIVERGENCE: i32 = 4;

pub fn exit_code(e: &WaveError) -> i32 {
    match e {
        WaveError::Verification(_) => EXIT_VERIFICATION,
        WaveError::Divergence { .. } | WaveError::SingularJacobian { .. } | WaveError::Solvability(_) => {
            EXIT_DIVERGENCE
        }
        _ => EXIT_INPUT,
    }
}

#[derive(Debug, Parser)]
#[command(name = "wavekit", version, about = "Small-amplitude water waves with affine vorticity")]
pub struct Cli {
    /// Output file
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Tolerance (kernel membership, Newton residual or stagnation gradient)
    #[arg(long, global = true, allow_hyphen_values = true)]
    pub tol: Option<f64>,
    /// Print machine-readable JSON on stdout
    #[arg(long, global = true)]
    pub json: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Kernel set M(Λ) and transversality
    Kernel(ParamArgs),
    /// Build a kernel of prescribed dimension from sums of two squares
    Construct(ConstructArgs),
    /// Second-order data of curves, determinant and gradients of sheets
    Asymptotics(AsymptoticsArgs),
    /// Newton continuation of a curve or sheet
    Continue(ContinueArgs),
    /// Physical field, stagnation points and critical layers of a branch point
    Field(FieldArgs),
}

#[derive(Debug, Args, Clone)]
pub struct ParamArgs {
    /// Named preset (ek1, ek2, ek3, dio325, dio1105, dio3125, dio725, dio3145, cl3)
    #[arg(long)]
    pub preset: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    pub mu: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub alpha: Option<f64>,
    /// Phase in radians
    #[arg(long, allow_hyphen_values = true)]
    pub lambda: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub kappa: Option<f64>,
}

#[derive(Debug, Args)]
pub struct ConstructArgs {
    #[arg(long)]
    pub dim: Option<u32>,
    #[arg(long)]
    pub prime: Option<u64>,
    /// Use this H directly instead of p^(2N-1)
    #[arg(long = "H", alias = "h")]
    pub h: Option<u64>,
    #[arg(long, default_value_t = 1)]
    pub knum: u64,
    #[arg(long, default_value_t = 1)]
    pub kden: u64,
    /// Phase in (pi/2, pi)
    #[arg(long, allow_hyphen_values = true)]
    pub lambda: Option<f64>,
}

#[derive(Debug, Args)]
pub struct AsymptoticsArgs {
    #[command(flatten)]
    pub params: ParamArgs,
    /// Mode pair for two-dimensional kernels
    #[arg(long, num_args = 2, value_names = ["N1", "N2"])]
    pub pair: Option<Vec<u64>>,
    /// Also report the lambda-pairing and the transversality test
    #[arg(long)]
    pub check_transversality: bool,
    /// Angles at which to report sheet gradients
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub v: Vec<f64>,
}

#[derive(Debug, Args)]
pub struct ContinueArgs {
    #[command(flatten)]
    pub params: ParamArgs,
    /// Mode of a curve (defaults to the single kernel mode)
    #[arg(long)]
    pub mode: Option<u64>,
    #[arg(long, allow_hyphen_values = true, default_value_t = 0.05)]
    pub tmax: f64,
    #[arg(long, default_value_t = 10)]
    pub steps: usize,
    /// Pseudo-arclength steps of length tmax/steps instead of fixed amplitudes
    #[arg(long, conflicts_with = "sheet")]
    pub arclength: bool,
    /// Continue a sheet of a two-dimensional kernel
    #[arg(long)]
    pub sheet: bool,
    #[arg(long, num_args = 2, value_names = ["N1", "N2"])]
    pub pair: Option<Vec<u64>>,
    /// Sheet radius
    #[arg(long, default_value_t = 0.01)]
    pub r: f64,
    /// Sheet angles (comma separated)
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub v: Vec<f64>,
    /// Sheet points as R:V pairs (comma separated), in addition to --r/--v
    #[arg(long = "rv-grid", value_delimiter = ',', allow_hyphen_values = true)]
    pub rv_grid: Vec<String>,
    #[arg(long, default_value_t = 4)]
    pub radial_steps: usize,
    /// Required |sin v| margin when n1 divides n2
    #[arg(long, default_value_t = 0.1)]
    pub delta: f64,
    #[arg(long, default_value_t = DEFAULT_NX)]
    pub nx: usize,
    #[arg(long, default_value_t = DEFAULT_NS)]
    pub ns: usize,
    /// Write the phi-hat grids to a CSV next to the branch file
    #[arg(long)]
    pub full_state: bool,
}

#[derive(Debug, Args)]
pub struct FieldArgs {
    #[arg(long)]
    pub branch: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub index: usize,
    #[arg(long, num_args = 2, value_names = ["NX", "NY"], default_values_t = [128, 65])]
    pub res: Vec<usize>,
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return code;
        }
    };
    if let Err(e) = configure_threads() {
        eprintln!("error: {e}");
        return exit_code(&e);
    }
    match dispatch(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn configure_threads() -> Result<()> {
    let Ok(v) = std::env::var("WAVEKIT_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| WaveError::InvalidInput(format!("WAVEKIT_THREADS must be a positive integer (got '{v}')")))?;
    // a pool may already exist when run() is called twice in one process
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

fn dispatch(cli: &Cli) -> Result<i32> {
    if let Some(t) = cli.tol {
        if !(t > 0.0 && t.is_finite()) {
            return Err(WaveError::InvalidInput(format!("--tol must be positive (got {t})")));
        }
    }
    if let Some(p) = &cli.out {
        check_writable(p)?;
    }
    match &cli.command {
        Command::Kernel(a) => cmd_kernel(cli, a),
        Command::Construct(a) => cmd_construct(cli, a),
        Command::Asymptotics(a) => cmd_asymptotics(cli, a),
        Command::Continue(a) => cmd_continue(cli, a),
        Command::Field(a) => cmd_field(cli, a),
    }
}

fn check_writable(path: &Path) -> Result<()> {
    let parent = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    if !parent.is_dir() {
        return Err(WaveError::InvalidInput(format!(
            "output directory {} does not exist",
            parent.display()
        )));
    }
    let existed = path.exists();
    fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| WaveError::InvalidInput(format!("cannot write {}: {e}", path.display())))?;
    if !existed {
        let _ = fs::remove_file(path);
    }
    Ok(())
}

fn resolve_params(a: &ParamArgs) -> Result<(TrivialParameters, Option<Vec<u64>>)> {
    if let Some(name) = &a.preset {
        if a.mu.is_some() || a.alpha.is_some() || a.lambda.is_some() || a.kappa.is_some() {
            return Err(WaveError::InvalidInput("--preset cannot be combined with explicit parameters".into()));
        }
        let p = presets::load(name)?;
        return Ok((p.params, Some(p.modes)));
    }
    match (a.mu, a.alpha, a.lambda, a.kappa) {
        (Some(mu), Some(alpha), Some(lambda), Some(kappa)) => {
            Ok((TrivialParameters::new(mu, alpha, lambda, kappa)?, None))
        }
        _ => Err(WaveError::InvalidInput(
            "give --preset NAME or all of --mu --alpha --lambda --kappa".into(),
        )),
    }
}

fn emit(cli: &Cli, doc: &Value, human: &str) -> Result<()> {
    if let Some(p) = &cli.out {
        crate::io::write_json(p, doc)?;
    }
    if cli.json {
        println!("{}", to_json(doc)?);
    } else {
        print!("{human}");
    }
    Ok(())
}

fn cmd_kernel(cli: &Cli, a: &ParamArgs) -> Result<i32> {
    let (params, _) = resolve_params(a)?;
    let tol = cli.tol.unwrap_or(DEFAULT_MEMBERSHIP_TOL);
    let ks = kernel_set(&params, tol)?;
    let ok = transversality_ok(&params);
    let doc = json!({
        "params": params,
        "M": ks.modes,
        "dimension": ks.dimension,
        "r": ks.r,
        "l_values": ks.scanned.iter().map(|e| json!({"n": e.n, "l": e.l})).collect::<Vec<_>>(),
        "contains_zero": ks.contains_zero,
        "transversality": ok,
        "transversality_defect": transversality_defect(&params),
        "undefined_l_modes": ks.undefined_modes,
    });
    let human = format!(
        "M = {:?} (dimension {})\nr = {}\ntransversality: {}\n",
        ks.modes, ks.dimension, ks.r, ok
    );
    emit(cli, &doc, &human)?;
    Ok(EXIT_OK)
}

fn constructed_doc(k: &ConstructedKernel) -> Value {
    json!({
        "H": k.h,
        "M": k.target_modes,
        "verified_M": k.verified_modes,
        "kappa": k.kappa,
        "rational_kappa": [k.rational_kappa.0, k.rational_kappa.1],
        "params": k.params,
        "r": k.r_value,
        "divisor_free": k.divisor_free,
    })
}

fn cmd_construct(cli: &Cli, a: &ConstructArgs) -> Result<i32> {
    let lambda = a.lambda.unwrap_or(DEFAULT_CONSTRUCT_LAMBDA);
    let k = match (a.h, a.dim, a.prime) {
        (Some(h), None, None) => construct_kernel_for_h(h, a.knum, a.kden, lambda)?,
        (None, Some(dim), Some(p)) => construct_kernel(dim, p, a.knum, a.kden, lambda)?,
        _ => {
            return Err(WaveError::InvalidInput(
                "give either --H or both --dim and --prime".into(),
            ))
        }
    };
    let human = format!(
        "H = {}\nM = {:?}\nkappa = {}\nmu = {}, alpha = {}, lambda = {}\n",
        k.h, k.target_modes, k.kappa, k.params.mu, k.params.alpha, k.params.lambda
    );
    emit(cli, &constructed_doc(&k), &human)?;
    Ok(EXIT_OK)
}

fn cmd_asymptotics(cli: &Cli, a: &AsymptoticsArgs) -> Result<i32> {
    let (params, _) = resolve_params(&a.params)?;
    let flow = make_trivial_flow(params)?;
    let ks = kernel_set(&params, cli.tol.unwrap_or(DEFAULT_MEMBERSHIP_TOL))?;
    let pair = match &a.pair {
        Some(p) => Some((p[0], p[1])),
        None if ks.modes.len() == 2 => Some((ks.modes[0], ks.modes[1])),
        None => None,
    };
    let (doc, human) = if let Some((n1, n2)) = pair {
        let c = determinant_c(&flow, n1, n2)?;
        let mut doc = json!({
            "params": params,
            "M": ks.modes,
            "pair": [n1, n2],
            "C": c.value(),
            "C_simplified": c.simplified_form,
            "C_matrix": c.matrix_form,
            "C_reduced": c.reduced_form,
            "agreement": c.agreement(),
            "pairings": c.pairings,
            "theta2_zero_branch": c.theta2_zero_branch,
            "r": c.r,
        });
        if !a.v.is_empty() {
            let g = gradient_data(&flow, n1, n2)?;
            doc["gradients"] = a
                .v
                .iter()
                .map(|&v| {
                    let (p1, p2) = g.psi_r(v);
                    let (ar, lr) = g.parameter_slopes(v);
                    json!({"v": v, "psi_r": [p1, p2], "alpha_r": ar, "lambda_r": lr})
                })
                .collect();
        }
        let human = format!(
            "pair ({n1}, {n2})\nC = {}\nC (simplified) = {}\ntheta_{n2} = 0 branch: {}\n",
            c.value(),
            c.simplified_form,
            c.theta2_zero_branch
        );
        (doc, human)
    } else {
        if ks.modes.len() != 1 {
            return Err(WaveError::InvalidInput(format!(
                "curve asymptotics need a one-dimensional kernel, found {:?}; use --pair for two modes",
                ks.modes
            )));
        }
        let n = ks.modes[0];
        let jet = curve_jet(&flow, n)?;
        let a_pair = pairing_dlambda(&flow, n)?;
        let mut doc = json!({
            "params": params,
            "M": ks.modes,
            "mode": n,
            "A_pairing": a_pair,
            "lambda_dot": jet.lambda_dot,
            "lambda_ddot": jet.lambda_ddot,
            "mu_ddot": jet.mu_ddot,
            "a0_at_1": jet.a0.a(1.0),
            "a2_at_1": jet.a2.a(1.0),
            "c0": jet.c0,
            "c2": jet.c2,
            "ratio_check": jet.ratio_residual,
            "numerator": jet.numerator_terms.numerator,
            "denominator": jet.numerator_terms.denominator,
            "cubic_term": jet.numerator_terms.cubic,
            "mixed_term": jet.numerator_terms.mixed,
        });
        if a.check_transversality {
            doc["transversality"] = json!(transversality_ok(&params));
            doc["transversality_defect"] = json!(transversality_defect(&params));
        }
        let human = format!(
            "mode {n}\nlambda_ddot(0) = {}\nA-pairing = {}\na0(1) = {}, a2(1) = {}\n",
            jet.lambda_ddot,
            a_pair,
            jet.a0.a(1.0),
            jet.a2.a(1.0)
        );
        (doc, human)
    };
    emit(cli, &doc, &human)?;
    Ok(EXIT_OK)
}

fn summary_table(branch: &ContinuationBranch) -> String {
    let mut s = String::from("t                          lambda                   alpha                    residual\n");
    for p in &branch.points {
        let t = p
            .amplitude
            .iter()
            .map(|v| format!("{v:+.6e}"))
            .collect::<Vec<_>>()
            .join(",");
        s.push_str(&format!(
            "{t:<26} {:<24.16} {:<24.16} {:.3e}\n",
            p.state.params.lambda, p.state.params.alpha, p.residual_norm
        ));
    }
    s
}

fn numbered(path: &Path, k: usize, total: usize) -> PathBuf {
    if total == 1 {
        return path.to_path_buf();
    }
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("branch");
    let ext = path.extension().and_then(|s| s.to_str()).unwrap_or("json");
    path.with_file_name(format!("{stem}_{k}.{ext}"))
}

fn write_branch(cli: &Cli, a: &ContinueArgs, branch: &ContinuationBranch, path: Option<PathBuf>) -> Result<Value> {
    let file = BranchFile::from_branch(branch)?;
    let doc = serde_json::to_value(&file)?;
    if let Some(p) = path {
        crate::io::write_json(&p, &file)?;
        if a.full_state {
            write_full_state_csv(&p.with_extension("phi.csv"), branch)?;
        }
    }
    let table = summary_table(branch);
    if cli.json {
        eprint!("{table}");
    } else {
        print!("{table}");
    }
    Ok(doc)
}

fn report_failure(fail: &FailedStep, branch: Option<&ContinuationBranch>) {
    let last = branch.and_then(|b| b.points.last()).map(|p| {
        json!({
            "t": p.amplitude,
            "lambda": p.state.params.lambda,
            "alpha": p.state.params.alpha,
            "residual_norm": p.residual_norm,
        })
    });
    let dump = json!({
        "failed_amplitude": fail.amplitude,
        "error": fail.error.to_string(),
        "last_converged": last,
    });
    eprintln!("{}", to_json(&dump).unwrap_or_default());
}

fn cmd_continue(cli: &Cli, a: &ContinueArgs) -> Result<i32> {
    let (params, expected) = resolve_params(&a.params)?;
    let opts = NewtonOptions {
        tol: cli.tol.unwrap_or(NewtonOptions::default().tol),
        ..Default::default()
    };
    let modes = match &expected {
        Some(m) => m.clone(),
        None => kernel_set(&params, DEFAULT_MEMBERSHIP_TOL)?.modes,
    };
    if !a.sheet {
        let n = match (a.mode, modes.as_slice()) {
            (Some(n), _) => n,
            (None, [n]) => *n,
            _ => {
                return Err(WaveError::InvalidInput(format!(
                    "kernel {modes:?} is not one-dimensional; pass --mode or --sheet"
                )))
            }
        };
        let (branch, fail) = if a.arclength {
            continue_curve_arclength(params, n, a.tmax / a.steps.max(1) as f64, a.steps, a.nx, a.ns, &opts)?
        } else {
            continue_curve_1d_partial(params, n, a.tmax, a.steps, a.nx, a.ns, &opts)?
        };
        let doc = write_branch(cli, a, &branch, cli.out.clone())?;
        if cli.json {
            println!("{}", to_json(&doc)?);
        }
        if let Some(f) = fail {
            report_failure(&f, Some(&branch));
            return Ok(exit_code(&f.error));
        }
        return Ok(EXIT_OK);
    }
    let (n1, n2) = match (&a.pair, modes.as_slice()) {
        (Some(p), _) => (p[0], p[1]),
        (None, [n1, n2]) => (*n1, *n2),
        _ => {
            return Err(WaveError::InvalidInput(format!(
                "kernel {modes:?} is not two-dimensional; pass --pair"
            )))
        }
    };
    let mut rv: Vec<(f64, f64)> = a.v.iter().map(|&v| (a.r, v)).collect();
    for item in &a.rv_grid {
        let parsed = item
            .split_once(':')
            .and_then(|(r, v)| Some((r.trim().parse().ok()?, v.trim().parse().ok()?)));
        match parsed {
            Some(p) => rv.push(p),
            None => return Err(WaveError::InvalidInput(format!("--rv-grid expects R:V pairs, got '{item}'"))),
        }
    }
    if rv.is_empty() {
        return Err(WaveError::InvalidInput("--sheet needs --v or --rv-grid".into()));
    }
    let sheet_opts = SheetOptions {
        radial_steps: a.radial_steps,
        delta: a.delta,
        newton: opts,
    };
    let outcomes = continue_sheet_2d_each(params, n1, n2, &rv, a.nx, a.ns, &sheet_opts)?;
    let total = outcomes.len();
    let mut docs = Vec::new();
    let mut code = EXIT_OK;
    for (k, o) in outcomes.iter().enumerate() {
        match o {
            Ok(b) => docs.push(write_branch(cli, a, b, cli.out.as_ref().map(|p| numbered(p, k, total)))?),
            Err(f) => {
                report_failure(f, None);
                code = code.max(exit_code(&f.error));
            }
        }
    }
    if cli.json {
        println!("{}", to_json(&docs)?);
    }
    Ok(code)
}

fn cmd_field(cli: &Cli, a: &FieldArgs) -> Result<i32> {
    let file = BranchFile::read(&a.branch).map_err(|e| match e {
        WaveError::Io(io) => WaveError::InvalidInput(format!("cannot read {}: {io}", a.branch.display())),
        other => other,
    })?;
    let (disc, state) = file.state(a.index)?;
    let field = reconstruct_field(&state, &disc, a.res[0], a.res[1])?;
    let report = detect_stagnation(&field, cli.tol.unwrap_or(1e-8))?;
    let summary = FieldReport::new(&field, &report);
    let out = cli.out.clone().unwrap_or_else(|| PathBuf::from("field.csv"));
    if cli.out.is_none() {
        check_writable(&out)?;
    }
    fs::write(&out, field_csv(&field))?;
    crate::io::write_json(&out.with_extension("json"), &summary)?;
    if cli.json {
        println!("{}", to_json(&summary)?);
    } else {
        println!(
            "{} samples written to {}\nstagnation points: {}\ncritical layers: {}\nboundary error: {:.3e}",
            field.nx() * field.ns(),
            out.display(),
            report.points.len(),
            report.critical_layers.len(),
            field.boundary_error
        );
    }
    Ok(EXIT_OK)
}
