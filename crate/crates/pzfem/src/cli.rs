//! Config parsing and the solve / sweep / verify / oracle workflows.

use std::fs;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use log::info;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::bifurcation::{estimate_lambda_star, solve_at, sweep, write_diagram_csv,
    write_diagram_json, SCHEMA_VERSION};
use crate::energy::{energy_gamma, energy_phi_hat, fd_gradient_error, grad_gamma, grad_phi_hat,
    operator_a_apply, ProblemSpec};
use crate::fields::{check_growth_hypotheses, check_h0, default_growth_grid, FieldSpec,
    Nonlinearity, Potential, ExponentField};
use crate::mesh::{build_mesh, write_nodal_csv, NodalFunction};
use crate::modular::check_modular_norm_relations;
use crate::oracle::{enumerate_solutions_1d, OracleMode, OracleReaction, ShootingInstance};
use crate::solver::{solve_auxiliary, SolveOptions};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("missing required key '{0}'")]
    MissingKey(&'static str),
    #[error("config validation failed:\n{0}")]
    Validation(String),
    #[error("{0}")]
    Unsupported(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Nonlinearity declaration as it appears in a config.
#[derive(Debug, Clone, PartialEq)]
pub enum NonlinSpec {
    F1,
    F2 { c_hat: f64, m: FieldSpec },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepConfig {
    pub lambdas: Vec<f64>,
    /// Bracket and tolerance for the threshold bisection; estimation runs
    /// only when set.
    pub threshold: Option<(f64, f64, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub p: FieldSpec,
    pub q: FieldSpec,
    pub r: FieldSpec,
    pub xi: FieldSpec,
    pub f: NonlinSpec,
    pub lambda: Option<f64>,
    pub theta: Option<f64>,
    pub dim: usize,
    pub resolution: usize,
    pub grad_tol: f64,
    pub max_iters: usize,
    pub multistart: usize,
    pub seed: u64,
    pub sweep: Option<SweepConfig>,
    pub out_dir: Option<String>,
}

fn fmt_field(spec: &FieldSpec) -> Result<String, CliError> {
    match spec {
        FieldSpec::Constant(v) => Ok(format!("{v}")),
        FieldSpec::Affine { c0, cx, cy } => Ok(format!("{c0} + {cx}*z + {cy}*y")),
        FieldSpec::Table(_) => Err(CliError::Unsupported(
            "nodal-table fields cannot be rendered to a config".into(),
        )),
    }
}

/// Canonical text form; parse_config(render(c)) == c for renderable configs.
pub fn render(cfg: &RunConfig) -> Result<String, CliError> {
    let mut s = String::new();
    s.push_str("[problem]\n");
    s.push_str(&format!("p = {}\n", fmt_field(&cfg.p)?));
    s.push_str(&format!("q = {}\n", fmt_field(&cfg.q)?));
    s.push_str(&format!("r = {}\n", fmt_field(&cfg.r)?));
    s.push_str(&format!("xi = {}\n", fmt_field(&cfg.xi)?));
    match &cfg.f {
        NonlinSpec::F1 => s.push_str("f = f1\n"),
        NonlinSpec::F2 { c_hat, m } => {
            s.push_str("f = f2\n");
            s.push_str(&format!("f2_c = {c_hat}\n"));
            s.push_str(&format!("f2_m = {}\n", fmt_field(m)?));
        }
    }
    if let Some(l) = cfg.lambda {
        s.push_str(&format!("lambda = {l}\n"));
    }
    if let Some(t) = cfg.theta {
        s.push_str(&format!("theta = {t}\n"));
    }
    s.push_str("\n[mesh]\n");
    s.push_str(&format!("dim = {}\n", cfg.dim));
    s.push_str(&format!("resolution = {}\n", cfg.resolution));
    s.push_str("\n[solver]\n");
    s.push_str(&format!("grad_tol = {}\n", cfg.grad_tol));
    s.push_str(&format!("max_iters = {}\n", cfg.max_iters));
    s.push_str(&format!("multistart = {}\n", cfg.multistart));
    s.push_str(&format!("seed = {}\n", cfg.seed));
    if let Some(sw) = &cfg.sweep {
        s.push_str("\n[sweep]\n");
        let grid: Vec<String> = sw.lambdas.iter().map(|l| format!("{l}")).collect();
        s.push_str(&format!("lambdas = {}\n", grid.join(", ")));
        if let Some((lo, hi, tol)) = sw.threshold {
            s.push_str(&format!("threshold_lo = {lo}\n"));
            s.push_str(&format!("threshold_hi = {hi}\n"));
            s.push_str(&format!("threshold_tol = {tol}\n"));
        }
    }
    if let Some(dir) = &cfg.out_dir {
        s.push_str("\n[output]\n");
        s.push_str(&format!("dir = {dir}\n"));
    }
    Ok(s)
}

/// "3", "2.5 + 0.4*z", "2 - 0.1*z + 0.2*y" -> FieldSpec. Any term with a
/// coordinate makes the field affine.
pub fn parse_field_spec(text: &str) -> Result<FieldSpec, String> {
    // normalize binary minus (spaced) to an additive negative term; unary
    // minus and exponent signs have no surrounding spaces and survive
    let norm = text.replace(" - ", " + -");
    let mut c0 = 0.0;
    let mut cx = 0.0;
    let mut cy = 0.0;
    let mut affine = false;
    for term in norm.split('+') {
        let term = term.trim();
        if term.is_empty() {
            return Err(format!("empty term in '{text}'"));
        }
        let (coef_str, var) = if let Some((a, b)) = term.split_once('*') {
            (a.trim(), Some(b.trim()))
        } else if term == "z" || term == "y" {
            ("1", Some(term))
        } else if term == "-z" || term == "-y" {
            ("-1", Some(&term[1..]))
        } else {
            (term, None)
        };
        let coef: f64 = coef_str
            .parse()
            .map_err(|_| format!("bad number '{coef_str}' in '{text}'"))?;
        match var {
            None => c0 += coef,
            Some("z") | Some("x") => {
                cx += coef;
                affine = true;
            }
            Some("y") => {
                cy += coef;
                affine = true;
            }
            Some(v) => return Err(format!("unknown coordinate '{v}' in '{text}'")),
        }
    }
    if affine {
        Ok(FieldSpec::Affine { c0, cx, cy })
    } else {
        Ok(FieldSpec::Constant(c0))
    }
}

fn parse_num<T: std::str::FromStr>(line: usize, key: &str, v: &str) -> Result<T, CliError> {
    v.trim().parse().map_err(|_| CliError::Parse {
        line,
        msg: format!("malformed value '{v}' for key '{key}'"),
    })
}

fn parse_list(line: usize, key: &str, v: &str) -> Result<Vec<f64>, CliError> {
    v.split(',')
        .map(|t| parse_num(line, key, t))
        .collect::<Result<Vec<f64>, _>>()
}

/// Line-oriented key = value format with [section] headers. Unknown keys and
/// sections are errors; '#' starts a comment. The assembled config is
/// validated (mesh, exponent chain, growth hypotheses) before it is returned.
pub fn parse_config(text: &str) -> Result<RunConfig, CliError> {
    #[derive(Default)]
    struct Raw {
        p: Option<FieldSpec>,
        q: Option<FieldSpec>,
        r: Option<FieldSpec>,
        xi: Option<FieldSpec>,
        f: Option<String>,
        f2_c: Option<f64>,
        f2_m: Option<FieldSpec>,
        lambda: Option<f64>,
        theta: Option<f64>,
        dim: Option<usize>,
        resolution: Option<usize>,
        grad_tol: Option<f64>,
        max_iters: Option<usize>,
        multistart: Option<usize>,
        seed: Option<u64>,
        lambdas: Option<Vec<f64>>,
        threshold_lo: Option<f64>,
        threshold_hi: Option<f64>,
        threshold_tol: Option<f64>,
        out_dir: Option<String>,
    }
    let mut raw = Raw::default();
    let mut section = String::new();
    for (idx, full_line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = full_line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        if let Some(name) = line.strip_prefix('[') {
            let name = name.strip_suffix(']').ok_or_else(|| CliError::Parse {
                line: line_no,
                msg: format!("malformed section header '{line}'"),
            })?;
            match name {
                "problem" | "mesh" | "solver" | "sweep" | "output" => {
                    section = name.to_string();
                }
                other => {
                    return Err(CliError::Parse {
                        line: line_no,
                        msg: format!("unknown section '[{other}]'"),
                    })
                }
            }
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| CliError::Parse {
            line: line_no,
            msg: format!("expected 'key = value', got '{line}'"),
        })?;
        let key = key.trim();
        let value = value.trim();
        let field = |v: &str| -> Result<FieldSpec, CliError> {
            parse_field_spec(v).map_err(|msg| CliError::Parse { line: line_no, msg })
        };
        match (section.as_str(), key) {
            ("problem", "p") => raw.p = Some(field(value)?),
            ("problem", "q") => raw.q = Some(field(value)?),
            ("problem", "r") => raw.r = Some(field(value)?),
            ("problem", "xi") => raw.xi = Some(field(value)?),
            ("problem", "f") => raw.f = Some(value.to_string()),
            ("problem", "f2_c") => raw.f2_c = Some(parse_num(line_no, key, value)?),
            ("problem", "f2_m") => raw.f2_m = Some(field(value)?),
            ("problem", "lambda") => raw.lambda = Some(parse_num(line_no, key, value)?),
            ("problem", "theta") => raw.theta = Some(parse_num(line_no, key, value)?),
            ("mesh", "dim") => raw.dim = Some(parse_num(line_no, key, value)?),
            ("mesh", "resolution") => raw.resolution = Some(parse_num(line_no, key, value)?),
            ("solver", "grad_tol") => raw.grad_tol = Some(parse_num(line_no, key, value)?),
            ("solver", "max_iters") => raw.max_iters = Some(parse_num(line_no, key, value)?),
            ("solver", "multistart") => raw.multistart = Some(parse_num(line_no, key, value)?),
            ("solver", "seed") => raw.seed = Some(parse_num(line_no, key, value)?),
            ("sweep", "lambdas") => raw.lambdas = Some(parse_list(line_no, key, value)?),
            ("sweep", "threshold_lo") => raw.threshold_lo = Some(parse_num(line_no, key, value)?),
            ("sweep", "threshold_hi") => raw.threshold_hi = Some(parse_num(line_no, key, value)?),
            ("sweep", "threshold_tol") => {
                raw.threshold_tol = Some(parse_num(line_no, key, value)?)
            }
            ("output", "dir") => raw.out_dir = Some(value.to_string()),
            ("", _) => {
                return Err(CliError::Parse {
                    line: line_no,
                    msg: format!("key '{key}' before any [section] header"),
                })
            }
            (sec, _) => {
                return Err(CliError::Parse {
                    line: line_no,
                    msg: format!("unknown key '{key}' in section [{sec}]"),
                })
            }
        }
    }

    let f = match raw.f.as_deref() {
        None | Some("f1") => NonlinSpec::F1,
        Some("f2") => NonlinSpec::F2 {
            c_hat: raw.f2_c.unwrap_or(1.0),
            m: raw.f2_m.ok_or(CliError::MissingKey("f2_m"))?,
        },
        Some(other) => {
            return Err(CliError::Validation(format!(
                "unknown nonlinearity '{other}' (expected f1 or f2)"
            )))
        }
    };
    let sweep = match raw.lambdas {
        Some(lambdas) => {
            let threshold = match (raw.threshold_lo, raw.threshold_hi) {
                (Some(lo), Some(hi)) => Some((lo, hi, raw.threshold_tol.unwrap_or(0.05 * hi))),
                (None, None) => None,
                _ => {
                    return Err(CliError::Validation(
                        "threshold_lo and threshold_hi must be given together".into(),
                    ))
                }
            };
            Some(SweepConfig { lambdas, threshold })
        }
        None => None,
    };
    let cfg = RunConfig {
        p: raw.p.ok_or(CliError::MissingKey("p"))?,
        q: raw.q.ok_or(CliError::MissingKey("q"))?,
        r: raw.r.ok_or(CliError::MissingKey("r"))?,
        xi: raw.xi.unwrap_or(FieldSpec::Constant(0.0)),
        f,
        lambda: raw.lambda,
        theta: raw.theta,
        dim: raw.dim.unwrap_or(1),
        resolution: raw.resolution.unwrap_or(200),
        grad_tol: raw.grad_tol.unwrap_or(1e-8),
        max_iters: raw.max_iters.unwrap_or(20_000),
        multistart: raw.multistart.unwrap_or(20),
        seed: raw.seed.unwrap_or(0),
        sweep,
        out_dir: raw.out_dir,
    };
    // reject invalid problems at parse time, before any solve
    build_problem(&cfg)?;
    Ok(cfg)
}

/// Materialize the validated ProblemSpec and solver options.
pub fn build_problem(cfg: &RunConfig) -> Result<(ProblemSpec, SolveOptions), CliError> {
    let mesh = build_mesh(cfg.dim, cfg.resolution)
        .map_err(|e| CliError::Validation(e.to_string()))?;
    let sample = |spec: &FieldSpec| {
        spec.sample(&mesh)
            .map_err(|e| CliError::Validation(e.to_string()))
    };
    let exps = ExponentField::new(sample(&cfg.p)?, sample(&cfg.q)?, sample(&cfg.r)?);
    let xi = Potential::new(sample(&cfg.xi)?).map_err(|e| CliError::Validation(e.to_string()))?;
    let h0 = check_h0(&exps, &xi, &mesh);
    if !h0.all_passed() {
        return Err(CliError::Validation(h0.summary()));
    }
    let f = match &cfg.f {
        NonlinSpec::F1 => Nonlinearity::F1,
        NonlinSpec::F2 { c_hat, m } => Nonlinearity::f2(*c_hat, sample(m)?)
            .map_err(|e| CliError::Validation(e.to_string()))?,
    };
    let growth = check_growth_hypotheses(&f, &exps, &xi, &default_growth_grid(&mesh));
    if !growth.all_passed() {
        return Err(CliError::Validation(growth.summary()));
    }
    let lambda = cfg
        .lambda
        .or_else(|| cfg.sweep.as_ref().and_then(|s| s.lambdas.first().copied()))
        .ok_or(CliError::MissingKey("lambda"))?;
    let spec = ProblemSpec::new(mesh, exps, xi, f, lambda, cfg.theta)
        .map_err(|e| CliError::Validation(e.to_string()))?;
    let opts = SolveOptions {
        grad_tol: cfg.grad_tol,
        max_iters: cfg.max_iters,
        multistart: cfg.multistart,
        seed: cfg.seed,
        ..SolveOptions::default()
    };
    Ok((spec, opts))
}

fn ensure_dir(dir: &str) -> Result<(), CliError> {
    fs::create_dir_all(dir)?;
    Ok(())
}

fn out_dir(cfg: &RunConfig) -> String {
    cfg.out_dir.clone().unwrap_or_else(|| ".".to_string())
}

fn timestamp() -> String {
    let secs = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    format!("unix:{secs}")
}

fn write_solution_csv(
    spec: &ProblemSpec,
    u: &NodalFunction,
    path: &Path,
) -> Result<(), CliError> {
    let mut file = fs::File::create(path)?;
    write_nodal_csv(&spec.mesh, u, &mut file)?;
    Ok(())
}

/// Solve at the configured lambda; write the record JSON and solution CSVs.
pub fn cmd_solve(cfg: &RunConfig) -> Result<i32, CliError> {
    let (spec, opts) = build_problem(cfg)?;
    let lambda = spec.lambda;
    let record = solve_at(lambda, &spec, &opts).map_err(|e| CliError::Validation(e.to_string()))?;
    let dir = out_dir(cfg);
    ensure_dir(&dir)?;
    let json = serde_json::json!({
        "schema_version": SCHEMA_VERSION,
        "timestamp": timestamp(),
        "record": &record,
    });
    fs::write(
        Path::new(&dir).join("record.json"),
        serde_json::to_string_pretty(&json).expect("record serializes") + "\n",
    )?;
    for (k, sol) in record.solutions.iter().enumerate() {
        write_solution_csv(
            &spec,
            &sol.as_nodal(),
            &Path::new(&dir).join(format!("solution_{k}.csv")),
        )?;
    }
    write_solution_csv(&spec, &record.u_bar.as_nodal(), &Path::new(&dir).join("u_bar.csv"))?;
    if let Some(star) = &record.u_star {
        write_solution_csv(&spec, &star.as_nodal(), &Path::new(&dir).join("u_star.csv"))?;
    }
    println!(
        "lambda {lambda}: status {}, {} solution(s)",
        record.status,
        record.solutions.len()
    );
    Ok(0)
}

/// Sweep the configured lambda grid; write diagram JSON and summary CSV.
pub fn cmd_sweep(cfg: &RunConfig) -> Result<i32, CliError> {
    let sw = cfg
        .sweep
        .as_ref()
        .ok_or(CliError::MissingKey("lambdas"))?
        .clone();
    let (spec, opts) = build_problem(cfg)?;
    let mut diagram =
        sweep(&sw.lambdas, &spec, &opts).map_err(|e| CliError::Validation(e.to_string()))?;
    if let Some((lo, hi, tol)) = sw.threshold {
        let star = estimate_lambda_star(lo, hi, tol, &spec, &opts)
            .map_err(|e| CliError::Validation(e.to_string()))?;
        diagram.lambda_star = Some(star);
    }
    diagram.provenance.timestamp = timestamp();
    let dir = out_dir(cfg);
    ensure_dir(&dir)?;
    let mut json_file = fs::File::create(Path::new(&dir).join("diagram.json"))?;
    write_diagram_json(&diagram, &mut json_file)?;
    let mut csv_file = fs::File::create(Path::new(&dir).join("summary.csv"))?;
    write_diagram_csv(&diagram, &mut csv_file)?;
    for rec in &diagram.records {
        println!(
            "lambda {}: status {}, {} solution(s)",
            rec.lambda,
            rec.status,
            rec.solutions.len()
        );
    }
    if let Some(star) = &diagram.lambda_star {
        println!(
            "threshold estimate {} (bracket [{}, {}])",
            star.estimate, star.bracket_lo, star.bracket_hi
        );
    }
    Ok(0)
}

struct Table {
    rows: Vec<(String, bool)>,
}

impl Table {
    fn new() -> Self {
        Table { rows: Vec::new() }
    }
    fn add(&mut self, name: &str, passed: bool) {
        self.rows.push((name.to_string(), passed));
    }
    fn print_and_status(&self) -> i32 {
        let mut all = true;
        for (name, passed) in &self.rows {
            println!("{:<44} {}", name, if *passed { "pass" } else { "FAIL" });
            all &= *passed;
        }
        if all {
            0
        } else {
            1
        }
    }
}

fn constant_exponents(cfg: &RunConfig) -> Option<(f64, f64, f64, f64)> {
    match (&cfg.p, &cfg.q, &cfg.r, &cfg.xi) {
        (
            FieldSpec::Constant(p),
            FieldSpec::Constant(q),
            FieldSpec::Constant(r),
            FieldSpec::Constant(xi),
        ) => Some((*p, *q, *r, *xi)),
        _ => None,
    }
}

fn oracle_reaction(cfg: &RunConfig) -> Option<OracleReaction> {
    match &cfg.f {
        NonlinSpec::F1 => Some(OracleReaction::F1),
        NonlinSpec::F2 { c_hat, m } => match m {
            FieldSpec::Constant(m) => Some(OracleReaction::F2 {
                c_hat: *c_hat,
                m: *m,
            }),
            _ => None,
        },
    }
}

/// Run the property suites and print a pass/fail table; exit 0 iff all pass.
pub fn cmd_verify(cfg: &RunConfig) -> Result<i32, CliError> {
    let (spec, opts) = build_problem(cfg)?;
    let mut table = Table::new();

    let h0 = check_h0(&spec.exps, &spec.xi, &spec.mesh);
    table.add("exponent chain (H0)", h0.all_passed());
    let growth = check_growth_hypotheses(
        &spec.f,
        &spec.exps,
        &spec.xi,
        &default_growth_grid(&spec.mesh),
    );
    table.add("reaction growth hypotheses", growth.all_passed());

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0xc1f0);
    let mut modular_ok = true;
    for _ in 0..20 {
        let u = NodalFunction::random_zero_trace(&spec.mesh, &mut rng);
        modular_ok &= check_modular_norm_relations(&u, &spec.exps.p, &spec.mesh).all_passed();
    }
    table.add("modular-norm inequality chains", modular_ok);

    let mut monotone_ok = true;
    for _ in 0..20 {
        let u = NodalFunction::random_zero_trace(&spec.mesh, &mut rng);
        let v = NodalFunction::random_zero_trace(&spec.mesh, &mut rng);
        let au = operator_a_apply(&u, &spec);
        let av = operator_a_apply(&v, &spec);
        let pairing: f64 = u
            .values
            .iter()
            .zip(&v.values)
            .zip(au.values.iter().zip(&av.values))
            .map(|((ui, vi), (aui, avi))| (aui - avi) * (ui - vi))
            .sum();
        monotone_ok &= pairing >= -1e-12;
    }
    table.add("operator monotonicity", monotone_ok);

    let mut grad_ok = true;
    for _ in 0..5 {
        let u = NodalFunction::random_zero_trace(&spec.mesh, &mut rng).scaled(0.5);
        let g_phi = grad_phi_hat(&u, &spec).map_err(|e| CliError::Validation(e.to_string()))?;
        let e_phi = fd_gradient_error(
            &|w| energy_phi_hat(w, &spec).unwrap_or(f64::INFINITY),
            &g_phi,
            &u,
            &spec.mesh,
            1e-6,
        );
        let e_gamma = fd_gradient_error(
            &|w| energy_gamma(w, &spec),
            &grad_gamma(&u, &spec),
            &u,
            &spec.mesh,
            1e-6,
        );
        grad_ok &= e_phi < 1e-6 && e_gamma < 1e-6;
    }
    table.add("analytic vs finite-difference gradients", grad_ok);

    let aux = solve_auxiliary(&spec, &opts).map_err(|e| CliError::Validation(e.to_string()))?;
    table.add("auxiliary multi-start agreement", !aux.flagged);

    if cfg.dim == 1 {
        if let (Some((p, q, r, xi)), Some(reaction)) =
            (constant_exponents(cfg), oracle_reaction(cfg))
        {
            let inst = ShootingInstance::new(
                p,
                q,
                r,
                xi,
                reaction,
                OracleMode::Auxiliary,
                spec.lambda,
                1e-4,
            )
            .map_err(|e| CliError::Validation(e.to_string()))?;
            let sols = enumerate_solutions_1d(&inst, 1e-6, 1e6, 400)
                .map_err(|e| CliError::Validation(e.to_string()))?;
            let matched = sols.len() == 1 && {
                let sampled = sols[0].trajectory.sample_to_resolution(cfg.resolution);
                sampled
                    .iter()
                    .zip(&aux.solve.solution.values)
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0f64, f64::max)
                    <= 1e-4
            };
            table.add("auxiliary solution vs shooting oracle", matched);
        } else {
            info!("oracle comparison skipped: non-constant coefficients");
        }
    }

    Ok(table.print_and_status())
}

/// Run the 1D shooting oracle on the configured instance; print and export
/// the enumerated solutions.
pub fn cmd_oracle(cfg: &RunConfig) -> Result<i32, CliError> {
    if cfg.dim != 1 {
        return Err(CliError::Unsupported("the oracle is 1D only".into()));
    }
    let (Some((p, q, r, xi)), Some(reaction)) = (constant_exponents(cfg), oracle_reaction(cfg))
    else {
        return Err(CliError::Unsupported(
            "the oracle needs constant exponents and coefficients".into(),
        ));
    };
    let lambda = cfg.lambda.ok_or(CliError::MissingKey("lambda"))?;
    let inst = ShootingInstance::new(p, q, r, xi, reaction, OracleMode::Full, lambda, 1e-4)
        .map_err(|e| CliError::Validation(e.to_string()))?;
    let sols = enumerate_solutions_1d(&inst, 1e-6, 1e6, 400)
        .map_err(|e| CliError::Validation(e.to_string()))?;
    let dir = out_dir(cfg);
    ensure_dir(&dir)?;
    println!("{} oracle solution(s) at lambda {lambda}", sols.len());
    for (k, sol) in sols.iter().enumerate() {
        println!(
            "  slope {:.6e}  max {:.6e}  terminal {:.3e}",
            sol.slope, sol.max_value, sol.trajectory.terminal
        );
        let sampled = sol.trajectory.sample_to_resolution(cfg.resolution);
        let mut file = fs::File::create(Path::new(&dir).join(format!("oracle_{k}.csv")))?;
        use std::io::Write;
        writeln!(file, "node,z,value")?;
        for (i, v) in sampled.iter().enumerate() {
            writeln!(file, "{},{},{}", i, i as f64 / cfg.resolution as f64, v)?;
        }
    }
    Ok(0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    const MINIMAL: &str = "\
[problem]
p = 3
q = 2
r = 4
xi = 0
f = f1
lambda = 0.05

[mesh]
dim = 1
resolution = 200
";

    #[test]
    fn minimal_config_parses_with_defaults() {
        let cfg = parse_config(MINIMAL).unwrap();
        assert_eq!(cfg.p, FieldSpec::Constant(3.0));
        assert_eq!(cfg.lambda, Some(0.05));
        assert_eq!(cfg.resolution, 200);
        assert_eq!(cfg.grad_tol, 1e-8);
        assert_eq!(cfg.multistart, 20);
        assert_eq!(cfg.f, NonlinSpec::F1);
        assert!(cfg.sweep.is_none());
    }

    #[test]
    fn unknown_key_is_an_error() {
        let text = MINIMAL.replace("lambda = 0.05", "lamda = 0.05");
        let err = parse_config(&text).unwrap_err();
        assert!(err.to_string().contains("unknown key 'lamda'"), "{err}");
    }

    #[test]
    fn exponent_chain_violation_is_cited() {
        let text = MINIMAL.replace("q = 2", "q = 3.5");
        let err = parse_config(&text).unwrap_err();
        assert!(err.to_string().contains("q_+ < p_-"), "{err}");
    }

    #[test]
    fn affine_exponent_syntax() {
        assert_eq!(
            parse_field_spec("2.5 + 0.4*z").unwrap(),
            FieldSpec::Affine { c0: 2.5, cx: 0.4, cy: 0.0 }
        );
        assert_eq!(
            parse_field_spec("2 - 0.1*z + 0.2*y").unwrap(),
            FieldSpec::Affine { c0: 2.0, cx: -0.1, cy: 0.2 }
        );
        assert_eq!(parse_field_spec("3").unwrap(), FieldSpec::Constant(3.0));
        assert!(parse_field_spec("2 + 0.4*w").is_err());

        let text = MINIMAL.replace("p = 3", "p = 2.5 + 0.4*z");
        let cfg = parse_config(&text).unwrap();
        let (spec, _) = build_problem(&cfg).unwrap();
        assert!((spec.exps.p_minus() - 2.5).abs() < 1e-12);
        assert!((spec.exps.p_plus() - 2.9).abs() < 1e-12);
    }

    #[test]
    fn round_trip_parse_render() {
        let mut cfg = parse_config(MINIMAL).unwrap();
        assert_eq!(parse_config(&render(&cfg).unwrap()).unwrap(), cfg);

        cfg.p = FieldSpec::Affine { c0: 2.5, cx: 0.4, cy: 0.0 };
        cfg.sweep = Some(SweepConfig {
            lambdas: vec![0.01, 0.1, 1.0],
            threshold: Some((50.0, 400.0, 10.0)),
        });
        cfg.out_dir = Some("out".to_string());
        cfg.theta = Some(2.5);
        cfg.f = NonlinSpec::F2 {
            c_hat: 1.5,
            m: FieldSpec::Constant(3.5),
        };
        assert_eq!(parse_config(&render(&cfg).unwrap()).unwrap(), cfg);
    }

    #[test]
    fn comments_and_blank_lines_ignored() {
        let text = format!("# leading comment\n{MINIMAL}\n# trailing\n");
        assert!(parse_config(&text).is_ok());
    }

    #[test]
    fn solve_writes_record_and_csvs() {
        let dir = tempdir().unwrap();
        let text = format!(
            "{MINIMAL}\n[output]\ndir = {}\n",
            dir.path().display()
        )
        .replace("resolution = 200", "resolution = 40");
        let cfg = parse_config(&text).unwrap();
        let cfg = RunConfig { multistart: 2, ..cfg };
        assert_eq!(cmd_solve(&cfg).unwrap(), 0);
        let record: serde_json::Value = serde_json::from_str(
            &fs::read_to_string(dir.path().join("record.json")).unwrap(),
        )
        .unwrap();
        assert_eq!(record["schema_version"], SCHEMA_VERSION);
        assert_eq!(record["record"]["status"], "two-or-more");
        assert!(dir.path().join("solution_0.csv").exists());
        assert!(dir.path().join("u_bar.csv").exists());
        assert!(dir.path().join("u_star.csv").exists());
    }

    #[test]
    fn sweep_writes_deterministic_outputs() {
        let run = |dir: &Path| {
            let text = format!(
                "{MINIMAL}\n[sweep]\nlambdas = 0.05, 500\n\n[output]\ndir = {}\n",
                dir.display()
            )
            .replace("resolution = 200", "resolution = 40");
            let cfg = parse_config(&text).unwrap();
            let cfg = RunConfig { multistart: 2, ..cfg };
            assert_eq!(cmd_sweep(&cfg).unwrap(), 0);
            let json = fs::read_to_string(dir.join("diagram.json")).unwrap();
            // drop the timestamp line before comparing bodies
            json.lines()
                .filter(|l| !l.contains("\"timestamp\""))
                .collect::<Vec<_>>()
                .join("\n")
        };
        let d1 = tempdir().unwrap();
        let d2 = tempdir().unwrap();
        let body1 = run(d1.path());
        let body2 = run(d2.path());
        assert_eq!(body1, body2);
        let csv = fs::read_to_string(d1.path().join("summary.csv")).unwrap();
        assert!(csv.starts_with("lambda,status,count"));
        assert!(csv.contains("two-or-more"));
    }

    #[test]
    fn verify_passes_on_reference_config() {
        let text = MINIMAL.replace("resolution = 200", "resolution = 50");
        let cfg = parse_config(&text).unwrap();
        let cfg = RunConfig { multistart: 3, ..cfg };
        assert_eq!(cmd_verify(&cfg).unwrap(), 0);
    }

    #[test]
    fn oracle_exports_solutions() {
        let dir = tempdir().unwrap();
        let text = format!(
            "{MINIMAL}\n[output]\ndir = {}\n",
            dir.path().display()
        )
        .replace("resolution = 200", "resolution = 50");
        let cfg = parse_config(&text).unwrap();
        assert_eq!(cmd_oracle(&cfg).unwrap(), 0);
        assert!(dir.path().join("oracle_0.csv").exists());
        assert!(dir.path().join("oracle_1.csv").exists());
    }
}
