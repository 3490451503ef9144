//! Lambda sweeps: catalogue the solution set per lambda, estimate the
//! existence threshold, and check the ordering structure across the sweep.

use std::io::Write;

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::energy::{energy_phi_hat, EnergyError, ProblemSpec, TruncKind, build_truncation,
    energy_truncated, grad_truncated};
use crate::mesh::{Mesh, NodalFunction};
use crate::modular::luxemburg_norm_grad;
use crate::solver::{Classification, EnergyFn, GradFn, SolveOptions, SolverError, find_far_point,
    minimal_solution, minimize_polished, mountain_pass, residual_check, solve_auxiliary};

/// Residual (full-problem gradient norm) below which a candidate counts as a
/// verified solution.
pub const RESIDUAL_TOL: f64 = 1e-6;
/// Candidates closer than this in sup-norm are the same solution.
pub const DEDUP_TOL: f64 = 1e-5;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Status {
    TwoOrMore,
    One,
    None,
}

impl std::fmt::Display for Status {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Status::TwoOrMore => "two-or-more",
            Status::One => "one",
            Status::None => "none",
        })
    }
}

/// One catalogued function: nodal values plus the certificates attached to it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolutionSummary {
    pub values: Vec<f64>,
    pub sup_norm: f64,
    /// Luxemburg norm of the gradient (the solver-space norm).
    pub norm: f64,
    /// Full (untruncated) energy at the solution.
    pub energy: f64,
    /// Full-problem gradient norm.
    pub residual: f64,
    pub classification: Classification,
}

impl SolutionSummary {
    fn build(
        u: &NodalFunction,
        classification: Classification,
        spec: &ProblemSpec,
    ) -> Result<Self, EnergyError> {
        Ok(SolutionSummary {
            values: u.values.clone(),
            sup_norm: u.sup_norm(),
            norm: luxemburg_norm_grad(u, &spec.exps.p, &spec.mesh),
            energy: energy_phi_hat(u, spec)?,
            residual: residual_check(u, spec)?,
            classification,
        })
    }

    pub fn as_nodal(&self) -> NodalFunction {
        NodalFunction {
            values: self.values.clone(),
        }
    }

    fn sup_diff(&self, other: &SolutionSummary) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Everything found at one lambda.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LambdaRecord {
    pub lambda: f64,
    /// Verified, deduplicated solutions sorted by sup-norm.
    pub solutions: Vec<SolutionSummary>,
    /// Auxiliary-problem solution (the universal lower bound).
    pub u_bar: SolutionSummary,
    /// Minimal solution, when any solution was verified.
    pub u_star: Option<SolutionSummary>,
    pub status: Status,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LambdaStar {
    /// Midpoint of the final bracket (numerical existence threshold).
    pub estimate: f64,
    pub bracket_lo: f64,
    pub bracket_hi: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Provenance {
    pub dimension: usize,
    pub resolution: usize,
    pub seed: u64,
    pub grad_tol: f64,
    pub multistart: usize,
    /// Informational only; cleared for byte-identical comparisons.
    pub timestamp: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BifurcationDiagram {
    pub schema_version: u32,
    pub records: Vec<LambdaRecord>,
    pub lambda_star: Option<LambdaStar>,
    pub provenance: Provenance,
}

fn provenance(spec: &ProblemSpec, opts: &SolveOptions) -> Provenance {
    Provenance {
        dimension: spec.mesh.dimension(),
        resolution: spec.mesh.resolution(),
        seed: opts.seed,
        grad_tol: opts.grad_tol,
        multistart: opts.multistart,
        timestamp: String::new(),
    }
}

/// Verify a candidate against the untruncated problem and summarize it.
fn verify_candidate(
    u: &NodalFunction,
    classification: Classification,
    spec: &ProblemSpec,
) -> Result<Option<SolutionSummary>, EnergyError> {
    if classification == Classification::Failed {
        info!("candidate rejected at lambda {}: solver failed", spec.lambda);
        return Ok(None);
    }
    if u.min_value() < -1e-10 {
        info!(
            "candidate rejected at lambda {}: min value {:.3e}",
            spec.lambda,
            u.min_value()
        );
        return Ok(None);
    }
    let summary = SolutionSummary::build(u, classification, spec)?;
    if summary.residual <= RESIDUAL_TOL {
        Ok(Some(summary))
    } else {
        info!(
            "candidate rejected at lambda {}: residual {:.3e}",
            spec.lambda, summary.residual
        );
        Ok(None)
    }
}

/// Full solve pipeline at one lambda: auxiliary lower bound, truncated
/// minimization, mountain pass, residual verification, minimal solution.
pub fn solve_at(
    lambda: f64,
    base: &ProblemSpec,
    opts: &SolveOptions,
) -> Result<LambdaRecord, SolverError> {
    let spec = base.with_lambda(lambda)?;
    let aux = solve_auxiliary(&spec, opts)?;
    let u_bar = aux.solve.solution.clone();
    let u_bar_summary = SolutionSummary::build(&u_bar, Classification::Minimizer, &spec)
        .map_err(SolverError::Energy)?;

    // energy with the reaction frozen below u_bar: critical points above the
    // bound are critical points of the full problem
    let tp = build_truncation(TruncKind::KHat, Some(u_bar.clone()), None, &spec, None)?;
    let energy: &EnergyFn = &|u: &NodalFunction| energy_truncated(u, &tp);
    let gradient: &GradFn = &|u: &NodalFunction| grad_truncated(u, &tp);

    let mut candidates: Vec<(NodalFunction, Classification)> = Vec::new();

    // small bump above the lower bound; descent falls into the local
    // minimizer when one exists
    let bump = 1e-3 * (1.0 + u_bar.sup_norm());
    let mut start = u_bar.clone();
    for i in spec.mesh.interior_nodes() {
        start.values[i] += bump;
    }
    // refine past the user tolerance, else distinct runs into the same
    // critical point land ~1e-5 apart and defeat deduplication
    let polish_tol = (opts.grad_tol * 1e-3).max(1e-12);
    let low = minimize_polished(energy, gradient, &start, opts, polish_tol)?;
    if low.classification == Classification::Minimizer {
        candidates.push((low.solution.clone(), Classification::Minimizer));

        // ridge search between the minimizer and a far low-energy point;
        // normalize the ray direction so the far point stays near the ridge
        // and the path stays well resolved
        let direction = if low.solution.sup_norm() > 0.0 {
            low.solution.scaled(1.0 / low.solution.sup_norm())
        } else {
            NodalFunction::constant_interior(&spec.mesh, 1.0)
        };
        match find_far_point(energy, &direction) {
            Ok(far) => {
                let mp = mountain_pass(energy, gradient, &low.solution, &far, opts)?;
                info!(
                    "ridge search at lambda {lambda}: {:?} sup {:.3e} energy {:.3e} gnorm {:.3e}",
                    mp.classification,
                    mp.solution.sup_norm(),
                    mp.energy,
                    mp.grad_norm
                );
                if mp.classification == Classification::MountainPass {
                    candidates.push((mp.solution, Classification::MountainPass));
                }
            }
            Err(SolverError::FarPointUnbounded) => {
                warn!("no far point at lambda {lambda}; skipping ridge search");
            }
            Err(e) => return Err(e),
        }
    }

    let mut solutions: Vec<SolutionSummary> = Vec::new();
    for (u, class) in &candidates {
        if let Some(s) = verify_candidate(u, *class, &spec).map_err(SolverError::Energy)? {
            solutions.push(s);
        }
    }

    // minimal solution, iterated down from the smallest verified candidate
    let mut u_star = None;
    if let Some(smallest) = solutions
        .iter()
        .min_by(|a, b| a.sup_norm.total_cmp(&b.sup_norm))
    {
        let ms = minimal_solution(&spec, &smallest.as_nodal(), Some(&u_bar), opts)?;
        if let Some(s) =
            verify_candidate(&ms.solution, ms.classification, &spec).map_err(SolverError::Energy)?
        {
            u_star = Some(s.clone());
            solutions.push(s);
        }
    }

    solutions.sort_by(|a, b| a.sup_norm.total_cmp(&b.sup_norm));
    let mut deduped: Vec<SolutionSummary> = Vec::new();
    for s in solutions {
        if deduped.iter().all(|kept| kept.sup_diff(&s) > DEDUP_TOL) {
            deduped.push(s);
        }
    }

    let status = match deduped.len() {
        0 => Status::None,
        1 => Status::One,
        _ => Status::TwoOrMore,
    };
    Ok(LambdaRecord {
        lambda,
        solutions: deduped,
        u_bar: u_bar_summary,
        u_star,
        status,
    })
}

/// Per-lambda solves in parallel, merged in grid order.
pub fn sweep(
    grid: &[f64],
    base: &ProblemSpec,
    opts: &SolveOptions,
) -> Result<BifurcationDiagram, SolverError> {
    assert!(!grid.is_empty(), "empty lambda grid");
    assert!(
        grid.windows(2).all(|w| w[0] < w[1]),
        "lambda grid must be strictly increasing"
    );
    let records: Vec<LambdaRecord> = grid
        .par_iter()
        .map(|&lambda| solve_at(lambda, base, opts))
        .collect::<Result<_, _>>()?;
    Ok(BifurcationDiagram {
        schema_version: SCHEMA_VERSION,
        records,
        lambda_star: None,
        provenance: provenance(base, opts),
    })
}

fn has_solutions(lambda: f64, base: &ProblemSpec, opts: &SolveOptions) -> Result<bool, SolverError> {
    Ok(!solve_at(lambda, base, opts)?.solutions.is_empty())
}

/// Bisect the existence predicate to bracket the numerical threshold.
/// `lo` must have solutions and `hi` must not; if the first check fails the
/// multi-start budget is widened once before giving up.
pub fn estimate_lambda_star(
    lo: f64,
    hi: f64,
    tol: f64,
    base: &ProblemSpec,
    opts: &SolveOptions,
) -> Result<LambdaStar, SolverError> {
    assert!(lo < hi && tol > 0.0);
    let mut opts = opts.clone();
    for attempt in 0..2 {
        if has_solutions(lo, base, &opts)? && !has_solutions(hi, base, &opts)? {
            let (mut a, mut b) = (lo, hi);
            while b - a > tol {
                let mid = 0.5 * (a + b);
                if has_solutions(mid, base, &opts)? {
                    a = mid;
                } else {
                    b = mid;
                }
            }
            return Ok(LambdaStar {
                estimate: 0.5 * (a + b),
                bracket_lo: a,
                bracket_hi: b,
            });
        }
        if attempt == 0 {
            warn!("threshold bracket invalid; retrying with a wider multi-start budget");
            opts.multistart *= 2;
        }
    }
    Err(SolverError::ThresholdBracket { lo, hi })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OrderingReport {
    pub pairs_checked: usize,
    pub violations: Vec<String>,
}

impl OrderingReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

/// a <= b nodewise with strict inequality at every interior node.
fn strictly_below_interior(a: &[f64], b: &[f64], mesh: &Mesh) -> bool {
    for i in 0..a.len() {
        if a[i] > b[i] {
            return false;
        }
    }
    mesh.interior_nodes().all(|i| a[i] < b[i])
}

/// Check the ordering structure across consecutive records with solutions:
/// some solution pair must be strictly ordered, the minimal branch must be
/// strictly increasing, and every solution must dominate its u_bar.
pub fn check_ordering(diagram: &BifurcationDiagram, mesh: &Mesh) -> OrderingReport {
    let mut report = OrderingReport {
        pairs_checked: 0,
        violations: Vec::new(),
    };
    for rec in &diagram.records {
        for s in &rec.solutions {
            let dominated = s
                .values
                .iter()
                .zip(&rec.u_bar.values)
                .all(|(u, lb)| lb - 1e-6 <= *u);
            if !dominated {
                report.violations.push(format!(
                    "lambda {}: a solution drops below the auxiliary lower bound",
                    rec.lambda
                ));
            }
        }
    }
    let with_solutions: Vec<&LambdaRecord> = diagram
        .records
        .iter()
        .filter(|r| !r.solutions.is_empty())
        .collect();
    for pair in with_solutions.windows(2) {
        let (lo, hi) = (pair[0], pair[1]);
        report.pairs_checked += 1;
        let some_ordered_pair = lo.solutions.iter().any(|a| {
            hi.solutions
                .iter()
                .any(|b| strictly_below_interior(&a.values, &b.values, mesh))
        });
        if !some_ordered_pair {
            report.violations.push(format!(
                "no strictly ordered solution pair between lambda {} and {}",
                lo.lambda, hi.lambda
            ));
        }
        if let (Some(a), Some(b)) = (&lo.u_star, &hi.u_star) {
            if !strictly_below_interior(&a.values, &b.values, mesh) {
                report.violations.push(format!(
                    "minimal branch not strictly increasing between lambda {} and {}",
                    lo.lambda, hi.lambda
                ));
            }
        }
    }
    report
}

/// Statuses must only degrade as lambda grows.
pub fn check_status_monotone(diagram: &BifurcationDiagram) -> bool {
    let rank = |s: Status| match s {
        Status::TwoOrMore => 2,
        Status::One => 1,
        Status::None => 0,
    };
    diagram
        .records
        .windows(2)
        .all(|w| rank(w[0].status) >= rank(w[1].status))
}

/// JSON body with the timestamp cleared, for byte-for-byte comparisons.
pub fn diagram_json(diagram: &BifurcationDiagram) -> String {
    let mut clone = diagram.clone();
    clone.provenance.timestamp = String::new();
    let mut s = serde_json::to_string_pretty(&clone).expect("diagram serializes");
    s.push('\n');
    s
}

pub fn write_diagram_json(
    diagram: &BifurcationDiagram,
    out: &mut dyn Write,
) -> std::io::Result<()> {
    let mut s = serde_json::to_string_pretty(diagram).expect("diagram serializes");
    s.push('\n');
    out.write_all(s.as_bytes())
}

/// Per-lambda summary rows plus a threshold footer when one was estimated.
pub fn write_diagram_csv(
    diagram: &BifurcationDiagram,
    out: &mut dyn Write,
) -> std::io::Result<()> {
    writeln!(
        out,
        "lambda,status,count,min_solution_norm,min_energy,max_energy"
    )?;
    for rec in &diagram.records {
        let (min_norm, min_e, max_e) = if rec.solutions.is_empty() {
            (String::new(), String::new(), String::new())
        } else {
            let min_norm = rec
                .solutions
                .iter()
                .map(|s| s.norm)
                .fold(f64::INFINITY, f64::min);
            let min_e = rec
                .solutions
                .iter()
                .map(|s| s.energy)
                .fold(f64::INFINITY, f64::min);
            let max_e = rec
                .solutions
                .iter()
                .map(|s| s.energy)
                .fold(f64::NEG_INFINITY, f64::max);
            (
                format!("{min_norm:.12e}"),
                format!("{min_e:.12e}"),
                format!("{max_e:.12e}"),
            )
        };
        writeln!(
            out,
            "{:.12e},{},{},{},{},{}",
            rec.lambda,
            rec.status,
            rec.solutions.len(),
            min_norm,
            min_e,
            max_e
        )?;
    }
    if let Some(star) = &diagram.lambda_star {
        writeln!(
            out,
            "# lambda_star,{:.12e},{:.12e},{:.12e}",
            star.estimate, star.bracket_lo, star.bracket_hi
        )?;
    }
    Ok(())
}
