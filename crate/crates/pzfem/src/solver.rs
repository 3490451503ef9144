//! Critical-point search: monotone descent for the coercive functionals,
//! a path-deformation mountain pass with a saddle polish, the auxiliary
//! lower-barrier solve, and the downward iteration to the minimal solution.

use std::io::Write;

use log::{debug, warn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::energy::{
    build_truncation, energy_gamma, energy_truncated, grad_gamma, grad_phi_hat, grad_truncated,
    DualVector, EnergyError, ProblemSpec, TruncKind,
};
use crate::mesh::NodalFunction;

#[derive(Debug, Error)]
pub enum SolverError {
    #[error(transparent)]
    Energy(#[from] EnergyError),
    #[error("energy stays bounded below along the ray (t reached 2^60)")]
    FarPointUnbounded,
    #[error("trace write failed: {0}")]
    Trace(#[from] std::io::Error),
    #[error("threshold bracket invalid: solutions at {lo} and/or none at {hi} not confirmed")]
    ThresholdBracket { lo: f64, hi: f64 },
}

#[derive(Debug, Clone)]
pub struct SolveOptions {
    /// Convergence threshold on the Euclidean norm of the assembled gradient.
    pub grad_tol: f64,
    pub max_iters: usize,
    /// Armijo sufficient-decrease constant and backtracking factor.
    pub armijo_c: f64,
    pub backtrack: f64,
    pub seed: u64,
    /// Multi-start count for the auxiliary-solve uniqueness surrogate.
    pub multistart: usize,
    /// Cap on the sup-norm change per accepted step; keeps descent inside
    /// the local basin of non-coercive truncated energies.
    pub max_step_sup: f64,
    /// Points on the mountain-pass path.
    pub path_points: usize,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            grad_tol: 1e-8,
            max_iters: 20000,
            armijo_c: 1e-4,
            backtrack: 0.5,
            seed: 0,
            multistart: 20,
            max_step_sup: 1.0,
            path_points: 41,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Classification {
    Minimizer,
    MountainPass,
    Failed,
}

#[derive(Debug, Clone)]
pub struct SolveResult {
    pub solution: NodalFunction,
    pub energy: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    pub classification: Classification,
    /// min nodal value >= -1e-10
    pub positive: bool,
}

impl SolveResult {
    fn finish(
        solution: NodalFunction,
        energy: f64,
        grad_norm: f64,
        iterations: usize,
        classification: Classification,
    ) -> Self {
        let positive = solution.min_value() >= -1e-10;
        SolveResult {
            solution,
            energy,
            grad_norm,
            iterations,
            classification,
            positive,
        }
    }
}

pub type EnergyFn<'a> = dyn Fn(&NodalFunction) -> Result<f64, EnergyError> + Sync + 'a;
pub type GradFn<'a> = dyn Fn(&NodalFunction) -> Result<DualVector, EnergyError> + Sync + 'a;

fn step_from(u: &NodalFunction, g: &DualVector, t: f64) -> NodalFunction {
    NodalFunction {
        values: u
            .values
            .iter()
            .zip(&g.values)
            .map(|(a, b)| a - t * b)
            .collect(),
    }
}

fn vec_dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Monotone gradient descent: Barzilai–Borwein trial steps along the raw
/// gradient direction, safeguarded by Armijo backtracking, with a sup-norm
/// step cap and divergence guards. Deterministic given u0.
pub fn minimize(
    energy: &EnergyFn,
    gradient: &GradFn,
    u0: &NodalFunction,
    opts: &SolveOptions,
) -> Result<SolveResult, SolverError> {
    minimize_traced(energy, gradient, u0, opts, None)
}

pub fn minimize_traced(
    energy: &EnergyFn,
    gradient: &GradFn,
    u0: &NodalFunction,
    opts: &SolveOptions,
    mut trace: Option<&mut dyn Write>,
) -> Result<SolveResult, SolverError> {
    let mut u = u0.clone();
    let mut e = energy(&u)?;
    let mut g = gradient(&u)?;
    let mut gnorm = g.norm();
    let mut step = 1.0 / gnorm.max(1.0);
    let mut prev: Option<(Vec<f64>, Vec<f64>)> = None; // (u, g) at last accepted point

    for it in 0..opts.max_iters {
        if let Some(w) = trace.as_deref_mut() {
            writeln!(w, "{it},{e},{gnorm}")?;
        }
        if gnorm <= opts.grad_tol {
            return Ok(SolveResult::finish(u, e, gnorm, it, Classification::Minimizer));
        }
        if let Some((pu, pg)) = &prev {
            let s: Vec<f64> = u.values.iter().zip(pu).map(|(a, b)| a - b).collect();
            let y: Vec<f64> = g.values.iter().zip(pg).map(|(a, b)| a - b).collect();
            let sy = vec_dot(&s, &y);
            if sy > 1e-300 {
                step = (vec_dot(&s, &s) / sy).clamp(1e-14, 1e8);
            }
        }
        let gsup = g.values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if step * gsup > opts.max_step_sup {
            step = opts.max_step_sup / gsup;
        }
        let mut t = step;
        let mut accepted = false;
        for _ in 0..70 {
            let cand = step_from(&u, &g, t);
            let e_cand = energy(&cand)?;
            if e_cand <= e - opts.armijo_c * t * gnorm * gnorm {
                prev = Some((u.values.clone(), g.values.clone()));
                u = cand;
                e = e_cand;
                g = gradient(&u)?;
                gnorm = g.norm();
                accepted = true;
                break;
            }
            t *= opts.backtrack;
        }
        if !accepted {
            debug!("descent stagnated at iteration {it}, |g| = {gnorm:.3e}");
            break;
        }
        if e < -1e12 || u.sup_norm() > 1e10 {
            return Ok(SolveResult::finish(
                u,
                e,
                gnorm,
                it + 1,
                Classification::Failed,
            ));
        }
    }
    let class = if gnorm <= opts.grad_tol {
        Classification::Minimizer
    } else {
        Classification::Failed
    };
    Ok(SolveResult::finish(u, e, gnorm, opts.max_iters, class))
}

/// BB descent followed by a dense Newton/LM refinement toward
/// `polish_tol`. The BB tail on the degenerate operator is long, and its
/// length grows with the problem scale; the quadratic polish removes both
/// effects for systems small enough to factor densely. Classification still
/// uses `opts.grad_tol`; `polish_tol` is only the refinement target.
pub fn minimize_polished(
    energy: &EnergyFn,
    gradient: &GradFn,
    u0: &NodalFunction,
    opts: &SolveOptions,
    polish_tol: f64,
) -> Result<SolveResult, SolverError> {
    let res = minimize(energy, gradient, u0, opts)?;
    let diverged = res.energy < -1e12 || res.solution.sup_norm() > 1e10;
    if diverged || res.solution.values.len() > 2000 {
        return Ok(res);
    }
    let popts = SolveOptions {
        grad_tol: polish_tol,
        ..opts.clone()
    };
    let (u, gnorm, piters) = polish_saddle_newton(gradient, &res.solution, &popts)?;
    if gnorm < res.grad_norm {
        let e = energy(&u)?;
        let class = if gnorm <= opts.grad_tol {
            Classification::Minimizer
        } else {
            Classification::Failed
        };
        return Ok(SolveResult::finish(
            u,
            e,
            gnorm,
            res.iterations.min(opts.max_iters) + piters,
            class,
        ));
    }
    Ok(res)
}

/// Doubles t from 1 until energy(t * direction) < -1, then bisects back to
/// (near) the smallest such t so the far point sits just past the ridge
/// rather than deep in the superlinear well.
pub fn find_far_point(
    energy: &EnergyFn,
    direction: &NodalFunction,
) -> Result<NodalFunction, SolverError> {
    let mut t = 1.0f64;
    for _ in 0..=60 {
        if energy(&direction.scaled(t))? < -1.0 {
            let (mut lo, mut hi) = (t * 0.5, t);
            for _ in 0..40 {
                let mid = 0.5 * (lo + hi);
                if energy(&direction.scaled(mid))? < -1.0 {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            return Ok(direction.scaled(hi));
        }
        t *= 2.0;
    }
    Err(SolverError::FarPointUnbounded)
}

fn path_interpolate(a: &NodalFunction, b: &NodalFunction, count: usize) -> Vec<NodalFunction> {
    (0..count)
        .map(|k| {
            let t = k as f64 / (count - 1) as f64;
            a.scaled(1.0 - t).axpy(t, b)
        })
        .collect()
}

fn l2_dist(a: &NodalFunction, b: &NodalFunction) -> f64 {
    a.values
        .iter()
        .zip(&b.values)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Re-parametrize the polyline through the given points uniformly by nodal
/// L2 arc-length, keeping the endpoints fixed.
fn respread(path: &[NodalFunction]) -> Vec<NodalFunction> {
    let n = path.len();
    let mut cum = vec![0.0; n];
    for k in 1..n {
        cum[k] = cum[k - 1] + l2_dist(&path[k - 1], &path[k]);
    }
    let total = cum[n - 1];
    if total == 0.0 {
        return path.to_vec();
    }
    let mut out = Vec::with_capacity(n);
    out.push(path[0].clone());
    let mut seg = 1usize;
    for k in 1..n - 1 {
        let target = total * k as f64 / (n - 1) as f64;
        while seg < n - 1 && cum[seg] < target {
            seg += 1;
        }
        let span = cum[seg] - cum[seg - 1];
        let t = if span > 0.0 { (target - cum[seg - 1]) / span } else { 0.0 };
        out.push(path[seg - 1].scaled(1.0 - t).axpy(t, &path[seg]));
    }
    out.push(path[n - 1].clone());
    out
}

/// Solve the dense system J x = b in place by LU with partial pivoting.
/// Returns None when a pivot degenerates.
fn lu_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .unwrap();
        if a[piv][col].abs() < 1e-300 {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            if f != 0.0 {
                for k in col..n {
                    a[row][k] -= f * a[col][k];
                }
                b[row] -= f * b[col];
            }
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let mut s = b[row];
        for k in row + 1..n {
            s -= a[row][k] * x[k];
        }
        x[row] = s / a[row][row];
    }
    Some(x)
}

/// Damped Newton on grad E = 0 from a near-ridge point, with the Jacobian
/// assembled by forward differences over the interior nodes. Squared-residual
/// descent converges too slowly here: its conditioning is the square of the
/// already stiff Hessian's.
fn polish_saddle_newton(
    gradient: &GradFn,
    start: &NodalFunction,
    opts: &SolveOptions,
) -> Result<(NodalFunction, f64, usize), SolverError> {
    let n_total = start.values.len();
    let mut u = start.clone();
    let mut g = gradient(&u)?;
    let mut gnorm = g.norm();
    let mut iters = 0usize;
    let mut mu = 1e-6f64;
    // indices the functional actually depends on (constrained nodes have
    // identically zero gradient columns), detected on the first pass
    let mut interior: Vec<usize> = Vec::new();
    while gnorm > opts.grad_tol && iters < 200 {
        let h = 1e-7 * (1.0 + u.sup_norm());
        let mut full = vec![vec![0.0; n_total]; n_total];
        for j in 0..n_total {
            let mut pert = u.clone();
            pert.values[j] += h;
            let gj = gradient(&pert)?;
            for i in 0..n_total {
                full[i][j] = (gj.values[i] - g.values[i]) / h;
            }
        }
        if interior.is_empty() {
            // a node is free iff its own gradient row can respond; constrained
            // nodes have identically zero rows and must not be moved
            interior = (0..n_total)
                .filter(|&j| full[j].iter().any(|v| *v != 0.0) || g.values[j] != 0.0)
                .collect();
            if interior.is_empty() {
                break;
            }
        }
        let n = interior.len();
        let mut jac = vec![vec![0.0; n]; n];
        for (row, &i) in interior.iter().enumerate() {
            for (col, &j) in interior.iter().enumerate() {
                jac[row][col] = full[i][j];
            }
        }
        // Levenberg–Marquardt step on the residual g: far from the saddle
        // the damping keeps steps short; near it mu -> 0 recovers Newton
        let gv: Vec<f64> = interior.iter().map(|&i| g.values[i]).collect();
        let mut jtj = vec![vec![0.0; n]; n];
        let mut jtg = vec![0.0; n];
        for a in 0..n {
            for b in 0..n {
                let mut s = 0.0;
                for row in 0..n {
                    s += jac[row][a] * jac[row][b];
                }
                jtj[a][b] = s;
            }
            jtg[a] = (0..n).map(|row| jac[row][a] * gv[row]).sum();
        }
        let scale = (0..n).map(|a| jtj[a][a]).fold(0.0f64, f64::max).max(1e-300);
        let mut accepted = false;
        for _ in 0..40 {
            let mut lhs = jtj.clone();
            for a in 0..n {
                lhs[a][a] += mu * scale;
            }
            let rhs: Vec<f64> = jtg.iter().map(|v| -v).collect();
            if let Some(step) = lu_solve(lhs, rhs) {
                let mut cand = u.clone();
                for (k, &i) in interior.iter().enumerate() {
                    cand.values[i] += step[k];
                }
                let g_cand = gradient(&cand)?;
                let gn_cand = g_cand.norm();
                if gn_cand < gnorm {
                    u = cand;
                    g = g_cand;
                    gnorm = gn_cand;
                    mu = (mu * 0.25).max(1e-14);
                    accepted = true;
                    break;
                }
            }
            mu *= 8.0;
        }
        iters += 1;
        if !accepted {
            break; // no damped step reduces the residual
        }
    }
    Ok((u, gnorm, iters))
}

/// Descend the squared residual 0.5 |grad E|^2 from a near-ridge point; its
/// gradient H g is approximated by a central difference of grad E along g,
/// so no Hessian is ever formed. Used when the system is too large for the
/// dense Newton polish.
fn polish_saddle_flow(
    energy: &EnergyFn,
    gradient: &GradFn,
    start: &NodalFunction,
    opts: &SolveOptions,
) -> Result<(NodalFunction, f64, usize), SolverError> {
    let mut u = start.clone();
    let mut g = gradient(&u)?;
    let mut gnorm = g.norm();
    let mut iters = 0usize;
    let max_polish = 50_000;
    // BB memory over the squared-residual descent
    let mut prev: Option<(Vec<f64>, Vec<f64>, f64)> = None; // (u, d, step)
    while gnorm > opts.grad_tol && iters < max_polish {
        // d = grad of 0.5|g|^2 = H g; central FD along the unit gradient
        // with a fixed small displacement
        let h = 1e-6 * (1.0 + u.sup_norm());
        let gp = gradient(&step_from(&u, &g, -h / gnorm))?;
        let gm = gradient(&step_from(&u, &g, h / gnorm))?;
        let d = DualVector {
            values: gp
                .values
                .iter()
                .zip(&gm.values)
                .map(|(a, b)| (a - b) / (2.0 * h) * gnorm)
                .collect(),
        };
        let dnorm = d.norm();
        if dnorm == 0.0 {
            break;
        }
        let f0 = 0.5 * gnorm * gnorm;
        let slope = vec_dot(&d.values, &d.values);
        let mut t = match &prev {
            Some((u_prev, d_prev, t_prev)) => {
                let s: Vec<f64> = u
                    .values
                    .iter()
                    .zip(u_prev)
                    .map(|(a, b)| a - b)
                    .collect();
                let y: Vec<f64> = d.values.iter().zip(d_prev).map(|(a, b)| a - b).collect();
                let sy = vec_dot(&s, &y);
                if sy > 0.0 {
                    (vec_dot(&s, &s) / sy).clamp(1e-14, 1e8)
                } else {
                    *t_prev
                }
            }
            None => (f0 / slope).min(1.0 / dnorm),
        };
        let mut accepted = false;
        for _ in 0..60 {
            let cand = step_from(&u, &d, t);
            let g_cand = gradient(&cand)?;
            let f_cand = 0.5 * g_cand.norm().powi(2);
            if f_cand <= f0 - 1e-4 * t * slope {
                prev = Some((u.values.clone(), d.values.clone(), t));
                u = cand;
                g = g_cand;
                gnorm = g.norm();
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        iters += 1;
        if !accepted {
            break;
        }
    }
    let _ = energy; // energy value reported by the caller
    Ok((u, gnorm, iters))
}

/// Path-deformation mountain pass between two low-energy points: the
/// highest path point is pushed downhill, the path re-spread, and the final
/// ridge point polished to a critical point of the energy.
pub fn mountain_pass(
    energy: &EnergyFn,
    gradient: &GradFn,
    u_low: &NodalFunction,
    u_far: &NodalFunction,
    opts: &SolveOptions,
) -> Result<SolveResult, SolverError> {
    let pcount = opts.path_points.max(5);
    let mut path = path_interpolate(u_low, u_far, pcount);
    let mut energies: Vec<f64> = path
        .iter()
        .map(|p| energy(p))
        .collect::<Result<_, _>>()?;
    let end_energy = energies[0].max(energies[pcount - 1]);

    // string method: every interior point takes a small downhill step capped
    // by the local spacing, then the path is re-spread by arc length; the
    // path drifts to the minimum-energy path and its max point to the ridge
    let sweeps = 2000usize;
    let mut total_iters = 0usize;
    let mut last_max = f64::INFINITY;
    let mut stalled = 0usize;
    for _sweep in 0..sweeps {
        let k = (1..pcount - 1)
            .max_by(|&a, &b| energies[a].total_cmp(&energies[b]))
            .unwrap();
        if energies[k] <= 0.0 {
            // ridge collapse: no positive barrier between the endpoints
            let g = gradient(&path[k])?;
            return Ok(SolveResult::finish(
                path[k].clone(),
                energies[k],
                g.norm(),
                total_iters,
                Classification::Failed,
            ));
        }
        for k in 1..pcount - 1 {
            let g = gradient(&path[k])?;
            let gnorm = g.norm();
            if gnorm == 0.0 {
                continue;
            }
            let spacing = l2_dist(&path[k - 1], &path[k]).max(l2_dist(&path[k], &path[k + 1]));
            let t = 0.3 * spacing / gnorm;
            path[k] = step_from(&path[k], &g, t);
        }
        total_iters += 1;
        path = respread(&path);
        energies = path.iter().map(|p| energy(p)).collect::<Result<_, _>>()?;
        let cur_max = energies[1..pcount - 1]
            .iter()
            .fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        if (cur_max - last_max).abs() <= 1e-10 * cur_max.abs().max(1.0) {
            stalled += 1;
            if stalled >= 20 {
                break;
            }
        } else {
            stalled = 0;
        }
        last_max = cur_max;
    }

    let k = (1..pcount - 1)
        .max_by(|&a, &b| energies[a].total_cmp(&energies[b]))
        .unwrap();
    if energies[k] <= 0.0 {
        let g = gradient(&path[k])?;
        return Ok(SolveResult::finish(
            path[k].clone(),
            energies[k],
            g.norm(),
            total_iters,
            Classification::Failed,
        ));
    }
    let (u, gnorm, polish_iters) = if path[k].values.len() <= 2000 {
        polish_saddle_newton(gradient, &path[k], opts)?
    } else {
        polish_saddle_flow(energy, gradient, &path[k], opts)?
    };
    let e = energy(&u)?;
    total_iters += polish_iters;
    let class = if gnorm <= opts.grad_tol && e >= end_energy {
        Classification::MountainPass
    } else {
        Classification::Failed
    };
    Ok(SolveResult::finish(u, e, gnorm, total_iters, class))
}

#[derive(Debug, Clone)]
pub struct AuxiliaryResult {
    pub solve: SolveResult,
    /// Largest sup-distance between multi-start minimizers.
    pub multistart_spread: f64,
    /// Set when the multi-starts disagree beyond 1e-6 (discretization too
    /// coarse to trust the uniqueness surrogate).
    pub flagged: bool,
}

/// Minimize the auxiliary functional gamma from a positive constant start,
/// then re-run from `opts.multistart` random positive starts and compare.
pub fn solve_auxiliary(
    spec: &ProblemSpec,
    opts: &SolveOptions,
) -> Result<AuxiliaryResult, SolverError> {
    let energy: &EnergyFn = &|u: &NodalFunction| Ok(energy_gamma(u, spec));
    let gradient: &GradFn = &|u: &NodalFunction| Ok(grad_gamma(u, spec));
    let base_start = NodalFunction::constant_interior(&spec.mesh, 0.1);
    // refine well past the user tolerance: the multi-start agreement
    // threshold (1e-6 sup) amplifies the residual through the local
    // curvature, which carries a mesh-size factor
    let polish_tol = (opts.grad_tol * 1e-3).max(1e-12);
    let main = minimize_polished(energy, gradient, &base_start, opts, polish_tol)?;

    let mut spread = 0.0f64;
    for k in 0..opts.multistart {
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ (0x9e3779b9 + k as u64));
        let mut start = NodalFunction::zeros(&spec.mesh);
        for i in spec.mesh.interior_nodes() {
            start.values[i] = rng.gen_range(0.01..1.0);
        }
        let alt = minimize_polished(energy, gradient, &start, opts, polish_tol)?;
        if alt.classification == Classification::Minimizer {
            spread = spread.max(alt.solution.sup_diff(&main.solution));
        } else {
            warn!("auxiliary multi-start {k} failed to converge");
            spread = f64::INFINITY;
        }
    }
    let flagged = !(spread <= 1e-6);
    if flagged {
        warn!("auxiliary multi-start spread {spread:.3e} exceeds 1e-6");
    }
    Ok(AuxiliaryResult {
        solve: main,
        multistart_spread: spread,
        flagged,
    })
}

/// Euclidean norm of the full (untruncated) energy gradient at u — the
/// solution certificate when <= 1e-6.
pub fn residual_check(u: &NodalFunction, spec: &ProblemSpec) -> Result<f64, EnergyError> {
    Ok(grad_phi_hat(u, spec)?.norm())
}

/// Downward iteration to the minimal positive solution: freeze the reaction
/// above the current solution, minimize the resulting coercive energy from
/// the lower barrier, and repeat until the iterates stop moving.
pub fn minimal_solution(
    spec: &ProblemSpec,
    u_start: &NodalFunction,
    lower_hint: Option<&NodalFunction>,
    opts: &SolveOptions,
) -> Result<SolveResult, SolverError> {
    let mut current = u_start.clone();
    let mut last: Option<SolveResult> = None;
    for round in 0..50 {
        let tp = build_truncation(
            TruncKind::GMu,
            None,
            Some(current.clone()),
            spec,
            Some(spec.lambda),
        )?;
        let energy: &EnergyFn = &|u: &NodalFunction| energy_truncated(u, &tp);
        let gradient: &GradFn = &|u: &NodalFunction| grad_truncated(u, &tp);
        // start from the barrier, not from `current`: the current solution
        // is itself a critical point of the truncated energy
        let start = match lower_hint {
            Some(lo) => lo.clone(),
            None => NodalFunction::constant_interior(&spec.mesh, 0.1),
        };
        let polish_tol = (opts.grad_tol * 1e-3).max(1e-12);
        let res = minimize_polished(energy, gradient, &start, opts, polish_tol)?;
        if res.classification != Classification::Minimizer {
            warn!("minimal-solution round {round} failed to converge");
            break;
        }
        let above = res
            .solution
            .values
            .iter()
            .zip(&current.values)
            .fold(0.0f64, |m, (a, b)| m.max(a - b));
        if above > 1e-8 {
            warn!("minimal-solution iterate exceeds its upper bound by {above:.3e}");
        }
        let moved = res.solution.sup_diff(&current);
        current = res.solution.clone();
        last = Some(res);
        if moved < 1e-8 {
            break;
        }
    }
    match last {
        Some(res) => Ok(res),
        None => {
            // no round converged: report the starting point with a warning
            let residual = residual_check(&current, spec)?;
            let e = crate::energy::energy_phi_hat(&current, spec)?;
            warn!("minimal-solution iteration made no progress; returning the start");
            Ok(SolveResult::finish(
                current,
                e,
                residual,
                0,
                Classification::Failed,
            ))
        }
    }
}

/// Theoretical ridge-radius hint for small lambda.
pub fn ridge_radius_hint(spec: &ProblemSpec) -> f64 {
    let p_plus = spec.exps.p_plus();
    let q_plus = spec.exps.q_plus();
    let r_plus = spec.exps.r_plus();
    (spec.lambda * (p_plus - q_plus) / (r_plus - p_plus)).powf(1.0 / (r_plus - q_plus))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::energy::{energy_phi_hat, operator_a_apply};
    use crate::fields::{ExponentField, Nonlinearity, Potential, ScalarField};
    use crate::mesh::build_mesh;

    fn constant_spec(
        resolution: usize,
        p: f64,
        q: f64,
        r: f64,
        xi: f64,
        f: Nonlinearity,
        lambda: f64,
    ) -> ProblemSpec {
        let mesh = build_mesh(1, resolution).unwrap();
        let exps = ExponentField::new(
            ScalarField::constant(&mesh, p),
            ScalarField::constant(&mesh, q),
            ScalarField::constant(&mesh, r),
        );
        let xi = Potential::new(ScalarField::constant(&mesh, xi)).unwrap();
        ProblemSpec::new(mesh, exps, xi, f, lambda, None).unwrap()
    }

    fn reference_spec(resolution: usize, lambda: f64) -> ProblemSpec {
        constant_spec(resolution, 3.0, 2.0, 4.0, 0.0, Nonlinearity::F1, lambda)
    }

    /// Tridiagonal solve (Thomas algorithm) for the linear oracle.
    fn thomas(a: Vec<f64>, mut b: Vec<f64>, c: Vec<f64>, mut d: Vec<f64>) -> Vec<f64> {
        let n = d.len();
        for i in 1..n {
            let m = a[i] / b[i - 1];
            b[i] -= m * c[i - 1];
            d[i] -= m * d[i - 1];
        }
        let mut x = vec![0.0; n];
        x[n - 1] = d[n - 1] / b[n - 1];
        for i in (0..n - 1).rev() {
            x[i] = (d[i] - c[i] * x[i + 1]) / b[i];
        }
        x
    }

    #[test]
    fn minimize_quadratic_matches_linear_solve() {
        // E(u) = 0.5 int |u'|^2 - int s u with s = 1: discrete solution of
        // the tridiagonal system (stiffness) x = (load).
        let spec = constant_spec(20, 2.0, 1.5, 4.0, 0.0, Nonlinearity::F1, 0.05);
        let mesh = &spec.mesh;
        let n = mesh.num_nodes();
        let h = 1.0 / 20.0;
        let energy: &EnergyFn = &|u: &NodalFunction| {
            let grads = crate::mesh::element_gradient(mesh, u);
            let mut e = 0.0;
            for (k, g) in grads.iter().enumerate() {
                e += 0.5 * mesh.elem_measure(k) * (g[0] * g[0] + g[1] * g[1]);
            }
            for i in 0..n {
                e -= mesh.node_weight(i) * u.values[i];
            }
            Ok(e)
        };
        let gradient: &GradFn = &|u: &NodalFunction| {
            let mut g = operator_a_apply(u, &spec);
            for i in mesh.interior_nodes() {
                g.values[i] -= mesh.node_weight(i);
            }
            Ok(g)
        };
        let res = minimize(
            energy,
            gradient,
            &NodalFunction::zeros(mesh),
            &SolveOptions::default(),
        )
        .unwrap();
        assert_eq!(res.classification, Classification::Minimizer);

        let m = n - 2;
        let oracle = thomas(
            vec![-1.0 / h; m],
            vec![2.0 / h; m],
            vec![-1.0 / h; m],
            vec![h; m],
        );
        for (k, &v) in oracle.iter().enumerate() {
            assert!(
                (res.solution.values[k + 1] - v).abs() < 1e-6,
                "node {} fem {} oracle {v}",
                k + 1,
                res.solution.values[k + 1]
            );
        }
    }

    #[test]
    fn minimize_gamma_negative_energy() {
        let spec = reference_spec(40, 0.05);
        let energy: &EnergyFn = &|u: &NodalFunction| Ok(energy_gamma(u, &spec));
        let gradient: &GradFn = &|u: &NodalFunction| Ok(grad_gamma(u, &spec));
        let start = NodalFunction::constant_interior(&spec.mesh, 0.1);
        let res = minimize(energy, gradient, &start, &SolveOptions::default()).unwrap();
        assert_eq!(res.classification, Classification::Minimizer);
        assert!(res.energy < 0.0, "energy {}", res.energy);
        assert!(res.positive);
        // coercivity spot check: far out the energy exceeds the minimum
        let dir = NodalFunction::from_fn(&spec.mesh, |c| c[0] * (1.0 - c[0]) * 4.0);
        let norm = crate::modular::luxemburg_norm_grad(&dir, &spec.exps.p, &spec.mesh);
        let far = dir.scaled(10.0 / norm);
        assert!(energy_gamma(&far, &spec) > res.energy);
    }

    #[test]
    fn minimize_gmu_respects_upper_bound() {
        let spec = reference_spec(40, 0.05);
        let opts = SolveOptions::default();
        let aux = solve_auxiliary(&spec, &SolveOptions { multistart: 0, ..opts.clone() }).unwrap();
        // an upper barrier comfortably above the lower one
        let ub = NodalFunction::from_fn(&spec.mesh, |c| {
            2.0 * (std::f64::consts::PI * c[0]).sin()
        });
        let ub = crate::mesh::apply_dirichlet(&ub, &spec.mesh);
        let tp = build_truncation(TruncKind::GMu, None, Some(ub.clone()), &spec, Some(0.03))
            .unwrap();
        let energy: &EnergyFn = &|u: &NodalFunction| energy_truncated(u, &tp);
        let gradient: &GradFn = &|u: &NodalFunction| grad_truncated(u, &tp);
        let res = minimize(energy, gradient, &aux.solve.solution, &opts).unwrap();
        assert_eq!(res.classification, Classification::Minimizer);
        for i in 0..spec.mesh.num_nodes() {
            assert!(
                res.solution.values[i] <= ub.values[i] + 1e-8,
                "node {i}: {} > {}",
                res.solution.values[i],
                ub.values[i]
            );
        }
    }

    #[test]
    fn mountain_pass_double_well_saddle() {
        // E(v1, v2) = (v1^2 - 1)^2 + v2^2 on the two interior nodes of a
        // resolution-3 mesh: minima at (±1, 0), saddle at the origin.
        let mesh = build_mesh(1, 3).unwrap();
        let energy: &EnergyFn = &|u: &NodalFunction| {
            let (v1, v2) = (u.values[1], u.values[2]);
            Ok((v1 * v1 - 1.0).powi(2) + v2 * v2 + 0.5)
        };
        let gradient: &GradFn = &|u: &NodalFunction| {
            let (v1, v2) = (u.values[1], u.values[2]);
            let mut g = DualVector::zeros(4);
            g.values[1] = 4.0 * v1 * (v1 * v1 - 1.0);
            g.values[2] = 2.0 * v2;
            Ok(g)
        };
        let mut low = NodalFunction::zeros(&mesh);
        low.values[1] = 1.0;
        let mut far = NodalFunction::zeros(&mesh);
        far.values[1] = -1.0;
        let res = mountain_pass(energy, gradient, &low, &far, &SolveOptions::default()).unwrap();
        assert_eq!(res.classification, Classification::MountainPass);
        assert!(res.solution.values[1].abs() < 1e-6, "v1 {}", res.solution.values[1]);
        assert!(res.solution.values[2].abs() < 1e-6, "v2 {}", res.solution.values[2]);
        assert!((res.energy - 1.5).abs() < 1e-9);
        assert!(res.energy >= 0.5);
    }

    #[test]
    fn far_point_found_for_superlinear_reaction() {
        let spec = reference_spec(32, 0.05);
        let energy: &EnergyFn = &|u: &NodalFunction| energy_phi_hat(u, &spec);
        let dir = crate::mesh::apply_dirichlet(
            &NodalFunction::from_fn(&spec.mesh, |c| (std::f64::consts::PI * c[0]).sin()),
            &spec.mesh,
        );
        let far = find_far_point(energy, &dir).unwrap();
        assert!(energy_phi_hat(&far, &spec).unwrap() < -1.0);
    }

    #[test]
    fn far_point_fails_without_superlinearity() {
        // f = 0: the ray energy t^3 a/3 - lambda t^2 b/2 grows without bound
        let f = Nonlinearity::tabulated(vec![0.0, 1e19], vec![0.0, 0.0]).unwrap();
        let spec = constant_spec(16, 3.0, 2.0, 4.0, 0.0, f, 0.01);
        let energy: &EnergyFn = &|u: &NodalFunction| energy_phi_hat(u, &spec);
        let dir = crate::mesh::apply_dirichlet(
            &NodalFunction::from_fn(&spec.mesh, |c| (std::f64::consts::PI * c[0]).sin()),
            &spec.mesh,
        );
        assert!(matches!(
            find_far_point(energy, &dir),
            Err(SolverError::FarPointUnbounded)
        ));
    }

    #[test]
    fn auxiliary_multistart_agreement_and_monotonicity() {
        let opts = SolveOptions {
            multistart: 6,
            ..SolveOptions::default()
        };
        let mut prev: Option<NodalFunction> = None;
        let mut prev_max = f64::INFINITY;
        for lambda in [1e-3, 1e-2, 1e-1] {
            let spec = reference_spec(50, lambda);
            let aux = solve_auxiliary(&spec, &opts).unwrap();
            assert!(!aux.flagged, "spread {}", aux.multistart_spread);
            assert_eq!(aux.solve.classification, Classification::Minimizer);
            assert!(aux.solve.positive);
            assert!(aux.solve.energy < 0.0);
            let max = aux.solve.solution.max_value();
            // decreasing lambda shrinks the barrier; here lambda increases
            assert!(max > 0.0);
            if let Some(p) = &prev {
                for i in 0..p.values.len() {
                    assert!(
                        p.values[i] <= aux.solve.solution.values[i] + 1e-8,
                        "barrier not monotone at node {i}"
                    );
                }
            }
            let _ = prev_max;
            prev_max = max;
            prev = Some(aux.solve.solution.clone());
        }
        // re-read in increasing order: max values increase with lambda
        let m1 = solve_auxiliary(&reference_spec(50, 1e-3), &opts)
            .unwrap()
            .solve
            .solution
            .max_value();
        let m3 = prev.unwrap().max_value();
        assert!(m1 < m3);
    }

    #[test]
    fn residual_detects_perturbation() {
        let spec = reference_spec(40, 0.05);
        let opts = SolveOptions { multistart: 0, ..SolveOptions::default() };
        let aux = solve_auxiliary(&spec, &opts).unwrap();
        // the auxiliary solution is not a solution of the full problem, but
        // a converged minimizer of gamma has tiny gamma-residual; use the
        // full-problem zero function instead for the exact-critical case
        let zero = NodalFunction::zeros(&spec.mesh);
        assert_eq!(residual_check(&zero, &spec).unwrap(), 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut noisy = aux.solve.solution.clone();
        for i in spec.mesh.interior_nodes() {
            noisy.values[i] += 0.01 * rng.gen_range(-1.0..1.0);
        }
        let g_clean = grad_gamma(&aux.solve.solution, &spec).norm();
        let g_noisy = grad_gamma(&noisy, &spec).norm();
        assert!(g_clean <= 1e-8);
        assert!(g_noisy > 1e-6, "noisy residual {g_noisy}");
    }

    #[test]
    fn minimize_is_deterministic() {
        let spec = reference_spec(30, 0.05);
        let energy: &EnergyFn = &|u: &NodalFunction| Ok(energy_gamma(u, &spec));
        let gradient: &GradFn = &|u: &NodalFunction| Ok(grad_gamma(u, &spec));
        let start = NodalFunction::constant_interior(&spec.mesh, 0.1);
        let opts = SolveOptions::default();
        let a = minimize(energy, gradient, &start, &opts).unwrap();
        let b = minimize(energy, gradient, &start, &opts).unwrap();
        assert_eq!(a.iterations, b.iterations);
        assert_eq!(a.solution.values, b.solution.values);
        assert_eq!(a.energy.to_bits(), b.energy.to_bits());
    }

    #[test]
    fn ridge_radius_formula() {
        let spec = reference_spec(8, 0.05);
        // [lambda (p_+ - q_+)/(r_+ - p_+)]^{1/(r_+ - q_+)} = [0.05]^{1/2}
        let t0 = ridge_radius_hint(&spec);
        assert!((t0 - 0.05f64.sqrt()).abs() < 1e-14);
    }
}
