//! Independent 1D reference solver: shooting with fixed-step RK4 on the
//! first-order system for (u, w), w = |u'|^{p-2}u'. Constant exponents only.
//! Used to generate ground truth for the finite element solver.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("exponent chain 1 < q < p < r violated: q={q}, p={p}, r={r}")]
    BadExponents { p: f64, q: f64, r: f64 },
    #[error("integration step must be positive and at most 0.1, got {0}")]
    BadStep(f64),
    #[error("slope scan range must be positive and increasing, got ({0}, {1})")]
    BadScanRange(f64, f64),
}

/// Reaction choice with constant exponents.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OracleReaction {
    /// f(x) = x^{r-1}
    F1,
    /// f(x) = C x^{r-1} on [0,1], C (x^{p-1} + x^{m-1}) for x > 1
    F2 { c_hat: f64, m: f64 },
    /// f = 0
    Zero,
}

/// Which boundary-value problem to shoot: the full reaction or the
/// lower-barrier auxiliary problem (|xi| potential, concave term only).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OracleMode {
    Full,
    Auxiliary,
}

#[derive(Debug, Clone)]
pub struct ShootingInstance {
    pub p: f64,
    pub q: f64,
    pub r: f64,
    pub xi: f64,
    pub reaction: OracleReaction,
    pub mode: OracleMode,
    pub lambda: f64,
    /// fixed RK4 step
    pub h: f64,
}

impl ShootingInstance {
    pub fn new(
        p: f64,
        q: f64,
        r: f64,
        xi: f64,
        reaction: OracleReaction,
        mode: OracleMode,
        lambda: f64,
        h: f64,
    ) -> Result<Self, OracleError> {
        if !(1.0 < q && q < p && p < r) {
            return Err(OracleError::BadExponents { p, q, r });
        }
        if !(h > 0.0 && h <= 0.1) {
            return Err(OracleError::BadStep(h));
        }
        Ok(ShootingInstance {
            p,
            q,
            r,
            xi,
            reaction,
            mode,
            lambda,
            h,
        })
    }

    pub fn reference(lambda: f64) -> Self {
        ShootingInstance::new(
            3.0,
            2.0,
            4.0,
            0.0,
            OracleReaction::F1,
            OracleMode::Full,
            lambda,
            1e-4,
        )
        .unwrap()
    }

    fn f(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return 0.0;
        }
        match self.reaction {
            OracleReaction::F1 => x.powf(self.r - 1.0),
            OracleReaction::F2 { c_hat, m } => {
                if x <= 1.0 {
                    c_hat * x.powf(self.r - 1.0)
                } else {
                    c_hat * (x.powf(self.p - 1.0) + x.powf(m - 1.0))
                }
            }
            OracleReaction::Zero => 0.0,
        }
    }

    /// w' as a function of u.
    fn rhs(&self, u: f64) -> f64 {
        let plus = u.max(0.0);
        let signed_p = if u == 0.0 {
            0.0
        } else {
            u.signum() * u.abs().powf(self.p - 1.0)
        };
        match self.mode {
            OracleMode::Full => {
                self.xi * signed_p - self.lambda * plus.powf(self.q - 1.0) - self.f(plus)
            }
            OracleMode::Auxiliary => {
                self.xi.abs() * signed_p - self.lambda * plus.powf(self.q - 1.0)
            }
        }
    }

    /// u' as a function of w: the inverse of w = |u'|^{p-2} u'.
    fn uprime(&self, w: f64) -> f64 {
        if w == 0.0 {
            0.0
        } else {
            w.signum() * w.abs().powf(1.0 / (self.p - 1.0))
        }
    }
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    /// u sampled at z = k h, k = 0..=n
    pub us: Vec<f64>,
    pub h: f64,
    /// u(1), or +inf when the integration blew up
    pub terminal: f64,
    /// first z where u crosses 0 from above, if any
    pub crossing: Option<f64>,
}

impl Trajectory {
    /// Largest dip below zero strictly inside (0,1).
    pub fn interior_dip(&self) -> f64 {
        let n = self.us.len();
        self.us[1..n - 1].iter().fold(0.0f64, |m, &v| m.max(-v))
    }

    /// Resample onto the nodes of a uniform mesh of [0,1].
    pub fn sample_to_resolution(&self, resolution: usize) -> Vec<f64> {
        let n = self.us.len() - 1;
        (0..=resolution)
            .map(|i| {
                let z = i as f64 / resolution as f64;
                let t = z * n as f64;
                let k = (t.floor() as usize).min(n - 1);
                let frac = t - k as f64;
                self.us[k] * (1.0 - frac) + self.us[k + 1] * frac
            })
            .collect()
    }
}

const BLOWUP: f64 = 1e12;

/// Integrate from z = 0 to z = 1 with initial slope s: u(0) = 0,
/// w(0) = |s|^{p-2} s. A downward zero crossing is recorded but the
/// integration continues to z = 1 so the terminal sign stays usable for
/// bracketing. Blow-up is reported as a +inf terminal.
pub fn shoot(inst: &ShootingInstance, s: f64) -> Trajectory {
    let n = (1.0 / inst.h).round() as usize;
    let h = 1.0 / n as f64;
    let mut u = 0.0f64;
    let mut w = if s == 0.0 {
        0.0
    } else {
        s.signum() * s.abs().powf(inst.p - 1.0)
    };
    let mut us = Vec::with_capacity(n + 1);
    us.push(u);
    let mut crossing = None;
    for k in 0..n {
        let (k1u, k1w) = (inst.uprime(w), inst.rhs(u));
        let (k2u, k2w) = (
            inst.uprime(w + 0.5 * h * k1w),
            inst.rhs(u + 0.5 * h * k1u),
        );
        let (k3u, k3w) = (
            inst.uprime(w + 0.5 * h * k2w),
            inst.rhs(u + 0.5 * h * k2u),
        );
        let (k4u, k4w) = (inst.uprime(w + h * k3w), inst.rhs(u + h * k3u));
        let u_new = u + h / 6.0 * (k1u + 2.0 * k2u + 2.0 * k3u + k4u);
        let w_new = w + h / 6.0 * (k1w + 2.0 * k2w + 2.0 * k3w + k4w);
        if crossing.is_none() && u > 0.0 && u_new < 0.0 {
            crossing = Some((k as f64 + u / (u - u_new)) * h);
        }
        u = u_new;
        w = w_new;
        us.push(u);
        if !u.is_finite() || !w.is_finite() || u.abs() > BLOWUP || w.abs() > BLOWUP {
            // pad so the trajectory keeps one value per step
            while us.len() <= n {
                us.push(f64::INFINITY);
            }
            return Trajectory {
                us,
                h,
                terminal: f64::INFINITY,
                crossing,
            };
        }
    }
    Trajectory {
        us,
        h,
        terminal: u,
        crossing,
    }
}

#[derive(Debug, Clone)]
pub struct OracleSolution {
    pub slope: f64,
    pub trajectory: Trajectory,
    pub max_value: f64,
}

/// Scan initial slopes over a log-spaced grid, bisect every sign change of
/// the terminal value to slope tolerance 1e-10, and keep the roots whose
/// trajectories stay positive inside (0,1).
pub fn enumerate_solutions_1d(
    inst: &ShootingInstance,
    s_min: f64,
    s_max: f64,
    count: usize,
) -> Result<Vec<OracleSolution>, OracleError> {
    if !(0.0 < s_min && s_min < s_max) || count < 2 {
        return Err(OracleError::BadScanRange(s_min, s_max));
    }
    let slopes: Vec<f64> = (0..count)
        .map(|k| s_min * (s_max / s_min).powf(k as f64 / (count - 1) as f64))
        .collect();
    let terminal_sign = |t: f64| -> f64 {
        // blow-up counts as positive terminal for bracketing
        if t.is_infinite() {
            1.0
        } else {
            t.signum()
        }
    };
    let mut terminals = Vec::with_capacity(count);
    for &s in &slopes {
        terminals.push(shoot(inst, s).terminal);
    }
    let mut solutions: Vec<OracleSolution> = Vec::new();
    for k in 1..count {
        let (ta, tb) = (terminals[k - 1], terminals[k]);
        if ta == 0.0 {
            continue;
        }
        if terminal_sign(ta) * terminal_sign(tb) < 0.0 {
            let (mut lo, mut hi) = (slopes[k - 1], slopes[k]);
            let mut sign_lo = terminal_sign(ta);
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                let t = shoot(inst, mid).terminal;
                if terminal_sign(t) == sign_lo {
                    lo = mid;
                } else {
                    hi = mid;
                }
                if hi - lo <= 1e-10 * hi.max(1.0) {
                    break;
                }
                let _ = &mut sign_lo;
            }
            let root = 0.5 * (lo + hi);
            let traj = shoot(inst, root);
            if traj.terminal.is_infinite() || traj.interior_dip() > 1e-6 {
                continue;
            }
            let max_value = traj.us.iter().fold(0.0f64, |m, &v| m.max(v));
            if max_value <= 0.0 {
                continue;
            }
            solutions.push(OracleSolution {
                slope: root,
                trajectory: traj,
                max_value,
            });
        }
    }
    Ok(solutions)
}

/// Bisect the existence threshold of the instance family in lambda: the
/// largest lambda at which the slope scan still finds a positive solution.
pub fn oracle_threshold(
    base: &ShootingInstance,
    lambda_lo: f64,
    lambda_hi: f64,
    rel_tol: f64,
    scan_count: usize,
) -> Result<(f64, f64), OracleError> {
    let has_solution = |lambda: f64| -> Result<bool, OracleError> {
        let mut inst = base.clone();
        inst.lambda = lambda;
        // wide slope window: the small branch lives at tiny slopes
        Ok(!enumerate_solutions_1d(&inst, 1e-6, 1e6, scan_count)?.is_empty())
    };
    let mut lo = lambda_lo;
    let mut hi = lambda_hi;
    assert!(has_solution(lo)?, "no solution at the lower bracket edge");
    assert!(!has_solution(hi)?, "solution found at the upper bracket edge");
    while hi - lo > rel_tol * hi {
        let mid = 0.5 * (lo + hi);
        if has_solution(mid)? {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok((lo, hi))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn straight_line_without_reaction() {
        let inst = ShootingInstance::new(
            2.0,
            1.5,
            4.0,
            0.0,
            OracleReaction::Zero,
            OracleMode::Full,
            0.0,
            1e-3,
        )
        .unwrap();
        let traj = shoot(&inst, 1.0);
        assert!((traj.terminal - 1.0).abs() < 1e-12);
        assert!((traj.us[500] - 0.5).abs() < 1e-12);
        assert!(traj.crossing.is_none());
    }

    #[test]
    fn zero_slope_stays_zero() {
        let inst = ShootingInstance::reference(0.05);
        let traj = shoot(&inst, 0.0);
        assert!(traj.us.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn rejects_bad_instances() {
        assert!(ShootingInstance::new(
            2.0,
            2.5,
            4.0,
            0.0,
            OracleReaction::F1,
            OracleMode::Full,
            0.1,
            1e-3
        )
        .is_err());
        assert!(ShootingInstance::new(
            3.0,
            2.0,
            4.0,
            0.0,
            OracleReaction::F1,
            OracleMode::Full,
            0.1,
            0.0
        )
        .is_err());
    }

    #[test]
    fn rk4_order_signature_on_smooth_instance() {
        // p = 2 keeps the system smooth through the peak (u'' = -u^3 at
        // lambda = 0); with p > 2 the peak has a curvature singularity that
        // degrades the observed order, so the signature check runs here.
        let mk = |h: f64| {
            ShootingInstance::new(
                2.0,
                1.5,
                4.0,
                0.0,
                OracleReaction::F1,
                OracleMode::Full,
                0.0,
                h,
            )
            .unwrap()
        };
        // small slope keeps u positive on [0, 1] (no x^+ kink) and the step
        // sizes coarse enough that the h^4 error term is above rounding noise
        let s = 0.3;
        let t1 = shoot(&mk(4e-2), s).terminal;
        let t2 = shoot(&mk(2e-2), s).terminal;
        let t3 = shoot(&mk(1e-2), s).terminal;
        let ratio = (t1 - t2).abs() / (t2 - t3).abs();
        assert!(
            (12.0..=20.0).contains(&ratio),
            "order-4 signature ratio {ratio}"
        );
    }

    #[test]
    fn terminal_sign_changes_give_two_roots_at_small_lambda() {
        let inst = ShootingInstance::new(
            2.0,
            1.5,
            4.0,
            0.0,
            OracleReaction::F1,
            OracleMode::Full,
            0.1,
            1e-3,
        )
        .unwrap();
        // the small solution has a tiny initial slope (the concave time map
        // shrinks with amplitude), so the scan must start well below it
        let sols = enumerate_solutions_1d(&inst, 1e-6, 1e3, 400).unwrap();
        assert!(sols.len() >= 2, "found {} solutions", sols.len());
        for s in &sols {
            assert!(s.trajectory.interior_dip() <= 1e-6);
            assert!(s.max_value > 0.0);
            // verify the boundary condition really is met
            assert!(s.trajectory.terminal.abs() < 1e-5, "terminal {}", s.trajectory.terminal);
        }
        // distinct solutions
        assert!(sols[0].max_value < sols[sols.len() - 1].max_value);
    }

    #[test]
    fn auxiliary_problem_has_one_solution() {
        let mut inst = ShootingInstance::reference(0.05);
        inst.mode = OracleMode::Auxiliary;
        inst.h = 1e-3;
        let sols = enumerate_solutions_1d(&inst, 1e-6, 1e3, 400);
        // widen the scan downward: the auxiliary solution is tiny
        let sols = match sols {
            Ok(s) => s,
            Err(_) => panic!("scan failed"),
        };
        assert_eq!(sols.len(), 1, "expected exactly one auxiliary solution");
    }

    #[test]
    fn no_solutions_far_above_threshold() {
        // the existence threshold for the reference instance sits between
        // lambda = 100 (two solutions) and lambda = 300 (none)
        let mut inst = ShootingInstance::reference(1000.0);
        inst.h = 1e-3;
        let sols = enumerate_solutions_1d(&inst, 1e-6, 1e6, 400).unwrap();
        assert!(sols.is_empty(), "found {} solutions at huge lambda", sols.len());
    }

    #[test]
    fn resampling_matches_grid() {
        let inst = ShootingInstance::new(
            2.0,
            1.5,
            4.0,
            0.0,
            OracleReaction::Zero,
            OracleMode::Full,
            0.0,
            1e-3,
        )
        .unwrap();
        let traj = shoot(&inst, 2.0);
        let sampled = traj.sample_to_resolution(10);
        assert_eq!(sampled.len(), 11);
        for (i, &v) in sampled.iter().enumerate() {
            assert!((v - 2.0 * i as f64 / 10.0).abs() < 1e-10);
        }
    }
}
