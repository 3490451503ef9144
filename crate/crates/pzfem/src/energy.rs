//! The discrete energy functionals and their exact nodal gradients: the
//! quasilinear operator A, the penalized functional phi_hat, the auxiliary
//! functional gamma, and the four truncated functionals used to trap
//! minimizers inside ordered bands.

use thiserror::Error;

use crate::fields::{ExponentField, FieldsError, Nonlinearity, Potential};
use crate::mesh::{Mesh, NodalFunction};

#[derive(Debug, Error)]
pub enum EnergyError {
    #[error("lambda must be positive, got {0}")]
    NonPositiveLambda(f64),
    #[error("penalty theta = {theta} must exceed the potential sup-norm {xi_sup}")]
    ThetaTooSmall { theta: f64, xi_sup: f64 },
    #[error("exponent hypotheses failed:\n{0}")]
    HypothesesFailed(String),
    #[error("truncation kind {0} requires a {1} bound")]
    MissingBound(&'static str, &'static str),
    #[error("truncation bounds not ordered at node {node}: lower {lower} > upper {upper}")]
    BoundsNotOrdered { node: usize, lower: f64, upper: f64 },
    #[error(transparent)]
    Fields(#[from] FieldsError),
}

/// Full problem data: mesh, exponents, potential, reaction, parameter and
/// the penalty used by the negative-part term.
#[derive(Debug, Clone)]
pub struct ProblemSpec {
    pub mesh: Mesh,
    pub exps: ExponentField,
    pub xi: Potential,
    pub f: Nonlinearity,
    pub lambda: f64,
    pub theta: f64,
}

impl ProblemSpec {
    /// Validates the exponent chain and parameter signs; theta defaults to
    /// ||xi||_inf + 1 when not overridden.
    pub fn new(
        mesh: Mesh,
        exps: ExponentField,
        xi: Potential,
        f: Nonlinearity,
        lambda: f64,
        theta: Option<f64>,
    ) -> Result<Self, EnergyError> {
        if !(lambda > 0.0) || !lambda.is_finite() {
            return Err(EnergyError::NonPositiveLambda(lambda));
        }
        let theta = theta.unwrap_or(xi.sup_norm() + 1.0);
        if theta <= xi.sup_norm() {
            return Err(EnergyError::ThetaTooSmall {
                theta,
                xi_sup: xi.sup_norm(),
            });
        }
        let report = crate::fields::check_h0(&exps, &xi, &mesh);
        if !report.all_passed() {
            return Err(EnergyError::HypothesesFailed(report.summary()));
        }
        Ok(ProblemSpec {
            mesh,
            exps,
            xi,
            f,
            lambda,
            theta,
        })
    }

    pub fn with_lambda(&self, lambda: f64) -> Result<Self, EnergyError> {
        if !(lambda > 0.0) || !lambda.is_finite() {
            return Err(EnergyError::NonPositiveLambda(lambda));
        }
        let mut s = self.clone();
        s.lambda = lambda;
        Ok(s)
    }
}

/// Gradient of an energy with respect to nodal values; boundary entries
/// are zero by convention (the zero-trace constraint is built in).
#[derive(Debug, Clone, PartialEq)]
pub struct DualVector {
    pub values: Vec<f64>,
}

impl DualVector {
    pub fn zeros(n: usize) -> Self {
        DualVector { values: vec![0.0; n] }
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn dot(&self, u: &NodalFunction) -> f64 {
        self.values
            .iter()
            .zip(&u.values)
            .map(|(a, b)| a * b)
            .sum()
    }
}

fn zero_boundary(mesh: &Mesh, g: &mut DualVector) {
    for i in 0..mesh.num_nodes() {
        if mesh.is_boundary(i) {
            g.values[i] = 0.0;
        }
    }
}

/// <A(u), phi_i> = sum over elements of measure * |Du|^{p(mid)-2} (Du, Dphi_i).
pub fn operator_a_apply(u: &NodalFunction, spec: &ProblemSpec) -> DualVector {
    let mesh = &spec.mesh;
    let mut g = DualVector::zeros(mesh.num_nodes());
    for e in 0..mesh.num_elements() {
        let nodes = mesh.elem_nodes(e);
        let grads = mesh.elem_grads(e);
        let mut du = [0.0, 0.0];
        for k in 0..3 {
            du[0] += u.values[nodes[k]] * grads[k][0];
            du[1] += u.values[nodes[k]] * grads[k][1];
        }
        let norm = (du[0] * du[0] + du[1] * du[1]).sqrt();
        if norm == 0.0 {
            continue;
        }
        let w = mesh.elem_measure(e) * norm.powf(spec.exps.p.mid[e] - 2.0);
        for k in 0..3 {
            g.values[nodes[k]] += w * (du[0] * grads[k][0] + du[1] * grads[k][1]);
        }
    }
    zero_boundary(mesh, &mut g);
    g
}

/// Integral of (1/p(z))|Du|^{p(z)}: the gradient part shared by every
/// functional here. Its nodal gradient is operator_a_apply.
fn gradient_energy(u: &NodalFunction, spec: &ProblemSpec) -> f64 {
    let mesh = &spec.mesh;
    let grads = crate::mesh::element_gradient(mesh, u);
    grads
        .iter()
        .enumerate()
        .map(|(e, g)| {
            let norm = (g[0] * g[0] + g[1] * g[1]).sqrt();
            let p = spec.exps.p.mid[e];
            mesh.elem_measure(e) / p * norm.powf(p)
        })
        .sum()
}

/// phi_hat(u) = grad part + xi/p |u|^p + theta/p (u^-)^p
///            - lambda/q (u^+)^q - F(z, u^+).
pub fn energy_phi_hat(u: &NodalFunction, spec: &ProblemSpec) -> Result<f64, EnergyError> {
    let mesh = &spec.mesh;
    let mut zero_order = 0.0;
    for i in 0..mesh.num_nodes() {
        let w = mesh.node_weight(i);
        let v = u.values[i];
        let p = spec.exps.p.nodal[i];
        let q = spec.exps.q.nodal[i];
        let plus = v.max(0.0);
        let minus = (-v).max(0.0);
        zero_order += w
            * (spec.xi.at_node(i) / p * v.abs().powf(p) + spec.theta / p * minus.powf(p)
                - spec.lambda / q * plus.powf(q)
                - spec.f.eval_big_f(&spec.exps, i, plus)?);
    }
    Ok(gradient_energy(u, spec) + zero_order)
}

pub fn grad_phi_hat(u: &NodalFunction, spec: &ProblemSpec) -> Result<DualVector, EnergyError> {
    let mesh = &spec.mesh;
    let mut g = operator_a_apply(u, spec);
    for i in 0..mesh.num_nodes() {
        if mesh.is_boundary(i) {
            continue;
        }
        let w = mesh.node_weight(i);
        let v = u.values[i];
        let p = spec.exps.p.nodal[i];
        let q = spec.exps.q.nodal[i];
        let plus = v.max(0.0);
        let minus = (-v).max(0.0);
        g.values[i] += w
            * (spec.xi.at_node(i) * signed_pow(v, p - 1.0) - spec.theta * minus.powf(p - 1.0)
                - spec.lambda * plus.powf(q - 1.0)
                - spec.f.eval_f(&spec.exps, i, plus)?);
    }
    Ok(g)
}

/// |v|^{a-1} sign(v), with 0 at v = 0 (a > 1 everywhere here).
fn signed_pow(v: f64, a: f64) -> f64 {
    if v == 0.0 {
        0.0
    } else {
        v.signum() * v.abs().powf(a)
    }
}

/// gamma(u) = grad part + |xi|/p |u|^p - lambda/q (u^+)^q — the coercive
/// auxiliary functional whose minimizer is the universal lower barrier.
pub fn energy_gamma(u: &NodalFunction, spec: &ProblemSpec) -> f64 {
    let mesh = &spec.mesh;
    let mut zero_order = 0.0;
    for i in 0..mesh.num_nodes() {
        let w = mesh.node_weight(i);
        let v = u.values[i];
        let p = spec.exps.p.nodal[i];
        let q = spec.exps.q.nodal[i];
        zero_order += w
            * (spec.xi.at_node(i).abs() / p * v.abs().powf(p)
                - spec.lambda / q * v.max(0.0).powf(q));
    }
    gradient_energy(u, spec) + zero_order
}

pub fn grad_gamma(u: &NodalFunction, spec: &ProblemSpec) -> DualVector {
    let mesh = &spec.mesh;
    let mut g = operator_a_apply(u, spec);
    for i in 0..mesh.num_nodes() {
        if mesh.is_boundary(i) {
            continue;
        }
        let w = mesh.node_weight(i);
        let v = u.values[i];
        let p = spec.exps.p.nodal[i];
        let q = spec.exps.q.nodal[i];
        g.values[i] += w
            * (spec.xi.at_node(i).abs() * signed_pow(v, p - 1.0)
                - spec.lambda * v.max(0.0).powf(q - 1.0));
    }
    g
}

/// The four band truncations. GMu freezes the full reaction above an upper
/// bound; Beta freezes only the concave term; KLambda freezes outside a
/// two-sided band; KHat freezes below a lower bound only.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TruncKind {
    GMu,
    Beta,
    KLambda,
    KHat,
}

impl TruncKind {
    fn name(self) -> &'static str {
        match self {
            TruncKind::GMu => "g_mu",
            TruncKind::Beta => "beta",
            TruncKind::KLambda => "k_lambda",
            TruncKind::KHat => "k_hat",
        }
    }
}

#[derive(Debug, Clone)]
pub struct TruncatedProblem<'a> {
    pub spec: &'a ProblemSpec,
    pub kind: TruncKind,
    /// mu for GMu; equals spec.lambda for the other kinds.
    pub mu: f64,
    pub lower: Option<NodalFunction>,
    pub upper: Option<NodalFunction>,
}

pub fn build_truncation<'a>(
    kind: TruncKind,
    lower: Option<NodalFunction>,
    upper: Option<NodalFunction>,
    spec: &'a ProblemSpec,
    mu: Option<f64>,
) -> Result<TruncatedProblem<'a>, EnergyError> {
    let need = |present: bool, which: &'static str| {
        if present {
            Ok(())
        } else {
            Err(EnergyError::MissingBound(kind.name(), which))
        }
    };
    match kind {
        TruncKind::GMu | TruncKind::Beta => need(upper.is_some(), "upper")?,
        TruncKind::KLambda => {
            need(lower.is_some(), "lower")?;
            need(upper.is_some(), "upper")?;
        }
        TruncKind::KHat => need(lower.is_some(), "lower")?,
    }
    if let (Some(lo), Some(hi)) = (&lower, &upper) {
        for i in 0..lo.values.len() {
            if lo.values[i] > hi.values[i] {
                return Err(EnergyError::BoundsNotOrdered {
                    node: i,
                    lower: lo.values[i],
                    upper: hi.values[i],
                });
            }
        }
    }
    Ok(TruncatedProblem {
        spec,
        kind,
        mu: mu.unwrap_or(spec.lambda),
        lower,
        upper,
    })
}

impl TruncatedProblem<'_> {
    fn with_theta(&self) -> bool {
        !matches!(self.kind, TruncKind::Beta)
    }

    /// Untruncated reaction at x >= 0: mu x^{q-1} [+ f + theta x^{p-1}].
    fn base_reaction(&self, i: usize, x: f64) -> Result<f64, EnergyError> {
        let s = self.spec;
        let q = s.exps.q.nodal[i];
        let mut v = self.mu * x.powf(q - 1.0);
        if self.with_theta() {
            let p = s.exps.p.nodal[i];
            v += s.f.eval_f(&s.exps, i, x)? + s.theta * x.powf(p - 1.0);
        }
        Ok(v)
    }

    /// Integral of base_reaction from 0 to x >= 0, in closed form.
    fn base_primitive(&self, i: usize, x: f64) -> Result<f64, EnergyError> {
        let s = self.spec;
        let q = s.exps.q.nodal[i];
        let mut v = self.mu / q * x.powf(q);
        if self.with_theta() {
            let p = s.exps.p.nodal[i];
            v += s.f.eval_big_f(&s.exps, i, x)? + s.theta / p * x.powf(p);
        }
        Ok(v)
    }

    /// Truncated reaction at node i. Below a lower bound the reaction is
    /// frozen at the bound value (for all x, including negatives); kinds
    /// without a lower bound use x^+ instead.
    pub fn reaction(&self, i: usize, x: f64) -> Result<f64, EnergyError> {
        if let Some(lo) = &self.lower {
            if x < lo.values[i] {
                return self.base_reaction(i, lo.values[i]);
            }
        }
        if let Some(hi) = &self.upper {
            if x > hi.values[i] {
                return self.base_reaction(i, hi.values[i]);
            }
        }
        self.base_reaction(i, x.max(0.0))
    }

    /// Integral of the truncated reaction from 0 to x, branchwise closed
    /// form (frozen branches integrate to affine pieces).
    pub fn primitive(&self, i: usize, x: f64) -> Result<f64, EnergyError> {
        if let Some(lo) = &self.lower {
            let lb = lo.values[i];
            let k_lb = self.base_reaction(i, lb)?;
            if x <= lb {
                // reaction constant k_lb on the whole ray below lb
                return Ok(k_lb * x);
            }
            let below = k_lb * lb;
            if let Some(hi) = &self.upper {
                let ub = hi.values[i];
                if x > ub {
                    let mid = self.base_primitive(i, ub)? - self.base_primitive(i, lb)?;
                    return Ok(below + mid + self.base_reaction(i, ub)? * (x - ub));
                }
            }
            return Ok(below + self.base_primitive(i, x)? - self.base_primitive(i, lb)?);
        }
        // no lower bound: reaction vanishes for x <= 0
        if x <= 0.0 {
            return Ok(0.0);
        }
        if let Some(hi) = &self.upper {
            let ub = hi.values[i];
            if x > ub {
                return Ok(self.base_primitive(i, ub)?
                    + self.base_reaction(i, ub)? * (x - ub));
            }
        }
        self.base_primitive(i, x)
    }

    /// Coefficient of the |u|^{p(z)}/p(z) term on the left side.
    fn zero_coeff(&self, i: usize) -> f64 {
        if self.with_theta() {
            self.spec.theta + self.spec.xi.at_node(i)
        } else {
            self.spec.xi.at_node(i).abs()
        }
    }
}

pub fn energy_truncated(u: &NodalFunction, tp: &TruncatedProblem) -> Result<f64, EnergyError> {
    let spec = tp.spec;
    let mesh = &spec.mesh;
    let mut zero_order = 0.0;
    for i in 0..mesh.num_nodes() {
        let w = mesh.node_weight(i);
        let v = u.values[i];
        let p = spec.exps.p.nodal[i];
        zero_order += w * (tp.zero_coeff(i) / p * v.abs().powf(p) - tp.primitive(i, v)?);
    }
    Ok(gradient_energy(u, spec) + zero_order)
}

pub fn grad_truncated(u: &NodalFunction, tp: &TruncatedProblem) -> Result<DualVector, EnergyError> {
    let spec = tp.spec;
    let mesh = &spec.mesh;
    let mut g = operator_a_apply(u, spec);
    for i in 0..mesh.num_nodes() {
        if mesh.is_boundary(i) {
            continue;
        }
        let w = mesh.node_weight(i);
        let v = u.values[i];
        let p = spec.exps.p.nodal[i];
        g.values[i] += w * (tp.zero_coeff(i) * signed_pow(v, p - 1.0) - tp.reaction(i, v)?);
    }
    Ok(g)
}

/// Max relative error between an analytic gradient and central finite
/// differences of the energy, over interior nodes. Used by the property
/// suites; eps is the nodal perturbation size.
pub fn fd_gradient_error(
    energy: &dyn Fn(&NodalFunction) -> f64,
    grad: &DualVector,
    u: &NodalFunction,
    mesh: &Mesh,
    eps: f64,
) -> f64 {
    let scale = grad
        .values
        .iter()
        .fold(0.0f64, |m, v| m.max(v.abs()))
        .max(1e-12);
    let mut worst = 0.0f64;
    let mut probe = u.clone();
    for i in mesh.interior_nodes() {
        let v = u.values[i];
        probe.values[i] = v + eps;
        let e_plus = energy(&probe);
        probe.values[i] = v - eps;
        let e_minus = energy(&probe);
        probe.values[i] = v;
        let fd = (e_plus - e_minus) / (2.0 * eps);
        worst = worst.max((fd - grad.values[i]).abs() / scale);
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::{FieldSpec, ScalarField};
    use crate::mesh::build_mesh;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn reference_spec(resolution: usize, lambda: f64) -> ProblemSpec {
        let mesh = build_mesh(1, resolution).unwrap();
        let exps = ExponentField::new(
            ScalarField::constant(&mesh, 3.0),
            ScalarField::constant(&mesh, 2.0),
            ScalarField::constant(&mesh, 4.0),
        );
        let xi = Potential::new(ScalarField::constant(&mesh, 0.0)).unwrap();
        ProblemSpec::new(mesh, exps, xi, Nonlinearity::F1, lambda, None).unwrap()
    }

    fn signed_xi_spec(resolution: usize, lambda: f64) -> ProblemSpec {
        let mesh = build_mesh(1, resolution).unwrap();
        let exps = ExponentField::new(
            ScalarField::constant(&mesh, 3.0),
            ScalarField::constant(&mesh, 2.0),
            ScalarField::constant(&mesh, 4.0),
        );
        let xi_vals: Vec<f64> = (0..mesh.num_nodes())
            .map(|i| 0.5 * (2.0 * std::f64::consts::PI * mesh.coord(i)[0]).cos())
            .collect();
        let xi = Potential::new(FieldSpec::Table(xi_vals).sample(&mesh).unwrap()).unwrap();
        ProblemSpec::new(mesh, exps, xi, Nonlinearity::F1, lambda, None).unwrap()
    }

    /// Random zero-trace function with values kept away from the reaction
    /// kinks at 0 and (when given) the truncation bounds.
    fn random_smooth_point(
        mesh: &Mesh,
        rng: &mut ChaCha8Rng,
        avoid: &[&NodalFunction],
    ) -> NodalFunction {
        let mut u = NodalFunction::zeros(mesh);
        for i in mesh.interior_nodes() {
            let mut v: f64 = rng.gen_range(-1.5..1.5);
            if v.abs() < 0.05 {
                v += 0.1 * v.signum().max(1.0);
            }
            for b in avoid {
                if (v - b.values[i]).abs() < 0.01 {
                    v += 0.02;
                }
            }
            u.values[i] = v;
        }
        u
    }

    #[test]
    fn spec_validation() {
        let spec = reference_spec(8, 0.05);
        assert!((spec.theta - 1.0).abs() < 1e-15); // ||xi|| + 1 with xi = 0
        let mesh = build_mesh(1, 8).unwrap();
        let bad = ExponentField::new(
            ScalarField::constant(&mesh, 3.0),
            ScalarField::constant(&mesh, 3.5),
            ScalarField::constant(&mesh, 4.0),
        );
        let xi = Potential::new(ScalarField::constant(&mesh, 0.0)).unwrap();
        assert!(matches!(
            ProblemSpec::new(mesh.clone(), bad, xi.clone(), Nonlinearity::F1, 0.05, None),
            Err(EnergyError::HypothesesFailed(_))
        ));
        let good = ExponentField::new(
            ScalarField::constant(&mesh, 3.0),
            ScalarField::constant(&mesh, 2.0),
            ScalarField::constant(&mesh, 4.0),
        );
        assert!(matches!(
            ProblemSpec::new(
                mesh.clone(),
                good.clone(),
                xi.clone(),
                Nonlinearity::F1,
                -1.0,
                None
            ),
            Err(EnergyError::NonPositiveLambda(_))
        ));
        assert!(matches!(
            ProblemSpec::new(mesh, good, xi, Nonlinearity::F1, 0.05, Some(-0.5)),
            Err(EnergyError::ThetaTooSmall { .. })
        ));
    }

    #[test]
    fn operator_a_zero_and_stencil() {
        let spec = {
            let mesh = build_mesh(1, 4).unwrap();
            let exps = ExponentField::new(
                ScalarField::constant(&mesh, 2.0),
                ScalarField::constant(&mesh, 1.5),
                ScalarField::constant(&mesh, 4.0),
            );
            let xi = Potential::new(ScalarField::constant(&mesh, 0.0)).unwrap();
            ProblemSpec::new(mesh, exps, xi, Nonlinearity::F1, 0.05, None).unwrap()
        };
        let zero = NodalFunction::zeros(&spec.mesh);
        assert!(operator_a_apply(&zero, &spec).norm() == 0.0);

        // p = 2: A is the standard stiffness matrix; hat at node 2 gives the
        // second-difference stencil (-1, 2, -1)/h at nodes 1, 2, 3.
        let mut hat = NodalFunction::zeros(&spec.mesh);
        hat.values[2] = 1.0;
        let g = operator_a_apply(&hat, &spec);
        let h = 0.25;
        assert!((g.values[1] + 1.0 / h).abs() < 1e-12);
        assert!((g.values[2] - 2.0 / h).abs() < 1e-12);
        assert!((g.values[3] + 1.0 / h).abs() < 1e-12);
        assert_eq!(g.values[0], 0.0);
        assert_eq!(g.values[4], 0.0);
    }

    #[test]
    fn operator_a_monotone() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for dim in [1usize, 2] {
            let mesh = build_mesh(dim, if dim == 1 { 20 } else { 6 }).unwrap();
            let exps = ExponentField::new(
                FieldSpec::Affine { c0: 2.2, cx: 0.6, cy: 0.0 }.sample(&mesh).unwrap(),
                ScalarField::constant(&mesh, 1.5),
                ScalarField::constant(&mesh, 4.0),
            );
            let xi = Potential::new(ScalarField::constant(&mesh, 0.0)).unwrap();
            let spec = ProblemSpec::new(mesh, exps, xi, Nonlinearity::F1, 0.05, None).unwrap();
            for _ in 0..30 {
                let u = NodalFunction::random_zero_trace(&spec.mesh, &mut rng);
                let v = NodalFunction::random_zero_trace(&spec.mesh, &mut rng);
                let du = u.axpy(-1.0, &v);
                let gap = operator_a_apply(&u, &spec).dot(&du)
                    - operator_a_apply(&v, &spec).dot(&du);
                assert!(gap >= -1e-12, "monotonicity gap {gap}");
            }
        }
    }

    #[test]
    fn phi_hat_at_zero_and_nonpositive() {
        let spec = signed_xi_spec(16, 0.05);
        let zero = NodalFunction::zeros(&spec.mesh);
        assert_eq!(energy_phi_hat(&zero, &spec).unwrap(), 0.0);
        assert_eq!(grad_phi_hat(&zero, &spec).unwrap().norm(), 0.0);

        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..10 {
            let mut u = NodalFunction::random_zero_trace(&spec.mesh, &mut rng);
            for v in &mut u.values {
                *v = -v.abs(); // u <= 0
            }
            let e = energy_phi_hat(&u, &spec).unwrap();
            assert!(e >= 0.0, "energy {e} negative for nonpositive u");
        }
    }

    #[test]
    fn phi_hat_unbounded_below_along_positive_ray() {
        let spec = reference_spec(32, 0.05);
        let dir = NodalFunction::from_fn(&spec.mesh, |c| c[0] * (1.0 - c[0]) * 4.0);
        let e1 = energy_phi_hat(&dir, &spec).unwrap();
        let e1000 = energy_phi_hat(&dir.scaled(1000.0), &spec).unwrap();
        assert!(e1000 < e1 && e1000 < -1.0, "e1 {e1}, e1000 {e1000}");
    }

    #[test]
    fn gamma_at_zero() {
        let spec = signed_xi_spec(16, 0.05);
        let zero = NodalFunction::zeros(&spec.mesh);
        assert_eq!(energy_gamma(&zero, &spec), 0.0);
        assert_eq!(grad_gamma(&zero, &spec).norm(), 0.0);
    }

    #[test]
    fn fd_gradient_phi_hat_and_gamma() {
        let spec = signed_xi_spec(16, 0.05);
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..20 {
            let u = random_smooth_point(&spec.mesh, &mut rng, &[]);
            let g = grad_phi_hat(&u, &spec).unwrap();
            let err = fd_gradient_error(
                &|v| energy_phi_hat(v, &spec).unwrap(),
                &g,
                &u,
                &spec.mesh,
                1e-6,
            );
            assert!(err < 1e-6, "phi_hat fd error {err}");

            let gg = grad_gamma(&u, &spec);
            let err_g = fd_gradient_error(
                &|v| energy_gamma(v, &spec),
                &gg,
                &u,
                &spec.mesh,
                1e-6,
            );
            assert!(err_g < 1e-6, "gamma fd error {err_g}");
        }
    }

    fn band_bounds(mesh: &Mesh) -> (NodalFunction, NodalFunction) {
        let mut lo = NodalFunction::from_fn(mesh, |c| {
            0.3 + 0.2 * (std::f64::consts::PI * c[0]).sin()
        });
        let mut hi = NodalFunction::from_fn(mesh, |c| {
            1.0 + 0.3 * (std::f64::consts::PI * c[0]).sin()
        });
        crate::mesh::apply_dirichlet_in_place(&mut lo, mesh);
        crate::mesh::apply_dirichlet_in_place(&mut hi, mesh);
        // interior-positive bounds as produced by prior solves
        for i in mesh.interior_nodes() {
            assert!(lo.values[i] > 0.0 && lo.values[i] < hi.values[i]);
        }
        (lo, hi)
    }

    #[test]
    fn truncation_construction_errors() {
        let spec = signed_xi_spec(8, 0.05);
        let (lo, hi) = band_bounds(&spec.mesh);
        assert!(matches!(
            build_truncation(TruncKind::GMu, None, None, &spec, Some(0.02)),
            Err(EnergyError::MissingBound(_, "upper"))
        ));
        assert!(matches!(
            build_truncation(TruncKind::KHat, None, None, &spec, None),
            Err(EnergyError::MissingBound(_, "lower"))
        ));
        assert!(matches!(
            build_truncation(TruncKind::KLambda, Some(hi), Some(lo), &spec, None),
            Err(EnergyError::BoundsNotOrdered { .. })
        ));
    }

    #[test]
    fn truncation_branch_values() {
        let spec = signed_xi_spec(8, 0.05);
        let (lo, hi) = band_bounds(&spec.mesh);
        let i = 3; // interior node
        let gmu =
            build_truncation(TruncKind::GMu, None, Some(hi.clone()), &spec, Some(0.02)).unwrap();
        let ub = hi.values[i];
        // frozen above the upper bound at the bound's reaction value
        assert_eq!(
            gmu.reaction(i, ub + 5.0).unwrap(),
            gmu.reaction(i, ub).unwrap()
        );
        // x^+ convention below zero
        assert_eq!(gmu.reaction(i, -2.0).unwrap(), 0.0);

        let khat = build_truncation(TruncKind::KHat, Some(lo.clone()), None, &spec, None).unwrap();
        let lb = lo.values[i];
        // frozen below the lower bound, even for negative x
        assert_eq!(
            khat.reaction(i, lb - 10.0).unwrap(),
            khat.reaction(i, lb).unwrap()
        );
        assert!(khat.reaction(i, -1.0).unwrap() > 0.0);

        // middle band of k_lambda agrees with the untruncated reaction
        let kl = build_truncation(
            TruncKind::KLambda,
            Some(lo.clone()),
            Some(hi.clone()),
            &spec,
            None,
        )
        .unwrap();
        let x = 0.5 * (lo.values[i] + hi.values[i]);
        let p = spec.exps.p.nodal[i];
        let q = spec.exps.q.nodal[i];
        let plain = spec.lambda * x.powf(q - 1.0)
            + spec.f.eval_f(&spec.exps, i, x).unwrap()
            + spec.theta * x.powf(p - 1.0);
        assert!((kl.reaction(i, x).unwrap() - plain).abs() < 1e-14);
        // frozen above u_eta
        assert_eq!(
            kl.reaction(i, hi.values[i] + 1.0).unwrap(),
            kl.reaction(i, hi.values[i]).unwrap()
        );

        let beta =
            build_truncation(TruncKind::Beta, None, Some(hi.clone()), &spec, None).unwrap();
        // beta carries only the concave term
        assert!(
            (beta.reaction(i, x).unwrap() - spec.lambda * x.powf(q - 1.0)).abs() < 1e-14
        );
        assert_eq!(
            beta.reaction(i, ub + 3.0).unwrap(),
            beta.reaction(i, ub).unwrap()
        );
    }

    #[test]
    fn fd_gradient_all_truncations() {
        let spec = signed_xi_spec(12, 0.05);
        let (lo, hi) = band_bounds(&spec.mesh);
        let builds: Vec<TruncatedProblem> = vec![
            build_truncation(TruncKind::GMu, None, Some(hi.clone()), &spec, Some(0.02)).unwrap(),
            build_truncation(TruncKind::Beta, None, Some(hi.clone()), &spec, None).unwrap(),
            build_truncation(
                TruncKind::KLambda,
                Some(lo.clone()),
                Some(hi.clone()),
                &spec,
                None,
            )
            .unwrap(),
            build_truncation(TruncKind::KHat, Some(lo.clone()), None, &spec, None).unwrap(),
        ];
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        for tp in &builds {
            for _ in 0..20 {
                let u = random_smooth_point(&spec.mesh, &mut rng, &[&lo, &hi]);
                let g = grad_truncated(&u, tp).unwrap();
                let err = fd_gradient_error(
                    &|v| energy_truncated(v, tp).unwrap(),
                    &g,
                    &u,
                    &spec.mesh,
                    1e-6,
                );
                assert!(err < 1e-6, "{:?} fd error {err}", tp.kind);
            }
        }
    }

    #[test]
    fn truncated_energies_coercive_surrogate() {
        let spec = signed_xi_spec(12, 0.05);
        let (lo, hi) = band_bounds(&spec.mesh);
        let builds: Vec<TruncatedProblem> = vec![
            build_truncation(TruncKind::GMu, None, Some(hi.clone()), &spec, Some(0.02)).unwrap(),
            build_truncation(
                TruncKind::KLambda,
                Some(lo.clone()),
                Some(hi.clone()),
                &spec,
                None,
            )
            .unwrap(),
            build_truncation(TruncKind::KHat, Some(lo.clone()), None, &spec, None).unwrap(),
        ];
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        for tp in &builds {
            for _ in 0..5 {
                let dir = NodalFunction::random_zero_trace(&spec.mesh, &mut rng);
                let norm = crate::modular::luxemburg_norm_grad(&dir, &spec.exps.p, &spec.mesh);
                let unit = dir.scaled(1.0 / norm);
                let mut prev = f64::NEG_INFINITY;
                for radius in [1.0, 10.0, 100.0] {
                    let e = energy_truncated(&unit.scaled(radius), tp).unwrap();
                    assert!(e > prev, "{:?}: energy not growing at R = {radius}", tp.kind);
                    prev = e;
                }
            }
        }
    }

    #[test]
    fn tau_hat_matches_phi_hat_above_the_barrier() {
        // gradients agree on functions strictly above the lower bound
        let spec = signed_xi_spec(12, 0.05);
        let (lo, _) = band_bounds(&spec.mesh);
        let khat = build_truncation(TruncKind::KHat, Some(lo.clone()), None, &spec, None).unwrap();
        let mut above = lo.clone();
        for i in spec.mesh.interior_nodes() {
            above.values[i] += 0.2 + 0.1 * (i as f64 % 3.0);
        }
        let g_phi = grad_phi_hat(&above, &spec).unwrap();
        let g_tau = grad_truncated(&above, &khat).unwrap();
        let diff: f64 = g_phi
            .values
            .iter()
            .zip(&g_tau.values)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()));
        assert!(diff < 1e-13, "gradient mismatch {diff}");
    }
}
