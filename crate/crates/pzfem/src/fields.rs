//! Problem data: variable exponents, the potential, the nonlinearity, and
//! sample-based certificates for the structural hypotheses on them.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mesh::Mesh;

#[derive(Debug, Error)]
pub enum FieldsError {
    #[error("nodal table has {got} entries, mesh has {expected} nodes")]
    TableLength { expected: usize, got: usize },
    #[error("affine field uses coordinate '{0}' not present in a 1D mesh")]
    BadCoordinate(char),
    #[error("tabulated nonlinearity queried at x = {x} outside table range [0, {max}]")]
    Extrapolation { x: f64, max: f64 },
    #[error("tabulated nonlinearity needs at least two sorted sample points")]
    BadTable,
    #[error("field value {0} is not finite")]
    NonFinite(f64),
    #[error("f2 coefficient must be positive, got {0}")]
    BadCoefficient(f64),
}

/// Declarative form of a spatial field: constant, affine in the
/// coordinates, or a nodal table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum FieldSpec {
    Constant(f64),
    /// c0 + cx*x + cy*y (in 1D the coordinate is named z and maps to cx).
    Affine { c0: f64, cx: f64, cy: f64 },
    Table(Vec<f64>),
}

impl FieldSpec {
    pub fn sample(&self, mesh: &Mesh) -> Result<ScalarField, FieldsError> {
        let eval_at = |c: [f64; 2]| -> f64 {
            match self {
                FieldSpec::Constant(v) => *v,
                FieldSpec::Affine { c0, cx, cy } => c0 + cx * c[0] + cy * c[1],
                FieldSpec::Table(_) => unreachable!(),
            }
        };
        let (nodal, mid) = match self {
            FieldSpec::Table(values) => {
                if values.len() != mesh.num_nodes() {
                    return Err(FieldsError::TableLength {
                        expected: mesh.num_nodes(),
                        got: values.len(),
                    });
                }
                let mid = (0..mesh.num_elements())
                    .map(|e| {
                        let nodes = mesh.elem_nodes(e);
                        if mesh.dimension() == 1 {
                            (values[nodes[0]] + values[nodes[1]]) / 2.0
                        } else {
                            (values[nodes[0]] + values[nodes[1]] + values[nodes[2]]) / 3.0
                        }
                    })
                    .collect();
                (values.clone(), mid)
            }
            _ => {
                if let FieldSpec::Affine { cy, .. } = self {
                    if mesh.dimension() == 1 && *cy != 0.0 {
                        return Err(FieldsError::BadCoordinate('y'));
                    }
                }
                let nodal: Vec<f64> = (0..mesh.num_nodes())
                    .map(|i| eval_at(mesh.coord(i)))
                    .collect();
                let mid: Vec<f64> = (0..mesh.num_elements())
                    .map(|e| eval_at(mesh.elem_mid(e)))
                    .collect();
                (nodal, mid)
            }
        };
        for &v in nodal.iter().chain(mid.iter()) {
            if !v.is_finite() {
                return Err(FieldsError::NonFinite(v));
            }
        }
        Ok(ScalarField::new(nodal, mid))
    }
}

/// A spatial field sampled at mesh nodes and element midpoints.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    pub nodal: Vec<f64>,
    pub mid: Vec<f64>,
    min: f64,
    max: f64,
}

impl ScalarField {
    pub fn new(nodal: Vec<f64>, mid: Vec<f64>) -> Self {
        let mut min = f64::INFINITY;
        let mut max = f64::NEG_INFINITY;
        for &v in nodal.iter().chain(mid.iter()) {
            min = min.min(v);
            max = max.max(v);
        }
        ScalarField { nodal, mid, min, max }
    }

    pub fn constant(mesh: &Mesh, v: f64) -> Self {
        FieldSpec::Constant(v).sample(mesh).expect("constant field")
    }

    pub fn min(&self) -> f64 {
        self.min
    }

    pub fn max(&self) -> f64 {
        self.max
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> ScalarField {
        ScalarField::new(
            self.nodal.iter().map(|&v| f(v)).collect(),
            self.mid.iter().map(|&v| f(v)).collect(),
        )
    }
}

/// The exponent triple p, q, r with derived extrema.
#[derive(Debug, Clone)]
pub struct ExponentField {
    pub p: ScalarField,
    pub q: ScalarField,
    pub r: ScalarField,
}

impl ExponentField {
    pub fn new(p: ScalarField, q: ScalarField, r: ScalarField) -> Self {
        ExponentField { p, q, r }
    }

    pub fn p_minus(&self) -> f64 {
        self.p.min()
    }
    pub fn p_plus(&self) -> f64 {
        self.p.max()
    }
    pub fn q_minus(&self) -> f64 {
        self.q.min()
    }
    pub fn q_plus(&self) -> f64 {
        self.q.max()
    }
    pub fn r_minus(&self) -> f64 {
        self.r.min()
    }
    pub fn r_plus(&self) -> f64 {
        self.r.max()
    }

    /// Sobolev critical exponent p*(z) for dimension N; +inf when p(z) >= N.
    pub fn p_star(p_z: f64, dim: usize) -> f64 {
        let n = dim as f64;
        if p_z < n {
            n * p_z / (n - p_z)
        } else {
            f64::INFINITY
        }
    }
}

/// Bounded, possibly sign-changing potential.
#[derive(Debug, Clone)]
pub struct Potential {
    pub values: ScalarField,
    sup: f64,
}

impl Potential {
    pub fn new(values: ScalarField) -> Result<Self, FieldsError> {
        let sup = values
            .nodal
            .iter()
            .fold(0.0f64, |m, v| m.max(v.abs()));
        if !sup.is_finite() {
            return Err(FieldsError::NonFinite(sup));
        }
        Ok(Potential { values, sup })
    }

    pub fn sup_norm(&self) -> f64 {
        self.sup
    }

    pub fn at_node(&self, i: usize) -> f64 {
        self.values.nodal[i]
    }
}

/// Reaction perturbation f(z,x), zero for x <= 0.
#[derive(Debug, Clone)]
pub enum Nonlinearity {
    /// f1(z,x) = x^{r(z)-1} for x >= 0.
    F1,
    /// f2(z,x) = C x^{r(z)-1} on [0,1], C (x^{p(z)-1} + x^{m(z)-1}) for x > 1.
    F2 { c_hat: f64, m: ScalarField },
    /// Piecewise-linear in x on [0, xs.last()], z-independent.
    Tabulated { xs: Vec<f64>, ys: Vec<f64> },
}

impl Nonlinearity {
    pub fn f2(c_hat: f64, m: ScalarField) -> Result<Self, FieldsError> {
        if !(c_hat > 0.0) {
            return Err(FieldsError::BadCoefficient(c_hat));
        }
        Ok(Nonlinearity::F2 { c_hat, m })
    }

    pub fn tabulated(xs: Vec<f64>, ys: Vec<f64>) -> Result<Self, FieldsError> {
        if xs.len() < 2 || xs.len() != ys.len() || xs[0] != 0.0 {
            return Err(FieldsError::BadTable);
        }
        if xs.windows(2).any(|w| w[1] <= w[0]) {
            return Err(FieldsError::BadTable);
        }
        Ok(Nonlinearity::Tabulated { xs, ys })
    }

    /// f(z,x) at mesh node `node`.
    pub fn eval_f(&self, exps: &ExponentField, node: usize, x: f64) -> Result<f64, FieldsError> {
        if x <= 0.0 {
            return Ok(0.0);
        }
        match self {
            Nonlinearity::F1 => Ok(x.powf(exps.r.nodal[node] - 1.0)),
            Nonlinearity::F2 { c_hat, m } => {
                let p = exps.p.nodal[node];
                let mm = m.nodal[node];
                if x <= 1.0 {
                    let r = exps.r.nodal[node];
                    Ok(c_hat * x.powf(r - 1.0))
                } else {
                    Ok(c_hat * (x.powf(p - 1.0) + x.powf(mm - 1.0)))
                }
            }
            Nonlinearity::Tabulated { xs, ys } => {
                let max = *xs.last().unwrap();
                if x > max {
                    return Err(FieldsError::Extrapolation { x, max });
                }
                let k = xs.partition_point(|&v| v < x).max(1);
                let (x0, x1) = (xs[k - 1], xs[k]);
                let t = (x - x0) / (x1 - x0);
                Ok(ys[k - 1] * (1.0 - t) + ys[k] * t)
            }
        }
    }

    /// F(z,x) = integral of f(z,.) from 0 to x; closed form for built-ins.
    pub fn eval_big_f(
        &self,
        exps: &ExponentField,
        node: usize,
        x: f64,
    ) -> Result<f64, FieldsError> {
        if x <= 0.0 {
            return Ok(0.0);
        }
        match self {
            Nonlinearity::F1 => {
                let r = exps.r.nodal[node];
                Ok(x.powf(r) / r)
            }
            Nonlinearity::F2 { c_hat, m } => {
                let r = exps.r.nodal[node];
                let p = exps.p.nodal[node];
                let mm = m.nodal[node];
                if x <= 1.0 {
                    Ok(c_hat * x.powf(r) / r)
                } else {
                    Ok(c_hat
                        * (1.0 / r
                            + (x.powf(p) - 1.0) / p
                            + (x.powf(mm) - 1.0) / mm))
                }
            }
            Nonlinearity::Tabulated { xs, ys } => {
                let max = *xs.last().unwrap();
                if x > max {
                    return Err(FieldsError::Extrapolation { x, max });
                }
                // Exact integral of the piecewise-linear interpolant.
                let mut acc = 0.0;
                for k in 1..xs.len() {
                    if x <= xs[k - 1] {
                        break;
                    }
                    let hi = x.min(xs[k]);
                    let t = (hi - xs[k - 1]) / (xs[k] - xs[k - 1]);
                    let y_hi = ys[k - 1] * (1.0 - t) + ys[k] * t;
                    acc += 0.5 * (ys[k - 1] + y_hi) * (hi - xs[k - 1]);
                }
                Ok(acc)
            }
        }
    }

    /// e(z,x) = f(z,x) x - p_+ F(z,x), the non-AR superlinearity defect.
    pub fn eval_e(&self, exps: &ExponentField, node: usize, x: f64) -> Result<f64, FieldsError> {
        let p_plus = exps.p_plus();
        Ok(self.eval_f(exps, node, x)? * x - p_plus * self.eval_big_f(exps, node, x)?)
    }
}

/// One entry of a hypothesis-check report; failures are entries, not faults.
#[derive(Debug, Clone, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    /// Smallest observed slack (negative on failure) and where it occurred.
    pub worst_slack: f64,
    pub worst_point: String,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct ValidationReport {
    pub checks: Vec<CheckResult>,
}

impl ValidationReport {
    pub fn push(&mut self, name: &str, slack_points: impl IntoIterator<Item = (f64, String)>) {
        self.push_impl(name, slack_points, false);
    }

    /// Strict inequality: zero slack is a failure.
    pub fn push_strict(
        &mut self,
        name: &str,
        slack_points: impl IntoIterator<Item = (f64, String)>,
    ) {
        self.push_impl(name, slack_points, true);
    }

    fn push_impl(
        &mut self,
        name: &str,
        slack_points: impl IntoIterator<Item = (f64, String)>,
        strict: bool,
    ) {
        let mut worst = (f64::INFINITY, String::from("-"));
        for (slack, at) in slack_points {
            if slack < worst.0 {
                worst = (slack, at);
            }
        }
        self.checks.push(CheckResult {
            name: name.to_string(),
            passed: if strict { worst.0 > 0.0 } else { worst.0 >= 0.0 },
            worst_slack: worst.0,
            worst_point: worst.1,
        });
    }

    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failed(&self) -> Vec<&CheckResult> {
        self.checks.iter().filter(|c| !c.passed).collect()
    }

    pub fn summary(&self) -> String {
        self.checks
            .iter()
            .map(|c| {
                format!(
                    "{:<28} {}  slack {:+.3e} at {}",
                    c.name,
                    if c.passed { "pass" } else { "FAIL" },
                    c.worst_slack,
                    c.worst_point
                )
            })
            .collect::<Vec<_>>()
            .join("\n")
    }
}

/// Check the exponent chain 1 < q_- <= q <= q_+ < p_- <= p <= p_+ and
/// p_+ < r(z) < p*(z) at every sample point.
pub fn check_h0(exps: &ExponentField, potential: &Potential, mesh: &Mesh) -> ValidationReport {
    let mut report = ValidationReport::default();
    let point_label = |i: usize, is_mid: bool| -> String {
        let c = if is_mid { mesh.elem_mid(i) } else { mesh.coord(i) };
        if mesh.dimension() == 1 {
            format!("z={:.4}", c[0])
        } else {
            format!("(x,y)=({:.4},{:.4})", c[0], c[1])
        }
    };
    let all_samples = |field: &ScalarField| -> Vec<(f64, String)> {
        field
            .nodal
            .iter()
            .enumerate()
            .map(|(i, &v)| (v, point_label(i, false)))
            .chain(
                field
                    .mid
                    .iter()
                    .enumerate()
                    .map(|(e, &v)| (v, point_label(e, true))),
            )
            .collect()
    };

    report.push_strict(
        "1 < q_-",
        all_samples(&exps.q).into_iter().map(|(v, at)| (v - 1.0, at)),
    );
    report.push_strict(
        "q_+ < p_-",
        all_samples(&exps.p)
            .into_iter()
            .map(|(v, at)| (v - exps.q_plus(), at)),
    );
    report.push_strict(
        "p_+ < r",
        all_samples(&exps.r)
            .into_iter()
            .map(|(v, at)| (v - exps.p_plus(), at)),
    );
    let dim = mesh.dimension();
    let p_samples = all_samples(&exps.p);
    let r_samples = all_samples(&exps.r);
    report.push_strict(
        "r < p*",
        r_samples
            .into_iter()
            .zip(p_samples)
            .map(|((r, at), (p, _))| {
                let pstar = ExponentField::p_star(p, dim);
                if pstar.is_infinite() {
                    (f64::INFINITY, at)
                } else {
                    (pstar - r, at)
                }
            }),
    );
    report.push(
        "xi bounded",
        [(
            if potential.sup_norm().is_finite() { 1.0 } else { -1.0 },
            "sup-norm".to_string(),
        )],
    );
    report
}

/// Log-spaced default sample grid for the growth certificates: small x for
/// the vanishing-ratio check, large x for the superlinearity checks.
pub fn default_growth_grid(mesh: &Mesh) -> Vec<(usize, f64)> {
    let mut grid = Vec::new();
    let log_space = |lo: f64, hi: f64, n: usize| -> Vec<f64> {
        (0..n)
            .map(|k| lo * (hi / lo).powf(k as f64 / (n - 1) as f64))
            .collect()
    };
    let small = log_space(1e-4, 1e-1, 16);
    let large = log_space(10.0, 1e4, 16);
    let stride = (mesh.num_nodes() / 32).max(1);
    for i in (0..mesh.num_nodes()).step_by(stride) {
        for &x in small.iter().chain(large.iter()) {
            grid.push((i, x));
        }
    }
    grid
}

/// Sample-based certificates for the growth hypotheses on f. These are
/// numerical spot checks of asymptotic conditions, not proofs.
pub fn check_growth_hypotheses(
    nl: &Nonlinearity,
    exps: &ExponentField,
    potential: &Potential,
    grid: &[(usize, f64)],
) -> ValidationReport {
    let mut report = ValidationReport::default();
    let p_plus = exps.p_plus();
    let p_minus = exps.p_minus();
    let c_test = potential.sup_norm() * (p_plus / p_minus - 1.0) + 1e-9;

    let mut nodes: Vec<usize> = grid.iter().map(|&(i, _)| i).collect();
    nodes.sort_unstable();
    nodes.dedup();

    let eval = |node: usize, x: f64| nl.eval_f(exps, node, x).unwrap_or(f64::NAN);
    let eval_e = |node: usize, x: f64| nl.eval_e(exps, node, x).unwrap_or(f64::NAN);

    // f >= 0 over the whole grid (lower bound of H1(i), built-ins have a >= 0).
    report.push(
        "f >= 0",
        grid.iter().map(|&(i, x)| (eval(i, x), format!("node {i}, x={x:.3e}"))),
    );

    // H1(ii): F(z,x)/x^{p_+} grows along the largest samples.
    let mut ii_slacks = Vec::new();
    for &node in &nodes {
        let mut xs: Vec<f64> = grid
            .iter()
            .filter(|&&(i, x)| i == node && x >= 10.0)
            .map(|&(_, x)| x)
            .collect();
        xs.sort_by(|a, b| a.total_cmp(b));
        for w in xs.windows(2) {
            let a = nl.eval_big_f(exps, node, w[0]).unwrap_or(f64::NAN) / w[0].powf(p_plus);
            let b = nl.eval_big_f(exps, node, w[1]).unwrap_or(f64::NAN) / w[1].powf(p_plus);
            ii_slacks.push((b - a, format!("node {node}, x={:.3e}", w[1])));
        }
    }
    report.push("H1(ii) F/x^p+ growing", ii_slacks);

    // H1(iii): central difference of e(z,.) dominates C_test x^{p(z)-1}.
    // Compared in the scale-free ratio de/x^{p(z)-1}, with a 1e-8 allowance
    // for finite-difference noise; the borderline AR-free case e' = 0 with
    // a sign-free potential sits exactly at the threshold and is admitted.
    let mut iii_slacks = Vec::new();
    for &(node, x) in grid.iter().filter(|&&(_, x)| x >= 10.0) {
        let dx = 1e-5 * x;
        let de = (eval_e(node, x + dx) - eval_e(node, x - dx)) / (2.0 * dx);
        let ratio = de / x.powf(exps.p.nodal[node] - 1.0);
        iii_slacks.push((ratio - c_test + 1e-8, format!("node {node}, x={x:.3e}")));
    }
    report.push("H1(iii) e' >= C x^{p-1}", iii_slacks);

    // H1(iv): f(z,x)/x^{p_- - 1} small at the smallest samples.
    let mut iv_slacks = Vec::new();
    for &node in &nodes {
        let x_min = grid
            .iter()
            .filter(|&&(i, _)| i == node)
            .map(|&(_, x)| x)
            .fold(f64::INFINITY, f64::min);
        if x_min.is_finite() && x_min <= 0.1 {
            let ratio = eval(node, x_min) / x_min.powf(p_minus - 1.0);
            iv_slacks.push((0.01 - ratio, format!("node {node}, x={x_min:.3e}")));
        }
    }
    report.push("H1(iv) f/x^{p_- -1} -> 0", iv_slacks);

    // H3(vi): positivity floor away from zero.
    report.push(
        "H3(vi) f >= eta > 0 for x >= 1",
        grid.iter()
            .filter(|&&(_, x)| x >= 1.0)
            .map(|&(i, x)| (eval(i, x) - f64::MIN_POSITIVE, format!("node {i}, x={x:.3e}"))),
    );

    report
}
