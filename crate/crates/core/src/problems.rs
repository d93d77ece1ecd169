//! Problem data for the two quartic programs: quadratic forms, the
//! unconstrained problem `min q0(x) + q1(x)^2` (`qp`), the constrained problem
//! `min q1(x)^2 s.t. q2(x) <= 0` (`qq`), their Lagrangians, dual-function
//! evaluation, and the on-disk instance format.
//!
//! Instances are immutable after construction; every evaluation here is pure.

use nalgebra::DVector;

use crate::symlin::{self, packed_len, SymMatrix};
use crate::{fmt_f64, Error, Result};

/// A quadratic form `q(x) = x'Ax + 2b'x + c` with symmetric `A`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticForm {
    pub a: SymMatrix,
    pub b: DVector<f64>,
    pub c: f64,
}

impl QuadraticForm {
    /// Builds a form after checking dimensions and finiteness.
    pub fn new(a: SymMatrix, b: DVector<f64>, c: f64) -> Result<Self> {
        if a.n() != b.len() {
            return Err(Error::DimensionMismatch(format!(
                "quadratic form has {}x{} matrix but length-{} linear term",
                a.n(),
                a.n(),
                b.len()
            )));
        }
        if !c.is_finite() || b.iter().any(|v| !v.is_finite()) {
            return Err(Error::Invalid(
                "quadratic form coefficients must be finite".into(),
            ));
        }
        Ok(QuadraticForm { a, b, c })
    }

    /// The identically-zero form in dimension `n`.
    pub fn zero(n: usize) -> Self {
        QuadraticForm {
            a: SymMatrix::zeros(n),
            b: DVector::zeros(n),
            c: 0.0,
        }
    }

    pub fn n(&self) -> usize {
        self.a.n()
    }

    /// `x'Ax + 2b'x + c`. The dimension is a construction-time invariant, so
    /// this hot-path method asserts; use [`qform_eval`] for a checked call.
    pub fn eval(&self, x: &DVector<f64>) -> f64 {
        assert_eq!(x.len(), self.n(), "quadratic form evaluated at wrong dimension");
        self.a.quad_form(x) + 2.0 * self.b.dot(x) + self.c
    }

    /// Gradient `2(Ax + b)`.
    pub fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        assert_eq!(x.len(), self.n(), "quadratic form gradient at wrong dimension");
        2.0 * (self.a.mat_vec(x) + &self.b)
    }
}

/// Checked evaluation of a quadratic form.
pub fn qform_eval(q: &QuadraticForm, x: &DVector<f64>) -> Result<f64> {
    if x.len() != q.n() {
        return Err(Error::DimensionMismatch(format!(
            "form dimension {} but point dimension {}",
            q.n(),
            x.len()
        )));
    }
    Ok(q.eval(x))
}

/// The symmetric `(n+1) x (n+1)` bordered matrix `[[A, b], [b', c]]` of a
/// quadratic form, so that `q(x) = (x;1)' M (x;1)`.
pub fn bordered_matrix(q: &QuadraticForm) -> SymMatrix {
    let n = q.n();
    let mut m = SymMatrix::zeros(n + 1);
    for i in 0..n {
        for j in 0..=i {
            m.set(i, j, q.a.get(i, j));
        }
        m.set(n, i, q.b[i]);
    }
    m.set(n, n, q.c);
    m
}

/// Unconstrained quartic instance `min_x q0(x) + q1(x)^2`.
///
/// Generator-produced instances record `witness_alpha`, an `alpha` with
/// `A0 + alpha*A1` positive semidefinite (the coercivity assumption the dual
/// construction rests on).
#[derive(Debug, Clone, PartialEq)]
pub struct QpInstance {
    pub q0: QuadraticForm,
    pub q1: QuadraticForm,
    pub witness_alpha: Option<f64>,
}

impl QpInstance {
    pub fn new(q0: QuadraticForm, q1: QuadraticForm, witness_alpha: Option<f64>) -> Result<Self> {
        if q0.n() != q1.n() {
            return Err(Error::DimensionMismatch(format!(
                "q0 has dimension {} but q1 has dimension {}",
                q0.n(),
                q1.n()
            )));
        }
        Ok(QpInstance { q0, q1, witness_alpha })
    }

    pub fn n(&self) -> usize {
        self.q0.n()
    }

    /// The dual matrix pencil `A0 + sigma*A1`.
    pub fn pencil(&self, sigma: f64) -> SymMatrix {
        self.q0.a.add_scaled(sigma, &self.q1.a)
    }
}

/// Constrained quartic instance `min_x q1(x)^2 s.t. q2(x) <= 0`.
///
/// Generator-produced instances record a Slater point with `q2 < 0` strictly.
#[derive(Debug, Clone, PartialEq)]
pub struct QqInstance {
    pub q1: QuadraticForm,
    pub q2: QuadraticForm,
    pub slater_point: Option<DVector<f64>>,
}

impl QqInstance {
    pub fn new(
        q1: QuadraticForm,
        q2: QuadraticForm,
        slater_point: Option<DVector<f64>>,
    ) -> Result<Self> {
        if q1.n() != q2.n() {
            return Err(Error::DimensionMismatch(format!(
                "q1 has dimension {} but q2 has dimension {}",
                q1.n(),
                q2.n()
            )));
        }
        if let Some(p) = &slater_point {
            if p.len() != q1.n() {
                return Err(Error::DimensionMismatch(format!(
                    "slater point has dimension {} but instance has dimension {}",
                    p.len(),
                    q1.n()
                )));
            }
        }
        Ok(QqInstance { q1, q2, slater_point })
    }

    pub fn n(&self) -> usize {
        self.q1.n()
    }

    /// The dual matrix pencil `sigma*A1 + lambda*A2`.
    pub fn pencil(&self, lambda: f64, sigma: f64) -> SymMatrix {
        self.q1.a.scale(sigma).add_scaled(lambda, &self.q2.a)
    }
}

/// `q0(x) + q1(x)^2`.
pub fn f_qp(inst: &QpInstance, x: &DVector<f64>) -> Result<f64> {
    let q1 = qform_eval(&inst.q1, x)?;
    Ok(qform_eval(&inst.q0, x)? + q1 * q1)
}

/// `q1(x)^2`.
pub fn f_qq(inst: &QqInstance, x: &DVector<f64>) -> Result<f64> {
    let q1 = qform_eval(&inst.q1, x)?;
    Ok(q1 * q1)
}

/// The qp Lagrangian `q0(x) + sigma*q1(x) - sigma^2/4`.
///
/// For every `(x, sigma)` this lower-bounds `f_qp`, with equality exactly at
/// `sigma = 2*q1(x)` (the square completes: `f_qp - L = (q1(x) - sigma/2)^2`).
pub fn lagrangian_qp(inst: &QpInstance, x: &DVector<f64>, sigma: f64) -> Result<f64> {
    Ok(qform_eval(&inst.q0, x)? + sigma * qform_eval(&inst.q1, x)? - 0.25 * sigma * sigma)
}

/// The qq Lagrangian `sigma*q1(x) + lambda*q2(x) - sigma^2/4`, `lambda >= 0`.
pub fn lagrangian_qq(
    inst: &QqInstance,
    x: &DVector<f64>,
    lambda: f64,
    sigma: f64,
) -> Result<f64> {
    if lambda < 0.0 {
        return Err(Error::Domain(format!(
            "constraint multiplier must be nonnegative, got lambda = {lambda}"
        )));
    }
    Ok(sigma * qform_eval(&inst.q1, x)? + lambda * qform_eval(&inst.q2, x)?
        - 0.25 * sigma * sigma)
}

/// Scaled absolute tolerance for membership of a pencil in the PSD cone.
pub fn cone_tolerance(pencil: &SymMatrix) -> f64 {
    1e-9 * (1.0 + pencil.frobenius_norm())
}

/// Evaluates the qp dual function's Schur-complement term at `sigma`.
///
/// Returns `(gamma, feasible)` with
/// `gamma = c0 + sigma*c1 - v' (A0 + sigma*A1)^+ v`, `v = b0 + sigma*b1`.
/// `feasible` holds iff the pencil is PSD within [`cone_tolerance`] and `v`
/// lies in its numerical range; the dual objective at a feasible `sigma` is
/// `gamma - sigma^2/4`, and infeasibility is a flag rather than an error
/// (the dual takes value minus infinity there).
pub fn dual_gamma_qp(inst: &QpInstance, sigma: f64) -> Result<(f64, bool)> {
    let pencil = inst.pencil(sigma);
    let eig = symlin::eig_sym(&pencil)?;
    let v = &inst.q0.b + sigma * &inst.q1.b;
    let (solution, in_range) = symlin::pseudo_solve_eig(&eig, &v);
    let gamma = inst.q0.c + sigma * inst.q1.c - v.dot(&solution);
    let feasible = eig.values[0] >= -cone_tolerance(&pencil) && in_range;
    Ok((gamma, feasible))
}

/// The qp dual objective `gamma(sigma) - sigma^2/4` with its feasibility flag.
pub fn dual_objective_qp(inst: &QpInstance, sigma: f64) -> Result<(f64, bool)> {
    let (gamma, feasible) = dual_gamma_qp(inst, sigma)?;
    Ok((gamma - 0.25 * sigma * sigma, feasible))
}

/// The qq dual objective at `(lambda, sigma)`:
/// `sigma*c1 + lambda*c2 - v' (sigma*A1 + lambda*A2)^+ v - sigma^2/4` with
/// `v = sigma*b1 + lambda*b2`. Feasibility additionally requires
/// `lambda >= 0`; as in the qp case it is a flag, not an error.
pub fn dual_objective_qq(inst: &QqInstance, lambda: f64, sigma: f64) -> Result<(f64, bool)> {
    let pencil = inst.pencil(lambda, sigma);
    let eig = symlin::eig_sym(&pencil)?;
    let v = sigma * &inst.q1.b + lambda * &inst.q2.b;
    let (solution, in_range) = symlin::pseudo_solve_eig(&eig, &v);
    let value = sigma * inst.q1.c + lambda * inst.q2.c - v.dot(&solution)
        - 0.25 * sigma * sigma;
    let feasible =
        lambda >= 0.0 && eig.values[0] >= -cone_tolerance(&pencil) && in_range;
    Ok((value, feasible))
}

/// One loaded or generated problem instance.
#[derive(Debug, Clone, PartialEq)]
pub enum ProblemInstance {
    Qp(QpInstance),
    Qq(QqInstance),
}

impl ProblemInstance {
    pub fn n(&self) -> usize {
        match self {
            ProblemInstance::Qp(inst) => inst.n(),
            ProblemInstance::Qq(inst) => inst.n(),
        }
    }

    /// The `problem` tag used in the file format: `"qp"` or `"qq"`.
    pub fn tag(&self) -> &'static str {
        match self {
            ProblemInstance::Qp(_) => "qp",
            ProblemInstance::Qq(_) => "qq",
        }
    }
}

/// An instance plus its generation metadata, as stored on disk.
///
/// The format is a UTF-8 JSON document with fields `problem` ("qp"|"qq"), `n`,
/// `forms` (qp: `[q0, q1]`; qq: `[q1, q2]`, each `{A, b, c}` with `A` the
/// packed lower triangle, row-major), `seed`, `cond`, `family`, and
/// `witness_alpha` (qp) or `slater_point` (qq) when recorded. Numbers carry 17
/// significant digits, so save/load round-trips are bit-exact.
#[derive(Debug, Clone, PartialEq)]
pub struct InstanceFile {
    pub instance: ProblemInstance,
    pub family: String,
    pub seed: u64,
    pub cond: f64,
}

#[derive(serde::Deserialize)]
#[serde(deny_unknown_fields)]
struct FormDoc {
    #[serde(rename = "A")]
    a: Vec<f64>,
    b: Vec<f64>,
    c: f64,
}

#[derive(serde::Deserialize)]
#[serde(deny_unknown_fields)]
struct FileDoc {
    problem: String,
    n: usize,
    forms: Vec<FormDoc>,
    seed: u64,
    cond: f64,
    family: String,
    #[serde(default)]
    witness_alpha: Option<f64>,
    #[serde(default)]
    slater_point: Option<Vec<f64>>,
}

fn form_to_json(q: &QuadraticForm, out: &mut String) {
    out.push_str("    {\n      \"A\": [");
    for (k, v) in q.a.packed().iter().enumerate() {
        if k > 0 {
            out.push_str(", ");
        }
        out.push_str(&fmt_f64(*v));
    }
    out.push_str("],\n      \"b\": [");
    for (k, v) in q.b.iter().enumerate() {
        if k > 0 {
            out.push_str(", ");
        }
        out.push_str(&fmt_f64(*v));
    }
    out.push_str("],\n      \"c\": ");
    out.push_str(&fmt_f64(q.c));
    out.push_str("\n    }");
}

fn doc_form(doc: FormDoc, n: usize, which: &str) -> Result<QuadraticForm> {
    let a = SymMatrix::from_packed(n, doc.a).map_err(|e| match e {
        Error::DimensionMismatch(m) => Error::DimensionMismatch(format!("{which}: {m}")),
        other => other,
    })?;
    if doc.b.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "{which}: linear term has {} entries, expected {n}",
            doc.b.len()
        )));
    }
    QuadraticForm::new(a, DVector::from_vec(doc.b), doc.c)
}

impl InstanceFile {
    /// Serializes to the on-disk JSON document.
    pub fn write_to_string(&self) -> String {
        let mut out = String::new();
        out.push_str("{\n");
        out.push_str(&format!("  \"problem\": \"{}\",\n", self.instance.tag()));
        out.push_str(&format!("  \"n\": {},\n", self.instance.n()));
        out.push_str("  \"forms\": [\n");
        let forms: [&QuadraticForm; 2] = match &self.instance {
            ProblemInstance::Qp(inst) => [&inst.q0, &inst.q1],
            ProblemInstance::Qq(inst) => [&inst.q1, &inst.q2],
        };
        for (k, form) in forms.iter().enumerate() {
            form_to_json(form, &mut out);
            out.push_str(if k == 0 { ",\n" } else { "\n" });
        }
        out.push_str("  ],\n");
        out.push_str(&format!("  \"seed\": {},\n", self.seed));
        out.push_str(&format!("  \"cond\": {},\n", fmt_f64(self.cond)));
        out.push_str(&format!("  \"family\": \"{}\"", self.family));
        match &self.instance {
            ProblemInstance::Qp(inst) => {
                if let Some(alpha) = inst.witness_alpha {
                    out.push_str(&format!(",\n  \"witness_alpha\": {}", fmt_f64(alpha)));
                }
            }
            ProblemInstance::Qq(inst) => {
                if let Some(p) = &inst.slater_point {
                    out.push_str(",\n  \"slater_point\": [");
                    for (k, v) in p.iter().enumerate() {
                        if k > 0 {
                            out.push_str(", ");
                        }
                        out.push_str(&fmt_f64(*v));
                    }
                    out.push(']');
                }
            }
        }
        out.push_str("\n}\n");
        out
    }

    /// Parses the on-disk JSON document.
    pub fn parse(text: &str) -> Result<Self> {
        let doc: FileDoc = serde_json::from_str(text).map_err(|e| {
            let mut message = e.to_string();
            if let Some(pos) = message.rfind(" at line ") {
                message.truncate(pos);
            }
            Error::Parse {
                line: e.line(),
                column: e.column(),
                message,
            }
        })?;
        if doc.n == 0 {
            return Err(Error::Invalid("instance dimension must be positive".into()));
        }
        if doc.forms.len() != 2 {
            return Err(Error::Invalid(format!(
                "expected exactly 2 forms, got {}",
                doc.forms.len()
            )));
        }
        if !(doc.cond.is_finite() && doc.cond >= 1.0) {
            return Err(Error::Invalid(format!(
                "cond must be a finite real >= 1, got {}",
                doc.cond
            )));
        }
        let mut forms = doc.forms.into_iter();
        let (first, second) = (forms.next().unwrap(), forms.next().unwrap());
        let instance = match doc.problem.as_str() {
            "qp" => {
                if doc.slater_point.is_some() {
                    return Err(Error::Invalid(
                        "slater_point is only valid for problem \"qq\"".into(),
                    ));
                }
                if doc.witness_alpha.is_some_and(|a| !a.is_finite()) {
                    return Err(Error::Invalid("witness_alpha must be finite".into()));
                }
                let q0 = doc_form(first, doc.n, "forms[0] (q0)")?;
                let q1 = doc_form(second, doc.n, "forms[1] (q1)")?;
                ProblemInstance::Qp(QpInstance::new(q0, q1, doc.witness_alpha)?)
            }
            "qq" => {
                if doc.witness_alpha.is_some() {
                    return Err(Error::Invalid(
                        "witness_alpha is only valid for problem \"qp\"".into(),
                    ));
                }
                let q1 = doc_form(first, doc.n, "forms[0] (q1)")?;
                let q2 = doc_form(second, doc.n, "forms[1] (q2)")?;
                let slater = match doc.slater_point {
                    None => None,
                    Some(p) => {
                        if p.iter().any(|v| !v.is_finite()) {
                            return Err(Error::Invalid(
                                "slater_point entries must be finite".into(),
                            ));
                        }
                        Some(DVector::from_vec(p))
                    }
                };
                ProblemInstance::Qq(QqInstance::new(q1, q2, slater)?)
            }
            other => {
                return Err(Error::Invalid(format!(
                    "problem must be \"qp\" or \"qq\", got \"{other}\""
                )))
            }
        };
        Ok(InstanceFile {
            instance,
            family: doc.family,
            seed: doc.seed,
            cond: doc.cond,
        })
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.write_to_string())?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn seeded_form(n: usize, rng: &mut ChaCha8Rng) -> QuadraticForm {
        let a = SymMatrix::from_packed(
            n,
            (0..packed_len(n)).map(|_| rng.gen_range(-2.0..2.0)).collect(),
        )
        .unwrap();
        let b = DVector::from_fn(n, |_, _| rng.gen_range(-2.0..2.0f64));
        QuadraticForm::new(a, b, rng.gen_range(-2.0..2.0)).unwrap()
    }

    fn seeded_point(n: usize, rng: &mut ChaCha8Rng) -> DVector<f64> {
        DVector::from_fn(n, |_, _| rng.gen_range(-2.0..2.0f64))
    }

    fn naive_eval(q: &QuadraticForm, x: &DVector<f64>) -> f64 {
        let n = q.n();
        let mut acc = q.c;
        for i in 0..n {
            acc += 2.0 * q.b[i] * x[i];
            for j in 0..n {
                acc += x[i] * q.a.get(i, j) * x[j];
            }
        }
        acc
    }

    fn unit_qp(n: usize) -> QpInstance {
        // q0 = |x|^2, q1 = |x|^2 + 1 (positive everywhere): minimum at 0.
        let q0 = QuadraticForm::new(SymMatrix::identity(n), DVector::zeros(n), 0.0).unwrap();
        let q1 = QuadraticForm::new(SymMatrix::identity(n), DVector::zeros(n), 1.0).unwrap();
        QpInstance::new(q0, q1, Some(0.0)).unwrap()
    }

    #[test]
    fn qform_eval_examples() {
        let q = QuadraticForm::new(SymMatrix::identity(2), DVector::zeros(2), 0.0).unwrap();
        assert_relative_eq!(
            qform_eval(&q, &DVector::from_row_slice(&[1.0, 1.0])).unwrap(),
            2.0
        );
        let q = QuadraticForm::new(
            SymMatrix::zeros(2),
            DVector::from_row_slice(&[1.0, 0.0]),
            3.0,
        )
        .unwrap();
        assert_relative_eq!(
            qform_eval(&q, &DVector::from_row_slice(&[2.0, 5.0])).unwrap(),
            7.0
        );

        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..20 {
            let q = seeded_form(4, &mut rng);
            let x = seeded_point(4, &mut rng);
            assert_relative_eq!(
                qform_eval(&q, &x).unwrap(),
                naive_eval(&q, &x),
                epsilon = 1e-12
            );
        }
    }

    #[test]
    fn dimension_mismatches_are_errors() {
        let q = QuadraticForm::zero(2);
        assert!(matches!(
            qform_eval(&q, &DVector::zeros(3)),
            Err(Error::DimensionMismatch(_))
        ));
        assert!(matches!(
            QuadraticForm::new(SymMatrix::identity(2), DVector::zeros(3), 0.0),
            Err(Error::DimensionMismatch(_))
        ));
        assert!(matches!(
            QpInstance::new(QuadraticForm::zero(2), QuadraticForm::zero(3), None),
            Err(Error::DimensionMismatch(_))
        ));
        assert!(matches!(
            QqInstance::new(
                QuadraticForm::zero(2),
                QuadraticForm::zero(2),
                Some(DVector::zeros(3))
            ),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let q = seeded_form(5, &mut rng);
        let x = seeded_point(5, &mut rng);
        let g = q.gradient(&x);
        let h = 1e-6;
        for i in 0..5 {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[i] += h;
            xm[i] -= h;
            let fd = (q.eval(&xp) - q.eval(&xm)) / (2.0 * h);
            assert_relative_eq!(g[i], fd, epsilon = 1e-6, max_relative = 1e-6);
        }
    }

    #[test]
    fn bordered_matrix_reproduces_the_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let q = seeded_form(3, &mut rng);
        let m = bordered_matrix(&q);
        assert_eq!(m.n(), 4);
        for _ in 0..10 {
            let x = seeded_point(3, &mut rng);
            let lifted = DVector::from_fn(4, |i, _| if i < 3 { x[i] } else { 1.0 });
            assert_relative_eq!(m.quad_form(&lifted), q.eval(&x), epsilon = 1e-12);
        }
    }

    #[test]
    fn f_qp_examples() {
        let q0 = QuadraticForm::zero(1);
        let q1 = QuadraticForm::new(
            SymMatrix::from_packed(1, vec![1.0]).unwrap(),
            DVector::zeros(1),
            -1.0,
        )
        .unwrap();
        let inst = QpInstance::new(q0, q1, None).unwrap();
        assert_relative_eq!(f_qp(&inst, &DVector::from_row_slice(&[1.0])).unwrap(), 0.0);
        assert_relative_eq!(f_qp(&inst, &DVector::from_row_slice(&[0.0])).unwrap(), 1.0);

        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let inst = QpInstance::new(
            seeded_form(2, &mut rng),
            seeded_form(2, &mut rng),
            None,
        )
        .unwrap();
        for _ in 0..10 {
            let x = seeded_point(2, &mut rng);
            let expected = qform_eval(&inst.q0, &x).unwrap()
                + qform_eval(&inst.q1, &x).unwrap().powi(2);
            assert_eq!(f_qp(&inst, &x).unwrap(), expected);
        }
    }

    #[test]
    fn lagrangian_qp_identities() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let inst = QpInstance::new(
            seeded_form(3, &mut rng),
            seeded_form(3, &mut rng),
            None,
        )
        .unwrap();
        for _ in 0..100 {
            let x = seeded_point(3, &mut rng);
            let q1 = qform_eval(&inst.q1, &x).unwrap();
            let f = f_qp(&inst, &x).unwrap();
            // Equality at sigma = 2 q1(x).
            assert_relative_eq!(
                lagrangian_qp(&inst, &x, 2.0 * q1).unwrap(),
                f,
                epsilon = 1e-10,
                max_relative = 1e-10
            );
            // sigma = 0 drops to q0.
            assert_relative_eq!(
                lagrangian_qp(&inst, &x, 0.0).unwrap(),
                qform_eval(&inst.q0, &x).unwrap()
            );
            // Completing the square: f - L = (q1 - sigma/2)^2, and L <= f.
            let sigma = rng.gen_range(-5.0..5.0);
            let lag = lagrangian_qp(&inst, &x, sigma).unwrap();
            assert!(lag <= f + 1e-12);
            let excess = (q1 - 0.5 * sigma).powi(2);
            assert_relative_eq!(f - lag, excess, epsilon = 1e-12, max_relative = 1e-9);
        }
    }

    #[test]
    fn lagrangian_qq_identities_and_chain() {
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let inst = QqInstance::new(
            seeded_form(3, &mut rng),
            seeded_form(3, &mut rng),
            None,
        )
        .unwrap();
        assert!(matches!(
            lagrangian_qq(&inst, &DVector::zeros(3), -0.5, 0.0),
            Err(Error::Domain(_))
        ));
        let mut checked = 0;
        while checked < 100 {
            let x = seeded_point(3, &mut rng);
            let q1 = qform_eval(&inst.q1, &x).unwrap();
            let q2 = qform_eval(&inst.q2, &x).unwrap();
            assert_relative_eq!(
                lagrangian_qq(&inst, &x, 0.0, 2.0 * q1).unwrap(),
                f_qq(&inst, &x).unwrap(),
                epsilon = 1e-10,
                max_relative = 1e-10
            );
            assert_relative_eq!(lagrangian_qq(&inst, &x, 1.0, 0.0).unwrap(), q2);
            if q2 > 0.0 {
                continue; // the chain needs a feasible point
            }
            checked += 1;
            let lambda = rng.gen_range(0.0..5.0);
            let sigma = rng.gen_range(-5.0..5.0);
            let f = f_qq(&inst, &x).unwrap();
            let middle = q1 * q1 + lambda * q2;
            let lower = lagrangian_qq(&inst, &x, lambda, sigma).unwrap();
            assert!(f >= middle - 1e-12);
            assert!(middle >= lower - 1e-12);
        }
    }

    #[test]
    fn dual_gamma_qp_examples() {
        // Identity instance at sigma = 0.
        let q0 = QuadraticForm::new(SymMatrix::identity(2), DVector::zeros(2), 0.0).unwrap();
        let q1 = QuadraticForm::new(SymMatrix::identity(2), DVector::zeros(2), -1.0).unwrap();
        let inst = QpInstance::new(q0, q1, None).unwrap();
        let (gamma, feasible) = dual_gamma_qp(&inst, 0.0).unwrap();
        assert!(feasible);
        assert_relative_eq!(gamma, 0.0);
        assert_relative_eq!(dual_objective_qp(&inst, 0.0).unwrap().0, 0.0);

        // n=1, q0 = 0, q1 = x^2 - 1: gamma(sigma) = -sigma on sigma >= 0.
        let inst = QpInstance::new(
            QuadraticForm::zero(1),
            QuadraticForm::new(
                SymMatrix::from_packed(1, vec![1.0]).unwrap(),
                DVector::zeros(1),
                -1.0,
            )
            .unwrap(),
            None,
        )
        .unwrap();
        let (gamma, feasible) = dual_gamma_qp(&inst, 2.0).unwrap();
        assert!(feasible);
        assert_relative_eq!(gamma, -2.0, epsilon = 1e-12);
        assert_relative_eq!(dual_objective_qp(&inst, 2.0).unwrap().0, -3.0, epsilon = 1e-12);
        // Grid cross-check over sigma in [0, 4]: the dual value matches the
        // closed form -sigma - sigma^2/4 everywhere, so the grid maximum
        // (at sigma = 0) dominates the value at sigma = 2.
        let mut best = f64::NEG_INFINITY;
        let mut best_sigma = f64::NAN;
        for k in 0..=40_000 {
            let sigma = 1e-4 * k as f64;
            let (value, feasible) = dual_objective_qp(&inst, sigma).unwrap();
            assert!(feasible);
            assert_relative_eq!(value, -sigma - 0.25 * sigma * sigma, epsilon = 1e-9);
            if value > best {
                best = value;
                best_sigma = sigma;
            }
        }
        assert_relative_eq!(best, 0.0);
        assert_relative_eq!(best_sigma, 0.0);

        // An indefinite pencil exits the cone.
        let mut a0 = SymMatrix::zeros(2);
        a0.set(0, 0, 1.0);
        a0.set(1, 1, -1.0);
        let inst = QpInstance::new(
            QuadraticForm::new(a0, DVector::zeros(2), 0.0).unwrap(),
            QuadraticForm::new(SymMatrix::identity(2), DVector::zeros(2), 0.0).unwrap(),
            None,
        )
        .unwrap();
        assert!(!dual_gamma_qp(&inst, 0.0).unwrap().1);
        // ... and a large enough sigma re-enters it.
        assert!(dual_gamma_qp(&inst, 2.0).unwrap().1);
    }

    #[test]
    fn dual_gamma_qp_range_condition() {
        // Pencil diag(1, 0) with b = e2: v leaves the range, so the point is
        // infeasible even though the pencil is PSD.
        let mut a0 = SymMatrix::zeros(2);
        a0.set(0, 0, 1.0);
        let inst = QpInstance::new(
            QuadraticForm::new(a0, DVector::from_row_slice(&[0.0, 1.0]), 0.0).unwrap(),
            QuadraticForm::zero(2),
            None,
        )
        .unwrap();
        let (_, feasible) = dual_gamma_qp(&inst, 0.0).unwrap();
        assert!(!feasible);
    }

    #[test]
    fn weak_duality_on_seeded_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(55);
        // A1 = I keeps a nonempty feasible sigma range for any A0.
        let a0 = {
            let m = seeded_form(3, &mut rng).a;
            m
        };
        let inst = QpInstance::new(
            QuadraticForm::new(a0, seeded_point(3, &mut rng), 0.5).unwrap(),
            QuadraticForm::new(SymMatrix::identity(3), seeded_point(3, &mut rng), -1.0)
                .unwrap(),
            None,
        )
        .unwrap();
        let mut feasible_seen = 0;
        for k in 0..200 {
            let sigma = -5.0 + 0.05 * k as f64;
            let (value, feasible) = dual_objective_qp(&inst, sigma).unwrap();
            if !feasible {
                continue;
            }
            feasible_seen += 1;
            for _ in 0..200 {
                let x = seeded_point(3, &mut rng);
                assert!(value <= f_qp(&inst, &x).unwrap() + 1e-9);
            }
        }
        assert!(feasible_seen > 0, "no feasible sigma sampled");
    }

    #[test]
    fn saddle_inequality_at_known_optimum() {
        // For q0 = |x|^2, q1 = |x|^2 + 1 the optimum is x* = 0 with
        // sigma* = 2 q1(0) = 2, interior to the dual cone (pencil = 3I).
        let inst = unit_qp(3);
        let x_star = DVector::zeros(3);
        let sigma_star = 2.0;
        assert!(symlin::min_eigenvalue(&inst.pencil(sigma_star)).unwrap() > 0.5);
        let l_star = lagrangian_qp(&inst, &x_star, sigma_star).unwrap();
        assert_relative_eq!(l_star, f_qp(&inst, &x_star).unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for _ in 0..100 {
            let sigma = sigma_star + rng.gen_range(-1.5..1.5);
            assert!(lagrangian_qp(&inst, &x_star, sigma).unwrap() <= l_star + 1e-12);
            let x = seeded_point(3, &mut rng);
            assert!(lagrangian_qp(&inst, &x, sigma_star).unwrap() >= l_star - 1e-12);
        }
    }

    #[test]
    fn dual_objective_qq_reduction_and_flags() {
        let mut rng = ChaCha8Rng::seed_from_u64(91);
        let q1 = QuadraticForm::new(SymMatrix::identity(2), seeded_point(2, &mut rng), 0.3)
            .unwrap();
        let q2 = seeded_form(2, &mut rng);
        let qq = QqInstance::new(q1.clone(), q2, None).unwrap();
        // lambda = 0 reduces to the qp dual of (q0 = 0, q1).
        let qp = QpInstance::new(QuadraticForm::zero(2), q1, None).unwrap();
        for k in 0..20 {
            let sigma = -2.0 + 0.2 * k as f64;
            let (qq_value, qq_feasible) = dual_objective_qq(&qq, 0.0, sigma).unwrap();
            let (qp_value, qp_feasible) = dual_objective_qp(&qp, sigma).unwrap();
            assert_eq!(qq_feasible, qp_feasible);
            assert_relative_eq!(qq_value, qp_value, epsilon = 1e-12);
        }
        // A negative multiplier is infeasible, never an error.
        assert!(!dual_objective_qq(&qq, -1.0, 0.5).unwrap().1);
    }

    #[test]
    fn instance_file_round_trips_bit_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut q0 = seeded_form(3, &mut rng);
        q0.c = 1.0 / 3.0;
        q0.b[0] = -0.0;
        q0.b[1] = 1e-300;
        let qp = InstanceFile {
            instance: ProblemInstance::Qp(
                QpInstance::new(q0, seeded_form(3, &mut rng), Some(2.5 + 1.0 / 7.0)).unwrap(),
            ),
            family: "qp_indef_pd".into(),
            seed: 12345,
            cond: 100.0,
        };
        let round = InstanceFile::parse(&qp.write_to_string()).unwrap();
        assert_eq!(round, qp);

        let qq = InstanceFile {
            instance: ProblemInstance::Qq(
                QqInstance::new(
                    seeded_form(2, &mut rng),
                    seeded_form(2, &mut rng),
                    Some(DVector::from_row_slice(&[0.1, -2.0 / 3.0])),
                )
                .unwrap(),
            ),
            family: "qq_indef_constraint".into(),
            seed: 9,
            cond: 10.0,
        };
        let round = InstanceFile::parse(&qq.write_to_string()).unwrap();
        assert_eq!(round, qq);

        // File-level round trip as well.
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("inst.json");
        qq.save(&path).unwrap();
        assert_eq!(InstanceFile::load(&path).unwrap(), qq);
    }

    #[test]
    fn instance_parse_errors() {
        let err = InstanceFile::parse("{ not json").unwrap_err();
        match err {
            Error::Parse { line, column, .. } => {
                assert_eq!(line, 1);
                assert!(column > 0);
            }
            other => panic!("expected parse error, got {other:?}"),
        }

        let doc = |problem: &str, extra: &str| {
            format!(
                "{{\"problem\": \"{problem}\", \"n\": 1, \"forms\": [\
                 {{\"A\": [1.0], \"b\": [0.0], \"c\": 0.0}}, \
                 {{\"A\": [1.0], \"b\": [0.0], \"c\": -1.0}}], \
                 \"seed\": 0, \"cond\": 1.0, \"family\": \"t\"{extra}}}"
            )
        };
        assert!(InstanceFile::parse(&doc("qp", "")).is_ok());
        assert!(matches!(
            InstanceFile::parse(&doc("qx", "")),
            Err(Error::Invalid(_))
        ));
        assert!(matches!(
            InstanceFile::parse(&doc("qp", ", \"slater_point\": [0.0]")),
            Err(Error::Invalid(_))
        ));
        assert!(matches!(
            InstanceFile::parse(&doc("qq", ", \"witness_alpha\": 1.0")),
            Err(Error::Invalid(_))
        ));
        // Unknown fields are parse errors with a location.
        assert!(matches!(
            InstanceFile::parse(&doc("qp", ", \"unexpected\": 1")),
            Err(Error::Parse { .. })
        ));
        // Packed length mismatch.
        let bad = "{\"problem\": \"qp\", \"n\": 2, \"forms\": [\
                   {\"A\": [1.0], \"b\": [0.0, 0.0], \"c\": 0.0}, \
                   {\"A\": [1.0, 0.0, 1.0], \"b\": [0.0, 0.0], \"c\": 0.0}], \
                   \"seed\": 0, \"cond\": 1.0, \"family\": \"t\"}";
        assert!(matches!(
            InstanceFile::parse(bad),
            Err(Error::DimensionMismatch(_))
        ));
    }
}
