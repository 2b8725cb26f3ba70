//! ε-sweep studies comparing solutions of the oscillating problem with the
//! two-scale limit (u, u₁).

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::Serialize;

use crate::cell::{solve_linear_correctors, CellData, CellEvaluator, LinearCoefficient};
use crate::discretization::{
    fmt17, lp_norm, w1p_seminorm, CellGrid, FeFunction, MacroFunction, MacroGrid, QuadratureRule,
};
use crate::effective::{
    build_linear_effective, linear_pair, solve_macro_linear, solve_macro_nonlinear, Ansatz, MacroConfig, TwoScalePair,
};
use crate::epsilon::{solve_epsilon, EpsilonProblem, EpsilonTemplate};
use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::fields::{PeriodicField, DEFAULT_MEAN_TOL};
use crate::solver::{df_pow, f_pow, SolveStats, SolverConfig};

/// Largest admissible quadrature drift relative to the measured gap.
pub const QUAD_STABILITY_LIMIT: f64 = 0.01;
/// Gaps below this are treated as round-off in the stability quotient.
pub const GAP_FLOOR: f64 = 1e-12;
/// Ratio max/min of the continuity-modulus quotients accepted as bounded.
pub const MODULUS_SPREAD: f64 = 10.0;
/// Highest wavenumber among the oscillatory test-function presets.
pub const MAX_WAVENUMBER: u32 = 4;

/// Oscillatory test factor preset: sin or cos of 2πk y₁, or a product over axes.
pub fn oscillatory_preset(dim: usize, kind: &str, k: u32) -> Result<PeriodicField> {
    if k == 0 || k > MAX_WAVENUMBER {
        return Err(Error::invalid(format!(
            "wavenumber must lie in 1..={MAX_WAVENUMBER}, got {k}"
        )));
    }
    let src = match (kind, dim) {
        ("sin" | "cos", 1) => format!("{kind}(2*pi*{k}*y)"),
        ("sin" | "cos", _) => format!("{kind}(2*pi*{k}*y1)"),
        _ => return Err(Error::invalid(format!("unknown oscillatory preset '{kind}'"))),
    };
    PeriodicField::expr(dim, &src)
}

/// x(1-x) in every coordinate of the unit box.
pub fn parabola(dim: usize) -> Expr {
    let src = if dim == 1 { "x*(1-x)" } else { "x1*(1-x1)*x2*(1-x2)" };
    Expr::parse(src).expect("valid expression")
}

/// Pass criteria of one series.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Thresholds {
    /// Last value must not exceed α times the first.
    pub alpha: f64,
    /// Additionally require every row to improve on its predecessor.
    pub strict: bool,
    /// Upper bound on the final value.
    pub final_max: Option<f64>,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            alpha: 0.5,
            strict: false,
            final_max: None,
        }
    }
}

/// How the limit pair (u, u₁) is computed.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReferenceSpec {
    /// Macro elements per axis.
    pub n: usize,
    /// Cell elements per axis.
    pub m: usize,
    /// Use the linear correctors at p = 2 instead of the nonlinear cell solves.
    pub linear_at_p2: bool,
    pub ansatz: Ansatz,
    pub macro_config: MacroConfig,
    pub quantization: Option<f64>,
}

impl Default for ReferenceSpec {
    fn default() -> Self {
        Self {
            n: 256,
            m: 256,
            linear_at_p2: true,
            ansatz: Ansatz::Split,
            macro_config: MacroConfig::default(),
            quantization: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct StudySpec {
    pub template: EpsilonTemplate,
    /// Decreasing reciprocals of integers.
    pub eps_list: Vec<f64>,
    /// Smooth factor vanishing on the boundary.
    pub phi1: Expr,
    /// Centred oscillatory factor of the scaled pairings.
    pub phi2: PeriodicField,
    /// Oscillatory factors of the gradient pairing, applied to the first component.
    pub psi: Vec<PeriodicField>,
    pub mean_tol: f64,
    pub solver: SolverConfig,
    pub reference: ReferenceSpec,
    /// Criteria of the main series.
    pub thresholds: Thresholds,
    /// Criteria of secondary series (gradient pairings).
    pub secondary: Thresholds,
}

impl StudySpec {
    pub fn new(template: EpsilonTemplate, eps_list: Vec<f64>) -> Result<Self> {
        let dim = template.dim;
        let spec = Self {
            phi1: parabola(dim),
            phi2: oscillatory_preset(dim, "sin", 1)?,
            psi: vec![oscillatory_preset(dim, "sin", 1)?, oscillatory_preset(dim, "cos", 1)?],
            template,
            eps_list,
            mean_tol: DEFAULT_MEAN_TOL,
            solver: SolverConfig::default(),
            reference: ReferenceSpec::default(),
            thresholds: Thresholds::default(),
            secondary: Thresholds::default(),
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.eps_list.is_empty() {
            return Err(Error::invalid("empty epsilon list"));
        }
        if self.eps_list.windows(2).any(|w| !(w[1] < w[0])) {
            return Err(Error::invalid("epsilon list must be strictly decreasing"));
        }
        let dim = self.template.dim;
        if self.phi2.dim() != dim || self.psi.iter().any(|p| p.dim() != dim) || self.phi1.arity() > dim {
            return Err(Error::DimensionMismatch(
                "test functions do not match the problem dimension".into(),
            ));
        }
        if self.reference.n == 0 || self.reference.m == 0 {
            return Err(Error::invalid("reference grids must be non-empty"));
        }
        self.solver.validate()?;
        self.reference.macro_config.validate()
    }

    /// Rejects a non-centred φ₂.
    pub fn check_centring(&self) -> Result<f64> {
        let mean = self.phi2.cell_mean(16);
        if mean.abs() > self.mean_tol {
            return Err(Error::NotCentred {
                mean,
                tol: self.mean_tol,
            });
        }
        Ok(mean)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportRow {
    pub eps: f64,
    pub value: f64,
    pub limit: f64,
    pub gap: f64,
    /// Change of the value under halving the quadrature subcells, relative to the gap.
    pub quad_stability: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Series {
    pub name: String,
    pub thresholds: Thresholds,
    pub rows: Vec<ReportRow>,
    pub decreasing: bool,
    pub monotone: bool,
    pub final_ok: bool,
    pub passed: bool,
}

pub const CSV_HEADER: &str = "eps,value,limit,gap,quad_stability,pass";

impl Series {
    fn new(name: impl Into<String>, thresholds: Thresholds, rows: Vec<ReportRow>) -> Self {
        let gaps: Vec<f64> = rows.iter().map(|r| r.gap).collect();
        let (decreasing, monotone, final_ok) = match (gaps.first(), gaps.last()) {
            (Some(&first), Some(&last)) => (
                last <= thresholds.alpha * first,
                gaps.windows(2).all(|w| w[1] < w[0]),
                thresholds.final_max.is_none_or(|m| last <= m),
            ),
            _ => (false, false, false),
        };
        let passed = !rows.is_empty()
            && rows.iter().all(|r| r.pass)
            && (decreasing || gaps.iter().all(|g| *g == 0.0))
            && (monotone || !thresholds.strict)
            && final_ok;
        Self {
            name: name.into(),
            thresholds,
            rows,
            decreasing,
            monotone,
            final_ok,
            passed,
        }
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from(CSV_HEADER);
        s.push('\n');
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{}",
                fmt17(r.eps),
                fmt17(r.value),
                fmt17(r.limit),
                fmt17(r.gap),
                fmt17(r.quad_stability),
                r.pass
            );
        }
        s
    }

    pub fn last_gap(&self) -> Option<f64> {
        self.rows.last().map(|r| r.gap)
    }
}

/// Per-ε solve record.
#[derive(Debug, Clone, Serialize)]
pub struct RowMeta {
    pub eps: f64,
    pub elements: [usize; 2],
    pub subdivisions: usize,
    pub lp_norm: f64,
    pub w1p_norm: f64,
    pub stats: Option<SolveStats>,
    pub error: Option<String>,
}

/// ‖F'(u) - F'(u_ε)‖_q against ‖u - u_ε‖_p^β.
#[derive(Debug, Clone, Serialize)]
pub struct ModulusRow {
    pub eps: f64,
    pub lhs: f64,
    pub rhs: f64,
    pub ratio: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ModulusCheck {
    /// "holder" for 2 < p < 3, "lipschitz" for p >= 3.
    pub kind: String,
    pub q: f64,
    pub exponent: f64,
    pub rows: Vec<ModulusRow>,
    pub bounded: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct ReferenceMeta {
    pub n: usize,
    pub m: usize,
    pub method: String,
    pub outer_iterations: usize,
    pub r_global: f64,
    pub r_local: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct ConvergenceReport {
    pub study: String,
    pub p: f64,
    pub dim: usize,
    pub series: Vec<Series>,
    pub rows: Vec<RowMeta>,
    pub reference: ReferenceMeta,
    pub solver: SolverConfig,
    pub modulus: Option<ModulusCheck>,
    pub passed: bool,
}

impl ConvergenceReport {
    fn new(study: &str, spec: &StudySpec, series: Vec<Series>, rows: Vec<RowMeta>, reference: ReferenceMeta) -> Self {
        let passed = series.iter().all(|s| s.passed) && reference.converged;
        Self {
            study: study.into(),
            p: spec.template.p,
            dim: spec.template.dim,
            series,
            rows,
            reference,
            solver: spec.solver.clone(),
            modulus: None,
            passed,
        }
    }

    pub fn series(&self, name: &str) -> Option<&Series> {
        self.series.iter().find(|s| s.name == name)
    }
}

struct Reference {
    pair: TwoScalePair,
    meta: ReferenceMeta,
}

fn reference(spec: &StudySpec) -> Result<Reference> {
    let t = &spec.template;
    let r = &spec.reference;
    let grid = MacroGrid::new(t.dim, t.lower, t.upper, [r.n, r.n])?;
    let cell = CellGrid::new(t.dim, r.m)?;
    if t.p == 2.0 && r.linear_at_p2 {
        let a: LinearCoefficient = t.a.clone().into();
        let corr = solve_linear_correctors(&a, &t.v, cell, spec.solver.lin_tol)?;
        let model = build_linear_effective(&corr, &a, &t.v)?;
        let u = solve_macro_linear(&model, r.ansatz, &t.f, &grid, spec.solver.lin_tol)?;
        let pair = linear_pair(&model, &corr, r.ansatz, &u)?;
        let meta = ReferenceMeta {
            n: r.n,
            m: r.m,
            method: format!(
                "linear-{}",
                if r.ansatz == Ansatz::Split { "split" } else { "gradient" }
            ),
            outer_iterations: 0,
            r_global: 0.0,
            r_local: corr.residual,
            converged: true,
        };
        return Ok(Reference { pair, meta });
    }
    let data = CellData::new(&t.a, &t.v, t.p, cell)?;
    let evaluator = CellEvaluator::new(data, spec.solver.clone(), r.quantization)?;
    let mut cfg = r.macro_config.clone();
    cfg.keep_u1 = true;
    let pair = solve_macro_nonlinear(&evaluator, &t.f, &grid, &cfg)?;
    let meta = ReferenceMeta {
        n: r.n,
        m: r.m,
        method: if cfg.macro_newton {
            "nonlinear-newton"
        } else {
            "nonlinear-picard"
        }
        .into(),
        outer_iterations: pair.stats.outer_iterations,
        r_global: pair.stats.r_global,
        r_local: pair.stats.r_local,
        converged: pair.stats.converged,
    };
    Ok(Reference { pair, meta })
}

struct Solved {
    prob: EpsilonProblem,
    u: MacroFunction,
}

fn solve_rows(spec: &StudySpec) -> Vec<(RowMeta, Option<Solved>)> {
    let p = spec.template.p;
    spec.eps_list
        .par_iter()
        .map(|&eps| {
            let mut meta = RowMeta {
                eps,
                elements: [0; 2],
                subdivisions: 0,
                lp_norm: f64::NAN,
                w1p_norm: f64::NAN,
                stats: None,
                error: None,
            };
            let run = spec.template.instantiate(eps).and_then(|prob| {
                meta.elements = prob.grid.n;
                meta.subdivisions = prob.rule.subdivisions;
                let (u, stats) = solve_epsilon(&prob, &spec.solver)?;
                Ok((prob, u, stats))
            });
            match run {
                Ok((prob, u, stats)) => {
                    meta.lp_norm = lp_norm(&u, p).unwrap_or(f64::NAN);
                    let semi = w1p_seminorm(&u, p).unwrap_or(f64::NAN);
                    meta.w1p_norm = meta.lp_norm + semi;
                    meta.stats = Some(stats);
                    (meta, Some(Solved { prob, u }))
                }
                Err(e) => {
                    meta.error = Some(e.to_string());
                    (meta, None)
                }
            }
        })
        .collect()
}

/// ∫ g(x, x/ε, u, Du) over the elements of `u` with `rule` and its refinement.
fn integrate_pair(
    u: &MacroFunction,
    rule: QuadratureRule,
    eps: f64,
    g: impl Fn(&[f64], &[f64], f64, [f64; 2]) -> f64,
) -> (f64, f64) {
    let d = u.grid().dim;
    let run = |r: QuadratureRule| {
        let q = r.reference(d);
        let mut total = 0.0;
        for e in 0..u.num_elements() {
            let el = u.element(e);
            for (s, x, w) in q.on(&el) {
                let (val, grad) = u.eval_local(e, &s);
                let y = [x[0] / eps, x[1] / eps];
                total += w * g(&x[..d], &y[..d], val, grad);
            }
        }
        total
    };
    (run(rule), run(rule.refined()))
}

fn failed_row(eps: f64, limit: f64) -> ReportRow {
    ReportRow {
        eps,
        value: f64::NAN,
        limit,
        gap: f64::NAN,
        quad_stability: f64::NAN,
        pass: false,
    }
}

fn pairing_row(eps: f64, coarse: f64, fine: f64, limit: f64) -> ReportRow {
    let gap = (coarse - limit).abs();
    let drift = (fine - coarse).abs();
    let quad_stability = drift / gap.max(GAP_FLOOR);
    ReportRow {
        eps,
        value: coarse,
        limit,
        gap,
        quad_stability,
        pass: quad_stability < QUAD_STABILITY_LIMIT,
    }
}

/// Which limit statement a study checks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StudyKind {
    Convergence,
    ScaledPairing,
    PotentialPairing,
}

impl StudyKind {
    pub fn needs_centring(self) -> bool {
        self != StudyKind::Convergence
    }
}

/// The limit pair and the ε-solutions of a spec, shared between studies.
pub struct Sweep {
    reference: Reference,
    solved: Vec<(RowMeta, Option<Solved>)>,
}

impl Sweep {
    pub fn run(spec: &StudySpec) -> Result<Self> {
        spec.validate()?;
        Ok(Self {
            reference: reference(spec)?,
            solved: solve_rows(spec),
        })
    }

    pub fn reference_pair(&self) -> &TwoScalePair {
        &self.reference.pair
    }

    /// The computed u_ε by ε, `None` where the solve failed.
    pub fn solutions(&self) -> impl Iterator<Item = (f64, Option<&MacroFunction>)> {
        self.solved.iter().map(|(m, s)| (m.eps, s.as_ref().map(|s| &s.u)))
    }

    pub fn convergence(&self, spec: &StudySpec) -> Result<ConvergenceReport> {
        convergence(spec, &self.reference, &self.solved)
    }

    pub fn scaled_pairing(&self, spec: &StudySpec) -> Result<ConvergenceReport> {
        spec.check_centring()?;
        scaled_pairing(spec, &self.reference, &self.solved)
    }

    pub fn potential_pairing(&self, spec: &StudySpec) -> Result<ConvergenceReport> {
        spec.check_centring()?;
        potential_pairing(spec, &self.reference, &self.solved)
    }

    pub fn study(&self, spec: &StudySpec, kind: StudyKind) -> Result<ConvergenceReport> {
        match kind {
            StudyKind::Convergence => self.convergence(spec),
            StudyKind::ScaledPairing => self.scaled_pairing(spec),
            StudyKind::PotentialPairing => self.potential_pairing(spec),
        }
    }
}

/// Runs several studies on one sweep; the centring gate is applied before any solve.
pub fn run_studies(spec: &StudySpec, kinds: &[StudyKind]) -> Result<Vec<ConvergenceReport>> {
    spec.validate()?;
    if kinds.iter().any(|k| k.needs_centring()) {
        spec.check_centring()?;
    }
    let sweep = Sweep::run(spec)?;
    kinds.iter().map(|k| sweep.study(spec, *k)).collect()
}

/// ‖u_ε - u‖_{L^p} and ∫ ∂₁u_ε φ₁ ψ(x/ε) against ∬ (∂₁u + ∂_{y₁}u₁) φ₁ ψ.
pub fn study_convergence(spec: &StudySpec) -> Result<ConvergenceReport> {
    Sweep::run(spec)?.convergence(spec)
}

fn convergence(
    spec: &StudySpec,
    reference: &Reference,
    solved: &[(RowMeta, Option<Solved>)],
) -> Result<ConvergenceReport> {
    let p = spec.template.p;
    let u_ref = &reference.pair.u;
    let phi1 = &spec.phi1;
    let limits: Vec<f64> = spec
        .psi
        .iter()
        .map(|psi| {
            reference
                .pair
                .integrate_cells(|pt, y, _, grad| phi1.eval(&pt.x) * (pt.xi[0] + grad[0]) * psi.sample(y))
        })
        .collect::<Result<_>>()?;
    let mut error_rows = Vec::new();
    let mut pairing_rows = vec![Vec::new(); spec.psi.len()];
    for (meta, s) in solved {
        let eps = meta.eps;
        let Some(s) = s else {
            error_rows.push(failed_row(eps, 0.0));
            for (rows, l) in pairing_rows.iter_mut().zip(&limits) {
                rows.push(failed_row(eps, *l));
            }
            continue;
        };
        let (c, f) = integrate_pair(&s.u, s.prob.rule, eps, |x, _, val, _| {
            (val - u_ref.eval(x)).abs().powf(p)
        });
        let (c, f) = (c.powf(1.0 / p), f.powf(1.0 / p));
        error_rows.push(pairing_row(eps, c, f, 0.0));
        for ((rows, psi), l) in pairing_rows.iter_mut().zip(&spec.psi).zip(&limits) {
            let (c, f) = integrate_pair(&s.u, s.prob.rule, eps, |x, y, _, grad| {
                grad[0] * phi1.eval(x) * psi.sample(y)
            });
            rows.push(pairing_row(eps, c, f, *l));
        }
    }
    let mut series = vec![Series::new("error", spec.thresholds, error_rows)];
    for (psi, rows) in spec.psi.iter().zip(pairing_rows) {
        series.push(Series::new(
            format!("gradient[{}]", psi.describe()),
            spec.secondary,
            rows,
        ));
    }
    let rows = solved.iter().map(|(m, _)| m.clone()).collect();
    Ok(ConvergenceReport::new(
        "convergence",
        spec,
        series,
        rows,
        reference.meta.clone(),
    ))
}

/// ∫ (u_ε/ε) φ₁ φ₂(x/ε) against ∬ u₁ φ₁ φ₂.
pub fn study_scaled_pairing(spec: &StudySpec) -> Result<ConvergenceReport> {
    spec.validate()?;
    spec.check_centring()?;
    Sweep::run(spec)?.scaled_pairing(spec)
}

fn scaled_pairing(
    spec: &StudySpec,
    reference: &Reference,
    solved: &[(RowMeta, Option<Solved>)],
) -> Result<ConvergenceReport> {
    let (phi1, phi2) = (&spec.phi1, &spec.phi2);
    let limit = reference
        .pair
        .integrate_cells(|pt, y, val, _| phi1.eval(&pt.x) * val * phi2.sample(y))?;
    let rows = solved
        .iter()
        .map(|(meta, s)| match s {
            Some(s) => {
                let eps = meta.eps;
                let (c, f) = integrate_pair(&s.u, s.prob.rule, eps, |x, y, val, _| {
                    val / eps * phi1.eval(x) * phi2.sample(y)
                });
                pairing_row(eps, c, f, limit)
            }
            None => failed_row(meta.eps, limit),
        })
        .collect();
    let series = vec![Series::new("scaled_pairing", spec.thresholds, rows)];
    let rows = solved.iter().map(|(m, _)| m.clone()).collect();
    Ok(ConvergenceReport::new(
        "scaled_pairing",
        spec,
        series,
        rows,
        reference.meta.clone(),
    ))
}

/// I(ε) = ∫ (F(u_ε)/ε) φ₁ φ₂(x/ε) against L = ∬ F'(u) u₁ φ₁ φ₂, with the
/// continuity moduli of F' checked along the sweep.
pub fn study_potential_pairing(spec: &StudySpec) -> Result<ConvergenceReport> {
    spec.validate()?;
    spec.check_centring()?;
    Sweep::run(spec)?.potential_pairing(spec)
}

fn potential_pairing(
    spec: &StudySpec,
    reference: &Reference,
    solved: &[(RowMeta, Option<Solved>)],
) -> Result<ConvergenceReport> {
    let p = spec.template.p;
    let u_ref = &reference.pair.u;
    let (phi1, phi2) = (&spec.phi1, &spec.phi2);
    let limit = reference
        .pair
        .integrate_cells(|pt, y, val, _| df_pow(pt.theta, p) * phi1.eval(&pt.x) * val * phi2.sample(y))?;
    let (kind, q, beta) = if p < 3.0 {
        ("holder", p / (p - 2.0), p - 2.0)
    } else {
        ("lipschitz", p, 1.0)
    };
    let mut rows = Vec::new();
    let mut moduli = Vec::new();
    for (meta, s) in solved {
        let eps = meta.eps;
        let Some(s) = s else {
            rows.push(failed_row(eps, limit));
            continue;
        };
        let (c, f) = integrate_pair(&s.u, s.prob.rule, eps, |x, y, val, _| {
            f_pow(val, p) / eps * phi1.eval(x) * phi2.sample(y)
        });
        rows.push(pairing_row(eps, c, f, limit));
        if p > 2.0 {
            let (dl, _) = integrate_pair(&s.u, s.prob.rule, eps, |x, _, val, _| {
                (df_pow(u_ref.eval(x), p) - df_pow(val, p)).abs().powf(q)
            });
            let (du, _) = integrate_pair(&s.u, s.prob.rule, eps, |x, _, val, _| {
                (u_ref.eval(x) - val).abs().powf(p)
            });
            let lhs = dl.powf(1.0 / q);
            let rhs = du.powf(1.0 / p).powf(beta);
            moduli.push(ModulusRow {
                eps,
                lhs,
                rhs,
                ratio: if rhs > 0.0 { lhs / rhs } else { 0.0 },
            });
        }
    }
    let series = vec![Series::new("potential_pairing", spec.thresholds, rows)];
    let rows = solved.iter().map(|(m, _)| m.clone()).collect();
    let mut report = ConvergenceReport::new("potential_pairing", spec, series, rows, reference.meta.clone());
    if p > 2.0 {
        let ratios: Vec<f64> = moduli.iter().map(|m| m.ratio).filter(|r| *r > 0.0).collect();
        let max = ratios.iter().cloned().fold(0.0, f64::max);
        let min = ratios.iter().cloned().fold(f64::INFINITY, f64::min);
        report.modulus = Some(ModulusCheck {
            kind: kind.into(),
            q,
            exponent: beta,
            bounded: !ratios.is_empty() && max.is_finite() && max <= MODULUS_SPREAD * min,
            rows: moduli,
        });
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::PotentialField;

    fn trivial(p: f64) -> EpsilonTemplate {
        EpsilonTemplate::unit_box(
            PeriodicField::constant(1, 1.0),
            PotentialField::zero(1),
            Expr::parse("1").unwrap(),
            p,
        )
    }

    fn small_spec(template: EpsilonTemplate) -> StudySpec {
        let mut spec = StudySpec::new(template, vec![0.25, 0.125]).unwrap();
        spec.template.elements_per_period = 16;
        spec.reference.n = 32;
        spec.reference.m = 16;
        spec
    }

    #[test]
    fn presets_are_centred() {
        for kind in ["sin", "cos"] {
            for k in 1..=MAX_WAVENUMBER {
                for d in [1, 2] {
                    assert!(oscillatory_preset(d, kind, k).unwrap().cell_mean(16).abs() < 1e-14);
                }
            }
        }
        assert!(oscillatory_preset(1, "sin", 5).is_err());
        assert!(oscillatory_preset(1, "tan", 1).is_err());
    }

    #[test]
    fn eps_list_must_decrease() {
        assert!(StudySpec::new(trivial(2.0), vec![0.125, 0.25]).is_err());
        assert!(StudySpec::new(trivial(2.0), vec![]).is_err());
    }

    #[test]
    fn non_centred_phi2_rejected_before_solving() {
        let mut spec = small_spec(trivial(2.0));
        spec.phi2 = PeriodicField::expr(1, "1 + sin(2*pi*y)").unwrap();
        assert!(matches!(study_scaled_pairing(&spec), Err(Error::NotCentred { .. })));
        assert!(matches!(study_potential_pairing(&spec), Err(Error::NotCentred { .. })));
    }

    #[test]
    fn no_oscillation_gives_vanishing_pairing() {
        let spec = small_spec(trivial(2.0));
        let r = study_scaled_pairing(&spec).unwrap();
        let s = &r.series[0];
        assert!(
            s.rows
                .iter()
                .all(|row| row.limit.abs() < 1e-14 && row.value.abs() < 1e-10),
            "{s:?}"
        );
        assert!(s.passed);
        let t = study_convergence(&spec).unwrap();
        let e = t.series("error").unwrap();
        // only the interpolation error of the coarse reference grid remains
        assert!(e.rows.iter().all(|row| row.value < 1e-4), "{e:?}");
    }

    #[test]
    fn zero_load_gives_zero_functional() {
        let mut spec = small_spec(trivial(3.0));
        spec.template.f = Expr::parse("0").unwrap();
        let r = study_potential_pairing(&spec).unwrap();
        assert!(r.series[0].rows.iter().all(|row| row.value == 0.0 && row.limit == 0.0));
        assert!(r.series[0].passed);
    }

    #[test]
    fn csv_has_stable_header_and_rows() {
        let s = Series::new("x", Thresholds::default(), vec![]);
        assert_eq!(s.to_csv(), format!("{CSV_HEADER}\n"));
        assert!(!s.passed);
        let rows = vec![pairing_row(0.5, 1.0, 1.0, 0.0), pairing_row(0.25, 0.25, 0.25, 0.0)];
        let s = Series::new("x", Thresholds::default(), rows);
        assert!(s.passed && s.decreasing && s.monotone);
        assert_eq!(s.to_csv().lines().count(), 3);
    }

    #[test]
    fn strict_and_final_thresholds() {
        let rows = vec![
            pairing_row(0.5, 1.0, 1.0, 0.0),
            pairing_row(0.25, 1.1, 1.1, 0.0),
            pairing_row(0.125, 0.1, 0.1, 0.0),
        ];
        assert!(Series::new("x", Thresholds::default(), rows.clone()).passed);
        let strict = Thresholds {
            strict: true,
            ..Default::default()
        };
        assert!(!Series::new("x", strict, rows.clone()).passed);
        let capped = Thresholds {
            final_max: Some(0.05),
            ..Default::default()
        };
        assert!(!Series::new("x", capped, rows).passed);
    }
}
