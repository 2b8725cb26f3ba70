//! Effective models: the linear convection-diffusion limit for p = 2 and the
//! nonlinear macroscopic equation solved with on-demand cell problems.

use std::sync::atomic::{AtomicUsize, Ordering};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cell::{CellEval, CellEvaluator, LinearCoefficient, LinearCorrectors, CELL_RULE};
use crate::discretization::{CellFunction, FeFunction, MacroFunction, MacroGrid, QuadratureRule};
use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::fields::PotentialField;
use crate::linalg::{norm2, SystemMatrix};
use crate::solver::{d2f_pow, df_pow, solve_residual, NonlinearSystem};

pub use crate::cell::CellEvaluator as NonlinearEffectiveEvaluator;

const NEWTON_WARMUP: usize = 3;
const MIN_NEWTON_STEP: f64 = 1e-3;

/// Which reading of the p = 2 corrector ansatz the macro solve uses.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Ansatz {
    /// u₁ = Du·χ: ā and b̄ only, -div(ā Du) + b̄·Du = f.
    Gradient,
    /// u₁ = Du·χ + u ζ, adding the s̄ and c̄ terms.
    #[default]
    Split,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LinearEffectiveModel {
    pub dim: usize,
    /// ā = ∫ a (I + D_yχ)
    pub abar: [[f64; 2]; 2],
    /// b̄ = ∫ V χ
    pub bbar: [f64; 2],
    /// s̄ = ∫ V ζ
    pub sbar: f64,
    /// c̄ = ∫ a D_yζ
    pub cbar: [f64; 2],
}

impl LinearEffectiveModel {
    /// Smallest eigenvalue of the symmetric part of ā.
    pub fn min_eigenvalue(&self) -> f64 {
        if self.dim == 1 {
            return self.abar[0][0];
        }
        let a = self.abar[0][0];
        let d = self.abar[1][1];
        let b = 0.5 * (self.abar[0][1] + self.abar[1][0]);
        0.5 * (a + d) - (0.25 * (a - d).powi(2) + b * b).sqrt()
    }

    /// (q, v) of the split model at (θ, ξ): q = āξ + c̄θ, v = b̄·ξ + s̄θ.
    pub fn flux_and_coupling(&self, ansatz: Ansatz, theta: f64, xi: [f64; 2]) -> ([f64; 2], f64) {
        let s = if ansatz == Ansatz::Split { 1.0 } else { 0.0 };
        let q = [
            self.abar[0][0] * xi[0] + self.abar[0][1] * xi[1] + s * self.cbar[0] * theta,
            self.abar[1][0] * xi[0] + self.abar[1][1] * xi[1] + s * self.cbar[1] * theta,
        ];
        let v = self.bbar[0] * xi[0] + self.bbar[1] * xi[1] + s * self.sbar * theta;
        (q, v)
    }
}

pub fn build_linear_effective(
    corr: &LinearCorrectors,
    a: &LinearCoefficient,
    v: &PotentialField,
) -> Result<LinearEffectiveModel> {
    let grid = corr.grid;
    let d = grid.dim;
    if a.dim() != d || v.dim() != d {
        return Err(Error::DimensionMismatch(
            "coefficients and correctors differ in dimension".into(),
        ));
    }
    let q = CELL_RULE.reference(d);
    let mut abar = [[0.0; 2]; 2];
    let mut bbar = [0.0; 2];
    let mut sbar = 0.0;
    let mut cbar = [0.0; 2];
    for e in 0..grid.num_elements() {
        let el = grid.element(e);
        for (s, y, w) in q.on(&el) {
            let at = a.sample(&y[..d]);
            let vv = v.sample(&y[..d]);
            for j in 0..d {
                let (cv, cg) = corr.chi[j].eval_local(e, &s);
                let mut g = cg;
                g[j] += 1.0;
                let ag = crate::discretization::assembly::apply_sym(&at, &g);
                for i in 0..d {
                    abar[i][j] += w * ag[i];
                }
                bbar[j] += w * vv * cv;
            }
            let (zv, zg) = corr.zeta.eval_local(e, &s);
            let az = crate::discretization::assembly::apply_sym(&at, &zg);
            sbar += w * vv * zv;
            for i in 0..d {
                cbar[i] += w * az[i];
            }
        }
    }
    Ok(LinearEffectiveModel {
        dim: d,
        abar,
        bbar,
        sbar,
        cbar,
    })
}

/// A macro quadrature point with its shape data and interior unknown indices.
#[derive(Debug, Clone)]
pub struct MacroPoint {
    pub element: usize,
    pub x: [f64; 2],
    pub w: f64,
    pub f: f64,
    n_local: usize,
    dofs: [Option<usize>; 4],
    psi: [f64; 4],
    dpsi: [[f64; 2]; 4],
}

impl MacroPoint {
    /// (u, Du) at this point for interior unknowns `u`.
    pub fn state(&self, u: &[f64]) -> (f64, [f64; 2]) {
        let mut v = 0.0;
        let mut g = [0.0; 2];
        for a in 0..self.n_local {
            if let Some(k) = self.dofs[a] {
                v += self.psi[a] * u[k];
                g[0] += self.dpsi[a][0] * u[k];
                g[1] += self.dpsi[a][1] * u[k];
            }
        }
        (v, g)
    }
}

/// Quadrature points of a macro grid with the load evaluated.
#[derive(Debug, Clone)]
pub struct MacroQuadrature {
    pub grid: MacroGrid,
    pub points: Vec<MacroPoint>,
}

impl MacroQuadrature {
    pub fn new(grid: &MacroGrid, rule: QuadratureRule, f: &Expr) -> Result<Self> {
        if f.arity() > grid.dim {
            return Err(Error::DimensionMismatch(format!(
                "load '{f}' uses more coordinates than the domain has"
            )));
        }
        let q = rule.reference(grid.dim);
        let mut points = Vec::new();
        for e in 0..grid.num_elements() {
            let el = grid.element(e);
            let mut dofs = [None; 4];
            for a in 0..el.n_local() {
                dofs[a] = grid.dof(el.nodes[a]);
            }
            for (s, x, w) in q.on(&el) {
                let (psi, dpsi) = el.shape(&s);
                points.push(MacroPoint {
                    element: e,
                    x,
                    w,
                    f: f.eval(&x[..grid.dim]),
                    n_local: el.n_local(),
                    dofs,
                    psi,
                    dpsi,
                });
            }
        }
        Ok(Self {
            grid: grid.clone(),
            points,
        })
    }

    fn matrix(&self) -> SystemMatrix {
        let bw = self.grid.dof_bandwidth();
        SystemMatrix::new(self.grid.num_dofs(), bw, bw, None, 0)
    }

    /// Σ_q w_q [q_q·Dψ_i + s_q ψ_i] over interior unknowns.
    fn assemble_vector(&self, per_point: impl Fn(usize) -> ([f64; 2], f64)) -> Vec<f64> {
        let mut r = vec![0.0; self.grid.num_dofs()];
        for (k, pt) in self.points.iter().enumerate() {
            let (q, s) = per_point(k);
            for a in 0..pt.n_local {
                if let Some(i) = pt.dofs[a] {
                    r[i] += pt.w * (q[0] * pt.dpsi[a][0] + q[1] * pt.dpsi[a][1] + s * pt.psi[a]);
                }
            }
        }
        r
    }

    /// Adds Σ_q w_q [(K Dψ_j + k ψ_j)·Dψ_i + (m·Dψ_j + c ψ_j) ψ_i].
    fn assemble_matrix(&self, per_point: impl Fn(usize) -> PointTangent) -> SystemMatrix {
        let mut mat = self.matrix();
        for (k, pt) in self.points.iter().enumerate() {
            let t = per_point(k);
            for b in 0..pt.n_local {
                let Some(j) = pt.dofs[b] else { continue };
                let dj = pt.dpsi[b];
                let pj = pt.psi[b];
                let flux = [
                    t.kk[0][0] * dj[0] + t.kk[0][1] * dj[1] + t.k[0] * pj,
                    t.kk[1][0] * dj[0] + t.kk[1][1] * dj[1] + t.k[1] * pj,
                ];
                let src = t.m[0] * dj[0] + t.m[1] * dj[1] + t.c * pj;
                for a in 0..pt.n_local {
                    if let Some(i) = pt.dofs[a] {
                        mat.add(
                            i,
                            j,
                            pt.w * (flux[0] * pt.dpsi[a][0] + flux[1] * pt.dpsi[a][1] + src * pt.psi[a]),
                        );
                    }
                }
            }
        }
        mat
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct PointTangent {
    kk: [[f64; 2]; 2],
    k: [f64; 2],
    m: [f64; 2],
    c: f64,
}

/// Solves ∫(ā Du + c̄u)·Dφ + (b̄·Du + s̄u)φ = ∫fφ (split) or the gradient-only
/// ∫ ā Du·Dφ + (b̄·Du)φ = ∫fφ, with u = 0 on ∂Ω.
pub fn solve_macro_linear(
    model: &LinearEffectiveModel,
    ansatz: Ansatz,
    f: &Expr,
    grid: &MacroGrid,
    lin_tol: f64,
) -> Result<MacroFunction> {
    if model.dim != grid.dim {
        return Err(Error::DimensionMismatch(
            "effective model and macro grid dimensions differ".into(),
        ));
    }
    let min_eig = model.min_eigenvalue();
    if !(min_eig > 0.0) {
        return Err(Error::NotElliptic { min: min_eig });
    }
    let quad = MacroQuadrature::new(grid, QuadratureRule::default(), f)?;
    let split = if ansatz == Ansatz::Split { 1.0 } else { 0.0 };
    let t = PointTangent {
        kk: model.abar,
        k: [split * model.cbar[0], split * model.cbar[1]],
        m: model.bbar,
        c: split * model.sbar,
    };
    let mat = quad.assemble_matrix(|_| t);
    let rhs = quad.assemble_vector(|k| ([0.0; 2], quad.points[k].f));
    let u = mat.solve(&rhs, lin_tol)?;
    Ok(MacroFunction::from_dofs(grid, &u))
}

/// Settings of the outer macro iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MacroConfig {
    /// Euclidean norm of the global weak residual accepted at convergence.
    pub tol: f64,
    pub max_outer: usize,
    /// Relaxation ω of the Picard update u ← u + ω(ũ - u).
    pub relaxation: f64,
    /// Newton on the macro unknowns with finite-difference flux derivatives.
    pub macro_newton: bool,
    /// Relative step of the central differences.
    pub fd_step: f64,
    /// Outer iterations without residual decrease before giving up.
    pub stagnation_window: usize,
    pub keep_u1: bool,
}

impl Default for MacroConfig {
    fn default() -> Self {
        Self {
            tol: 1e-9,
            max_outer: 200,
            relaxation: 1.0,
            macro_newton: false,
            fd_step: 1e-5,
            stagnation_window: 10,
            keep_u1: true,
        }
    }
}

impl MacroConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) {
            return Err(Error::Config(format!("macro tol must be positive, got {}", self.tol)));
        }
        if !(self.relaxation > 0.0 && self.relaxation <= 1.0) {
            return Err(Error::Config(format!(
                "relaxation must lie in (0, 1], got {}",
                self.relaxation
            )));
        }
        if !(self.fd_step > 0.0) {
            return Err(Error::Config(format!("fd_step must be positive, got {}", self.fd_step)));
        }
        if self.max_outer == 0 {
            return Err(Error::Config("max_outer must be positive".into()));
        }
        Ok(())
    }
}

/// Cell state at one macro quadrature point.
#[derive(Debug, Clone, Serialize)]
pub struct PointState {
    pub x: [f64; 2],
    pub w: f64,
    pub theta: f64,
    pub xi: [f64; 2],
    pub q: [f64; 2],
    pub v: f64,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct MacroStats {
    pub outer_iterations: usize,
    pub cached_iterations: usize,
    pub cell_solves: usize,
    pub cache_entries: usize,
    pub r_global: f64,
    pub r_local: f64,
    pub converged: bool,
    pub macro_newton: bool,
}

/// Macro solution u with the cell correctors u₁(x_q, ·) at its quadrature points.
#[derive(Debug, Clone)]
pub struct TwoScalePair {
    pub u: MacroFunction,
    pub rule: QuadratureRule,
    pub points: Vec<PointState>,
    /// χ at every quadrature point, in the order of `points`.
    pub u1: Option<Vec<CellFunction>>,
    pub stats: MacroStats,
}

impl TwoScalePair {
    /// Σ_q w_q ∫_Y g(point_q, y, u₁, D_yu₁) dy: the x-integral by the macro
    /// rule, the y-integral by the cell rule on u₁'s grid.
    pub fn integrate_cells(&self, g: impl Fn(&PointState, &[f64], f64, [f64; 2]) -> f64 + Sync) -> Result<f64> {
        let u1 = self
            .u1
            .as_ref()
            .ok_or_else(|| Error::invalid("pair was solved without keeping u1"))?;
        let parts: Vec<f64> = self
            .points
            .par_iter()
            .zip(u1)
            .map(|(pt, chi)| {
                let d = chi.grid().dim;
                let q = CELL_RULE.reference(d);
                let mut s = 0.0;
                for e in 0..chi.num_elements() {
                    let el = chi.element(e);
                    for (r, y, w) in q.on(&el) {
                        let (val, grad) = chi.eval_local(e, &r);
                        s += w * g(pt, &y[..d], val, grad);
                    }
                }
                pt.w * s
            })
            .collect();
        Ok(parts.iter().sum())
    }
}

struct Outer<'a> {
    evaluator: &'a CellEvaluator,
    quad: MacroQuadrature,
    solves: AtomicUsize,
}

impl Outer<'_> {
    fn states(&self, u: &[f64]) -> Vec<(f64, [f64; 2])> {
        self.quad.points.iter().map(|pt| pt.state(u)).collect()
    }

    fn eval_exact(&self, u: &[f64], warm: Option<&[CellEval]>) -> Result<Vec<CellEval>> {
        let st = self.states(u);
        let out: Result<Vec<CellEval>> = st
            .par_iter()
            .enumerate()
            .map(|(k, &(theta, xi))| {
                self.solves.fetch_add(1, Ordering::Relaxed);
                self.evaluator
                    .evaluate(theta, xi, warm.map(|w| &w[k].chi))
                    .map_err(|e| self.locate(k, e))
            })
            .collect();
        out
    }

    fn eval_cached(&self, u: &[f64]) -> Result<Vec<CellEval>> {
        let st = self.states(u);
        st.par_iter()
            .enumerate()
            .map(|(k, &(theta, xi))| {
                self.solves.fetch_add(1, Ordering::Relaxed);
                self.evaluator
                    .evaluate_cached(theta, xi)
                    .map(|e| (*e).clone())
                    .map_err(|e| self.locate(k, e))
            })
            .collect()
    }

    fn locate(&self, k: usize, e: Error) -> Error {
        let x = self.quad.points[k].x;
        let source = match e {
            Error::CellFailure { source, .. } => source,
            other => Box::new(other),
        };
        Error::CellFailure {
            location: x[..self.quad.grid.dim].to_vec(),
            source,
        }
    }

    /// Global residual Σ_q w_q [q·Dφ + v F'(θ) φ - f φ] at the states the
    /// evaluations were made for.
    fn residual(&self, u: &[f64], evals: &[CellEval]) -> Vec<f64> {
        let p = self.evaluator.p();
        let st = self.states(u);
        self.quad
            .assemble_vector(|k| (evals[k].q, evals[k].v * df_pow(st[k].0, p) - self.quad.points[k].f))
    }
}

/// χ frozen at every quadrature point; the macro unknowns enter only through ξ and θ.
struct FrozenMacro<'a> {
    outer: &'a Outer<'a>,
    evals: &'a [CellEval],
    delta: f64,
}

impl NonlinearSystem for FrozenMacro<'_> {
    fn dim(&self) -> usize {
        self.outer.quad.grid.num_dofs()
    }

    fn residual(&self, u: &[f64], _delta: f64) -> Vec<f64> {
        let p = self.outer.evaluator.p();
        let data = self.outer.evaluator.data();
        let pts = &self.outer.quad.points;
        let per: Vec<([f64; 2], f64)> = pts
            .par_iter()
            .zip(self.evals)
            .map(|(pt, ev)| {
                let (theta, xi) = pt.state(u);
                let (q, _) = data.frozen_flux(ev.chi.values(), xi, self.delta);
                (q, ev.v * df_pow(theta, p) - pt.f)
            })
            .collect();
        self.outer.quad.assemble_vector(|k| per[k])
    }

    fn jacobian(&self, u: &[f64], _delta: f64) -> SystemMatrix {
        let p = self.outer.evaluator.p();
        let data = self.outer.evaluator.data();
        let pts = &self.outer.quad.points;
        let per: Vec<PointTangent> = pts
            .par_iter()
            .zip(self.evals)
            .map(|(pt, ev)| {
                let (theta, xi) = pt.state(u);
                let (_, dq) = data.frozen_flux(ev.chi.values(), xi, self.delta);
                PointTangent {
                    kk: dq,
                    c: ev.v * d2f_pow(theta, p),
                    ..Default::default()
                }
            })
            .collect();
        self.outer.quad.assemble_matrix(|k| per[k])
    }

    fn is_linear(&self) -> bool {
        self.outer.evaluator.p() == 2.0
    }
}

/// Solves the macroscopic equation -div q(u, Du) + v(u, Du) F'(u) = f with
/// cell problems evaluated at every macro quadrature point.
///
/// Picard mode alternates a macro solve with the correctors frozen and a cell
/// update, relaxed by ω; with the memo table enabled the first phase uses
/// cached evaluations and a second, uncached phase polishes to tolerance.
/// Newton mode differentiates (q, v) by central differences.
pub fn solve_macro_nonlinear(
    evaluator: &CellEvaluator,
    f: &Expr,
    grid: &MacroGrid,
    cfg: &MacroConfig,
) -> Result<TwoScalePair> {
    cfg.validate()?;
    if evaluator.dim() != grid.dim {
        return Err(Error::DimensionMismatch(
            "evaluator and macro grid dimensions differ".into(),
        ));
    }
    let rule = QuadratureRule::default();
    let outer = Outer {
        evaluator,
        quad: MacroQuadrature::new(grid, rule, f)?,
        solves: AtomicUsize::new(0),
    };
    let mut stats = MacroStats {
        macro_newton: cfg.macro_newton,
        ..Default::default()
    };
    let u = vec![0.0; grid.num_dofs()];
    let (u, evals) = if cfg.macro_newton {
        let mut warmup = cfg.clone();
        warmup.max_outer = NEWTON_WARMUP.min(cfg.max_outer);
        let (u, evals) = picard_outer(&outer, &warmup, &mut stats, u, false)?;
        stats.converged = false;
        newton_outer(&outer, cfg, &mut stats, u, evals)?
    } else {
        let cached = evaluator.quantization().is_some();
        picard_outer(&outer, cfg, &mut stats, u, cached)?
    };
    stats.cell_solves = outer.solves.load(Ordering::Relaxed);
    stats.cache_entries = evaluator.cache_len();
    let data = evaluator.data();
    let delta = evaluator.config().delta();
    let points: Vec<PointState> = outer
        .quad
        .points
        .iter()
        .zip(&evals)
        .map(|(pt, ev)| PointState {
            x: pt.x,
            w: pt.w,
            theta: ev.theta,
            xi: ev.xi,
            q: ev.q,
            v: ev.v,
        })
        .collect();
    stats.r_local = points
        .iter()
        .zip(&evals)
        .map(|(pt, ev)| data.projected_residual(ev.chi.values(), pt.theta, pt.xi, delta))
        .fold(0.0, f64::max);
    let u1 = cfg.keep_u1.then(|| evals.into_iter().map(|e| e.chi).collect());
    Ok(TwoScalePair {
        u: MacroFunction::from_dofs(grid, &u),
        rule,
        points,
        u1,
        stats,
    })
}

/// Frozen-micro outer iterations started from `u`.
fn picard_outer(
    outer: &Outer<'_>,
    cfg: &MacroConfig,
    stats: &mut MacroStats,
    mut u: Vec<f64>,
    mut cached: bool,
) -> Result<(Vec<f64>, Vec<CellEval>)> {
    let evaluator = outer.evaluator;
    let grid = &outer.quad.grid;
    let mut evals = if cached {
        outer.eval_cached(&u)?
    } else {
        outer.eval_exact(&u, None)?
    };
    let mut best = f64::INFINITY;
    let mut since_best = 0;
    let mut iterations = 0;
    let frozen_cfg = evaluator.config().final_stage_only().with_tol(0.1 * cfg.tol);
    loop {
        let r = outer.residual(&u, &evals);
        let rn = norm2(&r);
        stats.r_global = rn;
        if !cached && rn <= cfg.tol {
            stats.converged = true;
            break;
        }
        if !cached {
            if rn < 0.5 * best {
                best = rn;
                since_best = 0;
            } else {
                since_best += 1;
            }
        }
        if iterations >= cfg.max_outer || (!cached && since_best >= cfg.stagnation_window) {
            break;
        }
        iterations += 1;
        stats.outer_iterations += 1;
        if cached {
            stats.cached_iterations += 1;
        }
        let sys = FrozenMacro {
            outer,
            evals: &evals,
            delta: evaluator.config().delta(),
        };
        let target = match solve_residual(&sys, u.clone(), &frozen_cfg) {
            Ok((t, _)) => t,
            Err(Error::NotConverged { best, .. }) => best,
            Err(e) => return Err(e),
        };
        let mut change: f64 = 0.0;
        for (ui, ti) in u.iter_mut().zip(&target) {
            let d = cfg.relaxation * (ti - *ui);
            change = change.max(d.abs());
            *ui += d;
        }
        if cached {
            let h = evaluator.quantization().unwrap_or(0.0);
            let hmin = (0..grid.dim).map(|k| grid.h(k)).fold(f64::INFINITY, f64::min);
            // once updates fall below the key spacing the cache cannot resolve them
            if change * (1.0 + 2.0 / hmin) < h || stats.cached_iterations >= cfg.max_outer / 2 {
                cached = false;
                evals = outer.eval_exact(&u, Some(&evals))?;
            } else {
                evals = outer.eval_cached(&u)?;
            }
        } else {
            evals = outer.eval_exact(&u, Some(&evals))?;
        }
    }
    Ok((u, evals))
}

fn newton_outer(
    outer: &Outer<'_>,
    cfg: &MacroConfig,
    stats: &mut MacroStats,
    mut u: Vec<f64>,
    mut evals: Vec<CellEval>,
) -> Result<(Vec<f64>, Vec<CellEval>)> {
    let ev = outer.evaluator;
    let p = ev.p();
    let dim = outer.quad.grid.dim;
    let mut r = outer.residual(&u, &evals);
    let mut rn = norm2(&r);
    let mut since_best = 0;
    let mut best = rn;
    while rn > cfg.tol && stats.outer_iterations < cfg.max_outer && since_best < cfg.stagnation_window {
        stats.outer_iterations += 1;
        let st = outer.states(&u);
        let tangents: Result<Vec<PointTangent>> = st
            .par_iter()
            .enumerate()
            .map(|(k, &(theta, xi))| {
                let warm = &evals[k].chi;
                let mut dqdx = [[0.0; 3]; 2];
                let mut dvdx = [0.0; 3];
                for c in 0..=dim {
                    let base = if c == 0 { theta } else { xi[c - 1] };
                    let h = cfg.fd_step * (1.0 + base.abs());
                    let mut plus = (theta, xi);
                    let mut minus = (theta, xi);
                    if c == 0 {
                        plus.0 += h;
                        minus.0 -= h;
                    } else {
                        plus.1[c - 1] += h;
                        minus.1[c - 1] -= h;
                    }
                    outer.solves.fetch_add(2, Ordering::Relaxed);
                    let ep = ev
                        .evaluate(plus.0, plus.1, Some(warm))
                        .map_err(|e| outer.locate(k, e))?;
                    let em = ev
                        .evaluate(minus.0, minus.1, Some(warm))
                        .map_err(|e| outer.locate(k, e))?;
                    for i in 0..2 {
                        dqdx[i][c] = (ep.q[i] - em.q[i]) / (2.0 * h);
                    }
                    dvdx[c] = (ep.v - em.v) / (2.0 * h);
                }
                let e = &evals[k];
                let fp = df_pow(theta, p);
                Ok(PointTangent {
                    kk: [[dqdx[0][1], dqdx[0][2]], [dqdx[1][1], dqdx[1][2]]],
                    k: [dqdx[0][0], dqdx[1][0]],
                    m: [dvdx[1] * fp, dvdx[2] * fp],
                    c: dvdx[0] * fp + e.v * d2f_pow(theta, p),
                })
            })
            .collect();
        let tangents = tangents?;
        let mat = outer.quad.assemble_matrix(|k| tangents[k]);
        let du = mat.solve(&r, ev.config().lin_tol)?;
        let mut t = 1.0;
        loop {
            let trial: Vec<f64> = u.iter().zip(&du).map(|(a, d)| a - t * d).collect();
            match outer.eval_exact(&trial, Some(&evals)) {
                Ok(te) => {
                    let tr = outer.residual(&trial, &te);
                    let trn = norm2(&tr);
                    if trn <= (1.0 - 1e-4 * t) * rn || t < MIN_NEWTON_STEP {
                        u = trial;
                        evals = te;
                        r = tr;
                        rn = trn;
                        break;
                    }
                }
                Err(e) if t < MIN_NEWTON_STEP => return Err(e),
                Err(_) => {}
            }
            t *= 0.5;
        }
        if rn < 0.5 * best {
            best = rn;
            since_best = 0;
        } else {
            since_best += 1;
        }
    }
    stats.r_global = rn;
    stats.converged = rn <= cfg.tol;
    Ok((u, evals))
}

/// Dual norms of the discrete global and local weak residuals of the pair,
/// recomputed from the stored u and u₁ without any cell solves.
pub fn residual_two_scale(pair: &TwoScalePair, evaluator: &CellEvaluator, f: &Expr) -> Result<(f64, f64)> {
    let u1 = pair
        .u1
        .as_ref()
        .ok_or_else(|| Error::invalid("pair was solved without keeping u1"))?;
    let grid = pair.u.grid();
    let quad = MacroQuadrature::new(grid, pair.rule, f)?;
    if quad.points.len() != u1.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} correctors for {} quadrature points",
            u1.len(),
            quad.points.len()
        )));
    }
    let p = evaluator.p();
    let data = evaluator.data();
    let delta = evaluator.config().delta();
    let dofs = pair.u.dofs();
    let per: Vec<(([f64; 2], f64), f64)> = quad
        .points
        .par_iter()
        .zip(u1)
        .map(|(pt, chi)| {
            let (theta, xi) = pt.state(&dofs);
            let (q, v) = data.flux_and_coupling(chi.values(), xi, delta);
            let local = data.projected_residual(chi.values(), theta, xi, delta);
            ((q, v * df_pow(theta, p) - pt.f), local)
        })
        .collect();
    let r = quad.assemble_vector(|k| per[k].0);
    let r_local = per.iter().map(|x| x.1).fold(0.0, f64::max);
    Ok((norm2(&r), r_local))
}

/// Two-scale pair of the linear model: u₁ = Du·χ + u ζ (split) or Du·χ (gradient).
pub fn linear_pair(
    model: &LinearEffectiveModel,
    corr: &LinearCorrectors,
    ansatz: Ansatz,
    u: &MacroFunction,
) -> Result<TwoScalePair> {
    let grid = u.grid();
    let rule = QuadratureRule::default();
    let quad = MacroQuadrature::new(grid, rule, &Expr::parse("0")?)?;
    let dofs = u.dofs();
    let mut points = Vec::with_capacity(quad.points.len());
    let mut u1 = Vec::with_capacity(quad.points.len());
    for pt in &quad.points {
        let (theta, xi) = pt.state(&dofs);
        let mut chi = corr.zeta.scaled(if ansatz == Ansatz::Split { theta } else { 0.0 });
        for j in 0..grid.dim {
            chi = chi.axpy(xi[j], &corr.chi[j]);
        }
        let (q, v) = model.flux_and_coupling(ansatz, theta, xi);
        points.push(PointState {
            x: pt.x,
            w: pt.w,
            theta,
            xi,
            q,
            v,
        });
        u1.push(chi);
    }
    Ok(TwoScalePair {
        u: u.clone(),
        rule,
        points,
        u1: Some(u1),
        stats: MacroStats {
            converged: true,
            ..Default::default()
        },
    })
}
