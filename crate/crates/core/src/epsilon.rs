//! The oscillating problem at a fixed ε: direct weak form, the ε-uniform
//! integrated-by-parts form, and the a priori boundedness scan.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::Serialize;

use crate::discretization::{fmt17, lp_norm, w1p_seminorm, Element, MacroFunction, MacroGrid, QuadratureRule};
use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::fields::{CorrectorPotential, PeriodicField, PotentialField};
use crate::linalg::SystemMatrix;
use crate::solver::{
    d2f_pow, df_pow, f_pow, solve_residual, NonlinearSystem, RegularizedFlux, SolveStats, SolverConfig,
};

/// Default number of macro elements per period ε.
pub const DEFAULT_ELEMENTS_PER_PERIOD: usize = 64;

/// Default growth factor per ε-halving flagged by the a priori scan.
pub const DEFAULT_GROWTH_FACTOR: f64 = 1.1;

/// Checks that the box sides are whole multiples of ε; returns periods per axis.
pub fn periods_per_axis(eps: f64, grid: &MacroGrid) -> Result<[usize; 2]> {
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::invalid(format!("epsilon must be positive, got {eps}")));
    }
    let mut k = [1usize; 2];
    for axis in 0..grid.dim {
        let len = grid.upper[axis] - grid.lower[axis];
        let r = len / eps;
        let kr = r.round();
        if kr < 1.0 || (r - kr).abs() > 1e-9 * r.max(1.0) {
            return Err(Error::Unresolved {
                eps,
                message: format!("side length {len} is not a whole number of periods"),
            });
        }
        k[axis] = kr as usize;
    }
    Ok(k)
}

/// -div(a(x/ε)|Du|^{p-2}Du) + ε⁻¹V(x/ε)|u|^{p-2}u = f in Ω, u = 0 on ∂Ω.
#[derive(Debug, Clone)]
pub struct EpsilonProblem {
    pub a: PeriodicField,
    pub v: PotentialField,
    pub f: Expr,
    pub p: f64,
    pub eps: f64,
    pub grid: MacroGrid,
    pub rule: QuadratureRule,
}

impl EpsilonProblem {
    /// Uses the cheapest Gauss rule of order 3 that resolves ε on `grid`.
    pub fn new(a: PeriodicField, v: PotentialField, f: Expr, p: f64, eps: f64, grid: MacroGrid) -> Result<Self> {
        let h = (0..grid.dim).map(|k| grid.h(k)).fold(0.0, f64::max);
        let rule = QuadratureRule::resolving(3, h, eps);
        Self::with_rule(a, v, f, p, eps, grid, rule)
    }

    pub fn with_rule(
        a: PeriodicField,
        v: PotentialField,
        f: Expr,
        p: f64,
        eps: f64,
        grid: MacroGrid,
        rule: QuadratureRule,
    ) -> Result<Self> {
        if a.dim() != grid.dim || v.dim() != grid.dim {
            return Err(Error::DimensionMismatch(
                "fields and macro grid dimensions differ".into(),
            ));
        }
        if f.arity() > grid.dim {
            return Err(Error::DimensionMismatch(format!(
                "load '{f}' uses more coordinates than the domain has"
            )));
        }
        if !(p >= 2.0 && p.is_finite()) {
            return Err(Error::invalid(format!("exponent p must be >= 2, got {p}")));
        }
        periods_per_axis(eps, &grid)?;
        if !rule.resolves(&grid, eps) {
            return Err(Error::Unresolved {
                eps,
                message: format!("{} subdivision(s) per element are too coarse", rule.subdivisions),
            });
        }
        let report = crate::fields::validate_hypotheses(&a, v.field(), 64, v.mean_tol())?;
        if !report.elliptic {
            return Err(Error::NotElliptic { min: report.min_a });
        }
        Ok(Self {
            a,
            v,
            f,
            p,
            eps,
            grid,
            rule,
        })
    }
}

/// Template for an ε-sweep: same data, grids built per ε.
#[derive(Debug, Clone)]
pub struct EpsilonTemplate {
    pub a: PeriodicField,
    pub v: PotentialField,
    pub f: Expr,
    pub p: f64,
    pub dim: usize,
    pub lower: [f64; 2],
    pub upper: [f64; 2],
    pub elements_per_period: usize,
}

impl EpsilonTemplate {
    pub fn unit_box(a: PeriodicField, v: PotentialField, f: Expr, p: f64) -> Self {
        let dim = a.dim();
        Self {
            a,
            v,
            f,
            p,
            dim,
            lower: [0.0; 2],
            upper: [1.0; 2],
            elements_per_period: DEFAULT_ELEMENTS_PER_PERIOD,
        }
    }

    pub fn grid(&self, eps: f64) -> Result<MacroGrid> {
        let probe = MacroGrid::new(self.dim, self.lower, self.upper, [2, 2])?;
        let k = periods_per_axis(eps, &probe)?;
        let r = self.elements_per_period.max(1);
        MacroGrid::new(self.dim, self.lower, self.upper, [k[0] * r, k[1] * r])
    }

    pub fn instantiate(&self, eps: f64) -> Result<EpsilonProblem> {
        EpsilonProblem::new(
            self.a.clone(),
            self.v.clone(),
            self.f.clone(),
            self.p,
            eps,
            self.grid(eps)?,
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Form {
    /// ε⁻¹ ∫ V(x/ε) F(u) v
    Direct,
    /// -∫ G(x/ε)·(F'(u) Du v + F(u) Dv)
    IntegratedByParts,
}

#[derive(Debug, Clone, Copy)]
struct Qp {
    w: f64,
    psi: [f64; 4],
    dpsi: [[f64; 2]; 4],
    a: f64,
    v: f64,
    f: f64,
    g: [f64; 2],
}

/// Discrete residual system of the ε-problem over the interior nodal unknowns.
pub struct EpsilonSystem<'a> {
    prob: &'a EpsilonProblem,
    form: Form,
    elements: Vec<Element>,
    qps: Vec<Vec<Qp>>,
}

impl<'a> EpsilonSystem<'a> {
    pub fn new(prob: &'a EpsilonProblem, form: Form, corrector: Option<&CorrectorPotential>) -> Result<Self> {
        if form == Form::IntegratedByParts && corrector.is_none() {
            return Err(Error::invalid("integrated-by-parts form needs a corrector potential"));
        }
        if let Some(c) = corrector {
            if c.phi().grid().dim != prob.grid.dim {
                return Err(Error::DimensionMismatch(
                    "corrector and macro grid dimensions differ".into(),
                ));
            }
        }
        let d = prob.grid.dim;
        let q = prob.rule.reference(d);
        let mut elements = Vec::with_capacity(prob.grid.num_elements());
        let mut qps = Vec::with_capacity(prob.grid.num_elements());
        for e in 0..prob.grid.num_elements() {
            let el = prob.grid.element(e);
            let pts = q
                .on(&el)
                .map(|(s, x, w)| {
                    let (psi, dpsi) = el.shape(&s);
                    let y = [x[0] / prob.eps, x[1] / prob.eps];
                    Qp {
                        w,
                        psi,
                        dpsi,
                        a: prob.a.sample(&y[..d]),
                        v: prob.v.sample(&y[..d]),
                        f: prob.f.eval(&x[..d]),
                        g: corrector.map(|c| c.g(&y[..d])).unwrap_or([0.0; 2]),
                    }
                })
                .collect();
            elements.push(el);
            qps.push(pts);
        }
        Ok(Self {
            prob,
            form,
            elements,
            qps,
        })
    }

    fn local(&self, el: &Element, u: &[f64]) -> [f64; 4] {
        let mut ul = [0.0; 4];
        for a in 0..el.n_local() {
            if let Some(k) = self.prob.grid.dof(el.nodes[a]) {
                ul[a] = u[k];
            }
        }
        ul
    }

    fn at(qp: &Qp, ul: &[f64; 4], nl: usize) -> (f64, [f64; 2]) {
        let mut v = 0.0;
        let mut g = [0.0; 2];
        for a in 0..nl {
            v += qp.psi[a] * ul[a];
            g[0] += qp.dpsi[a][0] * ul[a];
            g[1] += qp.dpsi[a][1] * ul[a];
        }
        (v, g)
    }

    /// Potential-term vector ⟨P(u), ψ_i⟩ of the chosen form at interior unknowns `u`.
    pub fn potential_vector(&self, u: &[f64]) -> Vec<f64> {
        self.assemble_vector(u, 0.0, true)
    }

    fn assemble_vector(&self, u: &[f64], delta: f64, potential_only: bool) -> Vec<f64> {
        let p = self.prob.p;
        let inv_eps = 1.0 / self.prob.eps;
        let flux = RegularizedFlux { p, delta };
        let mut r = vec![0.0; self.prob.grid.num_dofs()];
        for (el, pts) in self.elements.iter().zip(&self.qps) {
            let nl = el.n_local();
            let ul = self.local(el, u);
            let mut re = [0.0; 4];
            for qp in pts {
                let (uh, du) = Self::at(qp, &ul, nl);
                let fl = if potential_only { [0.0; 2] } else { flux.flux(qp.a, &du) };
                let load = if potential_only { 0.0 } else { qp.f };
                for i in 0..nl {
                    let mut t = fl[0] * qp.dpsi[i][0] + fl[1] * qp.dpsi[i][1] - load * qp.psi[i];
                    t += match self.form {
                        Form::Direct => inv_eps * qp.v * f_pow(uh, p) * qp.psi[i],
                        Form::IntegratedByParts => {
                            let gdu = qp.g[0] * du[0] + qp.g[1] * du[1];
                            let gdpsi = qp.g[0] * qp.dpsi[i][0] + qp.g[1] * qp.dpsi[i][1];
                            -(df_pow(uh, p) * gdu * qp.psi[i] + f_pow(uh, p) * gdpsi)
                        }
                    };
                    re[i] += qp.w * t;
                }
            }
            for i in 0..nl {
                if let Some(k) = self.prob.grid.dof(el.nodes[i]) {
                    r[k] += re[i];
                }
            }
        }
        r
    }

    fn assemble_matrix(&self, u: &[f64], delta: f64, picard: bool) -> SystemMatrix {
        let p = self.prob.p;
        let inv_eps = 1.0 / self.prob.eps;
        let flux = RegularizedFlux { p, delta };
        let bw = self.prob.grid.dof_bandwidth();
        let mut m = SystemMatrix::new(self.prob.grid.num_dofs(), bw, bw, None, 0);
        for (el, pts) in self.elements.iter().zip(&self.qps) {
            let nl = el.n_local();
            let ul = self.local(el, u);
            let mut ke = [[0.0; 4]; 4];
            for qp in pts {
                let (uh, du) = Self::at(qp, &ul, nl);
                let jf = if picard {
                    let w = qp.a * flux.weight(&du);
                    [[w, 0.0], [0.0, w]]
                } else {
                    flux.jacobian(qp.a, &du)
                };
                for i in 0..nl {
                    for j in 0..nl {
                        let dj = qp.dpsi[j];
                        let jd = [jf[0][0] * dj[0] + jf[0][1] * dj[1], jf[1][0] * dj[0] + jf[1][1] * dj[1]];
                        let mut t = jd[0] * qp.dpsi[i][0] + jd[1] * qp.dpsi[i][1];
                        t += match self.form {
                            Form::Direct => {
                                let dfu = if picard && p != 2.0 {
                                    uh.abs().powf(p - 2.0)
                                } else {
                                    df_pow(uh, p)
                                };
                                inv_eps * qp.v * dfu * qp.psi[j] * qp.psi[i]
                            }
                            Form::IntegratedByParts => {
                                let gdu = qp.g[0] * du[0] + qp.g[1] * du[1];
                                let gdj = qp.g[0] * dj[0] + qp.g[1] * dj[1];
                                let gdi = qp.g[0] * qp.dpsi[i][0] + qp.g[1] * qp.dpsi[i][1];
                                -(d2f_pow(uh, p) * qp.psi[j] * gdu * qp.psi[i]
                                    + df_pow(uh, p) * gdj * qp.psi[i]
                                    + df_pow(uh, p) * qp.psi[j] * gdi)
                            }
                        };
                        ke[i][j] += qp.w * t;
                    }
                }
            }
            for i in 0..nl {
                let Some(ki) = self.prob.grid.dof(el.nodes[i]) else {
                    continue;
                };
                for j in 0..nl {
                    if let Some(kj) = self.prob.grid.dof(el.nodes[j]) {
                        m.add(ki, kj, ke[i][j]);
                    }
                }
            }
        }
        m
    }
}

impl NonlinearSystem for EpsilonSystem<'_> {
    fn dim(&self) -> usize {
        self.prob.grid.num_dofs()
    }

    fn residual(&self, u: &[f64], delta: f64) -> Vec<f64> {
        self.assemble_vector(u, delta, false)
    }

    fn jacobian(&self, u: &[f64], delta: f64) -> SystemMatrix {
        self.assemble_matrix(u, delta, false)
    }

    fn picard_matrix(&self, u: &[f64], delta: f64) -> SystemMatrix {
        if self.form == Form::Direct {
            self.assemble_matrix(u, delta, true)
        } else {
            self.assemble_matrix(u, delta, false)
        }
    }

    fn is_linear(&self) -> bool {
        self.prob.p == 2.0
    }
}

/// Solves the direct weak form from the zero initial guess.
pub fn solve_epsilon(prob: &EpsilonProblem, config: &SolverConfig) -> Result<(MacroFunction, SolveStats)> {
    let sys = EpsilonSystem::new(prob, Form::Direct, None)?;
    let (u, stats) = solve_residual(&sys, vec![0.0; sys.dim()], config)?;
    Ok((MacroFunction::from_dofs(&prob.grid, &u), stats))
}

/// Solves the integrated-by-parts form built from `corrector` (ΔΦ = V).
pub fn solve_epsilon_ibp(
    prob: &EpsilonProblem,
    corrector: &CorrectorPotential,
    config: &SolverConfig,
) -> Result<(MacroFunction, SolveStats)> {
    let sys = EpsilonSystem::new(prob, Form::IntegratedByParts, Some(corrector))?;
    let (u, stats) = solve_residual(&sys, vec![0.0; sys.dim()], config)?;
    Ok((MacroFunction::from_dofs(&prob.grid, &u), stats))
}

#[derive(Debug, Clone, Serialize)]
pub struct ScanRow {
    pub eps: f64,
    pub lp_norm: f64,
    pub w1p_seminorm: f64,
    pub iterations: usize,
    pub residual: f64,
    pub error: Option<String>,
}

impl ScanRow {
    /// ‖u‖_{W^{1,p}} = ‖u‖_{L^p} + ‖Du‖_{L^p}.
    pub fn w1p_norm(&self) -> f64 {
        self.lp_norm + self.w1p_seminorm
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct AprioriScan {
    pub p: f64,
    pub growth_factor: f64,
    pub rows: Vec<ScanRow>,
    /// Some consecutive pair grew by more than `growth_factor`.
    pub growth_flag: bool,
}

impl AprioriScan {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("eps,Lp_norm,W1p_seminorm,iterations,residual\n");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{},{},{}",
                fmt17(r.eps),
                fmt17(r.lp_norm),
                fmt17(r.w1p_seminorm),
                r.iterations,
                fmt17(r.residual)
            );
        }
        s
    }

    /// Whether every row succeeded and the largest norm stays within
    /// `factor` times the larger of the first two.
    pub fn bounded(&self, factor: f64) -> bool {
        if self.rows.iter().any(|r| r.error.is_some()) {
            return false;
        }
        let head = self.rows.iter().take(2).map(ScanRow::w1p_norm).fold(0.0, f64::max);
        self.max_norm() <= factor * head
    }

    /// Largest W^{1,p} norm over successful rows.
    pub fn max_norm(&self) -> f64 {
        self.rows
            .iter()
            .filter(|r| r.error.is_none())
            .map(ScanRow::w1p_norm)
            .fold(0.0, f64::max)
    }
}

/// Solves the template at every ε (concurrently) and tabulates ‖u_ε‖_{W^{1,p}}.
pub fn apriori_scan(
    template: &EpsilonTemplate,
    eps_list: &[f64],
    config: &SolverConfig,
    growth_factor: f64,
) -> AprioriScan {
    scan_with_solutions(template, eps_list, config, growth_factor).0
}

/// [`apriori_scan`] keeping the solutions (`None` where a solve failed).
pub fn scan_with_solutions(
    template: &EpsilonTemplate,
    eps_list: &[f64],
    config: &SolverConfig,
    growth_factor: f64,
) -> (AprioriScan, Vec<Option<MacroFunction>>) {
    let p = template.p;
    let (rows, solutions): (Vec<ScanRow>, Vec<Option<MacroFunction>>) = eps_list
        .par_iter()
        .map(|&eps| {
            let solved = template.instantiate(eps).and_then(|prob| solve_epsilon(&prob, config));
            match solved {
                Ok((u, stats)) => (
                    ScanRow {
                        eps,
                        lp_norm: lp_norm(&u, p).unwrap_or(f64::NAN),
                        w1p_seminorm: w1p_seminorm(&u, p).unwrap_or(f64::NAN),
                        iterations: stats.iterations,
                        residual: stats.final_residual,
                        error: None,
                    },
                    Some(u),
                ),
                Err(e) => {
                    let (iterations, residual) = match &e {
                        Error::NotConverged { stats, .. } => (stats.iterations, stats.final_residual),
                        _ => (0, f64::NAN),
                    };
                    let row = ScanRow {
                        eps,
                        lp_norm: f64::NAN,
                        w1p_seminorm: f64::NAN,
                        iterations,
                        residual,
                        error: Some(e.to_string()),
                    };
                    (row, None)
                }
            }
        })
        .collect();
    let growth_flag = rows
        .windows(2)
        .filter(|w| w[0].error.is_none() && w[1].error.is_none())
        .any(|w| w[1].w1p_norm() > growth_factor * w[0].w1p_norm());
    let scan = AprioriScan {
        p,
        growth_factor,
        rows,
        growth_flag,
    };
    (scan, solutions)
}
