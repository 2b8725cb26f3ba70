//! Periodic cell problems: linear correctors for p = 2 and the nonlinear
//! parameter-dependent corrector χ(θ, ξ) with its flux q and coupling v.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::sync::{Arc, RwLock};

use rayon::prelude::*;
use serde::Serialize;

use crate::discretization::assembly::{apply_sym, periodic_load, periodic_stiffness, SymTensor};
use crate::discretization::{fmt17, lp_norm, w1p_seminorm, CellFunction, CellGrid, Element, QuadratureRule};
use crate::error::{Error, Result};
use crate::fields::{PeriodicField, PotentialField};
use crate::linalg::SystemMatrix;
use crate::solver::{f_pow, solve_residual, NonlinearSystem, RegularizedFlux, SolveStats, SolverConfig};

/// Quadrature used for all cell integrals.
pub const CELL_RULE: QuadratureRule = QuadratureRule {
    order: 3,
    subdivisions: 1,
};

/// Piecewise-constant symmetric tensor coefficient on an m^d cell partition.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorField {
    dim: usize,
    m: usize,
    values: Vec<SymTensor>,
}

impl TensorField {
    pub fn new(dim: usize, m: usize, values: Vec<SymTensor>) -> Result<Self> {
        if !(dim == 1 || dim == 2) || m == 0 {
            return Err(Error::invalid("tensor field needs dimension 1 or 2 and m >= 1"));
        }
        if values.len() != m.pow(dim as u32) {
            return Err(Error::DimensionMismatch(format!(
                "tensor field with m={m} needs {} cells, got {}",
                m.pow(dim as u32),
                values.len()
            )));
        }
        for t in &values {
            let min_eig = if dim == 1 {
                t[0]
            } else {
                let tr = 0.5 * (t[0] + t[2]);
                let disc = (0.25 * (t[0] - t[2]).powi(2) + t[1] * t[1]).sqrt();
                tr - disc
            };
            if !(min_eig > 0.0) {
                return Err(Error::NotElliptic { min: min_eig });
            }
        }
        Ok(Self { dim, m, values })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn sample(&self, y: &[f64]) -> SymTensor {
        let idx = |t: f64| ((crate::discretization::wrap(t) * self.m as f64).floor() as usize).min(self.m - 1);
        let i = idx(y[0]);
        let j = if self.dim == 2 { idx(y[1]) } else { 0 };
        self.values[i + self.m * j]
    }
}

/// Diffusion coefficient accepted by the linear corrector path.
#[derive(Debug, Clone, PartialEq)]
pub enum LinearCoefficient {
    Scalar(PeriodicField),
    Tensor(TensorField),
}

impl LinearCoefficient {
    pub fn dim(&self) -> usize {
        match self {
            Self::Scalar(f) => f.dim(),
            Self::Tensor(t) => t.dim(),
        }
    }

    pub fn sample(&self, y: &[f64]) -> SymTensor {
        match self {
            Self::Scalar(f) => {
                let a = f.sample(y);
                [a, 0.0, a]
            }
            Self::Tensor(t) => t.sample(y),
        }
    }
}

impl From<PeriodicField> for LinearCoefficient {
    fn from(f: PeriodicField) -> Self {
        Self::Scalar(f)
    }
}

/// χ_j with -div(a(e_j + Dχ_j)) = 0 and ζ with -div(a Dζ) = -V, all zero-mean.
#[derive(Debug, Clone)]
pub struct LinearCorrectors {
    pub grid: CellGrid,
    pub chi: Vec<CellFunction>,
    pub zeta: CellFunction,
    /// Max-norm of the discrete residuals.
    pub residual: f64,
}

pub fn solve_linear_correctors(
    a: &LinearCoefficient,
    v: &PotentialField,
    grid: CellGrid,
    lin_tol: f64,
) -> Result<LinearCorrectors> {
    if a.dim() != grid.dim || v.dim() != grid.dim {
        return Err(Error::DimensionMismatch(
            "coefficients and cell grid dimensions differ".into(),
        ));
    }
    let k = periodic_stiffness(grid, |y| a.sample(y), CELL_RULE);
    let n = grid.num_nodes();
    let residual_of = |x: &CellFunction, rhs: &[f64]| {
        let mut full = x.values().to_vec();
        full.push(0.0);
        let kx = k.mul_vec(&full);
        kx[..n].iter().zip(rhs).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    };
    let mut chi = Vec::with_capacity(grid.dim);
    let mut residual: f64 = 0.0;
    for j in 0..grid.dim {
        let rhs = periodic_load(
            grid,
            |_| 0.0,
            |y| {
                let mut e = [0.0; 2];
                e[j] = 1.0;
                let ae = apply_sym(&a.sample(y), &e);
                [-ae[0], -ae[1]]
            },
            CELL_RULE,
        );
        let (c, _) = crate::discretization::assembly::solve_periodic(&k, &rhs, grid, lin_tol)?;
        residual = residual.max(residual_of(&c, &rhs));
        chi.push(c);
    }
    let rhs = periodic_load(grid, |y| -v.sample(y), |_| [0.0; 2], CELL_RULE);
    let (zeta, _) = crate::discretization::assembly::solve_periodic(&k, &rhs, grid, lin_tol)?;
    residual = residual.max(residual_of(&zeta, &rhs));
    Ok(LinearCorrectors {
        grid,
        chi,
        zeta,
        residual,
    })
}

#[derive(Debug, Clone, Copy)]
struct CellQp {
    w: f64,
    y: [f64; 2],
    psi: [f64; 4],
    dpsi: [[f64; 2]; 4],
    a: f64,
    v: f64,
}

/// Coefficients sampled at the cell quadrature points, shared by all cell solves.
#[derive(Debug, Clone)]
pub struct CellData {
    pub grid: CellGrid,
    pub p: f64,
    elements: Vec<Element>,
    qps: Vec<Vec<CellQp>>,
    /// Σ_q w_q V(y_q): the discrete mean of V.
    v_mean: f64,
    /// ∫ψ_i for every node.
    constraint: f64,
}

impl CellData {
    pub fn new(a: &PeriodicField, v: &PotentialField, p: f64, grid: CellGrid) -> Result<Self> {
        if a.dim() != grid.dim || v.dim() != grid.dim {
            return Err(Error::DimensionMismatch(
                "coefficients and cell grid dimensions differ".into(),
            ));
        }
        if !(p >= 2.0 && p.is_finite()) {
            return Err(Error::invalid(format!("exponent p must be >= 2, got {p}")));
        }
        let q = CELL_RULE.reference(grid.dim);
        let mut elements = Vec::with_capacity(grid.num_elements());
        let mut qps = Vec::with_capacity(grid.num_elements());
        let mut v_mean = 0.0;
        let mut min_a = f64::INFINITY;
        for e in 0..grid.num_elements() {
            let el = grid.element(e);
            let pts: Vec<CellQp> = q
                .on(&el)
                .map(|(s, y, w)| {
                    let (psi, dpsi) = el.shape(&s);
                    CellQp {
                        w,
                        y,
                        psi,
                        dpsi,
                        a: a.sample(&y[..grid.dim]),
                        v: v.sample(&y[..grid.dim]),
                    }
                })
                .collect();
            for qp in &pts {
                v_mean += qp.w * qp.v;
                min_a = min_a.min(qp.a);
            }
            elements.push(el);
            qps.push(pts);
        }
        if !(min_a > 0.0) {
            return Err(Error::NotElliptic { min: min_a });
        }
        Ok(Self {
            grid,
            p,
            elements,
            qps,
            v_mean,
            constraint: grid.h().powi(grid.dim as i32),
        })
    }

    /// Discrete mean of V over the cell quadrature.
    pub fn v_mean(&self) -> f64 {
        self.v_mean
    }

    fn local(&self, el: &Element, x: &[f64]) -> [f64; 4] {
        let mut l = [0.0; 4];
        for a in 0..el.n_local() {
            l[a] = x[el.nodes[a]];
        }
        l
    }

    #[inline]
    fn grad(qp: &CellQp, l: &[f64; 4], nl: usize) -> [f64; 2] {
        let mut g = [0.0; 2];
        for a in 0..nl {
            g[0] += qp.dpsi[a][0] * l[a];
            g[1] += qp.dpsi[a][1] * l[a];
        }
        g
    }

    /// q = ∫ A(y, ξ + Dχ) and v = ∫ V χ, recomputed from nodal χ.
    pub fn flux_and_coupling(&self, chi: &[f64], xi: [f64; 2], delta: f64) -> ([f64; 2], f64) {
        let flux = RegularizedFlux { p: self.p, delta };
        let mut q = [0.0; 2];
        let mut v = 0.0;
        for (el, pts) in self.elements.iter().zip(&self.qps) {
            let nl = el.n_local();
            let l = self.local(el, chi);
            for qp in pts {
                let dchi = Self::grad(qp, &l, nl);
                let fl = flux.flux(qp.a, &[xi[0] + dchi[0], xi[1] + dchi[1]]);
                let val: f64 = (0..nl).map(|a| qp.psi[a] * l[a]).sum();
                q[0] += qp.w * fl[0];
                q[1] += qp.w * fl[1];
                v += qp.w * qp.v * val;
            }
        }
        (q, v)
    }

    /// Nodal residual of the cell equation without the multiplier term.
    pub fn nodal_residual(&self, chi: &[f64], theta: f64, xi: [f64; 2], delta: f64) -> Vec<f64> {
        let flux = RegularizedFlux { p: self.p, delta };
        let ft = f_pow(theta, self.p);
        let mut r = vec![0.0; self.grid.num_nodes()];
        for (el, pts) in self.elements.iter().zip(&self.qps) {
            let nl = el.n_local();
            let l = self.local(el, chi);
            for qp in pts {
                let dchi = Self::grad(qp, &l, nl);
                let fl = flux.flux(qp.a, &[xi[0] + dchi[0], xi[1] + dchi[1]]);
                for i in 0..nl {
                    r[el.nodes[i]] += qp.w * (fl[0] * qp.dpsi[i][0] + fl[1] * qp.dpsi[i][1] + ft * qp.v * qp.psi[i]);
                }
            }
        }
        r
    }

    /// Euclidean norm of the nodal residual after removing its component along
    /// the constraint vector (the part a multiplier can absorb).
    pub fn projected_residual(&self, chi: &[f64], theta: f64, xi: [f64; 2], delta: f64) -> f64 {
        let r = self.nodal_residual(chi, theta, xi, delta);
        let mean = r.iter().sum::<f64>() / r.len() as f64;
        r.iter().map(|x| (x - mean).powi(2)).sum::<f64>().sqrt()
    }

    /// Adds ∂r/∂χ (or its frozen-weight version) at state χ into `m` at
    /// offset `off`, with `scale` applied.
    pub(crate) fn add_tangent(
        &self,
        m: &mut SystemMatrix,
        off: usize,
        chi: &[f64],
        xi: [f64; 2],
        delta: f64,
        picard: bool,
    ) {
        let flux = RegularizedFlux { p: self.p, delta };
        for (el, pts) in self.elements.iter().zip(&self.qps) {
            let nl = el.n_local();
            let l = self.local(el, chi);
            let mut ke = [[0.0; 4]; 4];
            for qp in pts {
                let dchi = Self::grad(qp, &l, nl);
                let g = [xi[0] + dchi[0], xi[1] + dchi[1]];
                let jf = if picard {
                    let w = qp.a * flux.weight(&g);
                    [[w, 0.0], [0.0, w]]
                } else {
                    flux.jacobian(qp.a, &g)
                };
                for j in 0..nl {
                    let dj = qp.dpsi[j];
                    let jd = [jf[0][0] * dj[0] + jf[0][1] * dj[1], jf[1][0] * dj[0] + jf[1][1] * dj[1]];
                    for i in 0..nl {
                        ke[i][j] += qp.w * (jd[0] * qp.dpsi[i][0] + jd[1] * qp.dpsi[i][1]);
                    }
                }
            }
            for i in 0..nl {
                for j in 0..nl {
                    m.add(off + el.nodes[i], off + el.nodes[j], ke[i][j]);
                }
            }
        }
    }

    /// Flux with χ frozen: q̃(ξ) = ∫ A(y, ξ + Dχ) and ∂q̃/∂ξ.
    pub fn frozen_flux(&self, chi: &[f64], xi: [f64; 2], delta: f64) -> ([f64; 2], [[f64; 2]; 2]) {
        let flux = RegularizedFlux { p: self.p, delta };
        let mut q = [0.0; 2];
        let mut dq = [[0.0; 2]; 2];
        for (el, pts) in self.elements.iter().zip(&self.qps) {
            let nl = el.n_local();
            let l = self.local(el, chi);
            for qp in pts {
                let dchi = Self::grad(qp, &l, nl);
                let g = [xi[0] + dchi[0], xi[1] + dchi[1]];
                let fl = flux.flux(qp.a, &g);
                let j = flux.jacobian(qp.a, &g);
                for r in 0..2 {
                    q[r] += qp.w * fl[r];
                    for c in 0..2 {
                        dq[r][c] += qp.w * j[r][c];
                    }
                }
            }
        }
        (q, dq)
    }

    /// ∫_Y g(y, χ(y), Dχ(y)) dy by the cell quadrature.
    pub fn integrate(&self, chi: &[f64], g: impl Fn(&[f64], f64, [f64; 2]) -> f64) -> f64 {
        let d = self.grid.dim;
        let mut total = 0.0;
        for (el, pts) in self.elements.iter().zip(&self.qps) {
            let nl = el.n_local();
            let l = self.local(el, chi);
            for qp in pts {
                let val: f64 = (0..nl).map(|a| qp.psi[a] * l[a]).sum();
                total += qp.w * g(&qp.y[..d], val, Self::grad(qp, &l, nl));
            }
        }
        total
    }

    pub fn constraint_weight(&self) -> f64 {
        self.constraint
    }
}

/// The nonlinear cell problem at fixed (θ, ξ) as a bordered residual system
/// in (χ, λ).
pub struct CellProblem<'a> {
    data: &'a CellData,
    theta: f64,
    xi: [f64; 2],
}

impl<'a> CellProblem<'a> {
    pub fn new(data: &'a CellData, theta: f64, xi: [f64; 2]) -> Self {
        Self { data, theta, xi }
    }

    fn matrix(&self, u: &[f64], delta: f64, picard: bool) -> SystemMatrix {
        let grid = self.data.grid;
        let n = grid.num_nodes();
        let mut m = crate::discretization::assembly::cell_system(grid);
        self.data.add_tangent(&mut m, 0, &u[..n], self.xi, delta, picard);
        crate::discretization::assembly::add_mean_constraint(grid, &mut m);
        m
    }
}

impl NonlinearSystem for CellProblem<'_> {
    fn dim(&self) -> usize {
        self.data.grid.num_nodes() + 1
    }

    fn residual(&self, u: &[f64], delta: f64) -> Vec<f64> {
        let n = self.data.grid.num_nodes();
        let c = self.data.constraint;
        let mut r = self.data.nodal_residual(&u[..n], self.theta, self.xi, delta);
        let lam = u[n];
        let mut mean = 0.0;
        for (ri, ui) in r.iter_mut().zip(&u[..n]) {
            *ri += c * lam;
            mean += c * ui;
        }
        r.push(mean);
        r
    }

    fn jacobian(&self, u: &[f64], delta: f64) -> SystemMatrix {
        self.matrix(u, delta, false)
    }

    fn picard_matrix(&self, u: &[f64], delta: f64) -> SystemMatrix {
        self.matrix(u, delta, true)
    }

    fn is_linear(&self) -> bool {
        self.data.p == 2.0
    }
}

/// Solution of the nonlinear cell problem at (θ, ξ).
#[derive(Debug, Clone, Serialize)]
pub struct NonlinearCellSolution {
    pub theta: f64,
    pub xi: [f64; 2],
    #[serde(skip)]
    pub chi: CellFunction,
    pub q: [f64; 2],
    pub v: f64,
    /// Projected residual norm of the cell equation at the returned χ.
    pub residual: f64,
    pub stats: SolveStats,
}

/// Tolerance for the Fredholm check |F(θ) Σ_q w_q V(y_q)|.
pub const DEFAULT_FREDHOLM_TOL: f64 = 1e-12;

fn fredholm_gate(data: &CellData, theta: f64) -> Result<()> {
    let defect = f_pow(theta, data.p) * data.v_mean;
    if defect.abs() > DEFAULT_FREDHOLM_TOL * (1.0 + f_pow(theta, data.p).abs()) {
        return Err(Error::NonZeroMean {
            residual: defect,
            tol: DEFAULT_FREDHOLM_TOL,
        });
    }
    Ok(())
}

/// Solves the cell problem at (θ, ξ) from `init` (zero when `None`).
pub fn solve_cell_with(
    data: &CellData,
    theta: f64,
    xi: [f64; 2],
    init: Option<&CellFunction>,
    config: &SolverConfig,
) -> Result<NonlinearCellSolution> {
    fredholm_gate(data, theta)?;
    let grid = data.grid;
    let n = grid.num_nodes();
    let mut xi = xi;
    if grid.dim == 1 {
        xi[1] = 0.0;
    }
    let mut u0 = match init {
        Some(c) => {
            if c.grid() != grid {
                return Err(Error::DimensionMismatch(
                    "initial corrector lives on another cell grid".into(),
                ));
            }
            c.clone().zero_mean().values().to_vec()
        }
        None => vec![0.0; n],
    };
    u0.push(0.0);
    let sys = CellProblem::new(data, theta, xi);
    let (u, stats) = solve_residual(&sys, u0, config)?;
    let chi = CellFunction::from_nodal(grid, u[..n].to_vec())?;
    let delta = config.delta();
    let (q, v) = data.flux_and_coupling(chi.values(), xi, delta);
    let residual = data.projected_residual(chi.values(), theta, xi, delta);
    Ok(NonlinearCellSolution {
        theta,
        xi,
        chi,
        q,
        v,
        residual,
        stats,
    })
}

/// Solves -div_y A(y, ξ + D_yχ) = -V F(θ) for zero-mean periodic χ.
#[allow(clippy::too_many_arguments)]
pub fn solve_nonlinear_cell(
    a: &PeriodicField,
    v: &PotentialField,
    p: f64,
    theta: f64,
    xi: [f64; 2],
    grid: CellGrid,
    config: &SolverConfig,
) -> Result<NonlinearCellSolution> {
    let data = CellData::new(a, v, p, grid)?;
    solve_cell_with(&data, theta, xi, None, config)
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct UniquenessReport {
    /// ‖D_yχ₁ - D_yχ₂‖_{L^p(Y)}
    pub gradient_discrepancy: f64,
    /// ‖χ₁ - χ₂‖_{L^p(Y)}
    pub value_discrepancy: f64,
}

/// Solves the same cell problem from two starts and compares the results.
#[allow(clippy::too_many_arguments)]
pub fn uniqueness_check(
    data: &CellData,
    theta: f64,
    xi: [f64; 2],
    init1: Option<&CellFunction>,
    init2: Option<&CellFunction>,
    config: &SolverConfig,
) -> Result<UniquenessReport> {
    let s1 = solve_cell_with(data, theta, xi, init1, config)?;
    let s2 = solve_cell_with(data, theta, xi, init2, config)?;
    let diff = s1.chi.axpy(-1.0, &s2.chi);
    Ok(UniquenessReport {
        gradient_discrepancy: w1p_seminorm(&diff, data.p)?,
        value_discrepancy: lp_norm(&diff, data.p)?,
    })
}

/// Result of one evaluator query.
#[derive(Debug, Clone)]
pub struct CellEval {
    pub theta: f64,
    pub xi: [f64; 2],
    pub q: [f64; 2],
    pub v: f64,
    pub residual: f64,
    pub chi: CellFunction,
}

impl From<NonlinearCellSolution> for CellEval {
    fn from(s: NonlinearCellSolution) -> Self {
        Self {
            theta: s.theta,
            xi: s.xi,
            q: s.q,
            v: s.v,
            residual: s.residual,
            chi: s.chi,
        }
    }
}

type Key = (i64, i64, i64);

/// On-demand cell solver for fixed (a, V, p) with an optional memo table keyed
/// by quantized (θ, ξ). Cached entries are computed at the quantized point, so
/// they are pure functions of the key.
pub struct CellEvaluator {
    data: Arc<CellData>,
    config: SolverConfig,
    quantization: Option<f64>,
    cache: RwLock<HashMap<Key, Arc<CellEval>>>,
}

/// Default memo quantization step in each coordinate.
pub const DEFAULT_QUANTIZATION: f64 = 1e-3;

impl CellEvaluator {
    pub fn new(data: CellData, config: SolverConfig, quantization: Option<f64>) -> Result<Self> {
        config.validate()?;
        if let Some(h) = quantization {
            if !(h > 0.0 && h.is_finite()) {
                return Err(Error::Config(format!("quantization step must be positive, got {h}")));
            }
        }
        Ok(Self {
            data: Arc::new(data),
            config,
            quantization,
            cache: RwLock::new(HashMap::new()),
        })
    }

    pub fn data(&self) -> &CellData {
        &self.data
    }

    pub fn p(&self) -> f64 {
        self.data.p
    }

    pub fn dim(&self) -> usize {
        self.data.grid.dim
    }

    pub fn config(&self) -> &SolverConfig {
        &self.config
    }

    pub fn quantization(&self) -> Option<f64> {
        self.quantization
    }

    pub fn cache_len(&self) -> usize {
        self.cache.read().map(|c| c.len()).unwrap_or(0)
    }

    /// Uncached solve at exactly (θ, ξ); `warm` restricts the solve to the final
    /// continuation stage starting from the given corrector.
    pub fn evaluate(&self, theta: f64, xi: [f64; 2], warm: Option<&CellFunction>) -> Result<CellEval> {
        let solved = match warm {
            Some(w) => solve_cell_with(&self.data, theta, xi, Some(w), &self.config.final_stage_only())
                .or_else(|_| solve_cell_with(&self.data, theta, xi, None, &self.config)),
            None => solve_cell_with(&self.data, theta, xi, None, &self.config),
        };
        solved.map(CellEval::from).map_err(|e| Error::CellFailure {
            location: vec![theta, xi[0], xi[1]],
            source: Box::new(e),
        })
    }

    /// Memoized solve; falls back to `evaluate` when quantization is disabled.
    pub fn evaluate_cached(&self, theta: f64, xi: [f64; 2]) -> Result<Arc<CellEval>> {
        let Some(h) = self.quantization else {
            return self.evaluate(theta, xi, None).map(Arc::new);
        };
        let key = (
            (theta / h).round() as i64,
            (xi[0] / h).round() as i64,
            (xi[1] / h).round() as i64,
        );
        if let Some(hit) = self.cache.read().ok().and_then(|c| c.get(&key).cloned()) {
            return Ok(hit);
        }
        let eval = Arc::new(self.evaluate(key.0 as f64 * h, [key.1 as f64 * h, key.2 as f64 * h], None)?);
        if let Ok(mut c) = self.cache.write() {
            return Ok(c.entry(key).or_insert(eval).clone());
        }
        Ok(eval)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct FluxRow {
    pub theta: f64,
    pub xi: [f64; 2],
    pub q: [f64; 2],
    pub v: f64,
    pub residual: f64,
}

/// Tabulates (q, v) over the product of `thetas` and `xis` (concurrently, ordered).
pub fn flux_table(evaluator: &CellEvaluator, thetas: &[f64], xis: &[[f64; 2]]) -> Result<Vec<FluxRow>> {
    let points: Vec<(f64, [f64; 2])> = thetas.iter().flat_map(|&t| xis.iter().map(move |&x| (t, x))).collect();
    points
        .par_iter()
        .map(|&(theta, xi)| {
            let e = evaluator.evaluate(theta, xi, None)?;
            Ok(FluxRow {
                theta,
                xi: e.xi,
                q: e.q,
                v: e.v,
                residual: e.residual,
            })
        })
        .collect()
}

pub fn flux_table_csv(rows: &[FluxRow], dim: usize) -> String {
    let mut s = String::from(if dim == 1 {
        "theta,xi1,q1,v,residual\n"
    } else {
        "theta,xi1,xi2,q1,q2,v,residual\n"
    });
    for r in rows {
        if dim == 1 {
            let _ = writeln!(
                s,
                "{},{},{},{},{}",
                fmt17(r.theta),
                fmt17(r.xi[0]),
                fmt17(r.q[0]),
                fmt17(r.v),
                fmt17(r.residual)
            );
        } else {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{}",
                fmt17(r.theta),
                fmt17(r.xi[0]),
                fmt17(r.xi[1]),
                fmt17(r.q[0]),
                fmt17(r.q[1]),
                fmt17(r.v),
                fmt17(r.residual)
            );
        }
    }
    s
}
