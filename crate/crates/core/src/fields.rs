//! Y-periodic coefficient data: the diffusion coefficient `a`, the zero-mean
//! potential `V`, hypothesis checks and the corrector potential Φ with ΔΦ = V.

use std::f64::consts::PI;
use std::path::Path;

use serde::Serialize;

use crate::discretization::assembly::{nodal_gradient, periodic_load, periodic_stiffness, solve_periodic};
use crate::discretization::{gauss_legendre, wrap, CellFunction, CellGrid, FeFunction, QuadratureRule};
use crate::error::{Error, Result};
use crate::expr::Expr;

/// Default admissible |∫_Y V| for a potential.
pub const DEFAULT_MEAN_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Smoothness {
    Smooth,
    PiecewiseConstant,
}

#[derive(Debug, Clone, PartialEq)]
pub enum FieldSource {
    Const(f64),
    /// A + B Σ_axes sin(2πk y_i)
    Trig {
        a: f64,
        b: f64,
        k: f64,
    },
    /// A + B Π_axes sin(2πk y_i)
    ProdTrig {
        a: f64,
        b: f64,
        k: f64,
    },
    /// Piecewise constant on equal subintervals of y₁ (laminate in 2D).
    Piecewise(Vec<f64>),
    Expr(Expr),
    /// Samples at the nodes of a uniform periodic m^d grid, multilinear in between.
    Nodal {
        m: usize,
        values: Vec<f64>,
    },
}

/// Y-periodic scalar field.
#[derive(Debug, Clone, PartialEq)]
pub struct PeriodicField {
    dim: usize,
    source: FieldSource,
    smoothness: Smoothness,
}

impl PeriodicField {
    pub fn new(dim: usize, source: FieldSource) -> Result<Self> {
        if !(dim == 1 || dim == 2) {
            return Err(Error::invalid(format!("field dimension must be 1 or 2, got {dim}")));
        }
        let smoothness = match &source {
            FieldSource::Piecewise(v) => {
                if v.is_empty() {
                    return Err(Error::invalid("piecewise field needs at least one value"));
                }
                Smoothness::PiecewiseConstant
            }
            FieldSource::Nodal { m, values } => {
                if *m == 0 || values.len() != m.pow(dim as u32) {
                    return Err(Error::DimensionMismatch(format!(
                        "nodal field with m={m} needs {} values, got {}",
                        m.pow(dim as u32),
                        values.len()
                    )));
                }
                Smoothness::Smooth
            }
            FieldSource::Expr(e) if e.arity() > dim => {
                return Err(Error::DimensionMismatch(format!(
                    "expression '{e}' uses {} coordinates in dimension {dim}",
                    e.arity()
                )))
            }
            _ => Smoothness::Smooth,
        };
        Ok(Self {
            dim,
            source,
            smoothness,
        })
    }

    pub fn constant(dim: usize, c: f64) -> Self {
        Self::new(dim, FieldSource::Const(c)).expect("valid dimension")
    }

    pub fn trig(dim: usize, a: f64, b: f64, k: f64) -> Self {
        Self::new(dim, FieldSource::Trig { a, b, k }).expect("valid dimension")
    }

    pub fn expr(dim: usize, src: &str) -> Result<Self> {
        Self::new(dim, FieldSource::Expr(Expr::parse(src)?))
    }

    /// Parses a preset reference: `const(c)`, `trig(A, B, k)`,
    /// `prod_trig(A, B, k)`, `piecewise(v1, v2, ...)` or a bare expression.
    pub fn from_preset(dim: usize, spec: &str) -> Result<Self> {
        let s = spec.trim();
        let call = |name: &str| -> Option<Result<Vec<f64>>> {
            let rest = s.strip_prefix(name)?.trim_start();
            let inner = rest.strip_prefix('(')?.strip_suffix(')')?;
            Some(
                inner
                    .split(',')
                    .map(|t| {
                        let t = t.trim();
                        Expr::parse(t).and_then(|e| {
                            if e.arity() == 0 {
                                Ok(e.eval(&[]))
                            } else {
                                Err(Error::invalid(format!("preset argument '{t}' must be a constant")))
                            }
                        })
                    })
                    .collect(),
            )
        };
        let arity = |v: &[f64], n: usize, name: &str| -> Result<()> {
            if v.len() == n {
                Ok(())
            } else {
                Err(Error::invalid(format!("{name} takes {n} arguments, got {}", v.len())))
            }
        };
        if let Some(args) = call("const") {
            let args = args?;
            arity(&args, 1, "const")?;
            return Self::new(dim, FieldSource::Const(args[0]));
        }
        if let Some(args) = call("prod_trig") {
            let args = args?;
            arity(&args, 3, "prod_trig")?;
            return Self::new(
                dim,
                FieldSource::ProdTrig {
                    a: args[0],
                    b: args[1],
                    k: args[2],
                },
            );
        }
        if let Some(args) = call("trig") {
            let args = args?;
            arity(&args, 3, "trig")?;
            return Self::new(
                dim,
                FieldSource::Trig {
                    a: args[0],
                    b: args[1],
                    k: args[2],
                },
            );
        }
        if let Some(args) = call("piecewise") {
            return Self::new(dim, FieldSource::Piecewise(args?));
        }
        Self::expr(dim, s)
    }

    /// Nodal field read from CSV: one value per line, row-major in 2D.
    pub fn from_csv(dim: usize, path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut values = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let t = line.trim();
            if t.is_empty() || t.starts_with('#') {
                continue;
            }
            let v: f64 = t.parse().map_err(|_| {
                Error::invalid(format!(
                    "{}:{}: expected a number, got '{t}'",
                    path.display(),
                    lineno + 1
                ))
            })?;
            values.push(v);
        }
        let m = if dim == 1 {
            values.len()
        } else {
            let m = (values.len() as f64).sqrt().round() as usize;
            if m * m != values.len() {
                return Err(Error::DimensionMismatch(format!(
                    "{} values do not form a square grid",
                    values.len()
                )));
            }
            m
        };
        Self::new(dim, FieldSource::Nodal { m, values })
    }

    /// Nodal field sampled from another field on an m^d periodic grid.
    pub fn sampled_from(other: &PeriodicField, m: usize) -> Result<Self> {
        let grid = CellGrid::new(other.dim, m)?;
        let values = (0..grid.num_nodes())
            .map(|node| other.sample(&grid.node_coords(node)[..other.dim]))
            .collect();
        Self::new(other.dim, FieldSource::Nodal { m, values })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn smoothness(&self) -> Smoothness {
        self.smoothness
    }

    pub fn source(&self) -> &FieldSource {
        &self.source
    }

    /// Short textual description for manifests.
    pub fn describe(&self) -> String {
        match &self.source {
            FieldSource::Const(c) => format!("const({c})"),
            FieldSource::Trig { a, b, k } => format!("trig({a}, {b}, {k})"),
            FieldSource::ProdTrig { a, b, k } => format!("prod_trig({a}, {b}, {k})"),
            FieldSource::Piecewise(v) => format!(
                "piecewise({})",
                v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(", ")
            ),
            FieldSource::Expr(e) => e.source().to_string(),
            FieldSource::Nodal { m, .. } => format!("nodal(m={m})"),
        }
    }

    /// Value at `y` after wrapping into [0,1)^d.
    pub fn sample(&self, y: &[f64]) -> f64 {
        let mut w = [0.0; 2];
        for k in 0..self.dim {
            w[k] = wrap(y[k]);
        }
        self.eval_wrapped(&w)
    }

    fn eval_wrapped(&self, w: &[f64; 2]) -> f64 {
        let d = self.dim;
        match &self.source {
            FieldSource::Const(c) => *c,
            FieldSource::Trig { a, b, k } => a + b * (0..d).map(|i| (2.0 * PI * k * w[i]).sin()).sum::<f64>(),
            FieldSource::ProdTrig { a, b, k } => a + b * (0..d).map(|i| (2.0 * PI * k * w[i]).sin()).product::<f64>(),
            FieldSource::Piecewise(v) => {
                let i = ((w[0] * v.len() as f64).floor() as usize).min(v.len() - 1);
                v[i]
            }
            FieldSource::Expr(e) => e.eval(&w[..d]),
            FieldSource::Nodal { m, values } => {
                let m = *m;
                let mut idx = [0usize; 2];
                let mut t = [0.0; 2];
                for k in 0..d {
                    let s = w[k] * m as f64;
                    let i = (s.floor() as usize).min(m - 1);
                    idx[k] = i;
                    t[k] = s - i as f64;
                }
                if d == 1 {
                    let (i0, i1) = (idx[0], (idx[0] + 1) % m);
                    values[i0] * (1.0 - t[0]) + values[i1] * t[0]
                } else {
                    let at = |i: usize, j: usize| values[(i % m) + m * (j % m)];
                    let (i, j) = (idx[0], idx[1]);
                    at(i, j) * (1.0 - t[0]) * (1.0 - t[1])
                        + at(i + 1, j) * t[0] * (1.0 - t[1])
                        + at(i, j + 1) * (1.0 - t[0]) * t[1]
                        + at(i + 1, j + 1) * t[0] * t[1]
                }
            }
        }
    }

    /// Cells per axis on which the field is a polynomial (used to align quadrature).
    fn intrinsic_cells(&self) -> usize {
        match &self.source {
            FieldSource::Piecewise(v) => v.len(),
            FieldSource::Nodal { m, .. } => *m,
            _ => 1,
        }
    }

    /// ∫_Y field dy by composite 5-point Gauss quadrature aligned with the field's cells.
    pub fn cell_mean(&self, cells: usize) -> f64 {
        let base = self.intrinsic_cells();
        let cells = cells.max(1).div_ceil(base) * base;
        let (gx, gw) = gauss_legendre(5);
        let h = 1.0 / cells as f64;
        let mut total = 0.0;
        if self.dim == 1 {
            for c in 0..cells {
                for (x, w) in gx.iter().zip(&gw) {
                    total += w * h * self.sample(&[(c as f64 + x) * h]);
                }
            }
        } else {
            for cj in 0..cells {
                for ci in 0..cells {
                    for (y, wy) in gx.iter().zip(&gw) {
                        for (x, wx) in gx.iter().zip(&gw) {
                            total += wx * wy * h * h * self.sample(&[(ci as f64 + x) * h, (cj as f64 + y) * h]);
                        }
                    }
                }
            }
        }
        total
    }
}

/// Zero-mean periodic potential V.
#[derive(Debug, Clone, PartialEq)]
pub struct PotentialField {
    base: PeriodicField,
    mean_residual: f64,
    mean_tol: f64,
}

impl PotentialField {
    pub fn new(base: PeriodicField, mean_tol: f64) -> Result<Self> {
        let mean_residual = base.cell_mean(mean_cells(base.dim));
        if !(mean_residual.abs() <= mean_tol) {
            return Err(Error::NonZeroMean {
                residual: mean_residual,
                tol: mean_tol,
            });
        }
        Ok(Self {
            base,
            mean_residual,
            mean_tol,
        })
    }

    pub fn zero(dim: usize) -> Self {
        Self::new(PeriodicField::constant(dim, 0.0), DEFAULT_MEAN_TOL).expect("zero potential")
    }

    pub fn field(&self) -> &PeriodicField {
        &self.base
    }

    pub fn mean_residual(&self) -> f64 {
        self.mean_residual
    }

    pub fn mean_tol(&self) -> f64 {
        self.mean_tol
    }

    pub fn sample(&self, y: &[f64]) -> f64 {
        self.base.sample(y)
    }

    pub fn dim(&self) -> usize {
        self.base.dim
    }

    pub fn is_zero(&self) -> bool {
        matches!(self.base.source, FieldSource::Const(c) if c == 0.0)
    }
}

fn mean_cells(dim: usize) -> usize {
    if dim == 1 {
        512
    } else {
        64
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ValidationReport {
    pub dim: usize,
    pub samples: usize,
    /// Estimate of the ellipticity constant M.
    pub min_a: f64,
    pub max_abs_a: f64,
    pub periodic: bool,
    pub mean_residual: f64,
    pub mean_tol: f64,
    pub elliptic: bool,
    pub zero_mean: bool,
    pub passed: bool,
}

/// Checks positivity and periodicity of `a` and the zero mean of `v`
/// on `sample_cells` subintervals per axis.
pub fn validate_hypotheses(
    a: &PeriodicField,
    v: &PeriodicField,
    sample_cells: usize,
    mean_tol: f64,
) -> Result<ValidationReport> {
    if a.dim != v.dim {
        return Err(Error::DimensionMismatch(format!(
            "coefficient has dimension {}, potential {}",
            a.dim, v.dim
        )));
    }
    if sample_cells == 0 {
        return Err(Error::invalid("empty sample grid"));
    }
    let dim = a.dim;
    let (gx, _) = gauss_legendre(3);
    let mut offsets = vec![0.0];
    offsets.extend(gx.iter().copied());
    let h = 1.0 / sample_cells as f64;
    let pts1: Vec<f64> = (0..sample_cells)
        .flat_map(|c| offsets.iter().map(move |o| (c as f64 + o) * h))
        .collect();
    let points: Vec<[f64; 2]> = if dim == 1 {
        pts1.iter().map(|&x| [x, 0.0]).collect()
    } else {
        pts1.iter().flat_map(|&y| pts1.iter().map(move |&x| [x, y])).collect()
    };
    let mut min_a = f64::INFINITY;
    let mut max_abs_a: f64 = 0.0;
    let mut periodic = true;
    for p in &points {
        let val = a.sample(&p[..dim]);
        min_a = min_a.min(val);
        max_abs_a = max_abs_a.max(val.abs());
        for shift in [-1.0, 1.0, 2.0] {
            let q = [p[0] + shift, p[1] - shift];
            if a.sample(&q[..dim]) != a.sample(&[wrap(q[0]), wrap(q[1])][..dim])
                || v.sample(&q[..dim]) != v.sample(&[wrap(q[0]), wrap(q[1])][..dim])
            {
                periodic = false;
            }
        }
    }
    let mean_residual = v.cell_mean(sample_cells.max(mean_cells(dim)));
    let elliptic = min_a > 0.0;
    let zero_mean = mean_residual.abs() <= mean_tol;
    Ok(ValidationReport {
        dim,
        samples: points.len(),
        min_a,
        max_abs_a,
        periodic,
        mean_residual,
        mean_tol,
        elliptic,
        zero_mean,
        passed: elliptic && zero_mean && periodic,
    })
}

/// Corrector potential: Φ periodic with ΔΦ = V and ∫_Y Φ = 0; G = DΦ.
#[derive(Debug, Clone)]
pub struct CorrectorPotential {
    phi: CellFunction,
    gradient: Vec<[f64; 2]>,
    residual: f64,
}

impl CorrectorPotential {
    pub fn phi(&self) -> &CellFunction {
        &self.phi
    }

    /// Max-norm of the discrete residual of ΔΦ = V.
    pub fn residual(&self) -> f64 {
        self.residual
    }

    /// Nodal values of G.
    pub fn nodal_gradient(&self) -> &[[f64; 2]] {
        &self.gradient
    }

    /// G(y) by multilinear interpolation of the recovered nodal gradient of Φ.
    pub fn g(&self, y: &[f64]) -> [f64; 2] {
        let grid = self.phi.grid();
        let (e, s) = grid.locate(y);
        let el = grid.element(e);
        let (psi, _) = el.shape(&s);
        let mut out = [0.0; 2];
        for a in 0..el.n_local() {
            let gn = self.gradient[el.nodes[a]];
            out[0] += psi[a] * gn[0];
            out[1] += psi[a] * gn[1];
        }
        out
    }

    /// Identically zero corrector (V = 0).
    pub fn zero(grid: CellGrid) -> Self {
        Self {
            phi: CellFunction::zeros(grid),
            gradient: vec![[0.0; 2]; grid.num_nodes()],
            residual: 0.0,
        }
    }
}

/// Solves ΔΦ = V on the periodic cell with zero mean.
pub fn solve_corrector_potential(v: &PotentialField, grid: CellGrid, lin_tol: f64) -> Result<CorrectorPotential> {
    if v.dim() != grid.dim {
        return Err(Error::DimensionMismatch(
            "potential and cell grid dimensions differ".into(),
        ));
    }
    if !(v.mean_residual().abs() <= v.mean_tol()) {
        return Err(Error::NonZeroMean {
            residual: v.mean_residual(),
            tol: v.mean_tol(),
        });
    }
    let rule = QuadratureRule::new(4, 1);
    let k = periodic_stiffness(grid, |_| [1.0, 0.0, 1.0], rule);
    // weak form of ΔΦ = V: -∫DΦ·Dψ = ∫Vψ
    let mut rhs = periodic_load(grid, |y| -v.sample(y), |_| [0.0; 2], rule);
    let (phi, _lambda) = solve_periodic(&k, &rhs, grid, lin_tol)?;
    let mut full = phi.values().to_vec();
    full.push(0.0);
    let kphi = k.mul_vec(&full);
    rhs.pop();
    let residual = kphi
        .iter()
        .zip(&rhs)
        .take(grid.num_nodes())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    let gradient = nodal_gradient(&phi);
    Ok(CorrectorPotential {
        phi,
        gradient,
        residual,
    })
}

/// Discrete divergence of G tested against hats, for diagnostics: ∫ -G·Dψ_i vs ∫ V ψ_i.
pub fn corrector_weak_defect(corr: &CorrectorPotential, v: &PotentialField) -> f64 {
    let grid = corr.phi.grid();
    let rule = QuadratureRule::new(4, 1);
    let q = rule.reference(grid.dim);
    let mut r = vec![0.0; grid.num_nodes()];
    for e in 0..grid.num_elements() {
        let el = grid.element(e);
        for (s, y, w) in q.on(&el) {
            let (psi, dpsi) = el.shape(&s);
            let (_, dphi) = corr.phi.eval_local(e, &s);
            let vv = v.sample(&y[..grid.dim]);
            for a in 0..el.n_local() {
                r[el.nodes[a]] += w * (-(dphi[0] * dpsi[a][0] + dphi[1] * dpsi[a][1]) - vv * psi[a]);
            }
        }
    }
    r.iter().fold(0.0, |m, x| m.max(x.abs()))
}
