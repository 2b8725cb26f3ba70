use std::fmt::Write as _;

use super::grid::{CellGrid, Element, MacroGrid};
use super::quadrature::QuadratureRule;
use crate::error::{Error, Result};

/// Common view of piecewise-multilinear functions for norms and quadrature.
pub trait FeFunction {
    fn dim(&self) -> usize;
    fn num_elements(&self) -> usize;
    fn element(&self, e: usize) -> Element;
    fn nodal(&self) -> &[f64];

    /// Value and gradient on element `e` at reference point `s`.
    fn eval_local(&self, e: usize, s: &[f64; 2]) -> (f64, [f64; 2]) {
        let el = self.element(e);
        let (val, grad) = el.shape(s);
        let u = self.nodal();
        let mut v = 0.0;
        let mut g = [0.0; 2];
        for a in 0..el.n_local() {
            let ua = u[el.nodes[a]];
            v += val[a] * ua;
            g[0] += grad[a][0] * ua;
            g[1] += grad[a][1] * ua;
        }
        (v, g)
    }
}

/// Piecewise-multilinear function on a macro grid.
#[derive(Debug, Clone, PartialEq)]
pub struct MacroFunction {
    grid: MacroGrid,
    values: Vec<f64>,
    dirichlet: bool,
}

impl MacroFunction {
    pub fn zeros(grid: &MacroGrid, dirichlet: bool) -> Self {
        Self {
            grid: grid.clone(),
            values: vec![0.0; grid.num_nodes()],
            dirichlet,
        }
    }

    /// Builds a function from nodal values; flagged functions get exact zeros on ∂Ω.
    pub fn from_nodal(grid: &MacroGrid, mut values: Vec<f64>, dirichlet: bool) -> Result<Self> {
        if values.len() != grid.num_nodes() {
            return Err(Error::DimensionMismatch(format!(
                "{} nodal values for {} nodes",
                values.len(),
                grid.num_nodes()
            )));
        }
        if dirichlet {
            for (node, v) in values.iter_mut().enumerate() {
                if grid.is_boundary(node) {
                    *v = 0.0;
                }
            }
        }
        Ok(Self {
            grid: grid.clone(),
            values,
            dirichlet,
        })
    }

    /// Zero-Dirichlet function from interior unknowns.
    pub fn from_dofs(grid: &MacroGrid, dofs: &[f64]) -> Self {
        let values = (0..grid.num_nodes())
            .map(|node| grid.dof(node).map_or(0.0, |k| dofs[k]))
            .collect();
        Self {
            grid: grid.clone(),
            values,
            dirichlet: true,
        }
    }

    pub fn dofs(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.grid.num_dofs()];
        for (node, v) in self.values.iter().enumerate() {
            if let Some(k) = self.grid.dof(node) {
                out[k] = *v;
            }
        }
        out
    }

    pub fn grid(&self) -> &MacroGrid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn is_dirichlet(&self) -> bool {
        self.dirichlet
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        let (e, s) = self.grid.locate(x);
        self.eval_local(e, &s).0
    }

    pub fn grad(&self, x: &[f64]) -> [f64; 2] {
        let (e, s) = self.grid.locate(x);
        self.eval_local(e, &s).1
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            grid: self.grid.clone(),
            values: self.values.iter().map(|v| c * v).collect(),
            dirichlet: self.dirichlet,
        }
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        if self.grid != other.grid {
            return Err(Error::DimensionMismatch("functions live on different grids".into()));
        }
        Ok(Self {
            grid: self.grid.clone(),
            values: self.values.iter().zip(&other.values).map(|(a, b)| a - b).collect(),
            dirichlet: self.dirichlet && other.dirichlet,
        })
    }

    /// CSV with node coordinates and values.
    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        if self.grid.dim == 1 {
            s.push_str("x,value\n");
        } else {
            s.push_str("x1,x2,value\n");
        }
        for (node, v) in self.values.iter().enumerate() {
            let x = self.grid.node_coords(node);
            if self.grid.dim == 1 {
                let _ = writeln!(s, "{},{}", fmt17(x[0]), fmt17(*v));
            } else {
                let _ = writeln!(s, "{},{},{}", fmt17(x[0]), fmt17(x[1]), fmt17(*v));
            }
        }
        s
    }
}

impl FeFunction for MacroFunction {
    fn dim(&self) -> usize {
        self.grid.dim
    }
    fn num_elements(&self) -> usize {
        self.grid.num_elements()
    }
    fn element(&self, e: usize) -> Element {
        self.grid.element(e)
    }
    fn nodal(&self) -> &[f64] {
        &self.values
    }
}

/// Periodic piecewise-multilinear function on the unit cell.
#[derive(Debug, Clone, PartialEq)]
pub struct CellFunction {
    grid: CellGrid,
    values: Vec<f64>,
}

impl CellFunction {
    pub fn zeros(grid: CellGrid) -> Self {
        Self {
            grid,
            values: vec![0.0; grid.num_nodes()],
        }
    }

    pub fn from_nodal(grid: CellGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.num_nodes() {
            return Err(Error::DimensionMismatch(format!(
                "{} nodal values for {} periodic nodes",
                values.len(),
                grid.num_nodes()
            )));
        }
        Ok(Self { grid, values })
    }

    pub fn grid(&self) -> CellGrid {
        self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// ∫_Y of the interpolant (uniform grid: nodal average).
    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    pub fn zero_mean(mut self) -> Self {
        let m = self.mean();
        self.values.iter_mut().for_each(|v| *v -= m);
        self
    }

    pub fn eval(&self, y: &[f64]) -> f64 {
        let (e, s) = self.grid.locate(y);
        self.eval_local(e, &s).0
    }

    pub fn grad(&self, y: &[f64]) -> [f64; 2] {
        let (e, s) = self.grid.locate(y);
        self.eval_local(e, &s).1
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            grid: self.grid,
            values: self.values.iter().map(|v| c * v).collect(),
        }
    }

    pub fn axpy(&self, c: f64, other: &Self) -> Self {
        Self {
            grid: self.grid,
            values: self.values.iter().zip(&other.values).map(|(a, b)| a + c * b).collect(),
        }
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        s.push_str(if self.grid.dim == 1 {
            "y,value\n"
        } else {
            "y1,y2,value\n"
        });
        for (node, v) in self.values.iter().enumerate() {
            let y = self.grid.node_coords(node);
            if self.grid.dim == 1 {
                let _ = writeln!(s, "{},{}", fmt17(y[0]), fmt17(*v));
            } else {
                let _ = writeln!(s, "{},{},{}", fmt17(y[0]), fmt17(y[1]), fmt17(*v));
            }
        }
        s
    }
}

impl FeFunction for CellFunction {
    fn dim(&self) -> usize {
        self.grid.dim
    }
    fn num_elements(&self) -> usize {
        self.grid.num_elements()
    }
    fn element(&self, e: usize) -> Element {
        self.grid.element(e)
    }
    fn nodal(&self) -> &[f64] {
        &self.values
    }
}

/// Nodal interpolant on a macro grid; boundary values are zeroed when `dirichlet`.
pub fn interpolate_macro<F: Fn(&[f64]) -> f64>(f: F, grid: &MacroGrid, dirichlet: bool) -> Result<MacroFunction> {
    let mut values = Vec::with_capacity(grid.num_nodes());
    for node in 0..grid.num_nodes() {
        let x = grid.node_coords(node);
        let v = f(&x[..grid.dim]);
        if !v.is_finite() {
            return Err(Error::invalid(format!("non-finite value {v} at node {x:?}")));
        }
        values.push(v);
    }
    MacroFunction::from_nodal(grid, values, dirichlet)
}

/// Nodal interpolant on the periodic cell grid, optionally shifted to zero mean.
pub fn interpolate_cell<F: Fn(&[f64]) -> f64>(f: F, grid: CellGrid, zero_mean: bool) -> Result<CellFunction> {
    let mut values = Vec::with_capacity(grid.num_nodes());
    for node in 0..grid.num_nodes() {
        let y = grid.node_coords(node);
        let v = f(&y[..grid.dim]);
        if !v.is_finite() {
            return Err(Error::invalid(format!("non-finite value {v} at node {y:?}")));
        }
        values.push(v);
    }
    let c = CellFunction::from_nodal(grid, values)?;
    Ok(if zero_mean { c.zero_mean() } else { c })
}

fn check_p(p: f64) -> Result<()> {
    if p >= 1.0 && p.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(format!("norm exponent must be >= 1, got {p}")))
    }
}

fn integrate_power<G: FeFunction + ?Sized>(g: &G, p: f64, gradient: bool) -> f64 {
    let q = QuadratureRule::norms().reference(g.dim());
    let mut total = 0.0;
    for e in 0..g.num_elements() {
        let el = g.element(e);
        let jac = el.measure();
        let mut s = 0.0;
        for (pt, w) in q.points.iter().zip(&q.weights) {
            let (v, dv) = g.eval_local(e, pt);
            let a = if gradient {
                (dv[0] * dv[0] + dv[1] * dv[1]).sqrt()
            } else {
                v.abs()
            };
            s += w * a.powf(p);
        }
        total += s * jac;
    }
    total
}

/// (∫|g|^p)^{1/p} by elementwise Gauss quadrature.
pub fn lp_norm<G: FeFunction + ?Sized>(g: &G, p: f64) -> Result<f64> {
    check_p(p)?;
    Ok(integrate_power(g, p, false).powf(1.0 / p))
}

/// (∫|Dg|^p)^{1/p}.
pub fn w1p_seminorm<G: FeFunction + ?Sized>(g: &G, p: f64) -> Result<f64> {
    check_p(p)?;
    Ok(integrate_power(g, p, true).powf(1.0 / p))
}

/// (∫|u - w|^p)^{1/p} integrated on the elements of `u`'s grid, with `w`
/// evaluated pointwise; exact up to quadrature when `w`'s grid is a coarsening of `u`'s.
pub fn lp_distance(u: &MacroFunction, w: &MacroFunction, p: f64) -> Result<f64> {
    check_p(p)?;
    if u.grid.dim != w.grid.dim {
        return Err(Error::DimensionMismatch("functions of different dimension".into()));
    }
    let q = QuadratureRule::norms().reference(u.grid.dim);
    let mut total = 0.0;
    for e in 0..u.num_elements() {
        let el = u.element(e);
        for (s, x, wt) in q.on(&el) {
            let (v, _) = u.eval_local(e, &s);
            total += wt * (v - w.eval(&x[..u.grid.dim])).abs().powf(p);
        }
    }
    Ok(total.powf(1.0 / p))
}

/// Fixed 17-significant-digit scientific formatting used in all CSV output.
pub fn fmt17(v: f64) -> String {
    format!("{v:.16e}")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    #[test]
    fn constant_norm() {
        let g = MacroGrid::unit(1, 5).unwrap();
        let c = interpolate_macro(|_| -2.5, &g, false).unwrap();
        for p in [1.0, 2.0, 3.0, 4.5] {
            assert!((lp_norm(&c, p).unwrap() - 2.5).abs() < 1e-13);
        }
        assert!(lp_norm(&c, 0.5).is_err());
    }

    #[test]
    fn hat_function_l2_norm() {
        let g = MacroGrid::unit(1, 2).unwrap();
        let hat = MacroFunction::from_dofs(&g, &[1.0]);
        // ∫ hat² = 2 ∫_0^{1/2} (2x)² dx = 1/3
        assert!((lp_norm(&hat, 2.0).unwrap() - (1.0f64 / 3.0).sqrt()).abs() < 1e-14);
        assert!((lp_norm(&hat, 2.0).unwrap() - 0.57735).abs() < 1e-5);
    }

    #[test]
    fn unit_gradient_seminorm() {
        let g = MacroGrid::unit(1, 7).unwrap();
        let f = interpolate_macro(|x| x[0], &g, false).unwrap();
        for p in [1.0, 2.0, 3.0, 2.5] {
            assert!((w1p_seminorm(&f, p).unwrap() - 1.0).abs() < 1e-13);
        }
    }

    #[test]
    fn parabola_norm_converges() {
        let exact = 1.0 / (2.0 * 30f64.sqrt());
        assert!((exact - 0.091287).abs() < 1e-6);
        let mut prev = f64::INFINITY;
        for n in [8, 16, 32, 64] {
            let g = MacroGrid::unit(1, n).unwrap();
            let f = interpolate_macro(|x| x[0] * (1.0 - x[0]) / 2.0, &g, true).unwrap();
            let err = (lp_norm(&f, 2.0).unwrap() - exact).abs();
            assert!(err < prev);
            assert!(err < 0.1 / (n * n) as f64, "n={n} err={err}");
            prev = err;
        }
    }

    #[test]
    fn interpolate_zero_and_sine_mean() {
        let g = MacroGrid::unit(2, 3).unwrap();
        let z = interpolate_macro(|_| 0.0, &g, true).unwrap();
        assert!(z.values().iter().all(|v| *v == 0.0));
        let c = CellGrid::new(1, 16).unwrap();
        let s = interpolate_cell(|y| (2.0 * PI * y[0]).sin(), c, false).unwrap();
        assert!(s.mean().abs() < 1e-16);
        assert!(interpolate_macro(|_| f64::NAN, &g, false).is_err());
    }

    #[test]
    fn dirichlet_flag_zeroes_boundary() {
        let g = MacroGrid::unit(2, 4).unwrap();
        let f = interpolate_macro(|x| 1.0 + x[0] + x[1], &g, true).unwrap();
        for node in 0..g.num_nodes() {
            if g.is_boundary(node) {
                assert_eq!(f.values()[node], 0.0);
            }
        }
    }

    #[test]
    fn cell_eval_is_periodic() {
        let c = CellGrid::new(2, 8).unwrap();
        let f = interpolate_cell(|y| (2.0 * PI * y[0]).cos() * (2.0 * PI * y[1]).sin(), c, true).unwrap();
        for &(a, b) in &[(0.125, 0.5), (0.3125, 0.9375)] {
            assert_eq!(f.eval(&[a, b]), f.eval(&[a + 1.0, b - 2.0]));
        }
    }

    #[test]
    fn csv_uses_17_digits() {
        let g = MacroGrid::unit(1, 2).unwrap();
        let f = MacroFunction::from_dofs(&g, &[1.0 / 3.0]);
        let csv = f.to_csv();
        assert!(csv.starts_with("x,value\n"));
        let line = csv.lines().nth(2).unwrap();
        let v: f64 = line.split(',').nth(1).unwrap().parse().unwrap();
        assert_eq!(v, 1.0 / 3.0);
    }

    proptest! {
        #[test]
        fn norm_homogeneity(vals in proptest::collection::vec(-5.0f64..5.0, 7), c in -4.0f64..4.0, p in 1.0f64..4.0) {
            let g = MacroGrid::unit(1, 8).unwrap();
            let f = MacroFunction::from_dofs(&g, &vals);
            let lhs = lp_norm(&f.scaled(c), p).unwrap();
            let rhs = c.abs() * lp_norm(&f, p).unwrap();
            prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + rhs));
        }

        #[test]
        fn triangle_inequality(a in proptest::collection::vec(-5.0f64..5.0, 7), b in proptest::collection::vec(-5.0f64..5.0, 7), p in 1.0f64..4.0) {
            let g = MacroGrid::unit(1, 8).unwrap();
            let fa = MacroFunction::from_dofs(&g, &a);
            let fb = MacroFunction::from_dofs(&g, &b);
            let sum = fa.sub(&fb.scaled(-1.0)).unwrap();
            let lhs = lp_norm(&sum, p).unwrap();
            let rhs = lp_norm(&fa, p).unwrap() + lp_norm(&fb, p).unwrap();
            prop_assert!(lhs <= rhs * (1.0 + 1e-12) + 1e-14);
        }
    }
}
