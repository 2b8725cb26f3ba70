use serde::Serialize;

use super::grid::{Element, MacroGrid};
use crate::error::{Error, Result};

/// Minimum number of quadrature subcells per oscillation period.
pub const SUBCELLS_PER_PERIOD: usize = 8;

/// Gauss–Legendre nodes and weights mapped to [0, 1] (weights sum to 1).
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for k in 2..=n {
                let k = k as f64;
                let p2 = ((2.0 * k - 1.0) * z * p1 - (k - 1.0) * p0) / k;
                p0 = p1;
                p1 = p2;
            }
            let pn = if n == 1 { z } else { p1 };
            let pn1 = if n == 1 { 1.0 } else { p0 };
            dp = n as f64 * (z * pn - pn1) / (z * z - 1.0);
            let dz = pn / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        let wt = 2.0 / ((1.0 - z * z) * dp * dp);
        x[i] = 0.5 * (1.0 - z);
        x[n - 1 - i] = 0.5 * (1.0 + z);
        w[i] = 0.5 * wt;
        w[n - 1 - i] = 0.5 * wt;
    }
    if n % 2 == 1 {
        x[n / 2] = 0.5;
    }
    (x, w)
}

/// Composite Gauss rule: each element split into `subdivisions` subcells per
/// axis with `order` Gauss points per axis in each subcell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct QuadratureRule {
    pub order: usize,
    pub subdivisions: usize,
}

impl Default for QuadratureRule {
    fn default() -> Self {
        Self {
            order: 3,
            subdivisions: 1,
        }
    }
}

impl QuadratureRule {
    pub fn new(order: usize, subdivisions: usize) -> Self {
        Self {
            order: order.max(1),
            subdivisions: subdivisions.max(1),
        }
    }

    /// Rule used for norms: four points per axis (exact to degree 7).
    pub fn norms() -> Self {
        Self::new(4, 1)
    }

    /// Smallest subdivision that puts at least `SUBCELLS_PER_PERIOD`
    /// subcells in each period of length `eps` on elements of size `h`.
    pub fn resolving(order: usize, h: f64, eps: f64) -> Self {
        let need = (SUBCELLS_PER_PERIOD as f64 * h / eps - 1e-9).ceil().max(1.0) as usize;
        Self::new(order, need)
    }

    pub fn refined(&self) -> Self {
        Self::new(self.order, 2 * self.subdivisions)
    }

    /// Reference points in [0,1]^d and weights summing to one.
    pub fn reference(&self, dim: usize) -> RefQuad {
        let (gx, gw) = gauss_legendre(self.order);
        let s = self.subdivisions;
        let mut px = Vec::with_capacity(s * gx.len());
        let mut pw = Vec::with_capacity(s * gx.len());
        for c in 0..s {
            for (x, w) in gx.iter().zip(&gw) {
                px.push((c as f64 + x) / s as f64);
                pw.push(w / s as f64);
            }
        }
        let mut points = Vec::new();
        let mut weights = Vec::new();
        if dim == 1 {
            for (x, w) in px.iter().zip(&pw) {
                points.push([*x, 0.0]);
                weights.push(*w);
            }
        } else {
            for (y, wy) in px.iter().zip(&pw) {
                for (x, wx) in px.iter().zip(&pw) {
                    points.push([*x, *y]);
                    weights.push(wx * wy);
                }
            }
        }
        RefQuad { points, weights }
    }

    /// Whether the subcells on elements of `grid` resolve period `eps`.
    pub fn resolves(&self, grid: &MacroGrid, eps: f64) -> bool {
        (0..grid.dim).all(|k| grid.h(k) / self.subdivisions as f64 <= eps / SUBCELLS_PER_PERIOD as f64 * (1.0 + 1e-9))
    }
}

#[derive(Debug, Clone)]
pub struct RefQuad {
    pub points: Vec<[f64; 2]>,
    pub weights: Vec<f64>,
}

impl RefQuad {
    /// Physical points and weights on an element.
    pub fn on<'a>(&'a self, el: &'a Element) -> impl Iterator<Item = ([f64; 2], [f64; 2], f64)> + 'a {
        let jac = el.measure();
        self.points
            .iter()
            .zip(&self.weights)
            .map(move |(s, w)| (*s, el.map(s), w * jac))
    }
}

/// Value of an oscillatory integral together with a refinement-based error estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OscillatoryIntegral {
    pub value: f64,
    pub error_estimate: f64,
}

/// Approximates ∫_Ω g(x, x/ε) dx with the composite rule; the error estimate
/// is the change under one halving of the subcell size.
pub fn integrate_oscillatory<F>(
    integrand: F,
    eps: f64,
    grid: &MacroGrid,
    rule: QuadratureRule,
) -> Result<OscillatoryIntegral>
where
    F: Fn(&[f64], &[f64]) -> f64,
{
    if !(eps > 0.0) || !eps.is_finite() {
        return Err(Error::invalid(format!("epsilon must be positive, got {eps}")));
    }
    if !rule.resolves(grid, eps) {
        return Err(Error::Unresolved {
            eps,
            message: format!(
                "subcell size {:.3e} exceeds eps/{SUBCELLS_PER_PERIOD}",
                grid.h(0) / rule.subdivisions as f64
            ),
        });
    }
    let eval = |r: QuadratureRule| {
        let q = r.reference(grid.dim);
        let mut total = 0.0;
        for e in 0..grid.num_elements() {
            let el = grid.element(e);
            let mut s = 0.0;
            for (_, x, w) in q.on(&el) {
                let y = [x[0] / eps, x[1] / eps];
                s += w * integrand(&x[..grid.dim], &y[..grid.dim]);
            }
            total += s;
        }
        total
    };
    let value = eval(rule);
    let fine = eval(rule.refined());
    Ok(OscillatoryIntegral {
        value,
        error_estimate: (fine - value).abs(),
    })
}
