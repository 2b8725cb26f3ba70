//! Shared assembly of linear periodic cell operators.

use super::{CellFunction, CellGrid, QuadratureRule};
use crate::error::Result;
use crate::linalg::SystemMatrix;

/// Pointwise symmetric diffusion: `[a11, a12, a22]` (only `a11` used in 1D).
pub type SymTensor = [f64; 3];

#[inline]
pub fn apply_sym(a: &SymTensor, g: &[f64; 2]) -> [f64; 2] {
    [a[0] * g[0] + a[1] * g[1], a[1] * g[0] + a[2] * g[1]]
}

/// Empty bordered system for a periodic cell: m^d nodal unknowns plus one
/// zero-mean Lagrange multiplier.
pub fn cell_system(grid: CellGrid) -> SystemMatrix {
    let (perm, bw) = grid.band_order();
    SystemMatrix::new(grid.num_nodes(), bw, bw, Some(perm), 1)
}

/// Adds the mean constraint Σ c_i u_i = 0 with c_i = ∫ψ_i, symmetrically.
pub fn add_mean_constraint(grid: CellGrid, mat: &mut SystemMatrix) {
    let n = grid.num_nodes();
    let c = grid.h().powi(grid.dim as i32);
    for i in 0..n {
        mat.add(i, n, c);
        mat.add(n, i, c);
    }
}

/// ∫_Y A(y) Dψ_j · Dψ_i with the mean constraint.
pub fn periodic_stiffness<A>(grid: CellGrid, coeff: A, rule: QuadratureRule) -> SystemMatrix
where
    A: Fn(&[f64]) -> SymTensor,
{
    let mut mat = cell_system(grid);
    let q = rule.reference(grid.dim);
    for e in 0..grid.num_elements() {
        let el = grid.element(e);
        let nl = el.n_local();
        let mut ke = [[0.0; 4]; 4];
        for (s, y, w) in q.on(&el) {
            let a = coeff(&y[..grid.dim]);
            let (_, dpsi) = el.shape(&s);
            for i in 0..nl {
                let adi = apply_sym(&a, &dpsi[i]);
                for j in 0..nl {
                    ke[i][j] += w * (adi[0] * dpsi[j][0] + adi[1] * dpsi[j][1]);
                }
            }
        }
        for i in 0..nl {
            for j in 0..nl {
                mat.add(el.nodes[i], el.nodes[j], ke[i][j]);
            }
        }
    }
    add_mean_constraint(grid, &mut mat);
    mat
}

/// Load vector ∫ s(y) ψ_i + g(y)·Dψ_i, sized for the bordered system.
pub fn periodic_load<S, G>(grid: CellGrid, source: S, flux: G, rule: QuadratureRule) -> Vec<f64>
where
    S: Fn(&[f64]) -> f64,
    G: Fn(&[f64]) -> [f64; 2],
{
    let n = grid.num_nodes();
    let mut b = vec![0.0; n + 1];
    let q = rule.reference(grid.dim);
    for e in 0..grid.num_elements() {
        let el = grid.element(e);
        for (s, y, w) in q.on(&el) {
            let (psi, dpsi) = el.shape(&s);
            let sv = source(&y[..grid.dim]);
            let gv = flux(&y[..grid.dim]);
            for i in 0..el.n_local() {
                b[el.nodes[i]] += w * (sv * psi[i] + gv[0] * dpsi[i][0] + gv[1] * dpsi[i][1]);
            }
        }
    }
    b
}

/// Solves a bordered periodic system and splits off the multiplier.
pub fn solve_periodic(mat: &SystemMatrix, rhs: &[f64], grid: CellGrid, lin_tol: f64) -> Result<(CellFunction, f64)> {
    let mut x = mat.solve(rhs, lin_tol)?;
    let lambda = x.pop().unwrap_or(0.0);
    Ok((CellFunction::from_nodal(grid, x)?, lambda))
}

/// Recovered nodal gradient: average of the gradients of the elements sharing a node.
pub fn nodal_gradient(f: &CellFunction) -> Vec<[f64; 2]> {
    use super::FeFunction;
    let grid = f.grid();
    let mut g = vec![[0.0; 2]; grid.num_nodes()];
    let mut count = vec![0usize; grid.num_nodes()];
    let corners: [[f64; 2]; 4] = [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 1.0]];
    for e in 0..grid.num_elements() {
        let el = grid.element(e);
        for a in 0..el.n_local() {
            let (_, d) = f.eval_local(e, &corners[a]);
            let node = el.nodes[a];
            g[node][0] += d[0];
            g[node][1] += d[1];
            count[node] += 1;
        }
    }
    for (gi, c) in g.iter_mut().zip(&count) {
        gi[0] /= *c as f64;
        gi[1] /= *c as f64;
    }
    g
}
