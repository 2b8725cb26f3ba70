use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Geometry and connectivity of one tensor-product element.
#[derive(Debug, Clone, Copy)]
pub struct Element {
    pub dim: usize,
    pub origin: [f64; 2],
    pub h: [f64; 2],
    /// Local node order: (i, j), (i+1, j), (i, j+1), (i+1, j+1).
    pub nodes: [usize; 4],
}

impl Element {
    pub fn n_local(&self) -> usize {
        1 << self.dim
    }

    pub fn measure(&self) -> f64 {
        self.h[..self.dim].iter().product()
    }

    /// Physical point of reference coordinates `s` in `[0, 1]^d`.
    #[inline]
    pub fn map(&self, s: &[f64; 2]) -> [f64; 2] {
        let mut x = [0.0; 2];
        for k in 0..self.dim {
            x[k] = self.origin[k] + self.h[k] * s[k];
        }
        x
    }

    /// Shape function values and physical gradients at reference point `s`.
    #[inline]
    pub fn shape(&self, s: &[f64; 2]) -> ([f64; 4], [[f64; 2]; 4]) {
        let mut val = [0.0; 4];
        let mut grad = [[0.0; 2]; 4];
        if self.dim == 1 {
            val[0] = 1.0 - s[0];
            val[1] = s[0];
            grad[0][0] = -1.0 / self.h[0];
            grad[1][0] = 1.0 / self.h[0];
        } else {
            let (a, b) = (s[0], s[1]);
            let (hx, hy) = (self.h[0], self.h[1]);
            val = [(1.0 - a) * (1.0 - b), a * (1.0 - b), (1.0 - a) * b, a * b];
            grad = [
                [-(1.0 - b) / hx, -(1.0 - a) / hy],
                [(1.0 - b) / hx, -a / hy],
                [-b / hx, (1.0 - a) / hy],
                [b / hx, a / hy],
            ];
        }
        (val, grad)
    }
}

/// Uniform tensor grid on a box Ω with zero Dirichlet data on ∂Ω.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MacroGrid {
    pub dim: usize,
    pub lower: [f64; 2],
    pub upper: [f64; 2],
    pub n: [usize; 2],
    #[serde(skip)]
    dofs: Vec<Option<usize>>,
    #[serde(skip)]
    n_dofs: usize,
}

impl MacroGrid {
    pub fn new(dim: usize, lower: [f64; 2], upper: [f64; 2], n: [usize; 2]) -> Result<Self> {
        if !(dim == 1 || dim == 2) {
            return Err(Error::invalid(format!("dimension must be 1 or 2, got {dim}")));
        }
        for k in 0..dim {
            if n[k] < 2 {
                return Err(Error::invalid(format!(
                    "macro grid needs at least 2 elements per axis, got {}",
                    n[k]
                )));
            }
            if !(upper[k] > lower[k]) {
                return Err(Error::invalid("empty macro domain"));
            }
        }
        let mut g = Self {
            dim,
            lower,
            upper,
            n: if dim == 1 { [n[0], 1] } else { n },
            dofs: Vec::new(),
            n_dofs: 0,
        };
        let mut k = 0;
        g.dofs = (0..g.num_nodes())
            .map(|node| {
                if g.is_boundary(node) {
                    None
                } else {
                    k += 1;
                    Some(k - 1)
                }
            })
            .collect();
        g.n_dofs = k;
        Ok(g)
    }

    /// `n` elements per axis on the unit box.
    pub fn unit(dim: usize, n: usize) -> Result<Self> {
        Self::new(dim, [0.0; 2], [1.0; 2], [n, n])
    }

    pub fn h(&self, axis: usize) -> f64 {
        (self.upper[axis] - self.lower[axis]) / self.n[axis] as f64
    }

    pub fn nodes_per_axis(&self, axis: usize) -> usize {
        if axis < self.dim {
            self.n[axis] + 1
        } else {
            1
        }
    }

    pub fn num_nodes(&self) -> usize {
        (0..self.dim).map(|a| self.n[a] + 1).product()
    }

    pub fn num_elements(&self) -> usize {
        (0..self.dim).map(|a| self.n[a]).product()
    }

    pub fn node_index(&self, i: usize, j: usize) -> usize {
        i + (self.n[0] + 1) * j
    }

    pub fn node_ij(&self, node: usize) -> (usize, usize) {
        (node % (self.n[0] + 1), node / (self.n[0] + 1))
    }

    pub fn node_coords(&self, node: usize) -> [f64; 2] {
        let (i, j) = self.node_ij(node);
        let mut x = [0.0; 2];
        x[0] = self.lower[0] + i as f64 * self.h(0);
        if self.dim == 2 {
            x[1] = self.lower[1] + j as f64 * self.h(1);
        }
        x
    }

    pub fn is_boundary(&self, node: usize) -> bool {
        let (i, j) = self.node_ij(node);
        i == 0 || i == self.n[0] || (self.dim == 2 && (j == 0 || j == self.n[1]))
    }

    /// Interior (free) unknown index of a node, `None` on the boundary.
    pub fn dof(&self, node: usize) -> Option<usize> {
        self.dofs[node]
    }

    pub fn num_dofs(&self) -> usize {
        self.n_dofs
    }

    /// Half bandwidth of the interior unknown numbering.
    pub fn dof_bandwidth(&self) -> usize {
        if self.dim == 1 {
            1
        } else {
            self.n[0]
        }
    }

    pub fn element(&self, e: usize) -> Element {
        let (ei, ej) = (e % self.n[0], e / self.n[0]);
        let h = [self.h(0), if self.dim == 2 { self.h(1) } else { 1.0 }];
        let origin = [
            self.lower[0] + ei as f64 * h[0],
            if self.dim == 2 {
                self.lower[1] + ej as f64 * h[1]
            } else {
                0.0
            },
        ];
        let n0 = self.node_index(ei, ej);
        let nodes = if self.dim == 1 {
            [n0, n0 + 1, 0, 0]
        } else {
            let n1 = self.node_index(ei, ej + 1);
            [n0, n0 + 1, n1, n1 + 1]
        };
        Element {
            dim: self.dim,
            origin,
            h,
            nodes,
        }
    }

    /// Element containing `x` and the reference coordinates of `x` in it.
    pub fn locate(&self, x: &[f64]) -> (usize, [f64; 2]) {
        let mut idx = [0usize; 2];
        let mut s = [0.0; 2];
        for k in 0..self.dim {
            let t = (x[k] - self.lower[k]) / self.h(k);
            let i = (t.floor().max(0.0) as usize).min(self.n[k] - 1);
            idx[k] = i;
            s[k] = t - i as f64;
        }
        (idx[0] + self.n[0] * idx[1], s)
    }

    pub fn measure(&self) -> f64 {
        (0..self.dim).map(|k| self.upper[k] - self.lower[k]).product()
    }
}

/// Uniform periodic grid on the unit cell Y = (0,1)^d.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellGrid {
    pub dim: usize,
    pub m: usize,
}

impl CellGrid {
    pub fn new(dim: usize, m: usize) -> Result<Self> {
        if !(dim == 1 || dim == 2) {
            return Err(Error::invalid(format!("dimension must be 1 or 2, got {dim}")));
        }
        if m < 4 {
            return Err(Error::invalid(format!(
                "cell grid needs at least 4 elements per axis, got {m}"
            )));
        }
        Ok(Self { dim, m })
    }

    pub fn h(&self) -> f64 {
        1.0 / self.m as f64
    }

    /// Free nodes after periodic identification: m^d.
    pub fn num_nodes(&self) -> usize {
        self.m.pow(self.dim as u32)
    }

    pub fn num_elements(&self) -> usize {
        self.num_nodes()
    }

    pub fn node_index(&self, i: usize, j: usize) -> usize {
        (i % self.m) + self.m * (j % self.m)
    }

    pub fn node_coords(&self, node: usize) -> [f64; 2] {
        let h = self.h();
        let (i, j) = (node % self.m, node / self.m);
        [i as f64 * h, if self.dim == 2 { j as f64 * h } else { 0.0 }]
    }

    pub fn element(&self, e: usize) -> Element {
        let h = self.h();
        let (ei, ej) = (e % self.m, e / self.m);
        let nodes = if self.dim == 1 {
            [ei, (ei + 1) % self.m, 0, 0]
        } else {
            [
                self.node_index(ei, ej),
                self.node_index(ei + 1, ej),
                self.node_index(ei, ej + 1),
                self.node_index(ei + 1, ej + 1),
            ]
        };
        Element {
            dim: self.dim,
            origin: [ei as f64 * h, if self.dim == 2 { ej as f64 * h } else { 0.0 }],
            h: [h, if self.dim == 2 { h } else { 1.0 }],
            nodes,
        }
    }

    /// Band-friendly ordering of the periodic nodes and its half bandwidth.
    pub fn band_order(&self) -> (Vec<usize>, usize) {
        let ring = crate::linalg::ring_order(self.m);
        if self.dim == 1 {
            (ring, 2)
        } else {
            let perm = (0..self.num_nodes())
                .map(|node| ring[node % self.m] + self.m * ring[node / self.m])
                .collect();
            (perm, 2 * self.m + 2)
        }
    }

    pub fn locate(&self, y: &[f64]) -> (usize, [f64; 2]) {
        let mut idx = [0usize; 2];
        let mut s = [0.0; 2];
        for k in 0..self.dim {
            let w = wrap(y[k]) * self.m as f64;
            let i = (w.floor() as usize).min(self.m - 1);
            idx[k] = i;
            s[k] = w - i as f64;
        }
        (idx[0] + self.m * idx[1], s)
    }
}

/// Wraps a coordinate into [0, 1).
#[inline]
pub fn wrap(t: f64) -> f64 {
    let w = t - t.floor();
    if w >= 1.0 {
        0.0
    } else {
        w
    }
}
