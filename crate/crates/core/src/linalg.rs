//! Banded LU with partial pivoting and a bordered variant for systems that
//! carry a few dense constraint rows (zero-mean Lagrange multipliers).

use crate::error::{Error, Result};

/// Square band matrix with `kl` sub- and `ku` super-diagonals.
///
/// Storage reserves `kl` extra super-diagonals for the fill produced by row
/// interchanges during factorization.
#[derive(Debug, Clone)]
pub struct BandMatrix {
    n: usize,
    kl: usize,
    ku: usize,
    width: usize,
    data: Vec<f64>,
}

impl BandMatrix {
    pub fn new(n: usize, kl: usize, ku: usize) -> Self {
        let kl = kl.min(n.saturating_sub(1));
        let ku = ku.min(n.saturating_sub(1));
        let width = 2 * kl + ku + 1;
        Self {
            n,
            kl,
            ku,
            width,
            data: vec![0.0; n * width],
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn bandwidths(&self) -> (usize, usize) {
        (self.kl, self.ku)
    }

    #[inline]
    fn offset(&self, i: usize, j: usize) -> Option<usize> {
        let d = j as isize - i as isize;
        if d < -(self.kl as isize) || d > (self.ku + self.kl) as isize {
            return None;
        }
        Some(i * self.width + (d + self.kl as isize) as usize)
    }

    /// Accumulates `v` into entry `(i, j)`. Panics if the entry lies outside the band.
    #[inline]
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let d = j as isize - i as isize;
        assert!(
            d >= -(self.kl as isize) && d <= self.ku as isize,
            "entry ({i}, {j}) outside band kl={} ku={}",
            self.kl,
            self.ku
        );
        let k = self.offset(i, j).unwrap();
        self.data[k] += v;
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.offset(i, j).map_or(0.0, |k| self.data[k])
    }

    #[inline]
    fn at(&mut self, i: usize, j: usize) -> &mut f64 {
        let k = self.offset(i, j).expect("band index");
        &mut self.data[k]
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        self.product(x, false)
    }

    fn product(&self, x: &[f64], abs: bool) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        for (i, yi) in y.iter_mut().enumerate() {
            let lo = i.saturating_sub(self.kl);
            let hi = (i + self.ku).min(self.n - 1);
            let mut s = 0.0;
            for (j, xj) in x.iter().enumerate().take(hi + 1).skip(lo) {
                if abs {
                    s += (self.get(i, j) * xj).abs();
                } else {
                    s += self.get(i, j) * xj;
                }
            }
            *yi = s;
        }
        y
    }

    pub fn max_abs_diag(&self) -> f64 {
        (0..self.n).map(|i| self.get(i, i).abs()).fold(0.0, f64::max)
    }

    /// LU factorization with partial pivoting (unblocked `gbtf2` scheme).
    pub fn factor(mut self) -> Result<BandLu> {
        let n = self.n;
        let kl = self.kl;
        let kuu = self.ku + self.kl;
        let mut piv = vec![0usize; n];
        let scale = self
            .data
            .iter()
            .fold(0.0f64, |m, v| m.max(v.abs()))
            .max(f64::MIN_POSITIVE);
        for k in 0..n {
            let last = (k + kl).min(n - 1);
            let mut p = k;
            let mut best = self.get(k, k).abs();
            for i in k + 1..=last {
                let v = self.get(i, k).abs();
                if v > best {
                    best = v;
                    p = i;
                }
            }
            piv[k] = p;
            if best <= scale * 1e-15 {
                return Err(Error::Singular(k));
            }
            let jmax = (k + kuu).min(n - 1);
            if p != k {
                for j in k..=jmax {
                    let a = self.get(k, j);
                    let b = self.get(p, j);
                    *self.at(k, j) = b;
                    *self.at(p, j) = a;
                }
            }
            let pivot = self.get(k, k);
            for i in k + 1..=last {
                let l = self.get(i, k) / pivot;
                *self.at(i, k) = l;
                if l != 0.0 {
                    for j in k + 1..=jmax {
                        let ukj = self.get(k, j);
                        if ukj != 0.0 {
                            *self.at(i, j) -= l * ukj;
                        }
                    }
                }
            }
        }
        Ok(BandLu { lu: self, piv })
    }
}

#[derive(Debug, Clone)]
pub struct BandLu {
    lu: BandMatrix,
    piv: Vec<usize>,
}

impl BandLu {
    pub fn solve_in_place(&self, b: &mut [f64]) {
        let n = self.lu.n;
        let kl = self.lu.kl;
        let kuu = self.lu.ku + self.lu.kl;
        for k in 0..n {
            let p = self.piv[k];
            if p != k {
                b.swap(k, p);
            }
            let bk = b[k];
            if bk != 0.0 {
                for i in k + 1..=(k + kl).min(n - 1) {
                    b[i] -= self.lu.get(i, k) * bk;
                }
            }
        }
        for k in (0..n).rev() {
            let mut s = b[k];
            for j in k + 1..=(k + kuu).min(n - 1) {
                s -= self.lu.get(k, j) * b[j];
            }
            b[k] = s / self.lu.get(k, k);
        }
    }
}

/// Sparse system matrix assembled in natural unknown numbering.
///
/// The first `n_core` unknowns live in a band after an optional reordering;
/// the remaining `n_border` unknowns form dense border rows and columns.
#[derive(Debug, Clone)]
pub struct SystemMatrix {
    core: BandMatrix,
    /// natural index -> band position
    perm: Option<Vec<usize>>,
    n_border: usize,
    cols: Vec<Vec<f64>>,
    rows: Vec<Vec<f64>>,
    corner: Vec<f64>,
}

impl SystemMatrix {
    pub fn new(n_core: usize, kl: usize, ku: usize, perm: Option<Vec<usize>>, n_border: usize) -> Self {
        if let Some(p) = &perm {
            debug_assert_eq!(p.len(), n_core);
        }
        Self {
            core: BandMatrix::new(n_core, kl, ku),
            perm,
            n_border,
            cols: vec![vec![0.0; n_core]; n_border],
            rows: vec![vec![0.0; n_core]; n_border],
            corner: vec![0.0; n_border * n_border],
        }
    }

    pub fn dim(&self) -> usize {
        self.core.n + self.n_border
    }

    #[inline]
    fn pos(&self, i: usize) -> usize {
        match &self.perm {
            Some(p) => p[i],
            None => i,
        }
    }

    #[inline]
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let n = self.core.n;
        match (i < n, j < n) {
            (true, true) => {
                let (pi, pj) = (self.pos(i), self.pos(j));
                self.core.add(pi, pj, v)
            }
            (true, false) => self.cols[j - n][i] += v,
            (false, true) => self.rows[i - n][j] += v,
            (false, false) => self.corner[(i - n) * self.n_border + (j - n)] += v,
        }
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let n = self.core.n;
        match (i < n, j < n) {
            (true, true) => self.core.get(self.pos(i), self.pos(j)),
            (true, false) => self.cols[j - n][i],
            (false, true) => self.rows[i - n][j],
            (false, false) => self.corner[(i - n) * self.n_border + (j - n)],
        }
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        self.product(x, false)
    }

    /// |A| |x|, used for componentwise backward errors.
    pub fn abs_mul_vec(&self, x: &[f64]) -> Vec<f64> {
        self.product(x, true)
    }

    fn product(&self, x: &[f64], abs: bool) -> Vec<f64> {
        let n = self.core.n;
        let m = |a: f64, b: f64| if abs { (a * b).abs() } else { a * b };
        let xb = self.to_band(&x[..n]);
        let yb = self.core.product(&xb, abs);
        let mut y = self.unband(&yb);
        y.resize(self.dim(), 0.0);
        for b in 0..self.n_border {
            let lam = x[n + b];
            for (yi, c) in y[..n].iter_mut().zip(&self.cols[b]) {
                *yi += m(*c, lam);
            }
            let mut s: f64 = self.rows[b].iter().zip(&x[..n]).map(|(r, xi)| m(*r, *xi)).sum();
            for c in 0..self.n_border {
                s += m(self.corner[b * self.n_border + c], x[n + c]);
            }
            y[n + b] = s;
        }
        y
    }

    /// Componentwise backward error max_i |b - Ax|_i / (|A||x| + |b|)_i.
    pub fn backward_error(&self, x: &[f64], b: &[f64]) -> f64 {
        let ax = self.mul_vec(x);
        let den = self.abs_mul_vec(x);
        ax.iter()
            .zip(&den)
            .zip(b)
            .map(|((ai, di), bi)| {
                let d = di + bi.abs();
                if d == 0.0 {
                    0.0
                } else {
                    (bi - ai).abs() / d
                }
            })
            .fold(0.0, f64::max)
    }

    fn to_band(&self, x: &[f64]) -> Vec<f64> {
        match &self.perm {
            None => x.to_vec(),
            Some(p) => {
                let mut out = vec![0.0; x.len()];
                for (i, &pi) in p.iter().enumerate() {
                    out[pi] = x[i];
                }
                out
            }
        }
    }

    fn unband(&self, xb: &[f64]) -> Vec<f64> {
        match &self.perm {
            None => xb.to_vec(),
            Some(p) => p.iter().map(|&pi| xb[pi]).collect(),
        }
    }

    /// Solves `A x = b` with iterative refinement until the componentwise
    /// backward error is below `tol`.
    pub fn solve(&self, b: &[f64], tol: f64) -> Result<Vec<f64>> {
        let fact = self.factor()?;
        let mut x = fact.solve(b);
        let mut err = self.backward_error(&x, b);
        for _ in 0..3 {
            if err <= tol || !err.is_finite() {
                break;
            }
            let ax = self.mul_vec(&x);
            let r: Vec<f64> = b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect();
            let dx = fact.solve(&r);
            for (xi, d) in x.iter_mut().zip(&dx) {
                *xi += d;
            }
            err = self.backward_error(&x, b);
        }
        if !(err <= tol) {
            return Err(Error::LinearSolve { residual: err, tol });
        }
        Ok(x)
    }

    pub fn factor(&self) -> Result<SystemLu> {
        let n = self.core.n;
        if self.n_border == 0 {
            return Ok(SystemLu {
                lu: self.core.clone().factor()?,
                border: None,
                perm: self.perm.clone(),
                n,
            });
        }
        // Deflate a possible constant null space of the core with a rank-one
        // shift at band position 0, then eliminate the border unknowns together
        // with the shifted component.
        let gamma = self.core.max_abs_diag().max(1.0);
        let mut shifted = self.core.clone();
        shifted.add(0, 0, gamma);
        let lu = shifted.factor()?;
        let k = self.n_border;
        let ys: Vec<Vec<f64>> = self
            .cols
            .iter()
            .map(|c| {
                let mut v = self.to_band(c);
                lu.solve_in_place(&mut v);
                v
            })
            .collect();
        let mut z = vec![0.0; n];
        z[0] = 1.0;
        lu.solve_in_place(&mut z);
        let rows_b: Vec<Vec<f64>> = self.rows.iter().map(|r| self.to_band(r)).collect();
        // Unknowns of the reduced system: [lambda_0..lambda_{k-1}, s]
        let dim = k + 1;
        let mut m = vec![0.0; dim * dim];
        for a in 0..k {
            for c in 0..k {
                let cy: f64 = rows_b[a].iter().zip(&ys[c]).map(|(r, y)| r * y).sum();
                m[a * dim + c] = self.corner[a * k + c] - cy;
            }
            let cz: f64 = rows_b[a].iter().zip(&z).map(|(r, y)| r * y).sum();
            m[a * dim + k] = gamma * cz;
        }
        for c in 0..k {
            m[k * dim + c] = ys[c][0];
        }
        m[k * dim + k] = 1.0 - gamma * z[0];
        let reduced = DenseLu::new(m, dim)?;
        Ok(SystemLu {
            lu,
            border: Some(Border {
                gamma,
                ys,
                z,
                rows_b,
                reduced,
            }),
            perm: self.perm.clone(),
            n,
        })
    }

    /// Dense copy, for diagnostics on small systems.
    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let d = self.dim();
        (0..d).map(|i| (0..d).map(|j| self.get(i, j)).collect()).collect()
    }
}

#[derive(Debug, Clone)]
struct Border {
    gamma: f64,
    ys: Vec<Vec<f64>>,
    z: Vec<f64>,
    rows_b: Vec<Vec<f64>>,
    reduced: DenseLu,
}

#[derive(Debug, Clone)]
pub struct SystemLu {
    lu: BandLu,
    border: Option<Border>,
    perm: Option<Vec<usize>>,
    n: usize,
}

impl SystemLu {
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut y0 = match &self.perm {
            None => b[..n].to_vec(),
            Some(p) => {
                let mut out = vec![0.0; n];
                for (i, &pi) in p.iter().enumerate() {
                    out[pi] = b[i];
                }
                out
            }
        };
        self.lu.solve_in_place(&mut y0);
        let mut tail = Vec::new();
        let xb = match &self.border {
            None => y0,
            Some(bd) => {
                let k = bd.ys.len();
                let mut rhs = vec![0.0; k + 1];
                for a in 0..k {
                    let cy0: f64 = bd.rows_b[a].iter().zip(&y0).map(|(r, y)| r * y).sum();
                    rhs[a] = b[n + a] - cy0;
                }
                rhs[k] = y0[0];
                let sol = bd.reduced.solve(&rhs);
                let s = sol[k];
                let mut x = y0;
                for (c, yc) in bd.ys.iter().enumerate() {
                    let lam = sol[c];
                    for (xi, yi) in x.iter_mut().zip(yc) {
                        *xi -= lam * yi;
                    }
                }
                for (xi, zi) in x.iter_mut().zip(&bd.z) {
                    *xi += bd.gamma * s * zi;
                }
                tail = sol[..k].to_vec();
                x
            }
        };
        let mut out = match &self.perm {
            None => xb,
            Some(p) => p.iter().map(|&pi| xb[pi]).collect(),
        };
        out.extend(tail);
        out
    }
}

/// Small dense LU with partial pivoting.
#[derive(Debug, Clone)]
pub struct DenseLu {
    n: usize,
    a: Vec<f64>,
    piv: Vec<usize>,
}

impl DenseLu {
    pub fn new(mut a: Vec<f64>, n: usize) -> Result<Self> {
        let scale = a.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
        let mut piv = vec![0; n];
        for k in 0..n {
            let mut p = k;
            for i in k + 1..n {
                if a[i * n + k].abs() > a[p * n + k].abs() {
                    p = i;
                }
            }
            if a[p * n + k].abs() <= scale * 1e-15 {
                return Err(Error::Singular(k));
            }
            piv[k] = p;
            if p != k {
                for j in 0..n {
                    a.swap(k * n + j, p * n + j);
                }
            }
            for i in k + 1..n {
                let l = a[i * n + k] / a[k * n + k];
                a[i * n + k] = l;
                for j in k + 1..n {
                    a[i * n + j] -= l * a[k * n + j];
                }
            }
        }
        Ok(Self { n, a, piv })
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut x = b.to_vec();
        for k in 0..n {
            x.swap(k, self.piv[k]);
            for i in k + 1..n {
                x[i] -= self.a[i * n + k] * x[k];
            }
        }
        for k in (0..n).rev() {
            let mut s = x[k];
            for j in k + 1..n {
                s -= self.a[k * n + j] * x[j];
            }
            x[k] = s / self.a[k * n + k];
        }
        x
    }
}

pub fn norm2(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

pub fn dot(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

/// Ordering of a periodic ring that keeps ring neighbours at most two
/// positions apart: 0, m-1, 1, m-2, 2, ...
pub fn ring_order(m: usize) -> Vec<usize> {
    let mut pos = vec![0; m];
    let (mut lo, mut hi) = (0usize, m - 1);
    let mut k = 0;
    while lo <= hi {
        pos[lo] = k;
        k += 1;
        if hi != lo {
            pos[hi] = k;
            k += 1;
        }
        lo += 1;
        if hi == 0 {
            break;
        }
        hi -= 1;
    }
    pos
}
