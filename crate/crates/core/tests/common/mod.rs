//! Independent reference computations used by the integration and acceptance tests.
#![allow(dead_code)]

use std::f64::consts::PI;

/// Tanh-sinh quadrature on [lo, hi]; tolerates integrable endpoint singularities.
pub fn tanh_sinh(f: impl Fn(f64) -> f64, lo: f64, hi: f64) -> f64 {
    if hi <= lo {
        return 0.0;
    }
    let r = 0.5 * (hi - lo);
    let h = 1.0 / 128.0;
    let mut sum = 0.0;
    for k in -(4.0 / h) as i64..=(4.0 / h) as i64 {
        let t = k as f64 * h;
        let u = 0.5 * PI * t.sinh();
        let x = u.tanh();
        let w = 0.5 * PI * t.cosh() / u.cosh().powi(2);
        if w < 1e-300 {
            continue;
        }
        // distance to the nearer endpoint, computed without cancellation
        let d = r / (u.abs().exp() * u.cosh());
        let y = if x < 0.0 { lo + d } else { hi - d };
        if y <= lo || y >= hi {
            continue;
        }
        sum += w * f(y);
    }
    sum * r * h
}

/// sign(s)|s|^{1/(p-1)}, inverse of η ↦ |η|^{p-2}η.
pub fn flux_inverse(s: f64, p: f64) -> f64 {
    s.signum() * s.abs().powf(1.0 / (p - 1.0))
}

pub fn f_pow(u: f64, p: f64) -> f64 {
    u.signum() * u.abs().powf(p - 1.0)
}

/// Zeros of `g` on (0, 1) located by sampling and bisection.
fn roots(g: &impl Fn(f64) -> f64) -> Vec<f64> {
    let n = 4096;
    let mut out = Vec::new();
    let mut prev = g(0.0);
    for i in 1..=n {
        let y = i as f64 / n as f64;
        let cur = g(y);
        if prev == 0.0 {
            out.push((i - 1) as f64 / n as f64);
        } else if prev * cur < 0.0 {
            let (mut a, mut b) = ((i - 1) as f64 / n as f64, y);
            for _ in 0..200 {
                let m = 0.5 * (a + b);
                if g(a) * g(m) <= 0.0 {
                    b = m;
                } else {
                    a = m;
                }
            }
            out.push(0.5 * (a + b));
        }
        prev = cur;
    }
    out.retain(|r| *r > 0.0 && *r < 1.0);
    out
}

/// ∫₀¹ h(y) dy split at the given break points.
fn integrate_split(h: impl Fn(f64) -> f64, breaks: &[f64]) -> f64 {
    let mut pts = vec![0.0];
    pts.extend_from_slice(breaks);
    pts.push(1.0);
    pts.windows(2).map(|w| tanh_sinh(&h, w[0], w[1])).sum()
}

/// One-dimensional nonlinear cell problem solved by quadrature: the flux
/// a|η|^{p-2}η equals c + F(θ)W(y) with W' = V, W(0) = 0, and c is fixed by
/// ∫η = ξ. Returns (q, v) = (∫ flux, ∫ V χ).
pub fn cell_oracle_1d(a: impl Fn(f64) -> f64, w: impl Fn(f64) -> f64, p: f64, theta: f64, xi: f64) -> (f64, f64) {
    let ft = f_pow(theta, p);
    let (a, w) = (&a, &w);
    let inner = |c: f64| move |y: f64| c + ft * w(y);
    let mean_eta = |c: f64| {
        let g = inner(c);
        let br = roots(&g);
        integrate_split(|y| flux_inverse(g(y) / a(y), p), &br)
    };
    let (mut lo, mut hi) = (-1.0, 1.0);
    while mean_eta(lo) > xi {
        lo *= 2.0;
    }
    while mean_eta(hi) < xi {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid == lo || mid == hi {
            break;
        }
        if mean_eta(mid) < xi {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let c = 0.5 * (lo + hi);
    let g = inner(c);
    let br = roots(&g);
    let w_mean = integrate_split(w, &[]);
    let w_eta = integrate_split(|y| w(y) * flux_inverse(g(y) / a(y), p), &br);
    (c + ft * w_mean, -w_eta + xi * w_mean)
}

/// Dense Gaussian elimination with partial pivoting; solves for several right-hand sides.
pub fn dense_solve(mut m: Vec<Vec<f64>>, mut rhs: Vec<Vec<f64>>) -> Vec<Vec<f64>> {
    let n = m.len();
    for k in 0..n {
        let piv = (k..n).max_by(|&i, &j| m[i][k].abs().total_cmp(&m[j][k].abs())).unwrap();
        m.swap(k, piv);
        rhs.swap(k, piv);
        let d = m[k][k];
        assert!(d != 0.0, "singular matrix");
        for i in k + 1..n {
            let f = m[i][k] / d;
            if f == 0.0 {
                continue;
            }
            for j in k..n {
                m[i][j] -= f * m[k][j];
            }
            for j in 0..rhs[i].len() {
                rhs[i][j] -= f * rhs[k][j];
            }
        }
    }
    for k in (0..n).rev() {
        for j in 0..rhs[k].len() {
            let mut s = rhs[k][j];
            for c in k + 1..n {
                s -= m[k][c] * rhs[c][j];
            }
            rhs[k][j] = s / m[k][k];
        }
    }
    rhs
}

fn gauss3() -> ([f64; 3], [f64; 3]) {
    let r = (0.6f64).sqrt() / 2.0;
    ([0.5 - r, 0.5, 0.5 + r], [5.0 / 18.0, 8.0 / 18.0, 5.0 / 18.0])
}

/// The fully coupled two-scale system in 1D, assembled from scratch: macro
/// unknowns on a uniform grid of (0, 1) with zero boundary values, and at each
/// macro Gauss point a periodic cell corrector with a zero-mean multiplier.
pub struct Monolithic {
    pub n: usize,
    pub m: usize,
    pub p: f64,
    a: Vec<f64>,
    v: Vec<f64>,
    ys: Vec<f64>,
    ws: Vec<f64>,
    pub xs: Vec<f64>,
    pub wx: Vec<f64>,
    fx: Vec<f64>,
}

struct PointOut {
    r: Vec<f64>,
    q: f64,
    s: f64,
}

impl Monolithic {
    pub fn new(
        a: impl Fn(f64) -> f64,
        v: impl Fn(f64) -> f64,
        f: impl Fn(f64) -> f64,
        p: f64,
        n: usize,
        m: usize,
    ) -> Self {
        let (g, gw) = gauss3();
        let hc = 1.0 / m as f64;
        let mut ys = Vec::new();
        let mut ws = Vec::new();
        for e in 0..m {
            for k in 0..3 {
                ys.push((e as f64 + g[k]) * hc);
                ws.push(gw[k] * hc);
            }
        }
        let hx = 1.0 / n as f64;
        let mut xs = Vec::new();
        let mut wx = Vec::new();
        for e in 0..n {
            for k in 0..3 {
                xs.push((e as f64 + g[k]) * hx);
                wx.push(gw[k] * hx);
            }
        }
        Self {
            n,
            m,
            p,
            a: ys.iter().map(|&y| a(y)).collect(),
            v: ys.iter().map(|&y| v(y)).collect(),
            fx: xs.iter().map(|&x| f(x)).collect(),
            ys,
            ws,
            xs,
            wx,
        }
    }

    fn flux(&self, a: f64, eta: f64, delta: f64) -> f64 {
        a * (eta * eta + delta * delta).powf(0.5 * (self.p - 2.0)) * eta
    }

    /// Cell residual (m + 1 rows), q and v F'(θ) at one point; `z` holds χ then λ.
    fn point(&self, z: &[f64], theta: f64, xi: f64, delta: f64) -> PointOut {
        let m = self.m;
        let hc = 1.0 / m as f64;
        let ft = f_pow(theta, self.p);
        let dft = (self.p - 1.0) * theta.abs().powf(self.p - 2.0);
        let mut r = vec![0.0; m + 1];
        let (mut q, mut vv) = (0.0, 0.0);
        for e in 0..m {
            let (i, j) = (e, (e + 1) % m);
            let slope = (z[j] - z[i]) / hc;
            for k in 0..3 {
                let idx = 3 * e + k;
                let t = (self.ys[idx] - e as f64 * hc) / hc;
                let chi = (1.0 - t) * z[i] + t * z[j];
                let w = self.ws[idx];
                let fl = self.flux(self.a[idx], xi + slope, delta);
                q += w * fl;
                vv += w * self.v[idx] * chi;
                r[i] += w * (-fl / hc + ft * self.v[idx] * (1.0 - t));
                r[j] += w * (fl / hc + ft * self.v[idx] * t);
            }
        }
        for i in 0..m {
            r[i] += z[m] * hc;
            r[m] += hc * z[i];
        }
        PointOut { r, q, s: vv * dft }
    }

    fn macro_state(&self, u: &[f64], k: usize) -> (f64, f64, usize, f64) {
        let hx = 1.0 / self.n as f64;
        let e = k / 3;
        let t = (self.xs[k] - e as f64 * hx) / hx;
        let ul = if e == 0 { 0.0 } else { u[e - 1] };
        let ur = if e + 1 == self.n { 0.0 } else { u[e] };
        ((1.0 - t) * ul + t * ur, (ur - ul) / hx, e, t)
    }

    fn scatter(&self, out: &mut [f64], e: usize, t: f64, dval: f64, dgrad: f64) {
        let hx = 1.0 / self.n as f64;
        if e > 0 {
            out[e - 1] += dval * (1.0 - t) - dgrad / hx;
        }
        if e + 1 < self.n {
            out[e] += dval * t + dgrad / hx;
        }
    }

    /// Global residual and all cell residuals.
    pub fn residual(&self, u: &[f64], z: &[Vec<f64>], delta: f64) -> (Vec<f64>, Vec<Vec<f64>>) {
        let mut big = vec![0.0; self.n - 1];
        let mut cells = Vec::with_capacity(z.len());
        for k in 0..self.xs.len() {
            let (theta, xi, e, t) = self.macro_state(u, k);
            let o = self.point(&z[k], theta, xi, delta);
            self.scatter(&mut big, e, t, self.wx[k] * (o.s - self.fx[k]), self.wx[k] * o.q);
            cells.push(o.r);
        }
        (big, cells)
    }

    fn norm(big: &[f64], cells: &[Vec<f64>]) -> f64 {
        (big.iter().map(|x| x * x).sum::<f64>() + cells.iter().flatten().map(|x| x * x).sum::<f64>()).sqrt()
    }

    /// Newton with δ continuation, Jacobian blocks by central differences of the
    /// per-point map, and elimination of the cell unknowns.
    pub fn solve(&self, tol: f64) -> (Vec<f64>, Vec<Vec<f64>>, f64) {
        let nu = self.n - 1;
        let nz = self.m + 1;
        let mut u = vec![0.0; nu];
        let mut z = vec![vec![0.0; nz]; self.xs.len()];
        let mut last = f64::INFINITY;
        for delta in [1e-1, 1e-2, 1e-3, 1e-4, 1e-5, 1e-6, 1e-7, 1e-8] {
            for _ in 0..100 {
                let (big, cells) = self.residual(&u, &z, delta);
                let rn = Self::norm(&big, &cells);
                last = rn;
                if rn <= tol {
                    break;
                }
                let mut schur = vec![vec![0.0; nu]; nu];
                let mut rhs: Vec<f64> = big.clone();
                let mut solved = Vec::with_capacity(self.xs.len());
                for k in 0..self.xs.len() {
                    let (theta, xi, e, t) = self.macro_state(&u, k);
                    let mut inputs: Vec<f64> = z[k].clone();
                    inputs.push(theta);
                    inputs.push(xi);
                    let base = self.point(&z[k], theta, xi, delta);
                    let cols: Vec<PointOut> = (0..nz + 2)
                        .map(|c| {
                            let h = 1e-6 * (1.0 + inputs[c].abs());
                            let eval = |s: f64| {
                                let mut x = inputs.clone();
                                x[c] += s;
                                self.point(&x[..nz], x[nz], x[nz + 1], delta)
                            };
                            let (pl, mi) = (eval(h), eval(-h));
                            PointOut {
                                r: pl.r.iter().zip(&mi.r).map(|(a, b)| (a - b) / (2.0 * h)).collect(),
                                q: (pl.q - mi.q) / (2.0 * h),
                                s: (pl.s - mi.s) / (2.0 * h),
                            }
                        })
                        .collect();
                    // macro dofs touched by this point and d(θ, ξ)/dU
                    let hx = 1.0 / self.n as f64;
                    let mut dofs = Vec::new();
                    if e > 0 {
                        dofs.push((e - 1, 1.0 - t, -1.0 / hx));
                    }
                    if e + 1 < self.n {
                        dofs.push((e, t, 1.0 / hx));
                    }
                    let jzz: Vec<Vec<f64>> = (0..nz).map(|i| (0..nz).map(|c| cols[c].r[i]).collect()).collect();
                    // right-hand sides: cell residual and its U-columns
                    let mut rhs_cols: Vec<Vec<f64>> = (0..nz).map(|i| vec![base.r[i]]).collect();
                    for (_, dv, dg) in &dofs {
                        for i in 0..nz {
                            rhs_cols[i].push(cols[nz].r[i] * dv + cols[nz + 1].r[i] * dg);
                        }
                    }
                    let x = dense_solve(jzz, rhs_cols);
                    // rows of the global system touched by this point
                    let w = self.wx[k];
                    for (row, rv, rg) in &dofs {
                        // d(global row)/d(local input c) = w (ds_c rv + dq_c rg)
                        let d_in = |c: usize| w * (cols[c].s * rv + cols[c].q * rg);
                        for (ci, (col, cv, cg)) in dofs.iter().enumerate() {
                            let direct = d_in(nz) * cv + d_in(nz + 1) * cg;
                            let through: f64 = (0..nz).map(|zz| d_in(zz) * x[zz][1 + ci]).sum();
                            schur[*row][*col] += direct - through;
                        }
                        rhs[*row] -= (0..nz).map(|zz| d_in(zz) * x[zz][0]).sum::<f64>();
                    }
                    solved.push((x, dofs));
                }
                let du = dense_solve(schur, rhs.iter().map(|r| vec![*r]).collect());
                let du: Vec<f64> = du.into_iter().map(|r| r[0]).collect();
                let dz: Vec<Vec<f64>> = solved
                    .iter()
                    .map(|(x, dofs)| {
                        (0..nz)
                            .map(|i| {
                                x[i][0]
                                    - dofs
                                        .iter()
                                        .enumerate()
                                        .map(|(ci, (col, _, _))| x[i][1 + ci] * du[*col])
                                        .sum::<f64>()
                            })
                            .collect()
                    })
                    .collect();
                let mut step = 1.0;
                loop {
                    let tu: Vec<f64> = u.iter().zip(&du).map(|(a, b)| a - step * b).collect();
                    let tz: Vec<Vec<f64>> = z
                        .iter()
                        .zip(&dz)
                        .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x - step * y).collect())
                        .collect();
                    let (b2, c2) = self.residual(&tu, &tz, delta);
                    if Self::norm(&b2, &c2) < rn || step < 1e-4 {
                        u = tu;
                        z = tz;
                        break;
                    }
                    step *= 0.5;
                }
            }
        }
        (u, z, last)
    }

    /// Nodal values including the zero boundary values.
    pub fn nodal(&self, u: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0];
        out.extend_from_slice(u);
        out.push(0.0);
        out
    }
}

/// L^p distance between two nodal P1 functions on (0, 1), the first on `na`
/// elements, the second on `nb` with `nb` a multiple of `na`.
pub fn p1_distance(ua: &[f64], ub: &[f64], p: f64) -> f64 {
    let na = ua.len() - 1;
    let nb = ub.len() - 1;
    assert_eq!(nb % na, 0);
    let r = nb / na;
    let (g, gw) = gauss3();
    let h = 1.0 / nb as f64;
    let mut total = 0.0;
    for e in 0..nb {
        for k in 0..3 {
            let x = (e as f64 + g[k]) * h;
            let vb = ub[e] * (1.0 - g[k]) + ub[e + 1] * g[k];
            let ea = e / r;
            let ta = x * na as f64 - ea as f64;
            let va = ua[ea] * (1.0 - ta) + ua[ea + 1] * ta;
            total += gw[k] * h * (va - vb).abs().powf(p);
        }
    }
    total.powf(1.0 / p)
}

/// a(y) = 2 + sin(2πy), V(y) = sin(2πy) and W(y) = ∫₀^y V.
pub fn a_trig(y: f64) -> f64 {
    2.0 + (2.0 * PI * y).sin()
}

pub fn v_sin(y: f64) -> f64 {
    (2.0 * PI * y).sin()
}

pub fn w_sin(y: f64) -> f64 {
    (1.0 - (2.0 * PI * y).cos()) / (2.0 * PI)
}
