//! Periodic Beltrami equation `F_zbar = mu F_z` on the torus
//! `[0, 1] x [-H, H]`.
//!
//! The solution is sought as `F = z - 2 i b y + w` with `w` doubly periodic.
//! Then `F_zbar = b + rho` and `F_z = 1 - b + B rho`, where `rho = w_zbar`
//! has zero mean and `B` is the Beurling transform, diagonal in Fourier
//! space. The fixed point `X = mu (1 - b + B rho)`, `b = mean X`,
//! `rho = X - b` is a contraction for `|mu| < 1`.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::sync::Arc;

use rayon::prelude::*;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::circlemap::C64;
use crate::error::{Error, Result};

/// Nodes `x_j = j / nx`, `y_k = -H + 2 H k / ny`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellGrid {
    pub nx: usize,
    pub ny: usize,
    /// Half-height `H` of the periodized cell.
    pub height: f64,
}

impl CellGrid {
    pub fn new(nx: usize, ny: usize, height: f64) -> Result<Self> {
        if nx < 8 || ny < 8 || nx % 2 != 0 || ny % 4 != 0 || !(height > 0.0) {
            return Err(Error::Domain(format!(
                "grid {nx} x {ny} with half-height {height} is not usable"
            )));
        }
        Ok(Self { nx, ny, height })
    }

    /// The cell for a strip of half-width `eps`: `H = 4 eps`, `nx` columns
    /// and `nx * ceil(eps)` rows, so that `s = +-2 eps` fall on rows.
    pub fn for_strip(eps: f64, nx: usize) -> Result<Self> {
        let ny = nx * (eps.ceil() as usize).max(1);
        Self::new(nx, ny, 4.0 * eps)
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dx(&self) -> f64 {
        1.0 / self.nx as f64
    }

    pub fn dy(&self) -> f64 {
        2.0 * self.height / self.ny as f64
    }

    pub fn node(&self, j: usize, k: usize) -> C64 {
        C64::new(j as f64 * self.dx(), -self.height + k as f64 * self.dy())
    }

    /// Row index of `y`, if `y` is a node row.
    pub fn row_of(&self, y: f64) -> Option<usize> {
        let r = (y + self.height) / self.dy();
        let k = r.round();
        ((r - k).abs() < 1e-9 && k >= 0.0 && (k as usize) < self.ny).then_some(k as usize)
    }
}

/// Samples of a Beltrami coefficient on a [`CellGrid`].
#[derive(Clone, Debug)]
pub struct BeltramiField {
    pub grid: CellGrid,
    /// Row-major: index `k * nx + j`.
    pub values: Vec<C64>,
    pub norm_inf: f64,
    /// Rows across which the field may jump; interpolation stencils of the
    /// solution stay on one side.
    pub seam_rows: Vec<usize>,
    /// Columns likewise (column 0 stands for the periodic seam `x = 0 = 1`).
    pub seam_cols: Vec<usize>,
}

impl BeltramiField {
    pub fn from_values(grid: CellGrid, values: Vec<C64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::Domain("mu grid has the wrong size".into()));
        }
        let norm_inf = values.iter().map(|m| m.norm()).fold(0.0, f64::max);
        Ok(Self {
            grid,
            values,
            norm_inf,
            seam_rows: Vec::new(),
            seam_cols: Vec::new(),
        })
    }

    pub fn from_fn(grid: CellGrid, mu: impl Fn(C64) -> C64 + Sync) -> Result<Self> {
        let values = (0..grid.len())
            .into_par_iter()
            .map(|i| mu(grid.node(i % grid.nx, i / grid.nx)))
            .collect();
        Self::from_values(grid, values)
    }

    pub fn zero(grid: CellGrid) -> Self {
        Self::from_values(grid, vec![C64::new(0.0, 0.0); grid.len()]).expect("sized")
    }

    pub fn with_seams(mut self, rows: Vec<usize>, cols: Vec<usize>) -> Self {
        self.seam_rows = rows;
        self.seam_cols = cols;
        self
    }

    /// Whether `mu(conj z) = conj mu(z)` on the grid.
    pub fn is_real_symmetric(&self, tol: f64) -> bool {
        let g = &self.grid;
        (0..g.ny).all(|k| {
            let kk = (g.ny - k) % g.ny;
            (0..g.nx).all(|j| {
                (self.values[k * g.nx + j] - self.values[kk * g.nx + j].conj()).norm() <= tol
            })
        })
    }
}

/// Iteration settings.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BeltramiConfig {
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for BeltramiConfig {
    fn default() -> Self {
        Self {
            tolerance: 1e-13,
            max_iterations: 200,
        }
    }
}

struct Fft2 {
    nx: usize,
    ny: usize,
    fx: Arc<dyn Fft<f64>>,
    ix: Arc<dyn Fft<f64>>,
    fy: Arc<dyn Fft<f64>>,
    iy: Arc<dyn Fft<f64>>,
}

impl Fft2 {
    fn new(nx: usize, ny: usize) -> Self {
        let mut p = FftPlanner::new();
        Self {
            nx,
            ny,
            fx: p.plan_fft_forward(nx),
            ix: p.plan_fft_inverse(nx),
            fy: p.plan_fft_forward(ny),
            iy: p.plan_fft_inverse(ny),
        }
    }

    fn run(&self, data: &mut [C64], forward: bool) {
        let (fx, fy) = if forward { (&self.fx, &self.fy) } else { (&self.ix, &self.iy) };
        data.par_chunks_mut(self.nx).for_each(|row| fx.process(row));
        let mut cols = vec![C64::new(0.0, 0.0); data.len()];
        transpose(data, &mut cols, self.nx, self.ny);
        cols.par_chunks_mut(self.ny).for_each(|c| fy.process(c));
        transpose(&cols, data, self.ny, self.nx);
        if !forward {
            let s = 1.0 / (self.nx * self.ny) as f64;
            data.par_iter_mut().for_each(|x| *x *= s);
        }
    }
}

/// `dst[j * rows + k] = src[k * cols + j]` for a `rows x cols` source.
fn transpose(src: &[C64], dst: &mut [C64], cols: usize, rows: usize) {
    dst.par_chunks_mut(rows).enumerate().for_each(|(j, out)| {
        for (k, o) in out.iter_mut().enumerate() {
            *o = src[k * cols + j];
        }
    });
}

fn signed_freq(i: usize, n: usize) -> Option<f64> {
    if 2 * i == n {
        None
    } else if i < n / 2 {
        Some(i as f64)
    } else {
        Some(i as f64 - n as f64)
    }
}

/// Fourier symbols of `B` and of the inverse of `d/dzbar`.
fn symbols(g: &CellGrid) -> (Vec<C64>, Vec<C64>) {
    let ly = 2.0 * g.height;
    let mut beur = vec![C64::new(0.0, 0.0); g.len()];
    let mut inv = vec![C64::new(0.0, 0.0); g.len()];
    for k in 0..g.ny {
        for j in 0..g.nx {
            let (Some(fj), Some(fk)) = (signed_freq(j, g.nx), signed_freq(k, g.ny)) else {
                continue;
            };
            if fj == 0.0 && fk == 0.0 {
                continue;
            }
            let a = 2.0 * PI * fj;
            let b = 2.0 * PI * fk / ly;
            let dbar = C64::new(-b, a);
            beur[k * g.nx + j] = C64::new(b, a) / dbar;
            inv[k * g.nx + j] = 2.0 / dbar;
        }
    }
    (beur, inv)
}

/// Normalized solution `F` with `F(0) = 0`, `F(z + 1) = F(z) + 1`.
#[derive(Clone, Debug)]
pub struct QCSolution {
    pub grid: CellGrid,
    /// `F - id` at the nodes.
    pub values: Vec<C64>,
    /// `F_z` and `F_zbar` at the nodes.
    pub f_z: Vec<C64>,
    pub f_zbar: Vec<C64>,
    /// Affine coefficient: `F = z - 2 i b y + periodic`.
    pub b: C64,
    /// `max |F_zbar - mu F_z|` over the grid.
    pub residual: f64,
    /// `|F(0)| + |F(1) - 1|` from the interpolant.
    pub normalization_error: f64,
    /// `max |F(z + 1) - F(z) - 1|` over sampled off-grid points.
    pub periodicity_defect: f64,
    pub iterations: usize,
    seam_rows: Vec<usize>,
    seam_cols: Vec<usize>,
}

/// Solves `F_zbar = mu F_z` on the torus of `mu.grid`.
pub fn solve_beltrami(mu: &BeltramiField, cfg: &BeltramiConfig) -> Result<QCSolution> {
    if mu.norm_inf >= 1.0 || !mu.norm_inf.is_finite() {
        return Err(Error::Ellipticity { norm: mu.norm_inf });
    }
    let g = mu.grid;
    let n = g.len();
    let fft = Fft2::new(g.nx, g.ny);
    let (beur, inv_dbar) = symbols(&g);
    let apply_b = |rho: &[C64]| {
        let mut s = rho.to_vec();
        fft.run(&mut s, true);
        s.par_iter_mut().zip(beur.par_iter()).for_each(|(x, m)| *x *= m);
        fft.run(&mut s, false);
        s
    };
    let mut rho = vec![C64::new(0.0, 0.0); n];
    let mut b = C64::new(0.0, 0.0);
    let mut iterations = 0;
    let zero_mu = mu.norm_inf == 0.0;
    let mut last = f64::INFINITY;
    while !zero_mu {
        iterations += 1;
        let brho = apply_b(&rho);
        let x: Vec<C64> = mu
            .values
            .par_iter()
            .zip(brho.par_iter())
            .map(|(m, br)| m * (1.0 - b + br))
            .collect();
        let b_new = x.iter().sum::<C64>() / n as f64;
        let mut change = (b_new - b).norm();
        for (r, xi) in rho.iter_mut().zip(x.iter()) {
            let nr = xi - b_new;
            change = change.max((nr - *r).norm());
            *r = nr;
        }
        b = b_new;
        // roundoff stagnation just above the tolerance counts as converged
        let stalled = change < 100.0 * cfg.tolerance && change >= 0.5 * last;
        last = change;
        if change < cfg.tolerance || stalled {
            break;
        }
        if !change.is_finite() || change > 1e6 {
            return Err(Error::Ellipticity { norm: mu.norm_inf });
        }
        if iterations >= cfg.max_iterations {
            return Err(Error::NonConvergence {
                what: "Beltrami iteration",
                iterations,
                last_error: last,
            });
        }
    }
    let _ = last;
    let brho = apply_b(&rho);
    let f_z: Vec<C64> = brho.iter().map(|br| 1.0 - b + br).collect();
    let f_zbar: Vec<C64> = rho.iter().map(|r| b + r).collect();
    let residual = f_zbar
        .iter()
        .zip(f_z.iter())
        .zip(mu.values.iter())
        .map(|((fb, fz), m)| (fb - m * fz).norm())
        .fold(0.0, f64::max);
    let mut w = rho.clone();
    fft.run(&mut w, true);
    w.iter_mut().zip(inv_dbar.iter()).for_each(|(x, m)| *x *= m);
    fft.run(&mut w, false);
    let w0 = w[(g.ny / 2) * g.nx];
    let values: Vec<C64> = (0..n)
        .map(|i| {
            let y = g.node(i % g.nx, i / g.nx).im;
            C64::new(0.0, -2.0 * y) * b + w[i] - w0
        })
        .collect();
    let mut sol = QCSolution {
        grid: g,
        values,
        f_z,
        f_zbar,
        b,
        residual,
        normalization_error: 0.0,
        periodicity_defect: 0.0,
        iterations,
        seam_rows: mu.seam_rows.clone(),
        seam_cols: mu.seam_cols.clone(),
    };
    sol.normalization_error =
        sol.eval(C64::new(0.0, 0.0)).norm() + (sol.eval(C64::new(1.0, 0.0)) - 1.0).norm();
    let mut defect: f64 = 0.0;
    for i in 0..64 {
        let z = C64::new(0.013 + i as f64 / 71.0, (i as f64 / 63.0 - 0.5) * g.height);
        defect = defect.max((sol.eval(z + 1.0) - sol.eval(z) - 1.0).norm());
    }
    sol.periodicity_defect = defect;
    Ok(sol)
}

/// Start of a four-node Lagrange stencil around cell `i` (nodes `i`, `i+1`
/// bracket the point) that does not straddle any seam node.
fn stencil_start(i: i64, seams: &[i64], n: i64, periodic: bool) -> i64 {
    let same = |node: i64, seam: i64| {
        if periodic {
            node.rem_euclid(n) == seam.rem_euclid(n)
        } else {
            node == seam
        }
    };
    let mut start = i - 1;
    for &s in seams {
        if same(i, s) {
            start = i;
        } else if same(i + 1, s) {
            start = i - 2;
        }
    }
    if !periodic {
        start = start.clamp(0, n - 4);
    }
    start
}

fn lagrange_weights(u: f64) -> [f64; 4] {
    // nodes at -1, 0, 1, 2
    [
        -u * (u - 1.0) * (u - 2.0) / 6.0,
        (u + 1.0) * (u - 1.0) * (u - 2.0) / 2.0,
        -(u + 1.0) * u * (u - 2.0) / 2.0,
        (u + 1.0) * u * (u - 1.0) / 6.0,
    ]
}

/// Weights on four consecutive nodes starting at `start` for the point at
/// fractional node position `pos`.
fn weights_at(pos: f64, start: i64) -> [f64; 4] {
    lagrange_weights(pos - (start + 1) as f64)
}

impl QCSolution {
    /// `F(z)`, interpolating `F - id` with piecewise cubics whose stencils
    /// stay on one side of the seams. The real direction is periodic.
    pub fn eval(&self, z: C64) -> C64 {
        z + self.displacement(z)
    }

    /// `F(z) - z`.
    pub fn displacement(&self, z: C64) -> C64 {
        let g = &self.grid;
        let shift = z.re.floor();
        let x = z.re - shift;
        let px = x * g.nx as f64;
        let py = (z.im + g.height) / g.dy();
        // periodic in y for w; the affine part is restored explicitly
        let ly = 2.0 * g.height;
        let wraps = (py / g.ny as f64).floor();
        let py = py - wraps * g.ny as f64;
        let ix = (px.floor() as i64).min(g.nx as i64 - 1);
        let iy = (py.floor() as i64).min(g.ny as i64 - 1);
        let scols: Vec<i64> = self.seam_cols.iter().map(|&c| c as i64).collect();
        let srows: Vec<i64> = self.seam_rows.iter().map(|&c| c as i64).collect();
        let sx = stencil_start(ix, &scols, g.nx as i64, true);
        let sy = stencil_start(iy, &srows, g.ny as i64, true);
        let wx = weights_at(px, sx);
        let wy = weights_at(py, sy);
        let mut acc = C64::new(0.0, 0.0);
        for (a, wya) in wy.iter().enumerate() {
            let kk = sy + a as i64;
            let krow = kk.rem_euclid(g.ny as i64) as usize;
            // undo the affine part across vertical wraps so the stencil sees
            // a smooth function
            let ywrap = (kk.div_euclid(g.ny as i64)) as f64 * ly;
            for (bb, wxb) in wx.iter().enumerate() {
                let jj = (sx + bb as i64).rem_euclid(g.nx as i64) as usize;
                let v = self.values[krow * g.nx + jj] + C64::new(0.0, -2.0 * ywrap) * self.b;
                acc += wya * wxb * v;
            }
        }
        acc + C64::new(0.0, -2.0 * wraps * ly) * self.b
    }

    /// `max |F - id|` over the nodes.
    pub fn distortion(&self) -> f64 {
        self.values.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    /// Nodes as CSV with header `x,y,mu_re,mu_im,f_re,f_im`.
    pub fn grid_csv(&self, mu: &BeltramiField) -> String {
        let g = &self.grid;
        let mut s = String::from("x,y,mu_re,mu_im,f_re,f_im\n");
        for k in 0..g.ny {
            for j in 0..g.nx {
                let z = g.node(j, k);
                let i = k * g.nx + j;
                let f = z + self.values[i];
                let m = mu.values[i];
                let _ = writeln!(
                    s,
                    "{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e}",
                    z.re, z.im, m.re, m.im, f.re, f.im
                );
            }
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid() -> CellGrid {
        CellGrid::new(64, 64, 0.5).unwrap()
    }

    #[test]
    fn zero_mu_is_identity() {
        let mu = BeltramiField::zero(grid());
        let f = solve_beltrami(&mu, &BeltramiConfig::default()).unwrap();
        assert_eq!(f.distortion(), 0.0);
        assert_eq!(f.residual, 0.0);
        let z = C64::new(0.37, 0.21);
        assert!((f.eval(z) - z).norm() < 1e-15);
    }

    #[test]
    fn constant_mu_is_affine() {
        let c = C64::new(0.06, 0.08);
        let g = grid();
        let mu = BeltramiField::from_fn(g, |_| c).unwrap();
        let f = solve_beltrami(&mu, &BeltramiConfig::default()).unwrap();
        for k in 0..g.ny {
            for j in 0..g.nx {
                let z = g.node(j, k);
                let expect = (z + c * z.conj()) / (1.0 + c);
                assert!((z + f.values[k * g.nx + j] - expect).norm() < 1e-12);
            }
        }
        let z = C64::new(0.123, -0.31);
        assert!((f.eval(z) - (z + c * z.conj()) / (1.0 + c)).norm() < 1e-12);
    }

    #[test]
    fn recovers_known_quasiconformal_map() {
        // W = z + d (sin 2 pi x + i cos 2 pi x) sin(pi y / H)^2 is doubly periodic
        // up to the identity; its dilatation drives the solver
        let g = CellGrid::new(128, 128, 0.5).unwrap();
        let d = 0.01;
        let h = g.height;
        let w = move |z: C64| {
            let (x, y) = (z.re, z.im);
            let s = (PI * y / (2.0 * h)).sin().powi(2);
            z + d * C64::new((2.0 * PI * x).sin(), (2.0 * PI * x).cos()) * s
        };
        let dw = move |z: C64| {
            let (x, y) = (z.re, z.im);
            let s = (PI * y / (2.0 * h)).sin().powi(2);
            let ds = PI / (2.0 * h) * (PI * y / h).sin();
            let p = C64::new((2.0 * PI * x).sin(), (2.0 * PI * x).cos());
            let px = C64::new((2.0 * PI * x).cos(), -(2.0 * PI * x).sin()) * 2.0 * PI;
            let wx = 1.0 + d * px * s;
            let wy = C64::new(0.0, 1.0) + d * p * ds;
            let wz = 0.5 * (wx - C64::new(0.0, 1.0) * wy);
            let wzb = 0.5 * (wx + C64::new(0.0, 1.0) * wy);
            (wz, wzb)
        };
        let mu = BeltramiField::from_fn(g, |z| {
            let (a, b) = dw(z);
            b / a
        })
        .unwrap();
        let f = solve_beltrami(&mu, &BeltramiConfig::default()).unwrap();
        let w0 = w(C64::new(0.0, 0.0));
        let mut worst: f64 = 0.0;
        for k in 0..g.ny {
            for j in 0..g.nx {
                let z = g.node(j, k);
                worst = worst.max((z + f.values[k * g.nx + j] - (w(z) - w0)).norm());
            }
        }
        assert!(worst < 1e-10, "{worst}");
        // F o W^{-1} is conformal: Cauchy-Riemann residual by differences
        let hstep = 1e-4;
        let comp = |u: C64| {
            let mut z = u;
            for _ in 0..50 {
                z -= w(z) - u;
            }
            f.eval(z) + w0
        };
        for u in [C64::new(0.3, 0.1), C64::new(0.71, -0.2)] {
            let gx = (comp(u + hstep) - comp(u - hstep)) / (2.0 * hstep);
            let gy = (comp(u + C64::new(0.0, hstep)) - comp(u - C64::new(0.0, hstep))) / (2.0 * hstep);
            let cr = 0.5 * (gx + C64::new(0.0, 1.0) * gy);
            assert!(cr.norm() < 1e-4, "{cr}");
        }
    }

    #[test]
    fn distortion_linear_in_mu() {
        let g = grid();
        let shape = |z: C64| {
            let y = z.im;
            if y.abs() < 0.25 {
                C64::new((2.0 * PI * z.re).cos(), 0.5) * (1.0 - 16.0 * y * y)
            } else {
                C64::new(0.0, 0.0)
            }
        };
        let ratios: Vec<f64> = [1e-4, 1e-3, 1e-2]
            .iter()
            .map(|&t| {
                let mu = BeltramiField::from_fn(g, |z| shape(z) * t).unwrap();
                solve_beltrami(&mu, &BeltramiConfig::default()).unwrap().distortion() / mu.norm_inf
            })
            .collect();
        assert!((ratios[1] / ratios[0] - 1.0).abs() < 0.02, "{ratios:?}");
        assert!((ratios[2] / ratios[0] - 1.0).abs() < 0.05, "{ratios:?}");
    }

    #[test]
    fn real_symmetric_mu_gives_symmetric_f() {
        let g = grid();
        let mu = BeltramiField::from_fn(g, |z| {
            let cut = (1.0 - 16.0 * z.im * z.im).max(0.0);
            0.05 * cut * C64::new((2.0 * PI * z.re).cos() * (1.0 + z.im * z.im), (2.0 * PI * z.re).sin() * z.im)
        })
        .unwrap();
        assert!(mu.is_real_symmetric(1e-15));
        let f = solve_beltrami(&mu, &BeltramiConfig::default()).unwrap();
        for z in [C64::new(0.2, 0.1), C64::new(0.6, 0.3)] {
            assert!((f.eval(z.conj()) - f.eval(z).conj()).norm() < 1e-12);
        }
        assert!(f.periodicity_defect < 1e-12);
        assert!(f.normalization_error < 1e-12);
        assert!(f.residual < 1e-12);
    }

    #[test]
    fn rejects_non_elliptic() {
        let g = grid();
        let mu = BeltramiField::from_fn(g, |_| C64::new(1.0, 0.0)).unwrap();
        assert!(matches!(
            solve_beltrami(&mu, &BeltramiConfig::default()),
            Err(Error::Ellipticity { .. })
        ));
    }

    #[test]
    fn iteration_cap_is_reported() {
        let g = grid();
        let mu = BeltramiField::from_fn(g, |z| 0.4 * C64::new((2.0 * PI * z.re).cos(), 0.3)).unwrap();
        let cfg = BeltramiConfig { tolerance: 1e-15, max_iterations: 3 };
        assert!(matches!(solve_beltrami(&mu, &cfg), Err(Error::NonConvergence { .. })));
    }

    #[test]
    fn stencils_avoid_seams() {
        assert_eq!(stencil_start(5, &[], 64, true), 4);
        assert_eq!(stencil_start(5, &[5], 64, true), 5);
        assert_eq!(stencil_start(5, &[6], 64, true), 3);
        assert_eq!(stencil_start(0, &[0], 64, true), 0);
        assert_eq!(stencil_start(63, &[0], 64, true), 61);
    }

    #[test]
    fn grid_layout() {
        let g = CellGrid::for_strip(1.5, 64).unwrap();
        assert_eq!(g.ny, 128);
        assert_eq!(g.height, 6.0);
        assert_eq!(g.row_of(-3.0), Some(32));
        assert_eq!(g.row_of(3.0), Some(96));
        assert_eq!(g.row_of(0.0), Some(64));
        let csv = solve_beltrami(&BeltramiField::zero(CellGrid::new(8, 8, 1.0).unwrap()), &BeltramiConfig::default())
            .unwrap()
            .grid_csv(&BeltramiField::zero(CellGrid::new(8, 8, 1.0).unwrap()));
        assert_eq!(csv.lines().count(), 65);
    }
}
