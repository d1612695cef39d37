//! Poisson solvers on the square with homogeneous Dirichlet data, the
//! logarithmic decomposition `u = c chi(|x|) ln|x| + u~` of solutions with
//! non-zero mass, and the least-squares inversion of the conformal Killing
//! operator.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::{Arc, Mutex, OnceLock};

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use thiserror::Error;

use crate::grid::{
    derivative, integrate, laplacian, Axis, GridSpec, ScalarField,
    SymTensorField, VectorField,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EllipticError {
    #[error("source has non-zero mean: integral {integral:e} exceeds {tolerance:e}")]
    NonZeroMean { integral: f64, tolerance: f64 },
    #[error("solver did not converge: residual {residual:e} after {iterations} iterations")]
    NoConvergence { residual: f64, iterations: usize },
    #[error("invalid elliptic configuration: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoissonBackend {
    SineTransform,
    ConjugateGradient,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EllipticConfig {
    /// Decay weight of the function spaces, `-1 < delta < 0`.
    pub delta: f64,
    /// Residual tolerance, relative to `max(1, |f|_inf)` for Poisson solves
    /// and to the initial normal-equation residual for Killing inversion.
    pub tol: f64,
    pub max_iter: usize,
    /// Largest admissible `|int f|` for mean-zero solves.
    pub mean_tol: f64,
    pub backend: PoissonBackend,
}

impl Default for EllipticConfig {
    fn default() -> Self {
        Self {
            delta: -0.5,
            tol: 1e-10,
            max_iter: 2000,
            mean_tol: 1e-8,
            backend: PoissonBackend::SineTransform,
        }
    }
}

impl EllipticConfig {
    pub fn validate(&self) -> Result<(), EllipticError> {
        if !(self.delta > -1.0 && self.delta < 0.0) {
            return Err(EllipticError::InvalidConfig(format!(
                "delta={} must lie in (-1, 0)",
                self.delta
            )));
        }
        if !(self.tol > 0.0 && self.tol.is_finite()) {
            return Err(EllipticError::InvalidConfig(format!("tol={} must be positive", self.tol)));
        }
        if self.max_iter == 0 {
            return Err(EllipticError::InvalidConfig("max_iter must be positive".into()));
        }
        if !(self.mean_tol >= 0.0) {
            return Err(EllipticError::InvalidConfig("mean_tol must be non-negative".into()));
        }
        Ok(())
    }
}

/// Smooth radial step: 0 for `s <= 1`, 1 for `s >= 2`.
pub fn chi(s: f64) -> f64 {
    chi_derivs(s).0
}

fn psi(t: f64) -> (f64, f64, f64) {
    if t <= 0.0 {
        return (0.0, 0.0, 0.0);
    }
    let p = (-1.0 / t).exp();
    let t2 = t * t;
    (p, p / t2, p * (1.0 / (t2 * t2) - 2.0 / (t2 * t)))
}

/// `chi(s)` together with its first two derivatives.
pub fn chi_derivs(s: f64) -> (f64, f64, f64) {
    if s <= 1.0 {
        return (0.0, 0.0, 0.0);
    }
    if s >= 2.0 {
        return (1.0, 0.0, 0.0);
    }
    let (a, a1, a2) = psi(s - 1.0);
    let (b, b1, b2) = psi(2.0 - s);
    let (b1, b2) = (-b1, b2);
    let d = a + b;
    let num = a1 * b - a * b1;
    let num1 = a2 * b - a * b2;
    let d1 = a1 + b1;
    (a / d, num / (d * d), num1 / (d * d) - 2.0 * num * d1 / (d * d * d))
}

/// Radial profile `g(r) = chi(r) ln r` and its first two derivatives.
pub fn chi_ln_radial(r: f64) -> (f64, f64, f64) {
    if r <= 1.0 {
        return (0.0, 0.0, 0.0);
    }
    let (c, c1, c2) = chi_derivs(r);
    let l = r.ln();
    (c * l, c1 * l + c / r, c2 * l + 2.0 * c1 / r - c / (r * r))
}

/// `chi(|x|) ln|x|` with analytic gradient, Hessian and Laplacian.
#[derive(Debug, Clone, PartialEq)]
pub struct ChiLn {
    pub value: ScalarField,
    pub grad: VectorField,
    pub hess: SymTensorField,
    pub lap: ScalarField,
    /// Five-point Laplacian of `value` on interior nodes, zero on the boundary.
    pub lap_h: ScalarField,
    /// Quadrature of `lap_h`, equal to `2 pi` up to discretization error.
    pub mass: f64,
}

pub fn chi_cutoff(grid: GridSpec) -> Arc<ChiLn> {
    let len = grid.len();
    let mut value = vec![0.0; len];
    let mut gx = vec![0.0; len];
    let mut gy = vec![0.0; len];
    let mut hxx = vec![0.0; len];
    let mut hxy = vec![0.0; len];
    let mut hyy = vec![0.0; len];
    let mut lap = vec![0.0; len];
    for k in 0..len {
        let (x, y) = grid.point(k);
        let r = (x * x + y * y).sqrt();
        if r <= 1.0 {
            continue;
        }
        let (g, g1, g2) = chi_ln_radial(r);
        let (nx, ny) = (x / r, y / r);
        value[k] = g;
        gx[k] = g1 * nx;
        gy[k] = g1 * ny;
        let t = g1 / r;
        hxx[k] = g2 * nx * nx + t * (1.0 - nx * nx);
        hxy[k] = (g2 - t) * nx * ny;
        hyy[k] = g2 * ny * ny + t * (1.0 - ny * ny);
        lap[k] = g2 + t;
    }
    let f = |v: Vec<f64>| ScalarField::from_vec(grid, v).expect("sized to grid");
    let value = f(value);
    let mut lap_h = laplacian(&value);
    for (k, v) in lap_h.values_mut().iter_mut().enumerate() {
        if grid.boundary_distance(k) == 0 {
            *v = 0.0;
        }
    }
    Arc::new(ChiLn {
        grad: VectorField { x: f(gx), y: f(gy) },
        hess: SymTensorField { xx: f(hxx), xy: f(hxy), yy: f(hyy) },
        lap: f(lap),
        mass: integrate(&lap_h),
        lap_h,
        value,
    })
}

/// `u = offset + log_coeff * chi ln|x| + tilde`.
#[derive(Debug, Clone, PartialEq)]
pub struct LogDecomposedScalar {
    pub log_coeff: f64,
    pub tilde: ScalarField,
    pub offset: f64,
    pub chi_ln: Arc<ChiLn>,
}

impl LogDecomposedScalar {
    pub fn new(log_coeff: f64, tilde: ScalarField, offset: f64, chi_ln: Arc<ChiLn>) -> Self {
        Self { log_coeff, tilde, offset, chi_ln }
    }

    pub fn grid(&self) -> &GridSpec {
        self.tilde.grid()
    }

    pub fn full(&self) -> ScalarField {
        let c = self.log_coeff;
        let o = self.offset;
        self.tilde.zip_map(&self.chi_ln.value, |t, l| o + c * l + t)
    }

    // Derivatives act on the assembled field: the split pieces each carry the
    // steep profile of chi, which cancels in the sum.

    pub fn gradient(&self) -> VectorField {
        crate::grid::gradient(&self.full())
    }

    /// Five-point Laplacian; on interior nodes the inverse of [`solve_poisson_logasym`].
    pub fn laplacian(&self) -> ScalarField {
        laplacian(&self.full())
    }

    pub fn laplacian4(&self) -> ScalarField {
        crate::grid::laplacian4(&self.full())
    }

    pub fn hessian(&self) -> SymTensorField {
        crate::grid::hessian(&self.full())
    }
}

struct SinePlan {
    m: usize,
    fft: Arc<dyn Fft<f64>>,
    // eigenvalues of the 1D second difference on interior nodes, unscaled by h^2
    eig: Vec<f64>,
}

fn sine_plan(n: usize) -> Arc<SinePlan> {
    static CACHE: OnceLock<Mutex<HashMap<usize, Arc<SinePlan>>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    let mut guard = cache.lock().expect("plan cache poisoned");
    guard
        .entry(n)
        .or_insert_with(|| {
            let m = n - 2;
            let fft = FftPlanner::new().plan_fft_forward(2 * (m + 1));
            let eig = (1..=m)
                .map(|k| 2.0 * (PI * k as f64 / (m + 1) as f64).cos() - 2.0)
                .collect();
            Arc::new(SinePlan { m, fft, eig })
        })
        .clone()
}

impl SinePlan {
    /// Unnormalised DST-I of two lines at once (`a` in the real part, `b` in
    /// the imaginary part of one complex transform).
    fn dst_pair(&self, a: &mut [f64], b: &mut [f64], buf: &mut [Complex<f64>], scratch: &mut [Complex<f64>]) {
        let m = self.m;
        let len = 2 * (m + 1);
        buf[0] = Complex::new(0.0, 0.0);
        buf[m + 1] = Complex::new(0.0, 0.0);
        for j in 0..m {
            buf[j + 1] = Complex::new(a[j], b[j]);
            buf[len - 1 - j] = Complex::new(-a[j], -b[j]);
        }
        self.fft.process_with_scratch(buf, scratch);
        for k in 0..m {
            let y = buf[k + 1];
            a[k] = -0.5 * y.im;
            b[k] = 0.5 * y.re;
        }
    }

    /// In-place 2D DST-I on an `m x m` row-major array.
    fn dst2(&self, data: &mut [f64]) {
        let m = self.m;
        let len = 2 * (m + 1);
        let mut buf = vec![Complex::new(0.0, 0.0); len];
        let mut scratch = vec![Complex::new(0.0, 0.0); self.fft.get_inplace_scratch_len()];
        let mut a = vec![0.0; m];
        let mut b = vec![0.0; m];
        let mut pass = |data: &mut [f64], stride_rows: bool| {
            let mut r = 0;
            while r < m {
                let r2 = (r + 1).min(m - 1);
                for j in 0..m {
                    let (ia, ib) = if stride_rows { (r * m + j, r2 * m + j) } else { (j * m + r, j * m + r2) };
                    a[j] = data[ia];
                    b[j] = if r2 != r { data[ib] } else { 0.0 };
                }
                self.dst_pair(&mut a, &mut b, &mut buf, &mut scratch);
                for j in 0..m {
                    let (ia, ib) = if stride_rows { (r * m + j, r2 * m + j) } else { (j * m + r, j * m + r2) };
                    data[ia] = a[j];
                    if r2 != r {
                        data[ib] = b[j];
                    }
                }
                r += 2;
            }
        };
        pass(data, true);
        pass(data, false);
    }
}

fn interior(f: &ScalarField) -> Vec<f64> {
    let n = f.grid().n();
    let m = n - 2;
    let v = f.values();
    let mut out = vec![0.0; m * m];
    for j in 0..m {
        out[j * m..(j + 1) * m].copy_from_slice(&v[(j + 1) * n + 1..(j + 1) * n + 1 + m]);
    }
    out
}

fn embed(grid: GridSpec, inner: &[f64]) -> ScalarField {
    let n = grid.n();
    let m = n - 2;
    let mut v = vec![0.0; grid.len()];
    for j in 0..m {
        v[(j + 1) * n + 1..(j + 1) * n + 1 + m].copy_from_slice(&inner[j * m..(j + 1) * m]);
    }
    ScalarField::from_vec(grid, v).expect("sized to grid")
}

/// Direct solve of `Delta_h u = f` at interior nodes with `u = 0` on the
/// boundary, by a double sine transform.
fn dirichlet_sine(f: &ScalarField) -> ScalarField {
    let grid = *f.grid();
    let plan = sine_plan(grid.n());
    let m = plan.m;
    let h2 = grid.spacing() * grid.spacing();
    let mut data = interior(f);
    plan.dst2(&mut data);
    let norm = (2.0 / (m + 1) as f64).powi(2);
    for l in 0..m {
        for k in 0..m {
            data[l * m + k] *= norm * h2 / (plan.eig[k] + plan.eig[l]);
        }
    }
    plan.dst2(&mut data);
    embed(grid, &data)
}

/// Applies the interior five-point operator to an interior array.
fn apply_interior_laplacian(u: &[f64], out: &mut [f64], m: usize, h: f64) {
    let s = 1.0 / (h * h);
    for j in 0..m {
        for i in 0..m {
            let c = u[j * m + i];
            let w = if i > 0 { u[j * m + i - 1] } else { 0.0 };
            let e = if i + 1 < m { u[j * m + i + 1] } else { 0.0 };
            let so = if j > 0 { u[(j - 1) * m + i] } else { 0.0 };
            let no = if j + 1 < m { u[(j + 1) * m + i] } else { 0.0 };
            out[j * m + i] = ((w + e) + (so + no) - 4.0 * c) * s;
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn sup(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}

fn dirichlet_cg(f: &ScalarField, cfg: &EllipticConfig) -> Result<ScalarField, EllipticError> {
    let grid = *f.grid();
    let m = grid.n() - 2;
    let h = grid.spacing();
    // solve (-Delta_h) u = -f, which is symmetric positive definite
    let b: Vec<f64> = interior(f).iter().map(|v| -v).collect();
    let target = 1e-2 * cfg.tol * f.sup_norm().max(1.0);
    let mut x = vec![0.0; m * m];
    let mut r = b.clone();
    let mut p = r.clone();
    let mut ap = vec![0.0; m * m];
    let mut rr = dot(&r, &r);
    for it in 0..cfg.max_iter {
        if sup(&r) <= target {
            return Ok(embed(grid, &x));
        }
        apply_interior_laplacian(&p, &mut ap, m, h);
        ap.iter_mut().for_each(|v| *v = -*v);
        let alpha = rr / dot(&p, &ap);
        for k in 0..x.len() {
            x[k] += alpha * p[k];
            r[k] -= alpha * ap[k];
        }
        let rr_new = dot(&r, &r);
        let beta = rr_new / rr;
        rr = rr_new;
        for k in 0..p.len() {
            p[k] = r[k] + beta * p[k];
        }
        if !rr.is_finite() {
            return Err(EllipticError::NoConvergence { residual: rr, iterations: it });
        }
    }
    if sup(&r) <= target {
        return Ok(embed(grid, &x));
    }
    Err(EllipticError::NoConvergence { residual: sup(&r), iterations: cfg.max_iter })
}

/// Sup of `Delta_h u - f` over interior nodes.
pub fn poisson_residual(u: &ScalarField, f: &ScalarField) -> f64 {
    let m = u.grid().n() - 2;
    let mut lu = vec![0.0; m * m];
    apply_interior_laplacian(&interior(u), &mut lu, m, u.grid().spacing());
    let fi = interior(f);
    lu.iter().zip(&fi).fold(0.0, |acc, (a, b)| acc.max((a - b).abs()))
}

/// Solves `Delta_h u = f` with `u = 0` on the boundary, without any
/// compatibility requirement on `f`.
pub fn solve_poisson_dirichlet(f: &ScalarField, cfg: &EllipticConfig) -> Result<ScalarField, EllipticError> {
    let u = match cfg.backend {
        PoissonBackend::SineTransform => dirichlet_sine(f),
        PoissonBackend::ConjugateGradient => dirichlet_cg(f, cfg)?,
    };
    let residual = poisson_residual(&u, f);
    let scale = f.sup_norm().max(1.0);
    if !(residual <= cfg.tol * scale) {
        return Err(EllipticError::NoConvergence { residual, iterations: 1 });
    }
    Ok(u)
}

/// Solves `Delta u = f` for sources with vanishing integral.
pub fn solve_poisson_meanzero(f: &ScalarField, cfg: &EllipticConfig) -> Result<ScalarField, EllipticError> {
    let integral = integrate(f);
    if !(integral.abs() <= cfg.mean_tol) {
        return Err(EllipticError::NonZeroMean { integral, tolerance: cfg.mean_tol });
    }
    solve_poisson_dirichlet(f, cfg)
}

/// Solves `Delta u = f` as `u = c chi ln|x| + u~` with `c = (1/2pi) int f`.
/// `u~` solves the five-point problem with source `f - c Delta_h(chi ln)`, so
/// the assembled field inverts the five-point Laplacian exactly. That source
/// integrates to `c (2 pi - mass)`, an `O(h^2)` flux carried out through the
/// Dirichlet boundary.
pub fn solve_poisson_logasym(
    f: &ScalarField,
    chi_ln: &Arc<ChiLn>,
    cfg: &EllipticConfig,
) -> Result<LogDecomposedScalar, EllipticError> {
    let c = integrate(f) / (2.0 * PI);
    let rest = f.axpy(-c, &chi_ln.lap_h);
    let tilde = solve_poisson_dirichlet(&rest, cfg)?;
    Ok(LogDecomposedScalar::new(c, tilde, 0.0, chi_ln.clone()))
}

/// `(L xi)_ij = d_i xi_j + d_j xi_i - delta_ij div xi`.
pub fn conformal_killing(xi: &VectorField) -> SymTensorField {
    let dxx = derivative(&xi.x, Axis::X);
    let dyy = derivative(&xi.y, Axis::Y);
    let dxy = derivative(&xi.y, Axis::X);
    let dyx = derivative(&xi.x, Axis::Y);
    SymTensorField {
        xx: dxx.sub(&dyy),
        xy: dxy.add(&dyx),
        yy: dyy.sub(&dxx),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KillingInversion {
    pub beta: VectorField,
    /// `|| L beta - S' ||_inf` (pointwise Frobenius norm).
    pub residual: f64,
    /// `|| L beta - S' ||_{L^2}`
    pub residual_l2: f64,
}

/// `d_i T_ij` with the fourth-order stencils.
fn tensor_div(t: &SymTensorField) -> VectorField {
    VectorField {
        x: derivative(&t.xx, Axis::X).add(&derivative(&t.xy, Axis::Y)),
        y: derivative(&t.xy, Axis::X).add(&derivative(&t.yy, Axis::Y)),
    }
}

/// Solves `L beta = S'` with `S' = factor * S` through its divergence,
/// `Delta beta_j = d_i S'_ij`, with `beta = 0` on the boundary. Given a
/// starting field `warm`, only the defect `S' - L warm` is inverted, which
/// leaves the exact answer unchanged and reduces the discretization error
/// when `warm` is already close.
pub fn invert_killing(
    source: &SymTensorField,
    factor: &ScalarField,
    cfg: &EllipticConfig,
    warm: Option<&VectorField>,
) -> Result<KillingInversion, EllipticError> {
    let target = source.scale_by(factor);
    let (base, defect) = match warm {
        Some(w) => (Some(w), target.sub(&conformal_killing(w))),
        None => (None, target.clone()),
    };
    let div = tensor_div(&defect);
    // the discrete mean of a divergence is a boundary flux, absorbed by beta = 0
    let mut beta = VectorField {
        x: solve_poisson_dirichlet(&div.x, cfg)?,
        y: solve_poisson_dirichlet(&div.y, cfg)?,
    };
    if let Some(w) = base {
        beta = beta.add(w);
    }
    let miss = conformal_killing(&beta).sub(&target);
    Ok(KillingInversion {
        residual: miss.sup_norm(),
        residual_l2: integrate(&miss.norm_sq()).sqrt(),
        beta,
    })
}
