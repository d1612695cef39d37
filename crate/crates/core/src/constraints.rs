//! Construction of initial data satisfying the momentum and Hamiltonian
//! constraints together with the elliptic gauge conditions at `t = 0`.

use std::f64::consts::PI;
use std::sync::Arc;

use thiserror::Error;

use crate::elliptic::{
    chi_cutoff, conformal_killing, invert_killing, solve_poisson_logasym, solve_poisson_meanzero,
    ChiLn, EllipticConfig, EllipticError, LogDecomposedScalar,
};
use crate::geometry::{tensor_divergence, StateVector};
use crate::grid::{gradient, integrate, lp_norm, GridSpec, ScalarField, SymTensorField, VectorField};

const MAX_PICARD: usize = 50;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConstraintError {
    #[error("orthogonality condition violated: integrals ({0:e}, {1:e})")]
    OrthogonalityViolated(f64, f64),
    #[error("fixed-point iteration diverged after {iterations} iterations (last change {change:e})")]
    FixedPointDiverged { iterations: usize, change: f64 },
    #[error("lapse collapsed: min N = {0}")]
    LapseCollapse(f64),
    #[error("invalid free data: {0}")]
    InvalidData(String),
    #[error(transparent)]
    Elliptic(#[from] EllipticError),
}

/// Free data: the matter potentials and their rescaled momenta
/// `phi_dot = e^{2gamma} T phi`, `omega_dot = e^{2gamma} T omega`.
#[derive(Debug, Clone, PartialEq)]
pub struct FreeData {
    pub phi: ScalarField,
    pub phi_dot: ScalarField,
    pub omega: ScalarField,
    pub omega_dot: ScalarField,
    pub support_radius: f64,
}

/// Which of the four free fields a data family switches on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FieldMask {
    pub phi: bool,
    pub phi_dot: bool,
    pub omega: bool,
    pub omega_dot: bool,
}

impl FieldMask {
    pub const ALL: FieldMask = FieldMask { phi: true, phi_dot: true, omega: true, omega_dot: true };
}

/// `exp(-1/(1-s^2))` for `|s| < 1`, zero otherwise.
pub fn bump(s: f64) -> f64 {
    if s.abs() >= 1.0 {
        0.0
    } else {
        (-1.0 / (1.0 - s * s)).exp()
    }
}

/// `amp exp(-1/(1-s^2))` with `s = |x - center| / radius`.
pub fn bump_field(grid: GridSpec, amp: f64, center: (f64, f64), radius: f64) -> ScalarField {
    ScalarField::from_fn(grid, |x, y| {
        let r = ((x - center.0).powi(2) + (y - center.1).powi(2)).sqrt();
        amp * bump(r / radius)
    })
}

impl FreeData {
    pub fn zero(grid: GridSpec, support_radius: f64) -> Self {
        let z = ScalarField::zeros(grid);
        Self {
            phi: z.clone(),
            phi_dot: z.clone(),
            omega: z.clone(),
            omega_dot: z,
            support_radius,
        }
    }

    /// Centred radial bumps `eps exp(-1/(1-|x/R|^2))`; orthogonal by parity.
    pub fn radial(grid: GridSpec, eps: f64, radius: f64, mask: FieldMask) -> Self {
        let f = |on: bool| bump_field(grid, if on { eps } else { 0.0 }, (0.0, 0.0), radius);
        Self {
            phi: f(mask.phi),
            phi_dot: f(mask.phi_dot),
            omega: f(mask.omega),
            omega_dot: f(mask.omega_dot),
            support_radius: radius,
        }
    }

    /// Off-centre bumps inside `B_R`, made admissible by [`FreeData::orthogonalize`].
    pub fn asymmetric(grid: GridSpec, eps: f64, radius: f64, mask: FieldMask) -> Self {
        let r = radius;
        let f = |on: bool, c: (f64, f64), w: f64| {
            bump_field(grid, if on { eps } else { 0.0 }, (c.0 * r, c.1 * r), w * r)
        };
        let mut data = Self {
            phi: f(mask.phi, (0.2, 0.1), 0.5),
            phi_dot: f(mask.phi_dot, (-0.15, 0.15), 0.5),
            omega: f(mask.omega, (0.1, -0.2), 0.45),
            omega_dot: f(mask.omega_dot, (-0.15, -0.1), 0.45),
            support_radius: radius,
        };
        data.orthogonalize();
        data
    }

    pub fn grid(&self) -> &GridSpec {
        self.phi.grid()
    }

    /// Corrects `(phi_dot, omega_dot)` along `(2 d_k phi, e^{-4phi} d_k omega / 2)`
    /// so that both orthogonality integrals vanish. The correction keeps the
    /// support inside `B_R`.
    pub fn orthogonalize(&mut self) {
        let gp = gradient(&self.phi);
        let gw = gradient(&self.omega);
        let em4 = self.phi.map(|p| (-4.0 * p).exp());
        let grid = *self.grid();
        let r2 = self.support_radius * self.support_radius;
        // stencils reach two nodes past the data; those values are cut off
        let inside = ScalarField::from_index_fn(grid, |k| {
            let (x, y) = grid.point(k);
            if x * x + y * y < r2 { 1.0 } else { 0.0 }
        });
        let dir = |k: usize| -> (ScalarField, ScalarField) {
            let (p, w) = if k == 0 { (&gp.x, &gw.x) } else { (&gp.y, &gw.y) };
            (p.mul(&inside).scale(2.0), w.mul(&em4).mul(&inside).scale(0.5))
        };
        let dirs = [dir(0), dir(1)];
        let mut gram = [[0.0; 2]; 2];
        for j in 0..2 {
            for k in 0..2 {
                let (pj, wj) = (&dirs[j].0, &dirs[j].1);
                let (pk, wk) = (&dirs[k].0, &dirs[k].1);
                gram[j][k] = integrate(&pj.mul(pk).add(&wj.mul(wk)));
            }
        }
        let (i0, i1) = check_orthogonality(self);
        let det = gram[0][0] * gram[1][1] - gram[0][1] * gram[1][0];
        if det.abs() <= 1e-300 {
            return;
        }
        let a0 = -(gram[1][1] * i0 - gram[0][1] * i1) / det;
        let a1 = -(gram[0][0] * i1 - gram[1][0] * i0) / det;
        self.phi_dot = self.phi_dot.axpy(a0, &dirs[0].0).axpy(a1, &dirs[1].0);
        self.omega_dot = self.omega_dot.axpy(a0, &dirs[0].1).axpy(a1, &dirs[1].1);
    }

    /// Uniform rescaling of all four fields.
    pub fn scaled(&self, s: f64) -> Self {
        Self {
            phi: self.phi.scale(s),
            phi_dot: self.phi_dot.scale(s),
            omega: self.omega.scale(s),
            omega_dot: self.omega_dot.scale(s),
            support_radius: self.support_radius,
        }
    }

    /// Largest value of any field outside `B_R`.
    pub fn leakage(&self) -> f64 {
        let g = *self.grid();
        let r2 = self.support_radius * self.support_radius;
        let mut worst: f64 = 0.0;
        for f in [&self.phi, &self.phi_dot, &self.omega, &self.omega_dot] {
            for (k, v) in f.values().iter().enumerate() {
                let (x, y) = g.point(k);
                if x * x + y * y >= r2 {
                    worst = worst.max(v.abs());
                }
            }
        }
        worst
    }

    pub fn validate(&self) -> Result<(), ConstraintError> {
        let g = *self.grid();
        if !(self.support_radius > 0.0 && self.support_radius < g.half_width() / 4.0) {
            return Err(ConstraintError::InvalidData(format!(
                "support radius {} must lie in (0, L/4)",
                self.support_radius
            )));
        }
        for f in [&self.phi, &self.phi_dot, &self.omega, &self.omega_dot] {
            if !f.is_finite() {
                return Err(ConstraintError::InvalidData("non-finite free data".into()));
            }
        }
        let leak = self.leakage();
        if leak > 1e-14 {
            return Err(ConstraintError::InvalidData(format!("data leaks outside B_R: {leak:e}")));
        }
        Ok(())
    }
}

/// The integrals `int (2 phi_dot d_j phi + e^{-4phi} omega_dot d_j omega / 2)`.
pub fn check_orthogonality(free: &FreeData) -> (f64, f64) {
    let s = momentum_source(free);
    (-integrate(&s.x), -integrate(&s.y))
}

/// `-2 phi_dot d_j phi - e^{-4phi} omega_dot d_j omega / 2`
fn momentum_source(free: &FreeData) -> VectorField {
    let gp = gradient(&free.phi);
    let gw = gradient(&free.omega);
    let (pd, wd, ph) = (free.phi_dot.values(), free.omega_dot.values(), free.phi.values());
    let g = *free.grid();
    let comp = |a: &ScalarField, b: &ScalarField| {
        let (a, b) = (a.values(), b.values());
        ScalarField::from_index_fn(g, |k| -2.0 * pd[k] * a[k] - 0.5 * (-4.0 * ph[k]).exp() * wd[k] * b[k])
    };
    VectorField { x: comp(&gp.x, &gw.x), y: comp(&gp.y, &gw.y) }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MomentumSolution {
    pub h: SymTensorField,
    pub y: VectorField,
    /// `|| d^i H_ij - S_j ||_{L^2}` with fourth-order divergence.
    pub residual: f64,
}

/// Solves `Delta Y_j = S_j` and sets `H = L Y`.
pub fn solve_momentum(free: &FreeData, cfg: &EllipticConfig) -> Result<MomentumSolution, ConstraintError> {
    let (i0, i1) = check_orthogonality(free);
    if i0.abs().max(i1.abs()) > cfg.mean_tol {
        return Err(ConstraintError::OrthogonalityViolated(i0, i1));
    }
    let src = momentum_source(free);
    let y = VectorField {
        x: solve_poisson_meanzero(&src.x, cfg)?,
        y: solve_poisson_meanzero(&src.y, cfg)?,
    };
    let h = conformal_killing(&y);
    let div = tensor_divergence(&h);
    let d = div.sub(&src);
    let residual = (lp_norm(&d.x, 2.0).powi(2) + lp_norm(&d.y, 2.0).powi(2)).sqrt();
    Ok(MomentumSolution { h, y, residual })
}

/// Right-hand side of the Hamiltonian constraint `Delta gamma = rhs`.
pub fn hamiltonian_rhs(gamma: &ScalarField, h: &SymTensorField, free: &FreeData) -> ScalarField {
    let gp = gradient(&free.phi).norm_sq();
    let gw = gradient(&free.omega).norm_sq();
    let hn = h.norm_sq();
    let (pd, wd, ph) = (free.phi_dot.values(), free.omega_dot.values(), free.phi.values());
    ScalarField::from_index_fn(*free.grid(), |k| {
        let em4 = (-4.0 * ph[k]).exp();
        -(-2.0 * gamma.values()[k]).exp() * (pd[k] * pd[k] + 0.25 * em4 * wd[k] * wd[k] + 0.5 * hn.values()[k])
            - gp.values()[k]
            - 0.25 * em4 * gw.values()[k]
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct FixedPoint {
    pub solution: LogDecomposedScalar,
    pub iterations: usize,
    pub change: f64,
}

fn picard(
    mut update: impl FnMut(&LogDecomposedScalar) -> Result<LogDecomposedScalar, ConstraintError>,
    start: LogDecomposedScalar,
    tol: f64,
) -> Result<FixedPoint, ConstraintError> {
    let mut cur = start;
    let mut prev_change = f64::INFINITY;
    for it in 1..=MAX_PICARD {
        let next = update(&cur)?;
        let change = next.full().sub(&cur.full()).sup_norm();
        cur = next;
        if change < tol {
            return Ok(FixedPoint { solution: cur, iterations: it, change });
        }
        if !change.is_finite() || (it > 3 && change > 2.0 * prev_change) {
            return Err(ConstraintError::FixedPointDiverged { iterations: it, change });
        }
        prev_change = change;
    }
    Err(ConstraintError::FixedPointDiverged { iterations: MAX_PICARD, change: prev_change })
}

/// Picard iteration for `gamma`, returned with `log_coeff = -alpha`.
pub fn solve_hamiltonian(
    h: &SymTensorField,
    free: &FreeData,
    chi_ln: &Arc<ChiLn>,
    cfg: &EllipticConfig,
) -> Result<FixedPoint, ConstraintError> {
    let grid = *free.grid();
    let start = LogDecomposedScalar::new(0.0, ScalarField::zeros(grid), 0.0, chi_ln.clone());
    picard(
        |g| {
            let rhs = hamiltonian_rhs(&g.full(), h, free);
            Ok(solve_poisson_logasym(&rhs, chi_ln, cfg)?)
        },
        start,
        cfg.tol,
    )
}

/// `q` in `Delta N = N q`, with `q = e^{-2gamma}(|H|^2 + 2 phi_dot^2 + e^{-4phi} omega_dot^2 / 2)`.
pub fn lapse_potential(gamma: &ScalarField, h: &SymTensorField, free: &FreeData) -> ScalarField {
    let hn = h.norm_sq();
    let (pd, wd, ph) = (free.phi_dot.values(), free.omega_dot.values(), free.phi.values());
    ScalarField::from_index_fn(*free.grid(), |k| {
        (-2.0 * gamma.values()[k]).exp()
            * (hn.values()[k] + 2.0 * pd[k] * pd[k] + 0.5 * (-4.0 * ph[k]).exp() * wd[k] * wd[k])
    })
}

/// Solves `Delta N = N q` about `N = 1`.
pub fn solve_lapse(
    q: &ScalarField,
    chi_ln: &Arc<ChiLn>,
    cfg: &EllipticConfig,
    start: Option<LogDecomposedScalar>,
) -> Result<FixedPoint, ConstraintError> {
    let grid = *q.grid();
    let start = start.unwrap_or_else(|| LogDecomposedScalar::new(0.0, ScalarField::zeros(grid), 1.0, chi_ln.clone()));
    let fp = picard(
        |n| {
            let mut next = solve_poisson_logasym(&n.full().mul(q), chi_ln, cfg)?;
            next.offset = 1.0;
            Ok(next)
        },
        start,
        cfg.tol,
    )?;
    let min_n = fp.solution.full().min();
    if !(min_n > 0.1) {
        return Err(ConstraintError::LapseCollapse(min_n));
    }
    Ok(fp)
}

pub fn solve_lapse_initial(
    gamma: &LogDecomposedScalar,
    h: &SymTensorField,
    free: &FreeData,
    cfg: &EllipticConfig,
) -> Result<FixedPoint, ConstraintError> {
    let q = lapse_potential(&gamma.full(), h, free);
    solve_lapse(&q, &gamma.chi_ln, cfg, None)
}

/// `beta` from `L beta = 2 N e^{-2gamma} H`.
pub fn solve_shift_initial(
    gamma: &LogDecomposedScalar,
    lapse: &LogDecomposedScalar,
    h: &SymTensorField,
    cfg: &EllipticConfig,
    warm: Option<&VectorField>,
) -> Result<(VectorField, f64), ConstraintError> {
    let factor = shift_factor(&gamma.full(), &lapse.full());
    let inv = invert_killing(h, &factor, cfg, warm)?;
    Ok((inv.beta, inv.residual))
}

/// `2 N e^{-2gamma}`
pub fn shift_factor(gamma: &ScalarField, lapse: &ScalarField) -> ScalarField {
    lapse.zip_map(gamma, |n, g| 2.0 * n * (-2.0 * g).exp())
}

/// Residuals and integrals recorded when assembling initial data.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintReport {
    pub alpha: f64,
    pub lapse_log_coeff: f64,
    pub momentum_residual: f64,
    /// `|| Delta gamma - rhs ||_{L^2}` with the fourth-order Laplacian.
    pub hamiltonian_residual: f64,
    /// `|| L beta - 2 N e^{-2gamma} H ||_inf`
    pub shift_residual: f64,
    pub cl1: (f64, f64),
    pub cl2_residual: f64,
    pub orthogonality: (f64, f64),
    pub gamma_iterations: usize,
    pub lapse_iterations: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InitialDataSet {
    pub free: FreeData,
    pub h: SymTensorField,
    pub gamma: LogDecomposedScalar,
    pub lapse: LogDecomposedScalar,
    pub beta: VectorField,
    pub e0_gamma: ScalarField,
    pub report: ConstraintReport,
}

impl InitialDataSet {
    /// The `t = 0` slice with `tau = 0` and `T phi = e^{-2gamma} phi_dot`.
    pub fn state(&self) -> StateVector {
        let gamma = self.gamma.full();
        let n = self.lapse.full();
        let em2g = gamma.map(|g| (-2.0 * g).exp());
        let alpha = -self.gamma.log_coeff;
        let bl = self.beta.dot(&self.gamma.chi_ln.grad);
        let grid = *self.h.grid();
        let p_gamma = ScalarField::from_index_fn(grid, |k| {
            (self.e0_gamma.values()[k] - alpha * bl.values()[k]) / n.values()[k]
        });
        StateVector {
            t: 0.0,
            phi: self.free.phi.clone(),
            p_phi: self.free.phi_dot.mul(&em2g),
            omega: self.free.omega.clone(),
            p_omega: self.free.omega_dot.mul(&em2g),
            gamma: self.gamma.clone(),
            p_gamma,
            h: self.h.clone(),
            lapse: self.lapse.clone(),
            shift: self.beta.clone(),
            tau: ScalarField::zeros(grid),
        }
    }
}

/// Runs the constraint and gauge solves in the order `H -> gamma -> N -> beta`.
pub fn assemble_initial_state(free: &FreeData, cfg: &EllipticConfig) -> Result<InitialDataSet, ConstraintError> {
    cfg.validate()?;
    free.validate()?;
    let grid = *free.grid();
    let chi_ln = chi_cutoff(grid);
    let orth = check_orthogonality(free);
    let mom = solve_momentum(free, cfg)?;
    let gam = solve_hamiltonian(&mom.h, free, &chi_ln, cfg)?;
    let lap = solve_lapse_initial(&gam.solution, &mom.h, free, cfg)?;
    let gamma = gam.solution;
    let lapse = lap.solution;
    // L(fY) differs from f L Y only by terms quadratic in the data
    let factor = shift_factor(&gamma.full(), &lapse.full());
    let guess = mom.y.scale_by(&factor);
    let (beta, _) = solve_shift_initial(&gamma, &lapse, &mom.h, cfg, Some(&guess))?;
    let shift_residual = conformal_killing(&beta).sub(&mom.h.scale_by(&factor)).sup_norm();
    let e0_gamma = crate::grid::divergence(&beta).scale(0.5);

    let g_full = gamma.full();
    let ham = gamma.laplacian4().sub(&hamiltonian_rhs(&g_full, &mom.h, free));
    let data = InitialDataSet {
        free: free.clone(),
        h: mom.h,
        gamma: gamma.clone(),
        lapse: lapse.clone(),
        beta,
        e0_gamma,
        report: ConstraintReport {
            alpha: -gamma.log_coeff,
            lapse_log_coeff: lapse.log_coeff,
            momentum_residual: mom.residual,
            hamiltonian_residual: lp_norm(&ham, 2.0),
            shift_residual,
            cl1: (0.0, 0.0),
            cl2_residual: 0.0,
            orthogonality: orth,
            gamma_iterations: gam.iterations,
            lapse_iterations: lap.iterations,
        },
    };
    let state = data.state();
    let (cl1, cl2) = conservation_integrals(&state);
    let mut data = data;
    data.report.cl1 = cl1;
    data.report.cl2_residual = cl2 - 8.0 * PI * state.alpha();
    Ok(data)
}

/// The integrands of the two conservation laws: the linear-momentum pair
/// `int (4 e^{2gamma} T phi d_j phi + e^{2gamma-4phi} T omega d_j omega)` and
/// the deficit-angle integral
/// `int (2e^{-2gamma}|H|^2 + 4e^{2gamma}(T phi)^2 + e^{2gamma-4phi}(T omega)^2 + 4|grad phi|^2 + e^{-4phi}|grad omega|^2)`.
pub fn conservation_integrals(state: &StateVector) -> ((f64, f64), f64) {
    let grid = *state.grid();
    let gamma = state.gamma.full();
    let gp = gradient(&state.phi);
    let gw = gradient(&state.omega);
    let (pp, pw, ph) = (state.p_phi.values(), state.p_omega.values(), state.phi.values());
    let hn = state.h.norm_sq();
    let cl1 = |a: &ScalarField, b: &ScalarField| {
        integrate(&ScalarField::from_index_fn(grid, |k| {
            let e2g = (2.0 * gamma.values()[k]).exp();
            4.0 * e2g * pp[k] * a.values()[k] + e2g * (-4.0 * ph[k]).exp() * pw[k] * b.values()[k]
        }))
    };
    let c1 = (cl1(&gp.x, &gw.x), cl1(&gp.y, &gw.y));
    let gp2 = gp.norm_sq();
    let gw2 = gw.norm_sq();
    let c2 = integrate(&ScalarField::from_index_fn(grid, |k| {
        let g = gamma.values()[k];
        let em4 = (-4.0 * ph[k]).exp();
        2.0 * (-2.0 * g).exp() * hn.values()[k]
            + 4.0 * (2.0 * g).exp() * pp[k] * pp[k]
            + (2.0 * g).exp() * em4 * pw[k] * pw[k]
            + 4.0 * gp2.values()[k]
            + em4 * gw2.values()[k]
    }));
    (c1, c2)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid() -> GridSpec {
        GridSpec::new(8.0, 129).unwrap()
    }

    #[test]
    fn zero_data_gives_minkowski() {
        let g = grid();
        let free = FreeData::zero(g, 1.0);
        let data = assemble_initial_state(&free, &EllipticConfig::default()).unwrap();
        let s = data.state();
        assert_eq!(s.alpha(), 0.0);
        assert_eq!(s.lapse.full().sub(&ScalarField::constant(g, 1.0)).sup_norm(), 0.0);
        assert_eq!(s.shift.sup_norm(), 0.0);
        assert_eq!(s.h.sup_norm(), 0.0);
    }

    #[test]
    fn asymmetric_family_is_admissible() {
        let g = grid();
        let free = FreeData::asymmetric(g, 0.01, 1.5, FieldMask::ALL);
        let (a, b) = check_orthogonality(&free);
        assert!(a.abs() < 1e-14 && b.abs() < 1e-14, "{a:e} {b:e}");
        assert!(free.validate().is_ok());
    }

    #[test]
    fn radial_data_signs() {
        let g = grid();
        let free = FreeData::radial(g, 0.01, 1.5, FieldMask::ALL);
        let data = assemble_initial_state(&free, &EllipticConfig::default()).unwrap();
        assert!(data.report.alpha > 0.0);
        assert!(data.report.lapse_log_coeff > 0.0);
        assert!(data.lapse.full().min() > 0.0);
    }

    #[test]
    fn rejects_leaky_data() {
        let g = grid();
        let mut free = FreeData::radial(g, 0.01, 1.5, FieldMask::ALL);
        free.support_radius = 1.0;
        assert!(free.validate().is_err());
    }
}
