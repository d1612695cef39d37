//! Time integration of the reduced system.
//!
//! The evolved variables are the matter pairs `(phi, T phi)`, `(omega, T omega)`,
//! the pair `(gamma~, T gamma~)` and `H`. After every Runge-Kutta stage the
//! gauge (`N`, `beta`, `tau`) is recomputed from the elliptic equations.

use std::collections::VecDeque;

use thiserror::Error;

use crate::constraints::{self, shift_factor, ConstraintError, FreeData};
use crate::elliptic::{invert_killing, solve_poisson_dirichlet, solve_poisson_logasym, EllipticConfig, EllipticError};
use crate::geometry::{advect, sym_bar, Derived, GaugeRates, GeometryError, StateVector};
use crate::grid::{divergence, gradient, ScalarField, SymTensorField, VectorField};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvolutionError {
    #[error(transparent)]
    Elliptic(#[from] EllipticError),
    #[error(transparent)]
    Constraint(#[from] ConstraintError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("gauge fixed point did not converge in {iterations} iterations (change {change:e})")]
    FixedPointDiverged { iterations: usize, change: f64 },
    #[error("lapse collapsed: min N = {0}")]
    LapseCollapse(f64),
    #[error("time step {dt:e} exceeds the CFL limit {limit:e}")]
    CflViolation { dt: f64, limit: f64 },
    #[error("invalid scheme configuration: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scheme {
    /// The reduced system: `gamma~` is evolved by its wave equation and `tau`
    /// is read off algebraically.
    Free,
    /// `tau = 0` imposed, `gamma` and `beta` obtained from elliptic equations.
    Constrained,
    /// Metric pinned to Minkowski; only the matter fields move.
    FrozenFlat,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SchemeConfig {
    pub scheme: Scheme,
    pub cfl: f64,
    pub step_tol: f64,
    pub step_max_iter: usize,
    pub t_end: f64,
    pub snapshot_every: usize,
}

impl Default for SchemeConfig {
    fn default() -> Self {
        Self {
            scheme: Scheme::Free,
            cfl: 0.25,
            step_tol: 1e-10,
            step_max_iter: 30,
            t_end: 1.0,
            snapshot_every: 0,
        }
    }
}

impl SchemeConfig {
    pub fn validate(&self) -> Result<(), EvolutionError> {
        if !(self.cfl > 0.0 && self.cfl <= 0.5) {
            return Err(EvolutionError::InvalidConfig(format!("cfl={} must lie in (0, 0.5]", self.cfl)));
        }
        if !(self.step_tol > 0.0) {
            return Err(EvolutionError::InvalidConfig("step_tol must be positive".into()));
        }
        if self.step_max_iter == 0 {
            return Err(EvolutionError::InvalidConfig("step_max_iter must be positive".into()));
        }
        if !(self.t_end.is_finite() && self.t_end >= 0.0) {
            return Err(EvolutionError::InvalidConfig("t_end must be finite and non-negative".into()));
        }
        Ok(())
    }
}

/// Maximum coordinate signal speed `N e^{-gamma} + |beta|`.
pub fn max_speed(state: &StateVector) -> f64 {
    let n = state.lapse.full();
    let g = state.gamma.full();
    let b = state.shift.norm_sq();
    let mut m: f64 = 0.0;
    for k in 0..n.values().len() {
        m = m.max(n.values()[k] * (-g.values()[k]).exp() + b.values()[k].sqrt());
    }
    m
}

pub fn cfl_dt(state: &StateVector, cfg: &SchemeConfig) -> f64 {
    cfg.cfl * state.grid().spacing() / max_speed(state)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Wave {
    Gamma,
    Phi,
    Omega,
}

/// `Q` in the lapse equation `Delta N = N Q`,
/// `Q = e^{-2gamma}|H|^2 + tau^2 e^{2gamma}/2 + 2 e^{2gamma}(T phi)^2 + e^{2gamma-4phi}(T omega)^2/2`.
pub fn lapse_source(state: &StateVector, gamma: &ScalarField) -> ScalarField {
    let hn = state.h.norm_sq();
    let (tau, pp, pw, ph) = (state.tau.values(), state.p_phi.values(), state.p_omega.values(), state.phi.values());
    ScalarField::from_index_fn(*state.grid(), |k| {
        let e2g = (2.0 * gamma.values()[k]).exp();
        hn.values()[k] / e2g
            + 0.5 * tau[k] * tau[k] * e2g
            + 2.0 * e2g * pp[k] * pp[k]
            + 0.5 * e2g * (-4.0 * ph[k]).exp() * pw[k] * pw[k]
    })
}

/// `T^2` of the chosen wave variable. For `Gamma` the variable is `gamma~`.
pub fn wave_rhs(state: &StateVector, d: &Derived, which: Wave, rates: &GaugeRates) -> ScalarField {
    let grid = *state.grid();
    let n = d.n.values();
    let em2g = d.em2g.values();
    let em4 = d.em4phi.values();
    let tau = state.tau.values();
    let (gn_x, gn_y) = (d.grad_n.x.values(), d.grad_n.y.values());
    match which {
        Wave::Phi | Wave::Omega => {
            let (grad, lap, p) = match which {
                Wave::Phi => (&d.grad_phi, &d.lap_phi, &state.p_phi),
                _ => (&d.grad_omega, &d.lap_omega, &state.p_omega),
            };
            let (pp, pw) = (state.p_phi.values(), state.p_omega.values());
            let (px, py) = (d.grad_phi.x.values(), d.grad_phi.y.values());
            let (wx, wy) = (d.grad_omega.x.values(), d.grad_omega.y.values());
            ScalarField::from_index_fn(grid, |k| {
                let (fx, fy) = (grad.x.values()[k], grad.y.values()[k]);
                let base = em2g[k] * lap.values()[k]
                    + em2g[k] / n[k] * (fx * gn_x[k] + fy * gn_y[k])
                    + tau[k] * p.values()[k];
                let coupling = match which {
                    Wave::Phi => 0.5 * em4[k] * (em2g[k] * (wx[k] * wx[k] + wy[k] * wy[k]) - pw[k] * pw[k]),
                    _ => 4.0 * (pw[k] * pp[k] - em2g[k] * (wx[k] * px[k] + wy[k] * py[k])),
                };
                base + coupling
            })
        }
        Wave::Gamma => {
            let alpha = state.alpha();
            let chi = state.chi_ln();
            let q = lapse_source(state, &d.gamma);
            let beta = &state.shift;
            let dtn = rates.dt_n.values();
            let div_dtb = divergence(&rates.dt_beta);
            // s = div beta / N and its normal derivative
            let s = d.div_beta.zip_map(&d.n, |a, b| a / b);
            let bs = advect(beta, &s);
            // T(chi ln) = -beta . grad(chi ln) / N
            let bl = beta.dot(&chi.grad);
            let tl = ScalarField::from_index_fn(grid, |k| -bl.values()[k] / n[k]);
            let btl = advect(beta, &tl);
            let dtb_l = rates.dt_beta.dot(&chi.grad);
            let gp = d.grad_phi.norm_sq();
            let gw = d.grad_omega.norm_sq();
            ScalarField::from_index_fn(grid, |k| {
                let nk = n[k];
                let dt_s = div_dtb.values()[k] / nk - d.div_beta.values()[k] * dtn[k] / (nk * nk);
                let t_s = (dt_s - bs.values()[k]) / nk;
                let dt_tl = -dtb_l.values()[k] / nk + bl.values()[k] * dtn[k] / (nk * nk);
                let t2l = (dt_tl - btl.values()[k]) / nk;
                // e^{-2gamma} Delta gamma~ + alpha Psi / N regrouped as
                // e^{-2gamma} Delta gamma + alpha T^2(chi ln)
                em2g[k] * d.lap_gamma.values()[k] - 0.5 * tau[k] * tau[k] + 0.5 * t_s
                    + em2g[k] * (0.5 * q.values()[k] + gp.values()[k] + 0.25 * em4[k] * gw.values()[k])
                    + alpha * t2l
            })
        }
    }
}

/// `e_0 H_ij` from the transport equation.
pub fn transport_rhs_h(state: &StateVector, d: &Derived) -> SymTensorField {
    let grid = *state.grid();
    let h = &state.h;
    let (hxx, hxy, hyy) = (h.xx.values(), h.xy.values(), h.yy.values());
    let n = d.n.values();
    let em2g = d.em2g.values();
    let db = &d.dbeta;
    let b = |i: usize, j: usize, k: usize| db[i][j].values()[k];
    let hn = &d.hess_n;
    let lap_n = hn.trace();
    let gn_gg = sym_bar(&d.grad_gamma, &d.grad_n);
    let pp = sym_bar(&d.grad_phi, &d.grad_phi);
    let ww = sym_bar(&d.grad_omega, &d.grad_omega);
    let em4 = d.em4phi.values();
    let hm = |k: usize, a: usize, c: usize| match (a, c) {
        (0, 0) => hxx[k],
        (1, 1) => hyy[k],
        _ => hxy[k],
    };
    let comp = |k: usize, i: usize, j: usize, hess: f64, bar_gn: f64, bar_p: f64, bar_w: f64| {
        let delta = if i == j { 1.0 } else { 0.0 };
        let h2 = hm(k, i, 0) * hm(k, j, 0) + hm(k, i, 1) * hm(k, j, 1);
        let mut sym = 0.0;
        for l in 0..2 {
            sym += b(j, l, k) * hm(k, i, l) + b(i, l, k) * hm(k, j, l);
        }
        -2.0 * em2g[k] * n[k] * h2 + sym - (hess - 0.5 * delta * lap_n.values()[k]) + bar_gn
            - n[k] * bar_p
            - 0.25 * em4[k] * n[k] * bar_w
    };
    SymTensorField {
        xx: ScalarField::from_index_fn(grid, |k| {
            comp(k, 0, 0, hn.xx.values()[k], gn_gg.xx.values()[k], pp.xx.values()[k], ww.xx.values()[k])
        }),
        xy: ScalarField::from_index_fn(grid, |k| {
            comp(k, 0, 1, hn.xy.values()[k], gn_gg.xy.values()[k], pp.xy.values()[k], ww.xy.values()[k])
        }),
        yy: ScalarField::from_index_fn(grid, |k| {
            comp(k, 1, 1, hn.yy.values()[k], gn_gg.yy.values()[k], pp.yy.values()[k], ww.yy.values()[k])
        }),
    }
}

/// `tau = (-2 (N T gamma~ + alpha beta . grad(chi ln)) + div beta) / N`
pub fn tau_from_gauge(state: &StateVector, n: &ScalarField) -> ScalarField {
    let alpha = state.alpha();
    let bl = state.shift.dot(&state.chi_ln().grad);
    let div = divergence(&state.shift);
    ScalarField::from_index_fn(*state.grid(), |k| {
        let nk = n.values()[k];
        (-2.0 * (nk * state.p_gamma.values()[k] + alpha * bl.values()[k]) + div.values()[k]) / nk
    })
}

/// `T gamma~` that makes `tau` vanish.
fn p_gamma_maximal(state: &StateVector, n: &ScalarField) -> ScalarField {
    let alpha = state.alpha();
    let bl = state.shift.dot(&state.chi_ln().grad);
    let div = divergence(&state.shift);
    ScalarField::from_index_fn(*state.grid(), |k| {
        (0.5 * div.values()[k] - alpha * bl.values()[k]) / n.values()[k]
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaugeInfo {
    pub iterations: usize,
    pub change: f64,
}

fn check_lapse(n: &ScalarField) -> Result<(), EvolutionError> {
    let m = n.min();
    if !(m > 0.1) {
        return Err(EvolutionError::LapseCollapse(m));
    }
    Ok(())
}

/// Recomputes `N`, `beta`, `tau` (and in the constrained scheme `gamma`,
/// `T gamma~`) from the matter fields and `H` of `state`.
pub fn solve_gauge(
    state: &mut StateVector,
    scheme: &SchemeConfig,
    elliptic: &EllipticConfig,
) -> Result<GaugeInfo, EvolutionError> {
    let grid = *state.grid();
    if scheme.scheme == Scheme::FrozenFlat {
        return Ok(GaugeInfo { iterations: 0, change: 0.0 });
    }
    let chi = state.chi_ln().clone();
    let mut change = f64::INFINITY;
    for it in 1..=scheme.step_max_iter {
        let old_n = state.lapse.full();
        let old_beta = state.shift.clone();
        let old_gamma = state.gamma.full();
        let old_tau = state.tau.clone();

        if scheme.scheme == Scheme::Constrained {
            let p_dot = |p: &ScalarField| p.zip_map(&old_gamma, |v, g| v * (2.0 * g).exp());
            let free = FreeData {
                phi: state.phi.clone(),
                phi_dot: p_dot(&state.p_phi),
                omega: state.omega.clone(),
                omega_dot: p_dot(&state.p_omega),
                support_radius: f64::NAN,
            };
            let rhs = constraints::hamiltonian_rhs(&old_gamma, &state.h, &free);
            state.gamma = solve_poisson_logasym(&rhs, &chi, elliptic)?;
            state.tau = ScalarField::zeros(grid);
        }
        let gamma = state.gamma.full();
        let q = lapse_source(state, &gamma);
        let mut lapse = solve_poisson_logasym(&old_n.mul(&q), &chi, elliptic)?;
        lapse.offset = 1.0;
        let n = lapse.full();
        check_lapse(&n)?;
        state.lapse = lapse;

        match scheme.scheme {
            Scheme::Free => {
                let factor = shift_factor(&gamma, &n);
                // direct inverse followed by one defect correction
                let first = invert_killing(&state.h, &factor, elliptic, None)?.beta;
                state.shift = invert_killing(&state.h, &factor, elliptic, Some(&first))?.beta;
                state.tau = tau_from_gauge(state, &n);
            }
            _ => {
                state.shift = elliptic_shift(state, &old_beta, &n, elliptic)?;
                state.p_gamma = p_gamma_maximal(state, &n);
            }
        }

        change = n
            .sub(&old_n)
            .sup_norm()
            .max(state.shift.sub(&old_beta).sup_norm())
            .max(state.gamma.full().sub(&old_gamma).sup_norm())
            .max(state.tau.sub(&old_tau).sup_norm());
        if !change.is_finite() {
            break;
        }
        if change < scheme.step_tol {
            return Ok(GaugeInfo { iterations: it, change });
        }
    }
    Err(EvolutionError::FixedPointDiverged { iterations: scheme.step_max_iter, change })
}

/// `Delta beta_j = (L beta)_ij (d_i N / N - 2 d_i gamma) - 2 T_0j` with `L beta`
/// taken from the previous iterate.
fn elliptic_shift(
    state: &StateVector,
    beta: &VectorField,
    n: &ScalarField,
    elliptic: &EllipticConfig,
) -> Result<VectorField, EvolutionError> {
    let grid = *state.grid();
    let lb = crate::elliptic::conformal_killing(beta);
    let gn = state.lapse.gradient();
    let gg = state.gamma.gradient();
    let gp = gradient(&state.phi);
    let gw = gradient(&state.omega);
    let w = VectorField {
        x: ScalarField::from_index_fn(grid, |k| gn.x.values()[k] / n.values()[k] - 2.0 * gg.x.values()[k]),
        y: ScalarField::from_index_fn(grid, |k| gn.y.values()[k] / n.values()[k] - 2.0 * gg.y.values()[k]),
    };
    let lw = lb.contract(&w);
    let (pp, pw, ph) = (state.p_phi.values(), state.p_omega.values(), state.phi.values());
    let t0 = |k: usize, dphi: f64, dom: f64| {
        let nk = n.values()[k];
        2.0 * nk * pp[k] * dphi + 0.5 * (-4.0 * ph[k]).exp() * nk * pw[k] * dom
    };
    let sx = ScalarField::from_index_fn(grid, |k| lw.x.values()[k] - 2.0 * t0(k, gp.x.values()[k], gw.x.values()[k]));
    let sy = ScalarField::from_index_fn(grid, |k| lw.y.values()[k] - 2.0 * t0(k, gp.y.values()[k], gw.y.values()[k]));
    // the source integral is a boundary flux at this resolution, absorbed by beta = 0
    Ok(VectorField {
        x: solve_poisson_dirichlet(&sx, elliptic)?,
        y: solve_poisson_dirichlet(&sy, elliptic)?,
    })
}

const NFIELDS: usize = 9;

type Fields = [ScalarField; NFIELDS];

fn pack(s: &StateVector) -> Fields {
    [
        s.phi.clone(),
        s.p_phi.clone(),
        s.omega.clone(),
        s.p_omega.clone(),
        s.gamma.tilde.clone(),
        s.p_gamma.clone(),
        s.h.xx.clone(),
        s.h.xy.clone(),
        s.h.yy.clone(),
    ]
}

fn unpack(base: &StateVector, f: Fields, t: f64) -> StateVector {
    let [phi, p_phi, omega, p_omega, gt, p_gamma, hxx, hxy, hyy] = f;
    let mut s = base.clone();
    s.t = t;
    s.phi = phi;
    s.p_phi = p_phi;
    s.omega = omega;
    s.p_omega = p_omega;
    s.gamma.tilde = gt;
    s.p_gamma = p_gamma;
    s.h = SymTensorField { xx: hxx, xy: hxy, yy: hyy };
    s
}

fn combine(base: &Fields, dt: f64, k: &Fields) -> Fields {
    std::array::from_fn(|i| base[i].axpy(dt, &k[i]))
}

/// Coordinate time derivatives of the evolved variables at a gauge-solved stage.
pub fn time_derivatives(state: &StateVector, scheme: Scheme, rates: &GaugeRates) -> Vec<ScalarField> {
    let d = Derived::new(state);
    let grid = *state.grid();
    let n = &d.n;
    let beta = &state.shift;
    let adv = |f: &ScalarField| advect(beta, f);
    let nt = |p: &ScalarField, f: &ScalarField| n.mul(p).add(&adv(f));
    let t2_phi = wave_rhs(state, &d, Wave::Phi, rates);
    let t2_omega = wave_rhs(state, &d, Wave::Omega, rates);
    let mut out = vec![
        nt(&state.p_phi, &state.phi),
        nt(&t2_phi, &state.p_phi),
        nt(&state.p_omega, &state.omega),
        nt(&t2_omega, &state.p_omega),
    ];
    let zero = ScalarField::zeros(grid);
    match scheme {
        Scheme::Free => {
            let t2_gamma = wave_rhs(state, &d, Wave::Gamma, rates);
            out.push(nt(&state.p_gamma, &state.gamma.tilde));
            out.push(nt(&t2_gamma, &state.p_gamma));
        }
        _ => {
            out.push(zero.clone());
            out.push(zero.clone());
        }
    }
    if scheme == Scheme::FrozenFlat {
        out.extend([zero.clone(), zero.clone(), zero]);
    } else {
        let e0h = transport_rhs_h(state, &d);
        out.push(e0h.xx.add(&adv(&state.h.xx)));
        out.push(e0h.xy.add(&adv(&state.h.xy)));
        out.push(e0h.yy.add(&adv(&state.h.yy)));
    }
    // the outer two-node ring is held fixed
    for f in out.iter_mut() {
        let v = f.values_mut();
        for (k, x) in v.iter_mut().enumerate() {
            if grid.boundary_distance(k) < 2 {
                *x = 0.0;
            }
        }
    }
    out
}

#[derive(Debug, Clone)]
struct GaugeSample {
    t: f64,
    beta: VectorField,
    n: ScalarField,
}

/// Derivative at `t0` of the quadratic (or linear) interpolant through the
/// current sample and up to two earlier samples.
fn lagrange_rate(t0: f64, f0: &ScalarField, past: &[(f64, &ScalarField)]) -> ScalarField {
    match past {
        [] => ScalarField::zeros(*f0.grid()),
        [(t1, f1)] => f0.sub(f1).scale(1.0 / (t0 - t1)),
        [(t1, f1), (t2, f2), ..] => {
            let c0 = 1.0 / (t0 - t1) + 1.0 / (t0 - t2);
            let c1 = (t0 - t2) / ((t1 - t0) * (t1 - t2));
            let c2 = (t0 - t1) / ((t2 - t0) * (t2 - t1));
            let (a, b, c) = (f0.values(), f1.values(), f2.values());
            ScalarField::from_index_fn(*f0.grid(), |k| c0 * a[k] + c1 * b[k] + c2 * c[k])
        }
    }
}

/// Stateful integrator: keeps the gauge history used for `d_t beta`, `d_t N`.
#[derive(Debug, Clone)]
pub struct Evolver {
    pub scheme: SchemeConfig,
    pub elliptic: EllipticConfig,
    history: VecDeque<GaugeSample>,
    provisional: bool,
}

impl Evolver {
    pub fn new(scheme: SchemeConfig, elliptic: EllipticConfig) -> Result<Self, EvolutionError> {
        scheme.validate()?;
        elliptic.validate()?;
        Ok(Self { scheme, elliptic, history: VecDeque::new(), provisional: false })
    }

    /// Clears the gauge history, e.g. before integrating backwards.
    pub fn reset(&mut self) {
        self.history.clear();
        self.provisional = false;
    }

    /// Time derivatives of the gauge at `s`, extrapolated from the history.
    pub fn gauge_rates(&self, s: &StateVector) -> GaugeRates {
        let n = s.lapse.full();
        let past: Vec<&GaugeSample> = self
            .history
            .iter()
            .filter(|h| (h.t - s.t).abs() > 1e-14 * (1.0 + s.t.abs()))
            .take(2)
            .collect();
        let pb_x: Vec<(f64, &ScalarField)> = past.iter().map(|h| (h.t, &h.beta.x)).collect();
        let pb_y: Vec<(f64, &ScalarField)> = past.iter().map(|h| (h.t, &h.beta.y)).collect();
        let pn: Vec<(f64, &ScalarField)> = past.iter().map(|h| (h.t, &h.n)).collect();
        GaugeRates {
            dt_beta: VectorField {
                x: lagrange_rate(s.t, &s.shift.x, &pb_x),
                y: lagrange_rate(s.t, &s.shift.y, &pb_y),
            },
            dt_n: lagrange_rate(s.t, &n, &pn),
        }
    }

    fn push_history(&mut self, s: &StateVector) {
        self.history.push_front(GaugeSample { t: s.t, beta: s.shift.clone(), n: s.lapse.full() });
        self.history.truncate(3);
    }

    fn stage(&self, base: &StateVector, fields: Fields, t: f64) -> Result<StateVector, EvolutionError> {
        let mut s = unpack(base, fields, t);
        solve_gauge(&mut s, &self.scheme, &self.elliptic)?;
        Ok(s)
    }

    /// Re-solves the gauge of `state` in place (used on freshly loaded data).
    pub fn prepare(&self, state: &mut StateVector) -> Result<GaugeInfo, EvolutionError> {
        let info = solve_gauge(state, &self.scheme, &self.elliptic)?;
        state.validate()?;
        Ok(info)
    }

    /// One step of size `cfl_dt`.
    pub fn step(&mut self, state: &StateVector) -> Result<StateVector, EvolutionError> {
        let dt = cfl_dt(state, &self.scheme);
        self.step_with_dt(state, dt)
    }

    /// One classical four-stage Runge-Kutta step of size `dt` (negative
    /// values integrate backwards). `state` must already be gauge-solved.
    pub fn step_with_dt(&mut self, state: &StateVector, dt: f64) -> Result<StateVector, EvolutionError> {
        let limit = cfl_dt(state, &self.scheme);
        if !(dt.abs() <= limit * (1.0 + 1e-12)) {
            return Err(EvolutionError::CflViolation { dt, limit });
        }
        let scheme = self.scheme.scheme;
        let t0 = state.t;
        let y0 = pack(state);

        if self.history.is_empty() && scheme != Scheme::FrozenFlat {
            // provisional half step supplies a forward difference for the rates
            self.push_history(state);
            let k = time_derivatives(state, scheme, &GaugeRates::zeros(*state.grid()));
            let probe = self.stage(state, combine(&y0, 0.5 * dt, &to_fields(k)), t0 + 0.5 * dt)?;
            self.history.push_front(GaugeSample { t: probe.t, beta: probe.shift.clone(), n: probe.lapse.full() });
            self.provisional = true;
        } else if self.history.front().map(|h| h.t != t0).unwrap_or(true) {
            self.push_history(state);
        }

        let k1 = to_fields(time_derivatives(state, scheme, &self.gauge_rates(state)));
        let s2 = self.stage(state, combine(&y0, 0.5 * dt, &k1), t0 + 0.5 * dt)?;
        let k2 = to_fields(time_derivatives(&s2, scheme, &self.gauge_rates(&s2)));
        let s3 = self.stage(state, combine(&y0, 0.5 * dt, &k2), t0 + 0.5 * dt)?;
        let k3 = to_fields(time_derivatives(&s3, scheme, &self.gauge_rates(&s3)));
        let s4 = self.stage(state, combine(&y0, dt, &k3), t0 + dt)?;
        let k4 = to_fields(time_derivatives(&s4, scheme, &self.gauge_rates(&s4)));

        let y1: Fields = std::array::from_fn(|i| {
            let (a, b, c, d) = (k1[i].values(), k2[i].values(), k3[i].values(), k4[i].values());
            let base = y0[i].values();
            ScalarField::from_index_fn(*state.grid(), |k| {
                base[k] + dt / 6.0 * (a[k] + 2.0 * b[k] + 2.0 * c[k] + d[k])
            })
        });
        let mut next = unpack(state, y1, t0 + dt);
        clamp_matter(&mut next);
        solve_gauge(&mut next, &self.scheme, &self.elliptic)?;
        next.validate()?;

        if self.provisional {
            // drop the probe sample; keep the true step start
            self.history.retain(|h| h.t == t0);
            self.provisional = false;
        }
        self.push_history(&next);
        Ok(next)
    }
}

fn to_fields(v: Vec<ScalarField>) -> Fields {
    v.try_into().expect("nine evolved fields")
}

/// Zeroes denormal-scale matter values near the boundary.
fn clamp_matter(s: &mut StateVector) {
    let grid = *s.grid();
    for f in [&mut s.phi, &mut s.p_phi, &mut s.omega, &mut s.p_omega] {
        for (k, v) in f.values_mut().iter_mut().enumerate() {
            if grid.boundary_distance(k) < 3 && v.abs() < 1e-30 {
                *v = 0.0;
            }
        }
    }
}

/// Receives the states produced by [`run`].
pub trait RunSink {
    fn record(&mut self, step: usize, state: &StateVector) -> Result<(), String>;
    fn snapshot(&mut self, _step: usize, _state: &StateVector) -> Result<(), String> {
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub steps: usize,
    pub t_final: f64,
    pub final_state: StateVector,
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("run failed at t={t} (step {step}): {error}")]
pub struct RunFailure {
    pub t: f64,
    pub step: usize,
    pub error: RunError,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RunError {
    #[error(transparent)]
    Evolution(#[from] EvolutionError),
    #[error("output sink failed: {0}")]
    Sink(String),
}

/// Advances `init` to `t_end`, feeding every accepted state to `sink`.
pub fn run(
    init: &StateVector,
    scheme: SchemeConfig,
    elliptic: EllipticConfig,
    sink: &mut dyn RunSink,
) -> Result<RunSummary, RunFailure> {
    let fail = |t: f64, step: usize, error: RunError| RunFailure { t, step, error };
    let mut ev = Evolver::new(scheme, elliptic).map_err(|e| fail(init.t, 0, e.into()))?;
    let mut state = init.clone();
    ev.prepare(&mut state).map_err(|e| fail(state.t, 0, e.into()))?;
    sink.record(0, &state).map_err(|e| fail(state.t, 0, RunError::Sink(e)))?;
    let mut step = 0;
    let t_end = init.t + scheme.t_end;
    while state.t < t_end * (1.0 - 1e-14) - 1e-14 {
        let dt = cfl_dt(&state, &scheme).min(t_end - state.t);
        state = ev.step_with_dt(&state, dt).map_err(|e| fail(state.t, step, e.into()))?;
        step += 1;
        sink.record(step, &state).map_err(|e| fail(state.t, step, RunError::Sink(e)))?;
        if scheme.snapshot_every > 0 && step % scheme.snapshot_every == 0 {
            sink.snapshot(step, &state).map_err(|e| fail(state.t, step, RunError::Sink(e)))?;
        }
    }
    Ok(RunSummary { steps: step, t_final: state.t, final_state: state })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::elliptic::chi_cutoff;
    use crate::grid::GridSpec;

    fn flat(n: usize) -> StateVector {
        let g = GridSpec::new(4.0, n).unwrap();
        StateVector::minkowski(g, chi_cutoff(g))
    }

    #[test]
    fn cfl_examples() {
        let mut s = flat(33);
        let cfg = SchemeConfig::default();
        let h = s.grid().spacing();
        assert!((cfl_dt(&s, &cfg) - 0.25 * h).abs() < 1e-15);
        s.lapse.offset = 2.0;
        assert!((cfl_dt(&s, &cfg) - 0.125 * h).abs() < 1e-15);
    }

    #[test]
    fn minkowski_is_stationary() {
        let s = flat(33);
        let mut ev = Evolver::new(SchemeConfig::default(), EllipticConfig::default()).unwrap();
        let mut cur = s.clone();
        for _ in 0..100 {
            cur = ev.step(&cur).unwrap();
        }
        let fields = pack(&cur);
        for f in fields.iter() {
            assert!(f.sup_norm() <= 1e-12);
        }
        assert!(cur.lapse.full().sub(&ScalarField::constant(*s.grid(), 1.0)).sup_norm() <= 1e-12);
        assert!(cur.shift.sup_norm() <= 1e-12);
    }

    #[test]
    fn rejects_oversized_step() {
        let s = flat(33);
        let mut ev = Evolver::new(SchemeConfig::default(), EllipticConfig::default()).unwrap();
        let dt = 2.0 * cfl_dt(&s, &ev.scheme);
        assert!(matches!(ev.step_with_dt(&s, dt), Err(EvolutionError::CflViolation { .. })));
    }

    #[test]
    fn lagrange_rate_is_exact_for_quadratics() {
        let g = GridSpec::new(4.0, 33).unwrap();
        let f = |t: f64| ScalarField::constant(g, 1.0 + 2.0 * t - 3.0 * t * t);
        let (a, b) = (f(0.1), f(0.3));
        let r = lagrange_rate(0.5, &f(0.5), &[(0.3, &b), (0.1, &a)]);
        assert!((r.values()[0] - (2.0 - 3.0)).abs() < 1e-12);
    }
}
