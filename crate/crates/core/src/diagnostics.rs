//! Runtime monitors: conservation laws, Bianchi residuals, energies, weighted
//! norms and support radii.

use std::fmt::Write as _;

use thiserror::Error;

use crate::constraints::conservation_integrals;
use crate::geometry::{box_g, e0_tau, stress_tensor, tensor_divergence, Derived, GaugeRates, StateVector};
use crate::grid::{
    gradient, hessian, integrate, japanese_bracket, lp_norm, sobolev_norm, weighted_norm, weighted_norm_vector,
    GridError, GridSpec, ScalarField, SymTensorField, VectorField, WeightSpec,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DiagnosticsError {
    #[error(transparent)]
    Grid(#[from] GridError),
}

/// Threshold used for support radii.
pub const SUPPORT_THRESHOLD: f64 = 1e-10;

/// Nodes with `|x|, |y| <= L/2`. Residual norms are taken there so that the
/// frozen outer ring and one-sided boundary stencils do not pollute them.
pub fn monitor_window(grid: &GridSpec) -> Vec<bool> {
    let l = grid.half_width() / 2.0;
    (0..grid.len())
        .map(|k| {
            let (x, y) = grid.point(k);
            x.abs() <= l && y.abs() <= l
        })
        .collect()
}

fn windowed(f: &ScalarField, mask: &[bool]) -> ScalarField {
    ScalarField::from_index_fn(*f.grid(), |k| if mask[k] { f.values()[k] } else { 0.0 })
}

fn window_l2(f: &ScalarField, mask: &[bool]) -> f64 {
    lp_norm(&windowed(f, mask), 2.0)
}

fn window_l2_vec(v: &VectorField, mask: &[bool]) -> f64 {
    window_l2(&v.x, mask).hypot(window_l2(&v.y, mask))
}

/// `(CL1, CL2 - 8 pi alpha)`.
pub fn conservation_laws(state: &StateVector) -> ((f64, f64), f64) {
    let (cl1, cl2) = conservation_integrals(state);
    (cl1, cl2 - 8.0 * std::f64::consts::PI * state.alpha())
}

#[derive(Debug, Clone, PartialEq)]
pub struct BianchiResiduals {
    pub a: VectorField,
    pub b: VectorField,
    /// `||e0 tau||^2 + sum_i (||2 e^{-gamma} A_i||^2 + ||B_i||^2)` over the monitor window.
    pub energy: f64,
}

/// `A_j = N(d_j tau / 2 - e^{-2gamma} d^i H_ij) - T_0j`, `B_j = A_j - N d_j tau / 2`.
pub fn bianchi_residuals(state: &StateVector, e0tau: &ScalarField) -> BianchiResiduals {
    let grid = *state.grid();
    let n = state.lapse.full();
    let gamma = state.gamma.full();
    let dh = tensor_divergence(&state.h);
    let dtau = gradient(&state.tau);
    let t0j = stress_tensor(state).t0j;
    let comp = |dh: &ScalarField, dt: &ScalarField, t0: &ScalarField| {
        let a = ScalarField::from_index_fn(grid, |k| {
            let nk = n.values()[k];
            nk * (0.5 * dt.values()[k] - (-2.0 * gamma.values()[k]).exp() * dh.values()[k]) - t0.values()[k]
        });
        let b = ScalarField::from_index_fn(grid, |k| a.values()[k] - 0.5 * n.values()[k] * dt.values()[k]);
        (a, b)
    };
    let (ax, bx) = comp(&dh.x, &dtau.x, &t0j.x);
    let (ay, by) = comp(&dh.y, &dtau.y, &t0j.y);
    let a = VectorField { x: ax, y: ay };
    let b = VectorField { x: bx, y: by };
    let mask = monitor_window(&grid);
    let emg = gamma.map(|g| 2.0 * (-g).exp());
    let energy = window_l2(e0tau, &mask).powi(2)
        + window_l2_vec(&a.scale_by(&emg), &mask).powi(2)
        + window_l2_vec(&b, &mask).powi(2);
    BianchiResiduals { a, b, energy }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EnergyField {
    Phi,
    Omega,
    Gamma,
}

/// `int <x>^{2 sigma} ((T h)^2 + e^{-2gamma} |grad h|^2)`, with `h = gamma~` for `Gamma`.
pub fn energy_first_order(state: &StateVector, field: EnergyField, sigma: f64) -> f64 {
    let grid = *state.grid();
    let (h, p) = match field {
        EnergyField::Phi => (&state.phi, &state.p_phi),
        EnergyField::Omega => (&state.omega, &state.p_omega),
        EnergyField::Gamma => (&state.gamma.tilde, &state.p_gamma),
    };
    let g2 = gradient(h).norm_sq();
    let gamma = state.gamma.full();
    let w = japanese_bracket(grid);
    integrate(&ScalarField::from_index_fn(grid, |k| {
        w.values()[k].powf(2.0 * sigma)
            * (p.values()[k].powi(2) + (-2.0 * gamma.values()[k]).exp() * g2.values()[k])
    }))
}

const PAIRS: [(usize, usize, f64); 3] = [(0, 0, 1.0), (0, 1, 2.0), (1, 1, 1.0)];

fn comp(t: &SymTensorField, i: usize, j: usize) -> &ScalarField {
    match (i, j) {
        (0, 0) => &t.xx,
        (1, 1) => &t.yy,
        _ => &t.xy,
    }
}

/// Spatial second derivatives of `u` and their `e_0` derivatives, the latter
/// from `e_0 d_i d_j u = d_i d_j (e_0 u) + d_i d_j beta^k d_k u + d_i beta^k d_k d_j u + d_j beta^k d_k d_i u`.
#[derive(Debug, Clone, PartialEq)]
pub struct SecondDerivatives {
    pub hess: SymTensorField,
    pub e0_hess: SymTensorField,
}

pub fn second_derivatives(u: &ScalarField, e0u: &ScalarField, state: &StateVector) -> SecondDerivatives {
    let grid = *u.grid();
    let hu = hessian(u);
    let he = hessian(e0u);
    let gu = gradient(u);
    let hb = [hessian(&state.shift.x), hessian(&state.shift.y)];
    let db = [gradient(&state.shift.x), gradient(&state.shift.y)];
    let du = |k: usize, a: usize| if a == 0 { gu.x.values()[k] } else { gu.y.values()[k] };
    let dbk = |k: usize, i: usize, c: usize| {
        let g = &db[c];
        if i == 0 {
            g.x.values()[k]
        } else {
            g.y.values()[k]
        }
    };
    let one = |i: usize, j: usize| {
        ScalarField::from_index_fn(grid, |k| {
            let mut v = comp(&he, i, j).values()[k];
            for c in 0..2 {
                v += comp(&hb[c], i, j).values()[k] * du(k, c);
                v += dbk(k, i, c) * comp(&hu, c, j).values()[k] + dbk(k, j, c) * comp(&hu, c, i).values()[k];
            }
            v
        })
    };
    SecondDerivatives { e0_hess: SymTensorField { xx: one(0, 0), xy: one(0, 1), yy: one(1, 1) }, hess: hu }
}

/// The third-order wave-map energy `E3 = E3^phi + E3^omega`.
pub fn energy_third_order(state: &StateVector, phi: &SecondDerivatives, omega: &SecondDerivatives) -> f64 {
    let grid = *state.grid();
    let d = Derived::new(state);
    let n = d.n.values();
    let em2g = d.em2g.values();
    let em4 = d.em4phi.values();
    let e0p = d.n.mul(&state.p_phi);
    let e0w = d.n.mul(&state.p_omega);
    let mut total = ScalarField::zeros(grid);
    for (i, j, mult) in PAIRS {
        let (hp, hw) = (comp(&phi.hess, i, j), comp(&omega.hess, i, j));
        let (ep, ew) = (comp(&phi.e0_hess, i, j), comp(&omega.e0_hess, i, j));
        let gp = gradient(hp);
        let gw = gradient(hw);
        let term = ScalarField::from_index_fn(grid, |k| {
            let nn = n[k] * n[k];
            let (p, w) = (hp.values()[k], hw.values()[k]);
            let tp = ep.values()[k] + 0.5 * em4[k] * w * e0w.values()[k];
            let sp = |a: f64, b: f64| a + 0.5 * em4[k] * w * b;
            let sx = sp(gp.x.values()[k], d.grad_omega.x.values()[k]);
            let sy = sp(gp.y.values()[k], d.grad_omega.y.values()[k]);
            let e_phi = 2.0 * (tp * tp / nn + em2g[k] * (sx * sx + sy * sy));
            let tw = ew.values()[k] - 2.0 * w * e0p.values()[k] - 2.0 * p * e0w.values()[k];
            let sw = |a: f64, bw: f64, bp: f64| a - 2.0 * w * bp - 2.0 * p * bw;
            let wx = sw(gw.x.values()[k], d.grad_omega.x.values()[k], d.grad_phi.x.values()[k]);
            let wy = sw(gw.y.values()[k], d.grad_omega.y.values()[k], d.grad_phi.y.values()[k]);
            let e_omega = 0.5 * em4[k] * (tw * tw / nn + em2g[k] * (wx * wx + wy * wy));
            mult * (e_phi + e_omega)
        });
        total = total.add(&term);
    }
    integrate(&total)
}

/// `e_0 phi`, `e_0 omega` and the second derivatives feeding [`energy_third_order`].
pub fn matter_second_derivatives(state: &StateVector) -> (SecondDerivatives, SecondDerivatives) {
    let n = state.lapse.full();
    (
        second_derivatives(&state.phi, &n.mul(&state.p_phi), state),
        second_derivatives(&state.omega, &n.mul(&state.p_omega), state),
    )
}

/// Pointwise `g^{ab} d_a u d_b v = -T u T v + e^{-2gamma} grad u . grad v`.
fn g_contract(tu: &ScalarField, gu: &VectorField, tv: &ScalarField, gv: &VectorField, em2g: &ScalarField) -> ScalarField {
    let dot = gu.dot(gv);
    ScalarField::from_index_fn(*tu.grid(), |k| {
        -tu.values()[k] * tv.values()[k] + em2g.values()[k] * dot.values()[k]
    })
}

/// Ingredients of the remainder proxy, all `L^2` over the monitor window
/// except `dt_gamma` (sup norm).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RemainderProxy {
    pub dt_gamma: f64,
    pub d_hess: f64,
    pub du_hess: f64,
    pub hess_du2: f64,
    pub du3: f64,
    pub f_u: f64,
    pub d_grad2: f64,
    pub dg_grad3: f64,
    pub dg_du_hess: f64,
    pub value: f64,
}

/// Numerical counterpart of the remainder `R` bounding `dE3/dt`. The
/// commutator terms `F^phi`, `F^omega` are evaluated from their defining
/// identities with `Box_g` acting on `d_i d_j u`; this requires the gauge rates.
pub fn remainder_proxy(state: &StateVector, rates: &GaugeRates) -> RemainderProxy {
    let grid = *state.grid();
    let mask = monitor_window(&grid);
    let d = Derived::new(state);
    let n = &d.n;
    let beta = &state.shift;

    // time derivatives of the matter fields
    let wave = |which| crate::evolution::wave_rhs(state, &d, which, rates);
    let t2p = wave(crate::evolution::Wave::Phi);
    let t2w = wave(crate::evolution::Wave::Omega);
    let dt_u = |u: &ScalarField, p: &ScalarField| n.mul(p).add(&beta.dot(&gradient(u)));
    let dtt_u = |u: &ScalarField, p: &ScalarField, t2: &ScalarField| {
        let dtp = n.mul(t2).add(&beta.dot(&gradient(p)));
        let dtu = dt_u(u, p);
        rates.dt_n.mul(p).add(&n.mul(&dtp)).add(&rates.dt_beta.dot(&gradient(u))).add(&beta.dot(&gradient(&dtu)))
    };
    let (phi_t, omega_t) = (dt_u(&state.phi, &state.p_phi), dt_u(&state.omega, &state.p_omega));
    let (phi_tt, omega_tt) = (dtt_u(&state.phi, &state.p_phi, &t2p), dtt_u(&state.omega, &state.p_omega, &t2w));

    let (hp, hpt, hptt) = (hessian(&state.phi), hessian(&phi_t), hessian(&phi_tt));
    let (hw, hwt, hwtt) = (hessian(&state.omega), hessian(&omega_t), hessian(&omega_tt));
    let t_of = |f: &ScalarField, ft: &ScalarField| {
        let adv = beta.dot(&gradient(f));
        ScalarField::from_index_fn(grid, |k| (ft.values()[k] - adv.values()[k]) / n.values()[k])
    };

    let mut acc = [0.0f64; 8];
    let grad_phi = &d.grad_phi;
    let grad_omega = &d.grad_omega;
    let du2 = ScalarField::from_index_fn(grid, |k| {
        state.p_phi.values()[k].powi(2)
            + state.p_omega.values()[k].powi(2)
            + grad_phi.x.values()[k].powi(2)
            + grad_phi.y.values()[k].powi(2)
            + grad_omega.x.values()[k].powi(2)
            + grad_omega.y.values()[k].powi(2)
    });
    let du = du2.map(f64::sqrt);
    let dg2 = d
        .grad_gamma
        .norm_sq()
        .add(&d.grad_n.norm_sq())
        .add(&(0..2).fold(ScalarField::zeros(grid), |s, i| {
            s.add(&d.dbeta[i][0].mul(&d.dbeta[i][0])).add(&d.dbeta[i][1].mul(&d.dbeta[i][1]))
        }));
    let dg = dg2.map(f64::sqrt);
    let mut hess2 = ScalarField::zeros(grid);
    let mut d_hess2 = ScalarField::zeros(grid);
    let mut grad3 = ScalarField::zeros(grid);
    let mut f2 = ScalarField::zeros(grid);
    for (i, j, mult) in PAIRS {
        let (p, pt, ptt) = (comp(&hp, i, j), comp(&hpt, i, j), comp(&hptt, i, j));
        let (w, wt, wtt) = (comp(&hw, i, j), comp(&hwt, i, j), comp(&hwtt, i, j));
        let (tp, tw) = (t_of(p, pt), t_of(w, wt));
        let (gp, gw) = (gradient(p), gradient(w));
        let box_p = box_g(p, pt, ptt, state, rates);
        let box_w = box_g(w, wt, wtt, state, rates);
        let tpo = &state.p_phi;
        let two = &state.p_omega;
        let fphi = box_p.add(&d.em4phi.mul(&g_contract(&tw, &gw, two, grad_omega, &d.em2g)));
        let fomega = box_w
            .add(&g_contract(&tw, &gw, tpo, grad_phi, &d.em2g).scale(-4.0))
            .add(&g_contract(two, grad_omega, &tp, &gp, &d.em2g).scale(-4.0));
        f2 = f2.add(&fphi.mul(&fphi).add(&fomega.mul(&fomega)).scale(mult));
        hess2 = hess2.add(&p.mul(p).add(&w.mul(w)).scale(mult));
        let third = gp.norm_sq().add(&gw.norm_sq());
        grad3 = grad3.add(&third.scale(mult));
        d_hess2 = d_hess2.add(&third.add(&tp.mul(&tp)).add(&tw.mul(&tw)).scale(mult));
    }
    let hess = hess2.map(f64::sqrt);
    // |d grad u|^2 = sum_i ((T d_i u)^2 + |grad d_i u|^2), with T d_i u ~ d_i(N T u)/N
    let mut d_grad2 = hess2.clone();
    for p in [&state.p_phi, &state.p_omega] {
        let pt = gradient(&n.mul(p));
        d_grad2 = d_grad2.add(&pt.norm_sq().zip_map(&n, |v, nk| v / (nk * nk)));
    }
    let l2 = |f: &ScalarField| window_l2(f, &mask);
    acc[0] = l2(&d_hess2.map(f64::sqrt));
    acc[1] = l2(&du.mul(&hess));
    acc[2] = l2(&hess.mul(&du2));
    acc[3] = l2(&du2.mul(&du));
    acc[4] = l2(&f2.map(f64::sqrt));
    acc[5] = l2(&d_grad2);
    acc[6] = l2(&dg.mul(&grad3.map(f64::sqrt)));
    acc[7] = l2(&dg.mul(&du).mul(&hess));

    let dt_gamma = {
        let tg = ScalarField::from_index_fn(grid, |k| {
            let bl = beta.x.values()[k] * state.chi_ln().grad.x.values()[k]
                + beta.y.values()[k] * state.chi_ln().grad.y.values()[k];
            n.values()[k] * state.p_gamma.values()[k] + state.alpha() * bl
        });
        windowed(&tg.add(&beta.dot(&d.grad_gamma)), &mask).sup_norm()
    };
    let a = acc[0] + acc[1];
    let value = dt_gamma * (acc[0].powi(2) + acc[1].powi(2)) + a * (acc[2] + acc[3] + acc[4] + acc[5] + acc[6] + acc[7]);
    RemainderProxy {
        dt_gamma,
        d_hess: acc[0],
        du_hess: acc[1],
        hess_du2: acc[2],
        du3: acc[3],
        f_u: acc[4],
        d_grad2: acc[5],
        dg_grad3: acc[6],
        dg_du_hess: acc[7],
        value,
    }
}

/// Largest `|x|` over nodes with `|f| > threshold`; zero if there are none.
pub fn support_radius(f: &ScalarField, threshold: f64) -> f64 {
    let grid = f.grid();
    let mut r: f64 = 0.0;
    for (k, v) in f.values().iter().enumerate() {
        if v.abs() > threshold {
            let (x, y) = grid.point(k);
            r = r.max(x.hypot(y));
        }
    }
    r
}

/// Weights used by [`sobolev_report`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormConfig {
    pub delta: f64,
    /// `delta' = delta - eps`.
    pub eps: f64,
}

pub const NORM_NAMES: [&str; 7] = [
    "gamma_tilde_H2_delta",
    "N_tilde_H2_delta",
    "beta_H2_deltap",
    "dphi_H2",
    "domega_H2",
    "dphi_L4",
    "domega_L4",
];

/// The weighted norms of the gauge fields and the matter norms, in the order
/// of [`NORM_NAMES`]. `d u` stands for `(T u, d_1 u, d_2 u)`.
pub fn sobolev_report(state: &StateVector, cfg: &NormConfig) -> Result<Vec<(&'static str, f64)>, DiagnosticsError> {
    let w = WeightSpec { m: 2, p: 2.0, delta: cfg.delta };
    let wp = WeightSpec { m: 2, p: 2.0, delta: cfg.delta - cfg.eps };
    let du = |u: &ScalarField, p: &ScalarField| -> [ScalarField; 3] {
        let g = gradient(u);
        [p.clone(), g.x, g.y]
    };
    let dphi = du(&state.phi, &state.p_phi);
    let domega = du(&state.omega, &state.p_omega);
    let h2 = |c: &[ScalarField; 3]| -> Result<f64, GridError> { c.iter().map(|f| sobolev_norm(f, 2, 2.0)).sum() };
    let l4 = |c: &[ScalarField; 3]| {
        let s = ScalarField::from_index_fn(*state.grid(), |k| c.iter().map(|f| f.values()[k].powi(2)).sum::<f64>());
        lp_norm(&s, 2.0).sqrt()
    };
    Ok(vec![
        (NORM_NAMES[0], weighted_norm(&state.gamma.tilde, w)?),
        (NORM_NAMES[1], weighted_norm(&state.lapse.tilde, w)?),
        (NORM_NAMES[2], weighted_norm_vector(&state.shift, wp)?),
        (NORM_NAMES[3], h2(&dphi)?),
        (NORM_NAMES[4], h2(&domega)?),
        (NORM_NAMES[5], l4(&dphi)),
        (NORM_NAMES[6], l4(&domega)),
    ])
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiagnosticsRecord {
    pub t: f64,
    pub cl1: (f64, f64),
    pub cl2_residual: f64,
    pub tau_sup: f64,
    pub a_norm: f64,
    pub b_norm: f64,
    pub e0tau_norm: f64,
    pub e1_phi: f64,
    pub e1_omega: f64,
    pub e3: f64,
    pub sobolev_table: Vec<(&'static str, f64)>,
    pub support_radius_phi: f64,
    pub support_radius_omega: f64,
    pub min_n: f64,
    pub max_speed: f64,
}

impl DiagnosticsRecord {
    pub fn compute(state: &StateVector, norms: &NormConfig) -> Result<Self, DiagnosticsError> {
        let grid = *state.grid();
        let mask = monitor_window(&grid);
        let d = Derived::new(state);
        let e0t = e0_tau(state, &d);
        let bianchi = bianchi_residuals(state, &e0t);
        let (cl1, cl2_residual) = conservation_laws(state);
        let (sp, sw) = matter_second_derivatives(state);
        Ok(Self {
            t: state.t,
            cl1,
            cl2_residual,
            tau_sup: windowed(&state.tau, &mask).sup_norm(),
            a_norm: window_l2_vec(&bianchi.a, &mask),
            b_norm: window_l2_vec(&bianchi.b, &mask),
            e0tau_norm: window_l2(&e0t, &mask),
            e1_phi: energy_first_order(state, EnergyField::Phi, 0.0),
            e1_omega: energy_first_order(state, EnergyField::Omega, 0.0),
            e3: energy_third_order(state, &sp, &sw),
            sobolev_table: sobolev_report(state, norms)?,
            support_radius_phi: support_radius(&state.phi, SUPPORT_THRESHOLD),
            support_radius_omega: support_radius(&state.omega, SUPPORT_THRESHOLD),
            min_n: d.n.min(),
            max_speed: crate::evolution::max_speed(state),
        })
    }

    pub fn csv_header() -> String {
        let mut s = String::from(
            "t,cl1_x,cl1_y,cl2_res,tau_sup,A_l2,B_l2,e0tau_l2,E1_phi,E1_omega,E3,supp_phi,supp_omega,minN,max_speed",
        );
        for name in NORM_NAMES {
            s.push(',');
            s.push_str(name);
        }
        s
    }

    /// One CSV row; `{:e}` prints the shortest representation that
    /// round-trips, so rows are exact.
    pub fn csv_row(&self) -> String {
        let mut s = String::new();
        let vals = [
            self.t,
            self.cl1.0,
            self.cl1.1,
            self.cl2_residual,
            self.tau_sup,
            self.a_norm,
            self.b_norm,
            self.e0tau_norm,
            self.e1_phi,
            self.e1_omega,
            self.e3,
            self.support_radius_phi,
            self.support_radius_omega,
            self.min_n,
            self.max_speed,
        ];
        for (i, v) in vals.iter().chain(self.sobolev_table.iter().map(|(_, v)| v)).enumerate() {
            if i > 0 {
                s.push(',');
            }
            let _ = write!(s, "{v:e}");
        }
        s
    }
}
