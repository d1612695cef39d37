//! Closed-form 2+1 geometry of the metric
//! `g = -N^2 dt^2 + e^{2 gamma} delta_ij (dx^i + beta^i dt)(dx^j + beta^j dt)`
//! in the frame `(e_0, d_i)` with `e_0 = d_t - beta . grad`, `T = e_0 / N`.

use std::sync::Arc;

use thiserror::Error;

use crate::elliptic::{ChiLn, LogDecomposedScalar};
use crate::grid::{
    derivative, divergence, gradient, laplacian4, Axis, GridSpec, ScalarField,
    SymTensorField, VectorField,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("lapse is not positive: min N = {0}")]
    NonPositiveLapse(f64),
    #[error("field {0} contains non-finite values")]
    NonFinite(&'static str),
    #[error("H is not traceless: max |H_xx + H_yy| = {0:e}")]
    NotTraceless(f64),
}

/// Complete state on a time slice. `p_phi`, `p_omega`, `p_gamma` are the
/// normal derivatives `T phi`, `T omega`, `T gamma~`.
#[derive(Debug, Clone, PartialEq)]
pub struct StateVector {
    pub t: f64,
    pub phi: ScalarField,
    pub p_phi: ScalarField,
    pub omega: ScalarField,
    pub p_omega: ScalarField,
    /// `gamma = -alpha chi ln + gamma~`; `log_coeff` stores `-alpha`.
    pub gamma: LogDecomposedScalar,
    pub p_gamma: ScalarField,
    pub h: SymTensorField,
    /// `N = 1 + N_a chi ln + N~`.
    pub lapse: LogDecomposedScalar,
    pub shift: VectorField,
    pub tau: ScalarField,
}

impl StateVector {
    pub fn minkowski(grid: GridSpec, chi_ln: Arc<ChiLn>) -> Self {
        let z = ScalarField::zeros(grid);
        Self {
            t: 0.0,
            phi: z.clone(),
            p_phi: z.clone(),
            omega: z.clone(),
            p_omega: z.clone(),
            gamma: LogDecomposedScalar::new(0.0, z.clone(), 0.0, chi_ln.clone()),
            p_gamma: z.clone(),
            h: SymTensorField::zeros(grid),
            lapse: LogDecomposedScalar::new(0.0, z.clone(), 1.0, chi_ln),
            shift: VectorField::zeros(grid),
            tau: z,
        }
    }

    pub fn grid(&self) -> &GridSpec {
        self.phi.grid()
    }

    pub fn alpha(&self) -> f64 {
        -self.gamma.log_coeff
    }

    pub fn chi_ln(&self) -> &Arc<ChiLn> {
        &self.gamma.chi_ln
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        let named: [(&'static str, &ScalarField); 12] = [
            ("phi", &self.phi),
            ("p_phi", &self.p_phi),
            ("omega", &self.omega),
            ("p_omega", &self.p_omega),
            ("gamma", &self.gamma.tilde),
            ("p_gamma", &self.p_gamma),
            ("h_xx", &self.h.xx),
            ("h_xy", &self.h.xy),
            ("h_yy", &self.h.yy),
            ("lapse", &self.lapse.tilde),
            ("shift_x", &self.shift.x),
            ("tau", &self.tau),
        ];
        for (name, f) in named {
            if !f.is_finite() {
                return Err(GeometryError::NonFinite(name));
            }
        }
        if !self.shift.y.is_finite() {
            return Err(GeometryError::NonFinite("shift_y"));
        }
        if !(self.gamma.log_coeff.is_finite() && self.lapse.log_coeff.is_finite()) {
            return Err(GeometryError::NonFinite("log coefficients"));
        }
        let min_n = self.lapse.full().min();
        if !(min_n > 0.0) {
            return Err(GeometryError::NonPositiveLapse(min_n));
        }
        let tr = self.h.trace().sup_norm();
        if tr > 1e-10 {
            return Err(GeometryError::NotTraceless(tr));
        }
        Ok(())
    }
}

/// Spatial derivatives and pointwise combinations shared by the evolution
/// right-hand sides, the geometric identities and the diagnostics.
#[derive(Debug, Clone)]
pub struct Derived {
    pub n: ScalarField,
    pub grad_n: VectorField,
    pub lap_n: ScalarField,
    pub hess_n: SymTensorField,
    pub gamma: ScalarField,
    pub grad_gamma: VectorField,
    pub lap_gamma: ScalarField,
    pub e2g: ScalarField,
    pub em2g: ScalarField,
    pub grad_phi: VectorField,
    pub lap_phi: ScalarField,
    pub grad_omega: VectorField,
    pub lap_omega: ScalarField,
    pub em4phi: ScalarField,
    /// `d_i beta^j` indexed as `dbeta[i][j]`.
    pub dbeta: [[ScalarField; 2]; 2],
    pub div_beta: ScalarField,
}

impl Derived {
    pub fn new(s: &StateVector) -> Self {
        let n = s.lapse.full();
        let gamma = s.gamma.full();
        let dbx = gradient(&s.shift.x);
        let dby = gradient(&s.shift.y);
        let div_beta = dbx.x.add(&dby.y);
        Self {
            grad_n: s.lapse.gradient(),
            lap_n: s.lapse.laplacian4(),
            hess_n: s.lapse.hessian(),
            grad_gamma: s.gamma.gradient(),
            lap_gamma: s.gamma.laplacian4(),
            e2g: gamma.map(|g| (2.0 * g).exp()),
            em2g: gamma.map(|g| (-2.0 * g).exp()),
            grad_phi: gradient(&s.phi),
            lap_phi: laplacian4(&s.phi),
            grad_omega: gradient(&s.omega),
            lap_omega: laplacian4(&s.omega),
            em4phi: s.phi.map(|p| (-4.0 * p).exp()),
            dbeta: [[dbx.x, dby.x], [dbx.y, dby.y]],
            div_beta,
            n,
            gamma,
        }
    }
}

/// Time derivatives of the gauge fields, needed wherever `T` acts twice.
#[derive(Debug, Clone, PartialEq)]
pub struct GaugeRates {
    pub dt_beta: VectorField,
    pub dt_n: ScalarField,
}

impl GaugeRates {
    pub fn zeros(grid: GridSpec) -> Self {
        Self {
            dt_beta: VectorField::zeros(grid),
            dt_n: ScalarField::zeros(grid),
        }
    }
}

/// `e_0 f = f_t - beta . grad f`.
pub fn e0(f: &ScalarField, f_t: &ScalarField, state: &StateVector) -> ScalarField {
    let g = gradient(f);
    let (bx, by) = (state.shift.x.values(), state.shift.y.values());
    let (gx, gy) = (g.x.values(), g.y.values());
    let ft = f_t.values();
    ScalarField::from_index_fn(*f.grid(), |k| ft[k] - bx[k] * gx[k] - by[k] * gy[k])
}

/// `beta . grad f`.
pub fn advect(beta: &VectorField, f: &ScalarField) -> ScalarField {
    let g = gradient(f);
    beta.dot(&g)
}

/// `Box_g f = -T^2 f + e^{-2gamma} Delta f + (e^{-2gamma}/N) grad f . grad N + tau T f`,
/// with `T f` and `T^2 f` assembled from the coordinate time derivatives.
pub fn box_g(
    f: &ScalarField,
    f_t: &ScalarField,
    f_tt: &ScalarField,
    state: &StateVector,
    rates: &GaugeRates,
) -> ScalarField {
    let d = Derived::new(state);
    let gf = gradient(f);
    let gft = gradient(f_t);
    let lap = laplacian4(f);
    let tf = ScalarField::from_index_fn(*f.grid(), |k| {
        (f_t.values()[k] - state.shift.x.values()[k] * gf.x.values()[k] - state.shift.y.values()[k] * gf.y.values()[k])
            / d.n.values()[k]
    });
    let gtf = gradient(&tf);
    let grid = *f.grid();
    ScalarField::from_index_fn(grid, |k| {
        let n = d.n.values()[k];
        let (bx, by) = (state.shift.x.values()[k], state.shift.y.values()[k]);
        let (fx, fy) = (gf.x.values()[k], gf.y.values()[k]);
        let dtb = (rates.dt_beta.x.values()[k], rates.dt_beta.y.values()[k]);
        let ft = f_t.values()[k];
        // d_t (T f) from the product rule
        let dt_tf = (f_tt.values()[k] - dtb.0 * fx - dtb.1 * fy - bx * gft.x.values()[k] - by * gft.y.values()[k]) / n
            - (ft - bx * fx - by * fy) * rates.dt_n.values()[k] / (n * n);
        let t2f = (dt_tf - bx * gtf.x.values()[k] - by * gtf.y.values()[k]) / n;
        let em2g = d.em2g.values()[k];
        -t2f + em2g * lap.values()[k]
            + em2g / n * (fx * d.grad_n.x.values()[k] + fy * d.grad_n.y.values()[k])
            + state.tau.values()[k] * tf.values()[k]
    })
}

/// Second fundamental form together with the two pieces of its split.
#[derive(Debug, Clone, PartialEq)]
pub struct FundamentalForm {
    /// `K_ij = -delta_ij T(e^{2gamma})/2 + e^{2gamma}(d_i beta_j + d_j beta_i)/(2N)`
    pub k: SymTensorField,
    /// Traceless part `e^{2gamma} L beta / (2N)`.
    pub h: SymTensorField,
    /// Mean curvature `tau = -2 T gamma + div beta / N`.
    pub tau: ScalarField,
}

/// `T gamma` for the full `gamma = -alpha chi ln + gamma~`.
pub fn t_gamma(state: &StateVector, d: &Derived) -> ScalarField {
    let alpha = state.alpha();
    let bl = state.shift.dot(&state.chi_ln().grad);
    ScalarField::from_index_fn(*state.grid(), |k| {
        state.p_gamma.values()[k] + alpha * bl.values()[k] / d.n.values()[k]
    })
}

pub fn second_fundamental(state: &StateVector) -> FundamentalForm {
    let d = Derived::new(state);
    let tg = t_gamma(state, &d);
    let grid = *state.grid();
    let db = &d.dbeta;
    let e2g = d.e2g.values();
    let n = d.n.values();
    let tgv = tg.values();
    let c = |k: usize| e2g[k] / (2.0 * n[k]);
    let k = SymTensorField {
        xx: ScalarField::from_index_fn(grid, |k| -e2g[k] * tgv[k] + c(k) * 2.0 * db[0][0].values()[k]),
        xy: ScalarField::from_index_fn(grid, |k| c(k) * (db[0][1].values()[k] + db[1][0].values()[k])),
        yy: ScalarField::from_index_fn(grid, |k| -e2g[k] * tgv[k] + c(k) * 2.0 * db[1][1].values()[k]),
    };
    let h = SymTensorField {
        xx: ScalarField::from_index_fn(grid, |k| c(k) * (db[0][0].values()[k] - db[1][1].values()[k])),
        xy: k.xy.clone(),
        yy: ScalarField::from_index_fn(grid, |k| c(k) * (db[1][1].values()[k] - db[0][0].values()[k])),
    };
    let tau = ScalarField::from_index_fn(grid, |k| -2.0 * tgv[k] + d.div_beta.values()[k] / n[k]);
    FundamentalForm { k, h, tau }
}

/// Frame derivatives `e_0 tau` and `e_0 H_ij` fed to [`ricci_components`].
#[derive(Debug, Clone, PartialEq)]
pub struct SecondTimeDerivs {
    pub e0_tau: ScalarField,
    pub e0_h: SymTensorField,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ricci {
    pub r00: ScalarField,
    pub r0j: VectorField,
    pub rij: SymTensorField,
    pub r: ScalarField,
}

/// Ricci tensor in the frame `(e_0, d_i)` from the reduced expressions.
pub fn ricci_components(state: &StateVector, sec: &SecondTimeDerivs) -> Ricci {
    let d = Derived::new(state);
    let grid = *state.grid();
    let h = &state.h;
    let (hxx, hxy, hyy) = (h.xx.values(), h.xy.values(), h.yy.values());
    let div_h = VectorField {
        x: derivative(&h.xx, Axis::X).add(&derivative(&h.xy, Axis::Y)),
        y: derivative(&h.xy, Axis::X).add(&derivative(&h.yy, Axis::Y)),
    };
    let grad_tau = gradient(&state.tau);
    let tau = state.tau.values();
    let n = d.n.values();
    let em2g = d.em2g.values();
    let e2g = d.e2g.values();
    let hnorm = h.norm_sq();
    let hn = hnorm.values();
    let e0t = sec.e0_tau.values();

    let r00 = ScalarField::from_index_fn(grid, |k| {
        n[k] * (e0t[k] - em2g[k] * em2g[k] * n[k] * hn[k] - 0.5 * n[k] * tau[k] * tau[k] + em2g[k] * d.lap_n.values()[k])
    });
    let r0j = VectorField {
        x: ScalarField::from_index_fn(grid, |k| n[k] * (0.5 * grad_tau.x.values()[k] - em2g[k] * div_h.x.values()[k])),
        y: ScalarField::from_index_fn(grid, |k| n[k] * (0.5 * grad_tau.y.values()[k] - em2g[k] * div_h.y.values()[k])),
    };

    let db = &d.dbeta;
    let gg = &d.grad_gamma;
    let gn = &d.grad_n;
    let hess = &d.hess_n;
    let lap_g = d.lap_gamma.values();
    let lap_n = d.lap_n.values();
    let comp = |k: usize, i: usize, j: usize| -> f64 {
        let hm = |a: usize, b: usize| match (a, b) {
            (0, 0) => hxx[k],
            (1, 1) => hyy[k],
            _ => hxy[k],
        };
        let delta = if i == j { 1.0 } else { 0.0 };
        let tt = sec_t(sec, k, i, j) / n[k];
        let ttau = e0t[k] / n[k];
        let h2 = hm(i, 0) * hm(j, 0) + hm(i, 1) * hm(j, 1);
        let mut sym = 0.0;
        for kk in 0..2 {
            sym += db[j][kk].values()[k] * hm(kk, i) + db[i][kk].values()[k] * hm(kk, j);
        }
        let gv = |a: usize, v: &VectorField| if a == 0 { v.x.values()[k] } else { v.y.values()[k] };
        let hij = match (i, j) {
            (0, 0) => hess.xx.values()[k],
            (1, 1) => hess.yy.values()[k],
            _ => hess.xy.values()[k],
        };
        let gamma_dn = gv(i, gn) * gv(j, gg) + gv(j, gn) * gv(i, gg)
            - delta * (gg.x.values()[k] * gn.x.values()[k] + gg.y.values()[k] * gn.y.values()[k]);
        delta * (-lap_g[k] + 0.5 * tau[k] * tau[k] * e2g[k] - 0.5 * e2g[k] * ttau - 0.5 * lap_n[k] / n[k])
            - tt
            - 2.0 * em2g[k] * h2
            + sym / n[k]
            - (hij - 0.5 * delta * lap_n[k] - gamma_dn) / n[k]
    };
    let rij = SymTensorField {
        xx: ScalarField::from_index_fn(grid, |k| comp(k, 0, 0)),
        xy: ScalarField::from_index_fn(grid, |k| comp(k, 0, 1)),
        yy: ScalarField::from_index_fn(grid, |k| comp(k, 1, 1)),
    };
    let r = ScalarField::from_index_fn(grid, |k| {
        let ttau = e0t[k] / n[k];
        -2.0 * ttau + 1.5 * tau[k] * tau[k] + em2g[k] * em2g[k] * hn[k]
            - 2.0 * em2g[k] * lap_n[k] / n[k]
            - 2.0 * em2g[k] * lap_g[k]
    });
    Ricci { r00, r0j, rij, r }
}

fn sec_t(sec: &SecondTimeDerivs, k: usize, i: usize, j: usize) -> f64 {
    match (i, j) {
        (0, 0) => sec.e0_h.xx.values()[k],
        (1, 1) => sec.e0_h.yy.values()[k],
        _ => sec.e0_h.xy.values()[k],
    }
}

/// Wave-map stress tensor in the frame `(e_0, d_i)` together with the
/// trace-reversed combinations `T_ab - g_ab tr_g T`.
#[derive(Debug, Clone, PartialEq)]
pub struct StressTensor {
    pub t00: ScalarField,
    pub t0j: VectorField,
    pub tij: SymTensorField,
    pub trace: ScalarField,
    pub rev00: ScalarField,
    pub rev0j: VectorField,
    pub revij: SymTensorField,
}

pub fn stress_tensor(state: &StateVector) -> StressTensor {
    let d = Derived::new(state);
    let grid = *state.grid();
    let n = d.n.values();
    let e2g = d.e2g.values();
    let em2g = d.em2g.values();
    let em4 = d.em4phi.values();
    let (px, py) = (d.grad_phi.x.values(), d.grad_phi.y.values());
    let (wx, wy) = (d.grad_omega.x.values(), d.grad_omega.y.values());
    let e0p = |k: usize| n[k] * state.p_phi.values()[k];
    let e0w = |k: usize| n[k] * state.p_omega.values()[k];
    let gp2 = |k: usize| px[k] * px[k] + py[k] * py[k];
    let gw2 = |k: usize| wx[k] * wx[k] + wy[k] * wy[k];

    let t00 = ScalarField::from_index_fn(grid, |k| {
        let nn = n[k] * n[k];
        e0p(k).powi(2) + em2g[k] * nn * gp2(k) + 0.25 * em4[k] * (e0w(k).powi(2) + em2g[k] * nn * gw2(k))
    });
    let t0j = VectorField {
        x: ScalarField::from_index_fn(grid, |k| 2.0 * e0p(k) * px[k] + 0.5 * em4[k] * e0w(k) * wx[k]),
        y: ScalarField::from_index_fn(grid, |k| 2.0 * e0p(k) * py[k] + 0.5 * em4[k] * e0w(k) * wy[k]),
    };
    let tcomp = |k: usize, a: (f64, f64), b: (f64, f64), delta: f64| {
        let nn = n[k] * n[k];
        2.0 * a.0 * a.1 + delta * (e2g[k] / nn * e0p(k).powi(2) - gp2(k))
            + 0.25 * em4[k] * (2.0 * b.0 * b.1 + delta * (e2g[k] / nn * e0w(k).powi(2) - gw2(k)))
    };
    let tij = SymTensorField {
        xx: ScalarField::from_index_fn(grid, |k| tcomp(k, (px[k], px[k]), (wx[k], wx[k]), 1.0)),
        xy: ScalarField::from_index_fn(grid, |k| tcomp(k, (px[k], py[k]), (wx[k], wy[k]), 0.0)),
        yy: ScalarField::from_index_fn(grid, |k| tcomp(k, (py[k], py[k]), (wy[k], wy[k]), 1.0)),
    };
    // tr_g T = -g(dphi, dphi) - (1/4) e^{-4phi} g(domega, domega)
    let trace = ScalarField::from_index_fn(grid, |k| {
        let nn = n[k] * n[k];
        let gphi = -e0p(k).powi(2) / nn + em2g[k] * gp2(k);
        let gom = -e0w(k).powi(2) / nn + em2g[k] * gw2(k);
        -gphi - 0.25 * em4[k] * gom
    });
    let tr = trace.values();
    let rev00 = ScalarField::from_index_fn(grid, |k| t00.values()[k] + n[k] * n[k] * tr[k]);
    let rev0j = t0j.clone();
    let revij = SymTensorField {
        xx: ScalarField::from_index_fn(grid, |k| tij.xx.values()[k] - e2g[k] * tr[k]),
        xy: tij.xy.clone(),
        yy: ScalarField::from_index_fn(grid, |k| tij.yy.values()[k] - e2g[k] * tr[k]),
    };
    StressTensor { t00, t0j, tij, trace, rev00, rev0j, revij }
}

/// `e_0 tau` implied by the trace of the spatial Einstein equations,
/// `N [tau^2 - 2 e^{-2gamma}(Delta gamma + Delta N/(2N) + |grad phi|^2 + e^{-4phi}|grad omega|^2/4)]`.
pub fn e0_tau(state: &StateVector, d: &Derived) -> ScalarField {
    let grid = *state.grid();
    let gp = d.grad_phi.norm_sq();
    let gw = d.grad_omega.norm_sq();
    ScalarField::from_index_fn(grid, |k| {
        let n = d.n.values()[k];
        let tau = state.tau.values()[k];
        n * (tau * tau
            - 2.0 * d.em2g.values()[k]
                * (d.lap_gamma.values()[k] + 0.5 * d.lap_n.values()[k] / n + gp.values()[k]
                    + 0.25 * d.em4phi.values()[k] * gw.values()[k]))
    })
}

/// `u (x)bar v = u_i v_j + u_j v_i - delta_ij u . v`
pub fn sym_bar(u: &VectorField, v: &VectorField) -> SymTensorField {
    let (ux, uy) = (u.x.values(), u.y.values());
    let (vx, vy) = (v.x.values(), v.y.values());
    let g = *u.grid();
    SymTensorField {
        xx: ScalarField::from_index_fn(g, |k| ux[k] * vx[k] - uy[k] * vy[k]),
        xy: ScalarField::from_index_fn(g, |k| ux[k] * vy[k] + uy[k] * vx[k]),
        yy: ScalarField::from_index_fn(g, |k| uy[k] * vy[k] - ux[k] * vx[k]),
    }
}

/// Divergence `d_i H_ij` of a symmetric tensor.
pub fn tensor_divergence(h: &SymTensorField) -> VectorField {
    VectorField {
        x: divergence(&VectorField { x: h.xx.clone(), y: h.xy.clone() }),
        y: divergence(&VectorField { x: h.xy.clone(), y: h.yy.clone() }),
    }
}
