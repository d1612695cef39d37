//! Closed-form spacetimes `-N^2 dt^2 + e^{2gamma} |dx + beta dt|^2` built from
//! Gaussian sums, and coordinate-metric evaluations of their curvature and
//! wave operator. Used as independent references for the grid expressions.

#![allow(dead_code)]

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use u1evolve_core::elliptic::{chi_cutoff, ChiLn, LogDecomposedScalar};
use u1evolve_core::geometry::{box_g, ricci_components, Derived, GaugeRates, SecondTimeDerivs, StateVector};
use u1evolve_core::grid::{GridSpec, ScalarField, SymTensorField, VectorField};

/// `a (1 + rate t) exp(-|x - c|^2 / w^2)`
#[derive(Debug, Clone, Copy)]
pub struct Gauss {
    pub a: f64,
    pub rate: f64,
    pub c: (f64, f64),
    pub w: f64,
}

#[derive(Debug, Clone)]
pub struct Field {
    pub constant: f64,
    pub terms: Vec<Gauss>,
}

impl Field {
    pub fn val(&self, t: f64, x: f64, y: f64) -> f64 {
        self.constant
            + self
                .terms
                .iter()
                .map(|g| {
                    let r2 = (x - g.c.0).powi(2) + (y - g.c.1).powi(2);
                    g.a * (1.0 + g.rate * t) * (-r2 / (g.w * g.w)).exp()
                })
                .sum::<f64>()
    }

    /// `(d_t, d_x, d_y)`
    pub fn d(&self, t: f64, x: f64, y: f64) -> [f64; 3] {
        let mut out = [0.0; 3];
        for g in &self.terms {
            let (dx, dy) = (x - g.c.0, y - g.c.1);
            let e = (-(dx * dx + dy * dy) / (g.w * g.w)).exp();
            let s = g.a * (1.0 + g.rate * t) * e;
            out[0] += g.a * g.rate * e;
            out[1] += -2.0 * dx / (g.w * g.w) * s;
            out[2] += -2.0 * dy / (g.w * g.w) * s;
        }
        out
    }

    pub fn random(rng: &mut ChaCha8Rng, constant: f64, amp: f64, count: usize) -> Self {
        let terms = (0..count)
            .map(|_| Gauss {
                a: rng.gen_range(-amp..amp),
                rate: rng.gen_range(-0.5..0.5),
                c: (rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)),
                w: rng.gen_range(1.2..1.8),
            })
            .collect();
        Self { constant, terms }
    }

    pub fn sample(&self, grid: GridSpec, t: f64) -> ScalarField {
        ScalarField::from_fn(grid, |x, y| self.val(t, x, y))
    }

    pub fn sample_d(&self, grid: GridSpec, t: f64, axis: usize) -> ScalarField {
        ScalarField::from_fn(grid, |x, y| self.d(t, x, y)[axis])
    }
}

/// Fourth-order central difference of `f` at `s`.
pub fn fd4(f: impl Fn(f64) -> f64, s: f64, e: f64) -> f64 {
    (f(s - 2.0 * e) - 8.0 * f(s - e) + 8.0 * f(s + e) - f(s + 2.0 * e)) / (12.0 * e)
}

const FD_STEP: f64 = 1e-3;

/// Derivative along coordinate `axis` (0 = t) of `f(t, x, y)`.
pub fn fd_axis(f: &dyn Fn(f64, f64, f64) -> f64, p: [f64; 3], axis: usize) -> f64 {
    fd4(
        |s| {
            let mut q = p;
            q[axis] = s;
            f(q[0], q[1], q[2])
        },
        p[axis],
        FD_STEP,
    )
}

pub type M3 = [[f64; 3]; 3];

fn inverse3(m: &M3) -> M3 {
    let det = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
    let mut inv = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            let (a0, a1) = ((j + 1) % 3, (j + 2) % 3);
            let (b0, b1) = ((i + 1) % 3, (i + 2) % 3);
            inv[i][j] = (m[a0][b0] * m[a1][b1] - m[a0][b1] * m[a1][b0]) / det;
        }
    }
    inv
}

#[derive(Debug, Clone)]
pub struct Spacetime {
    pub gamma: Field,
    pub lapse: Field,
    pub beta: [Field; 2],
}

/// Ricci tensor in the frame `(e_0, d_x, d_y)`, `e_0 = d_t - beta^i d_i`.
#[derive(Debug, Clone, Copy)]
pub struct FrameRicci {
    pub r00: f64,
    pub r0j: [f64; 2],
    pub rij: [[f64; 2]; 2],
    pub scalar: f64,
}

impl Spacetime {
    pub fn random(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self {
            gamma: Field::random(&mut rng, 0.0, 0.1, 3),
            lapse: Field::random(&mut rng, 1.0, 0.1, 3),
            beta: [Field::random(&mut rng, 0.0, 0.1, 2), Field::random(&mut rng, 0.0, 0.1, 2)],
        }
    }

    pub fn metric(&self, t: f64, x: f64, y: f64) -> M3 {
        let e2g = (2.0 * self.gamma.val(t, x, y)).exp();
        let n = self.lapse.val(t, x, y);
        let b = [self.beta[0].val(t, x, y), self.beta[1].val(t, x, y)];
        let mut g = [[0.0; 3]; 3];
        g[0][0] = -n * n + e2g * (b[0] * b[0] + b[1] * b[1]);
        for i in 0..2 {
            g[0][i + 1] = e2g * b[i];
            g[i + 1][0] = e2g * b[i];
            g[i + 1][i + 1] = e2g;
        }
        g
    }

    /// `dg[c][a][b] = d_c g_ab`
    pub fn dmetric(&self, t: f64, x: f64, y: f64) -> [M3; 3] {
        let e2g = (2.0 * self.gamma.val(t, x, y)).exp();
        let n = self.lapse.val(t, x, y);
        let b = [self.beta[0].val(t, x, y), self.beta[1].val(t, x, y)];
        let dgam = self.gamma.d(t, x, y);
        let dn = self.lapse.d(t, x, y);
        let db = [self.beta[0].d(t, x, y), self.beta[1].d(t, x, y)];
        let mut out = [[[0.0; 3]; 3]; 3];
        for c in 0..3 {
            let b2 = b[0] * b[0] + b[1] * b[1];
            let m = &mut out[c];
            m[0][0] = -2.0 * n * dn[c] + e2g * (2.0 * dgam[c] * b2 + 2.0 * (b[0] * db[0][c] + b[1] * db[1][c]));
            for i in 0..2 {
                let v = e2g * (2.0 * dgam[c] * b[i] + db[i][c]);
                m[0][i + 1] = v;
                m[i + 1][0] = v;
                m[i + 1][i + 1] = 2.0 * dgam[c] * e2g;
            }
        }
        out
    }

    /// `Gamma^a_bc`
    pub fn christoffel(&self, t: f64, x: f64, y: f64) -> [M3; 3] {
        let gi = inverse3(&self.metric(t, x, y));
        let dg = self.dmetric(t, x, y);
        let mut out = [[[0.0; 3]; 3]; 3];
        for a in 0..3 {
            for b in 0..3 {
                for c in 0..3 {
                    let mut s = 0.0;
                    for d in 0..3 {
                        s += gi[a][d] * (dg[b][d][c] + dg[c][d][b] - dg[d][b][c]);
                    }
                    out[a][b][c] = 0.5 * s;
                }
            }
        }
        out
    }

    /// Coordinate Ricci tensor `R_bc = d_a G^a_bc - d_c G^a_ab + G^a_ad G^d_bc - G^a_cd G^d_ab`.
    pub fn ricci_coord(&self, t: f64, x: f64, y: f64) -> M3 {
        let p = [t, x, y];
        let gam = self.christoffel(t, x, y);
        let mut dgam = [[[[0.0; 3]; 3]; 3]; 3];
        for e in 0..3 {
            let mut shifted = Vec::with_capacity(4);
            for s in [-2.0, -1.0, 1.0, 2.0] {
                let mut q = p;
                q[e] += s * FD_STEP;
                shifted.push(self.christoffel(q[0], q[1], q[2]));
            }
            for a in 0..3 {
                for b in 0..3 {
                    for c in 0..3 {
                        dgam[e][a][b][c] = (shifted[0][a][b][c] - 8.0 * shifted[1][a][b][c] + 8.0 * shifted[2][a][b][c]
                            - shifted[3][a][b][c])
                            / (12.0 * FD_STEP);
                    }
                }
            }
        }
        let mut r = [[0.0; 3]; 3];
        for b in 0..3 {
            for c in 0..3 {
                let mut s = 0.0;
                for a in 0..3 {
                    s += dgam[a][a][b][c] - dgam[c][a][a][b];
                    for d in 0..3 {
                        s += gam[a][a][d] * gam[d][b][c] - gam[a][c][d] * gam[d][a][b];
                    }
                }
                r[b][c] = s;
            }
        }
        r
    }

    pub fn frame_ricci(&self, t: f64, x: f64, y: f64) -> FrameRicci {
        let r = self.ricci_coord(t, x, y);
        let gi = inverse3(&self.metric(t, x, y));
        let e0 = [1.0, -self.beta[0].val(t, x, y), -self.beta[1].val(t, x, y)];
        let mut r00 = 0.0;
        let mut r0j = [0.0; 2];
        let mut scalar = 0.0;
        for a in 0..3 {
            for b in 0..3 {
                r00 += e0[a] * e0[b] * r[a][b];
                scalar += gi[a][b] * r[a][b];
            }
            for j in 0..2 {
                r0j[j] += e0[a] * r[a][j + 1];
            }
        }
        let rij = [[r[1][1], r[1][2]], [r[2][1], r[2][2]]];
        FrameRicci { r00, r0j, rij, scalar }
    }

    pub fn t_gamma(&self, t: f64, x: f64, y: f64) -> f64 {
        let d = self.gamma.d(t, x, y);
        (d[0] - self.beta[0].val(t, x, y) * d[1] - self.beta[1].val(t, x, y) * d[2]) / self.lapse.val(t, x, y)
    }

    pub fn div_beta(&self, t: f64, x: f64, y: f64) -> f64 {
        self.beta[0].d(t, x, y)[1] + self.beta[1].d(t, x, y)[2]
    }

    /// `tau = -2 T gamma + div beta / N`
    pub fn tau(&self, t: f64, x: f64, y: f64) -> f64 {
        -2.0 * self.t_gamma(t, x, y) + self.div_beta(t, x, y) / self.lapse.val(t, x, y)
    }

    /// `H = e^{2gamma} L beta / (2N)` as `(xx, xy, yy)`.
    pub fn h(&self, t: f64, x: f64, y: f64) -> [f64; 3] {
        let c = (2.0 * self.gamma.val(t, x, y)).exp() / (2.0 * self.lapse.val(t, x, y));
        let bx = self.beta[0].d(t, x, y);
        let by = self.beta[1].d(t, x, y);
        [c * (bx[1] - by[2]), c * (by[1] + bx[2]), c * (by[2] - bx[1])]
    }

    /// `e_0 f` for a closed-form `f`.
    pub fn e0_of(&self, f: &dyn Fn(f64, f64, f64) -> f64, t: f64, x: f64, y: f64) -> f64 {
        let p = [t, x, y];
        fd_axis(f, p, 0) - self.beta[0].val(t, x, y) * fd_axis(f, p, 1) - self.beta[1].val(t, x, y) * fd_axis(f, p, 2)
    }

    /// The grid state at time `t` (no matter, no logarithmic parts).
    pub fn state(&self, grid: GridSpec, chi_ln: Arc<ChiLn>, t: f64) -> StateVector {
        let z = ScalarField::zeros(grid);
        let f = |g: &dyn Fn(f64, f64) -> f64| ScalarField::from_fn(grid, g);
        StateVector {
            t,
            phi: z.clone(),
            p_phi: z.clone(),
            omega: z.clone(),
            p_omega: z,
            gamma: LogDecomposedScalar::new(0.0, self.gamma.sample(grid, t), 0.0, chi_ln.clone()),
            p_gamma: f(&|x, y| self.t_gamma(t, x, y)),
            h: SymTensorField {
                xx: f(&|x, y| self.h(t, x, y)[0]),
                xy: f(&|x, y| self.h(t, x, y)[1]),
                yy: f(&|x, y| self.h(t, x, y)[2]),
            },
            lapse: LogDecomposedScalar::new(0.0, self.lapse.sample(grid, t).map(|v| v - 1.0), 1.0, chi_ln),
            shift: VectorField { x: self.beta[0].sample(grid, t), y: self.beta[1].sample(grid, t) },
            tau: f(&|x, y| self.tau(t, x, y)),
        }
    }

    pub fn second_time_derivs(&self, grid: GridSpec, t: f64) -> SecondTimeDerivs {
        let f = |g: &dyn Fn(f64, f64) -> f64| ScalarField::from_fn(grid, g);
        let tau = |t: f64, x: f64, y: f64| self.tau(t, x, y);
        let hc = |c: usize| move |t: f64, x: f64, y: f64| self.h(t, x, y)[c];
        SecondTimeDerivs {
            e0_tau: f(&|x, y| self.e0_of(&tau, t, x, y)),
            e0_h: SymTensorField {
                xx: f(&|x, y| self.e0_of(&hc(0), t, x, y)),
                xy: f(&|x, y| self.e0_of(&hc(1), t, x, y)),
                yy: f(&|x, y| self.e0_of(&hc(2), t, x, y)),
            },
        }
    }

    pub fn rates(&self, grid: GridSpec, t: f64) -> GaugeRates {
        GaugeRates {
            dt_beta: VectorField { x: self.beta[0].sample_d(grid, t, 0), y: self.beta[1].sample_d(grid, t, 0) },
            dt_n: self.lapse.sample_d(grid, t, 0),
        }
    }

    /// `Box_g f = |g|^{-1/2} d_mu (|g|^{1/2} g^{mu nu} d_nu f)`
    pub fn box_oracle(&self, f: &Field, t: f64, x: f64, y: f64) -> f64 {
        let flux = |mu: usize| {
            move |t: f64, x: f64, y: f64| {
                let g = self.metric(t, x, y);
                let gi = inverse3(&g);
                let sq = self.lapse.val(t, x, y) * (2.0 * self.gamma.val(t, x, y)).exp();
                let df = f.d(t, x, y);
                sq * (0..3).map(|nu| gi[mu][nu] * df[nu]).sum::<f64>()
            }
        };
        let p = [t, x, y];
        let div: f64 = (0..3).map(|mu| fd_axis(&flux(mu), p, mu)).sum();
        div / (self.lapse.val(t, x, y) * (2.0 * self.gamma.val(t, x, y)).exp())
    }
}

/// Nodes with `|x|, |y| <= L/2`.
pub fn window(grid: GridSpec) -> Vec<usize> {
    let l = grid.half_width() / 2.0;
    (0..grid.len())
        .filter(|&k| {
            let (x, y) = grid.point(k);
            x.abs() <= l && y.abs() <= l
        })
        .collect()
}

/// `max |a - b| / max |b|` over `nodes`.
pub fn relative_error(a: &ScalarField, b: &ScalarField, nodes: &[usize]) -> f64 {
    let mut num: f64 = 0.0;
    let mut den: f64 = 0.0;
    for &k in nodes {
        num = num.max((a.values()[k] - b.values()[k]).abs());
        den = den.max(b.values()[k].abs());
    }
    num / den
}

/// Relative error of a tensor field in the pointwise Frobenius norm, with
/// `weights` counting repeated components.
pub fn relative_error_multi(a: &[&ScalarField], b: &[ScalarField], weights: &[f64], nodes: &[usize]) -> f64 {
    let mut num: f64 = 0.0;
    let mut den: f64 = 0.0;
    for &k in nodes {
        let mut d2 = 0.0;
        let mut b2 = 0.0;
        for c in 0..a.len() {
            d2 += weights[c] * (a[c].values()[k] - b[c].values()[k]).powi(2);
            b2 += weights[c] * b[c].values()[k].powi(2);
        }
        num = num.max(d2.sqrt());
        den = den.max(b2.sqrt());
    }
    num / den
}

fn on_nodes(grid: GridSpec, nodes: &[usize], f: impl Fn(usize, f64, f64) -> f64) -> ScalarField {
    let mut out = ScalarField::zeros(grid);
    for (i, &k) in nodes.iter().enumerate() {
        let (x, y) = grid.point(k);
        out.values_mut()[k] = f(i, x, y);
    }
    out
}

/// Relative errors of `R00`, `R0j`, `Rij` and the scalar curvature against
/// [`Spacetime::frame_ricci`] on the window, at `t = 0.3`.
pub fn ricci_relative_errors(grid: GridSpec, seed: u64) -> [(&'static str, f64); 4] {
    let nodes = window(grid);
    let st = Spacetime::random(seed);
    let t = 0.3;
    let state = st.state(grid, chi_cutoff(grid), t);
    let ric = ricci_components(&state, &st.second_time_derivs(grid, t));
    let oracle: Vec<FrameRicci> = nodes
        .iter()
        .map(|&k| {
            let (x, y) = grid.point(k);
            st.frame_ricci(t, x, y)
        })
        .collect();
    let pick = |f: &dyn Fn(&FrameRicci) -> f64| on_nodes(grid, &nodes, |i, _, _| f(&oracle[i]));
    let r00 = relative_error(&ric.r00, &pick(&|r| r.r00), &nodes);
    let scalar = relative_error(&ric.r, &pick(&|r| r.scalar), &nodes);
    let r0j = relative_error_multi(
        &[&ric.r0j.x, &ric.r0j.y],
        &[pick(&|r| r.r0j[0]), pick(&|r| r.r0j[1])],
        &[1.0, 1.0],
        &nodes,
    );
    let rij = relative_error_multi(
        &[&ric.rij.xx, &ric.rij.xy, &ric.rij.yy],
        &[pick(&|r| r.rij[0][0]), pick(&|r| r.rij[0][1]), pick(&|r| r.rij[1][1])],
        &[1.0, 2.0, 1.0],
        &nodes,
    );
    [("R00", r00), ("R0j", r0j), ("Rij", rij), ("R", scalar)]
}

/// Largest deviation of `delta^{ij} R_ij` from its closed form, in which the
/// traceless transport terms have cancelled.
pub fn ricci_trace_defect(grid: GridSpec, seed: u64) -> f64 {
    let st = Spacetime::random(seed);
    let state = st.state(grid, chi_cutoff(grid), 0.0);
    let sec = st.second_time_derivs(grid, 0.0);
    let ric = ricci_components(&state, &sec);
    let d = Derived::new(&state);
    let h = &state.h;
    let mut worst: f64 = 0.0;
    for k in 0..grid.len() {
        let n = d.n.values()[k];
        let (e2g, em2g) = (d.e2g.values()[k], d.em2g.values()[k]);
        let tau = state.tau.values()[k];
        let hm = [[h.xx.values()[k], h.xy.values()[k]], [h.xy.values()[k], h.yy.values()[k]]];
        let mut h2 = 0.0;
        let mut sym = 0.0;
        for i in 0..2 {
            for kk in 0..2 {
                h2 += hm[i][kk] * hm[i][kk];
                sym += 2.0 * d.dbeta[i][kk].values()[k] * hm[kk][i];
            }
        }
        let expected = 2.0
            * (-d.lap_gamma.values()[k] + 0.5 * tau * tau * e2g
                - 0.5 * e2g * sec.e0_tau.values()[k] / n
                - 0.5 * d.lap_n.values()[k] / n)
            - 2.0 * em2g * h2
            + sym / n;
        let got = ric.rij.xx.values()[k] + ric.rij.yy.values()[k];
        worst = worst.max((got - expected).abs());
    }
    worst
}

/// Relative error of `box_g` on a two-term Gaussian sum against
/// [`Spacetime::box_oracle`], at `t = -0.2`.
pub fn box_relative_error(grid: GridSpec, seed: u64) -> f64 {
    let nodes = window(grid);
    let st = Spacetime::random(seed);
    let t = -0.2;
    let f = Field {
        constant: 0.0,
        terms: vec![
            Gauss { a: 1.0, rate: 0.7, c: (0.3, -0.2), w: 1.4 },
            Gauss { a: -0.5, rate: -0.4, c: (-0.5, 0.4), w: 1.6 },
        ],
    };
    let state = st.state(grid, chi_cutoff(grid), t);
    let ft = f.sample_d(grid, t, 0);
    let ftt = ScalarField::from_fn(grid, |x, y| fd4(|s| f.d(s, x, y)[0], t, 1e-3));
    let got = box_g(&f.sample(grid, t), &ft, &ftt, &state, &st.rates(grid, t));
    let want = on_nodes(grid, &nodes, |_, x, y| st.box_oracle(&f, t, x, y));
    relative_error(&got, &want, &nodes)
}
