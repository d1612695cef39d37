//! Structural invariants checked on randomly drawn fields.

mod analytic;

use proptest::prelude::*;
use u1evolve_core::constraints::{bump_field, check_orthogonality, FieldMask, FreeData};
use u1evolve_core::elliptic::{
    chi_cutoff, conformal_killing, poisson_residual, solve_poisson_dirichlet, solve_poisson_logasym, EllipticConfig,
};
use u1evolve_core::evolution::{cfl_dt, Scheme, SchemeConfig};
use u1evolve_core::geometry::StateVector;
use u1evolve_core::grid::{
    derivative, divergence, gradient, hessian, integrate, laplacian4, second_derivative, Axis, GridSpec, ScalarField,
    VectorField,
};
use u1evolve_core::snapshot::{read_snapshot, write_snapshot};

fn grid(n: usize) -> GridSpec {
    GridSpec::new(2.0, n).unwrap()
}

/// Coefficients of the fifteen monomials `x^a y^b`, `a + b <= 4`.
fn quartic() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1.0..1.0f64, 15)
}

fn monomials() -> Vec<(i32, i32)> {
    (0..=4).flat_map(|a| (0..=4 - a).map(move |b| (a, b))).collect()
}

fn eval(c: &[f64], x: f64, y: f64, dx: i32, dy: i32) -> f64 {
    let falling = |p: i32, k: i32| (0..k).map(|i| (p - i) as f64).product::<f64>();
    monomials()
        .iter()
        .zip(c)
        .filter(|((a, b), _)| *a >= dx && *b >= dy)
        .map(|(&(a, b), &ci)| ci * falling(a, dx) * falling(b, dy) * x.powi(a - dx) * y.powi(b - dy))
        .sum()
}

/// Sums of up to three Gaussians centred in `[-1, 1]^2`.
fn smooth() -> impl Strategy<Value = Vec<(f64, f64, f64, f64)>> {
    prop::collection::vec((-1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64, 0.3..0.8f64), 1..4)
}

fn sample(g: GridSpec, terms: &[(f64, f64, f64, f64)]) -> ScalarField {
    ScalarField::from_fn(g, |x, y| {
        terms.iter().map(|&(a, cx, cy, w)| a * (-((x - cx).powi(2) + (y - cy).powi(2)) / (w * w)).exp()).sum()
    })
}

fn max_abs_diff(a: &ScalarField, b: &ScalarField) -> f64 {
    a.sub(b).sup_norm()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn stencils_differentiate_quartics_exactly(c in quartic()) {
        let g = grid(33);
        let f = ScalarField::from_fn(g, |x, y| eval(&c, x, y, 0, 0));
        let exact = |dx, dy| ScalarField::from_fn(g, |x, y| eval(&c, x, y, dx, dy));
        prop_assert!(max_abs_diff(&derivative(&f, Axis::X), &exact(1, 0)) < 1e-10);
        prop_assert!(max_abs_diff(&derivative(&f, Axis::Y), &exact(0, 1)) < 1e-10);
        prop_assert!(max_abs_diff(&second_derivative(&f, Axis::X), &exact(2, 0)) < 1e-8);
        let h = hessian(&f);
        prop_assert!(max_abs_diff(&h.xy, &exact(1, 1)) < 1e-9);
        prop_assert!(max_abs_diff(&laplacian4(&f), &exact(2, 0).add(&exact(0, 2))) < 1e-8);
    }

    #[test]
    fn conformal_killing_is_traceless(bx in smooth(), by in smooth()) {
        let g = grid(41);
        let xi = VectorField { x: sample(g, &bx), y: sample(g, &by) };
        let l = conformal_killing(&xi);
        prop_assert!(l.trace().sup_norm() <= 1e-13 * (1.0 + l.xx.sup_norm()));
        // off-diagonal part of the symmetrized gradient
        let gx = gradient(&xi.x);
        let gy = gradient(&xi.y);
        prop_assert!(max_abs_diff(&l.xy, &gx.y.add(&gy.x)) <= 1e-13 * (1.0 + l.xy.sup_norm()));
    }

    #[test]
    fn dirichlet_poisson_inverts_five_point_laplacian(terms in smooth()) {
        let g = grid(65);
        let f = sample(g, &terms);
        let cfg = EllipticConfig::default();
        let u = solve_poisson_dirichlet(&f, &cfg).unwrap();
        prop_assert!(poisson_residual(&u, &f) <= 10.0 * cfg.tol * f.sup_norm().max(1.0));
        let n = g.n();
        for i in 0..n {
            for j in [0, n - 1] {
                prop_assert_eq!(u.at(i, j), 0.0);
                prop_assert_eq!(u.at(j, i), 0.0);
            }
        }
    }

    #[test]
    fn log_coefficient_is_linear(a in smooth(), b in smooth(), s in -2.0..2.0f64) {
        let g = GridSpec::new(8.0, 65).unwrap();
        let chi = chi_cutoff(g);
        let cfg = EllipticConfig::default();
        let (fa, fb) = (sample(g, &a), sample(g, &b));
        let c = |f: &ScalarField| solve_poisson_logasym(f, &chi, &cfg).unwrap().log_coeff;
        let lhs = c(&fa.axpy(s, &fb));
        let rhs = c(&fa) + s * c(&fb);
        prop_assert!((lhs - rhs).abs() <= 1e-13 * (1.0 + lhs.abs()));
    }

    #[test]
    fn integration_is_linear(a in smooth(), b in smooth(), s in -3.0..3.0f64) {
        let g = grid(33);
        let (fa, fb) = (sample(g, &a), sample(g, &b));
        let lhs = integrate(&fa.axpy(s, &fb));
        let rhs = integrate(&fa) + s * integrate(&fb);
        prop_assert!((lhs - rhs).abs() <= 1e-13 * (1.0 + integrate(&fa.map(f64::abs)) + s.abs() * integrate(&fb.map(f64::abs))));
    }

    #[test]
    fn divergence_of_compact_field_integrates_to_zero(bx in smooth(), by in smooth()) {
        let g = GridSpec::new(6.0, 97).unwrap();
        let cut = bump_field(g, 1.0, (0.0, 0.0), 2.5);
        let v = VectorField { x: sample(g, &bx).mul(&cut), y: sample(g, &by).mul(&cut) };
        prop_assert!(integrate(&divergence(&v)).abs() <= 1e-12);
    }

    #[test]
    fn orthogonalize_removes_both_integrals(
        centres in prop::collection::vec((-0.3..0.3f64, -0.3..0.3f64), 4),
        amps in prop::collection::vec(-0.05..0.05f64, 4),
    ) {
        let g = GridSpec::new(8.0, 65).unwrap();
        let r = 1.5;
        let f = |i: usize| bump_field(g, amps[i], (centres[i].0, centres[i].1), 0.6);
        let mut data = FreeData { phi: f(0), phi_dot: f(1), omega: f(2), omega_dot: f(3), support_radius: r };
        let scale = 1.0 + check_orthogonality(&data).0.abs() + check_orthogonality(&data).1.abs();
        data.orthogonalize();
        let (i0, i1) = check_orthogonality(&data);
        prop_assert!(i0.abs() <= 1e-14 * scale && i1.abs() <= 1e-14 * scale, "{} {}", i0, i1);
        prop_assert_eq!(data.leakage(), 0.0);
    }

    #[test]
    fn snapshot_round_trip_is_exact(seed in 0u64..1000, t in -1.0..1.0f64) {
        let g = GridSpec::new(4.0, 33).unwrap();
        let state = analytic::Spacetime::random(seed).state(g, chi_cutoff(g), t);
        let mut bytes = Vec::new();
        write_snapshot(&state, &mut bytes).unwrap();
        let back = read_snapshot(&bytes[..]).unwrap();
        prop_assert_eq!(back, state);
    }

    #[test]
    fn cfl_step_scales_with_factor_and_speed(cfl in 0.01..0.5f64, lapse in 0.2..3.0f64) {
        let g = GridSpec::new(4.0, 33).unwrap();
        let mut state = StateVector::minkowski(g, chi_cutoff(g));
        state.lapse.offset = lapse;
        let cfg = SchemeConfig { cfl, scheme: Scheme::Free, ..SchemeConfig::default() };
        let dt = cfl_dt(&state, &cfg);
        prop_assert!((dt - cfl * g.spacing() / lapse).abs() <= 1e-14 * dt);
    }
}

#[test]
fn radial_data_is_orthogonal_by_parity() {
    let g = GridSpec::new(8.0, 65).unwrap();
    let mask = FieldMask { phi: true, phi_dot: true, omega: true, omega_dot: true };
    let data = FreeData::radial(g, 0.05, 1.5, mask);
    let (i0, i1) = check_orthogonality(&data);
    assert!(i0.abs() < 1e-18 && i1.abs() < 1e-18);
}
