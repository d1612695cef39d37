//! Uniform Cartesian grids over `[-L, L]^2`, field containers and the
//! finite-difference stencils shared by every other module.
//!
//! Fields are stored row-major with `y` as the outer index, so node `(i, j)`
//! (x-index `i`, y-index `j`) lives at `j * n + i`.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GridError {
    #[error("grid size n={0} must be odd and at least 33")]
    InvalidSize(usize),
    #[error("half-width L={0} must be positive and finite")]
    InvalidHalfWidth(f64),
    #[error("fields live on different grids")]
    GridMismatch,
    #[error("norm exponent p={0} must exceed 1")]
    InvalidExponent(f64),
    #[error("derivative order m={0} exceeds the supported maximum of 3")]
    UnsupportedOrder(usize),
}

/// Uniform grid with `n` nodes per axis on `[-L, L]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    half_width: f64,
    n: usize,
    spacing: f64,
}

impl GridSpec {
    pub fn new(half_width: f64, n: usize) -> Result<Self, GridError> {
        if !(half_width.is_finite() && half_width > 0.0) {
            return Err(GridError::InvalidHalfWidth(half_width));
        }
        if n < 33 || n % 2 == 0 {
            return Err(GridError::InvalidSize(n));
        }
        Ok(Self {
            half_width,
            n,
            spacing: 2.0 * half_width / (n - 1) as f64,
        })
    }

    pub fn half_width(&self) -> f64 {
        self.half_width
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn len(&self) -> usize {
        self.n * self.n
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Coordinate of node index `i` along either axis. Computed from the
    /// centred integer offset so that the grid is exactly symmetric about 0.
    pub fn coord(&self, i: usize) -> f64 {
        (i as f64 - ((self.n - 1) / 2) as f64) * self.spacing
    }

    pub fn index(&self, i: usize, j: usize) -> usize {
        j * self.n + i
    }

    pub fn node(&self, k: usize) -> (usize, usize) {
        (k % self.n, k / self.n)
    }

    pub fn point(&self, k: usize) -> (f64, f64) {
        let (i, j) = self.node(k);
        (self.coord(i), self.coord(j))
    }

    /// Distance (in nodes) from node `k` to the nearest boundary line.
    pub fn boundary_distance(&self, k: usize) -> usize {
        let (i, j) = self.node(k);
        let last = self.n - 1;
        i.min(j).min(last - i).min(last - j)
    }

    /// Grid with a refined spacing `h/2` on the same domain.
    pub fn refined(&self) -> Self {
        Self {
            half_width: self.half_width,
            n: 2 * self.n - 1,
            spacing: self.spacing / 2.0,
        }
    }
}

/// Scalar field sampled at every grid node.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    grid: GridSpec,
    values: Vec<f64>,
}

impl ScalarField {
    pub fn zeros(grid: GridSpec) -> Self {
        Self::constant(grid, 0.0)
    }

    pub fn constant(grid: GridSpec, value: f64) -> Self {
        Self {
            grid,
            values: vec![value; grid.len()],
        }
    }

    pub fn from_vec(grid: GridSpec, values: Vec<f64>) -> Result<Self, GridError> {
        if values.len() != grid.len() {
            return Err(GridError::GridMismatch);
        }
        Ok(Self { grid, values })
    }

    /// Samples `f(x, y)` at every node.
    pub fn from_fn(grid: GridSpec, mut f: impl FnMut(f64, f64) -> f64) -> Self {
        let values = (0..grid.len())
            .map(|k| {
                let (x, y) = grid.point(k);
                f(x, y)
            })
            .collect();
        Self { grid, values }
    }

    /// Builds a field from a per-node closure over the flat index.
    pub fn from_index_fn(grid: GridSpec, f: impl FnMut(usize) -> f64) -> Self {
        Self {
            grid,
            values: (0..grid.len()).map(f).collect(),
        }
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.values[self.grid.index(i, j)]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            grid: self.grid,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Self {
        debug_assert_eq!(self.grid, other.grid);
        Self {
            grid: self.grid,
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    pub fn add(&self, other: &Self) -> Self {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn mul(&self, other: &Self) -> Self {
        self.zip_map(other, |a, b| a * b)
    }

    pub fn scale(&self, s: f64) -> Self {
        self.map(|v| s * v)
    }

    /// `self + s * other`
    pub fn axpy(&self, s: f64, other: &Self) -> Self {
        self.zip_map(other, |a, b| a + s * b)
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// Spatial vector field with Cartesian components.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorField {
    pub x: ScalarField,
    pub y: ScalarField,
}

impl VectorField {
    pub fn zeros(grid: GridSpec) -> Self {
        Self {
            x: ScalarField::zeros(grid),
            y: ScalarField::zeros(grid),
        }
    }

    pub fn grid(&self) -> &GridSpec {
        self.x.grid()
    }

    pub fn component(&self, axis: Axis) -> &ScalarField {
        match axis {
            Axis::X => &self.x,
            Axis::Y => &self.y,
        }
    }

    pub fn dot(&self, other: &Self) -> ScalarField {
        let (ax, ay) = (self.x.values(), self.y.values());
        let (bx, by) = (other.x.values(), other.y.values());
        ScalarField::from_index_fn(*self.grid(), |k| ax[k] * bx[k] + ay[k] * by[k])
    }

    pub fn norm_sq(&self) -> ScalarField {
        self.dot(self)
    }

    pub fn scale(&self, s: f64) -> Self {
        Self {
            x: self.x.scale(s),
            y: self.y.scale(s),
        }
    }

    pub fn scale_by(&self, f: &ScalarField) -> Self {
        Self {
            x: self.x.mul(f),
            y: self.y.mul(f),
        }
    }

    pub fn add(&self, other: &Self) -> Self {
        Self {
            x: self.x.add(&other.x),
            y: self.y.add(&other.y),
        }
    }

    pub fn sub(&self, other: &Self) -> Self {
        Self {
            x: self.x.sub(&other.x),
            y: self.y.sub(&other.y),
        }
    }

    pub fn axpy(&self, s: f64, other: &Self) -> Self {
        Self {
            x: self.x.axpy(s, &other.x),
            y: self.y.axpy(s, &other.y),
        }
    }

    pub fn sup_norm(&self) -> f64 {
        self.norm_sq().sup_norm().sqrt()
    }
}

/// Symmetric 2-tensor field stored by its three independent components.
#[derive(Debug, Clone, PartialEq)]
pub struct SymTensorField {
    pub xx: ScalarField,
    pub xy: ScalarField,
    pub yy: ScalarField,
}

impl SymTensorField {
    pub fn zeros(grid: GridSpec) -> Self {
        Self {
            xx: ScalarField::zeros(grid),
            xy: ScalarField::zeros(grid),
            yy: ScalarField::zeros(grid),
        }
    }

    pub fn grid(&self) -> &GridSpec {
        self.xx.grid()
    }

    pub fn component(&self, a: Axis, b: Axis) -> &ScalarField {
        match (a, b) {
            (Axis::X, Axis::X) => &self.xx,
            (Axis::Y, Axis::Y) => &self.yy,
            _ => &self.xy,
        }
    }

    pub fn trace(&self) -> ScalarField {
        self.xx.add(&self.yy)
    }

    /// Pointwise `sum_ij T_ij T_ij`, counting the off-diagonal entry twice.
    pub fn norm_sq(&self) -> ScalarField {
        let (a, b, c) = (self.xx.values(), self.xy.values(), self.yy.values());
        ScalarField::from_index_fn(*self.grid(), |k| a[k] * a[k] + 2.0 * b[k] * b[k] + c[k] * c[k])
    }

    /// Contraction `T_ij v_j`.
    pub fn contract(&self, v: &VectorField) -> VectorField {
        let (a, b, c) = (self.xx.values(), self.xy.values(), self.yy.values());
        let (vx, vy) = (v.x.values(), v.y.values());
        let g = *self.grid();
        VectorField {
            x: ScalarField::from_index_fn(g, |k| a[k] * vx[k] + b[k] * vy[k]),
            y: ScalarField::from_index_fn(g, |k| b[k] * vx[k] + c[k] * vy[k]),
        }
    }

    pub fn scale(&self, s: f64) -> Self {
        Self {
            xx: self.xx.scale(s),
            xy: self.xy.scale(s),
            yy: self.yy.scale(s),
        }
    }

    pub fn scale_by(&self, f: &ScalarField) -> Self {
        Self {
            xx: self.xx.mul(f),
            xy: self.xy.mul(f),
            yy: self.yy.mul(f),
        }
    }

    pub fn add(&self, other: &Self) -> Self {
        Self {
            xx: self.xx.add(&other.xx),
            xy: self.xy.add(&other.xy),
            yy: self.yy.add(&other.yy),
        }
    }

    pub fn sub(&self, other: &Self) -> Self {
        Self {
            xx: self.xx.sub(&other.xx),
            xy: self.xy.sub(&other.xy),
            yy: self.yy.sub(&other.yy),
        }
    }

    pub fn axpy(&self, s: f64, other: &Self) -> Self {
        Self {
            xx: self.xx.axpy(s, &other.xx),
            xy: self.xy.axpy(s, &other.xy),
            yy: self.yy.axpy(s, &other.yy),
        }
    }

    /// Sup over nodes of the pointwise Frobenius norm.
    pub fn sup_norm(&self) -> f64 {
        self.norm_sq().sup_norm().sqrt()
    }

    pub fn components(&self) -> [&ScalarField; 3] {
        [&self.xx, &self.xy, &self.yy]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    X,
    Y,
}

impl Axis {
    pub const BOTH: [Axis; 2] = [Axis::X, Axis::Y];
}

/// Parameters of the weighted Sobolev norm `W^{m,p}_delta`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightSpec {
    pub m: usize,
    pub p: f64,
    pub delta: f64,
}

// One-dimensional stencils. Each row lists the first node it touches and the
// integer weights; the row is divided by `denom * h^power`.
struct Stencil {
    denom: f64,
    power: i32,
    left: &'static [&'static [f64]],
    interior: &'static [f64],
    // true if the right-boundary rows are the left rows reversed and negated
    odd: bool,
}

const D1: Stencil = Stencil {
    denom: 12.0,
    power: 1,
    left: &[&[-25.0, 48.0, -36.0, 16.0, -3.0], &[-3.0, -10.0, 18.0, -6.0, 1.0]],
    interior: &[1.0, -8.0, 0.0, 8.0, -1.0],
    odd: true,
};

const D2: Stencil = Stencil {
    denom: 12.0,
    power: 2,
    left: &[
        &[45.0, -154.0, 214.0, -156.0, 61.0, -10.0],
        &[10.0, -15.0, -4.0, 14.0, -6.0, 1.0],
    ],
    interior: &[-1.0, 16.0, -30.0, 16.0, -1.0],
    odd: false,
};

const D2_LOW: Stencil = Stencil {
    denom: 1.0,
    power: 2,
    left: &[&[2.0, -5.0, 4.0, -1.0]],
    interior: &[1.0, -2.0, 1.0],
    odd: false,
};

impl Stencil {
    fn width(&self) -> usize {
        self.left.len()
    }

    /// First node and weights for output node `i` on a line of `n` nodes.
    fn row(&self, i: usize, n: usize) -> (usize, &'static [f64], f64) {
        let w = self.width();
        if i < w {
            (0, self.left[i], 1.0)
        } else if i + w >= n {
            let r = self.left[n - 1 - i];
            // reversed rows are applied by walking the weights backwards
            (n - r.len(), r, if self.odd { -1.0 } else { 1.0 })
        } else {
            (i - w, self.interior, 1.0)
        }
    }

    fn reversed(&self, i: usize, n: usize) -> bool {
        i + self.width() >= n && i >= self.width()
    }

    /// Applies the stencil along a line: `out[i] = sum_k c_k line[k]`.
    fn apply_line(&self, line: &[f64], out: &mut [f64], h: f64) {
        let n = line.len();
        let scale = 1.0 / (self.denom * h.powi(self.power));
        let w = self.width();
        if self.odd && self.interior.len() == 5 {
            // antisymmetric interior form keeps mirror images exactly negated
            for i in w..n - w {
                let d1 = line[i + 1] - line[i - 1];
                let d2 = line[i + 2] - line[i - 2];
                out[i] = (8.0 * d1 - d2) * scale;
            }
        } else if self.interior.len() == 5 {
            let c = self.interior;
            for i in w..n - w {
                let s1 = line[i + 1] + line[i - 1];
                let s2 = line[i + 2] + line[i - 2];
                out[i] = (c[1] * s1 + c[0] * s2 + c[2] * line[i]) * scale;
            }
        } else {
            let c = self.interior;
            for i in w..n - w {
                out[i] = (c[0] * (line[i + 1] + line[i - 1]) + c[1] * line[i]) * scale;
            }
        }
        for i in (0..w).chain(n - w..n) {
            out[i] = self.boundary_value(line, i, n) * scale;
        }
    }

    fn boundary_value(&self, line: &[f64], i: usize, n: usize) -> f64 {
        let (start, r, sign) = self.row(i, n);
        let m = r.len();
        let mut acc = 0.0;
        if self.reversed(i, n) {
            for (k, c) in r.iter().enumerate() {
                acc += c * line[start + m - 1 - k];
            }
        } else {
            for (k, c) in r.iter().enumerate() {
                acc += c * line[start + k];
            }
        }
        sign * acc
    }
}

fn apply_axis(f: &ScalarField, axis: Axis, stencil: &Stencil) -> ScalarField {
    let g = *f.grid();
    let n = g.n();
    let h = g.spacing();
    let src = f.values();
    let mut out = vec![0.0; g.len()];
    let run = |line: &[f64], o: &mut [f64]| stencil.apply_line(line, o, h);
    match axis {
        Axis::X => {
            for (line, o) in src.chunks_exact(n).zip(out.chunks_exact_mut(n)) {
                run(line, o);
            }
        }
        Axis::Y => {
            let mut line = vec![0.0; n];
            let mut o = vec![0.0; n];
            for i in 0..n {
                for j in 0..n {
                    line[j] = src[j * n + i];
                }
                run(&line, &mut o);
                for j in 0..n {
                    out[j * n + i] = o[j];
                }
            }
        }
    }
    ScalarField { grid: g, values: out }
}

/// Fourth-order first derivative along `axis`, one-sided within two nodes
/// of the boundary.
pub fn derivative(f: &ScalarField, axis: Axis) -> ScalarField {
    apply_axis(f, axis, &D1)
}

/// Fourth-order second derivative along `axis`.
pub fn second_derivative(f: &ScalarField, axis: Axis) -> ScalarField {
    apply_axis(f, axis, &D2)
}

pub fn gradient(f: &ScalarField) -> VectorField {
    VectorField {
        x: derivative(f, Axis::X),
        y: derivative(f, Axis::Y),
    }
}

/// Divergence `d_i v_i` with the fourth-order stencils.
pub fn divergence(v: &VectorField) -> ScalarField {
    derivative(&v.x, Axis::X).add(&derivative(&v.y, Axis::Y))
}

/// Fourth-order Hessian `d_i d_j f`.
pub fn hessian(f: &ScalarField) -> SymTensorField {
    SymTensorField {
        xx: second_derivative(f, Axis::X),
        xy: derivative(&derivative(f, Axis::X), Axis::Y),
        yy: second_derivative(f, Axis::Y),
    }
}

/// Fourth-order Laplacian (trace of [`hessian`]).
pub fn laplacian4(f: &ScalarField) -> ScalarField {
    second_derivative(f, Axis::X).add(&second_derivative(f, Axis::Y))
}

/// Second-order five-point Laplacian. Interior rows coincide with the matrix
/// inverted by the elliptic solvers; boundary rows use one-sided
/// second-order differences so that quadratics are differentiated exactly.
pub fn laplacian(f: &ScalarField) -> ScalarField {
    apply_axis(f, Axis::X, &D2_LOW).add(&apply_axis(f, Axis::Y, &D2_LOW))
}

/// Trapezoidal quadrature over the grid.
pub fn integrate(f: &ScalarField) -> f64 {
    let g = f.grid();
    let n = g.n();
    let v = f.values();
    let mut total = 0.0;
    for j in 0..n {
        let row = &v[j * n..(j + 1) * n];
        let mut s = 0.5 * (row[0] + row[n - 1]);
        s += row[1..n - 1].iter().sum::<f64>();
        let wj = if j == 0 || j == n - 1 { 0.5 } else { 1.0 };
        total += wj * s;
    }
    total * g.spacing() * g.spacing()
}

/// Discrete `L^p` norm.
pub fn lp_norm(f: &ScalarField, p: f64) -> f64 {
    if p == 2.0 {
        integrate(&f.map(|v| v * v)).sqrt()
    } else {
        integrate(&f.map(|v| v.abs().powf(p))).powf(1.0 / p)
    }
}

/// `<x> = sqrt(1 + |x|^2)`
pub fn japanese_bracket(grid: GridSpec) -> ScalarField {
    ScalarField::from_fn(grid, |x, y| (1.0 + x * x + y * y).sqrt())
}

/// All partial derivatives `d^beta f` with `|beta| <= m`, paired with `|beta|`.
/// Pure second derivatives use the direct fourth-order stencil; mixed and
/// higher ones compose first and second derivatives.
pub fn partials(f: &ScalarField, m: usize) -> Result<Vec<(usize, ScalarField)>, GridError> {
    if m > 3 {
        return Err(GridError::UnsupportedOrder(m));
    }
    let mut out = vec![(0, f.clone())];
    if m >= 1 {
        let fx = derivative(f, Axis::X);
        let fy = derivative(f, Axis::Y);
        if m >= 2 {
            let fxx = second_derivative(f, Axis::X);
            let fyy = second_derivative(f, Axis::Y);
            let fxy = derivative(&fx, Axis::Y);
            if m >= 3 {
                out.push((3, derivative(&fxx, Axis::X)));
                out.push((3, derivative(&fxx, Axis::Y)));
                out.push((3, derivative(&fyy, Axis::X)));
                out.push((3, derivative(&fyy, Axis::Y)));
            }
            out.push((2, fxx));
            out.push((2, fxy));
            out.push((2, fyy));
        }
        out.push((1, fx));
        out.push((1, fy));
    }
    out.sort_by_key(|(order, _)| *order);
    Ok(out)
}

/// Weighted Sobolev norm `sum_{|beta|<=m} || <x>^{delta+|beta|} d^beta f ||_{L^p}`.
pub fn weighted_norm(f: &ScalarField, w: WeightSpec) -> Result<f64, GridError> {
    if !(w.p > 1.0 && w.p.is_finite()) {
        return Err(GridError::InvalidExponent(w.p));
    }
    let bracket = japanese_bracket(*f.grid());
    let mut total = 0.0;
    for (order, d) in partials(f, w.m)? {
        let e = w.delta + order as f64;
        let weighted = d.zip_map(&bracket, |v, b| v * b.powf(e));
        total += lp_norm(&weighted, w.p);
    }
    Ok(total)
}

/// Unweighted Sobolev norm `sum_{|beta|<=m} || d^beta f ||_{L^p}`.
pub fn sobolev_norm(f: &ScalarField, m: usize, p: f64) -> Result<f64, GridError> {
    if !(p > 1.0 && p.is_finite()) {
        return Err(GridError::InvalidExponent(p));
    }
    Ok(partials(f, m)?.iter().map(|(_, d)| lp_norm(d, p)).sum())
}

/// Weighted norm of a vector field, summed over components.
pub fn weighted_norm_vector(v: &VectorField, w: WeightSpec) -> Result<f64, GridError> {
    Ok(weighted_norm(&v.x, w)? + weighted_norm(&v.y, w)?)
}

/// Weighted norm of a symmetric tensor, summed over `i, j` (the off-diagonal
/// component counts twice).
pub fn weighted_norm_tensor(t: &SymTensorField, w: WeightSpec) -> Result<f64, GridError> {
    Ok(weighted_norm(&t.xx, w)? + 2.0 * weighted_norm(&t.xy, w)? + weighted_norm(&t.yy, w)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid() -> GridSpec {
        GridSpec::new(2.0, 33).unwrap()
    }

    #[test]
    fn rejects_bad_sizes() {
        assert_eq!(GridSpec::new(1.0, 32), Err(GridError::InvalidSize(32)));
        assert_eq!(GridSpec::new(1.0, 31), Err(GridError::InvalidSize(31)));
        assert!(matches!(GridSpec::new(-1.0, 33), Err(GridError::InvalidHalfWidth(_))));
    }

    #[test]
    fn coordinates_are_symmetric() {
        let g = grid();
        for i in 0..g.n() {
            assert_eq!(g.coord(i), -g.coord(g.n() - 1 - i));
        }
        assert_eq!(g.coord(0), -2.0);
        assert_eq!(g.coord(g.n() - 1), 2.0);
    }

    #[test]
    fn stencils_exact_on_quartics() {
        let g = grid();
        let f = ScalarField::from_fn(g, |x, y| x.powi(4) - 2.0 * x * x * y + y.powi(3) + 0.5 * x);
        let fx = derivative(&f, Axis::X);
        let fyy = second_derivative(&f, Axis::Y);
        let fxx = second_derivative(&f, Axis::X);
        for k in 0..g.len() {
            let (x, y) = g.point(k);
            assert!((fx.values()[k] - (4.0 * x.powi(3) - 4.0 * x * y + 0.5)).abs() < 1e-10);
            assert!((fyy.values()[k] - 6.0 * y).abs() < 1e-9);
            assert!((fxx.values()[k] - (12.0 * x * x - 4.0 * y)).abs() < 1e-9);
        }
    }

    #[test]
    fn five_point_laplacian_of_quadratic() {
        let g = grid();
        let f = ScalarField::from_fn(g, |x, y| x * x + y * y);
        let l = laplacian(&f);
        assert!(l.values().iter().all(|v| (v - 4.0).abs() < 1e-10));
    }

    #[test]
    fn integrate_constant() {
        let g = grid();
        assert!((integrate(&ScalarField::constant(g, 1.0)) - 16.0).abs() < 1e-12);
    }

    #[test]
    fn weighted_norm_of_constant() {
        let g = grid();
        let f = ScalarField::constant(g, 2.0);
        let w = WeightSpec { m: 1, p: 2.0, delta: 0.0 };
        assert!((weighted_norm(&f, w).unwrap() - 8.0).abs() < 1e-10);
        assert!(weighted_norm(&f, WeightSpec { m: 4, p: 2.0, delta: 0.0 }).is_err());
        assert!(weighted_norm(&f, WeightSpec { m: 1, p: 1.0, delta: 0.0 }).is_err());
    }
}
