//! Nonnegative self-adjoint operators with a cached eigensystem orthonormal
//! in `<u, v>_mu = sum_x u(x) conj(v(x)) mu(x)`, and their functional calculus.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;

use crate::error::{invalid, Error, Result};
use crate::quadrature::{self, Rule};
use crate::space::{Boundary, Geometry, Space};
use crate::strichartz::lq_norm;
use crate::State;

/// Largest point count for dense eigendecomposition and kernel matrices.
pub const DENSE_CAP: usize = 4096;
/// Default relative clamp: eigenvalues below `tol * lambda_max` are set to zero.
pub const DEFAULT_CLAMP: f64 = 1e-10;
/// Eigenvalues at or below this value span `N(H)`.
pub const KERNEL_TOL: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Builder {
    TorusLaplacianAnalytic,
    IntervalLaplacianAnalytic,
    GraphLaplacianDense,
    DivergenceFormDense,
}

/// Scalar coefficient `a(x) > 0` of `-div(a grad)`, evaluated at edge midpoints.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum CoefficientField {
    Constant(f64),
    /// `mean + amplitude * cos(2 pi wavenumber x_0 / extent)`.
    Cosine {
        mean: f64,
        amplitude: f64,
        wavenumber: f64,
    },
}

impl CoefficientField {
    pub fn eval(&self, x0: f64, extent: f64) -> f64 {
        match *self {
            CoefficientField::Constant(c) => c,
            CoefficientField::Cosine {
                mean,
                amplitude,
                wavenumber,
            } => mean + amplitude * libm::cos(2.0 * PI * wavenumber * x0 / extent),
        }
    }

    fn lower_bound(&self) -> f64 {
        match *self {
            CoefficientField::Constant(c) => c,
            CoefficientField::Cosine {
                mean, amplitude, ..
            } => mean - amplitude.abs(),
        }
    }
}

#[derive(Clone, Debug)]
struct TensorBasis {
    d: usize,
    n: usize,
    // 1D eigenvalues per axis mode index.
    axis_values: Vec<f64>,
    // Row-major n x n: axis_modes[i * n + k] = phi_k(i), orthonormal with weight h.
    axis_modes: Vec<f64>,
}

#[derive(Clone, Debug)]
enum Basis {
    // Columns are mu-orthonormal modes.
    Dense(DMatrix<f64>),
    Tensor(TensorBasis),
}

/// Read-only view of a separable eigenbasis on a uniform grid.
pub struct TensorView<'a> {
    pub d: usize,
    pub n: usize,
    pub axis_values: &'a [f64],
    /// Row-major `n x n`, entry `[i * n + k]` is axis mode `k` at grid index `i`.
    pub axis_modes: &'a [f64],
}

#[derive(Clone, Debug)]
pub struct SelfAdjointOperator {
    space: Space,
    builder: Builder,
    basis: Basis,
    // Eigenvalue of each basis column, in basis order.
    raw_values: Vec<f64>,
    // Ascending position -> basis column.
    order: Vec<usize>,
    sorted: Vec<f64>,
}

/// `psi_{m,n}(x) = x^m e^{-n x}`, with `psi_{0,n}(0) = 1`.
pub fn psi(m: u32, n: f64, x: f64) -> f64 {
    if m == 0 {
        libm::exp(-n * x)
    } else if x == 0.0 {
        0.0
    } else {
        libm::pow(x, m as f64) * libm::exp(-n * x)
    }
}

/// `c_{m,n} = Gamma(m) / n^m = int_0^inf psi_{m,n}(u) du/u`.
pub fn c_constant(m: u32, n: f64) -> Result<f64> {
    if m == 0 {
        return Err(invalid("c_{m,n} diverges for m = 0"));
    }
    if !(n > 0.0) {
        return Err(invalid("n must be positive"));
    }
    Ok(libm::tgamma(m as f64) / libm::pow(n, m as f64))
}

/// `int_x^inf psi_{m,n}(u) du/u = Gamma(m, n x) / n^m` for integer `m >= 1`.
pub fn psi_tail_integral(m: u32, n: f64, x: f64) -> f64 {
    let y = n * x;
    let mut term = 1.0;
    let mut sum = 1.0;
    for k in 1..m {
        term *= y / k as f64;
        sum += term;
    }
    libm::tgamma(m as f64) * libm::exp(-y) * sum / libm::pow(n, m as f64)
}

fn axis_torus(n: usize, period: f64) -> (Vec<f64>, Vec<f64>) {
    let h = period / n as f64;
    let mut values = vec![0.0; n];
    let mut modes = vec![0.0; n * n];
    let c0 = 1.0 / libm::sqrt(period);
    let c1 = libm::sqrt(2.0 / period);
    for i in 0..n {
        modes[i * n] = c0;
    }
    let mut k = 1;
    for j in 1..n.div_ceil(2) {
        let lam = 4.0 / (h * h) * libm::pow(libm::sin(PI * j as f64 / n as f64), 2.0);
        values[k] = lam;
        values[k + 1] = lam;
        for i in 0..n {
            // Reduce the phase index exactly before scaling.
            let ph = 2.0 * PI * ((i * j) % n) as f64 / n as f64;
            modes[i * n + k] = c1 * libm::cos(ph);
            modes[i * n + k + 1] = c1 * libm::sin(ph);
        }
        k += 2;
    }
    if n % 2 == 0 {
        values[k] = 4.0 / (h * h);
        for i in 0..n {
            modes[i * n + k] = if i % 2 == 0 { c0 } else { -c0 };
        }
    }
    (values, modes)
}

fn axis_interval(n: usize, length: f64, bc: Boundary) -> (Vec<f64>, Vec<f64>) {
    let mut values = vec![0.0; n];
    let mut modes = vec![0.0; n * n];
    match bc {
        Boundary::Dirichlet => {
            let h = length / (n + 1) as f64;
            let c = libm::sqrt(2.0 / length);
            for k in 0..n {
                let kk = (k + 1) as f64;
                values[k] =
                    4.0 / (h * h) * libm::pow(libm::sin(PI * kk / (2.0 * (n + 1) as f64)), 2.0);
                for i in 0..n {
                    modes[i * n + k] = c * libm::sin(PI * kk * (i + 1) as f64 / (n + 1) as f64);
                }
            }
        }
        Boundary::Neumann => {
            let h = length / n as f64;
            for k in 0..n {
                values[k] =
                    4.0 / (h * h) * libm::pow(libm::sin(PI * k as f64 / (2.0 * n as f64)), 2.0);
                let c = if k == 0 {
                    1.0 / libm::sqrt(length)
                } else {
                    libm::sqrt(2.0 / length)
                };
                for i in 0..n {
                    modes[i * n + k] = c * libm::cos(PI * k as f64 * (i as f64 + 0.5) / n as f64);
                }
            }
        }
    }
    (values, modes)
}

fn ascending(values: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
    order
}

impl SelfAdjointOperator {
    /// Standard nearest-neighbor Laplacian on a torus grid with analytic modes.
    pub fn torus_laplacian(space: &Space) -> Result<Self> {
        let period = space
            .period()
            .ok_or_else(|| invalid("torus builder needs a torus grid"))?;
        let (n, d) = (space.n_per_axis(), space.dim());
        let (axis_values, axis_modes) = axis_torus(n, period);
        Ok(Self::from_tensor(
            space,
            Builder::TorusLaplacianAnalytic,
            d,
            n,
            axis_values,
            axis_modes,
        ))
    }

    /// Three-point Laplacian on an interval grid with the recorded boundary condition.
    pub fn interval_laplacian(space: &Space) -> Result<Self> {
        let length = space
            .length()
            .ok_or_else(|| invalid("interval builder needs an interval grid"))?;
        let bc = space.boundary().unwrap();
        let n = space.n_per_axis();
        let (axis_values, axis_modes) = axis_interval(n, length, bc);
        Ok(Self::from_tensor(
            space,
            Builder::IntervalLaplacianAnalytic,
            1,
            n,
            axis_values,
            axis_modes,
        ))
    }

    fn from_tensor(
        space: &Space,
        builder: Builder,
        d: usize,
        n: usize,
        axis_values: Vec<f64>,
        axis_modes: Vec<f64>,
    ) -> Self {
        let count = n.pow(d as u32);
        let mut raw_values = vec![0.0; count];
        for (idx, slot) in raw_values.iter_mut().enumerate() {
            let mut rem = idx;
            let mut s = 0.0;
            for _ in 0..d {
                s += axis_values[rem % n];
                rem /= n;
            }
            *slot = s;
        }
        let order = ascending(&raw_values);
        let sorted = order.iter().map(|&i| raw_values[i]).collect();
        SelfAdjointOperator {
            space: space.clone(),
            builder,
            basis: Basis::Tensor(TensorBasis {
                d,
                n,
                axis_values,
                axis_modes,
            }),
            raw_values,
            order,
            sorted,
        }
    }

    /// Weighted graph Laplacian `(Hv)(x) = mu(x)^{-1} sum_{y~x} c_xy (v(x) - v(y))`
    /// with `c_xy = (mu_x + mu_y) / (2 len_xy^2)`.
    pub fn graph_laplacian(space: &Space, clamp: f64) -> Result<Self> {
        let n = space.point_count();
        if n > DENSE_CAP {
            return Err(Error::DenseCapExceeded {
                points: n,
                cap: DENSE_CAP,
            });
        }
        let edges: Vec<(usize, usize, f64)> = match space.geometry() {
            Geometry::GeneralGraph => space
                .edges()
                .iter()
                .map(|&(a, b)| {
                    let len = space.dist(a, b).min(euclid_coords(space, a, b));
                    let c = 0.5 * (space.weight(a) + space.weight(b)) / (len * len);
                    (a, b, c)
                })
                .collect(),
            _ => grid_edges(space, &CoefficientField::Constant(1.0)),
        };
        Self::from_conductances(space, Builder::GraphLaplacianDense, &edges, &[], clamp)
    }

    /// `-div(a grad)` on a torus or interval grid; Dirichlet ends couple to a zero ghost value.
    pub fn divergence_form(space: &Space, field: &CoefficientField, clamp: f64) -> Result<Self> {
        if space.geometry() == Geometry::GeneralGraph {
            return Err(invalid("divergence form needs a grid space"));
        }
        if !(field.lower_bound() > 0.0) {
            return Err(invalid(
                "coefficient field must be bounded below by a positive constant",
            ));
        }
        let n = space.point_count();
        if n > DENSE_CAP {
            return Err(Error::DenseCapExceeded {
                points: n,
                cap: DENSE_CAP,
            });
        }
        let edges = grid_edges(space, field);
        let mut ghosts = Vec::new();
        if space.boundary() == Some(Boundary::Dirichlet) {
            let h = space.spacing();
            let l = space.length().unwrap();
            let last = space.n_per_axis() - 1;
            ghosts.push((0, field.eval(0.5 * h, l) * h / (h * h)));
            ghosts.push((last, field.eval(l - 0.5 * h, l) * h / (h * h)));
        }
        Self::from_conductances(space, Builder::DivergenceFormDense, &edges, &ghosts, clamp)
    }

    fn from_conductances(
        space: &Space,
        builder: Builder,
        edges: &[(usize, usize, f64)],
        ghosts: &[(usize, f64)],
        clamp: f64,
    ) -> Result<Self> {
        if !(0.0..1e-3).contains(&clamp) {
            return Err(invalid("clamping tolerance must lie in [0, 1e-3)"));
        }
        let n = space.point_count();
        let mut lap = DMatrix::<f64>::zeros(n, n);
        for &(a, b, c) in edges {
            lap[(a, a)] += c;
            lap[(b, b)] += c;
            lap[(a, b)] -= c;
            lap[(b, a)] -= c;
        }
        for &(a, c) in ghosts {
            lap[(a, a)] += c;
        }
        let isw: Vec<f64> = space
            .weights()
            .iter()
            .map(|w| 1.0 / libm::sqrt(*w))
            .collect();
        let sym = DMatrix::from_fn(n, n, |i, j| isw[i] * lap[(i, j)] * isw[j]);
        let eig = SymmetricEigen::new(sym);
        let lmax = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
        let raw_values: Vec<f64> = eig
            .eigenvalues
            .iter()
            .map(|&l| if l < clamp * lmax { 0.0 } else { l })
            .collect();
        let mut modes = eig.eigenvectors;
        for i in 0..n {
            for k in 0..n {
                modes[(i, k)] *= isw[i];
            }
        }
        // Fix each mode's sign so the largest-magnitude entry is positive.
        for k in 0..n {
            let mut best = 0;
            for i in 1..n {
                if modes[(i, k)].abs() > modes[(best, k)].abs() + 1e-14 {
                    best = i;
                }
            }
            if modes[(best, k)] < 0.0 {
                for i in 0..n {
                    modes[(i, k)] = -modes[(i, k)];
                }
            }
        }
        let order = ascending(&raw_values);
        let sorted = order.iter().map(|&i| raw_values[i]).collect();
        Ok(SelfAdjointOperator {
            space: space.clone(),
            builder,
            basis: Basis::Dense(modes),
            raw_values,
            order,
            sorted,
        })
    }

    pub fn space(&self) -> &Space {
        &self.space
    }

    pub fn builder(&self) -> Builder {
        self.builder
    }

    /// Eigenvalues in ascending order.
    pub fn eigenvalues(&self) -> &[f64] {
        &self.sorted
    }

    pub fn lambda_max(&self) -> f64 {
        *self.sorted.last().unwrap()
    }

    /// Smallest eigenvalue above the kernel tolerance.
    pub fn lambda_min_positive(&self) -> Option<f64> {
        self.sorted.iter().cloned().find(|&l| l > KERNEL_TOL)
    }

    pub fn tensor_view(&self) -> Option<TensorView<'_>> {
        match &self.basis {
            Basis::Tensor(t) => Some(TensorView {
                d: t.d,
                n: t.n,
                axis_values: &t.axis_values,
                axis_modes: &t.axis_modes,
            }),
            Basis::Dense(_) => None,
        }
    }

    /// Eigenvalues in basis order, matching [`Self::raw_coefficients`].
    pub fn raw_eigenvalues(&self) -> &[f64] {
        &self.raw_values
    }

    /// The `k`-th mode in ascending eigenvalue order.
    pub fn mode(&self, k: usize) -> Vec<f64> {
        let col = self.order[k];
        match &self.basis {
            Basis::Dense(m) => m.column(col).iter().cloned().collect(),
            Basis::Tensor(t) => {
                let count = self.space.point_count();
                let mut ks = [0usize; 3];
                let mut rem = col;
                for slot in ks.iter_mut().take(t.d) {
                    *slot = rem % t.n;
                    rem /= t.n;
                }
                (0..count)
                    .map(|x| {
                        let g = self.space.grid_index(x);
                        (0..t.d).map(|a| t.axis_modes[g[a] * t.n + ks[a]]).product()
                    })
                    .collect()
            }
        }
    }

    /// `<u, v>_mu`, conjugate-linear in `v`.
    pub fn inner(&self, u: &[Complex64], v: &[Complex64]) -> Complex64 {
        u.iter()
            .zip(v)
            .zip(self.space.weights())
            .map(|((a, b), w)| a * b.conj() * *w)
            .sum()
    }

    pub fn norm(&self, v: &[Complex64]) -> f64 {
        libm::sqrt(
            v.iter()
                .zip(self.space.weights())
                .map(|(a, w)| a.norm_sqr() * w)
                .sum(),
        )
    }

    /// `<v, phi_k>_mu` for every basis column, in basis order.
    pub fn raw_coefficients(&self, v: &[Complex64]) -> State {
        match &self.basis {
            Basis::Dense(m) => {
                let w = self.space.weights();
                (0..m.ncols())
                    .map(|k| {
                        let col = m.column(k);
                        v.iter()
                            .zip(col.iter())
                            .zip(w)
                            .map(|((a, p), w)| a * (p * w))
                            .sum()
                    })
                    .collect()
            }
            Basis::Tensor(t) => {
                let h = self.space.weight(0);
                let mut out = tensor_transform(t, v, true);
                for c in out.iter_mut() {
                    *c *= h;
                }
                out
            }
        }
    }

    /// `sum_k c_k phi_k` with coefficients in basis order.
    pub fn raw_synthesize(&self, c: &[Complex64]) -> State {
        match &self.basis {
            Basis::Dense(m) => {
                let mut out = vec![Complex64::new(0.0, 0.0); m.nrows()];
                for (k, ck) in c.iter().enumerate() {
                    if *ck == Complex64::new(0.0, 0.0) {
                        continue;
                    }
                    for (o, p) in out.iter_mut().zip(m.column(k).iter()) {
                        *o += ck * p;
                    }
                }
                out
            }
            Basis::Tensor(t) => tensor_transform(t, c, false),
        }
    }

    /// Spectral coefficients in ascending eigenvalue order.
    pub fn coefficients(&self, v: &[Complex64]) -> State {
        let raw = self.raw_coefficients(v);
        self.order.iter().map(|&i| raw[i]).collect()
    }

    /// Inverse of [`Self::coefficients`].
    pub fn synthesize(&self, c: &[Complex64]) -> State {
        let mut raw = vec![Complex64::new(0.0, 0.0); c.len()];
        for (pos, &i) in self.order.iter().enumerate() {
            raw[i] = c[pos];
        }
        self.raw_synthesize(&raw)
    }

    /// `max_k |f(lambda_k)|`, or the offending eigenvalue when `f` is not finite there.
    pub fn sup_on_spectrum<F: Fn(f64) -> Complex64>(&self, f: F) -> Result<f64> {
        let mut m: f64 = 0.0;
        for &l in &self.sorted {
            let v = f(l);
            if !(v.re.is_finite() && v.im.is_finite()) {
                return Err(Error::NonFinite { eigenvalue: l });
            }
            m = m.max(v.norm());
        }
        Ok(m)
    }

    /// `f(H) v = sum_k f(lambda_k) <v, phi_k>_mu phi_k`.
    pub fn apply<F: Fn(f64) -> Complex64>(&self, f: F, v: &[Complex64]) -> Result<State> {
        let mut c = self.raw_coefficients(v);
        for (ck, &l) in c.iter_mut().zip(&self.raw_values) {
            let m = f(l);
            if !(m.re.is_finite() && m.im.is_finite()) {
                return Err(Error::NonFinite { eigenvalue: l });
            }
            *ck *= m;
        }
        Ok(self.raw_synthesize(&c))
    }

    /// Real multiplier acting on a real state.
    pub fn apply_real<F: Fn(f64) -> f64>(&self, f: F, v: &[f64]) -> Result<Vec<f64>> {
        let out = self.apply(|l| Complex64::new(f(l), 0.0), &to_complex(v))?;
        Ok(out.into_iter().map(|c| c.re).collect())
    }

    pub fn heat(&self, t: f64, v: &[Complex64]) -> Result<State> {
        if !(t >= 0.0) {
            return Err(invalid("heat time must be nonnegative"));
        }
        self.apply(|l| Complex64::new(libm::exp(-t * l), 0.0), v)
    }

    pub fn schrodinger(&self, t: f64, v: &[Complex64]) -> Result<State> {
        self.apply(|l| Complex64::from_polar(1.0, t * l), v)
    }

    /// `e^{-zH} v` for `Re z >= 0`.
    pub fn complex_semigroup(&self, z: Complex64, v: &[Complex64]) -> Result<State> {
        if !(z.re >= 0.0) {
            return Err(invalid("complex time needs Re z >= 0"));
        }
        self.apply(|l| (-z * l).exp(), v)
    }

    pub fn wave_cos(&self, t: f64, v: &[Complex64]) -> Result<State> {
        if !(t >= 0.0) {
            return Err(invalid("wave time must be nonnegative"));
        }
        self.apply(|l| Complex64::new(libm::cos(t * libm::sqrt(l)), 0.0), v)
    }

    pub fn wave_sin(&self, t: f64, v: &[Complex64]) -> Result<State> {
        if !(t >= 0.0) {
            return Err(invalid("wave time must be nonnegative"));
        }
        self.apply(|l| Complex64::new(libm::sin(t * libm::sqrt(l)), 0.0), v)
    }

    /// `phi_k(x)` for every basis column, in basis order.
    pub fn raw_mode_values_at(&self, x: usize) -> Vec<f64> {
        match &self.basis {
            Basis::Dense(m) => m.row(x).iter().cloned().collect(),
            Basis::Tensor(t) => {
                let g = self.space.grid_index(x);
                let count = self.raw_values.len();
                (0..count)
                    .map(|k| {
                        let mut rem = k;
                        let mut p = 1.0;
                        for &ga in g.iter().take(t.d) {
                            p *= t.axis_modes[ga * t.n + rem % t.n];
                            rem /= t.n;
                        }
                        p
                    })
                    .collect()
            }
        }
    }

    /// Column `K(., y)` of the kernel of `f(H)`.
    pub fn kernel_column<F: Fn(f64) -> Complex64>(&self, f: F, y: usize) -> Result<State> {
        let phi = self.raw_mode_values_at(y);
        let mut c = Vec::with_capacity(phi.len());
        for (p, &l) in phi.iter().zip(&self.raw_values) {
            let m = f(l);
            if !(m.re.is_finite() && m.im.is_finite()) {
                return Err(Error::NonFinite { eigenvalue: l });
            }
            c.push(m * *p);
        }
        Ok(self.raw_synthesize(&c))
    }

    /// Single kernel entry `K(x, y) = sum_k f(lambda_k) phi_k(x) phi_k(y)`.
    pub fn kernel_entry<F: Fn(f64) -> Complex64>(&self, f: F, x: usize, y: usize) -> Complex64 {
        let (px, py) = (self.raw_mode_values_at(x), self.raw_mode_values_at(y));
        px.iter()
            .zip(&py)
            .zip(&self.raw_values)
            .map(|((a, b), &l)| f(l) * (a * b))
            .sum()
    }

    /// `K(x, y)` with `(f(H) v)(x) = sum_y K(x, y) v(y) mu(y)`.
    pub fn kernel_matrix<F: Fn(f64) -> Complex64>(&self, f: F) -> Result<DMatrix<Complex64>> {
        let n = self.space.point_count();
        if n > DENSE_CAP {
            return Err(Error::DenseCapExceeded {
                points: n,
                cap: DENSE_CAP,
            });
        }
        let phi = self.dense_modes();
        let mut fl = Vec::with_capacity(n);
        for &l in &self.raw_values {
            let m = f(l);
            if !(m.re.is_finite() && m.im.is_finite()) {
                return Err(Error::NonFinite { eigenvalue: l });
            }
            fl.push(m);
        }
        let mut k = DMatrix::<Complex64>::zeros(n, n);
        for y in 0..n {
            for x in 0..n {
                let mut s = Complex64::new(0.0, 0.0);
                for (j, fj) in fl.iter().enumerate() {
                    s += fj * (phi[(x, j)] * phi[(y, j)]);
                }
                k[(x, y)] = s;
            }
        }
        Ok(k)
    }

    fn dense_modes(&self) -> DMatrix<f64> {
        match &self.basis {
            Basis::Dense(m) => m.clone(),
            Basis::Tensor(t) => {
                let count = self.space.point_count();
                DMatrix::from_fn(count, count, |x, k| {
                    let g = self.space.grid_index(x);
                    let mut rem = k;
                    let mut p = 1.0;
                    for &ga in g.iter().take(t.d) {
                        p *= t.axis_modes[ga * t.n + rem % t.n];
                        rem /= t.n;
                    }
                    p
                })
            }
        }
    }

    /// `P_{N(H)} v`, projection on modes with `lambda <= KERNEL_TOL`.
    pub fn kernel_projector(&self, v: &[Complex64]) -> State {
        self.apply(
            |l| Complex64::new(if l <= KERNEL_TOL { 1.0 } else { 0.0 }, 0.0),
            v,
        )
        .expect("indicator is finite")
    }

    /// `max_{lambda_k > 0} |kappa int psi_{m,n}(s lambda_k) ds/s - 1|` with `kappa = 1/c_{m,n}`.
    ///
    /// The default window is `[1e-6/lambda_max, 1e6/lambda_min+]`; it is widened by a decade
    /// at each end while the residual exceeds `1e-6`, up to four times.
    pub fn reproducing_residual(
        &self,
        m: u32,
        n: f64,
        points_per_decade: usize,
    ) -> Result<ResidualReport> {
        let kappa = 1.0 / c_constant(m, n)?;
        let lmin = self
            .lambda_min_positive()
            .ok_or_else(|| invalid("operator has no positive spectrum"))?;
        let lmax = self.lambda_max();
        let mut lo = 1e-6 / lmax;
        let mut hi = 1e6 / lmin;
        let mut widenings = 0;
        loop {
            let rule = quadrature::log_uniform(lo, hi, points_per_decade)?;
            let residual = reproducing_residual_on(&self.sorted, m, n, kappa, &rule);
            if residual <= 1e-6 || widenings == 4 {
                return Ok(ResidualReport {
                    residual,
                    kappa,
                    window: (lo, hi),
                    widenings,
                });
            }
            lo /= 10.0;
            hi *= 10.0;
            widenings += 1;
        }
    }

    /// `||(1 + H)^{s/2} v||_{L^2(mu)}`.
    pub fn sobolev_norm(&self, s: f64, v: &[Complex64]) -> f64 {
        let c = self.raw_coefficients(v);
        libm::sqrt(
            c.iter()
                .zip(&self.raw_values)
                .map(|(ck, &l)| ck.norm_sqr() * libm::pow(1.0 + l, s))
                .sum(),
        )
    }

    /// `(||phi(H) v||_q, (int_0^1 ||psi_{m,n}(uH) v||_q^2 du/u)^{1/2})` with
    /// `phi(lambda) = int_lambda^inf psi_{m,n}(u) du/u`, integrated by `u_rule` on `(0, 1]`.
    pub fn square_function_norm(
        &self,
        m: u32,
        n: f64,
        q: f64,
        v: &[Complex64],
        u_rule: &Rule,
    ) -> Result<(f64, f64)> {
        if m < 2 {
            return Err(invalid("square function needs m >= 2"));
        }
        if u_rule.nodes.iter().any(|&u| !(u > 0.0 && u <= 1.0 + 1e-12)) {
            return Err(invalid("u grid must lie in (0, 1]"));
        }
        let c = self.raw_coefficients(v);
        let head = {
            let mut cc = c.clone();
            for (ck, &l) in cc.iter_mut().zip(&self.raw_values) {
                *ck *= psi_tail_integral(m, n, l);
            }
            lq_norm(&self.space, &self.raw_synthesize(&cc), q)
        };
        let mut acc = 0.0;
        for (&u, &w) in u_rule.nodes.iter().zip(&u_rule.weights) {
            let mut cc = c.clone();
            for (ck, &l) in cc.iter_mut().zip(&self.raw_values) {
                *ck *= psi(m, n, u * l);
            }
            let nq = lq_norm(&self.space, &self.raw_synthesize(&cc), q);
            acc += w * nq * nq;
        }
        Ok((head, libm::sqrt(acc)))
    }
}

#[derive(Clone, Copy, Debug)]
pub struct ResidualReport {
    pub residual: f64,
    pub kappa: f64,
    pub window: (f64, f64),
    /// Number of one-decade widenings applied; nonzero means the default window was too narrow.
    pub widenings: u32,
}

/// Reproducing residual over an explicit spectrum and scale rule.
pub fn reproducing_residual_on(spectrum: &[f64], m: u32, n: f64, kappa: f64, rule: &Rule) -> f64 {
    spectrum
        .iter()
        .filter(|&&l| l > KERNEL_TOL)
        .map(|&l| (kappa * rule.integrate(|s| psi(m, n, s * l)) - 1.0).abs())
        .fold(0.0, f64::max)
}

pub fn to_complex(v: &[f64]) -> State {
    v.iter().map(|&x| Complex64::new(x, 0.0)).collect()
}

fn euclid_coords(space: &Space, a: usize, b: usize) -> f64 {
    let (ca, cb) = (space.coords(a), space.coords(b));
    libm::sqrt(ca.iter().zip(&cb).map(|(x, y)| (x - y) * (x - y)).sum())
}

// Nearest-neighbor grid edges with conductance `a(mid) * mu_bar / h^2`.
fn grid_edges(space: &Space, field: &CoefficientField) -> Vec<(usize, usize, f64)> {
    let h = space.spacing();
    let n = space.n_per_axis();
    let mut edges = Vec::new();
    match space.geometry() {
        Geometry::TorusGrid => {
            let period = space.period().unwrap();
            for x in 0..space.point_count() {
                let g = space.grid_index(x);
                for a in 0..space.dim() {
                    let mut gi = [g[0] as i64, g[1] as i64, g[2] as i64];
                    gi[a] += 1;
                    let y = space.index_of(gi);
                    if n == 2 && y < x {
                        continue;
                    }
                    let mid0 = if a == 0 {
                        (g[0] as f64 + 0.5) * h
                    } else {
                        g[0] as f64 * h
                    };
                    let mu = 0.5 * (space.weight(x) + space.weight(y));
                    edges.push((x, y, field.eval(mid0, period) * mu / (h * h)));
                }
            }
        }
        Geometry::IntervalGrid => {
            let l = space.length().unwrap();
            for x in 0..n - 1 {
                let mid = 0.5 * (space.coords(x)[0] + space.coords(x + 1)[0]);
                let mu = 0.5 * (space.weight(x) + space.weight(x + 1));
                edges.push((x, x + 1, field.eval(mid, l) * mu / (h * h)));
            }
        }
        Geometry::GeneralGraph => {}
    }
    edges
}

// Applies the tensor basis (`forward`: transpose, analysis) axis by axis.
fn tensor_transform(t: &TensorBasis, v: &[Complex64], forward: bool) -> State {
    let n = t.n;
    let modes = &t.axis_modes;
    let mut cur = v.to_vec();
    let mut next = vec![Complex64::new(0.0, 0.0); cur.len()];
    // Forward weight of input i in output o is modes[i * n + o]; backward it is modes[o * n + i].
    for axis in 0..t.d {
        let inner = n.pow(axis as u32);
        let outer = n.pow((t.d - axis - 1) as u32);
        for b in 0..outer {
            let base = b * n * inner;
            let src = &cur[base..base + n * inner];
            let dst = &mut next[base..base + n * inner];
            dst.iter_mut().for_each(|z| *z = Complex64::new(0.0, 0.0));
            if inner == 1 {
                if forward {
                    for (i, x) in src.iter().enumerate() {
                        for (d, &m) in dst.iter_mut().zip(&modes[i * n..(i + 1) * n]) {
                            d.re += m * x.re;
                            d.im += m * x.im;
                        }
                    }
                } else {
                    for (o, d) in dst.iter_mut().enumerate() {
                        let (mut re, mut im) = (0.0, 0.0);
                        for (&m, x) in modes[o * n..(o + 1) * n].iter().zip(src) {
                            re += m * x.re;
                            im += m * x.im;
                        }
                        *d = Complex64::new(re, im);
                    }
                }
                continue;
            }
            for o in 0..n {
                let out = &mut dst[o * inner..(o + 1) * inner];
                for i in 0..n {
                    let m = if forward {
                        modes[i * n + o]
                    } else {
                        modes[o * n + i]
                    };
                    if m == 0.0 {
                        continue;
                    }
                    for (d, s) in out.iter_mut().zip(&src[i * inner..(i + 1) * inner]) {
                        d.re += m * s.re;
                        d.im += m * s.im;
                    }
                }
            }
        }
        core::mem::swap(&mut cur, &mut next);
    }
    cur
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn c(x: f64) -> Complex64 {
        Complex64::new(x, 0.0)
    }

    fn random_state(n: usize, rng: &mut ChaCha8Rng) -> State {
        (0..n)
            .map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
            .collect()
    }

    // Stencil applied directly: the independent route for the analytic modes.
    fn stencil(space: &Space, v: &[f64]) -> Vec<f64> {
        let h = space.spacing();
        (0..space.point_count())
            .map(|x| match space.geometry() {
                Geometry::TorusGrid => {
                    let g = space.grid_index(x);
                    let mut acc = 0.0;
                    for a in 0..space.dim() {
                        for s in [-1i64, 1] {
                            let mut gi = [g[0] as i64, g[1] as i64, g[2] as i64];
                            gi[a] += s;
                            acc += v[x] - v[space.index_of(gi)];
                        }
                    }
                    acc / (h * h)
                }
                _ => {
                    let n = space.n_per_axis();
                    let left = if x > 0 {
                        v[x - 1]
                    } else if space.boundary() == Some(Boundary::Neumann) {
                        v[0]
                    } else {
                        0.0
                    };
                    let right = if x + 1 < n {
                        v[x + 1]
                    } else if space.boundary() == Some(Boundary::Neumann) {
                        v[n - 1]
                    } else {
                        0.0
                    };
                    (2.0 * v[x] - left - right) / (h * h)
                }
            })
            .collect()
    }

    fn geometries() -> Vec<SelfAdjointOperator> {
        vec![
            SelfAdjointOperator::torus_laplacian(&Space::torus_grid(1, 9, 1.0).unwrap()).unwrap(),
            SelfAdjointOperator::torus_laplacian(&Space::torus_grid(1, 12, 2.0).unwrap()).unwrap(),
            SelfAdjointOperator::torus_laplacian(&Space::torus_grid(2, 6, 1.0).unwrap()).unwrap(),
            SelfAdjointOperator::torus_laplacian(&Space::torus_grid(3, 4, 1.0).unwrap()).unwrap(),
            SelfAdjointOperator::interval_laplacian(
                &Space::interval_grid(10, 1.0, Boundary::Dirichlet).unwrap(),
            )
            .unwrap(),
            SelfAdjointOperator::interval_laplacian(
                &Space::interval_grid(10, 3.0, Boundary::Neumann).unwrap(),
            )
            .unwrap(),
        ]
    }

    #[test]
    fn analytic_modes_solve_stencil() {
        for op in geometries() {
            let sp = op.space().clone();
            for k in 0..sp.point_count() {
                let phi = op.mode(k);
                let hphi = stencil(&sp, &phi);
                let lam = op.eigenvalues()[k];
                let err = hphi
                    .iter()
                    .zip(&phi)
                    .map(|(a, b)| (a - lam * b).abs())
                    .fold(0.0, f64::max);
                assert!(err < 1e-9 * (1.0 + lam), "k={k} err={err}");
            }
        }
    }

    #[test]
    fn gram_is_identity() {
        for op in geometries() {
            let sp = op.space();
            let n = sp.point_count();
            let modes: Vec<Vec<f64>> = (0..n).map(|k| op.mode(k)).collect();
            for a in 0..n {
                for b in 0..n {
                    let g: f64 = (0..n)
                        .map(|x| modes[a][x] * modes[b][x] * sp.weight(x))
                        .sum();
                    let e = if a == b { 1.0 } else { 0.0 };
                    assert!((g - e).abs() < 1e-10);
                }
            }
            let w = op.eigenvalues();
            assert!(w.windows(2).all(|p| p[0] <= p[1]));
            assert!(w[0] >= 0.0);
        }
    }

    #[test]
    fn dense_graph_matches_analytic_torus() {
        let sp = Space::torus_grid(2, 6, 1.0).unwrap();
        let analytic = SelfAdjointOperator::torus_laplacian(&sp).unwrap();
        let dense = SelfAdjointOperator::graph_laplacian(&sp, DEFAULT_CLAMP).unwrap();
        for (a, b) in analytic.eigenvalues().iter().zip(dense.eigenvalues()) {
            assert!((a - b).abs() < 1e-9 * (1.0 + a));
        }
        let div = SelfAdjointOperator::divergence_form(
            &sp,
            &CoefficientField::Constant(1.0),
            DEFAULT_CLAMP,
        )
        .unwrap();
        for (a, b) in analytic.eigenvalues().iter().zip(div.eigenvalues()) {
            assert!((a - b).abs() < 1e-9 * (1.0 + a));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let v = random_state(36, &mut rng);
        let a = analytic.heat(1e-3, &v).unwrap();
        let b = dense.heat(1e-3, &v).unwrap();
        let diff: f64 = a
            .iter()
            .zip(&b)
            .map(|(x, y)| (x - y).norm())
            .fold(0.0, f64::max);
        assert!(diff < 1e-10);
    }

    #[test]
    fn dense_interval_matches_analytic() {
        for bc in [Boundary::Dirichlet, Boundary::Neumann] {
            let sp = Space::interval_grid(12, 1.0, bc).unwrap();
            let analytic = SelfAdjointOperator::interval_laplacian(&sp).unwrap();
            let div = SelfAdjointOperator::divergence_form(
                &sp,
                &CoefficientField::Constant(1.0),
                DEFAULT_CLAMP,
            )
            .unwrap();
            for (a, b) in analytic.eigenvalues().iter().zip(div.eigenvalues()) {
                assert!((a - b).abs() < 1e-9 * (1.0 + a), "{bc:?} {a} {b}");
            }
        }
    }

    #[test]
    fn variable_coefficient_is_self_adjoint() {
        let sp = Space::torus_grid(1, 32, 1.0).unwrap();
        let field = CoefficientField::Cosine {
            mean: 1.0,
            amplitude: 0.5,
            wavenumber: 2.0,
        };
        let op = SelfAdjointOperator::divergence_form(&sp, &field, DEFAULT_CLAMP).unwrap();
        assert_eq!(op.eigenvalues()[0], 0.0);
        assert!(op.eigenvalues()[1] > 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (u, v) = (random_state(32, &mut rng), random_state(32, &mut rng));
        let hu = op.apply(c, &u).unwrap();
        let hv = op.apply(c, &v).unwrap();
        let scale = op.lambda_max() * op.norm(&u) * op.norm(&v);
        assert!((op.inner(&hu, &v) - op.inner(&u, &hv)).norm() < 1e-10 * scale);
        let bad = CoefficientField::Cosine {
            mean: 1.0,
            amplitude: 1.5,
            wavenumber: 1.0,
        };
        assert!(SelfAdjointOperator::divergence_form(&sp, &bad, DEFAULT_CLAMP).is_err());
    }

    #[test]
    fn psi_values() {
        assert!((psi(1, 1.0, 1.0) - libm::exp(-1.0)).abs() < 1e-15);
        assert_eq!(psi(2, 1.0, 0.0), 0.0);
        assert_eq!(psi(0, 3.0, 0.0), 1.0);
        assert!((psi(2, 2.0, 0.5) - 0.25 * libm::exp(-1.0)).abs() < 1e-15);
    }

    #[test]
    fn c_values() {
        assert!((c_constant(1, 1.0).unwrap() - 1.0).abs() < 1e-14);
        assert!((c_constant(2, 1.0).unwrap() - 1.0).abs() < 1e-14);
        assert!((c_constant(3, 2.0).unwrap() - 0.25).abs() < 1e-14);
        assert!(c_constant(0, 1.0).is_err());
    }

    #[test]
    fn tail_integral_matches_quadrature() {
        let rule = quadrature::composite(0.0, 60.0, 120, 8);
        for (m, n, x) in [(2u32, 1.0, 0.3), (3, 2.0, 1.7), (4, 0.5, 0.01)] {
            let q = rule.integrate(|u| if u < x { 0.0 } else { psi(m, n, u) / u });
            let sub = quadrature::composite(0.0, x, 4, 8).integrate(|u| psi(m, n, u) / u);
            let total = c_constant(m, n).unwrap();
            assert!(
                (psi_tail_integral(m, n, x) - (total - sub)).abs() < 1e-10,
                "{q}"
            );
        }
        assert!((psi_tail_integral(3, 2.0, 0.0) - 0.25).abs() < 1e-15);
    }

    #[test]
    fn diagonal_action() {
        let sp = Space::torus_grid(1, 8, 1.0).unwrap();
        let op = SelfAdjointOperator::torus_laplacian(&sp).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let v = random_state(8, &mut rng);
        let same = op.apply(|_| c(1.0), &v).unwrap();
        assert!(same.iter().zip(&v).all(|(a, b)| (a - b).norm() < 1e-12));
        let t = 1e-3;
        let hv = op.heat(t, &v).unwrap();
        let (c0, c1) = (op.coefficients(&v), op.coefficients(&hv));
        for (k, (a, b)) in c0.iter().zip(&c1).enumerate() {
            let f = libm::exp(-t * op.eigenvalues()[k]);
            assert!((a * f - b).norm() < 1e-12);
        }
    }

    #[test]
    fn propagator_identities() {
        let sp = Space::torus_grid(1, 64, 1.0).unwrap();
        let op = SelfAdjointOperator::torus_laplacian(&sp).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let v = random_state(64, &mut rng);
        let h0 = op.heat(0.0, &v).unwrap();
        assert!(h0.iter().zip(&v).all(|(a, b)| (a - b).norm() < 1e-12));
        let s = op.schrodinger(0.37, &v).unwrap();
        assert!((op.norm(&s) - op.norm(&v)).abs() < 1e-10);
        let (h2, t) = (1e-3, 0.02);
        let a = op.complex_semigroup(Complex64::new(h2, -t), &v).unwrap();
        let b = op.schrodinger(t, &op.heat(h2, &v).unwrap()).unwrap();
        assert!(a.iter().zip(&b).all(|(x, y)| (x - y).norm() < 1e-10));
        assert!(op.complex_semigroup(Complex64::new(-0.1, 0.0), &v).is_err());
        let z1 = Complex64::new(1e-4, 0.3);
        let z2 = Complex64::new(2e-4, -0.1);
        let lhs = op
            .complex_semigroup(z1, &op.complex_semigroup(z2, &v).unwrap())
            .unwrap();
        let rhs = op.complex_semigroup(z1 + z2, &v).unwrap();
        assert!(lhs.iter().zip(&rhs).all(|(x, y)| (x - y).norm() < 1e-10));
    }

    #[test]
    fn small_spectrum_scaling() {
        // Dense path on a 3-point space with spectrum {0, 1, 4}.
        let coords = vec![vec![0.0], vec![1.0], vec![2.0]];
        let sp = Space::general_graph(coords, vec![1.0; 3], vec![(0, 1), (1, 2)], 1).unwrap();
        let op = SelfAdjointOperator::graph_laplacian(&sp, DEFAULT_CLAMP).unwrap();
        let w = op.eigenvalues();
        for (a, b) in w.iter().zip([0.0, 1.0, 3.0]) {
            assert!((a - b).abs() < 1e-12);
        }
        let v = vec![c(1.0), c(-2.0), c(0.5)];
        let out = op.heat(1.0, &v).unwrap();
        let (c0, c1) = (op.coefficients(&v), op.coefficients(&out));
        for k in 0..3 {
            assert!((c0[k] * libm::exp(-w[k]) - c1[k]).norm() < 1e-12);
        }
        let err = op.apply(|l| c(1.0 / l), &v).unwrap_err();
        assert_eq!(err, Error::NonFinite { eigenvalue: 0.0 });
    }

    #[test]
    fn kernel_matrix_rows() {
        let sp = Space::torus_grid(1, 16, 1.0).unwrap();
        let op = SelfAdjointOperator::torus_laplacian(&sp).unwrap();
        let k = op.kernel_matrix(|l| c(libm::exp(-1e-3 * l))).unwrap();
        for x in 0..16 {
            let s: f64 = (0..16).map(|y| k[(x, y)].re * sp.weight(y)).sum();
            assert!((s - 1.0).abs() < 1e-10);
        }
        let id = op.kernel_matrix(|_| c(1.0)).unwrap();
        for x in 0..16 {
            for y in 0..16 {
                let e = if x == y { 1.0 } else { 0.0 };
                assert!((id[(x, y)].re * sp.weight(y) - e).abs() < 1e-12);
            }
        }
        let dsp = Space::interval_grid(16, 1.0, Boundary::Dirichlet).unwrap();
        let dop = SelfAdjointOperator::interval_laplacian(&dsp).unwrap();
        let k = dop.kernel_matrix(|l| c(libm::exp(-1e-2 * l))).unwrap();
        for x in 0..16 {
            let s: f64 = (0..16).map(|y| k[(x, y)].re * dsp.weight(y)).sum();
            assert!(s <= 1.0 + 1e-12);
        }
        let big = Space::torus_grid(2, 65, 1.0).unwrap();
        let bop = SelfAdjointOperator::torus_laplacian(&big).unwrap();
        assert!(matches!(
            bop.kernel_matrix(|_| c(1.0)),
            Err(Error::DenseCapExceeded { .. })
        ));
    }

    #[test]
    fn projector() {
        let sp = Space::torus_grid(1, 16, 1.0).unwrap();
        let op = SelfAdjointOperator::torus_laplacian(&sp).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let v = random_state(16, &mut rng);
        let p = op.kernel_projector(&v);
        let mean: Complex64 = v
            .iter()
            .zip(sp.weights())
            .map(|(a, w)| a * w)
            .sum::<Complex64>()
            / sp.total_measure();
        assert!(p.iter().all(|x| (x - mean).norm() < 1e-12));
        let pp = op.kernel_projector(&p);
        assert!(pp.iter().zip(&p).all(|(a, b)| (a - b).norm() < 1e-12));
        let dsp = Space::interval_grid(16, 1.0, Boundary::Dirichlet).unwrap();
        let dop = SelfAdjointOperator::interval_laplacian(&dsp).unwrap();
        assert!(dop.kernel_projector(&v).iter().all(|x| x.norm() < 1e-14));
    }

    #[test]
    fn reproducing_scalar_examples() {
        let rule = quadrature::log_uniform(1e-14, 1e4, 64).unwrap();
        assert!(reproducing_residual_on(&[1.0], 1, 1.0, 1.0, &rule) < 1e-12);
        let kappa = 1.0 / c_constant(3, 2.0).unwrap();
        assert_eq!(kappa, 4.0);
        assert!(reproducing_residual_on(&[5.0], 3, 2.0, kappa, &rule) < 1e-8);
        assert_eq!(reproducing_residual_on(&[0.0], 3, 2.0, kappa, &rule), 0.0);
    }

    #[test]
    fn reproducing_on_operator() {
        let sp = Space::torus_grid(1, 64, 1.0).unwrap();
        let op = SelfAdjointOperator::torus_laplacian(&sp).unwrap();
        for (m, n) in [(1, 1.0), (2, 0.5), (3, 2.0)] {
            let rep = op.reproducing_residual(m, n, 64).unwrap();
            assert!(rep.residual <= 1e-6, "{m} {n} {}", rep.residual);
        }
    }

    #[test]
    fn sobolev_examples() {
        let sp = Space::torus_grid(1, 32, 1.0).unwrap();
        let op = SelfAdjointOperator::torus_laplacian(&sp).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let v = random_state(32, &mut rng);
        assert!((op.sobolev_norm(0.0, &v) - op.norm(&v)).abs() < 1e-12);
        let mut prev = 0.0;
        for s in [0.0, 0.5, 1.0, 2.0] {
            let x = op.sobolev_norm(s, &v);
            assert!(x >= prev);
            prev = x;
        }
        let coords = vec![vec![0.0], vec![1.0], vec![2.0]];
        let path = Space::general_graph(coords, vec![1.0; 3], vec![(0, 1), (1, 2)], 1).unwrap();
        let pop = SelfAdjointOperator::graph_laplacian(&path, DEFAULT_CLAMP).unwrap();
        assert!((pop.eigenvalues()[2] - 3.0).abs() < 1e-12);
        let mode = to_complex(&pop.mode(2));
        let expect = 4.0 * pop.norm(&mode);
        assert!((pop.sobolev_norm(2.0, &mode) - expect).abs() < 1e-10 * expect);
    }

    #[test]
    fn square_function_constant() {
        let sp = Space::torus_grid(1, 32, 1.0).unwrap();
        let op = SelfAdjointOperator::torus_laplacian(&sp).unwrap();
        let v = vec![c(2.0); 32];
        let rule = quadrature::log_uniform(1e-8, 1.0, 64).unwrap();
        let (a, b) = op.square_function_norm(3, 2.0, 4.0, &v, &rule).unwrap();
        assert!((a - 0.25 * 2.0).abs() < 1e-12);
        assert!(b < 1e-12);
        assert!(op.square_function_norm(1, 1.0, 2.0, &v, &rule).is_err());
    }
}

/// Translation-invariant kernel of `f(H)` for the analytic torus Laplacian,
/// `K(delta)` for per-axis offsets `|delta_a| <= reach`.
#[derive(Clone, Debug)]
pub struct KernelBox {
    d: usize,
    n: usize,
    reach: usize,
    // Index sum_a delta_a (reach+1)^a with delta_a in 0..=reach.
    values: Vec<Complex64>,
}

impl KernelBox {
    pub fn reach(&self) -> usize {
        self.reach
    }

    /// `K(x, y)` for grid offset `dx = x - y`; `None` outside the box.
    pub fn get(&self, dx: [i64; 3]) -> Option<Complex64> {
        let n = self.n as i64;
        let mut idx = 0usize;
        let mut stride = 1usize;
        for &o in dx.iter().take(self.d) {
            let r = o.rem_euclid(n);
            let a = r.min(n - r) as usize;
            if a > self.reach {
                return None;
            }
            idx += a * stride;
            stride *= self.reach + 1;
        }
        Some(self.values[idx])
    }
}

impl SelfAdjointOperator {
    /// Kernel offsets of `f(H)` on the analytic torus. The kernel depends only
    /// on `|delta_a|` per axis since each axis spectrum is even in frequency.
    pub fn torus_kernel_box<F: Fn(f64) -> Complex64>(
        &self,
        f: F,
        reach: usize,
    ) -> Result<KernelBox> {
        if self.builder != Builder::TorusLaplacianAnalytic {
            return Err(invalid("kernel box needs the analytic torus Laplacian"));
        }
        let (d, n) = (self.space.dim(), self.space.n_per_axis());
        let period = self.space.period().unwrap();
        let reach = reach.min(n / 2);
        let h = self.space.spacing();
        let classes = n / 2 + 1;
        let lam1: Vec<f64> = (0..classes)
            .map(|q| 4.0 / (h * h) * libm::pow(libm::sin(PI * q as f64 / n as f64), 2.0))
            .collect();
        let mult: Vec<f64> = (0..classes)
            .map(|q| {
                if q == 0 || (n % 2 == 0 && q == n / 2) {
                    1.0
                } else {
                    2.0
                }
            })
            .collect();
        // cos_table[q * (reach+1) + delta]
        let cos_table: Vec<f64> = (0..classes)
            .flat_map(|q| {
                (0..=reach).map(move |dl| libm::cos(2.0 * PI * ((q * dl) % n) as f64 / n as f64))
            })
            .collect();
        let total = classes.pow(d as u32);
        let mut cur = Vec::with_capacity(total);
        for idx in 0..total {
            let mut rem = idx;
            let (mut l, mut w) = (0.0, 1.0);
            for _ in 0..d {
                let q = rem % classes;
                rem /= classes;
                l += lam1[q];
                w *= mult[q];
            }
            let v = f(l);
            if !(v.re.is_finite() && v.im.is_finite()) {
                return Err(Error::NonFinite { eigenvalue: l });
            }
            cur.push(v * w);
        }
        let m = classes;
        for _ in 0..d {
            let rest = cur.len() / m;
            let mut out = vec![Complex64::new(0.0, 0.0); rest * (reach + 1)];
            for dl in 0..=reach {
                for r in 0..rest {
                    let src = &cur[m * r..m * (r + 1)];
                    let mut acc = Complex64::new(0.0, 0.0);
                    for (q, s) in src.iter().enumerate() {
                        acc += s * cos_table[q * (reach + 1) + dl];
                    }
                    out[r + rest * dl] = acc;
                }
            }
            cur = out;
        }
        let scale = libm::pow(period, -(d as f64));
        for v in cur.iter_mut() {
            *v *= scale;
        }
        Ok(KernelBox {
            d,
            n,
            reach,
            values: cur,
        })
    }
}


/// Largest relative defect of `psi_{km,kn}(x) = psi_{m,n}(x)^k` over `xs`.
pub fn psi_power_defect(m: u32, n: f64, k: u32, xs: &[f64]) -> f64 {
    xs.iter()
        .map(|&x| {
            relative_gap(
                psi(k * m, k as f64 * n, x),
                libm::pow(psi(m, n, x), k as f64),
            )
        })
        .fold(0.0, f64::max)
}

/// Largest relative defect of
/// `psi_{m,n}(u x) psi_{m',n'}(v x) = u^m v^{m'} / (n u + n' v)^{m+m'} psi_{m+m',1}((n u + n' v) x)` over `xs`.
pub fn psi_product_defect(a: (u32, f64), b: (u32, f64), u: f64, v: f64, xs: &[f64]) -> f64 {
    let (m, n) = a;
    let (mp, np) = b;
    let s = n * u + np * v;
    let scale = libm::pow(u, m as f64) * libm::pow(v, mp as f64) / libm::pow(s, (m + mp) as f64);
    xs.iter()
        .map(|&x| {
            relative_gap(
                psi(m, n, u * x) * psi(mp, np, v * x),
                scale * psi(m + mp, 1.0, s * x),
            )
        })
        .fold(0.0, f64::max)
}

fn relative_gap(a: f64, b: f64) -> f64 {
    let d = (a - b).abs();
    if d == 0.0 {
        0.0
    } else {
        d / a.abs().max(b.abs())
    }
}

/// `max_{lambda_k > 0} |(1 - e^{-r^2 lambda}) - int_0^{r^2} lambda e^{-s lambda} ds|`, the integral by
/// composite Gauss-Legendre with panels of width at most `1/lambda`.
pub fn corona_defect(op: &SelfAdjointOperator, r: f64) -> Result<f64> {
    if !(r > 0.0) {
        return Err(invalid("radius must be positive"));
    }
    let r2 = r * r;
    let mut worst: f64 = 0.0;
    for &l in op.eigenvalues().iter().filter(|&&l| l > 0.0) {
        let panels = (libm::ceil(r2 * l) as usize).clamp(1, 100_000);
        let rule = quadrature::composite(0.0, r2, panels, 8);
        let integral = rule.integrate(|s| l * libm::exp(-s * l));
        worst = worst.max(((1.0 - libm::exp(-r2 * l)) - integral).abs());
    }
    Ok(worst)
}

#[derive(Clone, Copy, Debug)]
pub struct AlmostOrthogonality {
    /// `max_{u,v} max_k psi_{m,1}(u lambda_k) psi_{m,1}(v lambda_k) / min(u/v, v/u)^m`.
    pub constant: f64,
    pub argmax: (f64, f64),
    /// `sup_x psi_{2m,1}(x) = (2m/e)^{2m}`, which bounds `constant`.
    pub ceiling: f64,
}

pub fn almost_orthogonality(
    op: &SelfAdjointOperator,
    m: u32,
    grid: &[f64],
) -> Result<AlmostOrthogonality> {
    if m == 0 || grid.is_empty() || grid.iter().any(|&u| !(u > 0.0)) {
        return Err(invalid(
            "almost-orthogonality needs m >= 1 and a positive grid",
        ));
    }
    let mut constant: f64 = 0.0;
    let mut argmax = (grid[0], grid[0]);
    for &u in grid {
        for &v in grid {
            let ratio = libm::pow((u / v).min(v / u), m as f64);
            let top = op
                .eigenvalues()
                .iter()
                .map(|&l| psi(m, 1.0, u * l) * psi(m, 1.0, v * l))
                .fold(0.0, f64::max);
            let c = top / ratio;
            if c > constant {
                constant = c;
                argmax = (u, v);
            }
        }
    }
    let mm = 2.0 * m as f64;
    Ok(AlmostOrthogonality {
        constant,
        argmax,
        ceiling: libm::pow(mm / core::f64::consts::E, mm),
    })
}

/// `||f(H)||_{L^2(mu) -> L^2(mu)}` as the largest singular value of `mu^{1/2} K mu^{1/2}`,
/// independent of the spectral sup.
pub fn dense_operator_norm<F: Fn(f64) -> Complex64>(op: &SelfAdjointOperator, f: F) -> Result<f64> {
    let mut k = op.kernel_matrix(f)?;
    let w = op.space().weights();
    for y in 0..k.ncols() {
        for x in 0..k.nrows() {
            k[(x, y)] *= libm::sqrt(w[x] * w[y]);
        }
    }
    Ok(crate::linalg::largest_singular_value(&k))
}
