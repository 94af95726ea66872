//! Mixed space-time norms, Strichartz constants with and without loss, and
//! spectral clusters.

use alloc::vec;
use alloc::vec::Vec;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{invalid, Error, Result};
use crate::fit::{fit_decay_exponent, fit_log_log, DecayFit};
use crate::space::{Geometry, Space};
use crate::spectral::{psi, SelfAdjointOperator, TensorView};
use crate::State;

/// `(sum_x |v(x)|^q mu(x))^{1/q}`; `q = inf` gives `max |v|`.
pub fn lq_norm(space: &Space, v: &[Complex64], q: f64) -> f64 {
    if q.is_infinite() {
        return v.iter().map(|z| z.norm()).fold(0.0, f64::max);
    }
    let half = q / 2.0;
    let s: f64 = if half == libm::floor(half) && half <= 8.0 {
        let k = half as u32;
        v.iter()
            .zip(space.weights())
            .map(|(z, w)| crate::powu(z.norm_sqr(), k) * w)
            .sum()
    } else {
        v.iter()
            .zip(space.weights())
            .map(|(z, w)| libm::pow(z.norm(), q) * w)
            .sum()
    };
    libm::pow(s, 1.0 / q)
}

/// `2/p + d/q = d/2` to 1e-12 with `p, q >= 2`, excluding `(2, inf, 2)`.
pub fn is_admissible(p: f64, q: f64, d: usize) -> bool {
    if !(p >= 2.0 && q >= 2.0) {
        return false;
    }
    if p == 2.0 && q.is_infinite() && d == 2 {
        return false;
    }
    let lhs = 2.0 / p + if q.is_infinite() { 0.0 } else { d as f64 / q };
    (lhs - d as f64 / 2.0).abs() <= 1e-12
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdmissiblePair {
    pub p: f64,
    pub q: f64,
    pub d: usize,
}

impl AdmissiblePair {
    pub fn new(p: f64, q: f64, d: usize) -> Result<Self> {
        if !is_admissible(p, q, d) {
            return Err(invalid("exponents are not an admissible pair"));
        }
        Ok(AdmissiblePair { p, q, d })
    }
}

/// Relative half-grid disagreement tolerated by [`mixed_norm_profile`].
pub const RICHARDSON_TOL: f64 = 0.01;

#[derive(Clone, Copy, Debug)]
pub struct MixedNorm {
    pub value: f64,
    /// Same quadrature on every other sample.
    pub coarse: f64,
    pub relative: f64,
}

fn simpson(y: &[f64], dt: f64) -> f64 {
    let n = y.len() - 1;
    let mut s = y[0] + y[n];
    for (i, v) in y.iter().enumerate().take(n).skip(1) {
        s += if i % 2 == 1 { 4.0 * v } else { 2.0 * v };
    }
    s * dt / 3.0
}

/// `(int ||u(t)||_q^p dt)^{1/p}` by composite Simpson from uniform samples of `||u(t)||_q`.
/// `doubled` integrates over the mirrored interval as well (real data, `||u(-t)|| = ||u(t)||`).
pub fn mixed_norm_profile(norms: &[f64], dt: f64, p: f64, doubled: bool) -> Result<MixedNorm> {
    let intervals = norms.len().saturating_sub(1);
    if intervals == 0 || intervals % 4 != 0 {
        return Err(invalid("time grid needs a multiple of 4 intervals"));
    }
    if !(dt > 0.0) || !(p >= 1.0) {
        return Err(invalid("mixed norm needs dt > 0 and p >= 1"));
    }
    let pw: Vec<f64> = norms.iter().map(|&v| libm::pow(v, p)).collect();
    let coarse_pw: Vec<f64> = pw.iter().step_by(2).cloned().collect();
    let k = if doubled { 2.0 } else { 1.0 };
    let value = libm::pow(k * simpson(&pw, dt), 1.0 / p);
    let coarse = libm::pow(k * simpson(&coarse_pw, 2.0 * dt), 1.0 / p);
    let relative = if value > 0.0 {
        (value - coarse).abs() / value
    } else {
        0.0
    };
    if relative > RICHARDSON_TOL {
        return Err(Error::RefinementMismatch { relative });
    }
    Ok(MixedNorm {
        value,
        coarse,
        relative,
    })
}

/// Mixed norm of time-indexed states on a uniform grid over `[-T, T]`.
pub fn mixed_norm(space: &Space, states: &[State], dt: f64, p: f64, q: f64) -> Result<MixedNorm> {
    let norms: Vec<f64> = states.iter().map(|u| lq_norm(space, u, q)).collect();
    mixed_norm_profile(&norms, dt, p, false)
}

/// Uniform grid on `[0, T]` with a multiple of 4 intervals and step at most `dt_max`.
pub fn time_grid(t_max: f64, dt_max: f64) -> Result<(usize, f64)> {
    if !(t_max > 0.0) || !(dt_max > 0.0) {
        return Err(invalid("time window and step must be positive"));
    }
    let intervals = 4 * libm::ceil(t_max / (4.0 * dt_max)) as usize;
    Ok((intervals, t_max / intervals as f64))
}

/// `e^{itH} g` restricted to modes whose coefficient exceeds a relative tolerance.
pub struct Flow<'a> {
    op: &'a SelfAdjointOperator,
    kind: FlowKind,
}

enum FlowKind {
    Dense {
        cols: Vec<usize>,
        coef: Vec<Complex64>,
        values: Vec<f64>,
    },
    Tensor {
        d: usize,
        n: usize,
        // Active per-axis indices and the matching n x m mode blocks, point-major.
        active: Vec<Vec<usize>>,
        blocks: Vec<Vec<f64>>,
        coef: Vec<Complex64>,
        values: Vec<f64>,
    },
}

/// Relative coefficient level below which modes are dropped from a flow.
pub const FLOW_TOL: f64 = 1e-14;

impl<'a> Flow<'a> {
    pub fn new(op: &'a SelfAdjointOperator, g: &[Complex64]) -> Self {
        let c = op.raw_coefficients(g);
        let vals = op.raw_eigenvalues();
        let top = c.iter().map(|z| z.norm()).fold(0.0, f64::max);
        let floor = FLOW_TOL * top;
        let kind = match op.tensor_view() {
            None => {
                let cols: Vec<usize> = (0..c.len()).filter(|&k| c[k].norm() > floor).collect();
                FlowKind::Dense {
                    coef: cols.iter().map(|&k| c[k]).collect(),
                    values: cols.iter().map(|&k| vals[k]).collect(),
                    cols,
                }
            }
            Some(TensorView {
                d, n, axis_modes, ..
            }) => {
                let mut marginal = vec![vec![false; n]; d];
                for (k, z) in c.iter().enumerate() {
                    if z.norm() > floor {
                        let mut rem = k;
                        for m in marginal.iter_mut() {
                            m[rem % n] = true;
                            rem /= n;
                        }
                    }
                }
                let active: Vec<Vec<usize>> = marginal
                    .iter()
                    .map(|m| (0..n).filter(|&j| m[j]).collect())
                    .collect();
                let blocks: Vec<Vec<f64>> = active
                    .iter()
                    .map(|a| {
                        let mut b = vec![0.0; n * a.len()];
                        for i in 0..n {
                            for (jj, &j) in a.iter().enumerate() {
                                b[i * a.len() + jj] = axis_modes[i * n + j];
                            }
                        }
                        b
                    })
                    .collect();
                let dims: Vec<usize> = active.iter().map(|a| a.len()).collect();
                let total: usize = dims.iter().product();
                let mut coef = Vec::with_capacity(total);
                let mut values = Vec::with_capacity(total);
                for idx in 0..total {
                    let mut rem = idx;
                    let mut k = 0;
                    let mut stride = 1;
                    for (a, &m) in dims.iter().enumerate() {
                        k += active[a][rem % m] * stride;
                        rem /= m;
                        stride *= n;
                    }
                    coef.push(c[k]);
                    values.push(vals[k]);
                }
                FlowKind::Tensor {
                    d,
                    n,
                    active,
                    blocks,
                    coef,
                    values,
                }
            }
        };
        Flow { op, kind }
    }

    /// Number of retained modes.
    pub fn active_modes(&self) -> usize {
        match &self.kind {
            FlowKind::Dense { cols, .. } => cols.len(),
            FlowKind::Tensor { coef, .. } => coef.len(),
        }
    }

    /// Largest retained eigenvalue.
    pub fn max_active_eigenvalue(&self) -> f64 {
        let v = match &self.kind {
            FlowKind::Dense { values, .. } => values,
            FlowKind::Tensor { values, .. } => values,
        };
        v.iter().cloned().fold(0.0, f64::max)
    }

    pub fn at(&self, t: f64) -> State {
        match &self.kind {
            FlowKind::Dense { cols, coef, values } => {
                let c: Vec<(usize, Complex64)> = cols
                    .iter()
                    .zip(coef.iter().zip(values))
                    .map(|(&k, (z, &l))| (k, z * Complex64::from_polar(1.0, t * l)))
                    .collect();
                let mut raw = vec![Complex64::new(0.0, 0.0); self.op.raw_eigenvalues().len()];
                for (k, z) in c {
                    raw[k] = z;
                }
                self.op.raw_synthesize(&raw)
            }
            FlowKind::Tensor {
                d,
                n,
                active,
                blocks,
                coef,
                values,
            } => {
                let mut cur: Vec<Complex64> = coef
                    .iter()
                    .zip(values)
                    .map(|(z, &l)| z * Complex64::from_polar(1.0, t * l))
                    .collect();
                let mut dims: Vec<usize> = active.iter().map(|a| a.len()).collect();
                for axis in 0..*d {
                    let m = dims[axis];
                    let inner: usize = dims[..axis].iter().product();
                    let outer: usize = dims[axis + 1..].iter().product();
                    let mut next = vec![Complex64::new(0.0, 0.0); inner * n * outer];
                    let b = &blocks[axis];
                    for o in 0..outer {
                        for i in 0..*n {
                            let row = &b[i * m..(i + 1) * m];
                            let dst = &mut next[(o * n + i) * inner..(o * n + i + 1) * inner];
                            for (j, &w) in row.iter().enumerate() {
                                let src = &cur[(o * m + j) * inner..(o * m + j + 1) * inner];
                                for (x, s) in dst.iter_mut().zip(src) {
                                    x.re += w * s.re;
                                    x.im += w * s.im;
                                }
                            }
                        }
                    }
                    dims[axis] = *n;
                    cur = next;
                }
                cur
            }
        }
    }
}

/// `e^{itH} g` for `g` a sum of per-axis products on a separable basis.
pub struct SeparableFlow<'a> {
    space: &'a Space,
    d: usize,
    n: usize,
    axes: Vec<AxisFlow>,
    // (weight, index into `axes` per axis).
    terms: Vec<(f64, Vec<usize>)>,
}

struct AxisFlow {
    values: Vec<f64>,
    coef: Vec<Complex64>,
    // n x m, point-major.
    block: Vec<f64>,
}

impl AxisFlow {
    fn new(view: &TensorView<'_>, h: f64, factor: &[f64], profile: &dyn Fn(f64) -> f64) -> Self {
        let n = view.n;
        let c: Vec<f64> = (0..n)
            .zip(view.axis_values)
            .map(|(k, &l)| {
                let coeff: f64 = factor
                    .iter()
                    .enumerate()
                    .map(|(i, f)| f * view.axis_modes[i * n + k])
                    .sum();
                coeff * h * profile(l)
            })
            .collect();
        let top = c.iter().map(|z| z.abs()).fold(0.0, f64::max);
        let keep: Vec<usize> = (0..n).filter(|&k| c[k].abs() > FLOW_TOL * top).collect();
        let m = keep.len();
        let mut block = vec![0.0; n * m];
        for i in 0..n {
            for (jj, &j) in keep.iter().enumerate() {
                block[i * m + jj] = view.axis_modes[i * n + j];
            }
        }
        AxisFlow {
            values: keep.iter().map(|&k| view.axis_values[k]).collect(),
            coef: keep.iter().map(|&k| Complex64::new(c[k], 0.0)).collect(),
            block,
        }
    }

    fn at(&self, t: f64, out: &mut [Complex64]) {
        let m = self.values.len();
        let c: Vec<Complex64> = self
            .coef
            .iter()
            .zip(&self.values)
            .map(|(z, &l)| z * Complex64::from_polar(1.0, t * l))
            .collect();
        for (i, o) in out.iter_mut().enumerate() {
            let row = &self.block[i * m..(i + 1) * m];
            let mut acc = Complex64::new(0.0, 0.0);
            for (w, z) in row.iter().zip(&c) {
                acc.re += w * z.re;
                acc.im += w * z.im;
            }
            *o = acc;
        }
    }
}

fn multinomial_terms(d: usize, total: u32) -> Vec<(f64, Vec<u32>)> {
    fn rec(d: usize, left: u32, prefix: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
        if prefix.len() + 1 == d {
            prefix.push(left);
            out.push(prefix.clone());
            prefix.pop();
            return;
        }
        for e in 0..=left {
            prefix.push(e);
            rec(d, left - e, prefix, out);
            prefix.pop();
        }
    }
    let mut exps = Vec::new();
    rec(d, total, &mut Vec::new(), &mut exps);
    let fact = |k: u32| (1..=k).fold(1.0, |a, i| a * i as f64);
    exps.into_iter()
        .map(|e| {
            let w = fact(total) / e.iter().map(|&k| fact(k)).product::<f64>();
            (w, e)
        })
        .collect()
}

impl<'a> SeparableFlow<'a> {
    /// `e^{itH} psi_{m,n}(h^2 H) (f_0 x ... x f_{d-1})`, expanding `(sum_a h^2 lambda_a)^m` multinomially.
    pub fn localized(
        op: &'a SelfAdjointOperator,
        factors: &[Vec<f64>],
        h: f64,
        m: u32,
        n_exp: f64,
    ) -> Result<Self> {
        let view = op
            .tensor_view()
            .ok_or_else(|| invalid("separable flow needs a tensor basis"))?;
        if factors.len() != view.d || factors.iter().any(|f| f.len() != view.n) {
            return Err(invalid("one factor of axis length is needed per dimension"));
        }
        let dx = op.space().spacing();
        let h2 = h * h;
        let mut axes = Vec::new();
        let mut index = vec![vec![usize::MAX; m as usize + 1]; view.d];
        let mut terms = Vec::new();
        for (w, e) in multinomial_terms(view.d, m) {
            let mut idx = Vec::with_capacity(view.d);
            for (a, &ea) in e.iter().enumerate() {
                if index[a][ea as usize] == usize::MAX {
                    let prof =
                        move |l: f64| libm::pow(h2 * l, ea as f64) * libm::exp(-n_exp * h2 * l);
                    axes.push(AxisFlow::new(&view, dx, &factors[a], &prof));
                    index[a][ea as usize] = axes.len() - 1;
                }
                idx.push(index[a][ea as usize]);
            }
            terms.push((w, idx));
        }
        Ok(SeparableFlow {
            space: op.space(),
            d: view.d,
            n: view.n,
            axes,
            terms,
        })
    }

    /// `e^{itH} (f_0 x ... x f_{d-1})` without frequency localization.
    pub fn plain(op: &'a SelfAdjointOperator, factors: &[Vec<f64>]) -> Result<Self> {
        let view = op
            .tensor_view()
            .ok_or_else(|| invalid("separable flow needs a tensor basis"))?;
        if factors.len() != view.d || factors.iter().any(|f| f.len() != view.n) {
            return Err(invalid("one factor of axis length is needed per dimension"));
        }
        let dx = op.space().spacing();
        let axes: Vec<AxisFlow> = factors
            .iter()
            .map(|f| AxisFlow::new(&view, dx, f, &|_| 1.0))
            .collect();
        let terms = vec![(1.0, (0..view.d).collect())];
        Ok(SeparableFlow {
            space: op.space(),
            d: view.d,
            n: view.n,
            axes,
            terms,
        })
    }

    pub fn at(&self, t: f64) -> State {
        let n = self.n;
        let per_axis: Vec<State> = self
            .axes
            .iter()
            .map(|a| {
                let mut out = vec![Complex64::new(0.0, 0.0); n];
                a.at(t, &mut out);
                out
            })
            .collect();
        let count = self.space.point_count();
        let mut u = vec![Complex64::new(0.0, 0.0); count];
        let n_outer = count / n;
        for (w, idx) in &self.terms {
            let first = &per_axis[idx[0]];
            for o in 0..n_outer {
                let mut rem = o;
                let mut p = Complex64::new(*w, 0.0);
                for a in 1..self.d {
                    p *= per_axis[idx[a]][rem % n];
                    rem /= n;
                }
                for (z, f) in u[o * n..(o + 1) * n].iter_mut().zip(first) {
                    *z += p * f;
                }
            }
        }
        u
    }
}

/// Initial data for Strichartz sweeps.
#[derive(Clone, Debug)]
pub enum Datum {
    Full(State),
    /// Real per-axis factors of a tensor-product state.
    Separable(Vec<Vec<f64>>),
}

impl Datum {
    pub fn to_state(&self, space: &Space) -> State {
        match self {
            Datum::Full(v) => v.clone(),
            Datum::Separable(f) => (0..space.point_count())
                .map(|x| {
                    let g = space.grid_index(x);
                    Complex64::new((0..f.len()).map(|a| f[a][g[a]]).product(), 0.0)
                })
                .collect(),
        }
    }

    fn is_real(&self) -> bool {
        match self {
            Datum::Full(v) => v.iter().all(|z| z.im == 0.0),
            Datum::Separable(_) => true,
        }
    }

    pub fn scaled(&self, alpha: f64) -> Datum {
        match self {
            Datum::Full(v) => Datum::Full(v.iter().map(|z| z * alpha).collect()),
            Datum::Separable(f) => {
                let mut f = f.clone();
                for x in f[0].iter_mut() {
                    *x *= alpha;
                }
                Datum::Separable(f)
            }
        }
    }
}

enum AnyFlow<'a> {
    Full(Flow<'a>),
    Sep(SeparableFlow<'a>),
}

impl AnyFlow<'_> {
    fn at(&self, t: f64) -> State {
        match self {
            AnyFlow::Full(f) => f.at(t),
            AnyFlow::Sep(f) => f.at(t),
        }
    }
}

fn flow_mixed_norm(
    space: &Space,
    flow: &AnyFlow<'_>,
    real: bool,
    t_max: f64,
    dt_max: f64,
    p: f64,
    q: f64,
) -> Result<MixedNorm> {
    let (intervals, dt) = time_grid(t_max, dt_max)?;
    if real {
        let norms: Vec<f64> = (0..=intervals)
            .map(|j| lq_norm(space, &flow.at(j as f64 * dt), q))
            .collect();
        mixed_norm_profile(&norms, dt, p, true)
    } else {
        let norms: Vec<f64> = (0..=2 * intervals)
            .map(|j| lq_norm(space, &flow.at(-t_max + j as f64 * dt), q))
            .collect();
        mixed_norm_profile(&norms, dt, p, false)
    }
}

/// Time step `h^2 / 16` for `h`-localized data.
pub fn default_dt(h: f64) -> f64 {
    h * h / 16.0
}

#[derive(Clone, Debug)]
pub struct StrichartzConstant {
    /// Measured sup (lower bound) over the data family.
    pub constant: f64,
    /// `None` for skipped data.
    pub per_datum: Vec<Option<f64>>,
    pub max_refinement: f64,
}

/// `sup_f ||e^{itH} psi_{2l}(h^2 H) f||_{L^p([-T,T], L^q)} / ||psi_{l,1/2}(h^2 H) f||_{L^2}`.
pub fn strichartz_constant(
    op: &SelfAdjointOperator,
    h: f64,
    ell: u32,
    pair: AdmissiblePair,
    t_max: f64,
    dt: f64,
    data: &[Datum],
) -> Result<StrichartzConstant> {
    if pair.q.is_infinite() {
        return Err(invalid("Strichartz runs exclude q = inf"));
    }
    if ell == 0 {
        return Err(invalid("l must be at least 1"));
    }
    let space = op.space();
    let h2 = h * h;
    let mut per_datum = Vec::with_capacity(data.len());
    let mut constant: f64 = 0.0;
    let mut max_refinement: f64 = 0.0;
    for datum in data {
        let f = datum.to_state(space);
        let den_state = op.apply(|l| Complex64::new(psi(ell, 0.5, h2 * l), 0.0), &f)?;
        let den = op.norm(&den_state);
        if den < 1e-14 * op.norm(&f) || den == 0.0 {
            per_datum.push(None);
            continue;
        }
        let flow = match datum {
            Datum::Separable(factors) if op.tensor_view().is_some() => {
                AnyFlow::Sep(SeparableFlow::localized(op, factors, h, 2 * ell, 1.0)?)
            }
            _ => {
                let g = op.apply(|l| Complex64::new(psi(2 * ell, 1.0, h2 * l), 0.0), &f)?;
                AnyFlow::Full(Flow::new(op, &g))
            }
        };
        let mn = flow_mixed_norm(space, &flow, datum.is_real(), t_max, dt, pair.p, pair.q)?;
        max_refinement = max_refinement.max(mn.relative);
        let ratio = mn.value / den;
        constant = constant.max(ratio);
        per_datum.push(Some(ratio));
    }
    Ok(StrichartzConstant {
        constant,
        per_datum,
        max_refinement,
    })
}

/// Largest `T` with `2 xi* T + 8h <= P/2`, `xi* = sqrt(2l)/h` the peak frequency of `psi_{2l}(h^2 .)`.
pub fn strichartz_time_budget(space: &Space, h: f64, ell: u32) -> f64 {
    match space.period() {
        Some(p) => ((p / 2.0 - 8.0 * h) * h / (2.0 * libm::sqrt(2.0 * ell as f64))).max(0.0),
        None => f64::INFINITY,
    }
}

#[derive(Clone, Debug)]
pub struct StrichartzReport {
    pub pair: AdmissiblePair,
    pub h_grid: Vec<f64>,
    pub windows: Vec<f64>,
    pub constants: Vec<f64>,
    pub fit: DecayFit,
    /// `-slope` of `log C` against `log h`.
    pub beta: f64,
}

/// Time window per `h`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum TimeWindow {
    /// Wrap-budgeted window from [`strichartz_time_budget`], capped at 1.
    Budget,
    Fixed(f64),
}

/// Per-`h` constants and the loss exponent `beta`.
pub fn loss_sweep(
    op: &SelfAdjointOperator,
    ell: u32,
    pair: AdmissiblePair,
    h_grid: &[f64],
    window: TimeWindow,
    data: &dyn Fn(f64) -> Result<Vec<Datum>>,
) -> Result<StrichartzReport> {
    if h_grid.len() < 3 {
        return Err(Error::TooFewSamples {
            got: h_grid.len(),
            need: 3,
        });
    }
    let mut constants = Vec::new();
    let mut windows = Vec::new();
    for &h in h_grid {
        let t = match window {
            TimeWindow::Budget => strichartz_time_budget(op.space(), h, ell).min(1.0),
            TimeWindow::Fixed(t) => t,
        };
        if !(t > 0.0) {
            return Err(invalid("time window is empty for this h"));
        }
        let c = strichartz_constant(op, h, ell, pair, t, default_dt(h), &data(h)?)?;
        constants.push(c.constant);
        windows.push(t);
    }
    let samples: Vec<(f64, f64)> = h_grid
        .iter()
        .cloned()
        .zip(constants.iter().cloned())
        .collect();
    let fit = fit_decay_exponent(&samples)?;
    Ok(StrichartzReport {
        pair,
        h_grid: h_grid.to_vec(),
        windows,
        constants,
        beta: -fit.slope,
        fit,
    })
}

/// Loss exponent from externally supplied `(h, C(h))` samples.
pub fn loss_exponent(samples: &[(f64, f64)]) -> Result<(f64, DecayFit)> {
    let fit = fit_decay_exponent(samples)?;
    Ok((-fit.slope, fit))
}

/// `max_f ||e^{itH} u_0||_{L^p([-T,T], L^q)} / ||u_0||_{W^{gamma/p, 2}}`.
pub fn sobolev_strichartz_ratio(
    op: &SelfAdjointOperator,
    data: &[Datum],
    gamma: f64,
    pair: AdmissiblePair,
    t_max: f64,
    dt: f64,
) -> Result<f64> {
    let space = op.space();
    let mut best: f64 = 0.0;
    for datum in data {
        let f = datum.to_state(space);
        let den = op.sobolev_norm(gamma / pair.p, &f);
        if den == 0.0 {
            continue;
        }
        let flow = match datum {
            Datum::Separable(factors) if op.tensor_view().is_some() => {
                AnyFlow::Sep(SeparableFlow::plain(op, factors)?)
            }
            _ => AnyFlow::Full(Flow::new(op, &f)),
        };
        let mn = flow_mixed_norm(space, &flow, datum.is_real(), t_max, dt, pair.p, pair.q)?;
        best = best.max(mn.value / den);
    }
    Ok(best)
}

/// Signed per-axis offset of each grid point from index 0, wrapped on tori.
fn axis_offsets(space: &Space) -> Vec<f64> {
    let n = space.n_per_axis() as i64;
    let h = space.spacing();
    (0..n)
        .map(|i| {
            if space.geometry() == Geometry::TorusGrid && 2 * i > n {
                (i - n) as f64 * h
            } else {
                i as f64 * h
            }
        })
        .collect()
}

/// Real Gaussian packets `e^{-x^2/2 sigma^2}` per axis with carrier `cos(xi x_0)` on axis 0,
/// `xi = sqrt(2l)/h`, centered at grid index 0, one per width factor `sigma/h`.
pub fn wave_packets(space: &Space, h: f64, ell: u32, width_factors: &[f64]) -> Result<Vec<Datum>> {
    if space.geometry() == Geometry::GeneralGraph {
        return Err(invalid("wave packets need a grid"));
    }
    let xs = axis_offsets(space);
    let xi = libm::sqrt(2.0 * ell as f64) / h;
    let mut out = Vec::new();
    for &wf in width_factors {
        let sigma = wf * h;
        let env: Vec<f64> = xs
            .iter()
            .map(|&x| libm::exp(-x * x / (2.0 * sigma * sigma)))
            .collect();
        let mut factors = vec![env.clone(); space.dim()];
        factors[0] = xs
            .iter()
            .zip(&env)
            .map(|(&x, &e)| e * libm::cos(xi * x))
            .collect();
        out.push(Datum::Separable(factors));
    }
    Ok(out)
}

/// Eigenmodes whose `h^2 lambda` lies closest to `2l`, where `psi_{2l}/psi_{l,1/2}` peaks.
pub fn eigenmode_data(op: &SelfAdjointOperator, h: f64, ell: u32, count: usize) -> Vec<Datum> {
    let target = 2.0 * ell as f64;
    let mut idx: Vec<usize> = (0..op.eigenvalues().len()).collect();
    idx.sort_by(|&a, &b| {
        let da = (h * h * op.eigenvalues()[a] - target).abs();
        let db = (h * h * op.eigenvalues()[b] - target).abs();
        da.total_cmp(&db).then(a.cmp(&b))
    });
    idx.into_iter()
        .take(count)
        .map(|k| {
            Datum::Full(
                op.mode(k)
                    .into_iter()
                    .map(|x| Complex64::new(x, 0.0))
                    .collect(),
            )
        })
        .collect()
}

/// Seeded band-limited separable fields: per-axis modes with `h^2 lambda_a <= 4l` get uniform `[-1,1]` weights.
pub fn random_band_limited(
    op: &SelfAdjointOperator,
    h: f64,
    ell: u32,
    seeds: &[u64],
) -> Result<Vec<Datum>> {
    let view = op
        .tensor_view()
        .ok_or_else(|| invalid("band-limited fields need a tensor basis"))?;
    let n = view.n;
    let mut out = Vec::new();
    for &seed in seeds {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut factors = Vec::with_capacity(view.d);
        for _ in 0..view.d {
            let w: Vec<f64> = (0..n)
                .map(|k| {
                    let r: f64 = rng.gen_range(-1.0..1.0);
                    if h * h * view.axis_values[k] <= 4.0 * ell as f64 {
                        r
                    } else {
                        0.0
                    }
                })
                .collect();
            factors.push(
                (0..n)
                    .map(|i| (0..n).map(|k| w[k] * view.axis_modes[i * n + k]).sum())
                    .collect(),
            );
        }
        out.push(Datum::Separable(factors));
    }
    Ok(out)
}

/// `1_{[lambda, lambda+1)}(sqrt H) v`.
pub fn cluster_projector(op: &SelfAdjointOperator, lambda: f64, v: &[Complex64]) -> Result<State> {
    if !(lambda >= 0.0) {
        return Err(invalid("cluster index must be nonnegative"));
    }
    op.apply(
        |l| Complex64::new(if in_cluster(lambda, l) { 1.0 } else { 0.0 }, 0.0),
        v,
    )
}

fn in_cluster(lambda: f64, l: f64) -> bool {
    let s = libm::sqrt(l.max(0.0));
    s >= lambda && s < lambda + 1.0
}

fn sinc(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        libm::sin(x) / x
    }
}

/// `sin(lambda - x)/(lambda - x) + sin(lambda + x)/(lambda + x)` with `sin(0)/0 = 1`.
pub fn rho(lambda: f64, x: f64) -> f64 {
    sinc(lambda - x) + sinc(lambda + x)
}

#[derive(Clone, Debug)]
pub struct RhoScan {
    /// `(lambda, min, max)` of `rho(lambda, .)` on `[lambda, lambda + 1)`.
    pub rows: Vec<(f64, f64, f64)>,
    /// Smallest `lambda` from which every scanned row stays in `[1/2, 2]`.
    pub smallest_validated: Option<f64>,
}

pub fn rho_scan(lambdas: &[f64], samples: usize) -> RhoScan {
    let mut rows = Vec::new();
    for &l in lambdas {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for j in 0..samples.max(1) {
            let v = rho(l, l + j as f64 / samples.max(1) as f64);
            lo = lo.min(v);
            hi = hi.max(v);
        }
        rows.push((l, lo, hi));
    }
    let mut smallest = None;
    for &(l, lo, hi) in rows.iter().rev() {
        if lo >= 0.5 && hi <= 2.0 {
            smallest = Some(l);
        } else {
            break;
        }
    }
    RhoScan {
        rows,
        smallest_validated: smallest,
    }
}

/// Power iterations for the `L^2 -> L^q` lower bound.
pub const CLUSTER_ITERATIONS: usize = 30;

/// `||Pi_lambda||_{L^2 -> L^q}`: exact for `q = 2` and `q = inf`; for finite `q > 2` a lower bound
/// from the nonlinear power method `f <- Pi(|Pi f|^{q-2} Pi f)` started at the zonal function.
/// `None` for empty clusters.
pub fn cluster_norm(op: &SelfAdjointOperator, lambda: f64, q: f64) -> Result<Option<f64>> {
    let members: Vec<usize> = (0..op.eigenvalues().len())
        .filter(|&k| in_cluster(lambda, op.eigenvalues()[k]))
        .collect();
    if members.is_empty() {
        return Ok(None);
    }
    if q == 2.0 {
        return Ok(Some(1.0));
    }
    let space = op.space();
    let n = space.point_count();
    let modes: Vec<Vec<f64>> = members.iter().map(|&k| op.mode(k)).collect();
    let diag: Vec<f64> = (0..n)
        .map(|x| modes.iter().map(|m| m[x] * m[x]).sum())
        .collect();
    let (x0, dmax) =
        diag.iter().enumerate().fold(
            (0, f64::NEG_INFINITY),
            |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc },
        );
    if q.is_infinite() {
        return Ok(Some(libm::sqrt(dmax)));
    }
    let w = space.weights();
    let project = |v: &[f64]| -> Vec<f64> {
        let coef: Vec<f64> = modes
            .iter()
            .map(|m| m.iter().zip(v).zip(w).map(|((a, b), c)| a * b * c).sum())
            .collect();
        (0..n)
            .map(|x| modes.iter().zip(&coef).map(|(m, c)| m[x] * c).sum())
            .collect()
    };
    let l2 = |v: &[f64]| libm::sqrt(v.iter().zip(w).map(|(a, c)| a * a * c).sum::<f64>());
    let lq = |v: &[f64]| {
        libm::pow(
            v.iter()
                .zip(w)
                .map(|(a, c)| libm::pow(a.abs(), q) * c)
                .sum::<f64>(),
            1.0 / q,
        )
    };
    let mut best: f64 = 0.0;
    let mut starts: Vec<Vec<f64>> = vec![modes.iter().map(|m| m[x0]).collect()];
    starts[0] = (0..n)
        .map(|x| modes.iter().map(|m| m[x] * m[x0]).sum())
        .collect();
    starts.extend(modes.iter().take(4).cloned());
    for mut f in starts {
        for _ in 0..CLUSTER_ITERATIONS {
            let nf = l2(&f);
            if nf == 0.0 {
                break;
            }
            best = best.max(lq(&f) / nf);
            let g: Vec<f64> = f
                .iter()
                .map(|&a| libm::pow(a.abs() / nf, q - 2.0) * a / nf)
                .collect();
            f = project(&g);
        }
        let nf = l2(&f);
        if nf > 0.0 {
            best = best.max(lq(&f) / nf);
        }
    }
    Ok(Some(best))
}

/// Predicted growth exponent of `||Pi_lambda||_{2 -> q}`.
pub fn cluster_exponent(d: usize, q: f64) -> f64 {
    let df = d as f64;
    let inv_q = if q.is_infinite() { 0.0 } else { 1.0 / q };
    let critical = if d > 1 {
        2.0 * (df + 1.0) / (df - 1.0)
    } else {
        f64::INFINITY
    };
    if q >= critical {
        df * (0.5 - inv_q) - 0.5
    } else {
        (df - 1.0) / 2.0 * (0.5 - inv_q)
    }
}

#[derive(Clone, Debug)]
pub struct ClusterFit {
    pub rows: Vec<(f64, f64)>,
    pub skipped: Vec<f64>,
    pub fit: DecayFit,
    pub predicted: f64,
}

pub fn cluster_norm_fit(op: &SelfAdjointOperator, q: f64, lambdas: &[f64]) -> Result<ClusterFit> {
    let cap = libm::sqrt(op.lambda_max()) / 2.0;
    let mut rows = Vec::new();
    let mut skipped = Vec::new();
    for &l in lambdas {
        if l > cap {
            skipped.push(l);
            continue;
        }
        match cluster_norm(op, l, q)? {
            Some(v) => rows.push((l, v)),
            None => skipped.push(l),
        }
    }
    let fit = fit_log_log(&rows)?;
    Ok(ClusterFit {
        rows,
        skipped,
        fit,
        predicted: cluster_exponent(op.space().dim(), q),
    })
}
