//! Heat-kernel and propagation audits: on-diagonal and Gaussian upper bounds,
//! Davies-Gaffney, finite speed, the Hardy-Littlewood maximal function, the
//! transmutation quadrature and the 1D d'Alembert oracle.

use alloc::vec;
use alloc::vec::Vec;

use num_complex::Complex64;

use crate::dispersive::{localized_norm, Action};
use crate::error::{invalid, Error, Result};
use crate::space::{unit_ball_volume, Ball, Geometry, Space};
use crate::spectral::{psi, SelfAdjointOperator};
use crate::{sq, State};

/// Periodic images kept on each side in the continuum theta oracle.
pub const THETA_IMAGES: i32 = 5;

/// Continuum heat kernel on the torus `(R/PZ)^d`, periodized over `2*5+1` images per axis.
pub fn theta_heat_kernel(period: f64, t: f64, offset: &[f64]) -> f64 {
    let pre = 1.0 / libm::sqrt(4.0 * core::f64::consts::PI * t);
    offset
        .iter()
        .map(|&x| {
            (-THETA_IMAGES..=THETA_IMAGES)
                .map(|k| {
                    let y = x + k as f64 * period;
                    pre * libm::exp(-y * y / (4.0 * t))
                })
                .sum::<f64>()
        })
        .product()
}

/// `p_t(x,x) omega_d t^{d/2}` for the continuum torus.
pub fn due_oracle(d: usize, period: f64, t: f64) -> f64 {
    theta_heat_kernel(period, t, &vec![0.0; d]) * unit_ball_volume(d) * libm::pow(t, d as f64 / 2.0)
}

/// Points used for kernel sweeps: one point on translation-invariant tori,
/// otherwise every point up to 256 and an even stride beyond.
pub fn sample_points(space: &Space) -> Vec<usize> {
    if space.geometry() == Geometry::TorusGrid {
        return vec![0];
    }
    let n = space.point_count();
    let stride = n.div_ceil(256).max(1);
    (0..n).step_by(stride).collect()
}

#[derive(Clone, Debug)]
pub struct DueRow {
    pub t: f64,
    /// `sup_x p_t(x,x) mu(B(x, sqrt t))`.
    pub value: f64,
    /// `t` outside `[spacing^2, diameter^2]`.
    pub flagged: bool,
}

#[derive(Clone, Debug)]
pub struct DueReport {
    /// Supremum over unflagged rows.
    pub constant: f64,
    pub rows: Vec<DueRow>,
}

pub fn check_due(op: &SelfAdjointOperator, t_grid: &[f64], points: &[usize]) -> Result<DueReport> {
    let space = op.space();
    if t_grid.is_empty() || points.is_empty() {
        return Err(invalid("t grid and sample points must be non-empty"));
    }
    let (lo, hi) = (sq(space.spacing()), sq(space.diameter()));
    let mut rows = Vec::new();
    let mut constant: f64 = 0.0;
    for &t in t_grid {
        if !(t > 0.0) {
            return Err(invalid("heat times must be positive"));
        }
        let mut value: f64 = 0.0;
        for &x in points {
            let p = op
                .kernel_entry(|l| Complex64::new(libm::exp(-t * l), 0.0), x, x)
                .re;
            value = value.max(p * space.ball_measure(&Ball::new(x, libm::sqrt(t))?));
        }
        let flagged = t < lo * (1.0 - 1e-12) || t > hi * (1.0 + 1e-12);
        if !flagged {
            constant = constant.max(value);
        }
        rows.push(DueRow { t, value, flagged });
    }
    Ok(DueReport { constant, rows })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum KernelProfile {
    /// `e^{-tH}`.
    Heat,
    /// `psi_{m,n}(tH)`.
    Psi { m: u32, n: f64 },
    /// `f = 1`: no decay.
    Identity,
}

impl KernelProfile {
    pub fn eval(&self, t: f64, l: f64) -> f64 {
        match *self {
            KernelProfile::Heat => libm::exp(-t * l),
            KernelProfile::Psi { m, n } => psi(m, n, t * l),
            KernelProfile::Identity => 1.0,
        }
    }
}

/// Relative level below which synthesized kernel entries are treated as zero.
pub const ROUNDOFF_FLOOR: f64 = 1e-12;

pub const GAUSSIAN_TRIALS: [f64; 3] = [0.25, 0.125, 0.0625];

#[derive(Clone, Debug)]
pub struct GaussianFit {
    pub c_prefactor: f64,
    pub c_exponent: f64,
    /// `max p_t mu(B(x, sqrt t)) e^{c d^2/t} / C` for the chosen pair.
    pub worst_ratio: f64,
    /// `(c, C)` for every trial exponent.
    pub trials: Vec<(f64, f64)>,
}

/// Minimal `C` with `|p_t(x,y)| <= C e^{-c d(x,y)^2/t} / mu(B(x, sqrt t))` per trial `c`;
/// reports the largest `c` whose `C` is finite.
pub fn fit_gaussian_ue(
    op: &SelfAdjointOperator,
    profile: KernelProfile,
    t_grid: &[f64],
    points: &[usize],
) -> Result<GaussianFit> {
    if profile == KernelProfile::Identity {
        return Err(Error::NoDecay);
    }
    if t_grid.is_empty() || points.is_empty() {
        return Err(invalid("t grid and sample points must be non-empty"));
    }
    let space = op.space();
    let mut maxima = [0.0f64; GAUSSIAN_TRIALS.len()];
    for &t in t_grid {
        if !(t > 0.0) {
            return Err(invalid("kernel times must be positive"));
        }
        for &x in points {
            let col = op.kernel_column(|l| Complex64::new(profile.eval(t, l), 0.0), x)?;
            let vol = space.ball_measure(&Ball::new(x, libm::sqrt(t))?);
            // Entries below the synthesis roundoff floor carry no sign of decay either way.
            let floor = ROUNDOFF_FLOOR * col.iter().map(|k| k.norm()).fold(0.0, f64::max);
            for (y, k) in col.iter().enumerate() {
                let mag = (k.norm() - floor).max(0.0);
                let d2 = sq(space.dist(x, y));
                for (i, &c) in GAUSSIAN_TRIALS.iter().enumerate() {
                    maxima[i] = maxima[i].max(mag * vol * libm::exp(c * d2 / t));
                }
            }
        }
    }
    let trials: Vec<(f64, f64)> = GAUSSIAN_TRIALS
        .iter()
        .cloned()
        .zip(maxima.iter().cloned())
        .collect();
    let &(c, big_c) = trials
        .iter()
        .find(|(_, cc)| cc.is_finite())
        .ok_or(Error::NoDecay)?;
    Ok(GaussianFit {
        c_prefactor: big_c,
        c_exponent: c,
        worst_ratio: 1.0,
        trials,
    })
}

fn set_distance(space: &Space, e: &[usize], f: &[usize]) -> f64 {
    let mut d = f64::INFINITY;
    for &x in e {
        for &y in f {
            d = d.min(space.dist(x, y));
        }
    }
    d
}

#[derive(Clone, Debug)]
pub struct DaviesGaffney {
    pub distance: f64,
    pub norm: f64,
    pub gaussian: f64,
    pub ratio: f64,
    /// `t <= P^2/16` on tori; always true elsewhere.
    pub within_budget: bool,
    pub pass: bool,
}

/// `||P_F e^{-tH} P_E|| / e^{-d(E,F)^2/4t}`.
pub fn check_davies_gaffney(
    op: &SelfAdjointOperator,
    e: &[usize],
    f: &[usize],
    t: f64,
    bound: f64,
) -> Result<DaviesGaffney> {
    if !(t > 0.0) {
        return Err(invalid("heat time must be positive"));
    }
    let space = op.space();
    let heat = move |l: f64| Complex64::new(libm::exp(-t * l), 0.0);
    let norm = localized_norm(op, Action::Multiplier(&heat), e, f)?;
    let distance = set_distance(space, e, f);
    let gaussian = libm::exp(-distance * distance / (4.0 * t));
    let ratio = norm / gaussian;
    let within_budget = space.period().is_none_or(|p| t <= p * p / 16.0);
    Ok(DaviesGaffney {
        distance,
        norm,
        gaussian,
        ratio,
        within_budget,
        pass: ratio <= bound,
    })
}

pub const FINITE_SPEED_TAIL: f64 = 1e-3;

#[derive(Clone, Debug)]
pub struct FiniteSpeed {
    pub distance: f64,
    pub tail: f64,
    /// `t < d(E,F) - 3 spacing`.
    pub applicable: bool,
    /// `tail <= 1e-3`, meaningful only when applicable.
    pub pass: bool,
}

/// `||P_F cos(t sqrt H) P_E||`.
pub fn check_finite_speed(
    op: &SelfAdjointOperator,
    e: &[usize],
    f: &[usize],
    t: f64,
) -> Result<FiniteSpeed> {
    if !(t >= 0.0) {
        return Err(invalid("wave time must be nonnegative"));
    }
    let space = op.space();
    let wave = move |l: f64| Complex64::new(libm::cos(t * libm::sqrt(l)), 0.0);
    let identity = |v: &[Complex64]| Ok(v.to_vec());
    // cos(0 sqrt H) = Id exactly.
    let action: Action<'_> = if t == 0.0 {
        Action::Map(&identity)
    } else {
        Action::Multiplier(&wave)
    };
    let tail = localized_norm(op, action, e, f)?;
    let distance = set_distance(space, e, f);
    let applicable = t < distance - 3.0 * space.spacing();
    Ok(FiniteSpeed {
        distance,
        tail,
        applicable,
        pass: tail <= FINITE_SPEED_TAIL,
    })
}

/// Uncentered maximal function over balls of radius at least `min_radius`.
/// Ball averages are exact: for each center the admissible member sets are
/// nested prefixes of the points sorted by distance.
pub fn maximal_function(space: &Space, v: &[f64], min_radius: f64) -> Result<Vec<f64>> {
    let n = space.point_count();
    if v.len() != n {
        return Err(invalid("state length does not match the space"));
    }
    let w = space.weights();
    let mut out = vec![0.0f64; n];
    let mut order: Vec<(f64, usize)> = Vec::with_capacity(n);
    for c in 0..n {
        order.clear();
        order.extend((0..n).map(|x| (space.dist(c, x), x)));
        order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        // best[k]: largest admissible average among balls containing the first k+1 points.
        let mut avgs = vec![f64::NEG_INFINITY; n];
        let (mut mass, mut meas) = (0.0, 0.0);
        for k in 0..n {
            let (_, x) = order[k];
            mass += v[x].abs() * w[x];
            meas += w[x];
            let tie_next = k + 1 < n && order[k + 1].0 == order[k].0;
            let next = if k + 1 < n {
                order[k + 1].0
            } else {
                f64::INFINITY
            };
            if !tie_next && next > min_radius {
                avgs[k] = mass / meas;
            }
        }
        let mut suffix = f64::NEG_INFINITY;
        for k in (0..n).rev() {
            suffix = suffix.max(avgs[k]);
            let x = order[k].1;
            out[x] = out[x].max(suffix);
        }
    }
    Ok(out)
}

#[derive(Clone, Debug)]
pub struct MaximalDomination {
    /// `None` when `M v(x0) = 0`.
    pub ratio: Option<f64>,
    pub maximal: f64,
    /// `(t, ||e^{-tH} v||_{L^inf(B(x0, sqrt t))})`.
    pub per_t: Vec<(f64, f64)>,
}

/// `sup_t ||e^{-tH} v||_{L^inf(B(x0, sqrt t))} / M v(x0)`.
pub fn check_maximal_domination(
    op: &SelfAdjointOperator,
    v: &[f64],
    x0: usize,
    t_grid: &[f64],
) -> Result<MaximalDomination> {
    let space = op.space();
    let maximal = maximal_function(space, v, 0.0)?[x0];
    let mut per_t = Vec::new();
    let mut sup: f64 = 0.0;
    for &t in t_grid {
        let u = op.apply_real(|l| libm::exp(-t * l), v)?;
        let ball = space.ball_members(&Ball::new(x0, libm::sqrt(t))?);
        let m = ball.iter().map(|&x| u[x].abs()).fold(0.0, f64::max);
        sup = sup.max(m);
        per_t.push((t, m));
    }
    let ratio = if maximal > 0.0 {
        Some(sup / maximal)
    } else {
        None
    };
    Ok(MaximalDomination {
        ratio,
        maximal,
        per_t,
    })
}

/// Trapezoid rule for `e^{-zl} = (pi z)^{-1/2} int_0^inf cos(s sqrt l) e^{-s^2/4z} ds`.
#[derive(Clone, Debug)]
pub struct TransmutationRule {
    pub z: Complex64,
    pub nodes: Vec<f64>,
    /// Trapezoid weights times `(pi z)^{-1/2} e^{-s^2/4z}`.
    pub weights: Vec<Complex64>,
}

/// `exp(-s_max^2 Re(1/4z))` must fall below this.
pub const TRANSMUTATION_CUTOFF: f64 = 1e-12;
/// Nodes per shortest oscillation period of the integrand.
pub const TRANSMUTATION_POINTS_PER_PERIOD: f64 = 8.0;

impl TransmutationRule {
    /// Smallest `s_max` meeting the Gaussian cutoff.
    pub fn default_s_max(z: Complex64) -> Result<f64> {
        let a = (Complex64::new(0.25, 0.0) / z).re;
        if !(z.re > 0.0) || !(a > 0.0) {
            return Err(invalid("transmutation needs Re z > 0"));
        }
        Ok(libm::sqrt(-libm::log(TRANSMUTATION_CUTOFF) / a) * (1.0 + 1e-9))
    }

    /// Node count resolving both `cos(s sqrt lambda_max)` and the chirp of `e^{-s^2/4z}` on `[0, s_max]`.
    pub fn required_points(z: Complex64, s_max: f64, lambda_max: f64) -> usize {
        let chirp = (Complex64::new(0.5, 0.0) / z).im.abs() * s_max;
        let omega = libm::sqrt(lambda_max.max(0.0)) + chirp;
        let period = 2.0 * core::f64::consts::PI / omega.max(1e-300);
        libm::ceil(TRANSMUTATION_POINTS_PER_PERIOD * s_max / period) as usize + 1
    }

    pub fn new(z: Complex64, s_max: f64, n_points: usize, lambda_max: f64) -> Result<Self> {
        if !(z.re > 0.0) {
            return Err(invalid("transmutation needs Re z > 0"));
        }
        let a = (Complex64::new(0.25, 0.0) / z).re;
        if !(s_max > 0.0) || !(libm::exp(-s_max * s_max * a) < TRANSMUTATION_CUTOFF) {
            return Err(invalid("s_max does not reach the Gaussian cutoff"));
        }
        let required = Self::required_points(z, s_max, lambda_max).max(2);
        if n_points < required {
            return Err(Error::UnderResolved { required });
        }
        let ds = s_max / (n_points - 1) as f64;
        let pre = (Complex64::new(core::f64::consts::PI, 0.0) * z)
            .sqrt()
            .inv();
        let mut nodes = Vec::with_capacity(n_points);
        let mut weights = Vec::with_capacity(n_points);
        for j in 0..n_points {
            let s = j as f64 * ds;
            let trap = if j == 0 || j + 1 == n_points {
                0.5 * ds
            } else {
                ds
            };
            nodes.push(s);
            weights.push(pre * (-(s * s) / (4.0 * z)).exp() * trap);
        }
        Ok(TransmutationRule { z, nodes, weights })
    }

    /// Default `s_max` and the minimal resolving node count for `op`.
    pub fn for_operator(op: &SelfAdjointOperator, z: Complex64) -> Result<Self> {
        let s_max = Self::default_s_max(z)?;
        let n = Self::required_points(z, s_max, op.lambda_max()).max(2);
        Self::new(z, s_max, n, op.lambda_max())
    }

    /// Quadrature approximation of `e^{-z lambda}`.
    pub fn multiplier(&self, l: f64) -> Complex64 {
        let q = libm::sqrt(l.max(0.0));
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&s, &w)| w * libm::cos(s * q))
            .sum()
    }
}

/// Approximates `e^{-zH} v` through the transmutation integral.
pub fn transmutation(
    op: &SelfAdjointOperator,
    z: Complex64,
    v: &[Complex64],
    s_max: f64,
    n_points: usize,
) -> Result<State> {
    let rule = TransmutationRule::new(z, s_max, n_points, op.lambda_max())?;
    op.apply(|l| rule.multiplier(l), v)
}

/// `(v(x + t) + v(x - t)) / 2` on a 1D torus with `t` a multiple of the spacing.
pub fn dalembert_oracle(space: &Space, v: &[Complex64], t: f64) -> Result<State> {
    if space.geometry() != Geometry::TorusGrid || space.dim() != 1 {
        return Err(invalid("d'Alembert oracle needs a 1D torus"));
    }
    let n = space.point_count();
    if v.len() != n {
        return Err(invalid("state length does not match the space"));
    }
    let k = t / space.spacing();
    let kr = libm::round(k);
    if (k - kr).abs() > 1e-9 * k.abs().max(1.0) {
        return Err(invalid("time must be a multiple of the spacing"));
    }
    let s = (kr as i64).rem_euclid(n as i64) as usize;
    Ok((0..n)
        .map(|x| (v[(x + s) % n] + v[(x + n - s) % n]) * 0.5)
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::space::Boundary;
    use crate::spectral::to_complex;
    use proptest::prelude::*;

    fn torus1(n: usize) -> SelfAdjointOperator {
        SelfAdjointOperator::torus_laplacian(&Space::torus_grid(1, n, 1.0).unwrap()).unwrap()
    }

    #[test]
    fn due_torus_band() {
        let op = torus1(256);
        let rep = check_due(&op, &[1e-3], &[0]).unwrap();
        assert!(
            rep.constant >= 0.2 && rep.constant <= 2.0,
            "{}",
            rep.constant
        );
        let oracle = due_oracle(1, 1.0, 1e-3);
        // Discrete ball measure (2 floor(r/h) + 1) h against the continuum 2r.
        let r = libm::sqrt(1e-3);
        let h = 1.0 / 256.0;
        let discrete = oracle * (2.0 * libm::floor(r / h) + 1.0) * h / (2.0 * r);
        assert!(
            (rep.constant / discrete - 1.0).abs() < 0.02,
            "{} vs {}",
            rep.constant,
            discrete
        );
        let rep = check_due(&op, &[1e-6, 1e-2], &[0]).unwrap();
        assert!(rep.rows[0].flagged && !rep.rows[1].flagged);
    }

    #[test]
    fn due_equilibrium() {
        let op = torus1(64);
        // diameter^2 = 1/4: ball is the whole torus, heat kernel near 1.
        let rep = check_due(&op, &[4.0], &[0]).unwrap();
        assert!((rep.rows[0].value - 1.0).abs() < 1e-6);
    }

    #[test]
    fn due_dirichlet_below_neumann() {
        let mk = |bc| {
            SelfAdjointOperator::interval_laplacian(&Space::interval_grid(100, 1.0, bc).unwrap())
                .unwrap()
        };
        let (dir, neu) = (mk(Boundary::Dirichlet), mk(Boundary::Neumann));
        let ts = [1e-3, 1e-2, 5e-2];
        let pts: Vec<usize> = (0..100).step_by(3).collect();
        let a = check_due(&dir, &ts, &pts).unwrap().constant;
        let b = check_due(&neu, &ts, &pts).unwrap().constant;
        assert!(a <= b, "{a} > {b}");
    }

    #[test]
    fn gaussian_fit_heat_and_psi() {
        let op = torus1(256);
        let ts = [3e-3, 1e-2, 3e-2];
        let fit = fit_gaussian_ue(&op, KernelProfile::Heat, &ts, &[0]).unwrap();
        assert!(fit.c_prefactor.is_finite() && fit.worst_ratio <= 1.0);
        assert_eq!(fit.c_exponent, 0.25);
        // Continuum kernel times the continuum ball measure 2 sqrt t at the diagonal.
        let cont = 2.0 / libm::sqrt(4.0 * core::f64::consts::PI);
        assert!(
            fit.c_prefactor > 0.5 * cont && fit.c_prefactor < 3.0 * cont,
            "{}",
            fit.c_prefactor
        );
        let fit = fit_gaussian_ue(&op, KernelProfile::Psi { m: 1, n: 1.0 }, &ts, &[0]).unwrap();
        let c8 = fit.trials.iter().find(|(c, _)| *c == 0.125).unwrap().1;
        assert!(c8.is_finite());
        assert!(matches!(
            fit_gaussian_ue(&op, KernelProfile::Identity, &ts, &[0]),
            Err(Error::NoDecay)
        ));
    }

    #[test]
    fn davies_gaffney_examples() {
        let op = torus1(256);
        let sp = op.space();
        let e = sp.ball_members(&Ball::new(0, 0.02).unwrap());
        let same = check_davies_gaffney(&op, &e, &e, 1e-3, 2.0).unwrap();
        assert_eq!(same.gaussian, 1.0);
        assert!(same.ratio <= 1.0 + 1e-12);
        let f = sp.ball_members(&Ball::new(128, 0.1).unwrap());
        let dg = check_davies_gaffney(&op, &e, &f, 1e-2, 2.0).unwrap();
        assert!(dg.within_budget && dg.pass, "{}", dg.ratio);
        let late = check_davies_gaffney(&op, &e, &f, 10.0, 2.0).unwrap();
        assert!(!late.within_budget);
        assert!(late.norm > 0.0);
    }

    #[test]
    fn finite_speed_examples() {
        let op = torus1(512);
        let sp = op.space();
        let h = sp.spacing();
        let e = sp.ball_members(&Ball::new(0, 4.0 * h).unwrap());
        let c = libm::round((0.3 + 8.0 * h) / h) as usize;
        let f = sp.ball_members(&Ball::new(c, 4.0 * h).unwrap());
        let zero = check_finite_speed(&op, &e, &f, 0.0).unwrap();
        assert_eq!(zero.tail, 0.0);
        let fs = check_finite_speed(&op, &e, &f, 0.2).unwrap();
        assert!(fs.applicable && fs.pass, "{}", fs.tail);
        let out = check_finite_speed(&op, &e, &f, fs.distance + 0.1).unwrap();
        assert!(!out.applicable);
        let inside = check_finite_speed(&op, &e, &f, fs.distance + 4.0 * h).unwrap();
        assert!(inside.tail > 0.05, "{}", inside.tail);
    }

    #[test]
    fn maximal_examples() {
        let sp = Space::torus_grid(1, 64, 1.0).unwrap();
        let ones = vec![1.0; 64];
        let m = maximal_function(&sp, &ones, 0.0).unwrap();
        assert!(m.iter().all(|&x| (x - 1.0).abs() < 1e-12));
        let mut delta = vec![0.0; 64];
        delta[0] = 1.0;
        let m = maximal_function(&sp, &delta, 0.0).unwrap();
        assert!((m[0] - 1.0).abs() < 1e-12);
        // Smallest grid-centered ball holding 0 and x has x+1 points for even x, x+2 for odd.
        for (x, &mx) in m.iter().enumerate().take(32).skip(1) {
            let expected = 1.0 / (x as f64 + 1.0 + (x % 2) as f64);
            assert!((mx - expected).abs() < 1e-12, "x={x} {mx} {expected}");
        }
        let m = maximal_function(&sp, &delta, 2.5 / 64.0).unwrap();
        assert!((m[0] - 1.0 / 5.0).abs() < 1e-12);
    }

    #[test]
    fn maximal_domination_examples() {
        let op = torus1(256);
        let ts = [1e-4, 1e-3, 1e-2, 1e-1];
        let ones = vec![1.0; 256];
        let r = check_maximal_domination(&op, &ones, 7, &ts).unwrap();
        assert!((r.ratio.unwrap() - 1.0).abs() < 1e-12);
        let mut delta = vec![0.0; 256];
        delta[0] = 1.0;
        for x0 in [0usize, 5, 30, 128] {
            let r = check_maximal_domination(&op, &delta, x0, &ts).unwrap();
            assert!(r.ratio.unwrap() <= 10.0, "{:?}", r.ratio);
        }
        let zero = vec![0.0; 256];
        assert!(check_maximal_domination(&op, &zero, 0, &ts)
            .unwrap()
            .ratio
            .is_none());
    }

    #[test]
    fn maximal_dirichlet_below_neumann() {
        let mk = |bc| {
            SelfAdjointOperator::interval_laplacian(&Space::interval_grid(64, 1.0, bc).unwrap())
                .unwrap()
        };
        let (dir, neu) = (mk(Boundary::Dirichlet), mk(Boundary::Neumann));
        let mut v = vec![0.0; 64];
        v[5] = 1.0;
        let ts = [1e-3, 1e-2];
        let a = check_maximal_domination(&dir, &v, 10, &ts).unwrap();
        let b = check_maximal_domination(&neu, &v, 10, &ts).unwrap();
        // Same point masses and spacing-level geometry, so maxima agree up to the spacing change.
        assert!(a.per_t.iter().zip(&b.per_t).all(|(x, y)| x.1 <= y.1 * 1.05));
        assert!(a.ratio.is_some() && b.ratio.is_some());
    }

    #[test]
    fn transmutation_scalar() {
        let z = Complex64::new(1.0, 0.0);
        let s_max = TransmutationRule::default_s_max(z).unwrap();
        let n = TransmutationRule::required_points(z, s_max, 1.0);
        let rule = TransmutationRule::new(z, s_max, n, 1.0).unwrap();
        assert!((rule.multiplier(1.0).re - libm::exp(-1.0)).abs() < 1e-8);
        assert!(matches!(
            TransmutationRule::new(z, s_max, n - 1, 1.0),
            Err(Error::UnderResolved { required }) if required == n
        ));
        assert!(TransmutationRule::new(Complex64::new(0.0, -1.0), 10.0, 100, 1.0).is_err());
        assert!(TransmutationRule::new(z, 1.0, 1000, 1.0).is_err());
    }

    #[test]
    fn transmutation_chirp_spectrum() {
        let z = Complex64::new(0.01, -0.1);
        let s_max = TransmutationRule::default_s_max(z).unwrap();
        let n = TransmutationRule::required_points(z, s_max, 100.0);
        let rule = TransmutationRule::new(z, s_max, n, 100.0).unwrap();
        for i in 0..=400 {
            let l = i as f64 * 0.25;
            let exact = (-z * l).exp();
            assert!(
                (rule.multiplier(l) - exact).norm() <= 1e-6 * exact.norm(),
                "l={l}"
            );
        }
    }

    #[test]
    fn transmutation_grid_against_semigroup() {
        let op = torus1(64);
        let v: State = (0..64)
            .map(|i| Complex64::new(libm::sin(i as f64), libm::cos(3.0 * i as f64)))
            .collect();
        for re in [1e-2, 1e-1, 1.0] {
            for im in [0.0, -1e-1, -1.0] {
                let z = Complex64::new(re, im);
                let s_max = TransmutationRule::default_s_max(z).unwrap();
                let n = TransmutationRule::required_points(z, s_max, op.lambda_max());
                let a = transmutation(&op, z, &v, s_max, n).unwrap();
                let b = op.complex_semigroup(z, &v).unwrap();
                let diff: State = a.iter().zip(&b).map(|(x, y)| x - y).collect();
                assert!(op.norm(&diff) <= 1e-6 * op.norm(&b), "z={z}");
            }
        }
        let c = to_complex(&[1.0; 64]);
        let z = Complex64::new(0.1, -0.5);
        let rule = TransmutationRule::for_operator(&op, z).unwrap();
        let out = op.apply(|l| rule.multiplier(l), &c).unwrap();
        assert!(out.iter().all(|x| (x - 1.0).norm() < 1e-9));
    }

    #[test]
    fn dalembert_examples() {
        let op = torus1(256);
        let sp = op.space();
        let v: State = (0..256)
            .map(|i| {
                let x = i as f64 / 256.0 - 0.5;
                Complex64::new(libm::exp(-x * x / (2.0 * 0.03f64.powi(2))), 0.0)
            })
            .collect();
        assert_eq!(dalembert_oracle(sp, &v, 0.0).unwrap(), v);
        assert_eq!(dalembert_oracle(sp, &v, 1.0).unwrap(), v);
        assert!(dalembert_oracle(sp, &v, 0.5 / 256.0).is_err());
        let a = dalembert_oracle(sp, &v, 0.25).unwrap();
        let b = op.wave_cos(0.25, &v).unwrap();
        let diff: State = a.iter().zip(&b).map(|(x, y)| x - y).collect();
        assert!(
            op.norm(&diff) <= 0.05 * op.norm(&v),
            "{}",
            op.norm(&diff) / op.norm(&v)
        );
    }

    #[test]
    fn heat_stochastic_and_positive() {
        let op = torus1(48);
        let neu = SelfAdjointOperator::interval_laplacian(
            &Space::interval_grid(40, 1.0, Boundary::Neumann).unwrap(),
        )
        .unwrap();
        let dir = SelfAdjointOperator::interval_laplacian(
            &Space::interval_grid(40, 1.0, Boundary::Dirichlet).unwrap(),
        )
        .unwrap();
        for t in [1e-4, 1e-3, 1e-2, 1e-1] {
            let heat = |l: f64| Complex64::new(libm::exp(-t * l), 0.0);
            for (o, conservative) in [(&op, true), (&neu, true), (&dir, false)] {
                let k = o.kernel_matrix(heat).unwrap();
                let w = o.space().weights();
                for x in 0..k.nrows() {
                    let row: f64 = (0..k.ncols()).map(|y| k[(x, y)].re * w[y]).sum();
                    if conservative {
                        assert!((row - 1.0).abs() < 1e-10);
                    } else {
                        assert!(row <= 1.0 + 1e-10);
                    }
                    for y in 0..k.ncols() {
                        assert!(k[(x, y)].re >= -1e-12);
                    }
                }
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn heat_contraction(seed in proptest::collection::vec(-1.0f64..1.0, 32), t in 0.0f64..1.0) {
            let op = torus1(32);
            let v = to_complex(&seed);
            let u = op.heat(t, &v).unwrap();
            prop_assert!(op.norm(&u) <= op.norm(&v) * (1.0 + 1e-12) + 1e-300);
        }

        #[test]
        fn wave_energy(seed in proptest::collection::vec(-1.0f64..1.0, 32), t in 0.0f64..2.0) {
            let op = torus1(32);
            let v = to_complex(&seed);
            let c = op.wave_cos(t, &v).unwrap();
            let s = op.wave_sin(t, &v).unwrap();
            let lhs = op.norm(&c).powi(2) + op.norm(&s).powi(2);
            let rhs = op.norm(&v).powi(2);
            prop_assert!((lhs - rhs).abs() <= 1e-10 * rhs.max(1e-300));
        }
    }
}
