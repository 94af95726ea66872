//! Semigroup-adapted atoms `a = (1 - e^{-r^2 H})^M f_Q`, the BMO norm and the
//! pairing experiments built on them.

use alloc::vec;
use alloc::vec::Vec;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dispersive::Action;
use crate::error::{invalid, Error, Result};
use crate::fit::{fit_decay_exponent, DecayFit};
use crate::space::{Ball, Geometry, Space};
use crate::spectral::SelfAdjointOperator;
use crate::sq;
use crate::State;

/// `max(3, ceil(3/4 + 3d/8))`.
pub fn default_order(d: usize) -> u32 {
    let need = libm::ceil(0.75 + 3.0 * d as f64 / 8.0) as u32;
    need.max(3)
}

#[derive(Clone, Debug, PartialEq)]
pub enum AtomShape {
    Indicator,
    /// `1 - (d/r)^2` on the ball.
    Bump,
    /// Bump times `cos(2 pi k x_0 / r)` with `x_0` the axis-0 offset from the center.
    Oscillating {
        k: u32,
    },
    /// Uniform `[-1, 1]` values on members.
    Random {
        seed: u64,
    },
    /// Values on the ball members, in member order.
    Explicit(Vec<f64>),
}

#[derive(Clone, Debug)]
pub struct Atom {
    pub ball: Ball,
    pub order: u32,
    pub members: Vec<usize>,
    /// Full-length state supported on `members`.
    pub pre_function: State,
    pub realized: State,
}

/// Signed axis-0 offset of `x` from `c`, wrapped on tori.
fn axis0_offset(space: &Space, c: usize, x: usize) -> f64 {
    match space.geometry() {
        Geometry::GeneralGraph => space.coords(x)[0] - space.coords(c)[0],
        _ => {
            let n = space.n_per_axis() as i64;
            let mut k = space.grid_index(x)[0] as i64 - space.grid_index(c)[0] as i64;
            if space.geometry() == Geometry::TorusGrid {
                k = k.rem_euclid(n);
                if 2 * k > n {
                    k -= n;
                }
            }
            k as f64 * space.spacing()
        }
    }
}

/// `(1 - e^{-r^2 lambda})^M`.
pub fn b_multiplier(r: f64, order: u32, l: f64) -> f64 {
    libm::pow(-libm::expm1(-r * r * l), order as f64)
}

pub fn apply_b(op: &SelfAdjointOperator, r: f64, order: u32, v: &[Complex64]) -> Result<State> {
    op.apply(|l| Complex64::new(b_multiplier(r, order, l), 0.0), v)
}

/// Builds an atom with `||f_Q||_{L^2(Q)} = mu(Q)^{-1/2}`.
pub fn make_atom(
    op: &SelfAdjointOperator,
    ball: Ball,
    order: u32,
    shape: &AtomShape,
) -> Result<Atom> {
    let space = op.space();
    if order < default_order(space.dim()) {
        return Err(invalid("atom order below max(3, ceil(3/4 + 3d/8))"));
    }
    let members = space.ball_members(&ball);
    let r = ball.radius;
    let raw: Vec<f64> = match shape {
        AtomShape::Indicator => vec![1.0; members.len()],
        AtomShape::Bump => members
            .iter()
            .map(|&x| 1.0 - sq(space.dist(ball.center, x) / r))
            .collect(),
        AtomShape::Oscillating { k } => members
            .iter()
            .map(|&x| {
                let bump = 1.0 - sq(space.dist(ball.center, x) / r);
                let phase =
                    2.0 * core::f64::consts::PI * *k as f64 * axis0_offset(space, ball.center, x)
                        / r;
                bump * libm::cos(phase)
            })
            .collect(),
        AtomShape::Random { seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            members.iter().map(|_| rng.gen_range(-1.0..1.0)).collect()
        }
        AtomShape::Explicit(values) => {
            if values.len() != members.len() {
                return Err(invalid(
                    "explicit pre-function must list one value per ball member",
                ));
            }
            values.clone()
        }
    };
    let mut f = vec![Complex64::new(0.0, 0.0); space.point_count()];
    for (&x, &v) in members.iter().zip(&raw) {
        f[x] = Complex64::new(v, 0.0);
    }
    let norm = op.norm(&f);
    if !(norm > 0.0) {
        return Err(invalid("pre-function vanishes on the ball"));
    }
    let scale = 1.0 / (norm * libm::sqrt(space.measure(&members)));
    for v in f.iter_mut() {
        *v *= scale;
    }
    atom_from_pre_function(op, ball, order, f)
}

/// Atom from a full-length pre-function; rejects support outside the ball or excess norm.
pub fn atom_from_pre_function(
    op: &SelfAdjointOperator,
    ball: Ball,
    order: u32,
    f: State,
) -> Result<Atom> {
    let space = op.space();
    if f.len() != space.point_count() {
        return Err(invalid("state length does not match the space"));
    }
    let members = space.ball_members(&ball);
    let mut inside = vec![false; f.len()];
    for &x in &members {
        inside[x] = true;
    }
    if f.iter()
        .zip(&inside)
        .any(|(v, &i)| !i && *v != Complex64::new(0.0, 0.0))
    {
        return Err(invalid("pre-function is not supported in the ball"));
    }
    if op.norm(&f) > (1.0 + 1e-12) / libm::sqrt(space.measure(&members)) {
        return Err(invalid("pre-function exceeds mu(Q)^{-1/2} in L^2"));
    }
    let realized = apply_b(op, ball.radius, order, &f)?;
    Ok(Atom {
        ball,
        order,
        members,
        pre_function: f,
        realized,
    })
}

pub fn l1_norm(space: &Space, v: &[Complex64]) -> f64 {
    v.iter()
        .zip(space.weights())
        .map(|(x, w)| x.norm() * w)
        .sum()
}

/// Deterministic family: shapes x radii x centers on every `stride`-th point.
pub fn atom_family(
    op: &SelfAdjointOperator,
    shapes: &[AtomShape],
    radii: &[f64],
    stride: usize,
    order: u32,
) -> Result<Vec<Atom>> {
    if stride == 0 {
        return Err(invalid("center stride must be positive"));
    }
    let mut out = Vec::new();
    for &r in radii {
        for c in (0..op.space().point_count()).step_by(stride) {
            for s in shapes {
                out.push(make_atom(op, Ball::new(c, r)?, order, s)?);
            }
        }
    }
    Ok(out)
}

#[derive(Clone, Debug)]
pub struct AtomL1Audit {
    /// Measured sup (lower bound).
    pub max_l1: f64,
    pub per_atom: Vec<f64>,
    /// `max ||a - sum_k C(M,k) (-1)^k e^{-k r^2 H} f||_inf`.
    pub binomial_deviation: f64,
    /// `max (||a||_1 - sum_k C(M,k) ||e^{-k r^2 H} f||_1)`, nonpositive when consistent.
    pub binomial_slack: f64,
}

fn binomial(n: u32, k: u32) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

pub fn atom_l1_audit(op: &SelfAdjointOperator, atoms: &[Atom]) -> Result<AtomL1Audit> {
    if atoms.is_empty() {
        return Err(invalid("atom sample is empty"));
    }
    let space = op.space();
    let mut per_atom = Vec::with_capacity(atoms.len());
    let mut dev: f64 = 0.0;
    let mut slack = f64::NEG_INFINITY;
    for a in atoms {
        let l1 = l1_norm(space, &a.realized);
        per_atom.push(l1);
        let mut sum = vec![Complex64::new(0.0, 0.0); space.point_count()];
        let mut bound = 0.0;
        let r2 = a.ball.radius * a.ball.radius;
        for k in 0..=a.order {
            let e = op.heat(k as f64 * r2, &a.pre_function)?;
            let c = binomial(a.order, k);
            let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
            for (s, x) in sum.iter_mut().zip(&e) {
                *s += x * (c * sign);
            }
            bound += c * l1_norm(space, &e);
        }
        for (s, x) in sum.iter().zip(&a.realized) {
            dev = dev.max((s - x).norm());
        }
        slack = slack.max(l1 - bound);
    }
    let max_l1 = per_atom.iter().cloned().fold(0.0, f64::max);
    Ok(AtomL1Audit {
        max_l1,
        per_atom,
        binomial_deviation: dev,
        binomial_slack: slack,
    })
}

#[derive(Clone, Debug)]
pub struct BmoReport {
    pub norm: f64,
    pub argmax: usize,
    pub per_ball: Vec<f64>,
}

/// `sup_Q (mu(Q)^{-1} int_Q |B_Q v|^2)^{1/2}` over `balls`.
pub fn bmo_norm(
    op: &SelfAdjointOperator,
    v: &[Complex64],
    balls: &[Ball],
    order: u32,
) -> Result<BmoReport> {
    if balls.is_empty() {
        return Err(invalid("ball family is empty"));
    }
    let space = op.space();
    let w = space.weights();
    let mut cache: Vec<(f64, State)> = Vec::new();
    let mut per_ball = Vec::with_capacity(balls.len());
    for b in balls {
        let idx = match cache.iter().position(|(r, _)| *r == b.radius) {
            Some(i) => i,
            None => {
                cache.push((b.radius, apply_b(op, b.radius, order, v)?));
                cache.len() - 1
            }
        };
        let bv = &cache[idx].1;
        let members = space.ball_members(b);
        let mass: f64 = members.iter().map(|&x| bv[x].norm_sqr() * w[x]).sum();
        per_ball.push(libm::sqrt(mass / space.measure(&members)));
    }
    let (mut best, mut argmax) = (f64::NEG_INFINITY, 0);
    for (i, &v) in per_ball.iter().enumerate() {
        if v > best {
            best = v;
            argmax = i;
        }
    }
    Ok(BmoReport {
        norm: best,
        argmax,
        per_ball,
    })
}

/// `sup_a |<v, a>|` over the sampled atoms: a lower bound for the BMO norm.
pub fn bmo_dual(op: &SelfAdjointOperator, v: &[Complex64], atoms: &[Atom]) -> Result<f64> {
    if atoms.is_empty() {
        return Err(invalid("atom sample is empty"));
    }
    Ok(atoms
        .iter()
        .map(|a| op.inner(v, &a.realized).norm())
        .fold(0.0, f64::max))
}

#[derive(Clone, Debug)]
pub struct PairingReport {
    /// Measured sup (lower bound) of `|<T a, b>|`.
    pub sup: f64,
    pub argmax: (usize, usize),
}

fn apply_action(op: &SelfAdjointOperator, t: Action<'_>, v: &[Complex64]) -> Result<State> {
    match t {
        Action::Multiplier(f) => op.apply(f, v),
        Action::Map(m) => m(v),
    }
}

/// `sup |<T a, b>_mu|` over `a` in `left`, `b` in `right`, using `<T a, B_Q g> = <B_Q T a, g>`.
pub fn pairing_experiment(
    op: &SelfAdjointOperator,
    t: Action<'_>,
    left: &[Atom],
    right: &[Atom],
) -> Result<PairingReport> {
    if left.is_empty() || right.is_empty() {
        return Err(invalid("atom samples must be non-empty"));
    }
    let w = op.space().weights();
    let mut keys: Vec<(f64, u32)> = Vec::new();
    for b in right {
        if !keys.contains(&(b.ball.radius, b.order)) {
            keys.push((b.ball.radius, b.order));
        }
    }
    let (mut sup, mut argmax) = (f64::NEG_INFINITY, (0, 0));
    for (i, a) in left.iter().enumerate() {
        let ta = apply_action(op, t, &a.realized)?;
        let mut filtered = Vec::with_capacity(keys.len());
        for &(r, m) in &keys {
            filtered.push(apply_b(op, r, m, &ta)?);
        }
        for (j, b) in right.iter().enumerate() {
            let k = keys
                .iter()
                .position(|&q| q == (b.ball.radius, b.order))
                .unwrap_or(0);
            let u = &filtered[k];
            let p: Complex64 = b
                .members
                .iter()
                .map(|&x| u[x] * b.pre_function[x].conj() * w[x])
                .sum();
            if p.norm() > sup {
                sup = p.norm();
                argmax = (i, j);
            }
        }
    }
    Ok(PairingReport { sup, argmax })
}

/// Pairing for `T e^{-sH}`.
pub fn regularized_pairing(
    op: &SelfAdjointOperator,
    t: Action<'_>,
    s: f64,
    left: &[Atom],
    right: &[Atom],
) -> Result<PairingReport> {
    if !(s > 0.0) {
        return Err(invalid("regularization time must be positive"));
    }
    match t {
        Action::Multiplier(f) => {
            let g = move |l: f64| f(l) * libm::exp(-s * l);
            pairing_experiment(op, Action::Multiplier(&g), left, right)
        }
        Action::Map(m) => {
            let g = move |v: &[Complex64]| m(&op.heat(s, v)?);
            pairing_experiment(op, Action::Map(&g), left, right)
        }
    }
}

#[derive(Clone, Debug)]
pub struct PairingDecay {
    pub rows: Vec<(f64, f64)>,
    pub fit: DecayFit,
}

/// Pairing sup of `e^{itH} psi_{m'}(h^2 H)` across `t_grid`, fitted against `|t|`.
pub fn pairing_decay_experiment(
    op: &SelfAdjointOperator,
    h: f64,
    m_prime: u32,
    t_grid: &[f64],
    left: &[Atom],
    right: &[Atom],
) -> Result<PairingDecay> {
    let mut rows = Vec::new();
    for &t in t_grid {
        let f = move |l: f64| {
            Complex64::from_polar(crate::spectral::psi(m_prime, 1.0, h * h * l), t * l)
        };
        rows.push((
            t.abs(),
            pairing_experiment(op, Action::Multiplier(&f), left, right)?.sup,
        ));
    }
    let fit = fit_decay_exponent(&rows)?;
    Ok(PairingDecay { rows, fit })
}

#[derive(Clone, Debug)]
pub struct L1LinfRow {
    pub s: f64,
    pub value: f64,
    /// `s > P^2/16` on tori.
    pub flagged: bool,
}

#[derive(Clone, Debug)]
pub struct L1LinfReport {
    pub rows: Vec<L1LinfRow>,
    /// Fit over unflagged rows, when at least three span a decade.
    pub fit: Option<DecayFit>,
}

/// `||T e^{-sH}||_{L^1 -> L^inf} = max |K(x,y)|`; `family(s, lambda)` is the multiplier of `T e^{-sH}`.
pub fn l1_linf_regularized(
    op: &SelfAdjointOperator,
    family: &dyn Fn(f64, f64) -> Complex64,
    s: f64,
) -> Result<f64> {
    let space = op.space();
    if space.geometry() == Geometry::TorusGrid {
        let col = op.kernel_column(|l| family(s, l), 0)?;
        return Ok(col.iter().map(|k| k.norm()).fold(0.0, f64::max));
    }
    let k = op.kernel_matrix(|l| family(s, l))?;
    Ok(k.iter().map(|k| k.norm()).fold(0.0, f64::max))
}

pub fn l1_linf_sweep(
    op: &SelfAdjointOperator,
    family: &dyn Fn(f64, f64) -> Complex64,
    s_grid: &[f64],
) -> Result<L1LinfReport> {
    let budget = op
        .space()
        .period()
        .map(|p| p * p / 16.0)
        .unwrap_or(f64::INFINITY);
    let mut rows = Vec::new();
    for &s in s_grid {
        if !(s > 0.0) {
            return Err(invalid("regularization time must be positive"));
        }
        rows.push(L1LinfRow {
            s,
            value: l1_linf_regularized(op, family, s)?,
            flagged: s > budget,
        });
    }
    let samples: Vec<(f64, f64)> = rows
        .iter()
        .filter(|r| !r.flagged)
        .map(|r| (r.s, r.value))
        .collect();
    let fit = fit_decay_exponent(&samples).ok();
    Ok(L1LinfReport { rows, fit })
}

#[derive(Clone, Debug)]
pub struct SumBound {
    pub sum: f64,
    pub product: f64,
    pub l_max: u32,
}

/// `S(x) = sum_l (2^l x)^d e^{-(2^l x)^2}`, truncated once terms are decreasing and below 1e-16.
pub fn sum_bound_check(x: f64, d: u32, big_n: u32) -> Result<SumBound> {
    if !(x > 0.0) || big_n == 0 {
        return Err(invalid("sum bound needs x > 0 and N >= 1"));
    }
    let turn = libm::sqrt(d as f64 / 2.0);
    let mut sum = 0.0;
    let mut l = 0u32;
    loop {
        let y = libm::ldexp(x, l as i32);
        let term = libm::pow(y, d as f64) * libm::exp(-y * y);
        sum += term;
        if y >= turn && term < 1e-16 {
            break;
        }
        l += 1;
        if l > 2048 {
            return Err(Error::NoDecay);
        }
    }
    Ok(SumBound {
        sum,
        product: sum * libm::pow(x, big_n as f64),
        l_max: l,
    })
}

/// `max_x S(x) x^N` over `xs`.
pub fn sum_bound_constant(xs: &[f64], d: u32, big_n: u32) -> Result<f64> {
    let mut c: f64 = 0.0;
    for &x in xs {
        c = c.max(sum_bound_check(x, d, big_n)?.product);
    }
    Ok(c)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::{psi, to_complex};
    use proptest::prelude::*;
    use rand::Rng;

    fn torus1(n: usize) -> SelfAdjointOperator {
        SelfAdjointOperator::torus_laplacian(&Space::torus_grid(1, n, 1.0).unwrap()).unwrap()
    }

    #[test]
    fn order_default() {
        assert_eq!(default_order(1), 3);
        assert_eq!(default_order(2), 3);
        assert_eq!(default_order(6), 3);
        assert_eq!(default_order(7), 4);
    }

    #[test]
    fn indicator_atom_valid() {
        let op = torus1(128);
        let sp = op.space();
        let ball = Ball::new(10, 4.0 * sp.spacing()).unwrap();
        let a = make_atom(&op, ball, 3, &AtomShape::Indicator).unwrap();
        let mu = sp.measure(&a.members);
        assert!((op.norm(&a.pre_function) * libm::sqrt(mu) - 1.0).abs() < 1e-12);
        for (x, v) in a.pre_function.iter().enumerate() {
            if !a.members.contains(&x) {
                assert_eq!(*v, Complex64::new(0.0, 0.0));
            }
        }
        assert!(op.norm(&a.realized) > 0.0);
        assert!(make_atom(&op, ball, 2, &AtomShape::Indicator).is_err());
    }

    #[test]
    fn explicit_support_checked() {
        let op = torus1(64);
        let ball = Ball::new(5, 2.0 / 64.0).unwrap();
        let mut f = vec![Complex64::new(0.0, 0.0); 64];
        f[20] = Complex64::new(1e-3, 0.0);
        assert!(atom_from_pre_function(&op, ball, 3, f).is_err());
        assert!(make_atom(&op, ball, 3, &AtomShape::Explicit(vec![1.0, 2.0])).is_err());
        let a = make_atom(
            &op,
            ball,
            3,
            &AtomShape::Explicit(vec![1.0, -1.0, 2.0, 0.5, 1.0]),
        )
        .unwrap();
        assert_eq!(a.members.len(), 5);
    }

    #[test]
    fn random_atoms_deterministic() {
        let op = torus1(64);
        let ball = Ball::new(5, 3.0 / 64.0).unwrap();
        let a = make_atom(&op, ball, 3, &AtomShape::Random { seed: 9 }).unwrap();
        let b = make_atom(&op, ball, 3, &AtomShape::Random { seed: 9 }).unwrap();
        let bits = |v: &State| {
            v.iter()
                .map(|c| (c.re.to_bits(), c.im.to_bits()))
                .collect::<Vec<_>>()
        };
        assert_eq!(bits(&a.realized), bits(&b.realized));
    }

    #[test]
    fn l1_audit_indicator_family() {
        let op = torus1(256);
        let h = op.space().spacing();
        let radii = [4.0 * h, 16.0 * h, 64.0 * h];
        let atoms = atom_family(&op, &[AtomShape::Indicator], &radii, 13, 3).unwrap();
        assert!(atoms.len() >= 50);
        let audit = atom_l1_audit(&op, &atoms).unwrap();
        assert!(audit.max_l1 <= 5.0, "{}", audit.max_l1);
        assert!(audit.max_l1 <= 16.0);
        assert!(audit.binomial_deviation < 1e-10);
        assert!(audit.binomial_slack <= 1e-12);
        let single = atom_l1_audit(&op, &atoms[..1]).unwrap();
        assert_eq!(single.max_l1, single.per_atom[0]);
    }

    #[test]
    fn bmo_examples() {
        let op = torus1(128);
        let sp = op.space();
        let h = sp.spacing();
        let balls: Vec<Ball> = [2.0, 4.0, 8.0, 16.0, 32.0]
            .iter()
            .flat_map(|&k| {
                (0..128)
                    .step_by(9)
                    .map(move |c| Ball::new(c, k * h).unwrap())
            })
            .collect();
        let constant = to_complex(&[0.7; 128]);
        assert!(bmo_norm(&op, &constant, &balls, 3).unwrap().norm < 1e-12);
        // Single eigenmode: closed form (1 - e^{-r^2 lambda})^M (avg_Q phi^2)^{1/2}.
        let k = 5;
        let lam = op.eigenvalues()[k];
        let phi = op.mode(k);
        let rep = bmo_norm(&op, &to_complex(&phi), &balls, 3).unwrap();
        for (b, &v) in balls.iter().zip(&rep.per_ball) {
            let m = sp.ball_members(b);
            let avg: f64 = m
                .iter()
                .map(|&x| phi[x] * phi[x] * sp.weight(x))
                .sum::<f64>()
                / sp.measure(&m);
            let expected = b_multiplier(b.radius, 3, lam) * libm::sqrt(avg);
            assert!((v - expected).abs() < 1e-10);
        }
    }

    #[test]
    fn bmo_duality_within_four() {
        let op = torus1(128);
        let sp = op.space();
        let h = sp.spacing();
        let radii = [2.0 * h, 4.0 * h, 8.0 * h, 16.0 * h, 32.0 * h];
        let shapes = [
            AtomShape::Indicator,
            AtomShape::Bump,
            AtomShape::Oscillating { k: 1 },
            AtomShape::Oscillating { k: 2 },
            AtomShape::Random { seed: 1 },
            AtomShape::Random { seed: 2 },
        ];
        let atoms = atom_family(&op, &shapes, &radii, 4, 3).unwrap();
        let balls: Vec<Ball> = atoms.iter().map(|a| a.ball).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let v: Vec<f64> = (0..128).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let v = to_complex(&v);
            let ball = bmo_norm(&op, &v, &balls, 3).unwrap().norm;
            let dual = bmo_dual(&op, &v, &atoms).unwrap();
            assert!(dual <= ball * (1.0 + 1e-10));
            assert!(ball <= 4.0 * dual, "ball={ball} dual={dual}");
        }
    }

    #[test]
    fn pairing_identity_and_symmetry() {
        let op = torus1(128);
        let h = op.space().spacing();
        let atoms = atom_family(
            &op,
            &[AtomShape::Indicator, AtomShape::Bump],
            &[3.0 * h, 6.0 * h],
            16,
            3,
        )
        .unwrap();
        let id = |_: f64| Complex64::new(1.0, 0.0);
        let rep =
            pairing_experiment(&op, Action::Multiplier(&id), &atoms[..1], &atoms[..1]).unwrap();
        let a2 = op.norm(&atoms[0].realized).powi(2);
        assert!((rep.sup - a2).abs() < 1e-12 * a2);
        let rep = pairing_experiment(&op, Action::Multiplier(&id), &atoms, &atoms).unwrap();
        let bound = atoms
            .iter()
            .map(|a| op.norm(&a.realized))
            .fold(0.0, f64::max)
            .powi(2);
        assert!(rep.sup <= bound * (1.0 + 1e-12));
        let heat = |l: f64| Complex64::new(libm::exp(-1e-3 * l), 0.0);
        for i in 0..atoms.len() {
            for j in 0..atoms.len() {
                let ab = pairing_experiment(
                    &op,
                    Action::Multiplier(&heat),
                    &atoms[i..=i],
                    &atoms[j..=j],
                )
                .unwrap()
                .sup;
                let ba = pairing_experiment(
                    &op,
                    Action::Multiplier(&heat),
                    &atoms[j..=j],
                    &atoms[i..=i],
                )
                .unwrap()
                .sup;
                assert!((ab - ba).abs() <= 1e-10 * ab.max(1e-300));
            }
        }
    }

    #[test]
    fn regularized_limits() {
        let op = torus1(128);
        let h = op.space().spacing();
        let atoms = atom_family(&op, &[AtomShape::Indicator], &[3.0 * h], 16, 3).unwrap();
        let t = 2e-4;
        let f = move |l: f64| Complex64::from_polar(psi(1, 1.0, 4.0 * h * h * l), t * l);
        let base = pairing_experiment(&op, Action::Multiplier(&f), &atoms, &atoms)
            .unwrap()
            .sup;
        let tiny = regularized_pairing(&op, Action::Multiplier(&f), 1e-6, &atoms, &atoms)
            .unwrap()
            .sup;
        assert!((tiny / base - 1.0).abs() < 0.01);
        // Atoms are orthogonal to constants, so large s kills the pairing.
        let big = regularized_pairing(&op, Action::Multiplier(&f), 10.0, &atoms, &atoms)
            .unwrap()
            .sup;
        assert!(big < 1e-12);
    }

    #[test]
    fn l1_linf_heat_exponent() {
        let op = torus1(1024);
        let id = |s: f64, l: f64| Complex64::new(libm::exp(-s * l), 0.0);
        let s_grid = [1e-4, 2e-4, 5e-4, 1e-3];
        let rep = l1_linf_sweep(&op, &id, &s_grid).unwrap();
        let fit = rep.fit.unwrap();
        assert!((fit.slope + 0.5).abs() < 0.1, "{}", fit.slope);
        let oracle = crate::kernels::theta_heat_kernel(1.0, 1e-3, &[0.0]);
        assert!((rep.rows[3].value / oracle - 1.0).abs() < 0.01);
        let rep = l1_linf_sweep(&op, &id, &[0.1]).unwrap();
        assert!(rep.rows[0].flagged && rep.fit.is_none());
    }

    #[test]
    fn sum_bound_examples() {
        let s = sum_bound_check(1.0, 0, 1).unwrap();
        let expected = libm::exp(-1.0) + libm::exp(-4.0) + libm::exp(-16.0) + libm::exp(-64.0);
        assert!((s.sum - expected).abs() < 1e-15);
        assert!((s.sum - 0.3863).abs() < 5e-4);
        let s = sum_bound_check(10.0, 2, 1).unwrap();
        assert!(s.product < 1e-40);
        let xs: Vec<f64> = (0..=40)
            .map(|i| libm::pow(10.0, -1.0 + i as f64 / 20.0))
            .collect();
        let c = sum_bound_constant(&xs, 2, 1).unwrap();
        assert!(c.is_finite() && c > 0.0);
        assert!(sum_bound_check(0.0, 1, 1).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn realization_linear(alpha in 0.01f64..1.0, c in 0usize..64) {
            let op = torus1(64);
            let ball = Ball::new(c, 3.0 / 64.0).unwrap();
            let a = make_atom(&op, ball, 3, &AtomShape::Bump).unwrap();
            let scaled: State = a.pre_function.iter().map(|v| v * alpha).collect();
            let b = atom_from_pre_function(&op, ball, 3, scaled).unwrap();
            for (x, y) in a.realized.iter().zip(&b.realized) {
                prop_assert!((x * alpha - y).norm() <= 1e-14);
            }
        }

        #[test]
        fn kernel_annihilated(v in -5.0f64..5.0) {
            let op = torus1(64);
            let balls: Vec<Ball> = (1..5).map(|k| Ball::new(3 * k, k as f64 * 2.0 / 64.0).unwrap()).collect();
            let c = to_complex(&[v; 64]);
            prop_assert!(bmo_norm(&op, &c, &balls, 3).unwrap().norm < 1e-12);
        }
    }
}
