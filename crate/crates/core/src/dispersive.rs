//! Microlocalized L2 -> L2 constants between balls: Property (H_m(A)),
//! Schrödinger decay sweeps, the wave envelope and the three-range split of
//! the transmutation integral.

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{invalid, Error, Result};
use crate::fit::{fit_decay_exponent, DecayFit};
use crate::kernels::TransmutationRule;
use crate::linalg::largest_singular_value;
use crate::space::{Ball, Geometry, Space};
use crate::spectral::{psi, Builder, KernelBox, SelfAdjointOperator};
use crate::State;

/// Largest ball (in points) accepted by the column-wise constructions.
pub const BALL_CAP: usize = 256;

/// A linear operator given either as a spectral multiplier or as a map on states.
#[derive(Clone, Copy)]
pub enum Action<'a> {
    Multiplier(&'a dyn Fn(f64) -> Complex64),
    Map(&'a dyn Fn(&[Complex64]) -> Result<State>),
}

enum Source<'a> {
    Box(KernelBox),
    Columns(&'a dyn Fn(f64) -> Complex64),
    Map(&'a dyn Fn(&[Complex64]) -> Result<State>),
}

/// Kernel access for one operator, reused across many point-set pairs.
pub struct PreparedKernel<'a> {
    op: &'a SelfAdjointOperator,
    source: Source<'a>,
}

impl<'a> PreparedKernel<'a> {
    /// Multipliers on the analytic torus use a translation-invariant kernel box
    /// covering per-axis offsets up to `reach` cells; everything else is built
    /// column by column.
    pub fn new(op: &'a SelfAdjointOperator, action: Action<'a>, reach: usize) -> Result<Self> {
        let source = match action {
            Action::Multiplier(f) if op.builder() == Builder::TorusLaplacianAnalytic => {
                Source::Box(op.torus_kernel_box(f, reach)?)
            }
            Action::Multiplier(f) => Source::Columns(f),
            Action::Map(m) => Source::Map(m),
        };
        Ok(PreparedKernel { op, source })
    }

    /// Column-wise construction even for torus multipliers.
    pub fn by_columns(op: &'a SelfAdjointOperator, action: Action<'a>) -> Self {
        let source = match action {
            Action::Multiplier(f) => Source::Columns(f),
            Action::Map(m) => Source::Map(m),
        };
        PreparedKernel { op, source }
    }

    /// `D_rows^{1/2} T[rows, cols] D_cols^{-1/2}`.
    pub fn block(&self, rows: &[usize], cols: &[usize]) -> Result<DMatrix<Complex64>> {
        let space = self.op.space();
        let w = space.weights();
        let mut m = DMatrix::<Complex64>::zeros(rows.len(), cols.len());
        match &self.source {
            Source::Box(kb) => {
                for (j, &y) in cols.iter().enumerate() {
                    let gy = space.grid_index(y);
                    for (i, &x) in rows.iter().enumerate() {
                        let gx = space.grid_index(x);
                        let dx = [
                            gx[0] as i64 - gy[0] as i64,
                            gx[1] as i64 - gy[1] as i64,
                            gx[2] as i64 - gy[2] as i64,
                        ];
                        let k = kb
                            .get(dx)
                            .ok_or_else(|| invalid("kernel box reach too small for pair"))?;
                        m[(i, j)] = k * libm::sqrt(w[x] * w[y]);
                    }
                }
            }
            Source::Columns(f) => {
                for (j, &y) in cols.iter().enumerate() {
                    let col = self.op.kernel_column(f, y)?;
                    for (i, &x) in rows.iter().enumerate() {
                        m[(i, j)] = col[x] * libm::sqrt(w[x] * w[y]);
                    }
                }
            }
            Source::Map(t) => {
                for (j, &y) in cols.iter().enumerate() {
                    let mut e = vec![Complex64::new(0.0, 0.0); space.point_count()];
                    e[y] = Complex64::new(1.0, 0.0);
                    let col = t(&e)?;
                    for (i, &x) in rows.iter().enumerate() {
                        m[(i, j)] = col[x] * libm::sqrt(w[x] / w[y]);
                    }
                }
            }
        }
        Ok(m)
    }

    /// `||T||_{L^2(from) -> L^2(to)}`.
    pub fn norm(&self, from: &[usize], to: &[usize]) -> Result<f64> {
        if from.is_empty() || to.is_empty() {
            return Err(invalid("localized norm needs non-empty sets"));
        }
        Ok(largest_singular_value(&self.block(to, from)?))
    }
}

/// Per-axis grid reach (in cells) covering every offset between two point sets.
pub fn reach_between(space: &Space, a: &[usize], b: &[usize]) -> usize {
    if space.geometry() == Geometry::GeneralGraph {
        return 0;
    }
    let n = space.n_per_axis();
    let mut reach = 0;
    for &x in a {
        let gx = space.grid_index(x);
        for &y in b {
            let gy = space.grid_index(y);
            for ax in 0..3 {
                let k = gx[ax].abs_diff(gy[ax]);
                let k = if space.geometry() == Geometry::TorusGrid {
                    k.min(n - k)
                } else {
                    k
                };
                reach = reach.max(k);
            }
        }
    }
    reach
}

/// `||T||_{L^2(E) -> L^2(F)}`: largest singular value of the mu-weighted block.
pub fn localized_norm(
    op: &SelfAdjointOperator,
    action: Action<'_>,
    e: &[usize],
    f: &[usize],
) -> Result<f64> {
    let reach = reach_between(op.space(), f, e);
    PreparedKernel::new(op, action, reach)?.norm(e, f)
}

/// Two equal-radius balls and their set distance `L`.
#[derive(Clone, Debug)]
pub struct BallPair {
    pub b: Ball,
    pub bt: Ball,
    pub l: f64,
    pub members_b: Vec<usize>,
    pub members_bt: Vec<usize>,
}

impl BallPair {
    pub fn new(space: &Space, b: Ball, bt: Ball) -> Result<Self> {
        if (b.radius - bt.radius).abs() > 1e-12 * b.radius {
            return Err(invalid("ball pair needs equal radii"));
        }
        let mb = space.ball_members(&b);
        let mbt = space.ball_members(&bt);
        if mb.len() > BALL_CAP || mbt.len() > BALL_CAP {
            return Err(invalid("ball exceeds the member cap"));
        }
        let mut l = f64::INFINITY;
        for &x in &mb {
            for &y in &mbt {
                l = l.min(space.dist(x, y));
            }
        }
        Ok(BallPair {
            b,
            bt,
            l,
            members_b: mb,
            members_bt: mbt,
        })
    }

    pub fn normalizer(&self, space: &Space) -> f64 {
        libm::sqrt(space.measure(&self.members_b) * space.measure(&self.members_bt))
    }
}

/// Pairs on a torus: `B` at grid index 0 and `B~` displaced by `L + 2r` along
/// axis 0 and, for `d >= 2` with `diagonal`, along the first diagonal.
pub fn torus_pair_family(
    space: &Space,
    r: f64,
    l_values: &[f64],
    diagonal: bool,
) -> Result<Vec<BallPair>> {
    if space.geometry() != Geometry::TorusGrid {
        return Err(invalid("torus pair family needs a torus"));
    }
    let h = space.spacing();
    let b = Ball::new(0, r)?;
    // Outermost member offset along an axis.
    let kr = libm::floor(r / h + 1e-9) as i64;
    let mut out = Vec::new();
    for &l in l_values {
        let sep = if l > 0.0 { l + 2.0 * r } else { 0.0 };
        let k = if l > 0.0 {
            libm::round(l / h) as i64 + 2 * kr
        } else {
            0
        };
        out.push(BallPair::new(
            space,
            b,
            Ball::new(space.index_of([k, 0, 0]), r)?,
        )?);
        if diagonal && space.dim() >= 2 && l > 0.0 {
            let kd = libm::round(sep / h / core::f64::consts::SQRT_2) as i64;
            out.push(BallPair::new(
                space,
                b,
                Ball::new(space.index_of([kd, kd, 0]), r)?,
            )?);
        }
    }
    Ok(out)
}

/// Pairs between centers on every `stride`-th point with separation at most `l_max`.
pub fn lattice_pair_family(
    space: &Space,
    r: f64,
    stride: usize,
    l_max: f64,
) -> Result<Vec<BallPair>> {
    if stride == 0 {
        return Err(invalid("stride must be positive"));
    }
    let centers: Vec<usize> = (0..space.point_count()).step_by(stride).collect();
    let mut out = Vec::new();
    for (i, &a) in centers.iter().enumerate() {
        for &c in &centers[i..] {
            if space.dist(a, c) > l_max + 2.0 * r + 1e-12 {
                continue;
            }
            let p = BallPair::new(space, Ball::new(a, r)?, Ball::new(c, r)?)?;
            if p.l <= l_max + 1e-12 {
                out.push(p);
            }
        }
    }
    Ok(out)
}

/// `L = 0, r, 2r, ...` up to `l_max` inclusive.
pub fn separations(r: f64, l_max: f64) -> Vec<f64> {
    let count = libm::floor(l_max / r + 1e-9) as usize;
    (0..=count).map(|k| k as f64 * r).collect()
}

#[derive(Clone, Debug)]
pub struct PairRow {
    pub l: f64,
    pub measured: f64,
    pub normalizer: f64,
    pub ratio: f64,
}

#[derive(Clone, Debug)]
pub struct HmResult {
    pub a_star: f64,
    /// First pair attaining the maximum.
    pub argmax: usize,
    pub rows: Vec<PairRow>,
}

fn max_reach(space: &Space, pairs: &[BallPair]) -> usize {
    pairs
        .iter()
        .map(|p| reach_between(space, &p.members_bt, &p.members_b))
        .max()
        .unwrap_or(0)
}

/// `A* = max_pairs ||T psi_{m,n}(r^2 H)||_{L^2(B) -> L^2(B~)} / (mu(B) mu(B~))^{1/2}`.
pub fn hm_constant(
    op: &SelfAdjointOperator,
    t: Action<'_>,
    m: u32,
    n: f64,
    r: f64,
    pairs: &[BallPair],
) -> Result<HmResult> {
    if pairs.is_empty() {
        return Err(invalid("pair family is empty"));
    }
    let r2 = r * r;
    let reach = max_reach(op.space(), pairs);
    match t {
        Action::Multiplier(f) => {
            let g = move |l: f64| f(l) * psi(m, n, r2 * l);
            let kernel = PreparedKernel::new(op, Action::Multiplier(&g), reach)?;
            hm_over_pairs(op, &kernel, pairs)
        }
        Action::Map(tm) => {
            let g = move |v: &[Complex64]| {
                let loc = op.apply(|l| Complex64::new(psi(m, n, r2 * l), 0.0), v)?;
                tm(&loc)
            };
            let kernel = PreparedKernel::new(op, Action::Map(&g), reach)?;
            hm_over_pairs(op, &kernel, pairs)
        }
    }
}

fn hm_over_pairs(
    op: &SelfAdjointOperator,
    kernel: &PreparedKernel<'_>,
    pairs: &[BallPair],
) -> Result<HmResult> {
    let mut rows = Vec::with_capacity(pairs.len());
    let (mut best, mut arg) = (f64::NEG_INFINITY, 0);
    for (i, p) in pairs.iter().enumerate() {
        let measured = kernel.norm(&p.members_b, &p.members_bt)?;
        let normalizer = p.normalizer(op.space());
        let ratio = measured / normalizer;
        if ratio > best {
            best = ratio;
            arg = i;
        }
        rows.push(PairRow {
            l: p.l,
            measured,
            normalizer,
            ratio,
        });
    }
    Ok(HmResult {
        a_star: best,
        argmax: arg,
        rows,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Regime {
    /// `|t| <= h^2`.
    Trivial,
    /// `h^2 < |t| <= h^{1+eps}`.
    Intermediate,
    /// `|t| > h^{1+eps}`.
    Beyond,
}

impl Regime {
    pub fn label(&self) -> &'static str {
        match self {
            Regime::Trivial => "trivial",
            Regime::Intermediate => "intermediate",
            Regime::Beyond => "beyond",
        }
    }
}

#[derive(Clone, Debug)]
pub struct SchrodingerParams {
    /// Frequency scale of `psi_{m'}(h^2 H)`.
    pub h: f64,
    pub m_prime: u32,
    pub m: u32,
    /// Second index of the localizer `psi_{m,n}(r^2 H)`.
    pub n: f64,
    pub r: f64,
    pub t_grid: Vec<f64>,
    pub epsilon: f64,
}

#[derive(Clone, Debug)]
pub struct DecayRow {
    pub t: f64,
    pub a_star: f64,
    pub argmax_l: f64,
    pub regime: Regime,
    pub pairs: Vec<PairRow>,
}

#[derive(Clone, Debug)]
pub struct DecayReport {
    pub fit: DecayFit,
    pub rows: Vec<DecayRow>,
    /// Times dropped for leaving `[h^2, min(h, budget)]`.
    pub excluded: Vec<f64>,
    /// Largest admissible `|t|` from the wrap budget.
    pub t_budget: f64,
    /// False for `d = 1`, which lies outside the decay theorems' hypotheses.
    pub within_hypotheses: bool,
}

/// Peak of `|g|` over the spectrum.
fn spectral_peak<G: Fn(f64) -> f64>(op: &SelfAdjointOperator, g: G) -> f64 {
    let mut best = (0.0, f64::NEG_INFINITY);
    let mut last = f64::NAN;
    for &l in op.eigenvalues() {
        if l == last {
            continue;
        }
        last = l;
        let v = g(l);
        if v > best.1 {
            best = (l, v);
        }
    }
    best.0
}

/// Largest `|t|` with `2 xi* |t| + 2r <= P/2`, where `xi*^2` is the spectral peak of
/// the frequency profile; infinite off the torus.
pub fn schrodinger_time_budget(op: &SelfAdjointOperator, p: &SchrodingerParams) -> f64 {
    let Some(period) = op.space().period() else {
        return f64::INFINITY;
    };
    let (h2, r2) = (p.h * p.h, p.r * p.r);
    let peak = spectral_peak(op, |l| psi(p.m_prime, 1.0, h2 * l) * psi(p.m, p.n, r2 * l));
    let xi = libm::sqrt(peak.max(1e-300));
    ((period / 2.0 - 2.0 * p.r) / (2.0 * xi)).max(0.0)
}

/// Fits `A*(t)` of `T_t = e^{itH} psi_{m'}(h^2 H)` against `|t|`.
pub fn schrodinger_decay_experiment(
    op: &SelfAdjointOperator,
    p: &SchrodingerParams,
    pairs: &[BallPair],
) -> Result<DecayReport> {
    let d = op.space().dim();
    if (p.m as usize) * 2 < d {
        return Err(invalid("m must be at least ceil(d/2)"));
    }
    let h2 = p.h * p.h;
    let budget = schrodinger_time_budget(op, p);
    let hi = p.h.min(budget);
    let mut rows = Vec::new();
    let mut excluded = Vec::new();
    for &t in &p.t_grid {
        let at = t.abs();
        if at < h2 * (1.0 - 1e-12) || at > hi * (1.0 + 1e-12) {
            excluded.push(t);
            continue;
        }
        let (mp, hh) = (p.m_prime, h2);
        let f = move |l: f64| Complex64::from_polar(psi(mp, 1.0, hh * l), t * l);
        let res = hm_constant(op, Action::Multiplier(&f), p.m, p.n, p.r, pairs)?;
        let regime = if at <= h2 {
            Regime::Trivial
        } else if at <= libm::pow(p.h, 1.0 + p.epsilon) {
            Regime::Intermediate
        } else {
            Regime::Beyond
        };
        rows.push(DecayRow {
            t,
            a_star: res.a_star,
            argmax_l: res.rows[res.argmax].l,
            regime,
            pairs: res.rows,
        });
    }
    if rows.len() < 3 {
        return Err(Error::TooFewSamples {
            got: rows.len(),
            need: 3,
        });
    }
    let samples: Vec<(f64, f64)> = rows.iter().map(|r| (r.t.abs(), r.a_star)).collect();
    let fit = fit_decay_exponent(&samples)?;
    Ok(DecayReport {
        fit,
        rows,
        excluded,
        t_budget: budget,
        within_hypotheses: d > 1,
    })
}

#[derive(Clone, Debug)]
pub struct NIndependence {
    pub per_n: Vec<(f64, DecayReport)>,
    /// `max - min` of the fitted slopes.
    pub drift: f64,
    /// Extremes of `A*_n(t) / A*_{n_0}(t)` over all `t`.
    pub ratio_range: (f64, f64),
}

/// Repeats the decay sweep for each `n` in `n_set`.
pub fn check_n_independence(
    op: &SelfAdjointOperator,
    base: &SchrodingerParams,
    n_set: &[f64],
    pairs: &[BallPair],
) -> Result<NIndependence> {
    if n_set.is_empty() {
        return Err(invalid("n set is empty"));
    }
    let mut per_n = Vec::new();
    for &n in n_set {
        let mut p = base.clone();
        p.n = n;
        per_n.push((n, schrodinger_decay_experiment(op, &p, pairs)?));
    }
    let slopes: Vec<f64> = per_n.iter().map(|(_, r)| r.fit.slope).collect();
    let drift = slopes.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
        - slopes.iter().cloned().fold(f64::INFINITY, f64::min);
    let base_rows = &per_n[0].1.rows;
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for (_, rep) in &per_n {
        for (a, b) in rep.rows.iter().zip(base_rows) {
            let q = a.a_star / b.a_star;
            lo = lo.min(q);
            hi = hi.max(q);
        }
    }
    Ok(NIndependence {
        per_n,
        drift,
        ratio_range: (lo, hi),
    })
}

#[derive(Clone, Debug)]
pub struct MMonotonicity {
    pub a_stars: Vec<(u32, f64)>,
    /// `A*_{m_{i+1}} / A*_{m_i}` for consecutive entries.
    pub constants: Vec<f64>,
    pub pass: bool,
}

/// Checks `A*_{m'} <= C A*_m` for consecutive `m < m'` in `m_list`.
pub fn check_m_monotonicity(
    op: &SelfAdjointOperator,
    t: Action<'_>,
    m_list: &[u32],
    r: f64,
    pairs: &[BallPair],
    bound: f64,
) -> Result<MMonotonicity> {
    if m_list.windows(2).any(|w| w[1] < w[0]) {
        return Err(invalid("m list must be ascending"));
    }
    let mut a_stars = Vec::new();
    for &m in m_list {
        a_stars.push((m, hm_constant(op, t, m, 1.0, r, pairs)?.a_star));
    }
    let constants: Vec<f64> = a_stars.windows(2).map(|w| w[1].1 / w[0].1).collect();
    let pass = constants.iter().all(|&c| c <= bound);
    Ok(MMonotonicity {
        a_stars,
        constants,
        pass,
    })
}

/// `(r/(s+r))^{(d-1)/2} (1 + |L-s|/r)^{-(d+1)/2}`.
pub fn wave_envelope(d: usize, r: f64, s: f64, l: f64) -> f64 {
    let df = d as f64;
    libm::pow(r / (s + r), (df - 1.0) / 2.0) * libm::pow(1.0 + (l - s).abs() / r, -(df + 1.0) / 2.0)
}

#[derive(Clone, Debug)]
pub struct WaveRow {
    pub s: f64,
    pub l: f64,
    /// `||cos(s sqrt H) psi_{m0}(r^2 H)||` between the balls.
    pub measured: f64,
    /// `||cos(s sqrt H)||` between the balls.
    pub bare: f64,
    pub normalizer: f64,
    pub envelope: f64,
    pub ratio: f64,
}

#[derive(Clone, Debug)]
pub struct WaveReport {
    pub rows: Vec<WaveRow>,
    pub c_env: f64,
    /// Per `s`: the separation maximizing the localized norm.
    pub ridge: Vec<(f64, f64)>,
    /// Largest bare norm over rows with `L > s + 2r`; zero when there are none.
    pub cone_max: f64,
    /// Pairs skipped for violating `s + L + 2r <= P/4`.
    pub skipped: usize,
}

/// Per-`(s, L)` table of the localized wave norm against the envelope.
/// The normalized quantity is `measured / (mu(B) mu(B~))^{1/2}` divided by the envelope
/// expressed in the same units, so ratios compare shapes rather than ball volumes.
pub fn wave_envelope_experiment(
    op: &SelfAdjointOperator,
    m0: u32,
    r: f64,
    s_grid: &[f64],
    pairs: &[BallPair],
) -> Result<WaveReport> {
    let space = op.space();
    let d = space.dim();
    let budget = space.period().map(|p| p / 4.0).unwrap_or(f64::INFINITY);
    let r2 = r * r;
    let reach = max_reach(space, pairs);
    let mut rows = Vec::new();
    let mut ridge = Vec::new();
    let mut cone_max: f64 = 0.0;
    let mut skipped = 0;
    for &s in s_grid {
        if !(s >= 0.0) {
            return Err(invalid("wave times must be nonnegative"));
        }
        let loc =
            move |l: f64| Complex64::new(libm::cos(s * libm::sqrt(l)) * psi(m0, 1.0, r2 * l), 0.0);
        let bare = move |l: f64| Complex64::new(libm::cos(s * libm::sqrt(l)), 0.0);
        let k_loc = PreparedKernel::new(op, Action::Multiplier(&loc), reach)?;
        let identity = |v: &[Complex64]| Ok(v.to_vec());
        // cos(0 sqrt H) = Id exactly.
        let k_bare = if s == 0.0 {
            PreparedKernel::new(op, Action::Map(&identity), reach)?
        } else {
            PreparedKernel::new(op, Action::Multiplier(&bare), reach)?
        };
        let mut best = (f64::NEG_INFINITY, 0.0);
        for p in pairs {
            if s + p.l + 2.0 * r > budget * (1.0 + 1e-12) {
                skipped += 1;
                continue;
            }
            let measured = k_loc.norm(&p.members_b, &p.members_bt)?;
            let bare_v = k_bare.norm(&p.members_b, &p.members_bt)?;
            let normalizer = p.normalizer(space);
            let envelope = wave_envelope(d, r, s, p.l);
            let ratio = measured / envelope;
            if measured > best.0 {
                best = (measured, p.l);
            }
            if p.l > s + 2.0 * r {
                cone_max = cone_max.max(bare_v);
            }
            rows.push(WaveRow {
                s,
                l: p.l,
                measured,
                bare: bare_v,
                normalizer,
                envelope,
                ratio,
            });
        }
        if best.0 > f64::NEG_INFINITY {
            ridge.push((s, best.1));
        }
    }
    let c_env = rows.iter().map(|r| r.ratio).fold(0.0, f64::max);
    Ok(WaveReport {
        rows,
        c_env,
        ridge,
        cone_max,
        skipped,
    })
}

/// Cubic cutoff: 1 on `[0, a]`, 0 beyond `2a`, `1 - (3x^2 - 2x^3)` with `x = (s-a)/a` between.
pub fn smoothstep_cutoff(s: f64, a: f64) -> f64 {
    if s <= a {
        1.0
    } else if s >= 2.0 * a {
        0.0
    } else {
        let x = (s - a) / a;
        1.0 - (3.0 * x * x - 2.0 * x * x * x)
    }
}

#[derive(Clone, Debug)]
pub struct RegimeRow {
    pub l: f64,
    pub near: f64,
    pub middle: f64,
    pub far: f64,
    /// Localized norm of the summed pieces.
    pub sum: f64,
    /// Localized norm of `e^{-zH} psi_m(r^2 H)` computed directly.
    pub direct: f64,
}

#[derive(Clone, Debug)]
pub struct ThreeRegimeReport {
    pub z: Complex64,
    pub kappa_eff: f64,
    pub rows: Vec<RegimeRow>,
    /// `max |sum - direct| / direct` over pairs.
    pub consistency: f64,
    /// `(r^2/|t|)^{d/2}`, the scale the middle and far pieces are compared to.
    pub scale: f64,
}

/// Splits `e^{-zH} psi_m(r^2 H)`, `z = h^2 - i t`, through the transmutation
/// integral into `s` in `[0, ~|t|/r]` (cutoff `chi`), `[.., kappa_eff]` and beyond.
pub fn three_regime_split(
    op: &SelfAdjointOperator,
    h: f64,
    t: f64,
    r: f64,
    m: u32,
    pairs: &[BallPair],
    kappa_eff: f64,
) -> Result<ThreeRegimeReport> {
    if t == 0.0 {
        return Err(invalid("three-range split needs t != 0"));
    }
    let z = Complex64::new(h * h, -t);
    let rule = TransmutationRule::for_operator(op, z)?;
    let a = t.abs() / r;
    let r2 = r * r;
    let chi: Vec<f64> = rule
        .nodes
        .iter()
        .map(|&s| smoothstep_cutoff(s, a))
        .collect();
    let near_w: Vec<Complex64> = rule.weights.iter().zip(&chi).map(|(w, c)| w * *c).collect();
    let mid_w: Vec<Complex64> = rule
        .weights
        .iter()
        .zip(&chi)
        .zip(&rule.nodes)
        .map(|((w, c), &s)| {
            if s <= kappa_eff {
                w * (1.0 - c)
            } else {
                Complex64::new(0.0, 0.0)
            }
        })
        .collect();
    let far_w: Vec<Complex64> = rule
        .weights
        .iter()
        .zip(&chi)
        .zip(&rule.nodes)
        .map(|((w, c), &s)| {
            if s > kappa_eff {
                w * (1.0 - c)
            } else {
                Complex64::new(0.0, 0.0)
            }
        })
        .collect();
    let nodes = rule.nodes.clone();
    let piece = |w: &[Complex64], l: f64| -> Complex64 {
        let q = libm::sqrt(l);
        let mut acc = Complex64::new(0.0, 0.0);
        for (s, wi) in nodes.iter().zip(w) {
            acc += wi * libm::cos(s * q);
        }
        acc * psi(m, 1.0, r2 * l)
    };
    let f_near = |l: f64| piece(&near_w, l);
    let f_mid = |l: f64| piece(&mid_w, l);
    let f_far = |l: f64| piece(&far_w, l);
    let f_sum = |l: f64| piece(&rule.weights, l);
    let f_direct = |l: f64| (-z * l).exp() * psi(m, 1.0, r2 * l);
    let reach = max_reach(op.space(), pairs);
    let kn = PreparedKernel::new(op, Action::Multiplier(&f_near), reach)?;
    let km = PreparedKernel::new(op, Action::Multiplier(&f_mid), reach)?;
    let kf = PreparedKernel::new(op, Action::Multiplier(&f_far), reach)?;
    let ks = PreparedKernel::new(op, Action::Multiplier(&f_sum), reach)?;
    let kd = PreparedKernel::new(op, Action::Multiplier(&f_direct), reach)?;
    let mut rows = Vec::new();
    let mut consistency: f64 = 0.0;
    for p in pairs {
        let (e, f) = (&p.members_b, &p.members_bt);
        let row = RegimeRow {
            l: p.l,
            near: kn.norm(e, f)?,
            middle: km.norm(e, f)?,
            far: kf.norm(e, f)?,
            sum: ks.norm(e, f)?,
            direct: kd.norm(e, f)?,
        };
        if row.direct > 0.0 {
            consistency = consistency.max((row.sum - row.direct).abs() / row.direct);
        }
        rows.push(row);
    }
    let scale = libm::pow(r2 / t.abs(), op.space().dim() as f64 / 2.0);
    Ok(ThreeRegimeReport {
        z,
        kappa_eff,
        rows,
        consistency,
        scale,
    })
}
