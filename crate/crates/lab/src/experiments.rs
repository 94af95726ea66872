//! One runner per experiment kind. Independent cells are evaluated on the pool and
//! collected in input order, so every reduction sees the same sequence for any worker count.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use rayon::ThreadPool;

use dispersive_core::dispersive::{
    check_n_independence, schrodinger_decay_experiment, torus_pair_family,
    wave_envelope_experiment, Regime, SchrodingerParams,
};
use dispersive_core::fit::fit_log_log;
use dispersive_core::hardy::{
    atom_family, atom_l1_audit, bmo_norm, default_order, l1_linf_sweep, make_atom,
    pairing_experiment, regularized_pairing, sum_bound_constant, Atom, AtomShape,
};
use dispersive_core::kernels::{
    check_davies_gaffney, check_due, check_finite_speed, dalembert_oracle, due_oracle,
    fit_gaussian_ue, sample_points, transmutation, KernelProfile, TransmutationRule,
};
use dispersive_core::space::Geometry;
use dispersive_core::spectral::{
    almost_orthogonality, corona_defect, dense_operator_norm, psi, psi_power_defect,
    psi_product_defect,
};
use dispersive_core::strichartz::{
    cluster_exponent, cluster_norm_fit, default_dt, eigenmode_data, loss_exponent,
    random_band_limited, rho_scan, strichartz_constant, strichartz_time_budget, wave_packets,
    AdmissiblePair, Datum,
};
use dispersive_core::{fit_decay_exponent, Ball, Complex64, SelfAdjointOperator, Space, State};

use crate::config::*;
use crate::error::LabError;
use crate::report::{Check, Fitted, Outcome, Table};

type Res<T> = Result<T, LabError>;

fn par_map<T: Sync, U: Send>(
    pool: &ThreadPool,
    items: &[T],
    f: impl Fn(&T) -> Res<U> + Sync + Send,
) -> Res<Vec<U>> {
    pool.install(|| items.par_iter().map(&f).collect::<Vec<_>>())
        .into_iter()
        .collect()
}

/// Per-cell generator independent of scheduling.
fn cell_rng(seed: u64, cell: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ cell.wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

fn random_state(n: usize, rng: &mut ChaCha8Rng) -> State {
    (0..n)
        .map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
        .collect()
}

/// Point whose distance from `from` is closest to `target`; lowest index on ties.
fn point_at_distance(space: &Space, from: usize, target: f64) -> usize {
    let mut best = (f64::INFINITY, from);
    for y in 0..space.point_count() {
        let gap = (space.dist(from, y) - target).abs();
        if gap < best.0 {
            best = (gap, y);
        }
    }
    best.1
}

fn set_distance(space: &Space, a: &[usize], b: &[usize]) -> f64 {
    a.iter()
        .flat_map(|&x| b.iter().map(move |&y| (x, y)))
        .map(|(x, y)| space.dist(x, y))
        .fold(f64::INFINITY, f64::min)
}

pub fn run(
    cfg: &ExperimentConfig,
    op: &SelfAdjointOperator,
    seed: u64,
    pool: &ThreadPool,
) -> Res<Outcome> {
    match &cfg.params {
        Params::Identity(p, t) => identity_audits(op, p, t, seed, pool),
        Params::Heat(p, t) => heat_bounds(op, p, t, pool),
        Params::FiniteSpeed(p, t) => finite_speed(op, p, t, pool),
        Params::Transmutation(p, t) => transmutation_grid(op, p, t, seed, pool),
        Params::Hm(p, t) => hm_decay(op, p, t, pool),
        Params::Wave(p, t) => wave(op, p, t, pool),
        Params::Hardy(p, t) => hardy(op, p, t, seed, pool),
        Params::Strichartz(p, t) => strichartz(op, p, t, seed, pool),
        Params::Cluster(p, t) => cluster(op, p, t, pool),
    }
}

struct Trial {
    sup: f64,
    dense: f64,
    contraction: f64,
    composition: f64,
    self_adjoint: f64,
}

fn identity_audits(
    op: &SelfAdjointOperator,
    p: &IdentityParams,
    tol: &IdentityTolerances,
    seed: u64,
    pool: &ThreadPool,
) -> Res<Outcome> {
    let n = op.space().point_count();
    let lmax = op.lambda_max().max(1.0);
    let cells: Vec<u64> = (0..p.trials as u64).collect();
    let trials = par_map(pool, &cells, |&i| {
        let mut rng = cell_rng(seed, i);
        let mut coeffs = [0.0f64; 10];
        for c in coeffs.iter_mut() {
            *c = rng.gen_range(-1.0..1.0);
        }
        let k = coeffs;
        let f = move |l: f64| {
            let x = l / lmax;
            Complex64::from_polar(k[0], 4.0 * k[1] * x) * (-5.0 * k[2].abs() * x).exp()
                + Complex64::new(k[3] * (6.0 * k[4] * x).cos(), 0.5 * k[5] * x)
        };
        let g = move |l: f64| {
            let x = l / lmax;
            Complex64::new(
                k[6] + k[7] * (-3.0 * x).exp(),
                k[8] * (5.0 * k[9] * x).sin(),
            )
        };
        let v = random_state(n, &mut rng);
        let u = random_state(n, &mut rng);
        let sup = op.sup_on_spectrum(f)?;
        let dense = dense_operator_norm(op, f)?;
        let sup_g = op.sup_on_spectrum(g)?;
        let fv = op.apply(f, &v)?;
        let contraction = (op.norm(&fv) / (sup * op.norm(&v)) - 1.0).max(0.0);
        let fg = op.apply(f, &op.apply(g, &v)?)?;
        let direct = op.apply(|l| f(l) * g(l), &v)?;
        let diff: State = fg.iter().zip(&direct).map(|(a, b)| a - b).collect();
        let composition = op.norm(&diff) / (sup * sup_g * op.norm(&v)).max(1e-300);
        let fr = move |l: f64| Complex64::new(f(l).re, 0.0);
        let sup_r = op.sup_on_spectrum(fr)?.max(1e-300);
        let lhs = op.inner(&op.apply(fr, &u)?, &v);
        let rhs = op.inner(&u, &op.apply(fr, &v)?);
        let self_adjoint = (lhs - rhs).norm() / (sup_r * op.norm(&u) * op.norm(&v));
        Ok(Trial {
            sup,
            dense,
            contraction,
            composition,
            self_adjoint,
        })
    })?;
    let mut table = Table::new(
        "trials",
        &[
            "trial",
            "spectral_sup",
            "dense_norm",
            "composition",
            "self_adjoint",
        ],
    );
    let mut calc: f64 = 0.0;
    let (mut contr, mut comp, mut sa): (f64, f64, f64) = (0.0, 0.0, 0.0);
    for (i, t) in trials.iter().enumerate() {
        table.push(vec![
            i as f64,
            t.sup,
            t.dense,
            t.composition,
            t.self_adjoint,
        ]);
        calc = calc.max((t.dense - t.sup).abs() / t.sup.max(1e-300));
        contr = contr.max(t.contraction);
        comp = comp.max(t.composition);
        sa = sa.max(t.self_adjoint);
    }
    let mut checks = vec![
        Check::at_most(
            "calculus_norm",
            calc,
            tol.calculus,
            "max |sigma_max(mu^1/2 K mu^1/2) - max|f(lambda)|| / max|f|",
        ),
        Check::at_most(
            "calculus_contraction",
            contr,
            tol.calculus,
            "max (||f(H)v|| / (max|f| ||v||) - 1)+",
        ),
        Check::at_most(
            "composition",
            comp,
            tol.composition,
            "||f(H)g(H)v - (fg)(H)v|| relative",
        ),
        Check::at_most(
            "self_adjoint",
            sa,
            tol.self_adjoint,
            "|<f(H)u,v> - <u,f(H)v>| relative",
        ),
    ];
    let xs = p.x_grid.values();
    for k in [2u32, 3] {
        checks.push(Check::at_most(
            &format!("psi_power_k{k}"),
            psi_power_defect(p.m, p.n, k, &xs),
            tol.identity,
            "psi_{km,kn} = psi_{m,n}^k",
        ));
    }
    checks.push(Check::at_most(
        "psi_product",
        psi_product_defect(
            (p.m, p.n),
            (p.product_m, p.product_n),
            p.product_u,
            p.product_v,
            &xs,
        ),
        tol.identity,
        "product of dilated psi collapses to one psi",
    ));
    checks.push(Check::at_most(
        "corona",
        corona_defect(op, p.corona_radius)?,
        tol.corona,
        "1 - e^{-r^2 l} against its integral",
    ));
    let res = op.reproducing_residual(p.m, p.n, p.residual_points_per_decade)?;
    checks.push(Check::at_most(
        "reproducing_residual",
        res.residual,
        tol.residual,
        format!(
            "kappa = 1/c_mn = {}; widenings {}",
            res.kappa, res.widenings
        ),
    ));
    let grid = p.orthogonality_grid.values();
    let mut ortho = Table::new("orthogonality", &["m", "constant", "ceiling", "u", "v"]);
    let mut worst: f64 = 0.0;
    for &m in &p.orthogonality_orders {
        let a = almost_orthogonality(op, m, &grid)?;
        ortho.push(vec![
            m as f64, a.constant, a.ceiling, a.argmax.0, a.argmax.1,
        ]);
        worst = worst.max(a.constant / a.ceiling);
    }
    checks.push(Check::at_most(
        "almost_orthogonality",
        worst,
        1.0,
        "C_m / sup psi_{2m,1}; finite and below the ceiling",
    ));
    let mut rng = cell_rng(seed, u64::MAX);
    let v = random_state(n, &mut rng);
    let nv = op.norm(&v);
    let mut unit: f64 = 0.0;
    for &t in &p.unitarity_times {
        unit = unit.max((op.norm(&op.schrodinger(t, &v)?) - nv).abs() / nv);
    }
    let h0 = op.heat(0.0, &v)?;
    let d0: State = h0.iter().zip(&v).map(|(a, b)| a - b).collect();
    unit = unit.max(op.norm(&d0) / nv);
    checks.push(Check::at_most(
        "unitarity",
        unit,
        tol.unitarity,
        "| ||e^{itH}v|| - ||v|| | and ||e^{0H}v - v||, relative",
    ));
    Ok(Outcome {
        checks,
        fits: Vec::new(),
        tables: vec![table, ortho],
    })
}

fn heat_bounds(
    op: &SelfAdjointOperator,
    p: &HeatParams,
    tol: &HeatTolerances,
    pool: &ThreadPool,
) -> Res<Outcome> {
    let space = op.space();
    let points = sample_points(space);
    let due = check_due(op, &p.due_times, &points)?;
    let mut checks = Vec::new();
    let mut due_table = Table::new("due", &["t", "value", "oracle", "flagged"]);
    let torus = space.geometry() == Geometry::TorusGrid;
    let mut oracle: f64 = 0.0;
    for row in &due.rows {
        let o = if torus {
            due_oracle(space.dim(), space.period().unwrap(), row.t)
        } else {
            f64::NAN
        };
        if !row.flagged && torus {
            oracle = oracle.max(o);
        }
        due_table.push(vec![row.t, row.value, o, row.flagged as u8 as f64]);
    }
    if torus {
        let factor = (due.constant / oracle).max(oracle / due.constant);
        checks.push(Check::at_most(
            "due_vs_theta_oracle",
            factor,
            tol.due_factor,
            format!("C = {}, continuum oracle = {oracle}", due.constant),
        ));
    } else {
        checks.push(Check::at_most(
            "due_constant_finite",
            due.constant,
            f64::MAX,
            "no continuum oracle off the torus",
        ));
    }
    let fit = fit_gaussian_ue(op, KernelProfile::Heat, &p.gaussian_times, &points)?;
    checks.push(Check::at_most(
        "gaussian_fit",
        fit.worst_ratio,
        tol.gaussian_ratio,
        format!("C = {}, c = {}", fit.c_prefactor, fit.c_exponent),
    ));
    let h = space.spacing();
    let r = p.dg_radius_cells * h;
    let e = space.ball_members(&Ball::new(0, r)?);
    let cells: Vec<(f64, f64)> = p
        .dg_distances
        .iter()
        .flat_map(|&d| p.dg_times.iter().map(move |&t| (d, t)))
        .collect();
    let rows = par_map(pool, &cells, |&(d, t)| {
        let c = point_at_distance(space, 0, d + 2.0 * r);
        let f = space.ball_members(&Ball::new(c, r)?);
        Ok(check_davies_gaffney(op, &e, &f, t, tol.dg_ratio)?)
    })?;
    let mut dg = Table::new(
        "davies_gaffney",
        &[
            "distance",
            "t",
            "norm",
            "gaussian",
            "ratio",
            "within_budget",
        ],
    );
    let mut worst: f64 = 0.0;
    let mut used = 0;
    for ((_, t), row) in cells.iter().zip(&rows) {
        dg.push(vec![
            row.distance,
            *t,
            row.norm,
            row.gaussian,
            row.ratio,
            row.within_budget as u8 as f64,
        ]);
        if row.within_budget {
            worst = worst.max(row.ratio);
            used += 1;
        }
    }
    checks.push(Check::at_most(
        "davies_gaffney",
        worst,
        tol.dg_ratio,
        format!(
            "{used} of {} configurations inside the wrap budget",
            rows.len()
        ),
    ));
    Ok(Outcome {
        checks,
        fits: Vec::new(),
        tables: vec![due_table, dg],
    })
}

fn finite_speed(
    op: &SelfAdjointOperator,
    p: &FiniteSpeedParams,
    tol: &FiniteSpeedTolerances,
    pool: &ThreadPool,
) -> Res<Outcome> {
    let space = op.space();
    let h = space.spacing();
    let r = p.radius_cells * h;
    let e = space.ball_members(&Ball::new(0, r)?);
    let cells: Vec<(f64, f64)> = p
        .distances
        .iter()
        .flat_map(|&d| p.fractions.iter().map(move |&f| (d, f)))
        .collect();
    let rows = par_map(pool, &cells, |&(d, theta)| {
        let c = point_at_distance(space, 0, d + 2.0 * r);
        let f = space.ball_members(&Ball::new(c, r)?);
        let dist = set_distance(space, &e, &f);
        let t = theta * (dist - 3.0 * h).max(0.0);
        Ok((t, check_finite_speed(op, &e, &f, t)?))
    })?;
    let mut table = Table::new("finite_speed", &["distance", "t", "tail", "applicable"]);
    let mut worst: f64 = 0.0;
    let mut applicable = 0;
    for (t, fs) in &rows {
        table.push(vec![fs.distance, *t, fs.tail, fs.applicable as u8 as f64]);
        if fs.applicable {
            worst = worst.max(fs.tail);
            applicable += 1;
        }
    }
    let mut checks = vec![Check::at_most(
        "finite_speed_tail",
        worst,
        tol.tail,
        format!("{applicable} configurations with t <= d(E,F) - 3 spacing"),
    )];
    let mut tables = vec![table];
    if space.geometry() == Geometry::TorusGrid && space.dim() == 1 {
        let n = space.point_count();
        let period = space.period().unwrap();
        let sigma = p.dalembert_sigma;
        let v: State = (0..n)
            .map(|i| {
                let x = i as f64 * h - 0.5 * period;
                Complex64::new((-x * x / (2.0 * sigma * sigma)).exp(), 0.0)
            })
            .collect();
        let mut dt = Table::new("dalembert", &["t", "relative"]);
        let mut worst: f64 = 0.0;
        for &k in &p.dalembert_cells {
            let t = k as f64 * h;
            let a = dalembert_oracle(space, &v, t)?;
            let b = op.wave_cos(t, &v)?;
            let diff: State = a.iter().zip(&b).map(|(x, y)| x - y).collect();
            let rel = op.norm(&diff) / op.norm(&v);
            dt.push(vec![t, rel]);
            worst = worst.max(rel);
        }
        checks.push(Check::at_most(
            "dalembert",
            worst,
            tol.dalembert,
            format!("Gaussian data, sigma = {sigma}"),
        ));
        tables.push(dt);
    }
    Ok(Outcome {
        checks,
        fits: Vec::new(),
        tables,
    })
}

fn transmutation_grid(
    op: &SelfAdjointOperator,
    p: &TransmutationParams,
    tol: &TransmutationTolerances,
    seed: u64,
    pool: &ThreadPool,
) -> Res<Outcome> {
    let n = op.space().point_count();
    let states: Vec<State> = (0..p.states as u64)
        .map(|i| random_state(n, &mut cell_rng(seed, i)))
        .collect();
    let cells: Vec<Complex64> = p
        .z_re
        .iter()
        .flat_map(|&a| p.z_im.iter().map(move |&b| Complex64::new(a, b)))
        .collect();
    let rows = par_map(pool, &cells, |&z| {
        let s_max = TransmutationRule::default_s_max(z)?;
        let points = TransmutationRule::required_points(z, s_max, op.lambda_max());
        let mut worst: f64 = 0.0;
        for v in &states {
            let a = transmutation(op, z, v, s_max, points)?;
            let b = op.complex_semigroup(z, v)?;
            let diff: State = a.iter().zip(&b).map(|(x, y)| x - y).collect();
            worst = worst.max(op.norm(&diff) / op.norm(&b).max(1e-300));
        }
        Ok((s_max, points, worst))
    })?;
    let mut table = Table::new(
        "transmutation",
        &["z_re", "z_im", "s_max", "points", "relative"],
    );
    let mut worst: f64 = 0.0;
    for (z, (s_max, points, rel)) in cells.iter().zip(&rows) {
        table.push(vec![z.re, z.im, *s_max, *points as f64, *rel]);
        worst = worst.max(*rel);
    }
    let checks = vec![Check::at_most(
        "transmutation",
        worst,
        tol.relative,
        format!("{} values of z", cells.len()),
    )];
    Ok(Outcome {
        checks,
        fits: Vec::new(),
        tables: vec![table],
    })
}

fn regime_code(r: Regime) -> f64 {
    match r {
        Regime::Trivial => 0.0,
        Regime::Intermediate => 1.0,
        Regime::Beyond => 2.0,
    }
}

fn hm_decay(
    op: &SelfAdjointOperator,
    p: &HmParams,
    tol: &HmTolerances,
    pool: &ThreadPool,
) -> Res<Outcome> {
    let space = op.space();
    let d = space.dim() as f64;
    let pairs = torus_pair_family(space, p.r, &p.l_values.values(), p.diagonal)?;
    let base = SchrodingerParams {
        h: p.h,
        m_prime: p.m_prime,
        m: p.m,
        n: p.n,
        r: p.r,
        t_grid: p.t_grid.clone(),
        epsilon: p.epsilon,
    };
    let (rep, indep) = pool.install(|| {
        rayon::join(
            || schrodinger_decay_experiment(op, &base, &pairs),
            || (!p.n_set.is_empty()).then(|| check_n_independence(op, &base, &p.n_set, &pairs)),
        )
    });
    let rep = rep?;
    let mut rows = Table::new("decay", &["t", "a_star", "argmax_l", "regime"]);
    let mut detail = Table::new("pairs", &["t", "l", "measured", "normalizer", "ratio"]);
    for r in &rep.rows {
        rows.push(vec![r.t, r.a_star, r.argmax_l, regime_code(r.regime)]);
        for pr in &r.pairs {
            detail.push(vec![r.t, pr.l, pr.measured, pr.normalizer, pr.ratio]);
        }
    }
    let mut checks = vec![Check::at_most(
        "decay_slope",
        (rep.fit.slope + d / 2.0).abs(),
        tol.slope,
        format!(
            "slope {} against -d/2; {} times excluded; budget {}",
            rep.fit.slope,
            rep.excluded.len(),
            rep.t_budget
        ),
    )];
    let fits = vec![Fitted::new("a_star_vs_t", &rep.fit, -d / 2.0)];
    let mut tables = vec![rows, detail];
    if let Some(indep) = indep {
        let indep = indep?;
        let mut t = Table::new("n_independence", &["n", "slope"]);
        for (n, r) in &indep.per_n {
            t.push(vec![*n, r.fit.slope]);
        }
        tables.push(t);
        checks.push(Check::at_most(
            "n_independence_drift",
            indep.drift,
            tol.drift,
            format!(
                "A* ratio range [{}, {}]",
                indep.ratio_range.0, indep.ratio_range.1
            ),
        ));
    }
    Ok(Outcome {
        checks,
        fits,
        tables,
    })
}

fn wave(
    op: &SelfAdjointOperator,
    p: &WaveParams,
    tol: &WaveTolerances,
    pool: &ThreadPool,
) -> Res<Outcome> {
    let pairs = torus_pair_family(op.space(), p.r, &p.l_values.values(), p.diagonal)?;
    let reps = par_map(pool, &p.s_grid, |&s| {
        Ok(wave_envelope_experiment(op, p.m0, p.r, &[s], &pairs)?)
    })?;
    let mut table = Table::new(
        "envelope",
        &[
            "s",
            "l",
            "measured",
            "bare",
            "normalizer",
            "envelope",
            "ratio",
        ],
    );
    let mut ridge = Table::new("ridge", &["s", "argmax_l"]);
    let (mut c_env, mut cone, mut ridge_gap): (f64, f64, f64) = (0.0, 0.0, 0.0);
    let mut skipped = 0;
    for rep in &reps {
        for r in &rep.rows {
            table.push(vec![
                r.s,
                r.l,
                r.measured,
                r.bare,
                r.normalizer,
                r.envelope,
                r.ratio,
            ]);
        }
        for &(s, l) in &rep.ridge {
            ridge.push(vec![s, l]);
            ridge_gap = ridge_gap.max((l - s).abs() / p.r);
        }
        c_env = c_env.max(rep.c_env);
        cone = cone.max(rep.cone_max);
        skipped += rep.skipped;
    }
    let checks = vec![
        Check::at_most(
            "envelope_constant",
            c_env,
            tol.c_env,
            format!("{skipped} pairs outside the wrap budget"),
        ),
        Check::at_most(
            "ridge",
            ridge_gap,
            tol.ridge_radii,
            "max |L - s| / r at the per-s argmax",
        ),
        Check::at_most(
            "cone_vanishing",
            cone,
            tol.cone,
            "bare cos(s sqrt H) for L > s + 2r",
        ),
    ];
    Ok(Outcome {
        checks,
        fits: Vec::new(),
        tables: vec![table, ridge],
    })
}

fn shape_of(s: &ShapeConfig, seed: u64) -> AtomShape {
    match *s {
        ShapeConfig::Indicator => AtomShape::Indicator,
        ShapeConfig::Bump => AtomShape::Bump,
        ShapeConfig::Oscillating { k } => AtomShape::Oscillating { k },
        ShapeConfig::Random => AtomShape::Random { seed },
    }
}

fn hardy(
    op: &SelfAdjointOperator,
    p: &HardyParams,
    tol: &HardyTolerances,
    seed: u64,
    pool: &ThreadPool,
) -> Res<Outcome> {
    let space = op.space();
    let h_grid = space.spacing();
    let d = space.dim() as f64;
    let order = default_order(space.dim());
    let shapes = |list: &[ShapeConfig]| -> Vec<AtomShape> {
        list.iter()
            .enumerate()
            .map(|(i, s)| shape_of(s, seed.wrapping_add(i as u64)))
            .collect()
    };
    let cells = |r: &[f64]| -> Vec<f64> { r.iter().map(|c| c * h_grid).collect() };
    let mut checks = Vec::new();
    let mut tables = Vec::new();
    let mut fits = Vec::new();

    let audit_atoms = atom_family(
        op,
        &shapes(&p.audit_shapes),
        &cells(&p.audit_radii_cells),
        p.audit_stride,
        order,
    )?;
    let audit = atom_l1_audit(op, &audit_atoms)?;
    checks.push(Check::at_most(
        "atom_l1",
        audit.max_l1,
        tol.atom_l1,
        format!(
            "{} atoms; binomial deviation {:.3e}",
            audit_atoms.len(),
            audit.binomial_deviation
        ),
    ));

    let ones = vec![Complex64::new(1.0, 0.0); space.point_count()];
    let balls: Vec<Ball> = cells(&p.bmo_radii_cells)
        .iter()
        .flat_map(|&r| {
            (0..space.point_count())
                .step_by(p.bmo_stride)
                .map(move |c| Ball::new(c, r))
        })
        .collect::<Result<_, _>>()?;
    let bmo = bmo_norm(op, &ones, &balls, order)?;
    checks.push(Check::at_most(
        "bmo_constant",
        bmo.norm,
        tol.bmo_constant,
        format!("{} balls", balls.len()),
    ));

    let left_shapes = shapes(&p.atom_shapes);
    let radii = cells(&p.atom_radii_cells);
    let mut left: Vec<Atom> = Vec::new();
    for &r in &radii {
        for s in &left_shapes {
            left.push(make_atom(op, Ball::new(0, r)?, order, s)?);
        }
    }
    let right = atom_family(op, &left_shapes, &radii, p.right_stride, order)?;
    let (hh, mp) = (p.h, p.m_prime);
    let sups = par_map(pool, &p.t_grid, |&t| {
        let f = move |l: f64| Complex64::from_polar(psi(mp, 1.0, hh * hh * l), t * l);
        Ok(pairing_experiment(
            op,
            dispersive_core::dispersive::Action::Multiplier(&f),
            &left,
            &right,
        )?
        .sup)
    })?;
    let samples: Vec<(f64, f64)> = p
        .t_grid
        .iter()
        .map(|t| t.abs())
        .zip(sups.iter().cloned())
        .collect();
    let fit = fit_decay_exponent(&samples)?;
    let mut pt = Table::new("pairing", &["t", "sup"]);
    for &(t, s) in &samples {
        pt.push(vec![t, s]);
    }
    tables.push(pt);
    checks.push(Check::at_most(
        "pairing_slope",
        (fit.slope + d / 2.0).abs(),
        tol.pairing_slope,
        format!(
            "slope {} over {} left and {} right atoms",
            fit.slope,
            left.len(),
            right.len()
        ),
    ));
    fits.push(Fitted::new("pairing_vs_t", &fit, -d / 2.0));

    let tr = p.regularized_t;
    let regs = par_map(pool, &p.regularized_s, |&s| {
        let f = move |l: f64| Complex64::from_polar(psi(mp, 1.0, hh * hh * l), tr * l);
        Ok(regularized_pairing(
            op,
            dispersive_core::dispersive::Action::Multiplier(&f),
            s,
            &left,
            &right,
        )?
        .sup)
    })?;
    let mut rt = Table::new("regularized", &["s", "sup"]);
    for (&s, &v) in p.regularized_s.iter().zip(&regs) {
        rt.push(vec![s, v]);
    }
    tables.push(rt);
    let f0 = move |l: f64| Complex64::from_polar(psi(mp, 1.0, hh * hh * l), tr * l);
    let bare = pairing_experiment(
        op,
        dispersive_core::dispersive::Action::Multiplier(&f0),
        &left,
        &right,
    )?
    .sup;
    let hi = regs.iter().cloned().fold(0.0f64, f64::max);
    checks.push(Check::at_most(
        "regularized_uniformity",
        hi / bare,
        tol.regularized_factor,
        format!("sup_s pairing(T e^(-sH)) / pairing(T) at t = {tr}; unregularized {bare:.6e}"),
    ));

    let ratio = p.l1_linf_time_ratio;
    let family = move |s: f64, l: f64| Complex64::from_polar((-s * l).exp(), ratio * s * l);
    let sweep = l1_linf_sweep(op, &family, &p.l1_linf_s)?;
    let mut lt = Table::new("l1_linf", &["s", "value", "flagged"]);
    for r in &sweep.rows {
        lt.push(vec![r.s, r.value, r.flagged as u8 as f64]);
    }
    tables.push(lt);
    match sweep.fit {
        Some(f) => {
            checks.push(Check::at_most(
                "l1_linf_slope",
                (f.slope + d / 2.0).abs(),
                tol.l1_linf_slope,
                format!("slope {} of ||T e^(-sH)||_(1->inf), t = {ratio} s", f.slope),
            ));
            fits.push(Fitted::new("l1_linf_vs_s", &f, -d / 2.0));
        }
        None => checks.push(Check::at_most(
            "l1_linf_slope",
            f64::INFINITY,
            tol.l1_linf_slope,
            "too few unflagged s",
        )),
    }
    Ok(Outcome {
        checks,
        fits,
        tables,
    })
}

fn strichartz(
    op: &SelfAdjointOperator,
    p: &StrichartzParams,
    tol: &StrichartzTolerances,
    seed: u64,
    pool: &ThreadPool,
) -> Res<Outcome> {
    let space = op.space();
    let pair = AdmissiblePair::new(p.p, p.q, space.dim())?;
    let mut cells: Vec<(usize, f64, f64, Datum)> = Vec::new();
    for (hi, &h) in p.h_grid.iter().enumerate() {
        let window = match p.window {
            WindowConfig::Budget => strichartz_time_budget(space, h, p.ell).min(1.0),
            WindowConfig::Fixed { t } => t,
        };
        if !(window > 0.0) {
            return Err(LabError::Validation(format!(
                "params.h_grid: empty time window at h = {h}"
            )));
        }
        let mut data = Vec::new();
        if !p.packet_widths.is_empty() {
            data.extend(wave_packets(space, h, p.ell, &p.packet_widths)?);
        }
        data.extend(eigenmode_data(op, h, p.ell, p.eigenmodes));
        if p.random_fields > 0 && op.tensor_view().is_some() {
            let seeds: Vec<u64> = (0..p.random_fields as u64)
                .map(|i| seed.wrapping_add(1000 * hi as u64 + i))
                .collect();
            data.extend(random_band_limited(op, h, p.ell, &seeds)?);
        }
        for d in data {
            cells.push((hi, h, window, d));
        }
    }
    let ratios = par_map(pool, &cells, |(_, h, window, d)| {
        let c = strichartz_constant(
            op,
            *h,
            p.ell,
            pair,
            *window,
            default_dt(*h),
            std::slice::from_ref(d),
        )?;
        Ok((c.per_datum[0], c.max_refinement))
    })?;
    let mut per_h = vec![0.0f64; p.h_grid.len()];
    let mut table = Table::new("cells", &["h", "window", "datum", "ratio", "refinement"]);
    let mut counter = vec![0usize; p.h_grid.len()];
    let mut refinement: f64 = 0.0;
    for ((hi, h, window, _), (ratio, rel)) in cells.iter().zip(&ratios) {
        table.push(vec![
            *h,
            *window,
            counter[*hi] as f64,
            ratio.unwrap_or(f64::NAN),
            *rel,
        ]);
        counter[*hi] += 1;
        if let Some(r) = ratio {
            per_h[*hi] = per_h[*hi].max(*r);
        }
        refinement = refinement.max(*rel);
    }
    let mut summary = Table::new("constants", &["h", "constant"]);
    for (&h, &c) in p.h_grid.iter().zip(&per_h) {
        summary.push(vec![h, c]);
    }
    let samples: Vec<(f64, f64)> = p
        .h_grid
        .iter()
        .cloned()
        .zip(per_h.iter().cloned())
        .collect();
    let (beta, fit) = loss_exponent(&samples)?;
    let checks = vec![
        Check::at_most(
            "loss_exponent",
            beta,
            p.target + tol.beta_slack,
            format!(
                "beta = {beta}; target {} (gamma = {}); max half-grid mismatch {refinement:.2e}",
                p.target, p.gamma
            ),
        ),
        Check::at_most(
            "sobolev_ceiling",
            beta,
            2.0 / p.p + tol.sobolev_slack,
            "beta <= 2/p + slack",
        ),
    ];
    let fits = vec![Fitted::new("constant_vs_h", &fit, -p.target)];
    Ok(Outcome {
        checks,
        fits,
        tables: vec![summary, table],
    })
}

fn cluster(
    op: &SelfAdjointOperator,
    p: &ClusterParams,
    tol: &ClusterTolerances,
    pool: &ThreadPool,
) -> Res<Outcome> {
    let d = op.space().dim();
    let fits_raw = par_map(pool, &p.q, |&q| Ok(cluster_norm_fit(op, q, &p.lambdas)?))?;
    let mut checks = Vec::new();
    let mut fits = Vec::new();
    let mut table = Table::new("cluster_norms", &["q", "lambda", "norm"]);
    for (&q, f) in p.q.iter().zip(&fits_raw) {
        for &(l, v) in &f.rows {
            table.push(vec![q, l, v]);
        }
        let refit = fit_log_log(&f.rows)?;
        checks.push(Check::at_most(
            &format!("cluster_slope_q{q}"),
            (refit.slope - f.predicted).abs(),
            tol.slope,
            format!(
                "slope {} against {}; {} clusters skipped",
                refit.slope,
                cluster_exponent(d, q),
                f.skipped.len()
            ),
        ));
        fits.push(Fitted::new(&format!("cluster_q{q}"), &refit, f.predicted));
    }
    let xs = p.sum_xs.values();
    let mut st = Table::new("sum_bound", &["order", "constant"]);
    let mut worst: f64 = 0.0;
    for &n in &p.sum_orders {
        let c = sum_bound_constant(&xs, p.sum_dim, n)?;
        st.push(vec![n as f64, c]);
        worst = worst.max(c);
    }
    checks.push(Check::at_most(
        "sum_bound",
        worst,
        tol.sum_bound,
        "sup_x S(x) x^N over the grid and orders",
    ));
    let lambdas: Vec<f64> = (0..p.rho_points)
        .map(|i| p.rho_max * i as f64 / (p.rho_points - 1) as f64)
        .collect();
    let scan = rho_scan(&lambdas, 200);
    let mut rt = Table::new("rho", &["lambda", "min", "max"]);
    for &(l, lo, hi) in &scan.rows {
        rt.push(vec![l, lo, hi]);
    }
    checks.push(Check::at_most(
        "rho_validated_from",
        scan.smallest_validated.unwrap_or(f64::INFINITY),
        2.0,
        "smallest lambda from which rho stays in [1/2, 2] on [lambda, lambda+1)",
    ));
    Ok(Outcome {
        checks,
        fits,
        tables: vec![table, st, rt],
    })
}
