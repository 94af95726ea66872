//! Acceptance suite: one line per criterion. Limits below are pinned here, independently of the
//! tolerances written in the shipped configs, and compared against the raw check values.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use dispersive_lab::config::{Params, SpaceConfig};
use dispersive_lab::{execute, load, ExperimentConfig, RunOptions, RunReport};

fn config_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs")
}

struct Run {
    cfg: ExperimentConfig,
    report: RunReport,
    seconds: f64,
}

impl Run {
    fn value(&self, check: &str) -> f64 {
        self.report
            .checks
            .iter()
            .find(|c| c.name == check)
            .unwrap_or_else(|| panic!("{}: no check `{check}`", self.report.kind))
            .value
    }

    fn table_rows(&self, table: &str) -> usize {
        self.report
            .tables
            .iter()
            .find(|t| t.name == table)
            .map_or(0, |t| t.rows.len())
    }
}

fn run(name: &str, workers: usize) -> Run {
    let cfg = load(&config_dir().join(name)).unwrap_or_else(|e| panic!("{name}: {e}"));
    let start = Instant::now();
    let report = execute(
        &cfg,
        &RunOptions {
            workers: Some(workers),
            ..Default::default()
        },
    )
    .unwrap_or_else(|e| panic!("{name}: {e}"));
    Run {
        cfg,
        report,
        seconds: start.elapsed().as_secs_f64(),
    }
}

/// Persisted bytes with the wall-clock field removed.
fn artifacts(report: &RunReport) -> BTreeMap<String, Vec<u8>> {
    let dir = tempfile::tempdir().expect("tempdir");
    let written = report.persist(dir.path(), "run").expect("persist");
    let mut out = BTreeMap::new();
    for p in written {
        let mut bytes = std::fs::read(&p).expect("read artifact");
        if p.extension().is_some_and(|e| e == "json") {
            let mut v: serde_json::Value = serde_json::from_slice(&bytes).expect("json");
            v.as_object_mut().expect("object").remove("wall_time_s");
            bytes = serde_json::to_vec(&v).expect("json");
        }
        out.insert(p.file_name().unwrap().to_string_lossy().into_owned(), bytes);
    }
    out
}

struct Verdict {
    failures: Vec<String>,
}

impl Verdict {
    fn new() -> Self {
        Verdict {
            failures: Vec::new(),
        }
    }

    fn at_most(&mut self, label: &str, value: f64, limit: f64) {
        if !(value <= limit) {
            self.failures
                .push(format!("{label} = {value:.3e} > {limit:.3e}"));
        }
    }

    fn holds(&mut self, label: &str, ok: bool) {
        if !ok {
            self.failures.push(label.to_string());
        }
    }
}

fn report(
    id: u32,
    title: &str,
    runs: &[&Run],
    budget_s: Option<f64>,
    mut v: Verdict,
    detail: String,
) -> bool {
    let seconds: f64 = runs.iter().map(|r| r.seconds).sum();
    if let Some(b) = budget_s {
        v.at_most("runtime_s", seconds, b);
    }
    let pass = v.failures.is_empty();
    println!(
        "criterion {id:>2} {} {title}: {detail} [{seconds:.1} s]{}",
        if pass { "PASS" } else { "FAIL" },
        if pass {
            String::new()
        } else {
            format!(" failures: {}", v.failures.join("; "))
        }
    );
    pass
}

fn dims(cfg: &ExperimentConfig) -> (usize, usize) {
    match cfg.space {
        SpaceConfig::Torus { dim, n, .. } => (dim, n),
        SpaceConfig::Interval { n, .. } => (1, n),
        SpaceConfig::Graph {
            dim, ref coords, ..
        } => (dim, coords.len()),
    }
}

const IDENTITY: [&str; 5] = [
    "identity_torus1d.toml",
    "identity_torus2d.toml",
    "identity_interval.toml",
    "identity_divergence.toml",
    "identity_graph.toml",
];

const ALL: [&str; 16] = [
    "identity_torus1d.toml",
    "identity_torus2d.toml",
    "identity_interval.toml",
    "identity_divergence.toml",
    "identity_graph.toml",
    "transmutation.toml",
    "heat_torus1d.toml",
    "heat_torus2d.toml",
    "finite_speed.toml",
    "hm_decay_1d.toml",
    "hm_decay_2d.toml",
    "wave_envelope.toml",
    "hardy_pairing.toml",
    "strichartz_euclidean.toml",
    "strichartz_compact.toml",
    "cluster_fit.toml",
];

fn main() -> ExitCode {
    let mut runs: BTreeMap<&str, Run> = BTreeMap::new();
    for name in ALL {
        runs.insert(name, run(name, 1));
    }
    let mut all = true;

    {
        let mut v = Verdict::new();
        let mut worst: f64 = 0.0;
        for name in IDENTITY {
            let r = &runs[name];
            let trials = match &r.cfg.params {
                Params::Identity(p, _) => p.trials,
                _ => 0,
            };
            v.holds(&format!("{name}: 100 trials"), trials >= 100);
            for c in ["calculus_norm", "calculus_contraction"] {
                v.at_most(&format!("{name}: {c}"), r.value(c), 1e-10);
                worst = worst.max(r.value(c));
            }
            v.at_most(&format!("{name}: runtime_s"), r.seconds, 10.0);
        }
        let group: Vec<&Run> = IDENTITY.iter().map(|n| &runs[*n]).collect();
        let detail = format!(
            "max relative gap {worst:.2e} over {} geometries",
            IDENTITY.len()
        );
        all &= report(1, "calculus exactness", &group, None, v, detail);
    }

    {
        let r = &runs["identity_torus1d.toml"];
        let mut v = Verdict::new();
        for c in ["psi_power_k2", "psi_power_k3", "psi_product", "corona"] {
            v.at_most(c, r.value(c), 1e-8);
        }
        v.at_most(
            "reproducing_residual",
            r.value("reproducing_residual"),
            1e-6,
        );
        let grid = match &r.cfg.params {
            Params::Identity(p, _) => p.orthogonality_grid.points,
            _ => 0,
        };
        v.holds("orthogonality grid is 12x12", grid == 12);
        let ortho = r.value("almost_orthogonality");
        v.holds("almost-orthogonality constant finite", ortho.is_finite());
        let detail = format!(
            "identities {:.2e}, residual {:.2e}, C_m/ceiling {ortho:.3}",
            ["psi_power_k2", "psi_power_k3", "psi_product", "corona"]
                .iter()
                .map(|c| r.value(c))
                .fold(0.0, f64::max),
            r.value("reproducing_residual")
        );
        all &= report(2, "psi identities", &[r], Some(30.0), v, detail);
    }

    {
        let r = &runs["transmutation.toml"];
        let mut v = Verdict::new();
        v.holds("1D torus n=512", dims(&r.cfg) == (1, 512));
        v.holds("3x3 z grid", r.table_rows("transmutation") == 9);
        v.at_most("relative", r.value("transmutation"), 1e-6);
        let detail = format!("max relative error {:.2e}", r.value("transmutation"));
        all &= report(3, "transmutation", &[r], Some(60.0), v, detail);
    }

    {
        let (a, b) = (&runs["heat_torus1d.toml"], &runs["heat_torus2d.toml"]);
        let mut v = Verdict::new();
        v.holds(
            "d=1 n=1024 and d=2 n=48",
            dims(&a.cfg) == (1, 1024) && dims(&b.cfg) == (2, 48),
        );
        for r in [a, b] {
            v.at_most("due factor", r.value("due_vs_theta_oracle"), 4.0);
            v.at_most("davies-gaffney ratio", r.value("davies_gaffney"), 2.0);
        }
        let detail = format!(
            "DUE factors {:.3}/{:.3}, DG ratios {:.3}/{:.3}",
            a.value("due_vs_theta_oracle"),
            b.value("due_vs_theta_oracle"),
            a.value("davies_gaffney"),
            b.value("davies_gaffney")
        );
        all &= report(4, "heat bounds", &[a, b], Some(120.0), v, detail);
    }

    {
        let r = &runs["finite_speed.toml"];
        let mut v = Verdict::new();
        v.holds("20 configurations", r.table_rows("finite_speed") == 20);
        v.at_most("tail", r.value("finite_speed_tail"), 1e-3);
        v.at_most("dalembert", r.value("dalembert"), 0.05);
        let detail = format!(
            "max tail {:.2e}, d'Alembert {:.2e}",
            r.value("finite_speed_tail"),
            r.value("dalembert")
        );
        all &= report(5, "finite speed", &[r], Some(60.0), v, detail);
    }

    {
        let (a, b) = (&runs["hm_decay_1d.toml"], &runs["hm_decay_2d.toml"]);
        let mut v = Verdict::new();
        v.at_most("d=1 |slope + 1/2|", a.value("decay_slope"), 0.1);
        v.at_most("d=2 |slope + 1|", b.value("decay_slope"), 0.15);
        for r in [a, b] {
            v.at_most("n drift", r.value("n_independence_drift"), 0.05);
        }
        let detail = format!(
            "slopes {:.3}/{:.3}, drift {:.3}/{:.3}",
            a.report.fits[0].slope,
            b.report.fits[0].slope,
            a.value("n_independence_drift"),
            b.value("n_independence_drift")
        );
        all &= report(6, "Schrodinger decay", &[a, b], Some(600.0), v, detail);
    }

    {
        let r = &runs["wave_envelope.toml"];
        let mut v = Verdict::new();
        v.holds("d=2", dims(&r.cfg).0 == 2);
        v.at_most("C_env", r.value("envelope_constant"), 50.0);
        v.at_most("ridge |L-s|/r", r.value("ridge"), 2.0);
        v.at_most("cone", r.value("cone_vanishing"), 1e-3);
        let detail = format!(
            "C_env {:.3}, ridge {:.2} r, cone {:.2e}",
            r.value("envelope_constant"),
            r.value("ridge"),
            r.value("cone_vanishing")
        );
        all &= report(7, "wave envelope", &[r], Some(600.0), v, detail);
    }

    {
        let r = &runs["hardy_pairing.toml"];
        let mut v = Verdict::new();
        v.at_most("atom L1", r.value("atom_l1"), 5.0);
        v.at_most("BMO of constants", r.value("bmo_constant"), 1e-12);
        v.at_most("pairing |slope + d/2|", r.value("pairing_slope"), 0.15);
        v.at_most("regularized factor", r.value("regularized_uniformity"), 4.0);
        v.at_most("L1->Linf |slope + d/2|", r.value("l1_linf_slope"), 0.15);
        let detail = format!(
            "atom L1 {:.3}, BMO {:.1e}, pairing slope {:.3}, regularized {:.3}, L1->Linf slope {:.4}",
            r.value("atom_l1"),
            r.value("bmo_constant"),
            r.report.fits[0].slope,
            r.value("regularized_uniformity"),
            r.report.fits[1].slope
        );
        all &= report(8, "Hardy suite", &[r], Some(300.0), v, detail);
    }

    {
        let (e, c) = (
            &runs["strichartz_euclidean.toml"],
            &runs["strichartz_compact.toml"],
        );
        let mut v = Verdict::new();
        let (be, bc) = (e.value("loss_exponent"), c.value("loss_exponent"));
        v.at_most("Euclidean beta", be, 0.1);
        let (p, gamma, d) = match &c.cfg.params {
            Params::Strichartz(p, _) => (p.p, p.gamma, dims(&c.cfg).0),
            _ => unreachable!(),
        };
        v.holds(
            "compact run is d=2, (4,4), gamma=1.2",
            d == 2 && p == 4.0 && gamma == 1.2,
        );
        v.at_most("compact beta", bc, gamma / p + 0.15);
        for r in [e, c] {
            let p = match &r.cfg.params {
                Params::Strichartz(p, _) => p.p,
                _ => unreachable!(),
            };
            v.at_most("Sobolev ceiling", r.value("loss_exponent"), 2.0 / p + 0.1);
        }
        let detail = format!(
            "Euclidean beta {be:.4}, compact beta {bc:.4} (limit {:.2})",
            gamma / p + 0.15
        );
        all &= report(9, "Strichartz dichotomy", &[e, c], Some(900.0), v, detail);
    }

    {
        let r = &runs["cluster_fit.toml"];
        let mut v = Verdict::new();
        v.holds("d=2", dims(&r.cfg).0 == 2);
        let mut slopes = Vec::new();
        for c in r
            .report
            .checks
            .iter()
            .filter(|c| c.name.starts_with("cluster_slope_"))
        {
            v.at_most(&c.name, c.value, 0.2);
            slopes.push(format!(
                "{} {:.2e}",
                &c.name["cluster_slope_".len()..],
                c.value
            ));
        }
        v.holds("at least one exponent", !slopes.is_empty());
        v.holds("sum bound finite", r.value("sum_bound").is_finite());
        let detail = format!(
            "slope gaps [{}], sup S(x)x^N {:.3}",
            slopes.join(", "),
            r.value("sum_bound")
        );
        all &= report(10, "cluster fit", &[r], Some(180.0), v, detail);
    }

    {
        let mut v = Verdict::new();
        let mut reruns = Vec::new();
        for name in ALL {
            let again = run(name, 3);
            let a = artifacts(&runs[name].report);
            let b = artifacts(&again.report);
            v.holds(&format!("{name} identical across 1 and 3 workers"), a == b);
            reruns.push(again);
        }
        let refs: Vec<&Run> = reruns.iter().collect();
        let detail = format!("{} configs re-run with 3 workers", ALL.len());
        all &= report(11, "determinism", &refs, None, v, detail);
    }

    if all {
        println!("acceptance: all criteria pass");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: some criteria fail");
        ExitCode::FAILURE
    }
}
