//! Experiment configuration: strict TOML schema with range validation at load.

use serde::Deserialize;

use dispersive_core::space::{Boundary, Space};
use dispersive_core::spectral::CoefficientField;
use dispersive_core::SelfAdjointOperator;

use crate::error::LabError;

pub const KINDS: [&str; 9] = [
    "heat_bounds",
    "finite_speed",
    "transmutation",
    "hm_decay",
    "wave_envelope",
    "hardy_pairing",
    "strichartz_sweep",
    "cluster_fit",
    "identity_audits",
];

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    kind: String,
    seed: u64,
    workers: Option<usize>,
    space: SpaceConfig,
    operator: OperatorConfig,
    params: toml::Value,
    tolerances: toml::Value,
    output: Option<OutputConfig>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: Option<String>,
    pub prefix: Option<String>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "geometry", rename_all = "snake_case", deny_unknown_fields)]
pub enum SpaceConfig {
    Torus {
        dim: usize,
        n: usize,
        period: f64,
    },
    Interval {
        n: usize,
        length: f64,
        boundary: BoundaryConfig,
    },
    Graph {
        coords: Vec<Vec<f64>>,
        weights: Vec<f64>,
        edges: Vec<(usize, usize)>,
        dim: usize,
    },
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryConfig {
    Dirichlet,
    Neumann,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OperatorConfig {
    pub builder: BuilderConfig,
    pub clamp: Option<f64>,
    pub field: Option<FieldConfig>,
}

#[derive(Debug, Clone, Copy, Deserialize, PartialEq)]
#[serde(rename_all = "snake_case")]
pub enum BuilderConfig {
    /// Analytic on grids, dense on graphs.
    Laplacian,
    GraphLaplacian,
    DivergenceForm,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FieldConfig {
    Constant {
        value: f64,
    },
    Cosine {
        mean: f64,
        amplitude: f64,
        wavenumber: f64,
    },
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LogGrid {
    pub lo: f64,
    pub hi: f64,
    pub points: usize,
}

impl LogGrid {
    pub fn values(&self) -> Vec<f64> {
        if self.points == 1 {
            return vec![self.lo];
        }
        (0..self.points)
            .map(|i| self.lo * (self.hi / self.lo).powf(i as f64 / (self.points - 1) as f64))
            .collect()
    }
}

/// Explicit values or the lattice `0, step, 2 step, ..., <= max`.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum Separations {
    List(Vec<f64>),
    Range { step: f64, max: f64 },
}

impl Separations {
    pub fn values(&self) -> Vec<f64> {
        match self {
            Separations::List(v) => v.clone(),
            Separations::Range { step, max }
                if *step > 0.0 && step.is_finite() && max.is_finite() =>
            {
                dispersive_core::dispersive::separations(*step, *max)
            }
            Separations::Range { .. } => Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IdentityParams {
    pub trials: usize,
    pub m: u32,
    pub n: f64,
    pub product_m: u32,
    pub product_n: f64,
    pub product_u: f64,
    pub product_v: f64,
    pub x_grid: LogGrid,
    pub corona_radius: f64,
    pub residual_points_per_decade: usize,
    pub orthogonality_orders: Vec<u32>,
    pub orthogonality_grid: LogGrid,
    pub unitarity_times: Vec<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IdentityTolerances {
    pub calculus: f64,
    pub composition: f64,
    pub self_adjoint: f64,
    pub identity: f64,
    pub corona: f64,
    pub residual: f64,
    pub unitarity: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeatParams {
    pub due_times: Vec<f64>,
    pub gaussian_times: Vec<f64>,
    pub dg_radius_cells: f64,
    pub dg_distances: Vec<f64>,
    pub dg_times: Vec<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeatTolerances {
    pub due_factor: f64,
    pub dg_ratio: f64,
    pub gaussian_ratio: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FiniteSpeedParams {
    pub radius_cells: f64,
    pub distances: Vec<f64>,
    pub fractions: Vec<f64>,
    pub dalembert_sigma: f64,
    pub dalembert_cells: Vec<usize>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FiniteSpeedTolerances {
    pub tail: f64,
    pub dalembert: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransmutationParams {
    pub z_re: Vec<f64>,
    pub z_im: Vec<f64>,
    pub states: usize,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransmutationTolerances {
    pub relative: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HmParams {
    pub h: f64,
    pub m_prime: u32,
    pub m: u32,
    pub n: f64,
    pub r: f64,
    pub t_grid: Vec<f64>,
    pub epsilon: f64,
    pub l_values: Separations,
    pub diagonal: bool,
    pub n_set: Vec<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HmTolerances {
    pub slope: f64,
    pub drift: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WaveParams {
    pub m0: u32,
    pub r: f64,
    pub s_grid: Vec<f64>,
    pub l_values: Separations,
    pub diagonal: bool,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WaveTolerances {
    pub c_env: f64,
    pub ridge_radii: f64,
    pub cone: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HardyParams {
    pub audit_radii_cells: Vec<f64>,
    pub audit_stride: usize,
    pub audit_shapes: Vec<ShapeConfig>,
    pub bmo_radii_cells: Vec<f64>,
    pub bmo_stride: usize,
    pub h: f64,
    pub m_prime: u32,
    pub t_grid: Vec<f64>,
    pub atom_radii_cells: Vec<f64>,
    pub atom_shapes: Vec<ShapeConfig>,
    pub right_stride: usize,
    pub regularized_t: f64,
    pub regularized_s: Vec<f64>,
    pub l1_linf_s: Vec<f64>,
    pub l1_linf_time_ratio: f64,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case", deny_unknown_fields)]
pub enum ShapeConfig {
    Indicator,
    Bump,
    Oscillating { k: u32 },
    Random,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HardyTolerances {
    pub atom_l1: f64,
    pub bmo_constant: f64,
    pub pairing_slope: f64,
    pub regularized_factor: f64,
    pub l1_linf_slope: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StrichartzParams {
    pub ell: u32,
    pub p: f64,
    pub q: f64,
    pub h_grid: Vec<f64>,
    pub window: WindowConfig,
    pub packet_widths: Vec<f64>,
    pub eigenmodes: usize,
    pub random_fields: usize,
    pub gamma: f64,
    /// Loss exponent the run is compared with: `gamma / p` for compact runs, 0 for the proxy.
    pub target: f64,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum WindowConfig {
    Budget,
    Fixed { t: f64 },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StrichartzTolerances {
    pub beta_slack: f64,
    pub sobolev_slack: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClusterParams {
    pub q: Vec<f64>,
    pub lambdas: Vec<f64>,
    pub sum_xs: LogGrid,
    pub sum_orders: Vec<u32>,
    pub sum_dim: u32,
    pub rho_max: f64,
    pub rho_points: usize,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClusterTolerances {
    pub slope: f64,
    pub sum_bound: f64,
}

#[derive(Debug, Clone)]
pub enum Params {
    Identity(IdentityParams, IdentityTolerances),
    Heat(HeatParams, HeatTolerances),
    FiniteSpeed(FiniteSpeedParams, FiniteSpeedTolerances),
    Transmutation(TransmutationParams, TransmutationTolerances),
    Hm(HmParams, HmTolerances),
    Wave(WaveParams, WaveTolerances),
    Hardy(HardyParams, HardyTolerances),
    Strichartz(StrichartzParams, StrichartzTolerances),
    Cluster(ClusterParams, ClusterTolerances),
}

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub kind: String,
    pub seed: u64,
    pub workers: Option<usize>,
    pub space: SpaceConfig,
    pub operator: OperatorConfig,
    pub params: Params,
    pub output: Option<OutputConfig>,
    /// Digest input: the file bytes as read.
    pub source: String,
}

fn section<T: for<'de> Deserialize<'de>>(value: toml::Value, name: &str) -> Result<T, LabError> {
    value
        .try_into()
        .map_err(|e: toml::de::Error| LabError::Parse(format!("[{name}] {}", e.message())))
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, LabError> {
        let raw: RawConfig = toml::from_str(text).map_err(|e| LabError::Parse(e.to_string()))?;
        let params = match raw.kind.as_str() {
            "identity_audits" => Params::Identity(
                section(raw.params, "params")?,
                section(raw.tolerances, "tolerances")?,
            ),
            "heat_bounds" => Params::Heat(
                section(raw.params, "params")?,
                section(raw.tolerances, "tolerances")?,
            ),
            "finite_speed" => Params::FiniteSpeed(
                section(raw.params, "params")?,
                section(raw.tolerances, "tolerances")?,
            ),
            "transmutation" => Params::Transmutation(
                section(raw.params, "params")?,
                section(raw.tolerances, "tolerances")?,
            ),
            "hm_decay" => Params::Hm(
                section(raw.params, "params")?,
                section(raw.tolerances, "tolerances")?,
            ),
            "wave_envelope" => Params::Wave(
                section(raw.params, "params")?,
                section(raw.tolerances, "tolerances")?,
            ),
            "hardy_pairing" => Params::Hardy(
                section(raw.params, "params")?,
                section(raw.tolerances, "tolerances")?,
            ),
            "strichartz_sweep" => Params::Strichartz(
                section(raw.params, "params")?,
                section(raw.tolerances, "tolerances")?,
            ),
            "cluster_fit" => Params::Cluster(
                section(raw.params, "params")?,
                section(raw.tolerances, "tolerances")?,
            ),
            other => {
                return Err(LabError::Validation(format!(
                    "kind: unknown experiment kind `{other}`; expected one of {}",
                    KINDS.join(", ")
                )))
            }
        };
        let cfg = ExperimentConfig {
            kind: raw.kind,
            seed: raw.seed,
            workers: raw.workers,
            space: raw.space,
            operator: raw.operator,
            params,
            output: raw.output,
            source: text.to_string(),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<(), LabError> {
        let mut v = Validator::default();
        if let Some(w) = self.workers {
            v.range("workers", w as f64, 1.0, 1024.0);
        }
        match &self.space {
            SpaceConfig::Torus { dim, n, period } => {
                v.range("space.dim", *dim as f64, 1.0, 3.0);
                v.range("space.n", *n as f64, 2.0, 1e6);
                v.positive("space.period", *period);
            }
            SpaceConfig::Interval { n, length, .. } => {
                v.range("space.n", *n as f64, 2.0, 1e6);
                v.positive("space.length", *length);
            }
            SpaceConfig::Graph {
                coords,
                weights,
                dim,
                ..
            } => {
                v.range("space.coords", coords.len() as f64, 2.0, 4096.0);
                v.check(
                    "space.weights",
                    weights.len() == coords.len(),
                    "one weight per point",
                );
                v.range("space.dim", *dim as f64, 1.0, 16.0);
            }
        }
        if let Some(c) = self.operator.clamp {
            v.range("operator.clamp", c, 0.0, 1e-3);
        }
        v.check(
            "operator.field",
            self.operator.field.is_some()
                == (self.operator.builder == BuilderConfig::DivergenceForm),
            "a coefficient field is required for, and only for, divergence_form",
        );
        match &self.params {
            Params::Identity(p, t) => {
                v.range("params.trials", p.trials as f64, 1.0, 10_000.0);
                v.range("params.m", p.m as f64, 1.0, 32.0);
                v.positive("params.n", p.n);
                v.range("params.product_m", p.product_m as f64, 1.0, 32.0);
                v.positive("params.product_n", p.product_n);
                v.positive("params.product_u", p.product_u);
                v.positive("params.product_v", p.product_v);
                v.log_grid("params.x_grid", &p.x_grid);
                v.positive("params.corona_radius", p.corona_radius);
                v.range(
                    "params.residual_points_per_decade",
                    p.residual_points_per_decade as f64,
                    8.0,
                    1024.0,
                );
                v.check(
                    "params.orthogonality_orders",
                    !p.orthogonality_orders.is_empty(),
                    "at least one order",
                );
                for &m in &p.orthogonality_orders {
                    v.range("params.orthogonality_orders", m as f64, 1.0, 16.0);
                }
                v.log_grid("params.orthogonality_grid", &p.orthogonality_grid);
                v.nonempty_finite("params.unitarity_times", &p.unitarity_times);
                for (name, x) in [
                    ("calculus", t.calculus),
                    ("composition", t.composition),
                    ("self_adjoint", t.self_adjoint),
                    ("identity", t.identity),
                    ("corona", t.corona),
                    ("residual", t.residual),
                    ("unitarity", t.unitarity),
                ] {
                    v.tolerance(name, x);
                }
            }
            Params::Heat(p, t) => {
                v.samples("params.due_times", &p.due_times, 1);
                v.samples("params.gaussian_times", &p.gaussian_times, 1);
                v.positive("params.dg_radius_cells", p.dg_radius_cells);
                v.samples("params.dg_distances", &p.dg_distances, 1);
                v.samples("params.dg_times", &p.dg_times, 1);
                v.tolerance("due_factor", t.due_factor);
                v.tolerance("dg_ratio", t.dg_ratio);
                v.tolerance("gaussian_ratio", t.gaussian_ratio);
            }
            Params::FiniteSpeed(p, t) => {
                v.positive("params.radius_cells", p.radius_cells);
                v.samples("params.distances", &p.distances, 1);
                v.check(
                    "params.fractions",
                    !p.fractions.is_empty(),
                    "at least one fraction",
                );
                for &f in &p.fractions {
                    v.range("params.fractions", f, 0.0, 1.0);
                }
                v.positive("params.dalembert_sigma", p.dalembert_sigma);
                v.check(
                    "params.dalembert_cells",
                    !p.dalembert_cells.is_empty(),
                    "at least one time",
                );
                v.tolerance("tail", t.tail);
                v.tolerance("dalembert", t.dalembert);
            }
            Params::Transmutation(p, t) => {
                v.samples("params.z_re", &p.z_re, 1);
                v.check("params.z_im", !p.z_im.is_empty(), "at least one value");
                for &x in &p.z_im {
                    v.range("params.z_im", x, -1e6, 1e6);
                }
                v.range("params.states", p.states as f64, 1.0, 1000.0);
                v.tolerance("relative", t.relative);
            }
            Params::Hm(p, t) => {
                v.positive("params.h", p.h);
                v.range("params.m_prime", p.m_prime as f64, 1.0, 32.0);
                v.range("params.m", p.m as f64, 1.0, 32.0);
                v.positive("params.n", p.n);
                v.positive("params.r", p.r);
                v.samples("params.t_grid", &p.t_grid, 3);
                v.range("params.epsilon", p.epsilon, 0.0, 1.0);
                v.l_values(&p.l_values);
                for &n in &p.n_set {
                    v.positive("params.n_set", n);
                }
                v.tolerance("slope", t.slope);
                v.tolerance("drift", t.drift);
            }
            Params::Wave(p, t) => {
                v.range("params.m0", p.m0 as f64, 1.0, 32.0);
                v.positive("params.r", p.r);
                v.check("params.s_grid", !p.s_grid.is_empty(), "at least one time");
                for &s in &p.s_grid {
                    v.range("params.s_grid", s, 0.0, 1e6);
                }
                v.l_values(&p.l_values);
                v.tolerance("c_env", t.c_env);
                v.tolerance("ridge_radii", t.ridge_radii);
                v.tolerance("cone", t.cone);
            }
            Params::Hardy(p, t) => {
                v.samples("params.audit_radii_cells", &p.audit_radii_cells, 1);
                v.range("params.audit_stride", p.audit_stride as f64, 1.0, 1e6);
                v.check(
                    "params.audit_shapes",
                    !p.audit_shapes.is_empty(),
                    "at least one shape",
                );
                v.samples("params.bmo_radii_cells", &p.bmo_radii_cells, 1);
                v.range("params.bmo_stride", p.bmo_stride as f64, 1.0, 1e6);
                v.positive("params.h", p.h);
                v.range("params.m_prime", p.m_prime as f64, 1.0, 32.0);
                v.samples("params.t_grid", &p.t_grid, 3);
                v.samples("params.atom_radii_cells", &p.atom_radii_cells, 1);
                v.check(
                    "params.atom_shapes",
                    !p.atom_shapes.is_empty(),
                    "at least one shape",
                );
                v.range("params.right_stride", p.right_stride as f64, 1.0, 1e6);
                v.positive("params.regularized_t", p.regularized_t);
                v.samples("params.regularized_s", &p.regularized_s, 2);
                v.samples("params.l1_linf_s", &p.l1_linf_s, 3);
                v.range(
                    "params.l1_linf_time_ratio",
                    p.l1_linf_time_ratio,
                    0.0,
                    100.0,
                );
                v.tolerance("atom_l1", t.atom_l1);
                v.tolerance("bmo_constant", t.bmo_constant);
                v.tolerance("pairing_slope", t.pairing_slope);
                v.tolerance("regularized_factor", t.regularized_factor);
                v.tolerance("l1_linf_slope", t.l1_linf_slope);
            }
            Params::Strichartz(p, t) => {
                v.range("params.ell", p.ell as f64, 1.0, 16.0);
                v.range("params.p", p.p, 2.0, 1e6);
                v.range("params.q", p.q, 2.0, 1e6);
                v.samples("params.h_grid", &p.h_grid, 3);
                if let WindowConfig::Fixed { t } = p.window {
                    v.positive("params.window.t", t);
                }
                for &w in &p.packet_widths {
                    v.positive("params.packet_widths", w);
                }
                v.range("params.eigenmodes", p.eigenmodes as f64, 0.0, 64.0);
                v.range("params.random_fields", p.random_fields as f64, 0.0, 64.0);
                v.check(
                    "params",
                    !p.packet_widths.is_empty() || p.eigenmodes > 0 || p.random_fields > 0,
                    "the data family is empty",
                );
                v.range("params.gamma", p.gamma, 0.0, 10.0);
                v.range("params.target", p.target, 0.0, 10.0);
                v.tolerance("beta_slack", t.beta_slack);
                v.tolerance("sobolev_slack", t.sobolev_slack);
            }
            Params::Cluster(p, t) => {
                v.check("params.q", !p.q.is_empty(), "at least one exponent");
                for &q in &p.q {
                    v.range("params.q", q, 2.0, f64::INFINITY);
                }
                v.samples("params.lambdas", &p.lambdas, 3);
                v.log_grid("params.sum_xs", &p.sum_xs);
                v.check(
                    "params.sum_orders",
                    !p.sum_orders.is_empty(),
                    "at least one order",
                );
                for &n in &p.sum_orders {
                    v.range("params.sum_orders", n as f64, 1.0, 16.0);
                }
                v.range("params.sum_dim", p.sum_dim as f64, 0.0, 16.0);
                v.positive("params.rho_max", p.rho_max);
                v.range("params.rho_points", p.rho_points as f64, 2.0, 100_000.0);
                v.tolerance("slope", t.slope);
                v.tolerance("sum_bound", t.sum_bound);
            }
        }
        v.finish()
    }

    pub fn build_space(&self) -> Result<Space, LabError> {
        let s = match &self.space {
            SpaceConfig::Torus { dim, n, period } => Space::torus_grid(*dim, *n, *period),
            SpaceConfig::Interval {
                n,
                length,
                boundary,
            } => Space::interval_grid(
                *n,
                *length,
                match boundary {
                    BoundaryConfig::Dirichlet => Boundary::Dirichlet,
                    BoundaryConfig::Neumann => Boundary::Neumann,
                },
            ),
            SpaceConfig::Graph {
                coords,
                weights,
                edges,
                dim,
            } => Space::general_graph(coords.clone(), weights.clone(), edges.clone(), *dim),
        };
        s.map_err(|e| LabError::Validation(format!("space: {e}")))
    }

    pub fn build_operator(&self, space: &Space) -> Result<SelfAdjointOperator, LabError> {
        let clamp = self
            .operator
            .clamp
            .unwrap_or(dispersive_core::spectral::DEFAULT_CLAMP);
        let op = match (self.operator.builder, &self.space) {
            (BuilderConfig::Laplacian, SpaceConfig::Torus { .. }) => {
                SelfAdjointOperator::torus_laplacian(space)
            }
            (BuilderConfig::Laplacian, SpaceConfig::Interval { .. }) => {
                SelfAdjointOperator::interval_laplacian(space)
            }
            (BuilderConfig::Laplacian, SpaceConfig::Graph { .. })
            | (BuilderConfig::GraphLaplacian, _) => {
                SelfAdjointOperator::graph_laplacian(space, clamp)
            }
            (BuilderConfig::DivergenceForm, _) => {
                let field = match self.operator.field.expect("validated") {
                    FieldConfig::Constant { value } => CoefficientField::Constant(value),
                    FieldConfig::Cosine {
                        mean,
                        amplitude,
                        wavenumber,
                    } => CoefficientField::Cosine {
                        mean,
                        amplitude,
                        wavenumber,
                    },
                };
                SelfAdjointOperator::divergence_form(space, &field, clamp)
            }
        };
        op.map_err(|e| LabError::Validation(format!("operator: {e}")))
    }
}

#[derive(Default)]
struct Validator {
    errors: Vec<String>,
}

impl Validator {
    fn check(&mut self, field: &str, ok: bool, msg: &str) {
        if !ok {
            self.errors.push(format!("{field}: {msg}"));
        }
    }

    fn range(&mut self, field: &str, x: f64, lo: f64, hi: f64) {
        if !(x >= lo && x <= hi) {
            self.errors
                .push(format!("{field}: {x} is outside [{lo}, {hi}]"));
        }
    }

    fn positive(&mut self, field: &str, x: f64) {
        if !(x > 0.0 && x.is_finite()) {
            self.errors
                .push(format!("{field}: {x} must be positive and finite"));
        }
    }

    fn tolerance(&mut self, name: &str, x: f64) {
        self.positive(&format!("tolerances.{name}"), x);
    }

    fn samples(&mut self, field: &str, xs: &[f64], min: usize) {
        if xs.len() < min {
            self.errors.push(format!(
                "{field}: {} values given, at least {min} required",
                xs.len()
            ));
        }
        if xs.iter().any(|&x| !(x > 0.0 && x.is_finite())) {
            self.errors
                .push(format!("{field}: every value must be positive and finite"));
        }
    }

    fn l_values(&mut self, s: &Separations) {
        let xs = s.values();
        if xs.is_empty() || xs.iter().any(|&x| !(x >= 0.0 && x.is_finite())) {
            self.errors.push(
                "params.l_values: at least one finite non-negative separation required".into(),
            );
        }
    }

    fn nonempty_finite(&mut self, field: &str, xs: &[f64]) {
        if xs.is_empty() || xs.iter().any(|x| !x.is_finite()) {
            self.errors
                .push(format!("{field}: at least one finite value required"));
        }
    }

    fn log_grid(&mut self, field: &str, g: &LogGrid) {
        self.positive(&format!("{field}.lo"), g.lo);
        if !(g.hi >= g.lo && g.hi.is_finite()) {
            self.errors
                .push(format!("{field}.hi: must be finite and at least lo"));
        }
        self.range(&format!("{field}.points"), g.points as f64, 1.0, 100_000.0);
    }

    fn finish(self) -> Result<(), LabError> {
        if self.errors.is_empty() {
            Ok(())
        } else {
            Err(LabError::Validation(self.errors.join("; ")))
        }
    }
}
