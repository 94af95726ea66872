//! Gauss-Legendre rules: plain composite panels and log-uniform panels for
//! scale integrals `int g(s) ds/s`.

use alloc::vec::Vec;

use crate::error::{invalid, Result};

/// Nodes and weights of the `order`-point Gauss-Legendre rule on `[-1, 1]`.
pub fn gauss_legendre(order: usize) -> (Vec<f64>, Vec<f64>) {
    let n = order;
    let mut nodes = Vec::with_capacity(n);
    let mut weights = Vec::with_capacity(n);
    for i in 0..n {
        let mut x = libm::cos(core::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5));
        let mut dp = 1.0;
        for _ in 0..100 {
            let (p, d) = legendre(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre(n, x);
        if d.is_finite() {
            dp = d;
        }
        nodes.push(x);
        weights.push(2.0 / ((1.0 - x * x) * dp * dp));
    }
    (nodes, weights)
}

// P_n(x) and P_n'(x) by the three-term recurrence.
fn legendre(n: usize, x: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, x);
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
        p0 = p1;
        p1 = p2;
    }
    (p1, n as f64 * (x * p1 - p0) / (x * x - 1.0))
}

/// A rule `sum_i w_i g(x_i)` approximating an integral.
#[derive(Clone, Debug)]
pub struct Rule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl Rule {
    pub fn integrate<F: FnMut(f64) -> f64>(&self, mut g: F) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| w * g(x))
            .sum()
    }
}

/// Composite Gauss-Legendre rule for `int_a^b g(x) dx`.
pub fn composite(a: f64, b: f64, panels: usize, order: usize) -> Rule {
    let (gx, gw) = gauss_legendre(order);
    let width = (b - a) / panels as f64;
    let mut nodes = Vec::with_capacity(panels * order);
    let mut weights = Vec::with_capacity(panels * order);
    for p in 0..panels {
        let lo = a + p as f64 * width;
        for (x, w) in gx.iter().zip(&gw) {
            nodes.push(lo + 0.5 * width * (x + 1.0));
            weights.push(0.5 * width * w);
        }
    }
    Rule { nodes, weights }
}

/// Panel order of the log-uniform rule; panels per decade = points per decade / order.
pub const LOG_PANEL_ORDER: usize = 8;

/// Rule for `int_a^b g(s) ds/s`, Gauss-Legendre in `ln s` with
/// `points_per_decade` nodes per decade (rounded up to whole panels).
pub fn log_uniform(a: f64, b: f64, points_per_decade: usize) -> Result<Rule> {
    if !(a > 0.0 && b > a) {
        return Err(invalid("log-uniform window needs 0 < a < b"));
    }
    let decades = libm::log10(b / a);
    let per = (points_per_decade / LOG_PANEL_ORDER).max(1);
    let panels = (libm::ceil(decades * per as f64 - 1e-9) as usize).max(1);
    let inner = composite(libm::log(a), libm::log(b), panels, LOG_PANEL_ORDER);
    Ok(Rule {
        nodes: inner.nodes.iter().map(|&u| libm::exp(u)).collect(),
        weights: inner.weights,
    })
}
