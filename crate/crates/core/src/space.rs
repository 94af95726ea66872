//! Discretized metric measure spaces: uniform tori, interval grids and
//! weighted graphs with their shortest-path metric.

use alloc::collections::BinaryHeap;
use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;

use crate::error::{invalid, Error, Result};
use crate::fit::{fit_decay_exponent, DecayFit};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Geometry {
    TorusGrid,
    IntervalGrid,
    GeneralGraph,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Boundary {
    Dirichlet,
    Neumann,
}

#[derive(Clone, Debug)]
struct Graph {
    coords: Vec<Vec<f64>>,
    edges: Vec<(usize, usize)>,
    // Row-major point_count x point_count shortest-path distances.
    dist: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct Space {
    geometry: Geometry,
    dim: usize,
    n_axis: usize,
    extent: f64,
    spacing: f64,
    bc: Option<Boundary>,
    weights: Vec<f64>,
    graph: Option<Graph>,
}

/// Closed ball `{ y : dist(center, y) <= radius + 1e-12 * spacing }`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ball {
    pub center: usize,
    pub radius: f64,
}

impl Ball {
    pub fn new(center: usize, radius: f64) -> Result<Self> {
        if !(radius > 0.0) || !radius.is_finite() {
            return Err(invalid("ball radius must be positive and finite"));
        }
        Ok(Ball { center, radius })
    }

    pub fn scaled(&self, factor: f64) -> Ball {
        Ball {
            center: self.center,
            radius: self.radius * factor,
        }
    }

    /// True when the radius is below the grid step, where the ball may be a
    /// single point.
    pub fn below_spacing(&self, space: &Space) -> bool {
        self.radius < space.spacing * (1.0 - 1e-12)
    }
}

/// Volume of the Euclidean unit ball in dimension `d`.
pub fn unit_ball_volume(d: usize) -> f64 {
    let h = d as f64 / 2.0;
    libm::pow(core::f64::consts::PI, h) / libm::tgamma(h + 1.0)
}

impl Space {
    /// Uniform grid on the torus `[0, period)^d`, index `sum_a i_a n^a` with axis 0 fastest.
    pub fn torus_grid(d: usize, n_per_axis: usize, period: f64) -> Result<Space> {
        if !(1..=3).contains(&d) {
            return Err(invalid("torus dimension must be 1, 2 or 3"));
        }
        if n_per_axis < 4 {
            return Err(invalid("torus grid needs at least 4 points per axis"));
        }
        if !(period > 0.0) || !period.is_finite() {
            return Err(invalid("torus period must be positive"));
        }
        let spacing = period / n_per_axis as f64;
        let count = n_per_axis.pow(d as u32);
        Ok(Space {
            geometry: Geometry::TorusGrid,
            dim: d,
            n_axis: n_per_axis,
            extent: period,
            spacing,
            bc: None,
            weights: vec![libm::pow(spacing, d as f64); count],
            graph: None,
        })
    }

    /// Interior points `(j+1)h` with `h = L/(n+1)` for Dirichlet, cell centers
    /// `(j+1/2)h` with `h = L/n` for Neumann.
    pub fn interval_grid(n: usize, length: f64, bc: Boundary) -> Result<Space> {
        if n < 4 {
            return Err(invalid("interval grid needs at least 4 points"));
        }
        if !(length > 0.0) || !length.is_finite() {
            return Err(invalid("interval length must be positive"));
        }
        let spacing = match bc {
            Boundary::Dirichlet => length / (n + 1) as f64,
            Boundary::Neumann => length / n as f64,
        };
        Ok(Space {
            geometry: Geometry::IntervalGrid,
            dim: 1,
            n_axis: n,
            extent: length,
            spacing,
            bc: Some(bc),
            weights: vec![spacing; n],
            graph: None,
        })
    }

    /// Weighted graph with edge lengths equal to the Euclidean distance of
    /// the endpoint coordinates and the induced shortest-path metric.
    pub fn general_graph(
        coords: Vec<Vec<f64>>,
        weights: Vec<f64>,
        edges: Vec<(usize, usize)>,
        dim: usize,
    ) -> Result<Space> {
        let n = coords.len();
        if n < 2 {
            return Err(invalid("graph needs at least two points"));
        }
        if weights.len() != n {
            return Err(invalid("one weight per point required"));
        }
        if weights.iter().any(|w| !(*w > 0.0) || !w.is_finite()) {
            return Err(invalid("weights must be positive and finite"));
        }
        if dim == 0 {
            return Err(invalid("homogeneous dimension must be positive"));
        }
        let cdim = coords[0].len();
        if cdim == 0 || coords.iter().any(|c| c.len() != cdim) {
            return Err(invalid("coordinates must share a positive dimension"));
        }
        let mut adj: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
        let mut spacing = f64::INFINITY;
        for &(a, b) in &edges {
            if a >= n || b >= n || a == b {
                return Err(invalid("edge endpoints must be distinct valid indices"));
            }
            let len = euclid(&coords[a], &coords[b]);
            if !(len > 0.0) {
                return Err(invalid("edge endpoints must have distinct coordinates"));
            }
            adj[a].push((b, len));
            adj[b].push((a, len));
            spacing = spacing.min(len);
        }
        let mut dist = vec![f64::INFINITY; n * n];
        for s in 0..n {
            dijkstra(&adj, s, &mut dist[s * n..(s + 1) * n]);
        }
        if dist.iter().any(|d| !d.is_finite()) {
            return Err(Error::Disconnected);
        }
        // Symmetrize against rounding in the two directions of traversal.
        for i in 0..n {
            for j in i + 1..n {
                let m = dist[i * n + j].min(dist[j * n + i]);
                dist[i * n + j] = m;
                dist[j * n + i] = m;
            }
        }
        Ok(Space {
            geometry: Geometry::GeneralGraph,
            dim,
            n_axis: n,
            extent: 0.0,
            spacing,
            bc: None,
            weights,
            graph: Some(Graph {
                coords,
                edges,
                dist,
            }),
        })
    }

    pub fn geometry(&self) -> Geometry {
        self.geometry
    }

    /// Declared homogeneous dimension.
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn point_count(&self) -> usize {
        self.weights.len()
    }

    /// Points per axis on grids, point count on graphs.
    pub fn n_per_axis(&self) -> usize {
        self.n_axis
    }

    /// Grid step; the shortest edge on graphs.
    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn period(&self) -> Option<f64> {
        (self.geometry == Geometry::TorusGrid).then_some(self.extent)
    }

    pub fn length(&self) -> Option<f64> {
        (self.geometry == Geometry::IntervalGrid).then_some(self.extent)
    }

    pub fn boundary(&self) -> Option<Boundary> {
        self.bc
    }

    pub fn weight(&self, i: usize) -> f64 {
        self.weights[i]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        self.graph
            .as_ref()
            .map(|g| g.edges.as_slice())
            .unwrap_or(&[])
    }

    pub fn total_measure(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// Measure of a point set.
    pub fn measure(&self, points: &[usize]) -> f64 {
        points.iter().map(|&i| self.weights[i]).sum()
    }

    /// Per-axis grid indices of point `i` (axis 0 fastest).
    pub fn grid_index(&self, i: usize) -> [usize; 3] {
        let mut out = [0usize; 3];
        let mut rem = i;
        for slot in out.iter_mut().take(self.grid_dim()) {
            *slot = rem % self.n_axis;
            rem /= self.n_axis;
        }
        out
    }

    /// Point index of per-axis grid indices, wrapped modulo the axis length.
    pub fn index_of(&self, idx: [i64; 3]) -> usize {
        let n = self.n_axis as i64;
        let mut out = 0usize;
        let mut stride = 1usize;
        for &v in idx.iter().take(self.grid_dim()) {
            out += (v.rem_euclid(n) as usize) * stride;
            stride *= self.n_axis;
        }
        out
    }

    fn grid_dim(&self) -> usize {
        match self.geometry {
            Geometry::TorusGrid => self.dim,
            Geometry::IntervalGrid => 1,
            Geometry::GeneralGraph => 1,
        }
    }

    pub fn coords(&self, i: usize) -> Vec<f64> {
        match self.geometry {
            Geometry::TorusGrid => {
                let g = self.grid_index(i);
                (0..self.dim).map(|a| g[a] as f64 * self.spacing).collect()
            }
            Geometry::IntervalGrid => {
                let shift = match self.bc {
                    Some(Boundary::Dirichlet) => 1.0,
                    _ => 0.5,
                };
                vec![(i as f64 + shift) * self.spacing]
            }
            Geometry::GeneralGraph => self.graph.as_ref().unwrap().coords[i].clone(),
        }
    }

    pub fn dist(&self, i: usize, j: usize) -> f64 {
        match self.geometry {
            Geometry::TorusGrid => {
                let (a, b) = (self.grid_index(i), self.grid_index(j));
                let mut s = 0.0;
                for ax in 0..self.dim {
                    let k = a[ax].abs_diff(b[ax]);
                    let k = k.min(self.n_axis - k) as f64 * self.spacing;
                    s += k * k;
                }
                libm::sqrt(s)
            }
            Geometry::IntervalGrid => i.abs_diff(j) as f64 * self.spacing,
            Geometry::GeneralGraph => {
                let n = self.n_axis;
                self.graph.as_ref().unwrap().dist[i * n + j]
            }
        }
    }

    pub fn diameter(&self) -> f64 {
        match self.geometry {
            Geometry::TorusGrid => {
                libm::sqrt(self.dim as f64) * (self.n_axis / 2) as f64 * self.spacing
            }
            Geometry::IntervalGrid => (self.n_axis - 1) as f64 * self.spacing,
            Geometry::GeneralGraph => self
                .graph
                .as_ref()
                .unwrap()
                .dist
                .iter()
                .cloned()
                .fold(0.0, f64::max),
        }
    }

    fn tol(&self) -> f64 {
        1e-12 * self.spacing
    }

    /// Sorted indices of the closed ball.
    pub fn ball_members(&self, ball: &Ball) -> Vec<usize> {
        let reach = ball.radius + self.tol();
        match self.geometry {
            Geometry::TorusGrid => self.torus_ball(ball.center, reach),
            Geometry::IntervalGrid => {
                let k = libm::floor(reach / self.spacing) as usize;
                let lo = ball.center.saturating_sub(k);
                let hi = (ball.center + k).min(self.n_axis - 1);
                (lo..=hi).collect()
            }
            Geometry::GeneralGraph => (0..self.point_count())
                .filter(|&j| self.dist(ball.center, j) <= reach)
                .collect(),
        }
    }

    fn torus_ball(&self, center: usize, reach: f64) -> Vec<usize> {
        let n = self.n_axis;
        let h = self.spacing;
        let kmax = libm::floor(reach / h) as usize;
        // Distinct residues per axis with their geodesic offset length.
        let offsets: Vec<(i64, f64)> = if 2 * kmax + 1 >= n {
            (0..n as i64)
                .map(|o| (o, (o as usize).min(n - o as usize) as f64 * h))
                .collect()
        } else {
            (-(kmax as i64)..=kmax as i64)
                .map(|o| (o, o.unsigned_abs() as f64 * h))
                .collect()
        };
        let c = self.grid_index(center);
        let r2 = reach * reach;
        let mut out = Vec::new();
        match self.dim {
            1 => {
                for &(o, l) in &offsets {
                    if l * l <= r2 {
                        out.push(self.index_of([c[0] as i64 + o, 0, 0]));
                    }
                }
            }
            2 => {
                for &(o1, l1) in &offsets {
                    for &(o0, l0) in &offsets {
                        if l0 * l0 + l1 * l1 <= r2 {
                            out.push(self.index_of([c[0] as i64 + o0, c[1] as i64 + o1, 0]));
                        }
                    }
                }
            }
            _ => {
                for &(o2, l2) in &offsets {
                    for &(o1, l1) in &offsets {
                        for &(o0, l0) in &offsets {
                            if l0 * l0 + l1 * l1 + l2 * l2 <= r2 {
                                out.push(self.index_of([
                                    c[0] as i64 + o0,
                                    c[1] as i64 + o1,
                                    c[2] as i64 + o2,
                                ]));
                            }
                        }
                    }
                }
            }
        }
        out.sort_unstable();
        out
    }

    pub fn ball_measure(&self, ball: &Ball) -> f64 {
        self.measure(&self.ball_members(ball))
    }

    /// `C_0(Q) = Q`, `C_i(Q) = 2^i Q \ 2^{i-1} Q`.
    pub fn corona_members(&self, ball: &Ball, i: u32) -> Vec<usize> {
        if i == 0 {
            return self.ball_members(ball);
        }
        let outer = self.ball_members(&ball.scaled(libm::pow(2.0, i as f64)));
        let inner = self.ball_members(&ball.scaled(libm::pow(2.0, (i - 1) as f64)));
        difference_sorted(&outer, &inner)
    }

    fn check_band(&self, radii: &[f64]) -> Result<()> {
        let lo = self.spacing * (1.0 - 1e-12);
        let hi = self.diameter() / 4.0 * (1.0 + 1e-12);
        if radii.is_empty() {
            return Err(invalid("at least one radius required"));
        }
        for &r in radii {
            if !(r >= lo && r <= hi) {
                return Err(invalid("radius outside [spacing, diameter/4]"));
            }
        }
        Ok(())
    }

    /// Worst ratio `mu(B(x,2r)) / mu(B(x,r))` over the sample and, when the
    /// radii span a decade, the fitted volume-growth exponent.
    pub fn check_doubling(&self, centers: &[usize], radii: &[f64]) -> Result<DoublingReport> {
        self.check_band(radii)?;
        if centers.is_empty() {
            return Err(invalid("at least one center required"));
        }
        let mut constant: f64 = 0.0;
        let mut mean_vol = vec![0.0; radii.len()];
        for &x in centers {
            for (k, &r) in radii.iter().enumerate() {
                let b = Ball::new(x, r)?;
                let v1 = self.ball_measure(&b);
                let v2 = self.ball_measure(&b.scaled(2.0));
                constant = constant.max(v2 / v1);
                mean_vol[k] += v1 / centers.len() as f64;
            }
        }
        let samples: Vec<(f64, f64)> = radii.iter().cloned().zip(mean_vol).collect();
        let exponent = fit_decay_exponent(&samples).ok();
        Ok(DoublingReport { constant, exponent })
    }

    /// Constants `c_low <= mu(B(x,r)) / (omega_d r^d) <= c_high` over the sample.
    pub fn check_ahlfors(
        &self,
        centers: &[usize],
        radii: &[f64],
        bound: f64,
    ) -> Result<AhlforsReport> {
        self.check_band(radii)?;
        if centers.is_empty() {
            return Err(invalid("at least one center required"));
        }
        let omega = unit_ball_volume(self.dim);
        let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
        for &x in centers {
            for &r in radii {
                let v =
                    self.ball_measure(&Ball::new(x, r)?) / (omega * libm::pow(r, self.dim as f64));
                lo = lo.min(v);
                hi = hi.max(v);
            }
        }
        Ok(AhlforsReport {
            c_low: lo,
            c_high: hi,
            pass: hi / lo <= bound,
        })
    }

    /// Sampled check of the metric axioms; returns the worst triangle violation.
    pub fn metric_violation(&self, triples: &[(usize, usize, usize)]) -> f64 {
        let mut worst: f64 = 0.0;
        for &(a, b, c) in triples {
            let (ab, bc, ac) = (self.dist(a, b), self.dist(b, c), self.dist(a, c));
            worst = worst.max(ac - ab - bc);
            worst = worst.max((ab - self.dist(b, a)).abs());
            if a == b {
                worst = worst.max(ab.abs());
            } else if ab <= 0.0 {
                worst = f64::INFINITY;
            }
        }
        worst
    }
}

#[derive(Clone, Debug)]
pub struct DoublingReport {
    pub constant: f64,
    /// Fitted slope of `log mu(B(x,r))` against `log r`; `None` below three radii or one decade.
    pub exponent: Option<DecayFit>,
}

#[derive(Clone, Copy, Debug)]
pub struct AhlforsReport {
    pub c_low: f64,
    pub c_high: f64,
    pub pass: bool,
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    libm::sqrt(a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum())
}

fn difference_sorted(outer: &[usize], inner: &[usize]) -> Vec<usize> {
    let mut out = Vec::with_capacity(outer.len() - inner.len().min(outer.len()));
    let mut j = 0;
    for &x in outer {
        while j < inner.len() && inner[j] < x {
            j += 1;
        }
        if j >= inner.len() || inner[j] != x {
            out.push(x);
        }
    }
    out
}

#[derive(PartialEq)]
struct Item(f64, usize);

impl Eq for Item {}

impl PartialOrd for Item {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Item {
    // Reversed for a min-heap on distance, ties broken by index.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .0
            .total_cmp(&self.0)
            .then_with(|| other.1.cmp(&self.1))
    }
}

fn dijkstra(adj: &[Vec<(usize, f64)>], source: usize, dist: &mut [f64]) {
    dist[source] = 0.0;
    let mut heap = BinaryHeap::new();
    heap.push(Item(0.0, source));
    while let Some(Item(d, u)) = heap.pop() {
        if d > dist[u] {
            continue;
        }
        for &(v, w) in &adj[u] {
            let nd = d + w;
            if nd < dist[v] {
                dist[v] = nd;
                heap.push(Item(nd, v));
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn torus_construction() {
        let s = Space::torus_grid(1, 4, 1.0).unwrap();
        assert_eq!(s.point_count(), 4);
        let xs: Vec<f64> = (0..4).map(|i| s.coords(i)[0]).collect();
        assert_eq!(xs, vec![0.0, 0.25, 0.5, 0.75]);
        assert!(s.weights().iter().all(|&w| w == 0.25));
        assert!((s.total_measure() - 1.0).abs() < 1e-12);

        let s = Space::torus_grid(2, 3, 3.0);
        assert!(s.is_err());
        let s = Space::torus_grid(2, 4, 4.0).unwrap();
        assert_eq!(s.point_count(), 16);
        assert!(s.weights().iter().all(|&w| w == 1.0));
    }

    #[test]
    fn torus_wrap_distance() {
        let s = Space::torus_grid(1, 256, 1.0).unwrap();
        assert_eq!(s.dist(0, 255), 1.0 / 256.0);
    }

    #[test]
    fn interval_construction() {
        let d = Space::interval_grid(4, 1.0, Boundary::Dirichlet).unwrap();
        let xs: Vec<f64> = (0..4).map(|i| d.coords(i)[0]).collect();
        for (x, e) in xs.iter().zip([0.2, 0.4, 0.6, 0.8]) {
            assert!((x - e).abs() < 1e-15);
        }
        assert!(d.weights().iter().all(|&w| (w - 0.2).abs() < 1e-15));
        let nm = Space::interval_grid(4, 1.0, Boundary::Neumann).unwrap();
        let xs: Vec<f64> = (0..4).map(|i| nm.coords(i)[0]).collect();
        assert_eq!(xs, vec![0.125, 0.375, 0.625, 0.875]);
        assert!((nm.total_measure() - 1.0).abs() < 1e-12);
        assert!(Space::interval_grid(3, 1.0, Boundary::Neumann).is_err());
    }

    #[test]
    fn ball_membership() {
        let s = Space::torus_grid(1, 4, 1.0).unwrap();
        assert_eq!(s.ball_members(&Ball::new(0, 0.25).unwrap()), vec![0, 1, 3]);
        let small = Ball::new(0, 0.24).unwrap();
        assert_eq!(s.ball_members(&small), vec![0]);
        assert!(small.below_spacing(&s));
        let big = Ball::new(2, s.diameter()).unwrap();
        assert_eq!(s.ball_members(&big), vec![0, 1, 2, 3]);
    }

    #[test]
    fn torus_ball_matches_scan() {
        let s = Space::torus_grid(2, 12, 1.0).unwrap();
        for &r in &[0.05, 0.1, 0.2, 0.37, 0.5, 0.8] {
            let b = Ball::new(17, r).unwrap();
            let scan: Vec<usize> = (0..s.point_count())
                .filter(|&j| s.dist(17, j) <= r + 1e-12 * s.spacing())
                .collect();
            assert_eq!(s.ball_members(&b), scan);
        }
    }

    #[test]
    fn corona_one() {
        let s = Space::torus_grid(1, 64, 1.0).unwrap();
        let h = s.spacing();
        let b = Ball::new(0, h).unwrap();
        let c1 = s.corona_members(&b, 1);
        assert_eq!(c1, vec![2, 62]);
        assert_eq!(s.corona_members(&b, 0), s.ball_members(&b));
    }

    #[test]
    fn coronas_cover_space() {
        let s = Space::torus_grid(2, 16, 1.0).unwrap();
        let b = Ball::new(5, 2.0 * s.spacing()).unwrap();
        let top = libm::ceil(libm::log2(s.diameter() / b.radius)) as u32;
        let mut all: Vec<usize> = (0..=top).flat_map(|i| s.corona_members(&b, i)).collect();
        let count = all.len();
        all.sort_unstable();
        all.dedup();
        assert_eq!(all.len(), count);
        assert_eq!(all.len(), s.point_count());
    }

    #[test]
    fn doubling_bounds_1d() {
        let s = Space::torus_grid(1, 256, 1.0).unwrap();
        let h = s.spacing();
        let radii: Vec<f64> = (1..=32).map(|k| k as f64 * h).collect();
        for &r in &radii {
            let rep = s.check_doubling(&[0, 100], &[r]).unwrap();
            assert!(rep.constant <= 2.0 + 3.0 * h / r);
        }
        let rep = s.check_doubling(&[7], &[s.diameter() / 4.0]).unwrap();
        assert!(rep.constant <= 4.0);
        assert!(s.check_doubling(&[0], &[0.5 * h]).is_err());
        let rep = s.check_doubling(&[0], &radii).unwrap();
        let fit = rep.exponent.unwrap();
        assert!((fit.slope - 1.0).abs() < 0.1);
    }

    #[test]
    fn ahlfors_closed_form_1d() {
        let s = Space::torus_grid(1, 256, 1.0).unwrap();
        let h = s.spacing();
        for k in 1..=32 {
            let r = k as f64 * h;
            let rep = s.check_ahlfors(&[0, 31], &[r], 10.0).unwrap();
            let exact = (2 * k + 1) as f64 * h / (2.0 * r);
            assert!((rep.c_low - exact).abs() < 1e-12);
            assert!(rep.c_low >= 1.0 && rep.c_high <= 1.0 + 3.0 * h / r);
        }
        assert!(s.check_ahlfors(&[0], &[0.5 * h], 10.0).is_err());
    }

    #[test]
    fn ahlfors_disc_2d() {
        let s = Space::torus_grid(2, 64, 1.0).unwrap();
        let rep = s.check_ahlfors(&[0], &[10.0 * s.spacing()], 1.5).unwrap();
        assert!(rep.pass);
    }

    #[test]
    fn graph_shortest_path() {
        // Unit square cycle: opposite corners at path distance 2.
        let coords = vec![
            vec![0.0, 0.0],
            vec![1.0, 0.0],
            vec![1.0, 1.0],
            vec![0.0, 1.0],
        ];
        let edges = vec![(0, 1), (1, 2), (2, 3), (3, 0)];
        let g = Space::general_graph(coords, vec![1.0; 4], edges, 1).unwrap();
        assert_eq!(g.dist(0, 2), 2.0);
        assert_eq!(g.diameter(), 2.0);
        assert_eq!(g.spacing(), 1.0);
        let coords = vec![vec![0.0], vec![1.0], vec![2.0]];
        let r = Space::general_graph(coords, vec![1.0; 3], vec![(0, 1)], 1);
        assert_eq!(r.unwrap_err(), Error::Disconnected);
    }
}
