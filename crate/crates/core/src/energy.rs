//! Even, convex, 2-homogeneous Dirichlet energies on a [`DiscreteSpace`].
//!
//! Two families are supported:
//!
//! * quadratic forms `Ch(u) = sum_e w_e (u(b) - u(a))^2` over an edge list;
//! * Finsler-type forms `Ch(u) = sum_x m(x) (sum_{y~x} w_xy |u(y) - u(x)|^q)^{2/q}`
//!   for `q` in `[1, inf]`, where `q = inf` takes the weighted maximum over
//!   neighbours before squaring.
//!
//! The Laplacian `-Δu` is the element of minimal `L^2(m)` norm in the
//! subdifferential of `½Ch` at `u`. For quadratic forms and for `1 < q < inf`
//! the subdifferential is a singleton; for `q = 1` and `q = inf` the minimal
//! element is found by projecting the origin onto the subdifferential polytope.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::qp::{QpOptions, QuadraticProgram};
use crate::space::{same_space, weighted_dot, DiscreteSpace, L2Function};

/// Relative tolerance used to decide that two neighbour differences tie for the
/// maximum (`q = inf`) or that a difference vanishes (`q = 1`).
pub const TIE_TOL: f64 = 1e-9;

/// Tolerance of the inner projection problems.
pub const PROJECTION_TOL: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Edge {
    pub a: usize,
    pub b: usize,
    pub weight: f64,
}

impl Edge {
    pub fn new(a: usize, b: usize, weight: f64) -> Self {
        Self { a, b, weight }
    }
}

/// Finsler exponent `q` in `[1, inf]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Exponent {
    Finite(f64),
    Infinity,
}

impl Exponent {
    pub fn is_smooth(self) -> bool {
        matches!(self, Exponent::Finite(q) if q > 1.0)
    }
}

#[derive(Clone, Debug)]
pub enum EnergyKind {
    Quadratic { edges: Vec<Edge> },
    LqFinsler { q: Exponent, neighbors: Vec<Vec<(usize, f64)>> },
}

/// A Dirichlet energy bound to one space.
#[derive(Clone, Debug)]
pub struct EnergyForm {
    space: Arc<DiscreteSpace>,
    kind: EnergyKind,
    scale: f64,
}

impl EnergyForm {
    pub fn quadratic(space: &Arc<DiscreteSpace>, edges: Vec<Edge>) -> Result<Self> {
        check_edges(space, &edges)?;
        Ok(Self { space: Arc::clone(space), kind: EnergyKind::Quadratic { edges }, scale: 1.0 })
    }

    /// Finsler form whose neighbour lists are the symmetric closure of `edges`:
    /// an entry `(a, b, w)` puts `b` in the list of `a` with weight `w`, and also
    /// `a` in the list of `b` unless the reverse pair is listed explicitly.
    pub fn lq(space: &Arc<DiscreteSpace>, q: Exponent, edges: &[Edge]) -> Result<Self> {
        check_edges(space, edges)?;
        let listed: std::collections::HashSet<(usize, usize)> = edges.iter().map(|e| (e.a, e.b)).collect();
        let mut neighbors = vec![Vec::new(); space.len()];
        for e in edges {
            if e.a == e.b {
                continue;
            }
            neighbors[e.a].push((e.b, e.weight));
            if !listed.contains(&(e.b, e.a)) {
                neighbors[e.b].push((e.a, e.weight));
            }
        }
        Self::lq_from_neighbors(space, q, neighbors)
    }

    /// Finsler form from explicit per-point neighbour lists `(y, w_xy)`.
    pub fn lq_from_neighbors(
        space: &Arc<DiscreteSpace>,
        q: Exponent,
        neighbors: Vec<Vec<(usize, f64)>>,
    ) -> Result<Self> {
        if let Exponent::Finite(q) = q {
            if !(q >= 1.0 && q.is_finite()) {
                return Err(Error::InvalidParameter(format!("exponent q = {q} outside [1, inf]")));
            }
        }
        if neighbors.len() != space.len() {
            return Err(Error::InvalidParameter("one neighbour list per point required".into()));
        }
        for (x, nb) in neighbors.iter().enumerate() {
            for &(y, w) in nb {
                if y >= space.len() || y == x || !(w >= 0.0 && w.is_finite()) {
                    return Err(Error::InvalidParameter(format!("neighbour ({x}, {y}, {w})")));
                }
            }
        }
        Ok(Self { space: Arc::clone(space), kind: EnergyKind::LqFinsler { q, neighbors }, scale: 1.0 })
    }

    pub fn space(&self) -> &Arc<DiscreteSpace> {
        &self.space
    }

    pub fn kind(&self) -> &EnergyKind {
        &self.kind
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn is_quadratic(&self) -> bool {
        matches!(self.kind, EnergyKind::Quadratic { .. })
    }

    /// The form `c * Ch`.
    pub fn scaled(&self, c: f64) -> Result<Self> {
        if !(c > 0.0 && c.is_finite()) {
            return Err(Error::InvalidParameter(format!("energy scale {c}")));
        }
        let mut out = self.clone();
        out.scale *= c;
        Ok(out)
    }

    /// The same form on an equal space held by a different `Arc`.
    pub fn rebind(&self, space: &Arc<DiscreteSpace>) -> Result<Self> {
        if !same_space(&self.space, space) {
            return Err(Error::SpaceMismatch);
        }
        let mut out = self.clone();
        out.space = Arc::clone(space);
        Ok(out)
    }

    /// The quadratic form with the same energy as a `q = 2` Finsler form.
    pub fn quadratic_equivalent(&self) -> Result<Self> {
        match &self.kind {
            EnergyKind::Quadratic { .. } => Ok(self.clone()),
            EnergyKind::LqFinsler { q: Exponent::Finite(q), neighbors } if *q == 2.0 => {
                let m = self.space.measure();
                let mut edges = Vec::new();
                for (x, nb) in neighbors.iter().enumerate() {
                    for &(y, w) in nb {
                        edges.push(Edge::new(x, y, self.scale * m[x] * w));
                    }
                }
                Self::quadratic(&self.space, edges)
            }
            _ => Err(Error::NotQuadratic),
        }
    }

    /// A quadratic form on the same neighbour graph, with weights
    /// `m(x) w_xy^{2/q}` (`w_xy^2` for `q = inf`). It matches the energy for
    /// `q = 2` and only serves as a warm start otherwise.
    pub(crate) fn comparison_quadratic(&self) -> Result<Self> {
        match &self.kind {
            EnergyKind::Quadratic { .. } => Ok(self.clone()),
            EnergyKind::LqFinsler { q, neighbors } => {
                let p = match q {
                    Exponent::Infinity => 2.0,
                    Exponent::Finite(q) => 2.0 / q,
                };
                let m = self.space.measure();
                let mut edges = Vec::new();
                for (x, nb) in neighbors.iter().enumerate() {
                    for &(y, w) in nb {
                        edges.push(Edge::new(x, y, self.scale * m[x] * w.powf(p)));
                    }
                }
                Self::quadratic(&self.space, edges)
            }
        }
    }

    /// Stiffness matrix `A` with `Ch(u) = u'Au` (quadratic kinds only).
    pub fn stiffness(&self) -> Result<DMatrix<f64>> {
        let EnergyKind::Quadratic { edges } = &self.kind else {
            return Err(Error::NotQuadratic);
        };
        let n = self.space.len();
        let mut a = DMatrix::zeros(n, n);
        for e in edges {
            if e.a == e.b {
                continue;
            }
            let w = self.scale * e.weight;
            a[(e.a, e.a)] += w;
            a[(e.b, e.b)] += w;
            a[(e.a, e.b)] -= w;
            a[(e.b, e.a)] -= w;
        }
        Ok(a)
    }

    /// Connectivity of the graph of positive-weight edges.
    pub fn is_connected(&self) -> bool {
        let n = self.space.len();
        let mut parent: Vec<usize> = (0..n).collect();
        fn find(p: &mut [usize], mut x: usize) -> usize {
            while p[x] != x {
                p[x] = p[p[x]];
                x = p[x];
            }
            x
        }
        let mut union = |a: usize, b: usize| {
            let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
            parent[ra] = rb;
        };
        match &self.kind {
            EnergyKind::Quadratic { edges } => {
                for e in edges.iter().filter(|e| e.weight > 0.0) {
                    union(e.a, e.b);
                }
            }
            EnergyKind::LqFinsler { neighbors, .. } => {
                for (x, nb) in neighbors.iter().enumerate() {
                    for &(y, w) in nb {
                        if w > 0.0 {
                            union(x, y);
                        }
                    }
                }
            }
        }
        let root = find(&mut parent, 0);
        (1..n).all(|x| find(&mut parent, x) == root)
    }

    fn check(&self, u: &L2Function) -> Result<()> {
        if same_space(&self.space, u.space()) {
            Ok(())
        } else {
            Err(Error::SpaceMismatch)
        }
    }

    /// `Ch(u)`.
    pub fn energy(&self, u: &L2Function) -> Result<f64> {
        self.check(u)?;
        Ok(self.energy_of(u.values()))
    }

    pub(crate) fn energy_of(&self, u: &[f64]) -> f64 {
        let raw: f64 = match &self.kind {
            EnergyKind::Quadratic { edges } => edges
                .iter()
                .map(|e| {
                    let d = u[e.b] - u[e.a];
                    e.weight * d * d
                })
                .sum(),
            EnergyKind::LqFinsler { q, neighbors } => {
                let m = self.space.measure();
                neighbors
                    .iter()
                    .enumerate()
                    .map(|(x, nb)| m[x] * local_norm(*q, u, x, nb).powi(2))
                    .sum()
            }
        };
        self.scale * raw
    }

    /// `-Δu`: the minimal-norm element of `∂(½Ch)(u)` in `L^2(m)`.
    pub fn laplacian(&self, u: &L2Function) -> Result<L2Function> {
        self.check(u)?;
        Ok(u.with_values(self.laplacian_of(u.values())?))
    }

    pub(crate) fn laplacian_of(&self, u: &[f64]) -> Result<Vec<f64>> {
        let m = self.space.measure();
        let n = u.len();
        let mut g = vec![0.0; n];
        match &self.kind {
            EnergyKind::Quadratic { edges } => {
                for e in edges {
                    let f = self.scale * e.weight * (u[e.a] - u[e.b]);
                    g[e.a] += f;
                    g[e.b] -= f;
                }
            }
            EnergyKind::LqFinsler { q: Exponent::Finite(q), neighbors } if *q > 1.0 => {
                for (x, nb) in neighbors.iter().enumerate() {
                    let norm = local_norm(Exponent::Finite(*q), u, x, nb);
                    if norm == 0.0 {
                        continue;
                    }
                    for &(y, w) in nb {
                        let d = u[y] - u[x];
                        let phi = self.scale * m[x] * norm.powf(2.0 - q) * w * d.abs().powf(q - 1.0) * d.signum();
                        g[y] += phi;
                        g[x] -= phi;
                    }
                }
            }
            EnergyKind::LqFinsler { q, neighbors } => {
                return self.minimal_subgradient_polytope(*q, neighbors, u);
            }
        }
        for (gi, mi) in g.iter_mut().zip(m) {
            *gi /= mi;
        }
        Ok(g)
    }

    /// Some element of `∂(½Ch)(u)` in `L^2(m)`, without the minimal-norm
    /// selection (ties broken by the first maximizer, `sign(0) = 0`).
    pub(crate) fn any_subgradient_of(&self, u: &[f64]) -> Result<Vec<f64>> {
        let EnergyKind::LqFinsler { q, neighbors } = &self.kind else {
            return self.laplacian_of(u);
        };
        if q.is_smooth() {
            return self.laplacian_of(u);
        }
        let m = self.space.measure();
        let mut g = vec![0.0; u.len()];
        for (x, nb) in neighbors.iter().enumerate() {
            let norm = local_norm(*q, u, x, nb);
            if norm == 0.0 {
                continue;
            }
            let c = self.scale * m[x] * norm;
            match q {
                Exponent::Infinity => {
                    let (y, w) = nb
                        .iter()
                        .copied()
                        .max_by(|a, b| (a.1 * (u[a.0] - u[x]).abs()).total_cmp(&(b.1 * (u[b.0] - u[x]).abs())))
                        .expect("nonzero local norm has a neighbour");
                    let phi = c * w * (u[y] - u[x]).signum();
                    g[y] += phi;
                    g[x] -= phi;
                }
                Exponent::Finite(_) => {
                    for &(y, w) in nb {
                        let d = u[y] - u[x];
                        let phi = if d == 0.0 { 0.0 } else { c * w * d.signum() };
                        g[y] += phi;
                        g[x] -= phi;
                    }
                }
            }
        }
        for (gi, mi) in g.iter_mut().zip(m) {
            *gi /= mi;
        }
        Ok(g)
    }

    /// Minimal-norm subgradient for `q = 1` and `q = inf` by a small QP over
    /// the generators of the subdifferential.
    fn minimal_subgradient_polytope(
        &self,
        q: Exponent,
        neighbors: &[Vec<(usize, f64)>],
        u: &[f64],
    ) -> Result<Vec<f64>> {
        let m = self.space.measure();
        let n = u.len();
        // Euclidean gradient g = g0 + sum_j theta_j b_j
        let mut g0 = vec![0.0; n];
        let mut gens: Vec<(usize, usize, f64)> = Vec::new(); // (plus, minus, coefficient)
        let mut simplex_blocks: Vec<Vec<usize>> = Vec::new();
        let mut box_vars: Vec<usize> = Vec::new();

        for (x, nb) in neighbors.iter().enumerate() {
            match q {
                Exponent::Infinity => {
                    let mx = local_norm(q, u, x, nb);
                    if mx == 0.0 {
                        continue;
                    }
                    let active: Vec<_> = nb
                        .iter()
                        .filter(|(y, w)| w * (u[*y] - u[x]).abs() >= mx * (1.0 - TIE_TOL))
                        .collect();
                    let coef = |y: usize, w: f64| self.scale * m[x] * mx * w * (u[y] - u[x]).signum();
                    if active.len() == 1 {
                        let (y, w) = *active[0];
                        let c = coef(y, w);
                        g0[y] += c;
                        g0[x] -= c;
                    } else {
                        let mut block = Vec::with_capacity(active.len());
                        for &&(y, w) in &active {
                            block.push(gens.len());
                            gens.push((y, x, coef(y, w)));
                        }
                        simplex_blocks.push(block);
                    }
                }
                Exponent::Finite(_) => {
                    // q = 1
                    let sx = local_norm(q, u, x, nb);
                    if sx == 0.0 {
                        continue;
                    }
                    let scale = nb.iter().map(|(y, w)| w * (u[*y] - u[x]).abs()).fold(0.0, f64::max);
                    for &(y, w) in nb {
                        let d = u[y] - u[x];
                        let c = self.scale * m[x] * sx * w;
                        if w * d.abs() > TIE_TOL * scale {
                            g0[y] += c * d.signum();
                            g0[x] -= c * d.signum();
                        } else {
                            box_vars.push(gens.len());
                            gens.push((y, x, c));
                        }
                    }
                }
            }
        }

        if gens.is_empty() {
            return Ok(g0.iter().zip(m).map(|(g, w)| g / w).collect());
        }

        // objective  (g0 + B theta)' M^-1 (g0 + B theta)
        let k = gens.len();
        let col = |j: usize| {
            let (p, mi, c) = gens[j];
            let mut v = DVector::zeros(n);
            v[p] += c;
            v[mi] -= c;
            v
        };
        let minv = DVector::from_iterator(n, m.iter().map(|w| 1.0 / w));
        let b = DMatrix::from_columns(&(0..k).map(col).collect::<Vec<_>>());
        let mb = DMatrix::from_fn(n, k, |i, j| minv[i] * b[(i, j)]);
        let h = 2.0 * b.transpose() * &mb;
        let g0v = DVector::from_vec(g0.clone());
        let c = 2.0 * mb.transpose() * &g0v;

        let mut rows_g: Vec<Vec<f64>> = Vec::new();
        let mut h_ub = Vec::new();
        for j in 0..k {
            let mut r = vec![0.0; k];
            r[j] = -1.0;
            rows_g.push(r);
            h_ub.push(0.0);
        }
        for &j in &box_vars {
            // theta in [-1, 1]
            let mut r = vec![0.0; k];
            r[j] = 1.0;
            rows_g.push(r);
            h_ub.push(1.0);
            rows_g[j][j] = -1.0;
            h_ub[j] = 1.0;
        }
        let g = DMatrix::from_fn(rows_g.len(), k, |i, j| rows_g[i][j]);
        let a_eq = (!simplex_blocks.is_empty()).then(|| {
            let a = DMatrix::from_fn(simplex_blocks.len(), k, |i, j| {
                if simplex_blocks[i].contains(&j) {
                    1.0
                } else {
                    0.0
                }
            });
            (a, DVector::from_element(simplex_blocks.len(), 1.0))
        });
        let qp = QuadraticProgram { h, c, a_eq, g, h_ub: DVector::from_vec(h_ub) };
        let sol = qp.solve(QpOptions { tol: PROJECTION_TOL * 1e-2, max_iter: 200, accept: PROJECTION_TOL })?;
        let grad = g0v + &b * &sol.x;
        Ok(grad.iter().zip(m).map(|(g, w)| g / w).collect())
    }

    /// `argmin_v  s Ch(v) + (kappa/2) |v - z|^2_{L^2(m)}`.
    pub(crate) fn regularized_minimizer(&self, s: f64, kappa: f64, z: &[f64]) -> Result<Vec<f64>> {
        let m = self.space.measure();
        let n = z.len();
        // zero energy points minimize both terms
        if s == 0.0 || self.energy_of(z) == 0.0 {
            return Ok(z.to_vec());
        }
        match &self.kind {
            EnergyKind::Quadratic { .. } => {
                let a = self.stiffness()?;
                let mut k = 2.0 * s * a;
                for i in 0..n {
                    k[(i, i)] += kappa * m[i];
                }
                let rhs = DVector::from_fn(n, |i, _| kappa * m[i] * z[i]);
                let chol = k
                    .cholesky()
                    .ok_or_else(|| Error::SolverFailure("resolvent matrix not positive definite".into()))?;
                Ok(chol.solve(&rhs).iter().copied().collect())
            }
            EnergyKind::LqFinsler { q, neighbors } if q.is_smooth() => {
                self.smooth_regularized_minimizer(s, kappa, z, *q, neighbors)
            }
            EnergyKind::LqFinsler { q, neighbors } => self.polyhedral_regularized_minimizer(s, kappa, z, *q, neighbors),
        }
    }

    fn polyhedral_regularized_minimizer(
        &self,
        s: f64,
        kappa: f64,
        z: &[f64],
        q: Exponent,
        neighbors: &[Vec<(usize, f64)>],
    ) -> Result<Vec<f64>> {
        let m = self.space.measure();
        let n = z.len();
        let s = s * self.scale;
        // variables: v (n), t (n), and for q = 1 one slack per directed pair
        let pairs: Vec<(usize, usize, f64)> = neighbors
            .iter()
            .enumerate()
            .flat_map(|(x, nb)| nb.iter().map(move |&(y, w)| (x, y, w)))
            .collect();
        let extra = if q == Exponent::Infinity { 0 } else { pairs.len() };
        let nv = 2 * n + extra;
        let mut h = DMatrix::zeros(nv, nv);
        let mut c = DVector::zeros(nv);
        for x in 0..n {
            h[(x, x)] = kappa * m[x];
            c[x] = -kappa * m[x] * z[x];
            h[(n + x, n + x)] = 2.0 * s * m[x];
        }
        let mut rows: Vec<(Vec<(usize, f64)>, f64)> = Vec::new();
        for (p, &(x, y, w)) in pairs.iter().enumerate() {
            let bound = if q == Exponent::Infinity { n + x } else { 2 * n + p };
            rows.push((vec![(y, w), (x, -w), (bound, -1.0)], 0.0));
            rows.push((vec![(y, -w), (x, w), (bound, -1.0)], 0.0));
        }
        if q != Exponent::Infinity {
            for x in 0..n {
                let mut r = vec![(n + x, -1.0)];
                for (p, &(px, _, _)) in pairs.iter().enumerate() {
                    if px == x {
                        r.push((2 * n + p, 1.0));
                    }
                }
                rows.push((r, 0.0));
            }
        }
        let g = DMatrix::from_fn(rows.len(), nv, |i, j| {
            rows[i].0.iter().filter(|(k, _)| *k == j).map(|(_, v)| v).sum()
        });
        let h_ub = DVector::from_iterator(rows.len(), rows.iter().map(|r| r.1));
        let qp = QuadraticProgram { h, c, a_eq: None, g, h_ub };
        let sol = qp.solve(QpOptions { tol: 1e-13, max_iter: 300, accept: 1e-9 })?;
        Ok(sol.x.rows(0, n).iter().copied().collect())
    }

    fn smooth_regularized_minimizer(
        &self,
        s: f64,
        kappa: f64,
        z: &[f64],
        q: Exponent,
        neighbors: &[Vec<(usize, f64)>],
    ) -> Result<Vec<f64>> {
        let _ = (q, neighbors);
        let m = self.space.measure();
        let n = z.len();
        let objective = |v: &[f64]| {
            s * self.energy_of(v) + 0.5 * kappa * (0..n).map(|i| m[i] * (v[i] - z[i]).powi(2)).sum::<f64>()
        };
        // L^2(m) gradient of the objective
        let gradient = |v: &[f64]| -> Result<Vec<f64>> {
            let lap = self.laplacian_of(v)?;
            Ok((0..n).map(|i| 2.0 * s * lap[i] + kappa * (v[i] - z[i])).collect())
        };
        let tol = 1e-10 * (1.0 + kappa * weighted_dot(m, z, z).sqrt());

        let mut x = z.to_vec();
        let mut y = x.clone();
        let mut t = 1.0f64;
        let mut lip = kappa + 2.0 * s * self.lipschitz_guess();
        let mut fx = objective(&x);
        for _ in 0..200_000 {
            let gy = gradient(&y)?;
            let gnorm = weighted_dot(m, &gy, &gy).sqrt();
            if gnorm <= tol {
                let gx = gradient(&x)?;
                return Ok(if weighted_dot(m, &gx, &gx).sqrt() <= gnorm { x } else { y });
            }
            let fy = objective(&y);
            let (x_new, f_new) = loop {
                let cand: Vec<f64> = (0..n).map(|i| y[i] - gy[i] / lip).collect();
                let fc = objective(&cand);
                let d2: f64 = (0..n).map(|i| m[i] * (cand[i] - y[i]).powi(2)).sum();
                let lin: f64 = (0..n).map(|i| m[i] * gy[i] * (cand[i] - y[i])).sum();
                if fc <= fy + lin + 0.5 * lip * d2 + 1e-15 * fy.abs() {
                    break (cand, fc);
                }
                lip *= 2.0;
            };
            let t_new = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
            if f_new > fx {
                // adaptive restart
                y = x.clone();
                t = 1.0;
                continue;
            }
            let beta = (t - 1.0) / t_new;
            y = (0..n).map(|i| x_new[i] + beta * (x_new[i] - x[i])).collect();
            x = x_new;
            fx = f_new;
            t = t_new;
            lip *= 0.9;
        }
        Err(Error::SolverFailure("accelerated gradient did not reach tolerance".into()))
    }

    fn lipschitz_guess(&self) -> f64 {
        let m = self.space.measure();
        let min_m = m.iter().cloned().fold(f64::INFINITY, f64::min);
        let wmax = match &self.kind {
            EnergyKind::Quadratic { edges } => edges.iter().map(|e| e.weight).fold(0.0, f64::max),
            EnergyKind::LqFinsler { neighbors, .. } => {
                neighbors.iter().flatten().map(|(_, w)| *w).fold(0.0, f64::max)
            }
        };
        self.scale * wmax / min_m
    }

    /// Descending slope: `|Δu|` for `½Ch`, or the slope of the constrained
    /// functional `Ch + ι{|u| <= 1, Ch <= cap} - shift |u|^2` when `constraint` is set.
    pub fn descending_slope(&self, u: &L2Function, constraint: Option<SlopeConstraint>) -> Result<f64> {
        self.check(u)?;
        let lap = self.laplacian_of(u.values())?;
        let m = self.space.measure();
        let xi_norm2 = weighted_dot(m, &lap, &lap);
        let Some(con) = constraint else {
            return Ok(xi_norm2.sqrt());
        };
        let ch = self.energy_of(u.values());
        let norm2 = u.norm().powi(2);
        if norm2.sqrt() > 1.0 + 1e-9 || ch > con.cap * (1.0 + 1e-12) + 1e-12 {
            return Err(Error::OutsideDomain(format!(
                "|u| = {:.6}, Ch(u) = {ch:.6} with cap {}",
                norm2.sqrt(),
                con.cap
            )));
        }
        let on_sphere = (norm2.sqrt() - 1.0).abs() <= 1e-9;
        let on_cap = ch >= con.cap * (1.0 - 1e-12);
        if on_sphere {
            // minimal element is 2(-Δu - Ch(u) u), whatever the cap
            let tangential: Vec<f64> = lap.iter().zip(u.values()).map(|(x, v)| x - ch * v).collect();
            return Ok(2.0 * weighted_dot(m, &tangential, &tangential).sqrt());
        }
        // interior of the ball: minimize |2(1+nu) ξ - 2 L u| over nu >= 0 (nu = 0 off the cap)
        let mut factor = 1.0;
        if on_cap && xi_norm2 > 0.0 {
            factor = (con.shift * ch / xi_norm2).max(1.0);
        }
        let val = factor * factor * xi_norm2 - 2.0 * factor * con.shift * ch + con.shift * con.shift * norm2;
        Ok(2.0 * val.max(0.0).sqrt())
    }
}

/// Constraint data of `Φ_L`: energy cap `M` and shift `L`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SlopeConstraint {
    pub cap: f64,
    pub shift: f64,
}

fn local_norm(q: Exponent, u: &[f64], x: usize, nb: &[(usize, f64)]) -> f64 {
    match q {
        Exponent::Infinity => nb.iter().map(|(y, w)| w * (u[*y] - u[x]).abs()).fold(0.0, f64::max),
        Exponent::Finite(1.0) => nb.iter().map(|(y, w)| w * (u[*y] - u[x]).abs()).sum(),
        Exponent::Finite(q) => {
            let s: f64 = nb.iter().map(|(y, w)| w * (u[*y] - u[x]).abs().powf(q)).sum();
            s.powf(1.0 / q)
        }
    }
}

fn check_edges(space: &DiscreteSpace, edges: &[Edge]) -> Result<()> {
    for e in edges {
        if e.a >= space.len() || e.b >= space.len() {
            return Err(Error::InvalidParameter(format!("edge ({}, {}) out of range", e.a, e.b)));
        }
        if !(e.weight >= 0.0 && e.weight.is_finite()) {
            return Err(Error::InvalidParameter(format!("edge weight {}", e.weight)));
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// JSON file format

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum ExponentRecord {
    Number(f64),
    Keyword(String),
}

#[derive(Serialize, Deserialize)]
struct EnergyRecord {
    kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    q: Option<ExponentRecord>,
    edges: Vec<(String, String, f64)>,
}

impl EnergyForm {
    pub fn from_json(space: &Arc<DiscreteSpace>, text: &str) -> Result<Self> {
        let rec: EnergyRecord = serde_json::from_str(text)?;
        let mut edges = Vec::with_capacity(rec.edges.len());
        for (a, b, w) in rec.edges {
            let ia = space.index_of(&a).ok_or_else(|| Error::InvalidParameter(format!("unknown point `{a}`")))?;
            let ib = space.index_of(&b).ok_or_else(|| Error::InvalidParameter(format!("unknown point `{b}`")))?;
            edges.push(Edge::new(ia, ib, w));
        }
        match rec.kind.as_str() {
            "quadratic" => Self::quadratic(space, edges),
            "lq" => {
                let q = match rec.q {
                    Some(ExponentRecord::Number(q)) => Exponent::Finite(q),
                    Some(ExponentRecord::Keyword(k)) if k == "inf" => Exponent::Infinity,
                    Some(ExponentRecord::Keyword(k)) => {
                        return Err(Error::InvalidParameter(format!("unknown exponent `{k}`")))
                    }
                    None => return Err(Error::InvalidParameter("lq energy without `q`".into())),
                };
                Self::lq(space, q, &edges)
            }
            other => Err(Error::InvalidParameter(format!("unknown energy kind `{other}`"))),
        }
    }

    pub fn to_json(&self) -> String {
        let ids = self.space.ids();
        let rec = match &self.kind {
            EnergyKind::Quadratic { edges } => EnergyRecord {
                kind: "quadratic".into(),
                q: None,
                edges: edges
                    .iter()
                    .map(|e| (ids[e.a].clone(), ids[e.b].clone(), self.scale * e.weight))
                    .collect(),
            },
            EnergyKind::LqFinsler { q, neighbors } => {
                let factor = match q {
                    Exponent::Infinity => self.scale.sqrt(),
                    Exponent::Finite(q) => self.scale.powf(q / 2.0),
                };
                let mut edges = Vec::new();
                for (x, nb) in neighbors.iter().enumerate() {
                    for &(y, w) in nb {
                        edges.push((ids[x].clone(), ids[y].clone(), factor * w));
                    }
                }
                EnergyRecord {
                    kind: "lq".into(),
                    q: Some(match q {
                        Exponent::Infinity => ExponentRecord::Keyword("inf".into()),
                        Exponent::Finite(q) => ExponentRecord::Number(*q),
                    }),
                    edges,
                }
            }
        };
        serde_json::to_string_pretty(&rec).expect("energy serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::space::{make_cycle, make_path};

    fn two_point() -> (Arc<DiscreteSpace>, EnergyForm) {
        let s = Arc::new(make_path(2, 1.0).unwrap());
        let e = EnergyForm::quadratic(&s, vec![Edge::new(0, 1, 1.0)]).unwrap();
        (s, e)
    }

    #[test]
    fn two_point_energy_values() {
        let (s, e) = two_point();
        let u = L2Function::new(&s, vec![1.0, -1.0]).unwrap();
        assert_eq!(e.energy(&u).unwrap(), 4.0);
        assert_eq!(e.energy(&u.scaled(2.0)).unwrap(), 16.0);
        assert_eq!(e.energy(&L2Function::constant(&s, 3.0)).unwrap(), 0.0);
    }

    #[test]
    fn two_point_laplacian_matches_generalized_relation() {
        let (s, e) = two_point();
        let u = L2Function::new(&s, vec![1.0, -1.0]).unwrap();
        // M^-1 A u with A = [[1,-1],[-1,1]], M = diag(1/2, 1/2)
        assert_eq!(e.laplacian(&u).unwrap().values(), &[4.0, -4.0]);
        let c = L2Function::constant(&s, 2.0);
        assert_eq!(e.laplacian(&c).unwrap().values(), &[0.0, 0.0]);
        assert_eq!(e.descending_slope(&u, None).unwrap(), 4.0);
        assert_eq!(e.descending_slope(&c, None).unwrap(), 0.0);
    }

    #[test]
    fn space_mismatch_is_reported() {
        let (_, e) = two_point();
        let other = Arc::new(make_cycle(3, 1.0).unwrap());
        assert!(matches!(e.energy(&L2Function::zeros(&other)), Err(Error::SpaceMismatch)));
    }

    #[test]
    fn infinity_laplacian_on_three_point_path() {
        let s = Arc::new(make_path(3, 1.0).unwrap());
        let edges = [Edge::new(0, 1, 1.0), Edge::new(1, 2, 1.0)];
        let e = EnergyForm::lq(&s, Exponent::Infinity, &edges).unwrap();
        let u = L2Function::new(&s, vec![0.0, 1.0, 3.0]).unwrap();
        let xi = e.laplacian(&u).unwrap();
        let ch = e.energy(&u).unwrap();
        assert!((xi.inner(&u).unwrap() - ch).abs() < 1e-10);
    }

    #[test]
    fn lq_rejects_bad_exponent() {
        let s = Arc::new(make_path(3, 1.0).unwrap());
        assert!(EnergyForm::lq(&s, Exponent::Finite(0.5), &[]).is_err());
    }

    #[test]
    fn connectivity() {
        let s = Arc::new(make_path(4, 1.0).unwrap());
        let e = EnergyForm::quadratic(&s, vec![Edge::new(0, 1, 1.0), Edge::new(2, 3, 1.0)]).unwrap();
        assert!(!e.is_connected());
        let e = EnergyForm::quadratic(&s, vec![Edge::new(0, 1, 1.0), Edge::new(1, 2, 1.0), Edge::new(2, 3, 1.0)])
            .unwrap();
        assert!(e.is_connected());
    }

    #[test]
    fn json_round_trip() {
        let s = Arc::new(make_path(3, 1.0).unwrap());
        let edges = [Edge::new(0, 1, 2.0), Edge::new(1, 2, 0.5)];
        let e = EnergyForm::lq(&s, Exponent::Infinity, &edges).unwrap();
        let back = EnergyForm::from_json(&s, &e.to_json()).unwrap();
        let u = L2Function::new(&s, vec![0.3, -1.0, 2.0]).unwrap();
        assert_eq!(back.energy(&u).unwrap(), e.energy(&u).unwrap());
        let q = EnergyForm::from_json(&s, r#"{"kind":"quadratic","edges":[["p0","p1",1.0]]}"#).unwrap();
        assert!(q.is_quadratic());
        assert!(EnergyForm::from_json(&s, r#"{"kind":"lq","edges":[]}"#).is_err());
    }
}
