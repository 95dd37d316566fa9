//! Optimal couplings between discrete spaces sharing an ambient space, atom
//! splitting of plans into maps, the induced `L^2` isometries, cross-space
//! convergence tests and Hausdorff distances between finite sets of functions.

use std::collections::VecDeque;
use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::space::{DiscreteSpace, L2Function, TruncatedCost};

/// Plans whose marginals drift further than this are rejected.
pub const MARGINAL_TOL: f64 = 1e-10;

/// An optimal coupling for the truncated cost `min(1, ρ^2)`.
#[derive(Clone, Debug)]
pub struct CouplingPlan {
    pub source: Arc<DiscreteSpace>,
    pub target: Arc<DiscreteSpace>,
    /// Positive entries `(source index, target index, mass)`, row-major.
    pub entries: Vec<(usize, usize, f64)>,
    pub cost: f64,
    /// Optimality certificate: largest violation of dual feasibility or of
    /// complementary slackness by the final potentials.
    pub dual_residual: f64,
    pub pivots: usize,
}

impl CouplingPlan {
    pub fn dense(&self) -> DMatrix<f64> {
        let mut p = DMatrix::zeros(self.source.len(), self.target.len());
        for &(i, j, w) in &self.entries {
            p[(i, j)] += w;
        }
        p
    }

    /// Largest deviation of the row and column sums from the two measures.
    pub fn marginal_error(&self) -> f64 {
        let p = self.dense();
        let rows = (0..p.nrows()).map(|i| (p.row(i).sum() - self.source.measure()[i]).abs());
        let cols = (0..p.ncols()).map(|j| (p.column(j).sum() - self.target.measure()[j]).abs());
        rows.chain(cols).fold(0.0, f64::max)
    }

    /// The same coupling read from the target side; optimal for the reversed
    /// problem because the cost is symmetric.
    pub fn transposed(&self) -> Self {
        let mut entries: Vec<_> = self.entries.iter().map(|&(i, j, w)| (j, i, w)).collect();
        entries.sort_by_key(|e| (e.0, e.1));
        Self {
            source: Arc::clone(&self.target),
            target: Arc::clone(&self.source),
            entries,
            cost: self.cost,
            dual_residual: self.dual_residual,
            pivots: self.pivots,
        }
    }

    pub fn to_json(&self) -> String {
        let dump = PlanDump {
            plan: self.entries.iter().map(|&(i, j, w)| (i, j, w)).collect(),
            cost: self.cost,
            dual_residual: self.dual_residual,
        };
        serde_json::to_string_pretty(&dump).expect("plan serializes")
    }
}

#[derive(Serialize, Deserialize)]
struct PlanDump {
    plan: Vec<(usize, usize, f64)>,
    cost: f64,
    dual_residual: f64,
}

fn cost_matrix(a: &DiscreteSpace, b: &DiscreteSpace) -> DMatrix<f64> {
    DMatrix::from_fn(a.len(), b.len(), |i, j| TruncatedCost::squared(a.coord(i), b.coord(j)))
}

/// Exact optimal transport for the truncated quadratic cost by the
/// transportation (network) simplex: north-west corner start, MODI
/// potentials on the basis tree, Dantzig pricing.
pub fn solve_ot(source: &Arc<DiscreteSpace>, target: &Arc<DiscreteSpace>) -> Result<CouplingPlan> {
    if source.ambient_dim() != target.ambient_dim() {
        return Err(Error::DimensionMismatch(source.ambient_dim(), target.ambient_dim()));
    }
    let (n, m) = (source.len(), target.len());
    let c = cost_matrix(source, target);
    let mut simplex = Simplex::north_west(source.measure(), target.measure());
    let cscale = 1.0 + c.amax();
    let max_pivots = 50 * (n + m) * (n + m) + 1000;
    let mut pivots = 0;
    loop {
        let (u, v) = simplex.potentials(&c);
        let mut best = (0usize, 0usize, -1e-12 * cscale);
        for i in 0..n {
            for j in 0..m {
                let r = c[(i, j)] - u[i] - v[j];
                if r < best.2 {
                    best = (i, j, r);
                }
            }
        }
        if best.2 >= -1e-12 * cscale {
            break;
        }
        if pivots >= max_pivots {
            return Err(Error::SolverFailure(format!("transport simplex exceeded {max_pivots} pivots")));
        }
        simplex.pivot(best.0, best.1);
        pivots += 1;
    }
    let (u, v) = simplex.potentials(&c);
    let mut dual_residual: f64 = 0.0;
    for i in 0..n {
        for j in 0..m {
            dual_residual = dual_residual.max(u[i] + v[j] - c[(i, j)]);
        }
    }
    let mut entries: Vec<(usize, usize, f64)> = simplex
        .basis
        .iter()
        .filter(|b| b.flow > 0.0)
        .map(|b| {
            dual_residual = dual_residual.max((c[(b.i, b.j)] - u[b.i] - v[b.j]).abs());
            (b.i, b.j, b.flow)
        })
        .collect();
    entries.sort_by_key(|e| (e.0, e.1));
    let cost = entries.iter().map(|&(i, j, w)| w * c[(i, j)]).sum();
    let plan = CouplingPlan {
        source: Arc::clone(source),
        target: Arc::clone(target),
        entries,
        cost,
        dual_residual,
        pivots,
    };
    let err = plan.marginal_error();
    if err > MARGINAL_TOL {
        return Err(Error::SolverFailure(format!("plan marginals off by {err:.3e}")));
    }
    Ok(plan)
}

#[derive(Clone, Copy, Debug)]
struct BasicCell {
    i: usize,
    j: usize,
    flow: f64,
}

/// Basis of the transportation problem: `n + m - 1` cells forming a spanning
/// tree of the bipartite graph rows ∪ columns (degenerate cells carry zero flow).
struct Simplex {
    n: usize,
    m: usize,
    basis: Vec<BasicCell>,
}

impl Simplex {
    fn north_west(a: &[f64], b: &[f64]) -> Self {
        let (n, m) = (a.len(), b.len());
        let (mut ra, mut rb) = (a.to_vec(), b.to_vec());
        let (mut i, mut j) = (0, 0);
        let mut basis = Vec::with_capacity(n + m - 1);
        while i < n && j < m {
            let x = ra[i].min(rb[j]);
            basis.push(BasicCell { i, j, flow: x.max(0.0) });
            ra[i] -= x;
            rb[j] -= x;
            if i == n - 1 {
                j += 1;
            } else if j == m - 1 || ra[i] < rb[j] {
                i += 1;
            } else {
                j += 1;
            }
        }
        Self { n, m, basis }
    }

    /// Tree adjacency: node `r` for row `r`, node `n + c` for column `c`;
    /// entries are `(neighbour, basis index)`.
    fn adjacency(&self) -> Vec<Vec<(usize, usize)>> {
        let mut adj = vec![Vec::new(); self.n + self.m];
        for (k, b) in self.basis.iter().enumerate() {
            adj[b.i].push((self.n + b.j, k));
            adj[self.n + b.j].push((b.i, k));
        }
        adj
    }

    fn potentials(&self, c: &DMatrix<f64>) -> (Vec<f64>, Vec<f64>) {
        let adj = self.adjacency();
        let mut pot = vec![f64::NAN; self.n + self.m];
        pot[0] = 0.0;
        let mut queue = VecDeque::from([0usize]);
        while let Some(x) = queue.pop_front() {
            for &(y, k) in &adj[x] {
                if pot[y].is_nan() {
                    let b = self.basis[k];
                    pot[y] = c[(b.i, b.j)] - pot[x];
                    queue.push_back(y);
                }
            }
        }
        let u = pot[..self.n].iter().map(|x| if x.is_nan() { 0.0 } else { *x }).collect();
        let v = pot[self.n..].iter().map(|x| if x.is_nan() { 0.0 } else { *x }).collect();
        (u, v)
    }

    /// Enters cell `(i, j)` and removes the blocking cell of the cycle.
    fn pivot(&mut self, i: usize, j: usize) {
        let adj = self.adjacency();
        // path in the tree from column node n + j to row node i
        let start = self.n + j;
        let mut parent: Vec<Option<(usize, usize)>> = vec![None; self.n + self.m];
        let mut seen = vec![false; self.n + self.m];
        seen[start] = true;
        let mut queue = VecDeque::from([start]);
        while let Some(x) = queue.pop_front() {
            if x == i {
                break;
            }
            for &(y, k) in &adj[x] {
                if !seen[y] {
                    seen[y] = true;
                    parent[y] = Some((x, k));
                    queue.push_back(y);
                }
            }
        }
        // cells along the path from row i back to column j alternate -, +, -, ...
        let mut path = Vec::new();
        let mut x = i;
        while x != start {
            let (p, k) = parent[x].expect("basis is a spanning tree");
            path.push(k);
            x = p;
        }
        let mut theta = f64::INFINITY;
        let mut leave = usize::MAX;
        for (pos, &k) in path.iter().enumerate() {
            if pos % 2 == 0 && self.basis[k].flow < theta {
                theta = self.basis[k].flow;
                leave = k;
            }
        }
        for (pos, &k) in path.iter().enumerate() {
            let f = &mut self.basis[k].flow;
            if pos % 2 == 0 {
                *f = (*f - theta).max(0.0);
            } else {
                *f += theta;
            }
        }
        self.basis[leave] = BasicCell { i, j, flow: theta };
    }
}

/// A plan made deterministic by splitting source atoms along their plan rows.
#[derive(Clone, Debug)]
pub struct TransportMap {
    pub source: Arc<DiscreteSpace>,
    pub target: Arc<DiscreteSpace>,
    /// Source space with every atom split into one atom per positive plan entry.
    pub refined: Arc<DiscreteSpace>,
    /// Refined atom → original source atom.
    pub parent: Vec<usize>,
    /// Refined atom → target atom.
    pub assignment: Vec<usize>,
    pub cost: f64,
    /// Largest deviation of the pushforward of the refined measure from the target measure.
    pub pushforward_error: f64,
}

pub fn plan_to_map(plan: &CouplingPlan) -> TransportMap {
    let src = &plan.source;
    let mut by_row: Vec<Vec<(usize, f64)>> = vec![Vec::new(); src.len()];
    for &(i, j, w) in &plan.entries {
        by_row[i].push((j, w));
    }
    let mut ids = Vec::new();
    let mut coords = Vec::new();
    let mut measure = Vec::new();
    let mut parent = Vec::new();
    let mut assignment = Vec::new();
    for (i, row) in by_row.iter().enumerate() {
        // split masses are rescaled so each atom's pieces sum to its weight exactly
        let total: f64 = row.iter().map(|(_, w)| w).sum();
        for (k, &(j, w)) in row.iter().enumerate() {
            ids.push(if row.len() == 1 { src.ids()[i].clone() } else { format!("{}#{k}", src.ids()[i]) });
            coords.push(src.coord(i).to_vec());
            measure.push(if row.len() == 1 { src.measure()[i] } else { w * src.measure()[i] / total });
            parent.push(i);
            assignment.push(j);
        }
    }
    let r = parent.len();
    let dist = DMatrix::from_fn(r, r, |a, b| src.dist(parent[a], parent[b]));
    let refined = Arc::new(DiscreteSpace::from_parts_unchecked(ids, coords, dist, measure));
    let mut push = vec![0.0; plan.target.len()];
    for (a, &j) in assignment.iter().enumerate() {
        push[j] += refined.measure()[a];
    }
    let pushforward_error = push.iter().zip(plan.target.measure()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let cost = (0..r)
        .map(|a| refined.measure()[a] * TruncatedCost::squared(refined.coord(a), plan.target.coord(assignment[a])))
        .sum();
    TransportMap {
        source: Arc::clone(src),
        target: Arc::clone(&plan.target),
        refined,
        parent,
        assignment,
        cost,
        pushforward_error,
    }
}

impl TransportMap {
    pub fn is_split(&self) -> bool {
        self.refined.len() != self.source.len()
    }

    /// `f ∘ T`: a function on the target pulled back to the refined source.
    pub fn pull_back(&self, f: &L2Function) -> Result<L2Function> {
        if !crate::space::same_space(f.space(), &self.target) {
            return Err(Error::SpaceMismatch);
        }
        L2Function::new(&self.refined, self.assignment.iter().map(|&j| f.values()[j]).collect())
    }

    /// Conditional expectation from the refined source onto the original
    /// source: averages the pieces of every split atom. A contraction in `L^2`.
    pub fn collapse(&self, f: &L2Function) -> Result<L2Function> {
        if !crate::space::same_space(f.space(), &self.refined) {
            return Err(Error::SpaceMismatch);
        }
        let mut out = vec![0.0; self.source.len()];
        for (a, &p) in self.parent.iter().enumerate() {
            out[p] += self.refined.measure()[a] * f.values()[a];
        }
        for (o, w) in out.iter_mut().zip(self.source.measure()) {
            *o /= w;
        }
        L2Function::new(&self.source, out)
    }

    /// `collapse(f ∘ T)`: target functions carried to the unsplit source.
    pub fn transfer(&self, f: &L2Function) -> Result<L2Function> {
        self.collapse(&self.pull_back(f)?)
    }

    /// `f ∘ parent`: the isometric embedding of source functions into the refined space.
    pub fn lift(&self, f: &L2Function) -> Result<L2Function> {
        if !crate::space::same_space(f.space(), &self.source) {
            return Err(Error::SpaceMismatch);
        }
        L2Function::new(&self.refined, self.parent.iter().map(|&p| f.values()[p]).collect())
    }

    pub fn to_json(&self) -> String {
        let dump = PlanDump {
            plan: (0..self.parent.len())
                .map(|a| (self.parent[a], self.assignment[a], self.refined.measure()[a]))
                .collect(),
            cost: self.cost,
            dual_residual: self.pushforward_error,
        };
        serde_json::to_string_pretty(&dump).expect("map serializes")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    /// Limit functions pulled back to an approximating space.
    Pi,
    /// Approximant functions pulled back to the limit space.
    Sigma,
}

/// The linear isometry `f ↦ f ∘ T` induced by a measure-preserving map.
#[derive(Clone, Debug)]
pub struct Isometry {
    pub direction: Direction,
    pub map: TransportMap,
}

impl Isometry {
    /// `π`: from the limit to an approximant. The coupling runs from the
    /// approximant (refined) to the limit.
    pub fn pi(approximant: &Arc<DiscreteSpace>, limit: &Arc<DiscreteSpace>) -> Result<Self> {
        Ok(Self { direction: Direction::Pi, map: plan_to_map(&solve_ot(approximant, limit)?) })
    }

    /// `σ`: from an approximant to the limit. The coupling runs from the
    /// limit (refined) to the approximant.
    pub fn sigma(approximant: &Arc<DiscreteSpace>, limit: &Arc<DiscreteSpace>) -> Result<Self> {
        Ok(Self { direction: Direction::Sigma, map: plan_to_map(&solve_ot(limit, approximant)?) })
    }

    /// Space the isometry acts on.
    pub fn domain(&self) -> &Arc<DiscreteSpace> {
        &self.map.target
    }

    /// Space the images live on (refined).
    pub fn codomain(&self) -> &Arc<DiscreteSpace> {
        &self.map.refined
    }
}

pub fn apply_isometry(iso: &Isometry, f: &L2Function) -> Result<L2Function> {
    iso.map.pull_back(f)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ConvergenceMode {
    Weak,
    Strong,
}

/// Tent functions `max(0, 1 - |x - c| / r)` on a grid of centres over an
/// ambient bounding box, at three radii.
#[derive(Clone, Debug)]
pub struct TestPanel {
    pub centers: Vec<Vec<f64>>,
    pub radii: Vec<f64>,
}

impl TestPanel {
    /// Panel over the bounding box of all points of `spaces`; radii
    /// `{1/4, 1/2, 1}` times the box diagonal.
    pub fn over(spaces: &[&DiscreteSpace]) -> Self {
        let dim = spaces[0].ambient_dim();
        let mut lo = vec![f64::INFINITY; dim];
        let mut hi = vec![f64::NEG_INFINITY; dim];
        for s in spaces {
            for c in s.coords() {
                for d in 0..dim {
                    lo[d] = lo[d].min(c[d]);
                    hi[d] = hi[d].max(c[d]);
                }
            }
        }
        let per_axis = match dim {
            0 => 1,
            1 => 15,
            2 => 7,
            3 => 4,
            _ => 3,
        };
        let mut centers = vec![Vec::new()];
        for d in 0..dim {
            let mut next = Vec::new();
            for c in &centers {
                for k in 0..per_axis {
                    let t = if per_axis == 1 { 0.5 } else { k as f64 / (per_axis - 1) as f64 };
                    let mut c2: Vec<f64> = c.clone();
                    c2.push(lo[d] + t * (hi[d] - lo[d]));
                    next.push(c2);
                }
            }
            centers = next;
        }
        let diag = lo.iter().zip(&hi).map(|(a, b)| (b - a).powi(2)).sum::<f64>().sqrt().max(1e-12);
        Self { centers, radii: vec![0.25 * diag, 0.5 * diag, diag] }
    }

    pub fn len(&self) -> usize {
        self.centers.len() * self.radii.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn describe(&self) -> String {
        format!("{} tent centres x radii {:?}", self.centers.len(), self.radii)
    }

    /// `∫ f ξ dm` for every test function `ξ`.
    pub fn pairings(&self, f: &L2Function) -> Vec<f64> {
        let s = f.space();
        let mut out = Vec::with_capacity(self.len());
        for c in &self.centers {
            for &r in &self.radii {
                let v = (0..s.len())
                    .map(|x| {
                        let d = DiscreteSpace::ambient_dist(s.coord(x), c);
                        s.measure()[x] * f.values()[x] * (1.0 - d / r).max(0.0)
                    })
                    .sum();
                out.push(v);
            }
        }
        out
    }
}

#[derive(Clone, Debug)]
pub struct ConvergenceReport {
    pub mode: ConvergenceMode,
    /// Per index: largest pairing gap over the panel.
    pub gaps: Vec<f64>,
    pub norms: Vec<f64>,
    pub limit_norm: f64,
    pub weak: bool,
    /// `None` in weak mode.
    pub strong: Option<bool>,
    pub panel: String,
}

impl ConvergenceReport {
    pub fn verdict(&self) -> bool {
        self.strong.unwrap_or(self.weak)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct ConvergenceOptions {
    /// Final pairing gap allowed, relative to `1 + |f|`.
    pub gap_tol: f64,
    /// Slack on `limsup |f_i| <= |f|`.
    pub norm_tol: f64,
}

impl Default for ConvergenceOptions {
    fn default() -> Self {
        Self { gap_tol: 0.05, norm_tol: 0.02 }
    }
}

/// Numerical proxy for `f_i m_i → f m` weakly (and strongly) in duality with
/// bounded continuous functions on the ambient space.
pub fn check_l2_convergence(family: &[L2Function], limit: &L2Function, mode: ConvergenceMode) -> Result<ConvergenceReport> {
    check_l2_convergence_with(family, limit, mode, ConvergenceOptions::default(), None)
}

pub fn check_l2_convergence_with(
    family: &[L2Function],
    limit: &L2Function,
    mode: ConvergenceMode,
    opts: ConvergenceOptions,
    panel: Option<&TestPanel>,
) -> Result<ConvergenceReport> {
    let dim = limit.space().ambient_dim();
    for f in family {
        if f.space().ambient_dim() != dim {
            return Err(Error::DimensionMismatch(f.space().ambient_dim(), dim));
        }
    }
    let owned;
    let panel = match panel {
        Some(p) => p,
        None => {
            let mut spaces: Vec<&DiscreteSpace> = family.iter().map(|f| f.space().as_ref()).collect();
            spaces.push(limit.space());
            owned = TestPanel::over(&spaces);
            &owned
        }
    };
    let target = panel.pairings(limit);
    let gaps: Vec<f64> = family
        .iter()
        .map(|f| panel.pairings(f).iter().zip(&target).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
        .collect();
    let norms: Vec<f64> = family.iter().map(|f| f.norm()).collect();
    let limit_norm = limit.norm();
    let weak = match gaps.last() {
        None => true,
        Some(&last) => last <= opts.gap_tol * (1.0 + limit_norm) && last <= gaps[0] + 1e-12,
    };
    let strong = match mode {
        ConvergenceMode::Weak => None,
        ConvergenceMode::Strong => {
            let tail = norms.len().saturating_sub(3);
            let limsup = norms[tail..].iter().cloned().fold(0.0, f64::max);
            Some(weak && limsup <= limit_norm * (1.0 + opts.norm_tol) + opts.norm_tol * 1e-3)
        }
    };
    Ok(ConvergenceReport { mode, gaps, norms, limit_norm, weak, strong, panel: panel.describe() })
}

/// Hausdorff distance between two finite sets of functions on one space.
pub fn hausdorff_distance(a: &[L2Function], b: &[L2Function]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptySet);
    }
    let one_sided = |x: &[L2Function], y: &[L2Function]| -> Result<f64> {
        let mut worst: f64 = 0.0;
        for f in x {
            let mut best = f64::INFINITY;
            for g in y {
                best = best.min(f.dist(g)?);
            }
            worst = worst.max(best);
        }
        Ok(worst)
    };
    Ok(one_sided(a, b)?.max(one_sided(b, a)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::space::{make_cycle, make_path, RawSpace};

    fn line(points: &[f64]) -> Arc<DiscreteSpace> {
        let n = points.len();
        Arc::new(
            DiscreteSpace::validate(RawSpace {
                ids: (0..n).map(|i| format!("x{i}")).collect(),
                coords: points.iter().map(|p| vec![*p]).collect(),
                dist: None,
                measure: vec![1.0 / n as f64; n],
            })
            .unwrap(),
        )
    }

    #[test]
    fn identical_spaces_give_diagonal_plan() {
        let s = Arc::new(make_cycle(6, 1.0).unwrap());
        let p = solve_ot(&s, &s).unwrap();
        assert_eq!(p.cost, 0.0);
        assert!(p.entries.iter().all(|&(i, j, _)| i == j));
        let map = plan_to_map(&p);
        assert!(!map.is_split());
        assert_eq!(map.assignment, (0..6).collect::<Vec<_>>());
    }

    #[test]
    fn shifted_pair() {
        let a = line(&[0.0, 1.0]);
        let b = line(&[0.1, 1.1]);
        let p = solve_ot(&a, &b).unwrap();
        assert!((p.cost - 0.01).abs() < 1e-14);
        assert!(p.dual_residual <= 1e-9);
    }

    #[test]
    fn three_to_two() {
        let a = line(&[0.0, 0.5, 1.0]);
        let b = line(&[0.0, 1.0]);
        let p = solve_ot(&a, &b).unwrap();
        let d = p.dense();
        let expect = [[1.0 / 3.0, 0.0], [1.0 / 6.0, 1.0 / 6.0], [0.0, 1.0 / 3.0]];
        for i in 0..3 {
            for j in 0..2 {
                assert!((d[(i, j)] - expect[i][j]).abs() < 1e-15);
            }
        }
        let map = plan_to_map(&p);
        assert_eq!(map.refined.measure().len(), 4);
        assert!((map.refined.measure()[1] - 1.0 / 6.0).abs() < 1e-15);
        assert!(map.pushforward_error < 1e-15);
        assert!((map.cost - p.cost).abs() < 1e-15);
        let iso = Isometry { direction: Direction::Sigma, map };
        let f = L2Function::new(&b, vec![2.0, -3.0]).unwrap();
        let g = apply_isometry(&iso, &f).unwrap();
        assert_eq!(g.values(), &[2.0, 2.0, -3.0, -3.0]);
        assert!((g.norm() - f.norm()).abs() < 1e-14);
    }

    #[test]
    fn dimension_mismatch() {
        let a = line(&[0.0, 1.0]);
        let b = Arc::new(make_cycle(3, 1.0).unwrap());
        assert!(matches!(solve_ot(&a, &b), Err(Error::DimensionMismatch(1, 2))));
    }

    #[test]
    fn collapse_and_lift() {
        let a = line(&[0.0, 0.5, 1.0]);
        let b = line(&[0.0, 1.0]);
        let map = plan_to_map(&solve_ot(&a, &b).unwrap());
        let f = L2Function::new(&a, vec![1.0, 2.0, 3.0]).unwrap();
        let lifted = map.lift(&f).unwrap();
        assert!((lifted.norm() - f.norm()).abs() < 1e-14);
        assert!(map.collapse(&lifted).unwrap().dist(&f).unwrap() < 1e-14);
    }

    #[test]
    fn hausdorff_examples() {
        let s = Arc::new(make_path(2, 1.0).unwrap());
        let r2 = 2f64.sqrt();
        let e1 = L2Function::new(&s, vec![r2, 0.0]).unwrap();
        let e2 = L2Function::new(&s, vec![0.0, r2]).unwrap();
        let a = [e1.clone(), e1.scaled(-1.0)];
        let b = [e2.clone(), e2.scaled(-1.0)];
        // |e1 - e2|^2 = |e1 + e2|^2 = 1/2 * 2 + 1/2 * 2
        assert!((hausdorff_distance(&a, &b).unwrap() - r2).abs() < 1e-14);
        assert_eq!(hausdorff_distance(&a, &a).unwrap(), 0.0);
        assert!((hausdorff_distance(std::slice::from_ref(&e1), std::slice::from_ref(&e2)).unwrap() - e1.dist(&e2).unwrap()).abs() < 1e-15);
        assert!(matches!(hausdorff_distance(&[], &b), Err(Error::EmptySet)));
    }

    #[test]
    fn plan_json_has_triplets() {
        let a = line(&[0.0, 0.5, 1.0]);
        let b = line(&[0.0, 1.0]);
        let text = solve_ot(&a, &b).unwrap().to_json();
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(v["plan"].as_array().unwrap().len(), 4);
        assert!(v["dual_residual"].as_f64().unwrap() <= 1e-9);
    }

    #[test]
    fn constant_family_converges() {
        let lim = Arc::new(make_cycle(64, 1.0).unwrap());
        let fam: Vec<L2Function> =
            [8, 16, 32].iter().map(|&n| L2Function::constant(&Arc::new(make_cycle(n, 1.0).unwrap()), 1.0)).collect();
        let r = check_l2_convergence(&fam, &L2Function::constant(&lim, 1.0), ConvergenceMode::Strong).unwrap();
        assert!(r.weak && r.verdict());
    }
}
