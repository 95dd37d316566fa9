//! Sphere-constrained gradient flow and eigenpair search.
//!
//! `Φ(u) = Ch(u)` on `E^{1,M} = {|u| <= 1, Ch(u) <= M}` (and `+inf` outside),
//! `Φ_L = Φ - L|u|^2`. For `L > M` the gradient flow of the `(-2L)`-convex
//! functional `Φ_L` leaves `S ∩ E^{1,M}` invariant, decreases `Ch` and comes to
//! rest exactly at solutions of `-Δu = Ch(u) u`.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::energy::{EnergyForm, SlopeConstraint};
use crate::error::{Error, Result};
use crate::flow::{self, FlowState, FlowTrajectory, Functional};
use crate::linalg;
use crate::space::{DiscreteSpace, L2Function};

/// Tolerance for "on the unit sphere".
pub const SPHERE_TOL: f64 = 1e-9;
/// Critical points closer than this are considered the same.
pub const DISTINCT_TOL: f64 = 1e-3;

#[derive(Clone, Debug)]
pub struct ConstrainedFunctional {
    pub energy: EnergyForm,
    /// Energy cap `M`.
    pub cap: f64,
    /// Shift `L > M`.
    pub shift: f64,
}

/// `M = λ_est + 1`, `L = M + 1`.
pub fn build_phi(energy: &EnergyForm, lambda_est: f64) -> Result<ConstrainedFunctional> {
    if !(lambda_est >= 0.0 && lambda_est.is_finite()) {
        return Err(Error::InvalidParameter(format!("energy level {lambda_est}")));
    }
    let cap = lambda_est + 1.0;
    Ok(ConstrainedFunctional { energy: energy.clone(), cap, shift: cap + 1.0 })
}

impl ConstrainedFunctional {
    pub fn with_shift(energy: &EnergyForm, cap: f64, shift: f64) -> Result<Self> {
        if !(cap > 0.0 && shift > cap) {
            return Err(Error::InvalidParameter(format!("need 0 < M < L, got M = {cap}, L = {shift}")));
        }
        Ok(Self { energy: energy.clone(), cap, shift })
    }

    pub fn constraint(&self) -> SlopeConstraint {
        SlopeConstraint { cap: self.cap, shift: self.shift }
    }

    /// Largest step for which the resolvent of `Φ_L` is well posed.
    pub fn max_step(&self) -> f64 {
        1.0 / (2.0 * self.shift)
    }

    fn in_domain(&self, u: &L2Function, ch: f64) -> bool {
        u.norm() <= 1.0 + SPHERE_TOL && ch <= self.cap * (1.0 + 1e-12) + 1e-12
    }

    /// Resolvent of `Φ_L` ignoring the cap, which is inactive whenever `u`
    /// lies on the sphere inside the cap. The ball constraint is handled by a
    /// one-dimensional root find on its multiplier `μ`: with
    /// `κ = 1/τ - 2L + 2μ` the problem becomes `min Ch(v) + κ/2 |v - u/(τκ)|^2`.
    fn ball_resolvent(&self, u: &L2Function, tau: f64) -> Result<Vec<f64>> {
        let l = self.shift;
        let solve = |mu: f64| -> Result<(Vec<f64>, f64)> {
            let kappa = 1.0 / tau - 2.0 * l + 2.0 * mu;
            let z: Vec<f64> = u.values().iter().map(|x| x / (tau * kappa)).collect();
            let v = self.energy.regularized_minimizer(1.0, kappa, &z)?;
            let n2 = linalg::wdot(&v, &v, self.energy.space().measure());
            Ok((v, n2 - 1.0))
        };
        let (v0, g0) = solve(0.0)?;
        if g0 <= 0.0 {
            return Ok(v0);
        }
        // at μ = L the prox is a contraction of u, hence inside the ball
        let (mut a, mut ga) = (0.0, g0);
        let (vl, gl) = solve(l)?;
        if gl >= 0.0 {
            if gl > 1e-12 {
                return Err(Error::SolverFailure(format!("ball multiplier not bracketed (g = {gl:.3e})")));
            }
            return Ok(vl);
        }
        let (mut b, mut gb) = (l, gl);
        let mut best = v0;
        let mut side = 0i8;
        for _ in 0..200 {
            let mu = if ga - gb != 0.0 { (a * gb - b * ga) / (gb - ga) } else { 0.5 * (a + b) };
            let mu = if mu > a && mu < b { mu } else { 0.5 * (a + b) };
            let (v, g) = solve(mu)?;
            best = v;
            if g.abs() <= 1e-14 || (b - a) <= 1e-15 * l {
                break;
            }
            // Illinois modification keeps the bracket shrinking from both ends
            if g > 0.0 {
                a = mu;
                ga = g;
                if side == 1 {
                    gb *= 0.5;
                }
                side = 1;
            } else {
                b = mu;
                gb = g;
                if side == -1 {
                    ga *= 0.5;
                }
                side = -1;
            }
        }
        Ok(best)
    }
}

impl Functional for ConstrainedFunctional {
    fn space(&self) -> &Arc<DiscreteSpace> {
        self.energy.space()
    }

    fn value(&self, u: &L2Function) -> Result<f64> {
        let ch = self.energy.energy(u)?;
        if !self.in_domain(u, ch) {
            return Ok(f64::INFINITY);
        }
        Ok(ch - self.shift * u.norm().powi(2))
    }

    fn convexity(&self) -> f64 {
        -2.0 * self.shift
    }

    fn resolvent(&self, u: &L2Function, tau: f64) -> Result<L2Function> {
        let v = self.ball_resolvent(u, tau)?;
        let ch = self.energy.energy_of(&v);
        if ch > self.cap * (1.0 + 1e-9) + 1e-12 {
            return Err(Error::SolverFailure(format!(
                "resolvent left the energy cap: Ch = {ch}, M = {}",
                self.cap
            )));
        }
        Ok(u.with_values(v))
    }

    fn min_subgradient(&self, u: &L2Function) -> Result<L2Function> {
        let ch = self.energy.energy(u)?;
        if !self.in_domain(u, ch) {
            return Err(Error::OutsideDomain(format!("|u| = {}, Ch(u) = {ch}", u.norm())));
        }
        let xi = self.energy.laplacian(u)?;
        if (u.norm() - 1.0).abs() <= SPHERE_TOL {
            return Ok(xi.axpy(-ch, u)?.scaled(2.0));
        }
        let xi2 = xi.norm().powi(2);
        let factor = if ch >= self.cap * (1.0 - 1e-12) && xi2 > 0.0 { (self.shift * ch / xi2).max(1.0) } else { 1.0 };
        xi.scaled(2.0 * factor).axpy(-2.0 * self.shift, u)
    }

    fn slope(&self, u: &L2Function) -> Result<f64> {
        self.energy.descending_slope(u, Some(self.constraint()))
    }
}

/// `-Δu - Ch(u) u`, the tangential part of the Laplacian at a point of the sphere.
pub fn phi_minimal_selection(cf: &ConstrainedFunctional, u: &L2Function) -> Result<L2Function> {
    let norm = u.norm();
    let ch = cf.energy.energy(u)?;
    if (norm - 1.0).abs() > SPHERE_TOL {
        return Err(Error::OutsideDomain(format!("|u| = {norm} is not on the unit sphere")));
    }
    if ch >= cf.cap {
        return Err(Error::OutsideDomain(format!("Ch(u) = {ch} reaches the cap {}", cf.cap)));
    }
    cf.energy.laplacian(u)?.axpy(-ch, u)
}

/// Allowed sphere drift after `step` steps.
pub fn drift_bound(step: usize, tau: f64, shift: f64) -> f64 {
    5e-6 * step as f64 * tau * shift
}

/// Gradient flow of `Φ_L` from a unit vector `u0`, renormalized after every
/// step once the drift has been checked.
pub fn sphere_flow_run(cf: &ConstrainedFunctional, u0: &L2Function, horizon: f64, tau: f64) -> Result<FlowTrajectory> {
    let probes = flow::default_probes(u0);
    sphere_flow_with(cf, u0, horizon, tau, &probes, &[])
}

/// As [`sphere_flow_run`], projecting every iterate onto the `m`-orthogonal
/// complement of the orthonormal family `deflate`.
pub fn sphere_flow_with(
    cf: &ConstrainedFunctional,
    u0: &L2Function,
    horizon: f64,
    tau: f64,
    probes: &[L2Function],
    deflate: &[Vec<f64>],
) -> Result<FlowTrajectory> {
    check_start(cf, u0)?;
    let steps = (horizon / tau - 1e-9).ceil().max(0.0) as usize;
    let mut u = u0.clone();
    let e0 = cf.value(&u)?;
    let mut states = vec![FlowState {
        t: 0.0,
        energy: e0,
        slope: cf.slope(&u)?,
        evi_residual: 0.0,
        norm: u.norm(),
        u: u.clone(),
    }];
    let mut ch_prev = cf.energy.energy(&u)?;
    for n in 1..=steps {
        let (next, _) = sphere_step(cf, &u, tau, n, deflate)?;
        let ch = cf.energy.energy(&next)?;
        if ch > ch_prev + 1e-9 * (1.0 + ch_prev) {
            return Err(Error::SolverFailure(format!("energy increased at step {n}: {ch_prev} -> {ch}")));
        }
        let energy = cf.value(&next)?;
        let mut evi = f64::NEG_INFINITY;
        for v in probes {
            if let Some(d) = flow::evi_defect(cf, &u, &next, energy, v, tau)? {
                evi = evi.max(d);
            }
        }
        states.push(FlowState {
            t: n as f64 * tau,
            energy,
            slope: cf.slope(&next)?,
            evi_residual: evi,
            norm: next.norm(),
            u: next.clone(),
        });
        ch_prev = ch;
        u = next;
    }
    Ok(FlowTrajectory { tau, convexity: cf.convexity(), states })
}

fn check_start(cf: &ConstrainedFunctional, u0: &L2Function) -> Result<()> {
    if (u0.norm() - 1.0).abs() > SPHERE_TOL {
        return Err(Error::OutsideDomain(format!("start has norm {}", u0.norm())));
    }
    let ch = cf.energy.energy(u0)?;
    if ch > cf.cap {
        return Err(Error::OutsideDomain(format!("start energy {ch} above cap {}", cf.cap)));
    }
    Ok(())
}

/// One prox step followed by drift check, deflation and renormalization.
/// Returns the new point and the pre-normalization drift.
fn sphere_step(
    cf: &ConstrainedFunctional,
    u: &L2Function,
    tau: f64,
    step: usize,
    deflate: &[Vec<f64>],
) -> Result<(L2Function, f64)> {
    let v = flow::prox_step(cf, u, tau)?;
    let drift = (v.norm() - 1.0).abs();
    let bound = drift_bound(step, tau, cf.shift);
    if drift > bound {
        return Err(Error::InvarianceBroken { step, drift, bound });
    }
    let v = project_out(v, deflate);
    let n = v.norm();
    if !(n > 0.0) {
        return Err(Error::NormCollapse { index: step, norm: n, threshold: 0.0 });
    }
    Ok((v.scaled(1.0 / n), drift))
}

fn project_out(mut v: L2Function, basis: &[Vec<f64>]) -> L2Function {
    if basis.is_empty() {
        return v;
    }
    let m = v.space().measure().to_vec();
    for q in basis {
        let p = linalg::wdot(v.values(), q, &m);
        for (x, y) in v.values_mut().iter_mut().zip(q) {
            *x -= p * y;
        }
    }
    v
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EigenPair {
    pub lambda: f64,
    pub residual: f64,
    pub u: Vec<f64>,
    pub starts_used: usize,
}

impl EigenPair {
    /// Builds the pair `(Ch(u), u, |Δu + Ch(u) u|)` for a unit vector `u`.
    pub fn from_function(energy: &EnergyForm, u: &L2Function, starts_used: usize) -> Result<Self> {
        let lambda = energy.energy(u)?;
        let residual = energy.laplacian(u)?.axpy(-lambda, u)?.norm();
        Ok(Self { lambda, residual, u: u.values().to_vec(), starts_used })
    }

    pub fn function(&self, space: &Arc<DiscreteSpace>) -> Result<L2Function> {
        L2Function::new(space, self.u.clone())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("eigenpair serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

#[derive(Clone, Debug)]
pub struct EigenOptions {
    pub tol: f64,
    pub max_steps: usize,
    /// Steps between rebuilds of `Φ_L` at the current energy level.
    pub epoch: usize,
    /// Keep iterates orthogonal to constants. `None` decides from the start:
    /// constants are projected out when the mean-zero part of `u0` outweighs
    /// its mean, so the search targets the level the start is closest to
    /// rather than always sliding down to the ground state.
    pub center: Option<bool>,
    /// `m`-orthonormal functions to project out at every step.
    pub deflate: Vec<Vec<f64>>,
}

impl Default for EigenOptions {
    fn default() -> Self {
        Self { tol: 1e-8, max_steps: 200_000, epoch: 50, center: None, deflate: Vec::new() }
    }
}

#[derive(Clone, Debug)]
pub struct EigenSearch {
    pub pair: EigenPair,
    pub steps: usize,
    pub converged: bool,
}

/// Runs the sphere flow from `u0` until `|Δu + Ch(u) u| <= tol`.
pub fn find_eigenpair(energy: &EnergyForm, u0: &L2Function, tol: f64) -> Result<EigenPair> {
    let opts = EigenOptions { tol, ..EigenOptions::default() };
    let search = search_eigenpair(energy, u0, &opts)?;
    if search.converged {
        Ok(search.pair)
    } else {
        Err(Error::NoConvergence { iterations: search.steps, residual: search.pair.residual })
    }
}

/// Like [`find_eigenpair`] but returns the best iterate when the step cap is hit.
pub fn search_eigenpair(energy: &EnergyForm, u0: &L2Function, opts: &EigenOptions) -> Result<EigenSearch> {
    if (u0.norm() - 1.0).abs() > SPHERE_TOL {
        return Err(Error::OutsideDomain(format!("start has norm {}", u0.norm())));
    }
    let center = opts.center.unwrap_or_else(|| {
        let mean = u0.mean();
        let oscillation = u0.values().iter().map(|x| x - mean).collect::<Vec<_>>();
        linalg::wnorm(&oscillation, u0.space().measure()) >= mean.abs()
    });
    let mut basis = Vec::new();
    if center {
        basis.push(vec![1.0; u0.space().len()]);
    }
    basis.extend(opts.deflate.iter().cloned());
    let basis = linalg::orthonormalize(&basis, u0.space().measure(), 1e-12);

    let mut u = project_out(u0.clone(), &basis);
    let n = u.norm();
    if !(n > 1e-12) {
        return Err(Error::NormCollapse { index: 0, norm: n, threshold: 1e-12 });
    }
    u = u.scaled(1.0 / n);

    let mut pair = EigenPair::from_function(energy, &u, 1)?;
    let mut steps = 0;
    while pair.residual > opts.tol && steps < opts.max_steps {
        let cf = build_phi(energy, pair.lambda)?;
        let tau = 0.5 * cf.max_step();
        for k in 1..=opts.epoch.max(1) {
            u = sphere_step(&cf, &u, tau, k, &basis)?.0;
            steps += 1;
            pair = EigenPair::from_function(energy, &u, 1)?;
            if pair.residual <= opts.tol || steps >= opts.max_steps {
                break;
            }
        }
    }
    Ok(EigenSearch { converged: pair.residual <= opts.tol, pair, steps })
}

/// Random unit start, mean-zero when `center` is set, orthogonal to `deflate`.
pub fn random_start(space: &Arc<DiscreteSpace>, seed: u64, center: bool, deflate: &[Vec<f64>]) -> L2Function {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    loop {
        let v = L2Function::from_fn(space, |_| StandardNormal.sample(&mut rng));
        let mut basis = Vec::new();
        if center {
            basis.push(vec![1.0; space.len()]);
        }
        basis.extend(deflate.iter().cloned());
        let basis = linalg::orthonormalize(&basis, space.measure(), 1e-12);
        let v = project_out(v, &basis);
        if let Some(v) = v.normalized() {
            if v.norm() > 0.5 {
                return v;
            }
        }
    }
}

#[derive(Clone, Debug)]
pub struct CriticalProbe {
    pub level: f64,
    /// Distinct representatives, sorted by `(λ, u)`.
    pub pairs: Vec<EigenPair>,
    pub distances: Vec<Vec<f64>>,
    pub starts: usize,
    /// Starts that failed to converge.
    pub failures: usize,
}

impl CriticalProbe {
    pub fn count(&self) -> usize {
        self.pairs.len()
    }
}

/// Multistart search for critical points at energy `level`.
///
/// For quadratic energies the eigenfunctions found below `level` are
/// projected out of later starts, so that higher levels are reachable. For
/// nonlinear energies starts are only centered.
pub fn critical_set_probe(energy: &EnergyForm, level: f64, n_starts: usize, tol: f64, seed: u64) -> Result<CriticalProbe> {
    if n_starts == 0 {
        return Err(Error::InvalidParameter("need at least one start".into()));
    }
    let space = energy.space().clone();
    let level_tol = 1e-6 * (1.0 + level);
    let center = level > level_tol;
    let opts = EigenOptions { tol, center: Some(center), ..EigenOptions::default() };

    let mut deflate: Vec<Vec<f64>> = Vec::new();
    if center && energy.is_quadratic() {
        // discovery pass: peel off eigenfunctions below the target level
        let mut k = 0u64;
        while deflate.len() + 1 < space.len() && k < 4 * space.len() as u64 {
            let u0 = random_start(&space, seed ^ 0xdef1a7e ^ k, true, &deflate);
            k += 1;
            let o = EigenOptions { deflate: deflate.clone(), ..opts.clone() };
            let found = search_eigenpair(energy, &u0, &o)?;
            if found.converged && found.pair.lambda < level - level_tol {
                deflate.push(found.pair.u.clone());
                deflate = linalg::orthonormalize(&deflate, space.measure(), 1e-8);
            } else {
                break;
            }
        }
    }

    let opts = EigenOptions { deflate, ..opts };
    let results: Vec<Result<EigenSearch>> = (0..n_starts)
        .into_par_iter()
        .map(|i| {
            let u0 = random_start(&space, seed.wrapping_add(i as u64), center, &opts.deflate);
            search_eigenpair(energy, &u0, &opts)
        })
        .collect();
    let mut failures = 0;
    let mut hits = Vec::new();
    for r in results {
        let s = r?;
        if !s.converged {
            failures += 1;
        } else if (s.pair.lambda - level).abs() <= level_tol {
            hits.push(s.pair);
        }
    }
    let mut pairs = distinct(hits, space.measure());
    let total = n_starts;
    for p in &mut pairs {
        p.starts_used = total;
    }
    let m = space.measure();
    let distances = pairs
        .iter()
        .map(|a| pairs.iter().map(|b| l2_dist(&a.u, &b.u, m)).collect())
        .collect();
    Ok(CriticalProbe { level, pairs, distances, starts: n_starts, failures })
}

fn l2_dist(a: &[f64], b: &[f64], m: &[f64]) -> f64 {
    a.iter().zip(b).zip(m).map(|((x, y), w)| w * (x - y).powi(2)).sum::<f64>().sqrt()
}

/// Sorts by `(λ, u)` and keeps the first of every cluster closer than [`DISTINCT_TOL`].
fn distinct(mut pairs: Vec<EigenPair>, m: &[f64]) -> Vec<EigenPair> {
    pairs.sort_by(|a, b| {
        a.lambda.total_cmp(&b.lambda).then_with(|| {
            a.u.iter().zip(&b.u).map(|(x, y)| x.total_cmp(y)).find(|o| o.is_ne()).unwrap_or(std::cmp::Ordering::Equal)
        })
    });
    let mut out: Vec<EigenPair> = Vec::new();
    for p in pairs {
        if out.iter().all(|q| l2_dist(&p.u, &q.u, m) > DISTINCT_TOL) {
            out.push(p);
        }
    }
    out
}

/// Member tests for the neighbourhoods `U_{λ,r}` and `N_{λ,δ}` of the
/// critical set at level `λ`.
#[derive(Clone, Debug)]
pub struct CriticalNeighborhood {
    pub phi: ConstrainedFunctional,
    pub level: f64,
    pub radius: f64,
    pub slack: f64,
    pub critical: Vec<L2Function>,
}

impl CriticalNeighborhood {
    pub fn new(phi: ConstrainedFunctional, level: f64, radius: f64, slack: f64, critical: Vec<L2Function>) -> Self {
        Self { phi, level, radius, slack, critical }
    }

    /// `u ∈ U_{λ,r}`: within distance `r` of a known critical point.
    pub fn in_tube(&self, u: &L2Function) -> Result<bool> {
        for c in &self.critical {
            if u.dist(c)? < self.radius {
                return Ok(true);
            }
        }
        Ok(false)
    }

    /// `u ∈ N_{λ,δ}`: `|Φ(u) - λ| <= δ` and `|∂Φ_L|^2(u) <= 4δ`.
    pub fn in_near_critical(&self, u: &L2Function) -> Result<bool> {
        let ch = self.phi.energy.energy(u)?;
        if !self.phi.in_domain(u, ch) || (ch - self.level).abs() > self.slack {
            return Ok(false);
        }
        Ok(self.phi.slope(u)?.powi(2) <= 4.0 * self.slack)
    }
}

/// Uniform slope bound `J`: the largest slope of `Φ_L` after flowing each
/// start for time `1/2`.
pub fn slope_bound(cf: &ConstrainedFunctional, starts: &[L2Function], tau: f64) -> Result<f64> {
    let slopes: Vec<Result<f64>> = starts
        .par_iter()
        .map(|u| Ok(sphere_flow_with(cf, u, 0.5, tau, &[], &[])?.last().slope))
        .collect();
    slopes.into_iter().try_fold(0.0f64, |acc, s| Ok(acc.max(s?)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::energy::{Edge, Exponent};
    use crate::models;
    use crate::space::make_path;

    fn two_point() -> (Arc<DiscreteSpace>, EnergyForm) {
        let s = Arc::new(make_path(2, 1.0).unwrap());
        let e = EnergyForm::quadratic(&s, vec![Edge::new(0, 1, 1.0)]).unwrap();
        (s, e)
    }

    #[test]
    fn phi_constants() {
        let (s, e) = two_point();
        let cf = build_phi(&e, 4.0).unwrap();
        assert_eq!((cf.cap, cf.shift), (5.0, 6.0));
        let cf0 = build_phi(&e, 0.0).unwrap();
        assert_eq!((cf0.cap, cf0.shift), (1.0, 2.0));
        let u = L2Function::new(&s, vec![1.0, -1.0]).unwrap();
        assert!((cf.value(&u).unwrap() + 2.0).abs() < 1e-14);
        assert_eq!(cf.convexity(), -12.0);
    }

    #[test]
    fn ill_posed_step() {
        let (s, e) = two_point();
        let cf = build_phi(&e, 4.0).unwrap();
        let u = L2Function::new(&s, vec![1.0, -1.0]).unwrap();
        assert!(matches!(flow::prox_step(&cf, &u, 1.0 / 12.0), Err(Error::IllPosed { .. })));
    }

    #[test]
    fn minimal_selection_vanishes_at_eigenfunctions() {
        let (s, e) = two_point();
        let cf = build_phi(&e, 4.0).unwrap();
        let u = L2Function::new(&s, vec![1.0, -1.0]).unwrap();
        assert!(phi_minimal_selection(&cf, &u).unwrap().norm() < 1e-14);
        let one = L2Function::constant(&s, 1.0);
        assert!(phi_minimal_selection(&cf, &one).unwrap().norm() < 1e-14);
        let half = u.scaled(0.5);
        assert!(matches!(phi_minimal_selection(&cf, &half), Err(Error::OutsideDomain(_))));
    }

    #[test]
    fn eigenfunction_is_stationary() {
        let (s, e) = two_point();
        let cf = build_phi(&e, 4.0).unwrap();
        let u = L2Function::new(&s, vec![1.0, -1.0]).unwrap();
        let traj = sphere_flow_run(&cf, &u, 1.0, 0.01).unwrap();
        for st in &traj.states {
            assert!(st.u.dist(&u).unwrap() <= 1e-8);
        }
    }

    #[test]
    fn two_point_eigenpair() {
        let (s, e) = two_point();
        let u0 = L2Function::new(&s, vec![0.9, -1.1]).unwrap().normalized().unwrap();
        let p = find_eigenpair(&e, &u0, 1e-8).unwrap();
        assert!((p.lambda - 4.0).abs() < 1e-8);
        assert!(p.residual <= 1e-8);
        assert!((p.u[0].abs() - 1.0).abs() < 1e-8 && (p.u[0] + p.u[1]).abs() < 1e-8);
    }

    #[test]
    fn perturbed_constant_flows_to_zero_level() {
        let (s, e) = two_point();
        let u0 = L2Function::new(&s, vec![1.01, 0.99]).unwrap().normalized().unwrap();
        let p = find_eigenpair(&e, &u0, 1e-8).unwrap();
        assert!(p.lambda.abs() < 1e-8);
    }

    #[test]
    fn two_point_critical_sets() {
        let (_, e) = two_point();
        let probe = critical_set_probe(&e, 4.0, 16, 1e-8, 3).unwrap();
        assert_eq!(probe.count(), 2);
        assert!((probe.distances[0][1] - 2.0).abs() < 1e-8);
        let none = critical_set_probe(&e, 1.0, 8, 1e-8, 3).unwrap();
        assert_eq!(none.count(), 0);
    }

    #[test]
    fn tangency_on_cycle() {
        let m = models::cycle(4, 1.0).unwrap();
        let e = m.quadratic();
        let u = L2Function::new(&m.space, vec![1.0, 0.0, -1.0, 0.0]).unwrap().normalized().unwrap();
        let cf = build_phi(&e, e.energy(&u).unwrap()).unwrap();
        let g = phi_minimal_selection(&cf, &u).unwrap();
        assert!(g.inner(&u).unwrap().abs() < 1e-10);
    }

    #[test]
    fn infinity_energy_flow_keeps_sphere() {
        let m = models::path(5, 1.0).unwrap();
        let e = m.lq(Exponent::Infinity);
        let u0 = L2Function::new(&m.space, vec![0.3, -1.0, 0.4, 0.8, -0.5]).unwrap().normalized().unwrap();
        let cf = build_phi(&e, e.energy(&u0).unwrap()).unwrap();
        let traj = sphere_flow_run(&cf, &u0, 0.05, 0.25 * cf.max_step()).unwrap();
        for w in traj.states.windows(2) {
            assert!((w[1].norm - 1.0).abs() < 1e-12);
            assert!(w[1].energy <= w[0].energy + 1e-9);
        }
    }

    #[test]
    fn eigenpair_json_round_trip() {
        let p = EigenPair { lambda: 4.0, residual: 1e-12, u: vec![1.0, -1.0], starts_used: 3 };
        let text = p.to_json();
        assert!(text.contains("\"starts_used\""));
        assert_eq!(EigenPair::from_json(&text).unwrap(), p);
    }

    #[test]
    fn neighborhoods() {
        let (s, e) = two_point();
        let cf = build_phi(&e, 4.0).unwrap();
        let u = L2Function::new(&s, vec![1.0, -1.0]).unwrap();
        let nb = CriticalNeighborhood::new(cf, 4.0, 0.1, 1e-6, vec![u.clone()]);
        assert!(nb.in_tube(&u).unwrap());
        assert!(nb.in_near_critical(&u).unwrap());
        let w = L2Function::new(&s, vec![-1.0, 1.0]).unwrap();
        assert!(!nb.in_tube(&w).unwrap());
        assert!(nb.in_near_critical(&w).unwrap());
    }
}
