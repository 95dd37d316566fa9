//! Min-max values `Λ_k = inf_{dim L = k} sup_{S(L)} Ch` over unit spheres of
//! `k`-dimensional subspaces (each has genus `k`), the dense oracle for
//! quadratic energies, and spectrum reports.
//!
//! For quadratic energies `Λ_k` is the `k`-th eigenvalue. For nonlinear ones
//! it is an upper bound for the genus min-max value, since only subspace
//! spheres are searched.

use std::io::Write;
use std::sync::Arc;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::energy::EnergyForm;
use crate::error::{Error, Result};
use crate::linalg;
use crate::space::{DiscreteSpace, L2Function};
use crate::sphere::{self, EigenOptions, EigenPair};

/// Gram matrices further than this from the identity are rejected.
pub const ORTHONORMAL_TOL: f64 = 1e-10;

/// The unit sphere `S(L)` of `L = span(basis)`, given by an `m`-orthonormal basis.
#[derive(Clone, Debug)]
pub struct SubspaceFamily {
    space: Arc<DiscreteSpace>,
    basis: Vec<Vec<f64>>,
}

impl SubspaceFamily {
    pub fn new(space: &Arc<DiscreteSpace>, basis: Vec<Vec<f64>>) -> Result<Self> {
        if basis.is_empty() {
            return Err(Error::InvalidK { k: 0, dim: space.len() });
        }
        for b in &basis {
            if b.len() != space.len() {
                return Err(Error::DimensionMismatch(b.len(), space.len()));
            }
        }
        let g = linalg::gram(&basis, space.measure());
        let dev = (g - DMatrix::identity(basis.len(), basis.len())).amax();
        if dev > ORTHONORMAL_TOL {
            return Err(Error::NotOrthonormal(dev));
        }
        Ok(Self { space: Arc::clone(space), basis })
    }

    /// Orthonormalizes `functions` first; fails if they are dependent.
    pub fn spanned_by(space: &Arc<DiscreteSpace>, functions: &[Vec<f64>]) -> Result<Self> {
        let q = linalg::orthonormalize(functions, space.measure(), 1e-10);
        if q.len() != functions.len() {
            return Err(Error::InvalidParameter("spanning functions are linearly dependent".into()));
        }
        Self::new(space, q)
    }

    pub fn space(&self) -> &Arc<DiscreteSpace> {
        &self.space
    }

    pub fn basis(&self) -> &[Vec<f64>] {
        &self.basis
    }

    pub fn dim(&self) -> usize {
        self.basis.len()
    }

    /// `Σ c_i b_i`; a unit vector when `|c| = 1`.
    pub fn combine(&self, c: &[f64]) -> L2Function {
        let mut v = vec![0.0; self.space.len()];
        for (ci, b) in c.iter().zip(&self.basis) {
            for (x, y) in v.iter_mut().zip(b) {
                *x += ci * y;
            }
        }
        L2Function::new(&self.space, v).expect("basis length checked")
    }
}

#[derive(Clone, Debug)]
pub struct InnerMax {
    /// Best value found, `max(ascent, grid)`.
    pub value: f64,
    pub maximizer: L2Function,
    pub ascent_value: f64,
    pub grid_value: Option<f64>,
    /// Angular resolution of the grid in degrees.
    pub grid_step_deg: Option<f64>,
    /// Exact (quadratic) or backed by the angular grid.
    pub certified: bool,
}

#[derive(Clone, Copy, Debug)]
pub struct InnerMaxOptions {
    pub starts: usize,
    pub max_iter: usize,
    pub grid: bool,
    pub seed: u64,
}

impl Default for InnerMaxOptions {
    fn default() -> Self {
        Self { starts: 32, max_iter: 500, grid: true, seed: 0x5eed }
    }
}

/// `sup { Ch(v) : v ∈ S(L) }`.
pub fn rayleigh_sup_on_sphere(energy: &EnergyForm, family: &SubspaceFamily) -> Result<InnerMax> {
    rayleigh_sup_with(energy, family, InnerMaxOptions::default())
}

pub fn rayleigh_sup_with(energy: &EnergyForm, family: &SubspaceFamily, opts: InnerMaxOptions) -> Result<InnerMax> {
    if !crate::space::same_space(energy.space(), family.space()) {
        return Err(Error::SpaceMismatch);
    }
    let k = family.dim();
    if energy.is_quadratic() {
        let a = energy.stiffness()?;
        let t = restricted_form(&a, family.basis());
        let eig = SymmetricEigen::new(t);
        let j = eig.eigenvalues.imax();
        let c: Vec<f64> = eig.eigenvectors.column(j).iter().copied().collect();
        let value = eig.eigenvalues[j].max(0.0);
        return Ok(InnerMax {
            value,
            maximizer: family.combine(&c),
            ascent_value: value,
            grid_value: None,
            grid_step_deg: None,
            certified: true,
        });
    }

    let f = |c: &[f64]| energy.energy_of(family.combine(c).values());
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut best_c = unit(k, 0);
    let mut best = f(&best_c);
    for s in 0..opts.starts.max(1) {
        let c0 = if s < k { unit(k, s) } else { random_unit(k, &mut rng) };
        let (c, v) = ascend(energy, family, c0, opts.max_iter)?;
        if v > best {
            best = v;
            best_c = c;
        }
    }
    let ascent_value = best;
    let (mut grid_value, mut grid_step) = (None, None);
    if opts.grid && k <= 3 {
        let (gc, gv, step) = angular_grid(k, &f);
        grid_value = Some(gv);
        grid_step = Some(step);
        if gv > best {
            best = gv;
            best_c = gc;
        }
    }
    Ok(InnerMax {
        value: best,
        maximizer: family.combine(&best_c),
        ascent_value,
        grid_value,
        grid_step_deg: grid_step,
        certified: grid_value.is_some(),
    })
}

fn restricted_form(a: &DMatrix<f64>, basis: &[Vec<f64>]) -> DMatrix<f64> {
    let k = basis.len();
    let cols: Vec<_> = basis.iter().map(|b| a * linalg::to_dvector(b)).collect();
    let t = DMatrix::from_fn(k, k, |i, j| cols[j].iter().zip(&basis[i]).map(|(x, y)| x * y).sum());
    (&t + t.transpose()) * 0.5
}

fn unit(k: usize, i: usize) -> Vec<f64> {
    let mut c = vec![0.0; k];
    c[i] = 1.0;
    c
}

fn random_unit(k: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    loop {
        let c: Vec<f64> = (0..k).map(|_| StandardNormal.sample(rng)).collect();
        let n = c.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-8 {
            return c.into_iter().map(|x| x / n).collect();
        }
    }
}

/// Maximizes the convex, 2-homogeneous `c ↦ Ch(Σ c_i b_i)` on the unit
/// sphere by the fixed-point iteration `c ← ∇F(c) / |∇F(c)|`, which never
/// decreases `F`.
fn ascend(energy: &EnergyForm, family: &SubspaceFamily, mut c: Vec<f64>, max_iter: usize) -> Result<(Vec<f64>, f64)> {
    let m = family.space().measure();
    let mut val = energy.energy_of(family.combine(&c).values());
    for _ in 0..max_iter {
        let v = family.combine(&c);
        let xi = energy.any_subgradient_of(v.values())?;
        let g: Vec<f64> = family.basis().iter().map(|b| linalg::wdot(&xi, b, m)).collect();
        let n = g.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n == 0.0 {
            break;
        }
        let next: Vec<f64> = g.into_iter().map(|x| x / n).collect();
        let nv = energy.energy_of(family.combine(&next).values());
        if nv <= val * (1.0 + 1e-15) {
            if nv > val {
                c = next;
                val = nv;
            }
            break;
        }
        c = next;
        val = nv;
    }
    Ok((c, val))
}

/// Evaluates `f` on an angular grid of one hemisphere (`f` is even).
fn angular_grid(k: usize, f: &dyn Fn(&[f64]) -> f64) -> (Vec<f64>, f64, f64) {
    let mut best = (unit(k, 0), f64::NEG_INFINITY);
    let mut consider = |c: Vec<f64>| {
        let v = f(&c);
        if v > best.1 {
            best = (c, v);
        }
    };
    let step = match k {
        1 => {
            consider(vec![1.0]);
            0.0
        }
        2 => {
            let step = 0.5f64;
            for i in 0..360 {
                let t = (i as f64 * step).to_radians();
                consider(vec![t.cos(), t.sin()]);
            }
            step
        }
        _ => {
            let step = 1.0f64;
            for i in 0..=90 {
                let th = (i as f64 * step).to_radians();
                let ring = if i == 0 { 1 } else { 360 };
                for j in 0..ring {
                    let ph = (j as f64 * step).to_radians();
                    consider(vec![th.sin() * ph.cos(), th.sin() * ph.sin(), th.cos()]);
                }
            }
            step
        }
    };
    (best.0, best.1, step)
}

#[derive(Clone, Debug)]
pub struct MinMax {
    pub k: usize,
    /// `+inf` when `k` exceeds the dimension.
    pub value: f64,
    pub family: Option<SubspaceFamily>,
    pub inner: Option<InnerMax>,
    pub exact: bool,
}

#[derive(Clone, Copy, Debug)]
pub struct MinMaxOptions {
    /// Random restarts of the outer minimization (nonlinear energies).
    pub budget: usize,
    pub seed: u64,
    pub outer_iter: usize,
}

impl Default for MinMaxOptions {
    fn default() -> Self {
        Self { budget: 16, seed: 0x5eed, outer_iter: 60 }
    }
}

/// `Λ_k` with a realizing `k`-dimensional subspace.
pub fn minmax_upper_bound(energy: &EnergyForm, k: usize, budget: usize) -> Result<MinMax> {
    minmax_with(energy, k, MinMaxOptions { budget, ..MinMaxOptions::default() })
}

pub fn minmax_with(energy: &EnergyForm, k: usize, opts: MinMaxOptions) -> Result<MinMax> {
    let n = energy.space().len();
    if k == 0 {
        return Err(Error::InvalidK { k, dim: n });
    }
    if k > n {
        // no symmetric compact subset of the unit sphere of R^n has genus > n
        return Ok(MinMax { k, value: f64::INFINITY, family: None, inner: None, exact: true });
    }
    if energy.is_quadratic() {
        let basis = lowest_ritz_vectors(energy, k, opts.seed)?;
        let family = SubspaceFamily::new(energy.space(), basis)?;
        let inner = rayleigh_sup_on_sphere(energy, &family)?;
        return Ok(MinMax { k, value: inner.value, family: Some(family), inner: Some(inner), exact: true });
    }

    let runs: Vec<Result<(f64, SubspaceFamily)>> = (0..opts.budget.max(1))
        .into_par_iter()
        .map(|r| {
            // the first restart starts from the comparison form's lowest modes
            let init = if r == 0 { Some(lowest_ritz_vectors(&energy.comparison_quadratic()?, k, opts.seed)?) } else { None };
            descend_frame(energy, k, opts.seed.wrapping_add(r as u64), init, opts.outer_iter)
        })
        .collect();
    let mut best: Option<(f64, SubspaceFamily)> = None;
    for r in runs {
        let (v, fam) = r?;
        if best.as_ref().is_none_or(|(b, _)| v < *b) {
            best = Some((v, fam));
        }
    }
    let (_, family) = best.expect("at least one restart");
    // certify by re-evaluating with the full inner search
    let inner = rayleigh_sup_on_sphere(energy, &family)?;
    Ok(MinMax { k, value: inner.value, family: Some(family), inner: Some(inner), exact: false })
}

/// Inverse subspace iteration with Rayleigh-Ritz on an oversampled block.
fn lowest_ritz_vectors(energy: &EnergyForm, k: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    let space = energy.space();
    let m = space.measure();
    let n = space.len();
    let a = energy.stiffness()?;
    let p = (k + 4).min(n);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x: Vec<Vec<f64>> = vec![vec![1.0; n]];
    while x.len() < p {
        x.push((0..n).map(|_| StandardNormal.sample(&mut rng)).collect());
        x = linalg::orthonormalize(&x, m, 1e-8);
    }
    let ritz = |cols: &[Vec<f64>]| -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
        let q = linalg::orthonormalize(cols, m, 1e-12);
        if q.len() < k {
            return Err(Error::SolverFailure("subspace iteration lost rank".into()));
        }
        let t = restricted_form(&a, &q);
        let eig = SymmetricEigen::new(t);
        let mut order: Vec<usize> = (0..q.len()).collect();
        order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
        let vals = order.iter().map(|&i| eig.eigenvalues[i]).collect();
        let vecs = order
            .iter()
            .map(|&j| {
                let mut v = vec![0.0; n];
                for (i, qi) in q.iter().enumerate() {
                    let c = eig.eigenvectors[(i, j)];
                    for (vv, qq) in v.iter_mut().zip(qi) {
                        *vv += c * qq;
                    }
                }
                v
            })
            .collect();
        Ok((vals, vecs))
    };
    if p == n {
        return Ok(ritz(&x)?.1.into_iter().take(k).collect());
    }
    let trace: f64 = (0..n).map(|i| a[(i, i)] / m[i]).sum();
    // residuals below rounding level of M^-1 A are not reachable
    let op_scale = (0..n).map(|i| a[(i, i)] / m[i]).fold(0.0, f64::max);
    let sigma = 1e-3 * trace / n as f64 + 1e-12;
    let mut shifted = a.clone();
    for i in 0..n {
        shifted[(i, i)] += sigma * m[i];
    }
    let chol = shifted
        .cholesky()
        .ok_or_else(|| Error::SolverFailure("shifted stiffness not positive definite".into()))?;
    let mut result = ritz(&x)?;
    for _ in 0..5000 {
        let y: Vec<Vec<f64>> = result
            .1
            .iter()
            .map(|v| {
                let rhs = linalg::to_dvector(&v.iter().zip(m).map(|(a, b)| a * b).collect::<Vec<_>>());
                chol.solve(&rhs).iter().copied().collect()
            })
            .collect();
        result = ritz(&y)?;
        let converged = (0..k).all(|j| {
            let v = &result.1[j];
            let av = &a * linalg::to_dvector(v);
            let r: f64 = (0..n).map(|i| (av[i] - result.0[j] * m[i] * v[i]).powi(2) / m[i]).sum::<f64>().sqrt();
            r <= 1e-11 * (1.0 + result.0[j].abs()) + 1e-13 * op_scale
        });
        if converged {
            break;
        }
    }
    Ok(result.1.into_iter().take(k).collect())
}

/// One restart of the outer minimization over `k`-frames for nonlinear
/// energies: a resolvent-smoothed start followed by tangential descent on
/// the current maximizer.
fn descend_frame(
    energy: &EnergyForm,
    k: usize,
    seed: u64,
    init: Option<Vec<Vec<f64>>>,
    iters: usize,
) -> Result<(f64, SubspaceFamily)> {
    let space = energy.space();
    let m = space.measure();
    let n = space.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let warm = init.is_some();
    let mut cols: Vec<Vec<f64>> = init.unwrap_or_else(|| vec![vec![1.0; n]]);
    while cols.len() < k {
        cols.push((0..n).map(|_| StandardNormal.sample(&mut rng)).collect());
        cols = linalg::orthonormalize(&cols, m, 1e-8);
    }
    // resolvent smoothing pulls the frame towards low-energy directions
    let rounds = if warm { 0 } else { 8 };
    let probe = L2Function::new(space, cols.last().cloned().expect("k >= 1"))?;
    let level = energy.energy(&probe)?.max(1e-12);
    let tau = 4.0 / level;
    for _ in 0..rounds {
        let next: Vec<Vec<f64>> = cols
            .iter()
            .map(|c| energy.regularized_minimizer(tau, 1.0, c))
            .collect::<Result<_>>()?;
        let q = linalg::orthonormalize(&next, m, 1e-10);
        if q.len() < k {
            break;
        }
        cols = q;
    }
    let inner_opts = InnerMaxOptions { starts: 12, max_iter: 200, grid: false, seed };
    let mut family = SubspaceFamily::new(space, cols)?;
    let mut inner = rayleigh_sup_with(energy, &family, inner_opts)?;
    let mut eta = 0.5;
    for _ in 0..iters {
        let v = &inner.maximizer;
        let ch = inner.value;
        let xi = energy.any_subgradient_of(v.values())?;
        let g: Vec<f64> = xi.iter().zip(v.values()).map(|(x, u)| 2.0 * (x - ch * u)).collect();
        let gn = linalg::wnorm(&g, m);
        if gn <= 1e-12 * (1.0 + ch) {
            break;
        }
        let c: Vec<f64> = family.basis().iter().map(|b| linalg::wdot(v.values(), b, m)).collect();
        let mut improved = false;
        while eta > 1e-8 {
            let step = eta / gn;
            let moved: Vec<Vec<f64>> = family
                .basis()
                .iter()
                .zip(&c)
                .map(|(b, ci)| b.iter().zip(&g).map(|(x, gi)| x - step * ci * gi).collect())
                .collect();
            let q = linalg::orthonormalize(&moved, m, 1e-10);
            if q.len() == k {
                let cand = SubspaceFamily::new(space, q)?;
                let ci = rayleigh_sup_with(energy, &cand, inner_opts)?;
                if ci.value < inner.value * (1.0 - 1e-12) {
                    family = cand;
                    inner = ci;
                    eta *= 1.5;
                    improved = true;
                    break;
                }
            }
            eta *= 0.5;
        }
        if !improved {
            break;
        }
    }
    Ok((inner.value, family))
}

/// Dense oracle for quadratic energies: all eigenvalues of `A u = λ M u`
/// ascending, with an `m`-orthonormal eigenbasis.
#[derive(Clone, Debug)]
pub struct QuadraticSpectrum {
    pub values: Vec<f64>,
    pub vectors: Vec<Vec<f64>>,
    /// Largest `|Au - λMu|_{M^{-1}} / (1 + |λ|)`.
    pub max_residual: f64,
}

pub fn quadratic_oracle(energy: &EnergyForm) -> Result<QuadraticSpectrum> {
    let a = energy.stiffness()?;
    let m = energy.space().measure();
    let (values, vecs) = linalg::generalized_eigen(&a, m);
    let n = m.len();
    let vectors: Vec<Vec<f64>> = (0..n).map(|j| linalg::column(&vecs, j)).collect();
    let mut max_residual: f64 = 0.0;
    for (lam, v) in values.iter().zip(&vectors) {
        let av = &a * linalg::to_dvector(v);
        let r: f64 = (0..n).map(|i| (av[i] - lam * m[i] * v[i]).powi(2) / m[i]).sum::<f64>().sqrt();
        max_residual = max_residual.max(r / (1.0 + lam.abs()));
    }
    Ok(QuadraticSpectrum { values, vectors, max_residual })
}

#[derive(Clone, Debug)]
pub struct DivergenceReport {
    pub values: Vec<f64>,
    pub nondecreasing: bool,
    /// `Λ_k` finite for every `k <= dim`.
    pub finite_within_dim: bool,
    /// `Λ_k / Λ_{ceil(k/2)}` for `k >= 2` (`inf` when the denominator vanishes).
    pub growth_ratios: Vec<f64>,
    /// `Λ_k >= Λ_{ceil(k/2)}` throughout.
    pub growth_ok: bool,
}

pub fn divergence_check(energy: &EnergyForm, k_max: usize, budget: usize) -> Result<DivergenceReport> {
    if k_max == 0 {
        return Err(Error::InvalidK { k: 0, dim: energy.space().len() });
    }
    let values: Vec<f64> = (1..=k_max)
        .map(|k| Ok(minmax_upper_bound(energy, k, budget)?.value))
        .collect::<Result<_>>()?;
    let tol = |x: f64| 1e-9 * (1.0 + x.abs());
    let nondecreasing = values.windows(2).all(|w| w[1] >= w[0] - tol(w[0]));
    let n = energy.space().len();
    let finite_within_dim = values.iter().take(n).all(|v| v.is_finite());
    let mut growth_ratios = Vec::new();
    let mut growth_ok = true;
    for k in 2..=k_max {
        let (hi, lo) = (values[k - 1], values[k.div_ceil(2) - 1]);
        growth_ratios.push(if lo > 0.0 { hi / lo } else { f64::INFINITY });
        growth_ok &= hi >= lo - tol(lo);
    }
    Ok(DivergenceReport { values, nondecreasing, finite_within_dim, growth_ratios, growth_ok })
}

#[derive(Clone, Debug)]
pub struct SpectrumRow {
    pub k: usize,
    pub lambda_upper: f64,
    pub exact: bool,
    pub inner_max_certified: bool,
    /// Eigenpair reached by the sphere flow from the inner maximizer.
    pub eigenpair: Option<EigenPair>,
}

#[derive(Clone, Debug)]
pub struct SpectrumReport {
    pub rows: Vec<SpectrumRow>,
    pub method: String,
}

impl SpectrumReport {
    pub fn values(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.lambda_upper).collect()
    }

    /// CSV with columns `k, lambda_upper, exact_flag, inner_max_certified,
    /// residual_of_matched_eigenpair`.
    pub fn write_csv(&self, mut out: impl Write) -> Result<()> {
        writeln!(out, "k,lambda_upper,exact_flag,inner_max_certified,residual_of_matched_eigenpair")?;
        for r in &self.rows {
            let res = r.eigenpair.as_ref().map(|p| format!("{:e}", p.residual)).unwrap_or_default();
            writeln!(out, "{},{},{},{},{}", r.k, fmt_value(r.lambda_upper), r.exact, r.inner_max_certified, res)?;
        }
        Ok(())
    }
}

pub(crate) fn fmt_value(x: f64) -> String {
    if x.is_infinite() {
        "inf".into()
    } else {
        format!("{x}")
    }
}

/// `Λ_1..Λ_{k_max}` together with the eigenpair the sphere flow reaches from
/// each inner maximizer (its eigenvalue is at most `Λ_k`).
pub fn spectrum_report(energy: &EnergyForm, k_max: usize, opts: MinMaxOptions, eigen_tol: f64) -> Result<SpectrumReport> {
    let rows: Vec<Result<SpectrumRow>> = (1..=k_max)
        .into_par_iter()
        .map(|k| {
            let mm = minmax_with(energy, k, opts)?;
            let eigenpair = match &mm.inner {
                Some(inner) => {
                    let u0 = inner.maximizer.normalized().ok_or(Error::NormCollapse {
                        index: k,
                        norm: 0.0,
                        threshold: 0.0,
                    })?;
                    let eo = EigenOptions { tol: eigen_tol, max_steps: 20_000, ..EigenOptions::default() };
                    Some(sphere::search_eigenpair(energy, &u0, &eo)?.pair)
                }
                None => None,
            };
            Ok(SpectrumRow {
                k,
                lambda_upper: mm.value,
                exact: mm.exact,
                inner_max_certified: mm.inner.as_ref().is_none_or(|i| i.certified),
                eigenpair,
            })
        })
        .collect();
    let rows = rows.into_iter().collect::<Result<Vec<_>>>()?;
    let method = if energy.is_quadratic() {
        "quadratic: inverse subspace iteration with Rayleigh-Ritz; values are exact eigenvalues".to_string()
    } else {
        format!(
            "nonlinear: subspace-sphere families only, {} restarts; values are upper bounds for the min-max spectrum",
            opts.budget
        )
    };
    Ok(SpectrumReport { rows, method })
}
