//! Gradient flows of λ-convex functionals in `L^2(m)` by implicit Euler
//! (minimizing movement) steps, with the heat flow of `½Ch` as the main
//! instance and diagnostics for contraction, regularization, the energy
//! identity and the discrete evolution variational inequality.

use std::io::Write;
use std::sync::Arc;

use crate::energy::EnergyForm;
use crate::error::{Error, Result};
use crate::linalg;
use crate::space::{DiscreteSpace, L2Function};

/// A proper, lower semicontinuous, λ-convex functional on `L^2(m)`.
pub trait Functional: Send + Sync {
    fn space(&self) -> &Arc<DiscreteSpace>;

    /// `Φ(u)`, `+inf` outside the finiteness domain.
    fn value(&self, u: &L2Function) -> Result<f64>;

    /// Convexity modulus `λ`: `Φ - λ/2 |.|^2` is convex.
    fn convexity(&self) -> f64;

    /// `argmin_v Φ(v) + |v - u|^2 / (2 tau)`; callers go through [`prox_step`],
    /// which checks well-posedness first.
    fn resolvent(&self, u: &L2Function, tau: f64) -> Result<L2Function>;

    /// Minimal-norm element of the (Fréchet) subdifferential.
    fn min_subgradient(&self, u: &L2Function) -> Result<L2Function>;

    /// Descending slope `|∂Φ|(u)`.
    fn slope(&self, u: &L2Function) -> Result<f64> {
        Ok(self.min_subgradient(u)?.norm())
    }
}

/// `c · Ch` for a Dirichlet energy `Ch`; `c = ½` gives the heat flow.
#[derive(Clone, Debug)]
pub struct DirichletFunctional {
    pub energy: EnergyForm,
    pub weight: f64,
}

impl DirichletFunctional {
    pub fn new(energy: EnergyForm, weight: f64) -> Self {
        Self { energy, weight }
    }

    pub fn half(energy: EnergyForm) -> Self {
        Self::new(energy, 0.5)
    }
}

impl Functional for DirichletFunctional {
    fn space(&self) -> &Arc<DiscreteSpace> {
        self.energy.space()
    }

    fn value(&self, u: &L2Function) -> Result<f64> {
        Ok(self.weight * self.energy.energy(u)?)
    }

    fn convexity(&self) -> f64 {
        0.0
    }

    fn resolvent(&self, u: &L2Function, tau: f64) -> Result<L2Function> {
        let v = self.energy.regularized_minimizer(self.weight, 1.0 / tau, u.values())?;
        Ok(u.with_values(v))
    }

    fn min_subgradient(&self, u: &L2Function) -> Result<L2Function> {
        Ok(self.energy.laplacian(u)?.scaled(2.0 * self.weight))
    }
}

/// One implicit Euler step: the unique minimizer of `Φ(v) + |v - u|^2 / (2 tau)`.
pub fn prox_step(phi: &dyn Functional, u: &L2Function, tau: f64) -> Result<L2Function> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::InvalidParameter(format!("step size {tau}")));
    }
    let lambda = phi.convexity();
    if lambda < 0.0 && tau * (-lambda) >= 1.0 {
        return Err(Error::IllPosed { tau, lambda });
    }
    if !Arc::ptr_eq(phi.space(), u.space()) && !u.same_space(&L2Function::zeros(phi.space())) {
        return Err(Error::SpaceMismatch);
    }
    phi.resolvent(u, tau)
}

#[derive(Clone, Debug)]
pub struct FlowState {
    pub t: f64,
    pub u: L2Function,
    pub energy: f64,
    pub slope: f64,
    /// Max over probes of the discrete EVI defect (negative when satisfied
    /// with room to spare); zero at the initial state.
    pub evi_residual: f64,
    pub norm: f64,
}

#[derive(Clone, Debug)]
pub struct FlowTrajectory {
    pub tau: f64,
    pub convexity: f64,
    pub states: Vec<FlowState>,
}

impl FlowTrajectory {
    pub fn last(&self) -> &FlowState {
        self.states.last().expect("trajectory has its initial state")
    }

    pub fn max_evi_residual(&self) -> f64 {
        self.states.iter().skip(1).map(|s| s.evi_residual).fold(f64::NEG_INFINITY, f64::max)
    }

    /// CSV with columns `t, energy, slope, evi_max_residual, norm`.
    pub fn write_csv(&self, mut out: impl Write) -> Result<()> {
        writeln!(out, "t,energy,slope,evi_max_residual,norm")?;
        for s in &self.states {
            writeln!(out, "{},{},{},{},{}", s.t, s.energy, s.slope, s.evi_residual, s.norm)?;
        }
        Ok(())
    }
}

/// Discrete EVI defect of the step `u_prev -> u_next` against the probe `v`:
/// `(|u_next - v|^2 - |u_prev - v|^2) / (2 tau) - (Φ(v) - Φ(u_next) - λ/2 |v - u_next|^2)`.
pub fn evi_defect(
    phi: &dyn Functional,
    u_prev: &L2Function,
    u_next: &L2Function,
    phi_next: f64,
    v: &L2Function,
    tau: f64,
) -> Result<Option<f64>> {
    let phi_v = phi.value(v)?;
    if !phi_v.is_finite() {
        return Ok(None);
    }
    let dn = u_next.dist(v)?.powi(2);
    let dp = u_prev.dist(v)?.powi(2);
    let lhs = (dn - dp) / (2.0 * tau);
    let rhs = phi_v - phi_next - 0.5 * phi.convexity() * dn;
    Ok(Some(lhs - rhs))
}

/// Default EVI probes: the origin, the initial point and the unit constant.
pub fn default_probes(u0: &L2Function) -> Vec<L2Function> {
    vec![L2Function::zeros(u0.space()), u0.clone(), L2Function::constant(u0.space(), 1.0)]
}

/// Iterates [`prox_step`] `ceil(horizon / tau)` times from `u0`.
pub fn flow(
    phi: &dyn Functional,
    u0: &L2Function,
    horizon: f64,
    tau: f64,
    probes: &[L2Function],
) -> Result<FlowTrajectory> {
    if !(horizon >= 0.0) {
        return Err(Error::InvalidParameter(format!("horizon {horizon}")));
    }
    let steps = (horizon / tau - 1e-9).ceil().max(0.0) as usize;
    let e0 = phi.value(u0)?;
    let mut states = Vec::with_capacity(steps + 1);
    states.push(FlowState {
        t: 0.0,
        u: u0.clone(),
        energy: e0,
        slope: if e0.is_finite() { phi.slope(u0)? } else { f64::INFINITY },
        evi_residual: 0.0,
        norm: u0.norm(),
    });
    let mut u = u0.clone();
    for n in 0..steps {
        let next = prox_step(phi, &u, tau)?;
        let energy = phi.value(&next)?;
        let mut evi = f64::NEG_INFINITY;
        for v in probes {
            if let Some(d) = evi_defect(phi, &u, &next, energy, v, tau)? {
                evi = evi.max(d);
            }
        }
        states.push(FlowState {
            t: (n + 1) as f64 * tau,
            slope: phi.slope(&next)?,
            energy,
            evi_residual: evi,
            norm: next.norm(),
            u: next.clone(),
        });
        u = next;
    }
    Ok(FlowTrajectory { tau, convexity: phi.convexity(), states })
}

#[derive(Clone, Copy, Debug)]
pub struct HeatFlowOptions {
    /// Initial number of implicit Euler steps.
    pub initial_steps: usize,
    /// Endpoint agreement required between successive step halvings.
    pub tol: f64,
    pub max_halvings: usize,
    /// Use the exact eigen-decomposition for quadratic energies.
    pub exact_quadratic: bool,
}

impl Default for HeatFlowOptions {
    fn default() -> Self {
        Self { initial_steps: 200, tol: 1e-6, max_halvings: 6, exact_quadratic: true }
    }
}

#[derive(Clone, Debug)]
pub struct HeatFlowResult {
    pub u: L2Function,
    /// Step used for the returned endpoint (zero on the exact path).
    pub tau: f64,
    /// Endpoint distance between the last two refinements (zero on the exact path).
    pub refinement_gap: f64,
    pub converged: bool,
}

/// Heat flow `h_t f`: gradient flow of `½Ch` from `f` up to time `t`.
pub fn heat_flow(energy: &EnergyForm, f: &L2Function, t: f64) -> Result<L2Function> {
    Ok(heat_flow_with(energy, f, t, HeatFlowOptions::default())?.u)
}

pub fn heat_flow_with(
    energy: &EnergyForm,
    f: &L2Function,
    t: f64,
    opts: HeatFlowOptions,
) -> Result<HeatFlowResult> {
    if !(t >= 0.0 && t.is_finite()) {
        return Err(Error::InvalidParameter(format!("time {t}")));
    }
    energy.energy(f)?;
    if t == 0.0 {
        return Ok(HeatFlowResult { u: f.clone(), tau: 0.0, refinement_gap: 0.0, converged: true });
    }
    if opts.exact_quadratic && energy.is_quadratic() {
        return Ok(HeatFlowResult {
            u: exact_quadratic_heat_flow(energy, f, t)?,
            tau: 0.0,
            refinement_gap: 0.0,
            converged: true,
        });
    }
    let phi = DirichletFunctional::half(energy.clone());
    let run = |steps: usize| -> Result<L2Function> {
        let tau = t / steps as f64;
        let mut u = f.clone();
        for _ in 0..steps {
            u = prox_step(&phi, &u, tau)?;
        }
        Ok(u)
    };
    let mut steps = opts.initial_steps.max(1);
    let mut u = run(steps)?;
    let mut gap = f64::INFINITY;
    for _ in 0..opts.max_halvings {
        let finer = run(2 * steps)?;
        gap = finer.dist(&u)?;
        steps *= 2;
        u = finer;
        if gap < opts.tol {
            break;
        }
    }
    Ok(HeatFlowResult { tau: t / steps as f64, converged: gap < opts.tol, refinement_gap: gap, u })
}

fn exact_quadratic_heat_flow(energy: &EnergyForm, f: &L2Function, t: f64) -> Result<L2Function> {
    HeatSemigroup::new(energy)?.apply(f, t)
}

/// Heat semigroup `h_t` with the spectral decomposition cached, so repeated
/// applications on one quadratic energy cost a matrix-vector product each.
/// Nonquadratic energies fall back to [`heat_flow_with`].
#[derive(Clone, Debug)]
pub struct HeatSemigroup {
    energy: EnergyForm,
    eigen: Option<(Vec<f64>, nalgebra::DMatrix<f64>)>,
}

impl HeatSemigroup {
    pub fn new(energy: &EnergyForm) -> Result<Self> {
        let eigen = if energy.is_quadratic() {
            Some(linalg::generalized_eigen(&energy.stiffness()?, energy.space().measure()))
        } else {
            None
        };
        Ok(Self { energy: energy.clone(), eigen })
    }

    pub fn energy(&self) -> &EnergyForm {
        &self.energy
    }

    pub fn apply(&self, f: &L2Function, t: f64) -> Result<L2Function> {
        let Some((vals, vecs)) = &self.eigen else {
            return Ok(heat_flow_with(&self.energy, f, t, HeatFlowOptions::default())?.u);
        };
        if !(t >= 0.0 && t.is_finite()) {
            return Err(Error::InvalidParameter(format!("time {t}")));
        }
        if !Arc::ptr_eq(f.space(), self.energy.space()) && **f.space() != **self.energy.space() {
            return Err(Error::SpaceMismatch);
        }
        let m = self.energy.space().measure();
        let fm: Vec<f64> = f.values().iter().zip(m).map(|(a, w)| a * w).collect();
        let fm = nalgebra::DVector::from_vec(fm);
        let mut c = vecs.tr_mul(&fm);
        for (cj, lam) in c.iter_mut().zip(vals) {
            *cj *= (-lam.max(0.0) * t).exp();
        }
        Ok(f.with_values((vecs * c).iter().copied().collect()))
    }
}

/// Slack factor for the regularization and contraction checks.
pub const CHECK_SLACK: f64 = 1.02;

#[derive(Clone, Debug)]
pub struct RegularizationReport {
    pub t: f64,
    pub energy: f64,
    pub energy_bound: f64,
    pub energy_bound_ok: bool,
    pub laplacian_sq: f64,
    pub slope_bound: f64,
    pub slope_bound_ok: bool,
}

impl RegularizationReport {
    /// `bound * slack - value`; nonnegative when the check passes.
    pub fn energy_margin(&self) -> f64 {
        self.energy_bound * CHECK_SLACK - self.energy
    }

    pub fn slope_margin(&self) -> f64 {
        self.slope_bound * CHECK_SLACK - self.laplacian_sq
    }
}

/// Checks `Ch(h_t f) <= |f|^2 / t` and `|Δ h_t f|^2 <= |f|^2 / t^2`.
pub fn check_regularization(energy: &EnergyForm, f: &L2Function, t: f64) -> Result<RegularizationReport> {
    check_regularization_with(energy, f, t, HeatFlowOptions::default())
}

pub fn check_regularization_with(
    energy: &EnergyForm,
    f: &L2Function,
    t: f64,
    opts: HeatFlowOptions,
) -> Result<RegularizationReport> {
    if !(t > 0.0) {
        return Err(Error::InvalidParameter(format!("time {t}")));
    }
    let h = heat_flow_with(energy, f, t, opts)?.u;
    let nf2 = f.norm().powi(2);
    let e = energy.energy(&h)?;
    let lap2 = energy.laplacian(&h)?.norm().powi(2);
    let (eb, sb) = (nf2 / t, nf2 / (t * t));
    Ok(RegularizationReport {
        t,
        energy: e,
        energy_bound: eb,
        energy_bound_ok: e <= eb * CHECK_SLACK + 1e-14,
        laplacian_sq: lap2,
        slope_bound: sb,
        slope_bound_ok: lap2 <= sb * CHECK_SLACK + 1e-14,
    })
}

#[derive(Clone, Debug)]
pub struct ContractivityReport {
    pub distances: Vec<f64>,
    /// Worst `dist_n / (e^{-λ t_n} dist_0)`.
    pub worst_ratio: f64,
    /// Largest increase `dist_{n+1} - dist_n` (relevant when λ >= 0).
    pub worst_increase: f64,
    pub ok: bool,
}

/// Runs both flows and checks `|S_t u - S_t v| <= e^{-λt} |u - v|` with
/// slack [`CHECK_SLACK`] at every step.
pub fn check_contractivity(
    phi: &dyn Functional,
    u: &L2Function,
    v: &L2Function,
    horizon: f64,
    tau: f64,
) -> Result<ContractivityReport> {
    let a = flow(phi, u, horizon, tau, &[])?;
    let b = flow(phi, v, horizon, tau, &[])?;
    let lambda = phi.convexity();
    let distances: Vec<f64> = a
        .states
        .iter()
        .zip(&b.states)
        .map(|(x, y)| x.u.dist(&y.u))
        .collect::<Result<_>>()?;
    let d0 = distances[0];
    let mut worst_ratio: f64 = 0.0;
    let mut worst_increase = f64::NEG_INFINITY;
    let mut ok = true;
    for (n, d) in distances.iter().enumerate() {
        let t = a.states[n].t;
        let bound = (-lambda * t).exp() * d0;
        if bound > 0.0 {
            worst_ratio = worst_ratio.max(d / bound);
        }
        if *d > bound * CHECK_SLACK + 1e-12 {
            ok = false;
        }
        if n > 0 {
            let inc = d - distances[n - 1];
            worst_increase = worst_increase.max(inc);
            if lambda >= 0.0 && inc > 1e-10 {
                ok = false;
            }
        }
    }
    Ok(ContractivityReport { distances, worst_ratio, worst_increase, ok })
}

#[derive(Clone, Debug)]
pub struct EnergyIdentityReport {
    /// Per step: `(Φ(u_n) - Φ(u_{n+1})) / tau` divided by `|∂Φ|^2(u_{n+1})`
    /// (`1` when both sides vanish).
    pub ratios: Vec<f64>,
    pub tolerances: Vec<f64>,
    pub within: usize,
    pub flagged: usize,
    pub worst_deviation: f64,
}

impl EnergyIdentityReport {
    pub fn fraction_within(&self) -> f64 {
        if self.ratios.is_empty() {
            1.0
        } else {
            self.within as f64 / self.ratios.len() as f64
        }
    }
}

/// Compares the discrete energy dissipation rate with the squared slope
/// after each step. The tolerance is `10 tau c_n` with `c_n` the Lipschitz
/// quotient of the minimal subgradient across the step.
pub fn check_energy_identity(phi: &dyn Functional, traj: &FlowTrajectory) -> Result<EnergyIdentityReport> {
    let tau = traj.tau;
    let mut ratios = Vec::new();
    let mut tolerances = Vec::new();
    let (mut within, mut flagged) = (0, 0);
    let mut worst: f64 = 0.0;
    let mut g_prev = phi.min_subgradient(&traj.states[0].u)?;
    for w in traj.states.windows(2) {
        let (a, b) = (&w[0], &w[1]);
        let g_next = phi.min_subgradient(&b.u)?;
        let lhs = (a.energy - b.energy) / tau;
        let rhs = b.slope * b.slope;
        let step = a.u.dist(&b.u)?;
        let lip = if step > 0.0 { g_prev.dist(&g_next)? / step } else { 0.0 };
        let tol = 10.0 * tau * lip;
        let scale = lhs.abs().max(rhs);
        let ratio = if scale <= 1e-14 * (1.0 + a.energy.abs()) { 1.0 } else { lhs / rhs };
        let dev = (ratio - 1.0).abs();
        if dev <= tol + 1e-9 {
            within += 1;
        } else {
            flagged += 1;
        }
        worst = worst.max(dev);
        ratios.push(ratio);
        tolerances.push(tol);
        g_prev = g_next;
    }
    Ok(EnergyIdentityReport { ratios, tolerances, within, flagged, worst_deviation: worst })
}
