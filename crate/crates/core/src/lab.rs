//! Convergence experiments over families of discrete spaces approaching a
//! (finest, discrete) limit: Mosco recovery sequences, heat-regularized
//! transfer of subspace nets, Hausdorff accumulation of pushed sets and
//! spectral continuity reports in both directions.

use std::io::Write;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::energy::{EnergyForm, Exponent};
use crate::error::{Error, Result};
use crate::flow::HeatSemigroup;
use crate::linalg;
use crate::models;
use crate::space::{DiscreteSpace, L2Function, RawSpace};
use crate::spectrum::{self, MinMaxOptions, SubspaceFamily};
use crate::transport::{self, check_l2_convergence, ConvergenceMode, ConvergenceReport, TransportMap};

/// Number of trailing indices the trend and tail checks look at.
pub const TAIL: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FamilyKind {
    Refining,
    Collapsing,
    MeasurePerturbed,
}

#[derive(Clone, Debug)]
pub struct FamilyMember {
    pub label: String,
    pub energy: EnergyForm,
}

impl FamilyMember {
    pub fn new(label: impl Into<String>, energy: EnergyForm) -> Self {
        Self { label: label.into(), energy }
    }

    pub fn space(&self) -> &Arc<DiscreteSpace> {
        self.energy.space()
    }
}

/// Spaces `X_i` with energies `Ch^i` and a limit pair, all in one ambient space.
#[derive(Clone, Debug)]
pub struct ConvergingFamily {
    pub name: String,
    pub kind: FamilyKind,
    pub members: Vec<FamilyMember>,
    pub limit: FamilyMember,
}

/// Both transport maps between one member and the limit.
#[derive(Clone, Debug)]
pub struct Coupling {
    /// Refined member → limit; `pi.transfer` carries limit functions to the member.
    pub pi: TransportMap,
    /// Refined limit → member; `sigma.transfer` carries member functions to the limit.
    pub sigma: TransportMap,
    pub w2: f64,
}

impl ConvergingFamily {
    pub fn new(name: impl Into<String>, kind: FamilyKind, members: Vec<FamilyMember>, limit: FamilyMember) -> Result<Self> {
        if members.is_empty() {
            return Err(Error::EmptySet);
        }
        let dim = limit.space().ambient_dim();
        for m in &members {
            if m.space().ambient_dim() != dim {
                return Err(Error::DimensionMismatch(m.space().ambient_dim(), dim));
            }
        }
        Ok(Self { name: name.into(), kind, members, limit })
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn labels(&self) -> Vec<String> {
        self.members.iter().map(|m| m.label.clone()).collect()
    }

    /// Cycles `C_n` (circumference 1) for each `n`, limit `C_limit`.
    pub fn refining_cycles(ns: &[usize], limit: usize) -> Result<Self> {
        let members = ns
            .iter()
            .map(|&n| Ok(FamilyMember::new(format!("C_{n}"), models::cycle(n, 1.0)?.quadratic())))
            .collect::<Result<_>>()?;
        let lim = FamilyMember::new(format!("C_{limit}"), models::cycle(limit, 1.0)?.quadratic());
        Self::new("refining-cycles", FamilyKind::Refining, members, lim)
    }

    /// Same sizes as [`Self::refining_cycles`], but every other member has
    /// circumference 1.5: the spaces never approach the limit.
    pub fn alternating_control(ns: &[usize], limit: usize) -> Result<Self> {
        let members = ns
            .iter()
            .enumerate()
            .map(|(i, &n)| {
                let c = if i % 2 == 0 { 1.0 } else { 1.5 };
                Ok(FamilyMember::new(format!("C_{n}(c={c})"), models::cycle(n, c)?.quadratic()))
            })
            .collect::<Result<_>>()?;
        let lim = FamilyMember::new(format!("C_{limit}"), models::cycle(limit, 1.0)?.quadratic());
        Self::new("alternating-control", FamilyKind::Refining, members, lim)
    }

    /// Thin tori `C_n × C_m(ε)` collapsing onto `C_n`, the limit padded to
    /// four ambient coordinates.
    pub fn thin_tori(n: usize, m: usize, eps: &[f64]) -> Result<Self> {
        let members = eps
            .iter()
            .map(|&e| Ok(FamilyMember::new(format!("T_{n}x{m}(eps={e})"), models::thin_torus(n, m, e)?.quadratic())))
            .collect::<Result<_>>()?;
        let base = models::cycle(n, 1.0)?;
        let padded = Arc::new(base.space.with_ambient_dim(4)?);
        let lim = FamilyMember::new(format!("C_{n}"), EnergyForm::quadratic(&padded, base.edges)?);
        Self::new("thin-tori", FamilyKind::Collapsing, members, lim)
    }

    /// Cycles `C_n` of shrinking circumference, limit a single point.
    pub fn shrinking_cycles(n: usize, circumferences: &[f64]) -> Result<Self> {
        let members = circumferences
            .iter()
            .map(|&c| Ok(FamilyMember::new(format!("C_{n}(c={c})"), models::cycle(n, c)?.quadratic())))
            .collect::<Result<_>>()?;
        let lim = FamilyMember::new("point", models::point(2).quadratic());
        Self::new("shrinking-cycles", FamilyKind::Collapsing, members, lim)
    }

    /// `C_n` with the uniform measure perturbed by `amplitude · ξ` for a fixed
    /// seeded profile `ξ ∈ [-1, 1]^n`, limit the uniform `C_n`.
    pub fn measure_perturbed_cycles(n: usize, amplitudes: &[f64], seed: u64) -> Result<Self> {
        let base = models::cycle(n, 1.0)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let xi: Vec<f64> = (0..n).map(|_| rand::Rng::random_range(&mut rng, -1.0..=1.0)).collect();
        let members = amplitudes
            .iter()
            .map(|&a| {
                if !(0.0..1.0).contains(&a) {
                    return Err(Error::InvalidParameter(format!("perturbation amplitude {a}")));
                }
                let raw = base.space.to_raw();
                let mut measure: Vec<f64> = raw.measure.iter().zip(&xi).map(|(w, x)| w * (1.0 + a * x)).collect();
                let total: f64 = measure.iter().sum();
                measure.iter_mut().for_each(|w| *w /= total);
                let s = Arc::new(DiscreteSpace::validate(RawSpace { measure, ..raw })?);
                Ok(FamilyMember::new(format!("C_{n}(a={a})"), EnergyForm::quadratic(&s, base.edges.clone())?))
            })
            .collect::<Result<_>>()?;
        let lim = FamilyMember::new(format!("C_{n}"), base.quadratic());
        Self::new("measure-perturbed-cycles", FamilyKind::MeasurePerturbed, members, lim)
    }

    /// Unit cycles with the `q = ∞` energy.
    pub fn refining_cycles_linf(ns: &[usize], limit: usize) -> Result<Self> {
        let members = ns
            .iter()
            .map(|&n| Ok(FamilyMember::new(format!("C_{n}"), models::cycle(n, 1.0)?.lq(Exponent::Infinity))))
            .collect::<Result<_>>()?;
        let lim = FamilyMember::new(format!("C_{limit}"), models::cycle(limit, 1.0)?.lq(Exponent::Infinity));
        Self::new("refining-cycles-linf", FamilyKind::Refining, members, lim)
    }

    /// Optimal couplings of every member with the limit, in index order.
    pub fn couplings(&self) -> Result<Vec<Coupling>> {
        self.members
            .par_iter()
            .map(|m| {
                let plan = transport::solve_ot(m.space(), self.limit.space())?;
                let w2 = plan.cost.max(0.0).sqrt();
                Ok(Coupling { sigma: transport::plan_to_map(&plan.transposed()), pi: transport::plan_to_map(&plan), w2 })
            })
            .collect()
    }
}

fn nonincreasing(xs: &[f64], tol: f64) -> bool {
    xs.windows(2).all(|w| w[1] <= w[0] + tol)
}

fn tail<T>(xs: &[T]) -> &[T] {
    &xs[xs.len().saturating_sub(TAIL)..]
}

#[derive(Clone, Debug)]
pub struct MoscoReport {
    pub t: f64,
    /// `Ch(f)`.
    pub limit_energy: f64,
    /// `Ch(h_t f)`.
    pub limit_heat_energy: f64,
    /// `Ch^i(h_t^i π_i f)`.
    pub recovery_energies: Vec<f64>,
    /// `Ch^i(π_i f)`, the unsmoothed liminf proxy.
    pub plain_energies: Vec<f64>,
    /// `|Ch^i(f_i) - Ch(h_t f)| / (1 + Ch(h_t f))`.
    pub energy_gaps: Vec<f64>,
    pub gaps_decreasing: bool,
    /// `f_i → h_t f` strongly.
    pub convergence: ConvergenceReport,
    /// Tail `Ch^i(f_i) <= 1.05 Ch(f)`.
    pub upper_ok: bool,
    /// Tail `Ch^i(π_i f) >= 0.95 Ch(f)`.
    pub lower_ok: bool,
}

impl MoscoReport {
    pub fn verdict(&self) -> bool {
        self.upper_ok && self.lower_ok && self.convergence.verdict()
    }
}

/// Recovery sequence `f_i = h_t^i(π_i f)` for a limit function `f`.
pub fn mosco_recovery_check(family: &ConvergingFamily, f: &L2Function, t: f64) -> Result<MoscoReport> {
    if !(t > 0.0 && t.is_finite()) {
        return Err(Error::InvalidParameter(format!("regularization time {t}")));
    }
    if !crate::space::same_space(f.space(), family.limit.space()) {
        return Err(Error::SpaceMismatch);
    }
    let limit_energy = family.limit.energy.energy(f)?;
    let hf = HeatSemigroup::new(&family.limit.energy)?.apply(f, t)?;
    let limit_heat_energy = family.limit.energy.energy(&hf)?;
    let couplings = family.couplings()?;
    let per: Vec<(L2Function, f64, f64)> = family
        .members
        .par_iter()
        .zip(&couplings)
        .map(|(m, c)| {
            let plain = c.pi.transfer(f)?;
            let fi = HeatSemigroup::new(&m.energy)?.apply(&plain, t)?;
            let e = m.energy.energy(&fi)?;
            Ok((fi, e, m.energy.energy(&plain)?))
        })
        .collect::<Result<_>>()?;
    let recovery_energies: Vec<f64> = per.iter().map(|p| p.1).collect();
    let plain_energies: Vec<f64> = per.iter().map(|p| p.2).collect();
    let fis: Vec<L2Function> = per.into_iter().map(|p| p.0).collect();
    let convergence = check_l2_convergence(&fis, &hf, ConvergenceMode::Strong)?;
    let energy_gaps: Vec<f64> =
        recovery_energies.iter().map(|e| (e - limit_heat_energy).abs() / (1.0 + limit_heat_energy)).collect();
    let slack = 1e-12 * (1.0 + limit_energy);
    Ok(MoscoReport {
        t,
        limit_energy,
        limit_heat_energy,
        gaps_decreasing: nonincreasing(tail(&energy_gaps), 1e-12),
        upper_ok: tail(&recovery_energies).iter().all(|&e| e <= 1.05 * limit_energy + slack),
        lower_ok: tail(&plain_energies).iter().all(|&e| e >= 0.95 * limit_energy - slack),
        recovery_energies,
        plain_energies,
        energy_gaps,
        convergence,
    })
}

/// A finite net on the unit sphere of a subspace.
#[derive(Clone, Debug)]
pub struct SphereNet {
    pub points: Vec<L2Function>,
    pub resolution: String,
}

/// Angular net: `±b` for `k = 1`, a full circle at `step_deg` for `k = 2`, a
/// latitude/longitude grid for `k = 3`; beyond that `200 k` seeded Gaussian
/// directions.
pub fn sphere_net(family: &SubspaceFamily, step_deg: f64, seed: u64) -> Result<SphereNet> {
    if !(step_deg > 0.0 && step_deg <= 90.0) {
        return Err(Error::InvalidParameter(format!("net step {step_deg} degrees")));
    }
    let k = family.dim();
    let mut coeffs: Vec<Vec<f64>> = Vec::new();
    let resolution = match k {
        1 => {
            coeffs.push(vec![1.0]);
            coeffs.push(vec![-1.0]);
            "two points".to_string()
        }
        2 => {
            let n = (360.0 / step_deg).ceil() as usize;
            for j in 0..n {
                let a = (j as f64 * 360.0 / n as f64).to_radians();
                coeffs.push(vec![a.cos(), a.sin()]);
            }
            format!("circle, {n} points, {:.3} deg", 360.0 / n as f64)
        }
        3 => {
            let nl = (180.0 / step_deg).ceil() as usize;
            for i in 0..=nl {
                let th = (i as f64 * 180.0 / nl as f64).to_radians();
                let ring = ((360.0 / step_deg) * th.sin()).ceil().max(1.0) as usize;
                for j in 0..ring {
                    let ph = (j as f64 * 360.0 / ring as f64).to_radians();
                    coeffs.push(vec![th.sin() * ph.cos(), th.sin() * ph.sin(), th.cos()]);
                }
            }
            format!("sphere grid, {} points, {step_deg} deg", coeffs.len())
        }
        _ => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for _ in 0..200 * k {
                let c: Vec<f64> = (0..k).map(|_| StandardNormal.sample(&mut rng)).collect();
                let n = c.iter().map(|x| x * x).sum::<f64>().sqrt();
                coeffs.push(c.iter().map(|x| x / n).collect());
            }
            format!("random, {} points, seed {seed}", coeffs.len())
        }
    };
    Ok(SphereNet { points: coeffs.iter().map(|c| family.combine(c)).collect(), resolution })
}

#[derive(Clone, Debug)]
pub struct TransferIndex {
    pub index: usize,
    pub label: String,
    /// Smallest `|h_t^i π_i v|` over the net.
    pub min_norm: f64,
    /// Largest `Ch^i` over the normalized transferred net.
    pub max_energy: f64,
    pub admissible: bool,
    pub transferred: Vec<L2Function>,
}

#[derive(Clone, Debug)]
pub struct TransferReport {
    pub t: f64,
    pub eps: f64,
    pub net_resolution: String,
    /// `sup Ch` over the whole sphere `S(L)`.
    pub limit_sup: f64,
    pub indices: Vec<TransferIndex>,
}

impl TransferReport {
    /// Smallest `i_0` from which every index is admissible.
    pub fn first_admissible(&self) -> Option<usize> {
        let bad = self.indices.iter().rposition(|x| !x.admissible);
        match bad {
            None => Some(0),
            Some(b) if b + 1 < self.indices.len() => Some(b + 1),
            Some(_) => None,
        }
    }

    /// `NormCollapse` for the first inadmissible index.
    pub fn require_admissible(&self) -> Result<()> {
        match self.indices.iter().find(|x| !x.admissible) {
            None => Ok(()),
            Some(x) => Err(Error::NormCollapse { index: x.index, norm: x.min_norm, threshold: 1.0 - self.eps }),
        }
    }

    /// `max Ch^i <= (1 - eps)^{-1} sup Ch(V) (1 + 0.02)` on admissible indices.
    pub fn energy_decay_ok(&self) -> bool {
        let bound = self.limit_sup / (1.0 - self.eps) * 1.02 + 1e-12;
        self.indices.iter().filter(|x| x.admissible).all(|x| x.max_energy <= bound)
    }
}

/// Net on `S(L)` mapped through `h_t^i ∘ π_i` and renormalized. Indices where
/// some image has norm `<= 1 - eps` are marked inadmissible; the call fails
/// with `NormCollapse` only when no tail of admissible indices exists.
pub fn transfer_family(
    family: &ConvergingFamily,
    v: &SubspaceFamily,
    t: f64,
    eps: f64,
    step_deg: f64,
) -> Result<TransferReport> {
    if !(t > 0.0 && t.is_finite()) {
        return Err(Error::InvalidParameter(format!("regularization time {t}")));
    }
    if !(eps > 0.0 && eps < 0.5) {
        return Err(Error::InvalidParameter(format!("eps {eps} outside (0, 1/2)")));
    }
    if !crate::space::same_space(v.space(), family.limit.space()) {
        return Err(Error::SpaceMismatch);
    }
    let net = sphere_net(v, step_deg, 0x5eed)?;
    let limit_sup = spectrum::rayleigh_sup_on_sphere(&family.limit.energy, v)?.value;
    let couplings = family.couplings()?;
    let indices: Vec<TransferIndex> = family
        .members
        .par_iter()
        .zip(&couplings)
        .enumerate()
        .map(|(index, (m, c))| {
            let heat = HeatSemigroup::new(&m.energy)?;
            let mut min_norm = f64::INFINITY;
            let mut max_energy: f64 = 0.0;
            let mut transferred = Vec::with_capacity(net.points.len());
            for p in &net.points {
                let w = heat.apply(&c.pi.transfer(p)?, t)?;
                let n = w.norm();
                min_norm = min_norm.min(n);
                if n > 0.0 {
                    let u = w.scaled(1.0 / n);
                    max_energy = max_energy.max(m.energy.energy(&u)?);
                    transferred.push(u);
                }
            }
            Ok(TransferIndex {
                index,
                label: m.label.clone(),
                min_norm,
                max_energy,
                admissible: min_norm > 1.0 - eps,
                transferred,
            })
        })
        .collect::<Result<_>>()?;
    let report = TransferReport { t, eps, net_resolution: net.resolution, limit_sup, indices };
    if report.first_admissible().is_none() {
        report.require_admissible()?;
    }
    Ok(report)
}

#[derive(Clone, Debug)]
pub struct AccumulationReport {
    /// `σ_i(V_i)` on the limit space.
    pub pushed: Vec<Vec<L2Function>>,
    /// Hausdorff distance of every pushed set to the accumulation set.
    pub gaps: Vec<f64>,
    /// Indices picked by the chaining, the `k`-th within `1/k` of the accumulation set.
    pub subsequence: Vec<usize>,
    pub accumulation: Vec<L2Function>,
    /// `max_i max Ch^i` over the input sets.
    pub energy_sup: f64,
}

/// Pushes unit-sphere sets `V_i ⊂ L^2(m_i)` to the limit through `σ_i` and
/// extracts a Hausdorff-convergent subsequence by chaining with `ε_k = 1/k`
/// towards the pushed set of the finest index, which serves as accumulation set.
pub fn accumulate_families(family: &ConvergingFamily, sets: &[Vec<L2Function>], energy_cap: f64) -> Result<AccumulationReport> {
    if sets.len() != family.len() {
        return Err(Error::DimensionMismatch(sets.len(), family.len()));
    }
    let mut energy_sup: f64 = 0.0;
    for (m, set) in family.members.iter().zip(sets) {
        if set.is_empty() {
            return Err(Error::EmptySet);
        }
        for f in set {
            if !crate::space::same_space(f.space(), m.space()) {
                return Err(Error::SpaceMismatch);
            }
            if (f.norm() - 1.0).abs() > 1e-8 {
                return Err(Error::OutsideDomain(format!("set member of {} has norm {}", m.label, f.norm())));
            }
            energy_sup = energy_sup.max(m.energy.energy(f)?);
        }
    }
    if !(energy_sup <= energy_cap) {
        return Err(Error::Unbounded(format!("energy {energy_sup} above cap {energy_cap}")));
    }
    let couplings = family.couplings()?;
    let pushed: Vec<Vec<L2Function>> = sets
        .par_iter()
        .zip(&couplings)
        .map(|(set, c)| set.iter().map(|f| c.sigma.transfer(f)).collect::<Result<Vec<_>>>())
        .collect::<Result<_>>()?;
    let accumulation = pushed.last().expect("family is nonempty").clone();
    let gaps: Vec<f64> =
        pushed.par_iter().map(|p| transport::hausdorff_distance(p, &accumulation)).collect::<Result<_>>()?;
    let mut subsequence = Vec::new();
    for (i, g) in gaps.iter().enumerate() {
        if *g <= 1.0 / (subsequence.len() + 1) as f64 {
            subsequence.push(i);
        }
    }
    Ok(AccumulationReport { pushed, gaps, subsequence, accumulation, energy_sup })
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct Thresholds {
    /// Final gap allowed, relative to `1 + Λ_k`.
    pub rel_gap: f64,
    /// Absolute slack on the trend comparison.
    pub trend_slack: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self { rel_gap: 0.05, trend_slack: 1e-9 }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct KSeries {
    pub k: usize,
    pub sequence: Vec<f64>,
    pub limit: f64,
    /// `|Λ_k^i - Λ_k| / (1 + Λ_k)`; `inf` when exactly one side is infinite.
    pub gaps: Vec<f64>,
    /// Tail max of `(Λ_k^i - Λ_k)^+ / (1 + Λ_k)`.
    pub upper_gap: f64,
    /// Tail max of `(Λ_k - Λ_k^i)^+ / (1 + Λ_k)`.
    pub lower_gap: f64,
    pub final_ok: bool,
    pub decreasing: bool,
    /// Only for an infinite limit: the tail grows (or is infinite throughout).
    pub diverging: Option<bool>,
    /// Successive differences of `(Λ_k^i)_i` followed by `Λ_k` shrink.
    pub cauchy_like: bool,
    pub verdict: bool,
}

fn rel_gap(x: f64, lim: f64, signed: Option<f64>) -> f64 {
    match (x.is_infinite(), lim.is_infinite()) {
        (true, true) => 0.0,
        (false, false) => {
            let d = signed.map_or((x - lim).abs(), |s| (s * (x - lim)).max(0.0));
            d / (1.0 + lim.abs())
        }
        _ => f64::INFINITY,
    }
}

impl KSeries {
    /// With `trend_only` (no trustworthy limit value, e.g. nonlinear
    /// energies) the verdict is the Cauchy-like trend.
    fn build(k: usize, sequence: Vec<f64>, limit: f64, th: Thresholds, trend_only: bool) -> Self {
        let gaps: Vec<f64> = sequence.iter().map(|&x| rel_gap(x, limit, None)).collect();
        let upper_gap = tail(&sequence).iter().map(|&x| rel_gap(x, limit, Some(1.0))).fold(0.0, f64::max);
        let lower_gap = tail(&sequence).iter().map(|&x| rel_gap(x, limit, Some(-1.0))).fold(0.0, f64::max);
        let final_ok = gaps.last().is_some_and(|&g| g <= th.rel_gap);
        let decreasing = nonincreasing(tail(&gaps), th.trend_slack);
        let mut chain = sequence.clone();
        chain.push(limit);
        let diffs: Vec<f64> = chain.windows(2).map(|w| if w[0] == w[1] { 0.0 } else { (w[1] - w[0]).abs() }).collect();
        let cauchy_like = nonincreasing(&diffs, th.trend_slack * (1.0 + limit.abs()));
        let (diverging, verdict) = if limit.is_infinite() {
            let s = tail(&sequence);
            let grows = s.iter().all(|x| x.is_infinite())
                || (s.windows(2).all(|w| w[1] >= w[0]) && s.last() > s.first());
            (Some(grows), grows)
        } else if trend_only {
            (None, cauchy_like)
        } else {
            (None, final_ok && decreasing)
        };
        Self { k, sequence, limit, gaps, upper_gap, lower_gap, final_ok, decreasing, diverging, cauchy_like, verdict }
    }
}

#[derive(Clone, Debug)]
pub struct ContinuityReport {
    pub family: String,
    pub kind: FamilyKind,
    /// What the sequences are: member spectra or transferred subspaces.
    pub direction: String,
    pub labels: Vec<String>,
    pub k_max: usize,
    pub budget: usize,
    pub w2: Vec<f64>,
    pub w2_nonincreasing: bool,
    pub series: Vec<KSeries>,
    pub annotations: Vec<String>,
    pub thresholds: Thresholds,
    pub verdict: bool,
}

impl ContinuityReport {
    pub fn series(&self, k: usize) -> Option<&KSeries> {
        self.series.iter().find(|s| s.k == k)
    }

    /// Columns `i, k, lambda_i_k, lambda_limit_k, gap`.
    pub fn write_csv(&self, mut out: impl Write) -> Result<()> {
        writeln!(out, "i,k,lambda_i_k,lambda_limit_k,gap")?;
        for (i, _) in self.labels.iter().enumerate() {
            for s in &self.series {
                writeln!(
                    out,
                    "{i},{},{},{},{}",
                    s.k,
                    spectrum::fmt_value(s.sequence[i]),
                    spectrum::fmt_value(s.limit),
                    spectrum::fmt_value(s.gaps[i])
                )?;
            }
        }
        Ok(())
    }

    pub fn summary(&self) -> serde_json::Value {
        let num = |x: f64| if x.is_finite() { json!(x) } else { json!(spectrum::fmt_value(x)) };
        json!({
            "family": self.family,
            "kind": self.kind,
            "direction": self.direction,
            "members": self.labels,
            "k_max": self.k_max,
            "budget": self.budget,
            "w2": self.w2,
            "w2_nonincreasing": self.w2_nonincreasing,
            "thresholds": self.thresholds,
            "annotations": self.annotations,
            "series": self.series.iter().map(|s| json!({
                "k": s.k,
                "limit": num(s.limit),
                "final_gap": s.gaps.last().map(|&g| num(g)),
                "upper_gap": num(s.upper_gap),
                "lower_gap": num(s.lower_gap),
                "final_ok": s.final_ok,
                "decreasing": s.decreasing,
                "diverging": s.diverging,
                "cauchy_like": s.cauchy_like,
                "verdict": s.verdict,
            })).collect::<Vec<_>>(),
            "verdict": self.verdict,
        })
    }
}

fn minmax_values(energy: &EnergyForm, k_max: usize, opts: MinMaxOptions) -> Result<Vec<spectrum::MinMax>> {
    (1..=k_max).map(|k| spectrum::minmax_with(energy, k, opts)).collect()
}

/// `Λ_k(Ch^i)` against `Λ_k(Ch)` for `k <= k_max`.
pub fn spectral_continuity_experiment(family: &ConvergingFamily, k_max: usize, budget: usize) -> Result<ContinuityReport> {
    spectral_continuity_with(family, k_max, MinMaxOptions { budget, ..MinMaxOptions::default() }, Thresholds::default())
}

pub fn spectral_continuity_with(
    family: &ConvergingFamily,
    k_max: usize,
    opts: MinMaxOptions,
    th: Thresholds,
) -> Result<ContinuityReport> {
    if k_max == 0 {
        return Err(Error::InvalidK { k: 0, dim: family.limit.space().len() });
    }
    let w2: Vec<f64> = family.couplings()?.iter().map(|c| c.w2).collect();
    let limit: Vec<f64> = minmax_values(&family.limit.energy, k_max, opts)?.iter().map(|m| m.value).collect();
    let rows: Vec<Vec<f64>> = family
        .members
        .par_iter()
        .map(|m| Ok(minmax_values(&m.energy, k_max, opts)?.iter().map(|x| x.value).collect()))
        .collect::<Result<_>>()?;
    let trend_only = !family.limit.energy.is_quadratic();
    let series: Vec<KSeries> = (0..k_max)
        .map(|j| KSeries::build(j + 1, rows.iter().map(|r| r[j]).collect(), limit[j], th, trend_only))
        .collect();
    let annotations = if family.kind == FamilyKind::Collapsing { collapse_annotations(family, &limit)? } else { vec![] };
    Ok(ContinuityReport {
        family: family.name.clone(),
        kind: family.kind,
        direction: "member spectra".into(),
        labels: family.labels(),
        k_max,
        budget: opts.budget,
        w2_nonincreasing: nonincreasing(&w2, 1e-12),
        w2,
        verdict: series.iter().all(|s| s.verdict),
        series,
        annotations,
        thresholds: th,
    })
}

/// For quadratic members: how many eigenvalues fall into the window
/// `[0, 1.5 max_k Λ_k(Ch)]` compared with the limit, and the first one beyond it.
fn collapse_annotations(family: &ConvergingFamily, limit: &[f64]) -> Result<Vec<String>> {
    let top = limit.iter().copied().filter(|x| x.is_finite()).fold(0.0, f64::max);
    let window = 1.5 * top.max(1.0);
    let count = |e: &EnergyForm| -> Result<Option<(usize, f64)>> {
        if !e.is_quadratic() {
            return Ok(None);
        }
        let vals = spectrum::quadratic_oracle(e)?.values;
        let inside = vals.iter().filter(|&&v| v <= window).count();
        Ok(Some((inside, vals.get(inside).copied().unwrap_or(f64::INFINITY))))
    };
    let mut out = Vec::new();
    if let Some((n, _)) = count(&family.limit.energy)? {
        out.push(format!("window [0, {window:.3}]: limit has {n} eigenvalues"));
    }
    for m in &family.members {
        if let Some((n, next)) = count(&m.energy)? {
            out.push(format!("{}: {n} eigenvalues in window, next {}", m.label, spectrum::fmt_value(next)));
        }
    }
    Ok(out)
}

/// The reverse direction: optimal `k`-dimensional subspaces of every member
/// are carried to the limit by `h_t ∘ σ_i`, and `sup Ch` over their spheres
/// (an upper bound for `Λ_k(Ch)`) is compared with `Λ_k(Ch)`. A member
/// index passes only if in addition `(Λ_k(Ch) - Λ_k(Ch^i))^+` stays within the
/// relative threshold on the tail.
pub fn reverse_roles_experiment(family: &ConvergingFamily, k_max: usize, t: f64, budget: usize) -> Result<ContinuityReport> {
    reverse_roles_with(family, k_max, t, MinMaxOptions { budget, ..MinMaxOptions::default() }, Thresholds::default())
}

pub fn reverse_roles_with(
    family: &ConvergingFamily,
    k_max: usize,
    t: f64,
    opts: MinMaxOptions,
    th: Thresholds,
) -> Result<ContinuityReport> {
    if k_max == 0 {
        return Err(Error::InvalidK { k: 0, dim: family.limit.space().len() });
    }
    if !(t > 0.0 && t.is_finite()) {
        return Err(Error::InvalidParameter(format!("regularization time {t}")));
    }
    let couplings = family.couplings()?;
    let w2: Vec<f64> = couplings.iter().map(|c| c.w2).collect();
    let lim_energy = &family.limit.energy;
    let limit: Vec<f64> = minmax_values(lim_energy, k_max, opts)?.iter().map(|m| m.value).collect();
    let heat = HeatSemigroup::new(lim_energy)?;
    let lim_space = family.limit.space();
    let trend_only = !lim_energy.is_quadratic();
    let rows: Vec<(Vec<f64>, Vec<f64>)> = family
        .members
        .par_iter()
        .zip(&couplings)
        .map(|(m, c)| {
            let mm = minmax_values(&m.energy, k_max, opts)?;
            let mut own = Vec::with_capacity(k_max);
            let mut moved = Vec::with_capacity(k_max);
            for x in &mm {
                own.push(x.value);
                let Some(fam) = &x.family else {
                    moved.push(f64::INFINITY);
                    continue;
                };
                let images: Vec<Vec<f64>> = fam
                    .basis()
                    .iter()
                    .map(|b| Ok(heat.apply(&c.sigma.transfer(&L2Function::new(m.space(), b.clone())?)?, t)?.into_values()))
                    .collect::<Result<_>>()?;
                let q = linalg::orthonormalize(&images, lim_space.measure(), 1e-8);
                if q.len() < images.len() {
                    // the transferred subspace lost dimension: no k-dimensional competitor
                    moved.push(f64::INFINITY);
                    continue;
                }
                let sub = SubspaceFamily::new(lim_space, q)?;
                moved.push(spectrum::rayleigh_sup_on_sphere(lim_energy, &sub)?.value);
            }
            Ok((own, moved))
        })
        .collect::<Result<_>>()?;
    let mut series = Vec::with_capacity(k_max);
    for j in 0..k_max {
        let mut s = KSeries::build(j + 1, rows.iter().map(|r| r.1[j]).collect(), limit[j], th, trend_only);
        let own = KSeries::build(j + 1, rows.iter().map(|r| r.0[j]).collect(), limit[j], th, trend_only);
        s.lower_gap = own.lower_gap;
        s.verdict &= limit[j].is_infinite() || trend_only || own.lower_gap <= th.rel_gap;
        series.push(s);
    }
    Ok(ContinuityReport {
        family: family.name.clone(),
        kind: family.kind,
        direction: format!("member subspaces transferred to the limit, t = {t}"),
        labels: family.labels(),
        k_max,
        budget: opts.budget,
        w2_nonincreasing: nonincreasing(&w2, 1e-12),
        w2,
        verdict: series.iter().all(|s| s.verdict),
        series,
        annotations: vec![],
        thresholds: th,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn cycles() -> ConvergingFamily {
        ConvergingFamily::refining_cycles(&[8, 16, 32, 64], 128).unwrap()
    }

    fn closed_form(n: usize, j: usize) -> f64 {
        let n = n as f64;
        2.0 * n * n * (1.0 - (2.0 * PI * j as f64 / n).cos())
    }

    fn limit_mode(family: &ConvergingFamily) -> L2Function {
        let s = family.limit.space();
        let n = s.len() as f64;
        L2Function::from_fn(s, |i| 2f64.sqrt() * (2.0 * PI * i as f64 / n).cos())
    }

    #[test]
    fn continuity_on_refining_cycles() {
        let fam = cycles();
        let r = spectral_continuity_experiment(&fam, 3, 4).unwrap();
        assert!(r.verdict, "{:?}", r.summary());
        let s2 = r.series(2).unwrap();
        for (x, n) in s2.sequence.iter().zip([8, 16, 32, 64]) {
            assert!((x - closed_form(n, 1)).abs() < 1e-6 * closed_form(n, 1));
        }
        assert!(r.w2_nonincreasing);
        let mut csv = Vec::new();
        r.write_csv(&mut csv).unwrap();
        let text = String::from_utf8(csv).unwrap();
        assert!(text.starts_with("i,k,lambda_i_k,lambda_limit_k,gap\n"));
        assert_eq!(text.lines().count(), 1 + 4 * 3);
    }

    #[test]
    fn control_fails_both_ways() {
        let fam = ConvergingFamily::alternating_control(&[8, 16, 32, 64], 128).unwrap();
        assert!(!spectral_continuity_experiment(&fam, 2, 4).unwrap().verdict);
        assert!(!reverse_roles_experiment(&fam, 2, 1e-3, 4).unwrap().verdict);
    }

    #[test]
    fn reverse_roles_on_refining_cycles() {
        let r = reverse_roles_experiment(&cycles(), 3, 1e-3, 4).unwrap();
        assert!(r.verdict, "{:?}", r.summary());
        // transferred subspaces compete in the limit min-max
        for s in &r.series {
            for x in &s.sequence {
                assert!(*x >= s.limit - 1e-8 * (1.0 + s.limit));
            }
        }
    }

    #[test]
    fn single_point_limit_diverges() {
        let fam = ConvergingFamily::shrinking_cycles(8, &[1.0, 0.5, 0.25, 0.125]).unwrap();
        let r = spectral_continuity_experiment(&fam, 2, 4).unwrap();
        let s2 = r.series(2).unwrap();
        assert!(s2.limit.is_infinite());
        assert_eq!(s2.diverging, Some(true));
        assert!(r.verdict);
    }

    #[test]
    fn thin_tori_collapse() {
        let fam = ConvergingFamily::thin_tori(16, 8, &[0.4, 0.2, 0.1, 0.05]).unwrap();
        let r = spectral_continuity_experiment(&fam, 4, 4).unwrap();
        assert!(r.verdict);
        assert!((r.series(2).unwrap().limit - closed_form(16, 1)).abs() < 1e-6);
        assert_eq!(r.annotations.len(), 5);
    }

    #[test]
    fn mosco_constant_and_mode() {
        let fam = cycles();
        let one = L2Function::constant(fam.limit.space(), 1.0);
        let r = mosco_recovery_check(&fam, &one, 0.01).unwrap();
        assert!(r.recovery_energies.iter().all(|e| e.abs() < 1e-9));
        assert!(r.verdict());
        let r = mosco_recovery_check(&fam, &limit_mode(&fam), 0.01).unwrap();
        assert!(r.verdict(), "{r:?}");
        assert!(r.gaps_decreasing);
        assert!(r.energy_gaps.last().unwrap() <= &0.05);
    }

    #[test]
    fn transfer_keeps_energy_and_norm() {
        let fam = cycles();
        let s = fam.limit.space();
        let v = SubspaceFamily::spanned_by(s, &[vec![1.0; s.len()], limit_mode(&fam).into_values()]).unwrap();
        let r = transfer_family(&fam, &v, 1e-3, 0.25, 10.0).unwrap();
        assert_eq!(r.first_admissible(), Some(0));
        assert!(r.energy_decay_ok());
        for x in tail(&r.indices) {
            assert!(x.max_energy <= r.limit_sup * 1.05);
        }
    }

    #[test]
    fn coarse_transfer_collapses() {
        let fam = ConvergingFamily::refining_cycles(&[4, 8, 64], 128).unwrap();
        let s = fam.limit.space();
        let n = s.len() as f64;
        // period 16 points on C_128: averages out on C_4 and C_8
        let f = L2Function::from_fn(s, |i| 2f64.sqrt() * (2.0 * PI * 8.0 * i as f64 / n).cos());
        let v = SubspaceFamily::new(s, vec![f.into_values()]).unwrap();
        let r = transfer_family(&fam, &v, 1e-5, 0.4, 10.0).unwrap();
        assert!(!r.indices[0].admissible);
        assert!(r.indices[2].admissible);
        assert_eq!(r.first_admissible(), Some(2));
        assert!(matches!(r.require_admissible(), Err(Error::NormCollapse { index: 0, .. })));
    }

    #[test]
    fn accumulation_of_eigen_circles() {
        let fam = cycles();
        let circle = |s: &Arc<DiscreteSpace>| -> Vec<L2Function> {
            let n = s.len() as f64;
            (0..36)
                .map(|a| {
                    let th = a as f64 * PI / 18.0;
                    L2Function::from_fn(s, |i| 2f64.sqrt() * (2.0 * PI * i as f64 / n + th).cos())
                })
                .collect()
        };
        let sets: Vec<Vec<L2Function>> = fam.members.iter().map(|m| circle(m.space())).collect();
        let r = accumulate_families(&fam, &sets, 100.0).unwrap();
        let target = circle(fam.limit.space());
        assert!(transport::hausdorff_distance(&r.accumulation, &target).unwrap() < 0.1);
        assert!(!r.subsequence.is_empty());
        assert!(matches!(accumulate_families(&fam, &sets, 1.0), Err(Error::Unbounded(_))));
        let mut shrunk = sets.clone();
        shrunk[0][0] = shrunk[0][0].scaled(0.5);
        assert!(matches!(accumulate_families(&fam, &shrunk, 100.0), Err(Error::OutsideDomain(_))));
    }

    #[test]
    fn constant_family_accumulates_to_itself() {
        let c = models::cycle(12, 1.0).unwrap().quadratic();
        let fam = ConvergingFamily::new(
            "same",
            FamilyKind::Refining,
            vec![FamilyMember::new("a", c.clone()), FamilyMember::new("b", c.clone())],
            FamilyMember::new("lim", c.clone()),
        )
        .unwrap();
        let s = c.space();
        let v = vec![L2Function::from_fn(s, |i| if i % 2 == 0 { 1.0 } else { -1.0 })];
        let r = accumulate_families(&fam, &[v.clone(), v.clone()], 1e6).unwrap();
        assert!(r.gaps.iter().all(|g| *g < 1e-12));
        assert!(r.accumulation[0].dist(&v[0]).unwrap() < 1e-12);
    }

    #[test]
    fn perturbed_measures_converge() {
        let fam = ConvergingFamily::measure_perturbed_cycles(24, &[0.4, 0.2, 0.1, 0.05, 0.025], 3).unwrap();
        let r = spectral_continuity_experiment(&fam, 3, 4).unwrap();
        assert!(r.verdict, "{:?}", r.summary());
    }

    #[test]
    fn linf_cycles_are_cauchy_like() {
        let fam = ConvergingFamily::refining_cycles_linf(&[16, 32], 64).unwrap();
        let r = spectral_continuity_experiment(&fam, 2, 8).unwrap();
        let s2 = r.series(2).unwrap();
        assert!(s2.cauchy_like, "{:?} {}", s2.sequence, s2.limit);
        assert!(r.verdict);
    }

}
