//! Acceptance suite. Runs every criterion, prints one line each and fails
//! the target if any criterion fails.

use std::f64::consts::PI;
use std::panic::{self, AssertUnwindSafe};
use std::process::Command;
use std::sync::Arc;
use std::time::Instant;

use mmspec::energy::{Edge, EnergyForm, Exponent};
use mmspec::flow::{
    self, check_contractivity, check_energy_identity, check_regularization_with, DirichletFunctional, HeatFlowOptions,
};
use mmspec::lab::{self, ConvergingFamily};
use mmspec::models;
use mmspec::space::{make_path, DiscreteSpace, L2Function, RawSpace};
use mmspec::spectrum::{minmax_upper_bound, quadratic_oracle};
use mmspec::sphere::{self, build_phi, critical_set_probe, find_eigenpair, random_start};
use mmspec::transport::{self, apply_isometry, check_l2_convergence, ConvergenceMode, Isometry};
use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn random_space(n: usize, rng: &mut ChaCha8Rng) -> Arc<DiscreteSpace> {
    let raw: Vec<f64> = (0..n).map(|_| rng.random_range(0.2..1.0)).collect();
    let total: f64 = raw.iter().sum();
    let space = DiscreteSpace::validate(RawSpace {
        ids: (0..n).map(|i| format!("x{i}")).collect(),
        coords: (0..n).map(|i| vec![i as f64 / n as f64, rng.random_range(0.0..0.1)]).collect(),
        dist: None,
        measure: raw.iter().map(|w| w / total).collect(),
    })
    .unwrap();
    Arc::new(space)
}

/// Random spanning tree plus a few chords.
fn random_edges(n: usize, rng: &mut ChaCha8Rng) -> Vec<Edge> {
    let mut edges: Vec<Edge> = (1..n).map(|i| Edge::new(rng.random_range(0..i), i, rng.random_range(0.5..2.0))).collect();
    for _ in 0..n / 2 {
        let (a, b) = (rng.random_range(0..n), rng.random_range(0..n));
        if a != b {
            edges.push(Edge::new(a, b, rng.random_range(0.5..2.0)));
        }
    }
    edges
}

/// Eigenvalues of `A u = λ M u` through the symmetric form `M^-1/2 A M^-1/2`.
fn dense_spectrum(n: usize, edges: &[Edge], m: &[f64]) -> Vec<f64> {
    let mut a = DMatrix::<f64>::zeros(n, n);
    for e in edges {
        a[(e.a, e.a)] += e.weight;
        a[(e.b, e.b)] += e.weight;
        a[(e.a, e.b)] -= e.weight;
        a[(e.b, e.a)] -= e.weight;
    }
    let s = DMatrix::from_fn(n, n, |i, j| a[(i, j)] / (m[i] * m[j]).sqrt());
    let mut v: Vec<f64> = SymmetricEigen::new(s).eigenvalues.iter().copied().collect();
    v.sort_by(f64::total_cmp);
    v
}

fn random_unit(space: &Arc<DiscreteSpace>, rng: &mut ChaCha8Rng) -> L2Function {
    L2Function::from_fn(space, |_| rng.random_range(-1.0..1.0)).normalized().unwrap()
}

fn quadratic_oracle_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst: f64 = 0.0;
    for trial in 0..20 {
        let n = rng.random_range(4..=24);
        let space = random_space(n, &mut rng);
        let edges = random_edges(n, &mut rng);
        let energy = EnergyForm::quadratic(&space, edges.clone()).unwrap();
        ensure(energy.is_connected(), || format!("trial {trial} disconnected"))?;
        let oracle = quadratic_oracle(&energy).unwrap();
        let dense = dense_spectrum(n, &edges, space.measure());
        for k in 1..=6.min(n) {
            let mm = minmax_upper_bound(&energy, k, 4).unwrap().value;
            let rel = (mm - oracle.values[k - 1]).abs() / (1.0 + oracle.values[k - 1].abs());
            let rel_dense = (mm - dense[k - 1]).abs() / (1.0 + dense[k - 1].abs());
            worst = worst.max(rel).max(rel_dense);
            ensure(rel <= 1e-6 && rel_dense <= 1e-6, || {
                format!("trial {trial}, k = {k}: min-max {mm} vs oracle {} / dense {}", oracle.values[k - 1], dense[k - 1])
            })?;
        }
    }
    Ok(format!("20 energies, worst relative gap {worst:.1e}"))
}

fn ground_state() -> Outcome {
    let spaces: Vec<(&str, models::Model)> = vec![
        ("cycle", models::cycle(12, 1.0).unwrap()),
        ("path", models::path(9, 1.0).unwrap()),
        ("thin torus", models::thin_torus(8, 4, 0.2).unwrap()),
        ("product", models::product(&models::path(4, 1.0).unwrap(), &models::cycle(5, 1.0).unwrap())),
        ("two points", models::path(2, 1.0).unwrap()),
    ];
    for (name, m) in &spaces {
        for energy in [m.quadratic(), m.lq(Exponent::Infinity), m.lq(Exponent::Finite(3.0))] {
            let mm = minmax_upper_bound(&energy, 1, 4).unwrap();
            ensure(mm.value.abs() <= 1e-10, || format!("{name}: λ_1 = {}", mm.value))?;
            let one = L2Function::constant(&m.space, 1.0);
            ensure(energy.laplacian(&one).unwrap().norm() <= 1e-12, || format!("{name}: constants not harmonic"))?;
            let family = mm.family.unwrap();
            let basis = &family.basis()[0];
            let spread = basis.iter().fold(0.0f64, |a, x| a.max((x.abs() - 1.0).abs()));
            ensure(spread <= 1e-6, || format!("{name}: ground state not constant (spread {spread})"))?;
        }
    }
    let p = models::point(2);
    let e = p.quadratic();
    let vals: Vec<f64> = (1..=3).map(|k| minmax_upper_bound(&e, k, 2).unwrap().value).collect();
    ensure(vals[0] == 0.0 && vals[1].is_infinite() && vals[2].is_infinite(), || format!("point: {vals:?}"))?;
    Ok(format!("{} generated spaces, point gives {vals:?}", spaces.len()))
}

fn eigenpair_existence() -> Outcome {
    let c16 = models::cycle(16, 1.0).unwrap();
    let eq = c16.quadratic();
    let path = models::path(9, 1.0).unwrap();
    let einf = path.lq(Exponent::Infinity);
    let mut worst: f64 = 0.0;
    for (name, e, space) in [("C_16", &eq, &c16.space), ("q = inf path", &einf, &path.space)] {
        for seed in 0..32 {
            let u0 = random_start(space, seed, false, &[]);
            let p = find_eigenpair(e, &u0, 1e-8).map_err(|err| format!("{name} seed {seed}: {err}"))?;
            // residual recomputed from the returned function
            let u = L2Function::new(space, p.u.clone()).unwrap();
            let r = e.laplacian(&u).unwrap().axpy(-e.energy(&u).unwrap(), &u).unwrap().norm();
            worst = worst.max(r);
            ensure(r <= 1e-8, || format!("{name} seed {seed}: residual {r}"))?;
        }
    }
    let level = 2.0 * 256.0 * (1.0 - (2.0 * PI / 16.0).cos());
    let probe = critical_set_probe(&eq, level, 24, 1e-8, 5).unwrap();
    ensure(probe.count() >= 10, || format!("only {} distinct critical points at λ_2", probe.count()))?;
    for p in &probe.pairs {
        ensure((p.lambda - level).abs() <= 1e-6 * level, || format!("probe hit level {}", p.lambda))?;
    }
    Ok(format!("64 searches, worst residual {worst:.1e}; {} distinct points at λ_2 = λ_3", probe.count()))
}

fn gradient_flow_contract() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let mut worst_ratio: f64 = 0.0;
    for run in 0..50 {
        let n = rng.random_range(3..=7);
        let space = random_space(n, &mut rng);
        let edges = random_edges(n, &mut rng);
        let energy = if run % 2 == 0 {
            EnergyForm::quadratic(&space, edges).unwrap()
        } else {
            EnergyForm::lq(&space, Exponent::Infinity, &edges).unwrap()
        };
        let phi = DirichletFunctional::half(energy.clone());
        let u = L2Function::from_fn(&space, |_| rng.random_range(-1.0..1.0));
        let v = L2Function::from_fn(&space, |_| rng.random_range(-1.0..1.0));
        let tau = 0.01;
        let c = check_contractivity(&phi, &u, &v, 0.2, tau).unwrap();
        worst_ratio = worst_ratio.max(c.worst_ratio);
        ensure(c.ok && c.worst_ratio <= 1.02, || format!("run {run}: contraction ratio {}", c.worst_ratio))?;
        let t = rng.random_range(0.05..0.5);
        let opts = HeatFlowOptions { initial_steps: 100, tol: 1e-4, max_halvings: 3, exact_quadratic: true };
        let r = check_regularization_with(&energy, &u, t, opts).unwrap();
        ensure(r.energy_bound_ok, || format!("run {run}: Ch(h_t f) = {} > {}", r.energy, r.energy_bound))?;
        ensure(r.slope_bound_ok, || format!("run {run}: |Δh_t f|^2 = {} > {}", r.laplacian_sq, r.slope_bound))?;
        let traj = flow::flow(&phi, &u, 0.1, tau, &[]).unwrap();
        let id = check_energy_identity(&phi, &traj).unwrap();
        ensure(id.flagged == 0, || format!("run {run}: {} steps outside the energy identity tolerance", id.flagged))?;
    }
    // two points, Φ = Ch, u = (1, -1), tau = 1/4
    let s = Arc::new(make_path(2, 1.0).unwrap());
    let e = EnergyForm::quadratic(&s, vec![Edge::new(0, 1, 1.0)]).unwrap();
    let u = L2Function::new(&s, vec![1.0, -1.0]).unwrap();
    let p = flow::prox_step(&DirichletFunctional::new(e, 1.0), &u, 0.25).unwrap();
    let err = (p.values()[0] - 1.0 / 3.0).abs().max((p.values()[1] + 1.0 / 3.0).abs());
    ensure(err <= 1e-10, || format!("prox gave {:?}", p.values()))?;
    Ok(format!("50 runs, worst contraction ratio {worst_ratio:.4}; prox error {err:.1e}"))
}

fn sphere_invariance() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let mut worst: f64 = 0.0;
    for run in 0..20 {
        let n = rng.random_range(4..=10);
        let space = random_space(n, &mut rng);
        let edges = random_edges(n, &mut rng);
        let energy = if run % 2 == 0 {
            EnergyForm::quadratic(&space, edges).unwrap()
        } else {
            EnergyForm::lq(&space, Exponent::Infinity, &edges).unwrap()
        };
        let u0 = random_unit(&space, &mut rng);
        let cf = build_phi(&energy, energy.energy(&u0).unwrap()).unwrap();
        let tau = 0.5 * cf.max_step();
        let traj = sphere::sphere_flow_run(&cf, &u0, 30.0 * tau, tau).map_err(|e| format!("run {run}: {e}"))?;
        let bound = 5e-6 * tau * cf.shift;
        for st in &traj.states[..traj.states.len() - 1] {
            let drift = (flow::prox_step(&cf, &st.u, tau).unwrap().norm() - 1.0).abs();
            worst = worst.max(drift / bound);
            ensure(drift <= bound, || format!("run {run}: drift {drift:.3e} above {bound:.3e}"))?;
        }
    }
    Ok(format!("20 runs, worst drift / (5e-6 τ L) = {worst:.2e}"))
}

fn upper_semicontinuity() -> Outcome {
    let ns = [8, 16, 32, 64, 128];
    let fam = ConvergingFamily::refining_cycles(&ns, 256).unwrap();
    let r = lab::spectral_continuity_experiment(&fam, 4, 8).unwrap();
    ensure(r.verdict, || format!("verdict failed: {}", r.summary()))?;
    let s2 = r.series(2).unwrap();
    let circulant = |n: usize| 2.0 * (n * n) as f64 * (1.0 - (2.0 * PI / n as f64).cos());
    for (i, &n) in ns.iter().enumerate() {
        let rel = (s2.sequence[i] - circulant(n)).abs() / circulant(n);
        ensure(rel <= 1e-6, || format!("C_{n}: Λ_2 = {} vs {}", s2.sequence[i], circulant(n)))?;
    }
    ensure((s2.limit - circulant(256)).abs() <= 1e-6 * circulant(256), || format!("limit {}", s2.limit))?;
    ensure((s2.sequence[1] - 38.97).abs() < 0.01, || format!("C_16 gives {}", s2.sequence[1]))?;
    ensure((s2.limit - 4.0 * PI * PI).abs() / (4.0 * PI * PI) < 1e-3, || format!("limit {} far from 4π²", s2.limit))?;
    for k in 1..=4 {
        let s = r.series(k).unwrap();
        ensure(s.decreasing && s.final_ok, || format!("k = {k}: gaps {:?}", s.gaps))?;
    }
    Ok(format!("k <= 4 pass, Λ_2: {:.4} -> {:.4}", s2.sequence[0], s2.limit))
}

fn lower_semicontinuity() -> Outcome {
    let fam = ConvergingFamily::refining_cycles(&[8, 16, 32, 64, 128], 256).unwrap();
    let r = lab::reverse_roles_experiment(&fam, 4, 1e-3, 8).unwrap();
    ensure(r.verdict, || format!("reverse roles failed: {}", r.summary()))?;
    let dir = tempfile::tempdir().unwrap();
    let status = Command::new(env!("CARGO_BIN_EXE_mmspec"))
        .args(["--out", dir.path().to_str().unwrap(), "converge", "--preset", "alternating-control"])
        .output()
        .unwrap()
        .status;
    ensure(status.code() == Some(1), || format!("control exited with {status}"))?;
    let worst = (1..=4).map(|k| r.series(k).unwrap().gaps.last().copied().unwrap_or(0.0)).fold(0.0, f64::max);
    Ok(format!("reverse roles pass (worst final gap {worst:.2e}); control exits 1"))
}

fn transport_layer() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(47);
    let limit = models::cycle(96, 1.0).unwrap().space;
    let mut worst: f64 = 0.0;
    for (i, n) in [5usize, 12, 24, 40].into_iter().enumerate() {
        let member = models::cycle(n, 1.0).unwrap().space;
        let pi = Isometry::pi(&member, &limit).unwrap();
        let sigma = Isometry::sigma(&member, &limit).unwrap();
        for _ in 0..25 {
            let iso = if rng.random_bool(0.5) { &pi } else { &sigma };
            let f = L2Function::from_fn(iso.domain(), |_| rng.random_range(-3.0..3.0));
            let g = apply_isometry(iso, &f).unwrap();
            let err = (g.norm() - f.norm()).abs();
            worst = worst.max(err);
            ensure(err <= 1e-10, || format!("pair {i}: norm {} -> {}", f.norm(), g.norm()))?;
        }
    }

    let a = Arc::new(make_path(3, 1.0).unwrap());
    let b = Arc::new(make_path(2, 1.0).unwrap());
    let plan = transport::solve_ot(&a, &b).unwrap().dense();
    let expect = [[1.0 / 3.0, 0.0], [1.0 / 6.0, 1.0 / 6.0], [0.0, 1.0 / 3.0]];
    for (i, row) in expect.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            ensure((plan[(i, j)] - v).abs() <= 1e-15, || format!("plan entry ({i}, {j}) = {}", plan[(i, j)]))?;
        }
    }

    // verdicts for (f_i) and for the pushed family (σ_i f_i) must agree
    let fam = ConvergingFamily::refining_cycles(&[8, 16, 32, 64, 128], 256).unwrap();
    let couplings = fam.couplings().unwrap();
    let lim = fam.limit.space().clone();
    let f = L2Function::from_fn(&lim, |x| (2.0 * PI * x as f64 / 256.0).cos());
    let families: Vec<(&str, Vec<L2Function>)> = vec![
        ("recovery", couplings.iter().map(|c| c.pi.transfer(&f).unwrap()).collect()),
        (
            "sign flips",
            couplings
                .iter()
                .enumerate()
                .map(|(i, c)| c.pi.transfer(&f).unwrap().scaled(if i % 2 == 0 { 1.0 } else { -1.0 }))
                .collect(),
        ),
        (
            "oscillating",
            fam.members
                .iter()
                .map(|m| L2Function::from_fn(m.space(), |x| if x % 2 == 0 { 1.0 } else { -1.0 }))
                .collect(),
        ),
        (
            "doubled",
            couplings.iter().map(|c| c.pi.transfer(&f).unwrap().scaled(2.0)).collect(),
        ),
    ];
    let mut agree = 0;
    for (name, fi) in &families {
        let pushed: Vec<L2Function> = fi.iter().zip(&couplings).map(|(g, c)| c.sigma.transfer(g).unwrap()).collect();
        for mode in [ConvergenceMode::Weak, ConvergenceMode::Strong] {
            let direct = check_l2_convergence(fi, &f, mode).unwrap().verdict();
            let moved = check_l2_convergence(&pushed, &f, mode).unwrap().verdict();
            ensure(direct == moved, || format!("{name} {mode:?}: {direct} vs {moved}"))?;
            agree += 1;
        }
    }
    Ok(format!("100 isometries (worst {worst:.1e}), 3 -> 2 plan exact, {agree} verdicts agree"))
}

fn mosco_recovery() -> Outcome {
    let fam = ConvergingFamily::refining_cycles(&[8, 16, 32, 64, 128, 256], 512).unwrap();
    let lim = fam.limit.space().clone();
    let mut rng = ChaCha8Rng::seed_from_u64(59);
    let mut worst_upper: f64 = 0.0;
    let mut worst_lower = f64::INFINITY;
    for trial in 0..5 {
        let modes: Vec<(f64, f64, f64)> =
            (1..=3).map(|j| (j as f64, rng.random_range(-1.0..1.0), rng.random_range(0.0..2.0 * PI))).collect();
        let f = L2Function::from_fn(&lim, |x| {
            let s = x as f64 / 512.0;
            modes.iter().map(|(j, a, ph)| a * (2.0 * PI * j * s + ph).cos()).sum::<f64>()
        });
        let r = lab::mosco_recovery_check(&fam, &f, 1e-3).unwrap();
        ensure(r.verdict(), || {
            format!("trial {trial}: Ch = {}, recovery {:?}, plain {:?}", r.limit_energy, r.recovery_energies, r.plain_energies)
        })?;
        let last = r.recovery_energies.len() - 1;
        worst_upper = worst_upper.max(r.recovery_energies[last] / r.limit_energy);
        worst_lower = worst_lower.min(r.plain_energies[last] / r.limit_energy);
    }
    Ok(format!("5 functions, tail Ch^i(f_i)/Ch(f) <= {worst_upper:.4}, liminf proxy ratio >= {worst_lower:.4}"))
}

fn main() {
    let criteria: [Criterion; 9] = [
        ("quadratic oracle equivalence", quadratic_oracle_equivalence),
        ("ground state", ground_state),
        ("eigenpair existence", eigenpair_existence),
        ("gradient flow contract", gradient_flow_contract),
        ("sphere invariance", sphere_invariance),
        ("upper semicontinuity", upper_semicontinuity),
        ("lower semicontinuity", lower_semicontinuity),
        ("transport layer", transport_layer),
        ("mosco recovery", mosco_recovery),
    ];
    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = panic::catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|p| {
            Err(p.downcast_ref::<String>().cloned().or(p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default())
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {} {name}: PASS ({secs:.1}s) {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("criterion {} {name}: FAIL ({secs:.1}s) {why}", i + 1);
            }
        }
    }
    println!("{} of {} criteria pass", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
