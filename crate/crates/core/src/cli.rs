//! Command-line runs. Every command writes into `--out`; every output file
//! carries the hash of the run configuration and the tolerances used, so two
//! runs with equal inputs, flags and seed produce identical bytes.
//!
//! Exit codes: 0 when all verdicts pass, 1 when a verdict fails, 2 on errors.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::energy::{EnergyForm, Exponent};
use crate::error::{Error, Result};
use crate::lab::{self, ConvergingFamily, ContinuityReport, Thresholds};
use crate::models::{self, Model};
use crate::space::DiscreteSpace;
use crate::spectrum::{self, MinMaxOptions};
use crate::sphere::{self, EigenOptions};
use crate::transport;

#[derive(Parser, Debug)]
#[command(name = "mmspec", version, about = "Min-max spectra, gradient flows and spectral convergence on discrete metric measure spaces")]
pub struct Cli {
    /// Seed for every stochastic choice.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Tolerance override for the command's main check.
    #[arg(long, global = true)]
    pub tol: Option<f64>,
    /// Worker threads (default: available parallelism). Results do not depend on it.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Write a generated space and its default energy.
    Generate(GenerateArgs),
    /// Min-max values with matched eigenpairs.
    Spectrum(SpectrumArgs),
    /// Multistart eigenpair search by the sphere flow.
    Eigen(EigenArgs),
    /// Spectral continuity experiment over a converging family.
    Converge(ConvergeArgs),
    /// Optimal coupling and transport map between two spaces.
    Ot(OtArgs),
    /// Check space (and energy) files.
    Validate(ValidateArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum GeneratorKind {
    Cycle,
    Path,
    ThinTorus,
    Product,
    Point,
}

#[derive(Args, Debug, Serialize)]
pub struct GenerateArgs {
    pub kind: GeneratorKind,
    #[arg(long, default_value_t = 16)]
    pub n: usize,
    /// Second factor size (thin torus fiber, product path).
    #[arg(long, default_value_t = 4)]
    pub m: usize,
    #[arg(long, default_value_t = 1.0)]
    pub circumference: f64,
    #[arg(long, default_value_t = 1.0)]
    pub length: f64,
    /// Thin torus fiber circumference.
    #[arg(long, default_value_t = 0.1)]
    pub eps: f64,
    /// Ambient dimension of a point space.
    #[arg(long, default_value_t = 1)]
    pub dim: usize,
    /// Energy exponent: 2 (quadratic), a finite q >= 1, or `inf`.
    #[arg(long, default_value = "2")]
    pub q: String,
}

#[derive(Args, Debug, Serialize)]
pub struct SpectrumArgs {
    #[arg(long)]
    pub space: PathBuf,
    #[arg(long)]
    pub energy: PathBuf,
    #[arg(long, default_value_t = 4)]
    pub k_max: usize,
    #[arg(long, default_value_t = 8)]
    pub budget: usize,
}

#[derive(Args, Debug, Serialize)]
pub struct EigenArgs {
    #[arg(long)]
    pub space: PathBuf,
    #[arg(long)]
    pub energy: PathBuf,
    #[arg(long, default_value_t = 8)]
    pub starts: usize,
    #[arg(long, default_value_t = 200_000)]
    pub max_steps: usize,
}

#[derive(Args, Debug, Serialize)]
pub struct ConvergeArgs {
    /// Experiment config file (JSON).
    #[arg(long, conflicts_with = "preset")]
    pub config: Option<PathBuf>,
    /// Built-in experiment.
    #[arg(long)]
    pub preset: Option<Preset>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    RefiningCycles,
    ThinTori,
    AlternatingControl,
    ShrinkingCycles,
    MeasurePerturbedCycles,
    RefiningCyclesLinf,
}

#[derive(Args, Debug, Serialize)]
pub struct OtArgs {
    #[arg(long)]
    pub source: PathBuf,
    #[arg(long)]
    pub target: PathBuf,
}

#[derive(Args, Debug, Serialize)]
pub struct ValidateArgs {
    #[arg(long)]
    pub space: PathBuf,
    #[arg(long)]
    pub energy: Option<PathBuf>,
}

/// Family generators accepted in experiment configs.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "generator", rename_all = "kebab-case", deny_unknown_fields)]
pub enum FamilySpec {
    RefiningCycles { ns: Vec<usize>, limit: usize },
    AlternatingControl { ns: Vec<usize>, limit: usize },
    ThinTori { n: usize, m: usize, eps: Vec<f64> },
    ShrinkingCycles { n: usize, circumferences: Vec<f64> },
    MeasurePerturbedCycles { n: usize, amplitudes: Vec<f64>, seed: u64 },
    RefiningCyclesLinf { ns: Vec<usize>, limit: usize },
}

impl FamilySpec {
    pub fn build(&self) -> Result<ConvergingFamily> {
        match self {
            Self::RefiningCycles { ns, limit } => ConvergingFamily::refining_cycles(ns, *limit),
            Self::AlternatingControl { ns, limit } => ConvergingFamily::alternating_control(ns, *limit),
            Self::ThinTori { n, m, eps } => ConvergingFamily::thin_tori(*n, *m, eps),
            Self::ShrinkingCycles { n, circumferences } => ConvergingFamily::shrinking_cycles(*n, circumferences),
            Self::MeasurePerturbedCycles { n, amplitudes, seed } => {
                ConvergingFamily::measure_perturbed_cycles(*n, amplitudes, *seed)
            }
            Self::RefiningCyclesLinf { ns, limit } => ConvergingFamily::refining_cycles_linf(ns, *limit),
        }
    }
}

fn default_t() -> f64 {
    1e-3
}

fn default_true() -> bool {
    true
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub family: FamilySpec,
    pub k_max: usize,
    pub budget: usize,
    #[serde(default)]
    pub thresholds: Thresholds,
    /// Heat regularization time of the reverse-role transfer.
    #[serde(default = "default_t")]
    pub t: f64,
    /// Also run the reverse-role experiment.
    #[serde(default = "default_true")]
    pub reverse: bool,
}

impl ExperimentConfig {
    pub fn preset(p: Preset) -> Self {
        let cycles = vec![8, 16, 32, 64, 128];
        let (family, k_max) = match p {
            Preset::RefiningCycles => (FamilySpec::RefiningCycles { ns: cycles, limit: 256 }, 4),
            Preset::AlternatingControl => (FamilySpec::AlternatingControl { ns: cycles, limit: 256 }, 4),
            Preset::ThinTori => (FamilySpec::ThinTori { n: 16, m: 8, eps: vec![0.4, 0.2, 0.1, 0.05] }, 4),
            Preset::ShrinkingCycles => {
                (FamilySpec::ShrinkingCycles { n: 8, circumferences: vec![1.0, 0.5, 0.25, 0.125, 0.0625] }, 2)
            }
            Preset::MeasurePerturbedCycles => (
                FamilySpec::MeasurePerturbedCycles { n: 32, amplitudes: vec![0.4, 0.2, 0.1, 0.05, 0.025], seed: 7 },
                4,
            ),
            Preset::RefiningCyclesLinf => (FamilySpec::RefiningCyclesLinf { ns: vec![16, 32], limit: 64 }, 2),
        };
        // the nonlinear heat flow behind the reverse transfer is too slow for a preset
        let reverse = p != Preset::RefiningCyclesLinf;
        Self { family, k_max, budget: 8, thresholds: Thresholds::default(), t: default_t(), reverse }
    }
}

/// Hash and tolerances embedded in every output.
#[derive(Clone, Debug)]
pub struct RunMeta {
    pub hash: String,
    pub tolerances: Value,
    pub seed: u64,
}

impl RunMeta {
    fn new(command: &str, seed: u64, config: &Value, inputs: &[&Path], tolerances: Value) -> Result<Self> {
        let mut h = Sha256::new();
        h.update(command.as_bytes());
        h.update(seed.to_le_bytes());
        h.update(serde_json::to_vec(config)?);
        h.update(serde_json::to_vec(&tolerances)?);
        for p in inputs {
            h.update(fs::read(p)?);
        }
        let hash = h.finalize().iter().map(|b| format!("{b:02x}")).collect();
        Ok(Self { hash, tolerances, seed })
    }

    fn json(&self) -> Value {
        json!({ "config_hash": self.hash, "seed": self.seed, "tolerances": self.tolerances })
    }

    fn csv_header(&self) -> String {
        format!("# config_hash={} seed={} tolerances={}\n", self.hash, self.seed, self.tolerances)
    }
}

fn write_json(dir: &Path, name: &str, meta: &RunMeta, body: Value) -> Result<PathBuf> {
    let mut doc = json!({ "meta": meta.json() });
    if let (Value::Object(d), Value::Object(b)) = (&mut doc, body) {
        d.extend(b);
    }
    let path = dir.join(name);
    fs::write(&path, serde_json::to_string_pretty(&doc)? + "\n")?;
    Ok(path)
}

fn write_csv(dir: &Path, name: &str, meta: &RunMeta, body: Vec<u8>) -> Result<PathBuf> {
    let mut text = meta.csv_header().into_bytes();
    text.extend(body);
    let path = dir.join(name);
    fs::write(&path, text)?;
    Ok(path)
}

fn parse_exponent(q: &str) -> Result<Exponent> {
    match q {
        "inf" | "infinity" => Ok(Exponent::Infinity),
        _ => {
            let v: f64 = q.parse().map_err(|_| Error::InvalidParameter(format!("exponent {q}")))?;
            if !(v >= 1.0 && v.is_finite()) {
                return Err(Error::InvalidParameter(format!("exponent {q}")));
            }
            Ok(Exponent::Finite(v))
        }
    }
}

fn load_space(path: &Path) -> Result<Arc<DiscreteSpace>> {
    Ok(Arc::new(DiscreteSpace::from_json(&fs::read_to_string(path)?)?))
}

fn load_pair(space: &Path, energy: &Path) -> Result<EnergyForm> {
    let s = load_space(space)?;
    EnergyForm::from_json(&s, &fs::read_to_string(energy)?)
}

/// Outcome of a command: the verdict and the files written.
#[derive(Clone, Debug)]
pub struct Outcome {
    pub pass: bool,
    pub files: Vec<PathBuf>,
    pub summary: String,
}

pub fn cmd_generate(args: &GenerateArgs, out: &Path, seed: u64) -> Result<Outcome> {
    let model: Model = match args.kind {
        GeneratorKind::Cycle => models::cycle(args.n, args.circumference)?,
        GeneratorKind::Path => models::path(args.n, args.length)?,
        GeneratorKind::ThinTorus => models::thin_torus(args.n, args.m, args.eps)?,
        GeneratorKind::Product => models::product(&models::cycle(args.n, args.circumference)?, &models::path(args.m, args.length)?),
        GeneratorKind::Point => models::point(args.dim),
    };
    let q = parse_exponent(&args.q)?;
    let energy = if q == Exponent::Finite(2.0) { model.quadratic() } else { model.lq(q) };
    fs::create_dir_all(out)?;
    let space_path = out.join("space.json");
    let energy_path = out.join("energy.json");
    fs::write(&space_path, model.space.to_json() + "\n")?;
    fs::write(&energy_path, energy.to_json() + "\n")?;
    // round trip through the validator
    let reloaded = load_pair(&space_path, &energy_path)?;
    let _ = seed;
    let summary = format!(
        "{:?}: {} points, ambient dimension {}, {} energy, connected: {}",
        args.kind,
        reloaded.space().len(),
        reloaded.space().ambient_dim(),
        if reloaded.is_quadratic() { "quadratic" } else { "Finsler" },
        reloaded.is_connected()
    );
    Ok(Outcome { pass: true, files: vec![space_path, energy_path], summary })
}

pub fn cmd_spectrum(args: &SpectrumArgs, out: &Path, seed: u64, tol: Option<f64>) -> Result<Outcome> {
    let energy = load_pair(&args.space, &args.energy)?;
    let eigen_tol = tol.unwrap_or(1e-8);
    let meta = RunMeta::new(
        "spectrum",
        seed,
        &json!({ "k_max": args.k_max, "budget": args.budget }),
        &[&args.space, &args.energy],
        json!({ "eigen_residual": eigen_tol }),
    )?;
    let opts = MinMaxOptions { budget: args.budget, seed, ..MinMaxOptions::default() };
    let report = spectrum::spectrum_report(&energy, args.k_max, opts, eigen_tol)?;
    fs::create_dir_all(out)?;
    let mut csv = Vec::new();
    report.write_csv(&mut csv)?;
    let csv_path = write_csv(out, "spectrum.csv", &meta, csv)?;
    let pairs: Vec<Value> = report
        .rows
        .iter()
        .map(|r| {
            json!({
                "k": r.k,
                "lambda_upper": spectrum::fmt_value(r.lambda_upper),
                "eigenpair": r.eigenpair,
            })
        })
        .collect();
    let json_path = write_json(out, "eigenpairs.json", &meta, json!({ "method": report.method, "rows": pairs }))?;
    let pass = report.rows.iter().all(|r| r.eigenpair.as_ref().is_none_or(|p| p.residual <= eigen_tol));
    let summary = report
        .rows
        .iter()
        .map(|r| format!("k={} lambda={}", r.k, spectrum::fmt_value(r.lambda_upper)))
        .collect::<Vec<_>>()
        .join("\n");
    Ok(Outcome { pass, files: vec![csv_path, json_path], summary })
}

pub fn cmd_eigen(args: &EigenArgs, out: &Path, seed: u64, tol: Option<f64>) -> Result<Outcome> {
    use rayon::prelude::*;
    let energy = load_pair(&args.space, &args.energy)?;
    let tol = tol.unwrap_or(1e-8);
    let meta = RunMeta::new(
        "eigen",
        seed,
        &json!({ "starts": args.starts, "max_steps": args.max_steps }),
        &[&args.space, &args.energy],
        json!({ "residual": tol }),
    )?;
    let opts = EigenOptions { tol, max_steps: args.max_steps, ..EigenOptions::default() };
    let runs: Vec<sphere::EigenSearch> = (0..args.starts as u64)
        .into_par_iter()
        .map(|i| {
            let u0 = sphere::random_start(energy.space(), seed.wrapping_add(i), false, &[]);
            sphere::search_eigenpair(&energy, &u0, &opts)
        })
        .collect::<Result<_>>()?;
    let pass = runs.iter().all(|r| r.converged);
    let rows: Vec<Value> = runs
        .iter()
        .enumerate()
        .map(|(i, r)| json!({ "start": i, "steps": r.steps, "converged": r.converged, "pair": r.pair }))
        .collect();
    fs::create_dir_all(out)?;
    let path = write_json(out, "eigenpairs.json", &meta, json!({ "runs": rows }))?;
    let mut levels: Vec<f64> = runs.iter().map(|r| r.pair.lambda).collect();
    levels.sort_by(f64::total_cmp);
    levels.dedup_by(|a, b| (*a - *b).abs() <= 1e-6 * (1.0 + b.abs()));
    let summary = format!(
        "{} starts, {} converged, levels {:?}",
        runs.len(),
        runs.iter().filter(|r| r.converged).count(),
        levels
    );
    Ok(Outcome { pass, files: vec![path], summary })
}

fn report_files(out: &Path, stem: &str, meta: &RunMeta, r: &ContinuityReport) -> Result<Vec<PathBuf>> {
    let mut csv = Vec::new();
    r.write_csv(&mut csv)?;
    Ok(vec![
        write_csv(out, &format!("{stem}.csv"), meta, csv)?,
        write_json(out, &format!("{stem}.json"), meta, json!({ "report": r.summary() }))?,
    ])
}

pub fn cmd_converge(args: &ConvergeArgs, out: &Path, seed: u64, tol: Option<f64>) -> Result<Outcome> {
    let (mut cfg, inputs): (ExperimentConfig, Vec<&Path>) = match (&args.config, args.preset) {
        (Some(p), _) => (serde_json::from_str(&fs::read_to_string(p)?)?, vec![]),
        (None, Some(p)) => (ExperimentConfig::preset(p), vec![]),
        (None, None) => return Err(Error::InvalidParameter("converge needs --config or --preset".into())),
    };
    if let Some(t) = tol {
        cfg.thresholds.rel_gap = t;
    }
    let meta = RunMeta::new("converge", seed, &serde_json::to_value(&cfg)?, &inputs, serde_json::to_value(cfg.thresholds)?)?;
    let family = cfg.family.build()?;
    let opts = MinMaxOptions { budget: cfg.budget, seed, ..MinMaxOptions::default() };
    let forward = lab::spectral_continuity_with(&family, cfg.k_max, opts, cfg.thresholds)?;
    fs::create_dir_all(out)?;
    let mut files = report_files(out, "continuity", &meta, &forward)?;
    let mut pass = forward.verdict;
    let mut lines = vec![format!("{} forward: {}", family.name, verdict_word(forward.verdict))];
    if cfg.reverse {
        let reverse = lab::reverse_roles_with(&family, cfg.k_max, cfg.t, opts, cfg.thresholds)?;
        files.extend(report_files(out, "reverse", &meta, &reverse)?);
        pass &= reverse.verdict;
        lines.push(format!("{} reverse: {}", family.name, verdict_word(reverse.verdict)));
    }
    for s in &forward.series {
        lines.push(format!(
            "k={} limit={} final_gap={} verdict={}",
            s.k,
            spectrum::fmt_value(s.limit),
            s.gaps.last().map_or("-".into(), |g| spectrum::fmt_value(*g)),
            s.verdict
        ));
    }
    lines.extend(forward.annotations.iter().cloned());
    files.push(write_json(out, "summary.json", &meta, json!({ "config": cfg, "verdict": pass }))?);
    Ok(Outcome { pass, files, summary: lines.join("\n") })
}

fn verdict_word(ok: bool) -> &'static str {
    if ok {
        "pass"
    } else {
        "FAIL"
    }
}

pub fn cmd_ot(args: &OtArgs, out: &Path, seed: u64, tol: Option<f64>) -> Result<Outcome> {
    let (src, tgt) = (load_space(&args.source)?, load_space(&args.target)?);
    let tol = tol.unwrap_or(transport::MARGINAL_TOL);
    let meta = RunMeta::new("ot", seed, &json!({}), &[&args.source, &args.target], json!({ "certificate": tol }))?;
    let plan = transport::solve_ot(&src, &tgt)?;
    let map = transport::plan_to_map(&plan);
    fs::create_dir_all(out)?;
    let plan_json: Value = serde_json::from_str(&plan.to_json())?;
    let map_json: Value = serde_json::from_str(&map.to_json())?;
    let marginal = plan.marginal_error();
    let files = vec![
        write_json(out, "plan.json", &meta, json!({ "coupling": plan_json, "marginal_error": marginal }))?,
        write_json(
            out,
            "map.json",
            &meta,
            json!({ "map": map_json, "refined_ids": map.refined.ids(), "pushforward_error": map.pushforward_error }),
        )?,
    ];
    let pass = marginal <= tol && plan.dual_residual <= tol && map.pushforward_error <= tol;
    let summary = format!(
        "cost {:.12e}, {} plan entries, marginal error {marginal:.2e}, dual residual {:.2e}",
        plan.cost,
        plan.entries.len(),
        plan.dual_residual
    );
    Ok(Outcome { pass, files, summary })
}

pub fn cmd_validate(args: &ValidateArgs) -> Result<Outcome> {
    let space = load_space(&args.space)?;
    let mut summary = format!("space: {} points, ambient dimension {}", space.len(), space.ambient_dim());
    if let Some(e) = &args.energy {
        let energy = EnergyForm::from_json(&space, &fs::read_to_string(e)?)?;
        summary += &format!(
            "\nenergy: {}, connected: {}",
            if energy.is_quadratic() { "quadratic" } else { "Finsler" },
            energy.is_connected()
        );
    }
    Ok(Outcome { pass: true, files: vec![], summary })
}

/// Runs a parsed command line and returns the exit code.
pub fn run(cli: Cli) -> i32 {
    if let Some(j) = cli.jobs {
        if j == 0 {
            eprintln!("error: --jobs must be positive");
            return 2;
        }
        // only fails if a pool already exists, which is harmless
        let _ = rayon::ThreadPoolBuilder::new().num_threads(j).build_global();
    }
    let res = match &cli.command {
        Command::Generate(a) => cmd_generate(a, &cli.out, cli.seed),
        Command::Spectrum(a) => cmd_spectrum(a, &cli.out, cli.seed, cli.tol),
        Command::Eigen(a) => cmd_eigen(a, &cli.out, cli.seed, cli.tol),
        Command::Converge(a) => cmd_converge(a, &cli.out, cli.seed, cli.tol),
        Command::Ot(a) => cmd_ot(a, &cli.out, cli.seed, cli.tol),
        Command::Validate(a) => match cmd_validate(a) {
            Err(e) => {
                println!("invalid: {e}");
                return 1;
            }
            ok => ok,
        },
    };
    match res {
        Ok(o) => {
            println!("{}", o.summary);
            for f in &o.files {
                println!("wrote {}", f.display());
            }
            println!("verdict: {}", verdict_word(o.pass));
            if o.pass {
                0
            } else {
                1
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            2
        }
    }
}
