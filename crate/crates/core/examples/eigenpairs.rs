//! Eigenpairs of the nonlinear Laplacian by the constrained sphere flow, and
//! a multistart probe of a degenerate critical level.

use mmspec::energy::Exponent;
use mmspec::models;
use mmspec::sphere::{critical_set_probe, find_eigenpair, random_start};

fn main() -> mmspec::Result<()> {
    let path = models::path(9, 1.0)?;
    let e = path.lq(Exponent::Infinity);
    let mut levels: Vec<f64> = Vec::new();
    for seed in 0..8 {
        let p = find_eigenpair(&e, &random_start(&path.space, seed, true, &[]), 1e-8)?;
        println!("q = inf path, seed {seed}: λ = {:.9}, residual {:.1e}", p.lambda, p.residual);
        if !levels.iter().any(|l| (l - p.lambda).abs() < 1e-6) {
            levels.push(p.lambda);
        }
    }
    println!("distinct levels reached: {levels:.6?}");

    let cycle = models::cycle(16, 1.0)?;
    let level = 2.0 * 256.0 * (1.0 - (std::f64::consts::PI / 8.0).cos());
    let probe = critical_set_probe(&cycle.quadratic(), level, 16, 1e-8, 1)?;
    println!("C_16 at λ = {level:.4}: {} distinct critical points from {} starts", probe.count(), probe.starts);
    Ok(())
}
