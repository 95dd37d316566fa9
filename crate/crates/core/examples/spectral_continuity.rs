//! Spectral continuity over converging families, in both directions, plus a
//! Mosco recovery check and a control family that must fail.

use mmspec::lab::{self, ConvergingFamily};
use mmspec::space::L2Function;

fn main() -> mmspec::Result<()> {
    let family = ConvergingFamily::refining_cycles(&[8, 16, 32, 64, 128], 256)?;
    let forward = lab::spectral_continuity_experiment(&family, 4, 8)?;
    for s in &forward.series {
        println!("k = {}: {:.4?} -> {:.4} ({})", s.k, s.sequence, s.limit, if s.verdict { "pass" } else { "fail" });
    }
    let reverse = lab::reverse_roles_experiment(&family, 4, 1e-3, 8)?;
    println!("reverse roles: {}", if reverse.verdict { "pass" } else { "fail" });

    let f = L2Function::from_fn(family.limit.space(), |i| (2.0 * std::f64::consts::PI * i as f64 / 256.0).cos());
    let mosco = lab::mosco_recovery_check(&family, &f, 1e-3)?;
    println!("Mosco: Ch(f) = {:.4}, recovery energies {:.4?}", mosco.limit_energy, mosco.recovery_energies);

    let control = ConvergingFamily::alternating_control(&[8, 16, 32, 64, 128], 256)?;
    let r = lab::spectral_continuity_experiment(&control, 2, 8)?;
    println!("alternating control: {}", if r.verdict { "pass" } else { "fail" });

    let tori = ConvergingFamily::thin_tori(16, 8, &[0.4, 0.2, 0.1, 0.05])?;
    let r = lab::spectral_continuity_experiment(&tori, 4, 8)?;
    for a in &r.annotations {
        println!("thin tori: {a}");
    }
    Ok(())
}
