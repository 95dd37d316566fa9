//! Build generated spaces, evaluate their Dirichlet energies and Laplacians.

use mmspec::energy::Exponent;
use mmspec::models;
use mmspec::space::L2Function;

fn main() -> mmspec::Result<()> {
    let two = models::path(2, 1.0)?;
    let ch = two.quadratic();
    let u = L2Function::new(&two.space, vec![1.0, -1.0])?;
    println!("two points: Ch(1, -1) = {}", ch.energy(&u)?);
    println!("            Δ(1, -1)  = {:?}", ch.laplacian(&u)?.values());

    let cycle = models::cycle(32, 1.0)?;
    let wave = L2Function::from_fn(&cycle.space, |i| (2.0 * std::f64::consts::PI * i as f64 / 32.0).sin());
    for (name, e) in [
        ("quadratic", cycle.quadratic()),
        ("q = 3", cycle.lq(Exponent::Finite(3.0))),
        ("q = inf", cycle.lq(Exponent::Infinity)),
    ] {
        let r = e.energy(&wave)? / wave.norm().powi(2);
        println!("C_32 {name:>9}: Rayleigh quotient of sin(2πx) = {r:.5}");
    }

    let torus = models::thin_torus(16, 4, 0.1)?;
    println!(
        "thin torus: {} points in R^{}, connected: {}",
        torus.space.len(),
        torus.space.ambient_dim(),
        torus.quadratic().is_connected()
    );
    Ok(())
}
