//! Minimizing movements for `½Ch`: implicit Euler, the EVI defect, contraction
//! and the regularization estimates.

use mmspec::energy::Exponent;
use mmspec::flow::{self, check_contractivity, check_regularization, DirichletFunctional};
use mmspec::models;
use mmspec::space::L2Function;

fn main() -> mmspec::Result<()> {
    let m = models::path(8, 1.0)?;
    let u0 = L2Function::from_fn(&m.space, |i| if i < 4 { 1.0 } else { -1.0 });
    let v0 = L2Function::from_fn(&m.space, |i| (i as f64 / 7.0).powi(2));

    for (name, energy) in [("quadratic", m.quadratic()), ("q = inf", m.lq(Exponent::Infinity))] {
        let phi = DirichletFunctional::half(energy.clone());
        let traj = flow::flow(&phi, &u0, 0.05, 1e-3, &flow::default_probes(&u0))?;
        let end = traj.last();
        println!("{name}: energy {:.4} -> {:.4}, worst EVI defect {:.2e}", traj.states[0].energy, end.energy, traj.max_evi_residual());

        let c = check_contractivity(&phi, &u0, &v0, 0.05, 1e-3)?;
        println!("  |S_t u - S_t v| / |u - v| at most {:.6}", c.worst_ratio);

        let r = check_regularization(&energy, &u0, 0.01)?;
        println!(
            "  Ch(h_t f) = {:.3} <= {:.1},  |Δh_t f|^2 = {:.1} <= {:.1}",
            r.energy, r.energy_bound, r.laplacian_sq, r.slope_bound
        );
    }

    let mut csv = Vec::new();
    flow::flow(&DirichletFunctional::half(m.quadratic()), &u0, 0.003, 1e-3, &[])?.write_csv(&mut csv)?;
    print!("{}", String::from_utf8_lossy(&csv));
    Ok(())
}
