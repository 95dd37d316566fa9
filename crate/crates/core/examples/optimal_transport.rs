//! Exact optimal couplings, atom splitting and the induced isometries.

use std::sync::Arc;

use mmspec::models;
use mmspec::space::{make_path, L2Function};
use mmspec::transport::{apply_isometry, plan_to_map, solve_ot, Isometry};

fn main() -> mmspec::Result<()> {
    let three = Arc::new(make_path(3, 1.0)?);
    let two = Arc::new(make_path(2, 1.0)?);
    let plan = solve_ot(&three, &two)?;
    println!("3 -> 2 plan (cost {:.4}):\n{}", plan.cost, plan.dense());
    let map = plan_to_map(&plan);
    println!("refined source has {} atoms, parents {:?}, targets {:?}", map.refined.len(), map.parent, map.assignment);

    let member = models::cycle(12, 1.0)?.space;
    let limit = models::cycle(64, 1.0)?.space;
    let pi = Isometry::pi(&member, &limit)?;
    let f = L2Function::from_fn(pi.domain(), |i| (i as f64).sin());
    let g = apply_isometry(&pi, &f)?;
    println!("π: |f| = {:.12}, |π f| = {:.12}", f.norm(), g.norm());
    println!("W2^2(C_12, C_64) = {:.6}", solve_ot(&member, &limit)?.cost);
    Ok(())
}
