//! Min-max spectra: exact for quadratic energies, upper bounds with matched
//! eigenpairs for nonlinear ones.

use mmspec::energy::Exponent;
use mmspec::models;
use mmspec::spectrum::{quadratic_oracle, spectrum_report, MinMaxOptions};

fn main() -> mmspec::Result<()> {
    let cycle = models::cycle(16, 1.0)?;
    let report = spectrum_report(&cycle.quadratic(), 5, MinMaxOptions::default(), 1e-8)?;
    let oracle = quadratic_oracle(&cycle.quadratic())?;
    println!("{}", report.method);
    for (row, exact) in report.rows.iter().zip(&oracle.values) {
        println!("  Λ_{} = {:.6}   dense eigenvalue {exact:.6}", row.k, row.lambda_upper);
    }

    let path = models::path(9, 1.0)?;
    let report = spectrum_report(&path.lq(Exponent::Infinity), 3, MinMaxOptions { budget: 8, ..Default::default() }, 1e-8)?;
    println!("{}", report.method);
    let mut csv = Vec::new();
    report.write_csv(&mut csv)?;
    print!("{}", String::from_utf8_lossy(&csv));

    let point = models::point(1);
    let report = spectrum_report(&point.quadratic(), 3, MinMaxOptions::default(), 1e-8)?;
    println!("single point: {:?}", report.values());
    Ok(())
}
