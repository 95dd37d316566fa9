//! Small dense convex quadratic programs,
//!
//! ```text
//! minimize   1/2 x'Hx + c'x
//! subject to A x  = b
//!            G x <= h
//! ```
//!
//! solved with a Mehrotra predictor-corrector interior point method. Problem
//! sizes in this crate stay below a few hundred variables, so the reduced KKT
//! system is factored densely at every iteration.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Newton direction `(dx, dy, dz, ds)`.
type Step = (DVector<f64>, DVector<f64>, DVector<f64>, DVector<f64>);

#[derive(Clone, Debug)]
pub struct QuadraticProgram {
    pub h: DMatrix<f64>,
    pub c: DVector<f64>,
    pub a_eq: Option<(DMatrix<f64>, DVector<f64>)>,
    pub g: DMatrix<f64>,
    pub h_ub: DVector<f64>,
}

#[derive(Clone, Debug)]
pub struct QpSolution {
    pub x: DVector<f64>,
    /// Multipliers of the inequality constraints.
    pub z: DVector<f64>,
    /// Multipliers of the equality constraints (empty when there are none).
    pub y: DVector<f64>,
    pub iterations: usize,
    /// Max of the scaled primal, dual and complementarity residuals.
    pub residual: f64,
}

#[derive(Clone, Copy, Debug)]
pub struct QpOptions {
    pub tol: f64,
    pub max_iter: usize,
    /// Residual still accepted when the iteration stalls before `tol`.
    pub accept: f64,
}

impl Default for QpOptions {
    fn default() -> Self {
        Self { tol: 1e-12, max_iter: 200, accept: 1e-9 }
    }
}

impl QuadraticProgram {
    pub fn solve(&self, opts: QpOptions) -> Result<QpSolution> {
        let n = self.c.len();
        let m = self.g.nrows();
        let (a, b) = match &self.a_eq {
            Some((a, b)) => (a.clone(), b.clone()),
            None => (DMatrix::zeros(0, n), DVector::zeros(0)),
        };
        let p = a.nrows();
        debug_assert_eq!(self.h.shape(), (n, n));
        debug_assert_eq!(self.g.ncols(), n);

        let scale_d = 1.0 + self.c.amax();
        let scale_p = 1.0 + self.h_ub.amax().max(b.amax());

        let mut x = DVector::zeros(n);
        let mut y = DVector::zeros(p);
        let mut s = DVector::from_fn(m, |i, _| (self.h_ub[i] - (self.g.row(i) * &x)[0]).max(1.0));
        let mut z = DVector::from_element(m, 1.0);
        let gt = self.g.transpose();
        let at = a.transpose();

        let mut last_res = f64::INFINITY;
        let mut best: Option<(f64, QpSolution, DVector<f64>)> = None;
        let mut since_best = 0;
        for iter in 0..opts.max_iter {
            let r_d = &self.h * &x + &self.c + &at * &y + &gt * &z;
            let r_p = &a * &x - &b;
            let r_i = &self.g * &x + &s - &self.h_ub;
            let mu = if m > 0 { s.dot(&z) / m as f64 } else { 0.0 };

            let res = (r_d.amax() / scale_d)
                .max(if p > 0 { r_p.amax() / scale_p } else { 0.0 })
                .max(if m > 0 { r_i.amax() / scale_p } else { 0.0 })
                .max(mu);
            last_res = res;

            if res <= opts.tol {
                // a small KKT residual only pins the solution to about its square
                // root on degenerate problems; the active-set solve is exact
                if let Some(sol) = self.polish(&s, &z, iter, scale_d, scale_p) {
                    if sol.residual <= opts.tol {
                        return Ok(sol);
                    }
                }
                return Ok(QpSolution { x, z, y, iterations: iter, residual: res });
            }
            if mu < 1e-13 * opts.tol && res > opts.tol {
                // complementarity is exhausted; only polishing can help
                if let Some(sol) = self.polish(&s, &z, iter, scale_d, scale_p) {
                    if sol.residual <= opts.tol {
                        return Ok(sol);
                    }
                }
            }
            if best.as_ref().is_none_or(|(r, _, _)| res < *r) {
                best = Some((res, QpSolution { x: x.clone(), z: z.clone(), y: y.clone(), iterations: iter, residual: res }, s.clone()));
                since_best = 0;
            } else {
                since_best += 1;
                if since_best >= 15 {
                    break;
                }
            }

            // Reduced system  [H + G' D G   A'] [dx]   [rhs1]
            //                 [A            0 ] [dy] = [rhs2],  D = Z / S.
            let d = DVector::from_fn(m, |i, _| z[i] / s[i]);
            let mut k = DMatrix::zeros(n + p, n + p);
            {
                let mut top = k.view_mut((0, 0), (n, n));
                top.copy_from(&self.h);
                let gd = DMatrix::from_fn(m, n, |i, j| self.g[(i, j)] * d[i]);
                top += &gt * gd;
                for i in 0..n {
                    top[(i, i)] += 1e-13 * (1.0 + top[(i, i)].abs());
                }
            }
            if p > 0 {
                k.view_mut((0, n), (n, p)).copy_from(&at);
                k.view_mut((n, 0), (p, n)).copy_from(&a);
                for i in 0..p {
                    k[(n + i, n + i)] = -1e-13;
                }
            }
            let lu = k.lu();

            let solve_dir = |r_c: &DVector<f64>| -> Option<Step> {
                // dz = S^-1 (r_c + Z r_i + Z G dx), ds = -r_i - G dx
                let w = DVector::from_fn(m, |i, _| (r_c[i] + z[i] * r_i[i]) / s[i]);
                let mut rhs = DVector::zeros(n + p);
                rhs.rows_mut(0, n).copy_from(&(-&r_d - &gt * &w));
                if p > 0 {
                    rhs.rows_mut(n, p).copy_from(&(-&r_p));
                }
                let sol = lu.solve(&rhs)?;
                let dx = sol.rows(0, n).into_owned();
                let dy = sol.rows(n, p).into_owned();
                let gdx = &self.g * &dx;
                let dz = DVector::from_fn(m, |i, _| w[i] + d[i] * gdx[i]);
                let ds = DVector::from_fn(m, |i, _| -r_i[i] - gdx[i]);
                Some((dx, dy, dz, ds))
            };

            let r_aff = DVector::from_fn(m, |i, _| -s[i] * z[i]);
            let (_, _, dz_a, ds_a) = solve_dir(&r_aff)
                .ok_or_else(|| Error::SolverFailure("singular KKT system".into()))?;
            let alpha_a = step_to_boundary(&s, &ds_a).min(step_to_boundary(&z, &dz_a)).min(1.0);
            let mu_aff = if m > 0 {
                (0..m)
                    .map(|i| (s[i] + alpha_a * ds_a[i]) * (z[i] + alpha_a * dz_a[i]))
                    .sum::<f64>()
                    / m as f64
            } else {
                0.0
            };
            let sigma = if mu > 0.0 { (mu_aff / mu).powi(3).min(1.0) } else { 0.0 };
            let r_c = DVector::from_fn(m, |i, _| -s[i] * z[i] - ds_a[i] * dz_a[i] + sigma * mu);
            let (dx, dy, dz, ds) = solve_dir(&r_c)
                .ok_or_else(|| Error::SolverFailure("singular KKT system".into()))?;
            let alpha = (0.995 * step_to_boundary(&s, &ds).min(step_to_boundary(&z, &dz))).min(1.0);

            x += alpha * dx;
            y += alpha * dy;
            s += alpha * &ds;
            z += alpha * &dz;
            for i in 0..m {
                s[i] = s[i].max(1e-300);
                z[i] = z[i].max(1e-300);
            }
        }
        if let Some((r, sol, slack)) = best {
            if let Some(p) = self.polish(&slack, &sol.z, sol.iterations, scale_d, scale_p) {
                if p.residual <= r.min(opts.accept) {
                    return Ok(p);
                }
            }
            if r <= opts.accept {
                return Ok(sol);
            }
        }
        Err(Error::SolverFailure(format!(
            "interior point method stalled at residual {last_res:.3e}"
        )))
    }
}

impl QuadraticProgram {
    /// Solves the equality-constrained problem on the constraints that look
    /// active (`z > s`), then corrects the guess a few times by dropping
    /// constraints with negative multipliers and adding violated ones.
    /// Returns the best candidate found.
    fn polish(
        &self,
        s: &DVector<f64>,
        z: &DVector<f64>,
        iterations: usize,
        scale_d: f64,
        scale_p: f64,
    ) -> Option<QpSolution> {
        let mut active: Vec<bool> = (0..z.len()).map(|i| z[i] > s[i]).collect();
        let mut best: Option<QpSolution> = None;
        for _ in 0..12 {
            let Some((sol, mult)) = self.solve_on_active(&active, iterations, scale_d, scale_p) else {
                break;
            };
            let infeas = &self.g * &sol.x - &self.h_ub;
            let tol = 1e-14 * scale_p;
            let mut changed = false;
            for i in 0..active.len() {
                if active[i] && mult[i] < 0.0 {
                    active[i] = false;
                    changed = true;
                } else if !active[i] && infeas[i] > tol {
                    active[i] = true;
                    changed = true;
                }
            }
            if best.as_ref().is_none_or(|b| sol.residual < b.residual) {
                best = Some(sol);
            }
            if !changed {
                break;
            }
        }
        best
    }

    /// KKT solve with the `active` inequalities as equalities. Also returns
    /// the signed multipliers.
    fn solve_on_active(
        &self,
        active: &[bool],
        iterations: usize,
        scale_d: f64,
        scale_p: f64,
    ) -> Option<(QpSolution, Vec<f64>)> {
        let n = self.c.len();
        let active: Vec<usize> = (0..active.len()).filter(|&i| active[i]).collect();
        let (a, b) = match &self.a_eq {
            Some((a, b)) => (a.clone(), b.clone()),
            None => (DMatrix::zeros(0, n), DVector::zeros(0)),
        };
        let (p, na) = (a.nrows(), active.len());
        let dim = n + p + na;
        let mut k = DMatrix::zeros(dim, dim);
        k.view_mut((0, 0), (n, n)).copy_from(&self.h);
        let mut rhs = DVector::zeros(dim);
        rhs.rows_mut(0, n).copy_from(&(-&self.c));
        for i in 0..p {
            for j in 0..n {
                k[(n + i, j)] = a[(i, j)];
                k[(j, n + i)] = a[(i, j)];
            }
            rhs[n + i] = b[i];
        }
        for (r, &i) in active.iter().enumerate() {
            for j in 0..n {
                k[(n + p + r, j)] = self.g[(i, j)];
                k[(j, n + p + r)] = self.g[(i, j)];
            }
            rhs[n + p + r] = self.h_ub[i];
        }
        let mut kreg = k.clone();
        let delta = 1e-11 * (1.0 + k.amax());
        for i in 0..n {
            kreg[(i, i)] += delta;
        }
        for i in n..dim {
            kreg[(i, i)] -= delta;
        }
        let lu = kreg.lu();
        let mut w = lu.solve(&rhs)?;
        for _ in 0..5 {
            let r = &rhs - &k * &w;
            w += lu.solve(&r)?;
        }
        if (&rhs - &k * &w).amax() > 1e-12 * (1.0 + rhs.amax()) {
            // rank deficient active set (several constraints pinning the same
            // face): fall back to the minimum norm solution
            let svd = k.clone().svd(true, true);
            let cut = 1e-12 * svd.singular_values.max();
            w = svd.solve(&rhs, cut).ok()?;
        }
        let xp = w.rows(0, n).into_owned();
        let yp = w.rows(n, p).into_owned();
        let mut zp = DVector::zeros(self.g.nrows());
        let mut mult = vec![0.0; self.g.nrows()];
        for (r, &i) in active.iter().enumerate() {
            mult[i] = w[n + p + r];
            zp[i] = w[n + p + r].max(0.0);
        }
        let r_d = &self.h * &xp + &self.c + a.transpose() * &yp + self.g.transpose() * &zp;
        let infeas = (&self.g * &xp - &self.h_ub).map(|v| v.max(0.0));
        let neg_z = (0..na).map(|r| (-w[n + p + r]).max(0.0)).fold(0.0, f64::max);
        let r_p = if p > 0 { (&a * &xp - &b).amax() } else { 0.0 };
        let residual = (r_d.amax() / scale_d)
            .max(infeas.amax() / scale_p)
            .max(r_p / scale_p)
            .max(neg_z / scale_d);
        residual.is_finite().then_some((QpSolution { x: xp, z: zp, y: yp, iterations, residual }, mult))
    }
}

fn step_to_boundary(v: &DVector<f64>, dv: &DVector<f64>) -> f64 {
    v.iter()
        .zip(dv.iter())
        .filter(|(_, d)| **d < 0.0)
        .map(|(x, d)| -x / d)
        .fold(f64::INFINITY, f64::min)
}
