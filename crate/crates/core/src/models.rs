//! Generated spaces paired with their default graph energies.
//!
//! Edge weights are chosen so that the quadratic energy of a cycle (or path)
//! approximates `∫ |u'|^2` against the normalized length measure; on a cycle
//! with `n` points and circumference `c` the spectrum is exactly
//! `2 n^2 / c^2 (1 - cos(2πj/n))`.

use std::sync::Arc;

use crate::energy::{Edge, EnergyForm, Exponent};
use crate::error::{Error, Result};
use crate::space::{self, DiscreteSpace};

#[derive(Clone, Debug)]
pub struct Model {
    pub space: Arc<DiscreteSpace>,
    pub edges: Vec<Edge>,
}

impl Model {
    pub fn new(space: DiscreteSpace, edges: Vec<Edge>) -> Self {
        Self { space: Arc::new(space), edges }
    }

    pub fn quadratic(&self) -> EnergyForm {
        EnergyForm::quadratic(&self.space, self.edges.clone()).expect("generated edges are valid")
    }

    /// Finsler form with per-point weights `(w_e / 2m(x))^{q/2}`, so that
    /// `q = 2` reproduces [`Model::quadratic`] exactly.
    pub fn lq(&self, q: Exponent) -> EnergyForm {
        let m = self.space.measure();
        let power = match q {
            Exponent::Infinity => 0.5,
            Exponent::Finite(q) => q / 2.0,
        };
        let mut nb = vec![Vec::new(); self.space.len()];
        for e in &self.edges {
            if e.a == e.b {
                continue;
            }
            nb[e.a].push((e.b, (e.weight / (2.0 * m[e.a])).powf(power)));
            nb[e.b].push((e.a, (e.weight / (2.0 * m[e.b])).powf(power)));
        }
        EnergyForm::lq_from_neighbors(&self.space, q, nb).expect("generated neighbours are valid")
    }
}

pub fn cycle(n: usize, circumference: f64) -> Result<Model> {
    let s = space::make_cycle(n, circumference)?;
    let w = n as f64 / (circumference * circumference);
    let edges = match n {
        1 => vec![],
        // the two arcs between antipodal points
        2 => vec![Edge::new(0, 1, 2.0 * w)],
        _ => (0..n).map(|i| Edge::new(i, (i + 1) % n, w)).collect(),
    };
    Ok(Model::new(s, edges))
}

pub fn path(n: usize, length: f64) -> Result<Model> {
    let s = space::make_path(n, length)?;
    let edges = if n > 1 {
        let h = length / (n - 1) as f64;
        (0..n - 1).map(|i| Edge::new(i, i + 1, 1.0 / (h * length))).collect()
    } else {
        vec![]
    };
    Ok(Model::new(s, edges))
}

/// Product model: each factor's edges are replicated along the other factor
/// with weights scaled by the other factor's measure, so that the quadratic
/// spectrum is the sum of the factor spectra.
pub fn product(a: &Model, b: &Model) -> Model {
    let s = space::make_product(&a.space, &b.space);
    let (na, nb) = (a.space.len(), b.space.len());
    let (ma, mb) = (a.space.measure(), b.space.measure());
    let mut edges = Vec::with_capacity(a.edges.len() * nb + b.edges.len() * na);
    for e in &a.edges {
        for j in 0..nb {
            edges.push(Edge::new(e.a * nb + j, e.b * nb + j, e.weight * mb[j]));
        }
    }
    for e in &b.edges {
        for i in 0..na {
            edges.push(Edge::new(i * nb + e.a, i * nb + e.b, e.weight * ma[i]));
        }
    }
    Model::new(s, edges)
}

pub fn thin_torus(n: usize, m: usize, eps: f64) -> Result<Model> {
    if n < 2 || m < 2 {
        return Err(Error::InvalidParameter(format!("thin torus needs n, m >= 2 (got {n}, {m})")));
    }
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::InvalidParameter(format!("fiber scale {eps}")));
    }
    Ok(product(&cycle(n, 1.0)?, &cycle(m, eps)?))
}

pub fn point(dim: usize) -> Model {
    Model::new(space::make_point(dim), vec![])
}
