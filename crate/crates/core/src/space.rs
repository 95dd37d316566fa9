//! Finite metric measure spaces embedded in a shared Euclidean ambient space,
//! and square-integrable functions on them.

use std::collections::HashSet;
use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance used for the measure and metric invariants.
pub const SPACE_TOL: f64 = 1e-12;

/// A finite metric measure space `(X, d, m)` together with coordinates in a
/// common Euclidean ambient space.
#[derive(Clone, PartialEq)]
pub struct DiscreteSpace {
    ids: Vec<String>,
    coords: Vec<Vec<f64>>,
    dist: DMatrix<f64>,
    measure: Vec<f64>,
}

impl fmt::Debug for DiscreteSpace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DiscreteSpace")
            .field("points", &self.len())
            .field("ambient_dim", &self.ambient_dim())
            .finish()
    }
}

/// Unvalidated space data, as read from disk or assembled by hand.
#[derive(Clone, Debug)]
pub struct RawSpace {
    pub ids: Vec<String>,
    pub coords: Vec<Vec<f64>>,
    /// `None` means intrinsic distance = ambient Euclidean distance.
    pub dist: Option<Vec<Vec<f64>>>,
    pub measure: Vec<f64>,
}

impl DiscreteSpace {
    /// Checks every invariant and builds the space.
    pub fn validate(raw: RawSpace) -> Result<Self> {
        let n = raw.ids.len();
        if n == 0 {
            return Err(Error::InvalidParameter("space has no points".into()));
        }
        let mut seen = HashSet::with_capacity(n);
        for id in &raw.ids {
            if !seen.insert(id.as_str()) {
                return Err(Error::DuplicateId(id.clone()));
            }
        }
        if raw.coords.len() != n || raw.measure.len() != n {
            return Err(Error::InvalidParameter(format!(
                "{} ids, {} coordinates, {} weights",
                n,
                raw.coords.len(),
                raw.measure.len()
            )));
        }
        let dim = raw.coords[0].len();
        if raw.coords.iter().any(|c| c.len() != dim) {
            return Err(Error::InvalidParameter("ragged coordinate tuples".into()));
        }
        if raw.coords.iter().flatten().any(|c| !c.is_finite()) {
            return Err(Error::InvalidParameter("non-finite coordinate".into()));
        }

        if let Some(i) = raw.measure.iter().position(|w| !(w.is_finite() && *w > 0.0)) {
            return Err(Error::NonProbabilityMeasure(format!(
                "weight {} of point `{}` is not strictly positive",
                raw.measure[i], raw.ids[i]
            )));
        }
        let total: f64 = raw.measure.iter().sum();
        if (total - 1.0).abs() > SPACE_TOL {
            return Err(Error::NonProbabilityMeasure(format!("weights sum to {total}")));
        }

        let dist = match raw.dist {
            None => DMatrix::from_fn(n, n, |i, j| euclidean(&raw.coords[i], &raw.coords[j])),
            Some(rows) => {
                if rows.len() != n || rows.iter().any(|r| r.len() != n) {
                    return Err(Error::MetricViolation(format!("distance matrix is not {n}x{n}")));
                }
                DMatrix::from_fn(n, n, |i, j| rows[i][j])
            }
        };
        check_metric(&dist, &raw.ids)?;

        Ok(Self { ids: raw.ids, coords: raw.coords, dist, measure: raw.measure })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn coords(&self) -> &[Vec<f64>] {
        &self.coords
    }

    pub fn coord(&self, i: usize) -> &[f64] {
        &self.coords[i]
    }

    pub fn measure(&self) -> &[f64] {
        &self.measure
    }

    pub fn dist(&self, i: usize, j: usize) -> f64 {
        self.dist[(i, j)]
    }

    pub fn dist_matrix(&self) -> &DMatrix<f64> {
        &self.dist
    }

    pub fn ambient_dim(&self) -> usize {
        self.coords[0].len()
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.ids.iter().position(|p| p == id)
    }

    /// Ambient Euclidean distance between two points (possibly of different spaces).
    pub fn ambient_dist(a: &[f64], b: &[f64]) -> f64 {
        euclidean(a, b)
    }

    /// Same space with coordinates zero-padded to `dim` ambient dimensions.
    pub fn with_ambient_dim(&self, dim: usize) -> Result<Self> {
        if dim < self.ambient_dim() {
            return Err(Error::DimensionMismatch(self.ambient_dim(), dim));
        }
        let mut out = self.clone();
        for c in &mut out.coords {
            c.resize(dim, 0.0);
        }
        Ok(out)
    }

    /// Same space with every coordinate shifted by `offset`. The intrinsic metric is unchanged.
    pub fn translated(&self, offset: &[f64]) -> Result<Self> {
        if offset.len() != self.ambient_dim() {
            return Err(Error::DimensionMismatch(self.ambient_dim(), offset.len()));
        }
        let mut out = self.clone();
        for c in &mut out.coords {
            for (x, o) in c.iter_mut().zip(offset) {
                *x += o;
            }
        }
        Ok(out)
    }

    /// Builds a space without re-validating; used by constructions whose invariants
    /// follow from already validated inputs (products, atom splitting).
    pub(crate) fn from_parts_unchecked(
        ids: Vec<String>,
        coords: Vec<Vec<f64>>,
        dist: DMatrix<f64>,
        measure: Vec<f64>,
    ) -> Self {
        Self { ids, coords, dist, measure }
    }

    pub fn to_raw(&self) -> RawSpace {
        let n = self.len();
        RawSpace {
            ids: self.ids.clone(),
            coords: self.coords.clone(),
            dist: Some((0..n).map(|i| (0..n).map(|j| self.dist[(i, j)]).collect()).collect()),
            measure: self.measure.clone(),
        }
    }
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn check_metric(dist: &DMatrix<f64>, ids: &[String]) -> Result<()> {
    let n = dist.nrows();
    let scale = 1.0 + dist.iter().cloned().fold(0.0, f64::max);
    let tol = SPACE_TOL * scale;
    for i in 0..n {
        if dist[(i, i)].abs() > tol {
            return Err(Error::MetricViolation(format!("nonzero diagonal at `{}`", ids[i])));
        }
        for j in 0..n {
            let d = dist[(i, j)];
            if !d.is_finite() || d < -tol {
                return Err(Error::MetricViolation(format!(
                    "invalid distance {d} between `{}` and `{}`",
                    ids[i], ids[j]
                )));
            }
            if (d - dist[(j, i)]).abs() > tol {
                return Err(Error::MetricViolation(format!(
                    "asymmetric distance between `{}` and `{}`",
                    ids[i], ids[j]
                )));
            }
        }
    }
    for k in 0..n {
        for i in 0..n {
            let dik = dist[(i, k)];
            for j in 0..n {
                if dist[(i, j)] > dik + dist[(k, j)] + tol {
                    return Err(Error::MetricViolation(format!(
                        "triangle inequality fails for `{}`, `{}` via `{}`",
                        ids[i], ids[j], ids[k]
                    )));
                }
            }
        }
    }
    Ok(())
}

/// `n` equally spaced points on a planar circle of the given circumference,
/// with arc-length distance and uniform measure.
pub fn make_cycle(n: usize, circumference: f64) -> Result<DiscreteSpace> {
    if n == 0 {
        return Err(Error::InvalidParameter("cycle needs at least one point".into()));
    }
    if !(circumference > 0.0 && circumference.is_finite()) {
        return Err(Error::InvalidParameter(format!("circumference {circumference}")));
    }
    let radius = circumference / (2.0 * PI);
    let ids = (0..n).map(|i| format!("c{i}")).collect();
    let coords = (0..n)
        .map(|i| {
            let theta = 2.0 * PI * i as f64 / n as f64;
            vec![radius * theta.cos(), radius * theta.sin()]
        })
        .collect();
    let dist = DMatrix::from_fn(n, n, |i, j| {
        let k = i.abs_diff(j);
        circumference * k.min(n - k) as f64 / n as f64
    });
    let measure = vec![1.0 / n as f64; n];
    DiscreteSpace::validate(RawSpace {
        ids,
        coords,
        dist: Some(rows_of(&dist)),
        measure,
    })
}

/// `n` equally spaced points on a segment of the given length, uniform measure.
pub fn make_path(n: usize, length: f64) -> Result<DiscreteSpace> {
    if n == 0 {
        return Err(Error::InvalidParameter("path needs at least one point".into()));
    }
    if !(length > 0.0 && length.is_finite()) {
        return Err(Error::InvalidParameter(format!("length {length}")));
    }
    let h = if n > 1 { length / (n - 1) as f64 } else { 0.0 };
    DiscreteSpace::validate(RawSpace {
        ids: (0..n).map(|i| format!("p{i}")).collect(),
        coords: (0..n).map(|i| vec![h * i as f64]).collect(),
        dist: None,
        measure: vec![1.0 / n as f64; n],
    })
}

/// Cartesian product with the l2 product metric, product measure and
/// concatenated coordinates. Points are ordered with the second factor fastest.
pub fn make_product(a: &DiscreteSpace, b: &DiscreteSpace) -> DiscreteSpace {
    let (na, nb) = (a.len(), b.len());
    let mut ids = Vec::with_capacity(na * nb);
    let mut coords = Vec::with_capacity(na * nb);
    let mut measure = Vec::with_capacity(na * nb);
    for i in 0..na {
        for j in 0..nb {
            ids.push(format!("{}:{}", a.ids[i], b.ids[j]));
            let mut c = a.coords[i].clone();
            c.extend_from_slice(&b.coords[j]);
            coords.push(c);
            measure.push(a.measure[i] * b.measure[j]);
        }
    }
    let dist = DMatrix::from_fn(na * nb, na * nb, |p, q| {
        let (i, j) = (p / nb, p % nb);
        let (k, l) = (q / nb, q % nb);
        a.dist[(i, k)].hypot(b.dist[(j, l)])
    });
    DiscreteSpace::from_parts_unchecked(ids, coords, dist, measure)
}

/// Product of a circumference-1 cycle with `n` points and a circumference-`eps`
/// cycle with `m` points, embedded in four ambient dimensions.
pub fn make_thin_torus(n: usize, m: usize, eps: f64) -> Result<DiscreteSpace> {
    if n < 2 || m < 2 {
        return Err(Error::InvalidParameter(format!("thin torus needs n, m >= 2 (got {n}, {m})")));
    }
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::InvalidParameter(format!("fiber scale {eps}")));
    }
    Ok(make_product(&make_cycle(n, 1.0)?, &make_cycle(m, eps)?))
}

/// The one-point probability space.
pub fn make_point(dim: usize) -> DiscreteSpace {
    DiscreteSpace::from_parts_unchecked(
        vec!["o".into()],
        vec![vec![0.0; dim.max(1)]],
        DMatrix::zeros(1, 1),
        vec![1.0],
    )
}

fn rows_of(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect()).collect()
}

/// Truncated ambient cost `min{1, rho}`.
#[derive(Clone, Copy, Debug, Default)]
pub struct TruncatedCost;

impl TruncatedCost {
    pub fn distance(a: &[f64], b: &[f64]) -> f64 {
        euclidean(a, b).min(1.0)
    }

    /// `min{1, rho^2}`, the transport cost.
    pub fn squared(a: &[f64], b: &[f64]) -> f64 {
        let d = Self::distance(a, b);
        d * d
    }
}

/// A real function on the points of a space, viewed in `L^2(m)`.
#[derive(Clone, Debug)]
pub struct L2Function {
    space: Arc<DiscreteSpace>,
    values: Vec<f64>,
}

impl L2Function {
    pub fn new(space: &Arc<DiscreteSpace>, values: Vec<f64>) -> Result<Self> {
        if values.len() != space.len() {
            return Err(Error::InvalidParameter(format!(
                "{} values for a space of {} points",
                values.len(),
                space.len()
            )));
        }
        Ok(Self { space: Arc::clone(space), values })
    }

    pub fn zeros(space: &Arc<DiscreteSpace>) -> Self {
        Self { space: Arc::clone(space), values: vec![0.0; space.len()] }
    }

    pub fn constant(space: &Arc<DiscreteSpace>, c: f64) -> Self {
        Self { space: Arc::clone(space), values: vec![c; space.len()] }
    }

    pub fn from_fn(space: &Arc<DiscreteSpace>, f: impl FnMut(usize) -> f64) -> Self {
        Self { space: Arc::clone(space), values: (0..space.len()).map(f).collect() }
    }

    pub fn space(&self) -> &Arc<DiscreteSpace> {
        &self.space
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub(crate) fn with_values(&self, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), self.values.len());
        Self { space: Arc::clone(&self.space), values }
    }

    pub fn same_space(&self, other: &L2Function) -> bool {
        same_space(&self.space, &other.space)
    }

    pub fn norm(&self) -> f64 {
        l2_norm(self)
    }

    pub fn inner(&self, other: &L2Function) -> Result<f64> {
        l2_inner(self, other)
    }

    pub fn scaled(&self, a: f64) -> Self {
        self.with_values(self.values.iter().map(|v| a * v).collect())
    }

    /// `self + a * other`.
    pub fn axpy(&self, a: f64, other: &L2Function) -> Result<Self> {
        if !self.same_space(other) {
            return Err(Error::SpaceMismatch);
        }
        Ok(self.with_values(self.values.iter().zip(&other.values).map(|(x, y)| x + a * y).collect()))
    }

    pub fn sub(&self, other: &L2Function) -> Result<Self> {
        self.axpy(-1.0, other)
    }

    pub fn dist(&self, other: &L2Function) -> Result<f64> {
        Ok(self.sub(other)?.norm())
    }

    /// `m`-weighted mean.
    pub fn mean(&self) -> f64 {
        self.values.iter().zip(self.space.measure()).map(|(v, w)| v * w).sum()
    }

    /// Unit-norm rescaling; `None` for the zero function.
    pub fn normalized(&self) -> Option<Self> {
        let n = self.norm();
        (n > 0.0).then(|| self.scaled(1.0 / n))
    }
}

pub(crate) fn same_space(a: &Arc<DiscreteSpace>, b: &Arc<DiscreteSpace>) -> bool {
    Arc::ptr_eq(a, b) || (a.len() == b.len() && a.measure == b.measure && a.ids == b.ids)
}

/// `(sum_x m(x) f(x)^2)^{1/2}`.
pub fn l2_norm(f: &L2Function) -> f64 {
    weighted_dot(f.space.measure(), &f.values, &f.values).sqrt()
}

pub fn l2_inner(f: &L2Function, g: &L2Function) -> Result<f64> {
    if !f.same_space(g) {
        return Err(Error::SpaceMismatch);
    }
    Ok(weighted_dot(f.space.measure(), &f.values, &g.values))
}

pub(crate) fn weighted_dot(w: &[f64], a: &[f64], b: &[f64]) -> f64 {
    w.iter().zip(a).zip(b).map(|((w, x), y)| w * x * y).sum()
}

// ---------------------------------------------------------------------------
// JSON file format

#[derive(Serialize, Deserialize)]
struct PointRecord {
    id: String,
    coord: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum DistRecord {
    Keyword(String),
    Matrix(Vec<Vec<f64>>),
}

#[derive(Serialize, Deserialize)]
struct SpaceRecord {
    points: Vec<PointRecord>,
    dist: DistRecord,
    measure: Vec<f64>,
}

impl RawSpace {
    pub fn from_json(text: &str) -> Result<Self> {
        let rec: SpaceRecord = serde_json::from_str(text)?;
        let dist = match rec.dist {
            DistRecord::Keyword(k) if k == "ambient" => None,
            DistRecord::Keyword(k) => {
                return Err(Error::InvalidParameter(format!("unknown dist keyword `{k}`")))
            }
            DistRecord::Matrix(m) => Some(m),
        };
        let (ids, coords) = rec.points.into_iter().map(|p| (p.id, p.coord)).unzip();
        Ok(Self { ids, coords, dist, measure: rec.measure })
    }
}

impl DiscreteSpace {
    pub fn from_json(text: &str) -> Result<Self> {
        Self::validate(RawSpace::from_json(text)?)
    }

    pub fn to_json(&self) -> String {
        let rec = SpaceRecord {
            points: self
                .ids
                .iter()
                .zip(&self.coords)
                .map(|(id, c)| PointRecord { id: id.clone(), coord: c.clone() })
                .collect(),
            dist: DistRecord::Matrix(rows_of(&self.dist)),
            measure: self.measure.clone(),
        };
        serde_json::to_string_pretty(&rec).expect("space serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_point() -> RawSpace {
        RawSpace {
            ids: vec!["a".into(), "b".into()],
            coords: vec![vec![0.0], vec![1.0]],
            dist: Some(vec![vec![0.0, 1.0], vec![1.0, 0.0]]),
            measure: vec![0.5, 0.5],
        }
    }

    #[test]
    fn smallest_space_is_valid() {
        let s = DiscreteSpace::validate(two_point()).unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s.dist(0, 1), 1.0);
    }

    #[test]
    fn rejects_bad_measure() {
        let mut raw = two_point();
        raw.measure = vec![0.6, 0.6];
        assert!(matches!(DiscreteSpace::validate(raw), Err(Error::NonProbabilityMeasure(_))));
        let mut raw = two_point();
        raw.measure = vec![1.0, 0.0];
        assert!(matches!(DiscreteSpace::validate(raw), Err(Error::NonProbabilityMeasure(_))));
    }

    #[test]
    fn rejects_triangle_violation() {
        let raw = RawSpace {
            ids: vec!["a".into(), "b".into(), "c".into()],
            coords: vec![vec![0.0], vec![1.0], vec![2.0]],
            dist: Some(vec![vec![0.0, 1.0, 5.0], vec![1.0, 0.0, 1.0], vec![5.0, 1.0, 0.0]]),
            measure: vec![0.25, 0.25, 0.5],
        };
        assert!(matches!(DiscreteSpace::validate(raw), Err(Error::MetricViolation(_))));
    }

    #[test]
    fn rejects_duplicate_ids() {
        let mut raw = two_point();
        raw.ids[1] = "a".into();
        assert!(matches!(DiscreteSpace::validate(raw), Err(Error::DuplicateId(_))));
    }

    #[test]
    fn rejects_asymmetry() {
        let mut raw = two_point();
        raw.dist = Some(vec![vec![0.0, 1.0], vec![1.5, 0.0]]);
        assert!(matches!(DiscreteSpace::validate(raw), Err(Error::MetricViolation(_))));
    }

    #[test]
    fn cycle_generators() {
        let c2 = make_cycle(2, 1.0).unwrap();
        assert_eq!(c2.dist(0, 1), 0.5);
        assert_eq!(c2.measure(), &[0.5, 0.5]);
        let c16 = make_cycle(16, 1.0).unwrap();
        assert_eq!(c16.len(), 16);
        assert_eq!(c16.dist(0, 1), 1.0 / 16.0);
        let c1 = make_cycle(1, 1.0).unwrap();
        assert_eq!(c1.measure(), &[1.0]);
        assert!(matches!(make_cycle(0, 1.0), Err(Error::InvalidParameter(_))));
        assert!(matches!(make_cycle(4, -1.0), Err(Error::InvalidParameter(_))));
    }

    #[test]
    fn cycle_distance_formula_is_exact() {
        for n in [3usize, 7, 16, 33] {
            let c = 2.5;
            let s = make_cycle(n, c).unwrap();
            for i in 0..n {
                for j in 0..n {
                    let k = i.abs_diff(j);
                    assert_eq!(s.dist(i, j), c * k.min(n - k) as f64 / n as f64);
                }
            }
        }
    }

    #[test]
    fn thin_torus_generator() {
        let t = make_thin_torus(8, 4, 0.1).unwrap();
        assert_eq!(t.len(), 32);
        assert!(t.measure().iter().all(|&w| w == 1.0 / 32.0));
        assert_eq!(t.ambient_dim(), 4);
        assert!(matches!(make_thin_torus(8, 4, 0.0), Err(Error::InvalidParameter(_))));
        let t = make_thin_torus(8, 2, 1.0).unwrap();
        // second factor is fastest: points 0 and 1 differ only in the fiber
        assert!((t.dist(0, 1) - 0.5).abs() < 1e-15);
        DiscreteSpace::validate(t.to_raw()).unwrap();
    }

    #[test]
    fn norms_and_inner_products() {
        let s = Arc::new(DiscreteSpace::validate(two_point()).unwrap());
        let f = L2Function::new(&s, vec![1.0, -1.0]).unwrap();
        let g = L2Function::new(&s, vec![1.0, 1.0]).unwrap();
        assert_eq!(l2_norm(&f), 1.0);
        assert_eq!(l2_norm(&L2Function::zeros(&s)), 0.0);
        assert_eq!(l2_inner(&f, &g).unwrap(), 0.0);
        let other = Arc::new(make_cycle(3, 1.0).unwrap());
        let h = L2Function::zeros(&other);
        assert!(matches!(l2_inner(&f, &h), Err(Error::SpaceMismatch)));
    }

    #[test]
    fn json_round_trip_and_ambient_keyword() {
        let s = make_cycle(5, 1.0).unwrap();
        let back = DiscreteSpace::from_json(&s.to_json()).unwrap();
        assert_eq!(back, s);
        let text = r#"{"points":[{"id":"a","coord":[0,0]},{"id":"b","coord":[3,4]}],
                      "dist":"ambient","measure":[0.5,0.5]}"#;
        let s = DiscreteSpace::from_json(text).unwrap();
        assert_eq!(s.dist(0, 1), 5.0);
    }

    #[test]
    fn truncated_cost_saturates() {
        assert_eq!(TruncatedCost::distance(&[0.0], &[0.5]), 0.5);
        assert_eq!(TruncatedCost::distance(&[0.0], &[3.0]), 1.0);
        assert_eq!(TruncatedCost::squared(&[0.0], &[0.1]), 0.1f64 * 0.1);
    }
}
